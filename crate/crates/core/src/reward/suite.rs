//! Named task suites and task files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{Atom, Relation, RewardError, RewardExpr, TaskSpec};
use crate::playroom::{ArenaConfig, Color};

/// Alias accepted wherever a task name is expected.
pub const GATHER_TO_PAD: &str = "gather_to_pad";

fn gather_to_pad() -> RewardExpr {
    RewardExpr::And(
        [Atom::Red, Atom::Blue, Atom::Green]
            .into_iter()
            .map(|c| RewardExpr::Rel(Relation::Near, c, Atom::Pad))
            .collect(),
    )
}

/// Parses a task expression or the `gather_to_pad` alias.
pub fn resolve_task(text: &str, epsilon: f64) -> Result<TaskSpec, RewardError> {
    if text.trim() == GATHER_TO_PAD {
        return TaskSpec::new(&gather_to_pad(), epsilon);
    }
    TaskSpec::parse(text, epsilon)
}

/// One task per unordered atom pair and relation. Pairs follow the order of
/// `atoms`; within a pair the atoms appear in declaration order.
pub fn enumerate_pairwise_tasks(
    atoms: &[Atom],
    relations: &[Relation],
    epsilon: f64,
) -> Result<Vec<TaskSpec>, RewardError> {
    let mut uniq: Vec<Atom> = Vec::new();
    for &a in atoms {
        if !uniq.contains(&a) {
            uniq.push(a);
        }
    }
    if uniq.len() < 2 {
        return Err(RewardError::TooFewAtoms);
    }
    let mut out = Vec::new();
    for i in 0..uniq.len() {
        for j in i + 1..uniq.len() {
            let (a, b) = (uniq[i].min(uniq[j]), uniq[i].max(uniq[j]));
            for &r in relations {
                out.push(TaskSpec::new(&RewardExpr::Rel(r, a, b), epsilon)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// All six relations over fist, red and blue.
    Suite18,
    /// All six relations over fist and three blocks.
    Suite36,
    /// Only near/far over fist, red and blue.
    Suite6,
    /// Gather-to-pad plus its near sub-goals.
    Suite7,
    /// The 36 pairwise tasks, near/far of each block to the pad, and gather-to-pad.
    Suite43,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Suite18, Suite::Suite36, Suite::Suite6, Suite::Suite7, Suite::Suite43];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Suite18 => "suite18",
            Suite::Suite36 => "suite36",
            Suite::Suite6 => "suite6",
            Suite::Suite7 => "suite7",
            Suite::Suite43 => "suite43",
        }
    }

    pub fn tasks(self, epsilon: f64) -> Result<Vec<TaskSpec>, RewardError> {
        let two = [Atom::Fist, Atom::Red, Atom::Blue];
        let three = [Atom::Fist, Atom::Red, Atom::Blue, Atom::Green];
        let blocks = [Atom::Red, Atom::Blue, Atom::Green];
        let near = |a, b| TaskSpec::new(&RewardExpr::Rel(Relation::Near, a, b), epsilon);
        match self {
            Suite::Suite18 => enumerate_pairwise_tasks(&two, &Relation::ALL, epsilon),
            Suite::Suite36 => enumerate_pairwise_tasks(&three, &Relation::ALL, epsilon),
            Suite::Suite6 => enumerate_pairwise_tasks(&two, &[Relation::Near, Relation::Far], epsilon),
            Suite::Suite7 => {
                let mut t = vec![TaskSpec::new(&gather_to_pad(), epsilon)?];
                for c in blocks {
                    t.push(near(c, Atom::Pad)?);
                }
                for c in blocks {
                    t.push(near(Atom::Fist, c)?);
                }
                Ok(t)
            }
            Suite::Suite43 => {
                let mut t = enumerate_pairwise_tasks(&three, &Relation::ALL, epsilon)?;
                for c in blocks {
                    for r in [Relation::Near, Relation::Far] {
                        t.push(TaskSpec::new(&RewardExpr::Rel(r, c, Atom::Pad), epsilon)?);
                    }
                }
                t.push(TaskSpec::new(&gather_to_pad(), epsilon)?);
                Ok(t)
            }
        }
    }

    /// Smallest arena holding every atom the suite mentions.
    pub fn arena(self) -> ArenaConfig {
        match self {
            Suite::Suite18 | Suite::Suite6 => ArenaConfig::default(),
            Suite::Suite36 => ArenaConfig {
                colors: Color::ALL.to_vec(),
                ..ArenaConfig::default()
            },
            Suite::Suite7 | Suite::Suite43 => ArenaConfig::three_blocks_with_pad(),
        }
    }

    /// Task followed by the behaviour policy unless configured otherwise.
    pub fn default_intentional(self) -> &'static str {
        match self {
            Suite::Suite18 | Suite::Suite36 | Suite::Suite6 => "near(red,blue)",
            Suite::Suite7 | Suite::Suite43 => GATHER_TO_PAD,
        }
    }

    /// Canonical suite for `tasks list`: pairwise tasks over the fist and
    /// the first `blocks` colours, plus the pad tasks when requested.
    pub fn for_blocks(blocks: usize, pad: bool) -> Option<Suite> {
        match (blocks, pad) {
            (2, false) => Some(Suite::Suite18),
            (3, false) => Some(Suite::Suite36),
            (3, true) => Some(Suite::Suite43),
            _ => None,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = RewardError;

    fn from_str(s: &str) -> Result<Self, RewardError> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| RewardError::UnknownSuite(s.to_owned()))
    }
}

/// Reads one task per line; `#` starts a comment, blank lines are skipped.
pub fn load_task_file(path: &Path, epsilon: f64) -> Result<Vec<TaskSpec>, RewardError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| RewardError::TaskFile {
        path: shown.clone(),
        msg: e.to_string(),
    })?;
    parse_task_list(&text, epsilon).map_err(|msg| RewardError::TaskFile { path: shown, msg })
}

pub(crate) fn parse_task_list(text: &str, epsilon: f64) -> Result<Vec<TaskSpec>, String> {
    let mut tasks: Vec<TaskSpec> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let t = resolve_task(body, epsilon).map_err(|e| format!("line {}: {e}", i + 1))?;
        if tasks.iter().any(|x| x.name() == t.name()) {
            return Err(format!("line {}: duplicate task {}", i + 1, t.name()));
        }
        tasks.push(t);
    }
    if tasks.is_empty() {
        return Err("no tasks".into());
    }
    Ok(tasks)
}
