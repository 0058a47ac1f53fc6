//! Grounded reward language.
//!
//! Rewards are indicator functions built from pairwise relations between
//! named objects (`fist`, the coloured blocks and the `pad`), optionally
//! conjoined:
//!
//! ```text
//! expr     := relation | 'and' '(' expr (',' expr)+ ')'
//! relation := relname '(' atom ',' atom ')'
//! ```
//!
//! `near(a,b)` holds when the centres are closer than `epsilon`, `far` is its
//! complement, and the compass relations compare one coordinate strictly
//! (`+y` is north). A conjunction is the product of its children.

mod parse;
pub mod suite;

use std::fmt;
use std::str::FromStr;

use crate::playroom::{ArenaConfig, Color, Vec2, WorldState};

pub use parse::{parse, ParseError, ParseErrorKind};
pub use suite::{enumerate_pairwise_tasks, load_task_file, resolve_task, Suite, GATHER_TO_PAD};

/// Default near/far threshold in metres.
pub const DEFAULT_EPSILON: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("task `{task}` refers to `{atom}`, which is not present")]
    Unresolvable { task: String, atom: Atom },
    #[error("epsilon must be positive and finite, got {0}")]
    Epsilon(f64),
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error("suite needs at least two atoms")]
    TooFewAtoms,
    #[error("task file {path}: {msg}")]
    TaskFile { path: String, msg: String },
}

/// Objects a relation can mention, in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    Fist,
    Red,
    Blue,
    Green,
    Pad,
}

impl Atom {
    pub const ALL: [Atom; 5] = [Atom::Fist, Atom::Red, Atom::Blue, Atom::Green, Atom::Pad];

    pub fn name(self) -> &'static str {
        match self {
            Atom::Fist => "fist",
            Atom::Red => "red",
            Atom::Blue => "blue",
            Atom::Green => "green",
            Atom::Pad => "pad",
        }
    }

    pub fn block(color: Color) -> Atom {
        match color {
            Color::Red => Atom::Red,
            Color::Blue => Atom::Blue,
            Color::Green => Atom::Green,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Atom {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Atom::ALL.into_iter().find(|a| a.name() == s).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Near,
    Far,
    North,
    South,
    East,
    West,
}

impl Relation {
    pub const ALL: [Relation; 6] = [
        Relation::Near,
        Relation::Far,
        Relation::North,
        Relation::South,
        Relation::East,
        Relation::West,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::Near => "near",
            Relation::Far => "far",
            Relation::North => "north",
            Relation::South => "south",
            Relation::East => "east",
            Relation::West => "west",
        }
    }

    pub fn is_symmetric(self) -> bool {
        matches!(self, Relation::Near | Relation::Far)
    }

    /// Indicator of the relation between points `a` and `b`.
    pub fn holds(self, a: Vec2, b: Vec2, epsilon: f64) -> bool {
        match self {
            Relation::Near => (a[0] - b[0]).hypot(a[1] - b[1]) < epsilon,
            Relation::Far => (a[0] - b[0]).hypot(a[1] - b[1]) >= epsilon,
            Relation::North => a[1] > b[1],
            Relation::South => a[1] < b[1],
            Relation::East => a[0] > b[0],
            Relation::West => a[0] < b[0],
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Relation::ALL.into_iter().find(|r| r.name() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RewardExpr {
    Rel(Relation, Atom, Atom),
    And(Vec<RewardExpr>),
}

impl RewardExpr {
    /// Same expression with the arguments of symmetric relations in
    /// declaration order.
    pub fn canonical(&self) -> RewardExpr {
        match self {
            RewardExpr::Rel(r, a, b) if r.is_symmetric() && b < a => RewardExpr::Rel(*r, *b, *a),
            RewardExpr::Rel(..) => self.clone(),
            RewardExpr::And(xs) => RewardExpr::And(xs.iter().map(RewardExpr::canonical).collect()),
        }
    }

    /// Every atom mentioned, in order of appearance (with repeats).
    pub fn atoms(&self) -> Vec<Atom> {
        let mut out = Vec::new();
        self.visit(&mut |_, a, b| out.extend([a, b]));
        out
    }

    fn visit(&self, f: &mut impl FnMut(Relation, Atom, Atom)) {
        match self {
            RewardExpr::Rel(r, a, b) => f(*r, *a, *b),
            RewardExpr::And(xs) => xs.iter().for_each(|x| x.visit(f)),
        }
    }
}

impl fmt::Display for RewardExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardExpr::Rel(r, a, b) => write!(f, "{r}({a},{b})"),
            RewardExpr::And(xs) => {
                f.write_str("and(")?;
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{x}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A named reward function. The name is always the canonical serialisation.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    name: String,
    expr: RewardExpr,
    epsilon: f64,
}

impl TaskSpec {
    pub fn new(expr: &RewardExpr, epsilon: f64) -> Result<Self, RewardError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(RewardError::Epsilon(epsilon));
        }
        let expr = expr.canonical();
        Ok(Self {
            name: expr.to_string(),
            expr,
            epsilon,
        })
    }

    pub fn parse(text: &str, epsilon: f64) -> Result<Self, RewardError> {
        Self::new(&parse(text)?, epsilon)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn expr(&self) -> &RewardExpr {
        &self.expr
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Checks that every mentioned atom exists in the arena.
    pub fn check_resolvable(&self, cfg: &ArenaConfig) -> Result<(), RewardError> {
        for atom in self.expr.atoms() {
            let present = match atom {
                Atom::Fist => true,
                Atom::Pad => cfg.pad.is_some(),
                block => cfg.colors.iter().any(|&c| Atom::block(c) == block),
            };
            if !present {
                return Err(RewardError::Unresolvable {
                    task: self.name.clone(),
                    atom,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

type Positions = [Option<Vec2>; 5];

fn positions(state: &WorldState) -> Positions {
    let mut p = [None; 5];
    p[Atom::Fist.index()] = Some(state.fist.pos);
    for b in &state.blocks {
        p[Atom::block(b.color).index()] = Some(b.pos);
    }
    p[Atom::Pad.index()] = state.pad;
    p
}

fn eval_expr(expr: &RewardExpr, eps: f64, p: &Positions) -> Result<f64, Atom> {
    match expr {
        RewardExpr::Rel(r, a, b) => {
            let pa = p[a.index()].ok_or(*a)?;
            let pb = p[b.index()].ok_or(*b)?;
            Ok(if r.holds(pa, pb, eps) { 1.0 } else { 0.0 })
        }
        RewardExpr::And(xs) => xs.iter().try_fold(1.0, |acc, x| Ok(acc * eval_expr(x, eps, p)?)),
    }
}

/// Reward of `task` in `state`, either 0 or 1.
pub fn evaluate(task: &TaskSpec, state: &WorldState) -> Result<f64, RewardError> {
    eval_expr(&task.expr, task.epsilon, &positions(state)).map_err(|atom| RewardError::Unresolvable {
        task: task.name.clone(),
        atom,
    })
}

/// One component per task, in task order.
pub fn reward_vector(tasks: &[TaskSpec], state: &WorldState) -> Result<Vec<f64>, RewardError> {
    let p = positions(state);
    tasks
        .iter()
        .map(|t| {
            eval_expr(&t.expr, t.epsilon, &p).map_err(|atom| RewardError::Unresolvable {
                task: t.name.clone(),
                atom,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Clause {
    rel: Relation,
    a: usize,
    b: usize,
}

/// Task list flattened to clause lists and checked against an arena, for
/// per-step evaluation without allocation or error paths.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledTasks {
    tasks: Vec<(Vec<Clause>, f64)>,
}

impl CompiledTasks {
    pub fn new(tasks: &[TaskSpec], cfg: &ArenaConfig) -> Result<Self, RewardError> {
        let mut out = Vec::with_capacity(tasks.len());
        for t in tasks {
            t.check_resolvable(cfg)?;
            let mut clauses = Vec::new();
            t.expr.visit(&mut |rel, a, b| {
                clauses.push(Clause {
                    rel,
                    a: a.index(),
                    b: b.index(),
                })
            });
            out.push((clauses, t.epsilon));
        }
        Ok(Self { tasks: out })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Writes the reward vector into `out`. The state must come from the
    /// arena this was compiled against.
    pub fn evaluate_into(&self, state: &WorldState, out: &mut [f64]) {
        let p = positions(state);
        let at = |i: usize| p[i].expect("atoms were checked against the arena");
        for ((clauses, eps), r) in self.tasks.iter().zip(out.iter_mut()) {
            let ok = clauses.iter().all(|c| c.rel.holds(at(c.a), at(c.b), *eps));
            *r = if ok { 1.0 } else { 0.0 };
        }
    }

    /// Reward of task `i` alone.
    pub fn evaluate_one(&self, state: &WorldState, i: usize) -> f64 {
        let p = positions(state);
        let at = |k: usize| p[k].expect("atoms were checked against the arena");
        let (clauses, eps) = &self.tasks[i];
        if clauses.iter().all(|c| c.rel.holds(at(c.a), at(c.b), *eps)) {
            1.0
        } else {
            0.0
        }
    }

    pub fn evaluate(&self, state: &WorldState) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.evaluate_into(state, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::playroom::{reset, Block, Body};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(fist: Vec2, blocks: &[(Color, Vec2)], pad: Option<Vec2>) -> WorldState {
        WorldState {
            fist: Body { pos: fist, vel: [0.0; 2] },
            blocks: blocks
                .iter()
                .map(|&(color, pos)| Block { color, pos, vel: [0.0; 2] })
                .collect(),
            pad,
            step_count: 0,
        }
    }

    fn task(s: &str) -> TaskSpec {
        TaskSpec::parse(s, DEFAULT_EPSILON).unwrap()
    }

    #[test]
    fn near_threshold() {
        let s = state([0.5, 0.5], &[(Color::Red, [0.0, 0.0]), (Color::Blue, [0.0, 0.05])], None);
        assert_eq!(evaluate(&task("near(red,blue)"), &s).unwrap(), 1.0);
        assert_eq!(evaluate(&task("far(red,blue)"), &s).unwrap(), 0.0);
        // exactly epsilon apart is far
        let s = state([0.5, 0.5], &[(Color::Red, [0.0, 0.0]), (Color::Blue, [0.0, 0.2])], None);
        assert_eq!(evaluate(&task("near(red,blue)"), &s).unwrap(), 0.0);
    }

    #[test]
    fn compass_relations() {
        let s = state([0.5, 0.5], &[(Color::Red, [0.2, 0.3]), (Color::Blue, [0.2, 0.1])], None);
        assert_eq!(evaluate(&task("north(red,blue)"), &s).unwrap(), 1.0);
        assert_eq!(evaluate(&task("south(red,blue)"), &s).unwrap(), 0.0);
        // equal x: neither east nor west
        assert_eq!(evaluate(&task("east(red,blue)"), &s).unwrap(), 0.0);
        assert_eq!(evaluate(&task("west(red,blue)"), &s).unwrap(), 0.0);
        assert_eq!(evaluate(&task("west(fist,red)"), &s).unwrap(), 0.0);
        assert_eq!(evaluate(&task("east(fist,red)"), &s).unwrap(), 1.0);
    }

    #[test]
    fn gather_requires_all_three() {
        let g = resolve_task(GATHER_TO_PAD, DEFAULT_EPSILON).unwrap();
        let pad = [0.68, 0.68];
        let two = state(
            [0.1, 0.1],
            &[(Color::Red, [0.6, 0.7]), (Color::Blue, [0.7, 0.6]), (Color::Green, [0.2, 0.2])],
            Some(pad),
        );
        assert_eq!(evaluate(&g, &two).unwrap(), 0.0);
        let three = state(
            [0.1, 0.1],
            &[(Color::Red, [0.6, 0.7]), (Color::Blue, [0.7, 0.6]), (Color::Green, [0.6, 0.6])],
            Some(pad),
        );
        assert_eq!(evaluate(&g, &three).unwrap(), 1.0);
    }

    #[test]
    fn missing_atom_is_an_error() {
        let s = state([0.1, 0.1], &[(Color::Red, [0.3, 0.3]), (Color::Blue, [0.5, 0.5])], None);
        assert!(matches!(
            evaluate(&task("near(red,pad)"), &s),
            Err(RewardError::Unresolvable { atom: Atom::Pad, .. })
        ));
        let cfg = ArenaConfig::default();
        assert!(CompiledTasks::new(&[task("near(green,red)")], &cfg).is_err());
    }

    #[test]
    fn reward_vector_edge_cases() {
        let s = state([0.1, 0.1], &[(Color::Red, [0.4, 0.5]), (Color::Blue, [0.7, 0.2])], None);
        assert!(reward_vector(&[], &s).unwrap().is_empty());
        let tasks = Suite::Suite6.tasks(DEFAULT_EPSILON).unwrap();
        let r = reward_vector(&tasks, &s).unwrap();
        for (t, v) in tasks.iter().zip(&r) {
            let want = if t.name().starts_with("near") { 0.0 } else { 1.0 };
            assert_eq!(*v, want, "{t}");
        }
    }

    #[test]
    fn canonical_names_sort_symmetric_arguments() {
        assert_eq!(task("near(blue,red)").name(), "near(red,blue)");
        assert_eq!(task("far( pad , fist )").name(), "far(fist,pad)");
        assert_eq!(task("north(blue,red)").name(), "north(blue,red)");
        assert_eq!(
            task("and(near(pad,red), west(green,fist))").name(),
            "and(near(red,pad),west(green,fist))"
        );
    }

    /// Walks the syntax tree with no shared code from the evaluator.
    fn brute_force(expr: &RewardExpr, eps: f64, s: &WorldState) -> f64 {
        let pos = |a: Atom| -> Vec2 {
            match a {
                Atom::Fist => s.fist.pos,
                Atom::Pad => s.pad.unwrap(),
                Atom::Red => s.blocks.iter().find(|b| b.color == Color::Red).unwrap().pos,
                Atom::Blue => s.blocks.iter().find(|b| b.color == Color::Blue).unwrap().pos,
                Atom::Green => s.blocks.iter().find(|b| b.color == Color::Green).unwrap().pos,
            }
        };
        match expr {
            RewardExpr::Rel(r, a, b) => {
                let (pa, pb) = (pos(*a), pos(*b));
                let d2 = (pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2);
                let v = match r {
                    Relation::Near => d2 < eps * eps,
                    Relation::Far => !(d2 < eps * eps),
                    Relation::North => pa[1] > pb[1],
                    Relation::South => pb[1] > pa[1],
                    Relation::East => pa[0] > pb[0],
                    Relation::West => pb[0] > pa[0],
                };
                v as u8 as f64
            }
            RewardExpr::And(xs) => {
                if xs.iter().all(|x| brute_force(x, eps, s) == 1.0) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    #[test]
    fn compiled_evaluation_matches_tree_walk() {
        let cfg = ArenaConfig::three_blocks_with_pad();
        let tasks = Suite::Suite43.tasks(DEFAULT_EPSILON).unwrap();
        let compiled = CompiledTasks::new(&tasks, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let mut s = reset(&cfg, &mut rng).unwrap();
            // snap some coordinates onto a coarse grid so ties occur
            if rng.random_bool(0.3) {
                for b in &mut s.blocks {
                    b.pos = b.pos.map(|x| (x * 10.0).round() / 10.0);
                }
            }
            let fast = compiled.evaluate(&s);
            let slow = reward_vector(&tasks, &s).unwrap();
            for (i, t) in tasks.iter().enumerate() {
                let want = brute_force(t.expr(), t.epsilon(), &s);
                assert_eq!(fast[i], want, "{t}");
                assert_eq!(slow[i], want, "{t}");
            }
        }
    }

    fn any_atom() -> impl Strategy<Value = Atom> {
        prop::sample::select(Atom::ALL.to_vec())
    }

    fn any_relation_expr() -> impl Strategy<Value = RewardExpr> {
        (prop::sample::select(Relation::ALL.to_vec()), any_atom(), any_atom())
            .prop_filter("distinct atoms", |(_, a, b)| a != b)
            .prop_map(|(r, a, b)| RewardExpr::Rel(r, a, b))
    }

    fn any_expr() -> impl Strategy<Value = RewardExpr> {
        any_relation_expr().prop_recursive(3, 16, 4, |inner| {
            prop::collection::vec(inner, 2..4).prop_map(RewardExpr::And)
        })
    }

    fn any_point() -> impl Strategy<Value = Vec2> {
        prop_oneof![
            (0.0..0.8f64, 0.0..0.8f64).prop_map(|(x, y)| [x, y]),
            (0..9u8, 0..9u8).prop_map(|(x, y)| [x as f64 / 10.0, y as f64 / 10.0]),
        ]
    }

    proptest! {
        #[test]
        fn printed_expressions_parse_back(e in any_expr()) {
            let c = e.canonical();
            prop_assert_eq!(parse(&c.to_string()).unwrap(), c.clone());
            prop_assert_eq!(parse(&e.to_string()).unwrap(), e);
        }

        #[test]
        fn relation_laws(a in any_point(), b in any_point()) {
            let eps = DEFAULT_EPSILON;
            let near = Relation::Near.holds(a, b, eps) as u8;
            let far = Relation::Far.holds(a, b, eps) as u8;
            prop_assert_eq!(near + far, 1);
            let n_ab = Relation::North.holds(a, b, eps);
            let n_ba = Relation::North.holds(b, a, eps);
            let s_ab = Relation::South.holds(a, b, eps);
            prop_assert!(!(n_ab && n_ba));
            if a[1] == b[1] {
                prop_assert!(!n_ab && !s_ab);
            } else {
                prop_assert!(n_ab ^ s_ab);
            }
        }

        #[test]
        fn conjunction_is_minimum(pts in prop::collection::vec(any_point(), 5), e in prop::collection::vec(any_relation_expr(), 2..5)) {
            let s = state(
                pts[0],
                &[(Color::Red, pts[1]), (Color::Blue, pts[2]), (Color::Green, pts[3])],
                Some(pts[4]),
            );
            let and = TaskSpec::new(&RewardExpr::And(e.clone()), DEFAULT_EPSILON).unwrap();
            let min = e
                .iter()
                .map(|x| evaluate(&TaskSpec::new(x, DEFAULT_EPSILON).unwrap(), &s).unwrap())
                .fold(1.0, f64::min);
            prop_assert_eq!(evaluate(&and, &s).unwrap(), min);
        }
    }
}
