//! Line-delimited trajectory dumps.
//!
//! One CSV file per episode with a header row and one row per world state:
//!
//! ```text
//! step,fist_x,fist_y,<color>_x,<color>_y,...,[pad_x,pad_y,]action_x,action_y,r:<task>,...
//! ```
//!
//! Blocks appear in arena colour order. Row `t` holds the state after `t`
//! steps, the action that produced it (zero for `t = 0`) and the reward
//! vector evaluated on that state. Task columns are quoted when the task name
//! contains commas.

use std::path::Path;

use super::{Color, Vec2, WorldState};

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("trajectory i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("malformed trajectory {path}: {msg}")]
    Format { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub fist: Vec2,
    pub blocks: Vec<Vec2>,
    pub pad: Option<Vec2>,
    pub action: Vec2,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub colors: Vec<Color>,
    pub has_pad: bool,
    pub task_names: Vec<String>,
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn new(colors: Vec<Color>, has_pad: bool, task_names: Vec<String>) -> Self {
        Self {
            colors,
            has_pad,
            task_names,
            records: Vec::new(),
        }
    }

    pub fn record(&mut self, state: &WorldState, action: Vec2, rewards: Vec<f64>) {
        self.records.push(TrajectoryRecord {
            step: state.step_count,
            fist: state.fist.pos,
            blocks: self
                .colors
                .iter()
                .map(|&c| state.block(c).map(|b| b.pos).unwrap_or([f64::NAN; 2]))
                .collect(),
            pad: state.pad,
            action,
            rewards,
        });
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["step".to_owned(), "fist_x".into(), "fist_y".into()];
        for c in &self.colors {
            h.push(format!("{c}_x"));
            h.push(format!("{c}_y"));
        }
        if self.has_pad {
            h.push("pad_x".into());
            h.push("pad_y".into());
        }
        h.push("action_x".into());
        h.push("action_y".into());
        h.extend(self.task_names.iter().map(|t| format!("r:{t}")));
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrajectoryError> {
        let io = |source| TrajectoryError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(self.header()).map_err(io)?;
        for r in &self.records {
            let mut row = vec![r.step.to_string(), r.fist[0].to_string(), r.fist[1].to_string()];
            for b in &r.blocks {
                row.push(b[0].to_string());
                row.push(b[1].to_string());
            }
            if self.has_pad {
                let p = r.pad.unwrap_or([f64::NAN; 2]);
                row.push(p[0].to_string());
                row.push(p[1].to_string());
            }
            row.push(r.action[0].to_string());
            row.push(r.action[1].to_string());
            row.extend(r.rewards.iter().map(|x| x.to_string()));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| io(e.into()))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, TrajectoryError> {
        let p = path.display().to_string();
        let fmt = |msg: String| TrajectoryError::Format { path: p.clone(), msg };
        let mut rd = csv::Reader::from_path(path).map_err(|source| TrajectoryError::Io {
            path: p.clone(),
            source,
        })?;
        let header: Vec<String> = rd
            .headers()
            .map_err(|source| TrajectoryError::Io { path: p.clone(), source })?
            .iter()
            .map(str::to_owned)
            .collect();
        if header.get(..3) != Some(&["step".to_owned(), "fist_x".into(), "fist_y".into()][..]) {
            return Err(fmt(format!("unexpected leading columns {:?}", header.get(..3))));
        }
        let mut colors = Vec::new();
        let mut i = 3;
        while let Some(name) = header.get(i).and_then(|h| h.strip_suffix("_x")) {
            match name.parse::<Color>() {
                Ok(c) => colors.push(c),
                Err(_) => break,
            }
            i += 2;
        }
        let has_pad = header.get(i).map(String::as_str) == Some("pad_x");
        if has_pad {
            i += 2;
        }
        if header.get(i).map(String::as_str) != Some("action_x") {
            return Err(fmt("missing action columns".into()));
        }
        i += 2;
        let task_names = header[i..]
            .iter()
            .map(|h| h.strip_prefix("r:").map(str::to_owned).ok_or_else(|| fmt(format!("bad reward column `{h}`"))))
            .collect::<Result<Vec<_>, _>>()?;

        let mut traj = Trajectory::new(colors, has_pad, task_names);
        for (line, row) in rd.records().enumerate() {
            let row = row.map_err(|source| TrajectoryError::Io { path: p.clone(), source })?;
            if row.len() != header.len() {
                return Err(fmt(format!("row {} has {} fields, header has {}", line + 1, row.len(), header.len())));
            }
            let num = |k: usize| -> Result<f64, TrajectoryError> {
                row[k]
                    .parse::<f64>()
                    .map_err(|_| fmt(format!("row {}: `{}` is not a number", line + 1, &row[k])))
            };
            let step = row[0]
                .parse::<usize>()
                .map_err(|_| fmt(format!("row {}: bad step `{}`", line + 1, &row[0])))?;
            let mut k = 3;
            let mut blocks = Vec::with_capacity(traj.colors.len());
            for _ in &traj.colors {
                blocks.push([num(k)?, num(k + 1)?]);
                k += 2;
            }
            let pad = if has_pad {
                k += 2;
                Some([num(k - 2)?, num(k - 1)?])
            } else {
                None
            };
            let action = [num(k)?, num(k + 1)?];
            k += 2;
            let rewards = (k..row.len()).map(num).collect::<Result<Vec<_>, _>>()?;
            traj.records.push(TrajectoryRecord {
                step,
                fist: [num(1)?, num(2)?],
                blocks,
                pad,
                action,
                rewards,
            });
        }
        Ok(traj)
    }
}
