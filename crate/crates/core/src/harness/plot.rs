//! SVG learning curves and trajectory plots for a run directory.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::{read_evals, EvalRecord, HarnessError, EVALS_FILE, TRAJECTORY_DIR};
use crate::playroom::trajectory::Trajectory;
use crate::playroom::{Color as BlockColor, Vec2};

pub const PLOT_DIR: &str = "plots";

/// Evaluation series of one task, as handed to the renderer.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub task: String,
    pub steps: Vec<usize>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Groups records by task, keeping first-appearance order.
pub fn curves_from_records(records: &[EvalRecord]) -> Vec<Curve> {
    let mut out: Vec<Curve> = Vec::new();
    for r in records {
        let i = match out.iter().position(|c| c.task == r.task) {
            Some(i) => i,
            None => {
                out.push(Curve {
                    task: r.task.clone(),
                    steps: Vec::new(),
                    mean: Vec::new(),
                    min: Vec::new(),
                    max: Vec::new(),
                });
                out.len() - 1
            }
        };
        let c = &mut out[i];
        c.steps.push(r.env_step);
        c.mean.push(r.stats.mean);
        c.min.push(r.stats.min);
        c.max.push(r.stats.max);
    }
    out
}

/// One labelled path per object. Consecutive repeated points are merged, so a
/// body that never moves yields a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPath {
    pub label: String,
    pub points: Vec<Vec2>,
}

pub fn trajectory_paths(traj: &Trajectory) -> Vec<ObjectPath> {
    let collapse = |pts: Vec<Vec2>| {
        let mut out: Vec<Vec2> = Vec::with_capacity(pts.len());
        for p in pts {
            if out.last() != Some(&p) {
                out.push(p);
            }
        }
        out
    };
    let mut paths = vec![ObjectPath {
        label: "fist".into(),
        points: collapse(traj.records.iter().map(|r| r.fist).collect()),
    }];
    for (k, c) in traj.colors.iter().enumerate() {
        paths.push(ObjectPath {
            label: c.name().into(),
            points: collapse(traj.records.iter().map(|r| r.blocks[k]).collect()),
        });
    }
    paths
}

fn plot_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Plot(e.to_string())
}

fn object_color(label: &str) -> RGBColor {
    match label.parse::<BlockColor>() {
        Ok(BlockColor::Red) => RGBColor(214, 39, 40),
        Ok(BlockColor::Blue) => RGBColor(31, 119, 180),
        Ok(BlockColor::Green) => RGBColor(44, 160, 44),
        Err(_) => BLACK,
    }
}

pub fn render_curve(curve: &Curve, path: &Path) -> Result<(), HarnessError> {
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let x_max = curve.steps.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption(&curve.task, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(44)
        .build_cartesian_2d(0.0..x_max, 0.0..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("environment steps")
        .y_desc("return")
        .draw()
        .map_err(plot_err)?;
    let xs: Vec<f64> = curve.steps.iter().map(|&s| s as f64).collect();
    let mut band: Vec<(f64, f64)> = xs.iter().copied().zip(curve.max.iter().copied()).collect();
    band.extend(xs.iter().copied().zip(curve.min.iter().copied()).rev());
    chart
        .draw_series(std::iter::once(Polygon::new(band, BLUE.mix(0.2))))
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(xs.iter().copied().zip(curve.mean.iter().copied()), &BLUE))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

pub fn render_trajectory(traj: &Trajectory, side: f64, path: &Path) -> Result<(), HarnessError> {
    let root = SVGBackend::new(path, (480, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .x_label_area_size(30)
        .y_label_area_size(36)
        .build_cartesian_2d(0.0..side, 0.0..side)
        .map_err(plot_err)?;
    chart.configure_mesh().disable_mesh().draw().map_err(plot_err)?;
    if let Some(pad) = traj.records.first().and_then(|r| r.pad) {
        chart
            .draw_series(std::iter::once(Cross::new((pad[0], pad[1]), 8, BLACK.stroke_width(2))))
            .map_err(plot_err)?;
    }
    for p in trajectory_paths(traj) {
        let color = object_color(&p.label);
        let pts: Vec<(f64, f64)> = p.points.iter().map(|q| (q[0], q[1])).collect();
        if pts.len() > 1 {
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?;
        }
        // start marker
        if let Some(&start) = pts.first() {
            chart
                .draw_series(std::iter::once(Circle::new(start, 4, color.filled())))
                .map_err(plot_err)?;
        }
    }
    root.present().map_err(plot_err)
}

/// Renders every curve and trajectory of a run into `<run>/plots`. Problems
/// with any input file are collected and reported together.
pub fn emit_plots(run_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut problems = Vec::new();
    let records = match read_evals(&run_dir.join(EVALS_FILE)) {
        Ok(r) => r,
        Err(HarnessError::Records(p)) => {
            problems.extend(p);
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    let side = super::config::ExperimentConfig::from_file(&run_dir.join(super::CONFIG_FILE))
        .map(|c| c.arena.side)
        .unwrap_or(crate::playroom::ArenaConfig::default().side);

    let mut trajectories = Vec::new();
    let traj_dir = run_dir.join(TRAJECTORY_DIR);
    if traj_dir.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&traj_dir)
            .map_err(super::io_err(&traj_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for f in files {
            match Trajectory::read_csv(&f) {
                Ok(t) if !t.records.is_empty() => trajectories.push((f, t)),
                Ok(_) => problems.push(format!("{}: empty trajectory", f.display())),
                Err(e) => problems.push(e.to_string()),
            }
        }
    }
    if !problems.is_empty() {
        return Err(HarnessError::Records(problems));
    }

    let out_dir = run_dir.join(PLOT_DIR);
    std::fs::create_dir_all(&out_dir).map_err(super::io_err(&out_dir))?;
    let mut written = Vec::new();
    for (i, c) in curves_from_records(&records).iter().enumerate() {
        let p = out_dir.join(format!("curve_{i:02}.svg"));
        render_curve(c, &p)?;
        written.push(p);
    }
    for (f, t) in &trajectories {
        let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let p = out_dir.join(format!("trajectory_{stem}.svg"));
        render_trajectory(t, side, &p)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_training, ExperimentConfig, EvalStats};
    use crate::playroom::{reset, ArenaConfig};
    use crate::reward::Suite;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(step: usize, task: &str, mean: f64) -> EvalRecord {
        EvalRecord {
            env_step: step,
            task: task.into(),
            stats: EvalStats {
                mean,
                min: mean / 2.0,
                max: mean,
            },
        }
    }

    #[test]
    fn curves_group_by_task() {
        let recs = [record(0, "a", 0.1), record(0, "b", 0.2), record(10, "a", 0.3), record(10, "b", 0.4)];
        let cs = curves_from_records(&recs);
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].steps, vec![0, 10]);
        assert_eq!(cs[1].mean, vec![0.2, 0.4]);
    }

    #[test]
    fn stationary_world_paths_are_single_points() {
        let cfg = ArenaConfig::default();
        let mut s = reset(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut t = Trajectory::new(cfg.colors.clone(), false, vec![]);
        for _ in 0..10 {
            t.record(&s, [0.0, 0.0], vec![]);
            s = s.step(&cfg, [0.0, 0.0]).unwrap();
        }
        for p in trajectory_paths(&t) {
            assert_eq!(p.points.len(), 1, "{}", p.label);
        }
    }

    #[test]
    fn run_plots_reproduce_the_records() {
        let mut cfg = ExperimentConfig::for_suite(Suite::Suite6);
        cfg.actor_width = 6;
        cfg.critic_width = 6;
        cfg.arena.episode_steps = 10;
        cfg.eval_episodes = 1;
        cfg.eval_every = 30;
        cfg.warmup = 20;
        cfg.learner.batch = 8;
        cfg.replay_capacity = 100;
        cfg.total_env_steps = 30;
        let dir = tempfile::tempdir().unwrap();
        run_training(&cfg, 0, dir.path()).unwrap();
        let written = emit_plots(dir.path()).unwrap();
        assert_eq!(written.len(), 12);
        for p in &written {
            let svg = std::fs::read_to_string(p).unwrap();
            assert!(svg.starts_with("<svg"), "{}", p.display());
        }

        // two evaluation points, each curve carries exactly the file's values
        let text = std::fs::read_to_string(dir.path().join(EVALS_FILE)).unwrap();
        let curves = curves_from_records(&read_evals(&dir.path().join(EVALS_FILE)).unwrap());
        let mut rows = text.lines().skip(1);
        assert!(curves.iter().all(|c| c.steps == vec![0, 30]));
        for k in 0..2 {
            for c in &curves {
                let line = rows.next().unwrap();
                let want = format!("{},\"{}\",{},{},{}", c.steps[k], c.task, c.mean[k], c.min[k], c.max[k]);
                assert_eq!(line, want);
            }
        }
    }

    #[test]
    fn broken_inputs_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join(TRAJECTORY_DIR)).unwrap();
        std::fs::write(dir.path().join(TRAJECTORY_DIR).join("task_00.csv"), "garbage\n1,2\n").unwrap();
        match emit_plots(dir.path()) {
            Err(HarnessError::Records(p)) => {
                assert_eq!(p.len(), 2, "{p:?}");
                assert!(p[0].contains(EVALS_FILE));
                assert!(p[1].contains("task_00.csv"));
            }
            other => panic!("{other:?}"),
        }
    }
}
