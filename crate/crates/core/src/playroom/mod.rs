//! Deterministic 2D playroom.
//!
//! A square arena with a velocity-controlled fist, up to three coloured
//! blocks and an optional goal pad. Objects are discs. The fist is kinematic
//! and may travel anywhere inside the arena, including the border strip of
//! width `object_diameter / 2` along the walls; block centres are confined to
//! the inner region. Contacts are resolved quasi-statically by positional
//! projection: the fist shoves blocks out of its way, blocks shove each other,
//! and a block's velocity is the displacement it underwent, decaying with a
//! half-life of two control steps. The pad is only a marker; it takes no part
//! in contact resolution.

pub mod trajectory;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub type Vec2 = [f64; 2];

/// Allowed residual overlap between discs after a step, in metres.
pub const OVERLAP_TOLERANCE: f64 = 1e-9;
const PLACEMENT_ATTEMPTS: usize = 10_000;
const MAX_PROJECTION_ITERS: usize = 100;
const PROJECTION_SLOP: f64 = 1e-12;
const ALPHA_BISECTIONS: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum PlayroomError {
    #[error("invalid arena config: {0}")]
    Config(String),
    #[error("could not place objects without overlap after {0} attempts")]
    Placement(usize),
    #[error("action must be finite, got {0:?}")]
    NonFiniteAction(Vec2),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Color {
    Red,
    Blue,
    Green,
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Red, Color::Blue, Color::Green];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Color {
    type Err = PlayroomError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Color::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| PlayroomError::Config(format!("unknown color `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pad {
    pub center: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArenaConfig {
    /// Side length of the square arena in metres.
    pub side: f64,
    /// Diameter of blocks and fist.
    pub object_diameter: f64,
    /// One block per colour, in observation order.
    pub colors: Vec<Color>,
    pub pad: Option<Pad>,
    /// Control period in seconds.
    pub dt: f64,
    /// Fist speed at unit action, m/s.
    pub max_speed: f64,
    pub episode_steps: usize,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            side: 0.8,
            object_diameter: 0.12,
            colors: vec![Color::Red, Color::Blue],
            pad: None,
            dt: 0.05,
            max_speed: 0.4,
            episode_steps: 300,
        }
    }
}

impl ArenaConfig {
    /// Red, blue and green blocks with a pad in the upper-right corner.
    pub fn three_blocks_with_pad() -> Self {
        let mut cfg = Self {
            colors: Color::ALL.to_vec(),
            ..Self::default()
        };
        cfg.pad = Some(cfg.corner_pad());
        cfg
    }

    /// Pad centred one diameter in from the upper-right corner.
    pub fn corner_pad(&self) -> Pad {
        let c = self.side - self.object_diameter;
        Pad {
            center: [c, c],
            radius: self.object_diameter,
        }
    }

    /// Same layout with every side scaled by `factor`; a corner pad moves with the corner.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut cfg = Self {
            side: self.side * factor,
            ..self.clone()
        };
        if let Some(pad) = self.pad {
            let offset = [self.side - pad.center[0], self.side - pad.center[1]];
            cfg.pad = Some(Pad {
                center: [cfg.side - offset[0], cfg.side - offset[1]],
                ..pad
            });
        }
        cfg
    }

    pub fn radius(&self) -> f64 {
        self.object_diameter / 2.0
    }

    pub fn n_blocks(&self) -> usize {
        self.colors.len()
    }

    pub fn obs_dim(&self) -> usize {
        2 * (self.n_blocks() + usize::from(self.pad.is_some())) + 2
    }

    pub fn validate(&self) -> Result<(), PlayroomError> {
        let err = |m: String| Err(PlayroomError::Config(m));
        if !(self.object_diameter > 0.0 && self.object_diameter.is_finite()) {
            return err(format!("object diameter must be positive, got {}", self.object_diameter));
        }
        if !(self.side > 2.0 * self.object_diameter && self.side.is_finite()) {
            return err(format!(
                "side {} must exceed twice the object diameter {}",
                self.side, self.object_diameter
            ));
        }
        if self.colors.is_empty() || self.colors.len() > 3 {
            return err(format!("need 1 to 3 blocks, got {}", self.colors.len()));
        }
        for (i, c) in self.colors.iter().enumerate() {
            if self.colors[..i].contains(c) {
                return err(format!("duplicate block color {c}"));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.max_speed > 0.0 && self.max_speed.is_finite()) {
            return err("dt and max_speed must be positive".into());
        }
        if self.episode_steps == 0 {
            return err("episode_steps must be positive".into());
        }
        if let Some(pad) = self.pad {
            let inside = pad.center.iter().all(|&x| (0.0..=self.side).contains(&x));
            if !inside || !(pad.radius > 0.0) {
                return err(format!("pad {pad:?} must lie inside the arena with positive radius"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub pos: Vec2,
    pub vel: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub color: Color,
    pub pos: Vec2,
    pub vel: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub fist: Body,
    pub blocks: Vec<Block>,
    pub pad: Option<Vec2>,
    pub step_count: usize,
}

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

fn clamp2(p: Vec2, lo: f64, hi: f64) -> Vec2 {
    [p[0].clamp(lo, hi), p[1].clamp(lo, hi)]
}

/// Contact or containment violation found by [`check_invariants`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    BlockOutside { color: Color, pos: Vec2 },
    FistOutside { pos: Vec2 },
    Overlap { a: String, b: String, depth: f64 },
    NonFinite,
}

impl WorldState {
    pub fn block(&self, color: Color) -> Option<&Block> {
        self.blocks.iter().find(|b| b.color == color)
    }

    /// Advances one control step. `action` is clamped to `[-1, 1]^2`.
    pub fn step(&self, cfg: &ArenaConfig, action: Vec2) -> Result<WorldState, PlayroomError> {
        if !action.iter().all(|a| a.is_finite()) {
            return Err(PlayroomError::NonFiniteAction(action));
        }
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        let fist_disp = [a[0] * cfg.max_speed * cfg.dt, a[1] * cfg.max_speed * cfg.dt];

        let mut next = match self.advance(cfg, fist_disp, 1.0) {
            Some(s) => s,
            None => {
                // Jammed: some block is pinned between the fist and a wall or
                // other blocks. Take the largest fraction of the motion that
                // still resolves; zero motion always does from a valid state.
                let (mut lo, mut hi) = (0.0, 1.0);
                let mut best = self.advance(cfg, fist_disp, 0.0);
                for _ in 0..ALPHA_BISECTIONS {
                    let mid = 0.5 * (lo + hi);
                    match self.advance(cfg, fist_disp, mid) {
                        Some(s) => {
                            lo = mid;
                            best = Some(s);
                        }
                        None => hi = mid,
                    }
                }
                best.unwrap_or_else(|| self.clone())
            }
        };

        let damping = 0.5f64.powf(0.5);
        next.fist.vel = sub(next.fist.pos, self.fist.pos).map(|d| d / cfg.dt);
        for (b, old) in next.blocks.iter_mut().zip(&self.blocks) {
            b.vel = sub(b.pos, old.pos).map(|d| damping * d / cfg.dt);
        }
        next.step_count = self.step_count + 1;
        Ok(next)
    }

    /// Moves the fist by `alpha * fist_disp` and the blocks by `alpha` of
    /// their drift, resolving contacts in sub-steps. `None` if contacts cannot
    /// be resolved.
    fn advance(&self, cfg: &ArenaConfig, fist_disp: Vec2, alpha: f64) -> Option<WorldState> {
        let r = cfg.radius();
        let max_move = self
            .blocks
            .iter()
            .map(|b| norm(b.vel) * cfg.dt)
            .fold(norm(fist_disp), f64::max)
            * alpha;
        let substeps = ((max_move / (0.25 * r)).ceil() as usize).max(1);
        let frac = alpha / substeps as f64;
        let mut s = self.clone();
        let dir = if norm(fist_disp) > 0.0 { fist_disp } else { [1.0, 0.0] };
        for _ in 0..substeps {
            s.fist.pos = clamp2(
                [s.fist.pos[0] + frac * fist_disp[0], s.fist.pos[1] + frac * fist_disp[1]],
                0.0,
                cfg.side,
            );
            for (b, old) in s.blocks.iter_mut().zip(&self.blocks) {
                b.pos = clamp2(
                    [b.pos[0] + frac * old.vel[0] * cfg.dt, b.pos[1] + frac * old.vel[1] * cfg.dt],
                    r,
                    cfg.side - r,
                );
            }
            if !resolve_contacts(&mut s, cfg, dir) {
                return None;
            }
        }
        Some(s)
    }
}

/// Projects blocks out of the fist and out of each other, keeping them in
/// the inner region. Returns whether every overlap ended within tolerance.
fn resolve_contacts(s: &mut WorldState, cfg: &ArenaConfig, fallback_dir: Vec2) -> bool {
    let r = cfg.radius();
    let contact = cfg.object_diameter;
    let unit = |d: Vec2| -> Vec2 {
        let n = norm(d);
        if n > 0.0 {
            [d[0] / n, d[1] / n]
        } else {
            let m = norm(fallback_dir);
            [fallback_dir[0] / m, fallback_dir[1] / m]
        }
    };
    for _ in 0..MAX_PROJECTION_ITERS {
        let mut moved = false;
        let fist = s.fist.pos;
        for b in s.blocks.iter_mut() {
            let d = sub(b.pos, fist);
            if norm(d) < contact - PROJECTION_SLOP {
                let n = unit(d);
                b.pos = [fist[0] + n[0] * contact, fist[1] + n[1] * contact];
                moved = true;
            }
        }
        for i in 0..s.blocks.len() {
            for j in i + 1..s.blocks.len() {
                let d = sub(s.blocks[j].pos, s.blocks[i].pos);
                let dist = norm(d);
                if dist < contact - PROJECTION_SLOP {
                    let n = unit(d);
                    let half = 0.5 * (contact - dist);
                    let (pi, pj) = (s.blocks[i].pos, s.blocks[j].pos);
                    s.blocks[i].pos = [pi[0] - n[0] * half, pi[1] - n[1] * half];
                    s.blocks[j].pos = [pj[0] + n[0] * half, pj[1] + n[1] * half];
                    moved = true;
                }
            }
        }
        for b in s.blocks.iter_mut() {
            b.pos = clamp2(b.pos, r, cfg.side - r);
        }
        if !moved {
            break;
        }
    }
    check_invariants(s, cfg).is_ok()
}

/// Checks containment and non-overlap within [`OVERLAP_TOLERANCE`].
pub fn check_invariants(s: &WorldState, cfg: &ArenaConfig) -> Result<(), Violation> {
    let r = cfg.radius();
    let finite = |p: Vec2| p.iter().all(|x| x.is_finite());
    if !finite(s.fist.pos) || s.blocks.iter().any(|b| !finite(b.pos)) {
        return Err(Violation::NonFinite);
    }
    let inside = |p: Vec2, lo: f64, hi: f64| p.iter().all(|&x| x >= lo && x <= hi);
    if !inside(s.fist.pos, 0.0, cfg.side) {
        return Err(Violation::FistOutside { pos: s.fist.pos });
    }
    for b in &s.blocks {
        if !inside(b.pos, r, cfg.side - r) {
            return Err(Violation::BlockOutside {
                color: b.color,
                pos: b.pos,
            });
        }
    }
    let contact = cfg.object_diameter;
    let mut bodies: Vec<(String, Vec2)> = vec![("fist".into(), s.fist.pos)];
    bodies.extend(s.blocks.iter().map(|b| (b.color.name().to_owned(), b.pos)));
    for i in 0..bodies.len() {
        for j in i + 1..bodies.len() {
            let depth = contact - norm(sub(bodies[i].1, bodies[j].1));
            if depth > OVERLAP_TOLERANCE {
                return Err(Violation::Overlap {
                    a: bodies[i].0.clone(),
                    b: bodies[j].0.clone(),
                    depth,
                });
            }
        }
    }
    Ok(())
}

/// Fist and blocks uniformly in the inner region, pairwise at least one
/// diameter apart, all at rest.
pub fn reset<R: Rng + ?Sized>(cfg: &ArenaConfig, rng: &mut R) -> Result<WorldState, PlayroomError> {
    cfg.validate()?;
    let r = cfg.radius();
    let (lo, hi) = (r, cfg.side - r);
    let n = cfg.n_blocks() + 1;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let pts: Vec<Vec2> = (0..n)
            .map(|_| [rng.random_range(lo..=hi), rng.random_range(lo..=hi)])
            .collect();
        let clear = (0..n).all(|i| (i + 1..n).all(|j| norm(sub(pts[i], pts[j])) >= cfg.object_diameter));
        if clear {
            return Ok(WorldState {
                fist: Body {
                    pos: pts[0],
                    vel: [0.0; 2],
                },
                blocks: cfg
                    .colors
                    .iter()
                    .zip(&pts[1..])
                    .map(|(&color, &pos)| Block {
                        color,
                        pos,
                        vel: [0.0; 2],
                    })
                    .collect(),
                pad: cfg.pad.map(|p| p.center),
                step_count: 0,
            });
        }
    }
    Err(PlayroomError::Placement(PLACEMENT_ATTEMPTS))
}

/// Block positions relative to the fist (colour order, then the pad), scaled
/// by half the side, followed by the fist position mapped to `[-1, 1]^2`.
pub fn observe(s: &WorldState, cfg: &ArenaConfig) -> Vec<f64> {
    let half = cfg.side / 2.0;
    let f = s.fist.pos;
    let mut obs = Vec::with_capacity(cfg.obs_dim());
    let rel = |p: Vec2| [(p[0] - f[0]) / half, (p[1] - f[1]) / half];
    for &color in &cfg.colors {
        let b = s.block(color).expect("world holds every configured block");
        obs.extend(rel(b.pos));
    }
    if let Some(pad) = s.pad {
        obs.extend(rel(pad));
    }
    obs.extend([f[0] / half - 1.0, f[1] / half - 1.0]);
    obs
}

#[cfg(test)]
mod tests;
