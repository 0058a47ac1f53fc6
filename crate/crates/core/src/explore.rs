//! Behaviour policy: the intentional head's action plus Ornstein-Uhlenbeck noise.

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::nets::ActorNet;
use crate::nn::NnError;
use crate::scalar::Real;

#[derive(Debug, thiserror::Error)]
pub enum ExploreError {
    #[error("invalid noise parameter: {0}")]
    InvalidParam(String),
    #[error("intentional task {task} out of range for {n_tasks} heads")]
    TaskOutOfRange { task: usize, n_tasks: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuConfig {
    /// Mean-reversion rate.
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
}

impl Default for OuConfig {
    fn default() -> Self {
        Self {
            theta: 0.15,
            sigma: 0.2,
            dt: 1.0,
        }
    }
}

/// Discretised Ornstein-Uhlenbeck process
/// `x' = x + theta (mu - x) dt + sigma sqrt(dt) eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuNoise<S> {
    x: Array1<S>,
    mu: Array1<S>,
    theta: S,
    sigma: S,
    dt: S,
}

impl<S: Real> OuNoise<S> {
    /// Zero-mean process of dimension `dim`, started at its mean.
    pub fn new(dim: usize, cfg: OuConfig) -> Result<Self, ExploreError> {
        Self::with_mean(Array1::zeros(dim), cfg)
    }

    pub fn with_mean(mu: Array1<S>, cfg: OuConfig) -> Result<Self, ExploreError> {
        if !(cfg.theta > 0.0 && cfg.theta.is_finite()) {
            return Err(ExploreError::InvalidParam(format!("theta must be > 0, got {}", cfg.theta)));
        }
        if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
            return Err(ExploreError::InvalidParam(format!("sigma must be >= 0, got {}", cfg.sigma)));
        }
        if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
            return Err(ExploreError::InvalidParam(format!("dt must be > 0, got {}", cfg.dt)));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(ExploreError::InvalidParam("mean must be finite".into()));
        }
        Ok(Self {
            x: mu.clone(),
            mu,
            theta: S::of(cfg.theta),
            sigma: S::of(cfg.sigma),
            dt: S::of(cfg.dt),
        })
    }

    pub fn state(&self) -> ArrayView1<'_, S> {
        self.x.view()
    }

    pub fn set_state(&mut self, x: Array1<S>) -> Result<(), ExploreError> {
        if x.len() != self.mu.len() || x.iter().any(|v| !v.is_finite()) {
            return Err(ExploreError::InvalidParam("noise state must be finite and match dimension".into()));
        }
        self.x = x;
        Ok(())
    }

    /// Returns the process to its long-run mean.
    pub fn reset(&mut self) {
        self.x.assign(&self.mu);
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Array1<S> {
        let diffusion = self.sigma * self.dt.sqrt();
        for (x, &mu) in self.x.iter_mut().zip(&self.mu) {
            let eps: f64 = rng.sample(StandardNormal);
            *x = *x + self.theta * (mu - *x) * self.dt + diffusion * S::of(eps);
        }
        self.x.clone()
    }
}

/// `clamp(mu_intentional(obs) + z, -1, 1)` with `z` the next OU sample.
pub fn behavior_action<S: Real, R: Rng + ?Sized>(
    actor: &ActorNet<S>,
    obs: ArrayView1<S>,
    intentional: usize,
    noise: &mut OuNoise<S>,
    rng: &mut R,
) -> Result<Array1<S>, ExploreError> {
    if intentional >= actor.n_tasks() {
        return Err(ExploreError::TaskOutOfRange {
            task: intentional,
            n_tasks: actor.n_tasks(),
        });
    }
    let mut a = actor.forward_head(obs, intentional)?;
    let z = noise.step(rng);
    a.zip_mut_with(&z, |a, &z| *a = (*a + z).max(-S::one()).min(S::one()));
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehaviorMode {
    /// Follow one intentional head for the whole run.
    Fixed,
    /// Draw the followed head uniformly at the start of each episode.
    RandomEpisode,
}

/// Tracks which head drives behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSchedule {
    mode: BehaviorMode,
    intentional: usize,
    current: usize,
    n_tasks: usize,
}

impl BehaviorSchedule {
    pub fn new(mode: BehaviorMode, intentional: usize, n_tasks: usize) -> Result<Self, ExploreError> {
        if intentional >= n_tasks {
            return Err(ExploreError::TaskOutOfRange {
                task: intentional,
                n_tasks,
            });
        }
        Ok(Self {
            mode,
            intentional,
            current: intentional,
            n_tasks,
        })
    }

    pub fn intentional(&self) -> usize {
        self.intentional
    }

    /// Head followed in the current episode.
    pub fn current(&self) -> usize {
        self.current
    }

    pub fn begin_episode<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        if self.mode == BehaviorMode::RandomEpisode {
            self.current = rng.random_range(0..self.n_tasks);
        }
        self.current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::NetShape;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lag1_autocorrelation(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        cov / var
    }

    #[test]
    fn deterministic_mean_reversion() {
        let cfg = OuConfig {
            theta: 0.15,
            sigma: 0.0,
            dt: 1.0,
        };
        let mut ou = OuNoise::<f64>::new(2, cfg).unwrap();
        ou.set_state(array![1.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = ou.step(&mut rng);
        assert!((x[0] - 0.85).abs() < 1e-15);

        let mut fixed = OuNoise::with_mean(array![0.3, -0.2], cfg).unwrap();
        for _ in 0..100 {
            assert_eq!(fixed.step(&mut rng), array![0.3, -0.2]);
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let bad = [
            OuConfig { theta: 0.0, ..OuConfig::default() },
            OuConfig { sigma: -1.0, ..OuConfig::default() },
            OuConfig { dt: 0.0, ..OuConfig::default() },
        ];
        for cfg in bad {
            assert!(OuNoise::<f64>::new(2, cfg).is_err());
        }
    }

    #[test]
    fn lag_one_autocorrelation_matches_reversion_rate() {
        let cfg = OuConfig::default();
        let mut ou = OuNoise::<f64>::new(2, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let xs: Vec<f64> = (0..100_000).map(|_| ou.step(&mut rng)[0]).collect();
        let rho = lag1_autocorrelation(&xs);
        let want = 1.0 - cfg.theta * cfg.dt;
        assert!((rho - want).abs() < 0.02, "rho = {rho}, want {want}");
    }

    #[test]
    fn noiseless_behavior_equals_intentional_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let actor = ActorNet::<f64>::new(NetShape::actor(4, 3).with_width(8), &mut rng).unwrap();
        let cfg = OuConfig { sigma: 0.0, ..OuConfig::default() };
        let mut ou = OuNoise::new(2, cfg).unwrap();
        let obs = array![0.2, -0.4, 0.1, 0.9];
        let a = behavior_action(&actor, obs.view(), 1, &mut ou, &mut rng).unwrap();
        assert_eq!(a, actor.forward_head(obs.view(), 1).unwrap());
        assert!(matches!(
            behavior_action(&actor, obs.view(), 3, &mut ou, &mut rng),
            Err(ExploreError::TaskOutOfRange { .. })
        ));
    }

    #[test]
    fn behavior_clamps_to_action_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut actor = ActorNet::<f64>::zeros(NetShape::actor(2, 1).with_width(4)).unwrap();
        let head = actor.head_layer(0);
        // tanh(b) = 0.9 on the first component, 0 on the second
        actor.params_mut().layers_mut()[head].bias[0] = 0.9f64.atanh();
        let cfg = OuConfig { sigma: 0.0, ..OuConfig::default() };
        let mut ou = OuNoise::with_mean(array![0.5, 0.0], cfg).unwrap();
        let a = behavior_action(&actor, array![0.0, 0.0].view(), 0, &mut ou, &mut rng).unwrap();
        assert_eq!(a[0], 1.0);

        let mut ou = OuNoise::new(2, OuConfig { sigma: 5.0, ..OuConfig::default() }).unwrap();
        for _ in 0..1000 {
            let a = behavior_action(&actor, array![0.0, 0.0].view(), 0, &mut ou, &mut rng).unwrap();
            assert!(a.iter().all(|x| (-1.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn behavior_actions_are_temporally_correlated() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actor = ActorNet::<f64>::zeros(NetShape::actor(2, 1).with_width(4)).unwrap();
        let mut ou = OuNoise::new(2, OuConfig::default()).unwrap();
        let xs: Vec<f64> = (0..20_000)
            .map(|_| behavior_action(&actor, array![0.0, 0.0].view(), 0, &mut ou, &mut rng).unwrap()[0])
            .collect();
        assert!(lag1_autocorrelation(&xs) > 0.5);
    }

    #[test]
    fn schedule_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut fixed = BehaviorSchedule::new(BehaviorMode::Fixed, 2, 5).unwrap();
        assert!((0..20).all(|_| fixed.begin_episode(&mut rng) == 2));
        let mut random = BehaviorSchedule::new(BehaviorMode::RandomEpisode, 2, 5).unwrap();
        let picks: std::collections::BTreeSet<usize> = (0..200).map(|_| random.begin_episode(&mut rng)).collect();
        assert_eq!(picks.len(), 5);
        assert!(BehaviorSchedule::new(BehaviorMode::Fixed, 5, 5).is_err());
    }
}
