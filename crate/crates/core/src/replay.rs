//! Fixed-capacity FIFO experience buffer with uniform sampling.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::nn::checkpoint::{Checkpoint, CheckpointError};
use crate::scalar::Real;

pub const DEFAULT_CAPACITY: usize = 200_000;

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("transition field `{field}` has length {found}, expected {expected}")]
    Shape {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("cannot sample from an empty replay buffer")]
    Empty,
    #[error("replay capacity must be positive")]
    ZeroCapacity,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// One environment step: `(s, a, r, s')` with a reward per task.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub obs: Array1<S>,
    pub action: Array1<S>,
    pub rewards: Array1<S>,
    pub next_obs: Array1<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dims {
    obs: usize,
    action: usize,
    tasks: usize,
}

impl<S> Transition<S> {
    fn dims(&self) -> Dims {
        Dims {
            obs: self.obs.len(),
            action: self.action.len(),
            tasks: self.rewards.len(),
        }
    }
}

/// A mini-batch stacked into row-per-sample matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S> {
    pub obs: Array2<S>,
    pub actions: Array2<S>,
    pub rewards: Array2<S>,
    pub next_obs: Array2<S>,
}

impl<S: Real> Batch<S> {
    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_transitions(items: &[&Transition<S>]) -> Result<Self, ReplayError> {
        let first = items.first().ok_or(ReplayError::Empty)?;
        let d = first.dims();
        let n = items.len();
        let mut batch = Batch {
            obs: Array2::zeros((n, d.obs)),
            actions: Array2::zeros((n, d.action)),
            rewards: Array2::zeros((n, d.tasks)),
            next_obs: Array2::zeros((n, d.obs)),
        };
        for (j, t) in items.iter().enumerate() {
            check_dims(d, t)?;
            batch.obs.row_mut(j).assign(&t.obs);
            batch.actions.row_mut(j).assign(&t.action);
            batch.rewards.row_mut(j).assign(&t.rewards);
            batch.next_obs.row_mut(j).assign(&t.next_obs);
        }
        Ok(batch)
    }
}

fn check_dims<S>(want: Dims, t: &Transition<S>) -> Result<(), ReplayError> {
    let fields = [
        ("obs", want.obs, t.obs.len()),
        ("next_obs", want.obs, t.next_obs.len()),
        ("action", want.action, t.action.len()),
        ("rewards", want.tasks, t.rewards.len()),
    ];
    for (field, expected, found) in fields {
        if expected != found {
            return Err(ReplayError::Shape {
                field,
                expected,
                found,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<S> {
    capacity: usize,
    items: Vec<Transition<S>>,
    // slot overwritten by the next push once the ring is full
    head: usize,
    dims: Option<Dims>,
}

impl<S: Real> ReplayBuffer<S> {
    pub fn new(capacity: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            head: 0,
            dims: None,
        })
    }

    /// Buffer that only accepts transitions of the given dimensions.
    pub fn with_dims(capacity: usize, obs: usize, action: usize, tasks: usize) -> Result<Self, ReplayError> {
        let mut b = Self::new(capacity)?;
        b.dims = Some(Dims { obs, action, tasks });
        Ok(b)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition<S>) -> Result<(), ReplayError> {
        let want = match self.dims {
            Some(d) => d,
            None => Dims {
                obs: t.obs.len(),
                ..t.dims()
            },
        };
        check_dims(want, &t)?;
        self.dims = Some(want);
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition<S>> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer)
    }

    fn draw_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>, ReplayError> {
        if self.items.is_empty() {
            return Err(ReplayError::Empty);
        }
        let n = self.items.len();
        Ok((0..batch).map(|_| rng.random_range(0..n)).collect())
    }

    /// `batch` i.i.d. uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<Transition<S>>, ReplayError> {
        Ok(self
            .draw_indices(batch, rng)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }

    /// Same draws as [`Self::sample`], stacked into matrices.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch<S>, ReplayError> {
        let idx = self.draw_indices(batch, rng)?;
        let picked: Vec<&Transition<S>> = idx.iter().map(|&i| &self.items[i]).collect();
        Batch::from_transitions(&picked)
    }

    /// Dumps the contents (oldest first) under `prefix`.
    pub fn save_into(&self, prefix: &str, ckpt: &mut Checkpoint) {
        let d = self.dims.unwrap_or(Dims {
            obs: 0,
            action: 0,
            tasks: 0,
        });
        ckpt.push_u64(
            &format!("{prefix}.meta"),
            &[self.capacity, self.items.len(), d.obs, d.action, d.tasks].map(|x| x as u64),
        );
        let n = self.items.len();
        let fields: [(&str, usize, fn(&Transition<S>) -> &Array1<S>); 4] = [
            ("obs", d.obs, |t| &t.obs),
            ("action", d.action, |t| &t.action),
            ("rewards", d.tasks, |t| &t.rewards),
            ("next_obs", d.obs, |t| &t.next_obs),
        ];
        for (name, width, get) in fields {
            ckpt.push_real(
                &format!("{prefix}.{name}"),
                &[n, width],
                self.iter().flat_map(|t| get(t).iter().copied()),
            );
        }
    }

    pub fn load_from(prefix: &str, ckpt: &Checkpoint) -> Result<Self, ReplayError> {
        let meta = ckpt.get_u64(&format!("{prefix}.meta"))?;
        let [capacity, n, obs, action, tasks] = meta[..] else {
            return Err(CheckpointError::Corrupt(format!("{prefix}.meta: expected 5 values")).into());
        };
        let (capacity, n) = (capacity as usize, n as usize);
        let mut buf = Self::new(capacity)?;
        if n == 0 {
            return Ok(buf);
        }
        let read = |name: &str, width: u64| -> Result<Array2<S>, ReplayError> {
            let (shape, data) = ckpt.get_real::<S>(&format!("{prefix}.{name}"))?;
            if shape != [n, width as usize] {
                return Err(CheckpointError::Corrupt(format!("{prefix}.{name}: shape {shape:?}")).into());
            }
            Ok(Array2::from_shape_vec((n, width as usize), data).expect("shape checked"))
        };
        let (o, a, r, no) = (read("obs", obs)?, read("action", action)?, read("rewards", tasks)?, read("next_obs", obs)?);
        for j in 0..n {
            buf.push(Transition {
                obs: o.row(j).to_owned(),
                action: a.row(j).to_owned(),
                rewards: r.row(j).to_owned(),
                next_obs: no.row(j).to_owned(),
            })?;
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(tag: f64, tasks: usize) -> Transition<f64> {
        Transition {
            obs: array![tag, tag],
            action: array![0.1, -0.1],
            rewards: Array1::from_elem(tasks, 1.0),
            next_obs: array![tag + 1.0, tag],
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2).unwrap();
        for tag in [1.0, 2.0, 3.0] {
            b.push(tr(tag, 3)).unwrap();
        }
        let tags: Vec<f64> = b.iter().map(|t| t.obs[0]).collect();
        assert_eq!(tags, vec![2.0, 3.0]);
        b.push(tr(4.0, 3)).unwrap();
        let tags: Vec<f64> = b.iter().map(|t| t.obs[0]).collect();
        assert_eq!(tags, vec![3.0, 4.0]);
    }

    #[test]
    fn push_into_empty_and_reject_bad_rewards() {
        let mut b = ReplayBuffer::new(5).unwrap();
        b.push(tr(0.0, 3)).unwrap();
        assert_eq!(b.len(), 1);
        let err = b.push(tr(1.0, 2)).unwrap_err();
        assert!(matches!(err, ReplayError::Shape { field: "rewards", .. }));
        let mut bad = tr(2.0, 3);
        bad.next_obs = array![1.0];
        assert!(b.push(bad).is_err());
        assert_eq!(b.len(), 1);

        let mut fixed = ReplayBuffer::with_dims(5, 2, 2, 4).unwrap();
        assert!(fixed.push(tr(0.0, 3)).is_err());
        assert!(ReplayBuffer::<f64>::new(0).is_err());
    }

    #[test]
    fn sampling_single_element_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = ReplayBuffer::new(4).unwrap();
        assert!(matches!(b.sample(3, &mut rng), Err(ReplayError::Empty)));
        b.push(tr(7.0, 1)).unwrap();
        let draws = b.sample(50, &mut rng).unwrap();
        assert!(draws.iter().all(|t| *t == tr(7.0, 1)));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let mut b = ReplayBuffer::new(100).unwrap();
        for i in 0..30 {
            b.push(tr(i as f64, 2)).unwrap();
        }
        let s1 = b.sample_batch(64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let s2 = b.sample_batch(64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(s1, s2);
        let t = b.sample(64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let refs: Vec<&Transition<f64>> = t.iter().collect();
        assert_eq!(Batch::from_transitions(&refs).unwrap(), s1);
    }

    #[test]
    fn sampling_is_uniform_chi_square() {
        let mut b = ReplayBuffer::new(10).unwrap();
        for i in 0..10 {
            b.push(tr(i as f64, 1)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 10];
        let draws = 100_000;
        for t in b.sample(draws, &mut rng).unwrap() {
            counts[t.obs[0] as usize] += 1;
        }
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square, 9 dof: P(X > 27.88) = 0.001
        assert!(chi2 < 27.88, "chi2 = {chi2}, counts = {counts:?}");
        let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - expected).abs() < 3.0 * sigma));
    }

    #[test]
    fn dump_and_restore_preserves_order() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(tr(i as f64, 2)).unwrap();
        }
        let mut ck = Checkpoint::new();
        b.save_into("replay", &mut ck);
        let back = ReplayBuffer::<f64>::load_from("replay", &ck).unwrap();
        assert_eq!(back.iter().collect::<Vec<_>>(), b.iter().collect::<Vec<_>>());
        assert_eq!(back.capacity(), 3);
    }
}
