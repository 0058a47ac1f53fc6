//! Minimal dense-network engine.
//!
//! A [`ParamStore`] owns an ordered list of affine layers together with their
//! gradient accumulators and Adam moments. An [`Mlp`] is a view over a
//! contiguous run of those layers; several `Mlp`s can share one store, which
//! is how the multi-head networks in [`crate::nets`] are assembled.
//!
//! All batched tensors are row-major with one sample per row.

pub mod checkpoint;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::scalar::Real;
use checkpoint::{Checkpoint, CheckpointError};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("forward cache does not belong to this network state (stale or foreign cache)")]
    StaleCache,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub(crate) fn check_shape(
    context: &'static str,
    expected: &[usize],
    found: &[usize],
) -> Result<(), NnError> {
    if expected == found {
        Ok(())
    } else {
        Err(NnError::Shape {
            context,
            expected: expected.to_vec(),
            found: found.to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn tanh(in_dim: usize, out_dim: usize) -> Self {
        Self::new(in_dim, out_dim, Activation::Tanh)
    }

    pub fn linear(in_dim: usize, out_dim: usize) -> Self {
        Self::new(in_dim, out_dim, Activation::Linear)
    }
}

/// Weight initialisation for one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn,
    /// Uniform in `[-limit, limit]`, used for output layers.
    Uniform(f64),
    Zeros,
}

/// One affine layer `y = W x + b`, `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub weight: Array2<S>,
    pub bias: Array1<S>,
}

impl<S: Real> Dense<S> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.weight.dim() == other.weight.dim() && self.bias.len() == other.bias.len()
    }

    fn fill_zero(&mut self) {
        self.weight.fill(S::zero());
        self.bias.fill(S::zero());
    }

    fn all_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|x| x.is_finite())
    }
}

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Parameters of one network plus gradient and Adam state of identical shape.
#[derive(Debug)]
pub struct ParamStore<S> {
    layers: Vec<Dense<S>>,
    grads: Vec<Dense<S>>,
    adam_m: Vec<Dense<S>>,
    adam_v: Vec<Dense<S>>,
    adam_t: u64,
    // identity + version let backward reject caches from another store or an
    // older parameter state
    id: u64,
    version: u64,
}

impl<S: Clone> Clone for ParamStore<S> {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            grads: self.grads.clone(),
            adam_m: self.adam_m.clone(),
            adam_v: self.adam_v.clone(),
            adam_t: self.adam_t,
            id: fresh_id(),
            version: 0,
        }
    }
}

impl<S: PartialEq> PartialEq for ParamStore<S> {
    /// Compares parameters and optimizer state, ignoring identity.
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.adam_m == other.adam_m
            && self.adam_v == other.adam_v
            && self.adam_t == other.adam_t
    }
}

impl<S: Real> ParamStore<S> {
    /// Builds a store from already-initialised layers.
    pub fn from_layers(layers: Vec<Dense<S>>) -> Self {
        let zeros: Vec<Dense<S>> = layers
            .iter()
            .map(|l| Dense::zeros(l.in_dim(), l.out_dim()))
            .collect();
        Self {
            grads: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            layers,
            adam_t: 0,
            id: fresh_id(),
            version: 0,
        }
    }

    pub fn init<R: Rng + ?Sized>(
        layers: &[(LayerSpec, Init)],
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut out = Vec::with_capacity(layers.len());
        for (spec, init) in layers {
            if spec.in_dim == 0 || spec.out_dim == 0 {
                return Err(NnError::InvalidSpec(format!(
                    "layer dims must be positive, got {}x{}",
                    spec.out_dim, spec.in_dim
                )));
            }
            let limit = match *init {
                Init::FanIn => 1.0 / (spec.in_dim as f64).sqrt(),
                Init::Uniform(l) => l,
                Init::Zeros => 0.0,
            };
            let mut dense = Dense::zeros(spec.in_dim, spec.out_dim);
            if limit > 0.0 {
                for w in dense.weight.iter_mut().chain(dense.bias.iter_mut()) {
                    *w = S::of(rng.random_range(-limit..limit));
                }
            }
            out.push(dense);
        }
        Ok(Self::from_layers(out))
    }

    pub fn layers(&self) -> &[Dense<S>] {
        &self.layers
    }

    pub fn grads(&self) -> &[Dense<S>] {
        &self.grads
    }

    pub fn adam_t(&self) -> u64 {
        self.adam_t
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Mutable access to the parameters. Invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Dense<S>] {
        self.version += 1;
        &mut self.layers
    }

    /// Parameters alongside their gradient accumulators.
    pub(crate) fn layers_and_grads(&mut self) -> (&[Dense<S>], &mut [Dense<S>]) {
        (&self.layers, &mut self.grads)
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(Dense::fill_zero);
    }

    /// Flattened view of every parameter, in layer order (weights then bias).
    pub fn flat_params(&self) -> Vec<S> {
        flatten(&self.layers)
    }

    pub fn flat_grads(&self) -> Vec<S> {
        flatten(&self.grads)
    }

    /// Overwrites every parameter from a flat vector laid out as [`Self::flat_params`].
    pub fn set_flat_params(&mut self, flat: &[S]) -> Result<(), NnError> {
        check_shape("set_flat_params", &[self.num_params()], &[flat.len()])?;
        let mut it = flat.iter().copied();
        for l in self.layers_mut() {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// One Adam descent step along the accumulated gradients, then clears them.
    ///
    /// A non-finite gradient aborts the step: parameters and moments are left
    /// untouched, gradients are cleared and an error is returned.
    pub fn adam_step(&mut self, lr: S, beta1: S, beta2: S, eps: S) -> Result<(), NnError> {
        if !self.grads.iter().all(Dense::all_finite) {
            self.zero_grads();
            return Err(NnError::NonFinite("gradient"));
        }
        self.adam_t += 1;
        self.version += 1;
        let t = i32::try_from(self.adam_t).unwrap_or(i32::MAX);
        let one = S::one();
        let bc1 = one - beta1.powi(t);
        let bc2 = one - beta2.powi(t);
        let update = |p: &mut S, m: &mut S, v: &mut S, g: &S| {
            *m = beta1 * *m + (one - beta1) * *g;
            *v = beta2 * *v + (one - beta2) * *g * *g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((p, m), v), g) in self
            .layers
            .iter_mut()
            .zip(&mut self.adam_m)
            .zip(&mut self.adam_v)
            .zip(&self.grads)
        {
            Zip::from(&mut p.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .and(&g.weight)
                .for_each(update);
            Zip::from(&mut p.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(update);
        }
        self.zero_grads();
        Ok(())
    }

    /// Polyak blending `self = (1 - tau) * self + tau * online`.
    ///
    /// Only parameters are blended; optimizer state of `self` is untouched.
    pub fn blend_from(&mut self, online: &ParamStore<S>, tau: S) -> Result<(), NnError> {
        if !(S::zero()..=S::one()).contains(&tau) {
            return Err(NnError::InvalidSpec(format!("tau must lie in [0, 1], got {tau}")));
        }
        let shapes_match = self.layers.len() == online.layers.len()
            && self
                .layers
                .iter()
                .zip(&online.layers)
                .all(|(a, b)| a.same_shape(b));
        if !shapes_match {
            return Err(NnError::Shape {
                context: "blend_targets",
                expected: shape_list(&self.layers),
                found: shape_list(&online.layers),
            });
        }
        if tau == S::zero() {
            return Ok(());
        }
        self.version += 1;
        if tau == S::one() {
            self.layers.clone_from(&online.layers);
            return Ok(());
        }
        let keep = S::one() - tau;
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.weight
                .zip_mut_with(&o.weight, |t, &o| *t = *t * keep + o * tau);
            t.bias.zip_mut_with(&o.bias, |t, &o| *t = *t * keep + o * tau);
        }
        Ok(())
    }

    /// Squared Euclidean distance between the parameters of two stores.
    pub fn sq_distance(&self, other: &ParamStore<S>) -> S {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                let dw: S = Zip::from(&a.weight)
                    .and(&b.weight)
                    .fold(S::zero(), |acc, &x, &y| acc + (x - y) * (x - y));
                let db: S = Zip::from(&a.bias)
                    .and(&b.bias)
                    .fold(S::zero(), |acc, &x, &y| acc + (x - y) * (x - y));
                dw + db
            })
            .fold(S::zero(), |acc, x| acc + x)
    }

    /// Writes parameters and Adam state under `prefix`.
    pub fn save_into(&self, prefix: &str, ckpt: &mut Checkpoint) {
        ckpt.push_u64(&format!("{prefix}.num_layers"), &[self.layers.len() as u64]);
        ckpt.push_u64(&format!("{prefix}.adam_t"), &[self.adam_t]);
        for (i, ((l, m), v)) in self
            .layers
            .iter()
            .zip(&self.adam_m)
            .zip(&self.adam_v)
            .enumerate()
        {
            for (tag, d) in [("", l), (".adam_m", m), (".adam_v", v)] {
                ckpt.push_real(
                    &format!("{prefix}.layer{i}{tag}.weight"),
                    &[d.out_dim(), d.in_dim()],
                    d.weight.iter().copied(),
                );
                ckpt.push_real(
                    &format!("{prefix}.layer{i}{tag}.bias"),
                    &[d.out_dim()],
                    d.bias.iter().copied(),
                );
            }
        }
    }

    pub fn load_from(prefix: &str, ckpt: &Checkpoint) -> Result<Self, NnError> {
        let n = scalar_u64(ckpt, &format!("{prefix}.num_layers"))? as usize;
        let adam_t = scalar_u64(ckpt, &format!("{prefix}.adam_t"))?;
        let mut layers = Vec::with_capacity(n);
        let mut ms = Vec::with_capacity(n);
        let mut vs = Vec::with_capacity(n);
        for i in 0..n {
            for (tag, dst) in [("", &mut layers), (".adam_m", &mut ms), (".adam_v", &mut vs)] {
                let (wshape, w) = ckpt.get_real::<S>(&format!("{prefix}.layer{i}{tag}.weight"))?;
                let (bshape, b) = ckpt.get_real::<S>(&format!("{prefix}.layer{i}{tag}.bias"))?;
                if wshape.len() != 2 || bshape.len() != 1 || bshape[0] != wshape[0] {
                    return Err(CheckpointError::Corrupt(format!(
                        "layer {i}{tag}: inconsistent shapes {wshape:?} / {bshape:?}"
                    ))
                    .into());
                }
                let weight = Array2::from_shape_vec((wshape[0], wshape[1]), w)
                    .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
                dst.push(Dense {
                    weight,
                    bias: Array1::from(b),
                });
            }
        }
        let mut store = Self::from_layers(layers);
        store.adam_m = ms;
        store.adam_v = vs;
        store.adam_t = adam_t;
        Ok(store)
    }
}

fn scalar_u64(ckpt: &Checkpoint, name: &str) -> Result<u64, CheckpointError> {
    match ckpt.get_u64(name)?.as_slice() {
        [x] => Ok(*x),
        other => Err(CheckpointError::Corrupt(format!(
            "{name}: expected one value, found {}",
            other.len()
        ))),
    }
}

fn flatten<S: Real>(layers: &[Dense<S>]) -> Vec<S> {
    layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
        .collect()
}

fn shape_list<S: Real>(layers: &[Dense<S>]) -> Vec<usize> {
    layers
        .iter()
        .flat_map(|l| [l.out_dim(), l.in_dim()])
        .collect()
}

/// Per-layer activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    store_id: u64,
    version: u64,
    first: usize,
    /// `acts[0]` is the input, `acts[k + 1]` the post-activation output of layer `k`.
    acts: Vec<Array2<S>>,
}

impl<S: Real> ForwardCache<S> {
    pub fn output(&self) -> &Array2<S> {
        self.acts.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &Array2<S> {
        &self.acts[0]
    }

    pub fn activations(&self) -> &[Array2<S>] {
        &self.acts
    }
}

fn layer_forward<S: Real>(spec: &LayerSpec, layer: &Dense<S>, x: ArrayView2<S>) -> Array2<S> {
    let mut z = x.dot(&layer.weight.t());
    z += &layer.bias;
    if spec.activation == Activation::Tanh {
        crate::scalar::tanh_inplace(&mut z);
    }
    z
}

/// A chain of layers `first..first + specs.len()` inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    first: usize,
    specs: Vec<LayerSpec>,
}

impl Mlp {
    pub fn new(first: usize, specs: Vec<LayerSpec>) -> Result<Self, NnError> {
        if specs.is_empty() {
            return Err(NnError::InvalidSpec("an mlp needs at least one layer".into()));
        }
        for pair in specs.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NnError::InvalidSpec(format!(
                    "layer output {} does not feed next input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        if specs.iter().any(|s| s.in_dim == 0 || s.out_dim == 0) {
            return Err(NnError::InvalidSpec("layer dims must be positive".into()));
        }
        Ok(Self { first, specs })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layer_range(&self) -> std::ops::Range<usize> {
        self.first..self.first + self.specs.len()
    }

    pub fn in_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].out_dim
    }

    fn check_store<S: Real>(&self, params: &ParamStore<S>) -> Result<(), NnError> {
        let range = self.layer_range();
        if range.end > params.layers.len() {
            return Err(NnError::Shape {
                context: "mlp layer range",
                expected: vec![range.end],
                found: vec![params.layers.len()],
            });
        }
        for (spec, layer) in self.specs.iter().zip(&params.layers[range]) {
            check_shape(
                "mlp layer",
                &[spec.out_dim, spec.in_dim],
                &[layer.out_dim(), layer.in_dim()],
            )?;
        }
        Ok(())
    }

    /// Batched forward pass; `input` has one sample per row.
    pub fn forward<S: Real>(
        &self,
        params: &ParamStore<S>,
        input: ArrayView2<S>,
    ) -> Result<(Array2<S>, ForwardCache<S>), NnError> {
        self.check_store(params)?;
        check_shape("mlp input", &[self.in_dim()], &[input.ncols()])?;
        let mut acts = Vec::with_capacity(self.specs.len() + 1);
        acts.push(input.to_owned());
        for (spec, layer) in self.specs.iter().zip(&params.layers[self.layer_range()]) {
            let z = layer_forward(spec, layer, acts.last().expect("nonempty").view());
            acts.push(z);
        }
        let cache = ForwardCache {
            store_id: params.id,
            version: params.version,
            first: self.first,
            acts,
        };
        Ok((cache.output().clone(), cache))
    }

    /// Forward pass that keeps no intermediate activations.
    pub fn forward_values<S: Real>(&self, params: &ParamStore<S>, input: ArrayView2<S>) -> Result<Array2<S>, NnError> {
        self.check_store(params)?;
        check_shape("mlp input", &[self.in_dim()], &[input.ncols()])?;
        let mut layers = self.specs.iter().zip(&params.layers[self.layer_range()]);
        let (spec, layer) = layers.next().expect("mlp has layers");
        let mut x = layer_forward(spec, layer, input);
        for (spec, layer) in layers {
            x = layer_forward(spec, layer, x.view());
        }
        Ok(x)
    }

    /// Errors unless `cache` came from this chain on the current parameters.
    pub(crate) fn check_fresh<S: Real>(&self, params: &ParamStore<S>, cache: &ForwardCache<S>) -> Result<(), NnError> {
        if cache.store_id != params.id
            || cache.version != params.version
            || cache.first != self.first
            || cache.acts.len() != self.specs.len() + 1
        {
            return Err(NnError::StaleCache);
        }
        Ok(())
    }

    /// Single-sample convenience wrapper around [`Self::forward`].
    pub fn forward_vec<S: Real>(
        &self,
        params: &ParamStore<S>,
        input: ArrayView1<S>,
    ) -> Result<Array1<S>, NnError> {
        let x = input.insert_axis(Axis(0));
        let (y, _) = self.forward(params, x)?;
        Ok(y.row(0).to_owned())
    }

    fn check_cache<S: Real>(
        &self,
        params: &ParamStore<S>,
        cache: &ForwardCache<S>,
        output_grad: &ArrayView2<S>,
    ) -> Result<(), NnError> {
        self.check_fresh(params, cache)?;
        check_shape("output gradient", cache.output().shape(), output_grad.shape())
    }

    /// Reverse pass: accumulates parameter gradients into `params.grads` and
    /// returns the gradient with respect to the input.
    pub fn backward<S: Real>(
        &self,
        params: &mut ParamStore<S>,
        cache: &ForwardCache<S>,
        output_grad: ArrayView2<S>,
    ) -> Result<Array2<S>, NnError> {
        self.check_cache(params, cache, &output_grad)?;
        let range = self.layer_range();
        let layers = &params.layers[range.clone()];
        let grads = &mut params.grads[range];
        Ok(self.backprop(layers, Some(grads), cache, output_grad))
    }

    /// Reverse pass that only returns the input gradient; parameter gradients
    /// are not touched.
    pub fn input_grad<S: Real>(
        &self,
        params: &ParamStore<S>,
        cache: &ForwardCache<S>,
        output_grad: ArrayView2<S>,
    ) -> Result<Array2<S>, NnError> {
        self.check_cache(params, cache, &output_grad)?;
        Ok(self.backprop(&params.layers[self.layer_range()], None, cache, output_grad))
    }

    fn backprop<S: Real>(
        &self,
        layers: &[Dense<S>],
        mut grads: Option<&mut [Dense<S>]>,
        cache: &ForwardCache<S>,
        output_grad: ArrayView2<S>,
    ) -> Array2<S> {
        let mut g = output_grad.to_owned();
        for k in (0..self.specs.len()).rev() {
            let y = &cache.acts[k + 1];
            if self.specs[k].activation == Activation::Tanh {
                Zip::from(&mut g)
                    .and(y)
                    .for_each(|g, &y| *g *= S::one() - y * y);
            }
            let x = &cache.acts[k];
            if let Some(grads) = grads.as_deref_mut() {
                let gl = &mut grads[k];
                general_mat_mul(S::one(), &g.t(), x, S::one(), &mut gl.weight);
                gl.bias += &g.sum_axis(Axis(0));
            }
            g = g.dot(&layers[k].weight);
        }
        g
    }
}

/// Forward pass of a whole store laid out as the chain `spec`.
pub fn mlp_forward<S: Real>(
    params: &ParamStore<S>,
    spec: &[LayerSpec],
    input: ArrayView2<S>,
) -> Result<(Array2<S>, ForwardCache<S>), NnError> {
    let mlp = Mlp::new(0, spec.to_vec())?;
    check_shape("layer count", &[params.num_layers()], &[spec.len()])?;
    mlp.forward(params, input)
}

/// Reverse pass matching [`mlp_forward`].
pub fn mlp_backward<S: Real>(
    params: &mut ParamStore<S>,
    spec: &[LayerSpec],
    cache: &ForwardCache<S>,
    output_grad: ArrayView2<S>,
) -> Result<Array2<S>, NnError> {
    let mlp = Mlp::new(0, spec.to_vec())?;
    check_shape("layer count", &[params.num_layers()], &[spec.len()])?;
    mlp.backward(params, cache, output_grad)
}
