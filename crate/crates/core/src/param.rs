//! Trainable parameters, the Adam update rule, and power-iteration spectral
//! normalization for discriminator and classifier convolutions.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Tensor};
use crate::real::{real, Real};

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a parameter instance, used to match gradients on a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(u64);

/// A named trainable tensor with its Adam state.
#[derive(Debug)]
pub struct Parameter<T: Real> {
    pub name: String,
    pub data: Vec<T>,
    pub shape: Vec<usize>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    id: ParamId,
}

impl<T: Real> Clone for Parameter<T> {
    /// Clones get a fresh id so graph bindings never alias across snapshots.
    fn clone(&self) -> Self {
        Parameter {
            name: self.name.clone(),
            data: self.data.clone(),
            shape: self.shape.clone(),
            m: self.m.clone(),
            v: self.v.clone(),
            step: self.step,
            id: ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed)),
        }
    }
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, data: Vec<T>, shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "parameter data/shape mismatch");
        Parameter {
            name: name.into(),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
            data,
            shape,
            id: ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed)),
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Parameter::new(name, vec![T::zero(); n], shape.to_vec())
    }

    /// Uniform init in [-bound, bound].
    pub fn uniform(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| real::<T>(rng.gen_range(-bound..=bound)))
            .collect();
        Parameter::new(name, data, shape.to_vec())
    }

    /// Fan-in scaled uniform init: bound = sqrt(3 / fan_in).
    pub fn fan_in_uniform(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (3.0 / fan_in as f64).sqrt();
        Parameter::uniform(name, shape, bound, rng)
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Replace data/state from a checkpoint, keeping the id.
    pub fn restore(&mut self, data: Vec<T>, m: Vec<T>, v: Vec<T>, step: u64) -> Result<()> {
        if data.len() != self.data.len() || m.len() != self.data.len() || v.len() != self.data.len()
        {
            return Err(Error::Invariant(format!(
                "restore size mismatch for parameter {}",
                self.name
            )));
        }
        self.data = data;
        self.m = m;
        self.v = v;
        self.step = step;
        Ok(())
    }
}

/// Adam hyperparameters; defaults follow the training recipe.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
        }
    }
}

/// Apply one bias-corrected Adam update to every parameter, consuming the
/// gradients accumulated on `graph` (they are cleared by this call).
pub fn adam_step<T: Real>(
    params: &mut [&mut Parameter<T>],
    graph: &Graph<T>,
    cfg: AdamConfig,
) -> Result<()> {
    let b1 = real::<T>(cfg.beta1);
    let b2 = real::<T>(cfg.beta2);
    let lr = real::<T>(cfg.lr);
    let eps = real::<T>(cfg.eps);
    for p in params.iter_mut() {
        let grad = graph.take_param_grad(p).ok_or_else(|| {
            Error::Invariant(format!("missing gradient for parameter {}", p.name))
        })?;
        p.step += 1;
        let t = p.step as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for i in 0..p.data.len() {
            let g = grad[i];
            p.m[i] = b1 * p.m[i] + (T::one() - b1) * g;
            p.v[i] = b2 * p.v[i] + (T::one() - b2) * g * g;
            let m_hat = p.m[i] / bc1;
            let v_hat = p.v[i] / bc2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Global L2 norm of the gradients bound to `params` on `graph`.
pub fn global_grad_norm<T: Real>(params: &[&Parameter<T>], graph: &Graph<T>) -> f64 {
    let mut sq = 0.0f64;
    for p in params {
        if let Some(g) = graph.param_grad(p) {
            for v in g {
                let x = v.as_f64();
                sq += x * x;
            }
        }
    }
    sq.sqrt()
}

/// Scale gradients so the global norm does not exceed `max_norm`.
pub fn clip_grads<T: Real>(params: &[&Parameter<T>], graph: &Graph<T>, max_norm: f64) {
    let norm = global_grad_norm(params, graph);
    if norm > max_norm && norm > 0.0 {
        graph.scale_param_grads(params, real::<T>(max_norm / norm));
    }
}

/// Persistent left-singular-vector estimate for spectral normalization.
#[derive(Debug, Clone)]
pub struct SpectralNormState<T: Real> {
    pub u: Vec<T>,
    pub power_iterations_per_step: usize,
}

impl<T: Real> SpectralNormState<T> {
    pub fn new(rows: usize, rng: &mut impl Rng) -> Self {
        let mut u: Vec<T> = (0..rows)
            .map(|_| real::<T>(rng.gen_range(-1.0..=1.0)))
            .collect();
        normalize(&mut u);
        SpectralNormState {
            u,
            power_iterations_per_step: 1,
        }
    }
}

fn normalize<T: Real>(v: &mut [T]) {
    let mut sq = T::zero();
    for x in v.iter() {
        sq += *x * *x;
    }
    let n = sq.sqrt();
    if n > real::<T>(1e-30) {
        for x in v.iter_mut() {
            *x /= n;
        }
    } else if !v.is_empty() {
        // degenerate start: fall back to a unit basis vector
        for x in v.iter_mut() {
            *x = T::zero();
        }
        v[0] = T::one();
    }
}

const SIGMA_FLOOR: f64 = 1e-12;

/// Estimate of the top singular value after the state's power iterations.
/// The parameter is viewed as a 2-D matrix [shape[0], rest].
fn power_estimate<T: Real>(p: &Parameter<T>, state: &mut SpectralNormState<T>, update: bool) -> T {
    let rows = p.shape[0];
    let cols = p.numel() / rows;
    let w = &p.data;
    let mut u = state.u.clone();
    let mut sigma = T::zero();
    let iters = state.power_iterations_per_step.max(1);
    for _ in 0..iters {
        // v = normalize(W^T u)
        let mut v = vec![T::zero(); cols];
        for r in 0..rows {
            let ur = u[r];
            for c in 0..cols {
                v[c] += w[r * cols + c] * ur;
            }
        }
        normalize(&mut v);
        // u_raw = W v; sigma = ||u_raw||
        let mut u_raw = vec![T::zero(); rows];
        for r in 0..rows {
            let mut s = T::zero();
            for c in 0..cols {
                s += w[r * cols + c] * v[c];
            }
            u_raw[r] = s;
        }
        let mut sq = T::zero();
        for x in &u_raw {
            sq += *x * *x;
        }
        sigma = sq.sqrt();
        if sigma.as_f64() <= SIGMA_FLOOR {
            break;
        }
        u = u_raw;
        normalize(&mut u);
    }
    if update && sigma.as_f64() > SIGMA_FLOOR {
        state.u = u;
    }
    sigma
}

/// Register `p` on the graph divided by its estimated top singular value.
///
/// The estimate is treated as a constant (not differentiated through). The
/// persistent `u` vector is advanced only on training-mode graphs, one batch
/// of `power_iterations_per_step` iterations per call.
pub fn spectral_normalize<T: Real>(
    graph: &Graph<T>,
    p: &Parameter<T>,
    state: &mut SpectralNormState<T>,
) -> Result<Tensor<T>> {
    let update = graph.mode() == Mode::Train;
    let sigma = power_estimate(p, state, update);
    let w = graph.param(p);
    if sigma.as_f64() <= SIGMA_FLOOR {
        log::warn!(
            "spectral_normalize: weight {} has vanishing top singular value; returning unscaled",
            p.name
        );
        return Ok(w);
    }
    Ok(w.scale(T::one() / sigma))
}

/// Current sigma estimate without touching the persistent state.
pub fn spectral_sigma<T: Real>(p: &Parameter<T>, state: &SpectralNormState<T>) -> T {
    let mut s = state.clone();
    power_estimate(p, &mut s, false)
}
