//! Central finite-difference verification of every differentiable primitive
//! and composite block, in double precision. Used by the unit tests and by
//! the `gradcheck` CLI command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::SingerClassifier;
use crate::decoder::{Decoder, DecoderConfig, SelfAttention};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::Result;
use crate::graph::{conv1d, Graph, Tensor};
use crate::layers::{GluBlock, SnUpdate};
use crate::mrwds::{Discriminator, RwdConfig, RwdKind};

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

/// Outcome of one finite-difference check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked_elems: usize,
    pub pass: bool,
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<28} {} (max rel err {:.3e} over {} elements)",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.max_rel_err,
            self.checked_elems
        )
    }
}

/// A differentiable scalar function of several tensor inputs.
///
/// The closure rebuilds the graph from raw input values on every call so the
/// harness can evaluate perturbed copies; the graph is seeded identically
/// each time, which pins dropout masks across evaluations.
pub type BuildFn = dyn Fn(&Graph<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>;

pub struct CheckSpec {
    pub name: String,
    pub shapes: Vec<Vec<usize>>,
    pub build: Box<BuildFn>,
    /// Keeps sampled input values away from kinks (relu, abs) and log(0).
    pub input_offset: f64,
    pub train_mode: bool,
    /// Expected ratio analytic/numeric. 1 for true gradients; the gradient
    /// reversal layer advertises -lambda by contract.
    pub grad_scale: f64,
}

impl CheckSpec {
    pub fn new(
        name: impl Into<String>,
        shapes: Vec<Vec<usize>>,
        build: impl Fn(&Graph<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>> + 'static,
    ) -> Self {
        CheckSpec {
            name: name.into(),
            shapes,
            build: Box::new(build),
            input_offset: 0.0,
            train_mode: false,
            grad_scale: 1.0,
        }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.grad_scale = s;
        self
    }

    pub fn offset(mut self, off: f64) -> Self {
        self.input_offset = off;
        self
    }

    pub fn train(mut self) -> Self {
        self.train_mode = true;
        self
    }
}

fn eval_loss(spec: &CheckSpec, values: &[Vec<f64>], seed: u64) -> Result<f64> {
    let g = if spec.train_mode {
        Graph::<f64>::train(seed)
    } else {
        Graph::<f64>::eval()
    };
    let inputs: Vec<Tensor<f64>> = values
        .iter()
        .zip(&spec.shapes)
        .map(|(v, s)| g.leaf(v.clone(), s))
        .collect::<Result<_>>()?;
    Ok((spec.build)(&g, &inputs)?.scalar())
}

/// Run one spec: analytic gradients vs central differences at step 1e-5.
pub fn run_check(spec: &CheckSpec, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<Vec<f64>> = spec
        .shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            (0..n)
                .map(|_| rng.gen_range(-0.9..0.9) + spec.input_offset)
                .collect()
        })
        .collect();

    // Analytic pass.
    let g = if spec.train_mode {
        Graph::<f64>::train(seed)
    } else {
        Graph::<f64>::eval()
    };
    let inputs: Vec<Tensor<f64>> = values
        .iter()
        .zip(&spec.shapes)
        .map(|(v, s)| g.var(v.clone(), s))
        .collect::<Result<_>>()?;
    let loss = (spec.build)(&g, &inputs)?;
    g.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (ti, vals) in values.iter().enumerate() {
        for ei in 0..vals.len() {
            let mut plus = values.to_vec();
            plus[ti][ei] += FD_STEP;
            let mut minus = values.to_vec();
            minus[ti][ei] -= FD_STEP;
            let num = (eval_loss(spec, &plus, seed)? - eval_loss(spec, &minus, seed)?)
                / (2.0 * FD_STEP);
            let num = num * spec.grad_scale;
            let ana = analytic[ti][ei];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }

    Ok(CheckReport {
        name: spec.name.clone(),
        max_rel_err: max_rel,
        checked_elems: checked,
        pass: max_rel <= FD_TOL,
    })
}

/// The full verification suite over primitives and composite blocks, all at
/// small randomized shapes (tensors no larger than 8 x 16).
pub fn suite() -> Vec<CheckSpec> {
    let mut specs: Vec<CheckSpec> = Vec::new();

    specs.push(CheckSpec::new(
        "matmul",
        vec![vec![3, 4], vec![4, 2]],
        |_g, x| weighted_sum(&x[0].matmul(&x[1])?),
    ));
    specs.push(CheckSpec::new(
        "matmul_tb",
        vec![vec![3, 4], vec![2, 4]],
        |_g, x| weighted_sum(&x[0].matmul_tb(&x[1])?),
    ));
    specs.push(CheckSpec::new("transpose", vec![vec![3, 5]], |_g, x| {
        weighted_sum(&x[0].transpose()?)
    }));
    specs.push(CheckSpec::new(
        "add",
        vec![vec![4, 3], vec![4, 3]],
        |_g, x| weighted_sum(&x[0].add(&x[1])?),
    ));
    specs.push(CheckSpec::new(
        "sub",
        vec![vec![4, 3], vec![4, 3]],
        |_g, x| weighted_sum(&x[0].sub(&x[1])?),
    ));
    specs.push(CheckSpec::new(
        "mul",
        vec![vec![4, 3], vec![4, 3]],
        |_g, x| weighted_sum(&x[0].mul(&x[1])?),
    ));
    specs.push(CheckSpec::new("scale", vec![vec![6]], |_g, x| {
        weighted_sum(&x[0].scale(-1.75))
    }));
    specs.push(CheckSpec::new(
        "add_bias",
        vec![vec![4, 3], vec![3]],
        |_g, x| weighted_sum(&x[0].add_bias(&x[1])?),
    ));
    specs.push(
        CheckSpec::new("relu", vec![vec![4, 4]], |_g, x| weighted_sum(&x[0].relu()))
            .offset(1.3),
    );
    specs.push(CheckSpec::new("sigmoid", vec![vec![4, 4]], |_g, x| {
        weighted_sum(&x[0].sigmoid())
    }));
    specs.push(CheckSpec::new("softplus", vec![vec![4, 4]], |_g, x| {
        weighted_sum(&x[0].softplus())
    }));
    specs.push(
        CheckSpec::new("log", vec![vec![4, 4]], |_g, x| weighted_sum(&x[0].log()))
            .offset(2.0),
    );
    specs.push(
        CheckSpec::new("abs", vec![vec![4, 4]], |_g, x| weighted_sum(&x[0].abs()))
            .offset(1.3),
    );
    specs.push(CheckSpec::new("softmax_rows", vec![vec![3, 5]], |_g, x| {
        weighted_sum(&x[0].softmax_rows()?)
    }));
    specs.push(CheckSpec::new("mean_all", vec![vec![4, 4]], |_g, x| {
        Ok(x[0].mean_all())
    }));
    specs.push(CheckSpec::new("sum_all", vec![vec![4, 4]], |_g, x| {
        Ok(x[0].sum_all())
    }));
    specs.push(CheckSpec::new("mean_rows", vec![vec![5, 3]], |_g, x| {
        weighted_sum(&x[0].mean_rows()?)
    }));
    specs.push(CheckSpec::new(
        "concat_cols",
        vec![vec![4, 3], vec![4, 2]],
        |_g, x| weighted_sum(&x[0].concat_cols(&x[1])?),
    ));
    specs.push(CheckSpec::new("slice_rows", vec![vec![6, 3]], |_g, x| {
        weighted_sum(&x[0].slice_rows(1, 3)?)
    }));
    specs.push(CheckSpec::new("slice_cols", vec![vec![4, 6]], |_g, x| {
        weighted_sum(&x[0].slice_cols(2, 3)?)
    }));
    specs.push(CheckSpec::new("repeat_row", vec![vec![5]], |_g, x| {
        weighted_sum(&x[0].repeat_row(4)?)
    }));
    specs.push(CheckSpec::new("expand_rows", vec![vec![2, 3]], |_g, x| {
        weighted_sum(&x[0].expand_rows(&[2, 3])?)
    }));
    specs.push(CheckSpec::new("zero_pad_rows", vec![vec![2, 3]], |_g, x| {
        weighted_sum(&x[0].zero_pad_rows(4)?)
    }));
    specs.push(CheckSpec::new(
        "embedding_lookup",
        vec![vec![5, 4]],
        |_g, x| weighted_sum(&x[0].embed(&[0, 3, 3, 1], "test")?),
    ));
    specs.push(
        CheckSpec::new("dropout", vec![vec![8, 8]], |_g, x| {
            weighted_sum(&x[0].dropout(0.5)?)
        })
        .train(),
    );
    specs.push(
        CheckSpec::new("gradient_reversal", vec![vec![4, 4]], |_g, x| {
            weighted_sum(&x[0].gradient_reversal(0.7)?)
        })
        .scaled(-0.7),
    );
    specs.push(CheckSpec::new(
        "conv1d",
        vec![vec![2, 6], vec![3, 2, 3]],
        |_g, x| weighted_sum(&conv1d(&x[0], &x[1])?),
    ));
    specs.push(CheckSpec::new(
        "conv1d_weight",
        vec![vec![6, 2], vec![2, 2, 3]],
        |_g, x| weighted_sum(&x[0].conv1d_tc(&x[1])?),
    ));
    specs.push(CheckSpec::new("bce_with_logits", vec![vec![5]], |_g, x| {
        Ok(x[0].bce_with_logits(&[1.0, 0.0, 1.0, 1.0, 0.0])?.mean_all())
    }));

    // Composite blocks at reduced widths.
    specs.push(CheckSpec::new("glu_block", vec![vec![8, 4]], |g, x| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let block = GluBlock::<f64>::new("gc", 4, 3, 0.0, &mut rng);
        weighted_sum(&block.forward(g, &x[0])?)
    }));
    specs.push(CheckSpec::new("self_attention", vec![vec![3, 6]], |g, x| {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let attn = SelfAttention::<f64>::new("ac", 6, 0.0, &mut rng);
        weighted_sum(&attn.forward(g, &x[0])?)
    }));
    specs.push(CheckSpec::new("encoder", vec![vec![4, 8]], |g, x| {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = EncoderConfig {
            input_dim: 8,
            hidden1: 6,
            glu_channels: 4,
            output_dim: 8,
            kernel: 3,
            glu_blocks: 1,
            dropout: 0.0,
        };
        let enc = Encoder::<f64>::with_config("ec", cfg, &mut rng);
        weighted_sum(&enc.forward(g, &x[0])?)
    }));
    specs.push(CheckSpec::new("decoder", vec![vec![3, 6]], |g, x| {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cfg = DecoderConfig {
            layers: 2,
            channels: 6,
            output_dim: 5,
            kernel: 3,
            dropout: 0.0,
            ..DecoderConfig::default()
        };
        let dec = Decoder::<f64>::with_config("dc", cfg, &mut rng);
        weighted_sum(&dec.forward(g, &x[0])?)
    }));
    specs.push(CheckSpec::new(
        "singer_classifier",
        vec![vec![4, 6]],
        |g, x| {
            let mut rng = ChaCha8Rng::seed_from_u64(15);
            let mut clf = SingerClassifier::<f64>::with_dims("cc", 6, 5, 3, 3, &mut rng);
            let probs = clf.forward(g, &x[0], 1.0, SnUpdate::Freeze)?;
            weighted_sum(&probs.shift_scalar(1e-3).log())
        },
    ));
    specs.push(CheckSpec::new("urwd", vec![vec![4, 6]], |g, x| {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let cfg = RwdConfig {
            feature_dim: 6,
            condition_dim: 5,
            channels: vec![4, 6, 8, 1],
            kernels: vec![3, 3, 3, 1],
            ..RwdConfig::default()
        };
        let mut d = Discriminator::<f64>::new("ud", RwdKind::Unconditional, 4, &cfg, &mut rng);
        d.forward(g, &x[0], None, SnUpdate::Freeze)
    }));
    specs.push(CheckSpec::new(
        "crwd",
        vec![vec![4, 6], vec![4, 5]],
        |g, x| {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let cfg = RwdConfig {
                feature_dim: 6,
                condition_dim: 5,
                channels: vec![4, 6, 8, 1],
                kernels: vec![3, 3, 3, 1],
                ..RwdConfig::default()
            };
            let mut d = Discriminator::<f64>::new("cd", RwdKind::Conditional, 4, &cfg, &mut rng);
            d.forward(g, &x[0], Some(&x[1]), SnUpdate::Freeze)
        },
    ));

    specs
}

/// Deterministic pseudo-random weighted sum, turning any tensor into a
/// scalar objective with non-uniform sensitivities.
fn weighted_sum(t: &Tensor<f64>) -> Result<Tensor<f64>> {
    let n = t.numel();
    let mut w = Vec::with_capacity(n);
    let mut s = 0.6f64;
    for _ in 0..n {
        s = (s * 97.31 + 0.17).fract();
        w.push(s + 0.25);
    }
    let flat = t.reshape(&[n])?;
    let wt = flat.graph().leaf(w, &[n])?;
    Ok(flat.mul(&wt)?.sum_all())
}

/// Run the whole suite; returns reports in order.
pub fn run_suite(seed: u64) -> Result<Vec<CheckReport>> {
    suite().iter().map(|s| run_check(s, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_pass_finite_difference() {
        for spec in suite() {
            // Composite blocks are exercised by the acceptance suite; keep
            // the unit run to primitives for speed.
            if matches!(
                spec.name.as_str(),
                "encoder" | "decoder" | "singer_classifier" | "urwd" | "crwd"
            ) {
                continue;
            }
            let rep = run_check(&spec, 42).unwrap();
            assert!(rep.pass, "{rep}");
        }
    }
}
