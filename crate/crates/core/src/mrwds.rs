//! Multiple random window discriminators: two unconditional and two
//! conditional discriminators scoring randomly placed 2- and 4-frame windows
//! of the acoustic features; the four scalar outputs are summed into the
//! final verdict.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::layers::{SnConv1d, SnUpdate};
use crate::param::Parameter;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RwdKind {
    Unconditional,
    Conditional,
}

/// Ensemble layout. The production preset is windows {2, 4}, channel plan
/// [64, 128, 256, 1] with kernels [3, 3, 3, 1], 66-dimensional features and
/// a 448-dimensional condition injected before the last convolution.
#[derive(Debug, Clone)]
pub struct RwdConfig {
    pub window_sizes: Vec<usize>,
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub feature_dim: usize,
    pub condition_dim: usize,
}

impl Default for RwdConfig {
    fn default() -> Self {
        RwdConfig {
            window_sizes: vec![2, 4],
            channels: vec![64, 128, 256, 1],
            kernels: vec![3, 3, 3, 1],
            feature_dim: crate::decoder::FEATURE_DIM,
            condition_dim: 448,
        }
    }
}

/// One random-window discriminator: a stack of spectral-normalized
/// convolutions with ReLU activations; the conditional variant concatenates
/// the condition channel-wise before its final convolution.
#[derive(Debug, Clone)]
pub struct Discriminator<T: Real> {
    pub kind: RwdKind,
    pub window: usize,
    layers: Vec<SnConv1d<T>>,
    condition_dim: usize,
}

impl<T: Real> Discriminator<T> {
    pub fn new(
        name: &str,
        kind: RwdKind,
        window: usize,
        cfg: &RwdConfig,
        rng: &mut impl Rng,
    ) -> Self {
        assert_eq!(
            cfg.channels.len(),
            cfg.kernels.len(),
            "channel/kernel plans disagree"
        );
        let n = cfg.channels.len();
        let mut layers = Vec::with_capacity(n);
        let mut ch_in = cfg.feature_dim;
        for i in 0..n {
            let is_cond_layer = kind == RwdKind::Conditional && i == n - 1;
            let in_dim = if is_cond_layer {
                ch_in + cfg.condition_dim
            } else {
                ch_in
            };
            layers.push(SnConv1d::new(
                &format!("{name}.conv{i}"),
                in_dim,
                cfg.channels[i],
                cfg.kernels[i],
                rng,
            ));
            ch_in = cfg.channels[i];
        }
        Discriminator {
            kind,
            window,
            layers,
            condition_dim: cfg.condition_dim,
        }
    }

    /// Score one window. `features`: [window, feature_dim]; `condition` must
    /// be present exactly when the discriminator is conditional. The final
    /// single-channel output is mean-pooled over time into an unbounded
    /// scalar logit.
    pub fn forward(
        &mut self,
        graph: &Graph<T>,
        features: &Tensor<T>,
        condition: Option<&Tensor<T>>,
        upd: SnUpdate,
    ) -> Result<Tensor<T>> {
        match (self.kind, condition.is_some()) {
            (RwdKind::Unconditional, true) => {
                return Err(Error::Config(
                    "condition supplied to an unconditional discriminator".into(),
                ))
            }
            (RwdKind::Conditional, false) => {
                return Err(Error::Config(
                    "conditional discriminator called without a condition".into(),
                ))
            }
            _ => {}
        }
        if let Some(cond) = condition {
            if cond.shape()[0] != features.shape()[0] {
                return Err(Error::Alignment(format!(
                    "discriminator window {} frames but condition has {}",
                    features.shape()[0],
                    cond.shape()[0]
                )));
            }
            if cond.shape()[1] != self.condition_dim {
                return Err(Error::dim("run_discriminator", cond.shape(), &[0, self.condition_dim]));
            }
        }
        let n = self.layers.len();
        let mut h = features.clone();
        for i in 0..n {
            if self.kind == RwdKind::Conditional && i == n - 1 {
                h = h.concat_cols(condition.unwrap())?;
            }
            h = self.layers[i].forward(graph, &h, upd)?;
            if i < n - 1 {
                h = h.relu();
            }
        }
        Ok(h.mean_all())
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn sn_states(&self) -> Vec<(String, &crate::param::SpectralNormState<T>)> {
        self.layers
            .iter()
            .map(|l| (l.sn_name(), &l.sn))
            .collect()
    }

    pub fn sn_states_mut(&mut self) -> Vec<(String, &mut crate::param::SpectralNormState<T>)> {
        self.layers
            .iter_mut()
            .map(|l| (l.sn_name(), &mut l.sn))
            .collect()
    }

    /// (name, sigma-of-normalized-weight pairs) for spectral audits.
    pub fn normalized_weights(&self) -> Vec<(&Parameter<T>, &crate::param::SpectralNormState<T>)> {
        self.layers.iter().map(|l| (&l.conv.w, &l.sn)).collect()
    }
}

/// Uniform window start over [0, total_frames - window]. Sequences shorter
/// than the window are handled by the caller via zero padding (offset 0).
pub fn sample_window(total_frames: usize, window: usize, rng: &mut impl Rng) -> usize {
    if total_frames <= window {
        return 0;
    }
    rng.gen_range(0..=total_frames - window)
}

/// Extract rows [offset, offset+window) of a frame-major tensor, zero-padding
/// sequences shorter than the window.
pub fn window_slice<T: Real>(x: &Tensor<T>, offset: usize, window: usize) -> Result<Tensor<T>> {
    let frames = x.shape()[0];
    if frames < window {
        x.zero_pad_rows(window)?.slice_rows(0, window)
    } else {
        x.slice_rows(offset, window)
    }
}

/// Scores of the four discriminators on one sequence, their sum, and the
/// sampled window offsets (uRWD then cRWD, in window-size order).
#[derive(Debug, Clone)]
pub struct DiscriminatorVerdict<T: Real> {
    pub per_disc: Vec<T>,
    pub total: T,
    pub window_offsets: Vec<usize>,
}

/// The full ensemble: one unconditional and one conditional discriminator
/// per window size, all with independent parameters.
#[derive(Debug, Clone)]
pub struct Mrwds<T: Real> {
    pub unconditional: Vec<Discriminator<T>>,
    pub conditional: Vec<Discriminator<T>>,
    pub cfg: RwdConfig,
}

impl<T: Real> Mrwds<T> {
    pub fn new(name: &str, cfg: RwdConfig, rng: &mut impl Rng) -> Self {
        let unconditional = cfg
            .window_sizes
            .iter()
            .map(|&w| {
                Discriminator::new(&format!("{name}.u{w}"), RwdKind::Unconditional, w, &cfg, rng)
            })
            .collect();
        let conditional = cfg
            .window_sizes
            .iter()
            .map(|&w| {
                Discriminator::new(&format!("{name}.c{w}"), RwdKind::Conditional, w, &cfg, rng)
            })
            .collect();
        Mrwds {
            unconditional,
            conditional,
            cfg,
        }
    }

    /// Run all four discriminators on independently sampled windows of one
    /// sequence and sum their scores. Returns the summed logit (a graph
    /// tensor for loss construction) along with the concrete verdict.
    pub fn forward(
        &mut self,
        graph: &Graph<T>,
        features: &Tensor<T>,
        condition: &Tensor<T>,
        rng: &mut impl Rng,
        upd: SnUpdate,
    ) -> Result<(Tensor<T>, DiscriminatorVerdict<T>)> {
        let frames = features.shape()[0];
        if condition.shape()[0] != frames {
            return Err(Error::Alignment(format!(
                "features have {} frames but condition has {}",
                frames,
                condition.shape()[0]
            )));
        }
        let mut scores: Vec<Tensor<T>> = Vec::with_capacity(4);
        let mut offsets = Vec::with_capacity(4);
        for d in &mut self.unconditional {
            let off = sample_window(frames, d.window, rng);
            offsets.push(off);
            let win = window_slice(features, off, d.window)?;
            scores.push(d.forward(graph, &win, None, upd)?);
        }
        for d in &mut self.conditional {
            let off = sample_window(frames, d.window, rng);
            offsets.push(off);
            let fwin = window_slice(features, off, d.window)?;
            let cwin = window_slice(condition, off, d.window)?;
            scores.push(d.forward(graph, &fwin, Some(&cwin), upd)?);
        }
        let mut total = scores[0].clone();
        for s in &scores[1..] {
            total = total.add(s)?;
        }
        let per_disc: Vec<T> = scores.iter().map(|s| s.scalar()).collect();
        let verdict = DiscriminatorVerdict {
            total: total.scalar(),
            per_disc,
            window_offsets: offsets,
        };
        Ok((total, verdict))
    }

    pub fn discriminators(&self) -> impl Iterator<Item = &Discriminator<T>> {
        self.unconditional.iter().chain(self.conditional.iter())
    }

    pub fn discriminators_mut(&mut self) -> impl Iterator<Item = &mut Discriminator<T>> {
        self.unconditional.iter_mut().chain(self.conditional.iter_mut())
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        self.discriminators().flat_map(|d| d.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = Vec::new();
        for d in &mut self.unconditional {
            out.extend(d.params_mut());
        }
        for d in &mut self.conditional {
            out.extend(d.params_mut());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_cfg() -> RwdConfig {
        RwdConfig {
            window_sizes: vec![2, 4],
            channels: vec![4, 6, 8, 1],
            kernels: vec![3, 3, 3, 1],
            feature_dim: 5,
            condition_dim: 7,
        }
    }

    #[test]
    fn production_layout() {
        let m = Mrwds::<f64>::new("mrwds", RwdConfig::default(), &mut rng(1));
        assert_eq!(m.unconditional.len(), 2);
        assert_eq!(m.conditional.len(), 2);
        let u2 = &m.unconditional[0];
        assert_eq!(u2.window, 2);
        assert_eq!(u2.layers[0].conv.w.shape, vec![64, 66, 3]);
        assert_eq!(u2.layers[3].conv.w.shape, vec![1, 256, 1]);
        let c4 = &m.conditional[1];
        assert_eq!(c4.window, 4);
        assert_eq!(c4.layers[3].conv.w.shape, vec![1, 256 + 448, 1]);
    }

    #[test]
    fn independent_parameters() {
        let m = Mrwds::<f64>::new("mrwds", small_cfg(), &mut rng(2));
        let mut names: Vec<&str> = m.params().iter().map(|p| p.name.as_str()).collect();
        let total = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), total, "parameter names must be unique");
        // 4 discriminators x 4 layers x (w + b)
        assert_eq!(total, 4 * 4 * 2);
    }

    #[test]
    fn window_sampler_uniform() {
        // total=10, window=4: offsets in 0..=6, chi^2 over 7 bins at p>0.01.
        let mut r = rng(3);
        let mut counts = [0usize; 7];
        let draws = 10_000;
        for _ in 0..draws {
            let off = sample_window(10, 4, &mut r);
            counts[off] += 1;
        }
        let expected = draws as f64 / 7.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // chi-square critical value at alpha = 0.01, df = 6
        assert!(chi2 < 16.812, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn window_sampler_degenerate_cases() {
        let mut r = rng(4);
        assert_eq!(sample_window(4, 4, &mut r), 0);
        assert_eq!(sample_window(1, 2, &mut r), 0);
    }

    #[test]
    fn short_sequence_zero_padded() {
        let g = Graph::<f64>::eval();
        let x = g.leaf(vec![1.0, 2.0, 3.0], &[1, 3]).unwrap();
        let w = window_slice(&x, 0, 2).unwrap();
        assert_eq!(w.shape(), &[2, 3]);
        assert_eq!(w.value(), vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn scalar_output_and_zero_weight_bias_passthrough() {
        let cfg = small_cfg();
        let mut d = Discriminator::<f64>::new("d", RwdKind::Unconditional, 4, &cfg, &mut rng(5));
        let g = Graph::<f64>::eval();
        let x = g.leaf(vec![0.3; 4 * 5], &[4, 5]).unwrap();
        let s = d.forward(&g, &x, None, SnUpdate::Freeze).unwrap();
        assert_eq!(s.numel(), 1);

        // zero weights: score equals the final bias constant
        for p in d.params_mut() {
            if p.name.ends_with(".w") {
                for v in p.data.iter_mut() {
                    *v = 0.0;
                }
            }
        }
        for p in d.params_mut() {
            if p.name == "d.conv3.b" {
                p.data[0] = 0.625;
            }
        }
        let s = d.forward(&g, &x, None, SnUpdate::Freeze).unwrap();
        assert_eq!(s.scalar(), 0.625);
    }

    #[test]
    fn condition_to_unconditional_rejected() {
        let cfg = small_cfg();
        let mut d = Discriminator::<f64>::new("d", RwdKind::Unconditional, 2, &cfg, &mut rng(6));
        let g = Graph::<f64>::eval();
        let x = g.leaf(vec![0.0; 2 * 5], &[2, 5]).unwrap();
        let c = g.leaf(vec![0.0; 2 * 7], &[2, 7]).unwrap();
        assert!(matches!(
            d.forward(&g, &x, Some(&c), SnUpdate::Freeze),
            Err(Error::Config(_))
        ));
        let mut dc = Discriminator::<f64>::new("dc", RwdKind::Conditional, 2, &cfg, &mut rng(7));
        assert!(matches!(
            dc.forward(&g, &x, None, SnUpdate::Freeze),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ensemble_total_is_exact_sum_and_deterministic() {
        let cfg = small_cfg();
        let mut m = Mrwds::<f64>::new("m", cfg, &mut rng(8));
        let g = Graph::<f64>::eval();
        let feats = g
            .leaf((0..6 * 5).map(|i| (i as f64 * 0.13).sin()).collect(), &[6, 5])
            .unwrap();
        let cond = g
            .leaf((0..6 * 7).map(|i| (i as f64 * 0.07).cos()).collect(), &[6, 7])
            .unwrap();
        let (_, v1) = m.forward(&g, &feats, &cond, &mut rng(99), SnUpdate::Freeze).unwrap();
        let (_, v2) = m.forward(&g, &feats, &cond, &mut rng(99), SnUpdate::Freeze).unwrap();
        let fold: f64 = v1.per_disc.iter().fold(0.0, |a, &b| a + b);
        assert_eq!(v1.total, fold);
        assert_eq!(v1.total, v2.total);
        assert_eq!(v1.window_offsets, v2.window_offsets);
        assert_eq!(v1.per_disc.len(), 4);
    }

    #[test]
    fn unconditional_scores_ignore_condition() {
        let cfg = small_cfg();
        let mut m = Mrwds::<f64>::new("m", cfg, &mut rng(9));
        let g = Graph::<f64>::eval();
        let feats = g
            .leaf((0..6 * 5).map(|i| (i as f64 * 0.13).sin()).collect(), &[6, 5])
            .unwrap();
        let cond_a = g.leaf(vec![0.0; 6 * 7], &[6, 7]).unwrap();
        let cond_b = g.leaf(vec![9.0; 6 * 7], &[6, 7]).unwrap();
        let (_, va) = m.forward(&g, &feats, &cond_a, &mut rng(5), SnUpdate::Freeze).unwrap();
        let (_, vb) = m.forward(&g, &feats, &cond_b, &mut rng(5), SnUpdate::Freeze).unwrap();
        assert_eq!(va.per_disc[0], vb.per_disc[0]);
        assert_eq!(va.per_disc[1], vb.per_disc[1]);
        assert_ne!(va.per_disc[2], vb.per_disc[2]);
    }

    #[test]
    fn frame_misalignment_rejected() {
        let cfg = small_cfg();
        let mut m = Mrwds::<f64>::new("m", cfg, &mut rng(10));
        let g = Graph::<f64>::eval();
        let feats = g.leaf(vec![0.0; 6 * 5], &[6, 5]).unwrap();
        let cond = g.leaf(vec![0.0; 5 * 7], &[5, 7]).unwrap();
        assert!(matches!(
            m.forward(&g, &feats, &cond, &mut rng(0), SnUpdate::Freeze),
            Err(Error::Alignment(_))
        ));
    }
}
