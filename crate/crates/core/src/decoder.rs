//! Feed-forward decoder: six layers of single-head self-attention plus a GLU
//! sub-layer at 448 channels, then a linear map to the 66-dimensional
//! acoustic feature vector (60 MGC + 5 BAP + 1 VUV logit).

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::layers::{GluBlock, Linear};
use crate::param::Parameter;
use crate::real::{real, Real};

pub const MGC_DIM: usize = 60;
pub const BAP_DIM: usize = 5;
pub const VUV_DIM: usize = 1;
pub const FEATURE_DIM: usize = MGC_DIM + BAP_DIM + VUV_DIM;
pub const MGC_RANGE: std::ops::Range<usize> = 0..MGC_DIM;
pub const BAP_RANGE: std::ops::Range<usize> = MGC_DIM..MGC_DIM + BAP_DIM;
pub const VUV_INDEX: usize = MGC_DIM + BAP_DIM;

/// Unmasked single-head self-attention with a residual connection.
#[derive(Debug, Clone)]
pub struct SelfAttention<T: Real> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    pub dropout: T,
    channels: usize,
}

impl<T: Real> SelfAttention<T> {
    pub fn new(name: &str, channels: usize, dropout: f64, rng: &mut impl Rng) -> Self {
        SelfAttention {
            wq: Linear::new(&format!("{name}.wq"), channels, channels, rng),
            wk: Linear::new(&format!("{name}.wk"), channels, channels, rng),
            wv: Linear::new(&format!("{name}.wv"), channels, channels, rng),
            // near-identity at init, matching the GLU branch gain
            wo: Linear::with_gain(&format!("{name}.wo"), channels, channels, 0.25, rng),
            dropout: real::<T>(dropout),
            channels,
        }
    }

    /// x: [frames, channels] -> [frames, channels]; full bidirectional
    /// attention (the decoder generates all frames in parallel).
    pub fn forward(&self, graph: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let weights = self.attention_weights(graph, x)?;
        self.apply(graph, x, &weights)
    }

    /// Row-stochastic attention matrix softmax(QK^T / sqrt(d)).
    pub fn attention_weights(&self, graph: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().len() != 2 || x.shape()[1] != self.channels {
            return Err(Error::dim("self_attention", x.shape(), &[0, self.channels]));
        }
        let q = self.wq.forward(graph, x)?;
        let k = self.wk.forward(graph, x)?;
        let scale = T::one() / real::<T>((self.channels as f64).sqrt());
        q.matmul_tb(&k)?.scale(scale).softmax_rows()
    }

    fn apply(&self, graph: &Graph<T>, x: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
        let v = self.wv.forward(graph, x)?;
        let mixed = weights.matmul(&v)?;
        let o = self.wo.forward(graph, &mixed)?.dropout(self.dropout)?;
        o.add(x)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut p = self.wq.params();
        p.extend(self.wk.params());
        p.extend(self.wv.params());
        p.extend(self.wo.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.wq.params_mut();
        p.extend(self.wk.params_mut());
        p.extend(self.wv.params_mut());
        p.extend(self.wo.params_mut());
        p
    }
}

/// Order of the two sub-layers within one decoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SublayerOrder {
    #[default]
    AttentionFirst,
    GluFirst,
}

#[derive(Debug, Clone)]
pub struct DecoderConfig {
    pub layers: usize,
    pub channels: usize,
    pub output_dim: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub order: SublayerOrder,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            layers: 6,
            channels: 448,
            output_dim: FEATURE_DIM,
            kernel: 3,
            dropout: 0.1,
            order: SublayerOrder::AttentionFirst,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayer<T: Real> {
    pub attention: SelfAttention<T>,
    pub glu: GluBlock<T>,
}

#[derive(Debug, Clone)]
pub struct Decoder<T: Real> {
    pub layers: Vec<DecoderLayer<T>>,
    pub out_linear: Linear<T>,
    cfg: DecoderConfig,
}

impl<T: Real> Decoder<T> {
    pub fn new(name: &str, dropout: f64, rng: &mut impl Rng) -> Self {
        Decoder::with_config(
            name,
            DecoderConfig {
                dropout,
                ..DecoderConfig::default()
            },
            rng,
        )
    }

    pub fn with_config(name: &str, cfg: DecoderConfig, rng: &mut impl Rng) -> Self {
        let layers = (0..cfg.layers)
            .map(|i| DecoderLayer {
                attention: SelfAttention::new(
                    &format!("{name}.layer{i}.attn"),
                    cfg.channels,
                    cfg.dropout,
                    rng,
                ),
                glu: GluBlock::new(
                    &format!("{name}.layer{i}.glu"),
                    cfg.channels,
                    cfg.kernel,
                    cfg.dropout,
                    rng,
                ),
            })
            .collect();
        Decoder {
            layers,
            out_linear: Linear::new(&format!("{name}.out"), cfg.channels, cfg.output_dim, rng),
            cfg,
        }
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// decoder_input: [frames, channels] -> features [frames, output_dim].
    pub fn forward(&self, graph: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().len() != 2 || x.shape()[1] != self.cfg.channels {
            return Err(Error::dim("decode", x.shape(), &[0, self.cfg.channels]));
        }
        let mut h = x.clone();
        for layer in &self.layers {
            match self.cfg.order {
                SublayerOrder::AttentionFirst => {
                    h = layer.attention.forward(graph, &h)?;
                    h = layer.glu.forward(graph, &h)?;
                }
                SublayerOrder::GluFirst => {
                    h = layer.glu.forward(graph, &h)?;
                    h = layer.attention.forward(graph, &h)?;
                }
            }
        }
        self.out_linear.forward(graph, &h)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut p = Vec::new();
        for l in &self.layers {
            p.extend(l.attention.params());
            p.extend(l.glu.params());
        }
        p.extend(self.out_linear.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = Vec::new();
        for l in &mut self.layers {
            p.extend(l.attention.params_mut());
            p.extend(l.glu.params_mut());
        }
        p.extend(self.out_linear.params_mut());
        p
    }
}

/// Split a [frames, 66] feature tensor into (mgc, bap, vuv_logits).
pub fn split_features<T: Real>(
    features: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if features.shape().len() != 2 || features.shape()[1] != FEATURE_DIM {
        return Err(Error::dim("split_features", features.shape(), &[0, FEATURE_DIM]));
    }
    let mgc = features.slice_cols(MGC_RANGE.start, MGC_DIM)?;
    let bap = features.slice_cols(BAP_RANGE.start, BAP_DIM)?;
    let vuv = features.slice_cols(VUV_INDEX, VUV_DIM)?;
    Ok((mgc, bap, vuv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn default_shapes_match_preset() {
        let dec = Decoder::<f64>::new("decoder", 0.0, &mut rng(1));
        assert_eq!(dec.layers.len(), 6);
        for l in &dec.layers {
            assert_eq!(l.attention.wq.w.shape, vec![448, 448]);
            assert_eq!(l.glu.conv_a.w.shape, vec![448, 448, 3]);
        }
        assert_eq!(dec.out_linear.w.shape, vec![448, 66]);
    }

    #[test]
    fn attention_single_frame_weight_is_one() {
        let attn = SelfAttention::<f64>::new("a", 8, 0.0, &mut rng(2));
        let g = Graph::<f64>::eval();
        let x = g.leaf(vec![0.3; 8], &[1, 8]).unwrap();
        let w = attn.attention_weights(&g, &x).unwrap();
        assert_eq!(w.value(), vec![1.0]);
        // output = V projection + residual
        let y = attn.forward(&g, &x).unwrap().value();
        let v = attn.wv.forward(&g, &x).unwrap();
        let vo = attn.wo.forward(&g, &v).unwrap().value();
        for i in 0..8 {
            assert!((y[i] - (vo[i] + 0.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let attn = SelfAttention::<f64>::new("a", 8, 0.0, &mut rng(3));
        let g = Graph::<f64>::eval();
        let x = g
            .leaf((0..5 * 8).map(|i| (i as f64 * 0.37).sin()).collect(), &[5, 8])
            .unwrap();
        let w = attn.attention_weights(&g, &x).unwrap().value();
        for r in 0..5 {
            let s: f64 = w[r * 5..(r + 1) * 5].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn decode_shape_and_frame_count() {
        let cfg = DecoderConfig {
            layers: 2,
            channels: 16,
            output_dim: FEATURE_DIM,
            kernel: 3,
            dropout: 0.0,
            order: SublayerOrder::AttentionFirst,
        };
        let dec = Decoder::<f64>::with_config("d", cfg, &mut rng(4));
        let g = Graph::<f64>::eval();
        for t in [1usize, 4, 9] {
            let x = g.leaf(vec![0.1; t * 16], &[t, 16]).unwrap();
            let y = dec.forward(&g, &x).unwrap();
            assert_eq!(y.shape(), &[t, 66]);
        }
    }

    #[test]
    fn non_causal_perturbation_reaches_earlier_frames() {
        // Changing a late input frame must change earlier output frames.
        let cfg = DecoderConfig {
            layers: 1,
            channels: 8,
            output_dim: 4,
            kernel: 3,
            dropout: 0.0,
            order: SublayerOrder::AttentionFirst,
        };
        let dec = Decoder::<f64>::with_config("d", cfg, &mut rng(5));
        let g = Graph::<f64>::eval();
        let base: Vec<f64> = (0..6 * 8).map(|i| (i as f64 * 0.21).cos()).collect();
        let mut pert = base.clone();
        pert[5 * 8] += 1.0; // frame 5, channel 0
        let y0 = dec
            .forward(&g, &g.leaf(base, &[6, 8]).unwrap())
            .unwrap()
            .value();
        let y1 = dec
            .forward(&g, &g.leaf(pert, &[6, 8]).unwrap())
            .unwrap()
            .value();
        let early_changed = (0..4 * 5).any(|i| (y0[i] - y1[i]).abs() > 1e-12);
        assert!(early_changed, "decoder should be non-causal");
    }

    #[test]
    fn feature_split_indices_stable() {
        let g = Graph::<f64>::eval();
        let data: Vec<f64> = (0..2 * 66).map(|i| i as f64).collect();
        let f = g.leaf(data, &[2, 66]).unwrap();
        let (mgc, bap, vuv) = split_features(&f).unwrap();
        assert_eq!(mgc.shape(), &[2, 60]);
        assert_eq!(bap.shape(), &[2, 5]);
        assert_eq!(vuv.shape(), &[2, 1]);
        assert_eq!(mgc.value()[0], 0.0);
        assert_eq!(bap.value()[0], 60.0);
        assert_eq!(vuv.value(), vec![65.0, 131.0]);
    }
}
