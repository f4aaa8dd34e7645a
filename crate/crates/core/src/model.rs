//! The generator: embedding tables, encoder, length regulator and decoder
//! wired into one forward pass from score to acoustic features.

use rand::Rng;

use crate::decoder::{Decoder, FEATURE_DIM, VUV_INDEX};
use crate::encoder::Encoder;
use crate::error::Result;
use crate::graph::{Graph, Tensor};
use crate::length_regulator::{assemble_decoder_input, condition_sequence, expand, FrameAlignment};
use crate::param::Parameter;
use crate::real::Real;
use crate::score::{encode_score_input, lookup_singer, EmbeddingTables, ScoreSequence};

/// Frame-level acoustic features as plain data (row-major [frames, 66]).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrameSequence {
    pub frames: usize,
    pub data: Vec<f64>,
}

impl FeatureFrameSequence {
    pub fn new(frames: usize, data: Vec<f64>) -> Self {
        assert_eq!(frames * FEATURE_DIM, data.len());
        FeatureFrameSequence { frames, data }
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * FEATURE_DIM..(t + 1) * FEATURE_DIM]
    }

    pub fn mgc(&self, t: usize) -> &[f64] {
        &self.frame(t)[..crate::decoder::MGC_DIM]
    }

    pub fn bap(&self, t: usize) -> &[f64] {
        &self.frame(t)[crate::decoder::MGC_DIM..crate::decoder::MGC_DIM + crate::decoder::BAP_DIM]
    }

    pub fn vuv_logit(&self, t: usize) -> f64 {
        self.frame(t)[VUV_INDEX]
    }

    pub fn vuv_flag(&self, t: usize) -> bool {
        sigmoid(self.vuv_logit(t)) > 0.5
    }

    pub fn to_scalars<T: Real>(&self) -> Vec<T> {
        self.data.iter().map(|&v| T::from_f64(v)).collect()
    }

    pub fn from_scalars<T: Real>(values: &[T]) -> Self {
        let frames = values.len() / FEATURE_DIM;
        FeatureFrameSequence::new(frames, values.iter().map(|v| v.as_f64()).collect())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hyperparameters the generator is built from.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub n_singers: usize,
    pub dropout: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_singers: 7,
            dropout: 0.1,
        }
    }
}

/// Intermediate tensors of one generator forward pass.
pub struct GeneratorForward<T: Real> {
    /// Phoneme-level score encoding E(x): [len, 384].
    pub encoding: Tensor<T>,
    /// Frame-level concat(expanded encoding, singer embedding): [T, 448].
    pub condition: Tensor<T>,
    /// Predicted features G(x): [T, 66].
    pub features: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Generator<T: Real> {
    pub tables: EmbeddingTables<T>,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
    pub cfg: GeneratorConfig,
}

impl<T: Real> Generator<T> {
    pub fn new(cfg: GeneratorConfig, rng: &mut impl Rng) -> Self {
        Generator {
            tables: EmbeddingTables::new(cfg.n_singers, rng),
            encoder: Encoder::new("encoder", cfg.dropout, rng),
            decoder: Decoder::new("decoder", cfg.dropout, rng),
            cfg,
        }
    }

    /// Phoneme-level score encoding E(x).
    pub fn score_encoding(&self, graph: &Graph<T>, seq: &ScoreSequence) -> Result<Tensor<T>> {
        let embedded = encode_score_input(graph, seq, &self.tables)?;
        self.encoder.forward(graph, &embedded)
    }

    /// Full forward pass: score -> encoding -> frame expansion -> decoder.
    pub fn forward(&self, graph: &Graph<T>, seq: &ScoreSequence) -> Result<GeneratorForward<T>> {
        let encoding = self.score_encoding(graph, seq)?;
        let align = FrameAlignment::new(seq.durations.clone())?;
        let expanded = expand(&encoding, &align)?;
        let singer = lookup_singer(graph, seq.singer_id, &self.tables)?;
        let condition = condition_sequence(&expanded, &singer)?;
        let decoder_input = assemble_decoder_input(&expanded, &singer)?;
        let features = self.decoder.forward(graph, &decoder_input)?;
        Ok(GeneratorForward {
            encoding,
            condition,
            features,
        })
    }

    /// Eval-mode synthesis: deterministic forward, VUV thresholded at 0.5
    /// (the stored VUV channel becomes exactly 0 or 1).
    pub fn synthesize(&self, seq: &ScoreSequence) -> Result<FeatureFrameSequence> {
        let graph = Graph::<T>::eval();
        let fwd = self.forward(&graph, seq)?;
        let mut out = FeatureFrameSequence::from_scalars(&fwd.features.value());
        for t in 0..out.frames {
            let flag = out.vuv_flag(t);
            out.data[t * FEATURE_DIM + VUV_INDEX] = if flag { 1.0 } else { 0.0 };
        }
        debug_assert_eq!(out.frames, seq.total_frames());
        Ok(out)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut p = self.tables.params();
        p.extend(self.encoder.params());
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.tables.params_mut();
        p.extend(self.encoder.params_mut());
        p.extend(self.decoder.params_mut());
        p
    }
}

/// Bitwise-sensitive digest of a parameter set, for alternation audits.
pub fn params_checksum<T: Real>(params: &[&Parameter<T>]) -> u64 {
    let mut h = 0xcbf29ce484222325u64; // FNV-1a
    for p in params {
        for b in p.name.as_bytes() {
            h = (h ^ *b as u64).wrapping_mul(0x100000001b3);
        }
        for v in &p.data {
            for b in v.as_f64().to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100000001b3);
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_generator() -> Generator<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        Generator::new(
            GeneratorConfig {
                n_singers: 3,
                dropout: 0.0,
            },
            &mut rng,
        )
    }

    fn seq() -> ScoreSequence {
        ScoreSequence::new(vec![2, 5, 9], vec![40, 42, 44], vec![2, 1, 3], 1).unwrap()
    }

    #[test]
    fn forward_produces_frame_aligned_features() {
        let gen = small_generator();
        let g = Graph::<f64>::eval();
        let fwd = gen.forward(&g, &seq()).unwrap();
        assert_eq!(fwd.encoding.shape(), &[3, 384]);
        assert_eq!(fwd.condition.shape(), &[6, 448]);
        assert_eq!(fwd.features.shape(), &[6, 66]);
    }

    #[test]
    fn synthesize_deterministic_and_thresholded() {
        let gen = small_generator();
        let a = gen.synthesize(&seq()).unwrap();
        let b = gen.synthesize(&seq()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frames, seq().total_frames());
        for t in 0..a.frames {
            let v = a.frame(t)[VUV_INDEX];
            assert!(v == 0.0 || v == 1.0);
        }
    }

    #[test]
    fn synthesize_unknown_singer_rejected() {
        let gen = small_generator();
        let s = ScoreSequence::new(vec![0], vec![0], vec![1], 9).unwrap();
        assert!(matches!(
            gen.synthesize(&s),
            Err(crate::Error::Vocab { index: 9, size: 3, .. })
        ));
    }

    #[test]
    fn end_to_end_gradient_sparsity_over_phonemes() {
        let gen = small_generator();
        let g = Graph::<f64>::eval();
        let fwd = gen.forward(&g, &seq()).unwrap();
        g.backward(&fwd.features.sum_all()).unwrap();
        let grad = g.param_grad(&gen.tables.phoneme).unwrap();
        let used = [2usize, 5, 9];
        for row in 0..crate::score::PHONEME_VOCAB {
            let nz = grad[row * 384..(row + 1) * 384].iter().any(|&v| v != 0.0);
            assert_eq!(nz, used.contains(&row), "phoneme row {row}");
        }
    }

    #[test]
    fn checksum_changes_with_data() {
        let mut gen = small_generator();
        let before = params_checksum(&gen.params());
        gen.tables.phoneme.data[0] += 1.0;
        let after = params_checksum(&gen.params());
        assert_ne!(before, after);
    }
}
