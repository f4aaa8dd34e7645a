//! Score encoder: two linear layers, a GLU block and a final linear layer,
//! producing the 384-dimensional score encoding consumed by the length
//! regulator and the singer classifier.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::layers::{GluBlock, Linear};
use crate::param::Parameter;
use crate::real::Real;

/// Layer widths. The production preset is 384/256, 256/64, 64/384 with a
/// single GLU block at 64 channels and kernel 3; reduced widths exist for
/// the finite-difference verification suite.
#[derive(Debug, Clone, Copy)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden1: usize,
    pub glu_channels: usize,
    pub output_dim: usize,
    pub kernel: usize,
    pub glu_blocks: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 384,
            hidden1: 256,
            glu_channels: 64,
            output_dim: 384,
            kernel: 3,
            glu_blocks: 1,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoder<T: Real> {
    pub linear1: Linear<T>,
    pub linear2: Linear<T>,
    pub glu: Vec<GluBlock<T>>,
    pub linear3: Linear<T>,
    cfg: EncoderConfig,
}

impl<T: Real> Encoder<T> {
    pub fn new(name: &str, dropout: f64, rng: &mut impl Rng) -> Self {
        Encoder::with_config(
            name,
            EncoderConfig {
                dropout,
                ..EncoderConfig::default()
            },
            rng,
        )
    }

    pub fn with_config(name: &str, cfg: EncoderConfig, rng: &mut impl Rng) -> Self {
        let glu = (0..cfg.glu_blocks)
            .map(|i| {
                GluBlock::new(
                    &format!("{name}.glu{i}"),
                    cfg.glu_channels,
                    cfg.kernel,
                    cfg.dropout,
                    rng,
                )
            })
            .collect();
        Encoder {
            linear1: Linear::new(&format!("{name}.linear1"), cfg.input_dim, cfg.hidden1, rng),
            linear2: Linear::new(&format!("{name}.linear2"), cfg.hidden1, cfg.glu_channels, rng),
            glu,
            linear3: Linear::new(&format!("{name}.linear3"), cfg.glu_channels, cfg.output_dim, rng),
            cfg,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// x: [len, input_dim] -> score encoding [len, output_dim].
    pub fn forward(&self, graph: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().len() != 2 || x.shape()[1] != self.cfg.input_dim {
            return Err(Error::dim("encode", x.shape(), &[0, self.cfg.input_dim]));
        }
        let mut h = self.linear1.forward(graph, x)?;
        h = self.linear2.forward(graph, &h)?;
        for block in &self.glu {
            h = block.forward(graph, &h)?;
        }
        self.linear3.forward(graph, &h)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut p = self.linear1.params();
        p.extend(self.linear2.params());
        for b in &self.glu {
            p.extend(b.params());
        }
        p.extend(self.linear3.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.linear1.params_mut();
        p.extend(self.linear2.params_mut());
        for b in &mut self.glu {
            p.extend(b.params_mut());
        }
        p.extend(self.linear3.params_mut());
        p
    }
}
