//! Network building blocks shared by the encoder, decoder, classifier and
//! discriminators. Sequence activations are time-major: [frames, channels].

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::param::{spectral_normalize, Parameter, SpectralNormState};
use crate::real::{real, Real};

/// Whether a spectral-normalized forward advances the persistent power
/// iteration. One `Iterate` per training step; `Freeze` reuses the estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnUpdate {
    Iterate,
    Freeze,
}

/// Position-wise linear layer; weight stored [in, out].
#[derive(Debug, Clone)]
pub struct Linear<T: Real> {
    pub w: Parameter<T>,
    pub b: Parameter<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, dim_in: usize, dim_out: usize, rng: &mut impl Rng) -> Self {
        Linear::with_gain(name, dim_in, dim_out, 1.0, rng)
    }

    /// `gain` scales the fan-in init bound; residual-branch outputs use a
    /// small gain so every block starts close to the identity.
    pub fn with_gain(
        name: &str,
        dim_in: usize,
        dim_out: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = gain * (3.0 / dim_in as f64).sqrt();
        Linear {
            w: Parameter::uniform(format!("{name}.w"), &[dim_in, dim_out], bound, rng),
            b: Parameter::zeros(format!("{name}.b"), &[dim_out]),
        }
    }

    pub fn forward(&self, graph: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = graph.param(&self.w);
        let b = graph.param(&self.b);
        x.matmul(&w)?.add_bias(&b)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Same-padded 1-D convolution over time-major input; weight [out, in, k].
#[derive(Debug, Clone)]
pub struct Conv1d<T: Real> {
    pub w: Parameter<T>,
    pub b: Parameter<T>,
    pub kernel: usize,
}

impl<T: Real> Conv1d<T> {
    pub fn new(
        name: &str,
        ch_in: usize,
        ch_out: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Conv1d::with_gain(name, ch_in, ch_out, kernel, 1.0, rng)
    }

    pub fn with_gain(
        name: &str,
        ch_in: usize,
        ch_out: usize,
        kernel: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = gain * (3.0 / (ch_in * kernel) as f64).sqrt();
        Conv1d {
            w: Parameter::uniform(format!("{name}.w"), &[ch_out, ch_in, kernel], bound, rng),
            b: Parameter::zeros(format!("{name}.b"), &[ch_out]),
            kernel,
        }
    }

    pub fn forward(&self, graph: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = graph.param(&self.w);
        let b = graph.param(&self.b);
        x.conv1d_tc(&w)?.add_bias(&b)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Spectral-normalized convolution: the weight is divided by its estimated
/// top singular value before the convolution is applied.
#[derive(Debug, Clone)]
pub struct SnConv1d<T: Real> {
    pub conv: Conv1d<T>,
    pub sn: SpectralNormState<T>,
}

impl<T: Real> SnConv1d<T> {
    pub fn new(
        name: &str,
        ch_in: usize,
        ch_out: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let conv = Conv1d::new(name, ch_in, ch_out, kernel, rng);
        let sn = SpectralNormState::new(ch_out, rng);
        SnConv1d { conv, sn }
    }

    pub fn forward(&mut self, graph: &Graph<T>, x: &Tensor<T>, upd: SnUpdate) -> Result<Tensor<T>> {
        let w = match upd {
            SnUpdate::Iterate => spectral_normalize(graph, &self.conv.w, &mut self.sn)?,
            SnUpdate::Freeze => {
                let mut frozen = self.sn.clone();
                spectral_normalize(graph, &self.conv.w, &mut frozen)?
            }
        };
        let b = graph.param(&self.conv.b);
        x.conv1d_tc(&w)?.add_bias(&b)
    }

    /// Name under which the persistent `u` estimate is checkpointed.
    pub fn sn_name(&self) -> String {
        format!("{}.u", self.conv.w.name)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        self.conv.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.conv.params_mut()
    }
}

/// Convolutional block with gated linear units and a residual connection:
/// y = dropout(conv_a(x) * sigmoid(conv_b(x))) * residual_scale + x.
#[derive(Debug, Clone)]
pub struct GluBlock<T: Real> {
    pub conv_a: Conv1d<T>,
    pub conv_b: Conv1d<T>,
    pub residual_scale: T,
    pub dropout: T,
}

impl<T: Real> GluBlock<T> {
    pub fn new(name: &str, channels: usize, kernel: usize, dropout: f64, rng: &mut impl Rng) -> Self {
        // small gain on the gated branch keeps the block near-identity at
        // init; there is no normalization anywhere in the network
        GluBlock {
            conv_a: Conv1d::with_gain(&format!("{name}.conv_a"), channels, channels, kernel, 0.25, rng),
            conv_b: Conv1d::new(&format!("{name}.conv_b"), channels, channels, kernel, rng),
            residual_scale: real::<T>(0.5f64.sqrt()),
            dropout: real::<T>(dropout),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv_a.w.shape[1]
    }

    pub fn forward(&self, graph: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().len() != 2 || x.shape()[1] != self.channels() {
            return Err(Error::dim(
                "glu_block",
                x.shape(),
                &[self.channels(), self.conv_a.w.shape[2]],
            ));
        }
        let a = self.conv_a.forward(graph, x)?;
        let gate = self.conv_b.forward(graph, x)?.sigmoid();
        let gated = a.mul(&gate)?.dropout(self.dropout)?;
        gated.scale(self.residual_scale).add(x)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut p = self.conv_a.params();
        p.extend(self.conv_b.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.conv_a.params_mut();
        p.extend(self.conv_b.params_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn linear_shapes() {
        let mut r = rng();
        let lin = Linear::<f64>::new("l", 4, 3, &mut r);
        let g = Graph::<f64>::eval();
        let x = g.leaf(vec![0.5; 2 * 4], &[2, 4]).unwrap();
        let y = lin.forward(&g, &x).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
    }

    #[test]
    fn glu_gate_saturation_limits() {
        let mut r = rng();
        let mut block = GluBlock::<f64>::new("g", 2, 3, 0.0, &mut r);
        let g = Graph::<f64>::eval();
        let x = g.leaf(vec![0.3, -0.2, 0.1, 0.4, -0.5, 0.2], &[3, 2]).unwrap();

        // gate bias -> +inf: y -> conv_a(x) * scale + x
        for v in block.conv_b.b.data.iter_mut() {
            *v = 60.0;
        }
        let y = block.forward(&g, &x).unwrap().value();
        let a = block.conv_a.forward(&g, &x).unwrap().value();
        let xv = x.value();
        for i in 0..y.len() {
            let expect = a[i] * 0.5f64.sqrt() + xv[i];
            assert!((y[i] - expect).abs() < 1e-9, "open gate mismatch at {i}");
        }

        // gate bias -> -inf: y -> x (closed gate, pure residual)
        for v in block.conv_b.b.data.iter_mut() {
            *v = -60.0;
        }
        let y = block.forward(&g, &x).unwrap().value();
        for i in 0..y.len() {
            assert!((y[i] - xv[i]).abs() < 1e-9, "closed gate mismatch at {i}");
        }
    }

    #[test]
    fn glu_channel_mismatch() {
        let mut r = rng();
        let block = GluBlock::<f64>::new("g", 4, 3, 0.0, &mut r);
        let g = Graph::<f64>::eval();
        let x = g.leaf(vec![0.0; 6], &[3, 2]).unwrap();
        assert!(matches!(block.forward(&g, &x), Err(Error::Dim { .. })));
    }

    #[test]
    fn glu_time_length_preserved() {
        let mut r = rng();
        let block = GluBlock::<f64>::new("g", 3, 3, 0.0, &mut r);
        let g = Graph::<f64>::eval();
        for t in [1usize, 2, 7] {
            let x = g.leaf(vec![0.1; t * 3], &[t, 3]).unwrap();
            assert_eq!(block.forward(&g, &x).unwrap().shape(), &[t, 3]);
        }
    }
}
