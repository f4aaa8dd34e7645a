//! Adversarial singer classifier: a gradient reversal layer followed by two
//! spectral-normalized convolutions, temporal mean pooling and a softmax
//! output over singer identities.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::layers::{Linear, SnConv1d, SnUpdate};
use crate::param::Parameter;
use crate::real::{real, Real};

#[derive(Debug, Clone)]
pub struct SingerClassifier<T: Real> {
    pub conv1: SnConv1d<T>,
    pub conv2: SnConv1d<T>,
    pub out_linear: Linear<T>,
    input_dim: usize,
    n_singers: usize,
}

impl<T: Real> SingerClassifier<T> {
    /// Production preset: 384/128 and 128/128 convolutions (kernel 3) into a
    /// linear softmax head over `n_singers` classes.
    pub fn new(name: &str, n_singers: usize, rng: &mut impl Rng) -> Self {
        SingerClassifier::with_dims(name, 384, 128, n_singers, 3, rng)
    }

    pub fn with_dims(
        name: &str,
        input_dim: usize,
        hidden: usize,
        n_singers: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Self {
        SingerClassifier {
            conv1: SnConv1d::new(&format!("{name}.conv1"), input_dim, hidden, kernel, rng),
            conv2: SnConv1d::new(&format!("{name}.conv2"), hidden, hidden, kernel, rng),
            out_linear: Linear::new(&format!("{name}.out"), hidden, n_singers, rng),
            input_dim,
            n_singers,
        }
    }

    pub fn n_singers(&self) -> usize {
        self.n_singers
    }

    /// Class probabilities from a phoneme-level score encoding [len, 384].
    ///
    /// The gradient reversal sits between the encoder output and the first
    /// convolution, so this branch pushes the encoder toward singer-
    /// independent encodings while the classifier itself still learns.
    pub fn forward(
        &mut self,
        graph: &Graph<T>,
        score_encoding: &Tensor<T>,
        lambda_grl: f64,
        upd: SnUpdate,
    ) -> Result<Tensor<T>> {
        if score_encoding.shape().len() != 2 || score_encoding.shape()[1] != self.input_dim {
            return Err(Error::dim(
                "classify",
                score_encoding.shape(),
                &[0, self.input_dim],
            ));
        }
        let h = score_encoding.gradient_reversal(real::<T>(lambda_grl))?;
        let h = self.conv1.forward(graph, &h, upd)?.relu();
        let h = self.conv2.forward(graph, &h, upd)?.relu();
        let pooled = h.mean_rows()?.reshape(&[1, h.shape()[1]])?;
        let logits = self.out_linear.forward(graph, &pooled)?;
        logits.softmax_rows()?.reshape(&[self.n_singers])
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut p = self.conv1.params();
        p.extend(self.conv2.params());
        p.extend(self.out_linear.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.conv1.params_mut();
        p.extend(self.conv2.params_mut());
        p.extend(self.out_linear.params_mut());
        p
    }
}

/// Summed cross-entropy over a batch of probability vectors: each term is
/// -log p[label]; the batch combines by sum, not mean.
pub fn singer_adv_loss<T: Real>(
    probs_batch: &[Tensor<T>],
    labels: &[usize],
) -> Result<Tensor<T>> {
    if probs_batch.is_empty() || probs_batch.len() != labels.len() {
        return Err(Error::Validation(format!(
            "singer loss batch mismatch: {} prob vectors, {} labels",
            probs_batch.len(),
            labels.len()
        )));
    }
    let mut total: Option<Tensor<T>> = None;
    for (probs, &label) in probs_batch.iter().zip(labels) {
        let n = probs.numel();
        if label >= n {
            return Err(Error::Validation(format!(
                "singer label {label} out of range for {n} classes"
            )));
        }
        // tiny floor keeps log finite if the softmax saturates
        let picked = probs
            .reshape(&[1, n])?
            .slice_cols(label, 1)?
            .shift_scalar(real::<T>(1e-12))
            .log()
            .neg()
            .sum_all();
        total = Some(match total {
            None => picked,
            Some(acc) => acc.add(&picked)?,
        });
    }
    Ok(total.unwrap())
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
    fn preset_shapes() {
        let clf = SingerClassifier::<f64>::new("clf", 7, &mut rng(1));
        assert_eq!(clf.conv1.conv.w.shape, vec![128, 384, 3]);
        assert_eq!(clf.conv2.conv.w.shape, vec![128, 128, 3]);
        assert_eq!(clf.out_linear.w.shape, vec![128, 7]);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut clf = SingerClassifier::<f64>::new("clf", 7, &mut rng(2));
        let g = Graph::<f64>::eval();
        let x = g
            .leaf((0..4 * 384).map(|i| (i as f64 * 0.01).sin()).collect(), &[4, 384])
            .unwrap();
        let probs = clf.forward(&g, &x, 1.0, SnUpdate::Freeze).unwrap().value();
        let s: f64 = probs.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn forward_identical_across_lambda() {
        let mut clf = SingerClassifier::<f64>::new("clf", 7, &mut rng(3));
        let g = Graph::<f64>::eval();
        let x = g
            .leaf((0..3 * 384).map(|i| (i as f64 * 0.02).cos()).collect(), &[3, 384])
            .unwrap();
        let p0 = clf.forward(&g, &x, 0.0, SnUpdate::Freeze).unwrap().value();
        let p1 = clf.forward(&g, &x, 1.0, SnUpdate::Freeze).unwrap().value();
        let p5 = clf.forward(&g, &x, 5.0, SnUpdate::Freeze).unwrap().value();
        assert_eq!(p0, p1);
        assert_eq!(p1, p5);
    }

    #[test]
    fn encoder_gradient_scales_with_lambda() {
        // encoder-side gradient at lambda=2 is exactly -2x the lambda=0-free
        // run; classifier params receive the ordinary gradient either way.
        let grad_for = |lambda: f64| -> (Vec<f64>, Vec<f64>) {
            let mut clf = SingerClassifier::<f64>::with_dims("clf", 6, 4, 3, 3, &mut rng(4));
            let g = Graph::<f64>::eval();
            let x = g
                .var((0..5 * 6).map(|i| (i as f64 * 0.3).sin()).collect(), &[5, 6])
                .unwrap();
            let probs = clf.forward(&g, &x, lambda, SnUpdate::Freeze).unwrap();
            let loss = singer_adv_loss(&[probs], &[1]).unwrap();
            g.backward(&loss).unwrap();
            (
                x.grad().unwrap(),
                g.param_grad(&clf.out_linear.w).unwrap(),
            )
        };
        let (gx1, gw1) = grad_for(1.0);
        let (gx2, gw2) = grad_for(2.0);
        for (a, b) in gx1.iter().zip(&gx2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert_eq!(gw1, gw2); // classifier's own grads unaffected by lambda
    }

    #[test]
    fn ce_perfect_and_uniform() {
        let g = Graph::<f64>::eval();
        // near-one-hot
        let mut p = vec![1e-9; 7];
        p[3] = 1.0 - 6e-9;
        let probs = g.leaf(p, &[7]).unwrap();
        let loss = singer_adv_loss(&[probs], &[3]).unwrap();
        assert!(loss.scalar() < 1e-6);
        // uniform: ln 7 per sample
        let probs = g.leaf(vec![1.0 / 7.0; 7], &[7]).unwrap();
        let loss = singer_adv_loss(&[probs], &[0]).unwrap();
        assert!((loss.scalar() - 7f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn batch_loss_is_sum_not_mean() {
        let g = Graph::<f64>::eval();
        let p1 = g.leaf(vec![1.0 / 7.0; 7], &[7]).unwrap();
        let p2 = g.leaf(vec![1.0 / 7.0; 7], &[7]).unwrap();
        let loss = singer_adv_loss(&[p1, p2], &[0, 4]).unwrap();
        assert!((loss.scalar() - 2.0 * 7f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let g = Graph::<f64>::eval();
        let p = g.leaf(vec![1.0 / 7.0; 7], &[7]).unwrap();
        assert!(matches!(
            singer_adv_loss(&[p], &[7]),
            Err(Error::Validation(_))
        ));
    }
}
