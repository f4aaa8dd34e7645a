//! Objective evaluation: averaged global variance of MGC, a singer probe
//! over pooled encodings, and CSV export of curves and feature dumps.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::decoder::MGC_DIM;
use crate::error::{Error, Result};
use crate::model::FeatureFrameSequence;
use crate::trainer::LossRecord;

/// Per-dimension averaged global variance of MGC for generated and
/// reference sets.
#[derive(Debug, Clone)]
pub struct GvReport {
    pub generated: Vec<f64>,
    pub reference: Vec<f64>,
}

impl GvReport {
    pub fn compare(generated: &[FeatureFrameSequence], reference: &[FeatureFrameSequence]) -> Result<Self> {
        Ok(GvReport {
            generated: global_variance(generated)?,
            reference: global_variance(reference)?,
        })
    }

    /// `dim,gv_generated,gv_reference` rows at 12 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dim,gv_generated,gv_reference\n");
        for d in 0..self.generated.len() {
            let _ = writeln!(s, "{},{:.12e},{:.12e}", d, self.generated[d], self.reference[d]);
        }
        s
    }
}

/// Per-utterance population variance over frames, per MGC dimension,
/// averaged across utterances (Welford accumulation). Utterances with fewer
/// than two frames are excluded with a warning.
pub fn global_variance(features: &[FeatureFrameSequence]) -> Result<Vec<f64>> {
    if features.is_empty() {
        return Err(Error::Validation("global variance of an empty set".into()));
    }
    let per_utt: Vec<Option<Vec<f64>>> = features
        .par_iter()
        .map(|utt| {
            if utt.frames < 2 {
                return None;
            }
            let mut mean = vec![0.0f64; MGC_DIM];
            let mut m2 = vec![0.0f64; MGC_DIM];
            for t in 0..utt.frames {
                let frame = utt.mgc(t);
                let n = (t + 1) as f64;
                for d in 0..MGC_DIM {
                    let delta = frame[d] - mean[d];
                    mean[d] += delta / n;
                    m2[d] += delta * (frame[d] - mean[d]);
                }
            }
            let n = utt.frames as f64;
            Some(m2.into_iter().map(|v| v / n).collect())
        })
        .collect();

    let mut acc = vec![0.0f64; MGC_DIM];
    let mut used = 0usize;
    for v in per_utt.into_iter() {
        match v {
            Some(gv) => {
                for d in 0..MGC_DIM {
                    acc[d] += gv[d];
                }
                used += 1;
            }
            None => log::warn!("global variance: skipping utterance with < 2 frames"),
        }
    }
    if used == 0 {
        return Err(Error::Validation(
            "global variance: no utterance had at least 2 frames".into(),
        ));
    }
    for v in acc.iter_mut() {
        *v /= used as f64;
    }
    Ok(acc)
}

/// Multinomial logistic probe trained with full-batch gradient descent on
/// standardized inputs. Deterministic: zero init, fixed epoch count.
#[derive(Debug, Clone)]
pub struct SoftmaxProbe {
    w: Vec<f64>, // [dim+1][classes], last row is the bias
    dim: usize,
    classes: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl SoftmaxProbe {
    pub fn train(xs: &[Vec<f64>], ys: &[usize], classes: usize) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::Validation("probe: empty or mismatched training set".into()));
        }
        let dim = xs[0].len();
        let n = xs.len();

        // standardize per dimension over the training set
        let mut mean = vec![0.0; dim];
        for x in xs {
            for d in 0..dim {
                mean[d] += x[d];
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut std = vec![0.0; dim];
        for x in xs {
            for d in 0..dim {
                let c = x[d] - mean[d];
                std[d] += c * c;
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n as f64).sqrt().max(1e-8);
        }

        let mut probe = SoftmaxProbe {
            w: vec![0.0; (dim + 1) * classes],
            dim,
            classes,
            mean,
            std,
        };
        let xn: Vec<Vec<f64>> = xs.iter().map(|x| probe.normalize(x)).collect();

        let lr = 0.5;
        let l2 = 1e-3;
        let epochs = 400;
        let mut grad = vec![0.0; (dim + 1) * classes];
        for _ in 0..epochs {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (x, &y) in xn.iter().zip(ys) {
                let p = probe.forward(x);
                for c in 0..classes {
                    let err = p[c] - if c == y { 1.0 } else { 0.0 };
                    for d in 0..dim {
                        grad[d * classes + c] += err * x[d];
                    }
                    grad[dim * classes + c] += err;
                }
            }
            let inv_n = 1.0 / n as f64;
            for (i, g) in grad.iter().enumerate() {
                let decay = if i < dim * classes { l2 * probe.w[i] } else { 0.0 };
                probe.w[i] -= lr * (g * inv_n + decay);
            }
        }
        Ok(probe)
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|d| (x[d] - self.mean[d]) / self.std[d])
            .collect()
    }

    fn forward(&self, xn: &[f64]) -> Vec<f64> {
        let mut logits = vec![0.0; self.classes];
        for c in 0..self.classes {
            let mut z = self.w[self.dim * self.classes + c];
            for d in 0..self.dim {
                z += xn[d] * self.w[d * self.classes + c];
            }
            logits[c] = z;
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for z in logits.iter_mut() {
            *z = (*z - mx).exp();
            sum += *z;
        }
        for z in logits.iter_mut() {
            *z /= sum;
        }
        logits
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.forward(&self.normalize(x));
        p.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }

    pub fn accuracy(&self, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        let correct = xs
            .iter()
            .zip(ys)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        correct as f64 / xs.len() as f64
    }
}

/// Train a fresh probe on labelled vectors and report held-out accuracy.
/// The split is stratified per class: 70% train / 30% test, shuffled by
/// `seed`. Fails with fewer than two distinct classes.
pub fn singer_probe(samples: &[(Vec<f64>, usize)], n_classes: usize, seed: u64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Validation("probe: no samples".into()));
    }
    let distinct: std::collections::BTreeSet<usize> =
        samples.iter().map(|(_, y)| *y).collect();
    if distinct.len() < 2 {
        return Err(Error::Validation(format!(
            "probe needs at least 2 singers, got {}",
            distinct.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_x = Vec::new();
    let mut train_y = Vec::new();
    let mut test_x = Vec::new();
    let mut test_y = Vec::new();
    for class in 0..n_classes {
        let mut idx: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, (_, y))| *y == class)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * 0.3).ceil() as usize;
        for (k, &i) in idx.iter().enumerate() {
            if k < idx.len() - n_test {
                train_x.push(samples[i].0.clone());
                train_y.push(samples[i].1);
            } else {
                test_x.push(samples[i].0.clone());
                test_y.push(samples[i].1);
            }
        }
    }
    if test_x.is_empty() || train_x.is_empty() {
        return Err(Error::Validation("probe: split produced an empty side".into()));
    }
    let probe = SoftmaxProbe::train(&train_x, &train_y, n_classes)?;
    Ok(probe.accuracy(&test_x, &test_y))
}

/// Mean-pool a feature sequence into a single vector (probe input).
pub fn mean_pool(seq: &FeatureFrameSequence) -> Vec<f64> {
    let dims = crate::decoder::FEATURE_DIM;
    let mut out = vec![0.0; dims];
    for t in 0..seq.frames {
        for (d, v) in seq.frame(t).iter().enumerate() {
            out[d] += v;
        }
    }
    for v in out.iter_mut() {
        *v /= seq.frames as f64;
    }
    out
}

pub fn write_gv_csv(report: &GvReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_csv())?;
    Ok(())
}

pub fn write_loss_csv(history: &[LossRecord], path: &Path) -> Result<()> {
    std::fs::write(path, crate::trainer::loss_history_csv(history))?;
    Ok(())
}

pub fn write_feature_csv(seq: &FeatureFrameSequence, path: &Path) -> Result<()> {
    std::fs::write(path, crate::corpus::format_features(seq))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn seq_of(rows: Vec<Vec<f64>>) -> FeatureFrameSequence {
        let frames = rows.len();
        let mut data = Vec::new();
        for mut r in rows {
            r.resize(crate::decoder::FEATURE_DIM, 0.0);
            data.extend(r);
        }
        FeatureFrameSequence::new(frames, data)
    }

    #[test]
    fn constant_features_zero_gv() {
        let utt = seq_of(vec![vec![0.7; 66]; 5]);
        let gv = global_variance(&[utt]).unwrap();
        assert!(gv.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_population_variance() {
        let mut a = vec![0.0; 66];
        let mut b = vec![0.0; 66];
        a[0] = 0.0;
        b[0] = 2.0;
        let utt = seq_of(vec![a, b]);
        let gv = global_variance(&[utt]).unwrap();
        assert!((gv[0] - 1.0).abs() < 1e-12); // population variance of {0,2}
    }

    #[test]
    fn matches_two_pass_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let utts: Vec<FeatureFrameSequence> = (0..4)
            .map(|_| {
                let frames = rng.gen_range(3..10);
                let data: Vec<f64> = (0..frames * 66).map(|_| rng.gen_range(-2.0..2.0)).collect();
                FeatureFrameSequence::new(frames, data)
            })
            .collect();
        let gv = global_variance(&utts).unwrap();

        // two-pass oracle
        let mut expect = vec![0.0; MGC_DIM];
        for utt in &utts {
            for d in 0..MGC_DIM {
                let vals: Vec<f64> = (0..utt.frames).map(|t| utt.mgc(t)[d]).collect();
                let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
                let var: f64 =
                    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
                expect[d] += var / utts.len() as f64;
            }
        }
        for d in 0..MGC_DIM {
            assert!((gv[d] - expect[d]).abs() < 1e-10, "dim {d}");
        }
    }

    #[test]
    fn short_utterances_excluded() {
        let long = seq_of(vec![vec![0.0; 66], vec![2.0; 66]]);
        let short = seq_of(vec![vec![9.0; 66]]);
        let gv = global_variance(&[long, short]).unwrap();
        assert!((gv[0] - 1.0).abs() < 1e-12); // only the long one counted
        assert!(global_variance(&[seq_of(vec![vec![1.0; 66]])]).is_err());
        assert!(global_variance(&[]).is_err());
    }

    #[test]
    fn gv_self_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let utts: Vec<FeatureFrameSequence> = (0..3)
            .map(|_| {
                let data: Vec<f64> = (0..5 * 66).map(|_| rng.gen_range(-1.0..1.0)).collect();
                FeatureFrameSequence::new(5, data)
            })
            .collect();
        let rep = GvReport::compare(&utts, &utts).unwrap();
        assert_eq!(rep.generated, rep.reference);
    }

    #[test]
    fn probe_separable_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut samples = Vec::new();
        for class in 0..3usize {
            for _ in 0..30 {
                let x: Vec<f64> = (0..8)
                    .map(|d| {
                        let center = if d == class { 3.0 } else { 0.0 };
                        center + rng.gen_range(-0.5..0.5)
                    })
                    .collect();
                samples.push((x, class));
            }
        }
        let acc = singer_probe(&samples, 3, 0).unwrap();
        assert!(acc > 0.95, "acc = {acc}");
    }

    #[test]
    fn probe_noise_is_chance_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<(Vec<f64>, usize)> = (0..210)
            .map(|i| {
                let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (x, i % 7)
            })
            .collect();
        let acc = singer_probe(&samples, 7, 3).unwrap();
        assert!((acc - 1.0 / 7.0).abs() < 0.1, "acc = {acc}");
    }

    #[test]
    fn probe_rejects_single_class() {
        let samples: Vec<(Vec<f64>, usize)> = (0..10).map(|_| (vec![0.0; 4], 0)).collect();
        assert!(matches!(
            singer_probe(&samples, 7, 0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn gv_csv_has_60_rows() {
        let utt = seq_of(vec![vec![0.1; 66], vec![0.4; 66]]);
        let rep = GvReport::compare(&[utt.clone()], &[utt]).unwrap();
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 61); // header + 60 dims
    }
}
