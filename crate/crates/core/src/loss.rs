//! Loss terms and the five-system ablation matrix: the feature generation
//! loss (L1 on MGC and BAP plus VUV cross-entropy), the vanilla GAN losses
//! over the summed discriminator logit, and the weighted total.

use crate::decoder::{split_features, FEATURE_DIM, VUV_INDEX};
use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::real::{real, Real};

/// Which modules are active and the loss weights [lambda_G, lambda_S,
/// lambda_D] — one row of the five-system matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub system_id: u8,
    pub multi_singer: bool,
    pub use_classifier: bool,
    pub use_mrwds: bool,
    pub weights: [f64; 3],
}

impl SystemConfig {
    /// The five presets:
    /// 1 baseline [1,0,0]; 2 +multi-singer [1,0,0]; 3 +classifier [1,1,0];
    /// 4 +discriminators [10,0,1]; 5 all modules [10,2,1].
    pub fn system(id: u8) -> Result<Self> {
        let cfg = match id {
            1 => SystemConfig {
                system_id: 1,
                multi_singer: false,
                use_classifier: false,
                use_mrwds: false,
                weights: [1.0, 0.0, 0.0],
            },
            2 => SystemConfig {
                system_id: 2,
                multi_singer: true,
                use_classifier: false,
                use_mrwds: false,
                weights: [1.0, 0.0, 0.0],
            },
            3 => SystemConfig {
                system_id: 3,
                multi_singer: true,
                use_classifier: true,
                use_mrwds: false,
                weights: [1.0, 1.0, 0.0],
            },
            4 => SystemConfig {
                system_id: 4,
                multi_singer: true,
                use_classifier: false,
                use_mrwds: true,
                weights: [10.0, 0.0, 1.0],
            },
            5 => SystemConfig {
                system_id: 5,
                multi_singer: true,
                use_classifier: true,
                use_mrwds: true,
                weights: [10.0, 2.0, 1.0],
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown system id {other}, expected 1..=5"
                )))
            }
        };
        Ok(cfg)
    }

    /// Custom weight/flag combination (for experiments and degenerate tests).
    pub fn custom(
        multi_singer: bool,
        use_classifier: bool,
        use_mrwds: bool,
        weights: [f64; 3],
    ) -> Result<Self> {
        let cfg = SystemConfig {
            system_id: 0,
            multi_singer,
            use_classifier,
            use_mrwds,
            weights,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative, got {:?}",
                self.weights
            )));
        }
        Ok(())
    }
}

/// Components of the generation loss; `total` is their exact sum.
#[derive(Debug, Clone)]
pub struct GenerationLoss<T: Real> {
    pub total: Tensor<T>,
    pub l1_mgc: Tensor<T>,
    pub l1_bap: Tensor<T>,
    pub ce_vuv: Tensor<T>,
}

/// L1 on MGC, L1 on BAP (means over frames and dimensions) and binary
/// cross-entropy on the VUV logit against {0,1} targets.
pub fn generation_loss<T: Real>(
    pred: &Tensor<T>,
    target: &[T],
) -> Result<GenerationLoss<T>> {
    let frames = pred.shape()[0];
    if pred.shape().len() != 2 || pred.shape()[1] != FEATURE_DIM {
        return Err(Error::dim("generation_loss", pred.shape(), &[frames, FEATURE_DIM]));
    }
    if target.len() != frames * FEATURE_DIM {
        return Err(Error::dim(
            "generation_loss",
            pred.shape(),
            &[target.len() / FEATURE_DIM, FEATURE_DIM],
        ));
    }
    let graph = pred.graph();
    let mut vuv_target = Vec::with_capacity(frames);
    for t in 0..frames {
        let v = target[t * FEATURE_DIM + VUV_INDEX];
        if v != T::zero() && v != T::one() {
            return Err(Error::Validation(format!(
                "VUV target must be 0 or 1, frame {t} has {v}"
            )));
        }
        vuv_target.push(v);
    }
    let target_t = graph.leaf(target.to_vec(), &[frames, FEATURE_DIM])?;
    let (pred_mgc, pred_bap, pred_vuv) = split_features(pred)?;
    let (tgt_mgc, tgt_bap, _) = split_features(&target_t)?;

    let l1_mgc = pred_mgc.sub(&tgt_mgc)?.abs().mean_all();
    let l1_bap = pred_bap.sub(&tgt_bap)?.abs().mean_all();
    let ce_vuv = pred_vuv
        .reshape(&[frames])?
        .bce_with_logits(&vuv_target)?
        .mean_all();
    let total = l1_mgc.add(&l1_bap)?.add(&ce_vuv)?;
    Ok(GenerationLoss {
        total,
        l1_mgc,
        l1_bap,
        ce_vuv,
    })
}

/// Vanilla GAN losses on summed discriminator logits:
/// L_D = -log s(d_real) - log(1 - s(d_fake)),
/// L_G =  log(1 - s(d_fake)),
/// evaluated in softplus form for numerical stability.
pub fn gan_losses<T: Real>(
    d_real: &Tensor<T>,
    d_fake: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if d_real.numel() != 1 || d_fake.numel() != 1 {
        return Err(Error::dim("gan_losses", d_real.shape(), d_fake.shape()));
    }
    // -log s(x) = softplus(-x);  log(1 - s(x)) = -softplus(x)
    let l_d = d_real.neg().softplus().add(&d_fake.softplus())?;
    let l_g = d_fake.softplus().neg();
    Ok((l_d, l_g))
}

/// Non-saturating alternative generator loss -log s(d_fake); same fixed
/// point, stronger gradient when the discriminator dominates.
pub fn gan_generator_loss_nonsaturating<T: Real>(d_fake: &Tensor<T>) -> Tensor<T> {
    d_fake.neg().softplus()
}

/// Weighted total generator objective:
/// lambda_G * L_G + lambda_S * L_adv_singer + lambda_D * L_adv_G.
/// Absent components contribute exactly zero.
pub fn total_generator_loss<T: Real>(
    graph: &Graph<T>,
    l_g: &Tensor<T>,
    l_adv_singer: Option<&Tensor<T>>,
    l_adv_g: Option<&Tensor<T>>,
    cfg: &SystemConfig,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    let [w_g, w_s, w_d] = cfg.weights;
    let mut total = l_g.scale(real::<T>(w_g));
    if let Some(ls) = l_adv_singer {
        total = total.add(&ls.scale(real::<T>(w_s)))?;
    }
    if let Some(lg) = l_adv_g {
        total = total.add(&lg.scale(real::<T>(w_d)))?;
    }
    let _ = graph;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::MGC_DIM;
    use crate::graph::Graph;

    fn feature_row(mgc: f64, bap: f64, vuv: f64) -> Vec<f64> {
        let mut row = vec![mgc; MGC_DIM];
        row.extend(vec![bap; 5]);
        row.push(vuv);
        row
    }

    #[test]
    fn perfect_prediction_near_zero() {
        let g = Graph::<f64>::eval();
        let mut target = feature_row(0.4, -0.2, 1.0);
        target.extend(feature_row(-0.1, 0.3, 0.0));
        // prediction: same MGC/BAP, VUV logits at +-20
        let mut pred = feature_row(0.4, -0.2, 20.0);
        pred.extend(feature_row(-0.1, 0.3, -20.0));
        let pred_t = g.leaf(pred, &[2, 66]).unwrap();
        let loss = generation_loss(&pred_t, &target).unwrap();
        assert!(loss.total.scalar() < 1e-6);
    }

    #[test]
    fn constant_mgc_offset_gives_unit_l1() {
        let g = Graph::<f64>::eval();
        let target = feature_row(0.0, 0.5, 1.0);
        let pred = {
            let mut p = feature_row(1.0, 0.5, 30.0);
            p[VUV_INDEX] = 30.0;
            p
        };
        let pred_t = g.leaf(pred, &[1, 66]).unwrap();
        let loss = generation_loss(&pred_t, &target).unwrap();
        assert!((loss.l1_mgc.scalar() - 1.0).abs() < 1e-12);
        assert!(loss.l1_bap.scalar() < 1e-12);
    }

    #[test]
    fn components_sum_exactly() {
        let g = Graph::<f64>::eval();
        let target = feature_row(0.2, -0.4, 0.0);
        let pred = feature_row(-0.3, 0.1, 0.7);
        let pred_t = g.leaf(pred, &[1, 66]).unwrap();
        let loss = generation_loss(&pred_t, &target).unwrap();
        let sum = loss.l1_mgc.scalar() + loss.l1_bap.scalar() + loss.ce_vuv.scalar();
        assert_eq!(loss.total.scalar(), sum);
    }

    #[test]
    fn non_binary_vuv_rejected() {
        let g = Graph::<f64>::eval();
        let target = feature_row(0.0, 0.0, 0.5);
        let pred_t = g.leaf(feature_row(0.0, 0.0, 0.0), &[1, 66]).unwrap();
        assert!(matches!(
            generation_loss(&pred_t, &target),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn gan_losses_at_zero_logits() {
        let g = Graph::<f64>::eval();
        let r = g.leaf(vec![0.0], &[1]).unwrap();
        let f = g.leaf(vec![0.0], &[1]).unwrap();
        let (l_d, l_g) = gan_losses(&r, &f).unwrap();
        assert!((l_d.scalar() - 2.0 * 2f64.ln()).abs() < 1e-9);
        assert!((l_g.scalar() - 0.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn gan_loss_perfect_discriminator_limit() {
        let g = Graph::<f64>::eval();
        let r = g.leaf(vec![60.0], &[1]).unwrap();
        let f = g.leaf(vec![-60.0], &[1]).unwrap();
        let (l_d, _) = gan_losses(&r, &f).unwrap();
        assert!(l_d.scalar() < 1e-9);
    }

    #[test]
    fn generator_gradient_pushes_score_up() {
        for logit in [-8.0, -1.0, 0.0, 1.0, 8.0] {
            let g = Graph::<f64>::eval();
            let r = g.leaf(vec![0.0], &[1]).unwrap();
            let f = g.var(vec![logit], &[1]).unwrap();
            let (_, l_g) = gan_losses(&r, &f).unwrap();
            g.backward(&l_g).unwrap();
            assert!(f.grad().unwrap()[0] < 0.0, "dL_G/dfake must be negative");
        }
    }

    #[test]
    fn table_weights_reproduced() {
        assert_eq!(SystemConfig::system(1).unwrap().weights, [1.0, 0.0, 0.0]);
        assert_eq!(SystemConfig::system(2).unwrap().weights, [1.0, 0.0, 0.0]);
        assert_eq!(SystemConfig::system(3).unwrap().weights, [1.0, 1.0, 0.0]);
        assert_eq!(SystemConfig::system(4).unwrap().weights, [10.0, 0.0, 1.0]);
        assert_eq!(SystemConfig::system(5).unwrap().weights, [10.0, 2.0, 1.0]);
        let s3 = SystemConfig::system(3).unwrap();
        assert!(s3.multi_singer && s3.use_classifier && !s3.use_mrwds);
    }

    #[test]
    fn system1_total_equals_l_g() {
        let g = Graph::<f64>::eval();
        let l_g = g.leaf(vec![0.37], &[1]).unwrap();
        let cfg = SystemConfig::system(1).unwrap();
        let total = total_generator_loss(&g, &l_g, None, None, &cfg).unwrap();
        assert_eq!(total.scalar(), 0.37);
    }

    #[test]
    fn system5_weighted_sum() {
        let g = Graph::<f64>::eval();
        let one = g.leaf(vec![1.0], &[1]).unwrap();
        let cfg = SystemConfig::system(5).unwrap();
        let total = total_generator_loss(&g, &one, Some(&one), Some(&one), &cfg).unwrap();
        assert_eq!(total.scalar(), 13.0); // 10 + 2 + 1
    }

    #[test]
    fn zero_components_zero_total() {
        let g = Graph::<f64>::eval();
        let zero = g.leaf(vec![0.0], &[1]).unwrap();
        let cfg = SystemConfig::system(5).unwrap();
        let total = total_generator_loss(&g, &zero, Some(&zero), Some(&zero), &cfg).unwrap();
        assert_eq!(total.scalar(), 0.0);
    }

    #[test]
    fn negative_weights_rejected() {
        assert!(matches!(
            SystemConfig::custom(true, true, true, [1.0, -0.5, 0.0]),
            Err(Error::Config(_))
        ));
    }
}
