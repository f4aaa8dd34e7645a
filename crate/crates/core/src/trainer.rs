//! Alternating adversarial training: one discriminator update on detached
//! fakes, then one generator update through the refreshed discriminators,
//! per step. Systems without discriminators reduce to the generator step.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{singer_adv_loss, SingerClassifier};
use crate::corpus::{Dataset, Utterance};
use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::layers::SnUpdate;
use crate::loss::{
    gan_generator_loss_nonsaturating, gan_losses, generation_loss, total_generator_loss,
    SystemConfig,
};
use crate::model::{FeatureFrameSequence, Generator, GeneratorConfig, GeneratorForward};
use crate::mrwds::{Mrwds, RwdConfig};
use crate::param::{adam_step, clip_grads, AdamConfig, Parameter, SpectralNormState};
use crate::real::Real;
use crate::score::ScoreSequence;

/// Everything one training run needs beyond the system row itself.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout: f64,
    pub lambda_grl: f64,
    /// Global-norm gradient clip; `None` disables.
    pub grad_clip: Option<f64>,
    /// Use -log s(d_fake) instead of the saturating log(1 - s(d_fake)).
    pub non_saturating_gan: bool,
    /// Skip generator updates entirely (discriminator-only training).
    pub freeze_generator: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            adam: AdamConfig::default(),
            batch_size: 32,
            seed: 0,
            dropout: 0.1,
            lambda_grl: 1.0,
            grad_clip: Some(1.0),
            non_saturating_gan: false,
            freeze_generator: false,
        }
    }
}

/// Per-step loss bookkeeping; `disc_accuracy` is the fraction of correctly
/// separated real/fake windows in the discriminator step (NaN-free: zero
/// when no discriminator ran).
#[derive(Debug, Clone, Copy)]
pub struct LossRecord {
    pub step: u64,
    pub l_g: f64,
    pub l1_mgc: f64,
    pub l1_bap: f64,
    pub ce_vuv: f64,
    pub l_adv_singer: f64,
    pub l_adv_g: f64,
    pub l_adv_d: f64,
    pub l_total: f64,
    pub disc_accuracy: f64,
}

/// Fixed-format CSV of the loss history:
/// step,L_G,L1_mgc,L1_bap,CE_vuv,L_adv_singer,L_adv_G,L_adv_D,L_total
pub fn loss_history_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("step,L_G,L1_mgc,L1_bap,CE_vuv,L_adv_singer,L_adv_G,L_adv_D,L_total\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            r.step, r.l_g, r.l1_mgc, r.l1_bap, r.ce_vuv, r.l_adv_singer, r.l_adv_g, r.l_adv_d, r.l_total
        );
    }
    s
}

/// Network bundle and loop state for one training run.
pub struct TrainState<T: Real> {
    pub step: u64,
    pub system: SystemConfig,
    pub options: TrainOptions,
    pub generator: Generator<T>,
    pub classifier: Option<SingerClassifier<T>>,
    pub mrwds: Option<Mrwds<T>>,
    pub history: Vec<LossRecord>,
    rng: ChaCha8Rng,
}

impl<T: Real> TrainState<T> {
    /// Build all networks for a system. The single-singer baseline uses a
    /// one-row singer table; multi-singer systems size it to the corpus.
    pub fn new(system: SystemConfig, options: TrainOptions, n_corpus_singers: usize) -> Result<Self> {
        system.validate()?;
        let n_singers = if system.multi_singer {
            n_corpus_singers
        } else {
            1
        };
        let mut model_rng = ChaCha8Rng::seed_from_u64(options.seed);
        let generator = Generator::new(
            GeneratorConfig {
                n_singers,
                dropout: options.dropout,
            },
            &mut model_rng,
        );
        let classifier = if system.use_classifier {
            Some(SingerClassifier::new("classifier", n_singers, &mut model_rng))
        } else {
            None
        };
        let mrwds = if system.use_mrwds {
            Some(Mrwds::new("mrwds", RwdConfig::default(), &mut model_rng))
        } else {
            None
        };
        let rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(0x5eed));
        Ok(TrainState {
            step: 0,
            system,
            options,
            generator,
            classifier,
            mrwds,
            history: Vec::new(),
            rng,
        })
    }

    /// Generator-side parameters (embeddings, encoder, decoder, and the
    /// classifier, which trains in the same step through the GRL).
    pub fn generator_params(&self) -> Vec<&Parameter<T>> {
        let mut p = self.generator.params();
        if let Some(c) = &self.classifier {
            p.extend(c.params());
        }
        p
    }

    fn generator_params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.generator.params_mut();
        if let Some(c) = &mut self.classifier {
            p.extend(c.params_mut());
        }
        p
    }

    pub fn discriminator_params(&self) -> Vec<&Parameter<T>> {
        self.mrwds.as_ref().map(|m| m.params()).unwrap_or_default()
    }

    pub fn all_params(&self) -> Vec<&Parameter<T>> {
        let mut p = self.generator_params();
        p.extend(self.discriminator_params());
        p
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.generator.params_mut();
        if let Some(c) = &mut self.classifier {
            p.extend(c.params_mut());
        }
        if let Some(m) = &mut self.mrwds {
            p.extend(m.params_mut());
        }
        p
    }

    /// Spectral-norm states (classifier and discriminator convolutions).
    pub fn sn_states(&self) -> Vec<(String, &SpectralNormState<T>)> {
        let mut out = Vec::new();
        if let Some(c) = &self.classifier {
            out.push((c.conv1.sn_name(), &c.conv1.sn));
            out.push((c.conv2.sn_name(), &c.conv2.sn));
        }
        if let Some(m) = &self.mrwds {
            for d in m.discriminators() {
                out.extend(d.sn_states());
            }
        }
        out
    }

    pub fn sn_states_mut(&mut self) -> Vec<(String, &mut SpectralNormState<T>)> {
        let mut out = Vec::new();
        if let Some(c) = &mut self.classifier {
            out.push((c.conv1.sn_name(), &mut c.conv1.sn));
            out.push((c.conv2.sn_name(), &mut c.conv2.sn));
        }
        if let Some(m) = &mut self.mrwds {
            for d in m.discriminators_mut() {
                out.extend(d.sn_states_mut());
            }
        }
        out
    }

    /// The training view of a corpus: the baseline keeps only singer 0.
    pub fn effective_dataset(&self, dataset: &Dataset) -> Dataset {
        if self.system.multi_singer {
            dataset.clone()
        } else {
            let mut d = dataset.filter_singer(0);
            d.n_singers = 1;
            d
        }
    }

    fn sample_batch<'a>(&mut self, ds: &'a Dataset) -> Vec<&'a Utterance> {
        let n = ds.len();
        let bs = self.options.batch_size.min(n);
        if bs == n {
            return ds.utterances.iter().collect();
        }
        // partial Fisher-Yates over an index vector
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..bs {
            let j = self.rng.gen_range(i..n);
            idx.swap(i, j);
        }
        idx[..bs].iter().map(|&i| &ds.utterances[i]).collect()
    }

    /// One alternating update on an explicit batch.
    pub fn train_step(&mut self, batch: &[&Utterance]) -> Result<LossRecord> {
        if batch.is_empty() {
            return Err(Error::Validation("empty training batch".into()));
        }
        for u in batch {
            if u.score.singer_id >= self.generator.tables.n_singers() {
                return Err(Error::Vocab {
                    what: "singer",
                    index: u.score.singer_id,
                    size: self.generator.tables.n_singers(),
                });
            }
        }
        let adam = self.options.adam;
        let grad_clip = self.options.grad_clip;
        let seed_g = self.rng.gen::<u64>();
        let seed_d = self.rng.gen::<u64>();
        let mut win_rng_d = ChaCha8Rng::seed_from_u64(self.rng.gen::<u64>());
        let mut win_rng_g = ChaCha8Rng::seed_from_u64(self.rng.gen::<u64>());

        // Generator forward for the whole batch (shared by both phases;
        // the discriminator phase sees value snapshots only).
        let graph_g = Graph::<T>::train(seed_g);
        let mut forwards: Vec<GeneratorForward<T>> = Vec::with_capacity(batch.len());
        let mut l_g_terms: Vec<Tensor<T>> = Vec::with_capacity(batch.len());
        let mut mgc_sum = 0.0;
        let mut bap_sum = 0.0;
        let mut vuv_sum = 0.0;
        for utt in batch {
            let fwd = self.generator.forward(&graph_g, &utt.score)?;
            let target = utt.features.to_scalars::<T>();
            let gl = generation_loss(&fwd.features, &target)?;
            mgc_sum += gl.l1_mgc.scalar().as_f64();
            bap_sum += gl.l1_bap.scalar().as_f64();
            vuv_sum += gl.ce_vuv.scalar().as_f64();
            l_g_terms.push(gl.total);
            forwards.push(fwd);
        }
        let l_g = mean_of(&l_g_terms)?.scale(T::one()); // keep node even for n=1
        let n = batch.len() as f64;

        // (a) discriminator step on detached fakes and conditions
        let mut l_adv_d_val = 0.0;
        let mut disc_accuracy = 0.0;
        if let Some(mrwds) = &mut self.mrwds {
            let graph_d = Graph::<T>::train(seed_d);
            let mut ld_terms = Vec::with_capacity(batch.len());
            let mut correct = 0usize;
            for (utt, fwd) in batch.iter().zip(&forwards) {
                let fake = graph_d.leaf(fwd.features.value(), fwd.features.shape())?;
                let cond = graph_d.leaf(fwd.condition.value(), fwd.condition.shape())?;
                let real = graph_d.leaf(
                    utt.features.to_scalars::<T>(),
                    &[utt.features.frames, crate::decoder::FEATURE_DIM],
                )?;
                let first = ld_terms.is_empty();
                let upd = if first { SnUpdate::Iterate } else { SnUpdate::Freeze };
                let (d_real, _) = mrwds.forward(&graph_d, &real, &cond, &mut win_rng_d, upd)?;
                let (d_fake, _) =
                    mrwds.forward(&graph_d, &fake, &cond, &mut win_rng_d, SnUpdate::Freeze)?;
                if d_real.scalar() > T::zero() {
                    correct += 1;
                }
                if d_fake.scalar() < T::zero() {
                    correct += 1;
                }
                let (ld, _lg) = gan_losses(&d_real, &d_fake)?;
                ld_terms.push(ld);
            }
            let l_adv_d = mean_of(&ld_terms)?;
            l_adv_d_val = l_adv_d.scalar().as_f64();
            disc_accuracy = correct as f64 / (2.0 * n);
            graph_d.backward(&l_adv_d)?;
            let dparams: Vec<&Parameter<T>> = mrwds.params();
            if let Some(c) = grad_clip {
                clip_grads(&dparams, &graph_d, c);
            }
            drop(dparams);
            let mut dparams_mut = mrwds.params_mut();
            adam_step(&mut dparams_mut, &graph_d, adam)?;
        }

        // (b) generator step through the updated discriminators
        let mut l_adv_singer: Option<Tensor<T>> = None;
        if let (true, Some(clf)) = (self.system.use_classifier, &mut self.classifier) {
            let mut probs = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for (utt, fwd) in batch.iter().zip(&forwards) {
                let upd = if probs.is_empty() { SnUpdate::Iterate } else { SnUpdate::Freeze };
                probs.push(clf.forward(&graph_g, &fwd.encoding, self.options.lambda_grl, upd)?);
                labels.push(utt.score.singer_id);
            }
            l_adv_singer = Some(singer_adv_loss(&probs, &labels)?);
        }
        let mut l_adv_g: Option<Tensor<T>> = None;
        if let Some(mrwds) = &mut self.mrwds {
            let mut lg_terms = Vec::with_capacity(batch.len());
            for fwd in &forwards {
                let (d_fake, _) = mrwds.forward(
                    &graph_g,
                    &fwd.features,
                    &fwd.condition,
                    &mut win_rng_g,
                    SnUpdate::Freeze,
                )?;
                let lg = if self.options.non_saturating_gan {
                    gan_generator_loss_nonsaturating(&d_fake)
                } else {
                    d_fake.softplus().neg() // log(1 - s(d_fake))
                };
                lg_terms.push(lg);
            }
            l_adv_g = Some(mean_of(&lg_terms)?);
        }
        let l_total = total_generator_loss(
            &graph_g,
            &l_g,
            l_adv_singer.as_ref(),
            l_adv_g.as_ref(),
            &self.system,
        )?;

        let record = LossRecord {
            step: self.step,
            l_g: l_g.scalar().as_f64(),
            l1_mgc: mgc_sum / n,
            l1_bap: bap_sum / n,
            ce_vuv: vuv_sum / n,
            l_adv_singer: l_adv_singer.as_ref().map_or(0.0, |t| t.scalar().as_f64()),
            l_adv_g: l_adv_g.as_ref().map_or(0.0, |t| t.scalar().as_f64()),
            l_adv_d: l_adv_d_val,
            l_total: l_total.scalar().as_f64(),
            disc_accuracy,
        };

        if !self.options.freeze_generator {
            graph_g.backward(&l_total)?;
            let gparams = self.generator_params();
            if let Some(c) = grad_clip {
                clip_grads(&gparams, &graph_g, c);
            }
            drop(gparams);
            let mut gparams_mut = self.generator_params_mut();
            adam_step(&mut gparams_mut, &graph_g, adam)?;
        }

        self.step += 1;
        self.history.push(record);
        Ok(record)
    }

    /// Run `steps` updates with batches sampled from the dataset.
    pub fn train(&mut self, dataset: &Dataset, steps: u64) -> Result<()> {
        let ds = self.effective_dataset(dataset);
        if ds.is_empty() {
            return Err(Error::Validation("training dataset is empty".into()));
        }
        for _ in 0..steps {
            let batch = self.sample_batch(&ds);
            // the borrow of ds ends before the next sample
            let batch: Vec<&Utterance> = batch;
            self.train_step(&batch)?;
        }
        Ok(())
    }

    /// Eval-mode synthesis from a trained state.
    pub fn synthesize(&self, seq: &ScoreSequence) -> Result<FeatureFrameSequence> {
        self.generator.synthesize(seq)
    }
}

/// Mean of scalar tensors (batch reduction).
fn mean_of<T: Real>(terms: &[Tensor<T>]) -> Result<Tensor<T>> {
    debug_assert!(!terms.is_empty());
    let mut acc = terms[0].clone();
    for t in &terms[1..] {
        acc = acc.add(t)?;
    }
    Ok(acc.scale(T::from_f64(1.0 / terms.len() as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec};
    use crate::model::params_checksum;

    fn tiny_corpus(n_singers: usize, songs: usize, seed: u64) -> Dataset {
        generate_corpus(&CorpusSpec {
            n_singers,
            songs_per_singer: vec![songs; n_singers],
            seq_len: (2, 3),
            duration_range: (1, 3),
            unbalance: 0.0,
            seed,
            ..CorpusSpec::default()
        })
        .unwrap()
    }

    fn small_options(seed: u64) -> TrainOptions {
        TrainOptions {
            batch_size: 2,
            seed,
            dropout: 0.0,
            ..TrainOptions::default()
        }
    }

    // Model-construction here uses the full production widths, so keep the
    // step counts minimal; heavier runs live in the acceptance suite.

    #[test]
    fn system1_has_no_discriminator_state() {
        let sys = SystemConfig::system(1).unwrap();
        let st = TrainState::<f32>::new(sys, small_options(1), 3).unwrap();
        assert!(st.mrwds.is_none());
        assert!(st.classifier.is_none());
        assert_eq!(st.generator.tables.n_singers(), 1);
    }

    #[test]
    fn empty_batch_rejected() {
        let sys = SystemConfig::system(1).unwrap();
        let mut st = TrainState::<f32>::new(sys, small_options(2), 1).unwrap();
        assert!(matches!(
            st.train_step(&[]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn zero_weights_change_no_parameter() {
        let ds = tiny_corpus(1, 2, 5);
        let sys = SystemConfig::custom(false, false, false, [0.0, 0.0, 0.0]).unwrap();
        let mut st = TrainState::<f32>::new(sys, small_options(3), 1).unwrap();
        let before = params_checksum(&st.all_params());
        let batch: Vec<&Utterance> = ds.utterances.iter().take(2).collect();
        st.train_step(&batch).unwrap();
        let after = params_checksum(&st.all_params());
        assert_eq!(before, after);
    }

    #[test]
    fn system2_with_one_singer_matches_system1() {
        let ds = tiny_corpus(1, 3, 6);
        let run = |sys_id: u8| -> Vec<f64> {
            let sys = SystemConfig::system(sys_id).unwrap();
            let mut st = TrainState::<f32>::new(sys, small_options(7), 1).unwrap();
            st.train(&ds, 3).unwrap();
            st.history.iter().map(|r| r.l_total).collect()
        };
        assert_eq!(run(1), run(2));
    }

    #[test]
    fn deterministic_loss_history() {
        let ds = tiny_corpus(2, 2, 8);
        let run = || {
            let sys = SystemConfig::system(2).unwrap();
            let mut st = TrainState::<f32>::new(sys, small_options(9), 2).unwrap();
            st.train(&ds, 2).unwrap();
            loss_history_csv(&st.history)
        };
        assert_eq!(run(), run());
    }
}
