//! Deterministic synthetic multi-singer corpus: scores drawn from per-singer
//! (optionally unbalanced) distributions, features from a fixed per-singer
//! oracle of sinusoidal basis mixtures, plus the on-disk dataset format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{BAP_DIM, FEATURE_DIM, MGC_DIM};
use crate::error::{Error, Result};
use crate::model::FeatureFrameSequence;
use crate::score::{
    format_score, parse_score, ScoreSequence, MAX_FRAMES, PHONEME_VOCAB, PITCH_VOCAB,
};

/// Shape of the synthetic corpus. Song counts default to the seven-singer
/// tally [200,200,200,210,205,200,153] scaled down by 10.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_singers: usize,
    pub songs_per_singer: Vec<usize>,
    /// Phonemes per utterance, inclusive bounds.
    pub seq_len: (usize, usize),
    /// Frames per phoneme, inclusive bounds.
    pub duration_range: (usize, usize),
    pub max_frames: usize,
    /// 0 = all singers share one score distribution; 1 = disjoint per-singer
    /// phoneme/pitch blocks.
    pub unbalance: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_singers: 7,
            songs_per_singer: vec![20, 20, 20, 21, 21, 20, 15],
            seq_len: (4, 8),
            duration_range: (1, 20),
            max_frames: MAX_FRAMES,
            unbalance: 0.0,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_singers == 0 || self.songs_per_singer.len() != self.n_singers {
            return Err(Error::Validation(format!(
                "corpus spec: {} singers but {} song counts",
                self.n_singers,
                self.songs_per_singer.len()
            )));
        }
        if self.seq_len.0 == 0 || self.seq_len.0 > self.seq_len.1 {
            return Err(Error::Validation("corpus spec: bad seq_len range".into()));
        }
        if self.duration_range.0 == 0 || self.duration_range.0 > self.duration_range.1 {
            return Err(Error::Validation("corpus spec: bad duration range".into()));
        }
        if !(0.0..=1.0).contains(&self.unbalance) {
            return Err(Error::Validation("corpus spec: unbalance not in [0,1]".into()));
        }
        Ok(())
    }
}

/// Deterministic per-singer map (phoneme, pitch, frame phase) -> feature
/// frame, built from seeded sinusoidal bases. Distinct singers stay
/// distinguishable through their own basis functions; phoneme and pitch
/// contributions are shared across singers at lower amplitude.
#[derive(Debug, Clone)]
pub struct OracleSingerFunction {
    n_singers: usize,
    base: Vec<f64>,   // [singer][dim]
    amp: Vec<f64>,    // [singer][dim]
    freq: Vec<f64>,   // [singer][dim]
    phase: Vec<f64>,  // [singer][dim]
    phon_coeff: Vec<f64>,  // [phoneme][dim]
    pitch_coeff: Vec<f64>, // [pitch][dim]
    phon_scale: f64,
    pitch_scale: f64,
}

impl OracleSingerFunction {
    pub fn new(seed: u64, n_singers: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x04ac1e, 1));
        let nd = n_singers * FEATURE_DIM;
        let base = (0..nd).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let amp = (0..nd).map(|_| rng.gen_range(0.3..1.0)).collect();
        let freq = (0..nd).map(|_| rng.gen_range(1.0..3.0)).collect();
        let phase = (0..nd)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        let phon_coeff = (0..PHONEME_VOCAB * FEATURE_DIM)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let pitch_coeff = (0..PITCH_VOCAB * FEATURE_DIM)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        OracleSingerFunction {
            n_singers,
            base,
            amp,
            freq,
            phase,
            phon_coeff,
            pitch_coeff,
            phon_scale: 0.25,
            pitch_scale: 0.25,
        }
    }

    pub fn n_singers(&self) -> usize {
        self.n_singers
    }

    /// Whether a phoneme id is treated as voiced (vowel-like).
    pub fn voiced(phoneme: usize) -> bool {
        phoneme % 3 != 0
    }

    /// One 66-dimensional frame; `frame_phase` in [0,1) positions the frame
    /// within its phoneme.
    pub fn frame(&self, singer: usize, phoneme: usize, pitch: usize, frame_phase: f64) -> Vec<f64> {
        assert!(singer < self.n_singers && phoneme < PHONEME_VOCAB && pitch < PITCH_VOCAB);
        let mut out = Vec::with_capacity(FEATURE_DIM);
        for d in 0..MGC_DIM + BAP_DIM {
            let si = singer * FEATURE_DIM + d;
            let singer_part = self.base[si]
                + self.amp[si]
                    * (std::f64::consts::TAU * self.freq[si] * frame_phase + self.phase[si]).sin();
            let v = singer_part
                + self.phon_scale * self.phon_coeff[phoneme * FEATURE_DIM + d]
                + self.pitch_scale * self.pitch_coeff[pitch * FEATURE_DIM + d];
            out.push(v);
        }
        out.push(if Self::voiced(phoneme) { 1.0 } else { 0.0 });
        out
    }

    /// Features for a whole score, frame phases centered within phonemes.
    pub fn features_for(&self, seq: &ScoreSequence) -> FeatureFrameSequence {
        let total = seq.total_frames();
        let mut data = Vec::with_capacity(total * FEATURE_DIM);
        for (i, &dur) in seq.durations.iter().enumerate() {
            for j in 0..dur {
                let phase = (j as f64 + 0.5) / dur as f64;
                data.extend(self.frame(seq.singer_id, seq.phonemes[i], seq.pitches[i], phase));
            }
        }
        FeatureFrameSequence::new(total, data)
    }
}

/// One corpus item: identifier, score and reference features.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub score: ScoreSequence,
    pub features: FeatureFrameSequence,
}

/// An in-memory dataset plus the oracle that generated it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    pub n_singers: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Utterances of one singer.
    pub fn of_singer(&self, singer: usize) -> Vec<&Utterance> {
        self.utterances
            .iter()
            .filter(|u| u.score.singer_id == singer)
            .collect()
    }

    /// Deterministic per-singer split: the last `frac` of each singer's
    /// utterances (by generation order) become the evaluation set.
    pub fn split_eval(&self, frac: f64) -> (Dataset, Dataset) {
        let mut train = Vec::new();
        let mut eval = Vec::new();
        for s in 0..self.n_singers {
            let mine: Vec<&Utterance> = self.of_singer(s);
            let n_eval = ((mine.len() as f64 * frac).ceil() as usize).min(mine.len());
            let cut = mine.len() - n_eval;
            for (i, u) in mine.into_iter().enumerate() {
                if i < cut {
                    train.push(u.clone());
                } else {
                    eval.push(u.clone());
                }
            }
        }
        (
            Dataset {
                utterances: train,
                n_singers: self.n_singers,
            },
            Dataset {
                utterances: eval,
                n_singers: self.n_singers,
            },
        )
    }

    /// Keep only one singer's utterances (single-singer training).
    pub fn filter_singer(&self, singer: usize) -> Dataset {
        Dataset {
            utterances: self
                .utterances
                .iter()
                .filter(|u| u.score.singer_id == singer)
                .cloned()
                .collect(),
            n_singers: self.n_singers,
        }
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over (seed, a, b)
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(b.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Per-singer phoneme block for the unbalanced distribution.
fn vocab_block(vocab: usize, n_singers: usize, singer: usize) -> (usize, usize) {
    let width = vocab / n_singers;
    let lo = singer * width;
    let hi = if singer + 1 == n_singers {
        vocab
    } else {
        lo + width
    };
    (lo, hi)
}

fn sample_token(
    rng: &mut ChaCha8Rng,
    vocab: usize,
    n_singers: usize,
    singer: usize,
    unbalance: f64,
) -> usize {
    if rng.gen::<f64>() < unbalance {
        let (lo, hi) = vocab_block(vocab, n_singers, singer);
        rng.gen_range(lo..hi)
    } else {
        rng.gen_range(0..vocab)
    }
}

/// Generate the corpus. Same spec and seed give a bitwise-identical dataset;
/// utterances are generated in parallel with per-utterance rngs.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Dataset> {
    spec.validate()?;
    let oracle = OracleSingerFunction::new(spec.seed, spec.n_singers);
    let jobs: Vec<(usize, usize)> = (0..spec.n_singers)
        .flat_map(|s| (0..spec.songs_per_singer[s]).map(move |u| (s, u)))
        .collect();
    let utterances: Vec<Utterance> = jobs
        .par_iter()
        .map(|&(singer, song)| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix(spec.seed, singer as u64 + 1, song as u64 + 1));
            let n_phon = rng.gen_range(spec.seq_len.0..=spec.seq_len.1);
            let mut phonemes = Vec::with_capacity(n_phon);
            let mut pitches = Vec::with_capacity(n_phon);
            let mut durations = Vec::with_capacity(n_phon);
            let mut frames = 0usize;
            for _ in 0..n_phon {
                let ph = sample_token(&mut rng, PHONEME_VOCAB, spec.n_singers, singer, spec.unbalance);
                let pi = sample_token(&mut rng, PITCH_VOCAB, spec.n_singers, singer, spec.unbalance);
                let dur = rng.gen_range(spec.duration_range.0..=spec.duration_range.1);
                if frames + dur > spec.max_frames {
                    break; // truncate at a phoneme boundary
                }
                frames += dur;
                phonemes.push(ph);
                pitches.push(pi);
                durations.push(dur);
            }
            let score = ScoreSequence::new(phonemes, pitches, durations, singer)
                .expect("generated score within bounds");
            let features = oracle.features_for(&score);
            Utterance {
                id: format!("s{singer:02}u{song:04}"),
                score,
                features,
            }
        })
        .collect();
    Ok(Dataset {
        utterances,
        n_singers: spec.n_singers,
    })
}

// ---------------------------------------------------------------------------
// Feature file format: header `frames: T, dims: 66`, then one comma-separated
// line per frame at 12 significant digits.
// ---------------------------------------------------------------------------

pub fn format_features(seq: &FeatureFrameSequence) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "frames: {}, dims: {}", seq.frames, FEATURE_DIM);
    for t in 0..seq.frames {
        let row: Vec<String> = seq.frame(t).iter().map(|v| format!("{v:.12e}")).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

pub fn parse_features(text: &str, origin: &str) -> Result<FeatureFrameSequence> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        path: origin.into(),
        msg: "empty feature file".into(),
    })?;
    let parse_header = || -> Option<(usize, usize)> {
        let rest = header.strip_prefix("frames:")?.trim();
        let (f, d) = rest.split_once(',')?;
        let frames = f.trim().parse().ok()?;
        let dims = d.trim().strip_prefix("dims:")?.trim().parse().ok()?;
        Some((frames, dims))
    };
    let (frames, dims) = parse_header().ok_or_else(|| Error::Parse {
        path: origin.into(),
        msg: format!("bad feature header: {header}"),
    })?;
    if dims != FEATURE_DIM {
        return Err(Error::Parse {
            path: origin.into(),
            msg: format!("expected {FEATURE_DIM} dims, header says {dims}"),
        });
    }
    let mut data = Vec::with_capacity(frames * dims);
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        for tok in line.split(',') {
            let v: f64 = tok.trim().parse().map_err(|_| Error::Parse {
                path: origin.into(),
                msg: format!("line {}: bad float {tok}", ln + 2),
            })?;
            data.push(v);
        }
    }
    if data.len() != frames * dims {
        return Err(Error::Parse {
            path: origin.into(),
            msg: format!(
                "expected {} values, found {}",
                frames * dims,
                data.len()
            ),
        });
    }
    Ok(FeatureFrameSequence::new(frames, data))
}

/// Manifest line per utterance: id, score path, feature path, singer id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub score: String,
    pub features: String,
    pub singer: usize,
}

/// Write the dataset as one score file and one feature file per utterance
/// plus a `manifest.csv` listing the pairs.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::from("id,score,features,singer\n");
    for u in &dataset.utterances {
        let score_name = format!("{}.score", u.id);
        let feat_name = format!("{}.feat", u.id);
        std::fs::write(dir.join(&score_name), format_score(&u.score))?;
        std::fs::write(dir.join(&feat_name), format_features(&u.features))?;
        let _ = writeln!(
            manifest,
            "{},{},{},{}",
            u.id, score_name, feat_name, u.score.singer_id
        );
    }
    std::fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.csv");
    let text = std::fs::read_to_string(&manifest_path)?;
    let mut utterances = Vec::new();
    let mut max_singer = 0usize;
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: manifest_path.display().to_string(),
                msg: format!("line {}: expected 4 fields", ln + 1),
            });
        }
        let score_path: PathBuf = dir.join(fields[1]);
        let feat_path: PathBuf = dir.join(fields[2]);
        let score_text = std::fs::read_to_string(&score_path)?;
        let score = parse_score(&score_text, &score_path.display().to_string())?;
        let feat_text = std::fs::read_to_string(&feat_path)?;
        let features = parse_features(&feat_text, &feat_path.display().to_string())?;
        if features.frames != score.total_frames() {
            return Err(Error::Alignment(format!(
                "utterance {}: {} feature frames but score spans {}",
                fields[0],
                features.frames,
                score.total_frames()
            )));
        }
        max_singer = max_singer.max(score.singer_id);
        utterances.push(Utterance {
            id: fields[0].to_string(),
            score,
            features,
        });
    }
    Ok(Dataset {
        n_singers: max_singer + 1,
        utterances,
    })
}
