//! Musical-score frontend: score sequences, embedding tables, positional
//! encoding and the score file format.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::param::Parameter;
use crate::real::{real, Real};

pub const PHONEME_VOCAB: usize = 71;
pub const PITCH_VOCAB: usize = 84;
pub const SCORE_EMBED_DIM: usize = 384;
pub const SINGER_EMBED_DIM: usize = 64;

/// Frames per sequence cap: 10 s at a 15 ms frame period.
pub const MAX_FRAMES: usize = 667;
pub const FRAME_PERIOD_MS: f64 = 15.0;

const EMBED_INIT_BOUND: f64 = 0.05;

/// Mapping from MIDI note numbers to contiguous pitch vocabulary indices.
/// The default covers the 88-key range minus the top four notes: 21..=104.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MidiNoteMap {
    pub notes: Vec<u8>,
}

impl Default for MidiNoteMap {
    fn default() -> Self {
        MidiNoteMap {
            notes: (21u8..21 + PITCH_VOCAB as u8).collect(),
        }
    }
}

impl MidiNoteMap {
    pub fn index_of(&self, midi: u8) -> Option<usize> {
        self.notes.iter().position(|&n| n == midi)
    }

    pub fn midi_of(&self, index: usize) -> Option<u8> {
        self.notes.get(index).copied()
    }
}

/// One scored utterance: aligned phoneme / pitch / duration triples plus the
/// singer identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSequence {
    pub phonemes: Vec<usize>,
    pub pitches: Vec<usize>,
    pub durations: Vec<usize>,
    pub singer_id: usize,
}

impl ScoreSequence {
    pub fn new(
        phonemes: Vec<usize>,
        pitches: Vec<usize>,
        durations: Vec<usize>,
        singer_id: usize,
    ) -> Result<Self> {
        if phonemes.len() != pitches.len() || phonemes.len() != durations.len() {
            return Err(Error::Validation(format!(
                "score arrays disagree: {} phonemes, {} pitches, {} durations",
                phonemes.len(),
                pitches.len(),
                durations.len()
            )));
        }
        if phonemes.is_empty() {
            return Err(Error::Validation("empty score sequence".into()));
        }
        for &p in &phonemes {
            if p >= PHONEME_VOCAB {
                return Err(Error::Vocab {
                    what: "phoneme",
                    index: p,
                    size: PHONEME_VOCAB,
                });
            }
        }
        for &p in &pitches {
            if p >= PITCH_VOCAB {
                return Err(Error::Vocab {
                    what: "pitch",
                    index: p,
                    size: PITCH_VOCAB,
                });
            }
        }
        if durations.iter().any(|&d| d == 0) {
            return Err(Error::Validation("zero phoneme duration".into()));
        }
        let total: usize = durations.iter().sum();
        if total > MAX_FRAMES {
            return Err(Error::Validation(format!(
                "sequence of {total} frames exceeds the {MAX_FRAMES}-frame cap"
            )));
        }
        Ok(ScoreSequence {
            phonemes,
            pitches,
            durations,
            singer_id,
        })
    }

    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.durations.iter().sum()
    }
}

/// Trainable embedding tables for phonemes, note pitches and singers.
#[derive(Debug, Clone)]
pub struct EmbeddingTables<T: Real> {
    pub phoneme: Parameter<T>,
    pub pitch: Parameter<T>,
    pub singer: Parameter<T>,
}

impl<T: Real> EmbeddingTables<T> {
    pub fn new(n_singers: usize, rng: &mut impl Rng) -> Self {
        EmbeddingTables {
            phoneme: Parameter::uniform(
                "tables.phoneme",
                &[PHONEME_VOCAB, SCORE_EMBED_DIM],
                EMBED_INIT_BOUND,
                rng,
            ),
            pitch: Parameter::uniform(
                "tables.pitch",
                &[PITCH_VOCAB, SCORE_EMBED_DIM],
                EMBED_INIT_BOUND,
                rng,
            ),
            singer: Parameter::uniform(
                "tables.singer",
                &[n_singers, SINGER_EMBED_DIM],
                EMBED_INIT_BOUND,
                rng,
            ),
        }
    }

    pub fn n_singers(&self) -> usize {
        self.singer.shape[0]
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.phoneme, &self.pitch, &self.singer]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.phoneme, &mut self.pitch, &mut self.singer]
    }
}

/// Sinusoidal positional encoding: PE[2i] = sin(pos / 10000^(2i/dim)),
/// PE[2i+1] = cos(same). `dim` must be even.
pub fn positional_encoding<T: Real>(position: usize, dim: usize) -> Result<Vec<T>> {
    if dim % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding dimension must be even, got {dim}"
        )));
    }
    let mut out = Vec::with_capacity(dim);
    let pos = position as f64;
    for i in 0..dim / 2 {
        let angle = pos / 10000f64.powf(2.0 * i as f64 / dim as f64);
        out.push(real::<T>(angle.sin()));
        out.push(real::<T>(angle.cos()));
    }
    Ok(out)
}

/// Stacked positional encodings for positions 0..rows as a [rows, dim] leaf.
pub fn positional_encoding_matrix<T: Real>(
    graph: &Graph<T>,
    rows: usize,
    dim: usize,
) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(rows * dim);
    for pos in 0..rows {
        data.extend(positional_encoding::<T>(pos, dim)?);
    }
    graph.leaf(data, &[rows, dim])
}

/// Embedded encoder input: phoneme embedding + pitch embedding + positional
/// encoding, summed element-wise per position. Output [len, 384].
pub fn encode_score_input<T: Real>(
    graph: &Graph<T>,
    seq: &ScoreSequence,
    tables: &EmbeddingTables<T>,
) -> Result<Tensor<T>> {
    let phon = graph.param(&tables.phoneme).embed(&seq.phonemes, "phoneme")?;
    let pitch = graph.param(&tables.pitch).embed(&seq.pitches, "pitch")?;
    let pe = positional_encoding_matrix(graph, seq.len(), SCORE_EMBED_DIM)?;
    phon.add(&pitch)?.add(&pe)
}

/// Trainable singer embedding row for one singer id. Output [64].
pub fn lookup_singer<T: Real>(
    graph: &Graph<T>,
    singer_id: usize,
    tables: &EmbeddingTables<T>,
) -> Result<Tensor<T>> {
    let n = tables.n_singers();
    if singer_id >= n {
        return Err(Error::Vocab {
            what: "singer",
            index: singer_id,
            size: n,
        });
    }
    graph
        .param(&tables.singer)
        .embed(&[singer_id], "singer")?
        .reshape(&[SINGER_EMBED_DIM])
}

// ---------------------------------------------------------------------------
// Score file format: a `singer <id>` header line followed by one
// `phoneme_id pitch_id duration_frames` line per phoneme. A JSON rendering
// of the same fields is accepted interchangeably.
// ---------------------------------------------------------------------------

pub fn format_score(seq: &ScoreSequence) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "singer {}", seq.singer_id);
    for i in 0..seq.len() {
        let _ = writeln!(s, "{} {} {}", seq.phonemes[i], seq.pitches[i], seq.durations[i]);
    }
    s
}

pub fn parse_score(text: &str, origin: &str) -> Result<ScoreSequence> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        return serde_json::from_str::<ScoreSequence>(trimmed)
            .map_err(|e| Error::Parse {
                path: origin.to_string(),
                msg: e.to_string(),
            })
            .and_then(|s| {
                ScoreSequence::new(s.phonemes, s.pitches, s.durations, s.singer_id)
            });
    }
    let mut singer = None;
    let mut phonemes = Vec::new();
    let mut pitches = Vec::new();
    let mut durations = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let first = parts.next().unwrap();
        if first == "singer" {
            let id = parts
                .next()
                .and_then(|v| v.parse::<usize>().ok())
                .ok_or_else(|| Error::Parse {
                    path: origin.to_string(),
                    msg: format!("line {}: bad singer header", ln + 1),
                })?;
            singer = Some(id);
            continue;
        }
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.and_then(|v| v.parse::<usize>().ok())
                .ok_or_else(|| Error::Parse {
                    path: origin.to_string(),
                    msg: format!("line {}: expected `phoneme pitch duration`", ln + 1),
                })
        };
        phonemes.push(parse(Some(first))?);
        pitches.push(parse(parts.next())?);
        durations.push(parse(parts.next())?);
    }
    let singer = singer.ok_or_else(|| Error::Parse {
        path: origin.to_string(),
        msg: "missing `singer <id>` header".into(),
    })?;
    ScoreSequence::new(phonemes, pitches, durations, singer)
}

pub fn write_score_file(seq: &ScoreSequence, path: &Path) -> Result<()> {
    std::fs::write(path, format_score(seq))?;
    Ok(())
}

pub fn read_score_file(path: &Path) -> Result<ScoreSequence> {
    let text = std::fs::read_to_string(path)?;
    parse_score(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq() -> ScoreSequence {
        ScoreSequence::new(vec![1, 2, 3], vec![10, 20, 30], vec![2, 1, 3], 4).unwrap()
    }

    #[test]
    fn pe_position_zero_alternates() {
        let pe = positional_encoding::<f64>(0, 8).unwrap();
        assert_eq!(pe, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn pe_first_component_is_plain_sine() {
        for pos in [1usize, 3, 17] {
            let pe = positional_encoding::<f64>(pos, 4).unwrap();
            assert_eq!(pe[0], (pos as f64).sin());
        }
    }

    #[test]
    fn pe_bounded() {
        for pos in [0usize, 1, 999, 1_000_000] {
            for v in positional_encoding::<f64>(pos, 16).unwrap() {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn pe_odd_dim_rejected() {
        assert!(matches!(
            positional_encoding::<f64>(0, 7),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn encode_zero_tables_gives_pure_positional() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tables = EmbeddingTables::<f64>::new(7, &mut rng);
        for p in tables.params_mut() {
            for v in p.data.iter_mut() {
                *v = 0.0;
            }
        }
        let g = Graph::<f64>::eval();
        let out = encode_score_input(&g, &seq(), &tables).unwrap();
        assert_eq!(out.shape(), &[3, SCORE_EMBED_DIM]);
        let vals = out.value();
        for (t, chunk) in vals.chunks(SCORE_EMBED_DIM).enumerate() {
            let pe = positional_encoding::<f64>(t, SCORE_EMBED_DIM).unwrap();
            assert_eq!(chunk, &pe[..]);
        }
    }

    #[test]
    fn encode_single_token_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tables = EmbeddingTables::<f64>::new(7, &mut rng);
        let s = ScoreSequence::new(vec![5], vec![6], vec![1], 0).unwrap();
        let g = Graph::<f64>::eval();
        let out = encode_score_input(&g, &s, &tables).unwrap();
        assert_eq!(out.shape(), &[1, 384]);
    }

    #[test]
    fn encode_order_differs_only_by_positional_term() {
        // Same tokens in two orders: subtracting PE leaves permuted rows.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tables = EmbeddingTables::<f64>::new(7, &mut rng);
        let a = ScoreSequence::new(vec![3, 9], vec![1, 2], vec![1, 1], 0).unwrap();
        let b = ScoreSequence::new(vec![9, 3], vec![2, 1], vec![1, 1], 0).unwrap();
        let g = Graph::<f64>::eval();
        let residual = |s: &ScoreSequence| -> Vec<Vec<f64>> {
            let out = encode_score_input(&g, s, &tables).unwrap().value();
            out.chunks(SCORE_EMBED_DIM)
                .enumerate()
                .map(|(t, c)| {
                    let pe = positional_encoding::<f64>(t, SCORE_EMBED_DIM).unwrap();
                    c.iter().zip(pe).map(|(x, p)| x - p).collect()
                })
                .collect()
        };
        let ra = residual(&a);
        let rb = residual(&b);
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(u, v)| (u - v).abs() < 1e-9);
        assert!(close(&ra[0], &rb[1]));
        assert!(close(&ra[1], &rb[0]));
    }

    #[test]
    fn singer_lookup_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tables = EmbeddingTables::<f64>::new(7, &mut rng);
        assert_eq!(tables.singer.shape, vec![7, 64]);
        let g = Graph::<f64>::eval();
        let a = lookup_singer(&g, 3, &tables).unwrap();
        let b = lookup_singer(&g, 3, &tables).unwrap();
        assert_eq!(a.value(), b.value());
        assert_eq!(a.shape(), &[64]);
        assert!(matches!(
            lookup_singer(&g, 7, &tables),
            Err(Error::Vocab { index: 7, size: 7, .. })
        ));
    }

    #[test]
    fn singer_gradient_is_one_hot_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tables = EmbeddingTables::<f64>::new(3, &mut rng);
        let g = Graph::<f64>::eval();
        let emb = lookup_singer(&g, 1, &tables).unwrap();
        let loss = emb.sum_all();
        g.backward(&loss).unwrap();
        let grad = g.param_grad(&tables.singer).unwrap();
        for (i, v) in grad.iter().enumerate() {
            let row = i / SINGER_EMBED_DIM;
            assert_eq!(*v, if row == 1 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn embedding_gradient_sparsity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tables = EmbeddingTables::<f64>::new(2, &mut rng);
        let g = Graph::<f64>::eval();
        let out = encode_score_input(&g, &seq(), &tables).unwrap();
        g.backward(&out.sum_all()).unwrap();
        let grad = g.param_grad(&tables.phoneme).unwrap();
        for (i, v) in grad.iter().enumerate() {
            let row = i / SCORE_EMBED_DIM;
            let used = [1usize, 2, 3].contains(&row);
            assert_eq!(*v != 0.0, used, "row {row}");
        }
    }

    #[test]
    fn score_text_round_trip() {
        let s = seq();
        let text = format_score(&s);
        let parsed = parse_score(&text, "mem").unwrap();
        assert_eq!(parsed, s);
    }

    #[test]
    fn score_json_accepted() {
        let s = seq();
        let json = serde_json::to_string(&s).unwrap();
        let parsed = parse_score(&json, "mem").unwrap();
        assert_eq!(parsed, s);
    }

    #[test]
    fn score_rejects_out_of_vocab() {
        assert!(matches!(
            ScoreSequence::new(vec![71], vec![0], vec![1], 0),
            Err(Error::Vocab { index: 71, size: 71, .. })
        ));
        assert!(matches!(
            ScoreSequence::new(vec![0], vec![84], vec![1], 0),
            Err(Error::Vocab { index: 84, size: 84, .. })
        ));
    }

    #[test]
    fn score_rejects_frame_budget_overflow() {
        let n = 40;
        let r = ScoreSequence::new(vec![0; n], vec![0; n], vec![20; n], 0);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn midi_map_default_covers_84_notes() {
        let map = MidiNoteMap::default();
        assert_eq!(map.notes.len(), PITCH_VOCAB);
        assert_eq!(map.index_of(21), Some(0));
        assert_eq!(map.index_of(104), Some(83));
        assert_eq!(map.index_of(105), None);
    }
}
