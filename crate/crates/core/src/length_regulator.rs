//! Length regulation: expands phoneme-level score encodings to frame level
//! with ground-truth durations, then assembles the decoder input.

use crate::error::{Error, Result};
use crate::graph::Tensor;
use crate::real::Real;
use crate::score::{positional_encoding_matrix, SINGER_EMBED_DIM};

/// Frames-per-phoneme alignment; `total_frames` always equals the sum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameAlignment {
    durations: Vec<usize>,
    total_frames: usize,
}

impl FrameAlignment {
    pub fn new(durations: Vec<usize>) -> Result<Self> {
        if durations.is_empty() {
            return Err(Error::Validation("empty duration list".into()));
        }
        if durations.iter().any(|&d| d == 0) {
            return Err(Error::Validation("zero phoneme duration".into()));
        }
        let total_frames = durations.iter().sum();
        Ok(FrameAlignment {
            durations,
            total_frames,
        })
    }

    pub fn durations(&self) -> &[usize] {
        &self.durations
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    /// Phoneme index owning frame `t` (cumulative-duration bracket).
    pub fn phoneme_of_frame(&self, t: usize) -> Option<usize> {
        if t >= self.total_frames {
            return None;
        }
        let mut acc = 0;
        for (i, &d) in self.durations.iter().enumerate() {
            acc += d;
            if t < acc {
                return Some(i);
            }
        }
        None
    }
}

/// Repeat encoding row i `durations[i]` times: [len, C] -> [total_frames, C].
pub fn expand<T: Real>(encoding: &Tensor<T>, align: &FrameAlignment) -> Result<Tensor<T>> {
    encoding.expand_rows(align.durations())
}

/// Frame-level condition: per frame, concat(expanded encoding, singer
/// embedding). This is also the conditional-discriminator input.
pub fn condition_sequence<T: Real>(
    expanded: &Tensor<T>,
    singer_emb: &Tensor<T>,
) -> Result<Tensor<T>> {
    if singer_emb.numel() != SINGER_EMBED_DIM {
        return Err(Error::dim(
            "condition_sequence",
            singer_emb.shape(),
            &[SINGER_EMBED_DIM],
        ));
    }
    let frames = expanded.shape()[0];
    let singer_rows = singer_emb.reshape(&[1, SINGER_EMBED_DIM])?.repeat_row(frames)?;
    expanded.concat_cols(&singer_rows)
}

/// Decoder input: concat(expanded encoding, singer embedding) plus a frame
/// position encoding over the concatenated width (384 + 64 = 448).
pub fn assemble_decoder_input<T: Real>(
    expanded: &Tensor<T>,
    singer_emb: &Tensor<T>,
) -> Result<Tensor<T>> {
    let cond = condition_sequence(expanded, singer_emb)?;
    let frames = cond.shape()[0];
    let width = cond.shape()[1];
    let pe = positional_encoding_matrix(cond.graph(), frames, width)?;
    cond.add(&pe)
}
