//! Parameter checkpoints: a binary container holding every parameter's name,
//! shape, values and Adam state, the spectral-norm estimates, and the MIDI
//! note mapping. Header-versioned as "ASVS-CKPT-1".

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::score::MidiNoteMap;
use crate::trainer::TrainState;

pub const MAGIC: &str = "ASVS-CKPT-1";

/// Everything persisted for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub system_id: u8,
    pub n_singers: u32,
    pub midi_map: MidiNoteMap,
    pub params: Vec<ParamRecord>,
    pub sn_states: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    put_u64(buf, vs.len() as u64);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse {
                path: self.path.clone(),
                msg: "checkpoint truncated".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let s = self.take(n)?;
        String::from_utf8(s.to_vec()).map_err(|_| Error::Parse {
            path: self.path.clone(),
            msg: "invalid utf-8 in checkpoint".into(),
        })
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    /// Snapshot a training state (parameter values are widened to f64).
    pub fn from_state<T: Real>(state: &TrainState<T>, midi_map: &MidiNoteMap) -> Self {
        let params = state
            .all_params()
            .into_iter()
            .map(|p| ParamRecord {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.data.iter().map(|v| v.as_f64()).collect(),
                m: p.m.iter().map(|v| v.as_f64()).collect(),
                v: p.v.iter().map(|v| v.as_f64()).collect(),
                step: p.step,
            })
            .collect();
        let sn_states = state
            .sn_states()
            .into_iter()
            .map(|(name, sn)| (name, sn.u.iter().map(|v| v.as_f64()).collect()))
            .collect();
        Checkpoint {
            system_id: state.system.system_id,
            n_singers: state.generator.tables.n_singers() as u32,
            midi_map: midi_map.clone(),
            params,
            sn_states,
        }
    }

    /// Write parameters and spectral states back into a compatible state.
    /// Every record must match a parameter by name and shape, and no model
    /// parameter may be left unfilled.
    pub fn restore_state<T: Real>(&self, state: &mut TrainState<T>) -> Result<()> {
        use std::collections::HashMap;
        let mut by_name: HashMap<&str, &ParamRecord> =
            self.params.iter().map(|r| (r.name.as_str(), r)).collect();
        for p in state.all_params_mut() {
            let rec = by_name.remove(p.name.as_str()).ok_or_else(|| {
                Error::Invariant(format!("checkpoint missing parameter {}", p.name))
            })?;
            if rec.shape != p.shape {
                return Err(Error::Invariant(format!(
                    "checkpoint shape {:?} does not match parameter {} {:?}",
                    rec.shape, p.name, p.shape
                )));
            }
            p.restore(
                rec.data.iter().map(|&v| T::from_f64(v)).collect(),
                rec.m.iter().map(|&v| T::from_f64(v)).collect(),
                rec.v.iter().map(|&v| T::from_f64(v)).collect(),
                rec.step,
            )?;
        }
        if !by_name.is_empty() {
            let extra: Vec<&str> = by_name.keys().copied().collect();
            return Err(Error::Invariant(format!(
                "checkpoint has {} unknown parameters (e.g. {})",
                extra.len(),
                extra[0]
            )));
        }
        let sn_by_name: HashMap<&str, &Vec<f64>> = self
            .sn_states
            .iter()
            .map(|(n, u)| (n.as_str(), u))
            .collect();
        for (name, sn) in state.sn_states_mut() {
            if let Some(u) = sn_by_name.get(name.as_str()) {
                if u.len() == sn.u.len() {
                    sn.u = u.iter().map(|&v| T::from_f64(v)).collect();
                }
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC.as_bytes());
        buf.push(b'\n');
        buf.push(self.system_id);
        put_u32(&mut buf, self.n_singers);
        put_u32(&mut buf, self.midi_map.notes.len() as u32);
        buf.extend_from_slice(&self.midi_map.notes);
        put_u32(&mut buf, self.params.len() as u32);
        for p in &self.params {
            put_str(&mut buf, &p.name);
            put_u32(&mut buf, p.shape.len() as u32);
            for &d in &p.shape {
                put_u64(&mut buf, d as u64);
            }
            put_f64s(&mut buf, &p.data);
            put_f64s(&mut buf, &p.m);
            put_f64s(&mut buf, &p.v);
            put_u64(&mut buf, p.step);
        }
        put_u32(&mut buf, self.sn_states.len() as u32);
        for (name, u) in &self.sn_states {
            put_str(&mut buf, name);
            put_f64s(&mut buf, u);
        }
        buf
    }

    pub fn decode(buf: &[u8], origin: &str) -> Result<Self> {
        let mut r = Reader {
            buf,
            pos: 0,
            path: origin.to_string(),
        };
        let header = r.take(MAGIC.len() + 1)?;
        if &header[..MAGIC.len()] != MAGIC.as_bytes() || header[MAGIC.len()] != b'\n' {
            return Err(Error::Parse {
                path: origin.to_string(),
                msg: format!(
                    "bad checkpoint header (expected {MAGIC}); refusing to load"
                ),
            });
        }
        let system_id = r.take(1)?[0];
        let n_singers = r.u32()?;
        let n_notes = r.u32()? as usize;
        let notes = r.take(n_notes)?.to_vec();
        let n_params = r.u32()? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let data = r.f64s()?;
            let m = r.f64s()?;
            let v = r.f64s()?;
            let step = r.u64()?;
            let numel: usize = shape.iter().product();
            if data.len() != numel || m.len() != numel || v.len() != numel {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    msg: format!("parameter {name}: payload does not match shape {shape:?}"),
                });
            }
            params.push(ParamRecord {
                name,
                shape,
                data,
                m,
                v,
                step,
            });
        }
        let n_sn = r.u32()? as usize;
        let mut sn_states = Vec::with_capacity(n_sn);
        for _ in 0..n_sn {
            let name = r.string()?;
            let u = r.f64s()?;
            sn_states.push((name, u));
        }
        Ok(Checkpoint {
            system_id,
            n_singers,
            midi_map: MidiNoteMap { notes },
            params,
            sn_states,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Checkpoint::decode(&buf, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::SystemConfig;
    use crate::trainer::TrainOptions;

    fn state(seed: u64) -> TrainState<f32> {
        TrainState::new(
            SystemConfig::system(5).unwrap(),
            TrainOptions {
                seed,
                ..TrainOptions::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_bitwise() {
        let st = state(4);
        let ck = Checkpoint::from_state(&st, &MidiNoteMap::default());
        let decoded = Checkpoint::decode(&ck.encode(), "mem").unwrap();
        assert_eq!(ck, decoded);
    }

    #[test]
    fn restore_reproduces_parameters() {
        let src = state(4);
        let ck = Checkpoint::from_state(&src, &MidiNoteMap::default());
        let mut dst = state(99); // different init
        ck.restore_state(&mut dst).unwrap();
        for (a, b) in src.all_params().iter().zip(dst.all_params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let st = state(4);
        let mut bytes = Checkpoint::from_state(&st, &MidiNoteMap::default()).encode();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::decode(&bytes, "mem"),
            Err(Error::Parse { .. })
        ));
    }
}
