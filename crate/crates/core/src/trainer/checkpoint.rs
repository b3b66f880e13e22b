//! Binary checkpoint format.
//!
//! ```text
//! magic "DESMILCK" | version u32 | header_len u64 | JSON header
//! tensor_count u32 | per tensor: name_len u16, name, rows u64, cols u64, rows*cols f64
//! weight_count u64 | per weight: user u64, cut u32, value f64
//! rng_count u32    | per rng: stream u64, seed u64, word_pos u128
//! sha256 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian. Tensors are the model
//! parameters followed by the Adam first and second moments of each.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ParamAdam, RunMeta, TrainState, WeightTable};
use crate::data::SampleKey;
use crate::error::{CheckpointError, Error, Result};
use crate::model::{Hyperparams, ModelParams};
use crate::numerics::{AdamState, Matrix, Rng, RngState, Stream};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DESMILCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hp: Hyperparams,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    hyperparams: Hyperparams,
    q: u64,
    meta: RunMeta,
    adam: Vec<AdamMeta>,
}

const PARAM_NAMES: [&str; 4] = ["item_emb", "pos_emb", "w1", "w2"];

impl Checkpoint {
    pub fn new(hp: Hyperparams, state: TrainState) -> Self {
        Self { hp, state }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let s = &self.state;
        let header = Header {
            hyperparams: self.hp.clone(),
            q: s.q,
            meta: s.meta.clone(),
            adam: s
                .adam
                .states()
                .iter()
                .map(|(_, a)| AdamMeta {
                    step: a.step,
                    beta1: a.beta1,
                    beta2: a.beta2,
                    eps: a.eps,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidArgument(format!("checkpoint header: {e}")))?;

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);

        let mut tensors: Vec<(String, &Matrix)> = s.params.tensors().iter().map(|(n, m)| (n.to_string(), *m)).collect();
        for (name, a) in s.adam.states() {
            tensors.push((format!("adam_m.{name}"), &a.m));
            tensors.push((format!("adam_v.{name}"), &a.v));
        }
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, m) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for x in m.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }

        out.extend_from_slice(&(s.weights.len() as u64).to_le_bytes());
        for (k, v) in s.weights.iter() {
            out.extend_from_slice(&k.user.to_le_bytes());
            out.extend_from_slice(&k.cut.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }

        let rngs = s.rng_states();
        out.extend_from_slice(&(rngs.len() as u32).to_le_bytes());
        for r in rngs {
            out.extend_from_slice(&r.stream.id().to_le_bytes());
            out.extend_from_slice(&r.seed.to_le_bytes());
            out.extend_from_slice(&r.word_pos.to_le_bytes());
        }

        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() {
            return Err(CheckpointError::Truncated.into());
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        if bytes.len() < 12 {
            return Err(CheckpointError::Truncated.into());
        }
        let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if found != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found,
                expected: CHECKPOINT_VERSION,
            }
            .into());
        }
        if bytes.len() < 12 + DIGEST_LEN {
            return Err(CheckpointError::Truncated.into());
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            // A checksum mismatch on a cut-short file is reported as truncation.
            return Err(match parse_body(bytes) {
                Err(Error::Checkpoint(CheckpointError::Truncated)) => CheckpointError::Truncated,
                _ => CheckpointError::Checksum,
            }
            .into());
        }
        match parse_body(body)? {
            (ckpt, rest) if rest == 0 => Ok(ckpt),
            (_, rest) => Err(CheckpointError::Malformed(format!("{rest} trailing bytes")).into()),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64()?;
        // Every element takes at least one byte, so a count past the end is
        // a cut-short file, not an allocation request.
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(CheckpointError::Truncated.into());
        }
        usize::try_from(n).map_err(|_| CheckpointError::Malformed(format!("{what} length {n}")).into())
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    CheckpointError::Malformed(msg.into()).into()
}

/// Parses everything after the version field; returns the unread byte count.
fn parse_body(bytes: &[u8]) -> Result<(Checkpoint, usize)> {
    let mut r = Reader { buf: bytes, pos: 12 };
    let header_len = r.len("header")?;
    let header: Header =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| malformed(format!("header: {e}")))?;
    let hp = header.hyperparams;
    hp.validate().map_err(|e| malformed(format!("hyperparameters: {e}")))?;

    let n_tensors = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors.min(64));
    for _ in 0..n_tensors {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| malformed("tensor name is not UTF-8"))?;
        let rows = r.len("rows")?;
        let cols = r.len("cols")?;
        let n = rows.checked_mul(cols).ok_or_else(|| malformed("tensor too large"))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| malformed("tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    let mut tensor = |name: &str| -> Result<Matrix> {
        let idx = tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| malformed(format!("missing tensor `{name}`")))?;
        Ok(tensors.swap_remove(idx).1)
    };
    let params = ModelParams {
        item_emb: tensor("item_emb")?,
        pos_emb: tensor("pos_emb")?,
        w1: tensor("w1")?,
        w2: tensor("w2")?,
    };
    params.check_shapes(&hp).map_err(|e| malformed(e.to_string()))?;
    if header.adam.len() != PARAM_NAMES.len() {
        return Err(malformed("adam metadata must cover four tensors"));
    }
    let mut adam = Vec::with_capacity(4);
    for (name, meta) in PARAM_NAMES.iter().zip(&header.adam) {
        adam.push(AdamState {
            m: tensor(&format!("adam_m.{name}"))?,
            v: tensor(&format!("adam_v.{name}"))?,
            step: meta.step,
            beta1: meta.beta1,
            beta2: meta.beta2,
            eps: meta.eps,
        });
    }
    if !tensors.is_empty() {
        return Err(malformed(format!("unexpected tensor `{}`", tensors[0].0)));
    }
    let mut adam = adam.into_iter();
    let adam = ParamAdam {
        item_emb: adam.next().unwrap(),
        pos_emb: adam.next().unwrap(),
        w1: adam.next().unwrap(),
        w2: adam.next().unwrap(),
    };
    for ((_, a), (_, p)) in adam.states().iter().zip(params.tensors()) {
        if a.m.shape() != p.shape() || a.v.shape() != p.shape() {
            return Err(malformed("adam moment shape differs from its parameter"));
        }
    }

    let n_weights = r.len("weight table")?;
    let mut weights = WeightTable::new();
    for _ in 0..n_weights {
        let user = r.u64()?;
        let cut = r.u32()?;
        weights.set(SampleKey { user, cut }, r.f64()?);
    }

    let n_rngs = r.u32()?;
    let mut negatives = None;
    let mut batches = None;
    for _ in 0..n_rngs {
        let id = r.u64()?;
        let stream = Stream::from_id(id).ok_or_else(|| malformed(format!("unknown rng stream {id}")))?;
        let state = RngState {
            stream,
            seed: r.u64()?,
            word_pos: r.u128()?,
        };
        match stream {
            Stream::Negatives => negatives = Some(Rng::restore(state)),
            Stream::Batches => batches = Some(Rng::restore(state)),
            other => return Err(malformed(format!("unexpected rng stream {other:?}"))),
        }
    }

    let state = TrainState {
        params,
        adam,
        weights,
        q: header.q,
        negatives_rng: negatives.ok_or_else(|| malformed("missing negatives rng"))?,
        batches_rng: batches.ok_or_else(|| malformed("missing batches rng"))?,
        meta: header.meta,
    };
    Ok((Checkpoint { hp, state }, bytes.len() - r.pos))
}
