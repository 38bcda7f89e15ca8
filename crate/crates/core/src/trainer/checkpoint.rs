//! Binary checkpoints: magic, version, JSON header, little-endian tensor
//! payload, SHA-256 of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EpochLog, PhaseState, Snapshot, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::layers::AdamState;
use crate::model::NewEntryModel;
use crate::tensor::{ParamStore, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NEWENTRY";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A complete, resumable training state.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Real> {
    pub config: TrainConfig,
    pub model: NewEntryModel<T>,
    pub state: TrainState<T>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    section: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    precision: u32,
    config: TrainConfig,
    vocab_size: usize,
    topic_vocab_size: usize,
    phase: PhaseState,
    class_weight: f64,
    tdm_adam_step: u64,
    snp_adam_step: u64,
    has_best: bool,
    log: Vec<EpochLog>,
    tensors: Vec<TensorEntry>,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn precision<T: Real>() -> u32 {
    (std::mem::size_of::<T>() * 8) as u32
}

type Section<'a, T> = (&'static str, Vec<(String, &'a Tensor<T>)>);

fn store_tables<T: Real>(s: &ParamStore<T>) -> Vec<(String, &Tensor<T>)> {
    s.iter().map(|(_, n, t)| (n.to_string(), t)).collect()
}

fn moment_tables<'a, T: Real>(s: &ParamStore<T>, m: &'a [Tensor<T>]) -> Vec<(String, &'a Tensor<T>)> {
    s.iter().map(|(_, n, _)| n.to_string()).zip(m).collect()
}

/// `(section, tables)` in serialization order.
fn sections<T: Real>(c: &Checkpoint<T>) -> Vec<Section<'_, T>> {
    let store = store_tables;
    let moments = moment_tables;
    let (m, st) = (&c.model, &c.state);
    let mut out = vec![
        ("tdm", store(&m.tdm_store)),
        ("snp", store(&m.snp_store)),
        ("tdm_adam_m", moments(&m.tdm_store, &st.tdm_adam.m)),
        ("tdm_adam_v", moments(&m.tdm_store, &st.tdm_adam.v)),
        ("snp_adam_m", moments(&m.snp_store, &st.snp_adam.m)),
        ("snp_adam_v", moments(&m.snp_store, &st.snp_adam.v)),
    ];
    if let Some(best) = &st.best {
        out.push(("best_tdm", store(&best.tdm)));
        out.push(("best_snp", store(&best.snp)));
    }
    out
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let secs = sections(self);
        let tensors = secs
            .iter()
            .flat_map(|(sec, tables)| {
                tables.iter().map(move |(n, t)| TensorEntry {
                    section: sec.to_string(),
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
            })
            .collect();
        let header = Header {
            precision: precision::<T>(),
            config: self.config.clone(),
            vocab_size: self.model.tdm.vocab,
            topic_vocab_size: self.model.tdm.topic_vocab,
            phase: self.state.phase.clone(),
            class_weight: self.state.class_weight,
            tdm_adam_step: self.state.tdm_adam.step,
            snp_adam_step: self.state.snp_adam.step,
            has_best: self.state.best.is_some(),
            log: self.state.log.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header is serializable");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, tables) in &secs {
            for (_, t) in tables {
                for &v in t.data() {
                    v.write_le(&mut out);
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fixed = CHECKPOINT_MAGIC.len() + 4 + 8;
        if bytes.len() < fixed + 32 {
            return Err(err("file is truncated"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(err("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(err(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(err("checksum mismatch; file is truncated or corrupted"));
        }
        let json_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json_end = fixed
            .checked_add(json_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| err("header length exceeds file"))?;
        let header: Header = serde_json::from_slice(&body[fixed..json_end])
            .map_err(|e| err(format!("bad header: {e}")))?;
        if header.precision != precision::<T>() {
            return Err(err(format!(
                "checkpoint holds {}-bit values, requested {}-bit",
                header.precision,
                precision::<T>()
            )));
        }

        let mut model = NewEntryModel::<T>::new(
            &header.config.model,
            header.vocab_size,
            header.topic_vocab_size,
            header.config.seed,
        )?;
        let mut state = TrainState {
            phase: header.phase,
            tdm_adam: AdamState::new(&model.tdm_store, header.config.adam(header.config.tdm_lr)),
            snp_adam: AdamState::new(&model.snp_store, header.config.adam(header.config.lr)),
            class_weight: header.class_weight,
            best: header.has_best.then(|| Snapshot {
                tdm: model.tdm_store.clone(),
                snp: model.snp_store.clone(),
            }),
            log: header.log,
        };
        state.tdm_adam.step = header.tdm_adam_step;
        state.snp_adam.step = header.snp_adam_step;

        let width = std::mem::size_of::<T>();
        let mut payload = &body[json_end..];
        let mut entries = header.tensors.iter();
        {
            let mut fill = |section: &str, names: Vec<String>, targets: Vec<&mut Tensor<T>>| -> Result<()> {
                for (name, target) in names.into_iter().zip(targets) {
                    let e = entries
                        .next()
                        .ok_or_else(|| err(format!("missing table {section}/{name}")))?;
                    if e.section != section || e.name != name || e.shape != target.shape() {
                        return Err(err(format!(
                            "layout mismatch at {section}/{name}: found {}/{} {:?}",
                            e.section, e.name, e.shape
                        )));
                    }
                    let n = target.len() * width;
                    if payload.len() < n {
                        return Err(err("payload is truncated"));
                    }
                    for (i, v) in target.data_mut().iter_mut().enumerate() {
                        *v = T::read_le(&payload[i * width..(i + 1) * width]);
                    }
                    payload = &payload[n..];
                }
                Ok(())
            };
            let names = |s: &ParamStore<T>| -> Vec<String> {
                s.iter().map(|(_, n, _)| n.to_string()).collect()
            };
            let tdm_names = names(&model.tdm_store);
            let snp_names = names(&model.snp_store);
            fill("tdm", tdm_names.clone(), model.tdm_store.values_mut().collect())?;
            fill("snp", snp_names.clone(), model.snp_store.values_mut().collect())?;
            fill("tdm_adam_m", tdm_names.clone(), state.tdm_adam.m.iter_mut().collect())?;
            fill("tdm_adam_v", tdm_names.clone(), state.tdm_adam.v.iter_mut().collect())?;
            fill("snp_adam_m", snp_names.clone(), state.snp_adam.m.iter_mut().collect())?;
            fill("snp_adam_v", snp_names.clone(), state.snp_adam.v.iter_mut().collect())?;
            if let Some(best) = state.best.as_mut() {
                fill("best_tdm", tdm_names, best.tdm.values_mut().collect())?;
                fill("best_snp", snp_names, best.snp.values_mut().collect())?;
            }
        }
        if entries.next().is_some() || !payload.is_empty() {
            return Err(err("trailing data after the last table"));
        }
        Ok(Checkpoint {
            config: header.config,
            model,
            state,
        })
    }

    /// Writes atomically through a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
