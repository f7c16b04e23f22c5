//! Single-file checkpoints plus a JSON metadata sidecar.
//!
//! Layout: magic `EVCK`, u32 version, u64 metadata length, metadata JSON,
//! then every tensor listed in the metadata as little-endian f32 in order.

use super::{TrainState, VariantConfig};
use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::model::{with_params, ModelConfig};
use crate::nn::{Adam, AdamConfig, ParamSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub step: u64,
    pub model: ModelConfig,
    /// `None` for pre-training checkpoints.
    pub variant: Option<VariantConfig>,
    pub config_hash: String,
    pub adam: AdamConfig,
    pub adam_steps: [u64; 2],
    /// Scorer name to parameter fingerprint.
    pub scorer_fingerprints: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub state: TrainState,
}

/// Hash of everything that fixes tensor shapes and input semantics.
pub fn config_hash(model: &ModelConfig, variant: Option<&VariantConfig>) -> String {
    let masking = variant.map(|v| v.masking.to_string());
    let key = serde_json::json!({ "model": model, "masking": masking });
    hex::encode(Sha256::digest(key.to_string().as_bytes()))
}

const GROUPS: [&str; 6] = ["gen", "disc", "gen.adam_m", "gen.adam_v", "disc.adam_m", "disc.adam_v"];

impl Checkpoint {
    pub fn new(state: TrainState, variant: Option<VariantConfig>, scorer_fingerprints: BTreeMap<String, String>) -> Self {
        let model = state.gen.config.clone();
        let mut tensors = Vec::new();
        for (group, names, arrays) in Self::groups(&state) {
            for (n, a) in names.iter().zip(arrays) {
                tensors.push(TensorEntry {
                    group: group.to_string(),
                    name: n.clone(),
                    shape: a.shape().to_vec(),
                });
            }
        }
        let meta = CheckpointMeta {
            version: CHECKPOINT_VERSION,
            step: state.step,
            config_hash: config_hash(&model, variant.as_ref()),
            model,
            variant,
            adam: state.opt_g.config,
            adam_steps: [state.opt_g.step, state.opt_d.step],
            scorer_fingerprints,
            tensors,
        };
        Self { meta, state }
    }

    fn groups(state: &TrainState) -> Vec<(&'static str, Vec<String>, Vec<&Array<f32>>)> {
        let g = &state.gen.params;
        let d = &state.disc.params;
        fn arrays(p: &ParamSet) -> Vec<&Array<f32>> {
            (0..p.len()).map(|i| p.get(i)).collect()
        }
        let gn = g.names().to_vec();
        let dn = d.names().to_vec();
        vec![
            (GROUPS[0], gn.clone(), arrays(g)),
            (GROUPS[1], dn.clone(), arrays(d)),
            (GROUPS[2], gn.clone(), state.opt_g.m.iter().collect()),
            (GROUPS[3], gn, state.opt_g.v.iter().collect()),
            (GROUPS[4], dn.clone(), state.opt_d.m.iter().collect()),
            (GROUPS[5], dn, state.opt_d.v.iter().collect()),
        ]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for (_, _, arrays) in Self::groups(&self.state) {
            for a in arrays {
                for v in a.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |r: &str| Error::Format {
            path: PathBuf::new(),
            reason: r.to_string(),
        };
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Compat(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let meta_end = 16usize.checked_add(mlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated metadata"))?;
        let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..meta_end])?;
        let mut pos = meta_end;
        let mut groups: BTreeMap<&str, (ParamSet, Vec<Array<f32>>)> = BTreeMap::new();
        for t in &meta.tensors {
            let n: usize = t.shape.iter().product();
            let end = pos + n * 4;
            if end > bytes.len() {
                return Err(bad("truncated tensor payload"));
            }
            let data = bytes[pos..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            pos = end;
            let group = GROUPS
                .iter()
                .find(|g| **g == t.group)
                .ok_or_else(|| bad(&format!("unknown tensor group {}", t.group)))?;
            let e = groups.entry(group).or_default();
            let a = Array::from_vec(&t.shape, data);
            e.0.push(t.name.clone(), a.clone());
            e.1.push(a);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after tensors"));
        }
        let mut take = |g: &str| groups.remove(g).unwrap_or_default();
        let (gen_p, _) = take(GROUPS[0]);
        let (disc_p, _) = take(GROUPS[1]);
        let (gen, disc) = with_params(&meta.model, &gen_p, &disc_p)?;
        let adam = |m: Vec<Array<f32>>, v: Vec<Array<f32>>, step: u64, p: &ParamSet| -> Result<Adam> {
            if m.len() != p.len() || v.len() != p.len() {
                return Err(Error::Compat("optimizer state does not match parameters".into()));
            }
            Ok(Adam {
                config: meta.adam,
                step,
                m,
                v,
            })
        };
        let opt_g = adam(take(GROUPS[2]).1, take(GROUPS[3]).1, meta.adam_steps[0], &gen.params)?;
        let opt_d = adam(take(GROUPS[4]).1, take(GROUPS[5]).1, meta.adam_steps[1], &disc.params)?;
        let state = TrainState {
            gen,
            disc,
            opt_g,
            opt_d,
            step: meta.step,
        };
        Ok(Self { meta, state })
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Write the container and its `.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        std::fs::write(Self::sidecar_path(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { reason, .. } => Error::Format {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    /// Reject a checkpoint built for a different model layout or masking.
    pub fn check_compatible(&self, model: &ModelConfig, variant: Option<&VariantConfig>) -> Result<()> {
        let want = config_hash(model, variant);
        if want != self.meta.config_hash {
            return Err(Error::Compat(format!(
                "checkpoint config hash {} does not match run config {want}",
                self.meta.config_hash
            )));
        }
        Ok(())
    }
}
