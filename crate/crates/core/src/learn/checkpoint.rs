//! Versioned binary model files.
//!
//! Layout: magic `HCCK`, format version (u32 LE), header length (u32 LE),
//! a UTF-8 JSON header, then the parameters of every network listed in the
//! header as little-endian f64, in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hierarchy::HierarchicalModel;
use super::network::{ArchConfig, ConvNet};
use super::train::{FlatModel, HyperParams};
use crate::datamodel::SchemeName;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HCCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Flat(FlatModel),
    Hierarchical(HierarchicalModel),
}

impl Model {
    pub fn classifier(&self) -> &dyn super::eval::Classifier {
        match self {
            Model::Flat(m) => m,
            Model::Hierarchical(m) => m,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Flat(_) => "flat",
            Model::Hierarchical(_) => "hierarchical",
        }
    }
}

/// Provenance stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub scheme: SchemeName,
    pub subset: String,
    pub seed: u64,
    pub hyperparams: HyperParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetworkEntry {
    role: String,
    arch: ArchConfig,
    labels: Vec<u8>,
    param_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: CheckpointMeta,
    groups: Option<Vec<Vec<u8>>>,
    networks: Vec<NetworkEntry>,
}

fn entry(role: String, m: &FlatModel) -> NetworkEntry {
    NetworkEntry {
        role,
        arch: *m.net.arch(),
        labels: m.labels.clone(),
        param_count: m.net.params().len(),
    }
}

fn networks(model: &Model) -> Vec<(String, &FlatModel)> {
    match model {
        Model::Flat(m) => vec![("flat".to_string(), m)],
        Model::Hierarchical(h) => {
            let mut v = vec![("stage1".to_string(), &h.stage1)];
            for (g, s) in h.stage2.iter().enumerate() {
                if let Some(m) = s {
                    v.push((format!("stage2.{g}"), m));
                }
            }
            v
        }
    }
}

pub fn to_bytes(model: &Model, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let nets = networks(model);
    let header = Header {
        kind: model.kind().to_string(),
        meta: meta.clone(),
        groups: match model {
            Model::Flat(_) => None,
            Model::Hierarchical(h) => Some(h.groups.clone()),
        },
        networks: nets.iter().map(|(r, m)| entry(r.clone(), m)).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * nets.iter().map(|n| n.1.net.params().len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in &nets {
        for p in m.net.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    Ok(out)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model, CheckpointMeta)> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("not a model file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;

    let mut at = 12 + hlen;
    let mut nets = Vec::with_capacity(header.networks.len());
    for n in &header.networks {
        let len = n.param_count * 8;
        let raw = bytes.get(at..at + len).ok_or_else(|| bad("truncated parameters"))?;
        at += len;
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let net = ConvNet::from_params(n.arch, params)?;
        nets.push((
            n.role.clone(),
            FlatModel {
                net,
                labels: n.labels.clone(),
            },
        ));
    }
    if at != bytes.len() {
        return Err(bad("trailing bytes after parameters"));
    }

    let model = match (header.kind.as_str(), header.groups) {
        ("flat", None) if nets.len() == 1 => Model::Flat(nets.pop().expect("one").1),
        ("hierarchical", Some(groups)) => {
            let mut it = nets.into_iter();
            let (role, stage1) = it.next().ok_or_else(|| bad("missing stage1"))?;
            if role != "stage1" {
                return Err(bad("first network must be stage1"));
            }
            let mut stage2: Vec<Option<FlatModel>> = vec![None; groups.len()];
            for (role, m) in it {
                let g: usize = role
                    .strip_prefix("stage2.")
                    .and_then(|s| s.parse().ok())
                    .filter(|&g| g < groups.len())
                    .ok_or_else(|| bad(format!("unexpected network role {role}")))?;
                stage2[g] = Some(m);
            }
            Model::Hierarchical(HierarchicalModel::new(groups, stage1, stage2)?)
        }
        (kind, _) => return Err(bad(format!("inconsistent header for kind {kind}"))),
    };
    Ok((model, header.meta))
}

pub fn save_checkpoint(path: &Path, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    fs::write(path, to_bytes(model, meta)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::hierarchy::seven_class_groups;

    fn flat(labels: Vec<u8>, seed: u64) -> FlatModel {
        let arch = HyperParams {
            conv1: 2,
            conv2: 2,
            hidden: 3,
            ..HyperParams::default()
        }
        .arch(labels.len());
        FlatModel {
            net: ConvNet::new(arch, seed).unwrap(),
            labels,
        }
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            scheme: SchemeName::SevenClass,
            subset: "all8".into(),
            seed: 3,
            hyperparams: HyperParams::default(),
        }
    }

    #[test]
    fn flat_round_trip_is_bit_exact() {
        let m = Model::Flat(flat((1..=7).collect(), 4));
        let bytes = to_bytes(&m, &meta()).unwrap();
        let (back, meta_back) = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta_back, meta());
    }

    #[test]
    fn hierarchical_round_trip() {
        let groups = seven_class_groups();
        let stage2 = groups
            .iter()
            .enumerate()
            .map(|(i, g)| (g.len() > 1).then(|| flat(g.clone(), i as u64)))
            .collect();
        let h = HierarchicalModel::new(groups, flat(vec![1, 2, 3, 4], 9), stage2).unwrap();
        let m = Model::Hierarchical(h);
        let (back, _) = from_bytes(&to_bytes(&m, &meta()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = to_bytes(&Model::Flat(flat(vec![1, 2], 1)), &meta()).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(from_bytes(b"nope").is_err());
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(from_bytes(&v).unwrap_err().to_string().contains("version"));
    }
}
