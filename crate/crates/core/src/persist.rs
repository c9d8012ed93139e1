//! Checkpoint files and atomic writes.
//!
//! Layout, integers little-endian:
//! `"SCIM"` | version u32 | header length u32 | JSON header | payload.
//! The payload is every tensor as f32 in manifest order; the header carries
//! each tensor's name, shape, byte offset and SHA-256.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{Init, Network, NetworkProfile, INIT_STD, REID_INIT};
use crate::optim::{AdamState, SgdState};
use crate::orchestrator::{DomainOptimizers, GanTrainer, Registry, TrainerState};
use crate::reid::{LabelMap, ReidLossReport, ReidSettings, ReidTrainer};
use crate::rng::Rng;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SCIM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    manifest: Vec<ManifestEntry>,
    payload_bytes: u64,
    meta: serde_json::Value,
}

/// Named tensors plus free-form metadata (config snapshot, counters, states).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format { offset: 0, message: format!("checkpoint has no tensor {name}") })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut manifest = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let start = payload.len();
            for &v in t.data() {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
            manifest.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: start as u64,
                sha256: sha256_hex(&payload[start..]),
            });
        }
        let header = serde_json::to_vec(&Header { manifest, payload_bytes: payload.len() as u64, meta: self.meta.clone() })?;
        let mut out = Vec::with_capacity(12 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Format { offset: 0, message: "file shorter than the fixed preamble".into() });
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format { offset: 0, message: "bad magic, expected SCIM".into() });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header_end = 12usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or(Error::Format { offset: 8, message: "header runs past end of file".into() })?;
        let header: Header = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| Error::Format { offset: 12, message: format!("header: {e}") })?;
        let payload = &bytes[header_end..];
        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(header.manifest.len());
        for e in &header.manifest {
            let n: usize = e.shape.iter().product();
            if e.offset != expected {
                return Err(Error::Format {
                    offset: header_end as u64 + e.offset,
                    message: format!("tensor {} is not contiguous with its predecessor", e.name),
                });
            }
            let end = e.offset as usize + 4 * n;
            expected = end as u64;
            let Some(raw) = payload.get(e.offset as usize..end) else {
                return Err(Error::Checksum { tensor: e.name.clone() });
            };
            if sha256_hex(raw) != e.sha256 {
                return Err(Error::Checksum { tensor: e.name.clone() });
            }
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
            tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
        }
        if expected != header.payload_bytes || payload.len() as u64 != header.payload_bytes {
            return Err(Error::Format {
                offset: header_end as u64,
                message: format!("payload is {} bytes, manifest describes {}", payload.len(), header.payload_bytes),
            });
        }
        Ok(Self { meta: header.meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

fn push_network(out: &mut Vec<(String, Tensor)>, prefix: &str, net: &Network) {
    for p in net.params() {
        out.push((format!("{prefix}.{}", p.name), p.value.clone()));
    }
}

fn push_moments(out: &mut Vec<(String, Tensor)>, prefix: &str, net: &Network, moments: &[(&str, &[Vec<f64>])]) -> Result<()> {
    for (label, m) in moments {
        for (p, values) in net.params().iter().zip(m.iter()) {
            out.push((format!("{prefix}.{label}.{}", p.name), Tensor::new(p.value.shape().to_vec(), values.clone())?));
        }
    }
    Ok(())
}

fn restore_network(ck: &Checkpoint, prefix: &str, net: &mut Network) -> Result<()> {
    for p in net.params_mut() {
        let t = ck.tensor(&format!("{prefix}.{}", p.name))?;
        if t.shape() != p.value.shape() {
            return Err(Error::shape("checkpoint", format!("{prefix}.{}: {:?} vs {:?}", p.name, t.shape(), p.value.shape())));
        }
        p.value = t.clone();
    }
    Ok(())
}

fn restore_moments(ck: &Checkpoint, prefix: &str, label: &str, net: &Network) -> Result<Vec<Vec<f64>>> {
    net.params()
        .iter()
        .map(|p| Ok(ck.tensor(&format!("{prefix}.{label}.{}", p.name))?.data().to_vec()))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct GanMeta {
    kind: String,
    config: serde_json::Value,
    profile: NetworkProfile,
    n_domains: usize,
    init_std: f64,
    epoch: usize,
    trainer: TrainerState,
    adam: Vec<[AdamMeta; 3]>,
    rng: serde_json::Value,
}

fn adam_meta(s: &AdamState) -> AdamMeta {
    AdamMeta { beta1: s.beta1, beta2: s.beta2, eps: s.eps, step: s.step }
}

/// All randomness is derived from the seed per purpose and position, so the
/// seed and cursor are the whole generator state.
fn rng_note(seed: u64) -> serde_json::Value {
    serde_json::json!({
        "seed": seed,
        "derivation": "chacha8(sha256(seed_le || label || index_le))",
        "probe": Rng::new(seed).state(),
    })
}

impl GanTrainer {
    pub fn to_checkpoint(&self, config: serde_json::Value) -> Result<Checkpoint> {
        let mut tensors = Vec::new();
        for (d, opt) in self.registry.domains().iter().zip(&self.optimizers) {
            for (role, net, state) in [
                ("encoder", &d.encoder, &opt.encoder),
                ("decoder", &d.decoder, &opt.decoder),
                ("discriminator", &d.discriminator, &opt.discriminator),
            ] {
                let prefix = format!("domain{}.{role}", d.domain_id);
                push_network(&mut tensors, &prefix, net);
                push_moments(&mut tensors, &prefix, net, &[("adam_m", &state.m), ("adam_v", &state.v)])?;
            }
        }
        let meta = GanMeta {
            kind: "gan".into(),
            config,
            profile: self.registry.profile().clone(),
            n_domains: self.registry.n_domains(),
            init_std: INIT_STD,
            epoch: self.state.cursor.epoch,
            trainer: self.state.clone(),
            adam: self
                .optimizers
                .iter()
                .map(|o| [adam_meta(&o.encoder), adam_meta(&o.decoder), adam_meta(&o.discriminator)])
                .collect(),
            rng: rng_note(self.state.settings.seed),
        };
        Ok(Checkpoint { meta: serde_json::to_value(meta)?, tensors })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: GanMeta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::Format { offset: 12, message: format!("not a translation checkpoint: {e}") })?;
        if meta.kind != "gan" || meta.adam.len() != meta.n_domains {
            return Err(Error::Format { offset: 12, message: "not a translation checkpoint".into() });
        }
        let mut registry = Registry::new(meta.profile, meta.n_domains, meta.trainer.settings.seed)?;
        let mut optimizers = Vec::with_capacity(meta.n_domains);
        for (d, adam) in meta.adam.iter().enumerate() {
            let c = registry.domain_mut(d)?;
            let mut states = Vec::with_capacity(3);
            for (role, net, am) in [
                ("encoder", &mut c.encoder, &adam[0]),
                ("decoder", &mut c.decoder, &adam[1]),
                ("discriminator", &mut c.discriminator, &adam[2]),
            ] {
                let prefix = format!("domain{d}.{role}");
                restore_network(ck, &prefix, net)?;
                states.push(AdamState {
                    beta1: am.beta1,
                    beta2: am.beta2,
                    eps: am.eps,
                    step: am.step,
                    m: restore_moments(ck, &prefix, "adam_m", net)?,
                    v: restore_moments(ck, &prefix, "adam_v", net)?,
                });
            }
            let discriminator = states.pop().expect("three states");
            let decoder = states.pop().expect("three states");
            let encoder = states.pop().expect("three states");
            optimizers.push(DomainOptimizers { encoder, decoder, discriminator });
        }
        Ok(Self { registry, optimizers, state: meta.trainer })
    }

    /// Config snapshot stored with a checkpoint.
    pub fn checkpoint_config(ck: &Checkpoint) -> Option<&serde_json::Value> {
        ck.meta.get("config")
    }
}

#[derive(Serialize, Deserialize)]
struct ReidMeta {
    kind: String,
    config: serde_json::Value,
    profile: NetworkProfile,
    init: Init,
    labels: LabelMap,
    settings: ReidSettings,
    step: usize,
    sgd_momentum: f64,
    sgd_step: u64,
    history: Vec<ReidLossReport>,
    rng: serde_json::Value,
}

impl ReidTrainer {
    pub fn to_checkpoint(&self, profile: &NetworkProfile, config: serde_json::Value) -> Result<Checkpoint> {
        let mut tensors = Vec::new();
        let net = self.backbone.network();
        push_network(&mut tensors, "backbone", net);
        push_moments(&mut tensors, "backbone", net, &[("sgd_velocity", &self.optimizer.velocity)])?;
        let meta = ReidMeta {
            kind: "reid".into(),
            config,
            profile: profile.clone(),
            init: REID_INIT,
            labels: self.labels.clone(),
            settings: self.settings.clone(),
            step: self.step,
            sgd_momentum: self.optimizer.momentum,
            sgd_step: self.optimizer.step,
            history: self.history.clone(),
            rng: rng_note(self.settings.seed),
        };
        Ok(Checkpoint { meta: serde_json::to_value(meta)?, tensors })
    }

    /// Returns the trainer and the profile it was built with.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, NetworkProfile)> {
        let meta: ReidMeta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::Format { offset: 12, message: format!("not a re-identification checkpoint: {e}") })?;
        if meta.kind != "reid" {
            return Err(Error::Format { offset: 12, message: "not a re-identification checkpoint".into() });
        }
        let mut backbone = crate::nn::build_reid_backbone(&meta.profile, meta.labels.len(), &mut Rng::new(0))?;
        restore_network(ck, "backbone", backbone.network_mut())?;
        let velocity = restore_moments(ck, "backbone", "sgd_velocity", backbone.network())?;
        let optimizer = SgdState { momentum: meta.sgd_momentum, step: meta.sgd_step, velocity };
        Ok((
            Self { backbone, optimizer, labels: meta.labels, settings: meta.settings, step: meta.step, history: meta.history },
            meta.profile,
        ))
    }
}
