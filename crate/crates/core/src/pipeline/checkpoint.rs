//! `NTNT` container: magic, u32 version, u64 manifest length, JSON manifest,
//! then every tensor as little-endian f32 in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{DenoiserConfig, DenoiserParams, ParamSet, TranslatorConfig, TranslatorParams};
use crate::rand_noise::Prng;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NTNT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// `"translator"` or `"denoiser"`.
    pub kind: String,
    pub architecture: serde_json::Value,
    pub config: serde_json::Value,
    pub iteration: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub manifest: Manifest,
    pub tensors: Vec<Tensor<f32>>,
}

impl ModelCheckpoint {
    pub fn from_params(
        kind: &str,
        architecture: serde_json::Value,
        config: serde_json::Value,
        iteration: usize,
        params: &ParamSet<f32>,
    ) -> Self {
        let tensors = params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_owned(),
                shape: t.shape().to_vec(),
            })
            .collect();
        ModelCheckpoint {
            manifest: Manifest {
                kind: kind.to_owned(),
                architecture,
                config,
                iteration,
                tensors,
            },
            tensors: params.tensors().to_vec(),
        }
    }

    /// Copies the tensors into `params`, checking names and shapes.
    pub fn restore_into(&self, params: &mut ParamSet<f32>) -> Result<()> {
        if self.manifest.tensors.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, network expects {}",
                self.manifest.tensors.len(),
                params.len()
            )));
        }
        for (entry, name) in self.manifest.tensors.iter().zip(params.names()) {
            if &entry.name != name {
                return Err(Error::Checkpoint(format!("tensor {} where {name} was expected", entry.name)));
            }
        }
        params.load(self.tensors.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let payload: usize = self.tensors.iter().map(Tensor::len).sum();
        let mut out = Vec::with_capacity(16 + manifest.len() + 4 * payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing NTNT magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < mlen {
            return Err(bad("truncated manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen])?;
        let payload = &body[mlen..];
        let expected: usize = manifest.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
        if payload.len() != 4 * expected {
            return Err(bad(format!(
                "payload is {} bytes, manifest describes {}",
                payload.len(),
                4 * expected
            )));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let tensors = manifest
            .tensors
            .iter()
            .map(|e| {
                let n = e.shape.iter().product();
                Tensor::new(e.shape.clone(), floats.by_ref().take(n).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelCheckpoint { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        ModelCheckpoint::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

fn expect_kind(ck: &ModelCheckpoint, kind: &str) -> Result<()> {
    if ck.manifest.kind != kind {
        return Err(Error::Checkpoint(format!(
            "expected a {kind} checkpoint, found {}",
            ck.manifest.kind
        )));
    }
    Ok(())
}

/// Rebuilds the denoiser described by the manifest and loads its weights.
pub fn denoiser_from_checkpoint(ck: &ModelCheckpoint) -> Result<DenoiserParams<f32>> {
    expect_kind(ck, "denoiser")?;
    let cfg: DenoiserConfig = serde_json::from_value(ck.manifest.architecture.clone())?;
    let mut net = DenoiserParams::new(cfg, &mut Prng::new(0))?;
    ck.restore_into(&mut net.params)?;
    Ok(net)
}

pub fn translator_from_checkpoint(ck: &ModelCheckpoint) -> Result<TranslatorParams<f32>> {
    expect_kind(ck, "translator")?;
    let cfg: TranslatorConfig = serde_json::from_value(ck.manifest.architecture.clone())?;
    let mut net = TranslatorParams::new(cfg, &mut Prng::new(0))?;
    ck.restore_into(&mut net.params)?;
    Ok(net)
}
