//! Binary checkpoints: `VNET1`, a little-endian `u64` metadata length,
//! JSON metadata, then `f32` little-endian payloads in directory order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{LayerParams, Rng, Tensor};
use crate::ranker::{ArchConfig, CategoryNet, ScoringNet};

pub const MAGIC: &[u8; 5] = b"VNET1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryShape {
    pub in_channels: usize,
    pub input_size: usize,
    pub category_dim: usize,
    pub n_categories: usize,
}

impl CategoryShape {
    fn of(net: &CategoryNet) -> Self {
        CategoryShape {
            in_channels: net.in_channels,
            input_size: net.input_size,
            category_dim: net.category_dim(),
            n_categories: net.n_categories(),
        }
    }

    fn build(&self) -> Result<CategoryNet> {
        CategoryNet::new(
            self.in_channels,
            self.input_size,
            self.category_dim,
            self.n_categories,
            &mut Rng::new(0),
        )
    }
}

/// Checkpoint metadata. `arch` is absent for a standalone category
/// classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub variant: Option<String>,
    pub arch: Option<ArchConfig>,
    pub category: Option<CategoryShape>,
    pub epoch: usize,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

fn tensors_of<'a>(layers: impl IntoIterator<Item = &'a LayerParams>) -> Vec<(String, &'a Tensor)> {
    let mut out = Vec::new();
    for l in layers {
        out.push((format!("{}.weight", l.name), &l.weight.value));
        out.push((format!("{}.bias", l.name), &l.bias.value));
    }
    out
}

fn encode(mut meta: Metadata, tensors: &[(String, &Tensor)]) -> Vec<u8> {
    let mut offset = 0;
    meta.tensors = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 4 * t.len();
            e
        })
        .collect();
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn decode(bytes: &[u8]) -> Result<(Metadata, &[u8])> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Corrupt("bad magic (expected VNET1)".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 8 {
        return Err(Error::Corrupt("truncated metadata length".into()));
    }
    let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let rest = &rest[8..];
    if rest.len() < len {
        return Err(Error::Corrupt(format!("metadata claims {len} bytes, {} remain", rest.len())));
    }
    let meta: Metadata =
        serde_json::from_slice(&rest[..len]).map_err(|e| Error::Corrupt(format!("metadata: {e}")))?;
    Ok((meta, &rest[len..]))
}

/// Copies the payload of every tensor in `meta` into `layers`, checking
/// names, shapes and sizes.
fn fill<'a>(meta: &Metadata, payload: &[u8], layers: impl IntoIterator<Item = &'a mut LayerParams>) -> Result<()> {
    let mut targets: Vec<(String, &mut Tensor)> = Vec::new();
    for l in layers {
        targets.push((format!("{}.weight", l.name), &mut l.weight.value));
        targets.push((format!("{}.bias", l.name), &mut l.bias.value));
    }
    if targets.len() != meta.tensors.len() {
        return Err(Error::Corrupt(format!(
            "directory lists {} tensors, model has {}",
            meta.tensors.len(),
            targets.len()
        )));
    }
    let mut expected_offset = 0;
    for (entry, (name, t)) in meta.tensors.iter().zip(targets) {
        if entry.name != name {
            return Err(Error::Corrupt(format!("expected tensor {name}, found {}", entry.name)));
        }
        if entry.shape != t.shape() {
            return Err(Error::Corrupt(format!(
                "{name}: shape {:?} does not match model shape {:?}",
                entry.shape,
                t.shape()
            )));
        }
        if entry.offset != expected_offset {
            return Err(Error::Corrupt(format!("{name}: offset {} out of order", entry.offset)));
        }
        let end = entry.offset + 4 * t.len();
        if end > payload.len() {
            return Err(Error::Corrupt(format!("{name}: payload truncated")));
        }
        for (v, chunk) in t.data_mut().iter_mut().zip(payload[entry.offset..end].chunks_exact(4)) {
            *v = f64::from(f32::from_le_bytes(chunk.try_into().expect("4 bytes")));
        }
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing payload bytes",
            payload.len() - expected_offset
        )));
    }
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_model(net: &ScoringNet, epoch: usize, seed: u64) -> Vec<u8> {
    let meta = Metadata {
        variant: Some(net.variant().name().to_string()),
        arch: Some(net.arch.clone()),
        category: net.category.as_ref().map(CategoryShape::of),
        epoch,
        seed,
        tensors: Vec::new(),
    };
    let mut layers = net.layers();
    layers.extend(net.frozen_layers());
    encode(meta, &tensors_of(layers))
}

pub fn decode_model(bytes: &[u8]) -> Result<(ScoringNet, Metadata)> {
    let (meta, payload) = decode(bytes)?;
    let arch = meta
        .arch
        .clone()
        .ok_or_else(|| Error::Corrupt("not a ranking checkpoint (no architecture)".into()))?;
    let category = meta.category.as_ref().map(CategoryShape::build).transpose()?;
    let mut net = ScoringNet::new(arch, category, &mut Rng::new(0)).map_err(|e| Error::Corrupt(e.to_string()))?;
    {
        let ScoringNet {
            stns,
            extractor,
            head,
            category,
            ..
        } = &mut net;
        let mut layers: Vec<&mut LayerParams> = Vec::new();
        for s in stns {
            layers.extend(s.layers_mut());
        }
        layers.extend(extractor.layers_mut());
        layers.push(head);
        if let Some(c) = category {
            layers.extend(c.layers_mut());
        }
        fill(&meta, payload, layers)?;
    }
    Ok((net, meta))
}

pub fn save_checkpoint(net: &ScoringNet, epoch: usize, seed: u64, path: &Path) -> Result<()> {
    write(path, &encode_model(net, epoch, seed))
}

pub fn load_checkpoint(path: &Path) -> Result<(ScoringNet, Metadata)> {
    decode_model(&read(path)?)
}

pub fn save_category(net: &CategoryNet, epoch: usize, seed: u64, path: &Path) -> Result<()> {
    let meta = Metadata {
        variant: None,
        arch: None,
        category: Some(CategoryShape::of(net)),
        epoch,
        seed,
        tensors: Vec::new(),
    };
    write(path, &encode(meta, &tensors_of(net.layers())))
}

pub fn load_category(path: &Path) -> Result<CategoryNet> {
    let bytes = read(path)?;
    let (meta, payload) = decode(&bytes)?;
    if meta.arch.is_some() {
        return Err(Error::Corrupt(format!("{} is a ranking checkpoint, not a category network", path.display())));
    }
    let shape = meta
        .category
        .as_ref()
        .ok_or_else(|| Error::Corrupt("category checkpoint lacks its shape".into()))?;
    let mut net = shape.build().map_err(|e| Error::Corrupt(e.to_string()))?;
    fill(&meta, payload, net.layers_mut())?;
    Ok(net)
}

/// The network with every parameter rounded to `f32`, i.e. exactly what a
/// checkpoint round trip yields.
pub fn rounded_to_f32(net: &ScoringNet) -> ScoringNet {
    let mut out = net.clone();
    let round = |l: &mut LayerParams| {
        for v in l.weight.value.data_mut().iter_mut().chain(l.bias.value.data_mut()) {
            *v = f64::from(*v as f32);
        }
    };
    for l in out.layers_mut() {
        round(l);
    }
    if let Some(c) = &mut out.category {
        for l in c.layers_mut() {
            round(l);
        }
    }
    out
}
