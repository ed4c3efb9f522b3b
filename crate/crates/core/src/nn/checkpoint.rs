//! Checkpoints: a JSON manifest plus one raw little-endian `f32` blob per array.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::net::{NetSpec, Network};
use super::tensor::Scalar;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub init_bound: Option<f64>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub name: String,
    pub spec: NetSpec,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub networks: Vec<NetworkEntry>,
    /// Free-form values stored alongside the weights (step, alpha, ...).
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

pub fn save<T: Scalar>(
    dir: &Path,
    nets: &[(&str, &Network<T>)],
    extra: serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest {
        networks: Vec::new(),
        extra,
    };
    for (name, net) in nets {
        let mut arrays = Vec::new();
        for p in net.params() {
            let file = format!("{name}.{}.f32", p.name);
            let mut bytes = Vec::with_capacity(4 * p.len());
            for v in &p.value {
                bytes.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
            }
            let path = dir.join(&file);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            arrays.push(ArrayEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                init_bound: p.init_bound,
                file,
            });
        }
        manifest.networks.push(NetworkEntry {
            name: name.to_string(),
            spec: net.spec.clone(),
            arrays,
        });
    }
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::io(&path, e))
}

/// Loads the named network into `net`, which must have the stored spec.
pub fn load_into<T: Scalar>(dir: &Path, manifest: &Manifest, name: &str, net: &mut Network<T>) -> Result<()> {
    let entry = manifest
        .networks
        .iter()
        .find(|n| n.name == name)
        .ok_or_else(|| Error::input(format!("checkpoint has no network named {name}")))?;
    if entry.spec != net.spec {
        return Err(Error::input(format!(
            "checkpoint network {name} has spec {:?}, expected {:?}",
            entry.spec, net.spec
        )));
    }
    for (p, a) in net.params_mut().into_iter().zip(&entry.arrays) {
        if a.shape != p.shape {
            return Err(Error::input(format!(
                "array {name}.{} has shape {:?}, expected {:?}",
                a.name, a.shape, p.shape
            )));
        }
        let path = dir.join(&a.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != 4 * p.len() {
            return Err(Error::io(
                &path,
                format!("expected {} bytes, found {}", 4 * p.len(), bytes.len()),
            ));
        }
        for (v, c) in p.value.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = T::of(f64::from(f32::from_le_bytes(c.try_into().unwrap())));
        }
    }
    Ok(())
}
