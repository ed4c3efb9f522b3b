//! Goal encodings handed to the policy alongside the image stack.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{cast_all, Image, Intrinsics, SceneStyle};
use crate::sim::{ObjectDescriptor, SceneObject, TableRegion};

pub const ONE_HOT_DIM: usize = 20;
pub const EMBEDDING_DIM: usize = 512;
pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
/// Side length of the stored target close-up.
pub const CLOSE_UP_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMode {
    Mask,
    OneHot,
    Position3d,
    TargetImage,
    EmbeddingFile,
}

impl GoalMode {
    /// Planes per frame in the stacked observation.
    pub fn frame_channels(self) -> usize {
        if self == GoalMode::Mask {
            4
        } else {
            3
        }
    }

    /// Length of the goal vector concatenated to the proprioceptive input.
    pub fn vector_dim(self) -> usize {
        match self {
            GoalMode::Mask => 0,
            GoalMode::OneHot => ONE_HOT_DIM,
            GoalMode::Position3d => 3,
            GoalMode::TargetImage => 3 * CLOSE_UP_SIZE * CLOSE_UP_SIZE,
            GoalMode::EmbeddingFile => EMBEDDING_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GoalPayload {
    /// The goal lives in the mask planes of the observation.
    Mask,
    OneHot(Vec<f32>),
    Position([f64; 3]),
    TargetImage(Image),
    Embedding(Vec<f32>),
}

impl GoalPayload {
    pub fn mode(&self) -> GoalMode {
        match self {
            GoalPayload::Mask => GoalMode::Mask,
            GoalPayload::OneHot(_) => GoalMode::OneHot,
            GoalPayload::Position(_) => GoalMode::Position3d,
            GoalPayload::TargetImage(_) => GoalMode::TargetImage,
            GoalPayload::Embedding(_) => GoalMode::EmbeddingFile,
        }
    }

    /// Flat features for the network; the close-up is channel-major.
    pub fn vector(&self) -> Vec<f32> {
        match self {
            GoalPayload::Mask => Vec::new(),
            GoalPayload::OneHot(v) | GoalPayload::Embedding(v) => v.clone(),
            GoalPayload::Position(p) => p.iter().map(|v| *v as f32).collect(),
            GoalPayload::TargetImage(img) => {
                let n = img.width * img.height;
                let mut out = vec![0.0; 3 * n];
                for (i, px) in img.pixels.chunks_exact(3).enumerate() {
                    for c in 0..3 {
                        out[c * n + i] = px[c];
                    }
                }
                out
            }
        }
    }
}

pub fn one_hot(index: usize) -> Result<Vec<f32>> {
    if index >= ONE_HOT_DIM {
        return Err(Error::input(format!(
            "one-hot index {index} exceeds {ONE_HOT_DIM} slots"
        )));
    }
    let mut v = vec![0.0; ONE_HOT_DIM];
    v[index] = 1.0;
    Ok(v)
}

pub fn write_embedding(path: &Path, values: &[f32]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(8 + 4 * values.len());
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_embedding(path: &Path) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::io(path, "missing EMB1 header"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != 4 * n {
        return Err(Error::io(
            path,
            format!("header declares {n} values, found {} bytes", body.len()),
        ));
    }
    let v: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if n != EMBEDDING_DIM {
        return Err(Error::input(format!(
            "embedding has {n} values, expected {EMBEDDING_DIM}"
        )));
    }
    Ok(v)
}

/// Embedding file for an object id inside the configured directory.
pub fn embedding_path(dir: &Path, object_id: usize) -> PathBuf {
    dir.join(format!("{object_id}.emb"))
}

/// Canonical close-up: the object alone on a table patch, seen from 0.12 m
/// at 45° elevation.
pub fn render_close_up(desc: &ObjectDescriptor, style: &SceneStyle) -> Image {
    let obj = SceneObject {
        id: desc.id,
        color: desc.color,
        shape: desc.shape,
        pose: Isometry3::translation(0.0, 0.0, desc.shape.rest_height()),
    };
    let center = obj.center();
    let eye = center + Vector3::new(-0.085, 0.0, 0.085);
    let rot = UnitQuaternion::face_towards(&(center - eye), &-Vector3::z());
    let cam = Intrinsics {
        width: CLOSE_UP_SIZE,
        height: CLOSE_UP_SIZE,
        horizontal_fov_deg: 45.0,
    }
    .camera(Isometry3::from_parts(Translation3::from(eye.coords), rot));
    let local = SceneStyle {
        table: TableRegion {
            x: [-0.5, 0.5],
            y: [-0.5, 0.5],
        },
        ..*style
    };
    let objects = [obj];
    cast_all(&objects, &cam, &local).rgb(&objects, &local)
}

/// Everything besides the target needed to build a payload.
#[derive(Debug, Clone, Default)]
pub struct GoalSources {
    pub embedding_dir: Option<PathBuf>,
    pub style: SceneStyle,
}

/// Goal payload for the episode target. `position` is the privileged target
/// center; one-hot slots are object ids.
pub fn encode_goal(
    desc: &ObjectDescriptor,
    position: &Point3<f64>,
    mode: GoalMode,
    sources: &GoalSources,
) -> Result<GoalPayload> {
    Ok(match mode {
        GoalMode::Mask => GoalPayload::Mask,
        GoalMode::OneHot => GoalPayload::OneHot(one_hot(desc.id)?),
        GoalMode::Position3d => GoalPayload::Position([position.x, position.y, position.z]),
        GoalMode::TargetImage => GoalPayload::TargetImage(render_close_up(desc, &sources.style)),
        GoalMode::EmbeddingFile => {
            let dir = sources
                .embedding_dir
                .as_deref()
                .ok_or_else(|| Error::config("embedding_file goal mode needs an embedding directory"))?;
            GoalPayload::Embedding(read_embedding(&embedding_path(dir, desc.id))?)
        }
    })
}
