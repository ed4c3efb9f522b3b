//! Eye-in-hand ray-cast renderer.
//!
//! One ray per pixel center. The nearest hit among the table rectangle,
//! spheres and oriented boxes decides the pixel, so the RGB frame and the
//! target silhouette come from the same visibility computation.

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goal::Mask;
use crate::sim::{SceneObject, Shape, SimState, TableRegion};

/// Intrinsics plus the camera-to-world pose. Camera axes follow the optical
/// convention: x right, y down, z forward.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub focal_length: f64,
    pub principal_point: (f64, f64),
    pub pose: Isometry3<f64>,
}

/// Serializable intrinsics block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees; focal length derives from it.
    pub horizontal_fov_deg: f64,
}

impl Intrinsics {
    pub fn focal_length(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.horizontal_fov_deg.to_radians() / 2.0).tan()
    }

    pub fn camera(&self, pose: Isometry3<f64>) -> CameraModel {
        CameraModel {
            width: self.width,
            height: self.height,
            focal_length: self.focal_length(),
            principal_point: (self.width as f64 / 2.0, self.height as f64 / 2.0),
            pose,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let (cx, cy) = self.principal_point;
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("camera resolution must be positive"));
        }
        if !(self.focal_length > 0.0) {
            return Err(Error::config("focal length must be positive"));
        }
        if !(0.0..=self.width as f64).contains(&cx) || !(0.0..=self.height as f64).contains(&cy) {
            return Err(Error::config("principal point lies outside the image"));
        }
        Ok(())
    }

    /// Pinhole projection of a world point; `None` behind the camera.
    pub fn project_point(&self, world: &Point3<f64>) -> Option<(f64, f64)> {
        let p = self.pose.inverse_transform_point(world);
        if p.z <= 0.0 {
            return None;
        }
        let (cx, cy) = self.principal_point;
        Some((cx + self.focal_length * p.x / p.z, cy + self.focal_length * p.y / p.z))
    }

    /// World-space ray through the center of pixel (row, col).
    pub fn ray(&self, row: usize, col: usize) -> (Point3<f64>, Vector3<f64>) {
        let (cx, cy) = self.principal_point;
        let d = Vector3::new(
            (col as f64 + 0.5 - cx) / self.focal_length,
            (row as f64 + 0.5 - cy) / self.focal_length,
            1.0,
        );
        let origin = Point3::from(self.pose.translation.vector);
        (origin, (self.pose.rotation * d).normalize())
    }
}

/// H×W×3 color image, values in [0,1], row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Image { width, height, pixels }
    }

    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Colors and table geometry shared by every render.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneStyle {
    pub background: [f64; 3],
    pub table_color: [f64; 3],
    /// Table rectangle on the z=0 plane.
    pub table: TableRegion,
}

impl Default for SceneStyle {
    fn default() -> Self {
        SceneStyle {
            background: [0.5, 0.5, 0.5],
            table_color: [0.55, 0.48, 0.40],
            table: TableRegion {
                x: [-0.2, 1.0],
                y: [-0.7, 0.7],
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hit {
    Background,
    Table { depth: f64 },
    Object { index: usize, depth: f64 },
}

impl Hit {
    fn depth(&self) -> f64 {
        match *self {
            Hit::Background => f64::INFINITY,
            Hit::Table { depth } | Hit::Object { depth, .. } => depth,
        }
    }
}

/// Per-pixel nearest hits for one camera, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HitBuffer {
    pub width: usize,
    pub height: usize,
    pub hits: Vec<Hit>,
}

fn shade(color: [f64; 3], depth: f64) -> [f32; 3] {
    let k = 1.0 / (1.0 + 0.5 * depth);
    color.map(|c| ((c * k).clamp(0.0, 1.0)) as f32)
}

impl HitBuffer {
    pub fn rgb(&self, objects: &[SceneObject], style: &SceneStyle) -> Image {
        let mut img = Image::filled(self.width, self.height, style.background.map(|c| c as f32));
        for (i, hit) in self.hits.iter().enumerate() {
            let px = match *hit {
                Hit::Background => continue,
                Hit::Table { depth } => shade(style.table_color, depth),
                Hit::Object { index, depth } => shade(objects[index].color, depth),
            };
            img.pixels[i * 3..i * 3 + 3].copy_from_slice(&px);
        }
        img
    }

    pub fn mask_of(&self, target_index: usize) -> Mask {
        Mask::from_fn(
            self.width,
            self.height,
            |r, c| matches!(self.hits[r * self.width + c], Hit::Object { index, .. } if index == target_index),
        )
    }
}

pub fn intersect_sphere(origin: &Point3<f64>, dir: &Vector3<f64>, center: &Point3<f64>, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    if t0 > 1e-9 {
        return Some(t0);
    }
    let t1 = -b + sq;
    (t1 > 1e-9).then_some(t1)
}

pub fn intersect_box(origin: &Point3<f64>, dir: &Vector3<f64>, pose: &Isometry3<f64>, half: &[f64; 3]) -> Option<f64> {
    let o = pose.inverse_transform_point(origin);
    let d = pose.inverse_transform_vector(dir);
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        if d[axis].abs() < 1e-15 {
            if o[axis].abs() > half[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[axis];
        let mut t0 = (-half[axis] - o[axis]) * inv;
        let mut t1 = (half[axis] - o[axis]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    if t_near > 1e-9 {
        Some(t_near)
    } else if t_far > 1e-9 {
        Some(t_far)
    } else {
        None
    }
}

fn intersect_table(origin: &Point3<f64>, dir: &Vector3<f64>, table: &TableRegion) -> Option<f64> {
    if dir.z.abs() < 1e-15 {
        return None;
    }
    let t = -origin.z / dir.z;
    if t <= 1e-9 {
        return None;
    }
    let p = origin + dir * t;
    (p.x >= table.x[0] && p.x <= table.x[1] && p.y >= table.y[0] && p.y <= table.y[1]).then_some(t)
}

/// Nearest primitive along a ray. Depth is the Euclidean distance from the origin.
pub fn cast(origin: &Point3<f64>, dir: &Vector3<f64>, objects: &[SceneObject], style: &SceneStyle) -> Hit {
    let mut best = match intersect_table(origin, dir, &style.table) {
        Some(depth) => Hit::Table { depth },
        None => Hit::Background,
    };
    for (index, obj) in objects.iter().enumerate() {
        let t = match obj.shape {
            Shape::Sphere { radius } => intersect_sphere(origin, dir, &obj.center(), radius),
            Shape::Box { half_extents } => intersect_box(origin, dir, &obj.pose, &half_extents),
        };
        if let Some(depth) = t {
            if depth < best.depth() {
                best = Hit::Object { index, depth };
            }
        }
    }
    best
}

pub fn cast_all(objects: &[SceneObject], cam: &CameraModel, style: &SceneStyle) -> HitBuffer {
    let mut hits = Vec::with_capacity(cam.width * cam.height);
    for row in 0..cam.height {
        for col in 0..cam.width {
            let (o, d) = cam.ray(row, col);
            hits.push(cast(&o, &d, objects, style));
        }
    }
    HitBuffer {
        width: cam.width,
        height: cam.height,
        hits,
    }
}

pub fn render_rgb(state: &SimState, cam: &CameraModel, style: &SceneStyle) -> Image {
    cast_all(&state.objects, cam, style).rgb(&state.objects, style)
}

pub fn silhouette_mask(state: &SimState, cam: &CameraModel, style: &SceneStyle, target_index: usize) -> Result<Mask> {
    if target_index >= state.objects.len() {
        return Err(Error::input(format!(
            "target index {target_index} out of range for {} objects",
            state.objects.len()
        )));
    }
    Ok(cast_all(&state.objects, cam, style).mask_of(target_index))
}

/// RGB frame and target mask from a single visibility pass.
pub fn render_frame(state: &SimState, cam: &CameraModel, style: &SceneStyle) -> (Image, Mask) {
    let buf = cast_all(&state.objects, cam, style);
    (buf.rgb(&state.objects, style), buf.mask_of(state.target_index))
}
