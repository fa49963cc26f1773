//! Pinhole camera math: projection, bilinear sampling, back-projection and
//! fixed-size point-cloud extraction.
//!
//! Pixel coordinates are continuous `(u, v)` with texel centers at integer
//! values: `u` indexes columns, `v` rows. Depth is camera-frame z, not ray
//! length, so values compare directly against z-buffer depth images.

use nalgebra::{Matrix3, Point3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::rng::mix64;

/// Calibrated pinhole camera with a world-to-camera rigid transform.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rotation part of world-to-camera.
    pub rotation: Matrix3<f64>,
    /// Translation part of world-to-camera, meters.
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got ({fx}, {fy})"
            )));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        let orth = rotation.transpose() * rotation - Matrix3::identity();
        if orth.amax() >= 1e-9 || (rotation.determinant() - 1.0).abs() >= 1e-9 {
            return Err(Error::InvalidCamera(
                "rotation is not a proper orthonormal matrix".into(),
            ));
        }
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidCamera("non-finite translation".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`. The image `v` axis points along
    /// the projection of `-up`.
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye coincides with target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up vector parallel to view direction".into()))?;
        let down = forward.cross(&right);
        // Rows are the camera axes expressed in world coordinates.
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye.coords);
        Self::new(
            fx,
            fy,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            rotation,
            translation,
            width,
            height,
        )
    }

    pub fn world_to_camera(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.rotation * p.coords + self.translation
    }

    pub fn camera_to_world(&self, pc: &Vector3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.transpose() * (pc - self.translation))
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Unnormalized world-frame ray direction through pixel `(u, v)` whose
    /// camera-frame z component is 1.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let dc = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        self.rotation.transpose() * dc
    }

    pub fn contains_pixel(&self, u: &Vector2<f64>) -> bool {
        u.x >= 0.0
            && u.y >= 0.0
            && u.x <= (self.width - 1) as f64
            && u.y <= (self.height - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    /// Camera-frame z, meters.
    pub depth: f64,
    pub in_frustum: bool,
}

pub fn project(p: &Point3<f64>, cam: &CameraModel) -> Projection {
    let pc = cam.world_to_camera(p);
    let pixel = Vector2::new(cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy);
    let in_frustum =
        pc.z > 0.0 && pixel.iter().all(|c| c.is_finite()) && cam.contains_pixel(&pixel);
    Projection {
        pixel,
        depth: pc.z,
        in_frustum,
    }
}

/// Z-depth image with a per-pixel validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthImage {
    /// An all-invalid image.
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// Builds an image from raw depths; entries that are not finite and
    /// strictly positive are marked invalid.
    pub fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "depth buffer has {} values, expected {}",
                values.len(),
                width * height
            )));
        }
        let valid: Vec<bool> = values.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        let values = values
            .iter()
            .zip(&valid)
            .map(|(&d, &ok)| if ok { d } else { 0.0 })
            .collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let i = v * self.width + u;
        self.valid[i].then(|| self.values[i])
    }

    pub fn set(&mut self, u: usize, v: usize, depth: Option<f64>) {
        let i = v * self.width + u;
        match depth {
            Some(d) if d.is_finite() && d > 0.0 => {
                self.values[i] = d;
                self.valid[i] = true;
            }
            _ => {
                self.values[i] = 0.0;
                self.valid[i] = false;
            }
        }
    }

    /// Raw buffer with invalid pixels stored as 0.
    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    /// Bilinear depth; `None` when `u` is out of bounds or any texel with
    /// nonzero weight is invalid.
    pub fn sample(&self, u: &Vector2<f64>) -> Option<f64> {
        let taps = bilinear_taps(u, self.width, self.height)?;
        let mut acc = 0.0;
        for (idx, w) in taps {
            if w == 0.0 {
                continue;
            }
            if !self.valid[idx] {
                return None;
            }
            acc += w * self.values[idx];
        }
        Some(acc)
    }
}

/// Dense `H x W x F` descriptor image, row-major with the descriptor
/// components innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    width: usize,
    height: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureImage {
    pub fn new(width: usize, height: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidImage(
                "descriptor dimension must be at least 1".into(),
            ));
        }
        if values.len() != width * height * dim {
            return Err(Error::InvalidImage(format!(
                "feature buffer has {} values, expected {}",
                values.len(),
                width * height * dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite feature value".into()));
        }
        Ok(Self {
            width,
            height,
            dim,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize, dim: usize) -> Self {
        Self {
            width,
            height,
            dim,
            values: vec![0.0; width * height * dim],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn texel(&self, u: usize, v: usize) -> &[f32] {
        let i = (v * self.width + u) * self.dim;
        &self.values[i..i + self.dim]
    }

    pub fn texel_mut(&mut self, u: usize, v: usize) -> &mut [f32] {
        let i = (v * self.width + u) * self.dim;
        &mut self.values[i..i + self.dim]
    }

    pub fn raw(&self) -> &[f32] {
        &self.values
    }

    /// Bilinear feature written into `out` (length `dim`). Returns false,
    /// leaving `out` untouched, when `u` is out of bounds.
    pub fn sample_into(&self, u: &Vector2<f64>, out: &mut [f64]) -> bool {
        debug_assert_eq!(out.len(), self.dim);
        let Some(taps) = bilinear_taps(u, self.width, self.height) else {
            return false;
        };
        out.iter_mut().for_each(|o| *o = 0.0);
        for (idx, w) in taps {
            if w == 0.0 {
                continue;
            }
            let texel = &self.values[idx * self.dim..(idx + 1) * self.dim];
            for (o, &t) in out.iter_mut().zip(texel) {
                *o += w * t as f64;
            }
        }
        true
    }

    pub fn sample(&self, u: &Vector2<f64>) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(u, &mut out).then_some(out)
    }
}

/// The four (flat index, weight) taps of a bilinear lookup, or `None` when
/// `u` lies outside `[0, W-1] x [0, H-1]`.
fn bilinear_taps(u: &Vector2<f64>, width: usize, height: usize) -> Option<[(usize, f64); 4]> {
    if width == 0 || height == 0 {
        return None;
    }
    let (x, y) = (u.x, u.y);
    let (xmax, ymax) = ((width - 1) as f64, (height - 1) as f64);
    if !(x >= 0.0 && y >= 0.0 && x <= xmax && y <= ymax) {
        return None;
    }
    let x0 = (x.floor() as usize).min(width.saturating_sub(2));
    let y0 = (y.floor() as usize).min(height.saturating_sub(2));
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let tx = x - x0 as f64;
    let ty = y - y0 as f64;
    Some([
        (y0 * width + x0, (1.0 - tx) * (1.0 - ty)),
        (y0 * width + x1, tx * (1.0 - ty)),
        (y1 * width + x0, (1.0 - tx) * ty),
        (y1 * width + x1, tx * ty),
    ])
}

/// Axis-aligned crop box, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkspaceBounds {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl WorkspaceBounds {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Result<Self> {
        if (0..3).all(|i| min[i] < max[i]) {
            Ok(Self { min, max })
        } else {
            Err(Error::InvalidBounds(format!(
                "min {min:?} not below max {max:?}"
            )))
        }
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }
}

/// World point of pixel `(u, v)` at z-depth `depth`.
pub fn unproject(u: f64, v: f64, depth: f64, cam: &CameraModel) -> Point3<f64> {
    let pc = Vector3::new(
        (u - cam.cx) / cam.fx * depth,
        (v - cam.cy) / cam.fy * depth,
        depth,
    );
    cam.camera_to_world(&pc)
}

/// One world point per valid pixel, kept if inside `bounds`. Pixels are
/// visited in row-major order.
pub fn backproject(
    depth: &DepthImage,
    cam: &CameraModel,
    bounds: &WorkspaceBounds,
) -> Vec<Point3<f64>> {
    let mut out = Vec::new();
    for v in 0..depth.height() {
        for u in 0..depth.width() {
            if let Some(z) = depth.get(u, v) {
                let p = unproject(u as f64, v as f64, z, cam);
                if bounds.contains(&p) {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Fixed-size subsample of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Downsampled {
    /// Index into the input cloud for every output slot.
    pub indices: Vec<usize>,
    pub points: Vec<Point3<f64>>,
    /// True for slots that repeat the last selected point because the input
    /// had fewer than `K` points.
    pub padded: Vec<bool>,
}

fn coordinate_hash(p: &Point3<f64>, seed: u64) -> u64 {
    p.iter()
        .fold(mix64(seed), |acc, c| mix64(acc ^ c.to_bits()))
}

/// Farthest-point sampling.
///
/// With `seed == 0` the first pick is the point nearest the center of the
/// cloud's bounding box; otherwise it is the point whose coordinate hash
/// (mixed with `seed`) is smallest. Both rules depend on coordinates only, so
/// reordering the input never changes the selected coordinates except under
/// exact distance ties, which resolve to the lowest index.
pub fn fps_downsample(points: &[Point3<f64>], k: usize, seed: u64) -> Result<Downsampled> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let start = if seed == 0 {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            for i in 0..3 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let c = nalgebra::center(&lo, &hi);
        argmin_by(points.iter().map(|p| (p - c).norm_squared()))
    } else {
        let hashes: Vec<u64> = points.iter().map(|p| coordinate_hash(p, seed)).collect();
        let mut best = 0;
        for (i, h) in hashes.iter().enumerate() {
            if *h < hashes[best] {
                best = i;
            }
        }
        best
    };

    let take = k.min(points.len());
    let mut indices = Vec::with_capacity(k);
    let mut min_d2 = vec![f64::INFINITY; points.len()];
    let mut current = start;
    for _ in 0..take {
        indices.push(current);
        let c = points[current];
        let mut next = 0;
        let mut best = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d2 = (p - c).norm_squared();
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > best {
                best = min_d2[i];
                next = i;
            }
        }
        current = next;
    }
    let mut padded = vec![false; take];
    if let Some(&last) = indices.last() {
        while indices.len() < k {
            indices.push(last);
            padded.push(true);
        }
    }
    let points = indices.iter().map(|&i| points[i]).collect();
    Ok(Downsampled {
        indices,
        points,
        padded,
    })
}

fn argmin_by(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (i, v) in values.enumerate() {
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    best
}
