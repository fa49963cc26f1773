//! Per-view evaluation of 3D points and depth-weighted fusion into a
//! descriptor field.
//!
//! For a point `p` and view `i` the point is projected to pixel `u_i` with
//! z-depth `r_i`; the feature map and depth map are sampled at `u_i`, giving
//! `f_i` and `r'_i`, and `dr_i = r'_i - r_i`. Views where the point lies
//! more than `occlusion_margin` behind the observed surface are discarded;
//! the rest are averaged with weights `exp(-|dr_i| / weight_scale)`.

use nalgebra::Point3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    backproject, fps_downsample, project, CameraModel, DepthImage, FeatureImage, WorkspaceBounds,
};

/// One calibrated observation: camera, descriptor map and depth map.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: CameraModel,
    pub features: FeatureImage,
    pub depth: DepthImage,
}

impl View {
    pub fn new(camera: CameraModel, features: FeatureImage, depth: DepthImage) -> Result<Self> {
        let size = (camera.width, camera.height);
        if (features.width(), features.height()) != size || (depth.width(), depth.height()) != size
        {
            return Err(Error::DimensionMismatch(format!(
                "camera is {}x{}, features {}x{}, depth {}x{}",
                camera.width,
                camera.height,
                features.width(),
                features.height(),
                depth.width(),
                depth.height()
            )));
        }
        Ok(Self {
            camera,
            features,
            depth,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSample {
    pub feature: Vec<f64>,
    /// Sampled surface depth minus point depth, meters.
    pub depth_diff: f64,
    pub visible: bool,
}

impl ViewSample {
    fn hidden(dim: usize) -> Self {
        Self {
            feature: vec![0.0; dim],
            depth_diff: 0.0,
            visible: false,
        }
    }
}

/// Parameters of the fusion function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    /// Length scale of the exponential depth weighting, meters.
    pub weight_scale: f64,
    /// Views where the point is farther than this behind the surface are
    /// treated as occluded, meters.
    pub occlusion_margin: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            weight_scale: 0.02,
            occlusion_margin: 0.01,
        }
    }
}

pub fn sample_view(
    p: &Point3<f64>,
    cam: &CameraModel,
    feat: &FeatureImage,
    depth: &DepthImage,
) -> ViewSample {
    let pr = project(p, cam);
    if !pr.in_frustum {
        return ViewSample::hidden(feat.dim());
    }
    let Some(surface) = depth.sample(&pr.pixel) else {
        return ViewSample::hidden(feat.dim());
    };
    let mut feature = vec![0.0; feat.dim()];
    if !feat.sample_into(&pr.pixel, &mut feature) {
        return ViewSample::hidden(feat.dim());
    }
    ViewSample {
        feature,
        depth_diff: surface - pr.depth,
        visible: true,
    }
}

/// Fuses per-view samples. Returns the descriptor and whether any view
/// contributed; unsupported points get an all-zero descriptor.
pub fn fuse(samples: &[ViewSample], params: &FusionParams) -> (Vec<f64>, bool) {
    let dim = samples.first().map_or(0, |s| s.feature.len());
    let mut out = vec![0.0; dim];
    let weights: Vec<f64> = samples
        .iter()
        .map(|s| {
            if s.visible && s.depth_diff >= -params.occlusion_margin {
                (-s.depth_diff.abs() / params.weight_scale).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return (out, false);
    }
    for (s, w) in samples.iter().zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        let w = w / total;
        for (o, f) in out.iter_mut().zip(&s.feature) {
            *o += w * f;
        }
    }
    (out, true)
}

/// `K` surface points with fused descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorField {
    pub points: Vec<Point3<f64>>,
    /// Row-major `K x F`.
    pub descriptors: Vec<f64>,
    pub dim: usize,
    /// Point observed by at least one valid view.
    pub support: Vec<bool>,
    /// Slot repeats an earlier point because the cropped cloud had fewer
    /// than `K` points.
    pub padded: Vec<bool>,
}

impl DescriptorField {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f64] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Evaluates every view at `p` and fuses the results.
pub fn evaluate_point(p: &Point3<f64>, views: &[View], params: &FusionParams) -> (Vec<f64>, bool) {
    let samples: Vec<ViewSample> = views
        .iter()
        .map(|v| sample_view(p, &v.camera, &v.features, &v.depth))
        .collect();
    fuse(&samples, params)
}

/// Surface points from all views, cropped to `bounds` and reduced to `k`
/// by farthest-point sampling, each carrying its fused descriptor.
pub fn build_descriptor_field(
    views: &[View],
    bounds: &WorkspaceBounds,
    k: usize,
    params: &FusionParams,
    seed: u64,
) -> Result<DescriptorField> {
    let Some(first) = views.first() else {
        return Err(Error::DimensionMismatch(
            "at least one view is required".into(),
        ));
    };
    let dim = first.features.dim();
    if let Some(v) = views.iter().find(|v| v.features.dim() != dim) {
        return Err(Error::DimensionMismatch(format!(
            "views disagree on descriptor dimension ({} vs {dim})",
            v.features.dim()
        )));
    }
    let cloud: Vec<Point3<f64>> = views
        .iter()
        .flat_map(|v| backproject(&v.depth, &v.camera, bounds))
        .collect();
    if cloud.is_empty() {
        return Err(Error::EmptyScene);
    }
    let ds = fps_downsample(&cloud, k, seed)?;
    // Points are independent and each reduction runs in view order, so the
    // parallel map is bitwise identical to a sequential loop.
    let fused: Vec<(Vec<f64>, bool)> = ds
        .points
        .par_iter()
        .map(|p| evaluate_point(p, views, params))
        .collect();
    let mut descriptors = Vec::with_capacity(k * dim);
    let mut support = Vec::with_capacity(k);
    for (d, s) in fused {
        descriptors.extend(d);
        support.push(s);
    }
    Ok(DescriptorField {
        points: ds.points,
        descriptors,
        dim,
        support,
        padded: ds.padded,
    })
}
