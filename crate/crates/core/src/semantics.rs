//! Reference part descriptors, cosine semantic fields and the policy
//! observation built from them.

use std::collections::HashSet;

use nalgebra::{Point3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::DescriptorField;
use crate::geometry::FeatureImage;

/// Similarity assigned to points without a usable descriptor.
pub const UNSUPPORTED_SIMILARITY: f64 = -1.0;

/// `M` named part descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDescriptorSet {
    labels: Vec<String>,
    /// Row-major `M x F`.
    descriptors: Vec<f64>,
    dim: usize,
}

impl ReferenceDescriptorSet {
    pub fn new(labels: Vec<String>, descriptors: Vec<Vec<f64>>) -> Result<Self> {
        if labels.is_empty() || labels.len() != descriptors.len() {
            return Err(Error::InvalidReferences(format!(
                "{} labels for {} descriptors",
                labels.len(),
                descriptors.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::InvalidReferences(format!("duplicate label '{dup}'")));
        }
        let dim = descriptors[0].len();
        for (label, d) in labels.iter().zip(&descriptors) {
            if d.len() != dim || dim == 0 {
                return Err(Error::InvalidReferences(format!(
                    "descriptor '{label}' has dimension {}",
                    d.len()
                )));
            }
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::InvalidReferences(format!(
                    "descriptor '{label}' has zero norm"
                )));
            }
        }
        Ok(Self {
            labels,
            descriptors: descriptors.concat(),
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn descriptor(&self, j: usize) -> &[f64] {
        &self.descriptors[j * self.dim..(j + 1) * self.dim]
    }

    /// Reorders parts; `order[j]` is the old index of new part `j`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        Self::new(
            order.iter().map(|&j| self.labels[j].clone()).collect(),
            order.iter().map(|&j| self.descriptor(j).to_vec()).collect(),
        )
    }
}

/// A selected pixel: reference image index and continuous pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPick(pub usize, pub f64, pub f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSelection {
    pub name: String,
    pub pixels: Vec<PixelPick>,
}

/// Scene that produced the reference images, so the images can be
/// re-rendered instead of stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScene {
    pub category_seed: u64,
    pub instance_seed: u64,
    pub split: String,
    /// Object pose `[x, y, yaw]`.
    pub pose: [f64; 3],
    pub render_seed: u64,
}

/// Reference-selection file: per-part pixel lists over a set of reference
/// images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSelection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<ReferenceScene>,
    pub parts: Vec<PartSelection>,
}

impl ReferenceSelection {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Averages the bilinear features at every selected pixel of each part.
pub fn select_reference_descriptors(
    images: &[FeatureImage],
    selection: &ReferenceSelection,
) -> Result<ReferenceDescriptorSet> {
    let dim = images
        .first()
        .map(FeatureImage::dim)
        .ok_or_else(|| Error::InvalidReferences("no reference images".into()))?;
    let mut labels = Vec::new();
    let mut descriptors = Vec::new();
    let mut buf = vec![0.0; dim];
    for part in &selection.parts {
        if part.pixels.is_empty() {
            return Err(Error::EmptyPart(part.name.clone()));
        }
        let mut mean = vec![0.0; dim];
        for &PixelPick(image, u, v) in &part.pixels {
            let img = images.get(image).ok_or_else(|| {
                Error::InvalidReferences(format!(
                    "part '{}' references missing image {image}",
                    part.name
                ))
            })?;
            if img.dim() != dim {
                return Err(Error::DimensionMismatch(
                    "reference images disagree on descriptor dimension".into(),
                ));
            }
            if !img.sample_into(&Vector2::new(u, v), &mut buf) {
                return Err(Error::InvalidReferences(format!(
                    "part '{}' pixel ({u}, {v}) outside image {image}",
                    part.name
                )));
            }
            mean.iter_mut().zip(&buf).for_each(|(m, b)| *m += b);
        }
        let n = part.pixels.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        labels.push(part.name.clone());
        descriptors.push(mean);
    }
    ReferenceDescriptorSet::new(labels, descriptors)
}

/// `K x M` cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticField {
    pub values: Vec<f64>,
    pub parts: usize,
}

impl SemanticField {
    pub fn len(&self) -> usize {
        self.values.len() / self.parts.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.parts..(i + 1) * self.parts]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.parts + j]
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na * nb;
    (denom > 0.0 && denom.is_finite()).then(|| (dot / denom).clamp(-1.0, 1.0))
}

pub fn compute_semantic_field(
    field: &DescriptorField,
    refs: &ReferenceDescriptorSet,
) -> Result<SemanticField> {
    if field.dim != refs.dim() {
        return Err(Error::DimensionMismatch(format!(
            "field descriptors have dimension {}, references {}",
            field.dim,
            refs.dim()
        )));
    }
    let m = refs.len();
    let mut values = Vec::with_capacity(field.len() * m);
    for i in 0..field.len() {
        let d = field.descriptor(i);
        for j in 0..m {
            let c = if field.support[i] {
                cosine_similarity(d, refs.descriptor(j)).unwrap_or(UNSUPPORTED_SIMILARITY)
            } else {
                UNSUPPORTED_SIMILARITY
            };
            values.push(c);
        }
    }
    Ok(SemanticField { values, parts: m })
}

/// Gripper state as seen by the policy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub closed: bool,
}

impl RobotState {
    /// `[x, y, grip]` with grip `1` closed and `0` open.
    pub fn to_vector(&self) -> [f64; 3] {
        [self.x, self.y, if self.closed { 1.0 } else { 0.0 }]
    }
}

/// Input to the point-set encoder for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyObservation {
    pub points: Vec<Point3<f64>>,
    /// Row-major `K x M`.
    pub channels: Vec<f64>,
    pub parts: usize,
    pub robot: RobotState,
    pub support: Vec<bool>,
    pub padded: Vec<bool>,
}

impl PolicyObservation {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn channel_row(&self, i: usize) -> &[f64] {
        &self.channels[i * self.parts..(i + 1) * self.parts]
    }
}

/// Concatenates points and semantic channels. With `ablate_semantics` the
/// channel block is zeroed but keeps its width.
pub fn assemble_observation(
    field: &DescriptorField,
    sem: &SemanticField,
    robot: RobotState,
    ablate_semantics: bool,
) -> Result<PolicyObservation> {
    if sem.len() != field.len() {
        return Err(Error::DimensionMismatch(format!(
            "semantic field has {} rows, descriptor field {}",
            sem.len(),
            field.len()
        )));
    }
    let channels = if ablate_semantics {
        vec![0.0; sem.values.len()]
    } else {
        sem.values.clone()
    };
    Ok(PolicyObservation {
        points: field.points.clone(),
        channels,
        parts: sem.parts,
        robot,
        support: field.support.clone(),
        padded: field.padded.clone(),
    })
}
