use std::fmt;
use std::str::FromStr;

use nalgebra::{Point2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const HANDLE: &str = "handle";
pub const HEAD: &str = "head";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn key(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!(
                "split must be train or test, got '{s}'"
            ))),
        }
    }
}

/// Unions of closed intervals for each split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRanges {
    pub train: Vec<(f64, f64)>,
    pub test: Vec<(f64, f64)>,
}

impl SplitRanges {
    pub fn bands(&self, split: Split) -> &[(f64, f64)] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Every band is non-empty and positive, and no train band meets a test
    /// band.
    pub fn validate(&self, what: &str) -> Result<()> {
        let all = self.train.iter().chain(&self.test);
        if self.train.is_empty()
            || self.test.is_empty()
            || all.clone().any(|&(lo, hi)| !(lo > 0.0 && lo < hi))
        {
            return Err(Error::Config(format!(
                "{what}: bands must be non-empty positive intervals"
            )));
        }
        for a in &self.train {
            for b in &self.test {
                if a.0 <= b.1 && b.0 <= a.1 {
                    return Err(Error::Config(format!(
                        "{what}: train and test bands overlap"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Uniform over the union of the split's bands.
    pub fn sample(&self, split: Split, rng: &mut impl Rng) -> f64 {
        let bands = self.bands(split);
        let total: f64 = bands.iter().map(|(lo, hi)| hi - lo).sum();
        let mut t = rng.random_range(0.0..total);
        for &(lo, hi) in bands {
            if t < hi - lo {
                return lo + t;
            }
            t -= hi - lo;
        }
        bands.last().map(|b| b.1).unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.train
            .iter()
            .chain(&self.test)
            .map(|b| b.1)
            .fold(0.0, f64::max)
    }
}

/// Procedural "ambiguous tool": two congruent boxes end to end along the
/// object x axis, handle at +x, head at -x.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryConfig {
    /// Seed of the category-level part descriptors.
    pub seed: u64,
    pub feature_dim: usize,
    /// Norm scale of the per-instance descriptor perturbation.
    pub instance_noise: f64,
    pub half_length: SplitRanges,
    pub half_width: SplitRanges,
    pub height: SplitRanges,
    /// Gap between handle and head, meters.
    pub gap: f64,
}

impl Default for CategoryConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            feature_dim: 16,
            instance_noise: 0.15,
            half_length: SplitRanges {
                train: vec![(0.024, 0.030), (0.040, 0.046)],
                test: vec![(0.032, 0.038)],
            },
            half_width: SplitRanges {
                train: vec![(0.010, 0.013), (0.017, 0.020)],
                test: vec![(0.014, 0.016)],
            },
            height: SplitRanges {
                train: vec![(0.015, 0.020), (0.030, 0.035)],
                test: vec![(0.022, 0.028)],
            },
            gap: 0.01,
        }
    }
}

impl CategoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 3 {
            return Err(Error::Config("feature dimension must be at least 3".into()));
        }
        if !(self.instance_noise >= 0.0 && self.gap >= 0.0) {
            return Err(Error::Config(
                "instance noise and gap must be non-negative".into(),
            ));
        }
        self.half_length.validate("half length")?;
        self.half_width.validate("half width")?;
        self.height.validate("height")
    }

    /// Orthonormal category descriptors for handle, head and background.
    pub fn base_descriptors(&self) -> [Vec<f64>; 3] {
        let mut r = rng::stream(self.seed, &[0xde5c]);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < 3 {
            let mut v: Vec<f64> = (0..self.feature_dim)
                .map(|_| r.sample(StandardNormal))
                .collect();
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                basis.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        [basis[0].clone(), basis[1].clone(), basis[2].clone()]
    }
}

/// One part: box resting on the table, placed in the object frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub name: String,
    pub center: Point2<f64>,
    pub half_extents: Vector2<f64>,
    /// Yaw relative to the object frame.
    pub yaw: f64,
    pub height: f64,
    pub descriptor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub index: u64,
    pub split: Split,
    pub parts: Vec<Part>,
    pub background: Vec<f64>,
}

impl ObjectInstance {
    pub fn part_index(&self, name: &str) -> Option<usize> {
        self.parts.iter().position(|p| p.name == name)
    }

    pub fn handle(&self) -> &Part {
        &self.parts[self
            .part_index(HANDLE)
            .expect("every instance has a handle")]
    }
}

pub fn sample_instance(cfg: &CategoryConfig, split: Split, index: u64) -> ObjectInstance {
    let mut r = rng::stream(cfg.seed, &[split.key(), index]);
    let hl = cfg.half_length.sample(split, &mut r);
    let hw = cfg.half_width.sample(split, &mut r);
    let h = cfg.height.sample(split, &mut r);
    let [handle, head, background] = cfg.base_descriptors();
    let scale = cfg.instance_noise / (cfg.feature_dim as f64).sqrt();
    let mut perturb = |base: &[f64]| -> Vec<f64> {
        base.iter()
            .map(|b| b + scale * r.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let offset = hl + 0.5 * cfg.gap;
    let parts = vec![
        Part {
            name: HANDLE.into(),
            center: Point2::new(offset, 0.0),
            half_extents: Vector2::new(hl, hw),
            yaw: 0.0,
            height: h,
            descriptor: perturb(&handle),
        },
        Part {
            name: HEAD.into(),
            center: Point2::new(-offset, 0.0),
            half_extents: Vector2::new(hl, hw),
            yaw: 0.0,
            height: h,
            descriptor: perturb(&head),
        },
    ];
    ObjectInstance {
        index,
        split,
        parts,
        background,
    }
}

/// Planar object pose on the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl ObjectPose {
    pub fn to_world(&self, local: &Point2<f64>) -> Point2<f64> {
        let (s, c) = self.yaw.sin_cos();
        Point2::new(
            self.x + c * local.x - s * local.y,
            self.y + s * local.x + c * local.y,
        )
    }

    pub fn to_local(&self, world: &Point2<f64>) -> Point2<f64> {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (world.x - self.x, world.y - self.y);
        Point2::new(c * dx + s * dy, -s * dx + c * dy)
    }
}

/// Part box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldBox {
    pub center: Point2<f64>,
    pub half_extents: Vector2<f64>,
    pub yaw: f64,
    pub height: f64,
}

pub fn world_boxes(instance: &ObjectInstance, pose: &ObjectPose) -> Vec<WorldBox> {
    instance
        .parts
        .iter()
        .map(|p| WorldBox {
            center: pose.to_world(&p.center),
            half_extents: p.half_extents,
            yaw: pose.yaw + p.yaw,
            height: p.height,
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n =
        a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / n
}
