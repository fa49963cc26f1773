//! Images to policy observations: reference selection, fused fields and the
//! on-disk field cache.

use std::path::Path;

use nalgebra::Point3;

use super::config::RunConfig;
use super::dataset::Episode;
use crate::error::{Error, Result};
use crate::fusion::{build_descriptor_field, FusionParams, View};
use crate::geometry::{CameraModel, DepthImage, FeatureImage, WorkspaceBounds};
use crate::semantics::{
    compute_semantic_field, select_reference_descriptors, PartSelection, PixelPick,
    PolicyObservation, ReferenceDescriptorSet, ReferenceScene, ReferenceSelection, RobotState,
};
use crate::sim::{
    cast, render_views, ring_cameras, sample_instance, world_boxes, Hit, ObjectPose, Split,
};

/// Scene of the built-in reference selection.
pub fn builtin_scene(cfg: &RunConfig) -> ReferenceScene {
    ReferenceScene {
        category_seed: cfg.category_seed,
        instance_seed: 0,
        split: Split::Train.to_string(),
        pose: [0.0, 0.0, 0.0],
        render_seed: 0,
    }
}

/// Selects, for each part, every pixel whose center ray hits that part in
/// the reference scene. Stands in for a user clicking on the parts once.
pub fn generate_selection(cfg: &RunConfig, scene: ReferenceScene) -> Result<ReferenceSelection> {
    let split: Split = scene.split.parse()?;
    let category = crate::sim::CategoryConfig {
        seed: scene.category_seed,
        ..cfg.category()
    };
    let inst = sample_instance(&category, split, scene.instance_seed);
    let pose = ObjectPose {
        x: scene.pose[0],
        y: scene.pose[1],
        yaw: scene.pose[2],
    };
    let boxes = world_boxes(&inst, &pose);
    let cams = ring_cameras(&cfg.render())?;
    let mut parts: Vec<PartSelection> = inst
        .parts
        .iter()
        .map(|p| PartSelection {
            name: p.name.clone(),
            pixels: Vec::new(),
        })
        .collect();
    for (i, cam) in cams.iter().enumerate() {
        for v in 0..cam.height {
            for u in 0..cam.width {
                if let Hit::Part(p, _) = cast(
                    &cam.center(),
                    &cam.pixel_ray(u as f64, v as f64),
                    &boxes,
                    0.5,
                ) {
                    parts[p].pixels.push(PixelPick(i, u as f64, v as f64));
                }
            }
        }
    }
    parts.truncate(cfg.parts);
    Ok(ReferenceSelection {
        scene: Some(scene),
        parts,
    })
}

/// The selection named by `cfg.refs`, or the built-in one, together with
/// its JSON text.
pub fn load_selection(cfg: &RunConfig) -> Result<(ReferenceSelection, String)> {
    if cfg.refs.is_empty() {
        let sel = generate_selection(cfg, builtin_scene(cfg))?;
        let text = sel.to_json()?;
        Ok((sel, text))
    } else {
        let path = Path::new(&cfg.refs);
        let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        Ok((ReferenceSelection::from_json(&text)?, text))
    }
}

/// Re-renders the reference images a selection points into.
pub fn reference_images(cfg: &RunConfig, sel: &ReferenceSelection) -> Result<Vec<FeatureImage>> {
    let scene = sel
        .scene
        .as_ref()
        .ok_or_else(|| Error::InvalidReferences("selection names no reference scene".into()))?;
    let split: Split = scene.split.parse()?;
    let category = crate::sim::CategoryConfig {
        seed: scene.category_seed,
        ..cfg.category()
    };
    let inst = sample_instance(&category, split, scene.instance_seed);
    let pose = ObjectPose {
        x: scene.pose[0],
        y: scene.pose[1],
        yaw: scene.pose[2],
    };
    let render = cfg.render();
    let cams = ring_cameras(&render)?;
    let mut r = crate::rng::stream(scene.render_seed, &[0x4ef5]);
    Ok(render_views(
        &inst,
        &pose,
        &cams,
        render.pixel_noise,
        render.table_half,
        &mut r,
    )
    .into_iter()
    .map(|(f, _)| f)
    .collect())
}

/// Positions and semantic channels of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameField {
    pub points: Vec<Point3<f64>>,
    /// Row-major `K x M` similarities.
    pub semantic: Vec<f64>,
    pub parts: usize,
    pub support: Vec<bool>,
    pub padded: Vec<bool>,
}

impl FrameField {
    /// Policy input; with `ablate` the semantic block is zeroed but keeps
    /// its width.
    pub fn observation(&self, robot: RobotState, ablate: bool) -> PolicyObservation {
        PolicyObservation {
            points: self.points.clone(),
            channels: if ablate {
                vec![0.0; self.semantic.len()]
            } else {
                self.semantic.clone()
            },
            parts: self.parts,
            robot,
            support: self.support.clone(),
            padded: self.padded.clone(),
        }
    }
}

/// Fixed perception settings plus the reference descriptors.
#[derive(Debug, Clone)]
pub struct Perception {
    pub cameras: Vec<CameraModel>,
    pub bounds: WorkspaceBounds,
    pub fusion: FusionParams,
    pub points: usize,
    pub fps_seed: u64,
    pub refs: ReferenceDescriptorSet,
}

impl Perception {
    pub fn new(cfg: &RunConfig, sel: &ReferenceSelection) -> Result<Self> {
        let refs = select_reference_descriptors(&reference_images(cfg, sel)?, sel)?;
        if refs.len() != cfg.parts {
            return Err(Error::Config(format!(
                "reference selection has {} parts, config expects {}",
                refs.len(),
                cfg.parts
            )));
        }
        Ok(Self {
            cameras: ring_cameras(&cfg.render())?,
            bounds: cfg.bounds()?,
            fusion: cfg.fusion(),
            points: cfg.field_points,
            fps_seed: cfg.fps_seed,
            refs,
        })
    }

    pub fn field(&self, images: Vec<(FeatureImage, DepthImage)>) -> Result<FrameField> {
        if images.len() != self.cameras.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} images for {} cameras",
                images.len(),
                self.cameras.len()
            )));
        }
        let views = images
            .into_iter()
            .zip(&self.cameras)
            .map(|((f, d), c)| View::new(c.clone(), f, d))
            .collect::<Result<Vec<_>>>()?;
        let field = build_descriptor_field(
            &views,
            &self.bounds,
            self.points,
            &self.fusion,
            self.fps_seed,
        )?;
        let sem = compute_semantic_field(&field, &self.refs)?;
        Ok(FrameField {
            points: field.points,
            semantic: sem.values,
            parts: sem.parts,
            support: field.support,
            padded: field.padded,
        })
    }

    pub fn episode_fields(&self, ep: &Episode) -> Result<Vec<FrameField>> {
        (0..ep.steps.len())
            .map(|t| self.field(ep.images(t)?))
            .collect()
    }
}

pub const CACHE_MAGIC: &[u8; 4] = b"GDFC";
pub const CACHE_VERSION: u32 = 1;

/// Field cache file: magic, version, frames, points, parts (u32 each); per
/// frame points `f64[K*3]`, similarities `f64[K*M]`, support and padded
/// flags `u8[K]` each; trailing CRC32.
pub fn encode_fields(fields: &[FrameField]) -> Result<Vec<u8>> {
    let k = fields.first().map_or(0, |f| f.points.len());
    let m = fields.first().map_or(0, |f| f.parts);
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    for v in [CACHE_VERSION as usize, fields.len(), k, m] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for f in fields {
        if f.points.len() != k
            || f.parts != m
            || f.semantic.len() != k * m
            || f.support.len() != k
            || f.padded.len() != k
        {
            return Err(Error::DimensionMismatch(
                "cached frames disagree in shape".into(),
            ));
        }
        for p in &f.points {
            for c in [p.x, p.y, p.z] {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        f.semantic
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out.extend(f.support.iter().map(|&b| b as u8));
        out.extend(f.padded.iter().map(|&b| b as u8));
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_fields(bytes: &[u8]) -> Result<Vec<FrameField>> {
    let err = |r: &str| Error::format("field cache", r);
    if bytes.len() < 24 || &bytes[..4] != CACHE_MAGIC {
        return Err(err("bad magic or truncated"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
        return Err(err("checksum mismatch"));
    }
    let word = |i: usize| {
        u32::from_le_bytes(body[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
    };
    if word(0) != CACHE_VERSION as usize {
        return Err(err("unsupported version"));
    }
    let (frames, k, m) = (word(1), word(2), word(3));
    if (frames == 0) != (k == 0 && m == 0) || (frames > 0 && (k == 0 || m == 0)) {
        return Err(err("empty frames or zero-width fields"));
    }
    let per_frame = k
        .checked_mul(3 + m)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(2 * k))
        .ok_or_else(|| err("size overflows"))?;
    if per_frame
        .checked_mul(frames)
        .and_then(|v| v.checked_add(20))
        != Some(body.len())
    {
        return Err(err("length disagrees with header"));
    }
    let mut pos = 20;
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut take = |n: usize| {
            let s = &body[pos..pos + n];
            pos += n;
            s
        };
        let f64s = |s: &[u8]| -> Vec<f64> {
            s.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        };
        let xyz = f64s(take(24 * k));
        let semantic = f64s(take(8 * k * m));
        let mut flags = |n: usize| -> Result<Vec<bool>> {
            take(n)
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(err("flag byte is not 0 or 1")),
                })
                .collect()
        };
        let support = flags(k)?;
        let padded = flags(k)?;
        out.push(FrameField {
            points: xyz
                .chunks_exact(3)
                .map(|c| Point3::new(c[0], c[1], c[2]))
                .collect(),
            semantic,
            parts: m,
            support,
            padded,
        });
    }
    Ok(out)
}

/// Directory holding cached fields for one perception setting.
pub fn cache_dir(dataset: &Path, key: &str) -> std::path::PathBuf {
    dataset.join("cache").join(key)
}

/// Frame fields of episode `index`, read from `cache` when present and
/// well formed, computed and stored otherwise.
pub fn cached_fields(
    perception: &Perception,
    cache: &Path,
    index: usize,
    ep: &Episode,
) -> Result<Vec<FrameField>> {
    let path = cache.join(format!("episode_{index:04}.gdfc"));
    if let Ok(bytes) = std::fs::read(&path) {
        if let Ok(f) = decode_fields(&bytes) {
            if f.len() == ep.steps.len() {
                return Ok(f);
            }
        }
    }
    let fields = perception.episode_fields(ep)?;
    std::fs::create_dir_all(cache).map_err(|e| Error::path(cache, e))?;
    std::fs::write(&path, encode_fields(&fields)?).map_err(|e| Error::path(&path, e))?;
    Ok(fields)
}

/// Mean similarity of supported points to their own part's reference
/// versus the other parts'.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Separation {
    pub own: f64,
    pub cross: f64,
    pub points: usize,
}

impl Separation {
    pub fn margin(&self) -> f64 {
        self.own - self.cross
    }
}

/// Part separation over `scenes` evaluation scenes of `split`. Points are
/// labeled by the nearest part center in the object frame; reference `j`
/// must belong to part `j`.
pub fn part_separation(
    cfg: &RunConfig,
    perception: &Perception,
    split: Split,
    scenes: usize,
) -> Result<Separation> {
    let (mut own, mut cross, mut n_own, mut n_cross) = (0.0, 0.0, 0usize, 0usize);
    for e in 0..scenes {
        let (_, env) = super::eval::eval_env(cfg, split, e)?;
        let f = perception.field(env.render_views())?;
        for (i, p) in f.points.iter().enumerate() {
            if !f.support[i] || f.padded[i] {
                continue;
            }
            let q = env.state.pose.to_local(&nalgebra::Point2::new(p.x, p.y));
            let part = env
                .instance
                .parts
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1.center - q).norm().total_cmp(&(b.1.center - q).norm()))
                .map_or(0, |(j, _)| j);
            for j in 0..f.parts {
                let s = f.semantic[i * f.parts + j];
                if j == part {
                    own += s;
                    n_own += 1;
                } else {
                    cross += s;
                    n_cross += 1;
                }
            }
        }
    }
    if n_own == 0 || n_cross == 0 {
        return Err(Error::EmptyScene);
    }
    Ok(Separation {
        own: own / n_own as f64,
        cross: cross / n_cross as f64,
        points: n_own,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{SimEnv, HANDLE, HEAD};

    #[test]
    fn builtin_selection_covers_both_parts() {
        let cfg = RunConfig::default();
        let sel = generate_selection(&cfg, builtin_scene(&cfg)).unwrap();
        let names: Vec<&str> = sel.parts.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, [HANDLE, HEAD]);
        for p in &sel.parts {
            assert!(p.pixels.len() > 20, "{}: {}", p.name, p.pixels.len());
        }
    }

    #[test]
    fn observation_separates_parts() {
        let cfg = RunConfig::default();
        let (sel, _) = load_selection(&cfg).unwrap();
        let per = Perception::new(&cfg, &sel).unwrap();
        let inst = sample_instance(&cfg.category(), Split::Test, 1);
        let env = SimEnv::reset(inst, cfg.task_spec(), cfg.dynamics(), cfg.render(), 3).unwrap();
        let f = per.field(env.render_views()).unwrap();
        assert_eq!(f.points.len(), cfg.field_points);
        let handle = env.state.pose.to_world(&env.instance.parts[0].center);
        let head = env.state.pose.to_world(&env.instance.parts[1].center);
        let (mut own, mut cross) = (Vec::new(), Vec::new());
        for (i, p) in f.points.iter().enumerate() {
            if !f.support[i] {
                continue;
            }
            let q = nalgebra::Point2::new(p.x, p.y);
            let on_handle = (q - handle).norm() < (q - head).norm();
            let (s_h, s_d) = (f.semantic[2 * i], f.semantic[2 * i + 1]);
            if on_handle {
                own.push(s_h);
                cross.push(s_d);
            } else {
                own.push(s_d);
                cross.push(s_h);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&own) - mean(&cross) > 0.3,
            "{} vs {}",
            mean(&own),
            mean(&cross)
        );
        let obs = f.observation(env.state.robot(), true);
        assert!(obs.channels.iter().all(|&c| c == 0.0));
        assert_eq!(obs.channels.len(), f.semantic.len());
    }

    #[test]
    fn cache_round_trip_is_bitwise() {
        let f = FrameField {
            points: vec![
                Point3::new(0.1, -0.0, 1e-300),
                Point3::new(f64::MIN_POSITIVE, 2.0, 3.0),
            ],
            semantic: vec![1.0, -1.0, 0.3, -0.0],
            parts: 2,
            support: vec![true, false],
            padded: vec![false, true],
        };
        let fields = vec![f.clone(), f];
        let bytes = encode_fields(&fields).unwrap();
        let back = decode_fields(&bytes).unwrap();
        let bits = |v: &[FrameField]| -> Vec<u64> {
            v.iter()
                .flat_map(|f| {
                    f.points
                        .iter()
                        .flat_map(|p| [p.x, p.y, p.z])
                        .chain(f.semantic.clone())
                })
                .map(f64::to_bits)
                .collect()
        };
        assert_eq!(bits(&back), bits(&fields));
        assert_eq!(back[1].support, fields[1].support);
        assert_eq!(back[1].padded, fields[1].padded);
        let mut bad = bytes.clone();
        bad[30] ^= 1;
        assert!(decode_fields(&bad).is_err());
        assert!(decode_fields(&bytes[..bytes.len() - 1]).is_err());
    }

    fn with_crc(mut body: Vec<u8>) -> Vec<u8> {
        let crc = crc32fast::hash(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        body
    }

    #[test]
    fn cache_decoder_rejects_non_canonical_input() {
        let mut header = CACHE_MAGIC.to_vec();
        for v in [CACHE_VERSION, u32::MAX, 0, 0] {
            header.extend_from_slice(&v.to_le_bytes());
        }
        assert!(decode_fields(&with_crc(header)).is_err());

        let f = FrameField {
            points: vec![Point3::new(0.0, 0.0, 0.0)],
            semantic: vec![0.5],
            parts: 1,
            support: vec![true],
            padded: vec![false],
        };
        let mut bytes = encode_fields(&[f]).unwrap();
        bytes.truncate(bytes.len() - 4);
        let n = bytes.len();
        bytes[n - 2] = 2;
        assert!(decode_fields(&with_crc(bytes)).is_err());
        assert_eq!(decode_fields(&encode_fields(&[]).unwrap()).unwrap(), vec![]);
    }
}
