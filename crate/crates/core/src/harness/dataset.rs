//! Episode files and demonstration collection.
//!
//! An episode file is little-endian:
//!
//! ```text
//! "GDPE" | version u32 | views u32 | height u32 | width u32 | features u32
//!        | action_dim u32 | steps u32
//! per step:
//!     per view: features f32[height * width * features], depth f32[height * width]
//!     robot f32[3] (x, y, grip)
//!     action f32[action_dim]
//! crc32 u32 over everything before it
//! ```
//!
//! Depth 0 marks an invalid pixel. A `manifest.json` next to the episodes
//! lists per-episode metadata.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{DepthImage, FeatureImage};
use crate::rng;
use crate::sim::{run_expert, sample_instance, Expert, SimEnv, Split};

pub const EPISODE_MAGIC: &[u8; 4] = b"GDPE";
pub const EPISODE_VERSION: u32 = 1;
pub const ROBOT_DIM: usize = 3;
pub const MANIFEST: &str = "manifest.json";
/// Collection aborts when more than this fraction of expert runs fail.
pub const MAX_EXPERT_FAILURE: f64 = 0.05;

/// One recorded time step. Images are stored exactly as written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Per view, row-major `height x width x features`.
    pub features: Vec<Vec<f32>>,
    /// Per view, row-major `height x width`; 0 is invalid.
    pub depth: Vec<Vec<f32>>,
    pub robot: [f32; ROBOT_DIM],
    pub action: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub feature_dim: usize,
    pub action_dim: usize,
    pub steps: Vec<StepRecord>,
}

impl Episode {
    fn check(&self) -> Result<()> {
        let px = self.height * self.width;
        let bad = self.steps.iter().any(|s| {
            s.features.len() != self.views
                || s.depth.len() != self.views
                || s.action.len() != self.action_dim
                || s.features.iter().any(|f| f.len() != px * self.feature_dim)
                || s.depth.iter().any(|d| d.len() != px)
        });
        if bad {
            return Err(Error::DimensionMismatch(
                "episode step disagrees with header".into(),
            ));
        }
        if self.steps.is_empty() {
            return Err(Error::format("episode", "no steps"));
        }
        if [
            self.views,
            self.height,
            self.width,
            self.feature_dim,
            self.action_dim,
        ]
        .contains(&0)
        {
            return Err(Error::format("episode", "zero-sized dimension"));
        }
        Ok(())
    }

    /// Views of step `t` as images.
    pub fn images(&self, t: usize) -> Result<Vec<(FeatureImage, DepthImage)>> {
        let s = &self.steps[t];
        s.features
            .iter()
            .zip(&s.depth)
            .map(|(f, d)| {
                let feat = FeatureImage::new(self.width, self.height, self.feature_dim, f.clone())?;
                let depth = DepthImage::from_raw(
                    self.width,
                    self.height,
                    d.iter().map(|&v| v as f64).collect(),
                )?;
                Ok((feat, depth))
            })
            .collect()
    }
}

pub fn encode_episode(ep: &Episode) -> Result<Vec<u8>> {
    ep.check()?;
    let px = ep.height * ep.width;
    let per_step = ep.views * px * (ep.feature_dim + 1) + ROBOT_DIM + ep.action_dim;
    let mut out = Vec::with_capacity(32 + 4 * per_step * ep.steps.len() + 4);
    out.extend_from_slice(EPISODE_MAGIC);
    for v in [
        EPISODE_VERSION as usize,
        ep.views,
        ep.height,
        ep.width,
        ep.feature_dim,
        ep.action_dim,
        ep.steps.len(),
    ] {
        let v =
            u32::try_from(v).map_err(|_| Error::format("episode", "header field exceeds u32"))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut put = |vals: &[f32]| {
        vals.iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()))
    };
    for s in &ep.steps {
        for (f, d) in s.features.iter().zip(&s.depth) {
            put(f);
            put(d);
        }
        put(&s.robot);
        put(&s.action);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(
            self.buf[self.pos..self.pos + 4]
                .try_into()
                .expect("4 bytes"),
        );
        self.pos += 4;
        v
    }

    fn f32s(&mut self, n: usize) -> Vec<f32> {
        let out = self.buf[self.pos..self.pos + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        self.pos += 4 * n;
        out
    }
}

const HEADER_LEN: usize = 4 + 7 * 4;

pub fn decode_episode(bytes: &[u8]) -> Result<Episode> {
    let err = |r: &str| Error::format("episode", r);
    if bytes.len() < HEADER_LEN + 4 {
        return Err(err("truncated header"));
    }
    if &bytes[..4] != EPISODE_MAGIC {
        return Err(err("bad magic"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
        return Err(err("checksum mismatch"));
    }
    let mut c = Cursor { buf: body, pos: 4 };
    let version = c.u32();
    if version != EPISODE_VERSION {
        return Err(err(&format!("unsupported version {version}")));
    }
    let [views, height, width, feature_dim, action_dim, steps] = [0; 6].map(|_| c.u32() as usize);
    if steps == 0 {
        return Err(err("no steps"));
    }
    if [views, height, width, feature_dim, action_dim].contains(&0) {
        return Err(err("zero-sized dimension"));
    }
    let px = height
        .checked_mul(width)
        .ok_or_else(|| err("image size overflows"))?;
    let per_step = px
        .checked_mul(feature_dim + 1)
        .and_then(|v| v.checked_mul(views))
        .and_then(|v| v.checked_add(ROBOT_DIM + action_dim))
        .ok_or_else(|| err("step size overflows"))?;
    let expected = per_step
        .checked_mul(steps)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| err("payload size overflows"))?;
    if expected != body.len() {
        return Err(err(&format!(
            "payload is {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let steps = (0..steps)
        .map(|_| {
            let mut features = Vec::with_capacity(views);
            let mut depth = Vec::with_capacity(views);
            for _ in 0..views {
                features.push(c.f32s(px * feature_dim));
                depth.push(c.f32s(px));
            }
            let robot = c.f32s(ROBOT_DIM);
            StepRecord {
                features,
                depth,
                robot: [robot[0], robot[1], robot[2]],
                action: c.f32s(action_dim),
            }
        })
        .collect();
    Ok(Episode {
        views,
        height,
        width,
        feature_dim,
        action_dim,
        steps,
    })
}

pub fn write_episode(path: &Path, ep: &Episode) -> Result<()> {
    std::fs::write(path, encode_episode(ep)?).map_err(|e| Error::path(path, e))
}

pub fn read_episode(path: &Path) -> Result<Episode> {
    decode_episode(&std::fs::read(path).map_err(|e| Error::path(path, e))?)
}

/// Raw little-endian `f32` feature map, row-major `height x width x
/// features`, as found in a features directory.
pub fn decode_feature_map(
    bytes: &[u8],
    width: usize,
    height: usize,
    features: usize,
) -> Result<Vec<f32>> {
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(features))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::format("feature map", "size overflows"))?;
    if bytes.len() != n {
        return Err(Error::format(
            "feature map",
            format!(
                "{} bytes, expected {n} for {width}x{height}x{features}",
                bytes.len()
            ),
        ));
    }
    let out: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("feature map", "non-finite value"));
    }
    Ok(out)
}

pub fn feature_map_path(dir: &Path, episode: usize, step: usize, view: usize) -> PathBuf {
    dir.join(format!("ep{episode:04}_step{step:04}_view{view}.f32"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub file: String,
    pub instance_id: u64,
    pub split: Split,
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    /// Approach side of the expert, `1` or `-1`.
    pub side: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub feature_dim: usize,
    pub action_dim: usize,
    pub attempts: usize,
    pub failures: usize,
    pub episodes: Vec<EpisodeMeta>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::path(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The dataset was recorded with the same cameras and feature width as
    /// `cfg` describes.
    pub fn check_shapes(&self, cfg: &RunConfig) -> Result<()> {
        let want = (
            cfg.views,
            cfg.image_height,
            cfg.image_width,
            cfg.feature_dim,
            3,
        );
        let have = (
            self.views,
            self.height,
            self.width,
            self.feature_dim,
            self.action_dim,
        );
        if want != have {
            return Err(Error::Config(format!(
                "dataset shapes (views, height, width, features, actions) {have:?} differ from config {want:?}"
            )));
        }
        Ok(())
    }

    pub fn episode(&self, dir: &Path, i: usize) -> Result<Episode> {
        read_episode(&dir.join(&self.episodes[i].file))
    }
}

/// Start state index of collection attempt `attempt`. With paired sides,
/// consecutive attempts share a start.
pub fn attempt_start(cfg: &RunConfig, attempt: usize) -> usize {
    if cfg.paired_sides {
        attempt / 2
    } else {
        attempt
    }
}

/// Seed of the start state of collection attempt `attempt`.
pub fn attempt_seed(cfg: &RunConfig, attempt: usize) -> u64 {
    rng::derive(cfg.seed, &[0xc011, attempt_start(cfg, attempt) as u64])
}

struct Attempt {
    attempt: usize,
    instance_id: u64,
    env: SimEnv,
    side: f64,
    demo: crate::sim::Demonstration,
}

fn run_attempt(cfg: &RunConfig, attempt: usize) -> Result<Attempt> {
    let instance_id = attempt_start(cfg, attempt) as u64 % cfg.train_instances;
    let seed = attempt_seed(cfg, attempt);
    let inst = sample_instance(&cfg.category(), Split::Train, instance_id);
    let env = SimEnv::reset(inst, cfg.task_spec(), cfg.dynamics(), cfg.render(), seed)?;
    let mut expert = Expert::new(cfg.expert(), &mut rng::stream(seed, &[0x51de]));
    if cfg.paired_sides && attempt % 2 == 1 {
        expert.side = -expert.side;
    }
    let side = expert.side;
    let demo = run_expert(
        &mut expert,
        &env.state,
        &env.instance,
        &env.task,
        &env.dynamics,
    )?;
    Ok(Attempt {
        attempt,
        instance_id,
        env,
        side,
        demo,
    })
}

fn record(
    cfg: &RunConfig,
    a: &Attempt,
    index: usize,
    features_dir: Option<&Path>,
) -> Result<Episode> {
    let steps = a
        .demo
        .states
        .iter()
        .zip(&a.demo.actions)
        .enumerate()
        .map(|(t, (state, action))| {
            let env = SimEnv {
                state: state.clone(),
                ..a.env.clone()
            };
            let mut features = Vec::new();
            let mut depth = Vec::new();
            for (v, (f, d)) in env.render_views().into_iter().enumerate() {
                features.push(match features_dir {
                    Some(dir) => {
                        let path = feature_map_path(dir, index, t, v);
                        let bytes = std::fs::read(&path).map_err(|e| Error::path(&path, e))?;
                        decode_feature_map(
                            &bytes,
                            cfg.image_width,
                            cfg.image_height,
                            cfg.feature_dim,
                        )?
                    }
                    None => f.raw().to_vec(),
                });
                depth.push(
                    d.raw()
                        .iter()
                        .map(|&z| if z > 0.0 { z as f32 } else { 0.0 })
                        .collect(),
                );
            }
            let r = state.robot().to_vector();
            Ok(StepRecord {
                features,
                depth,
                robot: r.map(|v| v as f32),
                action: action.iter().map(|&v| v as f32).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Episode {
        views: cfg.views,
        height: cfg.image_height,
        width: cfg.image_width,
        feature_dim: cfg.feature_dim,
        action_dim: 3,
        steps,
    })
}

/// Runs the expert on train instances until `cfg.demos` successful
/// episodes exist, and writes them with a manifest to `out`. With
/// `features_dir`, feature images are read from per-frame files instead of
/// the renderer.
pub fn collect_demos(cfg: &RunConfig, out: &Path, features_dir: Option<&Path>) -> Result<Manifest> {
    std::fs::create_dir_all(out).map_err(|e| Error::path(out, e))?;
    let batch = rayon::current_num_threads().max(1) * 4;
    let allowed =
        |kept: usize, failed: usize| (failed as f64) <= MAX_EXPERT_FAILURE * (kept + failed) as f64;
    let mut kept: Vec<Attempt> = Vec::new();
    let mut failures = 0;
    let mut next = 0;
    while kept.len() < cfg.demos {
        let runs: Vec<Result<Attempt>> = (next..next + batch)
            .into_par_iter()
            .map(|a| run_attempt(cfg, a))
            .collect();
        next += batch;
        for run in runs {
            if kept.len() == cfg.demos {
                break;
            }
            match run {
                Ok(a) if a.demo.success => kept.push(a),
                Ok(_) | Err(Error::Unreachable(_)) => failures += 1,
                Err(e) => return Err(e),
            }
            // Fail fast once the limit can no longer be met.
            if !allowed(cfg.demos, failures) {
                return Err(Error::ExpertUnreliable {
                    failed: failures,
                    attempts: kept.len() + failures,
                });
            }
        }
    }
    let mut episodes = Vec::with_capacity(kept.len());
    for (chunk_start, chunk) in (0..kept.len())
        .step_by(batch)
        .map(|s| (s, &kept[s..(s + batch).min(kept.len())]))
    {
        let encoded: Vec<Result<Vec<u8>>> = chunk
            .par_iter()
            .enumerate()
            .map(|(j, a)| encode_episode(&record(cfg, a, chunk_start + j, features_dir)?))
            .collect();
        for (j, bytes) in encoded.into_iter().enumerate() {
            let a = &chunk[j];
            let file = format!("episode_{:04}.gdpe", chunk_start + j);
            let path = out.join(&file);
            std::fs::write(&path, bytes?).map_err(|e| Error::path(&path, e))?;
            episodes.push(EpisodeMeta {
                file,
                instance_id: a.instance_id,
                split: Split::Train,
                seed: attempt_seed(cfg, a.attempt),
                success: true,
                steps: a.demo.actions.len(),
                side: a.side,
            });
        }
    }
    let manifest = Manifest {
        config_hash: cfg.hash(),
        views: cfg.views,
        height: cfg.image_height,
        width: cfg.image_width,
        feature_dim: cfg.feature_dim,
        action_dim: 3,
        attempts: kept.len() + failures,
        failures,
        episodes,
    };
    let path = out.join(MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| Error::path(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny(steps: usize) -> Episode {
        Episode {
            views: 2,
            height: 2,
            width: 3,
            feature_dim: 2,
            action_dim: 3,
            steps: (0..steps)
                .map(|t| StepRecord {
                    features: vec![vec![t as f32; 12], vec![-0.5; 12]],
                    depth: vec![vec![0.25; 6], vec![0.0; 6]],
                    robot: [0.1, -0.2, 1.0],
                    action: vec![0.01, f32::MIN_POSITIVE, -1.0],
                })
                .collect(),
        }
    }

    #[test]
    fn round_trip_and_layout() {
        let ep = tiny(2);
        let bytes = encode_episode(&ep).unwrap();
        assert_eq!(&bytes[..4], b"GDPE");
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 2 * (2 * 6 * 3 + 3 + 3) + 4);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(decode_episode(&bytes).unwrap(), ep);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_episode(&tiny(1)).unwrap();
        for i in [0, 5, 40, bytes.len() - 1] {
            let mut b = bytes.clone();
            b[i] ^= 0x10;
            assert!(decode_episode(&b).is_err(), "flip at {i}");
        }
        assert!(decode_episode(&bytes[..bytes.len() - 8]).is_err());
        assert!(encode_episode(&tiny(0)).is_err());
    }

    #[test]
    fn paired_attempts_share_start_and_split_sides() {
        let cfg = RunConfig {
            paired_sides: true,
            ..RunConfig::default()
        };
        let mut sides = 0.0;
        for pair in 0..8 {
            let (a, b) = (
                run_attempt(&cfg, 2 * pair).unwrap(),
                run_attempt(&cfg, 2 * pair + 1).unwrap(),
            );
            assert_eq!(a.env.state, b.env.state);
            assert_eq!(a.instance_id, b.instance_id);
            assert_eq!(a.side, -b.side);
            sides += a.side;
        }
        assert!(sides.abs() < 8.0);
        let unpaired = RunConfig::default();
        assert!(!unpaired.paired_sides);
        assert_ne!(attempt_seed(&unpaired, 0), attempt_seed(&unpaired, 1));
    }

    #[test]
    fn rejects_empty_images_with_huge_view_count() {
        let mut b = EPISODE_MAGIC.to_vec();
        for v in [1u32, u32::MAX, 0, 1, 1, 1, 1] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&[0u8; 16]);
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        assert!(decode_episode(&b).is_err());
    }

    #[test]
    fn feature_map_size_is_checked() {
        let bytes: Vec<u8> = [1.0f32, 2.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(decode_feature_map(&bytes, 1, 1, 2).unwrap(), vec![1.0, 2.0]);
        assert!(decode_feature_map(&bytes, 1, 1, 3).is_err());
        assert!(decode_feature_map(&bytes, usize::MAX, 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_payloads_round_trip_bitwise(
            vals in proptest::collection::vec(any::<u32>(), 2 * (4 + 2 + 3 + 2))
        ) {
            let f: Vec<f32> = vals.iter().map(|&b| f32::from_bits(b)).collect();
            let step = |o: usize| StepRecord {
                features: vec![f[o..o + 4].to_vec()],
                depth: vec![f[o + 4..o + 6].to_vec()],
                robot: [f[o + 6], f[o + 7], f[o + 8]],
                action: f[o + 9..o + 11].to_vec(),
            };
            let ep = Episode { views: 1, height: 1, width: 2, feature_dim: 2, action_dim: 2, steps: vec![step(0), step(11)] };
            let back = decode_episode(&encode_episode(&ep).unwrap()).unwrap();
            let bits = |e: &Episode| -> Vec<u32> {
                e.steps.iter().flat_map(|s| {
                    s.features.concat().into_iter().chain(s.depth.concat()).chain(s.robot).chain(s.action.clone())
                }).map(f32::to_bits).collect()
            };
            prop_assert_eq!(bits(&back), bits(&ep));
        }

        #[test]
        fn decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode_episode(&bytes);
        }
    }
}
