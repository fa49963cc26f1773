//! Top-down semantic-field images.
//!
//! Points are splatted as small disks onto an orthographic top view with a
//! z-buffer (higher points win). A pixel's color is the `hot` colormap of
//! `t = clamp(similarity, 0, 1)`: black at 0, through red and yellow, to
//! white at 1. Pixels without points are dark slate blue.

use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::eval::eval_env;
use super::observe::{FrameField, Perception};
use crate::error::{Error, Result};
use crate::semantics::ReferenceSelection;
use crate::sim::Split;

pub const HEATMAP_SIZE: usize = 128;
pub const SPLAT_RADIUS: i64 = 2;
pub const BACKGROUND: [u8; 3] = [24, 24, 40];

/// `hot` colormap: `r` ramps on `[0, 1/3]`, `g` on `[1/3, 2/3]`, `b` on
/// `[2/3, 1]`.
pub fn hot(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let ramp = |lo: f64| ((3.0 * (t - lo)).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ramp(0.0), ramp(1.0 / 3.0), ramp(2.0 / 3.0)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub size: usize,
    pub rgb: Vec<u8>,
    /// Index of the point shown at each pixel.
    pub owner: Vec<Option<usize>>,
}

impl Heatmap {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.size + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Binary PPM (P6, 8-bit).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.size, self.size).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}

/// Square view centered on the points' bounding box, 15% margin. Image
/// `+x` is world `+x`, image rows grow toward world `-y`.
pub fn render_heatmap(field: &FrameField, channel: usize, size: usize) -> Heatmap {
    let mut rgb = BACKGROUND.repeat(size * size);
    let mut owner = vec![None; size * size];
    if field.points.is_empty() || size == 0 {
        return Heatmap { size, rgb, owner };
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &field.points {
        lo = [lo[0].min(p.x), lo[1].min(p.y)];
        hi = [hi[0].max(p.x), hi[1].max(p.y)];
    }
    let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let half = (0.5 * (hi[0] - lo[0]).max(hi[1] - lo[1])).max(1e-3) * 1.15;
    let scale = size as f64 / (2.0 * half);
    let mut zbuf = vec![f64::NEG_INFINITY; size * size];
    for (i, p) in field.points.iter().enumerate() {
        let cx = ((p.x - center[0] + half) * scale).floor() as i64;
        let cy = ((center[1] + half - p.y) * scale).floor() as i64;
        let color = hot(field.semantic[i * field.parts + channel]);
        for dy in -SPLAT_RADIUS..=SPLAT_RADIUS {
            for dx in -SPLAT_RADIUS..=SPLAT_RADIUS {
                let (x, y) = (cx + dx, cy + dy);
                if dx * dx + dy * dy > SPLAT_RADIUS * SPLAT_RADIUS || x < 0 || y < 0 {
                    continue;
                }
                let (x, y) = (x as usize, y as usize);
                if x >= size || y >= size {
                    continue;
                }
                let j = y * size + x;
                if p.z > zbuf[j] {
                    zbuf[j] = p.z;
                    owner[j] = Some(i);
                    rgb[3 * j..3 * j + 3].copy_from_slice(&color);
                }
            }
        }
    }
    Heatmap { size, rgb, owner }
}

/// Renders evaluation scene `scene_seed` of `split` and writes one PPM per
/// reference part to `out`, named `heatmap_<part>.ppm`.
pub fn export_heatmap(
    cfg: &RunConfig,
    split: Split,
    scene_seed: u64,
    sel: &ReferenceSelection,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let perception = Perception::new(cfg, sel)?;
    let (_, env) = eval_env(cfg, split, scene_seed as usize)?;
    let field = perception.field(env.render_views())?;
    std::fs::create_dir_all(out).map_err(|e| Error::path(out, e))?;
    perception
        .refs
        .labels()
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let name: String = label
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c == '-' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            let path = out.join(format!("heatmap_{name}.ppm"));
            std::fs::write(&path, render_heatmap(&field, j, HEATMAP_SIZE).to_ppm())
                .map_err(|e| Error::path(&path, e))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::observe::load_selection;
    use crate::semantics::ReferenceDescriptorSet;
    use crate::sim::{HANDLE, HEAD};
    use nalgebra::Point2;

    fn scene(cfg: &RunConfig, exact_refs: bool) -> (FrameField, crate::sim::SimEnv) {
        let (sel, _) = load_selection(cfg).unwrap();
        let mut per = Perception::new(cfg, &sel).unwrap();
        let (_, env) = eval_env(cfg, Split::Test, 4).unwrap();
        if exact_refs {
            per.refs = ReferenceDescriptorSet::new(
                vec![HANDLE.into(), HEAD.into()],
                env.instance
                    .parts
                    .iter()
                    .map(|p| p.descriptor.clone())
                    .collect(),
            )
            .unwrap();
        }
        (per.field(env.render_views()).unwrap(), env)
    }

    fn on_handle(env: &crate::sim::SimEnv, p: &nalgebra::Point3<f64>) -> bool {
        let q = env.state.pose.to_local(&Point2::new(p.x, p.y));
        q.x > 0.0
    }

    /// Texels near an edge blend the handle with the head or the table, so
    /// only the inner top face is pure handle.
    fn inside_handle_top(env: &crate::sim::SimEnv, p: &nalgebra::Point3<f64>) -> bool {
        const EDGE: f64 = 0.012;
        let q = env.state.pose.to_local(&Point2::new(p.x, p.y));
        let h = env.instance.handle();
        let d = q - h.center;
        (p.z - h.height).abs() < 1e-6
            && d.x.abs() < h.half_extents.x - EDGE
            && d.y.abs() < h.half_extents.y - EDGE
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(hot(0.0), [0, 0, 0]);
        assert_eq!(hot(-0.5), [0, 0, 0]);
        assert_eq!(hot(1.0), [255, 255, 255]);
        assert_eq!(hot(0.5), [255, 128, 0]);
    }

    #[test]
    fn self_reference_is_max_color_on_its_part() {
        let cfg = RunConfig {
            pixel_noise: 0.0,
            ..RunConfig::default()
        };
        let (field, env) = scene(&cfg, true);
        let img = render_heatmap(&field, 0, HEATMAP_SIZE);
        let mut checked = 0;
        for (j, o) in img.owner.iter().enumerate() {
            if let Some(i) = *o {
                if field.support[i] && inside_handle_top(&env, &field.points[i]) {
                    assert_eq!(img.pixel(j % img.size, j / img.size), [255, 255, 255]);
                    checked += 1;
                }
            }
        }
        assert!(checked > 100, "{checked}");
    }

    #[test]
    fn handle_channel_brighter_on_handle() {
        let cfg = RunConfig::default();
        let (field, env) = scene(&cfg, false);
        let img = render_heatmap(&field, 0, HEATMAP_SIZE);
        let (mut h, mut d) = (Vec::new(), Vec::new());
        for (j, o) in img.owner.iter().enumerate() {
            if let Some(i) = *o {
                let p = img.pixel(j % img.size, j / img.size);
                let v = p.iter().map(|&c| c as f64).sum::<f64>();
                if on_handle(&env, &field.points[i]) {
                    h.push(v);
                } else {
                    d.push(v);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&h) > 2.0 * mean(&d), "{} vs {}", mean(&h), mean(&d));
    }

    #[test]
    fn export_is_deterministic_ppm() {
        let cfg = RunConfig::default();
        let (sel, _) = load_selection(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = export_heatmap(&cfg, Split::Test, 2, &sel, &dir.path().join("a")).unwrap();
        let b = export_heatmap(&cfg, Split::Test, 2, &sel, &dir.path().join("b")).unwrap();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            let (x, y) = (std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
            assert!(x.starts_with(b"P6\n128 128\n255\n"));
            assert_eq!(x.len(), 15 + 128 * 128 * 3);
            assert_eq!(x, y);
        }
    }
}
