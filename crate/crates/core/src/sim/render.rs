use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::scene::{world_boxes, ObjectInstance, ObjectPose, WorldBox};
use crate::error::Result;
use crate::geometry::{CameraModel, DepthImage, FeatureImage};

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub views: usize,
    pub width: usize,
    pub height: usize,
    /// Vertical and horizontal field of view, degrees.
    pub fov_deg: f64,
    /// Camera distance from the table origin, meters.
    pub distance: f64,
    pub elevation_deg: f64,
    /// Per-component standard deviation of feature noise.
    pub pixel_noise: f64,
    /// Half side of the square table.
    pub table_half: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            views: 4,
            width: 64,
            height: 64,
            fov_deg: 45.0,
            distance: 0.6,
            elevation_deg: 45.0,
            pixel_noise: 0.1,
            table_half: 0.5,
        }
    }
}

/// Cameras on a ring around the origin, the first at azimuth 45 degrees,
/// all looking at the origin.
pub fn ring_cameras(cfg: &RenderConfig) -> Result<Vec<CameraModel>> {
    let f = 0.5 * cfg.width as f64 / (0.5 * cfg.fov_deg.to_radians()).tan();
    let el = cfg.elevation_deg.to_radians();
    (0..cfg.views)
        .map(|i| {
            let az = (45.0 + 360.0 * i as f64 / cfg.views as f64).to_radians();
            let eye = Point3::new(
                cfg.distance * el.cos() * az.cos(),
                cfg.distance * el.cos() * az.sin(),
                cfg.distance * el.sin(),
            );
            CameraModel::look_at(
                eye,
                Point3::origin(),
                Vector3::z(),
                f,
                f,
                cfg.width,
                cfg.height,
            )
        })
        .collect()
}

/// Entry parameter of the ray `o + t d` into the box, if it is hit at
/// `t > 0`.
pub fn ray_box(o: &Point3<f64>, d: &Vector3<f64>, b: &WorldBox) -> Option<f64> {
    let (s, c) = b.yaw.sin_cos();
    let (rx, ry) = (o.x - b.center.x, o.y - b.center.y);
    let lo = [c * rx + s * ry, -s * rx + c * ry, o.z];
    let ld = [c * d.x + s * d.y, -s * d.x + c * d.y, d.z];
    let min = [-b.half_extents.x, -b.half_extents.y, 0.0];
    let max = [b.half_extents.x, b.half_extents.y, b.height];
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if ld[k] == 0.0 {
            if lo[k] < min[k] || lo[k] > max[k] {
                return None;
            }
        } else {
            let a = (min[k] - lo[k]) / ld[k];
            let b = (max[k] - lo[k]) / ld[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

/// What a pixel ray hits first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hit {
    Part(usize, f64),
    Table(f64),
    Miss,
}

pub fn cast(o: &Point3<f64>, d: &Vector3<f64>, boxes: &[WorldBox], table_half: f64) -> Hit {
    let mut best = Hit::Miss;
    let mut best_t = f64::INFINITY;
    if d.z < 0.0 {
        let t = -o.z / d.z;
        let p = o + d * t;
        if t > 0.0 && p.x.abs() <= table_half && p.y.abs() <= table_half {
            best = Hit::Table(t);
            best_t = t;
        }
    }
    for (i, b) in boxes.iter().enumerate() {
        if let Some(t) = ray_box(o, d, b) {
            if t < best_t {
                best_t = t;
                best = Hit::Part(i, t);
            }
        }
    }
    best
}

/// Z-buffer depth and synthetic descriptors for each camera. Rays have unit
/// camera-frame z, so the hit parameter is the z-depth. Noise is drawn per
/// pixel in row-major order, view by view.
pub fn render_views(
    instance: &ObjectInstance,
    pose: &ObjectPose,
    cams: &[CameraModel],
    pixel_noise: f64,
    table_half: f64,
    rng: &mut impl Rng,
) -> Vec<(FeatureImage, DepthImage)> {
    let boxes = world_boxes(instance, pose);
    let dim = instance.background.len();
    cams.iter()
        .map(|cam| {
            let (w, h) = (cam.width, cam.height);
            let mut feat = FeatureImage::zeros(w, h, dim);
            let mut depth = DepthImage::invalid(w, h);
            let o = cam.center();
            for v in 0..h {
                for u in 0..w {
                    let d = cam.pixel_ray(u as f64, v as f64);
                    let (desc, z) = match cast(&o, &d, &boxes, table_half) {
                        Hit::Part(i, t) => (&instance.parts[i].descriptor, Some(t)),
                        Hit::Table(t) => (&instance.background, Some(t)),
                        Hit::Miss => (&instance.background, None),
                    };
                    depth.set(u, v, z);
                    let texel = feat.texel_mut(u, v);
                    for (t, &b) in texel.iter_mut().zip(desc) {
                        let noise = if pixel_noise > 0.0 {
                            pixel_noise * rng.sample::<f64, _>(StandardNormal)
                        } else {
                            0.0
                        };
                        *t = (b + noise) as f32;
                    }
                }
            }
            (feat, depth)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use crate::sim::scene::{sample_instance, CategoryConfig, Split};
    use nalgebra::{Point2, Vector2};

    fn setup() -> (ObjectInstance, Vec<CameraModel>) {
        let inst = sample_instance(&CategoryConfig::default(), Split::Train, 0);
        (inst, ring_cameras(&RenderConfig::default()).unwrap())
    }

    #[test]
    fn ring_cameras_see_origin_at_center() {
        let cams = ring_cameras(&RenderConfig::default()).unwrap();
        assert_eq!(cams.len(), 4);
        for c in &cams {
            let p = project(&Point3::origin(), c);
            assert!((p.pixel - Vector2::new(31.5, 31.5)).norm() < 1e-9);
            assert!((p.depth - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_table_is_background_at_table_depth() {
        let (mut inst, cams) = setup();
        inst.parts.clear();
        let pose = ObjectPose {
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
        };
        let views = render_views(
            &inst,
            &pose,
            &cams,
            0.0,
            0.5,
            &mut crate::rng::stream(0, &[]),
        );
        for (cam, (f, d)) in cams.iter().zip(&views) {
            // Pixel (31, 31) is half a pixel off the optical axis; intersect
            // its ray with z = 0 by hand.
            let o = cam.center();
            let dir = cam.pixel_ray(31.0, 31.0);
            let t = -o.z / dir.z;
            assert!((d.get(31, 31).unwrap() - t).abs() < 1e-12);
            let texel: Vec<f64> = f.texel(31, 31).iter().map(|&x| x as f64).collect();
            let bg: Vec<f64> = inst.background.iter().map(|&x| x as f32 as f64).collect();
            assert_eq!(texel, bg);
        }
    }

    #[test]
    fn box_top_depth_matches_plane_intersection() {
        let (inst, cams) = setup();
        let pose = ObjectPose {
            x: 0.0,
            y: 0.0,
            yaw: 0.3,
        };
        let boxes = world_boxes(&inst, &pose);
        let cam = &cams[0];
        let top = Point3::new(boxes[0].center.x, boxes[0].center.y, boxes[0].height);
        let px = project(&top, cam).pixel;
        let (u, v) = (px.x.round(), px.y.round());
        let views = render_views(
            &inst,
            &pose,
            &cams[..1],
            0.0,
            0.5,
            &mut crate::rng::stream(0, &[]),
        );
        let o = cam.center();
        let d = cam.pixel_ray(u, v);
        let t = (boxes[0].height - o.z) / d.z;
        let hit = o + d * t;
        let local = pose.to_local(&Point2::new(hit.x, hit.y));
        assert!((local.x - inst.parts[0].center.x).abs() < inst.parts[0].half_extents.x);
        assert!((views[0].1.get(u as usize, v as usize).unwrap() - t).abs() < 1e-9);
    }

    #[test]
    fn noiseless_part_pixels_equal_descriptor() {
        let (inst, cams) = setup();
        let pose = ObjectPose {
            x: 0.02,
            y: 0.01,
            yaw: 1.0,
        };
        let boxes = world_boxes(&inst, &pose);
        let views = render_views(
            &inst,
            &pose,
            &cams,
            0.0,
            0.5,
            &mut crate::rng::stream(0, &[]),
        );
        let mut part_pixels = 0;
        for (cam, (f, _)) in cams.iter().zip(&views) {
            for v in 0..64 {
                for u in 0..64 {
                    if let Hit::Part(i, _) = cast(
                        &cam.center(),
                        &cam.pixel_ray(u as f64, v as f64),
                        &boxes,
                        0.5,
                    ) {
                        part_pixels += 1;
                        let want: Vec<f32> =
                            inst.parts[i].descriptor.iter().map(|&x| x as f32).collect();
                        assert_eq!(f.texel(u, v), &want[..]);
                    }
                }
            }
        }
        assert!(part_pixels > 100);
    }

    #[test]
    fn half_turn_renders_identical_depth() {
        let (inst, cams) = setup();
        let a = ObjectPose {
            x: 0.03,
            y: -0.04,
            yaw: 0.7,
        };
        let b = ObjectPose {
            yaw: 0.7 + std::f64::consts::PI,
            ..a
        };
        let r = &mut crate::rng::stream(0, &[]);
        let va = render_views(&inst, &a, &cams, 0.0, 0.5, r);
        let vb = render_views(&inst, &b, &cams, 0.0, 0.5, r);
        for ((_, da), (_, db)) in va.iter().zip(&vb) {
            for (x, y) in da.raw().iter().zip(db.raw()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ray_box_misses_behind() {
        let b = WorldBox {
            center: Point2::new(0.0, 0.0),
            half_extents: Vector2::new(0.1, 0.1),
            yaw: 0.0,
            height: 0.1,
        };
        let o = Point3::new(0.0, 0.0, 1.0);
        assert!((ray_box(&o, &Vector3::new(0.0, 0.0, -1.0), &b).unwrap() - 0.9).abs() < 1e-15);
        assert!(ray_box(&o, &Vector3::new(0.0, 0.0, 1.0), &b).is_none());
    }
}
