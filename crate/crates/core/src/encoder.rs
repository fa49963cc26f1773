//! Hierarchical point-set encoder.
//!
//! Each frame goes through two set-abstraction levels (FPS centroids,
//! radius grouping, relative coordinates concatenated with per-point
//! features, a shared MLP and a max-pool per group), then a group-all stage
//! that sees the absolute centroid positions, a global max-pool and a dense
//! projection. Frames are concatenated in time order and the projected
//! proprioceptive history is appended.
//!
//! Everything that depends only on point coordinates (centroids, groups,
//! relative offsets) is computed once per observation by
//! [`Encoder::prepare`]; the differentiable part then runs on whole batches.

use std::cmp::Ordering;

use nalgebra::Point3;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::fps_downsample;
use crate::netcore::gradcheck::Objective;
use crate::netcore::{LayerSpec, Network, ParameterStore, Real, Tape};
use crate::semantics::PolicyObservation;

/// Seed for centroid selection. FPS with a nonzero seed starts from the
/// point with the smallest coordinate hash, so the choice is a function of
/// the coordinates alone.
const CENTROID_SEED: u64 = 0x5eed_f1e1d;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Centroids per abstraction level.
    pub centroids: [usize; 2],
    /// Grouping radius per level, meters.
    pub radii: [f64; 2],
    /// Maximum neighbors per group.
    pub neighbors: usize,
    /// Hidden widths of the level-1 shared MLP (input is `parts + 3`).
    pub level1_widths: Vec<usize>,
    /// Hidden widths of the level-2 shared MLP (input is level-1 width + 3).
    pub level2_widths: Vec<usize>,
    pub global_width: usize,
    pub proprio_width: usize,
    /// Observation horizon.
    pub horizon: usize,
    /// Semantic channels per point.
    pub parts: usize,
    /// Absolute coordinates are divided by this before entering the
    /// group-all stage, meters.
    pub coord_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            centroids: [64, 16],
            radii: [0.04, 0.12],
            neighbors: 16,
            level1_widths: vec![64, 64],
            level2_widths: vec![128, 128],
            global_width: 256,
            proprio_width: 64,
            horizon: 2,
            parts: 2,
            coord_scale: 0.25,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("encoder: {m}")));
        if !(self.radii[0] > 0.0 && self.radii[0] < self.radii[1]) {
            return bad("radii must be positive and increasing");
        }
        if self.centroids.contains(&0)
            || self.neighbors == 0
            || self.horizon == 0
            || self.parts == 0
        {
            return bad("counts must be at least 1");
        }
        if self.level1_widths.is_empty()
            || self.level2_widths.is_empty()
            || self
                .level1_widths
                .iter()
                .chain(&self.level2_widths)
                .any(|&w| w == 0)
            || self.global_width == 0
            || self.proprio_width == 0
        {
            return bad("widths must be at least 1");
        }
        if !(self.coord_scale > 0.0) {
            return bad("coordinate scale must be positive");
        }
        Ok(())
    }

    pub fn embedding_width(&self) -> usize {
        self.horizon * self.global_width + self.proprio_width
    }
}

/// Parameter-free part of encoding one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFrame {
    /// Level-1 rows `[(p - c) / r1, channels]`, grouped by centroid.
    level1_input: Array2<f64>,
    level1_offsets: Vec<usize>,
    /// Level-2 rows: relative offsets and the level-1 centroid each row
    /// gathers its feature from.
    level2_offset_xyz: Array2<f64>,
    level2_members: Vec<usize>,
    level2_offsets: Vec<usize>,
    /// Scaled absolute positions of the level-2 centroids.
    global_xyz: Array2<f64>,
    proprio: [f64; 3],
}

impl PreparedFrame {
    pub fn proprio(&self) -> [f64; 3] {
        self.proprio
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    level1: Network,
    level2: Network,
    global_pre: Network,
    global_post: Network,
    proprio: Network,
}

/// Records needed by [`Encoder::backward`].
pub struct EncoderTape<T> {
    frames: usize,
    items: usize,
    level1_tape: Tape<T>,
    level1_rows: usize,
    level1_argmax: Vec<usize>,
    level2_tape: Tape<T>,
    level2_rows: usize,
    level2_argmax: Vec<usize>,
    /// Per level-2 row: global index of the level-1 group it gathered.
    level2_sources: Vec<usize>,
    global_pre_tape: Tape<T>,
    global_rows: usize,
    global_argmax: Vec<usize>,
    global_post_tape: Tape<T>,
    proprio_tape: Tape<T>,
}

fn pointwise(prefix: &str, input: usize, widths: &[usize]) -> Result<Network> {
    let mut layers = Vec::new();
    let mut w = input;
    for (i, &h) in widths.iter().enumerate() {
        layers.push(LayerSpec::dense(format!("{prefix}.{i}"), w, h));
        layers.push(LayerSpec::Mish);
        w = h;
    }
    Network::new(input, layers)
}

/// Members of the group around `center`: every candidate within `radius`,
/// nearest first with ties broken by coordinates, truncated to `cap`.
fn radius_group(
    candidates: &[Point3<f64>],
    center: &Point3<f64>,
    radius: f64,
    cap: usize,
) -> Vec<usize> {
    let r2 = radius * radius;
    let mut hits: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let d2 = (p - center).norm_squared();
            (d2 <= r2).then_some((d2, i))
        })
        .collect();
    hits.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| {
                let (pa, pb) = (&candidates[a.1], &candidates[b.1]);
                (0..3)
                    .map(|k| pa[k].partial_cmp(&pb[k]).unwrap_or(Ordering::Equal))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
    });
    hits.truncate(cap);
    hits.into_iter().map(|(_, i)| i).collect()
}

/// Max over each row range `offsets[g]..offsets[g+1]` of `h`, with the
/// winning row per (group, column).
fn group_max<T: Real>(
    h: &Array2<T>,
    offsets: &[usize],
    out: &mut Array2<T>,
    argmax: &mut Vec<usize>,
) {
    let cols = h.ncols();
    for g in 0..offsets.len() - 1 {
        let (lo, hi) = (offsets[g], offsets[g + 1]);
        let mut best: Vec<T> = h.row(lo).to_vec();
        let mut arg = vec![lo; cols];
        for r in lo + 1..hi {
            for (c, &v) in h.row(r).iter().enumerate() {
                if v > best[c] {
                    best[c] = v;
                    arg[c] = r;
                }
            }
        }
        out.row_mut(g)
            .iter_mut()
            .zip(&best)
            .for_each(|(o, b)| *o = *b);
        argmax.extend(arg);
    }
}

fn to_real<T: Real>(a: &Array2<f64>) -> Array2<T> {
    a.mapv(T::of)
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let w1 = *config.level1_widths.last().expect("validated");
        let w2 = *config.level2_widths.last().expect("validated");
        Ok(Self {
            level1: pointwise("enc.sa1", config.parts + 3, &config.level1_widths)?,
            level2: pointwise("enc.sa2", w1 + 3, &config.level2_widths)?,
            global_pre: pointwise("enc.global", w2 + 3, &[config.global_width])?,
            global_post: Network::new(
                config.global_width,
                vec![LayerSpec::dense(
                    "enc.frame",
                    config.global_width,
                    config.global_width,
                )],
            )?,
            proprio: pointwise("enc.proprio", 3 * config.horizon, &[config.proprio_width])?,
            config,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embedding_width(&self) -> usize {
        self.config.embedding_width()
    }

    fn networks(&self) -> [&Network; 5] {
        [
            &self.level1,
            &self.level2,
            &self.global_pre,
            &self.global_post,
            &self.proprio,
        ]
    }

    pub fn init_params<T: Real>(
        &self,
        store: &mut ParameterStore<T>,
        rng: &mut impl Rng,
    ) -> Result<()> {
        for net in self.networks() {
            net.init_params(store, rng)?;
        }
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        self.networks()
            .iter()
            .flat_map(|n| n.param_names())
            .collect()
    }

    /// Centroids, groups and relative coordinates for one observation.
    pub fn prepare(&self, obs: &PolicyObservation) -> Result<PreparedFrame> {
        let cfg = &self.config;
        if obs.parts != cfg.parts {
            return Err(Error::DimensionMismatch(format!(
                "observation has {} channels, encoder expects {}",
                obs.parts, cfg.parts
            )));
        }
        if obs.channels.len() != obs.points.len() * obs.parts {
            return Err(Error::DimensionMismatch(
                "channel block does not match point count".into(),
            ));
        }
        let l1 = fps_downsample(&obs.points, cfg.centroids[0], CENTROID_SEED)?;
        let mut rows = Vec::new();
        let mut offsets = vec![0];
        for c in &l1.points {
            let members = radius_group(&obs.points, c, cfg.radii[0], cfg.neighbors);
            let members = if members.is_empty() { vec![] } else { members };
            if members.is_empty() {
                // Only reachable if the centroid is not itself a candidate.
                rows.extend([0.0, 0.0, 0.0]);
                rows.extend(std::iter::repeat_n(0.0, cfg.parts));
            }
            for &m in &members {
                let d = (obs.points[m] - c) / cfg.radii[0];
                rows.extend([d.x, d.y, d.z]);
                rows.extend_from_slice(obs.channel_row(m));
            }
            offsets.push(offsets.last().unwrap() + members.len().max(1));
        }
        let level1_input =
            Array2::from_shape_vec((rows.len() / (cfg.parts + 3), cfg.parts + 3), rows)
                .expect("row width");

        let l2 = fps_downsample(&l1.points, cfg.centroids[1], CENTROID_SEED)?;
        let mut xyz = Vec::new();
        let mut members2 = Vec::new();
        let mut offsets2 = vec![0];
        for (ci, c) in l2.points.iter().enumerate() {
            let mut members = radius_group(&l1.points, c, cfg.radii[1], cfg.neighbors);
            if members.is_empty() {
                members.push(l2.indices[ci]);
            }
            for &m in &members {
                let d = (l1.points[m] - c) / cfg.radii[1];
                xyz.extend([d.x, d.y, d.z]);
                members2.push(m);
            }
            offsets2.push(offsets2.last().unwrap() + members.len());
        }
        let level2_offset_xyz =
            Array2::from_shape_vec((members2.len(), 3), xyz).expect("row width");
        let global_xyz = Array2::from_shape_fn((l2.points.len(), 3), |(i, k)| {
            l2.points[i][k] / cfg.coord_scale
        });
        let r = obs.robot.to_vector();
        Ok(PreparedFrame {
            level1_input,
            level1_offsets: offsets,
            level2_offset_xyz,
            level2_members: members2,
            level2_offsets: offsets2,
            global_xyz,
            proprio: [r[0] / cfg.coord_scale, r[1] / cfg.coord_scale, r[2]],
        })
    }

    /// Embeds a batch of observation histories. `frames` holds
    /// `items x horizon` frames, item-major, oldest first.
    pub fn forward<T: Real>(
        &self,
        params: &ParameterStore<T>,
        frames: &[&PreparedFrame],
    ) -> Result<(Array2<T>, EncoderTape<T>)> {
        let cfg = &self.config;
        let h = cfg.horizon;
        if frames.is_empty() || !frames.len().is_multiple_of(h) {
            return Err(Error::DimensionMismatch(format!(
                "{} frames is not a multiple of the horizon {h}",
                frames.len()
            )));
        }
        let items = frames.len() / h;
        let n1 = cfg.centroids[0];
        let n2 = cfg.centroids[1];
        let w1 = *cfg.level1_widths.last().unwrap();
        let w2 = *cfg.level2_widths.last().unwrap();
        let g = cfg.global_width;
        for f in frames {
            if f.level1_offsets.len() != n1 + 1
                || f.level2_offsets.len() != n2 + 1
                || f.level1_input.ncols() != cfg.parts + 3
            {
                return Err(Error::DimensionMismatch(
                    "frame was prepared for a different encoder".into(),
                ));
            }
        }

        // Level 1.
        let x1 = ndarray::concatenate(
            Axis(0),
            &frames
                .iter()
                .map(|f| f.level1_input.view())
                .collect::<Vec<_>>(),
        )
        .expect("equal widths");
        let (h1, level1_tape) = self
            .level1
            .forward(params, to_real::<T>(&x1).view(), None)?;
        let mut f1 = Array2::<T>::zeros((frames.len() * n1, w1));
        let mut level1_argmax = Vec::with_capacity(frames.len() * n1 * w1);
        {
            let mut base = 0;
            for (fi, f) in frames.iter().enumerate() {
                let offsets: Vec<usize> = f.level1_offsets.iter().map(|o| o + base).collect();
                let mut out = f1.slice_mut(s![fi * n1..(fi + 1) * n1, ..]).to_owned();
                group_max(&h1, &offsets, &mut out, &mut level1_argmax);
                f1.slice_mut(s![fi * n1..(fi + 1) * n1, ..]).assign(&out);
                base += f.level1_input.nrows();
            }
        }

        // Level 2.
        let level2_rows: usize = frames.iter().map(|f| f.level2_members.len()).sum();
        let mut x2 = Array2::<T>::zeros((level2_rows, w1 + 3));
        let mut level2_sources = Vec::with_capacity(level2_rows);
        {
            let mut r = 0;
            for (fi, f) in frames.iter().enumerate() {
                for (j, &m) in f.level2_members.iter().enumerate() {
                    let src = fi * n1 + m;
                    for k in 0..3 {
                        x2[[r, k]] = T::of(f.level2_offset_xyz[[j, k]]);
                    }
                    x2.slice_mut(s![r, 3..]).assign(&f1.row(src));
                    level2_sources.push(src);
                    r += 1;
                }
            }
        }
        let (h2, level2_tape) = self.level2.forward(params, x2.view(), None)?;
        let mut f2 = Array2::<T>::zeros((frames.len() * n2, w2));
        let mut level2_argmax = Vec::with_capacity(frames.len() * n2 * w2);
        {
            let mut base = 0;
            for (fi, f) in frames.iter().enumerate() {
                let offsets: Vec<usize> = f.level2_offsets.iter().map(|o| o + base).collect();
                let mut out = Array2::zeros((n2, w2));
                group_max(&h2, &offsets, &mut out, &mut level2_argmax);
                f2.slice_mut(s![fi * n2..(fi + 1) * n2, ..]).assign(&out);
                base += f.level2_members.len();
            }
        }

        // Group-all stage.
        let mut xg = Array2::<T>::zeros((frames.len() * n2, w2 + 3));
        for (fi, f) in frames.iter().enumerate() {
            for i in 0..n2 {
                let r = fi * n2 + i;
                for k in 0..3 {
                    xg[[r, k]] = T::of(f.global_xyz[[i, k]]);
                }
                xg.slice_mut(s![r, 3..]).assign(&f2.row(r));
            }
        }
        let (hg, global_pre_tape) = self.global_pre.forward(params, xg.view(), None)?;
        let mut pooled = Array2::<T>::zeros((frames.len(), g));
        let mut global_argmax = Vec::with_capacity(frames.len() * g);
        let offsets: Vec<usize> = (0..=frames.len()).map(|i| i * n2).collect();
        group_max(&hg, &offsets, &mut pooled, &mut global_argmax);
        let (frame_embed, global_post_tape) =
            self.global_post.forward(params, pooled.view(), None)?;

        // Proprioception over the whole history.
        let mut prop = Array2::<T>::zeros((items, 3 * h));
        for it in 0..items {
            for t in 0..h {
                for k in 0..3 {
                    prop[[it, 3 * t + k]] = T::of(frames[it * h + t].proprio[k]);
                }
            }
        }
        let (prop_embed, proprio_tape) = self.proprio.forward(params, prop.view(), None)?;

        let mut out = Array2::<T>::zeros((items, cfg.embedding_width()));
        for it in 0..items {
            for t in 0..h {
                out.slice_mut(s![it, t * g..(t + 1) * g])
                    .assign(&frame_embed.row(it * h + t));
            }
            out.slice_mut(s![it, h * g..]).assign(&prop_embed.row(it));
        }
        Ok((
            out,
            EncoderTape {
                frames: frames.len(),
                items,
                level1_rows: x1.nrows(),
                level1_tape,
                level1_argmax,
                level2_rows,
                level2_tape,
                level2_argmax,
                level2_sources,
                global_pre_tape,
                global_rows: frames.len() * n2,
                global_argmax,
                global_post_tape,
                proprio_tape,
            },
        ))
    }

    /// Accumulates parameter gradients for `upstream = dL/d embedding`.
    pub fn backward<T: Real>(
        &self,
        params: &mut ParameterStore<T>,
        tape: &EncoderTape<T>,
        upstream: ArrayView2<T>,
    ) -> Result<()> {
        let cfg = &self.config;
        let h = cfg.horizon;
        let g = cfg.global_width;
        let n1 = cfg.centroids[0];
        let n2 = cfg.centroids[1];
        let w1 = *cfg.level1_widths.last().unwrap();
        let w2 = *cfg.level2_widths.last().unwrap();
        if upstream.dim() != (tape.items, cfg.embedding_width()) {
            return Err(Error::DimensionMismatch(format!(
                "encoder upstream is {:?}, expected ({}, {})",
                upstream.dim(),
                tape.items,
                cfg.embedding_width()
            )));
        }

        self.proprio
            .backward(params, &tape.proprio_tape, upstream.slice(s![.., h * g..]))?;

        let mut d_frame = Array2::<T>::zeros((tape.frames, g));
        for it in 0..tape.items {
            for t in 0..h {
                d_frame
                    .row_mut(it * h + t)
                    .assign(&upstream.slice(s![it, t * g..(t + 1) * g]));
            }
        }
        let (d_pooled, _) =
            self.global_post
                .backward(params, &tape.global_post_tape, d_frame.view())?;

        let mut d_hg = Array2::<T>::zeros((tape.global_rows, g));
        for fi in 0..tape.frames {
            for c in 0..g {
                d_hg[[tape.global_argmax[fi * g + c], c]] += d_pooled[[fi, c]];
            }
        }
        let (d_xg, _) = self
            .global_pre
            .backward(params, &tape.global_pre_tape, d_hg.view())?;

        // d_xg columns 3.. are dL/dF2, one row per level-2 group.
        let mut d_h2 = Array2::<T>::zeros((tape.level2_rows, w2));
        for grp in 0..tape.frames * n2 {
            for c in 0..w2 {
                d_h2[[tape.level2_argmax[grp * w2 + c], c]] += d_xg[[grp, 3 + c]];
            }
        }
        let (d_x2, _) = self
            .level2
            .backward(params, &tape.level2_tape, d_h2.view())?;

        let mut d_f1 = Array2::<T>::zeros((tape.frames * n1, w1));
        for (r, &src) in tape.level2_sources.iter().enumerate() {
            let mut row = d_f1.row_mut(src);
            row.zip_mut_with(&d_x2.slice(s![r, 3..]), |a, &b| *a += b);
        }
        let mut d_h1 = Array2::<T>::zeros((tape.level1_rows, w1));
        for grp in 0..tape.frames * n1 {
            for c in 0..w1 {
                d_h1[[tape.level1_argmax[grp * w1 + c], c]] += d_f1[[grp, c]];
            }
        }
        self.level1
            .backward(params, &tape.level1_tape, d_h1.view())?;
        Ok(())
    }

    /// Embeds one observation history (`horizon` frames, oldest first).
    pub fn encode<T: Real>(
        &self,
        params: &ParameterStore<T>,
        history: &[PolicyObservation],
    ) -> Result<Array1<T>> {
        if history.len() != self.config.horizon {
            return Err(Error::DimensionMismatch(format!(
                "history has {} frames, horizon is {}",
                history.len(),
                self.config.horizon
            )));
        }
        let prepared = history
            .iter()
            .map(|o| self.prepare(o))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&PreparedFrame> = prepared.iter().collect();
        let (out, _) = self.forward(params, &refs)?;
        Ok(out.row(0).to_owned())
    }
}

/// `0.5 ||embedding||^2` over a fixed batch of prepared frames.
pub struct EncoderObjective<'a> {
    pub encoder: &'a Encoder,
    pub frames: Vec<&'a PreparedFrame>,
}

impl Objective for EncoderObjective<'_> {
    fn value(&self, params: &ParameterStore<f64>) -> Result<f64> {
        let (e, _) = self.encoder.forward(params, &self.frames)?;
        Ok(0.5 * e.iter().map(|v| v * v).sum::<f64>())
    }
    fn gradient(&self, params: &mut ParameterStore<f64>) -> Result<f64> {
        params.zero_grad();
        let (e, tape) = self.encoder.forward(params, &self.frames)?;
        self.encoder.backward(params, &tape, e.view())?;
        Ok(0.5 * e.iter().map(|v| v * v).sum::<f64>())
    }
}
