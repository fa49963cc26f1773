//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion names (`C1`, `C6`, ...) as
//! arguments to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Point3;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use semfield::fusion::{build_descriptor_field, evaluate_point, sample_view, FusionParams, View};
use semfield::harness::{
    approach_side, collect_demos, eval_env, evaluate, load_selection, load_training_set,
    part_separation, run_gradcheck, train_on, train_policy, write_loss_csv, DiffusionRunner,
    Perception, RunConfig, Trained,
};
use semfield::netcore::{adam_step, AdamConfig, ParameterStore};
use semfield::policy::{
    add_noise, build_denoiser, ddpm_sample, make_schedule, predict_noise, DiffusionPolicy,
};
use semfield::rng;
use semfield::semantics::{compute_semantic_field, ReferenceDescriptorSet};
use semfield::sim::{
    cast, ring_cameras, sample_instance, CategoryConfig, Hit, ObjectInstance, ObjectPose,
    RenderConfig, Split,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn acceptance_config() -> RunConfig {
    RunConfig::load(&workspace_root().join("configs/acceptance.conf")).expect("acceptance config")
}

/// Random scene: instance, pose, camera ring and rendered views.
struct Scene {
    instance: ObjectInstance,
    pose: ObjectPose,
    views: Vec<View>,
}

fn random_scene(index: u64) -> Scene {
    let mut r = rng::stream(0xacce, &[index]);
    let category = CategoryConfig {
        seed: r.random(),
        ..CategoryConfig::default()
    };
    let split = if r.random_bool(0.5) {
        Split::Train
    } else {
        Split::Test
    };
    let instance = sample_instance(&category, split, r.random_range(0..100));
    let pose = ObjectPose {
        x: r.random_range(-0.1..0.1),
        y: r.random_range(-0.1..0.1),
        yaw: r.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    };
    let render = RenderConfig {
        views: r.random_range(2..=6),
        width: r.random_range(24..=48),
        height: r.random_range(24..=48),
        distance: r.random_range(0.45..0.8),
        elevation_deg: r.random_range(30.0..75.0),
        pixel_noise: 0.1,
        ..RenderConfig::default()
    };
    let cams = ring_cameras(&render).unwrap();
    let images = semfield::sim::render_views(
        &instance,
        &pose,
        &cams,
        render.pixel_noise,
        render.table_half,
        &mut r,
    );
    let views = cams
        .into_iter()
        .zip(images)
        .map(|(c, (f, d))| View::new(c, f, d).unwrap())
        .collect();
    Scene {
        instance,
        pose,
        views,
    }
}

/// Straight per-point, per-view loop written from the fusion definition.
fn brute_force_descriptor(
    p: &Point3<f64>,
    views: &[View],
    params: &FusionParams,
) -> (Vec<f64>, bool) {
    let dim = views[0].features.dim();
    let mut acc = vec![0.0; dim];
    let mut total = 0.0;
    for view in views {
        let cam = &view.camera;
        let pc = cam.rotation * p.coords + cam.translation;
        if pc.z <= 0.0 {
            continue;
        }
        let u = cam.fx * pc.x / pc.z + cam.cx;
        let v = cam.fy * pc.y / pc.z + cam.cy;
        if !(u >= 0.0 && v >= 0.0 && u <= (cam.width - 1) as f64 && v <= (cam.height - 1) as f64) {
            continue;
        }
        let mut depth = 0.0;
        let mut feature = vec![0.0; dim];
        let mut valid = true;
        for y in [v.floor(), v.floor() + 1.0] {
            for x in [u.floor(), u.floor() + 1.0] {
                let w = (1.0 - (u - x).abs()).max(0.0) * (1.0 - (v - y).abs()).max(0.0);
                if w == 0.0 {
                    continue;
                }
                let (xi, yi) = (x as usize, y as usize);
                match view.depth.get(xi, yi) {
                    Some(d) => depth += w * d,
                    None => valid = false,
                }
                for (f, t) in feature.iter_mut().zip(view.features.texel(xi, yi)) {
                    *f += w * *t as f64;
                }
            }
        }
        if !valid {
            continue;
        }
        let dr = depth - pc.z;
        if dr < -params.occlusion_margin {
            continue;
        }
        let w = (-dr.abs() / params.weight_scale).exp();
        total += w;
        for (a, f) in acc.iter_mut().zip(&feature) {
            *a += w * f;
        }
    }
    if total == 0.0 {
        return (vec![0.0; dim], false);
    }
    (acc.iter().map(|a| a / total).collect(), true)
}

fn c1_fusion_oracle() -> Outcome {
    let params = FusionParams::default();
    let bounds = RunConfig::default().bounds().unwrap();
    let (mut worst, mut points, mut flag_mismatch) = (0.0f64, 0usize, 0usize);
    for s in 0..100 {
        let scene = random_scene(s);
        let field = build_descriptor_field(&scene.views, &bounds, 256, &params, s).unwrap();
        for (i, p) in field.points.iter().enumerate() {
            let (d, ok) = brute_force_descriptor(p, &scene.views, &params);
            flag_mismatch += (ok != field.support[i]) as usize;
            for (a, b) in d.iter().zip(field.descriptor(i)) {
                worst = worst.max((a - b).abs());
            }
            points += 1;
        }
    }
    check(
        worst < 1e-6 && flag_mismatch == 0,
        format!("100 scenes, {points} points, max |err| {worst:.2e}, support mismatches {flag_mismatch}"),
    )
}

fn c2_on_surface() -> Outcome {
    let params = FusionParams::default();
    let (mut dr_max, mut feat_max, mut n, mut s) = (0.0f64, 0.0f64, 0usize, 0u64);
    let mut r = rng::stream(0xc2, &[]);
    while n < 1000 {
        let scene = random_scene(1000 + s);
        s += 1;
        let boxes = semfield::sim::world_boxes(&scene.instance, &scene.pose);
        for _ in 0..50 {
            let i = r.random_range(0..scene.views.len());
            let view = &scene.views[i];
            let cam = &view.camera;
            let (u, v) = (
                r.random_range(1..cam.width - 1),
                r.random_range(1..cam.height - 1),
            );
            // Reprojection lands within round-off of the texel center, so a
            // mixed neighborhood would be rejected by design.
            let interior =
                (u - 1..=u + 1).all(|a| (v - 1..=v + 1).all(|b| view.depth.get(a, b).is_some()));
            if !interior {
                continue;
            }
            let (o, d) = (cam.center(), cam.pixel_ray(u as f64, v as f64));
            let t = match cast(&o, &d, &boxes, 0.5) {
                Hit::Part(_, t) | Hit::Table(t) => t,
                Hit::Miss => continue,
            };
            let p = o + d * t;
            let sample = sample_view(&p, cam, &view.features, &view.depth);
            if !sample.visible {
                return Err(format!(
                    "surface point of view {i} pixel ({u}, {v}) not visible"
                ));
            }
            dr_max = dr_max.max(sample.depth_diff.abs());
            let (fused, ok) = evaluate_point(&p, std::slice::from_ref(view), &params);
            if !ok {
                return Err("single-view fusion unsupported".into());
            }
            for (a, b) in fused.iter().zip(view.features.texel(u, v)) {
                feat_max = feat_max.max((a - *b as f64).abs());
            }
            n += 1;
            if n == 1000 {
                break;
            }
        }
    }
    check(
        dr_max < 1e-4 && feat_max < 1e-6,
        format!("{n} points, max |dr| {dr_max:.2e} m, max descriptor err {feat_max:.2e}"),
    )
}

fn c3_semantics() -> Outcome {
    let cfg = RunConfig::default();
    let (sel, _) = load_selection(&cfg).unwrap();
    let perception = Perception::new(&cfg, &sel).unwrap();
    let (mut out_of_range, mut self_err, mut rescale_err) = (0usize, 0.0f64, 0.0f64);
    for e in 0..10 {
        let (_, env) = eval_env(&cfg, Split::Test, e).unwrap();
        let views: Vec<View> = env
            .render_views()
            .into_iter()
            .zip(&perception.cameras)
            .map(|((f, d), c)| View::new(c.clone(), f, d).unwrap())
            .collect();
        let field = build_descriptor_field(
            &views,
            &perception.bounds,
            cfg.field_points,
            &perception.fusion,
            0,
        )
        .unwrap();
        let sem = compute_semantic_field(&field, &perception.refs).unwrap();
        out_of_range += sem
            .values
            .iter()
            .filter(|c| !(-1.0..=1.0).contains(*c))
            .count();

        let picks: Vec<usize> = (0..field.len())
            .filter(|&i| field.support[i])
            .step_by(17)
            .collect();
        let own = ReferenceDescriptorSet::new(
            picks.iter().map(|i| format!("p{i}")).collect(),
            picks
                .iter()
                .map(|&i| field.descriptor(i).to_vec())
                .collect(),
        )
        .unwrap();
        let own_sem = compute_semantic_field(&field, &own).unwrap();
        for (j, &i) in picks.iter().enumerate() {
            self_err = self_err.max((own_sem.get(i, j) - 1.0).abs());
        }

        for c in [1e-3, 0.37, 250.0] {
            let scaled = ReferenceDescriptorSet::new(
                perception.refs.labels().to_vec(),
                (0..perception.refs.len())
                    .map(|j| {
                        perception
                            .refs
                            .descriptor(j)
                            .iter()
                            .map(|x| x * c)
                            .collect()
                    })
                    .collect(),
            )
            .unwrap();
            let mut f2 = field.clone();
            f2.descriptors.iter_mut().for_each(|x| *x *= 1.0 / c + 0.5);
            let s2 = compute_semantic_field(&f2, &scaled).unwrap();
            for (a, b) in s2.values.iter().zip(&sem.values) {
                rescale_err = rescale_err.max((a - b).abs());
            }
        }
    }
    let sep = part_separation(&cfg, &perception, Split::Test, 10).unwrap();
    check(
        out_of_range == 0 && self_err < 1e-9 && rescale_err < 1e-9 && sep.margin() >= 0.3,
        format!(
            "out of range {out_of_range}, self err {self_err:.1e}, rescale err {rescale_err:.1e}, margin {:.3} (own {:.3}, cross {:.3})",
            sep.margin(),
            sep.own,
            sep.cross
        ),
    )
}

fn c4_gradcheck() -> Outcome {
    let s = run_gradcheck(&RunConfig::default(), 4).unwrap();
    check(
        s.encoder.max_rel_error < 1e-3
            && s.denoiser.max_rel_error < 1e-3
            && s.encoder_flipped.max_rel_error > 1e-1
            && s.denoiser_flipped.max_rel_error > 1e-1,
        format!(
            "encoder {:.2e} ({} entries), denoiser {:.2e} ({} entries), flipped controls {:.2e} / {:.2e}",
            s.encoder.max_rel_error,
            s.encoder.entries_checked,
            s.denoiser.max_rel_error,
            s.denoiser.entries_checked,
            s.encoder_flipped.max_rel_error,
            s.denoiser_flipped.max_rel_error
        ),
    )
}

const TOY_MODES: [[f64; 2]; 2] = [[0.8, 0.4], [-0.8, -0.4]];

fn toy_batch(r: &mut impl Rng, n: usize) -> Array2<f64> {
    let mut a = Array2::zeros((n, 2));
    for mut row in a.rows_mut() {
        let m = TOY_MODES[r.random_range(0..2)];
        for c in 0..2 {
            row[c] = m[c] + 0.05 * r.sample::<f64, _>(StandardNormal);
        }
    }
    a
}

fn c5_ddpm() -> Outcome {
    let cfg = RunConfig::default();
    let sched = make_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end).unwrap();
    let mut id_err = 0.0f64;
    let mut prod = 1.0;
    for k in 1..=sched.steps() {
        let beta = cfg.beta_start
            + (cfg.beta_end - cfg.beta_start) * (k - 1) as f64 / (sched.steps() - 1) as f64;
        prod *= 1.0 - beta;
        let prev = prod / (1.0 - beta);
        let sigma = if k == 1 {
            0.0
        } else {
            (beta * (1.0 - prev) / (1.0 - prod)).sqrt()
        };
        for (a, b) in [
            (sched.beta(k), beta),
            (sched.alpha(k), 1.0 - beta),
            (sched.alpha_bar(k), prod),
            (sched.alpha_bar_prev(k), if k == 1 { 1.0 } else { prev }),
            (sched.sigma(k), sigma),
        ] {
            id_err = id_err.max((a - b).abs());
        }
    }

    let mut r = rng::stream(0xc5, &[]);
    let n = 100_000;
    let (mut var_err, mut mean_z) = (0.0f64, 0.0f64);
    for k in [1, 25, 50, 100] {
        let a0 = Array2::from_elem((n, 1), 0.7);
        let eps = Array2::from_shape_simple_fn((n, 1), || r.sample::<f64, _>(StandardNormal));
        let ak = add_noise(a0.view(), k, eps.view(), &sched);
        let mean = ak.mean().unwrap();
        let var = ak.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var_err = var_err.max((var / (1.0 - sched.alpha_bar(k)) - 1.0).abs());
        // Mean within 5 standard errors.
        mean_z =
            mean_z.max((mean - 0.7 * sched.alpha_bar(k).sqrt()).abs() / (var / n as f64).sqrt());
    }

    let net = build_denoiser(2, 1, 32, &[128, 128]).unwrap();
    let mut params = ParameterStore::<f32>::new();
    net.init_params(&mut params, &mut rng::stream(0xc5, &[1]))
        .unwrap();
    let steps = 3000;
    let batch = 256;
    let embed = Array2::<f32>::zeros((batch, 1));
    for step in 0..steps {
        let mut br = rng::stream(0xc5, &[2, step as u64]);
        let a0 = toy_batch(&mut br, batch);
        let eps = Array2::from_shape_simple_fn((batch, 2), || br.sample::<f64, _>(StandardNormal));
        let ks: Vec<usize> = (0..batch)
            .map(|_| br.random_range(1..=sched.steps()))
            .collect();
        let mut noisy = Array2::zeros((batch, 2));
        for i in 0..batch {
            let ab = sched.alpha_bar(ks[i]);
            for c in 0..2 {
                noisy[[i, c]] = ab.sqrt() * a0[[i, c]] + (1.0 - ab).sqrt() * eps[[i, c]];
            }
        }
        let (pred, tape) = predict_noise(&net, &params, noisy.view(), embed.view(), &ks).unwrap();
        params.zero_grad();
        let scale = 2.0 / eps.len() as f64;
        let up = ndarray::Zip::from(&pred)
            .and(&eps)
            .map_collect(|&p, &t| (scale * (p as f64 - t)) as f32);
        net.backward(&mut params, &tape, up.view()).unwrap();
        let lr = 2e-3
            * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / steps as f64).cos()));
        adam_step(
            &mut params,
            &AdamConfig {
                lr,
                ..AdamConfig::default()
            },
        )
        .unwrap();
    }
    let draws = 2000;
    let mut sr = rng::stream(0xc5, &[3]);
    let cond = Array2::<f32>::zeros((draws, 1));
    let samples = ddpm_sample(&sched, draws, 2, &mut sr, |a, k| {
        let (eps, _) = predict_noise(&net, &params, a.view(), cond.view(), &vec![k; a.nrows()])?;
        Ok(eps.mapv(|v| v as f64))
    })
    .unwrap();
    let mut sums = [[0.0; 2]; 2];
    let mut counts = [0usize; 2];
    for row in samples.rows() {
        let d = |m: &[f64; 2]| (row[0] - m[0]).powi(2) + (row[1] - m[1]).powi(2);
        let j = if d(&TOY_MODES[0]) <= d(&TOY_MODES[1]) {
            0
        } else {
            1
        };
        counts[j] += 1;
        sums[j][0] += row[0];
        sums[j][1] += row[1];
    }
    let mass: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let mean_err = (0..2)
        .map(|j| {
            let c = counts[j].max(1) as f64;
            ((sums[j][0] / c - TOY_MODES[j][0]).powi(2)
                + (sums[j][1] / c - TOY_MODES[j][1]).powi(2))
            .sqrt()
        })
        .fold(0.0, f64::max);
    check(
        id_err < 1e-12 && var_err < 0.02 && mean_z < 5.0 && mass.iter().all(|&m| m >= 0.3) && mean_err < 0.1,
        format!(
            "identity err {id_err:.1e}, noise variance rel err {var_err:.4} (mean z {mean_z:.2}), mode mass {:.3}/{:.3}, mode-mean err {mean_err:.3}",
            mass[0], mass[1]
        ),
    )
}

/// Dataset and the two policies shared by C6 and C7.
struct Headline {
    cfg: RunConfig,
    _dir: tempfile::TempDir,
    semantic: Trained,
    ablation: Trained,
    perception: Perception,
}

fn headline() -> Headline {
    let cfg = acceptance_config();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("demos");
    collect_demos(&cfg, &data, None).unwrap();
    let semantic = train_policy(&cfg, &data, &dir.path().join("semantic"), |_, _| {}).unwrap();
    let abl_cfg = RunConfig {
        ablate_semantics: true,
        ..cfg.clone()
    };
    let ablation = train_policy(&abl_cfg, &data, &dir.path().join("ablation"), |_, _| {}).unwrap();
    let (sel, _) = load_selection(&cfg).unwrap();
    let perception = Perception::new(&cfg, &sel).unwrap();
    Headline {
        cfg,
        _dir: dir,
        semantic,
        ablation,
        perception,
    }
}

fn tail_mean(losses: &[f64]) -> f64 {
    let tail = &losses[losses.len().saturating_sub(100)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Largest embedding change when the semantic channels of every frame are
/// swapped between parts.
fn channel_swap_delta(h: &Headline) -> f64 {
    let cfg = &h.cfg;
    let enc = &h.semantic.policy.encoder;
    let mut worst = 0.0f64;
    for e in 0..5 {
        let (_, env) = eval_env(cfg, Split::Test, e).unwrap();
        let field = h.perception.field(env.render_views()).unwrap();
        let obs = field.observation(env.state.robot(), false);
        let mut swapped = obs.clone();
        for row in swapped.channels.chunks_exact_mut(obs.parts) {
            row.reverse();
        }
        let a = enc.prepare(&obs).unwrap();
        let b = enc.prepare(&swapped).unwrap();
        let (ea, _) = enc
            .forward(&h.semantic.params, &vec![&a; cfg.obs_horizon])
            .unwrap();
        let (eb, _) = enc
            .forward(&h.semantic.params, &vec![&b; cfg.obs_horizon])
            .unwrap();
        let d = ea
            .iter()
            .zip(eb.iter())
            .map(|(x, y)| (x - y).abs() as f64)
            .fold(0.0, f64::max);
        worst = worst.max(d);
    }
    worst
}

fn c6_headline(h: &Headline) -> Outcome {
    let sem = evaluate(&h.cfg, &h.semantic, &h.perception, Split::Test, 20).unwrap();
    let abl = evaluate(&h.cfg, &h.ablation, &h.perception, Split::Test, 20).unwrap();
    let (rs, ra) = (sem.success_rate.unwrap(), abl.success_rate.unwrap());
    let finite = h.semantic.params.values_finite() && h.ablation.params.values_finite();
    let (ls, la) = (tail_mean(&h.semantic.losses), tail_mean(&h.ablation.losses));
    let swap = channel_swap_delta(h);
    check(
        rs >= 0.8 && ra <= 0.55 && finite && ls < 0.1 && swap >= 1e-3,
        format!(
            "semantic {}/20 ({:.0}%), ablation {}/20 ({:.0}%), final loss {ls:.4} / {la:.4}, finite {finite}, channel-swap embedding change {swap:.2e}",
            sem.successes(),
            100.0 * rs,
            abl.successes(),
            100.0 * ra
        ),
    )
}

fn c7_modes(h: &Headline) -> Outcome {
    let cfg = &h.cfg;
    let (_, env) = eval_env(cfg, Split::Train, 0).unwrap();
    let field = h.perception.field(env.render_views()).unwrap();
    let frame = h
        .semantic
        .policy
        .encoder
        .prepare(&field.observation(env.state.robot(), false))
        .unwrap();
    let runner = DiffusionRunner {
        trained: &h.semantic,
        seed: 0,
        chunk: 0,
    };
    let history = vec![frame; cfg.obs_horizon];
    let chunks = runner
        .sample(&history, 200, rng::derive(cfg.seed, &[0xc7]))
        .unwrap();
    let plus = chunks
        .iter()
        .filter(|c| approach_side(&env, c, cfg.approach_offset) > 0.0)
        .count();
    let (fp, fm) = (plus as f64 / 200.0, (200 - plus) as f64 / 200.0);
    check(
        fp >= 0.2 && fm >= 0.2,
        format!(
            "200 chunks at the start state: +side {:.0}%, -side {:.0}%",
            100.0 * fp,
            100.0 * fm
        ),
    )
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn c8_determinism() -> Outcome {
    let cfg = RunConfig {
        train_steps: 10,
        ..acceptance_config()
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    collect_demos(&cfg, &a, None).unwrap();
    collect_demos(&cfg, &b, None).unwrap();
    let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
    let same_data = fa == fb;
    let mut traces = Vec::new();
    for (i, data) in [&a, &b].iter().enumerate() {
        let policy = DiffusionPolicy::new(cfg.policy(), cfg.encoder()).unwrap();
        let (set, manifest) = load_training_set(&cfg, &policy, data).unwrap();
        let t = train_on(&cfg, policy, &set, &manifest.config_hash, |_, _| {}).unwrap();
        let csv = dir.path().join(format!("loss{i}.csv"));
        write_loss_csv(&csv, &t.losses).unwrap();
        traces.push(std::fs::read(&csv).unwrap());
    }
    check(
        same_data && traces[0] == traces[1],
        format!(
            "{} dataset files identical: {same_data}; 10-step loss traces identical: {}",
            fa.len(),
            traces[0] == traces[1]
        ),
    )
}

fn run(name: &str, what: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = t.elapsed().as_secs_f64();
    let (tag, detail) = match &r {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {name} {what}: {detail} [{secs:.1}s]");
    r.is_ok()
}

fn main() {
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| a.starts_with('C'))
        .collect();
    let wanted = |c: &str| args.is_empty() || args.iter().any(|a| a == c);
    let start = Instant::now();
    let mut ok = true;
    if wanted("C1") {
        ok &= run("C1", "fusion oracle equivalence", c1_fusion_oracle);
    }
    if wanted("C2") {
        ok &= run("C2", "on-surface consistency", c2_on_surface);
    }
    if wanted("C3") {
        ok &= run("C3", "semantic-field correctness", c3_semantics);
    }
    if wanted("C4") {
        ok &= run("C4", "gradient verification", c4_gradcheck);
    }
    if wanted("C5") {
        ok &= run("C5", "DDPM sanity", c5_ddpm);
    }
    if wanted("C6") || wanted("C7") {
        let t = Instant::now();
        match catch_unwind(headline) {
            Ok(h) => {
                println!(
                    "     trained semantic and ablation policies in {:.1}s",
                    t.elapsed().as_secs_f64()
                );
                if wanted("C6") {
                    ok &= run(
                        "C6",
                        "semantic vs geometry-only on unseen instances",
                        || c6_headline(&h),
                    );
                }
                if wanted("C7") {
                    ok &= run("C7", "multimodal approach chunks", || c7_modes(&h));
                }
            }
            Err(_) => {
                ok = false;
                for c in ["C6", "C7"].into_iter().filter(|c| wanted(c)) {
                    println!("FAIL {c}: collecting or training the policies panicked");
                }
            }
        }
    }
    if wanted("C8") {
        ok &= run("C8", "determinism", c8_determinism);
    }
    println!(
        "acceptance: {} in {:.1}s",
        if ok { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    if !ok {
        std::process::exit(1);
    }
}
