//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p mlmosaic --test acceptance -- --nocapture`;
//! pass criterion numbers after `--` to run a subset. Failures are reported
//! but only turn into a non-zero exit when `ACCEPTANCE_STRICT=1`.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use mlmosaic::cli::{cmd_mosaic, cmd_synth, Mode};
use mlmosaic::image::Raster;
use mlmosaic::mlm::{chain_registration, pairwise_chain, panorama_alignment_system, refine, update_system, MlmOptions};
use mlmosaic::motion::{ModelKind, MotionParams};
use mlmosaic::panorama::{compute_bounds, estimate_panorama, ml_cost, ml_residual, weight_map, RefGrid, Registration};
use mlmosaic::synth::{
    evaluate, generate, low_texture_source, textured_source, SourceSpec, SynthConfig, SynthSpec, Trajectory,
};
use mlmosaic::two_frame::{register_pair, register_with_window, window_cost, RegisterOptions, Window, WindowSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1  residual/cost bridge", bridge),
        ("2  panorama optimality", optimality),
        ("3  jacobian and gradient checks", gradient_checks),
        ("4  gamma forms agree", gamma_forms),
        ("5  cost profile minima", cost_profile),
        ("6  small-overlap pairs", || small_overlap(Texture::Rich)),
        ("7  corrupted chain refinement", corrupted_chain),
        ("8  two-frame reduction", two_frame_reduction),
        ("9  determinism", determinism),
        ("10 small-overlap pairs, low texture", || small_overlap(Texture::Low)),
    ];
    // Optional arguments select criteria by number.
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|n| name.split_whitespace().next() == Some(n)) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} {name}: {} [{secs:.1} s]",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
        failed += usize::from(!out.pass);
    }
    println!("{failed} criteria failed");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

fn within(start: Instant, limit: Duration) -> bool {
    start.elapsed() < limit
}

fn noise_raster(w: usize, h: usize, rng: &mut impl Rng) -> Raster {
    Raster::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// 3 to 5 random 64x64 frames with random near-identity affine maps.
fn random_instance(seed: u64) -> (Vec<Raster>, Registration) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=5);
    let images: Vec<Raster> = (0..n).map(|_| noise_raster(64, 64, &mut rng)).collect();
    let mut params = vec![MotionParams::identity(ModelKind::Affine)];
    for _ in 1..n {
        let mut u = |s: f64| rng.random_range(-s..s);
        params.push(MotionParams::affine([1.0 + u(0.1), u(0.1), u(0.1), 1.0 + u(0.1), u(20.0), u(20.0)]).unwrap());
    }
    (images, Registration::new(ModelKind::Affine, params, 0).unwrap())
}

fn bridge() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (images, reg) = random_instance(seed);
        let grid = compute_bounds(&images, &reg, 0).unwrap();
        let pano = estimate_panorama(&images, &reg, &grid).unwrap();
        let residual = ml_residual(&images, &reg, &pano).unwrap();
        let cost = ml_cost(&images, &reg, &grid).unwrap();
        worst = worst.max((residual - cost / 2.0).abs() / (cost / 2.0));
    }
    let fast = within(start, Duration::from_secs(10));
    Outcome {
        pass: worst <= 1e-8 && fast,
        detail: format!("max relative gap {worst:.2e} (tol 1e-8) over 20 instances, under 10 s: {fast}"),
    }
}

fn optimality() -> Outcome {
    let mut violations = 0;
    let mut trials = 0;
    for seed in 0..20 {
        let (images, reg) = random_instance(100 + seed);
        let grid = compute_bounds(&images, &reg, 0).unwrap();
        let pano = estimate_panorama(&images, &reg, &grid).unwrap();
        let base = ml_residual(&images, &reg, &pano).unwrap();
        let defined: Vec<(usize, usize)> = (0..grid.height())
            .flat_map(|r| (0..grid.width()).map(move |c| (c, r)))
            .filter(|&(c, r)| pano.is_defined(c, r))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let (c, r) = defined[rng.random_range(0..defined.len())];
            for eps in [0.01, -0.01] {
                let mut moved = pano.clone();
                moved.image.set(c, r, pano.image.get(c, r) + eps).unwrap();
                trials += 1;
                if ml_residual(&images, &reg, &moved).unwrap() <= base {
                    violations += 1;
                }
            }
        }
    }
    Outcome {
        pass: violations == 0,
        detail: format!("{violations} violations in {trials} perturbations (100 pixels x 20 instances, +-0.01)"),
    }
}

fn smooth(x: f64, y: f64) -> f64 {
    0.5 + 0.25 * (x / 41.0).sin() * (y / 47.0).cos() + 0.2 * ((x - y) / 53.0).sin()
}

/// Frames showing `f` at panorama point `m_i^{-1}(y)` for each pixel `y`.
fn analytic_crops(truth: &[MotionParams], w: usize, h: usize, f: impl Fn(f64, f64) -> f64 + Sync) -> Vec<Raster> {
    truth
        .iter()
        .map(|p| {
            let inv = p.invert().unwrap();
            Raster::from_fn(w, h, |c, r| {
                let x = inv.map_point([c as f64, r as f64]);
                f(x[0], x[1])
            })
        })
        .collect()
}

/// Half the frozen-W cost terms that involve frame `q`.
fn frozen_half_objective(frames: &[Raster], reg: &Registration, q: usize, theta: &MotionParams, grid: &RefGrid) -> f64 {
    let w = weight_map(frames, reg, grid).unwrap();
    let mut sum = 0.0;
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            let x0 = grid.point(c, r);
            let xq = theta.map_point(x0);
            let Some(vq) = frames[q].sample_bilinear(xq[0], xq[1]) else {
                continue;
            };
            for (i, (img, p)) in frames.iter().zip(reg.params()).enumerate() {
                if i == q {
                    continue;
                }
                let xi = p.map_point(x0);
                if let Some(vi) = img.sample_bilinear(xi[0], xi[1]) {
                    sum += (vi - vq).powi(2) / w.get(c, r) as f64;
                }
            }
        }
    }
    0.5 * sum
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut jac_err = 0.0f64;
    for _ in 0..200 {
        let kind = if rng.random_bool(0.5) {
            ModelKind::Affine
        } else {
            ModelKind::Translation
        };
        let mut u = |s: f64| rng.random_range(-s..s);
        let theta: Vec<f64> = match kind {
            ModelKind::Affine => vec![1.0 + u(0.3), u(0.3), u(0.3), 1.0 + u(0.3), u(50.0), u(50.0)],
            ModelKind::Translation => vec![u(50.0), u(50.0)],
        };
        let p = MotionParams::from_theta(kind, &theta).unwrap();
        let x = [u(100.0), u(100.0)];
        let jac = p.jacobian(x);
        let h = 1e-5;
        for (k, row) in jac.iter().enumerate() {
            let mut d = vec![0.0; p.dof()];
            d[k] = h;
            let plus = p.offset_by(&d).unwrap().map_point(x);
            d[k] = -h;
            let minus = p.offset_by(&d).unwrap().map_point(x);
            for a in 0..2 {
                jac_err = jac_err.max(((plus[a] - minus[a]) / (2.0 * h) - row[a]).abs());
            }
        }
    }

    let mut grad_err = 0.0f64;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let mut u = |s: f64| rng.random_range(-s..s);
        let truth: Vec<MotionParams> = (0..3)
            .map(|i| {
                if i == 0 {
                    MotionParams::identity(ModelKind::Affine)
                } else {
                    let t = 10.0 * i as f64;
                    MotionParams::affine([1.0 + u(0.03), u(0.03), u(0.03), 1.0 + u(0.03), -t + u(3.0), u(3.0)]).unwrap()
                }
            })
            .collect();
        // Smooth enough that central-difference image gradients track the
        // bilinear interpolant's slope.
        let frames = analytic_crops(&truth, 64, 64, |x, y| smooth(x / 2.0, y / 2.0));
        let mut params = truth.clone();
        for p in params.iter_mut().skip(1) {
            let angle = u(std::f64::consts::PI);
            *p = p
                .offset_by(&[0.0, 0.0, 0.0, 0.0, 1.5 * angle.cos(), 1.5 * angle.sin()])
                .unwrap();
        }
        let reg = Registration::new(ModelKind::Affine, params, 0).unwrap();
        let grid = compute_bounds(&frames, &reg, 2).unwrap();
        for q in 1..3 {
            let gamma = update_system(&frames, &reg, q, &grid).unwrap().vector();
            let theta = reg.params()[q];
            let h = 1e-5;
            let mut diff = 0.0;
            for k in 0..theta.dof() {
                let mut d = vec![0.0; theta.dof()];
                d[k] = h;
                let plus = frozen_half_objective(&frames, &reg, q, &theta.offset_by(&d).unwrap(), &grid);
                d[k] = -h;
                let minus = frozen_half_objective(&frames, &reg, q, &theta.offset_by(&d).unwrap(), &grid);
                diff += ((plus - minus) / (2.0 * h) - gamma[k]).powi(2);
            }
            grad_err = grad_err.max(diff.sqrt() / gamma.norm());
        }
    }
    Outcome {
        pass: jac_err <= 1e-8 && grad_err <= 1e-3,
        detail: format!(
            "jacobian max abs err {jac_err:.2e} (tol 1e-8); gamma vs frozen-W finite differences max rel err \
             {grad_err:.2e} (tol 1e-3); gamma equals +grad of half the objective, -gamma is the descent direction"
        ),
    }
}

fn gamma_forms() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (images, reg) = random_instance(200 + seed);
        let grid = compute_bounds(&images, &reg, 1).unwrap();
        for q in 1..reg.len() {
            let a = update_system(&images, &reg, q, &grid).unwrap();
            let b = panorama_alignment_system(&images, &reg, q, &grid).unwrap();
            let m = (a.matrix() - b.matrix()).amax() / a.matrix().amax().max(1.0);
            let v = (a.vector() - b.vector()).amax() / a.vector().amax().max(1.0);
            worst = worst.max(m).max(v);
        }
    }
    Outcome {
        pass: worst <= 1e-10,
        detail: format!("max relative difference {worst:.2e} (tol 1e-10) over 20 instances"),
    }
}

fn add_noise(r: &Raster, sigma: f64, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    let data = r
        .data()
        .iter()
        .map(|v| (v + n.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    Raster::new(r.width(), r.height(), data).unwrap()
}

fn crop(src: &Raster, x0: usize, y0: usize, w: usize, h: usize) -> Raster {
    Raster::from_fn(w, h, |c, r| src.get(x0 + c, y0 + r))
}

/// Local minima of a sampled profile, endpoints included.
fn local_minima(p: &[f64]) -> Vec<usize> {
    (0..p.len())
        .filter(|&k| (k == 0 || p[k] < p[k - 1]) && (k + 1 == p.len() || p[k] < p[k + 1]))
        .collect()
}

fn cost_profile() -> Outcome {
    let start = Instant::now();
    let photo = textured_source(512, 512, 11).unwrap();
    let (w, h) = (256, 256);
    // I(x) = I'(x + 20): the true shift is 20.
    let i = add_noise(&crop(&photo, 120, 128, w, h), 0.02, 1);
    let ip = add_noise(&crop(&photo, 100, 128, w, h), 0.02, 2);
    let shifts: Vec<f64> = (0..=40).map(f64::from).collect();
    let profile = |window: Window| -> Vec<f64> {
        shifts
            .iter()
            .map(|&t| window_cost(&i, &ip, &MotionParams::translation(t, 0.0), window).mean())
            .collect()
    };
    let full = profile(Window::Adaptive);
    let fixed = profile(Window::centered(w, h, 32));
    let full_min = local_minima(&full);
    let fixed_min = local_minima(&fixed);
    let unique = full_min.len() == 1 && (shifts[full_min[0]] - 20.0).abs() <= 0.5;
    let fast = within(start, Duration::from_secs(30));
    Outcome {
        pass: unique && fixed_min.len() >= 2 && fast,
        detail: format!(
            "full-overlap minima at {:?} (want only 20), 32-px window minima at {:?} (want >= 2), under 30 s: {fast}",
            full_min.iter().map(|&k| shifts[k]).collect::<Vec<_>>(),
            fixed_min.iter().map(|&k| shifts[k]).collect::<Vec<_>>()
        ),
    }
}

#[derive(Clone, Copy)]
enum Texture {
    Rich,
    Low,
}

fn small_overlap(texture: Texture) -> Outcome {
    let start = Instant::now();
    let (w, h) = (128usize, 128usize);
    let (mut adaptive_ok, mut fixed_fail) = (0, 0);
    let mut worst_adaptive = 0.0f64;
    for seed in 0..10u64 {
        let source = match texture {
            Texture::Rich => textured_source(512, 512, 1000 + seed).unwrap(),
            Texture::Low => low_texture_source(512, 512, 1000 + seed).unwrap(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Frame 1 starts 85% of a frame width to the right: ~15% overlap.
        let origin = [
            0.85 * w as f64 + rng.random_range(-2.0..2.0),
            rng.random_range(-6.0..6.0),
        ];
        let truth = MotionParams::translation(-origin[0], -origin[1]);
        let cfg = SynthConfig {
            source: source.clone(),
            n_frames: 2,
            frame_size: [w, h],
            kind: ModelKind::Translation,
            trajectory: vec![MotionParams::identity(ModelKind::Translation), truth],
            source_offset: [150.0, 150.0],
            noise_sigma: 0.02,
            seed,
        };
        let ds = generate(&cfg).unwrap();
        let init = truth
            .offset_by(&[rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)])
            .unwrap();
        let opts = RegisterOptions::default();
        let corner = |est: Option<MotionParams>| -> f64 {
            let Some(p) = est else { return f64::INFINITY };
            let reg = Registration::new(
                ModelKind::Translation,
                vec![MotionParams::identity(ModelKind::Translation), p],
                0,
            )
            .unwrap();
            evaluate(&reg, &ds.truth, &ds.frames, &source, cfg.source_offset)
                .unwrap()
                .max_corner_error
        };
        let adaptive = corner(
            register_pair(&ds.frames[0], &ds.frames[1], &init, &opts)
                .ok()
                .map(|r| r.params),
        );
        let fixed = corner(
            register_with_window(&ds.frames[0], &ds.frames[1], &init, WindowSpec::Centered(64), &opts)
                .ok()
                .map(|r| r.params),
        );
        worst_adaptive = worst_adaptive.max(adaptive);
        adaptive_ok += usize::from(adaptive < 0.5);
        fixed_fail += usize::from(fixed > 5.0);
    }
    let fast = within(start, Duration::from_secs(120));
    Outcome {
        pass: adaptive_ok >= 9 && fixed_fail >= 5 && fast,
        detail: format!(
            "adaptive window within 0.5 px on {adaptive_ok}/10 (want >= 9, worst {worst_adaptive:.3} px); \
             64-px fixed window fails (> 5 px or no result) on {fixed_fail}/10 (want >= 5); under 2 min: {fast}"
        ),
    }
}

fn chain_spec(seed: u64, sigma: f64) -> SynthSpec {
    SynthSpec {
        source: SourceSpec::Textured {
            width: 512,
            height: 512,
            seed: 500 + seed,
        },
        n_frames: 6,
        frame_size: [128, 128],
        kind: ModelKind::Affine,
        trajectory: Trajectory::Chain {
            step: [12.0, 4.0],
            shift_jitter: 2.0,
            linear_jitter: 0.01,
        },
        source_offset: [120.0, 120.0],
        noise_sigma: sigma,
        seed,
    }
}

struct ChainRun {
    before: f64,
    after: f64,
    ratio: f64,
    monotone: bool,
}

fn run_corrupted_chain(seed: u64, sigma: f64) -> ChainRun {
    let cfg = chain_spec(seed, sigma).resolve(".").unwrap();
    let ds = generate(&cfg).unwrap();
    let mut pairs = pairwise_chain(&ds.frames, ModelKind::Affine, &RegisterOptions::default()).unwrap();
    // The fourth frame's pairwise map picks up a 5 px offset that
    // propagates down the chain.
    let offset = MotionParams::affine([1.0, 0.0, 0.0, 1.0, 5.0, 5.0]).unwrap();
    pairs[2] = offset.compose(&pairs[2]).unwrap();
    let reg0 = chain_registration(ModelKind::Affine, &pairs).unwrap();
    let before = evaluate(&reg0, &ds.truth, &ds.frames, &cfg.source, cfg.source_offset).unwrap();
    let (reg, trace) = refine(&ds.frames, &reg0, &MlmOptions::default()).unwrap();
    let after = evaluate(&reg, &ds.truth, &ds.frames, &cfg.source, cfg.source_offset).unwrap();
    let costs = trace.costs();
    ChainRun {
        before: before.max_corner_error,
        after: after.max_corner_error,
        ratio: costs[0] / costs[costs.len() - 1],
        monotone: costs.windows(2).all(|w| w[1] <= w[0]),
    }
}

fn corrupted_chain() -> Outcome {
    let start = Instant::now();
    let summarize = |sigma: f64| {
        let runs: Vec<ChainRun> = (0..10).map(|seed| run_corrupted_chain(seed, sigma)).collect();
        let passed = runs
            .iter()
            .filter(|r| r.before > 5.0 && r.after < 0.5 && r.ratio >= 10.0)
            .count();
        let monotone = runs.iter().all(|r| r.monotone);
        let seeds: Vec<String> = runs
            .iter()
            .map(|r| format!("{:.1}->{:.2}px/{:.0}x", r.before, r.after, r.ratio))
            .collect();
        (passed, monotone, seeds.join(" "))
    };
    let (passed, monotone, seeds) = summarize(0.02);
    let fast = within(start, Duration::from_secs(300));
    // Diagnostic only: the same scenario without noise.
    let (clean, clean_monotone, _) = summarize(0.0);
    Outcome {
        pass: passed >= 9 && monotone && fast,
        detail: format!(
            "sigma 0.02: {passed}/10 seeds go from > 5 px to < 0.5 px with cost decrease >= 10x (want >= 9); \
             trace non-increasing on all: {monotone}; under 5 min: {fast}; per seed [{seeds}]; \
             noiseless for reference: {clean}/10, non-increasing: {clean_monotone}"
        ),
    }
}

fn two_frame_reduction() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let (l1, l2, l3) = (u(35.0, 60.0), u(35.0, 60.0), u(35.0, 60.0));
        let (p1, p2, p3) = (u(0.0, 6.0), u(0.0, 6.0), u(0.0, 6.0));
        let scene = move |x: f64, y: f64| {
            0.5 + 0.25 * (x / l1 + p1).sin() * (y / l2 + p2).cos() + 0.2 * ((x - y) / l3 + p3).sin()
        };
        let origin = [u(4.0, 10.0), u(-6.0, 6.0)];
        let a = [
            1.0 + u(-0.02, 0.02),
            u(-0.02, 0.02),
            u(-0.02, 0.02),
            1.0 + u(-0.02, 0.02),
        ];
        let t = [
            -(a[0] * origin[0] + a[1] * origin[1]),
            -(a[2] * origin[0] + a[3] * origin[1]),
        ];
        let truth = [
            MotionParams::identity(ModelKind::Affine),
            MotionParams::affine([a[0], a[1], a[2], a[3], t[0], t[1]]).unwrap(),
        ];
        let frames = analytic_crops(&truth, 96, 96, scene);
        // Both methods run from identity to tight convergence.
        let mlm = MlmOptions {
            max_sweeps: 400,
            sweep_tol: 1e-12,
            min_update_norm: 1e-7,
            ..Default::default()
        };
        let reg0 = Registration::identity(ModelKind::Affine, 2).unwrap();
        let (reg, _) = refine(&frames, &reg0, &mlm).unwrap();
        let pair_opts = RegisterOptions {
            min_update_norm: 1e-7,
            max_iters_fine: 200,
            ..Default::default()
        };
        let pair = register_pair(&frames[0], &frames[1], &truth[0], &pair_opts).unwrap();
        for (x, y) in reg.params()[1].theta().iter().zip(pair.params.theta()) {
            worst = worst.max((x - y).abs());
        }
    }
    Outcome {
        pass: worst < 1e-3,
        detail: format!("max per-parameter difference {worst:.2e} over 10 smooth pairs (tol 1e-3)"),
    }
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> bool {
    names.iter().all(|n| {
        std::fs::read(a.join(n)).ok().is_some() && std::fs::read(a.join(n)).ok() == std::fs::read(b.join(n)).ok()
    })
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    let mut spec = chain_spec(3, 0.02);
    spec.n_frames = 4;
    spec.source = SourceSpec::Textured {
        width: 320,
        height: 320,
        seed: 3,
    };
    spec.source_offset = [60.0, 60.0];
    std::fs::write(&config, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let run = |tag: &str| {
        let data = tmp.path().join(format!("data_{tag}"));
        let out = tmp.path().join(format!("mosaic_{tag}"));
        cmd_synth(&config, &data, None).unwrap();
        cmd_mosaic(
            &data,
            &out,
            Mode::Mlm,
            ModelKind::Affine,
            &RegisterOptions::default(),
            &MlmOptions::default(),
        )
        .unwrap();
        (data, out)
    };
    let (d1, m1) = run("a");
    let (d2, m2) = single.install(|| run("b"));
    let synth_same = same_files(
        &d1,
        &d2,
        &[
            "frame_000.pgm",
            "frame_001.pgm",
            "frame_002.pgm",
            "frame_003.pgm",
            "truth.json",
            "config.json",
            "source.pgm",
        ],
    );
    let mosaic_same = same_files(
        &m1,
        &m2,
        &[
            "panorama.pgm",
            "weights.pgm",
            "registration.json",
            "registration_sequential.json",
            "trace.jsonl",
        ],
    );
    Outcome {
        pass: synth_same && mosaic_same,
        detail: format!(
            "synth artifacts identical: {synth_same}; mosaic artifacts identical: {mosaic_same} \
             (second run on a single worker thread)"
        ),
    }
}
