//! Acceptance criteria 1-9. Runs as a plain binary (no libtest harness) so it
//! can print one line per criterion; exits non-zero if any criterion fails.
//!
//! Run alone with `cargo test -p flowdistill --test acceptance`, or a subset
//! with `ACCEPTANCE_ONLY=1,4,9`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;

use flowdistill::camera::CameraSampler;
use flowdistill::config::{ExperimentKind, OracleSpec, ProbeSpec, RunConfig};
use flowdistill::distill::{run_distill_2d, run_distill_3d, DistillConfig, NoiseSource};
use flowdistill::ensemble::ensemble_diversity;
use flowdistill::experiment::{
    correlation_sweep, marginals_within_bounds, prop1_errors, reference_views, rplus_rows,
    view_noise_for,
};
use flowdistill::noise_field::{marginal_stats_probe, FieldDraw, QueryMask, WorldMapNoise};
use flowdistill::oracle::{Component, GuidanceSpec, MixtureOracle};
use flowdistill::rng::{Stream, StreamId};
use flowdistill::sampler::{ddim_trajectory, gaussian_flow, StepGrid};
use flowdistill::scene::{render, render_vjp, RenderOptions, VoxelScene};
use flowdistill::schedule::NoiseSchedule;
use flowdistill::vecops::{dist, dot, rel_err};

// Criterion 1
const PROP1_MAX_REL_ERR: f64 = 1e-9;
const PROP1_MAX_SECS: f64 = 1.0;
// Criterion 2
const GAUSS_MAX_REL_ERR: f64 = 1e-3;
const GAUSS_ORDER_RANGE: (f64, f64) = (1.5, 2.5);
const GAUSS_MAX_SECS: f64 = 5.0;
// Criterion 3
const MARGINAL_SEEDS: u64 = 10_000;
const MARGINAL_PROPORTION_TOL: f64 = 0.02;
const MARGINAL_MEAN_TOL: f64 = 0.05;
const MARGINAL_MAX_SECS: f64 = 30.0;
// Criterion 4 (pilot: FSD dispersion 2.03 with a 20/12 split, SDS 0.41)
const DIVERSITY_SEEDS: u64 = 32;
const DIVERSITY_ITERATIONS: usize = 500;
const DIVERSITY_MIN_MODE_FRACTION: f64 = 0.25;
const DIVERSITY_MAX_RATIO: f64 = 0.5;
// Criterion 5: delta is half the distance from the two-image midpoint to
// either mode, the 3D counterpart of the 0.5 factor above.
const SCENE_SEEDS: u64 = 16;
const SCENE_ITERATIONS: usize = 600;
const SCENE_MIN_CLASS_FRACTION: f64 = 0.25;
const SCENE_DELTA_FRACTION: f64 = 0.25;
const SCENE_MAX_SECS: f64 = 600.0;
// Criterion 6
const NOISE_VIEWS: usize = 10_000;
const NOISE_SWEEP_POINTS: usize = 16;
// Criterion 7
const RPLUS_MAX_REL_ERR: f64 = 0.10;
// Criterion 8
const VJP_CHECKS: u64 = 20;
const VJP_MAX_REL_ERR: f64 = 1e-4;
const VJP_STEP: f64 = 1e-4;

type Check = (usize, &'static str, fn() -> Verdict);

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn bimodal() -> MixtureOracle {
    OracleSpec::bimodal_1d().build().unwrap()
}

fn c1_prop1() -> Verdict {
    let cfg = RunConfig::new(ExperimentKind::VerifyProp1);
    let oracle = cfg.oracle_spec().build().unwrap();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..8 {
        for (_, e) in prop1_errors(&oracle, &cfg, seed).unwrap() {
            worst = worst.max(e);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= PROP1_MAX_REL_ERR && secs < PROP1_MAX_SECS,
        format!("max rel err {worst:.2e} over 8 seeds x 50 steps, {secs:.3} s"),
    )
}

fn c2_gaussian_flow() -> Verdict {
    let schedule = NoiseSchedule::default();
    let mean = vec![0.7, -1.3, 2.1];
    let s0 = 0.5;
    let oracle =
        MixtureOracle::unconditional(vec![Component::new(1.0, mean.clone(), s0)]).unwrap();
    let noise = Stream::new(11, StreamId::InitialNoise).normal_vec(3);
    let start = Instant::now();
    let err = |steps: usize| {
        let grid = StepGrid::new(steps, 0.98, 0.02).unwrap();
        let traj =
            ddim_trajectory(&noise, &grid, &oracle, &GuidanceSpec::default(), &schedule).unwrap();
        let exact = gaussian_flow(&noise, 0.98, 0.02, &mean, s0, &schedule).unwrap();
        rel_err(traj.final_iterate(), &exact, 1e-12)
    };
    let e1000 = err(1000);
    let e500 = err(500);
    let ratio = e500 / e1000;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        e1000 <= GAUSS_MAX_REL_ERR
            && (GAUSS_ORDER_RANGE.0..=GAUSS_ORDER_RANGE.1).contains(&ratio)
            && secs < GAUSS_MAX_SECS,
        format!("rel err {e1000:.2e} at 1000 steps, {e500:.2e} at 500 (ratio {ratio:.3}), {secs:.2} s"),
    )
}

fn c3_sampler_marginal() -> Verdict {
    let schedule = NoiseSchedule::default();
    let oracle = bimodal();
    let grid = StepGrid::new(100, 0.98, 0.02).unwrap();
    let start = Instant::now();
    let samples: Vec<f64> = (0..MARGINAL_SEEDS)
        .into_par_iter()
        .map(|seed| {
            let noise = Stream::new(seed, StreamId::InitialNoise).normal_vec(1);
            ddim_trajectory(&noise, &grid, &oracle, &GuidanceSpec::default(), &schedule)
                .unwrap()
                .sample()[0]
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let pos: Vec<f64> = samples.iter().copied().filter(|x| *x > 0.0).collect();
    let neg: Vec<f64> = samples.iter().copied().filter(|x| *x <= 0.0).collect();
    let frac = pos.len() as f64 / samples.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mp, mn) = (mean(&pos), mean(&neg));
    verdict(
        (frac - 0.5).abs() <= MARGINAL_PROPORTION_TOL
            && (mp - 2.0).abs() <= MARGINAL_MEAN_TOL
            && (mn + 2.0).abs() <= MARGINAL_MEAN_TOL
            && secs < MARGINAL_MAX_SECS,
        format!("positive-mode fraction {frac:.4}, mode means {mp:.4} / {mn:.4}, {secs:.2} s"),
    )
}

fn c4_diversity_1d() -> Verdict {
    let schedule = NoiseSchedule::default();
    let oracle = bimodal();
    let run = |cfg: DistillConfig| -> Vec<Vec<f64>> {
        (0..DIVERSITY_SEEDS)
            .into_par_iter()
            .map(|seed| {
                let noise = NoiseSource::for_method(cfg.method, 1, seed);
                run_distill_2d(&[0.0], &cfg, &noise, &oracle, &schedule, seed)
                    .unwrap()
                    .theta
            })
            .collect()
    };
    let fsd = ensemble_diversity(&run(DistillConfig::fsd(DIVERSITY_ITERATIONS)), &oracle).unwrap();
    let sds = ensemble_diversity(&run(DistillConfig::sds(DIVERSITY_ITERATIONS)), &oracle).unwrap();
    let min_frac = fsd.mode_fractions().into_iter().fold(1.0, f64::min);
    let ratio = sds.dispersion / fsd.dispersion;
    verdict(
        min_frac >= DIVERSITY_MIN_MODE_FRACTION && ratio <= DIVERSITY_MAX_RATIO,
        format!(
            "FSD modes {:?} (dispersion {:.3}), SDS dispersion {:.3}, ratio {ratio:.3}",
            fsd.mode_histogram, fsd.dispersion, sds.dispersion
        ),
    )
}

fn c5_diversity_3d() -> Verdict {
    let fsd_cfg = RunConfig::new(ExperimentKind::Distill3d);
    let mut sds_cfg = RunConfig::new(ExperimentKind::Distill3d);
    sds_cfg.distill = Some(DistillConfig::sds(SCENE_ITERATIONS));
    let oracle = fsd_cfg.oracle_spec().build().unwrap();
    let start = Instant::now();
    let endpoints = |cfg: &RunConfig| -> Vec<Vec<f64>> {
        let d = cfg.distill_config();
        assert_eq!(d.plan.iterations, SCENE_ITERATIONS);
        let view = reference_views(cfg)[0];
        (0..SCENE_SEEDS)
            .into_par_iter()
            .map(|seed| {
                let scene0 = cfg.scene_init().build(seed).unwrap();
                let noise = view_noise_for(cfg.noise_field_spec(), &cfg.render, seed).unwrap();
                let out = run_distill_3d(
                    &scene0,
                    &d,
                    &noise,
                    &cfg.cameras,
                    &cfg.render,
                    &oracle,
                    &cfg.schedule,
                    seed,
                )
                .unwrap();
                render(&out.scene, &view, &cfg.render).unwrap().image
            })
            .collect()
    };
    let fsd = endpoints(&fsd_cfg);
    let sds = endpoints(&sds_cfg);
    let secs = start.elapsed().as_secs_f64();

    let mut classes = vec![0usize; 2];
    for e in &fsd {
        classes[oracle.nearest_component(e)] += 1;
    }
    let min_frac = *classes.iter().min().unwrap() as f64 / SCENE_SEEDS as f64;
    let modes = oracle.components();
    let delta = SCENE_DELTA_FRACTION * dist(&modes[0].mean, &modes[1].mean);
    let spread = |v: &[Vec<f64>]| -> f64 {
        let n = v.len() as f64;
        let center: Vec<f64> =
            (0..v[0].len()).map(|i| v.iter().map(|e| e[i]).sum::<f64>() / n).collect();
        v.iter().map(|e| dist(e, &center)).fold(0.0, f64::max)
    };
    let (sds_spread, fsd_spread) = (spread(&sds), spread(&fsd));
    verdict(
        min_frac >= SCENE_MIN_CLASS_FRACTION && sds_spread <= delta && secs < SCENE_MAX_SECS,
        format!(
            "FSD red/blue {classes:?}; max distance to seed-mean render: SDS {sds_spread:.3}, \
             FSD {fsd_spread:.3}, delta {delta:.3}; {secs:.1} s"
        ),
    )
}

fn c6_noise_stats() -> Verdict {
    let cfg = RunConfig::new(ExperimentKind::NoiseStats);
    let field = WorldMapNoise::new(3, 8, 8, std::f64::consts::FRAC_PI_2, 1.0, 0).unwrap();
    let mask = QueryMask::disc(8, 8, 2.8);
    let mut details = Vec::new();
    let mut ok = true;
    for beta in [0.0, 0.5, 1.0] {
        let m = marginal_stats_probe(
            &field.with_blend(beta).unwrap(),
            &CameraSampler::default(),
            &mask,
            NOISE_VIEWS,
            FieldDraw::PerView,
            7,
        )
        .unwrap();
        ok &= marginals_within_bounds(&m);
        details.push(format!(
            "beta {beta}: |m| <= {:.3}, var [{:.3}, {:.3}]",
            m.max_abs_mean, m.min_variance, m.max_variance
        ));
    }
    let sweep = correlation_sweep(&field, &cfg, NOISE_SWEEP_POINTS, 0).unwrap();
    let monotone = sweep.windows(2).all(|p| p[1].correlation <= p[0].correlation);
    verdict(
        ok && monotone && sweep.len() == NOISE_SWEEP_POINTS,
        format!("{}; rho(dphi) monotone: {monotone}", details.join("; ")),
    )
}

fn c7_rplus() -> Verdict {
    let mut cfg = RunConfig::new(ExperimentKind::RplusCheck);
    cfg.probe = Some(ProbeSpec {
        theta_extents_deg: vec![60.0, 90.0, 180.0],
        ..ProbeSpec::default()
    });
    let rows = rplus_rows(&cfg).unwrap();
    let worst = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    verdict(
        worst <= RPLUS_MAX_REL_ERR && rows.len() == 6,
        format!("worst gap {worst:.2e} over extents pi/3, pi/2, pi (both axes)"),
    )
}

fn c8_vjp() -> Verdict {
    let opts = RenderOptions::default();
    let sampler = CameraSampler::default();
    let mut worst = 0.0f64;
    for k in 0..VJP_CHECKS {
        let mut rng = Stream::child(2024, StreamId::Probe, k);
        let scene = VoxelScene::jittered(4, -0.5, 0.0, 1.0, [0.2, 0.5, 0.8], k).unwrap();
        let cam = sampler.sample(&mut rng);
        let r = rng.normal_vec(opts.image_len());
        let v = rng.normal_vec(scene.param_len());
        let g = render_vjp(&scene, &cam, &opts, &r).unwrap();
        let image = |sign: f64| {
            let mut s = scene.clone();
            s.apply_increment(&v.iter().map(|x| sign * VJP_STEP * x).collect::<Vec<_>>());
            render(&s, &cam, &opts).unwrap().image
        };
        let (ip, im) = (image(1.0), image(-1.0));
        let fd: f64 = (0..r.len()).map(|i| r[i] * (ip[i] - im[i])).sum::<f64>() / (2.0 * VJP_STEP);
        let an = dot(&g, &v);
        worst = worst.max((fd - an).abs() / an.abs().max(1e-12));
    }
    verdict(
        worst <= VJP_MAX_REL_ERR,
        format!("worst rel err {worst:.2e} over {VJP_CHECKS} checks on 4^3 grids"),
    )
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn c9_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut configs = Vec::new();
    for kind in ExperimentKind::ALL {
        let mut c = RunConfig::new(kind);
        c.seeds = vec![3, 5];
        match kind {
            ExperimentKind::Distill2d => c.distill = Some(DistillConfig::sds(200)),
            ExperimentKind::Distill3d => {
                c.distill = Some(DistillConfig::fsd(40));
                c.scene = Some(flowdistill::config::SceneInit {
                    resolution: 6,
                    ..Default::default()
                });
            }
            ExperimentKind::NoiseStats => {
                c.probe = Some(ProbeSpec {
                    n_views: 500,
                    betas: vec![0.5],
                    ..ProbeSpec::default()
                })
            }
            _ => {}
        }
        configs.push(c);
    }
    let exe = env!("CARGO_BIN_EXE_flowdistill");
    let mut mismatched = Vec::new();
    let mut file_count = 0;
    for c in &configs {
        let cfg_path = tmp.path().join(format!("{}.json", c.experiment));
        fs::write(&cfg_path, c.to_json().unwrap()).unwrap();
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = tmp.path().join(format!("{}_{run}", c.experiment));
            let status = Command::new(exe)
                .arg(c.experiment.name())
                .arg("--config")
                .arg(&cfg_path)
                .arg("--out")
                .arg(&out)
                .output()
                .unwrap()
                .status;
            // Probe sizes below the verification scale may fail the checks
            // (exit 1); that is fine here, outputs still have to match.
            assert!(status.code() == Some(0) || status.code() == Some(1));
            outputs.push(dir_bytes(&out));
        }
        file_count += outputs[0].len();
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            mismatched.push(c.experiment.name());
        }
    }
    verdict(
        mismatched.is_empty(),
        format!("{file_count} files across 6 experiments; mismatched: {mismatched:?}"),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [Check; 9] = [
        (1, "prop1-equivalence", c1_prop1),
        (2, "gaussian-pf-ode", c2_gaussian_flow),
        (3, "sampler-marginal", c3_sampler_marginal),
        (4, "diversity-1d", c4_diversity_1d),
        (5, "diversity-3d", c5_diversity_3d),
        (6, "noise-field-stats", c6_noise_stats),
        (7, "rplus-geometry", c7_rplus),
        (8, "renderer-adjoint", c8_vjp),
        (9, "determinism", c9_determinism),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let v = check();
        let tag = if v.passed { "PASS" } else { "FAIL" };
        println!("criterion {id} [{name}] {tag}: {}", v.detail);
        if !v.passed {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
