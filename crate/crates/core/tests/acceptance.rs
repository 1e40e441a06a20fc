//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Everything that fits in a CI budget runs by default and must pass. The
//! criteria that need a fully trained full-resolution model are evaluated
//! against `FLOWSUR_E2E_DIR` (holding `dataset.flowds` and `model.cbml` as
//! written by the CLI) and are reported, not asserted: a model trained on a
//! reduced budget shows up as FAIL rather than breaking the build. The
//! full-resolution capacity run needs `--features expensive_tests`.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use flowsur::bundle::{LatentSets, ModelBundle};
use flowsur::caer::Caer;
use flowsur::dataset::{read_dataset, to_sample, Dataset, NormalizationSpec, Split};
use flowsur::evaluation::{
    evaluate_case, latent_separability, nearest_centroid_accuracy, tsne_embed, TsneConfig,
};
use flowsur::layers::{
    Conv2d, ConvTranspose2d, Linear, MaxPool, Relu, ResidualBlock, Sigmoid, Upsample,
};
use flowsur::optim::TrainConfig;
use flowsur::solver::{
    build_case, energy_balance, mass_imbalance, solve_steady, CaseRecord, CaseSpec, Configuration,
    FlowState, RoomGeometry, SolverSettings,
};
use flowsur::{ops, Tensor};
use rand::Rng;

const KERNEL_CASES: usize = 100;
const KERNEL_TOL: f64 = 1e-12;
const MASS_TOL: f64 = 1e-8;
const ENERGY_TOL: f64 = 0.02;
const MIRROR_TOL: f64 = 1e-3;
const COMPRESSION: f64 = 30000.0 / 1280.0;
const CAPACITY_LOSS: f64 = 1e-5;
const CAPACITY_EPOCHS: usize = 20000;
const CAPACITY_FAST_LIMIT: Duration = Duration::from_secs(300);
const CAPACITY_FULL_LIMIT: Duration = Duration::from_secs(30 * 60);
/// Capacity-check optimizer: lr 1e-3 halved every 2000 epochs.
const CAPACITY_LR: f64 = 1e-3;
const CAPACITY_DECAY: (usize, f64) = (2000, 0.5);
const E2E_VELOCITY_P95: f64 = 0.08;
const E2E_TEMPERATURE_P95: f64 = 0.4;
const E2E_R2: f64 = 0.90;
const E2E_MIN_CASES: usize = 5;
const TRAIN_MEDIAN_VELOCITY: f64 = 0.02;
const TSNE_AGREEMENT: f64 = 0.90;
const LATENCY_LIMIT_MS: f64 = 100.0;
const LATENCY_CALLS: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn kernels() -> Outcome {
    let mut r = rng(2024);
    let mut worst = [0.0f64; 4];
    for case in 0..KERNEL_CASES {
        // every fourth case is wide enough to take the GEMM path
        let (c, o) = if case % 4 == 3 {
            (r.random_range(24..40), r.random_range(24..40))
        } else {
            (r.random_range(1..5), r.random_range(1..5))
        };
        let (h, w) = (r.random_range(1..14), r.random_range(1..14));
        let x = random_tensor(&mut r, &[c, h, w]);
        let k = random_tensor(&mut r, &[o, c, 3, 3]);
        let b = random_tensor(&mut r, &[o]);
        worst[0] = worst[0].max(max_abs_diff(
            &ops::conv2d(&x, &k, &b).unwrap(),
            &conv2d_oracle(&x, &k, &b),
        ));
        let kt = random_tensor(&mut r, &[c, o, 3, 3]);
        worst[1] = worst[1].max(max_abs_diff(
            &ops::conv_transpose2d(&x, &kt, &b).unwrap(),
            &conv_transpose2d_oracle(&x, &kt, &b),
        ));
        worst[2] = worst[2].max(max_abs_diff(
            &ops::maxpool3x3s2(&x).unwrap().0,
            &maxpool_oracle(&x),
        ));
        let (th, tw) = (r.random_range(h..h + 8), r.random_range(w..w + 8));
        worst[3] = worst[3].max(max_abs_diff(
            &ops::bilinear_resize(&x, (th, tw)).unwrap(),
            &bilinear_oracle(&x, th, tw),
        ));
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    outcome(
        max <= KERNEL_TOL,
        format!(
            "{KERNEL_CASES} random cases each; max |Δ| conv {:.1e}, convT {:.1e}, pool {:.1e}, resize {:.1e} (tol {KERNEL_TOL:e})",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn gradients() -> Outcome {
    let mut r = rng(77);
    let mut errs: Vec<(&str, f64)> = Vec::new();
    let x = random_tensor(&mut r, &[3, 5, 6]);
    let mut conv = Conv2d::new("c", 3, 4, &mut r);
    conv.params.bias = random_tensor(&mut r, &[4]);
    errs.push(("conv2d", layer_gradient_error(&mut conv, &x, 1)));
    let mut convt = ConvTranspose2d::new("t", 3, 2, &mut r);
    convt.params.bias = random_tensor(&mut r, &[2]);
    errs.push(("conv_transpose2d", layer_gradient_error(&mut convt, &x, 2)));
    let xl = random_tensor(&mut r, &[3, 7]);
    let mut lin = Linear::new("l", 7, 5, &mut r);
    lin.params.bias = random_tensor(&mut r, &[5]);
    errs.push(("linear", layer_gradient_error(&mut lin, &xl, 3)));
    errs.push(("relu", layer_gradient_error(&mut Relu, &x, 4)));
    errs.push(("sigmoid", layer_gradient_error(&mut Sigmoid, &x, 5)));
    errs.push(("maxpool", layer_gradient_error(&mut MaxPool, &x, 6)));
    errs.push((
        "upsample",
        layer_gradient_error(&mut Upsample { target: (9, 11) }, &x, 7),
    ));
    let mut block = ResidualBlock::new("r", 3, &mut r);
    errs.push(("residual", layer_gradient_error(&mut block, &x, 8)));

    // MSE, and the summed two-branch reconstruction loss through a small CAER
    let a = random_tensor(&mut r, &[2, 3, 4]);
    let b = random_tensor(&mut r, &[2, 3, 4]);
    let numeric = numeric_gradient(a.data(), FD_STEP, |v| {
        ops::mse(&Tensor::new(vec![2, 3, 4], v.to_vec()).unwrap(), &b).unwrap()
    });
    errs.push((
        "mse",
        relative_error(ops::mse_grad(&a, &b).unwrap().data(), &numeric),
    ));
    let (ny, nx) = (8, 10);
    let mut net: Caer<f64> = Caer::new(ny, nx, 3).unwrap();
    let input = Tensor::from_fn(&[2, ny, nx], |_| r.random_range(0.05..0.95));
    let check = network_gradient_check(
        &mut net,
        |n| n.params_mut(),
        |n| n.accumulate_sample(&input).unwrap(),
        |n| n.loss(&input).unwrap(),
        1,
        78,
    );
    // coordinates where a ReLU or pool switch sits inside the probe step are skipped
    let caer_err = if check.skipped * 10 <= check.checked {
        check.worst
    } else {
        f64::INFINITY
    };
    errs.push(("caer summed loss", caer_err));

    let (name, worst) = errs
        .iter()
        .copied()
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    outcome(
        worst < GRAD_TOL,
        format!(
            "{} checks; worst relative error {worst:.2e} ({name}), tol {GRAD_TOL:e}; caer coords {} checked, {} skipped at kinks",
            errs.len(),
            check.checked,
            check.skipped
        ),
    )
}

fn solve(spec: CaseSpec, g: &RoomGeometry) -> FlowState {
    solve_steady(&build_case(&spec, g).unwrap(), &SolverSettings::default()).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn span(v: &[f64]) -> f64 {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

fn solver_physics() -> Outcome {
    let g = RoomGeometry::default();
    let spec = CaseSpec::dual(0.25, 0.7);
    let start = Instant::now();
    let a = solve(spec, &g);
    let b = solve(spec.mirrored(), &g);
    let mut worst_mass: f64 = 0.0;
    let mut worst_energy: f64 = 0.0;
    for s in [&a, &b] {
        worst_mass = worst_mass.max(mass_imbalance(s).0);
        worst_energy = worst_energy.max(energy_balance(s).imbalance);
    }
    let m = b.cells.mirrored();
    let v_rel = max_diff(&a.cells.magnitude, &m.magnitude)
        / a.cells.magnitude.iter().copied().fold(0.0, f64::max);
    let t_rel = max_diff(&a.cells.temperature, &m.temperature) / span(&a.cells.temperature);
    let converged = a.converged() && b.converged();
    outcome(
        converged
            && worst_mass < MASS_TOL
            && worst_energy < ENERGY_TOL
            && v_rel < MIRROR_TOL
            && t_rel < MIRROR_TOL,
        format!(
            "150x100 dual(0.25, 0.7) and mirror: converged {converged}, mass {worst_mass:.1e} (< {MASS_TOL:e}), energy {:.2}% (< {}%), mirror |V| {v_rel:.1e} T {t_rel:.1e} (< {MIRROR_TOL:e}), {:.0} s",
            100.0 * worst_energy,
            100.0 * ENERGY_TOL,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn compression() -> Outcome {
    let net: Caer = Caer::new(100, 150, 0).unwrap();
    let ratio = net.compression_ratio();
    outcome(
        ratio == COMPRESSION && ratio == 23.4375,
        format!(
            "input 2x100x150, latent {:?}: ratio {ratio}",
            net.latent_shape()
        ),
    )
}

fn capacity_run(nx: usize, ny: usize, limit: Duration) -> (bool, String) {
    let spec = CaseSpec::dual(0.5, 0.7);
    let state = solve(spec, &RoomGeometry::with_grid(nx, ny));
    let record = CaseRecord::from_state(spec, &state);
    let norm = NormalizationSpec::default().covering(std::slice::from_ref(&record));
    let (sample, _) = to_sample(&record, &norm, Split::Train).unwrap();
    let mut net: Caer = Caer::new(ny, nx, 7).unwrap();
    let config = TrainConfig::new(CAPACITY_EPOCHS, Some(CAPACITY_LOSS), 7)
        .with_learning_rate(CAPACITY_LR)
        .with_decay(CAPACITY_DECAY.0, CAPACITY_DECAY.1);
    let start = Instant::now();
    let report = net
        .train(std::slice::from_ref(&sample.fields), &config)
        .unwrap();
    let elapsed = start.elapsed();
    let loss = report.final_loss().unwrap_or(f64::NAN);
    (
        report.reached_target && elapsed <= limit,
        format!(
            "{ny}x{nx}: loss {loss:.4e} after {} epochs in {:.0} s (< {CAPACITY_LOSS:e} within {CAPACITY_EPOCHS} epochs and {} s)",
            report.history.len(),
            elapsed.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

fn capacity() -> Outcome {
    let (fast_ok, fast) = capacity_run(75, 50, CAPACITY_FAST_LIMIT);
    if cfg!(feature = "expensive_tests") {
        let (full_ok, full) = capacity_run(150, 100, CAPACITY_FULL_LIMIT);
        outcome(fast_ok && full_ok, format!("{fast}; {full}"))
    } else {
        outcome(
            fast_ok,
            format!("{fast}; full resolution needs --features expensive_tests"),
        )
    }
}

fn latency() -> Outcome {
    let bundle = ModelBundle::untrained(100, 150, NormalizationSpec::default(), 0).unwrap();
    for _ in 0..3 {
        bundle.predict_dual(0.4, 0.6).unwrap();
    }
    let mut times: Vec<f64> = (0..LATENCY_CALLS)
        .map(|i| {
            let l = 0.05 + 0.95 * (i as f64 / LATENCY_CALLS as f64);
            let start = Instant::now();
            bundle.predict_dual(l, 1.05 - l).unwrap();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median = 0.5 * (times[LATENCY_CALLS / 2 - 1] + times[LATENCY_CALLS / 2]);
    outcome(
        median < LATENCY_LIMIT_MS,
        format!(
            "median of {LATENCY_CALLS} predict_dual calls {median:.1} ms (< {LATENCY_LIMIT_MS} ms), single thread"
        ),
    )
}

fn no_secondary() -> Outcome {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let manifest = std::fs::read_to_string(root.join("Cargo.toml")).unwrap_or_default();
    let members: Vec<PathBuf> = std::fs::read_dir(root.join("crates"))
        .map(|d| d.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    let web = manifest.contains("webui")
        || members.iter().any(|p| {
            p.join("package.json").exists()
                || p.file_name()
                    .is_some_and(|n| n.to_string_lossy().contains("web"))
        });
    outcome(
        !web && !members.is_empty(),
        format!(
            "{} Rust crates, no web UI crate or JS build in the workspace; this suite ran without one",
            members.len()
        ),
    )
}

struct Artifacts {
    dataset: Dataset,
    bundle: ModelBundle,
}

fn artifacts() -> Result<Artifacts, String> {
    let dir = std::env::var_os("FLOWSUR_E2E_DIR")
        .map(PathBuf::from)
        .ok_or(
            "not evaluated: set FLOWSUR_E2E_DIR to a directory with dataset.flowds and model.cbml",
        )?;
    let dataset = read_dataset(dir.join("dataset.flowds")).map_err(|e| format!("dataset: {e}"))?;
    let (bundle, _) =
        ModelBundle::load(dir.join("model.cbml")).map_err(|e| format!("model: {e}"))?;
    Ok(Artifacts { dataset, bundle })
}

fn end_to_end(a: &Artifacts) -> Outcome {
    let mut lines = Vec::new();
    let mut good = 0;
    for r in a.dataset.split(Split::Test) {
        let (l, rv) = (r.spec.left_inlet_velocity, r.spec.right_inlet_velocity);
        let pred = a.bundle.predict_dual(l, rv).unwrap();
        let c = evaluate_case("t", &pred, r, &a.dataset.norm).unwrap();
        let ok = c.velocity.stats.p95 <= E2E_VELOCITY_P95
            && c.temperature.stats.p95 <= E2E_TEMPERATURE_P95
            && c.velocity.r2 >= E2E_R2
            && c.temperature.r2 >= E2E_R2;
        good += ok as usize;
        lines.push(format!(
            "({l}, {rv}) v p95 {:.3} R² {:.3}, T p95 {:.2} R² {:.3}",
            c.velocity.stats.p95, c.velocity.r2, c.temperature.stats.p95, c.temperature.r2
        ));
    }
    outcome(
        good >= E2E_MIN_CASES,
        format!(
            "{good}/{} test cases meet all four targets (need {E2E_MIN_CASES}): {}",
            lines.len(),
            lines.join("; ")
        ),
    )
}

fn training_sanity(a: &Artifacts) -> Outcome {
    let mut medians = Vec::new();
    for r in a.dataset.split(Split::Train) {
        if r.spec.configuration != Configuration::Dual {
            continue;
        }
        let (l, rv) = (r.spec.left_inlet_velocity, r.spec.right_inlet_velocity);
        let pred = a.bundle.predict_dual(l, rv).unwrap();
        let c = evaluate_case("t", &pred, r, &a.dataset.norm).unwrap();
        medians.push(c.velocity.stats.median);
    }
    let worst = medians.iter().copied().fold(0.0, f64::max);
    outcome(
        !medians.is_empty() && worst < TRAIN_MEDIAN_VELOCITY,
        format!(
            "worst per-case median velocity error {worst:.4} m/s over {} dual training cases (< {TRAIN_MEDIAN_VELOCITY})",
            medians.len()
        ),
    )
}

fn latent_structure(a: &Artifacts) -> Outcome {
    let sets = LatentSets::encode(&a.bundle.caer, a.dataset.split(Split::Train)).unwrap();
    let latents: Vec<Vec<f64>> = sets
        .labelled
        .iter()
        .map(|(z, _)| z.as_slice().iter().map(|&v| v as f64).collect())
        .collect();
    let labels: Vec<usize> = sets
        .labelled
        .iter()
        .map(|(_, c)| match c {
            Configuration::LeftOnly => 0,
            Configuration::RightOnly => 1,
            Configuration::Dual => 2,
        })
        .collect();
    let loo = latent_separability(&latents, &labels).unwrap();
    let e = tsne_embed(&latents, &labels, &TsneConfig::default()).unwrap();
    let pts: Vec<Vec<f64>> = e.points.iter().map(|p| p.to_vec()).collect();
    let agreement = nearest_centroid_accuracy(&pts, &labels).unwrap();
    outcome(
        latents.len() == 35 && loo == 1.0 && agreement >= TSNE_AGREEMENT,
        format!(
            "{} latents: LOO 1-NN {:.3} (= 1), t-SNE nearest-centroid {agreement:.3} (>= {TSNE_AGREEMENT})",
            latents.len(),
            loo
        ),
    )
}

// Own harness so the report prints on every run, not only on failure.
fn main() {
    let mut gating = Vec::new();
    let mut run = |name: &str, asserted: bool, o: Outcome| {
        report(name, o.pass, &o.detail);
        if asserted {
            gating.push((name.to_string(), o.pass));
        }
    };
    run("kernel oracle suite", true, kernels());
    run("gradient suite", true, gradients());
    run("solver physics", true, solver_physics());
    run("compression ratio", true, compression());
    run("capacity check", true, capacity());
    match artifacts() {
        Ok(a) => {
            run("end-to-end reproduction", false, end_to_end(&a));
            run("training-set sanity", false, training_sanity(&a));
            run("latent structure", false, latent_structure(&a));
        }
        Err(why) => {
            for name in [
                "end-to-end reproduction",
                "training-set sanity",
                "latent structure",
            ] {
                run(name, false, outcome(false, why.clone()));
            }
        }
    }
    run("latency", true, latency());
    run("no secondary component", true, no_secondary());
    let failed: Vec<_> = gating.iter().filter(|g| !g.1).map(|g| &g.0).collect();
    if !failed.is_empty() {
        eprintln!("acceptance failed: {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all gating criteria pass");
}
