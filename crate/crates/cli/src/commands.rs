//! Subcommand definitions and their implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowsur::aggregator::AGGREGATOR_EPOCHS;
use flowsur::bundle::{LatentSets, ModelBundle};
use flowsur::dataset::{
    build_dataset, generate_case_matrix, read_dataset, simulate_cases, write_dataset, Dataset,
    NormalizationSpec, Split,
};
use flowsur::evaluation::{
    evaluate_case, export_embedding, export_report, field_ppm, latent_separability,
    nearest_centroid_accuracy, tsne_embed, EvalReport, FieldKind, TsneConfig,
};
use flowsur::optim::TrainConfig;
use flowsur::solver::{Configuration, RoomGeometry, SolverSettings};

use crate::config::{pick, FileConfig};
use crate::error::CliError;
use crate::server::{self, AppState};

pub const DATASET_FILE: &str = "dataset.flowds";
pub const CAER_EPOCHS: usize = 20000;
pub const CAER_TARGET: f64 = 1e-4;
pub const MLP_EPOCHS: usize = 10000;
pub const MLP_TARGET: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "flowsur",
    version,
    about = "Component-based surrogate models for indoor airflow"
)]
pub struct Cli {
    /// TOML file with defaults for port, model, data, out, static, seed, threads.
    #[arg(long, global = true, env = "FLOWSUR_CONFIG")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a case matrix and write case files plus a dataset file.
    Simulate(SimulateArgs),
    /// Train the autoencoder, predictor and aggregator.
    Train(TrainArgs),
    /// Predict one dual-inlet case.
    Predict(PredictArgs),
    /// Evaluate predictions against the solver fields of a split.
    Eval(EvalArgs),
    /// Embed training latents with t-SNE.
    Embed(EmbedArgs),
    /// Run the HTTP prediction service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Matrix {
    /// The 35 training cases.
    Table1,
    /// The 6 dual-inlet test cases.
    Test,
    /// Both.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Caer,
    Mlp,
    Aggregator,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub matrix: Matrix,
    /// Output directory for case files and the dataset file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Grid as NXxNY.
    #[arg(long, default_value = "150x100")]
    pub grid: String,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Scaled residual tolerance of the solver.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 20000)]
    pub max_iterations: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file, or a directory containing one.
    #[arg(long, env = "FLOWSUR_DATA")]
    pub data: Option<PathBuf>,
    /// Model file to write (and to read for single later stages).
    #[arg(long, env = "FLOWSUR_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub stage: Stage,
    /// Epoch budget of the selected stage(s); defaults 20000 / 10000 / 6000.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate (default 1e-4).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Multiply the learning rate by --decay-factor every this many epochs.
    #[arg(long)]
    pub decay_every: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub decay_factor: f64,
    #[arg(long, env = "FLOWSUR_SEED")]
    pub seed: Option<u64>,
    /// Extra aggregator epochs on predictor latents after the aggregator stage.
    #[arg(long, default_value_t = 0)]
    pub finetune_epochs: usize,
    /// Log the loss every this many epochs.
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub left: f64,
    #[arg(long)]
    pub right: f64,
    #[arg(long, env = "FLOWSUR_MODEL")]
    pub model: Option<PathBuf>,
    /// Directory for a CSV of the fields and two images.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = "FLOWSUR_DATA")]
    pub data: Option<PathBuf>,
    #[arg(long, env = "FLOWSUR_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long, env = "FLOWSUR_DATA")]
    pub data: Option<PathBuf>,
    #[arg(long, env = "FLOWSUR_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "FLOWSUR_SEED")]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 5.0)]
    pub perplexity: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "FLOWSUR_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long, env = "FLOWSUR_PORT")]
    pub port: Option<u16>,
    /// Directory of UI files served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(a, &file),
        Command::Train(a) => train(a, &file),
        Command::Predict(a) => predict(a, &file),
        Command::Eval(a) => eval(a, &file),
        Command::Embed(a) => embed(a, &file),
        Command::Serve(a) => serve(a, &file),
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("grid `{s}` is not of the form NXxNY"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let nx = a.trim().parse().map_err(|_| bad())?;
    let ny = b.trim().parse().map_err(|_| bad())?;
    Ok((nx, ny))
}

fn simulate(a: SimulateArgs, file: &FileConfig) -> Result<(), CliError> {
    let out = pick(a.out, file.out.clone(), PathBuf::from("data"));
    let (nx, ny) = parse_grid(&a.grid)?;
    let threads = pick(a.threads, file.threads, 1);
    let m = generate_case_matrix();
    let cases: Vec<_> = m
        .all()
        .filter(|(_, s)| match a.matrix {
            Matrix::Table1 => *s == Split::Train,
            Matrix::Test => *s == Split::Test,
            Matrix::All => true,
        })
        .collect();
    let settings = SolverSettings {
        tolerance: a.tolerance,
        max_iterations: a.max_iterations,
        ..SolverSettings::default()
    };
    let start = Instant::now();
    let solved = simulate_cases(
        &cases,
        &RoomGeometry::with_grid(nx, ny),
        &settings,
        Some(&out),
        threads,
    )?;
    let unconverged = solved.iter().filter(|(c, _)| !c.converged).count();
    if unconverged > 0 {
        return Err(CliError::Usage(format!(
            "{unconverged} case(s) did not converge; raise --max-iterations"
        )));
    }
    let dataset = if a.matrix == Matrix::Test {
        // test fields alone cannot set the bounds; borrow them from training files
        let train: Vec<_> = m.train.iter().map(|s| (*s, Split::Train)).collect();
        let existing: Vec<_> = train
            .iter()
            .filter(|(s, sp)| out.join(flowsur::dataset::case_file_name(s, *sp)).exists())
            .copied()
            .collect();
        let mut all = simulate_cases(
            &existing,
            &RoomGeometry::with_grid(nx, ny),
            &settings,
            Some(&out),
            threads,
        )?;
        all.extend(solved);
        build_dataset(&all, &NormalizationSpec::default())?
    } else {
        build_dataset(&solved, &NormalizationSpec::default())?
    };
    let path = out.join(DATASET_FILE);
    write_dataset(&path, &dataset)?;
    println!(
        "{} cases solved in {:.1} s; dataset {} ({} records, velocity scale {} m/s, temperature [{}, {}] °C)",
        cases.len(),
        start.elapsed().as_secs_f64(),
        path.display(),
        dataset.records.len(),
        dataset.norm.velocity_scale,
        dataset.norm.temperature_min,
        dataset.norm.temperature_max
    );
    Ok(())
}

fn load_dataset(path: PathBuf) -> Result<Dataset, CliError> {
    let file = if path.is_dir() {
        path.join(DATASET_FILE)
    } else {
        path
    };
    if !file.exists() {
        return Err(CliError::DatasetNotFound(file));
    }
    Ok(read_dataset(&file)?)
}

fn load_model(path: &Path) -> Result<(ModelBundle, u32), CliError> {
    if !path.exists() {
        return Err(CliError::ModelNotFound(path.to_path_buf()));
    }
    Ok(ModelBundle::load(path)?)
}

fn train(a: TrainArgs, file: &FileConfig) -> Result<(), CliError> {
    let data = load_dataset(pick(a.data, file.data.clone(), PathBuf::from("data")))?;
    let model_path = pick(a.model, file.model.clone(), PathBuf::from("model.cbml"));
    let seed = pick(a.seed, file.seed, 0);
    let mut bundle = match a.stage {
        Stage::Caer | Stage::All => ModelBundle::untrained(data.ny, data.nx, data.norm, seed)?,
        Stage::Mlp | Stage::Aggregator => load_model(&model_path)?.0,
    };
    let config = |default_epochs: usize, target: Option<f64>| {
        let mut c = TrainConfig::new(a.epochs.unwrap_or(default_epochs), target, seed);
        if let Some(lr) = a.lr {
            c = c.with_learning_rate(lr);
        }
        if let Some(every) = a.decay_every {
            c = c.with_decay(every, a.decay_factor);
        }
        c.log_every = a.log_every;
        c
    };
    let report = |stage: &str, r: &flowsur::optim::TrainReport, start: Instant| {
        println!(
            "{stage}: {} epochs, final loss {:.3e}{}, {:.1} s",
            r.history.len(),
            r.final_loss().unwrap_or(f64::NAN),
            if r.reached_target {
                " (target reached)"
            } else {
                ""
            },
            start.elapsed().as_secs_f64()
        );
    };
    if matches!(a.stage, Stage::Caer | Stage::All) {
        let t = Instant::now();
        let r = bundle.train_caer(&data, &config(CAER_EPOCHS, Some(CAER_TARGET)))?;
        report("caer", &r, t);
        bundle.save(&model_path)?;
    }
    if matches!(a.stage, Stage::Mlp | Stage::All) {
        let t = Instant::now();
        let r = bundle.train_mlp(&data, &config(MLP_EPOCHS, Some(MLP_TARGET)))?;
        report("mlp", &r, t);
        bundle.save(&model_path)?;
    }
    if matches!(a.stage, Stage::Aggregator | Stage::All) {
        let t = Instant::now();
        let r = bundle.train_aggregator(&data, &config(AGGREGATOR_EPOCHS, None))?;
        report("aggregator", &r, t);
        if a.finetune_epochs > 0 {
            let t = Instant::now();
            let mut c = config(a.finetune_epochs, None);
            c.epochs = a.finetune_epochs;
            let r = bundle.finetune_aggregator(&data, &c)?;
            report("aggregator fine-tune", &r, t);
        }
    }
    let crc = bundle.save(&model_path)?;
    println!("model {} (crc32 {crc:08x})", model_path.display());
    Ok(())
}

fn predict(a: PredictArgs, file: &FileConfig) -> Result<(), CliError> {
    let model_path = pick(a.model, file.model.clone(), PathBuf::from("model.cbml"));
    let (bundle, _) = load_model(&model_path)?;
    let p = bundle.predict_dual(a.left, a.right)?;
    let summary = |v: &[f32]| {
        let lo = v.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        (lo, hi, mean)
    };
    let (vl, vh, vm) = summary(&p.velocity);
    let (tl, th, tm) = summary(&p.temperature);
    println!(
        "left {} m/s, right {} m/s, grid {}x{}",
        a.left, a.right, p.nx, p.ny
    );
    println!("velocity    min {vl:.4} max {vh:.4} mean {vm:.4} m/s");
    println!("temperature min {tl:.3} max {th:.3} mean {tm:.3} °C");
    println!("model latency {:.2} ms", p.elapsed.as_secs_f64() * 1e3);
    if let Some(dir) = a.out.or(file.out.clone()) {
        std::fs::create_dir_all(&dir)?;
        let mut csv = String::from("i,j,velocity,temperature\n");
        for j in 0..p.ny {
            for i in 0..p.nx {
                let k = j * p.nx + i;
                let _ = writeln!(csv, "{i},{j},{},{}", p.velocity[k], p.temperature[k]);
            }
        }
        std::fs::write(dir.join("prediction.csv"), csv)?;
        let v: Vec<f64> = p.velocity.iter().map(|&x| x as f64).collect();
        let t: Vec<f64> = p.temperature.iter().map(|&x| x as f64).collect();
        std::fs::write(
            dir.join("velocity.ppm"),
            field_ppm(&v, p.ny, p.nx, vl as f64, vh as f64)?,
        )?;
        std::fs::write(
            dir.join("temperature.ppm"),
            field_ppm(&t, p.ny, p.nx, tl as f64, th as f64)?,
        )?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn eval(a: EvalArgs, file: &FileConfig) -> Result<(), CliError> {
    let data = load_dataset(pick(a.data, file.data.clone(), PathBuf::from("data")))?;
    let (bundle, _) = load_model(&pick(
        a.model,
        file.model.clone(),
        PathBuf::from("model.cbml"),
    ))?;
    let out = pick(a.out, file.out.clone(), PathBuf::from("eval"));
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let mut cases = Vec::new();
    for r in data.split(split) {
        let (l, rv) = (r.spec.left_inlet_velocity, r.spec.right_inlet_velocity);
        if r.spec.configuration != Configuration::Dual {
            continue;
        }
        let pred = bundle.predict_dual(l, rv)?;
        let id = format!("{}_L{l:.2}_R{rv:.2}", split.as_str());
        cases.push(evaluate_case(&id, &pred, r, &data.norm)?);
    }
    if cases.is_empty() {
        return Err(CliError::Usage(format!(
            "no dual-inlet {} cases in the dataset",
            split.as_str()
        )));
    }
    let report = EvalReport {
        ny: data.ny,
        nx: data.nx,
        norm: data.norm,
        cases,
    };
    println!(
        "{:<16} {:>10} {:>10} {:>8} {:>10} {:>10} {:>8}",
        "case", "v p95", "v med", "v R²", "T p95", "T med", "T R²"
    );
    for c in &report.cases {
        println!(
            "{:<16} {:>10.4} {:>10.4} {:>8.4} {:>10.3} {:>10.3} {:>8.4}",
            c.id,
            c.velocity.stats.p95,
            c.velocity.stats.median,
            c.velocity.r2,
            c.temperature.stats.p95,
            c.temperature.stats.median,
            c.temperature.r2
        );
    }
    for kind in [FieldKind::Velocity, FieldKind::Temperature] {
        let (s, r2, band) = report.aggregate(kind)?;
        println!(
            "all {:<11} median {:.4} p95 {:.4} max {:.4} {} R² {:.4} within ±20% {:.3}",
            kind.as_str(),
            s.median,
            s.p95,
            s.max,
            kind.units(),
            r2,
            band.fraction
        );
    }
    let files = export_report(&report, &out)?;
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn embed(a: EmbedArgs, file: &FileConfig) -> Result<(), CliError> {
    let data = load_dataset(pick(a.data, file.data.clone(), PathBuf::from("data")))?;
    let (bundle, _) = load_model(&pick(
        a.model,
        file.model.clone(),
        PathBuf::from("model.cbml"),
    ))?;
    let out = pick(a.out, file.out.clone(), PathBuf::from("embed"));
    let sets = LatentSets::encode(&bundle.caer, data.split(Split::Train))?;
    let latents: Vec<Vec<f64>> = sets
        .labelled
        .iter()
        .map(|(z, _)| z.as_slice().iter().map(|&v| v as f64).collect())
        .collect();
    let labels: Vec<usize> = sets.labelled.iter().map(|(_, c)| label_of(*c)).collect();
    let config = TsneConfig {
        perplexity: a.perplexity,
        seed: pick(a.seed, file.seed, 0),
        ..TsneConfig::default()
    };
    let e = tsne_embed(&latents, &labels, &config)?;
    let points: Vec<Vec<f64>> = e.points.iter().map(|p| p.to_vec()).collect();
    println!("latents: {} (jittered {})", latents.len(), e.jittered);
    println!(
        "leave-one-out 1-NN accuracy (raw latents): {:.3}",
        latent_separability(&latents, &labels)?
    );
    println!(
        "nearest-centroid accuracy (raw latents):   {:.3}",
        nearest_centroid_accuracy(&latents, &labels)?
    );
    println!(
        "nearest-centroid accuracy (embedding):     {:.3}",
        nearest_centroid_accuracy(&points, &labels)?
    );
    let files = export_embedding(&e, &LABEL_NAMES, &out)?;
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

pub const LABEL_NAMES: [&str; 3] = ["left", "right", "dual"];

pub fn label_of(c: Configuration) -> usize {
    match c {
        Configuration::LeftOnly => 0,
        Configuration::RightOnly => 1,
        Configuration::Dual => 2,
    }
}

fn serve(a: ServeArgs, file: &FileConfig) -> Result<(), CliError> {
    let (bundle, checksum) = load_model(&pick(
        a.model,
        file.model.clone(),
        PathBuf::from("model.cbml"),
    ))?;
    let port = pick(a.port, file.port, 8080);
    let static_dir = a.static_dir.or(file.static_dir.clone());
    let state = Arc::new(AppState { bundle, checksum });
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(server::serve(state, port, static_dir))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("150x100").unwrap(), (150, 100));
        assert_eq!(parse_grid("75X50").unwrap(), (75, 50));
        assert!(parse_grid("150").is_err());
        assert!(parse_grid("ax2").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
