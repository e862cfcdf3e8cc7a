use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use lupi_core::harness::{
    emit_results, gradient_suite, parse_config, preset, run_experiment, train_method, ExperimentConfig, Method,
    ResultFormat, TrainedModel, PRESET_NAMES,
};
use lupi_core::linear::monte_carlo_risks;
use lupi_core::lupi::TrainMode;
use lupi_core::net::save_checkpoint;
use lupi_core::repro::{recipe, run_recipe};
use lupi_core::rng::Rng;
use lupi_core::synthgen::{GeneratorSpec, LinearPIConfig, TripleDataset};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "lupi-lab", version, about = "Privileged-information transfer benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV plus a JSON metadata sidecar.
    Gen {
        /// experiment1, experiment3, tram_regression, tram_classification or linear_pi
        generator: String,
        /// Generator parameter, e.g. `--set d=50` or `--set regime=cosine`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        params: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one method on a dataset written by `gen`.
    Train {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        method: String,
        #[arg(long)]
        data: PathBuf,
        /// Held-out data; without it a seeded 30% of `--data` is held out.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_enum, default_value_t = ModeArg::JointStopgrad)]
        train_mode: ModeArg,
        /// Write the per-epoch history here (CSV).
        #[arg(long)]
        history: Option<PathBuf>,
        /// Write the trained network here (JSON checkpoint; MLP methods only).
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Run a sweep described by a JSON or key=value config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Result file; `.json` writes the full bundle, anything else CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the linear-model risk formulas by Monte Carlo.
    VerifyLinear {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
    },
    /// Finite-difference check of every network a preset builds.
    Gradcheck {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 10)]
        batches: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a named reproduction recipe and print its verdict table.
    Repro {
        name: String,
        /// Use the full seed count instead of the reduced one.
        #[arg(long)]
        full: bool,
        /// Directory for the result bundles of the recipe's runs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    JointStopgrad,
    Sequential,
}

/// Outcome of a subcommand that did not error.
enum Outcome {
    Ok,
    Fail(String),
    Skipped(String),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Fail(why)) => {
            eprintln!("FAIL: {why}");
            ExitCode::from(1)
        }
        Ok(Outcome::Skipped(why)) => {
            eprintln!("skipped: {why}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Gen {
            generator,
            params,
            n,
            seed,
            out,
        } => gen(&generator, &params, n, seed, &out),
        Command::Train {
            preset,
            method,
            data,
            test,
            seed,
            epochs,
            train_mode,
            history,
            model_out,
        } => train(TrainArgs {
            preset,
            method,
            data,
            test,
            seed,
            epochs,
            train_mode,
            history,
            model_out,
        }),
        Command::Experiment { config, out } => experiment(&config, out),
        Command::VerifyLinear {
            config,
            trials,
            tolerance,
        } => verify_linear(&config, trials, tolerance),
        Command::Gradcheck { preset, batches, seed } => gradcheck(&preset, batches, seed),
        Command::Repro { name, full, out } => repro(&name, full, out),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn gen(generator: &str, params: &[String], n: usize, seed: u64, out: &Path) -> Result<Outcome> {
    let mut obj = Map::new();
    obj.insert("generator".into(), Value::String(generator.into()));
    for p in params {
        let (k, v) = p
            .split_once('=')
            .with_context(|| format!("parameter `{p}` is not KEY=VALUE"))?;
        obj.insert(k.trim().into(), parse_value(v.trim()));
    }
    let spec: GeneratorSpec =
        serde_json::from_value(Value::Object(obj)).with_context(|| format!("generator `{generator}`"))?;
    let data = spec.generate(n, seed)?;
    data.save_csv(out)?;
    println!(
        "wrote {} rows (d_x={}, d_z={}) to {}",
        data.len(),
        data.d_x(),
        data.d_z(),
        out.display()
    );
    Ok(Outcome::Ok)
}

struct TrainArgs {
    preset: String,
    method: String,
    data: PathBuf,
    test: Option<PathBuf>,
    seed: u64,
    epochs: Option<usize>,
    train_mode: ModeArg,
    history: Option<PathBuf>,
    model_out: Option<PathBuf>,
}

fn holdout(data: &TripleDataset, seed: u64) -> Result<(TripleDataset, TripleDataset)> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    let cut = data.len() * 7 / 10;
    if cut == 0 || cut == data.len() {
        bail!("{} rows are too few for a 70/30 split", data.len());
    }
    Ok((data.select(&order[..cut]), data.select(&order[cut..])))
}

fn train(a: TrainArgs) -> Result<Outcome> {
    let mut p = preset(&a.preset)?;
    if let Some(e) = a.epochs {
        p.train.epochs = e;
    }
    let method = Method::parse(&a.method)?;
    let data = TripleDataset::load_csv(&a.data)?;
    let (train, test) = match &a.test {
        Some(t) => (data, TripleDataset::load_csv(t)?),
        None => holdout(&data, a.seed)?,
    };
    let (train, test) = if p.standardize {
        let s = lupi_core::synthgen::Standardizer::fit(&train);
        (s.apply(&train)?, s.apply(&test)?)
    } else {
        (train, test)
    };
    let mode = match a.train_mode {
        ModeArg::JointStopgrad => TrainMode::JointStopgrad,
        ModeArg::Sequential => TrainMode::Sequential,
    };
    let checkpoints: BTreeSet<usize> = (1..=p.train.epochs).collect();
    let outcome = train_method(&p, method, &train, &test, a.seed, mode, &checkpoints)?;
    if let Some(path) = &a.history {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "metric_kind", "value"])?;
        for r in &outcome.history.records {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                p.metric.name().to_string(),
                r.test_metric.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
    }
    if let Some(path) = &a.model_out {
        match &outcome.model {
            TrainedModel::Mlp(m) => save_checkpoint(m, path)?,
            TrainedModel::Tram(t) => save_checkpoint(&t.extractor, path)
                .and_then(|_| save_checkpoint(&t.nopi_head, &path.with_extension("head.json")))?,
        }
    }
    let last = outcome.history.last().context("training produced no epochs")?;
    let summary = json!({
        "preset": p.name,
        "method": method.name(),
        "train_rows": train.len(),
        "test_rows": test.len(),
        "epochs": last.epoch,
        "train_loss": last.train_loss,
        "metric_kind": p.metric.name(),
        "test_metric": last.test_metric,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(Outcome::Ok)
}

fn experiment(config: &Path, out: Option<PathBuf>) -> Result<Outcome> {
    let cfg = ExperimentConfig::parse(&read(config)?).with_context(|| format!("config {}", config.display()))?;
    let bundle = run_experiment(&cfg)?;
    println!("config sha256 {}", bundle.config_hash);
    println!("{:<12} {:>8} {:>6} {:>10} {:>10} {:>5}", "method", "n", "epoch", "mean", "std", "seeds");
    for c in bundle.summary() {
        println!(
            "{:<12} {:>8} {:>6} {:>10.5} {:>10.5} {:>5}",
            c.method.name(),
            c.sample_size,
            c.epoch,
            c.mean,
            c.std,
            c.count
        );
    }
    for f in &bundle.failures {
        println!("failed: {} n={} seed={}: {}", f.method.name(), f.sample_size, f.seed, f.reason);
    }
    if let Some(path) = out.or(cfg.output.clone()) {
        emit_results(&bundle, &path, ResultFormat::from_path(&path))?;
        println!("wrote {}", path.display());
    }
    Ok(Outcome::Ok)
}

fn verify_linear(config: &Path, trials: usize, tolerance: f64) -> Result<Outcome> {
    let cfg: LinearPIConfig = parse_config(&read(config)?).with_context(|| format!("config {}", config.display()))?;
    let r = monte_carlo_risks(&cfg, trials)?;
    let gap = (r.empirical_pri - r.empirical_reg) / r.combined_se();
    let report = json!({
        "trials": r.trials,
        "failed_trials": r.failed_trials,
        "closed_form_reg": r.closed_form_reg,
        "closed_form_pri": r.closed_form_pri,
        "empirical_reg": r.empirical_reg,
        "empirical_reg_se": r.empirical_reg_se,
        "empirical_pri": r.empirical_pri,
        "empirical_pri_se": r.empirical_pri_se,
        "reg_relative_error": r.reg_relative_error(),
        "pri_relative_error": r.pri_relative_error(),
        "pri_minus_reg_in_se": gap,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    let pass = r.passes(tolerance) && gap >= -2.0;
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass {
        Outcome::Ok
    } else {
        Outcome::Fail(format!(
            "relative errors {:.4} / {:.4} (limit {tolerance}), pri - reg = {gap:.2} se",
            r.reg_relative_error(),
            r.pri_relative_error()
        ))
    })
}

fn gradcheck(name: &str, batches: usize, seed: u64) -> Result<Outcome> {
    if !PRESET_NAMES.contains(&name) {
        bail!("unknown preset `{name}`; available: {}", PRESET_NAMES.join(", "));
    }
    let rows = gradient_suite(&preset(name)?, batches, seed)?;
    let mut worst = 0.0f64;
    println!("{:<16} {:<14} {:>5}  max relative error", "network", "loss", "batch");
    for r in &rows {
        println!(
            "{:<16} {:<14} {:>5}  {:.3e}",
            r.network,
            format!("{:?}", r.loss).to_lowercase(),
            r.batch,
            r.max_relative_error
        );
        worst = worst.max(r.max_relative_error);
    }
    let pass = worst <= GRADCHECK_TOLERANCE;
    println!("worst {worst:.3e}: {}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass {
        Outcome::Ok
    } else {
        Outcome::Fail(format!("worst relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE}"))
    })
}

fn repro(name: &str, full: bool, out: Option<PathBuf>) -> Result<Outcome> {
    let r = recipe(name)?;
    let report = run_recipe(&r, full)?;
    print!("{}", report.render());
    if let Some(dir) = out {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for b in &report.bundles {
            let path = dir.join(format!("{}.json", b.config.name));
            emit_results(b, &path, ResultFormat::Json)?;
        }
        fs::write(dir.join(format!("{name}-report.json")), serde_json::to_string_pretty(&report)?)?;
    }
    if let Some(why) = report.skipped {
        return Ok(Outcome::Skipped(why));
    }
    Ok(if report.passed() {
        Outcome::Ok
    } else {
        let failed: Vec<&str> = report.verdicts.iter().filter(|v| !v.pass).map(|v| v.label.as_str()).collect();
        Outcome::Fail(format!("{name}: {} check(s) failed: {}", failed.len(), failed.join("; ")))
    })
}
