use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use kspec_core::harness::{self, store, ExperimentConfig, ExperimentResult, Metric, SweepRow};
use kspec_core::{Error, PlantKind};

#[derive(Parser)]
#[command(name = "kspec", version, about = "K-spectral training-data metric for deep SSMs")]
struct Cli {
    /// Worker threads for dataset runs (overrides the config file).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlantArg {
    Wiener,
    Hammerstein,
}

impl From<PlantArg> for PlantKind {
    fn from(p: PlantArg) -> Self {
        match p {
            PlantArg::Wiener => PlantKind::Wiener,
            PlantArg::Hammerstein => PlantKind::Hammerstein,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Kspectral,
    Valloss,
    Size,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Kspectral => Metric::KSpectral,
            MetricArg::Valloss => Metric::ValLoss,
            MetricArg::Size => Metric::Size,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepMode {
    Epoch,
    K,
}

#[derive(Subcommand)]
enum Command {
    /// Write an identification dataset suite as CSV plus JSON metadata.
    Generate {
        #[arg(long, value_enum)]
        plant: PlantArg,
        #[arg(long)]
        num: usize,
        #[arg(long)]
        len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on one dataset and log every epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset index (1-based); defaults to the richest dataset.
        #[arg(long)]
        dataset: Option<usize>,
        #[arg(long, default_value_t = 0)]
        repetition: usize,
    },
    /// Run a full experiment and store per-run records plus a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlate a stored metric with test MSE.
    Correlate {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, value_enum)]
        metric: MetricArg,
        #[arg(long, default_value_t = 1)]
        epoch: usize,
    },
    /// Correlation as a function of the metric epoch or of K.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: SweepMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild the four flat-spectrum demonstration signals and rank them.
    DemoFig2,
}

fn load_config(path: &Path, workers: Option<usize>) -> Result<ExperimentConfig, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if workers.is_some() {
        cfg.workers = workers;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".into(), |x| format!("{x:+.3}"))
}

fn print_summary(res: &ExperimentResult) {
    println!("test  metric     rho mean   rho std   reps");
    for s in &res.stats {
        println!(
            "{:<5} {:<10} {:>8}   {:>7}   {}",
            s.test_input,
            s.metric.to_string(),
            fmt_opt(s.mean),
            s.std.map_or_else(|| "-".into(), |x| format!("{x:.3}")),
            s.count
        );
    }
    println!("diverged runs: {}/{}", res.diverged, res.total);
}

fn write_result(dir: &Path, res: &ExperimentResult) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    store::write_jsonl(&dir.join(store::RECORDS_FILE), &res.records)?;
    store::write_json(&dir.join(store::SUMMARY_FILE), res)?;
    Ok(())
}

fn print_sweep(key: &str, rows: &[SweepRow]) {
    println!("{key:>6}  test  rho mean  |rho| mean");
    for r in rows {
        println!(
            "{:>6}  {:<4}  {:>8}  {:>9}",
            r.key,
            r.test_input,
            fmt_opt(r.mean),
            r.abs_mean.map_or_else(|| "N/A".into(), |x| format!("{x:.3}"))
        );
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate {
            plant,
            num,
            len,
            seed,
            out,
        } => {
            let cfg = ExperimentConfig {
                plant: plant.into(),
                num_datasets: num,
                length: len,
                seed,
                ..ExperimentConfig::default()
            };
            cfg.validate()?;
            fs::create_dir_all(&out)?;
            let suite = harness::generate_ident_suite(&cfg, 0)?;
            for ds in &suite {
                store::write_dataset(&out, ds)?;
            }
            store::write_json(&out.join("config.json"), &cfg)?;
            println!("wrote {} datasets to {}", suite.len(), out.display());
        }
        Command::Train {
            config,
            out,
            dataset,
            repetition,
        } => {
            let cfg = load_config(&config, cli.workers)?;
            let n = dataset.unwrap_or(cfg.num_datasets);
            if n == 0 || n > cfg.num_datasets {
                return Err(Error::Config(format!("dataset {n} is outside 1..={}", cfg.num_datasets)).into());
            }
            if repetition >= cfg.repetitions {
                return Err(Error::Config(format!("repetition {repetition} is outside the config")).into());
            }
            fs::create_dir_all(&out)?;
            let ds = harness::build_dataset(&cfg, repetition, n)?;
            let tests = harness::make_test_inputs(&cfg)?;
            let mut lines = Vec::new();
            let (record, model) = harness::run_dataset(&cfg, &ds, &tests, repetition, &mut |e| {
                log::info!(
                    "epoch {:>3}  train {:.6e}  val {:.6e}  R {:.4}",
                    e.epoch,
                    e.train_loss,
                    e.val_loss,
                    e.r_bar
                );
                lines.push(e.clone());
            })?;
            store::write_jsonl(&out.join("epochs.jsonl"), &lines)?;
            store::write_json(&out.join("record.json"), &record)?;
            if record.is_ok() {
                let ckpt = kspec_core::deep_ssm::Checkpoint::new(&model, cfg.seed, cfg.train.epochs);
                store::write_json(&out.join("checkpoint.json"), &ckpt)?;
            }
            println!("{}", serde_json::to_string(&record)?);
            if let Some(reason) = &record.diverged {
                return Err(Error::TooManyDiverged { failed: 1, total: 1 })
                    .with_context(|| format!("training diverged: {reason}"));
            }
        }
        Command::Run { config, out } => {
            let cfg = load_config(&config, cli.workers)?;
            let res = harness::collect_runs(&cfg)?;
            write_result(&out, &res)?;
            print_summary(&res);
            res.check_divergence()?;
        }
        Command::Correlate { runs, metric, epoch } => {
            let records: Vec<harness::DatasetRecord> = store::read_jsonl(&runs.join(store::RECORDS_FILE))
                .with_context(|| format!("reading records from {}", runs.display()))?;
            let metric: Metric = metric.into();
            let entries = harness::correlate(&records, metric, epoch)?;
            let stem = runs.join(format!("correlate_{metric}_epoch{epoch}"));
            store::write_json(&stem.with_extension("json"), &entries)?;
            let mut csv = String::from("repetition,test_input,metric,epoch,rho,n\n");
            for e in &entries {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    e.repetition,
                    e.test_input,
                    e.metric,
                    e.epoch,
                    e.rho.map_or_else(|| "NA".into(), |r| r.to_string()),
                    e.n
                ));
            }
            fs::write(stem.with_extension("csv"), &csv)?;
            println!("{}", serde_json::to_string_pretty(&entries)?);
        }
        Command::Sweep { config, mode, out } => {
            let cfg = load_config(&config, cli.workers)?;
            if matches!(mode, SweepMode::Epoch) && cfg.train.epochs < 2 {
                return Err(Error::Config("an epoch sweep needs at least two epochs".into()).into());
            }
            let res = harness::collect_runs(&cfg)?;
            write_result(&out, &res)?;
            let (name, rows) = match mode {
                SweepMode::Epoch => ("epoch", harness::epoch_rows(&res)?),
                SweepMode::K => ("k", harness::k_rows(&res)?),
            };
            store::write_json(&out.join(format!("sweep_{name}.json")), &rows)?;
            store::write_sweep_csv(&out.join(format!("sweep_{name}.csv")), name, &rows)?;
            print_sweep(name, &rows);
            res.check_divergence()?;
        }
        Command::DemoFig2 => {
            let report = harness::demo_fig2()?;
            println!("T = {}, K = {}, max = {:.6}", report.t, report.k, ((report.t * report.k) as f64).sqrt());
            for (i, v) in report.values.iter().enumerate() {
                println!("signal {}: R = {v:.12}", i + 1);
            }
            let order: Vec<String> = report.ordering.iter().map(|i| i.to_string()).collect();
            println!("ordering: {}", order.join(" > "));
            for (a, b) in &report.ties {
                println!("tie: signals {a} and {b} agree within tolerance");
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::TooManyDiverged { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
