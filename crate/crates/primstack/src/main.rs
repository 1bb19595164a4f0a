//! Command-line front end: data collection, training, simulation, the full
//! dominance study, and report rendering.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use primstack::bounce::{
    default_primitive_trio, run_trial, ControlLaw, LaunchConfig, StrategyConfig, TrialParams,
    PRIMITIVE_NAMES,
};
use primstack::harness::{
    collect_primitive_data, mean_std, report, run_dominance_study, CollectRanges,
    ExperimentConfig, ReportFormat, StudyResult,
};
use primstack::policy::{CostModel, Dataset};
use primstack::prioritized::{train_prioritized, DominanceOrder, PrioritizedController};
use primstack::robot::KinematicArm;
use primstack::{Error, Result};

#[derive(Parser)]
#[command(name = "primstack", about = "Prioritized control from motor-primitive demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect single-primitive training data under the analytic oracle.
    Collect {
        /// Primitive name: move, hit, or orient.
        #[arg(long)]
        primitive: String,
        /// Seconds of data at 1 kHz.
        #[arg(long)]
        duration: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a prioritized controller for one dominance order.
    Train {
        /// Order, highest priority first, e.g. "hit,move,orient".
        #[arg(long)]
        order: String,
        /// Directory holding move.csv, hit.csv, orient.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        lambda: f64,
    },
    /// Run seeded bounce trials with a trained controller.
    Simulate {
        #[arg(long)]
        controller: PathBuf,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the full dominance study.
    Study {
        /// Experiment config JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for study.json and rendered reports.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a previously run study.
    Report {
        /// Directory containing study.json.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "table")]
        format: String,
    },
}

fn primitive_index(name: &str) -> Result<usize> {
    PRIMITIVE_NAMES
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| Error::invalid(format!("unknown primitive '{name}', expected move|hit|orient")))
}

fn load_datasets(dir: &Path) -> Result<Vec<Dataset>> {
    let dims = [2usize, 1, 1];
    let mut datasets = Vec::new();
    for (name, dim) in PRIMITIVE_NAMES.iter().zip(dims) {
        let path = dir.join(format!("{name}.csv"));
        let file = fs::File::open(&path)
            .map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
        datasets.push(Dataset::read_csv(file, dim, 4)?);
    }
    Ok(datasets)
}

fn run(cmd: Command) -> Result<()> {
    let arm = KinematicArm::reference();
    match cmd {
        Command::Collect { primitive, duration, seed, out } => {
            let idx = primitive_index(&primitive)?;
            let cost = CostModel::with_defaults(arm.rest_posture.clone());
            let data = collect_primitive_data(
                &arm,
                &cost,
                idx,
                &CollectRanges::default(),
                duration,
                seed,
            )?;
            let file = fs::File::create(&out)?;
            data.write_csv(file)?;
            let sidecar = out.with_extension("json");
            fs::write(&sidecar, serde_json::to_string_pretty(&data.sidecar())?)?;
            println!(
                "wrote {} rows to {} (sidecar {})",
                data.len(),
                out.display(),
                sidecar.display()
            );
        }
        Command::Train { order, data, out, lambda } => {
            let datasets = load_datasets(&data)?;
            let order = DominanceOrder::parse(&order, &PRIMITIVE_NAMES)?;
            let mut cost = CostModel::with_defaults(arm.rest_posture.clone());
            let costs: Vec<f64> = datasets
                .iter()
                .flat_map(|d| {
                    (0..d.len())
                        .map(|t| cost.offset_cost(&d.u_row(t), &d.q_row(t), &d.q_dot_row(t)))
                        .collect::<Vec<_>>()
                })
                .collect();
            cost.set_alpha_from_costs(&costs);
            let ctrl = train_prioritized(&datasets, &order, &cost, lambda)?;
            fs::write(&out, ctrl.to_json()?)?;
            println!("trained {} -> {}", ctrl.order.label(&PRIMITIVE_NAMES), out.display());
        }
        Command::Simulate { controller, trials, seed } => {
            let text = fs::read_to_string(&controller)?;
            let ctrl = PrioritizedController::from_json(&text)?;
            let cfg = StrategyConfig::for_arm(&arm);
            let launch = LaunchConfig::default();
            let params = TrialParams::default();
            let prims = default_primitive_trio(&arm)?;
            let mut hits = Vec::new();
            for t in 0..trials {
                let r = run_trial(
                    &arm,
                    &ctrl.cost,
                    &ControlLaw::Prioritized(&ctrl),
                    &prims,
                    &cfg,
                    &launch,
                    &params,
                    seed + t as u64,
                )?;
                println!("trial {t}: {} hits ({:?})", r.hits, r.outcome);
                hits.push(r.hits);
            }
            let (m, s) = mean_std(&hits);
            println!("mean hits: {m:.2}±{s:.2}");
        }
        Command::Study { config, out } => {
            let cfg = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| {
                        Error::invalid(format!("cannot read {}: {e}", path.display()))
                    })?;
                    ExperimentConfig::from_json(&text)?
                }
                None => ExperimentConfig::default(),
            };
            let study = run_dominance_study(&cfg)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("study.json"), study.to_json()?)?;
            fs::write(out.join("report.csv"), report(&study, ReportFormat::Csv))?;
            fs::write(out.join("report.txt"), report(&study, ReportFormat::Table))?;
            print!("{}", report(&study, ReportFormat::Table));
            println!("best ordering: {}", study.best_label);
        }
        Command::Report { input, format } => {
            let fmt: ReportFormat = format.parse()?;
            let path = input.join("study.json");
            let text = fs::read_to_string(&path)
                .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
            let study = StudyResult::from_json(&text)?;
            print!("{}", report(&study, fmt));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::InvalidArgument(_) | Error::Json(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
