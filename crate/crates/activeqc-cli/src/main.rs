//! Command-line front end: dataset generation, experiment runs, map export
//! and summary reprinting.
//!
//! Exit codes: 0 success, 2 config error, 3 I/O failure, 4 strategy abort,
//! 5 missing artifact.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use activeqc::acquisition::Strategy;
use activeqc::data::{build_dataset, save_dataset};
use activeqc::harness::io::{
    read_acquisition_log, read_summary, read_trial_meta, reconstruct_step_log, trial_dir,
    write_results, Summary,
};
use activeqc::harness::maps::{
    export_maps, write_locations_pgm, write_map_csv, write_map_pgm, MapInputs,
};
use activeqc::harness::{run_experiment, ExperimentConfig, HarnessError, Task};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_ABORT: u8 = 4;
const EXIT_MISSING: u8 = 5;

#[derive(Parser)]
#[command(
    name = "activeqc",
    about = "Quality-gated active learning on a synthetic band-excitation benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one benchmark dataset and persist its artifacts.
    Generate {
        /// Experiment config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the dataset artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Override the field side length G.
        #[arg(long)]
        grid: Option<usize>,
        /// Override the generator seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the active-learning experiment and write metrics, summary and
    /// acquisition logs.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the base seed (wins over ACTIVEQC_SEED).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// Comma-separated subset of random,active,activemt,activeqc.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
        /// im2spec or spec2im.
        #[arg(long)]
        task: Option<String>,
        /// Worker thread cap for trial parallelism.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Export map grids (CSV + PGM) for one step of one trial.
    Maps {
        /// Results directory of a previous run.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        strategy: String,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// 1-based step index.
        #[arg(long)]
        step: usize,
        /// Target directory; defaults to maps/ inside the results directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reprint the summary tables of a results directory.
    Analyze {
        #[arg(long)]
        results: PathBuf,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn parse_strategy(name: &str) -> Option<Strategy> {
    Strategy::all().into_iter().find(|s| s.name() == name)
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, (u8, String)> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| (EXIT_IO, format!("reading {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| (EXIT_CONFIG, format!("{}: {e}", p.display())))
        }
    }
}

fn env_seed() -> Result<Option<u64>, (u8, String)> {
    match std::env::var("ACTIVEQC_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|e| (EXIT_CONFIG, format!("ACTIVEQC_SEED: {e}"))),
        Err(_) => Ok(None),
    }
}

/// Wall-clock metadata stays out of the scientific outputs.
fn write_run_info(dir: &Path) -> std::io::Result<()> {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let info = serde_json::json!({
        "unix_time": now,
        "host": std::env::var("HOSTNAME").unwrap_or_else(|_| "unknown".into()),
        "argv": std::env::args().collect::<Vec<_>>(),
    });
    std::fs::write(dir.join("run_info.json"), info.to_string())
}

fn exit_for(err: &HarnessError) -> u8 {
    match err {
        HarnessError::BadConfig(_) => EXIT_CONFIG,
        HarnessError::Io(_) => EXIT_IO,
        _ => EXIT_ABORT,
    }
}

fn cmd_generate(
    config: Option<PathBuf>,
    out: PathBuf,
    grid: Option<usize>,
    seed: Option<u64>,
) -> ExitCode {
    let mut cfg = match load_config(config.as_deref()) {
        Ok(c) => c,
        Err((code, msg)) => return fail(code, msg),
    };
    if let Some(g) = grid {
        cfg.dataset.grid_size = g;
    }
    match (seed, env_seed()) {
        (Some(s), _) => cfg.dataset.seed = s,
        (None, Ok(Some(s))) => cfg.dataset.seed = s,
        (None, Ok(None)) => {}
        (None, Err((code, msg))) => return fail(code, msg),
    }
    if let Err(e) = cfg.validate() {
        return fail(EXIT_CONFIG, e);
    }
    let ds = match build_dataset(&cfg.dataset) {
        Ok(ds) => ds,
        Err(e) => return fail(EXIT_ABORT, e),
    };
    if let Err(e) = save_dataset(&ds, &out).and_then(|()| Ok(write_run_info(&out)?)) {
        return fail(EXIT_IO, e);
    }
    println!(
        "dataset: {} samples ({} per side), corrupted fraction {:.4}",
        ds.n_samples(),
        ds.centers_per_side(),
        ds.corrupted_fraction()
    );
    ExitCode::SUCCESS
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    config: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
    trials: Option<usize>,
    steps: Option<usize>,
    strategies: Option<Vec<String>>,
    task: Option<String>,
    jobs: Option<usize>,
) -> ExitCode {
    let mut cfg = match load_config(config.as_deref()) {
        Ok(c) => c,
        Err((code, msg)) => return fail(code, msg),
    };
    match (seed, env_seed()) {
        (Some(s), _) => cfg.base_seed = s,
        (None, Ok(Some(s))) => cfg.base_seed = s,
        (None, Ok(None)) => {}
        (None, Err((code, msg))) => return fail(code, msg),
    }
    if let Some(t) = trials {
        cfg.n_trials = t;
    }
    if let Some(s) = steps {
        cfg.n_steps = s;
    }
    if let Some(names) = strategies {
        let mut parsed = Vec::new();
        for name in &names {
            match parse_strategy(name) {
                Some(s) => parsed.push(s),
                None => return fail(EXIT_CONFIG, format!("unknown strategy '{name}'")),
            }
        }
        cfg.strategies = parsed;
    }
    if let Some(name) = task {
        cfg.task = match name.as_str() {
            "im2spec" => Task::Im2Spec,
            "spec2im" => Task::Spec2Im,
            other => return fail(EXIT_CONFIG, format!("unknown task '{other}'")),
        };
    }
    if let Err(e) = cfg.validate() {
        return fail(EXIT_CONFIG, e);
    }

    let run = || match run_experiment(&cfg) {
        Ok(result) => {
            if let Err(e) = write_results(&result, &out).and_then(|()| Ok(write_run_info(&out)?)) {
                return fail(EXIT_IO, e);
            }
            print_summary(&Summary {
                aggregates: result.aggregates.clone(),
                welch: result.welch.clone(),
            });
            println!("results written to {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(exit_for(&e), e),
    };

    match jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => fail(EXIT_CONFIG, e),
        },
        None => run(),
    }
}

fn cmd_maps(
    results: PathBuf,
    strategy: String,
    trial: usize,
    step: usize,
    out: Option<PathBuf>,
) -> ExitCode {
    let Some(strategy) = parse_strategy(&strategy) else {
        return fail(EXIT_CONFIG, format!("unknown strategy '{strategy}'"));
    };
    let tdir = trial_dir(&results, strategy, trial);
    let meta = match read_trial_meta(&tdir) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_MISSING, format!("trial artifacts not found: {e}")),
    };
    let log = match read_acquisition_log(&tdir) {
        Ok(l) => l,
        Err(e) => return fail(EXIT_MISSING, format!("acquisition log not found: {e}")),
    };
    let Some(step_log) = reconstruct_step_log(&meta, &log, step) else {
        return fail(EXIT_MISSING, format!("step {step} not present in the logs"));
    };
    let Some(batch_ids) = meta.steps.iter().find(|s| s.step == step).map(|s| &s.batch_ids) else {
        return fail(EXIT_MISSING, format!("step {step} not present in the meta"));
    };
    let inputs = MapInputs {
        n: meta.centers_per_side,
        records: &step_log.records,
        retained_ids: &step_log.retained_ids,
        batch_ids,
        corrupted_ids: &meta.corrupted_ids,
        gp_state: step_log.gp_state.as_deref(),
    };
    let grids = match export_maps(&inputs) {
        Ok(g) => g,
        Err(e) => return fail(EXIT_ABORT, e),
    };

    let dir = out.unwrap_or_else(|| {
        results
            .join("maps")
            .join(strategy.name())
            .join(format!("trial_{trial}"))
            .join(format!("step_{step}"))
    });
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return fail(EXIT_IO, e);
    }

    let n = grids.n;
    fn write_grid(
        dir: &Path,
        n: usize,
        name: &str,
        values: &[f64],
        emitted: &mut Vec<String>,
    ) -> Result<(), HarnessError> {
        write_map_csv(&dir.join(format!("{name}.csv")), n, values)?;
        write_map_pgm(&dir.join(format!("{name}.pgm")), n, values)?;
        emitted.push(name.to_string());
        Ok(())
    }
    let mut emitted = Vec::new();
    let result = (|| -> Result<(), HarnessError> {
        if grids.has_components {
            write_grid(&dir, n, "e_hat", &grids.e_hat, &mut emitted)?;
            write_grid(&dir, n, "d", &grids.d, &mut emitted)?;
            write_grid(&dir, n, "r", &grids.r, &mut emitted)?;
        }
        if grids.has_quality {
            write_grid(&dir, n, "q_hat", &grids.q_hat, &mut emitted)?;
        }
        write_grid(&dir, n, "a", &grids.a, &mut emitted)?;
        write_map_csv(
            &dir.join("locations.csv"),
            n,
            &grids.locations.iter().map(|&c| c as f64).collect::<Vec<_>>(),
        )?;
        write_locations_pgm(&dir.join("locations.pgm"), n, &grids.locations)?;
        emitted.push("locations".to_string());
        Ok(())
    })();
    if let Err(e) = result {
        return fail(EXIT_IO, e);
    }
    println!(
        "wrote {} map grids ({}) to {}",
        emitted.len(),
        emitted.join(", "),
        dir.display()
    );
    ExitCode::SUCCESS
}

fn cmd_analyze(results: PathBuf) -> ExitCode {
    match read_summary(&results) {
        Ok(summary) => {
            print_summary(&summary);
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_MISSING, format!("summary not found: {e}")),
    }
}

fn print_summary(summary: &Summary) {
    println!("per-step clean-target test MSE (mean +/- SEM over trials):");
    for agg in &summary.aggregates {
        let last: Vec<String> = agg
            .per_step
            .iter()
            .rev()
            .take(3)
            .rev()
            .map(|s| {
                format!(
                    "step {}: {:.6} +/- {:.6}",
                    s.step, s.mse_clean_mean, s.mse_clean_sem
                )
            })
            .collect();
        println!("  {:<9} {}", agg.strategy.name(), last.join("  |  "));
    }
    if !summary.welch.is_empty() {
        println!("welch comparisons:");
        for w in &summary.welch {
            println!(
                "  {} step {:>2}  {} vs {:<9} t = {:>8.3}  df = {:>7.2}  p = {:.3e}",
                w.metric,
                w.step,
                w.strategy_a.name(),
                w.strategy_b.name(),
                w.result.t,
                w.result.df,
                w.result.p
            );
        }
    }
    println!("final-step noisy ratio of the training set:");
    for agg in &summary.aggregates {
        if let Some(last) = agg.per_step.last() {
            println!(
                "  {:<9} {:.4} +/- {:.4}  (retained {:.1})",
                agg.strategy.name(),
                last.noisy_ratio_mean,
                last.noisy_ratio_sem,
                last.retained_mean
            );
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Generate {
            config,
            out,
            grid,
            seed,
        } => cmd_generate(config, out, grid, seed),
        Command::Run {
            config,
            out,
            seed,
            trials,
            steps,
            strategies,
            task,
            jobs,
        } => cmd_run(config, out, seed, trials, steps, strategies, task, jobs),
        Command::Maps {
            results,
            strategy,
            trial,
            step,
            out,
        } => cmd_maps(results, strategy, trial, step, out),
        Command::Analyze { results } => cmd_analyze(results),
    }
}
