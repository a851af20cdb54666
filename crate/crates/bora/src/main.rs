//! Command-line interface for the block-diversified adapter library.
//!
//! Exit codes: 0 success, 2 usage error, 3 numeric/training failure,
//! 4 I/O or format error.

use bora::adapter::{
    count_flops_per_token, count_params, materialize, AdapterConfig, AdapterParams, Checkpoint,
    SigmaTransform, Variant,
};
use bora::analysis::{compare_spectra, spectrum, SPECTRUM_CSV_HEADER};
use bora::config::{KvConfig, RunConfig, SweepConfig, TaskKind};
use bora::error::Error;
use bora::grad::finite_difference_check;
use bora::rng::{kaiming_uniform, uniform_stream, Seed};
use bora::tasks::{
    budget_sweep, run_approximation, run_regression, sweep_row_csv, ApproxTask, RegressionTask,
    TrainReport, SWEEP_CSV_HEADER,
};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Environment variable capping parallel sweep rows.
const MAX_PARALLEL_ENV: &str = "BORA_MAX_PARALLEL";

#[derive(Parser)]
#[command(name = "bora", version, about = "Block-diversified low-rank adapter toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print trainable-parameter and FLOP accounting for one geometry.
    Count(CountArgs),
    /// Train an adapter on a desk-scale task and write report files.
    Train(TrainArgs),
    /// Report the singular-value spectrum of a checkpointed adapter update.
    Analyze(AnalyzeArgs),
    /// Run a grid of configurations and emit one CSV row per (config, seed).
    Sweep(SweepArgs),
    /// Run the finite-difference gradient oracle suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    r: usize,
    #[arg(long, default_value_t = 1)]
    b: usize,
    #[arg(long, value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, value_parser = parse_transform, default_value = "norm-exp")]
    sigma_transform: SigmaTransform,
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of adapted layers to aggregate over.
    #[arg(long, default_value_t = 1)]
    adapters: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration file (flat key = value with [section] headers).
    #[arg(long)]
    config: PathBuf,
    /// Overrides of the form section.key=value; repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Checkpoint file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Threshold applied to the raw singular values.
    #[arg(long, default_value_t = 0.005)]
    threshold: f64,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "set")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of seeded configurations per transform mode.
    #[arg(long, default_value_t = 20)]
    cases: usize,
    /// Central-difference step size.
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_transform(s: &str) -> Result<SigmaTransform, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Argument(_) | Error::Shape(_) => 2,
        Error::Numeric(_) | Error::Training { .. } => 3,
        Error::Format(_) | Error::Io(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Count(args) => cmd_count(args),
        Command::Train(args) => cmd_train(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn cmd_count(args: CountArgs) -> Result<(), Error> {
    let alpha = args.alpha.unwrap_or(args.r as f64);
    let config = AdapterConfig::new(
        args.m,
        args.n,
        args.r,
        args.b,
        args.variant,
        args.sigma_transform,
        alpha,
    )?;
    let params = count_params(&config);
    let flops_adapter = count_flops_per_token(&config, false);
    let flops_total = count_flops_per_token(&config, true);
    println!("variant             {}", config.variant.as_str());
    println!("geometry            m={} n={} r={} b={}", config.m, config.n, config.r, config.b);
    println!("params_per_adapter  {params}");
    println!("params_total        {}  ({} adapters)", params * args.adapters, args.adapters);
    println!("flops_per_token     {flops_adapter}  (adapter only)");
    println!("flops_per_token     {flops_total}  (with base layer)");
    Ok(())
}

fn load_config(path: &PathBuf, overrides: &[String]) -> Result<KvConfig, Error> {
    let mut kv = KvConfig::load(path)?;
    kv.apply_overrides(overrides)?;
    Ok(kv)
}

fn write_train_csv(path: &PathBuf, report: &TrainReport) -> Result<(), Error> {
    let mut out = String::from("step,loss,wall_ms\n");
    for (step, loss) in report.losses.iter().enumerate() {
        out.push_str(&format!("{step},{loss},{}\n", report.wall_ms));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let kv = load_config(&args.config, &args.overrides)?;
    let run = RunConfig::from_kv(&kv)?;
    let (report, params) = match run.task {
        TaskKind::Approx => {
            let task = ApproxTask::random(
                run.adapter.m,
                run.adapter.n,
                run.target_rank,
                Seed::new(run.task_seed),
            )?;
            run_approximation(&run.adapter, &task, &run.opts, Seed::new(run.train_seed))?
        }
        TaskKind::Regression => {
            let task = RegressionTask::random(
                run.adapter.m,
                run.adapter.n,
                run.target_rank,
                run.samples,
                Seed::new(run.task_seed),
                run.noise,
            )?;
            run_regression(&run.adapter, &task, &run.opts, Seed::new(run.train_seed))?
        }
    };
    if let Some(path) = &run.csv_path {
        write_train_csv(path, &report)?;
    }
    if let Some(path) = &run.json_path {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Format(format!("report serialization failed: {e}")))?;
        std::fs::write(path, json)?;
    }
    if let Some(path) = &run.checkpoint_path {
        Checkpoint::new(run.adapter, params, report.steps).save(path)?;
    }
    println!(
        "trained {} steps  final_error {:.6e}  params {}  flops/token {}",
        report.steps, report.final_error, report.param_count, report.flops_per_token
    );
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Error> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let delta = materialize(&ckpt.params, &ckpt.config)?;
    // Analyze the (alpha/r)-scaled update the layer actually applies.
    let scale = ckpt.config.scale();
    let mut scaled = delta;
    for v in scaled.data_mut() {
        *v *= scale;
    }
    let label = format!(
        "{}-r{}-b{}-alpha{}",
        ckpt.config.variant.as_str(),
        ckpt.config.r,
        ckpt.config.b,
        ckpt.config.alpha
    );
    let report = spectrum(&scaled, args.threshold, &label)?.with_config(
        ckpt.config.variant.as_str(),
        ckpt.config.r,
        ckpt.config.b,
    );
    let rows = compare_spectra(std::slice::from_ref(&report))?;
    let mut text = String::from(SPECTRUM_CSV_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Error> {
    let kv = load_config(&args.config, &args.overrides)?;
    let sweep = SweepConfig::from_kv(&kv)?;
    let run = || {
        budget_sweep(
            &sweep.grid,
            sweep.target_rank,
            Seed::new(sweep.task_seed),
            &sweep.train_seeds,
            &sweep.opts,
        )
    };
    let rows = match std::env::var(MAX_PARALLEL_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(threads) if threads >= 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Argument(format!("{MAX_PARALLEL_ENV}: {e}")))?
            .install(run)?,
        _ => run()?,
    };
    let mut text = String::from(SWEEP_CSV_HEADER);
    text.push('\n');
    for row in &rows {
        if let Err(msg) = &row.outcome {
            eprintln!(
                "warning: row ({} r={} b={} seed={}) failed: {msg}",
                row.config.variant.as_str(),
                row.config.r,
                row.config.b,
                row.seed
            );
        }
        text.push_str(&sweep_row_csv(row));
        text.push('\n');
    }
    match &sweep.csv_path {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), Error> {
    let mut worst_overall = 0.0f64;

    // Closed-form plain-adapter case first.
    let lora =
        AdapterConfig::with_unit_scale(8, 8, 2, 1, Variant::Lora, SigmaTransform::Raw)?;
    let mut p = AdapterParams::init(&lora, Seed::new(1))?;
    p.b = kaiming_uniform(Seed::new(2), 8, 2, 2)?;
    let x = uniform_stream(Seed::new(3), 8, -1.0, 1.0)?;
    let u = uniform_stream(Seed::new(4), 8, -1.0, 1.0)?;
    let err = finite_difference_check(&p, &lora, &x, &u, args.step)?;
    println!("lora closed-form        max_rel_err {err:.3e}");
    worst_overall = worst_overall.max(err);
    if err >= 1e-8 {
        return Err(Error::Numeric(format!(
            "plain-adapter gradcheck exceeded 1e-8: {err:.3e}"
        )));
    }

    for transform in SigmaTransform::ALL {
        let mut worst = 0.0f64;
        for case in 0..args.cases as u64 {
            let cfg = AdapterConfig::with_unit_scale(8, 8, 2, 2, Variant::Bora, transform)?;
            let mut p = AdapterParams::init(&cfg, Seed::new(1000 + case))?;
            p.b = kaiming_uniform(Seed::new(2000 + case), 8, 2, 2)?;
            let x = uniform_stream(Seed::new(3000 + case), 8, -1.0, 1.0)?;
            let u = uniform_stream(Seed::new(4000 + case), 8, -1.0, 1.0)?;
            worst = worst.max(finite_difference_check(&p, &cfg, &x, &u, args.step)?);
        }
        println!(
            "bora {:<18} max_rel_err {worst:.3e}  ({} cases)",
            transform.as_str(),
            args.cases
        );
        worst_overall = worst_overall.max(worst);
        if worst >= 1e-6 {
            return Err(Error::Numeric(format!(
                "gradcheck for {} exceeded 1e-6: {worst:.3e}",
                transform.as_str()
            )));
        }
    }
    println!("overall                 max_rel_err {worst_overall:.3e}");
    Ok(())
}
