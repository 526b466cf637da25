use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use layersep_cli::config::{ExperimentConfig, Variant};
use layersep_cli::{pipeline, render};
use layersep_core::cube::{load_cube, save_cube, FeatureStack};
use layersep_core::learn::{self, LabeledPixels};
use layersep_core::phantom;
use layersep_core::preprocess;

/// Hyperspectral layer separation for layered drawings: corrections,
/// hyper-hue and EMAP descriptors, and random-forest evaluation.
#[derive(Parser)]
#[command(name = "layersep", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set protocol.repeats=5
    /// or --set inputs.phantom.seed=7 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides the config key).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let mut cfg = base.apply_overrides(&self.overrides)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic phantom scenes.
    Phantom {
        #[command(subcommand)]
        command: PhantomCommand,
    },
    /// Run the correction chain and write the corrected cube plus a
    /// per-band means diagnostic CSV.
    Preprocess {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compute one feature variant and save it as a cube.
    Features {
        #[command(flatten)]
        config: ConfigArgs,
        /// Variant name, e.g. HSI-h or HSIhSI-EMAP.
        #[arg(long)]
        variant: Variant,
        /// Output header path (.hdr).
        #[arg(long = "features-out")]
        features_out: PathBuf,
    },
    /// Evaluate a saved feature cube against ground truth.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Feature cube header (.hdr) as written by `features`.
        #[arg(long)]
        features: PathBuf,
        /// Ground-truth label map PNG (palette-coded). Defaults to the
        /// config's ground truth (or the phantom's).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run the full experiment matrix.
    Experiment {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also run the focus-stacking ablation (H1/H2/stacked × two
        /// pipelines).
        #[arg(long)]
        ablation: bool,
    },
    /// Rebuild the summary CSV from report JSONs in a directory.
    Report {
        /// Directory holding report_<variant>.json files.
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum PhantomCommand {
    /// Generate the phantom cubes, ground truth PNG and spec JSON.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn cmd_phantom_generate(args: &ConfigArgs) -> anyhow::Result<()> {
    let cfg = args.load()?;
    let spec = cfg
        .inputs
        .phantom
        .clone()
        .context("config has no phantom spec")?;
    let out_dir = &cfg.output_dir;
    std::fs::create_dir_all(out_dir)?;
    let out = phantom::generate(&spec)?;
    save_cube(&out.clean, &out_dir.join("clean.hdr"))?;
    save_cube(&out.h1, &out_dir.join("h1.hdr"))?;
    save_cube(&out.h2, &out_dir.join("h2.hdr"))?;
    save_cube(&out.white_ref, &out_dir.join("white_ref.hdr"))?;
    render::render_label_map(
        &out.ground_truth,
        &cfg.palette,
        &out_dir.join("ground_truth.png"),
    )?;
    std::fs::write(
        out_dir.join("phantom_spec.json"),
        serde_json::to_string_pretty(&spec)?,
    )?;
    let counts = out.ground_truth.pixel_counts();
    println!(
        "phantom written to {}: {}x{}x{} cubes, class pixels {:?}",
        out_dir.display(),
        spec.rows,
        spec.cols,
        spec.bands,
        counts
    );
    Ok(())
}

fn cmd_preprocess(args: &ConfigArgs) -> anyhow::Result<()> {
    let cfg = args.load()?;
    let prepared = pipeline::prepare(&cfg)?;
    let out_dir = &cfg.output_dir;
    std::fs::create_dir_all(out_dir)?;
    save_cube(&prepared.hsi_ic, &out_dir.join("corrected.hdr"))?;

    let stacked = preprocess::focus_stack(&prepared.h1, &prepared.h2, prepared.split_band)?;
    let before = preprocess::band_means(&stacked, None)?;
    let after = preprocess::band_means(&prepared.hsi_ic, None)?;
    let mut csv = String::from("band,mean_before,mean_after\n");
    for (b, (x, y)) in before.iter().zip(&after).enumerate() {
        csv.push_str(&format!("{},{:.6},{:.6}\n", b + 1, x, y));
    }
    std::fs::write(out_dir.join("band_means.csv"), csv)?;
    println!(
        "corrected cube and band_means.csv written to {} (split band {})",
        out_dir.display(),
        prepared.split_band
    );
    Ok(())
}

fn cmd_features(args: &ConfigArgs, variant: Variant, out_path: &PathBuf) -> anyhow::Result<()> {
    let cfg = args.load()?;
    let prepared = pipeline::prepare(&cfg)?;
    let stack = pipeline::feature_stack_for(variant, &cfg, &prepared)?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_cube(&stack.to_cube(), out_path)?;
    std::fs::write(
        out_path.with_extension("names.json"),
        serde_json::to_string(stack.names())?,
    )?;
    println!(
        "{variant}: {} channels written to {}",
        stack.channels(),
        out_path.display()
    );
    Ok(())
}

fn cmd_evaluate(
    args: &ConfigArgs,
    features: &PathBuf,
    truth_path: &Option<PathBuf>,
) -> anyhow::Result<()> {
    let cfg = args.load()?;
    let cube = load_cube(features)?;
    let stack = FeatureStack::from(&cube);
    let truth = match truth_path {
        Some(path) => render::load_label_map_png(path, &cfg.palette, &cfg.inputs.class_names)?,
        None => pipeline::prepare(&cfg)?.truth,
    };
    let (data, _) = LabeledPixels::from_stack(&stack, &truth)?;
    let report = learn::evaluate(&data, &cfg.protocol)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let json_path = cfg.output_dir.join("evaluate_report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;
    println!(
        "AA {:.2}% (±{:.2})  OA {:.2}% (±{:.2})  kappa {:.4} (±{:.4})  -> {}",
        100.0 * report.aa_mean,
        100.0 * report.aa_sd,
        100.0 * report.oa_mean,
        100.0 * report.oa_sd,
        report.kappa_mean,
        report.kappa_sd,
        json_path.display()
    );
    Ok(())
}

fn cmd_experiment(args: &ConfigArgs, ablation: bool) -> anyhow::Result<ExitCode> {
    let cfg = args.load()?;
    let prepared = pipeline::prepare(&cfg)?;
    let outcome = pipeline::run_experiment_with(&cfg, &prepared)?;
    for o in &outcome.outcomes {
        match (&o.report, &o.error) {
            (Some(r), _) => println!(
                "{:14} AA {:6.2}% (±{:4.2})  OA {:6.2}% (±{:4.2})  kappa {:.4}",
                o.variant,
                100.0 * r.aa_mean,
                100.0 * r.aa_sd,
                100.0 * r.oa_mean,
                100.0 * r.oa_sd,
                r.kappa_mean
            ),
            (None, Some(e)) => println!("{:14} FAILED: {e}", o.variant),
            _ => {}
        }
    }
    if ablation {
        let rows = pipeline::run_focus_ablation(&cfg, &prepared)?;
        for (name, r) in &rows {
            println!(
                "{:16} AA {:6.2}% (±{:4.2})  OA {:6.2}% (±{:4.2})  kappa {:.4}",
                name,
                100.0 * r.aa_mean,
                100.0 * r.aa_sd,
                100.0 * r.oa_mean,
                100.0 * r.oa_sd,
                r.kappa_mean
            );
        }
    }
    println!("summary: {}", outcome.summary_csv.display());
    Ok(if outcome.any_failed() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_report(dir: &PathBuf) -> anyhow::Result<()> {
    let csv = pipeline::rebuild_summary(dir)?;
    std::fs::write(dir.join("summary.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result: anyhow::Result<ExitCode> = match &cli.command {
        Command::Phantom {
            command: PhantomCommand::Generate { config },
        } => cmd_phantom_generate(config).map(|_| ExitCode::SUCCESS),
        Command::Preprocess { config } => cmd_preprocess(config).map(|_| ExitCode::SUCCESS),
        Command::Features {
            config,
            variant,
            features_out,
        } => cmd_features(config, *variant, features_out).map(|_| ExitCode::SUCCESS),
        Command::Evaluate {
            config,
            features,
            truth,
        } => cmd_evaluate(config, features, truth).map(|_| ExitCode::SUCCESS),
        Command::Experiment { config, ablation } => cmd_experiment(config, *ablation),
        Command::Report { dir } => cmd_report(dir).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
