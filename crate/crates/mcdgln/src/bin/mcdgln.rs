//! Command-line entry point binding the pipeline into reproducible runs.
//!
//! Exit codes: 0 success, 2 config/spec error, 3 data error, 4 numerical
//! error, 5 checkpoint error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use mcdgln::analysis::{abnormal_edges, overlap_stats, significant_edges, EdgeTestResult, OverlapReport};
use mcdgln::connectivity::{ConnMatrix, WindowConfig};
use mcdgln::dataio::{generate_synthetic, load_dataset, load_run_config, RunConfig, SynthSpec};
use mcdgln::error::Error;
use mcdgln::gradcore::{grad_check_params, primitive_suite, ParamSet};
use mcdgln::model::{
    init_params, precompute_all, toy_instance, tsfc_values, ModelConfig, SubjectData,
};
use mcdgln::trainer::{
    cross_validate, evaluate, metrics, stratified_folds, train_fold, MetricsReport,
    DECISION_THRESHOLD,
};

#[derive(Parser)]
#[command(name = "mcdgln", version, about = "Masked connection-based dynamic graph learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic connectome dataset from a spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Stratified k-fold cross-validation; writes a metrics report.
    Cv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Fold-level parallelism; 1 is the bitwise-reproducible mode.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Save each fold's trained parameters here as fold_NN.ckpt.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Single-split training; saves a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Stratified holdout fraction used for validation (0 trains on all).
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
        /// Optional JSON report with losses and validation metrics.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Per-edge two-sample t-tests on sFC and tsFC, with overlap statistics.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        /// Grouping variable; only `label` is supported.
        #[arg(long, default_value = "label")]
        groups: String,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
        /// Parameters for the tsFC front end; fresh seeded init when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the finite-difference suite and print the max relative error.
    Gradcheck {
        #[arg(long, default_value = "toy")]
        size: String,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("MCDGLN_SEED").ok().and_then(|s| s.parse().ok())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, json).map_err(|e| Error::Data(e.into()))?;
    Ok(())
}

fn load_inputs(
    data: &Path,
    config: Option<&Path>,
) -> Result<(RunConfig, ModelConfig, Vec<SubjectData>), Error> {
    let cfg = load_run_config(config, env_seed())?;
    let loaded = load_dataset(data)?;
    let model_cfg = ModelConfig::resolve(&cfg, loaded.manifest.m, loaded.manifest.t)?;
    let window = WindowConfig::new(cfg.window_len, cfg.stride)?;
    let subjects = precompute_all(&loaded.subjects, window)?;
    Ok((cfg, model_cfg, subjects))
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth { spec, out, seed } => {
            let mut spec = SynthSpec::load(&spec)?;
            if let Some(seed) = seed.or_else(env_seed) {
                spec.seed = seed;
            }
            let manifest = generate_synthetic(&spec, &out)?;
            write_json(&out.join("spec.resolved.json"), &spec)?;
            let cases = manifest.labels().iter().filter(|y| **y == 1).count();
            println!(
                "wrote {} subjects (M={}, T={}, {} case / {} control) to {}",
                manifest.n_subjects(),
                manifest.m,
                manifest.t,
                cases,
                manifest.n_subjects() - cases,
                out.display()
            );
            Ok(())
        }
        Command::Cv {
            data,
            config,
            out,
            jobs,
            checkpoint_dir,
        } => {
            let (cfg, model_cfg, subjects) = load_inputs(&data, config.as_deref())?;
            let report =
                cross_validate(&subjects, &model_cfg, &cfg, jobs, checkpoint_dir.as_deref())?;
            write_json(&out, &report)?;
            print_report(&report);
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Train {
            data,
            config,
            out,
            holdout,
            report,
        } => {
            let (cfg, model_cfg, subjects) = load_inputs(&data, config.as_deref())?;
            println!(
                "config: {}",
                serde_json::to_string(&cfg).expect("config serializes")
            );
            let (train_set, val_set) = holdout_split(&subjects, holdout, cfg.seed)?;
            let (params, loss_history) = train_fold(&train_set, &model_cfg, &cfg, cfg.seed)?;
            params.save(&out)?;
            println!(
                "trained on {} subjects for {} epochs; final loss {:.6}",
                train_set.len(),
                cfg.epochs,
                loss_history.last().copied().unwrap_or(f64::NAN)
            );
            let val_metrics = if val_set.is_empty() {
                None
            } else {
                let (scores, labels) = evaluate(&params, &model_cfg, &val_set)?;
                let m = metrics(&scores, &labels, DECISION_THRESHOLD);
                println!(
                    "holdout ({} subjects): acc {:.3} pre {:.3} f1 {:.3} auroc {:.3}",
                    val_set.len(),
                    m.accuracy,
                    m.precision,
                    m.f1,
                    m.auroc
                );
                Some(m)
            };
            println!("checkpoint written to {}", out.display());
            if let Some(report_path) = report {
                #[derive(Serialize)]
                struct TrainReport {
                    config: RunConfig,
                    holdout: f64,
                    loss_history: Vec<f64>,
                    validation: Option<mcdgln::trainer::Metrics>,
                }
                write_json(
                    &report_path,
                    &TrainReport {
                        config: cfg,
                        holdout,
                        loss_history,
                        validation: val_metrics,
                    },
                )?;
            }
            Ok(())
        }
        Command::Eval {
            data,
            checkpoint,
            config,
        } => {
            let (cfg, model_cfg, subjects) = load_inputs(&data, config.as_deref())?;
            let params = load_checkpoint_for(&checkpoint, &model_cfg, cfg.seed)?;
            let (scores, labels) = evaluate(&params, &model_cfg, &subjects)?;
            let m = metrics(&scores, &labels, DECISION_THRESHOLD);
            println!(
                "{} subjects: acc {:.3} pre {:.3} f1 {:.3} auroc {:.3}",
                subjects.len(),
                m.accuracy,
                m.precision,
                m.f1,
                m.auroc
            );
            Ok(())
        }
        Command::Analyze {
            data,
            groups,
            alpha,
            out,
            checkpoint,
            config,
        } => {
            if groups != "label" {
                return Err(Error::Config(mcdgln::dataio::ConfigError::Constraint {
                    key: "groups".into(),
                    constraint: "only `label` grouping is supported".into(),
                }));
            }
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Config(mcdgln::dataio::ConfigError::Constraint {
                    key: "alpha".into(),
                    constraint: "must lie in [0, 1]".into(),
                }));
            }
            let (cfg, model_cfg, subjects) = load_inputs(&data, config.as_deref())?;
            let params = match checkpoint {
                Some(path) => load_checkpoint_for(&path, &model_cfg, cfg.seed)?,
                None => init_params(&model_cfg, cfg.seed)?,
            };
            let report = analyze(&cfg, &model_cfg, &params, &subjects, alpha)?;
            write_json(&out, &report)?;
            println!(
                "sFC significant edges: {}, tsFC significant edges: {}, overlap: {}",
                report.sfc_significant.len(),
                report.tsfc_significant.len(),
                report.overlap.overlap
            );
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Gradcheck { size } => {
            if size != "toy" {
                return Err(Error::Config(mcdgln::dataio::ConfigError::Constraint {
                    key: "size".into(),
                    constraint: "only `toy` is supported".into(),
                }));
            }
            let primitive_err = primitive_suite(2024, 3, 1e-6)?;
            let (toy_cfg, toy_subjects) = toy_instance();
            let params = init_params(&toy_cfg, 31)?;
            let model_err: f64 = grad_check_params(
                |tape, p| {
                    mcdgln::model::batch_loss(tape, p, &toy_cfg, &toy_subjects).map(|(v, _)| v)
                },
                &params,
                1e-6,
            )?;
            let worst = primitive_err.max(model_err);
            println!("primitive suite max relative error: {primitive_err:.3e}");
            println!("composed loss max relative error:   {model_err:.3e}");
            println!("max relative error: {worst:.3e}");
            if worst < 1e-4 {
                Ok(())
            } else {
                Err(Error::GradCheckFailed { worst })
            }
        }
    }
}

fn print_report(report: &MetricsReport) {
    println!(
        "{}-fold cross-validation over {} folds (seed {}):",
        report.config.folds,
        report.folds.len(),
        report.config.seed
    );
    println!(
        "  accuracy  {:.3} ± {:.3}",
        report.mean.accuracy, report.std.accuracy
    );
    println!(
        "  precision {:.3} ± {:.3}",
        report.mean.precision, report.std.precision
    );
    println!("  f1        {:.3} ± {:.3}", report.mean.f1, report.std.f1);
    println!(
        "  auroc     {:.3} ± {:.3}",
        report.mean.auroc, report.std.auroc
    );
}

/// Loads a checkpoint and validates it against the expected parameter schema
/// for this dataset/config; any mismatch is a checkpoint error (exit 5).
fn load_checkpoint_for(
    path: &Path,
    model_cfg: &ModelConfig,
    seed: u64,
) -> Result<ParamSet, Error> {
    let loaded = ParamSet::load(path)?;
    let expected = init_params(model_cfg, seed)?;
    if !expected.same_schema(&loaded) {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint {} does not match the model built for this dataset/config \
             (expected {} parameters over M={})",
            path.display(),
            expected.len(),
            model_cfg.m
        )));
    }
    Ok(loaded)
}

fn holdout_split(
    subjects: &[SubjectData],
    holdout: f64,
    seed: u64,
) -> Result<(Vec<SubjectData>, Vec<SubjectData>), Error> {
    if !(0.0..1.0).contains(&holdout) {
        return Err(Error::Config(mcdgln::dataio::ConfigError::Constraint {
            key: "holdout".into(),
            constraint: "must lie in [0, 1)".into(),
        }));
    }
    if holdout == 0.0 {
        return Ok((subjects.to_vec(), Vec::new()));
    }
    let k = (1.0 / holdout).round().max(2.0) as usize;
    if subjects.len() < k {
        return Err(Error::FoldCountExceedsSubjects {
            folds: k,
            subjects: subjects.len(),
        });
    }
    let labels: Vec<u8> = subjects.iter().map(|s| s.label).collect();
    let folds = stratified_folds(&labels, k, seed);
    let val_idx = &folds[0];
    let train: Vec<SubjectData> = (0..subjects.len())
        .filter(|i| !val_idx.contains(i))
        .map(|i| subjects[i].clone())
        .collect();
    let val: Vec<SubjectData> = val_idx.iter().map(|i| subjects[*i].clone()).collect();
    Ok((train, val))
}

#[derive(Serialize)]
struct AnalysisReport {
    config: RunConfig,
    alpha: f64,
    sfc_tests: Vec<EdgeTestResult>,
    tsfc_tests: Vec<EdgeTestResult>,
    sfc_significant: Vec<(usize, usize)>,
    tsfc_significant: Vec<(usize, usize)>,
    overlap: OverlapReport,
}

fn analyze(
    cfg: &RunConfig,
    model_cfg: &ModelConfig,
    params: &ParamSet,
    subjects: &[SubjectData],
    alpha: f64,
) -> Result<AnalysisReport, Error> {
    let mut sfc_groups: [Vec<ConnMatrix>; 2] = [Vec::new(), Vec::new()];
    let mut tsfc_groups: [Vec<ConnMatrix>; 2] = [Vec::new(), Vec::new()];
    for subject in subjects {
        let sfc = ConnMatrix::fused(subject.sfc.clone())?;
        sfc_groups[subject.label as usize].push(sfc);
        let tsfc = ConnMatrix::fused(tsfc_values(params, model_cfg, subject)?)?;
        tsfc_groups[subject.label as usize].push(tsfc);
    }
    if sfc_groups[0].is_empty() || sfc_groups[1].is_empty() {
        return Err(Error::Analysis(
            "analysis needs both label groups present".into(),
        ));
    }
    let sfc_tests = abnormal_edges(&sfc_groups[0], &sfc_groups[1], alpha)?;
    let tsfc_tests = abnormal_edges(&tsfc_groups[0], &tsfc_groups[1], alpha)?;
    let sfc_significant = significant_edges(&sfc_tests);
    let tsfc_significant = significant_edges(&tsfc_tests);
    let overlap = overlap_stats(&sfc_significant, &tsfc_significant);
    Ok(AnalysisReport {
        config: cfg.clone(),
        alpha,
        sfc_tests,
        tsfc_tests,
        sfc_significant,
        tsfc_significant,
        overlap,
    })
}
