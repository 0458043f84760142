//! Mini-batch optimization, stratified k-fold cross-validation, and metrics.
//!
//! Training is deterministic under the run seed: parameter initialization,
//! batch shuffling, and fold assignment all derive from it. Folds are
//! independent, so `--jobs` can train them in parallel without changing any
//! result.

mod adam;
mod metrics;

pub use adam::{adam_step, AdamState};
pub use metrics::{metrics, rank_auroc, Metrics};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::RunConfig;
use crate::error::Error;
use crate::gradcore::{GradError, ParamSet, Tape};
use crate::model::{batch_loss, init_params, predict, ModelConfig, SubjectData};

/// Decision threshold for accuracy/precision/F1.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Held-out evaluation of one fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
    pub auroc: f64,
    pub precision_defined: bool,
    pub auroc_defined: bool,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
    pub auroc: f64,
}

/// Cross-validation report: the resolved configuration, per-fold results, and
/// per-metric mean and sample standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: RunConfig,
    pub folds: Vec<FoldResult>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(1_000_003u64.wrapping_mul(fold as u64 + 1))
}

/// Stratified partition into `k` folds: class index groups are shuffled, then
/// dealt round-robin with a fold pointer that carries across classes, so fold
/// sizes differ by at most one and per-fold class counts stay proportional.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for class in [0u8, 1u8] {
        let mut indices: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, y)| **y == class)
            .map(|(i, _)| i)
            .collect();
        indices.shuffle(&mut rng);
        for idx in indices {
            folds[cursor % k].push(idx);
            cursor += 1;
        }
    }
    folds
}

/// Trains on one subject set: seeded mini-batch shuffling, forward/backward
/// through the full pipeline, one Adam step per batch. Returns the trained
/// parameters and the per-epoch mean training loss.
pub fn train_fold(
    train: &[SubjectData],
    model_cfg: &ModelConfig,
    run_cfg: &RunConfig,
    seed: u64,
) -> Result<(ParamSet, Vec<f64>), Error> {
    if train.len() < 2 {
        return Err(Error::SingleClassTrainingSet);
    }
    let has = |class: u8| train.iter().any(|s| s.label == class);
    if !has(0) || !has(1) {
        return Err(Error::SingleClassTrainingSet);
    }

    let mut params = init_params(model_cfg, run_cfg.seed)?;
    let mut adam = AdamState::new();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(run_cfg.epochs);
    for epoch in 0..run_cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(run_cfg.batch_size) {
            let batch: Vec<SubjectData> = chunk.iter().map(|i| train[*i].clone()).collect();
            let mut tape = Tape::new();
            let (loss, report) =
                batch_loss(&mut tape, &params, model_cfg, &batch).map_err(|e| match e {
                    Error::Grad(GradError::NonFinite { .. }) => Error::NonFiniteLoss { epoch },
                    other => other,
                })?;
            if !report.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let grads = tape.backward(loss)?;
            params.zero_grads();
            grads.accumulate_into(&mut params)?;
            adam_step(&mut params, &mut adam, run_cfg.learning_rate)?;
            epoch_loss += report.total * batch.len() as f64;
        }
        history.push(epoch_loss / train.len() as f64);
    }
    Ok((params, history))
}

/// Prediction scores and labels for a subject set under fixed parameters.
pub fn evaluate(
    params: &ParamSet,
    model_cfg: &ModelConfig,
    subjects: &[SubjectData],
) -> Result<(Vec<f64>, Vec<u8>), Error> {
    let scores = predict(params, model_cfg, subjects)?;
    let labels = subjects.iter().map(|s| s.label).collect();
    Ok((scores, labels))
}

fn run_one_fold(
    dataset: &[SubjectData],
    folds: &[Vec<usize>],
    fold: usize,
    model_cfg: &ModelConfig,
    run_cfg: &RunConfig,
    checkpoint_dir: Option<&std::path::Path>,
) -> Result<FoldResult, Error> {
    let holdout = &folds[fold];
    let train_set: Vec<SubjectData> = (0..dataset.len())
        .filter(|i| !holdout.contains(i))
        .map(|i| dataset[i].clone())
        .collect();
    let validation: Vec<SubjectData> = holdout.iter().map(|i| dataset[*i].clone()).collect();
    let (params, loss_history) = train_fold(
        &train_set,
        model_cfg,
        run_cfg,
        fold_seed(run_cfg.seed, fold),
    )?;
    if let Some(dir) = checkpoint_dir {
        params.save(&dir.join(format!("fold_{fold:02}.ckpt")))?;
    }
    let (scores, labels) = evaluate(&params, model_cfg, &validation)?;
    let m = metrics(&scores, &labels, DECISION_THRESHOLD);
    Ok(FoldResult {
        fold,
        accuracy: m.accuracy,
        precision: m.precision,
        f1: m.f1,
        auroc: m.auroc,
        precision_defined: m.precision_defined,
        auroc_defined: m.auroc_defined,
        loss_history,
    })
}

fn summarize(folds: &[FoldResult]) -> (MetricSummary, MetricSummary) {
    let k = folds.len() as f64;
    let mean_of = |f: &dyn Fn(&FoldResult) -> f64| folds.iter().map(f).sum::<f64>() / k;
    let std_of = |f: &dyn Fn(&FoldResult) -> f64, mean: f64| {
        if folds.len() < 2 {
            0.0
        } else {
            (folds.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        }
    };
    let acc = mean_of(&|r| r.accuracy);
    let pre = mean_of(&|r| r.precision);
    let f1 = mean_of(&|r| r.f1);
    let auroc = mean_of(&|r| r.auroc);
    (
        MetricSummary {
            accuracy: acc,
            precision: pre,
            f1,
            auroc,
        },
        MetricSummary {
            accuracy: std_of(&|r| r.accuracy, acc),
            precision: std_of(&|r| r.precision, pre),
            f1: std_of(&|r| r.f1, f1),
            auroc: std_of(&|r| r.auroc, auroc),
        },
    )
}

/// Stratified k-fold cross-validation; each fold is held out once.
///
/// `jobs` > 1 trains folds on that many threads; fold results are identical
/// to the sequential run because every fold derives its own seeds. When
/// `checkpoint_dir` is set, each fold's trained parameters are saved there as
/// `fold_NN.ckpt` in the checkpoint format.
pub fn cross_validate(
    dataset: &[SubjectData],
    model_cfg: &ModelConfig,
    run_cfg: &RunConfig,
    jobs: usize,
    checkpoint_dir: Option<&std::path::Path>,
) -> Result<MetricsReport, Error> {
    let k = run_cfg.folds;
    if dataset.len() < k {
        return Err(Error::FoldCountExceedsSubjects {
            folds: k,
            subjects: dataset.len(),
        });
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(crate::dataio::DataError::from)?;
    }
    let labels: Vec<u8> = dataset.iter().map(|s| s.label).collect();
    let folds = stratified_folds(&labels, k, run_cfg.seed);

    let results: Vec<FoldResult> = if jobs <= 1 {
        let mut out = Vec::with_capacity(k);
        for fold in 0..k {
            out.push(run_one_fold(
                dataset,
                &folds,
                fold,
                model_cfg,
                run_cfg,
                checkpoint_dir,
            )?);
        }
        out
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Result<FoldResult, Error>>>> =
            (0..k).map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(k) {
                scope.spawn(|| loop {
                    let fold = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if fold >= k {
                        break;
                    }
                    let result =
                        run_one_fold(dataset, &folds, fold, model_cfg, run_cfg, checkpoint_dir);
                    *slots[fold].lock().expect("no poisoned fold slot") = Some(result);
                });
            }
        });
        let mut out = Vec::with_capacity(k);
        for slot in slots {
            out.push(slot.into_inner().expect("no poisoned fold slot").expect("fold ran")?);
        }
        out
    };

    let (mean, std) = summarize(&results);
    Ok(MetricsReport {
        config: run_cfg.clone(),
        folds: results,
        mean,
        std,
    })
}
