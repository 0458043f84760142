//! Per-subject pipeline composition.
//!
//! Ties the learnable stages together on one tape: WEA over the dynamic
//! stack, global fusion into tsFC, the hard mask branch into the connection
//! encoder, the tsFC graph branch through the HGCN, and the fused classifier.
//! The mask and the adjacency are recomputed from the current tsFC values on
//! every forward pass and enter the tape as constants: gradients reach the
//! WEA only through the node features and the surviving static entries.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::ace;
use crate::connectivity::{dynamic_fc, static_fc, ConnError, WindowConfig};
use crate::dataio::{BoldSeries, RunConfig};
use crate::error::Error;
use crate::gradcore::{ParamSet, Tape, Tensor, Var};
use crate::hgcn;
use crate::med;
use crate::wea;

/// Architecture hyperparameters resolved against a concrete dataset shape.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// ROI count.
    pub m: usize,
    /// Channel (window) count K.
    pub k: usize,
    pub wea_layers: usize,
    pub hgcn_blocks: usize,
    /// Hidden width d.
    pub hidden: usize,
    pub keep_ratio: f64,
    pub sparsify_q: f64,
    pub lambda: f64,
    pub ablate_ace: bool,
}

impl ModelConfig {
    /// Resolves a run configuration against the dataset's (M, T).
    pub fn resolve(cfg: &RunConfig, m: usize, t: usize) -> Result<Self, Error> {
        let window = WindowConfig::new(cfg.window_len, cfg.stride)?;
        let k = window.window_count(t)?;
        Ok(Self {
            m,
            k,
            wea_layers: cfg.wea_layers,
            hgcn_blocks: cfg.hgcn_blocks,
            hidden: cfg.hidden,
            keep_ratio: cfg.keep_ratio,
            sparsify_q: cfg.sparsify_q,
            lambda: cfg.lambda,
            ablate_ace: cfg.ablate_ace,
        })
    }

    /// Strict-upper-triangle edge count E.
    pub fn edge_count(&self) -> usize {
        self.m * (self.m - 1) / 2
    }
}

/// Fresh parameter set for this architecture, deterministic under `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet, Error> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    wea::init_params(&mut params, cfg.wea_layers, cfg.k, cfg.m, &mut rng)?;
    hgcn::init_params(&mut params, cfg.m, cfg.hidden, cfg.hgcn_blocks, &mut rng)?;
    ace::init_params(&mut params, cfg.edge_count(), cfg.hidden, &mut rng)?;
    Ok(params)
}

/// One subject's precomputed connectivity inputs.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub subject_id: String,
    pub label: u8,
    /// Static network, M x M.
    pub sfc: Tensor,
    /// Dynamic stack, K matrices of M x M.
    pub stack: Vec<Tensor>,
}

/// Computes sFC and the dFC stack once per subject; these are fixed inputs to
/// every later forward pass.
pub fn precompute_subject(
    series: &BoldSeries,
    window: WindowConfig,
) -> Result<SubjectData, ConnError> {
    let sfc = static_fc(&series.data)?;
    let stack = dynamic_fc(&series.data, window)?;
    Ok(SubjectData {
        subject_id: series.subject_id.clone(),
        label: series.label,
        sfc: sfc.data().clone(),
        stack: stack
            .windows()
            .iter()
            .map(|w| w.data().clone())
            .collect(),
    })
}

pub fn precompute_all(
    subjects: &[BoldSeries],
    window: WindowConfig,
) -> Result<Vec<SubjectData>, ConnError> {
    subjects
        .iter()
        .map(|s| precompute_subject(s, window))
        .collect()
}

/// Tape handles produced by one subject's forward pass.
pub struct SubjectForward {
    /// Prediction in (0, 1), shape 1 x 1.
    pub yhat: Var,
    /// Graph embedding, 1 x d.
    pub y_g: Var,
    /// Connection embedding, 1 x d (zeros when the encoder is ablated).
    pub y_m: Var,
}

/// Runs the full pipeline for one subject on `tape`.
pub fn forward_subject(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &ModelConfig,
    subject: &SubjectData,
) -> Result<SubjectForward, Error> {
    let sfc_var = tape.input(subject.sfc.clone());
    let channels: Vec<Var> = subject
        .stack
        .iter()
        .map(|t| tape.input(t.clone()))
        .collect();

    let updated = wea::wea_forward(tape, &channels, params, cfg.wea_layers, cfg.m)?;
    let tsfc = wea::global_fusion(tape, &updated, sfc_var)?;
    let tsfc_values = tape.value(tsfc).clone();

    // hard mask branch: recomputed from the current tsFC, enters as constant
    let sparse = med::sparsify(&tsfc_values, cfg.sparsify_q)?;
    let mask = med::make_mask(&sparse);
    let masked_sfc = med::apply_mask_on_tape(tape, sfc_var, &mask)?;

    // graph branch: binarized adjacency is constant, features stay attached
    let graph = hgcn::build_graph(&tsfc_values, cfg.keep_ratio)?;
    let anorm = hgcn::normalize_adjacency(&graph.adjacency)?;
    let anorm_var = tape.input(anorm);
    let sa = hgcn::hgcn_forward(tape, anorm_var, tsfc, params, cfg.hgcn_blocks)?;

    let y_m = if cfg.ablate_ace {
        tape.input(Tensor::zeros(vec![1, cfg.hidden]))
    } else {
        ace::encode_connections(tape, masked_sfc, sa.edge_attention, params)?
    };
    let yhat = ace::fuse_and_classify(tape, y_m, sa.graph_embedding, params)?;
    Ok(SubjectForward {
        yhat,
        y_g: sa.graph_embedding,
        y_m,
    })
}

/// Composite loss over a mini-batch: mean cross-entropy plus λ times the
/// branch-alignment term. With the encoder ablated the alignment term is
/// dropped (the zeroed branch carries no signal to align).
pub fn batch_loss(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &ModelConfig,
    batch: &[SubjectData],
) -> Result<(Var, ace::LossReport), Error> {
    debug_assert!(!batch.is_empty());
    let mut yhat_col: Option<Var> = None;
    let mut graph_embeddings = Vec::with_capacity(batch.len());
    let mut connection_embeddings = Vec::with_capacity(batch.len());
    for subject in batch {
        let fwd = forward_subject(tape, params, cfg, subject)?;
        yhat_col = Some(match yhat_col {
            Some(prev) => tape.concat(prev, fwd.yhat, 0)?,
            None => fwd.yhat,
        });
        graph_embeddings.push(fwd.y_g);
        connection_embeddings.push(fwd.y_m);
    }
    let yhat_col = yhat_col.expect("non-empty batch");
    let labels: Vec<f64> = batch.iter().map(|s| s.label as f64).collect();
    let l_c = ace::cross_entropy(tape, yhat_col, &labels)?;
    let l_sim = if cfg.ablate_ace {
        tape.input(Tensor::scalar(0.0)?)
    } else {
        ace::sim_loss(tape, &graph_embeddings, &connection_embeddings)?
    };
    let (total, report) = ace::total_loss(tape, l_c, l_sim, cfg.lambda)?;
    Ok((total, report))
}

/// Task-specific connectivity (tsFC) of one subject under fixed parameters:
/// the WEA + global-fusion front end only.
pub fn tsfc_values(
    params: &ParamSet,
    cfg: &ModelConfig,
    subject: &SubjectData,
) -> Result<Tensor, Error> {
    let mut tape = Tape::new();
    let sfc_var = tape.input(subject.sfc.clone());
    let channels: Vec<Var> = subject
        .stack
        .iter()
        .map(|t| tape.input(t.clone()))
        .collect();
    let updated = wea::wea_forward(&mut tape, &channels, params, cfg.wea_layers, cfg.m)?;
    let tsfc = wea::global_fusion(&mut tape, &updated, sfc_var)?;
    Ok(tape.value(tsfc).clone())
}

/// Prediction scores for a set of subjects under fixed parameters.
pub fn predict(
    params: &ParamSet,
    cfg: &ModelConfig,
    subjects: &[SubjectData],
) -> Result<Vec<f64>, Error> {
    let mut scores = Vec::with_capacity(subjects.len());
    for subject in subjects {
        let mut tape = Tape::new();
        let fwd = forward_subject(&mut tape, params, cfg, subject)?;
        scores.push(tape.value(fwd.yhat).item());
    }
    Ok(scores)
}

/// A tiny deterministic instance for gradient checking: 4 nodes, 2 windows,
/// 2 subjects (one per class).
pub fn toy_instance() -> (ModelConfig, Vec<SubjectData>) {
    let cfg = ModelConfig {
        m: 4,
        k: 2,
        wea_layers: 2,
        hgcn_blocks: 2,
        hidden: 3,
        keep_ratio: 0.5,
        sparsify_q: 0.5,
        lambda: 0.1,
        ablate_ace: false,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(12345);
    let mut subjects = Vec::new();
    for label in [0u8, 1u8] {
        let series = synth_series(&mut rng, cfg.m, 24);
        let window = WindowConfig::new(12, 12).expect("valid window");
        let bold = BoldSeries {
            subject_id: format!("toy_{label}"),
            label,
            data: series,
        };
        subjects.push(precompute_subject(&bold, window).expect("toy series is well-behaved"));
    }
    (cfg, subjects)
}

fn synth_series(rng: &mut ChaCha20Rng, m: usize, t: usize) -> Tensor {
    use rand::Rng;
    let data = (0..m * t).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(m, t, data).expect("random draws are finite")
}
