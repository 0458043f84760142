//! Attention-based Connection Encoder, fusion head, and losses.
//!
//! The masked static network is vectorized over the strict upper triangle,
//! reweighted by the attention vector, and compressed by an MLP into `y^M`.
//! Concatenated with the graph embedding `y^G`, a sigmoid classifier yields
//! the prediction. The composite loss is mean binary cross-entropy plus
//! λ times an alignment term, `1 - cos(y^G, y^M)` averaged over the batch, so
//! minimizing the total pulls the two branches together.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gradcore::{GradError, ParamSet, Tape, Tensor, Var};

/// ε used to clamp predictions inside (0, 1) and to guard cosine norms.
pub const LOSS_EPS: f64 = 1e-12;

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Tensor, GradError> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::matrix(rows, cols, data)
}

/// Registers the encoder MLP (E -> d) and classifier MLP (2d -> 1).
pub fn init_params(
    params: &mut ParamSet,
    e: usize,
    d: usize,
    rng: &mut impl Rng,
) -> Result<(), GradError> {
    params.insert("ace.enc.w1", glorot(e, d, rng)?)?;
    params.insert("ace.enc.b1", Tensor::zeros(vec![1, d]))?;
    params.insert("ace.enc.w2", glorot(d, d, rng)?)?;
    params.insert("ace.enc.b2", Tensor::zeros(vec![1, d]))?;
    params.insert("ace.clf.w1", glorot(2 * d, d, rng)?)?;
    params.insert("ace.clf.b1", Tensor::zeros(vec![1, d]))?;
    params.insert("ace.clf.w2", glorot(d, 1, rng)?)?;
    params.insert("ace.clf.b2", Tensor::zeros(vec![1, 1]))?;
    Ok(())
}

fn mlp(tape: &mut Tape, x: Var, params: &ParamSet, prefix: &str) -> Result<Var, GradError> {
    let w1 = tape.param(&format!("{prefix}.w1"), params)?;
    let b1 = tape.param(&format!("{prefix}.b1"), params)?;
    let w2 = tape.param(&format!("{prefix}.w2"), params)?;
    let b2 = tape.param(&format!("{prefix}.b2"), params)?;
    let h = tape.matmul(x, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.relu(h)?;
    let h = tape.matmul(h, w2)?;
    tape.add_bias(h, b2)
}

/// Compresses the attention-weighted masked network into `y^M` (1 x d):
/// `y^M = MLP(a ⊙ upper_triangle(masked_sfc))`.
pub fn encode_connections(
    tape: &mut Tape,
    masked_sfc: Var,
    attention: Var,
    params: &ParamSet,
) -> Result<Var, GradError> {
    let v = tape.upper_triangle_vectorize(masked_sfc)?;
    let (va, aa) = (tape.value(v).shape(), tape.value(attention).shape());
    if va != aa {
        return Err(GradError::ShapeMismatch {
            op: "encode_connections",
            lhs: aa.to_vec(),
            rhs: va.to_vec(),
        });
    }
    let weighted = tape.mul(attention, v)?;
    mlp(tape, weighted, params, "ace.enc")
}

/// `ŷ = sigmoid(classifier(Concat(y^M, y^G)))`, strictly inside (0, 1).
pub fn fuse_and_classify(
    tape: &mut Tape,
    y_m: Var,
    y_g: Var,
    params: &ParamSet,
) -> Result<Var, GradError> {
    let cat = tape.concat(y_m, y_g, 1)?;
    let logit = mlp(tape, cat, params, "ace.clf")?;
    tape.sigmoid(logit)
}

/// Mean binary cross-entropy of a `B x 1` prediction column against 0/1
/// labels. Predictions are clamped to `[ε, 1-ε]` first.
pub fn cross_entropy(tape: &mut Tape, yhat: Var, labels: &[f64]) -> Result<Var, GradError> {
    if labels.iter().any(|y| *y != 0.0 && *y != 1.0) {
        return Err(GradError::BadShape {
            op: "cross_entropy",
            expected: "labels in {0, 1}",
            shape: vec![labels.len()],
        });
    }
    let b = labels.len();
    if tape.value(yhat).numel() != b {
        return Err(GradError::ShapeMismatch {
            op: "cross_entropy",
            lhs: tape.value(yhat).shape().to_vec(),
            rhs: vec![b, 1],
        });
    }
    let y = tape.input(Tensor::new(vec![b, 1], labels.to_vec())?);
    let one_minus_y = tape.input(Tensor::new(
        vec![b, 1],
        labels.iter().map(|v| 1.0 - v).collect(),
    )?);
    let p = tape.clamp(yhat, LOSS_EPS, 1.0 - LOSS_EPS)?;
    let log_p = tape.ln(p)?;
    let neg_p = tape.scale(p, -1.0)?;
    let one_minus_p = tape.add_const(neg_p, 1.0)?;
    let log_q = tape.ln(one_minus_p)?;
    let pos = tape.mul(y, log_p)?;
    let neg = tape.mul(one_minus_y, log_q)?;
    let total = tape.add(pos, neg)?;
    let mean = tape.mean(total)?;
    tape.scale(mean, -1.0)
}

/// Alignment loss over paired batches: `(1/B) Σ (1 - cos(z1_i, z2_i))`.
/// Zero when aligned, two when opposed; norms are ε-guarded.
pub fn sim_loss(tape: &mut Tape, z1: &[Var], z2: &[Var]) -> Result<Var, GradError> {
    debug_assert_eq!(z1.len(), z2.len());
    let b = z1.len();
    let mut acc: Option<Var> = None;
    for (&a, &c) in z1.iter().zip(z2) {
        let prod = tape.mul(a, c)?;
        let dot = tape.sum(prod)?;
        let na = tape.frobenius_norm(a)?;
        let nc = tape.frobenius_norm(c)?;
        let denom_raw = tape.mul(na, nc)?;
        let denom = tape.add_const(denom_raw, LOSS_EPS)?;
        let cos = tape.div(dot, denom)?;
        let neg = tape.scale(cos, -1.0)?;
        let term = tape.add_const(neg, 1.0)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
    }
    let sum = acc.expect("non-empty batch");
    tape.scale(sum, 1.0 / b as f64)
}

/// Scalars of one composite-loss evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub l_c: f64,
    pub l_sim: f64,
    pub total: f64,
    pub lambda: f64,
}

/// `total = L_c + λ·L_sim`, returned with the scalar report.
pub fn total_loss(
    tape: &mut Tape,
    l_c: Var,
    l_sim: Var,
    lambda: f64,
) -> Result<(Var, LossReport), GradError> {
    let weighted = tape.scale(l_sim, lambda)?;
    let total = tape.add(l_c, weighted)?;
    let report = LossReport {
        l_c: tape.value(l_c).item(),
        l_sim: tape.value(l_sim).item(),
        total: tape.value(total).item(),
        lambda,
    };
    Ok((total, report))
}
