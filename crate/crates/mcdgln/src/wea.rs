//! Weighted Edge Aggregation.
//!
//! Stacked cross-convolution layers with a distinct learnable M x M kernel
//! per layer and channel: the receptive field of edge (i, j) is row i plus
//! column j, so the pre-activation is
//!
//! ```text
//! ê_ij = Σ_m e_im·w_im + Σ_n e_nj·w_nj
//! ```
//!
//! followed by tanh between layers. Global fusion then collapses the updated
//! stack and the static network into the task-specific connectivity matrix
//! (tsFC): each matrix contributes scaled by mean/(Frobenius norm + ε), and
//! the result is symmetrized.

use rand::Rng;

use crate::gradcore::{GradError, ParamSet, Tape, Tensor, Var};

/// ε guarding the fusion denominators.
pub const FUSION_EPS: f64 = 1e-12;

/// Parameter name of the kernel for (layer, channel).
pub fn weight_name(layer: usize, channel: usize) -> String {
    format!("wea.l{layer}.c{channel}")
}

/// Registers one M x M kernel per (layer, channel), uniform in [-1/M, 1/M]
/// so row/column sums stay O(1) at the first layer.
pub fn init_params(
    params: &mut ParamSet,
    layers: usize,
    channels: usize,
    m: usize,
    rng: &mut impl Rng,
) -> Result<(), GradError> {
    let limit = 1.0 / m as f64;
    for layer in 0..layers {
        for channel in 0..channels {
            let data = (0..m * m).map(|_| rng.gen_range(-limit..limit)).collect();
            params.insert(&weight_name(layer, channel), Tensor::matrix(m, m, data)?)?;
        }
    }
    Ok(())
}

/// One cross-convolution layer over all channels, with tanh activation.
///
/// `weights` must hold one kernel per channel. The output channel count
/// equals the input channel count.
pub fn cross_conv_layer(
    tape: &mut Tape,
    channels: &[Var],
    weights: &[Var],
    ones: Var,
) -> Result<Vec<Var>, GradError> {
    if channels.len() != weights.len() {
        return Err(GradError::ShapeMismatch {
            op: "cross_conv_layer",
            lhs: vec![channels.len()],
            rhs: vec![weights.len()],
        });
    }
    let mut out = Vec::with_capacity(channels.len());
    for (&e, &w) in channels.iter().zip(weights) {
        let pre = cross_conv_pre_activation(tape, e, w, ones)?;
        out.push(tape.tanh(pre)?);
    }
    Ok(out)
}

/// Pre-activation of one channel: with P = E ⊙ W, entry (i, j) is
/// rowsum_i(P) + colsum_j(P), realized as P·1 + 1·P against an all-ones
/// matrix.
pub fn cross_conv_pre_activation(
    tape: &mut Tape,
    e: Var,
    w: Var,
    ones: Var,
) -> Result<Var, GradError> {
    let p = tape.mul(e, w)?;
    let row_part = tape.matmul(p, ones)?;
    let col_part = tape.matmul(ones, p)?;
    tape.add(row_part, col_part)
}

/// All-ones M x M constant used by the cross receptive field.
pub fn ones_matrix(tape: &mut Tape, m: usize) -> Var {
    tape.input(Tensor::filled(vec![m, m], 1.0).expect("ones are finite"))
}

/// Applies `layers` cross-convolution layers in sequence; zero layers is the
/// identity on the stack.
pub fn wea_forward(
    tape: &mut Tape,
    channels: &[Var],
    params: &ParamSet,
    layers: usize,
    m: usize,
) -> Result<Vec<Var>, GradError> {
    let mut current = channels.to_vec();
    if layers == 0 {
        return Ok(current);
    }
    let ones = ones_matrix(tape, m);
    for layer in 0..layers {
        let weights = (0..current.len())
            .map(|channel| tape.param(&weight_name(layer, channel), params))
            .collect::<Result<Vec<_>, _>>()?;
        current = cross_conv_layer(tape, &current, &weights, ones)?;
    }
    Ok(current)
}

/// Global fusion of the updated stack with the static network.
///
/// Each matrix X contributes α·X with α = mean(X)/(‖X‖_F + ε); the sum is
/// symmetrized to (Y + Yᵀ)/2. An all-zero matrix contributes zero (the ε
/// guard keeps the coefficient finite) and is logged as a warning.
pub fn global_fusion(tape: &mut Tape, channels: &[Var], sfc: Var) -> Result<Var, GradError> {
    let mut acc: Option<Var> = None;
    let terms = channels.iter().chain(std::iter::once(&sfc));
    for (idx, &x) in terms.enumerate() {
        let norm = tape.frobenius_norm(x)?;
        if tape.value(norm).item() == 0.0 {
            log::warn!(
                "global_fusion: matrix {idx} is all-zero; its fusion coefficient collapses to 0"
            );
        }
        let guarded = tape.add_const(norm, FUSION_EPS)?;
        let pooled = tape.mean(x)?;
        let alpha = tape.div(pooled, guarded)?;
        let term = tape.mul_scalar(x, alpha)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
    }
    let fused = acc.expect("at least the static network is present");
    let fused_t = tape.transpose(fused)?;
    let sum = tape.add(fused, fused_t)?;
    tape.scale(sum, 0.5)
}
