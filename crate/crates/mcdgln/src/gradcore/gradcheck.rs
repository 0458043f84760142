//! Finite-difference verification of analytic gradients.

use super::params::ParamSet;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::GradError;

/// Relative error used throughout: |a - n| / max(1, |a|, |n|).
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Checks a scalar-valued program against central finite differences over its
/// inputs. Returns the maximum relative error across all input entries.
pub fn grad_check<F, E>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<GradError>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.input(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss);
        if !value.is_scalar() {
            return Err(GradError::NonScalarLoss {
                shape: value.shape().to_vec(),
            }
            .into());
        }
        Ok(value.item())
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.value(loss).is_scalar() {
        return Err(GradError::NonScalarLoss {
            shape: tape.value(loss).shape().to_vec(),
        }
        .into());
    }
    let grads = tape.backward(loss).map_err(E::from)?;

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = match grads.wrt(vars[k]) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; input.numel()],
        };
        for idx in 0..input.numel() {
            let perturb = |delta: f64| -> Result<f64, E> {
                let mut shifted: Vec<Tensor> = inputs.to_vec();
                let mut data = shifted[k].data().to_vec();
                data[idx] += delta;
                shifted[k] =
                    Tensor::new(shifted[k].shape().to_vec(), data).map_err(E::from)?;
                Ok(eval(&shifted)?.0)
            };
            let plus = perturb(eps)?;
            let minus = perturb(-eps)?;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[idx], numeric));
        }
    }
    Ok(worst)
}

/// Same check, but perturbing every entry of every parameter in `params`.
///
/// `f` builds the scalar loss from a tape and the current parameter values;
/// any data it needs is captured in the closure.
pub fn grad_check_params<F, E>(f: F, params: &ParamSet, eps: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var, E>,
    E: From<GradError>,
{
    let eval = |p: &ParamSet| -> Result<f64, E> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, p)?;
        let value = tape.value(loss);
        if !value.is_scalar() {
            return Err(GradError::NonScalarLoss {
                shape: value.shape().to_vec(),
            }
            .into());
        }
        Ok(value.item())
    };

    // Analytic gradients, accumulated into a scratch copy.
    let mut scratch = params.clone();
    scratch.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    if !tape.value(loss).is_scalar() {
        return Err(GradError::NonScalarLoss {
            shape: tape.value(loss).shape().to_vec(),
        }
        .into());
    }
    let grads = tape.backward(loss).map_err(E::from)?;
    grads.accumulate_into(&mut scratch).map_err(E::from)?;

    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut worst = 0.0f64;
    for name in &names {
        let analytic = scratch.grad(name).map_err(E::from)?.to_vec();
        for (idx, analytic_entry) in analytic.iter().enumerate() {
            let plus = eval(&params.perturbed(name, idx, eps).map_err(E::from)?)?;
            let minus = eval(&params.perturbed(name, idx, -eps).map_err(E::from)?)?;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(*analytic_entry, numeric));
        }
    }
    Ok(worst)
}

type Builder = fn(&mut Tape, &[Var]) -> Result<Var, GradError>;

/// Finite-difference sweep over every tape primitive on random inputs in
/// [-1, 1]. Returns the worst relative error across `trials` trials each.
pub fn primitive_suite(seed: u64, trials: usize, eps: f64) -> Result<f64, GradError> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut rand_tensor = |shape: &[usize]| -> Result<Tensor, GradError> {
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data)
    };
    let mut worst = 0.0f64;
    for (_, shapes, builder) in primitive_cases() {
        for _ in 0..trials {
            let inputs = shapes
                .iter()
                .map(|s| rand_tensor(s))
                .collect::<Result<Vec<_>, _>>()?;
            worst = worst.max(grad_check(builder, &inputs, eps)?);
        }
    }
    Ok(worst)
}

/// One scalar program per primitive, exercising its gradient.
fn primitive_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Builder)> {
    vec![
            ("add", vec![vec![3, 3], vec![3, 3]], |t, v| {
                let y = t.add(v[0], v[1])?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
            ("subtract", vec![vec![3, 3], vec![3, 3]], |t, v| {
                let y = t.sub(v[0], v[1])?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
            ("elementwise_multiply", vec![vec![3, 3], vec![3, 3]], |t, v| {
                let y = t.mul(v[0], v[1])?;
                t.sum(y)
            }),
            ("divide", vec![vec![2, 2], vec![2, 2]], |t, v| {
                // keep the denominator away from zero
                let shifted = t.add_const(v[1], 3.0)?;
                let y = t.div(v[0], shifted)?;
                t.sum(y)
            }),
            ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| {
                let y = t.matmul(v[0], v[1])?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
            ("scalar_multiply", vec![vec![3, 2]], |t, v| {
                let y = t.scale(v[0], -2.5)?;
                t.sum(y)
            }),
            ("mul_scalar", vec![vec![3, 2], vec![1]], |t, v| {
                let y = t.mul_scalar(v[0], v[1])?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
            ("add_const", vec![vec![2, 3]], |t, v| {
                let y = t.add_const(v[0], 0.7)?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
            ("add_bias", vec![vec![3, 4], vec![1, 4]], |t, v| {
                let y = t.add_bias(v[0], v[1])?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
            ("transpose", vec![vec![3, 2]], |t, v| {
                let y = t.transpose(v[0])?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
            ("concat_rows", vec![vec![2, 3], vec![1, 3]], |t, v| {
                let y = t.concat(v[0], v[1], 0)?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
            ("concat_cols", vec![vec![2, 2], vec![2, 3]], |t, v| {
                let y = t.concat(v[0], v[1], 1)?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
            ("reshape", vec![vec![2, 6]], |t, v| {
                let y = t.reshape(v[0], vec![3, 4])?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
            ("sum", vec![vec![4, 2]], |t, v| t.sum(v[0])),
            ("mean", vec![vec![4, 2]], |t, v| {
                let m = t.mean(v[0])?;
                let sq = t.mul(m, m)?;
                t.sum(sq)
            }),
            ("row_max", vec![vec![4, 3]], |t, v| {
                let y = t.row_max(v[0])?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
            ("global_max", vec![vec![3, 3]], |t, v| {
                let y = t.global_max(v[0])?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
            ("relu", vec![vec![4, 4]], |t, v| {
                let y = t.relu(v[0])?;
                t.sum(y)
            }),
            ("tanh", vec![vec![4, 4]], |t, v| {
                let y = t.tanh(v[0])?;
                t.sum(y)
            }),
            ("sigmoid", vec![vec![4, 4]], |t, v| {
                let y = t.sigmoid(v[0])?;
                t.sum(y)
            }),
            ("softmax", vec![vec![3, 4]], |t, v| {
                let y = t.softmax(v[0])?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
            ("ln", vec![vec![3, 3]], |t, v| {
                let shifted = t.add_const(v[0], 2.0)?;
                let y = t.ln(shifted)?;
                t.sum(y)
            }),
            ("clamp", vec![vec![4, 4]], |t, v| {
                let y = t.clamp(v[0], -0.5, 0.5)?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
            ("frobenius_norm", vec![vec![3, 3]], |t, v| {
                t.frobenius_norm(v[0])
            }),
            ("upper_triangle_vectorize", vec![vec![4, 4]], |t, v| {
                let y = t.upper_triangle_vectorize(v[0])?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            }),
        ]
}
