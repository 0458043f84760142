//! Masked Edge Drop.
//!
//! tsFC is first sparsified: a quantile of its weakest off-diagonal entries
//! is set exactly to zero, since cross-convolution outputs are generically
//! nonzero and the zero-test below would otherwise keep everything. It is
//! then thresholded into a binary mask: entry 1 where tsFC is nonzero, 0
//! where it is zero, diagonal forced to 0. Applying the mask to the static
//! network is a plain Hadamard product, so pruned entries pass no gradient.

use crate::gradcore::{GradError, Tape, Tensor, Var};

/// Binary symmetric M x M matrix with zero diagonal.
#[derive(Debug, Clone)]
pub struct MaskMatrix {
    data: Tensor,
}

impl MaskMatrix {
    fn from_raw(data: Tensor) -> Self {
        debug_assert!(data.is_square());
        debug_assert!(data.data().iter().all(|v| *v == 0.0 || *v == 1.0));
        Self { data }
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn m(&self) -> usize {
        self.data.rows()
    }

    /// Number of ones (both triangles).
    pub fn ones_count(&self) -> usize {
        self.data.data().iter().filter(|v| **v == 1.0).count()
    }
}

/// Zeroes the `q`-quantile of weakest off-diagonal |entries| of a symmetric
/// matrix: exactly `floor(q * E)` upper-triangle edges (and their mirror
/// images), ties broken by (row, col) lexicographic order. The diagonal and
/// all other entries are unchanged.
pub fn sparsify(tsfc: &Tensor, q: f64) -> Result<Tensor, GradError> {
    if !(0.0..1.0).contains(&q) {
        return Err(GradError::BadShape {
            op: "sparsify",
            expected: "quantile q in [0, 1)",
            shape: vec![],
        });
    }
    if !tsfc.is_square() {
        return Err(GradError::BadShape {
            op: "sparsify",
            expected: "a square matrix",
            shape: tsfc.shape().to_vec(),
        });
    }
    let m = tsfc.rows();
    let e = m * (m - 1) / 2;
    let drop = (q * e as f64).floor() as usize;
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(e);
    for i in 0..m {
        for j in (i + 1)..m {
            edges.push((i, j, tsfc.at(i, j).abs()));
        }
    }
    // weakest first; lexicographically earlier edges drop first on ties
    edges.sort_by(|a, b| {
        a.2.partial_cmp(&b.2)
            .expect("finite entries")
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let mut out = tsfc.data().to_vec();
    for (i, j, _) in edges.into_iter().take(drop) {
        out[i * m + j] = 0.0;
        out[j * m + i] = 0.0;
    }
    Tensor::matrix(m, m, out)
}

/// Binary mask from a sparsified tsFC: 1 where nonzero, 0 where zero,
/// diagonal forced to 0.
pub fn make_mask(tsfc_sparse: &Tensor) -> MaskMatrix {
    let m = tsfc_sparse.rows();
    let data = Tensor::from_fn(m, m, |i, j| {
        if i != j && tsfc_sparse.at(i, j) != 0.0 {
            1.0
        } else {
            0.0
        }
    })
    .expect("mask entries are 0/1");
    MaskMatrix::from_raw(data)
}

/// Hadamard product of a plain matrix with the mask.
pub fn apply_mask(sfc: &Tensor, mask: &MaskMatrix) -> Result<Tensor, GradError> {
    if sfc.shape() != mask.data.shape() {
        return Err(GradError::ShapeMismatch {
            op: "apply_mask",
            lhs: sfc.shape().to_vec(),
            rhs: mask.data.shape().to_vec(),
        });
    }
    let out = sfc
        .data()
        .iter()
        .zip(mask.data.data())
        .map(|(a, b)| a * b)
        .collect();
    Tensor::new(sfc.shape().to_vec(), out)
}

/// On-tape Hadamard with the mask as a constant, so gradients stop exactly at
/// pruned entries.
pub fn apply_mask_on_tape(tape: &mut Tape, sfc: Var, mask: &MaskMatrix) -> Result<Var, GradError> {
    if tape.value(sfc).shape() != mask.data.shape() {
        return Err(GradError::ShapeMismatch {
            op: "apply_mask",
            lhs: tape.value(sfc).shape().to_vec(),
            rhs: mask.data.shape().to_vec(),
        });
    }
    let mask_var = tape.input(mask.data.clone());
    tape.mul(sfc, mask_var)
}
