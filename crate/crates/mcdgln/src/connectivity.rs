//! Static and dynamic functional connectivity.
//!
//! Pearson correlation over whole series (static FC), over sliding windows
//! (dynamic FC), and proportional-threshold binarization of a connectivity
//! matrix into a graph adjacency.

use thiserror::Error;

use crate::gradcore::Tensor;

#[derive(Debug, Error)]
pub enum ConnError {
    #[error("zero-variance series at ROI {roi}")]
    ZeroVariance { roi: usize },
    #[error("zero-variance series at ROI {roi} in window {window}")]
    ZeroVarianceInWindow { window: usize, roi: usize },
    #[error("series length mismatch: {lhs} vs {rhs}")]
    LengthMismatch { lhs: usize, rhs: usize },
    #[error("series too short: need at least 2 timepoints, got {0}")]
    TooShort(usize),
    #[error("window length {window} exceeds series length {series}")]
    WindowTooLong { window: usize, series: usize },
    #[error("window config invalid: length and stride must be at least 1")]
    BadWindowConfig,
    #[error("keep_ratio must lie in (0, 1], got {0}")]
    BadKeepRatio(f64),
    #[error("connectivity matrix violates {what}: {detail}")]
    BadMatrix { what: &'static str, detail: String },
}

/// Sliding-window parameters: window length `len` and stride `stride`, both in
/// timepoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub len: usize,
    pub stride: usize,
}

impl WindowConfig {
    pub fn new(len: usize, stride: usize) -> Result<Self, ConnError> {
        if len < 1 || stride < 1 {
            return Err(ConnError::BadWindowConfig);
        }
        Ok(Self { len, stride })
    }

    /// Number of full windows that fit into a series of length `t`:
    /// `floor((t - len) / stride) + 1`. A trailing remainder shorter than a
    /// full window is dropped.
    pub fn window_count(&self, t: usize) -> Result<usize, ConnError> {
        if self.len > t {
            return Err(ConnError::WindowTooLong {
                window: self.len,
                series: t,
            });
        }
        Ok((t - self.len) / self.stride + 1)
    }
}

/// Role a connectivity matrix plays in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnRole {
    /// Whole-series Pearson network (sFC).
    Static,
    /// One sliding-window Pearson network (dFC channel).
    Window,
    /// Task-specific network produced by weighted edge aggregation (tsFC).
    Fused,
}

/// M x M real connectivity matrix tagged with its role.
///
/// PCC-derived roles (static/window) enforce symmetry to 1e-12, unit
/// diagonal, and entries in [-1, 1]; fused matrices only need symmetry and
/// finiteness.
#[derive(Debug, Clone)]
pub struct ConnMatrix {
    role: ConnRole,
    data: Tensor,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl ConnMatrix {
    pub fn pcc_derived(role: ConnRole, data: Tensor) -> Result<Self, ConnError> {
        if role == ConnRole::Fused {
            return Err(ConnError::BadMatrix {
                what: "role",
                detail: "fused matrices are not PCC-derived".into(),
            });
        }
        check_square(&data)?;
        check_symmetric(&data)?;
        let m = data.rows();
        for i in 0..m {
            if (data.at(i, i) - 1.0).abs() > SYMMETRY_TOL {
                return Err(ConnError::BadMatrix {
                    what: "unit diagonal",
                    detail: format!("diagonal entry {i} is {}", data.at(i, i)),
                });
            }
        }
        if data.data().iter().any(|v| *v < -1.0 || *v > 1.0) {
            return Err(ConnError::BadMatrix {
                what: "PCC range",
                detail: "entry outside [-1, 1]".into(),
            });
        }
        Ok(Self { role, data })
    }

    pub fn fused(data: Tensor) -> Result<Self, ConnError> {
        check_square(&data)?;
        check_symmetric(&data)?;
        Ok(Self {
            role: ConnRole::Fused,
            data,
        })
    }

    pub fn role(&self) -> ConnRole {
        self.role
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn m(&self) -> usize {
        self.data.rows()
    }
}

fn check_square(data: &Tensor) -> Result<(), ConnError> {
    if !data.is_square() {
        return Err(ConnError::BadMatrix {
            what: "shape",
            detail: format!("expected square matrix, got {:?}", data.shape()),
        });
    }
    Ok(())
}

fn check_symmetric(data: &Tensor) -> Result<(), ConnError> {
    let m = data.rows();
    for i in 0..m {
        for j in (i + 1)..m {
            if (data.at(i, j) - data.at(j, i)).abs() > SYMMETRY_TOL {
                return Err(ConnError::BadMatrix {
                    what: "symmetry",
                    detail: format!("entries ({i},{j}) and ({j},{i}) differ"),
                });
            }
        }
    }
    Ok(())
}

/// Ordered stack of per-window connectivity matrices (the channels of the
/// weighted edge aggregation).
#[derive(Debug, Clone)]
pub struct DynConnStack {
    windows: Vec<ConnMatrix>,
    config: WindowConfig,
}

impl DynConnStack {
    pub fn windows(&self) -> &[ConnMatrix] {
        &self.windows
    }

    pub fn config(&self) -> WindowConfig {
        self.config
    }

    /// Channel count K.
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn m(&self) -> usize {
        self.windows[0].m()
    }
}

/// Pearson correlation coefficient between two equal-length series, clamped
/// to [-1, 1] against rounding.
pub fn pcc(u: &[f64], v: &[f64]) -> Result<f64, ConnError> {
    if u.len() != v.len() {
        return Err(ConnError::LengthMismatch {
            lhs: u.len(),
            rhs: v.len(),
        });
    }
    if u.len() < 2 {
        return Err(ConnError::TooShort(u.len()));
    }
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let mut dot = 0.0;
    let mut su = 0.0;
    let mut sv = 0.0;
    for (a, b) in u.iter().zip(v) {
        let da = a - mu;
        let db = b - mv;
        dot += da * db;
        su += da * da;
        sv += db * db;
    }
    if su == 0.0 {
        return Err(ConnError::ZeroVariance { roi: 0 });
    }
    if sv == 0.0 {
        return Err(ConnError::ZeroVariance { roi: 1 });
    }
    Ok((dot / (su.sqrt() * sv.sqrt())).clamp(-1.0, 1.0))
}

/// Whole-series Pearson network of an M x T series matrix.
pub fn static_fc(series: &Tensor) -> Result<ConnMatrix, ConnError> {
    fc_of_segment(series, ConnRole::Static).map_err(|e| match e {
        ConnError::ZeroVariance { roi } => ConnError::ZeroVariance { roi },
        other => other,
    })
}

fn fc_of_segment(series: &Tensor, role: ConnRole) -> Result<ConnMatrix, ConnError> {
    let m = series.rows();
    let t = series.cols();
    if t < 2 {
        return Err(ConnError::TooShort(t));
    }
    // Center rows once; reject zero-variance ROIs with their index.
    let mut centered = vec![0.0; m * t];
    let mut norms = vec![0.0; m];
    for i in 0..m {
        let row = &series.data()[i * t..(i + 1) * t];
        let mean = row.iter().sum::<f64>() / t as f64;
        let mut ss = 0.0;
        for (j, v) in row.iter().enumerate() {
            let d = v - mean;
            centered[i * t + j] = d;
            ss += d * d;
        }
        if ss == 0.0 {
            return Err(ConnError::ZeroVariance { roi: i });
        }
        norms[i] = ss.sqrt();
    }
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        out[i * m + i] = 1.0;
        for j in (i + 1)..m {
            let mut dot = 0.0;
            for k in 0..t {
                dot += centered[i * t + k] * centered[j * t + k];
            }
            let r = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            out[i * m + j] = r;
            out[j * m + i] = r;
        }
    }
    let tensor = Tensor::matrix(m, m, out).map_err(|_| ConnError::BadMatrix {
        what: "finiteness",
        detail: "non-finite correlation".into(),
    })?;
    ConnMatrix::pcc_derived(role, tensor)
}

/// Segments an M x T series into full windows; segment j covers timepoints
/// `[j*stride, j*stride + len)`.
pub fn sliding_windows(series: &Tensor, cfg: WindowConfig) -> Result<Vec<Tensor>, ConnError> {
    let t = series.cols();
    let k = cfg.window_count(t)?;
    let m = series.rows();
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let start = j * cfg.stride;
        let mut data = Vec::with_capacity(m * cfg.len);
        for i in 0..m {
            let row = &series.data()[i * t..(i + 1) * t];
            data.extend_from_slice(&row[start..start + cfg.len]);
        }
        out.push(Tensor::matrix(m, cfg.len, data).expect("window slice is finite"));
    }
    Ok(out)
}

/// Per-window Pearson networks of a series.
pub fn dynamic_fc(series: &Tensor, cfg: WindowConfig) -> Result<DynConnStack, ConnError> {
    let segments = sliding_windows(series, cfg)?;
    let mut windows = Vec::with_capacity(segments.len());
    for (j, segment) in segments.iter().enumerate() {
        let fc = fc_of_segment(segment, ConnRole::Window).map_err(|e| match e {
            ConnError::ZeroVariance { roi } => ConnError::ZeroVarianceInWindow { window: j, roi },
            other => other,
        })?;
        windows.push(fc);
    }
    Ok(DynConnStack {
        windows,
        config: cfg,
    })
}

/// Binarizes a symmetric connectivity matrix into an adjacency by keeping the
/// top `keep_ratio` fraction of off-diagonal edges ranked by |value|.
///
/// `ceil(keep_ratio * E)` edges are kept, with ties broken by (row, col)
/// lexicographic order. Exact zeros are never edges, so an all-zero matrix
/// binarizes to the edgeless graph. The diagonal stays 0; self-loops are
/// added later by normalization.
pub fn binarize_adjacency(conn: &Tensor, keep_ratio: f64) -> Result<Tensor, ConnError> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(ConnError::BadKeepRatio(keep_ratio));
    }
    check_square(conn)?;
    let m = conn.rows();
    let e = m * (m - 1) / 2;
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(e);
    for i in 0..m {
        for j in (i + 1)..m {
            let w = conn.at(i, j).abs();
            if w > 0.0 {
                edges.push((i, j, w));
            }
        }
    }
    edges.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .expect("finite edge weights")
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let keep = ((keep_ratio * e as f64).ceil() as usize).min(edges.len());
    let mut out = vec![0.0; m * m];
    for (i, j, _) in edges.into_iter().take(keep) {
        out[i * m + j] = 1.0;
        out[j * m + i] = 1.0;
    }
    Ok(Tensor::matrix(m, m, out).expect("binary matrix is finite"))
}
