//! Per-edge two-sample t-tests between subject groups and overlap statistics
//! between the edge sets flagged on static and task-specific connectivity.
//!
//! Student's t with pooled variance, df = n_a + n_b - 2; two-sided p-values
//! via a self-contained continued-fraction regularized incomplete beta.

use serde::{Deserialize, Serialize};

use crate::connectivity::ConnMatrix;
use crate::error::Error;

/// Result of one edge's two-sample t-test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeTestResult {
    pub edge: (usize, usize),
    pub t: f64,
    pub p: f64,
    pub significant: bool,
    /// Zero pooled variance with unequal means: |t| is unbounded and p is 0.
    pub degenerate: bool,
}

/// Counts of significant edges found only on sFC, only on tsFC, and on both.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapReport {
    pub sfc_only: usize,
    pub tsfc_only: usize,
    pub overlap: usize,
}

/// Two-sample pooled-variance Student's t-test; returns (t, p, degenerate).
///
/// Zero pooled variance with equal means yields (0, 1); with unequal means
/// the result is flagged degenerate with p = 0.
pub fn two_sample_t(a: &[f64], b: &[f64]) -> Result<(f64, f64, bool), Error> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Analysis(format!(
            "two_sample_t requires at least 2 samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let ss = |xs: &[f64], m: f64| xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    let pooled = (ss(a, ma) + ss(b, mb)) / (na + nb - 2.0);
    let diff = ma - mb;
    if pooled == 0.0 {
        return if diff == 0.0 {
            Ok((0.0, 1.0, false))
        } else {
            Ok((diff.signum() * f64::INFINITY, 0.0, true))
        };
    }
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    let t = diff / se;
    let df = na + nb - 2.0;
    let p = student_t_two_sided_p(t, df);
    Ok((t, p, false))
}

/// Two-sided p-value of a Student t statistic at `df` degrees of freedom:
/// `I_{df/(df+t^2)}(df/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    reg_inc_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// ln Γ(z) for z > 0, Lanczos approximation.
pub fn ln_gamma(z: f64) -> f64 {
    const COEFFS: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut sum = 1.000000000190015;
    for (i, c) in COEFFS.iter().enumerate() {
        sum += c / (z + i as f64 + 1.0);
    }
    let tmp = z + 5.5;
    let tmp = (z + 0.5) * tmp.ln() - tmp;
    tmp + (2.5066282746310005 * sum / z).ln()
}

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction, with
/// the symmetry relation for fast convergence.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "shape parameters must be positive");
    assert!((0.0..=1.0).contains(&x), "x must lie in [0, 1]");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * betacf(x, a, b) / a
    } else {
        1.0 - (b * (1.0 - x).ln() + a * x.ln() - ln_beta(b, a)).exp() * betacf(1.0 - x, b, a) / b
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn betacf(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Per-edge two-sample t-tests across two groups of connectivity matrices.
/// Significance is uncorrected at level `alpha`.
pub fn abnormal_edges(
    group_a: &[ConnMatrix],
    group_b: &[ConnMatrix],
    alpha: f64,
) -> Result<Vec<EdgeTestResult>, Error> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::Analysis("both groups must be non-empty".into()));
    }
    let m = group_a[0].m();
    for c in group_a.iter().chain(group_b) {
        if c.m() != m {
            return Err(Error::Analysis(format!(
                "matrix size mismatch: {} vs {m}",
                c.m()
            )));
        }
    }
    let mut out = Vec::with_capacity(m * (m - 1) / 2);
    for u in 0..m {
        for w in (u + 1)..m {
            let a: Vec<f64> = group_a.iter().map(|c| c.data().at(u, w)).collect();
            let b: Vec<f64> = group_b.iter().map(|c| c.data().at(u, w)).collect();
            let (t, p, degenerate) = two_sample_t(&a, &b)?;
            out.push(EdgeTestResult {
                edge: (u, w),
                t,
                p,
                significant: p < alpha,
                degenerate,
            });
        }
    }
    Ok(out)
}

/// Intersection/difference counts between two significant-edge sets.
pub fn overlap_stats(sig_sfc: &[(usize, usize)], sig_tsfc: &[(usize, usize)]) -> OverlapReport {
    let tsfc: std::collections::BTreeSet<_> = sig_tsfc.iter().collect();
    let sfc: std::collections::BTreeSet<_> = sig_sfc.iter().collect();
    let overlap = sfc.intersection(&tsfc).count();
    OverlapReport {
        sfc_only: sfc.len() - overlap,
        tsfc_only: tsfc.len() - overlap,
        overlap,
    }
}

/// Edges flagged significant in a test set.
pub fn significant_edges(results: &[EdgeTestResult]) -> Vec<(usize, usize)> {
    results
        .iter()
        .filter(|r| r.significant)
        .map(|r| r.edge)
        .collect()
}
