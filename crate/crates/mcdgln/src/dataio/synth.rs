//! Seeded synthetic connectome benchmark.
//!
//! Each subject's BOLD series is drawn i.i.d. per timepoint from a zero-mean
//! Gaussian whose covariance carries the class's block-correlation structure:
//! ROIs are partitioned into modules, within-module pairs share an
//! intra-module correlation, and the classes differ by an elevated
//! correlation on a fixed cross-module edge subset (all pairs between the
//! first two modules). That planted subset is what the analysis stage is
//! expected to recover.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{parse_kv, parse_num, ConfigError};
use super::{DataError, DatasetManifest, SubjectRecord};
use crate::gradcore::Tensor;

/// Generator parameters. Correlations are per class: index 0 = control,
/// index 1 = case.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub m: usize,
    pub t: usize,
    /// ROIs are split into this many near-equal contiguous modules.
    pub n_modules: usize,
    pub rho_intra: [f64; 2],
    /// Correlation on the planted cross-module edges.
    pub rho_cross: [f64; 2],
    /// Variance added to the diagonal.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects: 100,
            m: 16,
            t: 200,
            n_modules: 4,
            rho_intra: [0.6, 0.6],
            rho_cross: [0.0, 0.5],
            noise: 0.05,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut spec = Self::default();
        for (key, value) in parse_kv(text)? {
            match key.as_str() {
                "n_subjects" => spec.n_subjects = parse_num(&key, &value)?,
                "m" => spec.m = parse_num(&key, &value)?,
                "t" => spec.t = parse_num(&key, &value)?,
                "n_modules" => spec.n_modules = parse_num(&key, &value)?,
                "rho_intra_control" => spec.rho_intra[0] = parse_num(&key, &value)?,
                "rho_intra_case" => spec.rho_intra[1] = parse_num(&key, &value)?,
                "rho_cross_control" => spec.rho_cross[0] = parse_num(&key, &value)?,
                "rho_cross_case" => spec.rho_cross[1] = parse_num(&key, &value)?,
                "noise" => spec.noise = parse_num(&key, &value)?,
                "seed" => spec.seed = parse_num(&key, &value)?,
                _ => return Err(ConfigError::UnknownKey(key)),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |key: &str, constraint: &str| {
            Err(ConfigError::Constraint {
                key: key.into(),
                constraint: constraint.into(),
            })
        };
        if self.n_subjects < 1 {
            return fail("n_subjects", "must be at least 1");
        }
        if self.m < 2 {
            return fail("m", "must be at least 2");
        }
        if self.t < 2 {
            return fail("t", "must be at least 2");
        }
        if self.n_modules < 1 || self.n_modules > self.m {
            return fail("n_modules", "must lie in [1, m]");
        }
        for rho in self.rho_intra.iter().chain(&self.rho_cross) {
            if rho.is_nan() || *rho <= -1.0 || *rho >= 1.0 {
                return fail("rho", "correlations must lie in (-1, 1)");
            }
        }
        if self.noise.is_nan() || self.noise < 0.0 {
            return fail("noise", "must be non-negative");
        }
        Ok(())
    }

    /// Module index of each ROI: near-equal contiguous blocks, the first
    /// `m % n_modules` modules one ROI larger.
    pub fn module_of(&self) -> Vec<usize> {
        let base = self.m / self.n_modules;
        let extra = self.m % self.n_modules;
        let mut out = Vec::with_capacity(self.m);
        for module in 0..self.n_modules {
            let size = base + usize::from(module < extra);
            out.extend(std::iter::repeat_n(module, size));
        }
        out
    }

    /// The fixed cross-module edge subset on which the classes differ: every
    /// (u, w) pair with u in module 0 and w in module 1, upper-triangle order.
    pub fn planted_edges(&self) -> Vec<(usize, usize)> {
        let modules = self.module_of();
        let mut out = Vec::new();
        for u in 0..self.m {
            for w in (u + 1)..self.m {
                if modules[u] == 0 && modules[w] == 1 {
                    out.push((u, w));
                }
            }
        }
        out
    }

    /// Population covariance of one class.
    pub fn class_covariance(&self, class: usize) -> Vec<f64> {
        let modules = self.module_of();
        let planted = self.planted_edges();
        let m = self.m;
        let mut cov = vec![0.0; m * m];
        for i in 0..m {
            cov[i * m + i] = 1.0 + self.noise;
            for j in (i + 1)..m {
                let rho = if modules[i] == modules[j] {
                    self.rho_intra[class]
                } else if planted.contains(&(i, j)) {
                    self.rho_cross[class]
                } else {
                    0.0
                };
                cov[i * m + j] = rho;
                cov[j * m + i] = rho;
            }
        }
        cov
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Writes the synthetic dataset (per-subject BOLD CSVs plus `manifest.csv`)
/// into `out_dir` and returns the manifest. Deterministic under the spec's
/// seed; classes alternate so their counts differ by at most one.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest, DataError> {
    spec.validate().map_err(|e| DataError::Manifest {
        path: out_dir.join("manifest.csv"),
        detail: format!("invalid synthetic spec: {e}"),
    })?;
    let m = spec.m;
    let mut factors = Vec::with_capacity(2);
    for class in 0..2 {
        let cov = spec.class_covariance(class);
        let factor = cholesky(&cov, m).ok_or_else(|| DataError::Manifest {
            path: out_dir.join("manifest.csv"),
            detail: format!(
                "class {class} covariance is not positive-definite; lower the correlations"
            ),
        })?;
        factors.push(factor);
    }

    std::fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.n_subjects);
    for idx in 0..spec.n_subjects {
        let label = (idx % 2) as u8;
        let factor = &factors[label as usize];
        // x_t = L z_t, one draw per timepoint, stored column-by-column
        let mut data = vec![0.0; m * spec.t];
        for t in 0..spec.t {
            let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            for i in 0..m {
                let mut v = 0.0;
                for k in 0..=i {
                    v += factor[i * m + k] * z[k];
                }
                data[i * spec.t + t] = v;
            }
        }
        let tensor = Tensor::matrix(m, spec.t, data).expect("gaussian draws are finite");
        let file = format!("sub_{idx:04}.csv");
        super::write_bold_matrix(&out_dir.join(&file), &tensor)?;
        records.push(SubjectRecord {
            subject_id: format!("sub_{idx:04}"),
            label,
            path: out_dir.join(&file),
        });
    }

    let manifest_path = out_dir.join("manifest.csv");
    {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&manifest_path)?);
        writeln!(w, "subject_id,label,path")?;
        for record in &records {
            let file = record
                .path
                .file_name()
                .expect("generated path has a file name")
                .to_string_lossy();
            writeln!(w, "{},{},{}", record.subject_id, record.label, file)?;
        }
    }
    Ok(DatasetManifest {
        records,
        m,
        t: spec.t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectivity::static_fc;
    use crate::dataio::load_dataset;

    #[test]
    fn partition_covers_all_rois_disjointly() {
        let spec = SynthSpec {
            m: 10,
            n_modules: 3,
            ..Default::default()
        };
        let modules = spec.module_of();
        assert_eq!(modules.len(), 10);
        assert_eq!(modules, vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn class_balance_is_within_one() {
        for n in [1usize, 2, 7, 10, 33] {
            let cases = (0..n).filter(|i| i % 2 == 1).count();
            let controls = n - cases;
            assert!(controls.abs_diff(cases) <= 1);
        }
    }

    #[test]
    fn same_seed_twice_gives_bitwise_identical_files() {
        let spec = SynthSpec {
            n_subjects: 4,
            m: 6,
            t: 30,
            n_modules: 2,
            ..Default::default()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_synthetic(&spec, d1.path()).unwrap();
        generate_synthetic(&spec, d2.path()).unwrap();
        for i in 0..4 {
            let name = format!("sub_{i:04}.csv");
            let a = std::fs::read(d1.path().join(&name)).unwrap();
            let b = std::fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
        let a = std::fs::read_to_string(d1.path().join("manifest.csv")).unwrap();
        let b = std::fs::read_to_string(d2.path().join("manifest.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn round_trip_preserves_shape_and_labels() {
        let spec = SynthSpec {
            n_subjects: 5,
            m: 8,
            t: 40,
            n_modules: 2,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_synthetic(&spec, dir.path()).unwrap();
        let loaded = load_dataset(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded.manifest.m, manifest.m);
        assert_eq!(loaded.manifest.t, manifest.t);
        assert_eq!(loaded.manifest.n_subjects(), 5);
        assert_eq!(loaded.manifest.labels(), manifest.labels());
    }

    #[test]
    fn overly_strong_correlations_fail_positive_definiteness() {
        // planted block of 0.99 between two strongly coupled modules breaks PD
        let spec = SynthSpec {
            m: 8,
            n_modules: 2,
            rho_intra: [0.95, 0.95],
            rho_cross: [0.0, 0.99],
            noise: 0.0,
            n_subjects: 2,
            t: 10,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let err = generate_synthetic(&spec, dir.path()).unwrap_err();
        assert!(err.to_string().contains("positive-definite"), "{err}");
    }

    #[test]
    fn within_module_pcc_matches_target() {
        // Monte-Carlo: empirical within-module correlation near 0.6
        let spec = SynthSpec {
            n_subjects: 20,
            m: 16,
            t: 200,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(&spec, dir.path()).unwrap();
        let loaded = load_dataset(&dir.path().join("manifest.csv")).unwrap();
        let modules = spec.module_of();
        let mut sum = 0.0;
        let mut count = 0usize;
        for subject in &loaded.subjects {
            let fc = static_fc(&subject.data).unwrap();
            for i in 0..spec.m {
                for j in (i + 1)..spec.m {
                    if modules[i] == modules[j] {
                        sum += fc.data().at(i, j);
                        count += 1;
                    }
                }
            }
        }
        let mean = sum / count as f64;
        assert!((mean - 0.6).abs() < 0.1, "mean within-module PCC {mean}");
    }

    #[test]
    fn planted_edges_bridge_first_two_modules() {
        let spec = SynthSpec::default();
        let planted = spec.planted_edges();
        assert_eq!(planted.len(), 16); // 4 x 4 block
        let modules = spec.module_of();
        for (u, w) in planted {
            assert_eq!(modules[u], 0);
            assert_eq!(modules[w], 1);
        }
    }

    #[test]
    fn identical_class_parameters_are_statistically_indistinguishable() {
        // per-edge two-sample t-tests between the classes should reject at
        // most alpha * E edges when the class covariances coincide
        let spec = SynthSpec {
            n_subjects: 60,
            m: 16,
            t: 200,
            n_modules: 4,
            rho_intra: [0.6, 0.6],
            rho_cross: [0.3, 0.3],
            noise: 0.1,
            seed: 19,
        };
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(&spec, dir.path()).unwrap();
        let loaded = load_dataset(&dir.path().join("manifest.csv")).unwrap();
        let mut groups: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
        for subject in &loaded.subjects {
            let fc = static_fc(&subject.data).unwrap();
            let mut edges = Vec::new();
            for i in 0..spec.m {
                for j in (i + 1)..spec.m {
                    edges.push(fc.data().at(i, j));
                }
            }
            groups[subject.label as usize].push(edges);
        }
        let e = spec.m * (spec.m - 1) / 2;
        let alpha = 0.05;
        let mut rejected = 0;
        for k in 0..e {
            let a: Vec<f64> = groups[0].iter().map(|edges| edges[k]).collect();
            let b: Vec<f64> = groups[1].iter().map(|edges| edges[k]).collect();
            let (_, p, _) = crate::analysis::two_sample_t(&a, &b).unwrap();
            if p < alpha {
                rejected += 1;
            }
        }
        assert!(
            rejected as f64 <= alpha * e as f64,
            "{rejected} of {e} edges rejected at alpha {alpha}"
        );
    }

    #[test]
    fn spec_parser_rejects_unknown_keys_and_bad_ranges() {
        assert!(matches!(
            SynthSpec::parse("bogus=1").unwrap_err(),
            ConfigError::UnknownKey(_)
        ));
        assert!(SynthSpec::parse("rho_intra_case=1.0").is_err());
        let spec = SynthSpec::parse("n_subjects=12\nrho_cross_case=0.4").unwrap();
        assert_eq!(spec.n_subjects, 12);
        assert_eq!(spec.rho_cross[1], 0.4);
    }
}
