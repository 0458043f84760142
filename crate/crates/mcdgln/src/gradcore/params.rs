use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use super::GradError;

/// Version header written at the start of every checkpoint file.
pub const CHECKPOINT_MAGIC: &[u8] = b"MCDGLN-CKPT-1\n";

#[derive(Debug)]
struct Entry {
    value: Tensor,
    grad: Vec<f64>,
}

/// Named map from parameter identifier to tensor, with per-parameter gradient
/// accumulators. Iteration order is the sorted name order, which keeps
/// optimization and serialization deterministic.
#[derive(Debug)]
pub struct ParamSet {
    entries: BTreeMap<String, Entry>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(k, e)| {
                (
                    k.clone(),
                    Entry {
                        value: e.value.clone(),
                        grad: e.grad.clone(),
                    },
                )
            })
            .collect();
        Self { entries }
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), GradError> {
        if self.entries.contains_key(name) {
            return Err(GradError::DuplicateParam(name.to_string()));
        }
        let grad = vec![0.0; value.numel()];
        self.entries.insert(name.to_string(), Entry { value, grad });
        Ok(())
    }

    pub fn value(&self, name: &str) -> Result<&Tensor, GradError> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| GradError::UnknownParam(name.to_string()))
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<(), GradError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| GradError::UnknownParam(name.to_string()))?;
        if entry.value.shape() != value.shape() {
            return Err(GradError::GradShape {
                name: name.to_string(),
                grad: value.shape().to_vec(),
                param: entry.value.shape().to_vec(),
            });
        }
        entry.value = value;
        Ok(())
    }

    /// Current gradient accumulator for `name`.
    pub fn grad(&self, name: &str) -> Result<&[f64], GradError> {
        self.entries
            .get(name)
            .map(|e| e.grad.as_slice())
            .ok_or_else(|| GradError::UnknownParam(name.to_string()))
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor) -> Result<(), GradError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| GradError::UnknownParam(name.to_string()))?;
        if entry.value.shape() != grad.shape() {
            return Err(GradError::GradShape {
                name: name.to_string(),
                grad: grad.shape().to_vec(),
                param: entry.value.shape().to_vec(),
            });
        }
        for (g, d) in entry.grad.iter_mut().zip(grad.data()) {
            *g += d;
        }
        Ok(())
    }

    /// Zeroes every accumulator; call between optimization steps.
    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad.fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    /// Copy with one entry of one parameter shifted by `delta` (for finite
    /// differences).
    pub fn perturbed(&self, name: &str, index: usize, delta: f64) -> Result<Self, GradError> {
        let mut out = self.clone();
        let entry = out
            .entries
            .get_mut(name)
            .ok_or_else(|| GradError::UnknownParam(name.to_string()))?;
        let mut data = entry.value.data().to_vec();
        data[index] += delta;
        entry.value = Tensor::new(entry.value.shape().to_vec(), data)?;
        Ok(out)
    }

    /// True when both sets hold the same names with the same shapes.
    pub fn same_schema(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(other.entries.iter()).all(
                |((an, ae), (bn, be))| an == bn && ae.value.shape() == be.value.shape(),
            )
    }

    /// Writes ordered (name, shape, row-major values) records behind the
    /// versioned magic header.
    pub fn save(&self, path: &Path) -> Result<(), GradError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (name, entry) in &self.entries {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u64).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(entry.value.shape().len() as u64).to_le_bytes())?;
            for dim in entry.value.shape() {
                w.write_all(&(*dim as u64).to_le_bytes())?;
            }
            for v in entry.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GradError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = vec![0u8; CHECKPOINT_MAGIC.len()];
        r.read_exact(&mut magic)
            .map_err(|_| GradError::Checkpoint("file too short for header".into()))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(GradError::Checkpoint(
                "bad magic header (unsupported version or not a checkpoint)".into(),
            ));
        }
        let count = read_u64(&mut r)? as usize;
        let mut out = Self::new();
        for _ in 0..count {
            let name_len = read_u64(&mut r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| GradError::Checkpoint("parameter name is not UTF-8".into()))?;
            let ndim = read_u64(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            out.insert(&name, Tensor::new(shape, data)?)?;
        }
        Ok(out)
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64, GradError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_name_is_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(1.0).unwrap()).unwrap();
        assert!(matches!(
            p.insert("w", Tensor::scalar(2.0).unwrap()),
            Err(GradError::DuplicateParam(_))
        ));
    }

    #[test]
    fn gradient_shape_is_enforced() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::matrix(2, 2, vec![0.0; 4]).unwrap())
            .unwrap();
        let bad = Tensor::new(vec![4], vec![1.0; 4]).unwrap();
        assert!(matches!(
            p.accumulate_grad("w", &bad),
            Err(GradError::GradShape { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut p = ParamSet::new();
        p.insert("b.bias", Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.25]).unwrap())
            .unwrap();
        p.insert("a.weight", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        p.save(&path).unwrap();
        let q = ParamSet::load(&path).unwrap();
        assert!(p.same_schema(&q));
        assert_eq!(p.value("a.weight").unwrap(), q.value("a.weight").unwrap());
        assert_eq!(p.value("b.bias").unwrap(), q.value("b.bias").unwrap());
    }

    #[test]
    fn checkpoint_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOT-A-CHECKPOINT").unwrap();
        assert!(matches!(
            ParamSet::load(&path),
            Err(GradError::Checkpoint(_))
        ));
    }

    #[test]
    fn zero_grads_resets_accumulators() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(vec![2], vec![1.0, 1.0]).unwrap())
            .unwrap();
        p.accumulate_grad("w", &Tensor::new(vec![2], vec![0.5, -0.5]).unwrap())
            .unwrap();
        assert_eq!(p.grad("w").unwrap(), &[0.5, -0.5]);
        p.zero_grads();
        assert_eq!(p.grad("w").unwrap(), &[0.0, 0.0]);
    }
}
