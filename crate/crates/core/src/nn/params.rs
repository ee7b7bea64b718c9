use rand::distributions::{Distribution, Uniform};
use sha2::{Digest, Sha256};

use super::arch::ModelArch;
use super::NnError;
use crate::seed;
use crate::tensor::{Scalar, Tensor};

/// Weight and bias of one trainable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Ordered, named parameter tensors of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T = f32> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(arch: &ModelArch) -> Self {
        Self {
            entries: arch
                .param_specs()
                .into_iter()
                .map(|s| ParamEntry {
                    name: s.name,
                    weight: Tensor::zeros(&s.weight_shape),
                    bias: Tensor::zeros(&s.bias_shape),
                })
                .collect(),
        }
    }

    pub fn from_entries(entries: Vec<ParamEntry<T>>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    /// Weight and bias tensors in order, with names `<layer>.weight` / `<layer>.bias`.
    pub fn named_tensors(&self) -> impl Iterator<Item = (String, &Tensor<T>)> {
        self.entries.iter().flat_map(|e| {
            [
                (format!("{}.weight", e.name), &e.weight),
                (format!("{}.bias", e.name), &e.bias),
            ]
        })
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().flat_map(|e| [&e.weight, &e.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().flat_map(|e| [&mut e.weight, &mut e.bias])
    }

    /// All scalar values in canonical order.
    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.tensors().flat_map(|t| t.data().iter().copied())
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Same entry names and tensor shapes, in the same order.
    pub fn same_structure<U: Scalar>(&self, other: &ParamSet<U>) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.weight.shape() == b.weight.shape()
                    && a.bias.shape() == b.bias.shape()
            })
    }

    pub fn matches_arch(&self, arch: &ModelArch) -> bool {
        let specs = arch.param_specs();
        self.entries.len() == specs.len()
            && self.entries.iter().zip(&specs).all(|(e, s)| {
                e.name == s.name && e.weight.shape() == s.weight_shape && e.bias.shape() == s.bias_shape
            })
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    weight: e.weight.cast(),
                    bias: e.bias.cast(),
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }

    /// `self += alpha * other`, elementwise.
    pub fn axpy(&mut self, alpha: T, other: &ParamSet<T>) -> Result<(), NnError> {
        if !self.same_structure(other) {
            return Err(NnError::StructureMismatch);
        }
        for (dst, src) in self.tensors_mut().zip(other.tensors()) {
            for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = *d + alpha * s;
            }
        }
        Ok(())
    }

    /// Serializes to the checkpoint container:
    ///
    /// ```text
    /// u64 LE arch fingerprint, u32 LE entry count, then per tensor:
    /// u32 LE name length, name bytes (UTF-8), u32 LE rank, rank x u32 LE extents,
    /// extents-product x f32 LE values
    /// ```
    pub fn to_bytes(&self, arch: &ModelArch) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.num_params() * 4);
        out.extend_from_slice(&arch.fingerprint().to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32 * 2).to_le_bytes());
        for (name, t) in self.named_tensors() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes); the container must match `arch`.
    pub fn from_bytes(bytes: &[u8], arch: &ModelArch) -> Result<Self, NnError> {
        let mut r = Reader { bytes, at: 0 };
        let fingerprint = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        if fingerprint != arch.fingerprint() {
            return Err(NnError::Format(format!(
                "architecture fingerprint {fingerprint:016x} does not match {:016x}",
                arch.fingerprint()
            )));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| NnError::Format(e.to_string()))?
                .to_owned();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| T::of_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect();
            tensors.push((name, Tensor::from_vec(&shape, data).unwrap()));
        }
        if r.at != bytes.len() {
            return Err(NnError::Format(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        let template = ParamSet::<T>::zeros(arch);
        if tensors.len() != template.entries.len() * 2 {
            return Err(NnError::StructureMismatch);
        }
        let mut it = tensors.into_iter();
        let mut entries = Vec::new();
        for e in template.entries {
            let (wn, weight) = it.next().unwrap();
            let (bn, bias) = it.next().unwrap();
            if wn != format!("{}.weight", e.name)
                || bn != format!("{}.bias", e.name)
                || weight.shape() != e.weight.shape()
                || bias.shape() != e.bias.shape()
            {
                return Err(NnError::StructureMismatch);
            }
            entries.push(ParamEntry {
                name: e.name,
                weight,
                bias,
            });
        }
        Ok(Self { entries })
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.named_tensors() {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NnError::Format("unexpected end of parameter container".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// He-uniform weights in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`, zero biases.
pub fn init_params<T: Scalar>(arch: &ModelArch, seed: u64) -> ParamSet<T> {
    let mut rng = seed::rng(seed, &[seed::INIT]);
    let mut params = ParamSet::zeros(arch);
    for (entry, spec) in params.entries.iter_mut().zip(arch.param_specs()) {
        let bound = (6.0 / spec.fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        for w in entry.weight.data_mut() {
            *w = T::of_f64(dist.sample(&mut rng));
        }
    }
    params
}
