use crate::error::{Error, Result};
use crate::rand_noise::Prng;
use crate::tensor::{Gradients, Graph, Real, Tensor, Var};

/// Ordered, named parameter tensors. Networks refer to entries by index.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Indices of a convolution's kernel and bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvIdx {
    pub kernel: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `N(0, gain²/fan_in)` kernel, zero bias.
    Scaled(f64),
    Zeros,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push_conv(
        &mut self,
        prng: &mut Prng,
        name: &str,
        c_out: usize,
        c_in_per_group: usize,
        kh: usize,
        kw: usize,
        init: Init,
    ) -> ConvIdx {
        let shape = [c_out, c_in_per_group, kh, kw];
        let kernel = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Scaled(gain) => {
                let std = gain / ((c_in_per_group * kh * kw) as f64).sqrt();
                prng.gaussian_tensor(shape, 0.0, std)
            }
        };
        ConvIdx {
            kernel: self.push(format!("{name}.weight"), kernel),
            bias: self.push(format!("{name}.bias"), Tensor::zeros([c_out])),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor as a graph leaf; `trainable = false` binds them
    /// as constants so backward allocates no gradient for them.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect()
    }

    /// Gradients for the bound leaves, in parameter order.
    pub fn collect_grads<'a>(&self, grads: &'a Gradients<T>, vars: &[Var]) -> Result<Vec<&'a Tensor<T>>> {
        vars.iter().map(|&v| grads.wrt(v)).collect()
    }

    /// Replaces the values with tensors of identical shapes.
    pub fn load(&mut self, tensors: Vec<Tensor<T>>) -> Result<()> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, got {}",
                self.tensors.len(),
                tensors.len()
            )));
        }
        for ((name, old), new) in self.names.iter().zip(&self.tensors).zip(&tensors) {
            if old.shape() != new.shape() {
                return Err(Error::ShapeMismatch {
                    op: "ParamSet::load",
                    lhs: old.shape().to_vec(),
                    rhs: new.shape().to_vec(),
                })
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")));
            }
        }
        self.tensors = tensors;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Adds `N(0, scale²)` to every value. Test helper for escaping the
    /// zero-initialised output paths.
    pub fn perturb(&mut self, prng: &mut Prng, scale: f64) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v += T::of(scale * prng.normal());
            }
        }
    }

    /// FNV-1a over the raw bytes of every value; equality of hashes is used
    /// to assert that frozen parameters were not touched.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for t in &self.tensors {
            for v in t.data() {
                for b in v.as_f64().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Scalar parameter count of a set.
pub fn count_params<T: Real>(params: &ParamSet<T>) -> usize {
    params.count()
}
