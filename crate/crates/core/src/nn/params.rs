use sha2::{Digest, Sha256};

use super::element::Element;
use super::error::{NnError, Result};
use super::tensor::Tensor;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Element = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Element> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Ordered, name-unique collection of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T: Element = f32> {
    params: Vec<Param<T>>,
}

impl<T: Element> Default for ParameterStore<T> {
    fn default() -> Self {
        Self { params: Vec::new() }
    }
}

impl<T: Element> ParameterStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(NnError::DuplicateParam(name));
        }
        self.params.push(Param::new(name, value));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::ZERO);
        }
    }

    pub fn cast<U: Element>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }
}

impl ParameterStore<f32> {
    /// All parameter values concatenated in store order.
    pub fn flat_values(&self) -> Vec<f32> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f32> {
        self.params
            .iter()
            .flat_map(|p| p.grad.data().iter().copied())
            .collect()
    }

    /// SHA-256 over names, shapes and big-endian value bits.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update((p.name.len() as u32).to_be_bytes());
            h.update(p.name.as_bytes());
            h.update((p.value.shape().len() as u32).to_be_bytes());
            for &d in p.value.shape() {
                h.update((d as u32).to_be_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_bits().to_be_bytes());
            }
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParameterStore::new();
        s.push("w", Tensor::<f32>::zeros(&[2])).unwrap();
        assert_eq!(
            s.push("w", Tensor::zeros(&[3])),
            Err(NnError::DuplicateParam("w".into()))
        );
    }

    #[test]
    fn grad_shape_follows_value() {
        let mut s = ParameterStore::<f32>::new();
        s.push("w", Tensor::zeros(&[4, 3])).unwrap();
        assert_eq!(s.get("w").unwrap().grad.shape(), &[4, 3]);
        assert_eq!(s.scalar_count(), 12);
    }
}
