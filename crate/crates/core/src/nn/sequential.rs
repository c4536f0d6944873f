use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::element::Element;
use super::error::{NnError, Result};
use super::layer::{self, LayerCache, LayerSpec};
use super::params::ParameterStore;
use super::tensor::Tensor;

/// A validated chain of layers with a fixed per-sample input shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequential {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// Index of each layer's first parameter tensor in the store.
    offsets: Vec<usize>,
}

/// Per-layer activation records from [`Sequential::forward`].
#[derive(Debug, Clone)]
pub struct SequentialCache<T: Element = f32> {
    layers: Vec<LayerCache<T>>,
}

impl Sequential {
    /// Checks that every layer accepts its predecessor's output.
    pub fn new(input_shape: &[usize], layers: Vec<LayerSpec>) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for (index, spec) in layers.iter().enumerate() {
            shape = spec
                .output_shape(&shape)
                .map_err(|reason| NnError::ChainMismatch {
                    index,
                    kind: spec.kind_name(),
                    input: shape.clone(),
                    reason,
                })?;
            offsets.push(offset);
            offset += spec.param_count();
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            output_shape: shape,
            layers,
            offsets,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Glorot-uniform weights, zero biases. Names are `"{layer}.{param}"`.
    pub fn init_params(&self, seed: u64) -> ParameterStore<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        for (i, spec) in self.layers.iter().enumerate() {
            for ps in spec.param_shapes() {
                let len: usize = ps.shape.iter().product();
                let data = match ps.fans {
                    Some((fan_in, fan_out)) => {
                        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                        let dist = Uniform::new(-bound, bound);
                        (0..len).map(|_| dist.sample(&mut rng)).collect()
                    }
                    None => vec![0.0; len],
                };
                let t = Tensor::new(ps.shape, data).expect("shape/product agree");
                store
                    .push(format!("{i}.{}", ps.name), t)
                    .expect("layer-indexed names are unique");
            }
        }
        store
    }

    fn check_store<T: Element>(&self, store: &ParameterStore<T>) -> Result<()> {
        let expected: usize = self.layers.iter().map(LayerSpec::param_count).sum();
        if store.len() != expected {
            return Err(NnError::InvalidConfig(format!(
                "parameter store has {} tensors, model needs {expected}",
                store.len()
            )));
        }
        Ok(())
    }

    fn check_input<T: Element>(&self, input: &Tensor<T>) -> Result<()> {
        let s = input.shape();
        if s.is_empty() || s[1..] != self.input_shape[..] {
            let mut expected = vec![s.first().copied().unwrap_or(1)];
            expected.extend_from_slice(&self.input_shape);
            return Err(NnError::ShapeMismatch {
                context: "model input".into(),
                expected,
                actual: s.to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward<T: Element>(
        &self,
        store: &ParameterStore<T>,
        input: &Tensor<T>,
    ) -> Result<(Tensor<T>, SequentialCache<T>)> {
        self.check_store(store)?;
        self.check_input(input)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (spec, &off) in self.layers.iter().zip(&self.offsets) {
            let p = &store.params()[off..off + spec.param_count()];
            let (y, c) = layer::forward(spec, p, &x)?;
            caches.push(c);
            x = y;
        }
        Ok((x, SequentialCache { layers: caches }))
    }

    /// Forward pass without keeping activation records.
    pub fn infer<T: Element>(&self, store: &ParameterStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_store(store)?;
        self.check_input(input)?;
        let mut x = input.clone();
        for (spec, &off) in self.layers.iter().zip(&self.offsets) {
            let p = &store.params()[off..off + spec.param_count()];
            x = layer::forward(spec, p, &x)?.0;
        }
        Ok(x)
    }

    pub fn backward<T: Element>(
        &self,
        store: &mut ParameterStore<T>,
        cache: &SequentialCache<T>,
        grad_output: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        self.check_store(store)?;
        if cache.layers.len() != self.layers.len() {
            return Err(NnError::StaleCache(format!(
                "cache holds {} layers, model has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        let mut g = grad_output.clone();
        for ((spec, &off), c) in self.layers.iter().zip(&self.offsets).zip(&cache.layers).rev() {
            let p = &mut store.params_mut()[off..off + spec.param_count()];
            g = layer::backward(spec, p, c, &g)?;
        }
        Ok(g)
    }
}
