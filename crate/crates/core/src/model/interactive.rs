use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Element, NnError, ParameterStore, Result, Tensor};

pub const W_HOST: &str = "w_host";
pub const W_GUEST: &str = "w_guest";
pub const BIAS: &str = "bias";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
}

/// Fusion layer `z = g(e_host·W_hostᵀ + e_guest·W_guestᵀ + b)`.
///
/// Parameters live in a store holding `w_host [out × embed]`,
/// `w_guest [out × embed]` and `bias [out]`, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractiveLayer {
    pub embed_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct InteractiveCache<T: Element = f32> {
    layer: InteractiveLayer,
    e_host: Tensor<T>,
    e_guest: Tensor<T>,
    pre_activation: Tensor<T>,
}

impl InteractiveLayer {
    /// Glorot-uniform over the fused fan-in `2·embed_dim`, zero bias.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> ParameterStore {
        let bound = (6.0 / (2 * self.embed_dim + self.out_dim) as f64).sqrt() as f32;
        let dist = Uniform::new(-bound, bound);
        let n = self.out_dim * self.embed_dim;
        let mut store = ParameterStore::new();
        for name in [W_HOST, W_GUEST] {
            let data = (0..n).map(|_| dist.sample(rng)).collect();
            store
                .push(name, Tensor::new(vec![self.out_dim, self.embed_dim], data).expect("sized"))
                .expect("distinct names");
        }
        store.push(BIAS, Tensor::zeros(&[self.out_dim])).expect("distinct names");
        store
    }

    fn check_store<T: Element>(&self, p: &ParameterStore<T>) -> Result<()> {
        let want = [
            (W_HOST, vec![self.out_dim, self.embed_dim]),
            (W_GUEST, vec![self.out_dim, self.embed_dim]),
            (BIAS, vec![self.out_dim]),
        ];
        if p.len() != want.len() {
            return Err(NnError::InvalidConfig(format!(
                "interactive layer expects 3 parameter tensors, got {}",
                p.len()
            )));
        }
        for (param, (name, shape)) in p.iter().zip(want) {
            if param.name != name {
                return Err(NnError::InvalidConfig(format!(
                    "interactive parameter `{}` found where `{name}` expected",
                    param.name
                )));
            }
            param.value.expect_shape(&shape, &format!("interactive {name}"))?;
        }
        Ok(())
    }

    fn check_embedding<T: Element>(&self, e: &Tensor<T>, batch: usize, what: &str) -> Result<()> {
        e.expect_shape(&[batch, self.embed_dim], what)
    }

    pub fn forward<T: Element>(
        &self,
        p: &ParameterStore<T>,
        e_host: &Tensor<T>,
        e_guest: &Tensor<T>,
    ) -> Result<(Tensor<T>, InteractiveCache<T>)> {
        self.check_store(p)?;
        let batch = e_host.rows();
        self.check_embedding(e_host, batch, "interactive e_host")?;
        if e_guest.rows() != batch {
            return Err(NnError::ShapeMismatch {
                context: "interactive batch sizes differ".into(),
                expected: vec![batch, self.embed_dim],
                actual: e_guest.shape().to_vec(),
            });
        }
        self.check_embedding(e_guest, batch, "interactive e_guest")?;
        let (wh, wg, b) = (p.params()[0].value.data(), p.params()[1].value.data(), p.params()[2].value.data());
        let (k, out) = (self.embed_dim, self.out_dim);
        let mut pre = vec![T::ZERO; batch * out];
        for n in 0..batch {
            let xh = e_host.row(n);
            let xg = e_guest.row(n);
            for o in 0..out {
                // host terms then guest terms: the same accumulation order as a
                // dense layer over the concatenation [e_host ; e_guest]
                let mut acc = b[o];
                for (x, w) in xh.iter().zip(&wh[o * k..(o + 1) * k]) {
                    acc += *x * *w;
                }
                for (x, w) in xg.iter().zip(&wg[o * k..(o + 1) * k]) {
                    acc += *x * *w;
                }
                pre[n * out + o] = acc;
            }
        }
        let pre = Tensor::new(vec![batch, out], pre)?;
        let z = match self.activation {
            Activation::Identity => pre.clone(),
            Activation::Relu => {
                let d = pre.data().iter().map(|&v| if v > T::ZERO { v } else { T::ZERO }).collect();
                Tensor::new(vec![batch, out], d)?
            }
        };
        let cache = InteractiveCache {
            layer: *self,
            e_host: e_host.clone(),
            e_guest: e_guest.clone(),
            pre_activation: pre,
        };
        Ok((z, cache))
    }

    /// Returns `(∂L/∂e_host, ∂L/∂e_guest)` and accumulates weight and bias
    /// gradients into `p`.
    pub fn backward<T: Element>(
        &self,
        p: &mut ParameterStore<T>,
        cache: &InteractiveCache<T>,
        grad_z: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_store(p)?;
        if cache.layer != *self {
            return Err(NnError::StaleCache(format!(
                "interactive cache from {:?}, backward called on {:?}",
                cache.layer, self
            )));
        }
        let batch = cache.e_host.rows();
        grad_z.expect_shape(&[batch, self.out_dim], "interactive grad_z")?;
        let g: Vec<T> = match self.activation {
            Activation::Identity => grad_z.data().to_vec(),
            Activation::Relu => cache
                .pre_activation
                .data()
                .iter()
                .zip(grad_z.data())
                .map(|(&pre, &gv)| if pre > T::ZERO { gv } else { T::ZERO })
                .collect(),
        };
        let (k, out) = (self.embed_dim, self.out_dim);
        let mut gh = vec![T::ZERO; batch * k];
        let mut gg = vec![T::ZERO; batch * k];
        let params = p.params_mut();
        let (wh_p, rest) = params.split_at_mut(1);
        let (wg_p, b_p) = rest.split_at_mut(1);
        let (wh, wg) = (wh_p[0].value.data(), wg_p[0].value.data());
        for n in 0..batch {
            let xh = cache.e_host.row(n);
            let xg = cache.e_guest.row(n);
            for o in 0..out {
                let go = g[n * out + o];
                b_p[0].grad.data_mut()[o] += go;
                let gwh = &mut wh_p[0].grad.data_mut()[o * k..(o + 1) * k];
                for i in 0..k {
                    gwh[i] += go * xh[i];
                    gh[n * k + i] += go * wh[o * k + i];
                }
                let gwg = &mut wg_p[0].grad.data_mut()[o * k..(o + 1) * k];
                for i in 0..k {
                    gwg[i] += go * xg[i];
                    gg[n * k + i] += go * wg[o * k + i];
                }
            }
        }
        Ok((Tensor::new(vec![batch, k], gh)?, Tensor::new(vec![batch, k], gg)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn layer(activation: Activation) -> InteractiveLayer {
        InteractiveLayer {
            embed_dim: 3,
            out_dim: 3,
            activation,
        }
    }

    fn store(wh: Vec<f32>, wg: Vec<f32>, b: Vec<f32>) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.push(W_HOST, Tensor::new(vec![3, 3], wh).unwrap()).unwrap();
        s.push(W_GUEST, Tensor::new(vec![3, 3], wg).unwrap()).unwrap();
        s.push(BIAS, Tensor::new(vec![3], b).unwrap()).unwrap();
        s
    }

    fn eye() -> Vec<f32> {
        vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]
    }

    #[test]
    fn identity_guest_weights_pass_guest_embedding() {
        let p = store(vec![0.7; 9], eye(), vec![0.0; 3]);
        let eh = Tensor::zeros(&[2, 3]);
        let eg = Tensor::new(vec![2, 3], vec![1., 2., 3., -4., 5., 0.5]).unwrap();
        let (z, _) = layer(Activation::Identity).forward(&p, &eh, &eg).unwrap();
        assert_eq!(z.data(), eg.data());
    }

    #[test]
    fn bias_only_case() {
        for (act, c, want) in [(Activation::Identity, -1.5f32, -1.5f32), (Activation::Relu, -1.5, 0.0), (Activation::Relu, 2.0, 2.0)] {
            let p = store(vec![0.3; 9], vec![-0.2; 9], vec![c; 3]);
            let (z, _) = layer(act).forward(&p, &Tensor::zeros(&[4, 3]), &Tensor::zeros(&[4, 3])).unwrap();
            assert!(z.data().iter().all(|&v| v == want));
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_embedding_gradients() {
        let l = layer(Activation::Identity);
        let mut p = l.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let e = Tensor::full(&[2, 3], 0.5);
        let (_, c) = l.forward(&p, &e, &e).unwrap();
        let (gh, gg) = l.backward(&mut p, &c, &Tensor::zeros(&[2, 3])).unwrap();
        assert!(gh.data().iter().chain(gg.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn host_gradient_is_grad_z_times_w_host() {
        let wh: Vec<f32> = (0..9).map(|i| i as f32 * 0.1 - 0.4).collect();
        let l = layer(Activation::Identity);
        let mut p = store(wh.clone(), vec![0.2; 9], vec![0.0; 3]);
        let e = Tensor::full(&[1, 3], 1.0);
        let (_, c) = l.forward(&p, &e, &e).unwrap();
        let gz = Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let (gh, _) = l.backward(&mut p, &c, &gz).unwrap();
        for i in 0..3 {
            let want: f32 = (0..3).map(|o| gz.data()[o] * wh[o * 3 + i]).sum();
            assert!((gh.data()[i] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_mismatch_is_an_error() {
        let l = layer(Activation::Identity);
        let p = l.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        assert!(l.forward(&p, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3, 3])).is_err());
    }

    #[test]
    fn cache_from_other_layer_is_stale() {
        let a = layer(Activation::Identity);
        let b = layer(Activation::Relu);
        let mut p = a.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let (_, c) = a.forward(&p, &Tensor::zeros(&[1, 3]), &Tensor::zeros(&[1, 3])).unwrap();
        assert!(matches!(b.backward(&mut p, &c, &Tensor::zeros(&[1, 3])), Err(NnError::StaleCache(_))));
    }
}
