use crate::nn::{
    argmax_rows, softmax_cross_entropy, LayerSpec, NnError, OptimizerConfig, ParameterStore,
    Result, Sequential, Sgd, Tensor,
};

use super::{Activation, SplitArchitecture, SplitModel, BIAS, W_GUEST, W_HOST};

/// Single-process model with the interactive layer realized as one dense
/// layer over `[e_host ; e_guest]`.
///
/// The fusion weight is `[W_host | W_guest]` (shape
/// `[interactive_dim × 2·embed_dim]`) with the interactive bias, so parameters
/// map one-to-one onto a [`SplitModel`].
#[derive(Debug, Clone)]
pub struct LocalReferenceModel {
    pub arch: SplitArchitecture,
    pub fusion_arch: Sequential,
    pub image_bottom: ParameterStore,
    pub tabular_bottom: ParameterStore,
    pub fusion: ParameterStore,
    pub top: ParameterStore,
    opts: [Sgd; 4],
}

fn fusion_arch(arch: &SplitArchitecture) -> Result<Sequential> {
    let e = arch.interactive.embed_dim;
    let mut layers = vec![LayerSpec::Dense {
        in_dim: 2 * e,
        out_dim: arch.interactive.out_dim,
    }];
    if arch.interactive.activation == Activation::Relu {
        layers.push(LayerSpec::Relu);
    }
    Sequential::new(&[2 * e], layers)
}

fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() {
        return Err(NnError::ShapeMismatch {
            context: "embedding batch sizes differ".into(),
            expected: vec![a.rows(), b.row_len()],
            actual: b.shape().to_vec(),
        });
    }
    let (wa, wb) = (a.row_len(), b.row_len());
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..a.rows() {
        data.extend_from_slice(a.row(n));
        data.extend_from_slice(b.row(n));
    }
    Tensor::new(vec![a.rows(), wa + wb], data)
}

fn split_rows(t: &Tensor, left: usize) -> Result<(Tensor, Tensor)> {
    let right = t.row_len() - left;
    let mut l = Vec::with_capacity(t.rows() * left);
    let mut r = Vec::with_capacity(t.rows() * right);
    for n in 0..t.rows() {
        let row = t.row(n);
        l.extend_from_slice(&row[..left]);
        r.extend_from_slice(&row[left..]);
    }
    Ok((Tensor::new(vec![t.rows(), left], l)?, Tensor::new(vec![t.rows(), right], r)?))
}

impl LocalReferenceModel {
    pub fn from_split(model: &SplitModel, opt: OptimizerConfig) -> Result<Self> {
        let arch = model.arch.clone();
        let fusion_arch = fusion_arch(&arch)?;
        let (e, out) = (arch.interactive.embed_dim, arch.interactive.out_dim);
        let get = |name: &str| {
            model
                .interactive
                .get(name)
                .map(|p| p.value.clone())
                .ok_or_else(|| NnError::InvalidConfig(format!("interactive store lacks `{name}`")))
        };
        let (wh, wg, b) = (get(W_HOST)?, get(W_GUEST)?, get(BIAS)?);
        let mut w = Vec::with_capacity(out * 2 * e);
        for o in 0..out {
            w.extend_from_slice(&wh.data()[o * e..(o + 1) * e]);
            w.extend_from_slice(&wg.data()[o * e..(o + 1) * e]);
        }
        let mut fusion = ParameterStore::new();
        fusion.push("0.weight", Tensor::new(vec![out, 2 * e], w)?)?;
        fusion.push("0.bias", b)?;
        Ok(Self {
            arch,
            fusion_arch,
            image_bottom: model.image_bottom.clone(),
            tabular_bottom: model.tabular_bottom.clone(),
            fusion,
            top: model.top.clone(),
            opts: [Sgd::new(opt)?, Sgd::new(opt)?, Sgd::new(opt)?, Sgd::new(opt)?],
        })
    }

    /// Inverse of [`LocalReferenceModel::from_split`]; bit-exact.
    pub fn to_split(&self) -> Result<SplitModel> {
        let (e, out) = (self.arch.interactive.embed_dim, self.arch.interactive.out_dim);
        let w = self.fusion.params()[0].value.data();
        let mut wh = Vec::with_capacity(out * e);
        let mut wg = Vec::with_capacity(out * e);
        for o in 0..out {
            wh.extend_from_slice(&w[o * 2 * e..o * 2 * e + e]);
            wg.extend_from_slice(&w[o * 2 * e + e..(o + 1) * 2 * e]);
        }
        let mut interactive = ParameterStore::new();
        interactive.push(W_HOST, Tensor::new(vec![out, e], wh)?)?;
        interactive.push(W_GUEST, Tensor::new(vec![out, e], wg)?)?;
        interactive.push(BIAS, self.fusion.params()[1].value.clone())?;
        Ok(SplitModel {
            arch: self.arch.clone(),
            image_bottom: self.image_bottom.clone(),
            tabular_bottom: self.tabular_bottom.clone(),
            interactive,
            top: self.top.clone(),
        })
    }

    /// One forward/backward/update over an aligned batch; returns the mean
    /// batch loss measured before the update.
    pub fn step(&mut self, images: &Tensor, tabular: &Tensor, labels: &[usize]) -> Result<f64> {
        let a = &self.arch;
        let (eh, img_cache) = a.image_bottom.forward(&self.image_bottom, images)?;
        let (eg, tab_cache) = a.tabular_bottom.forward(&self.tabular_bottom, tabular)?;
        let fused = concat_rows(&eh, &eg)?;
        let (z, fusion_cache) = self.fusion_arch.forward(&self.fusion, &fused)?;
        let (logits, top_cache) = a.top.forward(&self.top, &z)?;
        let (loss, grad_logits) = softmax_cross_entropy(&logits, labels)?;
        let grad_z = a.top.backward(&mut self.top, &top_cache, &grad_logits)?;
        let grad_fused = self.fusion_arch.backward(&mut self.fusion, &fusion_cache, &grad_z)?;
        let (grad_eh, grad_eg) = split_rows(&grad_fused, a.interactive.embed_dim)?;
        a.tabular_bottom.backward(&mut self.tabular_bottom, &tab_cache, &grad_eg)?;
        a.image_bottom.backward(&mut self.image_bottom, &img_cache, &grad_eh)?;
        self.opts[0].step(&mut self.image_bottom);
        self.opts[1].step(&mut self.tabular_bottom);
        self.opts[2].step(&mut self.fusion);
        self.opts[3].step(&mut self.top);
        Ok(loss)
    }

    pub fn logits(&self, images: &Tensor, tabular: &Tensor) -> Result<Tensor> {
        let a = &self.arch;
        let eh = a.image_bottom.infer(&self.image_bottom, images)?;
        let eg = a.tabular_bottom.infer(&self.tabular_bottom, tabular)?;
        let z = self.fusion_arch.infer(&self.fusion, &concat_rows(&eh, &eg)?)?;
        a.top.infer(&self.top, &z)
    }

    pub fn evaluate(&self, images: &Tensor, tabular: &Tensor, labels: &[usize]) -> Result<(f64, Vec<usize>)> {
        let logits = self.logits(images, tabular)?;
        let (loss, _) = softmax_cross_entropy(&logits, labels)?;
        Ok((loss, argmax_rows(&logits)))
    }

    pub fn predict(&self, images: &Tensor, tabular: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(images, tabular)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SplitModelConfig;

    fn small_cfg() -> SplitModelConfig {
        SplitModelConfig {
            image_shape: [1, 8, 8],
            image_width: 2,
            ..SplitModelConfig::default()
        }
    }

    #[test]
    fn split_local_split_round_trip_is_bit_exact() {
        let m = SplitModel::build(&small_cfg(), 3).unwrap();
        let local = LocalReferenceModel::from_split(&m, OptimizerConfig::sgd(0.1, 0.0)).unwrap();
        assert_eq!(local.to_split().unwrap(), m);
        assert_eq!(local.fusion.params()[0].value.shape(), &[10, 20]);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let m = SplitModel::build(&small_cfg(), 4).unwrap();
        let mut local = LocalReferenceModel::from_split(&m, OptimizerConfig::sgd(0.0, 0.9)).unwrap();
        let images = Tensor::full(&[2, 1, 8, 8], 0.5);
        let tab = Tensor::full(&[2, 12], 0.25);
        let loss = local.step(&images, &tab, &[0, 2]).unwrap();
        assert!(loss.is_finite());
        assert_eq!(local.to_split().unwrap(), m);
    }
}
