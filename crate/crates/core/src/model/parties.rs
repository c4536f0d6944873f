use crate::nn::{
    argmax_rows, softmax_cross_entropy, OptimizerConfig, ParameterStore, Result, Sequential,
    SequentialCache, Sgd, Tensor,
};

use super::{InteractiveLayer, SplitArchitecture, SplitModel};

/// The image bottom model and its optimizer state, as held by the host.
#[derive(Debug, Clone)]
pub struct HostModel {
    pub arch: Sequential,
    pub params: ParameterStore,
    opt: Sgd,
}

impl HostModel {
    pub fn new(arch: Sequential, params: ParameterStore, opt: OptimizerConfig) -> Result<Self> {
        Ok(Self {
            arch,
            params,
            opt: Sgd::new(opt)?,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.arch.output_shape()[0]
    }

    /// Training-mode forward; keep the cache for [`HostModel::apply_gradient`].
    pub fn embed_for_training(&self, images: &Tensor) -> Result<(Tensor, SequentialCache)> {
        self.arch.forward(&self.params, images)
    }

    pub fn embed(&self, images: &Tensor) -> Result<Tensor> {
        self.arch.infer(&self.params, images)
    }

    /// Backpropagates `∂L/∂e_host` through the bottom model and takes one
    /// optimizer step.
    pub fn apply_gradient(&mut self, cache: &SequentialCache, grad: &Tensor) -> Result<()> {
        self.arch.backward(&mut self.params, cache, grad)?;
        self.opt.step(&mut self.params);
        Ok(())
    }
}

/// Outcome of one guest training batch.
#[derive(Debug, Clone)]
pub struct GuestStep {
    pub loss: f64,
    pub grad_e_host: Tensor,
}

/// Tabular bottom, interactive layer and top model with their optimizer
/// state, as held by the label-owning guest.
#[derive(Debug, Clone)]
pub struct GuestModel {
    pub tabular_arch: Sequential,
    pub interactive_layer: InteractiveLayer,
    pub top_arch: Sequential,
    pub tabular: ParameterStore,
    pub interactive: ParameterStore,
    pub top: ParameterStore,
    opts: [Sgd; 3],
}

impl GuestModel {
    pub fn new(
        arch: &SplitArchitecture,
        tabular: ParameterStore,
        interactive: ParameterStore,
        top: ParameterStore,
        opt: OptimizerConfig,
    ) -> Result<Self> {
        Ok(Self {
            tabular_arch: arch.tabular_bottom.clone(),
            interactive_layer: arch.interactive,
            top_arch: arch.top.clone(),
            tabular,
            interactive,
            top,
            opts: [Sgd::new(opt)?, Sgd::new(opt)?, Sgd::new(opt)?],
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.interactive_layer.embed_dim
    }

    /// Forward, loss, backward and update for one batch. The returned
    /// gradient is computed before any parameter changes.
    pub fn train_batch(&mut self, e_host: &Tensor, tabular: &Tensor, labels: &[usize]) -> Result<GuestStep> {
        let (e_guest, tab_cache) = self.tabular_arch.forward(&self.tabular, tabular)?;
        let (z, int_cache) = self.interactive_layer.forward(&self.interactive, e_host, &e_guest)?;
        let (logits, top_cache) = self.top_arch.forward(&self.top, &z)?;
        let (loss, grad_logits) = softmax_cross_entropy(&logits, labels)?;
        let grad_z = self.top_arch.backward(&mut self.top, &top_cache, &grad_logits)?;
        let (grad_e_host, grad_e_guest) =
            self.interactive_layer
                .backward(&mut self.interactive, &int_cache, &grad_z)?;
        self.tabular_arch
            .backward(&mut self.tabular, &tab_cache, &grad_e_guest)?;
        self.opts[0].step(&mut self.tabular);
        self.opts[1].step(&mut self.interactive);
        self.opts[2].step(&mut self.top);
        Ok(GuestStep { loss, grad_e_host })
    }

    pub fn logits(&self, e_host: &Tensor, tabular: &Tensor) -> Result<Tensor> {
        let e_guest = self.tabular_arch.infer(&self.tabular, tabular)?;
        let (z, _) = self.interactive_layer.forward(&self.interactive, e_host, &e_guest)?;
        self.top_arch.infer(&self.top, &z)
    }

    /// Mean loss and argmax predictions without touching parameters.
    pub fn evaluate(&self, e_host: &Tensor, tabular: &Tensor, labels: &[usize]) -> Result<(f64, Vec<usize>)> {
        let logits = self.logits(e_host, tabular)?;
        let (loss, _) = softmax_cross_entropy(&logits, labels)?;
        Ok((loss, argmax_rows(&logits)))
    }
}

impl SplitModel {
    /// Hands each party its share of the parameters.
    pub fn into_parties(self, opt: OptimizerConfig) -> Result<(HostModel, GuestModel)> {
        let host = HostModel::new(self.arch.image_bottom.clone(), self.image_bottom, opt)?;
        let guest = GuestModel::new(&self.arch, self.tabular_bottom, self.interactive, self.top, opt)?;
        Ok((host, guest))
    }

    pub fn from_parties(arch: SplitArchitecture, host: &HostModel, guest: &GuestModel) -> Self {
        Self {
            arch,
            image_bottom: host.params.clone(),
            tabular_bottom: guest.tabular.clone(),
            interactive: guest.interactive.clone(),
            top: guest.top.clone(),
        }
    }
}
