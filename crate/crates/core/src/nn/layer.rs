//! Layer vocabulary and the hand-written forward/backward pass for each kind.
//!
//! All tensors carry the batch on the leading axis. Image tensors are laid out
//! `[batch, channels, height, width]`. Convolutions are fixed at a 3×3 kernel
//! with padding 1; pooling is a 2×2 window with stride 2.

use super::element::Element;
use super::error::{NnError, Result};
use super::params::Param;
use super::tensor::Tensor;

pub const CONV_KERNEL: usize = 3;
pub const CONV_PADDING: usize = 1;
pub const POOL_WINDOW: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// `y = x Wᵀ + b`, weight `[out_dim, in_dim]`.
    Dense { in_dim: usize, out_dim: usize },
    /// 3×3 convolution, padding 1, weight `[out, in, 3, 3]`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    Relu,
    MaxPool2d,
    GlobalAvgPool,
    /// `relu(conv2(relu(conv1(x))) + shortcut(x))` with a fixed channel count.
    ///
    /// With `downsample`, `conv1` has stride 2 and the shortcut takes every
    /// other row and column of the input, so no projection weights are needed.
    ResidualBlock { channels: usize, downsample: bool },
    Flatten,
}

/// Shape and initialization facts about one parameter tensor of a layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShape {
    pub name: &'static str,
    pub shape: Vec<usize>,
    /// `None` for biases, which are zero-initialized.
    pub fans: Option<(usize, usize)>,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Dense { .. } => "dense",
            Self::Conv2d { .. } => "conv2d",
            Self::Relu => "relu",
            Self::MaxPool2d => "maxpool2d",
            Self::GlobalAvgPool => "global_avg_pool",
            Self::ResidualBlock { .. } => "residual_block",
            Self::Flatten => "flatten",
        }
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let k2 = CONV_KERNEL * CONV_KERNEL;
        let conv = |prefix: &'static [&'static str; 2], cin: usize, cout: usize| {
            vec![
                ParamShape {
                    name: prefix[0],
                    shape: vec![cout, cin, CONV_KERNEL, CONV_KERNEL],
                    fans: Some((cin * k2, cout * k2)),
                },
                ParamShape {
                    name: prefix[1],
                    shape: vec![cout],
                    fans: None,
                },
            ]
        };
        match *self {
            Self::Dense { in_dim, out_dim } => vec![
                ParamShape {
                    name: "weight",
                    shape: vec![out_dim, in_dim],
                    fans: Some((in_dim, out_dim)),
                },
                ParamShape {
                    name: "bias",
                    shape: vec![out_dim],
                    fans: None,
                },
            ],
            Self::Conv2d {
                in_channels,
                out_channels,
                ..
            } => conv(&["weight", "bias"], in_channels, out_channels),
            Self::ResidualBlock { channels, .. } => {
                let mut v = conv(&["conv1.weight", "conv1.bias"], channels, channels);
                v.extend(conv(&["conv2.weight", "conv2.bias"], channels, channels));
                v
            }
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Self::Dense { .. } | Self::Conv2d { .. } => 2,
            Self::ResidualBlock { .. } => 4,
            _ => 0,
        }
    }

    /// Per-sample output shape for a per-sample input shape (batch axis excluded).
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            Self::Dense { in_dim, out_dim } => {
                if input != [in_dim] {
                    return Err(format!("expects [{in_dim}] per sample"));
                }
                Ok(vec![out_dim])
            }
            Self::Conv2d {
                in_channels,
                out_channels,
                stride,
            } => {
                if !(stride == 1 || stride == 2) {
                    return Err(format!("stride {stride} not in {{1, 2}}"));
                }
                let (c, h, w) = chw(input)?;
                if c != in_channels {
                    return Err(format!("expects {in_channels} input channels, got {c}"));
                }
                Ok(vec![out_channels, conv_out(h, stride), conv_out(w, stride)])
            }
            Self::Relu => Ok(input.to_vec()),
            Self::MaxPool2d => {
                let (c, h, w) = chw(input)?;
                if h < POOL_WINDOW || w < POOL_WINDOW {
                    return Err(format!("spatial size {h}x{w} smaller than pool window"));
                }
                Ok(vec![c, h / POOL_WINDOW, w / POOL_WINDOW])
            }
            Self::GlobalAvgPool => {
                let (c, _, _) = chw(input)?;
                Ok(vec![c])
            }
            Self::ResidualBlock {
                channels,
                downsample,
            } => {
                let (c, h, w) = chw(input)?;
                if c != channels {
                    return Err(format!("expects {channels} channels, got {c}"));
                }
                let s = if downsample { 2 } else { 1 };
                Ok(vec![c, conv_out(h, s), conv_out(w, s)])
            }
            Self::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

fn chw(input: &[usize]) -> std::result::Result<(usize, usize, usize), String> {
    match *input {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
        _ => Err(format!(
            "expects a non-empty [channels, height, width] sample, got {input:?}"
        )),
    }
}

#[inline]
fn conv_out(len: usize, stride: usize) -> usize {
    (len + 2 * CONV_PADDING - CONV_KERNEL) / stride + 1
}

/// Activation record produced by [`forward`] and consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct LayerCache<T: Element = f32> {
    kind: &'static str,
    spec: LayerSpec,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    state: CacheState<T>,
}

#[derive(Debug, Clone)]
enum CacheState<T: Element> {
    Input(Tensor<T>),
    ArgMax(Vec<usize>),
    Residual(Box<ResidualCache<T>>),
    ShapeOnly,
}

#[derive(Debug, Clone)]
struct ResidualCache<T: Element> {
    conv1: LayerCache<T>,
    hidden: Tensor<T>,
    conv2: LayerCache<T>,
    pre_activation: Tensor<T>,
}

impl<T: Element> LayerCache<T> {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }
}

fn check_params<T: Element>(spec: &LayerSpec, params: &[Param<T>]) -> Result<()> {
    let shapes = spec.param_shapes();
    if shapes.len() != params.len() {
        return Err(NnError::InvalidConfig(format!(
            "{} expects {} parameter tensors, got {}",
            spec.kind_name(),
            shapes.len(),
            params.len()
        )));
    }
    for (s, p) in shapes.iter().zip(params) {
        p.value.expect_shape(&s.shape, &format!("{} parameter {}", spec.kind_name(), s.name))?;
    }
    Ok(())
}

fn expected_input(spec: &LayerSpec, actual: &[usize]) -> Vec<usize> {
    let b = actual.first().copied().unwrap_or(1);
    let dim = |i: usize| actual.get(i).copied().unwrap_or(1).max(1);
    match *spec {
        LayerSpec::Dense { in_dim, .. } => vec![b, in_dim],
        LayerSpec::Conv2d { in_channels, .. } => vec![b, in_channels, dim(2), dim(3)],
        LayerSpec::ResidualBlock { channels, .. } => vec![b, channels, dim(2), dim(3)],
        LayerSpec::MaxPool2d => vec![b, dim(1), dim(2).max(2), dim(3).max(2)],
        LayerSpec::GlobalAvgPool => vec![b, dim(1), dim(2), dim(3)],
        LayerSpec::Relu | LayerSpec::Flatten => actual.to_vec(),
    }
}

/// Runs one layer forward, returning the output and the record needed by
/// [`backward`].
pub fn forward<T: Element>(
    spec: &LayerSpec,
    params: &[Param<T>],
    input: &Tensor<T>,
) -> Result<(Tensor<T>, LayerCache<T>)> {
    check_params(spec, params)?;
    let in_shape = input.shape();
    if in_shape.is_empty() {
        return Err(NnError::ShapeMismatch {
            context: format!("{} forward: input needs a batch axis", spec.kind_name()),
            expected: expected_input(spec, in_shape),
            actual: in_shape.to_vec(),
        });
    }
    let batch = in_shape[0];
    let sample_out = spec
        .output_shape(&in_shape[1..])
        .map_err(|reason| NnError::ShapeMismatch {
            context: format!("{} forward: {reason}", spec.kind_name()),
            expected: expected_input(spec, in_shape),
            actual: in_shape.to_vec(),
        })?;
    let mut out_shape = Vec::with_capacity(sample_out.len() + 1);
    out_shape.push(batch);
    out_shape.extend_from_slice(&sample_out);

    let (data, state) = match *spec {
        LayerSpec::Dense { in_dim, out_dim } => {
            let y = dense_forward(input.data(), batch, in_dim, out_dim, params[0].value.data(), params[1].value.data());
            (y, CacheState::Input(input.clone()))
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            stride,
        } => {
            let dims = ConvDims::new(batch, in_channels, out_channels, in_shape[2], in_shape[3], stride);
            let y = conv2d_forward(&dims, input.data(), params[0].value.data(), params[1].value.data());
            (y, CacheState::Input(input.clone()))
        }
        LayerSpec::Relu => {
            let y = input.data().iter().map(|&v| if v > T::ZERO { v } else { T::ZERO }).collect();
            (y, CacheState::Input(input.clone()))
        }
        LayerSpec::MaxPool2d => {
            let (y, arg) = maxpool_forward(input.data(), batch, in_shape[1], in_shape[2], in_shape[3]);
            (y, CacheState::ArgMax(arg))
        }
        LayerSpec::GlobalAvgPool => {
            let plane = in_shape[2] * in_shape[3];
            let y = input
                .data()
                .chunks_exact(plane)
                .map(|p| p.iter().copied().sum::<T>() / T::from_usize(plane))
                .collect();
            (y, CacheState::ShapeOnly)
        }
        LayerSpec::ResidualBlock {
            channels,
            downsample,
        } => {
            let stride = if downsample { 2 } else { 1 };
            let conv1 = LayerSpec::Conv2d {
                in_channels: channels,
                out_channels: channels,
                stride,
            };
            let conv2 = LayerSpec::Conv2d {
                in_channels: channels,
                out_channels: channels,
                stride: 1,
            };
            let (h1, c1) = forward(&conv1, &params[0..2], input)?;
            let (a1, _) = forward(&LayerSpec::Relu, &[], &h1)?;
            let (h2, c2) = forward(&conv2, &params[2..4], &a1)?;
            let mut pre = h2;
            shortcut_add(input, &mut pre, downsample);
            let y = pre.data().iter().map(|&v| if v > T::ZERO { v } else { T::ZERO }).collect();
            let cache = ResidualCache {
                conv1: c1,
                hidden: h1,
                conv2: c2,
                pre_activation: pre,
            };
            (y, CacheState::Residual(Box::new(cache)))
        }
        LayerSpec::Flatten => (input.data().to_vec(), CacheState::ShapeOnly),
    };
    let output = Tensor::new(out_shape.clone(), data)?;
    let cache = LayerCache {
        kind: spec.kind_name(),
        spec: *spec,
        input_shape: in_shape.to_vec(),
        output_shape: out_shape,
        state,
    };
    Ok((output, cache))
}

/// Backpropagates `grad_output` through one layer, accumulating parameter
/// gradients into `params` and returning the gradient w.r.t. the input.
pub fn backward<T: Element>(
    spec: &LayerSpec,
    params: &mut [Param<T>],
    cache: &LayerCache<T>,
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_params(spec, params)?;
    if cache.kind != spec.kind_name() || cache.spec != *spec {
        return Err(NnError::StaleCache(format!(
            "cache was produced by {:?}, backward called for {:?}",
            cache.spec, spec
        )));
    }
    grad_output.expect_shape(&cache.output_shape, &format!("{} backward grad_output", spec.kind_name()))?;
    let in_shape = &cache.input_shape;
    let batch = in_shape[0];
    let g = grad_output.data();

    let grad_in = match (*spec, &cache.state) {
        (LayerSpec::Dense { in_dim, out_dim }, CacheState::Input(x)) => {
            let (w, rest) = params.split_at_mut(1);
            dense_backward(
                x.data(),
                batch,
                in_dim,
                out_dim,
                w[0].value.data(),
                g,
                w[0].grad.data_mut(),
                rest[0].grad.data_mut(),
            )
        }
        (
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                stride,
            },
            CacheState::Input(x),
        ) => {
            let dims = ConvDims::new(batch, in_channels, out_channels, in_shape[2], in_shape[3], stride);
            let (w, rest) = params.split_at_mut(1);
            conv2d_backward(
                &dims,
                x.data(),
                w[0].value.data(),
                g,
                w[0].grad.data_mut(),
                rest[0].grad.data_mut(),
            )
        }
        (LayerSpec::Relu, CacheState::Input(x)) => x
            .data()
            .iter()
            .zip(g)
            .map(|(&xv, &gv)| if xv > T::ZERO { gv } else { T::ZERO })
            .collect(),
        (LayerSpec::MaxPool2d, CacheState::ArgMax(arg)) => {
            let mut gi = vec![T::ZERO; in_shape.iter().product()];
            for (&src, &gv) in arg.iter().zip(g) {
                gi[src] += gv;
            }
            gi
        }
        (LayerSpec::GlobalAvgPool, CacheState::ShapeOnly) => {
            let plane = in_shape[2] * in_shape[3];
            let scale = T::ONE / T::from_usize(plane);
            g.iter()
                .flat_map(|&gv| std::iter::repeat(gv * scale).take(plane))
                .collect()
        }
        (
            LayerSpec::ResidualBlock {
                channels,
                downsample,
            },
            CacheState::Residual(rc),
        ) => {
            let stride = if downsample { 2 } else { 1 };
            let conv1 = LayerSpec::Conv2d {
                in_channels: channels,
                out_channels: channels,
                stride,
            };
            let conv2 = LayerSpec::Conv2d {
                in_channels: channels,
                out_channels: channels,
                stride: 1,
            };
            let gated: Vec<T> = rc
                .pre_activation
                .data()
                .iter()
                .zip(g)
                .map(|(&p, &gv)| if p > T::ZERO { gv } else { T::ZERO })
                .collect();
            let gated = Tensor::new(cache.output_shape.clone(), gated)?;
            let (p1, p2) = params.split_at_mut(2);
            let grad_a1 = backward(&conv2, p2, &rc.conv2, &gated)?;
            let grad_h1: Vec<T> = rc
                .hidden
                .data()
                .iter()
                .zip(grad_a1.data())
                .map(|(&h, &gv)| if h > T::ZERO { gv } else { T::ZERO })
                .collect();
            let grad_h1 = Tensor::new(rc.hidden.shape().to_vec(), grad_h1)?;
            let mut gi = backward(&conv1, p1, &rc.conv1, &grad_h1)?;
            shortcut_backward(&gated, &mut gi, downsample);
            gi.into_data()
        }
        (LayerSpec::Flatten, CacheState::ShapeOnly) => g.to_vec(),
        _ => {
            return Err(NnError::StaleCache(format!(
                "cache state does not belong to {}",
                spec.kind_name()
            )))
        }
    };
    Tensor::new(in_shape.clone(), grad_in)
}

fn dense_forward<T: Element>(x: &[T], batch: usize, in_dim: usize, out_dim: usize, w: &[T], b: &[T]) -> Vec<T> {
    let mut y = vec![T::ZERO; batch * out_dim];
    for n in 0..batch {
        let xr = &x[n * in_dim..(n + 1) * in_dim];
        for o in 0..out_dim {
            let wr = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = b[o];
            for (xv, wv) in xr.iter().zip(wr) {
                acc += *xv * *wv;
            }
            y[n * out_dim + o] = acc;
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Element>(
    x: &[T],
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    w: &[T],
    g: &[T],
    gw: &mut [T],
    gb: &mut [T],
) -> Vec<T> {
    let mut gx = vec![T::ZERO; batch * in_dim];
    for n in 0..batch {
        let xr = &x[n * in_dim..(n + 1) * in_dim];
        let gr = &g[n * out_dim..(n + 1) * out_dim];
        let gxr = &mut gx[n * in_dim..(n + 1) * in_dim];
        for (o, &go) in gr.iter().enumerate() {
            gb[o] += go;
            let wr = &w[o * in_dim..(o + 1) * in_dim];
            let gwr = &mut gw[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                gwr[i] += go * xr[i];
                gxr[i] += go * wr[i];
            }
        }
    }
    gx
}

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    stride: usize,
}

impl ConvDims {
    fn new(batch: usize, cin: usize, cout: usize, h: usize, w: usize, stride: usize) -> Self {
        Self {
            batch,
            cin,
            cout,
            h,
            w,
            oh: conv_out(h, stride),
            ow: conv_out(w, stride),
            stride,
        }
    }

    /// Output index range `[lo, hi)` whose input coordinate
    /// `o * stride + k - padding` lies within `[0, len)`.
    #[inline]
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - CONV_PADDING as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= len - 1
        let top = len as isize - 1 - off;
        let hi = if top < 0 { 0 } else { top / s + 1 };
        let lo = lo.max(0) as usize;
        let hi = (hi as usize).min(out_len);
        (lo, hi.max(lo))
    }
}

fn conv2d_forward<T: Element>(d: &ConvDims, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let (hw, ohw) = (d.h * d.w, d.oh * d.ow);
    let mut y = vec![T::ZERO; d.batch * d.cout * ohw];
    for n in 0..d.batch {
        for o in 0..d.cout {
            let out = &mut y[(n * d.cout + o) * ohw..(n * d.cout + o + 1) * ohw];
            out.fill(bias[o]);
            for c in 0..d.cin {
                let inp = &x[(n * d.cin + c) * hw..(n * d.cin + c + 1) * hw];
                for ky in 0..CONV_KERNEL {
                    let (oy0, oy1) = d.valid_range(ky, d.h, d.oh);
                    for kx in 0..CONV_KERNEL {
                        let (ox0, ox1) = d.valid_range(kx, d.w, d.ow);
                        let wv = weight[((o * d.cin + c) * CONV_KERNEL + ky) * CONV_KERNEL + kx];
                        for oy in oy0..oy1 {
                            let iy = oy * d.stride + ky - CONV_PADDING;
                            let orow = &mut out[oy * d.ow..(oy + 1) * d.ow];
                            let irow = &inp[iy * d.w..(iy + 1) * d.w];
                            for ox in ox0..ox1 {
                                orow[ox] += wv * irow[ox * d.stride + kx - CONV_PADDING];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

fn conv2d_backward<T: Element>(
    d: &ConvDims,
    x: &[T],
    weight: &[T],
    g: &[T],
    gw: &mut [T],
    gb: &mut [T],
) -> Vec<T> {
    let (hw, ohw) = (d.h * d.w, d.oh * d.ow);
    let mut gx = vec![T::ZERO; x.len()];
    for n in 0..d.batch {
        for o in 0..d.cout {
            let gout = &g[(n * d.cout + o) * ohw..(n * d.cout + o + 1) * ohw];
            gb[o] += gout.iter().copied().sum::<T>();
            for c in 0..d.cin {
                let base = (n * d.cin + c) * hw;
                for ky in 0..CONV_KERNEL {
                    let (oy0, oy1) = d.valid_range(ky, d.h, d.oh);
                    for kx in 0..CONV_KERNEL {
                        let (ox0, ox1) = d.valid_range(kx, d.w, d.ow);
                        let widx = ((o * d.cin + c) * CONV_KERNEL + ky) * CONV_KERNEL + kx;
                        let wv = weight[widx];
                        let mut acc = T::ZERO;
                        for oy in oy0..oy1 {
                            let iy = oy * d.stride + ky - CONV_PADDING;
                            let grow = &gout[oy * d.ow..(oy + 1) * d.ow];
                            let row = base + iy * d.w;
                            for ox in ox0..ox1 {
                                let ix = ox * d.stride + kx - CONV_PADDING;
                                acc += grow[ox] * x[row + ix];
                                gx[row + ix] += wv * grow[ox];
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    gx
}

fn maxpool_forward<T: Element>(x: &[T], batch: usize, c: usize, h: usize, w: usize) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / POOL_WINDOW, w / POOL_WINDOW);
    let mut y = Vec::with_capacity(batch * c * oh * ow);
    let mut arg = Vec::with_capacity(batch * c * oh * ow);
    for plane in 0..batch * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                // scan in row-major order; strict `>` keeps the lowest flat index on ties
                let mut best_idx = base + (oy * POOL_WINDOW) * w + ox * POOL_WINDOW;
                let mut best = x[best_idx];
                for dy in 0..POOL_WINDOW {
                    for dx in 0..POOL_WINDOW {
                        let idx = base + (oy * POOL_WINDOW + dy) * w + ox * POOL_WINDOW + dx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                y.push(best);
                arg.push(best_idx);
            }
        }
    }
    (y, arg)
}

fn shortcut_add<T: Element>(input: &Tensor<T>, out: &mut Tensor<T>, downsample: bool) {
    let s = input.shape();
    let (h, w) = (s[2], s[3]);
    let (oh, ow) = (out.shape()[2], out.shape()[3]);
    let stride = if downsample { 2 } else { 1 };
    let x = input.data();
    let y = out.data_mut();
    for plane in 0..s[0] * s[1] {
        for oy in 0..oh {
            for ox in 0..ow {
                y[plane * oh * ow + oy * ow + ox] += x[plane * h * w + oy * stride * w + ox * stride];
            }
        }
    }
}

fn shortcut_backward<T: Element>(grad_out: &Tensor<T>, grad_in: &mut Tensor<T>, downsample: bool) {
    let s = grad_in.shape().to_vec();
    let (h, w) = (s[2], s[3]);
    let (oh, ow) = (grad_out.shape()[2], grad_out.shape()[3]);
    let stride = if downsample { 2 } else { 1 };
    let g = grad_out.data();
    let gi = grad_in.data_mut();
    for plane in 0..s[0] * s[1] {
        for oy in 0..oh {
            for ox in 0..ow {
                gi[plane * h * w + oy * stride * w + ox * stride] += g[plane * oh * ow + oy * ow + ox];
            }
        }
    }
}
