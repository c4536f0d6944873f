use proptest::prelude::*;
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vfl_core::nn::{self, grad_check, grad_check_input, LayerSpec, Sequential, Tensor};

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let dist = Uniform::new(-1.0f32, 1.0);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).unwrap()
}

/// Values spaced 0.05 apart in random order, so no pooling window holds two
/// entries closer than the finite-difference step and none sits on the ReLU kink.
fn distinct_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| -1.025 + 0.05 * i as f32).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Straightforward zero-padded convolution in f64, written without any of the
/// range arithmetic the kernel uses.
fn direct_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Vec<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let o = w.shape()[0];
    let oh = (h + 2 - 3) / stride + 1;
    let ow = (wd + 2 - 3) / stride + 1;
    let at = |ni: usize, ci: usize, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
            0.0
        } else {
            x.data()[((ni * c + ci) * h + y as usize) * wd + xx as usize] as f64
        }
    };
    let mut out = Vec::new();
    for ni in 0..n {
        for oi in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[oi] as f64;
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let wv = w.data()[((oi * c + ci) * 3 + ky) * 3 + kx] as f64;
                                let iy = (oy * stride + ky) as isize - 1;
                                let ix = (ox * stride + kx) as isize - 1;
                                acc += wv * at(ni, ci, iy, ix);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn conv_case(batch: usize, cin: usize, cout: usize, h: usize, w: usize, stride: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = LayerSpec::Conv2d {
        in_channels: cin,
        out_channels: cout,
        stride,
    };
    let model = Sequential::new(&[cin, h, w], vec![spec]).unwrap();
    let mut params = model.init_params(seed);
    // non-zero bias so the oracle also covers it
    let bias = random_tensor(&[cout], &mut rng);
    params.params_mut()[1].value = bias;
    let x = random_tensor(&[batch, cin, h, w], &mut rng);
    let y = model.infer(&params, &x).unwrap();
    let want = direct_conv(&x, &params.params()[0].value, &params.params()[1].value, stride);
    assert_eq!(y.len(), want.len());
    y.data()
        .iter()
        .zip(&want)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max)
}

#[test]
fn conv_matches_direct_summation_on_8x8() {
    let err = conv_case(1, 1, 1, 8, 8, 1, 3);
    assert!(err < 1e-6, "max abs error {err}");
}

#[test]
fn conv_matches_direct_summation_across_shapes() {
    let mut seed = 100;
    for &(c, o, h, w) in &[(1, 2, 5, 7), (3, 4, 16, 16), (2, 3, 9, 4), (1, 1, 1, 1), (2, 2, 2, 3)] {
        for stride in [1, 2] {
            seed += 1;
            let err = conv_case(2, c, o, h, w, stride, seed);
            assert!(err < 1e-6, "c={c} o={o} {h}x{w} s={stride}: {err}");
        }
    }
}

fn head_for(layer: LayerSpec, input: &[usize]) -> Sequential {
    let out = layer.output_shape(input).unwrap();
    let width: usize = out.iter().product();
    let mut layers = vec![layer];
    if out.len() > 1 {
        layers.push(LayerSpec::Flatten);
    }
    layers.push(LayerSpec::Dense {
        in_dim: width,
        out_dim: 3,
    });
    Sequential::new(input, layers).unwrap()
}

fn check_layer(name: &str, layer: LayerSpec, sample: &[usize], batch: usize, seed: u64, distinct: bool) {
    let model = head_for(layer, sample);
    let params = model.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut shape = vec![batch];
    shape.extend_from_slice(sample);
    assert!(shape.iter().product::<usize>() <= 64);
    let x = if distinct {
        distinct_tensor(&shape, &mut rng)
    } else {
        random_tensor(&shape, &mut rng)
    };
    let labels: Vec<usize> = (0..batch).map(|i| i % 3).collect();
    let p_err = grad_check(&model, &params, &x, &labels).unwrap();
    let i_err = grad_check_input(&model, &params, &x, &labels).unwrap();
    assert!(p_err < 1e-2, "{name}: parameter gradient relative error {p_err}");
    assert!(i_err < 1e-2, "{name}: input gradient relative error {i_err}");
}

#[test]
fn every_layer_kind_passes_finite_differences() {
    check_layer("dense", LayerSpec::Dense { in_dim: 6, out_dim: 5 }, &[6], 4, 1, false);
    check_layer(
        "conv2d s1",
        LayerSpec::Conv2d {
            in_channels: 2,
            out_channels: 2,
            stride: 1,
        },
        &[2, 4, 4],
        2,
        2,
        false,
    );
    check_layer(
        "conv2d s2",
        LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 3,
            stride: 2,
        },
        &[1, 5, 6],
        2,
        3,
        false,
    );
    check_layer("relu", LayerSpec::Relu, &[8], 4, 4, true);
    check_layer("maxpool2d", LayerSpec::MaxPool2d, &[2, 4, 4], 2, 5, true);
    check_layer("global_avg_pool", LayerSpec::GlobalAvgPool, &[3, 4, 4], 1, 6, false);
    check_layer(
        "residual_block",
        LayerSpec::ResidualBlock {
            channels: 2,
            downsample: false,
        },
        &[2, 4, 4],
        2,
        7,
        false,
    );
    check_layer(
        "residual_block downsample",
        LayerSpec::ResidualBlock {
            channels: 2,
            downsample: true,
        },
        &[2, 4, 4],
        2,
        8,
        false,
    );
    check_layer("flatten", LayerSpec::Flatten, &[2, 3, 2], 3, 9, false);
}

#[test]
fn tabular_bottom_with_loss_head_passes() {
    let model = Sequential::new(
        &[12],
        vec![
            LayerSpec::Dense { in_dim: 12, out_dim: 20 },
            LayerSpec::Relu,
            LayerSpec::Dense { in_dim: 20, out_dim: 10 },
            LayerSpec::Dense { in_dim: 10, out_dim: 3 },
        ],
    )
    .unwrap();
    let params = model.init_params(11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(&[4, 12], &mut rng);
    let err = grad_check(&model, &params, &x, &[0, 1, 2, 1]).unwrap();
    assert!(err < 1e-2, "{err}");
}

#[test]
fn single_dense_layer_is_tighter() {
    let model = Sequential::new(&[5], vec![LayerSpec::Dense { in_dim: 5, out_dim: 3 }]).unwrap();
    let params = model.init_params(13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random_tensor(&[3, 5], &mut rng);
    let err = grad_check(&model, &params, &x, &[2, 0, 1]).unwrap();
    assert!(err < 1e-3, "{err}");
}

#[test]
fn parameterless_model_checks_vacuously() {
    let model = Sequential::new(&[3], vec![LayerSpec::Relu]).unwrap();
    let params = model.init_params(0);
    let x = Tensor::new(vec![2, 3], vec![0.5, -0.2, 0.1, 0.3, 0.9, -1.0]).unwrap();
    assert_eq!(grad_check(&model, &params, &x, &[0, 1]).unwrap(), 0.0);
}

#[test]
fn non_finite_input_is_an_error() {
    let model = Sequential::new(&[2], vec![LayerSpec::Dense { in_dim: 2, out_dim: 2 }]).unwrap();
    let params = model.init_params(0);
    let x = Tensor::new(vec![1, 2], vec![f32::NAN, 1.0]).unwrap();
    assert!(matches!(grad_check(&model, &params, &x, &[0]), Err(nn::NnError::NonFinite(_))));
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let logits = random_tensor(&[4, 3], &mut rng);
    let labels = [0, 2, 1, 1];
    let (_, grad) = nn::softmax_cross_entropy(&logits, &labels).unwrap();
    for i in 0..logits.len() {
        let mut up = logits.clone();
        let mut down = logits.clone();
        up.data_mut()[i] += 1e-3;
        down.data_mut()[i] -= 1e-3;
        let lu = nn::softmax_cross_entropy(&up, &labels).unwrap().0;
        let ld = nn::softmax_cross_entropy(&down, &labels).unwrap().0;
        let numeric = (lu - ld) / (up.data()[i] as f64 - down.data()[i] as f64);
        let err = nn::relative_error(grad.data()[i] as f64, numeric);
        assert!(err < 1e-2, "logit {i}: {err}");
    }
}

#[test]
fn forward_and_backward_are_bit_reproducible() {
    let model = Sequential::new(
        &[1, 8, 8],
        vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 4,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::ResidualBlock {
                channels: 4,
                downsample: true,
            },
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { in_dim: 4, out_dim: 3 },
        ],
    )
    .unwrap();
    let run = || {
        let mut p = model.init_params(77);
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let x = random_tensor(&[3, 1, 8, 8], &mut rng);
        let (y, c) = model.forward(&p, &x).unwrap();
        let (_, g) = nn::softmax_cross_entropy(&y, &[0, 1, 2]).unwrap();
        let gi = model.backward(&mut p, &c, &g).unwrap();
        (y, gi, p)
    };
    assert_eq!(run(), run());
}

fn layer_strategy() -> impl Strategy<Value = (LayerSpec, Vec<usize>)> {
    (1usize..4, 1usize..4, 2usize..7, 2usize..7, 1usize..3, any::<bool>(), 0usize..7).prop_map(
        |(c, o, h, w, stride, ds, kind)| match kind {
            0 => (LayerSpec::Dense { in_dim: c * h, out_dim: o + 1 }, vec![c * h]),
            1 => (
                LayerSpec::Conv2d {
                    in_channels: c,
                    out_channels: o,
                    stride,
                },
                vec![c, h, w],
            ),
            2 => (LayerSpec::Relu, vec![c, h, w]),
            3 => (LayerSpec::MaxPool2d, vec![c, h, w]),
            4 => (LayerSpec::GlobalAvgPool, vec![c, h, w]),
            5 => (
                LayerSpec::ResidualBlock {
                    channels: c,
                    downsample: ds,
                },
                vec![c, h, w],
            ),
            _ => (LayerSpec::Flatten, vec![c, h, w]),
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn backward_returns_input_shape((layer, sample) in layer_strategy(), batch in 1usize..4, seed in any::<u64>()) {
        let model = Sequential::new(&sample, vec![layer]).unwrap();
        let mut p = model.init_params(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = vec![batch];
        shape.extend_from_slice(&sample);
        let x = random_tensor(&shape, &mut rng);
        let (y, cache) = model.forward(&p, &x).unwrap();
        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(model.output_shape());
        prop_assert_eq!(y.shape(), &out_shape[..]);
        let g = random_tensor(y.shape(), &mut rng);
        let gi = model.backward(&mut p, &cache, &g).unwrap();
        prop_assert_eq!(gi.shape(), x.shape());
        for q in p.iter() {
            prop_assert_eq!(q.grad.shape(), q.value.shape());
        }
    }
}
