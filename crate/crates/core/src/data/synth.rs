use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::nn::Tensor;

use super::{DataError, ImageDataset, Result, TabularDataset};

/// Class mean offset in raw (pre-scaling) tabular units.
pub const SYNTH_DELTA: f32 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_per_class: usize,
    pub image_size: usize,
    pub tabular_dim: usize,
    pub classes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_per_class: 20,
            image_size: 32,
            tabular_dim: 12,
            classes: 3,
        }
    }
}

/// Mean of feature `j` for class `c`, before scaling.
///
/// | class | features 0-2 | 3-5 | 6-7 | 8.. |
/// |-------|--------------|-----|-----|-----|
/// | 0     | 0            | 0   | 0   | 0   |
/// | 1     | +δ           | 0   | +δ/2| 0   |
/// | 2     | 0            | +δ  | −δ/2| 0   |
///
/// Classes above 2 get +δ on features `3(c−1) .. 3c` (mod F).
fn class_mean(c: usize, j: usize, f: usize) -> f32 {
    if c == 0 {
        return 0.0;
    }
    let lo = (3 * (c - 1)) % f;
    let mut m = if (0..3).any(|k| (lo + k) % f == j) { SYNTH_DELTA } else { 0.0 };
    if j == 6 || j == 7 {
        m += match c {
            1 => SYNTH_DELTA / 2.0,
            2 => -SYNTH_DELTA / 2.0,
            _ => 0.0,
        };
    }
    m
}

/// Seeded stand-in for a multimodal clinical dataset.
///
/// Sample `i` (id `P{i:04}`) belongs to class `i mod classes`, so every
/// class has exactly `n_per_class` rows and any prefix is near balanced.
/// Tabular rows are unit-variance Gaussians around [`class_mean`], then
/// min-max scaled over the generated pool. Each image is a centred disc of
/// radius `S·(0.18 + 0.07c + U(±0.04))` and intensity
/// `0.45 + 0.1c + U(±0.1)` over a black background, plus `U(0, 0.2)` noise
/// per pixel, quantized to 8 bits so a PGM round trip is exact.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(TabularDataset, ImageDataset)> {
    if cfg.image_size < 16 {
        return Err(DataError::Invalid(format!("image_size must be at least 16, got {}", cfg.image_size)));
    }
    if cfg.classes < 2 || cfg.tabular_dim == 0 {
        return Err(DataError::Invalid("synthetic data needs at least 2 classes and 1 feature".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_per_class * cfg.classes;
    let (f, s) = (cfg.tabular_dim, cfg.image_size);
    let jitter_r = Uniform::new_inclusive(-0.04f32, 0.04);
    let jitter_i = Uniform::new_inclusive(-0.1f32, 0.1);
    let noise = Uniform::new_inclusive(0.0f32, 0.2);
    let centre = (s as f32 - 1.0) / 2.0;

    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut tab = Vec::with_capacity(n * f);
    let mut img = Vec::with_capacity(n * s * s);
    for i in 0..n {
        let c = i % cfg.classes;
        ids.push(format!("P{i:04}"));
        labels.push(c);
        for j in 0..f {
            let z: f32 = StandardNormal.sample(&mut rng);
            tab.push(class_mean(c, j, f) + z);
        }
        let radius = s as f32 * (0.18 + 0.07 * c as f32 + jitter_r.sample(&mut rng));
        let intensity = 0.45 + 0.1 * c as f32 + jitter_i.sample(&mut rng);
        for y in 0..s {
            for x in 0..s {
                let (dy, dx) = (y as f32 - centre, x as f32 - centre);
                let disc = if (dy * dy + dx * dx).sqrt() <= radius { intensity } else { 0.0 };
                let v = (disc + noise.sample(&mut rng)).clamp(0.0, 1.0);
                img.push((v * 255.0).round() / 255.0);
            }
        }
    }
    // scale the pool into [0, 1]
    for j in 0..f {
        let col = (0..n).map(|r| tab[r * f + j]);
        let (lo, hi) = col.fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        for r in 0..n {
            let v = &mut tab[r * f + j];
            *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
        }
    }
    let tabular = TabularDataset {
        ids: ids.clone(),
        features: Tensor::new(vec![n, f], tab)?,
        labels: Some(labels),
        feature_names: (0..f).map(|j| format!("f{j:02}")).collect(),
    };
    let images = ImageDataset {
        ids,
        images: Tensor::new(vec![n, 1, s, s], img)?,
    };
    Ok((tabular, images))
}
