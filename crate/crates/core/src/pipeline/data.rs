//! Training pairs: random crops and phase-specific corruption.

use serde::{Deserialize, Serialize};

use super::config::{NoiseFamily, RealNoiseSpec, TrainConfig};
use super::image_io::Image;
use crate::error::{Error, Result};
use crate::rand_noise::{synth_correlated, synth_signal_dependent, Prng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SyntheticGaussian,
    SyntheticCorrelated,
    SyntheticSignalDependent,
    ExternalPair,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub clean: Image,
    pub noisy: Image,
    pub provenance: Provenance,
}

impl ImagePair {
    pub fn new(clean: Image, noisy: Image, provenance: Provenance) -> Result<Self> {
        if clean.shape() != noisy.shape() {
            return Err(Error::ShapeMismatch {
                op: "ImagePair::new",
                lhs: clean.shape().to_vec(),
                rhs: noisy.shape().to_vec(),
            });
        }
        Ok(ImagePair {
            clean,
            noisy,
            provenance,
        })
    }

    /// Pair loaded from disk; both images are clamped to `[0, 1]`.
    pub fn external(clean: Image, noisy: Image) -> Result<Self> {
        let c = clean.map(|v| v.clamp(0.0, 1.0));
        let n = noisy.map(|v| v.clamp(0.0, 1.0));
        ImagePair::new(c, n, Provenance::ExternalPair)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    DenoiserPretrain,
    TranslatorTrain,
}

/// Random `size × size` crop of a `[C,H,W]` image.
pub fn random_crop(prng: &mut Prng, img: &Image, size: usize) -> Result<Image> {
    let [c, h, w] = match img.shape() {
        [c, h, w] => [*c, *h, *w],
        s => {
            return Err(Error::InvalidShape {
                op: "random_crop",
                shape: s.to_vec(),
                reason: "expected [C,H,W]".into(),
            })
        }
    };
    if size > h || size > w {
        return Err(Error::InvalidShape {
            op: "random_crop",
            shape: img.shape().to_vec(),
            reason: format!("crop {size} exceeds the image"),
        });
    }
    let y0 = prng.below(h - size + 1);
    let x0 = prng.below(w - size + 1);
    let mut data = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in y0..y0 + size {
            let row = (ch * h + y) * w;
            data.extend_from_slice(&img.data()[row + x0..row + x0 + size]);
        }
    }
    Tensor::new([c, size, size], data)
}

fn add_field(img: &Image, values: &[f64]) -> Image {
    Tensor::new(
        img.shape().to_vec(),
        img.data().iter().zip(values).map(|(&x, &n)| (x as f64 + n) as f32).collect(),
    )
    .expect("same extents")
}

fn hwc(img: &Image) -> [usize; 3] {
    let s = img.shape();
    [s[1], s[2], s[0]]
}

/// `img + N(0, (level/255)²)`; level 0 returns the input unchanged.
pub fn add_gaussian(prng: &mut Prng, img: &Image, level: f64) -> Image {
    if level == 0.0 {
        return img.clone();
    }
    let sigma = level / 255.0;
    img.map(|v| (v as f64 + sigma * prng.normal()) as f32)
}

fn correlated(prng: &mut Prng, clean: &Image, spec: &RealNoiseSpec) -> Result<ImagePair> {
    let [lo, hi] = spec.correlated_sigma;
    let sigma = prng.uniform_range(lo, hi) / 255.0;
    let n = synth_correlated(prng, hwc(clean), sigma)?;
    ImagePair::new(clean.clone(), add_field(clean, n.values()), Provenance::SyntheticCorrelated)
}

fn signal_dependent(prng: &mut Prng, clean: &Image, spec: &RealNoiseSpec) -> Result<ImagePair> {
    let n = synth_signal_dependent(prng, clean, spec.signal_a, spec.signal_b)?;
    ImagePair::new(clean.clone(), add_field(clean, n.values()), Provenance::SyntheticSignalDependent)
}

/// Corrupts `clean` with the stand-in "real" noise. Synthetic noisy images
/// are not clipped so the noise statistics stay exact.
pub fn apply_real_noise(prng: &mut Prng, clean: &Image, spec: &RealNoiseSpec) -> Result<ImagePair> {
    match spec.family {
        NoiseFamily::Correlated => correlated(prng, clean, spec),
        NoiseFamily::SignalDependent => signal_dependent(prng, clean, spec),
        NoiseFamily::Mixture => {
            if prng.coin() {
                correlated(prng, clean, spec)
            } else {
                signal_dependent(prng, clean, spec)
            }
        }
    }
}

/// One training batch.
///
/// Pretraining: the first `⌈n/2⌉` items are clean crops plus Gaussian noise
/// at `pretrain_sigma`; the rest are stand-in real pairs with the same
/// Gaussian added on top. Translator training: stand-in real pairs plus a
/// Gaussian whose level is uniform in `augment_range`.
pub fn make_batch(
    prng: &mut Prng,
    config: &TrainConfig,
    corpus: &[Image],
    phase: Phase,
) -> Result<Vec<ImagePair>> {
    if corpus.is_empty() {
        return Err(Error::Empty("make_batch corpus"));
    }
    let n = match phase {
        Phase::DenoiserPretrain => config.pretrain.batch_size,
        Phase::TranslatorTrain => config.translator_train.batch_size,
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let src = &corpus[prng.below(corpus.len())];
        let clean = random_crop(prng, src, config.crop_size)?;
        let pair = match phase {
            Phase::DenoiserPretrain if i < n.div_ceil(2) => {
                let noisy = add_gaussian(prng, &clean, config.pretrain_sigma);
                ImagePair::new(clean, noisy, Provenance::SyntheticGaussian)?
            }
            Phase::DenoiserPretrain => {
                let mut p = apply_real_noise(prng, &clean, &config.pretrain_real_noise)?;
                p.noisy = add_gaussian(prng, &p.noisy, config.pretrain_sigma);
                p
            }
            Phase::TranslatorTrain => {
                let mut p = apply_real_noise(prng, &clean, &config.real_noise)?;
                let [lo, hi] = config.augment_range;
                let level = if lo == hi { lo } else { prng.uniform_range(lo, hi) };
                p.noisy = add_gaussian(prng, &p.noisy, level);
                p
            }
        };
        out.push(pair);
    }
    Ok(out)
}

/// Stacks `(noisy, clean)` into two `[N,C,H,W]` tensors.
pub fn stack_pairs(pairs: &[ImagePair]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let noisy: Vec<Tensor<f32>> = pairs.iter().map(|p| p.noisy.clone()).collect();
    let clean: Vec<Tensor<f32>> = pairs.iter().map(|p| p.clean.clone()).collect();
    Ok((Tensor::stack_batch(&noisy)?, Tensor::stack_batch(&clean)?))
}

/// Fixed held-out set: one stand-in real pair per clean image, cropped to
/// `size` from the top-left corner so it is independent of the crop stream.
pub fn make_test_set(prng: &mut Prng, clean: &[Image], spec: &RealNoiseSpec, size: usize) -> Result<Vec<ImagePair>> {
    clean
        .iter()
        .map(|img| {
            let [c, h, w] = match img.shape() {
                [c, h, w] => [*c, *h, *w],
                s => {
                    return Err(Error::InvalidShape {
                        op: "make_test_set",
                        shape: s.to_vec(),
                        reason: "expected [C,H,W]".into(),
                    })
                }
            };
            let (hh, ww) = (size.min(h), size.min(w));
            let mut data = Vec::with_capacity(c * hh * ww);
            for ch in 0..c {
                for y in 0..hh {
                    let row = (ch * h + y) * w;
                    data.extend_from_slice(&img.data()[row..row + ww]);
                }
            }
            let crop = Tensor::new([c, hh, ww], data)?;
            apply_real_noise(prng, &crop, spec)
        })
        .collect()
}
