//! Inference: `Î_T = D(T(I; φ); θ*)` on arbitrary image sizes.

use super::image_io::Image;
use crate::error::{Error, Result};
use crate::nets::{run_denoiser, run_translator, DenoiserParams, TranslatorParams};
use crate::rand_noise::Prng;
use crate::tensor::Tensor;

fn chw(img: &Image, op: &'static str) -> Result<[usize; 3]> {
    match img.shape() {
        [c, h, w] => Ok([*c, *h, *w]),
        s => Err(Error::InvalidShape {
            op,
            shape: s.to_vec(),
            reason: "expected [C,H,W]".into(),
        }),
    }
}

/// Index into `[0, n)` reflected about the borders without repeating the
/// edge sample (`-1 → 1`, `n → n-2`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Pads bottom/right reflectively up to the next multiple.
pub fn reflect_pad(img: &Image, multiple: usize) -> Result<Image> {
    let [c, h, w] = chw(img, "reflect_pad")?;
    let hp = h.div_ceil(multiple) * multiple;
    let wp = w.div_ceil(multiple) * multiple;
    if (hp, wp) == (h, w) {
        return Ok(img.clone());
    }
    Ok(Tensor::from_fn([c, hp, wp], |i| {
        let (ch, y, x) = (i / (hp * wp), (i / wp) % hp, i % wp);
        img.data()[(ch * h + reflect(y as isize, h)) * w + reflect(x as isize, w)]
    }))
}

/// Top-left `h × w` window.
pub fn crop_to(img: &Image, h: usize, w: usize) -> Result<Image> {
    let [c, hp, wp] = chw(img, "crop_to")?;
    if h > hp || w > wp {
        return Err(Error::InvalidShape {
            op: "crop_to",
            shape: img.shape().to_vec(),
            reason: format!("cannot crop to {h}x{w}"),
        });
    }
    Ok(Tensor::from_fn([c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        img.data()[(ch * hp + y) * wp + x]
    }))
}

fn as_batch(img: &Image) -> Image {
    let mut s = vec![1];
    s.extend_from_slice(img.shape());
    img.clone().reshape(s).expect("same length")
}

fn from_batch(img: Image) -> Image {
    let s = img.shape()[1..].to_vec();
    img.reshape(s).expect("same length")
}

/// Denoiser alone on an arbitrary-size image, clamped to `[0, 1]`.
pub fn denoise_only(img: &Image, denoiser: &DenoiserParams<f32>) -> Result<Image> {
    let [c, h, w] = chw(img, "denoise_only")?;
    if c != denoiser.config.channels {
        return Err(Error::ShapeMismatch {
            op: "denoise_only (channels)",
            lhs: img.shape().to_vec(),
            rhs: vec![denoiser.config.channels],
        });
    }
    let padded = reflect_pad(img, denoiser.multiple())?;
    let out = from_batch(run_denoiser(denoiser, &as_batch(&padded))?);
    Ok(crop_to(&out, h, w)?.map(|v| v.clamp(0.0, 1.0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    /// `T(I)`, not clamped.
    pub translated: Image,
    /// `D(T(I))`, clamped to `[0, 1]`.
    pub denoised: Image,
    /// Whether the tensor handed to the translator differed from the
    /// (padded) input. Inference never adds Gaussian noise, so this stays
    /// false; the translator's internal injection is unaffected.
    pub input_augmented: bool,
}

pub fn denoise_pipeline(
    img: &Image,
    translator: &TranslatorParams<f32>,
    denoiser: &DenoiserParams<f32>,
    prng: &mut Prng,
) -> Result<PipelineOutput> {
    let [c, h, w] = chw(img, "denoise_pipeline")?;
    for (what, expected) in [("translator", translator.config.channels), ("denoiser", denoiser.config.channels)] {
        if c != expected {
            return Err(Error::invalid(format!(
                "image has {c} channels but the {what} checkpoint expects {expected}"
            )));
        }
    }
    let m = lcm(translator.multiple(), denoiser.multiple());
    let padded = reflect_pad(img, m)?;
    let fed = as_batch(&padded);
    let input_augmented = fed.data() != padded.data();
    let translated = run_translator(translator, &fed, prng)?;
    let denoised = run_denoiser(denoiser, &translated)?;
    Ok(PipelineOutput {
        translated: crop_to(&from_batch(translated), h, w)?,
        denoised: crop_to(&from_batch(denoised), h, w)?.map(|v| v.clamp(0.0, 1.0)),
        input_augmented,
    })
}

fn lcm(a: usize, b: usize) -> usize {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}
