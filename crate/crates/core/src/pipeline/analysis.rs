//! Noise statistics before/after translation and the Gaussian-addition ablation.

use serde::{Deserialize, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use super::data::{add_gaussian, ImagePair};
use super::image_io::Image;
use super::infer::{denoise_only, denoise_pipeline};
use super::metrics::{psnr, ssim};
use crate::error::{Error, Result};
use crate::nets::{DenoiserParams, TranslatorParams};
use crate::rand_noise::{NoiseField, Prng};
use crate::spectral::{dft2_channelwise, gaussian_spectrum_scale, magnitude, rayleigh_quantile};
use crate::stats::{histogram, w1_sorted, Histogram, SampleVector};

/// A white-Gaussian field fits if its spatial W₁ is below this fraction of
/// `σ̂` and its spectral W₁ below this fraction of the Rayleigh scale.
pub const FIT_THRESHOLD: f64 = 0.05;
const HIST_BINS: usize = 64;
const SIGNAL_BLOCK: usize = 8;

/// `+∞` is written as the string `"inf"`.
pub fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub mu_hat: f64,
    pub sigma_hat: f64,
    /// Set when the noise is identically constant; distances are then 0 and
    /// histograms are omitted.
    pub no_noise: bool,
    /// Channel-wise W₁ to the `N(μ̂, σ̂²)` quantile reference.
    pub spatial_w1: f64,
    /// W₁ of the non-special DFT magnitudes to the Rayleigh quantile
    /// reference at `freq_scale`.
    pub freq_w1: f64,
    pub freq_scale: f64,
    pub spatial_fit: bool,
    pub freq_fit: bool,
    pub lag1_autocorr_h: f64,
    pub lag1_autocorr_v: f64,
    /// Least-squares slope of block noise variance on block clean mean.
    pub signal_slope: f64,
    pub spatial_histogram: Option<Histogram>,
    pub freq_histogram: Option<Histogram>,
}

impl NoiseReport {
    /// Histograms as CSV, keyed `spatial`/`freq`.
    pub fn histogram_csvs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if let Some(h) = &self.spatial_histogram {
            out.push(("spatial", h.to_csv()));
        }
        if let Some(h) = &self.freq_histogram {
            out.push(("freq", h.to_csv()));
        }
        out
    }
}

/// Deterministic `n`-point quantile sample `μ + σ·Φ⁻¹((i + ½)/n)`.
pub fn gaussian_quantiles(n: usize, mu: f64, sigma: f64) -> Vec<f64> {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n)
        .map(|i| mu + sigma * std.inverse_cdf((i as f64 + 0.5) / n as f64))
        .collect()
}

pub fn rayleigh_quantiles(n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|i| rayleigh_quantile((i as f64 + 0.5) / n as f64, scale)).collect()
}

fn lag1(f: &NoiseField, horizontal: bool) -> f64 {
    let (h, w) = (f.height(), f.width());
    let mu = f.mu_hat();
    let var = f.sigma_hat() * f.sigma_hat();
    if var == 0.0 {
        return 0.0;
    }
    let (mut s, mut n) = (0.0, 0usize);
    for c in 0..f.channels() {
        for y in 0..h - usize::from(!horizontal) {
            for x in 0..w - usize::from(horizontal) {
                let (y2, x2) = if horizontal { (y, x + 1) } else { (y + 1, x) };
                s += (f.at(y, x, c) - mu) * (f.at(y2, x2, c) - mu);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64 / var
    }
}

fn signal_slope(noise: &NoiseField, clean: &Image) -> f64 {
    let (h, w, c) = (noise.height(), noise.width(), noise.channels());
    let b = SIGNAL_BLOCK;
    let mut pts = Vec::new();
    for ch in 0..c {
        for by in 0..h / b {
            for bx in 0..w / b {
                let mut xs = Vec::with_capacity(b * b);
                let mut ns = Vec::with_capacity(b * b);
                for y in by * b..(by + 1) * b {
                    for x in bx * b..(bx + 1) * b {
                        xs.push(clean.data()[(ch * h + y) * w + x] as f64);
                        ns.push(noise.at(y, x, ch));
                    }
                }
                let m = ns.iter().sum::<f64>() / ns.len() as f64;
                let v = ns.iter().map(|n| (n - m) * (n - m)).sum::<f64>() / ns.len() as f64;
                pts.push((xs.iter().sum::<f64>() / xs.len() as f64, v));
            }
        }
    }
    let n = pts.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Statistics of `noisy − clean`.
pub fn analyze_noise(noisy: &Image, clean: &Image) -> Result<NoiseReport> {
    if noisy.shape() != clean.shape() {
        return Err(Error::ShapeMismatch {
            op: "analyze_noise",
            lhs: noisy.shape().to_vec(),
            rhs: clean.shape().to_vec(),
        });
    }
    let [c, h, w] = match clean.shape() {
        [c, h, w] => [*c, *h, *w],
        s => {
            return Err(Error::InvalidShape {
                op: "analyze_noise",
                shape: s.to_vec(),
                reason: "expected [C,H,W]".into(),
            })
        }
    };
    let values: Vec<f64> = noisy
        .data()
        .iter()
        .zip(clean.data())
        .map(|(&a, &b)| a as f64 - b as f64)
        .collect();
    let field = NoiseField::new(h, w, c, values)?;
    let (mu, sigma) = (field.mu_hat(), field.sigma_hat());
    let lag1_autocorr_h = lag1(&field, true);
    let lag1_autocorr_v = lag1(&field, false);
    let slope = signal_slope(&field, clean);
    let freq_scale = gaussian_spectrum_scale(sigma, h, w);
    if sigma == 0.0 {
        return Ok(NoiseReport {
            height: h,
            width: w,
            channels: c,
            mu_hat: mu,
            sigma_hat: 0.0,
            no_noise: true,
            spatial_w1: 0.0,
            freq_w1: 0.0,
            freq_scale,
            spatial_fit: true,
            freq_fit: true,
            lag1_autocorr_h,
            lag1_autocorr_v,
            signal_slope: slope,
            spatial_histogram: None,
            freq_histogram: None,
        });
    }
    let reference = SampleVector::new(gaussian_quantiles(h * w, mu, sigma));
    let samples: Vec<SampleVector> = (0..c).map(|ch| SampleVector::new(field.channel(ch).to_vec())).collect();
    let refs = vec![reference; c];
    let spatial_w1 = w1_sorted(&samples, &refs)?;
    let mags = magnitude(&dft2_channelwise(&field), true).flattened();
    let rayleigh = rayleigh_quantiles(mags.len(), freq_scale);
    let freq_w1 = w1_sorted(&[SampleVector::new(mags.clone())], &[SampleVector::new(rayleigh)])?;
    Ok(NoiseReport {
        height: h,
        width: w,
        channels: c,
        mu_hat: mu,
        sigma_hat: sigma,
        no_noise: false,
        spatial_w1,
        freq_w1,
        freq_scale,
        spatial_fit: spatial_w1 < FIT_THRESHOLD * sigma,
        freq_fit: freq_w1 < FIT_THRESHOLD * freq_scale,
        lag1_autocorr_h,
        lag1_autocorr_v,
        signal_slope: slope,
        spatial_histogram: Some(histogram(field.values(), HIST_BINS, (mu - 4.0 * sigma, mu + 4.0 * sigma))?),
        freq_histogram: Some(histogram(&mags, HIST_BINS, (0.0, 4.0 * freq_scale))?),
    })
}

/// Reports for the input noise and for the translated noise `T(I) − clean`.
pub fn analyze_translation(
    pair: &ImagePair,
    translator: &TranslatorParams<f32>,
    denoiser: &DenoiserParams<f32>,
    prng: &mut Prng,
) -> Result<(NoiseReport, NoiseReport)> {
    let before = analyze_noise(&pair.noisy, &pair.clean)?;
    let out = denoise_pipeline(&pair.noisy, translator, denoiser, prng)?;
    let after = analyze_noise(&out.translated, &pair.clean)?;
    Ok((before, after))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    /// `"level-0"`, `"level-5"`, ... or `"translated"`.
    pub label: String,
    pub level: Option<f64>,
    #[serde(serialize_with = "serialize_db")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub images: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Best fixed-level row.
    pub fn best_level(&self) -> Option<&AblationRow> {
        self.rows
            .iter()
            .filter(|r| r.level.is_some())
            .max_by(|a, b| a.psnr.total_cmp(&b.psnr))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// For each level `L`, denoise `I + N(0, (L/255)²)` with the denoiser alone;
/// optionally add a row for the translator pipeline on the raw input.
pub fn ablate_gaussian_addition(
    test: &[ImagePair],
    denoiser: &DenoiserParams<f32>,
    levels: &[f64],
    translator: Option<&TranslatorParams<f32>>,
    prng: &mut Prng,
) -> Result<AblationTable> {
    if test.is_empty() {
        return Err(Error::Empty("ablate_gaussian_addition test set"));
    }
    let mut rows = Vec::new();
    for &level in levels {
        if !(level >= 0.0) {
            return Err(Error::invalid(format!("addition level must be >= 0, got {level}")));
        }
        let mut level_prng = prng.derive(level.to_bits());
        let (mut p, mut s) = (Vec::new(), Vec::new());
        for pair in test {
            let input = add_gaussian(&mut level_prng, &pair.noisy, level);
            let out = denoise_only(&input, denoiser)?;
            p.push(psnr(&out, &pair.clean, 1.0)?);
            s.push(ssim(&out, &pair.clean)?);
        }
        rows.push(AblationRow {
            label: format!("level-{level}"),
            level: Some(level),
            psnr: mean(&p),
            ssim: mean(&s),
        });
    }
    if let Some(t) = translator {
        let mut inj = prng.derive(u64::MAX);
        let (mut p, mut s) = (Vec::new(), Vec::new());
        for pair in test {
            let out = denoise_pipeline(&pair.noisy, t, denoiser, &mut inj)?;
            if out.input_augmented {
                return Err(Error::invalid("inference input was augmented"));
            }
            p.push(psnr(&out.denoised, &pair.clean, 1.0)?);
            s.push(ssim(&out.denoised, &pair.clean)?);
        }
        rows.push(AblationRow {
            label: "translated".into(),
            level: None,
            psnr: mean(&p),
            ssim: mean(&s),
        });
    }
    Ok(AblationTable {
        images: test.len(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rand_noise::{sample_gaussian, synth_correlated};
    use crate::tensor::Tensor;

    fn clean() -> Image {
        Tensor::from_fn([1, 64, 64], |i| 0.3 + 0.4 * ((i % 64) as f32 / 64.0))
    }

    fn plus(img: &Image, f: &NoiseField) -> Image {
        Tensor::new(
            img.shape().to_vec(),
            img.data().iter().zip(f.values()).map(|(&a, &n)| (a as f64 + n) as f32).collect(),
        )
        .unwrap()
    }

    #[test]
    fn quantile_references() {
        let q = gaussian_quantiles(4, 0.0, 1.0);
        assert!((q[0] + q[3]).abs() < 1e-12 && (q[1] + q[2]).abs() < 1e-12);
        assert!((q[3] - 1.150349380376).abs() < 1e-9);
        let r = rayleigh_quantiles(2, 1.0);
        assert!((r[0] - (-2.0 * 0.75f64.ln()).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn white_noise_fits_and_correlated_does_not() {
        let c = clean();
        let white = sample_gaussian(&mut Prng::new(1), [64, 64, 1], 0.0, 15.0 / 255.0).unwrap();
        let rw = analyze_noise(&plus(&c, &white), &c).unwrap();
        assert!(rw.spatial_fit && rw.freq_fit, "{rw:?}");
        assert!(rw.lag1_autocorr_h.abs() < 0.05);
        let corr = synth_correlated(&mut Prng::new(2), [64, 64, 1], 15.0 / 255.0).unwrap();
        let rc = analyze_noise(&plus(&c, &corr), &c).unwrap();
        assert!(rc.freq_w1 >= 3.0 * rw.freq_w1, "{} vs {}", rc.freq_w1, rw.freq_w1);
        assert!(rc.lag1_autocorr_h > 0.5);
        let integral = rw.spatial_histogram.as_ref().unwrap().integral();
        assert!((integral - 1.0).abs() < 1e-9);
    }

    #[test]
    fn no_noise_is_flagged() {
        let c = clean();
        let r = analyze_noise(&c, &c).unwrap();
        assert!(r.no_noise);
        assert_eq!((r.sigma_hat, r.spatial_w1, r.freq_w1), (0.0, 0.0, 0.0));
        assert!(analyze_noise(&c, &Tensor::zeros([1, 64, 63])).is_err());
    }

    #[test]
    fn signal_dependency_slope() {
        let c = clean();
        let sd = crate::rand_noise::synth_signal_dependent(&mut Prng::new(3), &c, 0.01, 0.0).unwrap();
        let r = analyze_noise(&plus(&c, &sd), &c).unwrap();
        assert!((r.signal_slope - 0.01).abs() < 0.004, "{}", r.signal_slope);
    }

    #[test]
    fn inf_is_serialised_as_string() {
        let row = AblationRow {
            label: "x".into(),
            level: None,
            psnr: f64::INFINITY,
            ssim: 1.0,
        };
        assert!(serde_json::to_string(&row).unwrap().contains(r#""psnr":"inf""#));
    }
}
