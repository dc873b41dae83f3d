//! Channel-wise 2-D DFT, spectrum magnitudes and the Rayleigh law of white
//! Gaussian spectra.
//!
//! Convention: `F(u,v) = Σ_x Σ_y n(x,y)·exp(−2πi(ux/H + vy/W))`, unnormalised
//! forward, `1/(H·W)` on the inverse. Power-of-two extents use an iterative
//! radix-2 Cooley–Tukey transform; other extents fall back to direct
//! evaluation along each axis.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rand_noise::NoiseField;

/// Guard added to `|z|` when dividing by it; keeps `∂|z|` finite at 0.
pub const MAGNITUDE_EPS: f64 = 1e-12;

fn fft_radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let half = len / 2;
        let twiddles: Vec<Complex64> = (0..half).map(|k| Complex64::from_polar(1.0, ang * k as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn dft_direct(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let out: Vec<Complex64> = (0..n)
        .map(|k| {
            buf.iter()
                .enumerate()
                .map(|(x, &v)| {
                    let ang = sign * 2.0 * std::f64::consts::PI * ((k * x) % n) as f64 / n as f64;
                    v * Complex64::from_polar(1.0, ang)
                })
                .sum()
        })
        .collect();
    buf.copy_from_slice(&out);
}

/// Unnormalised 1-D transform in place (`inverse` flips the exponent sign).
pub fn dft_1d(buf: &mut [Complex64], inverse: bool) {
    if buf.len().is_power_of_two() {
        fft_radix2(buf, inverse);
    } else {
        dft_direct(buf, inverse);
    }
}

/// Unnormalised 2-D transform of one row-major `h×w` plane, in place.
pub fn dft2_plane(plane: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    for row in plane.chunks_mut(w) {
        dft_1d(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = plane[y * w + x];
        }
        dft_1d(&mut col, inverse);
        for y in 0..h {
            plane[y * w + x] = col[y];
        }
    }
}

/// Forward transform of a real plane.
pub fn dft2_real(values: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    dft2_plane(&mut buf, h, w, false);
    buf
}

/// Complex coefficients per channel, layout `[C,H,W]`; index `(u,v)` with DC at `(0,0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn at(&self, c: usize, u: usize, v: usize) -> Complex64 {
        self.coeffs[(c * self.height + u) * self.width + v]
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let plane = self.height * self.width;
        &self.coeffs[c * plane..(c + 1) * plane]
    }
}

pub fn dft2_channelwise(field: &NoiseField) -> Spectrum {
    let (h, w, c) = (field.height(), field.width(), field.channels());
    let mut coeffs = Vec::with_capacity(h * w * c);
    for ch in 0..c {
        coeffs.extend(dft2_real(field.channel(ch), h, w));
    }
    Spectrum {
        height: h,
        width: w,
        channels: c,
        coeffs,
    }
}

/// Inverse transform with `1/(H·W)` normalisation, keeping the real part.
pub fn idft2_channelwise(spec: &Spectrum) -> Result<NoiseField> {
    let (h, w) = (spec.height, spec.width);
    let scale = 1.0 / (h * w) as f64;
    let mut values = Vec::with_capacity(spec.coeffs.len());
    for ch in 0..spec.channels {
        let mut buf = spec.channel(ch).to_vec();
        dft2_plane(&mut buf, h, w, true);
        values.extend(buf.iter().map(|z| z.re * scale));
    }
    NoiseField::new(h, w, spec.channels, values)
}

/// DC and the Nyquist rows/columns whose coefficients are real for real input.
pub fn is_special_bin(u: usize, v: usize, h: usize, w: usize) -> bool {
    let edge_u = u == 0 || (h % 2 == 0 && u == h / 2);
    let edge_v = v == 0 || (w % 2 == 0 && v == w / 2);
    edge_u && edge_v
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumMagnitude {
    /// `|F|` per channel; row-major bin order with special bins removed when excluded.
    pub channels: Vec<Vec<f64>>,
    pub special_bins_excluded: bool,
}

impl SpectrumMagnitude {
    pub fn flattened(&self) -> Vec<f64> {
        self.channels.concat()
    }

    /// Columns `channel,index,magnitude`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("channel,index,magnitude\n");
        for (c, ch) in self.channels.iter().enumerate() {
            for (i, m) in ch.iter().enumerate() {
                s.push_str(&format!("{c},{i},{m}\n"));
            }
        }
        s
    }
}

pub fn magnitude(spec: &Spectrum, exclude_special_bins: bool) -> SpectrumMagnitude {
    let (h, w) = (spec.height, spec.width);
    let channels = (0..spec.channels)
        .map(|c| {
            (0..h * w)
                .filter(|&k| !(exclude_special_bins && is_special_bin(k / w, k % w, h, w)))
                .map(|k| spec.channel(c)[k].norm())
                .collect()
        })
        .collect();
    SpectrumMagnitude {
        channels,
        special_bins_excluded: exclude_special_bins,
    }
}

/// `(∂|z|/∂Re z, ∂|z|/∂Im z) = (Re z, Im z)/|z|`, guarded so `z = 0` gives `(0, 0)`.
pub fn magnitude_grad(z: Complex64) -> (f64, f64) {
    let r = z.norm() + MAGNITUDE_EPS;
    (z.re / r, z.im / r)
}

pub fn rayleigh_pdf(x: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(x >= 0.0) {
        return Err(Error::invalid(format!("rayleigh_pdf needs x >= 0, sigma > 0 (x={x}, sigma={sigma})")));
    }
    let s2 = sigma * sigma;
    Ok(x / s2 * (-x * x / (2.0 * s2)).exp())
}

/// Rayleigh quantile `σ·sqrt(−2 ln(1−p))`.
pub fn rayleigh_quantile(p: f64, sigma: f64) -> f64 {
    sigma * (-2.0 * (1.0 - p).ln()).sqrt()
}

/// Rayleigh scale `σ·sqrt(H·W/2)` of the non-special DFT magnitudes of an
/// `H×W` white Gaussian field with per-pixel standard deviation `σ`.
pub fn gaussian_spectrum_scale(sigma: f64, h: usize, w: usize) -> f64 {
    sigma * ((h * w) as f64 / 2.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rand_noise::{sample_gaussian, Prng};

    /// Textbook double sum, independent of the separable fast path.
    fn dft2_definition(values: &[f64], h: usize, w: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for x in 0..h {
                    for y in 0..w {
                        let ang = -2.0 * std::f64::consts::PI * (u as f64 * x as f64 / h as f64 + v as f64 * y as f64 / w as f64);
                        acc += values[x * w + y] * Complex64::from_polar(1.0, ang);
                    }
                }
                out[u * w + v] = acc;
            }
        }
        out
    }

    #[test]
    fn fast_and_direct_paths_match_definition() {
        let mut p = Prng::new(4);
        for (h, w) in [(8, 8), (4, 16), (6, 5), (3, 8)] {
            let vals: Vec<f64> = (0..h * w).map(|_| p.normal()).collect();
            let fast = dft2_real(&vals, h, w);
            let reference = dft2_definition(&vals, h, w);
            for (a, b) in fast.iter().zip(&reference) {
                assert!((a - b).norm() < 1e-10, "{h}x{w}");
            }
        }
    }

    #[test]
    fn delta_and_constant() {
        let mut v = vec![0.0; 16];
        v[0] = 1.0;
        let f = NoiseField::new(4, 4, 1, v).unwrap();
        let s = dft2_channelwise(&f);
        assert!(s.coeffs.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));

        let a = 0.7;
        let f = NoiseField::new(4, 8, 2, vec![a; 64]).unwrap();
        let s = dft2_channelwise(&f);
        for c in 0..2 {
            assert!((s.at(c, 0, 0) - Complex64::new(32.0 * a, 0.0)).norm() < 1e-12);
            for k in 1..32 {
                assert!(s.channel(c)[k].norm() < 1e-12);
            }
        }
        let back = idft2_channelwise(&s).unwrap();
        assert!(back.values().iter().all(|&x| (x - a).abs() < 1e-12));

        let zero = Spectrum {
            height: 4,
            width: 4,
            channels: 1,
            coeffs: vec![Complex64::new(0.0, 0.0); 16],
        };
        assert!(idft2_channelwise(&zero).unwrap().values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn parseval_roundtrip_hermitian() {
        let mut p = Prng::new(6);
        let f = sample_gaussian(&mut p, [8, 8, 2], 0.1, 1.0).unwrap();
        let s = dft2_channelwise(&f);
        let e_space: f64 = f.values().iter().map(|v| v * v).sum();
        let e_freq: f64 = s.coeffs.iter().map(|z| z.norm_sqr()).sum();
        assert!((e_freq - 64.0 * e_space).abs() / e_freq < 1e-9);
        let back = idft2_channelwise(&s).unwrap();
        let err = back.values().iter().zip(f.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9 * f.sigma_hat());
        for u in 0..8 {
            for v in 0..8 {
                let z = s.at(0, u, v);
                let zc = s.at(0, (8 - u) % 8, (8 - v) % 8).conj();
                assert!((z - zc).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn magnitude_and_special_bins() {
        let spec = Spectrum {
            height: 1,
            width: 2,
            channels: 1,
            coeffs: vec![Complex64::new(-2.0, 0.0), Complex64::new(3.0, 4.0)],
        };
        let m = magnitude(&spec, false);
        assert_eq!(m.channels[0], vec![2.0, 5.0]);
        let mut special = 0;
        for u in 0..8 {
            for v in 0..8 {
                special += is_special_bin(u, v, 8, 8) as usize;
            }
        }
        assert_eq!(special, 4);
        let f = NoiseField::new(8, 8, 1, (0..64).map(|i| i as f64).collect()).unwrap();
        assert_eq!(magnitude(&dft2_channelwise(&f), true).channels[0].len(), 60);
    }

    #[test]
    fn magnitude_gradient_matches_finite_differences() {
        let h = 1e-6;
        for z in [Complex64::new(3.0, 4.0), Complex64::new(-0.2, 0.05), Complex64::new(0.0, -1.5)] {
            let (gr, gi) = magnitude_grad(z);
            let fr = ((z + h).norm() - (z - h).norm()) / (2.0 * h);
            let dz = Complex64::new(0.0, h);
            let fi = ((z + dz).norm() - (z - dz).norm()) / (2.0 * h);
            assert!((gr - fr).abs() < 1e-6 && (gi - fi).abs() < 1e-6);
        }
        assert_eq!(magnitude_grad(Complex64::new(0.0, 0.0)), (0.0, 0.0));
    }

    #[test]
    fn rayleigh_pdf_values_and_normalisation() {
        assert!((rayleigh_pdf(1.0, 1.0).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert!((rayleigh_pdf(1.0, 1.0).unwrap() - 0.606531).abs() < 1e-6);
        assert_eq!(rayleigh_pdf(0.0, 2.0).unwrap(), 0.0);
        assert!(rayleigh_pdf(-1.0, 1.0).is_err());
        assert!(rayleigh_pdf(1.0, 0.0).is_err());
        // composite Simpson over [0, 10σ]
        let sigma = 1.7;
        let n = 20_000;
        let hstep = 10.0 * sigma / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let wgt = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += wgt * rayleigh_pdf(i as f64 * hstep, sigma).unwrap();
        }
        assert!((acc * hstep / 3.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn spectrum_scale_formula() {
        assert!((gaussian_spectrum_scale(1.0, 8, 8) - 32f64.sqrt()).abs() < 1e-12);
        assert_eq!(gaussian_spectrum_scale(0.0, 8, 8), 0.0);
    }
}
