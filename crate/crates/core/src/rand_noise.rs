//! Seeded random streams and the noise families used for training and tests.
//!
//! The generator is xoshiro256** seeded through SplitMix64, so a seed maps to
//! the same stream on every platform. Normals use the Box–Muller transform;
//! Rayleigh draws use the inverse CDF.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::{Error, Result};
use crate::stats::empirical_moments;
use crate::tensor::{Real, Tensor};

/// SplitMix64 finaliser; used to derive independent child seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Prng {
    seed: u64,
    rng: Xoshiro256StarStar,
    spare_normal: Option<f64>,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng {
            seed,
            rng: Xoshiro256StarStar::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Child stream for `stream`: seeded with `seed ⊕ splitmix64(stream)`.
    /// Depends only on the parent's seed, not on how far it has advanced.
    pub fn derive(&self, stream: u64) -> Prng {
        Prng::new(self.seed ^ splitmix64(stream))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`.
    pub fn uniform_open_closed(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n.saturating_sub(1))
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Standard normal via Box–Muller; the second value of each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open_closed();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn gaussian_tensor<T: Real>(&mut self, shape: impl Into<Vec<usize>>, mu: f64, sigma: f64) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::of(mu + sigma * self.normal()))
    }
}

/// A noise realisation over an `H×W×C` grid, stored channel-major
/// (`values[(c·H + y)·W + x]`), with its empirical moments.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseField {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
    mu_hat: f64,
    sigma_hat: f64,
}

impl NoiseField {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::InvalidShape {
                op: "NoiseField::new",
                shape: vec![height, width, channels],
                reason: format!("{} values supplied", values.len()),
            });
        }
        let (mu_hat, sigma_hat) = empirical_moments(&values)?;
        Ok(NoiseField {
            height,
            width,
            channels,
            values,
            mu_hat,
            sigma_hat,
        })
    }

    /// From a `[C,H,W]` or `[1,C,H,W]` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = match t.shape() {
            [c, h, w] | [1, c, h, w] => (*c, *h, *w),
            s => {
                return Err(Error::InvalidShape {
                    op: "NoiseField::from_tensor",
                    shape: s.to_vec(),
                    reason: "expected [C,H,W] or [1,C,H,W]".into(),
                })
            }
        };
        NoiseField::new(h, w, c, t.data().iter().map(|v| v.as_f64()).collect())
    }

    /// As a `[1,C,H,W]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            [1, self.channels, self.height, self.width],
            self.values.iter().map(|&v| T::of(v)).collect(),
        )
        .expect("consistent extents")
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn mu_hat(&self) -> f64 {
        self.mu_hat
    }
    pub fn sigma_hat(&self) -> f64 {
        self.sigma_hat
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.values[c * plane..(c + 1) * plane]
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }
}

fn check_shape(shape: [usize; 3]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape {
            op: "noise synthesis",
            shape: shape.to_vec(),
            reason: "all extents must be positive".into(),
        });
    }
    Ok(())
}

/// I.i.d. `N(mu, sigma²)` over `shape = [H, W, C]`.
pub fn sample_gaussian(prng: &mut Prng, shape: [usize; 3], mu: f64, sigma: f64) -> Result<NoiseField> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("gaussian sigma must be >= 0, got {sigma}")));
    }
    check_shape(shape)?;
    let [h, w, c] = shape;
    let values = (0..h * w * c).map(|_| mu + sigma * prng.normal()).collect();
    NoiseField::new(h, w, c, values)
}

/// White Gaussian noise smoothed by a 3×3 box filter (zero-padded borders),
/// scaled so the interior marginal standard deviation is `sigma`.
///
/// Interior lag-1 horizontal/vertical autocorrelation is 6/9 = 2/3 and
/// vanishes beyond lag 2.
pub fn synth_correlated(prng: &mut Prng, shape: [usize; 3], sigma: f64) -> Result<NoiseField> {
    let [h, w, c] = shape;
    if h < 3 || w < 3 || c == 0 {
        return Err(Error::InvalidShape {
            op: "synth_correlated",
            shape: shape.to_vec(),
            reason: "needs H, W >= 3".into(),
        });
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("correlated sigma must be >= 0, got {sigma}")));
    }
    let white: Vec<f64> = (0..h * w * c).map(|_| prng.normal()).collect();
    // Box sum of 9 unit normals has std 3, so sigma/3 restores the target.
    let gain = sigma / 3.0;
    let mut values = vec![0.0; h * w * c];
    for ch in 0..c {
        let plane = &white[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (yy, xx) = (y as isize + dy, x as isize + dx);
                        if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                            s += plane[yy as usize * w + xx as usize];
                        }
                    }
                }
                values[(ch * h + y) * w + x] = gain * s;
            }
        }
    }
    NoiseField::new(h, w, c, values)
}

/// Heteroscedastic Gaussian noise with per-pixel variance `a·x + b`
/// (Gaussian approximation of Poisson–Gaussian sensor noise).
/// `clean` is `[C,H,W]` or `[1,C,H,W]` with values in `[0, 1]`.
pub fn synth_signal_dependent<T: Real>(prng: &mut Prng, clean: &Tensor<T>, a: f64, b: f64) -> Result<NoiseField> {
    if !(a >= 0.0) || !(b >= 0.0) {
        return Err(Error::invalid(format!(
            "signal-dependent parameters must be non-negative, got a={a}, b={b}"
        )));
    }
    let field = NoiseField::from_tensor(clean)?;
    if field.values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::invalid("clean image values must lie in [0, 1]"));
    }
    let values = field
        .values
        .iter()
        .map(|&x| (a * x + b).sqrt() * prng.normal())
        .collect();
    NoiseField::new(field.height, field.width, field.channels, values)
}

/// `count` Rayleigh(σ) draws via `σ·sqrt(-2 ln u)`, `u ∈ (0, 1]`.
pub fn sample_rayleigh(prng: &mut Prng, count: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("rayleigh sigma must be > 0, got {sigma}")));
    }
    Ok((0..count)
        .map(|_| sigma * (-2.0 * prng.uniform_open_closed().ln()).sqrt())
        .collect())
}
