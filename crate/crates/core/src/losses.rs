//! Translation objectives.
//!
//! * implicit: L1 between the frozen denoiser's output and the clean target;
//! * spatial: channel-wise order-statistics W₁ between the translated noise
//!   `n_T = I_T − I_GT` and a moment-matched Gaussian draw `n_G`;
//! * frequency: the same W₁ between DFT magnitudes of `n_T` and `n_G`;
//! * explicit = spatial + β·frequency, total = implicit + α·explicit.
//!
//! Batch tensors are `[N,C,H,W]`; every distance is computed per image and
//! averaged over the batch. The reference `n_G` is a constant: no gradient
//! reaches its moments.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rand_noise::{sample_gaussian, NoiseField, Prng};
use crate::spectral::{dft2_plane, dft2_real, MAGNITUDE_EPS};
use crate::stats::empirical_moments;
use crate::tensor::{Graph, Real, Tensor, Var};

pub const DEFAULT_ALPHA: f64 = 5e-2;
pub const DEFAULT_BETA: f64 = 2e-3;

/// Scalar components of one training step's objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_implicit: f64,
    pub l_spatial: f64,
    pub l_freq: f64,
    pub l_explicit: f64,
    pub l_total: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LossBreakdown {
    /// Derives the composite terms so both composition identities hold exactly.
    pub fn new(l_implicit: f64, l_spatial: f64, l_freq: f64, alpha: f64, beta: f64) -> Self {
        let l_explicit = l_spatial + beta * l_freq;
        LossBreakdown {
            l_implicit,
            l_spatial,
            l_freq,
            l_explicit,
            l_total: l_implicit + alpha * l_explicit,
            alpha,
            beta,
        }
    }

    /// Name of the first non-finite component, if any.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            ("l_implicit", self.l_implicit),
            ("l_spatial", self.l_spatial),
            ("l_freq", self.l_freq),
            ("l_explicit", self.l_explicit),
            ("l_total", self.l_total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// I.i.d. `N(μ̂, σ̂²)` with `n_t`'s extents and empirical moments.
pub fn gaussian_reference(prng: &mut Prng, n_t: &NoiseField) -> Result<NoiseField> {
    sample_gaussian(
        prng,
        [n_t.height(), n_t.width(), n_t.channels()],
        n_t.mu_hat(),
        n_t.sigma_hat(),
    )
}

/// Per-image moment-matched Gaussian references for a `[N,C,H,W]` batch.
pub fn gaussian_reference_batch<T: Real>(prng: &mut Prng, n_t: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, _, _, _] = n_t.dims4("gaussian_reference_batch")?;
    let per = n_t.len() / n;
    let mut out = Vec::with_capacity(n_t.len());
    for b in 0..n {
        let vals: Vec<f64> = n_t.data()[b * per..(b + 1) * per].iter().map(|v| v.as_f64()).collect();
        let (mu, sigma) = empirical_moments(&vals)?;
        out.extend((0..per).map(|_| T::of(mu + sigma * prng.normal())));
    }
    Tensor::new(n_t.shape().to_vec(), out)
}

pub fn loss_implicit<T: Real>(g: &mut Graph<T>, denoised: Var, gt: Var) -> Result<Var> {
    g.l1_mean(denoised, gt)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    idx
}

/// Sorted-sample W₁ of one channel and `∂W/∂x` (unnormalised: `sign` per rank,
/// scattered back through the argsort of `x`).
fn sorted_w1_with_grad(x: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
    let ox = argsort(x);
    let mut ys = y.to_vec();
    ys.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for (rank, &i) in ox.iter().enumerate() {
        let d = x[i] - ys[rank];
        total += d.abs();
        grad[i] = sign(d);
    }
    total
}

fn check_pair<T: Real>(g: &Graph<T>, op: &'static str, n_t: Var, n_g: &Tensor<T>) -> Result<[usize; 4]> {
    let dims = g.value(n_t).dims4(op)?;
    if g.value(n_t).shape() != n_g.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: g.value(n_t).shape().to_vec(),
            rhs: n_g.shape().to_vec(),
        });
    }
    Ok(dims)
}

/// Spatial-domain W₁ between `n_t` and the reference `n_g`.
pub fn loss_spatial<T: Real>(g: &mut Graph<T>, n_t: Var, n_g: &Tensor<T>) -> Result<Var> {
    let [n, c, h, w] = check_pair(g, "loss_spatial", n_t, n_g)?;
    let plane = h * w;
    let norm = 1.0 / (n * c * plane) as f64;
    let x: Vec<f64> = g.value(n_t).data().iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = n_g.data().iter().map(|v| v.as_f64()).collect();
    let mut grad = vec![0.0; x.len()];
    let mut total = 0.0;
    for k in 0..n * c {
        let r = k * plane..(k + 1) * plane;
        total += sorted_w1_with_grad(&x[r.clone()], &y[r.clone()], &mut grad[r]);
    }
    let local = Tensor::new(g.value(n_t).shape().to_vec(), grad.iter().map(|&d| T::of(d * norm)).collect())?;
    g.scalar_fn("loss_spatial", n_t, T::of(total * norm), local)
}

/// Frequency-domain W₁ between sorted `|DFT(n_t)|` and `|DFT(n_g)|`, over all bins.
pub fn loss_freq<T: Real>(g: &mut Graph<T>, n_t: Var, n_g: &Tensor<T>) -> Result<Var> {
    let [n, c, h, w] = check_pair(g, "loss_freq", n_t, n_g)?;
    let plane = h * w;
    let norm = 1.0 / (n * c * plane) as f64;
    let x = g.value(n_t).data();
    let y = n_g.data();
    let mut grad = Vec::with_capacity(x.len());
    let mut total = 0.0;
    let mut mag_grad = vec![0.0; plane];
    for k in 0..n * c {
        let xs: Vec<f64> = x[k * plane..(k + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let ys: Vec<f64> = y[k * plane..(k + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let fx = dft2_real(&xs, h, w);
        let mx: Vec<f64> = fx.iter().map(|z| z.norm()).collect();
        let my: Vec<f64> = dft2_real(&ys, h, w).iter().map(|z| z.norm()).collect();
        total += sorted_w1_with_grad(&mx, &my, &mut mag_grad);
        // ∂L/∂n(x) = Re Σ_k G_k e^{−2πi k·x/N} with G_k = g_k·conj(F_k)/|F_k|:
        // a forward DFT of G, real part.
        let mut gk: Vec<Complex64> = fx
            .iter()
            .zip(&mag_grad)
            .map(|(z, &gm)| gm * z.conj() / (z.norm() + MAGNITUDE_EPS))
            .collect();
        dft2_plane(&mut gk, h, w, false);
        grad.extend(gk.iter().map(|z| T::of(z.re * norm)));
    }
    let local = Tensor::new(g.value(n_t).shape().to_vec(), grad)?;
    g.scalar_fn("loss_freq", n_t, T::of(total * norm), local)
}

/// Graph nodes of the explicit objective.
#[derive(Clone, Copy, Debug)]
pub struct ExplicitTerms {
    pub spatial: Var,
    pub freq: Var,
    pub explicit: Var,
}

pub fn loss_explicit<T: Real>(g: &mut Graph<T>, n_t: Var, n_g: &Tensor<T>, beta: f64) -> Result<ExplicitTerms> {
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
    }
    let spatial = loss_spatial(g, n_t, n_g)?;
    let freq = loss_freq(g, n_t, n_g)?;
    let weighted = g.scale(freq, T::of(beta))?;
    let explicit = g.add(spatial, weighted)?;
    Ok(ExplicitTerms {
        spatial,
        freq,
        explicit,
    })
}

/// `implicit + α·explicit`, with the breakdown read back from the graph.
pub fn loss_total<T: Real>(
    g: &mut Graph<T>,
    implicit: Var,
    explicit: &ExplicitTerms,
    alpha: f64,
    beta: f64,
) -> Result<(Var, LossBreakdown)> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    let weighted = g.scale(explicit.explicit, T::of(alpha))?;
    let total = g.add(implicit, weighted)?;
    let breakdown = LossBreakdown::new(
        g.value(implicit).item().as_f64(),
        g.value(explicit.spatial).item().as_f64(),
        g.value(explicit.freq).item().as_f64(),
        alpha,
        beta,
    );
    Ok((total, breakdown))
}
