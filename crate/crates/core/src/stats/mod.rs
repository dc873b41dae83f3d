//! Empirical distributions: moments, order-statistics 1-Wasserstein distance,
//! brute-force transport oracles and histograms.

mod assignment;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rand_noise::NoiseField;

pub use assignment::{w1_assignment, w1_exhaustive, w1_oracle, ASSIGNMENT_MAX, EXHAUSTIVE_MAX};

/// Population mean and standard deviation (1/N normalisation).
pub fn empirical_moments(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("empirical_moments"));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok((values[0], 0.0));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// One flattened channel together with its ascending permutation.
#[derive(Clone, Debug)]
pub struct SampleVector {
    values: Vec<f64>,
    order: Vec<usize>,
}

impl SampleVector {
    pub fn new(values: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        SampleVector { values, order }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Indices of `values` in non-decreasing value order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn sorted(&self) -> Vec<f64> {
        self.order.iter().map(|&i| self.values[i]).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-channel sample vectors of a field.
pub fn channel_samples(field: &NoiseField) -> Vec<SampleVector> {
    (0..field.channels())
        .map(|c| SampleVector::new(field.channel(c).to_vec()))
        .collect()
}

/// `(1/(n·C)) Σ_c Σ_i |X^c_(i) − Y^c_(i)|` where `n` is the per-channel
/// sample count and `X_(i)`, `Y_(i)` are order statistics.
pub fn w1_sorted(x: &[SampleVector], y: &[SampleVector]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "w1_sorted (channels)",
            lhs: vec![x.len()],
            rhs: vec![y.len()],
        });
    }
    let n = x[0].len();
    if n == 0 {
        return Err(Error::Empty("w1_sorted"));
    }
    let mut total = 0.0;
    for (a, b) in x.iter().zip(y) {
        if a.len() != n || b.len() != n {
            return Err(Error::ShapeMismatch {
                op: "w1_sorted (samples per channel)",
                lhs: vec![a.len()],
                rhs: vec![b.len()],
            });
        }
        total += a
            .order
            .iter()
            .zip(&b.order)
            .map(|(&i, &j)| (a.values[i] - b.values[j]).abs())
            .sum::<f64>();
    }
    Ok(total / (n * x.len()) as f64)
}

/// Single-channel convenience form of [`w1_sorted`].
pub fn w1_sorted_1d(x: &[f64], y: &[f64]) -> Result<f64> {
    w1_sorted(&[SampleVector::new(x.to_vec())], &[SampleVector::new(y.to_vec())])
}

/// Channel-wise W₁ between two fields of equal extents.
pub fn w1_fields(a: &NoiseField, b: &NoiseField) -> Result<f64> {
    if (a.height(), a.width(), a.channels()) != (b.height(), b.width(), b.channels()) {
        return Err(Error::ShapeMismatch {
            op: "w1_fields",
            lhs: vec![a.height(), a.width(), a.channels()],
            rhs: vec![b.height(), b.width(), b.channels()],
        });
    }
    w1_sorted(&channel_samples(a), &channel_samples(b))
}

/// Uniform-bin histogram over `[lo, hi]`. Bins are half-open `[e_k, e_{k+1})`
/// except the last, which is closed; out-of-range samples are clamped into
/// the edge bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    /// `Σ density · width`.
    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width()
    }

    /// Columns `left_edge,right_edge,count,density`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("left_edge,right_edge,count,density\n");
        for k in 0..self.bins() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                self.edges[k],
                self.edges[k + 1],
                self.counts[k],
                self.density[k]
            ));
        }
        s
    }
}

pub fn histogram(samples: &[f64], bins: usize, range: (f64, f64)) -> Result<Histogram> {
    let (lo, hi) = range;
    if bins == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!(
            "histogram needs bins >= 1 and finite lo < hi, got {bins} bins over [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in samples {
        let k = ((v - lo) / width).floor();
        let k = if k.is_nan() || k < 0.0 {
            0
        } else {
            (k as usize).min(bins - 1)
        };
        counts[k] += 1;
    }
    let total = samples.len() as f64;
    let density = counts
        .iter()
        .map(|&c| if total > 0.0 { c as f64 / (total * width) } else { 0.0 })
        .collect();
    let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
    Ok(Histogram {
        lo,
        hi,
        edges,
        counts,
        density,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rand_noise::{sample_gaussian, Prng};
    use proptest::prelude::*;

    #[test]
    fn moments() {
        assert_eq!(empirical_moments(&[2.5; 7]).unwrap(), (2.5, 0.0));
        assert_eq!(empirical_moments(&[-1.0, 1.0]).unwrap(), (0.0, 1.0));
        assert!(empirical_moments(&[]).is_err());
        let sigma = 0.2;
        let f = sample_gaussian(&mut Prng::new(2), [100, 100, 1], 0.5, sigma).unwrap();
        let (m, s) = empirical_moments(f.values()).unwrap();
        assert!((m - 0.5).abs() < 4.0 * sigma / 100.0);
        assert!((s - sigma).abs() < 0.02 * sigma);
    }

    #[test]
    fn w1_hand_cases() {
        assert_eq!(w1_sorted_1d(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(w1_sorted_1d(&[3.0, 1.0, 2.0], &[2.0, 3.0, 1.0]).unwrap(), 0.0);
        let x = [0.3, -1.2, 4.0, 0.0];
        let shifted: Vec<f64> = x.iter().map(|v| v - 0.75).collect();
        assert!((w1_sorted_1d(&x, &shifted).unwrap() - 0.75).abs() < 1e-15);
        assert!(w1_sorted_1d(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn histogram_conventions() {
        let h = histogram(&[0.5], 2, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts, vec![0, 1]);
        let h = histogram(&[1.0, -3.0, 9.0], 4, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts, vec![1, 0, 0, 2]);
        assert!((h.integral() - 1.0).abs() < 1e-9);
        assert!(histogram(&[1.0], 0, (0.0, 1.0)).is_err());
        assert!(histogram(&[1.0], 3, (1.0, 1.0)).is_err());
        assert!(h.to_csv().starts_with("left_edge,right_edge,count,density\n0,0.25,1,"));
    }

    #[test]
    fn histogram_density_tracks_gaussian_pdf() {
        let sigma = 1.0;
        let f = sample_gaussian(&mut Prng::new(8), [100_000, 1, 1], 0.0, sigma).unwrap();
        let h = histogram(f.values(), 64, (-4.0 * sigma, 4.0 * sigma)).unwrap();
        assert_eq!(h.total(), 100_000);
        assert!((h.integral() - 1.0).abs() < 1e-9);
        let peak = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        // bins 31 and 32 straddle the mode
        let at_mode = 0.5 * (h.density[31] + h.density[32]);
        assert!((at_mode / peak - 1.0).abs() < 0.10, "{at_mode} vs {peak}");
    }

    fn vecs(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn w1_metric_properties(x in vecs(12), y in vecs(12), z in vecs(12)) {
            let dxy = w1_sorted_1d(&x, &y).unwrap();
            let dyx = w1_sorted_1d(&y, &x).unwrap();
            let dxz = w1_sorted_1d(&x, &z).unwrap();
            let dzy = w1_sorted_1d(&z, &y).unwrap();
            prop_assert_eq!(dxy, dyx);
            prop_assert!(dxy >= 0.0);
            prop_assert!(dxy <= dxz + dzy + 1e-12);
            let mut rev = x.clone();
            rev.reverse();
            prop_assert_eq!(w1_sorted_1d(&x, &rev).unwrap(), 0.0);
        }

        #[test]
        fn w1_scale_and_translation(x in vecs(9), y in vecs(9), a in 0.01f64..100.0, c in -50.0f64..50.0) {
            let d = w1_sorted_1d(&x, &y).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| a * v).collect();
            let ys: Vec<f64> = y.iter().map(|v| a * v).collect();
            let ds = w1_sorted_1d(&xs, &ys).unwrap();
            prop_assert!((ds - a * d).abs() <= 1e-12 * (1.0 + a * d));
            let xt: Vec<f64> = x.iter().map(|v| v + c).collect();
            let yt: Vec<f64> = y.iter().map(|v| v + c).collect();
            let dt = w1_sorted_1d(&xt, &yt).unwrap();
            prop_assert!((dt - d).abs() <= 1e-12 * (1.0 + c.abs()));
        }

        #[test]
        fn w1_sorted_equals_transport_oracle(x in vecs(6), y in vecs(6)) {
            let s = w1_sorted_1d(&x, &y).unwrap();
            let o = w1_oracle(&x, &y).unwrap();
            prop_assert!((s - o).abs() <= 1e-12);
        }
    }
}
