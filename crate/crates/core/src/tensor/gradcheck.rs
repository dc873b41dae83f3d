//! Finite-difference gradient checking.

use super::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// Largest relative error over the checked coordinates.
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose stencil straddles a kink (an `|·|` or sort tie).
    pub excluded: usize,
    pub passed: bool,
}

fn eval<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = f(&mut g, v)?;
    Ok(g.value(out).item())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares the backward pass of the scalar function `f` at `x` against
/// central differences with step `h`, coordinate by coordinate.
///
/// A coordinate is excluded rather than failed when the central estimates at
/// `h` and `h/10` disagree by more than `tol`: the function is not smooth on
/// the stencil there, so no finite difference is a valid reference.
pub fn gradcheck<F>(f: F, x: &Tensor<f64>, h: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    let analytic = g.backward(out)?.wrt(v)?.clone();

    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        checked: 0,
        excluded: 0,
        passed: true,
    };
    let mut probe = x.clone();
    let central = |probe: &mut Tensor<f64>, i: usize, step: f64| -> Result<f64> {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let fp = eval(&f, probe)?;
        probe.data_mut()[i] = orig - step;
        let fm = eval(&f, probe)?;
        probe.data_mut()[i] = orig;
        Ok((fp - fm) / (2.0 * step))
    };
    for i in 0..x.len() {
        let a = analytic.data()[i];
        let fd = central(&mut probe, i, h)?;
        let err = rel(a, fd);
        if err <= tol {
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(err);
            continue;
        }
        let fd_fine = central(&mut probe, i, h / 10.0)?;
        if rel(fd, fd_fine) > tol {
            report.excluded += 1;
            continue;
        }
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(err);
        report.passed = false;
    }
    Ok(report)
}
