//! Finite-difference checks shared by the gradient and acceptance tests.

#![allow(dead_code)]

use ntnt_core::losses::{gaussian_reference_batch, loss_explicit, loss_freq, loss_implicit, loss_spatial, loss_total};
use ntnt_core::nets::{DenoiserConfig, DenoiserParams, TranslatorConfig, TranslatorParams};
use ntnt_core::rand_noise::Prng;
use ntnt_core::{gradcheck, GradcheckReport, Graph, Result, Tensor, Var};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Losses that pass through a sort or a spectrum magnitude.
pub const TOL_SORTED: f64 = 1e-3;

pub struct Check {
    pub name: &'static str,
    pub tol: f64,
    pub report: GradcheckReport,
}

fn squared<F>(f: F) -> impl Fn(&mut Graph<f64>, Var) -> Result<Var>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    move |g, x| {
        let y = f(g, x)?;
        let sq = g.mul(y, y)?;
        g.sum(sq)
    }
}

fn rnd(seed: u64, shape: impl Into<Vec<usize>>) -> Tensor<f64> {
    Prng::new(seed).gaussian_tensor(shape, 0.0, 1.0)
}

/// Every differentiable graph op, each with respect to each of its inputs.
pub fn op_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name: &'static str, tol: f64, report: GradcheckReport| out.push(Check { name, tol, report });
    let run = |x: &Tensor<f64>, f: &dyn Fn(&mut Graph<f64>, Var) -> Result<Var>, tol: f64| {
        gradcheck(squared(f), x, H, tol).unwrap()
    };

    let x = rnd(1, [2, 3, 7, 9]);
    let k = rnd(2, [4, 3, 3, 3]).map(|v| v * 0.3);
    let b = rnd(3, [4]);
    for (name, stride, pad) in [("conv2d s1 p1", 1, 1), ("conv2d s2 p0", 2, 0)] {
        let (kc, bc, xc) = (k.clone(), b.clone(), x.clone());
        push(name, TOL, run(&x, &|g, v| {
            let (kv, bv) = (g.constant(kc.clone()), g.constant(bc.clone()));
            g.conv2d(v, kv, bv, stride, pad)
        }, TOL));
        push("conv2d kernel", TOL, run(&k, &|g, v| {
            let (xv, bv) = (g.constant(xc.clone()), g.constant(bc.clone()));
            g.conv2d(xv, v, bv, stride, pad)
        }, TOL));
        push("conv2d bias", TOL, run(&b, &|g, v| {
            let (xv, kv) = (g.constant(xc.clone()), g.constant(kc.clone()));
            g.conv2d(xv, kv, v, stride, pad)
        }, TOL));
    }

    let dk = rnd(4, [3, 1, 3, 3]);
    let db = rnd(5, [3]);
    push("depthwise_conv2d", TOL, run(&x, &|g, v| {
        let (kv, bv) = (g.constant(dk.clone()), g.constant(db.clone()));
        g.depthwise_conv2d(v, kv, bv, 1)
    }, TOL));
    push("depthwise_conv2d kernel", TOL, run(&dk, &|g, v| {
        let (xv, bv) = (g.constant(x.clone()), g.constant(db.clone()));
        g.depthwise_conv2d(xv, v, bv, 1)
    }, TOL));
    push("depthwise_conv2d bias", TOL, run(&db, &|g, v| {
        let (xv, kv) = (g.constant(x.clone()), g.constant(dk.clone()));
        g.depthwise_conv2d(xv, kv, v, 1)
    }, TOL));

    let x4 = rnd(6, [2, 4, 4, 6]);
    push("upsample_nearest2x", TOL, run(&x4, &|g, v| g.upsample_nearest2x(v), TOL));
    push("pixel_unshuffle", TOL, run(&x4, &|g, v| g.pixel_unshuffle(v, 2), TOL));
    push("pixel_shuffle", TOL, run(&x4, &|g, v| g.pixel_shuffle(v, 2), TOL));
    push("simple_gate", TOL, run(&x4, &|g, v| g.simple_gate(v), TOL));

    let gain = rnd(7, [4]);
    let bias = rnd(8, [4]);
    let w = rnd(9, [2, 4, 4, 6]);
    // weighted so the normalisation's own gradient is not trivially zero
    let ln = |g: &mut Graph<f64>, x: Var, gn: Var, bs: Var| -> Result<Var> {
        let y = g.layer_norm_channels(x, gn, bs, 1e-6)?;
        let wv = g.constant(w.clone());
        g.mul(y, wv)
    };
    push("layer_norm_channels", TOL, run(&x4, &|g, v| {
        let (gn, bs) = (g.constant(gain.clone()), g.constant(bias.clone()));
        ln(g, v, gn, bs)
    }, TOL));
    push("layer_norm_channels gain", TOL, run(&gain, &|g, v| {
        let (xv, bs) = (g.constant(x4.clone()), g.constant(bias.clone()));
        ln(g, xv, v, bs)
    }, TOL));
    push("layer_norm_channels bias", TOL, run(&bias, &|g, v| {
        let (xv, gn) = (g.constant(x4.clone()), g.constant(gain.clone()));
        ln(g, xv, gn, v)
    }, TOL));

    let a = rnd(10, [3, 4]);
    let c = rnd(11, [3, 4]);
    let s = Tensor::scalar(0.7);
    push("add", TOL, run(&a, &|g, v| { let cv = g.constant(c.clone()); g.add(v, cv) }, TOL));
    push("sub lhs", TOL, run(&a, &|g, v| { let cv = g.constant(c.clone()); g.sub(v, cv) }, TOL));
    push("sub rhs", TOL, run(&a, &|g, v| { let cv = g.constant(c.clone()); g.sub(cv, v) }, TOL));
    push("mul", TOL, run(&a, &|g, v| { let cv = g.constant(c.clone()); g.mul(v, cv) }, TOL));
    push("mul scalar rhs", TOL, run(&s, &|g, v| { let cv = g.constant(c.clone()); g.mul(cv, v) }, TOL));
    push("add scalar rhs", TOL, run(&s, &|g, v| { let cv = g.constant(c.clone()); g.add(cv, v) }, TOL));
    push("scale", TOL, run(&a, &|g, v| g.scale(v, -1.3), TOL));
    push("abs", TOL, run(&a, &|g, v| g.abs(v), TOL));
    push("l1_mean", TOL, run(&a, &|g, v| { let cv = g.constant(c.clone()); g.l1_mean(v, cv) }, TOL));
    push("sum", TOL, run(&a, &|g, v| g.sum(v), TOL));
    push("mean", TOL, run(&a, &|g, v| g.mean(v), TOL));

    let n_t = Prng::new(12).gaussian_tensor::<f64>([2, 1, 8, 8], 0.0, 0.1);
    let n_g = Prng::new(13).gaussian_tensor::<f64>([2, 1, 8, 8], 0.0, 0.1);
    push("loss_spatial", TOL_SORTED, gradcheck(|g, v| loss_spatial(g, v, &n_g), &n_t, H, TOL_SORTED).unwrap());
    push("loss_freq", TOL_SORTED, gradcheck(|g, v| loss_freq(g, v, &n_g), &n_t, H, TOL_SORTED).unwrap());
    push("loss_implicit", TOL, gradcheck(|g, v| {
        let cv = g.constant(n_g.clone());
        loss_implicit(g, v, cv)
    }, &n_t, H, TOL).unwrap());
    out
}

/// `L_total` through a tiny translator (σ̃ = 0) and a frozen tiny denoiser,
/// with respect to the noisy input and to every translator parameter.
pub fn total_loss_checks() -> Vec<Check> {
    let t_cfg = TranslatorConfig {
        channels: 1,
        base_width: 2,
        depth: 1,
        blocks_per_stage: 1,
        sigma_tilde: 0.0,
    };
    let mut translator = TranslatorParams::<f64>::new(t_cfg, &mut Prng::new(20)).unwrap();
    translator.params.perturb(&mut Prng::new(21), 0.2);
    let d_cfg = DenoiserConfig {
        channels: 1,
        width: 4,
        layers: 1,
        unshuffle: 1,
    };
    let mut denoiser = DenoiserParams::<f64>::new(d_cfg, &mut Prng::new(22)).unwrap();
    denoiser.params.perturb(&mut Prng::new(23), 0.2);
    let clean: Tensor<f64> = Prng::new(24).gaussian_tensor([2, 1, 8, 8], 0.5, 0.1);
    let noisy: Tensor<f64> = Prng::new(25).gaussian_tensor([2, 1, 8, 8], 0.5, 0.15);
    let (alpha, beta) = (5e-2, 2e-3);

    // n_G is drawn once so every evaluation sees the same reference
    let n_g = {
        let mut g = Graph::new();
        let vars = translator.params.bind(&mut g, false);
        let x = g.constant(noisy.clone());
        let it = translator.forward(&mut g, &vars, x, &mut Prng::new(0)).unwrap();
        let n_t = g.value(it).data().iter().zip(clean.data()).map(|(a, b)| a - b).collect();
        let n_t = Tensor::new([2, 1, 8, 8], n_t).unwrap();
        gaussian_reference_batch(&mut Prng::new(26), &n_t).unwrap()
    };
    let total = |g: &mut Graph<f64>, vars: &[Var], x: Var| -> Result<Var> {
        let it = translator.forward(g, vars, x, &mut Prng::new(0))?;
        let dvars = denoiser.params.bind(g, false);
        let den = denoiser.forward(g, &dvars, it)?;
        let gt = g.constant(clean.clone());
        let implicit = loss_implicit(g, den, gt)?;
        let n_t = g.sub(it, gt)?;
        let explicit = loss_explicit(g, n_t, &n_g, beta)?;
        Ok(loss_total(g, implicit, &explicit, alpha, beta)?.0)
    };

    let mut out = vec![Check {
        name: "L_total wrt input",
        tol: TOL_SORTED,
        report: gradcheck(
            |g, x| {
                let vars = translator.params.bind(g, false);
                total(g, &vars, x)
            },
            &noisy,
            H,
            TOL_SORTED,
        )
        .unwrap(),
    }];
    let mut ok = true;
    let mut worst = GradcheckReport {
        max_rel_err: 0.0,
        checked: 0,
        excluded: 0,
        passed: true,
    };
    for i in 0..translator.params.len() {
        let r = gradcheck(
            |g, p| {
                let mut vars = translator.params.bind(g, false);
                vars[i] = p;
                let x = g.constant(noisy.clone());
                total(g, &vars, x)
            },
            translator.params.get(i),
            H,
            TOL_SORTED,
        )
        .unwrap();
        ok &= r.passed;
        worst.max_rel_err = worst.max_rel_err.max(r.max_rel_err);
        worst.checked += r.checked;
        worst.excluded += r.excluded;
    }
    worst.passed = ok;
    out.push(Check {
        name: "L_total wrt translator parameters",
        tol: TOL_SORTED,
        report: worst,
    });
    out
}
