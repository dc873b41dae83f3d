//! Gaussian-injection U-Net translator, residual denoiser, AdamW.
//!
//! Parameters live in a [`ParamSet`]; a network records the indices of its
//! tensors and a forward pass reads them from the `Var`s returned by
//! [`ParamSet::bind`].

mod optim;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rand_noise::Prng;
use crate::tensor::{Graph, Real, Tensor, Var};

pub use optim::{cosine_lr, AdamW, AdamWConfig, CosineSchedule};
pub use params::{count_params, ConvIdx, Init, ParamSet};

const LN_EPS: f64 = 1e-6;

/// Gaussian injection block:
/// `y = x + proj(gate(dw(expand(norm(x + ε)))))`, `ε ~ N(0, (σ̃/255)²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GiBlockParams {
    pub channels: usize,
    pub sigma_tilde: f64,
    pub norm_gain: usize,
    pub norm_bias: usize,
    pub expand: ConvIdx,
    pub depthwise: ConvIdx,
    pub proj: ConvIdx,
}

impl GiBlockParams {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, prng: &mut Prng, name: &str, channels: usize, sigma_tilde: f64) -> Self {
        let c = channels;
        let norm_gain = ps.push(format!("{name}.norm.gain"), Tensor::ones([c]));
        let norm_bias = ps.push(format!("{name}.norm.bias"), Tensor::zeros([c]));
        let expand = ps.push_conv(prng, &format!("{name}.expand"), 2 * c, c, 1, 1, Init::Scaled(1.0));
        let depthwise = ps.push_conv(prng, &format!("{name}.dw"), 2 * c, 1, 3, 3, Init::Scaled(1.0));
        let proj = ps.push_conv(prng, &format!("{name}.proj"), c, c, 1, 1, Init::Zeros);
        GiBlockParams {
            channels,
            sigma_tilde,
            norm_gain,
            norm_bias,
            expand,
            depthwise,
            proj,
        }
    }
}

/// The injected noise is drawn fresh on every call, in training and at
/// inference alike. `σ̃ = 0` skips the draw entirely.
pub fn gi_block_forward<T: Real>(
    g: &mut Graph<T>,
    vars: &[Var],
    p: &GiBlockParams,
    x: Var,
    prng: &mut Prng,
) -> Result<Var> {
    let shape = g.value(x).dims4("gi_block_forward")?;
    if shape[1] != p.channels {
        return Err(Error::ShapeMismatch {
            op: "gi_block_forward",
            lhs: g.value(x).shape().to_vec(),
            rhs: vec![p.channels],
        });
    }
    let input = if p.sigma_tilde > 0.0 {
        let eps = g.constant(prng.gaussian_tensor(shape, 0.0, p.sigma_tilde / 255.0));
        g.add(x, eps)?
    } else {
        x
    };
    let h = g.layer_norm_channels(input, vars[p.norm_gain], vars[p.norm_bias], T::of(LN_EPS))?;
    let h = g.conv2d(h, vars[p.expand.kernel], vars[p.expand.bias], 1, 0)?;
    let h = g.depthwise_conv2d(h, vars[p.depthwise.kernel], vars[p.depthwise.bias], 1)?;
    let h = g.simple_gate(h)?;
    let h = g.conv2d(h, vars[p.proj.kernel], vars[p.proj.bias], 1, 0)?;
    g.add(x, h)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslatorConfig {
    pub channels: usize,
    pub base_width: usize,
    /// Number of stride-2 downsamplings.
    pub depth: usize,
    pub blocks_per_stage: usize,
    /// Injection level in 8-bit units.
    pub sigma_tilde: f64,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        TranslatorConfig {
            channels: 1,
            base_width: 8,
            depth: 2,
            blocks_per_stage: 2,
            sigma_tilde: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct EncoderStage {
    blocks: Vec<GiBlockParams>,
    down: ConvIdx,
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderStage {
    reduce: ConvIdx,
    blocks: Vec<GiBlockParams>,
}

/// Residual U-Net `I_T = I + f_φ(I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslatorParams<T> {
    pub config: TranslatorConfig,
    pub params: ParamSet<T>,
    stem: ConvIdx,
    encoder: Vec<EncoderStage>,
    bottleneck: Vec<GiBlockParams>,
    decoder: Vec<DecoderStage>,
    out: ConvIdx,
}

impl<T: Real> TranslatorParams<T> {
    pub fn new(config: TranslatorConfig, prng: &mut Prng) -> Result<Self> {
        if config.channels == 0 || config.base_width == 0 {
            return Err(Error::invalid("translator needs channels >= 1 and base_width >= 1"));
        }
        if !(config.sigma_tilde >= 0.0) || !config.sigma_tilde.is_finite() {
            return Err(Error::invalid(format!("sigma_tilde must be >= 0, got {}", config.sigma_tilde)));
        }
        let mut ps = ParamSet::new();
        let w0 = config.base_width;
        let width = |s: usize| w0 << s;
        let stem = ps.push_conv(prng, "stem", w0, config.channels, 3, 3, Init::Scaled(1.0));
        let blocks = |ps: &mut ParamSet<T>, prng: &mut Prng, name: &str, c: usize| -> Vec<GiBlockParams> {
            (0..config.blocks_per_stage)
                .map(|b| GiBlockParams::new(ps, prng, &format!("{name}.{b}"), c, config.sigma_tilde))
                .collect()
        };
        let mut encoder = Vec::with_capacity(config.depth);
        for s in 0..config.depth {
            let blocks = blocks(&mut ps, prng, &format!("enc{s}"), width(s));
            let down = ps.push_conv(prng, &format!("enc{s}.down"), width(s + 1), width(s), 2, 2, Init::Scaled(1.0));
            encoder.push(EncoderStage { blocks, down });
        }
        let bottleneck = blocks(&mut ps, prng, "mid", width(config.depth));
        let mut decoder = Vec::with_capacity(config.depth);
        for s in (0..config.depth).rev() {
            let reduce = ps.push_conv(prng, &format!("dec{s}.reduce"), width(s), width(s + 1), 1, 1, Init::Scaled(1.0));
            let blocks = blocks(&mut ps, prng, &format!("dec{s}"), width(s));
            decoder.push(DecoderStage { reduce, blocks });
        }
        let out = ps.push_conv(prng, "out", config.channels, w0, 3, 3, Init::Zeros);
        Ok(TranslatorParams {
            config,
            params: ps,
            stem,
            encoder,
            bottleneck,
            decoder,
            out,
        })
    }

    /// Spatial sizes must be multiples of this.
    pub fn multiple(&self) -> usize {
        1 << self.config.depth
    }

    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], input: Var, prng: &mut Prng) -> Result<Var> {
        let [_, c, h, w] = g.value(input).dims4("translator_forward")?;
        if c != self.config.channels {
            return Err(Error::ShapeMismatch {
                op: "translator_forward (channels)",
                lhs: g.value(input).shape().to_vec(),
                rhs: vec![self.config.channels],
            });
        }
        let m = self.multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::InvalidShape {
                op: "translator_forward",
                shape: g.value(input).shape().to_vec(),
                reason: format!("height and width must be divisible by {m}"),
            });
        }
        let conv = |g: &mut Graph<T>, x: Var, k: ConvIdx, stride: usize, pad: usize| {
            g.conv2d(x, vars[k.kernel], vars[k.bias], stride, pad)
        };
        let mut x = conv(g, input, self.stem, 1, 1)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for stage in &self.encoder {
            for b in &stage.blocks {
                x = gi_block_forward(g, vars, b, x, prng)?;
            }
            skips.push(x);
            x = conv(g, x, stage.down, 2, 0)?;
        }
        for b in &self.bottleneck {
            x = gi_block_forward(g, vars, b, x, prng)?;
        }
        for stage in &self.decoder {
            x = g.upsample_nearest2x(x)?;
            x = conv(g, x, stage.reduce, 1, 0)?;
            x = g.add(x, skips.pop().expect("one skip per stage"))?;
            for b in &stage.blocks {
                x = gi_block_forward(g, vars, b, x, prng)?;
            }
        }
        let residual = conv(g, x, self.out, 1, 1)?;
        g.add(input, residual)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub channels: usize,
    pub width: usize,
    /// Number of residual conv + gate layers.
    pub layers: usize,
    /// Pixel-unshuffle factor applied before the body; 1 disables it.
    pub unshuffle: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            channels: 1,
            width: 64,
            layers: 6,
            unshuffle: 4,
        }
    }
}

/// Residual CNN predicting the noise: `Î = I − r_θ(I)`. Each body layer is
/// `x + proj(gate(conv3×3(norm(x))))` with a zero-initialised 1×1 `proj`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams<T> {
    pub config: DenoiserConfig,
    pub params: ParamSet<T>,
    head: ConvIdx,
    body: Vec<DenoiserLayer>,
    tail: ConvIdx,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct DenoiserLayer {
    norm_gain: usize,
    norm_bias: usize,
    conv: ConvIdx,
    proj: ConvIdx,
}

impl<T: Real> DenoiserParams<T> {
    pub fn new(config: DenoiserConfig, prng: &mut Prng) -> Result<Self> {
        if config.channels == 0 || config.width == 0 || config.unshuffle == 0 {
            return Err(Error::invalid("denoiser needs channels, width and unshuffle >= 1"));
        }
        let mut ps = ParamSet::new();
        let outer = config.channels * config.unshuffle * config.unshuffle;
        let w = config.width;
        let head = ps.push_conv(prng, "head", w, outer, 3, 3, Init::Scaled(1.0));
        let body = (0..config.layers)
            .map(|l| DenoiserLayer {
                norm_gain: ps.push(format!("body{l}.norm.gain"), Tensor::ones([w])),
                norm_bias: ps.push(format!("body{l}.norm.bias"), Tensor::zeros([w])),
                conv: ps.push_conv(prng, &format!("body{l}.conv"), 2 * w, w, 3, 3, Init::Scaled(1.0)),
                proj: ps.push_conv(prng, &format!("body{l}.proj"), w, w, 1, 1, Init::Zeros),
            })
            .collect();
        let tail = ps.push_conv(prng, "tail", outer, w, 3, 3, Init::Zeros);
        Ok(DenoiserParams {
            config,
            params: ps,
            head,
            body,
            tail,
        })
    }

    pub fn multiple(&self) -> usize {
        self.config.unshuffle
    }

    /// Deterministic: no injection.
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], input: Var) -> Result<Var> {
        let [_, c, h, w] = g.value(input).dims4("denoiser_forward")?;
        if c != self.config.channels {
            return Err(Error::ShapeMismatch {
                op: "denoiser_forward (channels)",
                lhs: g.value(input).shape().to_vec(),
                rhs: vec![self.config.channels],
            });
        }
        let f = self.config.unshuffle;
        if h % f != 0 || w % f != 0 {
            return Err(Error::InvalidShape {
                op: "denoiser_forward",
                shape: g.value(input).shape().to_vec(),
                reason: format!("height and width must be divisible by {f}"),
            });
        }
        let half = g.constant(Tensor::full([1], T::of(0.5)));
        let centred = g.sub(input, half)?;
        let x = if f > 1 { g.pixel_unshuffle(centred, f)? } else { centred };
        let mut x = g.conv2d(x, vars[self.head.kernel], vars[self.head.bias], 1, 1)?;
        for layer in &self.body {
            let h = g.layer_norm_channels(x, vars[layer.norm_gain], vars[layer.norm_bias], T::of(LN_EPS))?;
            let h = g.conv2d(h, vars[layer.conv.kernel], vars[layer.conv.bias], 1, 1)?;
            let h = g.simple_gate(h)?;
            let h = g.conv2d(h, vars[layer.proj.kernel], vars[layer.proj.bias], 1, 0)?;
            x = g.add(x, h)?;
        }
        let r = g.conv2d(x, vars[self.tail.kernel], vars[self.tail.bias], 1, 1)?;
        let r = if f > 1 { g.pixel_shuffle(r, f)? } else { r };
        g.sub(input, r)
    }
}

/// Forward pass of a single image or batch outside of training. The
/// translator still injects noise; the denoiser is deterministic.
pub fn run_translator<T: Real>(net: &TranslatorParams<T>, input: &Tensor<T>, prng: &mut Prng) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let vars = net.params.bind(&mut g, false);
    let x = g.constant(input.clone());
    let y = net.forward(&mut g, &vars, x, prng)?;
    Ok(g.value(y).clone())
}

pub fn run_denoiser<T: Real>(net: &DenoiserParams<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let vars = net.params.bind(&mut g, false);
    let x = g.constant(input.clone());
    let y = net.forward(&mut g, &vars, x)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;

    fn tiny_translator(sigma_tilde: f64) -> TranslatorParams<f64> {
        let cfg = TranslatorConfig {
            channels: 1,
            base_width: 2,
            depth: 1,
            blocks_per_stage: 1,
            sigma_tilde,
        };
        TranslatorParams::new(cfg, &mut Prng::new(1)).unwrap()
    }

    #[test]
    fn single_conv_count() {
        let mut ps = ParamSet::<f32>::new();
        assert_eq!(count_params(&ps), 0);
        ps.push_conv(&mut Prng::new(0), "c", 1, 1, 3, 3, Init::Scaled(1.0));
        assert_eq!(count_params(&ps), 10);
    }

    #[test]
    fn block_is_identity_at_init_and_checks_channels() {
        let mut ps = ParamSet::<f64>::new();
        let mut prng = Prng::new(3);
        let p = GiBlockParams::new(&mut ps, &mut prng, "b", 4, 100.0);
        let x0 = prng.gaussian_tensor([2, 4, 5, 5], 0.0, 1.0);
        let mut g = Graph::new();
        let vars = ps.bind(&mut g, true);
        let x = g.constant(x0.clone());
        let y = gi_block_forward(&mut g, &vars, &p, x, &mut prng).unwrap();
        assert_eq!(g.value(y), &x0);
        let bad = g.constant(Tensor::zeros([1, 3, 5, 5]));
        assert!(gi_block_forward(&mut g, &vars, &p, bad, &mut prng).is_err());
    }

    #[test]
    fn injection_variance_adds() {
        let mut prng = Prng::new(5);
        let x0: Tensor<f64> = prng.gaussian_tensor([1, 10, 100, 100], 0.0, 0.2);
        let mut g = Graph::new();
        let x = g.constant(x0.clone());
        let eps = g.constant(prng.gaussian_tensor(x0.shape().to_vec(), 0.0, 100.0 / 255.0));
        let y = g.add(x, eps).unwrap();
        let var = |t: &Tensor<f64>| {
            let n = t.len() as f64;
            let m = t.data().iter().sum::<f64>() / n;
            t.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
        };
        let added = var(g.value(y)) - var(&x0);
        let expected = (100.0f64 / 255.0).powi(2);
        assert!((added / expected - 1.0).abs() < 0.05, "{added} vs {expected}");
    }

    #[test]
    fn block_gradcheck() {
        let mut ps = ParamSet::<f64>::new();
        let mut prng = Prng::new(9);
        let p = GiBlockParams::new(&mut ps, &mut prng, "b", 2, 0.0);
        ps.perturb(&mut prng, 0.3);
        let x0 = prng.gaussian_tensor([1, 2, 4, 4], 0.0, 1.0);
        let rep = gradcheck(
            |g, x| {
                let vars = ps.bind(g, false);
                let y = gi_block_forward(g, &vars, &p, x, &mut Prng::new(0))?;
                let sq = g.mul(y, y)?;
                g.sum(sq)
            },
            &x0,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn translator_identity_shape_and_divisibility() {
        let net = TranslatorParams::<f32>::new(TranslatorConfig::default(), &mut Prng::new(2)).unwrap();
        let mut prng = Prng::new(4);
        for (h, w) in [(8, 8), (16, 12), (32, 64)] {
            let x: Tensor<f32> = Tensor::from_fn([2, 1, h, w], |i| ((i * 37) % 101) as f32 / 100.0);
            assert_eq!(run_translator(&net, &x, &mut prng).unwrap(), x);
        }
        for v in [0.0f32, 1.0] {
            let x = Tensor::full([1, 1, 16, 16], v);
            assert!(run_translator(&net, &x, &mut prng).unwrap().all_finite());
        }
        assert!(run_translator(&net, &Tensor::zeros([1, 1, 10, 8]), &mut prng).is_err());
        assert!(run_translator(&net, &Tensor::zeros([1, 3, 8, 8]), &mut prng).is_err());
    }

    #[test]
    fn default_size_budget() {
        let t = TranslatorParams::<f32>::new(TranslatorConfig::default(), &mut Prng::new(0)).unwrap();
        let d = DenoiserParams::<f32>::new(DenoiserConfig::default(), &mut Prng::new(0)).unwrap();
        let ratio = count_params(&t.params) as f64 / count_params(&d.params) as f64;
        assert!(ratio < 0.05, "{} / {}", count_params(&t.params), count_params(&d.params));
    }

    #[test]
    fn injection_stochasticity() {
        let mut net = tiny_translator(100.0);
        net.params.perturb(&mut Prng::new(7), 0.1);
        let x = Tensor::full([1, 1, 4, 4], 0.5);
        let a = run_translator(&net, &x, &mut Prng::new(1)).unwrap();
        let b = run_translator(&net, &x, &mut Prng::new(1)).unwrap();
        let c = run_translator(&net, &x, &mut Prng::new(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn translator_gradcheck() {
        let mut net = tiny_translator(0.0);
        net.params.perturb(&mut Prng::new(11), 0.3);
        let x0 = Prng::new(12).gaussian_tensor([1, 1, 4, 4], 0.5, 0.2);
        let rep = gradcheck(
            |g, x| {
                let vars = net.params.bind(g, false);
                let y = net.forward(g, &vars, x, &mut Prng::new(0))?;
                let sq = g.mul(y, y)?;
                g.sum(sq)
            },
            &x0,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn denoiser_zero_tail_identity_and_gradcheck() {
        let cfg = DenoiserConfig {
            channels: 1,
            width: 4,
            layers: 1,
            unshuffle: 2,
        };
        let mut net = DenoiserParams::<f64>::new(cfg, &mut Prng::new(3)).unwrap();
        let x0 = Prng::new(4).gaussian_tensor([1, 1, 4, 6], 0.5, 0.2);
        assert_eq!(run_denoiser(&net, &x0).unwrap(), x0);
        assert!(run_denoiser(&net, &Tensor::zeros([1, 1, 5, 6])).is_err());
        assert!(run_denoiser(&net, &Tensor::zeros([1, 2, 4, 4])).is_err());
        net.params.perturb(&mut Prng::new(5), 0.3);
        let rep = gradcheck(
            |g, x| {
                let vars = net.params.bind(g, false);
                let y = net.forward(g, &vars, x)?;
                let sq = g.mul(y, y)?;
                g.sum(sq)
            },
            &x0,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn frozen_binding_allocates_no_gradients() {
        let net = DenoiserParams::<f64>::new(
            DenoiserConfig {
                width: 4,
                layers: 1,
                unshuffle: 1,
                ..DenoiserConfig::default()
            },
            &mut Prng::new(0),
        )
        .unwrap();
        let mut g = Graph::new();
        let vars = net.params.bind(&mut g, false);
        let x = g.param(Tensor::full([1, 1, 4, 4], 0.5));
        let y = net.forward(&mut g, &vars, x).unwrap();
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.len(), 1);
        assert!(grads.get(vars[0]).is_none());
    }
}
