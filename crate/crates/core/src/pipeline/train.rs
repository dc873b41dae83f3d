//! The two training loops.

use std::collections::VecDeque;

use serde::Serialize;

use super::checkpoint::ModelCheckpoint;
use super::config::TrainConfig;
use super::data::{make_batch, stack_pairs, Phase};
use super::image_io::Image;
use super::streams;
use crate::error::{Error, Result};
use crate::losses::{gaussian_reference_batch, loss_explicit, loss_implicit, loss_total, LossBreakdown};
use crate::nets::{AdamW, AdamWConfig, CosineSchedule, DenoiserParams, TranslatorParams};
use crate::rand_noise::Prng;
use crate::tensor::Graph;

const HISTORY_TAIL: usize = 10;

/// Receives one line per logged iteration.
pub type Logger<'a> = &'a mut dyn FnMut(&str);

fn adamw(config: &TrainConfig) -> AdamWConfig {
    AdamWConfig {
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    }
}

fn tail(history: &VecDeque<f64>) -> String {
    let v: Vec<String> = history.iter().map(|l| format!("{l:.6}")).collect();
    format!("[{}]", v.join(", "))
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub denoiser: DenoiserParams<f32>,
    /// L1 loss per iteration.
    pub losses: Vec<f64>,
}

impl PretrainOutcome {
    pub fn checkpoint(&self, config: &TrainConfig) -> Result<ModelCheckpoint> {
        Ok(ModelCheckpoint::from_params(
            "denoiser",
            serde_json::to_value(self.denoiser.config)?,
            serde_json::to_value(config)?,
            self.losses.len(),
            &self.denoiser.params,
        ))
    }
}

/// Trains θ with L1 on half-Gaussian, half-real-plus-Gaussian batches.
pub fn pretrain_denoiser(config: &TrainConfig, corpus: &[Image], log: Logger) -> Result<PretrainOutcome> {
    config.validate()?;
    let root = Prng::new(config.seed);
    let mut denoiser = DenoiserParams::<f32>::new(config.denoiser, &mut root.derive(streams::DENOISER_INIT))?;
    let mut batches = root.derive(streams::PRETRAIN_BATCHES);
    let schedule = CosineSchedule {
        lr_init: config.pretrain.lr_init,
        lr_final: config.pretrain.lr_final,
        total_steps: config.pretrain.iterations,
    };
    let mut opt = AdamW::new(adamw(config), &denoiser.params);
    let mut losses = Vec::with_capacity(config.pretrain.iterations);
    let mut recent = VecDeque::with_capacity(HISTORY_TAIL);
    for it in 0..config.pretrain.iterations {
        let lr = schedule.lr(it)?;
        let pairs = make_batch(&mut batches, config, corpus, Phase::DenoiserPretrain)?;
        let (noisy, clean) = stack_pairs(&pairs)?;
        let mut g = Graph::new();
        let vars = denoiser.params.bind(&mut g, true);
        let x = g.constant(noisy);
        let gt = g.constant(clean);
        let diverged = |loss: f64, recent: &VecDeque<f64>| {
            Error::Diverged(format!(
                "denoiser pretraining: iteration {it}, lr {lr:e}, loss {loss}, recent losses {}",
                tail(recent)
            ))
        };
        let out = denoiser.forward(&mut g, &vars, x).map_err(|_| diverged(f64::NAN, &recent))?;
        let loss = g.l1_mean(out, gt).map_err(|_| diverged(f64::NAN, &recent))?;
        let value = g.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(diverged(value, &recent));
        }
        let grads = g.backward(loss)?;
        let grads = denoiser.params.collect_grads(&grads, &vars)?;
        opt.step(&mut denoiser.params, &grads, lr)?;
        losses.push(value);
        if recent.len() == HISTORY_TAIL {
            recent.pop_front();
        }
        recent.push_back(value);
        if config.log_every > 0 && (it % config.log_every == 0 || it + 1 == config.pretrain.iterations) {
            log(&format!("pretrain it={it} lr={lr:.3e} l1={value:.6}"));
        }
    }
    Ok(PretrainOutcome { denoiser, losses })
}

#[derive(Clone, Debug, Serialize)]
pub struct TranslatorLogEntry {
    pub iteration: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TranslatorOutcome {
    pub translator: TranslatorParams<f32>,
    pub history: Vec<TranslatorLogEntry>,
}

impl TranslatorOutcome {
    pub fn checkpoint(&self, config: &TrainConfig) -> Result<ModelCheckpoint> {
        Ok(ModelCheckpoint::from_params(
            "translator",
            serde_json::to_value(self.translator.config)?,
            serde_json::to_value(config)?,
            self.history.len(),
            &self.translator.params,
        ))
    }
}

/// Optimises φ over `L_implicit + α·L_explicit` through the frozen denoiser.
/// Fails if any denoiser parameter changes.
pub fn train_translator(
    config: &TrainConfig,
    corpus: &[Image],
    denoiser: &DenoiserParams<f32>,
    log: Logger,
) -> Result<TranslatorOutcome> {
    config.validate()?;
    let root = Prng::new(config.seed);
    let mut translator =
        TranslatorParams::<f32>::new(config.translator, &mut root.derive(streams::TRANSLATOR_INIT))?;
    let mut batches = root.derive(streams::TRANSLATOR_BATCHES);
    let mut injection = root.derive(streams::TRAIN_INJECTION);
    let mut references = root.derive(streams::GAUSSIAN_REFERENCE);
    let schedule = CosineSchedule {
        lr_init: config.translator_train.lr_init,
        lr_final: config.translator_train.lr_final,
        total_steps: config.translator_train.iterations,
    };
    let mut opt = AdamW::new(adamw(config), &translator.params);
    let frozen = denoiser.params.fingerprint();
    let mut history = Vec::with_capacity(config.translator_train.iterations);
    for it in 0..config.translator_train.iterations {
        let lr = schedule.lr(it)?;
        let pairs = make_batch(&mut batches, config, corpus, Phase::TranslatorTrain)?;
        let (noisy, clean) = stack_pairs(&pairs)?;
        let mut g = Graph::new();
        let tv = translator.params.bind(&mut g, true);
        let dv = denoiser.params.bind(&mut g, false);
        let x = g.constant(noisy);
        let gt = g.constant(clean);
        let diverged = |what: &str| {
            Error::Diverged(format!("translator training: iteration {it}, lr {lr:e}, {what}"))
        };
        let translated = translator
            .forward(&mut g, &tv, x, &mut injection)
            .map_err(|e| diverged(&format!("translator forward: {e}")))?;
        let denoised = denoiser
            .forward(&mut g, &dv, translated)
            .map_err(|e| diverged(&format!("denoiser forward: {e}")))?;
        let implicit = loss_implicit(&mut g, denoised, gt).map_err(|e| diverged(&format!("l_implicit: {e}")))?;
        let n_t = g.sub(translated, gt)?;
        let n_g = gaussian_reference_batch(&mut references, g.value(n_t))?;
        let explicit =
            loss_explicit(&mut g, n_t, &n_g, config.beta).map_err(|e| diverged(&format!("l_explicit: {e}")))?;
        let (total, breakdown) = loss_total(&mut g, implicit, &explicit, config.alpha, config.beta)?;
        if let Some(component) = breakdown.non_finite_component() {
            return Err(diverged(&format!("{component} is non-finite; breakdown {breakdown:?}")));
        }
        let grads = g.backward(total)?;
        let grads = translator.params.collect_grads(&grads, &tv)?;
        opt.step(&mut translator.params, &grads, lr)?;
        if config.log_every > 0 && (it % config.log_every == 0 || it + 1 == config.translator_train.iterations) {
            log(&format!(
                "translate it={it} lr={lr:.3e} total={:.6} implicit={:.6} spatial={:.6} freq={:.4}",
                breakdown.l_total, breakdown.l_implicit, breakdown.l_spatial, breakdown.l_freq
            ));
        }
        history.push(TranslatorLogEntry {
            iteration: it,
            lr,
            losses: breakdown,
        });
    }
    if denoiser.params.fingerprint() != frozen {
        return Err(Error::invalid("frozen denoiser parameters changed during translator training"));
    }
    Ok(TranslatorOutcome { translator, history })
}

/// Mean of the first and last `window` values.
pub fn moving_average_ends(values: &[f64], window: usize) -> Option<(f64, f64)> {
    if window == 0 || values.len() < window {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&values[..window]), mean(&values[values.len() - window..])))
}
