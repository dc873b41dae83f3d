//! Data, training, inference, evaluation and persistence.

mod analysis;
mod checkpoint;
mod config;
mod data;
mod image_io;
mod infer;
mod metrics;
mod train;

use serde::Serialize;

pub use analysis::{
    ablate_gaussian_addition, analyze_noise, analyze_translation, gaussian_quantiles, rayleigh_quantiles,
    serialize_db, AblationRow, AblationTable, NoiseReport, FIT_THRESHOLD,
};
pub use checkpoint::{
    denoiser_from_checkpoint, translator_from_checkpoint, Manifest, ModelCheckpoint, TensorEntry, FORMAT_VERSION, MAGIC};
pub use config::{NoiseFamily, PhaseSchedule, RealNoiseSpec, SyntheticCorpus, TrainConfig};
pub use data::{
    add_gaussian, apply_real_noise, make_batch, make_test_set, random_crop, stack_pairs, ImagePair, Phase,
    Provenance,
};
pub use image_io::{
    decode_netpbm, encode_netpbm, load_corpus, read_image, synthetic_corpus, synthetic_image, write_image, Image,
};
pub use infer::{crop_to, denoise_only, denoise_pipeline, reflect_pad, PipelineOutput};
pub use metrics::{psnr, ssim};
pub use train::{
    moving_average_ends, pretrain_denoiser, train_translator, Logger, PretrainOutcome, TranslatorLogEntry,
    TranslatorOutcome,
};

use crate::error::{Error, Result};
use crate::nets::{count_params, DenoiserParams, TranslatorParams};
use crate::rand_noise::Prng;

/// Every random stream is `Prng::new(seed).derive(id)` with one of these ids.
pub mod streams {
    pub const DENOISER_INIT: u64 = 1;
    pub const PRETRAIN_BATCHES: u64 = 2;
    pub const TRANSLATOR_INIT: u64 = 3;
    pub const TRANSLATOR_BATCHES: u64 = 4;
    pub const TRAIN_INJECTION: u64 = 5;
    pub const GAUSSIAN_REFERENCE: u64 = 6;
    pub const TRAIN_CORPUS: u64 = 7;
    pub const TEST_CORPUS: u64 = 8;
    pub const TEST_NOISE: u64 = 9;
    pub const EVAL: u64 = 10;
}

/// Clean training and test images.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Vec<Image>,
    pub test: Vec<Image>,
}

impl Corpus {
    /// Loads the configured directories, falling back to the synthetic
    /// generator for whichever is unset.
    pub fn from_config(config: &TrainConfig) -> Result<Self> {
        let root = Prng::new(config.seed);
        let channels = config.denoiser.channels;
        let load = |path: &std::path::Path| -> Result<Vec<Image>> {
            let imgs = load_corpus(path)?;
            for (p, img) in &imgs {
                if img.shape()[0] != channels {
                    return Err(Error::Image {
                        path: p.clone(),
                        reason: format!("{} channels, the networks are configured for {channels}", img.shape()[0]),
                    });
                }
            }
            Ok(imgs.into_iter().map(|(_, i)| i).collect())
        };
        let s = config.synthetic;
        let train = match &config.train_corpus {
            Some(p) => load(p)?,
            None => synthetic_corpus(&mut root.derive(streams::TRAIN_CORPUS), s.train_images, channels, s.size),
        };
        let test = match &config.test_corpus {
            Some(p) => load(p)?,
            None => synthetic_corpus(&mut root.derive(streams::TEST_CORPUS), s.test_images, channels, s.size),
        };
        if train.is_empty() || test.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        Ok(Corpus { train, test })
    }

    /// Held-out pairs corrupted with `spec`, seeded from the config.
    pub fn test_pairs(&self, config: &TrainConfig, spec: &RealNoiseSpec) -> Result<Vec<ImagePair>> {
        let mut prng = Prng::new(config.seed).derive(streams::TEST_NOISE);
        make_test_set(&mut prng, &self.test, spec, usize::MAX)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianCheck {
    #[serde(serialize_with = "serialize_db")]
    pub noisy_psnr: f64,
    #[serde(serialize_with = "serialize_db")]
    pub denoised_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseShift {
    pub spatial_w1_before: f64,
    pub spatial_w1_after: f64,
    pub freq_w1_before: f64,
    pub freq_w1_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub translator_params: usize,
    pub denoiser_params: usize,
    pub pretrain_loss_start: f64,
    pub pretrain_loss_end: f64,
    pub translator_loss_start: f64,
    pub translator_loss_end: f64,
    /// Denoiser alone on held-out crops with Gaussian noise at `pretrain_sigma`.
    pub gaussian_check: GaussianCheck,
    /// Test pairs corrupted with `eval_noise`.
    pub ablation: AblationTable,
    /// Mean noise distances of the test pairs before and after translation.
    pub noise_shift: NoiseShift,
}

pub struct Experiment {
    pub report: ExperimentReport,
    pub denoiser: DenoiserParams<f32>,
    pub translator: TranslatorParams<f32>,
    pub pretrain: PretrainOutcome,
    pub translation: TranslatorOutcome,
}

pub const ABLATION_LEVELS: [f64; 4] = [0.0, 5.0, 10.0, 15.0];

/// Moving-average window for the start/end loss summaries.
const LOSS_WINDOW: usize = 50;

fn ends(values: &[f64]) -> (f64, f64) {
    moving_average_ends(values, LOSS_WINDOW.min(values.len().max(1))).unwrap_or((f64::NAN, f64::NAN))
}

/// Evaluation of trained networks on held-out pairs.
pub fn evaluate(
    config: &TrainConfig,
    test: &[ImagePair],
    denoiser: &DenoiserParams<f32>,
    translator: &TranslatorParams<f32>,
) -> Result<(GaussianCheck, AblationTable, NoiseShift)> {
    if test.is_empty() {
        return Err(Error::Empty("evaluate test set"));
    }
    let root = Prng::new(config.seed).derive(streams::EVAL);

    let mut g = root.derive(1);
    let (mut noisy_p, mut den_p) = (0.0, 0.0);
    for pair in test {
        let noisy = add_gaussian(&mut g, &pair.clean, config.pretrain_sigma);
        noisy_p += psnr(&noisy, &pair.clean, 1.0)?;
        den_p += psnr(&denoise_only(&noisy, denoiser)?, &pair.clean, 1.0)?;
    }
    let n = test.len() as f64;
    let gaussian = GaussianCheck {
        noisy_psnr: noisy_p / n,
        denoised_psnr: den_p / n,
    };

    let ablation = ablate_gaussian_addition(test, denoiser, &ABLATION_LEVELS, Some(translator), &mut root.derive(2))?;

    let mut inj = root.derive(3);
    let mut shift = NoiseShift {
        spatial_w1_before: 0.0,
        spatial_w1_after: 0.0,
        freq_w1_before: 0.0,
        freq_w1_after: 0.0,
    };
    for pair in test {
        let (before, after) = analyze_translation(pair, translator, denoiser, &mut inj)?;
        shift.spatial_w1_before += before.spatial_w1 / n;
        shift.spatial_w1_after += after.spatial_w1 / n;
        shift.freq_w1_before += before.freq_w1 / n;
        shift.freq_w1_after += after.freq_w1 / n;
    }
    Ok((gaussian, ablation, shift))
}

/// Pretraining, translator training and evaluation on correlated test noise.
pub fn run_experiment(config: &TrainConfig, log: Logger) -> Result<Experiment> {
    config.validate()?;
    let corpus = Corpus::from_config(config)?;
    let pretrain = pretrain_denoiser(config, &corpus.train, log)?;
    let translation = train_translator(config, &corpus.train, &pretrain.denoiser, log)?;
    let eval_noise = RealNoiseSpec {
        family: NoiseFamily::Correlated,
        ..config.real_noise
    };
    let test = corpus.test_pairs(config, &eval_noise)?;
    let (gaussian_check, ablation, noise_shift) =
        evaluate(config, &test, &pretrain.denoiser, &translation.translator)?;
    let (p0, p1) = ends(&pretrain.losses);
    let totals: Vec<f64> = translation.history.iter().map(|e| e.losses.l_total).collect();
    let (t0, t1) = ends(&totals);
    let report = ExperimentReport {
        seed: config.seed,
        translator_params: count_params(&translation.translator.params),
        denoiser_params: count_params(&pretrain.denoiser.params),
        pretrain_loss_start: p0,
        pretrain_loss_end: p1,
        translator_loss_start: t0,
        translator_loss_end: t1,
        gaussian_check,
        ablation,
        noise_shift,
    };
    Ok(Experiment {
        report,
        denoiser: pretrain.denoiser.clone(),
        translator: translation.translator.clone(),
        pretrain,
        translation,
    })
}
