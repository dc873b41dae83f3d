//! `ntnt`: train, apply and inspect the noise translator and its denoiser.
//!
//! Every command prints a JSON summary on stdout. Failures print a single
//! JSON object `{"error": {"kind", "message"}}` on stderr and exit non-zero.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{error::ErrorKind, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use ntnt_core::nets::{count_params, DenoiserParams, TranslatorParams};
use ntnt_core::pipeline::{
    ablate_gaussian_addition, analyze_noise, analyze_translation, denoise_only, denoise_pipeline,
    denoiser_from_checkpoint, evaluate, load_corpus, make_test_set, moving_average_ends, pretrain_denoiser,
    read_image, run_experiment, streams, synthetic_corpus, train_translator, translator_from_checkpoint,
    write_image, Corpus, Image, ImagePair, ModelCheckpoint, NoiseFamily, NoiseReport, RealNoiseSpec, TrainConfig,
    ABLATION_LEVELS,
};
use ntnt_core::rand_noise::Prng;

const LOSS_WINDOW: usize = 50;

#[derive(Parser)]
#[command(name = "ntnt", version, about = "Noise translation: train, denoise, evaluate, analyse")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON training config; missing fields take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides one config field, e.g. `--set pretrain.iterations=200`.
    /// The value is parsed as JSON, falling back to a string. Repeatable.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Training progress lines on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the Gaussian denoiser.
    Pretrain {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the translator in front of a frozen denoiser.
    TrainTranslator {
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Denoise an image or a directory of images, through the translator
    /// when one is given.
    Denoise {
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long)]
        translator: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gaussian check, addition ablation and noise shift on a test set.
    Eval {
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long)]
        translator: PathBuf,
        #[command(flatten)]
        test: TestSet,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Noise statistics of a noisy/clean pair, and of the translated noise
    /// when networks are given.
    Analyze {
        #[arg(long)]
        noisy: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        #[arg(long, requires = "denoiser")]
        translator: Option<PathBuf>,
        #[arg(long)]
        denoiser: Option<PathBuf>,
        /// Directory for the JSON report and histogram CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Denoiser quality with extra Gaussian noise added to its input.
    AblateAddition {
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long)]
        translator: Option<PathBuf>,
        /// Added levels in 8-bit units.
        #[arg(long, value_delimiter = ',', default_values_t = ABLATION_LEVELS.to_vec())]
        levels: Vec<f64>,
        #[command(flatten)]
        test: TestSet,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic clean images and their noisy versions.
    Synth {
        /// Defaults to the config's noise family.
        #[arg(long, value_enum)]
        family: Option<Family>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain, train the translator and evaluate on correlated noise.
    Experiment {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TestSet {
    /// Directory holding `clean/` and `noisy/` with matching file names.
    /// Without it the test set is synthesised from the config.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Noise family of synthesised test pairs.
    #[arg(long, value_enum, default_value_t = Family::Correlated)]
    noise: Family,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Mixture,
    Correlated,
    SignalDependent,
}

impl From<Family> for NoiseFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Mixture => NoiseFamily::Mixture,
            Family::Correlated => NoiseFamily::Correlated,
            Family::SignalDependent => NoiseFamily::SignalDependent,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.to_string().trim_end());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serialises"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            report_error(error_kind(&e), &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}

fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use ntnt_core::Error as E;
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<E>() {
            return match core {
                E::ShapeMismatch { .. } | E::InvalidShape { .. } | E::NonScalarLoss(_) => "shape",
                E::NonFinite { .. } => "non-finite",
                E::InvalidArgument(_) => "invalid-argument",
                E::Empty(_) => "empty",
                E::Image { .. } => "image",
                E::Checkpoint(_) => "checkpoint",
                E::Diverged(_) => "diverged",
                E::Io { .. } => "io",
                E::Json(_) => "json",
            };
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if cause.is::<serde_json::Error>() {
            return "config";
        }
    }
    "error"
}

fn run(cli: Cli) -> Result<Value> {
    let config = load_config(&cli.common)?;
    let verbose = cli.common.verbose;
    let mut log = |line: &str| {
        if verbose {
            eprintln!("{line}");
        }
    };
    match cli.command {
        Command::Pretrain { out } => {
            create_dir(&out)?;
            let corpus = Corpus::from_config(&config)?;
            let outcome = pretrain_denoiser(&config, &corpus.train, &mut log)?;
            let ck_path = out.join("denoiser.ntnt");
            outcome.checkpoint(&config)?.save(&ck_path)?;
            write_json(&out.join("pretrain_losses.json"), &outcome.losses)?;
            let (start, end) = loss_ends(&outcome.losses);
            Ok(json!({
                "checkpoint": ck_path,
                "iterations": outcome.losses.len(),
                "parameters": count_params(&outcome.denoiser.params),
                "loss_start": start,
                "loss_end": end,
            }))
        }
        Command::TrainTranslator { denoiser, out } => {
            create_dir(&out)?;
            let den = load_denoiser(&denoiser)?;
            let corpus = Corpus::from_config(&config)?;
            let outcome = train_translator(&config, &corpus.train, &den, &mut log)?;
            let ck_path = out.join("translator.ntnt");
            outcome.checkpoint(&config)?.save(&ck_path)?;
            write_json(&out.join("translator_history.json"), &outcome.history)?;
            let totals: Vec<f64> = outcome.history.iter().map(|e| e.losses.l_total).collect();
            let (start, end) = loss_ends(&totals);
            Ok(json!({
                "checkpoint": ck_path,
                "iterations": outcome.history.len(),
                "parameters": count_params(&outcome.translator.params),
                "loss_start": start,
                "loss_end": end,
            }))
        }
        Command::Denoise {
            denoiser,
            translator,
            input,
            out,
        } => {
            create_dir(&out)?;
            let den = load_denoiser(&denoiser)?;
            let tr = translator.as_deref().map(load_translator).transpose()?;
            let inputs = if input.is_dir() {
                load_corpus(&input)?
            } else {
                vec![(input.clone(), read_image(&input)?)]
            };
            let mut prng = Prng::new(config.seed).derive(streams::EVAL);
            let mut written = Vec::new();
            for (path, img) in &inputs {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                let mut entry = json!({ "input": path });
                match &tr {
                    Some(t) => {
                        let result = denoise_pipeline(img, t, &den, &mut prng)?;
                        let translated = out.join(image_name(stem, "translated", &result.translated));
                        write_image(&translated, &result.translated)?;
                        let denoised = out.join(image_name(stem, "denoised", &result.denoised));
                        write_image(&denoised, &result.denoised)?;
                        entry["translated"] = json!(translated);
                        entry["denoised"] = json!(denoised);
                    }
                    None => {
                        let result = denoise_only(img, &den)?;
                        let denoised = out.join(image_name(stem, "denoised", &result));
                        write_image(&denoised, &result)?;
                        entry["denoised"] = json!(denoised);
                    }
                }
                written.push(entry);
            }
            Ok(json!({ "images": written }))
        }
        Command::Eval {
            denoiser,
            translator,
            test,
            out,
        } => {
            let den = load_denoiser(&denoiser)?;
            let tr = load_translator(&translator)?;
            let pairs = test_pairs(&config, &test)?;
            let (gaussian_check, ablation, noise_shift) = evaluate(&config, &pairs, &den, &tr)?;
            let metrics = json!({
                "images": pairs.len(),
                "gaussian_check": gaussian_check,
                "ablation": ablation,
                "noise_shift": noise_shift,
            });
            if let Some(out) = out {
                create_dir(&out)?;
                write_json(&out.join("metrics.json"), &metrics)?;
            }
            Ok(metrics)
        }
        Command::Analyze {
            noisy,
            clean,
            translator,
            denoiser,
            out,
        } => {
            let pair = ImagePair::external(read_image(&clean)?, read_image(&noisy)?)?;
            let (before, after) = match (&translator, &denoiser) {
                (Some(t), Some(d)) => {
                    let (t, d) = (load_translator(t)?, load_denoiser(d)?);
                    let mut prng = Prng::new(config.seed).derive(streams::EVAL);
                    let (before, after) = analyze_translation(&pair, &t, &d, &mut prng)?;
                    (before, Some(after))
                }
                _ => (analyze_noise(&pair.noisy, &pair.clean)?, None),
            };
            if let Some(out) = &out {
                create_dir(out)?;
                write_report(out, "input", &before)?;
                if let Some(after) = &after {
                    write_report(out, "translated", after)?;
                }
            }
            Ok(json!({ "input": summary(&before), "translated": after.as_ref().map(summary) }))
        }
        Command::AblateAddition {
            denoiser,
            translator,
            levels,
            test,
            out,
        } => {
            let den = load_denoiser(&denoiser)?;
            let tr = translator.as_deref().map(load_translator).transpose()?;
            let pairs = test_pairs(&config, &test)?;
            let mut prng = Prng::new(config.seed).derive(streams::EVAL);
            let table = ablate_gaussian_addition(&pairs, &den, &levels, tr.as_ref(), &mut prng)?;
            let table = serde_json::to_value(&table)?;
            if let Some(out) = out {
                create_dir(&out)?;
                write_json(&out.join("ablation.json"), &table)?;
            }
            Ok(table)
        }
        Command::Synth {
            family,
            count,
            size,
            out,
        } => {
            let spec = RealNoiseSpec {
                family: family.map_or(config.real_noise.family, NoiseFamily::from),
                ..config.real_noise
            };
            let count = count.unwrap_or(config.synthetic.test_images);
            let size = size.unwrap_or(config.synthetic.size);
            if count == 0 || size == 0 {
                bail!(ntnt_core::Error::invalid("count and size must be >= 1"));
            }
            let root = Prng::new(config.seed);
            let clean = synthetic_corpus(&mut root.derive(streams::TEST_CORPUS), count, config.denoiser.channels, size);
            let pairs = make_test_set(&mut root.derive(streams::TEST_NOISE), &clean, &spec, usize::MAX)?;
            let (clean_dir, noisy_dir) = (out.join("clean"), out.join("noisy"));
            create_dir(&clean_dir)?;
            create_dir(&noisy_dir)?;
            for (i, pair) in pairs.iter().enumerate() {
                let stem = format!("{i:04}");
                write_image(&clean_dir.join(image_name(&stem, "", &pair.clean)), &pair.clean)?;
                write_image(&noisy_dir.join(image_name(&stem, "", &pair.noisy)), &pair.noisy)?;
            }
            Ok(json!({ "images": pairs.len(), "family": spec.family, "clean": clean_dir, "noisy": noisy_dir }))
        }
        Command::Experiment { out } => {
            create_dir(&out)?;
            let exp = run_experiment(&config, &mut log)?;
            exp.pretrain.checkpoint(&config)?.save(&out.join("denoiser.ntnt"))?;
            exp.translation.checkpoint(&config)?.save(&out.join("translator.ntnt"))?;
            write_json(&out.join("pretrain_losses.json"), &exp.pretrain.losses)?;
            write_json(&out.join("translator_history.json"), &exp.translation.history)?;
            let report = serde_json::to_value(&exp.report)?;
            write_json(&out.join("report.json"), &report)?;
            Ok(report)
        }
    }
}

/// Defaults, then the config file, then `--seed`, then each `--set` in order.
fn load_config(common: &Common) -> Result<TrainConfig> {
    let base = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str::<TrainConfig>(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    let mut value = serde_json::to_value(&base)?;
    if let Some(seed) = common.seed {
        value["seed"] = json!(seed);
    }
    for item in &common.set {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| anyhow!(ntnt_core::Error::invalid(format!("--set expects PATH=VALUE, got {item:?}"))))?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
        set_path(&mut value, path, parsed)?;
    }
    let config: TrainConfig = serde_json::from_value(value).context("applying config overrides")?;
    config.validate()?;
    Ok(config)
}

fn set_path(root: &mut Value, path: &str, new: Value) -> Result<()> {
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            bail!(ntnt_core::Error::invalid(format!("empty segment in --set path {path:?}")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| anyhow!(ntnt_core::Error::invalid(format!("{path:?}: {key:?} is not inside an object"))))?;
        if i + 1 == keys.len() {
            obj.insert((*key).to_owned(), new);
            return Ok(());
        }
        node = obj.entry(*key).or_insert_with(|| json!({}));
        if node.is_null() {
            *node = json!({});
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_denoiser(path: &Path) -> Result<DenoiserParams<f32>> {
    Ok(denoiser_from_checkpoint(&ModelCheckpoint::load(path)?)?)
}

fn load_translator(path: &Path) -> Result<TranslatorParams<f32>> {
    Ok(translator_from_checkpoint(&ModelCheckpoint::load(path)?)?)
}

fn loss_ends(values: &[f64]) -> (Option<f64>, Option<f64>) {
    match moving_average_ends(values, LOSS_WINDOW.min(values.len().max(1))) {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    }
}

fn image_name(stem: &str, tag: &str, img: &Image) -> String {
    let ext = if img.shape()[0] == 3 { "ppm" } else { "pgm" };
    if tag.is_empty() {
        format!("{stem}.{ext}")
    } else {
        format!("{stem}.{tag}.{ext}")
    }
}

fn test_pairs(config: &TrainConfig, test: &TestSet) -> Result<Vec<ImagePair>> {
    match &test.pairs {
        Some(dir) => {
            let clean = load_corpus(&dir.join("clean"))?;
            let noisy = load_corpus(&dir.join("noisy"))?;
            if clean.len() != noisy.len() {
                bail!(ntnt_core::Error::invalid(format!(
                    "{}: {} clean and {} noisy images",
                    dir.display(),
                    clean.len(),
                    noisy.len()
                )));
            }
            clean
                .into_iter()
                .zip(noisy)
                .map(|((cp, c), (np, n))| {
                    if cp.file_name() != np.file_name() {
                        bail!(ntnt_core::Error::invalid(format!(
                            "unmatched pair {} / {}",
                            cp.display(),
                            np.display()
                        )));
                    }
                    Ok(ImagePair::external(c, n)?)
                })
                .collect()
        }
        None => {
            let spec = RealNoiseSpec {
                family: test.noise.into(),
                ..config.real_noise
            };
            Ok(Corpus::from_config(config)?.test_pairs(config, &spec)?)
        }
    }
}

fn write_report(out: &Path, name: &str, report: &NoiseReport) -> Result<()> {
    write_json(&out.join(format!("{name}.json")), report)?;
    for (kind, csv) in report.histogram_csvs() {
        let path = out.join(format!("{name}.{kind}_histogram.csv"));
        fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// The report without its histograms.
fn summary(report: &NoiseReport) -> Value {
    let mut v = serde_json::to_value(report).expect("report serialises");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("spatial_histogram");
        obj.remove("freq_histogram");
    }
    v
}
