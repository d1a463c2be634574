use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cdlnet::checkpoint::{load_checkpoint, save_checkpoint};
use cdlnet::config::RunConfig;
use cdlnet::eval::{degrade, evaluate, noise_seed, reconstruct, sigma_for, Degraded};
use cdlnet::export::{dict_mosaic, filter_usage, save_filter_dump, usage_order};
use cdlnet::image::{make_bayer_mask, nearest_fill, psnr};
use cdlnet::io::{read_image, write_image};
use cdlnet::model::{ModelParams, Task};
use cdlnet::noise::{estimate_mad, estimate_pca, NoiseMethod, DEFAULT_PCA_PATCH};
use cdlnet::synth::synth_set;
use cdlnet::train::{load_datasets, train_with, Dataset, DatasetRole, LogRow};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

#[derive(Parser)]
#[command(name = "cdlnet", version, about = "Unrolled convolutional dictionary learning for denoising and demosaicing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimator {
    Gt,
    Mad,
    Pca,
}

impl From<Estimator> for NoiseMethod {
    fn from(e: Estimator) -> Self {
        match e {
            Estimator::Gt => NoiseMethod::GroundTruth,
            Estimator::Mad => NoiseMethod::Mad,
            Estimator::Pca => NoiseMethod::Pca,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BlindEstimator {
    Mad,
    Pca,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes <out>/model.ckpt and <out>/log.csv
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides max_epochs from the config
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Overrides seed from the config
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Denoise one image
    Denoise {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Noise level on the 0-255 scale; required with --estimator gt
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, value_enum, default_value = "gt")]
        estimator: Estimator,
        /// Treat the input as clean, add noise of level --sigma, and report PSNR
        #[arg(long)]
        synth: bool,
        /// Clean reference for a PSNR printout
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Joint demosaicing and denoising of an RGGB mosaic
    Jdd {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sigma: f64,
        /// The input is already a mosaic (unobserved samples are ignored)
        #[arg(long)]
        mosaiced: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// PSNR sweep over a test directory; writes a CSV report
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        test_dir: PathBuf,
        /// Comma-separated noise levels
        #[arg(long, value_delimiter = ',', default_values_t = [15.0, 25.0, 50.0])]
        sigmas: Vec<f64>,
        #[arg(long, value_enum, default_value = "gt")]
        estimator: Estimator,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the dictionary as a mosaic image and a raw dump
    ExportDict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Order filters by mean code activation over these images
        #[arg(long)]
        usage_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 25.0)]
        sigma: f64,
    },
    /// Estimate the noise level of an image
    EstimateNoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "mad")]
        estimator: BlindEstimator,
    },
    /// Write procedural training images
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_model(path: &Path) -> Result<ModelParams> {
    Ok(load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?.model)
}

fn read(path: &Path) -> Result<cdlnet::Image> {
    read_image(path).with_context(|| format!("cannot read {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_train(config: &Path, out: &Path, max_epochs: Option<usize>, seed: Option<u64>) -> Result<()> {
    let mut run = RunConfig::load(config)?;
    if let Some(e) = max_epochs {
        run.train.max_epochs = e;
    }
    if let Some(s) = seed {
        run.train.seed = s;
    }
    if let Some(dir) = &run.train_dir {
        if !dir.is_dir() {
            bail!("dataset directory {} does not exist", dir.display());
        }
    }
    let (train_ds, val_ds) = load_datasets(&run)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut log = fs::File::create(out.join("log.csv"))?;
    writeln!(log, "{}", LogRow::CSV_HEADER)?;
    let mut write_err = None;
    let result = train_with(&run.train, run.model, &train_ds, &val_ds, |row| {
        if let Some(p) = row.val_psnr {
            info!("epoch {} loss {:.4e} val {:.3} dB", row.epoch, row.loss, p);
        }
        if let Err(e) = writeln!(log, "{}", row.to_csv()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("cannot write log.csv");
    }
    save_checkpoint(&result.record, out.join("model.ckpt"))?;
    fs::write(out.join("config.txt"), run.to_text())?;
    println!("checkpoint={}", out.join("model.ckpt").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_denoise(
    ckpt: &Path,
    input: &Path,
    out: &Path,
    sigma: Option<f64>,
    estimator: Estimator,
    synth: bool,
    reference: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let theta = load_model(ckpt)?;
    if theta.config.task != Task::Denoise {
        bail!("checkpoint is a {} model; use the jdd command", theta.config.task.as_str());
    }
    let img = read(input)?;
    if img.channels() != theta.config.channels {
        bail!("model expects {} channels, {} has {}", theta.config.channels, input.display(), img.channels());
    }
    let (y, clean) = if synth {
        let s = sigma.context("--synth needs --sigma")?;
        let d = degrade(&img, Task::Denoise, s, noise_seed(seed, &stem(input), s))?;
        (d.y, Some(img))
    } else {
        let clean = reference.map(read).transpose()?;
        (img, clean)
    };
    let method = NoiseMethod::from(estimator);
    let used = match (method, sigma) {
        (NoiseMethod::GroundTruth, None) => bail!("--estimator gt needs --sigma"),
        (m, s) => sigma_for(&y, m, s.unwrap_or(0.0))?,
    };
    let d = Degraded { y, mask: None };
    let x_hat = reconstruct(&theta, &d, used)?;
    write_image(out, &x_hat)?;
    println!("sigma_used={used:.4}");
    if let Some(x) = clean {
        println!("psnr_noisy={:.6}", psnr(&x, &d.y)?);
        println!("psnr={:.6}", psnr(&x, &x_hat)?);
    }
    Ok(())
}

fn cmd_jdd(ckpt: &Path, input: &Path, out: &Path, sigma: f64, mosaiced: bool, seed: u64) -> Result<()> {
    let theta = load_model(ckpt)?;
    if theta.config.task != Task::Jdd {
        bail!("checkpoint is a {} model; use the denoise command", theta.config.task.as_str());
    }
    let img = read(input)?;
    if img.channels() != 3 {
        bail!("{} is not an RGB image", input.display());
    }
    let (d, clean) = if mosaiced {
        let m = make_bayer_mask(img.height(), img.width())?;
        let y = cdlnet::image::apply_mask(&m, &img)?;
        (Degraded { y, mask: Some(m) }, None)
    } else {
        (degrade(&img, Task::Jdd, sigma, noise_seed(seed, &stem(input), sigma))?, Some(img))
    };
    let x_hat = reconstruct(&theta, &d, sigma)?;
    write_image(out, &x_hat)?;
    if let Some(x) = clean {
        let m = d.mask.as_ref().expect("mosaic");
        println!("psnr_nearest_fill={:.6}", psnr(&x, &nearest_fill(&d.y, m)?)?);
        println!("psnr={:.6}", psnr(&x, &x_hat)?);
    }
    Ok(())
}

fn cmd_eval(ckpt: &Path, dir: &Path, sigmas: &[f64], estimator: Estimator, seed: u64, out: &Path) -> Result<()> {
    let theta = load_model(ckpt)?;
    if !dir.is_dir() {
        bail!("test directory {} does not exist", dir.display());
    }
    let ds = Dataset::from_dir(dir, DatasetRole::Test, theta.config.channels)?;
    let report = evaluate(&theta, ds.images(), ds.names(), sigmas, estimator.into(), seed)?;
    fs::write(out, report.to_csv()).with_context(|| format!("cannot write {}", out.display()))?;
    for a in &report.aggregates {
        println!("sigma={} psnr_noisy={:.4} psnr={:.4}", a.sigma, a.psnr_noisy, a.psnr_out);
    }
    Ok(())
}

fn cmd_export(ckpt: &Path, out: &Path, usage_dir: Option<&Path>, sigma: f64) -> Result<()> {
    let theta = load_model(ckpt)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let order = match usage_dir {
        Some(dir) => {
            let ds = Dataset::from_dir(dir, DatasetRole::Test, theta.config.channels)?;
            let usage = filter_usage(&theta, ds.images(), sigma)?;
            let order = usage_order(&usage);
            let mut csv = String::from("rank,filter,usage\n");
            for (rank, &f) in order.iter().enumerate() {
                csv.push_str(&format!("{},{},{:.9e}\n", rank + 1, f + 1, usage[f]));
            }
            fs::write(out.join("usage.csv"), csv)?;
            Some(order)
        }
        None => None,
    };
    write_image(out.join("dict.png"), &dict_mosaic(&theta.dict, order.as_deref())?)?;
    save_filter_dump(&theta.dict, out.join("dict.bin"))?;
    Ok(())
}

fn cmd_estimate(input: &Path, estimator: BlindEstimator) -> Result<()> {
    let y = read(input)?;
    let est = match estimator {
        BlindEstimator::Mad => estimate_mad(&y)?,
        BlindEstimator::Pca => estimate_pca(&y, DEFAULT_PCA_PATCH)?,
    };
    println!(
        "method={} sigma_hat={:.4} elapsed_ms={:.3}",
        est.method.as_str(),
        est.sigma_hat,
        est.elapsed.as_secs_f64() * 1e3
    );
    Ok(())
}

fn cmd_synth(out: &Path, count: usize, size: usize, channels: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    for (k, img) in synth_set(count, size, size, channels, seed)?.iter().enumerate() {
        write_image(out.join(format!("synth{k:03}.png")), img)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, max_epochs, seed } => cmd_train(&config, &out, max_epochs, seed),
        Command::Denoise { ckpt, input, out, sigma, estimator, synth, reference, seed } => {
            cmd_denoise(&ckpt, &input, &out, sigma, estimator, synth, reference.as_deref(), seed)
        }
        Command::Jdd { ckpt, input, out, sigma, mosaiced, seed } => cmd_jdd(&ckpt, &input, &out, sigma, mosaiced, seed),
        Command::Eval { ckpt, test_dir, sigmas, estimator, seed, out } => {
            cmd_eval(&ckpt, &test_dir, &sigmas, estimator, seed, &out)
        }
        Command::ExportDict { ckpt, out, usage_dir, sigma } => cmd_export(&ckpt, &out, usage_dir.as_deref(), sigma),
        Command::EstimateNoise { input, estimator } => cmd_estimate(&input, estimator),
        Command::SynthData { out, count, size, channels, seed } => cmd_synth(&out, count, size, channels, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
