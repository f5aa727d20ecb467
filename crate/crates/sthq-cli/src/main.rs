//! Command-line harness: training runs, encode/decode, evaluation, beta
//! sweeps, and the scalar-vs-vector / beta-zero ablations.
//!
//! Every run directory is self-describing: the exact effective config is
//! echoed to `config.txt`, and the same (config, seed) pair reproduces the
//! metrics CSV byte for byte. `STHQ_THREADS` caps evaluation parallelism.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::KvConfig;
use sthq::coder::CoderKind;
use sthq::pipelines::autoencoder::{
    compress_image, decompress_image, eval_images, train_stage1, train_stage2, AeCodec, AeConfig,
    TrainedAe,
};
use sthq::pipelines::data::{texture_set, two_moons, GrayImage};
use sthq::pipelines::imageio::{read_image, write_image};
use sthq::pipelines::metrics::{write_metrics_csv, MetricsRow};
use sthq::pipelines::model::Model;
use sthq::pipelines::netcompress::{accuracy, compress, train_baseline, NetCompressConfig};
use sthq::rng::SeedTree;

#[derive(Parser)]
#[command(name = "sthq", about = "Soft-to-hard quantized compression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the image autoencoder (two stages) and evaluate it.
    TrainAe {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// key=value override; repeatable, wins over the config file.
        #[arg(long = "set")]
        sets: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the desk classifier baseline and compress its weights.
    TrainNetcompress {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        sets: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compress one image against a trained autoencoder run.
    Encode {
        /// run directory produced by train-ae
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decompress an artifact produced by `encode`.
    Decode {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained autoencoder run over an image set.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// directory of images; generated textures when omitted
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Rate-distortion sweep: one stage-1 model, one stage-2 run per beta.
    SweepBeta {
        #[arg(long)]
        out: PathBuf,
        /// comma-separated beta_total values
        #[arg(long)]
        betas: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        sets: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Matched-configuration experiments.
    Ablation {
        /// scalar-vs-vector | beta-zero
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        sets: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

const AE_KEYS: &[(&str, &str)] = &[
    ("seed", "1"),
    ("image_size", "32"),
    ("train_images", "64"),
    ("eval_images", "32"),
    ("image_dir", ""),
    ("bottleneck_channels", "4"),
    ("hidden_channels", "8"),
    ("residual_blocks", "0"),
    ("l", "64"),
    ("patch_h", "2"),
    ("patch_w", "2"),
    ("beta_total", "3e-3"),
    ("lambda", "1e-9"),
    ("stage1_iters", "1500"),
    ("stage1_lr", "2e-3"),
    ("stage2_iters", "4000"),
    ("stage2_lr", "5e-4"),
    ("batch", "8"),
    ("half_life", "250"),
    ("gain", "auto"),
    ("gain_factor", "0.1"),
    ("hist_interval", "10"),
    ("coder", "arith"),
    ("ablation_vector_l", "1000"),
    ("ablation_scalar_l", "6"),
];

const NET_KEYS: &[(&str, &str)] = &[
    ("seed", "1"),
    ("hidden1", "128"),
    ("hidden2", "128"),
    ("l", "16"),
    ("beta_total", "5e-4"),
    ("lambda", "1e-6"),
    ("sigma0", "auto"),
    ("growth", "1.001"),
    ("switch_factor", "20"),
    ("baseline_iters", "800"),
    ("baseline_lr", "3e-3"),
    ("max_soft_iters", "4000"),
    ("finetune_iters", "300"),
    ("lr", "0.01"),
    ("grad_clip", "1"),
    ("batch", "64"),
    ("hist_interval", "10"),
    ("coder", "arith"),
    ("train_n", "2000"),
    ("test_n", "1000"),
    ("noise", "0.08"),
];

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::TrainAe { out, config, sets, seed } => {
            let cfg = build_config(AE_KEYS, config.as_deref(), &sets, seed)?;
            train_ae_cmd(&out, &cfg)
        }
        Command::TrainNetcompress { out, config, sets, seed } => {
            let cfg = build_config(NET_KEYS, config.as_deref(), &sets, seed)?;
            train_net_cmd(&out, &cfg)
        }
        Command::Encode { run, input, out } => encode_cmd(&run, &input, &out),
        Command::Decode { run, input, out } => decode_cmd(&run, &input, &out),
        Command::Eval { run, images } => eval_cmd(&run, images.as_deref()),
        Command::SweepBeta { out, betas, config, sets, seed } => {
            let cfg = build_config(AE_KEYS, config.as_deref(), &sets, seed)?;
            sweep_beta_cmd(&out, &betas, &cfg)
        }
        Command::Ablation { mode, out, config, sets, seed } => match mode.as_str() {
            "scalar-vs-vector" => {
                let cfg = build_config(AE_KEYS, config.as_deref(), &sets, seed)?;
                ablation_scalar_vector_cmd(&out, &cfg)
            }
            "beta-zero" => {
                let cfg = build_config(AE_KEYS, config.as_deref(), &sets, seed)?;
                ablation_beta_zero_cmd(&out, &cfg)
            }
            other => bail!("unknown ablation mode `{other}` (scalar-vs-vector | beta-zero)"),
        },
    }
}

fn build_config(
    keys: &[(&'static str, &str)],
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
) -> Result<KvConfig> {
    let mut cfg = KvConfig::new(keys);
    if let Some(path) = file {
        cfg.load_file(path)?;
    }
    cfg.apply_overrides(sets)?;
    if let Some(s) = seed {
        cfg.set("seed", s.to_string());
    }
    Ok(cfg)
}

fn parse_coder(s: &str) -> Result<CoderKind> {
    match s {
        "arith" => Ok(CoderKind::Arithmetic),
        "huffman" => Ok(CoderKind::Huffman),
        other => bail!("coder must be `arith` or `huffman`, got `{other}`"),
    }
}

fn ae_config_from(cfg: &KvConfig) -> Result<AeConfig> {
    Ok(AeConfig {
        image_size: cfg.get_usize("image_size")?,
        bottleneck_channels: cfg.get_usize("bottleneck_channels")?,
        hidden_channels: cfg.get_usize("hidden_channels")?,
        residual_blocks: cfg.get_usize("residual_blocks")?,
        l: cfg.get_usize("l")?,
        patch: (cfg.get_usize("patch_h")?, cfg.get_usize("patch_w")?),
        beta_total: cfg.get_f64("beta_total")?,
        lambda: cfg.get_f64("lambda")?,
        stage1_iters: cfg.get_usize("stage1_iters")?,
        stage1_lr: cfg.get_f64("stage1_lr")?,
        stage2_iters: cfg.get_usize("stage2_iters")?,
        stage2_lr: cfg.get_f64("stage2_lr")?,
        batch: cfg.get_usize("batch")?,
        half_life: cfg.get_f64("half_life")?,
        gain: match cfg.get_str("gain") {
            "auto" => None,
            v => Some(v.parse::<f64>().context("gain must be `auto` or a number")?),
        },
        gain_factor: cfg.get_f64("gain_factor")?,
        hist_interval: cfg.get_u64("hist_interval")?,
        coder: parse_coder(cfg.get_str("coder"))?,
    })
}

fn net_config_from(cfg: &KvConfig) -> Result<NetCompressConfig> {
    Ok(NetCompressConfig {
        hidden: (cfg.get_usize("hidden1")?, cfg.get_usize("hidden2")?),
        l: cfg.get_usize("l")?,
        beta_total: cfg.get_f64("beta_total")?,
        lambda: cfg.get_f64("lambda")?,
        sigma0: match cfg.get_str("sigma0") {
            "auto" => None,
            v => Some(v.parse::<f64>().context("sigma0 must be `auto` or a number")?),
        },
        growth: cfg.get_f64("growth")?,
        switch_factor: cfg.get_f64("switch_factor")?,
        baseline_iters: cfg.get_usize("baseline_iters")?,
        baseline_lr: cfg.get_f64("baseline_lr")?,
        max_soft_iters: cfg.get_usize("max_soft_iters")?,
        finetune_iters: cfg.get_usize("finetune_iters")?,
        lr: cfg.get_f64("lr")?,
        batch: cfg.get_usize("batch")?,
        hist_interval: cfg.get_u64("hist_interval")?,
        grad_clip: match cfg.get_str("grad_clip") {
            "none" => None,
            v => Some(v.parse::<f64>().context("grad_clip must be `none` or a number")?),
        },
        coder: parse_coder(cfg.get_str("coder"))?,
    })
}

fn prepare_run_dir(out: &Path, cfg: &KvConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.txt"), cfg.echo())?;
    Ok(())
}

/// Training images: generated textures plus any user-supplied directory.
fn load_train_images(cfg: &KvConfig, seeds: &SeedTree) -> Result<Vec<GrayImage>> {
    let size = cfg.get_usize("image_size")?;
    let mut images = texture_set(cfg.get_usize("train_images")?, size, &mut seeds.stream("ae.train-images"));
    let dir = cfg.get_str("image_dir");
    if !dir.is_empty() {
        for path in sorted_image_paths(Path::new(dir))? {
            let img = read_image(&path)?;
            if img.w != size || img.h != size {
                bail!(
                    "{}: expected {size}x{size} images, got {}x{}",
                    path.display(),
                    img.w,
                    img.h
                );
            }
            images.push(img);
        }
    }
    Ok(images)
}

fn sorted_image_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                Some("png") | Some("pgm") | Some("ppm")
            )
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn eval_row(run_id: String, ae: &AeConfig, trained: &TrainedAe, images: &[GrayImage]) -> Result<MetricsRow> {
    let summary = eval_images(&trained.codec, images)?;
    Ok(MetricsRow {
        run_id,
        beta_total: ae.beta_total,
        l: ae.l,
        dim: ae.patch.0 * ae.patch.1,
        bpp_or_bpw: summary.bpp,
        h_p_bits: trained.h_p_bits,
        coded_bits: summary.coded_bits,
        mse: Some(summary.mse),
        psnr_db: Some(summary.psnr_db),
        accuracy: None,
    })
}

fn train_ae_cmd(out: &Path, cfg: &KvConfig) -> Result<()> {
    prepare_run_dir(out, cfg)?;
    let seeds = SeedTree::new(cfg.get_u64("seed")?);
    let ae = ae_config_from(cfg)?;
    let images = load_train_images(cfg, &seeds)?;
    let eval_set = texture_set(
        cfg.get_usize("eval_images")?,
        cfg.get_usize("image_size")?,
        &mut seeds.stream("ae.eval-images"),
    );

    let stage1 = train_stage1(&ae, &images, &seeds)?;
    let trained = train_stage2(&ae, &stage1, &images, &seeds, Some(&out.join("telemetry.csv")))?;
    trained.codec.save(out)?;

    let row = eval_row(format!("train-ae-seed{}", cfg.get_u64("seed")?), &ae, &trained, &eval_set)?;
    write_metrics_csv(&out.join("metrics.csv"), &[row])?;
    println!("trained autoencoder run written to {}", out.display());
    Ok(())
}

fn train_net_cmd(out: &Path, cfg: &KvConfig) -> Result<()> {
    prepare_run_dir(out, cfg)?;
    let seeds = SeedTree::new(cfg.get_u64("seed")?);
    let net = net_config_from(cfg)?;
    let train = two_moons(cfg.get_usize("train_n")?, cfg.get_f64("noise")?, &mut seeds.stream("train"));
    let test = two_moons(cfg.get_usize("test_n")?, cfg.get_f64("noise")?, &mut seeds.stream("test"));

    let baseline = train_baseline(&net, &train, &seeds)?;
    let baseline_acc = accuracy(&baseline, &test)?;
    baseline.save(&out.join("baseline.sthm"))?;

    let result = compress(&net, &baseline, &train, &test, &seeds, Some(&out.join("telemetry.csv")))?;
    result.model.save(&out.join("quantized.sthm"))?;
    fs::write(out.join("weights.sthq"), result.bitstream.to_bytes())?;

    let d = result.model.param_count();
    let rows = vec![
        MetricsRow {
            run_id: format!("baseline-seed{}", cfg.get_u64("seed")?),
            beta_total: 0.0,
            l: net.l,
            dim: 1,
            bpp_or_bpw: 32.0,
            h_p_bits: 0.0,
            coded_bits: d as u64 * 32,
            mse: None,
            psnr_db: None,
            accuracy: Some(baseline_acc),
        },
        MetricsRow {
            run_id: format!("netcompress-seed{}", cfg.get_u64("seed")?),
            beta_total: net.beta_total,
            l: net.l,
            dim: 1,
            bpp_or_bpw: result.bits_per_weight,
            h_p_bits: result.h_p_bits,
            coded_bits: result.bitstream.total_bits(),
            mse: None,
            psnr_db: None,
            accuracy: Some(result.quantized_accuracy),
        },
    ];
    write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    println!(
        "baseline acc {:.4}, quantized acc {:.4}, {:.3} bits/weight (factor {:.2}) -> {}",
        baseline_acc,
        result.quantized_accuracy,
        result.bits_per_weight,
        result.compression_factor,
        out.display()
    );
    Ok(())
}

fn encode_cmd(run: &Path, input: &Path, out: &Path) -> Result<()> {
    let codec = AeCodec::load(run)?;
    let img = read_image(input)?;
    let artifact = compress_image(&codec, &img)?;
    fs::write(out, &artifact.bytes)?;
    let bpp = artifact.payload_bits as f64 / (img.w * img.h) as f64;
    println!("{} -> {} ({} symbols, {:.4} bpp)", input.display(), out.display(), artifact.stream.len(), bpp);
    Ok(())
}

fn decode_cmd(run: &Path, input: &Path, out: &Path) -> Result<()> {
    let model = Model::load(&run.join("model.sthm"))?;
    let bytes = fs::read(input)?;
    let img = decompress_image(&model, &bytes)?;
    write_image(out, &img)?;
    println!("{} -> {}", input.display(), out.display());
    Ok(())
}

fn eval_cmd(run: &Path, images: Option<&Path>) -> Result<()> {
    let codec = AeCodec::load(run)?;
    let cfg_text = fs::read_to_string(run.join("config.txt"))
        .with_context(|| format!("{} is not a train-ae run directory", run.display()))?;
    let mut cfg = KvConfig::new(AE_KEYS);
    for line in cfg_text.lines() {
        cfg.apply_line(line)?;
    }
    let seeds = SeedTree::new(cfg.get_u64("seed")?);
    let set: Vec<GrayImage> = match images {
        Some(dir) => sorted_image_paths(dir)?
            .iter()
            .map(|p| read_image(p))
            .collect::<sthq::Result<_>>()?,
        None => texture_set(
            cfg.get_usize("eval_images")?,
            cfg.get_usize("image_size")?,
            &mut seeds.stream("ae.eval-images"),
        ),
    };
    if set.is_empty() {
        bail!("no images to evaluate");
    }
    let summary = eval_images(&codec, &set)?;
    let row = MetricsRow {
        run_id: format!("eval-seed{}", cfg.get_u64("seed")?),
        beta_total: cfg.get_f64("beta_total")?,
        l: codec.centers.len(),
        dim: codec.centers.dim(),
        bpp_or_bpw: summary.bpp,
        h_p_bits: summary.h_stream_bits,
        coded_bits: summary.coded_bits,
        mse: Some(summary.mse),
        psnr_db: Some(summary.psnr_db),
        accuracy: None,
    };
    write_metrics_csv(&run.join("metrics.csv"), &[row.clone()])?;
    println!("{}", row.to_csv_line());
    Ok(())
}

fn sweep_beta_cmd(out: &Path, betas: &str, cfg: &KvConfig) -> Result<()> {
    let betas: Vec<f64> = betas
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad beta `{s}`")))
        .collect::<Result<_>>()?;
    if betas.is_empty() {
        bail!("sweep-beta needs at least one beta value");
    }
    prepare_run_dir(out, cfg)?;
    let seeds = SeedTree::new(cfg.get_u64("seed")?);
    let base = ae_config_from(cfg)?;
    let images = load_train_images(cfg, &seeds)?;
    let eval_set = texture_set(
        cfg.get_usize("eval_images")?,
        cfg.get_usize("image_size")?,
        &mut seeds.stream("ae.eval-images"),
    );

    // stage 1 does not depend on beta: train once, reuse across points
    let stage1 = train_stage1(&base, &images, &seeds)?;
    let mut rows = Vec::new();
    for (i, &beta) in betas.iter().enumerate() {
        let point_dir = out.join(format!("beta{i}"));
        fs::create_dir_all(&point_dir)?;
        let ae = AeConfig { beta_total: beta, ..base.clone() };
        let trained =
            train_stage2(&ae, &stage1, &images, &seeds, Some(&point_dir.join("telemetry.csv")))?;
        trained.codec.save(&point_dir)?;
        rows.push(eval_row(format!("sweep-beta{i}"), &ae, &trained, &eval_set)?);
    }
    write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    println!("{} rate-distortion points -> {}", rows.len(), out.display());
    Ok(())
}

/// Matched unique-assignment counts: vector patches against scalar centers
/// on the same data and seeds.
fn ablation_scalar_vector_cmd(out: &Path, cfg: &KvConfig) -> Result<()> {
    prepare_run_dir(out, cfg)?;
    let seeds = SeedTree::new(cfg.get_u64("seed")?);
    let images = load_train_images(cfg, &seeds)?;
    let eval_set = texture_set(
        cfg.get_usize("eval_images")?,
        cfg.get_usize("image_size")?,
        &mut seeds.stream("ae.eval-images"),
    );

    let vector = AeConfig {
        l: cfg.get_usize("ablation_vector_l")?,
        patch: (2, 2),
        ..ae_config_from(cfg)?
    };
    let scalar = AeConfig { l: cfg.get_usize("ablation_scalar_l")?, patch: (1, 1), ..vector.clone() };

    let stage1 = train_stage1(&vector, &images, &seeds)?;
    let mut rows = Vec::new();
    for (name, ae) in [("vector", &vector), ("scalar", &scalar)] {
        let dir = out.join(name);
        fs::create_dir_all(&dir)?;
        let trained = train_stage2(ae, &stage1, &images, &seeds, Some(&dir.join("telemetry.csv")))?;
        trained.codec.save(&dir)?;
        rows.push(eval_row(format!("ablation-{name}"), ae, &trained, &eval_set)?);
    }
    write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    println!("scalar-vs-vector ablation -> {}", out.display());
    Ok(())
}

fn ablation_beta_zero_cmd(out: &Path, cfg: &KvConfig) -> Result<()> {
    prepare_run_dir(out, cfg)?;
    let seeds = SeedTree::new(cfg.get_u64("seed")?);
    let base = ae_config_from(cfg)?;
    let images = load_train_images(cfg, &seeds)?;
    let eval_set = texture_set(
        cfg.get_usize("eval_images")?,
        cfg.get_usize("image_size")?,
        &mut seeds.stream("ae.eval-images"),
    );

    let stage1 = train_stage1(&base, &images, &seeds)?;
    let mut rows = Vec::new();
    for (name, beta) in [("with-entropy", base.beta_total), ("beta-zero", 0.0)] {
        let dir = out.join(name);
        fs::create_dir_all(&dir)?;
        let ae = AeConfig { beta_total: beta, ..base.clone() };
        let trained = train_stage2(&ae, &stage1, &images, &seeds, Some(&dir.join("telemetry.csv")))?;
        trained.codec.save(&dir)?;
        rows.push(eval_row(format!("ablation-{name}"), &ae, &trained, &eval_set)?);
    }
    write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    println!("beta-zero ablation -> {}", out.display());
    Ok(())
}
