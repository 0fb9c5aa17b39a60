use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use ccdf_core::change_segmentation::binarize;
use ccdf_core::dataio::{
    load_binary_map, load_change_map, load_raster, load_reference_map, make_synthetic_pair, save_binary_map,
    save_change_map, save_raster, save_reference_map, BinaryMap, RefEncoding, SyntheticSpec,
};
use ccdf_core::metrics::{accumulate_confusion, EvaluationReport};
use ccdf_core::nn::{Generator, ParamStore, SegmentationNet};
use ccdf_core::preprocess::standardize_with;
use ccdf_core::trainer::{
    self, infer_full_image, run_stage1, run_stage2, run_stage3, PatchPairs, TrainConfig, TrainReport, G12_FILE,
    REPORT_FILE, SEGMENTER_FILE,
};

#[derive(Parser)]
#[command(name = "ccdf", version, about = "Unsupervised change detection for bi-temporal rasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic image pair and its reference map.
    Synth {
        /// Scene description (TOML or JSON). Defaults to the built-in 256x256 toy scene.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Seed for the built-in scene when no spec is given.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage or all three.
    Train {
        #[arg(long)]
        t1: PathBuf,
        #[arg(long)]
        t2: PathBuf,
        /// Training configuration (TOML or JSON). Unknown keys are rejected.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in configuration used when no config file is given.
        #[arg(long, value_enum, default_value_t = Preset::Wh)]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = StageArg::All)]
        stage: StageArg,
    },
    /// Predict a change map with a trained segmenter.
    Infer {
        #[arg(long)]
        t1: PathBuf,
        #[arg(long)]
        t2: PathBuf,
        /// Segmenter checkpoint, or the training output directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Probability map (`.tif`/`.raw` keep full precision, `.png` is 8-bit).
        #[arg(long)]
        out: PathBuf,
        /// Binary map; defaults to `<out stem>_binary.png` next to `--out`.
        #[arg(long)]
        binary: Option<PathBuf>,
        /// Overrides the threshold stored with the checkpoint.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score a predicted map against a reference map.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = Encoding::Color)]
        encoding: Encoding,
        /// Threshold for probability maps; binary PNG maps are used as is.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Wh,
    Hy,
    Toy,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoding {
    Color,
    Integer,
}

impl From<Encoding> for RefEncoding {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Color => RefEncoding::Color,
            Encoding::Integer => RefEncoding::Integer,
        }
    }
}

fn read_structured<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn synth(spec: Option<PathBuf>, seed: u64, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(path) => read_structured::<SyntheticSpec>(&path)?,
        None => SyntheticSpec::toy(seed),
    };
    let (t1, t2, reference) = make_synthetic_pair(&spec)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_raster(&t1, out.join("t1.tif"))?;
    save_raster(&t2, out.join("t2.tif"))?;
    save_reference_map(&reference, out.join("reference.png"), RefEncoding::Color)?;
    println!(
        "wrote {}x{}x{} pair with {} changed pixels to {}",
        t1.width(),
        t1.height(),
        t1.channels(),
        reference.count(ccdf_core::dataio::RefLabel::Changed),
        out.display()
    );
    Ok(())
}

fn load_config(config: Option<PathBuf>, preset: Preset) -> Result<TrainConfig> {
    let mut cfg = match config {
        Some(path) => TrainConfig::from_file(&path)?,
        None => match preset {
            Preset::Wh => TrainConfig::wh(),
            Preset::Hy => TrainConfig::hy(),
            Preset::Toy => TrainConfig::toy(),
        },
    };
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn train(t1: &Path, t2: &Path, cfg: TrainConfig, out: &Path, stage: StageArg) -> Result<()> {
    let i1 = load_raster(t1)?;
    let i2 = load_raster(t2)?;
    let pairs = PatchPairs::from_images(&i1, &i2, &cfg)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let report_path = out.join(REPORT_FILE);
    let mut report = if stage != StageArg::All && report_path.exists() {
        let previous: TrainReport = read_structured(&report_path)?;
        TrainReport {
            config: cfg.clone(),
            ..previous
        }
    } else {
        TrainReport::new(cfg.clone())
    };
    let start = std::time::Instant::now();
    let dtype = cfg.dtype();
    let runs = |s: u8| match stage {
        StageArg::All => true,
        StageArg::One => s == 1,
        StageArg::Two => s == 2,
        StageArg::Three => s == 3,
    };

    let mut g12 = None;
    if runs(1) {
        let (a, b, r) = run_stage1(&pairs, &cfg)?;
        trainer::save_generators(out, &a, &b, &cfg, 1, &mut report)?;
        replace_stage(&mut report, r);
        g12 = Some(a);
    }
    let mut seg = None;
    if runs(2) {
        let g = match g12.take() {
            Some(g) => g,
            None => Generator::load(out.join(G12_FILE), dtype)?,
        };
        let (s, r) = run_stage2(&pairs, &g, &cfg)?;
        trainer::save_segmenter(out, &s, &cfg, 2, &mut report)?;
        replace_stage(&mut report, r);
        g12 = Some(g);
        seg = Some(s);
    }
    if runs(3) {
        let g = match g12.take() {
            Some(g) => g,
            None => Generator::load(out.join(G12_FILE), dtype)?,
        };
        let s = match seg.take() {
            Some(s) => s,
            None => SegmentationNet::load(out.join(SEGMENTER_FILE), dtype)?,
        };
        let (g, s, r) = run_stage3(&pairs, g, s, &cfg)?;
        trainer::save_generator(out, G12_FILE, &g, &cfg, 3, &mut report)?;
        trainer::save_segmenter(out, &s, &cfg, 3, &mut report)?;
        replace_stage(&mut report, r);
    }
    report.wall_clock_secs += start.elapsed().as_secs_f64();
    report.save(&report_path)?;
    for s in &report.stages {
        println!(
            "stage {}: {} epochs, final loss {:.6}, {:.1}s",
            s.stage,
            s.epoch_losses.len(),
            s.epoch_losses.last().copied().unwrap_or(f64::NAN),
            s.wall_clock_secs
        );
    }
    println!("report written to {}", report_path.display());
    Ok(())
}

fn replace_stage(report: &mut TrainReport, stage: trainer::StageReport) {
    report.stages.retain(|s| s.stage != stage.stage);
    report.stages.push(stage);
    report.stages.sort_by_key(|s| s.stage);
}

fn infer(t1: &Path, t2: &Path, checkpoint: &Path, out: &Path, binary: Option<PathBuf>, threshold: Option<f64>) -> Result<()> {
    let checkpoint = if checkpoint.is_dir() {
        checkpoint.join(SEGMENTER_FILE)
    } else {
        checkpoint.to_path_buf()
    };
    let meta = ParamStore::read_metadata(&checkpoint)?;
    let mut cfg: TrainConfig = match meta.get("train_config") {
        Some(json) => serde_json::from_str(json)?,
        None => bail!("{} carries no training configuration", checkpoint.display()),
    };
    if let Some(t) = threshold {
        cfg.threshold = t;
    }
    cfg.validate()?;
    let s = SegmentationNet::load(&checkpoint, cfg.dtype())?;
    let i1 = standardize_with(&load_raster(t1)?, cfg.standardize)?;
    let i2 = standardize_with(&load_raster(t2)?, cfg.standardize)?;
    let (mask, map) = infer_full_image(&i1, &i2, &s, &cfg)?;
    save_change_map(&mask, out)?;
    let binary = binary.unwrap_or_else(|| {
        let stem = out.file_stem().map_or_else(|| "map".into(), |s| s.to_string_lossy().into_owned());
        out.with_file_name(format!("{stem}_binary.png"))
    });
    save_binary_map(&map, &binary)?;
    println!(
        "{} of {} pixels changed; wrote {} and {}",
        map.changed_count(),
        map.width() * map.height(),
        out.display(),
        binary.display()
    );
    Ok(())
}

fn load_prediction(path: &Path, threshold: f64) -> Result<BinaryMap> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        Ok(load_binary_map(path)?)
    } else {
        Ok(binarize(&load_change_map(path)?, threshold)?)
    }
}

fn evaluate(pred: &Path, reference: &Path, report: &Path, encoding: Encoding, threshold: f64) -> Result<()> {
    let pred = load_prediction(pred, threshold)?;
    let reference = load_reference_map(reference, encoding.into())?;
    let cm = accumulate_confusion(&pred, &reference)?;
    let r = EvaluationReport::new(&cm)?;
    let json = r.to_json()?;
    std::fs::write(report, &json).with_context(|| format!("writing {}", report.display()))?;
    println!("{json}");
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth { spec, seed, out } => synth(spec, seed, &out),
        Command::Train {
            t1,
            t2,
            config,
            preset,
            out,
            stage,
        } => train(&t1, &t2, load_config(config, preset)?, &out, stage),
        Command::Infer {
            t1,
            t2,
            checkpoint,
            out,
            binary,
            threshold,
        } => infer(&t1, &t2, &checkpoint, &out, binary, threshold),
        Command::Evaluate {
            pred,
            reference,
            report,
            encoding,
            threshold,
        } => evaluate(&pred, &reference, &report, encoding, threshold),
    }
}
