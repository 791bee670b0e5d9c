use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use serde_json::json;

use evovit::analysis::{
    cka_curve, compare_strategies, flop_report, pcc_curve, throughput_bench, write_curve_csv,
    write_pcc_csv, write_strategy_csv, StrategyKind,
};
use evovit::data::pnm::{read_image, to_bytes, write_pgm, write_ppm};
use evovit::data::{load_dataset, Dataset};
use evovit::encoder::checkpoint;
use evovit::encoder::{forward_traced, DenseRouter, EncoderConfig, Image, ModelParams, ModelTrace};
use evovit::evolution::{model_forward_evo_with, GlobalAttentionSelector, ScheduleMode};
use evovit::numeric::RngState;
use evovit::training::{train as train_model, EpochMetrics, ModelKind};

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{write_json, CliError};

const BENCH_PARAMS_STREAM: u64 = 0xBE7C;
const BENCH_IMAGES_STREAM: u64 = 0xBE7D;

/// Worker cap from `EVO_THREADS` (default 1).
fn threads() -> Result<usize, CliError> {
    match std::env::var("EVO_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => s
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Config(format!("EVO_THREADS={s:?} is not a positive integer"))),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| evovit::Error::io(dir, e).into())
}

fn check_dataset(cfg: &EncoderConfig, data: &Dataset) -> Result<(), CliError> {
    if let Some(img) = data.images.first() {
        if (img.height, img.width, img.channels) != (cfg.image_side, cfg.image_side, cfg.channels_in) {
            return Err(CliError::Config(format!(
                "dataset images are {}x{}x{}, encoder expects {s}x{s}x{}",
                img.height,
                img.width,
                img.channels,
                cfg.channels_in,
                s = cfg.image_side
            )));
        }
    }
    if data.num_classes > cfg.num_classes {
        return Err(CliError::Config(format!(
            "dataset has {} classes, encoder.num_classes is {}",
            data.num_classes, cfg.num_classes
        )));
    }
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = &cfg.output_dir;
    let reports = dir.join("reports");
    create_dir(&reports)?;
    let metrics_path = dir.join("metrics.jsonl");
    let ckpt_path = dir.join("checkpoint.bin");
    let mut manifest = RunManifest::new("train", cfg);
    manifest.outputs = vec![
        dir.join("manifest.json"),
        metrics_path.clone(),
        ckpt_path.clone(),
        reports.join("flops.json"),
        reports.join("summary.json"),
    ];
    manifest.write(dir)?;

    let splits = load_dataset(&cfg.dataset)?;
    check_dataset(&cfg.encoder, &splits.train)?;
    let file = File::create(&metrics_path).map_err(|e| evovit::Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let mut sink = |m: &EpochMetrics| -> evovit::Result<()> {
        let line = serde_json::to_string(m).expect("metrics serialize");
        writeln!(metrics, "{line}")
            .and_then(|_| metrics.flush())
            .map_err(|e| evovit::Error::io(&metrics_path, e))?;
        eprintln!(
            "epoch {:>3} [{}] loss {:.4} train {:.3} eval {:.3} ({:.1}s)",
            m.epoch, m.mode, m.loss, m.acc_train, m.acc_eval, m.seconds
        );
        Ok(())
    };
    let outcome = train_model(&cfg.encoder, &cfg.evo, &cfg.train, &splits.train, &splits.eval, threads()?, &mut sink)?;
    checkpoint::save(&ckpt_path, &cfg.encoder, &outcome.params)?;

    let evo = (cfg.train.model == ModelKind::Evo).then_some(&cfg.evo);
    if cfg.encoder.hidden() == 4 * cfg.encoder.embed_dim {
        write_json(&reports.join("flops.json"), &flop_report(&cfg.encoder, evo)?)?;
    }
    let last = outcome.metrics.last().expect("epochs >= 1");
    write_json(
        &reports.join("summary.json"),
        &json!({
            "model": cfg.train.model,
            "epochs": outcome.metrics.len(),
            "final": last,
            "train_samples": splits.train.len(),
            "eval_samples": splits.eval.len(),
        }),
    )?;
    manifest.finish(dir)
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Images per timed batch.
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Skip timing and report MAC counts only.
    #[arg(long)]
    flops_only: bool,
    /// Time these weights instead of a fresh initialization.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
}

fn shape(cfg: &EncoderConfig) -> String {
    format!(
        "image {}, patch {}, channels {}, dim {}, heads {}, depth {}, hidden {}, classes {}",
        cfg.image_side,
        cfg.patch_side,
        cfg.channels_in,
        cfg.embed_dim,
        cfg.heads,
        cfg.depth,
        cfg.hidden(),
        cfg.num_classes
    )
}

fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<ModelParams, CliError> {
    let (stored, params) = checkpoint::load(path)?;
    if stored != cfg.encoder {
        return Err(CliError::Config(format!(
            "checkpoint {} does not match the config: checkpoint [{}], config [{}]",
            path.display(),
            shape(&stored),
            shape(&cfg.encoder)
        )));
    }
    Ok(params)
}

fn side_manifest(cfg: &RunConfig, command: &str, outputs: Vec<PathBuf>) -> Result<RunManifest, CliError> {
    let reports = cfg.output_dir.join("reports");
    create_dir(&reports)?;
    let mut m = RunManifest::new(command, cfg);
    m.outputs = outputs;
    write_json(&reports.join(format!("{command}.manifest.json")), &m)?;
    Ok(m)
}

fn finish_side(cfg: &RunConfig, mut m: RunManifest) -> Result<(), CliError> {
    m.finished_unix = Some(crate::manifest::now_unix());
    write_json(&cfg.output_dir.join("reports").join(format!("{}.manifest.json", m.command)), &m)
}

pub fn bench(cfg: &RunConfig, args: &BenchArgs) -> Result<(), CliError> {
    let out_path = cfg.output_dir.join("reports").join("bench.json");
    let manifest = side_manifest(cfg, "bench", vec![out_path.clone()])?;
    let vanilla_flops = flop_report(&cfg.encoder, None)?;
    let evo_flops = flop_report(&cfg.encoder, Some(&cfg.evo))?;
    let timing = if args.flops_only {
        None
    } else {
        if args.batch == 0 {
            return Err(CliError::Config("--batch must be positive".into()));
        }
        let params = match &args.checkpoint {
            Some(p) => load_checkpoint(p, cfg)?,
            None => ModelParams::init(&cfg.encoder, &mut RngState::derived(cfg.train.seed, BENCH_PARAMS_STREAM))?,
        };
        let mut rng = RngState::derived(cfg.train.seed, BENCH_IMAGES_STREAM);
        let e = &cfg.encoder;
        let batch: Vec<Image> = (0..args.batch)
            .map(|_| {
                let n = e.image_side * e.image_side * e.channels_in;
                Image::new(e.image_side, e.image_side, e.channels_in, (0..n).map(|_| rng.uniform()).collect())
            })
            .collect::<evovit::Result<_>>()?;
        let v = throughput_bench(ModelKind::Vanilla, &params, e, &cfg.evo, &batch, args.warmup, args.repeats)?;
        let o = throughput_bench(ModelKind::Evo, &params, e, &cfg.evo, &batch, args.warmup, args.repeats)?;
        let speedup = v.p50_seconds / o.p50_seconds;
        Some(json!({ "threads": 1, "vanilla": v, "evo": o, "median_speedup": speedup }))
    };
    let report = json!({
        "config_sha256": cfg.hash(),
        "reduction_fraction": evo_flops.reduction_fraction,
        "flops": { "vanilla": vanilla_flops, "evo": evo_flops },
        "timing": timing,
    });
    write_json(&out_path, &report)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    finish_side(cfg, manifest)
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Linear CKA of each layer's mean patch token against the final CLS token.
    #[arg(long)]
    cka: bool,
    /// Pairwise Pearson correlation of patch-token queries per layer.
    #[arg(long)]
    pcc: bool,
    /// Eval accuracy of every selection strategy at the configured keep ratio.
    #[arg(long)]
    strategies: bool,
    /// Cap on evaluation images used.
    #[arg(long)]
    samples: Option<usize>,
}

fn trace(kind: ModelKind, image: &Image, params: &ModelParams, cfg: &RunConfig) -> evovit::Result<ModelTrace> {
    match kind {
        ModelKind::Vanilla => forward_traced(image, params, &cfg.encoder, &mut DenseRouter),
        ModelKind::Evo => Ok(model_forward_evo_with(
            image,
            params,
            &cfg.encoder,
            &cfg.evo,
            ScheduleMode::LayerWise,
            &mut GlobalAttentionSelector,
        )?
        .trace),
    }
}

#[derive(Serialize)]
struct AnalyzeSummary {
    model: ModelKind,
    samples: usize,
    cka: Option<Vec<f64>>,
    pcc_mean: Option<Vec<f64>>,
    strategies: Option<Vec<evovit::analysis::StrategyScore>>,
}

pub fn analyze(cfg: &RunConfig, args: &AnalyzeArgs) -> Result<(), CliError> {
    let all = !(args.cka || args.pcc || args.strategies);
    let reports = cfg.output_dir.join("reports");
    let mut outputs = vec![reports.join("analysis.json")];
    if all || args.cka {
        outputs.push(reports.join("cka.csv"));
    }
    if all || args.pcc {
        outputs.push(reports.join("pcc.csv"));
    }
    if all || args.strategies {
        outputs.push(reports.join("strategies.csv"));
    }
    let manifest = side_manifest(cfg, "analyze", outputs)?;
    let params = load_checkpoint(&args.checkpoint, cfg)?;
    let mut eval = load_dataset(&cfg.dataset)?.eval;
    if let Some(n) = args.samples {
        eval = eval.head(n);
    }
    check_dataset(&cfg.encoder, &eval)?;
    let kind = cfg.train.model;
    let traces = if all || args.cka || args.pcc {
        eval.images
            .iter()
            .map(|img| trace(kind, img, &params, cfg))
            .collect::<evovit::Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut summary = AnalyzeSummary {
        model: kind,
        samples: eval.len(),
        cka: None,
        pcc_mean: None,
        strategies: None,
    };
    if all || args.cka {
        let curve = cka_curve(&traces)?;
        write_curve_csv(&reports.join("cka.csv"), &curve)?;
        summary.cka = Some(curve);
    }
    if all || args.pcc {
        let curve = pcc_curve(&traces)?;
        write_pcc_csv(&reports.join("pcc.csv"), &curve)?;
        summary.pcc_mean = Some(curve.iter().map(|s| s.mean).collect());
    }
    if all || args.strategies {
        let scores = compare_strategies(&StrategyKind::ALL, &params, &cfg.encoder, &cfg.evo, &eval, cfg.train.seed)?;
        write_strategy_csv(&reports.join("strategies.csv"), &scores)?;
        summary.strategies = Some(scores);
    }
    write_json(&reports.join("analysis.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    finish_side(cfg, manifest)
}

#[derive(Args, Debug)]
pub struct VisualizeArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// PGM/PPM inputs; when omitted the first `--count` eval images are used.
    #[arg(long, value_name = "PATH", num_args = 1..)]
    images: Vec<PathBuf>,
    #[arg(long, default_value_t = 4)]
    count: usize,
}

/// Image pixels as RGB bytes, placeholder patches dimmed and informative
/// patches tinted red.
fn overlay(image: &Image, cfg: &EncoderConfig, informative: &[bool]) -> Vec<u8> {
    let (p, g) = (cfg.patch_side, cfg.grid_side());
    let mut out = Vec::with_capacity(image.height * image.width * 3);
    for y in 0..image.height {
        for x in 0..image.width {
            let rgb: [f64; 3] = if image.channels == 3 {
                [image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2)]
            } else {
                [image.at(y, x, 0); 3]
            };
            let keep = informative[(y / p) * g + x / p];
            let px = if keep {
                [0.6 * rgb[0] + 0.4, 0.6 * rgb[1], 0.6 * rgb[2]]
            } else {
                rgb.map(|v| 0.3 * v)
            };
            out.extend(to_bytes(&px));
        }
    }
    out
}

pub fn visualize(cfg: &RunConfig, args: &VisualizeArgs) -> Result<(), CliError> {
    let out_dir = cfg.output_dir.join("visualize");
    create_dir(&out_dir)?;
    let mut manifest = side_manifest(cfg, "visualize", vec![out_dir.clone()])?;
    let params = load_checkpoint(&args.checkpoint, cfg)?;
    let enc = &cfg.encoder;
    let images: Vec<(String, Image)> = if args.images.is_empty() {
        let eval = load_dataset(&cfg.dataset)?.eval.head(args.count);
        eval.images
            .into_iter()
            .enumerate()
            .map(|(i, img)| (format!("eval{i:03}"), img))
            .collect()
    } else {
        args.images
            .iter()
            .map(|p| {
                let img = read_image(p, enc.channels_in)?;
                if img.height != enc.image_side || img.width != enc.image_side {
                    return Err(CliError::Config(format!(
                        "{} is {}x{}, checkpoint expects {s}x{s}",
                        p.display(),
                        img.width,
                        img.height,
                        s = enc.image_side
                    )));
                }
                let stem = p.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
                Ok((stem, img))
            })
            .collect::<Result<_, _>>()?
    };
    let g = enc.grid_side();
    let mut written = Vec::new();
    for (name, image) in &images {
        let fwd = model_forward_evo_with(image, &params, enc, &cfg.evo, ScheduleMode::LayerWise, &mut GlobalAttentionSelector)?;
        for sel in &fwd.selections {
            let mask = sel.mask();
            let layer = sel.layer + 1;
            let mask_path = out_dir.join(format!("{name}_layer{layer:02}_mask.pgm"));
            write_pgm(&mask_path, g, g, mask.iter().map(|&m| if m { 255 } else { 0 }).collect())?;
            let overlay_path = out_dir.join(format!("{name}_layer{layer:02}_overlay.ppm"));
            write_ppm(&overlay_path, image.width, image.height, overlay(image, enc, &mask))?;
            written.push(mask_path);
            written.push(overlay_path);
        }
    }
    eprintln!("wrote {} files to {}", written.len(), out_dir.display());
    manifest.outputs.extend(written);
    finish_side(cfg, manifest)
}
