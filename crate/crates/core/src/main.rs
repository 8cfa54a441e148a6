//! Benchmark CLI: tile corpora, split by slide, train models, run the codec
//! and the block baseline, and emit CSV/SVG reports. Exit codes: 0 ok,
//! 2 usage (clap), 3 data error, 4 corrupt or mismatched stream.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use pwsc::baseline;
use pwsc::bitstream;
use pwsc::data::{self, Image, SlideRecord, TileSet};
use pwsc::distort::{DistortionKind, DistortionSpec};
use pwsc::features::{self, FeatureExtractor};
use pwsc::metrics;
use pwsc::model::{self, CodecConfig, ModelBundle};
use pwsc::report::{self, RdPoint, SweepRow};
use pwsc::training::{self, TrainConfig};
use pwsc::{Error, Result};

#[derive(Parser)]
#[command(name = "pwsc", version, about = "Learned tile codec benchmark")]
struct Cli {
    /// Seed for anything stochastic (init, splits, training).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for evaluation commands (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// JSON config file with {"codec": {...}, "train": {...}} sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    codec: CodecConfig,
    train: TrainConfig,
}

#[derive(Subcommand)]
enum Cmd {
    /// Scan images into a tiled corpus manifest.
    Tile(TileArgs),
    /// Slide-level train/test split of a manifest.
    Split(SplitArgs),
    /// Train one model on a tile set.
    Train(TrainArgs),
    /// Compress an image to a .pwsc stream.
    Compress(CompressArgs),
    /// Decompress a .pwsc stream back to an image.
    Decompress(DecompressArgs),
    /// Print quality metrics for an image pair.
    Metrics(MetricsArgs),
    /// Apply one distortion to an image.
    Distort(DistortArgs),
    /// Distortion sweep over corpus images (CSV + optional SVG).
    Sweep(SweepArgs),
    /// Rate-distortion evaluation over a test tile set.
    RdCurve(RdCurveArgs),
}

#[derive(Args)]
struct TileArgs {
    /// Image files or directories to scan (PNG or PPM).
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, default_value_t = 224)]
    tile: usize,
    /// Defaults to the tile size (non-overlapping).
    #[arg(long)]
    stride: Option<usize>,
    /// Slide id is the file stem up to this delimiter.
    #[arg(long, default_value = "_")]
    slide_delim: String,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Tile set to train on (from `split`).
    #[arg(long)]
    tiles: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    /// Rate weight; overrides the config file.
    #[arg(long)]
    lambda: Option<f32>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Cap on tiles actually used (0 = all).
    #[arg(long, default_value_t = 0)]
    max_tiles: usize,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Feature extractor weights (PWGT); seeded default when absent.
    #[arg(long)]
    extractor: Option<PathBuf>,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DecompressArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    extractor: Option<PathBuf>,
}

#[derive(Args)]
struct DistortArgs {
    #[arg(long)]
    input: PathBuf,
    /// color_shift or blocking.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    level: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Sample image count.
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Comma-separated distortion kinds.
    #[arg(long, default_value = "color_shift,blocking")]
    kinds: String,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    out_svg: Option<PathBuf>,
    #[arg(long)]
    extractor: Option<PathBuf>,
}

#[derive(Args)]
struct RdCurveArgs {
    /// Test tile set (from `split`).
    #[arg(long)]
    tiles: PathBuf,
    /// Trained model files, comma separated.
    #[arg(long, value_delimiter = ',')]
    models: Vec<PathBuf>,
    /// Baseline qualities, comma separated (empty to skip).
    #[arg(long, value_delimiter = ',', default_value = "10,30,50,70,90")]
    qualities: Vec<u32>,
    /// External results to merge (codec,config,bpp,psnr,ms_ssim,lpips CSV).
    #[arg(long)]
    external: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    max_tiles: usize,
    /// Reference marker bpp (red dot, e.g. a JPEG-80 rate).
    #[arg(long)]
    marker_bpp: Option<f64>,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    out_svg: Option<PathBuf>,
    #[arg(long)]
    extractor: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    let file_cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("config {}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    match cli.cmd {
        Cmd::Tile(a) => cmd_tile(a),
        Cmd::Split(a) => cmd_split(a, cli.seed),
        Cmd::Train(a) => cmd_train(a, file_cfg, cli.seed),
        Cmd::Compress(a) => cmd_compress(a),
        Cmd::Decompress(a) => cmd_decompress(a),
        Cmd::Metrics(a) => cmd_metrics(a),
        Cmd::Distort(a) => cmd_distort(a),
        Cmd::Sweep(a) => cmd_sweep(a, cli.threads),
        Cmd::RdCurve(a) => cmd_rd_curve(a, cli.threads),
    }
}

fn load_extractor(path: &Option<PathBuf>) -> Result<FeatureExtractor> {
    match path {
        Some(p) => FeatureExtractor::load(p),
        None => Ok(FeatureExtractor::seeded(0)),
    }
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Data(format!("thread pool: {e}")))
}

fn collect_images(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("png") | Some("ppm")
                    )
                })
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Data("no input images found".into()));
    }
    Ok(files)
}

fn cmd_tile(a: TileArgs) -> Result<()> {
    let stride = a.stride.unwrap_or(a.tile);
    let files = collect_images(&a.input)?;
    let mut records = Vec::new();
    let mut n_tiles = 0usize;
    for f in &files {
        let img = data::load_image(f)?;
        if img.h < a.tile || img.w < a.tile {
            eprintln!(
                "skipping {} ({}x{} is smaller than the tile size)",
                f.display(),
                img.h,
                img.w
            );
            continue;
        }
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let slide_id = match a.slide_delim.as_str() {
            "" => stem.to_string(),
            d => stem.split(d).next().unwrap_or(stem).to_string(),
        };
        let coords = data::tile_grid(img.h, img.w, a.tile, stride)?;
        n_tiles += coords.len();
        let rec = SlideRecord {
            slide_id,
            path: f.clone(),
            width: img.w,
            height: img.h,
            tile: a.tile,
            tiles: coords,
        };
        rec.validate()?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Data("every input image was smaller than the tile size".into()));
    }
    data::write_manifest(&a.manifest, &records)?;
    println!(
        "{} images, {} slides, {} tiles -> {}",
        records.len(),
        records.iter().map(|r| r.slide_id.as_str()).collect::<std::collections::BTreeSet<_>>().len(),
        n_tiles,
        a.manifest.display()
    );
    Ok(())
}

fn cmd_split(a: SplitArgs, seed: u64) -> Result<()> {
    let records = data::read_manifest(&a.manifest)?;
    let (train, test) = data::split_slides(&records, a.test_fraction, seed)?;
    data::check_no_leakage(&train, &test)?;
    train.save(&a.train_out)?;
    test.save(&a.test_out)?;
    println!(
        "train: {} tiles over {} slides; test: {} tiles over {} slides",
        train.tiles.len(),
        train.slide_ids().len(),
        test.tiles.len(),
        test.slide_ids().len()
    );
    Ok(())
}

/// Materializes tile pixel buffers, loading each source image once.
fn load_tiles(ts: &TileSet, max_tiles: usize) -> Result<Vec<Vec<f32>>> {
    let mut cache: BTreeMap<&Path, Image> = BTreeMap::new();
    let take = if max_tiles == 0 { ts.tiles.len() } else { max_tiles.min(ts.tiles.len()) };
    let mut out = Vec::with_capacity(take);
    for tr in ts.tiles.iter().take(take) {
        if !cache.contains_key(tr.path.as_path()) {
            cache.insert(&tr.path, data::load_image(&tr.path)?);
        }
        out.push(data::extract_tile(&cache[tr.path.as_path()], tr.coord, ts.tile)?);
    }
    Ok(out)
}

fn cmd_train(a: TrainArgs, file_cfg: FileConfig, seed: u64) -> Result<()> {
    let ts = TileSet::load(&a.tiles)?;
    let tiles = load_tiles(&ts, a.max_tiles)?;
    let mut cfg = file_cfg.train;
    cfg.seed = seed;
    cfg.tile = ts.tile;
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(d) = a.checkpoint_dir {
        cfg.checkpoint_dir = Some(d);
    }
    let fe = load_extractor(&a.extractor)?;
    let mut bundle = ModelBundle::init(file_cfg.codec, seed)?;
    let report = training::train(&mut bundle, &fe, &tiles, ts.tile, ts.tile, &cfg)?;
    bundle.save(&a.model_out)?;
    let first = report.epoch_loss.first().copied().unwrap_or(f64::NAN);
    let last = report.epoch_loss.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} epochs on {} tiles (lambda={}): epoch loss {first:.4} -> {last:.4}, model {}",
        report.epoch_loss.len(),
        tiles.len(),
        cfg.lambda,
        a.model_out.display()
    );
    Ok(())
}

fn cmd_compress(a: CompressArgs) -> Result<()> {
    let img = data::load_image(&a.input)?;
    let bundle = ModelBundle::load(&a.model)?;
    let bytes = model::compress(&bundle, &img.data, img.h, img.w)?;
    std::fs::write(&a.output, &bytes)?;
    let bpp = bitstream::bpp(bytes.len(), img.h as u32, img.w as u32);
    println!("{}", serde_json::json!({ "bytes": bytes.len(), "bpp": bpp }));
    Ok(())
}

fn cmd_decompress(a: DecompressArgs) -> Result<()> {
    let bytes = std::fs::read(&a.input)?;
    let bundle = ModelBundle::load(&a.model)?;
    let (pixels, h, w) = model::decompress(&bundle, &bytes)?;
    data::save_image(&Image::new(h, w, pixels)?, &a.output)?;
    println!("{}", serde_json::json!({ "height": h, "width": w }));
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let x = data::load_image(&a.a)?;
    let y = data::load_image(&a.b)?;
    if (x.h, x.w) != (y.h, y.w) {
        return Err(Error::Shape(format!(
            "images differ in size: {}x{} vs {}x{}",
            x.h, x.w, y.h, y.w
        )));
    }
    let fe = load_extractor(&a.extractor)?;
    let mse = metrics::mse(&x.data, &y.data)?;
    let out = serde_json::json!({
        "mse": mse,
        "psnr_db": metrics::psnr_from_mse(mse, 1.0),
        "ms_ssim": metrics::ms_ssim(&x.data, &y.data, 3, x.h, x.w, 1.0)?,
        "lpips": features::lpips(&fe, &x.data, &y.data, x.h, x.w)?,
        "feature_l2": features::feature_l2(&fe, &x.data, &y.data, x.h, x.w)?,
    });
    println!("{out}");
    Ok(())
}

fn parse_kind(s: &str) -> Result<DistortionKind> {
    match s {
        "color_shift" => Ok(DistortionKind::ColorShift),
        "blocking" => Ok(DistortionKind::Blocking),
        other => Err(Error::Data(format!(
            "unknown distortion kind {other:?} (use color_shift or blocking)"
        ))),
    }
}

fn cmd_distort(a: DistortArgs) -> Result<()> {
    let img = data::load_image(&a.input)?;
    let spec = DistortionSpec { kind: parse_kind(&a.kind)?, level: a.level };
    let out = spec.apply(&img.data, img.h, img.w)?;
    data::save_image(&Image::new(img.h, img.w, out)?, &a.output)?;
    Ok(())
}

fn sweep_levels(kind: DistortionKind) -> Vec<f64> {
    match kind {
        DistortionKind::ColorShift => vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0],
        DistortionKind::Blocking => vec![90.0, 70.0, 50.0, 30.0, 10.0],
    }
}

fn kind_name(kind: DistortionKind) -> &'static str {
    match kind {
        DistortionKind::ColorShift => "color_shift",
        DistortionKind::Blocking => "blocking",
    }
}

fn cmd_sweep(a: SweepArgs, threads: usize) -> Result<()> {
    use rayon::prelude::*;
    let records = data::read_manifest(&a.manifest)?;
    let mut paths: Vec<&Path> = records.iter().map(|r| r.path.as_path()).collect();
    paths.sort();
    paths.dedup();
    paths.truncate(a.n);
    if paths.is_empty() {
        return Err(Error::Data("sweep corpus is empty".into()));
    }
    let images: Vec<Image> = paths
        .iter()
        .map(|p| data::load_image(p))
        .collect::<Result<_>>()?;
    // tensors are Rc-based, so workers rebuild the extractor from its weights
    let fe_wf = load_extractor(&a.extractor)?.to_weight_file();
    let kinds: Vec<DistortionKind> = a
        .kinds
        .split(',')
        .filter(|s| !s.is_empty())
        .map(parse_kind)
        .collect::<Result<_>>()?;

    let pool = thread_pool(threads)?;
    let mut rows: Vec<SweepRow> = Vec::new();
    for &kind in &kinds {
        for level in sweep_levels(kind) {
            let spec = DistortionSpec { kind, level };
            let per_image: Vec<(f64, f64, f64)> = pool.install(|| {
                images
                    .par_iter()
                    .map(|img| {
                        let fe = FeatureExtractor::from_weight_file(&fe_wf)?;
                        let d = spec.apply(&img.data, img.h, img.w)?;
                        let mse = metrics::mse(&img.data, &d)?;
                        let ms = metrics::ms_ssim(&img.data, &d, 3, img.h, img.w, 1.0)?;
                        let lp = features::lpips(&fe, &img.data, &d, img.h, img.w)?;
                        Ok((mse, 1.0 - ms, lp))
                    })
                    .collect::<Result<_>>()
            })?;
            let n = per_image.len();
            for (metric, get) in [
                ("mse", 0usize),
                ("one_minus_ms_ssim", 1usize),
                ("lpips", 2usize),
            ] {
                let vals: Vec<f64> = per_image
                    .iter()
                    .map(|t| match get {
                        0 => t.0,
                        1 => t.1,
                        _ => t.2,
                    })
                    .collect();
                let (mean, std) = report::mean_std(&vals);
                rows.push(SweepRow {
                    kind: kind_name(kind).into(),
                    level,
                    metric: metric.into(),
                    mean,
                    std,
                    n,
                });
            }
        }
    }
    std::fs::write(&a.out_csv, report::sweep_csv(&rows)?)?;
    if let Some(svg) = &a.out_svg {
        std::fs::write(svg, report::sweep_svg(&rows))?;
    }
    println!("{} rows over {} images -> {}", rows.len(), images.len(), a.out_csv.display());
    Ok(())
}

struct TileEval {
    bytes: usize,
    /// Container header and CRC bytes inside `bytes` (0 for the baseline).
    overhead_bytes: usize,
    est_bits: f64,
    mse: f64,
    ms_ssim: f64,
    lpips: f64,
}

fn eval_learned_tile(
    bundle: &ModelBundle,
    fe: &FeatureExtractor,
    px: &[f32],
    t: usize,
) -> Result<TileEval> {
    let code = model::encode_tile(bundle, px, t, t)?;
    let stream = model::code_to_stream(bundle, &code)?;
    let est_bits = bundle.prior().rate_bits_ints(&code.values, code.c, code.h * code.w);
    let recon = model::decode_tile(bundle, &code)?;
    Ok(TileEval {
        bytes: stream.len(),
        overhead_bytes: bitstream::container_overhead(code.ranges.len()),
        est_bits,
        mse: metrics::mse(px, &recon)?,
        ms_ssim: metrics::ms_ssim(px, &recon, 3, t, t, 1.0)?,
        lpips: features::lpips(fe, px, &recon, t, t)?,
    })
}

fn eval_baseline_tile(q: u32, fe: &FeatureExtractor, px: &[f32], t: usize) -> Result<TileEval> {
    let stream = baseline::block_encode(px, t, t, q)?;
    let (recon, _, _) = baseline::block_decode(&stream)?;
    Ok(TileEval {
        bytes: stream.len(),
        overhead_bytes: 0,
        est_bits: f64::NAN,
        mse: metrics::mse(px, &recon)?,
        ms_ssim: metrics::ms_ssim(px, &recon, 3, t, t, 1.0)?,
        lpips: features::lpips(fe, px, &recon, t, t)?,
    })
}

fn rd_point_from(codec: &str, config: &str, t: usize, evals: &[TileEval]) -> RdPoint {
    let n = evals.len();
    let mean = |f: &dyn Fn(&TileEval) -> f64| evals.iter().map(|e| f(e)).sum::<f64>() / n as f64;
    let bpp = mean(&|e: &TileEval| bitstream::bpp(e.bytes, t as u32, t as u32));
    let mse = mean(&|e: &TileEval| e.mse);
    RdPoint {
        codec: codec.into(),
        config: config.into(),
        bpp,
        psnr: metrics::psnr_from_mse(mse, 1.0),
        ms_ssim: mean(&|e: &TileEval| e.ms_ssim),
        lpips: mean(&|e: &TileEval| e.lpips),
        tiles: n,
    }
}

/// Coded payload bits (file bytes minus the fixed container wrapper) must
/// agree with the entropy estimate to 5% + 64 bits per tile, or the whole
/// report is rejected.
fn check_rate_estimate(config: &str, t: usize, evals: &[TileEval]) -> Result<()> {
    for (i, e) in evals.iter().enumerate() {
        let payload_bits = ((e.bytes - e.overhead_bytes) * 8) as f64;
        let bound = e.est_bits * 1.05 + 64.0;
        if payload_bits > bound {
            return Err(Error::Data(format!(
                "{config}: tile {i} coded to {payload_bits} payload bits but the \
                 entropy model predicts {:.1} (bound {bound:.1}, tile {t}x{t})",
                e.est_bits
            )));
        }
    }
    Ok(())
}

fn cmd_rd_curve(a: RdCurveArgs, threads: usize) -> Result<()> {
    use rayon::prelude::*;
    if a.models.is_empty() && a.qualities.is_empty() && a.external.is_none() {
        return Err(Error::Data("no codec sources given".into()));
    }
    let ts = TileSet::load(&a.tiles)?;
    let tiles = load_tiles(&ts, a.max_tiles)?;
    if tiles.is_empty() {
        return Err(Error::Data("test tile set is empty".into()));
    }
    let t = ts.tile;
    let fe_wf = load_extractor(&a.extractor)?.to_weight_file();
    let pool = thread_pool(threads)?;

    let mut points: Vec<RdPoint> = Vec::new();
    for mp in &a.models {
        let bundle = ModelBundle::load(mp)?;
        let evals: Vec<TileEval> = pool.install(|| {
            tiles
                .par_iter()
                .map(|px| {
                    let fe = FeatureExtractor::from_weight_file(&fe_wf)?;
                    eval_learned_tile(&bundle, &fe, px, t)
                })
                .collect::<Result<_>>()
        })?;
        let config = mp.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
        check_rate_estimate(&config, t, &evals)?;
        points.push(rd_point_from("learned", &config, t, &evals));
    }
    for &q in &a.qualities {
        let evals: Vec<TileEval> = pool.install(|| {
            tiles
                .par_iter()
                .map(|px| {
                    let fe = FeatureExtractor::from_weight_file(&fe_wf)?;
                    eval_baseline_tile(q, &fe, px, t)
                })
                .collect::<Result<_>>()
        })?;
        points.push(rd_point_from("jpeg-like", &format!("q={q}"), t, &evals));
    }
    if let Some(ext) = &a.external {
        points.extend(report::read_rd_csv(ext)?);
    }

    std::fs::write(&a.out_csv, report::rd_csv(&points)?)?;
    if let Some(svg) = &a.out_svg {
        std::fs::write(svg, report::rd_svg(&points, a.marker_bpp))?;
    }
    for p in &points {
        println!(
            "{} {}: bpp {:.4}, psnr {:.2}, ms-ssim {:.4}, lpips {:.4} ({} tiles)",
            p.codec, p.config, p.bpp, p.psnr, p.ms_ssim, p.lpips, p.tiles
        );
    }
    Ok(())
}
