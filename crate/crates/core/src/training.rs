//! Rate-distortion training. Each step pushes a batch of augmented tiles
//! through the codec with noise quantization, scores
//! lambda * bits-per-pixel + MSE + psi * feature distance, and takes an
//! Adam step. One model per lambda; psi follows a two-phase schedule.
//!
//! MSE is computed on [0,1]-scaled pixels, so the usable lambda range sits
//! around [0.001, 0.1]; rescale lambda if you feed 0-255 data.

use std::io::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{feature_l2_t, FeatureExtractor};
use crate::model::{quantize, Model, ModelBundle, QuantizeMode};
use crate::tensor::{self, Adam, AdamConfig, Tape, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f32,
    /// psi before the switch epoch.
    pub psi_initial: f32,
    /// psi from the switch epoch on.
    pub psi_late: f32,
    pub psi_switch_epoch: usize,
    pub lr: f32,
    pub batch: usize,
    pub tile: usize,
    pub epochs: usize,
    /// Epochs without a 1e-4 relative improvement before the lr halves.
    pub patience: usize,
    pub lr_factor: f32,
    pub min_lr: f32,
    pub seed: u64,
    /// When set, writes epoch-NNNN.pwgt plus a train-log.jsonl sidecar here.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.01,
            psi_initial: 0.5,
            psi_late: 0.7,
            psi_switch_epoch: 90,
            lr: 1e-4,
            batch: 4,
            tile: 224,
            epochs: 150,
            patience: 5,
            lr_factor: 0.5,
            min_lr: 1e-6,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Data(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.psi_initial >= 0.0 && self.psi_late >= 0.0) {
            return Err(Error::Data("psi must be >= 0".into()));
        }
        if self.batch == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::Data("batch, epochs and patience must be positive".into()));
        }
        if !(self.lr > 0.0 && self.min_lr > 0.0 && self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::Data("need lr > 0, min_lr > 0 and lr_factor in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn psi_at(&self, epoch: usize) -> f32 {
        if epoch < self.psi_switch_epoch {
            self.psi_initial
        } else {
            self.psi_late
        }
    }
}

/// Per-step loss record. `total` is the optimized f32 scalar; the parts are
/// logged so total == lambda * rate + mse + psi * feature holds to 1e-6 rel.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rate_bits_per_pixel: f64,
    pub distortion_mse: f64,
    pub feature_term: f64,
    pub lambda: f64,
    pub psi: f64,
    pub step: u64,
}

/// Combines already-built graph nodes into the training scalar. Split from
/// `rd_loss` so tests can force a bypassed (identical) reconstruction.
fn assemble_loss(
    rate_bits: &Tensor,
    x: &Tensor,
    x_hat: &Tensor,
    fe: &FeatureExtractor,
    lambda: f32,
    psi: f32,
    step: u64,
) -> Result<(Tensor, LossBreakdown)> {
    let s = x.shape();
    let pixels = (s[0] * s[2] * s[3]) as f32;
    let bpp = tensor::mul_scalar(rate_bits, 1.0 / pixels)?;
    let diff = tensor::sub(x_hat, x)?;
    let mse = tensor::mean(&tensor::mul(&diff, &diff)?)?;
    let feat = feature_l2_t(fe, x, x_hat)?;
    let total = tensor::add(
        &tensor::add(&tensor::mul_scalar(&bpp, lambda)?, &mse)?,
        &tensor::mul_scalar(&feat, psi)?,
    )?;

    let bd = LossBreakdown {
        total: total.item() as f64,
        rate_bits_per_pixel: bpp.item() as f64,
        distortion_mse: mse.item() as f64,
        feature_term: feat.item() as f64,
        lambda: lambda as f64,
        psi: psi as f64,
        step,
    };
    for (name, v) in [
        ("rate", bd.rate_bits_per_pixel),
        ("mse", bd.distortion_mse),
        ("feature distance", bd.feature_term),
        ("total loss", bd.total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "{name} at step {step} (rate={:.4e} mse={:.4e} feature={:.4e})",
                bd.rate_bits_per_pixel, bd.distortion_mse, bd.feature_term
            )));
        }
    }
    Ok((total, bd))
}

/// Differentiable training loss on one batch; noise quantization keeps the
/// latents on the tape. Aborts with diagnostics if any component goes
/// non-finite.
pub fn rd_loss(
    model: &Model,
    fe: &FeatureExtractor,
    x: &Tensor,
    lambda: f32,
    psi: f32,
    step: u64,
    noise_rng: &mut ChaCha8Rng,
) -> Result<(Tensor, LossBreakdown)> {
    let y = model.encode_padded(x)?;
    let y_tilde = quantize(&y, QuantizeMode::Train, noise_rng)?;
    let rate_bits =
        tensor::logistic_rate_bits(&y_tilde, &model.prior_mu, &model.prior_log_scale)?;
    let x_hat = model.decode_latent(&y_tilde)?;
    assemble_loss(&rate_bits, x, &x_hat, fe, lambda, psi, step)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue_turns: f32,
}

impl AugmentParams {
    pub fn identity() -> AugmentParams {
        AugmentParams {
            hflip: false,
            vflip: false,
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue_turns: 0.0,
        }
    }

    pub fn sample(rng: &mut ChaCha8Rng) -> AugmentParams {
        AugmentParams {
            hflip: rng.gen::<f32>() < 0.5,
            vflip: rng.gen::<f32>() < 0.5,
            brightness: rng.gen_range(0.9..1.1),
            contrast: rng.gen_range(0.9..1.1),
            saturation: rng.gen_range(0.9..1.1),
            hue_turns: rng.gen_range(-0.02..0.02),
        }
    }
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Applies flips then color jitter to a CHW RGB tile, clamping to [0,1].
/// No-op draws (factor 1, angle 0) are skipped so they are exact identities.
pub fn augment_with(tile: &[f32], h: usize, w: usize, p: &AugmentParams) -> Vec<f32> {
    assert_eq!(tile.len(), 3 * h * w, "augment expects a 3xHxW tile");
    let mut out = vec![0.0f32; tile.len()];
    for c in 0..3 {
        for y in 0..h {
            let sy = if p.vflip { h - 1 - y } else { y };
            for x in 0..w {
                let sx = if p.hflip { w - 1 - x } else { x };
                out[(c * h + y) * w + x] = tile[(c * h + sy) * w + sx];
            }
        }
    }

    let plane = h * w;
    if p.brightness != 1.0 {
        for v in &mut out {
            *v *= p.brightness;
        }
    }
    if p.contrast != 1.0 {
        let mut m = 0.0f64;
        for i in 0..plane {
            m += luma(out[i], out[plane + i], out[2 * plane + i]) as f64;
        }
        let m = (m / plane as f64) as f32;
        for v in &mut out {
            *v = (*v - m) * p.contrast + m;
        }
    }
    if p.saturation != 1.0 {
        for i in 0..plane {
            let g = luma(out[i], out[plane + i], out[2 * plane + i]);
            for c in 0..3 {
                let v = &mut out[c * plane + i];
                *v = (*v - g) * p.saturation + g;
            }
        }
    }
    if p.hue_turns != 0.0 {
        // rotate the chroma plane; constants paired so angle 0 round-trips
        let (sin, cos) = (p.hue_turns * std::f32::consts::TAU).sin_cos();
        for i in 0..plane {
            let (r, g, b) = (out[i], out[plane + i], out[2 * plane + i]);
            let y = luma(r, g, b);
            let cb = 0.5 * (b - y) / 0.886;
            let cr = 0.5 * (r - y) / 0.701;
            let cb2 = cb * cos - cr * sin;
            let cr2 = cb * sin + cr * cos;
            let r2 = y + 1.402 * cr2;
            let b2 = y + 1.772 * cb2;
            let g2 = (y - 0.299 * r2 - 0.114 * b2) / 0.587;
            out[i] = r2;
            out[plane + i] = g2;
            out[2 * plane + i] = b2;
        }
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

pub fn augment(tile: &[f32], h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    augment_with(tile, h, w, &AugmentParams::sample(rng))
}

/// Abort tracker: three consecutive epochs above 10x the first epoch's loss
/// means the run is not coming back.
struct DivergenceGuard {
    initial: Option<f64>,
    run: usize,
}

impl DivergenceGuard {
    fn new() -> DivergenceGuard {
        DivergenceGuard { initial: None, run: 0 }
    }

    fn observe(&mut self, epoch: usize, loss: f64) -> Result<()> {
        let initial = *self.initial.get_or_insert(loss);
        if loss > 10.0 * initial {
            self.run += 1;
            if self.run >= 3 {
                return Err(Error::Diverged(format!(
                    "epoch {epoch} loss {loss:.4e} held above 10x the initial {initial:.4e} for {} epochs",
                    self.run
                )));
            }
        } else {
            self.run = 0;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    /// One record per optimizer step, in order.
    pub steps: Vec<LossBreakdown>,
    /// Mean step loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Learning rate in effect during each epoch.
    pub epoch_lr: Vec<f32>,
}

#[derive(Serialize)]
struct CheckpointRecord<'a> {
    epoch: usize,
    lambda: f32,
    psi: f32,
    lr: f32,
    epoch_loss: f64,
    steps_done: u64,
    loss_history: &'a [f64],
}

/// Trains `bundle` in place on fixed-size CHW tiles. Deterministic for a
/// given seed: shuffling, augmentation and quantization noise run on
/// separate seeded streams.
pub fn train(
    bundle: &mut ModelBundle,
    fe: &FeatureExtractor,
    tiles: &[Vec<f32>],
    tile_h: usize,
    tile_w: usize,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if tiles.is_empty() {
        return Err(Error::Data("training tile set is empty".into()));
    }
    let ds = bundle.config.downsample();
    if tile_h % ds != 0 || tile_w % ds != 0 {
        return Err(Error::Shape(format!(
            "training tiles must be multiples of {ds} on each side, got {tile_h}x{tile_w}"
        )));
    }
    if tile_h < bundle.config.min_image_dim() || tile_w < bundle.config.min_image_dim() {
        return Err(Error::Shape(format!(
            "{tile_h}x{tile_w} tiles are too small for {} downsampling stages",
            bundle.config.stages
        )));
    }
    for (i, t) in tiles.iter().enumerate() {
        if t.len() != 3 * tile_h * tile_w {
            return Err(Error::Shape(format!(
                "tile {i} has {} values, expected {}",
                t.len(),
                3 * tile_h * tile_w
            )));
        }
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    aug_rng.set_stream(2);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(3);

    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &bundle.param_sizes());
    let mut report = TrainReport {
        steps: Vec::new(),
        epoch_loss: Vec::new(),
        epoch_lr: Vec::new(),
    };
    let mut guard = DivergenceGuard::new();
    let mut best = f64::INFINITY;
    let mut stall = 0usize;
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..tiles.len()).collect();

    for epoch in 0..cfg.epochs {
        let psi = cfg.psi_at(epoch);
        report.epoch_lr.push(adam.lr());
        order.shuffle(&mut shuffle_rng);
        let mut epoch_sum = 0.0f64;
        let mut epoch_steps = 0usize;

        for chunk in order.chunks(cfg.batch) {
            let n = chunk.len();
            let mut batch = Vec::with_capacity(n * 3 * tile_h * tile_w);
            for &ti in chunk {
                batch.extend_from_slice(&augment(&tiles[ti], tile_h, tile_w, &mut aug_rng));
            }
            let tape = Tape::new();
            let (model, leaves) = bundle.model_on(&tape)?;
            let x = Tensor::constant(&[n, 3, tile_h, tile_w], batch)?;
            let (total, bd) = rd_loss(&model, fe, &x, cfg.lambda, psi, step, &mut noise_rng)?;
            tensor::backward(&total)?;

            let grads: Vec<Vec<f32>> = leaves
                .iter()
                .map(|l| l.grad().expect("leaf missing gradient"))
                .collect();
            let grad_refs: Vec<&[f32]> = grads.iter().map(|g| g.as_slice()).collect();
            let mut params = bundle.params_mut();
            adam.step(&mut params, &grad_refs);

            epoch_sum += bd.total;
            epoch_steps += 1;
            step += 1;
            report.steps.push(bd);
        }

        let epoch_loss = epoch_sum / epoch_steps as f64;
        report.epoch_loss.push(epoch_loss);
        guard.observe(epoch, epoch_loss)?;

        if epoch_loss < best * (1.0 - 1e-4) {
            best = epoch_loss;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.patience {
                adam.set_lr((adam.lr() * cfg.lr_factor).max(cfg.min_lr));
                stall = 0;
            }
        }

        if let Some(dir) = &cfg.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            bundle.save(&dir.join(format!("epoch-{epoch:04}.pwgt")))?;
            let rec = CheckpointRecord {
                epoch,
                lambda: cfg.lambda,
                psi,
                lr: adam.lr(),
                epoch_loss,
                steps_done: step,
                loss_history: &report.epoch_loss,
            };
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("train-log.jsonl"))?;
            let line = serde_json::to_string(&rec)
                .map_err(|e| Error::Data(format!("checkpoint record: {e}")))?;
            writeln!(f, "{line}")?;
        }
    }
    Ok(report)
}

/// Log-spaced lambda values over [0.001, 0.1], endpoints exact.
pub fn lambda_grid(count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::Data(format!("lambda grid needs at least 2 points, got {count}")));
    }
    let (lo, hi) = (0.001f64, 0.1f64);
    let span = (hi / lo).ln();
    let mut out = Vec::with_capacity(count);
    out.push(lo);
    for i in 1..count - 1 {
        out.push((lo.ln() + span * i as f64 / (count - 1) as f64).exp());
    }
    out.push(hi);
    Ok(out)
}
