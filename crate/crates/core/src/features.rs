//! Learned-feature distances: a small pluggable conv extractor, the
//! multi-layer perceptual distance over unit-normalized features, and the
//! pooled final-stage distance used inside the training loss.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};
use crate::weights::WeightFile;

pub const DEFAULT_CHANNELS: [usize; 4] = [16, 32, 64, 128];
pub const EXTRACTOR_KERNEL: usize = 3;
const NORM_EPS: f64 = 1e-10;

/// Stack of stride-2 conv+ReLU stages with fixed weights. Stage l halves
/// the spatial size l times.
pub struct FeatureExtractor {
    stages: Vec<(Tensor, Tensor)>,
    alphas: Vec<f32>,
}

impl FeatureExtractor {
    /// Deterministic random-weight extractor (weights are a stand-in for a
    /// pretrained network; the file format accepts real ones).
    pub fn seeded(seed: u64) -> FeatureExtractor {
        FeatureExtractor::seeded_with(&DEFAULT_CHANNELS, seed)
    }

    pub fn seeded_with(channels: &[usize], seed: u64) -> FeatureExtractor {
        assert!(!channels.is_empty());
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let k = EXTRACTOR_KERNEL;
        let mut stages = Vec::with_capacity(channels.len());
        let mut ci = 3usize;
        for &co in channels {
            let fan_in = ci * k * k;
            let b = (1.0 / fan_in as f32).sqrt();
            let w: Vec<f32> = (0..co * ci * k * k).map(|_| rng.gen_range(-b..b)).collect();
            let kern = Tensor::constant(&[co, ci, k, k], w).unwrap();
            let bias = Tensor::constant(&[co], vec![0.0; co]).unwrap();
            stages.push((kern, bias));
            ci = co;
        }
        let l = channels.len();
        FeatureExtractor {
            stages,
            alphas: vec![1.0 / l as f32; l],
        }
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn alphas(&self) -> &[f32] {
        &self.alphas
    }

    /// Per-layer weights; must be nonnegative and sum to 1.
    pub fn set_alphas(&mut self, alphas: Vec<f32>) -> Result<()> {
        if alphas.len() != self.stages.len() {
            return Err(Error::Data(format!(
                "{} alphas for {} stages",
                alphas.len(),
                self.stages.len()
            )));
        }
        if alphas.iter().any(|&a| a < 0.0 || !a.is_finite()) {
            return Err(Error::Data("alphas must be nonnegative".into()));
        }
        let sum: f32 = alphas.iter().sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(Error::Data(format!("alphas sum to {}, expected 1", sum)));
        }
        self.alphas = alphas;
        Ok(())
    }

    pub fn to_weight_file(&self) -> WeightFile {
        let mut wf = WeightFile::new();
        for (i, (kern, bias)) in self.stages.iter().enumerate() {
            wf.push(&format!("stage{}.weight", i), kern.shape(), kern.data().to_vec())
                .unwrap();
            wf.push(&format!("stage{}.bias", i), bias.shape(), bias.data().to_vec())
                .unwrap();
        }
        wf.push("meta.alphas", &[self.alphas.len()], self.alphas.clone())
            .unwrap();
        wf
    }

    pub fn from_weight_file(wf: &WeightFile) -> Result<FeatureExtractor> {
        let mut stages = Vec::new();
        let mut ci = 3usize;
        loop {
            let name = format!("stage{}.weight", stages.len());
            let Some(t) = wf.get(&name) else { break };
            if t.shape.len() != 4 || t.shape[2] != EXTRACTOR_KERNEL || t.shape[3] != EXTRACTOR_KERNEL {
                return Err(Error::Format(format!("{} must be [O,I,3,3]", name)));
            }
            if t.shape[1] != ci {
                return Err(Error::Format(format!(
                    "{} expects {} input channels, previous stage yields {}",
                    name, t.shape[1], ci
                )));
            }
            let co = t.shape[0];
            let bias_name = format!("stage{}.bias", stages.len());
            let b = wf
                .get(&bias_name)
                .ok_or_else(|| Error::Format(format!("extractor lacks {}", bias_name)))?;
            if b.shape != [co] {
                return Err(Error::Format(format!("{} must be [{}]", bias_name, co)));
            }
            stages.push((
                Tensor::constant(&t.shape, t.data.clone())?,
                Tensor::constant(&b.shape, b.data.clone())?,
            ));
            ci = co;
        }
        if stages.is_empty() {
            return Err(Error::Format("extractor file has no stages".into()));
        }
        let l = stages.len();
        let mut fe = FeatureExtractor {
            stages,
            alphas: vec![1.0 / l as f32; l],
        };
        if let Some(a) = wf.get("meta.alphas") {
            fe.set_alphas(a.data.clone())?;
        }
        Ok(fe)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_weight_file().save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<FeatureExtractor> {
        FeatureExtractor::from_weight_file(&WeightFile::load(path)?)
    }

    /// Feature maps after every stage; differentiable when x is on a tape.
    pub fn extract(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut t = x.clone();
        let mut out = Vec::with_capacity(self.stages.len());
        for (kern, bias) in &self.stages {
            t = tensor::conv2d(&t, kern, 2, 1)?;
            t = tensor::bias_add(&t, bias)?;
            t = tensor::relu(&t)?;
            out.push(t.clone());
        }
        Ok(out)
    }
}

fn image_tensor(px: &[f32], c: usize, h: usize, w: usize) -> Result<Tensor> {
    if px.len() != c * h * w {
        return Err(Error::Shape(format!(
            "buffer of {} values for a {}x{}x{} image",
            px.len(),
            c,
            h,
            w
        )));
    }
    Tensor::constant(&[1, c, h, w], px.to_vec())
}

/// Per-layer perceptual terms: channel-unit-normalize both feature maps at
/// each position, squared l2 difference, mean over positions.
pub fn lpips_terms(
    fe: &FeatureExtractor,
    a: &[f32],
    b: &[f32],
    h: usize,
    w: usize,
) -> Result<Vec<f64>> {
    let fa = fe.extract(&image_tensor(a, 3, h, w)?)?;
    let fb = fe.extract(&image_tensor(b, 3, h, w)?)?;
    let mut terms = Vec::with_capacity(fa.len());
    for (ta, tb) in fa.iter().zip(&fb) {
        let (c, fh, fw) = (ta.shape()[1], ta.shape()[2], ta.shape()[3]);
        let plane = fh * fw;
        let (da, db) = (ta.data(), tb.data());
        let mut sum = 0.0f64;
        for pos in 0..plane {
            let mut na = 0.0f64;
            let mut nb = 0.0f64;
            for ci in 0..c {
                let va = da[ci * plane + pos] as f64;
                let vb = db[ci * plane + pos] as f64;
                na += va * va;
                nb += vb * vb;
            }
            let (na, nb) = (na.sqrt() + NORM_EPS, nb.sqrt() + NORM_EPS);
            for ci in 0..c {
                let d = da[ci * plane + pos] as f64 / na - db[ci * plane + pos] as f64 / nb;
                sum += d * d;
            }
        }
        terms.push(sum / plane as f64);
    }
    Ok(terms)
}

pub fn lpips_with_alphas(terms: &[f64], alphas: &[f32]) -> f64 {
    terms.iter().zip(alphas).map(|(t, &a)| t * a as f64).sum()
}

/// Weighted multi-layer perceptual distance.
pub fn lpips(fe: &FeatureExtractor, a: &[f32], b: &[f32], h: usize, w: usize) -> Result<f64> {
    Ok(lpips_with_alphas(&lpips_terms(fe, a, b, h, w)?, fe.alphas()))
}

/// l2 distance between global-average-pooled final-stage features, as a
/// graph node (the perceptual term of the training loss).
pub fn feature_l2_t(fe: &FeatureExtractor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let fa = fe.extract(a)?;
    let fb = fe.extract(b)?;
    let pa = tensor::global_avg_pool(fa.last().unwrap())?;
    let pb = tensor::global_avg_pool(fb.last().unwrap())?;
    tensor::l2_rows_mean(&pa, &pb)
}

pub fn feature_l2(fe: &FeatureExtractor, a: &[f32], b: &[f32], h: usize, w: usize) -> Result<f64> {
    let t = feature_l2_t(fe, &image_tensor(a, 3, h, w)?, &image_tensor(b, 3, h, w)?)?;
    Ok(t.item() as f64)
}
