//! Fully factorized per-channel prior: a two-parameter logistic per latent
//! channel, evaluated on unit bins. Provides differentiable rate estimates
//! for training and quantized CDF tables for the range coder.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Total CDF mass of a coder table.
pub const CDF_TOTAL: u32 = 1 << 16;

/// Probability floor applied to every bin before renormalization.
pub const P_MIN: f64 = crate::tensor::P_MIN;

#[derive(Clone)]
pub struct FactorizedPrior {
    mu: Vec<f32>,
    log_scale: Vec<f32>,
}

impl FactorizedPrior {
    pub fn new(channels: usize) -> FactorizedPrior {
        FactorizedPrior {
            mu: vec![0.0; channels],
            log_scale: vec![0.0; channels],
        }
    }

    pub fn from_params(mu: Vec<f32>, log_scale: Vec<f32>) -> Result<FactorizedPrior> {
        if mu.len() != log_scale.len() {
            return Err(Error::Shape(format!(
                "prior: {} locations vs {} scales",
                mu.len(),
                log_scale.len()
            )));
        }
        Ok(FactorizedPrior { mu, log_scale })
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f32] {
        &self.mu
    }

    pub fn log_scale(&self) -> &[f32] {
        &self.log_scale
    }

    /// Raw logistic mass of the unit bin at `q`, no floor, f64.
    pub fn bin_mass(&self, channel: usize, q: f64) -> f64 {
        let inv = (-(self.log_scale[channel] as f64)).exp();
        tensor::logistic_bin_mass(q, self.mu[channel] as f64, inv)
    }

    /// Floored then renormalized PMF over an inclusive symbol range.
    pub fn pmf_range(&self, channel: usize, q_min: i32, q_max: i32) -> Result<Vec<f64>> {
        check_range(q_min, q_max)?;
        let mut p: Vec<f64> = (q_min..=q_max)
            .map(|q| self.bin_mass(channel, q as f64).max(P_MIN))
            .collect();
        let z: f64 = p.iter().sum();
        for v in &mut p {
            *v /= z;
        }
        Ok(p)
    }

    pub fn pmf(&self, channel: usize, q: i32, q_min: i32, q_max: i32) -> Result<f64> {
        if q < q_min || q > q_max {
            return Err(Error::Data(format!(
                "symbol {} outside pmf range [{}, {}]",
                q, q_min, q_max
            )));
        }
        Ok(self.pmf_range(channel, q_min, q_max)?[(q - q_min) as usize])
    }

    /// Total bits for integer latents under the floored (unrenormalized)
    /// prior: the continuous training rate evaluated at integers.
    pub fn rate_bits_ints(&self, latent: &[i32], channels: usize, plane: usize) -> f64 {
        debug_assert_eq!(latent.len() % (channels * plane), 0);
        let n = latent.len() / (channels * plane);
        let mut bits = 0.0;
        for ni in 0..n {
            for c in 0..channels {
                let base = (ni * channels + c) * plane;
                for &q in &latent[base..base + plane] {
                    bits -= self.bin_mass(c, q as f64).max(P_MIN).log2();
                }
            }
        }
        bits
    }

    /// Differentiable total rate for a (noisy or rounded) latent tensor.
    /// `mu_t` and `ls_t` supply the prior parameters as tape variables when
    /// the prior itself is being trained.
    pub fn rate_bits_tensor(latent: &Tensor, mu_t: &Tensor, ls_t: &Tensor) -> Result<Tensor> {
        tensor::logistic_rate_bits(latent, mu_t, ls_t)
    }

    pub fn build_cdf_tables(&self, ranges: &[(i32, i32)]) -> Result<Vec<CdfTable>> {
        if ranges.len() != self.channels() {
            return Err(Error::Shape(format!(
                "{} ranges for {} channels",
                ranges.len(),
                self.channels()
            )));
        }
        ranges
            .iter()
            .enumerate()
            .map(|(c, &(lo, hi))| {
                let pmf = self.pmf_range(c, lo, hi)?;
                CdfTable::from_pmf(c, lo, &pmf)
            })
            .collect()
    }
}

fn check_range(q_min: i32, q_max: i32) -> Result<()> {
    if q_min > q_max {
        return Err(Error::Data(format!("empty symbol range [{}, {}]", q_min, q_max)));
    }
    let n = (q_max as i64) - (q_min as i64) + 1;
    if n > CDF_TOTAL as i64 {
        return Err(Error::Data(format!(
            "symbol range [{}, {}] wider than {} symbols",
            q_min, q_max, CDF_TOTAL
        )));
    }
    Ok(())
}

/// Coder-facing quantization of a channel's PMF: u32 cumulative counts with
/// total exactly 2^16 and every symbol >= 1 count.
#[derive(Clone)]
pub struct CdfTable {
    pub channel: usize,
    pub q_min: i32,
    pub q_max: i32,
    cdf: Vec<u32>,
}

impl CdfTable {
    /// Largest-remainder apportionment of `pmf` into counts summing to
    /// 2^16, floored at 1; ties and leftovers favor more probable symbols.
    pub fn from_pmf(channel: usize, q_min: i32, pmf: &[f64]) -> Result<CdfTable> {
        let n = pmf.len();
        if n == 0 || n > CDF_TOTAL as usize {
            return Err(Error::Data(format!("pmf with {} symbols unusable", n)));
        }
        if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Data("pmf entries must be finite and nonnegative".into()));
        }
        let z: f64 = pmf.iter().sum();
        if z <= 0.0 {
            return Err(Error::Data("pmf sums to zero".into()));
        }
        let quotas: Vec<f64> = pmf.iter().map(|p| p / z * CDF_TOTAL as f64).collect();
        let mut counts: Vec<u32> = quotas.iter().map(|&q| (q.floor() as u32).max(1)).collect();
        let mut assigned: i64 = counts.iter().map(|&c| c as i64).sum();
        // order symbols by how much the floor underserved them
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let ka = quotas[a] - counts[a] as f64;
            let kb = quotas[b] - counts[b] as f64;
            kb.partial_cmp(&ka)
                .unwrap()
                .then(quotas[b].partial_cmp(&quotas[a]).unwrap())
                .then(a.cmp(&b))
        });
        let mut idx = 0;
        while assigned < CDF_TOTAL as i64 {
            counts[order[idx % n]] += 1;
            assigned += 1;
            idx += 1;
        }
        // floors of near-zero symbols can overshoot the budget; take back
        // from the most overfull symbols, never dropping anyone below 1
        if assigned > CDF_TOTAL as i64 {
            for respect_quota in [true, false] {
                for &i in order.iter().rev() {
                    if assigned == CDF_TOTAL as i64 {
                        break;
                    }
                    let floor = if respect_quota {
                        (quotas[i].ceil() as i64).max(1)
                    } else {
                        1
                    };
                    let can_take = (counts[i] as i64 - floor).min(assigned - CDF_TOTAL as i64);
                    if can_take > 0 {
                        counts[i] -= can_take as u32;
                        assigned -= can_take;
                    }
                }
            }
            if assigned != CDF_TOTAL as i64 {
                return Err(Error::Data("cdf apportionment failed".into()));
            }
        }
        Self::from_counts(channel, q_min, &counts)
    }

    pub fn from_counts(channel: usize, q_min: i32, counts: &[u32]) -> Result<CdfTable> {
        let n = counts.len();
        let q_max = q_min as i64 + n as i64 - 1;
        if n == 0 || q_max > i32::MAX as i64 {
            return Err(Error::Data("cdf symbol range unrepresentable".into()));
        }
        check_range(q_min, q_max as i32)?;
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total != CDF_TOTAL as u64 || counts.iter().any(|&c| c == 0) {
            return Err(Error::Data(format!(
                "cdf counts must be positive and sum to {}, got total {}",
                CDF_TOTAL, total
            )));
        }
        let mut cdf = Vec::with_capacity(n + 1);
        let mut acc = 0u32;
        cdf.push(0);
        for &c in counts {
            acc += c;
            cdf.push(acc);
        }
        Ok(CdfTable {
            channel,
            q_min,
            q_max: q_min + (n as i32 - 1),
            cdf,
        })
    }

    pub fn n_symbols(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn contains(&self, q: i32) -> bool {
        q >= self.q_min && q <= self.q_max
    }

    pub fn sym_index(&self, q: i32) -> usize {
        debug_assert!(self.contains(q));
        (q - self.q_min) as usize
    }

    /// (cumulative low, count) for the coder.
    pub fn span(&self, sym: usize) -> (u32, u32) {
        (self.cdf[sym], self.cdf[sym + 1] - self.cdf[sym])
    }

    pub fn count(&self, sym: usize) -> u32 {
        self.cdf[sym + 1] - self.cdf[sym]
    }

    /// Symbol whose cumulative span contains `cum` (0 <= cum < 2^16).
    pub fn symbol_at(&self, cum: u32) -> usize {
        debug_assert!(cum < CDF_TOTAL);
        self.cdf.partition_point(|&c| c <= cum) - 1
    }

    /// Ideal code length of a symbol under this table.
    pub fn bits_for(&self, sym: usize) -> f64 {
        -((self.count(sym) as f64) / CDF_TOTAL as f64).log2()
    }
}
