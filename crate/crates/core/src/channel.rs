//! Path loss, shadowing and the per-slot download energy cost.
//!
//! The cost of one download is the transmit power (mW) needed to reach the
//! received power that supports the target spectral efficiency, given the
//! UMi NLOS path loss at a uniformly drawn distance plus truncated log-normal
//! shadowing. One slot is a normalized time unit, so energy is reported in mW.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed::stream;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelParams {
    pub fc_ghz: f64,
    pub d_min_m: f64,
    pub d_max_m: f64,
    pub sigma_db: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub g_tx_dbi: f64,
    pub g_rx_dbi: f64,
    /// Target rate over bandwidth, bps/Hz.
    pub spectral_eff: f64,
    pub shadow_clip_sigmas: f64,
    /// Cost cap; `None` means the cost at `d_max_m` with shadowing at the
    /// upper clip.
    pub c_max_mw: Option<f64>,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            fc_ghz: 2.5,
            d_min_m: 50.0,
            d_max_m: 250.0,
            sigma_db: 4.0,
            bandwidth_hz: 10e6,
            noise_psd_dbm_hz: -174.0,
            noise_figure_db: 5.0,
            g_tx_dbi: 17.0,
            g_rx_dbi: 0.0,
            spectral_eff: 2.0,
            shadow_clip_sigmas: 3.0,
            c_max_mw: None,
        }
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Deterministic UMi NLOS path loss in dB (shadowing excluded).
pub fn path_loss_db(d_m: f64, fc_ghz: f64) -> Result<f64> {
    if !(d_m > 0.0) || !(fc_ghz > 0.0) {
        return Err(Error::InvalidParam(format!(
            "path loss needs positive distance and frequency, got d={d_m}, fc={fc_ghz}"
        )));
    }
    Ok(36.7 * d_m.log10() + 22.7 + 26.0 * fc_ghz.log10())
}

pub fn noise_power_dbm(params: &ChannelParams) -> f64 {
    params.noise_psd_dbm_hz + 10.0 * params.bandwidth_hz.log10() + params.noise_figure_db
}

/// Received power needed for SNR = 2^(R/W) - 1.
pub fn required_signal_dbm(params: &ChannelParams) -> f64 {
    let snr = 2f64.powf(params.spectral_eff) - 1.0;
    noise_power_dbm(params) + 10.0 * snr.log10()
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.to_string()));
        if !(self.d_min_m > 0.0 && self.d_min_m < self.d_max_m) {
            return bad("distance range must satisfy 0 < d_min < d_max");
        }
        if !(self.fc_ghz > 0.0) {
            return bad("center frequency must be positive");
        }
        if !(self.sigma_db >= 0.0) {
            return bad("shadowing std-dev must be non-negative");
        }
        if !(self.bandwidth_hz > 0.0) {
            return bad("bandwidth must be positive");
        }
        if !(self.spectral_eff > 0.0) {
            return bad("spectral efficiency must be positive");
        }
        if !(self.shadow_clip_sigmas >= 0.0) {
            return bad("shadow clip must be non-negative");
        }
        if let Some(c) = self.c_max_mw {
            if !(c > 0.0) {
                return bad("c_max must be positive");
            }
        }
        Ok(())
    }

    /// Unclamped transmit power (mW) for distance `d_m` and shadowing `x_db`.
    pub fn raw_cost_mw(&self, d_m: f64, x_db: f64) -> Result<f64> {
        let pl = path_loss_db(d_m, self.fc_ghz)?;
        Ok(dbm_to_mw(
            required_signal_dbm(self) - self.g_tx_dbi - self.g_rx_dbi + pl + x_db,
        ))
    }

    pub fn c_max(&self) -> f64 {
        self.c_max_mw.unwrap_or_else(|| {
            self.raw_cost_mw(self.d_max_m, self.shadow_clip_sigmas * self.sigma_db)
                .expect("validated channel parameters")
        })
    }

    /// Cost for a given distance and shadowing draw, clamped to `c_max`.
    pub fn cost_mw(&self, d_m: f64, x_db: f64) -> Result<f64> {
        Ok(self.raw_cost_mw(d_m, x_db)?.min(self.c_max()))
    }

    pub fn sampler(&self) -> Result<ChannelSampler> {
        self.validate()?;
        Ok(ChannelSampler {
            offset_db: required_signal_dbm(self) - self.g_tx_dbi - self.g_rx_dbi
                + 22.7
                + 26.0 * self.fc_ghz.log10(),
            d_min: self.d_min_m,
            d_max: self.d_max_m,
            sigma: self.sigma_db,
            clip: self.shadow_clip_sigmas * self.sigma_db,
            c_max: self.c_max(),
            shadow: Normal::new(0.0, self.sigma_db.max(f64::MIN_POSITIVE))
                .map_err(|e| Error::InvalidParam(e.to_string()))?,
        })
    }
}

/// Precomputed per-draw form of [`ChannelParams`].
#[derive(Clone, Debug)]
pub struct ChannelSampler {
    offset_db: f64,
    d_min: f64,
    d_max: f64,
    sigma: f64,
    clip: f64,
    c_max: f64,
    shadow: Normal<f64>,
}

impl ChannelSampler {
    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let d = rng.random_range(self.d_min..self.d_max);
        let x = if self.sigma > 0.0 {
            loop {
                let x = self.shadow.sample(rng);
                if x.abs() <= self.clip {
                    break x;
                }
            }
        } else {
            0.0
        };
        dbm_to_mw(self.offset_db + 36.7 * d.log10() + x).min(self.c_max)
    }
}

pub fn sample_cost<R: Rng + ?Sized>(rng: &mut R, params: &ChannelParams) -> Result<f64> {
    Ok(params.sampler()?.sample(rng))
}

/// Sorted empirical sample of the cost distribution with prefix sums.
#[derive(Clone, Debug)]
pub struct CostDistribution {
    samples: Vec<f64>,
    prefix: Vec<f64>,
}

impl CostDistribution {
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        if samples.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidParam("costs must be finite and non-negative".into()));
        }
        samples.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(samples.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for &s in &samples {
            acc += s;
            prefix.push(acc);
        }
        Ok(Self { samples, prefix })
    }

    pub fn from_channel(params: &ChannelParams, n: usize, seed: u64) -> Result<Self> {
        let sampler = params.sampler()?;
        let mut rng = stream(seed);
        Self::from_samples((0..n).map(|_| sampler.sample(&mut rng)).collect())
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.prefix[self.samples.len()] / self.samples.len() as f64
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    /// Lower empirical quantile.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.samples.len();
        let idx = ((p.clamp(0.0, 1.0) * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.samples[idx]
    }

    pub fn max(&self) -> f64 {
        *self.samples.last().expect("non-empty")
    }

    /// `E[min(C, x)]` under the empirical distribution.
    pub fn expected_min(&self, x: f64) -> f64 {
        let n = self.samples.len();
        let below = self.samples.partition_point(|&s| s < x);
        (self.prefix[below] + x * (n - below) as f64) / n as f64
    }

    /// Draws uniformly from the stored sample.
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.samples[rng.random_range(0..self.samples.len())]
    }

    /// Equal-probability discretization: bin `j` holds the `j`-th `1/n` of
    /// the sorted sample and is represented by its conditional mean, which
    /// preserves the overall mean.
    pub fn quantile_levels(&self, n_levels: usize) -> Result<CostLevels> {
        if n_levels == 0 || n_levels > self.samples.len() {
            return Err(Error::InvalidParam(format!(
                "cannot split {} samples into {n_levels} levels",
                self.samples.len()
            )));
        }
        let n = self.samples.len();
        let mut values = Vec::with_capacity(n_levels);
        let mut probs = Vec::with_capacity(n_levels);
        for j in 0..n_levels {
            let lo = j * n / n_levels;
            let hi = (j + 1) * n / n_levels;
            values.push((self.prefix[hi] - self.prefix[lo]) / (hi - lo) as f64);
            probs.push((hi - lo) as f64 / n as f64);
        }
        CostLevels::new(values, probs)
    }
}

pub fn expected_min_cost(x: f64, dist: &CostDistribution) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    if !(x >= 0.0) {
        return Err(Error::InvalidParam(format!("threshold must be non-negative, got {x}")));
    }
    Ok(dist.expected_min(x))
}

pub fn expected_cost(dist: &CostDistribution) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    Ok(dist.mean())
}

/// Finite channel side information: ascending cost levels with probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct CostLevels {
    values: Vec<f64>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl CostLevels {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() {
            return Err(Error::InvalidParam("levels and probabilities must match".into()));
        }
        if values.windows(2).any(|w| w[0] > w[1]) || values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParam("levels must be ascending and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 || probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidParam(format!(
                "level probabilities must sum to 1, got {total}"
            )));
        }
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            values,
            probs,
            cumulative,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let j = self.cumulative.partition_point(|&c| c <= u);
        self.values[j.min(self.values.len() - 1)]
    }
}

/// Source of the per-slot cost `C_t`.
#[derive(Clone, Debug)]
pub enum CostModel {
    Channel(ChannelSampler),
    Levels(CostLevels),
    Empirical(Arc<CostDistribution>),
}

impl CostModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            CostModel::Channel(s) => s.sample(rng),
            CostModel::Levels(l) => l.sample(rng),
            CostModel::Empirical(d) => d.resample(rng),
        }
    }

    pub fn c_max(&self) -> f64 {
        match self {
            CostModel::Channel(s) => s.c_max(),
            CostModel::Levels(l) => *l.values().last().expect("non-empty levels"),
            CostModel::Empirical(d) => d.max(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn path_loss_values() {
        assert_relative_eq!(path_loss_db(10.0, 1.0).unwrap(), 59.4, epsilon = 1e-12);
        // 36.7*2 + 22.7 + 26*0.39794000867 = 106.44644
        assert!((path_loss_db(100.0, 2.5).unwrap() - 106.446).abs() < 1e-3);
        // 36.7*2.39794000867 + 22.7 + 10.34644 = 121.05084
        assert!((path_loss_db(250.0, 2.5).unwrap() - 121.051).abs() < 1e-3);
        assert!(path_loss_db(0.0, 2.5).is_err());
        assert!(path_loss_db(10.0, -1.0).is_err());
    }

    #[test]
    fn path_loss_monotone() {
        let mut prev = path_loss_db(1.0, 2.5).unwrap();
        for d in 2..500 {
            let pl = path_loss_db(d as f64, 2.5).unwrap();
            assert!(pl > prev);
            prev = pl;
        }
        assert!(path_loss_db(100.0, 3.0).unwrap() > path_loss_db(100.0, 2.0).unwrap());
    }

    #[test]
    fn noise_power_values() {
        let p = ChannelParams::default();
        assert_eq!(noise_power_dbm(&p), -99.0);
        let unit = ChannelParams {
            bandwidth_hz: 1.0,
            noise_figure_db: 0.0,
            ..p.clone()
        };
        assert_eq!(noise_power_dbm(&unit), -174.0);
        let wide = ChannelParams {
            bandwidth_hz: 20e6,
            ..p
        };
        // -174 + 73.0103 + 5
        assert!((noise_power_dbm(&wide) - (-95.99)).abs() < 0.01);
    }

    #[test]
    fn reference_cost_at_100m() {
        // -99 + 4.771 - 17 + 106.446 = -4.782 dBm
        let p = ChannelParams::default();
        let c = p.cost_mw(100.0, 0.0).unwrap();
        assert!((c - 0.3325).abs() < 1e-3, "{c}");
    }

    #[test]
    fn dbm_round_trip() {
        for dbm in [-40.0, -4.782, 0.0, 13.3, 27.0] {
            let back = mw_to_dbm(dbm_to_mw(dbm));
            assert!((back - dbm).abs() <= 1e-12 * dbm.abs().max(1.0));
        }
    }

    #[test]
    fn samples_are_bounded() {
        let p = ChannelParams::default();
        let s = p.sampler().unwrap();
        let mut rng = stream(11);
        for _ in 0..100_000 {
            let c = s.sample(&mut rng);
            assert!(c > 0.0 && c <= s.c_max());
        }
    }

    #[test]
    fn median_matches_direct_formula() {
        // independent sampler: grid over distance, rejection-free quantile
        // grid over the truncated shadowing, cost written out from dB terms
        let p = ChannelParams::default();
        let n = 1000;
        let z_grid: Vec<f64> = {
            use rand::SeedableRng;
            use rand_distr::{Distribution, Normal};
            let mut rng = rand::rngs::StdRng::seed_from_u64(99);
            let normal = Normal::new(0.0, 4.0).unwrap();
            let mut v = Vec::new();
            while v.len() < n {
                let x: f64 = normal.sample(&mut rng);
                if x.abs() <= 12.0 {
                    v.push(x);
                }
            }
            v
        };
        let p_sig = -99.0 + 10.0 * 3f64.log10();
        let cap = p.c_max();
        let mut costs = Vec::with_capacity(n * n);
        for i in 0..n {
            let d = 50.0 + 200.0 * (i as f64 + 0.5) / n as f64;
            let pl = 36.7 * d.log10() + 22.7 + 26.0 * 2.5f64.log10();
            for &x in &z_grid {
                costs.push(10f64.powf((p_sig - 17.0 + pl + x) / 10.0).min(cap));
            }
        }
        costs.sort_by(f64::total_cmp);
        let expected = costs[costs.len() / 2];
        let dist = CostDistribution::from_channel(&p, 1_000_000, 12).unwrap();
        let rel = (dist.median() - expected).abs() / expected;
        assert!(rel < 0.01, "median {} vs {expected}", dist.median());
    }

    #[test]
    fn reseeding_keeps_distribution() {
        let p = ChannelParams::default();
        let a = CostDistribution::from_channel(&p, 100_000, 21).unwrap();
        let b = CostDistribution::from_channel(&p, 100_000, 22).unwrap();
        // two-sample Kolmogorov-Smirnov statistic
        let (xa, xb) = (a.samples(), b.samples());
        let (mut i, mut j, mut ks) = (0usize, 0usize, 0f64);
        while i < xa.len() && j < xb.len() {
            if xa[i] <= xb[j] {
                i += 1;
            } else {
                j += 1;
            }
            ks = ks.max((i as f64 / xa.len() as f64 - j as f64 / xb.len() as f64).abs());
        }
        assert!(ks < 0.01, "KS {ks}");
    }

    #[test]
    fn expected_cost_stable_across_seeds() {
        let p = ChannelParams::default();
        let a = CostDistribution::from_channel(&p, 1_000_000, 31).unwrap();
        let b = CostDistribution::from_channel(&p, 1_000_000, 32).unwrap();
        let (ma, mb) = (expected_cost(&a).unwrap(), expected_cost(&b).unwrap());
        assert!((ma - mb).abs() / ma < 0.005, "{ma} vs {mb}");
    }

    #[test]
    fn expected_min_examples() {
        let d = CostDistribution::from_samples(vec![3.0, 1.0]).unwrap();
        assert_eq!(expected_min_cost(0.0, &d).unwrap(), 0.0);
        assert_eq!(expected_min_cost(2.0, &d).unwrap(), 1.5);
        assert_eq!(expected_min_cost(10.0, &d).unwrap(), 2.0);
        assert_eq!(expected_cost(&d).unwrap(), 2.0);
        let single = CostDistribution::from_samples(vec![0.7]).unwrap();
        assert_eq!(expected_cost(&single).unwrap(), 0.7);
        assert!(matches!(
            CostDistribution::from_samples(vec![]),
            Err(Error::EmptyDistribution)
        ));
    }

    #[test]
    fn expected_min_reaches_mean_at_cap() {
        let p = ChannelParams::default();
        let d = CostDistribution::from_channel(&p, 10_000, 5).unwrap();
        assert_relative_eq!(d.expected_min(p.c_max()), d.mean(), max_relative = 1e-12);
    }

    #[test]
    fn expected_min_lipschitz_and_concave() {
        let p = ChannelParams::default();
        let d = CostDistribution::from_channel(&p, 20_000, 6).unwrap();
        let xs: Vec<f64> = (0..400).map(|i| i as f64 * 0.05).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| d.expected_min(x)).collect();
        for w in ys.windows(2) {
            assert!(w[1] >= w[0]);
            assert!(w[1] - w[0] <= 0.05 + 1e-12);
        }
        for w in ys.windows(3) {
            assert!(w[1] - w[0] >= w[2] - w[1] - 1e-12);
        }
        for (&x, &y) in xs.iter().zip(&ys) {
            assert!(y <= x.min(d.mean()) + 1e-12);
        }
    }

    #[test]
    fn quantile_levels_preserve_mean() {
        let p = ChannelParams::default();
        let d = CostDistribution::from_channel(&p, 80_000, 7).unwrap();
        let levels = d.quantile_levels(8).unwrap();
        assert_eq!(levels.len(), 8);
        assert_relative_eq!(levels.mean(), d.mean(), max_relative = 1e-12);
        assert!(levels.values().windows(2).all(|w| w[0] <= w[1]));
    }
}
