//! Core value types shared by the simulator, the trainers and the serving
//! path. Everything here is an immutable record; behavior lives elsewhere.

use serde::{Deserialize, Serialize};

/// Number of advertiser-level statistics embedded in state feature vectors:
/// `[hist_ctr, hist_cvr, squash(hist_gmv_mean), squash(cpc_target), squash(daily_budget)]`.
pub const ADVERTISER_FEATS: usize = 5;

/// Bounded squashing used for unbounded currency-scale features.
#[inline]
pub fn squash(x: f64) -> f64 {
    x / (1.0 + x)
}

/// An advertiser account: budget, CPC target and historical statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advertiser {
    pub id: u32,
    pub category: u32,
    /// Daily budget, must be positive.
    pub daily_budget: f64,
    /// Target average cost per click, must be positive.
    pub cpc_target: f64,
    pub hist_ctr: f64,
    pub hist_cvr: f64,
    pub hist_gmv_mean: f64,
}

impl Advertiser {
    pub fn validate(&self) -> Result<(), String> {
        if self.daily_budget <= 0.0 {
            return Err(format!("advertiser {}: daily_budget must be > 0", self.id));
        }
        if self.cpc_target <= 0.0 {
            return Err(format!("advertiser {}: cpc_target must be > 0", self.id));
        }
        for (name, v) in [("hist_ctr", self.hist_ctr), ("hist_cvr", self.hist_cvr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("advertiser {}: {name} out of [0,1]", self.id));
            }
        }
        Ok(())
    }

    /// The advertiser-level block used in both high- and low-level states.
    pub fn feature_block(&self) -> [f64; ADVERTISER_FEATS] {
        [
            self.hist_ctr,
            self.hist_cvr,
            squash(self.hist_gmv_mean),
            squash(self.cpc_target),
            squash(self.daily_budget),
        ]
    }
}

/// An ad surface with its own daily request volume and quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub id: u32,
    pub volume_per_day: u32,
    /// 24 nonnegative hourly weights summing to 1.
    pub arrival_profile: Vec<f64>,
    /// Positive multiplier applied to an advertiser's base CTR on this channel.
    pub quality_factor: f64,
}

impl Channel {
    pub fn validate(&self) -> Result<(), String> {
        if self.volume_per_day == 0 {
            return Err(format!("channel {}: volume_per_day must be > 0", self.id));
        }
        if self.arrival_profile.len() != 24 {
            return Err(format!("channel {}: arrival_profile must have 24 entries", self.id));
        }
        if self.arrival_profile.iter().any(|w| *w < 0.0) {
            return Err(format!("channel {}: arrival weights must be nonnegative", self.id));
        }
        let sum: f64 = self.arrival_profile.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("channel {}: arrival weights sum to {sum}, expected 1", self.id));
        }
        if self.quality_factor <= 0.0 {
            return Err(format!("channel {}: quality_factor must be > 0", self.id));
        }
        Ok(())
    }

    pub fn uniform_profile() -> Vec<f64> {
        vec![1.0 / 24.0; 24]
    }
}

/// A single ad request arriving on one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdRequest {
    pub id: u64,
    pub channel_id: u32,
    /// Seconds of day, in [0, 86400).
    pub timestamp: u32,
    /// Per-category affinity of the (synthetic) user behind this request.
    pub user_affinity: Vec<f64>,
}

/// Compact request reference embedded in every log record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestRef {
    pub id: u64,
    pub channel_id: u32,
    pub timestamp: u32,
}

impl From<&AdRequest> for RequestRef {
    fn from(r: &AdRequest) -> Self {
        RequestRef { id: r.id, channel_id: r.channel_id, timestamp: r.timestamp }
    }
}

/// One auction participation: the bid and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub request: RequestRef,
    pub advertiser_id: u32,
    /// Bid ratio; the bid price is `bid_ratio * cpc_target`.
    pub bid_ratio: f64,
    pub bid_price: f64,
    pub won: bool,
    /// Amount charged; nonzero only on a clicked win (CPC pricing).
    pub charged: f64,
    pub clicked: bool,
    pub ordered: bool,
    pub order_amount: f64,
}

/// Checks every `LogRecord` invariant and returns the broken ones.
/// Total function: an empty list means the record is valid.
pub fn validate_log(record: &LogRecord) -> Vec<String> {
    let mut violations = Vec::new();
    if record.charged > 0.0 && !(record.won && record.clicked) {
        violations.push("charged without win".to_string());
    }
    if record.charged > record.bid_price {
        violations.push("charged exceeds bid".to_string());
    }
    if record.ordered && !record.clicked {
        violations.push("ordered without click".to_string());
    }
    if record.clicked && !record.won {
        violations.push("clicked without win".to_string());
    }
    if record.charged < 0.0 {
        violations.push("negative charge".to_string());
    }
    violations
}

/// High-level experience tuple: one channel-allocation decision step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighTransition {
    /// `[allocated_so_far, remaining_budget_frac, channel one-hot (P), advertiser stats (5)]`.
    pub state: Vec<f64>,
    /// Index into the budget-percentage grid.
    pub action: usize,
    /// Click count on the channel within the interval.
    pub reward: f64,
    /// Spend on the channel within the interval.
    pub cost: f64,
    pub next_state: Vec<f64>,
    /// Set on the last channel of the episode.
    pub terminal: bool,
}

/// Low-level experience tuple: one bid decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowTransition {
    /// `[alloc_frac, time_frac, consumption_rate, csr_ratio, advertiser stats (5), (cost,click) cache (2P)]`.
    pub state: Vec<f64>,
    /// Index into the bid-ratio grid.
    pub action: usize,
    /// 1.0 iff the bid won and the user clicked.
    pub reward: f64,
    /// Amount charged for this request.
    pub cost: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// A `LowTransition` stamped with a sampled multiplier and the shaped reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedLowTransition {
    pub base: LowTransition,
    pub lambda: f64,
    /// `reward - lambda * cost`, exact.
    pub shaped_reward: f64,
}

/// Dimension of the high-level state vector for `channels` channels.
pub fn high_state_dim(channels: usize) -> usize {
    2 + channels + ADVERTISER_FEATS
}

/// Dimension of the low-level state vector for `channels` channels.
/// The trailing `2 * channels` slots hold the per-channel evaluation cache.
pub fn low_state_dim(channels: usize) -> usize {
    4 + ADVERTISER_FEATS + 2 * channels
}

/// Every tunable of the training stack. `Default` pins the published values;
/// anything else is a repo-level choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub high_batch_size: usize,
    pub low_batch_size: usize,
    pub high_lr: f64,
    pub low_lr: f64,
    pub gamma_high: f64,
    pub gamma_low: f64,
    pub w1: f64,
    pub w2: f64,
    pub w_b: f64,
    /// Upper end of the multiplier sampling range.
    pub lambda_max: f64,
    /// Data repetition times for the augmentation stage.
    pub n_repeat: usize,
    /// Number of candidate multipliers scanned during online selection.
    pub n_lambda: usize,
    pub action_min: f64,
    pub action_max: f64,
    /// High-level decision interval, in days.
    pub high_interval_days: u32,
    /// Softmax temperature in the differentiable cost relaxation.
    pub beta: f64,
    /// Hard target-network sync period, in iterations.
    pub n_target: usize,
    pub seed: u64,
    pub high_grid_size: usize,
    pub low_grid_size: usize,
    /// Capacity tolerance as a fraction of each channel's capacity.
    pub epsilon_fraction: f64,
    /// Hidden layer widths for every network.
    pub hidden: Vec<usize>,
    pub cvae_latent_dim: usize,
    /// In-distribution actions sampled per state for the OOD penalty.
    pub cvae_samples: usize,
    pub high_iters: usize,
    pub low_iters: usize,
    /// Keep the published form of the soft cost (cost inside the exponent)
    /// instead of the softmax-weighted expectation.
    pub literal_soft_cost: bool,
    /// Compare predicted cost against the full channel allocation instead of
    /// what remains of it.
    pub lambda_full_budget: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            high_batch_size: 4096,
            low_batch_size: 1024,
            high_lr: 1e-5,
            low_lr: 1e-5,
            gamma_high: 1.0,
            gamma_low: 0.999,
            w1: 1.0,
            w2: 0.05,
            w_b: 0.1,
            lambda_max: 1.45,
            n_repeat: 30,
            n_lambda: 50,
            action_min: 0.5,
            action_max: 1.5,
            high_interval_days: 1,
            beta: 2.0,
            n_target: 100,
            seed: 0,
            high_grid_size: 21,
            low_grid_size: 21,
            epsilon_fraction: 0.01,
            hidden: vec![128, 128, 128],
            cvae_latent_dim: 4,
            cvae_samples: 10,
            high_iters: 2000,
            low_iters: 2000,
            literal_soft_cost: false,
            lambda_full_budget: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.lambda_max <= 0.0 {
            return Err("lambda_max must be > 0".into());
        }
        if self.high_grid_size < 2 || self.low_grid_size < 2 {
            return Err("action grids need at least two points".into());
        }
        if self.n_repeat == 0 || self.n_lambda == 0 {
            return Err("n_repeat and n_lambda must be >= 1".into());
        }
        if self.action_min >= self.action_max {
            return Err("action range is empty".into());
        }
        if self.beta <= 0.0 {
            return Err("beta must be > 0".into());
        }
        Ok(())
    }

    /// Budget-percentage grid: `high_grid_size` uniform fractions on [0, 1].
    pub fn high_grid(&self) -> Vec<f64> {
        uniform_grid(0.0, 1.0, self.high_grid_size)
    }

    /// Bid-ratio grid: `low_grid_size` uniform ratios on the action range.
    pub fn low_grid(&self) -> Vec<f64> {
        uniform_grid(self.action_min, self.action_max, self.low_grid_size)
    }

    /// Candidate multipliers scanned during online selection.
    pub fn lambda_grid(&self) -> Vec<f64> {
        uniform_grid(0.0, self.lambda_max, self.n_lambda)
    }
}

/// `n` uniform points on [lo, hi], endpoints included.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Index of the grid point nearest to `x` (ties go to the lower index).
pub fn snap_to_grid(grid: &[f64], x: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, g) in grid.iter().enumerate() {
        let d = (x - g).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Aggregate outcome of a replayed log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub impr: u64,
    pub clicks: u64,
    /// Total cost over total clicks; 0 when there are no clicks.
    pub cpc: f64,
    /// Fraction of advertisers whose realized CPC meets their target.
    pub csr: f64,
    /// Order value over ad spend; 0 when there is no spend.
    pub roi: f64,
    pub capacity_satisfactory_ratio: f64,
    pub budget_satisfactory_ratio: f64,
    /// Per-channel `(cost, |cost - kappa|)`.
    pub channel_cost_deviation: Vec<(f64, f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> LogRecord {
        LogRecord {
            request: RequestRef { id: 1, channel_id: 0, timestamp: 3600 },
            advertiser_id: 7,
            bid_ratio: 1.0,
            bid_price: 2.0,
            won: true,
            charged: 1.5,
            clicked: true,
            ordered: false,
            order_amount: 0.0,
        }
    }

    #[test]
    fn charged_without_win_is_flagged() {
        let mut r = record();
        r.won = false;
        r.clicked = false;
        r.charged = 0.5;
        let v = validate_log(&r);
        assert!(v.iter().any(|m| m == "charged without win"), "{v:?}");
    }

    #[test]
    fn unclicked_win_with_zero_charge_is_valid() {
        let mut r = record();
        r.clicked = false;
        r.charged = 0.0;
        assert!(validate_log(&r).is_empty());
    }

    #[test]
    fn charge_above_bid_is_flagged() {
        let mut r = record();
        r.charged = 2.5;
        r.bid_price = 1.5;
        let v = validate_log(&r);
        assert!(v.iter().any(|m| m == "charged exceeds bid"), "{v:?}");
    }

    #[test]
    fn order_without_click_is_flagged() {
        let mut r = record();
        r.clicked = false;
        r.charged = 0.0;
        r.ordered = true;
        let v = validate_log(&r);
        assert!(v.iter().any(|m| m == "ordered without click"), "{v:?}");
    }

    #[test]
    fn default_config_pins_published_values() {
        let c = TrainConfig::default();
        assert_eq!(c.high_batch_size, 4096);
        assert_eq!(c.low_batch_size, 1024);
        assert_eq!(c.high_lr, 1e-5);
        assert_eq!(c.low_lr, 1e-5);
        assert_eq!(c.gamma_high, 1.0);
        assert_eq!(c.gamma_low, 0.999);
        assert_eq!(c.w1, 1.0);
        assert_eq!(c.w2, 0.05);
        assert_eq!(c.w_b, 0.1);
        assert_eq!(c.lambda_max, 1.45);
        assert_eq!(c.n_repeat, 30);
        assert_eq!(c.n_lambda, 50);
        assert_eq!(c.action_min, 0.5);
        assert_eq!(c.action_max, 1.5);
        assert_eq!(c.high_interval_days, 1);
        assert_eq!(c.epsilon_fraction, 0.01);
        c.validate().unwrap();
    }

    #[test]
    fn grids_cover_their_ranges() {
        let c = TrainConfig::default();
        let high = c.high_grid();
        assert_eq!(high.len(), 21);
        assert_eq!(high[0], 0.0);
        assert_eq!(*high.last().unwrap(), 1.0);
        assert!((high[1] - 0.05).abs() < 1e-12);
        let low = c.low_grid();
        assert_eq!(low.len(), 21);
        assert_eq!(low[0], 0.5);
        assert_eq!(*low.last().unwrap(), 1.5);
        let lam = c.lambda_grid();
        assert_eq!(lam.len(), 50);
        assert_eq!(lam[0], 0.0);
        assert!((lam[49] - 1.45).abs() < 1e-12);
    }

    #[test]
    fn snap_picks_nearest_point() {
        let grid = uniform_grid(0.0, 1.0, 21);
        assert_eq!(snap_to_grid(&grid, 0.43), 9); // 45%
        assert_eq!(snap_to_grid(&grid, 0.0), 0);
        assert_eq!(snap_to_grid(&grid, 2.0), 20);
        assert_eq!(snap_to_grid(&grid, -0.2), 0);
    }

    #[test]
    fn state_dims_are_stable() {
        assert_eq!(high_state_dim(4), 11);
        assert_eq!(low_state_dim(4), 17);
    }

    #[test]
    fn log_record_json_round_trip() {
        let r = record();
        let s = serde_json::to_string(&r).unwrap();
        let back: LogRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(r, back);
    }
}
