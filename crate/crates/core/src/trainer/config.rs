//! Training configuration: a plain `key = value` file plus named presets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::transforms::Profile;

pub const LAMBDA_RANGE: (f64, f64) = (0.01, 0.5);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Mse,
    MsSsim,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::MsSsim => "msssim",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Metric::Mse),
            "msssim" | "ms-ssim" => Ok(Metric::MsSsim),
            _ => Err(invalid(format!("unknown metric '{s}' (mse, msssim)"))),
        }
    }
}

/// What the synthesis transform and the hyper/context networks see during
/// training. Entropy-model inputs (the values whose rate is measured) are
/// always the noisy ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conditioning {
    /// Rounded `ŷ`, `ẑ` feed `g_s`, `h_a`, `h_s` and the known-latent windows.
    Discrete,
    /// Noisy `ỹ`, `z̃` everywhere.
    Noisy,
}

impl Conditioning {
    pub fn name(self) -> &'static str {
        match self {
            Conditioning::Discrete => "discrete",
            Conditioning::Noisy => "noisy",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "discrete" => Ok(Conditioning::Discrete),
            "noisy" => Ok(Conditioning::Noisy),
            _ => Err(invalid(format!("unknown conditioning '{s}' (discrete, noisy)"))),
        }
    }
}

/// Constant rate, then halving every `halve_every` iterations from
/// `decay_start` on (the first halving happens at `decay_start`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub decay_start: u64,
    pub halve_every: u64,
    /// Optional constant-rate phase run before the schedule proper.
    pub pretrain_iterations: u64,
    pub pretrain_lr: f64,
}

impl Schedule {
    /// Halving every 10% of the run over its last 40%.
    pub fn desk(iterations: u64, base_lr: f64) -> Self {
        let every = (iterations / 10).max(1);
        Self {
            base_lr,
            decay_start: iterations - (iterations * 4 / 10),
            halve_every: every,
            pretrain_iterations: 0,
            pretrain_lr: 0.0,
        }
    }

    /// Learning rate at main-phase iteration `iter` (0-based).
    pub fn lr_at(&self, iter: u64) -> f64 {
        if iter < self.decay_start {
            return self.base_lr;
        }
        let halvings = (iter - self.decay_start) / self.halve_every.max(1) + 1;
        self.base_lr * 0.5f64.powi(halvings.min(1000) as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub profile: Profile,
    pub lambda: f64,
    /// Accept λ outside the range used for the published models.
    pub allow_any_lambda: bool,
    pub metric: Metric,
    pub batch_size: usize,
    pub iterations: u64,
    pub schedule: Schedule,
    /// Positions per image that contribute to the `y` rate term.
    pub rate_points: usize,
    pub conditioning: Conditioning,
    pub seed: u64,
    /// Square crop side; must be a multiple of 64.
    pub crop: usize,
    /// Iterations above 10× the initial loss before the run is abandoned.
    pub divergence_window: u64,
}

impl TrainConfig {
    /// Desk-scale defaults: 2k iterations at 1e-3 with batches of four,
    /// halving in the last 40%.
    pub fn desk(profile: Profile, lambda: f64) -> Self {
        let iterations = 2000;
        Self {
            profile,
            lambda,
            allow_any_lambda: false,
            metric: Metric::Mse,
            batch_size: 4,
            iterations,
            schedule: Schedule::desk(iterations, 1e-3),
            rate_points: default_rate_points(profile),
            conditioning: Conditioning::Discrete,
            seed: 0,
            crop: 64,
            divergence_window: 1000,
        }
    }

    /// The full-scale protocol: 1M iterations at 5e-5, halving every 50k
    /// over the last 200k, 256×256 crops, batches of eight; hybrid profiles
    /// add 1M pre-training iterations at 1e-5.
    pub fn full(profile: Profile, lambda: f64) -> Self {
        let hybrid = matches!(profile, Profile::Hybrid320 | Profile::Hybrid400);
        Self {
            iterations: 1_000_000,
            crop: 256,
            schedule: Schedule {
                base_lr: 5e-5,
                decay_start: 800_000,
                halve_every: 50_000,
                pretrain_iterations: if hybrid { 1_000_000 } else { 0 },
                pretrain_lr: if hybrid { 1e-5 } else { 0.0 },
            },
            batch_size: 8,
            ..Self::desk(profile, lambda)
        }
    }

    pub fn total_iterations(&self) -> u64 {
        self.schedule.pretrain_iterations + self.iterations
    }

    /// Learning rate at overall iteration `iter`, pre-training included.
    pub fn lr_at(&self, iter: u64) -> f64 {
        let pre = self.schedule.pretrain_iterations;
        if iter < pre {
            self.schedule.pretrain_lr
        } else {
            self.schedule.lr_at(iter - pre)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = LAMBDA_RANGE;
        if !self.lambda.is_finite() || !(0.0..=1.0).contains(&self.lambda) {
            return Err(invalid(format!("lambda {} is outside [0, 1]", self.lambda)));
        }
        if !self.allow_any_lambda && !(lo..=hi).contains(&self.lambda) {
            return Err(invalid(format!(
                "lambda {} is outside [{lo}, {hi}]; set allow_any_lambda to override",
                self.lambda
            )));
        }
        if self.batch_size == 0 || self.rate_points == 0 {
            return Err(invalid("batch_size and rate_points must be positive"));
        }
        if self.crop == 0 || self.crop % crate::transforms::BLOCK != 0 {
            return Err(invalid(format!("crop {} is not a positive multiple of 64", self.crop)));
        }
        if !(self.schedule.base_lr > 0.0) || self.schedule.halve_every == 0 {
            return Err(invalid("base_lr must be positive and halve_every nonzero"));
        }
        if self.schedule.pretrain_iterations > 0 && !(self.schedule.pretrain_lr > 0.0) {
            return Err(invalid("pretrain_lr must be positive when pretraining"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let s_ = &self.schedule;
        for (k, v) in [
            ("profile", self.profile.name().to_string()),
            ("lambda", self.lambda.to_string()),
            ("allow_any_lambda", self.allow_any_lambda.to_string()),
            ("metric", self.metric.name().to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("iterations", self.iterations.to_string()),
            ("lr", s_.base_lr.to_string()),
            ("decay_start", s_.decay_start.to_string()),
            ("halve_every", s_.halve_every.to_string()),
            ("pretrain_iterations", s_.pretrain_iterations.to_string()),
            ("pretrain_lr", s_.pretrain_lr.to_string()),
            ("rate_points", self.rate_points.to_string()),
            ("conditioning", self.conditioning.name().to_string()),
            ("seed", self.seed.to_string()),
            ("crop", self.crop.to_string()),
            ("divergence_window", self.divergence_window.to_string()),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Parses a config file. `preset = desk|full` (default desk) picks the
    /// starting point; other keys override it. Setting `iterations` without
    /// a schedule rescales the desk schedule to the new length.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&parse_kv(text)?)?;
        Ok(cfg)
    }

    /// Applies `key = value` overrides on top of `self`.
    pub fn apply(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| invalid(format!("config key '{k}': bad value '{v}'")))
        }
        let profile = match map.get("profile") {
            Some(p) => Profile::from_name(p)?,
            None => self.profile,
        };
        let lambda = match map.get("lambda") {
            Some(v) => num("lambda", v)?,
            None => self.lambda,
        };
        if let Some(p) = map.get("preset") {
            *self = match p.as_str() {
                "desk" => Self::desk(profile, lambda),
                "full" => Self::full(profile, lambda),
                _ => return Err(invalid(format!("unknown preset '{p}' (desk, full)"))),
            };
        } else if profile != self.profile {
            self.rate_points = default_rate_points(profile);
        }
        self.profile = profile;
        self.lambda = lambda;
        let schedule_keys = ["decay_start", "halve_every"];
        for (k, v) in map {
            match k.as_str() {
                "profile" | "lambda" | "preset" => {}
                "allow_any_lambda" => self.allow_any_lambda = num(k, v)?,
                "metric" => self.metric = Metric::from_name(v)?,
                "batch_size" => self.batch_size = num(k, v)?,
                "iterations" => {
                    self.iterations = num(k, v)?;
                    if !schedule_keys.iter().any(|s| map.contains_key(*s)) {
                        let lr = self.schedule.base_lr;
                        let pre = (self.schedule.pretrain_iterations, self.schedule.pretrain_lr);
                        self.schedule = Schedule::desk(self.iterations, lr);
                        (self.schedule.pretrain_iterations, self.schedule.pretrain_lr) = pre;
                    }
                }
                "lr" => self.schedule.base_lr = num(k, v)?,
                "decay_start" => self.schedule.decay_start = num(k, v)?,
                "halve_every" => self.schedule.halve_every = num(k, v)?,
                "pretrain_iterations" => self.schedule.pretrain_iterations = num(k, v)?,
                "pretrain_lr" => self.schedule.pretrain_lr = num(k, v)?,
                "rate_points" => self.rate_points = num(k, v)?,
                "conditioning" => self.conditioning = Conditioning::from_name(v)?,
                "seed" => self.seed = num(k, v)?,
                "crop" => self.crop = num(k, v)?,
                "divergence_window" => self.divergence_window = num(k, v)?,
                _ => return Err(Error::InvalidArgument(format!("unknown config key '{k}'"))),
            }
        }
        self.validate()
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk(Profile::Tiny, 0.05)
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("config line {}: expected key = value", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// 32 sampled positions for single-model profiles, 16 for hybrids.
pub fn default_rate_points(profile: Profile) -> usize {
    match profile {
        Profile::Hybrid320 | Profile::Hybrid400 => 16,
        _ => 32,
    }
}
