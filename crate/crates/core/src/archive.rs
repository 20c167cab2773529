//! Offline analysis results bundled for the planner: balance tube,
//! capturable tubes for every terminal phase and the cost surrogates.

use serde::{Deserialize, Serialize};

use crate::capturability::{
    self, capturable_tube, balance_tube, fit_surrogate, inflate_target, BalanceDiagnostics, BalanceOptions, CapError,
    FitOptions, FitReport, QuadraticSurrogate, Tube,
};
use crate::lip::{LipConfig, LipError, SwitchedLipSystem};
use crate::polytope::Polytope;

pub const ARCHIVE_SCHEMA: &str = "quadcap.tube-archive/1";

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error(transparent)]
    Config(#[from] LipError),
    #[error(transparent)]
    Analysis(#[from] CapError),
    #[error("archive schema `{found}` is not supported (expected `{ARCHIVE_SCHEMA}`)")]
    Schema { found: String },
    #[error("archive is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ArchiveError>;

/// Everything that determines an archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub lip: LipConfig,
    /// Capturable-tube horizon `T` in steps.
    pub horizon: usize,
    /// Running set `X`: `X_T` scaled by these factors in position and velocity.
    pub running_scale: [f64; 2],
    pub balance: BalanceOptions,
    pub fit: FitOptions,
    pub volume_samples: usize,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            lip: LipConfig::default(),
            horizon: 10,
            running_scale: [3.0, 10.0],
            balance: BalanceOptions::default(),
            fit: FitOptions::default(),
            volume_samples: 20_000,
            seed: 0,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        self.lip.validate()?;
        if self.running_scale.iter().any(|s| !(s.is_finite() && *s >= 1.0)) {
            return Err(LipError::InvalidParam("running_scale factors must be >= 1".into()).into());
        }
        if self.balance.max_iter == 0 {
            return Err(LipError::InvalidParam("balance.max_iter must be positive".into()).into());
        }
        Ok(())
    }

    pub fn running_set(&self) -> Polytope {
        inflate_target(&self.lip.target_region, self.running_scale[0], self.running_scale[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeArchive {
    pub schema: String,
    pub config: AnalysisConfig,
    pub balance: Tube,
    pub diagnostics: BalanceDiagnostics,
    pub running: Polytope,
    /// Capturable tube per terminal phase.
    pub capturable: Vec<Tube>,
    /// Surrogate of slice `C(T)` per phase of that slice.
    pub surrogates: Vec<QuadraticSurrogate>,
    pub fit_reports: Vec<FitReport>,
}

impl TubeArchive {
    /// Runs the full offline analysis.
    pub fn build(config: &AnalysisConfig) -> Result<Self> {
        config.validate()?;
        let sys = config.lip.build()?;
        let tg = sys.period();
        let x_t = config.lip.target_polytope();
        let bopts = BalanceOptions { seed: config.seed, volume_samples: config.volume_samples, ..config.balance };
        let (balance, diagnostics) = balance_tube(&x_t, &sys, &bopts)?;
        let running = config.running_set();
        let capturable: Vec<Tube> = (0..tg)
            .map(|t| capturable_tube(&balance, &running, &sys, t, config.horizon, config.volume_samples, config.seed))
            .collect::<capturability::Result<_>>()?;
        let mut surrogates = Vec::with_capacity(tg);
        let mut fit_reports = Vec::with_capacity(tg);
        for phase in 0..tg {
            let terminal = (phase + config.horizon) % tg;
            let slice = &capturable[terminal].slices[config.horizon];
            let fopts = FitOptions { seed: config.seed.wrapping_add(phase as u64), ..config.fit };
            let (s, r) = fit_surrogate(slice, &sys, phase, &balance.slices[terminal], &running, config.horizon, &fopts)?;
            log::debug!("surrogate phase {phase}: lift {:.3e}, {} held-out violations", r.lift, r.holdout_violations);
            surrogates.push(s);
            fit_reports.push(r);
        }
        Ok(Self {
            schema: ARCHIVE_SCHEMA.to_string(),
            config: config.clone(),
            balance,
            diagnostics,
            running,
            capturable,
            surrogates,
            fit_reports,
        })
    }

    pub fn system(&self) -> Result<SwitchedLipSystem> {
        Ok(self.config.lip.build()?)
    }

    pub fn period(&self) -> usize {
        self.balance.slices.len() - 1
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// Balance slice at `phase` (taken modulo the period).
    pub fn balance_slice(&self, phase: usize) -> &Polytope {
        &self.balance.slices[phase % self.period()]
    }

    /// `C(k; B_{(phase + k) mod T_G})`, a set at `phase`.
    pub fn capture_slice(&self, phase: usize, k: usize) -> &Polytope {
        let tg = self.period();
        &self.capturable[(phase + k) % tg].slices[k]
    }

    /// Surrogate for `C(T)` at `phase`.
    pub fn surrogate(&self, phase: usize) -> &QuadraticSurrogate {
        &self.surrogates[phase % self.period()]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value.get("schema").and_then(|s| s.as_str()).unwrap_or("").to_string();
        if found != ARCHIVE_SCHEMA {
            return Err(ArchiveError::Schema { found });
        }
        let archive: Self = serde_json::from_value(value)?;
        archive.check()?;
        Ok(archive)
    }

    fn check(&self) -> Result<()> {
        let tg = self.config.lip.period_steps;
        let bad = |m: &str| Err(ArchiveError::Inconsistent(m.to_string()));
        if self.balance.slices.len() != tg + 1 {
            return bad("balance tube length differs from the gait period");
        }
        if self.capturable.len() != tg || self.surrogates.len() != tg {
            return bad("need one capturable tube and surrogate per phase");
        }
        if self.capturable.iter().any(|t| t.slices.len() != self.config.horizon + 1) {
            return bad("capturable tube length differs from the horizon");
        }
        Ok(())
    }
}
