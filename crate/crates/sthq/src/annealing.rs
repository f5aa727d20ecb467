//! Hardness schedules: gap-feedback control and exponential growth, plus the
//! hard-switch criterion and per-iteration telemetry.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Result, SthqError};

/// Lower clamp for sigma; early negative gaps must not drive it to zero.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Difference between hard and soft quantization error.
pub fn gap(e_soft: f64, e_hard: f64) -> f64 {
    e_hard - e_soft
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleMode {
    /// `sigma(t+1) = sigma(t) + gain * (gap(t) - target(t))` where
    /// `target(t) = half_life / (half_life + t) * gap0`: the target gap is
    /// halved after `half_life` iterations.
    GapFeedback { half_life: f64, gain: f64, gap0: f64 },
    /// `sigma(t+1) = growth * sigma(t)`.
    Exponential { growth: f64 },
}

/// Hardness state advanced once per training iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealState {
    sigma: f64,
    sigma0: f64,
    t: u64,
    mode: ScheduleMode,
}

impl AnnealState {
    pub fn gap_feedback(sigma0: f64, half_life: f64, gain: f64, gap0: f64) -> Result<AnnealState> {
        if !(sigma0 > 0.0) || !(half_life > 0.0) {
            return Err(SthqError::InvalidArgument(
                "gap feedback needs sigma0 > 0 and half_life > 0".into(),
            ));
        }
        Ok(AnnealState {
            sigma: sigma0,
            sigma0,
            t: 0,
            mode: ScheduleMode::GapFeedback { half_life, gain, gap0 },
        })
    }

    pub fn exponential(sigma0: f64, growth: f64) -> Result<AnnealState> {
        if !(sigma0 > 0.0) || !(growth > 1.0) {
            return Err(SthqError::InvalidArgument(
                "exponential schedule needs sigma0 > 0 and growth > 1".into(),
            ));
        }
        Ok(AnnealState { sigma: sigma0, sigma0, t: 0, mode: ScheduleMode::Exponential { growth } })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    pub fn mode(&self) -> &ScheduleMode {
        &self.mode
    }

    /// Current gap target, `half_life/(half_life + t) * gap0`; gap mode only.
    pub fn target_gap(&self) -> Option<f64> {
        match &self.mode {
            ScheduleMode::GapFeedback { half_life, gap0, .. } => {
                Some(half_life / (half_life + self.t as f64) * gap0)
            }
            ScheduleMode::Exponential { .. } => None,
        }
    }

    /// Feedback update from the measured gap at iteration `t`.
    pub fn gap_feedback_step(&mut self, gap_t: f64) -> Result<()> {
        let (gain, target) = match (&self.mode, self.target_gap()) {
            (ScheduleMode::GapFeedback { gain, .. }, Some(target)) => (*gain, target),
            _ => {
                return Err(SthqError::InvalidArgument(
                    "gap_feedback_step on a non-gap schedule".into(),
                ))
            }
        };
        let error = gap_t - target;
        self.sigma = (self.sigma + gain * error).max(SIGMA_FLOOR);
        self.t += 1;
        Ok(())
    }

    /// Multiplicative update.
    pub fn exponential_step(&mut self) -> Result<()> {
        let growth = match &self.mode {
            ScheduleMode::Exponential { growth } => *growth,
            _ => {
                return Err(SthqError::InvalidArgument(
                    "exponential_step on a non-exponential schedule".into(),
                ))
            }
        };
        self.sigma *= growth;
        self.t += 1;
        Ok(())
    }
}

/// When to stop soft training and fine-tune with hard assignments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SwitchPolicy {
    /// Switch once sigma reaches an absolute threshold.
    SigmaAtLeast(f64),
    /// Switch once sigma has grown by this factor over sigma0.
    GrowthFactor(f64),
    Never,
}

pub fn hard_switch_reached(state: &AnnealState, policy: SwitchPolicy) -> bool {
    match policy {
        SwitchPolicy::SigmaAtLeast(th) => state.sigma >= th,
        SwitchPolicy::GrowthFactor(f) => state.sigma >= f * state.sigma0,
        SwitchPolicy::Never => false,
    }
}

/// Per-iteration diagnostics: `t,sigma,e_soft,e_hard,gap,target_gap,entropy_bits`.
/// `target_gap` is blank for schedules without one.
pub struct TelemetryWriter {
    w: BufWriter<File>,
}

impl TelemetryWriter {
    pub fn create(path: &Path) -> Result<TelemetryWriter> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "t,sigma,e_soft,e_hard,gap,target_gap,entropy_bits")?;
        Ok(TelemetryWriter { w })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        t: u64,
        sigma: f64,
        e_soft: f64,
        e_hard: f64,
        gap: f64,
        target_gap: Option<f64>,
        entropy_bits: f64,
    ) -> Result<()> {
        let target = target_gap.map(|v| format!("{v:.9e}")).unwrap_or_default();
        writeln!(
            self.w,
            "{t},{sigma:.9e},{e_soft:.9e},{e_hard:.9e},{gap:.9e},{target},{entropy_bits:.9e}"
        )?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}
