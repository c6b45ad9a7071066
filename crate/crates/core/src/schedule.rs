//! Diffusion variance schedules.
//!
//! Tables are indexed from zero: entry `i` holds the value for diffusion step
//! `t = i + 1`, so `alpha_bars[0]` is ᾱ₁ and ᾱ₀ = 1 is implicit.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Upper bound applied to every β.
pub const MAX_BETA: f64 = 0.999;

/// Default offset `s` of the cosine schedule.
pub const DEFAULT_COSINE_OFFSET: f64 = 0.008;

/// How the reverse-step noise scale σₜ is derived from the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaPolicy {
    /// σₜ = √βₜ
    #[default]
    Beta,
    /// σₜ = √(βₜ·(1−ᾱₜ₋₁)/(1−ᾱₜ)), which is zero at t = 1.
    BetaTilde,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_sigmas: Vec<f64>,
    policy: SigmaPolicy,
}

/// f(t) = cos²(((t/T + s)/(1 + s))·π/2)
fn cosine_f(t: f64, num_steps: f64, offset: f64) -> f64 {
    let angle = (t / num_steps + offset) / (1.0 + offset) * FRAC_PI_2;
    let c = angle.cos();
    c * c
}

/// Builds the cosine schedule with ᾱₜ = f(t)/f(0) and βₜ = 1 − ᾱₜ/ᾱₜ₋₁
/// clipped to [`MAX_BETA`]. The stored ᾱ table is the running product of the
/// clipped αs, so the recurrence holds exactly.
pub fn cosine_schedule(num_steps: usize, offset: f64) -> Result<NoiseSchedule> {
    if num_steps == 0 {
        return Err(Error::config("schedule.num_steps", "must be at least 1"));
    }
    if !(offset > 0.0) || !offset.is_finite() {
        return Err(Error::config(
            "schedule.offset",
            format!("must be a positive finite number, got {offset}"),
        ));
    }
    let total = num_steps as f64;
    let f0 = cosine_f(0.0, total, offset);
    let mut betas = Vec::with_capacity(num_steps);
    let mut prev = 1.0;
    for step in 1..=num_steps {
        let bar = cosine_f(step as f64, total, offset) / f0;
        let beta = (1.0 - bar / prev).clamp(f64::MIN_POSITIVE, MAX_BETA);
        betas.push(beta);
        prev = bar;
    }
    Ok(NoiseSchedule::from_betas(betas, SigmaPolicy::default()))
}

impl NoiseSchedule {
    fn from_betas(betas: Vec<f64>, policy: SigmaPolicy) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let mut schedule = NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
            posterior_sigmas: Vec::new(),
            policy,
        };
        schedule.posterior_sigmas = schedule.compute_sigmas(policy);
        schedule
    }

    fn compute_sigmas(&self, policy: SigmaPolicy) -> Vec<f64> {
        match policy {
            SigmaPolicy::Beta => self.betas.iter().map(|b| b.sqrt()).collect(),
            SigmaPolicy::BetaTilde => (0..self.num_steps())
                .map(|i| {
                    let prev_bar = if i == 0 { 1.0 } else { self.alpha_bars[i - 1] };
                    (self.betas[i] * (1.0 - prev_bar) / (1.0 - self.alpha_bars[i])).sqrt()
                })
                .collect(),
        }
    }

    /// Returns a copy whose posterior σ table follows `policy`.
    pub fn with_sigma_policy(mut self, policy: SigmaPolicy) -> Self {
        self.posterior_sigmas = self.compute_sigmas(policy);
        self.policy = policy;
        self
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior_sigmas(&self) -> &[f64] {
        &self.posterior_sigmas
    }

    pub fn sigma_policy(&self) -> SigmaPolicy {
        self.policy
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::Data(format!(
                "diffusion step {t} outside 1..={}",
                self.num_steps()
            )));
        }
        Ok(t - 1)
    }

    /// β at one-based diffusion step `t`.
    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.index(t)?])
    }

    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok(self.posterior_sigmas[self.index(t)?])
    }
}

/// Serializable description of a schedule; enough to rebuild it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "default_kind")]
    pub kind: ScheduleKind,
    #[serde(default = "default_num_steps")]
    pub num_steps: usize,
    #[serde(default = "default_offset")]
    pub offset: f64,
    #[serde(default)]
    pub sigma: SigmaPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine,
}

fn default_kind() -> ScheduleKind {
    ScheduleKind::Cosine
}

fn default_num_steps() -> usize {
    1000
}

fn default_offset() -> f64 {
    DEFAULT_COSINE_OFFSET
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            kind: default_kind(),
            num_steps: default_num_steps(),
            offset: default_offset(),
            sigma: SigmaPolicy::default(),
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match self.kind {
            ScheduleKind::Cosine => {
                Ok(cosine_schedule(self.num_steps, self.offset)?.with_sigma_policy(self.sigma))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(cosine_schedule(0, 0.008).is_err());
        assert!(cosine_schedule(10, 0.0).is_err());
        assert!(cosine_schedule(10, -1.0).is_err());
        assert!(cosine_schedule(10, f64::NAN).is_err());
    }

    #[test]
    fn single_step_schedule() {
        let s = cosine_schedule(1, 0.008).unwrap();
        assert_eq!(s.num_steps(), 1);
        let b = s.betas()[0];
        assert!(b > 0.0 && b <= MAX_BETA);
    }

    #[test]
    fn invariants_hold_for_many_lengths() {
        for &n in &[1usize, 2, 3, 10, 57, 100, 1000, 4000] {
            let s = cosine_schedule(n, 0.008).unwrap();
            for i in 0..n {
                assert!(s.betas()[i] > 0.0 && s.betas()[i] < 1.0);
                assert_eq!(s.alphas()[i], 1.0 - s.betas()[i]);
                assert!(s.alpha_bars()[i] > 0.0 && s.alpha_bars()[i] < 1.0);
                if i > 0 {
                    assert!(s.alpha_bars()[i] < s.alpha_bars()[i - 1]);
                    let r = s.alpha_bars()[i] - s.alpha_bars()[i - 1] * s.alphas()[i];
                    assert!(r.abs() < 1e-12);
                }
            }
            assert!(s.betas().iter().cloned().fold(0.0, f64::max) <= MAX_BETA);
        }
    }

    #[test]
    fn sigma_policies() {
        let s = cosine_schedule(100, 0.008).unwrap();
        for (sig, b) in s.posterior_sigmas().iter().zip(s.betas()) {
            assert_eq!(*sig, b.sqrt());
        }
        let tilde = s.clone().with_sigma_policy(SigmaPolicy::BetaTilde);
        // ᾱ₀ = 1 makes the first posterior variance vanish.
        assert_eq!(tilde.sigma(1).unwrap(), 0.0);
        for t in 1..=100 {
            let sb = s.sigma(t).unwrap();
            assert!(sb > 0.0 && sb <= 1.0);
            if t > 1 {
                let st = tilde.sigma(t).unwrap();
                assert!(st > 0.0 && st <= 1.0, "t={t} sigma={st}");
                assert!(st <= sb);
            }
        }
    }

    #[test]
    fn one_based_accessors() {
        let s = cosine_schedule(5, 0.008).unwrap();
        assert!(s.beta(0).is_err());
        assert!(s.beta(6).is_err());
        assert_eq!(s.alpha_bar(1).unwrap(), s.alpha_bars()[0]);
        assert_eq!(s.alpha_bar(5).unwrap(), s.alpha_bars()[4]);
    }
}
