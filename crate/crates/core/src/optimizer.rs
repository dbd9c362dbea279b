//! Gradient descent on the Schmidt TNS.
//!
//! Each step moves every raw parameter against its gradient, projects stack
//! tensors back onto the orthogonal group with the polar factor and rescales
//! λ to unit norm. A step that raises the energy is rejected and retried with
//! half the step size.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::contraction::{fixed_point, EnergyReport, Environment, Evaluator};
use crate::error::{Error, Result};
use crate::lattice::Hamiltonian;
use crate::schmidt::SchmidtTns;
use crate::tensor::{ParamKind, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    pub max_steps: usize,
    /// Converged once `|ΔE_b|` across `window` steps drops below this.
    pub tolerance: f64,
    pub window: usize,
    /// Applied to `eta` when a window brings no improvement.
    pub decay: f64,
    pub seed: u64,
    /// Environments of translational states are recomputed every this many
    /// accepted steps.
    pub env_refresh: usize,
    /// Halvings tried before a step is given up.
    pub max_retries: usize,
    /// Step size of the λ tensors relative to `eta`.
    pub lambda_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            max_steps: 5000,
            tolerance: 1e-8,
            window: 50,
            decay: 0.5,
            seed: 0,
            env_refresh: 1,
            max_retries: 10,
            lambda_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        if self.window == 0 || self.env_refresh == 0 {
            return bad("window and env_refresh must be positive");
        }
        if !(self.lambda_scale > 0.0 && self.lambda_scale.is_finite()) {
            return bad("lambda_scale must be positive");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad("decay must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub energy_per_bond: f64,
    pub norm: f64,
    /// Largest absolute gradient entry.
    pub grad_norm: f64,
    pub eta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxSteps,
    /// No step size down to `eta / 2^max_retries` lowered the energy.
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<StepRecord>,
    pub termination: Termination,
    pub wall_time_s: f64,
}

impl TrainTrace {
    pub fn final_energy_per_bond(&self) -> Option<f64> {
        self.records.last().map(|r| r.energy_per_bond)
    }
}

/// Energy and gradients of a finite state, or of a translational state with
/// freshly computed environments.
pub fn compute_gradients(state: &SchmidtTns, h: &Hamiltonian) -> Result<(EnergyReport, Vec<Tensor>)> {
    let ev = Evaluator::for_hamiltonian(&state.arch, h)?;
    let env = state.arch.is_translational().then(|| fixed_point(state)).transpose()?;
    ev.evaluate_with_gradients(state, env.as_ref())
}

/// One descent step of size `eta`, followed by retraction and λ
/// normalization. A failed retraction halves `eta`, up to ten times.
pub fn step(state: &SchmidtTns, grads: &[Tensor], eta: f64) -> Result<SchmidtTns> {
    step_scaled(state, grads, eta, 1.0)
}

/// As [`step`] with the λ step size multiplied by `lambda_scale`.
pub fn step_scaled(state: &SchmidtTns, grads: &[Tensor], eta: f64, lambda_scale: f64) -> Result<SchmidtTns> {
    let count = state.parameters().count();
    if grads.len() != count {
        return Err(Error::LengthMismatch {
            expected: count,
            actual: grads.len(),
        });
    }
    for (p, g) in state.parameters().zip(grads) {
        if p.raw.shape() != g.shape() {
            return Err(Error::Architecture("gradient shape differs from its parameter".into()));
        }
    }
    let mut eta = eta;
    for _ in 0..=10 {
        let mut next = state.clone();
        let mut failed = false;
        for (p, g) in next.parameters_mut().zip(grads) {
            let h = if p.kind == ParamKind::SquaredPositive { eta * lambda_scale } else { eta };
            for (x, d) in p.raw.data_mut().iter_mut().zip(g.data()) {
                *x -= h * d;
            }
            if matches!(p.kind, ParamKind::Unitary { .. }) {
                match p.retract() {
                    Ok(()) => {}
                    Err(Error::RankDeficient { .. }) => {
                        failed = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if failed {
            eta *= 0.5;
            continue;
        }
        next.normalize_lambda()?;
        return Ok(next);
    }
    Err(Error::RetractionFailed(10))
}

fn inf_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::max_abs).fold(0.0, f64::max)
}

/// Gradient descent until the energy change over a window falls below the
/// tolerance or the step budget runs out. Returns the lowest-energy state.
pub fn train(state: &SchmidtTns, h: &Hamiltonian, config: &TrainConfig) -> Result<(SchmidtTns, TrainTrace)> {
    train_with(state, h, config, |_| {})
}

/// As [`train`], calling `observe` after every accepted step.
pub fn train_with(
    state: &SchmidtTns,
    h: &Hamiltonian,
    config: &TrainConfig,
    mut observe: impl FnMut(&SchmidtTns),
) -> Result<(SchmidtTns, TrainTrace)> {
    config.validate()?;
    let start = Instant::now();
    let ev = Evaluator::for_hamiltonian(&state.arch, h)?;
    let translational = state.arch.is_translational();
    let mut current = state.clone();
    current.normalize_lambda()?;
    let mut env: Option<Environment> = translational.then(|| fixed_point(&current)).transpose()?;
    let (mut report, mut grads) = ev.evaluate_with_gradients(&current, env.as_ref())?;
    let mut eta = config.eta;
    let mut records = vec![StepRecord {
        step: 0,
        energy_per_bond: report.energy_per_bond,
        norm: report.norm,
        grad_norm: inf_norm(&grads),
        eta,
    }];
    let mut termination = Termination::MaxSteps;
    let mut accepted = 0usize;
    'outer: for step_idx in 1..=config.max_steps {
        let mut trial_eta = eta;
        let mut tries = 0;
        let (next, next_env, next_report, next_grads) = loop {
            let candidate = step_scaled(&current, &grads, trial_eta, config.lambda_scale)?;
            let cand_env = if translational && (accepted + 1) % config.env_refresh == 0 {
                Some(fixed_point(&candidate)?)
            } else {
                env.clone()
            };
            let (r, g) = ev.evaluate_with_gradients(&candidate, cand_env.as_ref())?;
            if r.energy <= report.energy + 1e-12 * report.energy.abs().max(1.0) {
                break (candidate, cand_env, r, g);
            }
            tries += 1;
            if tries > config.max_retries {
                termination = Termination::Stalled;
                break 'outer;
            }
            trial_eta *= 0.5;
            eta = trial_eta;
        };
        current = next;
        env = next_env;
        report = next_report;
        grads = next_grads;
        accepted += 1;
        observe(&current);
        records.push(StepRecord {
            step: step_idx,
            energy_per_bond: report.energy_per_bond,
            norm: report.norm,
            grad_norm: inf_norm(&grads),
            eta: trial_eta,
        });
        if step_idx % config.window == 0 {
            let then = records[step_idx - config.window].energy_per_bond;
            let delta = then - report.energy_per_bond;
            if delta.abs() < config.tolerance {
                termination = Termination::Converged;
                break;
            }
            if delta <= 0.0 {
                eta *= config.decay;
            }
        }
    }
    Ok((
        current,
        TrainTrace {
            records,
            termination,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    ))
}
