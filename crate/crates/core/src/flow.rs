//! Outer iteration of the scheme: the time-discrete trajectory.

use crate::energy::EnergyForm;
use crate::error::{Error, Result};
use crate::grid::{cell_average, deregularize, regularize_initial, GridSpec, InitialProfile};
use crate::mobility::MobilitySpec;
use crate::solver::{solve_step, ObjectiveSpec, SolveOptions};

/// Default bound on the mass removed or added by clamping in one step.
pub const DEFAULT_CLAMP_THRESHOLD: f64 = 1e-6;

/// Tolerance for the deregularize/regularize round trip between steps.
const ROUND_TRIP_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub tau: f64,
    pub steps: usize,
    pub epsilon: f64,
    pub grid: GridSpec,
    pub mobility: MobilitySpec,
    pub energy: EnergyForm,
    pub snapshot_every: usize,
    pub solver: SolveOptions,
    /// Largest tolerated `Δx Σ_j |clamped_j − raw_j|` per step.
    pub clamp_threshold: f64,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            bad.push(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            bad.push(format!("epsilon must lie in (0,1), got {}", self.epsilon));
        }
        let support = self.mobility.support();
        if support.is_finite() && !(self.epsilon < 0.5 * support) {
            bad.push(format!("epsilon must be below M/2 = {}", 0.5 * support));
        }
        if self.snapshot_every == 0 {
            bad.push("snapshot_every must be at least 1".to_string());
        }
        if !(self.clamp_threshold >= 0.0) {
            bad.push(format!(
                "clamp_threshold must be nonnegative, got {}",
                self.clamp_threshold
            ));
        }
        if let Err(e) = self.solver.validate() {
            bad.push(e.to_string());
        }
        if let Err(e) = self.energy.validate() {
            bad.push(e.to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(bad.join("; ")))
        }
    }
}

/// Per-step record. Step 0 describes the initial profile.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub energy: f64,
    /// Action part of the step objective, `(Δt Δx / 2τ) Σ φ_ε`.
    pub action: f64,
    pub newton_iters: usize,
    pub grad_norm: f64,
    /// `Δx Σ_j |clamped_j − raw_j|` from deregularizing the previous profile.
    pub clamped_mass: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tau: f64,
    pub grid: GridSpec,
    /// `k τ` for `k = 0..=K`.
    pub times: Vec<f64>,
    /// Regularized densities `u^k`, one per time.
    pub profiles: Vec<Vec<f64>>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.profiles.len() - 1
    }

    pub fn last(&self) -> &[f64] {
        self.profiles
            .last()
            .expect("trajectory holds the initial profile")
    }
}

/// Cell-averages `u0`, checks admissibility and regularizes.
pub fn initial_profile(config: &FlowConfig, u0: &InitialProfile) -> Result<Vec<f64>> {
    let support = config.mobility.support();
    let n_x = config.grid.n_x();
    let averaged = cell_average(u0, n_x);
    if let Some(&z) = averaged
        .iter()
        .find(|&&z| !(z >= 0.0) || (support.is_finite() && z > support))
    {
        return Err(Error::Precondition(format!(
            "initial datum is not admissible: cell average {z} outside [0, {support}]"
        )));
    }
    let row = regularize_initial(&averaged, config.epsilon, support)?;
    let samples = config.energy.sample_potential(&config.grid);
    let e = config
        .energy
        .discrete_energy(&config.grid, &samples, &row)?;
    if !e.is_finite() {
        return Err(Error::Precondition(
            "initial datum has infinite discrete energy".into(),
        ));
    }
    Ok(row)
}

/// Runs the scheme for `config.steps` steps.
pub fn run_flow(config: &FlowConfig, u0: &InitialProfile) -> Result<Trajectory> {
    run_flow_observed(config, u0, |_, _| Ok(()))
}

/// As [`run_flow`], calling `observer` after the initial profile and after
/// every step; an observer error aborts the run.
pub fn run_flow_observed<F>(
    config: &FlowConfig,
    u0: &InitialProfile,
    mut observer: F,
) -> Result<Trajectory>
where
    F: FnMut(&StepDiagnostics, &[f64]) -> Result<()>,
{
    config.validate()?;
    let grid = config.grid;
    let samples = config.energy.sample_potential(&grid);
    let first = initial_profile(config, u0)?;

    let diag0 = StepDiagnostics {
        step: 0,
        time: 0.0,
        mass: grid.mass(&first),
        energy: config.energy.discrete_energy(&grid, &samples, &first)?,
        action: 0.0,
        newton_iters: 0,
        grad_norm: 0.0,
        clamped_mass: 0.0,
        converged: true,
    };
    observer(&diag0, &first)?;
    let mut traj = Trajectory {
        tau: config.tau,
        grid,
        times: vec![0.0],
        profiles: vec![first],
        diagnostics: vec![diag0],
    };

    let mut spec = ObjectiveSpec {
        tau: config.tau,
        epsilon: config.epsilon,
        mobility: config.mobility.clone(),
        energy: config.energy.clone(),
        potential: samples.clone(),
        grid,
        init_row: Vec::new(),
    };
    let mut warm: Option<Vec<f64>> = None;
    for k in 1..=config.steps {
        let (init_row, clamped_mass) = next_init_row(traj.last(), config, k)?;
        spec.init_row = init_row;
        let res = solve_step(&spec, &config.solver, warm.as_deref()).map_err(|e| match e {
            Error::Solver { reason, .. } => Error::Solver { step: k, reason },
            other => other,
        })?;
        let row = res.final_row();
        let diag = StepDiagnostics {
            step: k,
            time: k as f64 * config.tau,
            mass: grid.mass(&row),
            energy: config.energy.discrete_energy(&grid, &samples, &row)?,
            action: res.action_part,
            newton_iters: res.iterations,
            grad_norm: res.grad_norm,
            clamped_mass,
            converged: res.converged,
        };
        observer(&diag, &row)?;
        warm = Some(res.w_free);
        traj.times.push(diag.time);
        traj.profiles.push(row);
        traj.diagnostics.push(diag);
    }
    Ok(traj)
}

/// Deregularizes and re-regularizes the previous profile, enforcing the
/// clamping threshold and checking the round trip.
fn next_init_row(prev: &[f64], config: &FlowConfig, k: usize) -> Result<(Vec<f64>, f64)> {
    let support = config.mobility.support();
    let de = deregularize(prev, config.epsilon, support)?;
    let clamped_mass = config.grid.dx() * de.clamped;
    if clamped_mass > config.clamp_threshold {
        return Err(Error::Clamping {
            step: k,
            clamped: clamped_mass,
            threshold: config.clamp_threshold,
        });
    }
    let init_row = regularize_initial(&de.values, config.epsilon, support)?;
    if de.clamped == 0.0 {
        if let Some((a, b)) = init_row
            .iter()
            .zip(prev)
            .find(|(a, b)| (*a - *b).abs() > ROUND_TRIP_TOL * b.abs().max(1.0))
        {
            return Err(Error::Solver {
                step: k,
                reason: format!("regularization round trip is not the identity: {b} -> {a}"),
            });
        }
    }
    Ok((init_row, clamped_mass))
}

/// Piecewise constant, left-open interpolation: `u(t) = u^k` for
/// `t ∈ ((k−1)τ, kτ]`, and `u(0) = u^0`.
pub fn interpolate_pwc(traj: &Trajectory, t: f64) -> Result<&[f64]> {
    let k_max = traj.steps();
    let end = k_max as f64 * traj.tau;
    if !(t >= 0.0) || t > end * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "time {t} outside [0, {end}]"
        )));
    }
    let s = t / traj.tau;
    let nearest = s.round();
    let k = if (s - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        s.ceil() as usize
    };
    Ok(&traj.profiles[k.min(k_max)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlackReport {
    /// Largest `E(u^k) − E(u^{k−1}) − bound_k` over all steps (−∞ for no steps).
    pub max_violation: f64,
    /// Step attaining `max_violation`.
    pub worst_step: Option<usize>,
    pub passed: bool,
}

/// Allowed excess in the slack inequality.
pub const SLACK_TOL: f64 = 1e-9;

/// Checks `E(u^k) ≤ E(u^{k−1}) + (ε/2τ) Δx Σ_j 1/m(u^{k−1}_j)` for every step.
///
/// The right-hand side is the step objective at zero flux, which the minimizer
/// can only improve on.
pub fn check_energy_slack(traj: &Trajectory, config: &FlowConfig) -> Result<SlackReport> {
    let grid = traj.grid;
    let samples = config.energy.sample_potential(&grid);
    let mut max_violation = f64::NEG_INFINITY;
    let mut worst_step = None;
    for k in 1..traj.profiles.len() {
        let prev = &traj.profiles[k - 1];
        let e_prev = config.energy.discrete_energy(&grid, &samples, prev)?;
        let e_cur = config
            .energy
            .discrete_energy(&grid, &samples, &traj.profiles[k])?;
        let mut inv_m = 0.0;
        for &z in prev {
            inv_m += 1.0 / config.mobility.eval(z)?.m;
        }
        let bound = config.epsilon / (2.0 * config.tau) * grid.dx() * inv_m;
        let violation = e_cur - e_prev - bound;
        if violation > max_violation {
            max_violation = violation;
            worst_step = Some(k);
        }
    }
    Ok(SlackReport {
        max_violation,
        worst_step,
        passed: !(max_violation > SLACK_TOL),
    })
}
