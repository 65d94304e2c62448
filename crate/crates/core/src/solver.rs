//! Picard iteration for the perturbed gauged problem
//! `i w_t + Δw = N(w + v₀)`, `w(0) = 0`, where `v₀` is the free evolution of
//! the data, and an independent RK4 integrator for plain NLS used to
//! cross-check it.
//!
//! The Picard map is `w ↦ -i·I(N(w + v₀))` with the trapezoid Duhamel
//! integral, so its fixed point is the implicit trapezoid scheme in the
//! interaction picture. Contraction is measured in `sup_t H^s`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{
    duhamel_all, equation_residual, free_evolution, gauge_transform, Equation, GaugeDirection,
    Nonlinearity, Propagator,
};
use crate::field::{FourierField, ModelParams, SpaceTimeField, TimeGrid};
use crate::norms::hs_norm;
use crate::random_data::{from_draw, GaussianDraw};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardConfig {
    /// Stop once `sup_t ‖w_{k+1} - w_k‖_{H^s} < tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest time step; the grid on `[0, δ]` is uniform.
    pub max_dt: f64,
    /// A horizon is abandoned when the ratio stays at or above this value...
    pub ratio_threshold: f64,
    /// ...for this many consecutive iterations.
    pub patience: usize,
    pub max_halvings: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            tol: 1e-8,
            max_iter: 25,
            max_dt: 1e-3,
            ratio_threshold: 0.5,
            patience: 3,
            max_halvings: 8,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.max_dt > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "tol and max_dt must be positive and max_iter at least 1".into(),
            ));
        }
        if !(self.ratio_threshold > 0.0) || self.patience == 0 {
            return Err(Error::InvalidParameter("ratio threshold and patience must be positive".into()));
        }
        Ok(())
    }
}

/// One attempt on a fixed horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardAttempt {
    pub delta: f64,
    pub steps: usize,
    pub diffs: Vec<f64>,
    pub contraction_ratios: Vec<f64>,
    pub converged: bool,
}

impl PicardAttempt {
    /// Worst ratio over the last `patience` iterations, or the last one.
    pub fn trailing_ratio(&self, patience: usize) -> f64 {
        let r = &self.contraction_ratios;
        r[r.len().saturating_sub(patience)..]
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardDiagnostics {
    /// Iterations of the successful (or last) attempt.
    pub iterates: usize,
    pub diffs: Vec<f64>,
    pub contraction_ratios: Vec<f64>,
    /// Discrete residual of `v = v₀ + w` in the gauged equation.
    pub final_residual: f64,
    pub delta_used: f64,
    pub dt: f64,
    pub halvings: usize,
    pub attempts: Vec<PicardAttempt>,
}

impl PicardDiagnostics {
    /// First iteration index (1-based) at which the ratio drops below `r`.
    pub fn first_ratio_below(&self, r: f64) -> Option<usize> {
        self.contraction_ratios.iter().position(|x| *x < r).map(|i| i + 2)
    }
}

/// `e^{itΔ} φ^ω` on `grid`.
pub fn linear_evolution_of_data(params: &ModelParams, draw: GaussianDraw, grid: &TimeGrid) -> SpaceTimeField {
    free_evolution(&from_draw(params, draw).field, grid)
}

/// One application of `w ↦ -i·I(N(w + v₀))`.
pub fn picard_map(nl: &Nonlinearity, v0: &SpaceTimeField, w: &SpaceTimeField) -> Result<SpaceTimeField> {
    let v = v0.add(w)?;
    let source = v.map(|_, _, f| nl.gauged(f));
    Ok(duhamel_all(&source).map(|_, _, f| f.scale(Complex64::new(0.0, -1.0))))
}

fn sup_hs_diff(a: &SpaceTimeField, b: &SpaceTimeField, s: f64) -> f64 {
    a.frames()
        .iter()
        .zip(b.frames())
        .map(|(x, y)| hs_norm(&(x - y), s))
        .fold(0.0, f64::max)
}

enum AttemptEnd {
    Converged(SpaceTimeField),
    Stalled,
}

fn attempt(
    nl: &Nonlinearity,
    v0: &SpaceTimeField,
    s: f64,
    cfg: &PicardConfig,
) -> Result<(AttemptEnd, PicardAttempt)> {
    let mut w = SpaceTimeField::zeros(*v0.spec(), v0.grid().clone());
    let mut rec = PicardAttempt {
        delta: v0.grid().horizon(),
        steps: v0.grid().steps(),
        diffs: Vec::new(),
        contraction_ratios: Vec::new(),
        converged: false,
    };
    let mut streak = 0;
    for _ in 0..cfg.max_iter {
        let next = picard_map(nl, v0, &w)?;
        let diff = sup_hs_diff(&next, &w, s);
        if let Some(&prev) = rec.diffs.last() {
            let ratio = if prev > 0.0 { diff / prev } else { 0.0 };
            rec.contraction_ratios.push(ratio);
            if ratio >= cfg.ratio_threshold {
                streak += 1;
            } else {
                streak = 0;
            }
        }
        rec.diffs.push(diff);
        w = next;
        if diff < cfg.tol {
            rec.converged = true;
            return Ok((AttemptEnd::Converged(w), rec));
        }
        if streak >= cfg.patience || !diff.is_finite() {
            break;
        }
    }
    Ok((AttemptEnd::Stalled, rec))
}

/// Halves the horizon of a free evolution: keeps the first half of the nodes
/// when the step count is even, otherwise re-propagates the initial frame
/// onto a fresh grid.
fn halve(v0: &SpaceTimeField, cfg: &PicardConfig) -> Result<SpaceTimeField> {
    let steps = v0.grid().steps();
    if steps % 2 == 0 && steps >= 2 {
        return Ok(v0.truncated(steps / 2 + 1));
    }
    let grid = TimeGrid::with_max_step(v0.grid().horizon() / 2.0, cfg.max_dt)?;
    Ok(free_evolution(v0.frame(0), &grid))
}

/// Solves for `w` on the grid of `v0`, halving the horizon when the
/// iteration does not contract. Fails with diagnostics after
/// `max_halvings` halvings or when halving stops improving the ratio.
pub fn picard_solve(
    nl: &Nonlinearity,
    v0: &SpaceTimeField,
    s: f64,
    cfg: &PicardConfig,
) -> Result<(SpaceTimeField, PicardDiagnostics)> {
    cfg.validate()?;
    let mut v0 = v0.clone();
    let mut attempts: Vec<PicardAttempt> = Vec::new();
    for halvings in 0..=cfg.max_halvings {
        let (end, rec) = attempt(nl, &v0, s, cfg)?;
        attempts.push(rec.clone());
        match end {
            AttemptEnd::Converged(w) => {
                let v = v0.add(&w)?;
                let diag = PicardDiagnostics {
                    iterates: rec.diffs.len(),
                    diffs: rec.diffs,
                    contraction_ratios: rec.contraction_ratios,
                    final_residual: equation_residual(&v, nl, Equation::Gauged),
                    delta_used: v0.grid().horizon(),
                    dt: v0.grid().dt()?,
                    halvings,
                    attempts,
                };
                return Ok((w, diag));
            }
            AttemptEnd::Stalled => {
                let n = attempts.len();
                let worsened = n >= 2
                    && attempts[n - 1].trailing_ratio(cfg.patience)
                        > attempts[n - 2].trailing_ratio(cfg.patience);
                if worsened || halvings == cfg.max_halvings {
                    let last_ratio = rec.contraction_ratios.last().copied().unwrap_or(f64::NAN);
                    let diag = PicardDiagnostics {
                        iterates: rec.diffs.len(),
                        diffs: rec.diffs,
                        contraction_ratios: rec.contraction_ratios,
                        final_residual: f64::NAN,
                        delta_used: v0.grid().horizon(),
                        dt: v0.grid().dt()?,
                        halvings,
                        attempts,
                    };
                    return Err(Error::NoContraction {
                        halvings,
                        last_ratio,
                        diagnostics: Box::new(diag),
                    });
                }
                v0 = halve(&v0, cfg)?;
            }
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Classical RK4 for plain NLS `i u_t + Δu = ρ|u|²u` in the interaction
/// picture `U' = -i e^{-itΔ}(ρ|u|²u)`, `u = e^{itΔ}U`, stepping between the
/// nodes of `grid`.
pub fn direct_step_solve(nl: &Nonlinearity, phi: &FourierField, grid: &TimeGrid) -> Result<SpaceTimeField> {
    let prop = Propagator::new(phi.spec());
    let rhs = |t: f64, big_u: &FourierField| -> FourierField {
        let u = prop.apply(big_u, t);
        prop.twist(&nl.plain(&u), t).scale(Complex64::new(0.0, -1.0))
    };
    let times = grid.times();
    let mut state = phi.clone();
    let mut frames = Vec::with_capacity(times.len());
    frames.push(phi.clone());
    for k in 1..times.len() {
        let (t, h) = (times[k - 1], times[k] - times[k - 1]);
        let before = state.l2_norm();
        let hc = |x: f64| Complex64::new(x, 0.0);
        let k1 = rhs(t, &state);
        let k2 = rhs(t + h / 2.0, &state.axpy(hc(h / 2.0), &k1)?);
        let k3 = rhs(t + h / 2.0, &state.axpy(hc(h / 2.0), &k2)?);
        let k4 = rhs(t + h, &state.axpy(hc(h), &k3)?);
        let incr = &(&k1 + &(&k2 * 2.0)) + &(&(&k3 * 2.0) + &k4);
        state = state.axpy(hc(h / 6.0), &incr)?;
        let after = state.l2_norm();
        if !after.is_finite() || (before > 0.0 && after > 10.0 * before) {
            return Err(Error::Instability {
                t: times[k],
                before,
                after,
            });
        }
        frames.push(prop.apply(&state, times[k]));
    }
    SpaceTimeField::new(grid.clone(), frames)
}

/// Everything produced by one run of the solution pipeline.
#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub v0: SpaceTimeField,
    pub w: SpaceTimeField,
    /// Plain NLS solution obtained by ungauging `v₀ + w`.
    pub u: SpaceTimeField,
    pub direct: SpaceTimeField,
    pub diagnostics: PicardDiagnostics,
    /// Discrete residual of `u` in plain NLS.
    pub plain_residual: f64,
    /// `sup_t ‖u - u_direct‖_{L²}`.
    pub agreement: f64,
}

/// Free evolution of `phi`, Picard solve, ungauge, and RK4 cross-check on the
/// grid the solver settled on.
pub fn solve_pipeline(nl: &Nonlinearity, phi: &FourierField, delta: f64, s: f64, cfg: &PicardConfig) -> Result<SolveOutcome> {
    let grid = TimeGrid::with_max_step(delta, cfg.max_dt)?;
    let v0 = free_evolution(phi, &grid);
    let (w, diagnostics) = picard_solve(nl, &v0, s, cfg)?;
    let v0 = if w.grid() == v0.grid() {
        v0
    } else {
        free_evolution(phi, w.grid())
    };
    let v = v0.add(&w)?;
    let (u, _) = gauge_transform(&v, nl, GaugeDirection::Forward);
    let direct = direct_step_solve(nl, phi, w.grid())?;
    let agreement = u.sub(&direct)?.sup_l2();
    let plain_residual = equation_residual(&u, nl, Equation::Plain);
    Ok(SolveOutcome {
        v0,
        w,
        u,
        direct,
        diagnostics,
        plain_residual,
        agreement,
    })
}
