//! Linear Schrödinger flow, Duhamel integral, the gauged and plain cubic
//! nonlinearities and the gauge transform.
//!
//! Sign convention: `e^{itΔ}` multiplies `û(n)` by `e^{-it|n|²}`, the flow of
//! `i u_t + Δu = 0`. The interaction picture ("twisted" frame) of a path is
//! `U(t)(n) = e^{+it|n|²} û(t)(n)`; free evolutions are constant there.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{coeff_inner, triple_product, FourierField, MeanConvention, SpaceTimeField, TimeGrid};
use crate::lattice::LatticeSpec;

/// `e^{itΔ} u`.
pub fn propagate(u: &FourierField, t: f64) -> FourierField {
    Propagator::new(u.spec()).apply(u, t)
}

/// `|n|²` per mode; phases `e^{-it|n|²}` are evaluated once per distinct
/// value.
pub struct Propagator {
    nsq: Vec<usize>,
    max: usize,
}

impl Propagator {
    pub fn new(spec: &LatticeSpec) -> Self {
        let nsq: Vec<usize> = spec.norm_sq_table().into_iter().map(|q| q as usize).collect();
        let max = nsq.iter().copied().max().unwrap_or(0);
        Propagator { nsq, max }
    }

    /// `e^{itΔ} u`.
    pub fn apply(&self, u: &FourierField, t: f64) -> FourierField {
        let phases: Vec<Complex64> = (0..=self.max)
            .map(|q| Complex64::from_polar(1.0, -t * q as f64))
            .collect();
        u.map(|i, c| c * phases[self.nsq[i]])
    }

    /// `e^{-itΔ} u`, the map into the interaction picture.
    pub fn twist(&self, u: &FourierField, t: f64) -> FourierField {
        self.apply(u, -t)
    }
}

/// `e^{itΔ} φ` at every node of `grid`.
pub fn free_evolution(phi: &FourierField, grid: &TimeGrid) -> SpaceTimeField {
    let prop = Propagator::new(phi.spec());
    SpaceTimeField::from_fn(grid.clone(), |_, t| prop.apply(phi, t)).expect("frames share a lattice")
}

/// The two parts of `N(v₁, v₂, v₃) = ρ(v₁ w₂ v₃ - 2 v₁ ⟨w₂ v₃⟩)`, where `w₂`
/// is `v̄₂` or `v₂` and `⟨·⟩` is the spatial integral under the chosen
/// normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearTerms {
    pub cubic: FourierField,
    pub mean_part: FourierField,
}

impl NonlinearTerms {
    pub fn total(&self) -> FourierField {
        &self.cubic + &self.mean_part
    }
}

/// Configuration of the gauged nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub rho: f64,
    #[serde(default)]
    pub mean: MeanConvention,
    /// Whether slot 2 enters conjugated; `N(v) = N(v, v̄, v)` needs `true`.
    #[serde(default = "default_true")]
    pub conjugate_second: bool,
}

fn default_true() -> bool {
    true
}

impl Nonlinearity {
    pub fn new(rho: f64) -> Self {
        Nonlinearity {
            rho,
            mean: MeanConvention::Volume,
            conjugate_second: true,
        }
    }

    pub fn with_mean(mut self, mean: MeanConvention) -> Self {
        self.mean = mean;
        self
    }

    /// Spatial integral of `w₂ v₃` under the configured normalization.
    pub fn pair_mean(&self, v2: &FourierField, v3: &FourierField) -> Result<Complex64> {
        v2.check_same_spec(v3)?;
        let raw = if self.conjugate_second {
            coeff_inner(v2, v3)
        } else {
            let len = v2.coeffs().len();
            (0..len).map(|i| v2.coeffs()[len - 1 - i] * v3.coeffs()[i]).sum()
        };
        Ok(raw * self.mean.factor(v2.spec().dim()))
    }

    pub fn terms(&self, v1: &FourierField, v2: &FourierField, v3: &FourierField) -> Result<NonlinearTerms> {
        let cubic = triple_product(v1, self.conjugate_second, v2, v3)?.scale(Complex64::new(self.rho, 0.0));
        let mean = self.pair_mean(v2, v3)?;
        let mean_part = v1.scale(mean * (-2.0 * self.rho));
        Ok(NonlinearTerms { cubic, mean_part })
    }

    pub fn apply(&self, v1: &FourierField, v2: &FourierField, v3: &FourierField) -> Result<FourierField> {
        Ok(self.terms(v1, v2, v3)?.total())
    }

    /// `N(v) = N(v, v̄, v)`, regardless of the slot-2 flag.
    pub fn gauged(&self, v: &FourierField) -> FourierField {
        let conj = Nonlinearity {
            conjugate_second: true,
            ..*self
        };
        conj.apply(v, v, v).expect("a field shares its own lattice")
    }

    /// Plain cubic term `ρ|u|²u`.
    pub fn plain(&self, u: &FourierField) -> FourierField {
        triple_product(u, true, u, u)
            .expect("a field shares its own lattice")
            .scale(Complex64::new(self.rho, 0.0))
    }

    /// `β_v = 2⟨|v|²⟩` under the configured normalization.
    pub fn beta(&self, v: &FourierField) -> f64 {
        2.0 * self.mean.factor(v.spec().dim()) * v.coeff_norm_sq()
    }
}

/// `∫₀^{t_k} e^{i(t_k - t')Δ} f(t') dt'` at every node, by the trapezoid rule
/// on the interaction-picture integrand `e^{-it'Δ} f(t')`.
pub fn duhamel_all(f: &SpaceTimeField) -> SpaceTimeField {
    let prop = Propagator::new(f.spec());
    let times = f.times();
    let twisted: Vec<FourierField> = f
        .frames()
        .iter()
        .zip(times)
        .map(|(fr, &t)| prop.twist(fr, t))
        .collect();
    let mut acc = FourierField::zeros(*f.spec());
    let mut frames = Vec::with_capacity(times.len());
    frames.push(acc.clone());
    for k in 1..times.len() {
        let h = times[k] - times[k - 1];
        let half = Complex64::new(h / 2.0, 0.0);
        for ((a, x), y) in acc
            .coeffs_mut()
            .iter_mut()
            .zip(twisted[k - 1].coeffs())
            .zip(twisted[k].coeffs())
        {
            *a += half * (x + y);
        }
        frames.push(prop.apply(&acc, times[k]));
    }
    SpaceTimeField::new(f.grid().clone(), frames).expect("frames share a lattice")
}

/// Duhamel integral at the grid node `t`.
pub fn duhamel(f: &SpaceTimeField, t: f64) -> Result<FourierField> {
    let k = f.grid().node_of(t)?;
    let truncated = f.truncated(k + 1);
    Ok(duhamel_all(&truncated).frames()[k].clone())
}

/// `β` and its accumulated phase `Φ(t) = ∫₀^t β` on a time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugePhase {
    pub times: Vec<f64>,
    pub beta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl GaugePhase {
    pub fn of(v: &SpaceTimeField, nl: &Nonlinearity) -> Self {
        let times = v.times().to_vec();
        let beta: Vec<f64> = v.frames().iter().map(|f| nl.beta(f)).collect();
        let mut phi = vec![0.0; times.len()];
        for k in 1..times.len() {
            phi[k] = phi[k - 1] + 0.5 * (times[k] - times[k - 1]) * (beta[k] + beta[k - 1]);
        }
        GaugePhase { times, beta, phi }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeDirection {
    /// `u = e^{-iρΦ_v} v`, from the gauged equation to plain NLS.
    Forward,
    /// `v = e^{+iρΦ_u} u`, with `Φ` from the input's own mass.
    Inverse,
}

pub fn gauge_transform(
    v: &SpaceTimeField,
    nl: &Nonlinearity,
    direction: GaugeDirection,
) -> (SpaceTimeField, GaugePhase) {
    let phase = GaugePhase::of(v, nl);
    let sign = match direction {
        GaugeDirection::Forward => -1.0,
        GaugeDirection::Inverse => 1.0,
    };
    let out = v.map(|k, _, f| f.scale(Complex64::from_polar(1.0, sign * nl.rho * phase.phi[k])));
    (out, phase)
}

/// Which equation a defect is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    /// `i u_t + Δu = ρ|u|²u`.
    Plain,
    /// `i v_t + Δv = N(v)`.
    Gauged,
}

/// Discrete residual of `i u_t + Δu = G(u)` on the grid: in the interaction
/// picture the per-step defect
/// `r_k = (U_{k+1} - U_k)/h_k + (i/2)(e^{-it_{k+1}Δ}G_{k+1} + e^{-it_kΔ}G_k)`
/// is measured in `L²(T^d)` and combined as `(Σ h_k ‖r_k‖²)^{1/2}`.
pub fn equation_residual(u: &SpaceTimeField, nl: &Nonlinearity, equation: Equation) -> f64 {
    let prop = Propagator::new(u.spec());
    let times = u.times();
    let twisted_state: Vec<FourierField> = u
        .frames()
        .iter()
        .zip(times)
        .map(|(f, &t)| prop.twist(f, t))
        .collect();
    let twisted_source: Vec<FourierField> = u
        .frames()
        .iter()
        .zip(times)
        .map(|(f, &t)| {
            let g = match equation {
                Equation::Plain => nl.plain(f),
                Equation::Gauged => nl.gauged(f),
            };
            prop.twist(&g, t)
        })
        .collect();
    let mut total = 0.0;
    for k in 0..times.len().saturating_sub(1) {
        let h = times[k + 1] - times[k];
        let i_half = Complex64::new(0.0, 0.5);
        let defect_sq: f64 = (0..u.spec().len())
            .map(|j| {
                let du = (twisted_state[k + 1].coeffs()[j] - twisted_state[k].coeffs()[j]) / h;
                let src = i_half * (twisted_source[k + 1].coeffs()[j] + twisted_source[k].coeffs()[j]);
                (du + src).norm_sqr()
            })
            .sum();
        total += h * defect_sq * crate::field::torus_volume(u.spec().dim());
    }
    total.sqrt()
}

/// Refuses non-uniform grids for operations that need a fixed step.
pub fn require_uniform(grid: &TimeGrid) -> Result<f64> {
    if !grid.is_uniform() {
        return Err(Error::NonUniformGrid);
    }
    grid.dt()
}
