//! Fourier-space fields on the truncated lattice, transforms to the physical
//! grid, dealiased cubic products, model parameters and space-time fields.
//!
//! Normalization: `T^d = [0, 2π)^d` with plain Lebesgue measure and
//! `û(n) = (2π)^{-d} ∫ u e^{-in·x} dx`, so `‖u‖²_{L²} = (2π)^d Σ |û(n)|²`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, CONVENTION_TAG};
use crate::spectral::{bin_table, fast_size, fft_nd_banded};

/// `(2π)^d`, the volume of the torus.
pub fn torus_volume(d: usize) -> f64 {
    (2.0 * PI).powi(d as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierField {
    spec: LatticeSpec,
    coeffs: Vec<Complex64>,
}

impl FourierField {
    pub fn zeros(spec: LatticeSpec) -> Self {
        FourierField {
            spec,
            coeffs: vec![Complex64::default(); spec.len()],
        }
    }

    pub fn from_coeffs(spec: LatticeSpec, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != spec.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} coefficients, got {}",
                spec.len(),
                coeffs.len()
            )));
        }
        Ok(FourierField { spec, coeffs })
    }

    /// `c·e^{in·x}`.
    pub fn single_mode(spec: LatticeSpec, n: &[i64], c: Complex64) -> Result<Self> {
        let idx = spec
            .index_of(n)
            .ok_or_else(|| Error::InvalidParameter(format!("mode {n:?} lies outside the lattice")))?;
        let mut f = Self::zeros(spec);
        f.coeffs[idx] = c;
        Ok(f)
    }

    pub fn constant(spec: LatticeSpec, c: Complex64) -> Self {
        let mut f = Self::zeros(spec);
        let origin = spec.len() / 2;
        f.coeffs[origin] = c;
        f
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn get(&self, n: &[i64]) -> Complex64 {
        self.spec
            .index_of(n)
            .map(|i| self.coeffs[i])
            .unwrap_or_default()
    }

    pub fn check_same_spec(&self, other: &FourierField) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch(format!(
                "d={} M={} vs d={} M={}",
                self.spec.dim(),
                self.spec.radius(),
                other.spec.dim(),
                other.spec.radius()
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == Complex64::default())
    }

    /// `Σ |û(n)|²`.
    pub fn coeff_norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `‖u‖_{L²(T^d)}` by Plancherel.
    pub fn l2_norm(&self) -> f64 {
        (torus_volume(self.spec.dim()) * self.coeff_norm_sq()).sqrt()
    }

    pub fn scale(&self, a: Complex64) -> FourierField {
        self.map(|_, c| c * a)
    }

    pub fn conj_coeffs(&self) -> FourierField {
        self.map(|_, c| c.conj())
    }

    /// Fourier coefficients of the pointwise conjugate `ū`:
    /// `(ū)^(n) = conj(û(-n))`.
    pub fn conjugate(&self) -> FourierField {
        let len = self.coeffs.len();
        let coeffs = (0..len).map(|i| self.coeffs[len - 1 - i].conj()).collect();
        FourierField {
            spec: self.spec,
            coeffs,
        }
    }

    /// Applies `f(index, coefficient)` to every mode.
    pub fn map(&self, f: impl Fn(usize, Complex64) -> Complex64) -> FourierField {
        FourierField {
            spec: self.spec,
            coeffs: self.coeffs.iter().enumerate().map(|(i, &c)| f(i, c)).collect(),
        }
    }

    /// `self + a·other`.
    pub fn axpy(&self, a: Complex64, other: &FourierField) -> Result<FourierField> {
        self.check_same_spec(other)?;
        Ok(FourierField {
            spec: self.spec,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(x, y)| x + a * y)
                .collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &FourierField) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Samples of `Σ û(n) e^{in·x}` at `x_j = 2πj/grid` on every axis,
    /// flattened with the first axis most significant.
    pub fn to_physical(&self, grid: usize) -> Result<PhysicalField> {
        let min = self.spec.side();
        if grid < min {
            return Err(Error::GridTooSmall {
                grid,
                radius: self.spec.radius(),
                min,
            });
        }
        let d = self.spec.dim();
        let mut values = vec![Complex64::default(); grid.pow(d as u32)];
        for (bin, c) in bin_table(d, self.spec.radius(), grid).iter().zip(&self.coeffs) {
            values[*bin] = *c;
        }
        fft_nd_banded(&mut values, d, grid, true, Some(self.spec.radius() as usize));
        Ok(PhysicalField { d, grid, values })
    }

    /// Inverse of [`FourierField::to_physical`], keeping the modes of `spec`.
    pub fn from_physical(spec: LatticeSpec, phys: &PhysicalField) -> Result<FourierField> {
        if phys.d != spec.dim() {
            return Err(Error::SpecMismatch(format!(
                "physical field has dimension {}, lattice has {}",
                phys.d,
                spec.dim()
            )));
        }
        if phys.grid < spec.side() {
            return Err(Error::GridTooSmall {
                grid: phys.grid,
                radius: spec.radius(),
                min: spec.side(),
            });
        }
        let mut buf = phys.values.clone();
        Ok(Self::from_spectrum(spec, &mut buf, phys.grid))
    }

    /// Reads lattice modes out of raw samples after a forward transform; the
    /// buffer is consumed as scratch.
    fn from_spectrum(spec: LatticeSpec, samples: &mut [Complex64], grid: usize) -> FourierField {
        let d = spec.dim();
        fft_nd_banded(samples, d, grid, false, Some(spec.radius() as usize));
        let norm = 1.0 / samples.len() as f64;
        let coeffs = bin_table(d, spec.radius(), grid)
            .iter()
            .map(|&b| samples[b] * norm)
            .collect();
        FourierField { spec, coeffs }
    }

    /// Grid size used for cubic products: the smallest FFT-friendly size
    /// `≥ 4M + 1`.
    pub fn product_grid(spec: &LatticeSpec) -> usize {
        fast_size(4 * spec.radius() as usize + 1)
    }
}

impl Add for &FourierField {
    type Output = FourierField;
    fn add(self, rhs: &FourierField) -> FourierField {
        self.axpy(Complex64::new(1.0, 0.0), rhs)
            .expect("adding fields on different lattices")
    }
}

impl Sub for &FourierField {
    type Output = FourierField;
    fn sub(self, rhs: &FourierField) -> FourierField {
        self.axpy(Complex64::new(-1.0, 0.0), rhs)
            .expect("subtracting fields on different lattices")
    }
}

impl Mul<f64> for &FourierField {
    type Output = FourierField;
    fn mul(self, a: f64) -> FourierField {
        self.map(|_, c| c * a)
    }
}

/// Samples on a uniform grid of `T^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalField {
    pub d: usize,
    pub grid: usize,
    pub values: Vec<Complex64>,
}

impl PhysicalField {
    /// Coordinates of the sample with flat index `idx`.
    pub fn point(&self, mut idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        for c in x.iter_mut().rev() {
            *c = 2.0 * PI * (idx % self.grid) as f64 / self.grid as f64;
            idx /= self.grid;
        }
        x
    }

    /// Riemann sum of `∫ |u|^q dx`, exact for trigonometric polynomials of
    /// degree `< grid / 2` when `q = 2`.
    pub fn integral_abs_pow(&self, q: f64) -> f64 {
        let cell = torus_volume(self.d) / self.values.len() as f64;
        let half = q / 2.0;
        let sum: f64 = if half.fract() == 0.0 && half > 0.0 && half <= 16.0 {
            self.values.iter().map(|v| v.norm_sqr().powi(half as i32)).sum()
        } else {
            self.values.iter().map(|v| v.norm().powf(q)).sum()
        };
        cell * sum
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Fourier coefficients of `v₁·w₂·v₃` on the lattice, where `w₂` is `v̄₂`
/// when `conjugate_second` is set and `v₂` otherwise. Computed on a grid of
/// at least `4M + 1` points per axis, which is alias-free for the kept modes.
pub fn triple_product(
    v1: &FourierField,
    conjugate_second: bool,
    v2: &FourierField,
    v3: &FourierField,
) -> Result<FourierField> {
    v1.check_same_spec(v2)?;
    v1.check_same_spec(v3)?;
    let spec = *v1.spec();
    let grid = FourierField::product_grid(&spec);

    let p1 = v1.to_physical(grid)?;
    let p3 = if std::ptr::eq(v1, v3) {
        None
    } else {
        Some(v3.to_physical(grid)?)
    };
    let p2 = if std::ptr::eq(v1, v2) {
        None
    } else {
        Some(v2.to_physical(grid)?)
    };
    let s1 = &p1.values;
    let s3 = p3.as_ref().map_or(s1, |p| &p.values);
    let s2 = p2.as_ref().map_or(s1, |p| &p.values);

    let mut prod: Vec<Complex64> = (0..s1.len())
        .map(|i| {
            let w = if conjugate_second { s2[i].conj() } else { s2[i] };
            s1[i] * w * s3[i]
        })
        .collect();
    Ok(FourierField::from_spectrum(spec, &mut prod, grid))
}

/// `|v|² v` for a single field, using one inverse and one forward transform.
pub fn cubic_power(v: &FourierField) -> FourierField {
    triple_product(v, true, v, v).expect("a field shares its own lattice")
}

/// `∫_{T^d} v̄₂ v₃ dx = (2π)^d Σ conj(v̂₂(n)) v̂₃(n)`.
pub fn inner_integral(v2: &FourierField, v3: &FourierField) -> Result<Complex64> {
    v2.check_same_spec(v3)?;
    let vol = torus_volume(v2.spec.dim());
    Ok(coeff_inner(v2, v3) * vol)
}

/// `Σ conj(v̂₂(n)) v̂₃(n)`, the volume-normalized mean of `v̄₂ v₃`.
pub fn coeff_inner(v2: &FourierField, v3: &FourierField) -> Complex64 {
    v2.coeffs
        .iter()
        .zip(&v3.coeffs)
        .map(|(a, b)| a.conj() * b)
        .sum()
}

/// How the spatial integral inside the gauged nonlinearity and the gauge
/// phase is normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanConvention {
    /// `(2π)^{-d} ∫ … dx`; constants satisfy `N(c) = -ρ|c|²c`.
    #[default]
    Volume,
    /// Plain `∫ … dx`.
    Lebesgue,
}

impl MeanConvention {
    pub fn factor(&self, d: usize) -> f64 {
        match self {
            MeanConvention::Volume => 1.0,
            MeanConvention::Lebesgue => torus_volume(d),
        }
    }
}

/// Parameters of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub d: usize,
    /// +1 defocusing, -1 focusing.
    pub rho: f64,
    pub alpha: f64,
    pub s: f64,
    #[serde(rename = "M")]
    pub m: i64,
    pub delta: f64,
    #[serde(default)]
    pub mean: MeanConvention,
}

impl ModelParams {
    pub fn new(d: usize, rho: f64, alpha: f64, s: f64, m: i64, delta: f64) -> Result<Self> {
        let p = ModelParams {
            d,
            rho,
            alpha,
            s,
            m,
            delta,
            mean: MeanConvention::Volume,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        LatticeSpec::new(self.d, self.m)?;
        if self.rho != 1.0 && self.rho != -1.0 {
            return Err(Error::InvalidParameter(format!("rho must be ±1, got {}", self.rho)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be ≥ 0, got {}", self.alpha)));
        }
        if !self.s.is_finite() {
            return Err(Error::InvalidParameter("s must be finite".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be > 0, got {}", self.delta)));
        }
        Ok(())
    }

    pub fn lattice(&self) -> LatticeSpec {
        LatticeSpec::new(self.d, self.m).expect("validated parameters")
    }

    /// Scaling-critical regularity of the cubic equation, `d/2 - 1`.
    pub fn s_c(&self) -> f64 {
        critical_regularity(self.d)
    }

    pub fn s_r(&self) -> Option<f64> {
        gain_threshold(self.d)
    }

    /// `0 ≤ α < s_r(d)` and `s_c ≤ s < s_c + s_r(d) - α`.
    pub fn is_admissible(&self) -> bool {
        match self.s_r() {
            Some(sr) => {
                self.alpha >= 0.0
                    && self.alpha < sr
                    && self.s >= self.s_c()
                    && self.s < self.s_c() + sr - self.alpha
            }
            None => false,
        }
    }

    /// Exponent of the bracket weight in the random data, `d - 1 - α`.
    pub fn decay_exponent(&self) -> f64 {
        self.d as f64 - 1.0 - self.alpha
    }
}

pub fn critical_regularity(d: usize) -> f64 {
    d as f64 / 2.0 - 1.0
}

/// Regularity gain threshold `s_r(d)`; only defined for `d ≥ 3`.
pub fn gain_threshold(d: usize) -> Option<f64> {
    match d {
        0..=2 => None,
        3 => Some(1.0 / 7.0),
        4 => Some(4.0 / 19.0),
        _ => Some(0.25),
    }
}

/// Time nodes `0 = t_0 < … < t_T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    uniform: bool,
}

impl TimeGrid {
    /// `steps` equal steps on `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "uniform grid needs steps ≥ 1 and horizon > 0 (got {steps}, {horizon})"
            )));
        }
        let dt = horizon / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        times[steps] = horizon;
        Ok(TimeGrid {
            times,
            uniform: true,
        })
    }

    /// Uniform grid on `[0, horizon]` with step at most `max_dt`.
    pub fn with_max_step(horizon: f64, max_dt: f64) -> Result<Self> {
        let steps = (horizon / max_dt - 1e-9).ceil().max(1.0) as usize;
        Self::uniform(horizon, steps)
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(Error::InvalidParameter("time grid must start at 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("time grid must be strictly increasing".into()));
        }
        let uniform = if times.len() < 3 {
            true
        } else {
            let dt = times[1];
            times
                .windows(2)
                .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-12 * dt.max(1.0))
        };
        Ok(TimeGrid { times, uniform })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid has a node")
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Step size of a uniform grid.
    pub fn dt(&self) -> Result<f64> {
        if !self.uniform {
            return Err(Error::NonUniformGrid);
        }
        Ok(if self.times.len() > 1 { self.times[1] } else { 0.0 })
    }

    /// Index of the node at time `t`.
    pub fn node_of(&self, t: f64) -> Result<usize> {
        let horizon = self.horizon();
        let tol = 1e-9 * horizon.max(1e-300);
        if t < -tol || t > horizon + tol {
            return Err(Error::TimeOutOfRange { t, horizon });
        }
        let k = self
            .times
            .partition_point(|&s| s < t - tol)
            .min(self.times.len() - 1);
        if (self.times[k] - t).abs() <= tol {
            Ok(k)
        } else {
            Err(Error::InvalidParameter(format!("time {t} is not a grid node")))
        }
    }

    /// Trapezoid weights `w_k` with `Σ w_k f(t_k) ≈ ∫ f`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.times.len();
        let mut w = vec![0.0; n];
        for k in 0..n.saturating_sub(1) {
            let h = self.times[k + 1] - self.times[k];
            w[k] += h / 2.0;
            w[k + 1] += h / 2.0;
        }
        w
    }

    /// The grid restricted to its first `count` nodes.
    pub fn truncated(&self, count: usize) -> TimeGrid {
        TimeGrid {
            times: self.times[..count].to_vec(),
            uniform: self.uniform,
        }
    }
}

/// A field sampled at every node of a time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeField {
    grid: TimeGrid,
    frames: Vec<FourierField>,
}

impl SpaceTimeField {
    pub fn new(grid: TimeGrid, frames: Vec<FourierField>) -> Result<Self> {
        if frames.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "{} frames for {} time nodes",
                frames.len(),
                grid.len()
            )));
        }
        for f in &frames[1..] {
            frames[0].check_same_spec(f)?;
        }
        Ok(SpaceTimeField { grid, frames })
    }

    pub fn zeros(spec: LatticeSpec, grid: TimeGrid) -> Self {
        let frames = vec![FourierField::zeros(spec); grid.len()];
        SpaceTimeField { grid, frames }
    }

    /// Builds each frame from its node index and time.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(usize, f64) -> FourierField) -> Result<Self> {
        let frames = grid.times().iter().enumerate().map(|(k, &t)| f(k, t)).collect();
        Self::new(grid, frames)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    pub fn frames(&self) -> &[FourierField] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &FourierField {
        &self.frames[k]
    }

    pub fn spec(&self) -> &LatticeSpec {
        self.frames[0].spec()
    }

    pub fn into_frames(self) -> Vec<FourierField> {
        self.frames
    }

    /// Applies `f(node, time, frame)` to every frame.
    pub fn map(&self, f: impl Fn(usize, f64, &FourierField) -> FourierField) -> SpaceTimeField {
        let frames = self
            .frames
            .iter()
            .enumerate()
            .map(|(k, fr)| f(k, self.grid.times()[k], fr))
            .collect();
        SpaceTimeField {
            grid: self.grid.clone(),
            frames,
        }
    }

    pub fn zip_with(
        &self,
        other: &SpaceTimeField,
        f: impl Fn(&FourierField, &FourierField) -> Result<FourierField>,
    ) -> Result<SpaceTimeField> {
        if self.grid.len() != other.grid.len() {
            return Err(Error::InvalidParameter("time grids differ in length".into()));
        }
        let frames = self
            .frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| f(a, b))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.grid.clone(), frames)
    }

    pub fn add(&self, other: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.zip_with(other, |a, b| a.axpy(Complex64::new(1.0, 0.0), b))
    }

    pub fn sub(&self, other: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.zip_with(other, |a, b| a.axpy(Complex64::new(-1.0, 0.0), b))
    }

    /// `sup_t ‖u(t)‖_{L²}`.
    pub fn sup_l2(&self) -> f64 {
        self.frames.iter().map(FourierField::l2_norm).fold(0.0, f64::max)
    }

    /// The first `count` nodes.
    pub fn truncated(&self, count: usize) -> SpaceTimeField {
        SpaceTimeField {
            grid: self.grid.truncated(count),
            frames: self.frames[..count].to_vec(),
        }
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"RNLSFLD1";
const SNAPSHOT_VERSION: u16 = 1;
const LITTLE_ENDIAN: u8 = 1;

/// Binary snapshot: magic, version, endianness byte, `d`, `M`, convention
/// tag, then `(re, im)` little-endian `f64` pairs in lattice order.
pub fn write_snapshot(field: &FourierField, out: &mut impl Write) -> Result<()> {
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    out.write_all(&[LITTLE_ENDIAN])?;
    out.write_all(&(field.spec.dim() as u32).to_le_bytes())?;
    out.write_all(&(field.spec.radius() as u32).to_le_bytes())?;
    out.write_all(&(CONVENTION_TAG.len() as u16).to_le_bytes())?;
    out.write_all(CONVENTION_TAG.as_bytes())?;
    for c in &field.coeffs {
        out.write_all(&c.re.to_le_bytes())?;
        out.write_all(&c.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot(input: &mut impl Read) -> Result<FourierField> {
    fn take<const N: usize>(input: &mut impl Read) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        input
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
        Ok(buf)
    }
    if &take::<8>(input)? != SNAPSHOT_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(input)?);
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    if take::<1>(input)?[0] != LITTLE_ENDIAN {
        return Err(Error::Format("only little-endian payloads are supported".into()));
    }
    let d = u32::from_le_bytes(take(input)?) as usize;
    let m = u32::from_le_bytes(take(input)?) as i64;
    let tag_len = u16::from_le_bytes(take(input)?) as usize;
    let mut tag = vec![0u8; tag_len];
    input
        .read_exact(&mut tag)
        .map_err(|e| Error::Format(format!("truncated tag: {e}")))?;
    if tag != CONVENTION_TAG.as_bytes() {
        return Err(Error::Format(format!(
            "unknown convention tag {:?}",
            String::from_utf8_lossy(&tag)
        )));
    }
    let spec = LatticeSpec::new(d, m).map_err(|e| Error::Format(e.to_string()))?;
    let mut coeffs = Vec::with_capacity(spec.len());
    for _ in 0..spec.len() {
        let re = f64::from_le_bytes(take(input)?);
        let im = f64::from_le_bytes(take(input)?);
        coeffs.push(Complex64::new(re, im));
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(FourierField { spec, coeffs })
}

/// CSV of `n_1, …, n_d, |û(n)|` per mode.
pub fn write_abs_csv(field: &FourierField, out: &mut impl Write) -> Result<()> {
    let d = field.spec.dim();
    let header: Vec<String> = (1..=d).map(|i| format!("n_{i}")).chain(["abs".to_string()]).collect();
    writeln!(out, "{}", header.join(","))?;
    let mut n = vec![0i64; d];
    for (i, c) in field.coeffs.iter().enumerate() {
        field.spec.point_into(i, &mut n);
        for v in &n {
            write!(out, "{v},")?;
        }
        writeln!(out, "{:.16e}", c.norm())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(spec: LatticeSpec, seed: u64) -> FourierField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..spec.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        FourierField::from_coeffs(spec, coeffs).unwrap()
    }

    /// Direct evaluation of the trigonometric polynomial at a point.
    fn eval(u: &FourierField, x: &[f64]) -> Complex64 {
        let spec = u.spec();
        (0..spec.len())
            .map(|i| {
                let n = spec.point(i);
                let ph: f64 = n.iter().zip(x).map(|(a, b)| *a as f64 * b).sum();
                u.coeffs()[i] * Complex64::from_polar(1.0, ph)
            })
            .sum()
    }

    #[test]
    fn constant_mode_is_constant() {
        let spec = LatticeSpec::new(2, 2).unwrap();
        let u = FourierField::constant(spec, Complex64::new(1.0, 0.0));
        let p = u.to_physical(5).unwrap();
        assert!(p.values.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-14));
    }

    #[test]
    fn single_mode_samples() {
        let spec = LatticeSpec::new(3, 2).unwrap();
        let u = FourierField::single_mode(spec, &[1, 0, 0], Complex64::new(1.0, 0.0)).unwrap();
        let p = u.to_physical(6).unwrap();
        for (i, v) in p.values.iter().enumerate() {
            let x = p.point(i);
            assert!((v - Complex64::from_polar(1.0, x[0])).norm() < 1e-13);
        }
    }

    #[test]
    fn grid_too_small_refused() {
        let spec = LatticeSpec::new(1, 3).unwrap();
        let u = FourierField::zeros(spec);
        assert!(matches!(u.to_physical(6), Err(Error::GridTooSmall { min: 7, .. })));
        assert!(u.to_physical(7).is_ok());
    }

    #[test]
    fn physical_samples_match_direct_sum() {
        let spec = LatticeSpec::new(2, 2).unwrap();
        let u = random_field(spec, 3);
        let p = u.to_physical(7).unwrap();
        for i in [0, 5, 17, 48] {
            assert!((p.values[i] - eval(&u, &p.point(i))).norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip() {
        for (d, m, g) in [(1, 5, 11), (2, 3, 9), (3, 2, 8)] {
            let spec = LatticeSpec::new(d, m).unwrap();
            let u = random_field(spec, 7);
            let back = FourierField::from_physical(spec, &u.to_physical(g).unwrap()).unwrap();
            let scale = u.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max);
            assert!(u.max_abs_diff(&back) <= 1e-12 * scale);
        }
    }

    #[test]
    fn plancherel() {
        let spec = LatticeSpec::new(2, 3).unwrap();
        let u = random_field(spec, 11);
        let quad = u.to_physical(9).unwrap().integral_abs_pow(2.0);
        assert!((quad.sqrt() - u.l2_norm()).abs() < 1e-12 * u.l2_norm());
    }

    #[test]
    fn conjugate_field_matches_pointwise_conjugate() {
        let spec = LatticeSpec::new(2, 2).unwrap();
        let u = random_field(spec, 5);
        let a = u.conjugate().to_physical(7).unwrap();
        let b = u.to_physical(7).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn product_of_constants() {
        let spec = LatticeSpec::new(3, 2).unwrap();
        let c = Complex64::new(0.6, -0.3);
        let v = FourierField::constant(spec, c);
        let p = triple_product(&v, true, &v, &v).unwrap();
        let expected = c * c.norm_sqr();
        assert!((p.get(&[0, 0, 0]) - expected).norm() < 1e-14);
        assert!(p.coeffs().iter().map(|z| z.norm()).sum::<f64>() - expected.norm() < 1e-13);
    }

    #[test]
    fn product_of_point_masses() {
        let spec = LatticeSpec::new(2, 3).unwrap();
        let a = Complex64::new(1.0, 2.0);
        let b = Complex64::new(-0.5, 0.25);
        let c = Complex64::new(0.3, 0.0);
        let v1 = FourierField::single_mode(spec, &[1, 2], a).unwrap();
        let v2 = FourierField::single_mode(spec, &[-1, 1], b).unwrap();
        let v3 = FourierField::single_mode(spec, &[0, -2], c).unwrap();
        let p = triple_product(&v1, true, &v2, &v3).unwrap();
        // n1 - n2 + n3 = (2, -1)
        let expected = a * b.conj() * c;
        assert!((p.get(&[2, -1]) - expected).norm() < 1e-14);
        let total: f64 = p.coeffs().iter().map(|z| z.norm()).sum();
        assert!((total - expected.norm()).abs() < 1e-13);
        let q = triple_product(&v1, false, &v2, &v3).unwrap();
        assert!((q.get(&[0, 1]) - a * b * c).norm() < 1e-14);
    }

    /// O(M^{3d}) direct convolution restricted to the lattice.
    fn convolution_oracle(v1: &FourierField, conj: bool, v2: &FourierField, v3: &FourierField) -> FourierField {
        let spec = *v1.spec();
        let mut out = FourierField::zeros(spec);
        let len = spec.len();
        for i in 0..len {
            let n1 = spec.point(i);
            for j in 0..len {
                let n2 = spec.point(j);
                let (w, sign) = if conj { (v2.coeffs()[j].conj(), -1) } else { (v2.coeffs()[j], 1) };
                for k in 0..len {
                    let n3 = spec.point(k);
                    let n: Vec<i64> = (0..spec.dim()).map(|a| n1[a] + sign * n2[a] + n3[a]).collect();
                    if let Some(idx) = spec.index_of(&n) {
                        out.coeffs_mut()[idx] += v1.coeffs()[i] * w * v3.coeffs()[k];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn dealiased_product_matches_convolution() {
        for (d, m) in [(1usize, 3i64), (2, 2), (2, 3)] {
            let spec = LatticeSpec::new(d, m).unwrap();
            let v1 = random_field(spec, 1);
            let v2 = random_field(spec, 2);
            let v3 = random_field(spec, 3);
            for conj in [true, false] {
                let fast = triple_product(&v1, conj, &v2, &v3).unwrap();
                let slow = convolution_oracle(&v1, conj, &v2, &v3);
                assert!(fast.max_abs_diff(&slow) < 1e-11, "d={d} m={m} conj={conj}");
            }
            let same = cubic_power(&v1);
            assert!(same.max_abs_diff(&convolution_oracle(&v1, true, &v1, &v1)) < 1e-11);
        }
    }

    #[test]
    fn product_matches_oversampled_pointwise_product() {
        let spec = LatticeSpec::new(2, 3).unwrap();
        let (v1, v2, v3) = (random_field(spec, 4), random_field(spec, 5), random_field(spec, 6));
        let fast = triple_product(&v1, true, &v2, &v3).unwrap();
        let g = 4 * 3 + 1;
        let (p1, p2, p3) = (v1.to_physical(g).unwrap(), v2.to_physical(g).unwrap(), v3.to_physical(g).unwrap());
        let prod = PhysicalField {
            d: 2,
            grid: g,
            values: (0..g * g).map(|i| p1.values[i] * p2.values[i].conj() * p3.values[i]).collect(),
        };
        let oracle = FourierField::from_physical(spec, &prod).unwrap();
        assert!(fast.max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn inner_integral_values() {
        let spec = LatticeSpec::new(3, 2).unwrap();
        let u = random_field(spec, 9);
        let unit = u.scale(Complex64::new(1.0 / u.l2_norm(), 0.0));
        let ii = inner_integral(&unit, &unit).unwrap();
        assert!((ii - Complex64::new(1.0, 0.0)).norm() < 1e-13);

        let a = FourierField::single_mode(spec, &[1, 0, 0], Complex64::new(1.0, 0.0)).unwrap();
        let b = FourierField::single_mode(spec, &[0, 1, 0], Complex64::new(1.0, 0.0)).unwrap();
        assert_eq!(inner_integral(&a, &b).unwrap(), Complex64::default());

        let v = random_field(spec, 10);
        let (pu, pv) = (u.to_physical(5).unwrap(), v.to_physical(5).unwrap());
        let cell = torus_volume(3) / 125.0;
        let quad: Complex64 = pu.values.iter().zip(&pv.values).map(|(a, b)| a.conj() * b * cell).sum();
        let exact = inner_integral(&u, &v).unwrap();
        assert!((quad - exact).norm() < 1e-10 * exact.norm().max(1.0));
    }

    #[test]
    fn params_thresholds() {
        let p = ModelParams::new(3, 1.0, 0.0, 0.5, 8, 0.02).unwrap();
        assert_eq!(p.s_c(), 0.5);
        assert_eq!(p.s_r(), Some(1.0 / 7.0));
        assert!(p.is_admissible());
        assert_eq!(gain_threshold(4), Some(4.0 / 19.0));
        assert_eq!(gain_threshold(7), Some(0.25));
        let mut q = p.clone();
        q.s = 0.5 + 1.0 / 7.0;
        assert!(!q.is_admissible());
        q.s = 0.6;
        q.alpha = 0.1;
        assert!(!q.is_admissible());
        assert!(ModelParams::new(3, 0.5, 0.0, 0.5, 8, 0.02).is_err());
        assert!(ModelParams::new(3, 1.0, -0.1, 0.5, 8, 0.02).is_err());
    }

    #[test]
    fn time_grid_basics() {
        let g = TimeGrid::uniform(0.1, 10).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g.horizon(), 0.1);
        assert!((g.dt().unwrap() - 0.01).abs() < 1e-17);
        assert_eq!(g.node_of(0.05).unwrap(), 5);
        assert!(matches!(g.node_of(0.2), Err(Error::TimeOutOfRange { .. })));
        let w: f64 = g.trapezoid_weights().iter().sum();
        assert!((w - 0.1).abs() < 1e-15);
        let nu = TimeGrid::from_times(vec![0.0, 0.1, 0.3]).unwrap();
        assert!(!nu.is_uniform());
        assert!(matches!(nu.dt(), Err(Error::NonUniformGrid)));
        assert!(TimeGrid::from_times(vec![0.0, 0.1, 0.1]).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let spec = LatticeSpec::new(2, 3).unwrap();
        let u = random_field(spec, 12);
        let mut buf = Vec::new();
        write_snapshot(&u, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"RNLSFLD1");
        assert_eq!(buf.len(), 8 + 2 + 1 + 4 + 4 + 2 + CONVENTION_TAG.len() + 16 * spec.len());
        let back = read_snapshot(&mut buf.as_slice()).unwrap();
        assert_eq!(back, u);
        buf.push(0);
        assert!(read_snapshot(&mut buf.as_slice()).is_err());
        buf[0] = b'X';
        assert!(read_snapshot(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn abs_csv_layout() {
        let spec = LatticeSpec::new(1, 1).unwrap();
        let u = FourierField::single_mode(spec, &[1], Complex64::new(3.0, 4.0)).unwrap();
        let mut buf = Vec::new();
        write_abs_csv(&u, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "n_1,abs");
        assert_eq!(lines[3], "1,5.0000000000000000e0");
    }
}
