//! Computable norms: `H^s`, mixed `L^p_t L^q_x`, exact `p`-variation on a
//! grid, the `V²`-based `X^s` proxy, discrete `X^{s,b}` and the dyadic
//! `Z^s` norms.
//!
//! The `X^s` proxy replaces each `U²` path norm by the `V²` variation, which
//! is dominated by it; it is a lower bound, reported as a proxy.
//! `V^p` here is the variation seminorm `sup Σ |v(t_k) - v(t_{k-1})|^p`
//! over partitions of the grid, without an endpoint convention.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::Propagator;
use crate::field::{torus_volume, FourierField, SpaceTimeField};
use crate::lattice::{bracket_from_norm_sq, project_dyadic, LatticeSpec};
use crate::spectral::{fast_size, fft_rows};

/// `(2π)^{d/2} (Σ ⟨n⟩^{2s} |û(n)|²)^{1/2}`.
pub fn hs_norm(u: &FourierField, s: f64) -> f64 {
    let w = bracket_pow_table(u.spec(), 2.0 * s);
    let sum: f64 = u.coeffs().iter().zip(&w).map(|(c, w)| w * c.norm_sqr()).sum();
    (torus_volume(u.spec().dim()) * sum).sqrt()
}

/// `⟨n⟩^{2s}` for every mode, evaluated once per distinct `|n|²`.
fn bracket_pow_table(spec: &LatticeSpec, two_s: f64) -> Vec<f64> {
    let nsq = spec.norm_sq_table();
    let max = nsq.iter().copied().max().unwrap_or(0);
    let per_norm: Vec<f64> = (0..=max).map(|q| bracket_from_norm_sq(q).powf(two_s)).collect();
    nsq.into_iter().map(|q| per_norm[q as usize]).collect()
}

/// A Lebesgue exponent in `[1, ∞]`; serialized as a number or `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExponentRepr", into = "ExponentRepr")]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExponentRepr {
    Number(f64),
    Text(String),
}

impl From<Exponent> for ExponentRepr {
    fn from(e: Exponent) -> Self {
        match e {
            Exponent::Finite(p) => ExponentRepr::Number(p),
            Exponent::Infinity => ExponentRepr::Text("inf".into()),
        }
    }
}

impl TryFrom<ExponentRepr> for Exponent {
    type Error = Error;
    fn try_from(r: ExponentRepr) -> Result<Self> {
        let e = match r {
            ExponentRepr::Number(p) => Exponent::Finite(p),
            ExponentRepr::Text(s) => return s.parse(),
        };
        e.validate()?;
        Ok(e)
    }
}

impl Exponent {
    pub fn validate(&self) -> Result<()> {
        match self {
            Exponent::Finite(p) if !(*p >= 1.0 && p.is_finite()) => {
                Err(Error::InvalidParameter(format!("exponent {p} is not in [1, ∞]")))
            }
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for Exponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Exponent::Finite(p) => write!(f, "{p}"),
            Exponent::Infinity => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Exponent {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "inf" {
            return Ok(Exponent::Infinity);
        }
        let p: f64 = s
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad exponent {s:?}")))?;
        let e = Exponent::Finite(p);
        e.validate()?;
        Ok(e)
    }
}

/// `‖u‖_{L^q(T^d)}` on a physical grid of `grid` points per axis. For
/// `q = 2` Plancherel is used; `q = 4` is exact once `grid ≥ 4M + 1`.
pub fn lq_space_norm(u: &FourierField, q: Exponent, grid: usize) -> Result<f64> {
    q.validate()?;
    match q {
        Exponent::Finite(q) if q == 2.0 => Ok(u.l2_norm()),
        Exponent::Finite(q) => Ok(u.to_physical(grid)?.integral_abs_pow(q).powf(1.0 / q)),
        Exponent::Infinity => Ok(u.to_physical(grid)?.max_abs()),
    }
}

/// Default spatial quadrature grid: FFT-friendly and at least `4M + 1`.
pub fn default_space_grid(spec: &LatticeSpec) -> usize {
    FourierField::product_grid(spec)
}

/// `(∫₀^δ ‖u(t)‖^p_{L^q_x} dt)^{1/p}` with the trapezoid rule in time.
pub fn lp_lq_norm(u: &SpaceTimeField, p: Exponent, q: Exponent, grid: Option<usize>) -> Result<f64> {
    p.validate()?;
    let grid = grid.unwrap_or_else(|| default_space_grid(u.spec()));
    let per_frame = u
        .frames()
        .iter()
        .map(|f| lq_space_norm(f, q, grid))
        .collect::<Result<Vec<f64>>>()?;
    Ok(time_norm(&per_frame, &u.grid().trapezoid_weights(), p))
}

/// `L^p` norm in time of nodal values under trapezoid weights.
pub fn time_norm(values: &[f64], weights: &[f64], p: Exponent) -> f64 {
    match p {
        Exponent::Infinity => values.iter().copied().fold(0.0, f64::max),
        Exponent::Finite(p) => values
            .iter()
            .zip(weights)
            .map(|(v, w)| w * v.powf(p))
            .sum::<f64>()
            .powf(1.0 / p),
    }
}

/// `sup Σ dist(x_{t_k}, x_{t_{k-1}})^p` over increasing index chains, by the
/// `O(T²)` recursion `best[j] = max_{i<j} best[i] + dist(i, j)^p`. Returns the
/// `p`-th root.
pub fn vp_variation_by(len: usize, p: f64, dist: impl Fn(usize, usize) -> f64) -> f64 {
    if len < 2 {
        return 0.0;
    }
    let mut best = vec![0.0f64; len];
    let mut overall = 0.0f64;
    for j in 1..len {
        let mut b = 0.0f64;
        for i in 0..j {
            b = b.max(best[i] + dist(i, j).powf(p));
        }
        best[j] = b;
        overall = overall.max(b);
    }
    overall.powf(1.0 / p)
}

/// `V^p` variation of a path of vectors in `ℓ²`.
pub fn vp_variation(path: &[Vec<Complex64>], p: f64) -> f64 {
    vp_variation_by(path.len(), p, |i, j| {
        path[i]
            .iter()
            .zip(&path[j])
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    })
}

/// `V²` variation of a scalar complex path; `p = 2` avoids `powf`.
fn v2_scalar(path: &[Complex64]) -> f64 {
    let len = path.len();
    if len < 2 {
        return 0.0;
    }
    let mut best = vec![0.0f64; len];
    let mut overall = 0.0f64;
    for j in 1..len {
        let xj = path[j];
        let mut b = 0.0f64;
        for i in 0..j {
            b = b.max(best[i] + (xj - path[i]).norm_sqr());
        }
        best[j] = b;
        overall = overall.max(b);
    }
    overall.sqrt()
}

/// Interaction-picture paths `t ↦ e^{it|n|²} û(t)(n)`, one row per mode.
fn twisted_paths(u: &SpaceTimeField) -> Vec<Vec<Complex64>> {
    let prop = Propagator::new(u.spec());
    let frames: Vec<FourierField> = u
        .frames()
        .iter()
        .zip(u.times())
        .map(|(f, &t)| prop.twist(f, t))
        .collect();
    (0..u.spec().len())
        .map(|j| frames.iter().map(|f| f.coeffs()[j]).collect())
        .collect()
}

/// `(Σ_n ⟨n⟩^{2s} ‖e^{it|n|²} û(t)(n)‖²_{V²})^{1/2}`, a lower bound for the
/// `X^s` norm on the grid.
pub fn xs_proxy(u: &SpaceTimeField, s: f64) -> f64 {
    let w = bracket_pow_table(u.spec(), 2.0 * s);
    let sum: f64 = twisted_paths(u)
        .iter()
        .zip(&w)
        .map(|(path, w)| w * v2_scalar(path).powi(2))
        .sum();
    (torus_volume(u.spec().dim()) * sum).sqrt()
}

/// How `[0, δ]` data are extended to the periodic window of length `4δ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowPolicy {
    /// Zero outside `[0, δ]`; nodal values carry trapezoid weights so that
    /// `b = 0` reproduces the trapezoid space-time `L²` norm exactly.
    #[default]
    ZeroExtend,
    /// Endpoint values continued with a raised-cosine taper over `δ` on
    /// each side, zero on the remaining `δ`.
    RaisedCosine,
}

/// Discrete `X^{s,b}` norm
/// `‖⟨n⟩^s ⟨λ + |n|²⟩^b û(n, λ)‖_{ℓ²_n L²_λ}`. The time transform is taken
/// of the interaction-picture path, whose frequency is `μ = λ + |n|²`, so
/// the weight is `⟨μ⟩^b` and there is no aliasing of the dispersion shift.
pub fn xsb_norm(u: &SpaceTimeField, s: f64, b: f64, policy: WindowPolicy) -> Result<f64> {
    let dt = u.grid().dt()?;
    let steps = u.grid().steps();
    if steps == 0 {
        return Ok(0.0);
    }
    let window = 4 * steps;
    let period = window as f64 * dt;
    let mu: Vec<f64> = (0..window)
        .map(|j| {
            let signed = if j <= window / 2 { j as f64 } else { j as f64 - window as f64 };
            2.0 * std::f64::consts::PI * signed / period
        })
        .collect();
    let mu_weight: Vec<f64> = mu.iter().map(|m| (1.0 + m * m).powf(b)).collect();
    let trap = u.grid().trapezoid_weights();
    let node_scale: Vec<f64> = trap.iter().map(|w| (w / dt).sqrt()).collect();
    let taper: Vec<f64> = (1..=steps)
        .map(|k| 0.5 * (1.0 + (std::f64::consts::PI * k as f64 / steps as f64).cos()))
        .collect();
    let sw = bracket_pow_table(u.spec(), 2.0 * s);

    let mut buf = vec![Complex64::default(); window];
    let mut sum = 0.0;
    for (path, w) in twisted_paths(u).iter().zip(&sw) {
        buf.iter_mut().for_each(|z| *z = Complex64::default());
        match policy {
            WindowPolicy::ZeroExtend => {
                for k in 0..=steps {
                    buf[k] = path[k] * node_scale[k];
                }
            }
            WindowPolicy::RaisedCosine => {
                for k in 0..=steps {
                    buf[k] = path[k];
                }
                for (j, t) in taper.iter().enumerate() {
                    buf[steps + 1 + j] = path[steps] * *t;
                    buf[window - 1 - j] = path[0] * *t;
                }
            }
        }
        fft_rows(&mut buf, window, false);
        let mode: f64 = buf
            .iter()
            .zip(&mu_weight)
            .map(|(z, mw)| mw * z.norm_sqr())
            .sum();
        sum += w * mode;
    }
    Ok((torus_volume(u.spec().dim()) * sum * dt / window as f64).sqrt())
}

/// `∫₀^δ ∫ |u|⁴ dx dt` by the trapezoid rule, exact in space on the grid.
fn l4_fourth_power(u: &SpaceTimeField, grid: usize) -> Result<f64> {
    let w = u.grid().trapezoid_weights();
    let mut total = 0.0;
    for (f, wk) in u.frames().iter().zip(&w) {
        if *wk == 0.0 || f.is_zero() {
            continue;
        }
        total += wk * f.to_physical(grid)?.integral_abs_pow(4.0);
    }
    Ok(total)
}

/// `‖v‖_{L⁴(T^d × [0, δ])}`.
pub fn l4_spacetime(u: &SpaceTimeField) -> Result<f64> {
    let grid = fast_size(4 * u.spec().radius() as usize + 1);
    Ok(l4_fourth_power(u, grid)?.powf(0.25))
}

/// `(Σ_N N^{4s+2-d} ‖P_N v‖⁴_{L⁴(T^d × I)})^{1/4}` with `I = [0, δ]`. The
/// supremum over subintervals `J ⊆ I` is attained at `J = I` because each
/// term is monotone in the interval.
pub fn zs_norm(u: &SpaceTimeField, s: f64) -> Result<f64> {
    let spec = *u.spec();
    let d = spec.dim() as f64;
    let grid = default_space_grid(&spec);
    let mut total = 0.0;
    for block in spec.blocks() {
        let piece = u.map(|_, _, f| project_dyadic(f, block).expect("block fits the lattice"));
        let n = block.size() as f64;
        total += n.powf(4.0 * s + 2.0 - d) * l4_fourth_power(&piece, grid)?;
    }
    Ok(total.powf(0.25))
}

/// `‖v‖^{3/4}_{Z^s} ‖v‖^{1/4}_{X^s}` with the `V²` proxy for `X^s`.
pub fn zs_prime(u: &SpaceTimeField, s: f64) -> Result<f64> {
    Ok(zs_norm(u, s)?.powf(0.75) * xs_proxy(u, s).powf(0.25))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Hs,
    LpLq,
    Vp,
    XsProxy,
    Xsb,
    Zs,
    ZsPrime,
}

impl NormKind {
    pub fn name(&self) -> &'static str {
        match self {
            NormKind::Hs => "hs",
            NormKind::LpLq => "lp_lq",
            NormKind::Vp => "vp",
            NormKind::XsProxy => "xs_proxy",
            NormKind::Xsb => "xsb",
            NormKind::Zs => "zs",
            NormKind::ZsPrime => "zs_prime",
        }
    }
}

/// A norm and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormSpec {
    pub kind: NormKind,
    #[serde(default)]
    pub s: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default = "two")]
    pub p: Exponent,
    #[serde(default = "two")]
    pub q: Exponent,
    #[serde(default)]
    pub space_grid: Option<usize>,
    #[serde(default)]
    pub window: WindowPolicy,
}

fn two() -> Exponent {
    Exponent::Finite(2.0)
}

impl NormSpec {
    pub fn new(kind: NormKind) -> Self {
        NormSpec {
            kind,
            s: 0.0,
            b: 0.0,
            p: two(),
            q: two(),
            space_grid: None,
            window: WindowPolicy::ZeroExtend,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.p.validate()?;
        self.q.validate()?;
        if !self.s.is_finite() || !self.b.is_finite() {
            return Err(Error::InvalidParameter("s and b must be finite".into()));
        }
        if self.kind == NormKind::Vp && matches!(self.p, Exponent::Infinity) {
            return Err(Error::InvalidParameter("p-variation needs finite p".into()));
        }
        Ok(())
    }

    /// Evaluates the norm; `Hs` is taken as `sup_t ‖u(t)‖_{H^s}` and `Vp` is
    /// the variation of the whole coefficient path in `ℓ²`.
    pub fn evaluate(&self, u: &SpaceTimeField) -> Result<f64> {
        self.validate()?;
        match self.kind {
            NormKind::Hs => Ok(u.frames().iter().map(|f| hs_norm(f, self.s)).fold(0.0, f64::max)),
            NormKind::LpLq => lp_lq_norm(u, self.p, self.q, self.space_grid),
            NormKind::Vp => {
                let Exponent::Finite(p) = self.p else { unreachable!() };
                let path: Vec<Vec<Complex64>> = u.frames().iter().map(|f| f.coeffs().to_vec()).collect();
                Ok(torus_volume(u.spec().dim()).sqrt() * vp_variation(&path, p))
            }
            NormKind::XsProxy => Ok(xs_proxy(u, self.s)),
            NormKind::Xsb => xsb_norm(u, self.s, self.b, self.window),
            NormKind::Zs => zs_norm(u, self.s),
            NormKind::ZsPrime => zs_prime(u, self.s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{duhamel_all, free_evolution};
    use crate::field::TimeGrid;
    use crate::random_data::{deterministic_profile, sample};
    use crate::ModelParams;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(spec: LatticeSpec, seed: u64) -> FourierField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..spec.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        FourierField::from_coeffs(spec, coeffs).unwrap()
    }

    #[test]
    fn hs_examples() {
        let spec = LatticeSpec::new(3, 2).unwrap();
        let one = FourierField::constant(spec, Complex64::new(1.0, 0.0));
        let expected = (2.0 * std::f64::consts::PI).powf(1.5);
        assert!((hs_norm(&one, 1.3) - expected).abs() < 1e-13);
        let u = random_field(spec, 1);
        assert!((hs_norm(&u, 0.0) - u.l2_norm()).abs() < 1e-13 * u.l2_norm());
        assert!(hs_norm(&u, 0.5) <= hs_norm(&u, 0.7));

        let p = ModelParams::new(3, 1.0, 0.0, 0.5, 8, 0.1).unwrap();
        let prof = deterministic_profile(&p);
        let mut direct = 0.0;
        for n1 in -8i64..=8 {
            for n2 in -8i64..=8 {
                for n3 in -8i64..=8 {
                    direct += (1.0 + (n1 * n1 + n2 * n2 + n3 * n3) as f64).powi(-2);
                }
            }
        }
        let expected = (torus_volume(3) * direct).sqrt();
        assert!((hs_norm(&prof, 0.0) - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn lp_lq_examples() {
        let spec = LatticeSpec::new(2, 2).unwrap();
        let grid = TimeGrid::uniform(0.3, 30).unwrap();
        let c = Complex64::new(0.6, -0.8);
        let constant = SpaceTimeField::from_fn(grid.clone(), |_, _| FourierField::constant(spec, c)).unwrap();
        for (p, q) in [(2.0, 2.0), (4.0, 4.0), (3.0, 6.0), (1.0, 3.0)] {
            let v = lp_lq_norm(&constant, Exponent::Finite(p), Exponent::Finite(q), None).unwrap();
            let expected = c.norm() * torus_volume(2).powf(1.0 / q) * 0.3f64.powf(1.0 / p);
            assert!((v - expected).abs() < 1e-12 * expected, "p={p} q={q}");
        }
        let sup = lp_lq_norm(&constant, Exponent::Infinity, Exponent::Infinity, None).unwrap();
        assert!((sup - 1.0).abs() < 1e-13);

        let u = free_evolution(&random_field(spec, 2), &grid);
        let w = grid.trapezoid_weights();
        let st: f64 = u.frames().iter().zip(&w).map(|(f, w)| w * f.l2_norm().powi(2)).sum();
        let v22 = lp_lq_norm(&u, Exponent::Finite(2.0), Exponent::Finite(2.0), Some(9)).unwrap();
        assert!((v22 - st.sqrt()).abs() < 1e-10);

        let mode = FourierField::single_mode(spec, &[2, -1], c).unwrap();
        let free = free_evolution(&mode, &grid);
        let v = lp_lq_norm(&free, Exponent::Finite(4.0), Exponent::Finite(4.0), None).unwrap();
        let expected = 0.3f64.powf(0.25) * lq_space_norm(&mode, Exponent::Finite(4.0), 9).unwrap();
        assert!((v - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn l4_exact_on_dealiased_grid() {
        let spec = LatticeSpec::new(2, 2).unwrap();
        let u = random_field(spec, 3);
        let a = lq_space_norm(&u, Exponent::Finite(4.0), 9).unwrap();
        let b = lq_space_norm(&u, Exponent::Finite(4.0), 20).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    /// Exhaustive search over all partitions containing a subset of nodes.
    fn vp_exhaustive(path: &[Vec<Complex64>], p: f64) -> f64 {
        let len = path.len();
        let dist = |i: usize, j: usize| {
            path[i]
                .iter()
                .zip(&path[j])
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        let mut best = 0.0f64;
        for mask in 0u32..(1 << len) {
            let idx: Vec<usize> = (0..len).filter(|i| mask & (1 << i) != 0).collect();
            let s: f64 = idx.windows(2).map(|w| dist(w[0], w[1]).powf(p)).sum();
            best = best.max(s);
        }
        best.powf(1.0 / p)
    }

    #[test]
    fn vp_closed_forms() {
        let scalar = |xs: &[f64]| xs.iter().map(|x| vec![Complex64::new(*x, 0.0)]).collect::<Vec<_>>();
        assert_eq!(vp_variation(&scalar(&[1.0, 1.0, 1.0]), 2.0), 0.0);
        assert_eq!(vp_variation(&scalar(&[0.0, 0.0, 0.7, 0.7]), 2.0), 0.7);
        let (k, h) = (6usize, 0.3);
        let stair: Vec<f64> = (0..=k).map(|i| i as f64 * h).collect();
        assert!((vp_variation(&scalar(&stair), 2.0) - k as f64 * h).abs() < 1e-14);
        let alt: Vec<f64> = (0..=k).map(|i| if i % 2 == 0 { 0.0 } else { h }).collect();
        assert!((vp_variation(&scalar(&alt), 2.0) - h * (k as f64).sqrt()).abs() < 1e-14);
    }

    fn path_strategy() -> impl Strategy<Value = Vec<Vec<Complex64>>> {
        prop::collection::vec(prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2), 1..=10).prop_map(|rows| {
            rows.into_iter()
                .map(|r| r.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn vp_matches_exhaustive(path in path_strategy(), p in 1.0f64..4.0) {
            let dp = vp_variation(&path, p);
            let ex = vp_exhaustive(&path, p);
            prop_assert!((dp - ex).abs() <= 1e-12 * ex.max(1.0));
        }

        #[test]
        fn vp_superadditive(a in path_strategy(), b in path_strategy(), p in 1.0f64..4.0) {
            let joined: Vec<_> = a.iter().chain(&b).cloned().collect();
            let lhs = vp_variation(&joined, p).powf(p);
            let rhs = vp_variation(&a, p).powf(p) + vp_variation(&b, p).powf(p);
            prop_assert!(lhs >= rhs * (1.0 - 1e-12) - 1e-15);
        }

        #[test]
        fn vp_nonincreasing_in_p(path in path_strategy(), p in 1.0f64..3.0, dp in 0.0f64..2.0) {
            prop_assert!(vp_variation(&path, p + dp) <= vp_variation(&path, p) * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn xs_proxy_examples() {
        let spec = LatticeSpec::new(2, 3).unwrap();
        let grid = TimeGrid::uniform(0.2, 20).unwrap();
        let phi = random_field(spec, 4);
        let free = free_evolution(&phi, &grid);
        assert!(xs_proxy(&free, 0.5) < 1e-12 * hs_norm(&phi, 0.5));

        // single jump of size h in mode n at the midpoint of the twisted path
        let n = [1i64, -2];
        let h = 0.37;
        let jump = SpaceTimeField::from_fn(grid.clone(), |k, t| {
            let amp = if k >= 10 { h } else { 0.0 };
            let c = Complex64::from_polar(amp, -5.0 * t);
            FourierField::single_mode(spec, &n, c).unwrap()
        })
        .unwrap();
        let s = 0.8;
        let expected = torus_volume(2).sqrt() * 6f64.powf(s / 2.0) * h;
        assert!((xs_proxy(&jump, s) - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn xs_proxy_refinement_stable() {
        let spec = LatticeSpec::new(2, 3).unwrap();
        let source = random_field(spec, 5);
        let proxy = |steps: usize| {
            let grid = TimeGrid::uniform(0.5, steps).unwrap();
            let f = SpaceTimeField::from_fn(grid, |_, _| source.clone()).unwrap();
            xs_proxy(&duhamel_all(&f), 0.5)
        };
        let (a, b) = (proxy(100), proxy(200));
        assert!(a.is_finite() && a > 0.0);
        assert!((a - b).abs() < 0.02 * b, "{a} vs {b}");
    }

    #[test]
    fn xsb_b_zero_is_weighted_l2() {
        let spec = LatticeSpec::new(2, 3).unwrap();
        let grid = TimeGrid::uniform(0.1, 16).unwrap();
        let u = SpaceTimeField::from_fn(grid.clone(), |k, _| random_field(spec, 10 + k as u64)).unwrap();
        let s = 0.7;
        let w = grid.trapezoid_weights();
        let expected: f64 = u.frames().iter().zip(&w).map(|(f, w)| w * hs_norm(f, s).powi(2)).sum::<f64>().sqrt();
        let v = xsb_norm(&u, s, 0.0, WindowPolicy::ZeroExtend).unwrap();
        assert!((v - expected).abs() < 1e-10 * expected);
        assert_eq!(xsb_norm(&SpaceTimeField::zeros(spec, grid), s, 0.6, WindowPolicy::ZeroExtend).unwrap(), 0.0);
    }

    #[test]
    fn xsb_refuses_nonuniform() {
        let spec = LatticeSpec::new(1, 2).unwrap();
        let grid = TimeGrid::from_times(vec![0.0, 0.1, 0.3]).unwrap();
        let u = SpaceTimeField::zeros(spec, grid);
        assert!(matches!(xsb_norm(&u, 0.0, 0.5, WindowPolicy::ZeroExtend), Err(Error::NonUniformGrid)));
    }

    #[test]
    fn xsb_free_evolution_concentrates() {
        // Over a long window the spectrum of the constant twisted path sits at
        // μ ≈ 0, so the b > 0 weight barely changes the norm.
        let spec = LatticeSpec::new(2, 3).unwrap();
        let phi = random_field(spec, 6);
        let grid = TimeGrid::uniform(40.0, 400).unwrap();
        let free = free_evolution(&phi, &grid);
        let base = xsb_norm(&free, 0.5, 0.0, WindowPolicy::RaisedCosine).unwrap();
        let weighted = xsb_norm(&free, 0.5, 0.6, WindowPolicy::RaisedCosine).unwrap();
        assert!(weighted / base < 1.05, "{}", weighted / base);
    }

    #[test]
    fn zs_single_block_and_monotone() {
        let spec = LatticeSpec::new(3, 4).unwrap();
        let grid = TimeGrid::uniform(0.05, 5).unwrap();
        let block = crate::lattice::DyadicBlock::new(4).unwrap();
        let phi = project_dyadic(&random_field(spec, 7), block).unwrap();
        let u = free_evolution(&phi, &grid);
        let s = 0.6;
        let expected = 4f64.powf(s + (2.0 - 3.0) / 4.0) * l4_spacetime(&u).unwrap();
        let z = zs_norm(&u, s).unwrap();
        assert!((z - expected).abs() < 1e-12 * expected);

        let p = ModelParams::new(3, 1.0, 0.0, 0.5, 4, 0.05).unwrap();
        let mut v = free_evolution(&sample(&p, 3).field, &grid);
        v = v.map(|_, _, f| f.map(|i, c| if i == spec.len() / 2 { Default::default() } else { c }));
        let mut last = 0.0;
        for s in [0.0, 0.25, 0.5, 0.75] {
            let z = zs_norm(&v, s).unwrap();
            assert!(z >= last);
            last = z;
        }
        // shorter intervals give smaller values
        let short = zs_norm(&v.truncated(3), 0.5).unwrap();
        assert!(short <= zs_norm(&v, 0.5).unwrap());
    }

    #[test]
    fn norm_spec_dispatch() {
        let spec = LatticeSpec::new(2, 2).unwrap();
        let grid = TimeGrid::uniform(0.1, 8).unwrap();
        let u = free_evolution(&random_field(spec, 8), &grid);
        let mut ns = NormSpec::new(NormKind::Hs);
        ns.s = 0.5;
        assert!((ns.evaluate(&u).unwrap() - hs_norm(u.frame(0), 0.5)).abs() < 1e-12);
        let mut bad = NormSpec::new(NormKind::LpLq);
        bad.p = Exponent::Finite(0.5);
        assert!(bad.evaluate(&u).is_err());
        assert_eq!("inf".parse::<Exponent>().unwrap(), Exponent::Infinity);
    }
}
