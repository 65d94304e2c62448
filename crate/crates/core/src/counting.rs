//! Exact lattice-point counts: sums of squares, spheres, ball∩plane slices,
//! bilinear level sets and resonant frequency triples. Each count has two
//! independent enumeration strategies so results can be cross-checked.
//! Also the Fourier coefficient of an interval indicator and the row-sum
//! bound for `‖AA*‖`.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{sup_norm, DyadicBlock};

/// Exponent slack used when comparing counts with `A^{…+ε}` style bounds.
pub const EPSILON: f64 = 0.1;

/// Default cap on estimated enumeration work (inner-loop visits).
pub const DEFAULT_BUDGET: u128 = 1 << 32;

fn check_budget(estimated: u128, budget: u128) -> Result<()> {
    if estimated > budget {
        return Err(Error::BudgetExceeded { estimated, budget });
    }
    Ok(())
}

fn sq(v: &[i64]) -> i64 {
    v.iter().map(|x| x * x).sum()
}

fn dot(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Calls `f` on every point of `Z^d` with `|x|² ≤ r2`.
fn for_each_in_ball(d: usize, r2: i64, f: &mut impl FnMut(&[i64])) {
    fn rec(x: &mut Vec<i64>, d: usize, left: i64, f: &mut impl FnMut(&[i64])) {
        if x.len() == d {
            f(x);
            return;
        }
        let r = left.max(0).isqrt();
        for c in -r..=r {
            x.push(c);
            rec(x, d, left - c * c, f);
            x.pop();
        }
    }
    rec(&mut Vec::with_capacity(d), d, r2, f)
}

/// `r_d(A)`: the number of `X ∈ Z^d` with `X₁² + … + X_d² = A`.
pub fn count_sum_of_squares(d: usize, a: u64) -> u64 {
    fn rec(d: usize, a: i64) -> u64 {
        if d == 0 {
            return (a == 0) as u64;
        }
        if d == 1 {
            let r = a.isqrt();
            return match (r * r == a, a) {
                (_, 0) => 1,
                (true, _) => 2,
                _ => 0,
            };
        }
        let r = a.isqrt();
        (-r..=r).map(|x| rec(d - 1, a - x * x)).sum()
    }
    rec(d, a as i64)
}

/// Lattice points on the sphere `|x|² = radius_sq`.
pub fn count_sphere(d: usize, radius_sq: u64) -> u64 {
    count_sum_of_squares(d, radius_sq)
}

/// The hyperplane `normal·x = offset`. Rational planes are given after
/// clearing denominators.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec<i64>,
    pub offset: i64,
}

impl Plane {
    pub fn new(normal: Vec<i64>, offset: i64) -> Result<Self> {
        if normal.iter().all(|&c| c == 0) {
            return Err(Error::InvalidParameter("plane normal must be nonzero".into()));
        }
        Ok(Plane { normal, offset })
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        dot(&self.normal, x) == self.offset
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneStrategy {
    /// Visit every point of the ball and test the plane equation.
    Scan,
    /// Enumerate the other coordinates and solve for the one with the
    /// largest normal component.
    Solve,
}

/// `|Z^d ∩ B_r ∩ P|` with `B_r = {|x|² ≤ radius_sq}`.
pub fn count_ball_plane(radius_sq: u64, plane: &Plane, strategy: PlaneStrategy) -> u64 {
    let d = plane.normal.len();
    let r2 = radius_sq as i64;
    let mut count = 0u64;
    match strategy {
        PlaneStrategy::Scan => for_each_in_ball(d, r2, &mut |x| count += plane.contains(x) as u64),
        PlaneStrategy::Solve => {
            let j = (0..d)
                .max_by_key(|&i| (plane.normal[i].abs(), std::cmp::Reverse(i)))
                .expect("normal is nonempty");
            let others: Vec<i64> = (0..d).filter(|&i| i != j).map(|i| plane.normal[i]).collect();
            let nj = plane.normal[j];
            for_each_in_ball(d - 1, r2, &mut |y| {
                let rest = plane.offset - dot(&others, y);
                if rest % nj == 0 {
                    let xj = rest / nj;
                    count += (xj * xj + sq(y) <= r2) as u64;
                }
            });
        }
    }
    count
}

/// `{(n₁, n₃) : n₁ ∈ P_{N₁}, n₃ ∈ P_{N₃}, ⟨n₂ - n₁, n₂ - n₃⟩ = μ}` for a
/// fixed `n₂`, blocks taken in sup norm.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BilinearQuery {
    pub n2: Vec<i64>,
    pub mu: i64,
    pub n1_block: DyadicBlock,
    pub n3_block: DyadicBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BilinearStrategy {
    /// Every pair of block points.
    Pairs,
    /// For each `n₁`, solve the linear equation for one coordinate of `n₃`.
    Solve,
}

impl BilinearQuery {
    pub fn dim(&self) -> usize {
        self.n2.len()
    }

    pub fn cost(&self, strategy: BilinearStrategy) -> u128 {
        let d = self.dim();
        let b1 = self.n1_block.mode_count(d);
        match strategy {
            BilinearStrategy::Pairs => b1 * self.n3_block.mode_count(d),
            BilinearStrategy::Solve => {
                let side = 2 * self.n3_block.sup_range().1 as u128 + 1;
                b1 * side.pow(d.saturating_sub(1) as u32)
            }
        }
    }

    /// `N₁^{d-1} N₃^{d-1} min(N₁, N₃)^ε`.
    pub fn bound(&self) -> f64 {
        two_block_bound(self.dim(), self.n1_block, self.n3_block)
    }
}

fn two_block_bound(d: usize, a: DyadicBlock, b: DyadicBlock) -> f64 {
    let (x, y) = (a.size() as f64, b.size() as f64);
    (x * y).powi(d as i32 - 1) * x.min(y).powf(EPSILON)
}

pub fn count_bilinear_level_set(q: &BilinearQuery, strategy: BilinearStrategy, budget: u128) -> Result<u64> {
    let d = q.dim();
    if d == 0 {
        return Err(Error::InvalidParameter("empty n2".into()));
    }
    check_budget(q.cost(strategy), budget)?;
    let first = q.n1_block.points(d);
    let count = match strategy {
        BilinearStrategy::Pairs => {
            let diffs: Vec<Vec<i64>> = q
                .n3_block
                .points(d)
                .iter()
                .map(|n3| q.n2.iter().zip(n3).map(|(a, b)| a - b).collect())
                .collect();
            first
                .par_iter()
                .map(|n1| {
                    let a: Vec<i64> = q.n2.iter().zip(n1).map(|(x, y)| x - y).collect();
                    diffs.iter().filter(|b| dot(&a, b) == q.mu).count() as u64
                })
                .sum()
        }
        BilinearStrategy::Solve => {
            let hi = q.n3_block.sup_range().1;
            let side = 2 * hi + 1;
            let others = (side as u64).pow(d as u32 - 1);
            let total = q.n3_block.mode_count(d) as u64;
            first
                .par_iter()
                .map(|n1| {
                    let a: Vec<i64> = q.n2.iter().zip(n1).map(|(x, y)| x - y).collect();
                    let Some(j) = (0..d).filter(|&i| a[i] != 0).max_by_key(|&i| a[i].abs()) else {
                        return if q.mu == 0 { total } else { 0 };
                    };
                    let mut n3 = vec![0i64; d];
                    let mut hits = 0u64;
                    for mut code in 0..others {
                        let mut partial = 0;
                        for i in (0..d).filter(|&i| i != j) {
                            n3[i] = (code % side as u64) as i64 - hi;
                            code /= side as u64;
                            partial += a[i] * (q.n2[i] - n3[i]);
                        }
                        let rest = q.mu - partial;
                        if rest % a[j] != 0 {
                            continue;
                        }
                        n3[j] = q.n2[j] - rest / a[j];
                        hits += (n3[j].abs() <= hi && q.n3_block.contains_sup(sup_norm(&n3))) as u64;
                    }
                    hits
                })
                .sum()
        }
    };
    Ok(count)
}

/// Conjugation pattern of a trilinear interaction: `-1` marks a conjugated
/// slot. The resonance equations read `Σ σ_i n_i = n`, `Σ σ_i |n_i|² = m`,
/// and pairs of slots with opposite signs must carry distinct frequencies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[i8; 3]", into = "[i8; 3]")]
pub struct SignPattern([i8; 3]);

impl SignPattern {
    /// `N(R̄₁, R₂, R₃)`: `-n₁ + n₂ + n₃ = n`, with `n₁ ≠ n₂, n₃`.
    pub const FIRST_CONJUGATED: SignPattern = SignPattern([-1, 1, 1]);
    /// `N(R₁, R̄₂, R₃)`, the slot order of the gauged nonlinearity.
    pub const SECOND_CONJUGATED: SignPattern = SignPattern([1, -1, 1]);

    pub fn new(signs: [i8; 3]) -> Result<Self> {
        if signs.iter().any(|s| s.abs() != 1) {
            return Err(Error::InvalidParameter(format!("signs must be ±1, got {signs:?}")));
        }
        Ok(SignPattern(signs))
    }

    pub fn signs(&self) -> [i64; 3] {
        self.0.map(i64::from)
    }

    fn excluded(&self, t: [&[i64]; 3]) -> bool {
        let s = self.0;
        (0..3).any(|i| (i + 1..3).any(|j| s[i] != s[j] && t[i] == t[j]))
    }
}

impl TryFrom<[i8; 3]> for SignPattern {
    type Error = Error;
    fn try_from(s: [i8; 3]) -> Result<Self> {
        SignPattern::new(s)
    }
}

impl From<SignPattern> for [i8; 3] {
    fn from(s: SignPattern) -> [i8; 3] {
        s.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResonanceQuery {
    pub n: Vec<i64>,
    pub m: i64,
    pub blocks: [DyadicBlock; 3],
    pub signs: SignPattern,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResonanceStrategy {
    /// Loop over the first two slots and solve the linear condition for the
    /// third.
    SlotLoop,
    /// Tabulate the first two slots by their linear and quadratic sums,
    /// then look each third-slot point up.
    HashJoin,
}

pub type Triple = [Vec<i64>; 3];

impl ResonanceQuery {
    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn cost(&self, strategy: ResonanceStrategy) -> u128 {
        let d = self.dim();
        let [a, b, c] = self.blocks.map(|b| b.mode_count(d));
        match strategy {
            ResonanceStrategy::SlotLoop => a * b,
            ResonanceStrategy::HashJoin => a * b + c,
        }
    }

    /// Eliminating one slot through the linear condition leaves a bilinear
    /// level set in the other two; the bound keeps the two smallest blocks.
    pub fn bound(&self) -> f64 {
        let mut b = self.blocks;
        b.sort();
        two_block_bound(self.dim(), b[0], b[1])
    }
}

fn check_triple_dims(d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidParameter("empty n".into()));
    }
    Ok(())
}

/// Triples satisfying the linear condition and the exclusions, bucketed by
/// their quadratic level `Σ σ_i |n_i|²`. With `level = Some(m)` only that
/// bucket is kept.
fn slot_loop(q: &ResonanceQuery, level: Option<i64>) -> Vec<(i64, Triple)> {
    let d = q.dim();
    let s = q.signs.signs();
    let p1 = q.blocks[0].points(d);
    let p2 = q.blocks[1].points(d);
    p1.par_iter()
        .flat_map_iter(|n1| {
            let p2 = &p2;
            p2.iter().filter_map(move |n2| {
                let n3: Vec<i64> = (0..d).map(|i| s[2] * (q.n[i] - s[0] * n1[i] - s[1] * n2[i])).collect();
                if !q.blocks[2].contains(&n3) || q.signs.excluded([n1, n2, &n3]) {
                    return None;
                }
                let m = s[0] * sq(n1) + s[1] * sq(n2) + s[2] * sq(&n3);
                match level {
                    Some(want) if want != m => None,
                    _ => Some((m, [n1.clone(), n2.clone(), n3])),
                }
            })
        })
        .collect()
}

/// Exact solution list of the resonance system, sorted lexicographically.
pub fn resonance_set(q: &ResonanceQuery, strategy: ResonanceStrategy, budget: u128) -> Result<Vec<Triple>> {
    let d = q.dim();
    check_triple_dims(d)?;
    check_budget(q.cost(strategy), budget)?;
    let mut out: Vec<Triple> = match strategy {
        ResonanceStrategy::SlotLoop => slot_loop(q, Some(q.m)).into_iter().map(|(_, t)| t).collect(),
        ResonanceStrategy::HashJoin => {
            let s = q.signs.signs();
            let p1 = q.blocks[0].points(d);
            let p2 = q.blocks[1].points(d);
            let mut table: HashMap<(Vec<i64>, i64), Vec<(usize, usize)>> = HashMap::new();
            for (i, a) in p1.iter().enumerate() {
                for (j, b) in p2.iter().enumerate() {
                    let lin: Vec<i64> = (0..d).map(|k| s[0] * a[k] + s[1] * b[k]).collect();
                    let quad = s[0] * sq(a) + s[1] * sq(b);
                    table.entry((lin, quad)).or_default().push((i, j));
                }
            }
            let mut found = Vec::new();
            for c in q.blocks[2].points(d) {
                let lin: Vec<i64> = (0..d).map(|k| q.n[k] - s[2] * c[k]).collect();
                let quad = q.m - s[2] * sq(&c);
                if let Some(pairs) = table.get(&(lin, quad)) {
                    for &(i, j) in pairs {
                        if !q.signs.excluded([&p1[i], &p2[j], &c]) {
                            found.push([p1[i].clone(), p2[j].clone(), c.clone()]);
                        }
                    }
                }
            }
            found
        }
    };
    out.sort();
    Ok(out)
}

/// Number of triples meeting only the linear condition and the exclusions.
pub fn convolution_count(q: &ResonanceQuery, budget: u128) -> Result<u64> {
    check_triple_dims(q.dim())?;
    check_budget(q.cost(ResonanceStrategy::SlotLoop), budget)?;
    Ok(slot_loop(q, None).len() as u64)
}

/// Resonance-set sizes for every attained level `m` at the query's `n`.
pub fn resonance_level_counts(q: &ResonanceQuery, budget: u128) -> Result<BTreeMap<i64, u64>> {
    check_triple_dims(q.dim())?;
    check_budget(q.cost(ResonanceStrategy::SlotLoop), budget)?;
    let mut out = BTreeMap::new();
    for (m, _) in slot_loop(q, None) {
        *out.entry(m).or_insert(0) += 1;
    }
    Ok(out)
}

/// `∫_a^b e^{-ikt} dt = (e^{-ika} - e^{-ikb})/(ik)`, and `b - a` at `k = 0`.
/// This is the `e^{-ikt}` convention used for all Fourier coefficients
/// here; the conjugate convention only flips the phase.
pub fn indicator_fourier_coeff(a: f64, b: f64, k: i64) -> Complex64 {
    if k == 0 {
        return Complex64::new(b - a, 0.0);
    }
    let kf = k as f64;
    let num = Complex64::from_polar(1.0, -kf * a) - Complex64::from_polar(1.0, -kf * b);
    num / Complex64::new(0.0, kf)
}

/// `‖AA*‖` and the bound
/// `max_j Σ_k |A_jk|² + (Σ_{i≠j} |Σ_k A_ik Ā_jk|²)^{1/2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramBound {
    pub bound: f64,
    pub exact: f64,
    pub iterations: usize,
}

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 100_000;

/// Evaluates the bound and the spectral norm of `AA*` for a matrix given by
/// rows. The norm comes from power iteration on `AA*` (exactly, when `AA*`
/// is diagonal).
pub fn matrix_aat_bound(rows: &[Vec<Complex64>]) -> Result<GramBound> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidParameter("matrix rows have different lengths".into()));
    }
    if n == 0 || m == 0 {
        return Ok(GramBound {
            bound: 0.0,
            exact: 0.0,
            iterations: 0,
        });
    }
    let gram: Vec<Complex64> = (0..n * n)
        .map(|ij| {
            let (i, j) = (ij / n, ij % n);
            rows[i].iter().zip(&rows[j]).map(|(x, y)| x * y.conj()).sum()
        })
        .collect();
    let diag_max = (0..n).map(|j| gram[j * n + j].re).fold(0.0, f64::max);
    let off_sq: f64 = (0..n * n)
        .filter(|ij| ij / n != ij % n)
        .map(|ij| gram[ij].norm_sqr())
        .sum();
    let bound = diag_max + off_sq.sqrt();
    if off_sq == 0.0 {
        return Ok(GramBound {
            bound,
            exact: diag_max,
            iterations: 0,
        });
    }
    let (exact, iterations) = power_iteration(&gram, n)?;
    assert!(
        exact <= bound * (1.0 + 1e-9),
        "spectral norm {exact} exceeds row-sum bound {bound}"
    );
    Ok(GramBound {
        bound,
        exact,
        iterations,
    })
}

/// Largest eigenvalue of a Hermitian positive semidefinite `n × n` matrix.
fn power_iteration(g: &[Complex64], n: usize) -> Result<(f64, usize)> {
    let mut v: Vec<Complex64> = (0..n)
        .map(|j| Complex64::new(1.0 + 0.5 * (1.3 * j as f64).cos(), 0.3 * (0.7 * j as f64 + 0.2).sin()))
        .collect();
    let norm = |x: &[Complex64]| x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let n0 = norm(&v);
    v.iter_mut().for_each(|c| *c /= n0);
    let mut w = vec![Complex64::default(); n];
    let mut last = f64::NAN;
    for it in 1..=POWER_MAX_ITER {
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = g[i * n..(i + 1) * n].iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let rayleigh: f64 = v.iter().zip(&w).map(|(a, b)| (a.conj() * b).re).sum();
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok((0.0, it));
        }
        if (rayleigh - last).abs() <= POWER_TOL * rayleigh.abs() {
            return Ok((rayleigh, it));
        }
        last = rayleigh;
        for (a, b) in v.iter_mut().zip(&w) {
            *a = b / nw;
        }
    }
    Err(Error::NoConvergence(POWER_MAX_ITER))
}

/// One enumerable query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CountQuery {
    Sphere { d: usize, radius_sq: u64 },
    BallPlane { radius_sq: u64, plane: Plane },
    BilinearLevelSet(BilinearQuery),
    Resonance(ResonanceQuery),
}

impl CountQuery {
    pub fn kind(&self) -> &'static str {
        match self {
            CountQuery::Sphere { .. } => "sphere",
            CountQuery::BallPlane { .. } => "ball_plane",
            CountQuery::BilinearLevelSet(_) => "bilinear_level_set",
            CountQuery::Resonance(_) => "resonance",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CountQuery::Sphere { d, .. } => *d,
            CountQuery::BallPlane { plane, .. } => plane.normal.len(),
            CountQuery::BilinearLevelSet(q) => q.dim(),
            CountQuery::Resonance(q) => q.dim(),
        }
    }

    /// Compact `key=value` description for tables.
    pub fn describe(&self) -> String {
        let v = |x: &[i64]| x.iter().map(i64::to_string).collect::<Vec<_>>().join(" ");
        match self {
            CountQuery::Sphere { radius_sq, .. } => format!("radius_sq={radius_sq}"),
            CountQuery::BallPlane { radius_sq, plane } => format!(
                "radius_sq={radius_sq};normal={};offset={}",
                v(&plane.normal),
                plane.offset
            ),
            CountQuery::BilinearLevelSet(q) => format!(
                "n2={};mu={};N1={};N3={}",
                v(&q.n2),
                q.mu,
                q.n1_block.size(),
                q.n3_block.size()
            ),
            CountQuery::Resonance(q) => format!(
                "n={};m={};N={} {} {};signs={}",
                v(&q.n),
                q.m,
                q.blocks[0].size(),
                q.blocks[1].size(),
                q.blocks[2].size(),
                v(&q.signs.signs())
            ),
        }
    }

    /// Cardinality by the primary strategy.
    pub fn count(&self, budget: u128) -> Result<u64> {
        self.count_by(false, budget)
    }

    /// Cardinality by the independent second strategy.
    pub fn count_alternative(&self, budget: u128) -> Result<u64> {
        self.count_by(true, budget)
    }

    fn count_by(&self, alternative: bool, budget: u128) -> Result<u64> {
        match self {
            CountQuery::Sphere { d, radius_sq } => {
                if alternative {
                    let mut c = 0u64;
                    let target = *radius_sq as i64;
                    for_each_in_ball(*d, target, &mut |x| c += (sq(x) == target) as u64);
                    Ok(c)
                } else {
                    Ok(count_sphere(*d, *radius_sq))
                }
            }
            CountQuery::BallPlane { radius_sq, plane } => {
                let s = if alternative { PlaneStrategy::Scan } else { PlaneStrategy::Solve };
                Ok(count_ball_plane(*radius_sq, plane, s))
            }
            CountQuery::BilinearLevelSet(q) => {
                let s = if alternative { BilinearStrategy::Pairs } else { BilinearStrategy::Solve };
                count_bilinear_level_set(q, s, budget)
            }
            CountQuery::Resonance(q) => {
                let s = if alternative { ResonanceStrategy::HashJoin } else { ResonanceStrategy::SlotLoop };
                Ok(resonance_set(q, s, budget)?.len() as u64)
            }
        }
    }

    /// The lemma's bound with constant 1 and `ε = EPSILON`: `R^{d-2+ε}` for
    /// spheres, `r^{d-1}` for ball∩plane, and `N_a^{d-1} N_b^{d-1}
    /// min(N_a, N_b)^ε` for the bilinear and resonance sets. Radii below 1
    /// are treated as 1.
    pub fn bound(&self) -> f64 {
        let d = self.dim() as f64;
        match self {
            CountQuery::Sphere { radius_sq, .. } => (*radius_sq as f64).sqrt().max(1.0).powf(d - 2.0 + EPSILON),
            CountQuery::BallPlane { radius_sq, .. } => (*radius_sq as f64).sqrt().max(1.0).powf(d - 1.0),
            CountQuery::BilinearLevelSet(q) => q.bound(),
            CountQuery::Resonance(q) => q.bound(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountResult {
    pub query: CountQuery,
    pub cardinality: u64,
    /// Fitted constant times [`CountQuery::bound`].
    pub bound_value: f64,
    pub ratio: f64,
    pub constant: f64,
}

/// Counts every query and fits the smallest constant `C` with
/// `count ≤ C · bound` across the corpus.
pub fn evaluate_corpus(queries: &[CountQuery], budget: u128) -> Result<Vec<CountResult>> {
    let counts = queries
        .iter()
        .map(|q| q.count(budget))
        .collect::<Result<Vec<u64>>>()?;
    let constant = queries
        .iter()
        .zip(&counts)
        .map(|(q, &c)| c as f64 / q.bound())
        .fold(0.0, f64::max);
    Ok(queries
        .iter()
        .zip(counts)
        .map(|(q, cardinality)| {
            let bound_value = constant * q.bound();
            let ratio = if bound_value > 0.0 { cardinality as f64 / bound_value } else { 0.0 };
            CountResult {
                query: q.clone(),
                cardinality,
                bound_value,
                ratio,
                constant,
            }
        })
        .collect())
}

pub fn write_count_csv(results: &[CountResult], out: &mut impl Write) -> Result<()> {
    writeln!(out, "kind,d,params,cardinality,bound_value,ratio,constant")?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{:.16e},{:.16e},{:.16e}",
            r.query.kind(),
            r.query.dim(),
            r.query.describe(),
            r.cardinality,
            r.bound_value,
            r.ratio,
            r.constant
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(n: u64) -> DyadicBlock {
        DyadicBlock::new(n).unwrap()
    }

    /// All of `r_d(0..=amax)` from one pass over the enclosing cube.
    fn cube_histogram(d: usize, amax: i64) -> Vec<u64> {
        let r = amax.isqrt();
        let side = 2 * r + 1;
        let mut hist = vec![0u64; amax as usize + 1];
        for code in 0..side.pow(d as u32) {
            let mut c = code;
            let mut s = 0;
            for _ in 0..d {
                let x = c % side - r;
                c /= side;
                s += x * x;
            }
            if s <= amax {
                hist[s as usize] += 1;
            }
        }
        hist
    }

    #[test]
    fn sum_of_squares_examples() {
        assert_eq!(count_sum_of_squares(3, 0), 1);
        assert_eq!(count_sum_of_squares(3, 1), 6);
        assert_eq!(count_sum_of_squares(2, 25), 12);
        assert_eq!(count_sum_of_squares(4, 4), 24);
        assert_eq!(count_sphere(3, 1), 6);
    }

    #[test]
    fn sum_of_squares_matches_cube_histogram() {
        for d in 1..=4 {
            let hist = cube_histogram(d, 150);
            for (a, &h) in hist.iter().enumerate() {
                assert_eq!(count_sum_of_squares(d, a as u64), h, "d={d} A={a}");
            }
        }
    }

    #[test]
    fn jacobi_four_squares() {
        // r_4(A) = 8 Σ_{k | A, 4 ∤ k} k
        for a in 1..200u64 {
            let sigma: u64 = (1..=a).filter(|k| a % k == 0 && k % 4 != 0).sum();
            assert_eq!(count_sum_of_squares(4, a), 8 * sigma);
        }
    }

    #[test]
    fn ball_plane_examples() {
        let p = Plane::new(vec![1, 0], 0).unwrap();
        assert_eq!(count_ball_plane(4, &p, PlaneStrategy::Scan), 5);
        assert_eq!(count_ball_plane(4, &p, PlaneStrategy::Solve), 5);
        assert!(Plane::new(vec![0, 0], 1).is_err());
    }

    #[test]
    fn ball_plane_strategies_agree() {
        let planes = [
            (vec![1, 1, 1], 0),
            (vec![2, -3, 1], 4),
            (vec![0, 0, 5], 10),
            (vec![3, 6, -2], 7),
            (vec![1, 2], 3),
        ];
        for (normal, offset) in planes {
            let p = Plane::new(normal, offset).unwrap();
            for r2 in [0, 1, 5, 17, 40] {
                assert_eq!(
                    count_ball_plane(r2, &p, PlaneStrategy::Scan),
                    count_ball_plane(r2, &p, PlaneStrategy::Solve),
                    "{p:?} r2={r2}"
                );
            }
        }
    }

    fn bilinear(n2: Vec<i64>, mu: i64, n1: u64, n3: u64) -> BilinearQuery {
        BilinearQuery {
            n2,
            mu,
            n1_block: block(n1),
            n3_block: block(n3),
        }
    }

    #[test]
    fn bilinear_exhaustive_d2() {
        let q = bilinear(vec![0, 0], 0, 2, 2);
        let pts = block(2).points(2);
        let expected = pts
            .iter()
            .flat_map(|a| pts.iter().map(move |b| dot(a, b)))
            .filter(|&x| x == 0)
            .count() as u64;
        for s in [BilinearStrategy::Pairs, BilinearStrategy::Solve] {
            assert_eq!(count_bilinear_level_set(&q, s, DEFAULT_BUDGET).unwrap(), expected);
        }
    }

    #[test]
    fn bilinear_infeasible_level_is_empty() {
        // |⟨n₂ - n₁, n₂ - n₃⟩| ≤ d (|n₂|∞ + N₁)(|n₂|∞ + N₃)
        let q = bilinear(vec![1, -2, 0], 3 * 6 * 10 + 1, 4, 8);
        for s in [BilinearStrategy::Pairs, BilinearStrategy::Solve] {
            assert_eq!(count_bilinear_level_set(&q, s, DEFAULT_BUDGET).unwrap(), 0);
        }
    }

    #[test]
    fn bilinear_strategies_agree() {
        for (n2, mu, n1, n3) in [
            (vec![0, 0, 0], 0, 2, 4),
            (vec![1, 0, -1], 3, 4, 2),
            (vec![3, 2, 1], -5, 4, 4),
            (vec![0, 5], 7, 8, 2),
            (vec![2, 2, 2, 2], 1, 2, 2),
        ] {
            let q = bilinear(n2, mu, n1, n3);
            let a = count_bilinear_level_set(&q, BilinearStrategy::Pairs, DEFAULT_BUDGET).unwrap();
            let b = count_bilinear_level_set(&q, BilinearStrategy::Solve, DEFAULT_BUDGET).unwrap();
            assert_eq!(a, b, "{q:?}");
        }
    }

    #[test]
    fn bilinear_budget_refusal() {
        let q = bilinear(vec![0, 0, 0], 0, 64, 64);
        match count_bilinear_level_set(&q, BilinearStrategy::Pairs, 1 << 20) {
            Err(Error::BudgetExceeded { estimated, budget }) => {
                assert_eq!(estimated, q.cost(BilinearStrategy::Pairs));
                assert_eq!(budget, 1 << 20);
            }
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn bilinear_constant_is_stable() {
        let ratios: Vec<f64> = [2, 4, 8]
            .iter()
            .map(|&n| {
                let q = bilinear(vec![0, 0, 0], 0, n, n);
                count_bilinear_level_set(&q, BilinearStrategy::Solve, DEFAULT_BUDGET).unwrap() as f64 / q.bound()
            })
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(hi / lo <= 2.0, "{ratios:?}");
    }

    fn resonance(n: Vec<i64>, m: i64, blocks: [u64; 3], signs: SignPattern) -> ResonanceQuery {
        ResonanceQuery {
            n,
            m,
            blocks: blocks.map(block),
            signs,
        }
    }

    #[test]
    fn resonance_strategies_agree() {
        let q = resonance(vec![0, 0], 0, [2, 2, 2], SignPattern::FIRST_CONJUGATED);
        let a = resonance_set(&q, ResonanceStrategy::SlotLoop, DEFAULT_BUDGET).unwrap();
        let b = resonance_set(&q, ResonanceStrategy::HashJoin, DEFAULT_BUDGET).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
        for [n1, n2, n3] in &a {
            let lin: Vec<i64> = (0..2).map(|i| -n1[i] + n2[i] + n3[i]).collect();
            assert_eq!(lin, vec![0, 0]);
            assert_eq!(-sq(n1) + sq(n2) + sq(n3), 0);
            assert!(n1 != n2 && n1 != n3);
        }
        for (n, m, blocks, signs) in [
            (vec![1, 0, 0], 3, [2, 2, 4], SignPattern::FIRST_CONJUGATED),
            (vec![1, 0, 0], 3, [2, 2, 4], SignPattern::SECOND_CONJUGATED),
            (vec![0, 1], -2, [4, 2, 2], SignPattern::new([1, 1, -1]).unwrap()),
            (vec![2, -1], 5, [2, 4, 2], SignPattern::new([1, 1, 1]).unwrap()),
        ] {
            let q = resonance(n, m, blocks, signs);
            assert_eq!(
                resonance_set(&q, ResonanceStrategy::SlotLoop, DEFAULT_BUDGET).unwrap(),
                resonance_set(&q, ResonanceStrategy::HashJoin, DEFAULT_BUDGET).unwrap(),
                "{q:?}"
            );
        }
    }

    #[test]
    fn sign_pattern_changes_the_set() {
        let a = resonance(vec![1, 0, 0], 3, [2, 2, 4], SignPattern::FIRST_CONJUGATED);
        let b = ResonanceQuery {
            signs: SignPattern::SECOND_CONJUGATED,
            ..a.clone()
        };
        let sa = resonance_set(&a, ResonanceStrategy::SlotLoop, DEFAULT_BUDGET).unwrap();
        let sb = resonance_set(&b, ResonanceStrategy::SlotLoop, DEFAULT_BUDGET).unwrap();
        assert_ne!(sa, sb);
        assert!(SignPattern::new([1, 0, -1]).is_err());
    }

    #[test]
    fn unattainable_level_is_empty() {
        // -|n₁|² + |n₂|² + |n₃|² ≤ 2·d·2² on blocks of size 2
        let q = resonance(vec![0, 0], 17, [2, 2, 2], SignPattern::FIRST_CONJUGATED);
        assert!(resonance_set(&q, ResonanceStrategy::SlotLoop, DEFAULT_BUDGET).unwrap().is_empty());
        assert!(resonance_set(&q, ResonanceStrategy::HashJoin, DEFAULT_BUDGET).unwrap().is_empty());
    }

    #[test]
    fn levels_partition_convolution_count() {
        let q = resonance(vec![1, -1, 0], 0, [2, 4, 2], SignPattern::FIRST_CONJUGATED);
        let levels = resonance_level_counts(&q, DEFAULT_BUDGET).unwrap();
        let total: u64 = levels.values().sum();
        assert_eq!(total, convolution_count(&q, DEFAULT_BUDGET).unwrap());
        for (&m, &c) in levels.iter().take(5) {
            let qm = ResonanceQuery { m, ..q.clone() };
            assert_eq!(resonance_set(&qm, ResonanceStrategy::HashJoin, DEFAULT_BUDGET).unwrap().len() as u64, c);
        }
    }

    #[test]
    fn resonance_budget_refusal() {
        let q = resonance(vec![0, 0, 0], 0, [32, 32, 32], SignPattern::FIRST_CONJUGATED);
        assert!(matches!(
            resonance_set(&q, ResonanceStrategy::HashJoin, 1 << 20),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn indicator_examples() {
        let tau = 2.0 * std::f64::consts::PI;
        assert!(indicator_fourier_coeff(0.0, tau, 1).norm() < 1e-15);
        assert!((indicator_fourier_coeff(0.0, std::f64::consts::PI, 1).norm() - 2.0).abs() < 1e-15);
        assert_eq!(indicator_fourier_coeff(0.5, 2.0, 0), Complex64::new(1.5, 0.0));
    }

    #[test]
    fn indicator_matches_quadrature() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let tau = 2.0 * std::f64::consts::PI;
        for _ in 0..100 {
            let (x, y): (f64, f64) = (rng.random_range(0.0..tau), rng.random_range(0.0..tau));
            let (a, b) = (x.min(y), x.max(y));
            let k: i64 = rng.random_range(-12..=12);
            // composite Simpson on [a, b]
            let n = 20_000;
            let h = (b - a) / n as f64;
            let f = |t: f64| Complex64::from_polar(1.0, -(k as f64) * t);
            let mut acc = f(a) + f(b);
            for j in 1..n {
                acc += f(a + j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
            }
            let quad = acc * (h / 3.0);
            let exact = indicator_fourier_coeff(a, b, k);
            assert!((quad - exact).norm() < 1e-10, "a={a} b={b} k={k}");
            if k != 0 {
                assert!(exact.norm() <= 2.0 / k.abs() as f64 + 1e-15);
            }
        }
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn gram_examples() {
        let id = vec![vec![c(1.0), c(0.0)], vec![c(0.0), c(1.0)]];
        let g = matrix_aat_bound(&id).unwrap();
        assert_eq!((g.bound, g.exact), (1.0, 1.0));
        let ones = vec![vec![c(1.0), c(1.0)], vec![c(1.0), c(1.0)]];
        // AA* = 2·ones: the ordered off-diagonal sum counts the entry 2 twice
        let g = matrix_aat_bound(&ones).unwrap();
        assert!((g.bound - (2.0 + 8f64.sqrt())).abs() < 1e-12);
        assert!((g.exact - 4.0).abs() < 1e-9);
        // rank one with AA* = ones(3): an unordered pair sum would give 1 + √3 < 3
        let col = vec![vec![c(1.0)]; 3];
        let g = matrix_aat_bound(&col).unwrap();
        assert!((g.exact - 3.0).abs() < 1e-9 && g.bound >= 3.0);
        assert!(matrix_aat_bound(&[vec![c(1.0)], vec![]]).is_err());
    }

    #[test]
    fn gram_matches_eigen_oracle() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for trial in 0..200 {
            let (n, m) = (1 + trial % 8, 1 + (trial * 7) % 12);
            let rows: Vec<Vec<Complex64>> = (0..n)
                .map(|_| {
                    (0..m)
                        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
                        .collect()
                })
                .collect();
            let g = matrix_aat_bound(&rows).unwrap();
            let a = nalgebra::DMatrix::from_fn(n, m, |i, j| rows[i][j]);
            let aat = &a * a.adjoint();
            let top = aat.symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max);
            assert!((g.exact - top).abs() <= 1e-8 * top, "trial {trial}: {} vs {top}", g.exact);
            assert!(g.exact <= g.bound * (1.0 + 1e-9));
        }
    }

    #[test]
    fn corpus_constant_and_csv() {
        let queries: Vec<CountQuery> = (1..=30u64)
            .map(|r| CountQuery::Sphere { d: 3, radius_sq: r * r })
            .collect();
        let results = evaluate_corpus(&queries, DEFAULT_BUDGET).unwrap();
        let constant = results[0].constant;
        assert!(constant.is_finite() && constant > 0.0);
        assert!(results.iter().all(|r| r.ratio <= 1.0 + 1e-12));
        assert!(results.iter().any(|r| (r.ratio - 1.0).abs() < 1e-12));
        for q in &queries {
            assert_eq!(q.count(DEFAULT_BUDGET).unwrap(), q.count_alternative(DEFAULT_BUDGET).unwrap());
        }
        let mut buf = Vec::new();
        write_count_csv(&results[..1], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("kind,d,params"));
        assert!(text.contains("sphere,3,radius_sq=1,6,"));
    }

    #[test]
    fn query_serde_round_trip() {
        let q = CountQuery::Resonance(resonance(vec![1, 0], 2, [2, 4, 2], SignPattern::SECOND_CONJUGATED));
        let text = serde_json::to_string(&q).unwrap();
        assert!(text.contains("\"kind\":\"resonance\""));
        assert_eq!(serde_json::from_str::<CountQuery>(&text).unwrap(), q);
    }
}
