//! Truncated frequency lattice, rectangular Littlewood-Paley blocks and cube
//! tilings.
//!
//! Modes are the points `n ∈ Z^d` with `|n_i| ≤ M`. They are enumerated
//! lexicographically in `(n_1, …, n_d)` with `n_1` the most significant
//! coordinate, so the flat index of `n` is `Σ (n_i + M)·(2M+1)^{d-1-i}`.
//! A useful consequence: the index of `-n` is `len - 1 - index(n)`.
//!
//! Dyadic blocks use the sup norm `|n|_∞`. Block `1` holds `|n|_∞ ≤ 1` and
//! block `2^k` (k ≥ 1) holds `2^{k-1} < |n|_∞ ≤ 2^k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FourierField;

/// Tag written into manifests and snapshots for the block convention above.
pub const CONVENTION_TAG: &str = "rect-dyadic-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "LatticeRecord", try_from = "LatticeRecord")]
pub struct LatticeSpec {
    d: usize,
    m: i64,
    side: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LatticeRecord {
    d: usize,
    #[serde(rename = "M")]
    m: i64,
    convention: String,
}

impl From<LatticeSpec> for LatticeRecord {
    fn from(spec: LatticeSpec) -> Self {
        LatticeRecord {
            d: spec.d,
            m: spec.m,
            convention: CONVENTION_TAG.to_string(),
        }
    }
}

impl TryFrom<LatticeRecord> for LatticeSpec {
    type Error = Error;

    fn try_from(rec: LatticeRecord) -> Result<Self> {
        if rec.convention != CONVENTION_TAG {
            return Err(Error::InvalidParameter(format!(
                "unknown lattice convention {:?}",
                rec.convention
            )));
        }
        LatticeSpec::new(rec.d, rec.m)
    }
}

impl LatticeSpec {
    pub fn new(d: usize, m: i64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if m < 1 {
            return Err(Error::InvalidParameter("truncation radius must be at least 1".into()));
        }
        let side = (2 * m + 1) as usize;
        let len = side
            .checked_pow(d as u32)
            .filter(|&l| l <= (1usize << 40))
            .ok_or_else(|| Error::InvalidParameter(format!("lattice (2·{m}+1)^{d} is too large")))?;
        Ok(LatticeSpec { d, m, side, len })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Truncation radius `M`.
    pub fn radius(&self) -> i64 {
        self.m
    }

    /// Modes per axis, `2M + 1`.
    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of modes, `(2M+1)^d`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, n: &[i64]) -> bool {
        n.len() == self.d && n.iter().all(|c| c.abs() <= self.m)
    }

    pub fn index_of(&self, n: &[i64]) -> Option<usize> {
        if !self.contains(n) {
            return None;
        }
        Some(
            n.iter()
                .fold(0usize, |acc, &c| acc * self.side + (c + self.m) as usize),
        )
    }

    /// Writes the mode with flat index `idx` into `out`.
    pub fn point_into(&self, mut idx: usize, out: &mut [i64]) {
        debug_assert!(idx < self.len && out.len() == self.d);
        for slot in out.iter_mut().rev() {
            *slot = (idx % self.side) as i64 - self.m;
            idx /= self.side;
        }
    }

    pub fn point(&self, idx: usize) -> Vec<i64> {
        let mut out = vec![0; self.d];
        self.point_into(idx, &mut out);
        out
    }

    /// Index of `-n` given the index of `n`.
    pub fn negated_index(&self, idx: usize) -> usize {
        self.len - 1 - idx
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.len).map(move |i| self.point(i))
    }

    /// `|n|²` for every mode, in enumeration order.
    pub fn norm_sq_table(&self) -> Vec<i64> {
        let mut buf = vec![0; self.d];
        (0..self.len)
            .map(|i| {
                self.point_into(i, &mut buf);
                buf.iter().map(|c| c * c).sum()
            })
            .collect()
    }

    /// `|n|_∞` for every mode, in enumeration order.
    pub fn sup_norm_table(&self) -> Vec<i64> {
        let mut buf = vec![0; self.d];
        (0..self.len)
            .map(|i| {
                self.point_into(i, &mut buf);
                buf.iter().map(|c| c.abs()).max().unwrap_or(0)
            })
            .collect()
    }

    /// Dyadic blocks needed to cover the lattice, smallest first.
    pub fn blocks(&self) -> Vec<DyadicBlock> {
        let mut out = vec![DyadicBlock(1)];
        let mut n = 1u64;
        while (n as i64) < self.m {
            n *= 2;
            out.push(DyadicBlock(n));
        }
        out
    }
}

/// `⟨n⟩ = √(1 + |n|²)`.
pub fn japanese_bracket(n: &[i64]) -> f64 {
    let sq: i64 = n.iter().map(|c| c * c).sum();
    (1.0 + sq as f64).sqrt()
}

pub fn bracket_from_norm_sq(norm_sq: i64) -> f64 {
    (1.0 + norm_sq as f64).sqrt()
}

pub fn sup_norm(n: &[i64]) -> i64 {
    n.iter().map(|c| c.abs()).max().unwrap_or(0)
}

/// A dyadic frequency scale `N ∈ {1, 2, 4, …}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct DyadicBlock(u64);

impl TryFrom<u64> for DyadicBlock {
    type Error = Error;
    fn try_from(n: u64) -> Result<Self> {
        DyadicBlock::new(n)
    }
}

impl From<DyadicBlock> for u64 {
    fn from(b: DyadicBlock) -> u64 {
        b.0
    }
}

impl DyadicBlock {
    pub fn new(n: u64) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidParameter(format!("{n} is not a dyadic number")));
        }
        Ok(DyadicBlock(n))
    }

    pub fn size(&self) -> u64 {
        self.0
    }

    /// The block a sup-norm value falls into.
    pub fn of_sup_norm(sup: i64) -> Self {
        if sup <= 1 {
            DyadicBlock(1)
        } else {
            DyadicBlock((sup as u64).next_power_of_two())
        }
    }

    pub fn containing(n: &[i64]) -> Self {
        Self::of_sup_norm(sup_norm(n))
    }

    /// Inclusive range of sup norms covered by the block.
    pub fn sup_range(&self) -> (i64, i64) {
        if self.0 == 1 {
            (0, 1)
        } else {
            ((self.0 / 2) as i64 + 1, self.0 as i64)
        }
    }

    pub fn contains_sup(&self, sup: i64) -> bool {
        let (lo, hi) = self.sup_range();
        sup >= lo && sup <= hi
    }

    pub fn contains(&self, n: &[i64]) -> bool {
        self.contains_sup(sup_norm(n))
    }

    /// Number of lattice points of `Z^d` in the block.
    pub fn mode_count(&self, d: usize) -> u128 {
        let (lo, hi) = self.sup_range();
        let outer = (2 * hi as u128 + 1).pow(d as u32);
        let inner = if lo == 0 { 0 } else { (2 * (lo - 1) as u128 + 1).pow(d as u32) };
        outer - inner
    }

    /// All points of the block in lexicographic order.
    pub fn points(&self, d: usize) -> Vec<Vec<i64>> {
        let (_, hi) = self.sup_range();
        let spec = LatticeSpec::new(d, hi).expect("block radius is positive");
        spec.points().filter(|p| self.contains(p)).collect()
    }
}

/// An axis-parallel cube `corner_i ≤ n_i < corner_i + side`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cube {
    pub corner: Vec<i64>,
    pub side: i64,
}

impl Cube {
    pub fn contains(&self, n: &[i64]) -> bool {
        n.iter()
            .zip(&self.corner)
            .all(|(&c, &lo)| c >= lo && c < lo + self.side)
    }

    /// Per-axis inclusive coordinate range of the cube clipped to `[-m, m]`.
    fn clipped_ranges(&self, m: i64) -> Vec<(i64, i64)> {
        self.corner
            .iter()
            .map(|&lo| (lo.max(-m), (lo + self.side - 1).min(m)))
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CubeDecomposition {
    pub side: i64,
    pub cubes: Vec<Cube>,
    /// `adjacency[k]` lists every `j` with `C_j ∼ C_k`, ascending.
    pub adjacency: Vec<Vec<usize>>,
}

impl CubeDecomposition {
    /// Index of the cube containing `n`.
    pub fn locate(&self, spec: &LatticeSpec, n: &[i64]) -> Option<usize> {
        if !spec.contains(n) {
            return None;
        }
        let per_axis = per_axis_count(spec.radius(), self.side);
        let mut idx = 0usize;
        for &c in n {
            idx = idx * per_axis + ((c + spec.radius()) / self.side) as usize;
        }
        Some(idx)
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }
}

fn per_axis_count(m: i64, side: i64) -> usize {
    ((2 * m + 1 + side - 1) / side) as usize
}

/// Tiles `[-M, M]^d` by cubes of the given side, starting at the corner
/// `(-M, …, -M)`. Two cubes are adjacent when their sum set meets the
/// support `[-2·side, 2·side]^d` of `P_{≤2·side}`.
pub fn cube_decomposition(spec: &LatticeSpec, side: i64) -> Result<CubeDecomposition> {
    if side < 1 {
        return Err(Error::InvalidParameter("cube side must be at least 1".into()));
    }
    let m = spec.radius();
    let d = spec.dim();
    let per_axis = per_axis_count(m, side);
    let count = per_axis
        .checked_pow(d as u32)
        .ok_or_else(|| Error::InvalidParameter("too many cubes".into()))?;

    let mut cubes = Vec::with_capacity(count);
    for mut idx in 0..count {
        let mut corner = vec![0i64; d];
        for slot in corner.iter_mut().rev() {
            *slot = -m + (idx % per_axis) as i64 * side;
            idx /= per_axis;
        }
        cubes.push(Cube { corner, side });
    }

    let ranges: Vec<Vec<(i64, i64)>> = cubes.iter().map(|c| c.clipped_ranges(m)).collect();
    let reach = 2 * side;
    let adjacency = (0..count)
        .map(|k| {
            (0..count)
                .filter(|&j| {
                    ranges[j].iter().zip(&ranges[k]).all(|(a, b)| {
                        let lo = a.0 + b.0;
                        let hi = a.1 + b.1;
                        lo <= reach && hi >= -reach
                    })
                })
                .collect()
        })
        .collect();

    Ok(CubeDecomposition {
        side,
        cubes,
        adjacency,
    })
}

/// `P_N u`: keeps the modes of block `N`, zeroes the rest.
pub fn project_dyadic(u: &FourierField, block: DyadicBlock) -> Result<FourierField> {
    let spec = u.spec();
    if block.size() as i64 > 2 * spec.radius() {
        return Err(Error::InvalidParameter(format!(
            "block {} exceeds twice the truncation radius {}",
            block.size(),
            spec.radius()
        )));
    }
    let sup = spec.sup_norm_table();
    Ok(u.map(|i, c| if block.contains_sup(sup[i]) { c } else { Default::default() }))
}

/// `P_{≤N} u`: keeps `|n|_∞ ≤ N`.
pub fn project_low(u: &FourierField, n: i64) -> FourierField {
    let sup = u.spec().sup_norm_table();
    u.map(|i, c| if sup[i] <= n { c } else { Default::default() })
}

/// Keeps the modes inside `cube`.
pub fn project_cube(u: &FourierField, cube: &Cube) -> FourierField {
    let spec = *u.spec();
    u.map(|i, c| {
        if cube.contains(&spec.point(i)) {
            c
        } else {
            Default::default()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;


    fn random_field(spec: LatticeSpec) -> FourierField {
        use num_complex::Complex64;
        let coeffs = (0..spec.len())
            .map(|i| Complex64::new((i as f64 * 0.731).sin(), (i as f64 * 1.37).cos()))
            .collect();
        FourierField::from_coeffs(spec, coeffs).unwrap()
    }

    #[test]
    fn projection_examples() {
        use num_complex::Complex64;
        let spec = LatticeSpec::new(3, 8).unwrap();
        let one = Complex64::new(1.0, 0.0);
        let u = FourierField::constant(spec, one);
        assert_eq!(project_dyadic(&u, DyadicBlock::new(1).unwrap()).unwrap(), u);
        let v = FourierField::single_mode(spec, &[5, 0, 0], one).unwrap();
        assert!(project_dyadic(&v, DyadicBlock::new(4).unwrap()).unwrap().is_zero());
        assert_eq!(project_dyadic(&v, DyadicBlock::new(8).unwrap()).unwrap(), v);
        assert!(project_dyadic(&v, DyadicBlock::new(32).unwrap()).is_err());
    }

    #[test]
    fn projections_partition_and_are_idempotent() {
        let spec = LatticeSpec::new(2, 6).unwrap();
        let u = random_field(spec);
        let parts: Vec<_> = spec
            .blocks()
            .into_iter()
            .map(|b| project_dyadic(&u, b).unwrap())
            .collect();
        for (i, c) in u.coeffs().iter().enumerate() {
            let nonzero: Vec<_> = parts.iter().filter(|p| p.coeffs()[i] != Default::default()).collect();
            assert_eq!(nonzero.len(), 1);
            assert_eq!(nonzero[0].coeffs()[i], *c);
        }
        for (j, b) in spec.blocks().into_iter().enumerate() {
            assert_eq!(project_dyadic(&parts[j], b).unwrap(), parts[j]);
            for (k, p) in parts.iter().enumerate() {
                if k != j {
                    assert!(project_dyadic(p, b).unwrap().is_zero());
                }
            }
        }
    }

    #[test]
    fn bracket_values() {
        assert_eq!(japanese_bracket(&[0, 0, 0]), 1.0);
        assert_eq!(japanese_bracket(&[0]), 1.0);
        assert!((japanese_bracket(&[3, 4, 0]) - 26f64.sqrt()).abs() < 1e-15);
        assert!((japanese_bracket(&[1, 1, 1, 1]) - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn enumeration_is_lexicographic() {
        let spec = LatticeSpec::new(2, 1).unwrap();
        let pts: Vec<_> = spec.points().collect();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0], vec![-1, -1]);
        assert_eq!(pts[1], vec![-1, 0]);
        assert_eq!(pts[3], vec![0, -1]);
        assert_eq!(pts[8], vec![1, 1]);
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(spec.index_of(p), Some(i));
            let neg: Vec<i64> = p.iter().map(|c| -c).collect();
            assert_eq!(spec.index_of(&neg), Some(spec.negated_index(i)));
        }
    }

    #[test]
    fn mode_count_matches_formula() {
        for (d, m) in [(1, 3), (2, 2), (3, 4), (4, 1)] {
            let spec = LatticeSpec::new(d, m).unwrap();
            assert_eq!(spec.len(), (2 * m as usize + 1).pow(d as u32));
            assert_eq!(spec.points().count(), spec.len());
        }
    }

    #[test]
    fn block_membership() {
        assert_eq!(DyadicBlock::containing(&[0, 0, 0]).size(), 1);
        assert_eq!(DyadicBlock::containing(&[1, -1, 0]).size(), 1);
        assert_eq!(DyadicBlock::containing(&[2, 0, 0]).size(), 2);
        assert_eq!(DyadicBlock::containing(&[3, 0, 0]).size(), 4);
        assert_eq!(DyadicBlock::containing(&[5, 0, 0]).size(), 8);
        assert!(!DyadicBlock::new(4).unwrap().contains(&[5, 0, 0]));
        assert!(DyadicBlock::new(6).is_err());
    }

    #[test]
    fn blocks_partition_lattice() {
        let spec = LatticeSpec::new(3, 5).unwrap();
        let blocks = spec.blocks();
        assert_eq!(blocks.iter().map(|b| b.size()).collect::<Vec<_>>(), vec![1, 2, 4, 8]);
        for p in spec.points() {
            assert_eq!(blocks.iter().filter(|b| b.contains(&p)).count(), 1);
        }
    }

    #[test]
    fn block_mode_count() {
        for n in [1u64, 2, 4, 8] {
            let b = DyadicBlock::new(n).unwrap();
            assert_eq!(b.mode_count(3), b.points(3).len() as u128);
        }
        assert_eq!(DyadicBlock::new(2).unwrap().mode_count(3), 98);
    }

    #[test]
    fn single_cube_tiling() {
        let spec = LatticeSpec::new(1, 1).unwrap();
        let dec = cube_decomposition(&spec, 3).unwrap();
        assert_eq!(dec.cubes.len(), 1);
        assert_eq!(dec.adjacency[0], vec![0]);
    }

    #[test]
    fn cube_tiling_count_and_cover() {
        let spec = LatticeSpec::new(2, 3).unwrap();
        let dec = cube_decomposition(&spec, 2).unwrap();
        assert_eq!(dec.cubes.len(), 16);
        for p in spec.points() {
            let hits: Vec<_> = (0..dec.cubes.len()).filter(|&j| dec.cubes[j].contains(&p)).collect();
            assert_eq!(hits.len(), 1);
            assert_eq!(dec.locate(&spec, &p), Some(hits[0]));
        }
    }

    #[test]
    fn adjacency_symmetric_and_bounded() {
        for (d, m) in [(1usize, 20i64), (2, 12), (3, 6)] {
            let spec = LatticeSpec::new(d, m).unwrap();
            for side in 1..=m {
                let dec = cube_decomposition(&spec, side).unwrap();
                for (k, adj) in dec.adjacency.iter().enumerate() {
                    for &j in adj {
                        assert!(dec.adjacency[j].contains(&k));
                    }
                }
                // per axis the partner corners lie in a window of width 6·side - 2
                assert!(dec.max_degree() <= 6usize.pow(d as u32), "d={d} side={side}");
            }
        }
    }

    #[test]
    fn spec_json_carries_convention() {
        let spec = LatticeSpec::new(3, 8).unwrap();
        let js = serde_json::to_string(&spec).unwrap();
        assert_eq!(js, r#"{"d":3,"M":8,"convention":"rect-dyadic-v1"}"#);
        let back: LatticeSpec = serde_json::from_str(&js).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<LatticeSpec>(r#"{"d":3,"M":8,"convention":"x"}"#).is_err());
    }
}
