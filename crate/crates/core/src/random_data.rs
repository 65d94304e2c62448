//! Gaussian-randomized initial data `φ^ω = Σ g_n(ω) ⟨n⟩^{-(d-1-α)} e^{in·x}`
//! and its deterministic profile.
//!
//! `g_n` are standard complex Gaussians, `E g_n = 0`, `E|g_n|² = 1`, with
//! independent real and imaginary parts of variance 1/2. Each coefficient is
//! drawn from its own ChaCha8 stream selected by a hash of the lattice point,
//! so a draw depends only on `(seed, n)`: it does not change with `M`, with
//! enumeration order or with threading.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::field::{torus_volume, FourierField, ModelParams};
use crate::lattice::{bracket_from_norm_sq, LatticeSpec};

/// Recorded in manifests; bump when the draw procedure changes.
pub const GENERATOR_TAG: &str = "chacha8-point-stream-v1";

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn point_stream(n: &[i64]) -> u64 {
    n.iter()
        .fold(splitmix(n.len() as u64), |h, &c| splitmix(h ^ c as u64))
}

/// A seed for an auxiliary stream, independent of the data draw for `seed`.
pub fn derived_seed(seed: u64, salt: u64) -> u64 {
    splitmix(splitmix(seed) ^ splitmix(salt.wrapping_add(0x5EED)))
}

/// The standard complex Gaussian `g_n` for `seed`.
pub fn gaussian_at(seed: u64, n: &[i64]) -> Complex64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(point_stream(n));
    let x: f64 = StandardNormal.sample(&mut rng);
    let y: f64 = StandardNormal.sample(&mut rng);
    Complex64::new(x, y) * std::f64::consts::FRAC_1_SQRT_2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDraw {
    /// `None` for the all-zero draw.
    pub seed: Option<u64>,
    pub spec: LatticeSpec,
    pub g: Vec<Complex64>,
}

impl GaussianDraw {
    pub fn new(spec: LatticeSpec, seed: u64) -> Self {
        let mut n = vec![0; spec.dim()];
        let g = (0..spec.len())
            .map(|i| {
                spec.point_into(i, &mut n);
                gaussian_at(seed, &n)
            })
            .collect();
        GaussianDraw {
            seed: Some(seed),
            spec,
            g,
        }
    }

    /// Every coefficient forced to zero.
    pub fn zero(spec: LatticeSpec) -> Self {
        GaussianDraw {
            seed: None,
            spec,
            g: vec![Complex64::default(); spec.len()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomField {
    pub params: ModelParams,
    pub draw: GaussianDraw,
    pub field: FourierField,
}

/// `⟨n⟩^{-exponent}` for every mode.
pub fn bracket_weights(spec: &LatticeSpec, exponent: f64) -> Vec<f64> {
    spec.norm_sq_table()
        .into_iter()
        .map(|q| bracket_from_norm_sq(q).powf(-exponent))
        .collect()
}

/// Multiplies draw coefficients by `⟨n⟩^{-exponent}`.
pub fn weighted_field(draw: &GaussianDraw, exponent: f64) -> FourierField {
    let w = bracket_weights(&draw.spec, exponent);
    let coeffs = draw.g.iter().zip(&w).map(|(g, w)| g * *w).collect();
    FourierField::from_coeffs(draw.spec, coeffs).expect("draw matches its lattice")
}

/// Randomized data for `params` and `seed`. Inadmissible parameters are
/// accepted; callers decide whether to warn.
pub fn sample(params: &ModelParams, seed: u64) -> RandomField {
    let draw = GaussianDraw::new(params.lattice(), seed);
    from_draw(params, draw)
}

pub fn from_draw(params: &ModelParams, draw: GaussianDraw) -> RandomField {
    let field = weighted_field(&draw, params.decay_exponent());
    RandomField {
        params: params.clone(),
        draw,
        field,
    }
}

/// `Σ ⟨n⟩^{-(d-1-α)} e^{in·x}`.
pub fn deterministic_profile(params: &ModelParams) -> FourierField {
    let spec = params.lattice();
    let coeffs = bracket_weights(&spec, params.decay_exponent())
        .into_iter()
        .map(|w| Complex64::new(w, 0.0))
        .collect();
    FourierField::from_coeffs(spec, coeffs).expect("weights match the lattice")
}

/// `E ‖φ^ω‖²_{H^σ} = (2π)^d Σ ⟨n⟩^{2σ - 2·exponent}` over the lattice.
pub fn expected_hs_norm_sq(spec: &LatticeSpec, sigma: f64, exponent: f64) -> f64 {
    let sum: f64 = spec
        .norm_sq_table()
        .into_iter()
        .map(|q| bracket_from_norm_sq(q).powf(2.0 * sigma - 2.0 * exponent))
        .sum();
    torus_volume(spec.dim()) * sum
}
