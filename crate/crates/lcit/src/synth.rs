//! Synthetic benchmark generator: post-nonlinear additive noise model
//! instances with known H0/H1 labels.
//!
//!   H0: Z := f(X⊗a + E_f),  Y := g(⟨Z,b⟩ + E_g)
//!   H1: Z := f(X⊗a + E_f),  Y := g(⟨Z,b⟩ + cX + E_g)
//!
//! with X := 2·E_X, one shared noise family per instance, a, b ~ U(−1,1)ᵈ,
//! c ~ U(1,2), and f, g drawn from a small library of scalar maps. Function
//! inputs are standardized before f or g is applied.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::standardize_column;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::Hypothesis;
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Uniform,
    Gaussian,
    Laplace,
}

impl NoiseFamily {
    pub const ALL: [NoiseFamily; 3] = [
        NoiseFamily::Uniform,
        NoiseFamily::Gaussian,
        NoiseFamily::Laplace,
    ];

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseFamily::Uniform => rng.gen_range(-1.0..1.0),
            NoiseFamily::Gaussian => Normal::new(0.0, 1.0).unwrap().sample(rng),
            NoiseFamily::Laplace => {
                // Inverse-CDF sampling of Laplace(0, 1).
                let u: f64 = rng.gen_range(-0.5..0.5);
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }
}

/// The scalar function library: {x, x², x³, tanh x, guarded x⁻¹, e⁻ˣ,
/// sigmoid}. The reciprocal is guarded as 1/(x + 0.5·sign(x)) since inputs
/// are standardized and would otherwise cross the pole.
pub const FUNCTION_COUNT: usize = 7;

pub fn function_library(id: usize) -> Result<fn(f64) -> f64> {
    match id {
        0 => Ok(|x| x),
        1 => Ok(|x| x * x),
        2 => Ok(|x| x * x * x),
        3 => Ok(f64::tanh),
        4 => Ok(|x| 1.0 / (x + 0.5 * if x >= 0.0 { 1.0 } else { -1.0 })),
        5 => Ok(|x| (-x).exp()),
        6 => Ok(|x| 1.0 / (1.0 + (-x).exp())),
        other => Err(Error::Config(format!("function id {other} out of range 0..{FUNCTION_COUNT}"))),
    }
}

pub fn function_name(id: usize) -> &'static str {
    ["linear", "square", "cube", "tanh", "reciprocal", "neg_exp", "sigmoid"]
        .get(id)
        .copied()
        .unwrap_or("unknown")
}

/// Realized configuration of one simulated instance; fully determines the
/// dataset together with the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub d: usize,
    pub label: Hypothesis,
    pub noise_family: NoiseFamily,
    pub f_id: usize,
    pub g_id: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    pub seed: u64,
}

impl SimConfig {
    /// Draw a random instance configuration for the given cell.
    pub fn sample(n: usize, d: usize, label: Hypothesis, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Config("simulation needs n >= 1 and d >= 1".into()));
        }
        let mut rng = rng_from(seed, 0xC0F1);
        let noise_family = NoiseFamily::ALL[rng.gen_range(0..3)];
        let f_id = rng.gen_range(0..FUNCTION_COUNT);
        let g_id = rng.gen_range(0..FUNCTION_COUNT);
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = match label {
            Hypothesis::H0 => None,
            Hypothesis::H1 => Some(rng.gen_range(1.0..2.0)),
        };
        Ok(SimConfig {
            n,
            d,
            label,
            noise_family,
            f_id,
            g_id,
            a,
            b,
            c,
            seed,
        })
    }
}

/// Generate one dataset from a realized configuration; deterministic given
/// the seed.
pub fn generate_instance(config: &SimConfig) -> Result<Dataset> {
    let SimConfig { n, d, .. } = *config;
    if n == 0 || d == 0 {
        return Err(Error::Config("simulation needs n >= 1 and d >= 1".into()));
    }
    if config.a.len() != d || config.b.len() != d {
        return Err(Error::Shape("coefficient vectors must have length d".into()));
    }
    if config.label == Hypothesis::H1 && config.c.is_none() {
        return Err(Error::Config("H1 instance is missing its c coefficient".into()));
    }
    let f = function_library(config.f_id)?;
    let g = function_library(config.g_id)?;
    let mut rng = rng_from(config.seed, 0xDA7A5E7);

    let x: Vec<f64> = (0..n).map(|_| 2.0 * config.noise_family.sample(&mut rng)).collect();

    // Z = f(X⊗a + E_f), column by column, standardizing each inner column
    // before f.
    let mut z = Array2::zeros((n, d));
    for j in 0..d {
        let mut col: Vec<f64> = x
            .iter()
            .map(|xi| xi * config.a[j] + config.noise_family.sample(&mut rng))
            .collect();
        standardize_column(&mut col)
            .map_err(|_| Error::Divergence("degenerate inner column in generator".into()))?;
        for (i, v) in col.into_iter().enumerate() {
            z[[i, j]] = f(v);
        }
    }

    // Y = g(⟨Z,b⟩ [+ cX] + E_g) with the inner sum standardized before g.
    let c = config.c.unwrap_or(0.0);
    let mut inner: Vec<f64> = (0..n)
        .map(|i| {
            let dot: f64 = (0..d).map(|j| z[[i, j]] * config.b[j]).sum();
            dot + c * x[i] + config.noise_family.sample(&mut rng)
        })
        .collect();
    standardize_column(&mut inner)
        .map_err(|_| Error::Divergence("degenerate response column in generator".into()))?;
    let y: Vec<f64> = inner.into_iter().map(g).collect();

    Dataset::new(x, y, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn library_known_values() {
        assert_abs_diff_eq!(function_library(3).unwrap()(0.0), 0.0);
        assert_abs_diff_eq!(function_library(6).unwrap()(0.0), 0.5);
        assert_abs_diff_eq!(function_library(2).unwrap()(2.0), 8.0);
        assert!(function_library(7).is_err());
    }

    #[test]
    fn reciprocal_guard_avoids_pole() {
        let f = function_library(4).unwrap();
        for x in [-3.0, -0.4, -1e-9, 0.0, 1e-9, 0.4, 3.0] {
            assert!(f(x).is_finite(), "reciprocal blew up at {x}");
            assert!(f(x).abs() <= 2.0);
        }
    }

    #[test]
    fn h1_coefficient_lies_in_band() {
        for seed in 0..50 {
            let cfg = SimConfig::sample(10, 3, Hypothesis::H1, seed).unwrap();
            let c = cfg.c.unwrap();
            assert!((1.0..2.0).contains(&c), "c = {c}");
        }
        assert!(SimConfig::sample(10, 3, Hypothesis::H0, 1).unwrap().c.is_none());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SimConfig::sample(50, 4, Hypothesis::H1, 11).unwrap();
        let a = generate_instance(&cfg).unwrap();
        let b = generate_instance(&cfg).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.z, b.z);
    }

    #[test]
    fn linear_h0_cell_is_accepted_by_partial_correlation() {
        // f = g = identity, uniform noise, d = 1: X ⊥ Y | Z by construction.
        let mut accepted = 0;
        let runs = 100;
        for seed in 0..runs {
            let mut cfg = SimConfig::sample(400, 1, Hypothesis::H0, seed).unwrap();
            cfg.f_id = 0;
            cfg.g_id = 0;
            cfg.noise_family = NoiseFamily::Uniform;
            let ds = generate_instance(&cfg).unwrap();
            let res =
                crate::independence::partial_correlation_test(&ds.x, &ds.y, &ds.z, 0.05).unwrap();
            if res.decision == crate::independence::Decision::Independent {
                accepted += 1;
            }
        }
        assert!(accepted * 10 >= runs * 9, "accepted only {accepted}/{runs}");
    }

    #[test]
    fn linear_h0_partial_correlation_is_centered() {
        let mut rs = Vec::new();
        for seed in 0..200 {
            let mut cfg = SimConfig::sample(300, 1, Hypothesis::H0, seed).unwrap();
            cfg.f_id = 0;
            cfg.g_id = 0;
            let ds = generate_instance(&cfg).unwrap();
            let res =
                crate::independence::partial_correlation_test(&ds.x, &ds.y, &ds.z, 0.05).unwrap();
            rs.push(res.correlation);
        }
        let mean_r = crate::numerics::mean(&rs);
        assert!(mean_r.abs() <= 0.02, "mean partial correlation {mean_r}");
    }
}
