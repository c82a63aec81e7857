//! Special functions and numerically safe primitives shared by the rest of
//! the crate: the standard normal CDF and its inverse, Gaussian log-density,
//! and a stable log-sum-exp.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837877066409345483560659472811;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// A real number constrained to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Domain(format!("probability out of [0,1]: {value}")));
        }
        Ok(Probability(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Standard normal CDF Φ(x), accurate to well below 1e-9 absolute error.
pub fn std_normal_cdf(x: f64) -> Result<Probability> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("non-finite CDF argument: {x}")));
    }
    Probability::new(phi(x).clamp(0.0, 1.0))
}

/// Unchecked Φ(x) for internal hot paths.
pub(crate) fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal density φ(x).
pub(crate) fn phi_pdf(x: f64) -> f64 {
    (-0.5 * x * x - 0.5 * LN_2PI).exp()
}

/// Standard normal quantile Φ⁻¹(p) for p strictly inside (0, 1).
///
/// Rational initial guess refined by a Newton step on Φ; callers that may hold
/// saturated probabilities must clamp before calling.
pub fn std_normal_icdf(p: Probability) -> Result<f64> {
    let p = p.get();
    if p <= 0.0 || p >= 1.0 {
        return Err(Error::Domain(format!(
            "quantile argument must lie strictly in (0,1): {p}"
        )));
    }
    let mut x = icdf_rational(p);
    // One Newton step: x <- x - (Φ(x) - p)/φ(x).
    let err = phi(x) - p;
    let pdf = phi_pdf(x);
    if pdf > 0.0 {
        x -= err / pdf;
    }
    Ok(x)
}

/// Gaussian log-density log N(x; mean, variance).
pub fn normal_logpdf(x: f64, mean: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::Domain(format!("variance must be positive: {variance}")));
    }
    let diff = x - mean;
    Ok(-0.5 * (LN_2PI + variance.ln()) - diff * diff / (2.0 * variance))
}

/// log Σ exp(log_weights[i] + values[i]), stable for large magnitudes.
pub fn log_sum_exp(values: &[f64], log_weights: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("log_sum_exp on empty input".into()));
    }
    if values.len() != log_weights.len() {
        return Err(Error::Shape(format!(
            "log_sum_exp lengths differ: {} vs {}",
            values.len(),
            log_weights.len()
        )));
    }
    let mut max = f64::NEG_INFINITY;
    for (v, lw) in values.iter().zip(log_weights) {
        let s = v + lw;
        if s > max {
            max = s;
        }
    }
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = values
        .iter()
        .zip(log_weights)
        .map(|(v, lw)| (v + lw - max).exp())
        .sum();
    Ok(max + sum.ln())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population (1/n) variance.
pub fn var_pop(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Population (1/n) covariance.
pub fn cov_pop(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.len() as f64
}

// Rational Chebyshev approximation of erfc after W. J. Cody (1969), as in
// the netlib CALERF routine. Double-precision coefficients.
fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        return 1.0 - erf_small(x);
    }
    let result = if y <= 4.0 {
        const C: [f64; 9] = [
            5.64188496988670089e-1,
            8.88314979438837594e0,
            6.61191906371416295e1,
            2.98635138197400131e2,
            8.81952221241769090e2,
            1.71204761263407058e3,
            2.05107837782607147e3,
            1.23033935479799725e3,
            2.15311535474403846e-8,
        ];
        const D: [f64; 8] = [
            1.57449261107098347e1,
            1.17693950891312499e2,
            5.37181101862009858e2,
            1.62138957456669019e3,
            3.29079923573345963e3,
            4.36261909014324716e3,
            3.43936767414372164e3,
            1.23033935480374942e3,
        ];
        let mut xnum = C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + C[i]) * y;
            xden = (xden + D[i]) * y;
        }
        scaled_exp(y) * (xnum + C[7]) / (xden + D[7])
    } else if y < 26.5 {
        const SQRPI: f64 = 5.6418958354775628695e-1;
        const P: [f64; 6] = [
            3.05326634961232344e-1,
            3.60344899949804439e-1,
            1.25781726111229246e-1,
            1.60837851487422766e-2,
            6.58749161529837803e-4,
            1.63153871373020978e-2,
        ];
        const Q: [f64; 5] = [
            2.56852019228982242e0,
            1.87295284992346047e0,
            5.27905102951428412e-1,
            6.05183413124413191e-2,
            2.33520497626869185e-3,
        ];
        let z = 1.0 / (y * y);
        let mut xnum = P[5] * z;
        let mut xden = z;
        for i in 0..4 {
            xnum = (xnum + P[i]) * z;
            xden = (xden + Q[i]) * z;
        }
        let mut r = z * (xnum + P[4]) / (xden + Q[4]);
        r = (SQRPI - r) / y;
        scaled_exp(y) * r
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

// exp(-y^2) split to avoid premature underflow/rounding, per CALERF.
fn scaled_exp(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

fn erf_small(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    let z = x * x;
    let mut xnum = A[4] * z;
    let mut xden = z;
    for i in 0..3 {
        xnum = (xnum + A[i]) * z;
        xden = (xden + B[i]) * z;
    }
    x * (xnum + A[3]) / (xden + B[3])
}

// Acklam's rational approximation to the normal quantile, |rel err| < 1.15e-9.
fn icdf_rational(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
