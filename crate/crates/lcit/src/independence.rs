//! Hypothesis tests: the latent-representation conditional independence test
//! (train two conditional flows, test the latents for zero correlation with a
//! closed-form Fisher-z p-value) and a classical partial-correlation
//! baseline.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{preprocess, Dataset};
use crate::error::{Error, Result};
use crate::flow::{train_cnf, FlowParameters, TrainConfig, TrainReport};
use crate::metrics::ks_std_normal;
use crate::numerics::{cov_pop, phi, var_pop, Probability};
use crate::rng::derive_seed;

const R_CLAMP: f64 = 1.0 - 1e-12;
/// Ridge added to the baseline's normal equations.
const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Independent,
    Dependent,
}

/// Outcome of a single independence test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub p_value: Probability,
    pub statistic: f64,
    pub correlation: f64,
    pub n: usize,
    pub alpha: f64,
    pub decision: Decision,
}

/// Training reports and latent normality diagnostics from one LCIT run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LcitDiagnostics {
    pub report_x: TrainReport,
    pub report_y: TrainReport,
    /// KS distance of each latent series to the standard normal.
    pub ks_x: f64,
    pub ks_y: f64,
}

fn fisher_from_r(r: f64, n: usize, dof_drop: usize, alpha: f64) -> Result<TestResult> {
    if n < dof_drop + 1 {
        return Err(Error::TooFewSamples { got: n, min: dof_drop + 1 });
    }
    let r_clamped = r.clamp(-R_CLAMP, R_CLAMP);
    let t = 0.5 * ((1.0 + r_clamped) / (1.0 - r_clamped)).ln();
    let scale = ((n - dof_drop) as f64).sqrt();
    let p = (2.0 * (1.0 - phi(t.abs() * scale))).clamp(0.0, 1.0);
    // Reject iff p <= alpha.
    let decision = if p > alpha {
        Decision::Independent
    } else {
        Decision::Dependent
    };
    Ok(TestResult {
        p_value: Probability::new(p)?,
        statistic: t,
        correlation: r_clamped,
        n,
        alpha,
        decision,
    })
}

/// Fisher-z test of zero correlation between two latent series.
/// Null scale is 1/√(n−3); rejects when p ≤ alpha.
pub fn fisher_z_pvalue(eps_x: &[f64], eps_y: &[f64], alpha: f64) -> Result<TestResult> {
    if eps_x.len() != eps_y.len() {
        return Err(Error::Shape("latent series lengths differ".into()));
    }
    let n = eps_x.len();
    if n < 4 {
        return Err(Error::TooFewSamples { got: n, min: 4 });
    }
    let vx = var_pop(eps_x);
    let vy = var_pop(eps_y);
    if vx <= 0.0 || vy <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let r = cov_pop(eps_x, eps_y) / (vx.sqrt() * vy.sqrt());
    fisher_from_r(r, n, 3, alpha)
}

/// The full latent-representation CI test: preprocess, train a flow for x|z
/// and y|z with independent seeds, infer latents, then Fisher-z test.
pub fn lcit(
    x: &[f64],
    y: &[f64],
    z: &Array2<f64>,
    alpha: f64,
    config: &TrainConfig,
) -> Result<(TestResult, LcitDiagnostics)> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must be in (0,1), got {alpha}")));
    }
    if x.len() < 20 {
        return Err(Error::TooFewSamples { got: x.len(), min: 20 });
    }
    let dataset = preprocess(Dataset::new(x.to_vec(), y.to_vec(), z.clone())?)?;

    let mut config_x = config.clone();
    config_x.seed = derive_seed(config.seed, 0x0f10_0001);
    let mut config_y = config.clone();
    config_y.seed = derive_seed(config.seed, 0x0f10_0002);

    let (flow_x, report_x) = train_cnf(&dataset.x, &dataset.z, &config_x)?;
    let (flow_y, report_y) = train_cnf(&dataset.y, &dataset.z, &config_y)?;

    let (result, ks_x, ks_y) =
        latent_test(&dataset.x, &dataset.y, &dataset.z, &flow_x, &flow_y, alpha)?;
    Ok((
        result,
        LcitDiagnostics {
            report_x,
            report_y,
            ks_x,
            ks_y,
        },
    ))
}

/// Test hook: run the latent-inference and Fisher-z stages with externally
/// supplied flows and no preprocessing.
pub fn latent_test(
    x: &[f64],
    y: &[f64],
    z: &Array2<f64>,
    flow_x: &FlowParameters,
    flow_y: &FlowParameters,
    alpha: f64,
) -> Result<(TestResult, f64, f64)> {
    let lat_x = flow_x.infer_latents(x, z)?;
    let lat_y = flow_y.infer_latents(y, z)?;
    let result = fisher_z_pvalue(&lat_x.epsilon, &lat_y.epsilon, alpha)?;
    Ok((
        result,
        ks_std_normal(&lat_x.epsilon)?,
        ks_std_normal(&lat_y.epsilon)?,
    ))
}

/// Classical partial-correlation baseline: correlate least-squares residuals
/// of x and y on [1, Z], with a √(n−d−3) degrees-of-freedom correction.
pub fn partial_correlation_test(
    x: &[f64],
    y: &[f64],
    z: &Array2<f64>,
    alpha: f64,
) -> Result<TestResult> {
    let n = x.len();
    let d = z.ncols();
    if y.len() != n || z.nrows() != n {
        return Err(Error::Shape("partial correlation inputs differ in length".into()));
    }
    if n <= d + 3 {
        return Err(Error::TooFewSamples { got: n, min: d + 4 });
    }
    let rx = residualize(x, z)?;
    let ry = residualize(y, z)?;
    let vx = var_pop(&rx);
    let vy = var_pop(&ry);
    if vx <= 0.0 || vy <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let r = cov_pop(&rx, &ry) / (vx.sqrt() * vy.sqrt());
    fisher_from_r(r, n, d + 3, alpha)
}

// Least-squares residuals of v on [1, z] via ridge-regularized normal
// equations solved by Cholesky.
fn residualize(v: &[f64], z: &Array2<f64>) -> Result<Vec<f64>> {
    let n = v.len();
    let d = z.ncols();
    let p = d + 1;
    // Gram matrix of the design [1, z].
    let mut gram = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for i in 0..n {
        let mut row = Vec::with_capacity(p);
        row.push(1.0);
        for j in 0..d {
            row.push(z[[i, j]]);
        }
        for a in 0..p {
            rhs[a] += row[a] * v[i];
            for b in a..p {
                gram[a][b] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[a][b] = gram[b][a];
        }
        gram[a][a] += RIDGE;
    }
    let beta = cholesky_solve(&gram, &rhs).ok_or(Error::RankDeficient)?;
    let mut res = Vec::with_capacity(n);
    for i in 0..n {
        let mut fit = beta[0];
        for j in 0..d {
            fit += beta[j + 1] * z[[i, j]];
        }
        res.push(v[i] - fit);
    }
    Ok(res)
}

fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let p = b.len();
    let mut l = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    // Forward then backward substitution.
    let mut yv = vec![0.0; p];
    for i in 0..p {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i][k] * yv[k];
        }
        yv[i] = sum / l[i][i];
    }
    let mut xv = vec![0.0; p];
    for i in (0..p).rev() {
        let mut sum = yv[i];
        for k in i + 1..p {
            sum -= l[k][i] * xv[k];
        }
        xv[i] = sum / l[i][i];
    }
    Some(xv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use crate::rng::rng_from;

    #[test]
    fn zero_correlation_gives_unit_pvalue() {
        // Exactly uncorrelated series by symmetry.
        let eps_x = vec![1.0, -1.0, 1.0, -1.0];
        let eps_y = vec![1.0, 1.0, -1.0, -1.0];
        let res = fisher_z_pvalue(&eps_x, &eps_y, 0.05).unwrap();
        assert_abs_diff_eq!(res.statistic, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(res.p_value.get(), 1.0, epsilon = 1e-14);
        assert_eq!(res.decision, Decision::Independent);
    }

    #[test]
    fn boundary_pvalue_case() {
        // n = 403, r = 0.09759: t = atanh(r) ≈ 0.09790, z = 20t, p ≈ 0.050.
        let res = fisher_from_r(0.09759, 403, 3, 0.05).unwrap();
        assert_abs_diff_eq!(res.statistic, 0.09790, epsilon = 2e-5);
        assert_abs_diff_eq!(res.p_value.get(), 0.050, epsilon = 5e-4);
    }

    #[test]
    fn perfect_dependence_clamps() {
        let eps: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let res = fisher_z_pvalue(&eps, &eps, 0.05).unwrap();
        assert!(res.correlation > 0.999999);
        assert!(res.p_value.get() < 1e-12);
        assert_eq!(res.decision, Decision::Dependent);
    }

    #[test]
    fn small_and_degenerate_inputs_error() {
        assert!(fisher_z_pvalue(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 0.05).is_err());
        let constant = vec![1.0; 10];
        let varying: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(
            fisher_z_pvalue(&constant, &varying, 0.05),
            Err(Error::ZeroVariance)
        ));
    }

    #[test]
    fn fisher_is_symmetric_and_affine_invariant() {
        let mut rng = rng_from(1, 9);
        let a: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ab = fisher_z_pvalue(&a, &b, 0.05).unwrap();
        let ba = fisher_z_pvalue(&b, &a, 0.05).unwrap();
        assert_abs_diff_eq!(ab.p_value.get(), ba.p_value.get(), epsilon = 1e-15);

        let scaled: Vec<f64> = a.iter().map(|v| 3.5 * v + 2.0).collect();
        let sc = fisher_z_pvalue(&scaled, &b, 0.05).unwrap();
        assert_abs_diff_eq!(ab.p_value.get(), sc.p_value.get(), epsilon = 1e-12);
    }

    #[test]
    fn null_pvalues_are_uniform() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut ps = Vec::new();
        for seed in 0..1000u64 {
            let mut rng = rng_from(seed, 31);
            let a: Vec<f64> = (0..40).map(|_| normal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..40).map(|_| normal.sample(&mut rng)).collect();
            ps.push(fisher_z_pvalue(&a, &b, 0.05).unwrap().p_value.get());
        }
        let ks = crate::metrics::ks_uniform(&ps).unwrap();
        assert!(ks <= 0.05, "KS distance {ks}");
    }

    #[test]
    fn pcorr_with_no_regressors_matches_plain_fisher() {
        let mut rng = rng_from(2, 9);
        let a: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z = Array2::zeros((60, 0));
        let pc = partial_correlation_test(&a, &b, &z, 0.05).unwrap();
        let fz = fisher_z_pvalue(&a, &b, 0.05).unwrap();
        // The intercept-only regression removes the mean; r is identical.
        assert_abs_diff_eq!(pc.correlation, fz.correlation, epsilon = 1e-9);
        assert_abs_diff_eq!(pc.p_value.get(), fz.p_value.get(), epsilon = 1e-9);
    }

    #[test]
    fn pcorr_screens_off_shared_regressor() {
        // Y = Z1, X = Z1 + noise: independent given Z in >= 90% of runs.
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut accepted = 0;
        let runs = 50;
        for seed in 0..runs {
            let mut rng = rng_from(seed, 13);
            let n = 300;
            let z1: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let x: Vec<f64> = z1.iter().map(|v| v + 0.5 * normal.sample(&mut rng)).collect();
            let y = z1.clone();
            // Add jitter to y so the residual variance is nonzero.
            let y: Vec<f64> = y.iter().map(|v| v + 1e-6 * normal.sample(&mut rng)).collect();
            let z = Array2::from_shape_vec((n, 1), z1).unwrap();
            let res = partial_correlation_test(&x, &y, &z, 0.05).unwrap();
            if res.decision == Decision::Independent {
                accepted += 1;
            }
        }
        assert!(accepted * 10 >= runs * 9, "accepted only {accepted}/{runs}");
    }

    #[test]
    fn pcorr_null_calibration_monte_carlo() {
        // Jointly Gaussian X ⊥ Y | Z: p-values approximately uniform.
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut ps = Vec::new();
        for seed in 0..200u64 {
            let mut rng = rng_from(seed, 17);
            let n = 200;
            let z1: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let x: Vec<f64> = z1.iter().map(|v| 0.8 * v + normal.sample(&mut rng)).collect();
            let y: Vec<f64> = z1.iter().map(|v| -0.6 * v + normal.sample(&mut rng)).collect();
            let z = Array2::from_shape_vec((n, 1), z1).unwrap();
            ps.push(partial_correlation_test(&x, &y, &z, 0.05).unwrap().p_value.get());
        }
        let ks = crate::metrics::ks_uniform(&ps).unwrap();
        // KS critical value at p=0.01 for n=200 is ~0.115.
        assert!(ks <= 0.115, "KS distance {ks}");
    }

    #[test]
    fn lcit_detects_marginal_duplication() {
        let mut rng = rng_from(3, 9);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 500;
        let x: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let y = x.clone();
        let z = Array2::zeros((n, 0));
        let config = TrainConfig {
            seed: 3,
            components: 8,
            max_epochs: 30,
            ..TrainConfig::default()
        };
        let (res, _) = lcit(&x, &y, &z, 0.05, &config).unwrap();
        assert_eq!(res.decision, Decision::Dependent);
        assert!(res.p_value.get() < 1e-6, "p = {}", res.p_value.get());
    }

    #[test]
    fn lcit_rejects_constant_column_before_training() {
        let x = vec![1.0; 30];
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let z = Array2::zeros((30, 0));
        let err = lcit(&x, &y, &z, 0.05, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ConstantColumn(_)));
    }

    #[test]
    fn result_json_schema_is_stable() {
        let res = fisher_from_r(0.2, 100, 3, 0.05).unwrap();
        let json = serde_json::to_value(&res).unwrap();
        for key in ["p_value", "statistic", "correlation", "n", "alpha", "decision"] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(json["decision"], "dependent");
    }
}
