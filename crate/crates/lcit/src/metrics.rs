//! Evaluation metrics for the benchmark harness: Mann–Whitney AUC, F1 and
//! Type I/II error rates, and Kolmogorov–Smirnov distances used as
//! calibration diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::phi;

/// Ground-truth label of a simulated instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Conditionally independent.
    H0,
    /// Conditionally dependent.
    H1,
}

impl std::str::FromStr for Hypothesis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "H0" => Ok(Hypothesis::H0),
            "H1" => Ok(Hypothesis::H1),
            other => Err(Error::Config(format!("unknown label '{other}', expected H0 or H1"))),
        }
    }
}

impl std::fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Hypothesis::H0 => write!(f, "H0"),
            Hypothesis::H1 => write!(f, "H1"),
        }
    }
}

/// AUC via the Mann–Whitney formulation: P(score_H1 > score_H0) + ½·P(tie).
/// Scores are dependence scores (higher = more evidence against H0).
pub fn auc(scores: &[f64], labels: &[Hypothesis]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("auc: scores and labels differ in length".into()));
    }
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == Hypothesis::H1)
        .map(|(s, _)| *s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == Hypothesis::H0)
        .map(|(s, _)| *s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Empty("auc needs both H0 and H1 examples".into()));
    }
    let mut favorable = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                favorable += 1.0;
            } else if p == n {
                favorable += 0.5;
            }
        }
    }
    Ok(favorable / (pos.len() * neg.len()) as f64)
}

/// F1 (positive class = dependent), Type I and Type II error rates.
/// A rate whose conditioning class is empty is reported as absent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub f1: Option<f64>,
    pub type1: Option<f64>,
    pub type2: Option<f64>,
}

/// `rejected[i]` is true when the tester decided "dependent".
pub fn classification_metrics(rejected: &[bool], labels: &[Hypothesis]) -> Result<ClassificationMetrics> {
    if rejected.len() != labels.len() {
        return Err(Error::Shape("metrics: decisions and labels differ in length".into()));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut tn = 0usize;
    let mut fal_n = 0usize;
    for (&r, &l) in rejected.iter().zip(labels) {
        match (l, r) {
            (Hypothesis::H1, true) => tp += 1,
            (Hypothesis::H1, false) => fal_n += 1,
            (Hypothesis::H0, true) => fp += 1,
            (Hypothesis::H0, false) => tn += 1,
        }
    }
    let n_h0 = fp + tn;
    let n_h1 = tp + fal_n;
    let type1 = (n_h0 > 0).then(|| fp as f64 / n_h0 as f64);
    let type2 = (n_h1 > 0).then(|| fal_n as f64 / n_h1 as f64);
    let f1 = (n_h1 > 0).then(|| {
        if tp == 0 {
            0.0
        } else {
            let precision = tp as f64 / (tp + fp) as f64;
            let recall = tp as f64 / n_h1 as f64;
            2.0 * precision * recall / (precision + recall)
        }
    });
    Ok(ClassificationMetrics { f1, type1, type2 })
}

/// KS distance between an empirical sample and the uniform CDF on [0,1].
pub fn ks_uniform(samples: &[f64]) -> Result<f64> {
    ks_distance(samples, |v| v.clamp(0.0, 1.0))
}

/// KS distance between an empirical sample and the standard normal CDF.
pub fn ks_std_normal(samples: &[f64]) -> Result<f64> {
    ks_distance(samples, phi)
}

fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("KS distance of empty sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        let f = cdf(*v);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(d)
}
