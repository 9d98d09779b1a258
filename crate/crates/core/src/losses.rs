//! Forward-only terms of the classification + heatmap objective.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_GAMMA: f64 = 100.0;
pub const DEFAULT_LOG_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist {
    probs: Vec<f64>,
}

impl ProbDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("ProbDist", "distribution has no classes"));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid("ProbDist", format!("probability {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("ProbDist", format!("probabilities sum to {total}")));
        }
        Ok(ProbDist { probs })
    }

    pub fn one_hot(classes: usize, k: usize) -> Result<Self> {
        if k >= classes {
            return Err(Error::invalid("ProbDist", format!("class {k} >= {classes}")));
        }
        let mut probs = vec![0.0; classes];
        probs[k] = 1.0;
        ProbDist::new(probs)
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("ProbDist", "distribution has no classes"));
        }
        ProbDist::new(vec![1.0 / classes as f64; classes])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// `−Σ truth_k · ln(max(pred_k, epsilon))`.
pub fn cross_entropy(truth: &ProbDist, pred: &ProbDist, epsilon: f64) -> Result<f64> {
    if truth.probs.len() != pred.probs.len() {
        return Err(Error::invalid(
            "cross_entropy",
            format!("{} classes vs {}", truth.probs.len(), pred.probs.len()),
        ));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(
            "cross_entropy",
            format!("epsilon {epsilon} must be > 0"),
        ));
    }
    Ok(-truth
        .probs
        .iter()
        .zip(&pred.probs)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &p)| t * p.max(epsilon).ln())
        .sum::<f64>())
}

/// Mean squared difference per element.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.check_same_shape(target, "mse")?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(sum / pred.numel() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub hm: f64,
    pub gamma: f64,
    pub total: f64,
}

pub fn multitask(cls: f64, hm: f64, gamma: f64) -> Result<LossBreakdown> {
    if !cls.is_finite() || !hm.is_finite() || !gamma.is_finite() {
        return Err(Error::invalid(
            "multitask",
            format!("non-finite term: cls={cls} hm={hm} gamma={gamma}"),
        ));
    }
    Ok(LossBreakdown {
        cls,
        hm,
        gamma,
        total: cls + gamma * hm,
    })
}
