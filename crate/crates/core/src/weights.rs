//! Surface tensions, mobilities and the contact angles tied to them by the
//! force balance at a triple junction.

use crate::error::{FlowError, Result};
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AngleWeights {
    pub gamma: [f64; 3],
    pub beta: [f64; 3],
    /// `theta[k]` is the angle between the two sheets other than `k`.
    pub theta: [f64; 3],
    pub s: [f64; 3],
    pub c: [f64; 3],
}

impl AngleWeights {
    pub fn from_gamma(gamma: [f64; 3], beta: [f64; 3]) -> Result<Self> {
        check_positive("beta", &beta)?;
        let theta = derive_angles(gamma)?;
        Ok(Self::assemble(gamma, beta, theta))
    }

    /// Tensions are recovered up to scale; they are normalised to mean one.
    pub fn from_theta(theta: [f64; 3], beta: [f64; 3]) -> Result<Self> {
        check_positive("beta", &beta)?;
        if theta.iter().any(|t| !(*t > 0.0 && *t < PI)) {
            return Err(FlowError::InvalidWeights(format!(
                "angles {theta:?} must lie in (0, pi)"
            )));
        }
        let sum: f64 = theta.iter().sum();
        if (sum - 2.0 * PI).abs() > 1e-12 {
            return Err(FlowError::InvalidWeights(format!(
                "angles sum to {sum}, expected 2 pi"
            )));
        }
        let sines = theta.map(f64::sin);
        let mean = sines.iter().sum::<f64>() / 3.0;
        let gamma = sines.map(|s| s / mean);
        Ok(Self::assemble(gamma, beta, theta))
    }

    fn assemble(gamma: [f64; 3], beta: [f64; 3], theta: [f64; 3]) -> Self {
        Self {
            gamma,
            beta,
            theta,
            s: theta.map(f64::sin),
            c: theta.map(f64::cos),
        }
    }

    pub fn symmetric() -> Self {
        Self::from_gamma([1.0; 3], [1.0; 3]).expect("unit weights are valid")
    }

    pub fn gamma_sum(&self) -> f64 {
        self.gamma.iter().sum()
    }

    pub fn max_beta(&self) -> f64 {
        self.beta.iter().cloned().fold(f64::MIN, f64::max)
    }

    /// Largest deviation from the angle-sum and Young's-law invariants.
    pub fn invariant_defect(&self) -> f64 {
        let sum = (self.theta.iter().sum::<f64>() - 2.0 * PI).abs();
        let r: Vec<f64> = (0..3).map(|i| self.s[i] / self.gamma[i]).collect();
        let young = (r[0] - r[1]).abs().max((r[1] - r[2]).abs());
        sum.max(young)
    }
}

fn check_positive(name: &str, v: &[f64; 3]) -> Result<()> {
    if v.iter().all(|x| x.is_finite() && *x > 0.0) {
        Ok(())
    } else {
        Err(FlowError::InvalidWeights(format!("{name} {v:?} must be positive")))
    }
}

/// Contact angles from tensions: the conormals weighted by the tensions
/// close into a triangle, so each angle follows from the law of cosines.
pub fn derive_angles(gamma: [f64; 3]) -> Result<[f64; 3]> {
    if gamma.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(FlowError::DegenerateTensions(gamma));
    }
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        if gamma[i] >= gamma[j] + gamma[k] {
            return Err(FlowError::DegenerateTensions(gamma));
        }
    }
    let mut theta = [0.0; 3];
    for (k, t) in theta.iter_mut().enumerate() {
        let (i, j) = ((k + 1) % 3, (k + 2) % 3);
        let c = (gamma[k] * gamma[k] - gamma[i] * gamma[i] - gamma[j] * gamma[j]) / (2.0 * gamma[i] * gamma[j]);
        *t = c.clamp(-1.0, 1.0).acos();
    }
    if theta.iter().any(|x| !(*x > 0.0 && *x < PI)) {
        return Err(FlowError::DegenerateTensions(gamma));
    }
    Ok(theta)
}
