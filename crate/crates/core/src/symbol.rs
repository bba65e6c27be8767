//! Boundary-symbol checks for the linearized junction problem: the decaying
//! roots of the half-space symbol, the boundary determinant, quasi-random
//! sweeps over frequencies and coefficients, and a discrete version of the
//! equivalent half-line ODE problem with its energy identity.

use crate::error::{FlowError, Result};
use crate::quasi::Halton;
use crate::solver::{BorderedSolver, Triplets};
use crate::weights::AngleWeights;
use nalgebra::{Complex, DMatrix, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

pub type C64 = Complex<f64>;

/// Surface tensions and mobilities of the three sheets. Any positive values
/// are accepted; Young's law is not required here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub gamma: [f64; 3],
    pub beta: [f64; 3],
}

impl Coefficients {
    pub fn validate(&self) -> Result<()> {
        if self.gamma.iter().chain(&self.beta).all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(FlowError::InvalidWeights(format!("coefficients must be positive: {self:?}")))
        }
    }
}

impl From<&AngleWeights> for Coefficients {
    fn from(w: &AngleWeights) -> Self {
        Coefficients {
            gamma: w.gamma,
            beta: w.beta,
        }
    }
}

/// One frequency point with its roots and boundary determinant.
#[derive(Debug, Clone)]
pub struct SymbolSample {
    pub p: C64,
    pub xi_prime: Vec<f64>,
    /// Inverse tangential metric per sheet, row major.
    pub g_tang: [Vec<f64>; 3],
    pub coefficients: Coefficients,
    pub p_hat: [C64; 3],
    pub phase: [f64; 3],
    pub tau: [C64; 3],
    pub det: C64,
    pub summands: [C64; 3],
}

impl SymbolSample {
    pub fn new(p: C64, xi_prime: Vec<f64>, g_tang: [Vec<f64>; 3], coefficients: Coefficients) -> Result<Self> {
        coefficients.validate()?;
        let (p_hat, phase, tau) = roots(p, &xi_prime, &g_tang, coefficients.beta)?;
        let (det, summands) = ls_determinant(coefficients.gamma, tau);
        Ok(SymbolSample {
            p,
            xi_prime,
            g_tang,
            coefficients,
            p_hat,
            phase,
            tau,
            det,
            summands,
        })
    }

    /// `max |p_hat| / beta`, the square of the root scale.
    pub fn scale_sq(&self) -> f64 {
        (0..3)
            .map(|i| self.p_hat[i].norm() / self.coefficients.beta[i])
            .fold(0.0, f64::max)
    }

    /// `|det|` divided by `sum(gamma) * scale_sq`; invariant under the
    /// parabolic rescaling of `(p, xi)`.
    pub fn normalized_det(&self) -> f64 {
        self.det.norm() / (self.coefficients.gamma.iter().sum::<f64>() * self.scale_sq())
    }

    /// Smallest `-Re` over the summands, normalized like `normalized_det`.
    pub fn normalized_margin(&self) -> f64 {
        let m = self.summands.iter().map(|s| -s.re).fold(f64::INFINITY, f64::min);
        m / (self.coefficients.gamma.iter().sum::<f64>() * self.scale_sq())
    }

    /// Every pairwise root product has negative real part.
    pub fn phase_bound_holds(&self) -> bool {
        (0..3).all(|i| (i + 1..3).all(|j| (self.tau[i] * self.tau[j]).re < 0.0))
    }

    pub fn record(&self) -> SampleRecord {
        let c = |z: C64| [z.re, z.im];
        SampleRecord {
            p: c(self.p),
            xi_prime: self.xi_prime.clone(),
            g_tang: self.g_tang.clone(),
            coefficients: self.coefficients,
            p_hat: self.p_hat.map(c),
            phase: self.phase,
            tau: self.tau.map(c),
            det: c(self.det),
            summands: self.summands.map(c),
            normalized_det: self.normalized_det(),
        }
    }
}

/// Serializable form of a sample; complex numbers as `[re, im]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub p: [f64; 2],
    pub xi_prime: Vec<f64>,
    pub g_tang: [Vec<f64>; 3],
    pub coefficients: Coefficients,
    pub p_hat: [[f64; 2]; 3],
    pub phase: [f64; 3],
    pub tau: [[f64; 2]; 3],
    pub det: [f64; 2],
    pub summands: [[f64; 2]; 3],
    pub normalized_det: f64,
}

fn check_metric(g: &[f64], d: usize) -> Result<()> {
    if g.len() != d * d {
        return Err(FlowError::ShapeMismatch(format!("metric has {} entries, expected {}", g.len(), d * d)));
    }
    let m = DMatrix::from_row_slice(d, d, g);
    let asym = (&m - m.transpose()).amax();
    if !g.iter().all(|v| v.is_finite()) || asym > 1e-12 * (1.0 + m.amax()) {
        return Err(FlowError::DomainError("tangential metric is not symmetric".into()));
    }
    if d > 0 && m.cholesky().is_none() {
        return Err(FlowError::DomainError("tangential metric is not positive definite".into()));
    }
    Ok(())
}

/// Shifted frequencies `p + beta g(xi, xi)`, their phases, and the roots
/// with positive imaginary part of `beta tau^2 + p_hat = 0`.
pub fn roots(p: C64, xi: &[f64], g_tang: &[Vec<f64>; 3], beta: [f64; 3]) -> Result<([C64; 3], [f64; 3], [C64; 3])> {
    if !(p.re > 0.0) || !p.im.is_finite() || !p.re.is_finite() {
        return Err(FlowError::DomainError(format!("Re p must be positive, got {p}")));
    }
    let d = xi.len();
    let mut p_hat = [C64::new(0.0, 0.0); 3];
    let mut phase = [0.0; 3];
    let mut tau = [C64::new(0.0, 0.0); 3];
    for i in 0..3 {
        check_metric(&g_tang[i], d)?;
        let mut q = 0.0;
        for k in 0..d {
            for l in 0..d {
                q += g_tang[i][k * d + l] * xi[k] * xi[l];
            }
        }
        p_hat[i] = p + beta[i] * q;
        phase[i] = p_hat[i].arg();
        tau[i] = C64::from_polar((p_hat[i].norm() / beta[i]).sqrt(), 0.5 * (phase[i] + PI));
        if !(phase[i].abs() < FRAC_PI_2) || !(tau[i].im > 0.0) {
            return Err(FlowError::Violation(format!(
                "root {i}: phase {} of p_hat, tau = {}",
                phase[i], tau[i]
            )));
        }
    }
    Ok((p_hat, phase, tau))
}

/// Determinant of the boundary matrix and its three summands.
pub fn ls_determinant(gamma: [f64; 3], tau: [C64; 3]) -> (C64, [C64; 3]) {
    let s = [
        tau[1] * tau[2] * gamma[0],
        tau[0] * tau[2] * gamma[1],
        tau[0] * tau[1] * gamma[2],
    ];
    (s[0] + s[1] + s[2], s)
}

/// Decay rates `sqrt((lambda + beta |xi|^2) / beta)` of the half-line problem.
fn decay_rates(c: Coefficients, lambda: C64, xi: f64) -> [C64; 3] {
    [0, 1, 2].map(|j| ((lambda + c.beta[j] * xi * xi) / c.beta[j]).sqrt())
}

fn check_ode_domain(lambda: C64, xi: f64) -> Result<()> {
    if !(lambda.re >= 0.0) || !xi.is_finite() || !lambda.im.is_finite() {
        return Err(FlowError::DomainError(format!("need Re lambda >= 0, got {lambda}")));
    }
    if lambda.norm() == 0.0 && xi == 0.0 {
        return Err(FlowError::DomainError("(lambda, xi) = (0, 0) is excluded".into()));
    }
    Ok(())
}

/// Determinant of the 3x3 boundary system for the decaying exponentials
/// `A_j exp(-k_j y)`.
pub fn ansatz_determinant(c: Coefficients, lambda: C64, xi: f64) -> Result<C64> {
    c.validate()?;
    check_ode_domain(lambda, xi)?;
    let k = decay_rates(c, lambda, xi);
    let g = c.gamma.map(|v| C64::new(v, 0.0));
    let z = C64::new(0.0, 0.0);
    let m = Matrix3::new(g[0], g[1], g[2], -k[0], k[1], z, z, -k[1], k[2]);
    Ok(m.determinant())
}

/// Result of the discrete half-line problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdeReport {
    pub lambda: [f64; 2],
    pub xi: f64,
    pub y_max: f64,
    pub nodes: usize,
    /// Smallest singular value of the equilibrated discrete operator
    /// before division by the frequency scale.
    pub sigma_min: f64,
    /// `sigma_min` divided by `max_j |lambda + beta_j xi^2| / beta_j`.
    pub sigma_min_scaled: f64,
    /// Relative mismatch of the discrete energy identity at the
    /// smallest right singular vector.
    pub energy_defect: f64,
    /// Rounding floor `eps ||S||_inf sqrt(n)` of the equilibrated operator
    /// `S`, scaled like `sigma_min_scaled`.
    pub floor: f64,
    pub ansatz_det: [f64; 2],
    pub iterations: usize,
}

struct HalfLine {
    a: Triplets<C64>,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
    weight: Vec<f64>,
    h: f64,
    n: usize,
    k: [C64; 3],
}

impl HalfLine {
    fn node(&self, j: usize, i: usize) -> usize {
        1 + j * (self.n + 1) + i
    }

    fn size(&self) -> usize {
        1 + 3 * (self.n + 1)
    }

    /// Finite volumes on the dual cells of a uniform grid on `[0, Y]`.
    /// Unknown 0 is the common derivative at `y = 0`; the last row of each
    /// sheet carries the exact decay condition at `Y`. Row 0 is the
    /// weighted sum of the boundary values.
    fn assemble(c: Coefficients, lambda: C64, xi: f64, y_max: f64, n: usize) -> Self {
        let h = y_max / n as f64;
        let k = decay_rates(c, lambda, xi);
        let weight: Vec<f64> = (0..=n)
            .map(|i| if i == 0 || i == n { 0.5 * h } else { h })
            .collect();
        let mut hl = HalfLine {
            a: Triplets::new(1 + 3 * (n + 1)),
            row_scale: Vec::new(),
            col_scale: Vec::new(),
            weight,
            h,
            n,
            k,
        };
        let mut a = Triplets::new(hl.size());
        for j in 0..3 {
            let b = c.beta[j];
            let react = lambda + b * xi * xi;
            a.add(0, hl.node(j, 0), C64::new(c.gamma[j], 0.0));
            for i in 0..=n {
                let r = hl.node(j, i);
                let mut diag = react * hl.weight[i];
                if i > 0 {
                    diag += b / h;
                    a.add(r, r - 1, C64::new(-b / h, 0.0));
                } else {
                    a.add(r, 0, C64::new(b, 0.0));
                }
                if i < n {
                    diag += b / h;
                    a.add(r, r + 1, C64::new(-b / h, 0.0));
                } else {
                    diag += k[j] * b;
                }
                a.add(r, r, diag);
            }
        }
        hl.a = a;
        hl
    }

    /// Diagonal scalings to the length unit `l = scale^{-1/2}`: nodal
    /// unknowns carry `sqrt(w / l)` so the Euclidean norm matches the L2
    /// norm, the flux unknown is measured per unit length `l`, cell rows
    /// are divided by `scale` and the trace row by `|gamma|`.
    fn equilibrate(&mut self, c: Coefficients, scale: f64) {
        let l = scale.sqrt().recip();
        let size = self.size();
        let mut col = vec![1.0; size];
        let mut row = vec![1.0; size];
        for j in 0..3 {
            for i in 0..=self.n {
                let r = self.node(j, i);
                col[r] = (l / self.weight[i]).sqrt();
                row[r] = 1.0 / ((self.weight[i] * l).sqrt() * scale);
            }
        }
        row[0] = 1.0 / c.gamma.iter().map(|g| g * g).sum::<f64>().sqrt();
        col[0] = l;
        self.row_scale = row;
        self.col_scale = col;
    }

    fn scaled(&self) -> Triplets<C64> {
        let mut s = Triplets::new(self.size());
        for &(i, j, v) in &self.a.entries {
            s.add(i, j, v * (self.row_scale[i] * self.col_scale[j]));
        }
        s
    }

    fn border(&self) -> Vec<usize> {
        let mut b = vec![0];
        b.extend((0..3).map(|j| self.node(j, 0)));
        b
    }

    /// `(tested residual, energy)` for the unscaled unknowns `v`.
    fn energy_identity(&self, c: Coefficients, lambda: C64, xi: f64, v: &[C64]) -> (C64, f64, f64) {
        let r = self.a.mul(v);
        let mut tested = C64::new(0.0, 0.0);
        let mut energy = C64::new(0.0, 0.0);
        let mut magnitude = 0.0;
        let q = v[0];
        let mut boundary = C64::new(0.0, 0.0);
        for j in 0..3 {
            let (g, b) = (c.gamma[j], c.beta[j]);
            let react = lambda + b * xi * xi;
            let mut mass = 0.0;
            let mut grad = 0.0;
            for i in 0..=self.n {
                let phi = v[self.node(j, i)];
                tested += r[self.node(j, i)] * phi.conj() * (g / b);
                mass += self.weight[i] * phi.norm_sqr();
                if i < self.n {
                    grad += (v[self.node(j, i + 1)] - phi).norm_sqr() / self.h;
                }
            }
            let tail = self.k[j] * g * v[self.node(j, self.n)].norm_sqr();
            let terms = [react * (g / b * mass), C64::new(g * grad, 0.0), tail];
            for t in terms {
                energy += t;
                magnitude += t.norm();
            }
            boundary += v[self.node(j, 0)].conj() * g;
        }
        let flux = q * boundary;
        energy += flux;
        magnitude += flux.norm();
        (tested, (tested - energy).norm(), magnitude.max(tested.norm()))
    }
}

/// Solves the discrete half-line problem on `[0, Y]` with `n` intervals and
/// reports its smallest singular value and the energy-identity defect.
pub fn ode_energy_check(c: Coefficients, lambda: C64, xi: f64, y_max: Option<f64>, n: usize) -> Result<OdeReport> {
    c.validate()?;
    check_ode_domain(lambda, xi)?;
    if n < 200 {
        return Err(FlowError::DomainError(format!("need at least 200 intervals, got {n}")));
    }
    let k = decay_rates(c, lambda, xi);
    let slowest = k.iter().map(|k| k.re).fold(f64::INFINITY, f64::min);
    let y_min = 10.0 / slowest;
    let y_max = y_max.unwrap_or(y_min);
    if !(y_max >= y_min * (1.0 - 1e-12)) {
        return Err(FlowError::DomainError(format!("Y = {y_max} is below 10 decay lengths ({y_min})")));
    }
    let scale = (0..3)
        .map(|j| (lambda + c.beta[j] * xi * xi).norm() / c.beta[j])
        .fold(0.0, f64::max);
    let mut hl = HalfLine::assemble(c, lambda, xi, y_max, n);
    hl.equilibrate(c, scale);
    let s = hl.scaled();
    let lu = BorderedSolver::factor(&s, &hl.border())?;
    let lu_adj = BorderedSolver::factor(&s.adjoint(), &hl.border())?;
    let size = hl.size();
    // Inverse iteration on (S^H S)^{-1}.
    let mut x: Vec<C64> = (0..size)
        .map(|i| C64::new(1.0 + 0.37 * ((i * 7919) % 13) as f64, 0.1 * (i % 5) as f64))
        .collect();
    let normalize = |x: &mut Vec<C64>| {
        let nrm = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= nrm);
        nrm
    };
    normalize(&mut x);
    let mut est = 0.0;
    let mut iterations = 0;
    for it in 1..=200 {
        let y = lu_adj.solve(&x)?;
        let mut z = lu.solve(&y)?;
        let grow = normalize(&mut z);
        x = z;
        iterations = it;
        let next = 1.0 / grow.sqrt();
        if (next - est).abs() <= 1e-7 * next {
            est = next;
            break;
        }
        est = next;
    }
    // Report the Rayleigh value ||S x|| for the converged vector.
    let sx = s.mul(&x);
    let sigma_min = sx.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt().min(est);
    let v: Vec<C64> = x.iter().zip(&hl.col_scale).map(|(a, s)| a * *s).collect();
    let (_, defect, magnitude) = hl.energy_identity(c, lambda, xi, &v);
    let ad = ansatz_determinant(c, lambda, xi)?;
    Ok(OdeReport {
        lambda: [lambda.re, lambda.im],
        xi,
        y_max,
        nodes: n,
        sigma_min: sigma_min * scale,
        sigma_min_scaled: sigma_min,
        energy_defect: defect / magnitude,
        floor: f64::EPSILON * s.norm_inf() * (size as f64).sqrt(),
        ansatz_det: [ad.re, ad.im],
        iterations,
    })
}

/// Tangential metric choices for the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricFamily {
    Identity,
    /// Random rotation with eigenvalues whose ratio is at most `max_condition`.
    Anisotropic { max_condition: f64 },
}

/// Coefficient choices for the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Fixed { coefficients: Coefficients, metric: MetricFamily },
    /// Tensions obeying the strict triangle inequality and mobilities
    /// log-uniform over `10^[-decades, decades]`.
    Random { beta_decades: f64, metric: MetricFamily },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub families: Vec<Family>,
    /// Range of Re p, sampled log-uniformly.
    pub re_p: [f64; 2],
    /// Largest |Im p|; magnitudes spread over nine decades below it.
    pub im_p_max: f64,
    /// Largest |xi'|; magnitudes spread over nine decades below it.
    pub xi_max: f64,
    pub tangent_dim: usize,
    pub samples_per_family: usize,
    pub seed: u64,
    /// Number of sweep points also run through the half-line problem.
    pub ode_samples: usize,
    pub ode_nodes: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            families: vec![
                Family::Fixed {
                    coefficients: Coefficients {
                        gamma: [1.0; 3],
                        beta: [1.0; 3],
                    },
                    metric: MetricFamily::Identity,
                },
                Family::Fixed {
                    coefficients: Coefficients {
                        gamma: [1.0; 3],
                        beta: [1e-2, 1.0, 1e2],
                    },
                    metric: MetricFamily::Anisotropic { max_condition: 1e2 },
                },
                Family::Random {
                    beta_decades: 2.0,
                    metric: MetricFamily::Anisotropic { max_condition: 1e2 },
                },
            ],
            re_p: [1e-6, 1e3],
            im_p_max: 1e3,
            xi_max: 1e3,
            tangent_dim: 2,
            samples_per_family: 10_000,
            seed: 0x1a7c_5eed,
            ode_samples: 100,
            ode_nodes: 200,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FlowError::DomainError(m.into()));
        if !(self.re_p[0] > 0.0 && self.re_p[1] >= self.re_p[0] && self.re_p[1].is_finite()) {
            return bad("re_p must satisfy 0 < lo <= hi");
        }
        if !(self.im_p_max >= 0.0 && self.xi_max >= 0.0) || !self.im_p_max.is_finite() || !self.xi_max.is_finite() {
            return bad("im_p_max and xi_max must be finite and non-negative");
        }
        if self.families.is_empty() || self.samples_per_family == 0 {
            return bad("need at least one family and one sample");
        }
        if self.tangent_dim > 3 {
            return bad("tangent_dim must be at most 3");
        }
        if self.ode_samples > 0 && self.ode_nodes < 200 {
            return bad("ode_nodes must be at least 200");
        }
        for f in &self.families {
            let metric = match f {
                Family::Fixed { coefficients, metric } => {
                    coefficients.validate()?;
                    metric
                }
                Family::Random { beta_decades, metric } => {
                    if !(*beta_decades >= 0.0 && beta_decades.is_finite()) {
                        return bad("beta_decades must be non-negative");
                    }
                    metric
                }
            };
            if let MetricFamily::Anisotropic { max_condition } = metric {
                if !(*max_condition >= 1.0 && max_condition.is_finite()) {
                    return bad("max_condition must be at least 1");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Stats {
    fn of(mut v: Vec<f64>) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Stats {
            min: v[0],
            median: v[v.len() / 2],
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: Family,
    pub min_abs_det: f64,
    pub min_normalized_det: f64,
    pub min_neg_re_summand: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub samples: usize,
    pub seed: u64,
    pub min_abs_det: f64,
    /// Smallest `|det| / (sum(gamma) max |p_hat| / beta)`.
    pub min_normalized_det: f64,
    /// Smallest `-Re` of any summand, normalized like the determinant.
    pub min_neg_re_summand: f64,
    pub phase_bound_holds: bool,
    pub violations: usize,
    pub worst_sample: SampleRecord,
    pub families: Vec<FamilyReport>,
    pub sigma_min_stats: Option<Stats>,
    pub energy_defect_max: Option<f64>,
    pub ode_ansatz_ratio: Option<Stats>,
    /// `sigma_min` over its rounding floor.
    pub sigma_over_floor: Option<Stats>,
}

impl GridReport {
    pub fn ensure_clean(&self) -> Result<()> {
        if self.violations == 0 && self.phase_bound_holds && self.min_abs_det > 0.0 {
            Ok(())
        } else {
            Err(FlowError::Violation(format!(
                "{} of {} samples violate the boundary condition; worst {:?}",
                self.violations, self.samples, self.worst_sample
            )))
        }
    }
}

const DIMS: usize = 4 + 3 * 3 + 3 + 2;

fn spread(u: f64, max: f64) -> f64 {
    max * 10f64.powf(-9.0 * (1.0 - u))
}

fn metric_from(family: &MetricFamily, d: usize, u: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; d * d];
    match family {
        MetricFamily::Identity => {
            for i in 0..d {
                g[i * d + i] = 1.0;
            }
        }
        MetricFamily::Anisotropic { max_condition } => {
            // Diagonal spread over sqrt(cond) either way, then a rotation
            // in the first coordinate plane.
            let half = max_condition.log10() * 0.5;
            let mut diag = vec![1.0; d];
            if d > 0 {
                diag[0] = 10f64.powf(half * (2.0 * u[1] - 1.0));
            }
            if d > 1 {
                diag[1] = 10f64.powf(-half * (2.0 * u[1] - 1.0));
            }
            for i in 0..d {
                g[i * d + i] = diag[i];
            }
            if d > 1 {
                let (s, c) = (PI * u[0]).sin_cos();
                let (a, b) = (diag[0], diag[1]);
                g[0] = c * c * a + s * s * b;
                g[d + 1] = s * s * a + c * c * b;
                g[1] = c * s * (a - b);
                g[d] = g[1];
            }
        }
    }
    g
}

fn sample_at(cfg: &GridConfig, family: &Family, halton: &Halton, index: usize) -> Result<SymbolSample> {
    let u = halton.point(index as u64);
    let d = cfg.tangent_dim;
    let [lo, hi] = cfg.re_p;
    let mut re = lo * (hi / lo).powf(u[0]);
    let sign = if u[1] < 0.5 { -1.0 } else { 1.0 };
    let mut im = sign * spread((2.0 * u[1]).fract(), cfg.im_p_max);
    let mut xi_norm = spread(u[2], cfg.xi_max);
    // The first samples pin the corners of the frequency box.
    match index {
        0 => (re, im, xi_norm) = (lo, 0.0, 0.0),
        1 => (re, im, xi_norm) = (lo, cfg.im_p_max, 0.0),
        2 => (re, im, xi_norm) = (lo, 0.0, cfg.xi_max),
        3 => (re, im, xi_norm) = (hi, cfg.im_p_max, cfg.xi_max),
        _ => {}
    }
    let mut xi = vec![0.0; d];
    if d == 1 {
        xi[0] = xi_norm;
    } else if d >= 2 {
        let (s, c) = (2.0 * PI * u[3]).sin_cos();
        xi[0] = xi_norm * c;
        xi[1] = xi_norm * s;
    }
    let (coefficients, metric) = match family {
        Family::Fixed { coefficients, metric } => (*coefficients, metric),
        Family::Random { beta_decades, metric } => {
            let beta = [0, 1, 2].map(|i| 10f64.powf(beta_decades * (2.0 * u[13 + i] - 1.0)));
            let a = 10f64.powf(2.0 * u[16] - 1.0);
            let (blo, bhi) = ((1.0 - a).abs(), 1.0 + a);
            let b = blo + (bhi - blo) * (0.05 + 0.9 * u[17]);
            let mean = (1.0 + a + b) / 3.0;
            (
                Coefficients {
                    gamma: [1.0 / mean, a / mean, b / mean],
                    beta,
                },
                metric,
            )
        }
    };
    let g = [0, 1, 2].map(|i| metric_from(metric, d, &u[4 + 3 * i..7 + 3 * i]));
    SymbolSample::new(C64::new(re, im), xi, g, coefficients)
}

/// Sweeps quasi-random frequencies for every family and checks the sign of
/// each summand of the boundary determinant.
pub fn check_grid(cfg: &GridConfig) -> Result<GridReport> {
    cfg.validate()?;
    let mut families = Vec::new();
    let mut all: Vec<SymbolSample> = Vec::new();
    let mut phase_ok = true;
    for (fi, family) in cfg.families.iter().enumerate() {
        let halton = Halton::new(DIMS, cfg.seed.wrapping_add(fi as u64));
        let samples: Vec<SymbolSample> = (0..cfg.samples_per_family)
            .into_par_iter()
            .map(|i| sample_at(cfg, family, &halton, i))
            .collect::<Result<_>>()?;
        let violations = samples
            .iter()
            .filter(|s| s.det.norm() == 0.0 || s.summands.iter().any(|z| !(z.re < 0.0)))
            .count();
        phase_ok &= samples.iter().all(SymbolSample::phase_bound_holds);
        families.push(FamilyReport {
            family: family.clone(),
            min_abs_det: samples.iter().map(|s| s.det.norm()).fold(f64::INFINITY, f64::min),
            min_normalized_det: samples.iter().map(SymbolSample::normalized_det).fold(f64::INFINITY, f64::min),
            min_neg_re_summand: samples.iter().map(SymbolSample::normalized_margin).fold(f64::INFINITY, f64::min),
            violations,
        });
        all.extend(samples);
    }
    let worst = all
        .iter()
        .min_by(|a, b| a.normalized_det().total_cmp(&b.normalized_det()))
        .expect("at least one sample");
    let (sigma, defect, ratio, above_floor) = ode_sweep(cfg, &all)?;
    Ok(GridReport {
        samples: all.len(),
        seed: cfg.seed,
        min_abs_det: families.iter().map(|f| f.min_abs_det).fold(f64::INFINITY, f64::min),
        min_normalized_det: families.iter().map(|f| f.min_normalized_det).fold(f64::INFINITY, f64::min),
        min_neg_re_summand: families.iter().map(|f| f.min_neg_re_summand).fold(f64::INFINITY, f64::min),
        phase_bound_holds: phase_ok,
        violations: families.iter().map(|f| f.violations).sum(),
        worst_sample: worst.record(),
        families,
        sigma_min_stats: Stats::of(sigma),
        energy_defect_max: defect,
        ode_ansatz_ratio: Stats::of(ratio),
        sigma_over_floor: Stats::of(above_floor),
    })
}

type OdeSweep = (Vec<f64>, Option<f64>, Vec<f64>, Vec<f64>);

/// Runs evenly spaced sweep points through the half-line problem. Each
/// point is rescaled to unit root scale first; the problem is invariant
/// under that rescaling and the grid then resolves every decay length.
fn ode_sweep(cfg: &GridConfig, all: &[SymbolSample]) -> Result<OdeSweep> {
    if cfg.ode_samples == 0 {
        return Ok((Vec::new(), None, Vec::new(), Vec::new()));
    }
    let stride = (all.len() / cfg.ode_samples).max(1);
    let picks: Vec<&SymbolSample> = all.iter().step_by(stride).take(cfg.ode_samples).collect();
    let out: Vec<(f64, f64, f64, f64)> = picks
        .par_iter()
        .map(|s| {
            let scale = s.scale_sq();
            let lambda = s.p / scale;
            let xi = s.xi_prime.iter().map(|x| x * x).sum::<f64>().sqrt() / scale.sqrt();
            let c = s.coefficients;
            let k = decay_rates(c, lambda, xi);
            let fastest = k.iter().map(|k| k.norm()).fold(0.0, f64::max);
            let slowest = k.iter().map(|k| k.re).fold(f64::INFINITY, f64::min);
            let n = ((40.0 * fastest / slowest).ceil() as usize).clamp(cfg.ode_nodes, 200_000);
            let r = ode_energy_check(c, lambda, xi, None, n)?;
            let sym = SymbolSample::new(lambda, vec![xi], [vec![1.0], vec![1.0], vec![1.0]], c)?;
            let ad = C64::new(r.ansatz_det[0], r.ansatz_det[1]);
            Ok((r.sigma_min_scaled, r.energy_defect, ad.norm() / sym.det.norm(), r.sigma_min_scaled / r.floor))
        })
        .collect::<Result<_>>()?;
    let defect = out.iter().map(|o| o.1).fold(0.0, f64::max);
    Ok((
        out.iter().map(|o| o.0).collect(),
        Some(defect),
        out.iter().map(|o| o.2).collect(),
        out.iter().map(|o| o.3).collect(),
    ))
}
