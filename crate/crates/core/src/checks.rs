//! Validation suites shared by the command line and the acceptance tests:
//! random admissible heights, finite-difference checks of the linearized
//! operators, and compatible initial data.

use crate::error::{FlowError, Result};
use crate::geometry::{cutoff, EndCondition, ReferenceCluster};
use crate::linear::{laplacian_stencil, normal_derivative};
use crate::shape::{angle_residuals, check_compatibility, evaluate_phi, projected_mu, shape_quantities, CompatibilityReport, HeightState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Smooth random heights: a few Fourier modes along each chart (and around
/// the ring for sheets), vanishing at pinned ends.
pub fn smooth_heights(cl: &ReferenceCluster, rng: &mut ChaCha8Rng, amp: f64) -> Vec<Vec<f64>> {
    cl.charts
        .iter()
        .enumerate()
        .map(|(c, ch)| {
            let g = ch.grid;
            let coef: Vec<[f64; 4]> = (0..4)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.0..2.0 * PI),
                    ]
                })
                .collect();
            let f = &cl.fields[c];
            (0..g.len())
                .map(|i| {
                    let (k, j) = (i / g.ring, i % g.ring);
                    let x = k as f64 * g.dx;
                    let y = j as f64 * g.dy;
                    let mut v = 0.0;
                    for (m, a) in coef.iter().enumerate() {
                        let m = m as f64;
                        let ring = if ch.dim == 2 {
                            (2.0 * PI * m * y + a[3]).cos() * a[2] + 1.0
                        } else {
                            1.0
                        };
                        v += (a[0] * (PI * m * x).cos() + a[1] * (PI * (m + 1.0) * x).sin()) * ring / (1.0 + m * m);
                    }
                    for e in 0..2 {
                        if ch.ends[e] == EndCondition::Pinned {
                            v *= 1.0 - cutoff(f.dist[e][i] / (0.5 * f.length));
                        }
                    }
                    amp * v
                })
                .collect()
        })
        .collect()
}

/// Removes the weighted junction sum with smooth bumps of width `r0`.
pub fn make_admissible(cl: &ReferenceCluster, rho: &mut [Vec<f64>]) {
    let w = &cl.weights;
    let g2: f64 = w.gamma.iter().map(|g| g * g).sum();
    for (jid, jn) in cl.junctions.iter().enumerate() {
        for r in 0..jn.ring {
            let mut s = 0.0;
            for m in 0..3 {
                let (c, n) = cl.junction_node(jid, m, r);
                s += w.gamma[m] * rho[c][n];
            }
            for (m, &(c, end)) in jn.members.iter().enumerate() {
                let ch = &cl.charts[c];
                let f = &cl.fields[c];
                for k in 0..ch.grid.nk {
                    let i = ch.grid.idx(k, r);
                    rho[c][i] -= s * w.gamma[m] / g2 * cutoff(f.dist[end.index()][i] / cl.r0);
                }
            }
        }
    }
}

pub fn random_admissible(cl: &ReferenceCluster, seed: u64, amp: f64) -> HeightState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rho = smooth_heights(cl, &mut rng, amp);
    make_admissible(cl, &mut rho);
    HeightState::new(cl, rho, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LincheckConfig {
    pub seed: u64,
    pub amplitude: f64,
    /// Decreasing step sizes of the central differences.
    pub epsilons: Vec<f64>,
}

impl Default for LincheckConfig {
    fn default() -> Self {
        LincheckConfig {
            seed: 7,
            amplitude: 1.0,
            epsilons: vec![4e-2, 2e-2, 1e-2, 5e-3, 2.5e-3],
        }
    }
}

/// Finite-difference check of one linearized quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantityCheck {
    pub name: String,
    /// Relative max-norm error of each central difference against the
    /// linearized formula.
    pub errors: Vec<f64>,
    /// Least-squares slope of `log(error)` against `log(epsilon)`.
    pub slope: f64,
    /// Error of the Richardson combination of the two smallest steps.
    pub extrapolated_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LincheckReport {
    pub epsilons: Vec<f64>,
    pub quantities: Vec<QuantityCheck>,
}

impl LincheckReport {
    pub fn passes(&self, tol: f64, slope_tol: f64) -> bool {
        self.quantities
            .iter()
            .all(|q| q.extrapolated_error <= tol && (q.slope - 2.0).abs() <= slope_tol)
    }
}

pub fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// The three sampled nonlinear quantities of a state, flattened:
/// normal displacement measured along the perturbed normal (all nodes),
/// perturbed mean curvature (interior nodes), scaled angle residuals
/// (two per junction node).
fn sampled(cl: &ReferenceCluster, state: &HeightState, interior: &[(usize, usize)]) -> Result<[Vec<f64>; 3]> {
    let shape = shape_quantities(cl, state)?;
    let phi = evaluate_phi(cl, state);
    let mut normal = Vec::new();
    for (c, ch) in cl.charts.iter().enumerate() {
        for i in 0..ch.grid.len() {
            normal.push((phi[c][i] - ch.positions[i]).dot(&shape.charts[c].normal[i]));
        }
    }
    let curv = interior.iter().map(|&(c, i)| shape.charts[c].mean_curv[i]).collect();
    let mut angle = Vec::new();
    for ring in angle_residuals(cl, state, &shape) {
        for a in ring {
            angle.push(a.g2_scaled);
            angle.push(a.g3_scaled);
        }
    }
    Ok([normal, curv, angle])
}

fn interior_nodes(cl: &ReferenceCluster) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (c, ch) in cl.charts.iter().enumerate() {
        let g = ch.grid;
        for k in 0..g.nk {
            if !g.closed && (k == 0 || k + 1 == g.nk) {
                continue;
            }
            for j in 0..g.ring {
                out.push((c, g.idx(k, j)));
            }
        }
    }
    out
}

/// The linearized formulas applied to the direction `dir`.
fn linearized(cl: &ReferenceCluster, dir: &HeightState, interior: &[(usize, usize)]) -> [Vec<f64>; 3] {
    let normal = dir.rho.iter().flatten().copied().collect();
    let curv = interior
        .iter()
        .map(|&(c, i)| {
            let ch = &cl.charts[c];
            let f = &cl.fields[c];
            let (k, j) = (i / ch.grid.ring, i % ch.grid.ring);
            let u = &dir.rho[c];
            let lap: f64 = laplacian_stencil(cl, c, k, j).iter().map(|&(n, w)| w * u[n]).sum();
            let nonlocal = if f.support[i].is_some() {
                f.grad_h_tau[i] * projected_mu(cl, &dir.mu, c, i)
            } else {
                0.0
            };
            lap + f.pi_sq[i] * u[i] + nonlocal
        })
        .collect();
    let mut angle = Vec::new();
    for (jid, jn) in cl.junctions.iter().enumerate() {
        for r in 0..jn.ring {
            let q: Vec<f64> = (0..3)
                .map(|m| {
                    let (c, end) = jn.members[m];
                    normal_derivative(cl, c, end, r, &dir.rho[c])
                        + cl.fields[c].kappa[end.index()][r] * dir.mu[jid][r][m]
                })
                .collect();
            angle.push(q[0] - q[1]);
            angle.push(q[1] - q[2]);
        }
    }
    [normal, curv, angle]
}

/// Compares central differences of the nonlinear quantities through the
/// perturbed cluster with the linearized operators, along a random
/// admissible direction.
pub fn linearization_check(cl: &ReferenceCluster, cfg: &LincheckConfig) -> Result<LincheckReport> {
    if cfg.epsilons.len() < 2 || cfg.epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(FlowError::DomainError("need at least two positive step sizes".into()));
    }
    let dir = random_admissible(cl, cfg.seed, cfg.amplitude);
    let interior = interior_nodes(cl);
    let exact = linearized(cl, &dir, &interior);
    let scaled = |e: f64| HeightState::new(cl, dir.rho.iter().map(|r| r.iter().map(|v| v * e).collect()).collect(), 0.0);
    let mut diffs: Vec<[Vec<f64>; 3]> = Vec::new();
    for &e in &cfg.epsilons {
        let plus = sampled(cl, &scaled(e), &interior)?;
        let minus = sampled(cl, &scaled(-e), &interior)?;
        diffs.push([0, 1, 2].map(|q| plus[q].iter().zip(&minus[q]).map(|(a, b)| (a - b) / (2.0 * e)).collect()));
    }
    let rel = |a: &[f64], b: &[f64]| {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    };
    let names = ["normal velocity", "mean curvature", "angle pairing"];
    let last = cfg.epsilons.len() - 1;
    let ratio = (cfg.epsilons[last - 1] / cfg.epsilons[last]).powi(2);
    let quantities = (0..3)
        .map(|q| {
            let errors: Vec<f64> = diffs.iter().map(|d| rel(&d[q], &exact[q])).collect();
            let rich: Vec<f64> = diffs[last][q]
                .iter()
                .zip(&diffs[last - 1][q])
                .map(|(fine, coarse)| (ratio * fine - coarse) / (ratio - 1.0))
                .collect();
            QuantityCheck {
                name: names[q].into(),
                slope: log_slope(&cfg.epsilons, &errors),
                extrapolated_error: rel(&rich, &exact[q]),
                errors,
            }
        })
        .collect();
    Ok(LincheckReport {
        epsilons: cfg.epsilons.clone(),
        quantities,
    })
}

/// Compatible initial heights built by Gauss–Newton on the junction values.
#[derive(Debug, Clone, Serialize)]
pub struct CompatibleState {
    #[serde(skip)]
    pub state: HeightState,
    pub report: CompatibilityReport,
    pub iterations: usize,
}

/// Starting from random admissible heights, adjusts each chart by smooth
/// bumps near its junction ends until the angle residuals and the weighted
/// velocity sum at every junction node vanish to `tol`.
pub fn compatible_state(cl: &ReferenceCluster, seed: u64, amp: f64, tol: f64) -> Result<CompatibleState> {
    let mut st = random_admissible(cl, seed, amp);
    // Bump families per chart end: constant and linear in the distance, so
    // both the value and the slope at the junction are adjustable.
    let bumps = |c: usize, end: usize, power: i32| -> Vec<f64> {
        let f = &cl.fields[c];
        f.dist[end]
            .iter()
            .map(|d| cutoff(d / cl.r0) * d.powi(power) / cl.r0.powi(power))
            .collect()
    };
    let mut cols: Vec<(usize, Vec<f64>)> = Vec::new();
    for (c, ch) in cl.charts.iter().enumerate() {
        for (end, _) in ch.junction_ends() {
            for power in 0..3 {
                cols.push((c, bumps(c, end.index(), power)));
            }
        }
    }
    let residual = |st: &HeightState| -> Result<Vec<f64>> {
        let ev = crate::shape::evaluate(cl, st)?;
        let res = angle_residuals(cl, st, &ev.shape);
        let w = &cl.weights;
        let mut out = Vec::new();
        for (jid, jn) in cl.junctions.iter().enumerate() {
            for r in 0..jn.ring {
                let a = res[jid][r];
                let mut sk = 0.0;
                for m in 0..3 {
                    let (c, n) = cl.junction_node(jid, m, r);
                    sk += w.gamma[m] * ev.k[c][n];
                }
                out.extend([a.g1, a.g2, a.g3, sk]);
            }
        }
        Ok(out)
    };
    let apply = |st: &HeightState, x: &[f64]| -> HeightState {
        let mut rho = st.rho.clone();
        for ((c, b), xi) in cols.iter().zip(x) {
            for (r, v) in rho[*c].iter_mut().zip(b) {
                *r += xi * v;
            }
        }
        HeightState::new(cl, rho, st.t)
    };
    let n = cols.len();
    let mut iterations = 0;
    for it in 0..30 {
        let r0 = residual(&st)?;
        let norm = r0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        iterations = it;
        if norm <= tol {
            break;
        }
        let h = 1e-7;
        let mut jac = nalgebra::DMatrix::zeros(r0.len(), n);
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = h;
            let rp = residual(&apply(&st, &e))?;
            e[k] = -h;
            let rm = residual(&apply(&st, &e))?;
            for i in 0..r0.len() {
                jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rhs = nalgebra::DVector::from_iterator(r0.len(), r0.iter().map(|v| -v));
        let step = jac
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| FlowError::SingularSystem(e.to_string()))?;
        st = apply(&st, step.as_slice());
    }
    let report = check_compatibility(cl, &st)?;
    if report.angle.max(report.sum_gamma_k) > tol {
        return Err(FlowError::SingularSystem(format!(
            "compatibility iteration stalled at {:.3e}",
            report.angle.max(report.sum_gamma_k)
        )));
    }
    Ok(CompatibleState {
        state: st,
        report,
        iterations,
    })
}
