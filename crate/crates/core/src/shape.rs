//! The perturbed cluster and the nonlinear operators evaluated on it.
//!
//! Derivatives of the perturbed positions are the cached reference
//! derivatives plus finite differences of the displacement. The perturbed
//! normal and mean curvature are defect-corrected against the reference:
//! the finite-difference value of the reference itself is subtracted and the
//! stored reference field added back, so the unperturbed state reproduces
//! the reference fields exactly.

use crate::error::{FlowError, Result};
use crate::geometry::{quad_weight, rot90, ReferenceCluster, Vec3};
use nalgebra::Matrix3;
use serde::Serialize;

/// Guard on the perturbed metric relative to the reference metric.
pub const FOLD_RATIO: f64 = 0.1;
/// Largest accepted condition number of the junction coupling.
pub const COUPLING_COND_MAX: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct HeightState {
    pub t: f64,
    /// Normal heights per chart, nodal.
    pub rho: Vec<Vec<f64>>,
    /// Tangential junction offsets `mu[junction][ring][member]`.
    pub mu: Vec<Vec<[f64; 3]>>,
}

impl HeightState {
    pub fn zeros(cl: &ReferenceCluster) -> Self {
        let rho = cl.charts.iter().map(|c| vec![0.0; c.grid.len()]).collect();
        Self::new(cl, rho, 0.0)
    }

    pub fn new(cl: &ReferenceCluster, rho: Vec<Vec<f64>>, t: f64) -> Self {
        let mut s = Self {
            t,
            rho,
            mu: Vec::new(),
        };
        s.impose_attachment(cl);
        s
    }

    /// Normal heights of the three members at a junction ring node.
    pub fn junction_rho(&self, cl: &ReferenceCluster, jid: usize, r: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (m, o) in out.iter_mut().enumerate() {
            let (c, n) = cl.junction_node(jid, m, r);
            *o = self.rho[c][n];
        }
        out
    }

    pub fn impose_attachment(&mut self, cl: &ReferenceCluster) {
        self.mu = (0..cl.junctions.len())
            .map(|jid| {
                (0..cl.junctions[jid].ring)
                    .map(|r| cl.coupling.apply(self.junction_rho(cl, jid, r)))
                    .collect()
            })
            .collect();
    }

    /// Largest deviation from the attachment relation.
    pub fn attachment_defect(&self, cl: &ReferenceCluster) -> f64 {
        let mut d = 0.0f64;
        for (jid, ring) in self.mu.iter().enumerate() {
            for (r, mu) in ring.iter().enumerate() {
                let want = cl.coupling.apply(self.junction_rho(cl, jid, r));
                for m in 0..3 {
                    d = d.max((want[m] - mu[m]).abs());
                }
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.rho.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()))
    }
}

/// Tangential offset carried by a node through the projection onto the
/// junction (zero outside every cutoff support).
pub fn projected_mu(cl: &ReferenceCluster, mu: &[Vec<[f64; 3]>], chart: usize, node: usize) -> f64 {
    let f = &cl.fields[chart];
    match f.support[node] {
        None => 0.0,
        Some(_) => {
            let p = cl.project_to_junction(chart, node).expect("support node projects");
            mu[p.junction][p.ring][cl.charts[chart].sheet]
        }
    }
}

/// Displacement `rho N + mu(pr) tau` of every node.
pub fn displacement(cl: &ReferenceCluster, state: &HeightState) -> Vec<Vec<Vec3>> {
    cl.charts
        .iter()
        .enumerate()
        .map(|(c, ch)| {
            let f = &cl.fields[c];
            (0..ch.grid.len())
                .map(|i| {
                    let m = projected_mu(cl, &state.mu, c, i);
                    f.normal[i] * state.rho[c][i] + f.tau[i] * m
                })
                .collect()
        })
        .collect()
}

pub fn evaluate_phi(cl: &ReferenceCluster, state: &HeightState) -> Vec<Vec<Vec3>> {
    displacement(cl, state)
        .into_iter()
        .zip(&cl.charts)
        .map(|(d, ch)| ch.positions.iter().zip(d).map(|(p, d)| p + d).collect())
        .collect()
}

#[derive(Debug, Clone)]
pub struct ChartShape {
    pub phi: Vec<Vec3>,
    pub phi_x: Vec<Vec3>,
    pub phi_y: Vec<Vec3>,
    pub sqrt_g: Vec<f64>,
    pub metric: Vec<[f64; 3]>,
    pub normal: Vec<Vec3>,
    pub mean_curv: Vec<f64>,
    /// `<N*, N~>` per node.
    pub alignment: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PerturbedShape {
    pub charts: Vec<ChartShape>,
}

pub fn shape_quantities(cl: &ReferenceCluster, state: &HeightState) -> Result<PerturbedShape> {
    let disp = displacement(cl, state);
    let mut out = Vec::with_capacity(cl.charts.len());
    for (c, ch) in cl.charts.iter().enumerate() {
        let f = &cl.fields[c];
        let g = ch.grid;
        let d = &disp[c];
        let n = g.len();
        let mut cs = ChartShape {
            phi: ch.positions.iter().zip(d).map(|(p, d)| p + d).collect(),
            phi_x: vec![Vec3::zeros(); n],
            phi_y: vec![Vec3::zeros(); n],
            sqrt_g: vec![0.0; n],
            metric: vec![[0.0; 3]; n],
            normal: vec![Vec3::zeros(); n],
            mean_curv: vec![0.0; n],
            alignment: vec![0.0; n],
        };
        for k in 0..g.nk {
            for j in 0..g.ring {
                let i = g.idx(k, j);
                let px = f.sx[i] + g.d_x(d, k, j);
                let pxx = f.sxx[i] + g.d_xx(d, k, j);
                let (raw, met, h) = if ch.dim == 1 {
                    let g11 = px.norm_squared();
                    (rot90(&px.normalize()) * f.orientation, [g11, 0.0, 1.0], [pxx, Vec3::zeros(), Vec3::zeros()])
                } else {
                    let py = f.sy[i] + g.d_y(d, k, j);
                    let pyy = f.syy[i] + g.d_yy(d, k, j);
                    let pxy = f.sxy[i] + g.d_xy(d, k, j);
                    cs.phi_y[i] = py;
                    (
                        px.cross(&py).normalize() * f.orientation,
                        [px.dot(&px), px.dot(&py), py.dot(&py)],
                        [pxx, pxy, pyy],
                    )
                };
                cs.phi_x[i] = px;
                let nn = (f.normal[i] + (raw - f.normal_fd[i])).normalize();
                let align = f.normal[i].dot(&nn);
                if !(align > 0.0) {
                    return Err(FlowError::FoldOver(format!(
                        "chart {c} node {i}: perturbed normal flipped"
                    )));
                }
                let det = met[0] * met[2] - met[1] * met[1];
                let m0 = f.metric[i];
                let det0 = m0[0] * m0[2] - m0[1] * m0[1];
                if !(det > FOLD_RATIO * det0) {
                    return Err(FlowError::FoldOver(format!(
                        "chart {c} node {i}: metric ratio {:.3e}",
                        det / det0
                    )));
                }
                let raw_h = if ch.dim == 1 {
                    nn.dot(&h[0]) / met[0]
                } else {
                    let inv = [met[2] / det, -met[1] / det, met[0] / det];
                    inv[0] * nn.dot(&h[0]) + 2.0 * inv[1] * nn.dot(&h[1]) + inv[2] * nn.dot(&h[2])
                };
                cs.normal[i] = nn;
                cs.alignment[i] = align;
                cs.metric[i] = met;
                cs.sqrt_g[i] = det.sqrt();
                cs.mean_curv[i] = f.mean_curv[i] + (raw_h - f.mean_curv_fd[i]);
            }
        }
        out.push(cs);
    }
    Ok(PerturbedShape { charts: out })
}

#[derive(Debug, Clone)]
pub struct Coefficients {
    pub a: Vec<Vec<f64>>,
    pub a_dagger: Vec<Vec<f64>>,
    /// `d_dagger[junction][ring]` diagonal entries.
    pub d_dagger: Vec<Vec<[f64; 3]>>,
    pub p: Vec<Vec<Matrix3<f64>>>,
}

pub fn coefficients(cl: &ReferenceCluster, shape: &PerturbedShape) -> Result<Coefficients> {
    let mut a: Vec<Vec<f64>> = Vec::with_capacity(cl.charts.len());
    let mut ad: Vec<Vec<f64>> = Vec::with_capacity(cl.charts.len());
    for (c, ch) in cl.charts.iter().enumerate() {
        let f = &cl.fields[c];
        let s = &shape.charts[c];
        let beta = cl.weights.beta[ch.sheet];
        a.push(s.alignment.iter().map(|al| beta / al).collect());
        ad.push(
            (0..ch.grid.len())
                .map(|i| {
                    if f.support[i].is_some() {
                        -f.tau[i].dot(&s.normal[i]) / s.alignment[i]
                    } else {
                        0.0
                    }
                })
                .collect(),
        );
    }
    let t = &cl.coupling.m;
    let mut dd = Vec::new();
    let mut p = Vec::new();
    for (jid, jn) in cl.junctions.iter().enumerate() {
        let mut dj = Vec::with_capacity(jn.ring);
        let mut pj = Vec::with_capacity(jn.ring);
        for r in 0..jn.ring {
            let mut diag = [0.0; 3];
            for (m, dv) in diag.iter_mut().enumerate() {
                let (c, n) = cl.junction_node(jid, m, r);
                *dv = ad[c][n];
            }
            let d = Matrix3::from_diagonal(&nalgebra::Vector3::from(diag));
            let q = Matrix3::identity() - d * t;
            let sv = q.singular_values();
            let cond = sv.max() / sv.min();
            if !(cond <= COUPLING_COND_MAX) {
                return Err(FlowError::SingularCoupling(cond));
            }
            let inv = q.try_inverse().ok_or(FlowError::SingularCoupling(f64::INFINITY))?;
            dj.push(diag);
            pj.push(t * inv);
        }
        dd.push(dj);
        p.push(pj);
    }
    Ok(Coefficients {
        a,
        a_dagger: ad,
        d_dagger: dd,
        p,
    })
}

/// Everything the time stepper needs from one state.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub shape: PerturbedShape,
    pub coeffs: Coefficients,
    /// Normal-height velocity per chart.
    pub k: Vec<Vec<f64>>,
    /// Junction-node values of `P F` per junction and ring node.
    pub pf: Vec<Vec<[f64; 3]>>,
}

pub fn evaluate(cl: &ReferenceCluster, state: &HeightState) -> Result<Evaluation> {
    let shape = shape_quantities(cl, state)?;
    let coeffs = coefficients(cl, &shape)?;
    let fv: Vec<Vec<f64>> = coeffs
        .a
        .iter()
        .zip(&shape.charts)
        .map(|(a, s)| a.iter().zip(&s.mean_curv).map(|(a, h)| a * h).collect())
        .collect();
    let mut pf = Vec::with_capacity(cl.junctions.len());
    for (jid, jn) in cl.junctions.iter().enumerate() {
        let mut ring = Vec::with_capacity(jn.ring);
        for r in 0..jn.ring {
            let mut fj = nalgebra::Vector3::zeros();
            for m in 0..3 {
                let (c, n) = cl.junction_node(jid, m, r);
                fj[m] = fv[c][n];
            }
            let v = coeffs.p[jid][r] * fj;
            ring.push([v[0], v[1], v[2]]);
        }
        pf.push(ring);
    }
    let k = cl
        .charts
        .iter()
        .enumerate()
        .map(|(c, ch)| {
            (0..ch.grid.len())
                .map(|i| {
                    let ad = coeffs.a_dagger[c][i];
                    if ad == 0.0 {
                        fv[c][i]
                    } else {
                        fv[c][i] + ad * projected_mu(cl, &pf, c, i)
                    }
                })
                .collect()
        })
        .collect();
    Ok(Evaluation {
        shape,
        coeffs,
        k,
        pf,
    })
}

pub fn k_operator(cl: &ReferenceCluster, state: &HeightState) -> Result<Vec<Vec<f64>>> {
    Ok(evaluate(cl, state)?.k)
}

/// Junction residuals at one ring node.
#[derive(Debug, Clone, Copy, Default, Serialize, PartialEq)]
pub struct AngleResidual {
    /// Weighted sum of normal heights.
    pub g1: f64,
    /// `<N1, N2> - cos theta3`.
    pub g2: f64,
    /// `<N2, N3> - cos theta1`.
    pub g3: f64,
    /// `<N3, N1> - cos theta2`.
    pub g_third: f64,
    /// `g2` and `g3` divided by their reference sensitivities.
    pub g2_scaled: f64,
    pub g3_scaled: f64,
}

/// Sensitivity of `<N_a, N_b>` to the jump of the linearized angle
/// quantity; equals `<N*_a, nu*_b>`.
pub fn pairing_scale(cl: &ReferenceCluster, jid: usize, r: usize, a: usize, b: usize) -> f64 {
    let (ca, na) = cl.junction_node(jid, a, r);
    let (cb, _) = cl.junction_node(jid, b, r);
    let eb = cl.junctions[jid].members[b].1;
    cl.fields[ca].normal[na].dot(&cl.fields[cb].conormal[eb.index()][r])
}

pub fn angle_residuals(
    cl: &ReferenceCluster,
    state: &HeightState,
    shape: &PerturbedShape,
) -> Vec<Vec<AngleResidual>> {
    let w = &cl.weights;
    cl.junctions
        .iter()
        .enumerate()
        .map(|(jid, jn)| {
            (0..jn.ring)
                .map(|r| {
                    let mut nn = [Vec3::zeros(); 3];
                    let mut g1 = 0.0;
                    for (m, nm) in nn.iter_mut().enumerate() {
                        let (c, n) = cl.junction_node(jid, m, r);
                        *nm = shape.charts[c].normal[n];
                        g1 += w.gamma[m] * state.rho[c][n];
                    }
                    let g2 = nn[0].dot(&nn[1]) - w.c[2];
                    let g3 = nn[1].dot(&nn[2]) - w.c[0];
                    AngleResidual {
                        g1,
                        g2,
                        g3,
                        g_third: nn[2].dot(&nn[0]) - w.c[1],
                        g2_scaled: g2 / pairing_scale(cl, jid, r, 0, 1),
                        g3_scaled: g3 / pairing_scale(cl, jid, r, 1, 2),
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CompatibilityReport {
    /// Largest |G1|, |G2|, |G3| over junction nodes.
    pub angle: f64,
    /// Largest |sum gamma K| over junction nodes.
    pub sum_gamma_k: f64,
    /// Largest |sum gamma beta H| over junction nodes.
    pub sum_gamma_beta_h: f64,
    /// Ratio of the third residual to the first two (the implied constant).
    pub implied_constant: f64,
}

pub fn check_compatibility(cl: &ReferenceCluster, rho0: &HeightState) -> Result<CompatibilityReport> {
    let ev = evaluate(cl, rho0)?;
    let res = angle_residuals(cl, rho0, &ev.shape);
    let w = &cl.weights;
    let mut rep = CompatibilityReport::default();
    for (jid, jn) in cl.junctions.iter().enumerate() {
        for r in 0..jn.ring {
            let a = res[jid][r];
            rep.angle = rep.angle.max(a.g1.abs()).max(a.g2.abs()).max(a.g3.abs());
            let (mut sk, mut sh) = (0.0, 0.0);
            for m in 0..3 {
                let (c, n) = cl.junction_node(jid, m, r);
                sk += w.gamma[m] * ev.k[c][n];
                sh += w.gamma[m] * w.beta[m] * ev.shape.charts[c].mean_curv[n];
            }
            rep.sum_gamma_k = rep.sum_gamma_k.max(sk.abs());
            rep.sum_gamma_beta_h = rep.sum_gamma_beta_h.max(sh.abs());
        }
    }
    let first = rep.angle.max(rep.sum_gamma_k);
    rep.implied_constant = if first > 0.0 {
        rep.sum_gamma_beta_h / first
    } else {
        0.0
    };
    Ok(rep)
}

/// Weighted area by the trapezoidal rule.
pub fn energy(cl: &ReferenceCluster, shape: &PerturbedShape) -> f64 {
    let mut e = 0.0;
    for (ch, s) in cl.charts.iter().zip(&shape.charts) {
        let g = &ch.grid;
        let gamma = cl.weights.gamma[ch.sheet];
        for k in 0..g.nk {
            for j in 0..g.ring {
                e += gamma * s.sqrt_g[g.idx(k, j)] * quad_weight(g, k);
            }
        }
    }
    e
}

pub fn state_energy(cl: &ReferenceCluster, state: &HeightState) -> Result<f64> {
    Ok(energy(cl, &shape_quantities(cl, state)?))
}
