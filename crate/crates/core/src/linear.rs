//! The linearized junction problem: implicit Euler rows for the interior
//! operator with the nonlocal junction coupling, and three boundary rows per
//! junction node.
//!
//! Two closures of the conormal derivative are offered. `OneSided` uses the
//! second-order three-point difference and is the exact linearization of the
//! discrete angle residuals (the flow uses it). `HalfCell` balances fluxes
//! over the half cell next to the junction; with it the strong rows are an
//! exact rearrangement of the lumped weak form.

use crate::error::{FlowError, Result};
use crate::geometry::{End, EndCondition, ReferenceCluster};
use crate::solver::{solve_refined, BorderedSolver, Triplets};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Closure {
    OneSided,
    HalfCell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowClass {
    Interior,
    Pinned,
    /// `row` 0 is the weighted sum, 1 and 2 the conormal jumps.
    Junction { junction: usize, ring: usize, row: usize },
}

/// Right-hand side data: interior source, junction data `b[junction][ring]`
/// (entry 0 must vanish for compatibility) and the previous state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearData {
    pub f: Vec<Vec<f64>>,
    pub b: Vec<Vec<[f64; 3]>>,
    pub u_old: Vec<Vec<f64>>,
}

impl LinearData {
    pub fn zeros(cl: &ReferenceCluster) -> Self {
        let z: Vec<Vec<f64>> = cl.charts.iter().map(|c| vec![0.0; c.grid.len()]).collect();
        Self {
            f: z.clone(),
            b: cl.junctions.iter().map(|j| vec![[0.0; 3]; j.ring]).collect(),
            u_old: z,
        }
    }

    fn check(&self, cl: &ReferenceCluster) -> Result<()> {
        let bad = |what: &str| Err(FlowError::ShapeMismatch(format!("{what} does not match the cluster")));
        for (v, name) in [(&self.f, "f"), (&self.u_old, "u_old")] {
            if v.len() != cl.charts.len() || v.iter().zip(&cl.charts).any(|(a, c)| a.len() != c.grid.len()) {
                return bad(name);
            }
        }
        if self.b.len() != cl.junctions.len() || self.b.iter().zip(&cl.junctions).any(|(b, j)| b.len() != j.ring) {
            return bad("b");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LinearJunctionSystem {
    pub matrix: Triplets<f64>,
    pub rhs: Vec<f64>,
    pub rows: Vec<RowClass>,
    /// `None` for the stationary operator.
    pub dt: Option<f64>,
    pub closure: Closure,
    /// Unknowns coupled beyond the band (junction nodes, closed seams).
    pub border: Vec<usize>,
    pub offsets: Vec<usize>,
}

pub fn stack(fields: &[Vec<f64>]) -> Vec<f64> {
    fields.iter().flatten().copied().collect()
}

pub fn unstack(cl: &ReferenceCluster, v: &[f64]) -> Vec<Vec<f64>> {
    let off = cl.offsets();
    (0..cl.charts.len()).map(|c| v[off[c]..off[c + 1]].to_vec()).collect()
}

/// `zeta = beta <grad H*, tau*>`, zero off the cutoff supports.
pub fn zeta(cl: &ReferenceCluster, chart: usize) -> Vec<f64> {
    let beta = cl.weights.beta[cl.charts[chart].sheet];
    let f = &cl.fields[chart];
    f.grad_h_tau
        .iter()
        .zip(&f.support)
        .map(|(g, s)| if s.is_some() { beta * g } else { 0.0 })
        .collect()
}

/// Classification of every node of every chart.
pub fn row_classes(cl: &ReferenceCluster) -> Vec<RowClass> {
    let mut rows = Vec::with_capacity(cl.node_count());
    for ch in &cl.charts {
        let g = ch.grid;
        for k in 0..g.nk {
            for _ in 0..g.ring {
                let cond = if g.closed {
                    EndCondition::Closed
                } else if k == 0 {
                    ch.ends[0]
                } else if k + 1 == g.nk {
                    ch.ends[1]
                } else {
                    EndCondition::Closed
                };
                rows.push(match cond {
                    EndCondition::Pinned => RowClass::Pinned,
                    _ => RowClass::Interior,
                });
            }
        }
    }
    let off = cl.offsets();
    for (jid, jn) in cl.junctions.iter().enumerate() {
        for r in 0..jn.ring {
            for m in 0..3 {
                let (c, n) = cl.junction_node(jid, m, r);
                rows[off[c] + n] = RowClass::Junction {
                    junction: jid,
                    ring: r,
                    row: m,
                };
            }
        }
    }
    rows
}

fn border_nodes(cl: &ReferenceCluster) -> Vec<usize> {
    let off = cl.offsets();
    let mut b = Vec::new();
    for (jid, jn) in cl.junctions.iter().enumerate() {
        for r in 0..jn.ring {
            for m in 0..3 {
                let (c, n) = cl.junction_node(jid, m, r);
                b.push(off[c] + n);
            }
        }
    }
    for (c, ch) in cl.charts.iter().enumerate() {
        if ch.grid.closed {
            for j in 0..ch.grid.ring {
                b.push(off[c] + j);
            }
        }
    }
    b
}

/// `sqrt(g) g^{11}` and `sqrt(g) g^{22}` at a node.
fn flux_coeffs(m: [f64; 3]) -> (f64, f64, f64) {
    let det = m[0] * m[2] - m[1] * m[1];
    let sg = det.sqrt();
    (m[2] / sg, m[0] / sg, -m[1] / sg)
}

/// `sqrt(g) g^{11}` on the edge between nodes `k` and `kn` of ring `j`.
/// Curves take the chord, which stays smooth up to the junction node;
/// sheets average the two nodes.
pub(crate) fn edge_flux(cl: &ReferenceCluster, chart: usize, k: usize, kn: usize, j: usize) -> f64 {
    let ch = &cl.charts[chart];
    let g = ch.grid;
    if ch.dim == 1 {
        g.dx / (ch.positions[g.idx(kn, j)] - ch.positions[g.idx(k, j)]).norm()
    } else {
        let m = &cl.fields[chart].metric;
        0.5 * (flux_coeffs(m[g.idx(k, j)]).0 + flux_coeffs(m[g.idx(kn, j)]).0)
    }
}

/// Flux-form Laplace-Beltrami stencil at an interior node, local indices.
pub fn laplacian_stencil(cl: &ReferenceCluster, chart: usize, k: usize, j: usize) -> Vec<(usize, f64)> {
    let ch = &cl.charts[chart];
    let f = &cl.fields[chart];
    let g = ch.grid;
    let kw = |d: isize| (k as isize + d).rem_euclid(g.nk as isize) as usize;
    let jw = |d: isize| (j as isize + d).rem_euclid(g.ring as isize) as usize;
    let i = g.idx(k, j);
    let inv = 1.0 / f.sqrt_g[i];
    let c = |kk: usize, jj: usize| flux_coeffs(f.metric[g.idx(kk, jj)]);
    let mut out = Vec::with_capacity(9);
    let (kp, km) = (kw(1), kw(-1));
    let cxp = edge_flux(cl, chart, k, kp, j) / (g.dx * g.dx);
    let cxm = edge_flux(cl, chart, k, km, j) / (g.dx * g.dx);
    out.push((g.idx(kp, j), cxp * inv));
    out.push((g.idx(km, j), cxm * inv));
    out.push((i, -(cxp + cxm) * inv));
    if ch.dim == 2 {
        let (jp, jm) = (jw(1), jw(-1));
        let cyp = 0.5 * (c(k, j).1 + c(k, jp).1) / (g.dy * g.dy);
        let cym = 0.5 * (c(k, j).1 + c(k, jm).1) / (g.dy * g.dy);
        out.push((g.idx(k, jp), cyp * inv));
        out.push((g.idx(k, jm), cym * inv));
        out.push((i, -(cyp + cym) * inv));
        let q = 0.25 / (g.dx * g.dy) * inv;
        let (c12kp, c12km, c12jp, c12jm) = (c(kp, j).2, c(km, j).2, c(k, jp).2, c(k, jm).2);
        if c12kp != 0.0 || c12km != 0.0 || c12jp != 0.0 || c12jm != 0.0 {
            out.push((g.idx(kp, jp), q * (c12kp + c12jp)));
            out.push((g.idx(kp, jm), -q * (c12kp + c12jm)));
            out.push((g.idx(km, jp), -q * (c12km + c12jp)));
            out.push((g.idx(km, jm), q * (c12km + c12jm)));
        }
    }
    out
}

/// Ring part of the Laplacian at an end node (zero for curves).
fn ring_laplacian(cl: &ReferenceCluster, chart: usize, k: usize, j: usize) -> Vec<(usize, f64)> {
    let ch = &cl.charts[chart];
    if ch.dim == 1 {
        return Vec::new();
    }
    let f = &cl.fields[chart];
    let g = ch.grid;
    let jw = |d: isize| (j as isize + d).rem_euclid(g.ring as isize) as usize;
    let i = g.idx(k, j);
    let inv = 1.0 / f.sqrt_g[i];
    let c = |jj: usize| flux_coeffs(f.metric[g.idx(k, jj)]).1;
    let cyp = 0.5 * (c(j) + c(jw(1))) / (g.dy * g.dy);
    let cym = 0.5 * (c(j) + c(jw(-1))) / (g.dy * g.dy);
    vec![
        (g.idx(k, jw(1)), cyp * inv),
        (g.idx(k, jw(-1)), cym * inv),
        (i, -(cyp + cym) * inv),
    ]
}

/// Three-point one-sided stencil of `<grad u, nu*>` at a junction node.
pub fn normal_derivative_stencil(cl: &ReferenceCluster, chart: usize, end: End, j: usize) -> Vec<(usize, f64)> {
    let ch = &cl.charts[chart];
    let f = &cl.fields[chart];
    let g = ch.grid;
    let i = ch.end_node(end, j);
    let nu = f.conormal[end.index()][j];
    let m = f.metric[i];
    let det = m[0] * m[2] - m[1] * m[1];
    let inv = [m[2] / det, -m[1] / det, m[0] / det];
    let (px, py) = (f.sx[i].dot(&nu), if ch.dim == 2 { f.sy[i].dot(&nu) } else { 0.0 });
    // coefficient of u_x and u_y in <grad u, nu>
    let wx = inv[0] * px + inv[1] * py;
    let wy = inv[1] * px + inv[2] * py;
    let (k0, k1, k2, s) = match end {
        End::Start => (0, 1, 2, 1.0),
        End::Finish => (g.nk - 1, g.nk - 2, g.nk - 3, -1.0),
    };
    let h = 0.5 / g.dx * s;
    let mut out = vec![
        (g.idx(k0, j), -3.0 * h * wx),
        (g.idx(k1, j), 4.0 * h * wx),
        (g.idx(k2, j), -h * wx),
    ];
    if ch.dim == 2 && wy != 0.0 {
        let jp = (j + 1) % g.ring;
        let jm = (j + g.ring - 1) % g.ring;
        out.push((g.idx(k0, jp), wy * 0.5 / g.dy));
        out.push((g.idx(k0, jm), -wy * 0.5 / g.dy));
    }
    out
}

pub fn normal_derivative(cl: &ReferenceCluster, chart: usize, end: End, j: usize, u: &[f64]) -> f64 {
    normal_derivative_stencil(cl, chart, end, j)
        .into_iter()
        .map(|(n, w)| w * u[n])
        .sum()
}

fn check_orthogonal(cl: &ReferenceCluster) -> Result<()> {
    for (c, f) in cl.fields.iter().enumerate() {
        if f.metric.iter().any(|m| m[1].abs() > 1e-12 * (m[0] * m[2]).sqrt()) {
            return Err(FlowError::Unsupported(format!(
                "chart {c}: half-cell closure needs an orthogonal chart metric"
            )));
        }
    }
    Ok(())
}

/// Geometry of the half cell next to a junction node.
struct HalfCell {
    /// Length of the half cell along the chart (per unit ring length).
    mass: f64,
    /// Coefficient of `u0 - u1` in the conormal flux.
    flux: f64,
    inner: usize,
}

fn half_cell(cl: &ReferenceCluster, chart: usize, end: End, j: usize) -> HalfCell {
    let ch = &cl.charts[chart];
    let f = &cl.fields[chart];
    let g = ch.grid;
    let (k0, k1) = match end {
        End::Start => (0, 1),
        End::Finish => (g.nk - 1, g.nk - 2),
    };
    let (i0, i1) = (g.idx(k0, j), g.idx(k1, j));
    let sy = f.metric[i0][2].sqrt();
    let c = edge_flux(cl, chart, k0, k1, j);
    HalfCell {
        mass: f.sqrt_g[i0] * g.dx / (2.0 * sy),
        flux: c / (g.dx * sy),
        inner: i1,
    }
}

/// Matrix of the linear problem together with row classes and border set.
pub fn operator(cl: &ReferenceCluster, dt: Option<f64>, closure: Closure) -> Result<(Triplets<f64>, Vec<RowClass>, Vec<usize>)> {
    if let Some(d) = dt {
        if !(d > 0.0 && d.is_finite()) {
            return Err(FlowError::ShapeMismatch(format!("time step {d} must be positive")));
        }
    }
    if closure == Closure::HalfCell {
        check_orthogonal(cl)?;
    }
    let inv_dt = dt.map_or(0.0, |d| 1.0 / d);
    let off = cl.offsets();
    let rows = row_classes(cl);
    let n = cl.node_count();
    let mut a = Triplets::new(n);
    let t = &cl.coupling.m;
    let zetas: Vec<Vec<f64>> = (0..cl.charts.len()).map(|c| zeta(cl, c)).collect();

    for (c, ch) in cl.charts.iter().enumerate() {
        let f = &cl.fields[c];
        let g = ch.grid;
        let beta = cl.weights.beta[ch.sheet];
        for k in 0..g.nk {
            for j in 0..g.ring {
                let i = g.idx(k, j);
                let row = off[c] + i;
                match rows[row] {
                    RowClass::Pinned => a.add(row, row, 1.0),
                    RowClass::Junction { .. } => {}
                    RowClass::Interior => {
                        a.add(row, row, inv_dt - beta * f.pi_sq[i]);
                        for (nb, w) in laplacian_stencil(cl, c, k, j) {
                            a.add(row, off[c] + nb, -beta * w);
                        }
                        let z = zetas[c][i];
                        if z != 0.0 {
                            let p = cl.project_to_junction(c, i).expect("support node projects");
                            for m in 0..3 {
                                let (cm, nm) = cl.junction_node(p.junction, m, p.ring);
                                a.add(row, off[cm] + nm, -z * t[(ch.sheet, m)]);
                            }
                        }
                    }
                }
            }
        }
    }

    for (jid, jn) in cl.junctions.iter().enumerate() {
        for r in 0..jn.ring {
            let mut node = [0usize; 3];
            for (m, nd) in node.iter_mut().enumerate() {
                let (cm, nm) = cl.junction_node(jid, m, r);
                *nd = off[cm] + nm;
            }
            for m in 0..3 {
                a.add(node[0], node[m], cl.weights.gamma[m]);
            }
            // q_m as a list of (global column, coefficient)
            let q: Vec<Vec<(usize, f64)>> = (0..3)
                .map(|m| {
                    let (cm, end) = jn.members[m];
                    let f = &cl.fields[cm];
                    let beta = cl.weights.beta[m];
                    let kap = f.kappa[end.index()][r];
                    let mut row: Vec<(usize, f64)> = Vec::new();
                    match closure {
                        Closure::OneSided => {
                            for (nb, w) in normal_derivative_stencil(cl, cm, end, r) {
                                row.push((off[cm] + nb, w));
                            }
                        }
                        Closure::HalfCell => {
                            let hc = half_cell(cl, cm, end, r);
                            let i0 = cl.charts[cm].end_node(end, r);
                            let k0 = end.k(&cl.charts[cm].grid);
                            row.push((node[m], hc.flux + hc.mass * (inv_dt / beta - f.pi_sq[i0])));
                            row.push((off[cm] + hc.inner, -hc.flux));
                            for (nb, w) in ring_laplacian(cl, cm, k0, r) {
                                row.push((off[cm] + nb, -hc.mass * w));
                            }
                            let z = zetas[cm][i0] / beta;
                            for l in 0..3 {
                                row.push((node[l], -hc.mass * z * t[(m, l)]));
                            }
                        }
                    }
                    for l in 0..3 {
                        row.push((node[l], kap * t[(m, l)]));
                    }
                    row
                })
                .collect();
            for (rr, (pa, pb)) in [(1usize, (0usize, 1usize)), (2, (1, 2))] {
                for &(col, w) in &q[pa] {
                    a.add(node[rr], col, w);
                }
                for &(col, w) in &q[pb] {
                    a.add(node[rr], col, -w);
                }
            }
        }
    }
    Ok((a, rows, border_nodes(cl)))
}

/// Right-hand side matching [`operator`].
pub fn right_hand_side(
    cl: &ReferenceCluster,
    dt: Option<f64>,
    closure: Closure,
    data: &LinearData,
    rows: &[RowClass],
) -> Vec<f64> {
    let inv_dt = dt.map_or(0.0, |d| 1.0 / d);
    let off = cl.offsets();
    let mut rhs = vec![0.0; cl.node_count()];
    for (c, ch) in cl.charts.iter().enumerate() {
        for i in 0..ch.grid.len() {
            let row = off[c] + i;
            if rows[row] == RowClass::Interior {
                rhs[row] = data.f[c][i] + data.u_old[c][i] * inv_dt;
            }
        }
    }
    for (jid, jn) in cl.junctions.iter().enumerate() {
        for r in 0..jn.ring {
            let b = data.b[jid][r];
            let mut extra = [0.0; 3];
            if closure == Closure::HalfCell {
                for (m, e) in extra.iter_mut().enumerate() {
                    let (cm, end) = jn.members[m];
                    let beta = cl.weights.beta[m];
                    let hc = half_cell(cl, cm, end, r);
                    let i0 = cl.charts[cm].end_node(end, r);
                    *e = -hc.mass * (data.u_old[cm][i0] * inv_dt + data.f[cm][i0]) / beta;
                }
            }
            let node = |m: usize| {
                let (cm, nm) = cl.junction_node(jid, m, r);
                off[cm] + nm
            };
            rhs[node(0)] = b[0];
            rhs[node(1)] = b[1] - (extra[0] - extra[1]);
            rhs[node(2)] = b[2] - (extra[1] - extra[2]);
        }
    }
    rhs
}

pub fn assemble(cl: &ReferenceCluster, dt: Option<f64>, closure: Closure, data: &LinearData) -> Result<LinearJunctionSystem> {
    data.check(cl)?;
    let (matrix, rows, border) = operator(cl, dt, closure)?;
    let rhs = right_hand_side(cl, dt, closure, data, &rows);
    Ok(LinearJunctionSystem {
        matrix,
        rhs,
        rows,
        dt,
        closure,
        border,
        offsets: cl.offsets(),
    })
}

impl LinearJunctionSystem {
    pub fn factor(&self) -> Result<BorderedSolver<f64>> {
        BorderedSolver::factor(&self.matrix, &self.border)
    }

    /// Largest row residual of a stacked candidate.
    pub fn residual(&self, u: &[f64]) -> f64 {
        let mu = self.matrix.mul(u);
        mu.iter().zip(&self.rhs).fold(0.0f64, |a, (x, b)| a.max((x - b).abs()))
    }
}

/// Direct solve of an assembled system; the residual is checked against
/// `1e-10 |rhs|`.
pub fn solve_step(sys: &LinearJunctionSystem) -> Result<Vec<f64>> {
    let lu = sys.factor()?;
    let u = solve_refined(&sys.matrix, &lu, &sys.rhs)?;
    let res = sys.residual(&u);
    let scale = sys.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if !(res <= 1e-10 * scale) && !(res == 0.0) {
        return Err(FlowError::SingularSystem(format!(
            "residual {res:.3e} against right-hand side {scale:.3e}, matrix norm {:.3e}",
            sys.matrix.norm_inf()
        )));
    }
    Ok(u)
}

/// Largest mismatch of the lumped weak form over the nodal test basis of
/// the constrained space, each entry divided by the energy norm
/// `sqrt(sum gamma |grad xi|^2)` of its test function. `u_old` and `dt` supply the discrete time derivative.
pub fn weak_residual(
    cl: &ReferenceCluster,
    u: &[Vec<f64>],
    u_old: &[Vec<f64>],
    dt: f64,
    f: &[Vec<f64>],
    b: &[Vec<[f64; 3]>],
) -> Result<f64> {
    check_orthogonal(cl)?;
    let w = &cl.weights;
    let t = &cl.coupling.m;
    let rows = row_classes(cl);
    let off = cl.offsets();
    let mut worst = 0.0f64;
    // Per-node weak contributions of the test hat at that node (times gamma/beta
    // for the mass terms), skipping the boundary integral.
    let mut contrib: Vec<Vec<f64>> = Vec::with_capacity(cl.charts.len());
    let mut energies: Vec<Vec<f64>> = Vec::with_capacity(cl.charts.len());
    for (c, ch) in cl.charts.iter().enumerate() {
        let fl = &cl.fields[c];
        let g = ch.grid;
        let (gamma, beta) = (w.gamma[ch.sheet], w.beta[ch.sheet]);
        let z = zeta(cl, c);
        let mut out = vec![0.0; g.len()];
        let mut mass_out = vec![0.0; g.len()];
        for k in 0..g.nk {
            for j in 0..g.ring {
                let i = g.idx(k, j);
                let mass = fl.sqrt_g[i] * crate::geometry::quad_weight(&g, k);
                let tu = if z[i] != 0.0 {
                    let p = cl.project_to_junction(c, i).expect("support node projects");
                    (0..3)
                        .map(|m| {
                            let (cm, nm) = cl.junction_node(p.junction, m, p.ring);
                            t[(ch.sheet, m)] * u[cm][nm]
                        })
                        .sum::<f64>()
                } else {
                    0.0
                };
                let mut stiff = 0.0;
                let mut v = gamma / beta
                    * mass
                    * ((u[c][i] - u_old[c][i]) / dt - beta * fl.pi_sq[i] * u[c][i] - z[i] * tu - f[c][i]);
                // stiffness: edges along k
                for d in [-1isize, 1] {
                    let kn = k as isize + d;
                    let kn = if g.closed {
                        kn.rem_euclid(g.nk as isize) as usize
                    } else if kn < 0 || kn >= g.nk as isize {
                        continue;
                    } else {
                        kn as usize
                    };
                    let ce = edge_flux(cl, c, k, kn, j);
                    v += gamma * ce * (u[c][i] - u[c][g.idx(kn, j)]) * g.dy / g.dx;
                    stiff += gamma * ce * g.dy / g.dx;
                }
                if ch.dim == 2 {
                    let wk = quad_weight_k(&g, k);
                    let c22 = |jj: usize| flux_coeffs(fl.metric[g.idx(k, jj)]).1;
                    for d in [-1isize, 1] {
                        let jn = (j as isize + d).rem_euclid(g.ring as isize) as usize;
                        let ce = 0.5 * (c22(j) + c22(jn));
                        v += gamma * ce * (u[c][i] - u[c][g.idx(k, jn)]) * wk / g.dy;
                        stiff += gamma * ce * wk / g.dy;
                    }
                }
                out[i] = v;
                mass_out[i] = stiff;
            }
        }
        contrib.push(out);
        energies.push(mass_out);
    }
    for (c, ch) in cl.charts.iter().enumerate() {
        for i in 0..ch.grid.len() {
            if rows[off[c] + i] == RowClass::Interior {
                worst = worst.max(contrib[c][i].abs() / energies[c][i].sqrt());
            }
        }
    }
    for (jid, jn) in cl.junctions.iter().enumerate() {
        for r in 0..jn.ring {
            let mut val = [0.0; 3];
            let mut mass = [0.0; 3];
            let mut tu = [0.0; 3];
            for m in 0..3 {
                for l in 0..3 {
                    let (cl_, nl) = cl.junction_node(jid, l, r);
                    tu[m] += t[(m, l)] * u[cl_][nl];
                }
            }
            for m in 0..3 {
                let (cm, end) = jn.members[m];
                let (_, nm) = cl.junction_node(jid, m, r);
                let fl = &cl.fields[cm];
                let g = cl.charts[cm].grid;
                let line = fl.metric[nm][2].sqrt() * g.dy;
                val[m] = contrib[cm][nm] + w.gamma[m] * fl.kappa[end.index()][r] * tu[m] * line;
                mass[m] = energies[cm][nm];
            }
            let (_, n0) = cl.junction_node(jid, 0, r);
            let (c0, _) = jn.members[0];
            let line = cl.fields[c0].metric[n0][2].sqrt() * cl.charts[c0].grid.dy;
            let bj = b[jid][r];
            for xi in [
                [1.0 / w.gamma[0], -1.0 / w.gamma[1], 0.0],
                [0.0, 1.0 / w.gamma[1], -1.0 / w.gamma[2]],
            ] {
                let lhs: f64 = (0..3).map(|m| xi[m] * val[m]).sum();
                let rhs = (w.gamma[0] * (bj[1] + bj[2]) * xi[0] + w.gamma[1] * bj[2] * xi[1]) * line;
                let norm: f64 = (0..3).map(|m| xi[m] * xi[m] * mass[m]).sum::<f64>().sqrt();
                worst = worst.max((lhs - rhs).abs() / norm);
            }
        }
    }
    Ok(worst)
}

/// Parameter length of the cell around row `k` (half at open ends).
fn quad_weight_k(g: &crate::stencil::Grid, k: usize) -> f64 {
    if !g.closed && (k == 0 || k + 1 == g.nk) {
        0.5 * g.dx
    } else {
        g.dx
    }
}
