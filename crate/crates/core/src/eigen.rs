//! The coupled eigenproblem: the energy form `sum gamma |grad w|^2` against
//! the `gamma / beta` weighted mass on the space of fields with vanishing
//! weighted junction sum and pinned outer ends.
//!
//! Curves use linear elements and sheets bilinear elements. The mass is the
//! mean of the consistent and the lumped mass, which cancels the leading
//! discretization error of the eigenvalues on uniform meshes.

use crate::error::{FlowError, Result};
use crate::geometry::{EndCondition, ReferenceCluster};
use crate::solver::{BorderedSolver, Triplets};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    /// `vectors[k][chart][node]`, orthonormal in the weighted mass.
    pub vectors: Vec<Vec<Vec<f64>>>,
    pub mass_weights: [f64; 3],
    pub iterations: usize,
}

/// Reduced matrices with the map from nodal values to reduced unknowns.
#[derive(Debug, Clone)]
pub struct ReducedForms {
    pub stiffness: Triplets<f64>,
    pub mass: Triplets<f64>,
    /// For each stacked node, the reduced unknowns it depends on.
    pub expand: Vec<Vec<(usize, f64)>>,
    pub border: Vec<usize>,
    pub n: usize,
}

fn element_matrices(cl: &ReferenceCluster, chart: usize) -> Result<Vec<(Vec<usize>, DMatrix<f64>, DMatrix<f64>)>> {
    let ch = &cl.charts[chart];
    let f = &cl.fields[chart];
    let g = ch.grid;
    let (gamma, beta) = (cl.weights.gamma[ch.sheet], cl.weights.beta[ch.sheet]);
    let kmax = if g.closed { g.nk } else { g.nk - 1 };
    let mut out = Vec::new();
    let m1c = DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0]);
    let m1l = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
    let k1 = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    let mix = |c: &DMatrix<f64>, l: &DMatrix<f64>| (c + l) * 0.5;
    for k in 0..kmax {
        let kn = (k + 1) % g.nk;
        if ch.dim == 1 {
            let (a, b) = (g.idx(k, 0), g.idx(kn, 0));
            let inv = 0.5 * (1.0 / f.sqrt_g[a] + 1.0 / f.sqrt_g[b]) / g.dx;
            let len = 0.5 * (f.sqrt_g[a] + f.sqrt_g[b]) * g.dx;
            out.push((vec![a, b], &k1 * (gamma * inv), mix(&m1c, &m1l) * (gamma / beta * len)));
        } else {
            for j in 0..g.ring {
                let jn = (j + 1) % g.ring;
                let nodes = vec![g.idx(k, j), g.idx(k, jn), g.idx(kn, j), g.idx(kn, jn)];
                for &i in &nodes {
                    let m = f.metric[i];
                    if m[1].abs() > 1e-12 * (m[0] * m[2]).sqrt() {
                        return Err(FlowError::Unsupported(format!(
                            "chart {chart}: eigenproblem needs an orthogonal chart metric"
                        )));
                    }
                }
                let a: f64 = nodes.iter().map(|&i| f.metric[i][0].sqrt()).sum::<f64>() * 0.25 * g.dx;
                let b: f64 = nodes.iter().map(|&i| f.metric[i][2].sqrt()).sum::<f64>() * 0.25 * g.dy;
                // Kronecker order: x index major, ring index minor.
                let stiff = k1.kronecker(&m1c) * (b / a) + m1c.kronecker(&k1) * (a / b);
                let mass = (m1c.kronecker(&m1c) + m1l.kronecker(&m1l)) * (0.5 * a * b);
                out.push((nodes, stiff * gamma, mass * (gamma / beta)));
            }
        }
    }
    Ok(out)
}

/// Stiffness and mass restricted to the constrained space.
pub fn reduced_forms(cl: &ReferenceCluster) -> Result<ReducedForms> {
    let off = cl.offsets();
    let total = cl.node_count();
    let mut expand: Vec<Vec<(usize, f64)>> = vec![Vec::new(); total];
    let mut assigned = vec![false; total];
    for (c, ch) in cl.charts.iter().enumerate() {
        let g = ch.grid;
        for e in 0..2 {
            if !g.closed && ch.ends[e] == EndCondition::Pinned {
                let k = if e == 0 { 0 } else { g.nk - 1 };
                for j in 0..g.ring {
                    assigned[off[c] + g.idx(k, j)] = true;
                }
            }
        }
    }
    let mut junction_nodes = Vec::new();
    for (jid, jn) in cl.junctions.iter().enumerate() {
        for r in 0..jn.ring {
            let nodes: Vec<usize> = (0..3)
                .map(|m| {
                    let (c, n) = cl.junction_node(jid, m, r);
                    off[c] + n
                })
                .collect();
            for &n in &nodes {
                assigned[n] = true;
            }
            junction_nodes.push(nodes);
        }
    }
    let mut n = 0;
    let mut border = Vec::new();
    for (c, ch) in cl.charts.iter().enumerate() {
        for i in 0..ch.grid.len() {
            let gi = off[c] + i;
            if !assigned[gi] {
                if ch.grid.closed && i < ch.grid.ring {
                    border.push(n);
                }
                expand[gi].push((n, 1.0));
                n += 1;
            }
        }
    }
    let gamma = cl.weights.gamma;
    for nodes in &junction_nodes {
        let (a, b) = (n, n + 1);
        expand[nodes[0]].push((a, 1.0 / gamma[0]));
        expand[nodes[1]].push((a, -1.0 / gamma[1]));
        expand[nodes[1]].push((b, 1.0 / gamma[1]));
        expand[nodes[2]].push((b, -1.0 / gamma[2]));
        border.push(a);
        border.push(b);
        n += 2;
    }
    if n == 0 {
        return Err(FlowError::ShapeMismatch("no free unknowns".into()));
    }
    let mut stiffness = Triplets::new(n);
    let mut mass = Triplets::new(n);
    for c in 0..cl.charts.len() {
        for (nodes, ke, me) in element_matrices(cl, c)? {
            for (p, &np) in nodes.iter().enumerate() {
                for (q, &nq) in nodes.iter().enumerate() {
                    for &(rp, wp) in &expand[off[c] + np] {
                        for &(rq, wq) in &expand[off[c] + nq] {
                            stiffness.add(rp, rq, wp * wq * ke[(p, q)]);
                            mass.add(rp, rq, wp * wq * me[(p, q)]);
                        }
                    }
                }
            }
        }
    }
    Ok(ReducedForms {
        stiffness,
        mass,
        expand,
        border,
        n,
    })
}

impl ReducedForms {
    fn to_nodal(&self, cl: &ReferenceCluster, x: &[f64]) -> Vec<Vec<f64>> {
        let off = cl.offsets();
        (0..cl.charts.len())
            .map(|c| {
                (off[c]..off[c + 1])
                    .map(|g| self.expand[g].iter().map(|&(r, w)| w * x[r]).sum())
                    .collect()
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Generalized symmetric eigenproblem `A x = lambda B x` for small dense
/// matrices, ascending.
/// Symmetric standard form `L^-1 A L^-T` of the pencil with `B = L L^T`,
/// together with `L^-1`.
fn standard_form(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| FlowError::SingularSystem("mass matrix is not positive definite".into()))?;
    let linv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| FlowError::SingularSystem("mass factor".into()))?;
    let c = &linv * a * linv.transpose();
    Ok(((&c + c.transpose()) * 0.5, linv))
}

fn dense_pencil(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (c, linv) = standard_form(a, b)?;
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(a.nrows(), order.len());
    let back = linv.transpose() * &eig.eigenvectors;
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, &back.column(i));
    }
    Ok((vals, vecs))
}

/// Brute-force dense eigenvalues of the reduced problem, without vectors.
pub fn dense_eigenvalues(cl: &ReferenceCluster, count: usize) -> Result<Vec<f64>> {
    let forms = reduced_forms(cl)?;
    let (c, _) = standard_form(&forms.stiffness.to_dense(), &forms.mass.to_dense())?;
    let mut vals: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals.truncate(count);
    Ok(vals)
}

/// Brute-force dense solve of the reduced problem.
pub fn dense_eigen(cl: &ReferenceCluster, count: usize) -> Result<EigenSystem> {
    let forms = reduced_forms(cl)?;
    let (vals, vecs) = dense_pencil(&forms.stiffness.to_dense(), &forms.mass.to_dense())?;
    let count = count.min(vals.len());
    Ok(EigenSystem {
        eigenvalues: vals[..count].to_vec(),
        vectors: (0..count)
            .map(|k| forms.to_nodal(cl, vecs.column(k).as_slice()))
            .collect(),
        mass_weights: mass_weights(cl),
        iterations: 0,
    })
}

fn mass_weights(cl: &ReferenceCluster) -> [f64; 3] {
    let w = &cl.weights;
    [0, 1, 2].map(|i| w.gamma[i] / w.beta[i])
}

/// Smallest `count` eigenpairs by shift-invert subspace iteration with
/// Rayleigh-Ritz projection.
pub fn solve_eigen(cl: &ReferenceCluster, count: usize) -> Result<EigenSystem> {
    let forms = reduced_forms(cl)?;
    let n = forms.n;
    if count == 0 || 2 * count > n {
        return Err(FlowError::ShapeMismatch(format!(
            "{count} eigenpairs requested from {n} unknowns"
        )));
    }
    let shift = -1.0 / (cl.scale() * cl.scale());
    let mut shifted = forms.stiffness.clone();
    for &(i, j, v) in &forms.mass.entries {
        shifted.entries.push((i, j, -shift * v));
    }
    let lu = BorderedSolver::factor(&shifted, &forms.border)?;
    let p = (2 * count).max(count + 8).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut block: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut prev = vec![f64::INFINITY; count];
    let mut iterations = 0;
    let mut vals = Vec::new();
    for it in 1..=1000 {
        iterations = it;
        let mut next = Vec::with_capacity(p);
        for x in &block {
            next.push(lu.solve(&forms.mass.mul(x))?);
        }
        let ky: Vec<Vec<f64>> = next.iter().map(|y| forms.stiffness.mul(y)).collect();
        let my: Vec<Vec<f64>> = next.iter().map(|y| forms.mass.mul(y)).collect();
        let kr = DMatrix::from_fn(p, p, |a, b| dot(&next[a], &ky[b]));
        let mr = DMatrix::from_fn(p, p, |a, b| dot(&next[a], &my[b]));
        let kr = (&kr + kr.transpose()) * 0.5;
        let mr = (&mr + mr.transpose()) * 0.5;
        let (rv, rvec) = dense_pencil(&kr, &mr)?;
        block = (0..p)
            .map(|c| {
                let mut v = vec![0.0; n];
                for (a, y) in next.iter().enumerate() {
                    let w = rvec[(a, c)];
                    for (vi, yi) in v.iter_mut().zip(y) {
                        *vi += w * yi;
                    }
                }
                v
            })
            .collect();
        vals = rv;
        // Zero modes converge to rounding noise, so the floor scales with the shift.
        let floor = 1e-14 * vals[count - 1].abs().max(shift.abs());
        let done = (0..count).all(|i| (vals[i] - prev[i]).abs() <= (1e-14 * vals[i].abs()).max(floor));
        prev.copy_from_slice(&vals[..count]);
        if done {
            break;
        }
    }
    let vectors = block[..count]
        .iter()
        .map(|x| {
            let nrm = dot(x, &forms.mass.mul(x)).sqrt();
            let x: Vec<f64> = x.iter().map(|v| v / nrm).collect();
            forms.to_nodal(cl, &x)
        })
        .collect();
    Ok(EigenSystem {
        eigenvalues: vals[..count].to_vec(),
        vectors,
        mass_weights: mass_weights(cl),
        iterations,
    })
}

/// Weighted mass product and energy form of nodal fields.
pub fn forms_of(cl: &ReferenceCluster, u: &[Vec<f64>], v: &[Vec<f64>]) -> Result<(f64, f64)> {
    let (mut m, mut q) = (0.0, 0.0);
    for c in 0..cl.charts.len() {
        for (nodes, ke, me) in element_matrices(cl, c)? {
            let a = DVector::from_iterator(nodes.len(), nodes.iter().map(|&i| u[c][i]));
            let b = DVector::from_iterator(nodes.len(), nodes.iter().map(|&i| v[c][i]));
            m += a.dot(&(&me * &b));
            q += a.dot(&(&ke * &b));
        }
    }
    Ok((m, q))
}
