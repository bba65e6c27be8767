//! Junction attachment: the constraint on normal heights and the matrix that
//! maps them to the tangential junction offsets keeping the sheets attached.

use crate::geometry::{ReferenceCluster, Vec3};
use crate::weights::AngleWeights;
use nalgebra::Matrix3;

#[derive(Debug, Clone, PartialEq)]
pub struct TCoupling {
    pub m: Matrix3<f64>,
}

impl TCoupling {
    pub fn new(w: &AngleWeights) -> Self {
        let (s, c) = (w.s, w.c);
        let m = Matrix3::new(
            0.0,
            c[1] / s[0],
            -c[2] / s[0],
            -c[0] / s[1],
            0.0,
            c[2] / s[1],
            c[0] / s[2],
            -c[1] / s[2],
            0.0,
        );
        Self { m }
    }

    pub fn apply(&self, rho: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..3).map(|j| self.m[(i, j)] * rho[j]).sum();
        }
        out
    }
}

pub fn build_t(w: &AngleWeights) -> TCoupling {
    TCoupling::new(w)
}

pub fn mu_from_rho(t: &TCoupling, rho: [f64; 3]) -> [f64; 3] {
    t.apply(rho)
}

/// Pointwise application along a junction ring.
pub fn mu_from_rho_ring(t: &TCoupling, rho: &[[f64; 3]]) -> Vec<[f64; 3]> {
    rho.iter().map(|r| t.apply(*r)).collect()
}

/// Largest diameter, over junction nodes, of the three displaced copies of
/// the junction point. `rho[j][r]`, `mu[j][r]` are indexed by junction and
/// ring node.
pub fn verify_attachment(
    cluster: &ReferenceCluster,
    rho: &[Vec<[f64; 3]>],
    mu: &[Vec<[f64; 3]>],
) -> f64 {
    let mut worst = 0.0f64;
    for (jid, jn) in cluster.junctions.iter().enumerate() {
        for r in 0..jn.ring {
            let mut pts = [Vec3::zeros(); 3];
            for (m, &(c, end)) in jn.members.iter().enumerate() {
                let (_, node) = cluster.junction_node(jid, m, r);
                let f = &cluster.fields[c];
                let base = cluster.charts[c].positions[node];
                pts[m] = base
                    + f.normal[node] * rho[jid][r][m]
                    + f.conormal[end.index()][r] * mu[jid][r][m];
            }
            for a in 0..3 {
                for b in a + 1..3 {
                    worst = worst.max((pts[a] - pts[b]).norm());
                }
            }
        }
    }
    worst
}
