//! Reference clusters: charts, junction descriptors and the geometric fields
//! every operator reads (normals, conormals, tangential extension, metric,
//! curvatures).

use crate::attachment::TCoupling;
use crate::error::{FlowError, Result};
use crate::stencil::Grid;
use crate::weights::AngleWeights;
use nalgebra::Vector3;
use serde::Serialize;
use std::f64::consts::PI;

pub type Vec3 = Vector3<f64>;

/// Largest angular distance (radians) between measured conormals and the
/// nearest force-balanced frame that is still accepted.
pub const FRAME_SNAP_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum End {
    Start,
    Finish,
}

impl End {
    pub fn index(self) -> usize {
        match self {
            End::Start => 0,
            End::Finish => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            End::Start
        } else {
            End::Finish
        }
    }

    pub fn k(self, grid: &Grid) -> usize {
        match self {
            End::Start => 0,
            End::Finish => grid.nk - 1,
        }
    }

    /// Sign relating the chart tangent to the outward conormal.
    pub fn outward_sign(self) -> f64 {
        match self {
            End::Start => -1.0,
            End::Finish => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndCondition {
    Pinned,
    Junction(usize),
    Closed,
}

#[derive(Debug, Clone)]
pub struct DiscreteChart {
    pub sheet: usize,
    pub dim: usize,
    pub grid: Grid,
    pub positions: Vec<Vec3>,
    /// Lattice translation across the ring seam (zero for curves).
    pub period: Vec3,
    pub ends: [EndCondition; 2],
}

impl DiscreteChart {
    pub fn end_node(&self, end: End, j: usize) -> usize {
        self.grid.idx(end.k(&self.grid), j)
    }

    pub fn junction_ends(&self) -> impl Iterator<Item = (End, usize)> + '_ {
        (0..2).filter_map(move |e| match self.ends[e] {
            EndCondition::Junction(id) => Some((End::from_index(e), id)),
            _ => None,
        })
    }
}

/// Three charts sharing a junction; member `i` belongs to sheet `i`.
#[derive(Debug, Clone)]
pub struct Junction {
    pub members: [(usize, End); 3],
    /// Sign of the rotation turning the conormals in their cyclic order.
    pub orientation: f64,
    /// Line direction (the rotation axis) per ring node.
    pub axis: Vec<Vec3>,
    pub ring: usize,
}

/// Analytic data of a planar chart, used instead of finite differences.
#[derive(Debug, Clone)]
pub struct ExactCurve {
    pub unit_tangent: Vec<Vec3>,
    /// Curvature measured against the +90 degree rotation of the tangent.
    pub curvature: Vec<f64>,
    pub arclength: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ClusterInput {
    pub charts: Vec<DiscreteChart>,
    pub exact: Vec<Option<ExactCurve>>,
    pub junctions: Vec<[(usize, End); 3]>,
    /// Closed loops of charts bounding planar regions; `true` reverses a chart.
    pub regions: Vec<Vec<(usize, bool)>>,
    pub pinned_outer: bool,
}

#[derive(Debug, Clone)]
pub struct ChartFields {
    pub orientation: f64,
    pub sx: Vec<Vec3>,
    pub sy: Vec<Vec3>,
    pub sxx: Vec<Vec3>,
    pub sxy: Vec<Vec3>,
    pub syy: Vec<Vec3>,
    pub normal: Vec<Vec3>,
    /// Normal recomputed from finite differences of the positions alone.
    pub normal_fd: Vec<Vec3>,
    pub sqrt_g: Vec<f64>,
    /// `[g11, g12, g22]`; curves store `[g11, 0, 1]`.
    pub metric: Vec<[f64; 3]>,
    pub pi_sq: Vec<f64>,
    pub mean_curv: Vec<f64>,
    /// Mean curvature of the positions by finite differences.
    pub mean_curv_fd: Vec<f64>,
    pub tau: Vec<Vec3>,
    pub cut: Vec<f64>,
    pub support: Vec<Option<End>>,
    /// Intrinsic distance to each end along the parameter direction.
    pub dist: [Vec<f64>; 2],
    /// Outward conormal at each end, one entry per ring node.
    pub conormal: [Vec<Vec3>; 2],
    pub kappa: [Vec<f64>; 2],
    pub grad_h_tau: Vec<f64>,
    pub tau_slope_max: f64,
    pub length: f64,
}

#[derive(Debug, Clone)]
pub struct ReferenceCluster {
    pub weights: AngleWeights,
    pub coupling: TCoupling,
    pub charts: Vec<DiscreteChart>,
    pub fields: Vec<ChartFields>,
    pub junctions: Vec<Junction>,
    pub regions: Vec<Vec<(usize, bool)>>,
    pub r0: f64,
    pub pinned_outer: bool,
    pub exact: Vec<Option<ExactCurve>>,
}

/// Location of a node's projection onto the junction set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projection {
    pub junction: usize,
    pub end: End,
    pub ring: usize,
    /// The node lies outside the cutoff support.
    pub outside: bool,
}

pub fn rot90(v: &Vec3) -> Vec3 {
    Vec3::new(-v.y, v.x, 0.0)
}

/// Quintic smoothstep falling from 1 at 0 to 0 at 1.
pub fn cutoff(t: f64) -> f64 {
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

pub fn cutoff_slope(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        -30.0 * t * t * (1.0 - t) * (1.0 - t)
    }
}

pub fn quad_weight(grid: &Grid, k: usize) -> f64 {
    let w = grid.dx * grid.dy;
    if !grid.closed && (k == 0 || k + 1 == grid.nk) {
        0.5 * w
    } else {
        w
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    } else if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

fn validate_input(input: &ClusterInput) -> Result<()> {
    if input.exact.len() != input.charts.len() {
        return Err(FlowError::BadMesh("exact data count differs from chart count".into()));
    }
    for (c, ch) in input.charts.iter().enumerate() {
        let g = &ch.grid;
        let min_k = if g.closed { 8 } else { 9 };
        if g.nk < min_k {
            return Err(FlowError::BadMesh(format!("chart {c}: fewer than 8 intervals")));
        }
        if ch.dim == 2 && g.ring < 8 {
            return Err(FlowError::BadMesh(format!("chart {c}: ring has fewer than 8 nodes")));
        }
        if ch.positions.len() != g.len() {
            return Err(FlowError::BadMesh(format!("chart {c}: position count mismatch")));
        }
        if ch.sheet > 2 {
            return Err(FlowError::BadMesh(format!("chart {c}: sheet index {}", ch.sheet)));
        }
        if ch.positions.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(FlowError::BadMesh(format!("chart {c}: non-finite position")));
        }
        for k in 1..g.nk {
            for j in 0..g.ring {
                let d = (ch.positions[g.idx(k, j)] - ch.positions[g.idx(k - 1, j)]).norm();
                if d <= 0.0 {
                    return Err(FlowError::BadMesh(format!("chart {c}: repeated node at k={k}")));
                }
            }
        }
    }
    for (jid, members) in input.junctions.iter().enumerate() {
        let ring = input.charts[members[0].0].grid.ring;
        for (i, &(c, end)) in members.iter().enumerate() {
            let ch = input.charts.get(c).ok_or_else(|| {
                FlowError::BadMesh(format!("junction {jid}: chart {c} missing"))
            })?;
            if ch.sheet != i {
                return Err(FlowError::BadMesh(format!(
                    "junction {jid}: member {i} is chart {c} of sheet {}",
                    ch.sheet
                )));
            }
            if ch.ends[end.index()] != EndCondition::Junction(jid) {
                return Err(FlowError::BadMesh(format!("junction {jid}: end of chart {c} not tagged")));
            }
            if ch.grid.ring != ring {
                return Err(FlowError::BadMesh(format!("junction {jid}: ring sizes differ")));
            }
            let p0 = &input.charts[members[0].0].positions;
            for j in 0..ring {
                let a = p0[input.charts[members[0].0].end_node(members[0].1, j)];
                let b = ch.positions[ch.end_node(end, j)];
                if a != b {
                    return Err(FlowError::BadMesh(format!(
                        "junction {jid}: member positions differ at ring node {j}"
                    )));
                }
            }
        }
    }
    Ok(())
}

struct RawChart {
    sx: Vec<Vec3>,
    sy: Vec<Vec3>,
    sxx: Vec<Vec3>,
    sxy: Vec<Vec3>,
    syy: Vec<Vec3>,
    tangent: Vec<Vec3>,
    base_normal: Vec<Vec3>,
    base_normal_fd: Vec<Vec3>,
    dist: [Vec<f64>; 2],
    length: f64,
}

fn raw_chart(ch: &DiscreteChart, exact: Option<&ExactCurve>) -> RawChart {
    let g = ch.grid;
    let n = g.len();
    let mut sx = vec![Vec3::zeros(); n];
    let mut sy = vec![Vec3::zeros(); n];
    let mut sxx = vec![Vec3::zeros(); n];
    let mut sxy = vec![Vec3::zeros(); n];
    let mut syy = vec![Vec3::zeros(); n];
    let p = &ch.positions;
    for k in 0..g.nk {
        for j in 0..g.ring {
            let i = g.idx(k, j);
            sx[i] = g.d_x(p, k, j);
            sxx[i] = g.d_xx(p, k, j);
            if ch.dim == 2 {
                sy[i] = g.d_y_shift(p, k, j, ch.period);
                syy[i] = g.d_yy_shift(p, k, j, ch.period);
            }
        }
    }
    if ch.dim == 2 {
        for k in 0..g.nk {
            for j in 0..g.ring {
                let jp = (j + 1) % g.ring;
                let jm = (j + g.ring - 1) % g.ring;
                sxy[g.idx(k, j)] = (sx[g.idx(k, jp)] - sx[g.idx(k, jm)]) * (0.5 / g.dy);
            }
        }
    }
    let fd_normal = |i: usize| -> Vec3 {
        if ch.dim == 1 {
            rot90(&sx[i].normalize())
        } else {
            sx[i].cross(&sy[i]).normalize()
        }
    };
    let base_normal_fd: Vec<Vec3> = (0..n).map(fd_normal).collect();
    let (tangent, base_normal) = match exact {
        Some(e) => (
            e.unit_tangent.clone(),
            e.unit_tangent.iter().map(rot90).collect(),
        ),
        None => (
            sx.iter().map(|v| v.normalize()).collect(),
            base_normal_fd.clone(),
        ),
    };
    let mut d0 = vec![0.0; n];
    let mut length = 0.0;
    if let Some(e) = exact {
        d0.clone_from(&e.arclength);
        length = if g.closed {
            e.arclength[g.nk - 1] + (p[0] - p[g.nk - 1]).norm()
        } else {
            e.arclength[g.nk - 1]
        };
    } else {
        for j in 0..g.ring {
            let mut s = 0.0;
            for k in 1..g.nk {
                let a = sx[g.idx(k - 1, j)].norm();
                let b = sx[g.idx(k, j)].norm();
                s += 0.5 * (a + b) * g.dx;
                d0[g.idx(k, j)] = s;
            }
            if j == 0 {
                length = s;
                if g.closed {
                    length += 0.5 * (sx[g.idx(g.nk - 1, 0)].norm() + sx[0].norm()) * g.dx;
                }
            }
        }
    }
    let mut d1 = vec![0.0; n];
    for k in 0..g.nk {
        for j in 0..g.ring {
            let last = d0[g.idx(g.nk - 1, j)];
            d1[g.idx(k, j)] = last - d0[g.idx(k, j)];
        }
    }
    RawChart {
        sx,
        sy,
        sxx,
        sxy,
        syy,
        tangent,
        base_normal,
        base_normal_fd,
        dist: [d0, d1],
        length,
    }
}

struct JunctionFrame {
    orientation: f64,
    axis: Vec<Vec3>,
    /// `conormal[i][j]`, `normal[i][j]` for member `i`, ring node `j`.
    conormal: [Vec<Vec3>; 3],
    normal: [Vec<Vec3>; 3],
}

fn junction_frame(
    jid: usize,
    members: &[(usize, End); 3],
    charts: &[DiscreteChart],
    raws: &[RawChart],
    weights: &AngleWeights,
) -> Result<JunctionFrame> {
    let ring = charts[members[0].0].grid.ring;
    let mut axis = Vec::with_capacity(ring);
    let mut conormal: [Vec<Vec3>; 3] = Default::default();
    let mut normal: [Vec<Vec3>; 3] = Default::default();
    let mut orientation = 0.0;
    let offsets = [0.0, weights.theta[2], weights.theta[2] + weights.theta[0]];
    for j in 0..ring {
        let (c0, e0) = members[0];
        let i0 = charts[c0].end_node(e0, j);
        let e = if charts[c0].dim == 1 {
            Vec3::z()
        } else {
            raws[c0].sy[i0].normalize()
        };
        let mut nu = [Vec3::zeros(); 3];
        for (m, &(c, end)) in members.iter().enumerate() {
            let i = charts[c].end_node(end, j);
            let t = raws[c].tangent[i] * end.outward_sign();
            let v = t - e * e.dot(&t);
            if v.norm() < 1e-12 {
                return Err(FlowError::OrientationFailure(format!(
                    "junction {jid}: chart {c} tangent parallel to the junction line"
                )));
            }
            nu[m] = v.normalize();
        }
        let s = nu[0].cross(&nu[1]).dot(&e);
        if s.abs() < 1e-12 {
            return Err(FlowError::OrientationFailure(format!(
                "junction {jid}: first two conormals are collinear"
            )));
        }
        let o = s.signum();
        if j == 0 {
            orientation = o;
        } else if o != orientation {
            return Err(FlowError::OrientationFailure(format!(
                "junction {jid}: orientation flips along the junction line"
            )));
        }
        let u1 = nu[0];
        let u2 = e.cross(&u1);
        let ang: Vec<f64> = nu.iter().map(|v| o * v.dot(&u2).atan2(v.dot(&u1))).collect();
        let (mut ss, mut cc) = (0.0, 0.0);
        for m in 0..3 {
            ss += (ang[m] - offsets[m]).sin();
            cc += (ang[m] - offsets[m]).cos();
        }
        let alpha = ss.atan2(cc);
        for m in 0..3 {
            let b = alpha + offsets[m];
            let dev = wrap_angle(ang[m] - b).abs();
            if dev > FRAME_SNAP_TOL {
                return Err(FlowError::OrientationFailure(format!(
                    "junction {jid}: conormal {m} is {dev:.3e} rad from the nearest balanced frame"
                )));
            }
            let v = u1 * (o * b).cos() + u2 * (o * b).sin();
            conormal[m].push(v);
            normal[m].push(e.cross(&v) * o);
        }
        axis.push(e);
    }
    Ok(JunctionFrame {
        orientation,
        axis,
        conormal,
        normal,
    })
}

impl ReferenceCluster {
    /// Builds all fields; `r0 = None` selects a quarter of the shortest chart.
    pub fn assemble(input: ClusterInput, weights: AngleWeights, r0: Option<f64>) -> Result<Self> {
        validate_input(&input)?;
        let charts = &input.charts;
        let raws: Vec<RawChart> = charts
            .iter()
            .zip(&input.exact)
            .map(|(c, e)| raw_chart(c, e.as_ref()))
            .collect();
        let min_len = charts
            .iter()
            .zip(&raws)
            .filter(|(c, _)| c.junction_ends().next().is_some())
            .map(|(_, r)| r.length)
            .fold(f64::INFINITY, f64::min);
        let r0 = match r0 {
            Some(v) => v,
            None if min_len.is_finite() => 0.25 * min_len,
            None => 1.0,
        };
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(FlowError::BadMesh(format!("cutoff radius {r0} must be positive")));
        }
        for (c, (ch, raw)) in charts.iter().zip(&raws).enumerate() {
            let nj = ch.junction_ends().count();
            if (nj == 2 && 2.0 * r0 > raw.length) || (nj == 1 && r0 >= raw.length) {
                return Err(FlowError::SupportOverlap {
                    chart: c,
                    r0,
                    length: raw.length,
                });
            }
        }

        let mut frames = Vec::with_capacity(input.junctions.len());
        for (jid, m) in input.junctions.iter().enumerate() {
            frames.push(junction_frame(jid, m, charts, &raws, &weights)?);
        }

        // Chart orientation relative to the base normal, from every junction end.
        let mut orient = vec![0.0f64; charts.len()];
        for (jid, m) in input.junctions.iter().enumerate() {
            for (mi, &(c, end)) in m.iter().enumerate() {
                let i = charts[c].end_node(end, 0);
                let d = frames[jid].normal[mi][0].dot(&raws[c].base_normal[i]);
                if d.abs() < 0.9 {
                    return Err(FlowError::OrientationFailure(format!(
                        "junction {jid}: frame normal of chart {c} disagrees with its tangent"
                    )));
                }
                let o = d.signum();
                if orient[c] == 0.0 {
                    orient[c] = o;
                } else if orient[c] != o {
                    return Err(FlowError::OrientationFailure(format!(
                        "chart {c}: normals from its two junctions are inconsistent"
                    )));
                }
            }
        }
        for o in orient.iter_mut() {
            if *o == 0.0 {
                *o = 1.0;
            }
        }

        let mut fields = Vec::with_capacity(charts.len());
        for (c, ch) in charts.iter().enumerate() {
            fields.push(chart_fields(
                c,
                ch,
                &raws[c],
                input.exact[c].as_ref(),
                orient[c],
                &input.junctions,
                &frames,
                r0,
            ));
        }
        let junctions = input
            .junctions
            .iter()
            .zip(frames)
            .map(|(m, f)| Junction {
                members: *m,
                orientation: f.orientation,
                ring: f.axis.len(),
                axis: f.axis,
            })
            .collect();
        let coupling = TCoupling::new(&weights);
        Ok(Self {
            weights,
            coupling,
            charts: input.charts,
            fields,
            junctions,
            regions: input.regions,
            r0,
            pinned_outer: input.pinned_outer,
            exact: input.exact,
        })
    }

    /// Rebuilds every field with a different cutoff radius.
    pub fn with_r0(&self, r0: f64) -> Result<Self> {
        let input = ClusterInput {
            charts: self.charts.clone(),
            exact: self.exact.clone(),
            junctions: self.junctions.iter().map(|j| j.members).collect(),
            regions: self.regions.clone(),
            pinned_outer: self.pinned_outer,
        };
        Self::assemble(input, self.weights.clone(), Some(r0))
    }

    pub fn dim(&self) -> usize {
        self.charts[0].dim
    }

    pub fn node_count(&self) -> usize {
        self.charts.iter().map(|c| c.grid.len()).sum()
    }

    /// Global index offset of each chart in a stacked nodal vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.charts.len() + 1);
        let mut acc = 0;
        for c in &self.charts {
            off.push(acc);
            acc += c.grid.len();
        }
        off.push(acc);
        off
    }

    pub fn project_to_junction(&self, chart: usize, node: usize) -> Option<Projection> {
        let ch = &self.charts[chart];
        let f = &self.fields[chart];
        let ring = ch.grid.ring;
        let j = node % ring;
        let (end, outside) = match f.support[node] {
            Some(e) => (e, false),
            None => {
                let mut best: Option<(End, f64)> = None;
                for (e, _) in ch.junction_ends() {
                    let d = f.dist[e.index()][node];
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((e, d));
                    }
                }
                (best?.0, true)
            }
        };
        let EndCondition::Junction(junction) = ch.ends[end.index()] else {
            return None;
        };
        Some(Projection {
            junction,
            end,
            ring: j,
            outside,
        })
    }

    /// Node index in chart `chart` of member `m` of junction `jid` at ring node `j`.
    pub fn junction_node(&self, jid: usize, m: usize, j: usize) -> (usize, usize) {
        let (c, end) = self.junctions[jid].members[m];
        (c, self.charts[c].end_node(end, j))
    }

    pub fn min_spacing(&self) -> f64 {
        let mut h = f64::INFINITY;
        for (ch, f) in self.charts.iter().zip(&self.fields) {
            for v in &f.sx {
                h = h.min(v.norm() * ch.grid.dx);
            }
            if ch.dim == 2 {
                for v in &f.sy {
                    h = h.min(v.norm() * ch.grid.dy);
                }
            }
        }
        h
    }

    pub fn max_curvature(&self) -> f64 {
        self.fields
            .iter()
            .flat_map(|f| f.pi_sq.iter())
            .fold(0.0f64, |a, b| a.max(b.sqrt()))
    }

    /// Weighted area of the reference itself.
    pub fn reference_energy(&self) -> f64 {
        let mut e = 0.0;
        for (ch, f) in self.charts.iter().zip(&self.fields) {
            let g = &ch.grid;
            let gamma = self.weights.gamma[ch.sheet];
            for k in 0..g.nk {
                for j in 0..g.ring {
                    e += gamma * f.sqrt_g[g.idx(k, j)] * quad_weight(g, k);
                }
            }
        }
        e
    }

    pub fn scale(&self) -> f64 {
        let mut lo = Vec3::from_element(f64::INFINITY);
        let mut hi = Vec3::from_element(f64::NEG_INFINITY);
        for ch in &self.charts {
            for p in &ch.positions {
                lo = lo.inf(p);
                hi = hi.sup(p);
            }
        }
        let d = hi - lo;
        d.x.max(d.y).max(if self.dim() == 1 { 0.0 } else { d.z }).max(1e-300)
    }

    pub fn invariants(&self) -> InvariantReport {
        let w = &self.weights;
        let mut rep = InvariantReport {
            young_defect: w.invariant_defect(),
            ..Default::default()
        };
        for f in &self.fields {
            for n in &f.normal {
                rep.unit_normal = rep.unit_normal.max((n.norm() - 1.0).abs());
            }
        }
        for (jid, jn) in self.junctions.iter().enumerate() {
            for j in 0..jn.ring {
                let mut sum_nu = Vec3::zeros();
                let mut sum_n = Vec3::zeros();
                let mut nn = [Vec3::zeros(); 3];
                for (m, &(c, end)) in jn.members.iter().enumerate() {
                    let f = &self.fields[c];
                    let (_, node) = self.junction_node(jid, m, j);
                    let nu = f.conormal[end.index()][j];
                    let n = f.normal[node];
                    rep.unit_conormal = rep.unit_conormal.max((nu.norm() - 1.0).abs());
                    rep.normal_conormal = rep.normal_conormal.max(n.dot(&nu).abs());
                    rep.tau_at_junction = rep.tau_at_junction.max((f.tau[node] - nu).norm());
                    sum_nu += nu * w.gamma[m];
                    sum_n += n * w.gamma[m];
                    nn[m] = n;
                }
                rep.force_balance = rep.force_balance.max(sum_nu.norm());
                rep.normal_balance = rep.normal_balance.max(sum_n.norm());
                for k in 0..3 {
                    let (a, b) = ((k + 1) % 3, (k + 2) % 3);
                    let d = (nn[a].dot(&nn[b]) - w.c[k]).abs();
                    rep.angle = rep.angle.max(d);
                }
            }
        }
        rep
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct InvariantReport {
    pub young_defect: f64,
    pub unit_normal: f64,
    pub unit_conormal: f64,
    pub normal_conormal: f64,
    pub force_balance: f64,
    pub normal_balance: f64,
    pub angle: f64,
    pub tau_at_junction: f64,
}

impl InvariantReport {
    pub fn passes(&self) -> bool {
        self.young_defect <= 1e-12
            && self.unit_normal <= 1e-12
            && self.unit_conormal <= 1e-12
            && self.normal_conormal <= 1e-12
            && self.force_balance <= 1e-10
            && self.normal_balance <= 1e-10
            && self.angle <= 1e-10
            && self.tau_at_junction <= 1e-12
    }
}

#[allow(clippy::too_many_arguments)]
fn chart_fields(
    c: usize,
    ch: &DiscreteChart,
    raw: &RawChart,
    exact: Option<&ExactCurve>,
    orient: f64,
    junction_members: &[[(usize, End); 3]],
    frames: &[JunctionFrame],
    r0: f64,
) -> ChartFields {
    let g = ch.grid;
    let n = g.len();
    let member_of = |jid: usize| {
        junction_members[jid]
            .iter()
            .position(|&(cc, _)| cc == c)
            .expect("chart belongs to its junction")
    };

    let mut support = vec![None; n];
    let mut cut = vec![0.0; n];
    for (end, _) in ch.junction_ends() {
        for i in 0..n {
            let d = raw.dist[end.index()][i];
            if d < r0 {
                support[i] = Some(end);
                cut[i] = cutoff(d / r0);
            }
        }
    }

    // Normals blended towards the balanced junction frame near each junction.
    let mut normal: Vec<Vec3> = raw.base_normal.iter().map(|v| v * orient).collect();
    let mut conormal: [Vec<Vec3>; 2] = Default::default();
    for (end, jid) in ch.junction_ends() {
        let m = member_of(jid);
        let fr = &frames[jid];
        conormal[end.index()] = fr.conormal[m].clone();
        let mut shift = Vec::with_capacity(g.ring);
        for j in 0..g.ring {
            let i = ch.end_node(end, j);
            shift.push(fr.normal[m][j] - raw.base_normal[i] * orient);
        }
        for k in 0..g.nk {
            for j in 0..g.ring {
                let i = g.idx(k, j);
                let w = cutoff(raw.dist[end.index()][i] / r0);
                if w > 0.0 {
                    normal[i] += shift[j] * w;
                }
            }
        }
    }
    for (end, jid) in ch.junction_ends() {
        let m = member_of(jid);
        for j in 0..g.ring {
            normal[ch.end_node(end, j)] = frames[jid].normal[m][j];
        }
    }
    for v in normal.iter_mut() {
        *v = v.normalize();
    }
    let normal_fd: Vec<Vec3> = raw.base_normal_fd.iter().map(|v| v * orient).collect();

    let mut metric = vec![[0.0; 3]; n];
    let mut sqrt_g = vec![0.0; n];
    let mut mean_curv_fd = vec![0.0; n];
    let mut pi_sq = vec![0.0; n];
    let mut second = vec![[0.0; 3]; n];
    for i in 0..n {
        let nn = &normal[i];
        if ch.dim == 1 {
            let g11 = raw.sx[i].norm_squared();
            metric[i] = [g11, 0.0, 1.0];
            sqrt_g[i] = g11.sqrt();
            let h11 = nn.dot(&raw.sxx[i]);
            second[i] = [h11, 0.0, 0.0];
            mean_curv_fd[i] = h11 / g11;
            pi_sq[i] = mean_curv_fd[i] * mean_curv_fd[i];
        } else {
            let (a, b) = (raw.sx[i], raw.sy[i]);
            let m = [a.dot(&a), a.dot(&b), b.dot(&b)];
            let det = m[0] * m[2] - m[1] * m[1];
            metric[i] = m;
            sqrt_g[i] = det.sqrt();
            let inv = [m[2] / det, -m[1] / det, m[0] / det];
            let h = [nn.dot(&raw.sxx[i]), nn.dot(&raw.sxy[i]), nn.dot(&raw.syy[i])];
            second[i] = h;
            mean_curv_fd[i] = inv[0] * h[0] + 2.0 * inv[1] * h[1] + inv[2] * h[2];
            // |II|^2 = tr((g^-1 h)^2)
            let s00 = inv[0] * h[0] + inv[1] * h[1];
            let s01 = inv[0] * h[1] + inv[1] * h[2];
            let s10 = inv[1] * h[0] + inv[2] * h[1];
            let s11 = inv[1] * h[1] + inv[2] * h[2];
            pi_sq[i] = s00 * s00 + 2.0 * s01 * s10 + s11 * s11;
        }
    }
    let mean_curv: Vec<f64> = match exact {
        Some(e) => {
            for i in 0..n {
                pi_sq[i] = e.curvature[i] * e.curvature[i];
            }
            e.curvature.iter().map(|k| orient * k).collect()
        }
        None => mean_curv_fd.clone(),
    };

    let mut tau = vec![Vec3::zeros(); n];
    for i in 0..n {
        if let Some(end) = support[i] {
            let EndCondition::Junction(jid) = ch.ends[end.index()] else {
                continue;
            };
            let axis = if ch.dim == 1 {
                Vec3::z()
            } else {
                raw.sy[i].normalize()
            };
            tau[i] = normal[i].cross(&axis) * (frames[jid].orientation * cut[i]);
        }
    }
    let mut kappa: [Vec<f64>; 2] = Default::default();
    for (end, _) in ch.junction_ends() {
        let e = end.index();
        for j in 0..g.ring {
            let i = ch.end_node(end, j);
            tau[i] = conormal[e][j];
            let kv = if ch.dim == 1 {
                mean_curv[i]
            } else {
                let nu = conormal[e][j];
                let m = metric[i];
                let det = m[0] * m[2] - m[1] * m[1];
                let (p, q) = (nu.dot(&raw.sx[i]), nu.dot(&raw.sy[i]));
                let a = (m[2] * p - m[1] * q) / det;
                let b = (-m[1] * p + m[0] * q) / det;
                let h = second[i];
                h[0] * a * a + 2.0 * h[1] * a * b + h[2] * b * b
            };
            kappa[e].push(kv);
        }
    }

    let mut grad_h_tau = vec![0.0; n];
    let mut tau_slope_max = 0.0f64;
    for k in 0..g.nk {
        for j in 0..g.ring {
            let i = g.idx(k, j);
            if support[i].is_none() && tau[i] == Vec3::zeros() {
                continue;
            }
            let hx = g.d_x(&mean_curv, k, j);
            let m = metric[i];
            let gh = if ch.dim == 1 {
                hx / m[0] * raw.sx[i].dot(&tau[i])
            } else {
                let hy = g.d_y(&mean_curv, k, j);
                let det = m[0] * m[2] - m[1] * m[1];
                let up = [(m[2] * hx - m[1] * hy) / det, (-m[1] * hx + m[0] * hy) / det];
                up[0] * raw.sx[i].dot(&tau[i]) + up[1] * raw.sy[i].dot(&tau[i])
            };
            grad_h_tau[i] = gh;
            if let Some(end) = support[i] {
                let t = raw.dist[end.index()][i] / r0;
                let turn = g.d_x(&normal, k, j).norm() / raw.sx[i].norm();
                let slope = cutoff_slope(t).abs() / r0 + cut[i] * turn;
                tau_slope_max = tau_slope_max.max(slope);
            }
        }
    }

    ChartFields {
        orientation: orient,
        sx: raw.sx.clone(),
        sy: raw.sy.clone(),
        sxx: raw.sxx.clone(),
        sxy: raw.sxy.clone(),
        syy: raw.syy.clone(),
        normal,
        normal_fd,
        sqrt_g,
        metric,
        pi_sq,
        mean_curv,
        mean_curv_fd,
        tau,
        cut,
        support,
        dist: raw.dist.clone(),
        conormal,
        kappa,
        grad_h_tau,
        tau_slope_max,
        length: raw.length,
    }
}
