//! Time stepping of the nonlinear problem.
//!
//! Each implicit Euler step freezes the nonlinearity at the current iterate
//! and solves the linear junction problem for the next one. Written in
//! increment form, the iteration `L v_{k+1} = u_old/dt + (K - A)(v_k)`,
//! `B v_{k+1} = B v_k - G(v_k)` becomes `v_{k+1} = v_k + L^{-1} R(v_k)` with
//! the residual `R` of the nonlinear step, so one factorization of `L` per
//! reference and step size serves every iteration.

use crate::error::{FlowError, Result};
use crate::geometry::{quad_weight, ClusterInput, DiscreteChart, EndCondition, ReferenceCluster, Vec3};
use crate::linear::{operator, stack, unstack, Closure, RowClass};
use crate::shape::{angle_residuals, evaluate, evaluate_phi, shape_quantities, state_energy, HeightState};
use crate::solver::{BorderedSolver, Triplets};
use serde::{Deserialize, Serialize};

/// Steps between self-contact checks; nodes move far less than a spacing
/// per step.
const CONTACT_EVERY: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Fixed step; `None` selects `dt_factor * h^2 / max beta` per reference.
    pub dt: Option<f64>,
    pub dt_factor: f64,
    pub t_end: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    /// `None` selects `0.1 * min(1 / max |Pi*|, r0)` per reference.
    pub reref_threshold: Option<f64>,
    /// `None` keeps the cutoff radius of the initial reference.
    pub r0: Option<f64>,
    /// Steps between recorded trace rows.
    pub output_every: usize,
    /// Largest accepted spacing ratio on a chart before nodes are
    /// redistributed uniformly in arclength at re-referencing.
    pub spacing_ratio_max: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dt: None,
            dt_factor: 0.25,
            t_end: 1.0,
            picard_tol: 1e-9,
            picard_max: 25,
            reref_threshold: None,
            r0: None,
            output_every: 1,
            spacing_ratio_max: 1.1,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let ok = self.dt.is_none_or(pos)
            && pos(self.dt_factor)
            && pos(self.t_end)
            && pos(self.picard_tol)
            && self.picard_max >= 1
            && self.reref_threshold.is_none_or(pos)
            && self.r0.is_none_or(pos)
            && self.output_every >= 1
            && self.spacing_ratio_max > 1.0;
        if ok {
            Ok(())
        } else {
            Err(FlowError::DomainError(format!("invalid flow configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum ContinuationStatus {
    Running,
    AreaVanishing { chart: usize },
    SelfContact { distance: f64 },
    FoldOver,
    PicardDiverged,
}

impl ContinuationStatus {
    pub fn is_terminal(self) -> bool {
        self != ContinuationStatus::Running
    }
}

/// Quantities recorded after an accepted step.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub energy: f64,
    /// Enclosed area of each region.
    pub areas: Vec<f64>,
    /// Length (curves) or area (sheets) of each chart.
    pub lengths: Vec<f64>,
    /// Position of ring node 0 of every junction.
    pub junction_positions: Vec<[f64; 3]>,
    pub g2: f64,
    pub g3: f64,
    pub g_third: f64,
    /// Largest `|sum gamma beta H|` over junction nodes.
    pub sum_gbh: f64,
    pub picard_iters: usize,
    /// `sum (gamma / beta) int V^2` over the step.
    pub dissipation: f64,
    /// `|dF/dt + dissipation|`.
    pub dissipation_defect: f64,
    /// Set when the energy grew by more than `1e-8 F(t0)`.
    pub energy_increase: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RerefEvent {
    pub step: usize,
    pub t: f64,
    pub energy_before: f64,
    pub energy_after: f64,
    pub resampled: bool,
    pub dt: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PicardReport {
    pub iterations: usize,
    pub increments: Vec<f64>,
}

/// Linear operator of the iteration, factored once per reference and step.
struct Frozen {
    dt: f64,
    rows: Vec<RowClass>,
    matrix: Triplets<f64>,
    lu: BorderedSolver<f64>,
}

impl Frozen {
    fn new(cl: &ReferenceCluster, dt: f64) -> Result<Self> {
        let (matrix, rows, border) = operator(cl, Some(dt), Closure::OneSided)?;
        let lu = BorderedSolver::factor(&matrix, &border)?;
        Ok(Self { dt, rows, matrix, lu })
    }
}

/// Residual of the implicit Euler step at the iterate `v`.
fn step_residual(cl: &ReferenceCluster, rows: &[RowClass], rho_old: &[f64], v: &HeightState, dt: f64) -> Result<Vec<f64>> {
    let ev = evaluate(cl, v)?;
    let ang = angle_residuals(cl, v, &ev.shape);
    let k = stack(&ev.k);
    let vs = stack(&v.rho);
    Ok(rows
        .iter()
        .enumerate()
        .map(|(i, row)| match *row {
            RowClass::Interior => k[i] + (rho_old[i] - vs[i]) / dt,
            RowClass::Pinned => -vs[i],
            RowClass::Junction { junction, ring, row } => {
                let a = ang[junction][ring];
                -[a.g1, a.g2_scaled, a.g3_scaled][row]
            }
        })
        .collect())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

fn picard_iterate(cl: &ReferenceCluster, frozen: &Frozen, state: &HeightState, cfg: &FlowConfig) -> Result<(HeightState, PicardReport)> {
    let dt = frozen.dt;
    let rho_old = stack(&state.rho);
    let mut v = state.clone();
    v.t = state.t + dt;
    let mut rep = PicardReport::default();
    for it in 1..=cfg.picard_max {
        let r = step_residual(cl, &frozen.rows, &rho_old, &v, dt)?;
        let mut delta = frozen.lu.solve(&r)?;
        // One refinement sweep keeps the increment accurate near convergence.
        let res = frozen.matrix.mul(&delta);
        let corr: Vec<f64> = r.iter().zip(&res).map(|(a, b)| a - b).collect();
        for (d, c) in delta.iter_mut().zip(frozen.lu.solve(&corr)?) {
            *d += c;
        }
        let mut flat = stack(&v.rho);
        for (x, d) in flat.iter_mut().zip(&delta) {
            *x += d;
        }
        v = HeightState::new(cl, unstack(cl, &flat), v.t);
        let inc = max_abs(&delta);
        rep.iterations = it;
        rep.increments.push(inc);
        if !inc.is_finite() {
            return Err(FlowError::PicardDiverged(format!("non-finite increment at iteration {it}")));
        }
        if inc <= cfg.picard_tol * max_abs(&flat) || inc == 0.0 {
            return Ok((v, rep));
        }
        let n = rep.increments.len();
        if n >= 3 && rep.increments[n - 1] > rep.increments[n - 2] && rep.increments[n - 2] > rep.increments[n - 3] {
            return Err(FlowError::PicardDiverged(format!("increments grow: {:?}", rep.increments)));
        }
    }
    Err(FlowError::PicardDiverged(format!(
        "no convergence in {} iterations, increments {:?}",
        cfg.picard_max, rep.increments
    )))
}

/// One step of the fixed-point map at the given step size; `state.t`
/// advances by `dt`.
pub fn picard_step(cl: &ReferenceCluster, state: &HeightState, dt: f64, cfg: &FlowConfig) -> Result<(HeightState, PicardReport)> {
    shape_quantities(cl, state)?;
    picard_iterate(cl, &Frozen::new(cl, dt)?, state, cfg)
}

/// Weighted area. Curves use the polygon through the nodes, which depends on
/// the point set only and is therefore unchanged by re-referencing.
pub fn cluster_energy(cl: &ReferenceCluster, state: &HeightState) -> Result<f64> {
    if cl.dim() == 2 {
        return state_energy(cl, state);
    }
    let phi = evaluate_phi(cl, state);
    Ok(cl
        .charts
        .iter()
        .zip(&phi)
        .map(|(ch, p)| cl.weights.gamma[ch.sheet] * polyline_length(p, ch.grid.closed))
        .sum())
}

/// Curve length from the node polygon with the chord-to-arc correction
/// `c^3 kappa^2 / 24`, `kappa` taken from circles through node triples.
fn polyline_length(p: &[Vec3], closed: bool) -> f64 {
    let n = p.len();
    let at = |i: isize| -> Option<Vec3> {
        if closed {
            Some(p[i.rem_euclid(n as isize) as usize])
        } else {
            usize::try_from(i).ok().filter(|&i| i < n).map(|i| p[i])
        }
    };
    let circ = |i: isize| -> Option<f64> {
        let (a, b, c) = (at(i - 1)?, at(i)?, at(i + 1)?);
        let (u, v, w) = (b - a, c - b, c - a);
        Some(2.0 * u.cross(&v).norm() / (u.norm() * v.norm() * w.norm()))
    };
    let segs = if closed { n } else { n - 1 };
    let mut l = 0.0;
    for i in 0..segs as isize {
        let c = (p[(i as usize + 1) % n] - p[i as usize]).norm();
        let k = match (circ(i), circ(i + 1)) {
            (Some(a), Some(b)) => 0.5 * (a + b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => 0.0,
        };
        l += c * (1.0 + c * c * k * k / 24.0);
    }
    l
}

fn region_areas(cl: &ReferenceCluster, phi: &[Vec<Vec3>]) -> Vec<f64> {
    cl.regions
        .iter()
        .map(|loop_| {
            let mut twice = 0.0;
            for &(c, rev) in loop_ {
                let p = &phi[c];
                let mut s = 0.0;
                let n = p.len();
                let segs = if cl.charts[c].grid.closed { n } else { n - 1 };
                for i in 0..segs {
                    let (a, b) = (p[i], p[(i + 1) % n]);
                    s += a.x * b.y - b.x * a.y;
                }
                twice += if rev { -s } else { s };
            }
            0.5 * twice.abs()
        })
        .collect()
}

fn chart_sizes(cl: &ReferenceCluster, state: &HeightState) -> Result<Vec<f64>> {
    if cl.dim() == 1 {
        let phi = evaluate_phi(cl, state);
        return Ok(phi.iter().zip(&cl.charts).map(|(p, ch)| polyline_length(p, ch.grid.closed)).collect());
    }
    let sh = shape_quantities(cl, state)?;
    Ok(cl
        .charts
        .iter()
        .zip(&sh.charts)
        .map(|(ch, s)| {
            let g = &ch.grid;
            (0..g.nk)
                .map(|k| (0..g.ring).map(|j| s.sqrt_g[g.idx(k, j)]).sum::<f64>() * quad_weight(g, k))
                .sum()
        })
        .collect())
}

/// Minimum distance between nodes that are not neighbours along the
/// cluster, and between distinct junctions.
pub fn contact_distance(cl: &ReferenceCluster, phi: &[Vec<Vec3>], cell: f64) -> f64 {
    const NEAR: usize = 4;
    let mut best = f64::INFINITY;
    let jpos: Vec<Vec3> = (0..cl.junctions.len())
        .flat_map(|jid| {
            (0..cl.junctions[jid].ring).map(move |r| (jid, r))
        })
        .map(|(jid, r)| {
            let (c, n) = cl.junction_node(jid, 0, r);
            phi[c][n]
        })
        .collect();
    let jid_of: Vec<usize> = (0..cl.junctions.len()).flat_map(|j| std::iter::repeat_n(j, cl.junctions[j].ring)).collect();
    for a in 0..jpos.len() {
        for b in a + 1..jpos.len() {
            if jid_of[a] != jid_of[b] {
                best = best.min((jpos[a] - jpos[b]).norm());
            }
        }
    }
    // Junction ends of each chart as (junction, k of the end node).
    let ends: Vec<Vec<(usize, usize)>> = cl
        .charts
        .iter()
        .map(|ch| ch.junction_ends().map(|(e, id)| (id, e.k(&ch.grid))).collect())
        .collect();
    let near = |(ca, ia): (usize, usize), (cb, ib): (usize, usize)| -> bool {
        let (ga, gb) = (cl.charts[ca].grid, cl.charts[cb].grid);
        let (ka, kb) = (ia / ga.ring, ib / gb.ring);
        if ca == cb {
            let (ja, jb) = (ia % ga.ring, ib % ga.ring);
            let mut dk = ka.abs_diff(kb);
            if ga.closed {
                dk = dk.min(ga.nk - dk);
            }
            let dj = ja.abs_diff(jb).min(ga.ring - ja.abs_diff(jb));
            if dk <= NEAR && dj <= NEAR {
                return true;
            }
        }
        ends[ca].iter().any(|&(ja, ea)| {
            ends[cb]
                .iter()
                .any(|&(jb, eb)| ja == jb && ka.abs_diff(ea) + kb.abs_diff(eb) <= NEAR)
        })
    };
    let key = |p: &Vec3| [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64];
    let mut cells: Vec<([i64; 3], usize, usize)> = Vec::new();
    for (c, pts) in phi.iter().enumerate() {
        for (i, p) in pts.iter().enumerate() {
            cells.push((key(p), c, i));
        }
    }
    cells.sort_unstable();
    for (c, pts) in phi.iter().enumerate() {
        for (i, p) in pts.iter().enumerate() {
            let [x, y, z] = key(p);
            for dx in -1..=1 {
                let lo = cells.partition_point(|e| e.0 < [x + dx, y - 1, i64::MIN]);
                for &(kk, cb, ib) in &cells[lo..] {
                    if kk[0] != x + dx || kk[1] > y + 1 {
                        break;
                    }
                    if kk[2].abs_diff(z) > 1 || (cb, ib) <= (c, i) || near((c, i), (cb, ib)) {
                        continue;
                    }
                    best = best.min((phi[cb][ib] - p).norm());
                }
            }
        }
    }
    best
}

/// Resamples an open or closed polygon at equal arclength with cubic
/// Lagrange interpolation in the cumulative chord length.
fn resample(p: &[Vec3], closed: bool) -> Vec<Vec3> {
    let n = p.len();
    let m = if closed { n + 1 } else { n };
    let at = |i: usize| p[i % n];
    let mut s = vec![0.0; m];
    for i in 1..m {
        s[i] = s[i - 1] + (at(i) - at(i - 1)).norm();
    }
    let total = s[m - 1];
    let pos = |i: isize| -> (f64, Vec3) {
        if closed {
            let w = i.rem_euclid(n as isize) as usize;
            let laps = (i - w as isize) / n as isize;
            (s[w] + laps as f64 * total, p[w])
        } else {
            (s[i as usize], p[i as usize])
        }
    };
    let intervals = m - 1;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    for k in 0..n {
        let target = total * k as f64 / intervals as f64;
        if !closed && k == n - 1 {
            out.push(p[n - 1]);
            continue;
        }
        while seg + 1 < m - 1 && s[seg + 1] <= target {
            seg += 1;
        }
        let mut lo = seg as isize - 1;
        if !closed {
            lo = lo.clamp(0, n as isize - 4);
        }
        let nodes: Vec<(f64, Vec3)> = (lo..lo + 4).map(pos).collect();
        let mut v = Vec3::zeros();
        for (a, &(sa, pa)) in nodes.iter().enumerate() {
            let mut w = 1.0;
            for (b, &(sb, _)) in nodes.iter().enumerate() {
                if a != b {
                    w *= (target - sb) / (sa - sb);
                }
            }
            v += pa * w;
        }
        out.push(v);
    }
    out
}

fn spacing_ratio(p: &[Vec3], closed: bool) -> f64 {
    let mut seg: Vec<f64> = p.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    if closed {
        seg.push((p[0] - p[p.len() - 1]).norm());
    }
    let lo = seg.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = seg.iter().cloned().fold(0.0, f64::max);
    hi / lo
}

/// Largest cutoff radius the chart lengths admit, with a margin.
fn admissible_r0(cl: &ReferenceCluster, phi: &[Vec<Vec3>]) -> f64 {
    let mut cap = f64::INFINITY;
    for (ch, p) in cl.charts.iter().zip(phi) {
        let nj = ch.ends.iter().filter(|e| matches!(e, EndCondition::Junction(_))).count();
        let len = polyline_length(p, ch.grid.closed);
        match nj {
            2 => cap = cap.min(0.45 * len),
            1 => cap = cap.min(0.9 * len),
            _ => {}
        }
    }
    cap
}

/// Rebuilds the reference from the current curves and resets the heights.
/// Nodes are redistributed uniformly in arclength when some chart's spacing
/// ratio exceeds `spacing_ratio_max`; otherwise the point set is kept.
pub fn re_reference(
    cl: &ReferenceCluster,
    state: &HeightState,
    r0: f64,
    spacing_ratio_max: f64,
) -> Result<(ReferenceCluster, HeightState, bool)> {
    if cl.dim() != 1 {
        return Err(FlowError::Unsupported("re-referencing of sheets".into()));
    }
    let mut phi = evaluate_phi(cl, state);
    for jid in 0..cl.junctions.len() {
        let nodes: Vec<(usize, usize)> = (0..3).map(|m| cl.junction_node(jid, m, 0)).collect();
        let mean = nodes.iter().map(|&(c, n)| phi[c][n]).sum::<Vec3>() / 3.0;
        for (c, n) in nodes {
            phi[c][n] = mean;
        }
    }
    let resampled = cl
        .charts
        .iter()
        .zip(&phi)
        .any(|(ch, p)| spacing_ratio(p, ch.grid.closed) > spacing_ratio_max);
    if resampled {
        for (ch, p) in cl.charts.iter().zip(phi.iter_mut()) {
            *p = resample(p, ch.grid.closed);
        }
    }
    let r0 = r0.min(admissible_r0(cl, &phi));
    let charts: Vec<DiscreteChart> = cl
        .charts
        .iter()
        .zip(phi)
        .map(|(ch, positions)| DiscreteChart {
            positions,
            ..ch.clone()
        })
        .collect();
    let input = ClusterInput {
        exact: vec![None; charts.len()],
        charts,
        junctions: cl.junctions.iter().map(|j| j.members).collect(),
        regions: cl.regions.clone(),
        pinned_outer: cl.pinned_outer,
    };
    let next = ReferenceCluster::assemble(input, cl.weights.clone(), Some(r0))?;
    let mut zero = HeightState::zeros(&next);
    zero.t = state.t;
    Ok((next, zero, resampled))
}

fn dt_for(cl: &ReferenceCluster, cfg: &FlowConfig) -> f64 {
    cfg.dt
        .unwrap_or_else(|| cfg.dt_factor * cl.min_spacing().powi(2) / cl.weights.max_beta())
}

fn reref_threshold(cl: &ReferenceCluster, cfg: &FlowConfig) -> f64 {
    cfg.reref_threshold.unwrap_or_else(|| {
        let k = cl.max_curvature();
        let curv = if k > 0.0 { 1.0 / k } else { f64::INFINITY };
        0.1 * curv.min(cl.r0)
    })
}

/// `|rho| + r0 |d rho / ds|` over all nodes.
fn height_size(cl: &ReferenceCluster, state: &HeightState) -> f64 {
    let mut a = 0.0f64;
    let mut d = 0.0f64;
    for (c, ch) in cl.charts.iter().enumerate() {
        let g = ch.grid;
        let f = &cl.fields[c];
        for k in 0..g.nk {
            for j in 0..g.ring {
                let i = g.idx(k, j);
                a = a.max(state.rho[c][i].abs());
                let gx = g.d_x(&state.rho[c], k, j) / f.metric[i][0].sqrt();
                d = d.max(gx.abs());
                if ch.dim == 2 {
                    d = d.max((g.d_y(&state.rho[c], k, j) / f.metric[i][2].sqrt()).abs());
                }
            }
        }
    }
    a + cl.r0 * d
}

/// A running simulation.
pub struct Flow {
    pub cluster: ReferenceCluster,
    pub state: HeightState,
    pub config: FlowConfig,
    pub status: ContinuationStatus,
    pub step: usize,
    pub dt: f64,
    pub energy: f64,
    pub initial_energy: f64,
    /// Energy after the last accepted step, before any re-referencing.
    step_energy: f64,
    /// Node spacing of the initial reference.
    pub h0: f64,
    pub r0: f64,
    pub reref_events: Vec<RerefEvent>,
    pub last_picard: PicardReport,
    frozen: Option<Frozen>,
}

impl Flow {
    pub fn new(cluster: ReferenceCluster, state: HeightState, config: FlowConfig) -> Result<Self> {
        config.validate()?;
        shape_quantities(&cluster, &state)?;
        let energy = cluster_energy(&cluster, &state)?;
        let dt = dt_for(&cluster, &config);
        Ok(Self {
            h0: cluster.min_spacing(),
            r0: config.r0.unwrap_or(cluster.r0),
            cluster,
            state,
            config,
            status: ContinuationStatus::Running,
            step: 0,
            dt,
            energy,
            initial_energy: energy,
            step_energy: energy,
            reref_events: Vec::new(),
            last_picard: PicardReport::default(),
            frozen: None,
        })
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    pub fn positions(&self) -> Vec<Vec<Vec3>> {
        evaluate_phi(&self.cluster, &self.state)
    }

    pub fn re_reference(&mut self) -> Result<RerefEvent> {
        let before = self.energy;
        let (cl, st, resampled) = re_reference(&self.cluster, &self.state, self.r0, self.config.spacing_ratio_max)?;
        self.cluster = cl;
        self.state = st;
        self.frozen = None;
        self.dt = dt_for(&self.cluster, &self.config);
        self.energy = cluster_energy(&self.cluster, &self.state)?;
        let ev = RerefEvent {
            step: self.step,
            t: self.state.t,
            energy_before: before,
            energy_after: self.energy,
            resampled,
            dt: self.dt,
        };
        self.reref_events.push(ev.clone());
        Ok(ev)
    }

    fn needs_reref(&self) -> bool {
        self.cluster.dim() == 1 && height_size(&self.cluster, &self.state) > reref_threshold(&self.cluster, &self.config)
    }

    fn try_step(&mut self, dt: f64) -> Result<(HeightState, PicardReport)> {
        if self.frozen.as_ref().is_none_or(|f| f.dt != dt) {
            self.frozen = Some(Frozen::new(&self.cluster, dt)?);
        }
        let frozen = self.frozen.as_ref().expect("just built");
        picard_iterate(&self.cluster, frozen, &self.state, &self.config)
    }

    /// One accepted step with monitoring. Terminal conditions are returned
    /// through `self.status`; numerical failures are errors.
    pub fn advance(&mut self) -> Result<TraceRecord> {
        if self.status.is_terminal() {
            return Err(FlowError::DomainError(format!("flow already stopped: {:?}", self.status)));
        }
        if self.needs_reref() {
            self.re_reference()?;
        }
        let remaining = self.config.t_end - self.state.t;
        let dt = if remaining < 1.5 * self.dt { remaining } else { self.dt };
        let attempt = match self.try_step(dt) {
            Err(FlowError::FoldOver(_)) if self.cluster.dim() == 1 && self.state.max_abs() > 0.0 => {
                self.re_reference()?;
                let dt = dt.min(self.dt);
                self.try_step(dt).map(|r| (r, dt))
            }
            other => other.map(|r| (r, dt)),
        };
        let ((next, rep), dt) = match attempt {
            Ok(v) => v,
            Err(e) => {
                self.status = match e {
                    FlowError::FoldOver(_) => ContinuationStatus::FoldOver,
                    FlowError::PicardDiverged(_) => ContinuationStatus::PicardDiverged,
                    _ => self.status,
                };
                return Err(e);
            }
        };
        let record = self.measure(&next, dt, rep.iterations)?;
        self.state = next;
        self.energy = record.energy;
        self.step_energy = record.energy;
        self.step += 1;
        self.last_picard = rep;
        self.status = self.continuation(&record);
        Ok(record)
    }

    fn measure(&self, next: &HeightState, dt: f64, iters: usize) -> Result<TraceRecord> {
        let cl = &self.cluster;
        let ev = evaluate(cl, next)?;
        let old_phi = evaluate_phi(cl, &self.state);
        let phi = evaluate_phi(cl, next);
        let energy = cluster_energy(cl, next)?;
        let mut diss = 0.0;
        for (c, ch) in cl.charts.iter().enumerate() {
            let s = &ev.shape.charts[c];
            let g = &ch.grid;
            let w = cl.weights.gamma[ch.sheet] / cl.weights.beta[ch.sheet];
            for k in 0..g.nk {
                for j in 0..g.ring {
                    let i = g.idx(k, j);
                    let v = (phi[c][i] - old_phi[c][i]).dot(&s.normal[i]) / dt;
                    diss += w * v * v * s.sqrt_g[i] * quad_weight(g, k);
                }
            }
        }
        let ang = angle_residuals(cl, next, &ev.shape);
        let (mut g2, mut g3, mut g_third, mut sum_gbh) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (jid, ring) in ang.iter().enumerate() {
            for (r, a) in ring.iter().enumerate() {
                g2 = g2.max(a.g2.abs());
                g3 = g3.max(a.g3.abs());
                g_third = g_third.max(a.g_third.abs());
                let mut s = 0.0;
                for m in 0..3 {
                    let (c, n) = cl.junction_node(jid, m, r);
                    s += cl.weights.gamma[m] * cl.weights.beta[m] * ev.shape.charts[c].mean_curv[n];
                }
                sum_gbh = sum_gbh.max(s.abs());
            }
        }
        let junction_positions = (0..cl.junctions.len())
            .map(|jid| {
                let (c, n) = cl.junction_node(jid, 0, 0);
                let p = phi[c][n];
                [p.x, p.y, p.z]
            })
            .collect();
        Ok(TraceRecord {
            step: self.step + 1,
            t: next.t,
            dt,
            energy,
            areas: region_areas(cl, &phi),
            lengths: chart_sizes(cl, next)?,
            junction_positions,
            g2,
            g3,
            g_third,
            sum_gbh,
            picard_iters: iters,
            dissipation: diss,
            dissipation_defect: ((energy - self.energy) / dt + diss).abs(),
            energy_increase: energy - self.step_energy > 1e-8 * self.initial_energy,
        })
    }

    fn continuation(&self, rec: &TraceRecord) -> ContinuationStatus {
        let cl = &self.cluster;
        for (c, ch) in cl.charts.iter().enumerate() {
            let limit = if ch.dim == 1 { 5.0 * self.h0 } else { 25.0 * self.h0 * self.h0 };
            if rec.lengths[c] < limit {
                return ContinuationStatus::AreaVanishing { chart: c };
            }
        }
        if cl.dim() == 1 && self.step % CONTACT_EVERY == 0 {
            let phi = self.positions();
            let h = phi
                .iter()
                .zip(&cl.charts)
                .flat_map(|(p, ch)| {
                    let mut v: Vec<f64> = p.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
                    if ch.grid.closed {
                        v.push((p[0] - p[p.len() - 1]).norm());
                    }
                    v
                })
                .fold(f64::INFINITY, f64::min);
            let d = contact_distance(cl, &phi, 2.0 * h);
            if d < 2.0 * h {
                return ContinuationStatus::SelfContact { distance: d };
            }
        }
        ContinuationStatus::Running
    }

    /// Steps until `t_end` or a terminal status, handing every record to
    /// `sink`. Numerical failures end the run with their status set.
    pub fn run(&mut self, mut sink: impl FnMut(&Flow, &TraceRecord)) -> Result<ContinuationStatus> {
        while self.state.t < self.config.t_end * (1.0 - 1e-14) && !self.status.is_terminal() {
            let rec = self.advance()?;
            sink(self, &rec);
        }
        Ok(self.status)
    }
}
