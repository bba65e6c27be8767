//! Built-in reference geometries and node-table ingestion.

use crate::error::{FlowError, Result};
use crate::geometry::{
    ClusterInput, DiscreteChart, End, EndCondition, ExactCurve, ReferenceCluster, Vec3,
};
use crate::stencil::Grid;
use crate::weights::AngleWeights;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq)]
pub enum GeometrySpec {
    /// Three straight legs from a common junction, outer ends pinned.
    Triod { leg_length: f64, intervals: usize },
    /// Two regions bounded by three circular arcs joining two junctions.
    DoubleBubble { areas: [f64; 2], intervals: usize },
    /// The triod extruded along a periodic straight junction line.
    Prism {
        leg_length: f64,
        period: f64,
        intervals: usize,
        ring: usize,
    },
    /// Closed circle, single sheet, no junction.
    Circle { radius: f64, intervals: usize },
    /// Open circular arc with pinned ends, single sheet.
    Arc {
        radius: f64,
        angle: f64,
        intervals: usize,
    },
    /// Planar node table: `chart_id,node_index,x,y[,z]`.
    Table { path: PathBuf },
    /// Same as `Table` with the contents supplied inline.
    TableText { text: String },
}

pub fn build_reference(spec: &GeometrySpec, weights: &AngleWeights) -> Result<ReferenceCluster> {
    build_reference_with_r0(spec, weights, None)
}

pub fn build_reference_with_r0(
    spec: &GeometrySpec,
    weights: &AngleWeights,
    r0: Option<f64>,
) -> Result<ReferenceCluster> {
    let input = match spec {
        GeometrySpec::Triod {
            leg_length,
            intervals,
        } => triod(weights, *leg_length, *intervals, None)?,
        GeometrySpec::Prism {
            leg_length,
            period,
            intervals,
            ring,
        } => triod(weights, *leg_length, *intervals, Some((*period, *ring)))?,
        GeometrySpec::DoubleBubble { areas, intervals } => double_bubble(weights, *areas, *intervals)?,
        GeometrySpec::Circle { radius, intervals } => circle(*radius, *intervals)?,
        GeometrySpec::Arc {
            radius,
            angle,
            intervals,
        } => arc(*radius, *angle, *intervals)?,
        GeometrySpec::Table { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| FlowError::Io(format!("{}: {e}", path.display())))?;
            node_table(&text)?
        }
        GeometrySpec::TableText { text } => node_table(text)?,
    };
    ReferenceCluster::assemble(input, weights.clone(), r0)
}

fn check_intervals(n: usize) -> Result<()> {
    if n < 8 {
        return Err(FlowError::BadMesh(format!("{n} intervals; at least 8 required")));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(FlowError::BadMesh(format!("{name} must be positive, got {v}")))
    }
}

/// Conormal angles at a junction whose first conormal points along `base`.
fn conormal_angles(w: &AngleWeights, base: f64) -> [f64; 3] {
    let a1 = base;
    let a2 = a1 + w.theta[2];
    let a3 = a2 + w.theta[0];
    [a1, a2, a3]
}

fn triod(
    w: &AngleWeights,
    leg: f64,
    n: usize,
    extrude: Option<(f64, usize)>,
) -> Result<ClusterInput> {
    check_intervals(n)?;
    positive("leg length", leg)?;
    let ang = conormal_angles(w, -PI / 2.0);
    let (dim, period, ring) = match extrude {
        Some((p, m)) => {
            positive("period", p)?;
            if m < 8 {
                return Err(FlowError::BadMesh(format!("ring of {m} nodes; at least 8 required")));
            }
            (2, p, m)
        }
        None => (1, 0.0, 1),
    };
    let mut charts = Vec::new();
    let mut exact = Vec::new();
    for (i, a) in ang.iter().enumerate() {
        let d = -Vec3::new(a.cos(), a.sin(), 0.0);
        let grid = Grid {
            nk: n + 1,
            ring,
            dx: 1.0 / n as f64,
            dy: 1.0 / ring as f64,
            closed: false,
        };
        let mut positions = Vec::with_capacity(grid.len());
        for k in 0..=n {
            let x = k as f64 / n as f64;
            for j in 0..ring {
                let z = if dim == 2 { period * j as f64 / ring as f64 } else { 0.0 };
                let mut p = d * (leg * x);
                p.z = z;
                if k == 0 {
                    p.x = 0.0;
                    p.y = 0.0;
                }
                positions.push(p);
            }
        }
        charts.push(DiscreteChart {
            sheet: i,
            dim,
            grid,
            positions,
            period: Vec3::new(0.0, 0.0, period),
            ends: [EndCondition::Junction(0), EndCondition::Pinned],
        });
        exact.push(if dim == 1 {
            Some(ExactCurve {
                unit_tangent: vec![d; n + 1],
                curvature: vec![0.0; n + 1],
                arclength: (0..=n).map(|k| leg * k as f64 / n as f64).collect(),
            })
        } else {
            None
        });
    }
    Ok(ClusterInput {
        charts,
        exact,
        junctions: vec![[(0, End::Start), (1, End::Start), (2, End::Start)]],
        regions: Vec::new(),
        pinned_outer: true,
    })
}

struct ArcShape {
    start: Vec3,
    omega: f64,
    curvature: f64,
    length: f64,
}

impl ArcShape {
    /// Constant-curvature arc leaving `start` with heading `omega` and
    /// ending at `start - (2c, 0)`.
    fn new(start: Vec3, omega: f64, c: f64) -> Self {
        let psi = wrap(omega - PI);
        let (length, curvature) = if psi.abs() < 1e-14 {
            (2.0 * c, 0.0)
        } else {
            let l = 2.0 * c * psi / psi.sin();
            (l, -2.0 * psi / l)
        };
        Self {
            start,
            omega,
            curvature,
            length,
        }
    }

    fn point(&self, s: f64) -> Vec3 {
        let (w, k) = (self.omega, self.curvature);
        if k == 0.0 {
            self.start + Vec3::new(w.cos(), w.sin(), 0.0) * s
        } else {
            self.start
                + Vec3::new(
                    ((w + k * s).sin() - w.sin()) / k,
                    (w.cos() - (w + k * s).cos()) / k,
                    0.0,
                )
        }
    }

    fn tangent(&self, s: f64) -> Vec3 {
        let a = self.omega + self.curvature * s;
        Vec3::new(a.cos(), a.sin(), 0.0)
    }
}

fn wrap(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    } else if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

fn bubble_arcs(w: &AngleWeights, c: f64, delta: f64) -> [ArcShape; 3] {
    let start = Vec3::new(c, 0.0, 0.0);
    let w2 = PI + delta;
    let w1 = w2 - w.theta[2];
    let w3 = w2 + w.theta[0];
    [
        ArcShape::new(start, w1, c),
        ArcShape::new(start, w2, c),
        ArcShape::new(start, w3, c),
    ]
}

impl ArcShape {
    /// Exact value of the integral of `x dy - y dx` along the arc.
    fn green(&self) -> f64 {
        let (w, k, l) = (self.omega, self.curvature, self.length);
        let cross = |a: Vec3, b: Vec3| a.x * b.y - a.y * b.x;
        if k == 0.0 {
            return cross(self.start, self.tangent(0.0)) * l;
        }
        let centre = self.start + Vec3::new(-w.sin(), w.cos(), 0.0) / k;
        let q = |s: f64| self.point(s) - centre;
        cross(centre, q(l) - q(0.0)) + l / k
    }
}

/// Areas of the upper and lower regions.
fn bubble_areas(w: &AngleWeights, c: f64, delta: f64) -> [f64; 2] {
    let a = bubble_arcs(w, c, delta);
    let g: Vec<f64> = a.iter().map(ArcShape::green).collect();
    [(0.5 * (g[0] - g[1])).abs(), (0.5 * (g[1] - g[2])).abs()]
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Solves for the junction half-width and middle-arc tilt giving `areas`.
pub fn double_bubble_shape(w: &AngleWeights, areas: [f64; 2]) -> Result<(f64, f64)> {
    positive("area", areas[0])?;
    positive("area", areas[1])?;
    let target = (areas[0] / areas[1]).ln();
    let lo = w.theta[2] - PI + 1e-3;
    let hi = PI - w.theta[0] - 1e-3;
    let f = |d: f64| {
        let a = bubble_areas(w, 1.0, d);
        (a[0] / a[1]).ln() - target
    };
    if f(lo) * f(hi) > 0.0 {
        return Err(FlowError::BadMesh(format!("no double bubble with areas {areas:?}")));
    }
    let delta = if target.abs() < 1e-15 && w.gamma[0] == w.gamma[2] {
        0.0
    } else {
        bisect(lo, hi, f)
    };
    let unit = bubble_areas(w, 1.0, delta);
    let c = (areas[0] / unit[0]).sqrt();
    Ok((c, delta))
}

fn double_bubble(w: &AngleWeights, areas: [f64; 2], n: usize) -> Result<ClusterInput> {
    check_intervals(n)?;
    let (c, delta) = double_bubble_shape(w, areas)?;
    let arcs = bubble_arcs(w, c, delta);
    let right = Vec3::new(c, 0.0, 0.0);
    let left = Vec3::new(-c, 0.0, 0.0);
    let mut charts = Vec::new();
    let mut exact = Vec::new();
    for (i, a) in arcs.iter().enumerate() {
        let grid = Grid {
            nk: n + 1,
            ring: 1,
            dx: 1.0 / n as f64,
            dy: 1.0,
            closed: false,
        };
        let s: Vec<f64> = (0..=n).map(|k| a.length * k as f64 / n as f64).collect();
        let mut positions: Vec<Vec3> = s.iter().map(|&s| a.point(s)).collect();
        positions[0] = right;
        positions[n] = left;
        charts.push(DiscreteChart {
            sheet: i,
            dim: 1,
            grid,
            positions,
            period: Vec3::zeros(),
            ends: [EndCondition::Junction(0), EndCondition::Junction(1)],
        });
        exact.push(Some(ExactCurve {
            unit_tangent: s.iter().map(|&s| a.tangent(s)).collect(),
            curvature: vec![a.curvature; n + 1],
            arclength: s,
        }));
    }
    Ok(ClusterInput {
        charts,
        exact,
        junctions: vec![
            [(0, End::Start), (1, End::Start), (2, End::Start)],
            [(0, End::Finish), (1, End::Finish), (2, End::Finish)],
        ],
        regions: vec![vec![(0, false), (1, true)], vec![(1, false), (2, true)]],
        pinned_outer: false,
    })
}

fn circle(radius: f64, n: usize) -> Result<ClusterInput> {
    check_intervals(n)?;
    positive("radius", radius)?;
    let grid = Grid {
        nk: n,
        ring: 1,
        dx: 1.0 / n as f64,
        dy: 1.0,
        closed: true,
    };
    let ang: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
    let positions = ang.iter().map(|a| Vec3::new(a.cos(), a.sin(), 0.0) * radius).collect();
    let exact = ExactCurve {
        unit_tangent: ang.iter().map(|a| Vec3::new(-a.sin(), a.cos(), 0.0)).collect(),
        curvature: vec![1.0 / radius; n],
        arclength: ang.iter().map(|a| a * radius).collect(),
    };
    Ok(ClusterInput {
        charts: vec![DiscreteChart {
            sheet: 0,
            dim: 1,
            grid,
            positions,
            period: Vec3::zeros(),
            ends: [EndCondition::Closed, EndCondition::Closed],
        }],
        exact: vec![Some(exact)],
        junctions: Vec::new(),
        regions: vec![vec![(0, false)]],
        pinned_outer: false,
    })
}

fn arc(radius: f64, angle: f64, n: usize) -> Result<ClusterInput> {
    check_intervals(n)?;
    positive("radius", radius)?;
    if !(angle > 0.0 && angle < 2.0 * PI) {
        return Err(FlowError::BadMesh(format!("arc angle {angle} outside (0, 2 pi)")));
    }
    let grid = Grid {
        nk: n + 1,
        ring: 1,
        dx: 1.0 / n as f64,
        dy: 1.0,
        closed: false,
    };
    let positions = (0..=n)
        .map(|k| {
            let a = angle * k as f64 / n as f64;
            Vec3::new(a.cos(), a.sin(), 0.0) * radius
        })
        .collect();
    Ok(ClusterInput {
        charts: vec![DiscreteChart {
            sheet: 0,
            dim: 1,
            grid,
            positions,
            period: Vec3::zeros(),
            ends: [EndCondition::Pinned, EndCondition::Pinned],
        }],
        exact: vec![None],
        junctions: Vec::new(),
        regions: Vec::new(),
        pinned_outer: true,
    })
}

/// Parses a planar node table with exactly three charts.
pub fn node_table(text: &str) -> Result<ClusterInput> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| FlowError::BadMesh(format!("table header: {e}")))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < 4 || names[..4] != ["chart_id", "node_index", "x", "y"] {
        return Err(FlowError::BadMesh(format!("unexpected table header {names:?}")));
    }
    let has_z = names.get(4) == Some(&"z");
    let mut rows: BTreeMap<i64, BTreeMap<i64, Vec3>> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FlowError::BadMesh(format!("table row {line}: {e}")))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| FlowError::BadMesh(format!("table row {line}: missing column {i}")))?
                .parse::<f64>()
                .map_err(|e| FlowError::BadMesh(format!("table row {line}: {e}")))
        };
        let id = |i: usize| -> Result<i64> {
            rec.get(i)
                .ok_or_else(|| FlowError::BadMesh(format!("table row {line}: missing column {i}")))?
                .parse::<i64>()
                .map_err(|e| FlowError::BadMesh(format!("table row {line}: {e}")))
        };
        let z = if has_z { num(4)? } else { 0.0 };
        if z != 0.0 {
            return Err(FlowError::Unsupported("node tables must be planar (z = 0)".into()));
        }
        let p = Vec3::new(num(2)?, num(3)?, 0.0);
        if rows.entry(id(0)?).or_default().insert(id(1)?, p).is_some() {
            return Err(FlowError::BadMesh(format!("table row {line}: duplicate node")));
        }
    }
    if rows.len() != 3 {
        return Err(FlowError::BadMesh(format!("{} charts in table; exactly 3 required", rows.len())));
    }
    let mut polylines = Vec::new();
    for (cid, nodes) in &rows {
        for (expect, (&k, _)) in nodes.iter().enumerate() {
            if k != expect as i64 {
                return Err(FlowError::BadMesh(format!(
                    "chart {cid}: node indices must run 0..n without gaps"
                )));
            }
        }
        let pts: Vec<Vec3> = nodes.values().cloned().collect();
        if pts.len() < 9 {
            return Err(FlowError::BadMesh(format!("chart {cid}: fewer than 8 intervals")));
        }
        let gaps: Vec<f64> = pts.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        let (lo, hi) = gaps.iter().fold((f64::INFINITY, 0.0f64), |(a, b), g| (a.min(*g), b.max(*g)));
        if lo <= 0.0 || hi / lo > 10.0 {
            return Err(FlowError::BadMesh(format!(
                "chart {cid}: node spacing ratio {:.3e} (degenerate or non-monotone)",
                hi / lo
            )));
        }
        for w in pts.windows(3) {
            let (a, b) = (w[1] - w[0], w[2] - w[1]);
            if a.dot(&b) <= 0.0 {
                return Err(FlowError::BadMesh(format!("chart {cid}: polyline folds back")));
            }
        }
        polylines.push(pts);
    }
    let scale = polylines
        .iter()
        .flatten()
        .fold(0.0f64, |a, p| a.max(p.x.abs()).max(p.y.abs()))
        .max(1.0);
    let tol = 1e-9 * scale;
    // Group chart ends by position.
    let mut groups: Vec<(Vec3, Vec<(usize, End)>)> = Vec::new();
    for (c, pts) in polylines.iter().enumerate() {
        for (end, p) in [(End::Start, pts[0]), (End::Finish, *pts.last().unwrap())] {
            match groups.iter_mut().find(|(q, _)| (q - p).norm() <= tol) {
                Some(g) => g.1.push((c, end)),
                None => groups.push((p, vec![(c, end)])),
            }
        }
    }
    let mut ends = vec![[EndCondition::Pinned; 2]; 3];
    let mut junctions = Vec::new();
    for (p, members) in &groups {
        match members.len() {
            1 => {}
            3 => {
                let mut sorted = members.clone();
                sorted.sort_by_key(|m| m.0);
                if sorted.iter().map(|m| m.0).collect::<Vec<_>>() != [0, 1, 2] {
                    return Err(FlowError::BadMesh("a chart meets itself at a junction".into()));
                }
                let jid = junctions.len();
                for &(c, end) in &sorted {
                    ends[c][end.index()] = EndCondition::Junction(jid);
                    let pts = &mut polylines[c];
                    let idx = if end == End::Start { 0 } else { pts.len() - 1 };
                    pts[idx] = *p;
                }
                junctions.push([sorted[0], sorted[1], sorted[2]]);
            }
            k => {
                return Err(FlowError::BadMesh(format!(
                    "{k} chart ends meet at ({}, {}); only 1 or 3 allowed",
                    p.x, p.y
                )))
            }
        }
    }
    if junctions.is_empty() {
        return Err(FlowError::BadMesh("table contains no triple junction".into()));
    }
    let pinned_outer = ends.iter().flatten().any(|e| *e == EndCondition::Pinned);
    let charts = polylines
        .into_iter()
        .enumerate()
        .map(|(c, positions)| {
            let n = positions.len() - 1;
            DiscreteChart {
                sheet: c,
                dim: 1,
                grid: Grid {
                    nk: n + 1,
                    ring: 1,
                    dx: 1.0 / n as f64,
                    dy: 1.0,
                    closed: false,
                },
                positions,
                period: Vec3::zeros(),
                ends: ends[c],
            }
        })
        .collect();
    Ok(ClusterInput {
        charts,
        exact: vec![None, None, None],
        junctions,
        regions: Vec::new(),
        pinned_outer,
    })
}

