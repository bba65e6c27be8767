mod common;

use common::*;
use junctionflow::geometry::End;
use junctionflow::linear::{
    assemble, laplacian_stencil, normal_derivative, operator, solve_step, stack, unstack, weak_residual, Closure,
    LinearData, RowClass,
};
use junctionflow::ReferenceCluster;
use rand::Rng;
use std::f64::consts::PI;

fn entry(sys: &junctionflow::solver::Triplets<f64>, i: usize, j: usize) -> f64 {
    sys.entries.iter().filter(|e| e.0 == i && e.1 == j).map(|e| e.2).sum()
}

#[test]
fn flat_triod_rows_are_heat_stencils() {
    let cl = triod(20);
    let dt = 1e-3;
    let (a, rows, _) = operator(&cl, Some(dt), Closure::OneSided).unwrap();
    let off = cl.offsets();
    let h = 1.0 / 20.0;
    for c in 0..3 {
        let i = off[c] + 7;
        assert_eq!(rows[i], RowClass::Interior);
        assert!((entry(&a, i, i) - (1.0 / dt + 2.0 / (h * h))).abs() < 1e-9);
        assert!((entry(&a, i, i + 1) + 1.0 / (h * h)).abs() < 1e-9);
        assert!((entry(&a, i, i - 1) + 1.0 / (h * h)).abs() < 1e-9);
        let mut cols: Vec<usize> = a.entries.iter().filter(|e| e.0 == i).map(|e| e.1).collect();
        cols.sort_unstable();
        cols.dedup();
        assert_eq!(cols.len(), 3);
        assert_eq!(rows[off[c] + 20], RowClass::Pinned);
    }
    let (c0, n0) = cl.junction_node(0, 0, 0);
    let row0 = off[c0] + n0;
    for m in 0..3 {
        let (cm, nm) = cl.junction_node(0, m, 0);
        assert_eq!(entry(&a, row0, off[cm] + nm), cl.weights.gamma[m]);
    }
    assert_eq!(a.entries.iter().filter(|e| e.0 == row0).count(), 3);
    // Flat jump rows: conormal derivatives only, no curvature coupling.
    let (c1, n1) = cl.junction_node(0, 1, 0);
    let nd = a.entries.iter().filter(|e| e.0 == off[c1] + n1).count();
    assert_eq!(nd, 6);
}

#[test]
fn curved_jump_rows_carry_curvature_coupling() {
    let cl = bubble(64);
    let (a, _, _) = operator(&cl, Some(1e-3), Closure::OneSided).unwrap();
    let off = cl.offsets();
    let t = cl.coupling.m;
    let (c1, n1) = cl.junction_node(0, 1, 0);
    let row = off[c1] + n1;
    let kap = |m: usize| {
        let (c, e) = cl.junctions[0].members[m];
        cl.fields[c].kappa[e.index()][0]
    };
    for l in 0..3 {
        let (cl_, nl) = cl.junction_node(0, l, 0);
        let want_kappa = kap(0) * t[(0, l)] - kap(1) * t[(1, l)];
        let nd: f64 = [0usize, 1]
            .iter()
            .map(|&m| {
                let (cm, e) = cl.junctions[0].members[m];
                let s = junctionflow::linear::normal_derivative_stencil(&cl, cm, e, 0);
                let sign = if m == 0 { 1.0 } else { -1.0 };
                s.iter().filter(|(n, _)| off[cm] + n == off[cl_] + nl).map(|(_, w)| sign * w).sum::<f64>()
            })
            .sum();
        assert!((entry(&a, row, off[cl_] + nl) - (want_kappa + nd)).abs() < 1e-9);
    }
}

#[test]
fn stationary_limit_drops_the_mass_term() {
    let cl = bubble(32);
    let dt = 0.01;
    let (a, rows, _) = operator(&cl, Some(dt), Closure::OneSided).unwrap();
    let (s, _, _) = operator(&cl, None, Closure::OneSided).unwrap();
    let (da, ds) = (a.to_dense(), s.to_dense());
    for i in 0..rows.len() {
        for j in 0..rows.len() {
            let mass = if i == j && rows[i] == RowClass::Interior { 1.0 / dt } else { 0.0 };
            assert!((da[(i, j)] - ds[(i, j)] - mass).abs() < 1e-9 * (1.0 + ds[(i, j)].abs()));
        }
    }
}

#[test]
fn zero_data_gives_zero_solution() {
    for cl in [triod(16), bubble(32), prism(10, 8)] {
        for closure in [Closure::OneSided, Closure::HalfCell] {
            let sys = assemble(&cl, Some(1e-3), closure, &LinearData::zeros(&cl)).unwrap();
            let u = solve_step(&sys).unwrap();
            assert!(u.iter().all(|v| *v == 0.0));
        }
    }
}

#[test]
fn small_steps_are_consistent_with_explicit_euler() {
    let cl = triod(40);
    let mut data = LinearData::zeros(&cl);
    for c in 0..3 {
        for (k, v) in data.u_old[c].iter_mut().enumerate() {
            let x = k as f64 / 40.0;
            *v = (1.0 + c as f64) * (PI * x).sin() * (1.0 - x);
        }
        data.f[c] = vec![1.0; 41];
    }
    let err = |dt: f64| {
        let sys = assemble(&cl, Some(dt), Closure::OneSided, &data).unwrap();
        let u = unstack(&cl, &solve_step(&sys).unwrap());
        let mut e = 0.0f64;
        for c in 0..3 {
            for k in 12..=28 {
                let lap: f64 = laplacian_stencil(&cl, c, k, 0)
                    .iter()
                    .map(|(n, w)| w * data.u_old[c][*n])
                    .sum();
                let rate = (u[c][k] - data.u_old[c][k]) / dt;
                e = e.max((rate - lap - 1.0).abs());
            }
        }
        e
    };
    let e: Vec<f64> = [1e-4, 5e-5, 2.5e-5].iter().map(|d| err(*d)).collect();
    assert!(e[2] < e[1] && e[1] < e[0], "{e:?}");
    assert!((log_slope(&[1e-4, 5e-5, 2.5e-5], &e) - 1.0).abs() < 0.1, "{e:?}");
}

/// Smooth trajectory on the equal-area bubble with prescribed junction values.
struct Manufactured {
    alpha: [f64; 3],
    start: [f64; 3],
    finish: [f64; 3],
}

impl Manufactured {
    fn new() -> Self {
        Self {
            alpha: [0.3, -0.2, 0.25],
            start: [0.1, -0.1, 0.0],
            finish: [0.05, 0.05, -0.1],
        }
    }

    fn value(&self, cl: &ReferenceCluster, c: usize, i: usize, t: f64) -> (f64, f64, f64) {
        let e = cl.exact[c].as_ref().unwrap();
        let l = cl.fields[c].length;
        let s = e.arclength[i];
        let a = self.alpha[c];
        let d = (self.finish[c] - self.start[c]) / l;
        let u = a * (PI * s / l).sin() + self.start[c] + d * s;
        let us = a * PI / l * (PI * s / l).cos() + d;
        let uss = -a * (PI / l).powi(2) * (PI * s / l).sin();
        let g = (-t).exp();
        (u * g, us * g, uss * g)
    }

    fn field(&self, cl: &ReferenceCluster, t: f64) -> Vec<Vec<f64>> {
        (0..3)
            .map(|c| (0..cl.charts[c].grid.len()).map(|i| self.value(cl, c, i, t).0).collect())
            .collect()
    }

    fn data(&self, cl: &ReferenceCluster, t: f64, u_old: Vec<Vec<f64>>) -> LinearData {
        let tm = cl.coupling.m;
        let u = self.field(cl, t);
        let mut d = LinearData::zeros(cl);
        d.u_old = u_old;
        for c in 0..3 {
            let beta = cl.weights.beta[c];
            let z = junctionflow::linear::zeta(cl, c);
            for i in 0..u[c].len() {
                let (v, _, vss) = self.value(cl, c, i, t);
                let mut tu = 0.0;
                if z[i] != 0.0 {
                    let p = cl.project_to_junction(c, i).unwrap();
                    for m in 0..3 {
                        let (cm, nm) = cl.junction_node(p.junction, m, p.ring);
                        tu += tm[(c, m)] * u[cm][nm];
                    }
                }
                d.f[c][i] = -v - beta * (vss + cl.fields[c].pi_sq[i] * v) - z[i] * tu;
            }
        }
        for (jid, jn) in cl.junctions.iter().enumerate() {
            let mut q = [0.0; 3];
            let mut uj = [0.0; 3];
            for m in 0..3 {
                let (c, n) = cl.junction_node(jid, m, 0);
                uj[m] = u[c][n];
            }
            for m in 0..3 {
                let (c, end) = jn.members[m];
                let n = cl.charts[c].end_node(end, 0);
                let (_, us, _) = self.value(cl, c, n, t);
                let tu: f64 = (0..3).map(|l| tm[(m, l)] * uj[l]).sum();
                q[m] = end.outward_sign() * us + cl.fields[c].kappa[end.index()][0] * tu;
            }
            d.b[jid][0] = [0.0, q[0] - q[1], q[1] - q[2]];
        }
        d
    }
}

fn manufactured_error(n: usize, dt: f64, closure: Closure) -> (f64, f64) {
    let cl = bubble(n);
    let ms = Manufactured::new();
    let steps = (0.05 / dt).round() as usize;
    let mut u = ms.field(&cl, 0.0);
    let mut weak = 0.0f64;
    for s in 1..=steps {
        let t = s as f64 * dt;
        let data = ms.data(&cl, t, u.clone());
        let sys = assemble(&cl, Some(dt), closure, &data).unwrap();
        let new = unstack(&cl, &solve_step(&sys).unwrap());
        if s == steps {
            let exact_new = ms.field(&cl, t);
            let exact_old = ms.field(&cl, t - dt);
            weak = weak_residual(&cl, &exact_new, &exact_old, dt, &data.f, &data.b).unwrap();
        }
        u = new;
    }
    let exact = ms.field(&cl, steps as f64 * dt);
    let err = u
        .iter()
        .flatten()
        .zip(exact.iter().flatten())
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    (err, weak)
}

#[test]
fn manufactured_solution_converges() {
    for closure in [Closure::OneSided, Closure::HalfCell] {
        let (e1, w1) = manufactured_error(32, 2e-3, closure);
        let (e2, w2) = manufactured_error(64, 5e-4, closure);
        assert!(e2 < 2e-3, "{closure:?} {e2}");
        assert!(e1 / e2 > 3.0, "{closure:?} {e1} {e2}");
        if closure == Closure::HalfCell {
            assert!(w1 / w2 > 3.0 && w2 < 1e-2, "{w1} {w2}");
        }
    }
}

#[test]
fn half_cell_solution_satisfies_the_weak_form() {
    for cl in [triod(32), bubble(64), prism(16, 8)] {
        let mut g = rng(9);
        let mut data = LinearData::zeros(&cl);
        data.u_old = smooth_rho(&cl, &mut g, 0.1);
        for f in data.f.iter_mut().flatten() {
            *f = g.random_range(-1.0..1.0);
        }
        for ring in data.b.iter_mut() {
            for b in ring.iter_mut() {
                *b = [0.0, g.random_range(-1.0..1.0), g.random_range(-1.0..1.0)];
            }
        }
        let dt = 1e-3;
        let sys = assemble(&cl, Some(dt), Closure::HalfCell, &data).unwrap();
        let u = unstack(&cl, &solve_step(&sys).unwrap());
        let r = weak_residual(&cl, &u, &data.u_old, dt, &data.f, &data.b).unwrap();
        assert!(r <= 1e-8, "{r}");
        let mut bad = u.clone();
        bad[1][5] += 0.1;
        let rb = weak_residual(&cl, &bad, &data.u_old, dt, &data.f, &data.b).unwrap();
        assert!(rb > 0.1, "{rb}");
    }
}

#[test]
fn flat_steps_are_sup_norm_stable() {
    let cl = triod(32);
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut g = rng(seed);
        let mut data = LinearData::zeros(&cl);
        for c in 0..3 {
            for k in 0..32 {
                data.u_old[c][k] = g.random_range(-1.0..1.0);
            }
        }
        let before = data.u_old.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
        for dt in [1e-5, 1e-3, 1e-1, 10.0] {
            for closure in [Closure::HalfCell] {
                let sys = assemble(&cl, Some(dt), closure, &data).unwrap();
                let u = solve_step(&sys).unwrap();
                let after = u.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                worst = worst.max(after / before);
            }
        }
    }
    assert!(worst <= 1.0 + 1e-12, "growth factor {worst}");
}

#[test]
fn solve_residual_is_small() {
    let cl = bubble(128);
    let mut g = rng(1);
    let mut data = LinearData::zeros(&cl);
    data.u_old = smooth_rho(&cl, &mut g, 0.1);
    let sys = assemble(&cl, None, Closure::OneSided, &data).unwrap();
    let _ = sys;
    let sys = assemble(&cl, Some(1e-4), Closure::OneSided, &data).unwrap();
    let u = solve_step(&sys).unwrap();
    let scale = sys.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    assert!(sys.residual(&u) <= 1e-10 * scale);
    assert_eq!(stack(&unstack(&cl, &u)), u);
    let _ = normal_derivative(&cl, 0, End::Start, 0, &unstack(&cl, &u)[0]);
}
