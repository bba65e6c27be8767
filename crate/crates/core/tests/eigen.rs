mod common;

use common::*;
use junctionflow::eigen::{dense_eigen, forms_of, reduced_forms, solve_eigen};
use junctionflow::{build_reference, AngleWeights, GeometrySpec};
use std::f64::consts::PI;

#[test]
fn symmetric_triod_spectrum() {
    let cl = triod(400);
    let es = solve_eigen(&cl, 5).unwrap();
    let want = [0.25, 0.25, 1.0, 2.25, 2.25].map(|c| c * PI * PI);
    for (got, w) in es.eigenvalues.iter().zip(want) {
        assert!((got - w).abs() < 1e-6 * w, "{got} vs {w}");
    }
}

#[test]
fn spectrum_converges_at_fourth_order() {
    let err = |n| (solve_eigen(&triod(n), 1).unwrap().eigenvalues[0] - 0.25 * PI * PI).abs();
    let (a, b) = (err(20), err(40));
    assert!((a / b).log2() > 3.5, "{a} {b}");
}

#[test]
fn iterative_matches_dense() {
    for cl in [triod(40), bubble(48), prism(10, 8)] {
        let it = solve_eigen(&cl, 4).unwrap();
        let de = dense_eigen(&cl, 4).unwrap();
        for (a, b) in it.eigenvalues.iter().zip(&de.eigenvalues) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} {b}");
        }
    }
}

#[test]
fn eigenvectors_are_orthonormal_and_admissible() {
    let cl = bubble(96);
    let es = solve_eigen(&cl, 4).unwrap();
    let g = cl.weights.gamma;
    for (a, u) in es.vectors.iter().enumerate() {
        for (b, v) in es.vectors.iter().enumerate() {
            let (m, q) = forms_of(&cl, u, v).unwrap();
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((m - want).abs() < 1e-10, "{a} {b} {m}");
            if a == b {
                assert!((q - es.eigenvalues[a]).abs() < 1e-8 * (1.0 + q.abs()));
            }
        }
        for jid in 0..cl.junctions.len() {
            let s: f64 = (0..3)
                .map(|m| {
                    let (c, n) = cl.junction_node(jid, m, 0);
                    g[m] * u[c][n]
                })
                .sum();
            assert!(s.abs() < 1e-12);
        }
    }
}

#[test]
fn reduced_forms_are_symmetric() {
    for cl in [triod(30), bubble(40), prism(8, 8)] {
        let f = reduced_forms(&cl).unwrap();
        for m in [f.stiffness.to_dense(), f.mass.to_dense()] {
            let scale = m.amax();
            assert!((&m - m.transpose()).amax() <= 1e-13 * scale);
        }
    }
}

#[test]
fn weights_scale_the_spectrum() {
    let base = solve_eigen(&triod(60), 3).unwrap().eigenvalues;
    let cl = build_reference(
        &GeometrySpec::Triod {
            leg_length: 1.0,
            intervals: 60,
        },
        &AngleWeights::from_gamma([1.0, 1.0, 1.0], [2.0, 2.0, 2.0]).unwrap(),
    )
    .unwrap();
    let doubled = solve_eigen(&cl, 3).unwrap().eigenvalues;
    for (a, b) in base.iter().zip(&doubled) {
        assert!((2.0 * a - b).abs() < 1e-9 * b);
    }
}

#[test]
fn double_bubble_kernel_is_sheetwise_constant() {
    // No pinned ends: constants per sheet with vanishing weighted sum.
    let cl = bubble(128);
    let es = solve_eigen(&cl, 3).unwrap();
    let l = &es.eigenvalues;
    assert!(l[0].abs() < 1e-9 && l[1].abs() < 1e-9 && l[2] > 1.0, "{l:?}");
    for u in &es.vectors[..2] {
        for c in u {
            let spread = c.iter().fold(0.0f64, |a, v| a.max((v - c[0]).abs()));
            assert!(spread < 1e-8);
        }
    }
}

#[test]
fn flat_prism_adds_ring_modes() {
    let es = solve_eigen(&prism(40, 16), 3).unwrap();
    let l = &es.eigenvalues;
    let q = 0.25 * PI * PI;
    assert!((l[0] - q).abs() < 1e-3 * q && (l[1] - q).abs() < 1e-3 * q, "{l:?}");
    // Next: pi^2 on the legs or the first ring harmonic on the lowest leg mode.
    let next = (PI * PI).min(q + 4.0 * PI * PI);
    assert!((l[2] - next).abs() < 1e-2 * next, "{l:?}");
}
