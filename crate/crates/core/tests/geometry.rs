use junctionflow::geometry::{cutoff, End};
use junctionflow::scenarios::{build_reference_with_r0, double_bubble_shape};
use junctionflow::{build_reference, AngleWeights, FlowError, GeometrySpec};
use std::f64::consts::PI;

fn triod(n: usize) -> GeometrySpec {
    GeometrySpec::Triod {
        leg_length: 1.0,
        intervals: n,
    }
}

#[test]
fn straight_triod_has_flat_fields_and_balanced_frame() {
    let cl = build_reference(&triod(40), &AngleWeights::symmetric()).unwrap();
    let inv = cl.invariants();
    assert!(inv.passes(), "{inv:?}");
    for f in &cl.fields {
        assert!(f.mean_curv.iter().all(|h| *h == 0.0));
        assert!(f.pi_sq.iter().all(|h| *h == 0.0));
        assert!(f.grad_h_tau.iter().all(|h| *h == 0.0));
        assert_eq!(f.kappa[0], vec![0.0]);
    }
    assert!((cl.reference_energy() - 3.0).abs() < 1e-13);
}

#[test]
fn unequal_tension_triod_is_balanced() {
    let w = AngleWeights::from_gamma([1.0, 1.0, 3f64.sqrt()], [1.0, 2.0, 0.5]).unwrap();
    let cl = build_reference(&triod(32), &w).unwrap();
    assert!(cl.invariants().passes(), "{:?}", cl.invariants());
}

#[test]
fn equal_area_double_bubble() {
    let w = AngleWeights::symmetric();
    let cl = build_reference(
        &GeometrySpec::DoubleBubble {
            areas: [1.0, 1.0],
            intervals: 64,
        },
        &w,
    )
    .unwrap();
    assert_eq!(cl.junctions.len(), 2);
    let inv = cl.invariants();
    assert!(inv.passes(), "{inv:?}");
    for jid in 0..2 {
        for a in 0..3 {
            for b in a + 1..3 {
                let (ca, na) = cl.junction_node(jid, a, 0);
                let (cb, nb) = cl.junction_node(jid, b, 0);
                let d = cl.fields[ca].normal[na].dot(&cl.fields[cb].normal[nb]);
                assert!((d + 0.5).abs() < 1e-10);
            }
        }
    }
    // Middle arc straight, outer arcs of radius r with 2c = r*sqrt(3).
    assert!(cl.fields[1].mean_curv.iter().all(|h| h.abs() < 1e-12));
    let (c, delta) = double_bubble_shape(&w, [1.0, 1.0]).unwrap();
    assert_eq!(delta, 0.0);
    let r = 1.0 / cl.fields[0].mean_curv[3].abs();
    assert!((2.0 * c - r * 3f64.sqrt()).abs() < 1e-9);
    // Region area of a 240 degree cap over a chord of length 2c.
    let cap = r * r * (4.0 * PI / 3.0 - (4.0 * PI / 3.0).sin()) / 2.0;
    assert!((cap - 1.0).abs() < 1e-7, "{cap}");
}

#[test]
fn unequal_double_bubble_areas_are_met() {
    let w = AngleWeights::symmetric();
    let (c, delta) = double_bubble_shape(&w, [1.0, 0.5]).unwrap();
    assert!(delta != 0.0 && c > 0.0);
    let cl = build_reference(
        &GeometrySpec::DoubleBubble {
            areas: [1.0, 0.5],
            intervals: 64,
        },
        &w,
    )
    .unwrap();
    assert!(cl.invariants().passes());
    for (r, want) in cl.regions.iter().zip([1.0, 0.5]) {
        let mut pts = Vec::new();
        for &(c, rev) in r {
            let mut p = cl.charts[c].positions.clone();
            if rev {
                p.reverse();
            }
            pts.extend(p);
        }
        let mut a = 0.0;
        for i in 0..pts.len() {
            let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
            a += 0.5 * (p.x * q.y - q.x * p.y);
        }
        assert!((a.abs() - want).abs() < 5e-3 * want, "{a}");
    }
}

#[test]
fn flat_prism_fields_vanish() {
    let cl = build_reference(
        &GeometrySpec::Prism {
            leg_length: 1.0,
            period: 1.0,
            intervals: 16,
            ring: 12,
        },
        &AngleWeights::symmetric(),
    )
    .unwrap();
    let inv = cl.invariants();
    assert!(inv.passes(), "{inv:?}");
    for f in &cl.fields {
        assert!(f.pi_sq.iter().all(|v| v.abs() < 1e-20));
        assert!(f.mean_curv.iter().all(|v| v.abs() < 1e-10));
        assert!(f.kappa[0].iter().all(|v| v.abs() < 1e-10));
    }
    let p = cl.project_to_junction(0, cl.charts[0].grid.idx(2, 7)).unwrap();
    assert_eq!((p.junction, p.ring, p.outside), (0, 7, false));
    assert!((cl.reference_energy() - 3.0).abs() < 1e-12);
}

#[test]
fn tau_field_matches_cutoff() {
    let cl = build_reference(&triod(400), &AngleWeights::symmetric()).unwrap();
    assert!((cl.r0 - 0.25).abs() < 1e-15);
    let f = &cl.fields[0];
    assert_eq!(f.tau[0], f.conormal[0][0]);
    for (k, t) in f.tau.iter().enumerate() {
        let s = k as f64 / 400.0;
        if s >= 0.25 {
            assert_eq!(*t, junctionflow::Vec3::zeros());
        } else {
            assert!((t.norm() - cutoff(s / 0.25)).abs() < 1e-14);
        }
    }
    assert!((f.tau_slope_max - 7.5).abs() < 1e-3, "{}", f.tau_slope_max);
}

#[test]
fn overlapping_supports_are_rejected() {
    let r = build_reference_with_r0(
        &GeometrySpec::DoubleBubble {
            areas: [1.0, 1.0],
            intervals: 32,
        },
        &AngleWeights::symmetric(),
        Some(10.0),
    );
    assert!(matches!(r, Err(FlowError::SupportOverlap { .. })));
}

#[test]
fn projection_picks_nearest_junction() {
    let cl = build_reference(
        &GeometrySpec::DoubleBubble {
            areas: [1.0, 1.0],
            intervals: 64,
        },
        &AngleWeights::symmetric(),
    )
    .unwrap();
    let near_left = cl.project_to_junction(0, 62).unwrap();
    assert_eq!((near_left.junction, near_left.end), (1, End::Finish));
    let near_right = cl.project_to_junction(2, 1).unwrap();
    assert_eq!(near_right.junction, 0);
    let middle = cl.project_to_junction(1, 30).unwrap();
    assert!(middle.outside);
    let t = build_reference(&triod(16), &AngleWeights::symmetric()).unwrap();
    assert_eq!(t.project_to_junction(1, 2).unwrap().junction, 0);
}

#[test]
fn arc_curvature_converges_at_second_order() {
    let err = |n: usize| {
        let cl = build_reference(
            &GeometrySpec::Arc {
                radius: 2.0,
                angle: 2.0,
                intervals: n,
            },
            &AngleWeights::symmetric(),
        )
        .unwrap();
        cl.fields[0]
            .mean_curv
            .iter()
            .map(|h| (h - 0.5).abs())
            .fold(0.0, f64::max)
    };
    let (e1, e2, e3) = (err(32), err(64), err(128));
    let s1 = (e1 / e2).log2();
    let s2 = (e2 / e3).log2();
    assert!((1.8..=2.2).contains(&s1) && (1.8..=2.2).contains(&s2), "{s1} {s2}");
}

#[test]
fn node_table_round_trip() {
    let mut text = String::from("chart_id,node_index,x,y\n");
    for (c, a) in [-90.0f64, 30.0, 150.0].iter().enumerate() {
        let a = a.to_radians();
        for k in 0..=16 {
            let s = k as f64 / 16.0;
            text += &format!("{c},{k},{},{}\n", -a.cos() * s, -a.sin() * s);
        }
    }
    let cl = build_reference(&GeometrySpec::TableText { text }, &AngleWeights::symmetric()).unwrap();
    assert!(cl.invariants().passes(), "{:?}", cl.invariants());
    assert!(cl.pinned_outer);
    for f in &cl.fields {
        assert!(f.mean_curv.iter().all(|h| h.abs() < 1e-10));
    }
}

#[test]
fn node_table_errors() {
    let mut text = String::from("chart_id,node_index,x,y\n");
    for (c, a) in [-90.0f64, 0.0, 180.0].iter().enumerate() {
        let a = a.to_radians();
        for k in 0..=16 {
            let s = k as f64 / 16.0;
            text += &format!("{c},{k},{},{}\n", -a.cos() * s, -a.sin() * s);
        }
    }
    let r = build_reference(&GeometrySpec::TableText { text }, &AngleWeights::symmetric());
    assert!(matches!(r, Err(FlowError::OrientationFailure(_))), "{r:?}");

    let mut text = String::from("chart_id,node_index,x,y\n");
    for c in 0..3 {
        for k in 0..=16 {
            text += &format!("{c},{k},{},{}\n", k as f64 + c as f64 * 100.0, 0.0);
        }
    }
    let r = build_reference(&GeometrySpec::TableText { text }, &AngleWeights::symmetric());
    assert!(matches!(r, Err(FlowError::BadMesh(_))));

    let text = "chart_id,node_index,x,y\n0,0,0,0\n0,1,1,0\n".to_string();
    let r = build_reference(&GeometrySpec::TableText { text }, &AngleWeights::symmetric());
    assert!(matches!(r, Err(FlowError::BadMesh(_))));
}
