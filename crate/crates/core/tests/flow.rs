mod common;

use common::*;
use junctionflow::flow::{cluster_energy, picard_step, re_reference, ContinuationStatus, Flow, FlowConfig};
use junctionflow::shape::{coefficients, evaluate, shape_quantities, HeightState};
use junctionflow::{build_reference, AngleWeights, FlowError, GeometrySpec};
use std::f64::consts::PI;

fn circle(n: usize) -> junctionflow::ReferenceCluster {
    build_reference(
        &GeometrySpec::Circle {
            radius: 1.0,
            intervals: n,
        },
        &AngleWeights::symmetric(),
    )
    .unwrap()
}

#[test]
fn steiner_triod_is_a_fixed_point() {
    let cl = triod(40);
    let st = HeightState::zeros(&cl);
    let (next, rep) = picard_step(&cl, &st, 1e-3, &FlowConfig::default()).unwrap();
    assert!(next.max_abs() <= 1e-12);
    assert!(rep.iterations <= 2);
    let mut flow = Flow::new(cl, st, FlowConfig { t_end: 1.0, ..Default::default() }).unwrap();
    let e0 = flow.energy;
    for _ in 0..200 {
        let rec = flow.advance().unwrap();
        assert!((rec.energy - e0).abs() <= 1e-12 * e0 && rec.dissipation_defect <= 1e-12);
    }
    assert!(flow.state.max_abs() <= 1e-10 && flow.status == ContinuationStatus::Running);
}

#[test]
fn double_bubble_picard_contracts() {
    let cl = bubble(200);
    let st = HeightState::zeros(&cl);
    let dt = 0.25 * cl.min_spacing().powi(2);
    let (_, rep) = picard_step(&cl, &st, dt, &FlowConfig::default()).unwrap();
    assert!(rep.iterations <= 5, "{rep:?}");
    for w in rep.increments.windows(2) {
        assert!(w[1] < 0.5 * w[0] || w[1] < 1e-15, "{rep:?}");
    }
}

#[test]
fn single_iteration_budget_reports_divergence() {
    let cl = bubble(64);
    let st = HeightState::zeros(&cl);
    let cfg = FlowConfig {
        picard_max: 1,
        ..Default::default()
    };
    let err = picard_step(&cl, &st, 1e-4, &cfg).unwrap_err();
    assert!(matches!(err, FlowError::PicardDiverged(_)));
    let mut flow = Flow::new(cl, st, cfg).unwrap();
    assert!(flow.advance().is_err());
    assert_eq!(flow.status, ContinuationStatus::PicardDiverged);
}

#[test]
fn shrinking_circle_follows_the_radius_law() {
    let cl = circle(128);
    let h0 = cl.min_spacing();
    let mut flow = Flow::new(cl, HeightState::zeros(&circle(128)), FlowConfig { t_end: 0.5, ..Default::default() }).unwrap();
    let mut checked = 0;
    while flow.status == ContinuationStatus::Running && flow.time() < 0.5 {
        let rec = flow.advance().unwrap();
        let r = rec.lengths[0] / (2.0 * PI);
        if r < 10.0 * h0 {
            break;
        }
        let exact = (1.0 - 2.0 * rec.t).sqrt();
        assert!((r - exact).abs() <= 0.01 * exact, "t {} r {r} exact {exact}", rec.t);
        checked += 1;
    }
    assert!(checked > 100 && !flow.reref_events.is_empty());
}

#[test]
fn double_bubble_areas_decay_at_the_gauss_bonnet_rate() {
    let cl = bubble(128);
    let st = HeightState::zeros(&cl);
    let mut flow = Flow::new(cl, st, FlowConfig { t_end: 0.02, ..Default::default() }).unwrap();
    let mut recs = Vec::new();
    flow.run(|_, r| recs.push(r.clone())).unwrap();
    let (a, b) = (&recs[recs.len() / 4], recs.last().unwrap());
    for i in 0..2 {
        let rate = (b.areas[i] - a.areas[i]) / (b.t - a.t);
        assert!((rate + 4.0 * PI / 3.0).abs() < 0.02 * 4.0 * PI / 3.0, "{rate}");
    }
    assert!(recs.windows(2).all(|w| w[1].energy <= w[0].energy && w[1].t > w[0].t));
    assert!(recs.iter().all(|r| !r.energy_increase));
    let h0 = recs[0].lengths[1] / 128.0;
    for r in &recs {
        assert!(r.dissipation_defect <= 10.0 * (h0 * h0 + r.dt) * r.dissipation);
        assert!(r.g2 < 1e-9 && r.g3 < 1e-9 && r.sum_gbh < 1e-6);
    }
}

#[test]
fn re_referencing_keeps_the_point_set() {
    let cl = bubble(96);
    let mut flow = Flow::new(cl, HeightState::zeros(&bubble(96)), FlowConfig { t_end: 0.005, ..Default::default() }).unwrap();
    flow.run(|_, _| {}).unwrap();
    let (cl, st) = (&flow.cluster, &flow.state);
    assert!(st.max_abs() > 0.0);
    let before = cluster_energy(cl, st).unwrap();
    let (next, zero, resampled) = re_reference(cl, st, cl.r0, f64::INFINITY).unwrap();
    assert!(!resampled);
    let after = cluster_energy(&next, &zero).unwrap();
    assert!((after - before).abs() <= 1e-10 * before, "{before} {after}");
    for jid in 0..2 {
        let (c, n) = cl.junction_node(jid, 0, 0);
        let old = junctionflow::shape::evaluate_phi(cl, st)[c][n];
        assert!((next.charts[c].positions[n] - old).norm() < 1e-12);
    }
    let co = coefficients(&next, &shape_quantities(&next, &zero).unwrap()).unwrap();
    for (c, ch) in next.charts.iter().enumerate() {
        let beta = next.weights.beta[ch.sheet];
        assert!(co.a[c].iter().all(|a| (a - beta).abs() < 1e-12));
        assert!(co.a_dagger[c].iter().all(|a| a.abs() < 1e-12));
    }
    for p in co.p.iter().flatten() {
        assert!((p - next.coupling.m).amax() < 1e-12);
    }
    // Redistribution moves the nodes along the same curve.
    let (res, zero, resampled) = re_reference(cl, st, cl.r0, 1.0 + 1e-12).unwrap();
    assert!(resampled);
    let moved = cluster_energy(&res, &zero).unwrap();
    assert!((moved - before).abs() <= 1e-7 * before, "{before} {moved}");
    evaluate(&res, &zero).unwrap();
}

#[test]
fn runs_are_deterministic() {
    let go = || {
        let cl = bubble(64);
        let st = HeightState::zeros(&cl);
        let mut flow = Flow::new(cl, st, FlowConfig { t_end: 0.01, ..Default::default() }).unwrap();
        let mut out = Vec::new();
        flow.run(|_, r| out.push((r.t.to_bits(), r.energy.to_bits(), r.areas[0].to_bits()))).unwrap();
        out
    };
    assert_eq!(go(), go());
}

#[test]
fn unequal_bubble_loses_the_smaller_region_first() {
    let cl = build_reference(
        &GeometrySpec::DoubleBubble {
            areas: [1.0, 0.5],
            intervals: 200,
        },
        &AngleWeights::symmetric(),
    )
    .unwrap();
    let st = HeightState::zeros(&cl);
    let mut flow = Flow::new(cl, st, FlowConfig { t_end: 1.0, dt_factor: 1.0, ..Default::default() }).unwrap();
    let mut last = None;
    let status = flow.run(|_, r| last = Some(r.clone())).unwrap();
    let r = last.unwrap();
    assert!(matches!(status, ContinuationStatus::AreaVanishing { .. } | ContinuationStatus::SelfContact { .. }), "{status:?}");
    assert!(r.areas[1] < 0.05 * r.areas[0], "{:?}", r.areas);
    let t_small = 3.0 * 0.5 / (4.0 * PI);
    assert!((r.t - t_small).abs() < 0.05 * t_small, "{} vs {t_small}", r.t);
}

#[test]
fn config_validation() {
    assert!(FlowConfig::default().validate().is_ok());
    for bad in [
        FlowConfig { t_end: 0.0, ..Default::default() },
        FlowConfig { picard_tol: -1.0, ..Default::default() },
        FlowConfig { dt: Some(f64::NAN), ..Default::default() },
        FlowConfig { output_every: 0, ..Default::default() },
    ] {
        assert!(bad.validate().is_err());
    }
}
