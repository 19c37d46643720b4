//! Statistical form of the two pillar theorems: randomly generated local
//! models never beat the deterministic bound, and the facet criterion agrees
//! with polytope membership on randomly generated no-signalling boxes.

use std::f64::consts::PI;

use seprb_core::bell::{
    chsh, model_correlation_table, polytope_membership, Box22, DeterministicStrategy,
    local_deterministic_bound, LOCAL_BOUND,
};
use seprb_core::model::Angle;
use seprb_core::ontology::{
    make_local_hv, LambdaField, LambdaValue, LocalHvEntry, LocalHvSpec, ResponseRule,
};
use seprb_core::stream::RandomStream;

fn random_angle(stream: &mut RandomStream) -> Angle {
    Angle::new(stream.uniform() * PI)
}

fn random_rule(stream: &mut RandomStream, has_polarization: bool) -> ResponseRule {
    let u = stream.uniform();
    if !has_polarization || u < 1.0 / 3.0 {
        ResponseRule::Constant { p1: stream.uniform() }
    } else if u < 2.0 / 3.0 {
        ResponseRule::Malus
    } else {
        ResponseRule::Threshold
    }
}

/// A random settings-independent local model: up to four hidden states with
/// random weights, each answering with a random rule.
fn random_local_spec(stream: &mut RandomStream, index: usize) -> LocalHvSpec {
    let k = 1 + (stream.uniform() * 4.0) as usize;
    let mut raw: Vec<f64> = (0..k).map(|_| stream.uniform() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    for w in raw.iter_mut() {
        *w /= total;
    }
    // Nudge the weights so they sum to one exactly.
    let correction: f64 = 1.0 - raw.iter().sum::<f64>();
    raw[0] += correction;
    let entries = raw
        .into_iter()
        .enumerate()
        .map(|(i, weight)| {
            let lambda = LambdaValue(vec![
                LambdaField::Bit(i & 1 != 0),
                LambdaField::Bit(i & 2 != 0),
                LambdaField::Polarization(random_angle(stream)),
            ]);
            LocalHvEntry {
                lambda,
                weight,
                response_a: random_rule(stream, true),
                response_b: random_rule(stream, true),
            }
        })
        .collect();
    LocalHvSpec {
        name: format!("random-local-{index}"),
        entries,
    }
}

#[test]
fn no_random_local_model_beats_the_deterministic_bound() {
    assert_eq!(local_deterministic_bound(), LOCAL_BOUND);
    let mut stream = RandomStream::new(2024);
    for index in 0..200 {
        let spec = random_local_spec(&mut stream, index);
        let model = make_local_hv(&spec).expect("generated specs are valid");
        for _ in 0..50 {
            let settings = [
                random_angle(&mut stream),
                random_angle(&mut stream),
                random_angle(&mut stream),
                random_angle(&mut stream),
            ];
            let table = model_correlation_table(&model, settings).expect("local model");
            let report = chsh(&table);
            assert!(
                report.max_abs <= LOCAL_BOUND + 1e-9,
                "model {index}: |S| = {} at {settings:?}",
                report.max_abs
            );
        }
    }
}

#[test]
fn random_local_models_are_polytope_members() {
    let mut stream = RandomStream::new(77);
    for index in 0..20 {
        let spec = random_local_spec(&mut stream, index);
        let model = make_local_hv(&spec).expect("generated specs are valid");
        let a = [random_angle(&mut stream), random_angle(&mut stream)];
        let b = [random_angle(&mut stream), random_angle(&mut stream)];
        // The behavior box assembled from the model's exact joints.
        let mut dists = [[seprb_core::model::eprb_joint(a[0], b[0]); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let s = seprb_core::ontology::Settings::eprb(a[i], b[j]);
                dists[i][j] = seprb_core::ontology::model_joint(&model, &s)
                    .expect("local model")
                    .joint()
                    .expect("two-photon prediction");
            }
        }
        let boxed = Box22::new(dists);
        assert!(boxed.is_no_signalling(), "model {index} signals");
        let cert = polytope_membership(&boxed).expect("no-signalling box");
        assert!(cert.member, "model {index} outside the polytope");
    }
}

/// Running convex mixture of the 16 deterministic boxes with the given
/// weights (assumed normalized).
fn hull_point(weights: &[f64], strategies: &[DeterministicStrategy]) -> Box22 {
    let mut mixture = Box22::from_strategy(&strategies[0]);
    let mut acc = weights[0];
    for (s, &w) in strategies.iter().zip(weights.iter()).skip(1) {
        let next = acc + w;
        if w > 0.0 {
            mixture = mixture
                .mix(&Box22::from_strategy(s), w / next)
                .expect("convex weight");
        }
        acc = next;
    }
    mixture
}

/// Random no-signalling boxes built as (local hull point) possibly mixed
/// with the PR box. Boxes too close to the |S| = 2 boundary are skipped so
/// both decision procedures see an unambiguous instance.
#[test]
fn facet_criterion_matches_polytope_membership() {
    let strategies = DeterministicStrategy::all();
    let mut stream = RandomStream::new(4096);
    let mut tested = 0usize;
    let mut nonlocal = 0usize;
    while tested < 1000 {
        let mut weights: Vec<f64> = (0..16).map(|_| stream.uniform().powi(2)).collect();
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        let local = hull_point(&weights, &strategies);
        let candidate = if stream.uniform() < 0.5 {
            local
        } else {
            local
                .mix(&Box22::pr_box(), stream.uniform())
                .expect("convex weight")
        };
        let report = candidate.chsh_report();
        if (report.max_abs - LOCAL_BOUND).abs() <= 1e-6 {
            continue;
        }
        tested += 1;
        let facet_local = report.max_abs <= LOCAL_BOUND;
        let cert = polytope_membership(&candidate).expect("no-signalling box");
        assert_eq!(
            cert.member, facet_local,
            "facet says local={facet_local} but LP says member={} (|S|={})",
            cert.member, report.max_abs
        );
        if !cert.member {
            nonlocal += 1;
            let facet = cert.violated_facet.expect("violation certificate");
            assert!(facet.value.abs() > LOCAL_BOUND);
        } else {
            let w = cert.weights.expect("membership certificate");
            assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
    // The generator must exercise both sides of the facet.
    assert!(nonlocal > 100, "only {nonlocal} nonlocal instances generated");
    assert!(tested - nonlocal > 100);
}
