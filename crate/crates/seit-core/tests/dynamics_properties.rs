//! Property tests for the reputation dynamics: the closed form of the
//! update recurrence, monotone isolation, convexity, two-group separation,
//! and the contraction bound under clamping.

use std::collections::BTreeMap;

use proptest::prelude::*;
use seit_core::dynamics::{
    behavior_feedback, contraction_gap, run_to_equilibrium, run_with_feedback,
    spectral_radius_check, step, AggregateWeights, DynamicsConfig, Pair, ReputationGroup,
    TenantSign, TrajectoryState,
};
use seit_core::graph::TenantId;

fn t(id: &str) -> TenantId {
    TenantId::new(id)
}

fn single_pair() -> Pair {
    (t("A"), t("B"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// With constant feedback and no clamping,
    /// R[t] = q + (1 - alpha)^t (R[0] - q), matched to 1e-12.
    #[test]
    fn constant_feedback_closed_form(
        r0 in 0.0f64..=1.0,
        q in 0.0f64..=1.0,
        alpha in 0.01f64..=0.99,
    ) {
        let p = single_pair();
        let weights = AggregateWeights::identity([p.clone()]);
        let mut state = TrajectoryState::new(0, BTreeMap::from([(p.clone(), r0)])).unwrap();
        let feedback = BTreeMap::from([(p.clone(), q)]);
        for step_idx in 1..=50u32 {
            state = step(&state, &weights, &feedback, alpha).unwrap();
            let closed = q + (1.0 - alpha).powi(step_idx as i32) * (r0 - q);
            prop_assert!(
                (state.scores[&p] - closed).abs() <= 1e-12,
                "t={step_idx}: {} vs {closed}",
                state.scores[&p]
            );
        }
    }

    /// A pair fed q_ibr = -1 decreases strictly until it hits zero and
    /// stays there.
    #[test]
    fn hostile_feedback_is_monotone_isolation(
        r0 in 0.0f64..=1.0,
        alpha in 0.01f64..=0.99,
    ) {
        let p = single_pair();
        let weights = AggregateWeights::identity([p.clone()]);
        let mut state = TrajectoryState::new(0, BTreeMap::from([(p.clone(), r0)])).unwrap();
        let feedback = BTreeMap::from([(p.clone(), -1.0)]);
        let mut prev = r0;
        for _ in 0..200 {
            state = step(&state, &weights, &feedback, alpha).unwrap();
            let cur = state.scores[&p];
            if prev == 0.0 {
                prop_assert_eq!(cur, 0.0);
            } else {
                prop_assert!(cur < prev);
            }
            prev = cur;
        }
        prop_assert_eq!(prev, 0.0);
    }

    /// Absent the lower clamp, the step output is a convex combination of
    /// the current score and the (nonnegative-clamped) aggregate feedback.
    #[test]
    fn step_output_is_convex(
        r0 in 0.0f64..=1.0,
        q in -1.0f64..=1.0,
        alpha in 0.01f64..=0.99,
    ) {
        let p = single_pair();
        let weights = AggregateWeights::identity([p.clone()]);
        let state = TrajectoryState::new(0, BTreeMap::from([(p.clone(), r0)])).unwrap();
        let feedback = BTreeMap::from([(p.clone(), q)]);
        let next = step(&state, &weights, &feedback, alpha).unwrap().scores[&p];
        let qc = q.max(0.0);
        let lo = r0.min(qc) - 1e-12;
        let hi = r0.max(qc) + 1e-12;
        prop_assert!(next >= lo && next <= hi, "{next} outside [{lo}, {hi}]");
    }

    /// Paired trajectories that share feedback after tick 0 contract at
    /// least geometrically, clamping included.
    #[test]
    fn contraction_bound_holds_under_clamping(
        seedscores in proptest::collection::vec(0.0f64..=1.0, 4),
        qa in -1.0f64..=1.0,
        qb in -1.0f64..=1.0,
        shared in proptest::collection::vec(-1.0f64..=1.0, 30),
        alpha in 0.05f64..=0.95,
    ) {
        let pairs: Vec<Pair> = vec![
            (t("A"), t("B")), (t("B"), t("A")), (t("A"), t("C")), (t("C"), t("A")),
        ];
        let weights = AggregateWeights::identity(pairs.clone());
        let scores: BTreeMap<Pair, f64> = pairs.iter().cloned().zip(seedscores).collect();
        let initial = TrajectoryState::new(0, scores).unwrap();

        let snapshot = |q: f64| -> BTreeMap<Pair, f64> {
            pairs.iter().cloned().map(|p| (p, q)).collect()
        };
        let mut feeds_a = vec![snapshot(qa)];
        let mut feeds_b = vec![snapshot(qb)];
        for q in &shared {
            feeds_a.push(snapshot(*q));
            feeds_b.push(snapshot(*q));
        }
        let traj_a = run_with_feedback(&initial, &weights, &feeds_a, alpha).unwrap();
        let traj_b = run_with_feedback(&initial, &weights, &feeds_b, alpha).unwrap();
        let gaps = contraction_gap(&traj_a, &traj_b).unwrap();
        for (k, gap) in gaps.iter().enumerate() {
            let bound = (1.0 - alpha).powi(k as i32) * gaps[0] + 1e-12;
            prop_assert!(*gap <= bound, "gap[{k}] = {gap} exceeds {bound}");
        }
    }

    /// Random row-stochastic weight systems never push the update matrix's
    /// dominant eigenvalue above 1.
    #[test]
    fn spectral_radius_never_exceeds_one(
        n in 2usize..12,
        raw in proptest::collection::vec(0.01f64..=1.0, 12 * 12),
        alpha in 0.05f64..=0.95,
    ) {
        let pairs: Vec<Pair> = (0..n)
            .map(|i| (t(&format!("o{i}")), t(&format!("s{i}"))))
            .collect();
        let mut rows = BTreeMap::new();
        for (i, pair) in pairs.iter().enumerate() {
            let slice = &raw[i * n..(i + 1) * n];
            let sum: f64 = slice.iter().sum();
            let mut entries: Vec<(Pair, f64)> = pairs
                .iter()
                .cloned()
                .zip(slice.iter().map(|w| w / sum))
                .collect();
            // Force the row to sum to exactly 1 despite rounding.
            let correction: f64 = 1.0 - entries.iter().map(|(_, w)| w).sum::<f64>();
            entries[0].1 += correction;
            rows.insert(pair.clone(), entries);
        }
        let weights = AggregateWeights::from_rows(rows).unwrap();
        let estimate = spectral_radius_check(&weights, alpha).unwrap();
        prop_assert!(estimate <= 1.0 + 1e-9, "estimate {estimate}");
    }
}

/// In the signed behaviour model every bad tenant's reputation at every
/// good tenant converges to exactly zero while good-good scores stay
/// positive, splitting the population into the two groups.
#[test]
fn two_group_separation() {
    let n = 6usize;
    let bad = [4usize, 5];
    let ids: Vec<TenantId> = (0..n).map(|i| t(&format!("t{i}"))).collect();
    let mut scores = BTreeMap::new();
    let mut behavior = BTreeMap::new();
    for (i, a) in ids.iter().enumerate() {
        behavior.insert(
            a.clone(),
            if bad.contains(&i) { TenantSign::Bad } else { TenantSign::Good },
        );
        for (j, b) in ids.iter().enumerate() {
            if i != j {
                // Deterministic spread of initial scores in (0.1, 0.9).
                let v = 0.1 + 0.8 * ((i * 7 + j * 3) % 11) as f64 / 11.0;
                scores.insert((a.clone(), b.clone()), v);
            }
        }
    }
    let initial = TrajectoryState::new(0, scores).unwrap();
    let weights = AggregateWeights::identity(initial.scores.keys().cloned());
    let config = DynamicsConfig::new(0.1).unwrap();
    let (traj, report) = run_to_equilibrium(&initial, &weights, &behavior, &config).unwrap();
    assert!(report.converged);
    assert!(report.violations.is_empty());

    let final_state = traj.final_state();
    for ((owner, subject), score) in &final_state.scores {
        let owner_bad = bad.contains(&ids.iter().position(|x| x == owner).unwrap());
        let subject_bad = bad.contains(&ids.iter().position(|x| x == subject).unwrap());
        if subject_bad && !owner_bad {
            assert_eq!(*score, 0.0, "bad tenant {subject} must be zeroed at {owner}");
        }
        if !subject_bad && !owner_bad {
            assert!(*score > 0.0, "good-good pair ({owner}, {subject}) died");
        }
    }
    for (i, id) in ids.iter().enumerate() {
        let expected = if bad.contains(&i) {
            ReputationGroup::ZeroReputation
        } else {
            ReputationGroup::PositiveReputation
        };
        assert_eq!(report.classification[id], expected);
    }
}

/// The report's equilibrium check agrees with a direct evaluation of the
/// condition from the final state.
#[test]
fn equilibrium_condition_is_verified_at_convergence() {
    let ids: Vec<TenantId> = (0..4).map(|i| t(&format!("t{i}"))).collect();
    let mut scores = BTreeMap::new();
    let mut behavior = BTreeMap::new();
    for (i, a) in ids.iter().enumerate() {
        behavior.insert(a.clone(), if i == 3 { TenantSign::Bad } else { TenantSign::Good });
        for b in &ids {
            if a != b {
                scores.insert((a.clone(), b.clone()), 0.25 + 0.1 * i as f64);
            }
        }
    }
    let initial = TrajectoryState::new(0, scores).unwrap();
    let weights = AggregateWeights::identity(initial.scores.keys().cloned());
    let config = DynamicsConfig::new(0.2).unwrap();
    let (traj, report) = run_to_equilibrium(&initial, &weights, &behavior, &config).unwrap();
    assert!(report.converged);

    let final_state = traj.final_state();
    let feedback = behavior_feedback(&final_state, &behavior).unwrap();
    for (pair, score) in &final_state.scores {
        let q = weights.aggregate_q_ibr(&feedback, pair).unwrap();
        assert!(
            (q - score).abs() < 1e-6 || (*score < 1e-6 && q < 0.0),
            "pair ({}, {}) violates the equilibrium condition",
            pair.0,
            pair.1
        );
    }
}
