use navinfer::agent::{Agent, AgentConfig};
use navinfer::categorical::{kl_divergence, Categorical};
use navinfer::counts::{DirichletCounts, TransitionCounts, COUNT_FLOOR};
use navinfer::eval::{area_under_curve, astar_shortest, dijkstra_shortest, naauc, Graph, RunTrace, StepRecord};
use navinfer::inference::{
    posterior_update, resolve_localisation, zscore_confidence, LocalisationOutcome, ObservationMatch, Priors,
};
use navinfer::learning::{update_transition, TransitionOutcome};
use navinfer::map::{delta_f_gate, GateDecision};
use navinfer::model::{ActionSet, GenerativeModel, HyperParams, Preferences};
use navinfer::perception::{best_match, render_panorama, ssim, RenderConfig};
use navinfer::planning::{efe_step, policy_posterior};
use navinfer::sim::{self, lidar_scan, Drift, DriftModel, Pose, World};
use proptest::prelude::*;

fn weights(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len).prop_filter("some mass", |w| w.iter().sum::<f64>() > 1e-6)
}

fn cat(w: Vec<f64>) -> Categorical {
    Categorical::from_weights(w.iter().map(|x| x + 1e-9).collect()).unwrap()
}

/// A model over `n` states in a row 1 m apart, with random transition
/// counts and one observation per even state.
fn random_model(n: usize, counts: &[f64]) -> GenerativeModel {
    let actions = ActionSet::new(5).unwrap();
    let mut m = GenerativeModel::new(actions, 0.5);
    for i in 0..n {
        m.expand_state_dim(i as f64, 0.0);
    }
    for s in (0..n).step_by(2) {
        m.expand_observation_dim(s).unwrap();
    }
    let mut k = 0;
    for a in 0..actions.len() {
        for from in 0..n {
            for to in 0..n {
                let c = counts[k % counts.len()];
                k += 1;
                m.b_s.slice_mut(a).set(to, from, c).unwrap();
            }
        }
    }
    m
}

fn model_strategy() -> impl Strategy<Value = GenerativeModel> {
    (2usize..7, prop::collection::vec(0.0f64..3.0, 1..64)).prop_map(|(n, c)| random_model(n, &c))
}

fn check_counts(d: &DirichletCounts) {
    for c in 0..d.cols() {
        for r in 0..d.rows() {
            assert!(d.get(r, c) >= COUNT_FLOOR);
        }
        let q = d.normalize(c).unwrap();
        assert!((q.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn kl_is_non_negative(pair in (2usize..8).prop_flat_map(|n| (weights(n..n + 1), weights(n..n + 1)))) {
        let (q, p) = (cat(pair.0), cat(pair.1));
        prop_assert!(kl_divergence(&q, &p).unwrap() >= -1e-12);
    }
}

proptest! {
    #[test]
    fn normalised_weights_are_distributions(w in weights(1..30)) {
        let q = cat(w);
        prop_assert!((q.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(q.probs().iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn normalising_ignores_positive_scale(w in weights(1..30), c in 1e-3f64..1e3) {
        let a = Categorical::from_weights(w.clone()).unwrap();
        let b = Categorical::from_weights(w.iter().map(|x| x * c).collect()).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_is_scale_invariant(w in weights(2..30), c in 1e-3f64..1e3) {
        let a = zscore_confidence(&Categorical::from_weights(w.clone()).unwrap());
        let b = zscore_confidence(&Categorical::from_weights(w.iter().map(|x| x * c).collect()).unwrap());
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn counts_stay_above_floor(ops in prop::collection::vec((0usize..4, 0usize..3, -5.0f64..5.0, any::<bool>()), 0..60)) {
        let mut d = DirichletCounts::new(4, 3);
        for (r, c, v, add) in ops {
            if add { d.add(r, c, v).unwrap(); } else { d.set(r, c, v).unwrap(); }
        }
        check_counts(&d);
    }

    #[test]
    fn transition_learning_keeps_counts_valid(
        ops in prop::collection::vec((weights(4..5), weights(4..5), 0usize..5, 0usize..4), 1..40),
    ) {
        let actions = ActionSet::new(5).unwrap();
        let mut b = TransitionCounts::new(4, actions.len());
        let outcomes = [
            TransitionOutcome::Possible,
            TransitionOutcome::Impossible,
            TransitionOutcome::PredictedPossible,
            TransitionOutcome::PredictedImpossible,
        ];
        for (prev, next, a, o) in ops {
            update_transition(&mut b, &actions, &cat(prev), &cat(next), a, outcomes[o]).unwrap();
        }
        for slice in b.slices() {
            check_counts(slice);
        }
    }

    #[test]
    fn possible_raises_and_impossible_lowers(
        counts in prop::collection::vec(0.0f64..3.0, 16),
        s in 0usize..4, t in 0usize..4, a in 1usize..5,
    ) {
        let actions = ActionSet::new(5).unwrap();
        let mut b = TransitionCounts::new(4, actions.len());
        for (k, c) in counts.iter().enumerate() {
            b.slice_mut(a).set(k / 4, k % 4, *c).unwrap();
        }
        let (qs, qt) = (Categorical::delta(4, s), Categorical::delta(4, t));
        let before = b.prob(t, s, a);
        let mut up = b.clone();
        update_transition(&mut up, &actions, &qs, &qt, a, TransitionOutcome::Possible).unwrap();
        if before < 1.0 - 1e-12 {
            prop_assert!(up.prob(t, s, a) > before);
        }
        let mut down = b.clone();
        update_transition(&mut down, &actions, &qs, &qt, a, TransitionOutcome::Impossible).unwrap();
        let floor_min = COUNT_FLOOR / b.slice(a).column_sum(s);
        if before > floor_min + 1e-12 {
            prop_assert!(down.prob(t, s, a) < before);
        }
    }

    #[test]
    fn expansion_is_append_only(ops in prop::collection::vec((any::<bool>(), 0.0f64..5.0, 0.0f64..5.0), 1..30)) {
        let mut m = GenerativeModel::new(ActionSet::new(5).unwrap(), 0.5);
        m.expand_state_dim(0.0, 0.0);
        let mut seen: Vec<(usize, usize, f64)> = Vec::new();
        let mut bins: Vec<Option<usize>> = Vec::new();
        for (state, x, y) in ops {
            if state {
                let s = m.expand_state_dim(x, y);
                prop_assert_eq!(s, m.n_states() - 1);
            } else {
                let target = (x as usize) % m.n_states();
                let o = m.expand_observation_dim(target).unwrap();
                prop_assert_eq!(o, m.n_observations() - 1);
                seen.push((o, target, m.a_o.get(o, target)));
            }
            for &(o, s, c) in &seen {
                prop_assert_eq!(m.a_o.get(o, s), c);
            }
            for (s, b) in bins.iter().enumerate() {
                prop_assert_eq!(m.state_bin(s), *b);
            }
            bins = (0..m.n_states()).map(|s| m.state_bin(s)).collect();
            m.validate().unwrap();
        }
    }

    #[test]
    fn accepted_candidates_grow_the_model_by_one(pts in prop::collection::vec((0.0f64..6.0, 0.0f64..6.0), 1..40)) {
        let mut m = GenerativeModel::new(ActionSet::new(5).unwrap(), 0.5);
        for (x, y) in pts {
            let n = m.n_states();
            match delta_f_gate(&mut m, x, y) {
                GateDecision::Accept(s) => {
                    prop_assert_eq!(m.n_states(), n + 1);
                    prop_assert_eq!(s, n);
                    prop_assert_eq!(m.state_bin(s), m.bins.lookup(x, y));
                }
                GateDecision::Reject => prop_assert_eq!(m.n_states(), n),
            }
        }
    }

    #[test]
    fn uniform_evidence_is_the_identity(m in model_strategy(), w in weights(6..7), c in 0.01f64..10.0) {
        let n = m.n_states();
        let q_s = cat(w[..n].to_vec());
        let q_p = Categorical::uniform(m.n_bins());
        let priors = Priors { q_s: q_s.clone(), q_p };
        let b = posterior_update(&m, &priors, &vec![c; n], &vec![c; m.n_bins()], 4.0).unwrap();
        for (x, y) in b.q_s.probs().iter().zip(q_s.probs()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn info_gains_are_non_negative(m in model_strategy(), w in weights(6..7), a in 0usize..5, p in 0.0f64..1.0) {
        let q = cat(w[..m.n_states()].to_vec());
        let e = efe_step(&m, &q, a, &Preferences::default(), p).unwrap();
        prop_assert!(e.state_info_gain >= -1e-9);
        prop_assert!(e.param_info_gain >= -1e-9);
    }

    #[test]
    fn without_pragmatic_weight_preferences_do_not_matter(
        m in model_strategy(), w in weights(6..7), c_o in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let q = cat(w[..m.n_states()].to_vec());
        let flat = Preferences { pragmatic_weight: 0.0, ..Preferences::default() };
        let biased = Preferences { c_o: c_o.clone(), ..flat.clone() };
        let g = |prefs: &Preferences| -> Vec<f64> {
            (0..5).map(|a| efe_step(&m, &q, a, prefs, 0.1 * a as f64).unwrap().total).collect()
        };
        prop_assert_eq!(g(&flat), g(&biased));
    }

    #[test]
    fn policy_posterior_normalises_and_ignores_offsets(
        g in prop::collection::vec(-20.0f64..20.0, 1..12), k in -50.0f64..50.0, gamma in 0.1f64..8.0,
    ) {
        let h = vec![0.0; g.len()];
        let q = policy_posterior(&g, gamma, &h).unwrap();
        prop_assert!((q.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let shifted: Vec<f64> = g.iter().map(|x| x + k).collect();
        prop_assert_eq!(policy_posterior(&shifted, gamma, &h).unwrap().argmax(), q.argmax());
    }

    #[test]
    fn naauc_is_a_fraction_and_survives_resampling(
        steps in prop::collection::vec((0.0f64..2.0, 0.0f64..3.0), 1..40),
    ) {
        let mut trace = RunTrace::default();
        let (mut d, mut a) = (0.0, 0.0);
        for (t, (dd, da)) in steps.iter().enumerate() {
            d += dd;
            a += da;
            trace.push(StepRecord {
                t,
                true_pose: Pose::new(0.0, 0.0, 0.0),
                reported_pose: Pose::new(0.0, 0.0, 0.0),
                believed_pose: Pose::new(0.0, 0.0, 0.0),
                action: None,
                covered_area: a,
                traveled: d,
            });
        }
        let total = a.max(1.0) * 1.5;
        let v = naauc(&trace, total).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        // Inserting the linear midpoint of every segment leaves the area alone.
        let mut fine = RunTrace::default();
        for w in trace.records.windows(2) {
            let mut mid = w[0].clone();
            mid.traveled = 0.5 * (w[0].traveled + w[1].traveled);
            mid.covered_area = 0.5 * (w[0].covered_area + w[1].covered_area);
            fine.push(w[0].clone());
            fine.push(mid);
        }
        fine.push(trace.records.last().unwrap().clone());
        prop_assert!((naauc(&fine, total).unwrap() - v).abs() < 1e-9);
    }

    #[test]
    fn auc_of_a_constant_is_the_constant(y in 0.0f64..1.0, n in 2usize..20) {
        let pts: Vec<(f64, f64)> = (0..n).map(|i| (i as f64 / (n - 1) as f64, y)).collect();
        prop_assert!((area_under_curve(&pts) - y).abs() < 1e-12);
    }

    #[test]
    fn best_match_is_permutation_stable(scores in prop::collection::vec(0.0f64..1.0, 1..10), rot in 0usize..10) {
        let m = best_match(&scores, 0.5);
        let mut perm: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        perm.rotate_left(rot % scores.len());
        let permuted: Vec<f64> = perm.iter().map(|p| p.1).collect();
        let again = best_match(&permuted, 0.5);
        let back = |r: navinfer::perception::MatchResult| match r {
            navinfer::perception::MatchResult::Match { id, score } => Some((perm[id].0, score)),
            navinfer::perception::MatchResult::Novel => None,
        };
        let first = match m {
            navinfer::perception::MatchResult::Match { id, score } => Some((id, score)),
            navinfer::perception::MatchResult::Novel => None,
        };
        // Ties go to the lowest id, so compare winning scores and, without ties, ids.
        let (a, b) = (first, back(again));
        prop_assert_eq!(a.map(|x| x.1), b.map(|x| x.1));
        let ties = scores.iter().filter(|s| Some(**s) == a.map(|x| x.1)).count();
        if ties == 1 {
            prop_assert_eq!(a, b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn astar_agrees_with_dijkstra(
        pts in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 2..25),
        links in prop::collection::vec((0usize..25, 0usize..25), 0..80),
        start in 0usize..25, goals in prop::collection::vec(0usize..25, 1..3),
    ) {
        let n = pts.len();
        let mut g = Graph::new(pts);
        for (a, b) in links {
            g.link(a % n, b % n);
        }
        let goals: Vec<usize> = goals.iter().map(|x| x % n).collect();
        let (a, d) = (astar_shortest(&g, start % n, &goals), dijkstra_shortest(&g, start % n, &goals));
        match (a, d) {
            (Ok(a), Ok(d)) => prop_assert!((a - d).abs() < 1e-9),
            (Err(_), Err(_)) => {}
            (a, d) => prop_assert!(false, "astar {:?} vs dijkstra {:?}", a, d),
        }
    }
}

fn free_pose(world: &World) -> impl Strategy<Value = Pose> + '_ {
    let (x0, y0, x1, y1) = world.bounds();
    (x0..x1, y0..y1, 0.0f64..std::f64::consts::TAU)
        .prop_map(|(x, y, t)| Pose::new(x, y, t))
        .prop_filter("free", move |p| world.clearance(p.x, p.y, 0.3) >= 0.3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn robot_never_ends_inside_an_obstacle(
        seed in any::<u64>(), actions in prop::collection::vec(0usize..13, 1..40),
    ) {
        let world = World::builtin("mini-warehouse").unwrap();
        let set = ActionSet::new(13).unwrap();
        // Heading noise only, so the commanded travel stays exactly 1 m.
        let model = DriftModel { rotation_noise_sigma: 0.1, odometry_noise_sigma: 0.05, seed, ..DriftModel::default() };
        let mut drift = Drift::new(model.clone()).unwrap();
        let mut again = Drift::new(model).unwrap();
        let mut pose = world.spawn("start").unwrap();
        let mut twin = pose;
        for a in actions {
            let action = set.action(a).unwrap();
            let r = sim::step(&world, &pose, &action, 1.0, 0.25, &mut drift).unwrap();
            let r2 = sim::step(&world, &twin, &action, 1.0, 0.25, &mut again).unwrap();
            prop_assert_eq!(r, r2);
            prop_assert!(!world.occupied_at(r.true_pose.x, r.true_pose.y));
            if r.collided {
                prop_assert!(r.traveled < 1.0);
            }
            pose = r.true_pose;
            twin = r2.true_pose;
        }
    }

    #[test]
    fn lidar_beams_only_cross_free_cells(pose in free_pose(&WAREHOUSE)) {
        let n = 90;
        let ranges = lidar_scan(&WAREHOUSE, &pose, 12.0, n);
        for (i, r) in ranges.iter().enumerate() {
            let a = i as f64 * std::f64::consts::TAU / n as f64;
            let mut d = 0.0;
            while d < r - 0.01 {
                prop_assert!(!WAREHOUSE.occupied_at(pose.x + d * a.cos(), pose.y + d * a.sin()));
                d += 0.05;
            }
        }
    }

    #[test]
    fn renders_one_centimetre_apart_are_alike(pose in free_pose(&OPEN), dir in 0.0f64..std::f64::consts::TAU) {
        let cfg = RenderConfig::default();
        let a = render_panorama(&OPEN, &pose, &cfg).unwrap();
        let moved = Pose::new(pose.x + 0.01 * dir.cos(), pose.y + 0.01 * dir.sin(), pose.theta);
        let b = render_panorama(&OPEN, &moved, &cfg).unwrap();
        prop_assert!(ssim(&a, &b).unwrap() > 0.95);
    }
}

static WAREHOUSE: std::sync::LazyLock<World> = std::sync::LazyLock::new(|| World::builtin("mini-warehouse").unwrap());
static OPEN: std::sync::LazyLock<World> = std::sync::LazyLock::new(|| World::builtin("drift-room").unwrap());

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn map_invariants_hold_every_step(seed in any::<u64>()) {
        let world = World::builtin("mini-warehouse").unwrap();
        let start = world.spawn("start").unwrap();
        let hp = HyperParams::default();
        let mut agent = Agent::new(hp.clone(), AgentConfig::default(), (start.x, start.y), seed).unwrap();
        let mut drift = Drift::new(DriftModel::default()).unwrap();
        let mut pose = start;
        let mut nodes = agent.map.len();
        for _ in 0..25 {
            let r = agent.step(&world, &pose, &mut drift).unwrap();
            pose = r.true_pose;
            agent.map.check_spacing(hp.influence_radius).unwrap();
            prop_assert!(agent.map.len() >= nodes);
            prop_assert_eq!(agent.map.len(), agent.model.n_states());
            nodes = agent.map.len();
            for n in agent.map.nodes() {
                let bin = agent.model.bins.lookup(n.position.0, n.position.1);
                prop_assert_eq!(agent.model.state_bin(n.state_id), bin);
            }
            for e in agent.map.edges(&agent.model) {
                prop_assert!(agent.model.b_s.slice(e.action).get(e.to, e.from) > 2.0 * COUNT_FLOOR);
            }
            agent.model.validate().unwrap();
        }
    }
}

#[test]
fn localisation_table_is_total() {
    use LocalisationOutcome::*;
    for obs in [ObservationMatch::KnownAtExpected, ObservationMatch::KnownElsewhere, ObservationMatch::NoMatch] {
        for motion in [false, true] {
            for position in [false, true] {
                let want = match (obs, motion, position) {
                    (ObservationMatch::KnownAtExpected, _, _) => TrustPrediction,
                    (ObservationMatch::KnownElsewhere, true, _) => TrustPrediction,
                    (ObservationMatch::KnownElsewhere, false, _) => TrustPerception,
                    (ObservationMatch::NoMatch, _, true) => NovelObservationAtKnownState,
                    (ObservationMatch::NoMatch, _, false) => Lost,
                };
                assert_eq!(resolve_localisation(motion, obs, position), want);
            }
        }
    }
}
