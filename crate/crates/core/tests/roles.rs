use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rolecluster::roles::{
    classify_event, community_composition, composition_delta, compositions, dominant_role,
    init_prototypes, prototype_loss, role_affinity, role_affinity_values, role_priors,
    track_events, CommunityComposition, EventLabel, EventThresholds, EvolutionDelta, PartitionView,
    Role, RoleError,
};
use rolecluster::tensor::{check_gradients, Matrix, Tape};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    )
    .unwrap()
}

fn delta(
    g: [f64; 5],
    size_t: usize,
    size_t1: usize,
    components: usize,
    counts: (usize, usize),
) -> EvolutionDelta {
    EvolutionDelta {
        delta_gamma: g,
        size_t,
        size_t1,
        component_count_t1: components,
        communities_t: counts.0,
        communities_t1: counts.1,
    }
}

#[test]
fn priors_follow_the_table() {
    let p = role_priors();
    assert_eq!(p[0].role, Role::Leader);
    assert_eq!(p[0].vector[..7], [1., 0., 1., 1., 1., 0., 1.]);
    assert_eq!(p[1].vector[..7], [1., 0., 0., 1., 1., 0., 1.]);
    assert_eq!(p[3].vector[..7], [1., 1., 0., 0., 0., 0., 1.]);
    let differing: Vec<usize> = (0..8)
        .filter(|&i| p[2].vector[i] != p[4].vector[i])
        .collect();
    assert_eq!(differing, vec![7]);
}

#[test]
fn prototypes_are_deterministic() {
    let a = init_prototypes(&role_priors(), 6, 0.0, 3).unwrap();
    let b = init_prototypes(&role_priors(), 6, 0.0, 3).unwrap();
    assert_eq!(a.prototypes(), b.prototypes());
    let noisy = init_prototypes(&role_priors(), 6, 0.01, 3).unwrap();
    let drift = noisy.prototypes().sub(&a.prototypes()).frobenius_norm();
    assert!(drift > 0.0 && drift < 0.1);
    assert!(matches!(
        init_prototypes(&role_priors(), 6, -1.0, 3),
        Err(RoleError::Sigma(_))
    ));
    // Wanderer and Newcomer start apart thanks to the recency bit
    let p = a.prototypes();
    assert!(
        Matrix::row_vector(p.row(2).to_vec())
            .sub(&Matrix::row_vector(p.row(4).to_vec()))
            .frobenius_norm()
            > 1e-3
    );
}

#[test]
fn affinity_examples() {
    let mut protos = Matrix::zeros(5, 6);
    for k in 0..5 {
        protos.set(k, k, 1.0);
    }
    let z = Matrix::from_rows(&[vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
    assert!(role_affinity_values(&z, &protos, 0.05).unwrap().get(0, 0) > 0.99);

    let orth = Matrix::from_rows(&[vec![0.0, 0.0, 0.0, 0.0, 0.0, 3.0], vec![0.0; 6]]).unwrap();
    let pi = role_affinity_values(&orth, &protos, 0.5).unwrap();
    assert!(pi.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = gaussian(4, 6, &mut rng);
    let p = gaussian(5, 6, &mut rng);
    let a = role_affinity_values(&z, &p, 0.5).unwrap();
    let b = role_affinity_values(&z.scale(10.0), &p, 0.5).unwrap();
    assert!(a.sub(&b).frobenius_norm() < 1e-12);
    assert!(matches!(
        role_affinity_values(&z, &p, 0.0),
        Err(RoleError::Temperature(_))
    ));
}

fn loss_parts(pi: &Matrix, lambda2: f64) -> (f64, f64) {
    let mut tape = Tape::new();
    let v = tape.constant(pi.clone());
    let l = prototype_loss(&mut tape, v, lambda2, 1.0).unwrap();
    (
        tape.value(l.attraction).item(),
        tape.value(l.diversity).item(),
    )
}

#[test]
fn prototype_loss_examples() {
    let pi = Matrix::identity(5);
    let (first, second) = loss_parts(&pi, 0.2);
    assert!(first.abs() < 1e-15);
    assert!((second + 0.2 * 5f64.ln()).abs() < 1e-12);

    let (first, _) = loss_parts(&Matrix::filled(7, 5, 0.2), 0.2);
    assert!((first - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn diversity_term_rewards_spread() {
    // all mass on one column versus spread columns: the spread case is lower
    let collapsed = Matrix::from_rows(&vec![vec![0.96, 0.01, 0.01, 0.01, 0.01]; 5]).unwrap();
    let spread = {
        let mut m = Matrix::filled(5, 5, 0.01);
        for i in 0..5 {
            m.set(i, i, 0.96);
        }
        m
    };
    assert!(loss_parts(&spread, 0.2).1 < loss_parts(&collapsed, 0.2).1);
}

#[test]
fn prototype_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let z = gaussian(10, 4, &mut rng);
    let set = init_prototypes(&role_priors(), 4, 0.01, 2).unwrap();
    let mut params = vec![z];
    params.extend(set.parameters().into_iter().cloned());
    let report = check_gradients(
        |tape, p| {
            let vars = rolecluster::roles::PrototypeVars::from_slice(&p[1..]);
            let protos = set.forward(tape, &vars).map_err(|e| match e {
                RoleError::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            let pi = role_affinity(tape, p[0], protos, 0.5).map_err(|_| unreachable!())?;
            Ok(prototype_loss(tape, pi, 0.2, 1.0)
                .map_err(|_| unreachable!())?
                .total)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn composition_examples() {
    let pi = Matrix::from_rows(&[
        vec![0.5, 0.5, 0.0, 0.0, 0.0],
        vec![0.5, 0.5, 0.0, 0.0, 0.0],
        vec![0.1, 0.2, 0.3, 0.2, 0.2],
    ])
    .unwrap();
    let single = community_composition(&pi, &[0, 0, 1], 1).unwrap();
    assert_eq!(single.size, 1);
    assert_eq!(single.gamma.unwrap().to_vec(), pi.row(2).to_vec());
    let pair = community_composition(&pi, &[0, 0, 1], 0).unwrap();
    assert_eq!(pair.gamma.unwrap(), [0.5, 0.5, 0.0, 0.0, 0.0]);
    let empty = community_composition(&pi, &[0, 0, 1], 4).unwrap();
    assert_eq!(empty, CommunityComposition::empty());
    assert!(community_composition(&pi, &[0, 1], 0).is_err());
}

#[test]
fn delta_examples() {
    let a = CommunityComposition {
        gamma: Some([0.2, 0.5, 0.2, 0.05, 0.05]),
        size: 20,
    };
    assert_eq!(composition_delta(&a, &a).delta_gamma, [0.0; 5]);
    let b = CommunityComposition {
        gamma: Some([0.2, 0.3, 0.1, 0.05, 0.35]),
        size: 28,
    };
    let d = composition_delta(&a, &b);
    assert!((d.delta_gamma[4] - 0.30).abs() < 1e-12);
    assert!(d.delta_gamma.iter().sum::<f64>().abs() < 1e-12);
    assert_eq!((d.size_t, d.size_t1), (20, 28));
}

#[test]
fn classifier_worked_patterns() {
    let thr = EventThresholds::default();
    assert_eq!(
        classify_event(&delta([0.0; 5], 0, 8, 1, (3, 4)), &thr),
        EventLabel::Birth
    );
    assert_eq!(
        classify_event(
            &delta([0.05, 0.0, -0.05, 0.0, 0.35], 20, 28, 1, (3, 3)),
            &thr
        ),
        EventLabel::Growth
    );
    assert_eq!(
        classify_event(&delta([0.1, 0.3, 0.1, -0.6, 0.1], 30, 14, 2, (3, 4)), &thr),
        EventLabel::Split
    );
    // Birth needs strictly more than tau_min members
    assert_eq!(
        classify_event(&delta([0.0; 5], 0, 5, 1, (3, 4)), &thr),
        EventLabel::Stable
    );
}

fn view<'a>(ids: &'a [String], labels: &'a [usize], pi: &'a Matrix) -> PartitionView<'a> {
    PartitionView { ids, labels, pi }
}

#[test]
fn tracking_finds_death_and_birth() {
    let ids_t: Vec<String> = (0..12).map(|i| format!("v{i}")).collect();
    let labels_t: Vec<usize> = (0..12).map(|i| i / 6).collect();
    let pi_t = Matrix::filled(12, 5, 0.2);
    // community 1's nodes all leave; six fresh nodes form community 7
    let ids_t1: Vec<String> = (0..6).chain(20..26).map(|i| format!("v{i}")).collect();
    let labels_t1: Vec<usize> = (0..12).map(|i| if i < 6 { 0 } else { 7 }).collect();
    let pi_t1 = Matrix::filled(12, 5, 0.2);
    let events = track_events(
        &view(&ids_t, &labels_t, &pi_t),
        &view(&ids_t1, &labels_t1, &pi_t1),
        &EventThresholds::default(),
    );
    let labels: Vec<(Option<usize>, Option<usize>, EventLabel)> = events
        .iter()
        .map(|e| (e.community_t, e.community_t1, e.label))
        .collect();
    assert_eq!(
        labels,
        vec![
            (Some(0), Some(0), EventLabel::Stable),
            (Some(1), None, EventLabel::Death),
            (None, Some(7), EventLabel::Birth),
        ]
    );
}

#[test]
fn tracking_counts_split_components() {
    let ids: Vec<String> = (0..12).map(|i| format!("v{i}")).collect();
    let before = vec![0usize; 12];
    let after: Vec<usize> = (0..12).map(|i| i / 6).collect();
    let mut pi_t = Matrix::zeros(12, 5);
    let mut pi_t1 = Matrix::zeros(12, 5);
    for i in 0..12 {
        pi_t.set(i, 3, 1.0);
        pi_t1.set(i, 1, 1.0);
    }
    let events = track_events(
        &view(&ids, &before, &pi_t),
        &view(&ids, &after, &pi_t1),
        &EventThresholds::default(),
    );
    assert_eq!(events[0].delta.component_count_t1, 2);
    assert_eq!(events[0].label, EventLabel::Split);
}

#[test]
fn dominant_role_tie_order() {
    assert_eq!(dominant_role(&[0.2; 5]), Role::Leader);
    assert_eq!(dominant_role(&[0.1, 0.3, 0.3, 0.2, 0.1]), Role::Contributor);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn streaming_matches_scan(seed in 0u64..10_000, k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = gaussian(15, 4, &mut rng);
        let p = gaussian(5, 4, &mut rng);
        let pi = role_affinity_values(&z, &p, 0.5).unwrap();
        let labels: Vec<usize> = (0..15).map(|_| rng.random_range(0..k)).collect();
        let all = compositions(&pi, &labels, k).unwrap();
        for (c, comp) in all.iter().enumerate() {
            let scan = community_composition(&pi, &labels, c).unwrap();
            prop_assert_eq!(comp.size, scan.size);
            if let (Some(a), Some(b)) = (comp.gamma, scan.gamma) {
                for r in 0..5 {
                    prop_assert!((a[r] - b[r]).abs() < 1e-12);
                }
                prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        for i in 0..15 {
            prop_assert!((pi.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn classifier_is_total(g in prop::array::uniform5(-1.0f64..1.0), s0 in 0usize..20, s1 in 0usize..20,
                           comp in 0usize..4, c0 in 0usize..6, c1 in 0usize..6) {
        // exactly one label, and it satisfies its own rule
        let d = delta(g, s0, s1, comp, (c0, c1));
        let label = classify_event(&d, &EventThresholds::default());
        let ok = match label {
            EventLabel::Birth => s0 == 0 && s1 > 5,
            EventLabel::Death => s0 > 0 && s1 == 0,
            EventLabel::Split => g[3] < -0.5 && comp > 1,
            EventLabel::Merge => g[3] > 0.3 && c1 < c0,
            EventLabel::Growth => g[4] > 0.3 && g[0].abs() < 0.1,
            EventLabel::Contraction => g[2] < -0.3 && g[0] > 0.1,
            EventLabel::Stable => true,
        };
        prop_assert!(ok);
    }
}
