use std::sync::Arc;

use eki_core::ensemble::Ensemble;
use eki_core::flow::{self, FlowConfig};
use eki_core::nalgebra::DMatrix;
use eki_core::problem::{InverseProblem, LinearModel, NoiseModel, PriorModel};
use eki_core::subsample::{
    advance_index, integrate_subsampled, next_index, partition, rhs_subsampled,
    sample_holding_time, transition_rate_matrix, DataPartition, IndexProcess, LearningRateSchedule,
    PartitionScheme,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn linear(entries: &[f64], y: Vec<f64>) -> InverseProblem {
    let a = DMatrix::from_row_slice(y.len(), 2, entries);
    InverseProblem::new(
        Arc::new(LinearModel::new(a)),
        y.clone(),
        NoiseModel::Identity(y.len()),
        PriorModel::isotropic(2, 0.5).unwrap(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn subset_drifts_average_to_the_full_drift(
        a in prop::collection::vec(-2.0f64..2.0, 16),
        y in prop::collection::vec(-2.0f64..2.0, 8),
        u in prop::collection::vec(-3.0f64..3.0, 6),
        n_sub in 2usize..=4,
    ) {
        let p = linear(&a, y);
        let part = partition(&p, n_sub, PartitionScheme::ContiguousBlocks).unwrap();
        let e = Ensemble::from_flat(&u, 3, 0.0).unwrap();
        let full = flow::rhs_regularised(&e, &p).unwrap();
        let mut avg = vec![vec![0.0; 2]; 3];
        for i in 0..n_sub {
            for (acc, v) in avg.iter_mut().zip(rhs_subsampled(&e, &p, &part, i, 0.0).unwrap()) {
                for (x, d) in acc.iter_mut().zip(v.iter()) {
                    *x += d / n_sub as f64;
                }
            }
        }
        for (f, g) in full.iter().zip(&avg) {
            for (x, y) in f.iter().zip(g) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn successor_differs_from_predecessor(n_sub in 2usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut i = 0;
        for _ in 0..50 {
            let j = next_index(n_sub, i, &mut rng);
            prop_assert!(j != i && j < n_sub);
            i = j;
        }
    }

    #[test]
    fn holding_times_invert_the_integrated_rate(a in 0.0f64..20.0, b in 0.1f64..20.0, t0 in 0.0f64..10.0, e in 0.0f64..10.0) {
        let s = LearningRateSchedule::new(a, b).unwrap();
        let dt = s.holding_time_for(t0, e);
        prop_assert!(dt >= 0.0);
        prop_assert!((s.integrated_rate(t0, dt) - e).abs() <= 1e-9 * e.max(1.0));
    }

    #[test]
    fn bands_cover_the_image(width in 1usize..20, height in 2usize..40, n_sub in 2usize..6) {
        prop_assume!(n_sub <= height);
        let n = width * height;
        let p = InverseProblem::new(
            Arc::new(LinearModel::new(DMatrix::from_element(n, 2, 1.0))),
            vec![0.0; n],
            NoiseModel::Identity(n),
            PriorModel::isotropic(2, 1.0).unwrap(),
        ).unwrap();
        let part = partition(&p, n_sub, PartitionScheme::HorizontalBands { width, height }).unwrap();
        prop_assert_eq!(part.len(), n_sub);
        let mut next = 0;
        for r in part.ranges() {
            prop_assert_eq!(r.start, next);
            prop_assert_eq!(r.len() % width, 0);
            prop_assert!(!r.is_empty());
            next = r.end;
        }
        prop_assert_eq!(next, n);
    }
}

#[test]
fn mean_holding_time_with_constant_rate() {
    let s = LearningRateSchedule::new(0.0, 4.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 20_000;
    let mean: f64 = (0..n)
        .map(|_| sample_holding_time(&s, 0.0, &mut rng))
        .sum::<f64>()
        / n as f64;
    assert!((mean - 0.25).abs() < 0.01, "{mean}");
}

#[test]
fn switch_count_on_the_unit_decade() {
    for seed in 0..5 {
        let mut process =
            IndexProcess::new(5, LearningRateSchedule::new(10.0, 10.0).unwrap(), seed, 0).unwrap();
        process.advance_to(10.0);
        let n = process.log().len();
        assert!((400..=800).contains(&n), "seed {seed}: {n} switches");
        assert!(process
            .log()
            .windows(2)
            .all(|w| w[0].t < w[1].t && w[0].index != w[1].index));
    }
}

#[test]
fn cutoff_places_the_remaining_switches_evenly() {
    let s = LearningRateSchedule::new(10.0, 10.0)
        .unwrap()
        .with_cutoff(1.0, 8, 5.0)
        .unwrap();
    let mut process = IndexProcess::new(3, s, 4, 0).unwrap();
    process.advance_to(5.0);
    let late: Vec<f64> = process
        .log()
        .iter()
        .map(|e| e.t)
        .filter(|t| *t > 1.0)
        .collect();
    assert_eq!(
        late,
        (1..=8).map(|k| 1.0 + 0.5 * k as f64).collect::<Vec<_>>()
    );
}

#[test]
fn advance_index_moves_forward() {
    let s = LearningRateSchedule::new(1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (t, i) = advance_index(&s, 4, 2.0, 1, &mut rng);
    assert!(t > 2.0 && i != 1 && i < 4);
}

#[test]
fn generator_rows_sum_to_zero() {
    let q = transition_rate_matrix(4, 0.25).unwrap();
    for r in 0..4 {
        assert!(q.row(r).sum().abs() < 1e-12);
        assert!(q[(r, r)] < 0.0);
    }
    assert!(transition_rate_matrix(1, 0.25).is_err());
}

#[test]
fn same_seed_same_run() {
    let p = linear(
        &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.5, -0.5],
        vec![1.0, 0.0, 1.0, 0.5],
    );
    let part = partition(&p, 2, PartitionScheme::ContiguousBlocks).unwrap();
    let e0 =
        Ensemble::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]], 0.0).unwrap();
    let cfg = FlowConfig {
        t_end: 20.0,
        ..FlowConfig::default()
    };
    let s = LearningRateSchedule::new(10.0, 10.0)
        .unwrap()
        .with_cutoff(5.0, 50, 20.0)
        .unwrap();
    let a = integrate_subsampled(&e0, &p, &part, &cfg, &s, 3, 0).unwrap();
    let b = integrate_subsampled(&e0, &p, &part, &cfg, &s, 3, 0).unwrap();
    let c = integrate_subsampled(&e0, &p, &part, &cfg, &s, 3, 1).unwrap();
    assert_eq!(a.final_mean(), b.final_mean());
    assert_eq!(a.switches.len(), b.switches.len());
    assert_ne!(
        a.switches.iter().map(|s| s.t).collect::<Vec<_>>(),
        c.switches.iter().map(|s| s.t).collect::<Vec<_>>()
    );
}

#[test]
fn invalid_partitions_are_rejected() {
    let p = linear(&[1.0, 0.0, 0.0, 1.0], vec![1.0, 0.0]);
    assert!(partition(&p, 1, PartitionScheme::ContiguousBlocks).is_err());
    assert!(partition(&p, 3, PartitionScheme::ContiguousBlocks).is_err());
    assert!(DataPartition::whole(&p).is_ok());
}
