use dpol::privacy::draw_noise;
use dpol::{
    generate_synthetic, partition, run_offline, run_online, sensitivity_online, CommSchedule, Example,
    FeasibleSet, LossModel, OfflineRunConfig, OnlineRunConfig, PrivacyParams, ScheduleMode,
    StepsizeSchedule,
};
use proptest::prelude::*;

mod common;
use common::{centralized, same_run};

fn streams(m: usize, per: usize, dim: usize, seed: u64) -> Vec<Vec<Example>> {
    let ds = generate_synthetic(dim, m * per, 0.1, seed).unwrap();
    partition(&ds, m, 0.0, seed).unwrap().materialize(&ds).train
}

fn config(m: usize, rounds: usize, dim: usize, loss: LossModel, privacy: PrivacyParams) -> OnlineRunConfig {
    let schedule = CommSchedule::new(ScheduleMode::RandomPairwiseGossip, m, 0.1, m, 5).unwrap();
    OnlineRunConfig::new(rounds, dim, loss, schedule, privacy, StepsizeSchedule::for_loss(&loss), 11)
}

#[test]
fn single_learner_matches_centralized_descent_bitwise() {
    let set = FeasibleSet::default();
    for loss in [LossModel::hinge(), LossModel::hinge().regularized(0.1, &set).unwrap()] {
        let data = streams(1, 1000, 6, 3);
        let cfg = config(1, 1000, 6, loss, PrivacyParams::private(0.5).unwrap());
        let record = run_online(&cfg, &data).unwrap();
        let (path, losses, mus) = centralized(&loss, &cfg.stepsize, &set, 0.5, cfg.seed, &data[0]);
        assert_eq!(record.reference_trajectory, path);
        assert_eq!(record.losses.iter().map(|r| r[0]).collect::<Vec<_>>(), losses);
        assert_eq!(record.noise.iter().map(|n| n.scale).collect::<Vec<_>>(), mus);
    }
}

#[test]
fn unit_batch_offline_engine_is_the_online_engine() {
    for m in [1, 4] {
        let data = streams(m, 300, 5, 8);
        let eval = streams(1, 50, 5, 9).remove(0);
        let cfg = config(m, 300, 5, LossModel::hinge(), PrivacyParams::private(1.0).unwrap());
        let online = run_online(&cfg, &data).unwrap();
        let mut off = OfflineRunConfig::new(cfg, 1, 0.0);
        off.excess_risk = false;
        let (offline, _) = run_offline(&off, &data, &eval).unwrap();
        assert!(same_run(&online, &offline), "m = {m}");
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let data = streams(8, 200, 4, 2);
    let mut cfg = config(8, 200, 4, LossModel::logistic(), PrivacyParams::private(0.3).unwrap());
    cfg.record_trajectories = true;
    let one = run_online(&cfg, &data).unwrap();
    cfg.workers = 4;
    let four = run_online(&cfg, &data).unwrap();
    assert!(same_run(&one, &four));
}

#[test]
fn logged_noise_scales_follow_the_calibration() {
    let data = streams(3, 150, 7, 4);
    let cfg = config(3, 150, 7, LossModel::hinge(), PrivacyParams::private(0.2).unwrap());
    let record = run_online(&cfg, &data).unwrap();
    assert_eq!(record.noise.len(), 3 * 151);
    for log in &record.noise {
        let alpha = cfg.stepsize.at(log.round.max(1)).unwrap();
        assert_eq!(log.alpha, alpha);
        assert_eq!(log.scale, sensitivity_online(alpha, 7, 1.0).unwrap() / 0.2);
        let sigma = draw_noise(cfg.seed, log.learner, log.round, 7, log.scale).unwrap().sigma;
        assert_eq!(log.l2, sigma.iter().map(|s| s * s).sum::<f64>().sqrt());
    }
}

#[test]
fn zero_signal_runs_reach_consensus_at_the_geometric_rate() {
    // With x = 0 the hinge subgradient vanishes, so only mixing moves the parameters.
    let m = 6;
    let dim = 3;
    let zero = vec![Example { x: vec![0.0; dim], y: 1.0 }; 400];
    let data = vec![zero; m];
    let mut initial: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..dim).map(|k| ((i * 7 + k * 3) % 5) as f64 / 10.0 - 0.2).collect())
        .collect();
    for k in 0..dim {
        let mean = initial.iter().map(|w| w[k]).sum::<f64>() / m as f64;
        initial.iter_mut().for_each(|w| w[k] -= mean);
    }
    let mut cfg = config(m, 400, dim, LossModel::hinge(), PrivacyParams::non_private());
    cfg.initial = Some(initial.clone());
    cfg.record_trajectories = true;
    let record = run_online(&cfg, &data).unwrap();
    let rate = cfg.schedule.consensus_rate().unwrap();
    let start: f64 = initial.iter().flatten().map(|v| v.abs()).sum();
    for (t, states) in record.trajectories.as_ref().unwrap().iter().enumerate() {
        for w in states {
            for v in w {
                assert!(v.abs() <= rate.bound(t) * start + 1e-12, "round {t}: {v}");
            }
        }
    }
    let last = record.trajectories.unwrap().pop().unwrap();
    assert!(last.iter().flatten().all(|v| v.abs() < 1e-6));
}

#[test]
fn short_streams_report_truncation() {
    let data = streams(2, 50, 3, 1);
    let cfg = config(2, 80, 3, LossModel::hinge(), PrivacyParams::non_private());
    match run_online(&cfg, &data) {
        Err(dpol::Error::RunTruncated { last_complete_round, .. }) => assert_eq!(last_complete_round, 50),
        other => panic!("expected truncation, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn iterates_stay_feasible(
        radius in 0.2f64..3.0,
        eps in prop_oneof![Just(f64::INFINITY), 0.05f64..5.0],
        mode in prop_oneof![
            Just(ScheduleMode::FixedComplete),
            Just(ScheduleMode::RandomPairwiseGossip),
            Just(ScheduleMode::RingRotation)
        ],
        m in 1usize..6,
        seed in 0u64..1000,
    ) {
        let set = FeasibleSet::new(radius).unwrap();
        let privacy = if eps.is_finite() { PrivacyParams::private(eps).unwrap() } else { PrivacyParams::non_private() };
        let schedule = CommSchedule::new(mode, m, 0.1, m, seed).unwrap();
        let loss = LossModel::hinge();
        let mut cfg = OnlineRunConfig::new(60, 4, loss, schedule, privacy, StepsizeSchedule::Convex, seed);
        cfg.set = set;
        cfg.record_trajectories = true;
        let record = run_online(&cfg, &streams(m, 60, 4, seed)).unwrap();
        prop_assert!(record.max_param_norm <= radius * (1.0 + 1e-12));
        for states in record.trajectories.unwrap() {
            for w in states {
                prop_assert!(set.contains(&w));
            }
        }
        prop_assert_eq!(record.lipschitz_violations, 0);
    }
}
