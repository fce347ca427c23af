use fdshift::bounds::mse_lower_bound_complex;
use fdshift::montecarlo::{
    aggregate, run_trial, run_trial_with, sweep, to_csv, to_db, trial_seed, EstimatorKind, ExperimentConfig, PointSetup,
    CSV_HEADER,
};
use proptest::prelude::*;

fn small(trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        eb_n0_db: vec![5.0, 15.0],
        betas: vec![0.2, 0.5],
        trials,
        seed: 9,
        ..Default::default()
    }
}

#[test]
fn same_seed_same_trial() {
    let cfg = ExperimentConfig::default();
    let p = cfg.points()[0];
    let a = run_trial(&cfg, p, 1234).unwrap();
    let b = run_trial(&cfg, p, 1234).unwrap();
    assert_eq!(a, b);
    let c = run_trial(&cfg, p, 1235).unwrap();
    assert_ne!(a.channels, c.channels);
}

#[test]
fn perfect_csi_has_zero_error() {
    let cfg = ExperimentConfig::default();
    for t in 0..20 {
        let r = run_trial(&cfg, cfg.points()[0], trial_seed(3, 0, t)).unwrap();
        let o = r.outcome(EstimatorKind::Perfect).unwrap();
        assert_eq!(o.sq_err_hba_complex(), 0.0);
        assert_eq!(o.sq_err_haa_complex(), 0.0);
    }
}

#[test]
fn em_median_error_near_bound_at_twenty_db() {
    let cfg = ExperimentConfig {
        eb_n0_db: vec![20.0],
        estimators: vec![EstimatorKind::Em],
        ..Default::default()
    };
    let setup = PointSetup::new(&cfg, cfg.points()[0]).unwrap();
    let mut errs: Vec<f64> = (0..100)
        .map(|t| {
            run_trial_with(&setup, trial_seed(5, 0, t))
                .outcome(EstimatorKind::Em)
                .unwrap()
                .sq_err_hba_complex()
        })
        .collect();
    errs.sort_by(f64::total_cmp);
    let median = (errs[49] + errs[50]) / 2.0;
    assert!(median < 10.0 * setup.bound(), "median {median} bound {}", setup.bound());
}

#[test]
fn single_trial_sweep_reproduces_run_trial() {
    let cfg = ExperimentConfig { trials: 1, seed: 77, ..Default::default() };
    let rows = sweep(&cfg).unwrap();
    let p = cfg.points()[0];
    let r = run_trial(&cfg, p, trial_seed(77, 0, 0)).unwrap();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        let o = r.outcome(row.estimator).unwrap();
        assert_eq!(row.trials_used, 1);
        assert_eq!(row.mse_hba, o.sq_err_hba_complex());
        assert_eq!(row.mse_haa, o.sq_err_haa_complex());
        assert_eq!(row.bit_errors, o.bit_errors);
    }
}

#[test]
fn bound_column_is_the_closed_form() {
    let cfg = ExperimentConfig { trials: 2, estimators: vec![EstimatorKind::Perfect], ..Default::default() };
    let rows = sweep(&cfg).unwrap();
    let e = 10f64.powf(1.0) * 4.0;
    let want = mse_lower_bound_complex(128, e, 0.2, 1.0);
    assert!((rows[0].bound - want).abs() <= 1e-15 * want);
    assert!((rows[0].bound_per_coordinate() - want / 2.0).abs() <= 1e-15 * want);
}

#[test]
fn sweep_is_bit_identical_across_runs_and_thread_counts() {
    let cfg = small(12);
    let once = to_csv(&sweep(&cfg).unwrap());
    let again = to_csv(&sweep(&cfg).unwrap());
    assert_eq!(once, again);
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let other = pool.install(|| to_csv(&sweep(&cfg).unwrap()));
        assert_eq!(once, other, "{threads} threads");
    }
}

#[test]
fn csv_layout() {
    let cfg = small(3);
    let csv = to_csv(&sweep(&cfg).unwrap());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 1 + cfg.points().len() * 3);
    for l in &lines[1..] {
        assert_eq!(l.split(',').count(), 13);
    }
}

#[test]
fn aggregate_invariants() {
    let cfg = small(20);
    for row in sweep(&cfg).unwrap() {
        assert!(row.trials_used + row.degenerate == cfg.trials);
        assert!(row.mse_hba.is_finite() && row.mse_hba >= 0.0);
        if row.estimator == EstimatorKind::Perfect {
            assert_eq!(row.mse_hba, 0.0);
            assert_eq!(row.mse_hba_db(), f64::NEG_INFINITY);
        } else {
            assert!((row.mse_hba_db() - 10.0 * row.mse_hba.log10()).abs() < 1e-12);
        }
        assert!((row.bound_db() - to_db(row.bound)).abs() < 1e-12);
        let ber = row.ber.unwrap();
        assert!((0.0..=1.0).contains(&ber));
    }
}

#[test]
fn all_pilot_frames_have_no_ber() {
    let cfg = ExperimentConfig {
        trials: 4,
        n_pilots: 128,
        estimators: vec![EstimatorKind::Pilot],
        ..Default::default()
    };
    let setup = PointSetup::new(&cfg, cfg.points()[0]).unwrap();
    let trials: Vec<_> = (0..4).map(|t| run_trial_with(&setup, trial_seed(1, 0, t))).collect();
    let rows = aggregate(&setup, &trials);
    assert_eq!(rows[0].ber, None);
    assert_eq!(rows[0].trials_used, 4);
    assert!(rows[0].mse_hba < 10.0 * rows[0].bound);
}

#[test]
fn mse_falls_with_beta_at_zero_db() {
    let cfg = ExperimentConfig {
        betas: vec![0.05, 0.1, 0.2, 0.4, 0.8, 1.0],
        eb_n0_db: vec![0.0],
        estimators: vec![EstimatorKind::Em],
        trials: 500,
        ..Default::default()
    };
    let mse: Vec<f64> = sweep(&cfg).unwrap().iter().map(|r| r.mse_hba).collect();
    let inversions = mse.windows(2).filter(|w| w[1] >= w[0]).count();
    assert!(inversions <= 1, "{mse:?}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn trial_errors_are_nonnegative(seed in any::<u64>(), snr in 0.0f64..30.0, sir in -100.0f64..0.0) {
        let cfg = ExperimentConfig { eb_n0_db: vec![snr], sir_db: vec![sir], ..Default::default() };
        let r = run_trial(&cfg, cfg.points()[0], seed).unwrap();
        for o in &r.outcomes {
            if o.degenerate() {
                prop_assert!(o.estimate.is_none());
            } else {
                prop_assert!(o.sq_err_hba.iter().chain(&o.sq_err_haa).all(|v| *v >= 0.0));
                prop_assert!(o.bit_errors <= o.bits);
            }
        }
    }
}
