use proptest::prelude::*;

use lumpfit::model::{DEFAULT_Q0, HEAT_NET_DIMS};
use lumpfit::ode::TimeGrid;
use lumpfit::training::{augment_time_shift, shuffle_split, ExperimentRun, FitReport, TrialReport};
use lumpfit::{LumpedModel, Mlp, PowerSignal};

fn model_from(params: &[f64], log_c: f64) -> LumpedModel {
    let mut net = Mlp::zeros(&HEAT_NET_DIMS, DEFAULT_Q0).unwrap();
    net.set_params(params).unwrap();
    LumpedModel::from_parts(net, log_c, 1.0, 23.0, 1000.0, 4000.0).unwrap()
}

proptest! {
    #[test]
    fn heat_input_stays_inside_its_band(
        params in prop::collection::vec(-40.0..40.0f64, 41),
        t in -1e4..1e4f64,
        p in -1e5..1e5f64,
    ) {
        let q = model_from(&params, 1.0).heat_input(t, p);
        prop_assert!(q > 0.0 && q < DEFAULT_Q0);
    }

    #[test]
    fn model_text_round_trips(params in prop::collection::vec(-5.0..5.0f64, 41), log_c in -3.0..5.0f64) {
        let m = model_from(&params, log_c);
        let back = LumpedModel::from_text(&m.to_text(), "mem".as_ref()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn interpolation_stays_within_sample_range(
        values in prop::collection::vec(0.0..4000.0f64, 2..20),
        t in -50.0..100.0f64,
    ) {
        let times: Vec<f64> = (0..values.len()).map(|i| 3.0 * i as f64).collect();
        let sig = PowerSignal::new(times, values.clone()).unwrap();
        let v = sig.at(t);
        let lo = values.iter().cloned().fold(f64::MAX, f64::min);
        let hi = values.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(v >= lo && v <= hi);
    }

    #[test]
    fn augmentation_keeps_grid_and_length(
        temps in prop::collection::vec(0.0..900.0f64, 5..60),
        shifts in prop::collection::vec(-20.0..20.0f64, 0..4),
    ) {
        let grid = TimeGrid::with_points(0.0, 1.0, temps.len()).unwrap();
        let run = ExperimentRun::new("r".into(), grid, temps.clone(), vec![1000.0; temps.len()]).unwrap();
        let out = augment_time_shift(&run, &shifts).unwrap();
        prop_assert_eq!(out.len(), shifts.len() + 1);
        prop_assert_eq!(&out[0], &run);
        for r in &out {
            prop_assert_eq!(r.grid(), run.grid());
            prop_assert_eq!(r.len(), run.len());
        }
    }

    #[test]
    fn splits_partition_the_runs(n in 2usize..15, trials in 1usize..12, seed in any::<u64>(), frac in 0.0..1.0f64) {
        let n_train = 1 + ((n - 2) as f64 * frac) as usize;
        let splits = shuffle_split(n, trials, n_train, seed).unwrap();
        prop_assert_eq!(splits.len(), trials);
        for s in &splits {
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s.train.len(), n_train);
        }
    }

    #[test]
    fn report_csv_round_trips(rows in prop::collection::vec((0.0..1e6f64, 0.0..1e6f64, 0.01..100.0f64), 1..12)) {
        let report = FitReport {
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, &(tr, te, c))| TrialReport {
                    trial: i + 1,
                    train_loss: tr,
                    test_loss: te,
                    capacitance: c,
                    train_rmse: f64::NAN,
                    test_rmse: f64::NAN,
                })
                .collect(),
        };
        let back = FitReport::from_csv(&report.to_csv()).unwrap();
        prop_assert_eq!(back.to_csv(), report.to_csv());
        prop_assert_eq!(back.render_table(), report.render_table());
    }
}
