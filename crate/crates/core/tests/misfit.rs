use std::sync::OnceLock;

use proptest::prelude::*;

use idlab::geometry::Domain;
use idlab::identifiability::battery_specs;
use idlab::reconstruction::{misfit, synthesize_measurements, ForwardModel, MeasurementSet, ParamA};

fn setup() -> &'static (MeasurementSet, ParamA, f64) {
    static CELL: OnceLock<(MeasurementSet, ParamA, f64)> = OnceLock::new();
    CELL.get_or_init(|| {
        let dom = Domain::default();
        let truth = ParamA::from_fn((0.0, 1.0), 6, 0.1, |u| 1.0 + u).unwrap();
        let data = battery_specs(&dom, (0.0, 1.0), 4, &[1.0]);
        let inversion = ForwardModel {
            n_cells: 8,
            n_steps: 8,
            ..ForwardModel::default()
        };
        // same-grid data: the property is injectivity of the discrete map, and
        // two-grid model error would mask knots the data barely reach
        let meas = synthesize_measurements(&dom, &truth, &data, inversion, inversion, 0.0, 7).unwrap();
        assert!(meas.provenance.inverse_crime);
        let at_truth = misfit(&meas, &truth).unwrap();
        (meas, truth, at_truth)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn truth_beats_every_perturbation(delta in prop::collection::vec(-0.3f64..0.3, 6), k in 0usize..6, sign in prop::bool::ANY) {
        let (meas, truth, at_truth) = setup();
        let mut values = truth.values.clone();
        for (v, d) in values.iter_mut().zip(&delta) {
            *v += d;
        }
        // force ‖δ‖∞ ≥ 0.1
        if delta.iter().all(|d| d.abs() < 0.1) {
            values[k] = truth.values[k] + if sign { 0.1 } else { -0.1 };
        }
        let perturbed = ParamA::new(truth.range, values, truth.a_lo).unwrap();
        let m = misfit(meas, &perturbed).unwrap();
        prop_assert!(*at_truth <= m, "truth {at_truth:e} perturbed {m:e}");
    }
}
