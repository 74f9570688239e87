use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use workforce_core::demography::{exit_rates, net_change_rates, AgeTable};
use workforce_core::engine::run_with_inflows;
use workforce_core::{
    isodensity, step_with_flows, CohortInflow, CohortRates, Country, ExitRates, FieldId, Layout,
    ModelState, Params, PopulationProjection, Sex,
};

const AGES: u32 = 8;

fn layout() -> Arc<Layout> {
    Layout::new(FieldId::minimal(), 30..=30 + AGES - 1)
}

fn state(values: &[f64], layout: &Arc<Layout>) -> ModelState {
    let mut s = ModelState::zeros(Arc::clone(layout), 2000);
    let mut it = values.iter().cycle();
    for &f in &layout.fields {
        for sex in Sex::ALL {
            for age in layout.ages() {
                s.set(f, sex, age, *it.next().unwrap());
            }
        }
    }
    s
}

fn rates(values: &[f64], layout: &Layout) -> CohortRates {
    let mut r = ExitRates::default();
    let mut it = values.iter().cycle();
    for sex in Sex::ALL {
        for age in layout.ages() {
            r.rates.insert((sex, age), *it.next().unwrap());
        }
    }
    CohortRates::new(&r, layout)
}

fn inflows(values: &[f64], layout: &Layout, years: usize, scale: f64) -> Vec<CohortInflow> {
    let mut it = values.iter().cycle();
    (0..years)
        .map(|_| CohortInflow::from_fn(layout, |_, _| scale * *it.next().unwrap()))
        .collect()
}

fn totals(traj: &workforce_core::Trajectory) -> Vec<f64> {
    let l = traj.layout().clone();
    traj.years()
        .flat_map(|y| l.fields.iter().map(move |&f| (f, y)).collect::<Vec<_>>())
        .map(|(f, y)| traj.field_total(f, y).unwrap())
        .collect()
}

fn vals() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..500.0, 1..32)
}

fn gammas() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, 1..16)
}

proptest! {
    #[test]
    fn every_change_is_an_inflow_or_outflow(
        init in vals(), g in gammas(), y in vals(), p_enter in 0.0f64..=1.0, p_gp in 0.0f64..=1.0,
    ) {
        let l = layout();
        let params = Params::minimal(p_enter, p_gp).unwrap();
        let r = rates(&g, &l);
        let mut s = state(&init, &l);
        for inflow in inflows(&y, &l, 10, 1.0) {
            let (next, flows) = step_with_flows(&s, &params, &r, &inflow);
            for (i, &f) in l.fields.iter().enumerate() {
                let d = next.field_total(f) - s.field_total(f);
                let scale = s.field_total(f).max(next.field_total(f)).max(1.0);
                prop_assert!((d - (flows.entered[i] - flows.exited[i])).abs() <= 1e-12 * scale);
                prop_assert!(flows.entered[i] >= 0.0 && flows.exited[i] >= 0.0);
            }
            prop_assert!(next.as_slice().iter().all(|v| *v >= 0.0));
            s = next;
        }
    }

    #[test]
    fn more_entry_never_lowers_a_stock(
        init in vals(), g in gammas(), y in vals(), lo in 0.0f64..=1.0, bump in 0.0f64..=1.0, p_gp in 0.0f64..=1.0,
    ) {
        let l = layout();
        let hi = (lo + bump).min(1.0);
        let r = rates(&g, &l);
        let s = state(&init, &l);
        let ys = inflows(&y, &l, 12, 1.0);
        let a = run_with_inflows(&s, &Params::minimal(lo, p_gp).unwrap(), &r, &ys, 2012);
        let b = run_with_inflows(&s, &Params::minimal(hi, p_gp).unwrap(), &r, &ys, 2012);
        for (x, z) in totals(&a).iter().zip(totals(&b)) {
            prop_assert!(z >= x - 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn trajectories_are_linear_in_stocks_and_inflow(
        init in vals(), g in gammas(), y in vals(), k in 0.1f64..10.0, p_enter in 0.0f64..=1.0, p_gp in 0.0f64..=1.0,
    ) {
        let l = layout();
        let params = Params::minimal(p_enter, p_gp).unwrap();
        let r = rates(&g, &l);
        let zero = ModelState::zeros(Arc::clone(&l), 2000);
        let s = state(&init, &l);
        let ys = inflows(&y, &l, 12, 1.0);
        let ys_k = inflows(&y, &l, 12, k);
        let none = inflows(&[0.0], &l, 12, 0.0);

        let only_inflow = totals(&run_with_inflows(&zero, &params, &r, &ys, 2012));
        let scaled = totals(&run_with_inflows(&zero, &params, &r, &ys_k, 2012));
        for (a, b) in only_inflow.iter().zip(&scaled) {
            prop_assert!((k * a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        let only_stock = totals(&run_with_inflows(&s, &params, &r, &none, 2012));
        let both = totals(&run_with_inflows(&s, &params, &r, &ys, 2012));
        for ((a, b), c) in only_inflow.iter().zip(&only_stock).zip(&both) {
            prop_assert!((a + b - c).abs() <= 1e-9 * c.abs().max(1.0));
        }
    }

    #[test]
    fn estimated_exit_rates_are_probabilities(values in prop::collection::vec(0.0f64..1e4, 8..64)) {
        let mut table = AgeTable::default();
        let mut it = values.iter().cycle();
        for year in 2000..2004 {
            for sex in Sex::ALL {
                for age in 30..40 {
                    table.values.insert((sex, age, year), *it.next().unwrap());
                }
            }
        }
        let r = exit_rates(&net_change_rates(&table)).unwrap();
        prop_assert!(r.rates.values().all(|g| (0.0..=1.0).contains(g)));
    }

    #[test]
    fn baseline_stays_inside_the_envelope(
        pops in prop::collection::vec(prop::collection::vec(1e3f64..1e7, 10), 1..5),
        z in 1.0f64..1e5,
    ) {
        let projections: Vec<PopulationProjection> = pops
            .iter()
            .enumerate()
            .map(|(k, v)| PopulationProjection {
                country: Country::new("ZZ"),
                scenario: if k == 0 { "baseline".into() } else { format!("alt{k}") },
                values: (2016..2026).zip(v.iter().copied()).collect::<BTreeMap<_, _>>(),
            })
            .collect();
        let line = isodensity(FieldId::SP, z, 2016, &projections, 2016..=2025).unwrap();
        prop_assert_eq!(line.value("baseline", 2016), Some(z));
        for (year, (lo, hi)) in &line.envelope {
            let b = line.baseline()[year];
            prop_assert!(*lo <= b && b <= *hi);
        }
    }
}
