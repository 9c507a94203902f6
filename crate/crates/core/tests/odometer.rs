use limper::cantor::{
    finite_hull, minimal_period, orbit_potential, periodize, translate, GroupSchedule, LevelSampler, OdometerElement,
    Translation,
};
use limper::periodic::PeriodicSampler;
use proptest::prelude::*;

fn schedule() -> GroupSchedule {
    GroupSchedule::new(vec![2, 6, 12, 60]).unwrap()
}

#[test]
fn adding_machine_orbit_reads_the_sampler_in_order() {
    let s = schedule();
    let f = LevelSampler::new(s.clone(), 2, PeriodicSampler::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()).unwrap();
    let t = Translation::add_one(&s);
    let omega = OdometerElement::identity(&s);
    let v = orbit_potential(&f, &t, &omega, -2, 7).unwrap();
    assert_eq!(v, vec![5.0, 6.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 1.0, 2.0]);
}

#[test]
fn periodizing_a_level_sampler_averages_cosets() {
    let s = schedule();
    let f = LevelSampler::new(s, 2, PeriodicSampler::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()).unwrap();
    let g = periodize(&f, 1).unwrap();
    // residues mod 2: {1, 3, 5} and {2, 4, 6}
    assert_eq!(g.sampler().values(), &[3.0, 4.0]);
    assert!(periodize(&f, 3).is_err());
}

#[test]
fn hull_of_a_periodic_word_has_one_translate_per_minimal_period() {
    let f = PeriodicSampler::new(vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
    assert_eq!(minimal_period(f.values()), 2);
    let hull = finite_hull(&f);
    assert_eq!(hull.len(), 2);
    assert_eq!(hull[1].values()[0], 1.0);
}

#[test]
fn non_unit_generators_are_rejected() {
    let s = schedule();
    let g = OdometerElement::from_integer(&s, 2);
    assert!(Translation::new(g).is_err());
    assert!(Translation::new(OdometerElement::from_integer(&s, 7)).is_ok());
}

proptest! {
    #[test]
    fn integer_embedding_is_additive(a in -10_000i64..10_000, b in -10_000i64..10_000) {
        let s = schedule();
        let t = Translation::add_one(&s);
        let x = OdometerElement::from_integer(&s, a);
        prop_assert_eq!(translate(&t, &x, b).unwrap(), OdometerElement::from_integer(&s, a + b));
    }

    #[test]
    fn translations_compose(n in -500i64..500, m in -500i64..500, g in 0usize..4) {
        let s = schedule();
        let t = Translation::new(OdometerElement::from_integer(&s, [1, 7, 11, 13][g])).unwrap();
        let omega = OdometerElement::from_integer(&s, 5);
        let two_steps = translate(&t, &translate(&t, &omega, n).unwrap(), m).unwrap();
        prop_assert_eq!(two_steps, translate(&t, &omega, n + m).unwrap());
        prop_assert_eq!(translate(&t, &omega, 0).unwrap(), omega);
    }

    #[test]
    fn orbit_of_a_level_sampler_is_periodic(values in prop::collection::vec(-1.0f64..1.0, 6), start in -50i64..50) {
        let s = schedule();
        let f = LevelSampler::new(s.clone(), 2, PeriodicSampler::new(values).unwrap()).unwrap();
        let t = Translation::new(OdometerElement::from_integer(&s, 7)).unwrap();
        let omega = OdometerElement::from_integer(&s, start);
        let v = orbit_potential(&f, &t, &omega, 0, 23).unwrap();
        for k in 0..18 {
            prop_assert_eq!(v[k], v[k + 6]);
        }
    }

    #[test]
    fn periodize_preserves_the_mean(values in prop::collection::vec(-1.0f64..1.0, 12)) {
        let s = schedule();
        let f = LevelSampler::new(s, 3, PeriodicSampler::new(values.clone()).unwrap()).unwrap();
        let mean: f64 = values.iter().sum::<f64>() / 12.0;
        for level in 1..=3 {
            let g = periodize(&f, level).unwrap();
            let gv = g.sampler().values();
            let gmean: f64 = gv.iter().sum::<f64>() / gv.len() as f64;
            prop_assert!((gmean - mean).abs() < 1e-12);
        }
    }
}
