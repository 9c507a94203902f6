//! A small two-stage construction, checked against quantities recomputed
//! from scratch out of the materialized samplers.

use std::f64::consts::PI;
use std::sync::OnceLock;

use limper::analysis::{
    cover_sum, gordon_check, gordon_check_scaled, hausdorff_sum, ledger_spectrum_distance, lyapunov_convergence,
};
use limper::construction::{
    family_floor, iterate, ConcatenateConfig, ConstructionConfig, ConstructionLedger, EnlargeConfig, FamilyRecipe,
    GridConfig, ScheduleConfig, WindowPolicy,
};
use limper::periodic::{band_spectrum_coupled, EnergyGrid, PeriodicSampler, Potential};
use limper::Error;

fn config() -> ConstructionConfig {
    ConstructionConfig {
        base: PeriodicSampler::constant(1, 0.0),
        epsilon0: 1.0,
        stage_count: 2,
        seed: 11,
        tol: 1e-10,
        window: WindowPolicy::Inherit,
        budget: 1000,
        schedule: ScheduleConfig { first: 2, factor: 2 },
        enlarge: EnlargeConfig {
            tilde_period: 16,
            n1: 3,
            n1_max: 48,
            n2_start: 4,
            n2_max: 256,
        },
        concatenate: ConcatenateConfig {
            min_repetitions: 3,
            max_period: 1 << 14,
            exponent: 2,
            materialize: 4,
        },
        grid: GridConfig {
            lambda_count: 3,
            energies_per_unit: 40.0,
            min_energies: 200,
            measure_lambda: 1.0,
        },
    }
}

fn ledger() -> &'static ConstructionLedger {
    static LEDGER: OnceLock<ConstructionLedger> = OnceLock::new();
    LEDGER.get_or_init(|| {
        let ledger = iterate(&config(), 2).unwrap();
        assert!(ledger.failure.is_none(), "{:?}", ledger.failure);
        ledger
    })
}

fn values(ledger: &ConstructionLedger, stage: usize) -> Vec<f64> {
    ledger.approximant(stage).unwrap().materialize().values().to_vec()
}

#[test]
fn stage_one_is_a_shift_family_around_one_probe() {
    let ledger = ledger();
    let s1 = &ledger.stages[0];
    let n2 = s1.params.n2.unwrap();
    let fam = ledger.family(1).unwrap();
    assert_eq!(fam.len() as u64, n2 + 1);
    assert_eq!(fam.period(), 16);

    // the first and last members differ by one shift step 4π/(εp̃N₂)
    let step = 4.0 * PI / (s1.params.eps * 16.0 * n2 as f64);
    let first = fam.members()[0].materialize();
    let last = fam.members()[fam.len() - 1].materialize();
    assert!((first.sup_distance(&last) - step).abs() < 1e-12);
    assert!((s1.last_first_distance.unwrap() - step).abs() < 1e-12);

    // every member is the probe plus a constant
    let probe = &s1.probes[0].sampler;
    for m in fam.members() {
        let v = m.materialize();
        let c = v.values()[0] - probe.values()[0];
        assert!(v.values().iter().zip(probe.values()).all(|(a, b)| (a - b - c).abs() < 1e-12));
    }
}

#[test]
fn stage_two_members_are_block_concatenations() {
    let ledger = ledger();
    let s2 = &ledger.stages[1];
    let layout = s2.layout.as_ref().unwrap();
    let input = ledger.family(1).unwrap();
    let fam = ledger.family(2).unwrap();
    assert_eq!(fam.period() as u64, layout.period());
    assert_eq!(fam.len(), 4);
    let FamilyRecipe::Concatenation { vectors, exponent, .. } = &s2.family else {
        panic!("stage 2 should concatenate");
    };
    let unit = (layout.repetitions as f64).powi(-(*exponent as i32));
    for (member, t) in fam.members().iter().zip(vectors) {
        let v = member.materialize();
        for (i, inp) in input.members().iter().enumerate() {
            let block = inp.materialize();
            let start = layout.member_start(i) as usize;
            let runs = layout.runs[i] as usize;
            // the bumped block is the last one (second to last for the final member)
            let bumped = if i + 1 < layout.members { runs - 1 } else { runs - 2 };
            for b in 0..runs {
                let shift = if b == bumped { unit * t[i] as f64 } else { 0.0 };
                for k in 0..16 {
                    let got = v.values()[start + b * 16 + k];
                    assert!((got - block.values()[k] - shift).abs() < 1e-12, "member {i} block {b} site {k}");
                }
            }
        }
    }
    // t = 0 against t = r - 1 realizes the full diameter (r - 1)·r^{-N}
    let a = fam.members()[0].materialize();
    let b = fam.members()[1].materialize();
    assert!((a.sup_distance(&b) - layout.family_diameter(*exponent)).abs() < 1e-12);
    assert!(fam.diameter() <= layout.family_diameter(*exponent) + 1e-12);
}

#[test]
fn recorded_floors_match_a_fresh_scan() {
    let ledger = ledger();
    for (i, stage) in ledger.stages.iter().enumerate() {
        let fam = ledger.family(i + 1).unwrap();
        let fresh = family_floor(&fam, &stage.params.grid);
        assert_eq!(fresh, stage.floor, "stage {}", i + 1);
    }
}

#[test]
fn stored_spectra_match_a_fresh_solve() {
    let ledger = ledger();
    for (i, stage) in ledger.stages.iter().enumerate() {
        let stored = stage.spectrum.as_ref().unwrap();
        let approx = ledger.approximant(i + 1).unwrap();
        let fresh = band_spectrum_coupled(&approx, stored.lambda, ledger.config.tol).unwrap();
        assert_eq!(fresh.band_count(), stored.spectrum.band_count());
        assert!(fresh.hausdorff_distance(&stored.spectrum) < 1e-9);
    }
}

#[test]
fn gordon_deviation_matches_brute_force() {
    let ledger = ledger();
    let report = gordon_check(ledger, 1000).unwrap();
    let v = values(ledger, 2);
    let p = v.len() as i64;
    let at = |n: i64| v[n.rem_euclid(p) as usize];
    let row = &report.rows[0];
    assert_eq!(row.index, 1);
    assert_eq!(row.q, 16);
    let q = row.q as i64;
    let brute = (1..=q)
        .map(|n| (at(n) - at(n + q)).abs().max((at(n) - at(n - q)).abs()))
        .fold(0.0, f64::max);
    assert!((row.deviation - brute).abs() < 1e-12);
    assert!(row.deviation <= row.budget.unwrap());
    assert!(row.budget.unwrap() <= 1.0);

    let doubled = gordon_check_scaled(ledger, 1000, 2.0).unwrap();
    assert!((doubled.rows[0].deviation - 2.0 * row.deviation).abs() < 1e-12);
}

#[test]
fn gordon_needs_two_stages_and_enough_sites() {
    let ledger = ledger();
    assert!(matches!(gordon_check(ledger, 10), Err(Error::Budget(_))));
    let mut short = ledger.clone();
    short.stages.truncate(1);
    assert!(gordon_check(&short, 1000).is_err());
}

#[test]
fn linear_cover_is_measure_plus_inflation() {
    let ledger = ledger();
    for stage in 1..=2 {
        let est = hausdorff_sum(ledger, stage, 1.0, 1.0).unwrap();
        let stored = &ledger.stages[stage - 1].spectrum.as_ref().unwrap().spectrum;
        let period = ledger.stages[stage - 1].params.period as f64;
        let infl = period.powi(-(stage as i32));
        assert_eq!(est.inflation, infl);
        let expected = stored.total_measure() + 2.0 * infl * stored.band_count() as f64;
        assert!((est.cover_sum - expected).abs() < 1e-9);
        assert!((cover_sum(stored, infl, 1.0) - est.cover_sum).abs() < 1e-12);
        // a smaller exponent can only enlarge a cover by pieces shorter than 1
        let half = hausdorff_sum(ledger, stage, 0.5, 1.0).unwrap();
        assert!(half.cover_sum >= est.cover_sum);
    }
}

#[test]
fn hausdorff_rejects_bad_arguments() {
    let ledger = ledger();
    assert!(hausdorff_sum(ledger, 1, 0.0, 1.0).is_err());
    assert!(hausdorff_sum(ledger, 1, 1.5, 1.0).is_err());
    assert!(hausdorff_sum(ledger, 1, 1.0, 1e-3).is_err());
    assert!(hausdorff_sum(ledger, 3, 1.0, 1.0).is_err());
}

#[test]
fn convergence_rows_match_direct_differences() {
    let ledger = ledger();
    let grid = EnergyGrid::covering(6.0, 301).unwrap();
    let report = lyapunov_convergence(ledger, &grid, 1.0).unwrap();
    assert_eq!(report.rows.len(), 1);
    let energies: Vec<f64> = grid.iter().collect();
    let a = ledger.family(1).unwrap().lyapunov_grid(&energies, 1.0);
    let b = ledger.family(2).unwrap().lyapunov_grid(&energies, 1.0);
    let direct = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!((report.rows[0].sup_difference - direct).abs() < 1e-12);
    // far outside the spectrum every member has L >= 1
    let far = 4.0 + ledger.family(2).unwrap().sup_norm();
    assert!(ledger.family(2).unwrap().lyapunov(far, 1.0) >= 1.0);
}

#[test]
fn stage_one_spectra_are_sup_norm_stable() {
    let ledger = ledger();
    let report = ledger_spectrum_distance(ledger, 1e-10).unwrap();
    assert!(report.passed);
    assert!(report.distance <= report.sup_distance + 2e-10);
}

#[test]
fn ledger_round_trips_through_json() {
    let ledger = ledger();
    let back = ConstructionLedger::from_json(&ledger.to_json()).unwrap();
    assert_eq!(&back, ledger);
    assert_eq!(back.family(2).unwrap().period(), ledger.approximant(2).unwrap().period());
}
