mod common;

use std::sync::Arc;

use common::{random_instance, random_table, S0};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use superhedge_core::marginals::{Marginal, MarketInput, OptionKind};
use superhedge_core::paths::{PathLattice, PredicateSpec, PredictionMask, TailProxySpec};
use superhedge_core::payoffs::{make_payoff, BetaFunctions, Payoff, PayoffSpec, TableFallback};
use superhedge_core::pricing::{
    duality_report, gap_asymptotic, gap_via_beta, primal_price, superhedge_calls, superhedge_puts, BetaSource,
    CouplingMode, DeltaSign, DualResult, PricingOptions, ReportOptions, StrikeMenu,
};

fn opts() -> PricingOptions {
    PricingOptions::default()
}

fn catalog(rng: &mut ChaCha8Rng, lattice: &PathLattice, n: usize) -> Vec<PayoffSpec> {
    vec![
        PayoffSpec::Asian {
            strike: rng.gen_range(70.0..110.0),
        },
        PayoffSpec::LookbackKnockIn {
            strike: rng.gen_range(70.0..120.0),
            barrier: rng.gen_range(40.0..100.0),
        },
        PayoffSpec::Forward,
        PayoffSpec::EuropeanPut {
            strike: rng.gen_range(60.0..140.0),
            maturity: Some(rng.gen_range(1..=n)),
        },
        random_table(rng, lattice, -20.0, 80.0, TableFallback::ScaledSum { scale: 0.3 }),
    ]
}

fn assert_hedge(d: &DualResult, lattice: &PathLattice) {
    let scale = 1.0 + d.value.abs();
    assert!(d.check.min_slack_after >= -1e-9 * scale, "hedge shortfall {}", d.check.min_slack_after);
    assert!((d.strategy.cost() - d.value).abs() <= 1e-9 * scale);
    assert!(d.check.paths_checked > 0 && d.check.paths_checked <= lattice.path_count());
    if d.delta_sign == DeltaSign::NonNegative {
        assert!(d.strategy.deltas.iter().all(|n| n.delta >= 0.0));
    }
}

fn assert_coupling(mask: &PredictionMask, p: &superhedge_core::pricing::PrimalResult) {
    let lattice = mask.lattice();
    let n = lattice.periods();
    let total: f64 = p.coupling.iter().map(|a| a.probability).sum();
    assert!((total - 1.0).abs() <= 1e-9);
    for i in 1..=n {
        let w = lattice.mass_weights(i).unwrap();
        let mut proj = vec![0.0; w.len()];
        for a in &p.coupling {
            assert!(a.probability >= 0.0);
            assert!(mask.contains_values(&a.values));
            proj[a.path[i - 1]] += a.probability;
        }
        for (x, y) in proj.iter().zip(w) {
            assert!((x - y).abs() <= 1e-9);
        }
    }
    for d in 0..n {
        let mut inc = vec![0.0; lattice.history_count(d)];
        for a in &p.coupling {
            inc[lattice.history_id(&a.path, d)] += a.probability * (a.values[d + 1] - a.values[d]);
        }
        for v in inc {
            match p.mode {
                CouplingMode::Supermartingale => assert!(v <= 1e-9 * S0),
                CouplingMode::Martingale => assert!(v.abs() <= 1e-9 * S0),
                CouplingMode::PlainCoupling => {}
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weak_duality_and_verified_hedges(seed in any::<u64>(), n in 1usize..=3, masked in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, n, if n == 3 { 5 } else { 8 }, 0.15);
        let proxies = TailProxySpec::default();
        let predicate = if masked {
            PredicateSpec::MaxAbsIncrement { delta: inst.max_jump }
        } else {
            PredicateSpec::AllPaths
        };
        let mask = inst.mask(&proxies, predicate);
        let lattice = mask.lattice().clone();
        for spec in catalog(&mut rng, &lattice, n) {
            let g = make_payoff(&spec, n).unwrap();
            let p = primal_price(&mask, &g, CouplingMode::Supermartingale, &opts()).unwrap();
            assert_coupling(&mask, &p);
            let calls = superhedge_calls(&inst.market(OptionKind::Call), &mask, &g, DeltaSign::NonNegative, &opts()).unwrap();
            let puts = superhedge_puts(&inst.market(OptionKind::Put), &mask, &g, &StrikeMenu::MassLevels, &opts()).unwrap();
            assert_hedge(&calls, &lattice);
            assert_hedge(&puts, &lattice);
            prop_assert!(calls.value >= p.value - 1e-7);
            prop_assert!(puts.value >= p.value - 1e-7);
            // More instruments can only help: calls span puts through parity plus the forward.
            prop_assert!(puts.value >= calls.value - 1e-6 * (1.0 + calls.value.abs()));
        }
    }

    #[test]
    fn martingale_coupling_when_means_are_flat(seed in any::<u64>(), n in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, n, 6, 0.0);
        let mask = inst.mask(&TailProxySpec::none(), PredicateSpec::AllPaths);
        let g = make_payoff(&PayoffSpec::Asian { strike: 95.0 }, n).unwrap();
        let sup = primal_price(&mask, &g, CouplingMode::Supermartingale, &opts()).unwrap();
        let mart = primal_price(&mask, &g, CouplingMode::Martingale, &opts()).unwrap();
        assert_coupling(&mask, &mart);
        prop_assert!((sup.value - mart.value).abs() <= 1e-7);
    }

    #[test]
    fn put_gap_is_monotone_in_the_top_proxy(seed in any::<u64>(), n in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, n, 6, 0.15);
        let market = inst.market(OptionKind::Put);
        for spec in [PayoffSpec::Forward, PayoffSpec::Asian { strike: 90.0 }] {
            let g = make_payoff(&spec, n).unwrap();
            let mut last = f64::NEG_INFINITY;
            for top in [10.0, 100.0, 1000.0] {
                let mask = PredictionMask::all_paths(inst.lattice_with_factors(&TailProxySpec::ladder_up_to(10.0, top)));
                let v = superhedge_puts(&market, &mask, &g, &StrikeMenu::MassLevels, &opts()).unwrap().value;
                prop_assert!(v >= last - 1e-9, "{v} after {last}");
                last = v;
            }
        }
    }
}

fn small_put_instance() -> (MarketInput, Vec<Marginal>) {
    let marginals = vec![
        Marginal::from_pairs(&[(60.0, 0.25), (90.0, 0.5), (120.0, 0.25)]).unwrap(),
        Marginal::from_pairs(&[(50.0, 0.25), (80.0, 0.5), (120.0, 0.25)]).unwrap(),
    ];
    let strikes: Vec<_> = marginals.iter().map(|m| m.grid().with_point(0.0).unwrap()).collect();
    (MarketInput::from_marginals(S0, OptionKind::Put, &marginals, &strikes).unwrap(), marginals)
}

#[test]
fn zero_beta_route_is_the_primal_for_bounded_payoffs() {
    let (_, marginals) = small_put_instance();
    let lattice = Arc::new(superhedge_core::paths::build_lattice(S0, &marginals, &TailProxySpec::default()).unwrap());
    let mask = PredictionMask::all_paths(lattice.clone());
    let g = make_payoff(&PayoffSpec::EuropeanPut { strike: 85.0, maturity: None }, 2).unwrap();
    let route = gap_via_beta(&mask, &g, &BetaFunctions::zero(lattice), &opts()).unwrap();
    let p = primal_price(&mask, &g, CouplingMode::Supermartingale, &opts()).unwrap().value;
    assert!((route.value - p).abs() <= 1e-9);
}

#[test]
fn unbounded_g_beta_is_rejected() {
    let (_, marginals) = small_put_instance();
    let lattice = Arc::new(superhedge_core::paths::build_lattice(S0, &marginals, &TailProxySpec::default()).unwrap());
    let mask = PredictionMask::all_paths(lattice.clone());
    let g = make_payoff(&PayoffSpec::Forward, 2).unwrap();
    let err = gap_via_beta(&mask, &g, &BetaFunctions::zero(lattice), &opts()).unwrap_err();
    assert!(matches!(err, superhedge_core::pricing::PricingError::UnboundedGBeta { .. }));
}

#[test]
fn penalty_is_inactive_without_a_prediction_set() {
    let (market, marginals) = small_put_instance();
    let lattice = Arc::new(superhedge_core::paths::build_lattice(S0, &marginals, &TailProxySpec::default()).unwrap());
    let mask = PredictionMask::all_paths(lattice);
    let g = make_payoff(&PayoffSpec::Asian { strike: 85.0 }, 2).unwrap();
    let route = gap_asymptotic(&market, &mask, &g, &[1.0, 10.0, 100.0], &StrikeMenu::MassLevels, &opts()).unwrap();
    let first = route.points[0].gamma;
    for p in &route.points {
        assert!((p.gamma - first).abs() <= 1e-7);
    }
}

#[test]
fn bounded_payoff_gamma_vanishes() {
    let (market, marginals) = small_put_instance();
    let lattice = Arc::new(superhedge_core::paths::build_lattice(S0, &marginals, &TailProxySpec::default()).unwrap());
    let mask = superhedge_core::paths::build_mask(lattice, PredicateSpec::MaxAbsIncrement { delta: 60.0 }).unwrap();
    let g = make_payoff(&PayoffSpec::EuropeanPut { strike: 100.0, maturity: None }, 2).unwrap();
    let route = gap_asymptotic(&market, &mask, &g, &[1.0, 10.0, 100.0], &StrikeMenu::MassLevels, &opts()).unwrap();
    assert!(route.points.last().unwrap().gamma.abs() <= 1e-7);
}

fn report_for(kind: OptionKind, marginals: &[Marginal], spec: PayoffSpec, beta: Option<BetaSource>) -> superhedge_core::pricing::DualityReport {
    let strikes: Vec<_> = marginals.iter().map(|m| m.grid().with_point(0.0).unwrap()).collect();
    let market = MarketInput::from_marginals(S0, kind, marginals, &strikes).unwrap();
    let lattice = Arc::new(
        PathLattice::from_marginals(S0, marginals, &TailProxySpec::ladder_up_to(10.0, 1000.0), 1_000_000).unwrap(),
    );
    let mask = PredictionMask::all_paths(lattice);
    let g: Payoff = make_payoff(&spec, marginals.len()).unwrap();
    let options = ReportOptions {
        beta,
        ..Default::default()
    };
    duality_report(&market, &mask, &g, &options).unwrap()
}

#[test]
fn report_examples() {
    let two = small_put_instance().1;
    let r = report_for(OptionKind::Call, &two, PayoffSpec::Asian { strike: 85.0 }, None);
    assert!(r.gap.unwrap().abs() <= 1e-7);
    assert_eq!(r.weak_duality_holds, Some(true));

    let one = vec![Marginal::from_pairs(&[(60.0, 0.5), (120.0, 0.5)]).unwrap()];
    let r = report_for(OptionKind::Put, &one, PayoffSpec::Forward, Some(BetaSource::Auto));
    assert!((r.gap.unwrap() - 10.0).abs() <= 1e-3 * S0);
    assert!((r.bubbles[0] - 10.0).abs() <= 1e-12);
    assert!((r.forward - 90.0).abs() <= 1e-12);
    assert!((r.gap_via_beta.unwrap() - 10.0).abs() <= 1e-9);
    assert_eq!(r.beta_approximate, Some(false));

    let r = report_for(OptionKind::Put, &two, PayoffSpec::EuropeanPut { strike: 95.0, maturity: None }, None);
    assert!(r.gap.unwrap().abs() <= 1e-7);
}
