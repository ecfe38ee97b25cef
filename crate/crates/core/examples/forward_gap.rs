//! Forward in a one-period put market whose law has mean 90 against spot 100.

use std::sync::Arc;

use superhedge_core::marginals::{Marginal, MarketInput, OptionKind};
use superhedge_core::paths::{PathLattice, PredictionMask, TailProxySpec};
use superhedge_core::payoffs::{make_payoff, PayoffSpec};
use superhedge_core::pricing::{primal_price, superhedge_puts, CouplingMode, PricingOptions, StrikeMenu};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mu = Marginal::from_pairs(&[(50.0, 0.2), (80.0, 0.3), (100.0, 0.3), (130.0, 0.2)])?;
    let strikes = [mu.grid().with_point(0.0)?];
    let market = MarketInput::from_marginals(100.0, OptionKind::Put, &[mu.clone()], &strikes)?;
    let factors = TailProxySpec::ladder_up_to(10.0, 1000.0);
    let lattice = Arc::new(PathLattice::from_marginals(100.0, &[mu], &factors, 1_000_000)?);
    let mask = PredictionMask::all_paths(lattice);
    let g = make_payoff(&PayoffSpec::Forward, 1)?;
    let opts = PricingOptions::default();
    let p = primal_price(&mask, &g, CouplingMode::Supermartingale, &opts)?.value;
    let v = superhedge_puts(&market, &mask, &g, &StrikeMenu::MassLevels, &opts)?.value;
    assert!((v - p - 10.0).abs() < 1e-6);
    println!("P = {p}, V = {v}, gap = {}", v - p);
    Ok(())
}
