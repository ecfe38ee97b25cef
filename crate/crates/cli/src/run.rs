//! One problem end to end: market, calibration checks, lattice, pricing routes.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use superhedge_core::marginals::{
    call_curve_from_marginal, check_call_conditions, check_put_conditions, check_supermartingale_order,
    put_curve_from_marginal, ConditionReport, Grid, Marginal, MarketInput, OptionKind, OrderReport, PriceCurve,
};
use superhedge_core::paths::{build_mask, PathLattice};
use superhedge_core::payoffs::{make_payoff, Payoff, PayoffSpec, TableFallback, TableRow};
use superhedge_core::pricing::{
    arbitrage_certificate, duality_report, ArbitrageCertificate, DualityReport, PricingError, ReportOptions,
};

use crate::config::{invalid, ConfigError, MarginalSource, ProblemConfig};
use crate::parametric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Arbitrage,
    IllPosed,
    SolverFailure,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Arbitrage => 2,
            Status::IllPosed => 3,
            Status::SolverFailure => 4,
        }
    }
}

/// Means of the extracted laws and the bubble they imply.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub spot: f64,
    pub means: Vec<f64>,
    /// `m_n`.
    pub forward: f64,
    /// `s_0 > m_i` per maturity.
    pub bubble: Vec<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub checks_s: f64,
    pub pricing_s: f64,
    pub total_s: f64,
}

/// Everything a run produced. Numbers come from an Optimal solve or a checker;
/// only `timings` varies between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config_sha256: String,
    pub status: Status,
    pub exit_code: u8,
    pub message: Option<String>,
    pub seed: Option<u64>,
    pub provenance: Option<Provenance>,
    pub conditions: Option<ConditionReport>,
    pub order: Option<OrderReport>,
    pub duality: Option<DualityReport>,
    pub certificate: Option<ArbitrageCertificate>,
    pub timings: Timings,
}

impl RunReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report fields are TOML-representable")
    }
}

pub fn config_hash(raw: &str) -> String {
    hex::encode(Sha256::digest(raw.as_bytes()))
}

struct Failure {
    status: Status,
    message: String,
}

impl Failure {
    fn ill_posed(message: impl ToString) -> Self {
        Failure {
            status: Status::IllPosed,
            message: message.to_string(),
        }
    }

    fn from_pricing(e: PricingError) -> Self {
        let status = match e {
            PricingError::Solver(_) | PricingError::SolverBug(_) | PricingError::CertificateVerificationFailed { .. } => {
                Status::SolverFailure
            }
            _ => Status::IllPosed,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

/// Quoted curves for every maturity, in the configured instrument.
pub fn build_market(cfg: &ProblemConfig) -> Result<MarketInput, ConfigError> {
    let mut curves = Vec::with_capacity(cfg.marginal.len());
    for (k, entry) in cfg.marginal.iter().enumerate() {
        let field = |name: &str| format!("marginal[{k}].{name}");
        let curve = match &entry.source {
            MarginalSource::CallCurve { strikes, prices } | MarginalSource::PutCurve { strikes, prices } => {
                let grid = Grid::from_unsorted(strikes.clone()).map_err(|e| invalid(field("strikes"), e.to_string()))?;
                if grid.len() != strikes.len() {
                    return Err(invalid(field("strikes"), "repeated strike"));
                }
                // Prices follow their strikes through the sort.
                let mut order: Vec<usize> = (0..strikes.len()).collect();
                order.sort_by(|&a, &b| strikes[a].total_cmp(&strikes[b]));
                let sorted = order.iter().map(|&j| prices[j]).collect();
                PriceCurve::new(cfg.instrument, entry.maturity, grid, sorted)
                    .map_err(|e| invalid(field("prices"), e.to_string()))?
            }
            source => {
                let law = source_law(source).map_err(|e| invalid(field("source"), e))?;
                let strikes = law.grid().with_point(0.0).map_err(|e| invalid(field("levels"), e.to_string()))?;
                let mut curve = match cfg.instrument {
                    OptionKind::Call => call_curve_from_marginal(&law, &strikes),
                    OptionKind::Put => put_curve_from_marginal(&law, &strikes),
                };
                curve.maturity = entry.maturity;
                curve
            }
        };
        curves.push(curve);
    }
    MarketInput::new(cfg.spot, curves).map_err(|e| invalid("marginal", e.to_string()))
}

fn source_law(source: &MarginalSource) -> Result<Marginal, String> {
    let law = match source {
        MarginalSource::Pmf { levels, weights } => {
            let pairs: Vec<(f64, f64)> = levels.iter().copied().zip(weights.iter().copied()).collect();
            Marginal::from_pairs(&pairs)
        }
        MarginalSource::Parametric {
            mean,
            log_variance,
            grid_size,
            truncation,
            ..
        } => parametric::lognormal(*mean, *log_variance, *grid_size, *truncation),
        MarginalSource::CallCurve { .. } | MarginalSource::PutCurve { .. } => unreachable!("curves are quoted directly"),
    };
    law.map(|m| m.compact()).map_err(|e| e.to_string())
}

fn build_payoff(cfg: &ProblemConfig, lattice: &PathLattice) -> Result<Payoff, Failure> {
    let spec = match (&cfg.payoff, &cfg.random_payoff) {
        (Some(spec), _) => spec.clone(),
        (None, Some(r)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap_or(0));
            let mut rows = Vec::new();
            let mut odo = lattice.mass_odometer();
            while let Some((_, _, values)) = odo.next() {
                rows.push(TableRow {
                    path: values[1..].to_vec(),
                    value: rng.gen_range(r.lo..=r.hi),
                });
            }
            PayoffSpec::Table {
                rows,
                fallback: TableFallback::ScaledSum { scale: r.fallback_scale },
            }
        }
        (None, None) => return Err(Failure::ill_posed("no payoff configured")),
    };
    make_payoff(&spec, cfg.periods).map_err(Failure::ill_posed)
}

/// Run `cfg` and collect the report; never panics on bad input.
pub fn evaluate(cfg: &ProblemConfig, config_sha256: String) -> RunReport {
    let started = Instant::now();
    let mut report = RunReport {
        config_sha256,
        status: Status::Ok,
        exit_code: 0,
        message: None,
        seed: cfg.seed,
        provenance: None,
        conditions: None,
        order: None,
        duality: None,
        certificate: None,
        timings: Timings::default(),
    };
    if let Err(f) = pipeline(cfg, &mut report) {
        log::info!("run ended with {:?}: {}", f.status, f.message);
        report.status = f.status;
        report.exit_code = f.status.exit_code();
        report.message = Some(f.message);
    }
    report.timings.total_s = started.elapsed().as_secs_f64();
    report
}

fn pipeline(cfg: &ProblemConfig, report: &mut RunReport) -> Result<(), Failure> {
    let checks = Instant::now();
    let market = build_market(cfg).map_err(Failure::ill_posed)?;
    let tols = cfg.solver.conditions();
    let conditions = match cfg.instrument {
        OptionKind::Call => check_call_conditions(&market, &tols),
        OptionKind::Put => check_put_conditions(&market, &tols),
    }
    .map_err(Failure::ill_posed)?;
    let holds = conditions.holds;
    report.conditions = Some(conditions);
    if !holds {
        return Err(arbitrage(cfg, &market, report, "quoted curves violate the calibration conditions"));
    }
    let marginals: Vec<Marginal> = match market.extract_marginals(cfg.solver.extraction_tol) {
        Ok(m) => m.iter().map(Marginal::compact).collect(),
        Err(e) => return Err(arbitrage(cfg, &market, report, &e.to_string())),
    };
    let means: Vec<f64> = marginals.iter().map(Marginal::mean).collect();
    report.provenance = Some(Provenance {
        spot: cfg.spot,
        forward: *means.last().expect("at least one maturity"),
        bubble: means.iter().map(|m| cfg.spot - m > cfg.solver.order_tol).collect(),
        means,
    });
    let order = check_supermartingale_order(&marginals, cfg.spot, cfg.solver.order_tol);
    let holds = order.holds;
    report.order = Some(order);
    if !holds {
        return Err(arbitrage(cfg, &market, report, "marginals are not in decreasing convex order"));
    }
    log::debug!("checks passed, means {:?}", report.provenance.as_ref().map(|p| &p.means));
    report.timings.checks_s = checks.elapsed().as_secs_f64();

    let pricing = Instant::now();
    let lattice = PathLattice::from_marginals(cfg.spot, &marginals, &cfg.proxies.factors(), cfg.solver.path_cap)
        .map_err(Failure::ill_posed)?;
    let payoff = build_payoff(cfg, &lattice)?;
    let mask = build_mask(Arc::new(lattice), cfg.prediction_set.clone()).map_err(Failure::ill_posed)?;
    log::info!(
        "lattice: {} paths, {} feasible under {}",
        mask.lattice().path_count(),
        mask.feasible_count(),
        mask.describe()
    );
    // Both gap routes describe put markets; with calls there is no gap to find.
    let puts = cfg.instrument == OptionKind::Put;
    if !puts && (cfg.routes.beta.is_some() || cfg.routes.gamma_schedule.is_some()) {
        log::warn!("the beta and gamma_N routes need a put market; skipped");
    }
    let options = ReportOptions {
        direct: cfg.routes.direct,
        beta: cfg.routes.beta.filter(|_| puts),
        gamma_schedule: cfg.routes.gamma_schedule.clone(),
        delta_sign: cfg.solver.delta_sign,
        strike_menu: cfg.strike_menu.clone(),
        mode: cfg.solver.coupling,
        pricing: cfg.solver.pricing(),
    };
    let result = duality_report(&market, &mask, &payoff, &options);
    report.timings.pricing_s = pricing.elapsed().as_secs_f64();
    match result {
        Ok(d) => {
            log::info!("P = {}, V = {:?}, gap = {:?}", d.primal, d.dual, d.gap);
            report.duality = Some(d);
            Ok(())
        }
        Err(PricingError::InfeasibleInput) => {
            Err(arbitrage(cfg, &market, report, "quoted prices admit no supermartingale measure on the lattice"))
        }
        Err(e) => Err(Failure::from_pricing(e)),
    }
}

fn arbitrage(cfg: &ProblemConfig, market: &MarketInput, report: &mut RunReport, reason: &str) -> Failure {
    match arbitrage_certificate(market, &cfg.prediction_set, &cfg.proxies.spec(), &cfg.solver.pricing()) {
        Ok(Some(cert)) => {
            report.certificate = Some(cert);
            Failure {
                status: Status::Arbitrage,
                message: format!("{reason}; strong arbitrage certificate attached"),
            }
        }
        Ok(None) => Failure::ill_posed(format!(
            "{reason}, yet the quoted strikes admit a calibrated model, so there is no arbitrage to certify"
        )),
        Err(e) => Failure::from_pricing(e),
    }
}
