//! Primal (model) prices, dual (superhedging) prices, the duality gap by three
//! routes, and arbitrage certificates.
//!
//! Every LP here is posed over probability weights on lattice paths. The
//! superhedging problem "cheapest semi-static portfolio dominating `G` on every
//! feasible path" is the LP dual of "largest `E[G]` over path measures that
//! reprice the traded options and have nonpositive conditional increments".
//! The measure form has one column per path and few rows, which suits the
//! dense simplex; the hedge is read off its multipliers:
//!
//! * row `sum q = 1` gives the cash position,
//! * row `sum q (S_i - K)^+ = c_i(K)` (or the put analogue) gives the static
//!   position in that option,
//! * row `sum_{paths through h} q (S_{j+1} - S_j) <= 0` gives `Delta_j(h) >= 0`
//!   (an equality row gives a free-signed `Delta`).
//!
//! Each recovered hedge is then evaluated on every feasible path and its cash
//! raised by any residual shortfall, so the reported value is the cost of a
//! portfolio verified to superhedge.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::lp::{check_solution, solve_lp, Diagnostics, LpError, LpProblem, LpSolution, LpStatus, Sense, SolverOptions};
use crate::marginals::{MarginalError, Marginal, MarketInput, OptionKind};
use crate::paths::{build_lattice, build_mask, PathError, PathLattice, PredicateSpec, PredictionMask, TailProxySpec, DEFAULT_PATH_CAP};
use crate::payoffs::{analytic_beta, modified_payoff_g_beta, numeric_beta, penalized_payoff, BetaFunctions, Payoff, PayoffError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PricingError {
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Payoff(#[from] PayoffError),
    #[error(transparent)]
    Marginal(#[from] MarginalError),
    #[error("LP solver failed: {0}")]
    Solver(#[from] LpError),
    #[error("payoff is {value} on path {path:?}")]
    NonFinitePayoff { path: Vec<f64>, value: f64 },
    #[error("no calibrated model is supported on the prediction set")]
    InfeasibleModel,
    #[error("option prices admit no supermartingale measure on the lattice; look for an arbitrage certificate")]
    InfeasibleInput,
    #[error("no finite superhedge exists on the lattice (payoff outgrows the instruments)")]
    UnboundedHedge,
    #[error("G_beta is not bounded above: {top} at the top proxy against {rest} elsewhere")]
    UnboundedGBeta { top: f64, rest: f64 },
    #[error("Farkas ray did not convert into a verified arbitrage (cost {cost}, worst payoff {worst})")]
    CertificateVerificationFailed { cost: f64, worst: f64 },
    #[error("lattice carries no marginal weights")]
    MissingMarginals,
    #[error("market curves are not all {0:?}")]
    KindMismatch(OptionKind),
    #[error("beta functions belong to a different lattice")]
    LatticeMismatch,
    #[error("negative beta {0}")]
    NegativeBeta(f64),
    #[error("unexpected solver outcome: {0}")]
    SolverBug(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    Supermartingale,
    Martingale,
    PlainCoupling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSign {
    NonNegative,
    Free,
}

/// Which strikes the static part may use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StrikeMenu {
    /// Mass levels of each maturity; calls also get strike 0.
    MassLevels,
    /// `strikes[i]` for maturity `i + 1`.
    Explicit { strikes: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingOptions {
    pub solver: SolverOptions,
    /// Pathwise tolerance for superhedge and certificate payoffs.
    pub feas_tol: f64,
    /// Largest certificate cost accepted as an arbitrage.
    pub cert_tol: f64,
}

impl Default for PricingOptions {
    fn default() -> Self {
        PricingOptions {
            solver: SolverOptions::default(),
            feas_tol: 1e-9,
            cert_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub rows: usize,
    pub columns: usize,
    pub iterations: usize,
    pub residuals: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingAtom {
    /// Level indices `(j_1..j_n)`.
    pub path: Vec<usize>,
    pub values: Vec<f64>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalResult {
    pub value: f64,
    pub mode: CouplingMode,
    /// Paths with positive probability.
    pub coupling: Vec<CouplingAtom>,
    pub diagnostics: SolveDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticPosition {
    pub kind: OptionKind,
    pub maturity: usize,
    pub strike: f64,
    pub quantity: f64,
    pub unit_price: f64,
}

impl StaticPosition {
    fn payoff(&self, s: f64) -> f64 {
        intrinsic(self.kind, self.strike, s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaNode {
    /// Number of observed prices after `s_0`.
    pub depth: usize,
    pub history: Vec<usize>,
    pub values: Vec<f64>,
    pub delta: f64,
}

/// Cash, static options and a history-dependent stock position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub cash: f64,
    pub statics: Vec<StaticPosition>,
    pub deltas: Vec<DeltaNode>,
    #[serde(skip)]
    delta_table: Vec<Vec<f64>>,
}

impl Strategy {
    /// `cash + sum quantity * price`.
    pub fn cost(&self) -> f64 {
        self.cash + self.statics.iter().map(|p| p.quantity * p.unit_price).sum::<f64>()
    }

    /// `Delta_depth` at the history formed by the first `depth` indices of `idx`.
    pub fn delta_at(&self, lattice: &PathLattice, depth: usize, idx: &[usize]) -> f64 {
        self.delta_table
            .get(depth)
            .and_then(|t| t.get(lattice.history_id(idx, depth)).copied())
            .unwrap_or(0.0)
    }

    /// Terminal value `X(S) + sum Delta_j (S_{j+1} - S_j)`.
    pub fn payoff(&self, lattice: &PathLattice, idx: &[usize], values: &[f64]) -> f64 {
        let statics: f64 = self.statics.iter().map(|p| p.quantity * p.payoff(values[p.maturity])).sum();
        let dynamic: f64 = (0..lattice.periods())
            .map(|d| self.delta_at(lattice, d, idx) * (values[d + 1] - values[d]))
            .sum();
        self.cash + statics + dynamic
    }

    fn scale(&mut self, f: f64) {
        self.cash *= f;
        for p in &mut self.statics {
            p.quantity *= f;
        }
        for d in &mut self.deltas {
            d.delta *= f;
        }
        for t in &mut self.delta_table {
            for v in t {
                *v *= f;
            }
        }
    }
}

/// Pathwise audit of a strategy against a payoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeCheck {
    pub paths_checked: usize,
    /// `min (Psi - G)` as returned by the LP.
    pub min_slack_before: f64,
    /// Cash added to close any shortfall.
    pub lift: f64,
    pub min_slack_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualResult {
    /// Cost of the verified superhedge.
    pub value: f64,
    /// LP optimum before verification.
    pub lp_value: f64,
    pub kind: OptionKind,
    pub delta_sign: DeltaSign,
    pub strategy: Strategy,
    pub strike_menu: Vec<Vec<f64>>,
    pub check: HedgeCheck,
    pub diagnostics: SolveDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageCertificate {
    pub strategy: Strategy,
    pub cost: f64,
    /// Minimum of the strategy payoff over feasible lattice paths.
    pub worst_payoff: f64,
    pub paths_checked: usize,
    pub lattice_levels: Vec<Vec<f64>>,
}

fn intrinsic(kind: OptionKind, strike: f64, s: f64) -> f64 {
    match kind {
        OptionKind::Call => (s - strike).max(0.0),
        OptionKind::Put => (strike - s).max(0.0),
    }
}

#[derive(Debug, Clone, Copy)]
struct Instrument {
    kind: OptionKind,
    maturity: usize,
    strike: f64,
    price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Increments {
    None,
    NonPositive,
    Zero,
}

struct MeasureSpec<'a> {
    mask: &'a PredictionMask,
    mass_only: bool,
    objective: Option<&'a Payoff>,
    sum_row: bool,
    instruments: &'a [Instrument],
    marginal_rows: bool,
    increments: Increments,
}

#[derive(Debug, Clone, Copy)]
enum RowRef {
    Eq(usize),
    Ub(usize),
}

struct MeasureLp {
    problem: LpProblem,
    paths: Vec<usize>,
    sum_row: Option<RowRef>,
    instrument_rows: Vec<Option<RowRef>>,
    /// `[depth][history id]`.
    history_rows: Vec<Vec<Option<RowRef>>>,
}

impl MeasureLp {
    fn dual(&self, sol: &[f64], r: Option<RowRef>) -> f64 {
        match r {
            Some(RowRef::Eq(k)) => sol[k],
            Some(RowRef::Ub(k)) => sol[self.problem.eq_rows.len() + k],
            None => 0.0,
        }
    }
}

struct RowBuf {
    eq: bool,
    rhs: f64,
    coeffs: Vec<(usize, f64)>,
    keep_if_empty: bool,
}

fn build_measure_lp(spec: &MeasureSpec<'_>) -> Result<MeasureLp, PricingError> {
    let lattice = spec.mask.lattice();
    let n = lattice.periods();
    let mut rows: Vec<RowBuf> = Vec::new();
    let push = |rows: &mut Vec<RowBuf>, eq, rhs, keep_if_empty| {
        rows.push(RowBuf {
            eq,
            rhs,
            coeffs: Vec::new(),
            keep_if_empty,
        });
        rows.len() - 1
    };

    let sum_row = spec.sum_row.then(|| push(&mut rows, true, 1.0, true));
    let instrument_rows: Vec<usize> = spec
        .instruments
        .iter()
        .map(|ins| push(&mut rows, true, ins.price, ins.price != 0.0))
        .collect();
    let mut marginal_offsets = Vec::new();
    if spec.marginal_rows {
        for i in 1..=n {
            let w = lattice.mass_weights(i).ok_or(PricingError::MissingMarginals)?;
            marginal_offsets.push(rows.len());
            for &wj in w {
                push(&mut rows, true, wj, true);
            }
        }
    }
    let mut history_map: Vec<Vec<usize>> = (0..n).map(|d| vec![usize::MAX; lattice.history_count(d)]).collect();

    let mut cost = Vec::new();
    let mut paths = Vec::new();
    let mut odo = if spec.mass_only { lattice.mass_odometer() } else { lattice.odometer() };
    while let Some((linear, idx, values)) = odo.next() {
        if !spec.mask.is_feasible(linear) {
            continue;
        }
        let g = match spec.objective {
            Some(p) => p.eval(values),
            None => 0.0,
        };
        if g == f64::NEG_INFINITY {
            continue;
        }
        if !g.is_finite() {
            return Err(PricingError::NonFinitePayoff {
                path: values.to_vec(),
                value: g,
            });
        }
        let col = cost.len();
        cost.push(g);
        paths.push(linear);
        if let Some(r) = sum_row {
            rows[r].coeffs.push((col, 1.0));
        }
        for (ins, &r) in spec.instruments.iter().zip(&instrument_rows) {
            let v = intrinsic(ins.kind, ins.strike, values[ins.maturity]);
            if v != 0.0 {
                rows[r].coeffs.push((col, v));
            }
        }
        if spec.marginal_rows {
            for i in 0..n {
                rows[marginal_offsets[i] + idx[i]].coeffs.push((col, 1.0));
            }
        }
        if spec.increments != Increments::None {
            for d in 0..n {
                let inc = values[d + 1] - values[d];
                if inc == 0.0 {
                    continue;
                }
                let h = lattice.history_id(idx, d);
                let slot = &mut history_map[d][h];
                if *slot == usize::MAX {
                    *slot = push(&mut rows, spec.increments == Increments::Zero, 0.0, false);
                }
                rows[*slot].coeffs.push((col, inc));
            }
        }
    }

    let mut problem = LpProblem::new(Sense::Maximize, cost);
    let mut refs: Vec<Option<RowRef>> = vec![None; rows.len()];
    for (k, r) in rows.into_iter().enumerate() {
        if r.coeffs.is_empty() && !r.keep_if_empty {
            continue;
        }
        refs[k] = Some(if r.eq {
            RowRef::Eq(problem.add_eq(r.coeffs, r.rhs))
        } else {
            RowRef::Ub(problem.add_ub(r.coeffs, r.rhs))
        });
    }
    Ok(MeasureLp {
        problem,
        paths,
        sum_row: sum_row.and_then(|r| refs[r]),
        instrument_rows: instrument_rows.iter().map(|&r| refs[r]).collect(),
        history_rows: history_map
            .iter()
            .map(|m| m.iter().map(|&r| if r == usize::MAX { None } else { refs[r] }).collect())
            .collect(),
    })
}

fn run(lp: &MeasureLp, opts: &PricingOptions) -> Result<(LpSolution, SolveDiagnostics), PricingError> {
    let sol = solve_lp(&lp.problem, &opts.solver)?;
    let diag = SolveDiagnostics {
        rows: lp.problem.num_rows(),
        columns: lp.problem.num_vars(),
        iterations: sol.iterations,
        residuals: if sol.is_optimal() {
            check_solution(&lp.problem, &sol)
        } else {
            Diagnostics {
                max_eq_residual: 0.0,
                max_ineq_violation: 0.0,
                max_bound_violation: 0.0,
                duality_mismatch: 0.0,
                max_dual_infeasibility: 0.0,
                max_complementarity: 0.0,
            }
        },
    };
    Ok((sol, diag))
}

/// `sup E[G]` over couplings of the lattice marginals supported on the mask.
pub fn primal_price(
    mask: &PredictionMask,
    payoff: &Payoff,
    mode: CouplingMode,
    opts: &PricingOptions,
) -> Result<PrimalResult, PricingError> {
    let increments = match mode {
        CouplingMode::Supermartingale => Increments::NonPositive,
        CouplingMode::Martingale => Increments::Zero,
        CouplingMode::PlainCoupling => Increments::None,
    };
    let lp = build_measure_lp(&MeasureSpec {
        mask,
        mass_only: true,
        objective: Some(payoff),
        sum_row: false,
        instruments: &[],
        marginal_rows: true,
        increments,
    })?;
    let (sol, diagnostics) = run(&lp, opts)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(PricingError::InfeasibleModel),
        LpStatus::Unbounded => return Err(PricingError::SolverBug("path-measure LP reported unbounded")),
    }
    let lattice = mask.lattice();
    let coupling = lp
        .paths
        .iter()
        .zip(&sol.x)
        .filter(|(_, q)| **q > 0.0)
        .map(|(&p, &q)| {
            let idx = lattice.decode(p).0;
            CouplingAtom {
                values: lattice.values(&idx),
                path: idx,
                probability: q,
            }
        })
        .collect();
    Ok(PrimalResult {
        value: sol.objective,
        mode,
        coupling,
        diagnostics,
    })
}

fn require_kind(market: &MarketInput, kind: OptionKind) -> Result<(), PricingError> {
    if market.kind() == Some(kind) {
        Ok(())
    } else {
        Err(PricingError::KindMismatch(kind))
    }
}

fn menu_strikes(lattice: &PathLattice, kind: OptionKind, menu: &StrikeMenu) -> Vec<Vec<f64>> {
    (1..=lattice.periods())
        .map(|i| match menu {
            StrikeMenu::Explicit { strikes } => strikes.get(i - 1).cloned().unwrap_or_default(),
            StrikeMenu::MassLevels => {
                let mut k: Vec<f64> = lattice.mass_levels(i).to_vec();
                match kind {
                    OptionKind::Call => {
                        if k.first() != Some(&0.0) {
                            k.insert(0, 0.0);
                        }
                    }
                    OptionKind::Put => k.retain(|x| *x > 0.0),
                }
                k
            }
        })
        .collect()
}

/// Cheapest semi-static superhedge of `payoff` on every feasible lattice path,
/// using calls at `{0} U mass levels` of each maturity.
pub fn superhedge_calls(
    market: &MarketInput,
    mask: &PredictionMask,
    payoff: &Payoff,
    delta_sign: DeltaSign,
    opts: &PricingOptions,
) -> Result<DualResult, PricingError> {
    require_kind(market, OptionKind::Call)?;
    superhedge(market, mask, payoff, OptionKind::Call, &StrikeMenu::MassLevels, delta_sign, opts)
}

/// Cheapest superhedge with puts from `menu` and `Delta >= 0`.
pub fn superhedge_puts(
    market: &MarketInput,
    mask: &PredictionMask,
    payoff: &Payoff,
    menu: &StrikeMenu,
    opts: &PricingOptions,
) -> Result<DualResult, PricingError> {
    require_kind(market, OptionKind::Put)?;
    superhedge(market, mask, payoff, OptionKind::Put, menu, DeltaSign::NonNegative, opts)
}

fn superhedge(
    market: &MarketInput,
    mask: &PredictionMask,
    payoff: &Payoff,
    kind: OptionKind,
    menu: &StrikeMenu,
    delta_sign: DeltaSign,
    opts: &PricingOptions,
) -> Result<DualResult, PricingError> {
    let lattice = mask.lattice().clone();
    payoff.verify_growth(&lattice)?;
    let strike_menu = menu_strikes(&lattice, kind, menu);
    let instruments: Vec<Instrument> = strike_menu
        .iter()
        .enumerate()
        .flat_map(|(i, ks)| {
            ks.iter().map(move |&k| Instrument {
                kind,
                maturity: i + 1,
                strike: k,
                price: market.price(i + 1, k),
            })
        })
        .collect();
    let lp = build_measure_lp(&MeasureSpec {
        mask,
        mass_only: false,
        objective: Some(payoff),
        sum_row: true,
        instruments: &instruments,
        marginal_rows: false,
        increments: match delta_sign {
            DeltaSign::NonNegative => Increments::NonPositive,
            DeltaSign::Free => Increments::Zero,
        },
    })?;
    let (sol, diagnostics) = run(&lp, opts)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(PricingError::InfeasibleInput),
        LpStatus::Unbounded => return Err(PricingError::UnboundedHedge),
    }
    let y = &sol.duals;
    let clamp = |d: f64| match delta_sign {
        DeltaSign::NonNegative => d.max(0.0),
        DeltaSign::Free => d,
    };
    let mut strategy = strategy_from_multipliers(&lattice, &lp, &instruments, |r| lp.dual(y, r), clamp);
    let check = verify_and_lift(&mut strategy, mask, |v| payoff.eval(v));
    Ok(DualResult {
        value: strategy.cost(),
        lp_value: sol.objective,
        kind,
        delta_sign,
        strategy,
        strike_menu,
        check,
        diagnostics,
    })
}

fn strategy_from_multipliers(
    lattice: &PathLattice,
    lp: &MeasureLp,
    instruments: &[Instrument],
    y: impl Fn(Option<RowRef>) -> f64,
    delta_map: impl Fn(f64) -> f64,
) -> Strategy {
    let statics = instruments
        .iter()
        .zip(&lp.instrument_rows)
        .map(|(ins, r)| StaticPosition {
            kind: ins.kind,
            maturity: ins.maturity,
            strike: ins.strike,
            quantity: y(*r),
            unit_price: ins.price,
        })
        .collect();
    let mut deltas = Vec::new();
    let mut delta_table = Vec::new();
    for (d, rows) in lp.history_rows.iter().enumerate() {
        let mut table = vec![0.0; rows.len()];
        for (h, r) in rows.iter().enumerate() {
            if r.is_none() {
                continue;
            }
            let delta = delta_map(y(*r));
            table[h] = delta;
            let history = lattice.decode_history(d, h);
            deltas.push(DeltaNode {
                depth: d,
                values: lattice.values(&history),
                history,
                delta,
            });
        }
        delta_table.push(table);
    }
    Strategy {
        cash: y(lp.sum_row),
        statics,
        deltas,
        delta_table,
    }
}

/// Evaluate `Psi - target` on every feasible path and raise cash by any shortfall.
fn verify_and_lift(strategy: &mut Strategy, mask: &PredictionMask, target: impl Fn(&[f64]) -> f64) -> HedgeCheck {
    let lattice = mask.lattice();
    let slack = |s: &Strategy| {
        let mut min = f64::INFINITY;
        let mut count = 0;
        let mut odo = lattice.odometer();
        while let Some((linear, idx, values)) = odo.next() {
            if !mask.is_feasible(linear) {
                continue;
            }
            let g = target(values);
            if g == f64::NEG_INFINITY {
                continue;
            }
            count += 1;
            min = min.min(s.payoff(lattice, idx, values) - g);
        }
        (min, count)
    };
    let (before, paths_checked) = slack(strategy);
    let lift = if before < 0.0 { -before } else { 0.0 };
    strategy.cash += lift;
    let (after, _) = slack(strategy);
    HedgeCheck {
        paths_checked,
        min_slack_before: before,
        lift,
        min_slack_after: after,
    }
}

/// Calibration LP over a lattice whose levels are the quoted strikes (plus
/// proxies). Infeasibility yields a Farkas ray, converted into a strategy with
/// negative cost and nonnegative payoff on every feasible path.
pub fn arbitrage_certificate(
    market: &MarketInput,
    predicate: &PredicateSpec,
    proxies: &TailProxySpec,
    opts: &PricingOptions,
) -> Result<Option<ArbitrageCertificate>, PricingError> {
    let strikes = market.strike_union();
    let levels = vec![strikes.points().to_vec(); market.periods()];
    let lattice = Arc::new(PathLattice::from_levels(market.spot, levels, &proxies.factors(), DEFAULT_PATH_CAP)?);
    let mask = build_mask(lattice.clone(), predicate.clone())?;
    // Every maturity trades at every quoted strike of any maturity, priced by
    // its curve's interpolation; the condition checkers compare curves on the
    // same strike set.
    let instruments: Vec<Instrument> = market
        .curves
        .iter()
        .flat_map(|c| {
            strikes.points().iter().map(move |&k| Instrument {
                kind: c.kind,
                maturity: c.maturity,
                strike: k,
                price: c.price_at(k),
            })
        })
        .collect();
    let lp = build_measure_lp(&MeasureSpec {
        mask: &mask,
        mass_only: false,
        objective: None,
        sum_row: true,
        instruments: &instruments,
        marginal_rows: false,
        increments: Increments::NonPositive,
    })?;
    let (sol, _) = run(&lp, opts)?;
    let ray = match sol.status {
        LpStatus::Optimal => return Ok(None),
        LpStatus::Unbounded => return Err(PricingError::SolverBug("zero-objective LP reported unbounded")),
        LpStatus::Infeasible => sol.farkas_ray.ok_or(PricingError::SolverBug("infeasible without a ray"))?,
    };
    // Ray: y'A <= 0 on every path, y_ub <= 0, y'b > 0. Negating gives a
    // payoff >= 0 with cost -y'b < 0 and Delta = -y_ub >= 0.
    let mut strategy = strategy_from_multipliers(&lattice, &lp, &instruments, |r| -lp.dual(&ray, r), |d| d.max(0.0));
    let size = strategy
        .statics
        .iter()
        .map(|p| p.quantity.abs())
        .chain(strategy.deltas.iter().map(|d| d.delta.abs()))
        .chain([strategy.cash.abs()])
        .fold(0.0, f64::max);
    if size > 0.0 {
        strategy.scale(1.0 / size);
    }
    let check = verify_and_lift(&mut strategy, &mask, |_| 0.0);
    let cost = strategy.cost();
    let worst = check.min_slack_after;
    if !(cost <= -opts.cert_tol && worst >= -opts.feas_tol) {
        return Err(PricingError::CertificateVerificationFailed { cost, worst });
    }
    Ok(Some(ArbitrageCertificate {
        strategy,
        cost,
        worst_payoff: worst,
        paths_checked: check.paths_checked,
        lattice_levels: (1..=lattice.periods()).map(|i| lattice.levels(i).to_vec()).collect(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRoute {
    pub value: f64,
    /// Largest `G_beta` over feasible lattice paths.
    pub g_beta_max: f64,
    pub approximate: bool,
    pub primal: PrimalResult,
}

/// `V = P(G_beta)` once `G_beta` is checked to stay bounded at the proxies.
pub fn gap_via_beta(
    mask: &PredictionMask,
    payoff: &Payoff,
    beta: &BetaFunctions,
    opts: &PricingOptions,
) -> Result<BetaRoute, PricingError> {
    let lattice = mask.lattice();
    if **beta.lattice() != **lattice {
        return Err(PricingError::LatticeMismatch);
    }
    let min = beta.min_value();
    if min < 0.0 {
        return Err(PricingError::NegativeBeta(min));
    }
    let g_beta = modified_payoff_g_beta(payoff, beta);
    let g_beta_max = check_g_beta_bounded(mask, &g_beta)?;
    let primal = primal_price(mask, &g_beta, CouplingMode::Supermartingale, opts)?;
    Ok(BetaRoute {
        value: primal.value,
        g_beta_max,
        approximate: beta.approximate,
        primal,
    })
}

/// A linearly growing `G_beta` shows up as larger values on paths through the
/// top proxy than anywhere else.
fn check_g_beta_bounded(mask: &PredictionMask, g_beta: &Payoff) -> Result<f64, PricingError> {
    let lattice = mask.lattice();
    let n = lattice.periods();
    let tops: Vec<usize> = (1..=n).map(|i| lattice.levels(i).len() - 1).collect();
    let has_proxies = !lattice.proxies().is_empty();
    let (mut top, mut rest) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut odo = lattice.odometer();
    while let Some((linear, idx, values)) = odo.next() {
        if !mask.is_feasible(linear) {
            continue;
        }
        let g = g_beta.eval(values);
        if has_proxies && idx.iter().zip(&tops).any(|(j, t)| j == t) {
            top = top.max(g);
        } else {
            rest = rest.max(g);
        }
    }
    if top > rest + 1e-6 * (1.0 + rest.abs()) {
        return Err(PricingError::UnboundedGBeta { top, rest });
    }
    Ok(top.max(rest))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPoint {
    pub n: f64,
    /// Put superhedge of `G^(N)` over all lattice paths.
    pub dual: f64,
    /// `sup E[G^(N)]` over supermartingale couplings on all mass paths.
    pub primal: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRoute {
    pub points: Vec<GammaPoint>,
    /// `inf_N` of the dual values.
    pub dual_inf: f64,
}

/// Penalised problems without a prediction set: `G^(N) = G - N (1 + sum s_i)`
/// off the mask, priced on every lattice path.
pub fn gap_asymptotic(
    market: &MarketInput,
    mask: &PredictionMask,
    payoff: &Payoff,
    schedule: &[f64],
    menu: &StrikeMenu,
    opts: &PricingOptions,
) -> Result<GammaRoute, PricingError> {
    let all = PredictionMask::all_paths(mask.lattice().clone());
    let mut points = Vec::with_capacity(schedule.len());
    for &n in schedule {
        let g = penalized_payoff(payoff, n, mask);
        let dual = superhedge_puts(market, &all, &g, menu, opts)?.value;
        let primal = primal_price(&all, &g, CouplingMode::Supermartingale, opts)?.value;
        points.push(GammaPoint {
            n,
            dual,
            primal,
            gamma: dual - primal,
        });
    }
    let dual_inf = points.iter().map(|p| p.dual).fold(f64::INFINITY, f64::min);
    Ok(GammaRoute { points, dual_inf })
}

/// Extract marginals from `market`, build the lattice and the mask.
pub fn prepare(
    market: &MarketInput,
    predicate: &PredicateSpec,
    proxies: &TailProxySpec,
    extraction_tol: f64,
) -> Result<(Vec<Marginal>, PredictionMask), PricingError> {
    let marginals = market.extract_marginals(extraction_tol)?;
    let lattice = Arc::new(build_lattice(market.spot, &marginals, proxies)?);
    let mask = build_mask(lattice, predicate.clone())?;
    Ok((marginals, mask))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSource {
    Analytic,
    Numeric,
    /// Analytic when the payoff has a closed form, numeric otherwise.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub direct: bool,
    pub beta: Option<BetaSource>,
    pub gamma_schedule: Option<Vec<f64>>,
    pub delta_sign: DeltaSign,
    pub strike_menu: StrikeMenu,
    pub mode: CouplingMode,
    pub pricing: PricingOptions,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            direct: true,
            beta: None,
            gamma_schedule: None,
            delta_sign: DeltaSign::NonNegative,
            strike_menu: StrikeMenu::MassLevels,
            mode: CouplingMode::Supermartingale,
            pricing: PricingOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeInfo {
    pub periods: usize,
    pub mass_levels: Vec<usize>,
    pub proxies: Vec<f64>,
    pub paths: usize,
    pub feasible_paths: usize,
    pub prediction_set: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub kind: OptionKind,
    pub payoff: String,
    pub primal: f64,
    pub dual: Option<f64>,
    pub gap: Option<f64>,
    pub weak_duality_holds: Option<bool>,
    pub gap_via_beta: Option<f64>,
    pub beta_value: Option<f64>,
    pub beta_approximate: Option<bool>,
    pub gamma: Option<GammaRoute>,
    pub means: Vec<f64>,
    pub forward: f64,
    /// `s_0 - m_i` per maturity.
    pub bubbles: Vec<f64>,
    pub lattice: LatticeInfo,
    pub primal_result: PrimalResult,
    pub dual_result: Option<DualResult>,
}

/// Run the primal and the requested dual routes on one problem.
pub fn duality_report(
    market: &MarketInput,
    mask: &PredictionMask,
    payoff: &Payoff,
    options: &ReportOptions,
) -> Result<DualityReport, PricingError> {
    let kind = market.kind().ok_or(PricingError::KindMismatch(OptionKind::Call))?;
    let lattice = mask.lattice();
    let opts = &options.pricing;
    let primal_result = primal_price(mask, payoff, options.mode, opts)?;
    let primal = primal_result.value;

    let dual_result = if options.direct {
        Some(match kind {
            OptionKind::Call => superhedge_calls(market, mask, payoff, options.delta_sign, opts)?,
            OptionKind::Put => superhedge_puts(market, mask, payoff, &options.strike_menu, opts)?,
        })
    } else {
        None
    };
    let dual = dual_result.as_ref().map(|d| d.value);

    let mut beta_value = None;
    let mut beta_approximate = None;
    if let Some(source) = options.beta {
        let beta = match source {
            BetaSource::Analytic => analytic_beta(payoff, lattice.clone())?,
            BetaSource::Numeric => numeric_beta(payoff, mask)?,
            BetaSource::Auto => match analytic_beta(payoff, lattice.clone()) {
                Ok(b) => b,
                Err(PayoffError::NoAnalyticBeta(_)) => numeric_beta(payoff, mask)?,
                Err(e) => return Err(e.into()),
            },
        };
        let route = gap_via_beta(mask, payoff, &beta, opts)?;
        beta_value = Some(route.value);
        beta_approximate = Some(route.approximate);
    }

    let gamma = match (&options.gamma_schedule, kind) {
        (Some(schedule), OptionKind::Put) => Some(gap_asymptotic(market, mask, payoff, schedule, &options.strike_menu, opts)?),
        _ => None,
    };

    let means: Vec<f64> = (1..=lattice.periods())
        .map(|i| {
            let w = lattice.mass_weights(i).unwrap_or(&[]);
            lattice.mass_levels(i).iter().zip(w).map(|(x, p)| x * p).sum()
        })
        .collect();
    let s0 = lattice.s0();
    Ok(DualityReport {
        kind,
        payoff: String::from(payoff.name()),
        primal,
        dual,
        gap: dual.map(|v| v - primal),
        weak_duality_holds: dual.map(|v| v >= primal - 1e-7 * (1.0 + primal.abs())),
        gap_via_beta: beta_value.map(|v| v - primal),
        beta_value,
        beta_approximate,
        gamma,
        forward: means.last().copied().unwrap_or(s0),
        bubbles: means.iter().map(|m| s0 - m).collect(),
        means,
        lattice: LatticeInfo {
            periods: lattice.periods(),
            mass_levels: (1..=lattice.periods()).map(|i| lattice.mass_count(i)).collect(),
            proxies: lattice.proxies().to_vec(),
            paths: lattice.path_count(),
            feasible_paths: mask.feasible_count(),
            prediction_set: mask.describe(),
        },
        primal_result,
        dual_result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginals::Grid;
    use crate::payoffs::{make_payoff, PayoffSpec};

    fn m(pairs: &[(f64, f64)]) -> Marginal {
        Marginal::from_pairs(pairs).unwrap()
    }

    fn setup(
        s0: f64,
        marginals: &[Marginal],
        kind: OptionKind,
        proxies: TailProxySpec,
        predicate: PredicateSpec,
    ) -> (MarketInput, PredictionMask) {
        let strikes: Vec<Grid> = marginals
            .iter()
            .map(|mu| mu.grid().with_point(0.0).unwrap())
            .collect();
        let market = MarketInput::from_marginals(s0, kind, marginals, &strikes).unwrap();
        let lattice = Arc::new(build_lattice(s0, marginals, &proxies).unwrap());
        (market, build_mask(lattice, predicate).unwrap())
    }

    fn opts() -> PricingOptions {
        PricingOptions::default()
    }

    #[test]
    fn one_period_primal_is_the_marginal_expectation() {
        let mu = m(&[(60.0, 0.3), (90.0, 0.4), (120.0, 0.3)]);
        let (_, mask) = setup(100.0, core::slice::from_ref(&mu), OptionKind::Call, TailProxySpec::none(), PredicateSpec::AllPaths);
        let g = make_payoff(&PayoffSpec::EuropeanCall { strike: 80.0, maturity: None }, 1).unwrap();
        let p = primal_price(&mask, &g, CouplingMode::Supermartingale, &opts()).unwrap();
        assert!((p.value - mu.expect(|x| (x - 80.0).max(0.0))).abs() < 1e-9);
    }

    #[test]
    fn forced_coupling_value() {
        let mus = [m(&[(100.0, 1.0)]), m(&[(50.0, 0.5), (150.0, 0.5)])];
        let (_, mask) = setup(100.0, &mus, OptionKind::Call, TailProxySpec::none(), PredicateSpec::AllPaths);
        let g = Payoff::custom("abs", 2, 2.0, |p| (p[2] - p[1]).abs());
        let sup = primal_price(&mask, &g, CouplingMode::Supermartingale, &opts()).unwrap();
        let mart = primal_price(&mask, &g, CouplingMode::Martingale, &opts()).unwrap();
        assert!((sup.value - 50.0).abs() < 1e-9);
        assert!((mart.value - 50.0).abs() < 1e-9);
        assert_eq!(sup.coupling.len(), 2);
    }

    #[test]
    fn order_violation_is_infeasible() {
        let mus = [m(&[(50.0, 0.5), (150.0, 0.5)]), m(&[(100.0, 1.0)])];
        let (_, mask) = setup(100.0, &mus, OptionKind::Call, TailProxySpec::none(), PredicateSpec::AllPaths);
        let g = make_payoff(&PayoffSpec::Forward, 2).unwrap();
        let err = primal_price(&mask, &g, CouplingMode::Supermartingale, &opts()).unwrap_err();
        assert_eq!(err, PricingError::InfeasibleModel);
        assert!(primal_price(&mask, &g, CouplingMode::PlainCoupling, &opts()).is_ok());
    }

    #[test]
    fn traded_call_is_its_own_hedge() {
        let mu = m(&[(60.0, 0.3), (90.0, 0.4), (120.0, 0.3)]);
        let (market, mask) = setup(100.0, &[mu], OptionKind::Call, TailProxySpec::default(), PredicateSpec::AllPaths);
        let g = make_payoff(&PayoffSpec::EuropeanCall { strike: 90.0, maturity: None }, 1).unwrap();
        let d = superhedge_calls(&market, &mask, &g, DeltaSign::NonNegative, &opts()).unwrap();
        assert!((d.value - market.price(1, 90.0)).abs() < 1e-7, "{} vs {}", d.value, market.price(1, 90.0));
        assert!(d.check.min_slack_after >= 0.0);
    }

    #[test]
    fn forward_is_the_zero_strike_call() {
        let mus = [m(&[(80.0, 0.5), (110.0, 0.5)]), m(&[(60.0, 0.5), (120.0, 0.5)])];
        let (market, mask) = setup(100.0, &mus, OptionKind::Call, TailProxySpec::default(), PredicateSpec::AllPaths);
        let g = make_payoff(&PayoffSpec::Forward, 2).unwrap();
        let d = superhedge_calls(&market, &mask, &g, DeltaSign::NonNegative, &opts()).unwrap();
        assert!((d.value - market.price(2, 0.0)).abs() < 1e-7);
    }

    #[test]
    fn call_duality_for_asian() {
        let mus = [m(&[(80.0, 0.5), (110.0, 0.5)]), m(&[(60.0, 0.25), (90.0, 0.5), (130.0, 0.25)])];
        let (market, mask) = setup(100.0, &mus, OptionKind::Call, TailProxySpec::default(), PredicateSpec::AllPaths);
        let g = make_payoff(&PayoffSpec::Asian { strike: 90.0 }, 2).unwrap();
        let p = primal_price(&mask, &g, CouplingMode::Supermartingale, &opts()).unwrap();
        let d = superhedge_calls(&market, &mask, &g, DeltaSign::NonNegative, &opts()).unwrap();
        assert!((d.value - p.value).abs() < 1e-7, "V {} P {}", d.value, p.value);
    }

    #[test]
    fn put_forward_gap_grows_with_proxies() {
        let mu = m(&[(60.0, 0.5), (120.0, 0.5)]);
        let g = make_payoff(&PayoffSpec::Forward, 1).unwrap();
        let mut last = f64::NEG_INFINITY;
        for count in 1..=3 {
            let spec = TailProxySpec {
                count,
                growth_factor: 10.0,
            };
            let (market, mask) = setup(100.0, core::slice::from_ref(&mu), OptionKind::Put, spec, PredicateSpec::AllPaths);
            let d = superhedge_puts(&market, &mask, &g, &StrikeMenu::MassLevels, &opts()).unwrap();
            let p = primal_price(&mask, &g, CouplingMode::Supermartingale, &opts()).unwrap();
            assert!((p.value - 90.0).abs() < 1e-9);
            assert!(d.value >= last - 1e-9);
            last = d.value;
        }
        assert!((last - 100.0).abs() < 1e-3 * 100.0, "V = {last}");
    }

    #[test]
    fn bounded_put_payoff_has_no_gap() {
        let mus = [m(&[(80.0, 0.5), (110.0, 0.5)]), m(&[(60.0, 0.25), (90.0, 0.5), (130.0, 0.25)])];
        let (market, mask) = setup(100.0, &mus, OptionKind::Put, TailProxySpec::default(), PredicateSpec::AllPaths);
        let g = make_payoff(&PayoffSpec::EuropeanPut { strike: 95.0, maturity: None }, 2).unwrap();
        let p = primal_price(&mask, &g, CouplingMode::Supermartingale, &opts()).unwrap();
        let d = superhedge_puts(&market, &mask, &g, &StrikeMenu::MassLevels, &opts()).unwrap();
        assert!((d.value - p.value).abs() < 1e-7, "V {} P {}", d.value, p.value);
    }

    #[test]
    fn consistent_market_has_no_certificate() {
        let mus = [m(&[(80.0, 0.5), (110.0, 0.5)]), m(&[(60.0, 0.25), (90.0, 0.5), (130.0, 0.25)])];
        let (market, _) = setup(100.0, &mus, OptionKind::Put, TailProxySpec::none(), PredicateSpec::AllPaths);
        let cert = arbitrage_certificate(&market, &PredicateSpec::AllPaths, &TailProxySpec::default(), &opts()).unwrap();
        assert!(cert.is_none());
    }

    #[test]
    fn overpriced_zero_strike_call_is_an_arbitrage() {
        let strikes = Grid::new(vec![0.0, 100.0, 200.0]).unwrap();
        let curve = crate::marginals::PriceCurve::new(OptionKind::Call, 1, strikes, vec![105.0, 5.0, 0.0]).unwrap();
        let market = MarketInput::new(100.0, vec![curve]).unwrap();
        let cert = arbitrage_certificate(&market, &PredicateSpec::AllPaths, &TailProxySpec::default(), &opts())
            .unwrap()
            .expect("certificate");
        assert!(cert.cost <= -1e-6);
        assert!(cert.worst_payoff >= -1e-9);
    }

    #[test]
    fn report_fields() {
        let mu = m(&[(60.0, 0.5), (120.0, 0.5)]);
        let (market, mask) = setup(100.0, &[mu], OptionKind::Put, TailProxySpec::default(), PredicateSpec::AllPaths);
        let g = make_payoff(&PayoffSpec::Forward, 1).unwrap();
        let options = ReportOptions {
            beta: Some(BetaSource::Analytic),
            ..Default::default()
        };
        let r = duality_report(&market, &mask, &g, &options).unwrap();
        assert!((r.bubbles[0] - 10.0).abs() < 1e-12);
        assert!((r.gap.unwrap() - 10.0).abs() < 0.1);
        assert!((r.gap_via_beta.unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(r.weak_duality_holds, Some(true));
    }
}
