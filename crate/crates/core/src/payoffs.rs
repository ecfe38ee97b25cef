//! Payoff catalog, the asymptotic slopes `beta_i` that any put-based
//! superhedge must hold in the underlying, the modified payoff `G_beta` and the
//! penalised payoffs `G^(N)`.
//!
//! Payoffs take the full path `(s_0, s_1, ..., s_n)`.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::paths::{PathLattice, PredicateSpec, PredictionMask};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PayoffError {
    #[error("unknown or malformed payoff spec: {0}")]
    UnknownSpec(String),
    #[error("payoff {0} has no closed-form beta")]
    NoAnalyticBeta(String),
    #[error("numeric beta needs at least one tail proxy level")]
    NoTailProxies,
    #[error("payoff {name} exceeds its growth bound {bound} on path {path:?} (value {value})")]
    GrowthBoundViolated {
        name: String,
        bound: f64,
        path: Vec<f64>,
        value: f64,
    },
    #[error("beta functions were built on a different lattice")]
    LatticeMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasketTerm {
    pub weight: f64,
    pub payoff: PayoffSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    /// `(s_1, ..., s_n)`.
    pub path: Vec<f64>,
    pub value: f64,
}

/// Value of a table payoff on paths missing from the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TableFallback {
    Constant { value: f64 },
    /// `scale * (s_1 + ... + s_n)`.
    ScaledSum { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PayoffSpec {
    /// `(mean(s_1..s_n) - K)^+`.
    Asian { strike: f64 },
    /// `(max_{0<=i<=n} s_i - K)^+ 1{min_{0<=i<=n} s_i <= B}`.
    LookbackKnockIn { strike: f64, barrier: f64 },
    /// `s_n`.
    Forward,
    /// `(s_m - K)^+`, `m` defaults to the last period.
    EuropeanCall {
        strike: f64,
        #[serde(default)]
        maturity: Option<usize>,
    },
    /// `(K - s_m)^+`.
    EuropeanPut {
        strike: f64,
        #[serde(default)]
        maturity: Option<usize>,
    },
    Basket { components: Vec<BasketTerm> },
    /// `min(G, cap)`.
    Capped { payoff: Box<PayoffSpec>, cap: f64 },
    Table { rows: Vec<TableRow>, fallback: TableFallback },
}

type CustomFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Spec(Compiled),
    Custom(CustomFn),
    Penalized {
        inner: Arc<Payoff>,
        n: f64,
        predicate: PredicateSpec,
    },
    Modified {
        inner: Arc<Payoff>,
        beta: Arc<BetaFunctions>,
    },
}

/// Spec with table rows sorted for lookup and maturities resolved.
#[derive(Clone)]
enum Compiled {
    Asian(f64),
    Lookback(f64, f64),
    Forward,
    Call(usize, f64),
    Put(usize, f64),
    Basket(Vec<(f64, Compiled)>),
    Capped(Box<Compiled>, f64),
    Table(Vec<(Vec<f64>, f64)>, TableFallback),
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

impl Compiled {
    fn eval(&self, p: &[f64]) -> f64 {
        let n = p.len() - 1;
        match self {
            Compiled::Asian(k) => (p[1..].iter().sum::<f64>() / n as f64 - k).max(0.0),
            Compiled::Lookback(k, b) => {
                let (lo, hi) = p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
                if lo <= *b {
                    (hi - k).max(0.0)
                } else {
                    0.0
                }
            }
            Compiled::Forward => p[n],
            Compiled::Call(m, k) => (p[*m] - k).max(0.0),
            Compiled::Put(m, k) => (k - p[*m]).max(0.0),
            Compiled::Basket(terms) => terms.iter().map(|(w, c)| w * c.eval(p)).sum(),
            Compiled::Capped(inner, cap) => inner.eval(p).min(*cap),
            Compiled::Table(rows, fallback) => match rows.binary_search_by(|r| lex(&r.0, &p[1..])) {
                Ok(j) => rows[j].1,
                Err(_) => match fallback {
                    TableFallback::Constant { value } => *value,
                    TableFallback::ScaledSum { scale } => scale * p[1..].iter().sum::<f64>(),
                },
            },
        }
    }

    /// Growth constant on a lattice started at `s0`. The lookback's running
    /// maximum includes `s0`, so its constant is `max(1, s0)`; the declared
    /// bound takes `s0 = 0`.
    fn growth_bound(&self, s0: f64) -> f64 {
        match self {
            Compiled::Asian(_) | Compiled::Forward | Compiled::Call(..) => 1.0,
            Compiled::Lookback(..) => s0.max(1.0),
            Compiled::Put(_, k) => k.max(0.0),
            Compiled::Basket(terms) => terms.iter().map(|(w, c)| w.abs() * c.growth_bound(s0)).sum(),
            Compiled::Capped(inner, cap) => inner.growth_bound(s0).min(cap.max(0.0)),
            Compiled::Table(rows, fallback) => {
                let fb = match fallback {
                    TableFallback::Constant { value } => value.max(0.0),
                    TableFallback::ScaledSum { scale } => scale.max(0.0),
                };
                rows.iter()
                    .map(|(p, v)| v / (1.0 + p.iter().sum::<f64>()))
                    .fold(fb, f64::max)
            }
        }
    }

    /// Closed-form `beta_i` at a history `(s_0..s_i)` for an `n`-period claim.
    fn beta(&self, n: usize, i: usize, hist: &[f64]) -> Option<f64> {
        match self {
            Compiled::Asian(_) => Some((n - i) as f64 / n as f64),
            Compiled::Lookback(_, b) => {
                let knocked = hist.iter().any(|s| s <= b);
                Some((n - 1 - i) as f64 + if knocked { 1.0 } else { 0.0 })
            }
            Compiled::Forward => Some(1.0),
            Compiled::Call(m, _) => Some(if i < *m { 1.0 } else { 0.0 }),
            Compiled::Put(..) => Some(0.0),
            Compiled::Basket(terms) => {
                let mut total = 0.0;
                for (w, c) in terms {
                    if *w < 0.0 || matches!(c, Compiled::Lookback(..) | Compiled::Basket(_)) {
                        return None;
                    }
                    total += w * c.beta(n, i, hist)?;
                }
                Some(total)
            }
            Compiled::Capped(_, cap) if cap.is_finite() => Some(0.0),
            Compiled::Capped(..) => None,
            Compiled::Table(_, TableFallback::Constant { .. }) => Some(0.0),
            Compiled::Table(_, TableFallback::ScaledSum { scale }) => Some(scale.max(0.0) * (n - i) as f64),
        }
    }
}

fn compile(spec: &PayoffSpec, n: usize) -> Result<Compiled, PayoffError> {
    let maturity = |m: &Option<usize>| match m {
        None => Ok(n),
        Some(m) if (1..=n).contains(m) => Ok(*m),
        Some(m) => Err(PayoffError::UnknownSpec(format!("maturity {m} outside 1..={n}"))),
    };
    let finite = |x: f64, what: &str| {
        if x.is_finite() {
            Ok(x)
        } else {
            Err(PayoffError::UnknownSpec(format!("non-finite {what}")))
        }
    };
    Ok(match spec {
        PayoffSpec::Asian { strike } => Compiled::Asian(finite(*strike, "strike")?),
        PayoffSpec::LookbackKnockIn { strike, barrier } => {
            Compiled::Lookback(finite(*strike, "strike")?, finite(*barrier, "barrier")?)
        }
        PayoffSpec::Forward => Compiled::Forward,
        PayoffSpec::EuropeanCall { strike, maturity: m } => Compiled::Call(maturity(m)?, finite(*strike, "strike")?),
        PayoffSpec::EuropeanPut { strike, maturity: m } => Compiled::Put(maturity(m)?, finite(*strike, "strike")?),
        PayoffSpec::Basket { components } => {
            if components.is_empty() {
                return Err(PayoffError::UnknownSpec(String::from("empty basket")));
            }
            let terms = components
                .iter()
                .map(|t| Ok((finite(t.weight, "basket weight")?, compile(&t.payoff, n)?)))
                .collect::<Result<Vec<_>, PayoffError>>()?;
            Compiled::Basket(terms)
        }
        PayoffSpec::Capped { payoff, cap } => {
            if cap.is_nan() {
                return Err(PayoffError::UnknownSpec(String::from("NaN cap")));
            }
            Compiled::Capped(Box::new(compile(payoff, n)?), *cap)
        }
        PayoffSpec::Table { rows, fallback } => {
            let mut sorted = Vec::with_capacity(rows.len());
            for r in rows {
                if r.path.len() != n || r.path.iter().chain([&r.value]).any(|x| !x.is_finite()) {
                    return Err(PayoffError::UnknownSpec(format!("table row {:?} is not a finite {n}-period path", r.path)));
                }
                sorted.push((r.path.clone(), r.value));
            }
            sorted.sort_by(|a, b| lex(&a.0, &b.0));
            if sorted.windows(2).any(|w| lex(&w[0].0, &w[1].0) == Ordering::Equal) {
                return Err(PayoffError::UnknownSpec(String::from("duplicate table path")));
            }
            Compiled::Table(sorted, *fallback)
        }
    })
}

/// A claim `G` on `n`-period paths with its declared linear growth bound.
#[derive(Clone)]
pub struct Payoff {
    name: String,
    periods: usize,
    growth_bound: f64,
    spec: Option<PayoffSpec>,
    kind: Kind,
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Payoff")
            .field("name", &self.name)
            .field("periods", &self.periods)
            .field("growth_bound", &self.growth_bound)
            .finish()
    }
}

pub fn make_payoff(spec: &PayoffSpec, periods: usize) -> Result<Payoff, PayoffError> {
    let compiled = compile(spec, periods)?;
    Ok(Payoff {
        name: spec_name(spec),
        periods,
        growth_bound: compiled.growth_bound(0.0),
        spec: Some(spec.clone()),
        kind: Kind::Spec(compiled),
    })
}

fn spec_name(spec: &PayoffSpec) -> String {
    match spec {
        PayoffSpec::Asian { strike } => format!("asian({strike})"),
        PayoffSpec::LookbackKnockIn { strike, barrier } => format!("lookback_knock_in({strike}, {barrier})"),
        PayoffSpec::Forward => String::from("forward"),
        PayoffSpec::EuropeanCall { strike, maturity } => match maturity {
            Some(m) => format!("european_call({strike}, S_{m})"),
            None => format!("european_call({strike})"),
        },
        PayoffSpec::EuropeanPut { strike, maturity } => match maturity {
            Some(m) => format!("european_put({strike}, S_{m})"),
            None => format!("european_put({strike})"),
        },
        PayoffSpec::Basket { components } => format!("basket({} terms)", components.len()),
        PayoffSpec::Capped { payoff, cap } => format!("min({}, {cap})", spec_name(payoff)),
        PayoffSpec::Table { rows, .. } => format!("table({} rows)", rows.len()),
    }
}

impl Payoff {
    /// Arbitrary evaluator with a declared growth bound; check it with
    /// [`Payoff::verify_growth`] before pricing.
    pub fn custom<F>(name: &str, periods: usize, growth_bound: f64, f: F) -> Payoff
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Payoff {
            name: String::from(name),
            periods,
            growth_bound,
            spec: None,
            kind: Kind::Custom(Arc::new(f)),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn growth_bound(&self) -> f64 {
        self.growth_bound
    }

    pub fn spec(&self) -> Option<&PayoffSpec> {
        self.spec.as_ref()
    }

    /// `G(s_0, ..., s_n)`; may be `-inf`.
    pub fn eval(&self, path: &[f64]) -> f64 {
        match &self.kind {
            Kind::Spec(c) => c.eval(path),
            Kind::Custom(f) => f(path),
            Kind::Penalized { inner, n, predicate } => {
                let g = inner.eval(path);
                if *n == 0.0 || predicate.holds(path) {
                    g
                } else {
                    g - n * (1.0 + path[1..].iter().sum::<f64>())
                }
            }
            Kind::Modified { inner, beta } => inner.eval(path) - beta.hedge_gain(path),
        }
    }

    /// Check `G <= K (1 + s_1 + ... + s_n)` on every lattice path.
    pub fn verify_growth(&self, lattice: &PathLattice) -> Result<(), PayoffError> {
        let k = self.compiled().map_or(self.growth_bound, |c| c.growth_bound(lattice.s0()));
        let mut odo = lattice.odometer();
        while let Some((_, _, values)) = odo.next() {
            let g = self.eval(values);
            let scale = 1.0 + values[1..].iter().sum::<f64>();
            if g.is_nan() || g > k * scale * (1.0 + 1e-12) + 1e-12 {
                return Err(PayoffError::GrowthBoundViolated {
                    name: self.name.clone(),
                    bound: k,
                    path: values.to_vec(),
                    value: g,
                });
            }
        }
        Ok(())
    }

    fn compiled(&self) -> Option<&Compiled> {
        match &self.kind {
            Kind::Spec(c) => Some(c),
            _ => None,
        }
    }
}

/// `beta_i` on every lattice history of depth `i < n`; `beta_n = 0` is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaFunctions {
    lattice: Arc<PathLattice>,
    /// `values[i][history_id]`.
    values: Vec<Vec<f64>>,
    /// Built from tail proxies rather than a closed form.
    pub approximate: bool,
}

impl BetaFunctions {
    pub fn zero(lattice: Arc<PathLattice>) -> Self {
        let values = (0..lattice.periods()).map(|i| vec![0.0; lattice.history_count(i)]).collect();
        BetaFunctions {
            lattice,
            values,
            approximate: false,
        }
    }

    /// Tabulate `f(i, (s_0..s_i))` on every history.
    pub fn from_fn<F: Fn(usize, &[f64]) -> f64>(lattice: Arc<PathLattice>, f: F) -> Self {
        let mut values = Vec::with_capacity(lattice.periods());
        for i in 0..lattice.periods() {
            let row = (0..lattice.history_count(i))
                .map(|id| f(i, &lattice.values(&lattice.decode_history(i, id))))
                .collect();
            values.push(row);
        }
        BetaFunctions {
            lattice,
            values,
            approximate: false,
        }
    }

    pub fn lattice(&self) -> &Arc<PathLattice> {
        &self.lattice
    }

    /// `beta_i` at the history given by the first `i` level indices of `idx`.
    pub fn at(&self, i: usize, idx: &[usize]) -> f64 {
        self.values[i][self.lattice.history_id(idx, i)]
    }

    pub fn table(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    /// `beta_0 (s_1 - s_0) + sum_i beta_i(s_1..s_i)(s_{i+1} - s_i)`; NaN off the lattice.
    pub fn hedge_gain(&self, path: &[f64]) -> f64 {
        let Some(idx) = self.lattice.locate_path(path) else {
            return f64::NAN;
        };
        (0..self.lattice.periods())
            .map(|i| self.at(i, &idx) * (path[i + 1] - path[i]))
            .sum()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn analytic_beta(payoff: &Payoff, lattice: Arc<PathLattice>) -> Result<BetaFunctions, PayoffError> {
    let missing = || PayoffError::NoAnalyticBeta(payoff.name.clone());
    let c = payoff.compiled().ok_or_else(missing)?;
    let n = lattice.periods();
    c.beta(n, 0, &[lattice.s0()]).ok_or_else(missing)?;
    Ok(BetaFunctions::from_fn(lattice, |i, h| c.beta(n, i, h).unwrap_or(f64::NAN)))
}

/// Backward recursion for `beta_i` with the `x -> infinity` limit replaced by
/// the secant slope of `G` between the two highest levels of period `i + 1`
/// and the sup over later coordinates taken over mask-feasible mass levels.
///
/// A plain ratio `G / x_top` would also pick up the earlier coordinates that
/// sit at proxy levels, which the limit in the recursion does not see.
pub fn numeric_beta(payoff: &Payoff, mask: &PredictionMask) -> Result<BetaFunctions, PayoffError> {
    let lattice = mask.lattice().clone();
    if lattice.proxies().is_empty() {
        return Err(PayoffError::NoTailProxies);
    }
    let n = lattice.periods();
    let mut beta = BetaFunctions::zero(lattice.clone());
    beta.approximate = true;
    let mut idx = vec![0usize; n];
    for i in (0..n).rev() {
        let top = lattice.levels(i + 1).len() - 1;
        let x_top = lattice.levels(i + 1)[top];
        let x_ref = lattice.levels(i + 1)[top - 1];
        let conts: usize = ((i + 2)..=n).map(|k| lattice.mass_count(k)).product();
        for h in 0..lattice.history_count(i) {
            idx[..i].copy_from_slice(&lattice.decode_history(i, h));
            idx[i] = top;
            let next = if i + 1 < n { beta.at(i + 1, &idx) } else { 0.0 };
            let mut best = 0.0_f64;
            for c in 0..conts {
                let mut rest = c;
                for k in (i + 1..n).rev() {
                    let r = lattice.mass_count(k + 1);
                    idx[k] = rest % r;
                    rest /= r;
                }
                idx[i] = top;
                if !mask.is_feasible(lattice.encode(&idx)) {
                    continue;
                }
                let mut path = lattice.values(&idx);
                let g_top = payoff.eval(&path);
                path[i + 1] = x_ref;
                let g_ref = payoff.eval(&path);
                let slope = (g_top - g_ref) / (x_top - x_ref);
                best = best.max(next + slope);
            }
            beta.values[i][h] = best;
        }
    }
    Ok(beta)
}

/// `G_beta = G - beta_0 (S_1 - s_0) - sum beta_i (S_{i+1} - S_i)`; growth bound
/// recomputed on the lattice of `beta`.
pub fn modified_payoff_g_beta(payoff: &Payoff, beta: &BetaFunctions) -> Payoff {
    let mut out = Payoff {
        name: format!("{}_beta", payoff.name),
        periods: payoff.periods,
        growth_bound: 0.0,
        spec: None,
        kind: Kind::Modified {
            inner: Arc::new(payoff.clone()),
            beta: Arc::new(beta.clone()),
        },
    };
    let mut bound = 0.0_f64;
    let mut odo = beta.lattice.odometer();
    while let Some((_, _, values)) = odo.next() {
        let g = out.eval(values);
        bound = bound.max(g / (1.0 + values[1..].iter().sum::<f64>()));
    }
    out.growth_bound = bound;
    out
}

/// `G - N (1 + s_1 + ... + s_n) 1{path outside the prediction set}`.
pub fn penalized_payoff(payoff: &Payoff, n: f64, mask: &PredictionMask) -> Payoff {
    Payoff {
        name: format!("{}_pen({n})", payoff.name),
        periods: payoff.periods,
        growth_bound: payoff.growth_bound,
        spec: None,
        kind: Kind::Penalized {
            inner: Arc::new(payoff.clone()),
            n,
            predicate: mask.predicate().clone(),
        },
    }
}
