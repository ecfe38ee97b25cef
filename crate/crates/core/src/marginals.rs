//! Option price curves, the discrete laws they encode, and the no-arbitrage
//! condition checkers for call and put markets.
//!
//! Curves are treated as piecewise linear in strike between quoted points.
//! Outside the quoted range they are extended the only way consistent with a
//! law on the nonnegative half-line and no mass outside the quotes:
//!
//! * calls: slope `-1` below the first strike, flat beyond the last;
//! * puts: zero below zero, linear from the origin up to the first strike,
//!   slope `1` beyond the last.
//!
//! With that convention second differences of the curve on any grid that
//! contains the strikes are exactly the point masses of the encoded law, and
//! pricing a law back onto its support grid inverts the extraction.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Absolute tolerance of `Marginal` mass normalisation.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MarginalError {
    #[error("grid must be nonempty, finite, nonnegative and strictly increasing")]
    InvalidGrid,
    #[error("weights must be nonnegative, aligned with the grid and sum to one (sum = {0})")]
    InvalidWeights(f64),
    #[error("curve of maturity {0} has {1} prices for {2} strikes")]
    CurveShape(usize, usize, usize),
    #[error("non-finite price in curve of maturity {0}")]
    NonFinitePrice(usize),
    #[error("expected {expected} curves, maturity {maturity} is {problem}")]
    MaturityLayout {
        expected: usize,
        maturity: usize,
        problem: &'static str,
    },
    #[error("market mixes call and put curves")]
    MixedKind,
    #[error("spot must be positive and finite")]
    InvalidSpot,
    #[error("negative mass {mass} at strike {strike} (maturity {maturity})")]
    NegativeMass { maturity: usize, strike: f64, mass: f64 },
    #[error("extraction grid does not contain strike {0}")]
    GridMissingStrike(f64),
    #[error("put curve of maturity {0} prices strike {1} above zero; quote strike 0 so mass at the origin is representable")]
    ZeroStrikeRequired(usize, f64),
}

/// Strictly increasing list of nonnegative price levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid(Vec<f64>);

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self, MarginalError> {
        let ok = !points.is_empty()
            && points.iter().all(|p| p.is_finite())
            && points[0] >= 0.0
            && points.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(Grid(points))
        } else {
            Err(MarginalError::InvalidGrid)
        }
    }

    /// Sorts and deduplicates before validating.
    pub fn from_unsorted(mut points: Vec<f64>) -> Result<Self, MarginalError> {
        points.sort_by(f64::total_cmp);
        points.dedup();
        Grid::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }

    pub fn last(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn contains(&self, x: f64) -> bool {
        self.position(x).is_some()
    }

    pub fn position(&self, x: f64) -> Option<usize> {
        self.0.binary_search_by(|p| p.total_cmp(&x)).ok()
    }

    pub fn union(&self, other: &Grid) -> Grid {
        let mut pts = self.0.clone();
        pts.extend_from_slice(&other.0);
        Grid::from_unsorted(pts).expect("union of valid grids is valid")
    }

    pub fn with_point(&self, x: f64) -> Result<Grid, MarginalError> {
        let mut pts = self.0.clone();
        pts.push(x);
        Grid::from_unsorted(pts)
    }
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = MarginalError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Grid::new(v)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(g: Grid) -> Self {
        g.0
    }
}

/// A probability mass function on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    grid: Grid,
    weights: Vec<f64>,
}

impl Marginal {
    pub fn new(grid: Grid, weights: Vec<f64>) -> Result<Self, MarginalError> {
        let total: f64 = weights.iter().sum();
        if weights.len() != grid.len()
            || weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || (total - 1.0).abs() > MASS_TOL
        {
            return Err(MarginalError::InvalidWeights(total));
        }
        Ok(Marginal { grid, weights })
    }

    /// Build from `(level, mass)` pairs in any order; repeated levels are merged.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, MarginalError> {
        let grid = Grid::from_unsorted(pairs.iter().map(|p| p.0).collect())?;
        let mut weights = alloc::vec![0.0; grid.len()];
        for &(x, w) in pairs {
            let j = grid.position(x).expect("level was inserted");
            weights[j] += w;
        }
        Marginal::new(grid, weights)
    }

    pub fn dirac(x: f64) -> Result<Self, MarginalError> {
        Marginal::from_pairs(&[(x, 1.0)])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Levels carrying strictly positive mass, increasing.
    pub fn support(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.grid
            .points()
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .filter(|(_, w)| *w > 0.0)
    }

    /// Same law with zero-mass grid points removed.
    pub fn compact(&self) -> Marginal {
        let (pts, ws): (Vec<f64>, Vec<f64>) = self.support().unzip();
        Marginal {
            grid: Grid(pts),
            weights: ws,
        }
    }

    pub fn mean(&self) -> f64 {
        mean(self)
    }

    /// `E[min(X, k)]`.
    pub fn expect_min(&self, k: f64) -> f64 {
        self.support().map(|(x, w)| x.min(k) * w).sum()
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.support().map(|(x, w)| f(x) * w).sum()
    }

    pub fn top(&self) -> f64 {
        self.support().last().map(|p| p.0).unwrap_or(0.0)
    }
}

/// Exact dot product of levels and masses.
pub fn mean(m: &Marginal) -> f64 {
    m.grid.points().iter().zip(&m.weights).map(|(x, w)| x * w).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

/// Quoted prices of one maturity's calls or puts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceCurve {
    pub kind: OptionKind,
    /// 1-based maturity index.
    pub maturity: usize,
    pub strikes: Grid,
    pub prices: Vec<f64>,
}

impl PriceCurve {
    pub fn new(kind: OptionKind, maturity: usize, strikes: Grid, prices: Vec<f64>) -> Result<Self, MarginalError> {
        if prices.len() != strikes.len() {
            return Err(MarginalError::CurveShape(maturity, prices.len(), strikes.len()));
        }
        if prices.iter().any(|p| !p.is_finite()) {
            return Err(MarginalError::NonFinitePrice(maturity));
        }
        Ok(PriceCurve {
            kind,
            maturity,
            strikes,
            prices,
        })
    }

    /// Price at any nonnegative strike under the piecewise-linear extension.
    pub fn price_at(&self, k: f64) -> f64 {
        let ks = self.strikes.points();
        let ps = &self.prices;
        let last = ks.len() - 1;
        if k <= ks[0] {
            return match self.kind {
                OptionKind::Call => ps[0] + (ks[0] - k),
                OptionKind::Put if ks[0] > 0.0 => ps[0] * (k.max(0.0) / ks[0]),
                OptionKind::Put => ps[0],
            };
        }
        if k >= ks[last] {
            return match self.kind {
                OptionKind::Call => ps[last],
                OptionKind::Put => ps[last] + (k - ks[last]),
            };
        }
        let j = ks.partition_point(|x| *x <= k) - 1;
        if ks[j] == k {
            return ps[j];
        }
        let t = (k - ks[j]) / (ks[j + 1] - ks[j]);
        ps[j] + t * (ps[j + 1] - ps[j])
    }

    /// Right derivative at zero.
    pub fn slope_at_zero(&self) -> f64 {
        let ks = self.strikes.points();
        if ks[0] > 0.0 {
            return match self.kind {
                OptionKind::Call => -1.0,
                OptionKind::Put => self.prices[0] / ks[0],
            };
        }
        if ks.len() == 1 {
            return match self.kind {
                OptionKind::Call => 0.0,
                OptionKind::Put => 1.0,
            };
        }
        (self.prices[1] - self.prices[0]) / (ks[1] - ks[0])
    }

    fn slopes(&self) -> Vec<(f64, f64, f64)> {
        let ks = self.strikes.points();
        ks.windows(2)
            .zip(self.prices.windows(2))
            .map(|(k, p)| (k[0], k[1], (p[1] - p[0]) / (k[1] - k[0])))
            .collect()
    }
}

/// Spot plus one curve per maturity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketInput {
    pub spot: f64,
    /// Sorted by maturity, `curves[i].maturity == i + 1`.
    pub curves: Vec<PriceCurve>,
}

impl MarketInput {
    pub fn new(spot: f64, mut curves: Vec<PriceCurve>) -> Result<Self, MarginalError> {
        if !(spot.is_finite() && spot > 0.0) {
            return Err(MarginalError::InvalidSpot);
        }
        curves.sort_by_key(|c| c.maturity);
        let expected = curves.len();
        for (i, c) in curves.iter().enumerate() {
            if c.maturity != i + 1 {
                let problem = if c.maturity == 0 || c.maturity > expected {
                    "out of range"
                } else {
                    "duplicated or missing"
                };
                return Err(MarginalError::MaturityLayout {
                    expected,
                    maturity: c.maturity,
                    problem,
                });
            }
        }
        Ok(MarketInput { spot, curves })
    }

    pub fn periods(&self) -> usize {
        self.curves.len()
    }

    /// Shared kind, or `None` when curves mix calls and puts.
    pub fn kind(&self) -> Option<OptionKind> {
        let k = self.curves.first()?.kind;
        self.curves.iter().all(|c| c.kind == k).then_some(k)
    }

    /// Union of all quoted strikes.
    pub fn strike_union(&self) -> Grid {
        let pts = self.curves.iter().flat_map(|c| c.strikes.points().iter().copied()).collect();
        Grid::from_unsorted(pts).expect("curves carry valid grids")
    }

    /// Price of the maturity-`i` (1-based) instrument at strike `k`.
    pub fn price(&self, maturity: usize, k: f64) -> f64 {
        self.curves[maturity - 1].price_at(k)
    }

    /// Extract every maturity's law on its own strike grid.
    pub fn extract_marginals(&self, tol: f64) -> Result<Vec<Marginal>, MarginalError> {
        self.curves
            .iter()
            .map(|c| match c.kind {
                OptionKind::Call => marginal_from_call_curve(c, &c.strikes, tol),
                OptionKind::Put => {
                    let grid = if c.strikes.first() > 0.0 { c.strikes.with_point(0.0)? } else { c.strikes.clone() };
                    marginal_from_put_curve(c, &grid, tol)
                }
            })
            .collect()
    }

    /// Market whose curves are exact prices of the given laws, quoted on `strikes[i]`.
    pub fn from_marginals(
        spot: f64,
        kind: OptionKind,
        marginals: &[Marginal],
        strikes: &[Grid],
    ) -> Result<Self, MarginalError> {
        let curves = marginals
            .iter()
            .zip(strikes)
            .enumerate()
            .map(|(i, (m, k))| {
                let mut c = match kind {
                    OptionKind::Call => call_curve_from_marginal(m, k),
                    OptionKind::Put => put_curve_from_marginal(m, k),
                };
                c.maturity = i + 1;
                c
            })
            .collect();
        MarketInput::new(spot, curves)
    }
}

/// Tolerances used by the condition checkers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionTolerances {
    pub tol: f64,
    /// Largest call price at the top strike (put price at zero) treated as zero.
    pub decay_tol: f64,
}

impl Default for ConditionTolerances {
    fn default() -> Self {
        ConditionTolerances {
            tol: 1e-9,
            decay_tol: 1e-9,
        }
    }
}

/// First violation found for a clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// Maturities involved (one, or a consecutive pair).
    pub maturities: Vec<usize>,
    pub strikes: Vec<f64>,
    pub magnitude: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseVerdict {
    pub clause: String,
    pub holds: bool,
    pub witness: Option<Witness>,
}

impl ClauseVerdict {
    fn new(clause: &str, witness: Option<Witness>) -> Self {
        ClauseVerdict {
            clause: String::from(clause),
            holds: witness.is_none(),
            witness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub kind: OptionKind,
    pub clauses: Vec<ClauseVerdict>,
    pub holds: bool,
}

impl ConditionReport {
    fn from_clauses(kind: OptionKind, clauses: Vec<ClauseVerdict>) -> Self {
        let holds = clauses.iter().all(|c| c.holds);
        ConditionReport { kind, clauses, holds }
    }

    pub fn clause(&self, index: usize) -> &ClauseVerdict {
        &self.clauses[index]
    }
}

fn witness(maturities: &[usize], strikes: &[f64], magnitude: f64, detail: String) -> Option<Witness> {
    Some(Witness {
        maturities: maturities.to_vec(),
        strikes: strikes.to_vec(),
        magnitude,
        detail,
    })
}

fn require_kind(input: &MarketInput, kind: OptionKind) -> Result<(), MarginalError> {
    if input.curves.iter().all(|c| c.kind == kind) {
        Ok(())
    } else {
        Err(MarginalError::MixedKind)
    }
}

/// Shape checks shared by both kinds: nonnegativity, convexity and monotone
/// direction (`sign = -1` for decreasing calls, `+1` for increasing puts).
fn shape_clause(input: &MarketInput, sign: f64, tol: f64) -> Option<Witness> {
    for c in &input.curves {
        let ks = c.strikes.points();
        for (k, p) in ks.iter().zip(&c.prices) {
            if *p < -tol {
                return witness(&[c.maturity], &[*k], -p, format!("negative price {p}"));
            }
        }
        let slopes = c.slopes();
        for &(k0, k1, s) in &slopes {
            if sign * s < -tol {
                let what = if sign < 0.0 { "increasing" } else { "decreasing" };
                return witness(&[c.maturity], &[k0, k1], s.abs(), format!("curve {what} with slope {s}"));
            }
        }
        for w in slopes.windows(2) {
            let jump = w[1].2 - w[0].2;
            if jump < -tol {
                return witness(&[c.maturity], &[w[0].1], -jump, format!("convexity violated by slope drop {jump}"));
            }
        }
    }
    None
}

pub fn check_call_conditions(input: &MarketInput, tols: &ConditionTolerances) -> Result<ConditionReport, MarginalError> {
    require_kind(input, OptionKind::Call)?;
    let tol = tols.tol;
    let curves = &input.curves;

    let c1 = shape_clause(input, -1.0, tol);

    let mut c2 = None;
    let mut prev = (0usize, input.spot);
    for c in curves {
        let c0 = c.price_at(0.0);
        if c0 > prev.1 + tol {
            c2 = witness(&[prev.0, c.maturity], &[0.0], c0 - prev.1, format!("c_{}(0) = {c0} exceeds {}", c.maturity, prev.1));
            break;
        }
        prev = (c.maturity, c0);
    }
    if c2.is_none() {
        if let Some(last) = curves.last() {
            let cn = last.price_at(0.0);
            if cn < -tol {
                c2 = witness(&[last.maturity], &[0.0], -cn, format!("c_{}(0) negative", last.maturity));
            }
        }
    }
    if c2.is_none() {
        for c in curves {
            let s = c.slope_at_zero();
            if s < -1.0 - tol {
                c2 = witness(&[c.maturity], &[0.0], -1.0 - s, format!("right slope at zero {s} below -1"));
                break;
            }
        }
    }

    let mut c3 = None;
    for c in curves {
        let k = c.strikes.last();
        let p = c.price_at(k);
        if p > tols.decay_tol {
            c3 = witness(&[c.maturity], &[k], p, format!("call price {p} at the top strike does not decay"));
            break;
        }
    }

    let strikes = input.strike_union();
    let mut c4 = None;
    'outer: for pair in curves.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let (a0, b0) = (a.price_at(0.0), b.price_at(0.0));
        for &k in strikes.points() {
            let da = a0 - a.price_at(k);
            let db = b0 - b.price_at(k);
            if db > da + tol {
                c4 = witness(&[a.maturity, b.maturity], &[k], db - da, format!("c(0) - c({k}) increases from {da} to {db}"));
                break 'outer;
            }
        }
    }

    Ok(ConditionReport::from_clauses(
        OptionKind::Call,
        alloc::vec![
            ClauseVerdict::new("(i) nonnegative, convex, decreasing", c1),
            ClauseVerdict::new("(ii) spot >= c_1(0) >= ... >= c_n(0) >= 0 and c'(0+) >= -1", c2),
            ClauseVerdict::new("(iii) c_i(K) -> 0 as K -> infinity", c3),
            ClauseVerdict::new("(iv) c_i(0) - c_i(x) nonincreasing in i", c4),
        ],
    ))
}

/// `lim (x - p(x))` under the slope-one extension beyond the top strike.
pub fn put_forward(curve: &PriceCurve) -> f64 {
    let k = curve.strikes.last();
    k - curve.price_at(k)
}

pub fn check_put_conditions(input: &MarketInput, tols: &ConditionTolerances) -> Result<ConditionReport, MarginalError> {
    require_kind(input, OptionKind::Put)?;
    let tol = tols.tol;
    let curves = &input.curves;

    let c1 = shape_clause(input, 1.0, tol);

    let mut c2 = None;
    let mut prev = (0usize, input.spot);
    for c in curves {
        let f = put_forward(c);
        if f > prev.1 + tol {
            c2 = witness(&[prev.0, c.maturity], &[c.strikes.last()], f - prev.1, format!("implied forward {f} of maturity {} exceeds {}", c.maturity, prev.1));
            break;
        }
        prev = (c.maturity, f);
    }
    if c2.is_none() {
        if let Some(last) = curves.last() {
            let f = put_forward(last);
            if f < -tol {
                c2 = witness(&[last.maturity], &[last.strikes.last()], -f, format!("implied forward {f} negative"));
            }
        }
    }
    if c2.is_none() {
        for c in curves {
            let s = c.slope_at_zero();
            if !(-tol..=1.0 + tol).contains(&s) {
                let mag = if s < 0.0 { -s } else { s - 1.0 };
                c2 = witness(&[c.maturity], &[0.0], mag, format!("right slope at zero {s} outside [0, 1]"));
                break;
            }
        }
    }

    let mut c3 = None;
    for c in curves {
        let p0 = c.price_at(0.0);
        if p0 > tols.decay_tol {
            c3 = witness(&[c.maturity], &[0.0], p0, format!("put price {p0} at zero strike"));
            break;
        }
    }

    let strikes = input.strike_union();
    let mut c4 = None;
    'outer: for pair in curves.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        for &k in strikes.points() {
            let (pa, pb) = (a.price_at(k), b.price_at(k));
            if pb < pa - tol {
                c4 = witness(&[a.maturity, b.maturity], &[k], pa - pb, format!("p_{}({k}) = {pb} below p_{}({k}) = {pa}", b.maturity, a.maturity));
                break 'outer;
            }
        }
    }

    Ok(ConditionReport::from_clauses(
        OptionKind::Put,
        alloc::vec![
            ClauseVerdict::new("(i) nonnegative, convex, increasing", c1),
            ClauseVerdict::new("(ii) spot >= lim(x - p_1(x)) >= ... >= 0 and 0 <= p'(0+) <= 1", c2),
            ClauseVerdict::new("(iii) p_i(K) -> 0 as K -> 0", c3),
            ClauseVerdict::new("(iv) p_i(x) nondecreasing in i", c4),
        ],
    ))
}

fn masses_from_slopes(
    maturity: usize,
    grid: &Grid,
    prices: &[f64],
    left_slope: f64,
    right_slope: f64,
    tol: f64,
) -> Result<Marginal, MarginalError> {
    let pts = grid.points();
    let n = pts.len();
    let mut weights = Vec::with_capacity(n);
    for j in 0..n {
        let sl = if j == 0 { left_slope } else { (prices[j] - prices[j - 1]) / (pts[j] - pts[j - 1]) };
        let sr = if j + 1 == n { right_slope } else { (prices[j + 1] - prices[j]) / (pts[j + 1] - pts[j]) };
        let w = sr - sl;
        if w < -tol {
            return Err(MarginalError::NegativeMass { maturity, strike: pts[j], mass: w });
        }
        weights.push(w.max(0.0));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > tol.max(MASS_TOL) {
        return Err(MarginalError::InvalidWeights(total));
    }
    for w in &mut weights {
        *w /= total;
    }
    Marginal::new(grid.clone(), weights)
}

fn require_superset(curve: &PriceCurve, grid: &Grid) -> Result<(), MarginalError> {
    match curve.strikes.points().iter().find(|k| !grid.contains(**k)) {
        Some(k) => Err(MarginalError::GridMissingStrike(*k)),
        None => Ok(()),
    }
}

/// Law whose call prices are `curve`: the mass at each grid point is the jump
/// in the curve's slope there.
pub fn marginal_from_call_curve(curve: &PriceCurve, grid: &Grid, tol: f64) -> Result<Marginal, MarginalError> {
    require_superset(curve, grid)?;
    let prices: Vec<f64> = grid.points().iter().map(|&k| curve.price_at(k)).collect();
    masses_from_slopes(curve.maturity, grid, &prices, -1.0, 0.0, tol)
}

/// Law whose put prices are `curve`: `mu([0, K]) = p'(K+)`.
pub fn marginal_from_put_curve(curve: &PriceCurve, grid: &Grid, tol: f64) -> Result<Marginal, MarginalError> {
    require_superset(curve, grid)?;
    let first = curve.strikes.first();
    if grid.first() > 0.0 && curve.prices[0] > tol && first > 0.0 {
        return Err(MarginalError::ZeroStrikeRequired(curve.maturity, first));
    }
    let prices: Vec<f64> = grid.points().iter().map(|&k| curve.price_at(k)).collect();
    masses_from_slopes(curve.maturity, grid, &prices, 0.0, 1.0, tol)
}

pub fn call_curve_from_marginal(m: &Marginal, strikes: &Grid) -> PriceCurve {
    let prices = strikes
        .points()
        .iter()
        .map(|&k| m.support().map(|(x, w)| (x - k).max(0.0) * w).sum())
        .collect();
    PriceCurve {
        kind: OptionKind::Call,
        maturity: 1,
        strikes: strikes.clone(),
        prices,
    }
}

pub fn put_curve_from_marginal(m: &Marginal, strikes: &Grid) -> PriceCurve {
    let prices = strikes
        .points()
        .iter()
        .map(|&k| m.support().map(|(x, w)| (k - x).max(0.0) * w).sum())
        .collect();
    PriceCurve {
        kind: OptionKind::Put,
        maturity: 1,
        strikes: strikes.clone(),
        prices,
    }
}

/// One violated pair in the decreasing convex order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderViolation {
    /// 1-based maturities `(i, i + 1)`; `i = 0` stands for the spot.
    pub from: usize,
    pub to: usize,
    /// Test level `k` of `min(x, k)`, or `None` for the mean chain.
    pub level: Option<f64>,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub holds: bool,
    pub means: Vec<f64>,
    pub violations: Vec<OrderViolation>,
}

/// Decreasing convex order test: means nonincreasing from the spot, and for
/// every level `k` in the union of supports `E[min(X_{i+1}, k)] <= E[min(X_i, k)]`.
/// Functions `min(x, k)` are the extremal concave nondecreasing functions, and
/// both sides are piecewise linear with kinks at support points, so checking
/// those levels plus the means is exhaustive.
pub fn check_supermartingale_order(marginals: &[Marginal], spot: f64, tol: f64) -> OrderReport {
    let means: Vec<f64> = marginals.iter().map(mean).collect();
    let mut violations = Vec::new();
    let mut prev = spot;
    for (i, m) in means.iter().enumerate() {
        if *m > prev + tol {
            violations.push(OrderViolation {
                from: i,
                to: i + 1,
                level: None,
                excess: m - prev,
            });
        }
        prev = *m;
    }
    let mut levels: Vec<f64> = marginals.iter().flat_map(|m| m.support().map(|p| p.0)).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    for (i, pair) in marginals.windows(2).enumerate() {
        for &k in &levels {
            let excess = pair[1].expect_min(k) - pair[0].expect_min(k);
            if excess > tol {
                violations.push(OrderViolation {
                    from: i + 1,
                    to: i + 2,
                    level: Some(k),
                    excess,
                });
            }
        }
    }
    OrderReport {
        holds: violations.is_empty(),
        means,
        violations,
    }
}
