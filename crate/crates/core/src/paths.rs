//! Finite path space over per-period price levels, prediction-set masks and
//! the tail-proxy levels standing in for prices going to infinity.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::marginals::Marginal;

pub const DEFAULT_PATH_CAP: usize = 200_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PathError {
    #[error("lattice would have {0} paths, above the cap of {1}")]
    PathCountExceeded(u128, usize),
    #[error("no path satisfies the prediction set {0}")]
    EmptyMask(String),
    #[error("invalid tail proxy schedule: {0}")]
    InvalidProxies(&'static str),
    #[error("lattice needs at least one period and a positive finite spot")]
    InvalidLattice,
    #[error("prediction-set table row has {0} entries, expected {1}")]
    TableShape(usize, usize),
}

/// Geometric ladder of zero-mass levels above every mass level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailProxySpec {
    pub count: usize,
    pub growth_factor: f64,
}

impl Default for TailProxySpec {
    fn default() -> Self {
        TailProxySpec {
            count: 3,
            growth_factor: 10.0,
        }
    }
}

impl TailProxySpec {
    pub fn none() -> Self {
        TailProxySpec {
            count: 0,
            growth_factor: 10.0,
        }
    }

    /// Multiples of the top mass level, increasing.
    pub fn factors(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.count);
        let mut g = 1.0;
        for _ in 0..self.count {
            g *= self.growth_factor;
            f.push(g);
        }
        f
    }

    /// The ladder `g, g^2, ...` truncated below `top`, with `top` itself as the
    /// last level. Ladders for increasing `top` are nested.
    pub fn ladder_up_to(growth_factor: f64, top: f64) -> Vec<f64> {
        let mut f = Vec::new();
        let mut g = growth_factor;
        while g < top * (1.0 - 1e-12) {
            f.push(g);
            g *= growth_factor;
        }
        f.push(top);
        f
    }
}

/// Level sets `L_1..L_n`. Mass levels (support of each marginal) come first in
/// every period; the shared proxies follow and exceed all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathLattice {
    s0: f64,
    levels: Vec<Vec<f64>>,
    mass_counts: Vec<usize>,
    weights: Option<Vec<Vec<f64>>>,
    proxies: Vec<f64>,
    strides: Vec<usize>,
    count: usize,
}

/// Build the lattice for `marginals` with proxies from `spec`.
pub fn build_lattice(s0: f64, marginals: &[Marginal], spec: &TailProxySpec) -> Result<PathLattice, PathError> {
    if spec.count > 0 && !(spec.growth_factor.is_finite() && spec.growth_factor > 1.0) {
        return Err(PathError::InvalidProxies("growth factor must exceed 1"));
    }
    PathLattice::from_marginals(s0, marginals, &spec.factors(), DEFAULT_PATH_CAP)
}

impl PathLattice {
    pub fn from_marginals(s0: f64, marginals: &[Marginal], factors: &[f64], cap: usize) -> Result<Self, PathError> {
        let (levels, weights): (Vec<Vec<f64>>, Vec<Vec<f64>>) = marginals.iter().map(|m| m.support().unzip()).unzip();
        PathLattice::assemble(s0, levels, Some(weights), factors, cap)
    }

    /// Lattice on explicit level sets with no marginal weights attached.
    pub fn from_levels(s0: f64, levels: Vec<Vec<f64>>, factors: &[f64], cap: usize) -> Result<Self, PathError> {
        PathLattice::assemble(s0, levels, None, factors, cap)
    }

    fn assemble(
        s0: f64,
        mut levels: Vec<Vec<f64>>,
        weights: Option<Vec<Vec<f64>>>,
        factors: &[f64],
        cap: usize,
    ) -> Result<Self, PathError> {
        if levels.is_empty() || levels.iter().any(|l| l.is_empty()) || !(s0.is_finite() && s0 > 0.0) {
            return Err(PathError::InvalidLattice);
        }
        if factors.iter().any(|f| !(f.is_finite() && *f > 1.0)) || factors.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PathError::InvalidProxies("factors must be finite, above 1 and increasing"));
        }
        let top = levels.iter().flat_map(|l| l.iter().copied()).fold(0.0_f64, f64::max);
        let base = if top > 0.0 { top } else { s0 };
        let proxies: Vec<f64> = factors.iter().map(|f| base * f).collect();
        let mass_counts = levels.iter().map(|l| l.len()).collect();
        for l in &mut levels {
            l.extend_from_slice(&proxies);
        }
        let total: u128 = levels.iter().map(|l| l.len() as u128).product();
        if total > cap as u128 {
            return Err(PathError::PathCountExceeded(total, cap));
        }
        let n = levels.len();
        let mut strides = vec![1usize; n];
        for i in (0..n - 1).rev() {
            strides[i] = strides[i + 1] * levels[i + 1].len();
        }
        Ok(PathLattice {
            s0,
            levels,
            mass_counts,
            weights,
            proxies,
            strides,
            count: total as usize,
        })
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn periods(&self) -> usize {
        self.levels.len()
    }

    /// Levels of 1-based period `i`.
    pub fn levels(&self, i: usize) -> &[f64] {
        &self.levels[i - 1]
    }

    pub fn mass_count(&self, i: usize) -> usize {
        self.mass_counts[i - 1]
    }

    pub fn mass_levels(&self, i: usize) -> &[f64] {
        &self.levels[i - 1][..self.mass_counts[i - 1]]
    }

    /// Marginal masses on the mass levels of period `i`, if attached.
    pub fn mass_weights(&self, i: usize) -> Option<&[f64]> {
        self.weights.as_ref().map(|w| w[i - 1].as_slice())
    }

    pub fn proxies(&self) -> &[f64] {
        &self.proxies
    }

    pub fn path_count(&self) -> usize {
        self.count
    }

    pub fn mass_path_count(&self) -> usize {
        self.mass_counts.iter().product()
    }

    pub fn is_proxy(&self, i: usize, j: usize) -> bool {
        j >= self.mass_counts[i - 1]
    }

    /// Level index of `value` in period `i`, matched to 1e-12 relative.
    pub fn locate(&self, i: usize, value: f64) -> Option<usize> {
        let l = &self.levels[i - 1];
        let j = l.partition_point(|x| *x < value);
        let near = |k: usize| (l[k] - value).abs() <= 1e-12 * (1.0 + value.abs());
        if j < l.len() && near(j) {
            Some(j)
        } else if j > 0 && near(j - 1) {
            Some(j - 1)
        } else {
            None
        }
    }

    /// Linear index of a level-index tuple; the first period is most significant.
    pub fn encode(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(j, s)| j * s).sum()
    }

    pub fn decode(&self, mut linear: usize) -> PathIndex {
        let mut idx = vec![0; self.periods()];
        for (k, s) in self.strides.iter().enumerate() {
            idx[k] = linear / s;
            linear %= s;
        }
        PathIndex(idx)
    }

    /// `(s_0, s_1, ..., s_n)` for a level-index tuple.
    pub fn values(&self, idx: &[usize]) -> Vec<f64> {
        let mut v = Vec::with_capacity(idx.len() + 1);
        v.push(self.s0);
        v.extend(idx.iter().enumerate().map(|(k, j)| self.levels[k][*j]));
        v
    }

    /// Index tuple for path values `(s_0, ..., s_n)`, if every coordinate is a level.
    pub fn locate_path(&self, values: &[f64]) -> Option<Vec<usize>> {
        (1..values.len()).map(|i| self.locate(i, values[i])).collect()
    }

    /// Number of distinct histories `(j_1..j_depth)`.
    pub fn history_count(&self, depth: usize) -> usize {
        self.levels[..depth].iter().map(|l| l.len()).product()
    }

    /// Mixed-radix id of the first `depth` coordinates.
    pub fn history_id(&self, idx: &[usize], depth: usize) -> usize {
        self.levels[..depth].iter().zip(idx).fold(0, |id, (l, &j)| id * l.len() + j)
    }

    pub fn decode_history(&self, depth: usize, mut id: usize) -> Vec<usize> {
        let mut idx = vec![0; depth];
        for k in (0..depth).rev() {
            let r = self.levels[k].len();
            idx[k] = id % r;
            id /= r;
        }
        idx
    }

    pub fn odometer(&self) -> Odometer<'_> {
        Odometer::new(self, false)
    }

    /// Walks only paths made of mass levels.
    pub fn mass_odometer(&self) -> Odometer<'_> {
        Odometer::new(self, true)
    }
}

/// Lexicographic walk over paths, yielding linear index, level indices and values.
pub struct Odometer<'a> {
    lattice: &'a PathLattice,
    limits: Vec<usize>,
    idx: Vec<usize>,
    values: Vec<f64>,
    started: bool,
    done: bool,
}

impl<'a> Odometer<'a> {
    fn new(lattice: &'a PathLattice, mass_only: bool) -> Self {
        let limits = if mass_only {
            lattice.mass_counts.clone()
        } else {
            lattice.levels.iter().map(|l| l.len()).collect()
        };
        let n = lattice.periods();
        let mut values = vec![lattice.s0];
        values.extend(lattice.levels.iter().map(|l| l[0]));
        Odometer {
            lattice,
            done: limits.contains(&0),
            limits,
            idx: vec![0; n],
            values,
            started: false,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Option<(usize, &[usize], &[f64])> {
        if self.done {
            return None;
        }
        if self.started {
            let mut k = self.idx.len();
            loop {
                if k == 0 {
                    self.done = true;
                    return None;
                }
                k -= 1;
                self.idx[k] += 1;
                if self.idx[k] < self.limits[k] {
                    self.values[k + 1] = self.lattice.levels[k][self.idx[k]];
                    break;
                }
                self.idx[k] = 0;
                self.values[k + 1] = self.lattice.levels[k][0];
            }
        }
        self.started = true;
        Some((self.lattice.encode(&self.idx), &self.idx, &self.values))
    }
}

/// Level-index tuple `(j_1, ..., j_n)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PathIndex(pub Vec<usize>);

impl PathIndex {
    pub fn values(&self, lattice: &PathLattice) -> Vec<f64> {
        lattice.values(&self.0)
    }
}

/// Prediction-set catalog. Predicates see the whole path including `s_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PredicateSpec {
    AllPaths,
    /// `|s_{i+1} - s_i| <= delta` for every step including the first.
    MaxAbsIncrement { delta: f64 },
    /// `sum (s_{i+1} - s_i)^2 <= bound`.
    BoundedSquaredVariation { bound: f64 },
    /// `s_i - s_j <= drawdown` for all `i < j`.
    MaxDrawdown { drawdown: f64 },
    /// Explicit list of feasible `(s_1, ..., s_n)`.
    Table { paths: Vec<Vec<f64>> },
}

const PREDICATE_TOL: f64 = 1e-9;

fn within(x: f64, bound: f64) -> bool {
    x <= bound + PREDICATE_TOL * (1.0 + bound.abs())
}

impl PredicateSpec {
    /// Evaluate on `(s_0, s_1, ..., s_n)`.
    pub fn holds(&self, path: &[f64]) -> bool {
        match self {
            PredicateSpec::AllPaths => true,
            PredicateSpec::MaxAbsIncrement { delta } => path.windows(2).all(|w| within((w[1] - w[0]).abs(), *delta)),
            PredicateSpec::BoundedSquaredVariation { bound } => {
                within(path.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum(), *bound)
            }
            PredicateSpec::MaxDrawdown { drawdown } => {
                let mut peak = path[0];
                path.iter().all(|&s| {
                    peak = peak.max(s);
                    within(peak - s, *drawdown)
                })
            }
            PredicateSpec::Table { paths } => paths.iter().any(|row| {
                row.len() + 1 == path.len()
                    && row.iter().zip(&path[1..]).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()))
            }),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            PredicateSpec::AllPaths => String::from("all_paths"),
            PredicateSpec::MaxAbsIncrement { delta } => format!("max_abs_increment({delta})"),
            PredicateSpec::BoundedSquaredVariation { bound } => format!("bounded_squared_variation({bound})"),
            PredicateSpec::MaxDrawdown { drawdown } => format!("max_drawdown({drawdown})"),
            PredicateSpec::Table { paths } => format!("table({} paths)", paths.len()),
        }
    }
}

/// Feasibility bit per lattice path.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMask {
    lattice: Arc<PathLattice>,
    predicate: PredicateSpec,
    bits: Vec<bool>,
    feasible: usize,
}

pub fn build_mask(lattice: Arc<PathLattice>, predicate: PredicateSpec) -> Result<PredictionMask, PathError> {
    if let PredicateSpec::Table { paths } = &predicate {
        if let Some(row) = paths.iter().find(|r| r.len() != lattice.periods()) {
            return Err(PathError::TableShape(row.len(), lattice.periods()));
        }
    }
    let mut bits = vec![false; lattice.path_count()];
    let mut feasible = 0;
    let mut odo = lattice.odometer();
    while let Some((linear, _, values)) = odo.next() {
        if predicate.holds(values) {
            bits[linear] = true;
            feasible += 1;
        }
    }
    if feasible == 0 {
        return Err(PathError::EmptyMask(predicate.describe()));
    }
    Ok(PredictionMask {
        lattice,
        predicate,
        bits,
        feasible,
    })
}

impl PredictionMask {
    pub fn all_paths(lattice: Arc<PathLattice>) -> Self {
        build_mask(lattice, PredicateSpec::AllPaths).expect("lattices are nonempty")
    }

    pub fn lattice(&self) -> &Arc<PathLattice> {
        &self.lattice
    }

    pub fn predicate(&self) -> &PredicateSpec {
        &self.predicate
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_feasible(&self, linear: usize) -> bool {
        self.bits[linear]
    }

    /// Predicate evaluated directly on values, on or off the lattice.
    pub fn contains_values(&self, path: &[f64]) -> bool {
        self.predicate.holds(path)
    }

    pub fn feasible_count(&self) -> usize {
        self.feasible
    }

    pub fn is_all_paths(&self) -> bool {
        self.feasible == self.bits.len()
    }

    pub fn describe(&self) -> String {
        self.predicate.describe()
    }
}

/// Feasible paths in lexicographic order.
pub fn enumerate(mask: &PredictionMask) -> Vec<PathIndex> {
    let lattice = mask.lattice();
    (0..lattice.path_count())
        .filter(|&p| mask.bits[p])
        .map(|p| lattice.decode(p))
        .collect()
}
