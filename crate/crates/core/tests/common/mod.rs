#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use superhedge_core::marginals::{Grid, Marginal, MarketInput, OptionKind};
use superhedge_core::paths::{build_lattice, build_mask, PathLattice, PredicateSpec, PredictionMask, TailProxySpec};
use superhedge_core::payoffs::{PayoffSpec, TableFallback, TableRow};

pub const S0: f64 = 100.0;

/// Marginals of a random supermartingale tree on a random price grid, plus
/// the largest one-step move the tree makes (including the move from `s_0`).
#[derive(Debug, Clone)]
pub struct Instance {
    pub s0: f64,
    pub marginals: Vec<Marginal>,
    pub max_jump: f64,
}

impl Instance {
    pub fn levels(&self) -> Vec<Vec<f64>> {
        self.marginals.iter().map(|m| m.support().map(|(x, _)| x).collect()).collect()
    }

    /// Quoted strikes: every mass level and zero.
    pub fn strikes(&self) -> Vec<Grid> {
        self.marginals.iter().map(|m| m.compact().grid().with_point(0.0).unwrap()).collect()
    }

    pub fn market(&self, kind: OptionKind) -> MarketInput {
        let compact: Vec<Marginal> = self.marginals.iter().map(|m| m.compact()).collect();
        MarketInput::from_marginals(self.s0, kind, &compact, &self.strikes()).unwrap()
    }

    pub fn lattice(&self, proxies: &TailProxySpec) -> Arc<PathLattice> {
        let compact: Vec<Marginal> = self.marginals.iter().map(|m| m.compact()).collect();
        Arc::new(build_lattice(self.s0, &compact, proxies).unwrap())
    }

    pub fn lattice_with_factors(&self, factors: &[f64]) -> Arc<PathLattice> {
        let compact: Vec<Marginal> = self.marginals.iter().map(|m| m.compact()).collect();
        Arc::new(PathLattice::from_marginals(self.s0, &compact, factors, 1_000_000).unwrap())
    }

    pub fn mask(&self, proxies: &TailProxySpec, predicate: PredicateSpec) -> PredictionMask {
        build_mask(self.lattice(proxies), predicate).unwrap()
    }

    pub fn means(&self) -> Vec<f64> {
        self.marginals.iter().map(|m| m.mean()).collect()
    }
}

/// Random supermartingale with `periods` steps whose prices live on a grid of
/// `grid_size` multiples of 5 between 20 and 200. Each node moves to a target
/// `x - drift` (drift uniform in `[0, max_drift * x]`) through one to three
/// equally weighted splits between a random grid point below and one above. The last law always has two or more atoms.
pub fn random_instance<R: Rng>(rng: &mut R, periods: usize, grid_size: usize, max_drift: f64) -> Instance {
    loop {
        let inst = try_instance(rng, periods, grid_size, max_drift);
        if inst.marginals.last().unwrap().support().count() >= 2 {
            return inst;
        }
    }
}

fn try_instance<R: Rng>(rng: &mut R, periods: usize, grid_size: usize, max_drift: f64) -> Instance {
    let mut pool: Vec<f64> = (4..=40).map(|k| 5.0 * k as f64).collect();
    let grid: Vec<f64> = loop {
        pool.shuffle(rng);
        let mut g = pool[..grid_size].to_vec();
        g.sort_by(f64::total_cmp);
        if g[0] < S0 && *g.last().unwrap() > S0 {
            break g;
        }
    };
    let mut dist: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    dist.insert(S0.to_bits(), (S0, 1.0));
    let mut marginals = Vec::new();
    let mut max_jump: f64 = 0.0;
    for _ in 0..periods {
        let mut next: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        for &(x, p) in dist.values() {
            let drift = if max_drift > 0.0 { rng.gen_range(0.0..=max_drift) * x } else { 0.0 };
            let t = (x - drift).max(grid[0]);
            let below: Vec<f64> = grid.iter().copied().filter(|g| *g <= t).collect();
            let above: Vec<f64> = grid.iter().copied().filter(|g| *g >= t).collect();
            let mut add = |y: f64, q: f64| {
                if q > 0.0 {
                    max_jump = max_jump.max((y - x).abs());
                    next.entry(y.to_bits()).or_insert((y, 0.0)).1 += p * q;
                }
            };
            let splits = rng.gen_range(1..=3);
            for _ in 0..splits {
                let a = *below.choose(rng).unwrap();
                let b = *above.choose(rng).unwrap();
                let share = 1.0 / splits as f64;
                if a == b {
                    add(a, share);
                } else {
                    add(a, share * (b - t) / (b - a));
                    add(b, share * (t - a) / (b - a));
                }
            }
        }
        let pairs: Vec<(f64, f64)> = next.values().copied().collect();
        marginals.push(Marginal::from_pairs(&pairs).unwrap());
        dist = next;
    }
    Instance {
        s0: S0,
        marginals,
        max_jump,
    }
}

/// Random values on every mass path; `fallback` covers paths through proxies.
pub fn random_table<R: Rng>(rng: &mut R, lattice: &PathLattice, lo: f64, hi: f64, fallback: TableFallback) -> PayoffSpec {
    let mut rows = Vec::new();
    let mut odo = lattice.mass_odometer();
    while let Some((_, _, values)) = odo.next() {
        rows.push(TableRow {
            path: values[1..].to_vec(),
            value: rng.gen_range(lo..=hi),
        });
    }
    PayoffSpec::Table { rows, fallback }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
