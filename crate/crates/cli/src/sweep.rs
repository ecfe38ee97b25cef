//! Convergence sweeps: one run per axis value, tabulated as CSV.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use superhedge_core::marginals::OptionKind;

use crate::config::{invalid, ConfigError, MarginalSource, ProblemConfig, RoutesConfig};
use crate::run::{evaluate, RunReport, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Top tail-proxy factor of the ladder.
    ProxyFactor,
    /// Level count of every parametric marginal.
    GridSize,
    /// Penalty weight of the `gamma_N` route.
    N,
}

impl FromStr for Axis {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proxy_factor" => Ok(Axis::ProxyFactor),
            "grid_size" => Ok(Axis::GridSize),
            "N" | "n" => Ok(Axis::N),
            other => Err(invalid("--sweep", format!("unknown axis `{other}`; use proxy_factor, grid_size or N"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl FromStr for SweepSpec {
    type Err = ConfigError;

    /// `AXIS=v1,v2,...`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (axis, list) = s.split_once('=').ok_or_else(|| invalid("--sweep", "expected AXIS=v1,v2,..."))?;
        let values = list
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| invalid("--sweep", format!("`{v}` is not a number")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err(invalid("--sweep", "no axis values"));
        }
        Ok(SweepSpec {
            axis: axis.trim().parse()?,
            values,
        })
    }
}

/// `cfg` with one axis value substituted.
pub fn apply(cfg: &ProblemConfig, axis: Axis, value: f64) -> Result<ProblemConfig, ConfigError> {
    let mut out = cfg.clone();
    match axis {
        Axis::ProxyFactor => {
            out.proxies.top_factor = Some(value);
            out.proxies.count = None;
        }
        Axis::GridSize => {
            if value.fract() != 0.0 || value < 2.0 {
                return Err(invalid("--sweep", format!("grid_size {value} is not an integer >= 2")));
            }
            let mut any = false;
            for entry in &mut out.marginal {
                if let MarginalSource::Parametric { grid_size, .. } = &mut entry.source {
                    *grid_size = value as usize;
                    any = true;
                }
            }
            if !any {
                return Err(invalid("--sweep", "grid_size needs at least one parametric marginal"));
            }
        }
        Axis::N => {
            if cfg.instrument != OptionKind::Put {
                return Err(invalid("--sweep", "the N axis runs the gamma_N route, which needs a put market"));
            }
            out.routes = RoutesConfig {
                direct: false,
                beta: None,
                gamma_schedule: Some(vec![value]),
            };
        }
    }
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Up,
    Flat,
    Down,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub status: Status,
    /// Gap movement from the previous row, when both are finite.
    pub trend: Option<Trend>,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: Axis,
    pub rows: Vec<SweepRow>,
}

const FLAT_TOL: f64 = 1e-9;

impl Sweep {
    /// No gap increase and decrease both occur.
    pub fn gap_monotone(&self) -> bool {
        let trends: Vec<Trend> = self.rows.iter().filter_map(|r| r.trend).collect();
        !(trends.contains(&Trend::Up) && trends.contains(&Trend::Down))
    }

    pub fn exit_code(&self) -> u8 {
        self.rows.iter().map(|r| r.status.exit_code()).max().unwrap_or(0)
    }

    /// Header `axis,P,V,gap,status`; floats carry 17 significant digits so
    /// they parse back to the same doubles. The status column appends the gap
    /// trend against the previous row (`;gap_up`, `;gap_flat`, `;gap_down`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,P,V,gap,status\n");
        for r in &self.rows {
            let status = match r.status {
                Status::Ok => "ok",
                Status::Arbitrage => "arbitrage",
                Status::IllPosed => "ill_posed",
                Status::SolverFailure => "solver_failure",
            };
            let trend = match r.trend {
                Some(Trend::Up) => ";gap_up",
                Some(Trend::Flat) => ";gap_flat",
                Some(Trend::Down) => ";gap_down",
                None => "",
            };
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{status}{trend}",
                r.axis_value, r.primal, r.dual, r.gap
            )
            .expect("writing to a String");
        }
        out
    }
}

fn row_values(axis: Axis, report: &RunReport) -> (f64, f64, f64) {
    let Some(d) = report.duality.as_ref().filter(|_| report.status == Status::Ok) else {
        return (f64::NAN, f64::NAN, f64::NAN);
    };
    if axis == Axis::N {
        if let Some(p) = d.gamma.as_ref().and_then(|g| g.points.first()) {
            return (p.primal, p.dual, p.gamma);
        }
    }
    let v = d
        .dual
        .or(d.beta_value)
        .or(d.gamma.as_ref().map(|g| g.dual_inf))
        .unwrap_or(f64::NAN);
    (d.primal, v, v - d.primal)
}

/// Run every axis value on up to `workers` threads; rows come back in axis order.
pub fn run_sweep(cfg: &ProblemConfig, config_sha256: &str, spec: &SweepSpec, workers: usize) -> Result<Sweep, ConfigError> {
    let configs = spec
        .values
        .iter()
        .map(|&v| apply(cfg, spec.axis, v))
        .collect::<Result<Vec<_>, _>>()?;
    let next = AtomicUsize::new(0);
    let mut reports: Vec<Option<RunReport>> = vec![None; configs.len()];
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers.clamp(1, configs.len()))
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(c) = configs.get(i) else { break };
                        log::info!("sweep point {} = {}", i, spec.values[i]);
                        done.push((i, evaluate(c, String::from(config_sha256))));
                    }
                    done
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("sweep worker panicked") {
                reports[i] = Some(r);
            }
        }
    });

    let mut rows: Vec<SweepRow> = Vec::with_capacity(configs.len());
    for (&axis_value, report) in spec.values.iter().zip(reports) {
        let report = report.expect("every sweep point ran");
        let (primal, dual, gap) = row_values(spec.axis, &report);
        let trend = rows.last().map(|r| r.gap).filter(|p| p.is_finite() && gap.is_finite()).map(|prev| {
            let tol = FLAT_TOL * (1.0 + prev.abs());
            if gap > prev + tol {
                Trend::Up
            } else if gap < prev - tol {
                Trend::Down
            } else {
                Trend::Flat
            }
        });
        rows.push(SweepRow {
            axis_value,
            primal,
            dual,
            gap,
            status: report.status,
            trend,
            report,
        });
    }
    Ok(Sweep { axis: spec.axis, rows })
}
