//! Problem config: one TOML document, field names fixed by `docs/config-schema.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use superhedge_core::lp::{PivotRule, SolverOptions};
use superhedge_core::marginals::{ConditionTolerances, OptionKind};
use superhedge_core::paths::{PredicateSpec, TailProxySpec, DEFAULT_PATH_CAP};
use superhedge_core::payoffs::PayoffSpec;
use superhedge_core::pricing::{BetaSource, CouplingMode, DeltaSign, PricingOptions, StrikeMenu};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: Box<toml::de::Error> },
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub spot: f64,
    /// Number of maturities `n`.
    pub periods: usize,
    pub instrument: OptionKind,
    /// Exactly one entry per maturity `1..=periods`.
    pub marginal: Vec<MarginalEntry>,
    #[serde(default = "all_paths")]
    pub prediction_set: PredicateSpec,
    pub payoff: Option<PayoffSpec>,
    /// Table payoff with seeded random values on every mass path.
    pub random_payoff: Option<RandomPayoff>,
    #[serde(default)]
    pub proxies: ProxyConfig,
    #[serde(default = "mass_levels")]
    pub strike_menu: StrikeMenu,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub routes: RoutesConfig,
    #[serde(default)]
    pub output: OutputConfig,
    pub seed: Option<u64>,
    /// Sweep worker threads; defaults to the available parallelism.
    pub workers: Option<usize>,
}

fn all_paths() -> PredicateSpec {
    PredicateSpec::AllPaths
}

fn mass_levels() -> StrikeMenu {
    StrikeMenu::MassLevels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalEntry {
    /// 1-based.
    pub maturity: usize,
    #[serde(flatten)]
    pub source: MarginalSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum MarginalSource {
    Pmf {
        levels: Vec<f64>,
        weights: Vec<f64>,
    },
    CallCurve {
        strikes: Vec<f64>,
        prices: Vec<f64>,
    },
    PutCurve {
        strikes: Vec<f64>,
        prices: Vec<f64>,
    },
    Parametric {
        family: Family,
        mean: f64,
        /// Variance of `log X`.
        log_variance: f64,
        grid_size: usize,
        /// Quantile above which the tail is lumped into the top level.
        #[serde(default = "default_truncation")]
        truncation: f64,
    },
}

fn default_truncation() -> f64 {
    0.99
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Lognormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomPayoff {
    pub lo: f64,
    pub hi: f64,
    /// Paths through proxies pay `fallback_scale * (s_1 + ... + s_n)`.
    #[serde(default)]
    pub fallback_scale: f64,
}

/// Tail proxies: either the ladder `g, g^2, ...` capped by `top_factor`, or
/// `count` powers of `g`. Factors multiply the top mass level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyConfig {
    #[serde(default = "default_growth")]
    pub growth_factor: f64,
    pub top_factor: Option<f64>,
    pub count: Option<usize>,
}

fn default_growth() -> f64 {
    10.0
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            growth_factor: default_growth(),
            top_factor: Some(1000.0),
            count: None,
        }
    }
}

impl ProxyConfig {
    pub fn factors(&self) -> Vec<f64> {
        match (self.top_factor, self.count) {
            (Some(top), _) => TailProxySpec::ladder_up_to(self.growth_factor, top),
            (None, count) => TailProxySpec {
                count: count.unwrap_or(3),
                growth_factor: self.growth_factor,
            }
            .factors(),
        }
    }

    pub fn spec(&self) -> TailProxySpec {
        TailProxySpec {
            count: self.factors().len(),
            growth_factor: self.growth_factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotChoice {
    Bland,
    Dantzig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub pivot_rule: PivotChoice,
    pub pivot_tol: f64,
    pub feas_tol: f64,
    pub dual_tol: f64,
    /// `0` picks a size-based cap.
    pub max_iterations: usize,
    pub degenerate_streak: usize,
    pub cert_tol: f64,
    pub hedge_tol: f64,
    pub extraction_tol: f64,
    pub condition_tol: f64,
    pub decay_tol: f64,
    pub order_tol: f64,
    pub path_cap: usize,
    pub delta_sign: DeltaSign,
    pub coupling: CouplingMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let lp = SolverOptions::default();
        let pricing = PricingOptions::default();
        let cond = ConditionTolerances::default();
        SolverConfig {
            pivot_rule: PivotChoice::Dantzig,
            pivot_tol: lp.pivot_tol,
            feas_tol: lp.feas_tol,
            dual_tol: lp.dual_tol,
            max_iterations: lp.max_iterations,
            degenerate_streak: lp.degenerate_streak,
            cert_tol: pricing.cert_tol,
            hedge_tol: pricing.feas_tol,
            extraction_tol: 1e-9,
            condition_tol: cond.tol,
            decay_tol: cond.decay_tol,
            order_tol: 1e-9,
            path_cap: DEFAULT_PATH_CAP,
            delta_sign: DeltaSign::NonNegative,
            coupling: CouplingMode::Supermartingale,
        }
    }
}

impl SolverConfig {
    pub fn pricing(&self) -> PricingOptions {
        PricingOptions {
            solver: SolverOptions {
                pivot_tol: self.pivot_tol,
                feas_tol: self.feas_tol,
                dual_tol: self.dual_tol,
                max_iterations: self.max_iterations,
                pivot_rule: match self.pivot_rule {
                    PivotChoice::Bland => PivotRule::Bland,
                    PivotChoice::Dantzig => PivotRule::DantzigBlandFallback,
                },
                degenerate_streak: self.degenerate_streak,
            },
            feas_tol: self.hedge_tol,
            cert_tol: self.cert_tol,
        }
    }

    pub fn conditions(&self) -> ConditionTolerances {
        ConditionTolerances {
            tol: self.condition_tol,
            decay_tol: self.decay_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutesConfig {
    pub direct: bool,
    pub beta: Option<BetaSource>,
    pub gamma_schedule: Option<Vec<f64>>,
}

impl Default for RoutesConfig {
    fn default() -> Self {
        RoutesConfig {
            direct: true,
            beta: None,
            gamma_schedule: None,
        }
    }
}

pub const DEFAULT_GAMMA_SCHEDULE: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

impl RoutesConfig {
    /// Apply a `--routes direct,beta,gammaN` selection. Routes left out are
    /// switched off; selected ones keep their configured parameters.
    pub fn select(&mut self, list: &str) -> Result<(), ConfigError> {
        let (mut direct, mut beta, mut gamma) = (false, false, false);
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name.to_ascii_lowercase().as_str() {
                "direct" => direct = true,
                "beta" => beta = true,
                "gamman" | "gamma_n" | "gamma" => gamma = true,
                other => return Err(invalid("--routes", format!("unknown route `{other}`"))),
            }
        }
        if !(direct || beta || gamma) {
            return Err(invalid("--routes", "no route selected"));
        }
        self.direct = direct;
        self.beta = if beta { Some(self.beta.unwrap_or(BetaSource::Auto)) } else { None };
        self.gamma_schedule = if gamma {
            Some(self.gamma_schedule.take().unwrap_or_else(|| DEFAULT_GAMMA_SCHEDULE.to_vec()))
        } else {
            None
        };
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub report: Option<String>,
    pub sweep: Option<String>,
}

impl ProblemConfig {
    /// Parse and validate; returns the config with the raw bytes for hashing.
    pub fn load(path: &Path) -> Result<(ProblemConfig, String), ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg = Self::parse(&raw).map_err(|e| match e {
            ConfigError::Parse { source, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                source,
            },
            other => other,
        })?;
        Ok((cfg, raw))
    }

    pub fn parse(text: &str) -> Result<ProblemConfig, ConfigError> {
        let cfg: ProblemConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: String::from("<config>"),
            source: Box::new(source),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.spot.is_finite() && self.spot > 0.0) {
            return Err(invalid("spot", "must be positive and finite"));
        }
        if self.periods == 0 {
            return Err(invalid("periods", "must be at least 1"));
        }
        let mut seen = vec![false; self.periods];
        for (k, entry) in self.marginal.iter().enumerate() {
            let field = format!("marginal[{k}].maturity");
            if entry.maturity == 0 || entry.maturity > self.periods {
                return Err(invalid(field, format!("{} is outside 1..={}", entry.maturity, self.periods)));
            }
            if std::mem::replace(&mut seen[entry.maturity - 1], true) {
                return Err(invalid(field, format!("maturity {} has more than one source", entry.maturity)));
            }
            self.validate_source(k, &entry.source)?;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(invalid("marginal", format!("maturity {} has no source", missing + 1)));
        }
        match (&self.payoff, &self.random_payoff) {
            (Some(_), Some(_)) => return Err(invalid("payoff", "give either `payoff` or `random_payoff`, not both")),
            (None, None) => return Err(invalid("payoff", "missing; give `payoff` or `random_payoff`")),
            (None, Some(r)) if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) => {
                return Err(invalid("random_payoff", "needs finite lo <= hi"));
            }
            _ => {}
        }
        let p = &self.proxies;
        if !(p.growth_factor.is_finite() && p.growth_factor > 1.0) {
            return Err(invalid("proxies.growth_factor", "must exceed 1"));
        }
        if let Some(top) = p.top_factor {
            if !(top.is_finite() && top > 1.0) {
                return Err(invalid("proxies.top_factor", "must exceed 1"));
            }
            if p.count.is_some() {
                return Err(invalid("proxies", "give either `top_factor` or `count`, not both"));
            }
        }
        if let Some(schedule) = &self.routes.gamma_schedule {
            if schedule.is_empty() || schedule.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
                return Err(invalid("routes.gamma_schedule", "needs positive finite penalty weights"));
            }
        }
        if self.workers == Some(0) {
            return Err(invalid("workers", "must be at least 1"));
        }
        Ok(())
    }

    fn validate_source(&self, k: usize, source: &MarginalSource) -> Result<(), ConfigError> {
        let field = |name: &str| format!("marginal[{k}].{name}");
        let curve_kind = match source {
            MarginalSource::Pmf { levels, weights } => {
                if levels.len() != weights.len() {
                    return Err(invalid(field("weights"), format!("{} weights for {} levels", weights.len(), levels.len())));
                }
                None
            }
            MarginalSource::CallCurve { strikes, prices } | MarginalSource::PutCurve { strikes, prices } => {
                if strikes.len() != prices.len() {
                    return Err(invalid(field("prices"), format!("{} prices for {} strikes", prices.len(), strikes.len())));
                }
                Some(if matches!(source, MarginalSource::CallCurve { .. }) { OptionKind::Call } else { OptionKind::Put })
            }
            MarginalSource::Parametric {
                mean,
                log_variance,
                grid_size,
                truncation,
                ..
            } => {
                if !(mean.is_finite() && *mean > 0.0) {
                    return Err(invalid(field("mean"), "must be positive and finite"));
                }
                if !(log_variance.is_finite() && *log_variance > 0.0) {
                    return Err(invalid(field("log_variance"), "must be positive and finite"));
                }
                if *grid_size < 2 {
                    return Err(invalid(field("grid_size"), "must be at least 2"));
                }
                if !(*truncation > 0.0 && *truncation < 1.0) {
                    return Err(invalid(field("truncation"), "must lie strictly between 0 and 1"));
                }
                None
            }
        };
        match curve_kind {
            Some(kind) if kind != self.instrument => Err(invalid(
                field("source"),
                format!("{kind:?} curve quoted in a {:?} market", self.instrument).to_lowercase(),
            )),
            _ => Ok(()),
        }
    }
}
