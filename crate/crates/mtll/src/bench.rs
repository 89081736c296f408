//! Campaign orchestration: configuration loading, Monte Carlo runs over
//! realizations, filter comparison, statistics, and JSON reports.

use std::f64::consts::PI;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MtllError, Result};
use crate::lock::{first_exit, ExitInfo};
use crate::mne::{LatticeConfig, MneFilter};
use crate::model::{
    make_linear_model, make_phase_model_with_drift, DiffusionModel, LockDomain,
};
use crate::particle::{conditional_mtll, propagate_ensemble};
use crate::rng::derive_seed;
use crate::sde::{simulate_pair, SamplePath, TimeGrid};
use crate::trackers::{Ekf, Pll};
use crate::zakai::mtll_oracle;
use crate::CausalFilter;

/// Which estimator tracks the state in a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    /// Minimum-noise-energy lattice filter.
    Mne,
    /// Extended Kalman filter.
    Ekf,
    /// Constant-gain loop.
    Pll,
    /// Open-loop reference `x̂ ≡ x(0)`; scored by the particle conditional
    /// MTLL for its own observation record.
    ParticleReference,
    /// Test hook `x̂ = x`: zero error, never exits.
    Oracle,
    /// Test hook `x̂ ≡ x(0)` scored by plain first exit of `x − x(0)`.
    Frozen,
}

impl FilterKind {
    pub fn label(self) -> &'static str {
        match self {
            FilterKind::Mne => "mne",
            FilterKind::Ekf => "ekf",
            FilterKind::Pll => "pll",
            FilterKind::ParticleReference => "particle-reference",
            FilterKind::Oracle => "oracle",
            FilterKind::Frozen => "frozen",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum ModelKind {
    Phase,
    Linear,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: String,
    pub eps: f64,
    pub sigma: f64,
    pub rho: f64,
    /// Constant drift for the phase model.
    pub beta: f64,
    /// Drift slope for the linear model.
    pub a: f64,
    /// Measurement slope for the linear model.
    pub c: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { kind: "phase".into(), eps: 0.3, sigma: 1.0, rho: 1.0, beta: 0.0, a: -1.0, c: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub dt: f64,
    pub horizon: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { dt: 1e-3, horizon: 10.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LockSection {
    pub lo: f64,
    pub hi: f64,
}

impl Default for LockSection {
    fn default() -> Self {
        LockSection { lo: -PI, hi: PI }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiltersSection {
    pub run: Vec<FilterKind>,
}

impl Default for FiltersSection {
    fn default() -> Self {
        FiltersSection { run: vec![FilterKind::Mne, FilterKind::Ekf, FilterKind::Pll] }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeSection {
    pub g: usize,
    /// Transition half-width in cells; omit for the automatic band.
    pub band: Option<usize>,
    /// Lattice half-width around the start state.
    pub half_width: f64,
}

impl Default for LatticeSection {
    fn default() -> Self {
        LatticeSection { g: 257, band: None, half_width: 2.0 * PI }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleSection {
    pub n: usize,
}

impl Default for ParticleSection {
    fn default() -> Self {
        ParticleSection { n: 1000 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZakaiSection {
    pub enabled: bool,
    pub g: usize,
}

impl Default for ZakaiSection {
    fn default() -> Self {
        ZakaiSection { enabled: false, g: 200 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignSection {
    pub realizations: usize,
    pub seed: u64,
    pub x0: f64,
    pub ekf_p0: f64,
    pub pll_gain: Option<f64>,
}

impl Default for CampaignSection {
    fn default() -> Self {
        CampaignSection { realizations: 100, seed: 0, x0: 0.0, ekf_p0: 0.0, pll_gain: None }
    }
}

/// Full experiment description, loadable from a sectioned key=value file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub lock: LockSection,
    pub filters: FiltersSection,
    pub lattice: LatticeSection,
    pub particle: ParticleSection,
    pub zakai: ZakaiSection,
    pub campaign: CampaignSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| MtllError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Re-check every module-level precondition before running anything.
    pub fn validate(&self) -> Result<()> {
        self.build_model()?;
        self.build_grid()?;
        self.build_domain()?;
        if self.campaign.realizations < 1 {
            return Err(MtllError::Config("campaign.realizations must be >= 1".into()));
        }
        if self.filters.run.is_empty() {
            return Err(MtllError::Config("filters.run must not be empty".into()));
        }
        if self.filters.run.contains(&FilterKind::Mne) && self.lattice.g < 1 {
            return Err(MtllError::Config("lattice.g must be >= 1".into()));
        }
        if self.filters.run.contains(&FilterKind::ParticleReference) && self.particle.n < 1 {
            return Err(MtllError::Config("particle.n must be >= 1".into()));
        }
        if self.zakai.enabled && self.zakai.g < 8 {
            return Err(MtllError::Config("zakai.g must be >= 8".into()));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<DiffusionModel> {
        let m = &self.model;
        match m.kind.as_str() {
            "phase" => Ok(make_phase_model_with_drift(m.beta, m.eps, m.sigma, m.rho)?.0),
            "linear" => make_linear_model(m.a, m.c, m.eps, m.sigma, m.rho),
            other => Err(MtllError::Config(format!(
                "unknown model.kind {other:?} (expected \"phase\" or \"linear\")"
            ))),
        }
    }

    pub fn build_grid(&self) -> Result<TimeGrid> {
        let g = &self.grid;
        if !(g.dt > 0.0) || !(g.horizon > 0.0) {
            return Err(MtllError::Config(format!(
                "grid.dt and grid.horizon must be positive, got {} and {}",
                g.dt, g.horizon
            )));
        }
        let n = (g.horizon / g.dt).round() as usize;
        TimeGrid::new(g.dt, n.max(1))
    }

    pub fn build_domain(&self) -> Result<LockDomain> {
        LockDomain::new(self.lock.lo, self.lock.hi)
    }

    pub fn lattice_config(&self) -> LatticeConfig {
        LatticeConfig {
            x_lo: self.campaign.x0 - self.lattice.half_width,
            x_hi: self.campaign.x0 + self.lattice.half_width,
            g: self.lattice.g,
            band: self.lattice.band,
            record_backpointers: false,
            refine: false,
        }
    }
}

/// Per-filter campaign outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterReport {
    pub kind: FilterKind,
    /// Mean over realizations of `τ ∧ T`.
    pub mtll: f64,
    pub std_error: f64,
    /// Fraction of realizations censored at the horizon.
    pub censoring_fraction: f64,
    pub taus: Vec<f64>,
    pub exited: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub eps: f64,
    pub base_seed: u64,
    pub realizations: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Timing metadata; zeroed by [`MtllReport::canonical_json`].
    pub wall_time_s: f64,
}

/// Campaign result: one report per configured filter, plus the optional
/// density-oracle estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MtllReport {
    pub metadata: RunMetadata,
    pub filters: Vec<FilterReport>,
    /// Per-realization conditional MTLL from the absorbed density solver,
    /// when enabled.
    pub zakai_mtll: Option<Vec<f64>>,
}

impl MtllReport {
    pub fn filter(&self, kind: FilterKind) -> Option<&FilterReport> {
        self.filters.iter().find(|f| f.kind == kind)
    }

    /// JSON with timing metadata zeroed; byte-identical across reruns and
    /// worker counts for a fixed config.
    pub fn canonical_json(&self) -> Result<String> {
        let mut clone = self.clone();
        clone.metadata.wall_time_s = 0.0;
        Ok(serde_json::to_string_pretty(&clone).map_err(|e| MtllError::Config(e.to_string()))? + "\n")
    }

    pub fn json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self).map_err(|e| MtllError::Config(e.to_string()))? + "\n")
    }
}

/// A campaign abort: the error plus whatever completed before it.
#[derive(Debug)]
pub struct CampaignFailure {
    pub partial: Option<MtllReport>,
    pub error: MtllError,
}

impl std::fmt::Display for CampaignFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for CampaignFailure {}

struct RealizationOutcome {
    exits: Vec<(f64, bool)>,
    zakai_mtll: Option<f64>,
}

/// Stream a causal filter over a precomputed `(x, Δy)` record and return the
/// first exit of `e = x − x̂`, stopping as soon as lock is lost.
pub fn filter_first_exit(
    path: &SamplePath,
    filter: &mut dyn CausalFilter,
    domain: LockDomain,
) -> Result<ExitInfo> {
    let grid = path.grid;
    let e0 = path.x[0] - filter.estimate();
    if !domain.contains(e0) {
        return Ok(ExitInfo { exited: true, tau_index: Some(0), tau: 0.0 });
    }
    for k in 0..grid.n_steps {
        let xhat = filter.step(path.dy[k], grid.t(k), grid.dt)?;
        let e = path.x[k + 1] - xhat;
        if !domain.contains(e) {
            return Ok(ExitInfo { exited: true, tau_index: Some(k + 1), tau: grid.t(k + 1) });
        }
    }
    Ok(ExitInfo { exited: false, tau_index: None, tau: grid.horizon() })
}

fn run_realization(
    cfg: &ExperimentConfig,
    model: &DiffusionModel,
    grid: TimeGrid,
    domain: LockDomain,
    r: usize,
) -> Result<RealizationOutcome> {
    let seed_r = derive_seed(cfg.campaign.seed, r as u64);
    let x0 = cfg.campaign.x0;
    let path = simulate_pair(model, grid, x0, seed_r)?;
    let horizon = grid.horizon();

    let mut exits = Vec::with_capacity(cfg.filters.run.len());
    for &kind in &cfg.filters.run {
        let (tau, exited) = match kind {
            FilterKind::Oracle => (horizon, false),
            FilterKind::Frozen => {
                let info = {
                    let e: Vec<f64> = path.x.iter().map(|x| x - x0).collect();
                    first_exit(&e, domain, grid)
                };
                (info.tau, info.exited)
            }
            FilterKind::ParticleReference => {
                let xhat = vec![x0; grid.n_steps + 1];
                let ens = propagate_ensemble(
                    model,
                    domain,
                    grid,
                    cfg.particle.n,
                    &path.dy,
                    &xhat,
                    derive_seed(seed_r, 1),
                )?;
                let any_exit = ens.exits.iter().any(|e| e.exited);
                (conditional_mtll(&ens, horizon)?, any_exit)
            }
            FilterKind::Mne => {
                let mut f = MneFilter::new(model.clone(), &cfg.lattice_config(), grid.dt, x0)?;
                let info = filter_first_exit(&path, &mut f, domain)?;
                (info.tau, info.exited)
            }
            FilterKind::Ekf => {
                let mut f = Ekf::new(model.clone(), x0, cfg.campaign.ekf_p0)?;
                let info = filter_first_exit(&path, &mut f, domain)?;
                (info.tau, info.exited)
            }
            FilterKind::Pll => {
                let mut f = Pll::new(model.clone(), x0, cfg.campaign.pll_gain)?;
                let info = filter_first_exit(&path, &mut f, domain)?;
                (info.tau, info.exited)
            }
        };
        if !tau.is_finite() {
            return Err(MtllError::NonFinite { step: r, what: "exit time" });
        }
        exits.push((tau, exited));
    }

    let zakai_mtll = if cfg.zakai.enabled {
        let xhat = vec![x0; grid.n_steps + 1];
        Some(mtll_oracle(model, domain, &path.dy, &xhat, grid, cfg.zakai.g)?)
    } else {
        None
    };

    Ok(RealizationOutcome { exits, zakai_mtll })
}

/// Run the full Monte Carlo campaign described by `cfg`.
///
/// Realization `r` draws from seed `(base, r)`; all configured filters share
/// each realization's `(x, Δy)` record, so comparisons are paired.
/// Deterministic for a fixed config, independent of worker count. On a
/// realization failure the campaign aborts and returns the completed prefix
/// as a partial report.
pub fn run_mtll_experiment(
    cfg: &ExperimentConfig,
) -> std::result::Result<MtllReport, Box<CampaignFailure>> {
    let fail = |e: MtllError| Box::new(CampaignFailure { partial: None, error: e });
    cfg.validate().map_err(fail)?;
    let model = cfg.build_model().map_err(fail)?;
    let grid = cfg.build_grid().map_err(fail)?;
    let domain = cfg.build_domain().map_err(fail)?;
    let r_total = cfg.campaign.realizations;

    let started = Instant::now();
    let outcomes: Vec<Result<RealizationOutcome>> = (0..r_total)
        .into_par_iter()
        .map(|r| run_realization(cfg, &model, grid, domain, r))
        .collect();

    // fixed-order aggregation; abort at the first failed realization but
    // keep the completed prefix
    let mut done = Vec::with_capacity(r_total);
    for (r, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(o) => done.push(o),
            Err(e) => {
                let partial = (!done.is_empty())
                    .then(|| assemble_report(cfg, grid, &done, started.elapsed().as_secs_f64()));
                return Err(Box::new(CampaignFailure {
                    partial,
                    error: MtllError::Config(format!("realization {r} failed: {e}")),
                }));
            }
        }
    }
    Ok(assemble_report(cfg, grid, &done, started.elapsed().as_secs_f64()))
}

fn assemble_report(
    cfg: &ExperimentConfig,
    grid: TimeGrid,
    outcomes: &[RealizationOutcome],
    wall_time_s: f64,
) -> MtllReport {
    let filters = cfg
        .filters
        .run
        .iter()
        .enumerate()
        .map(|(fi, &kind)| {
            let taus: Vec<f64> = outcomes.iter().map(|o| o.exits[fi].0).collect();
            let exited: Vec<bool> = outcomes.iter().map(|o| o.exits[fi].1).collect();
            let censored = exited.iter().filter(|&&e| !e).count();
            FilterReport {
                kind,
                mtll: mean(&taus),
                std_error: std_error(&taus),
                censoring_fraction: censored as f64 / taus.len().max(1) as f64,
                taus,
                exited,
            }
        })
        .collect();
    let zakai_mtll = cfg
        .zakai
        .enabled
        .then(|| outcomes.iter().filter_map(|o| o.zakai_mtll).collect());
    MtllReport {
        metadata: RunMetadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            eps: cfg.model.eps,
            base_seed: cfg.campaign.seed,
            realizations: outcomes.len(),
            dt: grid.dt,
            horizon: grid.horizon(),
            wall_time_s,
        },
        filters,
        zakai_mtll,
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (sample standard deviation over √n).
pub fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// One-sided paired t statistic for `mean(a) > mean(b)`.
pub fn paired_t_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(MtllError::LengthMismatch(format!(
            "paired test needs equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let se = std_error(&d);
    if se == 0.0 {
        // all differences equal: infinitely significant unless exactly zero
        return Ok(if mean(&d) > 0.0 {
            f64::INFINITY
        } else if mean(&d) < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        });
    }
    Ok(mean(&d) / se)
}

/// Ordinary least squares `y ≈ slope·x + intercept`, with `R²`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(MtllError::LengthMismatch(format!(
            "fit needs equal lengths >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|xi| (xi - mx) * (xi - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let syy: f64 = y.iter().map(|yi| (yi - my) * (yi - my)).sum();
    if sxx == 0.0 {
        return Err(MtllError::InvalidParameter("fit needs at least two distinct x".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok((slope, intercept, r2))
}

/// Noise-scaling summary for one filter across an `ε` sweep: least-squares
/// fit of `log MTLL` against `1/ε²`.
#[derive(Debug, Clone, Serialize)]
pub struct FilterScaling {
    pub kind: FilterKind,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioRow {
    pub eps: f64,
    pub mne_over_pll: Option<f64>,
    pub mne_over_ekf: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    pub scalings: Vec<FilterScaling>,
    pub ratios: Vec<RatioRow>,
}

impl CompareSummary {
    pub fn json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self).map_err(|e| MtllError::Config(e.to_string()))? + "\n")
    }
}

/// Merge reports from an `ε` sweep into scaling fits and filter ratios.
pub fn compare_report(entries: &[(f64, MtllReport)]) -> Result<CompareSummary> {
    if entries.len() < 2 {
        return Err(MtllError::InvalidParameter(format!(
            "compare needs reports for >= 2 eps values, got {}",
            entries.len()
        )));
    }
    let mut kinds: Vec<FilterKind> = Vec::new();
    for (_, rep) in entries {
        for f in &rep.filters {
            if !kinds.contains(&f.kind) {
                kinds.push(f.kind);
            }
        }
    }
    let mut scalings = Vec::new();
    for kind in kinds {
        let pts: Vec<(f64, f64)> = entries
            .iter()
            .filter_map(|(eps, rep)| {
                rep.filter(kind)
                    .filter(|f| f.mtll > 0.0)
                    .map(|f| (1.0 / (eps * eps), f.mtll.ln()))
            })
            .collect();
        if pts.len() < 2 {
            continue;
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let (slope, intercept, r_squared) = linear_fit(&xs, &ys)?;
        scalings.push(FilterScaling { kind, slope, intercept, r_squared });
    }
    let ratios = entries
        .iter()
        .map(|(eps, rep)| {
            let get = |k| rep.filter(k).map(|f: &FilterReport| f.mtll);
            let mne = get(FilterKind::Mne);
            RatioRow {
                eps: *eps,
                mne_over_pll: mne.zip(get(FilterKind::Pll)).map(|(a, b)| a / b),
                mne_over_ekf: mne.zip(get(FilterKind::Ekf)).map(|(a, b)| a / b),
            }
        })
        .collect();
    Ok(CompareSummary { scalings, ratios })
}
