//! Subcommand implementations.

use std::time::Instant;

use advreg::adaptive::{fit_adaptive, AdaptiveConfig, AdaptiveEstimator};
use advreg::attacks::{deviation_functional_g, SupMode, SupQuery};
use advreg::localpoly::{Dataset, LocalFit};
use advreg::partition::{default_resolution, fit_pp, tune_bandwidth, PpConfig, PpEstimator};
use advreg::risk::{estimate_risk, RiskEstimate, RiskSpec};
use advreg::testbed::{build_packing, hamming, sample_dataset, SeededRng, Truth};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EstimatorConfig, ExperimentConfig, Real};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub n: usize,
    pub r: f64,
    pub beta: f64,
    pub q: Real,
    pub estimator: String,
    pub attack: String,
    pub risk_mean: f64,
    pub risk_stderr: f64,
    pub slope_local: Option<f64>,
    pub phase: String,
    pub mean_selected_h: Option<f64>,
    pub wall_ms: u64,
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy)]
struct Cell<'a> {
    estimator: &'a EstimatorConfig,
    n: usize,
    r: f64,
    beta: f64,
    q: f64,
}

fn truth_for(cfg: &ExperimentConfig, beta: f64, r: f64) -> advreg::Result<Truth> {
    cfg.truth.build(cfg.truth.beta().map(|_| beta), Some(r))
}

fn pp_config(est: &EstimatorConfig, beta: f64, dim: usize, n: usize, r: f64, q: f64) -> advreg::Result<PpConfig> {
    let EstimatorConfig::Pp { degree, kernel, c_h, h, m, tau } = *est else {
        unreachable!("caller checks the estimator kind")
    };
    let h = match h {
        Some(h) => h,
        None => tune_bandwidth(beta, dim, n, r, q, c_h)?,
    };
    Ok(PpConfig { m: m.unwrap_or_else(|| default_resolution(h)), degree, h, tau, kernel })
}

fn risk_spec(cfg: &ExperimentConfig, dim: usize, r: f64, q: f64) -> advreg::Result<RiskSpec> {
    let attack = cfg.attack.build(dim, r)?;
    let mut spec = RiskSpec::new(q, attack, cfg.risk.test_draws, cfg.risk.replications)?;
    spec.query = cfg.risk.query(dim)?;
    if let Some(p) = cfg.risk.probe_per_axis {
        spec.probe_per_axis = p;
    }
    Ok(spec)
}

fn estimate(cfg: &ExperimentConfig, cell: Cell<'_>, truth: &Truth) -> advreg::Result<RiskEstimate> {
    let dim = truth.dim();
    let spec = risk_spec(cfg, dim, cell.r, cell.q)?;
    let design = cfg.design.build();
    let noise = cfg.noise.build();
    let rng = SeededRng::new(cfg.seed);
    match cell.estimator {
        EstimatorConfig::Pp { .. } => {
            let pp = pp_config(cell.estimator, cell.beta, dim, cell.n, cell.r, cell.q)?;
            estimate_risk(truth, |d: &Dataset| fit_pp(d, &pp), &spec, &design, &noise, cell.n, rng)
        }
        EstimatorConfig::Adaptive { .. } => {
            let ac = cell.estimator.adaptive().expect("adaptive estimator");
            estimate_risk(truth, |d: &Dataset| fit_adaptive(d, &ac), &spec, &design, &noise, cell.n, rng)
        }
    }
}

fn run_cell(cfg: &ExperimentConfig, cell: Cell<'_>, timestamps: bool) -> Result<ResultRow, CliError> {
    let start = Instant::now();
    let truth = truth_for(cfg, cell.beta, cell.r)?;
    let est = estimate(cfg, cell, &truth).map_err(|e| {
        CliError::from(e).context(format!(
            "cell n={} r={} beta={} q={} estimator={}",
            cell.n,
            cell.r,
            cell.beta,
            Real(cell.q),
            cell.estimator.label()
        ))
    })?;
    let wall_ms = if timestamps { start.elapsed().as_millis() as u64 } else { 0 };
    info!(
        "n={} r={} beta={} q={} {}: risk {:.6e} +/- {:.2e}",
        cell.n,
        cell.r,
        cell.beta,
        Real(cell.q),
        cell.estimator.label(),
        est.mean,
        est.std_error
    );
    Ok(ResultRow {
        n: cell.n,
        r: cell.r,
        beta: cell.beta,
        q: Real(cell.q),
        estimator: cell.estimator.label().to_string(),
        attack: est.spec.attack.label(),
        risk_mean: est.mean,
        risk_stderr: est.std_error,
        slope_local: None,
        phase: String::new(),
        mean_selected_h: est.mean_selected_h,
        wall_ms,
    })
}

fn sorted_unique(ns: &[usize]) -> Vec<usize> {
    let mut v = ns.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Fills `slope_local` and `phase` on a slice of rows ordered by increasing `n`.
fn classify(rows: &mut [ResultRow], identity: bool, band: f64) {
    let k = rows.len();
    for i in 0..k {
        let (a, b) = if i == 0 { (0, 1) } else { (i - 1, i) };
        let pair = (b < k).then(|| (&rows[a], &rows[b]));
        let ratio = pair.map(|(x, y)| y.risk_mean / x.risk_mean);
        rows[i].slope_local = pair.and_then(|(x, y)| {
            let s = (y.risk_mean / x.risk_mean).ln() / (y.n as f64 / x.n as f64).ln();
            s.is_finite().then_some(s)
        });
        rows[i].phase = if identity || rows[i].r == 0.0 {
            "standard".into()
        } else {
            match ratio {
                Some(q) if (1.0 - band..=1.0 + band).contains(&q) => "attack-dominated".into(),
                Some(_) => "standard".into(),
                None => "undetermined".into(),
            }
        };
    }
}

pub fn sweep(cfg: &ExperimentConfig, timestamps: bool) -> Result<Vec<ResultRow>, CliError> {
    let ns = sorted_unique(&cfg.sweep.n);
    let mut cells = Vec::new();
    for estimator in &cfg.estimators {
        for beta in cfg.betas() {
            for q in &cfg.sweep.q {
                for &r in &cfg.sweep.r {
                    for &n in &ns {
                        cells.push(Cell { estimator, n, r, beta, q: q.0 });
                    }
                }
            }
        }
    }
    info!("sweep over {} cells", cells.len());
    let mut rows = cells
        .par_iter()
        .map(|&c| run_cell(cfg, c, timestamps))
        .collect::<Result<Vec<_>, _>>()?;
    for slice in rows.chunks_mut(ns.len()) {
        classify(slice, cfg.attack.is_identity(), cfg.phase.band);
    }
    Ok(rows)
}

/// Single cell per estimator at the first value of every axis.
pub fn evaluate(cfg: &ExperimentConfig, timestamps: bool) -> Result<Vec<ResultRow>, CliError> {
    let mut rows = Vec::new();
    for estimator in &cfg.estimators {
        let cell = Cell { estimator, n: cfg.sweep.n[0], r: cfg.sweep.r[0], beta: cfg.betas()[0], q: cfg.sweep.q[0].0 };
        let mut row = run_cell(cfg, cell, timestamps)?;
        classify(std::slice::from_mut(&mut row), cfg.attack.is_identity(), cfg.phase.band);
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub cell: usize,
    pub center: Vec<f64>,
    pub h: f64,
    pub n_local: usize,
    pub regularized: bool,
    pub coefficients: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub estimator: String,
    pub n: usize,
    pub m: usize,
    pub cells: Vec<CellSummary>,
}

fn summarize_cells(fits: &[LocalFit]) -> Vec<CellSummary> {
    fits.iter()
        .enumerate()
        .map(|(i, f)| CellSummary {
            cell: i,
            center: f.center().to_vec(),
            h: f.bandwidth(),
            n_local: f.n_local(),
            regularized: f.regularized(),
            coefficients: f.coefficients().map(<[f64]>::to_vec),
        })
        .collect()
}

fn training_data(cfg: &ExperimentConfig, truth: &Truth, n: usize) -> advreg::Result<Dataset> {
    let mut rng = SeededRng::new(cfg.seed).data_stream(0);
    sample_dataset(truth, &cfg.design.build(), &cfg.noise.build(), n, &mut rng)
}

/// Fits every configured estimator once on replication-0 data.
pub fn fit(cfg: &ExperimentConfig) -> Result<Vec<FitSummary>, CliError> {
    let (n, r, beta, q) = (cfg.sweep.n[0], cfg.sweep.r[0], cfg.betas()[0], cfg.sweep.q[0].0);
    let truth = truth_for(cfg, beta, r)?;
    let data = training_data(cfg, &truth, n)?;
    let mut out = Vec::new();
    for est in &cfg.estimators {
        let summary = match est {
            EstimatorConfig::Pp { .. } => {
                let pp: PpEstimator = fit_pp(&data, &pp_config(est, beta, truth.dim(), n, r, q)?)?;
                FitSummary { estimator: "pp".into(), n, m: pp.partition().m(), cells: summarize_cells(pp.fits()) }
            }
            EstimatorConfig::Adaptive { .. } => {
                let ad = fit_adaptive(&data, &est.adaptive().expect("adaptive estimator"))?;
                FitSummary {
                    estimator: "adaptive".into(),
                    n,
                    m: ad.partition().m(),
                    cells: summarize_cells(ad.fits()),
                }
            }
        };
        info!("fitted {} with {} cells", summary.estimator, summary.cells.len());
        out.push(summary);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptReport {
    pub n: usize,
    pub c_lep: f64,
    pub bandwidth_grid: Vec<f64>,
    pub mean_selected_h: f64,
    pub min_selected_h: f64,
    pub max_selected_h: f64,
    pub cells: Vec<CellSummary>,
}

/// Fits the first adaptive estimator of the config (or a default one) and reports its selections.
pub fn adapt(cfg: &ExperimentConfig) -> Result<AdaptReport, CliError> {
    let ac = cfg.estimators.iter().find_map(EstimatorConfig::adaptive).unwrap_or(AdaptiveConfig {
        beta_max: 2.0,
        c_lep: None,
        degree: 1,
        kernel: Default::default(),
        m: None,
    });
    let n = cfg.sweep.n[0];
    let truth = truth_for(cfg, cfg.betas()[0], cfg.sweep.r[0])?;
    let data = training_data(cfg, &truth, n)?;
    let est: AdaptiveEstimator = fit_adaptive(&data, &ac)?;
    let sel = est.selected_bandwidths();
    Ok(AdaptReport {
        n,
        c_lep: est.c_lep(),
        bandwidth_grid: est.grid().bandwidths().to_vec(),
        mean_selected_h: est.mean_selected_bandwidth(),
        min_selected_h: sel.iter().copied().fold(f64::INFINITY, f64::min),
        max_selected_h: sel.iter().copied().fold(0.0, f64::max),
        cells: summarize_cells(est.fits()),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PackingStats {
    pub l_n: usize,
    pub count: usize,
    pub min_hamming: usize,
    pub required: f64,
    pub separated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HardRisk {
    pub estimator: String,
    pub n: usize,
    pub risk_mean: f64,
    pub risk_stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoRow {
    pub r: f64,
    pub beta: f64,
    pub q: Real,
    pub g: f64,
    pub g_dense: f64,
    pub kappa: f64,
    pub packing: Option<PackingStats>,
    pub risks: Vec<HardRisk>,
}

fn dense_query(dim: usize) -> advreg::Result<SupQuery> {
    let m = SupQuery::default_for(dim).m();
    let factor = if dim == 1 { 4 } else { 2 };
    SupQuery::new(factor * (m - 1) + 1, SupMode::GridBox)
}

/// Deviation functional, its dense-lattice oracle, packing statistics and hard-instance risks.
pub fn demo_lower_bound(cfg: &ExperimentConfig) -> Result<Vec<DemoRow>, CliError> {
    if !cfg.truth.is_hard_instance() {
        return Err(CliError::Config("demo-lower-bound needs a staircase or bump truth".into()));
    }
    if cfg.sweep.q.iter().any(|q| q.0.is_infinite()) {
        return Err(CliError::Config("sweep.q: the deviation functional needs finite q".into()));
    }
    let dim = cfg.truth.dim();
    let quad = cfg.demo.quad;
    let query = cfg.risk.query(dim)?;
    let dense = dense_query(dim)?;
    let mut rows = Vec::new();
    for beta in cfg.betas() {
        for &r in &cfg.sweep.r {
            let f0 = truth_for(cfg, beta, r)?;
            let attack = cfg.attack.build(dim, r)?;
            let packing = if beta <= 1.0 {
                let c_beta = match cfg.truth {
                    crate::config::TruthConfig::Staircase { c_beta, .. } | crate::config::TruthConfig::Bump { c_beta, .. } => c_beta,
                    _ => unreachable!("hard instance"),
                };
                let mut rng = SeededRng::new(cfg.seed).stream(u64::MAX);
                let family = build_packing(&f0, beta, c_beta, cfg.demo.l_n, cfg.demo.packing_count, &mut rng)?;
                let signs: Vec<&[i8]> = family
                    .iter()
                    .map(|t| match t {
                        Truth::Packed(p) => p.signs.as_slice(),
                        _ => unreachable!("packing returns packed truths"),
                    })
                    .collect();
                let mut min_hamming = cfg.demo.l_n.pow(dim as u32);
                for i in 0..signs.len() {
                    for j in i + 1..signs.len() {
                        min_hamming = min_hamming.min(hamming(signs[i], signs[j]));
                    }
                }
                let required = cfg.demo.l_n.pow(dim as u32) as f64 / 8.0;
                Some(PackingStats {
                    l_n: cfg.demo.l_n,
                    count: cfg.demo.packing_count,
                    min_hamming,
                    required,
                    separated: min_hamming as f64 >= required,
                })
            } else {
                None
            };
            for q in &cfg.sweep.q {
                let g = deviation_functional_g(&f0, &attack, q.0, quad, &query)?;
                let g_dense = deviation_functional_g(&f0, &attack, q.0, quad, &dense)?;
                let kappa = if r > 0.0 { g_dense / r.powf(beta.min(1.0)) } else { 0.0 };
                let mut risks = Vec::new();
                for estimator in &cfg.estimators {
                    let cell = Cell { estimator, n: cfg.sweep.n[0], r, beta, q: q.0 };
                    let est = estimate(cfg, cell, &f0)?;
                    risks.push(HardRisk {
                        estimator: estimator.label().into(),
                        n: cell.n,
                        risk_mean: est.mean,
                        risk_stderr: est.std_error,
                    });
                }
                info!("r={r} beta={beta} q={q}: G = {g:.6e} (dense {g_dense:.6e})");
                rows.push(DemoRow { r, beta, q: *q, g, g_dense, kappa, packing: packing.clone(), risks });
            }
        }
    }
    Ok(rows)
}
