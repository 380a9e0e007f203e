//! Monte Carlo estimates of adversarial and standard risks.
//!
//! Replications run in parallel on independent substreams and are combined in
//! replication order with pairwise summation, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;

use crate::adaptive::AdaptiveEstimator;
use crate::attacks::{AttackSpec, Evaluable, SupQuery};
use crate::error::{invalid, Result};
use crate::linalg::pairwise_sum;
use crate::localpoly::Dataset;
use crate::partition::PpEstimator;
use crate::testbed::{sample_dataset, DesignSpec, NoiseSpec, SeededRng, Truth};

/// A fitted regression estimate that can be attacked.
pub trait FittedEstimator: Evaluable + Send {
    /// Mean selected bandwidth for data-driven estimators.
    fn selected_bandwidth(&self) -> Option<f64> {
        None
    }
}

impl FittedEstimator for PpEstimator {}

impl FittedEstimator for AdaptiveEstimator {
    fn selected_bandwidth(&self) -> Option<f64> {
        Some(self.mean_selected_bandwidth())
    }
}

impl FittedEstimator for Truth {}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskSpec {
    /// `f64::INFINITY` selects the sup-norm risk.
    pub q: f64,
    pub attack: AttackSpec,
    pub query: SupQuery,
    pub test_draws: usize,
    pub replications: usize,
    /// Probe points per axis for the sup-norm risk.
    pub probe_per_axis: usize,
}

impl RiskSpec {
    /// Defaults: 2048 probe points in one dimension, 64 per axis otherwise.
    pub fn new(q: f64, attack: AttackSpec, test_draws: usize, replications: usize) -> Result<Self> {
        let dim = attack.dim();
        let spec = Self {
            q,
            query: SupQuery::default_for(dim),
            attack,
            test_draws,
            replications,
            probe_per_axis: if dim == 1 { 2048 } else { 64 },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q >= 1.0) {
            return invalid(format!("q must be at least 1, got {}", self.q));
        }
        if self.test_draws == 0 || self.replications == 0 {
            return invalid("test draws and replications must be positive");
        }
        if self.probe_per_axis < 2 {
            return invalid("sup-norm probe grid needs at least 2 points per axis");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub values: Vec<f64>,
    pub spec: RiskSpec,
    /// Mean over replications of the selected-bandwidth summary, when available.
    pub mean_selected_h: Option<f64>,
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn probe_grid(per_axis: usize, dim: usize) -> Vec<f64> {
    let total = per_axis.pow(dim as u32);
    let mut out = Vec::with_capacity(total * dim);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        out.extend(idx.iter().map(|&i| i as f64 / (per_axis - 1) as f64));
        for axis in (0..dim).rev() {
            idx[axis] += 1;
            if idx[axis] < per_axis {
                break;
            }
            idx[axis] = 0;
        }
    }
    out
}

fn worst_error<E: Evaluable + ?Sized>(est: &E, truth: &Truth, x: &[f64], spec: &RiskSpec) -> Result<f64> {
    let fx = truth.eval(x);
    let (lo, hi) = est.extremes_over(x, &spec.attack, &spec.query)?;
    Ok((hi - fx).abs().max((lo - fx).abs()))
}

/// Adversarial risk of one fitted estimate: `E sup |f^(X') - f(X)|^q` over fresh draws,
/// or the sup-norm version over the probe grid.
pub fn adversarial_risk_of<E: Evaluable + ?Sized>(
    est: &E,
    truth: &Truth,
    spec: &RiskSpec,
    design: &DesignSpec,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    let dim = truth.dim();
    if spec.q.is_infinite() {
        let grid = probe_grid(spec.probe_per_axis, dim);
        let mut worst = 0.0f64;
        for x in grid.chunks_exact(dim) {
            worst = worst.max(worst_error(est, truth, x, spec)?);
        }
        return Ok(worst);
    }
    let xs = design.sample(dim, spec.test_draws, rng)?;
    let vals = xs
        .chunks_exact(dim)
        .map(|x| Ok(worst_error(est, truth, x, spec)?.powf(spec.q)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&vals) / vals.len() as f64)
}

/// Standard risk `E |f^(X) - f(X)|^q` without any attack machinery.
pub fn standard_risk_of<E: Evaluable + ?Sized>(
    est: &E,
    truth: &Truth,
    q: f64,
    test_draws: usize,
    design: &DesignSpec,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    let dim = truth.dim();
    let xs = design.sample(dim, test_draws, rng)?;
    let vals: Vec<f64> = xs
        .chunks_exact(dim)
        .map(|x| (est.eval(x) - truth.eval(x)).abs().powf(q))
        .collect();
    Ok(pairwise_sum(&vals) / vals.len() as f64)
}

fn run_replications<T: Send>(
    replications: usize,
    f: impl Fn(u64) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    (0..replications as u64).into_par_iter().map(f).collect()
}

/// Monte Carlo adversarial risk over fresh training samples.
///
/// Replication `i` draws its training sample from substream `2i` and its test
/// points from substream `2i + 1`. Any failing replication aborts the estimate.
#[allow(clippy::too_many_arguments)]
pub fn estimate_risk<E, F>(
    truth: &Truth,
    factory: F,
    spec: &RiskSpec,
    design: &DesignSpec,
    noise: &NoiseSpec,
    n: usize,
    rng: SeededRng,
) -> Result<RiskEstimate>
where
    E: FittedEstimator,
    F: Fn(&Dataset) -> Result<E> + Sync + Send,
{
    spec.validate()?;
    if spec.attack.dim() != truth.dim() {
        return invalid("attack and truth dimensions disagree");
    }
    let per_rep = run_replications(spec.replications, |i| {
        let data = sample_dataset(truth, design, noise, n, &mut rng.data_stream(i))?;
        let est = factory(&data)?;
        let risk = adversarial_risk_of(&est, truth, spec, design, &mut rng.test_stream(i))?;
        Ok((risk, est.selected_bandwidth()))
    })?;
    let values: Vec<f64> = per_rep.iter().map(|p| p.0).collect();
    let (mean, std_error) = mean_and_stderr(&values);
    let hs: Vec<f64> = per_rep.iter().filter_map(|p| p.1).collect();
    let mean_selected_h = (hs.len() == per_rep.len()).then(|| pairwise_sum(&hs) / hs.len() as f64);
    Ok(RiskEstimate { mean, std_error, values, spec: spec.clone(), mean_selected_h })
}

/// Standard `L_q` risk on the same substreams as [`estimate_risk`].
#[allow(clippy::too_many_arguments)]
pub fn estimate_standard_risk<E, F>(
    truth: &Truth,
    factory: F,
    q: f64,
    test_draws: usize,
    replications: usize,
    design: &DesignSpec,
    noise: &NoiseSpec,
    n: usize,
    rng: SeededRng,
) -> Result<(f64, f64, Vec<f64>)>
where
    E: FittedEstimator,
    F: Fn(&Dataset) -> Result<E> + Sync + Send,
{
    if !(q >= 1.0) || !q.is_finite() || test_draws == 0 || replications == 0 {
        return invalid("standard risk needs finite q >= 1 and positive draw counts");
    }
    let values = run_replications(replications, |i| {
        let data = sample_dataset(truth, design, noise, n, &mut rng.data_stream(i))?;
        let est = factory(&data)?;
        standard_risk_of(&est, truth, q, test_draws, design, &mut rng.test_stream(i))
    })?;
    let (mean, se) = mean_and_stderr(&values);
    Ok((mean, se, values))
}

/// Outcome of the TRADES sandwich check.
#[derive(Debug, Clone, PartialEq)]
pub struct TradesReport {
    /// `T - E xi^2`.
    pub t_minus_noise: f64,
    /// Adversarial `L_2` risk.
    pub r: f64,
    /// Standard errors of the two paired margins.
    pub lower_margin_se: f64,
    pub upper_margin_se: f64,
    pub sandwich_ok: bool,
}

/// Checks `(T - E xi^2) / 5 <= R <= 2 (T - E xi^2)` within 3 standard errors.
///
/// `T = E[ |f^(X) - Y|^2 + sup_{X' in A(X)} |f^(X') - f^(X)|^2 ]` and
/// `R = E sup_{X' in A(X)} |f^(X') - f(X)|^2`, both on the same draws.
pub fn trades_diagnostic<E: Evaluable + ?Sized>(
    est: &E,
    truth: &Truth,
    spec: &RiskSpec,
    design: &DesignSpec,
    noise: &NoiseSpec,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<TradesReport> {
    if spec.q != 2.0 {
        return invalid(format!("the TRADES comparison is for q = 2, got {}", spec.q));
    }
    noise.validate()?;
    let dim = truth.dim();
    let xs = design.sample(dim, spec.test_draws, rng)?;
    let noise2 = noise.second_moment();
    let mut t = Vec::with_capacity(spec.test_draws);
    let mut r = Vec::with_capacity(spec.test_draws);
    for x in xs.chunks_exact(dim) {
        let fx = truth.eval(x);
        let y = fx + noise.sample(rng);
        let ex = est.eval(x);
        let (lo, hi) = est.extremes_over(x, &spec.attack, &spec.query)?;
        let self_dev = (hi - ex).max(ex - lo).max(0.0);
        t.push((ex - y).powi(2) + self_dev * self_dev);
        r.push((hi - fx).abs().max((lo - fx).abs()).powi(2));
    }
    let lower: Vec<f64> = r.iter().zip(&t).map(|(ri, ti)| ri - (ti - noise2) / 5.0).collect();
    let upper: Vec<f64> = r.iter().zip(&t).map(|(ri, ti)| 2.0 * (ti - noise2) - ri).collect();
    let (lo_mean, lo_se) = mean_and_stderr(&lower);
    let (up_mean, up_se) = mean_and_stderr(&upper);
    let (t_mean, _) = mean_and_stderr(&t);
    let (r_mean, _) = mean_and_stderr(&r);
    Ok(TradesReport {
        t_minus_noise: t_mean - noise2,
        r: r_mean,
        lower_margin_se: lo_se,
        upper_margin_se: up_se,
        sandwich_ok: lo_mean >= -3.0 * lo_se && up_mean >= -3.0 * up_se,
    })
}

/// Least-squares fit of `log risk` on `log n`: `(slope, intercept, r2)`.
pub fn rate_slope(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if points.len() < 3 {
        return invalid(format!("rate slope needs at least 3 points, got {}", points.len()));
    }
    if points.iter().any(|&(n, v)| !(n > 0.0) || !(v > 0.0) || !v.is_finite()) {
        return invalid("rate slope needs positive sample sizes and positive finite risks");
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = pairwise_sum(&xs) / k;
    let my = pairwise_sum(&ys) / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return invalid("rate slope needs at least two distinct sample sizes");
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok((slope, intercept, r2))
}
