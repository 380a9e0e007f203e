//! Ground-truth regression functions, design densities, noise models and data generation.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::attacks::Evaluable;
use crate::error::{invalid, Result};
use crate::localpoly::Dataset;

/// `phi_0` on `[0, 1]`: zero, rising `(x - 1/4)^beta`, flat `4^{-beta}`, falling `(1 - x)^beta`.
pub fn eval_phi0(x: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return invalid(format!("phi_0 is defined for beta in (0, 1], got {beta}"));
    }
    if !(0.0..=1.0).contains(&x) {
        return invalid(format!("phi_0 argument {x} lies outside [0, 1]"));
    }
    Ok(phi0(x, beta))
}

fn phi0(x: f64, beta: f64) -> f64 {
    if x < 0.25 {
        0.0
    } else if x < 0.5 {
        (x - 0.25).powf(beta)
    } else if x < 0.75 {
        0.25f64.powf(beta)
    } else {
        (1.0 - x).max(0.0).powf(beta)
    }
}

/// `psi_0(t) = exp(-1 / (1 - (t - 1)^2))` on `[0, 1]`, zero elsewhere.
pub fn psi0(t: f64) -> f64 {
    if !(t > 0.0 && t <= 1.0) {
        return 0.0;
    }
    let s = t - 1.0;
    (-1.0 / (1.0 - s * s)).exp()
}

/// Unit mother bump `exp(-1 / (1 - 4 |x|^2))` on the open ball of radius 1/2.
fn unit_bump_sq(sq_norm: f64) -> f64 {
    let t = 1.0 - 4.0 * sq_norm;
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    /// `sum_k coef_k x^{powers_k}`.
    Polynomial { dim: usize, terms: Vec<(Vec<u32>, f64)> },
    /// `c |x - 1/2|^beta` with `c = C / (1 + (sqrt(d)/2)^beta)`, so the function lies in `F(beta, C)`.
    HolderPower { dim: usize, beta: f64, c_beta: f64 },
    /// Periodic staircase along `x_1` with period `8r`.
    StaircaseF0 { dim: usize, beta: f64, c_beta: f64, r: f64 },
    /// Smooth step along `x_1`, flat below `2r` and above `1 - 2r`.
    BumpF0 { dim: usize, beta: f64, amplitude: f64, r: f64 },
    /// `base + sum_l w_l phi(L (x - a_l)) / L^beta`.
    Packed(Box<PackedTruth>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedTruth {
    pub base: Truth,
    pub beta: f64,
    pub l_n: usize,
    /// Scale of the mother bump.
    pub amplitude: f64,
    pub signs: Vec<i8>,
}

impl Truth {
    pub fn polynomial(dim: usize, terms: Vec<(Vec<u32>, f64)>) -> Result<Self> {
        check_dim(dim)?;
        if terms.iter().any(|(p, c)| p.len() != dim || !c.is_finite()) {
            return invalid("polynomial terms need one power per dimension and finite coefficients");
        }
        Ok(Truth::Polynomial { dim, terms })
    }

    pub fn holder_power(dim: usize, beta: f64, c_beta: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(beta > 0.0 && beta <= 1.0) {
            return invalid(format!("holder power needs beta in (0, 1], got {beta}"));
        }
        check_positive("C_beta", c_beta)?;
        Ok(Truth::HolderPower { dim, beta, c_beta })
    }

    pub fn staircase(dim: usize, beta: f64, c_beta: f64, r: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(beta > 0.0 && beta <= 1.0) {
            return invalid(format!("staircase f0 needs beta in (0, 1], got {beta}"));
        }
        check_positive("C_beta", c_beta)?;
        if !(r > 0.0 && r < 0.125) {
            return invalid(format!("staircase f0 needs 0 < r < 1/8, got {r}"));
        }
        Ok(Truth::StaircaseF0 { dim, beta, c_beta, r })
    }

    /// `amplitude = None` selects `C_beta / 10`.
    pub fn bump(dim: usize, beta: f64, c_beta: f64, amplitude: Option<f64>, r: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(beta > 1.0) || !beta.is_finite() {
            return invalid(format!("bump f0 is the beta > 1 construction, got beta = {beta}"));
        }
        check_positive("C_beta", c_beta)?;
        let amplitude = amplitude.unwrap_or(c_beta / 10.0);
        check_positive("amplitude", amplitude)?;
        if !(r > 0.0 && r < 0.125) {
            return invalid(format!("bump f0 needs 0 < r < 1/8, got {r}"));
        }
        Ok(Truth::BumpF0 { dim, beta, amplitude, r })
    }

    pub fn dim(&self) -> usize {
        match self {
            Truth::Polynomial { dim, .. }
            | Truth::HolderPower { dim, .. }
            | Truth::StaircaseF0 { dim, .. }
            | Truth::BumpF0 { dim, .. } => *dim,
            Truth::Packed(p) => p.base.dim(),
        }
    }

    /// Declared `(beta, C_beta)` for the order-0 Holder classes.
    pub fn holder_params(&self) -> Option<(f64, f64)> {
        match self {
            Truth::HolderPower { beta, c_beta, .. } => Some((*beta, *c_beta)),
            Truth::StaircaseF0 { beta, c_beta, .. } => Some((*beta, *c_beta / 2.0)),
            _ => None,
        }
    }

    /// Number of staircase periods `K = floor(1 / (8r))`.
    pub fn staircase_periods(r: f64) -> usize {
        (1.0 / (8.0 * r) * (1.0 + 1e-12)).floor() as usize
    }

    fn eval_raw(&self, x: &[f64]) -> f64 {
        match self {
            Truth::Polynomial { terms, .. } => terms
                .iter()
                .map(|(p, c)| c * p.iter().zip(x).map(|(&k, xi)| xi.powi(k as i32)).product::<f64>())
                .sum(),
            Truth::HolderPower { dim, beta, c_beta } => {
                let c = c_beta / (1.0 + ((*dim as f64).sqrt() / 2.0).powf(*beta));
                let norm = x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>().sqrt();
                c * norm.powf(*beta)
            }
            Truth::StaircaseF0 { beta, c_beta, r, .. } => {
                let period = 8.0 * r;
                let k_total = Self::staircase_periods(*r);
                let x1 = x[0];
                let k = (x1 / period).floor() as usize;
                if k >= k_total {
                    return 0.0;
                }
                let local = ((x1 - k as f64 * period) / period).clamp(0.0, 1.0);
                0.5 * c_beta * period.powf(*beta) * phi0(local, *beta)
            }
            Truth::BumpF0 { amplitude, r, .. } => {
                let x1 = x[0];
                if x1 < 2.0 * r {
                    0.0
                } else if x1 < 1.0 - 2.0 * r {
                    amplitude * psi0((x1 - 2.0 * r) / (1.0 - 4.0 * r))
                } else {
                    amplitude * (-1.0f64).exp()
                }
            }
            Truth::Packed(p) => p.base.eval_raw(x) + p.perturbation(x),
        }
    }
}

impl PackedTruth {
    /// `sum_l w_l phi_l(x)`; only the cube containing `x` contributes.
    pub fn perturbation(&self, x: &[f64]) -> f64 {
        let l = self.l_n;
        let mut flat = 0usize;
        let mut sq = 0.0;
        for &c in x {
            let k = ((c * l as f64).floor() as usize).min(l - 1);
            flat = flat * l + k;
            let center = (k as f64 + 0.5) / l as f64;
            let z = l as f64 * (c - center);
            sq += z * z;
        }
        let phi = self.amplitude * unit_bump_sq(sq) / (l as f64).powf(self.beta);
        self.signs[flat] as f64 * phi
    }

    /// `phi_l(x)` for a single cube `l` (flat index), without the sign.
    pub fn phi_l(&self, l_index: usize, x: &[f64]) -> f64 {
        let l = self.l_n;
        let mut rem = l_index;
        let mut ks = vec![0usize; x.len()];
        for k in ks.iter_mut().rev() {
            *k = rem % l;
            rem /= l;
        }
        let sq: f64 = x
            .iter()
            .zip(&ks)
            .map(|(&c, &k)| {
                let z = l as f64 * (c - (k as f64 + 0.5) / l as f64);
                z * z
            })
            .sum();
        if x.iter().zip(&ks).any(|(&c, &k)| (l as f64 * c - k as f64 - 0.5).abs() > 0.5) {
            return 0.0;
        }
        self.amplitude * unit_bump_sq(sq) / (l as f64).powf(self.beta)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return invalid("dimension must be at least 1");
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return invalid(format!("{name} must be positive and finite, got {v}"));
    }
    Ok(())
}

impl Evaluable for Truth {
    fn dim(&self) -> usize {
        Truth::dim(self)
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.eval_raw(x)
    }
}

/// Evaluates `f` at `x`, validating `x` in `[0,1]^d`.
pub fn eval_truth(f: &Truth, x: &[f64]) -> Result<f64> {
    crate::attacks::check_point(x, f.dim())?;
    Ok(f.eval_raw(x))
}

/// Scale `c` with `c * unit_bump` in `F(beta, C_beta / 2)` for `beta <= 1`, also after
/// tiling disjoint rescaled copies.
///
/// The bump is radial, so its order-0 Holder constant equals that of the profile
/// along a diameter, which is maximized over all pairs of a dense 1-D grid. Pairs in
/// different cubes pick up a factor `2^{1 - beta}`.
pub fn mother_bump_scale(beta: f64, c_beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return invalid(format!("packing mother bump is certified for beta in (0, 1], got {beta}"));
    }
    check_positive("C_beta", c_beta)?;
    const GRID: usize = 2001;
    let pts: Vec<f64> = (0..GRID).map(|i| -0.5 + i as f64 / (GRID - 1) as f64).collect();
    let vals: Vec<f64> = pts.iter().map(|&t| unit_bump_sq(t * t)).collect();
    let mut quotient = 0.0f64;
    for i in 0..GRID {
        for j in i + 1..GRID {
            quotient = quotient.max((vals[i] - vals[j]).abs() / (pts[j] - pts[i]).powf(beta));
        }
    }
    // 1% margin over the grid maximum
    Ok(0.5 * c_beta / (2f64.powf(1.0 - beta) * quotient * 1.01))
}

/// Packing around `base`: sign vectors with pairwise Hamming distance at least `L^d / 8`.
pub fn build_packing(
    base: &Truth,
    beta: f64,
    c_beta: f64,
    l_n: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Truth>> {
    let dim = base.dim();
    if l_n == 0 || count == 0 {
        return invalid("packing needs L_n >= 1 and a positive count");
    }
    let cubes = (l_n as f64).powi(dim as i32);
    if cubes > 1e6 {
        return invalid(format!("packing with {cubes} cubes is too large"));
    }
    let cubes = cubes as usize;
    if cubes < 8 {
        return invalid(format!("separated packing needs L_n^d >= 8, got {cubes}"));
    }
    let amplitude = mother_bump_scale(beta, c_beta)?;
    let min_dist = cubes.div_ceil(8);
    let budget = 1000 * count;
    let mut accepted: Vec<Vec<i8>> = Vec::with_capacity(count);
    let mut tries = 0;
    while accepted.len() < count {
        if tries == budget {
            return invalid(format!(
                "could not find {count} sign vectors with separation {min_dist} in {budget} draws; reduce the count or raise L_n"
            ));
        }
        tries += 1;
        let w: Vec<i8> = (0..cubes).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        if accepted.iter().all(|v| hamming(v, &w) >= min_dist) {
            accepted.push(w);
        }
    }
    Ok(accepted
        .into_iter()
        .map(|signs| {
            Truth::Packed(Box::new(PackedTruth { base: base.clone(), beta, l_n, amplitude, signs }))
        })
        .collect())
}

pub fn hamming(a: &[i8], b: &[i8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Distribution of the design points on `[0,1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignSpec {
    Uniform,
    /// Density constant on each of `bins^d` equal boxes, proportional to `weights`.
    PiecewiseConstant { bins: usize, weights: Vec<f64> },
}

impl DesignSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if let DesignSpec::PiecewiseConstant { bins, weights } = self {
            if *bins == 0 || weights.len() != bins.pow(dim as u32) {
                return invalid(format!(
                    "piecewise constant design needs bins^d = {} weights, got {}",
                    bins.pow(dim as u32),
                    weights.len()
                ));
            }
            if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                return invalid("design weights must be positive so the density stays bounded away from zero");
            }
        }
        Ok(())
    }

    /// `(mu_min, mu_max)` of the density.
    pub fn density_bounds(&self, dim: usize) -> (f64, f64) {
        match self {
            DesignSpec::Uniform => (1.0, 1.0),
            DesignSpec::PiecewiseConstant { bins, weights } => {
                let total: f64 = weights.iter().sum();
                let cells = bins.pow(dim as u32) as f64;
                let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = weights.iter().copied().fold(0.0, f64::max);
                (lo / total * cells, hi / total * cells)
            }
        }
    }

    /// Draws `count` points, row-major.
    pub fn sample(&self, dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.validate(dim)?;
        let mut out = Vec::with_capacity(count * dim);
        match self {
            DesignSpec::Uniform => out.extend((0..count * dim).map(|_| rng.random::<f64>())),
            DesignSpec::PiecewiseConstant { bins, weights } => {
                let pick = WeightedIndex::new(weights).map_err(|e| crate::Error::InvalidInput(e.to_string()))?;
                for _ in 0..count {
                    let mut cell = pick.sample(rng);
                    let mut ks = vec![0usize; dim];
                    for k in ks.iter_mut().rev() {
                        *k = cell % bins;
                        cell /= bins;
                    }
                    for k in ks {
                        out.push(((k as f64 + rng.random::<f64>()) / *bins as f64).min(1.0));
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    Gaussian { sigma: f64 },
    /// Uniform on `[-scale, scale]`.
    Bounded { scale: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let v = match self {
            NoiseSpec::Gaussian { sigma } => *sigma,
            NoiseSpec::Bounded { scale } => *scale,
        };
        if !(v >= 0.0) || !v.is_finite() {
            return invalid(format!("noise level must be finite and nonnegative, got {v}"));
        }
        Ok(())
    }

    /// `E xi^2`.
    pub fn second_moment(&self) -> f64 {
        match self {
            NoiseSpec::Gaussian { sigma } => sigma * sigma,
            NoiseSpec::Bounded { scale } => scale * scale / 3.0,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            NoiseSpec::Gaussian { sigma } if sigma > 0.0 => {
                Normal::new(0.0, sigma).expect("validated sigma").sample(rng)
            }
            NoiseSpec::Bounded { scale } if scale > 0.0 => rng.random_range(-scale..=scale),
            _ => 0.0,
        }
    }
}

/// Seed plus independent substreams indexed by a counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// Training-data stream of replication `i`.
    pub fn data_stream(&self, replication: u64) -> ChaCha8Rng {
        self.stream(2 * replication)
    }

    /// Test-draw stream of replication `i`.
    pub fn test_stream(&self, replication: u64) -> ChaCha8Rng {
        self.stream(2 * replication + 1)
    }
}

/// `Y_i = f(X_i) + xi_i` with `X_i` from the design and `xi_i` from the noise model.
pub fn sample_dataset(
    f: &Truth,
    design: &DesignSpec,
    noise: &NoiseSpec,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    if n == 0 {
        return invalid("sample size must be at least 1");
    }
    noise.validate()?;
    let dim = f.dim();
    let x = design.sample(dim, n, rng)?;
    let y = x
        .chunks_exact(dim)
        .map(|xi| f.eval_raw(xi) + noise.sample(rng))
        .collect();
    Dataset::new(dim, x, y)
}
