//! The grid `Lambda_M` of cell centers and the piecewise local polynomial (PP) estimator.
//!
//! Centers sit at `(2k + 1) / (2M)` on every axis. A point is routed to its nearest
//! center; ties go to the center closer to the origin, so on each axis the cells are
//! `[0, 1/M], (1/M, 2/M], ..., ((M-1)/M, 1]`.

use rayon::prelude::*;

use crate::attacks::{check_point, generic_extremes, AttackSpec, Evaluable, Region, Segment, SupMode, SupQuery};
use crate::basis_kernel::{KernelKind, KernelSpec, MultiIndexBasis};
use crate::error::{invalid, Error, Result};
use crate::localpoly::{default_tau, Dataset, LocalFit, LocalFitter};

/// Hard cap on the number of cells.
pub const MAX_CELLS: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridPartition {
    m: usize,
    dim: usize,
}

impl GridPartition {
    pub fn new(m: usize, dim: usize) -> Result<Self> {
        if m == 0 {
            return invalid("grid resolution M must be at least 1");
        }
        if dim == 0 {
            return invalid("grid dimension must be at least 1");
        }
        let cells = (m as f64).powi(dim as i32);
        if cells > MAX_CELLS {
            return Err(Error::Resource(format!(
                "grid with M = {m} in dimension {dim} has {cells:e} cells, above the limit of {MAX_CELLS:e}"
            )));
        }
        Ok(Self { m, dim })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    /// Center coordinate `(2k + 1) / (2M)` of slab `k`.
    pub fn axis_center(&self, k: usize) -> f64 {
        (2 * k + 1) as f64 / (2 * self.m) as f64
    }

    /// Slab index of coordinate `c`, assuming `c` in `[0, 1]`.
    pub fn axis_cell(&self, c: f64) -> usize {
        let m = self.m;
        let guess = ((c * m as f64).ceil() as isize - 1).clamp(0, m as isize - 1) as usize;
        let lo = guess.saturating_sub(1);
        let hi = (guess + 1).min(m - 1);
        let mut best = lo;
        let mut best_d = (c - self.axis_center(lo)).abs();
        for k in lo + 1..=hi {
            let d = (c - self.axis_center(k)).abs();
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best
    }

    /// Per-axis slab indices to flat cell index, last axis fastest.
    pub fn flat_index(&self, ks: &[usize]) -> usize {
        ks.iter().fold(0, |acc, &k| acc * self.m + k)
    }

    pub fn unflatten(&self, mut cell: usize) -> Vec<usize> {
        let mut ks = vec![0; self.dim];
        for axis in (0..self.dim).rev() {
            ks[axis] = cell % self.m;
            cell /= self.m;
        }
        ks
    }

    /// Cell of `x` without validating the range; coordinates are clamped.
    pub fn cell_of_unchecked(&self, x: &[f64]) -> usize {
        x.iter().fold(0, |acc, &c| acc * self.m + self.axis_cell(c.clamp(0.0, 1.0)))
    }

    pub fn cell_of(&self, x: &[f64]) -> Result<usize> {
        check_point(x, self.dim)?;
        Ok(self.cell_of_unchecked(x))
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        self.unflatten(cell).into_iter().map(|k| self.axis_center(k)).collect()
    }

    pub fn nearest_center(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.center(self.cell_of(x)?))
    }

    /// Closed bounds `[k/M, (k+1)/M]` of slab `k`.
    pub fn axis_bounds(&self, k: usize) -> (f64, f64) {
        (k as f64 / self.m as f64, (k + 1) as f64 / self.m as f64)
    }
}

/// Bandwidth rule `c_h * max(r, n^{-1/(2 beta + d)})`, with `n / log n` in place of `n`
/// for the sup-norm risk, clamped to `(0, 1]`.
pub fn tune_bandwidth(beta: f64, dim: usize, n: usize, r: f64, q: f64, c_h: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return invalid(format!("smoothness beta must be positive, got {beta}"));
    }
    if dim == 0 || n == 0 {
        return invalid("dimension and sample size must be positive");
    }
    if !(r >= 0.0) || !(c_h > 0.0) || !(q >= 1.0) {
        return invalid("tuning requires r >= 0, c_h > 0 and q >= 1");
    }
    let nf = n as f64;
    let eff = if q.is_infinite() {
        if n < 2 {
            return invalid("sup-norm tuning needs n >= 2");
        }
        nf / nf.ln()
    } else {
        nf
    };
    let stat = eff.powf(-1.0 / (2.0 * beta + dim as f64));
    Ok((c_h * r.max(stat)).min(1.0))
}

/// Default grid resolution `ceil(1 / h)`.
pub fn default_resolution(h: f64) -> usize {
    (1.0 / h).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpConfig {
    pub m: usize,
    pub degree: usize,
    pub h: f64,
    /// `None` selects `1 / (n h^d)`.
    pub tau: Option<f64>,
    pub kernel: KernelKind,
}

/// One local fit per cell with piecewise evaluation.
#[derive(Debug, Clone)]
pub struct CellFits {
    partition: GridPartition,
    fits: Vec<LocalFit>,
}

impl CellFits {
    pub fn new(partition: GridPartition, fits: Vec<LocalFit>) -> Self {
        debug_assert_eq!(fits.len(), partition.num_cells());
        Self { partition, fits }
    }

    pub fn partition(&self) -> &GridPartition {
        &self.partition
    }

    pub fn fits(&self) -> &[LocalFit] {
        &self.fits
    }

    pub fn eval_cell(&self, cell: usize, x: &[f64]) -> f64 {
        self.fits[cell].eval(x)
    }

    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.eval_cell(self.partition.cell_of_unchecked(x), x)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_cell(self.partition.cell_of(x)?, x))
    }

    /// `(inf, sup)` over `A(x)`, probing each overlapped cell's polynomial on its closed piece.
    pub fn piecewise_extremes(&self, x: &[f64], attack: &AttackSpec, query: &SupQuery) -> Result<(f64, f64)> {
        if query.mode() == SupMode::RandomSample {
            return generic_extremes(&EvalView(self), x, attack, query);
        }
        let fx = self.eval(x)?;
        let mut acc = (fx, fx);
        match attack.region(x, query)? {
            Region::Point(_) => {}
            Region::Segment(seg) => self.segment_extremes(&seg, &mut acc),
            Region::Lines(segs) => segs.iter().for_each(|s| self.segment_extremes(s, &mut acc)),
            Region::Ball(ball) => {
                let p = &self.partition;
                let first: Vec<usize> = ball.lo.iter().map(|&c| p.axis_cell(c)).collect();
                let last: Vec<usize> = ball.hi.iter().map(|&c| p.axis_cell(c)).collect();
                // cells whose closure touches the box: extend by one where a face is shared
                let first: Vec<usize> = first
                    .iter()
                    .zip(&ball.lo)
                    .map(|(&k, &c)| if k > 0 && c <= p.axis_bounds(k).0 { k - 1 } else { k })
                    .collect();
                let last: Vec<usize> = last
                    .iter()
                    .zip(&ball.hi)
                    .map(|(&k, &c)| if k + 1 < p.m() && c >= p.axis_bounds(k).1 { k + 1 } else { k })
                    .collect();
                let extremes = ball.axis_extremes();
                let dim = p.dim();
                let mut ks = first.clone();
                loop {
                    let cell = p.flat_index(&ks);
                    let (clo, chi): (Vec<f64>, Vec<f64>) = (0..dim)
                        .map(|i| {
                            let (a, b) = p.axis_bounds(ks[i]);
                            (a.max(ball.lo[i]), b.min(ball.hi[i]))
                        })
                        .unzip();
                    if clo.iter().zip(&chi).all(|(a, b)| a <= b) {
                        let mut visit = |pt: &[f64]| {
                            let v = self.eval_cell(cell, pt);
                            acc.0 = acc.0.min(v);
                            acc.1 = acc.1.max(v);
                        };
                        ball.for_each_lattice_in(&clo, &chi, &mut visit);
                        for e in &extremes {
                            if e.iter().zip(clo.iter().zip(&chi)).all(|(c, (a, b))| a <= c && c <= b) {
                                visit(e);
                            }
                        }
                        for corner in 0..(1usize << dim) {
                            let pt: Vec<f64> =
                                (0..dim).map(|i| if corner >> i & 1 == 1 { chi[i] } else { clo[i] }).collect();
                            if ball.contains(&pt) {
                                visit(&pt);
                            }
                        }
                    }
                    let mut axis = dim;
                    loop {
                        if axis == 0 {
                            return Ok(acc);
                        }
                        axis -= 1;
                        if ks[axis] < last[axis] {
                            ks[axis] += 1;
                            break;
                        }
                        ks[axis] = first[axis];
                    }
                }
            }
        }
        Ok(acc)
    }

    fn segment_extremes(&self, seg: &Segment, acc: &mut (f64, f64)) {
        let p = &self.partition;
        let m = p.m() as f64;
        let mut breaks = vec![seg.k_lo, seg.k_hi];
        for (&o, &v) in seg.origin.iter().zip(&seg.direction) {
            if v == 0.0 {
                continue;
            }
            for j in 1..p.m() {
                let k = (j as f64 / m - o) / v;
                if k > seg.k_lo && k < seg.k_hi {
                    breaks.push(k);
                }
            }
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut pt = vec![0.0; p.dim()];
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if !(b > a) {
                continue;
            }
            seg.point_at(0.5 * (a + b), &mut pt);
            let cell = p.cell_of_unchecked(&pt);
            let start = seg.steps.partition_point(|&k| k < a);
            let inner = seg.steps[start..].iter().take_while(|&&k| k <= b);
            for &k in [a, b].iter().chain(inner) {
                seg.point_at(k, &mut pt);
                let v = self.eval_cell(cell, &pt);
                acc.0 = acc.0.min(v);
                acc.1 = acc.1.max(v);
            }
        }
    }
}

struct EvalView<'a>(&'a CellFits);

impl Evaluable for EvalView<'_> {
    fn dim(&self) -> usize {
        self.0.partition.dim()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.0.eval_unchecked(x)
    }
}

/// Fitted PP estimator: one regularized local fit per grid center.
#[derive(Debug, Clone)]
pub struct PpEstimator {
    cells: CellFits,
    config: PpConfig,
    tau: f64,
}

pub fn fit_pp(data: &Dataset, config: &PpConfig) -> Result<PpEstimator> {
    if !(config.h > 0.0) || !config.h.is_finite() {
        return invalid(format!("bandwidth h must be positive, got {}", config.h));
    }
    let dim = data.dim();
    let partition = GridPartition::new(config.m, dim)?;
    let tau = match config.tau {
        Some(t) if t > 0.0 => t,
        Some(t) => return invalid(format!("regularization tau must be positive, got {t}")),
        None => default_tau(config.h, data.len().max(1), dim),
    };
    let basis = MultiIndexBasis::new(config.degree, dim)?;
    let kernel = KernelSpec::new(config.kernel, dim)?;
    let fitter = LocalFitter::new(data, kernel, basis)?;
    let fits = (0..partition.num_cells())
        .into_par_iter()
        .map(|cell| fitter.fit(&partition.center(cell), config.h, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(PpEstimator {
        cells: CellFits::new(partition, fits),
        config: config.clone(),
        tau,
    })
}

impl PpEstimator {
    pub fn config(&self) -> &PpConfig {
        &self.config
    }

    /// Regularization level actually used.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn partition(&self) -> &GridPartition {
        self.cells.partition()
    }

    pub fn fits(&self) -> &[LocalFit] {
        self.cells.fits()
    }

    pub fn cells(&self) -> &CellFits {
        &self.cells
    }
}

pub fn eval_pp(est: &PpEstimator, x: &[f64]) -> Result<f64> {
    est.cells.eval(x)
}

impl Evaluable for PpEstimator {
    fn dim(&self) -> usize {
        self.cells.partition.dim()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.cells.eval_unchecked(x)
    }

    fn extremes_over(&self, x: &[f64], attack: &AttackSpec, query: &SupQuery) -> Result<(f64, f64)> {
        self.cells.piecewise_extremes(x, attack, query)
    }
}
