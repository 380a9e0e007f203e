//! Regularized local polynomial estimation around a single center.
//!
//! For a center `u` and bandwidth `h` the local Gram matrix `B`, moment vector
//! `a` and diagonal matrix `D` are kernel-weighted sums over the sample, scaled by
//! `1 / (n h^d)`. The fit solves `(B + tau I [lambda_min(B) < tau]) theta = a` and
//! evaluates `theta^T U((x - u) / h)`. With no sample point inside the closed ball
//! `B(u, h)` the fit is empty and evaluates to zero.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis_kernel::{KernelSpec, MultiIndexBasis};
use crate::error::{invalid, Result};
use crate::linalg;
use crate::neighbors::BucketIndex;

/// A sample `(X_i, Y_i)` with every `X_i` in `[0,1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    /// `x` holds the points row-major, `dim` coordinates per point.
    pub fn new(dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return invalid("dataset dimension must be at least 1");
        }
        if x.len() != dim * y.len() {
            return invalid(format!(
                "dataset has {} coordinates for {} responses in dimension {dim}",
                x.len(),
                y.len()
            ));
        }
        if let Some(c) = x.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return invalid(format!("design coordinate {c} lies outside [0, 1]"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return invalid("responses must be finite");
        }
        Ok(Self { dim, x, y })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn response(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn points(&self) -> &[f64] {
        &self.x
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    /// Same design with responses replaced.
    pub fn with_responses(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.dim, self.x.clone(), y)
    }
}

/// Kernel-weighted local moments at `(u, h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMoments {
    pub gram: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Sample points in the closed ball `B(u, h)`.
    pub n_local: usize,
}

impl LocalMoments {
    /// Diagonal of the Gram matrix, which is exactly the `D` matrix.
    pub fn diag(&self) -> DVector<f64> {
        self.gram.diagonal()
    }
}

fn check_query(data: &Dataset, u: &[f64], h: f64, kernel: &KernelSpec, basis: &MultiIndexBasis) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return invalid(format!("bandwidth must be positive and finite, got {h}"));
    }
    if u.len() != data.dim() || kernel.dim() != data.dim() || basis.dim() != data.dim() {
        return invalid("center, kernel, basis and data dimensions disagree");
    }
    Ok(())
}

fn accumulate(
    data: &Dataset,
    u: &[f64],
    h: f64,
    kernel: &KernelSpec,
    basis: &MultiIndexBasis,
    candidates: impl FnOnce(&mut dyn FnMut(usize)),
) -> LocalMoments {
    let nb = basis.len();
    let dim = data.dim();
    let mut gram = DMatrix::<f64>::zeros(nb, nb);
    let mut rhs = DVector::<f64>::zeros(nb);
    let mut n_local = 0usize;
    let mut scaled = vec![0.0; dim];
    let mut ub = vec![0.0; nb];
    let h2 = h * h;
    let mut visit = |i: usize| {
        let xi = data.point(i);
        let mut sq = 0.0;
        let mut sq_scaled = 0.0;
        for k in 0..dim {
            let diff = xi[k] - u[k];
            sq += diff * diff;
            scaled[k] = diff / h;
            sq_scaled += scaled[k] * scaled[k];
        }
        if sq <= h2 {
            n_local += 1;
        }
        let w = kernel.eval_sq_norm(sq_scaled);
        if w == 0.0 {
            return;
        }
        basis.eval_into(&scaled, &mut ub);
        let wy = w * data.response(i);
        for a in 0..nb {
            let wa = w * ub[a];
            for b in a..nb {
                gram[(a, b)] += wa * ub[b];
            }
            rhs[a] += wy * ub[a];
        }
    };
    candidates(&mut visit);
    let norm = 1.0 / (data.len() as f64 * h.powi(dim as i32));
    for a in 0..nb {
        for b in a..nb {
            let v = gram[(a, b)] * norm;
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
        rhs[a] *= norm;
    }
    LocalMoments { gram, rhs, n_local }
}

/// Local moments by a full pass over the sample.
pub fn local_moments(
    data: &Dataset,
    u: &[f64],
    h: f64,
    kernel: &KernelSpec,
    basis: &MultiIndexBasis,
) -> Result<LocalMoments> {
    check_query(data, u, h, kernel, basis)?;
    Ok(accumulate(data, u, h, kernel, basis, |f| {
        (0..data.len()).for_each(f)
    }))
}

/// `B_{uh} = (1/(n h^d)) sum_i U U^T K` evaluated at `(X_i - u)/h`.
pub fn assemble_b(
    data: &Dataset,
    u: &[f64],
    h: f64,
    kernel: &KernelSpec,
    basis: &MultiIndexBasis,
) -> Result<DMatrix<f64>> {
    Ok(local_moments(data, u, h, kernel, basis)?.gram)
}

/// `a_{uh} = (1/(n h^d)) sum_i Y_i U K`.
pub fn assemble_a(
    data: &Dataset,
    u: &[f64],
    h: f64,
    kernel: &KernelSpec,
    basis: &MultiIndexBasis,
) -> Result<DVector<f64>> {
    Ok(local_moments(data, u, h, kernel, basis)?.rhs)
}

/// Diagonal matrix `D_{uh}` sharing its diagonal with `B_{uh}`.
pub fn assemble_d(
    data: &Dataset,
    u: &[f64],
    h: f64,
    kernel: &KernelSpec,
    basis: &MultiIndexBasis,
) -> Result<DMatrix<f64>> {
    Ok(DMatrix::from_diagonal(&local_moments(data, u, h, kernel, basis)?.diag()))
}

/// One regularized local polynomial fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    center: Vec<f64>,
    bandwidth: f64,
    tau: f64,
    basis: Arc<MultiIndexBasis>,
    coefficients: Option<Vec<f64>>,
    n_local: usize,
    regularized: bool,
    lambda_min: f64,
    condition: f64,
}

impl LocalFit {
    /// Builds the fit from precomputed moments at `(center, bandwidth)`.
    pub fn from_moments(
        moments: &LocalMoments,
        center: &[f64],
        bandwidth: f64,
        tau: f64,
        basis: Arc<MultiIndexBasis>,
    ) -> Result<Self> {
        if !(tau > 0.0) {
            return invalid(format!("regularization tau must be positive, got {tau}"));
        }
        let mut fit = Self {
            center: center.to_vec(),
            bandwidth,
            tau,
            basis,
            coefficients: None,
            n_local: moments.n_local,
            regularized: false,
            lambda_min: 0.0,
            condition: f64::INFINITY,
        };
        if moments.n_local == 0 {
            return Ok(fit);
        }
        let (lo, hi) = linalg::eigen_range(&moments.gram);
        fit.lambda_min = lo;
        let mut reg = moments.gram.clone();
        let (mut lo_reg, mut hi_reg) = (lo, hi);
        if lo < tau {
            for k in 0..reg.nrows() {
                reg[(k, k)] += tau;
            }
            fit.regularized = true;
            lo_reg += tau;
            hi_reg += tau;
        }
        fit.condition = hi_reg / lo_reg;
        let theta = linalg::solve_spd(&reg, &moments.rhs)?;
        fit.coefficients = Some(theta.iter().copied().collect());
        Ok(fit)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn basis(&self) -> &MultiIndexBasis {
        &self.basis
    }

    /// `None` when the closed ball around the center holds no sample point.
    pub fn coefficients(&self) -> Option<&[f64]> {
        self.coefficients.as_deref()
    }

    pub fn n_local(&self) -> usize {
        self.n_local
    }

    /// Whether `tau I` was added to the Gram matrix.
    pub fn regularized(&self) -> bool {
        self.regularized
    }

    /// Smallest eigenvalue of the unregularized Gram matrix.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Spectral condition number of the matrix actually solved.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `theta^T U((x - u)/h)`, or zero for an empty fit.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let Some(theta) = &self.coefficients else {
            return 0.0;
        };
        let scaled: Vec<f64> = x
            .iter()
            .zip(&self.center)
            .map(|(xi, ui)| (xi - ui) / self.bandwidth)
            .collect();
        let mut ub = vec![0.0; theta.len()];
        self.basis.eval_into(&scaled, &mut ub);
        theta.iter().zip(&ub).map(|(t, v)| t * v).sum()
    }
}

/// Regularized local polynomial fit at center `u` by a full pass over the sample.
pub fn fit_local(
    data: &Dataset,
    u: &[f64],
    h: f64,
    tau: f64,
    kernel: &KernelSpec,
    basis: &MultiIndexBasis,
) -> Result<LocalFit> {
    let moments = local_moments(data, u, h, kernel, basis)?;
    LocalFit::from_moments(&moments, u, h, tau, Arc::new(basis.clone()))
}

pub fn eval_local(fit: &LocalFit, x: &[f64]) -> f64 {
    fit.eval(x)
}

/// Default regularization `1 / (n h^d)`.
pub fn default_tau(h: f64, n: usize, dim: usize) -> f64 {
    1.0 / (n as f64 * h.powi(dim as i32))
}

/// Repeated local fits over one sample, backed by a spatial index.
#[derive(Debug, Clone)]
pub struct LocalFitter<'a> {
    data: &'a Dataset,
    index: BucketIndex,
    kernel: KernelSpec,
    basis: Arc<MultiIndexBasis>,
}

impl<'a> LocalFitter<'a> {
    pub fn new(data: &'a Dataset, kernel: KernelSpec, basis: MultiIndexBasis) -> Result<Self> {
        if kernel.dim() != data.dim() || basis.dim() != data.dim() {
            return invalid("kernel, basis and data dimensions disagree");
        }
        Ok(Self {
            data,
            index: BucketIndex::new(data),
            kernel,
            basis: Arc::new(basis),
        })
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn basis(&self) -> &Arc<MultiIndexBasis> {
        &self.basis
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn moments(&self, u: &[f64], h: f64) -> Result<LocalMoments> {
        check_query(self.data, u, h, &self.kernel, &self.basis)?;
        Ok(accumulate(self.data, u, h, &self.kernel, &self.basis, |f| {
            self.index.for_each_near(u, h, f)
        }))
    }

    pub fn fit(&self, u: &[f64], h: f64, tau: f64) -> Result<LocalFit> {
        let m = self.moments(u, h)?;
        LocalFit::from_moments(&m, u, h, tau, self.basis.clone())
    }
}
