//! Multi-index monomial bases and compactly supported radial kernels.
//!
//! The basis enumerates every multi-index `s` with `|s| <= degree`, ordered by
//! total degree and lexicographically within a degree. Evaluating it at `x`
//! yields the vector `(x^s / s!)_s`, whose first entry is always 1.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Result};

/// Largest supported polynomial degree; keeps every `s!` exact in a `u64`.
pub const MAX_DEGREE: usize = 20;

/// Ordered set of multi-indices `s` with `0 <= |s| <= degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiIndexBasis {
    degree: usize,
    dim: usize,
    indices: Vec<Vec<u32>>,
    inv_factorials: Vec<f64>,
    orders: Vec<u32>,
}

impl MultiIndexBasis {
    pub fn new(degree: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return invalid("basis dimension must be at least 1");
        }
        if degree > MAX_DEGREE {
            return invalid(format!(
                "basis degree {degree} exceeds the supported maximum {MAX_DEGREE}"
            ));
        }
        let mut indices = Vec::new();
        for total in 0..=degree as u32 {
            let mut current = vec![0u32; dim];
            push_compositions(total, 0, &mut current, &mut indices);
        }
        let inv_factorials = indices
            .iter()
            .map(|s| 1.0 / s.iter().map(|&k| factorial(k)).product::<u64>() as f64)
            .collect();
        let orders = indices.iter().map(|s| s.iter().sum()).collect();
        Ok(Self {
            degree,
            dim,
            indices,
            inv_factorials,
            orders,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of basis functions, `binomial(degree + dim, dim)`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    /// Total degree `|s|` of each basis element, in basis order.
    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    /// `s!` for each basis element.
    pub fn factorials(&self) -> Vec<u64> {
        self.indices
            .iter()
            .map(|s| s.iter().map(|&k| factorial(k)).product())
            .collect()
    }

    /// Writes `U(x) = (x^s / s!)_s` into `out`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.len());
        // powers[i * (degree + 1) + k] = x_i^k
        let stride = self.degree + 1;
        let mut powers = vec![1.0; self.dim * stride];
        for (i, &xi) in x.iter().enumerate() {
            for k in 1..stride {
                powers[i * stride + k] = powers[i * stride + k - 1] * xi;
            }
        }
        for ((o, s), inv) in out.iter_mut().zip(&self.indices).zip(&self.inv_factorials) {
            let mut v = *inv;
            for (i, &k) in s.iter().enumerate() {
                v *= powers[i * stride + k as usize];
            }
            *o = v;
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }
}

fn push_compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    let dim = current.len();
    if pos == dim - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    // Lexicographic order: smaller leading entries first.
    for k in 0..=remaining {
        current[pos] = k;
        push_compositions(remaining - k, pos + 1, current, out);
    }
    current[pos] = 0;
}

fn factorial(k: u32) -> u64 {
    (1..=k as u64).product()
}

/// Kernel shape. Both are radially non-increasing and supported on the closed unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    Rectangular,
    Epanechnikov,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    kind: KernelKind,
    dim: usize,
    scale: f64,
}

/// Volume of the unit Euclidean ball in `R^d`.
pub fn unit_ball_volume(dim: usize) -> f64 {
    let half = dim as f64 / 2.0;
    std::f64::consts::PI.powf(half) / gamma(half + 1.0)
}

impl KernelSpec {
    pub fn new(kind: KernelKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return invalid("kernel dimension must be at least 1");
        }
        let vd = unit_ball_volume(dim);
        let scale = match kind {
            KernelKind::Rectangular => 1.0 / vd,
            KernelKind::Epanechnikov => (dim as f64 + 2.0) / (2.0 * vd),
        };
        Ok(Self { kind, dim, scale })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Kernel value as a function of the squared Euclidean norm of its argument.
    #[inline]
    pub fn eval_sq_norm(&self, sq_norm: f64) -> f64 {
        if sq_norm > 1.0 {
            return 0.0;
        }
        match self.kind {
            KernelKind::Rectangular => self.scale,
            KernelKind::Epanechnikov => self.scale * (1.0 - sq_norm),
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.eval_sq_norm(u.iter().map(|v| v * v).sum())
    }

    /// Supremum of the kernel, attained at the origin.
    pub fn k_max(&self) -> f64 {
        self.scale
    }

    /// A pair `(k_min, delta)` with `K(u) >= k_min` whenever `|u| <= delta`.
    pub fn lower_bound(&self) -> (f64, f64) {
        match self.kind {
            KernelKind::Rectangular => (self.scale, 0.5),
            KernelKind::Epanechnikov => (0.75 * self.scale, 0.5),
        }
    }
}
