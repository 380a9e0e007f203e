//! Perturbation sets `A(x)` and worst-case evaluation over them.
//!
//! Supremum and infimum over an attack set are approximated by a finite candidate
//! set built from a lattice over the unclipped attack range. Lattices use the step
//! `r / (m - 1)` scaled by an integer, so doubling `r` while taking `m -> 2m - 1`
//! yields a superset of the previous candidates.

use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg::pairwise_sum;

/// A function that can be evaluated at points of `[0,1]^d`.
pub trait Evaluable: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64]) -> f64;

    /// `(inf, sup)` of the function over the candidate set of `A(x)`.
    fn extremes_over(&self, x: &[f64], attack: &AttackSpec, query: &SupQuery) -> Result<(f64, f64)> {
        generic_extremes(self, x, attack, query)
    }
}

/// Wraps a closure as an [`Evaluable`].
pub struct FnEval<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnEval<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Evaluable for FnEval<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackKind {
    Identity,
    /// `p` in `(0, inf]`; `f64::INFINITY` is the sup-norm ball.
    LpBall { p: f64 },
    /// Segment along the unit `direction`, `c_lo * r` backwards and `c_hi * r` forwards.
    Soda { direction: Vec<f64>, c_lo: f64, c_hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    kind: AttackKind,
    r: f64,
    dim: usize,
}

impl AttackSpec {
    pub fn identity(dim: usize) -> Result<Self> {
        if dim == 0 {
            return invalid("attack dimension must be at least 1");
        }
        Ok(Self { kind: AttackKind::Identity, r: 0.0, dim })
    }

    pub fn lp_ball(dim: usize, p: f64, r: f64) -> Result<Self> {
        if dim == 0 {
            return invalid("attack dimension must be at least 1");
        }
        if !(p > 0.0) {
            return invalid(format!("ball exponent p must be positive, got {p}"));
        }
        check_radius(r)?;
        Ok(Self { kind: AttackKind::LpBall { p }, r, dim })
    }

    /// `direction` is normalized; it must be nonzero.
    pub fn soda(direction: Vec<f64>, c_lo: f64, c_hi: f64, r: f64) -> Result<Self> {
        let dim = direction.len();
        if dim == 0 {
            return invalid("attack dimension must be at least 1");
        }
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return invalid("SODA direction must be a finite nonzero vector");
        }
        for (name, c) in [("c_lo", c_lo), ("c_hi", c_hi)] {
            if !(0.0..=1.0).contains(&c) {
                return invalid(format!("SODA {name} must lie in [0, 1], got {c}"));
            }
        }
        check_radius(r)?;
        let direction = direction.iter().map(|v| v / norm).collect();
        Ok(Self { kind: AttackKind::Soda { direction, c_lo, c_hi }, r, dim })
    }

    pub fn kind(&self) -> &AttackKind {
        &self.kind
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same geometry with a different magnitude.
    pub fn with_radius(&self, r: f64) -> Result<Self> {
        if matches!(self.kind, AttackKind::Identity) {
            return Ok(self.clone());
        }
        check_radius(r)?;
        Ok(Self { r, ..self.clone() })
    }

    /// Short label such as `identity`, `lp(inf,0.2)` or `soda(0.05)`.
    pub fn label(&self) -> String {
        match &self.kind {
            AttackKind::Identity => "identity".into(),
            AttackKind::LpBall { p } => format!("lp({},{})", fmt_p(*p), self.r),
            AttackKind::Soda { .. } => format!("soda({})", self.r),
        }
    }

    /// Geometric description of `A(x)` used to generate candidates.
    pub fn region(&self, x: &[f64], query: &SupQuery) -> Result<Region> {
        check_point(x, self.dim)?;
        if self.r == 0.0 || matches!(self.kind, AttackKind::Identity) {
            return Ok(Region::Point(x.to_vec()));
        }
        let m = query.m;
        match &self.kind {
            AttackKind::Identity => unreachable!(),
            AttackKind::Soda { direction, c_lo, c_hi } => Ok(Region::Segment(Segment::new(
                x,
                direction.clone(),
                c_lo * self.r,
                c_hi * self.r,
                m,
            ))),
            AttackKind::LpBall { p } => {
                if self.dim == 1 {
                    return Ok(Region::Segment(Segment::new(x, vec![1.0], self.r, self.r, m)));
                }
                match query.mode {
                    SupMode::GridLine => Ok(Region::Lines(
                        (0..self.dim)
                            .map(|i| {
                                let mut e = vec![0.0; self.dim];
                                e[i] = 1.0;
                                Segment::new(x, e, self.r, self.r, m)
                            })
                            .collect(),
                    )),
                    _ => Ok(Region::Ball(BallRegion::new(x, *p, self.r, m))),
                }
            }
        }
    }
}

fn fmt_p(p: f64) -> String {
    if p.is_infinite() {
        "inf".into()
    } else {
        format!("{p}")
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(r >= 0.0) || !r.is_finite() {
        return invalid(format!("attack magnitude r must be finite and nonnegative, got {r}"));
    }
    Ok(())
}

pub(crate) fn check_point(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return invalid(format!("point has {} coordinates, expected {dim}", x.len()));
    }
    if let Some(c) = x.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return invalid(format!("point coordinate {c} lies outside [0, 1]"));
    }
    Ok(())
}

/// How candidate points are placed inside `A(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SupMode {
    /// Segments along each coordinate axis through `x`.
    GridLine,
    /// Full `m`-per-axis lattice intersected with the ball.
    #[default]
    GridBox,
    /// `m` pseudo-random points, seeded by `x`.
    RandomSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupQuery {
    m: usize,
    mode: SupMode,
}

impl SupQuery {
    pub fn new(m: usize, mode: SupMode) -> Result<Self> {
        if m < 2 {
            return invalid(format!("candidate resolution m must be at least 2, got {m}"));
        }
        Ok(Self { m, mode })
    }

    /// 65 points for one-dimensional sets, 17 per axis otherwise.
    pub fn default_for(dim: usize) -> Self {
        Self {
            m: if dim <= 1 { 65 } else { 17 },
            mode: SupMode::GridBox,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mode(&self) -> SupMode {
        self.mode
    }
}

/// Admissible segment `{origin + k * direction : k_lo <= k <= k_hi}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub origin: Vec<f64>,
    pub direction: Vec<f64>,
    pub k_lo: f64,
    pub k_hi: f64,
    /// Sorted lattice offsets inside `[k_lo, k_hi]`, always containing 0 and both ends.
    pub steps: Vec<f64>,
}

impl Segment {
    fn new(x: &[f64], direction: Vec<f64>, back: f64, fwd: f64, m: usize) -> Self {
        let (mut k_lo, mut k_hi) = (-back, fwd);
        for (&xi, &vi) in x.iter().zip(&direction) {
            if vi != 0.0 {
                let (a, b) = ((0.0 - xi) / vi, (1.0 - xi) / vi);
                k_lo = k_lo.max(a.min(b));
                k_hi = k_hi.min(a.max(b));
            }
        }
        k_lo = k_lo.min(0.0);
        k_hi = k_hi.max(0.0);
        let steps = lattice(back, fwd, m, k_lo, k_hi);
        Self { origin: x.to_vec(), direction, k_lo, k_hi, steps }
    }

    pub fn point_at(&self, k: f64, out: &mut [f64]) {
        for ((o, &xi), &vi) in out.iter_mut().zip(&self.origin).zip(&self.direction) {
            *o = (xi + k * vi).clamp(0.0, 1.0);
        }
    }
}

/// Lattice on `[-back, fwd]` with `m` points, clamped to `[lo, hi]`, plus `0`, `lo`, `hi`.
fn lattice(back: f64, fwd: f64, m: usize, lo: f64, hi: f64) -> Vec<f64> {
    let gaps = (m - 1) as f64;
    let mut out = Vec::with_capacity(m + 3);
    if back == fwd {
        // offsets (2j - (m-1)) * r / (m-1), which nest under r -> 2r, m -> 2m-1
        let step = back / gaps;
        for j in 0..m {
            out.push(((2 * j) as f64 - gaps) * step);
        }
    } else {
        let step = (back + fwd) / gaps;
        for j in 0..m {
            out.push(-back + j as f64 * step);
        }
    }
    for v in out.iter_mut() {
        *v = v.clamp(lo, hi);
    }
    out.extend([0.0, lo, hi]);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Ball `B_p(x, r)` intersected with the unit cube and, for `p > 2`, the Euclidean ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallRegion {
    pub center: Vec<f64>,
    pub p: f64,
    pub r: f64,
    /// Bounding box of the admissible set.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Lattice coordinates per axis, sorted.
    pub axis_values: Vec<Vec<f64>>,
}

impl BallRegion {
    fn new(x: &[f64], p: f64, r: f64, m: usize) -> Self {
        let lo: Vec<f64> = x.iter().map(|c| (c - r).max(0.0)).collect();
        let hi: Vec<f64> = x.iter().map(|c| (c + r).min(1.0)).collect();
        let axis_values = x
            .iter()
            .zip(lo.iter().zip(&hi))
            .map(|(&c, (&l, &h))| lattice(r, r, m, l - c, h - c).into_iter().map(|k| (c + k).clamp(0.0, 1.0)).collect())
            .collect();
        Self { center: x.to_vec(), p, r, lo, hi, axis_values }
    }

    /// Norm used for the radius test: `p` for `p < 2`, Euclidean otherwise.
    pub fn contains(&self, pt: &[f64]) -> bool {
        let q = self.p.min(2.0);
        let tol = self.r * (1.0 + 1e-12);
        if q == 2.0 {
            let s: f64 = pt.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
            s.sqrt() <= tol
        } else {
            let s: f64 = pt.iter().zip(&self.center).map(|(a, b)| (a - b).abs().powf(q)).sum();
            s.powf(1.0 / q) <= tol
        }
    }

    /// `x +- r e_i`, clipped to the cube.
    pub fn axis_extremes(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(2 * self.center.len());
        for i in 0..self.center.len() {
            for v in [self.lo[i], self.hi[i]] {
                let mut pt = self.center.clone();
                pt[i] = v;
                out.push(pt);
            }
        }
        out
    }

    /// Calls `f` for every lattice point inside the box `[lo, hi]` that lies in the ball.
    pub fn for_each_lattice_in(&self, lo: &[f64], hi: &[f64], mut f: impl FnMut(&[f64])) {
        let dim = self.center.len();
        let ranges: Vec<&[f64]> = self
            .axis_values
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(vals, (&l, &h))| {
                let a = vals.partition_point(|&v| v < l);
                let b = vals.partition_point(|&v| v <= h);
                &vals[a..b.max(a)]
            })
            .collect();
        if ranges.iter().any(|r| r.is_empty()) {
            return;
        }
        let mut idx = vec![0usize; dim];
        let mut pt: Vec<f64> = ranges.iter().map(|r| r[0]).collect();
        loop {
            if self.contains(&pt) {
                f(&pt);
            }
            let mut axis = dim;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] < ranges[axis].len() {
                    pt[axis] = ranges[axis][idx[axis]];
                    break;
                }
                idx[axis] = 0;
                pt[axis] = ranges[axis][0];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Point(Vec<f64>),
    Segment(Segment),
    Lines(Vec<Segment>),
    Ball(BallRegion),
}

/// Candidate points of `A(x)`, stored row-major.
pub fn candidates(x: &[f64], attack: &AttackSpec, query: &SupQuery) -> Result<Vec<f64>> {
    let region = attack.region(x, query)?;
    let dim = x.len();
    let mut out = x.to_vec();
    if query.mode == SupMode::RandomSample {
        random_candidates(x, &region, query.m, &mut out);
        return Ok(out);
    }
    let mut buf = vec![0.0; dim];
    match &region {
        Region::Point(_) => {}
        Region::Segment(seg) => push_segment(seg, &mut buf, &mut out),
        Region::Lines(segs) => segs.iter().for_each(|s| push_segment(s, &mut buf, &mut out)),
        Region::Ball(ball) => {
            for e in ball.axis_extremes() {
                out.extend(e);
            }
            ball.for_each_lattice_in(&ball.lo, &ball.hi, |pt| out.extend_from_slice(pt));
        }
    }
    Ok(out)
}

fn push_segment(seg: &Segment, buf: &mut [f64], out: &mut Vec<f64>) {
    for &k in &seg.steps {
        seg.point_at(k, buf);
        out.extend_from_slice(buf);
    }
}

fn random_candidates(x: &[f64], region: &Region, m: usize, out: &mut Vec<f64>) {
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    for c in x {
        c.to_bits().hash(&mut hasher);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hasher.finish());
    let dim = x.len();
    let mut buf = vec![0.0; dim];
    let mut seg_sample = |seg: &Segment, rng: &mut ChaCha8Rng, out: &mut Vec<f64>, count: usize| {
        for k in [seg.k_lo, seg.k_hi] {
            seg.point_at(k, &mut buf);
            out.extend_from_slice(&buf);
        }
        for _ in 0..count {
            let k = if seg.k_hi > seg.k_lo { rng.random_range(seg.k_lo..=seg.k_hi) } else { seg.k_lo };
            seg.point_at(k, &mut buf);
            out.extend_from_slice(&buf);
        }
    };
    match region {
        Region::Point(_) => {}
        Region::Segment(seg) => seg_sample(seg, &mut rng, out, m),
        Region::Lines(segs) => {
            for seg in segs {
                seg_sample(seg, &mut rng, out, m);
            }
        }
        Region::Ball(ball) => {
            for e in ball.axis_extremes() {
                out.extend(e);
            }
            let mut accepted = 0;
            let mut tries = 0;
            while accepted < m && tries < 64 * m {
                tries += 1;
                let pt: Vec<f64> = (0..dim)
                    .map(|i| {
                        if ball.hi[i] > ball.lo[i] {
                            rng.random_range(ball.lo[i]..=ball.hi[i])
                        } else {
                            ball.lo[i]
                        }
                    })
                    .collect();
                if ball.contains(&pt) {
                    out.extend(pt);
                    accepted += 1;
                }
            }
        }
    }
}

/// Extremes of `g` over the generic candidate set.
pub fn generic_extremes<E: Evaluable + ?Sized>(
    g: &E,
    x: &[f64],
    attack: &AttackSpec,
    query: &SupQuery,
) -> Result<(f64, f64)> {
    let pts = candidates(x, attack, query)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for pt in pts.chunks_exact(x.len()) {
        let v = g.eval(pt);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo, hi))
}

/// Maximum of `g` over the candidate set of `A(x)` and a point attaining it.
pub fn sup_over_attack<E: Evaluable + ?Sized>(
    g: &E,
    x: &[f64],
    attack: &AttackSpec,
    query: &SupQuery,
) -> Result<(f64, Vec<f64>)> {
    let pts = candidates(x, attack, query)?;
    let mut best = (f64::NEG_INFINITY, x.to_vec());
    for pt in pts.chunks_exact(x.len()) {
        let v = g.eval(pt);
        if v > best.0 {
            best = (v, pt.to_vec());
        }
    }
    Ok(best)
}

/// `sup_{x' in A(x)} |f(x') - f(x)|`.
pub fn max_deviation<E: Evaluable + ?Sized>(
    f: &E,
    x: &[f64],
    attack: &AttackSpec,
    query: &SupQuery,
) -> Result<f64> {
    let fx = f.eval(x);
    let (lo, hi) = f.extremes_over(x, attack, query)?;
    Ok((hi - fx).max(fx - lo).max(0.0))
}

fn check_q(q: f64) -> Result<()> {
    if !(q >= 1.0) || !q.is_finite() {
        return invalid(format!("q must be finite and at least 1, got {q}"));
    }
    Ok(())
}

/// Midpoints of a `quad^d` grid over the unit cube, row-major.
pub fn midpoint_grid(quad: usize, dim: usize) -> Result<Vec<f64>> {
    if quad == 0 {
        return invalid("quadrature resolution must be positive");
    }
    let total = (quad as f64).powi(dim as i32);
    if total > 1e8 {
        return Err(Error::Resource(format!("quadrature grid of {total} points is too large")));
    }
    let total = total as usize;
    let mut out = Vec::with_capacity(total * dim);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        out.extend(idx.iter().map(|&i| (i as f64 + 0.5) / quad as f64));
        for axis in (0..dim).rev() {
            idx[axis] += 1;
            if idx[axis] < quad {
                break;
            }
            idx[axis] = 0;
        }
    }
    Ok(out)
}

fn grid_mean(quad: usize, dim: usize, f: impl Fn(&[f64]) -> Result<f64> + Sync + Send) -> Result<f64> {
    let grid = midpoint_grid(quad, dim)?;
    let vals: Vec<f64> = grid
        .par_chunks_exact(dim)
        .map(f)
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&vals) / vals.len() as f64)
}

/// `[ int sup_{x' in A(x)} |f(x') - g(x)|^q dx ]^{1/q}` by midpoint quadrature.
pub fn adversarial_distance<F: Evaluable + ?Sized, G: Evaluable + ?Sized>(
    f: &F,
    g: &G,
    attack: &AttackSpec,
    q: f64,
    quad: usize,
    query: &SupQuery,
) -> Result<f64> {
    check_q(q)?;
    let mean = grid_mean(quad, f.dim(), |x| {
        let gx = g.eval(x);
        let (lo, hi) = f.extremes_over(x, attack, query)?;
        Ok((hi - gx).abs().max((lo - gx).abs()).powf(q))
    })?;
    Ok(mean.powf(1.0 / q))
}

/// Plain `L_q` distance on the same quadrature grid.
pub fn lq_distance<F: Evaluable + ?Sized, G: Evaluable + ?Sized>(f: &F, g: &G, q: f64, quad: usize) -> Result<f64> {
    check_q(q)?;
    let mean = grid_mean(quad, f.dim(), |x| Ok((f.eval(x) - g.eval(x)).abs().powf(q)))?;
    Ok(mean.powf(1.0 / q))
}

/// `G_{A,q}(f) = (1/2) [ int (sup_{A(x)} f - inf_{A(x)} f)^q dx ]^{1/q}`.
pub fn deviation_functional_g<F: Evaluable + ?Sized>(
    f: &F,
    attack: &AttackSpec,
    q: f64,
    quad: usize,
    query: &SupQuery,
) -> Result<f64> {
    check_q(q)?;
    let mean = grid_mean(quad, f.dim(), |x| {
        let (lo, hi) = f.extremes_over(x, attack, query)?;
        Ok((hi - lo).max(0.0).powf(q))
    })?;
    Ok(0.5 * mean.powf(1.0 / q))
}
