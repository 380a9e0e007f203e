//! Uniform bucket grid over `[0,1]^d` for fixed-radius neighbor queries.

use crate::localpoly::Dataset;

const MAX_BUCKETS: usize = 1 << 20;

#[derive(Debug, Clone)]
pub struct BucketIndex {
    dim: usize,
    per_axis: usize,
    offsets: Vec<usize>,
    order: Vec<u32>,
}

impl BucketIndex {
    pub fn new(data: &Dataset) -> Self {
        let dim = data.dim();
        let n = data.len().max(1);
        let cap = (MAX_BUCKETS as f64).powf(1.0 / dim as f64).floor() as usize;
        let per_axis = ((n as f64 / 2.0).powf(1.0 / dim as f64).floor() as usize).clamp(1, cap.max(1));
        let total = per_axis.pow(dim as u32);
        let bucket_of = |x: &[f64]| -> usize {
            x.iter().fold(0usize, |acc, &c| {
                acc * per_axis + axis_bucket(c, per_axis)
            })
        };
        let mut counts = vec![0usize; total + 1];
        let buckets: Vec<usize> = (0..data.len()).map(|i| bucket_of(data.point(i))).collect();
        for &b in &buckets {
            counts[b + 1] += 1;
        }
        for k in 1..=total {
            counts[k] += counts[k - 1];
        }
        let mut fill = counts.clone();
        let mut order = vec![0u32; data.len()];
        for (i, &b) in buckets.iter().enumerate() {
            order[fill[b]] = i as u32;
            fill[b] += 1;
        }
        Self {
            dim,
            per_axis,
            offsets: counts,
            order,
        }
    }

    /// Calls `f` with the index of every point whose bucket meets the box `[lo, hi]`.
    ///
    /// The visit order is fixed by the data, so repeated queries are reproducible.
    pub fn for_each_in_box(&self, lo: &[f64], hi: &[f64], mut f: impl FnMut(usize)) {
        let g = self.per_axis;
        let first: Vec<usize> = lo.iter().map(|&c| axis_bucket(c, g)).collect();
        let last: Vec<usize> = hi.iter().map(|&c| axis_bucket(c, g)).collect();
        let mut cur = first.clone();
        loop {
            let b = cur.iter().fold(0usize, |acc, &k| acc * g + k);
            for &i in &self.order[self.offsets[b]..self.offsets[b + 1]] {
                f(i as usize);
            }
            // odometer over the bucket box, last axis fastest
            let mut axis = self.dim;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if cur[axis] < last[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = first[axis];
            }
        }
    }

    /// Calls `f` with candidates for the closed Euclidean ball `B(center, radius)`.
    pub fn for_each_near(&self, center: &[f64], radius: f64, f: impl FnMut(usize)) {
        let lo: Vec<f64> = center.iter().map(|c| c - radius).collect();
        let hi: Vec<f64> = center.iter().map(|c| c + radius).collect();
        self.for_each_in_box(&lo, &hi, f);
    }
}

fn axis_bucket(c: f64, per_axis: usize) -> usize {
    if !(c > 0.0) {
        return 0;
    }
    ((c * per_axis as f64) as usize).min(per_axis - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ball_queries_cover_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in 1..=3 {
            let n = 500;
            let x: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
            let data = Dataset::new(dim, x, vec![0.0; n]).unwrap();
            let index = BucketIndex::new(&data);
            for _ in 0..50 {
                let c: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                let r = rng.random_range(0.0..0.4);
                let mut found = Vec::new();
                index.for_each_near(&c, r, |i| found.push(i));
                for i in 0..n {
                    let d2: f64 = data.point(i).iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
                    if d2 <= r * r {
                        assert!(found.contains(&i));
                    }
                }
                found.sort();
                found.dedup();
                assert!(found.len() <= n);
            }
        }
    }
}
