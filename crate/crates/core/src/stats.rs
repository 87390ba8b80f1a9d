//! Deterministic reductions over paths.
//!
//! Sums are formed over fixed-size chunks in parallel and the chunk partials
//! are then combined pairwise in index order, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;
use serde::Serialize;

const CHUNK: usize = 2048;

/// Pairwise (cascade) summation of a slice.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sum of `f(i)` for `i in 0..n`, reproducible across thread counts.
pub fn par_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let partials: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let vals: Vec<f64> = (lo..hi).map(&f).collect();
            pairwise_sum(&vals)
        })
        .collect();
    pairwise_sum(&partials)
}

/// Vector-valued version of [`par_sum`]: accumulates `f(i, acc)` into `width`
/// accumulators.
pub fn par_sum_vec<F>(n: usize, width: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let partials: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut acc = vec![0.0; width];
            for i in lo..hi {
                f(i, &mut acc);
            }
            acc
        })
        .collect();
    combine(&partials, width)
}

fn combine(parts: &[Vec<f64>], width: usize) -> Vec<f64> {
    match parts.len() {
        0 => vec![0.0; width],
        1 => parts[0].clone(),
        n => {
            let (a, b) = parts.split_at(n / 2);
            let mut left = combine(a, width);
            let right = combine(b, width);
            left.iter_mut().zip(right).for_each(|(l, r)| *l += r);
            left
        }
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn within(&self, reference: f64, n_se: f64) -> bool {
        (self.mean - reference).abs() <= n_se * self.se
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    par_sum(xs.len(), |i| xs[i]) / xs.len() as f64
}

pub fn estimate(xs: &[f64]) -> Estimate {
    estimate_fn(xs.len(), |i| xs[i])
}

pub fn estimate_fn<F>(n: usize, f: F) -> Estimate
where
    F: Fn(usize) -> f64 + Sync,
{
    let s = par_sum_vec(n, 2, |i, acc| {
        let v = f(i);
        acc[0] += v;
        acc[1] += v * v;
    });
    let nf = n as f64;
    let m = s[0] / nf;
    let var = if n > 1 {
        ((s[1] - nf * m * m) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    Estimate {
        mean: m,
        se: (var / nf).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_sum_is_exact_on_integers() {
        let n = 10_001;
        let s = par_sum(n, |i| i as f64);
        assert_eq!(s, (n * (n - 1) / 2) as f64);
    }

    #[test]
    fn estimate_of_constant_has_zero_se() {
        let e = estimate(&[2.0; 100]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.se, 0.0);
    }

    #[test]
    fn reduction_independent_of_pool_size() {
        let xs: Vec<f64> = (0..50_000).map(|i| ((i * 7919) % 1000) as f64 * 1e-3 + 0.1).collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| estimate(&xs));
        let b = four.install(|| estimate(&xs));
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.se.to_bits(), b.se.to_bits());
    }
}
