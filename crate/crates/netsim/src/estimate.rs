//! Deterministic parallel Monte Carlo reduction.
//!
//! Samples are processed in fixed-size chunks; chunk accumulators are
//! combined sequentially in chunk order with Kahan compensation, so the
//! result does not depend on how rayon schedules the chunks.

use rayon::prelude::*;

use crate::rng::RngPlan;

/// Default samples per reduction chunk (also the jackknife block size).
pub const CHUNK: usize = 1024;

/// A Monte Carlo estimate with matching standard errors.
#[derive(Debug, Clone)]
pub struct EstimatorResult {
    pub estimate: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n_samples: usize,
    pub rows: usize,
    pub cols: usize,
}

impl EstimatorResult {
    pub fn scalar(&self) -> f64 {
        self.estimate[0]
    }

    pub fn scalar_se(&self) -> f64 {
        self.std_error[0]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.estimate[i * self.cols + j]
    }

    pub fn se(&self, i: usize, j: usize) -> f64 {
        self.std_error[i * self.cols + j]
    }
}

fn kahan_add(acc: &mut f64, comp: &mut f64, v: f64) {
    let y = v - *comp;
    let t = *acc + y;
    *comp = (t - *acc) - y;
    *acc = t;
}

/// Per-chunk raw sums for estimators that need more than a mean (jackknife).
#[derive(Debug, Clone)]
pub struct ChunkSums {
    pub sums: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
    pub dim: usize,
}

impl ChunkSums {
    pub fn totals(&self) -> (Vec<f64>, usize) {
        let mut tot = vec![0.0f64; self.dim];
        let mut comp = vec![0.0f64; self.dim];
        for s in &self.sums {
            for (d, &v) in s.iter().enumerate() {
                kahan_add(&mut tot[d], &mut comp[d], v);
            }
        }
        (tot, self.counts.iter().sum())
    }
}

/// Evaluate `f(sample_index, rng, out)` for `n_samples` independent
/// substreams and return the per-chunk sums of the observation vector.
pub fn chunked_sums<F>(plan: &RngPlan, n_samples: usize, dim: usize, f: F) -> ChunkSums
where
    F: Fn(u64, &mut rand_chacha::ChaCha8Rng, &mut [f64]) + Sync,
{
    let n_chunks = n_samples.div_ceil(CHUNK);
    let results: Vec<(Vec<f64>, usize)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n_samples);
            let mut sums = vec![0.0f64; dim];
            let mut obs = vec![0.0f64; dim];
            for idx in lo..hi {
                let mut rng = plan.substream(idx as u64);
                obs.iter_mut().for_each(|o| *o = 0.0);
                f(idx as u64, &mut rng, &mut obs);
                for (s, &o) in sums.iter_mut().zip(&obs) {
                    *s += o;
                }
            }
            (sums, hi - lo)
        })
        .collect();
    ChunkSums {
        sums: results.iter().map(|r| r.0.clone()).collect(),
        counts: results.iter().map(|r| r.1).collect(),
        dim,
    }
}

/// Mean and standard error of a vector-valued observable over independent
/// substreams; deterministic for a fixed plan regardless of worker count.
pub fn estimate_mean<F>(
    plan: &RngPlan,
    n_samples: usize,
    rows: usize,
    cols: usize,
    f: F,
) -> EstimatorResult
where
    F: Fn(u64, &mut rand_chacha::ChaCha8Rng, &mut [f64]) + Sync,
{
    let dim = rows * cols;
    // Accumulate both sums and squared sums in one pass.
    let wide = chunked_sums(plan, n_samples, 2 * dim, |idx, rng, out| {
        let (obs, sq) = out.split_at_mut(dim);
        f(idx, rng, obs);
        for (s, &o) in sq.iter_mut().zip(obs.iter()) {
            *s = o * o;
        }
    });
    let (tot, n) = wide.totals();
    let nf = n as f64;
    let mut estimate = vec![0.0; dim];
    let mut std_error = vec![0.0; dim];
    for d in 0..dim {
        let mean = tot[d] / nf;
        let var = (tot[dim + d] / nf - mean * mean).max(0.0);
        estimate[d] = mean;
        std_error[d] = (var / nf).sqrt();
    }
    EstimatorResult {
        estimate,
        std_error,
        n_samples: n,
        rows,
        cols,
    }
}

/// Delete-one-block jackknife for a scalar statistic computed from
/// accumulated sums: `stat(sums, n)` maps totals to the estimate.
pub fn block_jackknife<S>(chunks: &ChunkSums, stat: S) -> (f64, f64)
where
    S: Fn(&[f64], usize) -> f64,
{
    let (tot, n) = chunks.totals();
    let full = stat(&tot, n);
    let b = chunks.sums.len();
    if b < 2 {
        return (full, f64::NAN);
    }
    let mut leave_outs = Vec::with_capacity(b);
    for (s, &cnt) in chunks.sums.iter().zip(&chunks.counts) {
        let reduced: Vec<f64> = tot.iter().zip(s).map(|(t, v)| t - v).collect();
        leave_outs.push(stat(&reduced, n - cnt));
    }
    let mean: f64 = leave_outs.iter().sum::<f64>() / b as f64;
    let var: f64 = leave_outs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let se = ((b as f64 - 1.0) / b as f64 * var).sqrt();
    (full, se)
}
