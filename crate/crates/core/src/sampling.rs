//! Replica scheduling and the `Estimate` type shared by every Monte Carlo
//! observable.
//!
//! Replica `i` always uses stream `first_stream + i`, results are collected
//! in replica order and reduced sequentially, so numbers never depend on the
//! worker count.

use rayon::prelude::*;

use crate::error::{PercError, Result};

pub const BATCHES: usize = 20;

/// Which replicas to run and how many threads to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplicaPlan {
    pub seed: u64,
    pub first_stream: u64,
    pub replicas: u64,
    pub workers: usize,
}

impl ReplicaPlan {
    pub fn new(seed: u64, replicas: u64) -> Self {
        ReplicaPlan { seed, first_stream: 0, replicas, workers: 1 }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_first_stream(mut self, first: u64) -> Self {
        self.first_stream = first;
        self
    }

    pub fn with_replicas(mut self, replicas: u64) -> Self {
        self.replicas = replicas;
        self
    }

    pub fn streams(&self) -> std::ops::Range<u64> {
        self.first_stream..self.first_stream + self.replicas
    }

    /// Run `f(state, stream_id)` for every replica, with one `init()` state
    /// per worker, returning results in stream order.
    pub fn run<S, T, I, F>(&self, init: I, f: F) -> Vec<T>
    where
        T: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(&mut S, u64) -> T + Sync + Send,
    {
        let range = self.streams();
        if self.workers <= 1 {
            let mut s = init();
            return range.map(|i| f(&mut s, i)).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .expect("thread pool");
        pool.install(|| range.into_par_iter().map_init(&init, |s, i| f(s, i)).collect())
    }
}

/// A Monte Carlo estimate with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    /// Replicas that contributed (censored ones excluded).
    pub replicas: u64,
    pub censored: u64,
    pub truncated_fraction: f64,
    pub seed: u64,
    pub stream_start: u64,
    pub stream_end: u64,
}

/// Censoring above this fraction marks an estimate unreliable.
pub const UNRELIABLE_FRACTION: f64 = 0.01;

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            std_error: 0.0,
            replicas: 0,
            censored: 0,
            truncated_fraction: 0.0,
            seed: 0,
            stream_start: 0,
            stream_end: 0,
        }
    }

    pub fn unreliable(&self) -> bool {
        self.truncated_fraction > UNRELIABLE_FRACTION
    }

    pub fn relative_error(&self) -> f64 {
        if self.value == 0.0 {
            f64::INFINITY
        } else {
            self.std_error / self.value.abs()
        }
    }

    /// Mean and binomial standard error of indicator samples; `None` marks a
    /// censored replica.
    pub fn from_indicators(samples: &[Option<bool>], plan: &ReplicaPlan) -> Self {
        let used: Vec<f64> = samples.iter().flatten().map(|&b| b as u8 as f64).collect();
        let n = used.len();
        let mean = if n == 0 { 0.0 } else { pairwise_sum(&used) / n as f64 };
        let se = if n == 0 { 0.0 } else { (mean * (1.0 - mean) / n as f64).max(0.0).sqrt() };
        Self::assemble(mean, se, n, samples.len(), plan)
    }

    /// Mean with a batch-means standard error over [`BATCHES`] contiguous
    /// batches (replica order).
    pub fn from_samples(samples: &[Option<f64>], plan: &ReplicaPlan) -> Self {
        let used: Vec<f64> = samples.iter().flatten().copied().collect();
        let (mean, se) = mean_and_batch_se(&used);
        Self::assemble(mean, se, used.len(), samples.len(), plan)
    }

    fn assemble(mean: f64, se: f64, used: usize, total: usize, plan: &ReplicaPlan) -> Self {
        let censored = (total - used) as u64;
        Estimate {
            value: mean,
            std_error: se,
            replicas: used as u64,
            censored,
            truncated_fraction: if total == 0 { 0.0 } else { censored as f64 / total as f64 },
            seed: plan.seed,
            stream_start: plan.first_stream,
            stream_end: plan.first_stream + total as u64,
        }
    }

    /// Scale value and error by a constant.
    pub fn scaled(&self, c: f64) -> Self {
        Estimate { value: self.value * c, std_error: self.std_error * c.abs(), ..self.clone() }
    }
}

/// Sample mean and batch-means standard error.
pub fn mean_and_batch_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n < 2 * BATCHES {
        if n < 2 {
            return (mean, 0.0);
        }
        let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        return (mean, (var / n as f64).sqrt());
    }
    let batch_means: Vec<f64> = (0..BATCHES)
        .map(|b| {
            let lo = b * n / BATCHES;
            let hi = (b + 1) * n / BATCHES;
            pairwise_sum(&xs[lo..hi]) / (hi - lo) as f64
        })
        .collect();
    let bm = pairwise_sum(&batch_means) / BATCHES as f64;
    let var = batch_means.iter().map(|x| (x - bm).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    (mean, (var / BATCHES as f64).sqrt())
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, rms residual)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return Err(PercError::InsufficientPoints { needed: 2, found: n.min(ys.len()) });
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(PercError::invalid("fit", "abscissae are all equal"));
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    Ok((a, b, (rss / n as f64).sqrt()))
}

/// Slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .unzip();
    Ok(linear_fit(&xs, &ys)?.1)
}
