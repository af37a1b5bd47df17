//! Seedable, reproducible random streams.
//!
//! One stream per experiment; per-client streams are derived as
//! `seed ^ client_id` so a client's draws do not depend on scheduling order.
//! All draws happen in `f64` and are converted to the target scalar, so the
//! underlying byte stream is identical across scalar instantiations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Scalar, Vector};

/// Stream tags for experiment-level draws, chosen far away from client ids.
pub mod tags {
    pub const SPLIT: u64 = 0x5eed_5eed_0000_0001;
    pub const PARTICIPATION: u64 = 0x5eed_5eed_0000_0002;
    pub const SERVER_INIT: u64 = 0x5eed_5eed_0000_0003;
    pub const SYNTH: u64 = 0x5eed_5eed_0000_0004;
    pub const PROVIDER: u64 = 0x5eed_5eed_0000_0005;
    pub const HARNESS: u64 = 0x5eed_5eed_0000_0006;
}

/// A seedable, reproducible random stream (ChaCha8 keyed from a 64-bit seed).
#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn from_seed(seed: u64) -> Self {
        RngStream {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Stream owned by one client, derived order-independently.
    pub fn client_stream(experiment_seed: u64, client_id: u64) -> Self {
        Self::from_seed(experiment_seed ^ client_id)
    }

    /// Stream for a named experiment-level purpose (see [`tags`]).
    pub fn tagged(experiment_seed: u64, tag: u64) -> Self {
        Self::from_seed(experiment_seed ^ tag)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform_f64(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform<T: Scalar>(&mut self, lo: T, hi: T) -> T {
        lo + (hi - lo) * T::from_f64_c(self.uniform_f64())
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.inner.gen_range(0..n)
    }

    pub fn gaussian<T: Scalar>(&mut self, mean: T, std: T) -> T {
        let z: f64 = self.inner.sample(StandardNormal);
        mean + std * T::from_f64_c(z)
    }

    /// One Laplace(0, scale) draw via inverse CDF. `scale = 0` returns zero.
    pub fn laplace<T: Scalar>(&mut self, scale: T) -> T {
        if scale == T::zero() {
            return T::zero();
        }
        // u in (-0.5, 0.5), excluding the endpoint that would hit ln(0)
        let mut f = self.uniform_f64();
        while f == 0.0 {
            f = self.uniform_f64();
        }
        let u = f - 0.5;
        let sign = if u < 0.0 { -T::one() } else { T::one() };
        let arg = T::from_f64_c(1.0 - 2.0 * u.abs());
        -scale * sign * arg.ln()
    }

    pub fn gaussian_vector<T: Scalar>(&mut self, len: usize, mean: T, std: T) -> Vector<T> {
        Vector::from_vec((0..len).map(|_| self.gaussian(mean, std)).collect())
    }

    pub fn gaussian_matrix<T: Scalar>(
        &mut self,
        rows: usize,
        cols: usize,
        mean: T,
        std: T,
    ) -> Matrix<T> {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| self.gaussian(mean, std)).collect(),
        )
        .expect("dims agree by construction")
    }

    /// i.i.d. Laplace(0, scale) vector; errors on negative scale.
    pub fn laplace_vector<T: Scalar>(&mut self, len: usize, scale: T) -> Result<Vector<T>> {
        if scale < T::zero() {
            return Err(Error::invalid(format!(
                "laplace scale must be non-negative, got {scale}"
            )));
        }
        Ok(Vector::from_vec(
            (0..len).map(|_| self.laplace(scale)).collect(),
        ))
    }

    /// Adds i.i.d. Laplace(0, scale) noise to every entry in place.
    pub fn perturb_matrix_laplace<T: Scalar>(
        &mut self,
        m: &mut Matrix<T>,
        scale: T,
    ) -> Result<()> {
        if scale < T::zero() {
            return Err(Error::invalid(format!(
                "laplace scale must be non-negative, got {scale}"
            )));
        }
        if scale == T::zero() {
            return Ok(());
        }
        for v in m.as_mut_slice() {
            *v += self.laplace(scale);
        }
        Ok(())
    }

    /// Uniform sample of `k` distinct values from `[0, n)` via partial
    /// Fisher-Yates; result is sorted for stable downstream iteration.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        let mut out = pool[..k].to_vec();
        out.sort_unstable();
        out
    }

    /// Geometric draw with success probability `p`: number of failures before
    /// the first success.
    pub fn geometric(&mut self, p: f64) -> usize {
        debug_assert!(p > 0.0 && p <= 1.0);
        let mut f = self.uniform_f64();
        while f == 0.0 {
            f = self.uniform_f64();
        }
        // inverse CDF: floor(ln(1-u) / ln(1-p)) with u uniform in (0,1)
        if p >= 1.0 {
            return 0;
        }
        (f.ln() / (1.0 - p).ln()).floor() as usize
    }
}
