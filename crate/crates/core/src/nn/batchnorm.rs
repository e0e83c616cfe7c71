use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor4};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Whether normalization uses batch or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Non-trained per-channel statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Folds batch statistics (biased variance over `count` samples) into
    /// the running estimate; the running variance uses the unbiased form.
    pub fn update(&mut self, batch: &BatchStats<T>) {
        let m = T::c(self.momentum);
        let keep = T::one() - m;
        let correction = T::c(batch.count as f64 / (batch.count as f64 - 1.0));
        for c in 0..self.mean.len() {
            self.mean[c] = keep * self.mean[c] + m * batch.mean[c];
            self.var[c] = keep * self.var[c] + m * batch.var[c] * correction;
        }
    }
}

/// Statistics of one training batch, per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

fn check_affine(d: Dims, gamma: Dims, beta: Dims) -> Result<()> {
    let want = Dims::new(1, d.c, 1, 1);
    if gamma != want || beta != want {
        return Err(Error::shape(format!(
            "batch_norm affine dims {gamma}/{beta}, expected {want} for input {d}"
        )));
    }
    Ok(())
}

fn channel_iter(d: Dims, c: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..d.n).map(move |n| {
        let s = d.index(n, c, 0, 0);
        s..s + d.plane()
    })
}

impl<T: Scalar> Tape<T> {
    /// Normalizes with batch statistics over (n, h, w).
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, epsilon: f64) -> Result<(Var, BatchStats<T>)> {
        let d = self.dims(x);
        check_affine(d, self.dims(gamma), self.dims(beta))?;
        let count = d.n * d.plane();
        if count < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch_norm in train mode needs at least 2 values per channel, input {d}"
            )));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let inv_count = T::one() / T::c(count as f64);
        let mut mean = vec![T::zero(); d.c];
        let mut var = vec![T::zero(); d.c];
        let mut inv_std = vec![T::zero(); d.c];
        let mut xhat = vec![T::zero(); d.len()];
        let mut out = vec![T::zero(); d.len()];
        for c in 0..d.c {
            let mu = channel_iter(d, c).map(|r| xv.data()[r].iter().copied().sum::<T>()).sum::<T>() * inv_count;
            let v = channel_iter(d, c)
                .map(|r| xv.data()[r].iter().map(|&a| (a - mu) * (a - mu)).sum::<T>())
                .sum::<T>()
                * inv_count;
            let istd = T::one() / (v + T::c(epsilon)).sqrt();
            for r in channel_iter(d, c) {
                for i in r {
                    let h = (xv.data()[i] - mu) * istd;
                    xhat[i] = h;
                    out[i] = g[c] * h + b[c];
                }
            }
            mean[c] = mu;
            var[c] = v;
            inv_std[c] = istd;
        }
        let out = Tensor4::from_vec(d, out)?;
        let stats = BatchStats { mean, var, count };
        let y = self.record("batch_norm", &[x, gamma, beta], out, move |ctx| {
            let g = ctx.inputs[1].data();
            let mut dx = vec![T::zero(); d.len()];
            let mut dgamma = vec![T::zero(); d.c];
            let mut dbeta = vec![T::zero(); d.c];
            let m = T::c(count as f64);
            for c in 0..d.c {
                let (mut sg, mut sgx) = (T::zero(), T::zero());
                for r in channel_iter(d, c) {
                    for i in r {
                        sg += ctx.grad[i];
                        sgx += ctx.grad[i] * xhat[i];
                    }
                }
                dgamma[c] = sgx;
                dbeta[c] = sg;
                let k = g[c] * inv_std[c] / m;
                for r in channel_iter(d, c) {
                    for i in r {
                        dx[i] = k * (m * ctx.grad[i] - sg - xhat[i] * sgx);
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        })?;
        Ok((y, stats))
    }

    /// Per-channel affine map using running statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, stats: &RunningStats<T>) -> Result<Var> {
        let d = self.dims(x);
        check_affine(d, self.dims(gamma), self.dims(beta))?;
        if stats.channels() != d.c {
            return Err(Error::shape(format!(
                "running statistics have {} channels, input {d}",
                stats.channels()
            )));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let inv_std: Vec<T> = stats
            .var
            .iter()
            .map(|&v| T::one() / (v + T::c(stats.epsilon)).sqrt())
            .collect();
        let mean = stats.mean.clone();
        let mut out = vec![T::zero(); d.len()];
        for c in 0..d.c {
            for r in channel_iter(d, c) {
                for i in r {
                    out[i] = g[c] * (xv.data()[i] - mean[c]) * inv_std[c] + b[c];
                }
            }
        }
        let out = Tensor4::from_vec(d, out)?;
        self.record("batch_norm_eval", &[x, gamma, beta], out, move |ctx| {
            let (xv, g) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let mut dx = vec![T::zero(); d.len()];
            let mut dgamma = vec![T::zero(); d.c];
            let mut dbeta = vec![T::zero(); d.c];
            for c in 0..d.c {
                for r in channel_iter(d, c) {
                    for i in r {
                        let gy = ctx.grad[i];
                        dx[i] = gy * g[c] * inv_std[c];
                        dgamma[c] += gy * (xv[i] - mean[c]) * inv_std[c];
                        dbeta[c] += gy;
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        })
    }

    /// Batch norm in either mode; train mode folds batch statistics into `stats`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, stats: &mut RunningStats<T>, mode: Mode) -> Result<Var> {
        match mode {
            Mode::Train => {
                let (y, batch) = self.batch_norm_train(x, gamma, beta, stats.epsilon)?;
                stats.update(&batch);
                Ok(y)
            }
            Mode::Eval => self.batch_norm_eval(x, gamma, beta, stats),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_mode_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor4::uniform((4, 3, 5, 5), -2.0, 5.0, &mut rng));
        let g = tape.constant(Tensor4::ones((1, 3, 1, 1)));
        let b = tape.constant(Tensor4::zeros((1, 3, 1, 1)));
        let (y, _) = tape.batch_norm_train(x, g, b, BN_EPSILON).unwrap();
        let d = tape.dims(y);
        let yv = tape.value(y);
        for c in 0..3 {
            let vals: Vec<f64> = channel_iter(d, c).flat_map(|r| yv.data()[r].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn eval_mode_formula() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor4::full((1, 1, 1, 1), 3.0));
        let g = tape.constant(Tensor4::full((1, 1, 1, 1), 2.0));
        let b = tape.constant(Tensor4::full((1, 1, 1, 1), 1.0));
        let stats = RunningStats::new(1);
        let y = tape.batch_norm_eval(x, g, b, &stats).unwrap();
        let expected = 2.0 * 3.0 / (1.0f64 + BN_EPSILON).sqrt() + 1.0;
        assert!((tape.value(y).data()[0] - expected).abs() < 1e-15);
        assert!((expected - 7.0).abs() < 1e-4);
    }

    #[test]
    fn degenerate_batch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor4::ones((1, 2, 1, 1)));
        let g = tape.constant(Tensor4::ones((1, 2, 1, 1)));
        let b = tape.constant(Tensor4::zeros((1, 2, 1, 1)));
        let err = tape.batch_norm_train(x, g, b, BN_EPSILON).unwrap_err();
        assert!(matches!(err, Error::DegenerateBatch(_)));
    }

    #[test]
    fn running_stats_move_with_momentum() {
        let mut stats = RunningStats::<f64>::new(1);
        stats.update(&BatchStats { mean: vec![1.0], var: vec![3.0], count: 4 });
        assert!((stats.mean[0] - 0.1).abs() < 1e-15);
        assert!((stats.var[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-15);
    }
}
