use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor4};

/// Square pooling window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
    /// Border excluded from the max (never selected); average pooling
    /// does not accept padding.
    pub padding: usize,
}

impl PoolSpec {
    pub fn new(window: usize, stride: usize) -> Self {
        PoolSpec { window, stride, padding: 0 }
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::arg(format!("degenerate pooling {self:?}")));
        }
        if self.padding >= self.window {
            return Err(Error::arg(format!("pooling padding {} must be below the window", self.padding)));
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if self.window > ph || self.window > pw {
            return Err(Error::shape(format!(
                "pooling window {} larger than input {h}x{w}",
                self.window
            )));
        }
        Ok(((ph - self.window) / self.stride + 1, (pw - self.window) / self.stride + 1))
    }
}

/// Max pooling with first-occurrence (row-major) tie-breaking. Returns the
/// pooled tensor and the flat input index selected for every output.
pub fn max_pool_forward<T: Scalar>(x: &Tensor4<T>, spec: PoolSpec) -> Result<(Tensor4<T>, Vec<usize>)> {
    let d = x.dims();
    let (oh, ow) = spec.output_size(d.h, d.w)?;
    let out_dims = Dims::new(d.n, d.c, oh, ow);
    let mut out = Vec::with_capacity(out_dims.len());
    let mut argmax = Vec::with_capacity(out_dims.len());
    let p = spec.padding as isize;
    for n in 0..d.n {
        for c in 0..d.c {
            let base = d.index(n, c, 0, 0);
            let plane = x.plane(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best: Option<(T, usize)> = None;
                    for ky in 0..spec.window {
                        let iy = (oy * spec.stride + ky) as isize - p;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        for kx in 0..spec.window {
                            let ix = (ox * spec.stride + kx) as isize - p;
                            if ix < 0 || ix >= d.w as isize {
                                continue;
                            }
                            let idx = iy as usize * d.w + ix as usize;
                            let v = plane[idx];
                            if best.is_none_or(|(b, _)| v > b) {
                                best = Some((v, idx));
                            }
                        }
                    }
                    // padding < window guarantees at least one in-range tap.
                    let (v, idx) = best.expect("window covers an input pixel");
                    out.push(v);
                    argmax.push(base + idx);
                }
            }
        }
    }
    Ok((Tensor4::from_vec(out_dims, out)?, argmax))
}

pub fn avg_pool_forward<T: Scalar>(x: &Tensor4<T>, spec: PoolSpec) -> Result<Tensor4<T>> {
    if spec.padding != 0 {
        return Err(Error::arg("average pooling does not support padding"));
    }
    let d = x.dims();
    let (oh, ow) = spec.output_size(d.h, d.w)?;
    let inv = T::one() / T::c((spec.window * spec.window) as f64);
    Ok(Tensor4::from_fn((d.n, d.c, oh, ow), |n, c, oy, ox| {
        let plane = x.plane(n, c);
        let mut acc = T::zero();
        for ky in 0..spec.window {
            let row = (oy * spec.stride + ky) * d.w + ox * spec.stride;
            acc += plane[row..row + spec.window].iter().copied().sum::<T>();
        }
        acc * inv
    }))
}

impl<T: Scalar> Tape<T> {
    pub fn max_pool(&mut self, x: Var, spec: PoolSpec) -> Result<Var> {
        let (out, argmax) = max_pool_forward(self.value(x), spec)?;
        let len = self.dims(x).len();
        self.record("max_pool", &[x], out, move |ctx| {
            let mut g = vec![T::zero(); len];
            for (&i, &gy) in argmax.iter().zip(ctx.grad) {
                g[i] += gy;
            }
            vec![Some(g)]
        })
    }

    pub fn avg_pool(&mut self, x: Var, spec: PoolSpec) -> Result<Var> {
        let out = avg_pool_forward(self.value(x), spec)?;
        let d = self.dims(x);
        let od = out.dims();
        let inv = T::one() / T::c((spec.window * spec.window) as f64);
        self.record("avg_pool", &[x], out, move |ctx| {
            let mut g = vec![T::zero(); d.len()];
            for n in 0..d.n {
                for c in 0..d.c {
                    let base = d.index(n, c, 0, 0);
                    for oy in 0..od.h {
                        for ox in 0..od.w {
                            let gy = ctx.grad[od.index(n, c, oy, ox)] * inv;
                            for ky in 0..spec.window {
                                let row = base + (oy * spec.stride + ky) * d.w + ox * spec.stride;
                                g[row..row + spec.window].iter_mut().for_each(|v| *v += gy);
                            }
                        }
                    }
                }
            }
            vec![Some(g)]
        })
    }
}
