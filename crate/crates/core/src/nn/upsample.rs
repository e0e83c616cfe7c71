use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor4};

/// Interpolation taps along one axis: `(lo, hi, frac)` per output index, so
/// that `out = (1 - frac) * in[lo] + frac * in[hi]`.
///
/// Uses the half-pixel (align-corners = false) mapping
/// `src = (dst + 0.5) * in / out - 0.5`, clamped to the valid range.
pub(crate) fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|dst| {
            let src = ((dst as f64 + 0.5) * ratio - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = if lo == hi { 0.0 } else { src - lo as f64 };
            (lo, hi, frac)
        })
        .collect()
}

/// Resizes one (h, w) plane to (oh, ow) with bilinear interpolation.
pub fn resize_plane<T: Scalar>(plane: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ys = axis_taps(h, oh);
    let xs = axis_taps(w, ow);
    let mut out = Vec::with_capacity(oh * ow);
    for &(y0, y1, fy) in &ys {
        let (fy, gy) = (T::c(fy), T::c(1.0 - fy));
        for &(x0, x1, fx) in &xs {
            let (fx, gx) = (T::c(fx), T::c(1.0 - fx));
            let top = gx * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
            let bottom = gx * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
            out.push(gy * top + fy * bottom);
        }
    }
    out
}

fn resize_plane_adjoint<T: Scalar>(grad: &[T], h: usize, w: usize, oh: usize, ow: usize, out: &mut [T]) {
    let ys = axis_taps(h, oh);
    let xs = axis_taps(w, ow);
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        let (fy, gy) = (T::c(fy), T::c(1.0 - fy));
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let (fx, gx) = (T::c(fx), T::c(1.0 - fx));
            let g = grad[oy * ow + ox];
            out[y0 * w + x0] += g * gy * gx;
            out[y0 * w + x1] += g * gy * fx;
            out[y1 * w + x0] += g * fy * gx;
            out[y1 * w + x1] += g * fy * fx;
        }
    }
}

pub fn bilinear_upsample_forward<T: Scalar>(x: &Tensor4<T>, scale: usize) -> Result<Tensor4<T>> {
    if scale == 0 {
        return Err(Error::arg("upsampling scale must be at least 1"));
    }
    let d = x.dims();
    if d.h == 0 || d.w == 0 {
        return Err(Error::shape(format!("cannot upsample empty input {d}")));
    }
    let (oh, ow) = (d.h * scale, d.w * scale);
    let mut data = Vec::with_capacity(d.n * d.c * oh * ow);
    for n in 0..d.n {
        for c in 0..d.c {
            data.extend(resize_plane(x.plane(n, c), d.h, d.w, oh, ow));
        }
    }
    Tensor4::from_vec(Dims::new(d.n, d.c, oh, ow), data)
}

impl<T: Scalar> Tape<T> {
    pub fn bilinear_upsample(&mut self, x: Var, scale: usize) -> Result<Var> {
        let out = bilinear_upsample_forward(self.value(x), scale)?;
        let d = self.dims(x);
        let od = out.dims();
        self.record("bilinear_upsample", &[x], out, move |ctx| {
            let mut g = vec![T::zero(); d.len()];
            let (p, op) = (d.plane(), od.plane());
            for i in 0..d.n * d.c {
                resize_plane_adjoint(&ctx.grad[i * op..(i + 1) * op], d.h, d.w, od.h, od.w, &mut g[i * p..(i + 1) * p]);
            }
            vec![Some(g)]
        })
    }
}
