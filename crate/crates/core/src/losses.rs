use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor4};

pub const BCE_CLAMP: f64 = 1e-7;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    Bce,
    SsimNegation,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Bce => "bce",
            LossKind::SsimNegation => "ssim_negation",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "bce" => Ok(LossKind::Bce),
            "ssim" | "ssim_negation" => Ok(LossKind::SsimNegation),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

fn same_dims(op: &str, a: Dims, b: Dims) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{op}: prediction {a} vs target {b}")));
    }
    Ok(())
}

/// Normalized 1-D Gaussian; the 2-D window is its outer product.
fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable correlation of one plane with `taps` on both axes.
fn filter_valid<T: Scalar>(p: &[T], h: usize, w: usize, taps: &[T]) -> Vec<T> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![T::zero(); h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(j, &t)| t * p[y * w + x + j]).sum();
        }
    }
    let mut out = vec![T::zero(); oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, &t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an (oh, ow) field back to (h, w).
fn filter_valid_adjoint<T: Scalar>(g: &[T], h: usize, w: usize, taps: &[T]) -> Vec<T> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![T::zero(); h * ow];
    for y in 0..oh {
        for x in 0..ow {
            let v = g[y * ow + x];
            for (i, &t) in taps.iter().enumerate() {
                rows[(y + i) * ow + x] += t * v;
            }
        }
    }
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for (j, &t) in taps.iter().enumerate() {
                out[y * w + x + j] += t * v;
            }
        }
    }
    out
}

/// Local SSIM field of one plane pair plus its partial derivatives with
/// respect to the five local moments.
struct SsimField<T> {
    value: Vec<T>,
    d_mx: Vec<T>,
    d_my: Vec<T>,
    d_mxx: Vec<T>,
    d_myy: Vec<T>,
    d_mxy: Vec<T>,
}

fn ssim_field<T: Scalar>(x: &[T], y: &[T], h: usize, w: usize, taps: &[T]) -> SsimField<T> {
    let prod = |a: &[T], b: &[T]| -> Vec<T> { a.iter().zip(b).map(|(&p, &q)| p * q).collect() };
    let mx = filter_valid(x, h, w, taps);
    let my = filter_valid(y, h, w, taps);
    let mxx = filter_valid(&prod(x, x), h, w, taps);
    let myy = filter_valid(&prod(y, y), h, w, taps);
    let mxy = filter_valid(&prod(x, y), h, w, taps);
    let (c1, c2, two) = (T::c(SSIM_C1), T::c(SSIM_C2), T::c(2.0));
    let len = mx.len();
    let mut f = SsimField {
        value: Vec::with_capacity(len),
        d_mx: Vec::with_capacity(len),
        d_my: Vec::with_capacity(len),
        d_mxx: Vec::with_capacity(len),
        d_myy: Vec::with_capacity(len),
        d_mxy: Vec::with_capacity(len),
    };
    for i in 0..len {
        let (ux, uy) = (mx[i], my[i]);
        let a = two * ux * uy + c1;
        let b = two * (mxy[i] - ux * uy) + c2;
        let c = ux * ux + uy * uy + c1;
        let d = (mxx[i] - ux * ux) + (myy[i] - uy * uy) + c2;
        let cd = c * d;
        let s = a * b / cd;
        f.value.push(s);
        f.d_mx.push(two * uy * (b - a) / cd - two * ux * s / c + two * ux * s / d);
        f.d_my.push(two * ux * (b - a) / cd - two * uy * s / c + two * uy * s / d);
        f.d_mxx.push(-s / d);
        f.d_myy.push(-s / d);
        f.d_mxy.push(two * a / cd);
    }
    f
}

/// Per-position SSIM map of two single planes, valid windows only.
pub fn ssim_map<T: Scalar>(x: &[T], y: &[T], h: usize, w: usize) -> Result<Vec<T>> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "ssim needs maps of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps: Vec<T> = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA).into_iter().map(T::c).collect();
    Ok(ssim_field(x, y, h, w, &taps).value)
}

impl<T: Scalar> Tape<T> {
    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.dims(pred);
        same_dims("mse", d, self.dims(target))?;
        let (p, t) = (self.value(pred), self.value(target));
        let inv = T::one() / T::c(d.len() as f64);
        let loss = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() * inv;
        self.record("mse", &[pred, target], Tensor4::scalar(loss), move |ctx| {
            let k = T::c(2.0) * ctx.grad[0] * inv;
            let dp: Vec<T> = ctx.inputs[0]
                .data()
                .iter()
                .zip(ctx.inputs[1].data())
                .map(|(&a, &b)| k * (a - b))
                .collect();
            let dt = dp.iter().map(|&v| -v).collect();
            vec![Some(dp), Some(dt)]
        })
    }

    /// Binary cross-entropy with the prediction clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.dims(pred);
        same_dims("bce", d, self.dims(target))?;
        let (lo, hi) = (T::c(BCE_CLAMP), T::c(1.0 - BCE_CLAMP));
        let inv = T::one() / T::c(d.len() as f64);
        let (p, t) = (self.value(pred), self.value(target));
        let loss = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&p, &t)| {
                let p = p.max(lo).min(hi);
                -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
            })
            .sum::<T>()
            * inv;
        self.record("bce", &[pred, target], Tensor4::scalar(loss), move |ctx| {
            let k = ctx.grad[0] * inv;
            let n = ctx.inputs[0].len();
            let (mut dp, mut dt) = (vec![T::zero(); n], vec![T::zero(); n]);
            for i in 0..n {
                let raw = ctx.inputs[0].data()[i];
                let t = ctx.inputs[1].data()[i];
                let p = raw.max(lo).min(hi);
                if raw > lo && raw < hi {
                    dp[i] = k * (p - t) / (p * (T::one() - p));
                }
                dt[i] = k * ((T::one() - p).ln() - p.ln());
            }
            vec![Some(dp), Some(dt)]
        })
    }

    /// `1 - mean SSIM` over every valid window of every (n, c) plane.
    pub fn ssim_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.dims(pred);
        same_dims("ssim_loss", d, self.dims(target))?;
        if d.h < SSIM_WINDOW || d.w < SSIM_WINDOW {
            return Err(Error::shape(format!(
                "ssim_loss needs maps of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {d}"
            )));
        }
        let taps: Vec<T> = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA).into_iter().map(T::c).collect();
        let planes = d.n * d.c;
        let positions = (d.h + 1 - SSIM_WINDOW) * (d.w + 1 - SSIM_WINDOW);
        let inv = T::one() / T::c((planes * positions) as f64);
        let (p, t) = (self.value(pred), self.value(target));
        let mut fields = Vec::with_capacity(planes);
        let mut total = T::zero();
        for n in 0..d.n {
            for c in 0..d.c {
                let f = ssim_field(p.plane(n, c), t.plane(n, c), d.h, d.w, &taps);
                total += f.value.iter().copied().sum::<T>();
                fields.push(f);
            }
        }
        let loss = T::one() - total * inv;
        self.record("ssim_loss", &[pred, target], Tensor4::scalar(loss), move |ctx| {
            let k = -ctx.grad[0] * inv;
            let (mut dp, mut dt) = (vec![T::zero(); d.len()], vec![T::zero(); d.len()]);
            let scaled = |v: &[T]| -> Vec<T> { v.iter().map(|&a| a * k).collect() };
            let back = |v: &[T]| filter_valid_adjoint(&scaled(v), d.h, d.w, &taps);
            let two = T::c(2.0);
            for (i, f) in fields.iter().enumerate() {
                let x = &ctx.inputs[0].data()[i * d.plane()..(i + 1) * d.plane()];
                let y = &ctx.inputs[1].data()[i * d.plane()..(i + 1) * d.plane()];
                let (gmx, gmy) = (back(&f.d_mx), back(&f.d_my));
                let (gxx, gyy, gxy) = (back(&f.d_mxx), back(&f.d_myy), back(&f.d_mxy));
                let base = i * d.plane();
                for j in 0..d.plane() {
                    dp[base + j] = gmx[j] + two * x[j] * gxx[j] + y[j] * gxy[j];
                    dt[base + j] = gmy[j] + two * y[j] * gyy[j] + x[j] * gxy[j];
                }
            }
            vec![Some(dp), Some(dt)]
        })
    }

    pub fn loss(&mut self, kind: LossKind, pred: Var, target: Var) -> Result<Var> {
        match kind {
            LossKind::Mse => self.mse(pred, target),
            LossKind::Bce => self.bce(pred, target),
            LossKind::SsimNegation => self.ssim_loss(pred, target),
        }
    }
}

/// Evaluates a loss on plain tensors without keeping a graph.
pub fn loss_value<T: Scalar>(kind: LossKind, pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<T> {
    let mut tape = Tape::new();
    let (p, t) = (tape.constant(pred.clone()), tape.constant(target.clone()));
    let l = tape.loss(kind, p, t)?;
    Ok(tape.value(l).data()[0])
}
