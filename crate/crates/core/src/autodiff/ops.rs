//! Elementwise arithmetic, channel concatenation/slicing and reductions.

use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor4};

/// Kinds accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    /// Multiplication by a constant factor.
    Scale(f64),
    Relu,
    Sigmoid,
}

impl ElementwiseOp {
    pub fn is_binary(self) -> bool {
        matches!(self, ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul)
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn same_dims(a: Dims, b: Dims, op: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{op}: dims {a} and {b} differ")));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        match (op.is_binary(), b) {
            (true, Some(b)) => match op {
                ElementwiseOp::Add => self.add(a, b),
                ElementwiseOp::Sub => self.sub(a, b),
                _ => self.mul(a, b),
            },
            (true, None) => Err(Error::arg(format!("{op:?} needs two operands"))),
            (false, Some(_)) => Err(Error::arg(format!("{op:?} takes one operand"))),
            (false, None) => match op {
                ElementwiseOp::Scale(k) => self.scale(a, T::c(k)),
                ElementwiseOp::Relu => self.relu(a),
                _ => self.sigmoid(a),
            },
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims(self.dims(a), self.dims(b), "add")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor4::from_vec(va.dims(), data)?;
        self.record("add", &[a, b], out, |ctx| {
            vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())]
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims(self.dims(a), self.dims(b), "sub")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor4::from_vec(va.dims(), data)?;
        self.record("sub", &[a, b], out, |ctx| {
            vec![
                Some(ctx.grad.to_vec()),
                Some(ctx.grad.iter().map(|&g| -g).collect()),
            ]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims(self.dims(a), self.dims(b), "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor4::from_vec(va.dims(), data)?;
        self.record("mul", &[a, b], out, |ctx| {
            let (x, y) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let ga = ctx.grad.iter().zip(y).map(|(&g, &v)| g * v).collect();
            let gb = ctx.grad.iter().zip(x).map(|(&g, &v)| g * v).collect();
            vec![Some(ga), Some(gb)]
        })
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * k);
        self.record("scale", &[a], out, move |ctx| {
            vec![Some(ctx.grad.iter().map(|&g| g * k).collect())]
        })
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, k: T) -> Result<Var> {
        let out = self.value(a).map(|v| v + k);
        self.record("shift", &[a], out, |ctx| vec![Some(ctx.grad.to_vec())])
    }

    /// Rectifier; the derivative at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(T::zero()));
        self.record("relu", &[a], out, |ctx| {
            let x = ctx.inputs[0].data();
            let g = ctx
                .grad
                .iter()
                .zip(x)
                .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                .collect();
            vec![Some(g)]
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.record("sigmoid", &[a], out, |ctx| {
            let y = ctx.output.data();
            let g = ctx
                .grad
                .iter()
                .zip(y)
                .map(|(&g, &s)| g * s * (T::one() - s))
                .collect();
            vec![Some(g)]
        })
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::arg("concat_channels of an empty list"))?;
        let d0 = self.dims(first);
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let d = self.dims(p);
            if (d.n, d.h, d.w) != (d0.n, d0.h, d0.w) {
                return Err(Error::shape(format!("concat_channels: {d} incompatible with {d0}")));
            }
            channels.push(d.c);
        }
        let total: usize = channels.iter().sum();
        let out_dims = Dims::new(d0.n, total, d0.h, d0.w);
        let plane = d0.plane();
        let mut data = Vec::with_capacity(out_dims.len());
        for n in 0..d0.n {
            for &p in parts {
                data.extend_from_slice(self.value(p).item(n));
            }
        }
        let out = Tensor4::from_vec(out_dims, data)?;
        self.record("concat_channels", parts, out, move |ctx| {
            let mut grads: Vec<Vec<T>> = channels
                .iter()
                .map(|&c| Vec::with_capacity(d0.n * c * plane))
                .collect();
            let item = total * plane;
            for n in 0..d0.n {
                let mut off = n * item;
                for (g, &c) in grads.iter_mut().zip(&channels) {
                    g.extend_from_slice(&ctx.grad[off..off + c * plane]);
                    off += c * plane;
                }
            }
            grads.into_iter().map(Some).collect()
        })
    }

    /// Channels `[start, start + count)` of `a`.
    pub fn slice_channels(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let d = self.dims(a);
        if count == 0 || start + count > d.c {
            return Err(Error::shape(format!(
                "slice_channels: range {start}..{} outside {} channels",
                start + count,
                d.c
            )));
        }
        let plane = d.plane();
        let va = self.value(a);
        let mut data = Vec::with_capacity(d.n * count * plane);
        for n in 0..d.n {
            let item = va.item(n);
            data.extend_from_slice(&item[start * plane..(start + count) * plane]);
        }
        let out = Tensor4::from_vec(Dims::new(d.n, count, d.h, d.w), data)?;
        self.record("slice_channels", &[a], out, move |ctx| {
            let mut g = vec![T::zero(); d.len()];
            for n in 0..d.n {
                let dst = n * d.item() + start * plane;
                let src = n * count * plane;
                g[dst..dst + count * plane].copy_from_slice(&ctx.grad[src..src + count * plane]);
            }
            vec![Some(g)]
        })
    }

    /// Sum of all elements as a (1,1,1,1) tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let d = self.dims(a);
        let out = Tensor4::scalar(self.value(a).sum());
        self.record("sum", &[a], out, move |ctx| vec![Some(vec![ctx.grad[0]; d.len()])])
    }

    /// Mean of all elements as a (1,1,1,1) tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let d = self.dims(a);
        if d.is_empty() {
            return Err(Error::arg("mean of an empty tensor"));
        }
        let inv = T::one() / T::c(d.len() as f64);
        let out = Tensor4::scalar(self.value(a).sum() * inv);
        self.record("mean", &[a], out, move |ctx| {
            vec![Some(vec![ctx.grad[0] * inv; d.len()])]
        })
    }
}
