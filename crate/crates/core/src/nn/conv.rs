//! Direct and transposed 2-D convolution via im2col + GEMM.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor4};

/// Static description of a convolution layer. Padding is zero-padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub has_bias: bool,
}

impl ConvSpec {
    /// Square kernel, stride 1, no padding, dilation 1, with bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
            has_bias: true,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }

    /// Dims of the convolution weight, (out, in, kh, kw).
    pub fn weight_dims(&self) -> Dims {
        Dims::new(self.out_channels, self.in_channels, self.kernel.0, self.kernel.1)
    }

    /// Dims of the transposed-convolution weight, (in, out, kh, kw).
    pub fn transposed_weight_dims(&self) -> Dims {
        Dims::new(self.in_channels, self.out_channels, self.kernel.0, self.kernel.1)
    }

    pub fn bias_dims(&self) -> Dims {
        Dims::new(1, self.out_channels, 1, 1)
    }

    fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (dh, dw) = self.dilation;
        if self.in_channels == 0 || self.out_channels == 0 || kh == 0 || kw == 0 || sh == 0 || sw == 0 || dh == 0 || dw == 0 {
            return Err(Error::arg(format!("degenerate convolution spec {self:?}")));
        }
        Ok(())
    }

    /// Output (h, w) of the direct convolution for an input of (h, w).
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let out = |size: usize, k: usize, s: usize, p: usize, d: usize| -> Option<usize> {
            let padded = size + 2 * p;
            let span = d * (k - 1) + 1;
            (padded >= span).then(|| (padded - span) / s + 1)
        };
        match (
            out(h, self.kernel.0, self.stride.0, self.padding.0, self.dilation.0),
            out(w, self.kernel.1, self.stride.1, self.padding.1, self.dilation.1),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape(format!(
                "convolution {self:?} has non-positive output size for input {h}x{w}"
            ))),
        }
    }

    /// Output (h, w) of the transposed convolution for an input of (h, w).
    pub fn transposed_output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let out = |size: usize, k: usize, s: usize, p: usize, d: usize| -> Option<usize> {
            let full = (size.checked_sub(1)?) * s + d * (k - 1) + 1;
            full.checked_sub(2 * p).filter(|&o| o > 0)
        };
        match (
            out(h, self.kernel.0, self.stride.0, self.padding.0, self.dilation.0),
            out(w, self.kernel.1, self.stride.1, self.padding.1, self.dilation.1),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape(format!(
                "transposed convolution {self:?} has non-positive output size for input {h}x{w}"
            ))),
        }
    }

    /// Same geometry with input and output channels exchanged; the direct
    /// convolution of this spec is the adjoint of the transposed convolution
    /// of `self`.
    pub fn swapped(&self) -> Self {
        ConvSpec {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            ..*self
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.padding == (0, 0)
    }
}

/// Geometry of one im2col lowering: the image side of a direct convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Lowering {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    pub spec: ConvSpec,
}

impl Lowering {
    pub fn rows(&self) -> usize {
        self.c * self.spec.taps()
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate of output position `o` for kernel tap `k` along one axis.
    #[inline]
    fn coord(o: usize, k: usize, s: usize, p: usize, d: usize) -> isize {
        (o * s + k * d) as isize - p as isize
    }

    /// Lowers one (c, h, w) image into a (c·kh·kw, oh·ow) matrix.
    pub fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let ConvSpec {
            kernel: (kh, kw),
            stride: (sh, sw),
            padding: (ph, pw),
            dilation: (dh, dw),
            ..
        } = self.spec;
        let (h, w, oh, ow) = (self.h, self.w, self.oh, self.ow);
        let mut row = 0;
        for c in 0..self.c {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let out = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = Self::coord(oy, ki, sh, ph, dh);
                        let dst = &mut out[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = Self::coord(ox, kj, sw, pw, dw);
                            *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { T::zero() };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Scatter-adds a (c·kh·kw, oh·ow) matrix back into a (c, h, w) image.
    pub fn col2im<T: Scalar>(&self, cols: &[T], x: &mut [T]) {
        let ConvSpec {
            kernel: (kh, kw),
            stride: (sh, sw),
            padding: (ph, pw),
            dilation: (dh, dw),
            ..
        } = self.spec;
        let (h, w, oh, ow) = (self.h, self.w, self.oh, self.ow);
        let mut row = 0;
        for c in 0..self.c {
            let plane = &mut x[c * h * w..(c + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = Self::coord(oy, ki, sh, ph, dh);
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            let ix = Self::coord(ox, kj, sw, pw, dw);
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn check_weight(weight: Dims, expected: Dims, what: &str) -> Result<()> {
    if weight != expected {
        return Err(Error::shape(format!("{what} weight dims {weight}, expected {expected}")));
    }
    Ok(())
}

fn check_bias<T: Scalar>(bias: Option<&Tensor4<T>>, spec: &ConvSpec) -> Result<()> {
    match (bias, spec.has_bias) {
        (Some(b), true) if b.dims() == spec.bias_dims() => Ok(()),
        (Some(b), true) => Err(Error::shape(format!("bias dims {}, expected {}", b.dims(), spec.bias_dims()))),
        (None, false) => Ok(()),
        (Some(_), false) => Err(Error::arg("bias given for a spec without bias")),
        (None, true) => Err(Error::arg("spec requires a bias")),
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], n: usize, plane: usize) {
    let c = bias.len();
    for item in 0..n {
        for (ch, &b) in bias.iter().enumerate() {
            let start = (item * c + ch) * plane;
            out[start..start + plane].iter_mut().for_each(|v| *v += b);
        }
    }
}

fn bias_grad<T: Scalar>(grad: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut g = vec![T::zero(); c];
    for item in 0..n {
        for (ch, acc) in g.iter_mut().enumerate() {
            let start = (item * c + ch) * plane;
            *acc += grad[start..start + plane].iter().copied().sum::<T>();
        }
    }
    g
}

/// Forward direct convolution, without recording.
pub fn conv2d_forward<T: Scalar>(x: &Tensor4<T>, weight: &Tensor4<T>, bias: Option<&Tensor4<T>>, spec: &ConvSpec) -> Result<Tensor4<T>> {
    let d = x.dims();
    if d.c != spec.in_channels {
        return Err(Error::shape(format!(
            "conv2d input has {} channels, spec expects {}",
            d.c, spec.in_channels
        )));
    }
    check_weight(weight.dims(), spec.weight_dims(), "conv2d")?;
    check_bias(bias, spec)?;
    let (oh, ow) = spec.output_size(d.h, d.w)?;
    let low = Lowering { c: d.c, h: d.h, w: d.w, oh, ow, spec: *spec };
    let out_dims = Dims::new(d.n, spec.out_channels, oh, ow);
    let mut out = vec![T::zero(); out_dims.len()];
    let (m, k, p) = (spec.out_channels, low.rows(), low.cols());
    let mut cols = if spec.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for n in 0..d.n {
        let b: &[T] = if spec.is_pointwise() {
            x.item(n)
        } else {
            low.im2col(x.item(n), &mut cols);
            &cols
        };
        let y = &mut out[n * m * p..(n + 1) * m * p];
        T::gemm(m, k, p, T::one(), weight.data(), (k as isize, 1), b, (p as isize, 1), T::zero(), y, (p as isize, 1));
    }
    if let Some(b) = bias {
        add_bias(&mut out, b.data(), d.n, oh * ow);
    }
    Tensor4::from_vec(out_dims, out)
}

/// Gradient of a direct convolution with respect to its input: the
/// transposed convolution of `grad` (n, out, oh, ow) back onto (h, w).
fn conv2d_input_grad<T: Scalar>(grad: &[T], weight: &[T], low: &Lowering, n: usize) -> Vec<T> {
    let (m, k, p) = (low.spec.out_channels, low.rows(), low.cols());
    let item = low.c * low.h * low.w;
    let mut dx = vec![T::zero(); n * item];
    let pointwise = low.spec.is_pointwise();
    let mut dcols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    for i in 0..n {
        let gy = &grad[i * m * p..(i + 1) * m * p];
        if pointwise {
            let dst = &mut dx[i * item..(i + 1) * item];
            T::gemm(k, m, p, T::one(), weight, (1, k as isize), gy, (p as isize, 1), T::zero(), dst, (p as isize, 1));
        } else {
            T::gemm(k, m, p, T::one(), weight, (1, k as isize), gy, (p as isize, 1), T::zero(), &mut dcols, (p as isize, 1));
            low.col2im(&dcols, &mut dx[i * item..(i + 1) * item]);
        }
    }
    dx
}

/// Gradient of a direct convolution with respect to its weight.
fn conv2d_weight_grad<T: Scalar>(grad: &[T], x: &Tensor4<T>, low: &Lowering) -> Vec<T> {
    let (m, k, p) = (low.spec.out_channels, low.rows(), low.cols());
    let mut dw = vec![T::zero(); m * k];
    let pointwise = low.spec.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    for i in 0..x.dims().n {
        let b: &[T] = if pointwise {
            x.item(i)
        } else {
            low.im2col(x.item(i), &mut cols);
            &cols
        };
        let gy = &grad[i * m * p..(i + 1) * m * p];
        T::gemm(m, p, k, T::one(), gy, (p as isize, 1), b, (1, p as isize), T::one(), &mut dw, (k as isize, 1));
    }
    dw
}

/// Forward transposed convolution with weight (in, out, kh, kw), without recording.
pub fn transposed_conv2d_forward<T: Scalar>(x: &Tensor4<T>, weight: &Tensor4<T>, bias: Option<&Tensor4<T>>, spec: &ConvSpec) -> Result<Tensor4<T>> {
    let d = x.dims();
    if d.c != spec.in_channels {
        return Err(Error::shape(format!(
            "transposed_conv2d input has {} channels, spec expects {}",
            d.c, spec.in_channels
        )));
    }
    check_weight(weight.dims(), spec.transposed_weight_dims(), "transposed_conv2d")?;
    check_bias(bias, spec)?;
    let (oh, ow) = spec.transposed_output_size(d.h, d.w)?;
    let adjoint = spec.swapped();
    let low = Lowering { c: spec.out_channels, h: oh, w: ow, oh: d.h, ow: d.w, spec: adjoint };
    let mut out = conv2d_input_grad(x.data(), weight.data(), &low, d.n);
    if let Some(b) = bias {
        add_bias(&mut out, b.data(), d.n, oh * ow);
    }
    Tensor4::from_vec(Dims::new(d.n, spec.out_channels, oh, ow), out)
}

impl<T: Scalar> Tape<T> {
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let out = conv2d_forward(self.value(x), self.value(weight), bias.map(|b| self.value(b)), spec)?;
        let d = self.dims(x);
        let od = out.dims();
        let low = Lowering { c: d.c, h: d.h, w: d.w, oh: od.h, ow: od.w, spec: *spec };
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        let (wants_x, wants_w) = (self.requires_grad(x), self.requires_grad(weight));
        self.record("conv2d", &inputs, out, move |ctx| {
            let (xv, wv) = (ctx.inputs[0], ctx.inputs[1]);
            let mut grads = vec![
                wants_x.then(|| conv2d_input_grad(ctx.grad, wv.data(), &low, d.n)),
                wants_w.then(|| conv2d_weight_grad(ctx.grad, xv, &low)),
            ];
            if ctx.inputs.len() == 3 {
                grads.push(Some(bias_grad(ctx.grad, d.n, low.spec.out_channels, low.cols())));
            }
            grads
        })
    }

    pub fn transposed_conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let out = transposed_conv2d_forward(self.value(x), self.value(weight), bias.map(|b| self.value(b)), spec)?;
        let d = self.dims(x);
        let od = out.dims();
        // The adjoint direct convolution maps the output (od) back onto x (d).
        let low = Lowering { c: od.c, h: od.h, w: od.w, oh: d.h, ow: d.w, spec: spec.swapped() };
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        let (wants_x, wants_w) = (self.requires_grad(x), self.requires_grad(weight));
        self.record("transposed_conv2d", &inputs, out, move |ctx| {
            let (xv, wv) = (ctx.inputs[0], ctx.inputs[1]);
            let gy = Tensor4::from_vec(od, ctx.grad.to_vec()).expect("gradient dims");
            let dx = wants_x.then(|| {
                conv2d_forward(&gy, wv, None, &low.spec.bias(false))
                    .expect("adjoint geometry")
                    .into_vec()
            });
            // dW[i, o, k] = sum_p x[i, p] * cols(gy)[o·k, p]
            let dw = wants_w.then(|| {
                let (m, k, p) = (d.c, low.rows(), low.cols());
                let mut dw = vec![T::zero(); m * k];
                let mut cols = vec![T::zero(); k * p];
                for i in 0..d.n {
                    low.im2col(gy.item(i), &mut cols);
                    T::gemm(m, p, k, T::one(), xv.item(i), (p as isize, 1), &cols, (1, p as isize), T::one(), &mut dw, (k as isize, 1));
                }
                dw
            });
            let mut grads = vec![dx, dw];
            if ctx.inputs.len() == 3 {
                grads.push(Some(bias_grad(ctx.grad, d.n, od.c, od.plane())));
            }
            grads
        })
    }
}
