//! Modulated deformable convolution.
//!
//! Each kernel tap of every output position reads the input through a
//! bilinear sampler at the regular grid position displaced by a learned
//! (Δy, Δx) offset, and is scaled by a learned modulation mask in (0, 1).
//!
//! Offset layout: channel `2k` holds Δy and `2k + 1` holds Δx for tap `k`
//! (row-major over the kernel). Mask channel `k` scales tap `k`.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::ConvSpec;
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor4};

/// Geometry of a deformable convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeformSpec {
    pub base: ConvSpec,
}

impl DeformSpec {
    pub fn new(base: ConvSpec) -> Self {
        DeformSpec { base }
    }

    pub fn taps(&self) -> usize {
        self.base.taps()
    }

    pub fn offset_channels(&self) -> usize {
        2 * self.taps()
    }

    pub fn mask_channels(&self) -> usize {
        self.taps()
    }

    /// Expected offset and mask dims for an input of dims `x`.
    pub fn side_dims(&self, x: Dims) -> Result<(Dims, Dims)> {
        let (oh, ow) = self.base.output_size(x.h, x.w)?;
        Ok((
            Dims::new(x.n, self.offset_channels(), oh, ow),
            Dims::new(x.n, self.mask_channels(), oh, ow),
        ))
    }
}

/// Bilinear weights of the four integer neighbours of `p` together with
/// their partial derivatives with respect to `p`.
#[derive(Clone, Copy, Debug)]
struct Corners<T> {
    y0: isize,
    x0: isize,
    /// Fractional parts.
    ly: T,
    lx: T,
}

impl<T: Scalar> Corners<T> {
    #[inline]
    fn new(py: T, px: T) -> Self {
        let fy = py.floor();
        let fx = px.floor();
        Corners {
            y0: fy.to_isize().unwrap_or(isize::MIN / 4),
            x0: fx.to_isize().unwrap_or(isize::MIN / 4),
            ly: py - fy,
            lx: px - fx,
        }
    }

    #[inline]
    fn read(plane: &[T], h: usize, w: usize, y: isize, x: isize) -> T {
        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
            plane[y as usize * w + x as usize]
        } else {
            T::zero()
        }
    }

    /// The four neighbour values (y0x0, y0x1, y1x0, y1x1).
    #[inline]
    fn values(&self, plane: &[T], h: usize, w: usize) -> [T; 4] {
        [
            Self::read(plane, h, w, self.y0, self.x0),
            Self::read(plane, h, w, self.y0, self.x0 + 1),
            Self::read(plane, h, w, self.y0 + 1, self.x0),
            Self::read(plane, h, w, self.y0 + 1, self.x0 + 1),
        ]
    }

    #[inline]
    fn weights(&self) -> [T; 4] {
        let (hy, hx) = (T::one() - self.ly, T::one() - self.lx);
        [hy * hx, hy * self.lx, self.ly * hx, self.ly * self.lx]
    }

    #[inline]
    fn sample(&self, plane: &[T], h: usize, w: usize) -> T {
        let v = self.values(plane, h, w);
        let k = self.weights();
        v[0] * k[0] + v[1] * k[1] + v[2] * k[2] + v[3] * k[3]
    }

    /// (∂/∂py, ∂/∂px) of the sampled value.
    #[inline]
    fn coord_grad(&self, plane: &[T], h: usize, w: usize) -> (T, T) {
        let v = self.values(plane, h, w);
        let (hy, hx) = (T::one() - self.ly, T::one() - self.lx);
        let dy = hx * (v[2] - v[0]) + self.lx * (v[3] - v[1]);
        let dx = hy * (v[1] - v[0]) + self.ly * (v[3] - v[2]);
        (dy, dx)
    }

    /// Scatters `g` into the in-bounds neighbours with the bilinear weights.
    #[inline]
    fn scatter(&self, g: T, out: &mut [T], h: usize, w: usize) {
        let k = self.weights();
        let pts = [
            (self.y0, self.x0),
            (self.y0, self.x0 + 1),
            (self.y0 + 1, self.x0),
            (self.y0 + 1, self.x0 + 1),
        ];
        for ((y, x), kw) in pts.into_iter().zip(k) {
            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                out[y as usize * w + x as usize] += g * kw;
            }
        }
    }
}

/// Samples a single-channel (h, w) plane at fractional `(row, col)`, reading
/// zero outside the plane.
pub fn bilinear_sample<T: Scalar>(plane: &[T], h: usize, w: usize, p: (T, T)) -> Result<T> {
    if plane.len() != h * w {
        return Err(Error::shape(format!("plane of {} values is not {h}x{w}", plane.len())));
    }
    if !p.0.is_finite() || !p.1.is_finite() {
        return Err(Error::arg("bilinear_sample position must be finite"));
    }
    Ok(Corners::new(p.0, p.1).sample(plane, h, w))
}

/// Gradient of [`bilinear_sample`] with respect to the position.
pub fn bilinear_sample_coord_grad<T: Scalar>(plane: &[T], h: usize, w: usize, p: (T, T)) -> Result<(T, T)> {
    if !p.0.is_finite() || !p.1.is_finite() {
        return Err(Error::arg("bilinear_sample position must be finite"));
    }
    Ok(Corners::new(p.0, p.1).coord_grad(plane, h, w))
}

struct Geometry {
    x: Dims,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl Geometry {
    /// Sampling position of tap (ki, kj) for output (oy, ox) before offsets.
    #[inline]
    fn grid(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> (isize, isize) {
        let s = &self.spec;
        (
            (oy * s.stride.0 + ki * s.dilation.0) as isize - s.padding.0 as isize,
            (ox * s.stride.1 + kj * s.dilation.1) as isize - s.padding.1 as isize,
        )
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn rows(&self) -> usize {
        self.x.c * self.spec.taps()
    }

    /// Modulated deformable columns (c·K, oh·ow) of batch item `n`.
    fn columns<T: Scalar>(&self, x: &Tensor4<T>, offsets: &Tensor4<T>, masks: &Tensor4<T>, n: usize, cols: &mut [T]) {
        let (kh, kw) = self.spec.kernel;
        let k_taps = kh * kw;
        let p_count = self.positions();
        let (h, w) = (self.x.h, self.x.w);
        for k in 0..k_taps {
            let (ki, kj) = (k / kw, k % kw);
            let dy = offsets.plane(n, 2 * k);
            let dx = offsets.plane(n, 2 * k + 1);
            let m = masks.plane(n, k);
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let p = oy * self.ow + ox;
                    let (gy, gx) = self.grid(oy, ox, ki, kj);
                    let corners = Corners::new(T::c(gy as f64) + dy[p], T::c(gx as f64) + dx[p]);
                    for c in 0..self.x.c {
                        cols[(c * k_taps + k) * p_count + p] = m[p] * corners.sample(x.plane(n, c), h, w);
                    }
                }
            }
        }
    }
}

fn validate<T: Scalar>(x: &Tensor4<T>, offsets: &Tensor4<T>, masks: &Tensor4<T>, weight: &Tensor4<T>, bias: Option<&Tensor4<T>>, spec: &DeformSpec) -> Result<Geometry> {
    let d = x.dims();
    let base = spec.base;
    if d.c != base.in_channels {
        return Err(Error::shape(format!(
            "deform_conv2d input has {} channels, spec expects {}",
            d.c, base.in_channels
        )));
    }
    if weight.dims() != base.weight_dims() {
        return Err(Error::shape(format!(
            "deform_conv2d weight dims {}, expected {}",
            weight.dims(),
            base.weight_dims()
        )));
    }
    match (bias, base.has_bias) {
        (Some(b), true) if b.dims() == base.bias_dims() => {}
        (None, false) => {}
        _ => return Err(Error::shape("deform_conv2d bias does not match spec")),
    }
    let (od, md) = spec.side_dims(d)?;
    if offsets.dims() != od {
        return Err(Error::shape(format!("offsets dims {}, expected {od}", offsets.dims())));
    }
    if masks.dims() != md {
        return Err(Error::shape(format!("masks dims {}, expected {md}", masks.dims())));
    }
    if !offsets.all_finite() {
        return Err(Error::arg("deform_conv2d offsets must be finite"));
    }
    Ok(Geometry {
        x: d,
        oh: od.h,
        ow: od.w,
        spec: base,
    })
}

/// Forward modulated deformable convolution, without recording.
pub fn deform_conv2d_forward<T: Scalar>(x: &Tensor4<T>, offsets: &Tensor4<T>, masks: &Tensor4<T>, weight: &Tensor4<T>, bias: Option<&Tensor4<T>>, spec: &DeformSpec) -> Result<Tensor4<T>> {
    let g = validate(x, offsets, masks, weight, bias, spec)?;
    let (m, k, p) = (spec.base.out_channels, g.rows(), g.positions());
    let mut out = vec![T::zero(); g.x.n * m * p];
    let mut cols = vec![T::zero(); k * p];
    for n in 0..g.x.n {
        g.columns(x, offsets, masks, n, &mut cols);
        T::gemm(m, k, p, T::one(), weight.data(), (k as isize, 1), &cols, (p as isize, 1), T::zero(), &mut out[n * m * p..(n + 1) * m * p], (p as isize, 1));
        if let Some(b) = bias {
            for (o, &bv) in b.data().iter().enumerate() {
                let start = (n * m + o) * p;
                out[start..start + p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Tensor4::from_vec(Dims::new(g.x.n, m, g.oh, g.ow), out)
}

impl<T: Scalar> Tape<T> {
    /// Modulated deformable convolution with gradients for every input.
    pub fn deform_conv2d(&mut self, x: Var, offsets: Var, masks: Var, weight: Var, bias: Option<Var>, spec: &DeformSpec) -> Result<Var> {
        let out = deform_conv2d_forward(
            self.value(x),
            self.value(offsets),
            self.value(masks),
            self.value(weight),
            bias.map(|b| self.value(b)),
            spec,
        )?;
        let geo = Geometry {
            x: self.dims(x),
            oh: out.dims().h,
            ow: out.dims().w,
            spec: spec.base,
        };
        let mut inputs = vec![x, offsets, masks, weight];
        inputs.extend(bias);
        self.record("deform_conv2d", &inputs, out, move |ctx| {
            let (xv, off, msk, wv) = (ctx.inputs[0], ctx.inputs[1], ctx.inputs[2], ctx.inputs[3]);
            let d = geo.x;
            let (m, k, p) = (geo.spec.out_channels, geo.rows(), geo.positions());
            let (kh, kw) = geo.spec.kernel;
            let taps = kh * kw;
            let (h, w) = (d.h, d.w);

            let mut dx = vec![T::zero(); d.len()];
            let mut doff = vec![T::zero(); off.len()];
            let mut dmask = vec![T::zero(); msk.len()];
            let mut dw = vec![T::zero(); m * k];
            let mut cols = vec![T::zero(); k * p];
            let mut dcols = vec![T::zero(); k * p];

            for n in 0..d.n {
                let gy = &ctx.grad[n * m * p..(n + 1) * m * p];
                geo.columns(xv, off, msk, n, &mut cols);
                T::gemm(m, p, k, T::one(), gy, (p as isize, 1), &cols, (1, p as isize), T::one(), &mut dw, (k as isize, 1));
                T::gemm(k, m, p, T::one(), wv.data(), (1, k as isize), gy, (p as isize, 1), T::zero(), &mut dcols, (p as isize, 1));

                let od = off.dims();
                let md = msk.dims();
                for tap in 0..taps {
                    let (ki, kj) = (tap / kw, tap % kw);
                    let dy_base = od.index(n, 2 * tap, 0, 0);
                    let dx_base = od.index(n, 2 * tap + 1, 0, 0);
                    let m_base = md.index(n, tap, 0, 0);
                    for oy in 0..geo.oh {
                        for ox in 0..geo.ow {
                            let pos = oy * geo.ow + ox;
                            let (gy0, gx0) = geo.grid(oy, ox, ki, kj);
                            let corners = Corners::new(
                                T::c(gy0 as f64) + off.data()[dy_base + pos],
                                T::c(gx0 as f64) + off.data()[dx_base + pos],
                            );
                            let mk = msk.data()[m_base + pos];
                            let (mut gm, mut gpy, mut gpx) = (T::zero(), T::zero(), T::zero());
                            for c in 0..d.c {
                                let g = dcols[(c * taps + tap) * p + pos];
                                if g == T::zero() {
                                    continue;
                                }
                                let plane = xv.plane(n, c);
                                gm += g * corners.sample(plane, h, w);
                                let (sy, sx) = corners.coord_grad(plane, h, w);
                                gpy += g * mk * sy;
                                gpx += g * mk * sx;
                                let start = d.index(n, c, 0, 0);
                                corners.scatter(g * mk, &mut dx[start..start + d.plane()], h, w);
                            }
                            dmask[m_base + pos] += gm;
                            doff[dy_base + pos] += gpy;
                            doff[dx_base + pos] += gpx;
                        }
                    }
                }
            }
            let mut grads = vec![Some(dx), Some(doff), Some(dmask), Some(dw)];
            if ctx.inputs.len() == 5 {
                let mut db = vec![T::zero(); m];
                for n in 0..d.n {
                    for (o, acc) in db.iter_mut().enumerate() {
                        let s = (n * m + o) * p;
                        *acc += ctx.grad[s..s + p].iter().copied().sum::<T>();
                    }
                }
                grads.push(Some(db));
            }
            grads
        })
    }
}

/// A deformable convolution together with the standard convolution that
/// predicts its offsets and pre-squash masks from the same input.
#[derive(Clone, Debug)]
pub struct DeformLayer {
    pub spec: DeformSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    /// Produces `3K` channels: `2K` offsets followed by `K` mask logits.
    pub offset_spec: ConvSpec,
    pub offset_weight: ParamId,
    pub offset_bias: ParamId,
}

impl DeformLayer {
    /// Registers the layer's parameters under `prefix`. The main weight is
    /// drawn from a fan-in scaled normal; the offset branch starts at zero.
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, spec: DeformSpec, rng: &mut R) -> Result<Self> {
        let base = spec.base;
        let fan_in = (base.in_channels * base.taps()) as f64;
        let weight = store.add(
            format!("{prefix}.weight"),
            Tensor4::normal(base.weight_dims(), (2.0 / fan_in).sqrt(), rng),
        )?;
        let bias = if base.has_bias {
            Some(store.add(format!("{prefix}.bias"), Tensor4::zeros(base.bias_dims()))?)
        } else {
            None
        };
        let offset_spec = ConvSpec {
            out_channels: 3 * spec.taps(),
            has_bias: true,
            ..base
        };
        let offset_weight = store.add(format!("{prefix}.offset.weight"), Tensor4::zeros(offset_spec.weight_dims()))?;
        let offset_bias = store.add(format!("{prefix}.offset.bias"), Tensor4::zeros(offset_spec.bias_dims()))?;
        Ok(DeformLayer {
            spec,
            weight,
            bias,
            offset_spec,
            offset_weight,
            offset_bias,
        })
    }

    /// Predicts offsets and masks, squashes the masks and applies the
    /// deformable convolution.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        self.forward_bound(tape, x, &mut |tape, id| tape.param(store, id))
    }

    /// [`DeformLayer::forward`] with parameters bound through `bind`, e.g. as
    /// constants for inference.
    pub fn forward_bound<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, bind: &mut dyn FnMut(&mut Tape<T>, ParamId) -> Var) -> Result<Var> {
        let ow = bind(tape, self.offset_weight);
        let ob = bind(tape, self.offset_bias);
        let branch = tape.conv2d(x, ow, Some(ob), &self.offset_spec)?;
        let k = self.spec.taps();
        let offsets = tape.slice_channels(branch, 0, 2 * k)?;
        let logits = tape.slice_channels(branch, 2 * k, k)?;
        let masks = tape.sigmoid(logits)?;
        let w = bind(tape, self.weight);
        let b = self.bias.map(|b| bind(tape, b));
        tape.deform_conv2d(x, offsets, masks, w, b, &self.spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv2d_forward;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampler_exact_and_average() {
        let plane = [0.0f64, 1.0, 2.0, 3.0];
        assert_eq!(bilinear_sample(&plane, 2, 2, (1.0, 0.0)).unwrap(), 2.0);
        assert_eq!(bilinear_sample(&plane, 2, 2, (0.5, 0.5)).unwrap(), 1.5);
        assert_eq!(bilinear_sample(&plane, 2, 2, (-1.0, -1.0)).unwrap(), 0.0);
        assert!(bilinear_sample(&plane, 2, 2, (f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn sampler_coordinate_gradient_at_integer_is_forward_difference() {
        let plane = [0.0f64, 1.0, 2.0, 3.0];
        let (dy, dx) = bilinear_sample_coord_grad(&plane, 2, 2, (0.0, 0.0)).unwrap();
        assert_eq!((dy, dx), (2.0, 1.0));
    }

    fn random_case(seed: u64) -> (Tensor4<f64>, Tensor4<f64>, Tensor4<f64>, DeformSpec) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = DeformSpec::new(ConvSpec::new(2, 3, 3).padding(1));
        let x = Tensor4::uniform((1, 2, 6, 6), -1.0, 1.0, &mut rng);
        let w = Tensor4::uniform(spec.base.weight_dims(), -1.0, 1.0, &mut rng);
        let b = Tensor4::uniform(spec.base.bias_dims(), -1.0, 1.0, &mut rng);
        (x, w, b, spec)
    }

    #[test]
    fn zero_offsets_unit_masks_is_conv() {
        let (x, w, b, spec) = random_case(1);
        let (od, md) = spec.side_dims(x.dims()).unwrap();
        let y = deform_conv2d_forward(&x, &Tensor4::zeros(od), &Tensor4::ones(md), &w, Some(&b), &spec).unwrap();
        let r = conv2d_forward(&x, &w, Some(&b), &spec.base).unwrap();
        assert!(y.max_abs_diff(&r) < 1e-12);
    }

    #[test]
    fn half_masks_scale_linear_part() {
        let (x, w, b, spec) = random_case(2);
        let (od, md) = spec.side_dims(x.dims()).unwrap();
        let y = deform_conv2d_forward(&x, &Tensor4::zeros(od), &Tensor4::full(md, 0.5), &w, Some(&b), &spec).unwrap();
        let r = conv2d_forward(&x, &w, Some(&b), &spec.base).unwrap();
        let expect = Tensor4::from_fn(r.dims(), |n, c, yy, xx| {
            let bias = b.data()[c];
            0.5 * (r.at(n, c, yy, xx) - bias) + bias
        });
        assert!(y.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let (x, w, b, spec) = random_case(3);
        let (od, md) = spec.side_dims(x.dims()).unwrap();
        let bad = Tensor4::zeros((1, od.c + 1, od.h, od.w));
        assert!(deform_conv2d_forward(&x, &bad, &Tensor4::ones(md), &w, Some(&b), &spec).is_err());
        let mut off = Tensor4::zeros(od);
        off.data_mut()[0] = f64::INFINITY;
        assert!(deform_conv2d_forward(&x, &off, &Tensor4::ones(md), &w, Some(&b), &spec).is_err());
    }

    #[test]
    fn zero_branch_layer_is_half_modulated_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::new();
        let spec = DeformSpec::new(ConvSpec::new(2, 4, 3).padding(1));
        let layer = DeformLayer::new(&mut store, "d", spec, &mut rng).unwrap();
        let x = Tensor4::uniform((1, 2, 8, 8), -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = layer.forward(&mut tape, &store, xv).unwrap();
        assert_eq!(tape.dims(y), Dims::new(1, 4, 8, 8));
        let r = conv2d_forward(&x, store.value(layer.weight), None, &spec.base.bias(false)).unwrap();
        let expect = r.map(|v| 0.5 * v);
        assert!(tape.value(y).max_abs_diff(&expect) < 1e-12);
    }
}
