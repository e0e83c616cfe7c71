//! Direct nested-loop convolution and random convolution geometries.
#![allow(dead_code)]

use ddnet::nn::ConvSpec;
use ddnet::Tensor4;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Six nested loops straight from the definition.
pub fn naive_conv(x: &Tensor4<f64>, w: &Tensor4<f64>, b: Option<&Tensor4<f64>>, s: &ConvSpec) -> Tensor4<f64> {
    let d = x.dims();
    let (oh, ow) = s.output_size(d.h, d.w).unwrap();
    Tensor4::from_fn((d.n, s.out_channels, oh, ow), |n, o, oy, ox| {
        let mut acc = b.map_or(0.0, |b| b.data()[o]);
        for c in 0..d.c {
            for ki in 0..s.kernel.0 {
                for kj in 0..s.kernel.1 {
                    let iy = (oy * s.stride.0 + ki * s.dilation.0) as isize - s.padding.0 as isize;
                    let ix = (ox * s.stride.1 + kj * s.dilation.1) as isize - s.padding.1 as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < d.h && (ix as usize) < d.w {
                        acc += w.at(o, c, ki, kj) * x.at(n, c, iy as usize, ix as usize);
                    }
                }
            }
        }
        acc
    })
}

pub fn random_spec(r: &mut ChaCha8Rng) -> (ConvSpec, (usize, usize, usize, usize)) {
    loop {
        let k = r.random_range(1..=3);
        let spec = ConvSpec {
            in_channels: r.random_range(1..=4),
            out_channels: r.random_range(1..=4),
            kernel: (k, r.random_range(1..=3)),
            stride: (r.random_range(1..=2), r.random_range(1..=2)),
            padding: (r.random_range(0..=2), r.random_range(0..=2)),
            dilation: (r.random_range(1..=2), r.random_range(1..=2)),
            has_bias: r.random_bool(0.5),
        };
        let dims = (r.random_range(1..=2), spec.in_channels, r.random_range(3..=9), r.random_range(3..=9));
        if spec.output_size(dims.2, dims.3).is_ok() {
            return (spec, dims);
        }
    }
}

pub trait IntoTuple {
    fn into_tuple(self) -> (usize, usize, usize, usize);
}

impl IntoTuple for ddnet::Dims {
    fn into_tuple(self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }
}
