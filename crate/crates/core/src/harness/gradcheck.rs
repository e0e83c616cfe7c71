use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, Tape, Var};
use crate::deform::DeformSpec;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::model::{Model, ModelConfig};
use crate::nn::{ConvSpec, Mode, PoolSpec, BN_EPSILON};
use crate::param::ParamId;
use crate::tensor::{Dims, Tensor4};

/// Finite-difference step of the operator suite.
pub const OPS_EPS: f64 = 1e-5;
/// The SSIM window needs a larger step; see the loss module tests.
pub const SSIM_EPS: f64 = 1e-4;
pub const OPS_TOLERANCE: f64 = 1e-4;
pub const MODEL_EPS: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Denominator floor of the end-to-end comparison. Some gradients are zero
/// by construction (a uniform shift ahead of a train-mode norm cancels), and
/// there the central difference is pure roundoff of order 1e-9.
pub const MODEL_FLOOR: f64 = 1e-5;
/// Largest relative gap between the one-sided slopes of a probe that still
/// counts as smooth.
pub const KINK_GAP: f64 = 1e-4;
const MAX_DRAWS: usize = 8;

/// One line of a gradient-check table: the worst error over all seeds or
/// samples of an item.
#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Draws discarded because the step crossed a kink (model scope).
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl std::fmt::Display for GradRow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<20} {:>10.3e} {:>8} {:>8} {}",
            self.name,
            self.max_rel_error,
            self.checked,
            self.skipped,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

type Case = (Vec<Tensor4<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>);

fn uniform(dims: impl Into<Dims>, r: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::uniform(dims, -1.0, 1.0, r)
}

/// Random convolution geometry with input dims up to (2, 4, 9, 9) whose
/// direct and transposed outputs are both non-empty.
pub fn random_conv_case(r: &mut ChaCha8Rng) -> (ConvSpec, Dims) {
    loop {
        let spec = ConvSpec {
            in_channels: r.random_range(1..=4),
            out_channels: r.random_range(1..=4),
            kernel: (r.random_range(1..=3), r.random_range(1..=3)),
            stride: (r.random_range(1..=2), r.random_range(1..=2)),
            padding: (r.random_range(0..=2), r.random_range(0..=2)),
            dilation: (r.random_range(1..=2), r.random_range(1..=2)),
            has_bias: r.random_bool(0.5),
        };
        let d = Dims::new(r.random_range(1..=2), spec.in_channels, r.random_range(3..=9), r.random_range(3..=9));
        if spec.output_size(d.h, d.w).is_ok() && spec.transposed_output_size(d.h, d.w).is_ok() {
            return (spec, d);
        }
    }
}

/// Offsets in (-0.7, 0.7) kept 1e-3 away from zero so sample points avoid
/// the sampler's kinks at integer coordinates.
fn smooth_offsets(dims: Dims, r: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_, _, _, _| loop {
        let v: f64 = r.random_range(-0.7..0.7);
        if v.abs() > 1e-3 {
            break v;
        }
    })
}

fn with_bias(spec: &ConvSpec, mut inputs: Vec<Tensor4<f64>>, r: &mut ChaCha8Rng) -> Vec<Tensor4<f64>> {
    if spec.has_bias {
        inputs.push(uniform(spec.bias_dims(), r));
    }
    inputs
}

/// Names of the operator suite, in table order.
pub const OPS: [&str; 13] = [
    "conv2d",
    "transposed_conv2d",
    "batch_norm_train",
    "max_pool",
    "avg_pool",
    "bilinear_upsample",
    "bilinear_sample",
    "deform_conv2d",
    "mse",
    "bce",
    "ssim_negation",
    "sigmoid",
    "concat_channels",
];

fn op_case(name: &str, r: &mut ChaCha8Rng) -> Case {
    match name {
        "conv2d" => {
            let (spec, d) = random_conv_case(r);
            let inputs = with_bias(&spec, vec![uniform(d, r), uniform(spec.weight_dims(), r)], r);
            (inputs, Box::new(move |t, v| t.conv2d(v[0], v[1], v.get(2).copied(), &spec)))
        }
        "transposed_conv2d" => {
            let (spec, d) = random_conv_case(r);
            let inputs = with_bias(&spec, vec![uniform(d, r), uniform(spec.transposed_weight_dims(), r)], r);
            (inputs, Box::new(move |t, v| t.transposed_conv2d(v[0], v[1], v.get(2).copied(), &spec)))
        }
        "batch_norm_train" => {
            let inputs = vec![
                uniform((2, 3, 4, 4), r),
                Tensor4::uniform((1, 3, 1, 1), 0.5, 1.5, r),
                uniform((1, 3, 1, 1), r),
            ];
            (inputs, Box::new(|t, v| Ok(t.batch_norm_train(v[0], v[1], v[2], BN_EPSILON)?.0)))
        }
        "max_pool" => (vec![uniform((2, 3, 8, 8), r)], Box::new(|t, v| t.max_pool(v[0], PoolSpec::new(3, 2).padding(1)))),
        "avg_pool" => (vec![uniform((2, 3, 8, 8), r)], Box::new(|t, v| t.avg_pool(v[0], PoolSpec::new(2, 2)))),
        "bilinear_upsample" => (vec![uniform((2, 3, 5, 6), r)], Box::new(|t, v| t.bilinear_upsample(v[0], 2))),
        "bilinear_sample" => {
            // The sampler alone: a 1x1 deformable convolution with unit weight and masks.
            let spec = DeformSpec::new(ConvSpec::new(1, 1, 1).bias(false));
            let x = uniform((1, 1, 5, 5), r);
            let (od, md) = spec.side_dims(x.dims()).expect("valid dims");
            let off = smooth_offsets(od, r);
            (
                vec![x, off],
                Box::new(move |t, v| {
                    let m = t.constant(Tensor4::ones(md));
                    let w = t.constant(Tensor4::ones((1, 1, 1, 1)));
                    t.deform_conv2d(v[0], v[1], m, w, None, &spec)
                }),
            )
        }
        "deform_conv2d" => {
            let stride = r.random_range(1..=2);
            let spec = DeformSpec::new(ConvSpec::new(2, 3, 3).padding(1).stride(stride));
            let x = uniform((2, 2, 6, 6), r);
            let (od, md) = spec.side_dims(x.dims()).expect("valid dims");
            let inputs = vec![
                x,
                smooth_offsets(od, r),
                Tensor4::uniform(md, 0.05, 0.95, r),
                uniform(spec.base.weight_dims(), r),
                uniform((1, 3, 1, 1), r),
            ];
            (inputs, Box::new(move |t, v| t.deform_conv2d(v[0], v[1], v[2], v[3], Some(v[4]), &spec)))
        }
        "mse" | "bce" => {
            let kind = if name == "mse" { LossKind::Mse } else { LossKind::Bce };
            let inputs = vec![
                Tensor4::uniform((2, 1, 6, 7), 0.05, 0.95, r),
                Tensor4::uniform((2, 1, 6, 7), 0.0, 1.0, r),
            ];
            (inputs, Box::new(move |t, v| t.loss(kind, v[0], v[1])))
        }
        "ssim_negation" => {
            let inputs = vec![
                Tensor4::uniform((1, 1, 16, 16), 0.0, 1.0, r),
                Tensor4::uniform((1, 1, 16, 16), 0.0, 1.0, r),
            ];
            (inputs, Box::new(|t, v| t.ssim_loss(v[0], v[1])))
        }
        "sigmoid" => (vec![Tensor4::uniform((1, 2, 4, 4), -4.0, 4.0, r)], Box::new(|t, v| t.sigmoid(v[0]))),
        "concat_channels" => (
            vec![uniform((1, 2, 3, 4), r), uniform((1, 1, 3, 4), r)],
            Box::new(|t, v| t.concat_channels(&[v[0], v[1]])),
        ),
        other => unreachable!("unknown operator {other}"),
    }
}

/// Checks one operator over `seeds` random cases.
pub fn gradcheck_op(name: &str, seeds: u64) -> Result<GradRow> {
    let eps = if name == "ssim_negation" { SSIM_EPS } else { OPS_EPS };
    let mut row = GradRow {
        name: name.to_string(),
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        tolerance: OPS_TOLERANCE,
    };
    let salt = OPS
        .iter()
        .position(|&n| n == name)
        .ok_or_else(|| Error::arg(format!("unknown operator `{name}`")))? as u64;
    for seed in 0..seeds {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(salt);
        let (inputs, f) = op_case(name, &mut r);
        let report = grad_check(&inputs, eps, seed, f)?;
        row.max_rel_error = row.max_rel_error.max(report.max_rel_error);
        row.checked += report.checked;
    }
    Ok(row)
}

/// The whole operator suite, one row per operator.
pub fn gradcheck_ops(seeds: u64, mut on_row: impl FnMut(&GradRow)) -> Result<Vec<GradRow>> {
    let mut rows = Vec::with_capacity(OPS.len());
    for name in OPS {
        let row = gradcheck_op(name, seeds)?;
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Output of the double-precision model under train-mode batch statistics,
/// parameters bound as constants.
fn model_output(model: &Model<f64>, x: &Tensor4<f64>) -> Result<Tensor4<f64>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let store = model.params();
    let mut bind = |t: &mut Tape<f64>, id: ParamId| t.constant(store.value(id).clone());
    let (y, _) = model.forward_with(&mut tape, xv, Mode::Train, &mut bind)?;
    Ok(tape.value(y).clone())
}

fn model_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MODEL_FLOOR)
}

/// Central and one-sided slopes of the projected output along one scalar.
struct Probe {
    central: f64,
    left: f64,
    right: f64,
}

impl Probe {
    /// One-sided slopes of a smooth function differ by about eps times the
    /// curvature; a larger gap means a relu or max-pool switch lies within
    /// the step.
    fn straddles_kink(&self) -> bool {
        model_error(self.left, self.right) > KINK_GAP
    }
}

/// Checks one randomly drawn scalar, redrawing up to `MAX_DRAWS` times while
/// the probe straddles a kink. Returns the error and the number of skipped
/// draws; when every draw is kinked the last one is scored anyway.
fn smooth_probe(r: &mut ChaCha8Rng, len: usize, mut eval: impl FnMut(usize) -> Result<(f64, Probe)>) -> Result<(f64, usize)> {
    let mut skipped = 0;
    loop {
        let (analytic, p) = eval(r.random_range(0..len))?;
        if !p.straddles_kink() || skipped + 1 == MAX_DRAWS {
            return Ok((model_error(analytic, p.central), skipped));
        }
        skipped += 1;
    }
}

/// Stage of a parameter name, used to group model rows.
fn stage(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// End-to-end check of a freshly built model at double precision: the
/// output, contracted with seeded dyadic weights, is differentiated with
/// respect to the input and `per_param` sampled scalars of every
/// parameter. Rows group the samples by stage.
pub fn gradcheck_model(config: &ModelConfig, seed: u64, per_param: usize, mut on_row: impl FnMut(&GradRow)) -> Result<Vec<GradRow>> {
    let mut model = Model::<f64>::build(config, seed)?;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(7);
    // The offset branch starts at zero, which puts every sample on the
    // integer grid where bilinear sampling has kinks. Move it to a generic
    // point first.
    for p in model.params_mut().iter_mut() {
        let scale = if p.name.ends_with(".offset.bias") {
            0.7
        } else if p.name.ends_with(".offset.weight") {
            0.1
        } else {
            continue;
        };
        for v in p.value.data_mut() {
            *v = r.random_range(-scale..scale);
        }
    }
    let x = model.random_input(2, &mut r);
    let (h, w) = config.input_size;
    let weights = Tensor4::from_fn((2, 1, h, w), |_, _, _, _| f64::from(r.random_range(-1024i32..1024)) / 1024.0);

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let store = model.params();
    let mut bind = |t: &mut Tape<f64>, id: ParamId| t.param(store, id);
    let (y, _) = model.forward_with(&mut tape, xv, Mode::Train, &mut bind)?;
    let wv = tape.constant(weights.clone());
    let p = tape.mul(y, wv)?;
    let loss = tape.sum(p)?;
    model.params_mut().zero_grad();
    let grads = tape.backward_into(loss, model.params_mut())?;
    let x_grad = grads.get_or_zero(xv, x.len());

    let dot = |a: &Tensor4<f64>, b: &Tensor4<f64>| -> f64 { a.data().iter().zip(b.data()).zip(weights.data()).map(|((&p, &q), &c)| c * (p - q)).sum() };
    let base = model_output(&model, &x)?;
    // Builds a probe from the outputs one step either side of the base point.
    let probe = |plus: &Tensor4<f64>, minus: &Tensor4<f64>, hi: f64, x0: f64, lo: f64| Probe {
        central: dot(plus, minus) / (hi - lo),
        left: dot(&base, minus) / (x0 - lo),
        right: dot(plus, &base) / (hi - x0),
    };

    let mut rows: Vec<GradRow> = Vec::new();
    let mut record = |group: &str, outcome: (f64, usize)| {
        let row = match rows.iter_mut().position(|row| row.name == group) {
            Some(i) => &mut rows[i],
            None => {
                rows.push(GradRow {
                    name: group.to_string(),
                    max_rel_error: 0.0,
                    checked: 0,
                    skipped: 0,
                    tolerance: MODEL_TOLERANCE,
                });
                rows.last_mut().expect("just pushed")
            }
        };
        row.max_rel_error = row.max_rel_error.max(outcome.0);
        row.checked += 1;
        row.skipped += outcome.1;
    };

    let mut probe_x = x.clone();
    for _ in 0..4 * per_param {
        let outcome = smooth_probe(&mut r, x.len(), |j| {
            let x0 = x.data()[j];
            let (hi, lo) = (x0 + MODEL_EPS, x0 - MODEL_EPS);
            probe_x.data_mut()[j] = hi;
            let plus = model_output(&model, &probe_x)?;
            probe_x.data_mut()[j] = lo;
            let minus = model_output(&model, &probe_x)?;
            probe_x.data_mut()[j] = x0;
            Ok((x_grad[j], probe(&plus, &minus, hi, x0, lo)))
        })?;
        record("input", outcome);
    }

    let ids: Vec<ParamId> = model.params().ids().collect();
    for id in ids {
        let (name, len) = {
            let p = model.params().get(id);
            (p.name.clone(), p.value.len())
        };
        for _ in 0..per_param.min(len) {
            let outcome = smooth_probe(&mut r, len, |j| {
                let analytic = model.params().get(id).grad.as_ref().map_or(0.0, |g| g[j]);
                let x0 = model.params().value(id).data()[j];
                let (hi, lo) = (x0 + MODEL_EPS, x0 - MODEL_EPS);
                model.params_mut().get_mut(id).value.data_mut()[j] = hi;
                let plus = model_output(&model, &x)?;
                model.params_mut().get_mut(id).value.data_mut()[j] = lo;
                let minus = model_output(&model, &x)?;
                model.params_mut().get_mut(id).value.data_mut()[j] = x0;
                Ok((analytic, probe(&plus, &minus, hi, x0, lo)))
            })?;
            record(stage(&name), outcome);
        }
    }
    for row in &rows {
        on_row(row);
    }
    Ok(rows)
}
