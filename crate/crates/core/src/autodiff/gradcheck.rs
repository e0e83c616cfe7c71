//! Central-difference gradient checking at double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, element index) of the worst scalar.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Projects `out` onto fixed random weights so any output shape becomes a scalar.
/// Forward computation under test: inputs bound as tape variables in, output out.
type Forward<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

fn project(tape: &mut Tape<f64>, out: Var, weights: &Tensor4<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn projection_weights(tape: &mut Tape<f64>, inputs: &[Tensor4<f64>], seed: u64, forward: &Forward<'_>) -> Result<Tensor4<f64>> {
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = forward(tape, &vars)?;
    let dims = tape.dims(out);
    tape.clear();
    // Dyadic weights keep the projection free of rounding for dyadic outputs.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Tensor4::from_fn(dims, |_, _, _, _| {
        f64::from(rng.random_range(-1024i32..1024)) / 1024.0
    }))
}

fn evaluate(inputs: &[Tensor4<f64>], forward: &Forward<'_>) -> Result<Tensor4<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = forward(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

/// Compares reverse-mode gradients against central differences for every
/// scalar of every input.
///
/// The output of `forward` is contracted with seeded random dyadic weights in
/// `[-1, 1)`, so the check covers the full Jacobian-vector product for that
/// direction. Returns the maximum of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(inputs: &[Tensor4<f64>], eps: f64, seed: u64, forward: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::arg(format!("grad_check step must be positive, got {eps}")));
    }
    if inputs.iter().any(|t| !t.all_finite()) {
        return Err(Error::arg("grad_check inputs must be finite"));
    }
    let forward: &Forward<'_> = &forward;

    let mut tape = Tape::new();
    let weights = projection_weights(&mut tape, inputs, seed, forward)?;

    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = forward(&mut tape, &vars)?;
    let loss = project(&mut tape, out, &weights)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zero(v, t.len()))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe: Vec<Tensor4<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let x0 = input.data()[j];
            let (hi, lo) = (x0 + eps, x0 - eps);
            probe[i].data_mut()[j] = hi;
            let plus = evaluate(&probe, forward)?;
            probe[i].data_mut()[j] = lo;
            let minus = evaluate(&probe, forward)?;
            probe[i].data_mut()[j] = x0;

            // Differencing before projecting means outputs untouched by the
            // probe cancel exactly; the divisor is the step actually taken.
            let numeric = plus
                .data()
                .iter()
                .zip(minus.data())
                .zip(weights.data())
                .map(|((&p, &m), &r)| r * (p - m))
                .sum::<f64>()
                / (hi - lo);
            let a = analytic[i][j];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst = (i, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::InputGrads;

    fn rand_tensor(dims: (usize, usize, usize, usize), seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::uniform(dims, -1.0, 1.0, &mut rng)
    }

    fn dyadic_tensor(dims: (usize, usize, usize, usize), seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(dims, |_, _, _, _| f64::from(rng.random_range(-64i32..64)) / 64.0)
    }

    #[test]
    fn linear_map_is_exact() {
        let w = dyadic_tensor((1, 2, 3, 3), 1);
        let x = dyadic_tensor((1, 2, 3, 3), 2);
        let r = grad_check(&[w, x], 1e-5, 3, |t, v| t.mul(v[0], v[1])).unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn sigmoid_chain() {
        let x = rand_tensor((1, 1, 4, 4), 4);
        let r = grad_check(&[x], 1e-5, 5, |t, v| {
            let a = t.sigmoid(v[0])?;
            let b = t.scale(a, 3.0)?;
            t.sigmoid(b)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn negated_backward_is_flagged() {
        let x = rand_tensor((1, 1, 2, 2), 6);
        let r = grad_check(&[x], 1e-5, 7, |t, v| {
            let value = t.value(v[0]).map(|a| 3.0 * a);
            t.record("broken_scale", &[v[0]], value, |ctx| -> InputGrads<f64> {
                vec![Some(ctx.grad.iter().map(|&g| -3.0 * g).collect())]
            })
        })
        .unwrap();
        assert!((r.max_rel_error - 2.0).abs() < 1e-6, "{r:?}");
        assert!(!r.passes(1e-4));
    }

    #[test]
    fn rejects_bad_step() {
        let x = rand_tensor((1, 1, 1, 1), 0);
        assert!(grad_check(&[x], 0.0, 0, |t, v| t.relu(v[0])).is_err());
    }

    #[test]
    fn reports_offending_op() {
        let x = Tensor4::full((1, 1, 1, 1), 1e308);
        let err = grad_check(&[x], 1e-5, 0, |t, v| t.scale(v[0], 10.0)).unwrap_err();
        assert!(matches!(err, Error::Numeric { ref op } if op == "scale"));
    }

    #[test]
    fn deterministic_given_seed() {
        let x = rand_tensor((1, 1, 3, 3), 9);
        let f = |t: &mut Tape<f64>, v: &[Var]| t.sigmoid(v[0]);
        let a = grad_check(std::slice::from_ref(&x), 1e-5, 11, f).unwrap();
        let b = grad_check(&[x], 1e-5, 11, f).unwrap();
        assert_eq!(a, b);
    }
}
