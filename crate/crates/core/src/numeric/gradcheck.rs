use super::params::{Bindings, ParamSet};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Below this magnitude on both sides the comparison is absolute.
const ABS_FALLBACK: f64 = 1e-8;

/// Compare recorded gradients of `f` against central differences.
///
/// `f` receives a fresh tape and one differentiable leaf per entry of
/// `params`, and must return a scalar. Returns the largest relative error
/// over every coordinate of every parameter.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Contract(format!("epsilon must be positive, got {epsilon}")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let base = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let again = eval(params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::OracleInvalid(format!(
            "function returned {base} then {again} for the same input"
        )));
    }

    let mut worst: f64 = 0.0;
    let mut probe = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for ci in 0..param.len() {
            let orig = param.data()[ci];
            probe[pi].data_mut()[ci] = orig + epsilon;
            let plus = eval(&probe)?;
            probe[pi].data_mut()[ci] = orig - epsilon;
            let minus = eval(&probe)?;
            probe[pi].data_mut()[ci] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let exact = analytic[pi].data()[ci];
            let scale = numeric.abs().max(exact.abs());
            let err = if scale < ABS_FALLBACK {
                (numeric - exact).abs()
            } else {
                (numeric - exact).abs() / scale
            };
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// [`finite_difference_check`] over every tensor of a [`ParamSet`], with
/// `f` receiving the parameters as named bindings.
pub fn check_param_set<F>(f: F, params: &ParamSet, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    let names: Vec<String> = params.iter().map(|(k, _)| k.clone()).collect();
    let values: Vec<Tensor> = params.iter().map(|(_, v)| v.clone()).collect();
    finite_difference_check(
        |tape, vars| {
            let mut bindings = Bindings::default();
            for (name, &v) in names.iter().zip(vars) {
                bindings.insert(name.clone(), v);
            }
            f(tape, &bindings)
        },
        &values,
        epsilon,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::cell::Cell;

    #[test]
    fn sum_of_squares() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(1, 10, |_, _| rng.random_range(-2.0..2.0));
        let err = finite_difference_check(
            |t, v| {
                let s = t.square(v[0])?;
                t.sum(s)
            },
            &[x],
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::filled(2, 2, 0.7);
        let err = finite_difference_check(
            |t, _| Ok(t.constant(Tensor::scalar(4.0))),
            &[x],
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        let calls = Cell::new(0u32);
        let res = finite_difference_check(
            |t, v| {
                calls.set(calls.get() + 1);
                let k = t.constant(Tensor::scalar(calls.get() as f64));
                let s = t.sum(v[0])?;
                t.mul(s, k)
            },
            &[Tensor::scalar(1.0)],
            DEFAULT_EPSILON,
        );
        assert!(matches!(res, Err(Error::OracleInvalid(_))));
    }
}
