//! Central-difference gradient oracle.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Max over coordinates of `|analytic - numeric| / max(1, |numeric|)`.
///
/// `f` builds a scalar on a fresh tape from the leaf it is handed. A
/// non-finite value anywhere is reported as `f64::INFINITY`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> f64
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let out = match f(&mut tape, v) {
            Ok(o) => o,
            Err(_) => return f64::INFINITY,
        };
        match tape.backward(out) {
            Ok(g) => g.get(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())),
            Err(_) => return f64::INFINITY,
        }
    };
    let eval = |t: &Tensor<T>| -> f64 {
        let mut tape = Tape::new();
        let v = tape.constant(t.clone());
        match f(&mut tape, v) {
            Ok(o) => tape.value(o).item().as_f64(),
            Err(_) => f64::NAN,
        }
    };
    max_rel_error(x, &analytic, eps, eval)
}

/// Same metric, but `f` consumes a whole [`ParamStore`]; every coordinate of
/// every tensor is perturbed. `f` must return `(loss, name → var)`.
pub fn grad_check_params<T, F>(f: F, params: &ParamStore<T>, eps: f64) -> Result<GradReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &ParamStore<T>, bool) -> Result<(Var, crate::params::Bound)>,
{
    let mut tape = Tape::new();
    let (loss, bound) = f(&mut tape, params, true)?;
    let grads = tape.backward(loss)?;
    let mut report = GradReport::default();
    for (name, tensor) in params.iter() {
        if name.starts_with(crate::params::BUFFER_PREFIX) {
            continue;
        }
        let Some(var) = bound.get(name) else { continue };
        let analytic = grads
            .get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tensor.shape()));
        let err = max_rel_error(tensor, &analytic, eps, |t| {
            let mut p = params.clone();
            p.replace(name, t.clone());
            let mut tape = Tape::new();
            match f(&mut tape, &p, false) {
                Ok((o, _)) => tape.value(o).item().as_f64(),
                Err(_) => f64::NAN,
            }
        });
        report.per_tensor.push((name.to_string(), err));
        if !(err <= report.max_error) {
            report.max_error = if err.is_nan() { f64::INFINITY } else { err };
            report.worst = name.to_string();
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_error: f64,
    pub worst: String,
    pub per_tensor: Vec<(String, f64)>,
}

fn max_rel_error<T: Scalar>(
    x: &Tensor<T>,
    analytic: &Tensor<T>,
    eps: f64,
    eval: impl Fn(&Tensor<T>) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        let plus = orig + T::from_f64(eps);
        let minus = orig - T::from_f64(eps);
        probe.data_mut()[i] = plus;
        let fp = eval(&probe);
        probe.data_mut()[i] = minus;
        let fm = eval(&probe);
        probe.data_mut()[i] = orig;
        // the realised step, not 2*eps, to absorb rounding of the perturbation
        let h = plus.as_f64() - minus.as_f64();
        let numeric = (fp - fm) / h;
        let a = analytic.data()[i].as_f64();
        let err = (a - numeric).abs() / numeric.abs().max(1.0);
        if !err.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max(err);
    }
    worst
}
