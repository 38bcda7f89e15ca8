//! Central finite-difference verification of tape gradients.

use super::params::{Group, ParamGrads, ParamKey};
use super::{Real, Tape, Tensor, Var};
use crate::error::Result;

/// Anything whose scalar loss can be evaluated with and without gradients
/// while its parameter tables are perturbed in place.
pub trait GradCheckTarget<T: Real> {
    fn tables(&self) -> Vec<(ParamKey, String)>;
    fn table_mut(&mut self, key: ParamKey) -> &mut Tensor<T>;
    fn loss(&self) -> Result<T>;
    fn loss_and_grads(&self) -> Result<(T, ParamGrads<T>)>;
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates where the one-sided slopes disagree (a kink such as ReLU at 0).
    pub nondifferentiable: Vec<usize>,
    /// Coordinates whose perturbed loss was not finite.
    pub non_finite: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares analytic gradients with `(f(x+eps) - f(x-eps)) / 2eps` for every
/// coordinate of every table. Relative error uses `max(|a|, |n|, 1e-8)` as
/// denominator.
pub fn finite_diff_check<T: Real, G: GradCheckTarget<T>>(
    target: &mut G,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (f0, grads) = target.loss_and_grads()?;
    let f0 = f0.as_f64();
    let eps = T::lit(epsilon);
    let mut report = GradCheckReport {
        params: Vec::new(),
        max_rel_error: 0.0,
        epsilon,
        tolerance,
        pass: true,
    };
    for (key, name) in target.tables() {
        let n = target.table_mut(key).len();
        let analytic = grads
            .get(key)
            .map(|g| g.to_f64_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        let mut check = ParamCheck {
            name,
            max_rel_error: 0.0,
            worst_index: 0,
            checked: 0,
            nondifferentiable: Vec::new(),
            non_finite: Vec::new(),
        };
        for i in 0..n {
            let orig = target.table_mut(key).data()[i];
            target.table_mut(key).data_mut()[i] = orig + eps;
            let plus = target.loss()?.as_f64();
            target.table_mut(key).data_mut()[i] = orig - eps;
            let minus = target.loss()?.as_f64();
            target.table_mut(key).data_mut()[i] = orig;

            if !plus.is_finite() || !minus.is_finite() {
                check.non_finite.push(i);
                continue;
            }
            let right = (plus - f0) / epsilon;
            let left = (f0 - minus) / epsilon;
            if (right - left).abs() > 1e-3 * right.abs().max(left.abs()).max(1.0) {
                check.nondifferentiable.push(i);
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            check.checked += 1;
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = i;
            }
        }
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        if !check.non_finite.is_empty() {
            report.pass = false;
        }
        report.params.push(check);
    }
    if report.max_rel_error > tolerance {
        report.pass = false;
    }
    Ok(report)
}

type LossFn<T> = dyn for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>;

/// Wraps a closure over plain tensors as a [`GradCheckTarget`].
pub struct FnTarget<T: Real> {
    params: Vec<Tensor<T>>,
    f: Box<LossFn<T>>,
}

impl<T: Real> FnTarget<T> {
    pub fn new(
        params: Vec<Tensor<T>>,
        f: impl for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>> + 'static,
    ) -> Self {
        FnTarget {
            params,
            f: Box::new(f),
        }
    }

    fn key(index: usize) -> ParamKey {
        ParamKey {
            group: Group::Free,
            index,
        }
    }

    fn run(&self, grads: bool) -> Result<(T, ParamGrads<T>)> {
        let tape = Tape::new();
        let leaves: Vec<Var<'_, T>> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(Self::key(i), p.clone()))
            .collect();
        let loss = (self.f)(&tape, &leaves)?;
        let value = loss.item();
        if !grads {
            return Ok((value, ParamGrads::new()));
        }
        Ok((value, tape.backward(loss)?.into_params()))
    }
}

impl<T: Real> GradCheckTarget<T> for FnTarget<T> {
    fn tables(&self) -> Vec<(ParamKey, String)> {
        (0..self.params.len())
            .map(|i| (Self::key(i), format!("p{i}")))
            .collect()
    }

    fn table_mut(&mut self, key: ParamKey) -> &mut Tensor<T> {
        &mut self.params[key.index]
    }

    fn loss(&self) -> Result<T> {
        Ok(self.run(false)?.0)
    }

    fn loss_and_grads(&self) -> Result<(T, ParamGrads<T>)> {
        self.run(true)
    }
}
