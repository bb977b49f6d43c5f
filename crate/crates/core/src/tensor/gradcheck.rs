//! Numerical gradient verification via central differences.

use thiserror::Error;

use super::{Parameter, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("non-finite value in {place} while checking parameter {param}")]
    NonFiniteValue { place: &'static str, param: String },
}

/// Compare analytic gradients against central differences.
///
/// `loss_fn` must rebuild the loss graph from the current parameter values on
/// every call (any stochastic layers inside it must run in eval mode so the
/// two probe evaluations see the same function). Returns the largest relative
/// error `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)` over all
/// parameter elements.
pub fn grad_check<T, F>(
    params: &[Parameter<T>],
    mut loss_fn: F,
    eps: T,
) -> Result<T, GradCheckError>
where
    T: Scalar,
    F: FnMut() -> Tensor<T>,
{
    for p in params {
        p.tensor.zero_grad();
    }
    let loss = loss_fn();
    if !loss.item().is_finite() {
        return Err(GradCheckError::NonFiniteValue {
            place: "loss",
            param: "<none>".into(),
        });
    }
    loss.backward();

    let floor = T::from_f64(1e-8);
    let two = T::from_f64(2.0);
    let mut worst = T::zero();
    for p in params {
        let analytic = p
            .tensor
            .grad()
            .unwrap_or_else(|| vec![T::zero(); p.tensor.numel()]);
        let base = p.tensor.to_vec();
        for i in 0..base.len() {
            if !analytic[i].is_finite() {
                return Err(GradCheckError::NonFiniteValue {
                    place: "analytic gradient",
                    param: p.name.clone(),
                });
            }
            let mut probe = base.clone();
            probe[i] = base[i] + eps;
            p.tensor.set_values(&probe);
            let up = loss_fn().item();
            probe[i] = base[i] - eps;
            p.tensor.set_values(&probe);
            let down = loss_fn().item();
            p.tensor.set_values(&base);
            if !up.is_finite() || !down.is_finite() {
                return Err(GradCheckError::NonFiniteValue {
                    place: "probe loss",
                    param: p.name.clone(),
                });
            }
            let numeric = (up - down) / (two * eps);
            let denom = floor.max(analytic[i].abs() + numeric.abs());
            let rel = (analytic[i] - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
