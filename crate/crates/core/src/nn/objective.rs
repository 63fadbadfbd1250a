use super::{EvalSet, ModelParams};
use crate::error::Result;

/// A twice-differentiable scalar function of model parameters.
///
/// Barrier and curvature analyses are written against this trait so they can
/// run on an empirical loss or on a closed-form surrogate.
pub trait Objective {
    fn value(&self, model: &ModelParams) -> Result<f64>;

    fn value_and_grad(&self, model: &ModelParams) -> Result<(f64, ModelParams)>;

    /// Hessian at `model` applied to `v`.
    fn hvp(&self, model: &ModelParams, v: &ModelParams) -> Result<ModelParams>;

    /// Classification accuracy, when the objective has one.
    fn accuracy(&self, _model: &ModelParams) -> Result<Option<f64>> {
        Ok(None)
    }

    fn value_and_accuracy(&self, model: &ModelParams) -> Result<(f64, Option<f64>)> {
        Ok((self.value(model)?, self.accuracy(model)?))
    }
}

impl Objective for EvalSet {
    fn value(&self, model: &ModelParams) -> Result<f64> {
        super::loss(model, self)
    }

    fn value_and_grad(&self, model: &ModelParams) -> Result<(f64, ModelParams)> {
        super::loss_and_grad(model, self)
    }

    fn hvp(&self, model: &ModelParams, v: &ModelParams) -> Result<ModelParams> {
        super::hvp(model, self, v)
    }

    fn accuracy(&self, model: &ModelParams) -> Result<Option<f64>> {
        super::accuracy(model, self).map(Some)
    }

    fn value_and_accuracy(&self, model: &ModelParams) -> Result<(f64, Option<f64>)> {
        let (l, a) = super::loss_and_accuracy(model, self)?;
        Ok((l, Some(a)))
    }
}

/// `½ Σ_i h_i (θ_i − c_i)² + offset` with a diagonal curvature `h`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub center: ModelParams,
    pub curvature: ModelParams,
    pub offset: f64,
}

impl QuadraticObjective {
    /// `½‖θ − center‖²`.
    pub fn isotropic(center: ModelParams) -> Self {
        let curvature = center.map(|_| 1.0);
        QuadraticObjective {
            center,
            curvature,
            offset: 0.0,
        }
    }
}

impl Objective for QuadraticObjective {
    fn value(&self, model: &ModelParams) -> Result<f64> {
        model.check_same_shape(&self.center, "quadratic objective")?;
        let d = model.sub(&self.center);
        Ok(0.5 * d.zip_map(&self.curvature, |x, h| h * x).dot(&d) + self.offset)
    }

    fn value_and_grad(&self, model: &ModelParams) -> Result<(f64, ModelParams)> {
        let value = self.value(model)?;
        let grad = model.sub(&self.center).zip_map(&self.curvature, |x, h| h * x);
        Ok((value, grad))
    }

    fn hvp(&self, model: &ModelParams, v: &ModelParams) -> Result<ModelParams> {
        model.check_same_shape(v, "hvp direction")?;
        Ok(v.zip_map(&self.curvature, |x, h| h * x))
    }
}
