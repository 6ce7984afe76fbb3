//! Central finite-difference verification of analytic gradients (64-bit).

use super::{Bound, ParamId, ParamSet, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Step is `rel_step * (1 + |theta|)`.
    pub rel_step: f64,
    /// Pass threshold on the maximum relative error of a parameter.
    pub tolerance: f64,
    /// Denominator floor: gradients below this magnitude are compared absolutely.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            rel_step: 1e-4,
            tolerance: 1e-4,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_err: f64,
    /// Flat index of the worst element with its analytic and numeric values.
    pub worst: (usize, f64, f64),
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare analytic gradients of the scalar `loss` against central differences
/// for every scalar of every parameter. `params` is restored on return.
pub fn grad_check<F>(
    params: &mut ParamSet<f64>,
    loss: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&Bound<f64>) -> Result<Var<f64>>,
{
    let bound = params.bind(true);
    loss(&bound)?.backward()?;
    let analytic = bound.grads();
    drop(bound);

    let eval = |ps: &ParamSet<f64>| -> Result<f64> { Ok(loss(&ps.bind(false))?.value().data()[0]) };

    let mut out = Vec::with_capacity(params.len());
    for (pi, grads) in analytic.iter().enumerate() {
        let id = ParamId::from_index(pi);
        let mut worst = (0, 0.0, 0.0);
        let mut max_err = 0.0f64;
        let numel = grads.len();
        #[allow(clippy::needless_range_loop)]
        for i in 0..numel {
            let theta = params.get(id).value.data()[i];
            let h = cfg.rel_step * (1.0 + theta.abs());
            let slot = |ps: &mut ParamSet<f64>, v: f64| ps.get_mut(id).value.data_mut()[i] = v;
            slot(params, theta + h);
            let plus = eval(params);
            slot(params, theta - h);
            let minus = eval(params);
            slot(params, theta);
            let numeric = (plus? - minus?) / (2.0 * h);
            let err = relative_error(grads[i], numeric, cfg.abs_floor);
            if err > max_err || i == 0 {
                max_err = max_err.max(err);
                worst = (i, grads[i], numeric);
            }
        }
        let name = params.get(id).name.clone();
        out.push(ParamCheck {
            name,
            numel,
            max_rel_err: max_err,
            worst,
            passed: max_err < cfg.tolerance,
        });
    }
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        params: out,
    })
}
