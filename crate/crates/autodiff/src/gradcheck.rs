use crate::error::Result;
use crate::params::ParamSet;
use crate::tape::{Tape, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-3;
/// Denominator floor of the relative error, so gradients near zero are
/// compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares analytic gradients of `loss_fn` against central differences for
/// every entry of every parameter. Runs in 64-bit mode only.
pub fn finite_difference_check<L>(params: &mut ParamSet<f64>, loss_fn: L, tolerance: f64) -> Result<GradCheckReport>
where
    L: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = loss_fn(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut tape = Tape::new(p);
        let loss = loss_fn(&mut tape)?;
        Ok(tape.value(loss).data()[0])
    };

    let ids: Vec<_> = params.ids().collect();
    let mut report = GradCheckReport {
        params: Vec::with_capacity(ids.len()),
        tolerance,
    };
    for id in ids {
        let n = params.get(id).len();
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            entries: n,
            max_abs_error: 0.0,
            max_rel_error: 0.0,
        };
        for j in 0..n {
            let original = params.get(id).data()[j];
            params.get_mut(id).data_mut()[j] = original + FD_STEP;
            let plus = eval(params)?;
            params.get_mut(id).data_mut()[j] = original - FD_STEP;
            let minus = eval(params)?;
            params.get_mut(id).data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let exact = analytic.get(id).map_or(0.0, |g| g.data()[j]);
            let abs = (numeric - exact).abs();
            let rel = abs / numeric.abs().max(exact.abs()).max(REL_ERROR_FLOOR);
            check.max_abs_error = check.max_abs_error.max(abs);
            check.max_rel_error = check.max_rel_error.max(rel);
        }
        report.params.push(check);
    }
    Ok(report)
}
