use alloc::string::String;

use super::params::{ParamId, ParamStore};
use super::tape::{Graph, Var};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor so near-zero gradients are compared absolutely.
    pub floor: f64,
    /// Check at most this many evenly strided coordinates per tensor.
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-3,
            floor: 1e-6,
            max_coords_per_param: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub passed: bool,
}

/// Compares reverse-mode gradients of `loss` against central finite differences
/// for every coordinate of `ids`.
pub fn grad_check<F>(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    loss: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(s);
        let l = loss(&mut g)?;
        Ok(g.value(l).data()[0])
    };
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        passed: true,
    };
    for &id in ids {
        let n = store.value(id).len();
        let stride = match cfg.max_coords_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let a = analytic.get(id);
        for i in (0..n).step_by(stride) {
            let orig = work.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + cfg.step;
            let fp = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig - cfg.step;
            let fm = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let an = a.map_or(0.0, |g| g[i]);
            let denom = an.abs().max(numeric.abs()).max(cfg.floor);
            let rel = (an - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    report.passed = report.max_rel_error <= cfg.tolerance;
    Ok(report)
}
