//! Central finite-difference checks of analytic parameter gradients.

use super::HasParams;

/// Denominator floor for the relative error, so that entries whose true
/// gradient is exactly zero (dead ReLUs, unselected max-pool inputs) compare
/// on an absolute scale instead of dividing noise by noise.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the gradients currently stored in `model`'s parameters against
/// `(L(w + h) - L(w - h)) / 2h`, entry by entry.
///
/// Groups larger than `max_per_group` are checked on evenly spaced entries.
/// The model's parameter values are restored exactly afterwards.
pub fn check<M: HasParams>(
    model: &mut M,
    loss: impl Fn(&M) -> f64,
    step: f64,
    max_per_group: usize,
) -> Vec<GroupCheck> {
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| p.grad.iter().copied().collect())
        .collect();
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    let mut out = Vec::with_capacity(names.len());
    for (g, name) in names.into_iter().enumerate() {
        let n = analytic[g].len();
        let indices: Vec<usize> = if n <= max_per_group {
            (0..n).collect()
        } else {
            (0..max_per_group).map(|k| k * n / max_per_group).collect()
        };
        let mut report = GroupCheck {
            name,
            checked: indices.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for i in indices {
            let orig = get(model, g, i);
            set(model, g, i, orig + step);
            let plus = loss(model);
            set(model, g, i, orig - step);
            let minus = loss(model);
            set(model, g, i, orig);
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[g][i], numeric);
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst_index = i;
                report.worst_analytic = analytic[g][i];
                report.worst_numeric = numeric;
            }
        }
        out.push(report);
    }
    out
}

fn get<M: HasParams>(model: &M, group: usize, i: usize) -> f64 {
    model.params()[group].value.as_slice().expect("standard layout")[i]
}

fn set<M: HasParams>(model: &mut M, group: usize, i: usize, v: f64) {
    model.params_mut()[group]
        .value
        .as_slice_mut()
        .expect("standard layout")[i] = v;
}
