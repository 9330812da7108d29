use super::graph::{Graph, Var};
use super::params::ParameterStore;
use crate::error::{Error, Result};

/// Result of comparing analytic gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(1, |analytic|) over checked coordinates
    pub max_rel_error: f64,
    /// parameter name and flat index where the maximum occurred
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
    /// largest analytic gradient magnitude seen; useful to rule out all-zero checks
    pub max_abs_grad: f64,
}

/// Checks the gradient of the scalar built by `f` against central differences.
///
/// At most `max_coords_per_param` coordinates are probed per parameter,
/// spread evenly over its flat index range.
pub fn gradient_check<F>(
    store: &mut ParameterStore,
    eps: f64,
    max_coords_per_param: usize,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParameterStore) -> Result<Var>,
{
    // Both routes call the same builder; split the borrow through a RefCell.
    let cell = std::cell::RefCell::new(&mut f);
    gradient_check_against(
        store,
        eps,
        max_coords_per_param,
        |g, s| (cell.borrow_mut())(g, s),
        |g, s| (cell.borrow_mut())(g, s),
    )
}

/// Like [`gradient_check`], but the analytic gradient comes from `analytic`
/// while finite differences are taken of `numeric`. Used to check custom
/// backward rules (straight-through) against a differentiable surrogate.
pub fn gradient_check_against<A, N>(
    store: &mut ParameterStore,
    eps: f64,
    max_coords_per_param: usize,
    mut analytic: A,
    mut numeric: N,
) -> Result<GradCheckReport>
where
    A: FnMut(&mut Graph, &ParameterStore) -> Result<Var>,
    N: FnMut(&mut Graph, &ParameterStore) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::invalid(format!("eps {eps} not in (0, 1e-3]")));
    }
    let mut g = Graph::new();
    let loss = analytic(&mut g, store)?;
    let grads = g.backward(loss)?;
    if !g.value(loss).all_finite() || !grads.all_finite() {
        return Err(Error::NonFinite("analytic gradient".into()));
    }

    let mut eval = |store: &ParameterStore| -> Result<f64> {
        let mut g = Graph::new();
        let v = numeric(&mut g, store)?;
        let x = g.item(v)?;
        if !x.is_finite() {
            return Err(Error::NonFinite("objective during finite differences".into()));
        }
        Ok(x)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
        max_abs_grad: 0.0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).numel();
        let count = n.min(max_coords_per_param.max(1));
        for c in 0..count {
            let idx = c * n / count;
            let a = grads.get(id).map_or(0.0, |g| g[idx]);
            let orig = store.value(id).data()[idx];
            store.value_mut(id).data_mut()[idx] = orig + eps;
            let plus = eval(store);
            store.value_mut(id).data_mut()[idx] = orig - eps;
            let minus = eval(store);
            store.value_mut(id).data_mut()[idx] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let err = (a - numeric).abs() / a.abs().max(1.0);
            report.coords_checked += 1;
            report.max_abs_grad = report.max_abs_grad.max(a.abs());
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.param(id).name.clone(), idx));
            }
        }
    }
    Ok(report)
}
