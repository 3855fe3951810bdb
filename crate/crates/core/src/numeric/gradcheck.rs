//! Central finite-difference verification of analytic gradients.

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Below this magnitude the comparison falls back to absolute error.
    pub abs_floor: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            abs_floor: 1e-8,
            max_entries_per_param: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err() < tolerance
    }
}

/// Relative error with an absolute fallback when both magnitudes are tiny.
pub fn relative_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < abs_floor {
        diff
    } else {
        diff / scale
    }
}

fn evaluate<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let loss = f(&mut g)?;
    Ok(g.value(loss).item())
}

fn entries(len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < len => (0..k).map(|i| i * len / k).collect(),
        _ => (0..len).collect(),
    }
}

/// Compares analytic gradients of the scalar `f` against central finite
/// differences for every parameter in `params` (or all parameters when empty).
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    f: F,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let ids: Vec<ParamId> = if params.is_empty() {
        store.ids().collect()
    } else {
        params.to_vec()
    };
    let mut report = Vec::with_capacity(ids.len());
    for id in ids {
        let zeros = vec![0.0; store.get(id).len()];
        let grad = analytic.param(id).unwrap_or(&zeros).to_vec();
        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            checked: 0,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for j in entries(grad.len(), config.max_entries_per_param) {
            let original = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = original + config.step;
            let plus = evaluate(store, &f);
            store.get_mut(id).data_mut()[j] = original - config.step;
            let minus = evaluate(store, &f);
            store.get_mut(id).data_mut()[j] = original;
            let numeric = (plus? - minus?) / (2.0 * config.step);
            let err = relative_error(grad[j], numeric, config.abs_floor);
            check.checked += 1;
            if err > check.max_rel_err || check.checked == 1 {
                check.max_rel_err = err;
                check.worst_index = j;
                check.analytic = grad[j];
                check.numeric = numeric;
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport { params: report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    #[test]
    fn linear_layer_passes() {
        let mut s = ParamStore::new();
        let w = s
            .add(
                "w",
                Tensor::matrix(3, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap(),
            )
            .unwrap();
        let b = s
            .add("b", Tensor::vector(vec![0.05, -0.05]).unwrap())
            .unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, -1.0, 0.5, -0.3, 0.8]).unwrap();
        let report = grad_check(
            &mut s,
            &[],
            |g| {
                let xi = g.input(x.clone())?;
                let (wv, bv) = (g.param(w), g.param(b));
                let y = g.matmul(xi, wv)?;
                let y = g.add_bias(y, bv)?;
                g.sum(y)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_err() < 1e-6, "{report:?}");
    }

    #[test]
    fn independent_param_uses_absolute_fallback() {
        let mut s = ParamStore::new();
        let used = s.add("used", Tensor::vector(vec![2.0]).unwrap()).unwrap();
        s.add("idle", Tensor::vector(vec![1.0, 2.0]).unwrap())
            .unwrap();
        let report = grad_check(
            &mut s,
            &[],
            |g| {
                let u = g.param(used);
                let sq = g.mul(u, u)?;
                g.sum(sq)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        let idle = report.params.iter().find(|p| p.name == "idle").unwrap();
        assert_eq!(idle.max_rel_err, 0.0);
        assert_eq!(idle.analytic, 0.0);
        assert!(report.passes(1e-6));
    }
}
