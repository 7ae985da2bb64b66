//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParameterStore;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step, within `[1e-6, 1e-3]`.
    pub eps: f64,
    /// Largest acceptable relative error.
    pub tol: f64,
    /// Relative errors are taken against `max(|analytic|, |numeric|, abs_floor)`.
    pub abs_floor: f64,
    /// Check at most this many coordinates per parameter (sampled).
    pub coords_per_param: Option<usize>,
    /// Only parameters whose name passes this filter are checked.
    pub only: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-4,
            coords_per_param: None,
            only: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
    pub passed: bool,
}

fn eval<F>(store: &ParameterStore, f: &F) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph<'g>) -> Result<Var<'g>>,
{
    let g = Graph::new(store);
    let v = f(&g)?.item();
    if !v.is_finite() {
        return Err(NnError::NonFiniteLoss(v));
    }
    Ok(v)
}

/// Compares the gradient of the scalar built by `f` against central
/// differences. `store` is restored bit-for-bit before returning.
pub fn grad_check<F>(store: &mut ParameterStore, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<'g>) -> Result<Var<'g>>,
{
    if !(1e-6..=1e-3).contains(&cfg.eps) {
        return Err(NnError::InvalidArgument {
            op: "grad_check",
            msg: format!("eps {} outside [1e-6, 1e-3]", cfg.eps),
        });
    }
    let grads = {
        let g = Graph::new(store);
        let loss = f(&g)?;
        g.backward(loss)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let names: Vec<String> = store
        .names()
        .filter(|n| cfg.only.as_ref().is_none_or(|o| o.iter().any(|p| n.contains(p.as_str()))))
        .map(str::to_string)
        .collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
        passed: true,
    };
    for name in names {
        let Some(analytic) = grads.get(&name).cloned() else {
            continue;
        };
        let n = analytic.numel();
        let coords: Vec<usize> = match cfg.coords_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = store.value(&name)?.data()[i];
            store.value_mut(&name)?.data_mut()[i] = orig + cfg.eps;
            let plus = eval(store, &f);
            store.value_mut(&name)?.data_mut()[i] = orig - cfg.eps;
            let minus = eval(store, &f);
            store.value_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * cfg.eps);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    report.passed = report.max_rel_error <= cfg.tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn rejects_out_of_range_eps() {
        let mut store = ParameterStore::new();
        let cfg = GradCheckConfig {
            eps: 1e-2,
            ..Default::default()
        };
        assert!(grad_check(&mut store, |g| Ok(g.constant(Tensor::scalar(0.0))), &cfg).is_err());
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut store = ParameterStore::new();
        store.register("w", Tensor::scalar(1.0)).unwrap();
        let res = grad_check(
            &mut store,
            |g| Ok(g.param("w")?.scale(f64::INFINITY).sum()),
            &GradCheckConfig::default(),
        );
        assert!(matches!(res, Err(NnError::NonFiniteLoss(_))));
    }
}
