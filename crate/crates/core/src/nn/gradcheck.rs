//! Central finite-difference verification of tape gradients.

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::{ParamId, ParamStore};
use super::NnError;

pub const FD_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub coords: usize,
    /// (parameter, flat index, analytic, numeric) at the largest relative error.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Gradients below this magnitude are compared absolutely. Central differences at `FD_EPS` on
/// O(10) losses carry roundoff near 1e-10 even where the derivative is exactly zero (attention
/// key biases, for one), so a smaller floor would report that noise as relative error.
pub const REL_FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares tape gradients of `loss` with central differences on `max_coords` randomly chosen
/// parameter scalars (all scalars when `None`).
pub fn gradcheck<F>(store: &mut ParamStore, max_coords: Option<usize>, rng: &mut impl Rng, loss: F) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Graph) -> Result<Var, NnError>,
{
    let grads = {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let mut coords: Vec<(ParamId, usize)> = store.ids().flat_map(|id| (0..store.get(id).len()).map(move |i| (id, i))).collect();
    if let Some(n) = max_coords {
        if n < coords.len() {
            let mut picked = Vec::with_capacity(n);
            for _ in 0..n {
                picked.push(coords.swap_remove(rng.random_range(0..coords.len())));
            }
            coords = picked;
        }
    }
    let eval = |store: &ParamStore| -> Result<f64, NnError> {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        Ok(g.value(l).item())
    };
    let mut report = GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, coords: coords.len(), worst: None };
    for (id, i) in coords {
        let orig = store.get(id).data[i];
        store.value_mut(id).data[i] = orig + FD_EPS;
        let up = eval(store)?;
        store.value_mut(id).data[i] = orig - FD_EPS;
        let down = eval(store)?;
        store.value_mut(id).data[i] = orig;
        let numeric = (up - down) / (2.0 * FD_EPS);
        let analytic = grads.get(id).map_or(0.0, |t| t.data[i]);
        let e = rel_err(analytic, numeric);
        if e > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = e;
            report.worst = Some((store.name(id).to_string(), i, analytic, numeric));
        }
        report.max_abs_err = report.max_abs_err.max((analytic - numeric).abs());
    }
    Ok(report)
}
