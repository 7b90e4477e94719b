//! Central finite-difference checks of reverse-mode gradients.

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Distance of the evaluation point from the nearest kink.
    pub kink_margin: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Upper bound on checked coordinates per input tensor; coordinates are
    /// spread evenly across the tensor.
    pub max_coords_per_tensor: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, floor: 1e-6, max_coords_per_tensor: usize::MAX }
    }
}

/// Compares gradients of the scalar `f(inputs)` with central differences.
pub fn check_gradients<F, E>(inputs: &[Tensor], options: GradCheckOptions, f: F) -> Result<GradCheck, E>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>, E>,
    E: From<AutodiffError>,
{
    let graph = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let loss = f(&graph, &vars)?;
    let grads = graph.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
    let kink_margin = graph.kink_margin();

    let eval = |perturbed: &[Tensor]| -> Result<f64, E> {
        let g = Graph::new();
        let vs: Vec<Var<'_>> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vs)?.item())
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel_error: f64 = 0.0;
    let mut coordinates = 0;
    for (ti, input) in inputs.iter().enumerate() {
        let len = input.len();
        let stride = len.div_ceil(options.max_coords_per_tensor.max(1)).max(1);
        for ci in (0..len).step_by(stride) {
            let x = input.data()[ci];
            work[ti].data_mut()[ci] = x + options.step;
            let plus = eval(&work)?;
            work[ti].data_mut()[ci] = x - options.step;
            let minus = eval(&work)?;
            work[ti].data_mut()[ci] = x;
            let numeric = (plus - minus) / (2.0 * options.step);
            let a = analytic[ti].data()[ci];
            let denom = a.abs().max(numeric.abs()).max(options.floor);
            max_rel_error = max_rel_error.max((a - numeric).abs() / denom);
            coordinates += 1;
        }
    }
    Ok(GradCheck { max_rel_error, coordinates, kink_margin })
}
