use super::{FlError, ModelParams};

/// One model update and its (unnormalized) aggregation weight.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedUpdate {
    pub params: ModelParams,
    pub weight: f64,
}

/// Weighted average `sum_i w_i p_i / sum_i w_i`.
///
/// Per coordinate the weighted terms are sorted before summation, which makes
/// the result bit-identical under any permutation of `updates`.
pub fn fedavg(updates: &[WeightedUpdate]) -> Result<ModelParams, FlError> {
    let first = updates.first().ok_or(FlError::EmptyUpdateSet)?;
    let shape = first.params.shape;
    let len = shape.param_count();
    for u in updates {
        if u.params.shape != shape || u.params.weights.len() != len {
            return Err(FlError::ShapeMismatch { expected: len, got: u.params.weights.len() });
        }
        if !(u.weight >= 0.0 && u.weight.is_finite()) {
            return Err(FlError::InvalidWeight(u.weight));
        }
    }
    let mut ws: Vec<f64> = updates.iter().map(|u| u.weight).collect();
    ws.sort_by(f64::total_cmp);
    let total: f64 = ws.iter().sum();
    if total <= 0.0 {
        return Err(FlError::AllZeroWeights);
    }

    let mut out = vec![0.0; len];
    let mut terms = Vec::with_capacity(updates.len());
    for (j, slot) in out.iter_mut().enumerate() {
        terms.clear();
        terms.extend(updates.iter().filter(|u| u.weight > 0.0).map(|u| u.weight / total * u.params.weights[j]));
        terms.sort_by(f64::total_cmp);
        *slot = terms.iter().sum();
    }
    ModelParams::new(shape, out)
}
