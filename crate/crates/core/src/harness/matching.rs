use pathfinding::prelude::{kuhn_munkres_min, Matrix};

use crate::error::{Error, Result};

// Costs are quantized to integers for the assignment solver.
const COST_SCALE: f64 = 1e12;

/// Minimum-cost pairing of estimated with true angles on `|θ̂ − θ|`.
/// Entry `i` of the result is the estimate index assigned to truth `i`.
pub fn match_angles(estimates: &[f64], truth: &[f64]) -> Result<Vec<usize>> {
    if estimates.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} estimates for {} true angles",
            estimates.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Ok(Vec::new());
    }
    if estimates.iter().any(|t| !t.is_finite()) {
        return Err(Error::Dimension("non-finite angle estimate".into()));
    }
    let costs = Matrix::from_fn(truth.len(), estimates.len(), |(i, j)| {
        ((estimates[j] - truth[i]).abs() * COST_SCALE).round() as i64
    });
    Ok(kuhn_munkres_min(&costs).1)
}

/// `Σ_l (θ̂_{π(l)} − θ_l)²` in degrees² after matching.
pub fn matched_sq_error_deg(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    let pi = match_angles(estimates, truth)?;
    Ok(truth
        .iter()
        .zip(&pi)
        .map(|(t, &j)| (estimates[j] - t).to_degrees().powi(2))
        .sum())
}
