use super::Matrix;
use crate::error::{Error, Result};

/// Outcome of a central-difference gradient comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, flat coordinate) where the maximum was attained.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a − n| / max(1e-8, |a| + |n|)`
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss` at `params`,
/// coordinate by coordinate.
pub fn finite_diff_check<F>(
    mut loss: F,
    params: &[Matrix],
    analytic: &[Matrix],
    epsilon: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Matrix]) -> f64,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Argument(format!(
            "finite-difference epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    if params.len() != analytic.len() {
        return Err(Error::shape(
            "finite_diff_check",
            (params.len(), 1),
            (analytic.len(), 1),
        ));
    }
    for (p, g) in params.iter().zip(analytic) {
        p.same_shape(g, "finite_diff_check")?;
    }

    let base = loss(params);
    if !base.is_finite() {
        return Err(Error::GradCheck(format!(
            "non-finite loss {base} at base point"
        )));
    }

    let mut work: Vec<Matrix> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates: 0,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = work[pi].as_slice()[k];
            work[pi].as_mut_slice()[k] = orig + epsilon;
            let up = loss(&work);
            work[pi].as_mut_slice()[k] = orig - epsilon;
            let down = loss(&work);
            work[pi].as_mut_slice()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::GradCheck(format!(
                    "non-finite loss perturbing parameter {pi} coordinate {k}"
                )));
            }
            let numeric = (up - down) / (2.0 * epsilon);
            let a = grad.as_slice()[k];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((pi, k));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
