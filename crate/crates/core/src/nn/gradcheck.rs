use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

/// Outcome of comparing analytic gradients to central differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub component: String,
    pub probes: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    pub fn line(&self) -> String {
        format!(
            "{} {} probes={} max_rel_err={:.3e} tol={:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.component,
            self.probes,
            self.max_rel_error,
            self.tolerance
        )
    }
}

/// Smallest denominator of the relative error. Gradients below this size are
/// compared on an absolute scale, which keeps the `O(step²)` truncation error
/// of central differences from dominating near-zero entries.
pub const REL_FLOOR: f64 = 1e-2;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Probes `probes` coordinates (all of them if there are fewer) of `params`
/// with central differences of half-width `step` and reports the largest
/// relative error against `analytic`.
pub fn check_gradient(
    component: &str,
    params: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    probes: usize,
    step: f64,
    tolerance: f64,
    rng: &mut impl Rng,
) -> GradReport {
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let picked: Vec<usize> = if probes >= params.len() {
        (0..params.len()).collect()
    } else {
        let mut v = sample(rng, params.len(), probes).into_vec();
        v.sort_unstable();
        v
    };
    let mut work = params.to_vec();
    let mut max_rel_error = 0.0f64;
    for &i in &picked {
        work[i] = params[i] + step;
        let up = loss(&work);
        work[i] = params[i] - step;
        let down = loss(&work);
        work[i] = params[i];
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        max_rel_error = if err.is_nan() {
            f64::INFINITY
        } else {
            max_rel_error.max(err)
        };
    }
    GradReport {
        component: component.to_string(),
        probes: picked.len(),
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_passes_and_corruption_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [0.3, -1.2, 2.0, 0.0];
        let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let loss = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>();
        let ok = check_gradient("quad", &x, &grad, loss, 10, 1e-3, 1e-4, &mut rng);
        assert!(ok.passed, "{}", ok.line());
        assert_eq!(ok.probes, 4);
        let mut bad = grad.clone();
        bad[1] *= 1.01;
        let fail = check_gradient("quad", &x, &bad, loss, 10, 1e-3, 1e-4, &mut rng);
        assert!(!fail.passed);
        assert!(fail.line().starts_with("FAIL"));
    }

    #[test]
    fn zero_loss_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![1.0; 50];
        let g = vec![0.0; 50];
        let r = check_gradient("zero", &x, &g, |_| 0.0, 20, 1e-3, 1e-4, &mut rng);
        assert!(r.passed);
        assert_eq!(r.probes, 20);
        assert_eq!(r.max_rel_error, 0.0);
    }
}
