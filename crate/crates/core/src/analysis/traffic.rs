use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkSpec, ScheduleSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficSolution {
    /// Total arrival rate per class.
    pub lambda: Vec<f64>,
    /// Work arrival rate per class, `lambda_k / p_k`.
    pub rho_class: Vec<f64>,
    /// Per-queue sum of `rho_class`.
    pub rho_queue: Vec<f64>,
    /// `max_r <c_r, rho>` for constraint-form schedule sets.
    pub r_rho: Option<f64>,
    /// `max_k |lambda_k - a_k - (lambda P)_k|`.
    pub residual: f64,
}

/// Solves `lambda = a + lambda P` with a dense LU factorization.
pub fn traffic_solve(spec: &NetworkSpec) -> Result<TrafficSolution> {
    let nk = spec.num_classes();
    if spec.routing.len() != nk || spec.routing.iter().any(|r| r.len() != nk) {
        return Err(Error::DimensionMismatch {
            expected: nk,
            found: spec.routing.len(),
        });
    }
    let a = spec.arrival_rates();
    // (I - P)^T lambda^T = a^T
    let m = DMatrix::from_fn(nk, nk, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - spec.routing[j][i]
    });
    let rhs = DVector::from_column_slice(&a);
    let lambda = m.lu().solve(&rhs).ok_or(Error::NotOpen)?;
    if lambda.iter().any(|x| !x.is_finite() || *x < -1e-12) {
        return Err(Error::NotOpen);
    }
    let lambda: Vec<f64> = lambda.iter().map(|x| x.max(0.0)).collect();

    let residual = (0..nk)
        .map(|k| {
            let inflow: f64 = (0..nk).map(|i| lambda[i] * spec.routing[i][k]).sum();
            (lambda[k] - a[k] - inflow).abs()
        })
        .fold(0.0, f64::max);
    let rho_class: Vec<f64> = lambda
        .iter()
        .zip(&spec.classes)
        .map(|(l, c)| l / c.service_prob)
        .collect();
    let rho_queue = spec.sum_by_queue(&rho_class);
    let r_rho = match &spec.schedule_set {
        ScheduleSet::Constraints { rows, .. } => Some(
            rows.iter()
                .map(|r| r.load_f64(&rho_queue))
                .fold(0.0, f64::max),
        ),
        ScheduleSet::Explicit { .. } => None,
    };
    Ok(TrafficSolution {
        lambda,
        rho_class,
        rho_queue,
        r_rho,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::{build_instability_network, build_multiclass_rs, build_tandem};

    #[test]
    fn tandem_chain() {
        let spec = build_tandem(3, 0.4, None).unwrap();
        let t = traffic_solve(&spec).unwrap();
        for j in 0..3 {
            assert!((t.lambda[j] - 0.4).abs() < 1e-12);
            assert!((t.rho_queue[j] - 0.4).abs() < 1e-12);
        }
        assert!(t.residual <= 1e-10);
    }

    #[test]
    fn instability_network_rates() {
        let a = 7.0 / 12.0;
        let (spec, _) = build_instability_network(a, 6.0, 30).unwrap();
        let t = traffic_solve(&spec).unwrap();
        assert!((t.rho_queue[0] - a).abs() < 1e-12);
        assert!((t.rho_queue[31] - a).abs() < 1e-12);
        for j in (1..31).chain(32..62) {
            assert!((t.rho_queue[j] - a / 30.0).abs() < 1e-12);
        }
        assert!((t.r_rho.unwrap() - 49.0 / 72.0).abs() < 1e-12);
    }

    #[test]
    fn multiclass_unit_intensities() {
        let (spec, _) = build_multiclass_rs(1.0, 0.1791, 20).unwrap();
        let t = traffic_solve(&spec).unwrap();
        assert!(t.rho_class.iter().all(|r| (r - 1.0).abs() < 1e-12));
    }
}
