//! Step size along a fitted weak learner.

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{CoreError, Result};
use crate::risk::{weighted_risk, RiskKind};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    pub alpha_max: f64,
    pub tol: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self { alpha_max: 4.0, tol: 1e-4 }
    }
}

/// Golden-section minimization of a unimodal `f` on `[a, b]`. Stops once the
/// bracket is no wider than `tol` and returns its midpoint.
pub fn golden_section(mut f: impl FnMut(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// `argmin_{alpha in [0, alpha_max]} R[f + alpha g]`.
///
/// The golden-section estimate competes with both endpoints, so a flat
/// objective yields 0 and a monotone decreasing one yields `alpha_max`.
/// `c` reweights samples as in [`weighted_risk`].
pub fn line_search_alpha(
    f: &Matrix,
    g: &Matrix,
    labels: &[usize],
    kind: RiskKind,
    c: Option<&[f64]>,
    cfg: &LineSearch,
) -> Result<f64> {
    if !(cfg.alpha_max > 0.0) || !(cfg.tol > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "line search needs alpha_max > 0 and tol > 0, got {} and {}",
            cfg.alpha_max, cfg.tol
        )));
    }
    if (f.rows(), f.cols()) != (g.rows(), g.cols()) {
        return Err(CoreError::ExtentMismatch(format!(
            "scores {}x{} vs learner outputs {}x{}",
            f.rows(),
            f.cols(),
            g.rows(),
            g.cols()
        )));
    }
    if g.data().iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let mut probe = f.clone();
    let mut risk = |alpha: f64| -> Result<f64> {
        for ((p, fv), gv) in probe.data_mut().iter_mut().zip(f.data()).zip(g.data()) {
            *p = fv + alpha * gv;
        }
        match weighted_risk(&probe, labels, kind, c) {
            Ok(r) if r.is_finite() => Ok(r),
            Ok(_) | Err(CoreError::NonFiniteScore { .. }) => Err(CoreError::NonFiniteRisk { alpha }),
            Err(e) => Err(e),
        }
    };
    let inner = golden_section(&mut risk, 0.0, cfg.alpha_max, cfg.tol)?;
    let mut best = (0.0, risk(0.0)?);
    for alpha in [inner, cfg.alpha_max] {
        let r = risk(alpha)?;
        if r < best.1 {
            best = (alpha, r);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn search(f: &Matrix, g: &Matrix, labels: &[usize]) -> f64 {
        line_search_alpha(f, g, labels, RiskKind::Exponential, None, &LineSearch::default()).unwrap()
    }

    #[test]
    fn golden_section_finds_parabola_vertex() {
        let x = golden_section(|x| Ok((x - 1.3) * (x - 1.3)), 0.0, 4.0, 1e-8).unwrap();
        assert!((x - 1.3).abs() < 1e-8);
    }

    #[test]
    fn zero_direction_returns_zero() {
        let f = mat(&[vec![0.5, -0.5]]);
        assert_eq!(search(&f, &Matrix::zeros(1, 2), &[0]), 0.0);
    }

    #[test]
    fn symmetric_pair_returns_zero() {
        let g = mat(&[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let a = search(&Matrix::zeros(2, 2), &g, &[0, 0]);
        assert!(a.abs() <= 1e-4, "{a}");
    }

    #[test]
    fn closed_form_half_log_two() {
        let g = mat(&[vec![1.0, -1.0], vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let a = search(&Matrix::zeros(3, 2), &g, &[0, 0, 0]);
        assert!((a - 0.5 * 2f64.ln()).abs() <= 1e-4, "{a}");
    }

    #[test]
    fn monotone_descent_clamps_to_alpha_max() {
        let g = mat(&[vec![1.0, -1.0]]);
        assert_eq!(search(&Matrix::zeros(1, 2), &g, &[0]), 4.0);
    }

    #[test]
    fn rejects_bad_interval() {
        let cfg = LineSearch { alpha_max: 0.0, tol: 1e-4 };
        let g = mat(&[vec![1.0, -1.0]]);
        assert!(line_search_alpha(&Matrix::zeros(1, 2), &g, &[0], RiskKind::Exponential, None, &cfg).is_err());
    }

    #[test]
    fn overflowing_probe_is_an_error() {
        let g = mat(&[vec![-400.0, 400.0]]);
        let cfg = LineSearch { alpha_max: 4.0, tol: 1e-4 };
        let r = line_search_alpha(&Matrix::zeros(1, 2), &g, &[0], RiskKind::Exponential, None, &cfg);
        assert!(matches!(r, Err(CoreError::NonFiniteRisk { .. })));
    }
}
