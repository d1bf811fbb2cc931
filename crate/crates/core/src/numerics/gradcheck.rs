use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Step size and acceptance tolerance for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-6,
            tol: 1e-4,
        }
    }
}

/// Outcome for one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub max_rel_error: f64,
    pub analytic: Matrix,
    pub numeric: Matrix,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

const REL_FLOOR: f64 = 1e-8;

/// Compares `analytic` against central differences of `value` at `params`.
///
/// Relative error per entry is `|a - n| / max(|a|, |n|, 1e-8)`; a tensor
/// passes when its worst entry is below `cfg.tol`.
pub fn grad_check<F>(
    value: F,
    params: &[Matrix],
    analytic: &[Matrix],
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&[Matrix]) -> Result<f64>,
{
    if !(cfg.eps > 0.0 && cfg.eps <= 1e-3) {
        return Err(Error::invalid(format!("eps {} outside (0, 1e-3]", cfg.eps)));
    }
    if params.len() != analytic.len() {
        return Err(Error::shape(format!(
            "{} parameters but {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(analytic).enumerate() {
        if !p.same_shape(g) {
            return Err(Error::shape(format!(
                "parameter {i} is {}x{}, gradient is {}x{}",
                p.rows(),
                p.cols(),
                g.rows(),
                g.cols()
            )));
        }
    }

    let eval = |ps: &[Matrix]| -> Result<f64> {
        let v = value(ps)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::non_finite(format!("objective evaluated to {v}")))
        }
    };
    eval(params)?;

    let mut work: Vec<Matrix> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let mut numeric = Matrix::zeros(grad.rows(), grad.cols());
        let mut worst = 0.0f64;
        for k in 0..grad.len() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + cfg.eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[k] = orig - cfg.eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[k] = orig;

            let n = (plus - minus) / (2.0 * cfg.eps);
            numeric.data_mut()[k] = n;
            let a = grad.data()[k];
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
        out.push(ParamCheck {
            max_rel_error: worst,
            analytic: grad.clone(),
            numeric,
            passed: worst < cfg.tol,
        });
    }
    Ok(GradCheckReport {
        params: out,
        tol: cfg.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    fn scalar(x: f64) -> Vec<Matrix> {
        vec![Matrix::from_vec(1, 1, vec![x]).unwrap()]
    }

    #[test]
    fn square_is_exact() {
        let f = |p: &[Matrix]| Ok(p[0].data()[0].powi(2));
        let rep = grad_check(f, &scalar(3.0), &scalar(6.0), GradCheckConfig::default()).unwrap();
        assert!(rep.passed());
        assert!(rep.max_rel_error() < 1e-8, "{}", rep.max_rel_error());
    }

    #[test]
    fn tanh_sum_passes() {
        let mut rng = seeded_rng(11);
        let x: Vec<f64> = (0..12).map(|_| rng.gaussian()).collect();
        let p = vec![Matrix::from_vec(3, 4, x.clone()).unwrap()];
        let g = vec![
            Matrix::from_vec(3, 4, x.iter().map(|v| 1.0 - v.tanh().powi(2)).collect()).unwrap(),
        ];
        let f = |p: &[Matrix]| Ok(p[0].data().iter().map(|v| v.tanh()).sum());
        let rep = grad_check(
            f,
            &p,
            &g,
            GradCheckConfig {
                eps: 1e-6,
                tol: 1e-5,
            },
        )
        .unwrap();
        assert!(rep.passed(), "{}", rep.max_rel_error());
    }

    #[test]
    fn doubled_gradient_fails() {
        let f = |p: &[Matrix]| Ok(p[0].data()[0].powi(2));
        let rep = grad_check(f, &scalar(3.0), &scalar(12.0), GradCheckConfig::default()).unwrap();
        assert!(!rep.passed());
    }

    #[test]
    fn non_finite_value_is_error() {
        let f = |p: &[Matrix]| Ok(p[0].data()[0].ln());
        let err = grad_check(f, &scalar(0.0), &scalar(1.0), GradCheckConfig::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn eps_out_of_range_rejected() {
        let f = |p: &[Matrix]| Ok(p[0].data()[0]);
        let cfg = GradCheckConfig {
            eps: 1e-2,
            tol: 1e-4,
        };
        assert!(grad_check(f, &scalar(1.0), &scalar(1.0), cfg).is_err());
    }
}
