//! Priors and parameter transformations.
//!
//! Sampling happens on an unconstrained scale: log for positive rates and
//! logit for the reporting proportion. Log-prior evaluation on that scale
//! includes the change-of-variables term, so `normal-on-log` priors reduce to
//! plain normals on the transformed coordinate.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::Params;
use crate::obs::ObsKind;
use crate::stats::ln_gamma;

/// The estimable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamName {
    Beta,
    Gamma,
    Kappa,
    SigmaBeta,
    Lambda,
    Phi,
}

impl ParamName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(ParamName::Beta),
            "gamma" => Ok(ParamName::Gamma),
            "kappa" => Ok(ParamName::Kappa),
            "sigma_beta" => Ok(ParamName::SigmaBeta),
            "lambda" => Ok(ParamName::Lambda),
            "phi" => Ok(ParamName::Phi),
            other => Err(Error::invalid(format!("unknown parameter '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ParamName::Beta => "beta",
            ParamName::Gamma => "gamma",
            ParamName::Kappa => "kappa",
            ParamName::SigmaBeta => "sigma_beta",
            ParamName::Lambda => "lambda",
            ParamName::Phi => "phi",
        }
    }

    /// Lambda lives in (0,1) and is logit-transformed; everything else is a
    /// positive rate and is log-transformed.
    fn uses_logit(self) -> bool {
        matches!(self, ParamName::Lambda)
    }

    fn read(self, p: &Params) -> Result<f64> {
        Ok(match self {
            ParamName::Beta => p.beta,
            ParamName::Gamma => p.gamma,
            ParamName::Kappa => p.kappa,
            ParamName::SigmaBeta => p.sigma_beta,
            ParamName::Lambda => match p.obs.kind {
                ObsKind::Binomial { lambda } | ObsKind::NegBinomial { lambda, .. } => lambda,
                ObsKind::Gaussian { .. } => {
                    return Err(Error::invalid("lambda is not a parameter of the gaussian observation model"))
                }
            },
            ParamName::Phi => match p.obs.kind {
                ObsKind::NegBinomial { phi, .. } => phi,
                _ => return Err(Error::invalid("phi is only a parameter of the negative binomial observation model")),
            },
        })
    }

    fn write(self, p: &mut Params, value: f64) -> Result<()> {
        match self {
            ParamName::Beta => p.beta = value,
            ParamName::Gamma => p.gamma = value,
            ParamName::Kappa => p.kappa = value,
            ParamName::SigmaBeta => p.sigma_beta = value,
            ParamName::Lambda => match &mut p.obs.kind {
                ObsKind::Binomial { lambda } | ObsKind::NegBinomial { lambda, .. } => *lambda = value,
                ObsKind::Gaussian { .. } => {
                    return Err(Error::invalid("lambda is not a parameter of the gaussian observation model"))
                }
            },
            ParamName::Phi => match &mut p.obs.kind {
                ObsKind::NegBinomial { phi, .. } => *phi = value,
                _ => return Err(Error::invalid("phi is only a parameter of the negative binomial observation model")),
            },
        }
        Ok(())
    }
}

/// Prior distribution on the natural scale of a parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    /// Gamma(shape, rate).
    Gamma { shape: f64, rate: f64 },
    /// Uniform(lo, hi).
    Uniform { lo: f64, hi: f64 },
    /// log theta ~ N(mean, sd^2).
    NormalOnLog { mean: f64, sd: f64 },
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Prior::Gamma { shape, rate } => {
                if !(shape > 0.0 && rate > 0.0) {
                    return Err(Error::invalid("gamma prior needs positive shape and rate"));
                }
            }
            Prior::Uniform { lo, hi } => {
                if !(hi > lo) {
                    return Err(Error::invalid("uniform prior needs hi > lo"));
                }
            }
            Prior::NormalOnLog { sd, .. } => {
                if !(sd > 0.0) {
                    return Err(Error::invalid("normal-on-log prior needs positive sd"));
                }
            }
        }
        Ok(())
    }

    /// Log density on the natural scale (may be `-inf` outside the support).
    pub fn ln_density(&self, x: f64) -> f64 {
        match *self {
            Prior::Gamma { shape, rate } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
                }
            }
            Prior::Uniform { lo, hi } => {
                if x < lo || x > hi {
                    f64::NEG_INFINITY
                } else {
                    -(hi - lo).ln()
                }
            }
            Prior::NormalOnLog { mean, sd } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    let z = (x.ln() - mean) / sd;
                    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - x.ln()
                }
            }
        }
    }

    /// Starting value for a chain: a central point of the prior.
    pub fn init_value(&self) -> f64 {
        match *self {
            Prior::Gamma { shape, rate } => shape / rate,
            Prior::Uniform { lo, hi } => 0.5 * (lo + hi),
            Prior::NormalOnLog { mean, .. } => mean.exp(),
        }
    }
}

/// Ordered set of free parameters with their priors; fixed parameters are
/// simply absent and keep their values from the base `Params`.
#[derive(Debug, Clone)]
pub struct PriorSpec {
    entries: Vec<(ParamName, Prior)>,
}

impl PriorSpec {
    pub fn new(entries: Vec<(ParamName, Prior)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("at least one free parameter is required"));
        }
        for (i, (name, prior)) in entries.iter().enumerate() {
            prior.validate()?;
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::invalid(format!("duplicate prior for '{}'", name.as_str())));
            }
            if name.uses_logit() {
                if let Prior::NormalOnLog { .. } = prior {
                    return Err(Error::invalid("normal-on-log prior is not available for lambda"));
                }
            }
        }
        Ok(PriorSpec { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn names(&self) -> Vec<ParamName> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    /// Map natural-scale parameters to the unconstrained sampling vector.
    pub fn transform(&self, params: &Params) -> Result<DVector<f64>> {
        let mut z = DVector::zeros(self.dim());
        for (i, (name, _)) in self.entries.iter().enumerate() {
            let x = name.read(params)?;
            z[i] = if name.uses_logit() {
                if !(x > 0.0 && x < 1.0) {
                    return Err(Error::invalid(format!(
                        "{} = {x} is outside (0,1), cannot logit-transform",
                        name.as_str()
                    )));
                }
                (x / (1.0 - x)).ln()
            } else {
                if !(x > 0.0) {
                    return Err(Error::invalid(format!(
                        "{} = {x} is not positive, cannot log-transform",
                        name.as_str()
                    )));
                }
                x.ln()
            };
        }
        Ok(z)
    }

    /// Map an unconstrained vector back to natural-scale parameters, writing
    /// over the free entries of `base`.
    pub fn inverse_transform(&self, z: &DVector<f64>, base: &Params) -> Result<Params> {
        if z.len() != self.dim() {
            return Err(Error::invalid("transformed vector has the wrong dimension"));
        }
        let mut params = base.clone();
        for (i, (name, _)) in self.entries.iter().enumerate() {
            let x = if name.uses_logit() {
                let e = z[i].exp();
                e / (1.0 + e)
            } else {
                z[i].exp()
            };
            name.write(&mut params, x)?;
        }
        Ok(params)
    }

    /// Log prior density of the unconstrained vector, including the Jacobian
    /// of the transform (`log theta` for log, `log lambda(1-lambda)` for logit).
    pub fn ln_prior_transformed(&self, z: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for (i, (name, prior)) in self.entries.iter().enumerate() {
            let (x, ln_jac) = if name.uses_logit() {
                let e = z[i].exp();
                let lam = e / (1.0 + e);
                (lam, (lam * (1.0 - lam)).ln())
            } else {
                (z[i].exp(), z[i])
            };
            total += prior.ln_density(x) + ln_jac;
        }
        total
    }

    /// Parameters with every free entry at its prior's central value.
    pub fn init_params(&self, base: &Params) -> Result<Params> {
        let mut params = base.clone();
        for (name, prior) in &self.entries {
            name.write(&mut params, prior.init_value())?;
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obs::{ObsParams, ObsTarget};
    use approx::assert_abs_diff_eq;

    fn base() -> Params {
        Params {
            beta: 0.00091,
            gamma: 0.082,
            x0: [119.0, 1.0],
            obs: ObsParams::new(ObsKind::Binomial { lambda: 0.8 }, ObsTarget::Infections).unwrap(),
            ..Params::default()
        }
    }

    fn spec() -> PriorSpec {
        PriorSpec::new(vec![
            (ParamName::Beta, Prior::Gamma { shape: 10.0, rate: 1e4 }),
            (ParamName::Gamma, Prior::Gamma { shape: 10.0, rate: 1e2 }),
            (ParamName::Lambda, Prior::Uniform { lo: 0.0, hi: 1.0 }),
        ])
        .unwrap()
    }

    #[test]
    fn transform_round_trip() {
        let s = spec();
        let z = s.transform(&base()).unwrap();
        let back = s.inverse_transform(&z, &base()).unwrap();
        assert_abs_diff_eq!(back.beta, 0.00091, epsilon = 1e-15);
        assert_abs_diff_eq!(back.gamma, 0.082, epsilon = 1e-15);
        let z2 = s.transform(&back).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(z[i], z2[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn logit_jacobian_at_half() {
        let s = PriorSpec::new(vec![(ParamName::Lambda, Prior::Uniform { lo: 0.0, hi: 1.0 })]).unwrap();
        let z = s.transform(&Params { obs: base().obs, ..base() }).unwrap();
        // lambda = 0.8 -> logit = ln 4.
        assert_abs_diff_eq!(z[0], 4.0f64.ln(), epsilon = 1e-12);
        // At lambda = 0.5: logit 0, log-prior = log 1 + log(0.25).
        let lp = s.ln_prior_transformed(&DVector::from_row_slice(&[0.0]));
        assert_abs_diff_eq!(lp, 0.25f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn gamma_prior_change_of_variables() {
        let s = PriorSpec::new(vec![(ParamName::Beta, Prior::Gamma { shape: 10.0, rate: 1e4 })]).unwrap();
        let beta = 0.00091f64;
        let lp = s.ln_prior_transformed(&DVector::from_row_slice(&[beta.ln()]));
        let prior = Prior::Gamma { shape: 10.0, rate: 1e4 };
        assert_abs_diff_eq!(lp, prior.ln_density(beta) + beta.ln(), epsilon = 1e-12);
    }

    #[test]
    fn normal_on_log_is_normal_on_transformed_scale() {
        let s = PriorSpec::new(vec![(ParamName::Gamma, Prior::NormalOnLog { mean: 0.0, sd: 0.5 })]).unwrap();
        let z = DVector::from_row_slice(&[-0.3]);
        let lp = s.ln_prior_transformed(&z);
        let expect = -0.5 * (0.3f64 / 0.5).powi(2) - 0.5f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(lp, expect, epsilon = 1e-12);
    }

    #[test]
    fn out_of_support_is_rejected() {
        let s = spec();
        let mut p = base();
        p.beta = -1.0;
        assert!(s.transform(&p).is_err());
        assert!(PriorSpec::new(vec![
            (ParamName::Beta, Prior::Gamma { shape: 1.0, rate: 1.0 }),
            (ParamName::Beta, Prior::Gamma { shape: 1.0, rate: 1.0 }),
        ])
        .is_err());
    }

    #[test]
    fn init_values_are_central() {
        assert_abs_diff_eq!(Prior::Gamma { shape: 10.0, rate: 1e4 }.init_value(), 1e-3, epsilon = 1e-12);
        assert_abs_diff_eq!(Prior::Uniform { lo: 0.0, hi: 1.0 }.init_value(), 0.5, epsilon = 0.0);
        assert_abs_diff_eq!(Prior::NormalOnLog { mean: 1.0, sd: 1.0 }.init_value(), 1.0f64.exp(), epsilon = 1e-12);
    }
}
