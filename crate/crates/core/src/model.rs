//! Compartment model definitions.
//!
//! A model is data: event count, stoichiometry, total population and a pair of
//! registered callbacks (hazard and Jacobian), so that further compartment
//! structures can be added without touching the simulation or inference
//! engines. Four models ship here: SIR and SIRS, each optionally with a
//! stochastic time-varying infection rate carried as an extra latent component
//! holding log beta.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::obs::{ObsKind, ObsParams, ObsTarget};

/// Static parameters shared by the four compartment models. Fields that a
/// given model does not use are simply ignored by its callbacks.
#[derive(Debug, Clone)]
pub struct Params {
    /// Infection rate (per contact pair per time unit) for constant-rate models.
    pub beta: f64,
    /// Initial log infection rate for time-varying-rate models.
    pub log_beta0: f64,
    /// Removal rate (per time unit).
    pub gamma: f64,
    /// Loss-of-immunity rate (per time unit, SIRS only).
    pub kappa: f64,
    /// Diffusion scale of log beta (per sqrt time unit, time-varying rate only).
    pub sigma_beta: f64,
    /// Observation model.
    pub obs: ObsParams,
    /// Initial prevalence (s0, i0).
    pub x0: [f64; 2],
    /// Prior variance assigned to the log beta component at time zero by the
    /// forward filter (0 = fixed initial rate).
    pub log_beta0_var: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            beta: 0.0,
            log_beta0: 0.0,
            gamma: 0.0,
            kappa: 0.0,
            sigma_beta: 0.0,
            obs: ObsParams {
                kind: ObsKind::Gaussian { sigma2: 1.0 },
                target: ObsTarget::Infections,
            },
            x0: [0.0, 0.0],
            log_beta0_var: 0.0,
        }
    }
}

type HazardFn = fn(&CompartmentModel, f64, f64, f64, &Params, &mut [f64]);
type JacobianFn = fn(&CompartmentModel, &DVector<f64>, &Params, &mut DMatrix<f64>);

/// A compartment model: dimensions, stoichiometry and rate callbacks.
#[derive(Clone)]
pub struct CompartmentModel {
    name: &'static str,
    /// Number of event types (2 for SIR, 3 for SIRS).
    pub n_events: usize,
    /// Dimension of the latent state: `n_events`, plus one when the log
    /// infection rate is itself a latent component.
    pub n_latent: usize,
    /// Total population size (fixed).
    pub npop: f64,
    /// Stoichiometry: net change of (S, I) per event type, 2 x n_events.
    pub stoich: DMatrix<f64>,
    /// Whether the infection rate is a latent log-scale diffusion.
    pub tv_beta: bool,
    hazard_fn: HazardFn,
    jacobian_fn: JacobianFn,
}

impl std::fmt::Debug for CompartmentModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompartmentModel")
            .field("name", &self.name)
            .field("n_events", &self.n_events)
            .field("n_latent", &self.n_latent)
            .field("npop", &self.npop)
            .field("tv_beta", &self.tv_beta)
            .finish()
    }
}

fn sir_hazard(_m: &CompartmentModel, s: f64, i: f64, beta: f64, p: &Params, out: &mut [f64]) {
    out[0] = beta * s * i;
    out[1] = p.gamma * i;
}

fn sirs_hazard(m: &CompartmentModel, s: f64, i: f64, beta: f64, p: &Params, out: &mut [f64]) {
    out[0] = beta * s * i;
    out[1] = p.gamma * i;
    out[2] = p.kappa * (m.npop - s - i);
}

fn sir_jacobian(_m: &CompartmentModel, eta: &DVector<f64>, p: &Params, out: &mut DMatrix<f64>) {
    let [s0, i0] = p.x0;
    let b = p.beta;
    out[(0, 0)] = b * (s0 - i0 - 2.0 * eta[0] + eta[1]);
    out[(0, 1)] = b * (eta[0] - s0);
    out[(1, 0)] = p.gamma;
    out[(1, 1)] = -p.gamma;
}

fn sir_tv_jacobian(_m: &CompartmentModel, eta: &DVector<f64>, p: &Params, out: &mut DMatrix<f64>) {
    let [s0, i0] = p.x0;
    let b = eta[2].exp();
    out.fill(0.0);
    out[(0, 0)] = b * (s0 - i0 - 2.0 * eta[0] + eta[1]);
    out[(0, 1)] = b * (eta[0] - s0);
    out[(0, 2)] = b * (s0 - eta[0]) * (i0 + eta[0] - eta[1]);
    out[(1, 0)] = p.gamma;
    out[(1, 1)] = -p.gamma;
    // Row for log beta is all zeros: zero drift derivative.
}

fn sirs_jacobian(_m: &CompartmentModel, eta: &DVector<f64>, p: &Params, out: &mut DMatrix<f64>) {
    let [s0, i0] = p.x0;
    let b = p.beta;
    out.fill(0.0);
    out[(0, 0)] = b * (s0 - i0 - 2.0 * eta[0] + eta[1] + eta[2]);
    out[(0, 1)] = b * (eta[0] - eta[2] - s0);
    out[(0, 2)] = b * (i0 + eta[0] - eta[1]);
    out[(1, 0)] = p.gamma;
    out[(1, 1)] = -p.gamma;
    out[(2, 1)] = p.kappa;
    out[(2, 2)] = -p.kappa;
}

fn sirs_tv_jacobian(_m: &CompartmentModel, eta: &DVector<f64>, p: &Params, out: &mut DMatrix<f64>) {
    let [s0, i0] = p.x0;
    let b = eta[3].exp();
    out.fill(0.0);
    out[(0, 0)] = b * (s0 - i0 - 2.0 * eta[0] + eta[1] + eta[2]);
    out[(0, 1)] = b * (eta[0] - eta[2] - s0);
    out[(0, 2)] = b * (i0 + eta[0] - eta[1]);
    out[(0, 3)] = b * (s0 - eta[0] + eta[2]) * (i0 + eta[0] - eta[1]);
    out[(1, 0)] = p.gamma;
    out[(1, 1)] = -p.gamma;
    out[(2, 1)] = p.kappa;
    out[(2, 2)] = -p.kappa;
}

impl CompartmentModel {
    pub fn sir(npop: f64) -> Self {
        CompartmentModel {
            name: "sir",
            n_events: 2,
            n_latent: 2,
            npop,
            stoich: DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, -1.0]),
            tv_beta: false,
            hazard_fn: sir_hazard,
            jacobian_fn: sir_jacobian,
        }
    }

    pub fn sir_tv_beta(npop: f64) -> Self {
        CompartmentModel {
            name: "sir-tvbeta",
            n_events: 2,
            n_latent: 3,
            npop,
            stoich: DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, -1.0]),
            tv_beta: true,
            hazard_fn: sir_hazard,
            jacobian_fn: sir_tv_jacobian,
        }
    }

    pub fn sirs(npop: f64) -> Self {
        CompartmentModel {
            name: "sirs",
            n_events: 3,
            n_latent: 3,
            npop,
            stoich: DMatrix::from_row_slice(2, 3, &[-1.0, 0.0, 1.0, 1.0, -1.0, 0.0]),
            tv_beta: false,
            hazard_fn: sirs_hazard,
            jacobian_fn: sirs_jacobian,
        }
    }

    pub fn sirs_tv_beta(npop: f64) -> Self {
        CompartmentModel {
            name: "sirs-tvbeta",
            n_events: 3,
            n_latent: 4,
            npop,
            stoich: DMatrix::from_row_slice(2, 3, &[-1.0, 0.0, 1.0, 1.0, -1.0, 0.0]),
            tv_beta: true,
            hazard_fn: sirs_hazard,
            jacobian_fn: sirs_tv_jacobian,
        }
    }

    /// Look a model up by its configuration name.
    pub fn by_name(name: &str, npop: f64) -> Result<Self> {
        match name {
            "sir" => Ok(Self::sir(npop)),
            "sirs" => Ok(Self::sirs(npop)),
            "sir-tvbeta" => Ok(Self::sir_tv_beta(npop)),
            "sirs-tvbeta" => Ok(Self::sirs_tv_beta(npop)),
            other => Err(Error::invalid(format!(
                "unknown model '{other}' (expected sir, sirs, sir-tvbeta or sirs-tvbeta)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    /// Effective infection rate for prevalence-space evaluation: the constant
    /// rate, or `exp(log_beta0)` for time-varying-rate models.
    fn beta_at_start(&self, params: &Params) -> f64 {
        if self.tv_beta {
            params.log_beta0.exp()
        } else {
            params.beta
        }
    }

    /// Initial latent state: counting components zero, plus `log_beta0` for
    /// time-varying-rate models.
    pub fn initial_latent(&self, params: &Params) -> DVector<f64> {
        let mut n = DVector::zeros(self.n_latent);
        if self.tv_beta {
            n[self.n_latent - 1] = params.log_beta0;
        }
        n
    }

    /// Event hazards as a function of prevalence `x = (s, i)`, clamped at zero.
    pub fn hazard_prevalence(&self, x: &DVector<f64>, params: &Params) -> Result<DVector<f64>> {
        if x.len() != 2 {
            return Err(Error::invalid(format!(
                "prevalence vector must have length 2, got {}",
                x.len()
            )));
        }
        let mut out = DVector::zeros(self.n_events);
        (self.hazard_fn)(
            self,
            x[0],
            x[1],
            self.beta_at_start(params),
            params,
            out.as_mut_slice(),
        );
        out.iter_mut().for_each(|h| *h = h.max(0.0));
        Ok(out)
    }

    /// Event hazards as a function of the cumulative incidence state `n`
    /// (real-valued allowed), clamped at zero. For time-varying-rate models
    /// the infection rate is `exp` of the last component of `n`.
    pub fn hazard_incidence(&self, n: &DVector<f64>, params: &Params) -> Result<DVector<f64>> {
        self.check_latent_dim(n)?;
        let mut out = DVector::zeros(self.n_events);
        self.hazard_incidence_into(n, params, out.as_mut_slice());
        Ok(out)
    }

    pub(crate) fn hazard_incidence_into(&self, n: &DVector<f64>, params: &Params, out: &mut [f64]) {
        let x = self.incidence_to_prevalence(n, params.x0);
        let beta = if self.tv_beta { n[self.n_latent - 1].exp() } else { params.beta };
        (self.hazard_fn)(self, x[0], x[1], beta, params, out);
        out.iter_mut().for_each(|h| *h = h.max(0.0));
    }

    /// Drift of the latent state: clamped hazards for the counting components
    /// and zero for the log-rate component.
    pub fn drift(&self, n: &DVector<f64>, params: &Params) -> Result<DVector<f64>> {
        self.check_latent_dim(n)?;
        let mut out = DVector::zeros(self.n_latent);
        self.drift_into(n, params, &mut out);
        Ok(out)
    }

    pub(crate) fn drift_into(&self, n: &DVector<f64>, params: &Params, out: &mut DVector<f64>) {
        self.hazard_incidence_into(n, params, &mut out.as_mut_slice()[..self.n_events]);
        if self.tv_beta {
            out[self.n_latent - 1] = 0.0;
        }
    }

    /// Diagonal of the diffusion matrix: clamped hazards, with `sigma_beta^2`
    /// in the log-rate slot.
    pub(crate) fn diffusion_diag_into(&self, n: &DVector<f64>, params: &Params, out: &mut DVector<f64>) {
        self.hazard_incidence_into(n, params, &mut out.as_mut_slice()[..self.n_events]);
        if self.tv_beta {
            out[self.n_latent - 1] = params.sigma_beta * params.sigma_beta;
        }
    }

    /// Jacobian of the drift with respect to the latent state.
    pub fn jacobian(&self, eta: &DVector<f64>, params: &Params) -> Result<DMatrix<f64>> {
        self.check_latent_dim(eta)?;
        let mut out = DMatrix::zeros(self.n_latent, self.n_latent);
        (self.jacobian_fn)(self, eta, params, &mut out);
        Ok(out)
    }

    pub(crate) fn jacobian_into(&self, eta: &DVector<f64>, params: &Params, out: &mut DMatrix<f64>) {
        (self.jacobian_fn)(self, eta, params, out);
    }

    /// Map a cumulative incidence state to prevalence `(s, i)` via the
    /// stoichiometry: `x = x0 + S n`.
    pub fn incidence_to_prevalence(&self, n: &DVector<f64>, x0: [f64; 2]) -> DVector<f64> {
        let mut x = DVector::from_column_slice(&x0);
        for e in 0..self.n_events {
            x[0] += self.stoich[(0, e)] * n[e];
            x[1] += self.stoich[(1, e)] * n[e];
        }
        x
    }

    fn check_latent_dim(&self, n: &DVector<f64>) -> Result<()> {
        if n.len() != self.n_latent {
            return Err(Error::invalid(format!(
                "latent state for model '{}' must have length {}, got {}",
                self.name,
                self.n_latent,
                n.len()
            )));
        }
        Ok(())
    }

    /// Check that the static parameters are admissible for this model.
    pub fn validate_params(&self, params: &Params) -> Result<()> {
        params.obs.validate()?;
        if params.obs.target.index() >= self.n_events {
            return Err(Error::invalid("observation target outside the model's event set"));
        }
        let rate_ok = |r: f64| r.is_finite() && r > 0.0;
        if self.tv_beta {
            if !params.log_beta0.is_finite() {
                return Err(Error::invalid("log_beta0 must be finite"));
            }
            if !rate_ok(params.sigma_beta) {
                return Err(Error::invalid("sigma_beta must be strictly positive"));
            }
        } else if !rate_ok(params.beta) && params.beta != 0.0 {
            return Err(Error::invalid("beta must be nonnegative and finite"));
        }
        if !rate_ok(params.gamma) {
            return Err(Error::invalid("gamma must be strictly positive"));
        }
        if self.n_events >= 3 && !(params.kappa.is_finite() && params.kappa >= 0.0) {
            return Err(Error::invalid("kappa must be nonnegative and finite"));
        }
        let [s0, i0] = params.x0;
        if s0 < 0.0 || i0 < 0.0 || s0 + i0 > self.npop {
            return Err(Error::invalid("initial prevalence must satisfy 0 <= s0, i0 and s0 + i0 <= npop"));
        }
        Ok(())
    }
}
