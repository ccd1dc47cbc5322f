//! Metropolis-Hastings engines over the marginal parameter posterior.
//!
//! Four schemes share one random-walk kernel on the transformed parameter
//! scale, differing only in how the observed-data likelihood is evaluated:
//!
//! - `Ffmh`: analytic forward-filter likelihood;
//! - `OdeMh`: deterministic-ODE baseline likelihood;
//! - `Pmmh`: particle-filter estimate with auxiliary variables refreshed on
//!   every proposal;
//! - `Cpmmh`: particle-filter estimate with auxiliary variables proposed by a
//!   Crank-Nicolson kernel, inducing correlation between successive estimates.
//!
//! Each chain runs a pilot phase that adapts a global proposal scale by
//! stochastic approximation towards a scheme-specific acceptance target and
//! estimates the posterior covariance of the transformed parameters, which
//! then fixes the main-phase proposal. Pilot draws are discarded from all
//! reported summaries.

pub mod diag;
pub mod prior;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gauss_filter::{backward_sample, forward_filter, ode_loglik, FilterArchive};
use crate::linalg::robust_lower_factor;
use crate::model::{CompartmentModel, Params};
use crate::rng::substream;
use crate::smc::{cn_update, pf_loglik, AuxBlock, ParticleSystem, PfOptions, Propagation};

pub use diag::{dic, ess, mean_sd, quantile, r0, Ess};
pub use prior::{ParamName, Prior, PriorSpec};

/// Marginalisation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Ffmh,
    OdeMh,
    Pmmh,
    Cpmmh,
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ffmh" => Ok(Scheme::Ffmh),
            "ode-mh" => Ok(Scheme::OdeMh),
            "pmmh" => Ok(Scheme::Pmmh),
            "cpmmh" => Ok(Scheme::Cpmmh),
            other => Err(Error::invalid(format!(
                "unknown scheme '{other}' (expected ffmh, ode-mh, pmmh or cpmmh)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Ffmh => "ffmh",
            Scheme::OdeMh => "ode-mh",
            Scheme::Pmmh => "pmmh",
            Scheme::Cpmmh => "cpmmh",
        }
    }

    pub fn is_pseudo_marginal(&self) -> bool {
        matches!(self, Scheme::Pmmh | Scheme::Cpmmh)
    }

    /// Conventional acceptance-rate target used by the pilot tuner.
    fn default_accept_target(&self) -> f64 {
        match self {
            Scheme::Ffmh | Scheme::OdeMh => 0.25,
            Scheme::Pmmh => 0.10,
            Scheme::Cpmmh => 0.15,
        }
    }
}

/// Chain settings.
#[derive(Debug, Clone)]
pub struct McmcSettings {
    pub scheme: Scheme,
    /// Main-phase iterations (pilot iterations come on top).
    pub iterations: usize,
    /// Pilot length as a fraction of the main-phase iterations.
    pub pilot_fraction: f64,
    /// Particle count (pseudo-marginal schemes).
    pub n_particles: usize,
    /// Crank-Nicolson correlation (CPMMH; PMMH refreshes, i.e. rho = 0).
    pub rho: f64,
    /// Particle propagation mode (pseudo-marginal schemes).
    pub propagation: Propagation,
    /// RK4 steps per observation interval.
    pub n_steps: usize,
    pub seed: u64,
    /// Number of latent paths to retain across the main phase (0 disables).
    pub store_paths: usize,
    /// Override for the pilot acceptance target.
    pub target_accept: Option<f64>,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            scheme: Scheme::Ffmh,
            iterations: 10_000,
            pilot_fraction: 0.1,
            n_particles: 50,
            rho: 0.99,
            propagation: Propagation::Lna,
            n_steps: crate::lna::DEFAULT_ODE_STEPS,
            seed: 1,
            store_paths: 200,
            target_accept: None,
        }
    }
}

/// Output of one chain: draws on the transformed scale, per-draw
/// log-likelihood (or estimate), acceptance indicators and optional thinned
/// latent incidence paths. Pilot draws are not included.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub names: Vec<ParamName>,
    pub draws: Vec<DVector<f64>>,
    pub loglik: Vec<f64>,
    pub accepted: Vec<bool>,
    pub paths: Vec<Vec<DVector<f64>>>,
    /// Main-phase iteration index each stored path was drawn at (pairs each
    /// path with the corresponding parameter draw).
    pub path_iters: Vec<usize>,
    pub acceptance_rate: f64,
    /// Wall-clock seconds spent in the main phase.
    pub main_secs: f64,
    pub proposal_cov: DMatrix<f64>,
    pub proposal_scale: f64,
    /// Set when the pilot covariance was singular and the tuner fell back to
    /// the diagonal of the marginal variances.
    pub pilot_cov_fallback: bool,
}

impl ChainOutput {
    fn empty(names: Vec<ParamName>, dim: usize) -> Self {
        ChainOutput {
            names,
            draws: Vec::new(),
            loglik: Vec::new(),
            accepted: Vec::new(),
            paths: Vec::new(),
            path_iters: Vec::new(),
            acceptance_rate: 0.0,
            main_secs: 0.0,
            proposal_cov: DMatrix::identity(dim, dim),
            proposal_scale: 0.0,
            pilot_cov_fallback: false,
        }
    }

    /// Natural-scale chain for one free parameter.
    pub fn natural_chain(&self, name: ParamName) -> Result<Vec<f64>> {
        let pos = self
            .names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::invalid(format!("'{}' is not a free parameter", name.as_str())))?;
        let logit = matches!(name, ParamName::Lambda);
        Ok(self
            .draws
            .iter()
            .map(|z| {
                if logit {
                    let e = z[pos].exp();
                    e / (1.0 + e)
                } else {
                    z[pos].exp()
                }
            })
            .collect())
    }
}

/// One Gaussian random-walk Metropolis step on a generic log-posterior.
/// The proposal is `z* = z + scale L xi` with `xi` standard normal; `L` is
/// the lower factor of the proposal covariance. Returns the new state, its
/// log-posterior, the acceptance indicator and the acceptance probability.
pub fn mh_step<F, R>(
    z: &DVector<f64>,
    log_post: f64,
    chol: &DMatrix<f64>,
    scale: f64,
    mut log_post_fn: F,
    rng: &mut R,
) -> (DVector<f64>, f64, bool, f64)
where
    F: FnMut(&DVector<f64>) -> f64,
    R: Rng,
{
    let d = z.len();
    let xi = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let proposal = z + scale * (chol * xi);
    let lp_new = log_post_fn(&proposal);
    let alpha = if lp_new.is_finite() || lp_new == f64::NEG_INFINITY {
        (lp_new - log_post).exp().min(1.0)
    } else {
        0.0
    };
    let u: f64 = rng.random();
    if u < alpha {
        (proposal, lp_new, true, alpha)
    } else {
        (z.clone(), log_post, false, alpha)
    }
}

// Likelihood evaluation shared by the schemes.
struct Engine<'a> {
    model: &'a CompartmentModel,
    y: &'a [f64],
    delta: f64,
    n_steps: usize,
    scheme: Scheme,
    propagation: Propagation,
}

impl Engine<'_> {
    /// Marginal likelihood (FFMH keeps the archive for path draws). Numerical
    /// failures at proposed parameters are mapped to `-inf` so the proposal is
    /// rejected rather than aborting the chain.
    fn marginal(&self, params: &Params) -> (f64, Option<FilterArchive>) {
        match self.scheme {
            Scheme::Ffmh => match forward_filter(self.model, params, self.y, self.delta, self.n_steps) {
                Ok((ll, archive)) => (ll, Some(archive)),
                Err(_) => (f64::NEG_INFINITY, None),
            },
            Scheme::OdeMh => match ode_loglik(self.model, params, self.y, self.delta, self.n_steps) {
                Ok(ll) => (ll, None),
                Err(_) => (f64::NEG_INFINITY, None),
            },
            _ => unreachable!("marginal evaluation is only used by ffmh/ode-mh"),
        }
    }

    fn pf(&self, params: &Params, aux: &AuxBlock) -> (f64, Option<ParticleSystem>) {
        let opts = PfOptions { propagation: self.propagation, n_steps: self.n_steps, sort: true };
        match pf_loglik(self.model, params, self.y, self.delta, aux, &opts) {
            Ok(run) => (run.loglik, Some(run.system)),
            Err(_) => (f64::NEG_INFINITY, None),
        }
    }
}

struct State {
    z: DVector<f64>,
    ln_prior: f64,
    loglik: f64,
    archive: Option<FilterArchive>,
    aux: Option<AuxBlock>,
    system: Option<ParticleSystem>,
    last_accepted: bool,
}

impl State {
    fn log_post(&self) -> f64 {
        self.ln_prior + self.loglik
    }
}

/// Run one chain: pilot adaptation followed by a fixed-kernel main phase.
///
/// The pilot (a) adapts a global proposal scale by Robbins-Monro updates of
/// `log scale` towards the scheme's acceptance target and (b) replaces the
/// proposal covariance with the sample covariance of the pilot draws (halfway
/// through and at the end). A singular pilot covariance falls back to the
/// diagonal of the marginal variances, flagged on the output.
pub fn run_chain(
    model: &CompartmentModel,
    base: &Params,
    priors: &PriorSpec,
    y: &[f64],
    delta: f64,
    settings: &McmcSettings,
) -> Result<ChainOutput> {
    let d = priors.dim();
    if settings.scheme == Scheme::Cpmmh && !(0.0..=1.0).contains(&settings.rho) {
        return Err(Error::invalid("cpmmh correlation must lie in [0, 1]"));
    }
    if settings.scheme.is_pseudo_marginal() && settings.n_particles == 0 {
        return Err(Error::invalid("pseudo-marginal schemes need at least one particle"));
    }
    if settings.iterations == 0 {
        return Ok(ChainOutput::empty(priors.names(), d));
    }

    let engine = Engine {
        model,
        y,
        delta,
        n_steps: settings.n_steps,
        scheme: settings.scheme,
        propagation: settings.propagation,
    };
    let rho = match settings.scheme {
        Scheme::Cpmmh => settings.rho,
        _ => 0.0,
    };
    let target = settings.target_accept.unwrap_or_else(|| settings.scheme.default_accept_target());

    let mut rng_pilot = substream(settings.seed, "pilot");
    let mut rng_chain = substream(settings.seed, "chain");
    let mut rng_aux = substream(settings.seed, "aux");
    let mut rng_paths = substream(settings.seed, "paths");

    // Initial state at the prior's central values.
    let init = priors.init_params(base)?;
    model.validate_params(&init)?;
    let z0 = priors.transform(&init)?;
    let mut state = init_state(&engine, priors, settings, base, z0, &mut rng_aux)?;
    if !state.loglik.is_finite() {
        return Err(Error::numerical(
            "likelihood is not finite at the initial parameter values",
        ));
    }

    // Pilot phase.
    let pilot_iters = ((settings.iterations as f64) * settings.pilot_fraction).ceil() as usize;
    let mut cov = DMatrix::<f64>::identity(d, d);
    let mut chol = cov.clone_owned();
    let mut log_scale: f64 = (0.5 / (d as f64).sqrt()).ln();
    let mut pilot_draws: Vec<DVector<f64>> = Vec::with_capacity(pilot_iters);
    let mut pilot_fallback = false;

    for k in 0..pilot_iters {
        let alpha = step(
            &engine,
            priors,
            settings,
            base,
            rho,
            &mut state,
            &chol,
            log_scale.exp(),
            &mut rng_pilot,
            &mut rng_aux,
        )?;
        pilot_draws.push(state.z.clone());
        // Robbins-Monro on the log proposal scale.
        log_scale += (k as f64 + 1.0).powf(-0.6) * (alpha - target);
        // Re-estimate the covariance halfway through and at the end.
        if (k + 1) == pilot_iters / 2 || (k + 1) == pilot_iters {
            if let Some((c, fallback)) = pilot_covariance(&pilot_draws, d) {
                cov = c;
                pilot_fallback = fallback;
                chol = robust_lower_factor(&cov)?;
            }
        }
    }

    let scale = log_scale.exp();

    // Main phase: fixed kernel.
    let m = settings.iterations;
    let mut out = ChainOutput::empty(priors.names(), d);
    out.proposal_cov = cov;
    out.proposal_scale = scale;
    out.pilot_cov_fallback = pilot_fallback;
    out.draws.reserve(m);
    out.loglik.reserve(m);
    out.accepted.reserve(m);
    let path_thin = m.checked_div(settings.store_paths).map_or(usize::MAX, |t| t.max(1));

    let started = Instant::now();
    let mut n_accept = 0usize;
    for i in 0..m {
        step(
            &engine,
            priors,
            settings,
            base,
            rho,
            &mut state,
            &chol,
            scale,
            &mut rng_chain,
            &mut rng_aux,
        )?;
        n_accept += usize::from(state.last_accepted);
        out.draws.push(state.z.clone());
        out.loglik.push(state.loglik);
        out.accepted.push(state.last_accepted);

        if (i + 1) % path_thin == 0 && settings.store_paths > 0 {
            if let Some(path) = draw_path(&state, model, &mut rng_paths)? {
                out.paths.push(path);
                out.path_iters.push(i);
            }
        }
    }
    out.main_secs = started.elapsed().as_secs_f64();
    out.acceptance_rate = n_accept as f64 / m as f64;
    Ok(out)
}

fn pilot_covariance(draws: &[DVector<f64>], d: usize) -> Option<(DMatrix<f64>, bool)> {
    if draws.len() < 10 {
        return None;
    }
    let n = draws.len() as f64;
    let mut mean = DVector::zeros(d);
    for z in draws {
        mean += z;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for z in draws {
        let c = z - &mean;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    // Degenerate directions (e.g. nothing accepted yet) get a floor.
    let mut any_positive = false;
    for i in 0..d {
        if cov[(i, i)] > 1e-12 {
            any_positive = true;
        }
    }
    if !any_positive {
        return None;
    }
    if robust_lower_factor(&cov).is_ok() && full_rank(&cov) {
        Some((cov, false))
    } else {
        let mut diag = DMatrix::zeros(d, d);
        for i in 0..d {
            diag[(i, i)] = cov[(i, i)].max(1e-8);
        }
        Some((diag, true))
    }
}

fn full_rank(cov: &DMatrix<f64>) -> bool {
    match robust_lower_factor(cov) {
        Ok(l) => (0..cov.nrows()).all(|i| l[(i, i)] > 0.0),
        Err(_) => false,
    }
}

fn init_state(
    engine: &Engine<'_>,
    priors: &PriorSpec,
    settings: &McmcSettings,
    base: &Params,
    z0: DVector<f64>,
    rng_aux: &mut rand_chacha::ChaCha8Rng,
) -> Result<State> {
    let ln_prior = priors.ln_prior_transformed(&z0);
    let params = priors.inverse_transform(&z0, base)?;
    let mut state = State {
        z: z0,
        ln_prior,
        loglik: f64::NEG_INFINITY,
        archive: None,
        aux: None,
        system: None,
        last_accepted: false,
    };
    if settings.scheme.is_pseudo_marginal() {
        // A degenerate estimate at the starting point is possible with few
        // particles; redraw the auxiliary block until it is finite
        // (initialisation is outside the kernel, so this is harmless).
        for attempt in 0..200 {
            let aux =
                AuxBlock::sample(engine.y.len(), settings.n_particles, engine.model.n_latent, rng_aux);
            let (ll, system) = engine.pf(&params, &aux);
            if ll.is_finite() || attempt == 199 {
                state.loglik = ll;
                state.aux = Some(aux);
                state.system = system;
                break;
            }
        }
    } else {
        let (ll, archive) = engine.marginal(&params);
        state.loglik = ll;
        state.archive = archive;
    }
    Ok(state)
}

/// One MH iteration over (theta, aux); mutates `state` and returns the
/// acceptance probability used for scale adaptation.
#[allow(clippy::too_many_arguments)]
fn step(
    engine: &Engine<'_>,
    priors: &PriorSpec,
    settings: &McmcSettings,
    base: &Params,
    rho: f64,
    state: &mut State,
    chol: &DMatrix<f64>,
    scale: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
    rng_aux: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    let d = state.z.len();
    let xi = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let z_new = &state.z + scale * (chol * xi);
    let ln_prior_new = priors.ln_prior_transformed(&z_new);

    let mut alpha = 0.0;
    let mut accepted = false;
    if ln_prior_new > f64::NEG_INFINITY {
        let params_new = priors.inverse_transform(&z_new, base)?;
        if settings.scheme.is_pseudo_marginal() {
            let aux = state.aux.as_ref().expect("pseudo-marginal state carries aux");
            let aux_new = cn_update(aux, rho, rng_aux)?;
            let (ll_new, system_new) = engine.pf(&params_new, &aux_new);
            let lp_new = ln_prior_new + ll_new;
            alpha = acceptance(lp_new, state.log_post());
            if rng.random::<f64>() < alpha {
                state.z = z_new;
                state.ln_prior = ln_prior_new;
                state.loglik = ll_new;
                state.aux = Some(aux_new);
                state.system = system_new;
                accepted = true;
            }
        } else {
            let (ll_new, archive_new) = engine.marginal(&params_new);
            let lp_new = ln_prior_new + ll_new;
            alpha = acceptance(lp_new, state.log_post());
            if rng.random::<f64>() < alpha {
                state.z = z_new;
                state.ln_prior = ln_prior_new;
                state.loglik = ll_new;
                state.archive = archive_new;
                accepted = true;
            }
        }
    } else {
        // Outside the prior support: automatic rejection, but still consume
        // the acceptance uniform so the chain length bookkeeping is uniform.
        let _ = rng.random::<f64>();
    }
    state.last_accepted = accepted;
    Ok(alpha)
}

fn acceptance(lp_new: f64, lp_cur: f64) -> f64 {
    if lp_new == f64::NEG_INFINITY {
        return 0.0;
    }
    if !lp_new.is_finite() {
        return 0.0;
    }
    (lp_new - lp_cur).exp().min(1.0)
}

fn draw_path(
    state: &State,
    model: &CompartmentModel,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<Vec<DVector<f64>>>> {
    if let Some(archive) = &state.archive {
        let t_max = archive.records.len();
        let z: Vec<f64> =
            (0..t_max * model.n_latent).map(|_| rng.sample(StandardNormal)).collect();
        return backward_sample(archive, &z).map(Some);
    }
    if let Some(system) = &state.system {
        let u: f64 = rng.random();
        return system.sample_path(u).map(Some);
    }
    Ok(None)
}
