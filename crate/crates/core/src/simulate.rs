//! Exact Markov jump process simulation (Gillespie's direct method) of
//! prevalence and cumulative incidence, plus synthetic-data generation by
//! corrupting interval incidences through an observation model.
//!
//! Interval incidences are accumulated online into fixed-length observation
//! windows during the run, so no post-hoc binning over the event list is
//! needed. Models with a time-varying infection rate have no exact jump
//! representation; for those the log rate is advanced by an Euler step on a
//! fine sub-grid between Gillespie draws, which is approximate and intended
//! for synthetic-data generation only.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{CompartmentModel, Params};
use crate::obs::{ObsKind, ObsParams};
use crate::rng::substream;

/// Sub-steps per observation window used to discretise the log-rate diffusion
/// when simulating time-varying-rate models.
const TV_SUBSTEPS: usize = 100;

/// One exact realisation of the jump process with incidences accumulated on a
/// fixed observation grid.
#[derive(Debug, Clone)]
pub struct EventPath {
    /// Event times, strictly increasing.
    pub times: Vec<f64>,
    /// Event type per jump (column index into the stoichiometry).
    pub event_ids: Vec<u32>,
    /// New events per window and event type (windows x n_events).
    pub grid_incidence: Vec<Vec<u64>>,
    /// Window length.
    pub grid: f64,
    /// End of the simulated horizon.
    pub t_end: f64,
    /// Log infection rate at window ends (time-varying-rate models only).
    pub log_beta_grid: Option<Vec<f64>>,
}

impl EventPath {
    pub fn n_windows(&self) -> usize {
        self.grid_incidence.len()
    }

    /// Right endpoints of the observation windows.
    pub fn window_times(&self) -> Vec<f64> {
        (1..=self.n_windows()).map(|k| k as f64 * self.grid).collect()
    }

    /// Cumulative incidence per event type at each window end.
    pub fn cumulative_at_windows(&self) -> Vec<Vec<u64>> {
        let n_events = self.grid_incidence.first().map_or(0, Vec::len);
        let mut total = vec![0u64; n_events];
        self.grid_incidence
            .iter()
            .map(|w| {
                for (t, d) in total.iter_mut().zip(w) {
                    *t += d;
                }
                total.clone()
            })
            .collect()
    }

    /// Prevalence `(s, i)` at each window end, reconstructed from the
    /// cumulative incidence.
    pub fn prevalence_at_windows(&self, model: &CompartmentModel, x0: [f64; 2]) -> Vec<[f64; 2]> {
        self.cumulative_at_windows()
            .iter()
            .map(|n| {
                let mut v = DVector::zeros(model.n_latent);
                for (e, c) in n.iter().enumerate() {
                    v[e] = *c as f64;
                }
                let x = model.incidence_to_prevalence(&v, x0);
                [x[0], x[1]]
            })
            .collect()
    }
}

fn window_index(t: f64, grid: f64, n_windows: usize) -> usize {
    let idx = (t / grid).ceil() as usize;
    idx.saturating_sub(1).min(n_windows - 1)
}

/// Exact Gillespie realisation over `[0, t_end]` with incidence counted in
/// windows of length `grid`. Waiting times are exponential with the total
/// hazard as rate and the event type is chosen with probability proportional
/// to its hazard; the simulation stops early once every hazard is zero, with
/// zero counts recorded in the remaining windows.
pub fn simulate_mjp(
    model: &CompartmentModel,
    params: &Params,
    t_end: f64,
    grid: f64,
    seed: u64,
) -> Result<EventPath> {
    if !(t_end > 0.0) || !(grid > 0.0) {
        return Err(Error::invalid("t_end and grid must be positive"));
    }
    let n_windows_f = t_end / grid;
    let n_windows = n_windows_f.round() as usize;
    if n_windows == 0 || (n_windows_f - n_windows as f64).abs() > 1e-9 {
        return Err(Error::invalid("grid must divide t_end"));
    }
    model.validate_params(params)?;
    let [s0, i0] = params.x0;
    if s0.fract() != 0.0 || i0.fract() != 0.0 {
        return Err(Error::invalid("exact simulation requires integer initial prevalence"));
    }

    let mut rng = substream(seed, "mjp");
    let mut path = EventPath {
        times: Vec::new(),
        event_ids: Vec::new(),
        grid_incidence: vec![vec![0u64; model.n_events]; n_windows],
        grid,
        t_end,
        log_beta_grid: None,
    };

    if model.tv_beta {
        simulate_tv(model, params, n_windows, &mut rng, &mut path);
    } else {
        simulate_const(model, params, 0.0, t_end, params.beta, n_windows, &mut rng, &mut path, &mut [s0, i0]);
    }
    Ok(path)
}

/// Gillespie with rates frozen at `beta` over `[t_start, t_stop]`.
/// Returns early (false) once all hazards vanish.
#[allow(clippy::too_many_arguments)]
fn simulate_const(
    model: &CompartmentModel,
    params: &Params,
    t_start: f64,
    t_stop: f64,
    beta: f64,
    n_windows: usize,
    rng: &mut ChaCha8Rng,
    path: &mut EventPath,
    x: &mut [f64; 2],
) -> bool {
    let mut t = t_start;
    let mut hazards = vec![0.0f64; model.n_events];
    loop {
        compute_hazards(model, params, beta, *x, &mut hazards);
        let total: f64 = hazards.iter().sum();
        if total <= 0.0 {
            return false;
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / total;
        if t > t_stop {
            return true;
        }
        let mut pick = rng.random::<f64>() * total;
        let mut event = model.n_events - 1;
        for (e, h) in hazards.iter().enumerate() {
            pick -= h;
            if pick <= 0.0 {
                event = e;
                break;
            }
        }
        x[0] += model.stoich[(0, event)];
        x[1] += model.stoich[(1, event)];
        path.times.push(t);
        path.event_ids.push(event as u32);
        path.grid_incidence[window_index(t, path.grid, n_windows)][event] += 1;
    }
}

fn compute_hazards(model: &CompartmentModel, params: &Params, beta: f64, x: [f64; 2], out: &mut [f64]) {
    match model.n_events {
        2 => {
            out[0] = beta * x[0] * x[1];
            out[1] = params.gamma * x[1];
        }
        3 => {
            out[0] = beta * x[0] * x[1];
            out[1] = params.gamma * x[1];
            out[2] = params.kappa * (model.npop - x[0] - x[1]);
        }
        _ => unreachable!(),
    }
    out.iter_mut().for_each(|h| *h = h.max(0.0));
}

/// Approximate hybrid scheme for time-varying-rate models: the log rate is
/// advanced by an Euler-Maruyama step on a fine sub-grid, with exact Gillespie
/// simulation at the frozen rate inside each sub-interval.
fn simulate_tv(
    model: &CompartmentModel,
    params: &Params,
    n_windows: usize,
    rng: &mut ChaCha8Rng,
    path: &mut EventPath,
) {
    let mut x = params.x0;
    let mut log_beta = params.log_beta0;
    let dt = path.grid / TV_SUBSTEPS as f64;
    let sqrt_dt = dt.sqrt();
    let mut log_beta_grid = Vec::with_capacity(n_windows);
    let mut alive = true;

    for w in 0..n_windows {
        for sub in 0..TV_SUBSTEPS {
            let t0 = (w * TV_SUBSTEPS + sub) as f64 * dt;
            if alive {
                alive = simulate_const(
                    model,
                    params,
                    t0,
                    t0 + dt,
                    log_beta.exp(),
                    n_windows,
                    rng,
                    path,
                    &mut x,
                );
            }
            let z: f64 = rng.sample(StandardNormal);
            log_beta += params.sigma_beta * sqrt_dt * z;
        }
        log_beta_grid.push(log_beta);
    }
    path.log_beta_grid = Some(log_beta_grid);
}

/// Gillespie over a single observation interval, used by the particle filter
/// in jump-process propagation mode. Returns the event counts in the interval.
pub(crate) fn gillespie_window(
    model: &CompartmentModel,
    params: &Params,
    x_start: [f64; 2],
    delta: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<u64> {
    let mut x = x_start;
    let mut t = 0.0;
    let mut counts = vec![0u64; model.n_events];
    let mut hazards = vec![0.0f64; model.n_events];
    loop {
        compute_hazards(model, params, params.beta, x, &mut hazards);
        let total: f64 = hazards.iter().sum();
        if total <= 0.0 {
            return counts;
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / total;
        if t > delta {
            return counts;
        }
        let mut pick = rng.random::<f64>() * total;
        let mut event = model.n_events - 1;
        for (e, h) in hazards.iter().enumerate() {
            pick -= h;
            if pick <= 0.0 {
                event = e;
                break;
            }
        }
        x[0] += model.stoich[(0, event)];
        x[1] += model.stoich[(1, event)];
        counts[event] += 1;
    }
}

/// Corrupt interval incidences into an observation series: one independent
/// draw per window from the observation model applied to the selected count.
pub fn corrupt(grid_incidence: &[Vec<u64>], obs: &ObsParams, seed: u64) -> Result<Vec<f64>> {
    obs.validate()?;
    let idx = obs.target.index();
    let mut rng = substream(seed, "corrupt");
    let mut ys = Vec::with_capacity(grid_incidence.len());
    for window in grid_incidence {
        let m = *window
            .get(idx)
            .ok_or_else(|| Error::invalid("observation target outside the incidence matrix"))?;
        let y = match obs.kind {
            ObsKind::Gaussian { sigma2 } => {
                let z: f64 = rng.sample(StandardNormal);
                m as f64 + sigma2.sqrt() * z
            }
            ObsKind::Binomial { lambda } => {
                if lambda == 1.0 || m == 0 {
                    (if lambda == 1.0 { m } else { 0 }) as f64
                } else {
                    Binomial::new(m, lambda)
                        .map_err(|e| Error::invalid(format!("binomial corruption: {e}")))?
                        .sample(&mut rng) as f64
                }
            }
            ObsKind::NegBinomial { lambda, phi } => {
                let mu = lambda * m as f64;
                if mu == 0.0 {
                    0.0
                } else if phi == 0.0 {
                    Poisson::new(mu)
                        .map_err(|e| Error::invalid(format!("poisson corruption: {e}")))?
                        .sample(&mut rng)
                } else {
                    // Gamma-Poisson mixture with mean mu and variance mu + phi mu^2.
                    let shape = 1.0 / phi;
                    let g = Gamma::new(shape, phi * mu)
                        .map_err(|e| Error::invalid(format!("gamma mixing draw: {e}")))?
                        .sample(&mut rng);
                    if g == 0.0 {
                        0.0
                    } else {
                        Poisson::new(g)
                            .map_err(|e| Error::invalid(format!("poisson corruption: {e}")))?
                            .sample(&mut rng)
                    }
                }
            }
        };
        ys.push(y);
    }
    Ok(ys)
}
