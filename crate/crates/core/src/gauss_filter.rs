//! Analytic marginalisation of the latent incidence process.
//!
//! The restarted LNA transition together with a moment-matched Gaussian
//! observation model gives a linear-Gaussian state-space step, so the
//! observed-data likelihood follows from Kalman-style recursions:
//!
//! - predict: integrate `(eta, G, V)` over one interval from
//!   `(a_t, I, C_t)`;
//! - weigh: the predictive of `y` has mean `scale * P'E(dN)` and variance
//!   `scale^2 P'Var(dN)P + sigma_hat^2`, with
//!   `Var(dN) = V + C - C G' - G C` and `sigma_hat^2` the approximate
//!   observation variance evaluated at the expected increment;
//! - update: condition `(a, C)` on `y` through
//!   `Cov(N, Y) = scale (V - G C) P`.
//!
//! Latent paths are recovered by backward sampling from the stored per-step
//! quantities, and a deterministic-ODE baseline likelihood is provided for
//! comparison (mean path only, observation variance only).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{robust_lower_factor, robust_solve, symmetrize};
use crate::lna::{integrate, LnaState};
use crate::model::{CompartmentModel, Params};
use crate::stats::ln_normal_pdf;

/// Filtering distribution `N_t | y_{1:t} ~ N(a, C)` plus the running
/// log-likelihood.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub a: DVector<f64>,
    pub c: DMatrix<f64>,
    pub loglik: f64,
    pub t: f64,
}

/// Per-interval quantities stored for backward sampling.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Filtered mean at the interval start.
    pub a_prev: DVector<f64>,
    /// Filtered covariance at the interval start.
    pub c_prev: DMatrix<f64>,
    /// Integrated mean path at the interval end.
    pub eta: DVector<f64>,
    /// Fundamental matrix over the interval.
    pub g: DMatrix<f64>,
    /// Integrated covariance at the interval end.
    pub v: DMatrix<f64>,
}

/// Stored output of a full forward pass: one record per observation interval
/// plus the final filtering distribution.
#[derive(Debug, Clone)]
pub struct FilterArchive {
    pub records: Vec<StepRecord>,
    pub final_a: DVector<f64>,
    pub final_c: DMatrix<f64>,
}

/// Initial filter state: counting components zero with zero covariance; for
/// time-varying-rate models the log-rate component starts at `log_beta0` with
/// prior variance `log_beta0_var`.
pub fn init_state(model: &CompartmentModel, params: &Params) -> FilterState {
    let a = model.initial_latent(params);
    let mut c = DMatrix::zeros(model.n_latent, model.n_latent);
    if model.tv_beta {
        c[(model.n_latent - 1, model.n_latent - 1)] = params.log_beta0_var;
    }
    FilterState { a, c, loglik: 0.0, t: 0.0 }
}

/// One forward-filter step: predict over `delta`, accumulate the likelihood
/// of `y_next` and condition the filtering distribution on it.
pub fn ff_step(
    model: &CompartmentModel,
    params: &Params,
    state: &FilterState,
    y_next: f64,
    delta: f64,
    n_steps: usize,
) -> Result<(FilterState, StepRecord)> {
    let init = LnaState::with_cov(&state.a, &state.c, state.t);
    let pred = integrate(model, params, &init, state.t + delta, n_steps, true)?;

    let idx = params.obs.target.index();
    let dn_hat = &pred.eta - &state.a;
    let (scale, sigma2_hat) = params.obs.gaussian_approx(&dn_hat);

    // Var(dN) and Cov(N, Y) only enter through the observed component.
    let gc = &pred.g * &state.c; // G C
    let var_dn_obs =
        (pred.v[(idx, idx)] + state.c[(idx, idx)] - 2.0 * gc[(idx, idx)]).max(0.0);
    let pred_var = scale * scale * var_dn_obs + sigma2_hat;
    if !(pred_var > 0.0) || !pred_var.is_finite() {
        return Err(Error::numerical_at(
            pred.t,
            format!("predicted observation variance {pred_var} is not strictly positive"),
        ));
    }
    let pred_mean = scale * dn_hat[idx];
    let loglik = state.loglik + ln_normal_pdf(y_next, pred_mean, pred_var);
    if !loglik.is_finite() && loglik != f64::NEG_INFINITY {
        return Err(Error::numerical_at(pred.t, "non-finite likelihood increment"));
    }

    // Cov(N_{t+1}, Y_{t+1}) = scale (V - G C) P.
    let cov_ny = scale * (pred.v.column(idx) - gc.column(idx));
    let gain = &cov_ny / pred_var;
    let a_next = &pred.eta + &gain * (y_next - pred_mean);
    let mut c_next = &pred.v - &gain * cov_ny.transpose();
    symmetrize(&mut c_next);
    // PSD check (with the shared jitter ladder) before the state is reused.
    robust_lower_factor(&c_next)
        .map_err(|_| Error::numerical_at(pred.t, "updated filtering covariance is not PSD"))?;

    let record = StepRecord {
        a_prev: state.a.clone(),
        c_prev: state.c.clone(),
        eta: pred.eta.clone(),
        g: pred.g.clone(),
        v: pred.v.clone(),
    };
    let next = FilterState { a: a_next, c: c_next, loglik, t: pred.t };
    Ok((next, record))
}

/// Fold of [`ff_step`] over an equally spaced observation series, from the
/// initial state of [`init_state`]. Returns the observed-data log-likelihood
/// and the archive needed for backward sampling.
pub fn forward_filter(
    model: &CompartmentModel,
    params: &Params,
    y: &[f64],
    delta: f64,
    n_steps: usize,
) -> Result<(f64, FilterArchive)> {
    if !(delta > 0.0) {
        return Err(Error::invalid("observation interval must be positive"));
    }
    model.validate_params(params)?;
    let mut state = init_state(model, params);
    let mut records = Vec::with_capacity(y.len());
    for &obs in y {
        let (next, record) = ff_step(model, params, &state, obs, delta, n_steps)?;
        records.push(record);
        state = next;
    }
    Ok((state.loglik, FilterArchive { records, final_a: state.a, final_c: state.c }))
}

/// Draw one latent incidence path `n_0..n_T` by backward sampling: `n_T` from
/// the final filtering distribution, then for `t = T-1..1`
///
/// ```text
/// n_t | n_{t+1} ~ N( a_t + C_t G' V^{-1} (n_{t+1} - eta_{t+1}),
///                    C_t - C_t G' V^{-1} G C_t )
/// ```
///
/// `z` supplies the standard normals, `dim` per step, ordered from the final
/// time backwards. Deterministic in `(archive, z)`.
pub fn backward_sample(archive: &FilterArchive, z: &[f64]) -> Result<Vec<DVector<f64>>> {
    let t_max = archive.records.len();
    let d = archive.final_a.len();
    if z.len() != t_max * d {
        return Err(Error::invalid(format!(
            "backward sampling needs {} normals ({} steps x dim {}), got {}",
            t_max * d,
            t_max,
            d,
            z.len()
        )));
    }
    let mut path = vec![DVector::zeros(d); t_max + 1];

    let zv = |step: usize| DVector::from_column_slice(&z[step * d..(step + 1) * d]);

    // Terminal draw from the final filter marginal.
    let l = robust_lower_factor(&archive.final_c)?;
    path[t_max] = &archive.final_a + &l * zv(0);

    for (back, t) in (1..t_max).rev().enumerate() {
        let rec = &archive.records[t]; // interval (t, t+1]
        let resid = &path[t + 1] - &rec.eta;
        // C_t G' V^{-1} as solve against each needed vector.
        let cgt = &rec.c_prev * rec.g.transpose();
        let vinv_resid = robust_solve(&rec.v, &resid)?;
        let mean = &rec.a_prev + &cgt * vinv_resid;
        // Cov reduction: C - C G' V^{-1} G C, via solving V X = (G C).
        let gct = &rec.g * &rec.c_prev;
        let mut reduction = DMatrix::zeros(d, d);
        for j in 0..d {
            let col = robust_solve(&rec.v, &DVector::from(gct.column(j).into_owned()))?;
            reduction.set_column(j, &(&cgt * col));
        }
        let mut cov = &rec.c_prev - reduction;
        symmetrize(&mut cov);
        let l = robust_lower_factor(&cov)?;
        path[t] = mean + &l * zv(back + 1);
    }

    // n_0 is the deterministic initial state.
    path[0] = archive.records[0].a_prev.clone();
    Ok(path)
}

/// Deterministic-ODE baseline likelihood: integrates the mean path only and
/// scores each observation with the approximate observation variance alone
/// (latent variance forced to zero).
pub fn ode_loglik(
    model: &CompartmentModel,
    params: &Params,
    y: &[f64],
    delta: f64,
    n_steps: usize,
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::invalid("observation interval must be positive"));
    }
    model.validate_params(params)?;
    let d = model.n_latent;
    let idx = params.obs.target.index();
    let mut a = model.initial_latent(params);
    let mut drift = DVector::zeros(d);
    let mut loglik = 0.0;
    let h_all = delta / n_steps as f64;
    let mut t = 0.0;

    for &obs in y {
        let mut eta = a.clone();
        // RK4 on the mean ODE alone.
        let mut k = [DVector::zeros(d), DVector::zeros(d), DVector::zeros(d), DVector::zeros(d)];
        for _ in 0..n_steps {
            model.drift_into(&eta, params, &mut drift);
            k[0].copy_from(&drift);
            let probe = &eta + 0.5 * h_all * &k[0];
            model.drift_into(&probe, params, &mut drift);
            k[1].copy_from(&drift);
            let probe = &eta + 0.5 * h_all * &k[1];
            model.drift_into(&probe, params, &mut drift);
            k[2].copy_from(&drift);
            let probe = &eta + h_all * &k[2];
            model.drift_into(&probe, params, &mut drift);
            k[3].copy_from(&drift);
            eta += h_all / 6.0 * (&k[0] + 2.0 * &k[1] + 2.0 * &k[2] + &k[3]);
            t += h_all;
            if !eta.iter().all(|v| v.is_finite()) {
                return Err(Error::numerical_at(t, "non-finite mean path"));
            }
        }
        let dn_hat = &eta - &a;
        let (scale, sigma2_hat) = params.obs.gaussian_approx(&dn_hat);
        loglik += ln_normal_pdf(obs, scale * dn_hat[idx], sigma2_hat);
        a = eta;
    }
    Ok(loglik)
}
