//! Linear noise approximation of the cumulative incidence process.
//!
//! The latent state is summarised by the triple `(eta, G, V)`: the
//! deterministic mean path, the fundamental matrix and the covariance, which
//! jointly satisfy
//!
//! ```text
//! d eta/dt = h*(eta)
//! d G/dt   = F G,                      G(t0) = I
//! d V/dt   = V F' + diag{h*(eta)} + F V
//! ```
//!
//! with `F` the Jacobian of the drift. The system is integrated with a
//! classical fixed-step fourth-order Runge-Kutta scheme; the fixed step keeps
//! every likelihood built on top a deterministic function of its inputs.
//! Restarted one-interval moments (mean path initialised at the current state,
//! zero covariance) parameterise the Gaussian transition used by both the
//! particle filter and the forward filter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{robust_lower_factor, symmetrize};
use crate::model::{CompartmentModel, Params};

/// Default number of RK4 steps per observation interval.
pub const DEFAULT_ODE_STEPS: usize = 20;

/// Joint LNA state: mean path, fundamental matrix, covariance and time.
#[derive(Debug, Clone)]
pub struct LnaState {
    pub eta: DVector<f64>,
    pub g: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub t: f64,
}

impl LnaState {
    /// Restarted state: mean at `n`, identity fundamental matrix, zero covariance.
    pub fn restart(n: &DVector<f64>, t: f64) -> Self {
        let d = n.len();
        LnaState { eta: n.clone(), g: DMatrix::identity(d, d), v: DMatrix::zeros(d, d), t }
    }

    /// State with a supplied initial covariance (identity fundamental matrix).
    pub fn with_cov(a: &DVector<f64>, c: &DMatrix<f64>, t: f64) -> Self {
        LnaState { eta: a.clone(), g: DMatrix::identity(a.len(), a.len()), v: c.clone(), t }
    }

    fn dim(&self) -> usize {
        self.eta.len()
    }

    fn is_finite(&self) -> bool {
        self.eta.iter().all(|x| x.is_finite())
            && self.g.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
    }
}

// Scratch space for one RK4 integration; allocated once per `integrate` call.
struct RkWork {
    k: [Deriv; 4],
    probe: Deriv, // state probe y + c*k, reusing the derivative layout
    f: DMatrix<f64>,
    fv: DMatrix<f64>,
    diff: DVector<f64>,
}

#[derive(Clone)]
struct Deriv {
    eta: DVector<f64>,
    g: DMatrix<f64>,
    v: DMatrix<f64>,
}

// y += a * x, elementwise over matrices.
fn mat_axpy(y: &mut DMatrix<f64>, a: f64, x: &DMatrix<f64>) {
    y.iter_mut().zip(x.iter()).for_each(|(yi, xi)| *yi += a * xi);
}

impl Deriv {
    fn zeros(d: usize) -> Self {
        Deriv { eta: DVector::zeros(d), g: DMatrix::zeros(d, d), v: DMatrix::zeros(d, d) }
    }

    // self = base + c * k
    fn set_probe(&mut self, base: &LnaState, k: &Deriv, c: f64, with_g: bool) {
        self.eta.copy_from(&base.eta);
        self.eta.axpy(c, &k.eta, 1.0);
        self.v.copy_from(&base.v);
        mat_axpy(&mut self.v, c, &k.v);
        if with_g {
            self.g.copy_from(&base.g);
            mat_axpy(&mut self.g, c, &k.g);
        }
    }
}

impl RkWork {
    fn new(d: usize) -> Self {
        RkWork {
            k: [Deriv::zeros(d), Deriv::zeros(d), Deriv::zeros(d), Deriv::zeros(d)],
            probe: Deriv::zeros(d),
            f: DMatrix::zeros(d, d),
            fv: DMatrix::zeros(d, d),
            diff: DVector::zeros(d),
        }
    }
}

// Derivative of (eta, G, V) at (eta, g, v), written into `out`.
#[allow(clippy::too_many_arguments)] // scratch buffers are threaded through
fn rhs_into(
    model: &CompartmentModel,
    params: &Params,
    eta: &DVector<f64>,
    g: &DMatrix<f64>,
    v: &DMatrix<f64>,
    with_g: bool,
    work_f: &mut DMatrix<f64>,
    work_fv: &mut DMatrix<f64>,
    work_diff: &mut DVector<f64>,
    out: &mut Deriv,
) {
    model.drift_into(eta, params, &mut out.eta);
    model.diffusion_diag_into(eta, params, work_diff);
    model.jacobian_into(eta, params, work_f);
    if with_g {
        out.g.gemm(1.0, work_f, g, 0.0);
    }
    // dV = F V + (F V)' + diag{diffusion}; V symmetric makes (F V)' = V F'.
    work_fv.gemm(1.0, work_f, v, 0.0);
    let d = eta.len();
    for i in 0..d {
        for j in 0..d {
            out.v[(i, j)] = work_fv[(i, j)] + work_fv[(j, i)];
        }
        out.v[(i, i)] += work_diff[i];
    }
}

/// Time derivative of the joint LNA state (mean, fundamental matrix, covariance).
pub fn ode_rhs(
    model: &CompartmentModel,
    state: &LnaState,
    params: &Params,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if state.dim() != model.n_latent {
        return Err(Error::invalid("LNA state dimension does not match the model"));
    }
    let d = model.n_latent;
    let mut out = Deriv::zeros(d);
    let mut f = DMatrix::zeros(d, d);
    let mut fv = DMatrix::zeros(d, d);
    let mut diff = DVector::zeros(d);
    rhs_into(model, params, &state.eta, &state.g, &state.v, true, &mut f, &mut fv, &mut diff, &mut out);
    Ok((out.eta, out.g, out.v))
}

/// Integrate the LNA ODE system from `init` to time `t1` with `n_steps` RK4
/// steps. The covariance is re-symmetrised after every step. When `with_g` is
/// false the fundamental matrix is left untouched (it is not needed for
/// restarted transition moments).
pub fn integrate(
    model: &CompartmentModel,
    params: &Params,
    init: &LnaState,
    t1: f64,
    n_steps: usize,
    with_g: bool,
) -> Result<LnaState> {
    if init.dim() != model.n_latent {
        return Err(Error::invalid("LNA state dimension does not match the model"));
    }
    if !(t1 > init.t) {
        return Err(Error::invalid("integration end time must exceed the start time"));
    }
    if n_steps == 0 {
        return Err(Error::invalid("n_steps must be at least 1"));
    }

    let d = model.n_latent;
    let h = (t1 - init.t) / n_steps as f64;
    let mut work = RkWork::new(d);
    let mut state = init.clone();

    for step in 0..n_steps {
        let [k1, k2, k3, k4] = &mut work.k;
        rhs_into(model, params, &state.eta, &state.g, &state.v, with_g, &mut work.f, &mut work.fv, &mut work.diff, k1);

        work.probe.set_probe(&state, k1, 0.5 * h, with_g);
        let probe_g = if with_g { &work.probe.g } else { &state.g };
        rhs_into(model, params, &work.probe.eta, probe_g, &work.probe.v, with_g, &mut work.f, &mut work.fv, &mut work.diff, k2);

        work.probe.set_probe(&state, k2, 0.5 * h, with_g);
        let probe_g = if with_g { &work.probe.g } else { &state.g };
        rhs_into(model, params, &work.probe.eta, probe_g, &work.probe.v, with_g, &mut work.f, &mut work.fv, &mut work.diff, k3);

        work.probe.set_probe(&state, k3, h, with_g);
        let probe_g = if with_g { &work.probe.g } else { &state.g };
        rhs_into(model, params, &work.probe.eta, probe_g, &work.probe.v, with_g, &mut work.f, &mut work.fv, &mut work.diff, k4);

        let w = h / 6.0;
        state.eta.axpy(w, &k1.eta, 1.0);
        state.eta.axpy(2.0 * w, &k2.eta, 1.0);
        state.eta.axpy(2.0 * w, &k3.eta, 1.0);
        state.eta.axpy(w, &k4.eta, 1.0);
        mat_axpy(&mut state.v, w, &k1.v);
        mat_axpy(&mut state.v, 2.0 * w, &k2.v);
        mat_axpy(&mut state.v, 2.0 * w, &k3.v);
        mat_axpy(&mut state.v, w, &k4.v);
        if with_g {
            mat_axpy(&mut state.g, w, &k1.g);
            mat_axpy(&mut state.g, 2.0 * w, &k2.g);
            mat_axpy(&mut state.g, 2.0 * w, &k3.g);
            mat_axpy(&mut state.g, w, &k4.g);
        }
        symmetrize(&mut state.v);
        state.t = init.t + (step + 1) as f64 * h;

        if !state.is_finite() {
            return Err(Error::numerical_at(state.t, "non-finite LNA state during integration"));
        }
    }
    state.t = t1;
    Ok(state)
}

/// Restarted one-interval transition moments: integrate the mean and
/// covariance ODEs from `(eta, V) = (n, 0)` over `delta`, skipping the
/// fundamental matrix. The result parameterises the Gaussian transition
/// `N_{t+delta} | N_t = n ~ N(mean, cov)`.
pub fn transition_moments(
    model: &CompartmentModel,
    params: &Params,
    n: &DVector<f64>,
    delta: f64,
    n_steps: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(delta > 0.0) {
        return Err(Error::invalid("transition interval must be positive"));
    }
    let init = LnaState::restart(n, 0.0);
    let out = integrate(model, params, &init, delta, n_steps, false)?;
    Ok((out.eta, out.v))
}

/// Draw from the Gaussian transition `N(mean, cov)` by the deterministic map
/// `mean + L z` with `L` the robust lower factor of the covariance.
pub fn sample_transition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    if z.len() != mean.len() || cov.nrows() != mean.len() {
        return Err(Error::invalid("transition sampling dimension mismatch"));
    }
    let l = robust_lower_factor(cov)?;
    Ok(mean + l * z)
}
