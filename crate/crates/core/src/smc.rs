//! Particle filter producing a non-negative unbiased estimator of the
//! observed-data likelihood that is a deterministic function of the parameters
//! and a structured auxiliary-variable block.
//!
//! Each step sorts the particles (by Euclidean distance from the particle with
//! the smallest first component), propagates them through the restarted LNA
//! transition (or exact jump-process simulation), weights against the
//! observation density of the increment, accumulates the log mean weight and
//! resamples systematically with a single uniform mapped from the auxiliary
//! block. Keeping every random input in the auxiliary block is what makes the
//! correlated pseudo-marginal scheme valid.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lna::{sample_transition, transition_moments};
use crate::model::{CompartmentModel, Params};
use crate::rng::indexed_stream;
use crate::simulate::gillespie_window;
use crate::stats::normal_cdf;

/// How particles are advanced between observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Propagation {
    /// Restarted LNA transition moments, sampled with auxiliary normals.
    Lna,
    /// Exact Gillespie simulation over the interval. Uses a dedicated
    /// counter-based random stream per (step, particle) seeded from the
    /// auxiliary block, since the number of variates consumed is itself
    /// random; correlated updates are not supported in this mode.
    Mjp,
}

/// The auxiliary variables behind one likelihood estimate: standard-normal
/// propagation draws (`T x N x dim`), one standard normal per step mapped
/// through the normal CDF to the resampling uniform, and a seed for
/// jump-process propagation streams.
#[derive(Debug, Clone)]
pub struct AuxBlock {
    pub n_obs: usize,
    pub n_particles: usize,
    pub dim: usize,
    z: Vec<f64>,
    u_bar: Vec<f64>,
    pub seed: u64,
}

impl AuxBlock {
    /// Draw a fresh block of standard normals.
    pub fn sample<R: Rng>(n_obs: usize, n_particles: usize, dim: usize, rng: &mut R) -> Self {
        let z = (0..n_obs * n_particles * dim).map(|_| rng.sample(StandardNormal)).collect();
        let u_bar = (0..n_obs).map(|_| rng.sample(StandardNormal)).collect();
        AuxBlock { n_obs, n_particles, dim, z, u_bar, seed: rng.random() }
    }

    /// Propagation normals for particle `k` at step `t`.
    pub fn z_slice(&self, t: usize, k: usize) -> &[f64] {
        let start = (t * self.n_particles + k) * self.dim;
        &self.z[start..start + self.dim]
    }

    /// Resampling uniform for step `t` (normal CDF of the stored normal).
    pub fn resample_uniform(&self, t: usize) -> f64 {
        normal_cdf(self.u_bar[t]).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16)
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().all(|v| v.is_finite()) && self.u_bar.iter().all(|v| v.is_finite())
    }
}

/// Crank-Nicolson proposal on the auxiliary block: `u* = rho u + sqrt(1 - rho^2) xi`
/// applied to every entry. `rho = 1` returns the input exactly; `rho = 0`
/// draws an independent fresh block.
pub fn cn_update<R: Rng>(aux: &AuxBlock, rho: f64, rng: &mut R) -> Result<AuxBlock> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid("Crank-Nicolson correlation must lie in [0, 1]"));
    }
    let w = (1.0 - rho * rho).sqrt();
    let map = |u: &f64, rng: &mut R| rho * u + w * rng.sample::<f64, _>(StandardNormal);
    let z = aux.z.iter().map(|u| map(u, rng)).collect();
    let u_bar = aux.u_bar.iter().map(|u| map(u, rng)).collect();
    // Jump-process streams cannot be correlated; refresh the seed only when
    // the block itself is fully refreshed.
    let seed = if rho == 0.0 { rng.random() } else { aux.seed };
    Ok(AuxBlock { n_obs: aux.n_obs, n_particles: aux.n_particles, dim: aux.dim, z, u_bar, seed })
}

/// Systematic resampling of `n_out` indices: index `k` is selected once for
/// every grid position `(j - 1 + u)/n_out` falling in its cumulative-weight
/// cell, so it appears `floor(n_out w_k + r)` or `ceil` times. Deterministic
/// in `(weights, u)`.
pub fn systematic_resample(weights: &[f64], n_out: usize, u: f64) -> Result<Vec<usize>> {
    let n = weights.len();
    if n == 0 || n_out == 0 {
        return Err(Error::invalid("cannot resample zero particles"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(Error::DegenerateWeights);
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("weights must sum to 1, got {total}")));
    }
    if !(0.0..1.0).contains(&u) {
        return Err(Error::invalid("resampling uniform must lie in [0, 1)"));
    }
    let mut out = Vec::with_capacity(n_out);
    let mut cum = weights[0];
    let mut k = 0usize;
    for j in 0..n_out {
        let pos = (j as f64 + u) / n_out as f64;
        // Index k owns the half-open cell [C_{k-1}, C_k).
        while cum <= pos && k + 1 < n {
            k += 1;
            cum += weights[k];
        }
        out.push(k);
    }
    Ok(out)
}

/// Sorting permutation: ascending Euclidean distance from the particle with
/// the smallest first component (ties broken by lowest index).
pub fn sort_particles(particles: &[DVector<f64>]) -> Vec<usize> {
    let n = particles.len();
    if n <= 1 {
        return (0..n).collect();
    }
    let mut reference = 0usize;
    for (k, p) in particles.iter().enumerate().skip(1) {
        if p[0] < particles[reference][0] {
            reference = k;
        }
    }
    let dist2: Vec<f64> = particles
        .iter()
        .map(|p| (p - &particles[reference]).norm_squared())
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| dist2[a].total_cmp(&dist2[b]).then(a.cmp(&b)));
    perm
}

/// Stored output of one particle-filter pass: propagated particles, ancestor
/// indices and final weights, sufficient to draw ancestral paths.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    /// Initial state common to all particles.
    pub initial: DVector<f64>,
    /// Propagated particles per step (pre-resampling), `T x N`.
    pub states: Vec<Vec<DVector<f64>>>,
    /// Ancestor index of each propagated particle in the previous step's
    /// propagated set, `T x N` (step 0 ancestors are the shared initial state).
    pub ancestors: Vec<Vec<usize>>,
    /// Normalised weights at the final step.
    pub final_weights: Vec<f64>,
    /// Log-likelihood estimate.
    pub loglik: f64,
    /// True when some step had all-zero weights (the estimate is -inf).
    pub degenerate: bool,
}

impl ParticleSystem {
    /// Draw one ancestral incidence path `n_0..n_T`: a terminal particle is
    /// selected with probability proportional to the final weights via the
    /// single uniform `u`, then traced back through the stored lineages.
    pub fn sample_path(&self, u: f64) -> Result<Vec<DVector<f64>>> {
        if self.degenerate {
            return Err(Error::DegenerateWeights);
        }
        if !(0.0..1.0).contains(&u) {
            return Err(Error::invalid("path-selection uniform must lie in [0, 1)"));
        }
        let t_max = self.states.len();
        let mut k = self.final_weights.len() - 1;
        let mut cum = 0.0;
        for (j, w) in self.final_weights.iter().enumerate() {
            cum += w;
            if u < cum {
                k = j;
                break;
            }
        }
        let mut path = vec![DVector::zeros(0); t_max + 1];
        for t in (0..t_max).rev() {
            path[t + 1] = self.states[t][k].clone();
            k = self.ancestors[t][k];
        }
        path[0] = self.initial.clone();
        Ok(path)
    }
}

/// Result of a particle-filter pass.
#[derive(Debug, Clone)]
pub struct PfRun {
    pub loglik: f64,
    pub degenerate: bool,
    pub system: ParticleSystem,
}

/// Particle-filter knobs.
#[derive(Debug, Clone, Copy)]
pub struct PfOptions {
    pub propagation: Propagation,
    /// RK4 steps per observation interval (LNA propagation).
    pub n_steps: usize,
    /// Sort particles before propagation. Sorting keeps nearby particles
    /// attached to nearby auxiliary draws, which preserves the correlation the
    /// Crank-Nicolson updates induce; it changes the value of the estimate for
    /// a fixed block but not its distribution.
    pub sort: bool,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions { propagation: Propagation::Lna, n_steps: crate::lna::DEFAULT_ODE_STEPS, sort: true }
    }
}

/// Run the particle filter over the observation series `y` (equally spaced,
/// interval `delta`), driven entirely by the auxiliary block. The returned
/// log-likelihood is `sum_t log( (1/N) sum_k w_t^(k) )` and is a pure function
/// of `(params, y, aux)`; a step on which every weight vanishes yields `-inf`
/// flagged as degenerate rather than an error, so a pseudo-marginal chain can
/// treat it as a rejected proposal.
pub fn pf_loglik(
    model: &CompartmentModel,
    params: &Params,
    y: &[f64],
    delta: f64,
    aux: &AuxBlock,
    opts: &PfOptions,
) -> Result<PfRun> {
    let propagation = opts.propagation;
    let n_steps = opts.n_steps;
    if aux.n_obs != y.len() {
        return Err(Error::invalid("auxiliary block has the wrong number of observation steps"));
    }
    if aux.dim != model.n_latent {
        return Err(Error::invalid("auxiliary block dimension does not match the model"));
    }
    if aux.n_particles == 0 {
        return Err(Error::invalid("need at least one particle"));
    }
    if !aux.is_finite() {
        return Err(Error::invalid("auxiliary block contains non-finite entries"));
    }
    if propagation == Propagation::Mjp {
        if model.tv_beta {
            return Err(Error::invalid(
                "jump-process propagation is not available for time-varying-rate models",
            ));
        }
        if params.x0[0].fract() != 0.0 || params.x0[1].fract() != 0.0 {
            return Err(Error::invalid(
                "jump-process propagation requires integer initial prevalence",
            ));
        }
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("observation interval must be positive"));
    }
    model.validate_params(params)?;

    let n = aux.n_particles;
    let t_max = y.len();
    let initial = model.initial_latent(params);

    let mut particles: Vec<DVector<f64>> = vec![initial.clone(); n];
    // Resampled ancestor indices (into the previous propagated set).
    let mut resample_idx: Vec<usize> = (0..n).collect();
    let mut system = ParticleSystem {
        initial,
        states: Vec::with_capacity(t_max),
        ancestors: Vec::with_capacity(t_max),
        final_weights: vec![0.0; n],
        loglik: 0.0,
        degenerate: false,
    };
    let mut loglik = 0.0;
    let mut logw = vec![0.0f64; n];
    let mut znorm = DVector::zeros(model.n_latent);

    for (t, &y_t) in y.iter().enumerate() {
        let perm: Vec<usize> =
            if opts.sort { sort_particles(&particles) } else { (0..n).collect() };
        let mut propagated = Vec::with_capacity(n);
        let mut parents = Vec::with_capacity(n);
        for (k, &src) in perm.iter().enumerate() {
            let prev = &particles[src];
            let next = match propagation {
                Propagation::Lna => {
                    let (mean, cov) = transition_moments(model, params, prev, delta, n_steps)?;
                    for (zi, v) in znorm.iter_mut().zip(aux.z_slice(t, k)) {
                        *zi = *v;
                    }
                    sample_transition(&mean, &cov, &znorm)?
                }
                Propagation::Mjp => {
                    let x = model.incidence_to_prevalence(prev, params.x0);
                    let mut rng = indexed_stream(aux.seed, t as u64, k as u64);
                    let counts = gillespie_window(model, params, [x[0], x[1]], delta, &mut rng);
                    let mut next = prev.clone();
                    for (e, c) in counts.iter().enumerate() {
                        next[e] += *c as f64;
                    }
                    next
                }
            };
            let dn = &next - prev;
            logw[k] = params.obs.logdensity(y_t, &dn)?;
            parents.push(if t == 0 { 0 } else { resample_idx[src] });
            propagated.push(next);
        }
        system.states.push(propagated);
        system.ancestors.push(parents);

        // Log mean weight with a single max shift.
        let max_lw = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max_lw.is_finite() {
            system.loglik = f64::NEG_INFINITY;
            system.degenerate = true;
            return Ok(PfRun { loglik: f64::NEG_INFINITY, degenerate: true, system });
        }
        let wsum: f64 = logw.iter().map(|lw| (lw - max_lw).exp()).sum();
        loglik += max_lw + (wsum / n as f64).ln();

        let mut weights: Vec<f64> = logw.iter().map(|lw| (lw - max_lw).exp() / wsum).collect();
        // Guard the simplex precondition against accumulated rounding.
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
        if t == t_max - 1 {
            system.final_weights = weights.clone();
        }
        resample_idx = systematic_resample(&weights, n, aux.resample_uniform(t))?;
        particles = resample_idx.iter().map(|&i| system.states[t][i].clone()).collect();
    }

    system.loglik = loglik;
    Ok(PfRun { loglik, degenerate: false, system })
}
