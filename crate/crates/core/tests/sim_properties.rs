//! Property tests for the model callbacks and the exact simulator.

mod common;

use epilna::lna::transition_moments;
use epilna::model::{CompartmentModel, Params};
use epilna::obs::{ObsKind, ObsParams, ObsTarget};
use epilna::simulate::simulate_mjp;
use nalgebra::DVector;
use proptest::prelude::*;
use rayon::prelude::*;

fn obs_stub() -> ObsParams {
    ObsParams::new(ObsKind::Binomial { lambda: 0.8 }, ObsTarget::Infections).unwrap()
}

/// Central finite difference of the drift against the registered Jacobian.
fn check_jacobian_fd(model: &CompartmentModel, params: &Params, n: &DVector<f64>) {
    let jac = model.jacobian(n, params).unwrap();
    let d = model.n_latent;
    for j in 0..d {
        let log_component = model.tv_beta && j == d - 1;
        let step = if log_component { 1e-5 } else { 1e-3 };
        let mut hi = n.clone();
        let mut lo = n.clone();
        hi[j] += step;
        lo[j] -= step;
        let fhi = model.drift(&hi, params).unwrap();
        let flo = model.drift(&lo, params).unwrap();
        for i in 0..d {
            let fd = (fhi[i] - flo[i]) / (2.0 * step);
            let denom = jac[(i, j)].abs().max(1.0);
            let rel = (fd - jac[(i, j)]).abs() / denom;
            assert!(
                rel < 1e-6,
                "model {} entry ({i},{j}): fd {fd} vs jac {} (rel {rel})",
                model.name(),
                jac[(i, j)]
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobian_matches_finite_differences(
        s0 in 200.0f64..30_000.0,
        i0 in 20.0f64..3_000.0,
        beta in 1e-6f64..1e-4,
        gamma in 0.05f64..2.0,
        kappa in 0.05f64..3.0,
        sigma_beta in 0.1f64..1.0,
        log_beta in -12.0f64..-6.0,
        f1 in 0.01f64..0.3,
        f2 in 0.01f64..0.9,
        f3 in 0.0f64..0.9,
    ) {
        let npop = s0 + i0 + 5_000.0;
        // Interior incidence state: all compartments strictly positive.
        let n1 = f1 * s0;
        let n2 = f2 * (i0 + n1) * 0.9;
        let n3 = f3 * n2;

        let base = Params {
            beta, gamma, kappa, sigma_beta, log_beta0: log_beta,
            x0: [s0, i0], obs: obs_stub(), ..Params::default()
        };

        let sir = CompartmentModel::sir(npop);
        check_jacobian_fd(&sir, &base, &DVector::from_row_slice(&[n1, n2]));

        let sirs = CompartmentModel::sirs(npop);
        check_jacobian_fd(&sirs, &base, &DVector::from_row_slice(&[n1, n2, n3]));

        let sir_tv = CompartmentModel::sir_tv_beta(npop);
        check_jacobian_fd(&sir_tv, &base, &DVector::from_row_slice(&[n1, n2, log_beta + 0.5]));

        let sirs_tv = CompartmentModel::sirs_tv_beta(npop);
        check_jacobian_fd(&sirs_tv, &base, &DVector::from_row_slice(&[n1, n2, n3, log_beta + 0.5]));
    }

    #[test]
    fn simulated_paths_keep_compartments_in_bounds(
        seed in 0u64..500,
        sirs in proptest::bool::ANY,
        i0 in 1.0f64..20.0,
    ) {
        let npop = 150.0;
        let s0 = npop - i0.floor() - 10.0;
        let params = Params {
            beta: 0.002, gamma: 0.15, kappa: 0.3,
            x0: [s0, i0.floor()], obs: obs_stub(), ..Params::default()
        };
        let model = if sirs { CompartmentModel::sirs(npop) } else { CompartmentModel::sir(npop) };
        let path = simulate_mjp(&model, &params, 40.0, 10.0, seed).unwrap();

        // Event-by-event reconstruction stays inside [0, npop] and conserves
        // the population (the implied R class is npop - s - i).
        let mut n = DVector::zeros(model.n_latent);
        for &e in &path.event_ids {
            n[e as usize] += 1.0;
            let x = model.incidence_to_prevalence(&n, params.x0);
            prop_assert!(x[0] >= 0.0 && x[0] <= npop);
            prop_assert!(x[1] >= 0.0 && x[1] <= npop);
            let r = npop - x[0] - x[1];
            prop_assert!(r >= -1e-9 && r <= npop);
        }
        // Infection events can never exceed the susceptibles available.
        let replenished = if sirs { n[2] } else { 0.0 };
        prop_assert!(n[0] <= s0 + replenished);
        // Window sums match the event list totals.
        let totals = path.cumulative_at_windows().last().cloned().unwrap();
        for e in 0..model.n_events {
            prop_assert_eq!(totals[e] as f64, n[e]);
        }
    }
}

/// Large-population limit: the Monte Carlo mean of the cumulative infections
/// agrees with the deterministic mean path within 5%.
#[test]
fn large_population_mean_matches_ode() {
    let m = CompartmentModel::sir(1200.0);
    let p = Params {
        beta: 0.00018,
        gamma: 0.164,
        x0: [1180.0, 20.0],
        obs: obs_stub(),
        ..Params::default()
    };
    let t_end = 40.0;
    let reps = 1000u64;
    let total: f64 = (0..reps)
        .into_par_iter()
        .map(|seed| {
            let path = simulate_mjp(&m, &p, t_end, t_end, seed).unwrap();
            path.grid_incidence[0][0] as f64
        })
        .sum();
    let mc_mean = total / reps as f64;
    let (eta, _) = transition_moments(&m, &p, &DVector::zeros(2), t_end, 400).unwrap();
    let rel = (mc_mean - eta[0]).abs() / eta[0];
    assert!(rel < 0.05, "MC mean {mc_mean} vs ODE {} (rel {rel})", eta[0]);
}
