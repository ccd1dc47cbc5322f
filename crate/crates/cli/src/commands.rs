//! The four subcommands: simulate, fit, compare and pf-variance.
//!
//! Every run writes a manifest with the fully resolved configuration and
//! seed into its output directory; re-running from the manifest reproduces
//! the outputs.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;

use epilna::gauss_filter::{forward_filter, ode_loglik};
use epilna::inference::{dic, ess, mean_sd, quantile, run_chain, ChainOutput, ParamName, Scheme};
use epilna::model::Params;
use epilna::rng::substream;
use epilna::simulate::{corrupt, simulate_mjp, EventPath};
use epilna::smc::{cn_update, pf_loglik, AuxBlock, PfOptions};

use crate::config::Experiment;
use crate::error::{CliError, CliResult};
use crate::table::{fmt, observation_interval, read_observations, write_csv};

pub struct SimulateOutputs {
    pub data_path: PathBuf,
    pub truth_path: PathBuf,
    pub y: Vec<f64>,
    pub delta: f64,
}

fn write_manifest(exp: &Experiment, out_dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut config = exp.config.clone();
    if let Some(path) = &exp.data_path {
        config.data = Some(crate::config::DataSection {
            path: path
                .canonicalize()
                .unwrap_or_else(|_| path.clone())
                .display()
                .to_string(),
        });
    }
    config.output.dir = Some(out_dir.display().to_string());
    let text = toml::to_string(&config)
        .map_err(|e| CliError::config(format!("cannot serialise manifest: {e}")))?;
    std::fs::write(out_dir.join("manifest.toml"), text)?;
    Ok(())
}

fn require_concrete_params(exp: &Experiment) -> CliResult<()> {
    let missing = |field: &str| {
        CliError::config(format!(
            "'{field}' must be given a concrete value for this command (free-parameter priors are not enough)"
        ))
    };
    let c = &exp.config;
    if !exp.model.tv_beta && c.params.beta.is_none() {
        return Err(missing("params.beta"));
    }
    if c.params.gamma.is_none() {
        return Err(missing("params.gamma"));
    }
    if exp.model.n_events >= 3 && c.params.kappa.is_none() {
        return Err(missing("params.kappa"));
    }
    if exp.model.tv_beta && c.params.sigma_beta.is_none() {
        return Err(missing("params.sigma_beta"));
    }
    match c.obs.kind.as_str() {
        "binomial" if c.obs.lambda.is_none() => Err(missing("obs.lambda")),
        "negbinomial" if c.obs.lambda.is_none() => Err(missing("obs.lambda")),
        "negbinomial" if c.obs.phi.is_none() => Err(missing("obs.phi")),
        _ => Ok(()),
    }
}

fn simulate_series(exp: &Experiment, out_dir: &Path) -> CliResult<SimulateOutputs> {
    let sim = exp
        .sim
        .as_ref()
        .ok_or_else(|| CliError::config("this configuration has no [sim] block"))?;
    require_concrete_params(exp)?;
    let seed = exp.settings.seed;
    let path: EventPath = simulate_mjp(&exp.model, &exp.params, sim.t_end, sim.grid, seed)?;
    let y = corrupt(&path.grid_incidence, &exp.params.obs, seed)?;

    std::fs::create_dir_all(out_dir)?;
    let times = path.window_times();
    let data_path = out_dir.join("data.csv");
    let rows: Vec<Vec<String>> =
        times.iter().zip(&y).map(|(t, v)| vec![fmt(*t), fmt(*v)]).collect();
    write_csv(&data_path, "t,y", &rows)?;

    // Latent ground truth at the observation times.
    let truth_path = out_dir.join("truth.csv");
    let prevalence = path.prevalence_at_windows(&exp.model, exp.params.x0);
    let cumulative = path.cumulative_at_windows();
    let mut header = "t,s,i".to_string();
    for e in 0..exp.model.n_events {
        header.push_str(&format!(",n{}", e + 1));
    }
    if exp.model.tv_beta {
        header.push_str(",log_beta");
    }
    let rows: Vec<Vec<String>> = times
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let mut row = vec![fmt(*t), fmt(prevalence[k][0]), fmt(prevalence[k][1])];
            for count in cumulative[k].iter().take(exp.model.n_events) {
                row.push(fmt(*count as f64));
            }
            if let Some(lb) = &path.log_beta_grid {
                row.push(fmt(lb[k]));
            }
            row
        })
        .collect();
    write_csv(&truth_path, &header, &rows)?;

    Ok(SimulateOutputs { data_path, truth_path, y, delta: sim.grid })
}

pub fn cmd_simulate(exp: &Experiment) -> CliResult<SimulateOutputs> {
    let out = simulate_series(exp, &exp.out_dir)?;
    write_manifest(exp, &exp.out_dir)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    pub ess_per_sec: f64,
}

pub struct FitOutputs {
    pub label: String,
    pub summary: Vec<ParamSummary>,
    pub acceptance_rate: f64,
    pub dic: f64,
    pub p_d: f64,
    pub mean_loglik: f64,
    pub min_ess_per_sec: f64,
    pub main_secs: f64,
    pub out_dir: PathBuf,
    pub chain: ChainOutput,
    pub y: Vec<f64>,
    pub delta: f64,
}

/// Observed-data log-likelihood evaluator used for DIC, matching the chain's
/// scheme. Pseudo-marginal schemes use a fresh estimate at the posterior mean.
fn scheme_loglik(exp: &Experiment, y: &[f64], delta: f64, params: &Params) -> CliResult<f64> {
    match exp.settings.scheme {
        Scheme::Ffmh => Ok(forward_filter(&exp.model, params, y, delta, exp.settings.n_steps)?.0),
        Scheme::OdeMh => Ok(ode_loglik(&exp.model, params, y, delta, exp.settings.n_steps)?),
        Scheme::Pmmh | Scheme::Cpmmh => {
            let mut rng = substream(exp.settings.seed, "dic");
            let aux =
                AuxBlock::sample(y.len(), exp.settings.n_particles, exp.model.n_latent, &mut rng);
            let opts = PfOptions {
                propagation: exp.settings.propagation,
                n_steps: exp.settings.n_steps,
                sort: true,
            };
            Ok(pf_loglik(&exp.model, params, y, delta, &aux, &opts)?.loglik)
        }
    }
}

pub fn cmd_fit(exp: &Experiment) -> CliResult<FitOutputs> {
    let out_dir = exp.out_dir.clone();
    std::fs::create_dir_all(&out_dir)?;

    // Data: from file or by simulating the configured generative model.
    let (y, delta) = match (&exp.data_path, &exp.sim) {
        (Some(path), None) => {
            let (ts, ys) = read_observations(path)?;
            let delta = observation_interval(&ts)?;
            (ys, delta)
        }
        (None, Some(_)) => {
            let sim = simulate_series(exp, &out_dir)?;
            (sim.y, sim.delta)
        }
        (None, None) => {
            return Err(CliError::config("fit needs either [data] or [sim]"));
        }
        (Some(_), Some(_)) => unreachable!("rejected at resolution"),
    };

    let priors = exp
        .priors
        .as_ref()
        .ok_or_else(|| CliError::config("fit needs a [priors] section"))?;

    let chain = run_chain(&exp.model, &exp.params, priors, &y, delta, &exp.settings)?;
    if chain.pilot_cov_fallback {
        eprintln!("warning: pilot covariance was singular; using diagonal marginal variances");
    }

    // Per-parameter posterior summaries on the natural scale.
    let mut summary = Vec::new();
    let mut min_ess_per_sec = f64::INFINITY;
    let secs = chain.main_secs.max(1e-9);
    let mut natural: Vec<(ParamName, Vec<f64>)> = Vec::new();
    for name in chain.names.clone() {
        let xs = chain.natural_chain(name)?;
        let (mean, sd) = mean_sd(&xs);
        let e = ess(&xs)?;
        let eps = e.value / secs;
        min_ess_per_sec = min_ess_per_sec.min(eps);
        summary.push(ParamSummary { name: name.as_str().to_string(), mean, sd, ess: e.value, ess_per_sec: eps });
        natural.push((name, xs));
    }

    // Derived reproduction number at time zero.
    let gamma_chain = natural.iter().find(|(n, _)| *n == ParamName::Gamma).map(|(_, v)| v.clone());
    let beta_chain = natural.iter().find(|(n, _)| *n == ParamName::Beta).map(|(_, v)| v.clone());
    let r0_chain: Vec<f64> = (0..chain.draws.len())
        .map(|i| {
            let g = gamma_chain.as_ref().map_or(exp.params.gamma, |v| v[i]);
            let b = if exp.model.tv_beta {
                exp.params.log_beta0.exp()
            } else {
                beta_chain.as_ref().map_or(exp.params.beta, |v| v[i])
            };
            exp.model.npop * b / g
        })
        .collect();
    if !r0_chain.is_empty() {
        let (mean, sd) = mean_sd(&r0_chain);
        let e = ess(&r0_chain)?;
        summary.push(ParamSummary {
            name: "r0".to_string(),
            mean,
            sd,
            ess: e.value,
            ess_per_sec: e.value / secs,
        });
    }

    // DIC from the stored log-likelihoods and the posterior-mean parameters.
    let (dic_value, p_d) = dic(&chain.draws, &chain.loglik, |z_bar: &DVector<f64>| {
        let params = priors.inverse_transform(z_bar, &exp.params)?;
        scheme_loglik(exp, &y, delta, &params).map_err(|e| match e {
            CliError::Numerical(m) | CliError::Config(m) => epilna::Error::numerical(m),
        })
    })?;
    let mean_loglik = chain.loglik.iter().sum::<f64>() / chain.loglik.len().max(1) as f64;

    // Chain draws on the natural scale.
    let mut header = String::from("iter");
    for (name, _) in &natural {
        header.push(',');
        header.push_str(name.as_str());
    }
    header.push_str(",loglik,accepted");
    let rows: Vec<Vec<String>> = (0..chain.draws.len())
        .map(|i| {
            let mut row = vec![i.to_string()];
            for (_, xs) in &natural {
                row.push(fmt(xs[i]));
            }
            row.push(fmt(chain.loglik[i]));
            row.push((chain.accepted[i] as u8).to_string());
            row
        })
        .collect();
    write_csv(&out_dir.join("draws.csv"), &header, &rows)?;

    let rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| vec![s.name.clone(), fmt(s.mean), fmt(s.sd), fmt(s.ess), fmt(s.ess_per_sec)])
        .collect();
    write_csv(&out_dir.join("summary.csv"), "param,mean,sd,ess,ess_per_sec", &rows)?;

    let metrics = vec![
        vec!["acceptance_rate".to_string(), fmt(chain.acceptance_rate)],
        vec!["dic".to_string(), fmt(dic_value)],
        vec!["p_d".to_string(), fmt(p_d)],
        vec!["mean_loglik".to_string(), fmt(mean_loglik)],
        vec!["min_ess_per_sec".to_string(), fmt(min_ess_per_sec)],
        vec!["main_secs".to_string(), fmt(chain.main_secs)],
        vec!["iterations".to_string(), chain.draws.len().to_string()],
    ];
    write_csv(&out_dir.join("metrics.csv"), "metric,value", &metrics)?;

    if !chain.paths.is_empty() {
        write_predictive(exp, &chain, delta, &gamma_chain, &out_dir)?;
    }

    write_manifest(exp, &out_dir)?;

    Ok(FitOutputs {
        label: exp.label.clone(),
        summary,
        acceptance_rate: chain.acceptance_rate,
        dic: dic_value,
        p_d,
        mean_loglik,
        min_ess_per_sec,
        main_secs: chain.main_secs,
        out_dir,
        chain,
        y,
        delta,
    })
}

/// Within-sample predictive bands (mean, 2.5%, 97.5%) for the susceptible and
/// infective prevalence reconstructed from the sampled latent incidence
/// paths, plus the log infection rate and per-time reproduction number for
/// time-varying-rate models.
fn write_predictive(
    exp: &Experiment,
    chain: &ChainOutput,
    delta: f64,
    gamma_chain: &Option<Vec<f64>>,
    out_dir: &Path,
) -> CliResult<()> {
    let t_max = chain.paths[0].len() - 1;
    let d = exp.model.n_latent;
    let tv = exp.model.tv_beta;
    let mut header = String::from("t,s_mean,s_lo,s_hi,i_mean,i_lo,i_hi");
    if tv {
        header.push_str(",log_beta_mean,log_beta_lo,log_beta_hi,r0_mean,r0_lo,r0_hi");
    }
    let mut rows = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        let mut s_vals = Vec::with_capacity(chain.paths.len());
        let mut i_vals = Vec::with_capacity(chain.paths.len());
        let mut lb_vals = Vec::new();
        let mut r0_vals = Vec::new();
        for (path, &iter) in chain.paths.iter().zip(&chain.path_iters) {
            let x = exp.model.incidence_to_prevalence(&path[t], exp.params.x0);
            s_vals.push(x[0]);
            i_vals.push(x[1]);
            if tv {
                let lb = path[t][d - 1];
                lb_vals.push(lb);
                let gamma = gamma_chain.as_ref().map_or(exp.params.gamma, |v| v[iter]);
                r0_vals.push(exp.model.npop * lb.exp() / gamma);
            }
        }
        let band = |vals: &[f64]| (mean_sd(vals).0, quantile(vals, 0.025), quantile(vals, 0.975));
        let (sm, sl, sh) = band(&s_vals);
        let (im, il, ih) = band(&i_vals);
        let mut row = vec![
            fmt(t as f64 * delta),
            fmt(sm),
            fmt(sl),
            fmt(sh),
            fmt(im),
            fmt(il),
            fmt(ih),
        ];
        if tv {
            let (lm, ll, lh) = band(&lb_vals);
            let (rm, rl, rh) = band(&r0_vals);
            row.extend([fmt(lm), fmt(ll), fmt(lh), fmt(rm), fmt(rl), fmt(rh)]);
        }
        rows.push(row);
    }
    write_csv(&out_dir.join("predictive.csv"), &header, &rows)
}

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub label: String,
    pub dic: f64,
    pub p_d: f64,
}

pub struct CompareOutputs {
    pub rows: Vec<CompareRow>,
    pub best: String,
    pub table_path: PathBuf,
}

/// Fit every configuration (in parallel) and tabulate DIC. A failing member
/// aborts the command after the table of completed fits has been written.
pub fn cmd_compare(mut exps: Vec<Experiment>, out_dir: &Path) -> CliResult<CompareOutputs> {
    std::fs::create_dir_all(out_dir)?;
    for exp in exps.iter_mut() {
        exp.out_dir = out_dir.join(&exp.label);
    }
    let results: Vec<(String, CliResult<FitOutputs>)> = exps
        .par_iter()
        .map(|exp| (exp.label.clone(), cmd_fit(exp)))
        .collect();

    let mut rows = Vec::new();
    let mut first_err = None;
    for (label, result) in results {
        match result {
            Ok(fit) => rows.push(CompareRow { label, dic: fit.dic, p_d: fit.p_d }),
            Err(e) => {
                eprintln!("fit '{label}' failed: {e}");
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    let table_path = out_dir.join("dic.csv");
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.label.clone(), fmt(r.dic), fmt(r.p_d)])
        .collect();
    write_csv(&table_path, "model,dic,p_d", &table)?;
    if let Some(e) = first_err {
        return Err(e);
    }
    let best = rows
        .iter()
        .min_by(|a, b| a.dic.total_cmp(&b.dic))
        .map(|r| r.label.clone())
        .ok_or_else(|| CliError::config("compare needs at least one configuration"))?;
    Ok(CompareOutputs { rows, best, table_path })
}

#[derive(Debug, Clone)]
pub struct PfVarianceReport {
    pub reps: usize,
    pub mean: f64,
    pub variance: f64,
    /// Variance of successive estimate differences under a chained
    /// Crank-Nicolson auxiliary update (when a correlation was supplied).
    pub diff_variance: Option<f64>,
}

/// Particle-count diagnostic: the variance of repeated log-likelihood
/// estimates at the configured parameter values (and, with `rho`, of the
/// successive differences a correlated chain would see).
pub fn cmd_pf_variance(exp: &Experiment, reps: usize, rho: Option<f64>) -> CliResult<PfVarianceReport> {
    if reps < 2 {
        return Err(CliError::config("pf-variance needs at least 2 repetitions"));
    }
    require_concrete_params(exp)?;
    if exp.settings.n_particles == 0 {
        return Err(CliError::config("pf-variance needs mcmc.particles"));
    }
    let (y, delta) = match (&exp.data_path, &exp.sim) {
        (Some(path), _) => {
            let (ts, ys) = read_observations(path)?;
            let delta = observation_interval(&ts)?;
            (ys, delta)
        }
        (None, Some(_)) => {
            let sim = simulate_series(exp, &exp.out_dir)?;
            (sim.y, sim.delta)
        }
        (None, None) => return Err(CliError::config("pf-variance needs [data] or [sim]")),
    };

    let opts = PfOptions {
        propagation: exp.settings.propagation,
        n_steps: exp.settings.n_steps,
        sort: true,
    };
    let n = exp.settings.n_particles;
    let dim = exp.model.n_latent;
    let mut rng = substream(exp.settings.seed, "pf-variance");

    let mut lls = Vec::with_capacity(reps);
    for _ in 0..reps {
        let aux = AuxBlock::sample(y.len(), n, dim, &mut rng);
        lls.push(pf_loglik(&exp.model, &exp.params, &y, delta, &aux, &opts)?.loglik);
    }
    let finite: Vec<f64> = lls.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return Err(CliError::Numerical(
            "almost every estimate was degenerate; increase mcmc.particles".to_string(),
        ));
    }
    let (mean, sd) = mean_sd(&finite);
    let variance = sd * sd;

    let diff_variance = match rho {
        Some(r) => {
            let mut aux = AuxBlock::sample(y.len(), n, dim, &mut rng);
            let mut prev = pf_loglik(&exp.model, &exp.params, &y, delta, &aux, &opts)?.loglik;
            let mut diffs = Vec::with_capacity(reps);
            for _ in 0..reps {
                aux = cn_update(&aux, r, &mut rng)?;
                let cur = pf_loglik(&exp.model, &exp.params, &y, delta, &aux, &opts)?.loglik;
                if prev.is_finite() && cur.is_finite() {
                    diffs.push(cur - prev);
                }
                prev = cur;
            }
            if diffs.len() < 2 {
                None
            } else {
                let (_, dsd) = mean_sd(&diffs);
                Some(dsd * dsd)
            }
        }
        None => None,
    };

    std::fs::create_dir_all(&exp.out_dir)?;
    let mut rows = vec![
        vec!["reps".to_string(), reps.to_string()],
        vec!["mean_loglik".to_string(), fmt(mean)],
        vec!["var_loglik".to_string(), fmt(variance)],
    ];
    if let Some(v) = diff_variance {
        rows.push(vec!["var_successive_diff".to_string(), fmt(v)]);
    }
    write_csv(&exp.out_dir.join("pf_variance.csv"), "metric,value", &rows)?;
    Ok(PfVarianceReport { reps, mean, variance, diff_variance })
}
