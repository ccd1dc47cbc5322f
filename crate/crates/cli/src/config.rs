//! Experiment configuration: a single TOML file describing the model, the
//! observation model, fixed parameter values, priors for the free parameters,
//! either a data file or a simulation block, and sampler settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use epilna::inference::{McmcSettings, ParamName, Prior, PriorSpec, Scheme};
use epilna::model::{CompartmentModel, Params};
use epilna::obs::{ObsKind, ObsParams, ObsTarget};
use epilna::smc::Propagation;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub label: Option<String>,
    pub model: ModelSection,
    pub obs: ObsSection,
    #[serde(default)]
    pub params: ParamsSection,
    #[serde(default)]
    pub priors: BTreeMap<String, PriorSection>,
    #[serde(default)]
    pub sim: Option<SimSection>,
    #[serde(default)]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    pub npop: f64,
    pub x0: [f64; 2],
    pub log_beta0: Option<f64>,
    /// Prior variance of the log-rate component at time zero (default 0).
    pub log_beta0_var: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsSection {
    pub kind: String,
    pub lambda: Option<f64>,
    pub sigma2: Option<f64>,
    pub phi: Option<f64>,
    pub target: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub kappa: Option<f64>,
    pub sigma_beta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub dist: String,
    pub shape: Option<f64>,
    pub rate: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub t_end: f64,
    pub grid: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcSection {
    pub scheme: String,
    pub iterations: usize,
    pub particles: Option<usize>,
    pub rho: Option<f64>,
    pub pilot_fraction: f64,
    pub rk4_steps: usize,
    pub seed: u64,
    pub store_paths: usize,
    pub propagation: String,
    pub target_accept: Option<f64>,
}

impl Default for McmcSection {
    fn default() -> Self {
        McmcSection {
            scheme: "ffmh".to_string(),
            iterations: 10_000,
            particles: None,
            rho: None,
            pilot_fraction: 0.1,
            rk4_steps: 20,
            seed: 1,
            store_paths: 200,
            propagation: "lna".to_string(),
            target_accept: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
}

impl ExperimentConfig {
    /// Parse a config file; TOML errors come back with line/column context.
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_named(&text, &path.display().to_string())
    }

    pub fn from_str_named(text: &str, name: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(format!("{name}: {e}")))
    }
}

/// A fully validated experiment, ready to run.
#[derive(Debug)]
pub struct Experiment {
    pub label: String,
    pub model: CompartmentModel,
    /// Base parameter values (ground truth for simulation; fixed values and
    /// free-parameter initialisation for fitting).
    pub params: Params,
    pub priors: Option<PriorSpec>,
    pub settings: McmcSettings,
    pub sim: Option<SimSection>,
    pub data_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub config: ExperimentConfig,
}

fn parse_prior(name: &str, s: &PriorSection) -> CliResult<Prior> {
    let need = |v: Option<f64>, field: &str| {
        v.ok_or_else(|| {
            CliError::config(format!("prior for '{name}': missing field '{field}' for dist '{}'", s.dist))
        })
    };
    match s.dist.as_str() {
        "gamma" => Ok(Prior::Gamma { shape: need(s.shape, "shape")?, rate: need(s.rate, "rate")? }),
        "uniform" => Ok(Prior::Uniform { lo: need(s.lo, "lo")?, hi: need(s.hi, "hi")? }),
        "normal-on-log" => Ok(Prior::NormalOnLog { mean: need(s.mean, "mean")?, sd: need(s.sd, "sd")? }),
        other => Err(CliError::config(format!(
            "prior for '{name}': unknown dist '{other}' (expected gamma, uniform or normal-on-log)"
        ))),
    }
}

/// Validate a parsed config and resolve it against the filesystem. Relative
/// data paths are resolved against the config file's directory.
pub fn resolve(config: ExperimentConfig, config_dir: &Path) -> CliResult<Experiment> {
    let model = CompartmentModel::by_name(&config.model.name, config.model.npop)
        .map_err(CliError::from)?;

    // Priors first: free parameters may take their initial values from them.
    let mut entries = Vec::new();
    for (key, section) in &config.priors {
        let name = ParamName::parse(key).map_err(CliError::from)?;
        entries.push((name, parse_prior(key, section)?));
    }
    let priors = if entries.is_empty() {
        None
    } else {
        Some(PriorSpec::new(entries).map_err(CliError::from)?)
    };
    let is_free = |n: ParamName| {
        priors.as_ref().map(|p| p.names().contains(&n)).unwrap_or(false)
    };

    // Observation model.
    let target = ObsTarget::parse(config.obs.target.as_deref().unwrap_or("infections"))
        .map_err(CliError::from)?;
    let kind = match config.obs.kind.as_str() {
        "gaussian" => {
            let sigma2 = config.obs.sigma2.ok_or_else(|| {
                CliError::config("gaussian observation model needs obs.sigma2")
            })?;
            ObsKind::Gaussian { sigma2 }
        }
        "binomial" => {
            let lambda = match config.obs.lambda {
                Some(l) => l,
                None if is_free(ParamName::Lambda) => 0.5,
                None => return Err(CliError::config("binomial observation model needs obs.lambda (or a prior on lambda)")),
            };
            ObsKind::Binomial { lambda }
        }
        "negbinomial" => {
            let lambda = match config.obs.lambda {
                Some(l) => l,
                None if is_free(ParamName::Lambda) => 0.5,
                None => return Err(CliError::config("negative binomial observation model needs obs.lambda (or a prior on lambda)")),
            };
            let phi = match config.obs.phi {
                Some(p) => p,
                None if is_free(ParamName::Phi) => 1.0,
                None => return Err(CliError::config("negative binomial observation model needs obs.phi (or a prior on phi)")),
            };
            ObsKind::NegBinomial { lambda, phi }
        }
        other => {
            return Err(CliError::config(format!(
                "unknown observation kind '{other}' (expected gaussian, binomial or negbinomial)"
            )))
        }
    };
    let obs = ObsParams::new(kind, target).map_err(CliError::from)?;

    // Base parameters.
    let fill = |v: Option<f64>, free: bool, what: &str| -> CliResult<f64> {
        match v {
            Some(x) => Ok(x),
            None if free => Ok(1.0), // overwritten by the prior's central value
            None => Err(CliError::config(format!("missing params.{what} (no prior given either)"))),
        }
    };
    let needs_kappa = model.n_events >= 3;
    let params = Params {
        beta: if model.tv_beta {
            0.0
        } else {
            fill(config.params.beta, is_free(ParamName::Beta), "beta")?
        },
        log_beta0: if model.tv_beta {
            config.model.log_beta0.ok_or_else(|| {
                CliError::config("time-varying-rate models need model.log_beta0")
            })?
        } else {
            0.0
        },
        gamma: fill(config.params.gamma, is_free(ParamName::Gamma), "gamma")?,
        kappa: if needs_kappa {
            fill(config.params.kappa, is_free(ParamName::Kappa), "kappa")?
        } else {
            0.0
        },
        sigma_beta: if model.tv_beta {
            fill(config.params.sigma_beta, is_free(ParamName::SigmaBeta), "sigma_beta")?
        } else {
            0.0
        },
        obs,
        x0: config.model.x0,
        log_beta0_var: config.model.log_beta0_var.unwrap_or(0.0),
    };

    // Cross-checks between priors and model structure.
    if let Some(spec) = &priors {
        for name in spec.names() {
            let ok = match name {
                ParamName::Beta => !model.tv_beta,
                ParamName::Kappa => needs_kappa,
                ParamName::SigmaBeta => model.tv_beta,
                ParamName::Lambda => !matches!(obs.kind, ObsKind::Gaussian { .. }),
                ParamName::Phi => matches!(obs.kind, ObsKind::NegBinomial { .. }),
                ParamName::Gamma => true,
            };
            if !ok {
                return Err(CliError::config(format!(
                    "prior on '{}' does not apply to model '{}' with obs kind '{}'",
                    name.as_str(),
                    model.name(),
                    config.obs.kind
                )));
            }
        }
    }

    // Sampler settings.
    let scheme = Scheme::parse(&config.mcmc.scheme).map_err(CliError::from)?;
    let propagation = match config.mcmc.propagation.as_str() {
        "lna" => Propagation::Lna,
        "mjp" => Propagation::Mjp,
        other => return Err(CliError::config(format!("unknown propagation '{other}'"))),
    };
    if config.mcmc.rho.is_some() && scheme != Scheme::Cpmmh {
        return Err(CliError::config("mcmc.rho is only valid with scheme = \"cpmmh\""));
    }
    if config.mcmc.particles.is_some() && !scheme.is_pseudo_marginal() {
        return Err(CliError::config("mcmc.particles is only valid with pmmh/cpmmh"));
    }
    if scheme.is_pseudo_marginal() && config.mcmc.particles.is_none() {
        return Err(CliError::config("pmmh/cpmmh need mcmc.particles"));
    }
    if propagation == Propagation::Mjp {
        if scheme == Scheme::Cpmmh {
            return Err(CliError::config(
                "jump-process propagation cannot be correlated; use scheme = \"pmmh\"",
            ));
        }
        if model.tv_beta {
            return Err(CliError::config(
                "jump-process propagation is not available for time-varying-rate models",
            ));
        }
    }
    let settings = McmcSettings {
        scheme,
        iterations: config.mcmc.iterations,
        pilot_fraction: config.mcmc.pilot_fraction,
        n_particles: config.mcmc.particles.unwrap_or(0),
        rho: config.mcmc.rho.unwrap_or(0.99),
        propagation,
        n_steps: config.mcmc.rk4_steps,
        seed: config.mcmc.seed,
        store_paths: config.mcmc.store_paths,
        target_accept: config.mcmc.target_accept,
    };

    // Data source.
    let data_path = match &config.data {
        Some(d) => {
            let p = PathBuf::from(&d.path);
            let resolved = if p.is_absolute() { p } else { config_dir.join(p) };
            if !resolved.exists() {
                return Err(CliError::config(format!(
                    "data file {} does not exist",
                    resolved.display()
                )));
            }
            Some(resolved)
        }
        None => None,
    };
    if let Some(sim) = &config.sim {
        if !(sim.grid > 0.0) || !(sim.t_end > 0.0) {
            return Err(CliError::config("sim.t_end and sim.grid must be positive"));
        }
        let ratio = sim.t_end / sim.grid;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(CliError::config("sim.grid must divide sim.t_end"));
        }
    }
    if data_path.is_some() && config.sim.is_some() {
        return Err(CliError::config("give either a data file or a simulation block, not both"));
    }

    let out_dir = PathBuf::from(config.output.dir.clone().unwrap_or_else(|| "out".to_string()));
    let label = config
        .label
        .clone()
        .unwrap_or_else(|| format!("{}-{}", model.name(), config.obs.kind));

    Ok(Experiment {
        label,
        model,
        params,
        priors,
        settings,
        sim: config.sim.clone(),
        data_path,
        out_dir,
        config,
    })
}

/// Load and resolve in one step.
pub fn load(path: &Path) -> CliResult<Experiment> {
    let config = ExperimentConfig::from_path(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    resolve(config, dir)
}
