//! Configuration, preset and file-format behaviour of the command-line layer.

use std::path::{Path, PathBuf};

use epilna::inference::{ParamName, Scheme};
use epilna::smc::Propagation;
use epilna_cli::commands::{cmd_compare, cmd_fit, cmd_pf_variance, cmd_simulate};
use epilna_cli::config::{load, resolve, ExperimentConfig};
use epilna_cli::table::{observation_interval, read_observations};

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn preset(name: &str) -> PathBuf {
    workspace_root().join("configs").join(name)
}

#[test]
fn presets_parse_and_pin_the_study_constants() {
    // d1: small outbreak with binomial reporting of infections.
    let d1 = load(&preset("d1.cfg")).unwrap();
    assert_eq!(d1.model.name(), "sir");
    assert_eq!(d1.model.npop, 120.0);
    assert_eq!(d1.params.x0, [119.0, 1.0]);
    assert_eq!(d1.params.beta, 0.00091);
    assert_eq!(d1.params.gamma, 0.082);
    let sim = d1.sim.as_ref().unwrap();
    assert_eq!((sim.t_end, sim.grid), (80.0, 10.0));
    assert_eq!(d1.settings.scheme, Scheme::Ffmh);
    assert_eq!(d1.settings.iterations, 10_000);

    let d2 = load(&preset("d2.cfg")).unwrap();
    assert_eq!(d2.params.x0, [359.0, 1.0]);
    assert_eq!(d2.params.gamma, 0.246);

    let d3 = load(&preset("d3.cfg")).unwrap();
    assert_eq!(d3.params.x0, [1180.0, 20.0]);
    assert_eq!(d3.params.beta, 0.00018);
    assert_eq!(d3.params.gamma, 0.164);

    // The OPM presets: fixed constants, free (gamma, [kappa,] sigma_beta,
    // lambda [, phi]) and 50k iterations.
    for name in ["opm-sir-bin.cfg", "opm-sir-negbin.cfg", "opm-sirs-bin.cfg", "opm-sirs-negbin.cfg"] {
        let exp = load(&preset(name)).unwrap();
        assert!(exp.model.tv_beta, "{name}");
        assert_eq!(exp.model.npop, 40_000.0);
        assert_eq!(exp.params.x0, [38_600.0, 1_400.0]);
        assert_eq!(exp.params.log_beta0, -10.0);
        assert_eq!(exp.settings.iterations, 50_000);
        let names = exp.priors.as_ref().unwrap().names();
        assert!(names.contains(&ParamName::Gamma));
        assert!(names.contains(&ParamName::SigmaBeta));
        assert!(names.contains(&ParamName::Lambda));
        assert_eq!(names.contains(&ParamName::Kappa), name.contains("sirs"));
        assert_eq!(names.contains(&ParamName::Phi), name.contains("negbin"));
        // Data path resolves to the bundled file.
        let data = exp.data_path.as_ref().unwrap();
        assert!(data.ends_with("data/opm.csv"), "{}", data.display());
    }
}

#[test]
fn bundled_opm_data_matches_the_survey_counts() {
    let (ts, ys) = read_observations(&workspace_root().join("data/opm.csv")).unwrap();
    assert_eq!(observation_interval(&ts).unwrap(), 1.0);
    assert_eq!(ys, vec![1024.0, 1414.0, 958.0, 540.0, 594.0, 557.0, 587.0, 1029.0]);
}

fn parse(text: &str) -> Result<epilna_cli::Experiment, epilna_cli::CliError> {
    let config = ExperimentConfig::from_str_named(text, "inline")?;
    resolve(config, Path::new("."))
}

const MINIMAL: &str = r#"
[model]
name = "sir"
npop = 120.0
x0 = [119.0, 1.0]

[obs]
kind = "binomial"
lambda = 0.8

[params]
beta = 0.00091
gamma = 0.082

[sim]
t_end = 80.0
grid = 10.0

[priors.gamma]
dist = "gamma"
shape = 10.0
rate = 100.0
"#;

#[test]
fn config_validation_rules() {
    assert!(parse(MINIMAL).is_ok());

    // rho only with cpmmh.
    let bad = format!("{MINIMAL}\n[mcmc]\nrho = 0.99\n");
    let err = parse(&bad).unwrap_err().to_string();
    assert!(err.contains("rho"), "{err}");

    // particles only with pmmh/cpmmh.
    let bad = format!("{MINIMAL}\n[mcmc]\nparticles = 10\n");
    assert!(parse(&bad).is_err());

    // pseudo-marginal schemes need particles.
    let bad = format!("{MINIMAL}\n[mcmc]\nscheme = \"pmmh\"\n");
    assert!(parse(&bad).is_err());

    // Correlation cannot be combined with jump-process propagation.
    let bad = format!("{MINIMAL}\n[mcmc]\nscheme = \"cpmmh\"\nparticles = 10\nrho = 0.5\npropagation = \"mjp\"\n");
    assert!(parse(&bad).is_err());

    // Unknown keys are flagged with a located message.
    let bad = MINIMAL.replace("[sim]", "[sim]\nbogus = 1.0");
    let err = parse(&bad).unwrap_err().to_string();
    assert!(err.contains("bogus"), "{err}");

    // Missing data file.
    let bad = MINIMAL.replace(
        "[sim]\nt_end = 80.0\ngrid = 10.0",
        "[data]\npath = \"no-such-file.csv\"",
    );
    let err = parse(&bad).unwrap_err().to_string();
    assert!(err.contains("does not exist"), "{err}");

    // A prior that does not apply to the model.
    let bad = format!("{MINIMAL}\n[priors.kappa]\ndist = \"gamma\"\nshape = 1.0\nrate = 1.0\n");
    assert!(parse(&bad).is_err());
}

#[test]
fn simulate_outputs_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let mut exp = load(&preset("d1.cfg")).unwrap();
    exp.out_dir = tmp.path().join("sim");
    exp.settings.seed = 9;
    let out = cmd_simulate(&exp).unwrap();
    let (ts, ys) = read_observations(&out.data_path).unwrap();
    assert_eq!(ts.len(), 8);
    assert_eq!(observation_interval(&ts).unwrap(), 10.0);
    assert_eq!(ys, out.y);
    // Ground-truth file has one row per observation time.
    let truth = std::fs::read_to_string(&out.truth_path).unwrap();
    assert_eq!(truth.lines().count(), 9);
    assert!(truth.starts_with("t,s,i,n1,n2"));
    // Manifest reproduces the run.
    let manifest = tmp.path().join("sim/manifest.toml");
    let mut again = load(&manifest).unwrap();
    again.out_dir = tmp.path().join("sim2");
    let out2 = cmd_simulate(&again).unwrap();
    assert_eq!(out.y, out2.y);
}

#[test]
fn fit_writes_chain_summary_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let mut exp = load(&preset("d1.cfg")).unwrap();
    exp.out_dir = tmp.path().join("fit");
    exp.settings.iterations = 400;
    exp.settings.store_paths = 20;
    exp.config.mcmc.iterations = 400;
    let fit = cmd_fit(&exp).unwrap();

    // Summary rows: free parameters plus the derived reproduction number.
    assert_eq!(fit.summary.len(), 3 + 1);
    assert_eq!(fit.summary.last().unwrap().name, "r0");

    // Re-reading the chain file reproduces the summary statistics exactly.
    let text = std::fs::read_to_string(fit.out_dir.join("draws.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(header, "iter,beta,gamma,lambda,loglik,accepted");
    let mut betas = Vec::new();
    for line in lines {
        betas.push(line.split(',').nth(1).unwrap().parse::<f64>().unwrap());
    }
    let (mean, _) = epilna::inference::mean_sd(&betas);
    let beta_row = &fit.summary[0];
    assert_eq!(mean.to_bits(), beta_row.mean.to_bits());

    // Predictive bands exist and are ordered.
    let pred = std::fs::read_to_string(fit.out_dir.join("predictive.csv")).unwrap();
    assert!(pred.starts_with("t,s_mean,s_lo,s_hi,i_mean,i_lo,i_hi"));
    for line in pred.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[2] <= v[1] && v[1] <= v[3], "s band ordering: {line}");
        assert!(v[5] <= v[4] && v[4] <= v[6], "i band ordering: {line}");
    }

    // Refitting from the manifest is bit-reproducible.
    let mut again = load(&fit.out_dir.join("manifest.toml")).unwrap();
    again.out_dir = tmp.path().join("fit2");
    let fit2 = cmd_fit(&again).unwrap();
    assert_eq!(fit.dic.to_bits(), fit2.dic.to_bits());
    assert_eq!(fit.summary[0].mean.to_bits(), fit2.summary[0].mean.to_bits());
}

#[test]
fn compare_tabulates_and_prefers_minimum() {
    let tmp = tempfile::tempdir().unwrap();
    let mut a = load(&preset("d1.cfg")).unwrap();
    a.settings.iterations = 300;
    a.config.mcmc.iterations = 300;
    let mut b = load(&preset("d1.cfg")).unwrap();
    b.label = "d1-ode".to_string();
    b.settings.iterations = 300;
    b.config.mcmc.iterations = 300;
    b.settings.scheme = Scheme::OdeMh;
    b.config.mcmc.scheme = "ode-mh".to_string();

    let out = cmd_compare(vec![a, b], tmp.path()).unwrap();
    assert_eq!(out.rows.len(), 2);
    let table = std::fs::read_to_string(&out.table_path).unwrap();
    assert!(table.starts_with("model,dic,p_d"));
    assert_eq!(table.lines().count(), 3);
    let min = out.rows.iter().min_by(|x, y| x.dic.total_cmp(&y.dic)).unwrap();
    assert_eq!(out.best, min.label);

    // Determinism: the same configurations give identical tables.
    let mut a2 = load(&preset("d1.cfg")).unwrap();
    a2.settings.iterations = 300;
    a2.config.mcmc.iterations = 300;
    let tmp2 = tempfile::tempdir().unwrap();
    let out2 = cmd_compare(vec![a2], tmp2.path()).unwrap();
    assert_eq!(out.rows[0].dic.to_bits(), out2.rows[0].dic.to_bits());
}

#[test]
fn pf_variance_reports_both_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    let mut exp = load(&preset("d1.cfg")).unwrap();
    exp.out_dir = tmp.path().to_path_buf();
    exp.settings.scheme = Scheme::Pmmh;
    exp.settings.n_particles = 30;
    exp.settings.propagation = Propagation::Lna;
    let report = cmd_pf_variance(&exp, 40, Some(0.99)).unwrap();
    assert_eq!(report.reps, 40);
    assert!(report.variance > 0.0);
    let dv = report.diff_variance.unwrap();
    assert!(dv > 0.0 && dv < report.variance * 2.0 + 1.0);
    assert!(tmp.path().join("pf_variance.csv").exists());
}

#[test]
fn binary_exit_codes() {
    use std::process::Command;
    let bin = env!("CARGO_BIN_EXE_epilna");
    let tmp = tempfile::tempdir().unwrap();

    // Missing config file: configuration error, exit code 2.
    let out = Command::new(bin)
        .args(["simulate", "--config", "definitely-missing.cfg"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Malformed config: exit code 2 with a located message.
    let bad = tmp.path().join("bad.cfg");
    std::fs::write(&bad, "[model]\nname = \"sir\"\n").unwrap();
    let out = Command::new(bin)
        .args(["fit", "--config", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // A good run exits 0.
    let out = Command::new(bin)
        .args([
            "simulate",
            "--config",
            preset("d1.cfg").to_str().unwrap(),
            "--out",
            tmp.path().join("ok").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("ok/data.csv").exists());
}
