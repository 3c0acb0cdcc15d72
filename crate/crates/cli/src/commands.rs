//! One function per subcommand.

use lindblad_diffusion::fiber_dynamics::{
    build_fiber_generator, finite_time_moments, gaussian_distance, quadratic_response,
};
use lindblad_diffusion::linalg::eig_sorted;
use lindblad_diffusion::model::{validate_model, KineticMode};
use lindblad_diffusion::montecarlo::{estimate_alpha_with, simulate_classical_particle};
use lindblad_diffusion::perturbation::{
    sectoriality_gamma, sigma_symmetric_formula, transport_coefficients, DiffusionReport,
};
use lindblad_diffusion::zero_fiber::{build_generator, stationary, KERNEL_TOL};
use lindblad_diffusion::{linalg::norm1, Error};
use serde_json::{json, Value};

use crate::config::LoadedConfig;
use crate::{Command, Outcome, EXIT_ASSUMPTION, EXIT_CHECK_FAILED, EXIT_OK};

type CmdResult = Result<Outcome, Error>;

pub fn dispatch(cmd: Command, cfg: &LoadedConfig) -> Outcome {
    let r = match cmd {
        Command::Validate => validate(cfg),
        Command::Analyze => analyze(cfg),
        Command::Spectrum => spectrum(cfg),
        Command::Evolve => evolve(cfg),
        Command::Fit => fit(cfg),
        Command::Mc => mc(cfg),
        Command::Crosscheck => crosscheck(cfg),
    };
    r.unwrap_or_else(|e| Outcome::from_error(&e))
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn validate(cfg: &LoadedConfig) -> CmdResult {
    let rep = validate_model(&cfg.model, &cfg.grid)?;
    let mut out = Outcome::ok(serde_json::to_value(&rep).expect("report serializes"));
    if !rep.passed {
        out.exit = EXIT_ASSUMPTION;
    }
    Ok(out)
}

fn analysis_json(cfg: &LoadedConfig, rep: &DiffusionReport) -> CmdResult {
    let mut v = rep.to_json();
    let a = build_generator(&cfg.model, &cfg.grid)?;
    let st = stationary(&a)?;
    v["sectoriality_gamma"] = match sectoriality_gamma(&a, &st.p) {
        Ok(g) if g.is_finite() => json!(g),
        Ok(_) => json!("inf"),
        Err(e) => e.to_json(),
    };
    if cfg.model.symmetry.v_symmetric {
        let s = sigma_symmetric_formula(&cfg.model, &cfg.grid)?;
        v["sigma_symmetric"] = json!(s.sigma.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>());
    }
    Ok(Outcome::ok(v))
}

fn analyze(cfg: &LoadedConfig) -> CmdResult {
    let rep = transport_coefficients(&cfg.model, &cfg.grid)?;
    analysis_json(cfg, &rep)
}

fn spectrum(cfg: &LoadedConfig) -> CmdResult {
    let op = match &cfg.config.spectrum.p {
        Some(p) => build_fiber_generator(&cfg.model, &cfg.grid, p, cfg.model.kinetic_mode())?,
        None => build_generator(&cfg.model, &cfg.grid)?,
    };
    let (vals, _) = eig_sorted(&op.matrix)?;
    let tol = KERNEL_TOL * norm1(&op.matrix).max(f64::MIN_POSITIVE);
    let kernel_dim = vals.iter().filter(|z| z.norm() <= tol).count();
    let mut rows = vec![vec!["index".to_string(), "re".into(), "im".into()]];
    for (i, z) in vals.iter().enumerate() {
        rows.push(vec![i.to_string(), num(z.re), num(z.im)]);
    }
    let gap = vals
        .iter()
        .filter(|z| z.norm() > tol)
        .map(|z| -z.re)
        .fold(f64::INFINITY, f64::min);
    let mut out = Outcome::ok(json!({
        "p": cfg.config.spectrum.p,
        "count": vals.len(),
        "kernel_dim": kernel_dim,
        "gap": if cfg.config.spectrum.p.is_none() && gap.is_finite() { json!(gap) } else { Value::Null },
        "leading": vals.iter().take(8).map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "csv": "spectrum.csv",
    }));
    out.tables.push(("spectrum.csv".into(), rows));
    Ok(out)
}

fn evolve(cfg: &LoadedConfig) -> CmdResult {
    let rep = transport_coefficients(&cfg.model, &cfg.grid)?;
    let init = cfg.init().map_err(|e| Error::InvalidArgument(e.0))?;
    let d = cfg.model.dim;
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("mean_{i}")));
    for i in 0..d {
        for j in 0..d {
            header.push(format!("cov_{i}{j}"));
        }
    }
    header.push("phi_gaussian_distance".into());
    let mut rows = vec![header];
    let mut series = Vec::new();
    for &t in &cfg.config.evolve.times {
        let mo = finite_time_moments(&cfg.model, &cfg.grid, init.as_ref(), t, cfg.config.evolve.eps)?;
        let dist = if t > 0.0 {
            gaussian_distance(&cfg.model, &cfg.grid, init.as_ref(), t, &cfg.config.evolve.gammas, &rep.v, &rep.sigma)?
        } else {
            f64::NAN
        };
        let mut row = vec![num(t)];
        row.extend(mo.mean.iter().map(|x| num(*x)));
        row.extend(mo.cov.iter().map(|x| num(*x)));
        row.push(if dist.is_nan() { String::new() } else { num(dist) });
        rows.push(row);
        series.push(json!({
            "t": t,
            "mean": mo.mean,
            "cov": mo.cov.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
            "stencil_error": mo.stencil_error,
            "phi_gaussian_distance": if dist.is_nan() { Value::Null } else { json!(dist) },
        }));
    }
    let mut out = Outcome::ok(json!({"v": rep.v, "sigma": rep.sigma.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(), "series": series, "csv": "evolve.csv"}));
    out.tables.push(("evolve.csv".into(), rows));
    Ok(out)
}

fn fit(cfg: &LoadedConfig) -> CmdResult {
    let q = quadratic_response(&cfg.model, &cfg.grid, cfg.model.kinetic_mode(), cfg.config.fit.radius)?;
    let mut v = q.to_json();
    v["radius"] = json!(cfg.config.fit.radius);
    Ok(Outcome::ok(v))
}

fn mc(cfg: &LoadedConfig) -> CmdResult {
    let m = &cfg.config.mc;
    let (result, manifest) = match cfg.model.kinetic_mode() {
        KineticMode::Quantum => {
            let est = estimate_alpha_with(&cfg.model, &cfg.grid, m.n_traj, m.t_max, m.seed, m.horizon_policy)?;
            let mut v = est.to_json();
            v["estimator"] = json!("green_kubo_alpha");
            (v, json!({"seed": m.seed, "n_traj": m.n_traj, "t_max": m.t_max}))
        }
        KineticMode::Classical => {
            let s = simulate_classical_particle(&cfg.model, &cfg.grid, m.n_traj, m.particle_t, m.seed)?;
            let mut v = s.to_json();
            v["estimator"] = json!("classical_particle");
            (v, json!({"seed": m.seed, "n_traj": m.n_traj, "t": m.particle_t}))
        }
    };
    let mut out = Outcome::ok(result);
    out.manifest = manifest;
    Ok(out)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn crosscheck(cfg: &LoadedConfig) -> CmdResult {
    let cc = &cfg.config.crosscheck;
    let spec = &cfg.model;
    let d = spec.dim;
    let rep = transport_coefficients(spec, &cfg.grid)?;
    let q = quadratic_response(spec, &cfg.grid, spec.kinetic_mode(), cfg.config.fit.radius)?;
    let mut rows: Vec<Value> = Vec::new();
    let mut push = |route: &str, entry: String, reference: f64, value: f64, residual: f64, tol: f64, unit: &str| {
        rows.push(json!({
            "route": route,
            "entry": entry,
            "reference": reference,
            "value": value,
            "residual": residual,
            "tolerance": tol,
            "unit": unit,
            "pass": residual <= tol,
        }));
    };
    let scale = rep.sigma.iter().map(|x| x.abs()).fold(0.0, f64::max);
    for i in 0..d {
        for j in i..d {
            let (a, b) = (rep.sigma[[i, j]], q.sigma_fit[[i, j]]);
            push("formula_vs_fit", format!("sigma[{i}][{j}]"), b, a, (a - b).abs() / scale.max(1e-300), cc.sigma_rel_tol, "relative");
        }
        let (a, b) = (rep.v[i], q.v_fit[i]);
        push("formula_vs_fit", format!("v[{i}]"), b, a, (a - b).abs() / scale.max(rep.v[i].abs()).max(1e-300), cc.sigma_rel_tol, "relative");
    }
    if spec.symmetry.v_symmetric && spec.kinetic_mode() == KineticMode::Quantum {
        let s = sigma_symmetric_formula(spec, &cfg.grid)?;
        for i in 0..d {
            for j in i..d {
                let (a, b) = (s.sigma[[i, j]], rep.sigma[[i, j]]);
                push("symmetric_vs_formula", format!("sigma[{i}][{j}]"), b, a, rel(a, b), cc.sigma_rel_tol, "relative");
            }
        }
    }
    let mut manifest = Value::Null;
    if cc.run_mc {
        let m = &cfg.config.mc;
        match spec.kinetic_mode() {
            KineticMode::Quantum => {
                let est = estimate_alpha_with(spec, &cfg.grid, m.n_traj, m.t_max, m.seed, m.horizon_policy)?;
                for i in 0..d {
                    for j in i..d {
                        let (a, b, se) = (est.value[[i, j]], rep.alpha[[i, j]], est.stderr[[i, j]]);
                        let z = if se > 0.0 { (a - b).abs() / se } else if a == b { 0.0 } else { f64::INFINITY };
                        push("mc_vs_green_kubo", format!("alpha[{i}][{j}]"), b, a, z, cc.mc_sigmas, "stderr");
                    }
                }
                manifest = json!({"seed": m.seed, "n_traj": m.n_traj, "t_max": m.t_max});
            }
            KineticMode::Classical => {
                let s = simulate_classical_particle(spec, &cfg.grid, m.n_traj, m.particle_t, m.seed)?;
                for i in 0..d {
                    for j in i..d {
                        let (a, b, se) = (s.cov.value[[i, j]], q.sigma_fit[[i, j]], s.cov.stderr[[i, j]]);
                        push("mc_vs_fit", format!("sigma[{i}][{j}]"), b, a, (a - b).abs() / se, cc.mc_sigmas, "stderr");
                    }
                }
                push("mc_normality", "chi2".into(), s.chi2_critical_99, s.chi2, s.chi2, s.chi2_critical_99, "chi2");
                manifest = json!({"seed": m.seed, "n_traj": m.n_traj, "t": m.particle_t});
            }
        }
    }
    let all = rows.iter().all(|r| r["pass"] == json!(true));
    let mut out = Outcome::ok(json!({"routes": rows, "all_pass": all}));
    out.exit = if all { EXIT_OK } else { EXIT_CHECK_FAILED };
    out.manifest = manifest;
    Ok(out)
}
