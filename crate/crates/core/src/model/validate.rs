//! Pointwise admissibility checks for a model on a grid.
//!
//! Complete positivity cannot be decided from samples. The checks here are
//! its pointwise consequences (nonnegative diagonal, Hermitian kernel,
//! Cauchy-Schwarz bound) plus consistency of the supplied derivatives.

use serde::Serialize;

use super::{half_shifted, fd_derivatives, KineticMode, ModelSpec, ResolvedAtom, NU_NORMALIZATION_TOL};
use crate::error::{Error, Result};
use crate::torus::{Point, TorusGrid};

const RATE_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-12;
const DERIVATIVE_TOL: f64 = 1e-5;
const DERIVATIVE_STEP: f64 = 1e-3;
const SYMMETRY_TOL: f64 = 1e-4;
const DRIFT_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    /// The measured quantity (a minimum, a maximum deviation, a score).
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn result(name: &str, ok: bool, value: f64, tolerance: f64, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        value,
        tolerance,
        detail: detail.into(),
    }
}

fn skipped(name: &str, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        status: CheckStatus::Skipped,
        value: f64::NAN,
        tolerance: f64::NAN,
        detail: detail.into(),
    }
}

/// Evenly strided subset of `0..n` of size at most `cap`.
fn strided(n: usize, cap: usize) -> Vec<usize> {
    let step = n.div_ceil(cap).max(1);
    (0..n).step_by(step).collect()
}

fn finite(z: num_complex::Complex64, what: &str) -> Result<()> {
    if z.re.is_finite() && z.im.is_finite() {
        Ok(())
    } else {
        Err(Error::ModelEvaluation(format!("{what} returned a non-finite value")))
    }
}

/// Sample points: all nodes plus the midpoints between them.
fn sample_points(grid: &TorusGrid) -> Vec<Point> {
    (0..grid.len())
        .flat_map(|i| [grid.node(i), half_shifted(grid, i)])
        .collect()
}

fn measure_check(spec: &ModelSpec, grid: &TorusGrid) -> CheckResult {
    let mut unscaled = spec.clone();
    unscaled.rate_scale = 1.0;
    match unscaled.nu.resolve(grid) {
        Ok(atoms) => {
            let total: f64 = atoms.iter().map(|a| a.weight).sum();
            let dev = (total - 1.0).abs();
            result("nu_normalization", dev <= NU_NORMALIZATION_TOL, dev, NU_NORMALIZATION_TOL, "|Σw - 1|")
        }
        Err(e) => result("nu_normalization", false, f64::NAN, NU_NORMALIZATION_TOL, e.to_string()),
    }
}

fn quantum_checks(spec: &ModelSpec, grid: &TorusGrid, atoms: &[ResolvedAtom]) -> Result<Vec<CheckResult>> {
    let kernel = spec.kernel().expect("quantum model");
    let points = sample_points(grid);
    let atom_ids = strided(atoms.len(), 64);
    let mut out = Vec::new();

    // Rates: M_θ(k,k) must be real and nonnegative.
    let mut min_rate = f64::INFINITY;
    let mut max_imag: f64 = 0.0;
    for &a in &atom_ids {
        for k in &points {
            let r = kernel.eval(&atoms[a], k, k);
            finite(r, "kernel")?;
            min_rate = min_rate.min(r.re);
            max_imag = max_imag.max(r.im.abs());
        }
    }
    out.push(result(
        "rate_nonnegativity",
        min_rate >= -RATE_TOL && max_imag <= RATE_TOL,
        min_rate,
        RATE_TOL,
        format!("min M(k,k) = {min_rate:e}, max |Im M(k,k)| = {max_imag:e}"),
    ));

    // Hermiticity and the Cauchy-Schwarz bound over node pairs.
    let pts = strided(points.len(), 48);
    let mut herm: f64 = 0.0;
    let mut cs: f64 = 0.0;
    for &a in &atom_ids {
        let atom = &atoms[a];
        for &i in &pts {
            for &j in &pts {
                let (k1, k2) = (&points[i], &points[j]);
                let m12 = kernel.eval(atom, k1, k2);
                let m21 = kernel.eval(atom, k2, k1);
                finite(m12, "kernel")?;
                herm = herm.max((m12 - m21.conj()).norm());
                let bound = kernel.eval(atom, k1, k1).re.max(0.0) * kernel.eval(atom, k2, k2).re.max(0.0);
                cs = cs.max(m12.norm_sqr() - bound);
            }
        }
    }
    out.push(result("kernel_hermiticity", herm <= HERMITIAN_TOL, herm, HERMITIAN_TOL, "max |M(k1,k2) - conj M(k2,k1)|"));
    out.push(result(
        "kernel_cauchy_schwarz",
        cs <= HERMITIAN_TOL,
        cs,
        HERMITIAN_TOL,
        "max |M(k1,k2)|² - M(k1,k1) M(k2,k2)",
    ));

    // Analytic derivatives against central differences.
    let probe = atoms[atom_ids[0]];
    if kernel.jet(&probe, &points[0], &points[0]).is_some() {
        let fd = fd_derivatives(kernel.clone(), DERIVATIVE_STEP, spec.dim)?;
        let mut dev: f64 = 0.0;
        for &a in atom_ids.iter().take(8) {
            for &i in strided(points.len(), 16).iter() {
                for &j in strided(points.len(), 16).iter() {
                    let (k1, k2) = (&points[i], &points[j]);
                    let exact = kernel.jet(&atoms[a], k1, k2).expect("jet");
                    let approx = fd.jet(&atoms[a], k1, k2);
                    finite(exact.value, "kernel jet")?;
                    dev = dev.max(exact.max_abs_diff(&approx) / exact.value.norm().max(1.0));
                }
            }
        }
        out.push(result(
            "derivative_consistency",
            dev <= DERIVATIVE_TOL,
            dev,
            DERIVATIVE_TOL,
            format!("analytic vs central differences at h = {DERIVATIVE_STEP}"),
        ));
    } else {
        out.push(skipped("derivative_consistency", "no analytic derivatives supplied"));
    }
    Ok(out)
}

fn classical_checks(spec: &ModelSpec, grid: &TorusGrid) -> Result<Vec<CheckResult>> {
    let c = spec.classical().expect("classical model");
    let sites = c.validate(spec.dim)?;
    let mut min_rate = f64::INFINITY;
    let mut worst_law: f64 = 0.0;
    for k in sample_points(grid) {
        let l = c.lambda(&k);
        if !l.is_finite() {
            return Err(Error::ModelEvaluation("classical rate is not finite".into()));
        }
        min_rate = min_rate.min(l);
        let p = c.jump_probabilities(&sites, &k);
        let total: f64 = p.iter().sum();
        let neg = p.iter().copied().fold(0.0, f64::min);
        worst_law = worst_law.max((total - 1.0).abs()).max(-neg);
    }
    Ok(vec![
        result("rate_nonnegativity", min_rate >= -RATE_TOL, min_rate, RATE_TOL, "min λ(k)"),
        result("jump_law_normalization", worst_law <= 1e-12, worst_law, 1e-12, "π(·|k) is a probability"),
    ])
}

fn symmetry_checks(spec: &ModelSpec, grid: &TorusGrid) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let report = crate::perturbation::transport_coefficients(spec, grid);
    if spec.symmetry.v_symmetric {
        let both = report.as_ref().map_err(|e| e.to_string()).and_then(|r| {
            crate::perturbation::sigma_symmetric_formula(spec, grid)
                .map(|s| (r.sigma.clone(), s.sigma))
                .map_err(|e| e.to_string())
        });
        match both {
            Ok((a, b)) => {
                let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-12);
                let score = (&a - &b).iter().map(|x| x.abs()).fold(0.0, f64::max) / scale;
                out.push(result(
                    "v_symmetry_consistency",
                    score <= SYMMETRY_TOL,
                    score,
                    SYMMETRY_TOL,
                    "relative gap between the general and the symmetric σ formulas",
                ));
            }
            Err(e) => out.push(skipped("v_symmetry_consistency", format!("not evaluable: {e}"))),
        }
    }
    if spec.symmetry.u_symmetric {
        match &report {
            Ok(r) => {
                let drift = r.v.iter().map(|x| x.abs()).fold(0.0, f64::max);
                out.push(result("u_symmetry_drift", drift <= DRIFT_TOL, drift, DRIFT_TOL, "max |v|"));
            }
            Err(e) => out.push(skipped("u_symmetry_drift", format!("not evaluable: {e}"))),
        }
    }
    out
}

/// Run all admissibility checks. Non-finite callback values abort with
/// [`Error::ModelEvaluation`]; everything else is reported per check.
pub fn validate_model(spec: &ModelSpec, grid: &TorusGrid) -> Result<ValidationReport> {
    let mut checks = vec![measure_check(spec, grid)];
    if checks[0].status == CheckStatus::Pass {
        let atoms = spec.atoms(grid)?;
        match spec.kinetic_mode() {
            KineticMode::Quantum => checks.extend(quantum_checks(spec, grid, &atoms)?),
            KineticMode::Classical => checks.extend(classical_checks(spec, grid)?),
        }
        for k in sample_points(grid) {
            if !spec.dispersion.value(&k).is_finite() {
                return Err(Error::ModelEvaluation("dispersion returned a non-finite value".into()));
            }
        }
        if checks.iter().all(|c| c.status != CheckStatus::Fail) {
            checks.extend(symmetry_checks(spec, grid));
        }
    }
    let passed = checks.iter().all(|c| c.status != CheckStatus::Fail);
    Ok(ValidationReport {
        model: spec.name.clone(),
        checks,
        passed,
    })
}
