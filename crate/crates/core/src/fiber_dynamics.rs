//! Fiber generators `L_p`, their semigroups, and what can be read off them:
//! characteristic functions, finite-time moments and the leading eigenvalue
//! `D_p` near `p = 0`.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::{eig_sorted, expm, CMatrix, I, ONE, ZERO};
use crate::model::{KineticMode, ModelSpec};
use crate::torus::{fiber_of_rank_one, integrate, GridFunction, Point, RankOneTerm, TorusGrid, MAX_DIM};
use crate::zero_fiber::{model_stationary, GridOperator};

/// Smallest eigenvector overlap accepted when following `D_p` from 0.
pub const MIN_BRANCH_OVERLAP: f64 = 0.5;
pub const MAX_STENCIL_RADIUS: f64 = 0.2;
/// Relative tolerance of the finite-difference moments; the stencil is
/// rejected when the Richardson error estimate exceeds ten times this.
pub const MOMENT_TOL: f64 = 1e-3;

fn point(p: &[f64]) -> Result<Point> {
    if p.len() > MAX_DIM || p.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad fiber momentum {p:?}")));
    }
    let mut out = [0.0; MAX_DIM];
    out[..p.len()].copy_from_slice(p);
    Ok(out)
}

fn check_mode(spec: &ModelSpec, mode: KineticMode) -> Result<()> {
    if spec.kinetic_mode() != mode {
        return Err(Error::ModeMismatch {
            model: spec.kinetic_mode().as_str().into(),
            requested: mode.as_str().into(),
        });
    }
    Ok(())
}

/// Assemble `L_p`. Only kernel values are used, evaluated at the
/// half-shifted momenta `k ± p/2`.
pub fn build_fiber_generator(spec: &ModelSpec, grid: &TorusGrid, p: &[f64], mode: KineticMode) -> Result<GridOperator> {
    check_mode(spec, mode)?;
    if p.len() != spec.dim || grid.dim() != spec.dim {
        return Err(Error::InvalidArgument(format!(
            "fiber momentum has {} components, model dimension is {}",
            p.len(),
            spec.dim
        )));
    }
    let p = point(p)?;
    let d = spec.dim;
    let atoms = spec.atoms(grid)?;
    let mut op = GridOperator::zeros(*grid);
    match mode {
        KineticMode::Quantum => {
            for j in 0..grid.len() {
                let k = grid.node(j);
                let (mut lo, mut hi) = (k, k);
                for a in 0..d {
                    lo[a] -= 0.5 * p[a];
                    hi[a] += 0.5 * p[a];
                }
                let h = spec.dispersion.value(&lo) - spec.dispersion.value(&hi);
                let mut diag = -I * h;
                for atom in &atoms {
                    let gain = spec.kernel_value(atom, &lo, &hi);
                    let loss = spec.kernel_value(atom, &lo, &lo).re + spec.kernel_value(atom, &hi, &hi).re;
                    op.matrix[[grid.shift(j, &atom.offset), j]] += atom.weight * gain;
                    diag -= Complex64::new(0.5 * atom.weight * loss, 0.0);
                }
                op.matrix[[j, j]] += diag;
            }
        }
        KineticMode::Classical => {
            let c = spec.classical().expect("classical model");
            let sites = c.validate(d)?;
            for j in 0..grid.len() {
                let k = grid.node(j);
                let h = spec.dispersion.value(&k);
                let lam = c.lambda(&k);
                let pi = c.jump_probabilities(&sites, &k);
                let phase: Complex64 = sites
                    .iter()
                    .zip(&pi)
                    .map(|(z, q)| {
                        let dot: f64 = (0..d).map(|a| p[a] * z[a] as f64).sum();
                        Complex64::from_polar(*q, dot)
                    })
                    .sum();
                let kinetic: f64 = (0..d).map(|a| p[a].sin()).sum::<f64>() * 2.0 * h;
                let mut diag = I * kinetic;
                for atom in &atoms {
                    op.matrix[[grid.shift(j, &atom.offset), j]] += atom.weight * lam * phase;
                    diag -= Complex64::new(atom.weight * lam, 0.0);
                }
                op.matrix[[j, j]] += diag;
            }
        }
    }
    if op.matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::ModelEvaluation("fiber generator has non-finite entries".into()));
    }
    Ok(op)
}

/// A fiber at time `t`.
#[derive(Clone, Debug)]
pub struct FiberState {
    pub p: Vec<f64>,
    pub f: GridFunction,
    pub t: f64,
}

/// `e^{t L_p} f₀`.
pub fn evolve_fiber(lp: &GridOperator, f0: &GridFunction, t: f64) -> Result<GridFunction> {
    lp.grid.check(&f0.grid)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be finite and nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(f0.clone());
    }
    let e = expm(&lp.matrix.mapv(|z| z * t))?;
    let values = e.dot(&f0.values);
    if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NumericalBlowup("evolved fiber is not finite".into()));
    }
    Ok(GridFunction { grid: lp.grid, values })
}

/// Propagator `e^{t L_p}` for repeated use on several initial fibers.
pub fn fiber_propagator(lp: &GridOperator, t: f64) -> Result<CMatrix> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be finite and nonnegative, got {t}")));
    }
    expm(&lp.matrix.mapv(|z| z * t))
}

/// A family of initial fibers `p ↦ [ρ₀]_p`.
pub trait FiberFamily: Send + Sync {
    fn fiber(&self, p: &[f64], grid: &TorusGrid) -> Result<GridFunction>;
}

/// Fibers of the position eigenstate `|δ₀⟩⟨δ₀|`.
#[derive(Clone, Copy, Debug, Default)]
pub struct DeltaFibers;

impl FiberFamily for DeltaFibers {
    fn fiber(&self, _p: &[f64], grid: &TorusGrid) -> Result<GridFunction> {
        let c = (2.0 * std::f64::consts::PI).powi(-(grid.dim() as i32));
        Ok(grid.constant(Complex64::new(c, 0.0)))
    }
}

pub fn delta_initial_fibers(_grid: &TorusGrid) -> DeltaFibers {
    DeltaFibers
}

/// Fibers of a finite-rank initial state.
#[derive(Clone, Debug)]
pub struct RankOneFibers {
    pub terms: Vec<RankOneTerm>,
}

impl RankOneFibers {
    pub fn new(terms: Vec<RankOneTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::EmptyOperator);
        }
        Ok(RankOneFibers { terms })
    }
}

impl FiberFamily for RankOneFibers {
    fn fiber(&self, p: &[f64], grid: &TorusGrid) -> Result<GridFunction> {
        fiber_of_rank_one(&self.terms, &point(p)?, grid)
    }
}

/// Fibers handed over explicitly: one function used for every `p`. Useful
/// for states that are flat in `p` up to the resolution of interest, such
/// as a stationary-momentum state.
#[derive(Clone, Debug)]
pub struct ConstantFibers(pub GridFunction);

impl FiberFamily for ConstantFibers {
    fn fiber(&self, _p: &[f64], grid: &TorusGrid) -> Result<GridFunction> {
        grid.check(&self.0.grid)?;
        Ok(self.0.clone())
    }
}

/// `⟨1, e^{t L_p} [ρ₀]_p⟩ = Tr[ρ_t e^{i p·X}]`.
pub fn fiber_trace(spec: &ModelSpec, grid: &TorusGrid, init: &dyn FiberFamily, t: f64, p: &[f64]) -> Result<Complex64> {
    let f0 = init.fiber(p, grid)?;
    if p.iter().all(|&x| x == 0.0) {
        // Trace preservation makes the zero fiber time independent.
        return integrate(grid, &f0);
    }
    let lp = build_fiber_generator(spec, grid, p, spec.kinetic_mode())?;
    integrate(grid, &evolve_fiber(&lp, &f0, t)?)
}

/// Characteristic function of `(X_t - v t)/√t` at `γ`.
pub fn characteristic_function(
    spec: &ModelSpec,
    grid: &TorusGrid,
    init: &dyn FiberFamily,
    t: f64,
    gamma: &[f64],
    v: &[f64],
) -> Result<Complex64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be positive, got {t}")));
    }
    if gamma.len() != spec.dim || v.len() != spec.dim {
        return Err(Error::InvalidArgument("γ and v must have the model dimension".into()));
    }
    let st = t.sqrt();
    let p: Vec<f64> = gamma.iter().map(|g| g / st).collect();
    let drift: f64 = gamma.iter().zip(v).map(|(g, u)| g * u).sum::<f64>() * st;
    Ok(Complex64::from_polar(1.0, -drift) * fiber_trace(spec, grid, init, t, &p)?)
}

/// The eigenvalue of `L_p` continuing from 0 and the overlap of its
/// eigenvector with `𝒫`.
pub fn fiber_eigenvalue(spec: &ModelSpec, grid: &TorusGrid, p: &[f64], stationary: &GridFunction) -> Result<(Complex64, f64)> {
    let lp = build_fiber_generator(spec, grid, p, spec.kinetic_mode())?;
    let (vals, vecs) = eig_sorted(&lp.matrix)?;
    let pn = stationary.values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut best = (0usize, -1.0);
    for (c, col) in vecs.columns().into_iter().enumerate() {
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let dot: Complex64 = col.iter().zip(&stationary.values).map(|(a, b)| a.conj() * b).sum();
        let overlap = dot.norm() / (norm * pn);
        if overlap > best.1 {
            best = (c, overlap);
        }
    }
    if best.1 < MIN_BRANCH_OVERLAP {
        return Err(Error::BranchTrackingFailed {
            p: p.to_vec(),
            overlap: best.1,
        });
    }
    Ok((vals[best.0], best.1))
}

#[derive(Clone, Debug)]
pub struct QuadraticResponse {
    pub v_fit: Vec<f64>,
    pub sigma_fit: Array2<f64>,
    /// `max |D_p - i(p,v) + ½(p,σp)| / |p|²` over the stencil.
    pub fit_residual: f64,
    /// Smallest eigenvector overlap met while tracking the branch.
    pub min_overlap: f64,
    /// Largest `Re D_p` on the stencil.
    pub max_real_part: f64,
}

impl QuadraticResponse {
    pub fn to_json(&self) -> Value {
        json!({
            "v_fit": self.v_fit,
            "sigma_fit": self.sigma_fit.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
            "fit_residual": self.fit_residual,
            "min_overlap": self.min_overlap,
            "max_real_part": self.max_real_part,
        })
    }
}

/// Unit directions of the stencil: the axes and, for `d = 2`, the two
/// diagonals.
fn stencil_directions(d: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        dirs.push(e);
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..d {
        for j in i + 1..d {
            for sign in [1.0, -1.0] {
                let mut e = vec![0.0; d];
                e[i] = s;
                e[j] = sign * s;
                dirs.push(e);
            }
        }
    }
    dirs
}

/// Solve the normal equations of a small least-squares problem.
fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = rows[0].len();
    let mut ata = Array2::<f64>::zeros((m, m));
    let mut atb = vec![0.0; m];
    for (r, &b) in rows.iter().zip(rhs) {
        for i in 0..m {
            atb[i] += r[i] * b;
            for j in 0..m {
                ata[[i, j]] += r[i] * r[j];
            }
        }
    }
    use ndarray_linalg::Solve;
    let x = ata
        .solve(&ndarray::Array1::from(atb))
        .map_err(|e| Error::SolveFailed(format!("stencil fit: {e}")))?;
    Ok(x.to_vec())
}

/// Fit `D_p ≈ i(p,v) - ½(p,σp)` from eigenvalues on
/// `{±r n, ±(r/2) n}` for the stencil directions `n`. Odd and even parts
/// along each direction are Richardson-combined across the two radii
/// before the fit.
pub fn quadratic_response(spec: &ModelSpec, grid: &TorusGrid, mode: KineticMode, radius: f64) -> Result<QuadraticResponse> {
    check_mode(spec, mode)?;
    if !(radius > 0.0 && radius <= MAX_STENCIL_RADIUS) {
        return Err(Error::InvalidArgument(format!(
            "stencil radius must lie in (0, {MAX_STENCIL_RADIUS}], got {radius}"
        )));
    }
    let (_, st) = model_stationary(spec, grid)?;
    let d = spec.dim;
    let dirs = stencil_directions(d);
    let mut points: Vec<Vec<f64>> = Vec::new();
    for n in &dirs {
        for s in [radius, -radius, 0.5 * radius, -0.5 * radius] {
            points.push(n.iter().map(|x| s * x).collect());
        }
    }
    let evals: Vec<(Complex64, f64)> = points
        .par_iter()
        .map(|p| fiber_eigenvalue(spec, grid, p, &st.p))
        .collect::<Result<_>>()?;

    let (mut v_rows, mut v_rhs, mut s_rows, mut s_rhs) = (vec![], vec![], vec![], vec![]);
    for (n, e) in dirs.iter().zip(evals.chunks(4)) {
        let (dp, dm, hp, hm) = (e[0].0, e[1].0, e[2].0, e[3].0);
        let odd = |a: Complex64, b: Complex64| 0.5 * (a - b);
        let even = |a: Complex64, b: Complex64| 0.5 * (a + b);
        let a_n = (8.0 * odd(hp, hm) - odd(dp, dm)) / (3.0 * I * radius);
        let q_n = -(16.0 * even(hp, hm) - even(dp, dm)) / (1.5 * radius * radius);
        v_rows.push(n.clone());
        v_rhs.push(a_n.re);
        let mut row = Vec::new();
        for i in 0..d {
            for j in i..d {
                row.push(if i == j { n[i] * n[i] } else { 2.0 * n[i] * n[j] });
            }
        }
        s_rows.push(row);
        s_rhs.push(q_n.re);
    }
    let v_fit = least_squares(&v_rows, &v_rhs)?;
    let packed = least_squares(&s_rows, &s_rhs)?;
    let mut sigma_fit = Array2::<f64>::zeros((d, d));
    let mut c = 0;
    for i in 0..d {
        for j in i..d {
            sigma_fit[[i, j]] = packed[c];
            sigma_fit[[j, i]] = packed[c];
            c += 1;
        }
    }
    let mut fit_residual: f64 = 0.0;
    for (p, (dp, _)) in points.iter().zip(&evals) {
        let pv: f64 = p.iter().zip(&v_fit).map(|(a, b)| a * b).sum();
        let mut psp = 0.0;
        for i in 0..d {
            for j in 0..d {
                psp += p[i] * sigma_fit[[i, j]] * p[j];
            }
        }
        let model = I * pv - Complex64::new(0.5 * psp, 0.0);
        let p2: f64 = p.iter().map(|x| x * x).sum();
        fit_residual = fit_residual.max((dp - model).norm() / p2);
    }
    Ok(QuadraticResponse {
        v_fit,
        sigma_fit,
        fit_residual,
        min_overlap: evals.iter().map(|e| e.1).fold(1.0, f64::min),
        max_real_part: evals.iter().map(|e| e.0.re).fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Clone, Debug)]
pub struct Moments {
    pub t: f64,
    pub mean: Vec<f64>,
    pub cov: Array2<f64>,
    /// Richardson estimate of the remaining stencil error.
    pub stencil_error: f64,
}

fn shifted(d: usize, terms: &[(usize, f64)]) -> Vec<f64> {
    let mut p = vec![0.0; d];
    for &(i, s) in terms {
        p[i] += s;
    }
    p
}

/// Mean and covariance from central differences of `ψ(p) = Tr[ρ_t e^{ip·X}]`
/// at `p = 0` with step `h`.
fn moments_at_step(spec: &ModelSpec, grid: &TorusGrid, init: &dyn FiberFamily, t: f64, h: f64) -> Result<(Vec<f64>, Array2<f64>)> {
    let d = spec.dim;
    let mut stencil: Vec<Vec<f64>> = vec![vec![0.0; d]];
    for i in 0..d {
        stencil.push(shifted(d, &[(i, h)]));
        stencil.push(shifted(d, &[(i, -h)]));
    }
    for i in 0..d {
        for j in i + 1..d {
            for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                stencil.push(shifted(d, &[(i, a * h), (j, b * h)]));
            }
        }
    }
    let psi: Vec<Complex64> = stencil
        .par_iter()
        .map(|p| fiber_trace(spec, grid, init, t, p))
        .collect::<Result<_>>()?;
    let psi0 = psi[0];
    let mut first = vec![ZERO; d];
    let mut second = Array2::from_elem((d, d), ZERO);
    for i in 0..d {
        let (plus, minus) = (psi[1 + 2 * i], psi[2 + 2 * i]);
        first[i] = (plus - minus) / (2.0 * h);
        second[[i, i]] = (plus - 2.0 * psi0 + minus) / (h * h);
    }
    let mut c = 1 + 2 * d;
    for i in 0..d {
        for j in i + 1..d {
            let (pp, pm, mp, mm) = (psi[c], psi[c + 1], psi[c + 2], psi[c + 3]);
            c += 4;
            let m = (pp - pm - mp + mm) / (4.0 * h * h);
            second[[i, j]] = m;
            second[[j, i]] = m;
        }
    }
    // ψ = E[e^{ip·X}]: mean = -i∂ψ, second moment = -∂²ψ.
    let mean: Vec<f64> = first.iter().map(|z| (-I * z / psi0).re).collect();
    let cov = Array2::from_shape_fn((d, d), |(i, j)| (-second[[i, j]] / psi0).re - mean[i] * mean[j]);
    Ok((mean, cov))
}

/// Finite-time mean and covariance of the position, Richardson-extrapolated
/// from steps `eps` and `eps/2`.
pub fn finite_time_moments(spec: &ModelSpec, grid: &TorusGrid, init: &dyn FiberFamily, t: f64, eps: f64) -> Result<Moments> {
    if !(1e-4..=1e-1).contains(&eps) {
        return Err(Error::InvalidArgument(format!("stencil step must lie in [1e-4, 1e-1], got {eps}")));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be finite and nonnegative, got {t}")));
    }
    let d = spec.dim;
    if t == 0.0 {
        // Only the initial state enters; no generator is needed.
        let (mean, cov) = moments_at_step(spec, grid, init, 0.0, eps)?;
        return Ok(Moments { t, mean, cov, stencil_error: 0.0 });
    }
    let (m1, c1) = moments_at_step(spec, grid, init, t, eps)?;
    let (m2, c2) = moments_at_step(spec, grid, init, t, 0.5 * eps)?;
    let mean: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
    let cov = Array2::from_shape_fn((d, d), |(i, j)| (4.0 * c2[[i, j]] - c1[[i, j]]) / 3.0);
    let mut err: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for i in 0..d {
        err = err.max((m1[i] - m2[i]).abs() / 3.0);
        scale = scale.max(mean[i].abs());
        for j in 0..d {
            err = err.max((c1[[i, j]] - c2[[i, j]]).abs() / 3.0);
            scale = scale.max(cov[[i, j]].abs());
        }
    }
    let limit = 10.0 * MOMENT_TOL * scale;
    if err > limit {
        return Err(Error::StencilError {
            discrepancy: err,
            limit,
        });
    }
    Ok(Moments {
        t,
        mean,
        cov,
        stencil_error: err,
    })
}

/// `sup_γ |φ_t(γ) - e^{-½(γ,σγ)}|` over the given `γ` values along each
/// coordinate axis.
pub fn gaussian_distance(
    spec: &ModelSpec,
    grid: &TorusGrid,
    init: &dyn FiberFamily,
    t: f64,
    gammas: &[f64],
    v: &[f64],
    sigma: &Array2<f64>,
) -> Result<f64> {
    let d = spec.dim;
    let mut probes = Vec::new();
    for &g in gammas {
        for i in 0..d {
            probes.push(shifted(d, &[(i, g)]));
        }
    }
    let dist: Vec<f64> = probes
        .par_iter()
        .map(|gamma| {
            let phi = characteristic_function(spec, grid, init, t, gamma, v)?;
            let mut q = 0.0;
            for i in 0..d {
                for j in 0..d {
                    q += gamma[i] * sigma[[i, j]] * gamma[j];
                }
            }
            Ok((phi - ONE * (-0.5 * q).exp()).norm())
        })
        .collect::<Result<_>>()?;
    Ok(dist.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_model;
    use crate::perturbation::transport_coefficients;
    use crate::torus::make_grid;
    use crate::zero_fiber::build_generator;
    use serde_json::json;

    fn identity() -> ModelSpec {
        builtin_model("identity-noise", &json!({})).unwrap()
    }

    #[test]
    fn zero_fiber_matches_generator() {
        let g = make_grid(2, 8).unwrap();
        for name in ["identity-noise", "mult-kraus"] {
            let m = builtin_model(name, &json!({"dim": 2})).unwrap();
            let l0 = build_fiber_generator(&m, &g, &[0.0, 0.0], KineticMode::Quantum).unwrap();
            let a = build_generator(&m, &g).unwrap();
            let diff = (&l0.matrix - &a.matrix).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(diff <= 1e-13, "{name}: {diff}");
        }
        let m = builtin_model("classical-jump", &json!({"dim": 2, "rate_mod": 0.4})).unwrap();
        let l0 = build_fiber_generator(&m, &g, &[0.0, 0.0], KineticMode::Classical).unwrap();
        let a = build_generator(&m, &g).unwrap();
        assert!((&l0.matrix - &a.matrix).iter().all(|z| z.norm() <= 1e-13));
    }

    #[test]
    fn identity_noise_fiber_closed_form() {
        let n = 16;
        let g = make_grid(1, n).unwrap();
        let p = 0.37;
        let l = build_fiber_generator(&identity(), &g, &[p], KineticMode::Quantum).unwrap();
        for i in 0..n {
            for j in 0..n {
                let mut expected = Complex64::new(1.0 / n as f64, 0.0);
                if i == j {
                    expected += I * (2.0 * (p / 2.0).sin() * g.node(i)[0].sin()) - 1.0;
                }
                assert!((l.matrix[[i, j]] - expected).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn mode_is_checked() {
        let g = make_grid(1, 8).unwrap();
        assert!(matches!(
            build_fiber_generator(&identity(), &g, &[0.1], KineticMode::Classical),
            Err(Error::ModeMismatch { .. })
        ));
    }

    #[test]
    fn evolution_basics() {
        let g = make_grid(1, 24).unwrap();
        let m = builtin_model("mult-kraus", &json!({})).unwrap();
        let (a, st) = model_stationary(&m, &g).unwrap();
        let f0 = g.sample_real(|k| (1.0 + 0.5 * k[0].sin()) / (2.0 * std::f64::consts::PI));
        assert_eq!(evolve_fiber(&a, &f0, 0.0).unwrap(), f0);
        for t in [0.5, 3.0, 20.0] {
            let ft = evolve_fiber(&a, &st.p, t).unwrap();
            assert!(ft.max_abs_diff(&st.p) < 1e-10);
            let mass = integrate(&g, &evolve_fiber(&a, &f0, t).unwrap()).unwrap();
            assert!((mass - ONE).norm() < 1e-10);
        }
    }

    fn decay_rate(m: &ModelSpec, g: &TorusGrid) -> (f64, f64) {
        let (a, st) = model_stationary(m, g).unwrap();
        let f0 = g.sample_real(|k| (1.0 + 0.9 * k[0].cos()) / (2.0 * std::f64::consts::PI));
        let dist = |t: f64| {
            let ft = evolve_fiber(&a, &f0, t).unwrap();
            GridFunction { grid: *g, values: &ft.values - &st.p.values }.l1_norm()
        };
        ((dist(5.0) / dist(10.0)).ln() / 5.0, st.gap)
    }

    #[test]
    fn relaxation_rate_is_the_gap() {
        let g = make_grid(1, 24).unwrap();
        let (rate, gap) = decay_rate(&identity(), &g);
        assert!((rate - gap).abs() <= 0.1 * gap, "rate {rate} gap {gap}");
        // A band of slow modes: the gap only bounds the decay from below.
        let m = builtin_model("mult-kraus", &json!({})).unwrap();
        let (rate, gap) = decay_rate(&m, &g);
        assert!(rate >= 0.9 * gap, "rate {rate} gap {gap}");
    }

    #[test]
    fn delta_family() {
        let g = make_grid(1, 16).unwrap();
        let fam = delta_initial_fibers(&g);
        let f = fam.fiber(&[0.3], &g).unwrap();
        let other = fiber_of_rank_one(&[RankOneTerm::pure(vec![([0, 0], ONE)])], &[0.3, 0.0], &g).unwrap();
        assert!(f.max_abs_diff(&other) <= 1e-14);
        assert!((integrate(&g, &fam.fiber(&[0.0], &g).unwrap()).unwrap() - ONE).norm() < 1e-14);
    }

    #[test]
    fn characteristic_function_limits() {
        let g = make_grid(1, 32).unwrap();
        let m = identity();
        let fam = DeltaFibers;
        assert_eq!(characteristic_function(&m, &g, &fam, 10.0, &[0.0], &[0.0]).unwrap(), ONE);
        let tiny = characteristic_function(&m, &g, &fam, 1e-12, &[1e-9], &[0.0]).unwrap();
        assert!((tiny - ONE).norm() < 1e-9);
        let phi = characteristic_function(&m, &g, &fam, 50.0, &[0.8], &[0.0]).unwrap();
        let back = characteristic_function(&m, &g, &fam, 50.0, &[-0.8], &[0.0]).unwrap();
        assert!((phi - back.conj()).norm() < 1e-10);
        assert!(phi.norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn quadratic_response_identity_noise() {
        let g = make_grid(1, 64).unwrap();
        let q = quadratic_response(&identity(), &g, KineticMode::Quantum, 0.1).unwrap();
        assert!(q.v_fit[0].abs() < 1e-8);
        assert!((q.sigma_fit[[0, 0]] - 1.0).abs() < 1e-4);
        let q2 = quadratic_response(&identity(), &g, KineticMode::Quantum, 0.05).unwrap();
        assert!(q2.fit_residual < q.fit_residual);
        assert!(quadratic_response(&identity(), &g, KineticMode::Quantum, 0.3).is_err());
    }

    #[test]
    fn quadratic_response_matches_transport_on_mult_kraus() {
        let g = make_grid(1, 48).unwrap();
        let m = builtin_model("mult-kraus", &json!({})).unwrap();
        let q = quadratic_response(&m, &g, KineticMode::Quantum, 0.1).unwrap();
        let r = transport_coefficients(&m, &g).unwrap();
        let s = r.sigma[[0, 0]];
        assert!((q.sigma_fit[[0, 0]] - s).abs() <= 1e-4 * s.abs(), "{} vs {s}", q.sigma_fit[[0, 0]]);
        // v vanishes here, so compare on the scale of σ.
        assert!((q.v_fit[0] - r.v[0]).abs() <= 1e-4 * r.v[0].abs().max(s));
    }

    #[test]
    fn moments_at_time_zero_vanish() {
        let g = make_grid(1, 16).unwrap();
        let mo = finite_time_moments(&identity(), &g, &DeltaFibers, 0.0, 0.01).unwrap();
        assert!(mo.mean[0].abs() < 1e-12);
        assert!(mo.cov[[0, 0]].abs() < 1e-9);
    }
}
