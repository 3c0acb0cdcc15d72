//! Second-order expansion of the fiber eigenvalue around `p = 0`.
//!
//! With `L_p = A + Σ_i p_i T1_i + Σ_ij p_i p_j T2_ij + O(p³)` the eigenvalue
//! continuing from 0 is
//!
//! ```text
//! D_p = (p, <1, T1 P>) + (p, <1, (T2 + T1 S T1) P> p) + O(p³)
//!     = i (p, v) - ½ (p, σ p) + O(p³)
//! ```
//!
//! where `S = (-A)⁻¹` on the complement of the stationary direction.

use ndarray::{Array1, Array2, OwnedRepr};
use ndarray_linalg::{Eigh, Factorize, LUFactorized, Solve, UPLO};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::{null_space, vec_norm2, CMatrix, I, ONE, ZERO};
use crate::model::{KineticMode, ModelSpec};
use crate::torus::{integrate, pairing, GridFunction, TorusGrid, MAX_DIM};
use crate::zero_fiber::{model_stationary, GridOperator, StationaryReport};

/// Largest imaginary part silently discarded from `v` and `σ`.
pub const IMAG_TOL: f64 = 1e-8;
/// Relative residual accepted from the deflated solve.
pub const RESOLVENT_TOL: f64 = 1e-10;

/// `S = (-A)⁻¹(1 - P₀)` with `P₀ = |𝒫⟩⟨1|`, by one LU factorization of the
/// deflated matrix `-A + 𝒫 ⟨1|`.
pub struct ReducedResolvent {
    grid: TorusGrid,
    a: CMatrix,
    p: Array1<Complex64>,
    lu: LUFactorized<OwnedRepr<Complex64>>,
}

impl ReducedResolvent {
    pub fn new(a: &GridOperator, p: &GridFunction) -> Result<Self> {
        a.grid.check(&p.grid)?;
        let w = a.grid.weight();
        let n = a.grid.len();
        let mut b = a.matrix.mapv(|z| -z);
        for i in 0..n {
            for j in 0..n {
                b[[i, j]] += p.values[i] * w;
            }
        }
        let lu = b
            .factorize()
            .map_err(|e| Error::SolveFailed(format!("deflated matrix is singular: {e}")))?;
        Ok(ReducedResolvent {
            grid: a.grid,
            a: a.matrix.clone(),
            p: p.values.clone(),
            lu,
        })
    }

    /// `x` with `(-A) x = y - 𝒫 ⟨1, y⟩` and `⟨1, x⟩ = 0`.
    pub fn solve(&self, y: &GridFunction) -> Result<GridFunction> {
        self.grid.check(&y.grid)?;
        let mass = y.values.sum() * self.grid.weight();
        let rhs = &y.values - &self.p.mapv(|z| z * mass);
        let x = self.lu.solve(&rhs).map_err(|e| Error::SolveFailed(e.to_string()))?;
        let res = vec_norm2(&(&self.a.dot(&x).mapv(|z| -z) - &rhs));
        let scale = vec_norm2(&y.values).max(f64::MIN_POSITIVE);
        if !(res <= RESOLVENT_TOL * scale) && res > 1e-14 {
            return Err(Error::SolveFailed(format!(
                "residual {res:e} exceeds {:e}",
                RESOLVENT_TOL * scale
            )));
        }
        Ok(GridFunction {
            grid: self.grid,
            values: x,
        })
    }
}

/// One-shot deflated solve; see [`ReducedResolvent`].
pub fn reduced_resolvent_solve(a: &GridOperator, p: &GridFunction, y: &GridFunction) -> Result<GridFunction> {
    ReducedResolvent::new(a, p)?.solve(y)
}

fn sym(x: &[[Complex64; MAX_DIM]; MAX_DIM], i: usize, j: usize) -> Complex64 {
    0.5 * (x[i][j] + x[j][i])
}

/// First-order coefficients `T1_i = ∂_{p_i} L_p |_{p=0}`.
pub fn build_t1(spec: &ModelSpec, grid: &TorusGrid) -> Result<Vec<GridOperator>> {
    let d = spec.dim;
    let atoms = spec.atoms(grid)?;
    let mut ops = vec![GridOperator::zeros(*grid); d];
    match spec.kinetic_mode() {
        KineticMode::Quantum => {
            for j in 0..grid.len() {
                let k = grid.node(j);
                let g = spec.dispersion.gradient(&k);
                for (i, op) in ops.iter_mut().enumerate() {
                    op.matrix[[j, j]] += I * g[i];
                }
                for atom in &atoms {
                    let jet = spec.jet(atom, &k, &k)?;
                    let t = grid.shift(j, &atom.offset);
                    for (i, op) in ops.iter_mut().enumerate() {
                        op.matrix[[t, j]] += 0.5 * atom.weight * (jet.d2[i] - jet.d1[i]);
                    }
                }
            }
        }
        KineticMode::Classical => {
            let c = spec.classical().expect("classical");
            let sites = c.validate(d)?;
            for j in 0..grid.len() {
                let k = grid.node(j);
                let h = spec.dispersion.value(&k);
                let lam = c.lambda(&k);
                let pi = c.jump_probabilities(&sites, &k);
                for (i, op) in ops.iter_mut().enumerate() {
                    op.matrix[[j, j]] += I * (2.0 * h);
                    let mean_z: f64 = sites.iter().zip(&pi).map(|(z, q)| z[i] as f64 * q).sum();
                    for atom in &atoms {
                        let t = grid.shift(j, &atom.offset);
                        op.matrix[[t, j]] += I * (atom.weight * lam * mean_z);
                    }
                }
            }
        }
    }
    Ok(ops)
}

/// Second-order coefficients: `L_p = A + p·T1 + Σ p_i p_j T2_ij + O(p³)`,
/// with `T2` symmetric in `(i, j)`.
pub fn build_t2(spec: &ModelSpec, grid: &TorusGrid) -> Result<Vec<Vec<GridOperator>>> {
    let d = spec.dim;
    let atoms = spec.atoms(grid)?;
    let mut ops = vec![vec![GridOperator::zeros(*grid); d]; d];
    match spec.kinetic_mode() {
        KineticMode::Quantum => {
            for j in 0..grid.len() {
                let k = grid.node(j);
                for atom in &atoms {
                    let jet = spec.jet(atom, &k, &k)?;
                    let t = grid.shift(j, &atom.offset);
                    let w = atom.weight;
                    for (a, row) in ops.iter_mut().enumerate() {
                        for (b, op) in row.iter_mut().enumerate() {
                            let y = sym(&jet.h11, a, b) + sym(&jet.h22, a, b);
                            let x = sym(&jet.h12, a, b);
                            // Gain expands M(k - p/2, k + p/2), loss the two diagonal
                            // rates at k ∓ p/2.
                            op.matrix[[t, j]] += w * 0.125 * (y - 2.0 * x);
                            op.matrix[[j, j]] -= w * 0.125 * (y + 2.0 * x);
                        }
                    }
                }
            }
        }
        KineticMode::Classical => {
            let c = spec.classical().expect("classical");
            let sites = c.validate(d)?;
            for j in 0..grid.len() {
                let k = grid.node(j);
                let lam = c.lambda(&k);
                let pi = c.jump_probabilities(&sites, &k);
                for (a, row) in ops.iter_mut().enumerate() {
                    for (b, op) in row.iter_mut().enumerate() {
                        let m2: f64 = sites
                            .iter()
                            .zip(&pi)
                            .map(|(z, q)| (z[a] * z[b]) as f64 * q)
                            .sum();
                        for atom in &atoms {
                            let t = grid.shift(j, &atom.offset);
                            op.matrix[[t, j]] -= Complex64::new(0.5 * atom.weight * lam * m2, 0.0);
                        }
                    }
                }
            }
        }
    }
    Ok(ops)
}

/// `ζ = u - ⟨u, 𝒫⟩` for the velocity observable `u` (`∇H` in quantum mode).
pub fn zeta(spec: &ModelSpec, grid: &TorusGrid, p: &GridFunction) -> Result<Vec<GridFunction>> {
    (0..spec.dim)
        .map(|i| {
            let u = grid.sample_real(|k| spec.velocity(k)[i]);
            let mean = integrate(grid, &u.mul(p)?)?;
            Ok(grid.sample_real(|k| spec.velocity(k)[i] - mean.re))
        })
        .collect()
}

fn green_kubo_with(z: &[GridFunction], p: &GridFunction, s: &ReducedResolvent) -> Result<Array2<f64>> {
    let d = z.len();
    let mut raw = Array2::<f64>::zeros((d, d));
    let solved: Vec<GridFunction> = z
        .iter()
        .map(|zj| s.solve(&zj.mul(p)?))
        .collect::<Result<_>>()?;
    for i in 0..d {
        for j in 0..d {
            raw[[i, j]] = pairing(&z[i], &solved[j])?.re;
        }
    }
    Ok(Array2::from_shape_fn((d, d), |(i, j)| 0.5 * (raw[[i, j]] + raw[[j, i]])))
}

/// `α(i,j) = ½[⟨ζ_i, S(ζ_j 𝒫)⟩ + ⟨ζ_j, S(ζ_i 𝒫)⟩]`.
pub fn green_kubo_spectral(spec: &ModelSpec, grid: &TorusGrid) -> Result<Array2<f64>> {
    let (a, st) = model_stationary(spec, grid)?;
    let s = ReducedResolvent::new(&a, &st.p)?;
    green_kubo_with(&zeta(spec, grid, &st.p)?, &st.p, &s)
}

/// Transport coefficients and diagnostics.
#[derive(Clone, Debug)]
pub struct DiffusionReport {
    pub v: Vec<f64>,
    pub beta: Array2<Complex64>,
    pub sigma: Array2<f64>,
    pub alpha: Array2<f64>,
    pub gap: f64,
    /// Largest imaginary part dropped from `v` and `σ`.
    pub imag_residual: f64,
    pub stationary_residual: f64,
    /// Relative gap to the symmetric-case formula when the model is declared
    /// V-symmetric and the formula is evaluable.
    pub symmetric_formula_residual: Option<f64>,
}

fn mat_json(m: &Array2<f64>) -> Value {
    json!(m.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

impl DiffusionReport {
    pub fn to_json(&self) -> Value {
        let beta: Vec<Vec<[f64; 2]>> = self
            .beta
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|z| [z.re, z.im]).collect())
            .collect();
        json!({
            "v": self.v,
            "beta": beta,
            "sigma": mat_json(&self.sigma),
            "alpha": mat_json(&self.alpha),
            "gap": self.gap,
            "residuals": {
                "imag": self.imag_residual,
                "stationary": self.stationary_residual,
                "symmetric_formula": self.symmetric_formula_residual,
            }
        })
    }
}

/// Everything needed to evaluate the expansion, reusable across calls.
pub struct Expansion {
    pub a: GridOperator,
    pub stationary: StationaryReport,
    pub resolvent: ReducedResolvent,
    pub t1: Vec<GridOperator>,
    pub t2: Vec<Vec<GridOperator>>,
}

impl Expansion {
    pub fn new(spec: &ModelSpec, grid: &TorusGrid) -> Result<Self> {
        let (a, stationary) = model_stationary(spec, grid)?;
        let resolvent = ReducedResolvent::new(&a, &stationary.p)?;
        Ok(Expansion {
            t1: build_t1(spec, grid)?,
            t2: build_t2(spec, grid)?,
            a,
            stationary,
            resolvent,
        })
    }
}

pub fn transport_coefficients(spec: &ModelSpec, grid: &TorusGrid) -> Result<DiffusionReport> {
    let ex = Expansion::new(spec, grid)?;
    let p = &ex.stationary.p;
    let d = spec.dim;
    let one = grid.constant(ONE);

    let t1p: Vec<GridFunction> = ex.t1.iter().map(|t| t.apply(p)).collect::<Result<_>>()?;
    let mut imag: f64 = 0.0;
    let mut v = vec![0.0; d];
    for i in 0..d {
        let z = -I * pairing(&one, &t1p[i])?;
        imag = imag.max(z.im.abs());
        v[i] = z.re;
    }
    let st1p: Vec<GridFunction> = t1p.iter().map(|f| ex.resolvent.solve(f)).collect::<Result<_>>()?;
    let mut beta = Array2::from_elem((d, d), ZERO);
    for i in 0..d {
        for j in 0..d {
            let second = pairing(&one, &ex.t2[i][j].apply(p)?)?;
            let cross = pairing(&one, &ex.t1[i].apply(&st1p[j])?)?;
            beta[[i, j]] = -(second + cross);
        }
    }
    let mut sigma = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let s = beta[[i, j]] + beta[[j, i]];
            imag = imag.max(s.im.abs());
            sigma[[i, j]] = s.re;
        }
    }
    if imag > IMAG_TOL {
        return Err(Error::ImaginaryResidual { value: imag });
    }
    let alpha = green_kubo_with(&zeta(spec, grid, p)?, p, &ex.resolvent)?;
    let symmetric_formula_residual = if spec.symmetry.v_symmetric {
        let noise = noise_diffusion_term(spec, grid, p)?;
        let sym = &noise + &alpha.mapv(|x| 2.0 * x);
        let scale = sigma.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
        Some((&sym - &sigma).iter().map(|x| x.abs()).fold(0.0, f64::max) / scale)
    } else {
        None
    };
    Ok(DiffusionReport {
        v,
        beta,
        sigma,
        alpha,
        gap: ex.stationary.gap,
        imag_residual: imag,
        stationary_residual: ex.stationary.residual,
        symmetric_formula_residual,
    })
}

/// Noise contribution `∫dk μ(k) ∫dν ½[∂₁∂₂M + (∂₁∂₂M)ᵀ](k,k)` to the
/// symmetric-case diffusion matrix, for a density `μ` on the grid.
pub fn noise_diffusion_term(spec: &ModelSpec, grid: &TorusGrid, mu: &GridFunction) -> Result<Array2<f64>> {
    grid.check(&mu.grid)?;
    let d = spec.dim;
    let atoms = spec.atoms(grid)?;
    let mut out = Array2::<f64>::zeros((d, d));
    if spec.kinetic_mode() == KineticMode::Classical {
        return Err(Error::ModeMismatch {
            model: "classical".into(),
            requested: "quantum".into(),
        });
    }
    for j in 0..grid.len() {
        let m = mu.values[j].re * grid.weight();
        if m == 0.0 {
            continue;
        }
        let k = grid.node(j);
        for atom in &atoms {
            let jet = spec.jet(atom, &k, &k)?;
            for a in 0..d {
                for b in 0..d {
                    out[[a, b]] += m * atom.weight * sym(&jet.h12, a, b).re;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SymmetricSigma {
    pub sigma: Array2<f64>,
    pub noise_term: Array2<f64>,
    pub alpha: Array2<f64>,
}

/// Diffusion matrix of a V-symmetric model as noise term plus `2α`.
pub fn sigma_symmetric_formula(spec: &ModelSpec, grid: &TorusGrid) -> Result<SymmetricSigma> {
    if !spec.symmetry.v_symmetric {
        return Err(Error::SymmetryNotDeclared);
    }
    let (a, st) = model_stationary(spec, grid)?;
    let noise_term = noise_diffusion_term(spec, grid, &st.p)?;
    let s = ReducedResolvent::new(&a, &st.p)?;
    let alpha = green_kubo_with(&zeta(spec, grid, &st.p)?, &st.p, &s)?;
    Ok(SymmetricSigma {
        sigma: &noise_term + &alpha.mapv(|x| 2.0 * x),
        noise_term,
        alpha,
    })
}

/// The symmetric-case formula evaluated against an explicit stationary
/// measure `mu` (for models whose generator has a degenerate kernel). The
/// Green-Kubo part needs a simple kernel unless `ζ` vanishes identically.
pub fn sigma_symmetric_with_measure(spec: &ModelSpec, grid: &TorusGrid, mu: &GridFunction) -> Result<SymmetricSigma> {
    if !spec.symmetry.v_symmetric {
        return Err(Error::SymmetryNotDeclared);
    }
    let noise_term = noise_diffusion_term(spec, grid, mu)?;
    let z = zeta(spec, grid, mu)?;
    let zero_zeta = z.iter().all(|f| f.values.iter().all(|x| x.norm() < 1e-14));
    let alpha = if zero_zeta {
        Array2::zeros((spec.dim, spec.dim))
    } else {
        let (a, st) = model_stationary(spec, grid)?;
        let s = ReducedResolvent::new(&a, &st.p)?;
        green_kubo_with(&z, mu, &s)?
    };
    Ok(SymmetricSigma {
        sigma: &noise_term + &alpha.mapv(|x| 2.0 * x),
        noise_term,
        alpha,
    })
}

/// The Hermitian pieces of the form `⟨f, A_𝒫 g⟩_𝒫` restricted to the
/// complement of the constants: `(Ks, Ka)` with `Ks = -Re` (positive
/// semidefinite) and `Ka = Im`.
fn sectorial_forms(a: &GridOperator, p: &GridFunction) -> Result<(CMatrix, CMatrix)> {
    let grid = a.grid;
    let n = grid.len();
    for (i, z) in p.values.iter().enumerate() {
        if !(z.re > 0.0) {
            return Err(Error::DegenerateWeight { node: i });
        }
    }
    let w: Vec<f64> = p.values.iter().map(|z| z.re * grid.weight()).collect();
    // Form matrix Q = conj(A) W, Hermitian and anti-Hermitian parts.
    let q = CMatrix::from_shape_fn((n, n), |(i, j)| a.matrix[[i, j]].conj() * w[j]);
    let qh = q.t().mapv(|z| z.conj());
    let qs = (&q + &qh).mapv(|z| 0.5 * z);
    let qa = (&q - &qh).mapv(|z| z / (2.0 * I));
    let row = CMatrix::from_shape_fn((1, n), |(_, j)| Complex64::new(w[j], 0.0));
    let (b, _) = null_space(&row, 1e-12 * w.iter().cloned().fold(0.0, f64::max))?;
    let bh = b.t().mapv(|z| z.conj());
    let ks = bh.dot(&qs).dot(&b).mapv(|z| -z);
    let ka = bh.dot(&qa).dot(&b);
    Ok((hermitize(&ks), hermitize(&ka)))
}

fn hermitize(m: &CMatrix) -> CMatrix {
    (m + &m.t().mapv(|z| z.conj())).mapv(|z| 0.5 * z)
}

/// Smallest `γ` with `|⟨f, Im A_𝒫 f⟩| ≤ -γ ⟨f, Re A_𝒫 f⟩` on the complement
/// of the constants; `+∞` when the real part has extra kernel directions.
pub fn sectoriality_gamma(a: &GridOperator, p: &GridFunction) -> Result<f64> {
    let (ks, ka) = sectorial_forms(a, p)?;
    let (lam, vecs) = ks.eigh(UPLO::Lower)?;
    let top = lam.iter().cloned().fold(0.0, f64::max);
    let bottom = lam.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(bottom > 1e-12 * top.max(f64::MIN_POSITIVE)) {
        return Ok(f64::INFINITY);
    }
    let inv_sqrt: Vec<f64> = lam.iter().map(|x| 1.0 / x.sqrt()).collect();
    let vh = vecs.t().mapv(|z| z.conj());
    let mut c = vh.dot(&ka).dot(&vecs);
    let m = c.nrows();
    for i in 0..m {
        for j in 0..m {
            c[[i, j]] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let (mu, _) = hermitize(&c).eigh(UPLO::Lower)?;
    Ok(mu.iter().map(|x| x.abs()).fold(0.0, f64::max))
}

/// Largest Rayleigh ratio `|f* Ka f| / f* Ks f` over `samples` random
/// complex vectors; a lower bound for [`sectoriality_gamma`].
pub fn sectoriality_sampled(a: &GridOperator, p: &GridFunction, samples: usize, seed: u64) -> Result<f64> {
    let (ks, ka) = sectorial_forms(a, p)?;
    let m = ks.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..samples {
        let f: Array1<Complex64> =
            (0..m).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let fc = f.mapv(|z| z.conj());
        let num = fc.dot(&ka.dot(&f)).norm();
        let den = fc.dot(&ks.dot(&f)).re;
        if den > 0.0 {
            best = best.max(num / den);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_model;
    use crate::torus::make_grid;
    use crate::zero_fiber::build_generator;
    use serde_json::json;
    use std::f64::consts::PI;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn resolvent_on_identity_noise() {
        let g = make_grid(1, 32).unwrap();
        let m = builtin_model("identity-noise", &json!({})).unwrap();
        let (a, st) = model_stationary(&m, &g).unwrap();
        let y = g.sample_real(|k| k[0].sin() + 0.3 * (2.0 * k[0]).cos());
        let x = reduced_resolvent_solve(&a, &st.p, &y).unwrap();
        assert!(x.max_abs_diff(&y) < 1e-12);
        let x0 = reduced_resolvent_solve(&a, &st.p, &st.p).unwrap();
        assert!(x0.values.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn resolvent_defining_identity() {
        let g = make_grid(1, 24).unwrap();
        let m = builtin_model("mult-kraus", &json!({})).unwrap();
        let (a, st) = model_stationary(&m, &g).unwrap();
        let y = g.sample_real(|k| (k[0] + 0.4).exp().cos());
        let x = reduced_resolvent_solve(&a, &st.p, &y).unwrap();
        let lhs = a.apply(&x).unwrap().scale(c(-1.0));
        let mass = integrate(&g, &y).unwrap();
        let rhs = GridFunction {
            grid: g,
            values: &y.values - &st.p.values.mapv(|z| z * mass),
        };
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        assert!(integrate(&g, &x).unwrap().norm() < 1e-12);
    }

    #[test]
    fn identity_noise_coefficients() {
        let g = make_grid(1, 64).unwrap();
        let m = builtin_model("identity-noise", &json!({})).unwrap();
        let t1 = build_t1(&m, &g).unwrap();
        for i in 0..g.len() {
            for j in 0..g.len() {
                let expected = if i == j { I * g.node(i)[0].sin() } else { ZERO };
                assert!((t1[0].matrix[[i, j]] - expected).norm() < 1e-15);
            }
        }
        let t2 = build_t2(&m, &g).unwrap();
        assert!(t2[0][0].matrix.iter().all(|z| z.norm() == 0.0));
        let r = transport_coefficients(&m, &g).unwrap();
        assert!(r.v[0].abs() < 1e-12);
        assert!((r.sigma[[0, 0]] - 1.0).abs() < 1e-10);
        assert!((r.alpha[[0, 0]] - 0.5).abs() < 1e-10);
        assert!((r.gap - 1.0).abs() < 1e-10);
        assert!(r.symmetric_formula_residual.unwrap() < 1e-10);
    }

    #[test]
    fn constant_band_has_no_green_kubo_part() {
        let g = make_grid(1, 16).unwrap();
        let m = builtin_model("mult-kraus", &json!({"dispersion": "zero"})).unwrap();
        let alpha = green_kubo_spectral(&m, &g).unwrap();
        assert_eq!(alpha[[0, 0]], 0.0);
    }

    #[test]
    fn coscos_noise_term_against_explicit_measure() {
        let g = make_grid(1, 64).unwrap();
        let m = builtin_model("coscos", &json!({"dispersion": "zero", "r_hat": 0.75})).unwrap();
        let (ip, _) = g.nearest_node(&[PI / 2.0, 0.0]);
        let (im, _) = g.nearest_node(&[-PI / 2.0, 0.0]);
        let mut mu = g.constant(ZERO);
        mu.values[ip] = c(0.5 / g.weight());
        mu.values[im] = c(0.5 / g.weight());
        let s = sigma_symmetric_with_measure(&m, &g, &mu).unwrap();
        assert!((s.sigma[[0, 0]] - 4.0 * 0.75).abs() < 1e-12);
        assert!(matches!(transport_coefficients(&m, &g), Err(Error::NonSimpleKernel { kernel_dim: 2, .. })));
    }

    #[test]
    fn symmetric_formula_requires_flag() {
        let g = make_grid(1, 16).unwrap();
        let m = builtin_model("mult-kraus", &json!({"u": [{"c": [1.0, 0.0], "n": [0]}, {"c": [0.0, 0.5], "n": [1]}]})).unwrap();
        assert!(matches!(sigma_symmetric_formula(&m, &g), Err(Error::SymmetryNotDeclared)));
        // The two routes agree only up to the spectrally small grid error.
        let g = make_grid(1, 48).unwrap();
        let declared = builtin_model("mult-kraus", &json!({})).unwrap();
        let s = sigma_symmetric_formula(&declared, &g).unwrap();
        let r = transport_coefficients(&declared, &g).unwrap();
        assert!((s.sigma[[0, 0]] - r.sigma[[0, 0]]).abs() < 1e-10);
    }

    #[test]
    fn sectoriality_of_identity_noise() {
        let g = make_grid(1, 16).unwrap();
        let m = builtin_model("identity-noise", &json!({})).unwrap();
        let a = build_generator(&m, &g).unwrap();
        let st = crate::zero_fiber::stationary(&a).unwrap();
        assert!(sectoriality_gamma(&a, &st.p).unwrap() < 1e-12);
    }

    #[test]
    fn sectoriality_bound_dominates_samples() {
        let g = make_grid(1, 16).unwrap();
        let m = builtin_model("mult-kraus", &json!({})).unwrap();
        let a = build_generator(&m, &g).unwrap();
        let st = crate::zero_fiber::stationary(&a).unwrap();
        let gamma = sectoriality_gamma(&a, &st.p).unwrap();
        let sampled = sectoriality_sampled(&a, &st.p, 200, 7).unwrap();
        assert!(gamma.is_finite());
        assert!(sampled <= gamma * (1.0 + 1e-10));
        assert!(sampled > 0.2 * gamma);
    }

    #[test]
    fn degenerate_weight_is_reported() {
        let g = make_grid(1, 8).unwrap();
        let m = builtin_model("identity-noise", &json!({})).unwrap();
        let a = build_generator(&m, &g).unwrap();
        let mut p = g.constant(c(1.0 / (2.0 * PI)));
        p.values[3] = ZERO;
        assert!(matches!(sectoriality_gamma(&a, &p), Err(Error::DegenerateWeight { node: 3 })));
    }
}
