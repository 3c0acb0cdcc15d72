//! The zero-fiber Markov generator `A`, its stationary density and gap.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{eig_sorted, norm1, null_space, CMatrix};
use crate::model::ModelSpec;
use crate::torus::{integrate, GridFunction, TorusGrid};

/// Relative threshold (times `‖A‖₁`) below which an eigenvalue counts as 0.
pub const KERNEL_TOL: f64 = 1e-9;
/// Most negative value tolerated in the stationary density.
pub const STATIONARY_NEG_TOL: f64 = 1e-8;
/// Rates in `(-RATE_CLAMP, 0)` are rounding noise and are set to 0.
const RATE_CLAMP: f64 = 1e-13;

/// A dense operator on grid functions. Off-diagonal gain entries already
/// carry the `ν` weights, so a matrix-vector product discretizes the
/// integral operator.
#[derive(Clone, Debug, PartialEq)]
pub struct GridOperator {
    pub grid: TorusGrid,
    pub matrix: CMatrix,
}

impl GridOperator {
    pub fn zeros(grid: TorusGrid) -> Self {
        let n = grid.len();
        GridOperator {
            grid,
            matrix: Array2::zeros((n, n)),
        }
    }

    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        self.grid.check(&f.grid)?;
        Ok(GridFunction {
            grid: self.grid,
            values: self.matrix.dot(&f.values),
        })
    }

    /// Column sums `1ᵀ A`.
    pub fn column_sums(&self) -> Array1<Complex64> {
        self.matrix.sum_axis(ndarray::Axis(0))
    }
}

/// Outgoing jumps of every node: `(target, rate)` pairs with the `ν` weight
/// included, and the total escape rate.
#[derive(Clone, Debug)]
pub struct TransitionRates {
    pub grid: TorusGrid,
    pub jumps: Vec<Vec<(usize, f64)>>,
    pub total: Vec<f64>,
}

/// Tabulate `w_θ r(k+θ, k)` for all nodes and atoms.
pub fn transition_rates(spec: &ModelSpec, grid: &TorusGrid) -> Result<TransitionRates> {
    let atoms = spec.atoms(grid)?;
    let mut jumps = Vec::with_capacity(grid.len());
    let mut total = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let k = grid.node(j);
        let mut out = Vec::with_capacity(atoms.len());
        let mut sum = 0.0;
        for atom in &atoms {
            let mut r = spec.zero_rate(atom, &k);
            if !r.is_finite() {
                return Err(Error::ModelEvaluation(format!("rate at node {j} is not finite")));
            }
            if r < 0.0 {
                if r > -RATE_CLAMP {
                    r = 0.0;
                } else {
                    return Err(Error::NegativeRate {
                        rate: r,
                        node: j,
                        atom: atom.index,
                    });
                }
            }
            let w = atom.weight * r;
            if w > 0.0 {
                out.push((grid.shift(j, &atom.offset), w));
                sum += w;
            }
        }
        jumps.push(out);
        total.push(sum);
    }
    Ok(TransitionRates {
        grid: *grid,
        jumps,
        total,
    })
}

/// Assemble `A`: gain `w_θ r(k+θ, k)` from `k` into `k+θ` and the matching
/// loss on the diagonal, so every column sums to zero.
pub fn build_generator(spec: &ModelSpec, grid: &TorusGrid) -> Result<GridOperator> {
    let rates = transition_rates(spec, grid)?;
    Ok(generator_from_rates(&rates))
}

pub fn generator_from_rates(rates: &TransitionRates) -> GridOperator {
    let mut op = GridOperator::zeros(rates.grid);
    for (j, out) in rates.jumps.iter().enumerate() {
        for &(t, w) in out {
            op.matrix[[t, j]] += w;
        }
        op.matrix[[j, j]] -= rates.total[j];
    }
    op
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenSummary {
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Debug)]
pub struct StationaryReport {
    pub p: GridFunction,
    pub gap: f64,
    pub kernel_dim: usize,
    /// `‖A 𝒫‖₁` in the discrete `L¹` norm.
    pub residual: f64,
    /// All eigenvalues, sorted by decreasing real part.
    pub spectrum: Vec<Complex64>,
}

impl StationaryReport {
    pub fn spectrum_summary(&self) -> Vec<EigenSummary> {
        self.spectrum
            .iter()
            .map(|z| EigenSummary { re: z.re, im: z.im })
            .collect()
    }
}

fn kernel_threshold(a: &GridOperator) -> f64 {
    KERNEL_TOL * norm1(&a.matrix).max(f64::MIN_POSITIVE)
}

/// Stationary density, kernel dimension and gap from a full
/// eigen-decomposition.
pub fn stationary(a: &GridOperator) -> Result<StationaryReport> {
    let grid = a.grid;
    let tol = kernel_threshold(a);
    let (vals, vecs) = eig_sorted(&a.matrix)?;
    let kernel: Vec<usize> = (0..vals.len()).filter(|&i| vals[i].norm() <= tol).collect();
    if kernel.len() != 1 {
        // Report an orthonormal basis of the numerical null space.
        let (basis, _) = null_space(&a.matrix, tol)?;
        let basis = if basis.ncols() == kernel.len() {
            basis
        } else {
            vecs.select(ndarray::Axis(1), &kernel)
        };
        let residuals = basis
            .columns()
            .into_iter()
            .map(|c| {
                let r = a.matrix.dot(&c);
                r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
            })
            .collect();
        return Err(Error::NonSimpleKernel {
            kernel_dim: kernel.len(),
            vectors: basis,
            residuals,
        });
    }
    let i0 = kernel[0];
    let v = vecs.column(i0).to_owned();
    let sum: Complex64 = v.sum();
    if sum.norm() == 0.0 {
        return Err(Error::NonPositiveStationary { min: 0.0 });
    }
    // Rotate the global phase so the total mass is real and positive, then
    // normalize to unit integral.
    let scale = Complex64::new(1.0, 0.0) / (sum * grid.weight());
    let values: Array1<Complex64> = v.mapv(|z| z * scale);
    let min = values.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    if min < -STATIONARY_NEG_TOL {
        return Err(Error::NonPositiveStationary { min });
    }
    let p = GridFunction {
        grid,
        values: values.mapv(|z| Complex64::new(z.re, 0.0)),
    };
    let ap = a.apply(&p)?;
    let residual = ap.l1_norm();
    let spectrum: Vec<Complex64> = vals.to_vec();
    let gap = -spectrum
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != i0)
        .map(|(_, z)| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let gap = if gap.is_finite() { gap } else { 0.0 };
    debug_assert!((integrate(&grid, &p)?.re - 1.0).abs() < 1e-9);
    Ok(StationaryReport {
        p,
        gap,
        kernel_dim: 1,
        residual,
        spectrum,
    })
}

/// `b_A = -sup Re(spec(A) \ {0})`.
pub fn spectral_gap(a: &GridOperator) -> Result<f64> {
    Ok(stationary(a)?.gap)
}

/// Stationary density of a model, built from scratch.
pub fn model_stationary(spec: &ModelSpec, grid: &TorusGrid) -> Result<(GridOperator, StationaryReport)> {
    let a = build_generator(spec, grid)?;
    let rep = stationary(&a)?;
    Ok((a, rep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_model;
    use crate::torus::make_grid;
    use serde_json::json;
    use std::f64::consts::PI;

    fn identity() -> ModelSpec {
        builtin_model("identity-noise", &json!({})).unwrap()
    }

    #[test]
    fn identity_generator_by_hand() {
        let g = make_grid(1, 8).unwrap();
        let a = build_generator(&identity(), &g).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let expected = 1.0 / 8.0 - if i == j { 1.0 } else { 0.0 };
                assert!((a.matrix[[i, j]] - Complex64::new(expected, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn identity_stationary_and_gap() {
        let g = make_grid(1, 64).unwrap();
        let a = build_generator(&identity(), &g).unwrap();
        let rep = stationary(&a).unwrap();
        assert_eq!(rep.kernel_dim, 1);
        assert!((rep.gap - 1.0).abs() < 1e-10);
        assert!(rep.p.values.iter().all(|z| (z.re - 1.0 / (2.0 * PI)).abs() < 1e-12));
        assert!(rep.residual < 1e-12);
    }

    #[test]
    fn mult_kraus_stationary_closed_form() {
        let g = make_grid(1, 64).unwrap();
        let m = builtin_model("mult-kraus", &json!({})).unwrap();
        let a = build_generator(&m, &g).unwrap();
        let rep = stationary(&a).unwrap();
        let c = 3.0 / (8.0 * PI);
        let exact = g.sample_real(|k| c / (1.25 + k[0].cos()));
        assert!(rep.p.max_abs_diff(&exact) < 1e-10);
        assert!(rep.gap > 0.0);
    }

    #[test]
    fn column_sums_vanish() {
        let g = make_grid(2, 8).unwrap();
        for name in ["identity-noise", "mult-kraus", "classical-jump"] {
            let m = builtin_model(name, &json!({"dim": 2})).unwrap();
            let a = build_generator(&m, &g).unwrap();
            assert!(a.column_sums().iter().all(|z| z.norm() < 1e-13), "{name}");
        }
    }

    #[test]
    fn coscos_has_degenerate_kernel() {
        let g = make_grid(1, 64).unwrap();
        let m = builtin_model("coscos", &json!({})).unwrap();
        let a = build_generator(&m, &g).unwrap();
        for k in [PI / 2.0, -PI / 2.0] {
            let (i, exact) = g.nearest_node(&[k, 0.0]);
            assert!(exact);
            assert!(a.matrix[[i, i]].norm() < 1e-30);
        }
        match stationary(&a) {
            Err(Error::NonSimpleKernel {
                kernel_dim,
                residuals,
                vectors,
            }) => {
                assert_eq!(kernel_dim, 2);
                assert_eq!(vectors.ncols(), 2);
                assert!(residuals.iter().all(|&r| r <= 1e-10));
            }
            other => panic!("expected NonSimpleKernel, got {other:?}"),
        }
    }

    #[test]
    fn negative_rates_are_rejected() {
        let g = make_grid(1, 8).unwrap();
        let m = ModelSpec::custom(
            "signed",
            1,
            std::sync::Arc::new(crate::model::TrigDispersion::zero()),
            crate::model::JumpMeasure::Uniform,
            |_, k1, k2| Complex64::new((0.5 * (k1[0] + k2[0])).cos(), 0.0),
        );
        assert!(matches!(build_generator(&m, &g), Err(Error::NegativeRate { .. })));
    }
}
