//! Translation-covariant noise models.
//!
//! A model is a band function `H`, a jump measure `ν` on grid offsets and,
//! in the quantum case, a kernel `M_θ(k₁, k₂)` of multiplication maps. In
//! the classical case the kernel is replaced by momentum-jump rates with a
//! position-jump law attached to every event.

mod kernels;
mod validate;
pub mod zoo;

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{Point, Site, TorusGrid, MAX_DIM};

pub use kernels::{
    fd_derivatives, AtomTable, ConstantKernel, CosCosKernel, DerivativeSet, Dispersion, FnKernel,
    KernelJet, KrausKernel, KrausTerm, NoiseKernel, TrigDispersion, TrigKind, TrigTerm,
};
pub use validate::{validate_model, CheckResult, CheckStatus, ValidationReport};
pub use zoo::{builtin_model, model_from_json, ModelDocument};

/// Tolerance on `Σ w = 1`.
pub const NU_NORMALIZATION_TOL: f64 = 1e-12;

/// One atom of `ν`: a lattice offset of grid indices and its weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub offset: Vec<i64>,
    pub weight: f64,
}

/// The jump measure, restricted to grid atoms so that shifts permute nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JumpMeasure {
    /// Equal weight on every grid offset.
    Uniform,
    Atoms(Vec<Atom>),
}

/// An atom of `ν` resolved against a grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolvedAtom {
    /// Position in the resolved list; per-atom tables are indexed by it.
    pub index: usize,
    pub offset: Site,
    /// The momentum transfer, wrapped into `(-π, π]`.
    pub theta: Point,
    pub weight: f64,
}

pub(crate) fn site_from_slice(v: &[i64], dim: usize) -> Result<Site> {
    if v.len() != dim {
        return Err(Error::InvalidParams(format!(
            "offset {v:?} does not have {dim} components"
        )));
    }
    let mut s = [0; MAX_DIM];
    s[..dim].copy_from_slice(v);
    Ok(s)
}

impl JumpMeasure {
    /// Resolve into atoms with exact offsets. Weights must be nonnegative and
    /// sum to one.
    pub fn resolve(&self, grid: &TorusGrid) -> Result<Vec<ResolvedAtom>> {
        let atoms: Vec<ResolvedAtom> = match self {
            JumpMeasure::Uniform => {
                let len = grid.len();
                let w = 1.0 / len as f64;
                (0..len)
                    .map(|i| {
                        let offset = grid.index_to_site(i);
                        ResolvedAtom {
                            index: i,
                            offset,
                            theta: grid.offset_momentum(&offset),
                            weight: w,
                        }
                    })
                    .collect()
            }
            JumpMeasure::Atoms(list) => {
                if list.is_empty() {
                    return Err(Error::InvalidParams("jump measure has no atoms".into()));
                }
                let mut out = Vec::with_capacity(list.len());
                for (i, a) in list.iter().enumerate() {
                    if !(a.weight >= 0.0) || !a.weight.is_finite() {
                        return Err(Error::InvalidParams(format!(
                            "atom {i} has invalid weight {}",
                            a.weight
                        )));
                    }
                    let offset = site_from_slice(&a.offset, grid.dim())?;
                    out.push(ResolvedAtom {
                        index: i,
                        offset,
                        theta: grid.offset_momentum(&offset),
                        weight: a.weight,
                    });
                }
                out
            }
        };
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > NU_NORMALIZATION_TOL {
            return Err(Error::InvalidParams(format!(
                "jump measure weights sum to {total}, not 1"
            )));
        }
        Ok(atoms)
    }
}

/// Quantize a density on the torus to grid atoms by midpoint weights
/// `w_θ ∝ ρ(θ)`, normalized to a probability measure.
pub fn quantize_density<F>(grid: &TorusGrid, density: F) -> Result<JumpMeasure>
where
    F: Fn(&Point) -> f64,
{
    let mut atoms = Vec::with_capacity(grid.len());
    let mut total = 0.0;
    for i in 0..grid.len() {
        let offset = grid.index_to_site(i);
        let theta = grid.offset_momentum(&offset);
        let w = density(&theta) * grid.weight();
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidParams(format!(
                "density is negative or non-finite at θ = {theta:?}"
            )));
        }
        total += w;
        atoms.push((offset, w));
    }
    if !(total > 0.0) {
        return Err(Error::InvalidParams("density integrates to zero".into()));
    }
    let dim = grid.dim();
    Ok(JumpMeasure::Atoms(
        atoms
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(o, w)| Atom {
                offset: o[..dim].to_vec(),
                weight: w / total,
            })
            .collect(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KineticMode {
    Quantum,
    Classical,
}

impl KineticMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            KineticMode::Quantum => "quantum",
            KineticMode::Classical => "classical",
        }
    }
}

/// User-declared symmetries of the dynamics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetryFlags {
    #[serde(default)]
    pub u_symmetric: bool,
    #[serde(default)]
    pub v_symmetric: bool,
}

/// Jump rates of the classical analogue.
///
/// A momentum jump `k → k+θ` happens at rate `w_θ λ(k)` with
/// `λ(k) = rate (1 + rate_mod cos k₁)`; each jump also moves the particle by
/// a lattice vector `z` drawn from `π(z|k) ∝ 1 + bias s(z) sin k₁`, where
/// `s(z)` is the sign of the first nonzero component of `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalJumps {
    pub rate: f64,
    #[serde(default)]
    pub rate_mod: f64,
    #[serde(default)]
    pub bias: f64,
    pub jumps: Vec<Vec<i64>>,
}

fn first_sign(z: &Site) -> f64 {
    z.iter()
        .find(|&&c| c != 0)
        .map_or(0.0, |&c| (c as f64).signum())
}

impl ClassicalJumps {
    pub fn validate(&self, dim: usize) -> Result<Vec<Site>> {
        if !(self.rate > 0.0) || !self.rate.is_finite() {
            return Err(Error::InvalidParams("classical rate must be positive".into()));
        }
        if !(self.rate_mod.abs() <= 1.0) {
            return Err(Error::InvalidParams("|rate_mod| must not exceed 1".into()));
        }
        if !(self.bias.abs() <= 1.0) {
            return Err(Error::InvalidParams("|bias| must not exceed 1".into()));
        }
        if self.jumps.is_empty() {
            return Err(Error::InvalidParams("position-jump support is empty".into()));
        }
        let sites: Vec<Site> = self
            .jumps
            .iter()
            .map(|z| site_from_slice(z, dim))
            .collect::<Result<_>>()?;
        let balance: f64 = sites.iter().map(first_sign).sum();
        let neutral = sites.iter().filter(|z| first_sign(z) == 0.0).count();
        if balance != 0.0 && neutral == 0 && self.bias.abs() >= 1.0 {
            return Err(Error::InvalidParams(
                "unbalanced jump support requires |bias| < 1".into(),
            ));
        }
        Ok(sites)
    }

    /// Momentum-jump intensity `λ(k)` before the `ν` weight.
    pub fn lambda(&self, k: &Point) -> f64 {
        self.rate * (1.0 + self.rate_mod * k[0].cos())
    }

    /// `π(z|k)` over the jump support, in the order given.
    pub fn jump_probabilities(&self, sites: &[Site], k: &Point) -> Vec<f64> {
        let s = k[0].sin();
        let raw: Vec<f64> = sites
            .iter()
            .map(|z| (1.0 + self.bias * first_sign(z) * s).max(0.0))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    }
}

#[derive(Clone, Debug)]
pub enum Noise {
    Quantum(Arc<dyn NoiseKernel>),
    Classical(ClassicalJumps),
}

/// Where kernel derivatives come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DerivativeSource {
    Analytic,
    FiniteDifference(f64),
}

/// A complete model description.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    /// `H` in quantum mode, the drift amplitude `h` in classical mode.
    pub dispersion: Arc<dyn Dispersion>,
    pub noise: Noise,
    pub nu: JumpMeasure,
    /// Global factor multiplying all noise rates.
    pub rate_scale: f64,
    pub symmetry: SymmetryFlags,
    pub derivatives: DerivativeSource,
}

impl ModelSpec {
    pub fn kinetic_mode(&self) -> KineticMode {
        match self.noise {
            Noise::Quantum(_) => KineticMode::Quantum,
            Noise::Classical(_) => KineticMode::Classical,
        }
    }

    pub fn kernel(&self) -> Option<&Arc<dyn NoiseKernel>> {
        match &self.noise {
            Noise::Quantum(k) => Some(k),
            Noise::Classical(_) => None,
        }
    }

    pub fn classical(&self) -> Option<&ClassicalJumps> {
        match &self.noise {
            Noise::Classical(c) => Some(c),
            Noise::Quantum(_) => None,
        }
    }

    /// Atoms of `ν` on `grid` with weights multiplied by the rate scale.
    pub fn atoms(&self, grid: &TorusGrid) -> Result<Vec<ResolvedAtom>> {
        if grid.dim() != self.dim {
            return Err(Error::InvalidParams(format!(
                "model is {}-dimensional but grid is {}-dimensional",
                self.dim,
                grid.dim()
            )));
        }
        let mut atoms = self.nu.resolve(grid)?;
        if let Noise::Quantum(k) = &self.noise {
            k.check_atoms(&atoms)?;
        }
        for a in atoms.iter_mut() {
            a.weight *= self.rate_scale;
        }
        Ok(atoms)
    }

    /// The kernel value `M_θ(k₁, k₂)`; zero in classical mode.
    pub fn kernel_value(&self, atom: &ResolvedAtom, k1: &Point, k2: &Point) -> Complex64 {
        match &self.noise {
            Noise::Quantum(k) => k.eval(atom, k1, k2),
            Noise::Classical(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// Zero-fiber rate of the jump `k → k+θ`, before the atom weight.
    pub fn zero_rate(&self, atom: &ResolvedAtom, k: &Point) -> f64 {
        match &self.noise {
            Noise::Quantum(m) => m.eval(atom, k, k).re,
            Noise::Classical(c) => c.lambda(k),
        }
    }

    /// Kernel derivatives at `(k₁, k₂)` from the configured source.
    pub fn jet(&self, atom: &ResolvedAtom, k1: &Point, k2: &Point) -> Result<KernelJet> {
        let kernel = self.kernel().ok_or(Error::DerivativesUnavailable)?;
        match self.derivatives {
            DerivativeSource::Analytic => kernel.jet(atom, k1, k2).ok_or(Error::DerivativesUnavailable),
            DerivativeSource::FiniteDifference(h) => {
                Ok(fd_derivatives(kernel.clone(), h, self.dim)?.jet(atom, k1, k2))
            }
        }
    }

    /// Same model with derivatives synthesized by central differences.
    pub fn with_fd_derivatives(&self, h: f64) -> Result<ModelSpec> {
        if let Some(k) = self.kernel() {
            fd_derivatives(k.clone(), h, self.dim)?;
        }
        let mut m = self.clone();
        m.derivatives = DerivativeSource::FiniteDifference(h);
        Ok(m)
    }

    pub fn with_rate_scale(&self, c: f64) -> ModelSpec {
        let mut m = self.clone();
        m.rate_scale *= c;
        m
    }

    pub fn with_dispersion(&self, h: Arc<dyn Dispersion>) -> ModelSpec {
        let mut m = self.clone();
        m.dispersion = h;
        m
    }

    /// Velocity observable entering the Green-Kubo integral: `∇H` for
    /// quantum models and `2h` per axis for the classical drift term.
    pub fn velocity(&self, k: &Point) -> Point {
        match self.kinetic_mode() {
            KineticMode::Quantum => self.dispersion.gradient(k),
            KineticMode::Classical => {
                let h = self.dispersion.value(k);
                let mut v = [0.0; MAX_DIM];
                for x in v.iter_mut().take(self.dim) {
                    *x = 2.0 * h;
                }
                v
            }
        }
    }

    /// A custom quantum model with a closure kernel and no analytic
    /// derivatives.
    pub fn custom<F>(name: &str, dim: usize, dispersion: Arc<dyn Dispersion>, nu: JumpMeasure, kernel: F) -> ModelSpec
    where
        F: Fn(&ResolvedAtom, &Point, &Point) -> Complex64 + Send + Sync + 'static,
    {
        ModelSpec {
            name: name.to_string(),
            dim,
            dispersion,
            noise: Noise::Quantum(Arc::new(FnKernel::new(kernel))),
            nu,
            rate_scale: 1.0,
            symmetry: SymmetryFlags::default(),
            derivatives: DerivativeSource::FiniteDifference(1e-4),
        }
    }
}

/// Points halfway between grid nodes, used to probe kernels off-grid.
pub(crate) fn half_shifted(grid: &TorusGrid, idx: usize) -> Point {
    let mut k = grid.node(idx);
    for x in k.iter_mut().take(grid.dim()) {
        *x += 0.5 * grid.spacing();
        if *x > PI {
            *x -= 2.0 * PI;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::make_grid;

    #[test]
    fn uniform_measure_resolution() {
        let g = make_grid(1, 8).unwrap();
        let atoms = JumpMeasure::Uniform.resolve(&g).unwrap();
        assert_eq!(atoms.len(), 8);
        assert!(atoms.iter().all(|a| (a.weight - 0.125).abs() < 1e-16));
        assert_eq!(atoms[0].theta[0], 0.0);
        assert!((atoms[4].theta[0] - PI).abs() < 1e-15);
        assert!((atoms[7].theta[0] + PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn atom_measure_checks() {
        let g = make_grid(1, 8).unwrap();
        let bad = JumpMeasure::Atoms(vec![Atom { offset: vec![1], weight: 0.6 }]);
        assert!(bad.resolve(&g).is_err());
        let neg = JumpMeasure::Atoms(vec![
            Atom { offset: vec![1], weight: 1.5 },
            Atom { offset: vec![-1], weight: -0.5 },
        ]);
        assert!(neg.resolve(&g).is_err());
        let wrong_dim = JumpMeasure::Atoms(vec![Atom { offset: vec![1, 0], weight: 1.0 }]);
        assert!(wrong_dim.resolve(&g).is_err());
        let ok = JumpMeasure::Atoms(vec![
            Atom { offset: vec![1], weight: 0.5 },
            Atom { offset: vec![-1], weight: 0.5 },
        ]);
        assert_eq!(ok.resolve(&g).unwrap().len(), 2);
    }

    #[test]
    fn quantized_density_is_normalized() {
        let g = make_grid(1, 16).unwrap();
        let nu = quantize_density(&g, |t| 1.0 + t[0].cos()).unwrap();
        let atoms = nu.resolve(&g).unwrap();
        // The atom at θ = π carries zero mass and is dropped.
        assert_eq!(atoms.len(), 15);
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert!(quantize_density(&g, |t| t[0].cos()).is_err());
    }

    #[test]
    fn classical_jump_law_is_normalized() {
        let c = ClassicalJumps {
            rate: 1.0,
            rate_mod: 0.5,
            bias: 0.8,
            jumps: vec![vec![1], vec![-1]],
        };
        let sites = c.validate(1).unwrap();
        for k in [-2.0, 0.3, 1.5] {
            let p = c.jump_probabilities(&sites, &[k, 0.0]);
            assert!((p[0] - (1.0 + 0.8 * f64::sin(k)) / 2.0).abs() < 1e-15);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        let bad = ClassicalJumps { rate_mod: 1.5, ..c.clone() };
        assert!(bad.validate(1).is_err());
        let lopsided = ClassicalJumps { jumps: vec![vec![1]], bias: 1.0, ..c };
        assert!(lopsided.validate(1).is_err());
    }
}
