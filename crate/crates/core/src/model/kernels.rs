//! Dispersion relations and noise kernels `M_θ(k₁, k₂)`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ResolvedAtom;
use crate::torus::{Point, MAX_DIM};

type C64 = Complex64;
const CZ: C64 = C64 { re: 0.0, im: 0.0 };

/// A smooth real band function `H(k)` with its first two derivatives.
pub trait Dispersion: Send + Sync + fmt::Debug {
    fn value(&self, k: &Point) -> f64;
    fn gradient(&self, k: &Point) -> Point;
    fn hessian(&self, k: &Point) -> [[f64; MAX_DIM]; MAX_DIM];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrigKind {
    Cos,
    Sin,
}

/// `coef · cos(n·k)` or `coef · sin(n·k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub coef: f64,
    pub n: Vec<i64>,
    #[serde(default = "default_kind")]
    pub kind: TrigKind,
}

fn default_kind() -> TrigKind {
    TrigKind::Cos
}

/// A finite trigonometric polynomial.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrigDispersion {
    pub terms: Vec<TrigTerm>,
}

impl TrigDispersion {
    /// `H(k) = -Σ_a cos k_a`.
    pub fn minus_cos(dim: usize) -> Self {
        let terms = (0..dim)
            .map(|a| {
                let mut n = vec![0; dim];
                n[a] = 1;
                TrigTerm {
                    coef: -1.0,
                    n,
                    kind: TrigKind::Cos,
                }
            })
            .collect();
        TrigDispersion { terms }
    }

    pub fn zero() -> Self {
        TrigDispersion { terms: vec![] }
    }

    pub fn constant(c: f64) -> Self {
        TrigDispersion {
            terms: vec![TrigTerm {
                coef: c,
                n: vec![],
                kind: TrigKind::Cos,
            }],
        }
    }

    fn phase(n: &[i64], k: &Point) -> f64 {
        n.iter().zip(k.iter()).map(|(&m, &x)| m as f64 * x).sum()
    }

    fn nvec(n: &[i64]) -> Point {
        let mut v = [0.0; MAX_DIM];
        for (a, &m) in n.iter().take(MAX_DIM).enumerate() {
            v[a] = m as f64;
        }
        v
    }
}

impl Dispersion for TrigDispersion {
    fn value(&self, k: &Point) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let ph = Self::phase(&t.n, k);
                match t.kind {
                    TrigKind::Cos => t.coef * ph.cos(),
                    TrigKind::Sin => t.coef * ph.sin(),
                }
            })
            .sum()
    }

    fn gradient(&self, k: &Point) -> Point {
        let mut g = [0.0; MAX_DIM];
        for t in &self.terms {
            let ph = Self::phase(&t.n, k);
            let d = match t.kind {
                TrigKind::Cos => -t.coef * ph.sin(),
                TrigKind::Sin => t.coef * ph.cos(),
            };
            let n = Self::nvec(&t.n);
            for a in 0..MAX_DIM {
                g[a] += d * n[a];
            }
        }
        g
    }

    fn hessian(&self, k: &Point) -> [[f64; MAX_DIM]; MAX_DIM] {
        let mut h = [[0.0; MAX_DIM]; MAX_DIM];
        for t in &self.terms {
            let ph = Self::phase(&t.n, k);
            let d = match t.kind {
                TrigKind::Cos => -t.coef * ph.cos(),
                TrigKind::Sin => -t.coef * ph.sin(),
            };
            let n = Self::nvec(&t.n);
            for a in 0..MAX_DIM {
                for b in 0..MAX_DIM {
                    h[a][b] += d * n[a] * n[b];
                }
            }
        }
        h
    }
}

/// Value and derivatives of `M_θ` at a point `(k₁, k₂)`.
///
/// `d1[i] = ∂_{1i} M`, `d2[i] = ∂_{2i} M`, `h11[i][j] = ∂_{1i}∂_{1j} M`,
/// `h22` likewise, and `h12[i][j] = ∂_{1i}∂_{2j} M`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KernelJet {
    pub value: C64,
    pub d1: [C64; MAX_DIM],
    pub d2: [C64; MAX_DIM],
    pub h11: [[C64; MAX_DIM]; MAX_DIM],
    pub h22: [[C64; MAX_DIM]; MAX_DIM],
    pub h12: [[C64; MAX_DIM]; MAX_DIM],
}

impl KernelJet {
    pub fn max_abs_diff(&self, other: &KernelJet) -> f64 {
        let mut m = (self.value - other.value).norm();
        for i in 0..MAX_DIM {
            m = m.max((self.d1[i] - other.d1[i]).norm());
            m = m.max((self.d2[i] - other.d2[i]).norm());
            for j in 0..MAX_DIM {
                m = m.max((self.h11[i][j] - other.h11[i][j]).norm());
                m = m.max((self.h22[i][j] - other.h22[i][j]).norm());
                m = m.max((self.h12[i][j] - other.h12[i][j]).norm());
            }
        }
        m
    }
}

/// The multiplication kernel of the completely positive maps `M_θ`.
///
/// Implementations must be valid on the continuum torus, since fiber
/// generators evaluate them at half-shifted points.
pub trait NoiseKernel: Send + Sync + fmt::Debug {
    fn eval(&self, atom: &ResolvedAtom, k1: &Point, k2: &Point) -> C64;

    /// Analytic derivatives, if the kernel knows them.
    fn jet(&self, _atom: &ResolvedAtom, _k1: &Point, _k2: &Point) -> Option<KernelJet> {
        None
    }

    /// Verify that per-atom tables (if any) cover the resolved atoms.
    fn check_atoms(&self, _atoms: &[ResolvedAtom]) -> Result<()> {
        Ok(())
    }
}

/// `M_θ ≡ c`.
#[derive(Clone, Debug)]
pub struct ConstantKernel {
    pub value: f64,
}

impl NoiseKernel for ConstantKernel {
    fn eval(&self, _: &ResolvedAtom, _: &Point, _: &Point) -> C64 {
        C64::new(self.value, 0.0)
    }

    fn jet(&self, _: &ResolvedAtom, _: &Point, _: &Point) -> Option<KernelJet> {
        Some(KernelJet {
            value: C64::new(self.value, 0.0),
            ..KernelJet::default()
        })
    }
}

/// Per-atom nonnegative weight, constant or tabulated by atom index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AtomTable {
    Constant(f64),
    Table(Vec<f64>),
}

impl AtomTable {
    pub fn get(&self, idx: usize) -> f64 {
        match self {
            AtomTable::Constant(c) => *c,
            AtomTable::Table(t) => t[idx],
        }
    }

    fn check(&self, atoms: &[ResolvedAtom], what: &str) -> Result<()> {
        if let AtomTable::Table(t) = self {
            if t.len() != atoms.len() {
                return Err(Error::InvalidParams(format!(
                    "{what} table has {} entries but the measure resolves to {} atoms",
                    t.len(),
                    atoms.len()
                )));
            }
        }
        Ok(())
    }

    fn min(&self) -> f64 {
        match self {
            AtomTable::Constant(c) => *c,
            AtomTable::Table(t) => t.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// `M_θ(k₁,k₂) = 4 r̂(θ) cos k₁ cos k₂` on the one-dimensional torus.
#[derive(Clone, Debug)]
pub struct CosCosKernel {
    pub r_hat: AtomTable,
}

impl CosCosKernel {
    pub fn new(r_hat: AtomTable) -> Result<Self> {
        if !(r_hat.min() >= 0.0) {
            return Err(Error::InvalidParams("r_hat must be nonnegative".into()));
        }
        Ok(CosCosKernel { r_hat })
    }
}

impl NoiseKernel for CosCosKernel {
    fn eval(&self, atom: &ResolvedAtom, k1: &Point, k2: &Point) -> C64 {
        C64::new(4.0 * self.r_hat.get(atom.index) * k1[0].cos() * k2[0].cos(), 0.0)
    }

    fn jet(&self, atom: &ResolvedAtom, k1: &Point, k2: &Point) -> Option<KernelJet> {
        let r = 4.0 * self.r_hat.get(atom.index);
        let (s1, c1) = k1[0].sin_cos();
        let (s2, c2) = k2[0].sin_cos();
        let re = |x: f64| C64::new(x, 0.0);
        let mut j = KernelJet {
            value: re(r * c1 * c2),
            ..KernelJet::default()
        };
        j.d1[0] = re(-r * s1 * c2);
        j.d2[0] = re(-r * c1 * s2);
        j.h11[0][0] = re(-r * c1 * c2);
        j.h22[0][0] = re(-r * c1 * c2);
        j.h12[0][0] = re(r * s1 * s2);
        Some(j)
    }

    fn check_atoms(&self, atoms: &[ResolvedAtom]) -> Result<()> {
        self.r_hat.check(atoms, "r_hat")
    }
}

/// One Fourier mode `c · e^{i(n·k + m·θ)}` of a Kraus multiplier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrausTerm {
    /// Complex coefficient as `[re, im]`.
    pub c: [f64; 2],
    pub n: Vec<i64>,
    #[serde(default)]
    pub m: Vec<i64>,
}

/// `M_θ(k₁,k₂) = Σ_l conj(u_{l,θ}(k₁)) u_{l,θ}(k₂)` with trigonometric
/// multipliers `u_{l,θ}(k) = a_θ Σ_t c_t e^{i(n_t·k + m_t·θ)}`.
///
/// Complete positivity holds by construction.
#[derive(Clone, Debug)]
pub struct KrausKernel {
    pub operators: Vec<Vec<KrausTerm>>,
    /// Optional per-atom amplitude `a_θ`.
    pub amplitude: Option<AtomTable>,
}

impl KrausKernel {
    pub fn new(operators: Vec<Vec<KrausTerm>>, amplitude: Option<AtomTable>) -> Result<Self> {
        if operators.is_empty() || operators.iter().all(|o| o.is_empty()) {
            return Err(Error::InvalidParams("at least one Kraus term is required".into()));
        }
        for t in operators.iter().flatten() {
            if !(t.c[0].is_finite() && t.c[1].is_finite()) {
                return Err(Error::InvalidParams("non-finite Kraus coefficient".into()));
            }
        }
        Ok(KrausKernel {
            operators,
            amplitude,
        })
    }

    /// `u`, `∇u` and `∇²u` of operator `l` at `k`.
    fn u_jet(&self, l: usize, atom: &ResolvedAtom, k: &Point) -> (C64, [C64; 2], [[C64; 2]; 2]) {
        let a = self.amplitude.as_ref().map_or(1.0, |t| t.get(atom.index));
        let mut u = CZ;
        let mut g = [CZ; 2];
        let mut h = [[CZ; 2]; 2];
        for t in &self.operators[l] {
            let mut ph = 0.0;
            let mut n = [0.0; 2];
            for (i, &ni) in t.n.iter().take(MAX_DIM).enumerate() {
                ph += ni as f64 * k[i];
                n[i] = ni as f64;
            }
            for (i, &mi) in t.m.iter().take(MAX_DIM).enumerate() {
                ph += mi as f64 * atom.theta[i];
            }
            let z = C64::new(t.c[0], t.c[1]) * C64::from_polar(a, ph);
            u += z;
            for i in 0..2 {
                g[i] += z * C64::new(0.0, n[i]);
                for j in 0..2 {
                    h[i][j] -= z * n[i] * n[j];
                }
            }
        }
        (u, g, h)
    }
}

impl NoiseKernel for KrausKernel {
    fn eval(&self, atom: &ResolvedAtom, k1: &Point, k2: &Point) -> C64 {
        (0..self.operators.len())
            .map(|l| self.u_jet(l, atom, k1).0.conj() * self.u_jet(l, atom, k2).0)
            .sum()
    }

    fn jet(&self, atom: &ResolvedAtom, k1: &Point, k2: &Point) -> Option<KernelJet> {
        let mut j = KernelJet::default();
        for l in 0..self.operators.len() {
            let (u1, g1, h1) = self.u_jet(l, atom, k1);
            let (u2, g2, h2) = self.u_jet(l, atom, k2);
            let u1c = u1.conj();
            j.value += u1c * u2;
            for a in 0..2 {
                j.d1[a] += g1[a].conj() * u2;
                j.d2[a] += u1c * g2[a];
                for b in 0..2 {
                    j.h11[a][b] += h1[a][b].conj() * u2;
                    j.h22[a][b] += u1c * h2[a][b];
                    j.h12[a][b] += g1[a].conj() * g2[b];
                }
            }
        }
        Some(j)
    }

    fn check_atoms(&self, atoms: &[ResolvedAtom]) -> Result<()> {
        match &self.amplitude {
            Some(t) => t.check(atoms, "amplitude"),
            None => Ok(()),
        }
    }
}

type KernelFn = dyn Fn(&ResolvedAtom, &Point, &Point) -> C64 + Send + Sync;

/// A kernel given by a closure, without analytic derivatives.
///
/// Complete positivity of such a kernel is the caller's responsibility;
/// only pointwise consequences are checked by model validation.
#[derive(Clone)]
pub struct FnKernel {
    f: Arc<KernelFn>,
}

impl FnKernel {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&ResolvedAtom, &Point, &Point) -> C64 + Send + Sync + 'static,
    {
        FnKernel { f: Arc::new(f) }
    }
}

impl fmt::Debug for FnKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnKernel")
    }
}

impl NoiseKernel for FnKernel {
    fn eval(&self, atom: &ResolvedAtom, k1: &Point, k2: &Point) -> C64 {
        (self.f)(atom, k1, k2)
    }
}

/// Central-difference derivatives of an arbitrary kernel.
#[derive(Clone, Debug)]
pub struct DerivativeSet {
    kernel: Arc<dyn NoiseKernel>,
    h: f64,
    dim: usize,
}

/// Synthesize the five derivative families of `kernel` by central
/// differences with step `h`.
pub fn fd_derivatives(kernel: Arc<dyn NoiseKernel>, h: f64, dim: usize) -> Result<DerivativeSet> {
    if !(h > 0.0 && h <= 0.1) {
        return Err(Error::InvalidParams(format!(
            "finite-difference step must lie in (0, 0.1], got {h}"
        )));
    }
    Ok(DerivativeSet { kernel, h, dim })
}

impl DerivativeSet {
    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn jet(&self, atom: &ResolvedAtom, k1: &Point, k2: &Point) -> KernelJet {
        let h = self.h;
        let m = |a: &Point, b: &Point| self.kernel.eval(atom, a, b);
        let moved = |k: &Point, i: usize, s: f64| {
            let mut q = *k;
            q[i] += s;
            q
        };
        let moved2 = |k: &Point, i: usize, si: f64, j: usize, sj: f64| {
            let mut q = *k;
            q[i] += si;
            q[j] += sj;
            q
        };
        let m0 = m(k1, k2);
        let mut jet = KernelJet {
            value: m0,
            ..KernelJet::default()
        };
        for i in 0..self.dim {
            jet.d1[i] = (m(&moved(k1, i, h), k2) - m(&moved(k1, i, -h), k2)) / (2.0 * h);
            jet.d2[i] = (m(k1, &moved(k2, i, h)) - m(k1, &moved(k2, i, -h))) / (2.0 * h);
            for j in 0..self.dim {
                if i == j {
                    jet.h11[i][i] = (m(&moved(k1, i, h), k2) - 2.0 * m0 + m(&moved(k1, i, -h), k2)) / (h * h);
                    jet.h22[i][i] = (m(k1, &moved(k2, i, h)) - 2.0 * m0 + m(k1, &moved(k2, i, -h))) / (h * h);
                } else {
                    let q = |si: f64, sj: f64| m(&moved2(k1, i, si, j, sj), k2);
                    jet.h11[i][j] = (q(h, h) - q(h, -h) - q(-h, h) + q(-h, -h)) / (4.0 * h * h);
                    let q = |si: f64, sj: f64| m(k1, &moved2(k2, i, si, j, sj));
                    jet.h22[i][j] = (q(h, h) - q(h, -h) - q(-h, h) + q(-h, -h)) / (4.0 * h * h);
                }
                let q = |si: f64, sj: f64| m(&moved(k1, i, si), &moved(k2, j, sj));
                jet.h12[i][j] = (q(h, h) - q(h, -h) - q(-h, h) + q(-h, -h)) / (4.0 * h * h);
            }
        }
        jet
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn atom() -> ResolvedAtom {
        ResolvedAtom {
            index: 0,
            offset: [1, 0],
            theta: [0.4, 0.0],
            weight: 1.0,
        }
    }

    fn half_kraus() -> KrausKernel {
        KrausKernel::new(
            vec![vec![
                KrausTerm { c: [1.0, 0.0], n: vec![0], m: vec![] },
                KrausTerm { c: [0.5, 0.0], n: vec![1], m: vec![] },
            ]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn minus_cos_derivatives() {
        let h = TrigDispersion::minus_cos(2);
        let k = [0.3, -1.1];
        assert!((h.value(&k) + 0.3f64.cos() + 1.1f64.cos()).abs() < 1e-15);
        let g = h.gradient(&k);
        assert!((g[0] - 0.3f64.sin()).abs() < 1e-15);
        assert!((g[1] + 1.1f64.sin()).abs() < 1e-15);
        let hs = h.hessian(&k);
        assert!((hs[0][0] - 0.3f64.cos()).abs() < 1e-15);
        assert_eq!(hs[0][1], 0.0);
    }

    #[test]
    fn kraus_diagonal_is_modulus_squared() {
        let m = half_kraus();
        for j in 0..32 {
            let k = [-PI + j as f64 * PI / 16.0, 0.0];
            let r = m.eval(&atom(), &k, &k);
            assert!((r.re - (1.25 + k[0].cos())).abs() < 1e-14);
            assert!(r.im.abs() < 1e-15);
        }
    }

    #[test]
    fn kraus_mixed_derivative_closed_form() {
        // ∂₁∂₂ of conj(u(k₁))u(k₂) is conj(u'(k₁))u'(k₂) = ¼ e^{i(k₂-k₁)}.
        let m = half_kraus();
        let (k1, k2) = ([0.7, 0.0], [-0.2, 0.0]);
        let jet = m.jet(&atom(), &k1, &k2).unwrap();
        let expected = C64::from_polar(0.25, k2[0] - k1[0]);
        assert!((jet.h12[0][0] - expected).norm() < 1e-15);
        let fd = fd_derivatives(Arc::new(m), 1e-3, 1).unwrap();
        assert!((fd.jet(&atom(), &k1, &k2).h12[0][0] - expected).norm() < 1e-5);
    }

    #[test]
    fn coscos_closed_forms() {
        let m = CosCosKernel::new(AtomTable::Constant(0.5)).unwrap();
        let k = [0.9, 0.0];
        let jet = m.jet(&atom(), &k, &k).unwrap();
        assert!((jet.h12[0][0].re - 2.0 * 0.9f64.sin().powi(2)).abs() < 1e-15);
        let fd = fd_derivatives(Arc::new(m), 1e-3, 1).unwrap().jet(&atom(), &k, &k);
        assert!(fd.max_abs_diff(&jet) < 1e-5);
        assert!(CosCosKernel::new(AtomTable::Constant(-1.0)).is_err());
    }

    #[test]
    fn fd_of_constant_vanishes() {
        let fd = fd_derivatives(Arc::new(ConstantKernel { value: 1.0 }), 1e-2, 2).unwrap();
        let jet = fd.jet(&atom(), &[0.1, 0.2], &[0.3, -0.4]);
        let exact = KernelJet {
            value: C64::new(1.0, 0.0),
            ..KernelJet::default()
        };
        assert!(jet.max_abs_diff(&exact) < 1e-4);
        assert!(fd_derivatives(Arc::new(ConstantKernel { value: 1.0 }), 0.2, 1).is_err());
    }

    #[test]
    fn fd_error_is_second_order() {
        let m: Arc<dyn NoiseKernel> = Arc::new(half_kraus());
        let (k1, k2) = ([0.3, 0.0], [1.1, 0.0]);
        let exact = m.jet(&atom(), &k1, &k2).unwrap();
        let e1 = fd_derivatives(m.clone(), 0.04, 1).unwrap().jet(&atom(), &k1, &k2).max_abs_diff(&exact);
        let e2 = fd_derivatives(m, 0.02, 1).unwrap().jet(&atom(), &k1, &k2).max_abs_diff(&exact);
        let ratio = e1 / e2;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }
}
