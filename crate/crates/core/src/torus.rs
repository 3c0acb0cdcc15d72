//! Uniform discretization of the momentum torus `[-π, π)^d`.
//!
//! Nodes sit at `k_j = -π + j·2π/N` on every axis, so `±π/2` are nodes
//! exactly when `4 | N`. Multi-dimensional nodes are flattened with axis 0
//! varying fastest.

use std::f64::consts::PI;

use ndarray::Array1;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported torus dimension.
pub const MAX_DIM: usize = 2;

/// A point of `R^d` (or of the torus) padded to [`MAX_DIM`] components.
pub type Point = [f64; MAX_DIM];

/// A lattice vector of `Z^d` padded to [`MAX_DIM`] components.
pub type Site = [i64; MAX_DIM];

/// Reduce a real momentum into `(-π, π]`.
pub fn wrap_momentum(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut y = x.rem_euclid(two_pi);
    if y > PI {
        y -= two_pi;
    }
    if y <= -PI {
        y += two_pi;
    }
    y
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidGrid(format!(
                "dimension {dim} not supported (1 or 2)"
            )));
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be even and at least 8, got {n}"
            )));
        }
        if n.pow(dim as u32) > 4096 {
            return Err(Error::InvalidGrid(format!(
                "{n}^{dim} nodes exceed the dense limit of 4096"
            )));
        }
        Ok(TorusGrid { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total node count `N^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// Quadrature cell volume `(2π/N)^d`.
    pub fn weight(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Torus volume `(2π)^d`.
    pub fn volume(&self) -> f64 {
        (2.0 * PI).powi(self.dim as i32)
    }

    /// Axis indices of a flat node index.
    pub fn index_to_site(&self, idx: usize) -> Site {
        let mut s = [0i64; MAX_DIM];
        let mut rem = idx;
        for c in s.iter_mut().take(self.dim) {
            *c = (rem % self.n) as i64;
            rem /= self.n;
        }
        s
    }

    /// Flat node index of (possibly out-of-range) axis indices, reduced mod N.
    pub fn site_to_index(&self, site: &Site) -> usize {
        let n = self.n as i64;
        let mut idx = 0usize;
        let mut stride = 1usize;
        for c in site.iter().take(self.dim) {
            idx += c.rem_euclid(n) as usize * stride;
            stride *= self.n;
        }
        idx
    }

    /// Index of node `idx` shifted by the lattice offset `offset`.
    pub fn shift(&self, idx: usize, offset: &Site) -> usize {
        let mut s = self.index_to_site(idx);
        for a in 0..self.dim {
            s[a] += offset[a];
        }
        self.site_to_index(&s)
    }

    /// Momentum of node `idx`.
    pub fn node(&self, idx: usize) -> Point {
        let s = self.index_to_site(idx);
        let mut k = [0.0; MAX_DIM];
        for a in 0..self.dim {
            k[a] = -PI + s[a] as f64 * self.spacing();
        }
        k
    }

    /// Momentum carried by a lattice offset, wrapped into `(-π, π]`.
    pub fn offset_momentum(&self, offset: &Site) -> Point {
        let mut t = [0.0; MAX_DIM];
        let n = self.n as i64;
        for a in 0..self.dim {
            let r = offset[a].rem_euclid(n);
            // Exact index arithmetic: the representative in (-N/2, N/2].
            let r = if r > n / 2 { r - n } else { r };
            t[a] = r as f64 * self.spacing();
        }
        t
    }

    /// Index of the node nearest to `k`, and whether `k` is on-grid.
    pub fn nearest_node(&self, k: &Point) -> (usize, bool) {
        let mut site = [0i64; MAX_DIM];
        let mut exact = true;
        for a in 0..self.dim {
            let x = (wrap_momentum(k[a]) + PI) / self.spacing();
            let r = x.round();
            if (x - r).abs() > 1e-9 {
                exact = false;
            }
            site[a] = r as i64;
        }
        (self.site_to_index(&site), exact)
    }

    pub fn nodes(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    /// Sample a function on the nodes.
    pub fn sample<F>(&self, f: F) -> GridFunction
    where
        F: Fn(&Point) -> Complex64,
    {
        let values = (0..self.len()).map(|i| f(&self.node(i))).collect();
        GridFunction {
            grid: *self,
            values,
        }
    }

    pub fn sample_real<F>(&self, f: F) -> GridFunction
    where
        F: Fn(&Point) -> f64,
    {
        self.sample(|k| Complex64::new(f(k), 0.0))
    }

    pub fn constant(&self, c: Complex64) -> GridFunction {
        GridFunction {
            grid: *self,
            values: Array1::from_elem(self.len(), c),
        }
    }

    pub(crate) fn check(&self, other: &TorusGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

pub fn make_grid(dim: usize, n: usize) -> Result<TorusGrid> {
    TorusGrid::new(dim, n)
}

/// Complex values on the nodes of a [`TorusGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub grid: TorusGrid,
    pub values: Array1<Complex64>,
}

impl GridFunction {
    pub fn new(grid: TorusGrid, values: Array1<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_real(grid: TorusGrid, values: &[f64]) -> Result<Self> {
        Self::new(
            grid,
            values.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Pointwise product.
    pub fn mul(&self, other: &GridFunction) -> Result<GridFunction> {
        self.grid.check(&other.grid)?;
        Ok(GridFunction {
            grid: self.grid,
            values: &self.values * &other.values,
        })
    }

    pub fn scale(&self, c: Complex64) -> GridFunction {
        GridFunction {
            grid: self.grid,
            values: self.values.mapv(|z| z * c),
        }
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Discrete `L^1` norm `Σ |f| · weight`.
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).sum::<f64>() * self.grid.weight()
    }
}

/// `∫ dk f(k)` by the uniform rule.
pub fn integrate(grid: &TorusGrid, f: &GridFunction) -> Result<Complex64> {
    grid.check(&f.grid)?;
    Ok(f.values.sum() * grid.weight())
}

/// The pairing `⟨g, f⟩ = ∫ dk conj(g(k)) f(k)`.
pub fn pairing(g: &GridFunction, f: &GridFunction) -> Result<Complex64> {
    g.grid.check(&f.grid)?;
    let s: Complex64 = g
        .values
        .iter()
        .zip(f.values.iter())
        .map(|(a, b)| a.conj() * b)
        .sum();
    Ok(s * g.grid.weight())
}

/// One term `λ |f⟩⟨g|` of a finite-rank density matrix, with `f` and `g`
/// finitely supported lattice wavefunctions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankOneTerm {
    pub weight: Complex64,
    pub f: Vec<(Site, Complex64)>,
    pub g: Vec<(Site, Complex64)>,
}

impl RankOneTerm {
    /// The pure state `|f⟩⟨f|`.
    pub fn pure(f: Vec<(Site, Complex64)>) -> Self {
        RankOneTerm {
            weight: Complex64::new(1.0, 0.0),
            g: f.clone(),
            f,
        }
    }

    /// The same term after `f → e^{iγ·x/2} f`, `g → e^{-iγ·x/2} g`.
    pub fn phase_shifted(&self, gamma: &Point, dim: usize) -> Self {
        let phase = |x: &Site, sign: f64| {
            let dot: f64 = (0..dim).map(|a| gamma[a] * x[a] as f64).sum();
            Complex64::from_polar(1.0, sign * 0.5 * dot)
        };
        RankOneTerm {
            weight: self.weight,
            f: self.f.iter().map(|(x, a)| (*x, a * phase(x, 1.0))).collect(),
            g: self.g.iter().map(|(x, a)| (*x, a * phase(x, -1.0))).collect(),
        }
    }
}

/// `f̂(k) = (2π)^{-d/2} Σ_x e^{-i x·k} f(x)`.
pub fn lattice_fourier(f: &[(Site, Complex64)], k: &Point, dim: usize) -> Complex64 {
    let norm = (2.0 * PI).powf(-(dim as f64) / 2.0);
    let s: Complex64 = f
        .iter()
        .map(|(x, amp)| {
            let dot: f64 = (0..dim).map(|a| x[a] as f64 * k[a]).sum();
            amp * Complex64::from_polar(1.0, -dot)
        })
        .sum();
    s * norm
}

/// The fiber `[ρ]_p(k) = ρ(k - p/2, k + p/2)` of `ρ = Σ λ_n |f_n⟩⟨g_n|`.
pub fn fiber_of_rank_one(
    terms: &[RankOneTerm],
    p: &Point,
    grid: &TorusGrid,
) -> Result<GridFunction> {
    if terms.is_empty() {
        return Err(Error::EmptyOperator);
    }
    let d = grid.dim();
    Ok(grid.sample(|k| {
        let mut lo = *k;
        let mut hi = *k;
        for a in 0..d {
            lo[a] -= 0.5 * p[a];
            hi[a] += 0.5 * p[a];
        }
        terms
            .iter()
            .map(|t| t.weight * lattice_fourier(&t.f, &lo, d) * lattice_fourier(&t.g, &hi, d).conj())
            .sum()
    }))
}
