//! Dense complex linear algebra shared by the spectral and evolution code.
//!
//! Eigen-decompositions, LU and SVD are delegated to LAPACK through
//! `ndarray-linalg`; the matrix exponential is implemented here.

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::{Eig, Factorize, Solve, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = Array2<Complex64>;
pub type CVector = Array1<Complex64>;

pub(crate) const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub(crate) const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
pub(crate) const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Maximum absolute column sum.
pub fn norm1(a: &CMatrix) -> f64 {
    a.axis_iter(Axis(1))
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_norm2(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn identity(n: usize) -> CMatrix {
    Array2::from_diag_elem(n, ONE)
}

/// Eigenvalues and right eigenvectors, sorted by decreasing real part.
pub fn eig_sorted(a: &CMatrix) -> Result<(CVector, CMatrix)> {
    let (vals, vecs) = a.eig()?;
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&i, &j| {
        vals[j]
            .re
            .partial_cmp(&vals[i].re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(vals[i].im.partial_cmp(&vals[j].im).unwrap_or(std::cmp::Ordering::Equal))
    });
    let sorted_vals = order.iter().map(|&i| vals[i]).collect();
    let sorted_vecs = vecs.select(Axis(1), &order);
    Ok((sorted_vals, sorted_vecs))
}

/// Orthonormal basis (columns) of the right singular vectors whose singular
/// values do not exceed `tol`, together with all singular values.
pub fn null_space(a: &CMatrix, tol: f64) -> Result<(CMatrix, Array1<f64>)> {
    let (_, s, vt) = a.svd(false, true)?;
    let vt = vt.ok_or_else(|| Error::Linalg("SVD returned no right vectors".into()))?;
    let n = a.ncols();
    let idx: Vec<usize> = (0..n).filter(|&i| i >= s.len() || s[i] <= tol).collect();
    let mut basis = Array2::zeros((n, idx.len()));
    for (c, &i) in idx.iter().enumerate() {
        for r in 0..n {
            basis[[r, c]] = vt[[i, r]].conj();
        }
    }
    Ok((basis, s))
}

/// Right singular vector belonging to the smallest singular value.
pub fn smallest_singular_vector(a: &CMatrix) -> Result<(CVector, f64)> {
    let (_, s, vt) = a.svd(false, true)?;
    let vt = vt.ok_or_else(|| Error::Linalg("SVD returned no right vectors".into()))?;
    let last = s.len() - 1;
    let v = vt.row(last).mapv(|z| z.conj());
    Ok((v, s[last]))
}

/// Solve `A X = B` column by column with one LU factorization.
pub fn solve_matrix(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let lu = a.factorize()?;
    let mut x = Array2::zeros(b.raw_dim());
    for (j, col) in b.axis_iter(Axis(1)).enumerate() {
        let sol = lu.solve(&col.to_owned())?;
        x.column_mut(j).assign(&sol);
    }
    Ok(x)
}

// Padé coefficients b_0..b_m for the degrees used by the scaling-and-squaring
// algorithm, and the corresponding 1-norm thresholds θ_m.
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152;

fn scaled(a: &CMatrix, c: f64) -> CMatrix {
    a.mapv(|z| z * c)
}

fn pade_low(a: &CMatrix, b: &[f64]) -> (CMatrix, CMatrix) {
    let n = a.nrows();
    let eye = identity(n);
    let a2 = a.dot(a);
    let m = b.len() - 1;
    // Even powers A^0, A^2, A^4, ...
    let mut powers = vec![eye, a2.clone()];
    while 2 * powers.len() <= m {
        let next = powers.last().unwrap().dot(&a2);
        powers.push(next);
    }
    let mut u = Array2::zeros((n, n));
    let mut v = Array2::zeros((n, n));
    for (j, pw) in powers.iter().enumerate() {
        if 2 * j + 1 <= m {
            u = u + scaled(pw, b[2 * j + 1]);
        }
        if 2 * j <= m {
            v = v + scaled(pw, b[2 * j]);
        }
    }
    (a.dot(&u), v)
}

fn pade13(a: &CMatrix) -> (CMatrix, CMatrix) {
    let b = &PADE13;
    let n = a.nrows();
    let eye = identity(n);
    let a2 = a.dot(a);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let w1 = scaled(&a6, b[13]) + scaled(&a4, b[11]) + scaled(&a2, b[9]);
    let w2 = scaled(&a6, b[7]) + scaled(&a4, b[5]) + scaled(&a2, b[3]) + scaled(&eye, b[1]);
    let u = a.dot(&(a6.dot(&w1) + w2));
    let z1 = scaled(&a6, b[12]) + scaled(&a4, b[10]) + scaled(&a2, b[8]);
    let z2 = scaled(&a6, b[6]) + scaled(&a4, b[4]) + scaled(&a2, b[2]) + scaled(&eye, b[0]);
    let v = a6.dot(&z1) + z2;
    (u, v)
}

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant of degree 3, 5, 7, 9 or 13 chosen from the 1-norm.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Linalg("expm requires a square matrix".into()));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NumericalBlowup("non-finite generator entry".into()));
    }
    let norm = norm1(a);
    let (u, v, squarings) = match THETA.iter().find(|(_, th)| norm <= *th) {
        Some(&(m, _)) => {
            let b: &[f64] = match m {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            let (u, v) = pade_low(a, b);
            (u, v, 0)
        }
        None => {
            let s = if norm > THETA13 {
                (norm / THETA13).log2().ceil().max(0.0) as i32
            } else {
                0
            };
            let (u, v) = pade13(&scaled(a, 0.5f64.powi(s)));
            (u, v, s)
        }
    };
    let mut r = solve_matrix(&(&v - &u), &(&v + &u))?;
    for _ in 0..squarings {
        r = r.dot(&r);
    }
    if r.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NumericalBlowup("matrix exponential overflowed".into()));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn expm_of_diagonal() {
        for scale in [1e-3, 0.2, 1.0, 3.0, 40.0] {
            let a = Array2::from_diag(&array![c(-1.0, 0.5), c(0.3, -2.0), c(-0.1, 0.0)]) * c(scale, 0.0);
            let e = expm(&a).unwrap();
            let expected = Array2::from_diag(&a.diag().mapv(|z| z.exp()));
            let rel = max_diff(&e, &expected) / expected.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(rel < 1e-12, "scale {scale}: rel err {rel}");
        }
    }

    #[test]
    fn expm_of_nilpotent_and_rotation() {
        let a = array![[c(0.0, 0.0), c(2.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        let e = expm(&a).unwrap();
        let expected = array![[c(1.0, 0.0), c(2.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]];
        assert!(max_diff(&e, &expected) < 1e-14);

        let t = 7.5;
        let r = array![[c(0.0, 0.0), c(-t, 0.0)], [c(t, 0.0), c(0.0, 0.0)]];
        let e = expm(&r).unwrap();
        let expected = array![[c(t.cos(), 0.0), c(-t.sin(), 0.0)], [c(t.sin(), 0.0), c(t.cos(), 0.0)]];
        assert!(max_diff(&e, &expected) < 1e-12);
    }

    #[test]
    fn expm_semigroup_property() {
        let n = 12;
        let a = Array2::from_shape_fn((n, n), |(i, j)| {
            c(((i * 5 + j * 3) % 7) as f64 / 7.0 - 0.5, ((i + 2 * j) % 5) as f64 / 10.0 - 0.2)
        });
        let e1 = expm(&a).unwrap();
        let e2 = expm(&(&a * c(2.0, 0.0))).unwrap();
        let scale = e2.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(max_diff(&e1.dot(&e1), &e2) / scale < 1e-12);
    }

    #[test]
    fn null_space_of_rank_deficient() {
        let a = array![
            [c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
            [c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
            [c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]
        ];
        let (basis, _) = null_space(&a, 1e-12).unwrap();
        assert_eq!(basis.ncols(), 2);
        let r = a.dot(&basis);
        assert!(r.iter().all(|z| z.norm() < 1e-14));
    }
}
