//! Small dense complex linear-algebra helpers shared by the physics modules.
//!
//! Matrix products go through `ndarray` (matrixmultiply backend); the few
//! spectral decompositions needed (matrix exponentials of Hermitian
//! generators, positivity checks) are delegated to `nalgebra`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

pub fn dagger(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

pub fn trace(m: &Array2<C64>) -> C64 {
    m.diag().sum()
}

/// (m + m^dag) / 2
pub fn hermitize(m: &Array2<C64>) -> Array2<C64> {
    let mut out = m + &dagger(m);
    out.mapv_inplace(|z| 0.5 * z);
    out
}

pub fn hermiticity_deviation(m: &Array2<C64>) -> f64 {
    let d = m - &dagger(m);
    d.iter().map(|z| z.norm()).fold(0.0_f64, f64::max)
}

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

pub fn kron_vec(a: &Array1<C64>, b: &Array1<C64>) -> Array1<C64> {
    let mut out = Array1::zeros(a.len() * b.len());
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i * b.len() + j] = ai * bj;
        }
    }
    out
}

fn to_nalgebra(m: &Array2<C64>) -> DMatrix<C64> {
    let (r, c) = m.dim();
    DMatrix::from_fn(r, c, |i, j| m[(i, j)])
}

fn from_nalgebra(m: &DMatrix<C64>) -> Array2<C64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// exp(i * scale * h) for Hermitian `h`, via spectral decomposition.
pub fn exp_i_hermitian(h: &Array2<C64>, scale: f64) -> Array2<C64> {
    let eig = to_nalgebra(h).symmetric_eigen();
    let n = h.nrows();
    let mut out = DMatrix::<C64>::zeros(n, n);
    // V diag(e^{i s lambda}) V^dag
    for k in 0..n {
        let phase = C64::from_polar(1.0, scale * eig.eigenvalues[k]);
        let col = eig.eigenvectors.column(k);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += phase * col[i] * col[j].conj();
            }
        }
    }
    from_nalgebra(&out)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &Array2<C64>) -> Vec<f64> {
    let mut ev: Vec<f64> = to_nalgebra(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

pub fn min_eigenvalue(m: &Array2<C64>) -> f64 {
    hermitian_eigenvalues(m)
        .first()
        .copied()
        .unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn kron_of_identities_is_identity() {
        let i2 = Array2::<C64>::eye(2);
        let i3 = Array2::<C64>::eye(3);
        assert_eq!(kron(&i2, &i3), Array2::<C64>::eye(6));
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let z = Array2::<C64>::zeros((4, 4));
        let u = exp_i_hermitian(&z, 1.7);
        let dev = (&u - &Array2::<C64>::eye(4))
            .iter()
            .map(|z| z.norm())
            .fold(0.0_f64, f64::max);
        assert!(dev < 1e-14);
    }

    #[test]
    fn exp_i_pauli_z_matches_closed_form() {
        let sz = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]];
        let u = exp_i_hermitian(&sz, 0.4);
        assert!((u[(0, 0)] - C64::from_polar(1.0, 0.4)).norm() < 1e-12);
        assert!((u[(1, 1)] - C64::from_polar(1.0, -0.4)).norm() < 1e-12);
        assert!(u[(0, 1)].norm() < 1e-12);
    }

    #[test]
    fn hermitian_eigenvalues_of_diag() {
        let m = array![[c(2.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]];
        let ev = hermitian_eigenvalues(&m);
        assert!((ev[0] + 1.0).abs() < 1e-12 && (ev[1] - 2.0).abs() < 1e-12);
    }
}
