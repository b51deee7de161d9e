//! Finite-dimensional complex operator algebra on a Fock-truncated composite
//! space: qubits, a truncated oscillator, tensor embeddings, partial traces,
//! coherent states and Haar-random qubit sampling.
//!
//! Tensor ordering is fixed once per layout: the full protocol space is
//! (qubit A, qubit B, cavity) and the backward pass uses (qubit A, cavity).
//! Every state and operator carries its layout tag and operations assert it.

use crate::error::{Error, Result};
use crate::linalg;
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use rand::Rng;
use std::sync::Arc;

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-8;
pub const POSITIVITY_FLOOR: f64 = -1e-8;

/// Ordered subsystem dimensions of a composite Hilbert space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertSpaceLayout {
    factors: Vec<usize>,
}

/// Shared layout handle; layouts are immutable and freely cloned across
/// trajectory workers.
pub type Layout = Arc<HilbertSpaceLayout>;

impl HilbertSpaceLayout {
    pub fn new(factors: Vec<usize>) -> Layout {
        assert!(!factors.is_empty() && factors.iter().all(|&d| d >= 2));
        Arc::new(HilbertSpaceLayout { factors })
    }

    /// (qubit A, qubit B, cavity)
    pub fn full(n_fock: usize) -> Layout {
        Self::new(vec![2, 2, n_fock])
    }

    /// (qubit A, cavity) — the space of the backward pass.
    pub fn qubit_cavity(n_fock: usize) -> Layout {
        Self::new(vec![2, n_fock])
    }

    pub fn cavity_only(n_fock: usize) -> Layout {
        Self::new(vec![n_fock])
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn total_dim(&self) -> usize {
        self.factors.iter().product()
    }

    /// Index of the cavity factor: by convention the last one.
    pub fn cavity_index(&self) -> usize {
        self.factors.len() - 1
    }

    pub fn cavity_dim(&self) -> usize {
        *self.factors.last().unwrap()
    }
}

/// Pure state vector.
#[derive(Debug, Clone)]
pub struct Ket {
    pub amplitudes: Array1<C64>,
    pub layout: Layout,
}

impl Ket {
    pub fn new(amplitudes: Array1<C64>, layout: Layout) -> Result<Self> {
        if amplitudes.len() != layout.total_dim() {
            return Err(Error::DimensionMismatch {
                context: "Ket::new",
                expected: layout.total_dim(),
                found: amplitudes.len(),
            });
        }
        Ok(Ket { amplitudes, layout })
    }

    pub fn basis(index: usize, layout: Layout) -> Self {
        let mut amplitudes = Array1::zeros(layout.total_dim());
        amplitudes[index] = C64::new(1.0, 0.0);
        Ket { amplitudes, layout }
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.amplitudes.mapv_inplace(|z| z / n);
        }
    }

    pub fn inner(&self, other: &Ket) -> C64 {
        self.amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Tensor product; layouts concatenate.
    pub fn tensor(&self, other: &Ket) -> Ket {
        let mut factors = self.layout.factors().to_vec();
        factors.extend_from_slice(other.layout.factors());
        Ket {
            amplitudes: linalg::kron_vec(&self.amplitudes, &other.amplitudes),
            layout: HilbertSpaceLayout::new(factors),
        }
    }

    /// |psi><psi| as a density operator.
    pub fn projector(&self) -> DensityOperator {
        let n = self.amplitudes.len();
        let m = Array2::from_shape_fn((n, n), |(i, j)| {
            self.amplitudes[i] * self.amplitudes[j].conj()
        });
        DensityOperator {
            matrix: m,
            layout: self.layout.clone(),
        }
    }
}

/// Positive unit-trace operator; the conditional forward state.
#[derive(Debug, Clone)]
pub struct DensityOperator {
    pub matrix: Array2<C64>,
    pub layout: Layout,
}

impl DensityOperator {
    pub fn new(matrix: Array2<C64>, layout: Layout) -> Result<Self> {
        if matrix.nrows() != layout.total_dim() || matrix.ncols() != layout.total_dim() {
            return Err(Error::DimensionMismatch {
                context: "DensityOperator::new",
                expected: layout.total_dim(),
                found: matrix.nrows(),
            });
        }
        Ok(DensityOperator { matrix, layout })
    }

    /// Maximally mixed state 1/d.
    pub fn maximally_mixed(layout: Layout) -> Self {
        let d = layout.total_dim();
        let mut m = Array2::<C64>::eye(d);
        m.mapv_inplace(|z| z / d as f64);
        DensityOperator { matrix: m, layout }
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.matrix).re
    }

    pub fn renormalize(&mut self) {
        let t = self.trace();
        if t != 0.0 {
            self.matrix.mapv_inplace(|z| z / t);
        }
    }

    /// Hermiticity / unit-trace / positivity checks. Positivity costs a full
    /// eigendecomposition, so call this at checkpoints rather than per step.
    pub fn check_valid(&self) -> Result<()> {
        let h = linalg::hermiticity_deviation(&self.matrix);
        if h > HERMITICITY_TOL {
            return Err(Error::InvalidArgument(format!(
                "density operator not Hermitian: deviation {h:.3e}"
            )));
        }
        let t = self.trace();
        if (t - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidArgument(format!(
                "density operator trace {t} != 1"
            )));
        }
        let lam = linalg::min_eigenvalue(&self.matrix);
        if lam < POSITIVITY_FLOOR {
            return Err(Error::InvalidArgument(format!(
                "density operator has negative eigenvalue {lam:.3e}"
            )));
        }
        Ok(())
    }

    /// Tr(op rho)
    pub fn expect(&self, op: &OperatorMatrix) -> C64 {
        // Tr(A B) = sum_ij A_ij B_ji, avoids the full product
        let mut s = C64::new(0.0, 0.0);
        for i in 0..self.matrix.nrows() {
            for j in 0..self.matrix.ncols() {
                s += op.matrix[(i, j)] * self.matrix[(j, i)];
            }
        }
        s
    }

    /// Population of the top two Fock levels, summed over the other factors.
    /// The truncation monitor compares this against 1e-6.
    pub fn top_fock_population(&self) -> f64 {
        let n_c = self.layout.cavity_dim();
        let rest: usize = self.layout.total_dim() / n_c;
        let mut p = 0.0;
        for r in 0..rest {
            for n in [n_c - 2, n_c - 1] {
                let idx = r * n_c + n;
                p += self.matrix[(idx, idx)].re;
            }
        }
        p
    }
}

/// Labelled operator tied to a layout.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub matrix: Array2<C64>,
    pub layout: Layout,
    pub label: String,
}

impl OperatorMatrix {
    pub fn new(matrix: Array2<C64>, layout: Layout, label: impl Into<String>) -> Result<Self> {
        if matrix.nrows() != layout.total_dim() || matrix.ncols() != layout.total_dim() {
            return Err(Error::DimensionMismatch {
                context: "OperatorMatrix::new",
                expected: layout.total_dim(),
                found: matrix.nrows(),
            });
        }
        Ok(OperatorMatrix {
            matrix,
            layout,
            label: label.into(),
        })
    }

    pub fn identity(layout: Layout) -> Self {
        let d = layout.total_dim();
        OperatorMatrix {
            matrix: Array2::eye(d),
            layout,
            label: "1".into(),
        }
    }

    pub fn dagger(&self) -> OperatorMatrix {
        OperatorMatrix {
            matrix: linalg::dagger(&self.matrix),
            layout: self.layout.clone(),
            label: format!("{}^dag", self.label),
        }
    }
}

/// sigma_z with the convention sigma_z = |1><1| - |0><0| (excited state +1).
pub fn sigma_z() -> Array2<C64> {
    let mut m = Array2::zeros((2, 2));
    m[(0, 0)] = C64::new(-1.0, 0.0);
    m[(1, 1)] = C64::new(1.0, 0.0);
    m
}

pub fn sigma_x() -> Array2<C64> {
    let mut m = Array2::zeros((2, 2));
    m[(0, 1)] = C64::new(1.0, 0.0);
    m[(1, 0)] = C64::new(1.0, 0.0);
    m
}

/// Qubit Hadamard.
pub fn hadamard() -> Array2<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = Array2::zeros((2, 2));
    m[(0, 0)] = C64::new(s, 0.0);
    m[(0, 1)] = C64::new(s, 0.0);
    m[(1, 0)] = C64::new(s, 0.0);
    m[(1, 1)] = C64::new(-s, 0.0);
    m
}

/// Truncated annihilation operator: <n-1|a|n> = sqrt(n).
pub fn fock_annihilation(n_fock: usize) -> Result<OperatorMatrix> {
    if n_fock < 2 {
        return Err(Error::InvalidArgument(format!(
            "fock_annihilation needs n_fock >= 2, got {n_fock}"
        )));
    }
    let mut m = Array2::zeros((n_fock, n_fock));
    for n in 1..n_fock {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    OperatorMatrix::new(m, HilbertSpaceLayout::cavity_only(n_fock), "a")
}

fn check_truncation(beta: C64, n_fock: usize) -> Result<()> {
    let beta_sq = beta.norm_sqr();
    let bound = n_fock as f64 / 4.0;
    if beta_sq > bound {
        return Err(Error::TruncationBound { beta_sq, bound });
    }
    Ok(())
}

/// Coherent state |beta> truncated at n_fock, renormalized.
pub fn coherent_state(beta: C64, n_fock: usize) -> Result<Ket> {
    check_truncation(beta, n_fock)?;
    let mut amps = Array1::zeros(n_fock);
    // c_n = e^{-|b|^2/2} b^n / sqrt(n!), built up iteratively
    let mut c = C64::new((-beta.norm_sqr() / 2.0).exp(), 0.0);
    amps[0] = c;
    for n in 1..n_fock {
        c *= beta / (n as f64).sqrt();
        amps[n] = c;
    }
    let mut ket = Ket::new(amps, HilbertSpaceLayout::cavity_only(n_fock))?;
    ket.normalize();
    Ok(ket)
}

/// Displacement D(beta) = exp(beta a^dag - beta^* a) at the truncated
/// dimension. Deviations from unitarity are confined to the top Fock levels.
pub fn displacement_operator(beta: C64, n_fock: usize) -> Result<OperatorMatrix> {
    check_truncation(beta, n_fock)?;
    let a = fock_annihilation(n_fock)?;
    let adag = linalg::dagger(&a.matrix);
    // beta a^dag - beta^* a = i h with h Hermitian
    let mut h = Array2::zeros((n_fock, n_fock));
    for i in 0..n_fock {
        for j in 0..n_fock {
            let k = beta * adag[(i, j)] - beta.conj() * a.matrix[(i, j)];
            h[(i, j)] = k * C64::new(0.0, -1.0);
        }
    }
    let u = linalg::exp_i_hermitian(&h, 1.0);
    OperatorMatrix::new(u, a.layout.clone(), format!("D({beta})"))
}

/// Embed a single-factor operator into a composite layout, identity on all
/// other factors.
pub fn embed(op: &OperatorMatrix, subsystem: usize, layout: &Layout) -> Result<OperatorMatrix> {
    let factors = layout.factors();
    if subsystem >= factors.len() {
        return Err(Error::InvalidArgument(format!(
            "subsystem index {subsystem} out of range for {} factors",
            factors.len()
        )));
    }
    if op.matrix.nrows() != factors[subsystem] {
        return Err(Error::DimensionMismatch {
            context: "embed",
            expected: factors[subsystem],
            found: op.matrix.nrows(),
        });
    }
    let mut out = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
    for (k, &d) in factors.iter().enumerate() {
        let f = if k == subsystem {
            op.matrix.clone()
        } else {
            Array2::eye(d)
        };
        out = linalg::kron(&out, &f);
    }
    OperatorMatrix::new(out, layout.clone(), op.label.clone())
}

/// Partial trace keeping the listed factors (ascending order assumed).
pub fn partial_trace(rho: &DensityOperator, keep: &[usize]) -> Result<DensityOperator> {
    if keep.is_empty() {
        return Err(Error::InvalidArgument("empty keep set".into()));
    }
    let factors = rho.layout.factors();
    for &k in keep {
        if k >= factors.len() {
            return Err(Error::InvalidArgument(format!(
                "keep index {k} out of range"
            )));
        }
    }
    let kept_dims: Vec<usize> = keep.iter().map(|&k| factors[k]).collect();
    let traced: Vec<usize> = (0..factors.len()).filter(|i| !keep.contains(i)).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&k| factors[k]).collect();
    let dk: usize = kept_dims.iter().product();
    let dt: usize = traced_dims.iter().product();

    // strides of each factor in the flat index
    let mut strides = vec![1usize; factors.len()];
    for i in (0..factors.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * factors[i + 1];
    }
    let flat = |multi_keep: usize, multi_tr: usize| -> usize {
        let mut idx = 0;
        let mut mk = multi_keep;
        for (pos, &k) in keep.iter().enumerate().rev() {
            let d = kept_dims[pos];
            idx += (mk % d) * strides[k];
            mk /= d;
        }
        let mut mt = multi_tr;
        for (pos, &k) in traced.iter().enumerate().rev() {
            let d = traced_dims[pos];
            idx += (mt % d) * strides[k];
            mt /= d;
        }
        idx
    };

    let mut out = Array2::zeros((dk, dk));
    for i in 0..dk {
        for j in 0..dk {
            let mut s = C64::new(0.0, 0.0);
            for t in 0..dt {
                s += rho.matrix[(flat(i, t), flat(j, t))];
            }
            out[(i, j)] = s;
        }
    }
    DensityOperator::new(out, HilbertSpaceLayout::new(kept_dims))
}

/// Haar-uniform single-qubit pure state. Global phase fixed so the |0>
/// amplitude is real and nonnegative, making seeded runs reproducible.
pub fn haar_random_qubit<R: Rng>(rng: &mut R) -> Ket {
    let u: f64 = rng.random_range(-1.0..=1.0); // cos(theta)
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let c0 = ((1.0 + u) / 2.0).sqrt();
    let c1 = ((1.0 - u) / 2.0).sqrt();
    let mut amps = Array1::zeros(2);
    amps[0] = C64::new(c0, 0.0);
    amps[1] = C64::from_polar(c1, phi);
    Ket {
        amplitudes: amps,
        layout: HilbertSpaceLayout::new(vec![2]),
    }
}

/// <psi|rho|psi>, clamped to [0,1].
pub fn fidelity(psi: &Ket, rho: &DensityOperator) -> Result<f64> {
    let d = psi.amplitudes.len();
    if rho.matrix.nrows() != d {
        return Err(Error::DimensionMismatch {
            context: "fidelity",
            expected: d,
            found: rho.matrix.nrows(),
        });
    }
    let mut f = C64::new(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            f += psi.amplitudes[i].conj() * rho.matrix[(i, j)] * psi.amplitudes[j];
        }
    }
    Ok(f.re.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn annihilation_smallest_space() {
        let a = fock_annihilation(2).unwrap();
        assert_eq!(a.matrix[(0, 1)], c(1.0, 0.0));
        assert_eq!(a.matrix[(0, 0)], c(0.0, 0.0));
        assert_eq!(a.matrix[(1, 0)], c(0.0, 0.0));
        assert_eq!(a.matrix[(1, 1)], c(0.0, 0.0));
    }

    #[test]
    fn annihilation_rejects_small_cutoff() {
        assert!(fock_annihilation(1).is_err());
    }

    #[test]
    fn number_operator_identity() {
        let n_fock = 12;
        let a = fock_annihilation(n_fock).unwrap();
        let num = linalg::dagger(&a.matrix).dot(&a.matrix);
        for n in 0..n_fock {
            assert!((num[(n, n)].re - n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn commutator_is_identity_below_truncation() {
        let n_fock = 10;
        let a = fock_annihilation(n_fock).unwrap();
        let adag = linalg::dagger(&a.matrix);
        let comm = a.matrix.dot(&adag) - adag.dot(&a.matrix);
        // top row deviates due to truncation
        for n in 0..n_fock - 1 {
            assert!((comm[(n, n)] - c(1.0, 0.0)).norm() < 1e-12);
        }
        assert!((comm[(n_fock - 1, n_fock - 1)] - c(1.0 - n_fock as f64, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn coherent_zero_is_vacuum() {
        let ket = coherent_state(c(0.0, 0.0), 8).unwrap();
        assert!((ket.amplitudes[0] - c(1.0, 0.0)).norm() < 1e-14);
        assert!(ket.amplitudes.iter().skip(1).all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn coherent_overlap_matches_closed_form() {
        // |<-b|b>| = e^{-2|b|^2}; at beta = 2 this is about 3.355e-4
        let beta = c(2.0, 0.0);
        let plus = coherent_state(beta, 30).unwrap();
        let minus = coherent_state(-beta, 30).unwrap();
        let overlap = minus.inner(&plus).norm();
        let expected = (-2.0 * beta.norm_sqr()).exp();
        assert!((expected - 3.3546e-4).abs() < 1e-7);
        assert!((overlap - expected).abs() < 1e-9);
    }

    #[test]
    fn coherent_mean_photon_number() {
        let beta = c(2.0, 0.0);
        let ket = coherent_state(beta, 30).unwrap();
        let a = fock_annihilation(30).unwrap();
        let num = linalg::dagger(&a.matrix).dot(&a.matrix);
        let rho = ket.projector();
        let n_op = OperatorMatrix::new(num, rho.layout.clone(), "n").unwrap();
        let n_mean = rho.expect(&n_op).re;
        assert!((n_mean - beta.norm_sqr()).abs() < 1e-6);
    }

    #[test]
    fn coherent_rejects_truncation_violation() {
        assert!(coherent_state(c(3.0, 0.0), 10).is_err());
    }

    #[test]
    fn displacement_of_zero_is_identity() {
        let d = displacement_operator(c(0.0, 0.0), 8).unwrap();
        let dev = (&d.matrix - &Array2::<C64>::eye(8))
            .iter()
            .map(|z| z.norm())
            .fold(0.0_f64, f64::max);
        assert!(dev < 1e-12);
    }

    #[test]
    fn displacement_generates_coherent_state() {
        let beta = c(2.0, 0.0);
        let d = displacement_operator(beta, 30).unwrap();
        let vac = Ket::basis(0, HilbertSpaceLayout::cavity_only(30));
        let displaced = Ket::new(d.matrix.dot(&vac.amplitudes), vac.layout.clone()).unwrap();
        let target = coherent_state(beta, 30).unwrap();
        assert!(target.inner(&displaced).norm() >= 1.0 - 1e-8);
    }

    #[test]
    fn displacement_inverse() {
        let beta = c(2.0, 0.0);
        let dp = displacement_operator(beta, 30).unwrap();
        let dm = displacement_operator(-beta, 30).unwrap();
        let prod = dp.matrix.dot(&dm.matrix);
        // check on the low-occupation subspace only
        for i in 0..15 {
            for j in 0..15 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - c(target, 0.0)).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn embed_sigma_z_acts_on_qubit_a() {
        let layout = HilbertSpaceLayout::full(4);
        let sz = OperatorMatrix::new(sigma_z(), HilbertSpaceLayout::new(vec![2]), "sz").unwrap();
        let full = embed(&sz, 0, &layout).unwrap();
        // |1>_A tensor |0>_B tensor |0>_C is flat index 1*2*4 = 8
        let ket = Ket::basis(8, layout.clone());
        let out = full.matrix.dot(&ket.amplitudes);
        assert!((out[8] - c(1.0, 0.0)).norm() < 1e-14);
        // |0>_A gets -1
        let ket0 = Ket::basis(0, layout);
        let out0 = full.matrix.dot(&ket0.amplitudes);
        assert!((out0[0] - c(-1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn embed_identity_is_identity() {
        let layout = HilbertSpaceLayout::full(3);
        let id2 = OperatorMatrix::identity(HilbertSpaceLayout::new(vec![2]));
        let full = embed(&id2, 1, &layout).unwrap();
        assert_eq!(full.matrix, Array2::<C64>::eye(12));
    }

    #[test]
    fn embedded_disjoint_factors_commute() {
        let layout = HilbertSpaceLayout::full(5);
        let a = fock_annihilation(5).unwrap();
        let sz = OperatorMatrix::new(sigma_z(), HilbertSpaceLayout::new(vec![2]), "sz").unwrap();
        let a_full = embed(&a, 2, &layout).unwrap();
        let sz_full = embed(&sz, 0, &layout).unwrap();
        let lhs = a_full.matrix.dot(&sz_full.matrix);
        let rhs = sz_full.matrix.dot(&a_full.matrix);
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn partial_trace_of_product_state() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let q = haar_random_qubit(&mut rng);
        let cav = coherent_state(c(1.0, 0.5), 12).unwrap();
        let joint = q.tensor(&cav).projector();
        let reduced = partial_trace(&joint, &[0]).unwrap();
        let target = q.projector();
        for i in 0..2 {
            for j in 0..2 {
                assert!((reduced.matrix[(i, j)] - target.matrix[(i, j)]).norm() < 1e-12);
            }
        }
        assert!((reduced.trace() - joint.trace()).abs() < 1e-10);
    }

    #[test]
    fn haar_first_and_second_moments() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let n = 10_000;
        let mut m2 = 0.0;
        let mut m4 = 0.0;
        for _ in 0..n {
            let k = haar_random_qubit(&mut rng);
            let p0 = k.amplitudes[0].norm_sqr();
            m2 += p0;
            m4 += p0 * p0;
        }
        m2 /= n as f64;
        m4 /= n as f64;
        assert!((m2 - 0.5).abs() < 0.02, "E|<0|psi>|^2 = {m2}");
        assert!((m4 - 1.0 / 3.0).abs() < 0.02, "E|<0|psi>|^4 = {m4}");
    }

    #[test]
    fn haar_is_deterministic_under_seed() {
        let mut r1 = ChaCha12Rng::seed_from_u64(7);
        let mut r2 = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..5 {
            let a = haar_random_qubit(&mut r1);
            let b = haar_random_qubit(&mut r2);
            assert_eq!(a.amplitudes, b.amplitudes);
        }
    }

    #[test]
    fn fidelity_of_own_projector_is_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let k = haar_random_qubit(&mut rng);
        let f = fidelity(&k, &k.projector()).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_of_orthogonal_states_is_zero() {
        let layout = HilbertSpaceLayout::new(vec![2]);
        let zero = Ket::basis(0, layout.clone());
        let one = Ket::basis(1, layout);
        let f = fidelity(&zero, &one.projector()).unwrap();
        assert!(f < 1e-12);
    }

    #[test]
    fn haar_average_of_sigma_x_moment() {
        // E_haar |<psi|sx|psi>|^2 = 1/3, the identity behind the 0.5 baseline
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let sx = sigma_x();
        let n = 10_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let k = haar_random_qubit(&mut rng);
            let v = sx.dot(&k.amplitudes);
            let amp: C64 = k
                .amplitudes
                .iter()
                .zip(v.iter())
                .map(|(a, b)| a.conj() * b)
                .sum();
            acc += amp.norm_sqr();
        }
        acc /= n as f64;
        assert!((acc - 1.0 / 3.0).abs() < 0.02, "got {acc}");
    }

    #[test]
    fn density_operator_validation() {
        let ket = coherent_state(c(1.0, 0.0), 10).unwrap();
        ket.projector().check_valid().unwrap();
    }

    #[test]
    fn truncation_monitor_reads_top_levels() {
        let ket = coherent_state(c(2.0, 0.0), 30).unwrap();
        let p = ket.projector().top_fock_population();
        assert!(p < 1e-6, "top-two Fock population {p}");
    }
}
