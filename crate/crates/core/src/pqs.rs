//! Backward propagation of the effect matrix E(t) over a recorded homodyne
//! signal, and the retrodiction Born rule for the four-element Bell POVM.
//!
//! E solves the adjoint of the forward SME, backwards from E(T) = 1. The
//! adjoint equation is not trace preserving and carries an overall scale
//! freedom; E is trace-normalized every step to prevent exponent
//! under/overflow, which cannot affect the renormalized probabilities.

use crate::error::{Error, Result};
use crate::hilbert::{
    coherent_state, DensityOperator, HilbertSpaceLayout, Ket, Layout, OperatorMatrix,
};
use crate::linalg;
use crate::sme::{HomodyneRecord, PhaseSpec, SmeContext, SmeParams};
use crate::teleport::BellOutcome;
use ndarray::Array2;
use num_complex::Complex64 as C64;

/// Positive operator propagated backward from E(T) = identity.
#[derive(Debug, Clone)]
pub struct EffectMatrix {
    pub matrix: Array2<C64>,
    pub layout: Layout,
}

impl EffectMatrix {
    /// Terminal condition E(T) = 1, normalized to unit trace.
    pub fn terminal(layout: Layout) -> Self {
        let d = layout.total_dim();
        let mut m = Array2::<C64>::eye(d);
        m.mapv_inplace(|z| z / d as f64);
        EffectMatrix { matrix: m, layout }
    }

    /// Wrap an explicit effect matrix (e.g. for tests or replay); must be
    /// square on the layout dimension.
    pub fn from_matrix(matrix: Array2<C64>, layout: Layout) -> Result<Self> {
        let d = layout.total_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "effect matrix".into(),
                expected: d,
                found: matrix.nrows(),
            });
        }
        Ok(EffectMatrix { matrix, layout })
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.matrix).re
    }
}

/// The four-element Bell POVM M_i = |i>_A<i| (x) |±beta>_C<±beta|.
///
/// The coherent-state projectors are not orthogonal, so the elements do not
/// resolve the identity; the deficit is bounded by 4 e^{-2|beta|^2} on the
/// effective subspace and the Born-rule renormalization absorbs it.
#[derive(Debug, Clone)]
pub struct BellPovm {
    pub elements: Vec<OperatorMatrix>,
    pub outcomes: [BellOutcome; 4],
}

/// Retrodicted outcome probabilities at t = 0.
#[derive(Debug, Clone)]
pub struct RetrodictionResult {
    pub probabilities: [f64; 4],
    pub outcome: BellOutcome,
    /// p_max - p_second
    pub margin: f64,
}

/// One backward Euler step over the sample J, applied in reverse time order.
///
/// dE = (i[H,E] + kappa(a^dag E a - {a^dag a, E}/2)) dt
///      + sqrt(eta kappa) J (a^dag E + E a) dt
///
/// The Hamiltonian term is the adjoint of the forward split-step, i.e. the
/// exact conjugation by exp(+iH dt).
pub fn backward_step(e: &EffectMatrix, ctx: &SmeContext, j: f64) -> Result<EffectMatrix> {
    let SmeParams { kappa, eta, dt } = ctx.params;

    // the forward step dissipates first and rotates last, so the adjoint
    // undoes the phase unitary first
    let m = if let Some(u) = &ctx.unitary {
        let udag = linalg::dagger(u);
        udag.dot(&e.matrix).dot(u)
    } else {
        e.matrix.clone()
    };

    // measurement kick as a positive Kraus factor K = 1 + g J a with
    // g = sqrt(eta kappa) dt: the g^2 J^2 term is the Milstein correction
    // whose mean (J^2 dt^2 ~ dt) supplies the eta share of the jump term,
    // so the explicit jump carries weight (1 - eta). A bare Euler kick
    // g J (a'E + Ea) is indefinite and can drive Tr E negative at finite dt.
    let mut new = if eta > 0.0 {
        let g = (eta * kappa).sqrt() * j * dt;
        let mut k = Array2::<C64>::eye(m.nrows());
        k.scaled_add(C64::new(g, 0.0), &ctx.a_meas);
        linalg::dagger(&k).dot(&m).dot(&k)
    } else {
        m.clone()
    };
    // deterministic adjoint dissipator (Euler): identity stays exactly fixed
    if eta < 1.0 {
        let adag_e_a = ctx.a_meas_dag.dot(&m).dot(&ctx.a_meas);
        new.scaled_add(C64::new((1.0 - eta) * kappa * dt, 0.0), &adag_e_a);
    }
    let n_m = ctx.number.dot(&m);
    new.scaled_add(C64::new(-0.5 * kappa * dt, 0.0), &n_m);
    new.scaled_add(C64::new(-0.5 * kappa * dt, 0.0), &linalg::dagger(&n_m));

    let out = linalg::hermitize(&new);
    let t = linalg::trace(&out).re;
    let growth = t / e.trace();
    if !growth.is_finite() || growth.abs() > 10.0 {
        return Err(Error::BackwardBlowup { step: 0, growth });
    }
    let mut normalized = out;
    normalized.mapv_inplace(|z| z / t);
    Ok(EffectMatrix {
        matrix: normalized,
        layout: e.layout.clone(),
    })
}

/// Propagate E from E(T) = 1 back to t = 0 over a full record, switching
/// Hamiltonians at the recorded phase boundaries. Acts on the
/// (qubit A, cavity) space; qubit B is a passive spectator.
pub fn propagate_backward(
    record: &HomodyneRecord,
    phases: &[PhaseSpec],
    layout: &Layout,
    params: SmeParams,
) -> Result<EffectMatrix> {
    record.check()?;
    if phases.len() != record.phase_boundaries.len() {
        return Err(Error::RecordMismatch(format!(
            "{} phases but {} boundaries",
            phases.len(),
            record.phase_boundaries.len()
        )));
    }
    let expected: usize = phases
        .iter()
        .map(|p| (p.duration / params.dt).round() as usize)
        .sum();
    if expected != record.samples.len() {
        return Err(Error::RecordMismatch(format!(
            "phases cover {expected} steps but record has {}",
            record.samples.len()
        )));
    }

    let contexts: Vec<SmeContext> = phases
        .iter()
        .map(|p| SmeContext::for_phase(p, layout, params))
        .collect::<Result<_>>()?;

    let mut e = EffectMatrix::terminal(layout.clone());
    let mut phase_idx = phases.len();
    let mut lower = record.samples.len();
    // walk samples in reverse, tracking which phase each index belongs to
    for k in (0..record.samples.len()).rev() {
        while phase_idx > 0 && k < lower {
            phase_idx -= 1;
            lower = if phase_idx == 0 {
                0
            } else {
                record.phase_boundaries[phase_idx - 1]
            };
        }
        e = backward_step(&e, &contexts[phase_idx], record.samples[k]).map_err(|err| match err {
            Error::BackwardBlowup { growth, .. } => Error::BackwardBlowup { step: k, growth },
            other => other,
        })?;
    }
    Ok(e)
}

/// Build the Bell POVM on the (qubit A, cavity) layout. Outcome order is
/// (0,+b), (0,-b), (1,+b), (1,-b).
pub fn build_bell_povm(beta: C64, n_fock: usize) -> Result<BellPovm> {
    let layout = HilbertSpaceLayout::qubit_cavity(n_fock);
    let qubit_layout = HilbertSpaceLayout::new(vec![2]);
    let mut elements = Vec::with_capacity(4);
    for outcome in BellOutcome::ALL {
        let q = Ket::basis(outcome.qubit_label() as usize, qubit_layout.clone());
        let field = coherent_state(beta * f64::from(outcome.field_sign()), n_fock)?;
        let v = q.tensor(&field);
        let proj = v.projector();
        elements.push(OperatorMatrix::new(
            proj.matrix,
            layout.clone(),
            format!("M{}", outcome.label()),
        )?);
    }
    Ok(BellPovm {
        elements,
        outcomes: BellOutcome::ALL,
    })
}

/// Generalized Born rule: p(i) = Tr(M_i rho M_i^dag E) / sum_i (...).
///
/// E = 1 reduces this to the ordinary forward Born rule. Ties resolve to the
/// lowest outcome index. All four weights vanishing is reported as an
/// explicit error so the caller can fall back deliberately.
pub fn retrodict(
    rho_prior: &DensityOperator,
    e0: &EffectMatrix,
    povm: &BellPovm,
) -> Result<RetrodictionResult> {
    let mut weights = [0.0_f64; 4];
    for (k, m) in povm.elements.iter().enumerate() {
        let m_rho_mdag = m
            .matrix
            .dot(&rho_prior.matrix)
            .dot(&linalg::dagger(&m.matrix));
        let w = linalg::trace(&m_rho_mdag.dot(&e0.matrix)).re;
        // Euler noise can push a tiny weight below zero
        weights[k] = w.max(0.0);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateRetrodiction);
    }
    let mut probabilities = [0.0_f64; 4];
    for k in 0..4 {
        probabilities[k] = weights[k] / total;
    }
    let mut best = 0usize;
    for k in 1..4 {
        if probabilities[k] > probabilities[best] {
            best = k;
        }
    }
    let mut sorted = probabilities;
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(RetrodictionResult {
        probabilities,
        outcome: povm.outcomes[best],
        margin: sorted[0] - sorted[1],
    })
}

/// Uniform prior over the four Bell-basis product states,
/// (1/4) sum_i |i,X><i,X|, embedded in the truncated Fock space. The
/// coherent branches are not orthogonalized; their overlap is e^{-2|beta|^2}.
pub fn uniform_bell_prior(beta: C64, n_fock: usize) -> Result<DensityOperator> {
    let povm = build_bell_povm(beta, n_fock)?;
    let d = povm.elements[0].matrix.nrows();
    let mut m = Array2::<C64>::zeros((d, d));
    for el in &povm.elements {
        m.scaled_add(C64::new(0.25, 0.0), &el.matrix);
    }
    DensityOperator::new(m, povm.elements[0].layout.clone())
}

impl BellPovm {
    /// Build a POVM from four explicit elements with the canonical outcome
    /// ordering (0,+b), (0,-b), (1,+b), (1,-b).
    pub fn from_elements(elements: Vec<OperatorMatrix>) -> Result<Self> {
        if elements.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "a Bell POVM needs 4 elements, got {}",
                elements.len()
            )));
        }
        Ok(BellPovm {
            elements,
            outcomes: BellOutcome::ALL,
        })
    }

    /// Completeness deficit max |(sum_i M_i^dag M_i - 1)| restricted to the
    /// span of the four POVM vectors; bounded by ~4 e^{-2|beta|^2}.
    pub fn completeness_deficit(&self) -> f64 {
        let d = self.elements[0].matrix.nrows();
        let mut s = Array2::<C64>::zeros((d, d));
        for el in &self.elements {
            let m = linalg::dagger(&el.matrix).dot(&el.matrix);
            s.scaled_add(C64::new(1.0, 0.0), &m);
        }
        // measure deviation through the POVM elements themselves:
        // Tr(M_i (S - 1)) over each element
        let mut worst = 0.0_f64;
        for el in &self.elements {
            let mut dev = C64::new(0.0, 0.0);
            for i in 0..d {
                for j in 0..d {
                    let sm1 = s[(j, i)] - if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
                    dev += el.matrix[(i, j)] * sm1;
                }
            }
            worst = worst.max(dev.norm());
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{fock_annihilation, HilbertSpaceLayout};
    use crate::sme;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn params(eta: f64, dt: f64) -> SmeParams {
        SmeParams { kappa: 1.0, eta, dt }
    }

    fn zero_phase(duration: f64) -> PhaseSpec {
        PhaseSpec::idle(duration)
    }

    #[test]
    fn free_backward_step_is_identity() {
        // J = 0, kappa -> 0 limit approximated by kappa*dt -> tiny, H = 0
        let layout = HilbertSpaceLayout::qubit_cavity(6);
        let h = OperatorMatrix::new(
            Array2::zeros((12, 12)),
            layout.clone(),
            "0",
        )
        .unwrap();
        let p = SmeParams {
            kappa: 1e-9,
            eta: 0.0,
            dt: 1e-3,
        };
        let ctx = SmeContext::new(&h, 0.0, p).unwrap();
        let e = EffectMatrix::terminal(layout);
        let e2 = backward_step(&e, &ctx, 0.0).unwrap();
        let dev = (&e2.matrix - &e.matrix)
            .iter()
            .map(|z| z.norm())
            .fold(0.0_f64, f64::max);
        assert!(dev < 1e-10);
    }

    #[test]
    fn identity_is_fixed_point_of_adjoint_damping() {
        // H = 0, kappa > 0, eta = 0: the adjoint of a trace-preserving map
        // fixes the identity
        let layout = HilbertSpaceLayout::cavity_only(8);
        let h = OperatorMatrix::new(Array2::zeros((8, 8)), layout.clone(), "0").unwrap();
        let ctx = SmeContext::new(&h, 0.0, params(0.0, 1e-3)).unwrap();
        let mut e = EffectMatrix::terminal(layout);
        for _ in 0..200 {
            e = backward_step(&e, &ctx, 0.0).unwrap();
        }
        let d = 8.0;
        let dev = e
            .matrix
            .indexed_iter()
            .map(|((i, j), z)| {
                let target = if i == j { 1.0 / d } else { 0.0 };
                (z - c(target, 0.0)).norm()
            })
            .fold(0.0_f64, f64::max);
        assert!(dev < 1e-10, "identity not fixed: deviation {dev}");
    }

    #[test]
    fn zero_length_record_returns_identity() {
        let layout = HilbertSpaceLayout::qubit_cavity(6);
        let record = HomodyneRecord {
            dt: 1e-3,
            samples: vec![],
            phase_boundaries: vec![0],
            eta: 1.0,
            kappa: 1.0,
        };
        let e = propagate_backward(&record, &[zero_phase(0.0)], &layout, params(1.0, 1e-3))
            .unwrap();
        let d = layout.total_dim() as f64;
        assert!((e.matrix[(0, 0)].re - 1.0 / d).abs() < 1e-14);
    }

    #[test]
    fn record_phase_mismatch_is_rejected() {
        let layout = HilbertSpaceLayout::qubit_cavity(6);
        let record = HomodyneRecord {
            dt: 1e-3,
            samples: vec![0.0; 10],
            phase_boundaries: vec![10],
            eta: 1.0,
            kappa: 1.0,
        };
        // phase covers 20 steps, record has 10
        let r = propagate_backward(&record, &[zero_phase(0.02)], &layout, params(1.0, 1e-3));
        assert!(r.is_err());
    }

    #[test]
    fn povm_elements_and_overlaps() {
        let beta = c(2.0, 0.0);
        let n_fock = 30;
        let povm = build_bell_povm(beta, n_fock).unwrap();
        let layout = HilbertSpaceLayout::qubit_cavity(n_fock);
        let q0 = Ket::basis(0, HilbertSpaceLayout::new(vec![2]));
        let q1 = Ket::basis(1, HilbertSpaceLayout::new(vec![2]));
        let plus = coherent_state(beta, n_fock).unwrap();
        let minus = coherent_state(-beta, n_fock).unwrap();
        let v0p = q0.tensor(&plus);
        let v0m = q0.tensor(&minus);
        let v1p = q1.tensor(&plus);

        let expect = |m: &OperatorMatrix, v: &Ket| -> f64 {
            let mv = m.matrix.dot(&v.amplitudes);
            v.amplitudes
                .iter()
                .zip(mv.iter())
                .map(|(a, b)| (a.conj() * b).re)
                .sum()
        };
        // <0,b|M_(0,+b)|0,b> = 1
        assert!((expect(&povm.elements[0], &v0p) - 1.0).abs() < 1e-12);
        // cross-element leakage e^{-4|b|^2} ~ 1.1e-7 at beta=2
        let leak = expect(&povm.elements[0], &v0m);
        let expected = (-4.0 * beta.norm_sqr()).exp();
        assert!((expected - 1.125e-7).abs() < 1e-9);
        assert!((leak - expected).abs() < 1e-9, "leakage {leak}");
        // different qubit labels are exactly orthogonal
        assert!(expect(&povm.elements[0], &v1p).abs() < 1e-14);
        assert_eq!(layout.total_dim(), povm.elements[0].matrix.nrows());
        // completeness deficit bounded by ~4 e^{-2|b|^2}
        let deficit = povm.completeness_deficit();
        assert!(deficit <= 4.0 * (-2.0 * beta.norm_sqr()).exp() + 1e-9);
    }

    #[test]
    fn retrodict_with_identity_is_forward_born_rule() {
        let beta = c(2.0, 0.0);
        let n_fock = 20;
        let povm = build_bell_povm(beta, n_fock).unwrap();
        let layout = HilbertSpaceLayout::qubit_cavity(n_fock);
        let e = EffectMatrix::terminal(layout.clone());
        // prior = |0,b><0,b| concentrates everything on outcome 0
        let q0 = Ket::basis(0, HilbertSpaceLayout::new(vec![2]));
        let plus = coherent_state(beta, n_fock).unwrap();
        let rho = q0.tensor(&plus).projector();
        let r = retrodict(&rho, &e, &povm).unwrap();
        assert_eq!(r.outcome.index(), 0);
        assert!(r.probabilities[0] >= 1.0 - 2.0 * (-4.0 * beta.norm_sqr()).exp());
        let sum: f64 = r.probabilities.iter().sum();
        assert!((sum - 1.0).abs() < 1e-10);
    }

    #[test]
    fn retrodict_is_scale_invariant_in_e() {
        let beta = c(1.5, 0.0);
        let n_fock = 16;
        let povm = build_bell_povm(beta, n_fock).unwrap();
        let layout = HilbertSpaceLayout::qubit_cavity(n_fock);
        let prior = uniform_bell_prior(beta, n_fock).unwrap();
        // a random-ish positive E
        let a = fock_annihilation(n_fock).unwrap();
        let a_full = crate::hilbert::embed(&a, 1, &layout).unwrap();
        let mut m = Array2::<C64>::eye(layout.total_dim());
        m.scaled_add(c(0.1, 0.0), &a_full.matrix.dot(&linalg::dagger(&a_full.matrix)));
        let e1 = EffectMatrix {
            matrix: m.clone(),
            layout: layout.clone(),
        };
        let e2 = EffectMatrix {
            matrix: m.mapv(|z| z * 37.5),
            layout,
        };
        let r1 = retrodict(&prior, &e1, &povm).unwrap();
        let r2 = retrodict(&prior, &e2, &povm).unwrap();
        for k in 0..4 {
            assert_eq!(r1.probabilities[k], r2.probabilities[k]);
        }
        assert_eq!(r1.outcome, r2.outcome);
    }

    #[test]
    fn forward_born_rule_on_orthogonal_povm_is_exact() {
        // with E = 1 and an orthogonal (projective) POVM the retrodiction
        // equals the forward Born rule exactly
        let n_fock = 8;
        let layout = HilbertSpaceLayout::qubit_cavity(n_fock);
        let d = layout.total_dim();
        // orthogonal projectors onto |0,0>, |0,1>, |1,0>, |1,1>
        let mut elements = Vec::new();
        for idx in [0usize, 1, n_fock, n_fock + 1] {
            let v = Ket::basis(idx, layout.clone());
            elements.push(OperatorMatrix::new(v.projector().matrix, layout.clone(), "P").unwrap());
        }
        let povm = BellPovm {
            elements,
            outcomes: BellOutcome::ALL,
        };
        let mut m = Array2::<C64>::zeros((d, d));
        m[(0, 0)] = c(0.4, 0.0);
        m[(1, 1)] = c(0.3, 0.0);
        m[(n_fock, n_fock)] = c(0.2, 0.0);
        m[(n_fock + 1, n_fock + 1)] = c(0.1, 0.0);
        let rho = DensityOperator::new(m, layout.clone()).unwrap();
        let e = EffectMatrix::terminal(layout);
        let r = retrodict(&rho, &e, &povm).unwrap();
        let expected = [0.4, 0.3, 0.2, 0.1];
        for k in 0..4 {
            assert!((r.probabilities[k] - expected[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_weights_are_an_explicit_error() {
        let n_fock = 8;
        let layout = HilbertSpaceLayout::qubit_cavity(n_fock);
        let povm = build_bell_povm(c(1.0, 0.0), n_fock).unwrap();
        let prior = uniform_bell_prior(c(1.0, 0.0), n_fock).unwrap();
        let e = EffectMatrix {
            matrix: Array2::zeros((layout.total_dim(), layout.total_dim())),
            layout,
        };
        match retrodict(&prior, &e, &povm) {
            Err(Error::DegenerateRetrodiction) => {}
            other => panic!("expected degenerate error, got {other:?}"),
        }
    }

    #[test]
    fn backward_recovers_pinned_excited_qubit() {
        // eta=1, qubit A pinned |1>, strong driven signal: E(0) concentrates
        // weight on the sz=+1 block for most runs
        let n_fock = 16;
        let p = params(1.0, 2e-3);
        let layout = HilbertSpaceLayout::qubit_cavity(n_fock);
        let phases = vec![PhaseSpec {
            duration: 1.5,
            chi_a: 13.5,
            chi_b: 0.0,
            drive: c(27.0, 0.0),
            lo_phase: 0.0,
        }];
        let q1 = Ket::basis(1, HilbertSpaceLayout::new(vec![2]));
        let vac = coherent_state(c(0.0, 0.0), n_fock).unwrap();
        let rho0 = q1.tensor(&vac).projector();
        let q0 = Ket::basis(0, HilbertSpaceLayout::new(vec![2]));
        let rho_alt = q0.tensor(&vac).projector();
        let n_runs = 60;
        let mut hits = 0;
        for k in 0..n_runs {
            let mut rng = ChaCha12Rng::seed_from_u64(400 + k);
            let (_, record) = sme::simulate_sequence(&rho0, &phases, p, &mut rng).unwrap();
            let e0 = propagate_backward(&record, &phases, &layout, p).unwrap();
            // two-hypothesis Born ratio between the true initial state and
            // the flipped-qubit alternative
            let w1 = linalg::trace(&rho0.matrix.dot(&e0.matrix)).re;
            let w0 = linalg::trace(&rho_alt.matrix.dot(&e0.matrix)).re;
            if w1 / (w0 + w1) >= 0.9 {
                hits += 1;
            }
        }
        assert!(
            hits as f64 / n_runs as f64 >= 0.9,
            "true hypothesis dominated in only {hits}/{n_runs} runs"
        );
    }

    #[test]
    fn pure_noise_record_retrodicts_uniformly() {
        // a record generated with eta=0 carries no information, so the
        // retrodiction over equal-prior outcomes stays near uniform
        let n_fock = 16;
        let beta = c(2.0, 0.0);
        let layout = HilbertSpaceLayout::qubit_cavity(n_fock);
        let phases = vec![zero_phase(0.5)];
        let prior = uniform_bell_prior(beta, n_fock).unwrap();
        let povm = build_bell_povm(beta, n_fock).unwrap();
        let p_fwd = params(0.0, 1e-3);
        let p_bwd = params(0.0, 1e-3);
        let rho0 = uniform_bell_prior(beta, n_fock).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let (_, record) = sme::simulate_sequence(&rho0, &phases, p_fwd, &mut rng).unwrap();
        let e0 = propagate_backward(&record, &phases, &layout, p_bwd).unwrap();
        let r = retrodict(&prior, &e0, &povm).unwrap();
        // field labels decay identically; qubit labels are untouched at
        // chi=0, so all four probabilities stay close to 1/4
        for k in 0..4 {
            assert!(
                (r.probabilities[k] - 0.25).abs() < 0.05,
                "p = {:?}",
                r.probabilities
            );
        }
    }
}
