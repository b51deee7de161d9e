//! End-to-end protocol orchestration: state preparation, ideal entangling
//! gates, the two-phase continuous readout, strategy-based outcome selection,
//! corrective Pauli application and Monte-Carlo fidelity estimation.

use crate::error::{Error, Result};
use crate::hilbert::{
    self, coherent_state, fidelity, haar_random_qubit, partial_trace, DensityOperator, hadamard,
    HilbertSpaceLayout, Ket, OperatorMatrix,
};
use crate::linalg;
use crate::pqs;
use crate::sme::{self, HomodyneRecord, PhaseSpec, SmeParams};
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

/// All physical and numerical parameters of one experiment. Times are in
/// units of 1/kappa and rates in units of kappa.
#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub beta: f64,
    pub chi_over_kappa: f64,
    /// eps_r = drive_over_chi * chi during the qubit readout phase.
    pub drive_over_chi: f64,
    pub t_beta: f64,
    pub t_m: f64,
    pub t_w: f64,
    pub eta: f64,
    pub n_fock: usize,
    pub dt: f64,
    pub seed: u64,
    pub n_states: usize,
    pub n_traj_per_state: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        // T = 2/kappa with T_beta/T = 0.4
        ProtocolConfig {
            beta: 2.0,
            chi_over_kappa: 13.5,
            drive_over_chi: 2.0,
            t_beta: 0.8,
            t_m: 1.2,
            t_w: 0.3,
            eta: 1.0,
            n_fock: 30,
            dt: 1e-3,
            seed: 1,
            n_states: 500,
            n_traj_per_state: 1,
        }
    }
}

impl ProtocolConfig {
    pub fn total_time(&self) -> f64 {
        self.t_beta + self.t_m
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_beta <= 0.0 || self.t_m <= 0.0 || self.t_w < 0.0 {
            return Err(Error::InvalidArgument("durations must be positive".into()));
        }
        if self.t_w >= self.t_m {
            return Err(Error::InvalidArgument(format!(
                "t_w = {} must be smaller than t_m = {}",
                self.t_w, self.t_m
            )));
        }
        if self.n_states == 0 || self.n_traj_per_state == 0 {
            return Err(Error::InvalidArgument("need at least one state and trajectory".into()));
        }
        self.sme_params().validate()?;
        let bound = self.n_fock as f64 / 4.0;
        if self.beta * self.beta > bound {
            return Err(Error::TruncationBound {
                beta_sq: self.beta * self.beta,
                bound,
            });
        }
        Ok(())
    }

    pub fn sme_params(&self) -> SmeParams {
        SmeParams {
            kappa: 1.0,
            eta: self.eta,
            dt: self.dt,
        }
    }

    /// The two probing phases: field readout (no drive, chi_A = chi_B = 0),
    /// then qubit readout (drive eps_r, chi_A active).
    pub fn phases(&self) -> [PhaseSpec; 2] {
        let chi = self.chi_over_kappa;
        [
            PhaseSpec::idle(self.t_beta),
            PhaseSpec {
                duration: self.t_m,
                chi_a: chi,
                chi_b: 0.0,
                drive: C64::new(self.drive_over_chi * chi, 0.0),
                lo_phase: 0.0,
            },
        ]
    }

    /// Scale the probing window to a new total time T, keeping
    /// T_beta/T and T_w/T fixed.
    pub fn with_total_time(&self, total: f64) -> Self {
        let scale = total / self.total_time();
        ProtocolConfig {
            t_beta: self.t_beta * scale,
            t_m: self.t_m * scale,
            t_w: self.t_w * scale,
            ..self.clone()
        }
    }
}

/// One of the four Bell measurement outcomes, ordered
/// (0,+b), (0,-b), (1,+b), (1,-b).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BellOutcome {
    ZeroPlus,
    ZeroMinus,
    OnePlus,
    OneMinus,
}

impl BellOutcome {
    pub const ALL: [BellOutcome; 4] = [
        BellOutcome::ZeroPlus,
        BellOutcome::ZeroMinus,
        BellOutcome::OnePlus,
        BellOutcome::OneMinus,
    ];

    pub fn index(self) -> usize {
        match self {
            BellOutcome::ZeroPlus => 0,
            BellOutcome::ZeroMinus => 1,
            BellOutcome::OnePlus => 2,
            BellOutcome::OneMinus => 3,
        }
    }

    pub fn qubit_label(self) -> u8 {
        match self {
            BellOutcome::ZeroPlus | BellOutcome::ZeroMinus => 0,
            _ => 1,
        }
    }

    /// +1 for the +beta field branch, -1 for -beta.
    pub fn field_sign(self) -> i8 {
        match self {
            BellOutcome::ZeroPlus | BellOutcome::OnePlus => 1,
            _ => -1,
        }
    }

    /// Map the two integrated-signal signs to an outcome. A negative S_A
    /// implies the excited qubit |1>; a positive S_beta implies +beta.
    pub fn from_signs(s_a: i8, s_beta: i8) -> Self {
        match (s_a < 0, s_beta < 0) {
            (false, false) => BellOutcome::ZeroPlus,
            (false, true) => BellOutcome::ZeroMinus,
            (true, false) => BellOutcome::OnePlus,
            (true, true) => BellOutcome::OneMinus,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BellOutcome::ZeroPlus => "(0,+b)",
            BellOutcome::ZeroMinus => "(0,-b)",
            BellOutcome::OnePlus => "(1,+b)",
            BellOutcome::OneMinus => "(1,-b)",
        }
    }
}

/// Outcome-selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Integrated-signal thresholding (S_beta, S_A).
    Direct,
    /// Past-quantum-state retrodiction of the Bell outcome.
    Pqs,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Direct => "direct",
            Strategy::Pqs => "pqs",
        }
    }
}

/// Everything produced by one trajectory; both strategies are evaluated on
/// the same record.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome_direct: BellOutcome,
    pub outcome_pqs: BellOutcome,
    pub fidelity_direct: f64,
    pub fidelity_pqs: f64,
    /// Retrodiction was degenerate and fell back to the direct decision.
    pub pqs_fallback: bool,
    /// Top-two Fock population exceeded 1e-6 somewhere along the trajectory.
    pub truncation_warning: bool,
    pub pqs_margin: f64,
    pub record: HomodyneRecord,
}

/// (1/sqrt 2)(|0>_B |b> + |1>_B |-b>), normalized at the truncated dimension.
pub fn prepare_entangled_state(beta: f64, n_fock: usize) -> Result<Ket> {
    let q_layout = HilbertSpaceLayout::new(vec![2]);
    let b = C64::new(beta, 0.0);
    let p0 = Ket::basis(0, q_layout.clone()).tensor(&coherent_state(b, n_fock)?);
    let p1 = Ket::basis(1, q_layout).tensor(&coherent_state(-b, n_fock)?);
    let mut amps = p0.amplitudes;
    amps.scaled_add(C64::new(1.0, 0.0), &p1.amplitudes);
    let mut ket = Ket::new(amps, p0.layout)?;
    ket.normalize();
    Ok(ket)
}

/// U = |0><0| (x) 1 + |1><1| (x) exp(i pi a^dag a) on a (qubit, cavity)
/// layout; the parity flips |b> to |-b> exactly.
pub fn controlled_phase_unitary(n_fock: usize) -> Result<OperatorMatrix> {
    let layout = HilbertSpaceLayout::qubit_cavity(n_fock);
    let d = layout.total_dim();
    let mut m = Array2::<C64>::zeros((d, d));
    for n in 0..n_fock {
        m[(n, n)] = C64::new(1.0, 0.0); // |0> block
        let parity = if n % 2 == 0 { 1.0 } else { -1.0 };
        m[(n_fock + n, n_fock + n)] = C64::new(parity, 0.0); // |1> block
    }
    OperatorMatrix::new(m, layout, "U_cphase")
}

/// H_A . U_AC . (psi_A (x) phi_BC) on the (A, B, C) layout; this realizes
/// the four-branch Bell expansion.
pub fn apply_bell_gates(psi_a: &Ket, phi_bc: &Ket) -> Result<Ket> {
    let n_fock = *phi_bc.layout.factors().last().unwrap();
    let full = psi_a.tensor(phi_bc);
    let layout = full.layout.clone();
    let d = layout.total_dim();

    // U_AC: parity on the cavity conditioned on qubit A; diagonal, apply
    // directly to the amplitude vector
    let mut amps = full.amplitudes;
    for qa in 1..2 {
        // qubit A = |1> block occupies the upper half
        for qb in 0..2 {
            for n in 0..n_fock {
                if n % 2 == 1 {
                    let idx = (qa * 2 + qb) * n_fock + n;
                    amps[idx] = -amps[idx];
                }
            }
        }
    }
    // Hadamard on qubit A
    let h = hadamard();
    let half = d / 2;
    let mut out = Array1::<C64>::zeros(d);
    for i in 0..half {
        let a0 = amps[i];
        let a1 = amps[half + i];
        out[i] = h[(0, 0)] * a0 + h[(0, 1)] * a1;
        out[half + i] = h[(1, 0)] * a0 + h[(1, 1)] * a1;
    }
    Ket::new(out, layout)
}

/// Correction table: (0,+b) -> 1, (0,-b) -> sx, (1,+b) -> sz,
/// (1,-b) -> sz sx (= -i sy up to phase).
pub fn choose_correction(outcome: BellOutcome) -> OperatorMatrix {
    let layout = HilbertSpaceLayout::new(vec![2]);
    let m = match outcome {
        BellOutcome::ZeroPlus => Array2::eye(2),
        BellOutcome::ZeroMinus => hilbert::sigma_x(),
        BellOutcome::OnePlus => hilbert::sigma_z(),
        BellOutcome::OneMinus => hilbert::sigma_z().dot(&hilbert::sigma_x()),
    };
    OperatorMatrix::new(m, layout, outcome.label()).unwrap()
}

fn corrected_fidelity(
    psi_a: &Ket,
    rho_b: &DensityOperator,
    outcome: BellOutcome,
) -> Result<f64> {
    let sigma = choose_correction(outcome);
    let corrected = sigma
        .matrix
        .dot(&rho_b.matrix)
        .dot(&linalg::dagger(&sigma.matrix));
    fidelity(psi_a, &DensityOperator::new(corrected, rho_b.layout.clone())?)
}

/// Full-pipeline trajectory: prepare, gate, probe, decide with both
/// strategies, correct, score. Both strategies consume only the record.
pub fn run_trajectory<R: Rng>(
    config: &ProtocolConfig,
    psi_a: &Ket,
    rng: &mut R,
) -> Result<RunResult> {
    config.validate()?;
    let phi_bc = prepare_entangled_state(config.beta, config.n_fock)?;
    let psi_full = apply_bell_gates(psi_a, &phi_bc)?;
    let rho0 = psi_full.projector();
    let phases = config.phases();
    let params = config.sme_params();

    let (rho_t, record) = sme::simulate_sequence(&rho0, &phases, params, rng)?;
    let truncation_warning =
        rho0.top_fock_population() > 1e-6 || rho_t.top_fock_population() > 1e-6;

    // strategy Direct: signs of the two integrated signals
    let s_beta = sme::integrate_s_beta(&record);
    let s_a = sme::integrate_s_a(&record, config.t_w)?;
    let outcome_direct = BellOutcome::from_signs(s_a, s_beta);

    // strategy PQS: backward pass on (A, cavity) and retrodicted Born rule
    let ac_layout = HilbertSpaceLayout::qubit_cavity(config.n_fock);
    let beta_c = C64::new(config.beta, 0.0);
    let e0 = pqs::propagate_backward(&record, &phases, &ac_layout, params)?;
    let prior = pqs::uniform_bell_prior(beta_c, config.n_fock)?;
    let povm = pqs::build_bell_povm(beta_c, config.n_fock)?;
    let (outcome_pqs, pqs_margin, pqs_fallback) = match pqs::retrodict(&prior, &e0, &povm) {
        Ok(r) => (r.outcome, r.margin, false),
        Err(Error::DegenerateRetrodiction) => (outcome_direct, 0.0, true),
        Err(e) => return Err(e),
    };

    let rho_b = partial_trace(&rho_t, &[1])?;
    let fidelity_direct = corrected_fidelity(psi_a, &rho_b, outcome_direct)?;
    let fidelity_pqs = corrected_fidelity(psi_a, &rho_b, outcome_pqs)?;

    Ok(RunResult {
        outcome_direct,
        outcome_pqs,
        fidelity_direct,
        fidelity_pqs,
        pqs_fallback,
        truncation_warning,
        pqs_margin,
        record,
    })
}

/// Projective-oracle mode: bypass the SME, sample one branch of the Bell
/// expansion with its exact weight, apply the correction and score. The only
/// imperfection left is the coherent-state overlap.
pub fn projective_oracle_run<R: Rng>(
    beta: f64,
    n_fock: usize,
    psi_a: &Ket,
    rng: &mut R,
) -> Result<(BellOutcome, f64)> {
    let phi_bc = prepare_entangled_state(beta, n_fock)?;
    let psi_full = apply_bell_gates(psi_a, &phi_bc)?;
    let q_layout = HilbertSpaceLayout::new(vec![2]);
    let b = C64::new(beta, 0.0);

    // unnormalized conditional B states w_i = <i_A, X_C | Psi>
    let mut branch_states: Vec<Array1<C64>> = Vec::with_capacity(4);
    let mut weights = [0.0_f64; 4];
    for (k, outcome) in BellOutcome::ALL.iter().enumerate() {
        let field = coherent_state(b * f64::from(outcome.field_sign()), n_fock)?;
        let qa = outcome.qubit_label() as usize;
        let mut w = Array1::<C64>::zeros(2);
        for qb in 0..2 {
            let mut s = C64::new(0.0, 0.0);
            for n in 0..n_fock {
                let idx = (qa * 2 + qb) * n_fock + n;
                s += field.amplitudes[n].conj() * psi_full.amplitudes[idx];
            }
            w[qb] = s;
        }
        weights[k] = w.iter().map(|z| z.norm_sqr()).sum();
        branch_states.push(w);
    }
    let total: f64 = weights.iter().sum();
    let mut pick: f64 = rng.random_range(0.0..total);
    let mut chosen = 3usize;
    for k in 0..4 {
        if pick < weights[k] {
            chosen = k;
            break;
        }
        pick -= weights[k];
    }
    let outcome = BellOutcome::ALL[chosen];
    let mut ket = Ket::new(branch_states[chosen].clone(), q_layout)?;
    ket.normalize();
    let f = corrected_fidelity(psi_a, &ket.projector(), outcome)?;
    Ok((outcome, f))
}

/// Derive an independent, scheduling-invariant random stream from
/// (seed, a, b).
pub fn derive_rng(seed: u64, a: u64, b: u64) -> ChaCha12Rng {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&a.to_le_bytes());
    bytes[16..24].copy_from_slice(&b.to_le_bytes());
    bytes[24..32].copy_from_slice(&0x7172_7370_6f72_7475_u64.to_le_bytes());
    ChaCha12Rng::from_seed(bytes)
}

/// Stream index reserved for drawing Haar input states.
const STATE_STREAM: u64 = u64::MAX;

pub fn haar_input_state(seed: u64, state_idx: u64) -> Ket {
    let mut rng = derive_rng(seed, STATE_STREAM, state_idx);
    haar_random_qubit(&mut rng)
}

/// Paired Monte-Carlo statistics over an ensemble of trajectories.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub n: usize,
    pub mean_direct: f64,
    pub stderr_direct: f64,
    pub mean_pqs: f64,
    pub stderr_pqs: f64,
    /// mean and standard error of the paired difference (PQS - Direct)
    pub mean_diff: f64,
    pub stderr_diff: f64,
    pub fallbacks: usize,
    pub truncation_warnings: usize,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Run the full ensemble for one configuration: n_states Haar inputs times
/// n_traj_per_state trajectories, deterministically seeded per (state,
/// trajectory) pair so results are independent of worker scheduling.
pub fn run_ensemble(config: &ProtocolConfig) -> Result<EnsembleStats> {
    config.validate()?;
    let tasks: Vec<(u64, u64)> = (0..config.n_states as u64)
        .flat_map(|s| (0..config.n_traj_per_state as u64).map(move |t| (s, t)))
        .collect();
    let results: Vec<Result<RunResult>> = tasks
        .par_iter()
        .map(|&(state_idx, traj_idx)| {
            let psi = haar_input_state(config.seed, state_idx);
            let mut rng = derive_rng(config.seed, state_idx, traj_idx);
            run_trajectory(config, &psi, &mut rng)
        })
        .collect();
    let mut direct = Vec::with_capacity(results.len());
    let mut pqs_f = Vec::with_capacity(results.len());
    let mut diffs = Vec::with_capacity(results.len());
    let mut fallbacks = 0;
    let mut warnings = 0;
    for r in results {
        let r = r?;
        direct.push(r.fidelity_direct);
        pqs_f.push(r.fidelity_pqs);
        diffs.push(r.fidelity_pqs - r.fidelity_direct);
        fallbacks += r.pqs_fallback as usize;
        warnings += r.truncation_warning as usize;
    }
    let (mean_direct, stderr_direct) = mean_stderr(&direct);
    let (mean_pqs, stderr_pqs) = mean_stderr(&pqs_f);
    let (mean_diff, stderr_diff) = mean_stderr(&diffs);
    Ok(EnsembleStats {
        n: direct.len(),
        mean_direct,
        stderr_direct,
        mean_pqs,
        stderr_pqs,
        mean_diff,
        stderr_diff,
        fallbacks,
        truncation_warnings: warnings,
    })
}

/// Mean fidelity and standard error for one strategy.
pub fn estimate_protocol_fidelity(
    config: &ProtocolConfig,
    strategy: Strategy,
) -> Result<(f64, f64)> {
    let stats = run_ensemble(config)?;
    Ok(match strategy {
        Strategy::Direct => (stats.mean_direct, stats.stderr_direct),
        Strategy::Pqs => (stats.mean_pqs, stats.stderr_pqs),
    })
}

/// One grid point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub stats: EnsembleStats,
}

pub fn sweep_efficiency(config: &ProtocolConfig, etas: &[f64]) -> Result<Vec<SweepPoint>> {
    if etas.is_empty() {
        return Err(Error::InvalidArgument("empty eta grid".into()));
    }
    etas.iter()
        .map(|&eta| {
            let c = ProtocolConfig {
                eta,
                ..config.clone()
            };
            Ok(SweepPoint {
                axis_value: eta,
                stats: run_ensemble(&c)?,
            })
        })
        .collect()
}

pub fn sweep_time(config: &ProtocolConfig, totals: &[f64]) -> Result<Vec<SweepPoint>> {
    if totals.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    totals
        .iter()
        .map(|&t| {
            let c = config.with_total_time(t);
            Ok(SweepPoint {
                axis_value: t,
                stats: run_ensemble(&c)?,
            })
        })
        .collect()
}

/// Recompute both strategy decisions from a serialized record alone; used to
/// assert that decisions are pure functions of (record, config).
pub fn decisions_from_record(
    config: &ProtocolConfig,
    record: &HomodyneRecord,
) -> Result<(BellOutcome, BellOutcome, bool)> {
    let s_beta = sme::integrate_s_beta(record);
    let s_a = sme::integrate_s_a(record, config.t_w)?;
    let outcome_direct = BellOutcome::from_signs(s_a, s_beta);
    let ac_layout = HilbertSpaceLayout::qubit_cavity(config.n_fock);
    let params = SmeParams {
        kappa: record.kappa,
        eta: record.eta,
        dt: record.dt,
    };
    let e0 = pqs::propagate_backward(record, &config.phases(), &ac_layout, params)?;
    let beta_c = C64::new(config.beta, 0.0);
    let prior = pqs::uniform_bell_prior(beta_c, config.n_fock)?;
    let povm = pqs::build_bell_povm(beta_c, config.n_fock)?;
    Ok(match pqs::retrodict(&prior, &e0, &povm) {
        Ok(r) => (outcome_direct, r.outcome, false),
        Err(Error::DegenerateRetrodiction) => (outcome_direct, outcome_direct, true),
        Err(e) => return Err(e),
    })
}
