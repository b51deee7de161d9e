//! Transmon calibration arithmetic: spectrum in the transmon limit, tunable
//! dispersive shift, flux-pulsed detuning profile, accumulated conditional
//! phase and gate-time solving.
//!
//! All energies and frequencies are angular (rad per time unit); the caller
//! fixes the scale. No time-domain quantum dynamics happens here — this
//! module feeds scalar parameters (chi, t_pi) to protocol configs.

use crate::error::{Error, Result};

/// Device parameters of a flux-tunable transmon coupled to a readout
/// resonator.
#[derive(Debug, Clone)]
pub struct TransmonParams {
    /// charging energy
    pub e_c: f64,
    /// zero-flux Josephson energy
    pub e_j0: f64,
    /// qubit-resonator coupling
    pub g: f64,
    /// resonator frequency
    pub omega_r: f64,
    /// external flux (radians of the cosine argument)
    pub phi_x: f64,
}

impl TransmonParams {
    pub fn validate(&self) -> Result<()> {
        if self.e_c <= 0.0 || self.e_j0 <= 0.0 || self.g <= 0.0 {
            return Err(Error::InvalidArgument(
                "E_C, E_J(0) and g must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn josephson_energy(&self) -> f64 {
        josephson_energy(self.e_j0, self.phi_x)
    }

    /// The transmon approximation needs E_J/E_C >> 1; warn below 20.
    pub fn regime_warning(&self) -> Option<String> {
        let ratio = self.josephson_energy() / self.e_c;
        (ratio < 20.0).then(|| {
            format!("E_J/E_C = {ratio:.2} is below 20; transmon expansion is inaccurate")
        })
    }
}

/// Gaussian-edged detuning pulse: parked at Delta_0, plateau at
/// Delta_0 - Delta_t between t0 and t1, Gaussian edges of width tau.
#[derive(Debug, Clone)]
pub struct FluxPulse {
    pub delta0: f64,
    pub delta_t: f64,
    pub tau: f64,
    pub t0: f64,
    pub t1: f64,
}

impl FluxPulse {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::InvalidArgument("tau must be positive".into()));
        }
        if self.t1 < self.t0 {
            return Err(Error::InvalidArgument("t1 must not precede t0".into()));
        }
        Ok(())
    }

    pub fn plateau_detuning(&self) -> f64 {
        self.delta0 - self.delta_t
    }
}

/// Qubit transition frequency sqrt(8 E_J E_C) - E_C.
pub fn qubit_frequency(e_j: f64, e_c: f64) -> Result<f64> {
    if e_j <= 0.0 || e_c <= 0.0 {
        return Err(Error::InvalidArgument("E_J and E_C must be positive".into()));
    }
    Ok((8.0 * e_j * e_c).sqrt() - e_c)
}

/// Anharmonicity alpha = Omega_21 - Omega = -E_C.
pub fn anharmonicity(e_c: f64) -> f64 {
    -e_c
}

/// Dispersive shift chi = -g^2 E_C / (Delta (Delta - E_C)). The poles at
/// Delta = 0 and Delta = E_C are rejected.
pub fn dispersive_shift(g: f64, delta: f64, e_c: f64) -> Result<f64> {
    let pole_tol = 1e-9 * e_c.abs().max(1.0);
    if delta.abs() < pole_tol || (delta - e_c).abs() < pole_tol {
        return Err(Error::InvalidArgument(format!(
            "detuning {delta} sits on a dispersive pole (0 or E_C = {e_c})"
        )));
    }
    Ok(-g * g * e_c / (delta * (delta - e_c)))
}

/// The dispersive expansion needs |Delta| well above g.
pub fn dispersive_regime_warning(g: f64, delta: f64) -> Option<String> {
    (delta.abs() <= 3.0 * g).then(|| {
        format!(
            "|Delta| = {:.4e} is within 3g = {:.4e}; dispersive expansion is inaccurate",
            delta.abs(),
            3.0 * g
        )
    })
}

/// Flux-tunable Josephson energy E_J(Phi_x) = E_J(0) |cos Phi_x|.
pub fn josephson_energy(e_j0: f64, phi_x: f64) -> f64 {
    e_j0 * phi_x.cos().abs()
}

/// Piecewise detuning profile: Delta_0 - Delta_t e^{-(t-t0)^2/tau^2} before
/// the plateau, Delta_0 - Delta_t on [t0, t1], Gaussian recovery after t1.
pub fn detuning_profile(pulse: &FluxPulse, t: f64) -> f64 {
    let envelope = if t < pulse.t0 {
        let x = (t - pulse.t0) / pulse.tau;
        (-x * x).exp()
    } else if t > pulse.t1 {
        let x = (t - pulse.t1) / pulse.tau;
        (-x * x).exp()
    } else {
        1.0
    };
    pulse.delta0 - pulse.delta_t * envelope
}

/// Accumulated conditional phase phi = int 2 chi(t) dt over the window
/// [t0 - 5 tau, t1 + 5 tau] with chi(t) = -g^2 E_C / (Delta(t)(Delta(t) -
/// E_C)); composite trapezoid with the given step. Errors if the detuning
/// sweeps across a chi pole inside the window.
pub fn accumulated_phase_with_step(
    pulse: &FluxPulse,
    g: f64,
    e_c: f64,
    step: f64,
) -> Result<f64> {
    pulse.validate()?;
    if step <= 0.0 {
        return Err(Error::InvalidArgument("quadrature step must be positive".into()));
    }
    let a = pulse.t0 - 5.0 * pulse.tau;
    let b = pulse.t1 + 5.0 * pulse.tau;
    let n = ((b - a) / step).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    let chi_at = |t: f64| -> Result<f64> {
        let delta = detuning_profile(pulse, t);
        dispersive_shift(g, delta, e_c).map_err(|_| {
            Error::InvalidArgument(format!(
                "detuning profile crosses a dispersive pole at t = {t:.6}"
            ))
        })
    };
    // the profile is monotone on each edge: pole crossing shows up as a
    // sign change of Delta or Delta - E_C between the extremes
    for delta in [pulse.delta0, pulse.plateau_detuning()] {
        if delta.abs() < 1e-12 || (delta - e_c).abs() < 1e-12 {
            return Err(Error::InvalidArgument("pulse endpoint sits on a chi pole".into()));
        }
    }
    let (d0, dp) = (pulse.delta0, pulse.plateau_detuning());
    if d0.signum() != dp.signum() || (d0 - e_c).signum() != (dp - e_c).signum() {
        return Err(Error::InvalidArgument(
            "detuning sweep crosses a dispersive pole between park and plateau".into(),
        ));
    }
    let mut sum = 0.0;
    let mut prev = 2.0 * chi_at(a)?;
    for k in 1..=n {
        let t = a + k as f64 * h;
        let cur = 2.0 * chi_at(t)?;
        sum += 0.5 * (prev + cur) * h;
        prev = cur;
    }
    Ok(sum)
}

/// Accumulated phase at the default quadrature step tau/100.
pub fn accumulated_phase(pulse: &FluxPulse, g: f64, e_c: f64) -> Result<f64> {
    accumulated_phase_with_step(pulse, g, e_c, pulse.tau / 100.0)
}

/// Output of the gate-time search; the two reference times surface the
/// factor-2 ambiguity between the pi/chi and pi/(2 chi) timing conventions.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub qubit_freq_parked: f64,
    pub anharmonicity: f64,
    pub chi_parked: f64,
    pub chi_plateau: f64,
    /// solved plateau duration t1 - t0
    pub t_pi: f64,
    pub accumulated_phase: f64,
    /// pi / (2 |chi_plateau|)
    pub reference_half: f64,
    /// pi / |chi_plateau|
    pub reference_full: f64,
    pub warnings: Vec<String>,
}

/// Bisect the plateau duration t1 - t0 so the accumulated phase hits the
/// target (-pi by default) within 1e-6 rad. The bracket is
/// (0, 10/|chi_plateau|).
pub fn solve_gate_time(
    params: &TransmonParams,
    pulse: &FluxPulse,
    target_phase: f64,
) -> Result<CalibrationReport> {
    params.validate()?;
    pulse.validate()?;
    let chi_plateau = dispersive_shift(params.g, pulse.plateau_detuning(), params.e_c)?;
    let chi_parked = dispersive_shift(params.g, pulse.delta0, params.e_c)?;
    if chi_plateau == 0.0 {
        return Err(Error::InvalidArgument("plateau chi vanishes".into()));
    }
    let phase_at = |gap: f64| -> Result<f64> {
        let p = FluxPulse {
            t1: pulse.t0 + gap,
            ..pulse.clone()
        };
        accumulated_phase(&p, params.g, params.e_c)
    };
    let mut lo = 0.0;
    let mut hi = 10.0 / chi_plateau.abs();
    let f_lo = phase_at(lo)? - target_phase;
    let f_hi = phase_at(hi)? - target_phase;
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoBracket(format!(
            "phase - target keeps sign over (0, {hi:.4e}): {f_lo:.4e} .. {f_hi:.4e}"
        )));
    }
    let mut f_lo = f_lo;
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let f_mid = phase_at(mid)? - target_phase;
        if f_mid.abs() < 1e-6 {
            break;
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let phi = phase_at(mid)?;
    if (phi - target_phase).abs() >= 1e-6 {
        return Err(Error::NoBracket(format!("bisection stalled at phi = {phi:.9}")));
    }

    let mut warnings = Vec::new();
    if let Some(w) = params.regime_warning() {
        warnings.push(w);
    }
    if let Some(w) = dispersive_regime_warning(params.g, pulse.plateau_detuning()) {
        warnings.push(w);
    }
    Ok(CalibrationReport {
        qubit_freq_parked: qubit_frequency(params.josephson_energy(), params.e_c)?,
        anharmonicity: anharmonicity(params.e_c),
        chi_parked,
        chi_plateau,
        t_pi: mid,
        accumulated_phase: phi,
        reference_half: std::f64::consts::PI / (2.0 * chi_plateau.abs()),
        reference_full: std::f64::consts::PI / chi_plateau.abs(),
        warnings,
    })
}

/// Reference parameter set in units of rad/ns (so 2pi x 1 GHz = TAU):
/// E_C = 2pi x 300 MHz, E_J/E_C = 75 at the 0.3 pi flux parking point,
/// g = 2pi x 31 MHz, plateau detuning -2pi x 250 MHz reached from a park
/// 2pi x 1.9 GHz further out, tau = 10 ns.
pub fn reference_calibration() -> (TransmonParams, FluxPulse) {
    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
    let e_c = TWO_PI * 0.300;
    let phi_x = 0.3 * std::f64::consts::PI;
    let e_j_parked = 75.0 * e_c;
    let e_j0 = e_j_parked / phi_x.cos();
    let omega_parked = qubit_frequency(e_j_parked, e_c).unwrap();
    let plateau = -TWO_PI * 0.250;
    let params = TransmonParams {
        e_c,
        e_j0,
        g: TWO_PI * 0.031,
        omega_r: omega_parked - plateau,
        phi_x,
    };
    // the pulse pulls the qubit 2pi x 1.9 GHz closer to the resonator; the
    // park sits further below so the sweep never crosses the chi poles
    let delta_t = -TWO_PI * 1.9;
    let pulse = FluxPulse {
        delta0: plateau + delta_t,
        delta_t,
        tau: 10.0,
        t0: 0.0,
        t1: 0.0,
    };
    (params, pulse)
}
