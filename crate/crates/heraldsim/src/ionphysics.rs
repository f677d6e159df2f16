//! Stochastic state machine for the relevant ⁴⁰Ca⁺ levels: photon absorption
//! with branching decay, spontaneous metastable decay, coherent 729 nm
//! pulses, 397 nm shelving, and fluorescence state measurement.
//!
//! This is a classical trajectory model: the ion occupies exactly one level
//! at any time and every transition is a probabilistic jump. All reported
//! observables of the experiment are click statistics, so no coherences are
//! tracked.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};

pub const PS_PER_S: f64 = 1e12;

/// Zeeman-resolved levels the trajectory can occupy.
///
/// `S12` is S₁/₂(m=−1/2); `D52Prep` is the absorption-ready D₅/₂(m=−5/2);
/// `D52Aux` is the auxiliary D₅/₂(m=+3/2) used by the discrimination pulses;
/// `P32` is the short-lived P₃/₂(m=−3/2) reached by absorption; `D32Shelf`
/// is the D₃/₂ storage level for the shelving extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IonState {
    S12,
    D52Prep,
    D52Aux,
    P32,
    D32Shelf,
}

impl IonState {
    /// True for the two D₅/₂ sublevels subject to spontaneous decay.
    pub fn in_d52(self) -> bool {
        matches!(self, IonState::D52Prep | IonState::D52Aux)
    }
}

/// Fluorescence readout of the cooling-laser phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FluorescenceOutcome {
    Bright,
    Dark,
}

/// Ion transition parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonParams {
    /// P₃/₂ lifetime in seconds.
    pub tau_p: f64,
    /// D₅/₂ lifetime in seconds.
    pub tau_d: f64,
    /// P₃/₂ → S₁/₂ branching probability (the 393 nm herald branch).
    pub branch_to_s: f64,
    /// Probability that the initial preparation leaves the ion in S₁/₂.
    pub p_prep_fail: f64,
    /// Failure probability per 729 nm π-pulse.
    pub p_pulse_error: f64,
}

impl Default for IonParams {
    fn default() -> IonParams {
        IonParams {
            tau_p: 7.2e-9,
            tau_d: 1.17,
            branch_to_s: 0.935,
            p_prep_fail: 0.01,
            p_pulse_error: 0.0,
        }
    }
}

impl IonParams {
    pub fn validate(&self) -> Result<()> {
        crate::error::require_positive("tau_p", self.tau_p)?;
        crate::error::require_positive("tau_d", self.tau_d)?;
        crate::error::require_probability("branch_to_s", self.branch_to_s)?;
        crate::error::require_probability("p_prep_fail", self.p_prep_fail)?;
        crate::error::require_probability("p_pulse_error", self.p_pulse_error)
    }
}

/// Attempts absorption of a resonant 854 nm photon.
///
/// Only the prepared D₅/₂(m=−5/2) level absorbs; any other input is returned
/// unchanged. On absorption, the ion passes through P₃/₂ and with probability
/// `branch_to_s` decays to the ground state, releasing the 393 nm herald
/// after an exponential delay (mean `tau_p`, returned in picoseconds);
/// otherwise it falls back to D₅/₂(m=−5/2) without a herald.
pub fn absorb_photon(
    state: IonState,
    params: &IonParams,
    rng: &mut impl Rng,
) -> (IonState, Option<i64>) {
    if state != IonState::D52Prep {
        return (state, None);
    }
    if rng.random_bool(params.branch_to_s) {
        let delay_s = Exp::new(1.0 / params.tau_p)
            .expect("tau_p validated")
            .sample(rng);
        ((IonState::S12), Some((delay_s * PS_PER_S).round() as i64))
    } else {
        (IonState::D52Prep, None)
    }
}

/// Spontaneous D₅/₂ → S₁/₂ decay over an exposure window.
///
/// Either D₅/₂ sublevel decays with probability `1 − exp(−window/tau_d)`;
/// conditional on decaying, the decay time is constant-hazard distributed
/// within the window (truncated exponential, returned in picoseconds from
/// the window start). Other levels are unaffected.
pub fn spontaneous_decay(
    state: IonState,
    window_s: f64,
    params: &IonParams,
    rng: &mut impl Rng,
) -> (IonState, Option<i64>) {
    if !state.in_d52() || window_s <= 0.0 {
        return (state, None);
    }
    let p_decay = -(-window_s / params.tau_d).exp_m1();
    if rng.random_bool(p_decay) {
        // Inverse CDF of the exponential truncated to [0, window):
        // t = -tau * ln(1 - u * p_decay).
        let u: f64 = rng.random();
        let t_s = -params.tau_d * (-u * p_decay).ln_1p();
        let t_ps = ((t_s * PS_PER_S) as i64).clamp(0, (window_s * PS_PER_S) as i64 - 1);
        (IonState::S12, Some(t_ps))
    } else {
        (state, None)
    }
}

/// Level pairs the narrow-band 729 nm laser can drive.
fn pulse_pair_allowed(from: IonState, to: IonState) -> bool {
    matches!(
        (from, to),
        (IonState::S12, IonState::D52Prep)
            | (IonState::D52Prep, IonState::S12)
            | (IonState::S12, IonState::D52Aux)
            | (IonState::D52Aux, IonState::S12)
    )
}

/// Applies a 729 nm π-pulse between `from` and `to`.
///
/// Population in `from` moves to `to` with probability `1 − p_pulse_error`;
/// every other level — in particular the D₃/₂ shelf — is untouched.
pub fn pi_pulse(
    state: IonState,
    from: IonState,
    to: IonState,
    params: &IonParams,
    rng: &mut impl Rng,
) -> Result<IonState> {
    if !pulse_pair_allowed(from, to) {
        return Err(Error::InvalidTransition(format!(
            "no 729 nm transition drives {from:?} -> {to:?}"
        )));
    }
    if state != from {
        return Ok(state);
    }
    let moved = params.p_pulse_error == 0.0 || !rng.random_bool(params.p_pulse_error);
    Ok(if moved { to } else { state })
}

/// 397 nm storage pulse: moves remaining S₁/₂ population to the D₃/₂ shelf.
pub fn shelve_397(state: IonState) -> IonState {
    match state {
        IonState::S12 => IonState::D32Shelf,
        other => other,
    }
}

/// Fluorescence state measurement with the cooling lasers.
///
/// The 397/866 nm lasers drive S₁/₂ and D₃/₂, so those levels turn bright;
/// population left in either D₅/₂ sublevel stays dark. The preceding π-pulse
/// pair has already swapped populations, so a dark result marks an
/// absorption-like history. P₃/₂ decays within nanoseconds and must never
/// persist to measurement.
pub fn fluorescence_measure(state: IonState) -> Result<FluorescenceOutcome> {
    match state {
        IonState::S12 | IonState::D32Shelf => Ok(FluorescenceOutcome::Bright),
        IonState::D52Prep | IonState::D52Aux => Ok(FluorescenceOutcome::Dark),
        IonState::P32 => Err(Error::InvalidState(
            "P32 cannot persist to the fluorescence measurement".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn absorb_from_unprepared_states_is_a_no_op() {
        let params = IonParams::default();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for state in [
            IonState::S12,
            IonState::D52Aux,
            IonState::D32Shelf,
            IonState::P32,
        ] {
            assert_eq!(absorb_photon(state, &params, &mut rng), (state, None));
        }
    }

    #[test]
    fn absorb_branching_fraction_matches_branch_to_s() {
        let params = IonParams::default();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let n = 1_000_000u64;
        let mut heralds = 0u64;
        for _ in 0..n {
            let (state, delay) = absorb_photon(IonState::D52Prep, &params, &mut rng);
            match delay {
                Some(_) => {
                    heralds += 1;
                    assert_eq!(state, IonState::S12);
                }
                None => assert_eq!(state, IonState::D52Prep),
            }
        }
        let p = 0.935;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let frac = heralds as f64 / n as f64;
        assert!(
            (frac - p).abs() < 3.0 * sigma,
            "herald fraction {frac} vs {p} +- {}",
            3.0 * sigma
        );
    }

    #[test]
    fn emission_delays_are_exponential_with_mean_tau_p() {
        let params = IonParams::default();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut delays = Vec::new();
        while delays.len() < 1_000_000 {
            if let (_, Some(d)) = absorb_photon(IonState::D52Prep, &params, &mut rng) {
                delays.push(d as f64);
            }
        }
        let n = delays.len() as f64;
        let mean = delays.iter().sum::<f64>() / n;
        let tau_ps = 7.2e-9 * PS_PER_S;
        // Exponential: sd = mean, so the sample mean carries sd tau/sqrt(n).
        let tol = 3.0 * tau_ps / n.sqrt();
        assert!(
            (mean - tau_ps).abs() < tol,
            "mean delay {mean} ps vs {tau_ps} +- {tol}"
        );

        // Rate from a log-linear fit over the binned histogram, within 5%.
        let bin_ps = 1_000.0;
        let n_bins = 40;
        let mut counts = vec![0u64; n_bins];
        for &d in &delays {
            let i = (d / bin_ps) as usize;
            if i < n_bins {
                counts[i] += 1;
            }
        }
        let pts: Vec<(f64, f64)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| ((i as f64 + 0.5) * bin_ps, (c as f64).ln()))
            .collect();
        let m = pts.len() as f64;
        let sx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let sy = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let slope = pts.iter().map(|p| (p.0 - sx) * (p.1 - sy)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - sx).powi(2)).sum::<f64>();
        let fitted_rate = -slope; // per ps
        let true_rate = 1.0 / tau_ps;
        assert!(
            (fitted_rate - true_rate).abs() / true_rate < 0.05,
            "fitted rate {fitted_rate} vs {true_rate}"
        );
    }

    #[test]
    fn decay_probability_matches_closed_form_across_windows() {
        let params = IonParams::default();
        let n = 1_000_000u64;
        for (seed, window) in [(3u64, 0.5e-3), (4, 1.0e-3), (5, 2.0e-3)] {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut decays = 0u64;
            for _ in 0..n {
                let (state, t) = spontaneous_decay(IonState::D52Prep, window, &params, &mut rng);
                if let Some(t_ps) = t {
                    decays += 1;
                    assert_eq!(state, IonState::S12);
                    assert!(t_ps >= 0 && (t_ps as f64) < window * PS_PER_S);
                } else {
                    assert_eq!(state, IonState::D52Prep);
                }
            }
            let p = -(-window / 1.17f64).exp_m1();
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            let frac = decays as f64 / n as f64;
            assert!(
                (frac - p).abs() < 3.0 * sigma,
                "window {window}: decay fraction {frac} vs {p} +- {}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn two_ms_window_decay_probability_is_0p17_percent() {
        // Closed form: 1 - exp(-0.002/1.17) = 1.7079e-3.
        let p = -(-0.002f64 / 1.17).exp_m1();
        assert!((p - 1.7079e-3).abs() < 1e-6);
    }

    #[test]
    fn zero_window_never_decays() {
        let params = IonParams::default();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..10_000 {
            let (state, t) = spontaneous_decay(IonState::D52Prep, 0.0, &params, &mut rng);
            assert_eq!((state, t), (IonState::D52Prep, None));
        }
    }

    #[test]
    fn non_d52_levels_do_not_decay() {
        let params = IonParams::default();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for state in [IonState::S12, IonState::D32Shelf] {
            let (s, t) = spontaneous_decay(state, 1.0, &params, &mut rng);
            assert_eq!((s, t), (state, None));
        }
    }

    #[test]
    fn pi_pulse_transition_table() {
        let params = IonParams::default();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        // Pulse S -> D_aux: moves only S population.
        assert_eq!(
            pi_pulse(
                IonState::S12,
                IonState::S12,
                IonState::D52Aux,
                &params,
                &mut rng
            )
            .unwrap(),
            IonState::D52Aux
        );
        assert_eq!(
            pi_pulse(
                IonState::D52Prep,
                IonState::S12,
                IonState::D52Aux,
                &params,
                &mut rng
            )
            .unwrap(),
            IonState::D52Prep
        );
        assert_eq!(
            pi_pulse(
                IonState::D32Shelf,
                IonState::S12,
                IonState::D52Aux,
                &params,
                &mut rng
            )
            .unwrap(),
            IonState::D32Shelf
        );
        // Pulse D_prep -> S: moves only D_prep population.
        assert_eq!(
            pi_pulse(
                IonState::D52Prep,
                IonState::D52Prep,
                IonState::S12,
                &params,
                &mut rng
            )
            .unwrap(),
            IonState::S12
        );
        assert_eq!(
            pi_pulse(
                IonState::D32Shelf,
                IonState::D52Prep,
                IonState::S12,
                &params,
                &mut rng
            )
            .unwrap(),
            IonState::D32Shelf
        );
    }

    #[test]
    fn pi_pulse_rejects_undriven_pairs() {
        let params = IonParams::default();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for (from, to) in [
            (IonState::D52Prep, IonState::D52Aux),
            (IonState::S12, IonState::D32Shelf),
            (IonState::S12, IonState::P32),
            (IonState::D32Shelf, IonState::S12),
        ] {
            let err = pi_pulse(IonState::S12, from, to, &params, &mut rng).unwrap_err();
            assert!(matches!(err, Error::InvalidTransition(_)));
        }
    }

    #[test]
    fn pi_pulse_error_probability_one_never_moves() {
        let params = IonParams {
            p_pulse_error: 1.0,
            ..IonParams::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        for _ in 0..1_000 {
            let out = pi_pulse(
                IonState::S12,
                IonState::S12,
                IonState::D52Aux,
                &params,
                &mut rng,
            )
            .unwrap();
            assert_eq!(out, IonState::S12);
        }
    }

    #[test]
    fn shelving_moves_only_ground_population() {
        assert_eq!(shelve_397(IonState::S12), IonState::D32Shelf);
        assert_eq!(shelve_397(IonState::D52Prep), IonState::D52Prep);
        assert_eq!(shelve_397(IonState::D32Shelf), IonState::D32Shelf);
        assert_eq!(shelve_397(IonState::D52Aux), IonState::D52Aux);
    }

    #[test]
    fn fluorescence_table() {
        assert_eq!(
            fluorescence_measure(IonState::S12).unwrap(),
            FluorescenceOutcome::Bright
        );
        assert_eq!(
            fluorescence_measure(IonState::D32Shelf).unwrap(),
            FluorescenceOutcome::Bright
        );
        assert_eq!(
            fluorescence_measure(IonState::D52Prep).unwrap(),
            FluorescenceOutcome::Dark
        );
        assert_eq!(
            fluorescence_measure(IonState::D52Aux).unwrap(),
            FluorescenceOutcome::Dark
        );
        assert!(matches!(
            fluorescence_measure(IonState::P32),
            Err(Error::InvalidState(_))
        ));
    }

    /// The discrimination sequence maps each pre-pulse level to the readout
    /// documenting its window history: ground (absorption-like) reads dark,
    /// still-prepared reads bright, shelf reads bright.
    #[test]
    fn discrimination_sequence_outcomes() {
        let params = IonParams::default();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let run = |start: IonState, rng: &mut ChaCha12Rng| {
            let s = pi_pulse(start, IonState::S12, IonState::D52Aux, &params, rng).unwrap();
            let s = pi_pulse(s, IonState::D52Prep, IonState::S12, &params, rng).unwrap();
            fluorescence_measure(s).unwrap()
        };
        assert_eq!(run(IonState::S12, &mut rng), FluorescenceOutcome::Dark);
        assert_eq!(
            run(IonState::D52Prep, &mut rng),
            FluorescenceOutcome::Bright
        );
        assert_eq!(
            run(IonState::D32Shelf, &mut rng),
            FluorescenceOutcome::Bright
        );
    }
}
