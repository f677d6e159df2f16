//! Orchestration of the repeating experimental cycle: cooling, pumping,
//! preparation, the 2 ms interaction window, the discrimination pulse pair,
//! and the fluorescence state measurement — emitting the time-tag stream and
//! per-cycle ground-truth records.
//!
//! Detection is gated to the interaction window: the tagger records APD and
//! PMT events only while the window of an active (non-locked-out) cycle is
//! open, which makes the accumulated two-detector exposure equal the
//! effective interaction time. Cycles hit by the periodic filter-cavity
//! stabilization receive no source photons and record no detector clicks,
//! but the ion sequence itself (preparation, decay, pulses, measurement)
//! still runs.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::ionphysics::{
    absorb_photon, fluorescence_measure, pi_pulse, shelve_397, spontaneous_decay,
    FluorescenceOutcome, IonParams, IonState, PS_PER_S,
};
use crate::source::{
    herald_partner, sample_dark_counts, sample_pair_times, DetectorParams, SourceParams,
};
use crate::timetag::{is_ordered, Channel, TimeTag};

/// Timing and protocol parameters of the experimental sequence.
///
/// The post-sequence (`t_postseq`) covers everything after the interaction
/// window: the two discrimination pulses followed by the `t_measure`
/// fluorescence readout, so `t_measure <= t_postseq` and
/// `t_cool + t_pump + t_prep + t_window + t_postseq <= 1/rep_rate`.
/// Remaining slack sits after the measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceParams {
    /// Cycle repetition rate, Hz.
    pub rep_rate: f64,
    /// Doppler-cooling phase, s.
    pub t_cool: f64,
    /// Optical-pumping phase, s.
    pub t_pump: f64,
    /// 729 nm preparation pulse, s.
    pub t_prep: f64,
    /// Interaction window, s.
    pub t_window: f64,
    /// Fluorescence readout inside the post-sequence, s.
    pub t_measure: f64,
    /// Post-sequence after the window (pulses + readout), s.
    pub t_postseq: f64,
    /// Fraction of cycles not lost to filter-cavity stabilization.
    pub lock_duty: f64,
    /// Store failed-preparation population in D₃/₂ before the window.
    pub enable_shelving_397: bool,
    /// Total wall-clock run length, s.
    pub run_duration: f64,
    /// Extra per-cycle probability of a dark state-measurement result, on top
    /// of the modeled physics. Calibration knob for the residual background
    /// of the reference run; set to 0 for the physics-only model.
    pub p_dark_extra: f64,
}

impl Default for SequenceParams {
    fn default() -> SequenceParams {
        SequenceParams {
            rep_rate: 401.0,
            t_cool: 100e-6,
            t_pump: 60e-6,
            t_prep: 7e-6,
            t_window: 2e-3,
            t_measure: 250e-6,
            t_postseq: 300e-6,
            lock_duty: 0.85,
            enable_shelving_397: false,
            run_duration: 36_000.0,
            p_dark_extra: 0.044,
        }
    }
}

impl SequenceParams {
    pub fn validate(&self) -> Result<()> {
        crate::error::require_positive("rep_rate", self.rep_rate)?;
        for (name, t) in [
            ("t_cool", self.t_cool),
            ("t_pump", self.t_pump),
            ("t_prep", self.t_prep),
            ("t_window", self.t_window),
            ("t_measure", self.t_measure),
            ("t_postseq", self.t_postseq),
            ("run_duration", self.run_duration),
        ] {
            crate::error::require_nonnegative(name, t)?;
        }
        crate::error::require_probability("lock_duty", self.lock_duty)?;
        crate::error::require_probability("p_dark_extra", self.p_dark_extra)?;
        let phases = self.t_cool + self.t_pump + self.t_prep + self.t_window + self.t_postseq;
        let period = 1.0 / self.rep_rate;
        if phases > period * (1.0 + 1e-12) {
            return Err(Error::InvalidParam(format!(
                "phase durations sum to {phases} s, exceeding the {period} s cycle period"
            )));
        }
        if self.t_measure > self.t_postseq {
            return Err(Error::InvalidParam(format!(
                "t_measure={} exceeds the post-sequence {}",
                self.t_measure, self.t_postseq
            )));
        }
        Ok(())
    }

    /// Cycle period in picoseconds.
    pub fn period_ps(&self) -> i64 {
        (PS_PER_S / self.rep_rate).round() as i64
    }

    /// Offset of the window start within a cycle (cool + pump + prep), ps.
    pub fn preamble_ps(&self) -> i64 {
        ((self.t_cool + self.t_pump + self.t_prep) * PS_PER_S).round() as i64
    }

    pub fn window_ps(&self) -> i64 {
        (self.t_window * PS_PER_S).round() as i64
    }

    pub fn postseq_ps(&self) -> i64 {
        (self.t_postseq * PS_PER_S).round() as i64
    }

    /// Number of cycles in the run.
    pub fn n_cycles(&self) -> u64 {
        (self.run_duration * self.rep_rate + 1e-9).floor() as u64
    }
}

/// Outcome of the per-cycle state measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Measurement {
    Bright,
    Dark,
    /// No measurement recorded for this cycle. Never produced by
    /// [`run_experiment`]; accepted in record files for completeness.
    Skipped,
}

impl std::fmt::Display for Measurement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Measurement::Bright => "BRIGHT",
            Measurement::Dark => "DARK",
            Measurement::Skipped => "SKIPPED",
        })
    }
}

impl std::str::FromStr for Measurement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Measurement> {
        match s {
            "BRIGHT" => Ok(Measurement::Bright),
            "DARK" => Ok(Measurement::Dark),
            "SKIPPED" => Ok(Measurement::Skipped),
            other => Err(Error::Format(format!("unknown measurement {other:?}"))),
        }
    }
}

/// Per-cycle ground truth and state-measurement outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleRecord {
    pub cycle_index: u64,
    pub window_start: i64,
    /// End of the interaction window, ps. Not part of the records CSV;
    /// records loaded from CSV carry `window_start` here.
    pub window_end: i64,
    pub prep_ok: bool,
    /// A photon absorption completed to the ground state (releasing the
    /// 393 nm herald). Attempts that fell back to D₅/₂ do not count.
    pub absorbed: bool,
    pub absorption_time: Option<i64>,
    /// The 393 nm herald photon was emitted (equivalently: `absorbed`).
    pub herald_emitted: bool,
    pub spont_decayed: bool,
    pub measurement: Measurement,
    pub locked_out: bool,
}

/// Ground-truth classification of a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CycleTruth {
    TrueAbsorption,
    SpontDecay,
    PrepFail,
    Clean,
}

/// Priority classification: absorption outranks spontaneous decay outranks
/// failed preparation.
pub fn classify_cycle(record: &CycleRecord) -> CycleTruth {
    if record.absorbed {
        CycleTruth::TrueAbsorption
    } else if record.spont_decayed {
        CycleTruth::SpontDecay
    } else if !record.prep_ok {
        CycleTruth::PrepFail
    } else {
        CycleTruth::Clean
    }
}

/// Runs the full experiment, returning the time-ordered tag stream and one
/// record per cycle. Deterministic for a fixed seed: each cycle draws from
/// its own counter-mode substream keyed by (seed, cycle index), so results
/// are independent of scheduling.
pub fn run_experiment(
    seq: &SequenceParams,
    src: &SourceParams,
    det: &DetectorParams,
    ion_params: &IonParams,
    seed: u64,
) -> Result<(Vec<TimeTag>, Vec<CycleRecord>)> {
    seq.validate()?;
    src.validate()?;
    det.validate()?;
    ion_params.validate()?;

    let period = seq.period_ps();
    let preamble = seq.preamble_ps();
    let window = seq.window_ps();
    let postseq = seq.postseq_ps();
    let n_cycles = seq.n_cycles();

    let base_rng = ChaCha12Rng::seed_from_u64(seed);
    let mut tags: Vec<TimeTag> = Vec::new();
    let mut records: Vec<CycleRecord> = Vec::with_capacity(n_cycles as usize);
    let mut cycle_tags: Vec<TimeTag> = Vec::new();

    for cycle_index in 0..n_cycles {
        let mut rng = base_rng.clone();
        rng.set_stream(cycle_index);

        let cycle_start = cycle_index as i64 * period;
        let window_start = cycle_start + preamble;
        let window_end = window_start + window;
        let measure_end = window_end + postseq;

        cycle_tags.clear();
        cycle_tags.push(TimeTag::new(Channel::CycleStart, cycle_start));

        let locked_out = !rng.random_bool(seq.lock_duty);
        let prep_ok = !rng.random_bool(ion_params.p_prep_fail);
        let mut ion = if prep_ok {
            IonState::D52Prep
        } else {
            IonState::S12
        };
        if !prep_ok && seq.enable_shelving_397 {
            ion = shelve_397(ion);
        }

        let mut absorbed = false;
        let mut absorption_time = None;

        if !locked_out {
            for pair_time in
                sample_pair_times(src.resonant_rate, window_start, window_end, &mut rng)?
            {
                if let Some(tag) = herald_partner(pair_time, src, det, &mut rng) {
                    cycle_tags.push(tag);
                }
                if ion == IonState::D52Prep && src.p_abs > 0.0 && rng.random_bool(src.p_abs) {
                    let (next, emission_delay) = absorb_photon(ion, ion_params, &mut rng);
                    ion = next;
                    if let Some(delay) = emission_delay {
                        absorbed = true;
                        absorption_time = Some(pair_time);
                        if rng.random_bool(det.eta_393) {
                            let pmt = if rng.random_bool(0.5) {
                                Channel::Pmt393A
                            } else {
                                Channel::Pmt393B
                            };
                            cycle_tags.push(TimeTag::new(pmt, pair_time + delay));
                        }
                    }
                }
            }
            cycle_tags.extend(sample_dark_counts(
                det.dark_rate_apd,
                Channel::Apd854,
                window_start,
                window_end,
                &mut rng,
            )?);
            for t in sample_pair_times(det.dark_rate_pmt, window_start, window_end, &mut rng)? {
                let pmt = if rng.random_bool(0.5) {
                    Channel::Pmt393A
                } else {
                    Channel::Pmt393B
                };
                cycle_tags.push(TimeTag::new(pmt, t));
            }
        }

        let mut spont_decayed = false;
        if ion.in_d52() {
            let (next, decay_time) = spontaneous_decay(ion, seq.t_window, ion_params, &mut rng);
            if decay_time.is_some() {
                spont_decayed = true;
                ion = next;
            }
        }

        ion = pi_pulse(ion, IonState::S12, IonState::D52Aux, ion_params, &mut rng)?;
        ion = pi_pulse(ion, IonState::D52Prep, IonState::S12, ion_params, &mut rng)?;
        let mut measurement = match fluorescence_measure(ion)? {
            FluorescenceOutcome::Bright => Measurement::Bright,
            FluorescenceOutcome::Dark => Measurement::Dark,
        };
        if seq.p_dark_extra > 0.0 && rng.random_bool(seq.p_dark_extra) {
            measurement = Measurement::Dark;
        }
        cycle_tags.push(TimeTag::new(
            match measurement {
                Measurement::Dark => Channel::CycleDark,
                _ => Channel::CycleBright,
            },
            measure_end,
        ));

        cycle_tags.sort_by_key(|t| t.sort_key());
        tags.extend_from_slice(&cycle_tags);

        records.push(CycleRecord {
            cycle_index,
            window_start,
            window_end,
            prep_ok,
            absorbed,
            absorption_time,
            herald_emitted: absorbed,
            spont_decayed,
            measurement,
            locked_out,
        });
    }

    // Cycle blocks only touch when the phases fill the period exactly, in
    // which case a measurement marker can tie with the next cycle start.
    if !is_ordered(&tags) {
        tags.sort_by_key(|t| t.sort_key());
    }
    Ok((tags, records))
}

/// Aggregate counts over a run's records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CycleStats {
    pub n_cycles: u64,
    pub n_locked: u64,
    pub n_dark: u64,
    pub n_bright: u64,
    pub n_skipped: u64,
    pub n_prep_fail: u64,
    pub n_absorbed: u64,
    pub n_spont: u64,
    /// Dark measurements among non-locked cycles (the post-selection keep set
    /// that matters for detector exposure).
    pub n_dark_unlocked: u64,
}

pub fn summarize(records: &[CycleRecord]) -> CycleStats {
    let mut s = CycleStats {
        n_cycles: records.len() as u64,
        ..CycleStats::default()
    };
    for r in records {
        match r.measurement {
            Measurement::Dark => s.n_dark += 1,
            Measurement::Bright => s.n_bright += 1,
            Measurement::Skipped => s.n_skipped += 1,
        }
        if r.locked_out {
            s.n_locked += 1;
        } else if r.measurement == Measurement::Dark {
            s.n_dark_unlocked += 1;
        }
        if !r.prep_ok {
            s.n_prep_fail += 1;
        }
        if r.absorbed {
            s.n_absorbed += 1;
        }
        if r.spont_decayed {
            s.n_spont += 1;
        }
    }
    s
}

const RECORDS_HEADER: &str =
    "cycle,window_start_ps,prep_ok,absorbed,absorption_time_ps,herald_emitted,spont_decayed,measurement,locked_out";

/// Writes the per-cycle records CSV. The format does not carry `window_end`.
pub fn write_records_csv<W: Write>(
    records: &[CycleRecord],
    provenance: Option<&str>,
    sink: &mut W,
) -> Result<()> {
    if let Some(line) = provenance {
        writeln!(sink, "# {line}")?;
    }
    writeln!(sink, "{RECORDS_HEADER}")?;
    for r in records {
        let abs_time = r.absorption_time.map(|t| t.to_string()).unwrap_or_default();
        writeln!(
            sink,
            "{},{},{},{},{},{},{},{},{}",
            r.cycle_index,
            r.window_start,
            r.prep_ok,
            r.absorbed,
            abs_time,
            r.herald_emitted,
            r.spont_decayed,
            r.measurement,
            r.locked_out,
        )?;
    }
    Ok(())
}

/// Reads the records CSV. `window_end` is not stored in the format and is
/// set equal to `window_start` on load; downstream operations on loaded
/// records use only `window_start` and `measurement`.
pub fn read_records_csv<R: Read>(source: &mut R) -> Result<Vec<CycleRecord>> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    match lines.next() {
        Some((_, header)) if header.trim() == RECORDS_HEADER => {}
        Some((n, header)) => {
            return Err(Error::Format(format!(
                "line {}: unexpected records header {header:?}",
                n + 1
            )))
        }
        None => return Err(Error::Format("empty records CSV".into())),
    }

    let parse_bool = |n: usize, field: &str, s: &str| -> Result<bool> {
        s.parse::<bool>()
            .map_err(|_| Error::Format(format!("line {}: bad boolean {s:?} for {field}", n + 1)))
    };

    let mut records = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 9 {
            return Err(Error::Format(format!(
                "line {}: expected 9 fields, got {}",
                n + 1,
                fields.len()
            )));
        }
        let cycle_index: u64 = fields[0]
            .parse()
            .map_err(|e| Error::Format(format!("line {}: bad cycle index: {e}", n + 1)))?;
        let window_start: i64 = fields[1]
            .parse()
            .map_err(|e| Error::Format(format!("line {}: bad window_start_ps: {e}", n + 1)))?;
        let absorption_time = if fields[4].is_empty() {
            None
        } else {
            Some(fields[4].parse::<i64>().map_err(|e| {
                Error::Format(format!("line {}: bad absorption_time_ps: {e}", n + 1))
            })?)
        };
        records.push(CycleRecord {
            cycle_index,
            window_start,
            window_end: window_start,
            prep_ok: parse_bool(n, "prep_ok", fields[2])?,
            absorbed: parse_bool(n, "absorbed", fields[3])?,
            absorption_time,
            herald_emitted: parse_bool(n, "herald_emitted", fields[5])?,
            spont_decayed: parse_bool(n, "spont_decayed", fields[6])?,
            measurement: fields[7].parse()?,
            locked_out: parse_bool(n, "locked_out", fields[8])?,
        });
    }
    Ok(records)
}
