//! Flat dotted-key run configuration: parsing, validation, and the resolved
//! echo that records every default applied.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ionphysics::IonParams;
use crate::sequence::SequenceParams;
use crate::source::{DetectorParams, SourceParams};
use crate::timetag::Histogram;

/// Correlation-grid settings shared by the analysis commands.
///
/// The default range is a hair over +-2.5 us so that the 50 ns grid centers
/// a bin on zero delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrelationGrid {
    pub bin_width_ps: i64,
    pub t_min_ps: i64,
    pub t_max_ps: i64,
}

impl Default for CorrelationGrid {
    fn default() -> CorrelationGrid {
        CorrelationGrid {
            bin_width_ps: 50_000,
            t_min_ps: -2_525_000,
            t_max_ps: 2_525_000,
        }
    }
}

impl CorrelationGrid {
    pub fn validate(&self) -> Result<()> {
        Histogram::new(self.bin_width_ps, self.t_min_ps, self.t_max_ps).map(|_| ())
    }
}

/// Full run configuration. Every key is optional in the config file; the
/// defaults reproduce the reference experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub source: SourceParams,
    pub detector: DetectorParams,
    pub ion: IonParams,
    pub sequence: SequenceParams,
    pub correlation: CorrelationGrid,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            seed: 1001,
            output_dir: PathBuf::from("heraldsim_out"),
            source: SourceParams::default(),
            detector: DetectorParams::default(),
            ion: IonParams::default(),
            sequence: SequenceParams::default(),
            correlation: CorrelationGrid::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.detector.validate()?;
        self.ion.validate()?;
        self.sequence.validate()?;
        self.correlation.validate()
    }

    /// Parses the flat `key = value` format. Blank lines and `#` comments are
    /// ignored; unknown or repeated keys are rejected with line diagnostics.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw_line.split_once('#') {
                Some((before, _)) => before.trim(),
                None => raw_line.trim(),
            };
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {line_no}: expected `key = value`, got {raw_line:?}"
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(Error::Config(format!(
                    "line {line_no}: key {key:?} has no value"
                )));
            }
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!(
                    "line {line_no}: key {key:?} set twice"
                )));
            }
            seen.push(key.to_string());
            config
                .apply(key, value)
                .map_err(|e| Error::Config(format!("line {line_no}: {e}")))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let f64_value = || -> std::result::Result<f64, String> {
            value
                .parse::<f64>()
                .map_err(|e| format!("key {key:?}: {e}"))
        };
        let i64_value = || -> std::result::Result<i64, String> {
            value
                .parse::<i64>()
                .map_err(|e| format!("key {key:?}: {e}"))
        };
        let bool_value = || -> std::result::Result<bool, String> {
            value
                .parse::<bool>()
                .map_err(|e| format!("key {key:?}: {e}"))
        };
        match key {
            "seed" => self.seed = value.parse().map_err(|e| format!("key \"seed\": {e}"))?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "source.resonant_rate" => self.source.resonant_rate = f64_value()?,
            "source.eta_854_herald" => self.source.eta_854_herald = f64_value()?,
            "source.tau_cav" => self.source.tau_cav = f64_value()?,
            "source.p_abs" => self.source.p_abs = f64_value()?,
            "detector.eta_393" => self.detector.eta_393 = f64_value()?,
            "detector.dark_rate_pmt" => self.detector.dark_rate_pmt = f64_value()?,
            "detector.dark_rate_apd" => self.detector.dark_rate_apd = f64_value()?,
            "detector.jitter_sigma_ps" => self.detector.jitter_sigma_ps = f64_value()?,
            "ion.tau_p" => self.ion.tau_p = f64_value()?,
            "ion.tau_d" => self.ion.tau_d = f64_value()?,
            "ion.branch_to_s" => self.ion.branch_to_s = f64_value()?,
            "ion.p_prep_fail" => self.ion.p_prep_fail = f64_value()?,
            "ion.p_pulse_error" => self.ion.p_pulse_error = f64_value()?,
            "sequence.rep_rate" => self.sequence.rep_rate = f64_value()?,
            "sequence.t_cool" => self.sequence.t_cool = f64_value()?,
            "sequence.t_pump" => self.sequence.t_pump = f64_value()?,
            "sequence.t_prep" => self.sequence.t_prep = f64_value()?,
            "sequence.t_window" => self.sequence.t_window = f64_value()?,
            "sequence.t_measure" => self.sequence.t_measure = f64_value()?,
            "sequence.t_postseq" => self.sequence.t_postseq = f64_value()?,
            "sequence.lock_duty" => self.sequence.lock_duty = f64_value()?,
            "sequence.enable_shelving_397" => self.sequence.enable_shelving_397 = bool_value()?,
            "sequence.run_duration" => self.sequence.run_duration = f64_value()?,
            "sequence.p_dark_extra" => self.sequence.p_dark_extra = f64_value()?,
            "correlation.bin_width_ps" => self.correlation.bin_width_ps = i64_value()?,
            "correlation.t_min_ps" => self.correlation.t_min_ps = i64_value()?,
            "correlation.t_max_ps" => self.correlation.t_max_ps = i64_value()?,
            unknown => return Err(format!("unknown key {unknown:?}")),
        }
        Ok(())
    }

    /// Renders every key with its resolved value, defaults included.
    /// Parsing the echo reproduces the configuration exactly.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "source.resonant_rate = {}", self.source.resonant_rate);
        let _ = writeln!(s, "source.eta_854_herald = {}", self.source.eta_854_herald);
        let _ = writeln!(s, "source.tau_cav = {}", self.source.tau_cav);
        let _ = writeln!(s, "source.p_abs = {}", self.source.p_abs);
        let _ = writeln!(s, "detector.eta_393 = {}", self.detector.eta_393);
        let _ = writeln!(
            s,
            "detector.dark_rate_pmt = {}",
            self.detector.dark_rate_pmt
        );
        let _ = writeln!(
            s,
            "detector.dark_rate_apd = {}",
            self.detector.dark_rate_apd
        );
        let _ = writeln!(
            s,
            "detector.jitter_sigma_ps = {}",
            self.detector.jitter_sigma_ps
        );
        let _ = writeln!(s, "ion.tau_p = {}", self.ion.tau_p);
        let _ = writeln!(s, "ion.tau_d = {}", self.ion.tau_d);
        let _ = writeln!(s, "ion.branch_to_s = {}", self.ion.branch_to_s);
        let _ = writeln!(s, "ion.p_prep_fail = {}", self.ion.p_prep_fail);
        let _ = writeln!(s, "ion.p_pulse_error = {}", self.ion.p_pulse_error);
        let _ = writeln!(s, "sequence.rep_rate = {}", self.sequence.rep_rate);
        let _ = writeln!(s, "sequence.t_cool = {}", self.sequence.t_cool);
        let _ = writeln!(s, "sequence.t_pump = {}", self.sequence.t_pump);
        let _ = writeln!(s, "sequence.t_prep = {}", self.sequence.t_prep);
        let _ = writeln!(s, "sequence.t_window = {}", self.sequence.t_window);
        let _ = writeln!(s, "sequence.t_measure = {}", self.sequence.t_measure);
        let _ = writeln!(s, "sequence.t_postseq = {}", self.sequence.t_postseq);
        let _ = writeln!(s, "sequence.lock_duty = {}", self.sequence.lock_duty);
        let _ = writeln!(
            s,
            "sequence.enable_shelving_397 = {}",
            self.sequence.enable_shelving_397
        );
        let _ = writeln!(s, "sequence.run_duration = {}", self.sequence.run_duration);
        let _ = writeln!(s, "sequence.p_dark_extra = {}", self.sequence.p_dark_extra);
        let _ = writeln!(
            s,
            "correlation.bin_width_ps = {}",
            self.correlation.bin_width_ps
        );
        let _ = writeln!(s, "correlation.t_min_ps = {}", self.correlation.t_min_ps);
        let _ = writeln!(s, "correlation.t_max_ps = {}", self.correlation.t_max_ps);
        s
    }

    /// Short hex digest of the resolved configuration, used in provenance
    /// headers. Covers every key that affects simulation output; the output
    /// directory is excluded so identical runs hash identically wherever
    /// they are written.
    pub fn hash(&self) -> String {
        let content: String = self
            .render()
            .lines()
            .filter(|l| !l.starts_with("output_dir"))
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(content.as_bytes());
        let mut s = String::with_capacity(16);
        for byte in &digest[..8] {
            let _ = write!(s, "{byte:02x}");
        }
        s
    }

    /// Provenance line carried by file outputs of a simulation.
    pub fn provenance(&self) -> String {
        format!("heraldsim config={} seed={}", self.hash(), self.seed)
    }
}
