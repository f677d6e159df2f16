//! Pipeline commands behind the `heraldsim` binary: simulation runs,
//! correlation, post-selection, peak fitting, and the end-to-end report.
//!
//! Every command computes its outputs fully before writing, and each file is
//! written through a temporary name and renamed into place, so a failing
//! command leaves no partial outputs behind.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::analysis::{
    compute_metrics, fit_peak, postselect, read_histogram_csv, write_histogram_csv,
    CoincidenceMetrics, FitResult, DEFAULT_EXCLUDE_HALFWIDTH,
};
use crate::config::{CorrelationGrid, RunConfig};
use crate::error::{Error, Result};
use crate::sequence::{
    read_records_csv, run_experiment, write_records_csv, CycleRecord, Measurement,
};
use crate::timetag::{
    cross_correlate, read_stream, read_stream_csv, write_stream, write_stream_csv, Channel,
    Histogram, TimeTag,
};

/// Headline values of the reference run that the default configuration is
/// calibrated to reproduce; the report prints them next to the simulated
/// figures.
pub mod reference {
    pub const COINCIDENCES: f64 = 89.0;
    pub const BACKGROUND_RAW_PER_BIN: f64 = 37.1;
    pub const SBR_RAW: f64 = 2.4;
    pub const SNR_RAW: f64 = 14.6;
    pub const BACKGROUND_POST_PER_BIN: f64 = 2.3;
    pub const SBR_GAIN: f64 = 16.0;
    pub const SNR_GAIN: f64 = 4.1;
    pub const TAU_PLUS_NS: f64 = 7.2;
    pub const TAU_MINUS_NS: f64 = 7.0;
}

/// Fine grid used for the peak-shape histograms: 3 ns bins over +-151.5 ns.
pub const FINE_GRID: CorrelationGrid = CorrelationGrid {
    bin_width_ps: 3_000,
    t_min_ps: -151_500,
    t_max_ps: 151_500,
};

/// Channel selection for correlation commands: a single channel, or the two
/// 393 nm photomultipliers combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelSel {
    One(Channel),
    BothPmts,
}

impl ChannelSel {
    pub fn channels(self) -> Vec<Channel> {
        match self {
            ChannelSel::One(ch) => vec![ch],
            ChannelSel::BothPmts => vec![Channel::Pmt393A, Channel::Pmt393B],
        }
    }
}

impl FromStr for ChannelSel {
    type Err = Error;

    fn from_str(s: &str) -> Result<ChannelSel> {
        if s == "PMT393" {
            Ok(ChannelSel::BothPmts)
        } else {
            Ok(ChannelSel::One(s.parse()?))
        }
    }
}

impl std::fmt::Display for ChannelSel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChannelSel::One(ch) => write!(f, "{ch}"),
            ChannelSel::BothPmts => f.write_str("PMT393"),
        }
    }
}

/// Cross-correlates channel selections, summing the histograms of all
/// channel combinations (e.g. APD x both PMTs).
pub fn correlate_selection(
    tags: &[TimeTag],
    ch_a: ChannelSel,
    ch_b: ChannelSel,
    grid: &CorrelationGrid,
) -> Result<Histogram> {
    let mut total: Option<Histogram> = None;
    for a in ch_a.channels() {
        for b in ch_b.channels() {
            let hist =
                cross_correlate(tags, a, b, grid.bin_width_ps, grid.t_min_ps, grid.t_max_ps)?;
            total = Some(match total {
                None => hist,
                Some(acc) => {
                    let counts = acc
                        .counts()
                        .iter()
                        .zip(hist.counts())
                        .map(|(x, y)| x + y)
                        .collect();
                    Histogram::from_counts(grid.bin_width_ps, grid.t_min_ps, grid.t_max_ps, counts)?
                }
            });
        }
    }
    total.ok_or_else(|| Error::InvalidChannel("empty channel selection".into()))
}

/// Runs the configured experiment in memory.
pub fn simulate(config: &RunConfig) -> Result<(Vec<TimeTag>, Vec<CycleRecord>)> {
    config.validate()?;
    run_experiment(
        &config.sequence,
        &config.source,
        &config.detector,
        &config.ion,
        config.seed,
    )
}

/// Output paths produced by [`cmd_simulate`].
#[derive(Debug, Clone)]
pub struct SimulateOutputs {
    pub tags_path: PathBuf,
    pub records_path: PathBuf,
    pub config_path: PathBuf,
}

/// Simulates per the configuration and writes the tag stream (binary), the
/// cycle records (CSV), and the resolved-config echo into the output
/// directory.
pub fn cmd_simulate(config: &RunConfig) -> Result<SimulateOutputs> {
    let (tags, records) = simulate(config)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let provenance = config.provenance();

    let out = SimulateOutputs {
        tags_path: dir.join("tags.htag"),
        records_path: dir.join("records.csv"),
        config_path: dir.join("config_resolved.txt"),
    };
    write_atomic(&out.tags_path, |w| write_stream(&tags, w).map(|_| ()))?;
    write_atomic(&out.records_path, |w| {
        write_records_csv(&records, Some(&provenance), w)
    })?;
    write_atomic(&out.config_path, |w| {
        writeln!(w, "# {provenance}")?;
        w.write_all(config.render().as_bytes())?;
        Ok(())
    })?;
    Ok(out)
}

/// Reads a tag file, accepting either the binary format (sniffed via the
/// `HTAG` magic) or the CSV alternative. Returns the tags, a short digest of
/// the file contents, and whether it was binary.
pub fn read_tags_file(path: &Path) -> Result<(Vec<TimeTag>, String, bool)> {
    let bytes = fs::read(path)?;
    let digest = short_digest(&bytes);
    let binary = bytes.len() >= 4 && &bytes[..4] == b"HTAG";
    let tags = if binary {
        read_stream(&mut bytes.as_slice())?
    } else {
        read_stream_csv(&mut bytes.as_slice())?
    };
    Ok((tags, digest, binary))
}

/// Reads a records CSV plus any provenance comment it carries.
pub fn read_records_file(path: &Path) -> Result<(Vec<CycleRecord>, Option<String>)> {
    let text = fs::read_to_string(path)?;
    let provenance = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .map(str::to_string);
    let records = read_records_csv(&mut text.as_bytes())?;
    Ok((records, provenance))
}

/// Correlates a tag file and writes the histogram CSV.
pub fn cmd_correlate(
    tags_path: &Path,
    ch_a: ChannelSel,
    ch_b: ChannelSel,
    grid: &CorrelationGrid,
    out_path: &Path,
) -> Result<Histogram> {
    let (tags, digest, _) = read_tags_file(tags_path)?;
    let hist = correlate_selection(&tags, ch_a, ch_b, grid)?;
    let provenance = format!(
        "heraldsim correlate {ch_a} x {ch_b} input={} sha256={digest}",
        file_name(tags_path)
    );
    write_atomic(out_path, |w| {
        write_histogram_csv(&hist, Some(&provenance), w)
    })?;
    Ok(hist)
}

/// Filters a tag file by the dark-ion post-selection rule and writes the
/// kept tags in the same format as the input.
pub fn cmd_postselect(tags_path: &Path, records_path: &Path, out_path: &Path) -> Result<usize> {
    let (tags, digest, binary) = read_tags_file(tags_path)?;
    let (records, upstream) = read_records_file(records_path)?;
    let kept = postselect(&tags, &records, &[Measurement::Dark])?;
    let provenance = upstream.unwrap_or_else(|| {
        format!(
            "heraldsim postselect input={} sha256={digest}",
            file_name(tags_path)
        )
    });
    if binary {
        write_atomic(out_path, |w| write_stream(&kept, w).map(|_| ()))?;
    } else {
        write_atomic(out_path, |w| write_stream_csv(&kept, Some(&provenance), w))?;
    }
    Ok(kept.len())
}

/// Fits the correlation peak of a histogram CSV; optionally writes the fit
/// report (text and JSON) into a directory. The provenance of the input
/// histogram, when its CSV carries one, is passed through to the outputs.
pub fn cmd_fit(hist_path: &Path, out_dir: Option<&Path>) -> Result<FitResult> {
    let bytes = fs::read(hist_path)?;
    let upstream = bytes
        .split(|&b| b == b'\n')
        .next()
        .and_then(|l| std::str::from_utf8(l).ok())
        .and_then(|l| l.strip_prefix("# "))
        .map(str::to_string);
    let hist = read_histogram_csv(&mut bytes.as_slice())?;
    let fit = fit_peak(&hist)?;
    if let Some(dir) = out_dir {
        let provenance = upstream.unwrap_or_else(|| {
            format!(
                "heraldsim fit input={} sha256={}",
                file_name(hist_path),
                short_digest(&bytes)
            )
        });
        fs::create_dir_all(dir)?;
        let text = render_fit_text(&fit);
        write_atomic(&dir.join("fit.txt"), |w| {
            writeln!(w, "# {provenance}")?;
            w.write_all(text.as_bytes()).map_err(Error::from)
        })?;
        #[derive(serde::Serialize)]
        struct FitDoc<'a> {
            provenance: &'a str,
            #[serde(flatten)]
            fit: &'a FitResult,
        }
        let json = serde_json::to_string_pretty(&FitDoc {
            provenance: &provenance,
            fit: &fit,
        })
        .map_err(|e| Error::Format(format!("fit JSON: {e}")))?;
        write_atomic(&dir.join("fit.json"), |w| {
            writeln!(w, "{json}").map_err(Error::from)
        })?;
    }
    Ok(fit)
}

/// Flat key-value rendering of a fit result.
pub fn render_fit_text(fit: &FitResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "amplitude = {}", fit.amplitude);
    let _ = writeln!(s, "tau_minus_ps = {}", fit.tau_minus_ps);
    let _ = writeln!(s, "tau_plus_ps = {}", fit.tau_plus_ps);
    let _ = writeln!(s, "offset = {}", fit.offset);
    let _ = writeln!(s, "log_likelihood = {}", fit.log_likelihood);
    s
}

/// One row of the report's comparison table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ComparisonRow {
    pub quantity: String,
    pub simulated: Option<f64>,
    pub reference: f64,
}

/// End-to-end analysis document: metrics for the raw and post-selected
/// histograms, the improvement factors, the peak fit, and the comparison
/// against the reference figures.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Report {
    pub provenance: String,
    /// Background-subtracted zero-bin signal of the raw histogram.
    pub coincidences: Option<f64>,
    pub raw: Option<CoincidenceMetrics>,
    pub post_selected: Option<CoincidenceMetrics>,
    pub sbr_gain: Option<f64>,
    pub snr_gain: Option<f64>,
    pub fit: Option<FitResult>,
    /// Degenerate analysis outcomes (no peak, undefined metrics, skipped
    /// fit); these are reported rather than treated as command failures.
    pub flags: Vec<String>,
    pub comparison: Vec<ComparisonRow>,
}

/// The four histograms behind a report: raw and post-selected, on the
/// metrics grid and on the fine peak grid.
pub struct ReportHistograms {
    pub raw_coarse: Histogram,
    pub post_coarse: Histogram,
    pub raw_fine: Histogram,
    pub post_fine: Histogram,
}

fn analysis_flag(err: &Error) -> Option<String> {
    match err {
        Error::UndefinedMetric(msg) | Error::DegenerateInput(msg) | Error::FitDiverged(msg) => {
            Some(msg.clone())
        }
        _ => None,
    }
}

/// Builds the full report in memory. Takes ownership of the tag stream so
/// the raw tags can be dropped once the post-selected copy exists.
pub fn build_report(
    tags: Vec<TimeTag>,
    records: &[CycleRecord],
    grid: &CorrelationGrid,
    provenance: String,
) -> Result<(Report, ReportHistograms)> {
    let mut flags = Vec::new();

    let apd = ChannelSel::One(Channel::Apd854);
    let raw_coarse = correlate_selection(&tags, apd, ChannelSel::BothPmts, grid)?;
    let raw_fine = correlate_selection(&tags, apd, ChannelSel::BothPmts, &FINE_GRID)?;
    let post_tags = postselect(&tags, records, &[Measurement::Dark])?;
    drop(tags);
    let post_coarse = correlate_selection(&post_tags, apd, ChannelSel::BothPmts, grid)?;
    let post_fine = correlate_selection(&post_tags, apd, ChannelSel::BothPmts, &FINE_GRID)?;
    drop(post_tags);

    let mut metrics_of = |hist: &Histogram, which: &str| -> Result<Option<CoincidenceMetrics>> {
        match compute_metrics(hist, DEFAULT_EXCLUDE_HALFWIDTH) {
            Ok(m) => Ok(Some(m)),
            Err(e) => match analysis_flag(&e) {
                Some(msg) => {
                    flags.push(format!("{which} metrics unavailable: {msg}"));
                    Ok(None)
                }
                None => Err(e),
            },
        }
    };
    let raw = metrics_of(&raw_coarse, "raw")?;
    let post_selected = metrics_of(&post_coarse, "post-selected")?;

    if let Some(m) = &raw {
        if m.signal <= 0.0 {
            flags.push(format!("no peak: raw signal {} <= 0", m.signal));
        }
    }

    let (sbr_gain, snr_gain) = match (&raw, &post_selected) {
        (Some(r), Some(p)) if r.sbr != 0.0 && r.snr != 0.0 => {
            (Some(p.sbr / r.sbr), Some(p.snr / r.snr))
        }
        (Some(_), Some(_)) => {
            flags.push("improvement factors undefined: raw ratios are zero".into());
            (None, None)
        }
        _ => (None, None),
    };

    let fit = match fit_peak(&post_fine) {
        Ok(f) => Some(f),
        Err(e) => match analysis_flag(&e) {
            Some(msg) => {
                flags.push(format!("fit skipped: {msg}"));
                None
            }
            None => return Err(e),
        },
    };

    let comparison = vec![
        ComparisonRow {
            quantity: "coincidences".into(),
            simulated: raw.map(|m| m.signal),
            reference: reference::COINCIDENCES,
        },
        ComparisonRow {
            quantity: "background_raw_per_bin".into(),
            simulated: raw.map(|m| m.background_per_bin),
            reference: reference::BACKGROUND_RAW_PER_BIN,
        },
        ComparisonRow {
            quantity: "sbr_raw".into(),
            simulated: raw.map(|m| m.sbr),
            reference: reference::SBR_RAW,
        },
        ComparisonRow {
            quantity: "snr_raw".into(),
            simulated: raw.map(|m| m.snr),
            reference: reference::SNR_RAW,
        },
        ComparisonRow {
            quantity: "background_post_per_bin".into(),
            simulated: post_selected.map(|m| m.background_per_bin),
            reference: reference::BACKGROUND_POST_PER_BIN,
        },
        ComparisonRow {
            quantity: "sbr_gain".into(),
            simulated: sbr_gain,
            reference: reference::SBR_GAIN,
        },
        ComparisonRow {
            quantity: "snr_gain".into(),
            simulated: snr_gain,
            reference: reference::SNR_GAIN,
        },
        ComparisonRow {
            quantity: "tau_plus_ns".into(),
            simulated: fit.map(|f| f.tau_plus_ps / 1_000.0),
            reference: reference::TAU_PLUS_NS,
        },
        ComparisonRow {
            quantity: "tau_minus_ns".into(),
            simulated: fit.map(|f| f.tau_minus_ps / 1_000.0),
            reference: reference::TAU_MINUS_NS,
        },
    ];

    let report = Report {
        provenance,
        coincidences: raw.map(|m| m.signal),
        raw,
        post_selected,
        sbr_gain,
        snr_gain,
        fit,
        flags,
        comparison,
    };
    let histograms = ReportHistograms {
        raw_coarse,
        post_coarse,
        raw_fine,
        post_fine,
    };
    Ok((report, histograms))
}

/// Renders the human-readable report.
pub fn render_report_text(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {}", report.provenance);
    let num = |v: Option<f64>| match v {
        Some(x) => format!("{x:.4}"),
        None => "n/a".into(),
    };
    for (section, metrics) in [
        ("raw", &report.raw),
        ("post_selected", &report.post_selected),
    ] {
        match metrics {
            Some(m) => {
                let _ = writeln!(s, "{section}.signal = {}", m.signal);
                let _ = writeln!(s, "{section}.background_per_bin = {}", m.background_per_bin);
                let _ = writeln!(s, "{section}.sbr = {}", m.sbr);
                let _ = writeln!(s, "{section}.snr = {}", m.snr);
            }
            None => {
                let _ = writeln!(s, "{section}.signal = n/a");
            }
        }
    }
    let _ = writeln!(s, "sbr_gain = {}", num(report.sbr_gain));
    let _ = writeln!(s, "snr_gain = {}", num(report.snr_gain));
    match &report.fit {
        Some(fit) => {
            let _ = writeln!(s, "fit.amplitude = {}", fit.amplitude);
            let _ = writeln!(s, "fit.tau_minus_ps = {}", fit.tau_minus_ps);
            let _ = writeln!(s, "fit.tau_plus_ps = {}", fit.tau_plus_ps);
            let _ = writeln!(s, "fit.offset = {}", fit.offset);
            let _ = writeln!(s, "fit.log_likelihood = {}", fit.log_likelihood);
        }
        None => {
            let _ = writeln!(s, "fit = n/a");
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<28} {:>12} {:>12}",
        "quantity", "simulated", "reference"
    );
    for row in &report.comparison {
        let _ = writeln!(
            s,
            "{:<28} {:>12} {:>12}",
            row.quantity,
            num(row.simulated),
            format!("{:.1}", row.reference)
        );
    }
    for flag in &report.flags {
        let _ = writeln!(s, "flag: {flag}");
    }
    s
}

/// Output paths produced by [`cmd_report`].
#[derive(Debug, Clone)]
pub struct ReportOutputs {
    pub report_txt: PathBuf,
    pub report_json: PathBuf,
    pub histograms: [PathBuf; 4],
}

/// End-to-end analysis of a simulated (or recorded) data set: writes the raw
/// and post-selected histograms on both grids, the metrics, the fit, and the
/// comparison table.
pub fn cmd_report(
    tags_path: &Path,
    records_path: &Path,
    out_dir: &Path,
    grid: &CorrelationGrid,
) -> Result<(Report, ReportOutputs)> {
    let (tags, digest, _) = read_tags_file(tags_path)?;
    let (records, upstream) = read_records_file(records_path)?;
    let provenance = upstream.unwrap_or_else(|| {
        format!(
            "heraldsim report input={} sha256={digest}",
            file_name(tags_path)
        )
    });
    let (report, hists) = build_report(tags, &records, grid, provenance.clone())?;

    fs::create_dir_all(out_dir)?;
    let outputs = ReportOutputs {
        report_txt: out_dir.join("report.txt"),
        report_json: out_dir.join("report.json"),
        histograms: [
            out_dir.join("hist_raw_50ns.csv"),
            out_dir.join("hist_post_50ns.csv"),
            out_dir.join("hist_raw_3ns.csv"),
            out_dir.join("hist_post_3ns.csv"),
        ],
    };
    let named = [
        (&outputs.histograms[0], &hists.raw_coarse),
        (&outputs.histograms[1], &hists.post_coarse),
        (&outputs.histograms[2], &hists.raw_fine),
        (&outputs.histograms[3], &hists.post_fine),
    ];
    for (path, hist) in named {
        write_atomic(path, |w| write_histogram_csv(hist, Some(&provenance), w))?;
    }
    let text = render_report_text(&report);
    write_atomic(&outputs.report_txt, |w| {
        w.write_all(text.as_bytes()).map_err(Error::from)
    })?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Format(format!("report JSON: {e}")))?;
    write_atomic(&outputs.report_json, |w| {
        writeln!(w, "{json}").map_err(Error::from)
    })?;
    Ok((report, outputs))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn short_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(16);
    for byte in &digest[..8] {
        let _ = write!(s, "{byte:02x}");
    }
    s
}

/// Writes through `<name>.tmp` and renames into place on success.
fn write_atomic(
    path: &Path,
    write_fn: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut writer = BufWriter::new(fs::File::create(&tmp)?);
        write_fn(&mut writer)?;
        writer.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}
