//! Coincidence-peak metrics, cycle-level post-selection, and the
//! double-sided-exponential peak fit.

use std::io::{Read, Write};

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::sequence::{CycleRecord, Measurement};
use crate::timetag::{Histogram, TimeTag};

/// Signal and background figures for a correlation peak.
///
/// `signal` is the background-subtracted content of the zero-delay bin;
/// `background_per_bin` is the mean over all bins outside the exclusion
/// window around the peak. `sbr = signal / background_per_bin` and
/// `snr = signal / sqrt(background_per_bin)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CoincidenceMetrics {
    pub signal: f64,
    pub background_per_bin: f64,
    pub sbr: f64,
    pub snr: f64,
    pub peak_bin_index: usize,
    pub n_background_bins: usize,
}

/// Default half-width (in bins) of the exclusion window around the peak when
/// estimating the background: keeps the exponential tails out of the mean.
pub const DEFAULT_EXCLUDE_HALFWIDTH: usize = 3;

/// Computes peak metrics from a correlation histogram.
///
/// The peak bin is the bin centered on zero delay; `exclude_halfwidth` bins
/// on each side of it are left out of the background estimate. The signal
/// may come out negative (no peak); a zero background is an error.
pub fn compute_metrics(hist: &Histogram, exclude_halfwidth: usize) -> Result<CoincidenceMetrics> {
    let n_bins = hist.n_bins();
    if n_bins < 2 * exclude_halfwidth + 10 {
        return Err(Error::InvalidParam(format!(
            "{n_bins} bins is too few for a +-{exclude_halfwidth}-bin exclusion window"
        )));
    }
    let peak = hist.zero_bin();
    if peak < exclude_halfwidth || peak + exclude_halfwidth >= n_bins {
        return Err(Error::InvalidParam(format!(
            "exclusion window around bin {peak} leaves the histogram range"
        )));
    }

    let mut background_total = 0u64;
    let mut n_background = 0usize;
    for (i, &count) in hist.counts().iter().enumerate() {
        if i + exclude_halfwidth < peak || i > peak + exclude_halfwidth {
            background_total += count;
            n_background += 1;
        }
    }
    let background = background_total as f64 / n_background as f64;
    if background == 0.0 {
        return Err(Error::UndefinedMetric(
            "background is zero; SBR and SNR are undefined".into(),
        ));
    }
    let signal = hist.counts()[peak] as f64 - background;
    Ok(CoincidenceMetrics {
        signal,
        background_per_bin: background,
        sbr: signal / background,
        snr: signal / background.sqrt(),
        peak_bin_index: peak,
        n_background_bins: n_background,
    })
}

/// Keeps only those PMT herald tags whose cycle's state measurement is in
/// `keep`; APD and marker tags always pass through.
///
/// A PMT tag belongs to the most recent cycle, i.e. the record with the
/// largest `window_start` not exceeding the tag time. Tags before the first
/// cycle (or with no records at all) are orphans.
pub fn postselect(
    tags: &[TimeTag],
    records: &[CycleRecord],
    keep: &[Measurement],
) -> Result<Vec<TimeTag>> {
    let starts: Vec<i64> = records.iter().map(|r| r.window_start).collect();
    if starts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParam(
            "records must be ordered by window_start".into(),
        ));
    }
    let mut kept = Vec::with_capacity(tags.len());
    for tag in tags {
        if !tag.channel.is_pmt() {
            kept.push(*tag);
            continue;
        }
        let idx = starts.partition_point(|&s| s <= tag.time);
        if idx == 0 {
            return Err(Error::OrphanTag(format!(
                "PMT tag at {} ps precedes every cycle window",
                tag.time
            )));
        }
        if keep.contains(&records[idx - 1].measurement) {
            kept.push(*tag);
        }
    }
    Ok(kept)
}

/// Double-sided exponential correlation shape.
///
/// Returns `offset + amplitude * exp(-|delta|/tau_plus)` for `delta >= 0`
/// and `offset + amplitude * exp(-|delta|/tau_minus)` for `delta < 0`: the
/// shape of the delay density `Exp(tau_plus) - Exp(tau_minus)` on top of a
/// flat background.
pub fn expected_shape(
    delta_ps: f64,
    amplitude: f64,
    tau_minus_ps: f64,
    tau_plus_ps: f64,
    offset: f64,
) -> f64 {
    let tau = if delta_ps >= 0.0 {
        tau_plus_ps
    } else {
        tau_minus_ps
    };
    offset + amplitude * (-delta_ps.abs() / tau).exp()
}

/// Mean of `exp(-|x|/tau)` over the bin `[lo, hi)`, in closed form.
fn bin_averaged_shape(lo: f64, hi: f64, tau_minus: f64, tau_plus: f64) -> f64 {
    let width = hi - lo;
    let integral = if hi <= 0.0 {
        tau_minus * ((hi / tau_minus).exp() - (lo / tau_minus).exp())
    } else if lo >= 0.0 {
        tau_plus * ((-lo / tau_plus).exp() - (-hi / tau_plus).exp())
    } else {
        tau_minus * (1.0 - (lo / tau_minus).exp()) + tau_plus * (1.0 - (-hi / tau_plus).exp())
    };
    integral / width
}

/// Result of the correlation-peak fit.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FitResult {
    /// Peak height above the offset, counts.
    pub amplitude: f64,
    /// 1/e time of the negative-delay flank, ps.
    pub tau_minus_ps: f64,
    /// 1/e time of the positive-delay flank, ps.
    pub tau_plus_ps: f64,
    /// Flat background, counts per bin.
    pub offset: f64,
    /// Poisson log-likelihood at the optimum.
    pub log_likelihood: f64,
}

impl FitResult {
    /// Model expectation for a bin `[lo, hi)` under this fit.
    pub fn bin_expectation(&self, lo_ps: f64, hi_ps: f64) -> f64 {
        self.offset
            + self.amplitude * bin_averaged_shape(lo_ps, hi_ps, self.tau_minus_ps, self.tau_plus_ps)
    }
}

const FIT_MAX_ITERATIONS: usize = 10_000;
const FIT_LL_TOLERANCE: f64 = 1e-6;

/// Fits the double-sided exponential to a fine-binned correlation peak by
/// maximizing the Poisson log-likelihood of the per-bin counts, with the
/// shape averaged over each bin.
///
/// Requires a bin width of at most 3 ns and at least 20 bins. Uses a
/// derivative-free Nelder-Mead search started from amplitude = max - median,
/// both 1/e times at 7 ns, and offset = median; the search stops once the
/// best log-likelihood improves by less than 1e-6 over a full simplex cycle.
pub fn fit_peak(hist: &Histogram) -> Result<FitResult> {
    if hist.bin_width() > 3_000 {
        return Err(Error::InvalidParam(format!(
            "peak fitting needs bins of at most 3 ns, got {} ps",
            hist.bin_width()
        )));
    }
    if hist.n_bins() < 20 {
        return Err(Error::InvalidParam(format!(
            "peak fitting needs at least 20 bins, got {}",
            hist.n_bins()
        )));
    }
    if hist.total() == 0 {
        return Err(Error::DegenerateInput("histogram holds no counts".into()));
    }

    let counts: Vec<f64> = hist.counts().iter().map(|&c| c as f64).collect();
    let edges: Vec<(f64, f64)> = (0..hist.n_bins())
        .map(|i| {
            let lo = hist.t_min() + i as i64 * hist.bin_width();
            (lo as f64, (lo + hist.bin_width()) as f64)
        })
        .collect();

    let mut sorted = counts.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = sorted[sorted.len() / 2];
    let max = sorted[sorted.len() - 1];

    // Work in log space so the positivity constraints are built in.
    let amplitude0 = (max - median).max(0.5);
    let offset0 = median.max(1e-3);
    let x0 = [amplitude0.ln(), 7_000f64.ln(), 7_000f64.ln(), offset0.ln()];

    let neg_ll = |x: &[f64; 4]| -> f64 {
        let (amplitude, tau_minus, tau_plus, offset) =
            (x[0].exp(), x[1].exp(), x[2].exp(), x[3].exp());
        let mut ll = 0.0;
        for (k, &(lo, hi)) in counts.iter().zip(&edges) {
            let mu =
                (offset + amplitude * bin_averaged_shape(lo, hi, tau_minus, tau_plus)).max(1e-300);
            ll += k * mu.ln() - mu;
        }
        -ll
    };

    let best = nelder_mead(neg_ll, x0)?;
    let (amplitude, tau_minus, tau_plus, offset) = (
        best.x[0].exp(),
        best.x[1].exp(),
        best.x[2].exp(),
        best.x[3].exp(),
    );
    // Full log-likelihood including the data-dependent constant.
    let log_likelihood = -best.f - counts.iter().map(|&k| ln_gamma(k + 1.0)).sum::<f64>();
    Ok(FitResult {
        amplitude,
        tau_minus_ps: tau_minus,
        tau_plus_ps: tau_plus,
        offset,
        log_likelihood,
    })
}

struct SimplexResult {
    x: [f64; 4],
    f: f64,
}

/// Nelder-Mead with restarts: each inner run converges when the best value
/// improves by less than the tolerance over a full simplex cycle, and a
/// fresh simplex is then spanned at the optimum until a whole restart stops
/// improving. Restarting guards against premature simplex collapse far from
/// the optimum; the total budget across restarts is `FIT_MAX_ITERATIONS`.
fn nelder_mead(f: impl Fn(&[f64; 4]) -> f64, x0: [f64; 4]) -> Result<SimplexResult> {
    let mut remaining = FIT_MAX_ITERATIONS;
    let mut current = SimplexResult { x: x0, f: f(&x0) };
    loop {
        let (next, used, converged) = nm_single(&f, current.x, remaining);
        remaining -= used;
        let improvement = current.f - next.f;
        if next.f < current.f {
            current = next;
        }
        if converged && improvement < FIT_LL_TOLERANCE {
            return Ok(current);
        }
        if remaining == 0 {
            return Err(Error::FitDiverged(format!(
                "no convergence after {FIT_MAX_ITERATIONS} iterations"
            )));
        }
    }
}

/// One Nelder-Mead run with standard coefficients (reflect 1, expand 2,
/// contract 0.5, shrink 0.5). Returns the best point, the iterations used,
/// and whether it stopped by convergence rather than budget.
fn nm_single(
    f: impl Fn(&[f64; 4]) -> f64,
    x0: [f64; 4],
    budget: usize,
) -> (SimplexResult, usize, bool) {
    const N: usize = 4;
    let mut simplex: Vec<([f64; 4], f64)> = Vec::with_capacity(N + 1);
    simplex.push((x0, f(&x0)));
    for i in 0..N {
        let mut x = x0;
        x[i] += 0.35;
        simplex.push((x, f(&x)));
    }

    let mut history = std::collections::VecDeque::with_capacity(N + 2);

    for iteration in 0..budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;

        history.push_back(best);
        if history.len() > N + 1 {
            let old: f64 = history.pop_front().unwrap();
            if old - best < FIT_LL_TOLERANCE {
                return (
                    SimplexResult {
                        x: simplex[0].0,
                        f: simplex[0].1,
                    },
                    iteration + 1,
                    true,
                );
            }
        }

        let worst = simplex[N];
        let mut centroid = [0.0; 4];
        for (x, _) in &simplex[..N] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / N as f64;
            }
        }
        let blend = |a: f64, b: f64| {
            let mut x = [0.0; 4];
            for i in 0..N {
                x[i] = a * centroid[i] + b * worst.0[i];
            }
            x
        };

        let reflected = blend(2.0, -1.0);
        let f_reflected = f(&reflected);
        if f_reflected < simplex[0].1 {
            let expanded = blend(3.0, -2.0);
            let f_expanded = f(&expanded);
            simplex[N] = if f_expanded < f_reflected {
                (expanded, f_expanded)
            } else {
                (reflected, f_reflected)
            };
        } else if f_reflected < simplex[N - 1].1 {
            simplex[N] = (reflected, f_reflected);
        } else {
            let contracted = if f_reflected < worst.1 {
                blend(1.5, -0.5) // outside
            } else {
                blend(0.5, 0.5) // inside
            };
            let f_contracted = f(&contracted);
            if f_contracted < worst.1.min(f_reflected) {
                simplex[N] = (contracted, f_contracted);
            } else {
                let best_x = simplex[0].0;
                for (x, fx) in simplex.iter_mut().skip(1) {
                    for i in 0..N {
                        x[i] = 0.5 * (x[i] + best_x[i]);
                    }
                    *fx = f(x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (
        SimplexResult {
            x: simplex[0].0,
            f: simplex[0].1,
        },
        budget,
        false,
    )
}

/// Writes a histogram as `bin_center_ps,count` CSV.
pub fn write_histogram_csv<W: Write>(
    hist: &Histogram,
    provenance: Option<&str>,
    sink: &mut W,
) -> Result<()> {
    if let Some(line) = provenance {
        writeln!(sink, "# {line}")?;
    }
    writeln!(sink, "bin_center_ps,count")?;
    for (i, &count) in hist.counts().iter().enumerate() {
        writeln!(sink, "{},{}", hist.bin_center(i), count)?;
    }
    Ok(())
}

/// Reads a `bin_center_ps,count` CSV back into a histogram, reconstructing
/// the grid from the (required uniform) center spacing. A single-bin file is
/// rejected since its width is ambiguous.
pub fn read_histogram_csv<R: Read>(source: &mut R) -> Result<Histogram> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    match lines.next() {
        Some((_, header)) if header.trim() == "bin_center_ps,count" => {}
        Some((n, header)) => {
            return Err(Error::Format(format!(
                "line {}: expected header \"bin_center_ps,count\", got {header:?}",
                n + 1
            )))
        }
        None => return Err(Error::Format("empty histogram CSV".into())),
    }
    let mut centers: Vec<i64> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    for (n, line) in lines {
        let (c, k) = line.split_once(',').ok_or_else(|| {
            Error::Format(format!("line {}: expected bin_center_ps,count", n + 1))
        })?;
        centers.push(
            c.trim()
                .parse()
                .map_err(|e| Error::Format(format!("line {}: bad bin center: {e}", n + 1)))?,
        );
        counts.push(
            k.trim()
                .parse()
                .map_err(|e| Error::Format(format!("line {}: bad count: {e}", n + 1)))?,
        );
    }
    if centers.len() < 2 {
        return Err(Error::Format(
            "histogram CSV needs at least two bins to define the grid".into(),
        ));
    }
    let width = centers[1] - centers[0];
    if width <= 0 || centers.windows(2).any(|w| w[1] - w[0] != width) {
        return Err(Error::Format("bin centers are not uniformly spaced".into()));
    }
    let t_min = centers[0] - width / 2;
    let t_max = centers[centers.len() - 1] + width - width / 2;
    Histogram::from_counts(width, t_min, t_max, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timetag::{Channel, TimeTag};
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::Exp;

    fn uniform_hist(n_bins: usize, level: u64, zero_extra: u64) -> Histogram {
        // Odd bin count, 2 ns bins, zero-centered.
        assert!(n_bins % 2 == 1);
        let half = (n_bins as i64) * 1000;
        let mut counts = vec![level; n_bins];
        let zero = n_bins / 2;
        counts[zero] += zero_extra;
        Histogram::from_counts(2_000, -half, half, counts).unwrap()
    }

    #[test]
    fn metrics_reproduce_headline_arithmetic() {
        // Ten-fold scaled version of the reference numbers: background 371
        // per bin, zero bin 1261, so signal 890 and sbr = 890/371 = 2.399.
        let hist = uniform_hist(1007, 371, 890);
        let m = compute_metrics(&hist, 3).unwrap();
        assert_eq!(m.n_background_bins, 1000);
        assert!((m.signal - 890.0).abs() < 1e-9);
        assert!((m.background_per_bin - 371.0).abs() < 1e-12);
        assert!((m.sbr - 89.0 / 37.1).abs() < 1e-12, "sbr {}", m.sbr);
        // snr scales with sqrt(10) relative to the unscaled 14.61.
        assert!(
            (m.snr - 890.0 / 371.0f64.sqrt()).abs() < 1e-9,
            "snr {}",
            m.snr
        );
        assert!((m.snr / 10f64.sqrt() - 14.61).abs() < 0.01);
    }

    #[test]
    fn metrics_on_flat_histogram_are_zero() {
        let hist = uniform_hist(101, 5, 0);
        let m = compute_metrics(&hist, 3).unwrap();
        assert_eq!(m.signal, 0.0);
        assert_eq!(m.sbr, 0.0);
        assert_eq!(m.snr, 0.0);
    }

    #[test]
    fn metrics_reject_zero_background() {
        let hist = uniform_hist(101, 0, 40);
        assert!(matches!(
            compute_metrics(&hist, 3),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn metrics_allow_negative_signal() {
        let mut counts = vec![10u64; 101];
        counts[50] = 2;
        let hist = Histogram::from_counts(2_000, -101_000, 101_000, counts).unwrap();
        let m = compute_metrics(&hist, 3).unwrap();
        assert!(m.signal < 0.0);
    }

    #[test]
    fn metrics_reject_too_few_bins() {
        let hist = uniform_hist(15, 5, 0);
        assert!(matches!(
            compute_metrics(&hist, 3),
            Err(Error::InvalidParam(_))
        ));
    }

    #[test]
    fn metrics_reject_peak_touching_the_range_edge() {
        // Asymmetric grid whose zero bin sits closer to the edge than the
        // exclusion half-width.
        let hist = Histogram::from_counts(2_000, -3_000, 197_000, vec![7; 100]).unwrap();
        assert_eq!(hist.zero_bin(), 1);
        assert!(matches!(
            compute_metrics(&hist, 3),
            Err(Error::InvalidParam(_))
        ));
        // With a narrower exclusion window the same grid is fine.
        assert!(compute_metrics(&hist, 1).is_ok());
    }

    fn record(cycle: u64, start: i64, measurement: Measurement) -> CycleRecord {
        CycleRecord {
            cycle_index: cycle,
            window_start: start,
            window_end: start + 1_000,
            prep_ok: true,
            absorbed: false,
            absorption_time: None,
            herald_emitted: false,
            spont_decayed: false,
            measurement,
            locked_out: false,
        }
    }

    #[test]
    fn postselect_drops_pmt_tags_of_bright_cycles() {
        let records = vec![
            record(0, 0, Measurement::Bright),
            record(1, 10_000, Measurement::Dark),
            record(2, 20_000, Measurement::Bright),
        ];
        let tags = vec![
            TimeTag::new(Channel::CycleStart, 0),
            TimeTag::new(Channel::Pmt393A, 100),
            TimeTag::new(Channel::Apd854, 150),
            TimeTag::new(Channel::Pmt393B, 10_500),
            TimeTag::new(Channel::Pmt393A, 25_000),
        ];
        let kept = postselect(&tags, &records, &[Measurement::Dark]).unwrap();
        assert_eq!(
            kept,
            vec![
                TimeTag::new(Channel::CycleStart, 0),
                TimeTag::new(Channel::Apd854, 150),
                TimeTag::new(Channel::Pmt393B, 10_500),
            ]
        );
    }

    #[test]
    fn postselect_identity_when_all_dark() {
        let records = vec![record(0, 0, Measurement::Dark)];
        let tags = vec![
            TimeTag::new(Channel::Pmt393A, 5),
            TimeTag::new(Channel::Pmt393B, 9),
        ];
        assert_eq!(
            postselect(&tags, &records, &[Measurement::Dark]).unwrap(),
            tags
        );
    }

    #[test]
    fn postselect_flags_orphans() {
        let records = vec![record(0, 1_000, Measurement::Dark)];
        let tags = vec![TimeTag::new(Channel::Pmt393A, 5)];
        assert!(matches!(
            postselect(&tags, &records, &[Measurement::Dark]),
            Err(Error::OrphanTag(_))
        ));
        assert!(matches!(
            postselect(&tags, &[], &[Measurement::Dark]),
            Err(Error::OrphanTag(_))
        ));
        // Non-PMT tags are never orphans.
        let markers = vec![TimeTag::new(Channel::Apd854, 5)];
        assert!(postselect(&markers, &records, &[Measurement::Dark]).is_ok());
    }

    #[test]
    fn shape_point_values() {
        assert_eq!(expected_shape(0.0, 100.0, 7_000.0, 7_000.0, 3.0), 103.0);
        let e = std::f64::consts::E;
        let at_tau = expected_shape(7_000.0, 100.0, 7_000.0, 7_000.0, 0.0);
        assert!((at_tau - 100.0 / e).abs() < 1e-9);
        let at_minus_tau = expected_shape(-7_000.0, 100.0, 7_000.0, 7_000.0, 0.0);
        assert!((at_minus_tau - 100.0 / e).abs() < 1e-9);
        // Asymmetric taus pick the matching flank.
        let right = expected_shape(7_200.0, 50.0, 7_000.0, 7_200.0, 0.0);
        assert!((right - 50.0 / e).abs() < 1e-9);
    }

    #[test]
    fn shape_matches_sampled_difference_of_exponentials() {
        // Delta = Exp(7.2 ns) - Exp(7.0 ns), 1e6 samples, 1 ns bins.
        let tau_plus = 7_200.0;
        let tau_minus = 7_000.0;
        let n = 1_000_000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let exp_plus = Exp::new(1.0 / tau_plus).unwrap();
        let exp_minus = Exp::new(1.0 / tau_minus).unwrap();
        let width = 1_000i64;
        let mut hist = Histogram::new(width, -40_500, 40_500).unwrap();
        for _ in 0..n {
            let delta: f64 = exp_plus.sample(&mut rng) - exp_minus.sample(&mut rng);
            hist.record(delta.round() as i64);
        }
        // Density of the difference: exp(-|d|/tau) / (tau_plus + tau_minus).
        let norm = n as f64 * width as f64 / (tau_plus + tau_minus);
        let mut sq_rel = 0.0;
        let mut used = 0usize;
        for (i, &count) in hist.counts().iter().enumerate() {
            let center = hist.bin_center(i) as f64;
            if center.abs() > 3.0 * tau_plus {
                continue;
            }
            let expected = norm
                * bin_averaged_shape(
                    center - width as f64 / 2.0,
                    center + width as f64 / 2.0,
                    tau_minus,
                    tau_plus,
                );
            sq_rel += (count as f64 / expected - 1.0).powi(2);
            used += 1;
        }
        let rms = (sq_rel / used as f64).sqrt();
        assert!(rms < 0.02, "RMS relative deviation {rms} over {used} bins");
    }

    fn synthetic_peak(
        amplitude: f64,
        tau_minus: f64,
        tau_plus: f64,
        offset: f64,
        rng: &mut ChaCha12Rng,
    ) -> Histogram {
        let width = 3_000i64;
        let hist = Histogram::new(width, -151_500, 151_500).unwrap();
        let counts: Vec<u64> = (0..hist.n_bins())
            .map(|i| {
                let lo = (hist.t_min() + i as i64 * width) as f64;
                let mu = offset
                    + amplitude * bin_averaged_shape(lo, lo + width as f64, tau_minus, tau_plus);
                if mu > 0.0 {
                    rand_distr::Poisson::new(mu).unwrap().sample(rng) as u64
                } else {
                    0
                }
            })
            .collect();
        Histogram::from_counts(width, -151_500, 151_500, counts).unwrap()
    }

    #[test]
    fn fit_recovers_generator_parameters() {
        // Reference-scale synthetic peaks: median tau error under 10% over
        // 100 repetitions.
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let (mut errs_minus, mut errs_plus) = (Vec::new(), Vec::new());
        for _ in 0..100 {
            let hist = synthetic_peak(100.0, 7_000.0, 7_000.0, 0.14, &mut rng);
            let fit = fit_peak(&hist).unwrap();
            errs_minus.push((fit.tau_minus_ps - 7_000.0).abs() / 7_000.0);
            errs_plus.push((fit.tau_plus_ps - 7_000.0).abs() / 7_000.0);
        }
        errs_minus.sort_by(|a, b| a.total_cmp(b));
        errs_plus.sort_by(|a, b| a.total_cmp(b));
        assert!(
            errs_minus[50] < 0.10,
            "median tau_minus error {}",
            errs_minus[50]
        );
        assert!(
            errs_plus[50] < 0.10,
            "median tau_plus error {}",
            errs_plus[50]
        );
    }

    #[test]
    fn fit_rejects_degenerate_and_invalid_inputs() {
        let empty = Histogram::new(3_000, -151_500, 151_500).unwrap();
        assert!(matches!(fit_peak(&empty), Err(Error::DegenerateInput(_))));

        let coarse = uniform_hist(101, 3, 10); // 2 ns bins are fine
        assert!(fit_peak(&coarse).is_ok());
        let wide = Histogram::from_counts(50_000, -2_525_000, 2_525_000, vec![1; 101]).unwrap();
        assert!(matches!(fit_peak(&wide), Err(Error::InvalidParam(_))));

        let short = Histogram::from_counts(2_000, -19_000, 19_000, vec![1; 19]).unwrap();
        assert!(matches!(fit_peak(&short), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn histogram_csv_round_trip() {
        let hist = uniform_hist(101, 3, 10);
        let mut buf = Vec::new();
        write_histogram_csv(&hist, Some("config=x seed=0"), &mut buf).unwrap();
        let back = read_histogram_csv(&mut buf.as_slice()).unwrap();
        assert_eq!(back, hist);
    }

    #[test]
    fn histogram_csv_rejects_nonuniform_spacing() {
        let text = "bin_center_ps,count\n-1000,1\n1000,2\n4000,3\n";
        assert!(matches!(
            read_histogram_csv(&mut text.as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn rebinning_signal_consistency() {
        // The 50 ns zero-bin signal equals the summed background-subtracted
        // content of the 3 ns bins covering the same span, up to bin-edge
        // effects of at most 3%.
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let tau = 7_000.0;
        let exp = Exp::new(1.0 / tau).unwrap();
        let n_signal = 20_000usize;
        let mut coarse = Histogram::new(50_000, -2_525_000, 2_525_000).unwrap();
        let mut fine = Histogram::new(3_000, -826_500, 826_500).unwrap();
        for _ in 0..n_signal {
            let delta: f64 = exp.sample(&mut rng) - exp.sample(&mut rng);
            let delta = delta.round() as i64;
            coarse.record(delta);
            fine.record(delta);
        }
        // Flat accidental floor.
        let n_floor = 50_000usize;
        for _ in 0..n_floor {
            let delta = rng.random_range(-2_525_000i64..2_525_000);
            coarse.record(delta);
            fine.record(delta);
        }
        let m_coarse = compute_metrics(&coarse, 3).unwrap();
        let fine_bg = compute_metrics(&fine, 9).unwrap().background_per_bin;
        let zero_span = 50_000i64;
        let fine_sum: f64 = (0..fine.n_bins())
            .filter(|&i| fine.bin_center(i).abs() < zero_span / 2)
            .map(|i| fine.counts()[i] as f64 - fine_bg)
            .sum();
        let rel = (fine_sum - m_coarse.signal).abs() / m_coarse.signal;
        assert!(
            rel < 0.03,
            "coarse signal {} vs fine sum {fine_sum} ({rel} relative)",
            m_coarse.signal
        );
    }

    proptest! {
        #[test]
        fn prop_metrics_identity(seed in 0u64..500) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let n_bins = 101;
            let counts: Vec<u64> = (0..n_bins).map(|_| rng.random_range(0..200)).collect();
            let hist = Histogram::from_counts(2_000, -101_000, 101_000, counts).unwrap();
            if let Ok(m) = compute_metrics(&hist, 3) {
                // snr^2 = sbr^2 * background, up to float rounding.
                let lhs = m.snr * m.snr;
                let rhs = m.sbr * m.sbr * m.background_per_bin;
                prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()).max(1e-12));
            }
        }

        #[test]
        fn prop_postselect_soundness(seed in 0u64..500) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let n_cycles = rng.random_range(1..40u64);
            let span = 10_000i64;
            let records: Vec<CycleRecord> = (0..n_cycles)
                .map(|i| {
                    let m = match rng.random_range(0..3) {
                        0 => Measurement::Bright,
                        1 => Measurement::Dark,
                        _ => Measurement::Skipped,
                    };
                    record(i, i as i64 * span, m)
                })
                .collect();
            let mut tags: Vec<TimeTag> = (0..rng.random_range(0..200))
                .map(|_| {
                    let ch = match rng.random_range(0..4) {
                        0 => Channel::Apd854,
                        1 => Channel::Pmt393A,
                        2 => Channel::Pmt393B,
                        _ => Channel::CycleStart,
                    };
                    TimeTag::new(ch, rng.random_range(0..n_cycles as i64 * span))
                })
                .collect();
            tags.sort_by_key(|t| t.sort_key());

            let kept = postselect(&tags, &records, &[Measurement::Dark]).unwrap();
            prop_assert!(crate::timetag::is_ordered(&kept));
            let cycle_of = |t: i64| (t / span) as usize;
            // Every kept PMT tag belongs to a dark cycle; every dropped one
            // to a bright or skipped cycle; non-PMT tags all survive.
            let kept_set: std::collections::HashSet<_> = kept.iter().collect();
            for tag in &tags {
                if !tag.channel.is_pmt() {
                    prop_assert!(kept_set.contains(tag));
                    continue;
                }
                let dark = records[cycle_of(tag.time)].measurement == Measurement::Dark;
                prop_assert_eq!(kept_set.contains(tag), dark);
            }
        }
    }
}
