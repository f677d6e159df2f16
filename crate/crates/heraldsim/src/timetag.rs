//! Time-tag events, bit-exact stream IO, merging, and cross-correlation
//! histogramming.
//!
//! All times are signed 64-bit integers in picoseconds since run start. A tag
//! stream is nondecreasing in time; ties are ordered by channel number. The
//! binary format is a 16-byte header (`HTAG`, version, record count) followed
//! by 16-byte records; see [`write_stream`].

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Detector and marker channels.
///
/// The numeric value is both the tie-break order within a stream and the
/// on-disk channel byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Channel {
    /// Avalanche photodiode behind the filter cavities (854 nm partner heralds).
    Apd854 = 0,
    /// First photomultiplier collecting 393 nm absorption heralds.
    Pmt393A = 1,
    /// Second photomultiplier collecting 393 nm absorption heralds.
    Pmt393B = 2,
    /// Marker: an experimental cycle began.
    CycleStart = 3,
    /// Marker: the cycle's state measurement read dark.
    CycleDark = 4,
    /// Marker: the cycle's state measurement read bright.
    CycleBright = 5,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::Apd854,
        Channel::Pmt393A,
        Channel::Pmt393B,
        Channel::CycleStart,
        Channel::CycleDark,
        Channel::CycleBright,
    ];

    /// Marker channels carry sequencing information, not photon detections;
    /// correlation operations reject them.
    pub fn is_marker(self) -> bool {
        matches!(
            self,
            Channel::CycleStart | Channel::CycleDark | Channel::CycleBright
        )
    }

    pub fn is_photon(self) -> bool {
        !self.is_marker()
    }

    /// True for either of the two 393 nm photomultiplier channels.
    pub fn is_pmt(self) -> bool {
        matches!(self, Channel::Pmt393A | Channel::Pmt393B)
    }

    pub fn from_u8(byte: u8) -> Result<Channel> {
        Channel::ALL
            .get(byte as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown channel byte {byte}")))
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Channel::Apd854 => "APD854",
            Channel::Pmt393A => "PMT393_A",
            Channel::Pmt393B => "PMT393_B",
            Channel::CycleStart => "CYCLE_START",
            Channel::CycleDark => "CYCLE_DARK",
            Channel::CycleBright => "CYCLE_BRIGHT",
        };
        f.write_str(name)
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Channel> {
        match s {
            "APD854" => Ok(Channel::Apd854),
            "PMT393_A" => Ok(Channel::Pmt393A),
            "PMT393_B" => Ok(Channel::Pmt393B),
            "CYCLE_START" => Ok(Channel::CycleStart),
            "CYCLE_DARK" => Ok(Channel::CycleDark),
            "CYCLE_BRIGHT" => Ok(Channel::CycleBright),
            other => Err(Error::Format(format!("unknown channel name {other:?}"))),
        }
    }
}

/// One detector or marker event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeTag {
    pub channel: Channel,
    /// Picoseconds since run start; nonnegative within one run.
    pub time: i64,
}

impl TimeTag {
    pub fn new(channel: Channel, time: i64) -> TimeTag {
        TimeTag { channel, time }
    }

    /// Stream ordering key: time first, channel number on ties.
    pub fn sort_key(&self) -> (i64, u8) {
        (self.time, self.channel as u8)
    }
}

/// Returns the index of the first out-of-order adjacent pair, if any.
fn first_order_violation(tags: &[TimeTag]) -> Option<usize> {
    tags.windows(2)
        .position(|w| w[0].sort_key() > w[1].sort_key())
}

fn check_ordered(tags: &[TimeTag], what: &str) -> Result<()> {
    if let Some(i) = first_order_violation(tags) {
        return Err(Error::OrderViolation(format!(
            "{what}: tag {} ({} @ {} ps) precedes tag {} ({} @ {} ps)",
            i + 1,
            tags[i + 1].channel,
            tags[i + 1].time,
            i,
            tags[i].channel,
            tags[i].time,
        )));
    }
    Ok(())
}

pub(crate) fn is_ordered(tags: &[TimeTag]) -> bool {
    first_order_violation(tags).is_none()
}

const MAGIC: &[u8; 4] = b"HTAG";
const FORMAT_VERSION: u8 = 1;
pub const HEADER_BYTES: u64 = 16;
pub const RECORD_BYTES: u64 = 16;

/// Writes a tag stream in the binary format:
/// 16-byte header = magic `HTAG`, version byte (1), 3 reserved zero bytes,
/// record count (u64 LE); then one 16-byte record per tag = channel byte,
/// 7 reserved zero bytes, time (i64 LE picoseconds).
///
/// Returns the number of bytes written (`16 + 16 * tags.len()`).
pub fn write_stream<W: Write>(tags: &[TimeTag], sink: &mut W) -> Result<u64> {
    check_ordered(tags, "write_stream input")?;
    let mut header = [0u8; HEADER_BYTES as usize];
    header[..4].copy_from_slice(MAGIC);
    header[4] = FORMAT_VERSION;
    header[8..16].copy_from_slice(&(tags.len() as u64).to_le_bytes());
    sink.write_all(&header)?;

    let mut record = [0u8; RECORD_BYTES as usize];
    for tag in tags {
        record[0] = tag.channel as u8;
        record[8..16].copy_from_slice(&tag.time.to_le_bytes());
        sink.write_all(&record)?;
    }
    Ok(HEADER_BYTES + RECORD_BYTES * tags.len() as u64)
}

/// Reads a binary tag stream, validating framing and time ordering.
pub fn read_stream<R: Read>(source: &mut R) -> Result<Vec<TimeTag>> {
    let mut header = [0u8; HEADER_BYTES as usize];
    source.read_exact(&mut header).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("stream shorter than the 16-byte header".into())
        } else {
            Error::Io(e)
        }
    })?;
    if &header[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"HTAG\"",
            &header[..4]
        )));
    }
    if header[4] != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {}",
            header[4]
        )));
    }
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap());

    let mut body = Vec::new();
    source.read_to_end(&mut body)?;
    if !(body.len() as u64).is_multiple_of(RECORD_BYTES) {
        return Err(Error::Format(format!(
            "record section is {} bytes, not a multiple of {RECORD_BYTES}",
            body.len()
        )));
    }
    let n_records = body.len() as u64 / RECORD_BYTES;
    if n_records != count {
        return Err(Error::Format(format!(
            "header promises {count} records, stream holds {n_records}"
        )));
    }

    let mut tags = Vec::with_capacity(n_records as usize);
    for record in body.chunks_exact(RECORD_BYTES as usize) {
        let channel = Channel::from_u8(record[0])?;
        let time = i64::from_le_bytes(record[8..16].try_into().unwrap());
        tags.push(TimeTag { channel, time });
    }
    check_ordered(&tags, "read_stream")?;
    Ok(tags)
}

/// Writes the CSV alternative format: optional `#` comment lines, then a
/// `channel,time_ps` header and one row per tag.
pub fn write_stream_csv<W: Write>(
    tags: &[TimeTag],
    provenance: Option<&str>,
    sink: &mut W,
) -> Result<()> {
    check_ordered(tags, "write_stream_csv input")?;
    if let Some(line) = provenance {
        writeln!(sink, "# {line}")?;
    }
    writeln!(sink, "channel,time_ps")?;
    for tag in tags {
        writeln!(sink, "{},{}", tag.channel, tag.time)?;
    }
    Ok(())
}

/// Reads the CSV tag format, skipping `#` comment lines.
pub fn read_stream_csv<R: Read>(source: &mut R) -> Result<Vec<TimeTag>> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    match lines.next() {
        Some((_, header)) if header.trim() == "channel,time_ps" => {}
        Some((n, header)) => {
            return Err(Error::Format(format!(
                "line {}: expected header \"channel,time_ps\", got {header:?}",
                n + 1
            )))
        }
        None => return Err(Error::Format("empty tag CSV".into())),
    }
    let mut tags = Vec::new();
    for (n, line) in lines {
        let (ch, t) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("line {}: expected channel,time_ps", n + 1)))?;
        let channel: Channel = ch.trim().parse()?;
        let time: i64 = t
            .trim()
            .parse()
            .map_err(|e| Error::Format(format!("line {}: bad time_ps: {e}", n + 1)))?;
        tags.push(TimeTag { channel, time });
    }
    check_ordered(&tags, "read_stream_csv")?;
    Ok(tags)
}

/// Merges two time-ordered streams into one, stable under the tie rule
/// (equal times order by channel number).
pub fn merge_streams(a: &[TimeTag], b: &[TimeTag]) -> Result<Vec<TimeTag>> {
    check_ordered(a, "merge_streams first input")?;
    check_ordered(b, "merge_streams second input")?;
    let mut merged = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i].sort_key() <= b[j].sort_key() {
            merged.push(a[i]);
            i += 1;
        } else {
            merged.push(b[j]);
            j += 1;
        }
    }
    merged.extend_from_slice(&a[i..]);
    merged.extend_from_slice(&b[j..]);
    Ok(merged)
}

/// Binned cross-correlation counts between two channels.
///
/// The grid is anchored so that one bin is centered on zero delay; `bin_width`
/// must be even and divide `t_max - t_min` exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    bin_width: i64,
    t_min: i64,
    t_max: i64,
    counts: Vec<u64>,
}

impl Histogram {
    /// Creates an empty histogram after validating the bin grid.
    pub fn new(bin_width: i64, t_min: i64, t_max: i64) -> Result<Histogram> {
        if bin_width <= 0 {
            return Err(Error::InvalidParam(format!(
                "bin_width must be positive, got {bin_width}"
            )));
        }
        if bin_width % 2 != 0 {
            return Err(Error::InvalidParam(format!(
                "bin_width must be even in picoseconds to center a bin on zero, got {bin_width}"
            )));
        }
        if t_min >= t_max {
            return Err(Error::InvalidParam(format!(
                "empty delay range [{t_min}, {t_max})"
            )));
        }
        if (t_max - t_min) % bin_width != 0 {
            return Err(Error::InvalidParam(format!(
                "range {} ps is not a whole number of {bin_width} ps bins",
                t_max - t_min
            )));
        }
        // One bin must span [-bin_width/2, bin_width/2).
        if (t_min + bin_width / 2).rem_euclid(bin_width) != 0
            || t_min > -bin_width / 2
            || t_max < bin_width / 2
        {
            return Err(Error::InvalidParam(format!(
                "grid [{t_min}, {t_max}) with width {bin_width} has no bin centered on zero delay"
            )));
        }
        let n_bins = ((t_max - t_min) / bin_width) as usize;
        Ok(Histogram {
            bin_width,
            t_min,
            t_max,
            counts: vec![0; n_bins],
        })
    }

    pub fn bin_width(&self) -> i64 {
        self.bin_width
    }

    pub fn t_min(&self) -> i64 {
        self.t_min
    }

    pub fn t_max(&self) -> i64 {
        self.t_max
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// Index of the bin containing `delta`, if it lies in `[t_min, t_max)`.
    pub fn bin_index(&self, delta: i64) -> Option<usize> {
        if delta < self.t_min || delta >= self.t_max {
            return None;
        }
        Some(((delta - self.t_min) / self.bin_width) as usize)
    }

    /// Center of bin `i` in picoseconds.
    pub fn bin_center(&self, i: usize) -> i64 {
        self.t_min + i as i64 * self.bin_width + self.bin_width / 2
    }

    /// Index of the bin centered on zero delay.
    pub fn zero_bin(&self) -> usize {
        ((-self.t_min - self.bin_width / 2) / self.bin_width) as usize
    }

    pub fn record(&mut self, delta: i64) {
        if let Some(i) = self.bin_index(delta) {
            self.counts[i] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Rebuilds a histogram from parts, revalidating the grid.
    pub fn from_counts(
        bin_width: i64,
        t_min: i64,
        t_max: i64,
        counts: Vec<u64>,
    ) -> Result<Histogram> {
        let mut hist = Histogram::new(bin_width, t_min, t_max)?;
        if counts.len() != hist.n_bins() {
            return Err(Error::InvalidParam(format!(
                "grid defines {} bins but {} counts were supplied",
                hist.n_bins(),
                counts.len()
            )));
        }
        hist.counts = counts;
        Ok(hist)
    }
}

/// Cross-correlates two photon channels of a time-ordered stream.
///
/// Every pair `(t_a on ch_a, t_b on ch_b)` with `t_b - t_a` in
/// `[t_min, t_max)` increments the bin containing the delay. Runs as a sorted
/// two-pointer sweep, O(N + pairs) after channel extraction.
pub fn cross_correlate(
    tags: &[TimeTag],
    ch_a: Channel,
    ch_b: Channel,
    bin_width: i64,
    t_min: i64,
    t_max: i64,
) -> Result<Histogram> {
    if ch_a.is_marker() || ch_b.is_marker() {
        return Err(Error::InvalidChannel(format!(
            "correlation requires photon channels, got {ch_a} x {ch_b}"
        )));
    }
    if ch_a == ch_b {
        return Err(Error::InvalidChannel(format!(
            "correlation channels must differ, got {ch_a} twice"
        )));
    }
    check_ordered(tags, "cross_correlate input")?;
    let mut hist = Histogram::new(bin_width, t_min, t_max)?;

    let a_times: Vec<i64> = tags
        .iter()
        .filter(|t| t.channel == ch_a)
        .map(|t| t.time)
        .collect();
    let b_times: Vec<i64> = tags
        .iter()
        .filter(|t| t.channel == ch_b)
        .map(|t| t.time)
        .collect();

    // delta = t_b - t_a in [t_min, t_max)  <=>  t_a in (t_b - t_max, t_b - t_min]
    let (mut lo, mut hi) = (0usize, 0usize);
    for &tb in &b_times {
        while lo < a_times.len() && a_times[lo] <= tb - t_max {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < a_times.len() && a_times[hi] <= tb - t_min {
            hi += 1;
        }
        for &ta in &a_times[lo..hi] {
            hist.counts[((tb - ta - t_min) / bin_width) as usize] += 1;
        }
    }
    Ok(hist)
}
