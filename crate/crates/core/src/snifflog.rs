//! Sniffer capture logs: parsing, writing, RNTI filtering and cross-sniffer
//! matching by (frame, subframe).
//!
//! Canonical line layout, whitespace separated:
//!
//! ```text
//! FRAME.SUBFRAME RNTI DELTA_US SNR_DB CQI NOISE_DBM
//! 017432.4 7423 25.36 22.1 12 -92.4
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Any other line that
//! does not fit the layout is skipped and reported as a [`Diagnostic`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};

/// Largest backwards jump in the frame counter that is still read as
/// reordering rather than a wrap of the 1024-frame SFN counter.
const WRAP_THRESHOLD: u64 = 512;
const SFN_MODULUS: u64 = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRecord {
    pub frame: u64,
    pub subframe: u8,
    pub rnti: u16,
    pub dl_ul_delta_us: f64,
    pub snr_db: f64,
    pub cqi: u8,
    pub noise_power_dbm: f64,
    pub sniffer_id: String,
}

impl TimingRecord {
    /// Checks the invariants a record must satisfy to be written.
    pub fn is_valid(&self) -> bool {
        self.subframe <= 9
            && self.cqi <= 15
            && self.dl_ul_delta_us.is_finite()
            && self.snr_db.is_finite()
            && self.noise_power_dbm.is_finite()
    }

    pub fn delta_seconds(&self) -> f64 {
        self.dl_ul_delta_us * 1e-6
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiagnosticReason {
    FieldCount(usize),
    BadFrameSubframe(String),
    SubframeOutOfRange(u32),
    BadRnti(String),
    BadNumber { field: &'static str, text: String },
    NonFinite(&'static str),
    BadCqi(String),
    CqiOutOfRange(u32),
    NotUtf8,
}

impl fmt::Display for DiagnosticReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FieldCount(n) => write!(f, "expected 6 fields, found {n}"),
            Self::BadFrameSubframe(t) => write!(f, "malformed FRAME.SUBFRAME field '{t}'"),
            Self::SubframeOutOfRange(s) => write!(f, "subframe {s} out of range 0-9"),
            Self::BadRnti(t) => write!(f, "malformed RNTI '{t}'"),
            Self::BadNumber { field, text } => write!(f, "malformed {field} '{text}'"),
            Self::NonFinite(field) => write!(f, "non-finite {field}"),
            Self::BadCqi(t) => write!(f, "malformed CQI '{t}'"),
            Self::CqiOutOfRange(c) => write!(f, "CQI {c} out of range 0-15"),
            Self::NotUtf8 => write!(f, "line is not valid UTF-8"),
        }
    }
}

/// A skipped input line.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    /// 1-based line number.
    pub line: usize,
    pub reason: DiagnosticReason,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedLog {
    pub records: Vec<TimingRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

fn parse_float(field: &'static str, text: &str) -> Result<f64, DiagnosticReason> {
    let v: f64 = text.parse().map_err(|_| DiagnosticReason::BadNumber {
        field,
        text: text.to_owned(),
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DiagnosticReason::NonFinite(field))
    }
}

/// Parses one non-blank, non-comment line.
pub fn parse_line(line: &str, sniffer_id: &str) -> Result<TimingRecord, DiagnosticReason> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(DiagnosticReason::FieldCount(fields.len()));
    }
    let bad_key = || DiagnosticReason::BadFrameSubframe(fields[0].to_owned());
    let (frame_text, sub_text) = fields[0].split_once('.').ok_or_else(bad_key)?;
    if frame_text.is_empty()
        || sub_text.is_empty()
        || !frame_text.bytes().all(|b| b.is_ascii_digit())
        || !sub_text.bytes().all(|b| b.is_ascii_digit())
    {
        return Err(bad_key());
    }
    let frame: u64 = frame_text.parse().map_err(|_| bad_key())?;
    let subframe: u32 = sub_text.parse().map_err(|_| bad_key())?;
    if subframe > 9 {
        return Err(DiagnosticReason::SubframeOutOfRange(subframe));
    }
    let rnti: u16 = fields[1]
        .parse()
        .map_err(|_| DiagnosticReason::BadRnti(fields[1].to_owned()))?;
    let dl_ul_delta_us = parse_float("DL-UL delta", fields[2])?;
    let snr_db = parse_float("SNR", fields[3])?;
    let cqi: u32 = fields[4]
        .parse()
        .map_err(|_| DiagnosticReason::BadCqi(fields[4].to_owned()))?;
    if cqi > 15 {
        return Err(DiagnosticReason::CqiOutOfRange(cqi));
    }
    let noise_power_dbm = parse_float("noise power", fields[5])?;
    Ok(TimingRecord {
        frame,
        subframe: subframe as u8,
        rnti,
        dl_ul_delta_us,
        snr_db,
        cqi: cqi as u8,
        noise_power_dbm,
        sniffer_id: sniffer_id.to_owned(),
    })
}

/// Streaming reader over a canonical log.
pub struct LogReader<R> {
    inner: R,
    sniffer_id: String,
    line: usize,
    buf: Vec<u8>,
}

impl<R: BufRead> LogReader<R> {
    pub fn new(inner: R, sniffer_id: impl Into<String>) -> Self {
        Self {
            inner,
            sniffer_id: sniffer_id.into(),
            line: 0,
            buf: Vec::new(),
        }
    }
}

impl<R: BufRead> Iterator for LogReader<R> {
    type Item = io::Result<Result<TimingRecord, Diagnostic>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e)),
            }
            self.line += 1;
            let line = self.line;
            let text = match std::str::from_utf8(&self.buf) {
                Ok(t) => t.trim(),
                Err(_) => {
                    return Some(Ok(Err(Diagnostic {
                        line,
                        reason: DiagnosticReason::NotUtf8,
                    })))
                }
            };
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            return Some(Ok(
                parse_line(text, &self.sniffer_id).map_err(|reason| Diagnostic { line, reason })
            ));
        }
    }
}

/// Reads a whole log. Only an I/O failure of the stream is an error; bad
/// lines become diagnostics.
pub fn parse_log<R: BufRead>(reader: R, sniffer_id: &str) -> io::Result<ParsedLog> {
    let mut out = ParsedLog::default();
    for item in LogReader::new(reader, sniffer_id) {
        match item? {
            Ok(r) => out.records.push(r),
            Err(d) => out.diagnostics.push(d),
        }
    }
    Ok(out)
}

pub fn format_record(r: &TimingRecord) -> String {
    format!(
        "{:06}.{} {} {} {} {} {}",
        r.frame, r.subframe, r.rnti, r.dl_ul_delta_us, r.snr_db, r.cqi, r.noise_power_dbm
    )
}

/// Writes records in canonical form, one newline-terminated line each.
pub fn write_log<'a, W, I>(mut out: W, records: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a TimingRecord>,
{
    for r in records {
        writeln!(out, "{}", format_record(r))?;
    }
    Ok(())
}

/// Keeps records of one RNTI, preserving order.
pub fn filter_rnti(records: Vec<TimingRecord>, rnti: u16) -> Vec<TimingRecord> {
    records.into_iter().filter(|r| r.rnti == rnti).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedSample {
    /// Frame number after SFN unwrapping.
    pub frame: u64,
    pub subframe: u8,
    pub delta_a_us: f64,
    pub delta_b_us: f64,
    pub snr_a_db: f64,
    pub snr_b_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchDiagnostic {
    /// The key occurs `count` times on one side; no sample is emitted for it.
    DuplicateKey {
        side: Side,
        frame: u64,
        subframe: u8,
        count: usize,
    },
    RntiMismatch {
        frame: u64,
        subframe: u8,
        rnti_a: u16,
        rnti_b: u16,
    },
}

impl fmt::Display for MatchDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateKey { side, frame, subframe, count } => write!(
                f,
                "ambiguous match: frame {frame} subframe {subframe} appears {count} times in log {side:?}"
            ),
            Self::RntiMismatch { frame, subframe, rnti_a, rnti_b } => write!(
                f,
                "frame {frame} subframe {subframe}: RNTI {rnti_a} in log A but {rnti_b} in log B"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchOutput {
    pub samples: Vec<MatchedSample>,
    pub diagnostics: Vec<MatchDiagnostic>,
}

/// Maps raw frame numbers to a monotone counter, in input order. A drop of
/// more than half the SFN range starts a new wrap epoch.
pub fn unwrap_frames(records: &[TimingRecord]) -> Vec<u64> {
    let mut epoch = 0u64;
    let mut prev: Option<u64> = None;
    records
        .iter()
        .map(|r| {
            if let Some(p) = prev {
                if r.frame + WRAP_THRESHOLD < p {
                    epoch += 1;
                }
            }
            prev = Some(r.frame);
            r.frame + epoch * SFN_MODULUS
        })
        .collect()
}

fn index_by_key(records: &[TimingRecord]) -> BTreeMap<(u64, u8), Vec<&TimingRecord>> {
    let mut map: BTreeMap<(u64, u8), Vec<&TimingRecord>> = BTreeMap::new();
    for (frame, r) in unwrap_frames(records).into_iter().zip(records) {
        map.entry((frame, r.subframe)).or_default().push(r);
    }
    map
}

/// Pairs two sniffers' records by (frame, subframe). Keys present exactly
/// once on each side yield a sample; the output is sorted by key.
pub fn match_records(records_a: &[TimingRecord], records_b: &[TimingRecord]) -> MatchOutput {
    let a = index_by_key(records_a);
    let b = index_by_key(records_b);
    let mut out = MatchOutput::default();

    for (side, map) in [(Side::A, &a), (Side::B, &b)] {
        for (&(frame, subframe), v) in map.iter().filter(|(_, v)| v.len() > 1) {
            out.diagnostics.push(MatchDiagnostic::DuplicateKey {
                side,
                frame,
                subframe,
                count: v.len(),
            });
        }
    }

    for (&(frame, subframe), va) in &a {
        let Some(vb) = b.get(&(frame, subframe)) else {
            continue;
        };
        if va.len() != 1 || vb.len() != 1 {
            continue;
        }
        let (ra, rb) = (va[0], vb[0]);
        if ra.rnti != rb.rnti {
            out.diagnostics.push(MatchDiagnostic::RntiMismatch {
                frame,
                subframe,
                rnti_a: ra.rnti,
                rnti_b: rb.rnti,
            });
            continue;
        }
        out.samples.push(MatchedSample {
            frame,
            subframe,
            delta_a_us: ra.dl_ul_delta_us,
            delta_b_us: rb.dl_ul_delta_us,
            snr_a_db: ra.snr_db,
            snr_b_db: rb.snr_db,
        });
    }
    out
}

pub const MATCHED_TABLE_HEADER: &str = "frame,subframe,delta_a_us,delta_b_us,snr_a_db,snr_b_db";

/// Writes matched samples as a comma-separated table with header.
pub fn write_matched_table<W: Write>(mut out: W, samples: &[MatchedSample]) -> io::Result<()> {
    writeln!(out, "{MATCHED_TABLE_HEADER}")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.frame, s.subframe, s.delta_a_us, s.delta_b_us, s.snr_a_db, s.snr_b_db
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(frame: u64, subframe: u8, rnti: u16, delta: f64) -> TimingRecord {
        TimingRecord {
            frame,
            subframe,
            rnti,
            dl_ul_delta_us: delta,
            snr_db: 20.0,
            cqi: 12,
            noise_power_dbm: -92.4,
            sniffer_id: "a".into(),
        }
    }

    #[test]
    fn canonical_line_parses() {
        let parsed = parse_log("017432.4 7423 25.36 22.1 12 -92.4\n".as_bytes(), "sn1").unwrap();
        assert!(parsed.diagnostics.is_empty());
        let r = &parsed.records[0];
        assert_eq!((r.frame, r.subframe, r.rnti, r.cqi), (17432, 4, 7423, 12));
        assert_eq!(r.dl_ul_delta_us, 25.36);
        assert_eq!(r.snr_db, 22.1);
        assert_eq!(r.noise_power_dbm, -92.4);
        assert_eq!(format_record(r), "017432.4 7423 25.36 22.1 12 -92.4");
    }

    #[test]
    fn empty_stream() {
        assert_eq!(parse_log(&b""[..], "x").unwrap(), ParsedLog::default());
    }

    #[test]
    fn cqi_sixteen_is_rejected() {
        let text = "000001.0 7423 1.0 20 16 -90\n000001.1 7423 1.0 20 15 -90\n";
        let parsed = parse_log(text.as_bytes(), "x").unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(
            parsed.diagnostics,
            vec![Diagnostic {
                line: 1,
                reason: DiagnosticReason::CqiOutOfRange(16)
            }]
        );
    }

    #[test]
    fn malformed_lines_are_diagnosed() {
        let text = b"# header\n\n12.3 1 2\nabc.1 1 1 1 1 1\n000001.12 1 1 1 1 1\n1.1 x 1 1 1 1\n1.1 1 nan 1 1 1\n\xff\xfe\n";
        let parsed = parse_log(&text[..], "x").unwrap();
        assert!(parsed.records.is_empty());
        let lines: Vec<usize> = parsed.diagnostics.iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![3, 4, 5, 6, 7, 8]);
        assert_eq!(
            parsed.diagnostics[0].reason,
            DiagnosticReason::FieldCount(3)
        );
        assert_eq!(
            parsed.diagnostics[2].reason,
            DiagnosticReason::SubframeOutOfRange(12)
        );
        assert_eq!(
            parsed.diagnostics[4].reason,
            DiagnosticReason::NonFinite("DL-UL delta")
        );
        assert_eq!(parsed.diagnostics[5].reason, DiagnosticReason::NotUtf8);
    }

    #[test]
    fn write_examples() {
        let mut buf = Vec::new();
        write_log(&mut buf, &[]).unwrap();
        assert!(buf.is_empty());
        write_log(&mut buf, &[rec(3, 1, 9, -0.5)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "000003.1 9 -0.5 20 12 -92.4\n"
        );
    }

    #[test]
    fn rnti_filter() {
        let all = vec![rec(1, 0, 5, 0.0), rec(1, 1, 5, 0.0)];
        assert_eq!(filter_rnti(all.clone(), 5), all);
        assert!(filter_rnti(all, 6).is_empty());

        // a busy cell: many users interleaved with the target
        let mut busy = Vec::new();
        for n in 0..1900u64 {
            let rnti = if n % 19 == 0 {
                7423
            } else {
                100 + (n % 190) as u16
            };
            busy.push(rec(n / 10, (n % 10) as u8, rnti, n as f64));
        }
        let kept = filter_rnti(busy, 7423);
        assert_eq!(kept.len(), 100);
        assert!(kept.iter().all(|r| r.rnti == 7423));
        assert!(kept
            .windows(2)
            .all(|w| w[0].dl_ul_delta_us < w[1].dl_ul_delta_us));
    }

    #[test]
    fn match_identical_and_disjoint() {
        let a: Vec<_> = (0..20)
            .map(|n| rec(n / 10, (n % 10) as u8, 1, n as f64))
            .collect();
        assert_eq!(match_records(&a, &a).samples.len(), a.len());
        let b: Vec<_> = (20..40)
            .map(|n| rec(n / 10, (n % 10) as u8, 1, n as f64))
            .collect();
        assert!(match_records(&a, &b).samples.is_empty());
    }

    #[test]
    fn duplicate_key_is_dropped() {
        let a = vec![
            rec(100, 3, 1, 1.0),
            rec(100, 3, 1, 2.0),
            rec(100, 4, 1, 3.0),
        ];
        let b = vec![rec(100, 3, 1, 5.0), rec(100, 4, 1, 6.0)];
        let out = match_records(&a, &b);
        assert_eq!(out.samples.len(), 1);
        assert_eq!(out.samples[0].subframe, 4);
        assert_eq!(
            out.diagnostics,
            vec![MatchDiagnostic::DuplicateKey {
                side: Side::A,
                frame: 100,
                subframe: 3,
                count: 2
            }]
        );
    }

    #[test]
    fn sfn_wrap_is_unwrapped() {
        let frames = [1022u64, 1023, 0, 1, 1];
        let recs: Vec<_> = frames.iter().map(|&f| rec(f, 0, 1, 0.0)).collect();
        assert_eq!(unwrap_frames(&recs), vec![1022, 1023, 1024, 1025, 1025]);

        // sorted output follows capture order across the wrap
        let a: Vec<_> = [1023u64, 0]
            .iter()
            .map(|&f| rec(f, 5, 1, f as f64))
            .collect();
        let out = match_records(&a, &a);
        let keys: Vec<_> = out.samples.iter().map(|s| s.frame).collect();
        assert_eq!(keys, vec![1023, 1024]);
    }

    fn record_strategy() -> impl Strategy<Value = TimingRecord> {
        (
            0u64..2_000_000,
            0u8..10,
            any::<u16>(),
            -1.0e4..1.0e4f64,
            -20.0..60.0f64,
            0u8..16,
            -140.0..-40.0f64,
        )
            .prop_map(|(frame, subframe, rnti, d, snr, cqi, noise)| TimingRecord {
                frame,
                subframe,
                rnti,
                dl_ul_delta_us: d,
                snr_db: snr,
                cqi,
                noise_power_dbm: noise,
                sniffer_id: "sn".into(),
            })
    }

    fn keyed(max_frame: u64) -> impl Strategy<Value = Vec<TimingRecord>> {
        prop::collection::vec((0..max_frame, 0u8..10, -50.0..50.0f64), 0..40)
            .prop_map(|v| v.into_iter().map(|(f, s, d)| rec(f, s, 1, d)).collect())
    }

    proptest! {
        #[test]
        fn write_then_parse_is_identity(records in prop::collection::vec(record_strategy(), 0..200)) {
            let mut buf = Vec::new();
            write_log(&mut buf, &records).unwrap();
            let parsed = parse_log(&buf[..], "sn").unwrap();
            prop_assert!(parsed.diagnostics.is_empty());
            prop_assert_eq!(parsed.records, records);
        }

        #[test]
        fn matching_is_symmetric_and_sorted(a in keyed(300), b in keyed(300)) {
            let ab = match_records(&a, &b);
            let ba = match_records(&b, &a);
            prop_assert_eq!(ab.samples.len(), ba.samples.len());
            for (x, y) in ab.samples.iter().zip(&ba.samples) {
                prop_assert_eq!((x.frame, x.subframe), (y.frame, y.subframe));
                prop_assert_eq!(x.delta_a_us, y.delta_b_us);
                prop_assert_eq!(x.delta_b_us, y.delta_a_us);
            }
            prop_assert!(ab.samples.windows(2).all(|w| (w[0].frame, w[0].subframe) < (w[1].frame, w[1].subframe)));
        }
    }
}
