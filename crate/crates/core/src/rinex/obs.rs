use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;

use super::{columns, header_label, parse_version_line, RinexError};
use crate::gnss::{EcefPosition, GpsTime, SatId};

/// Observation codes written for GPS, in column order.
pub const GPS_L1_CODES: [&str; 3] = ["C1C", "D1C", "S1C"];

const FIELD_WIDTH: usize = 16;
const CN0_RANGE: (f64, f64) = (0.0, 70.0);
const PSEUDORANGE_RANGE: (f64, f64) = (1.8e7, 3.0e7);

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationHeader {
    pub marker_name: String,
    pub approx_position: EcefPosition,
    /// Declared observation codes keyed by constellation letter.
    pub obs_codes: BTreeMap<char, Vec<String>>,
}

impl ObservationHeader {
    /// Header declaring the canonical GPS L1 code set.
    pub fn gps_l1(marker_name: impl Into<String>, approx_position: EcefPosition) -> Self {
        let mut obs_codes = BTreeMap::new();
        obs_codes.insert('G', GPS_L1_CODES.iter().map(|c| c.to_string()).collect());
        Self {
            marker_name: marker_name.into(),
            approx_position,
            obs_codes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub sat: SatId,
    /// Meters.
    pub pseudorange: Option<f64>,
    /// Hz.
    pub doppler: Option<f64>,
    /// dB-Hz.
    pub cn0: Option<f64>,
    pub loss_of_lock: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationEpoch {
    pub time: GpsTime,
    /// Sorted by satellite, at most one per satellite.
    pub records: Vec<ObservationRecord>,
}

impl ObservationEpoch {
    pub fn record(&self, sat: SatId) -> Option<&ObservationRecord> {
        self.records
            .binary_search_by_key(&sat, |r| r.sat)
            .ok()
            .map(|i| &self.records[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFile {
    pub header: ObservationHeader,
    /// Strictly increasing in time.
    pub epochs: Vec<ObservationEpoch>,
}

/// Bookkeeping from a parse: every observation record encountered is either
/// returned or skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseSummary {
    pub returned_records: usize,
    pub skipped_records: usize,
    pub skipped_epochs: usize,
    pub warnings: Vec<String>,
}

impl ParseSummary {
    pub fn total_records(&self) -> usize {
        self.returned_records + self.skipped_records
    }

    fn warn(&mut self, msg: String) {
        warn!("{msg}");
        self.warnings.push(msg);
    }
}

pub fn parse_observation(text: &str) -> Result<ObservationFile, RinexError> {
    parse_observation_detailed(text).map(|(file, _)| file)
}

pub fn parse_observation_detailed(text: &str) -> Result<(ObservationFile, ParseSummary), RinexError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut summary = ParseSummary::default();

    parse_version_line(lines.next().map(|(_, l)| l), 'O')?;
    let header = parse_header(&mut lines)?;
    let gps_codes = header.obs_codes.get(&'G').cloned().unwrap_or_default();
    let slot = |code: &str| gps_codes.iter().position(|c| c == code);
    let (pr_slot, dop_slot, cn0_slot) = (slot("C1C"), slot("D1C"), slot("S1C"));

    let mut epochs: Vec<ObservationEpoch> = Vec::new();
    while let Some((line_no, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let epoch_err = |reason: &str| RinexError::MalformedEpoch {
            line: line_no,
            reason: reason.to_string(),
        };
        if !line.starts_with('>') {
            return Err(epoch_err("expected epoch line starting with `>`"));
        }
        let (time, flag, count) = parse_epoch_line(line).map_err(|r| epoch_err(&r))?;
        if let Some(prev) = epochs.last() {
            if time <= prev.time {
                return Err(epoch_err("epoch time does not increase"));
            }
        }

        let carries_records = matches!(flag, 0 | 1 | 6);
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let (rec_no, rec_line) = lines.next().ok_or_else(|| RinexError::MalformedEpoch {
                line: line_no,
                reason: format!("epoch announces {count} lines but the file ends"),
            })?;
            if !carries_records {
                continue;
            }
            if rec_line.starts_with('>') {
                return Err(RinexError::MalformedEpoch {
                    line: rec_no,
                    reason: "epoch line where an observation record was expected".into(),
                });
            }
            if flag != 0 {
                summary.skipped_records += 1;
                continue;
            }
            let system = rec_line.chars().next().unwrap_or(' ');
            if system != 'G' {
                if !system.is_ascii_alphabetic() {
                    return Err(RinexError::MalformedEpoch {
                        line: rec_no,
                        reason: "record does not start with a satellite id".into(),
                    });
                }
                summary.skipped_records += 1;
                summary.warn(format!("line {rec_no}: skipped non-GPS record `{system}`"));
                continue;
            }
            let rec = parse_record(rec_line, rec_no, &gps_codes, (pr_slot, dop_slot, cn0_slot), &mut summary)?;
            records.push(rec);
        }
        if flag != 0 {
            summary.skipped_epochs += 1;
            summary.warn(format!("line {line_no}: skipped epoch with flag {flag}"));
            continue;
        }
        records.sort_by_key(|r| r.sat);
        if records.windows(2).any(|w| w[0].sat == w[1].sat) {
            return Err(epoch_err("duplicate satellite in epoch"));
        }
        summary.returned_records += records.len();
        epochs.push(ObservationEpoch { time, records });
    }

    Ok((ObservationFile { header, epochs }, summary))
}

fn parse_header<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
) -> Result<ObservationHeader, RinexError> {
    let mut marker_name = String::new();
    let mut approx_position = EcefPosition::default();
    let mut obs_codes: BTreeMap<char, Vec<String>> = BTreeMap::new();
    // (system, announced count) of a SYS / # / OBS TYPES block still being filled
    let mut pending: Option<(char, usize)> = None;
    let bad = |what: &str| RinexError::MalformedHeader(what.to_string());

    for (line_no, line) in lines.by_ref() {
        match header_label(line) {
            "END OF HEADER" => {
                if obs_codes.is_empty() {
                    return Err(bad("missing SYS / # / OBS TYPES"));
                }
                if let Some((sys, n)) = pending {
                    return Err(bad(&format!("system {sys} declares {n} codes but lists fewer")));
                }
                return Ok(ObservationHeader {
                    marker_name,
                    approx_position,
                    obs_codes,
                });
            }
            "MARKER NAME" => {
                marker_name = columns(line, 0, 60).unwrap_or("").trim().to_string();
            }
            "APPROX POSITION XYZ" => {
                let mut xyz = [0.0; 3];
                for (k, v) in xyz.iter_mut().enumerate() {
                    let field = columns(line, 14 * k, 14 * (k + 1))
                        .ok_or_else(|| bad("unreadable APPROX POSITION XYZ"))?;
                    *v = field.trim().parse().map_err(|_| {
                        bad(&format!("line {line_no}: bad APPROX POSITION XYZ `{}`", field.trim()))
                    })?;
                }
                approx_position = EcefPosition::new(xyz[0], xyz[1], xyz[2]);
            }
            "SYS / # / OBS TYPES" => {
                let body = columns(line, 0, 60).ok_or_else(|| bad("unreadable SYS / # / OBS TYPES"))?;
                let sys_char = body.chars().next().unwrap_or(' ');
                let (sys, remaining) = if sys_char == ' ' {
                    pending.ok_or_else(|| bad(&format!("line {line_no}: orphan OBS TYPES continuation")))?
                } else {
                    let n: usize = columns(body, 1, 6)
                        .unwrap_or("")
                        .trim()
                        .parse()
                        .map_err(|_| bad(&format!("line {line_no}: bad observation count")))?;
                    obs_codes.insert(sys_char, Vec::with_capacity(n));
                    (sys_char, n)
                };
                let codes = obs_codes.entry(sys).or_default();
                let mut left = remaining;
                for code in columns(body, 6, 60).unwrap_or("").split_whitespace() {
                    if left == 0 {
                        break;
                    }
                    codes.push(code.to_string());
                    left -= 1;
                }
                pending = if left > 0 { Some((sys, left)) } else { None };
            }
            _ => {}
        }
    }
    Err(bad("missing END OF HEADER"))
}

fn parse_int(field: Option<&str>, what: &str) -> Result<i64, String> {
    let s = field.ok_or_else(|| format!("unreadable {what}"))?.trim();
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("bad {what} `{s}`"));
    }
    s.parse().map_err(|_| format!("bad {what} `{s}`"))
}

/// `> yyyy mm dd hh mm ss.sssssss  f nnn`
fn parse_epoch_line(line: &str) -> Result<(GpsTime, u8, usize), String> {
    if line.len() < 35 {
        return Err("epoch line shorter than the fixed-column layout".into());
    }
    for gap in [1usize, 6, 9, 12, 15] {
        if columns(line, gap, gap + 1) != Some(" ") {
            return Err("epoch fields are not separated at fixed columns".into());
        }
    }
    let year = parse_int(columns(line, 2, 6), "year")?;
    let month = parse_int(columns(line, 7, 9), "month")?;
    let day = parse_int(columns(line, 10, 12), "day")?;
    let hour = parse_int(columns(line, 13, 15), "hour")?;
    let minute = parse_int(columns(line, 16, 18), "minute")?;
    let sec_str = columns(line, 18, 29).ok_or("unreadable seconds")?.trim();
    let second: f64 = sec_str
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s >= 0.0)
        .ok_or_else(|| format!("bad seconds `{sec_str}`"))?;
    let flag = parse_int(columns(line, 31, 32), "epoch flag")?;
    let count = parse_int(columns(line, 32, 35), "satellite count")?;
    if flag > 6 {
        return Err(format!("epoch flag {flag} out of range"));
    }
    let time = GpsTime::from_calendar(
        year as i32,
        month as u32,
        day as u32,
        hour as u32,
        minute as u32,
        second,
    )
    .map_err(|e| e.to_string())?;
    Ok((time, flag as u8, count as usize))
}

fn parse_record(
    line: &str,
    line_no: usize,
    codes: &[String],
    (pr_slot, dop_slot, cn0_slot): (Option<usize>, Option<usize>, Option<usize>),
    summary: &mut ParseSummary,
) -> Result<ObservationRecord, RinexError> {
    let err = |reason: String| RinexError::MalformedEpoch { line: line_no, reason };
    let sat: SatId = columns(line, 0, 3)
        .unwrap_or("")
        .parse()
        .map_err(|e: crate::gnss::GnssError| err(e.to_string()))?;

    let mut values: Vec<Option<f64>> = vec![None; codes.len()];
    let mut loss_of_lock = false;
    for (k, value) in values.iter_mut().enumerate() {
        let start = 3 + FIELD_WIDTH * k;
        let field = columns(line, start, start + FIELD_WIDTH)
            .ok_or_else(|| err(format!("unreadable field for {}", codes[k])))?;
        let num = columns(field, 0, 14).unwrap_or("").trim();
        if !num.is_empty() {
            let v: f64 = num
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| err(format!("bad {} value `{num}`", codes[k])))?;
            *value = Some(v);
        }
        match columns(field, 14, 15).and_then(|s| s.chars().next()) {
            Some(c @ '0'..='9') => loss_of_lock |= (c as u8 - b'0') & 1 == 1,
            Some(' ') | None => {}
            Some(c) => return Err(err(format!("bad LLI flag `{c}`"))),
        }
    }

    let mut pick = |slot: Option<usize>, band: Option<(f64, f64)>, what: &str| {
        let v = slot.and_then(|s| values[s]);
        match (v, band) {
            (Some(x), Some((lo, hi))) if !(lo..=hi).contains(&x) => {
                summary.warn(format!("line {line_no}: {sat} {what} {x} outside [{lo}, {hi}], dropped"));
                None
            }
            _ => v,
        }
    };
    Ok(ObservationRecord {
        sat,
        pseudorange: pick(pr_slot, Some(PSEUDORANGE_RANGE), "pseudorange"),
        doppler: pick(dop_slot, None, "doppler"),
        cn0: pick(cn0_slot, Some(CN0_RANGE), "C/N0"),
        loss_of_lock,
    })
}

fn header_line(out: &mut String, body: &str, label: &str) {
    let _ = writeln!(out, "{body:<60}{label}");
}

/// Serialize as RINEX 3.04 with the canonical GPS code set `C1C D1C S1C`.
/// Loss of lock is carried in the LLI column of the pseudorange field.
pub fn write_observation(file: &ObservationFile) -> String {
    let mut out = String::new();
    header_line(&mut out, &format!("{:9.2}{:11}{:<20}{:<20}", 3.04, "", "OBSERVATION DATA", "G (GPS)"), "RINEX VERSION / TYPE");
    let date = file
        .epochs
        .first()
        .map(|e| {
            let (y, mo, d, h, mi, s) = e.time.to_calendar();
            format!("{y:04}{mo:02}{d:02} {h:02}{mi:02}{:02} GPS", s.floor() as u32)
        })
        .unwrap_or_default();
    header_line(&mut out, &format!("{:<20}{:<20}{:<20}", "mplab", "", date), "PGM / RUN BY / DATE");
    header_line(&mut out, &file.header.marker_name, "MARKER NAME");
    let p = file.header.approx_position;
    header_line(&mut out, &format!("{:14.4}{:14.4}{:14.4}", p.x, p.y, p.z), "APPROX POSITION XYZ");
    let mut codes = format!("G{:5}", GPS_L1_CODES.len());
    for c in GPS_L1_CODES {
        codes.push(' ');
        codes.push_str(c);
    }
    header_line(&mut out, &codes, "SYS / # / OBS TYPES");
    if let Some(first) = file.epochs.first() {
        let (y, mo, d, h, mi, s) = first.time.to_calendar();
        header_line(
            &mut out,
            &format!("{y:6}{mo:6}{d:6}{h:6}{mi:6}{s:13.7}{:5}{:<3}", "", "GPS"),
            "TIME OF FIRST OBS",
        );
    }
    header_line(&mut out, "", "END OF HEADER");

    for epoch in &file.epochs {
        let (y, mo, d, h, mi, s) = epoch.time.to_calendar();
        let _ = writeln!(
            out,
            "> {y:04} {mo:02} {d:02} {h:02} {mi:02}{s:11.7}  0{:3}",
            epoch.records.len()
        );
        for rec in &epoch.records {
            let mut line = rec.sat.to_string();
            let fields = [rec.pseudorange, rec.doppler, rec.cn0];
            for (k, v) in fields.iter().enumerate() {
                match v {
                    Some(x) => {
                        let _ = write!(line, "{x:14.3}");
                    }
                    None => line.push_str(&" ".repeat(14)),
                }
                line.push(if k == 0 && rec.loss_of_lock { '1' } else { ' ' });
                line.push(' ');
            }
            let _ = writeln!(out, "{}", line.trim_end());
        }
    }
    out
}
