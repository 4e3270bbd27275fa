//! Fixed-column RINEX 3.04 subset: GPS L1 observations (C1C, D1C, S1C)
//! and GPS broadcast navigation records.

mod nav;
mod obs;

pub use nav::{parse_navigation, write_navigation, NavigationFile};
pub use obs::{
    parse_observation, parse_observation_detailed, write_observation, ObservationEpoch,
    ObservationFile, ObservationHeader, ObservationRecord, ParseSummary, GPS_L1_CODES,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RinexError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("malformed epoch at line {line}: {reason}")]
    MalformedEpoch { line: usize, reason: String },
    #[error("malformed navigation record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("unsupported RINEX version {0} (only 3.x is supported)")]
    VersionUnsupported(String),
}

/// Label occupying columns 61-80 of a header line.
fn header_label(line: &str) -> &str {
    line.get(60..).map(str::trim).unwrap_or("")
}

/// Characters `[start, end)` of a line, clipped to the line length. `None`
/// when the range does not fall on character boundaries (non-ASCII input).
fn columns(line: &str, start: usize, end: usize) -> Option<&str> {
    let len = line.len();
    if start >= len {
        return Some("");
    }
    line.get(start..end.min(len))
}

/// Parse the version line shared by observation and navigation headers.
fn parse_version_line(line: Option<&str>, expected_type: char) -> Result<(), RinexError> {
    let line = line.ok_or_else(|| RinexError::MalformedHeader("empty file".into()))?;
    if header_label(line) != "RINEX VERSION / TYPE" {
        return Err(RinexError::MalformedHeader(
            "first line is not RINEX VERSION / TYPE".into(),
        ));
    }
    let version = columns(line, 0, 9)
        .map(str::trim)
        .ok_or_else(|| RinexError::MalformedHeader("unreadable version field".into()))?;
    let major: f64 = version
        .parse()
        .map_err(|_| RinexError::MalformedHeader(format!("bad version `{version}`")))?;
    if major.trunc() != 3.0 {
        return Err(RinexError::VersionUnsupported(version.to_string()));
    }
    let file_type = columns(line, 20, 21).and_then(|s| s.chars().next());
    if file_type != Some(expected_type) {
        return Err(RinexError::MalformedHeader(format!(
            "file type {:?} where `{expected_type}` was expected",
            file_type
        )));
    }
    Ok(())
}
