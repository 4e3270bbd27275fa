//! Five-feature extraction from synchronized dual-antenna observations.
//!
//! Per (epoch, satellite) the features are: C/N0, its change since the
//! previous epoch, the pseudorange/Doppler consistency `Δρ − ρ̇·Δt`, the
//! elevation angle, and the double-difference pseudorange residual against
//! the highest-elevation satellite. The first four come from antenna 1.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnss::{EcefPosition, GpsTime, LocalFrame, SatId};
use crate::orbits::{
    doppler_to_rate, enu_elevation_azimuth, expected_pseudorange, satellite_position, OrbitError,
};
use crate::rinex::{NavigationFile, ObservationEpoch, ObservationFile, ObservationRecord};

/// Nominal sampling interval, seconds.
pub const NOMINAL_INTERVAL: f64 = 1.0;
/// Horizontal distance between the two antennas, m.
pub const ANTENNA_BASELINE: f64 = 0.19;
pub const BASELINE_TOLERANCE: f64 = 1e-3;
const INTERVAL_TOLERANCE: f64 = 1e-6;

/// Exact CSV header of feature tables.
pub const FEATURE_CSV_HEADER: [&str; 9] =
    ["time", "sat", "location", "cn0", "dcn0", "prdc", "elev", "ddres", "label"];
/// Exact CSV header of truth tables.
pub const TRUTH_CSV_HEADER: [&str; 3] = ["time", "sat", "label"];

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("{sat}: epochs are not consecutive (gap {gap} s, loss of lock {loss_of_lock})")]
    NotConsecutive { sat: SatId, gap: f64, loss_of_lock: bool },
    #[error("{sat}: missing {what}")]
    MissingObservation { sat: SatId, what: &'static str },
    #[error("only {0} satellite(s) common to both antennas")]
    InsufficientSatellites(usize),
    #[error("{0}: no ephemeris covers this epoch")]
    NoEphemeris(SatId),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error("antenna epochs have different timestamps ({0} vs {1})")]
    TimestampMismatch(GpsTime, GpsTime),
    #[error("antenna separation {0:.4} m differs from the {ANTENNA_BASELINE} m baseline")]
    BaselineMismatch(f64),
    #[error("sampling interval {0} s is not supported (expected {NOMINAL_INTERVAL} s)")]
    IntervalUnsupported(f64),
    #[error("reference and target satellite are both {0}")]
    SameSatellite(SatId),
    #[error("csv: {0}")]
    Csv(String),
}

/// Signal reception condition, in the fixed class order used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignalClass {
    #[serde(rename = "LOS")]
    LosOnly,
    #[serde(rename = "NLOS")]
    NlosOnly,
    #[serde(rename = "LOSNLOS")]
    LosNlos,
}

impl SignalClass {
    pub const ALL: [SignalClass; 3] = [SignalClass::LosOnly, SignalClass::NlosOnly, SignalClass::LosNlos];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Short label used in CSV and JSON files.
    pub fn label(self) -> &'static str {
        match self {
            SignalClass::LosOnly => "LOS",
            SignalClass::NlosOnly => "NLOS",
            SignalClass::LosNlos => "LOSNLOS",
        }
    }
}

impl fmt::Display for SignalClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SignalClass {
    type Err = FeatureError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "LOS" => Ok(SignalClass::LosOnly),
            "NLOS" => Ok(SignalClass::NlosOnly),
            "LOSNLOS" => Ok(SignalClass::LosNlos),
            other => Err(FeatureError::Csv(format!("unknown label `{other}`"))),
        }
    }
}

/// Antenna-1 and antenna-2 observations at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEpoch {
    pub antennas: [ObservationEpoch; 2],
    pub positions: [EcefPosition; 2],
}

impl DualEpoch {
    pub fn new(
        antenna1: ObservationEpoch,
        antenna2: ObservationEpoch,
        positions: [EcefPosition; 2],
    ) -> Result<Self, FeatureError> {
        if antenna1.time != antenna2.time {
            return Err(FeatureError::TimestampMismatch(antenna1.time, antenna2.time));
        }
        check_baseline(positions)?;
        Ok(Self {
            antennas: [antenna1, antenna2],
            positions,
        })
    }

    pub fn time(&self) -> GpsTime {
        self.antennas[0].time
    }

    /// Satellites with a record at both antennas, ascending.
    pub fn common_satellites(&self) -> Vec<SatId> {
        self.antennas[0]
            .records
            .iter()
            .map(|r| r.sat)
            .filter(|s| self.antennas[1].record(*s).is_some())
            .collect()
    }
}

fn check_baseline(positions: [EcefPosition; 2]) -> Result<(), FeatureError> {
    let baseline = positions[0].distance(positions[1]);
    if (baseline - ANTENNA_BASELINE).abs() > BASELINE_TOLERANCE {
        return Err(FeatureError::BaselineMismatch(baseline));
    }
    Ok(())
}

/// Align two antenna observation files by timestamp. Epochs present at only
/// one antenna are dropped. Antenna positions come from the file headers.
pub fn pair_streams(
    antenna1: &ObservationFile,
    antenna2: &ObservationFile,
) -> Result<Vec<DualEpoch>, FeatureError> {
    let positions = [antenna1.header.approx_position, antenna2.header.approx_position];
    check_baseline(positions)?;
    for file in [antenna1, antenna2] {
        let min_gap = file
            .epochs
            .windows(2)
            .map(|w| w[1].time.seconds_since(w[0].time))
            .fold(f64::INFINITY, f64::min);
        if min_gap.is_finite() && (min_gap - NOMINAL_INTERVAL).abs() > INTERVAL_TOLERANCE {
            return Err(FeatureError::IntervalUnsupported(min_gap));
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < antenna1.epochs.len() && j < antenna2.epochs.len() {
        let (a, b) = (&antenna1.epochs[i], &antenna2.epochs[j]);
        match a.time.cmp(&b.time) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(DualEpoch {
                    antennas: [a.clone(), b.clone()],
                    positions,
                });
                i += 1;
                j += 1;
            }
        }
    }
    Ok(out)
}

fn check_consecutive(curr: &ObservationRecord, gap: f64) -> Result<(), FeatureError> {
    if (gap - NOMINAL_INTERVAL).abs() > INTERVAL_TOLERANCE || curr.loss_of_lock {
        return Err(FeatureError::NotConsecutive {
            sat: curr.sat,
            gap,
            loss_of_lock: curr.loss_of_lock,
        });
    }
    Ok(())
}

fn value(rec: &ObservationRecord, v: Option<f64>, what: &'static str) -> Result<f64, FeatureError> {
    v.ok_or(FeatureError::MissingObservation { sat: rec.sat, what })
}

/// Change in C/N0 between two consecutive epochs, dB-Hz.
pub fn delta_cn0(prev: &ObservationRecord, curr: &ObservationRecord, gap: f64) -> Result<f64, FeatureError> {
    check_consecutive(curr, gap)?;
    Ok(value(curr, curr.cn0, "C/N0")? - value(prev, prev.cn0, "C/N0")?)
}

/// `Δρ − ρ̇·Δt` with ρ̇ taken as the mean of the two epochs' Doppler-derived
/// rates, meters.
pub fn pr_doppler_consistency(
    prev: &ObservationRecord,
    curr: &ObservationRecord,
    gap: f64,
) -> Result<f64, FeatureError> {
    check_consecutive(curr, gap)?;
    let delta_rho = value(curr, curr.pseudorange, "pseudorange")? - value(prev, prev.pseudorange, "pseudorange")?;
    let doppler = 0.5 * (value(prev, prev.doppler, "Doppler")? + value(curr, curr.doppler, "Doppler")?);
    Ok(delta_rho - doppler_to_rate(doppler) * gap)
}

/// Double-difference residual from the four measured and four expected
/// pseudoranges, indexed `[satellite k|j][antenna 1|2]`.
pub fn double_difference_residual(measured: [[f64; 2]; 2], expected: [[f64; 2]; 2]) -> f64 {
    let dd_measured = (measured[0][0] - measured[0][1]) - (measured[1][0] - measured[1][1]);
    let dd_expected = (expected[0][0] - expected[0][1]) - (expected[1][0] - expected[1][1]);
    dd_measured - dd_expected
}

fn satellite_at(nav: &NavigationFile, sat: SatId, t: GpsTime) -> Result<EcefPosition, FeatureError> {
    let eph = nav.select(sat, t).ok_or(FeatureError::NoEphemeris(sat))?;
    Ok(satellite_position(eph, t)?.position)
}

/// Double-difference pseudorange residual of `sat_k` against `ref_j`.
pub fn dd_residual(dual: &DualEpoch, sat_k: SatId, ref_j: SatId, nav: &NavigationFile) -> Result<f64, FeatureError> {
    if sat_k == ref_j {
        return Err(FeatureError::SameSatellite(sat_k));
    }
    let t = dual.time();
    let mut measured = [[0.0; 2]; 2];
    let mut expected = [[0.0; 2]; 2];
    for (row, sat) in [sat_k, ref_j].into_iter().enumerate() {
        let pos = satellite_at(nav, sat, t)?;
        for ant in 0..2 {
            let rec = dual.antennas[ant].record(sat).ok_or(FeatureError::MissingObservation {
                sat,
                what: "record",
            })?;
            measured[row][ant] = value(rec, rec.pseudorange, "pseudorange")?;
            expected[row][ant] = expected_pseudorange(pos, dual.positions[ant]);
        }
    }
    Ok(double_difference_residual(measured, expected))
}

/// Highest elevation wins; exact ties go to the lowest PRN.
pub fn select_reference_by_elevation(candidates: &[(SatId, f64)]) -> Result<SatId, FeatureError> {
    if candidates.len() < 2 {
        return Err(FeatureError::InsufficientSatellites(candidates.len()));
    }
    let mut best = candidates[0];
    for &(sat, elev) in &candidates[1..] {
        if elev > best.1 || (elev == best.1 && sat < best.0) {
            best = (sat, elev);
        }
    }
    Ok(best.0)
}

/// Reference satellite for an epoch: the common satellite with the highest
/// elevation at antenna 1.
pub fn select_reference(dual: &DualEpoch, nav: &NavigationFile) -> Result<SatId, FeatureError> {
    let frame = LocalFrame::at_ecef(dual.positions[0]);
    let mut candidates = Vec::new();
    for sat in dual.common_satellites() {
        if let Ok(pos) = satellite_at(nav, sat, dual.time()) {
            candidates.push((sat, elevation_in(&frame, pos)));
        }
    }
    select_reference_by_elevation(&candidates)
}

fn elevation_in(frame: &LocalFrame, sat: EcefPosition) -> f64 {
    let enu = frame.to_enu(sat);
    enu_elevation_azimuth(enu.e, enu.n, enu.u).elevation
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub time: GpsTime,
    pub sat: SatId,
    pub location: String,
    /// dB-Hz.
    pub cn0: f64,
    /// dB-Hz.
    pub delta_cn0: f64,
    /// Meters.
    pub pr_doppler_consistency: f64,
    /// Degrees.
    pub elevation: f64,
    /// Meters.
    pub dd_residual: f64,
    pub label: Option<SignalClass>,
}

impl FeatureVector {
    /// Features in model input order.
    pub fn features(&self) -> [f64; 5] {
        [
            self.cn0,
            self.delta_cn0,
            self.pr_doppler_consistency,
            self.elevation,
            self.dd_residual,
        ]
    }
}

/// Why a (epoch, satellite) pair produced no feature row. Every satellite
/// common to both antennas lands in exactly one bucket or yields a row;
/// `not_common` counts records seen at one antenna only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub not_common: usize,
    pub missing_observation: usize,
    pub no_ephemeris: usize,
    pub below_horizon: usize,
    pub insufficient_satellites: usize,
    pub reference: usize,
    pub no_predecessor: usize,
    pub unlabeled: usize,
}

impl DropCounts {
    /// Drops among satellites common to both antennas.
    pub fn common_drops(&self) -> usize {
        self.missing_observation
            + self.no_ephemeris
            + self.below_horizon
            + self.insufficient_satellites
            + self.reference
            + self.no_predecessor
            + self.unlabeled
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    pub rows: Vec<FeatureVector>,
    pub drops: DropCounts,
    /// Σ over epochs of the satellites common to both antennas.
    pub common_total: usize,
}

/// Truth labels keyed by (epoch, satellite).
pub type TruthTable = HashMap<(GpsTime, SatId), SignalClass>;

/// Build the feature table for one location's stream.
pub fn extract_features(
    stream: &[DualEpoch],
    nav: &NavigationFile,
    labels: Option<&TruthTable>,
    location: &str,
) -> FeatureTable {
    let mut table = FeatureTable::default();
    let mut previous: HashMap<SatId, (GpsTime, ObservationRecord)> = HashMap::new();
    let mut frame: Option<(EcefPosition, LocalFrame)> = None;

    for dual in stream {
        let t = dual.time();
        let ant1 = &dual.antennas[0];
        let frame = match frame {
            Some((pos, f)) if pos == dual.positions[0] => f,
            _ => {
                let f = LocalFrame::at_ecef(dual.positions[0]);
                frame = Some((dual.positions[0], f));
                f
            }
        };

        let common = dual.common_satellites();
        table.common_total += common.len();
        table.drops.not_common += ant1.records.len() + dual.antennas[1].records.len() - 2 * common.len();

        // satellites with usable pseudoranges, an ephemeris and positive elevation
        let mut candidates: Vec<(SatId, f64, EcefPosition)> = Vec::new();
        for &sat in &common {
            let usable = dual.antennas.iter().all(|a| a.record(sat).is_some_and(|r| r.pseudorange.is_some()));
            if !usable {
                table.drops.missing_observation += 1;
                continue;
            }
            let Ok(pos) = satellite_at(nav, sat, t) else {
                table.drops.no_ephemeris += 1;
                continue;
            };
            let elevation = elevation_in(&frame, pos);
            if elevation <= 0.0 {
                table.drops.below_horizon += 1;
                continue;
            }
            candidates.push((sat, elevation, pos));
        }

        let by_elevation: Vec<(SatId, f64)> = candidates.iter().map(|c| (c.0, c.1)).collect();
        match select_reference_by_elevation(&by_elevation) {
            Err(_) => table.drops.insufficient_satellites += candidates.len(),
            Ok(reference) => {
                let ref_pos = candidates.iter().find(|c| c.0 == reference).map(|c| c.2).unwrap_or_default();
                for &(sat, elevation, pos) in &candidates {
                    if sat == reference {
                        table.drops.reference += 1;
                        continue;
                    }
                    let curr = ant1.record(sat).expect("common satellite");
                    let Some((prev_time, prev)) = previous.get(&sat) else {
                        table.drops.no_predecessor += 1;
                        continue;
                    };
                    let gap = t.seconds_since(*prev_time);
                    let single = delta_cn0(prev, curr, gap)
                        .and_then(|d| pr_doppler_consistency(prev, curr, gap).map(|p| (d, p)));
                    let (dcn0, prdc) = match single {
                        Ok(v) => v,
                        Err(FeatureError::NotConsecutive { .. }) => {
                            table.drops.no_predecessor += 1;
                            continue;
                        }
                        Err(_) => {
                            table.drops.missing_observation += 1;
                            continue;
                        }
                    };
                    let Some(cn0) = curr.cn0 else {
                        table.drops.missing_observation += 1;
                        continue;
                    };
                    let label = match labels {
                        Some(truth) => match truth.get(&(t, sat)) {
                            Some(l) => Some(*l),
                            None => {
                                table.drops.unlabeled += 1;
                                continue;
                            }
                        },
                        None => None,
                    };
                    let mut measured = [[0.0; 2]; 2];
                    let mut expected = [[0.0; 2]; 2];
                    for (row, (s, p)) in [(sat, pos), (reference, ref_pos)].into_iter().enumerate() {
                        for ant in 0..2 {
                            measured[row][ant] = dual.antennas[ant]
                                .record(s)
                                .and_then(|r| r.pseudorange)
                                .expect("candidate pseudoranges checked");
                            expected[row][ant] = expected_pseudorange(p, dual.positions[ant]);
                        }
                    }
                    table.rows.push(FeatureVector {
                        time: t,
                        sat,
                        location: location.to_string(),
                        cn0,
                        delta_cn0: dcn0,
                        pr_doppler_consistency: prdc,
                        elevation,
                        dd_residual: double_difference_residual(measured, expected),
                        label,
                    });
                }
            }
        }

        for rec in &ant1.records {
            previous.insert(rec.sat, (t, rec.clone()));
        }
        // a satellite absent at antenna 1 this epoch breaks its arc
        previous.retain(|_, (pt, _)| *pt == t);
    }
    table
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".to_string() } else { v.to_string() };
    }
    let exp = v.abs().log10().floor() as i32;
    // rounding may carry into the next decade (e.g. 9.999996 -> 10.0000)
    let s = format!("{:.*e}", digits - 1, v);
    let (_, e) = s.split_once('e').expect("exponent");
    let exp = e.parse::<i32>().unwrap_or(exp);
    if exp < -4 || exp >= digits as i32 {
        return s;
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    let fixed = format!("{:.*}", decimals, v);
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

fn format_time(t: GpsTime) -> String {
    format!("{:.3}", t.seconds())
}

fn parse_time(s: &str) -> Result<GpsTime, FeatureError> {
    let secs: f64 = s
        .trim()
        .parse()
        .map_err(|_| FeatureError::Csv(format!("bad time `{s}`")))?;
    Ok(GpsTime::from_seconds(secs))
}

fn csv_err(e: csv::Error) -> FeatureError {
    FeatureError::Csv(e.to_string())
}

pub fn write_feature_csv(rows: &[FeatureVector]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FEATURE_CSV_HEADER).expect("in-memory write");
    for r in rows {
        let f = |v: f64| format_significant(v, 6);
        w.write_record([
            format_time(r.time),
            r.sat.to_string(),
            r.location.clone(),
            f(r.cn0),
            f(r.delta_cn0),
            f(r.pr_doppler_consistency),
            f(r.elevation),
            f(r.dd_residual),
            r.label.map(|l| l.label().to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

pub fn read_feature_csv(text: &str) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(FEATURE_CSV_HEADER) {
        return Err(FeatureError::Csv(format!(
            "header `{}` differs from `{}`",
            header.iter().collect::<Vec<_>>().join(","),
            FEATURE_CSV_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let num = |k: usize| -> Result<f64, FeatureError> {
            rec[k]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| FeatureError::Csv(format!("row {}: bad {} `{}`", i + 2, FEATURE_CSV_HEADER[k], &rec[k])))
        };
        let label = match rec[8].trim() {
            "" => None,
            s => Some(s.parse()?),
        };
        rows.push(FeatureVector {
            time: parse_time(&rec[0])?,
            sat: rec[1].parse().map_err(|e: crate::gnss::GnssError| FeatureError::Csv(e.to_string()))?,
            location: rec[2].to_string(),
            cn0: num(3)?,
            delta_cn0: num(4)?,
            pr_doppler_consistency: num(5)?,
            elevation: num(6)?,
            dd_residual: num(7)?,
            label,
        });
    }
    Ok(rows)
}

/// Truth rows sorted by (time, satellite).
pub fn write_truth_csv(truth: &TruthTable) -> String {
    let mut keys: Vec<_> = truth.keys().copied().collect();
    keys.sort();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRUTH_CSV_HEADER).expect("in-memory write");
    for key in keys {
        w.write_record([format_time(key.0), key.1.to_string(), truth[&key].label().to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

pub fn read_truth_csv(text: &str) -> Result<TruthTable, FeatureError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(TRUTH_CSV_HEADER) {
        return Err(FeatureError::Csv("truth header must be `time,sat,label`".into()));
    }
    let mut out = TruthTable::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let sat: SatId = rec[1].parse().map_err(|e: crate::gnss::GnssError| FeatureError::Csv(e.to_string()))?;
        out.insert((parse_time(&rec[0])?, sat), rec[2].parse()?);
    }
    Ok(out)
}
