use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;

use super::{columns, header_label, parse_version_line, RinexError};
use crate::gnss::{GpsTime, SatId};
use crate::orbits::{Ephemeris, FIT_INTERVAL};

/// GPS broadcast ephemerides keyed by (satellite, time of ephemeris).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NavigationFile {
    pub ephemerides: BTreeMap<(SatId, GpsTime), Ephemeris>,
}

impl NavigationFile {
    pub fn from_ephemerides(list: impl IntoIterator<Item = Ephemeris>) -> Self {
        let mut nav = Self::default();
        for eph in list {
            nav.insert(eph);
        }
        nav
    }

    /// Insert, returning `false` (and leaving the map untouched) on a
    /// duplicate key.
    pub fn insert(&mut self, eph: Ephemeris) -> bool {
        let key = (eph.sat, eph.toe_time());
        if self.ephemerides.contains_key(&key) {
            return false;
        }
        self.ephemerides.insert(key, eph);
        true
    }

    pub fn len(&self) -> usize {
        self.ephemerides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ephemerides.is_empty()
    }

    pub fn satellites(&self) -> Vec<SatId> {
        let mut sats: Vec<SatId> = self.ephemerides.keys().map(|(s, _)| *s).collect();
        sats.dedup();
        sats
    }

    /// Ephemeris with the toe nearest to `t` (earlier on ties), if it lies
    /// within the fit interval.
    pub fn select(&self, sat: SatId, t: GpsTime) -> Option<&Ephemeris> {
        let lo = GpsTime::from_nanos(i64::MIN);
        let hi = GpsTime::from_nanos(i64::MAX);
        let before = self.ephemerides.range((sat, lo)..=(sat, t)).next_back();
        let after = self.ephemerides.range((sat, t)..=(sat, hi)).next();
        let best = match (before, after) {
            (Some(b), Some(a)) => {
                if t.seconds_since(b.0 .1) <= a.0 .1.seconds_since(t) {
                    b
                } else {
                    a
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => return None,
        };
        (t.seconds_since(best.0 .1).abs() <= FIT_INTERVAL).then_some(best.1)
    }
}

fn parse_sci(field: Option<&str>) -> Option<f64> {
    let s = field?.trim();
    if s.is_empty() {
        return None;
    }
    s.replace(['D', 'd'], "E").parse().ok().filter(|v: &f64| v.is_finite())
}

pub fn parse_navigation(text: &str) -> Result<NavigationFile, RinexError> {
    let all: Vec<&str> = text.lines().collect();
    parse_version_line(all.first().copied(), 'N')?;
    let end = all
        .iter()
        .position(|l| header_label(l) == "END OF HEADER")
        .ok_or_else(|| RinexError::MalformedHeader("missing END OF HEADER".into()))?;

    let mut nav = NavigationFile::default();
    let mut i = end + 1;
    while i < all.len() {
        let line = all[i];
        if line.trim().is_empty() {
            i += 1;
            continue;
        }
        let start = i;
        let system = line.chars().next().unwrap_or(' ');
        if system == ' ' {
            return Err(RinexError::MalformedRecord {
                line: start + 1,
                reason: "continuation line without a record start".into(),
            });
        }
        i += 1;
        while i < all.len() && all[i].starts_with(' ') && !all[i].trim().is_empty() {
            i += 1;
        }
        let block = &all[start..i];
        if system != 'G' {
            warn!("line {}: skipped non-GPS navigation record `{system}`", start + 1);
            continue;
        }
        let eph = parse_gps_record(block, start + 1)?;
        let (sat, toe) = (eph.sat, eph.toe);
        if !nav.insert(eph) {
            warn!("line {}: duplicate ephemeris for {sat} toe {toe}, kept the first", start + 1);
        }
    }
    Ok(nav)
}

fn parse_gps_record(block: &[&str], first_line: usize) -> Result<Ephemeris, RinexError> {
    let err = |line: usize, reason: String| RinexError::MalformedRecord { line, reason };
    if block.len() != 8 {
        return Err(err(first_line, format!("GPS record has {} lines, expected 8", block.len())));
    }
    let sat: SatId = columns(block[0], 0, 3)
        .unwrap_or("")
        .parse()
        .map_err(|e: crate::gnss::GnssError| err(first_line, e.to_string()))?;
    // broadcast orbit lines 1-5 carry the fields we need, four per line
    let mut orbit = [[0.0f64; 4]; 5];
    for (k, row) in orbit.iter_mut().enumerate() {
        let line = block[k + 1];
        for (j, slot) in row.iter_mut().enumerate() {
            let start = 4 + 19 * j;
            *slot = parse_sci(columns(line, start, start + 19)).ok_or_else(|| {
                err(first_line + k + 1, format!("unparseable field {} of orbit line {}", j + 1, k + 1))
            })?;
        }
    }
    let [[_iode, crs, delta_n, m0], [cuc, e, cus, sqrt_a], [toe, cic, omega0, cis], [i0, crc, omega, omegadot], [idot, _l2_codes, week, _l2p]] =
        orbit;
    if !(0.0..=604_800.0).contains(&toe) || !(0.0..1e5).contains(&week) {
        return Err(err(first_line, format!("toe {toe} / week {week} out of range")));
    }
    let eph = Ephemeris {
        sat,
        week: week as u32,
        toe,
        sqrt_a,
        e,
        i0,
        omega0,
        omega,
        m0,
        delta_n,
        idot,
        omegadot,
        cuc,
        cus,
        crc,
        crs,
        cic,
        cis,
    };
    eph.validate().map_err(|e| err(first_line, e.to_string()))?;
    Ok(eph)
}

/// RINEX `D19.12`-style field: ` 5.153700012000E+03`.
fn sci(v: f64) -> String {
    let s = format!("{v:.12E}");
    let (mantissa, exp) = s.split_once('E').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if mantissa.starts_with('-') { "" } else { " " };
    format!("{sign}{mantissa}E{exp:+03}")
}

pub fn write_navigation(nav: &NavigationFile) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<60}RINEX VERSION / TYPE",
        format!("{:9.2}{:11}{:<20}{:<20}", 3.04, "", "N: GNSS NAV DATA", "G: GPS")
    );
    let _ = writeln!(out, "{:<60}PGM / RUN BY / DATE", "mplab");
    let _ = writeln!(out, "{:60}END OF HEADER", "");
    for eph in nav.ephemerides.values() {
        let (y, mo, d, h, mi, s) = eph.toe_time().to_calendar();
        let _ = writeln!(
            out,
            "{} {y:04} {mo:02} {d:02} {h:02} {mi:02} {:02}{}{}{}",
            eph.sat,
            s.round() as u32,
            sci(0.0),
            sci(0.0),
            sci(0.0)
        );
        let rows = [
            [0.0, eph.crs, eph.delta_n, eph.m0],
            [eph.cuc, eph.e, eph.cus, eph.sqrt_a],
            [eph.toe, eph.cic, eph.omega0, eph.cis],
            [eph.i0, eph.crc, eph.omega, eph.omegadot],
            [eph.idot, 1.0, eph.week as f64, 0.0],
            [2.0, 0.0, 0.0, 0.0],
        ];
        for row in rows {
            let _ = writeln!(out, "    {}", row.iter().map(|v| sci(*v)).collect::<String>());
        }
        let _ = writeln!(out, "    {}{}", sci(eph.toe), sci(4.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(sat: u8, toe: f64) -> Ephemeris {
        Ephemeris {
            sat: SatId(sat),
            week: 2150,
            toe,
            sqrt_a: 5153.700012,
            e: 0.0123,
            i0: 0.97,
            omega0: -1.2,
            omega: 0.55,
            m0: 2.1,
            delta_n: 4.5e-9,
            idot: -2.1e-10,
            omegadot: -8.0e-9,
            cuc: 1.2e-6,
            cus: 7.5e-6,
            crc: 250.0,
            crs: -30.0,
            cic: 5.0e-8,
            cis: -1.0e-7,
        }
    }

    #[test]
    fn sci_format_width() {
        assert_eq!(sci(5153.700012), " 5.153700012000E+03");
        assert_eq!(sci(-8.0e-9), "-8.000000000000E-09");
        assert_eq!(sci(0.0), " 0.000000000000E+00");
        assert_eq!(sci(1.0e100).len(), 20);
    }

    #[test]
    fn sqrt_a_round_trips() {
        let nav = NavigationFile::from_ephemerides([sample(5, 7200.0)]);
        let parsed = parse_navigation(&write_navigation(&nav)).unwrap();
        let eph = parsed.ephemerides.values().next().unwrap();
        assert_eq!(eph.sqrt_a, 5153.700012);
        assert_eq!(parsed, nav);
    }

    #[test]
    fn two_records_same_satellite() {
        let nav = NavigationFile::from_ephemerides([sample(5, 0.0), sample(5, 7200.0)]);
        let parsed = parse_navigation(&write_navigation(&nav)).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed.satellites(), vec![SatId(5)]);
    }

    #[test]
    fn truncated_record_rejected() {
        let nav = NavigationFile::from_ephemerides([sample(5, 0.0), sample(9, 0.0)]);
        let text = write_navigation(&nav);
        let lines: Vec<&str> = text.lines().collect();
        // header (3) + record start + 5 lines of the first record, then the next record
        let mut cut: Vec<&str> = lines[..9].to_vec();
        cut.extend(&lines[11..]);
        assert!(matches!(
            parse_navigation(&cut.join("\n")),
            Err(RinexError::MalformedRecord { line: 4, .. })
        ));
        // truncated at end of file
        let tail = lines[..lines.len() - 2].join("\n");
        assert!(matches!(parse_navigation(&tail), Err(RinexError::MalformedRecord { .. })));
    }

    #[test]
    fn fortran_exponents_and_foreign_records() {
        let nav = NavigationFile::from_ephemerides([sample(3, 0.0)]);
        let text = write_navigation(&nav).replace("E+", "D+").replace("E-", "D-");
        let glonass = "R01 2021 03 21 00 15 00 1.0D-05 0.0D+00 0.0D+00\n     1.0D+00\n     1.0D+00\n     1.0D+00\n";
        let parsed = parse_navigation(&format!("{text}{glonass}")).unwrap();
        assert_eq!(parsed, nav);
    }

    #[test]
    fn select_nearest_toe() {
        let nav = NavigationFile::from_ephemerides([sample(5, 0.0), sample(5, 7200.0)]);
        let t = GpsTime::from_week_sow(2150, 3600.0);
        assert_eq!(nav.select(SatId(5), t).unwrap().toe, 0.0);
        let t = GpsTime::from_week_sow(2150, 3601.0);
        assert_eq!(nav.select(SatId(5), t).unwrap().toe, 7200.0);
        let far = GpsTime::from_week_sow(2150, 20000.0);
        assert!(nav.select(SatId(5), far).is_none());
        assert!(nav.select(SatId(6), t).is_none());
    }

    #[test]
    fn wrong_version_rejected() {
        let text = write_navigation(&NavigationFile::default()).replacen("3.04", "2.10", 1);
        assert!(matches!(parse_navigation(&text), Err(RinexError::VersionUnsupported(_))));
    }
}
