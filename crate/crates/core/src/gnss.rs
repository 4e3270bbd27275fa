//! Shared GNSS primitives: GPS time, satellite identifiers, WGS-84 geodesy.

use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// GPS L1 carrier wavelength, m.
pub const L1_WAVELENGTH: f64 = 0.190_293_67;
/// Earth gravitational constant used by the broadcast ephemeris algorithm, m^3/s^2.
pub const GM: f64 = 3.986005e14;
/// Earth rotation rate used by the broadcast ephemeris algorithm, rad/s.
pub const OMEGA_EARTH: f64 = 7.292_115_146_7e-5;
/// WGS-84 semi-major axis, m.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;

pub const SECONDS_PER_WEEK: f64 = 604_800.0;
const NANOS_PER_SECOND: i64 = 1_000_000_000;
const NANOS_PER_WEEK: i64 = 604_800 * NANOS_PER_SECOND;

#[derive(Debug, Error, PartialEq)]
pub enum GnssError {
    #[error("invalid satellite id `{0}`")]
    InvalidSatellite(String),
    #[error("invalid calendar date/time {0}")]
    InvalidCalendar(String),
}

/// Instant on the GPS time scale, stored as integer nanoseconds since the
/// GPS epoch (1980-01-06 00:00:00). No leap seconds are involved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GpsTime(i64);

impl GpsTime {
    pub fn from_nanos(nanos: i64) -> Self {
        Self(nanos)
    }

    pub fn nanos(self) -> i64 {
        self.0
    }

    pub fn from_week_sow(week: u32, sow: f64) -> Self {
        Self(week as i64 * NANOS_PER_WEEK + (sow * 1e9).round() as i64)
    }

    /// Seconds since the GPS epoch, rounded to the nanosecond.
    pub fn from_seconds(seconds: f64) -> Self {
        Self((seconds * 1e9).round() as i64)
    }

    pub fn seconds(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn week(self) -> u32 {
        self.0.div_euclid(NANOS_PER_WEEK) as u32
    }

    /// Seconds of week.
    pub fn sow(self) -> f64 {
        self.0.rem_euclid(NANOS_PER_WEEK) as f64 / 1e9
    }

    /// `self - earlier` in seconds.
    pub fn seconds_since(self, earlier: GpsTime) -> f64 {
        (self.0 - earlier.0) as f64 / 1e9
    }

    pub fn add_seconds(self, seconds: f64) -> Self {
        Self(self.0 + (seconds * 1e9).round() as i64)
    }

    fn gps_epoch() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(1980, 1, 6)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .expect("valid GPS epoch")
    }

    /// Build from calendar fields expressed on the GPS time scale.
    pub fn from_calendar(
        year: i32,
        month: u32,
        day: u32,
        hour: u32,
        minute: u32,
        second: f64,
    ) -> Result<Self, GnssError> {
        let invalid =
            || GnssError::InvalidCalendar(format!("{year}-{month}-{day} {hour}:{minute}:{second}"));
        if !(0.0..61.0).contains(&second) {
            return Err(invalid());
        }
        let date = NaiveDate::from_ymd_opt(year, month, day).ok_or_else(invalid)?;
        let dt = date.and_hms_opt(hour, minute, 0).ok_or_else(invalid)?;
        let whole = (dt - Self::gps_epoch()).num_seconds();
        Ok(Self(whole * NANOS_PER_SECOND + (second * 1e9).round() as i64))
    }

    /// Calendar fields (year, month, day, hour, minute, second).
    pub fn to_calendar(self) -> (i32, u32, u32, u32, u32, f64) {
        use chrono::Datelike;
        let whole = self.0.div_euclid(NANOS_PER_SECOND);
        let frac = self.0.rem_euclid(NANOS_PER_SECOND);
        let dt = Self::gps_epoch() + chrono::Duration::seconds(whole);
        (
            dt.year(),
            dt.month(),
            dt.day(),
            dt.hour(),
            dt.minute(),
            dt.second() as f64 + frac as f64 / 1e9,
        )
    }
}

impl Add<f64> for GpsTime {
    type Output = GpsTime;
    fn add(self, rhs: f64) -> GpsTime {
        self.add_seconds(rhs)
    }
}

impl Sub for GpsTime {
    type Output = f64;
    fn sub(self, rhs: GpsTime) -> f64 {
        self.seconds_since(rhs)
    }
}

impl fmt::Display for GpsTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:.3}", self.week(), self.sow())
    }
}

/// GPS satellite identifier (`Gnn`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SatId(pub u8);

impl SatId {
    pub fn prn(self) -> u8 {
        self.0
    }
}

impl fmt::Display for SatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "G{:02}", self.0)
    }
}

impl FromStr for SatId {
    type Err = GnssError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || GnssError::InvalidSatellite(s.to_string());
        let rest = s.strip_prefix('G').ok_or_else(bad)?;
        // RINEX allows a blank in place of a leading zero ("G 5")
        let prn: u8 = rest.trim().parse().map_err(|_| bad())?;
        if prn == 0 || prn > 99 {
            return Err(bad());
        }
        Ok(SatId(prn))
    }
}

impl From<SatId> for String {
    fn from(s: SatId) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for SatId {
    type Error = GnssError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Earth-centered, Earth-fixed position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EcefPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefPosition {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(self, other: EcefPosition) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: EcefPosition) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for EcefPosition {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for EcefPosition {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// Geodetic coordinates on the WGS-84 ellipsoid. Angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geodetic {
    pub lat: f64,
    pub lon: f64,
    pub height: f64,
}

impl Geodetic {
    pub fn to_ecef(self) -> EcefPosition {
        let e2 = WGS84_F * (2.0 - WGS84_F);
        let (slat, clat) = self.lat.to_radians().sin_cos();
        let (slon, clon) = self.lon.to_radians().sin_cos();
        let n = WGS84_A / (1.0 - e2 * slat * slat).sqrt();
        EcefPosition::new(
            (n + self.height) * clat * clon,
            (n + self.height) * clat * slon,
            (n * (1.0 - e2) + self.height) * slat,
        )
    }

    /// Iterative inverse of [`Geodetic::to_ecef`]; converges to well below a
    /// micrometre for points near the Earth's surface.
    pub fn from_ecef(p: EcefPosition) -> Self {
        let e2 = WGS84_F * (2.0 - WGS84_F);
        let lon = p.y.atan2(p.x);
        let rho = p.x.hypot(p.y);
        let mut lat = p.z.atan2(rho * (1.0 - e2));
        let mut height = 0.0;
        for _ in 0..10 {
            let slat = lat.sin();
            let n = WGS84_A / (1.0 - e2 * slat * slat).sqrt();
            height = if lat.cos().abs() > 1e-10 {
                rho / lat.cos() - n
            } else {
                p.z.abs() - n * (1.0 - e2)
            };
            let next = p.z.atan2(rho * (1.0 - e2 * n / (n + height)));
            if (next - lat).abs() < 1e-14 {
                lat = next;
                break;
            }
            lat = next;
        }
        Self {
            lat: lat.to_degrees(),
            lon: lon.to_degrees(),
            height,
        }
    }
}

/// Local East-North-Up coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Enu {
    pub e: f64,
    pub n: f64,
    pub u: f64,
}

impl Enu {
    pub const fn new(e: f64, n: f64, u: f64) -> Self {
        Self { e, n, u }
    }

    pub fn norm(self) -> f64 {
        (self.e * self.e + self.n * self.n + self.u * self.u).sqrt()
    }

    pub fn distance(self, o: Enu) -> f64 {
        (self - o).norm()
    }

    pub fn dot(self, o: Enu) -> f64 {
        self.e * o.e + self.n * o.n + self.u * o.u
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.e * k, self.n * k, self.u * k)
    }

    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.e,
            1 => self.n,
            _ => self.u,
        }
    }

    pub fn with(mut self, axis: usize, v: f64) -> Self {
        match axis {
            0 => self.e = v,
            1 => self.n = v,
            _ => self.u = v,
        }
        self
    }
}

impl Add for Enu {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.e + o.e, self.n + o.n, self.u + o.u)
    }
}

impl Sub for Enu {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.e - o.e, self.n - o.n, self.u - o.u)
    }
}

/// Rigid transform between ECEF and a local ENU frame anchored at a point.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrame {
    origin: EcefPosition,
    // rows: east, north, up unit vectors expressed in ECEF
    rot: [[f64; 3]; 3],
}

impl LocalFrame {
    pub fn at_geodetic(origin: Geodetic) -> Self {
        let (slat, clat) = origin.lat.to_radians().sin_cos();
        let (slon, clon) = origin.lon.to_radians().sin_cos();
        Self {
            origin: origin.to_ecef(),
            rot: [
                [-slon, clon, 0.0],
                [-slat * clon, -slat * slon, clat],
                [clat * clon, clat * slon, slat],
            ],
        }
    }

    pub fn at_ecef(origin: EcefPosition) -> Self {
        let mut frame = Self::at_geodetic(Geodetic::from_ecef(origin));
        frame.origin = origin;
        frame
    }

    pub fn origin(&self) -> EcefPosition {
        self.origin
    }

    /// Rotate an ECEF difference vector into ENU.
    pub fn rotate_to_enu(&self, d: EcefPosition) -> Enu {
        let r = &self.rot;
        Enu::new(
            r[0][0] * d.x + r[0][1] * d.y + r[0][2] * d.z,
            r[1][0] * d.x + r[1][1] * d.y + r[1][2] * d.z,
            r[2][0] * d.x + r[2][1] * d.y + r[2][2] * d.z,
        )
    }

    pub fn rotate_to_ecef(&self, v: Enu) -> EcefPosition {
        let r = &self.rot;
        EcefPosition::new(
            r[0][0] * v.e + r[1][0] * v.n + r[2][0] * v.u,
            r[0][1] * v.e + r[1][1] * v.n + r[2][1] * v.u,
            r[0][2] * v.e + r[1][2] * v.n + r[2][2] * v.u,
        )
    }

    pub fn to_enu(&self, p: EcefPosition) -> Enu {
        self.rotate_to_enu(p - self.origin)
    }

    pub fn to_ecef(&self, p: Enu) -> EcefPosition {
        self.origin + self.rotate_to_ecef(p)
    }
}
