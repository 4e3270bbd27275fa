//! Broadcast-ephemeris satellite positions and receiver-relative geometry.
//!
//! The propagation follows the GPS interface-control algorithm: mean anomaly
//! to eccentric anomaly by Newton iteration, true anomaly, second-harmonic
//! corrections, then rotation through the corrected inclination and the
//! Earth-rotation-corrected ascending node. Velocity is the analytic time
//! derivative of the same chain. Signal-flight Earth rotation is not applied.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnss::{EcefPosition, GpsTime, LocalFrame, SatId, GM, L1_WAVELENGTH, OMEGA_EARTH};

/// Ephemeris validity window around `toe`, seconds.
pub const FIT_INTERVAL: f64 = 7200.0;
const KEPLER_TOLERANCE: f64 = 1e-12;
const KEPLER_MAX_ITER: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum OrbitError {
    #[error("{sat}: |t - toe| = {dt:.1} s exceeds the {FIT_INTERVAL} s fit interval")]
    FitIntervalExceeded { sat: SatId, dt: f64 },
    #[error("{sat}: Kepler iteration did not converge (M = {mean_anomaly}, e = {eccentricity})")]
    KeplerNonConvergence {
        sat: SatId,
        mean_anomaly: f64,
        eccentricity: f64,
    },
    #[error("{sat}: implausible ephemeris ({reason})")]
    InvalidEphemeris { sat: SatId, reason: String },
    #[error("receiver position |rx| = {0:.1} m is not on or near the Earth's surface")]
    ReceiverOffEarth(f64),
}

/// GPS broadcast Keplerian orbit parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ephemeris {
    pub sat: SatId,
    pub week: u32,
    /// Time of ephemeris, seconds of `week`.
    pub toe: f64,
    pub sqrt_a: f64,
    pub e: f64,
    pub i0: f64,
    pub omega0: f64,
    /// Argument of perigee.
    pub omega: f64,
    pub m0: f64,
    pub delta_n: f64,
    pub idot: f64,
    pub omegadot: f64,
    pub cuc: f64,
    pub cus: f64,
    pub crc: f64,
    pub crs: f64,
    pub cic: f64,
    pub cis: f64,
}

impl Ephemeris {
    pub fn toe_time(&self) -> GpsTime {
        GpsTime::from_week_sow(self.week, self.toe)
    }

    pub fn validate(&self) -> Result<(), OrbitError> {
        let invalid = |reason: String| OrbitError::InvalidEphemeris { sat: self.sat, reason };
        if !(0.0..0.1).contains(&self.e) {
            return Err(invalid(format!("eccentricity {}", self.e)));
        }
        if !(5100.0..=5200.0).contains(&self.sqrt_a) {
            return Err(invalid(format!("sqrt_a {}", self.sqrt_a)));
        }
        let all = [
            self.toe, self.i0, self.omega0, self.omega, self.m0, self.delta_n, self.idot,
            self.omegadot, self.cuc, self.cus, self.crc, self.crs, self.cic, self.cis,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Satellite state in ECEF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatState {
    pub position: EcefPosition,
    pub velocity: EcefPosition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElevationAzimuth {
    /// Degrees, [-90, 90].
    pub elevation: f64,
    /// Degrees, [0, 360).
    pub azimuth: f64,
}

/// Solve Kepler's equation `E - e sin E = M` by Newton iteration.
pub fn eccentric_anomaly(mean_anomaly: f64, e: f64) -> Option<f64> {
    let mut ecc = mean_anomaly;
    for _ in 0..KEPLER_MAX_ITER {
        let f = ecc - e * ecc.sin() - mean_anomaly;
        let step = f / (1.0 - e * ecc.cos());
        ecc -= step;
        if step.abs() < KEPLER_TOLERANCE && (ecc - e * ecc.sin() - mean_anomaly).abs() < KEPLER_TOLERANCE {
            return Some(ecc);
        }
    }
    None
}

/// Satellite ECEF position and velocity at `t`.
pub fn satellite_position(eph: &Ephemeris, t: GpsTime) -> Result<SatState, OrbitError> {
    let tk = t.seconds_since(eph.toe_time());
    if tk.abs() > FIT_INTERVAL {
        return Err(OrbitError::FitIntervalExceeded { sat: eph.sat, dt: tk });
    }

    let a = eph.sqrt_a * eph.sqrt_a;
    let n = (GM / (a * a * a)).sqrt() + eph.delta_n;
    let mk = (eph.m0 + n * tk).rem_euclid(std::f64::consts::TAU);
    let ek = eccentric_anomaly(mk, eph.e).ok_or(OrbitError::KeplerNonConvergence {
        sat: eph.sat,
        mean_anomaly: mk,
        eccentricity: eph.e,
    })?;

    let (sin_e, cos_e) = ek.sin_cos();
    let one_minus_ecos = 1.0 - eph.e * cos_e;
    let root = (1.0 - eph.e * eph.e).sqrt();
    let vk = (root * sin_e).atan2(cos_e - eph.e);
    let phi = vk + eph.omega;
    let (s2, c2) = (2.0 * phi).sin_cos();

    let du = eph.cus * s2 + eph.cuc * c2;
    let dr = eph.crs * s2 + eph.crc * c2;
    let di = eph.cis * s2 + eph.cic * c2;

    let u = phi + du;
    let r = a * one_minus_ecos + dr;
    let inc = eph.i0 + di + eph.idot * tk;
    let node_rate = eph.omegadot - OMEGA_EARTH;
    let node = eph.omega0 + node_rate * tk - OMEGA_EARTH * eph.toe;

    let (sin_u, cos_u) = u.sin_cos();
    let (sin_i, cos_i) = inc.sin_cos();
    let (sin_o, cos_o) = node.sin_cos();
    let xp = r * cos_u;
    let yp = r * sin_u;

    let x = xp * cos_o - yp * cos_i * sin_o;
    let y = xp * sin_o + yp * cos_i * cos_o;
    let z = yp * sin_i;

    // time derivatives
    let ek_dot = n / one_minus_ecos;
    let phi_dot = ek_dot * root / one_minus_ecos;
    let u_dot = phi_dot * (1.0 + 2.0 * (eph.cus * c2 - eph.cuc * s2));
    let r_dot = a * eph.e * sin_e * ek_dot + 2.0 * phi_dot * (eph.crs * c2 - eph.crc * s2);
    let i_dot = eph.idot + 2.0 * phi_dot * (eph.cis * c2 - eph.cic * s2);

    let xp_dot = r_dot * cos_u - r * u_dot * sin_u;
    let yp_dot = r_dot * sin_u + r * u_dot * cos_u;

    let vx = xp_dot * cos_o - yp_dot * cos_i * sin_o + yp * sin_i * i_dot * sin_o - y * node_rate;
    let vy = xp_dot * sin_o + yp_dot * cos_i * cos_o - yp * sin_i * i_dot * cos_o + x * node_rate;
    let vz = yp_dot * sin_i + yp * cos_i * i_dot;

    Ok(SatState {
        position: EcefPosition::new(x, y, z),
        velocity: EcefPosition::new(vx, vy, vz),
    })
}

/// Elevation and azimuth of `sat` seen from `rx`, in the local geodetic
/// East-North-Up frame at `rx`.
pub fn elevation_azimuth(sat: EcefPosition, rx: EcefPosition) -> Result<ElevationAzimuth, OrbitError> {
    let radius = rx.norm();
    if !(radius > 6.3e6) {
        return Err(OrbitError::ReceiverOffEarth(radius));
    }
    let enu = LocalFrame::at_ecef(rx).rotate_to_enu(sat - rx);
    Ok(enu_elevation_azimuth(enu.e, enu.n, enu.u))
}

pub(crate) fn enu_elevation_azimuth(e: f64, n: f64, u: f64) -> ElevationAzimuth {
    let elevation = u.atan2(e.hypot(n)).to_degrees();
    let mut azimuth = e.atan2(n).to_degrees();
    if azimuth < 0.0 {
        azimuth += 360.0;
    }
    if azimuth >= 360.0 {
        azimuth -= 360.0;
    }
    ElevationAzimuth { elevation, azimuth }
}

/// Geometric satellite-receiver distance. Clock and atmospheric terms are
/// excluded; they cancel in the double difference.
pub fn expected_pseudorange(sat: EcefPosition, rx: EcefPosition) -> f64 {
    sat.distance(rx)
}

/// Rate of change of the satellite-receiver range for a static receiver;
/// positive when the range is increasing.
pub fn range_rate(sat: &SatState, rx: EcefPosition) -> f64 {
    let los = sat.position - rx;
    let range = los.norm();
    if range == 0.0 {
        return 0.0;
    }
    sat.velocity.dot(los) / range
}

/// Pseudorange rate from an L1 Doppler shift (Hz).
pub fn doppler_to_rate(doppler_hz: f64) -> f64 {
    -L1_WAVELENGTH * doppler_hz
}

/// L1 Doppler shift (Hz) from a pseudorange rate.
pub fn rate_to_doppler(rate: f64) -> f64 {
    -rate / L1_WAVELENGTH
}
