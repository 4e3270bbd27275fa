use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gnss::{GpsTime, SatId, GM};
use crate::orbits::Ephemeris;
use crate::rinex::NavigationFile;

const PLANES: usize = 6;
const SLOTS_PER_PLANE: usize = 5;
const SET_SPACING: f64 = 7200.0;

/// A plausible 30-satellite GPS constellation (six planes at 55 deg) as
/// broadcast ephemerides, one set every two hours starting at `first_toe`
/// (seconds of `week`). Consecutive sets describe the same Keplerian orbit,
/// so positions are continuous across set boundaries.
pub fn synthetic_constellation(week: u32, first_toe: f64, sets: usize, seed: u64) -> NavigationFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nav = NavigationFile::default();
    let mut prn = 1u8;
    for plane in 0..PLANES {
        for slot in 0..SLOTS_PER_PLANE {
            let sqrt_a: f64 = 5153.6 + rng.random_range(-0.5..0.5);
            let e: f64 = rng.random_range(0.001..0.02);
            let i0 = 55f64.to_radians() + rng.random_range(-0.02..0.02);
            let omega0_ref = (plane as f64 * 60.0).to_radians() + rng.random_range(-0.05..0.05);
            let omega = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            // slot phasing staggered between planes
            let m0_ref = (slot as f64 * 72.0 + plane as f64 * 15.0).to_radians() + rng.random_range(-0.05..0.05);
            let delta_n = rng.random_range(3.0e-9..5.0e-9);
            let idot = rng.random_range(-3.0e-10..3.0e-10);
            let omegadot = rng.random_range(-8.5e-9..-7.5e-9);
            let n = (GM / sqrt_a.powi(6)).sqrt() + delta_n;

            for k in 0..sets {
                let toe_time = GpsTime::from_week_sow(week, first_toe) + k as f64 * SET_SPACING;
                let dt = k as f64 * SET_SPACING;
                let wrap = |x: f64| (x + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
                nav.insert(Ephemeris {
                    sat: SatId(prn),
                    week: toe_time.week(),
                    toe: toe_time.sow(),
                    sqrt_a,
                    e,
                    i0: i0 + idot * dt,
                    omega0: wrap(omega0_ref + omegadot * dt),
                    omega,
                    m0: wrap(m0_ref + n * dt),
                    delta_n,
                    idot,
                    omegadot,
                    cuc: 0.0,
                    cus: 0.0,
                    crc: 0.0,
                    crs: 0.0,
                    cic: 0.0,
                    cis: 0.0,
                });
            }
            prn += 1;
        }
    }
    nav
}
