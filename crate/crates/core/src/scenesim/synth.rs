use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{classify_visibility_enu, Scene, SimError};
use crate::features::{DualEpoch, SignalClass, TruthTable};
use crate::gnss::{EcefPosition, GpsTime, LocalFrame, SatId};
use crate::orbits::{enu_elevation_azimuth, expected_pseudorange, range_rate, rate_to_doppler, satellite_position};
use crate::rinex::{NavigationFile, ObservationEpoch, ObservationFile, ObservationHeader, ObservationRecord};

/// Satellites at or below this elevation at the scene origin are not tracked.
pub const ELEVATION_MASK_DEG: f64 = 5.0;
const MAX_WARMUP_SECONDS: i64 = 3600;

/// Measurement error model. All magnitudes are configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Pseudorange white noise, m.
    pub pseudorange_sigma: f64,
    /// C/N0 at zenith for a direct signal, dB-Hz.
    pub cn0_zenith: f64,
    /// C/N0 loss at the horizon relative to zenith, dB (linear in 90° − elevation).
    pub cn0_rolloff: f64,
    /// C/N0 loss when no direct path exists, dB.
    pub reflection_loss: f64,
    /// Fraction of the extra reflected path that biases a LOS+NLOS pseudorange.
    pub losnlos_gain: f64,
    /// C/N0 growth while a multipath condition persists, dB-Hz/s.
    pub cn0_drift_rate: f64,
    /// Ceiling on the accumulated C/N0 drift, dB; unbounded when absent.
    pub cn0_drift_cap: Option<f64>,
    /// C/N0 white noise, dB-Hz.
    pub cn0_sigma: f64,
    /// Doppler white noise, Hz.
    pub doppler_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            pseudorange_sigma: 0.5,
            cn0_zenith: 45.0,
            cn0_rolloff: 10.0,
            reflection_loss: 12.0,
            losnlos_gain: 0.5,
            cn0_drift_rate: 0.02,
            cn0_drift_cap: None,
            cn0_sigma: 1.0,
            doppler_sigma: 0.05,
            seed: 0,
        }
    }
}

impl NoiseModel {
    /// Default magnitudes with every random term switched off.
    pub fn noiseless() -> Self {
        Self {
            pseudorange_sigma: 0.0,
            cn0_sigma: 0.0,
            doppler_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fields = [
            ("pseudorange_sigma", self.pseudorange_sigma),
            ("cn0_rolloff", self.cn0_rolloff),
            ("reflection_loss", self.reflection_loss),
            ("cn0_drift_rate", self.cn0_drift_rate),
            ("cn0_drift_cap", self.cn0_drift_cap.unwrap_or(0.0)),
            ("cn0_sigma", self.cn0_sigma),
            ("doppler_sigma", self.doppler_sigma),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidNoise(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.losnlos_gain) {
            return Err(SimError::InvalidNoise(format!("losnlos_gain = {} outside [0, 1]", self.losnlos_gain)));
        }
        if !self.cn0_zenith.is_finite() {
            return Err(SimError::InvalidNoise("cn0_zenith must be finite".into()));
        }
        Ok(())
    }

    /// Lead-in simulated before the first epoch so that a capped drift has
    /// settled; without a cap, onsets count from the first epoch.
    fn warmup_seconds(&self) -> i64 {
        match self.cn0_drift_cap {
            Some(cap) if self.cn0_drift_rate > 0.0 => ((cap / self.cn0_drift_rate).ceil() as i64).min(MAX_WARMUP_SECONDS),
            _ => 0,
        }
    }
}

/// One antenna's view of one satellite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntennaView {
    pub class: SignalClass,
    /// ECEF distance from antenna to satellite, m.
    pub direct_range: f64,
    /// Shortest reflected length minus direct length, m; 0 without reflections.
    pub extra_path: f64,
    /// Degrees, at the antenna.
    pub elevation: f64,
    /// m/s, positive when receding.
    pub range_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteGeometry {
    pub sat: SatId,
    /// `None` where the satellite is not received at that antenna.
    pub views: [Option<AntennaView>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochGeometry {
    pub time: GpsTime,
    /// Satellites above the elevation mask, ascending.
    pub sats: Vec<SatelliteGeometry>,
}

struct SceneContext<'a> {
    scene: &'a Scene,
    frame: LocalFrame,
    antenna_ecef: [EcefPosition; 2],
    antenna_frames: [LocalFrame; 2],
}

impl<'a> SceneContext<'a> {
    fn new(scene: &'a Scene) -> Self {
        let antenna_ecef = scene.antenna_ecef();
        Self {
            scene,
            frame: scene.frame(),
            antenna_ecef,
            antenna_frames: antenna_ecef.map(LocalFrame::at_ecef),
        }
    }

    fn geometry(&self, nav: &NavigationFile, t: GpsTime) -> EpochGeometry {
        let mut sats = Vec::new();
        for sat in nav.satellites() {
            let Some(state) = nav.select(sat, t).and_then(|eph| satellite_position(eph, t).ok()) else {
                continue;
            };
            let sat_enu = self.frame.to_enu(state.position);
            if enu_elevation_azimuth(sat_enu.e, sat_enu.n, sat_enu.u).elevation <= ELEVATION_MASK_DEG {
                continue;
            }
            let mut views = [None, None];
            for (ant, view) in views.iter_mut().enumerate() {
                let antenna = self.scene.antennas[ant];
                let vis = classify_visibility_enu(self.scene, sat_enu, antenna);
                let Some(class) = vis.class else { continue };
                let extra_path = vis
                    .shortest_reflection()
                    .map(|p| p.length - antenna.distance(sat_enu))
                    .unwrap_or(0.0);
                let local = self.antenna_frames[ant].to_enu(state.position);
                *view = Some(AntennaView {
                    class,
                    direct_range: expected_pseudorange(state.position, self.antenna_ecef[ant]),
                    extra_path,
                    elevation: enu_elevation_azimuth(local.e, local.n, local.u).elevation,
                    range_rate: range_rate(&state, self.antenna_ecef[ant]),
                });
            }
            sats.push(SatelliteGeometry { sat, views });
        }
        EpochGeometry { time: t, sats }
    }
}

/// Ray-traced geometry of every satellite above the mask at `t`.
pub fn epoch_geometry(scene: &Scene, nav: &NavigationFile, t: GpsTime) -> EpochGeometry {
    SceneContext::new(scene).geometry(nav, t)
}

/// Start time of the current reception condition per (satellite, antenna).
#[derive(Debug, Clone, Default)]
pub struct OnsetTracker {
    onsets: HashMap<(SatId, usize), (SignalClass, GpsTime)>,
}

impl OnsetTracker {
    pub fn update(&mut self, geometry: &EpochGeometry) {
        let mut next = HashMap::with_capacity(self.onsets.len());
        for sg in &geometry.sats {
            for (ant, view) in sg.views.iter().enumerate() {
                let Some(view) = view else { continue };
                let onset = match self.onsets.get(&(sg.sat, ant)) {
                    Some((class, since)) if *class == view.class => *since,
                    _ => geometry.time,
                };
                next.insert((sg.sat, ant), (view.class, onset));
            }
        }
        self.onsets = next;
    }

    /// Seconds the satellite has spent in its current condition at `t`.
    pub fn seconds_in_class(&self, sat: SatId, antenna: usize, t: GpsTime) -> f64 {
        self.onsets
            .get(&(sat, antenna))
            .map(|(_, since)| t.seconds_since(*since))
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthEpoch {
    pub dual: DualEpoch,
    /// Condition at antenna 1 for every satellite it receives.
    pub truth: Vec<(SatId, SignalClass)>,
}

fn synthesize_from(
    ctx: &SceneContext<'_>,
    geometry: &EpochGeometry,
    noise: &NoiseModel,
    seconds_in_class: impl Fn(SatId, usize) -> f64,
    rng: &mut impl Rng,
) -> SynthEpoch {
    let mut records: [Vec<ObservationRecord>; 2] = [Vec::new(), Vec::new()];
    let mut truth = Vec::new();
    for sg in &geometry.sats {
        for (ant, view) in sg.views.iter().enumerate() {
            // three draws per slot keep the stream aligned whatever the geometry
            let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let Some(v) = view else { continue };
            let pseudorange = match v.class {
                SignalClass::LosOnly => v.direct_range,
                SignalClass::NlosOnly => v.direct_range + v.extra_path,
                SignalClass::LosNlos => v.direct_range + noise.losnlos_gain * v.extra_path,
            } + noise.pseudorange_sigma * z[0];
            let mut cn0 = noise.cn0_zenith - noise.cn0_rolloff * (90.0 - v.elevation) / 90.0;
            if v.class == SignalClass::NlosOnly {
                cn0 -= noise.reflection_loss;
            }
            if v.class != SignalClass::LosOnly {
                let drift = noise.cn0_drift_rate * seconds_in_class(sg.sat, ant);
                cn0 += noise.cn0_drift_cap.map_or(drift, |cap| drift.min(cap));
            }
            cn0 = (cn0 + noise.cn0_sigma * z[2]).clamp(0.0, 70.0);
            records[ant].push(ObservationRecord {
                sat: sg.sat,
                pseudorange: Some(pseudorange),
                doppler: Some(rate_to_doppler(v.range_rate) + noise.doppler_sigma * z[1]),
                cn0: Some(cn0),
                loss_of_lock: false,
            });
            if ant == 0 {
                truth.push((sg.sat, v.class));
            }
        }
    }
    let [r1, r2] = records;
    SynthEpoch {
        dual: DualEpoch {
            antennas: [
                ObservationEpoch { time: geometry.time, records: r1 },
                ObservationEpoch { time: geometry.time, records: r2 },
            ],
            positions: ctx.antenna_ecef,
        },
        truth,
    }
}

/// Synthesize one epoch, advancing `onsets` with this epoch's geometry.
pub fn synthesize_epoch(
    scene: &Scene,
    nav: &NavigationFile,
    t: GpsTime,
    noise: &NoiseModel,
    rng: &mut impl Rng,
    onsets: &mut OnsetTracker,
) -> Result<SynthEpoch, SimError> {
    let ctx = SceneContext::new(scene);
    let geometry = ctx.geometry(nav, t);
    if geometry.sats.is_empty() {
        return Err(SimError::NoVisibleSatellites(t));
    }
    onsets.update(&geometry);
    Ok(synthesize_from(&ctx, &geometry, noise, |s, a| onsets.seconds_in_class(s, a, t), rng))
}

/// Per-epoch noise stream for a scene, independent of scheduling.
fn epoch_rng(seed: u64, tag: &str, epoch_index: u64) -> ChaCha8Rng {
    // FNV-1a over the tag, folded with the seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h.rotate_left(17));
    rng.set_stream(epoch_index);
    rng
}

/// One scene's synthesized epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRun {
    pub scene: Scene,
    pub epochs: Vec<SynthEpoch>,
}

impl SceneRun {
    pub fn tag(&self) -> &str {
        &self.scene.tag
    }

    pub fn dual_epochs(&self) -> Vec<DualEpoch> {
        self.epochs.iter().map(|e| e.dual.clone()).collect()
    }

    pub fn observation_files(&self) -> [ObservationFile; 2] {
        let positions = self.scene.antenna_ecef();
        [0, 1].map(|ant| ObservationFile {
            header: ObservationHeader::gps_l1(format!("{}{}", self.scene.tag, ant + 1), positions[ant]),
            epochs: self.epochs.iter().map(|e| e.dual.antennas[ant].clone()).collect(),
        })
    }

    pub fn truth_table(&self) -> TruthTable {
        self.epochs
            .iter()
            .flat_map(|e| e.truth.iter().map(|(sat, class)| ((e.dual.time(), *sat), *class)))
            .collect()
    }
}

/// Simulate one scene for `duration` seconds at 1 s spacing from `start`.
pub fn run_scene(
    scene: &Scene,
    nav: &NavigationFile,
    start: GpsTime,
    duration: f64,
    noise: &NoiseModel,
) -> Result<SceneRun, SimError> {
    scene.validate()?;
    noise.validate()?;
    if !(duration >= 0.0) || duration.fract() != 0.0 {
        return Err(SimError::InvalidDuration(duration));
    }
    let ctx = SceneContext::new(scene);
    let n = duration as i64;
    let warmup = noise.warmup_seconds();

    let geometries: Vec<EpochGeometry> = (-warmup..n)
        .into_par_iter()
        .map(|k| ctx.geometry(nav, start + k as f64))
        .collect();

    let mut tracker = OnsetTracker::default();
    let mut in_class: Vec<Vec<[f64; 2]>> = Vec::with_capacity(n as usize);
    for (k, geometry) in geometries.iter().enumerate() {
        tracker.update(geometry);
        if (k as i64) < warmup {
            continue;
        }
        if geometry.sats.is_empty() {
            return Err(SimError::NoVisibleSatellites(geometry.time));
        }
        let t = geometry.time;
        in_class.push(
            geometry
                .sats
                .iter()
                .map(|sg| [0, 1].map(|a| tracker.seconds_in_class(sg.sat, a, t)))
                .collect(),
        );
    }

    let epochs: Vec<SynthEpoch> = geometries[warmup as usize..]
        .par_iter()
        .zip(in_class.par_iter())
        .enumerate()
        .map(|(k, (geometry, secs))| {
            let mut rng = epoch_rng(noise.seed, &scene.tag, k as u64);
            let lookup = |sat: SatId, ant: usize| {
                geometry
                    .sats
                    .iter()
                    .position(|s| s.sat == sat)
                    .map(|i| secs[i][ant])
                    .unwrap_or(0.0)
            };
            synthesize_from(&ctx, geometry, noise, lookup, &mut rng)
        })
        .collect();

    Ok(SceneRun {
        scene: scene.clone(),
        epochs,
    })
}

/// Simulate every scene over the same time window.
pub fn run_campaign(
    scenes: &[Scene],
    nav: &NavigationFile,
    start: GpsTime,
    duration: f64,
    noise: &NoiseModel,
) -> Result<Vec<SceneRun>, SimError> {
    scenes
        .par_iter()
        .map(|scene| run_scene(scene, nav, start, duration, noise))
        .collect()
}
