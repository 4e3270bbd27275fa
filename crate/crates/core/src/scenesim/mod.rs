//! Labeled dual-antenna GPS measurement synthesis over box-building scenes.
//!
//! Truth labels come from a geometric ray tracer ([`classify_visibility`]):
//! a direct path exists when the antenna-satellite segment misses every
//! building, and single-bounce specular reflections off vertical building
//! faces are found with the mirror method.

mod constellation;
mod raytrace;
mod synth;

pub use constellation::synthetic_constellation;
pub use raytrace::{
    classify_visibility, classify_visibility_enu, segment_hits_box, Face, PathKind, SignalPath,
    Visibility,
};
pub use synth::{
    epoch_geometry, run_campaign, run_scene, synthesize_epoch, AntennaView, EpochGeometry,
    NoiseModel, OnsetTracker, SatelliteGeometry, SceneRun, SynthEpoch, ELEVATION_MASK_DEG,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ANTENNA_BASELINE, BASELINE_TOLERANCE};
use crate::gnss::{EcefPosition, Enu, Geodetic, LocalFrame};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scene `{tag}`: {reason}")]
    InvalidScene { tag: String, reason: String },
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("no satellite above the {ELEVATION_MASK_DEG} deg mask at {0}")]
    NoVisibleSatellites(crate::gnss::GpsTime),
    #[error("campaign duration {0} s is not a whole number of seconds")]
    InvalidDuration(f64),
    #[error("scene file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Geodetic anchor of a scene's ENU frame (degrees, on the ellipsoid).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Origin {
    pub lat: f64,
    pub lon: f64,
}

/// Axis-aligned box building standing on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub min_e: f64,
    pub min_n: f64,
    pub max_e: f64,
    pub max_n: f64,
    pub height: f64,
}

impl Building {
    pub fn min(&self) -> Enu {
        Enu::new(self.min_e, self.min_n, 0.0)
    }

    pub fn max(&self) -> Enu {
        Enu::new(self.max_e, self.max_n, self.height)
    }

    /// Closed-volume membership.
    pub fn contains(&self, p: Enu) -> bool {
        (self.min_e..=self.max_e).contains(&p.e)
            && (self.min_n..=self.max_n).contains(&p.n)
            && (0.0..=self.height).contains(&p.u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub tag: String,
    pub origin: Origin,
    pub antennas: [Enu; 2],
    pub buildings: Vec<Building>,
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |reason: String| SimError::InvalidScene {
            tag: self.tag.clone(),
            reason,
        };
        if self.tag.is_empty() || self.tag.contains([',', '"', '\n']) {
            return Err(invalid(format!("tag `{}` is empty or not CSV-safe", self.tag)));
        }
        if !(-90.0..=90.0).contains(&self.origin.lat) || !(-180.0..=180.0).contains(&self.origin.lon) {
            return Err(invalid("origin out of range".into()));
        }
        for (i, b) in self.buildings.iter().enumerate() {
            let finite = [b.min_e, b.min_n, b.max_e, b.max_n, b.height].iter().all(|v| v.is_finite());
            if !finite || !(b.height > 0.0) || !(b.min_e < b.max_e) || !(b.min_n < b.max_n) {
                return Err(invalid(format!("building {i} is degenerate")));
            }
        }
        for (k, a) in self.antennas.iter().enumerate() {
            if ![a.e, a.n, a.u].iter().all(|v| v.is_finite()) || a.u <= 0.0 {
                return Err(invalid(format!("antenna {} must be finite and above ground", k + 1)));
            }
            if let Some(i) = self.buildings.iter().position(|b| b.contains(*a)) {
                return Err(invalid(format!("antenna {} lies inside building {i}", k + 1)));
            }
        }
        let baseline = self.antennas[0].distance(self.antennas[1]);
        if (baseline - ANTENNA_BASELINE).abs() > BASELINE_TOLERANCE {
            return Err(invalid(format!("antenna baseline {baseline:.4} m, expected {ANTENNA_BASELINE} m")));
        }
        Ok(())
    }

    pub fn frame(&self) -> LocalFrame {
        LocalFrame::at_geodetic(Geodetic {
            lat: self.origin.lat,
            lon: self.origin.lon,
            height: 0.0,
        })
    }

    pub fn antenna_ecef(&self) -> [EcefPosition; 2] {
        let frame = self.frame();
        [frame.to_ecef(self.antennas[0]), frame.to_ecef(self.antennas[1])]
    }
}
