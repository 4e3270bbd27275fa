use serde::{Deserialize, Serialize};

use super::{Building, Scene};
use crate::features::SignalClass;
use crate::gnss::{EcefPosition, Enu};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathKind {
    Direct,
    Reflected,
}

/// Vertical building face: the `min` or `max` side of `building` along
/// horizontal `axis` (0 = east, 1 = north).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub building: usize,
    pub axis: usize,
    pub max_side: bool,
}

impl Face {
    fn plane(&self, b: &Building) -> f64 {
        let (lo, hi) = if self.axis == 0 { (b.min_e, b.max_e) } else { (b.min_n, b.max_n) };
        if self.max_side {
            hi
        } else {
            lo
        }
    }

    fn outward(&self) -> f64 {
        if self.max_side {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPath {
    pub kind: PathKind,
    /// Geometric length, m.
    pub length: f64,
    pub reflection_point: Option<Enu>,
    pub face: Option<Face>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Visibility {
    /// `None` when neither a direct nor a reflected path exists.
    pub class: Option<SignalClass>,
    /// Direct path first when present, then reflections by increasing length.
    pub paths: Vec<SignalPath>,
}

impl Visibility {
    pub fn direct(&self) -> Option<&SignalPath> {
        self.paths.iter().find(|p| p.kind == PathKind::Direct)
    }

    pub fn shortest_reflection(&self) -> Option<&SignalPath> {
        self.paths.iter().find(|p| p.kind == PathKind::Reflected)
    }
}

/// Whether the segment `a -> b` passes through the open interior of the
/// building. Touching a face, edge or corner does not count.
pub fn segment_hits_box(a: Enu, b: Enu, building: &Building) -> bool {
    let (lo, hi) = (building.min(), building.max());
    let mut t_enter = 0.0f64;
    let mut t_exit = 1.0f64;
    for axis in 0..3 {
        let o = a.get(axis);
        let d = b.get(axis) - o;
        let (min, max) = (lo.get(axis), hi.get(axis));
        if d == 0.0 {
            if o <= min || o >= max {
                return false;
            }
            continue;
        }
        let t1 = (min - o) / d;
        let t2 = (max - o) / d;
        let (near, far) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        t_enter = t_enter.max(near);
        t_exit = t_exit.min(far);
        if t_enter >= t_exit {
            return false;
        }
    }
    true
}

fn obstructed(scene: &Scene, a: Enu, b: Enu) -> bool {
    scene.buildings.iter().any(|bld| segment_hits_box(a, b, bld))
}

/// Specular reflection of the antenna-satellite link off one face, if the
/// mirror geometry lands on the face rectangle.
fn reflect(building: &Building, face: Face, antenna: Enu, sat: Enu) -> Option<(Enu, f64)> {
    let axis = face.axis;
    let c = face.plane(building);
    let s = face.outward();
    if s * (antenna.get(axis) - c) <= 0.0 || s * (sat.get(axis) - c) <= 0.0 {
        return None;
    }
    let mirror = antenna.with(axis, 2.0 * c - antenna.get(axis));
    let t = (c - mirror.get(axis)) / (sat.get(axis) - mirror.get(axis));
    let point = (mirror + (sat - mirror).scale(t)).with(axis, c);
    let other = 1 - axis;
    let (lo, hi) = if other == 0 {
        (building.min_e, building.max_e)
    } else {
        (building.min_n, building.max_n)
    };
    let inside_face = (lo..=hi).contains(&point.get(other)) && (0.0..=building.height).contains(&point.u);
    inside_face.then(|| (point, mirror.distance(sat)))
}

/// Ray-trace one antenna against a satellite given in scene ENU coordinates.
pub fn classify_visibility_enu(scene: &Scene, sat: Enu, antenna: Enu) -> Visibility {
    let mut paths = Vec::new();
    let has_direct = !obstructed(scene, antenna, sat);
    if has_direct {
        paths.push(SignalPath {
            kind: PathKind::Direct,
            length: antenna.distance(sat),
            reflection_point: None,
            face: None,
        });
    }

    let mut reflections = Vec::new();
    for (index, building) in scene.buildings.iter().enumerate() {
        for axis in 0..2 {
            for max_side in [false, true] {
                let face = Face { building: index, axis, max_side };
                let Some((point, length)) = reflect(building, face, antenna, sat) else {
                    continue;
                };
                if obstructed(scene, antenna, point) || obstructed(scene, point, sat) {
                    continue;
                }
                reflections.push(SignalPath {
                    kind: PathKind::Reflected,
                    length,
                    reflection_point: Some(point),
                    face: Some(face),
                });
            }
        }
    }
    reflections.sort_by(|a, b| a.length.total_cmp(&b.length));
    let has_reflection = !reflections.is_empty();
    paths.extend(reflections);

    let class = match (has_direct, has_reflection) {
        (true, false) => Some(SignalClass::LosOnly),
        (false, true) => Some(SignalClass::NlosOnly),
        (true, true) => Some(SignalClass::LosNlos),
        (false, false) => None,
    };
    Visibility { class, paths }
}

/// Ray-trace one antenna (scene ENU) against a satellite in ECEF.
pub fn classify_visibility(scene: &Scene, sat: EcefPosition, antenna: Enu) -> Visibility {
    classify_visibility_enu(scene, scene.frame().to_enu(sat), antenna)
}
