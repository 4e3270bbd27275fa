//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

use mplab_core::features::{FeatureVector, SignalClass};
use mplab_core::gnss::{Enu, GpsTime, SatId, GM, OMEGA_EARTH};
use mplab_core::ml::{Dataset, Node, Tree};
use mplab_core::orbits::Ephemeris;
use mplab_core::scenesim::{Building, Origin, Scene};
use rand::Rng;

// ---------------------------------------------------------------- orbits

pub fn random_ephemeris(rng: &mut impl Rng, prn: u8) -> Ephemeris {
    use std::f64::consts::PI;
    Ephemeris {
        sat: SatId(prn),
        week: rng.random_range(2000..2300),
        toe: (rng.random_range(0..84) * 7200) as f64,
        sqrt_a: rng.random_range(5140.0..5170.0),
        e: rng.random_range(0.0..0.05),
        i0: rng.random_range(0.9..1.0),
        omega0: rng.random_range(-PI..PI),
        omega: rng.random_range(-PI..PI),
        m0: rng.random_range(-PI..PI),
        delta_n: rng.random_range(3e-9..6e-9),
        idot: rng.random_range(-5e-10..5e-10),
        omegadot: rng.random_range(-9e-9..-7e-9),
        cuc: rng.random_range(-8e-6..8e-6),
        cus: rng.random_range(-8e-6..8e-6),
        crc: rng.random_range(-300.0..300.0),
        crs: rng.random_range(-150.0..150.0),
        cic: rng.random_range(-3e-7..3e-7),
        cis: rng.random_range(-3e-7..3e-7),
    }
}

fn rot_x(a: f64, v: [f64; 3]) -> [f64; 3] {
    let (s, c) = a.sin_cos();
    [v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]]
}

fn rot_z(a: f64, v: [f64; 3]) -> [f64; 3] {
    let (s, c) = a.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

/// Broadcast-model position by bisection on Kepler's equation, half-angle
/// true anomaly and explicit rotations.
pub fn oracle_position(eph: &Ephemeris, tk: f64) -> [f64; 3] {
    let a = eph.sqrt_a.powi(2);
    let n = (GM / a.powi(3)).sqrt() + eph.delta_n;
    let m = eph.m0 + n * tk;
    let (mut lo, mut hi) = (m - 1.0, m + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid - eph.e * mid.sin() - m > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let big_e = 0.5 * (lo + hi);
    let nu = 2.0 * (((1.0 + eph.e) / (1.0 - eph.e)).sqrt() * (0.5 * big_e).tan()).atan();
    let phi = nu + eph.omega;
    let u = phi + eph.cuc * (2.0 * phi).cos() + eph.cus * (2.0 * phi).sin();
    let r = a * (1.0 - eph.e * big_e.cos()) + eph.crc * (2.0 * phi).cos() + eph.crs * (2.0 * phi).sin();
    let i = eph.i0 + eph.idot * tk + eph.cic * (2.0 * phi).cos() + eph.cis * (2.0 * phi).sin();
    let node = eph.omega0 + (eph.omegadot - OMEGA_EARTH) * tk - OMEGA_EARTH * eph.toe;
    rot_z(node, rot_x(i, rot_z(u, [r, 0.0, 0.0])))
}

/// Fourth-order central difference of [`oracle_position`].
pub fn oracle_velocity(eph: &Ephemeris, tk: f64) -> [f64; 3] {
    let h = 1.0;
    let p = |dt: f64| oracle_position(eph, tk + dt);
    let (m2, m1, p1, p2) = (p(-2.0 * h), p(-h), p(h), p(2.0 * h));
    std::array::from_fn(|k| (m2[k] - 8.0 * m1[k] + 8.0 * p1[k] - p2[k]) / (12.0 * h))
}

pub fn time_after_toe(eph: &Ephemeris, tk: f64) -> GpsTime {
    GpsTime::from_week_sow(eph.week, eph.toe) + tk
}

// ---------------------------------------------------------------- ray tracing

pub fn random_scene(rng: &mut impl Rng) -> Scene {
    let count = rng.random_range(0..=5);
    let buildings: Vec<Building> = (0..count)
        .map(|_| {
            let (e, n) = (rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0));
            Building {
                min_e: e,
                min_n: n,
                max_e: e + rng.random_range(3.0..30.0),
                max_n: n + rng.random_range(3.0..30.0),
                height: rng.random_range(4.0..45.0),
            }
        })
        .collect();
    loop {
        let a = Enu::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), 1.5);
        let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let b = Enu::new(a.e + 0.19 * heading.cos(), a.n + 0.19 * heading.sin(), 1.5);
        let scene = Scene {
            tag: "R".into(),
            origin: Origin { lat: 37.38, lon: 126.67 },
            antennas: [a, b],
            buildings: buildings.clone(),
        };
        if scene.validate().is_ok() {
            return scene;
        }
    }
}

/// A distant satellite above 5 deg elevation, in scene ENU.
pub fn random_satellite(rng: &mut impl Rng) -> Enu {
    let el = rng.random_range(5f64..89.0).to_radians();
    let az = rng.random_range(0.0..std::f64::consts::TAU);
    let d = 2.2e7;
    Enu::new(d * el.cos() * az.sin(), d * el.cos() * az.cos(), d * el.sin())
}

/// Interior test with a 1 nm margin so interpolated endpoints lying on a
/// face do not count.
fn strictly_inside(b: &Building, p: Enu) -> bool {
    const EPS: f64 = 1e-9;
    p.e > b.min_e + EPS
        && p.e < b.max_e - EPS
        && p.n > b.min_n + EPS
        && p.n < b.max_n - EPS
        && p.u > EPS
        && p.u < b.height - EPS
}

fn distance_to_box(b: &Building, p: Enu) -> f64 {
    let d = |v: f64, lo: f64, hi: f64| (lo - v).max(0.0).max(v - hi);
    let (de, dn, du) = (d(p.e, b.min_e, b.max_e), d(p.n, b.min_n, b.max_n), d(p.u, 0.0, b.height));
    (de * de + dn * dn + du * du).sqrt()
}

fn lerp(a: Enu, b: Enu, t: f64) -> Enu {
    Enu::new(a.e + (b.e - a.e) * t, a.n + (b.n - a.n) * t, a.u + (b.u - a.u) * t)
}

/// Dense-sampling occlusion test: 1000 samples over the part of the segment
/// below the rooftops, then repeated zooming on each building's closest
/// sample (distance to a box is convex along a line).
pub fn sampled_blocked(scene: &Scene, a: Enu, b: Enu) -> bool {
    let top = scene.buildings.iter().map(|x| x.height).fold(0.0, f64::max);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let du = b.u - a.u;
    if du != 0.0 {
        let (ta, tb) = ((0.0 - a.u) / du, (top - a.u) / du);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    } else if a.u <= 0.0 || a.u >= top {
        return false;
    }
    if t0 >= t1 {
        return false;
    }
    let (a, b) = (lerp(a, b, t0), lerp(a, b, t1));
    scene.buildings.iter().any(|bld| sampled_hits(bld, a, b))
}

fn sampled_hits(bld: &Building, a: Enu, b: Enu) -> bool {
    const SAMPLES: usize = 1000;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..5 {
        let step = (hi - lo) / SAMPLES as f64;
        let mut closest = (f64::INFINITY, 0usize);
        for k in 0..=SAMPLES {
            let p = lerp(a, b, lo + step * k as f64);
            if strictly_inside(bld, p) {
                return true;
            }
            let d = distance_to_box(bld, p);
            if d < closest.0 {
                closest = (d, k);
            }
        }
        let k = closest.1 as f64;
        (lo, hi) = ((lo + step * (k - 1.0)).max(0.0), (lo + step * (k + 1.0)).min(1.0));
    }
    false
}

/// Reflection points on every vertical face by similar triangles, each kept
/// when both legs pass the sampled occlusion test.
pub fn oracle_reflections(scene: &Scene, sat: Enu, antenna: Enu) -> Vec<(Enu, f64)> {
    let mut out = Vec::new();
    for b in &scene.buildings {
        // (axis is east?, plane coordinate, outward sign)
        let faces = [(true, b.min_e, -1.0), (true, b.max_e, 1.0), (false, b.min_n, -1.0), (false, b.max_n, 1.0)];
        for (east, c, s) in faces {
            let (a_n, s_n) = if east { (antenna.e, sat.e) } else { (antenna.n, sat.n) };
            let (da, ds) = (s * (a_n - c), s * (s_n - c));
            if da <= 0.0 || ds <= 0.0 {
                continue;
            }
            let f = da / (da + ds);
            let p = if east {
                Enu::new(c, antenna.n + (sat.n - antenna.n) * f, antenna.u + (sat.u - antenna.u) * f)
            } else {
                Enu::new(antenna.e + (sat.e - antenna.e) * f, c, antenna.u + (sat.u - antenna.u) * f)
            };
            let (along, lo, hi) = if east { (p.n, b.min_n, b.max_n) } else { (p.e, b.min_e, b.max_e) };
            if along < lo || along > hi || p.u < 0.0 || p.u > b.height {
                continue;
            }
            if sampled_blocked(scene, antenna, p) || sampled_blocked(scene, p, sat) {
                continue;
            }
            out.push((p, antenna.distance(p) + p.distance(sat)));
        }
    }
    out
}

pub fn oracle_class(scene: &Scene, sat: Enu, antenna: Enu) -> (Option<SignalClass>, usize) {
    let direct = !sampled_blocked(scene, antenna, sat);
    let reflections = oracle_reflections(scene, sat, antenna).len();
    let class = match (direct, reflections > 0) {
        (true, false) => Some(SignalClass::LosOnly),
        (false, true) => Some(SignalClass::NlosOnly),
        (true, true) => Some(SignalClass::LosNlos),
        (false, false) => None,
    };
    (class, reflections)
}

// ---------------------------------------------------------------- learning

pub fn feature_row(x: [f64; 5], label: SignalClass, i: usize) -> FeatureVector {
    FeatureVector {
        time: GpsTime::from_seconds(i as f64),
        sat: SatId((i % 32) as u8 + 1),
        location: "S".into(),
        cn0: x[0],
        delta_cn0: x[1],
        pr_doppler_consistency: x[2],
        elevation: x[3],
        dd_residual: x[4],
        label: Some(label),
    }
}

/// Two nested threshold rules on features 0 and 1.
pub fn two_rule_label(x: &[f64; 5]) -> SignalClass {
    if x[0] <= 0.35 {
        SignalClass::LosOnly
    } else if x[1] <= 0.5 {
        SignalClass::NlosOnly
    } else {
        SignalClass::LosNlos
    }
}

/// Rows with five uniform features, labeled by [`two_rule_label`], with no
/// rows within 0.1 of either threshold.
pub fn separable_dataset(n: usize, rng: &mut impl Rng) -> Dataset {
    let mut rows = Vec::with_capacity(n);
    while rows.len() < n {
        let x: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        if (x[0] - 0.35).abs() < 0.1 || (x[0] > 0.35 && (x[1] - 0.5).abs() < 0.1) {
            continue;
        }
        rows.push(feature_row(x, two_rule_label(&x), rows.len()));
    }
    Dataset::new(rows).unwrap()
}

fn candidate_thresholds(x: &[[f64; 5]], rows: &[usize], f: usize) -> Vec<f64> {
    let mut v: Vec<f64> = rows.iter().map(|&i| x[i][f]).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn single_class(y: &[SignalClass], rows: &[usize]) -> bool {
    rows.windows(2).all(|w| y[w[0]] == y[w[1]])
}

fn one_rule_separates(x: &[[f64; 5]], y: &[SignalClass], rows: &[usize]) -> bool {
    (0..5).any(|f| {
        candidate_thresholds(x, rows, f).into_iter().any(|t| {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= t);
            single_class(y, &l) && single_class(y, &r)
        })
    })
}

/// Exhaustive check that one threshold isolates a pure side and a second
/// threshold separates the remainder.
pub fn two_rule_separable(data: &Dataset) -> bool {
    let x = data.matrix();
    let y = data.labels();
    let all: Vec<usize> = (0..x.len()).collect();
    (0..5).any(|f| {
        candidate_thresholds(&x, &all, f).into_iter().any(|t| {
            let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x[i][f] <= t);
            (single_class(&y, &l) && one_rule_separates(&x, &y, &r))
                || (single_class(&y, &r) && one_rule_separates(&x, &y, &l))
        })
    })
}

fn gini_of(y: &[SignalClass], rows: &[usize]) -> f64 {
    let mut c = [0f64; 3];
    for &i in rows {
        c[y[i].index()] += 1.0;
    }
    let n = rows.len() as f64;
    1.0 - c.iter().map(|v| (v / n).powi(2)).sum::<f64>()
}

/// Largest Gini gain over every feature and midpoint threshold with at
/// least `min_leaf` rows per side.
pub fn brute_force_best_gain(x: &[[f64; 5]], y: &[SignalClass], rows: &[usize], min_leaf: usize) -> Option<f64> {
    let n = rows.len() as f64;
    let parent = gini_of(y, rows);
    let mut best: Option<f64> = None;
    for f in 0..5 {
        for t in candidate_thresholds(x, rows, f) {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= t);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let gain = parent - l.len() as f64 / n * gini_of(y, &l) - r.len() as f64 / n * gini_of(y, &r);
            best = Some(best.map_or(gain, |b: f64| b.max(gain)));
        }
    }
    best
}

/// Walks the tree and compares every split with the brute-force optimum on
/// the rows reaching it; an impure leaf above `max_depth` must have no
/// admissible split. Returns the number of splits checked.
pub fn check_cart_optimal<L>(
    tree: &Tree<L>,
    x: &[[f64; 5]],
    y: &[SignalClass],
    max_depth: usize,
    min_leaf: usize,
) -> Result<usize, String> {
    struct Ctx<'a, L> {
        tree: &'a Tree<L>,
        x: &'a [[f64; 5]],
        y: &'a [SignalClass],
        max_depth: usize,
        min_leaf: usize,
    }
    fn walk<L>(c: &Ctx<L>, node: usize, rows: Vec<usize>, depth: usize) -> Result<usize, String> {
        let best = brute_force_best_gain(c.x, c.y, &rows, c.min_leaf);
        match &c.tree.nodes[node] {
            Node::Leaf(_) => {
                if depth < c.max_depth && !single_class(c.y, &rows) && best.is_some() {
                    return Err(format!("node {node}: leaf although a split with gain {best:?} exists"));
                }
                Ok(0)
            }
            Node::Split { feature, threshold, left, right } => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| c.x[i][*feature] <= *threshold);
                let n = rows.len() as f64;
                let gain = gini_of(c.y, &rows) - l.len() as f64 / n * gini_of(c.y, &l) - r.len() as f64 / n * gini_of(c.y, &r);
                let best = best.ok_or(format!("node {node}: split where none is admissible"))?;
                if (gain - best).abs() > 1e-12 {
                    return Err(format!("node {node}: gain {gain} vs brute-force {best}"));
                }
                Ok(1 + walk(c, *left, l, depth + 1)? + walk(c, *right, r, depth + 1)?)
            }
        }
    }
    let ctx = Ctx { tree, x, y, max_depth, min_leaf };
    walk(&ctx, 0, (0..x.len()).collect(), 0)
}

/// Random labeled rows with a few repeated feature values to exercise ties.
pub fn random_small_dataset(rng: &mut impl Rng, max_rows: usize) -> Dataset {
    let n = rng.random_range(2..=max_rows);
    let rows = (0..n)
        .map(|i| {
            let x: [f64; 5] = std::array::from_fn(|_| (rng.random_range(0..12) as f64) * 0.5 + rng.random_range(0..2) as f64 * 0.01);
            let label = SignalClass::from_index(rng.random_range(0..3)).unwrap();
            feature_row(x, label, i)
        })
        .collect();
    Dataset::new(rows).unwrap()
}
