mod common;

use common::{oracle_class, random_satellite, random_scene};
use mplab_core::gnss::Enu;
use mplab_core::scenesim::{classify_visibility_enu, PathKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn two_hundred_scenes_agree_with_dense_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    let mut classes = [0usize; 4];
    for s in 0..200 {
        let scene = random_scene(&mut rng);
        for _ in 0..12 {
            let sat = random_satellite(&mut rng);
            for antenna in scene.antennas {
                let v = classify_visibility_enu(&scene, sat, antenna);
                let (class, reflections) = oracle_class(&scene, sat, antenna);
                assert_eq!(v.class, class, "scene {s}: {scene:?}, sat {sat:?}, antenna {antenna:?}");
                let got = v.paths.iter().filter(|p| p.kind == PathKind::Reflected).count();
                assert_eq!(got, reflections, "scene {s}: reflection count");
                classes[class.map_or(3, |c| c.index())] += 1;
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 200 * 12 * 2);
    // the generator must exercise every outcome
    assert!(classes.iter().all(|&c| c > 0), "{classes:?}");
}

#[test]
fn reflected_paths_exceed_direct_and_sit_on_faces() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let scene = random_scene(&mut rng);
        let sat = random_satellite(&mut rng);
        let antenna = scene.antennas[0];
        let v = classify_visibility_enu(&scene, sat, antenna);
        let straight = antenna.distance(sat);
        for p in &v.paths {
            match p.kind {
                PathKind::Direct => assert_eq!(p.length, straight),
                PathKind::Reflected => {
                    assert!(p.length > straight);
                    let point: Enu = p.reflection_point.unwrap();
                    let face = p.face.unwrap();
                    let b = &scene.buildings[face.building];
                    let plane = match (face.axis, face.max_side) {
                        (0, false) => b.min_e,
                        (0, true) => b.max_e,
                        (_, false) => b.min_n,
                        (_, true) => b.max_n,
                    };
                    assert_eq!(point.get(face.axis), plane);
                    let via = antenna.distance(point) + point.distance(sat);
                    assert!((via - p.length).abs() < 1e-6 * p.length.max(1.0));
                }
            }
        }
    }
}
