use manip2nav_core::affordance::*;
use manip2nav_core::camera::CameraFile;
use manip2nav_core::kinematics::default_arm;
use manip2nav_core::manip_map::ActionGrid;
use manip2nav_core::simenv::{ids, TaskConfig, TaskEnv, TaskKind};
use proptest::prelude::*;

fn desk_env(task: TaskKind) -> TaskEnv {
    TaskEnv::new(TaskConfig::desk(task), default_arm(), &CameraFile::forward(128, 96)).unwrap()
}

#[test]
fn reach_mask_is_the_target_pixel_set() {
    let mut env = desk_env(TaskKind::Reach);
    for seed in 0..10 {
        let obs = env.reset(seed).clone();
        let mask = extract_affordance(&obs, TaskKind::Reach);
        let oracle: Vec<bool> = obs.ids.iter().map(|id| *id == ids::TARGET).collect();
        assert_eq!(mask.mask, oracle);
        assert!(!mask.is_empty());
    }
}

#[test]
fn door_mask_shrinks_as_door_opens() {
    let mut env = desk_env(TaskKind::Door);
    env.reset(0);
    let max = env.config().door.max_displacement;
    let mut last = usize::MAX;
    for k in 0..=10 {
        let obs = env.set_door(max * k as f64 / 10.0, true).clone();
        let count = extract_affordance(&obs, TaskKind::Door).count();
        assert!(count <= last);
        last = count;
    }
    assert!(last < extract_affordance(env.set_door(0.0, false), TaskKind::Door).count());
}

#[test]
fn bins_mark_any_masked_pixel() {
    let env = desk_env(TaskKind::Reach);
    let obs = env.observation();
    let mask = extract_affordance(obs, TaskKind::Reach);
    let grid = env.grid();
    let bins = mask_to_bins(&mask, &grid).unwrap();
    let mut oracle = vec![false; grid.len()];
    for v in 0..obs.height {
        for u in 0..obs.width {
            if obs.ids[obs.pixel_index(u, v)] == ids::TARGET {
                oracle[grid.bin_of_pixel(u, v)] = true;
            }
        }
    }
    assert_eq!(bins, oracle);
    let wrong = ActionGrid::new(64, 48, 4).unwrap();
    assert!(mask_to_bins(&mask, &wrong).is_err());
}

#[test]
fn features_depend_on_layout() {
    let mut env = desk_env(TaskKind::Reach);
    let spec = FeatureSpec::default();
    let a = encode_state(&env.reset(0).clone(), &spec);
    let b = encode_state(&env.reset(1).clone(), &spec);
    assert_eq!(a.len(), DEFAULT_FEATURE_LEN);
    assert_eq!(b.len(), DEFAULT_FEATURE_LEN);
    assert_ne!(a, b);
    assert!(a.values.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert_eq!(a, encode_state(&env.reset(0).clone(), &spec));
}

fn mask_strategy() -> impl Strategy<Value = AffordanceMask> {
    prop::collection::vec(any::<bool>(), 24).prop_map(|mask| AffordanceMask {
        width: 6,
        height: 4,
        mask,
    })
}

proptest! {
    #[test]
    fn union_is_elementwise_or(a in mask_strategy(), b in mask_strategy()) {
        let u = a.union(&b).unwrap();
        prop_assert_eq!(&u, &b.union(&a).unwrap());
        for i in 0..24 {
            prop_assert_eq!(u.mask[i], a.mask[i] || b.mask[i]);
        }
        prop_assert!(u.count() >= a.count().max(b.count()));
        prop_assert!(u.count() <= a.count() + b.count());
    }
}

#[test]
fn union_rejects_shape_mismatch() {
    assert!(AffordanceMask::empty(6, 4).union(&AffordanceMask::empty(4, 6)).is_err());
}
