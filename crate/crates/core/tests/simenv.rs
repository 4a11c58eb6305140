use manip2nav_core::camera::{CameraExtrinsics, CameraFile, CameraIntrinsics, CameraModel};
use manip2nav_core::kinematics::{default_arm, BasePose, IkOptions, Pose3};
use manip2nav_core::simenv::*;
use nalgebra::Vector3;

fn desk_env(task: TaskKind) -> TaskEnv {
    TaskEnv::new(TaskConfig::desk(task), default_arm(), &CameraFile::forward(128, 96)).unwrap()
}

fn success_bins(env: &TaskEnv) -> Vec<(usize, StepResult)> {
    (0..env.grid().len())
        .filter_map(|b| {
            let mut e = env.clone();
            let r = e.step(b).unwrap();
            r.reach.then_some((b, r))
        })
        .collect()
}

#[test]
fn reset_and_step_are_deterministic() {
    for task in [TaskKind::Reach, TaskKind::Door] {
        let (mut a, mut b) = (desk_env(task), desk_env(task));
        for seed in [0, 7, 1234] {
            assert_eq!(a.reset(seed), b.reset(seed));
            for bin in [0, 300, 424, 700] {
                assert_eq!(a.step(bin).unwrap(), b.step(bin).unwrap());
            }
        }
    }
}

#[test]
fn target_is_visible_on_every_seed() {
    let mut full = TaskEnv::new(TaskConfig::new(TaskKind::Reach), default_arm(), &CameraFile::forward(640, 480)).unwrap();
    let mut desk = desk_env(TaskKind::Reach);
    for seed in 0..100 {
        assert!(full.reset(seed).count_id(ids::TARGET) > 0, "seed {seed}");
        assert!(desk.reset(seed).count_id(ids::TARGET) > 0, "seed {seed}");
    }
}

#[test]
fn unit_box_has_expected_pixel_width() {
    let k = CameraIntrinsics::new(200.0, 200.0, 160.0, 120.0, 320, 240).unwrap();
    let cam = CameraModel::from_extrinsics(k, CameraExtrinsics::identity());
    for z in [2.5, 4.0, 7.0] {
        let shape = BoxShape::from_bounds([-0.5, -0.5, z], [0.5, 0.5, z + 1.0]);
        let obj = SceneObject::new(9, ClassTag::Table, shape, [255, 0, 0]).unwrap();
        let obs = render_objects(&cam, &[obj]);
        let row = (0..320).filter(|&u| obs.ids[obs.pixel_index(u, 120)] == 9).count() as f64;
        let expected = 200.0 / z;
        assert!((row - expected).abs() <= 1.0, "z {z}: {row} px vs {expected}");
        let d = obs.depth[obs.pixel_index(160, 120)];
        assert!((d - z).abs() < 1e-9);
    }
}

#[test]
fn depth_lies_on_rendered_surface() {
    for task in [TaskKind::Reach, TaskKind::Door] {
        let mut env = desk_env(task);
        env.reset(3);
        let obs = env.observation().clone();
        let scene = env.scene();
        for v in (0..96).step_by(3) {
            for u in (0..128).step_by(3) {
                let i = obs.pixel_index(u, v);
                if !obs.depth[i].is_finite() {
                    assert_eq!(obs.ids[i], SKY_ID);
                    continue;
                }
                let p = scene.camera.backproject(u as f64 + 0.5, v as f64 + 0.5, obs.depth[i]).unwrap();
                let obj = scene.object(obs.ids[i]).unwrap();
                assert!(obj.shape.surface_distance(&p) < 1e-6, "pixel ({u}, {v})");
            }
        }
    }
}

#[test]
fn open_door_is_occluded_by_wall() {
    let mut env = desk_env(TaskKind::Door);
    env.reset(1);
    let closed = env.observation().count_id(ids::DOOR);
    let max = env.config().door.max_displacement;
    let open = env.set_door(max, true).count_id(ids::DOOR);
    assert!(open < closed);
    let released = env.set_door(max, false).count_id(ids::DOOR);
    assert_eq!(released, closed);
    assert_eq!(env.door().displacement, 0.0);
}

#[test]
fn door_springs_back_when_not_held() {
    let mut env = desk_env(TaskKind::Door);
    env.reset(2);
    let door_bin = success_bins(&env)
        .into_iter()
        .next()
        .map(|(b, _)| b)
        .or_else(|| {
            (0..env.grid().len()).find(|&b| {
                let mut e = env.clone();
                e.step(b).unwrap().info.door_displacement.unwrap() > 0.0
            })
        })
        .expect("some bin pushes the door");
    let r = env.step(door_bin).unwrap();
    assert!(r.info.door_displacement.unwrap() > 0.0);
    // Bin 0 is the top-left corner: sky or wall, never the door.
    let r = env.step(0).unwrap();
    assert_eq!(r.info.door_displacement, Some(0.0));
    assert!(!env.door().held);
}

#[test]
fn pushing_the_door_reduces_visible_width() {
    let mut env = desk_env(TaskKind::Door);
    env.reset(4);
    let reference = env.door_reference_px();
    let mut reduced = false;
    for b in 0..env.grid().len() {
        let mut e = env.clone();
        let r = e.step(b).unwrap();
        let visible = r.info.door_visible_px.unwrap();
        if e.door().held {
            assert!(visible <= reference);
            reduced |= visible < reference;
        } else {
            assert_eq!(visible, reference);
        }
    }
    assert!(reduced);
}

#[test]
fn reach_success_bins_exist_and_hit_target() {
    let mut env = desk_env(TaskKind::Reach);
    for seed in 0..3 {
        env.reset(seed);
        let hits = success_bins(&env);
        assert!(!hits.is_empty(), "seed {seed}");
        let panel = env.scene().first_of(ClassTag::Target).unwrap().shape;
        let mut on_panel = 0;
        for (b, r) in hits {
            let (px, py) = env.grid().center_pixel(b);
            on_panel += usize::from(env.observation().ids[env.observation().pixel_index(px, py)] == ids::TARGET);
            // Depth is ignored: only the lateral and vertical extent count.
            let p = r.info.hand_target.unwrap();
            assert!(p.y >= panel.min().y - 1e-9 && p.y <= panel.max().y + 1e-9);
            assert!(p.z >= panel.min().z - 1e-9 && p.z <= panel.max().z + 1e-9);
            assert!(r.done && r.info.move_distance.is_some());
        }
        assert!(on_panel > 0);
    }
}

/// 1 mm sweep stopping at the first unreachable displacement.
fn brute_force_advance(hand: &Vector3<f64>, base: &BasePose) -> f64 {
    let chain = default_arm();
    let opts = IkOptions::default();
    let mut warm = None;
    let mut last = 0.0;
    for k in 0..=3000 {
        let d = k as f64 * 1e-3;
        let target = world_to_arm_root(&chain, &base.advanced(d), hand);
        match reach_position(&chain, &target, warm.as_ref(), &opts) {
            Some(q) => {
                warm = Some(q);
                last = d;
            }
            None => break,
        }
    }
    last
}

#[test]
fn sweep_matches_fine_brute_force() {
    let mut env = desk_env(TaskKind::Reach);
    for seed in [5, 6] {
        env.reset(seed);
        let (_, r) = success_bins(&env).into_iter().next().unwrap();
        let hand = r.info.hand_target.unwrap();
        let fine = brute_force_advance(&hand, &BasePose::default());
        let d = r.info.move_distance.unwrap();
        assert!((d - fine).abs() <= 0.01, "sweep {d} vs brute force {fine}");
    }
}

#[test]
fn sweep_extremes() {
    let chain = default_arm();
    let opts = IkOptions::default();
    let base = BasePose::default();
    let to_world = |root: Vector3<f64>| (chain.base_mount() * nalgebra::Point3::from(root)).coords;
    // A hand behind the shoulder at full extension cannot follow any forward motion.
    let behind = Vector3::new(-chain.max_reach() * 0.999, 0.0, 0.0);
    if reach_position(&chain, &behind, None, &opts).is_some() {
        let hand = Pose3::from_position(to_world(behind));
        assert_eq!(base_advance_sweep(&chain, &base, &hand, 0.01, 3.0, &opts), 0.0);
    }
    // A hand far ahead lets the base advance until the hand nears the shoulder.
    let hand = Pose3::from_position(to_world(Vector3::new(chain.max_reach() * 0.95, 0.0, 0.0)));
    let far = base_advance_sweep(&chain, &base, &hand, 0.01, 3.0, &opts);
    assert!(far > 0.5 * chain.max_reach(), "advance {far}");
}
