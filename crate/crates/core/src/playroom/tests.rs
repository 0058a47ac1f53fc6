use super::trajectory::Trajectory;
use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn at_rest(cfg: &ArenaConfig, fist: Vec2, blocks: &[Vec2]) -> WorldState {
    WorldState {
        fist: Body { pos: fist, vel: [0.0; 2] },
        blocks: cfg
            .colors
            .iter()
            .zip(blocks)
            .map(|(&color, &pos)| Block { color, pos, vel: [0.0; 2] })
            .collect(),
        pad: cfg.pad.map(|p| p.center),
        step_count: 0,
    }
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    norm(sub(a, b))
}

#[test]
fn reset_respects_clearance() {
    let cfg = ArenaConfig::three_blocks_with_pad();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let s = reset(&cfg, &mut rng).unwrap();
        let mut pts = vec![s.fist.pos];
        pts.extend(s.blocks.iter().map(|b| b.pos));
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                assert!(dist(pts[i], pts[j]) >= 0.12);
            }
        }
        assert_eq!(s.step_count, 0);
        assert!(s.blocks.iter().all(|b| b.vel == [0.0; 2]));
        check_invariants(&s, &cfg).unwrap();
    }
}

#[test]
fn reset_is_deterministic() {
    let cfg = ArenaConfig::three_blocks_with_pad();
    let a = reset(&cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    let b = reset(&cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn reset_fails_on_overcrowded_arena() {
    let cfg = ArenaConfig {
        side: 0.25,
        colors: Color::ALL.to_vec(),
        ..ArenaConfig::default()
    };
    assert!(matches!(
        reset(&cfg, &mut ChaCha8Rng::seed_from_u64(0)),
        Err(PlayroomError::Placement(10_000))
    ));
}

#[test]
fn reset_placement_is_close_to_uniform() {
    let cfg = ArenaConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let r = cfg.radius();
    let span = cfg.side - 2.0 * r;
    let mut counts = [[0usize; 4]; 4];
    let n = 10_000;
    for _ in 0..n {
        let s = reset(&cfg, &mut rng).unwrap();
        let p = s.blocks[0].pos;
        let cell = |x: f64| (((x - r) / span * 4.0) as usize).min(3);
        counts[cell(p[0])][cell(p[1])] += 1;
    }
    let expected = n as f64 / 16.0;
    let chi2: f64 = counts
        .iter()
        .flatten()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 15 dof: P(X > 37.70) = 0.001
    assert!(chi2 < 37.70, "chi2 = {chi2}, counts = {counts:?}");
}

#[test]
fn free_motion_integrates_velocity() {
    let cfg = ArenaConfig::default();
    let s = at_rest(&cfg, [0.4, 0.4], &[[0.1, 0.1], [0.7, 0.1]]);
    let next = s.step(&cfg, [1.0, 0.0]).unwrap();
    assert!((next.fist.pos[0] - 0.42).abs() < 1e-15);
    assert_eq!(next.fist.pos[1], 0.4);
    assert_eq!(next.step_count, 1);
    assert_eq!(next.blocks, s.blocks);
}

#[test]
fn head_on_push_leaves_blocks_touching() {
    let cfg = ArenaConfig::default();
    // red just inside contact range along +x
    let s = at_rest(&cfg, [0.3, 0.4], &[[0.425, 0.4], [0.1, 0.7]]);
    let next = s.step(&cfg, [1.0, 0.0]).unwrap();
    let red = next.block(Color::Red).unwrap();
    assert!((dist(next.fist.pos, red.pos) - 0.12).abs() < 1e-9);
    assert_eq!(red.pos[1], 0.4);
    assert!(red.pos[0] > 0.425);
    assert!(red.vel[0] > 0.0);
    // the fist itself is not deflected by a free block
    assert!((next.fist.pos[0] - 0.32).abs() < 1e-15);
}

#[test]
fn wall_clamps_blocks_but_not_the_fist() {
    let cfg = ArenaConfig::default();
    let mut s = at_rest(&cfg, [0.55, 0.2], &[[0.68, 0.2], [0.1, 0.7]]);
    for _ in 0..40 {
        s = s.step(&cfg, [1.0, 0.0]).unwrap();
        check_invariants(&s, &cfg).unwrap();
    }
    let red = s.block(Color::Red).unwrap();
    assert!((red.pos[0] - (0.8 - 0.06)).abs() < 1e-12);

    let mut s = at_rest(&cfg, [0.6, 0.6], &[[0.1, 0.1], [0.2, 0.1]]);
    for _ in 0..40 {
        s = s.step(&cfg, [1.0, 1.0]).unwrap();
    }
    assert_eq!(s.fist.pos, [0.8, 0.8]);
    assert!(s.fist.pos[0] > cfg.side - cfg.radius());
}

#[test]
fn non_finite_action_is_rejected() {
    let cfg = ArenaConfig::default();
    let s = reset(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(matches!(s.step(&cfg, [f64::NAN, 0.0]), Err(PlayroomError::NonFiniteAction(_))));
}

#[test]
fn pushed_block_comes_to_rest() {
    let cfg = ArenaConfig::default();
    let mut s = at_rest(&cfg, [0.2, 0.4], &[[0.33, 0.4], [0.1, 0.7]]);
    for _ in 0..3 {
        s = s.step(&cfg, [1.0, 0.0]).unwrap();
    }
    // back off so there is no more contact
    s = s.step(&cfg, [-1.0, 0.0]).unwrap();
    s = s.step(&cfg, [-1.0, 0.0]).unwrap();
    for _ in 0..50 {
        s = s.step(&cfg, [0.0, 0.0]).unwrap();
    }
    for b in &s.blocks {
        assert!(norm(b.vel) < 1e-6, "{b:?}");
    }
}

#[test]
fn pad_does_not_affect_dynamics() {
    let plain = ArenaConfig {
        colors: Color::ALL.to_vec(),
        ..ArenaConfig::default()
    };
    let padded = ArenaConfig::three_blocks_with_pad();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut a = reset(&plain, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let mut b = reset(&padded, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    for _ in 0..2000 {
        let act = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        a = a.step(&plain, act).unwrap();
        b = b.step(&padded, act).unwrap();
        assert_eq!(a.fist, b.fist);
        assert_eq!(a.blocks, b.blocks);
    }
}

#[test]
fn jammed_block_stops_the_fist() {
    let cfg = ArenaConfig::default();
    // red pinned against the right wall, fist pushing straight into it
    let mut s = at_rest(&cfg, [0.62, 0.4], &[[0.74, 0.4], [0.1, 0.1]]);
    for _ in 0..10 {
        s = s.step(&cfg, [1.0, 0.0]).unwrap();
        check_invariants(&s, &cfg).unwrap();
    }
    assert!(s.fist.pos[0] <= 0.74 - 0.12 + 1e-9);
}

#[test]
fn random_action_fuzz_keeps_invariants() {
    let cfg = ArenaConfig::three_blocks_with_pad();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut s = reset(&cfg, &mut rng).unwrap();
    let mut act = [0.0, 0.0];
    for t in 0..50_000 {
        // persistent actions drive objects into walls and corners
        if t % 20 == 0 {
            act = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        }
        s = s.step(&cfg, act).unwrap();
        if let Err(v) = check_invariants(&s, &cfg) {
            panic!("step {t}: {v:?}");
        }
        if t % 300 == 299 {
            s = reset(&cfg, &mut rng).unwrap();
        }
    }
}

#[test]
fn observation_layout() {
    let cfg = ArenaConfig::default();
    let s = at_rest(&cfg, [0.4, 0.4], &[[0.4, 0.4], [0.7, 0.1]]);
    let o = observe(&s, &cfg);
    assert_eq!(o.len(), 6);
    assert_eq!(&o[0..2], &[0.0, 0.0]);
    assert_eq!(&o[4..6], &[0.0, 0.0]);

    let s = at_rest(&cfg, [0.1, 0.2], &[[0.3, 0.2], [0.7, 0.1]]);
    let o = observe(&s, &cfg);
    assert!((o[0] - 0.5).abs() < 1e-15 && o[1] == 0.0);
    assert!((o[4] - (-0.75)).abs() < 1e-15 && (o[5] - (-0.5)).abs() < 1e-15);

    assert_eq!(ArenaConfig::three_blocks_with_pad().obs_dim(), 10);
}

#[test]
fn enlarged_arena_moves_the_pad_with_the_corner() {
    let cfg = ArenaConfig::three_blocks_with_pad().scaled(1.5);
    assert!((cfg.side - 1.2).abs() < 1e-12);
    assert!((cfg.pad.unwrap().center[0] - 1.08).abs() < 1e-12);
    cfg.validate().unwrap();
}

#[test]
fn config_validation() {
    let bad = [
        ArenaConfig { side: 0.2, ..ArenaConfig::default() },
        ArenaConfig { colors: vec![], ..ArenaConfig::default() },
        ArenaConfig { colors: vec![Color::Red, Color::Red], ..ArenaConfig::default() },
        ArenaConfig { dt: 0.0, ..ArenaConfig::default() },
        ArenaConfig { episode_steps: 0, ..ArenaConfig::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}

#[test]
fn trajectory_round_trip() {
    let cfg = ArenaConfig::three_blocks_with_pad();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = reset(&cfg, &mut rng).unwrap();
    let names = vec!["near(red,pad)".to_owned(), "north(fist,red)".to_owned()];
    let mut traj = Trajectory::new(cfg.colors.clone(), true, names);
    traj.record(&s, [0.0, 0.0], vec![0.0, 1.0]);
    for _ in 0..25 {
        let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        s = s.step(&cfg, a).unwrap();
        traj.record(&s, a, vec![1.0, 0.0]);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    traj.write_csv(&path).unwrap();
    assert_eq!(Trajectory::read_csv(&path).unwrap(), traj);
}
