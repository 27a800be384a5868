use super::*;
use crate::bounds::transfer_box;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cam() -> CameraModel {
    CameraModel::vga()
}

/// P2 uniform in the image, P1 its exact transfer under `truth` plus uniform noise.
fn scene(seed: u64, n: usize, truth: &MotionParams, noise: f64) -> (Vec<Pixel>, Vec<Pixel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = cam();
    let mut p2: Vec<Pixel> = Vec::with_capacity(n);
    while p2.len() < n {
        let p = Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        // well separated when noise-free so spurious pairs cannot appear
        if noise > 0.0 || p2.iter().all(|q| (q - p).norm() > 25.0) {
            p2.push(p);
        }
    }
    let p1 = p2
        .iter()
        .map(|p| {
            let t = transfer_point(p, truth, &cam);
            if noise > 0.0 {
                Pixel::new(t.x + rng.random_range(-noise..=noise), t.y + rng.random_range(-noise..=noise))
            } else {
                t
            }
        })
        .collect();
    (p1, p2)
}

fn small_cfg() -> SolverConfig {
    SolverConfig {
        phi_domain: (-0.1, 0.1),
        rho_domain: (0.0, 0.05),
        ..SolverConfig::for_camera(&cam())
    }
}

#[test]
fn branch_quad_split() {
    let children = branch(&MotionInterval::new(0.0, 0.4, 0.0, 0.1, 0), 1e-4, 1e-4);
    assert_eq!(children.len(), 4);
    for c in &children {
        assert!(c.phi_min == 0.2 || c.phi_max == 0.2);
        assert!(c.rho_min == 0.05 || c.rho_max == 0.05);
        assert_eq!(c.depth, 1);
    }
    let area: f64 = children.iter().map(|c| c.phi_width() * c.rho_width()).sum();
    assert!((area - 0.04).abs() < 1e-15);
}

#[test]
fn branch_floor_axis_not_split() {
    let children = branch(&MotionInterval::new(0.0, 1e-4, 0.0, 0.1, 3), 1e-4, 1e-4);
    assert_eq!(children.len(), 2);
    assert!(children.iter().all(|c| c.phi_min == 0.0 && c.phi_max == 1e-4));
}

#[test]
fn children_boxes_nest_in_parent() {
    let cam = cam();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let lo: f64 = rng.random_range(-0.5..0.4);
        let (a, b) = if lo < 0.0 { (lo, (lo + 0.1).min(0.0)) } else { (lo, lo + 0.1) };
        let r0 = rng.random_range(0.0..0.05);
        let iv = MotionInterval::new(a, b, r0, r0 + 0.02, 0);
        let p = Pixel::new(rng.random_range(-100.0..740.0), rng.random_range(-100.0..580.0));
        let parent = transfer_box(&p, &iv, &cam);
        for child in branch(&iv, 1e-4, 1e-4) {
            assert!(child.phi_min >= 0.0 || child.phi_max <= 0.0);
            assert!(parent.contains_box(&transfer_box(&p, &child, &cam)));
        }
    }
}

#[test]
fn warm_start_straddling_zero_splits() {
    let mut cfg = small_cfg();
    cfg.warm_start_margin = (0.05, 0.01);
    let d = warm_start_domain(&MotionParams::new(0.0, 0.02).unwrap(), &cfg);
    assert_eq!(d.len(), 2);
    assert_eq!(d[0].phi, (-0.05, 0.0));
    assert_eq!(d[1].phi, (0.0, 0.05));
    for part in &d {
        assert!((part.rho.0 - 0.01).abs() < 1e-15 && (part.rho.1 - 0.03).abs() < 1e-15);
    }
}

#[test]
fn warm_start_clipped_at_domain_edge() {
    let cfg = small_cfg();
    let d = warm_start_domain(&MotionParams::new(0.09, 0.001).unwrap(), &cfg);
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].phi.1, 0.1);
    assert_eq!(d[0].rho.0, 0.0);
    assert!((d[0].phi.0 - 0.04).abs() < 1e-15);
}

#[test]
fn rejects_empty_point_sets() {
    let cfg = small_cfg();
    let p = vec![Pixel::new(1.0, 1.0)];
    assert_eq!(solve(&[], &p, &cam(), &cfg, None).unwrap_err(), SolveError::NoFeatures("first view"));
    assert!(solve(&p, &[], &cam(), &cfg, None).is_err());
}

#[test]
fn rejects_invalid_config() {
    let mut cfg = small_cfg();
    cfg.max_levels = 0;
    assert!(Solver::new(cfg).is_err());
    let mut cfg = small_cfg();
    cfg.rho_domain = (0.1, 0.0);
    assert!(Solver::new(cfg).is_err());
}

#[test]
fn noise_free_recovers_truth() {
    let truth = MotionParams::new(0.03, 0.02).unwrap();
    let (p1, p2) = scene(1, 40, &truth, 0.0);
    let est = solve(&p1, &p2, &cam(), &small_cfg(), None).unwrap();
    assert_eq!(est.objective_value, 40);
    assert_eq!(est.correspondences.len(), est.objective_value);
    assert!((est.motion.phi - truth.phi).abs() < 1e-4, "{:?}", est.motion);
    assert!((est.motion.rho - truth.rho).abs() < 1e-4, "{:?}", est.motion);
    assert!(!est.flags.degenerate);
}

#[test]
fn identity_registration() {
    let (p, _) = scene(2, 30, &MotionParams::identity(), 0.0);
    let est = solve(&p, &p, &cam(), &small_cfg(), None).unwrap();
    assert_eq!(est.objective_value, 30);
    assert!(est.motion.phi.abs() < 1e-4 && est.motion.rho.abs() < 1e-4, "{:?}", est.motion);
}

#[test]
fn zero_consensus_is_degenerate() {
    let p1 = vec![Pixel::new(5.0, 5.0)];
    let p2 = vec![Pixel::new(635.0, 5.0)];
    let est = solve(&p1, &p2, &cam(), &small_cfg(), None).unwrap();
    assert_eq!(est.objective_value, 0);
    assert!(est.flags.degenerate);
    assert_eq!(est.raw_motion, MotionParams { phi: 0.0, rho: 0.025 });
}

#[test]
fn trace_certifies_optimality() {
    let truth = MotionParams::new(-0.04, 0.03).unwrap();
    let (mut p1, p2) = scene(3, 60, &truth, 2.5);
    p1.truncate(45);
    let mut cfg = small_cfg();
    cfg.record_trace = true;
    let est = solve(&p1, &p2, &cam(), &cfg, None).unwrap();
    let trace = est.trace.as_ref().unwrap();
    let best = est.objective_value;
    for t in trace {
        assert!(t.lower <= t.upper);
        if let Some(pu) = t.parent_upper {
            assert!(t.upper <= pu, "child upper {} above parent {}", t.upper, pu);
        }
        if let TraceOutcome::Pruned { best: at } = t.outcome {
            assert!(t.upper < at && at <= best);
        }
        assert!(t.interval.phi_min >= 0.0 || t.interval.phi_max <= 0.0);
    }
    assert!(est.max_discarded_upper.is_none_or(|u| u < best));
}

#[test]
fn matches_terminal_lattice_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut cfg = small_cfg();
    cfg.phi_domain = (-0.03, 0.03);
    cfg.rho_domain = (0.0, 0.03);
    cfg.min_phi_width = 1e-3;
    cfg.min_rho_width = 1e-3;
    for seed in 0..5 {
        let truth = MotionParams::new(rng.random_range(-0.03..0.03), rng.random_range(0.0..0.03)).unwrap();
        let (p1, p2) = scene(100 + seed, 80, &truth, 2.5);
        let est = solve(&p1, &p2, &cam(), &cfg, None).unwrap();
        let oracle = lattice_grid_max(&p1, &p2, &cam(), &est.terminal_lattice, cfg.epsilon);
        assert_eq!(est.objective_value, oracle);
    }
}

#[test]
fn parallel_width_does_not_change_result() {
    let truth = MotionParams::new(0.012, 0.017).unwrap();
    let (p1, p2) = scene(5, 120, &truth, 2.5);
    let mut cfg = small_cfg();
    let a = solve(&p1, &p2, &cam(), &cfg, None).unwrap();
    cfg.parallel_width = 4;
    let b = solve(&p1, &p2, &cam(), &cfg, None).unwrap();
    assert!(a.same_result(&b));
}

#[test]
fn warm_start_matches_cold_start() {
    let truth = MotionParams::new(0.02, 0.025).unwrap();
    let (p1, p2) = scene(6, 50, &truth, 0.0);
    let cfg = small_cfg();
    let solver = Solver::new(cfg).unwrap();
    let cold = solver.solve(&p1, &p2, &cam(), None).unwrap();
    let warm = solver.solve(&p1, &p2, &cam(), Some(&MotionParams::new(0.01, 0.02).unwrap())).unwrap();
    assert_eq!(cold.objective_value, warm.objective_value);
    assert!(!warm.flags.warm_start_fallback);
    assert!(warm.intervals_evaluated < cold.intervals_evaluated);
}

#[test]
fn warm_start_falls_back_when_truth_is_outside() {
    let truth = MotionParams::new(-0.08, 0.04).unwrap();
    let (p1, p2) = scene(7, 50, &truth, 0.0);
    let est = solve(&p1, &p2, &cam(), &small_cfg(), Some(&MotionParams::new(0.05, 0.005).unwrap())).unwrap();
    assert!(est.flags.warm_start_fallback);
    assert_eq!(est.objective_value, 50);
}

#[test]
fn grid_search_identity_finds_origin() {
    let (p, _) = scene(8, 30, &MotionParams::identity(), 0.0);
    let domain = SearchDomain { phi: (-0.1, 0.1), rho: (0.0, 0.05) };
    let g = grid_search(&p, &p, &cam(), &domain, 2.5, (21, 11));
    assert_eq!(g.objective_value, 30);
    assert_eq!((g.motion.phi, g.motion.rho), (0.0, 0.0));
}

#[test]
fn coarser_grid_never_beats_solver() {
    let truth = MotionParams::new(0.05, 0.01).unwrap();
    let (p1, p2) = scene(9, 70, &truth, 2.5);
    let cfg = small_cfg();
    let est = solve(&p1, &p2, &cam(), &cfg, None).unwrap();
    for d in Solver::new(cfg.clone()).unwrap().full_domains() {
        let g = grid_search(&p1, &p2, &cam(), &d, cfg.epsilon, (33, 17));
        assert!(g.objective_value <= est.objective_value);
    }
}

#[test]
fn refinement_below_floor_never_loses_to_an_offset_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let mut cfg = small_cfg();
    cfg.phi_domain = (-0.03, 0.03);
    cfg.rho_domain = (0.0, 0.03);
    cfg.min_phi_width = 1e-3;
    cfg.min_rho_width = 1e-3;
    let domain = SearchDomain { phi: cfg.phi_domain, rho: cfg.rho_domain };
    for seed in 0..10 {
        let truth = MotionParams::new(rng.random_range(-0.025..0.025), rng.random_range(0.005..0.025)).unwrap();
        let (p1, p2) = scene(200 + seed, 100, &truth, 2.5);
        let est = solve(&p1, &p2, &cam(), &cfg, None).unwrap();
        // 151 nodes never line up with the dyadic lattice
        let g = grid_search(&p1, &p2, &cam(), &domain, cfg.epsilon, (151, 151));
        assert!(est.objective_value >= g.objective_value, "seed {seed}: {} < {}", est.objective_value, g.objective_value);
        let oracle = lattice_grid_max(&p1, &p2, &cam(), &est.terminal_lattice, cfg.epsilon);
        assert_eq!(est.objective_value, oracle);
    }
}

#[test]
fn terminal_lattice_tracks_refinement_below_floor() {
    let truth = MotionParams::new(0.012, 0.017).unwrap();
    let (p1, p2) = scene(12, 150, &truth, 2.5);
    let mut cfg = small_cfg();
    cfg.subfloor_levels = 0;
    let coarse = solve(&p1, &p2, &cam(), &cfg, None).unwrap();
    cfg.subfloor_levels = 3;
    let fine = solve(&p1, &p2, &cam(), &cfg, None).unwrap();
    assert!(fine.objective_value >= coarse.objective_value);
    for (c, f) in coarse.terminal_lattice.iter().zip(&fine.terminal_lattice) {
        assert!(f.phi_nodes >= c.phi_nodes && f.phi_nodes <= 8 * (c.phi_nodes - 1) + 1);
        assert_eq!((f.phi_nodes - 1) / (c.phi_nodes - 1), (f.rho_nodes - 1) / (c.rho_nodes - 1));
    }
}
