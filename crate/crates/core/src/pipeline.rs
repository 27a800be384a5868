//! Sequence-level runs: chained pairwise solves, the matched 1-point RANSAC
//! reference, trajectory integration and evaluation.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{one_point_ransac, MatchSet};
use crate::dataset::{Dataset, DatasetError, Frame};
use crate::geometry::{integrate_motion, CameraModel, MotionParams, Pixel, Pose2D};
use crate::metrics::{ate, rpe, MetricsError, Trajectory};
use crate::simulate::{simulate, SimulationConfig, SimulationError};
use crate::solver::{grid_search, Estimate, SearchDomain, SolveError, Solver, SolverConfig, TerminalLattice};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

/// Consecutive frame pairs, plus the pair closing the loop when `closed`.
pub fn frame_pairs(n: usize, closed: bool) -> Vec<(usize, usize)> {
    let mut pairs: Vec<_> = (1..n).map(|k| (k - 1, k)).collect();
    if closed && n > 2 {
        pairs.push((n - 1, 0));
    }
    pairs
}

/// Chains motions from `start`; frame `k + 1` is the pose after motion `k`.
pub fn integrate(start: Pose2D, motions: &[MotionParams]) -> Trajectory {
    let mut poses = Vec::with_capacity(motions.len() + 1);
    poses.push(start);
    for m in motions {
        let next = integrate_motion(poses.last().unwrap(), m);
        poses.push(next);
    }
    Trajectory::from_poses(poses)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub grid_objective: usize,
    pub solver_objective: usize,
    /// Each lattice axis was thinned by `2^coarsening` in total.
    pub coarsening: u32,
    /// Whether the grid covered every node the solver could sample.
    pub exact: bool,
    pub passed: bool,
}

fn coarsen(l: &TerminalLattice, max_nodes: usize) -> (usize, usize, u32) {
    let (mut np, mut nr, mut k) = (l.phi_nodes, l.rho_nodes, 0);
    while np * nr > max_nodes {
        if np >= nr && np > 2 {
            np = (np - 1) / 2 + 1;
        } else if nr > 2 {
            nr = (nr - 1) / 2 + 1;
        } else {
            break;
        }
        k += 1;
    }
    (np, nr, k)
}

/// Re-evaluates the objective on the solver's terminal lattices, thinned by
/// powers of two until each has at most `max_nodes` nodes. Thinned lattices
/// are subsets of the full one, so the grid value may never exceed the
/// solver's; on an unthinned lattice the two must be equal.
pub fn oracle_check(
    p1: &[Pixel],
    p2: &[Pixel],
    cam: &CameraModel,
    est: &Estimate,
    epsilon: f64,
    max_nodes: usize,
) -> OracleRecord {
    let mut grid_objective = 0;
    let mut coarsening = 0;
    for l in &est.terminal_lattice {
        let (np, nr, k) = coarsen(l, max_nodes);
        coarsening += k;
        let g = grid_search(p1, p2, cam, &l.domain, epsilon, (np, nr));
        grid_objective = grid_objective.max(g.objective_value);
    }
    let exact = coarsening == 0;
    let passed = if exact {
        grid_objective == est.objective_value
    } else {
        grid_objective <= est.objective_value
    };
    OracleRecord {
        grid_objective,
        solver_objective: est.objective_value,
        coarsening,
        exact,
        passed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub first: usize,
    pub second: usize,
    pub phi: f64,
    pub rho: f64,
    pub raw_phi: f64,
    pub raw_rho: f64,
    pub gt_phi: Option<f64>,
    pub gt_rho: Option<f64>,
    pub objective: usize,
    pub correspondences: usize,
    pub levels: u32,
    pub nodes_expanded: usize,
    pub nodes_pruned: usize,
    pub nodes_evaluated: usize,
    pub solve_ms: f64,
    pub warm_started: bool,
    pub warm_start_fallback: bool,
    pub multimodal: bool,
    /// No usable estimate; the previous motion was carried over.
    pub carried_over: bool,
    pub oracle: Option<OracleRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GovoOptions {
    pub warm_start: bool,
    pub oracle_check: bool,
    pub oracle_max_nodes: usize,
}

impl Default for GovoOptions {
    fn default() -> Self {
        Self {
            warm_start: true,
            oracle_check: false,
            oracle_max_nodes: 1 << 24,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub records: Vec<PairRecord>,
    /// Integrated refined motions.
    pub trajectory: Trajectory,
    /// Integrated motions before refinement.
    pub raw_trajectory: Trajectory,
}

impl SequenceRun {
    pub fn oracle_violations(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.oracle.is_some_and(|o| !o.passed))
            .count()
    }

    pub fn solve_times_ms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.solve_ms).collect()
    }
}

fn start_pose(ds: &Dataset) -> Pose2D {
    ds.groundtruth.first().map(|g| g.pose()).unwrap_or_else(Pose2D::origin)
}

fn gt_motion(ds: &Dataset, first: usize) -> (Option<f64>, Option<f64>) {
    ds.groundtruth.get(first).map_or((None, None), |g| (g.phi, g.rho))
}

/// Solves every consecutive pair of `ds` without correspondences.
///
/// With `warm_start` each solve is seeded by the previous refined motion.
/// Pairs without features or without any consensus carry the previous
/// motion over.
pub fn run_govo(ds: &Dataset, cfg: &SolverConfig, opts: &GovoOptions) -> Result<SequenceRun, PipelineError> {
    let solver = Solver::new(cfg.clone())?;
    let cam = ds.meta.camera;
    let pairs = frame_pairs(ds.frames.len(), ds.meta.closed);
    let mut records = Vec::with_capacity(pairs.len());
    let mut refined = Vec::with_capacity(pairs.len());
    let mut raw = Vec::with_capacity(pairs.len());
    let mut prev: Option<MotionParams> = None;

    for &(i, j) in &pairs {
        let (p1, p2) = (&ds.frames[i].points, &ds.frames[j].points);
        let warm = if opts.warm_start { prev } else { None };
        let (gt_phi, gt_rho) = gt_motion(ds, i);
        let fallback = prev.unwrap_or(MotionParams::identity());
        let record = match solver.solve(p1, p2, &cam, warm.as_ref()) {
            Ok(est) if !est.flags.degenerate => {
                let oracle = opts
                    .oracle_check
                    .then(|| oracle_check(p1, p2, &cam, &est, cfg.epsilon, opts.oracle_max_nodes));
                refined.push(est.motion);
                raw.push(est.raw_motion);
                prev = Some(est.motion);
                PairRecord {
                    first: i,
                    second: j,
                    phi: est.motion.phi,
                    rho: est.motion.rho,
                    raw_phi: est.raw_motion.phi,
                    raw_rho: est.raw_motion.rho,
                    gt_phi,
                    gt_rho,
                    objective: est.objective_value,
                    correspondences: est.refinement_pairs.len(),
                    levels: est.levels_used,
                    nodes_expanded: est.intervals_expanded,
                    nodes_pruned: est.intervals_pruned,
                    nodes_evaluated: est.intervals_evaluated,
                    solve_ms: est.solve_time * 1e3,
                    warm_started: warm.is_some(),
                    warm_start_fallback: est.flags.warm_start_fallback,
                    multimodal: est.flags.multimodal,
                    carried_over: false,
                    oracle,
                }
            }
            Ok(_) | Err(SolveError::NoFeatures(_)) => {
                log::warn!("pair {i}->{j}: no consensus, carrying previous motion over");
                refined.push(fallback);
                raw.push(fallback);
                PairRecord {
                    first: i,
                    second: j,
                    phi: fallback.phi,
                    rho: fallback.rho,
                    raw_phi: fallback.phi,
                    raw_rho: fallback.rho,
                    gt_phi,
                    gt_rho,
                    objective: 0,
                    correspondences: 0,
                    levels: 0,
                    nodes_expanded: 0,
                    nodes_pruned: 0,
                    nodes_evaluated: 0,
                    solve_ms: 0.0,
                    warm_started: warm.is_some(),
                    warm_start_fallback: false,
                    multimodal: false,
                    carried_over: true,
                    oracle: None,
                }
            }
            Err(e) => return Err(e.into()),
        };
        records.push(record);
    }

    let start = start_pose(ds);
    Ok(SequenceRun {
        records,
        trajectory: integrate(start, &refined),
        raw_trajectory: integrate(start, &raw),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacOptions {
    /// Probability that a synthetic match points at a wrong first-view keypoint.
    pub ambiguity: f64,
    pub iterations: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        Self {
            ambiguity: 0.5,
            iterations: 200,
            epsilon: 2.5,
            seed: 0,
        }
    }
}

/// Matches built from shared canvas ids. Each match is redirected, with
/// probability `ambiguity`, to a different keypoint of the first view.
pub fn synthetic_matches(f1: &Frame, f2: &Frame, ambiguity: f64, rng: &mut impl Rng) -> MatchSet {
    let index: HashMap<usize, usize> = f1.ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let mut p1 = Vec::new();
    let mut p2 = Vec::new();
    let mut labels = Vec::new();
    for (id, q) in f2.ids.iter().zip(&f2.points) {
        let Some(&k) = index.get(id) else { continue };
        let wrong = f1.points.len() > 1 && rng.random::<f64>() < ambiguity;
        let k = if wrong {
            let other = rng.random_range(0..f1.points.len() - 1);
            if other >= k {
                other + 1
            } else {
                other
            }
        } else {
            k
        };
        p1.push(f1.points[k]);
        p2.push(*q);
        labels.push(wrong);
    }
    MatchSet {
        p1,
        p2,
        outlier: Some(labels),
    }
}

/// 1-point RANSAC over synthetic matches of every consecutive pair. Pairs
/// without a valid hypothesis carry the previous motion over.
pub fn run_ransac(ds: &Dataset, opts: &RansacOptions) -> SequenceRun {
    let cam = ds.meta.camera;
    let pairs = frame_pairs(ds.frames.len(), ds.meta.closed);
    let mut records = Vec::with_capacity(pairs.len());
    let mut refined = Vec::with_capacity(pairs.len());
    let mut raw = Vec::with_capacity(pairs.len());
    let mut prev = MotionParams::identity();

    for (n, &(i, j)) in pairs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(n as u64);
        let matches = synthetic_matches(&ds.frames[i], &ds.frames[j], opts.ambiguity, &mut rng);
        let ransac_seed: u64 = rng.random();
        let (gt_phi, gt_rho) = gt_motion(ds, i);
        let started = Instant::now();
        let result = one_point_ransac(&matches, &cam, opts.epsilon, opts.iterations, ransac_seed);
        let solve_ms = started.elapsed().as_secs_f64() * 1e3;
        let (motion, raw_motion, objective, carried_over) = match result {
            Ok(est) => (est.motion, est.raw_motion, est.objective_value, false),
            Err(e) => {
                log::warn!("pair {i}->{j}: {e}, carrying previous motion over");
                (prev, prev, 0, true)
            }
        };
        prev = motion;
        refined.push(motion);
        raw.push(raw_motion);
        records.push(PairRecord {
            first: i,
            second: j,
            phi: motion.phi,
            rho: motion.rho,
            raw_phi: raw_motion.phi,
            raw_rho: raw_motion.rho,
            gt_phi,
            gt_rho,
            objective,
            correspondences: objective,
            levels: 0,
            nodes_expanded: 0,
            nodes_pruned: 0,
            nodes_evaluated: opts.iterations,
            solve_ms,
            warm_started: false,
            warm_start_fallback: false,
            multimodal: false,
            carried_over,
            oracle: None,
        });
    }
    let start = start_pose(ds);
    SequenceRun {
        records,
        trajectory: integrate(start, &refined),
        raw_trajectory: integrate(start, &raw),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub frames: usize,
    pub rpe_mean: f64,
    pub rpe_rmse: f64,
    pub rpe_rot_mean: f64,
    pub rpe_rot_rmse: f64,
    pub ate_mean: f64,
    pub ate_rmse: f64,
}

/// RPE with a one-frame delta, and ATE.
pub fn evaluate(est: &Trajectory, gt: &Trajectory) -> Result<MetricsSummary, MetricsError> {
    let r = rpe(est, gt, 1)?;
    let a = ate(est, gt)?;
    Ok(MetricsSummary {
        frames: est.len(),
        rpe_mean: r.mean,
        rpe_rmse: r.rmse,
        rpe_rot_mean: r.rot_mean,
        rpe_rot_rmse: r.rot_rmse,
        ate_mean: a.mean,
        ate_rmse: a.rmse,
    })
}

/// Result of simulating one sequence and running the solver over it.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub dataset: Dataset,
    pub run: SequenceRun,
    pub before_refinement: MetricsSummary,
    pub after_refinement: MetricsSummary,
}

pub fn run_experiment(
    sim: &SimulationConfig,
    solver: &SolverConfig,
    opts: &GovoOptions,
) -> Result<Experiment, PipelineError> {
    let dataset = Dataset::from_sequence(&simulate(sim)?);
    let run = run_govo(&dataset, solver, opts)?;
    let gt = dataset.groundtruth_trajectory();
    let before_refinement = evaluate(&run.raw_trajectory, &gt)?;
    let after_refinement = evaluate(&run.trajectory, &gt)?;
    Ok(Experiment {
        dataset,
        run,
        before_refinement,
        after_refinement,
    })
}

/// One row of a parameter sweep; column names follow the plotted axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub noise_level: f64,
    pub point_count: usize,
    pub eccentricity: f64,
    pub b: f64,
    pub step_size: f64,
    pub seed: u64,
    pub rpe_before: f64,
    pub rpe: f64,
    pub ate: f64,
}

pub fn sweep_row(sim: &SimulationConfig, solver: &SolverConfig, opts: &GovoOptions) -> Result<SweepRow, PipelineError> {
    let e = run_experiment(sim, solver, opts)?;
    Ok(SweepRow {
        noise_level: sim.noise,
        point_count: sim.points,
        eccentricity: sim.trajectory.eccentricity(),
        b: sim.trajectory.b,
        step_size: sim.trajectory.step_deg,
        seed: sim.seed,
        rpe_before: e.before_refinement.rpe_mean,
        rpe: e.after_refinement.rpe_mean,
        ate: e.after_refinement.ate_rmse,
    })
}

/// Domain covering the configured one, for reports.
pub fn full_domain(cfg: &SolverConfig) -> SearchDomain {
    SearchDomain {
        phi: cfg.phi_domain,
        rho: cfg.rho_domain,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::TrajectorySpec;

    fn noise_free() -> SimulationConfig {
        SimulationConfig {
            noise: 0.0,
            points: 9000,
            trajectory: TrajectorySpec::circle(0.5, 10.0),
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn pairs_close_loops() {
        assert_eq!(frame_pairs(3, true), vec![(0, 1), (1, 2), (2, 0)]);
        assert_eq!(frame_pairs(3, false), vec![(0, 1), (1, 2)]);
        assert!(frame_pairs(1, true).is_empty());
    }

    #[test]
    fn noise_free_circle_closes_loop() {
        let sim = noise_free();
        let solver = SolverConfig::for_camera(&sim.camera);
        let e = run_experiment(&sim, &solver, &GovoOptions::default()).unwrap();
        let poses = e.run.trajectory.poses();
        let (first, last) = (poses[0], poses[poses.len() - 1]);
        let gap = (first.x - last.x).hypot(first.y - last.y);
        assert!(gap < 1e-3, "loop gap {gap}");
        assert_eq!(e.run.records.len(), 36);
        assert!(e.after_refinement.rpe_mean < 1e-4);
    }

    #[test]
    fn warm_start_keeps_objectives_and_saves_work() {
        let sim = SimulationConfig {
            trajectory: TrajectorySpec::circle(0.25, 20.0),
            ..noise_free()
        };
        let solver = SolverConfig::for_camera(&sim.camera);
        let ds = Dataset::from_sequence(&simulate(&sim).unwrap());
        let warm = run_govo(&ds, &solver, &GovoOptions::default()).unwrap();
        let cold = run_govo(
            &ds,
            &solver,
            &GovoOptions {
                warm_start: false,
                ..Default::default()
            },
        )
        .unwrap();
        let objectives = |r: &SequenceRun| r.records.iter().map(|x| x.objective).collect::<Vec<_>>();
        assert_eq!(objectives(&warm), objectives(&cold));
        let work = |r: &SequenceRun| r.records.iter().map(|x| x.nodes_evaluated).sum::<usize>();
        assert!(work(&warm) < work(&cold));
    }

    #[test]
    fn oracle_check_passes_on_coarsened_and_exact_lattices() {
        let sim = SimulationConfig {
            trajectory: TrajectorySpec::circle(0.25, 20.0),
            noise: 2.5,
            ..noise_free()
        };
        let mut solver = SolverConfig::for_camera(&sim.camera);
        solver.min_phi_width = 2e-3;
        solver.min_rho_width = 2e-3;
        let ds = Dataset::from_sequence(&simulate(&sim).unwrap());
        for max_nodes in [1 << 12, 1 << 22] {
            let opts = GovoOptions {
                oracle_check: true,
                oracle_max_nodes: max_nodes,
                ..Default::default()
            };
            let run = run_govo(&ds, &solver, &opts).unwrap();
            assert_eq!(run.oracle_violations(), 0);
            let any_exact = run.records.iter().any(|r| r.oracle.unwrap().exact);
            assert_eq!(any_exact, max_nodes == 1 << 22);
        }
    }

    #[test]
    fn coarsening_keeps_dyadic_nodes() {
        let l = TerminalLattice {
            domain: SearchDomain { phi: (0.0, 1.0), rho: (0.0, 1.0) },
            phi_nodes: 1025,
            rho_nodes: 65,
        };
        let (np, nr, k) = coarsen(&l, 4096);
        assert!(np * nr <= 4096);
        assert_eq!(((1024 / (np - 1)) * (np - 1), (64 / (nr - 1)) * (nr - 1)), (1024, 64));
        assert!(k > 0);
    }

    #[test]
    fn clean_matches_make_ransac_agree() {
        let sim = SimulationConfig {
            noise: 0.0,
            ..noise_free()
        };
        let ds = Dataset::from_sequence(&simulate(&sim).unwrap());
        let run = run_ransac(
            &ds,
            &RansacOptions {
                ambiguity: 0.0,
                ..Default::default()
            },
        );
        for r in &run.records {
            assert!((r.phi - r.gt_phi.unwrap()).abs() < 1e-8);
            assert!((r.rho - r.gt_rho.unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn ambiguity_rate_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f1 = Frame {
            ids: (0..2000).collect(),
            points: (0..2000).map(|k| Pixel::new(k as f64, 0.0)).collect(),
        };
        let m = synthetic_matches(&f1, &f1, 0.5, &mut rng);
        let labels = m.outlier.unwrap();
        let wrong = labels.iter().filter(|&&w| w).count() as f64 / labels.len() as f64;
        assert!((wrong - 0.5).abs() < 0.05);
        for (k, w) in labels.iter().enumerate() {
            assert_eq!(*w, m.p1[k] != m.p2[k]);
        }
    }
}
