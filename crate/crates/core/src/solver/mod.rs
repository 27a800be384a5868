//! Level-synchronous branch and bound over the (phi, rho) motion domain.
//!
//! Every search node is a dyadic cell of a root box, so all interval
//! corners and centres sit on a fixed lattice of the root. This lets the
//! grid oracle evaluate exactly the motions the search could have sampled.
//!
//! Per level, all surviving intervals are bounded (optionally in parallel),
//! the best lower bound is updated, and then intervals are pruned, marked
//! converged or split, in a fixed lexicographic order. An interval is only
//! discarded when its upper bound is strictly below the best lower bound.

mod grid;
mod refine;

pub use grid::{grid_search, lattice_grid_max, SearchDomain};
pub use refine::{refine, transfer_cost, RefineStatus, Refinement};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{ConsensusObjective, MotionInterval};
use crate::geometry::{transfer_point, CameraModel, MotionParams, Pixel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("no features in {0}")]
    NoFeatures(&'static str),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Full half-angle domain, radians.
    pub phi_domain: (f64, f64),
    /// Full baseline domain, metres.
    pub rho_domain: (f64, f64),
    /// Inlier threshold, pixels.
    pub epsilon: f64,
    /// Intervals at or below these widths on both axes are not split further.
    pub min_phi_width: f64,
    pub min_rho_width: f64,
    pub max_levels: u32,
    /// Extra bisections below the floors for intervals whose upper bound
    /// still exceeds the best consensus found.
    pub subfloor_levels: u32,
    /// Half-widths of the warm-started domain around the previous optimum.
    pub warm_start_margin: (f64, f64),
    /// Warm-started solves below this consensus are re-run on the full domain.
    pub min_consensus: usize,
    /// Worker threads used to bound one level. 1 evaluates sequentially.
    pub parallel_width: usize,
    /// Keep a log of every bounded interval in the estimate.
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::for_camera(&CameraModel::vga())
    }
}

impl SolverConfig {
    /// Default configuration; the baseline domain ends where a forward
    /// move would shift the view by half the image height.
    pub fn for_camera(cam: &CameraModel) -> Self {
        Self {
            phi_domain: (-std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4),
            rho_domain: (0.0, cam.depth * cam.image_height as f64 / (2.0 * cam.focal)),
            epsilon: 2.5,
            min_phi_width: 1e-4,
            min_rho_width: 1e-4,
            max_levels: 40,
            subfloor_levels: 4,
            warm_start_margin: (0.05, 0.01),
            min_consensus: 8,
            parallel_width: 1,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |msg: &str| Err(SolveError::InvalidConfig(msg.to_string()));
        let (plo, phi) = self.phi_domain;
        let (rlo, rhi) = self.rho_domain;
        if !(plo <= phi && plo >= -std::f64::consts::FRAC_PI_2 && phi <= std::f64::consts::FRAC_PI_2) {
            return bad("phi domain must be an ordered range inside [-pi/2, pi/2]");
        }
        if !(rlo <= rhi && rlo >= 0.0 && rhi.is_finite()) {
            return bad("rho domain must be an ordered, non-negative range");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.min_phi_width > 0.0 && self.min_rho_width > 0.0) {
            return bad("resolution floors must be positive");
        }
        if self.max_levels < 1 || self.max_levels > 60 {
            return bad("max_levels must be in 1..=60");
        }
        if self.subfloor_levels > 24 {
            return bad("subfloor_levels must be at most 24");
        }
        if !(self.warm_start_margin.0 > 0.0 && self.warm_start_margin.1 > 0.0) {
            return bad("warm start margins must be positive");
        }
        if self.parallel_width < 1 {
            return bad("parallel_width must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EstimateFlags {
    /// No pair registers anywhere in the domain.
    pub degenerate: bool,
    /// Optimal intervals form more than one separated cluster.
    pub multimodal: bool,
    /// The warm-started search fell short of `min_consensus` and was re-run cold.
    pub warm_start_fallback: bool,
    /// Refinement was underdetermined or left the search domain; the averaged centre is kept.
    pub refinement_rejected: bool,
    pub refinement_skipped: bool,
    /// An interval was left with an upper bound above the optimum because
    /// `max_levels` or `subfloor_levels` stopped branching.
    pub resolution_capped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceOutcome {
    Pruned { best: usize },
    Converged,
    Branched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub interval: MotionInterval,
    pub lower: usize,
    pub upper: usize,
    pub parent_upper: Option<usize>,
    pub outcome: TraceOutcome,
}

/// Node lattice of one root box at the finest resolution the search can reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalLattice {
    pub domain: SearchDomain,
    pub phi_nodes: usize,
    pub rho_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    /// Refined motion.
    pub motion: MotionParams,
    /// Average of the optimal interval samples before refinement.
    pub raw_motion: MotionParams,
    pub objective_value: usize,
    /// Inlier pairs `(i in P1, j in P2)` at one optimal sample; as many as `objective_value`.
    pub correspondences: Vec<(usize, usize)>,
    /// Merged one-to-one pairs of the optimal cluster used for refinement.
    pub refinement_pairs: Vec<(usize, usize)>,
    pub levels_used: u32,
    pub intervals_expanded: usize,
    pub intervals_pruned: usize,
    pub intervals_evaluated: usize,
    /// Resolution-floor intervals whose upper bound still exceeds the optimum.
    pub intervals_unresolved: usize,
    /// Largest upper bound among discarded intervals.
    pub max_discarded_upper: Option<usize>,
    pub cluster_centres: Vec<MotionParams>,
    pub terminal_lattice: Vec<TerminalLattice>,
    pub flags: EstimateFlags,
    /// Wall time in seconds.
    pub solve_time: f64,
    pub trace: Option<Vec<TraceEntry>>,
}

impl Estimate {
    /// Equality of everything except wall time.
    pub fn same_result(&self, other: &Estimate) -> bool {
        let mut a = self.clone();
        a.solve_time = other.solve_time;
        &a == other
    }
}

/// Dyadic cell of a root: `[idx, idx + 1] / 2^level` on each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Node {
    root: usize,
    phi_level: u32,
    phi_idx: u64,
    rho_level: u32,
    rho_idx: u64,
    depth: u32,
    parent_upper: Option<usize>,
}

/// `lo + (hi - lo) * num / 2^level`. Grid nodes use the same expression, so
/// equal fractions give bit-identical coordinates.
#[inline]
pub(crate) fn lattice_coord(lo: f64, hi: f64, num: u64, level: u32) -> f64 {
    lo + (hi - lo) * (num as f64 / (1u64 << level) as f64)
}

#[derive(Debug, Clone, Copy)]
struct Root {
    domain: SearchDomain,
    phi_floor_level: u32,
    rho_floor_level: u32,
}

fn floor_level(width: f64, floor: f64, cap: u32) -> u32 {
    let mut level = 0;
    while level < cap && width / (1u64 << level) as f64 > floor {
        level += 1;
    }
    level
}

#[derive(Debug, Clone)]
struct Evaluated {
    node: Node,
    interval: MotionInterval,
    lower: usize,
    upper: usize,
    sample: MotionParams,
    at_floor: bool,
    /// At the floor but still allowed to split below it.
    refinable: bool,
}

/// Branch-and-bound solver. Reusable across frame pairs.
pub struct Solver {
    cfg: SolverConfig,
    pool: Option<rayon::ThreadPool>,
}

impl Solver {
    pub fn new(cfg: SolverConfig) -> Result<Self, SolveError> {
        cfg.validate()?;
        let pool = if cfg.parallel_width > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.parallel_width)
                    .build()
                    .map_err(|e| SolveError::InvalidConfig(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self { cfg, pool })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Full search domain split into sign-definite half-angle parts.
    pub fn full_domains(&self) -> Vec<SearchDomain> {
        split_at_zero(self.cfg.phi_domain, self.cfg.rho_domain)
    }

    /// Globally optimal motion between two keypoint sets.
    pub fn solve(
        &self,
        p1: &[Pixel],
        p2: &[Pixel],
        cam: &CameraModel,
        warm: Option<&MotionParams>,
    ) -> Result<Estimate, SolveError> {
        if p1.is_empty() {
            return Err(SolveError::NoFeatures("first view"));
        }
        if p2.is_empty() {
            return Err(SolveError::NoFeatures("second view"));
        }
        let start = Instant::now();
        let obj = ConsensusObjective::new(p1, p2, cam, self.cfg.epsilon);
        let mut est = match warm {
            Some(prev) => {
                let warm_est = self.search(&obj, &warm_start_domain(prev, &self.cfg));
                if warm_est.objective_value >= self.cfg.min_consensus {
                    warm_est
                } else {
                    log::debug!(
                        "warm start consensus {} below {}, searching full domain",
                        warm_est.objective_value,
                        self.cfg.min_consensus
                    );
                    let mut cold = self.search(&obj, &self.full_domains());
                    cold.flags.warm_start_fallback = true;
                    cold.intervals_evaluated += warm_est.intervals_evaluated;
                    cold.intervals_expanded += warm_est.intervals_expanded;
                    cold.intervals_pruned += warm_est.intervals_pruned;
                    cold
                }
            }
            None => self.search(&obj, &self.full_domains()),
        };
        est.solve_time = start.elapsed().as_secs_f64();
        Ok(est)
    }

    /// Branch and bound over explicit sign-definite root domains.
    pub fn solve_in(
        &self,
        p1: &[Pixel],
        p2: &[Pixel],
        cam: &CameraModel,
        roots: &[SearchDomain],
    ) -> Result<Estimate, SolveError> {
        if p1.is_empty() || p2.is_empty() {
            return Err(SolveError::NoFeatures(if p1.is_empty() { "first view" } else { "second view" }));
        }
        let start = Instant::now();
        let obj = ConsensusObjective::new(p1, p2, cam, self.cfg.epsilon);
        let mut est = self.search(&obj, roots);
        est.solve_time = start.elapsed().as_secs_f64();
        Ok(est)
    }

    fn roots(&self, domains: &[SearchDomain]) -> Vec<Root> {
        domains
            .iter()
            .map(|d| {
                assert!(d.phi.0 >= 0.0 || d.phi.1 <= 0.0, "root domain straddles phi = 0");
                Root {
                    domain: *d,
                    phi_floor_level: floor_level(d.phi.1 - d.phi.0, self.cfg.min_phi_width, self.cfg.max_levels),
                    rho_floor_level: floor_level(d.rho.1 - d.rho.0, self.cfg.min_rho_width, self.cfg.max_levels),
                }
            })
            .collect()
    }

    fn interval(&self, roots: &[Root], n: &Node) -> MotionInterval {
        let d = &roots[n.root].domain;
        MotionInterval {
            phi_min: lattice_coord(d.phi.0, d.phi.1, n.phi_idx, n.phi_level),
            phi_max: lattice_coord(d.phi.0, d.phi.1, n.phi_idx + 1, n.phi_level),
            rho_min: lattice_coord(d.rho.0, d.rho.1, n.rho_idx, n.rho_level),
            rho_max: lattice_coord(d.rho.0, d.rho.1, n.rho_idx + 1, n.rho_level),
            depth: n.depth,
        }
    }

    /// Lattice sample `(phi_num / 2^(phi_level+1), rho_num / 2^(rho_level+1))` of a node.
    fn sample(&self, roots: &[Root], n: &Node, phi_num: u64, rho_num: u64) -> MotionParams {
        let d = &roots[n.root].domain;
        MotionParams {
            phi: lattice_coord(d.phi.0, d.phi.1, phi_num, n.phi_level + 1),
            rho: lattice_coord(d.rho.0, d.rho.1, rho_num, n.rho_level + 1),
        }
    }

    fn evaluate(&self, obj: &ConsensusObjective, roots: &[Root], n: &Node) -> Evaluated {
        let root = &roots[n.root];
        let interval = self.interval(roots, n);
        let at_floor = (n.phi_level >= root.phi_floor_level && n.rho_level >= root.rho_floor_level)
            || n.depth >= self.cfg.max_levels;
        let refinable = at_floor
            && n.depth < self.cfg.max_levels
            && n.phi_level - root.phi_floor_level < self.cfg.subfloor_levels;
        let sample = self.sample(roots, n, 2 * n.phi_idx + 1, 2 * n.rho_idx + 1);
        let lower = obj.objective(&sample);
        let upper = obj.upper_bound(&interval);
        Evaluated {
            node: *n,
            interval,
            lower,
            upper,
            sample,
            at_floor,
            refinable,
        }
    }

    /// Floor cells that will not be split again and whose upper bound reaches
    /// `best` also sample their corners and edge midpoints, so that every
    /// lattice node that could reach `best` gets evaluated. Shared nodes are
    /// evaluated once.
    fn sample_floor_cells(&self, obj: &ConsensusObjective, roots: &[Root], evals: &mut [Evaluated], best: usize) {
        const OFFSETS: [(i64, i64); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
        let needy: Vec<usize> = (0..evals.len())
            .filter(|&k| {
                let e = &evals[k];
                e.at_floor && e.upper >= best && e.upper > e.lower && !(e.upper > best && e.refinable)
            })
            .collect();
        if needy.is_empty() {
            return;
        }
        let mut keys: BTreeMap<(usize, u64, u64), usize> = BTreeMap::new();
        let mut points: Vec<MotionParams> = Vec::new();
        let mut slots: Vec<[usize; 8]> = Vec::with_capacity(needy.len());
        for &k in &needy {
            let n = evals[k].node;
            let root = &roots[n.root];
            let extra = self.cfg.subfloor_levels;
            let (fine_p, fine_r) = (root.phi_floor_level + 1 + extra, root.rho_floor_level + 1 + extra);
            let (shift_p, shift_r) = (fine_p - (n.phi_level + 1), fine_r - (n.rho_level + 1));
            let (pc, rc) = (2 * n.phi_idx + 1, 2 * n.rho_idx + 1);
            let mut slot = [0usize; 8];
            for (s, (dp, dr)) in OFFSETS.iter().enumerate() {
                let pn = ((pc as i64 + dp) as u64) << shift_p;
                let rn = ((rc as i64 + dr) as u64) << shift_r;
                slot[s] = *keys.entry((n.root, pn, rn)).or_insert_with(|| {
                    let d = &root.domain;
                    points.push(MotionParams {
                        phi: lattice_coord(d.phi.0, d.phi.1, pn, fine_p),
                        rho: lattice_coord(d.rho.0, d.rho.1, rn, fine_r),
                    });
                    points.len() - 1
                });
            }
            slots.push(slot);
        }
        let values: Vec<usize> = match &self.pool {
            Some(pool) => pool.install(|| points.par_iter().map(|m| obj.objective(m)).collect()),
            None => points.iter().map(|m| obj.objective(m)).collect(),
        };
        for (&k, slot) in needy.iter().zip(&slots) {
            let e = &mut evals[k];
            for &s in slot {
                if values[s] > e.lower {
                    e.lower = values[s];
                    e.sample = points[s];
                }
            }
            debug_assert!(e.lower <= e.upper, "lower bound {} exceeds upper bound {}", e.lower, e.upper);
        }
    }

    fn children(&self, roots: &[Root], e: &Evaluated) -> Vec<Node> {
        let root = &roots[e.node.root];
        let n = e.node;
        let below = n.phi_level >= root.phi_floor_level && n.rho_level >= root.rho_floor_level;
        let phis: &[(u32, u64)] = if below || n.phi_level < root.phi_floor_level {
            &[(n.phi_level + 1, 2 * n.phi_idx), (n.phi_level + 1, 2 * n.phi_idx + 1)]
        } else {
            &[(n.phi_level, n.phi_idx)]
        };
        let rhos: &[(u32, u64)] = if below || n.rho_level < root.rho_floor_level {
            &[(n.rho_level + 1, 2 * n.rho_idx), (n.rho_level + 1, 2 * n.rho_idx + 1)]
        } else {
            &[(n.rho_level, n.rho_idx)]
        };
        let mut out = Vec::with_capacity(4);
        for &(pl, pi) in phis {
            for &(rl, ri) in rhos {
                out.push(Node {
                    root: n.root,
                    phi_level: pl,
                    phi_idx: pi,
                    rho_level: rl,
                    rho_idx: ri,
                    depth: n.depth + 1,
                    parent_upper: Some(e.upper),
                });
            }
        }
        out
    }

    fn search(&self, obj: &ConsensusObjective, domains: &[SearchDomain]) -> Estimate {
        let roots = self.roots(domains);
        let mut level: Vec<Node> = (0..roots.len())
            .map(|root| Node {
                root,
                phi_level: 0,
                phi_idx: 0,
                rho_level: 0,
                rho_idx: 0,
                depth: 0,
                parent_upper: None,
            })
            .collect();

        let mut best = 0usize;
        let mut converged: Vec<Evaluated> = Vec::new();
        let mut trace = self.cfg.record_trace.then(Vec::new);
        let (mut evaluated, mut expanded, mut pruned) = (0usize, 0usize, 0usize);
        let mut max_discarded: Option<usize> = None;
        let mut levels_used = 0u32;
        let mut capped = false;
        // deepest bisection below the floor reached in each root
        let mut subfloor = vec![0u32; roots.len()];

        while !level.is_empty() {
            levels_used += 1;
            let mut evals: Vec<Evaluated> = match &self.pool {
                Some(pool) => pool.install(|| level.par_iter().map(|n| self.evaluate(obj, &roots, n)).collect()),
                None => level.iter().map(|n| self.evaluate(obj, &roots, n)).collect(),
            };
            evaluated += evals.len();
            evals.sort_by(|a, b| interval_order(&a.interval, &b.interval));
            best = best.max(evals.iter().map(|e| e.lower).max().unwrap_or(0));
            self.sample_floor_cells(obj, &roots, &mut evals, best);
            best = best.max(evals.iter().map(|e| e.lower).max().unwrap_or(0));

            let mut next = Vec::new();
            for e in evals {
                let outcome = if e.upper < best {
                    pruned += 1;
                    max_discarded = max_discarded.max(Some(e.upper));
                    TraceOutcome::Pruned { best }
                } else if e.lower == e.upper || (e.at_floor && (e.upper == best || !e.refinable)) {
                    TraceOutcome::Converged
                } else {
                    expanded += 1;
                    let root = &roots[e.node.root];
                    if e.node.phi_level >= root.phi_floor_level && e.node.rho_level >= root.rho_floor_level {
                        let extra = e.node.phi_level - root.phi_floor_level + 1;
                        subfloor[e.node.root] = subfloor[e.node.root].max(extra);
                    }
                    next.extend(self.children(&roots, &e));
                    TraceOutcome::Branched
                };
                if let Some(t) = trace.as_mut() {
                    t.push(TraceEntry {
                        interval: e.interval,
                        lower: e.lower,
                        upper: e.upper,
                        parent_upper: e.node.parent_upper,
                        outcome,
                    });
                }
                if outcome == TraceOutcome::Converged {
                    converged.push(e);
                }
            }
            level = next;
        }

        // Converged intervals overtaken by a later best are discarded now.
        let mut unresolved = 0;
        let mut winners = Vec::new();
        for e in converged {
            capped |= e.upper > best;
            if e.upper < best {
                pruned += 1;
                max_discarded = max_discarded.max(Some(e.upper));
            } else if e.lower == best {
                winners.push(e);
            } else {
                unresolved += 1;
            }
        }

        let terminal_lattice = roots
            .iter()
            .zip(&subfloor)
            .map(|(r, &extra)| TerminalLattice {
                domain: r.domain,
                phi_nodes: (1usize << (r.phi_floor_level + 1 + extra)) + 1,
                rho_nodes: (1usize << (r.rho_floor_level + 1 + extra)) + 1,
            })
            .collect();

        let mut est = Estimate {
            motion: MotionParams::identity(),
            raw_motion: MotionParams::identity(),
            objective_value: best,
            correspondences: Vec::new(),
            refinement_pairs: Vec::new(),
            levels_used,
            intervals_expanded: expanded,
            intervals_pruned: pruned,
            intervals_evaluated: evaluated,
            intervals_unresolved: unresolved,
            max_discarded_upper: max_discarded,
            cluster_centres: Vec::new(),
            terminal_lattice,
            flags: EstimateFlags {
                resolution_capped: capped,
                ..Default::default()
            },
            solve_time: 0.0,
            trace,
        };

        if best == 0 {
            let centre = domain_centre(domains);
            est.motion = centre;
            est.raw_motion = centre;
            est.flags.degenerate = true;
            est.flags.refinement_skipped = true;
            return est;
        }

        self.aggregate(obj, winners, &mut est);
        est
    }

    fn aggregate(&self, obj: &ConsensusObjective, mut winners: Vec<Evaluated>, est: &mut Estimate) {
        winners.sort_by(|a, b| interval_order(&a.interval, &b.interval));
        let clusters = cluster(&winners, self.cfg.min_phi_width, self.cfg.min_rho_width);
        let centres: Vec<MotionParams> = clusters.iter().map(|c| mean_sample(&winners, c)).collect();
        // largest cluster; ties go to the one holding the lexicographically first interval
        let chosen = (0..clusters.len())
            .max_by(|&a, &b| clusters[a].len().cmp(&clusters[b].len()).then(clusters[b][0].cmp(&clusters[a][0])))
            .expect("at least one optimal interval");
        let members = &clusters[chosen];
        let raw = centres[chosen];

        est.flags.multimodal = clusters.len() > 1;
        est.cluster_centres = centres;
        est.raw_motion = raw;
        est.correspondences = obj.inlier_pairs(&winners[members[0]].sample);

        let mut merged = BTreeSet::new();
        for &k in members {
            merged.extend(obj.inlier_pairs(&winners[k].sample));
        }
        est.refinement_pairs = one_to_one(&merged, &raw, obj);

        let r = refine(&est.refinement_pairs, &raw, obj.cam, obj.p1, obj.p2);
        if r.status == RefineStatus::NoCorrespondences {
            est.motion = raw;
            est.flags.refinement_skipped = true;
            return;
        }
        let inside = est.refinement_pairs.len() >= 2
            && r.motion.phi >= self.cfg.phi_domain.0
            && r.motion.phi <= self.cfg.phi_domain.1
            && r.motion.rho >= self.cfg.rho_domain.0
            && r.motion.rho <= self.cfg.rho_domain.1;
        if inside {
            est.motion = r.motion;
        } else {
            log::debug!("refinement to {:?} rejected, keeping {:?}", r.motion, raw);
            est.motion = raw;
            est.flags.refinement_rejected = true;
        }
    }
}

fn interval_order(a: &MotionInterval, b: &MotionInterval) -> Ordering {
    a.phi_min
        .total_cmp(&b.phi_min)
        .then(a.rho_min.total_cmp(&b.rho_min))
        .then(a.phi_max.total_cmp(&b.phi_max))
        .then(a.rho_max.total_cmp(&b.rho_max))
}

/// Groups optimal intervals that touch after dilation by one resolution step.
/// `winners` must be sorted by `phi_min`; member lists come out sorted.
fn cluster(winners: &[Evaluated], tol_phi: f64, tol_rho: f64) -> Vec<Vec<usize>> {
    let n = winners.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for a in 0..n {
        let ia = &winners[a].interval;
        for (b, wb) in winners.iter().enumerate().skip(a + 1) {
            let ib = &wb.interval;
            if ib.phi_min > ia.phi_max + tol_phi {
                break;
            }
            let touch = ib.phi_min <= ia.phi_max + tol_phi
                && ia.phi_min <= ib.phi_max + tol_phi
                && ib.rho_min <= ia.rho_max + tol_rho
                && ia.rho_min <= ib.rho_max + tol_rho;
            if touch {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for k in 0..n {
        let r = find(&mut parent, k);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(k);
    }
    groups
}

fn mean_sample(winners: &[Evaluated], members: &[usize]) -> MotionParams {
    let n = members.len() as f64;
    let (sp, sr) = members
        .iter()
        .fold((0.0, 0.0), |(p, r), &k| (p + winners[k].sample.phi, r + winners[k].sample.rho));
    MotionParams { phi: sp / n, rho: sr / n }
}

/// Greedy one-to-one selection by ascending transfer distance at `m`.
fn one_to_one(pairs: &BTreeSet<(usize, usize)>, m: &MotionParams, obj: &ConsensusObjective) -> Vec<(usize, usize)> {
    let mut scored: Vec<(f64, usize, usize)> = pairs
        .iter()
        .map(|&(i, j)| ((obj.p1[i] - transfer_point(&obj.p2[j], m, obj.cam)).norm_squared(), i, j))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_i = BTreeSet::new();
    let mut used_j = BTreeSet::new();
    let mut out = Vec::new();
    for (_, i, j) in scored {
        if !used_i.contains(&i) && !used_j.contains(&j) {
            used_i.insert(i);
            used_j.insert(j);
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

fn domain_centre(domains: &[SearchDomain]) -> MotionParams {
    let plo = domains.iter().map(|d| d.phi.0).fold(f64::INFINITY, f64::min);
    let phi = domains.iter().map(|d| d.phi.1).fold(f64::NEG_INFINITY, f64::max);
    let rlo = domains.iter().map(|d| d.rho.0).fold(f64::INFINITY, f64::min);
    let rhi = domains.iter().map(|d| d.rho.1).fold(f64::NEG_INFINITY, f64::max);
    MotionParams {
        phi: 0.5 * (plo + phi),
        rho: 0.5 * (rlo + rhi),
    }
}

fn split_at_zero(phi: (f64, f64), rho: (f64, f64)) -> Vec<SearchDomain> {
    if phi.0 < 0.0 && phi.1 > 0.0 {
        vec![SearchDomain { phi: (phi.0, 0.0), rho }, SearchDomain { phi: (0.0, phi.1), rho }]
    } else {
        vec![SearchDomain { phi, rho }]
    }
}

/// Domain centred on the previous optimum, clipped to the full domain and
/// split at `phi = 0` when it straddles zero.
pub fn warm_start_domain(prev: &MotionParams, cfg: &SolverConfig) -> Vec<SearchDomain> {
    let (mp, mr) = cfg.warm_start_margin;
    let phi = (
        (prev.phi - mp).max(cfg.phi_domain.0),
        (prev.phi + mp).min(cfg.phi_domain.1),
    );
    let rho = (
        (prev.rho - mr).max(cfg.rho_domain.0),
        (prev.rho + mr).min(cfg.rho_domain.1),
    );
    if phi.0 > phi.1 || rho.0 > rho.1 {
        // previous optimum outside the configured domain
        return split_at_zero(cfg.phi_domain, cfg.rho_domain);
    }
    split_at_zero(phi, rho)
}

/// One-shot solve with a fresh [`Solver`].
pub fn solve(
    p1: &[Pixel],
    p2: &[Pixel],
    cam: &CameraModel,
    cfg: &SolverConfig,
    warm: Option<&MotionParams>,
) -> Result<Estimate, SolveError> {
    Solver::new(cfg.clone())?.solve(p1, p2, cam, warm)
}

/// Quad split of an interval at its midpoint; axes at their floor are kept whole.
pub fn branch(iv: &MotionInterval, min_phi_width: f64, min_rho_width: f64) -> Vec<MotionInterval> {
    let c = iv.centre();
    let phis = if iv.phi_width() > min_phi_width {
        vec![(iv.phi_min, c.phi), (c.phi, iv.phi_max)]
    } else {
        vec![(iv.phi_min, iv.phi_max)]
    };
    let rhos = if iv.rho_width() > min_rho_width {
        vec![(iv.rho_min, c.rho), (c.rho, iv.rho_max)]
    } else {
        vec![(iv.rho_min, iv.rho_max)]
    };
    phis.iter()
        .flat_map(|&(a, b)| rhos.iter().map(move |&(r0, r1)| MotionInterval::new(a, b, r0, r1, iv.depth + 1)))
        .collect()
}

#[cfg(test)]
mod tests;
