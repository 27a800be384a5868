//! Damped least-squares refinement of (phi, rho) over fixed correspondences.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix2, Vector2};

use crate::geometry::{transfer_point, CameraModel, MotionParams, Pixel};

const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RefineStatus {
    Converged,
    MaxIterations,
    /// Nothing to refine on; the initial motion is returned unchanged.
    NoCorrespondences,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub motion: MotionParams,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub status: RefineStatus,
}

/// Sum of squared transfer errors `|p1[i] - H(m) p2[j]|^2` over `pairs`.
pub fn transfer_cost(pairs: &[(usize, usize)], m: &MotionParams, cam: &CameraModel, p1: &[Pixel], p2: &[Pixel]) -> f64 {
    pairs
        .iter()
        .map(|&(i, j)| (p1[i] - transfer_point(&p2[j], m, cam)).norm_squared())
        .sum()
}

/// Residual `H(m) p2 - p1` and its Jacobian with respect to `(phi, rho)`.
pub(crate) fn residual_and_jacobian(
    p1: &Pixel,
    p2: &Pixel,
    m: &MotionParams,
    cam: &CameraModel,
) -> (Vector2<f64>, Matrix2<f64>) {
    let (s2, c2) = (2.0 * m.phi).sin_cos();
    let (s1, c1) = m.phi.sin_cos();
    let k = cam.scale();
    let a = p2.x - cam.principal_u;
    let b = cam.principal_v - p2.y;
    let t = transfer_point(p2, m, cam);
    let r = Vector2::new(t.x - p1.x, t.y - p1.y);
    // x1 = a cos2 + b sin2 + k rho sin,  y1 = a sin2 - b cos2 - k rho cos
    let j = Matrix2::new(
        -2.0 * a * s2 + 2.0 * b * c2 + k * m.rho * c1,
        k * s1,
        2.0 * a * c2 + 2.0 * b * s2 + k * m.rho * s1,
        -k * c1,
    );
    (r, j)
}

fn clamp_motion(phi: f64, rho: f64) -> MotionParams {
    MotionParams {
        phi: phi.clamp(-FRAC_PI_2, FRAC_PI_2),
        rho: rho.max(0.0),
    }
}

/// Levenberg-Marquardt on the two motion parameters, started at `init`.
///
/// Steps are only accepted when they lower the cost, so the returned cost
/// never exceeds the cost at `init`.
pub fn refine(
    pairs: &[(usize, usize)],
    init: &MotionParams,
    cam: &CameraModel,
    p1: &[Pixel],
    p2: &[Pixel],
) -> Refinement {
    let initial_cost = transfer_cost(pairs, init, cam, p1, p2);
    if pairs.is_empty() {
        log::warn!("refinement requested without correspondences");
        return Refinement {
            motion: *init,
            initial_cost,
            final_cost: initial_cost,
            iterations: 0,
            status: RefineStatus::NoCorrespondences,
        };
    }

    let mut m = *init;
    let mut cost = initial_cost;
    let mut lambda = 1e-3;
    let mut status = RefineStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for &(i, j) in pairs {
            let (r, jac) = residual_and_jacobian(&p1[i], &p2[j], &m, cam);
            jtj += jac.transpose() * jac;
            jtr += jac.transpose() * r;
        }
        if jtr.amax() <= 1e-14 * (1.0 + cost) || cost == 0.0 {
            status = RefineStatus::Converged;
            break;
        }

        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            damped[(0, 0)] += lambda * jtj[(0, 0)].max(1e-12);
            damped[(1, 1)] += lambda * jtj[(1, 1)].max(1e-12);
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = clamp_motion(m.phi + step[0], m.rho + step[1]);
            let candidate_cost = transfer_cost(pairs, &candidate, cam, p1, p2);
            if candidate_cost < cost {
                let small_step = (candidate.phi - m.phi).abs() <= 1e-15 * (1.0 + m.phi.abs())
                    && (candidate.rho - m.rho).abs() <= 1e-15 * (1.0 + m.rho.abs());
                let small_gain = cost - candidate_cost <= 1e-15 * cost;
                m = candidate;
                cost = candidate_cost;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if small_step || small_gain {
                    status = RefineStatus::Converged;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at machine precision
            status = RefineStatus::Converged;
            break;
        }
        if status == RefineStatus::Converged {
            break;
        }
    }

    Refinement {
        motion: m,
        initial_cost,
        final_cost: cost,
        iterations,
        status,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(rng: &mut ChaCha8Rng, truth: &MotionParams, n: usize, noise: f64) -> (Vec<Pixel>, Vec<Pixel>, Vec<(usize, usize)>) {
        let cam = CameraModel::vga();
        let p2: Vec<Pixel> = (0..n)
            .map(|_| Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
            .collect();
        let p1: Vec<Pixel> = p2
            .iter()
            .map(|p| {
                let t = transfer_point(p, truth, &cam);
                Pixel::new(t.x + rng.random_range(-noise..=noise), t.y + rng.random_range(-noise..=noise))
            })
            .collect();
        let pairs = (0..n).map(|i| (i, i)).collect();
        (p1, p2, pairs)
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let cam = CameraModel::vga();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let m = MotionParams::new(rng.random_range(-0.5..0.5), rng.random_range(0.0..0.1)).unwrap();
            let p2 = Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let p1 = Pixel::new(300.0, 200.0);
            let (_, jac) = residual_and_jacobian(&p1, &p2, &m, &cam);
            let h = 1e-7;
            for (col, (dphi, drho)) in [(h, 0.0), (0.0, h)].into_iter().enumerate() {
                let plus = transfer_point(&p2, &MotionParams { phi: m.phi + dphi, rho: m.rho + drho }, &cam);
                let minus = transfer_point(&p2, &MotionParams { phi: m.phi - dphi, rho: m.rho - drho }, &cam);
                let numeric = (plus - minus) / (2.0 * h);
                for row in 0..2 {
                    let analytic = jac[(row, col)];
                    let scale = analytic.abs().max(numeric[row].abs()).max(1.0);
                    assert!(
                        (analytic - numeric[row]).abs() / scale < 1e-6,
                        "row {row} col {col}: {analytic} vs {}",
                        numeric[row]
                    );
                }
            }
        }
    }

    #[test]
    fn recovers_truth_from_noise_free_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cam = CameraModel::vga();
        let truth = MotionParams::new(0.031, 0.0174).unwrap();
        let (p1, p2, pairs) = scene(&mut rng, &truth, 25, 0.0);
        let init = MotionParams::new(truth.phi + 0.01, truth.rho + 0.005).unwrap();
        let r = refine(&pairs, &init, &cam, &p1, &p2);
        assert!((r.motion.phi - truth.phi).abs() < 1e-8);
        assert!((r.motion.rho - truth.rho).abs() < 1e-8);
        assert_eq!(r.status, RefineStatus::Converged);
    }

    #[test]
    fn single_correspondence_reaches_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cam = CameraModel::vga();
        let truth = MotionParams::new(-0.02, 0.03).unwrap();
        let (p1, p2, _) = scene(&mut rng, &truth, 1, 0.0);
        let r = refine(&[(0, 0)], &MotionParams::new(-0.015, 0.028).unwrap(), &cam, &p1, &p2);
        assert!(r.final_cost < 1e-16, "cost {}", r.final_cost);
    }

    #[test]
    fn empty_pairs_return_init() {
        let cam = CameraModel::vga();
        let init = MotionParams::new(0.1, 0.01).unwrap();
        let r = refine(&[], &init, &cam, &[], &[]);
        assert_eq!(r.motion, init);
        assert_eq!(r.status, RefineStatus::NoCorrespondences);
    }

    #[test]
    fn cost_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cam = CameraModel::vga();
        for _ in 0..200 {
            let truth = MotionParams::new(rng.random_range(-0.3..0.3), rng.random_range(0.0..0.08)).unwrap();
            let n = rng.random_range(1..30);
            let (p1, p2, pairs) = scene(&mut rng, &truth, n, 2.5);
            let init = MotionParams::new(
                (truth.phi + rng.random_range(-0.05..0.05)).clamp(-1.5, 1.5),
                (truth.rho + rng.random_range(-0.01..0.01)).max(0.0),
            )
            .unwrap();
            let r = refine(&pairs, &init, &cam, &p1, &p2);
            assert!(r.final_cost <= r.initial_cost);
            assert!(r.motion.rho >= 0.0);
        }
    }
}
