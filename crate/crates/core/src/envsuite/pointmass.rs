//! A damped point mass in a square arena.

use rand::Rng as _;

use super::Variant;
use crate::rng::stream;

pub const DT: f64 = 0.05;
pub const V_MAX: f64 = 0.5;
pub const ARENA_HALF_WIDTH: f64 = 0.3;
/// Linear velocity damping, in 1/s. Acceleration is `action - DAMPING * v`.
pub const DAMPING: f64 = 18.0;
const START_PERTURBATION: f64 = 0.25;

pub(super) fn obs_bounds() -> (Vec<f64>, Vec<f64>) {
    let a = ARENA_HALF_WIDTH;
    (vec![-a, -a, -V_MAX, -V_MAX], vec![a, a, V_MAX, V_MAX])
}

pub(super) fn reset(variant: Variant, seed: u64) -> Vec<f64> {
    match variant {
        Variant::Explore => vec![0.0; 4],
        Variant::Standard => {
            let mut rng = stream(seed, "pointmass-reset", 0);
            let x = rng.random_range(-START_PERTURBATION..=START_PERTURBATION);
            let y = rng.random_range(-START_PERTURBATION..=START_PERTURBATION);
            vec![x, y, 0.0, 0.0]
        }
    }
}

/// Semi-implicit Euler: velocity first, then position with the new velocity.
/// A wall contact clamps the position and zeroes that velocity component.
pub(super) fn step(obs: &[f64], action: &[f64]) -> Vec<f64> {
    let mut next = vec![0.0; 4];
    for axis in 0..2 {
        let (x, v) = (obs[axis], obs[axis + 2]);
        let mut v_new = (v + (action[axis] - DAMPING * v) * DT).clamp(-V_MAX, V_MAX);
        let mut x_new = x + v_new * DT;
        if x_new.abs() > ARENA_HALF_WIDTH {
            x_new = x_new.clamp(-ARENA_HALF_WIDTH, ARENA_HALF_WIDTH);
            v_new = 0.0;
        }
        next[axis] = x_new;
        next[axis + 2] = v_new;
    }
    next
}
