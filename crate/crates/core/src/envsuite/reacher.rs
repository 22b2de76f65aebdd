//! A planar two-link arm driven by joint torques.
//!
//! Observation: `(theta1, theta2, omega1, omega2, tip_x, tip_y)`.

use std::f64::consts::PI;

use rand::Rng as _;

use super::pointmass::DT;
use super::Variant;
use crate::rng::stream;

pub const LINK_LENGTH: f64 = 0.12;
pub const THETA2_LIMIT: f64 = 2.8;
const GAIN: f64 = 5.0;
const DAMPING: f64 = 10.0;
const OMEGA_MAX: f64 = 2.0;
const REACH: f64 = 2.0 * LINK_LENGTH;

pub fn fingertip(theta1: f64, theta2: f64) -> [f64; 2] {
    let (s1, c1) = theta1.sin_cos();
    let (s12, c12) = (theta1 + theta2).sin_cos();
    [LINK_LENGTH * (c1 + c12), LINK_LENGTH * (s1 + s12)]
}

pub(super) fn obs_bounds() -> (Vec<f64>, Vec<f64>) {
    (
        vec![-PI, -THETA2_LIMIT, -OMEGA_MAX, -OMEGA_MAX, -REACH, -REACH],
        vec![PI, THETA2_LIMIT, OMEGA_MAX, OMEGA_MAX, REACH, REACH],
    )
}

fn observe(theta1: f64, theta2: f64, omega1: f64, omega2: f64) -> Vec<f64> {
    let [x, y] = fingertip(theta1, theta2);
    vec![theta1, theta2, omega1, omega2, x.clamp(-REACH, REACH), y.clamp(-REACH, REACH)]
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can land exactly on the upper edge after rounding.
    if w >= PI { -PI } else { w }
}

pub(super) fn reset(variant: Variant, seed: u64) -> Vec<f64> {
    match variant {
        Variant::Explore => observe(0.0, 0.0, 0.0, 0.0),
        Variant::Standard => {
            let mut rng = stream(seed, "reacher-reset", 0);
            let t1 = rng.random_range(-PI..PI);
            let t2 = rng.random_range(-THETA2_LIMIT..=THETA2_LIMIT);
            observe(t1, t2, 0.0, 0.0)
        }
    }
}

pub(super) fn step(obs: &[f64], action: &[f64]) -> Vec<f64> {
    let (t1, t2, w1, w2) = (obs[0], obs[1], obs[2], obs[3]);
    let w1n = (w1 + (GAIN * action[0] - DAMPING * w1) * DT).clamp(-OMEGA_MAX, OMEGA_MAX);
    let mut w2n = (w2 + (GAIN * action[1] - DAMPING * w2) * DT).clamp(-OMEGA_MAX, OMEGA_MAX);
    let t1n = wrap_angle(t1 + w1n * DT);
    let mut t2n = t2 + w2n * DT;
    if t2n.abs() > THETA2_LIMIT {
        t2n = t2n.clamp(-THETA2_LIMIT, THETA2_LIMIT);
        w2n = 0.0;
    }
    observe(t1n, t2n, w1n, w2n)
}
