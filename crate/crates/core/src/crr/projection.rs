use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evenly spaced return atoms on `[v_min, v_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub v_min: f64,
    pub v_max: f64,
    pub n_atoms: usize,
}

impl Support {
    pub fn new(v_min: f64, v_max: f64, n_atoms: usize) -> Result<Self> {
        if n_atoms < 2 || !(v_max > v_min) || !v_min.is_finite() || !v_max.is_finite() {
            return Err(Error::config(format!(
                "atom support needs n >= 2 and finite v_min < v_max (got {n_atoms}, [{v_min}, {v_max}])"
            )));
        }
        Ok(Self { v_min, v_max, n_atoms })
    }

    pub fn delta(&self) -> f64 {
        (self.v_max - self.v_min) / (self.n_atoms - 1) as f64
    }

    pub fn atoms(&self) -> Vec<f64> {
        let dz = self.delta();
        (0..self.n_atoms)
            .map(|j| if j + 1 == self.n_atoms { self.v_max } else { self.v_min + j as f64 * dz })
            .collect()
    }
}

/// Projects the distribution placing `probs[j]` on `r + gamma * atoms[j]`
/// back onto `atoms`, splitting each mass linearly between its two
/// neighbours and clamping at the edges.
pub fn categorical_project(atoms: &[f64], r: f64, gamma: f64, probs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; atoms.len()];
    project_into(atoms, r, gamma, probs, &mut out);
    out
}

/// Allocation-free form of [`categorical_project`]; `out` is overwritten.
pub fn project_into(atoms: &[f64], r: f64, gamma: f64, probs: &[f64], out: &mut [f64]) {
    let n = atoms.len();
    let (v_min, v_max) = (atoms[0], atoms[n - 1]);
    let dz = (v_max - v_min) / (n - 1) as f64;
    out.iter_mut().for_each(|o| *o = 0.0);
    for (z, &p) in atoms.iter().zip(probs) {
        let tz = (r + gamma * z).clamp(v_min, v_max);
        let b = ((tz - v_min) / dz).clamp(0.0, (n - 1) as f64);
        let l = b.floor() as usize;
        let u = b.ceil() as usize;
        if l == u {
            out[l] += p;
        } else {
            out[l] += p * (u as f64 - b);
            out[u] += p * (b - l as f64);
        }
    }
}
