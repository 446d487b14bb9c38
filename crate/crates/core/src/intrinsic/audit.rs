use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};

/// Exact joint distribution `p(o, τ, z, a)`, row-major over `[o, τ, z, a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularJoint {
    pub dims: [usize; 4],
    pub probs: Vec<f64>,
}

impl TabularJoint {
    pub fn new(dims: [usize; 4], probs: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n == 0 || probs.len() != n {
            return Err(Error::Argument(alloc::format!(
                "table of {} entries does not match dims {dims:?}",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Argument("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(alloc::format!("table sums to {total}, not 1")));
        }
        Ok(Self { dims, probs })
    }

    fn index(&self, o: usize, t: usize, z: usize, a: usize) -> usize {
        let [_, nt, nz, na] = self.dims;
        ((o * nt + t) * nz + z) * na + a
    }

    /// Marginal over the variables flagged in `keep` (order o, τ, z, a),
    /// returned as a full-size table so lookups share one index.
    fn marginal(&self, keep: [bool; 4]) -> Vec<f64> {
        let [no, nt, nz, na] = self.dims;
        let mut m = vec![0.0; self.probs.len()];
        let proj = |o: usize, t: usize, z: usize, a: usize| {
            let k = |flag: bool, v: usize| if flag { v } else { 0 };
            self.index(k(keep[0], o), k(keep[1], t), k(keep[2], z), k(keep[3], a))
        };
        for o in 0..no {
            for t in 0..nt {
                for z in 0..nz {
                    for a in 0..na {
                        m[proj(o, t, z, a)] += self.probs[self.index(o, t, z, a)];
                    }
                }
            }
        }
        // broadcast back over the summed-out axes
        let mut out = vec![0.0; self.probs.len()];
        for o in 0..no {
            for t in 0..nt {
                for z in 0..nz {
                    for a in 0..na {
                        out[self.index(o, t, z, a)] = m[proj(o, t, z, a)];
                    }
                }
            }
        }
        out
    }
}

/// Both sides of the intrinsic-reward lower bound, computed exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct MiAudit {
    pub i_tau_z: f64,
    pub i_o_tau_given_z: f64,
    pub i_a_tau_given_o: f64,
    pub h_a_given_o_tau: f64,
    /// Sum of the four terms above.
    pub lhs: f64,
    /// `E log p(τ | o, z) − E log p(a | o)`.
    pub rhs: f64,
    pub h_tau: f64,
}

impl MiAudit {
    pub fn slack(&self) -> f64 {
        self.lhs - self.rhs
    }

    /// `lhs ≥ rhs` up to floating-point rounding.
    pub fn holds(&self) -> bool {
        self.slack() >= -1e-12 * (1.0 + self.lhs.abs())
    }
}

pub fn mi_bound_audit(joint: &TabularJoint) -> Result<MiAudit> {
    let j = TabularJoint::new(joint.dims, joint.probs.clone())?;
    let m = |o, t, z, a| j.marginal([o, t, z, a]);
    let (p_t, p_z, p_tz) = (m(false, true, false, false), m(false, false, true, false), m(false, true, true, false));
    let (p_otz, p_oz) = (m(true, true, true, false), m(true, false, true, false));
    let (p_o, p_ot, p_oa, p_ota) = (
        m(true, false, false, false),
        m(true, true, false, false),
        m(true, false, false, true),
        m(true, true, false, true),
    );
    // Each table entry carries the full joint mass; expectations over a
    // marginal are taken by summing the joint against log-ratios of marginals.
    let mut i_tau_z = 0.0;
    let mut i_o_tau_given_z = 0.0;
    let mut i_a_tau_given_o = 0.0;
    let mut h_a_given_o_tau = 0.0;
    let mut e_log_tau = 0.0;
    let mut e_log_a = 0.0;
    let mut h_tau = 0.0;
    for (i, &p) in j.probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let ln = Float::ln;
        i_tau_z += p * ln(p_tz[i] / (p_t[i] * p_z[i]));
        i_o_tau_given_z += p * ln(p_otz[i] * p_z[i] / (p_oz[i] * p_tz[i]));
        i_a_tau_given_o += p * ln(p_ota[i] * p_o[i] / (p_oa[i] * p_ot[i]));
        h_a_given_o_tau -= p * ln(p_ota[i] / p_ot[i]);
        e_log_tau += p * ln(p_otz[i] / p_oz[i]);
        e_log_a += p * ln(p_oa[i] / p_o[i]);
        h_tau -= p * ln(p_t[i]);
    }
    let lhs = i_tau_z + i_o_tau_given_z + i_a_tau_given_o + h_a_given_o_tau;
    Ok(MiAudit {
        i_tau_z,
        i_o_tau_given_z,
        i_a_tau_given_o,
        h_a_given_o_tau,
        lhs,
        rhs: e_log_tau - e_log_a,
        h_tau,
    })
}
