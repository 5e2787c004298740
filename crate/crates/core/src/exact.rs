//! Exact law of the urn after `n` draws.
//!
//! After `m` draws with `k` of them type 1 the composition is fixed:
//! `y1 = y1_0 + k H11 + (m - k) H12` and `t = t_0 + k H1 + (m - k) H2`.
//! The forward recursion over `(m, k)` is therefore exact in `O(n^2)` time
//! and `O(n)` memory.

use serde::{Deserialize, Serialize};

use crate::error::{check_cap, Result};
use crate::model::{type1_probability, UrnConfig, UrnState};
use crate::stats::compensated_sum;

pub const DEFAULT_EXACT_CAP: u64 = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Number of type-1 draws.
    pub k: u64,
    pub z: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactDistribution {
    pub n: u64,
    pub support: Vec<Atom>,
}

impl ExactDistribution {
    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.support.iter().map(|a| a.probability))
    }

    /// `P(|Z_n - y_star| > eps)`; atoms at exactly `eps` are excluded.
    pub fn tail(&self, y_star: f64, eps: f64) -> f64 {
        compensated_sum(
            self.support
                .iter()
                .filter(|a| (a.z - y_star).abs() > eps)
                .map(|a| a.probability),
        )
    }

    /// `P(Z_n - y_star > eps)`
    pub fn upper_tail(&self, y_star: f64, eps: f64) -> f64 {
        compensated_sum(
            self.support
                .iter()
                .filter(|a| a.z - y_star > eps)
                .map(|a| a.probability),
        )
    }

    /// `P(Z_n - y_star < -eps)`
    pub fn lower_tail(&self, y_star: f64, eps: f64) -> f64 {
        compensated_sum(
            self.support
                .iter()
                .filter(|a| a.z - y_star < -eps)
                .map(|a| a.probability),
        )
    }

    pub fn moments(&self) -> (f64, f64) {
        let mean = compensated_sum(self.support.iter().map(|a| a.probability * a.z));
        let var = compensated_sum(
            self.support
                .iter()
                .map(|a| a.probability * (a.z - mean) * (a.z - mean)),
        );
        (mean, var.max(0.0))
    }

    pub fn max_distance(&self, y_star: f64) -> f64 {
        self.support
            .iter()
            .map(|a| (a.z - y_star).abs())
            .fold(0.0, f64::max)
    }
}

/// Composition after `m` draws of which `k` were type 1.
pub fn state_at(config: &UrnConfig, m: u64, k: u64) -> UrnState {
    let h = &config.matrix;
    let (kf, rest) = (k as f64, (m - k) as f64);
    UrnState::new(
        m,
        config.y0.0 + kf * h.h11 + rest * h.h12,
        config.y0.1 + kf * h.h21 + rest * h.h22,
    )
}

pub fn dp_distribution(config: &UrnConfig, n: u64) -> Result<ExactDistribution> {
    dp_distribution_capped(config, n, DEFAULT_EXACT_CAP)
}

pub fn dp_distribution_capped(config: &UrnConfig, n: u64, cap: u64) -> Result<ExactDistribution> {
    let mut rows = dp_rows(config, &[n], cap)?;
    Ok(rows.pop().expect("one row requested"))
}

/// Distributions at several step counts from a single forward pass.
/// Results follow the order of `steps`.
pub fn dp_rows(config: &UrnConfig, steps: &[u64], cap: u64) -> Result<Vec<ExactDistribution>> {
    let max_n = steps.iter().copied().max().unwrap_or(0);
    check_cap(max_n, cap)?;
    crate::model::check_count_growth(config, max_n)?;

    let mut wanted: Vec<(u64, usize)> = steps.iter().copied().zip(0..).collect();
    wanted.sort_unstable();
    let mut out: Vec<Option<ExactDistribution>> = vec![None; steps.len()];
    let mut next_wanted = 0;

    let mut row = vec![1.0_f64];
    let mut buf = Vec::with_capacity(max_n as usize + 1);
    for m in 0..=max_n {
        while next_wanted < wanted.len() && wanted[next_wanted].0 == m {
            let support = row
                .iter()
                .enumerate()
                .map(|(k, &p)| Atom {
                    k: k as u64,
                    z: state_at(config, m, k as u64).z,
                    probability: p,
                })
                .collect();
            out[wanted[next_wanted].1] = Some(ExactDistribution { n: m, support });
            next_wanted += 1;
        }
        if m == max_n {
            break;
        }
        buf.clear();
        buf.resize(row.len() + 1, 0.0);
        for (k, &p) in row.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let p1 = type1_probability(state_at(config, m, k as u64).z, &config.skew);
            buf[k + 1] += p * p1;
            buf[k] += p * (1.0 - p1);
        }
        std::mem::swap(&mut row, &mut buf);
    }
    Ok(out
        .into_iter()
        .map(|d| d.expect("every step filled"))
        .collect())
}

pub fn exact_tail_probability(config: &UrnConfig, n: u64, eps: f64, y_star: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(crate::error::UrnError::Parameter(format!(
            "eps = {eps} must be positive"
        )));
    }
    Ok(dp_distribution(config, n)?.tail(y_star, eps))
}

/// Mean and variance of `Z_n`.
pub fn exact_moments(config: &UrnConfig, n: u64) -> Result<(f64, f64)> {
    Ok(dp_distribution(config, n)?.moments())
}
