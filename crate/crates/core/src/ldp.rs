//! Monte Carlo tail estimation, exponential rate fits, the explicit
//! martingale-sum bound, and simulation audits of the one-step bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_cap, Result, UrnError};
use crate::model::{
    advance, conditional_increment_stats, simulate_with, CheckStatus, ReplacementMatrix, UrnConfig,
};
use crate::rng::stream_rng;
use crate::stats::{clopper_pearson_99, normal_half_width_99, ols};

/// Total simulated steps (`trials * n`) allowed in one estimate.
pub const DEFAULT_WORK_CAP: u64 = 50_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    MonteCarlo,
    Exact,
}

impl Provenance {
    pub fn label(&self) -> &'static str {
        match self {
            Provenance::MonteCarlo => "monte_carlo",
            Provenance::Exact => "exact",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub n: u64,
    pub eps: f64,
    pub trials: u64,
    pub hits: u64,
    pub p_hat: f64,
    /// 99% half-width. Zero-hit Monte Carlo estimates carry the rule-of-three
    /// bound `3 / trials` instead of a degenerate zero.
    pub ci_half_width: f64,
    pub provenance: Provenance,
}

impl TailEstimate {
    pub fn monte_carlo(n: u64, eps: f64, trials: u64, hits: u64) -> Self {
        let p_hat = if trials == 0 {
            0.0
        } else {
            hits as f64 / trials as f64
        };
        let ci_half_width = if hits == 0 && trials > 0 {
            3.0 / trials as f64
        } else {
            normal_half_width_99(p_hat, trials)
        };
        Self {
            n,
            eps,
            trials,
            hits,
            p_hat,
            ci_half_width,
            provenance: Provenance::MonteCarlo,
        }
    }

    pub fn exact(n: u64, eps: f64, p: f64) -> Self {
        Self {
            n,
            eps,
            trials: 0,
            hits: 0,
            p_hat: p,
            ci_half_width: 0.0,
            provenance: Provenance::Exact,
        }
    }

    /// Clopper–Pearson 99% interval, meant for small hit counts.
    pub fn exact_interval(&self) -> (f64, f64) {
        match self.provenance {
            Provenance::Exact => (self.p_hat, self.p_hat),
            Provenance::MonteCarlo => clopper_pearson_99(self.hits, self.trials),
        }
    }

    /// Replaces the normal half-width with the wider side of the exact
    /// interval when fewer than 10 hits were seen.
    pub fn with_exact_interval_for_rare(mut self) -> Self {
        if self.provenance == Provenance::MonteCarlo && self.hits < 10 && self.trials > 0 {
            let (lo, hi) = self.exact_interval();
            self.ci_half_width = (self.p_hat - lo).max(hi - self.p_hat);
        }
        self
    }

    /// Binomial standard error at a reference probability.
    pub fn standard_error(p: f64, trials: u64) -> f64 {
        (p * (1.0 - p) / trials as f64).sqrt()
    }
}

fn check_trials(trials: u64, eps: &[f64]) -> Result<()> {
    if trials == 0 {
        return Err(UrnError::Parameter("trials must be at least 1".into()));
    }
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0)) {
        return Err(UrnError::Parameter(format!("eps = {e} must be positive")));
    }
    Ok(())
}

/// `P(|Z_n - y_star| > eps)` from `trials` independent paths; trial `i`
/// uses stream `i` of `seed`.
pub fn mc_tail_estimate(
    config: &UrnConfig,
    y_star: f64,
    n: u64,
    eps: f64,
    trials: u64,
    seed: u64,
) -> Result<TailEstimate> {
    let mut v = mc_tail_grid(config, y_star, &[n], &[eps], trials, seed, DEFAULT_WORK_CAP)?;
    Ok(v.pop().expect("one estimate"))
}

/// Every `(n, eps)` pair from one set of paths run to the largest `n`.
/// Output is ordered by `n_grid` then `eps`.
pub fn mc_tail_grid(
    config: &UrnConfig,
    y_star: f64,
    n_grid: &[u64],
    eps: &[f64],
    trials: u64,
    seed: u64,
    work_cap: u64,
) -> Result<Vec<TailEstimate>> {
    check_trials(trials, eps)?;
    let max_n = n_grid.iter().copied().max().unwrap_or(0);
    check_cap(trials.saturating_mul(max_n), work_cap)?;
    crate::model::check_count_growth(config, max_n)?;

    let mut order: Vec<usize> = (0..n_grid.len()).collect();
    order.sort_by_key(|&i| n_grid[i]);
    let cells = n_grid.len() * eps.len();

    let hits = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream_rng(seed, trial);
            let mut state = config.initial_state();
            let mut local = vec![0u64; cells];
            for &gi in &order {
                while state.n < n_grid[gi] {
                    state = advance(&state, config, &mut rng);
                }
                let d = (state.z - y_star).abs();
                for (ei, e) in eps.iter().enumerate() {
                    if d > *e {
                        local[gi * eps.len() + ei] += 1;
                    }
                }
            }
            local
        })
        .reduce(
            || vec![0u64; cells],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    let mut out = Vec::with_capacity(cells);
    for (gi, &n) in n_grid.iter().enumerate() {
        for (ei, &e) in eps.iter().enumerate() {
            out.push(TailEstimate::monte_carlo(
                n,
                e,
                trials,
                hits[gi * eps.len() + ei],
            ));
        }
    }
    Ok(out)
}

/// Least-squares fit of `log p = log C - a n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub points: Vec<(f64, f64)>,
    pub a_hat: f64,
    pub log_c_hat: f64,
    pub r_squared: f64,
    pub points_used: usize,
    /// Estimates dropped because `p_hat` was zero.
    pub points_zero: usize,
}

pub fn rate_fit(estimates: &[TailEstimate]) -> Result<RateFit> {
    let points: Vec<(f64, f64)> = estimates
        .iter()
        .filter(|e| e.p_hat > 0.0)
        .map(|e| (e.n as f64, e.p_hat))
        .collect();
    let points_zero = estimates.len() - points.len();
    if points.len() < 3 {
        return Err(UrnError::InsufficientPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let fit = ols(&xs, &ys).ok_or(UrnError::InsufficientPoints { needed: 3, got: 1 })?;
    Ok(RateFit {
        a_hat: -fit.slope,
        log_c_hat: fit.intercept,
        r_squared: fit.r_squared,
        points_used: points.len(),
        points_zero,
        points,
    })
}

/// Inputs of the explicit bound on `P(|sum_{i=k}^n dM_{i+1} / T_{i+1}| >= eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma31Params {
    pub beta: f64,
    pub k: u64,
    pub n: u64,
    pub eps: f64,
    /// Constant bounding `|E[dM_{n+1} / T_{n+1} | F_n]| T_n^2`.
    pub big_k: f64,
    pub matrix: ReplacementMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma31Evaluation {
    pub bound: f64,
    /// `sum_{i=k}^n 1 / i^2`
    pub s: f64,
    /// `eps - K S / B^2`
    pub margin: f64,
    /// Chernoff parameter at the optimum.
    pub t_opt: f64,
    /// `t A / (B k) <= log beta`, the range where the exponential
    /// moment inequality applies.
    pub t_in_range: bool,
    /// Largest eps accepted for this `beta`.
    pub eps_max: f64,
}

impl Lemma31Params {
    /// `A = 4 (H1 + H2)`
    pub fn a(&self) -> f64 {
        4.0 * (self.matrix.h1() + self.matrix.h2())
    }

    /// `B = 2 min(H1, H2)`
    pub fn b(&self) -> f64 {
        2.0 * self.matrix.min_column_sum()
    }

    pub fn eps_max(&self) -> f64 {
        let hs = self.matrix.h1() + self.matrix.h2();
        4.0 * self.beta * hs * hs / self.matrix.min_column_sum() * self.beta.ln()
    }

    pub fn evaluate(&self) -> Result<Lemma31Evaluation> {
        if !(self.beta > 1.0) {
            return Err(UrnError::Parameter(format!(
                "beta = {} must exceed 1",
                self.beta
            )));
        }
        if self.k == 0 || self.k > self.n {
            return Err(UrnError::Parameter(format!(
                "need 0 < k <= n, got k = {}, n = {}",
                self.k, self.n
            )));
        }
        if !(self.big_k >= 0.0) || !self.big_k.is_finite() {
            return Err(UrnError::Parameter(format!(
                "K = {} must be finite and >= 0",
                self.big_k
            )));
        }
        let eps_max = self.eps_max();
        if !(self.eps > 0.0) || self.eps > eps_max {
            return Err(UrnError::Parameter(format!(
                "eps = {} must lie in (0, {eps_max}]",
                self.eps
            )));
        }
        let s: f64 = (self.k..=self.n).map(|i| 1.0 / (i as f64 * i as f64)).sum();
        let m = self.matrix.min_column_sum();
        let hs = self.matrix.h1() + self.matrix.h2();
        let margin = self.eps - self.big_k / (4.0 * m * m) * s;
        let (a, b) = (self.a(), self.b());
        if margin <= 0.0 {
            return Ok(Lemma31Evaluation {
                bound: 2.0,
                s,
                margin,
                t_opt: 0.0,
                t_in_range: false,
                eps_max,
            });
        }
        let exponent = margin * margin / (8.0 * self.beta * hs * hs / (m * m) * s);
        let t_opt = margin / (self.beta * a * a / (b * b) * s);
        Ok(Lemma31Evaluation {
            bound: (2.0 * (-exponent).exp()).min(2.0),
            s,
            margin,
            t_opt,
            t_in_range: t_opt * a / (b * self.k as f64) <= self.beta.ln(),
            eps_max,
        })
    }
}

/// The bound value; 2 (trivial) when `eps` does not exceed the drift
/// correction `K S / B^2`.
pub fn lemma31_bound(params: &Lemma31Params) -> Result<f64> {
    Ok(params.evaluate()?.bound)
}

/// `K` bound from the two-outcome table: with `p` the type-1 probability,
/// `E[dM / T_{n+1} | F_n] = p (1 - p) (L1 - L2) (H2 - H1) / ((t + H1)(t + H2))`,
/// and `|L1 - L2|` is largest at `z = 0` or `z = 1`.
pub fn b6_constant_ceiling(matrix: &ReplacementMatrix) -> f64 {
    let spread = (matrix.h11 - matrix.h12)
        .abs()
        .max((matrix.h22 - matrix.h21).abs());
    0.25 * (matrix.h2() - matrix.h1()).abs() * spread
}

/// Frequency of `|sum_{i=k}^n dM_{i+1} / T_{i+1}| >= eps` over `paths`
/// simulated paths of `n + 1` draws.
pub fn martingale_sum_exceedance(
    config: &UrnConfig,
    k: u64,
    n: u64,
    eps: f64,
    paths: u64,
    seed: u64,
) -> Result<TailEstimate> {
    check_trials(paths, &[eps])?;
    if k > n {
        return Err(UrnError::Parameter(format!(
            "need k <= n, got k = {k}, n = {n}"
        )));
    }
    check_cap(paths.saturating_mul(n + 1), DEFAULT_WORK_CAP)?;
    let hits: u64 = (0..paths)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream_rng(seed, trial);
            let mut state = config.initial_state();
            let mut sum = 0.0;
            for i in 0..=n {
                let (next, rec) = crate::model::urn_step(&state, config, &mut rng);
                if i >= k {
                    sum += rec.delta_m * rec.gamma;
                }
                state = next;
            }
            u64::from(sum.abs() >= eps)
        })
        .sum();
    Ok(TailEstimate::monte_carlo(n, eps, paths, hits))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub id: String,
    pub description: String,
    pub status: CheckStatus,
    pub worst_value: f64,
    pub worst_step: Option<u64>,
    pub evaluated: u64,
    pub violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: u64,
    pub paths: u64,
    pub seed: u64,
    pub y_star: f64,
    pub eps_inclusion: f64,
    pub checks: Vec<BoundCheck>,
    /// Supremum of `|E[dM / T_{n+1} | F_n]| T_n^2` over every visited state.
    pub k_hat: f64,
    pub k_hat_per_path: Vec<f64>,
    pub k_ceiling: f64,
}

impl BoundReport {
    pub fn get(&self, id: &str) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    /// No check failed; informational flags are allowed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }
}

#[derive(Debug, Clone, Copy)]
struct Tally {
    worst: f64,
    worst_step: Option<u64>,
    evaluated: u64,
    violations: u64,
}

impl Tally {
    fn new() -> Self {
        Self {
            worst: f64::NEG_INFINITY,
            worst_step: None,
            evaluated: 0,
            violations: 0,
        }
    }

    fn observe(&mut self, value: f64, step: u64, ok: bool) {
        self.evaluated += 1;
        if !ok {
            self.violations += 1;
        }
        if value > self.worst {
            self.worst = value;
            self.worst_step = Some(step);
        }
    }

    fn merge(&mut self, other: &Tally) {
        self.evaluated += other.evaluated;
        self.violations += other.violations;
        if other.worst > self.worst {
            self.worst = other.worst;
            self.worst_step = other.worst_step;
        }
    }
}

const TALLIES: usize = 8;
const DELTA_M: usize = 0;
const DRIFT: usize = 1;
const ENVELOPE: usize = 2;
const LITERAL_B1: usize = 3;
const STEP: usize = 4;
const UPPER_INCLUSION: usize = 5;
const LOWER_INCLUSION: usize = 6;
const K_HAT: usize = 7;

/// Audits the one-step bounds along `paths` simulated paths of `n` draws.
///
/// `y_star` and `eps_inclusion` parametrise the one-step event inclusions.
pub fn bound_verification(
    config: &UrnConfig,
    n: u64,
    paths: u64,
    seed: u64,
    y_star: f64,
    eps_inclusion: f64,
) -> Result<BoundReport> {
    check_trials(paths, &[eps_inclusion])?;
    check_cap(paths.saturating_mul(n), DEFAULT_WORK_CAP)?;
    let matrix = config.matrix;
    let (h1, h2) = (matrix.h1(), matrix.h2());
    let (hmin, hmax) = (matrix.min_column_sum(), matrix.max_column_sum());
    let hs = h1 + h2;
    let t0 = config.t0();
    let eps = eps_inclusion;
    let upper_from = 12.0 * hs / (eps * hmin);
    let lower_from = 12.0 * hs / (eps * hmax);
    let envelope_slack = if config.is_integral() { 0.0 } else { 1e-9 };

    let per_path: Vec<[Tally; TALLIES]> = (0..paths)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream_rng(seed, trial);
            let path =
                simulate_with(config, n, seed, u64::MAX, &mut rng).expect("cap checked by caller");
            let mut t = [Tally::new(); TALLIES];
            for (i, (w, rec)) in path.states.windows(2).zip(&path.steps).enumerate() {
                let (cur, next) = (&w[0], &w[1]);
                let k = i as u64;

                let dm = rec.delta_m.abs();
                t[DELTA_M].observe(dm, k, dm <= 4.0 * hs);

                let h = crate::drift::drift_value(&matrix, &config.skew, cur.z).abs();
                t[DRIFT].observe(h, k, h <= 2.0 * hs);

                let stats = conditional_increment_stats(cur, config);
                let kv = stats.cond_mean_dm_over_t.abs() * cur.t * cur.t;
                t[K_HAT].observe(kv, k, kv.is_finite());

                let m = (k + 1) as f64;
                let grown = next.t - t0;
                let ok = grown >= m * hmin - envelope_slack && grown <= m * hmax + envelope_slack;
                let ratio = (grown / m - hmin).min(hmax - grown / m);
                t[ENVELOPE].observe(-ratio, k + 1, ok);

                let inv = 1.0 / next.t;
                let literal_ok = inv >= 1.0 / (2.0 * m * hmax) && inv <= 1.0 / (2.0 * m * hmin);
                t[LITERAL_B1].observe(inv * 2.0 * m * hmin, k + 1, literal_ok);

                let step = (next.z - cur.z).abs();
                let limit = 3.0 * hs / (m * hmin);
                t[STEP].observe(step / limit, k, step <= limit);

                let kf = k as f64;
                if kf > upper_from && cur.z - y_star <= 0.5 * eps {
                    let ok = next.z - y_star <= 0.75 * eps;
                    t[UPPER_INCLUSION].observe(next.z - y_star, k, ok);
                }
                if kf > lower_from && cur.z - y_star >= -0.5 * eps {
                    let ok = next.z - y_star >= -0.75 * eps;
                    t[LOWER_INCLUSION].observe(-(next.z - y_star), k, ok);
                }
            }
            t
        })
        .collect();

    let mut total = [Tally::new(); TALLIES];
    for t in &per_path {
        for (acc, x) in total.iter_mut().zip(t) {
            acc.merge(x);
        }
    }
    let k_hat_per_path: Vec<f64> = per_path.iter().map(|t| t[K_HAT].worst.max(0.0)).collect();
    let k_hat = total[K_HAT].worst.max(0.0);
    let k_ceiling = b6_constant_ceiling(&matrix);

    let make = |id: &str, description: String, tally: &Tally, status: CheckStatus| BoundCheck {
        id: id.to_string(),
        description,
        status,
        worst_value: if tally.evaluated == 0 {
            0.0
        } else {
            tally.worst
        },
        worst_step: tally.worst_step,
        evaluated: tally.evaluated,
        violations: tally.violations,
    };
    let strict = |t: &Tally| {
        if t.violations == 0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    };
    let informational = |t: &Tally| {
        if t.violations == 0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Flag
        }
    };

    let mut checks = vec![
        make(
            "b3_martingale_increment",
            format!("|dM| <= 4(H1+H2) = {}", 4.0 * hs),
            &total[DELTA_M],
            strict(&total[DELTA_M]),
        ),
        make(
            "b6_conditional_mean",
            format!(
                "sup |E[dM/T_(n+1) | F_n]| T_n^2 finite and <= two-outcome ceiling {k_ceiling}"
            ),
            &total[K_HAT],
            if k_hat.is_finite() && k_hat <= k_ceiling * (1.0 + 1e-12) {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
        ),
        make(
            "b2_drift",
            format!("|h(Z_n)| <= 2(H1+H2) = {}", 2.0 * hs),
            &total[DRIFT],
            strict(&total[DRIFT]),
        ),
        make(
            "b1_envelope",
            "n min(H1,H2) <= T_n - T_0 <= n max(H1,H2); worst value is the negated slack per step"
                .into(),
            &total[ENVELOPE],
            strict(&total[ENVELOPE]),
        ),
        make(
            "b1_literal",
            "informational: 1/(2n max) <= 1/T_n <= 1/(2n min); worst value is 2n min / T_n".into(),
            &total[LITERAL_B1],
            informational(&total[LITERAL_B1]),
        ),
        make(
            "l32_step",
            "|Z_(k+1) - Z_k| <= 3(H1+H2)/((k+1) min(H1,H2)); worst value is the used fraction".into(),
            &total[STEP],
            strict(&total[STEP]),
        ),
        make(
            "l32_upper_inclusion",
            format!(
                "k > {upper_from:.6}: Z_k - y* <= eps/2 implies Z_(k+1) - y* <= 3 eps/4 (eps = {eps})"
            ),
            &total[UPPER_INCLUSION],
            strict(&total[UPPER_INCLUSION]),
        ),
        make(
            "l32_lower_inclusion",
            format!(
                "k > {lower_from:.6}: Z_k - y* >= -eps/2 implies Z_(k+1) - y* >= -3 eps/4 (eps = {eps})"
            ),
            &total[LOWER_INCLUSION],
            strict(&total[LOWER_INCLUSION]),
        ),
    ];
    for c in &mut checks {
        if c.evaluated == 0 {
            c.worst_step = None;
        }
    }

    Ok(BoundReport {
        n,
        paths,
        seed,
        y_star,
        eps_inclusion,
        checks,
        k_hat,
        k_hat_per_path,
        k_ceiling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SkewSpec;

    fn paper_config() -> UrnConfig {
        UrnConfig::new(
            ReplacementMatrix::from_rows([[2.0, 4.0], [3.0, 6.0]]).unwrap(),
            SkewSpec::identity(),
            (1.0, 1.0),
        )
        .unwrap()
    }

    fn synthetic(a: f64, c: f64, ns: &[u64]) -> Vec<TailEstimate> {
        ns.iter()
            .map(|&n| TailEstimate::exact(n, 0.1, c * (-a * n as f64).exp()))
            .collect()
    }

    #[test]
    fn rate_fit_recovers_exact_log_linear_data() {
        let ns: Vec<u64> = (1..=10).map(|i| i * 10).collect();
        let fit = rate_fit(&synthetic(0.1, 1.0, &ns)).unwrap();
        assert!((fit.a_hat - 0.1).abs() < 1e-12);
        assert!(fit.log_c_hat.abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);

        let fit = rate_fit(&synthetic(0.25, 2.0, &ns)).unwrap();
        assert!((fit.a_hat - 0.25).abs() < 1e-12);
        assert!((fit.log_c_hat - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rate_fit_drops_zero_points() {
        let mut est = synthetic(0.1, 1.0, &[10, 20, 30, 40]);
        est.push(TailEstimate::monte_carlo(50, 0.1, 100, 0));
        let fit = rate_fit(&est).unwrap();
        assert_eq!((fit.points_used, fit.points_zero), (4, 1));
        let err = rate_fit(&est[2..]).unwrap_err();
        assert_eq!(err, UrnError::InsufficientPoints { needed: 3, got: 2 });
    }

    #[test]
    fn zero_hit_estimate_uses_rule_of_three() {
        let e = TailEstimate::monte_carlo(10, 0.1, 300, 0);
        assert_eq!(e.p_hat, 0.0);
        assert_eq!(e.ci_half_width, 0.01);
        let e = TailEstimate::monte_carlo(10, 0.1, 1000, 3).with_exact_interval_for_rare();
        let (lo, hi) = e.exact_interval();
        assert!(lo < 0.003 && hi > 0.003);
        assert!(e.ci_half_width >= hi - 0.003 - 1e-15);
    }

    #[test]
    fn mc_is_deterministic_and_rejects_bad_input() {
        let c = paper_config();
        let a = mc_tail_estimate(&c, 0.4, 40, 0.05, 500, 9).unwrap();
        let b = mc_tail_estimate(&c, 0.4, 40, 0.05, 500, 9).unwrap();
        assert_eq!(a, b);
        assert!(mc_tail_estimate(&c, 0.4, 40, 0.05, 0, 9).is_err());
        assert!(mc_tail_estimate(&c, 0.4, 40, 0.0, 10, 9).is_err());
        let wide = mc_tail_estimate(&c, 0.4, 40, 1.0, 200, 9).unwrap();
        assert_eq!(wide.hits, 0);
    }

    #[test]
    fn grid_matches_single_estimates() {
        let c = paper_config();
        let grid =
            mc_tail_grid(&c, 0.4, &[30, 10], &[0.02, 0.05], 400, 5, DEFAULT_WORK_CAP).unwrap();
        assert_eq!(grid.len(), 4);
        assert_eq!((grid[0].n, grid[0].eps), (30, 0.02));
        assert_eq!(
            grid[3],
            mc_tail_estimate(&c, 0.4, 10, 0.05, 400, 5).unwrap()
        );
    }

    #[test]
    fn work_cap_enforced() {
        let err = mc_tail_grid(&paper_config(), 0.4, &[100], &[0.1], 100, 1, 9_999).unwrap_err();
        assert!(matches!(err, UrnError::ResourceCap { .. }));
    }

    fn params(k: u64, n: u64, eps: f64, big_k: f64) -> Lemma31Params {
        Lemma31Params {
            beta: std::f64::consts::E,
            k,
            n,
            eps,
            big_k,
            matrix: paper_config().matrix,
        }
    }

    #[test]
    fn lemma31_shrinks_with_the_window() {
        let mut last = 2.0;
        for k in [100, 400, 1600, 6400] {
            let b = lemma31_bound(&params(k, 10 * k, 0.5, 0.0)).unwrap();
            assert!(b < last, "k = {k}: {b} !< {last}");
            last = b;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn lemma31_matches_the_a_b_form_without_drift() {
        // independent route through A = 4(H1+H2) and B = 2 min(H1,H2)
        let p = params(50_000, 60_000, 1.0, 0.0);
        let ev = p.evaluate().unwrap();
        let s: f64 = (50_000..=60_000u64).map(|i| 1.0 / (i as f64).powi(2)).sum();
        let (a, b) = (60.0, 10.0);
        let expected = 2.0 * (-(1.0 * 1.0) / (2.0 * p.beta * a * a / (b * b) * s)).exp();
        assert!((ev.bound - expected).abs() <= 1e-12 * expected.max(1e-300));
        assert!((ev.s - s).abs() < 1e-18);
    }

    #[test]
    fn lemma31_parameter_errors_and_sentinel() {
        let mut p = params(10, 20, 0.5, 1.0);
        p.beta = 1.0;
        assert!(lemma31_bound(&p).is_err());
        assert!(lemma31_bound(&params(30, 20, 0.5, 1.0)).is_err());
        assert!(lemma31_bound(&params(0, 20, 0.5, 1.0)).is_err());
        let too_big = params(10, 20, 0.0, 1.0).eps_max() * 1.01;
        assert!(lemma31_bound(&params(10, 20, too_big, 1.0)).is_err());
        // drift correction swamps eps
        assert_eq!(lemma31_bound(&params(1, 20, 1e-3, 1e3)).unwrap(), 2.0);
    }

    #[test]
    fn ceiling_bounds_the_conditional_mean_everywhere() {
        let c = paper_config();
        let ceiling = b6_constant_ceiling(&c.matrix);
        assert_eq!(ceiling, 0.25 * 5.0 * 3.0);
        for y1 in 0..60 {
            for y2 in 0..60 {
                if y1 + y2 == 0 {
                    continue;
                }
                let s = crate::model::UrnState::new(0, y1 as f64, y2 as f64);
                let v = conditional_increment_stats(&s, &c)
                    .cond_mean_dm_over_t
                    .abs()
                    * s.t
                    * s.t;
                assert!(v <= ceiling, "({y1}, {y2}): {v}");
            }
        }
    }

    #[test]
    fn bound_audit_on_paper_config() {
        let r = bound_verification(&paper_config(), 3000, 8, 42, 0.4, 0.1).unwrap();
        assert!(r.passed(), "{:#?}", r.checks);
        for id in [
            "b3_martingale_increment",
            "b2_drift",
            "b1_envelope",
            "l32_step",
        ] {
            let c = r.get(id).unwrap();
            assert_eq!(c.violations, 0, "{id}");
            assert_eq!(c.evaluated, 8 * 3000);
        }
        assert!(r.k_hat > 0.0 && r.k_hat <= r.k_ceiling);
        // T_0 = 2 < n min(H1,H2), so the literal form breaks
        assert_eq!(r.get("b1_literal").unwrap().status, CheckStatus::Flag);
        assert!(r.get("l32_upper_inclusion").unwrap().evaluated > 0);
    }

    #[test]
    fn exceedance_counts_are_deterministic() {
        // [[2,4],[3,6]] preserves the 2:5 ratio in both columns, so its
        // martingale part is negligible; use the other paper matrix.
        let c = UrnConfig::new(
            ReplacementMatrix::from_rows([[4.0, 1.0], [5.0, 4.0]]).unwrap(),
            SkewSpec::identity(),
            (1.0, 1.0),
        )
        .unwrap();
        let a = martingale_sum_exceedance(&c, 10, 200, 0.01, 300, 3).unwrap();
        let b = martingale_sum_exceedance(&c, 10, 200, 0.01, 300, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.hits > 0);
        assert!(martingale_sum_exceedance(&c, 300, 200, 0.01, 10, 3).is_err());
    }
}
