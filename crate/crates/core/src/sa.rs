//! Stochastic approximation recursions `X_{n+1} = X_n + gamma_{n+1} (g(X_n) + U_{n+1})`,
//! audits of the step-size and noise conditions, and tail experiments that
//! separate the exponential and stretched-exponential regimes.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{drift_value, DriftProfile};
use crate::error::{check_cap, Result, UrnError};
use crate::ldp::{b6_constant_ceiling, TailEstimate};
use crate::model::{conditional_increment_stats, urn_step, UrnConfig, UrnState, DEFAULT_PATH_CAP};
use crate::rng::{stream_rng, StreamRng};
use crate::stats::{ols, LineFit};

/// Relative slack used when comparing audited values with declared constants.
const AUDIT_SLACK: f64 = 1e-12;

/// Residual above which a state-carrying adapter is reported as breaking the
/// recursion identity.
pub const RECURSION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Drift {
    Zero,
    /// `g(x) = -slope (x - center)`
    Linear {
        slope: f64,
        center: f64,
    },
    /// `g(x) = -scale tanh(x - center)`
    Tanh {
        scale: f64,
        center: f64,
    },
}

impl Drift {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Linear { slope, center } => -slope * (x - center),
            Drift::Tanh { scale, center } => -scale * (x - center).tanh(),
        }
    }

    /// `sup |g|` on `[0, 1]`.
    fn sup_on_unit(&self) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Linear { slope, center } => slope.abs() * center.abs().max((1.0 - center).abs()),
            Drift::Tanh { scale, center } => {
                scale.abs() * center.abs().max((1.0 - center).abs()).tanh()
            }
        }
    }

    /// `-lim_{x -> +inf} g(x)`
    fn k_gl(&self) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Linear { slope, .. } => slope.signum() * f64::INFINITY,
            Drift::Tanh { scale, .. } => scale,
        }
    }

    /// `lim_{x -> -inf} g(x)`
    fn k_gu(&self) -> f64 {
        self.k_gl()
    }
}

/// `gamma_n = scale / (n + offset)` for `n >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub scale: f64,
    pub offset: f64,
}

impl StepSchedule {
    pub fn harmonic(scale: f64, offset: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !(offset > -1.0) || !offset.is_finite() {
            return Err(UrnError::Parameter(format!(
                "step schedule needs scale > 0 and offset > -1, got {scale}, {offset}"
            )));
        }
        Ok(Self { scale, offset })
    }

    pub fn gamma(&self, n: u64) -> f64 {
        self.scale / (n as f64 + self.offset)
    }

    /// Tightest `(u_l, u_u)` with `u_l / n <= gamma_n <= u_u / n` for all `n >= 1`.
    pub fn bounds(&self) -> (f64, f64) {
        let first = self.scale / (1.0 + self.offset);
        (first.min(self.scale), first.max(self.scale))
    }
}

/// Conditionally mean-zero i.i.d. noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseSource {
    Zero,
    /// `+scale` or `-scale` with equal probability.
    Rademacher {
        scale: f64,
    },
    /// Uniform on `[-half_width, half_width]`.
    Uniform {
        half_width: f64,
    },
}

impl NoiseSource {
    fn sample(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            NoiseSource::Zero => 0.0,
            NoiseSource::Rademacher { scale } => {
                if rng.gen::<bool>() {
                    scale
                } else {
                    -scale
                }
            }
            NoiseSource::Uniform { half_width } => {
                if half_width == 0.0 {
                    0.0
                } else {
                    rng.gen_range(-half_width..=half_width)
                }
            }
        }
    }

    fn bound(&self) -> f64 {
        match *self {
            NoiseSource::Zero => 0.0,
            NoiseSource::Rademacher { scale } => scale.abs(),
            NoiseSource::Uniform { half_width } => half_width.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SaDynamics {
    Synthetic {
        drift: Drift,
        schedule: StepSchedule,
        noise: NoiseSource,
    },
    /// The urn proportion: `g = h`, `gamma_{n+1} = 1 / T_{n+1}`, `U = dM`.
    Urn(UrnConfig),
}

/// Constants the recursion is declared to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeclaredConstants {
    pub u_l: f64,
    pub u_u: f64,
    /// `sup |g|` on `[0, 1]` (bounded problems).
    pub k_g: Option<f64>,
    pub k_u: f64,
    pub k_e: f64,
    /// `-lim_{x -> +inf} g(x)` (unbounded problems).
    pub k_gl: Option<f64>,
    /// `lim_{x -> -inf} g(x)` (unbounded problems).
    pub k_gu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaProblem {
    pub dynamics: SaDynamics,
    pub x0: f64,
    /// States must stay in `[0, 1]`.
    pub bounded: bool,
    pub constants: DeclaredConstants,
}

impl SaProblem {
    /// Synthetic problem with constants derived from its parts.
    pub fn synthetic(
        drift: Drift,
        schedule: StepSchedule,
        noise: NoiseSource,
        x0: f64,
        bounded: bool,
    ) -> Result<Self> {
        if !x0.is_finite() || (bounded && !(0.0..=1.0).contains(&x0)) {
            return Err(UrnError::Parameter(format!(
                "initial value {x0} is out of range"
            )));
        }
        let (u_l, u_u) = schedule.bounds();
        let constants = DeclaredConstants {
            u_l,
            u_u,
            k_g: bounded.then(|| drift.sup_on_unit()),
            k_u: noise.bound(),
            k_e: 0.0,
            k_gl: (!bounded).then(|| drift.k_gl()),
            k_gu: (!bounded).then(|| drift.k_gu()),
        };
        Ok(Self {
            dynamics: SaDynamics::Synthetic {
                drift,
                schedule,
                noise,
            },
            x0,
            bounded,
            constants,
        })
    }

    pub fn with_constants(mut self, constants: DeclaredConstants) -> Self {
        self.constants = constants;
        self
    }

    pub fn drift(&self, x: f64) -> f64 {
        match &self.dynamics {
            SaDynamics::Synthetic { drift, .. } => drift.value(x),
            SaDynamics::Urn(config) => drift_value(&config.matrix, &config.skew, x),
        }
    }

    fn cursor(&self) -> Cursor {
        match &self.dynamics {
            SaDynamics::Synthetic { .. } => Cursor::Value(self.x0),
            SaDynamics::Urn(config) => Cursor::Urn(config.initial_state()),
        }
    }

    /// Advances `cursor` from step `n` to `n + 1`.
    fn step(&self, cursor: &mut Cursor, n: u64, rng: &mut StreamRng) -> Result<SaStepAudit> {
        let audit = match (&self.dynamics, cursor as &mut Cursor) {
            (
                SaDynamics::Synthetic {
                    drift,
                    schedule,
                    noise,
                },
                Cursor::Value(x),
            ) => {
                let gamma = schedule.gamma(n + 1);
                let g = drift.value(*x);
                let u = noise.sample(rng);
                *x += gamma * (g + u);
                SaStepAudit {
                    gamma,
                    noise: u,
                    drift: g,
                    cond_mean_gamma_noise: Some(0.0),
                    residual: 0.0,
                }
            }
            (SaDynamics::Urn(config), Cursor::Urn(state)) => {
                let x = state.z;
                let g = drift_value(&config.matrix, &config.skew, x);
                let cond = conditional_increment_stats(state, config).cond_mean_dm_over_t;
                let (next, rec) = urn_step(state, config, rng);
                *state = next;
                SaStepAudit {
                    gamma: rec.gamma,
                    noise: rec.delta_m,
                    drift: g,
                    cond_mean_gamma_noise: Some(cond),
                    residual: (next.z - (x + rec.gamma * (g + rec.delta_m))).abs(),
                }
            }
            _ => unreachable!("cursor built from the same dynamics"),
        };
        let x = cursor.value();
        if self.bounded && !(0.0..=1.0).contains(&x) || !x.is_finite() {
            return Err(UrnError::RangeViolation {
                step: n + 1,
                value: x,
            });
        }
        Ok(audit)
    }
}

#[derive(Debug, Clone, Copy)]
enum Cursor {
    Value(f64),
    Urn(UrnState),
}

impl Cursor {
    fn value(&self) -> f64 {
        match self {
            Cursor::Value(x) => *x,
            Cursor::Urn(s) => s.z,
        }
    }
}

/// The urn proportion as a bounded recursion.
///
/// `gamma_{n+1} = 1 / T_{n+1}` lies in `[1 / (T_0 + (n+1) max), 1 / ((n+1) min)]`,
/// giving `u_l = 1 / (T_0 + max(H1,H2))` and `u_u = 1 / min(H1,H2)`. Since
/// `T_n >= n min(H1,H2)`, the two-outcome ceiling `K` on
/// `|E[dM / T_{n+1} | F_n]| T_n^2` yields `K_e = K / min(H1,H2)^2`.
pub fn urn_as_sa(config: &UrnConfig) -> SaProblem {
    urn_as_sa_with_k(config, b6_constant_ceiling(&config.matrix))
}

/// As [`urn_as_sa`] but with a caller-supplied (e.g. fitted) `K`.
pub fn urn_as_sa_with_k(config: &UrnConfig, big_k: f64) -> SaProblem {
    let m = &config.matrix;
    let (hmin, hmax) = (m.min_column_sum(), m.max_column_sum());
    let hs = m.h1() + m.h2();
    SaProblem {
        dynamics: SaDynamics::Urn(config.clone()),
        x0: config.z0(),
        bounded: true,
        constants: DeclaredConstants {
            u_l: 1.0 / (config.t0() + hmax),
            u_u: 1.0 / hmin,
            k_g: Some(2.0 * hs),
            k_u: 4.0 * hs,
            k_e: big_k / (hmin * hmin),
            k_gl: None,
            k_gu: None,
        },
    }
}

/// Drift profile of an urn-backed problem, for solving its equilibrium.
pub fn urn_profile(problem: &SaProblem) -> Option<DriftProfile> {
    match &problem.dynamics {
        SaDynamics::Urn(c) => Some(DriftProfile::new(c.matrix, c.skew.clone())),
        SaDynamics::Synthetic { .. } => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaStepAudit {
    pub gamma: f64,
    pub noise: f64,
    /// `g(X_n)`
    pub drift: f64,
    /// Exact `E[gamma_{n+1} U_{n+1} | F_n]` when the source exposes it.
    pub cond_mean_gamma_noise: Option<f64>,
    /// `|X_{n+1} - (X_n + gamma (g + U))|`; zero for synthetic problems.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaTrajectory {
    pub problem: SaProblem,
    pub seed: u64,
    pub states: Vec<f64>,
    pub audit: Vec<SaStepAudit>,
}

pub fn run_sa(problem: &SaProblem, n: u64, seed: u64) -> Result<SaTrajectory> {
    run_sa_capped(problem, n, seed, DEFAULT_PATH_CAP)
}

/// Runs `n` steps on stream 0 of `seed`.
pub fn run_sa_capped(problem: &SaProblem, n: u64, seed: u64, cap: u64) -> Result<SaTrajectory> {
    check_cap(n, cap)?;
    if let SaDynamics::Urn(config) = &problem.dynamics {
        crate::model::check_count_growth(config, n)?;
    }
    let mut rng = stream_rng(seed, 0);
    let mut cursor = problem.cursor();
    let mut states = Vec::with_capacity(n as usize + 1);
    let mut audit = Vec::with_capacity(n as usize);
    states.push(cursor.value());
    for i in 0..n {
        audit.push(problem.step(&mut cursor, i, &mut rng)?);
        states.push(cursor.value());
    }
    Ok(SaTrajectory {
        problem: problem.clone(),
        seed,
        states,
        audit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditStatus {
    Pass,
    Fail,
    NotAuditable,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVerdict {
    pub condition: String,
    pub status: AuditStatus,
    pub worst_step: Option<u64>,
    /// Tightest constants implied by the trajectory.
    pub observed: Vec<(String, f64)>,
    pub declared: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaAudit {
    pub conditions: Vec<ConditionVerdict>,
    pub max_recursion_residual: f64,
    pub recursion_exact: bool,
}

impl SaAudit {
    pub fn get(&self, condition: &str) -> Option<&ConditionVerdict> {
        self.conditions.iter().find(|c| c.condition == condition)
    }

    /// No auditable condition failed and the recursion identity held.
    pub fn passed(&self) -> bool {
        self.recursion_exact
            && self
                .conditions
                .iter()
                .all(|c| c.status != AuditStatus::Fail)
    }
}

fn within(value: f64, limit: f64) -> bool {
    value <= limit + AUDIT_SLACK * limit.abs().max(f64::MIN_POSITIVE)
}

/// Checks the step-size, drift, noise and conditional-mean conditions along
/// a trajectory against the problem's declared constants.
pub fn condition_audit(trajectory: &SaTrajectory) -> SaAudit {
    let p = &trajectory.problem;
    let c = &p.constants;
    let mut conditions = Vec::new();

    // sa-1: u_l / m <= gamma_m <= u_u / m with m = n + 1
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    let mut worst = None;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut ok = true;
    for (i, a) in trajectory.audit.iter().enumerate() {
        let scaled = a.gamma * (i + 1) as f64;
        lo = lo.min(scaled);
        hi = hi.max(scaled);
        let fine = within(c.u_l, scaled) && within(scaled, c.u_u);
        let excess = (c.u_l - scaled).max(scaled - c.u_u);
        if excess > worst_excess {
            worst_excess = excess;
            worst = Some(i as u64 + 1);
        }
        ok &= fine;
    }
    conditions.push(ConditionVerdict {
        condition: "sa-1".into(),
        status: status(ok, trajectory.audit.is_empty()),
        worst_step: worst,
        observed: vec![("u_l".into(), lo), ("u_u".into(), hi)],
        declared: vec![("u_l".into(), c.u_l), ("u_u".into(), c.u_u)],
    });

    // sa-2: |g| <= K_g on [0, 1]
    match (p.bounded, c.k_g) {
        (true, Some(k_g)) => {
            let mut sup = 0.0_f64;
            let mut worst = None;
            for (i, a) in trajectory.audit.iter().enumerate() {
                if a.drift.abs() > sup {
                    sup = a.drift.abs();
                    worst = Some(i as u64);
                }
            }
            let grid_sup = (0..=1000)
                .map(|i| p.drift(i as f64 / 1000.0).abs())
                .fold(0.0, f64::max);
            conditions.push(ConditionVerdict {
                condition: "sa-2".into(),
                status: status(within(sup, k_g) && within(grid_sup, k_g), false),
                worst_step: worst,
                observed: vec![("K_g".into(), sup), ("K_g_grid".into(), grid_sup)],
                declared: vec![("K_g".into(), k_g)],
            });
        }
        _ => conditions.push(ConditionVerdict {
            condition: "sa-2".into(),
            status: AuditStatus::NotApplicable,
            worst_step: None,
            observed: vec![],
            declared: vec![],
        }),
    }

    // sa-3: |U| <= K_u
    let mut sup = 0.0_f64;
    let mut worst = None;
    for (i, a) in trajectory.audit.iter().enumerate() {
        if a.noise.abs() > sup {
            sup = a.noise.abs();
            worst = Some(i as u64 + 1);
        }
    }
    conditions.push(ConditionVerdict {
        condition: "sa-3".into(),
        status: status(within(sup, c.k_u), trajectory.audit.is_empty()),
        worst_step: worst,
        observed: vec![("K_u".into(), sup)],
        declared: vec![("K_u".into(), c.k_u)],
    });

    // sa-4: |E[gamma_{n+1} U_{n+1} | F_n]| <= K_e / n^2 for n >= 1
    let hooks: Option<Vec<f64>> = trajectory
        .audit
        .iter()
        .map(|a| a.cond_mean_gamma_noise)
        .collect();
    match hooks {
        Some(means) => {
            let mut sup = 0.0_f64;
            let mut worst = None;
            for (n, m) in means.iter().enumerate().skip(1) {
                let v = m.abs() * (n as f64) * (n as f64);
                if v > sup {
                    sup = v;
                    worst = Some(n as u64);
                }
            }
            conditions.push(ConditionVerdict {
                condition: "sa-4".into(),
                status: status(within(sup, c.k_e), means.len() < 2),
                worst_step: worst,
                observed: vec![("K_e".into(), sup)],
                declared: vec![("K_e".into(), c.k_e)],
            });
        }
        None => conditions.push(ConditionVerdict {
            condition: "sa-4".into(),
            status: AuditStatus::NotAuditable,
            worst_step: None,
            observed: vec![],
            declared: vec![("K_e".into(), c.k_e)],
        }),
    }

    let max_recursion_residual = trajectory
        .audit
        .iter()
        .map(|a| a.residual)
        .fold(0.0, f64::max);
    SaAudit {
        conditions,
        max_recursion_residual,
        recursion_exact: max_recursion_residual <= RECURSION_TOL,
    }
}

fn status(ok: bool, empty: bool) -> AuditStatus {
    if empty {
        AuditStatus::NotAuditable
    } else if ok {
        AuditStatus::Pass
    } else {
        AuditStatus::Fail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Regime {
    /// `P <= exp(-a n)`
    Exponential,
    /// `P <= exp(-n^(exponent - delta))` for every `delta > 0`.
    StretchedExponential { exponent: f64 },
    /// Drift limit equals the noise bound; no prediction.
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Exponential,
    StretchedExponential,
}

/// Competing fits: `log p` against `n`, and `log(-log p)` against `log n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeComparison {
    pub points_used: usize,
    pub exponential: Option<LineFit>,
    /// Slope is the stretched exponent estimate.
    pub stretched: Option<LineFit>,
    pub better: Option<Shape>,
}

fn compare_shapes(estimates: &[TailEstimate]) -> ShapeComparison {
    let pts: Vec<(f64, f64)> = estimates
        .iter()
        .filter(|e| e.p_hat > 0.0 && e.p_hat < 1.0)
        .map(|e| (e.n as f64, e.p_hat))
        .collect();
    if pts.len() < 3 {
        return ShapeComparison {
            points_used: pts.len(),
            exponential: None,
            stretched: None,
            better: None,
        };
    }
    let ns: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let logs: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let log_ns: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let loglogs: Vec<f64> = logs.iter().map(|l| (-l).ln()).collect();
    let exponential = ols(&ns, &logs);
    let stretched = ols(&log_ns, &loglogs);
    let better = match (&exponential, &stretched) {
        (Some(e), Some(s)) => Some(if e.r_squared >= s.r_squared {
            Shape::Exponential
        } else {
            Shape::StretchedExponential
        }),
        _ => None,
    };
    ShapeComparison {
        points_used: pts.len(),
        exponential,
        stretched,
        better,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailExperiment {
    pub x_star: f64,
    pub eps: f64,
    /// `P(X_n - x* > eps)` per grid point.
    pub upper: Vec<TailEstimate>,
    /// `P(X_n - x* < -eps)` per grid point.
    pub lower: Vec<TailEstimate>,
    pub upper_shape: ShapeComparison,
    pub lower_shape: ShapeComparison,
    pub predicted_upper: Regime,
    pub predicted_lower: Regime,
}

/// Regimes predicted from the declared constants.
pub fn predicted_regimes(problem: &SaProblem) -> (Regime, Regime) {
    if problem.bounded {
        return (Regime::Exponential, Regime::Exponential);
    }
    let k_u = problem.constants.k_u;
    let classify = |limit: Option<f64>| match limit {
        Some(k) if k > k_u => Regime::Exponential,
        Some(k) if k < k_u => Regime::StretchedExponential { exponent: k / k_u },
        _ => Regime::Boundary,
    };
    (
        classify(problem.constants.k_gl),
        classify(problem.constants.k_gu),
    )
}

/// One-sided tails of `X_n - x_star` over `n_grid` from `trials` paths
/// (trial `i` on stream `i` of `seed`).
pub fn tail_experiment(
    problem: &SaProblem,
    x_star: f64,
    n_grid: &[u64],
    eps: f64,
    trials: u64,
    seed: u64,
) -> Result<TailExperiment> {
    if trials == 0 {
        return Err(UrnError::Parameter("trials must be at least 1".into()));
    }
    if !(eps > 0.0) {
        return Err(UrnError::Parameter(format!("eps = {eps} must be positive")));
    }
    let max_n = n_grid.iter().copied().max().unwrap_or(0);
    check_cap(trials.saturating_mul(max_n), crate::ldp::DEFAULT_WORK_CAP)?;
    if let SaDynamics::Urn(config) = &problem.dynamics {
        crate::model::check_count_growth(config, max_n)?;
    }
    let mut order: Vec<usize> = (0..n_grid.len()).collect();
    order.sort_by_key(|&i| n_grid[i]);
    let g = n_grid.len();

    let per_trial: Vec<Result<Vec<u64>>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream_rng(seed, trial);
            let mut cursor = problem.cursor();
            let mut n = 0u64;
            let mut hits = vec![0u64; 2 * g];
            for &gi in &order {
                while n < n_grid[gi] {
                    problem.step(&mut cursor, n, &mut rng)?;
                    n += 1;
                }
                let d = cursor.value() - x_star;
                if d > eps {
                    hits[gi] += 1;
                }
                if d < -eps {
                    hits[g + gi] += 1;
                }
            }
            Ok(hits)
        })
        .collect();
    let mut hits = vec![0u64; 2 * g];
    for r in per_trial {
        for (acc, h) in hits.iter_mut().zip(r?) {
            *acc += h;
        }
    }

    let upper: Vec<TailEstimate> = n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| TailEstimate::monte_carlo(n, eps, trials, hits[i]))
        .collect();
    let lower: Vec<TailEstimate> = n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| TailEstimate::monte_carlo(n, eps, trials, hits[g + i]))
        .collect();
    let (predicted_upper, predicted_lower) = predicted_regimes(problem);
    Ok(TailExperiment {
        x_star,
        eps,
        upper_shape: compare_shapes(&upper),
        lower_shape: compare_shapes(&lower),
        upper,
        lower,
        predicted_upper,
        predicted_lower,
    })
}
