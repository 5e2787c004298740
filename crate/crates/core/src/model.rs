//! Two-color nonlinear unbalanced urn: configuration, validation and the
//! exact one-step dynamics.
//!
//! Drawing type `j` adds column `j` of the replacement matrix: `h1j` balls
//! of type 1 and `h2j` balls of type 2. The type-1 ball is drawn with
//! probability `f(z) / (f(z) + f(1 - z))` where `z` is the type-1 proportion.
//!
//! Counts are kept in binary64. When every matrix entry and initial count is
//! an integer the counts stay exact integers (below 2^53), so `z = y1 / t`
//! carries a single rounding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_cap, Result, UrnError};

/// Largest path length [`simulate_path`] records without an explicit cap.
pub const DEFAULT_PATH_CAP: u64 = 2_000_000;

/// Grid used for data-defined skew checks.
pub const SKEW_GRID: usize = 4097;

const EXACT_INTEGER_LIMIT: f64 = 9_007_199_254_740_992.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplacementMatrix {
    pub h11: f64,
    pub h12: f64,
    pub h21: f64,
    pub h22: f64,
}

impl ReplacementMatrix {
    /// Entries must be finite and nonnegative. The urn conditions (unbalanced,
    /// positive off-diagonal) are checked by [`validate_config`], so balanced
    /// or degenerate matrices can still be built for negative tests.
    pub fn new(h11: f64, h12: f64, h21: f64, h22: f64) -> Result<Self> {
        for (name, v) in [("h11", h11), ("h12", h12), ("h21", h21), ("h22", h22)] {
            if !v.is_finite() || v < 0.0 {
                return Err(UrnError::InvalidConfig(format!(
                    "replacement entry {name} = {v} must be finite and nonnegative"
                )));
            }
        }
        Ok(Self { h11, h12, h21, h22 })
    }

    /// Row-major `[[h11, h12], [h21, h22]]`.
    pub fn from_rows(rows: [[f64; 2]; 2]) -> Result<Self> {
        Self::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1])
    }

    /// Balls added when a type-1 ball is drawn.
    pub fn h1(&self) -> f64 {
        self.h11 + self.h21
    }

    /// Balls added when a type-2 ball is drawn.
    pub fn h2(&self) -> f64 {
        self.h12 + self.h22
    }

    pub fn min_column_sum(&self) -> f64 {
        self.h1().min(self.h2())
    }

    pub fn max_column_sum(&self) -> f64 {
        self.h1().max(self.h2())
    }

    /// `(type-1 added, type-2 added)` for a drawn type.
    pub fn column(&self, outcome: Outcome) -> (f64, f64) {
        match outcome {
            Outcome::E1 => (self.h11, self.h21),
            Outcome::E2 => (self.h12, self.h22),
        }
    }

    pub fn is_integral(&self) -> bool {
        [self.h11, self.h12, self.h21, self.h22]
            .iter()
            .all(|v| v.fract() == 0.0)
    }
}

/// Drawing-rule function families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SkewFamily {
    Identity,
    /// `f(y) = y^p`
    Power(f64),
    /// `f(y) = 1 - (1 - y)^p`
    MirrorPower(f64),
    /// Piecewise-linear through `(y, f(y))` knots.
    MonotoneTable(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewSpec {
    pub family: SkewFamily,
    pub concave_declared: bool,
}

impl SkewSpec {
    pub fn identity() -> Self {
        Self {
            family: SkewFamily::Identity,
            concave_declared: true,
        }
    }

    pub fn power(p: f64) -> Result<Self> {
        check_exponent(p)?;
        Ok(Self {
            family: SkewFamily::Power(p),
            concave_declared: p == 1.0,
        })
    }

    pub fn mirror_power(p: f64) -> Result<Self> {
        check_exponent(p)?;
        Ok(Self {
            family: SkewFamily::MirrorPower(p),
            concave_declared: p >= 1.0,
        })
    }

    /// Knot abscissae must run strictly upward from 0 to 1. Ordinates are only
    /// required to be finite here; monotonicity and the endpoint values are
    /// checked by [`validate_config`].
    pub fn table(knots: Vec<(f64, f64)>, concave_declared: bool) -> Result<Self> {
        if knots.len() < 2 {
            return Err(UrnError::InvalidConfig(
                "skew table needs at least two knots".into(),
            ));
        }
        if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(UrnError::InvalidConfig(
                "skew table knots must be finite".into(),
            ));
        }
        if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
            return Err(UrnError::InvalidConfig(
                "skew table must start at y = 0 and end at y = 1".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(UrnError::InvalidConfig(
                "skew table abscissae must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            family: SkewFamily::MonotoneTable(knots),
            concave_declared,
        })
    }

    /// `f(y)` for `y` in `[0, 1]`.
    pub fn eval(&self, y: f64) -> Result<f64> {
        check_unit("y", y)?;
        Ok(self.value(y))
    }

    /// `f'(y)`; one-sided at the endpoints, right segment slope at table knots
    /// (left slope at `y = 1`).
    pub fn derivative(&self, y: f64) -> Result<f64> {
        check_unit("y", y)?;
        Ok(self.slope(y))
    }

    pub(crate) fn value(&self, y: f64) -> f64 {
        match &self.family {
            SkewFamily::Identity => y,
            SkewFamily::Power(p) => y.powf(*p),
            SkewFamily::MirrorPower(p) => 1.0 - (1.0 - y).powf(*p),
            SkewFamily::MonotoneTable(knots) => {
                let i = segment(knots, y);
                let (x0, f0) = knots[i];
                let (x1, f1) = knots[i + 1];
                if y == x1 {
                    return f1;
                }
                f0 + (f1 - f0) * (y - x0) / (x1 - x0)
            }
        }
    }

    pub(crate) fn slope(&self, y: f64) -> f64 {
        match &self.family {
            SkewFamily::Identity => 1.0,
            SkewFamily::Power(p) => p * y.powf(p - 1.0),
            SkewFamily::MirrorPower(p) => p * (1.0 - y).powf(p - 1.0),
            SkewFamily::MonotoneTable(knots) => {
                let i = segment(knots, y);
                let (x0, f0) = knots[i];
                let (x1, f1) = knots[i + 1];
                (f1 - f0) / (x1 - x0)
            }
        }
    }

    /// Concavity from the family's closed form, or discrete second
    /// differences (slope must not increase by more than 1e-12) for tables.
    pub fn is_concave(&self) -> bool {
        match &self.family {
            SkewFamily::Identity => true,
            SkewFamily::Power(p) => *p <= 1.0,
            SkewFamily::MirrorPower(p) => *p >= 1.0,
            SkewFamily::MonotoneTable(knots) => {
                let slopes: Vec<f64> = knots
                    .windows(2)
                    .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
                    .collect();
                slopes.windows(2).all(|s| s[1] <= s[0] + 1e-12)
            }
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            SkewFamily::Identity => "identity",
            SkewFamily::Power(_) => "power",
            SkewFamily::MirrorPower(_) => "mirror_power",
            SkewFamily::MonotoneTable(_) => "table",
        }
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 {
        Ok(())
    } else {
        Err(UrnError::InvalidConfig(format!(
            "skew exponent {p} must be finite and positive"
        )))
    }
}

fn check_unit(what: &'static str, y: f64) -> Result<()> {
    if (0.0..=1.0).contains(&y) {
        Ok(())
    } else {
        Err(UrnError::domain_unit(what, y))
    }
}

fn segment(knots: &[(f64, f64)], y: f64) -> usize {
    let below = knots.partition_point(|k| k.0 <= y);
    below.saturating_sub(1).min(knots.len() - 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    E1,
    E2,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::E1 => "E1",
            Outcome::E2 => "E2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrnConfig {
    pub matrix: ReplacementMatrix,
    pub skew: SkewSpec,
    pub y0: (f64, f64),
}

impl UrnConfig {
    /// Builds a configuration and rejects it unless every condition C1–C4
    /// passes (flags are allowed).
    pub fn new(matrix: ReplacementMatrix, skew: SkewSpec, y0: (f64, f64)) -> Result<Self> {
        let config = Self::unchecked(matrix, skew, y0)?;
        let report = config.validate();
        if !report.passed() {
            let failed: Vec<String> = report.failures().map(|c| c.id.to_string()).collect();
            return Err(UrnError::InvalidConfig(format!(
                "failed conditions: {}",
                failed.join(", ")
            )));
        }
        Ok(config)
    }

    /// Only structural checks: initial counts finite, nonnegative, and not
    /// both zero.
    pub fn unchecked(matrix: ReplacementMatrix, skew: SkewSpec, y0: (f64, f64)) -> Result<Self> {
        let (a, b) = y0;
        if !a.is_finite() || !b.is_finite() || a < 0.0 || b < 0.0 || a + b <= 0.0 {
            return Err(UrnError::InvalidConfig(format!(
                "initial counts ({a}, {b}) must be nonnegative with a positive total"
            )));
        }
        Ok(Self { matrix, skew, y0 })
    }

    pub fn validate(&self) -> ValidationReport {
        validate_config(&self.matrix, &self.skew, self.y0)
    }

    pub fn t0(&self) -> f64 {
        self.y0.0 + self.y0.1
    }

    pub fn z0(&self) -> f64 {
        self.y0.0 / self.t0()
    }

    pub fn is_integral(&self) -> bool {
        self.matrix.is_integral() && self.y0.0.fract() == 0.0 && self.y0.1.fract() == 0.0
    }

    pub fn initial_state(&self) -> UrnState {
        UrnState::new(0, self.y0.0, self.y0.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Noted but not fatal.
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub id: String,
    pub description: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl ConditionCheck {
    fn new(id: &str, description: &str, ok: bool, detail: String) -> Self {
        Self {
            id: id.to_string(),
            description: description.to_string(),
            status: if ok {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail,
        }
    }

    fn flag_if(mut self, flagged: bool) -> Self {
        if flagged && self.status == CheckStatus::Pass {
            self.status = CheckStatus::Flag;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ConditionCheck>,
}

impl ValidationReport {
    /// True when nothing failed; flags do not count.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConditionCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    pub fn get(&self, id: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }
}

/// Checks conditions C1–C4 for a matrix, skew and initial composition.
pub fn validate_config(
    matrix: &ReplacementMatrix,
    skew: &SkewSpec,
    y0: (f64, f64),
) -> ValidationReport {
    let mut checks = Vec::new();

    // C1
    let f0 = skew.value(0.0);
    let f1 = skew.value(1.0);
    checks.push(ConditionCheck::new(
        "C1:endpoints",
        "f(0) = 0 and f(1) = 1",
        f0 == 0.0 && (f1 - 1.0).abs() <= 1e-15,
        format!("f(0) = {f0}, f(1) = {f1}"),
    ));

    let grid: Vec<f64> = (0..SKEW_GRID)
        .map(|i| i as f64 / (SKEW_GRID - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&y| skew.value(y)).collect();

    let worst_drop = grid
        .windows(2)
        .zip(values.windows(2))
        .map(|(y, v)| (v[0] - v[1], y[0], y[1]))
        .fold(
            (0.0_f64, 0.0, 0.0),
            |acc, c| if c.0 > acc.0 { c } else { acc },
        );
    let mut monotone = worst_drop.0 <= 1e-12;
    let mut monotone_detail = if monotone {
        format!("non-decreasing on a {SKEW_GRID}-point grid")
    } else {
        format!(
            "f decreases by {:.3e} between y = {} and y = {}",
            worst_drop.0, worst_drop.1, worst_drop.2
        )
    };
    if let SkewFamily::MonotoneTable(knots) = &skew.family {
        if let Some(w) = knots.windows(2).find(|w| w[1].1 <= w[0].1) {
            monotone = false;
            monotone_detail = format!(
                "table ordinates not strictly increasing: ({}, {}) then ({}, {})",
                w[0].0, w[0].1, w[1].0, w[1].1
            );
        }
    }
    checks.push(ConditionCheck::new(
        "C1:monotone",
        "f non-decreasing on [0, 1]",
        monotone,
        monotone_detail,
    ));

    let nonpositive = grid
        .iter()
        .zip(&values)
        .skip(1)
        .find(|(_, &v)| v <= 0.0 || !v.is_finite());
    checks.push(ConditionCheck::new(
        "C1:positive",
        "f > 0 on (0, 1]",
        nonpositive.is_none(),
        match nonpositive {
            None => "positive on the grid".into(),
            Some((y, v)) => format!("f({y}) = {v}"),
        },
    ));

    let d0 = skew.slope(0.0);
    let d1 = skew.slope(1.0);
    checks.push(ConditionCheck::new(
        "C1:derivatives",
        "finite right derivative at 0 and left derivative at 1",
        d0.is_finite() && d1.is_finite(),
        format!("f'(0+) = {d0}, f'(1-) = {d1}"),
    ));

    // C2
    let (h1, h2) = (matrix.h1(), matrix.h2());
    checks.push(ConditionCheck::new(
        "C2",
        "unbalanced: H1 != H2",
        h1 != h2,
        format!("H1 = {h1}, H2 = {h2}"),
    ));

    // C4
    let all_zero = [matrix.h11, matrix.h12, matrix.h21, matrix.h22]
        .iter()
        .all(|&v| v == 0.0);
    let c4 = !all_zero && matrix.h12 > 0.0 && matrix.h21 > 0.0;
    checks.push(ConditionCheck::new(
        "C4",
        "entries nonnegative, not all zero, H12 > 0 and H21 > 0",
        c4,
        format!("H12 = {}, H21 = {}", matrix.h12, matrix.h21),
    ));

    // C3: the urn total only grows, so it never empties once t0 > 0 and every
    // draw adds a ball. With f(0) = 0 a zero initial count makes that color
    // undrawable at the first step; H12, H21 > 0 still replenish it, so this
    // is flagged rather than failed.
    let (a, b) = y0;
    let t0 = a + b;
    let grows = h1 > 0.0 && h2 > 0.0;
    checks.push(
        ConditionCheck::new(
            "C3",
            "tenable: positive initial total, every draw adds balls, both colors present",
            t0 > 0.0 && grows && c4,
            format!("y0 = ({a}, {b}), H1 = {h1}, H2 = {h2}"),
        )
        .flag_if(a <= 0.0 || b <= 0.0),
    );
    if a <= 0.0 || b <= 0.0 {
        checks.push(ConditionCheck {
            id: "C3:initial-counts".into(),
            description: "both initial counts positive so Z0 lies in (0, 1)".into(),
            status: if c4 {
                CheckStatus::Flag
            } else {
                CheckStatus::Fail
            },
            detail: format!(
                "Z0 = {}; the empty color cannot be drawn until replenished",
                if t0 > 0.0 { a / t0 } else { f64::NAN }
            ),
        });
    }

    ValidationReport { checks }
}

/// Current composition after `n` draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrnState {
    pub n: u64,
    pub y1: f64,
    pub y2: f64,
    pub t: f64,
    pub z: f64,
}

impl UrnState {
    pub fn new(n: u64, y1: f64, y2: f64) -> Self {
        let t = y1 + y2;
        Self {
            n,
            y1,
            y2,
            t,
            z: y1 / t,
        }
    }
}

/// Diagnostics for a single draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub outcome: Outcome,
    /// Increment `L` of the type-1 numerator.
    pub l: f64,
    pub cond_mean_l: f64,
    /// Martingale increment `L - E[L | F_n]`.
    pub delta_m: f64,
    /// `1 / T_{n+1}`
    pub gamma: f64,
}

/// Probability that the next draw is type 1.
pub fn draw_probability(state: &UrnState, skew: &SkewSpec) -> f64 {
    type1_probability(state.z, skew)
}

pub(crate) fn type1_probability(z: f64, skew: &SkewSpec) -> f64 {
    let a = skew.value(z);
    let b = skew.value(1.0 - z);
    a / (a + b)
}

/// `L` for each outcome at proportion `z`.
pub(crate) fn increments(z: f64, matrix: &ReplacementMatrix) -> (f64, f64) {
    (matrix.h11 - z * matrix.h1(), matrix.h12 - z * matrix.h2())
}

/// `E[L | F_n]` at proportion `z`.
pub fn conditional_mean_l(z: f64, matrix: &ReplacementMatrix, skew: &SkewSpec) -> f64 {
    let p = type1_probability(z, skew);
    let (l1, l2) = increments(z, matrix);
    p * l1 + (1.0 - p) * l2
}

/// Applies a known outcome.
pub fn apply_outcome(
    state: &UrnState,
    config: &UrnConfig,
    outcome: Outcome,
) -> (UrnState, StepRecord) {
    let matrix = &config.matrix;
    let (add1, add2) = matrix.column(outcome);
    let next = UrnState::new(state.n + 1, state.y1 + add1, state.y2 + add2);
    let (l1, l2) = increments(state.z, matrix);
    let l = match outcome {
        Outcome::E1 => l1,
        Outcome::E2 => l2,
    };
    let cond_mean_l = conditional_mean_l(state.z, matrix, &config.skew);
    let record = StepRecord {
        outcome,
        l,
        cond_mean_l,
        delta_m: l - cond_mean_l,
        gamma: 1.0 / next.t,
    };
    (next, record)
}

/// Samples one draw. A uniform `u` in `[0, 1)` selects type 1 iff `u < p1`.
pub fn urn_step<R: Rng + ?Sized>(
    state: &UrnState,
    config: &UrnConfig,
    rng: &mut R,
) -> (UrnState, StepRecord) {
    let outcome = sample_outcome(state, config, rng);
    apply_outcome(state, config, outcome)
}

pub(crate) fn sample_outcome<R: Rng + ?Sized>(
    state: &UrnState,
    config: &UrnConfig,
    rng: &mut R,
) -> Outcome {
    let p1 = draw_probability(state, &config.skew);
    let u: f64 = rng.gen();
    if u < p1 {
        Outcome::E1
    } else {
        Outcome::E2
    }
}

/// Advances the counts only, for estimators that need the terminal state.
pub(crate) fn advance<R: Rng + ?Sized>(
    state: &UrnState,
    config: &UrnConfig,
    rng: &mut R,
) -> UrnState {
    let outcome = sample_outcome(state, config, rng);
    let (add1, add2) = config.matrix.column(outcome);
    UrnState::new(state.n + 1, state.y1 + add1, state.y2 + add2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrnPath {
    pub config: UrnConfig,
    pub seed: u64,
    pub states: Vec<UrnState>,
    pub steps: Vec<StepRecord>,
}

impl UrnPath {
    pub fn final_state(&self) -> &UrnState {
        self.states
            .last()
            .expect("path always holds the initial state")
    }

    pub fn e1_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.outcome == Outcome::E1)
            .count()
    }

    pub fn z_values(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.z).collect()
    }
}

/// Simulates `n` draws on stream 0 of `seed`.
pub fn simulate_path(config: &UrnConfig, n: u64, seed: u64) -> Result<UrnPath> {
    simulate_path_capped(config, n, seed, DEFAULT_PATH_CAP)
}

pub fn simulate_path_capped(config: &UrnConfig, n: u64, seed: u64, cap: u64) -> Result<UrnPath> {
    let mut rng = crate::rng::stream_rng(seed, 0);
    simulate_with(config, n, seed, cap, &mut rng)
}

pub(crate) fn simulate_with<R: Rng + ?Sized>(
    config: &UrnConfig,
    n: u64,
    seed: u64,
    cap: u64,
    rng: &mut R,
) -> Result<UrnPath> {
    check_cap(n, cap)?;
    check_count_growth(config, n)?;
    let mut states = Vec::with_capacity(n as usize + 1);
    let mut steps = Vec::with_capacity(n as usize);
    let mut state = config.initial_state();
    states.push(state);
    for _ in 0..n {
        let (next, record) = urn_step(&state, config, rng);
        states.push(next);
        steps.push(record);
        state = next;
    }
    Ok(UrnPath {
        config: config.clone(),
        seed,
        states,
        steps,
    })
}

/// Replays a fixed outcome sequence.
pub fn replay_path(config: &UrnConfig, outcomes: &[Outcome]) -> UrnPath {
    let mut state = config.initial_state();
    let mut states = vec![state];
    let mut steps = Vec::with_capacity(outcomes.len());
    for &o in outcomes {
        let (next, record) = apply_outcome(&state, config, o);
        states.push(next);
        steps.push(record);
        state = next;
    }
    UrnPath {
        config: config.clone(),
        seed: 0,
        states,
        steps,
    }
}

/// Integer counts stay exact only below 2^53.
pub(crate) fn check_count_growth(config: &UrnConfig, n: u64) -> Result<()> {
    if !config.is_integral() {
        return Ok(());
    }
    let worst = config.t0() + n as f64 * config.matrix.max_column_sum();
    if worst >= EXACT_INTEGER_LIMIT {
        return Err(UrnError::ResourceCap {
            requested: n,
            cap: ((EXACT_INTEGER_LIMIT - config.t0()) / config.matrix.max_column_sum()) as u64,
        });
    }
    Ok(())
}

/// One row of the two-outcome table behind the conditional moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeBranch {
    pub outcome: Outcome,
    pub probability: f64,
    pub l: f64,
    pub delta_m: f64,
    pub t_next: f64,
    pub dm_over_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementStats {
    pub p1: f64,
    pub cond_mean_l: f64,
    /// `E[dM_{n+1} / T_{n+1} | F_n]`; nonzero only because the two outcomes
    /// lead to different totals.
    pub cond_mean_dm_over_t: f64,
    pub table: [OutcomeBranch; 2],
}

impl IncrementStats {
    /// `E[dM | F_n]` recomputed from the table; zero up to rounding.
    pub fn cond_mean_dm(&self) -> f64 {
        self.table.iter().map(|b| b.probability * b.delta_m).sum()
    }
}

/// Exact conditional moments by enumerating both outcomes.
pub fn conditional_increment_stats(state: &UrnState, config: &UrnConfig) -> IncrementStats {
    let matrix = &config.matrix;
    let p1 = draw_probability(state, &config.skew);
    let (l1, l2) = increments(state.z, matrix);
    let cond_mean_l = p1 * l1 + (1.0 - p1) * l2;
    let branch = |outcome, probability: f64, l: f64, added: f64| {
        let t_next = state.t + added;
        let delta_m = l - cond_mean_l;
        OutcomeBranch {
            outcome,
            probability,
            l,
            delta_m,
            t_next,
            dm_over_t: delta_m / t_next,
        }
    };
    let e1 = branch(Outcome::E1, p1, l1, matrix.h1());
    let e2 = branch(Outcome::E2, 1.0 - p1, l2, matrix.h2());
    IncrementStats {
        p1,
        cond_mean_l,
        cond_mean_dm_over_t: e1.probability * e1.dm_over_t + e2.probability * e2.dm_over_t,
        table: [e1, e2],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_matrix() -> ReplacementMatrix {
        ReplacementMatrix::from_rows([[2.0, 4.0], [3.0, 6.0]]).unwrap()
    }

    fn paper_config() -> UrnConfig {
        UrnConfig::new(paper_matrix(), SkewSpec::identity(), (1.0, 1.0)).unwrap()
    }

    #[test]
    fn paper_example_passes_all_conditions() {
        let report = validate_config(&paper_matrix(), &SkewSpec::identity(), (1.0, 1.0));
        assert!(report.passed());
        assert!(report.checks.iter().all(|c| c.status == CheckStatus::Pass));
    }

    #[test]
    fn identity_matrix_fails_c2_and_c4() {
        let m = ReplacementMatrix::from_rows([[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let report = validate_config(&m, &SkewSpec::identity(), (1.0, 1.0));
        assert_eq!(report.get("C2").unwrap().status, CheckStatus::Fail);
        assert_eq!(report.get("C4").unwrap().status, CheckStatus::Fail);
        assert!(UrnConfig::new(m, SkewSpec::identity(), (1.0, 1.0)).is_err());
    }

    #[test]
    fn empty_initial_color_is_flagged_not_failed() {
        let skew = SkewSpec::power(2.0).unwrap();
        let report = validate_config(&paper_matrix(), &skew, (0.0, 5.0));
        assert!(report.passed());
        assert_eq!(report.get("C3").unwrap().status, CheckStatus::Flag);
        assert_eq!(
            report.get("C3:initial-counts").unwrap().status,
            CheckStatus::Flag
        );
        let config = UrnConfig::new(paper_matrix(), skew, (0.0, 5.0)).unwrap();
        assert_eq!(draw_probability(&config.initial_state(), &config.skew), 0.0);
    }

    #[test]
    fn non_monotone_table_fails_c1() {
        let skew =
            SkewSpec::table(vec![(0.0, 0.0), (0.4, 0.6), (0.6, 0.5), (1.0, 1.0)], false).unwrap();
        let report = validate_config(&paper_matrix(), &skew, (1.0, 1.0));
        assert_eq!(report.get("C1:monotone").unwrap().status, CheckStatus::Fail);
        assert!(!report.passed());
    }

    #[test]
    fn sublinear_power_fails_derivative_check() {
        let skew = SkewSpec::power(0.5).unwrap();
        let report = validate_config(&paper_matrix(), &skew, (1.0, 1.0));
        assert_eq!(
            report.get("C1:derivatives").unwrap().status,
            CheckStatus::Fail
        );
    }

    #[test]
    fn table_construction_errors() {
        assert!(SkewSpec::table(vec![(0.0, 0.0)], false).is_err());
        assert!(SkewSpec::table(vec![(0.1, 0.0), (1.0, 1.0)], false).is_err());
        assert!(
            SkewSpec::table(vec![(0.0, 0.0), (0.5, 0.2), (0.5, 0.3), (1.0, 1.0)], false).is_err()
        );
        assert!(ReplacementMatrix::new(-1.0, 1.0, 1.0, 1.0).is_err());
        assert!(SkewSpec::power(f64::NAN).is_err());
    }

    #[test]
    fn skew_eval_examples() {
        assert_eq!(SkewSpec::identity().eval(0.3).unwrap(), 0.3);
        assert_eq!(SkewSpec::power(2.0).unwrap().eval(0.5).unwrap(), 0.25);
        assert_eq!(
            SkewSpec::mirror_power(2.0).unwrap().eval(0.5).unwrap(),
            0.75
        );
        assert!(SkewSpec::identity().eval(1.5).is_err());
        assert!(SkewSpec::identity().eval(-0.1).is_err());
    }

    #[test]
    fn skew_derivative_examples() {
        assert_eq!(SkewSpec::identity().derivative(0.7).unwrap(), 1.0);
        assert_eq!(SkewSpec::power(2.0).unwrap().derivative(0.0).unwrap(), 0.0);
        assert_eq!(SkewSpec::power(3.0).unwrap().derivative(0.5).unwrap(), 0.75);
        assert!(SkewSpec::power(2.0).unwrap().derivative(1.1).is_err());
    }

    #[test]
    fn table_interpolation_and_knot_slopes() {
        let skew = SkewSpec::table(vec![(0.0, 0.0), (0.5, 0.8), (1.0, 1.0)], true).unwrap();
        assert!((skew.eval(0.25).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(skew.eval(0.5).unwrap(), 0.8);
        assert_eq!(skew.eval(1.0).unwrap(), 1.0);
        // right segment at the interior knot, left segment at 1
        assert!((skew.derivative(0.5).unwrap() - 0.4).abs() < 1e-15);
        assert!((skew.derivative(0.0).unwrap() - 1.6).abs() < 1e-15);
        assert!((skew.derivative(1.0).unwrap() - 0.4).abs() < 1e-15);
        assert!(skew.is_concave());
        let convex = SkewSpec::table(vec![(0.0, 0.0), (0.5, 0.2), (1.0, 1.0)], false).unwrap();
        assert!(!convex.is_concave());
    }

    #[test]
    fn draw_probability_examples() {
        let skew = SkewSpec::power(2.0).unwrap();
        assert_eq!(draw_probability(&UrnState::new(0, 3.0, 0.0), &skew), 1.0);
        assert_eq!(
            draw_probability(&UrnState::new(0, 1.0, 1.0), &SkewSpec::identity()),
            0.5
        );
        let p = draw_probability(&UrnState::new(0, 1.0, 3.0), &skew);
        assert!((p - 0.1).abs() < 1e-15, "{p}");
    }

    #[test]
    fn forced_steps_add_the_drawn_column() {
        let config = paper_config();
        let s0 = config.initial_state();
        let (s1, r1) = apply_outcome(&s0, &config, Outcome::E1);
        assert_eq!((s1.y1, s1.y2, s1.t), (3.0, 4.0, 7.0));
        assert_eq!(s1.z, 3.0 / 7.0);
        assert_eq!(r1.gamma, 1.0 / 7.0);
        let (s2, _) = apply_outcome(&s0, &config, Outcome::E2);
        assert_eq!((s2.y1, s2.y2, s2.t), (5.0, 7.0, 12.0));
        assert_eq!(s2.z, 5.0 / 12.0);
        assert_eq!(r1.cond_mean_l, -0.75);
        assert_eq!(r1.delta_m, r1.l - r1.cond_mean_l);
    }

    #[test]
    fn replay_two_steps() {
        let path = replay_path(&paper_config(), &[Outcome::E1, Outcome::E2]);
        let last = path.final_state();
        assert_eq!((last.y1, last.y2, last.t), (7.0, 10.0, 17.0));
    }

    #[test]
    fn zero_step_path_is_initial_state() {
        let path = simulate_path(&paper_config(), 0, 11).unwrap();
        assert_eq!(path.states.len(), 1);
        assert!(path.steps.is_empty());
    }

    #[test]
    fn simulate_respects_cap() {
        let err = simulate_path_capped(&paper_config(), 101, 1, 100).unwrap_err();
        assert!(matches!(
            err,
            UrnError::ResourceCap {
                requested: 101,
                cap: 100
            }
        ));
    }

    #[test]
    fn conditional_stats_two_outcome_definition() {
        let config = paper_config();
        let state = UrnState::new(4, 7.0, 10.0);
        let s = conditional_increment_stats(&state, &config);
        let p1 = s.p1;
        let dm1 = s.table[0].delta_m;
        let dm2 = s.table[1].delta_m;
        let expected = p1 * dm1 / (17.0 + 5.0) + (1.0 - p1) * dm2 / (17.0 + 10.0);
        assert_eq!(s.cond_mean_dm_over_t, expected);
        assert!(s.cond_mean_dm().abs() < 1e-15);
    }

    #[test]
    fn balanced_denominators_give_zero_conditional_mean() {
        let m = ReplacementMatrix::from_rows([[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let config = UrnConfig::unchecked(m, SkewSpec::power(2.0).unwrap(), (2.0, 3.0)).unwrap();
        let path = simulate_path(&config, 200, 5).unwrap();
        for state in &path.states {
            let s = conditional_increment_stats(state, &config);
            assert!(s.cond_mean_dm_over_t.abs() < 1e-15);
        }
    }

    #[test]
    fn path_follows_drift_plus_martingale_form() {
        let config = paper_config();
        let path = simulate_path(&config, 5000, 3).unwrap();
        let (h1, h2) = (config.matrix.h1(), config.matrix.h2());
        let mut k = 0.0;
        for (i, (w, step)) in path.states.windows(2).zip(&path.steps).enumerate() {
            let lhs = w[1].z - w[0].z;
            let rhs = (step.cond_mean_l + step.delta_m) * step.gamma;
            assert!((lhs - rhs).abs() <= 1e-12, "step {i}: {lhs} vs {rhs}");
            assert!(step.delta_m.abs() <= 4.0 * (h1 + h2));
            if step.outcome == Outcome::E1 {
                k += 1.0;
            }
            let n = (i + 1) as f64;
            assert_eq!(w[1].t, config.t0() + k * h1 + (n - k) * h2);
        }
    }
}
