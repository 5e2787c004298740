//! The mean-field drift `h`, its equilibria, and the sufficient conditions
//! under which `h` is non-increasing.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UrnError};
use crate::model::{ReplacementMatrix, SkewFamily, SkewSpec};

pub const DEFAULT_GRID: usize = 4097;
pub const DEFAULT_TOL: f64 = 1e-12;

/// Slack allowed when deciding that `h` increased between grid points.
pub const MONOTONE_SLACK: f64 = 1e-12;

const STABILITY_WINDOW: f64 = 1e-3;
const STABILITY_POINTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftProfile {
    pub matrix: ReplacementMatrix,
    pub skew: SkewSpec,
    pub grid_resolution: usize,
}

impl DriftProfile {
    pub fn new(matrix: ReplacementMatrix, skew: SkewSpec) -> Self {
        Self {
            matrix,
            skew,
            grid_resolution: DEFAULT_GRID,
        }
    }

    pub fn with_grid(
        matrix: ReplacementMatrix,
        skew: SkewSpec,
        grid_resolution: usize,
    ) -> Result<Self> {
        if grid_resolution < 2 {
            return Err(UrnError::Parameter(format!(
                "grid resolution {grid_resolution} must be at least 2"
            )));
        }
        Ok(Self {
            matrix,
            skew,
            grid_resolution,
        })
    }

    pub fn eval(&self, y: f64) -> Result<f64> {
        drift_eval(self, y)
    }

    pub fn derivative(&self, y: f64) -> Result<f64> {
        drift_derivative(self, y)
    }

    pub(crate) fn value(&self, y: f64) -> f64 {
        drift_value(&self.matrix, &self.skew, y)
    }

    fn grid(&self) -> impl Iterator<Item = f64> + '_ {
        let last = (self.grid_resolution - 1) as f64;
        (0..self.grid_resolution).map(move |i| i as f64 / last)
    }
}

pub(crate) fn drift_value(matrix: &ReplacementMatrix, skew: &SkewSpec, y: f64) -> f64 {
    let fy = skew.value(y);
    let fc = skew.value(1.0 - y);
    ((matrix.h11 - y * matrix.h1()) * fy + (matrix.h12 - y * matrix.h2()) * fc) / (fy + fc)
}

/// `h(y)` on `[0, 1]`.
pub fn drift_eval(profile: &DriftProfile, y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(UrnError::domain_unit("y", y));
    }
    Ok(profile.value(y))
}

/// Closed-form `h'(y)`:
///
/// `([-H1 f(y) - H2 f(1-y)] D + [f'(y) f(1-y) + f(y) f'(1-y)] [(H11 - y H1) - (H12 - y H2)]) / D^2`
/// with `D = f(y) + f(1-y)`.
pub fn drift_derivative(profile: &DriftProfile, y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(UrnError::domain_unit("y", y));
    }
    let m = &profile.matrix;
    let s = &profile.skew;
    let (h1, h2) = (m.h1(), m.h2());
    let fy = s.value(y);
    let fc = s.value(1.0 - y);
    let dfy = s.slope(y);
    let dfc = s.slope(1.0 - y);
    let d = fy + fc;
    let spread = (m.h11 - y * h1) - (m.h12 - y * h2);
    Ok(((-h1 * fy - h2 * fc) * d + (dfy * fc + fy * dfc) * spread) / (d * d))
}

/// Endpoints of `I*`, the interval holding every zero of `h`.
pub fn interval_istar(matrix: &ReplacementMatrix) -> (f64, f64) {
    let a = matrix.h11 / matrix.h1();
    let b = matrix.h12 / matrix.h2();
    (a.min(b), a.max(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityVerdict {
    pub non_increasing: bool,
    /// Largest increase `h(y_{i+1}) - h(y_i)` found on the grid.
    pub worst_increase: f64,
    pub worst_pair: Option<(f64, f64)>,
    pub grid_points: usize,
    pub note: String,
}

const CLOSED_INTERVAL_NOTE: &str = "checked on the closed interval [0, 1]; \
the large deviation argument only uses monotonicity on (0, 1)";

/// Grid test that `h` never increases by more than [`MONOTONE_SLACK`].
pub fn monotonicity_check(profile: &DriftProfile) -> MonotonicityVerdict {
    let ys: Vec<f64> = profile.grid().collect();
    let hs: Vec<f64> = ys.iter().map(|&y| profile.value(y)).collect();
    let mut worst_increase = f64::NEG_INFINITY;
    let mut worst_pair = None;
    for i in 0..ys.len() - 1 {
        let rise = hs[i + 1] - hs[i];
        if rise > worst_increase {
            worst_increase = rise;
            worst_pair = Some((ys[i], ys[i + 1]));
        }
    }
    let non_increasing = worst_increase <= MONOTONE_SLACK;
    MonotonicityVerdict {
        non_increasing,
        worst_increase,
        worst_pair: if non_increasing { None } else { worst_pair },
        grid_points: ys.len(),
        note: CLOSED_INTERVAL_NOTE.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub istar_lo: f64,
    pub istar_hi: f64,
    /// Set only when exactly one root was found.
    pub y_star: Option<f64>,
    pub h_at_root: Option<f64>,
    pub h_prime_at_root: Option<f64>,
    pub monotonicity: MonotonicityVerdict,
    /// Sign pattern: `h > 0` just left of the root and `h < 0` just right.
    pub stable: bool,
    pub roots_found: Vec<f64>,
    /// Every reported root lies in `I*` (within the tolerance).
    pub roots_in_istar: bool,
}

impl EquilibriumReport {
    pub fn unique(&self) -> bool {
        self.y_star.is_some()
    }
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut f_lo = f(lo);
    if f_lo == 0.0 {
        return lo;
    }
    if f(hi) == 0.0 {
        return hi;
    }
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Locates the zeros of `h`.
///
/// A non-increasing `h` is bisected on `[0, 1]` directly. Otherwise every
/// sign change on the grid is refined and listed; `y_star` stays empty
/// unless exactly one survives.
pub fn equilibrium_solve(profile: &DriftProfile, tol: f64) -> Result<EquilibriumReport> {
    if !(tol > 0.0) {
        return Err(UrnError::Parameter(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let (istar_lo, istar_hi) = interval_istar(&profile.matrix);
    let monotonicity = monotonicity_check(profile);
    let h = |y: f64| profile.value(y);

    let mut roots = Vec::new();
    if monotonicity.non_increasing && h(0.0) > 0.0 && h(1.0) < 0.0 {
        roots.push(bisect(h, 0.0, 1.0, tol));
    } else {
        let ys: Vec<f64> = profile.grid().collect();
        let hs: Vec<f64> = ys.iter().map(|&y| h(y)).collect();
        for i in 0..ys.len() - 1 {
            if hs[i] == 0.0 {
                roots.push(ys[i]);
            } else if hs[i + 1] != 0.0 && (hs[i] > 0.0) != (hs[i + 1] > 0.0) {
                roots.push(bisect(h, ys[i], ys[i + 1], tol));
            }
        }
        if hs[ys.len() - 1] == 0.0 {
            roots.push(1.0);
        }
    }

    let roots_in_istar = roots
        .iter()
        .all(|&r| r >= istar_lo - tol && r <= istar_hi + tol);
    let y_star = if roots.len() == 1 {
        Some(roots[0])
    } else {
        None
    };
    let stable = y_star.is_some_and(|r| sign_pattern_holds(profile, r));

    Ok(EquilibriumReport {
        istar_lo,
        istar_hi,
        y_star,
        h_at_root: y_star.map(h),
        h_prime_at_root: y_star.and_then(|r| drift_derivative(profile, r).ok()),
        monotonicity,
        stable,
        roots_found: roots,
        roots_in_istar,
    })
}

fn sign_pattern_holds(profile: &DriftProfile, root: f64) -> bool {
    (1..=STABILITY_POINTS).all(|j| {
        let d = STABILITY_WINDOW * j as f64 / STABILITY_POINTS as f64;
        let left = root - d;
        let right = root + d;
        (left < 0.0 || profile.value(left) > 0.0) && (right > 1.0 || profile.value(right) < 0.0)
    })
}

/// One inequality from the sufficient-condition remarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs <= rhs`
    pub holds: bool,
}

impl Inequality {
    fn le(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            holds: lhs <= rhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadraticCase {
    /// `y0 <= 0`
    LeftOfInterval,
    /// `y0 >= 1`
    RightOfInterval,
    /// `y0` in `(0, 1)`
    Interior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemarkReport {
    pub family: String,
    /// Inequalities that together give a non-increasing `h`.
    pub inequalities: Vec<Inequality>,
    /// Minimizer of `P3` (quadratic skew only).
    pub y0: Option<f64>,
    pub case: Option<QuadraticCase>,
    /// All three endpoint-and-vertex conditions together (quadratic skew).
    pub discussion1_pass: Option<bool>,
    /// The case-specific conditions for where the vertex lies (quadratic skew).
    pub case_pass: Option<bool>,
    /// `H11 < H12` and `H22 < H21`, sufficient for any skew.
    pub general_sufficient: bool,
    /// `H11/H1 <= H12/H2`, or the skew is declared and detected concave.
    pub uniqueness_precondition: bool,
    pub ordered_ratios: bool,
    pub passed: bool,
}

/// Evaluates the closed-form sufficient conditions for `f(y) = y` and
/// `f(y) = y^2`.
pub fn remark_condition_checks(
    matrix: &ReplacementMatrix,
    skew: &SkewSpec,
) -> Result<RemarkReport> {
    let m = matrix;
    let (h1, h2) = (m.h1(), m.h2());
    let ordered_ratios = m.h11 / h1 <= m.h12 / h2;
    let uniqueness_precondition = ordered_ratios || (skew.concave_declared && skew.is_concave());
    let general_sufficient = m.h11 < m.h12 && m.h22 < m.h21;
    let at_zero = Inequality::le("H11 <= H22 + 2 H12", m.h11, m.h22 + 2.0 * m.h12);
    let at_one = Inequality::le("H22 <= H11 + 2 H21", m.h22, m.h11 + 2.0 * m.h21);

    match skew.family {
        SkewFamily::Identity => {
            let passed = at_zero.holds && at_one.holds && uniqueness_precondition;
            Ok(RemarkReport {
                family: "identity".into(),
                inequalities: vec![at_one, at_zero],
                y0: None,
                case: None,
                discussion1_pass: None,
                case_pass: None,
                general_sufficient,
                uniqueness_precondition,
                ordered_ratios,
                passed,
            })
        }
        SkewFamily::Power(2.0) => {
            let y0 = (3.0 * h2 - h1) / (2.0 * (h1 + h2));
            let vertex = Inequality::le(
                "5 H2^2 + H1^2 <= 10 H1 H2 + 4 (H12 - H11)(H1 + H2)",
                5.0 * h2 * h2 + h1 * h1,
                10.0 * h1 * h2 + 4.0 * (m.h12 - m.h11) * (h1 + h2),
            );
            let discussion1_pass = at_zero.holds && at_one.holds && vertex.holds;
            let (case, case_pass, mut inequalities) = if y0 <= 0.0 {
                let c = Inequality::le("3 H2 <= H1", 3.0 * h2, h1);
                let ok = c.holds && at_zero.holds;
                (QuadraticCase::LeftOfInterval, ok, vec![c, at_zero.clone()])
            } else if y0 >= 1.0 {
                let c = Inequality::le("3 H1 <= H2", 3.0 * h1, h2);
                let ok = c.holds && at_one.holds;
                (QuadraticCase::RightOfInterval, ok, vec![c, at_one.clone()])
            } else {
                let lo = Inequality::le("H1 / 3 <= H2", h1 / 3.0, h2);
                let hi = Inequality::le("H2 <= 3 H1", h2, 3.0 * h1);
                let ok = lo.holds && hi.holds && vertex.holds;
                (QuadraticCase::Interior, ok, vec![lo, hi, vertex.clone()])
            };
            if case != QuadraticCase::Interior {
                inequalities.push(vertex);
            }
            let passed = case_pass && uniqueness_precondition;
            Ok(RemarkReport {
                family: "power(2)".into(),
                inequalities,
                y0: Some(y0),
                case: Some(case),
                discussion1_pass: Some(discussion1_pass),
                case_pass: Some(case_pass),
                general_sufficient,
                uniqueness_precondition,
                ordered_ratios,
                passed,
            })
        }
        _ => Err(UrnError::Unsupported(format!(
            "closed-form remark checks exist for identity and power(2) skews, not {}",
            skew.family_name()
        ))),
    }
}

/// `P3(y) = (H1 + H2) y^2 + (H1 - 3 H2) y + H2 + H12 - H11`; nonnegative on
/// `[0, 1]` implies `h` non-increasing for the quadratic skew.
pub fn quadratic_p3(matrix: &ReplacementMatrix, y: f64) -> f64 {
    let (h1, h2) = (matrix.h1(), matrix.h2());
    (h1 + h2) * y * y + (h1 - 3.0 * h2) * y + h2 + matrix.h12 - matrix.h11
}
