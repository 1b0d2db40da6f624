use minilp::{ComparisonOp, OptimizationDirection, Problem};
use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize, Serializer};

use super::TrafficSolution;
use crate::error::{Error, Result};
use crate::network::{enumerate_maximal_schedules, NetworkSpec, ScheduleSet, SCHEMA_VERSION};

/// Largest explicit set handed to the hull LP.
const HULL_LP_LIMIT: usize = 20_000;

/// Loads within this distance of 1 count as on the boundary.
const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubcriticalStatus {
    Interior,
    Boundary,
    Supercritical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubcriticalReport {
    pub status: SubcriticalStatus,
    /// Smallest `s` with `rho / s` in the capacity region (`max <c, rho>` for
    /// constraint sets).
    pub load: f64,
    /// `1 - load`.
    pub margin: f64,
    /// Largest `e` with `(1 + e) rho` still in the capacity region, `1/load - 1`.
    pub scale_margin: f64,
    /// `"constraints"` or `"explicit_hull"`.
    pub method: String,
}

impl SubcriticalReport {
    fn from_load(load: f64, method: &str) -> Self {
        let status = if load < 1.0 - BOUNDARY_TOL {
            SubcriticalStatus::Interior
        } else if load <= 1.0 + BOUNDARY_TOL {
            SubcriticalStatus::Boundary
        } else {
            SubcriticalStatus::Supercritical
        };
        Self {
            status,
            load,
            margin: 1.0 - load,
            scale_margin: 1.0 / load - 1.0,
            method: method.into(),
        }
    }
}

/// Locates `rho` relative to the capacity region of the schedule set.
///
/// Constraint sets use the relaxed polytope `<c_r, x> <= 1`; explicit sets
/// solve a linear program over convex combinations of their maximal points.
pub fn subcritical_check(
    spec: &NetworkSpec,
    traffic: &TrafficSolution,
) -> Result<SubcriticalReport> {
    let rho = &traffic.rho_queue;
    match &spec.schedule_set {
        ScheduleSet::Constraints { rows, .. } => {
            let load = rows.iter().map(|r| r.load_f64(rho)).fold(0.0, f64::max);
            Ok(SubcriticalReport::from_load(load, "constraints"))
        }
        set @ ScheduleSet::Explicit { .. } => {
            let maximal = enumerate_maximal_schedules(set, HULL_LP_LIMIT)?;
            Ok(SubcriticalReport::from_load(
                hull_load(&maximal, rho)?,
                "explicit_hull",
            ))
        }
    }
}

/// `1 / t*` where `t* = max { t : t rho <= sum_i mu_i s_i, sum_i mu_i <= 1, mu >= 0 }`.
///
/// With a downward-closed set this is the smallest scaling putting `rho`
/// inside the convex hull of `schedules`.
pub fn hull_load(schedules: &[Vec<u32>], rho: &[f64]) -> Result<f64> {
    if rho.iter().all(|r| *r <= 0.0) {
        return Ok(0.0);
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let t = lp.add_var(1.0, (0.0, f64::INFINITY));
    let mu: Vec<_> = schedules
        .iter()
        .map(|_| lp.add_var(0.0, (0.0, f64::INFINITY)))
        .collect();
    for (j, &r) in rho.iter().enumerate() {
        if r <= 0.0 {
            continue;
        }
        let mut row = vec![(t, r)];
        for (s, &m) in schedules.iter().zip(&mu) {
            if s[j] > 0 {
                row.push((m, -f64::from(s[j])));
            }
        }
        lp.add_constraint(&row, ComparisonOp::Le, 0.0);
    }
    let all: Vec<_> = mu.iter().map(|&m| (m, 1.0)).collect();
    lp.add_constraint(&all, ComparisonOp::Le, 1.0);
    let sol = lp.solve().map_err(|e| Error::Lp(e.to_string()))?;
    let tstar = sol.objective();
    Ok(if tstar > 0.0 {
        1.0 / tstar
    } else {
        f64::INFINITY
    })
}

pub type Exact = Ratio<i128>;

/// Parses `"7/12"`, `"3"` or `"0.5"` into an exact fraction.
pub fn parse_fraction(s: &str) -> Result<Exact> {
    let s = s.trim();
    let bad = || Error::InvalidParameter(format!("cannot parse `{s}` as a fraction"));
    if let Some((n, d)) = s.split_once('/') {
        let n: i128 = n.trim().parse().map_err(|_| bad())?;
        let d: i128 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || !frac.chars().all(|c| c.is_ascii_digit()) || frac.len() > 30 {
            return Err(bad());
        }
        let neg = int.starts_with('-');
        let int_part: i128 = if int.is_empty() || int == "-" {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let den = 10i128.pow(frac.len() as u32);
        let f: i128 = frac.parse().map_err(|_| bad())?;
        let mag = int_part.abs() * den + f;
        return Ok(Ratio::new(if neg { -mag } else { mag }, den));
    }
    s.parse::<i128>()
        .map(Ratio::from_integer)
        .map_err(|_| bad())
}

/// An exact fraction with its floating value, as written to JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactValue {
    pub exact: String,
    pub value: f64,
}

impl From<Exact> for ExactValue {
    fn from(r: Exact) -> Self {
        Self {
            exact: r.to_string(),
            value: r.to_f64().unwrap_or(f64::NAN),
        }
    }
}

fn ser_exact<S: Serializer>(r: &Exact, s: S) -> std::result::Result<S::Ok, S::Error> {
    ExactValue::from(*r).serialize(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TheoremKind {
    /// MaxWeight counterexample network.
    Thm1,
    /// LQFS batch-weight variant.
    Thm6,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: String,
    pub statement: String,
    #[serde(serialize_with = "ser_exact")]
    pub lhs: Exact,
    #[serde(serialize_with = "ser_exact")]
    pub rhs: Exact,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub schema_version: u32,
    pub kind: TheoremKind,
    #[serde(serialize_with = "ser_exact")]
    pub a: Exact,
    pub nu: i128,
    pub j: i128,
    #[serde(serialize_with = "ser_exact")]
    pub lower_bound: Exact,
    #[serde(serialize_with = "ser_exact")]
    pub upper_bound: Exact,
    /// `a (1 + 1/nu)`.
    #[serde(serialize_with = "ser_exact")]
    pub r_rho: Exact,
    /// Supremum of admissible cycle growth factors.
    #[serde(serialize_with = "ser_exact")]
    pub gamma_max: Exact,
    pub checks: Vec<ConditionCheck>,
    pub all_pass: bool,
}

impl ConditionReport {
    /// Plain-text table, one inequality per line.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:?} conditions at a = {}, nu = {}, J = {}\n",
            self.kind, self.a, self.nu, self.j
        );
        for c in &self.checks {
            out.push_str(&format!(
                "  [{}] {:<28} {:>12} vs {:<12} ({:.6} vs {:.6})\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.statement,
                c.lhs.to_string(),
                c.rhs.to_string(),
                c.lhs.to_f64().unwrap_or(f64::NAN),
                c.rhs.to_f64().unwrap_or(f64::NAN),
            ));
        }
        out.push_str(&format!(
            "  gamma_max = {} ({:.6}); all conditions {}\n",
            self.gamma_max,
            self.gamma_max.to_f64().unwrap_or(f64::NAN),
            if self.all_pass { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Evaluates the parameter inequalities of the MaxWeight (`Thm1`) or LQFS
/// (`Thm6`) counterexample in exact rational arithmetic.
pub fn theorem_condition_check(kind: TheoremKind, a: Exact, nu: i128, j: i128) -> ConditionReport {
    let one = Exact::one();
    let nu_r = Exact::from_integer(nu);
    let j_r = Exact::from_integer(j);
    let safe_div = |n: Exact, d: Exact| if d.is_zero() { Exact::zero() } else { n / d };

    let (lower, upper, gamma_den) = match kind {
        TheoremKind::Thm1 => (
            safe_div(j_r, Exact::from_integer(2 * j - nu)),
            one - safe_div(
                (j_r + nu_r) * (j_r + nu_r * nu_r),
                nu_r * (j_r * j_r + j_r + nu_r * nu_r),
            ),
            one - a + safe_div(a * nu_r, j_r),
        ),
        TheoremKind::Thm6 => (
            safe_div(j_r, Exact::from_integer(2 * j - 1)),
            one - safe_div((j_r + one) * (j_r + nu_r), nu_r * j_r * j_r + j_r + nu_r),
            one - a + safe_div(a, j_r),
        ),
    };
    let r_rho = a * (one + safe_div(one, nu_r));
    let gamma_max = safe_div(a, gamma_den);

    let check = |name: &str, statement: &str, lhs: Exact, rhs: Exact| ConditionCheck {
        name: name.into(),
        statement: statement.into(),
        lhs,
        rhs,
        pass: lhs < rhs,
    };
    let (lower_stmt, upper_stmt) = match kind {
        TheoremKind::Thm1 => ("J/(2J-nu) < a", "a < 1-(J+nu)(J+nu^2)/(nu(J^2+J+nu^2))"),
        TheoremKind::Thm6 => ("J/(2J-1) < a", "a < 1-(J+1)(J+nu)/(nu J^2+J+nu)"),
    };
    let checks = vec![
        check("nu_above_one", "1 < nu", one, nu_r),
        check("nu_below_j", "nu < J", nu_r, j_r),
        check("a_lower", lower_stmt, lower, a),
        check("a_upper", upper_stmt, a, upper),
        check("subcritical", "a(1+1/nu) < 1", r_rho, one),
        check("gamma_interval", "1 < gamma_max", one, gamma_max),
    ];
    let all_pass = checks.iter().all(|c| c.pass);
    ConditionReport {
        schema_version: SCHEMA_VERSION,
        kind,
        a,
        nu,
        j,
        lower_bound: lower,
        upper_bound: upper,
        r_rho,
        gamma_max,
        checks,
        all_pass,
    }
}
