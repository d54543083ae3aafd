//! Closed-form bounds: Chernoff tails, profitability conditions, the
//! honest-coalition lower bound, the under-query/abandon upper bound with its
//! case functions, the EVP gap `ε′`, and the EVP inequality.
//!
//! Bounds are evaluated in double-double arithmetic.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use twofloat::TwoFloat;

use crate::types::{Amount, ProtocolParams, Rational};

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum DomainError {
    #[error("Chernoff bound needs mean > 0 and 0 < delta < 1, got mean = {mean}, delta = {delta}")]
    Chernoff { mean: f64, delta: f64 },
}

fn check(mean: f64, delta: f64) -> Result<(), DomainError> {
    if mean > 0.0 && delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(DomainError::Chernoff { mean, delta })
    }
}

/// `Pr[X ≥ (1+δ)μ] ≤ exp(−δ²μ/3)`.
pub fn chernoff_upper(mean: f64, delta: f64) -> Result<f64, DomainError> {
    check(mean, delta)?;
    Ok((-delta * delta * mean / 3.0).exp())
}

/// `Pr[X ≤ (1−δ)μ] ≤ exp(−δ²μ/2)`.
pub fn chernoff_lower(mean: f64, delta: f64) -> Result<f64, DomainError> {
    check(mean, delta)?;
    Ok((-delta * delta * mean / 2.0).exp())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Two,
    Natural,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Two => x.log2(),
            LogBase::Natural => x.ln(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Claim1,
    Claim2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseFn {
    F,
    G,
    H,
}

fn tf(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

fn rat(r: Rational) -> TwoFloat {
    tf(*r.numer() as f64) / tf(*r.denom() as f64)
}

fn amt(a: Amount) -> TwoFloat {
    rat(a.0)
}

/// Parameter symbols lifted to double-double.
struct Sym {
    n: TwoFloat,
    q: TwoFloat,
    big_n: TwoFloat,
    p_f: TwoFloat,
    p_b: TwoFloat,
    r_f: TwoFloat,
    lc: TwoFloat,
    fs_tx: TwoFloat,
    ro: TwoFloat,
    ltx: TwoFloat,
    /// `log κ`.
    l: TwoFloat,
    /// `1 − (1 − p_b)^{nq}`.
    hit: TwoFloat,
    /// `(1 − p_b)^q`.
    x_q: TwoFloat,
}

impl Sym {
    fn new(p: &ProtocolParams, base: LogBase) -> Self {
        let x = tf(1.0) - rat(p.p_b.0);
        let nq = p.n as i32 * p.q as i32;
        Sym {
            n: tf(p.n as f64),
            q: tf(p.q as f64),
            big_n: tf(p.big_n as f64),
            p_f: rat(p.p_f.0),
            p_b: rat(p.p_b.0),
            r_f: amt(p.reward_f),
            lc: amt(p.costs.lc),
            fs_tx: amt(p.costs.fs) + amt(p.costs.tx),
            ro: amt(p.costs.ro),
            ltx: amt(p.costs.ltx),
            l: tf(base.log(p.kappa as f64)),
            hit: tf(1.0) - x.powi(nq),
            x_q: x.powi(p.q as i32),
        }
    }

    fn frac(&self) -> TwoFloat {
        (self.n - 1.0) / self.n
    }

    fn l2(&self) -> TwoFloat {
        self.l * self.l
    }

    /// `log κ / (N n)^{1/4}`.
    fn quarter(&self) -> TwoFloat {
        self.l / (self.big_n * self.n).sqrt().sqrt()
    }

    fn lc_sum(&self) -> TwoFloat {
        self.lc + self.fs_tx
    }

    /// Cost terms shared by every upper bound.
    fn upper_costs(&self) -> TwoFloat {
        let s = self;
        s.frac() * (tf(1.0) - s.l / s.big_n.sqrt()) * (s.big_n - 1.0) * s.hit * s.lc
            + s.frac() * s.big_n * s.fs_tx
            + s.big_n * (s.n - 1.0) * s.q * s.ro
    }

    /// `(n−1)/n·(1 − log κ/√N)(N−1)C_lc + (n−1)/n·N(C_fs + C_tx)`.
    fn case_c_costs(&self) -> TwoFloat {
        let s = self;
        s.frac() * (tf(1.0) - s.l / s.big_n.sqrt()) * (s.big_n - 1.0) * s.lc + s.frac() * s.big_n * s.fs_tx
    }
}

/// `num / den`, with `0 / 0 = 0`. Negative denominators are kept.
fn literal_ratio(num: TwoFloat, den: TwoFloat) -> f64 {
    if num == tf(0.0) {
        0.0
    } else {
        f64::from(num / den)
    }
}

/// Truth values of the hypotheses, evaluated literally.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ConditionFlags {
    pub theorem_i: bool,
    pub theorem_ii: bool,
    pub theorem_iii: bool,
    pub claim1_i: bool,
    pub claim2_i: bool,
    pub delta_in_range: bool,
    /// Both `1 − log κ/√n` and `1 − log κ/n^{1/4}` are positive.
    pub chernoff_factor_positive: bool,
    /// `p_f R_f > 2 C_ro`, which makes the case-function slopes positive.
    pub case_slope_positive: bool,
}

impl ConditionFlags {
    pub fn theorem(&self) -> bool {
        self.theorem_i && self.theorem_ii && self.theorem_iii && self.delta_in_range
    }
}

/// Right-hand side of the regime's profitability inequality.
pub fn profitability_threshold(p: &ProtocolParams, regime: Regime, base: LogBase) -> f64 {
    let s = Sym::new(p, base);
    match regime {
        Regime::Claim1 => literal_ratio(s.lc_sum(), (tf(1.0) - s.l / s.n.sqrt()) * s.n * s.q),
        Regime::Claim2 => {
            let first = literal_ratio(s.lc_sum(), (tf(1.0) - s.l / s.n.sqrt().sqrt()) * s.n.sqrt() * s.q);
            let second = f64::from((s.lc_sum() / ((s.n - 1.0) * s.q) + s.ro) * 3.0);
            first.max(second)
        }
    }
}

/// Claim 1 uses `≥`, Claim 2 uses `>` and also needs `p_f < 1/2`.
pub fn profitability_condition(p: &ProtocolParams, regime: Regime, base: LogBase) -> bool {
    let lhs = f64::from(rat(p.p_f.0) * amt(p.reward_f));
    let rhs = profitability_threshold(p, regime, base);
    match regime {
        Regime::Claim1 => lhs >= rhs,
        Regime::Claim2 => lhs > rhs && p.p_f.0 < Rational::new(1, 2),
    }
}

/// Right-hand side of theorem condition (i).
pub fn theorem_threshold(p: &ProtocolParams, base: LogBase) -> f64 {
    let s = Sym::new(p, base);
    literal_ratio(s.lc_sum(), (tf(1.0) - s.l / s.n.sqrt().sqrt()) * s.n.sqrt() * s.q) + f64::from(s.ro)
}

/// `p_b = Ω(1/(nq))` read as `p_b ≥ c/(nq)`.
pub fn block_rate_condition(p: &ProtocolParams, c: f64) -> bool {
    p.p_b.to_f64() >= c / (p.n as f64 * p.q as f64)
}

pub fn condition_flags(p: &ProtocolParams, delta: f64, base: LogBase, omega_c: f64) -> ConditionFlags {
    let s = Sym::new(p, base);
    let pfrf = f64::from(s.p_f * s.r_f);
    let l = f64::from(s.l);
    let n = p.n as f64;
    ConditionFlags {
        theorem_i: pfrf > theorem_threshold(p, base),
        theorem_ii: block_rate_condition(p, omega_c),
        theorem_iii: p.p_f.0 < Rational::new(1, 2),
        claim1_i: profitability_condition(p, Regime::Claim1, base),
        claim2_i: profitability_condition(p, Regime::Claim2, base),
        delta_in_range: delta >= f64::from(s.quarter()) && delta < 1.0,
        chernoff_factor_positive: 1.0 - l / n.sqrt() > 0.0 && 1.0 - l / n.sqrt().sqrt() > 0.0,
        case_slope_positive: pfrf > 2.0 * f64::from(s.ro),
    }
}

/// Lower bound on the honest coalition's profit.
pub fn claim1_lower_bound(p: &ProtocolParams, base: LogBase) -> f64 {
    f64::from(claim1_tf(&Sym::new(p, base)))
}

fn claim1_tf(s: &Sym) -> TwoFloat {
    let one = tf(1.0);
    (one - s.l / (s.big_n * s.n).sqrt()) * (s.big_n - s.l2()) * (s.n - 1.0) * s.q * s.p_f * s.r_f
        - s.frac() * (one + s.l / s.big_n.sqrt()) * s.big_n * s.hit * (s.lc + s.n * s.ltx)
        - (s.frac() * s.big_n + s.l2() / s.n) * s.fs_tx
        - s.big_n * (s.n - 1.0) * s.q * s.ro
}

/// The final upper bound dominating the three cases.
pub fn claim2_upper_bound(p: &ProtocolParams, delta: f64, base: LogBase) -> f64 {
    f64::from(claim2_tf(&Sym::new(p, base), tf(delta)))
}

fn claim2_tf(s: &Sym, delta: TwoFloat) -> TwoFloat {
    (delta + 1.0) * (s.big_n - 1.0) * (s.n - 1.0) * s.q * s.p_f * s.r_f + s.l2() * (s.n - 1.0) * s.q * s.r_f
        - s.upper_costs()
}

/// The three per-case upper bounds, cases 1 to 3.
pub fn case_bounds(p: &ProtocolParams, delta: f64, base: LogBase) -> [f64; 3] {
    let s = Sym::new(p, base);
    let e = tf(1.0) + s.quarter();
    let m = (s.n - 1.0) * s.q;
    let costs = s.upper_costs();
    [
        f64::from(e * (s.big_n - s.l2()) * m * s.p_f * s.r_f + (s.l2() - 1.0) * m * s.r_f - costs),
        f64::from(e * (s.big_n - s.l2() - 1.0) * m * s.p_f * s.r_f + s.l2() * m * s.r_f - costs),
        f64::from((tf(delta) + 1.0) * (s.big_n - 1.0) * m * s.p_f * s.r_f - costs),
    ]
}

/// Coefficients `(a, b, c)` and base `x` of `a·x^Q + b·Q + c`.
pub fn case_coefficients(p: &ProtocolParams, which: CaseFn, r_star: f64, delta: f64, base: LogBase) -> (f64, f64, f64, f64) {
    let (a, b, c, x) = case_tf(&Sym::new(p, base), which, tf(r_star), tf(delta));
    (f64::from(a), f64::from(b), f64::from(c), f64::from(x))
}

fn case_tf(s: &Sym, which: CaseFn, r: TwoFloat, delta: TwoFloat) -> (TwoFloat, TwoFloat, TwoFloat, TwoFloat) {
    let one = tf(1.0);
    let x = one - s.p_b;
    let a = s.frac() * (one - s.l / s.big_n.sqrt()) * (s.big_n - 1.0) * s.x_q * s.lc;
    let e = one + s.quarter();
    let nro = s.big_n * s.ro;
    let (b, c) = match which {
        CaseFn::F => (
            e * (s.big_n - r) * s.p_f * s.r_f + s.frac() * (r - 1.0) * s.r_f - nro,
            s.frac() * (r - 1.0) * s.q * s.r_f - s.case_c_costs(),
        ),
        CaseFn::G => (
            s.frac() * e * (r - 1.0) * s.p_f * s.r_f + (s.big_n - r) * s.r_f - nro,
            s.frac() * e * (r - 1.0) * s.q * s.p_f * s.r_f - s.case_c_costs(),
        ),
        CaseFn::H => (
            (delta + 1.0) * s.frac() * (s.big_n - 1.0) * s.p_f * s.r_f - nro,
            (delta + 1.0) * s.frac() * (s.big_n - 1.0) * s.q * s.p_f * s.r_f - s.case_c_costs(),
        ),
    };
    (a, b, c, x)
}

/// `a·x^Q + b·Q + c` for the chosen case.
pub fn case_function(p: &ProtocolParams, which: CaseFn, r_star: f64, delta: f64, q_total: f64, base: LogBase) -> f64 {
    let (a, b, c, x) = case_tf(&Sym::new(p, base), which, tf(r_star), tf(delta));
    f64::from(a * x.powf(tf(q_total)) + b * q_total + c)
}

/// The four-term gap of the theorem statement.
pub fn theorem_epsilon_prime(p: &ProtocolParams, delta: f64, base: LogBase) -> f64 {
    f64::from(eps_tf(&Sym::new(p, base), tf(delta)))
}

fn eps_tf(s: &Sym, delta: TwoFloat) -> TwoFloat {
    let one = tf(1.0);
    let rt = (s.big_n * s.n).sqrt();
    let sn = s.big_n.sqrt();
    ((s.l / rt + delta) * s.big_n + s.l2() * (one + one / s.p_f) - (s.l2() * s.l / rt + 1.0 + delta))
        * (s.n - 1.0)
        * s.q
        * s.p_f
        * s.r_f
        + s.frac() * (s.l * 2.0 * sn + 1.0 - s.l / sn) * s.hit * s.lc
        + (one + s.l / sn) * s.big_n * s.hit * (s.n - 1.0) * s.ltx
        + s.l2() / s.n * s.fs_tx
}

/// `u_max ≤ u_min + ε·|u_min| + ε′`.
pub fn evp_verdict(u_max: f64, u_min: f64, epsilon: f64, epsilon_prime: f64) -> bool {
    u_max <= u_min + epsilon * u_min.abs() + epsilon_prime
}

/// Exact-currency form of [`evp_verdict`].
pub fn evp_verdict_exact(u_max: Amount, u_min: Amount, epsilon: f64, epsilon_prime: f64) -> bool {
    u_max.to_f64() - u_min.to_f64() <= epsilon * u_min.to_f64().abs() + epsilon_prime
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub log_base: LogBase,
    pub delta_used: f64,
    pub claim1_b: f64,
    pub claim2_b: f64,
    pub epsilon_prime: f64,
    /// `claim2_b − claim1_b − epsilon_prime`, evaluated in double-double.
    pub residual: f64,
    pub case_bounds: [f64; 3],
    pub delta_min: f64,
    pub theorem_threshold: f64,
    pub p_f_r_f: f64,
    pub flags: ConditionFlags,
}

pub fn bound_report(p: &ProtocolParams, delta: f64, base: LogBase, omega_c: f64) -> BoundReport {
    let s = Sym::new(p, base);
    let (b1, b2, e) = (claim1_tf(&s), claim2_tf(&s, tf(delta)), eps_tf(&s, tf(delta)));
    BoundReport {
        log_base: base,
        delta_used: delta,
        claim1_b: f64::from(b1),
        claim2_b: f64::from(b2),
        epsilon_prime: f64::from(e),
        residual: f64::from(b2 - b1 - e),
        case_bounds: case_bounds(p, delta, base),
        delta_min: f64::from(s.quarter()),
        theorem_threshold: theorem_threshold(p, base),
        p_f_r_f: f64::from(s.p_f * s.r_f),
        flags: condition_flags(p, delta, base, omega_c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{CostTable, Probability};

    fn params(costs: CostTable, reward: Amount, n: u16, kappa: u32) -> ProtocolParams {
        ProtocolParams {
            kappa,
            n,
            q: 10,
            big_n: 2000,
            p_f: Probability::new(1, 20),
            p_b: Probability::new(1, 500),
            r: 4,
            reward_f: reward,
            costs,
            delta: 0.5,
        }
    }

    fn costs() -> CostTable {
        CostTable {
            lc: Amount::new(1, 5),
            fs: Amount::new(1, 20),
            tx: Amount::new(1, 20),
            ro: Amount::new(1, 200),
            ltx: Amount::new(1, 100),
        }
    }

    #[test]
    fn chernoff_examples() {
        let e1 = (-1f64).exp();
        assert!((chernoff_upper(300.0, 0.1).unwrap() - e1).abs() < 1e-12);
        assert!((chernoff_lower(200.0, 0.1).unwrap() - e1).abs() < 1e-12);
        assert!(chernoff_upper(1.0, 1e-9).unwrap() > 0.999_999);
        assert!(chernoff_upper(0.0, 0.5).is_err());
        assert!(chernoff_lower(5.0, 1.0).is_err());
        let mut last = 1.0;
        for i in 1..=100 {
            let v = chernoff_upper(i as f64, 0.3).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn zero_costs_are_profitable() {
        let p = params(CostTable::default(), Amount::from_int(1), 100, 4);
        assert!(profitability_condition(&p, Regime::Claim1, LogBase::Two));
        assert!(profitability_condition(&p, Regime::Claim2, LogBase::Two));
        let p = params(costs(), Amount::ZERO, 100, 4);
        assert!(!profitability_condition(&p, Regime::Claim1, LogBase::Two));
        assert!(!profitability_condition(&p, Regime::Claim2, LogBase::Two));
    }

    #[test]
    fn claim1_threshold_example() {
        // n = 16, kappa = 4: 1 − 2/4 = 1/2, so the threshold is 0.3/(0.5·160) = 3/800.
        let mut p = params(costs(), Amount::from_int(1), 16, 4);
        p.p_f = Probability::new(3, 800);
        let t = profitability_threshold(&p, Regime::Claim1, LogBase::Two);
        assert!((t - 3.0 / 800.0).abs() < 1e-15);
        p.p_f = Probability::new(376, 100_000);
        assert!(profitability_condition(&p, Regime::Claim1, LogBase::Two));
        p.p_f = Probability::new(374, 100_000);
        assert!(!profitability_condition(&p, Regime::Claim1, LogBase::Two));
    }

    #[test]
    fn zero_cost_bounds_reduce_to_reward_terms() {
        let p = params(CostTable::default(), Amount::from_int(1), 5, 16);
        let (nn, n, q, pf, l) = (2000f64, 5f64, 10f64, 0.05, 4f64);
        let b1 = (1.0 - l / (nn * n).sqrt()) * (nn - l * l) * (n - 1.0) * q * pf;
        assert!((claim1_lower_bound(&p, LogBase::Two) - b1).abs() < 1e-9 * b1);
        let delta = l / (nn * n).powf(0.25);
        let b2 = (1.0 + delta) * (nn - 1.0) * (n - 1.0) * q * pf + l * l * (n - 1.0) * q;
        assert!((claim2_upper_bound(&p, delta, LogBase::Two) - b2).abs() < 1e-9 * b2);
        let eps = ((l / (nn * n).sqrt() + delta) * nn + l * l * (1.0 + 1.0 / pf) - (l.powi(3) / (nn * n).sqrt() + 1.0 + delta))
            * (n - 1.0)
            * q
            * pf;
        assert!((theorem_epsilon_prime(&p, delta, LogBase::Two) - eps).abs() < 1e-9 * eps);
    }

    #[test]
    fn no_reward_means_negative_lower_bound() {
        let p = params(costs(), Amount::ZERO, 5, 16);
        assert!(claim1_lower_bound(&p, LogBase::Two) < 0.0);
    }

    #[test]
    fn case_function_at_zero() {
        let p = params(costs(), Amount::from_int(1), 5, 16);
        for which in [CaseFn::F, CaseFn::G, CaseFn::H] {
            let (a, _, c, _) = case_coefficients(&p, which, 1000.0, 0.5, LogBase::Two);
            let v = case_function(&p, which, 1000.0, 0.5, 0.0, LogBase::Two);
            assert!((v - (a + c)).abs() <= 1e-9 * (a + c).abs().max(1.0));
        }
    }

    #[test]
    fn evp_examples() {
        assert!(evp_verdict(5.0, 5.0, 0.0, 0.0));
        assert!(!evp_verdict(10.0, 5.0, 0.0, 4.0));
        assert!(evp_verdict(10.0, -5.0, 1.0, 10.0));
    }

    #[test]
    fn negative_chernoff_factor_is_flagged() {
        let p = params(costs(), Amount::from_int(1), 5, 16);
        assert!(!condition_flags(&p, 0.5, LogBase::Two, 1.0).chernoff_factor_positive);
        let p = params(costs(), Amount::from_int(1), 100, 4);
        assert!(condition_flags(&p, 0.5, LogBase::Two, 1.0).chernoff_factor_positive);
    }

    #[test]
    fn log_bases_differ() {
        let p = params(costs(), Amount::from_int(1), 5, 16);
        let a = bound_report(&p, 0.5, LogBase::Two, 1.0);
        let b = bound_report(&p, 0.5, LogBase::Natural, 1.0);
        assert_ne!(a.claim1_b, b.claim1_b);
        assert!(a.residual.abs() < 1e-9 * a.claim2_b.abs());
    }
}
