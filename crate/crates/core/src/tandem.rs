//! Two sections in tandem.
//!
//! Section 1 is constrained by the supply of section 2, which is closed.
//! Given the mean transfer flow `theta`, section 2 is a single section fed at
//! rate `theta`, and section 1 conditioned on `n2` cars downstream is a
//! single section whose departure rate is `min(demand_1(n1), supply_2(n2))`.
//! Mixing the conditionals against `P2(theta)` yields the marginal of
//! section 1, and `theta` must reproduce itself as the accepted flow:
//!
//! ```text
//! theta = h(theta) = lambda * (1 - P1_{c1}(lambda, theta))
//! ```
//!
//! `e(theta) = h(theta) - theta` is positive at 0, negative at `lambda` and
//! strictly decreasing, so the root is unique and bisection always finds it.
//! Plain iteration `theta_k = h(theta_{k-1})` is kept as an alternate solver;
//! it converges only while `|h'| < 1` at the root and otherwise settles into
//! a two-cycle.

use serde::Serialize;

use crate::diagram::FundamentalDiagram;
use crate::error::{domain, Error, Result};
use crate::section::{
    performance_measures, product_form, stationary_flow_form, PerformanceReport, Source,
    StationaryDistribution,
};

/// Bisection halvings before giving up; enough to exhaust f64 resolution.
const MAX_BISECTIONS: usize = 200;
/// Consecutive two-cycle observations required before declaring oscillation.
const CYCLE_CONFIRMATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TandemConfig {
    section1: FundamentalDiagram,
    section2: FundamentalDiagram,
    lambda: f64,
}

impl TandemConfig {
    pub fn new(
        section1: FundamentalDiagram,
        section2: FundamentalDiagram,
        lambda: f64,
    ) -> Result<Self> {
        if !(section1.is_quadratic() && section2.is_quadratic()) {
            return Err(domain("tandem sections must use the linear/quadratic law"));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(domain(format!("arrival rate must be finite and >= 0, got {lambda}")));
        }
        Ok(Self {
            section1,
            section2,
            lambda,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.section1.clone(), self.section2.clone(), lambda)
    }

    pub fn section1(&self) -> &FundamentalDiagram {
        &self.section1
    }

    pub fn section2(&self) -> &FundamentalDiagram {
        &self.section2
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Transfer rate `min(demand_1(n1), supply_2(n2))` from section 1 to 2.
    pub fn transfer_rate(&self, n1: usize, n2: usize) -> Result<f64> {
        Ok(self.section1.demand(n1)?.min(self.section2.supply(n2)?))
    }
}

/// Solver knobs. `Default` is not provided because the tolerance scales with
/// the upstream capacity; use [`SolverOptions::for_config`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Starting point of the iteration; `None` means `lambda`.
    pub theta0: Option<f64>,
}

impl SolverOptions {
    pub fn for_config(cfg: &TandemConfig) -> Self {
        Self {
            tol: 1e-6 * cfg.section1().q_max(),
            max_iter: 10_000,
            theta0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveMode {
    ConvergedIteration,
    BisectionRoot,
    OscillatoryAveraged,
}

impl SolveMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveMode::ConvergedIteration => "ConvergedIteration",
            SolveMode::BisectionRoot => "BisectionRoot",
            SolveMode::OscillatoryAveraged => "OscillatoryAveraged",
        }
    }
}

/// Both sides of the iteration-convergence condition at one `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceCondition {
    pub satisfied: bool,
    /// The covariance statistic `S`.
    pub s: f64,
    /// `theta / lambda`.
    pub bound: f64,
}

/// Full stationary regime of a tandem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TandemSolution {
    pub lambda: f64,
    /// Reported transfer flow. Equal to `fixed_point` except in the
    /// oscillatory regime, where it is `(lambda + h(lambda)) / 2`.
    pub theta: f64,
    /// Root of `h(theta) = theta`; all distributions are evaluated here.
    pub fixed_point: f64,
    /// Outflow of section 2, `fixed_point * (1 - P2_{c2})`.
    pub delta: f64,
    pub mode: SolveMode,
    /// `|h(fixed_point) - fixed_point|`.
    pub residual: f64,
    /// Limit pair `(high, low)` of the iterates when they oscillate.
    pub adherence: Option<(f64, f64)>,
    pub trace: Vec<f64>,
    pub p1: StationaryDistribution,
    pub p2: StationaryDistribution,
    /// `p1_given_2[n1][n2]`.
    pub p1_given_2: Vec<Vec<f64>>,
    /// `joint[n1][n2]`.
    pub joint: Vec<Vec<f64>>,
    pub section1: PerformanceReport,
    pub section2: PerformanceReport,
}

/// A tandem with its `theta`-independent conditionals precomputed.
#[derive(Debug, Clone)]
pub struct Tandem {
    cfg: TandemConfig,
    /// `conditionals[n2]` is the law of `N1` given `N2 = n2`.
    conditionals: Vec<StationaryDistribution>,
}

impl Tandem {
    pub fn new(cfg: TandemConfig) -> Self {
        let lambda = cfg.lambda();
        let c1 = cfg.section1().capacity();
        let conditionals = (0..=cfg.section2().capacity())
            .map(|n2| {
                let rates: Vec<f64> = (1..=c1)
                    .map(|n1| cfg.transfer_rate(n1, n2).expect("counts within capacity"))
                    .collect();
                product_form(lambda, &rates, Source::TandemConditional(n2))
            })
            .collect();
        Self { cfg, conditionals }
    }

    pub fn config(&self) -> &TandemConfig {
        &self.cfg
    }

    pub fn lambda(&self) -> f64 {
        self.cfg.lambda()
    }

    fn c1(&self) -> usize {
        self.cfg.section1().capacity()
    }

    fn c2(&self) -> usize {
        self.cfg.section2().capacity()
    }

    fn check_theta(&self, theta: f64) -> Result<()> {
        if !(theta.is_finite() && theta >= 0.0 && theta <= self.lambda()) {
            return Err(domain(format!(
                "theta must lie in [0, {}], got {theta}",
                self.lambda()
            )));
        }
        Ok(())
    }

    /// Law of `N2` when section 2 is fed at rate `theta`.
    pub fn p2_given_theta(&self, theta: f64) -> Result<StationaryDistribution> {
        stationary_flow_form(theta, self.cfg.section2())
    }

    /// Normalized service rate of section 1 with `i2` cars downstream,
    /// `min(demand_1(i1), supply_2(i2)) / q_max1 / i1`.
    pub fn g1_coupled(&self, i1: usize, i2: usize) -> Result<f64> {
        if i1 == 0 {
            return Err(domain("coupled service rate is undefined at i1 = 0"));
        }
        Ok(self.cfg.transfer_rate(i1, i2)? / self.cfg.section1().q_max() / i1 as f64)
    }

    /// Law of `N1` given `N2 = n2`; does not depend on `theta`.
    pub fn p1_conditional(&self, n2: usize) -> Result<&StationaryDistribution> {
        self.conditionals
            .get(n2)
            .ok_or_else(|| domain(format!("n2 = {n2} outside 0..={}", self.c2())))
    }

    /// `[n1][n2]` matrix of the conditional laws.
    pub fn p1_given_2(&self) -> Vec<Vec<f64>> {
        (0..=self.c1())
            .map(|n1| self.conditionals.iter().map(|d| d.probs()[n1]).collect())
            .collect()
    }

    fn mix(&self, p2: &StationaryDistribution) -> Vec<f64> {
        let mut p1 = vec![0.0; self.c1() + 1];
        for (cond, &w) in self.conditionals.iter().zip(p2.probs()) {
            if w == 0.0 {
                continue;
            }
            for (acc, p) in p1.iter_mut().zip(cond.probs()) {
                *acc += w * p;
            }
        }
        p1
    }

    /// Marginal law of `N1`, mixing the conditionals against `P2(theta)`.
    pub fn p1_marginal(&self, theta: f64) -> Result<StationaryDistribution> {
        let p2 = self.p2_given_theta(theta)?;
        Ok(StationaryDistribution::from_parts_unchecked(
            self.mix(&p2),
            self.lambda(),
            Source::TandemMarginal,
        ))
    }

    fn blocking_given(&self, p2: &StationaryDistribution) -> f64 {
        let c1 = self.c1();
        self.conditionals
            .iter()
            .zip(p2.probs())
            .map(|(cond, w)| w * cond.probs()[c1])
            .sum()
    }

    /// `h(theta) = lambda * (1 - P1_{c1}(lambda, theta))`.
    pub fn h(&self, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        let p2 = self.p2_given_theta(theta)?;
        Ok(self.lambda() * (1.0 - self.blocking_given(&p2)))
    }

    /// `e(theta) = h(theta) - theta`.
    pub fn excess(&self, theta: f64) -> Result<f64> {
        Ok(self.h(theta)? - theta)
    }

    /// Outflow of section 2, `theta * (1 - P2_{c2}(theta))`.
    pub fn delta_throughput(&self, theta: f64) -> Result<f64> {
        Ok(theta * (1.0 - self.p2_given_theta(theta)?.blocking()))
    }

    /// `dP2_n/dtheta = P2_n (n - mean) / theta`.
    pub fn p2_derivative(&self, theta: f64) -> Result<Vec<f64>> {
        if !(theta > 0.0) {
            return Err(domain("derivative of P2 needs theta > 0"));
        }
        let p2 = self.p2_given_theta(theta)?;
        let mean = p2.mean();
        Ok(p2
            .probs()
            .iter()
            .enumerate()
            .map(|(n, p)| p * (n as f64 - mean) / theta)
            .collect())
    }

    /// `S = sum_n2 P1_{c1|n2} P2_n2(theta) (n2 - mean_2(theta))`, the
    /// covariance of the conditional blocking with `N2`. Never negative.
    pub fn s_statistic(&self, theta: f64) -> Result<f64> {
        if !(theta > 0.0) {
            return Err(domain("S statistic needs theta > 0"));
        }
        self.check_theta(theta)?;
        let p2 = self.p2_given_theta(theta)?;
        let w = p2.probs();
        let c1 = self.c1();
        let b: Vec<f64> = self.conditionals.iter().map(|d| d.probs()[c1]).collect();
        // Pairwise form of the covariance: no cancellation, and every term
        // is non-negative because conditional blocking grows with n2.
        let mut s = 0.0;
        for j in 1..w.len() {
            for i in 0..j {
                s += w[i] * w[j] * (b[j] - b[i]) * (j - i) as f64;
            }
        }
        Ok(s)
    }

    /// `dh/dtheta = -(lambda / theta) S`.
    pub fn h_derivative(&self, theta: f64) -> Result<f64> {
        Ok(-self.lambda() / theta * self.s_statistic(theta)?)
    }

    /// Whether `S < theta / lambda`, i.e. `|h'(theta)| < 1`.
    pub fn convergence_condition(&self, theta: f64) -> Result<ConvergenceCondition> {
        if !(self.lambda() > 0.0) {
            return Err(domain("convergence condition needs lambda > 0"));
        }
        let s = self.s_statistic(theta)?;
        let bound = theta / self.lambda();
        Ok(ConvergenceCondition {
            satisfied: s < bound,
            s,
            bound,
        })
    }

    /// `joint[n1][n2] = P1_{n1|n2} P2_n2(theta)`.
    pub fn joint_distribution(&self, theta: f64) -> Result<Vec<Vec<f64>>> {
        let p2 = self.p2_given_theta(theta)?;
        Ok(joint_distribution(&self.p1_given_2(), &p2))
    }

    /// Root of `h(theta) = theta` by bisection on `[0, lambda]`.
    pub fn solve_bisection(&self, tol: f64) -> Result<TandemSolution> {
        let (root, trace) = self.bisect(tol)?;
        self.solution(root, root, SolveMode::BisectionRoot, None, trace)
    }

    fn bisect(&self, tol: f64) -> Result<(f64, Vec<f64>)> {
        if !(tol > 0.0) {
            return Err(domain(format!("tolerance must be positive, got {tol}")));
        }
        let lambda = self.lambda();
        if lambda == 0.0 {
            return Ok((0.0, vec![0.0]));
        }
        let (mut lo, mut hi) = (0.0, lambda);
        let mut trace = Vec::new();
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            trace.push(mid);
            let e = self.excess(mid)?;
            if e.abs() <= tol {
                return Ok((mid, trace));
            }
            if e > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(Error::NonConvergence {
            iterations: MAX_BISECTIONS,
            trace,
        })
    }

    /// Plain iteration `theta_k = h(theta_{k-1})` from `theta0`.
    ///
    /// Stops with `ConvergedIteration` once successive iterates agree within
    /// `tol`. A two-cycle (`|theta_k - theta_{k-2}| <= tol` while
    /// `|theta_k - theta_{k-1}| > tol`, seen three times in a row) stops with
    /// `OscillatoryAveraged`, reporting `(lambda + h(lambda)) / 2`; the
    /// distributions then come from the bisection root.
    pub fn solve_iteration(&self, theta0: f64, max_iter: usize, tol: f64) -> Result<TandemSolution> {
        if !(tol > 0.0) {
            return Err(domain(format!("tolerance must be positive, got {tol}")));
        }
        self.check_theta(theta0)?;
        let lambda = self.lambda();
        let mut trace = vec![theta0];
        if lambda == 0.0 {
            return self.solution(0.0, 0.0, SolveMode::ConvergedIteration, None, trace);
        }
        let mut cycle_hits = 0;
        for _ in 0..max_iter {
            let prev = *trace.last().expect("trace starts non-empty");
            let next = self.h(prev)?;
            trace.push(next);
            if (next - prev).abs() <= tol {
                return self.solution(next, next, SolveMode::ConvergedIteration, None, trace);
            }
            let k = trace.len() - 1;
            if k >= 2 && (next - trace[k - 2]).abs() <= tol {
                cycle_hits += 1;
            } else {
                cycle_hits = 0;
            }
            if cycle_hits >= CYCLE_CONFIRMATIONS {
                let reported = 0.5 * (lambda + self.h(lambda)?);
                let adherence = (next.max(prev), next.min(prev));
                let (root, _) = self.bisect(tol)?;
                return self.solution(
                    reported,
                    root,
                    SolveMode::OscillatoryAveraged,
                    Some(adherence),
                    trace,
                );
            }
        }
        Err(Error::NonConvergence {
            iterations: max_iter,
            trace,
        })
    }

    fn solution(
        &self,
        theta: f64,
        fixed_point: f64,
        mode: SolveMode,
        adherence: Option<(f64, f64)>,
        trace: Vec<f64>,
    ) -> Result<TandemSolution> {
        let lambda = self.lambda();
        let p2 = self.p2_given_theta(fixed_point)?;
        let p1 = StationaryDistribution::from_parts_unchecked(
            self.mix(&p2),
            lambda,
            Source::TandemMarginal,
        );
        let p1_given_2 = self.p1_given_2();
        let joint = joint_distribution(&p1_given_2, &p2);
        let section1 = performance_measures(lambda, &p1);
        let section2 = performance_measures(fixed_point, &p2);
        let residual = (lambda * (1.0 - p1.blocking()) - fixed_point).abs();
        Ok(TandemSolution {
            lambda,
            theta,
            fixed_point,
            delta: section2.throughput,
            mode,
            residual,
            adherence,
            trace,
            p1,
            p2,
            p1_given_2,
            joint,
            section1,
            section2,
        })
    }
}

/// Outer product of each conditional column with its weight in `p2`.
pub fn joint_distribution(p1_given_2: &[Vec<f64>], p2: &StationaryDistribution) -> Vec<Vec<f64>> {
    p1_given_2
        .iter()
        .map(|row| row.iter().zip(p2.probs()).map(|(c, w)| c * w).collect())
        .collect()
}
