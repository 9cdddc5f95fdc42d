//! Exact Markov-chain solves used to check and probe the analytic formulas.
//!
//! [`Ctmc`] holds a sparse generator and computes its stationary vector by
//! GTH state reduction (Grassmann, Taksar, Heyman), which involves no
//! subtractions and stays accurate on stiff chains. States are reduced in
//! index order, so fill-in never leaves the generator's band and the cost is
//! `O(n * w^2)` for bandwidth `w`.

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::section::{Source, StationaryDistribution};
use crate::tandem::{Tandem, TandemConfig};

/// Largest joint chain the tandem oracle will assemble.
pub const MAX_JOINT_STATES: usize = 40_000;

/// Continuous-time Markov chain given by its off-diagonal rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Ctmc {
    states: usize,
    transitions: Vec<(usize, usize, f64)>,
}

impl Ctmc {
    pub fn new(states: usize) -> Self {
        Self {
            states,
            transitions: Vec::new(),
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// Adds `rate` to the transition `from -> to`. Zero rates are dropped.
    pub fn add_rate(&mut self, from: usize, to: usize, rate: f64) -> Result<()> {
        if from >= self.states || to >= self.states {
            return Err(Error::Contract(format!(
                "transition {from} -> {to} outside {} states",
                self.states
            )));
        }
        if from == to {
            return Err(Error::Contract(format!("self-loop at state {from}")));
        }
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(domain(format!("rate must be finite and >= 0, got {rate}")));
        }
        if rate > 0.0 {
            self.transitions.push((from, to, rate));
        }
        Ok(())
    }

    fn bandwidth(&self) -> usize {
        self.transitions
            .iter()
            .map(|&(i, j, _)| i.abs_diff(j))
            .max()
            .unwrap_or(0)
    }

    /// Stationary vector by banded GTH reduction. Fails if the chain is
    /// reducible.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let n = self.states;
        if n == 0 {
            return Err(Error::Contract("chain has no states".into()));
        }
        let w = self.bandwidth();
        let width = 2 * w + 1;
        let mut band = vec![0.0; n * width];
        let at = |i: usize, j: usize| i * width + (j + w - i);
        for &(i, j, r) in &self.transitions {
            band[at(i, j)] += r;
        }

        // reduce states n-1, ..., 1; keep each state's outflow to lower states
        let mut outflow = vec![0.0; n];
        for k in (1..n).rev() {
            let lo = k.saturating_sub(w);
            let s: f64 = (lo..k).map(|j| band[at(k, j)]).sum();
            if !(s > 0.0) {
                return Err(Error::Reducible { state: k });
            }
            outflow[k] = s;
            for i in lo..k {
                let a_ik = band[at(i, k)];
                if a_ik == 0.0 {
                    continue;
                }
                let f = a_ik / s;
                for j in lo..k {
                    if j != i {
                        let a_kj = band[at(k, j)];
                        band[at(i, j)] += f * a_kj;
                    }
                }
            }
        }

        let mut pi = vec![0.0; n];
        pi[0] = 1.0;
        for k in 1..n {
            let lo = k.saturating_sub(w);
            pi[k] = (lo..k).map(|i| pi[i] * band[at(i, k)]).sum::<f64>() / outflow[k];
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        Ok(pi)
    }

    /// `max_j |(pi Q)_j|`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        let mut flux = vec![0.0; self.states];
        for &(i, j, r) in &self.transitions {
            flux[j] += pi[i] * r;
            flux[i] -= pi[i] * r;
        }
        flux.iter().fold(0.0, |m, f| m.max(f.abs()))
    }
}

/// Stationary law of the birth-death chain with birth rate `lambda` and
/// death rate `death_rates[n-1]` out of state `n`, from the balance
/// recursion `pi_n = pi_{n-1} lambda / q_n` in the log domain.
pub fn birth_death_stationary(lambda: f64, death_rates: &[f64]) -> Result<StationaryDistribution> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(domain(format!("birth rate must be finite and >= 0, got {lambda}")));
    }
    if let Some(q) = death_rates.iter().find(|q| !(q.is_finite() && **q > 0.0)) {
        return Err(domain(format!("death rates must be positive, got {q}")));
    }
    let c = death_rates.len();
    if lambda == 0.0 {
        return Ok(StationaryDistribution::point_mass_at_zero(c, lambda, Source::CtmcOracle));
    }
    let mut log_pi = Vec::with_capacity(c + 1);
    log_pi.push(0.0);
    for (n, q) in death_rates.iter().enumerate() {
        log_pi.push(log_pi[n] + lambda.ln() - q.ln());
    }
    Ok(StationaryDistribution::from_log_weights(&log_pi, lambda, Source::CtmcOracle))
}

/// Generator of the birth-death chain, for residual checks.
pub fn birth_death_chain(lambda: f64, death_rates: &[f64]) -> Result<Ctmc> {
    let mut chain = Ctmc::new(death_rates.len() + 1);
    for (n, &q) in death_rates.iter().enumerate() {
        chain.add_rate(n, n + 1, lambda)?;
        chain.add_rate(n + 1, n, q)?;
    }
    Ok(chain)
}

/// Exact stationary law of the two-section chain on `(n1, n2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointStationary {
    lambda: f64,
    /// `probs[n1][n2]`.
    probs: Vec<Vec<f64>>,
    residual: f64,
    /// Mean transfer flow from section 1 into section 2.
    transfer_flow: f64,
    /// Mean outflow of section 2.
    exit_flow: f64,
}

impl JointStationary {
    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    /// `||pi Q||_inf` of the solved vector.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Probability an arrival finds section 1 full.
    pub fn blocking(&self) -> f64 {
        self.probs.last().map_or(0.0, |row| row.iter().sum())
    }

    /// Accepted flow from flow balance (mean transfer rate).
    pub fn throughput(&self) -> f64 {
        self.transfer_flow
    }

    pub fn exit_flow(&self) -> f64 {
        self.exit_flow
    }

    pub fn marginal1(&self) -> StationaryDistribution {
        let probs = self.probs.iter().map(|row| row.iter().sum()).collect();
        StationaryDistribution::from_parts_unchecked(probs, self.lambda, Source::CtmcOracle)
    }

    pub fn marginal2(&self) -> StationaryDistribution {
        let c2 = self.probs[0].len();
        let probs = (0..c2).map(|n2| self.probs.iter().map(|row| row[n2]).sum()).collect();
        StationaryDistribution::from_parts_unchecked(probs, self.lambda, Source::CtmcOracle)
    }
}

/// Solves the joint chain: arrivals at `lambda` while `n1 < c1`, transfers
/// at `min(demand_1(n1), supply_2(n2))` while `n1 > 0` and `n2 < c2`, and
/// departures at `q_2(n2)`. No car moves into a full section 2.
pub fn joint_tandem_stationary(cfg: &TandemConfig) -> Result<JointStationary> {
    let (c1, c2) = (cfg.section1().capacity(), cfg.section2().capacity());
    let states = (c1 + 1) * (c2 + 1);
    if states > MAX_JOINT_STATES {
        return Err(Error::StateSpaceTooLarge {
            states,
            limit: MAX_JOINT_STATES,
        });
    }
    let lambda = cfg.lambda();
    let mut probs = vec![vec![0.0; c2 + 1]; c1 + 1];
    if lambda == 0.0 {
        probs[0][0] = 1.0;
        return Ok(JointStationary {
            lambda,
            probs,
            residual: 0.0,
            transfer_flow: 0.0,
            exit_flow: 0.0,
        });
    }

    // n2-major order keeps the bandwidth at c1 + 1
    let index = |n1: usize, n2: usize| n2 * (c1 + 1) + n1;
    let mut chain = Ctmc::new(states);
    for n2 in 0..=c2 {
        for n1 in 0..=c1 {
            let s = index(n1, n2);
            if n1 < c1 {
                chain.add_rate(s, index(n1 + 1, n2), lambda)?;
            }
            if n1 > 0 && n2 < c2 {
                chain.add_rate(s, index(n1 - 1, n2 + 1), cfg.transfer_rate(n1, n2)?)?;
            }
            if n2 > 0 {
                chain.add_rate(s, index(n1, n2 - 1), cfg.section2().quadratic_flow(n2)?)?;
            }
        }
    }
    let pi = chain.stationary()?;
    let residual = chain.residual(&pi);

    let mut transfer_flow = 0.0;
    let mut exit_flow = 0.0;
    for n2 in 0..=c2 {
        for n1 in 0..=c1 {
            let p = pi[index(n1, n2)];
            probs[n1][n2] = p;
            if n1 > 0 && n2 < c2 {
                transfer_flow += p * cfg.transfer_rate(n1, n2)?;
            }
            if n2 > 0 {
                exit_flow += p * cfg.section2().quadratic_flow(n2)?;
            }
        }
    }
    Ok(JointStationary {
        lambda,
        probs,
        residual,
        transfer_flow,
        exit_flow,
    })
}

/// Total variation distance `sum |p - q| / 2`.
pub fn tv_distance(p: &StationaryDistribution, q: &StationaryDistribution) -> Result<f64> {
    if p.probs().len() != q.probs().len() {
        return Err(Error::Contract(format!(
            "distributions have {} and {} states",
            p.probs().len(),
            q.probs().len()
        )));
    }
    Ok(0.5 * p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Decomposition versus exact joint chain at one arrival rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleComparison {
    pub lambda: f64,
    pub tv_p1: f64,
    pub tv_p2: f64,
    pub theta_decomposition: f64,
    pub theta_joint: f64,
}

/// Solves both models and reports how far the decomposition's marginals
/// and throughput are from the exact chain.
pub fn compare(cfg: &TandemConfig, tol: f64) -> Result<OracleComparison> {
    let exact = joint_tandem_stationary(cfg)?;
    let solution = Tandem::new(cfg.clone()).solve_bisection(tol)?;
    Ok(OracleComparison {
        lambda: cfg.lambda(),
        tv_p1: tv_distance(&solution.p1, &exact.marginal1())?,
        tv_p2: tv_distance(&solution.p2, &exact.marginal2())?,
        theta_decomposition: solution.fixed_point,
        theta_joint: exact.throughput(),
    })
}
