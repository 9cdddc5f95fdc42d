//! Stationary analysis of a single state-dependent section.
//!
//! With Poisson arrivals at rate `lambda` and departure rate `q_n` when the
//! section holds `n` cars, the number of cars is a birth-death chain on
//! `0..=c` whose stationary law is `P_n ∝ prod_{i<=n} lambda / q_i`. The
//! speed form writes the same product as `(lambda L / v1)^n / prod i f(i)`.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::diagram::{FlowModel, FundamentalDiagram, SectionParams};
use crate::error::{domain, Error, Result};

/// Tolerance used when validating normalization.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Where a distribution came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    SpeedForm,
    FlowForm,
    CtmcOracle,
    TandemMarginal,
    TandemConditional(usize),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::SpeedForm => f.write_str("SpeedForm"),
            Source::FlowForm => f.write_str("FlowForm"),
            Source::CtmcOracle => f.write_str("CtmcOracle"),
            Source::TandemMarginal => f.write_str("TandemMarginal"),
            Source::TandemConditional(n2) => write!(f, "TandemConditional({n2})"),
        }
    }
}

impl Serialize for Source {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Probability vector over car counts `0..=c`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryDistribution {
    capacity: usize,
    #[serde(rename = "lambda")]
    arrival_rate: f64,
    probs: Vec<f64>,
    source: Source,
}

impl StationaryDistribution {
    /// Wraps an already-normalized vector, checking the invariants.
    pub fn new(probs: Vec<f64>, arrival_rate: f64, source: Source) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Contract("distribution needs at least one state".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Contract("distribution has a negative or NaN entry".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Contract(format!("distribution sums to {total}, not 1")));
        }
        Ok(Self {
            capacity: probs.len() - 1,
            arrival_rate,
            probs,
            source,
        })
    }

    /// All mass on the empty state.
    pub fn point_mass_at_zero(capacity: usize, arrival_rate: f64, source: Source) -> Self {
        let mut probs = vec![0.0; capacity + 1];
        probs[0] = 1.0;
        Self {
            capacity,
            arrival_rate,
            probs,
            source,
        }
    }

    /// Normalizes `exp(log_weights)` after shifting by the maximum.
    pub(crate) fn from_log_weights(log_weights: &[f64], arrival_rate: f64, source: Source) -> Self {
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Self {
            capacity: probs.len() - 1,
            arrival_rate,
            probs,
            source,
        }
    }

    pub(crate) fn from_parts_unchecked(probs: Vec<f64>, arrival_rate: f64, source: Source) -> Self {
        Self {
            capacity: probs.len() - 1,
            arrival_rate,
            probs,
            source,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }

    pub fn source(&self) -> Source {
        self.source
    }

    /// `P_c`, the probability the section is full.
    pub fn blocking(&self) -> f64 {
        self.probs[self.capacity]
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// Most likely car count (first one on ties).
    pub fn mode(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (n, &p)| if p > best.1 { (n, p) } else { best })
            .0
    }

    pub fn is_normalized(&self) -> bool {
        (self.probs.iter().sum::<f64>() - 1.0).abs() <= NORMALIZATION_TOLERANCE
            && self.probs.iter().all(|&p| p >= 0.0)
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.probs.len() != other.probs.len() {
            return Err(Error::Contract("distributions differ in length".into()));
        }
        Ok(self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// CSV rows `n,prob` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,prob\n");
        for (n, p) in self.probs.iter().enumerate() {
            out.push_str(&format!("{n},{}\n", crate::format::sig12(*p)));
        }
        out
    }
}

fn check_rate(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(domain(format!("arrival rate must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Stationary law from the speed parameterization,
/// `P_n ∝ (lambda L / v1)^n / prod_{i<=n} i f(i)` with `f(i) = v_i / v_1`.
pub fn stationary_speed_form(
    lambda: f64,
    params: &SectionParams,
    model: &FlowModel,
) -> Result<StationaryDistribution> {
    check_rate(lambda)?;
    let c = params.capacity();
    if lambda == 0.0 {
        return Ok(StationaryDistribution::point_mass_at_zero(c, lambda, Source::SpeedForm));
    }
    let ln_load = (lambda * params.length_km() / params.free_speed_kmh()).ln();
    let mut log_weights = Vec::with_capacity(c + 1);
    log_weights.push(0.0);
    let mut acc = 0.0;
    for i in 1..=c {
        acc += ln_load - (i as f64).ln() - model.ln_normalized_speed(i, c)?;
        log_weights.push(acc);
    }
    Ok(StationaryDistribution::from_log_weights(&log_weights, lambda, Source::SpeedForm))
}

/// Stationary law from the flow parameterization,
/// `P_n ∝ (lambda / q_max)^n / prod_{i<=n} i g(i) = prod_{i<=n} lambda / q_i`.
pub fn stationary_flow_form(
    lambda: f64,
    diagram: &FundamentalDiagram,
) -> Result<StationaryDistribution> {
    check_rate(lambda)?;
    if !diagram.is_quadratic() {
        return Err(domain("flow form requires the linear/quadratic law"));
    }
    Ok(product_form(lambda, diagram.service_rates(), Source::FlowForm))
}

/// `P_n ∝ prod_{i<=n} lambda / rates[i-1]`, accumulated in the log domain.
/// All rates must be positive and `lambda >= 0`.
pub(crate) fn product_form(lambda: f64, rates: &[f64], source: Source) -> StationaryDistribution {
    let c = rates.len();
    if lambda == 0.0 {
        return StationaryDistribution::point_mass_at_zero(c, lambda, source);
    }
    let ln_lambda = lambda.ln();
    let mut log_weights = Vec::with_capacity(c + 1);
    log_weights.push(0.0);
    let mut acc = 0.0;
    for &q in rates {
        acc += ln_lambda - q.ln();
        log_weights.push(acc);
    }
    StationaryDistribution::from_log_weights(&log_weights, lambda, source)
}

/// The four steady-state measures of a section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerformanceReport {
    pub blocking_probability: f64,
    /// Accepted flow, veh/h.
    pub throughput: f64,
    pub expected_count: f64,
    /// Mean time in the section in hours; `None` when nothing flows through.
    pub expected_time: Option<f64>,
}

impl PerformanceReport {
    pub fn expected_time_defined(&self) -> bool {
        self.expected_time.is_some()
    }
}

/// Blocking probability, throughput, mean count and mean time (Little's law).
pub fn performance_measures(lambda: f64, dist: &StationaryDistribution) -> PerformanceReport {
    let blocking = dist.blocking();
    let throughput = lambda * (1.0 - blocking);
    let expected_count = dist.mean();
    let expected_time = (throughput > 0.0).then(|| expected_count / throughput);
    PerformanceReport {
        blocking_probability: blocking,
        throughput,
        expected_count,
        expected_time,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutflowKind {
    /// Limited by the section's own demand only.
    Open,
    /// Limited by own demand and the downstream section's supply.
    Constrained,
    /// Limited by own demand and own supply.
    Closed,
}

/// Outflow of a section holding `n` cars under the given boundary rule.
/// `downstream_supply` must be given exactly when `kind` is `Constrained`.
pub fn outflow(
    kind: OutflowKind,
    n: usize,
    diagram: &FundamentalDiagram,
    downstream_supply: Option<f64>,
) -> Result<f64> {
    let demand = diagram.demand(n)?;
    match (kind, downstream_supply) {
        (OutflowKind::Open, None) => Ok(demand),
        (OutflowKind::Closed, None) => Ok(demand.min(diagram.supply(n)?)),
        (OutflowKind::Constrained, Some(s)) if s >= 0.0 => Ok(demand.min(s)),
        (OutflowKind::Constrained, Some(s)) => {
            Err(Error::Contract(format!("downstream supply must be >= 0, got {s}")))
        }
        (OutflowKind::Constrained, None) => {
            Err(Error::Contract("constrained outflow needs the downstream supply".into()))
        }
        (_, Some(_)) => Err(Error::Contract(
            "downstream supply only applies to a constrained section".into(),
        )),
    }
}
