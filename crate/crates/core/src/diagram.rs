//! Section parameters and the deterministic traffic laws built on them.
//!
//! A section of length `L` with jam density `rho_j` holds at most
//! `c = L * rho_j` cars. The speed of traffic with `n` cars on board follows
//! either a linear law (which makes the flow-density relation a parabola) or
//! an exponential law. Demand and supply split the parabola at its vertex
//! `n = (c + 1) / 2` into a non-decreasing and a non-increasing half.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Slack allowed between `L * rho_j` and the nearest integer.
const CAPACITY_TOLERANCE: f64 = 1e-9;

/// Physical description of one road section. Units are km, km/h and veh/km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectionParams {
    length_km: f64,
    free_speed_kmh: f64,
    jam_density: f64,
    capacity: usize,
}

impl SectionParams {
    pub fn new(length_km: f64, free_speed_kmh: f64, jam_density: f64) -> Result<Self> {
        for (name, value) in [
            ("length", length_km),
            ("free speed", free_speed_kmh),
            ("jam density", jam_density),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(domain(format!("{name} must be finite and positive, got {value}")));
            }
        }
        let cars = length_km * jam_density;
        let capacity = cars.round();
        if (cars - capacity).abs() > CAPACITY_TOLERANCE * capacity.max(1.0) {
            return Err(domain(format!(
                "length * jam density = {cars} is not a whole number of cars"
            )));
        }
        if capacity < 1.0 {
            return Err(domain("section must hold at least one car"));
        }
        Ok(Self {
            length_km,
            free_speed_kmh,
            jam_density,
            capacity: capacity as usize,
        })
    }

    pub fn length_km(&self) -> f64 {
        self.length_km
    }

    pub fn free_speed_kmh(&self) -> f64 {
        self.free_speed_kmh
    }

    pub fn jam_density(&self) -> f64 {
        self.jam_density
    }

    /// Maximum number of cars, `c`.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Free-flow traversal time `L / v1` in hours.
    pub fn free_travel_time(&self) -> f64 {
        self.length_km / self.free_speed_kmh
    }
}

/// Speed law of a section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FlowModel {
    /// Linear speed-density law; equivalently a quadratic flow-density law.
    #[serde(rename = "linear")]
    LinearQuadratic,
    #[serde(rename = "exponential")]
    Exponential { beta: f64, gamma: f64 },
}

impl FlowModel {
    /// `ln f(n)` where `f(n) = v_n / v_1` is the normalized speed.
    pub fn ln_normalized_speed(&self, n: usize, capacity: usize) -> Result<f64> {
        if n == 0 {
            return Err(domain("normalized speed is defined for n >= 1"));
        }
        match *self {
            FlowModel::LinearQuadratic => {
                if n > capacity {
                    return Err(domain(format!("car count {n} exceeds capacity {capacity}")));
                }
                Ok(((capacity - n + 1) as f64 / capacity as f64).ln())
            }
            FlowModel::Exponential { beta, gamma } => {
                check_shape(beta, gamma)?;
                Ok(-((n - 1) as f64 / beta).powf(gamma))
            }
        }
    }

    pub fn normalized_speed(&self, n: usize, capacity: usize) -> Result<f64> {
        self.ln_normalized_speed(n, capacity).map(f64::exp)
    }
}

fn check_shape(beta: f64, gamma: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0 && gamma.is_finite() && gamma > 0.0) {
        return Err(domain(format!(
            "exponential law needs beta > 0 and gamma > 0, got beta={beta}, gamma={gamma}"
        )));
    }
    Ok(())
}

/// Linear speed law: `v1 * (c - n + 1) / c` for `1 <= n <= c`.
pub fn linear_speed(n: usize, params: &SectionParams) -> Result<f64> {
    let c = params.capacity();
    if n == 0 || n > c {
        return Err(domain(format!("car count {n} outside 1..={c}")));
    }
    Ok(params.free_speed_kmh() * (c - n + 1) as f64 / c as f64)
}

/// Exponential speed law: `v1 * exp(-((n - 1) / beta)^gamma)`.
pub fn exponential_speed(n: usize, free_speed_kmh: f64, beta: f64, gamma: f64) -> Result<f64> {
    if n == 0 {
        return Err(domain("car count must be at least 1"));
    }
    check_shape(beta, gamma)?;
    Ok(free_speed_kmh * (-((n - 1) as f64 / beta).powf(gamma)).exp())
}

/// Recovers `(beta, gamma)` of the exponential law from two observed speeds
/// `va` at `a` cars and `vb` at `b` cars.
pub fn fit_beta_gamma(
    free_speed_kmh: f64,
    a: usize,
    va: f64,
    b: usize,
    vb: f64,
) -> Result<(f64, f64)> {
    if !(1 < a && a < b) {
        return Err(domain(format!("fit points must satisfy 1 < a < b, got a={a}, b={b}")));
    }
    if !(0.0 < vb && vb < va && va < free_speed_kmh) {
        return Err(domain(format!(
            "fit speeds must satisfy 0 < vb < va < v1, got vb={vb}, va={va}, v1={free_speed_kmh}"
        )));
    }
    let gamma = ((va / free_speed_kmh).ln() / (vb / free_speed_kmh).ln()).ln()
        / ((a - 1) as f64 / (b - 1) as f64).ln();
    let beta = (a - 1) as f64 / (free_speed_kmh / va).ln().powf(1.0 / gamma);
    if !(beta.is_finite() && beta > 0.0 && gamma.is_finite() && gamma > 0.0) {
        return Err(domain("speed samples do not determine a valid exponential law"));
    }
    Ok((beta, gamma))
}

/// The density-to-flow maps of one section.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FundamentalDiagram {
    params: SectionParams,
    model: FlowModel,
    q_max: f64,
    q_max_overridden: bool,
    /// `flows[n]` for `n = 0..=c`.
    #[serde(skip)]
    flows: Vec<f64>,
}

impl FundamentalDiagram {
    /// Builds the diagram with `q_max` derived from the speed law. For the
    /// linear law this is `v1 / (L c) * ((c + 1) / 2)^2`; for the exponential
    /// law it is the largest flow `n * v_n / L` over `1..=c`.
    pub fn new(params: SectionParams, model: FlowModel) -> Result<Self> {
        let q_max = match model {
            FlowModel::LinearQuadratic => {
                let c = params.capacity() as f64;
                params.free_speed_kmh() / (params.length_km() * c) * ((c + 1.0) / 2.0).powi(2)
            }
            FlowModel::Exponential { beta, gamma } => {
                check_shape(beta, gamma)?;
                (1..=params.capacity())
                    .map(|n| exponential_flow(n, &params, beta, gamma))
                    .fold(0.0, f64::max)
            }
        };
        Ok(Self::assemble(params, model, q_max, false))
    }

    /// Builds the diagram with an externally supplied `q_max`, used everywhere
    /// in place of the derived value.
    pub fn with_q_max(params: SectionParams, model: FlowModel, q_max: f64) -> Result<Self> {
        if let FlowModel::Exponential { beta, gamma } = model {
            check_shape(beta, gamma)?;
        }
        if !(q_max.is_finite() && q_max > 0.0) {
            return Err(domain(format!("q_max must be finite and positive, got {q_max}")));
        }
        Ok(Self::assemble(params, model, q_max, true))
    }

    /// Linear-law diagram, the common case.
    pub fn linear(params: SectionParams) -> Self {
        Self::new(params, FlowModel::LinearQuadratic).expect("linear law has no shape parameters")
    }

    fn assemble(params: SectionParams, model: FlowModel, q_max: f64, overridden: bool) -> Self {
        let c = params.capacity();
        let flows = (0..=c)
            .map(|n| match model {
                FlowModel::LinearQuadratic => quadratic(n, c, q_max),
                FlowModel::Exponential { beta, gamma } if n > 0 => {
                    exponential_flow(n, &params, beta, gamma)
                }
                FlowModel::Exponential { .. } => 0.0,
            })
            .collect();
        Self {
            params,
            model,
            q_max,
            q_max_overridden: overridden,
            flows,
        }
    }

    pub fn params(&self) -> &SectionParams {
        &self.params
    }

    pub fn model(&self) -> FlowModel {
        self.model
    }

    pub fn capacity(&self) -> usize {
        self.params.capacity()
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    pub fn q_max_overridden(&self) -> bool {
        self.q_max_overridden
    }

    pub fn is_quadratic(&self) -> bool {
        self.model == FlowModel::LinearQuadratic
    }

    /// Flows `q_1..=q_c`, the departure rates of the section as a birth-death chain.
    pub fn service_rates(&self) -> &[f64] {
        &self.flows[1..]
    }

    fn check_count(&self, n: usize) -> Result<()> {
        if n > self.capacity() {
            return Err(domain(format!(
                "car count {n} outside 0..={}",
                self.capacity()
            )));
        }
        Ok(())
    }

    fn require_quadratic(&self) -> Result<()> {
        if !self.is_quadratic() {
            return Err(domain("operation requires the linear/quadratic law"));
        }
        Ok(())
    }

    /// `true` when `n <= (c + 1) / 2`, i.e. on the free-flow side of the vertex.
    fn free_side(&self, n: usize) -> bool {
        2 * n <= self.capacity() + 1
    }

    /// Quadratic flow `q_max * (1 - ((c - 2n + 1) / (c + 1))^2)`.
    pub fn quadratic_flow(&self, n: usize) -> Result<f64> {
        self.require_quadratic()?;
        self.check_count(n)?;
        Ok(self.flows[n])
    }

    /// Traffic demand: the flow the section wants to send downstream.
    pub fn demand(&self, n: usize) -> Result<f64> {
        self.require_quadratic()?;
        self.check_count(n)?;
        Ok(if self.free_side(n) { self.flows[n] } else { self.q_max })
    }

    /// Traffic supply: the flow the section can accept from upstream.
    pub fn supply(&self, n: usize) -> Result<f64> {
        self.require_quadratic()?;
        self.check_count(n)?;
        Ok(if self.free_side(n) { self.q_max } else { self.flows[n] })
    }

    /// `g(i) = (q_i / q_max) / i`.
    pub fn normalized_service_rate(&self, i: usize) -> Result<f64> {
        self.require_quadratic()?;
        if i == 0 {
            return Err(domain("normalized service rate is undefined at i = 0"));
        }
        self.check_count(i)?;
        Ok(self.flows[i] / self.q_max / i as f64)
    }
}

fn quadratic(n: usize, c: usize, q_max: f64) -> f64 {
    let x = (c as f64 - 2.0 * n as f64 + 1.0) / (c as f64 + 1.0);
    q_max * (1.0 - x * x)
}

fn exponential_flow(n: usize, params: &SectionParams, beta: f64, gamma: f64) -> f64 {
    let v = params.free_speed_kmh() * (-((n - 1) as f64 / beta).powf(gamma)).exp();
    v * n as f64 / params.length_km()
}

/// JSON description of a section as accepted by the command-line tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionSpec {
    pub length_km: f64,
    pub free_speed_kmh: f64,
    pub jam_density_veh_per_km: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max_override_veh_per_h: Option<f64>,
    #[serde(default = "default_model")]
    pub model: FlowModel,
}

fn default_model() -> FlowModel {
    FlowModel::LinearQuadratic
}

impl SectionSpec {
    pub fn params(&self) -> Result<SectionParams> {
        SectionParams::new(self.length_km, self.free_speed_kmh, self.jam_density_veh_per_km)
    }

    pub fn diagram(&self) -> Result<FundamentalDiagram> {
        let params = self.params()?;
        match self.q_max_override_veh_per_h {
            Some(q) => FundamentalDiagram::with_q_max(params, self.model, q),
            None => FundamentalDiagram::new(params, self.model),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table1_upstream() -> FundamentalDiagram {
        FundamentalDiagram::linear(SectionParams::new(0.1, 100.0, 180.0).unwrap())
    }

    fn table1_downstream() -> FundamentalDiagram {
        FundamentalDiagram::linear(SectionParams::new(0.1, 50.0, 180.0).unwrap())
    }

    fn odd_section() -> FundamentalDiagram {
        FundamentalDiagram::linear(SectionParams::new(0.1, 100.0, 190.0).unwrap())
    }

    #[test]
    fn capacity_from_length_and_jam_density() {
        let p = SectionParams::new(0.1, 100.0, 180.0).unwrap();
        assert_eq!(p.capacity(), 18);
        assert!(SectionParams::new(0.1, 100.0, 185.5).is_err());
        assert!(SectionParams::new(0.0, 100.0, 180.0).is_err());
        assert!(SectionParams::new(0.1, -1.0, 180.0).is_err());
        assert!(SectionParams::new(0.001, 100.0, 180.0).is_err());
    }

    #[test]
    fn linear_speed_values() {
        let p = SectionParams::new(0.1, 100.0, 180.0).unwrap();
        assert_eq!(linear_speed(1, &p).unwrap(), 100.0);
        assert_relative_eq!(linear_speed(18, &p).unwrap(), 100.0 / 18.0, max_relative = 1e-12);
        assert_relative_eq!(linear_speed(9, &p).unwrap(), 55.555_555_555_6, max_relative = 1e-10);
        assert!(linear_speed(0, &p).is_err());
        assert!(linear_speed(19, &p).is_err());
    }

    #[test]
    fn exponential_speed_values() {
        assert_eq!(exponential_speed(1, 100.0, 19.0, 1.0).unwrap(), 100.0);
        assert_relative_eq!(
            exponential_speed(20, 100.0, 19.0, 1.0).unwrap(),
            100.0 * (-1.0f64).exp(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            exponential_speed(39, 100.0, 19.0, 1.0).unwrap(),
            100.0 * (-2.0f64).exp(),
            max_relative = 1e-14
        );
        assert!(exponential_speed(3, 100.0, 0.0, 1.0).is_err());
        assert!(exponential_speed(3, 100.0, 1.0, -2.0).is_err());
    }

    #[test]
    fn fit_recovers_published_style_samples() {
        let (beta, gamma) = fit_beta_gamma(100.0, 20, 36.788, 39, 13.534).unwrap();
        assert_relative_eq!(beta, 19.0, max_relative = 1e-3);
        assert_relative_eq!(gamma, 1.0, max_relative = 1e-3);
    }

    #[test]
    fn fit_rejects_degenerate_inputs() {
        assert!(fit_beta_gamma(100.0, 2, 100.0, 5, 50.0).is_err());
        assert!(fit_beta_gamma(100.0, 1, 90.0, 5, 50.0).is_err());
        assert!(fit_beta_gamma(100.0, 6, 90.0, 5, 50.0).is_err());
        assert!(fit_beta_gamma(100.0, 3, 40.0, 5, 50.0).is_err());
    }

    #[test]
    fn fit_both_beta_forms_agree() {
        let (v1, a, b) = (90.0, 7, 31);
        let va = exponential_speed(a, v1, 12.5, 1.7).unwrap();
        let vb = exponential_speed(b, v1, 12.5, 1.7).unwrap();
        let (beta, gamma) = fit_beta_gamma(v1, a, va, b, vb).unwrap();
        let beta_b = (b - 1) as f64 / (v1 / vb).ln().powf(1.0 / gamma);
        assert_relative_eq!(beta, beta_b, max_relative = 1e-9);
    }

    #[test]
    fn q_max_from_free_speed() {
        let up = table1_upstream();
        let down = table1_downstream();
        assert_relative_eq!(up.q_max(), 100.0 / 1.8 * 90.25, max_relative = 1e-14);
        assert!((up.q_max() - 5000.0).abs() / 5000.0 < 0.005);
        assert!((down.q_max() - 2500.0).abs() / 2500.0 < 0.005);
    }

    #[test]
    fn quadratic_flow_values() {
        let d = table1_upstream();
        assert_eq!(d.quadratic_flow(0).unwrap(), 0.0);
        // q_1 = v1 * rho_1 = v1 / L
        assert_relative_eq!(d.quadratic_flow(1).unwrap(), 1000.0, max_relative = 1e-12);
        assert!(d.quadratic_flow(19).is_err());
        let odd = odd_section();
        assert_eq!(odd.capacity(), 19);
        assert_eq!(odd.quadratic_flow(10).unwrap(), odd.q_max());
    }

    #[test]
    fn speed_recovered_from_flow() {
        for d in [table1_upstream(), table1_downstream(), odd_section()] {
            let c = d.capacity();
            let q1 = d.quadratic_flow(1).unwrap();
            for n in 1..=c {
                let ratio = (d.quadratic_flow(n).unwrap() / n as f64) / q1;
                assert_relative_eq!(ratio, (c - n + 1) as f64 / c as f64, max_relative = 1e-12);
                let v = linear_speed(n, d.params()).unwrap();
                assert_relative_eq!(
                    d.quadratic_flow(n).unwrap() * d.params().length_km() / n as f64,
                    v,
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn flow_is_symmetric_about_vertex() {
        let d = table1_upstream();
        let c = d.capacity();
        for n in 1..=c {
            assert_relative_eq!(
                d.quadratic_flow(n).unwrap(),
                d.quadratic_flow(c + 1 - n).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn demand_and_supply_values() {
        let d = table1_upstream();
        assert_eq!(d.demand(0).unwrap(), 0.0);
        assert_eq!(d.demand(18).unwrap(), d.q_max());
        assert_relative_eq!(d.demand(9).unwrap(), 5000.0, max_relative = 1e-12);
        assert_eq!(d.supply(0).unwrap(), d.q_max());
        assert_relative_eq!(d.supply(18).unwrap(), 1000.0, max_relative = 1e-12);
        let odd = odd_section();
        assert_eq!(odd.supply(10).unwrap(), odd.q_max());
        assert_eq!(odd.demand(10).unwrap(), odd.q_max());
        assert!(d.demand(19).is_err());
        assert!(d.supply(19).is_err());
    }

    #[test]
    fn demand_supply_shape() {
        for d in [table1_upstream(), table1_downstream(), odd_section()] {
            let c = d.capacity();
            for n in 0..=c {
                let (dem, sup) = (d.demand(n).unwrap(), d.supply(n).unwrap());
                assert_eq!(dem.min(sup), d.quadratic_flow(n).unwrap());
                assert!(dem <= d.q_max() && sup <= d.q_max());
                assert!(sup > 0.0);
                if n > 0 {
                    assert!(dem >= d.demand(n - 1).unwrap());
                    assert!(sup <= d.supply(n - 1).unwrap());
                }
            }
        }
    }

    #[test]
    fn normalized_service_rate_values() {
        let d = table1_upstream();
        assert_relative_eq!(d.normalized_service_rate(1).unwrap(), 72.0 / 361.0, max_relative = 1e-12);
        assert_relative_eq!(
            d.normalized_service_rate(18).unwrap(),
            72.0 / 361.0 / 18.0,
            max_relative = 1e-12
        );
        let odd = odd_section();
        assert_relative_eq!(odd.normalized_service_rate(10).unwrap(), 2.0 / 20.0, max_relative = 1e-12);
        assert!(d.normalized_service_rate(0).is_err());
    }

    #[test]
    fn override_is_used_everywhere() {
        let p = SectionParams::new(0.1, 100.0, 180.0).unwrap();
        let d = FundamentalDiagram::with_q_max(p, FlowModel::LinearQuadratic, 5000.0).unwrap();
        assert_eq!(d.q_max(), 5000.0);
        assert_eq!(d.demand(18).unwrap(), 5000.0);
        assert_eq!(d.supply(0).unwrap(), 5000.0);
        assert_relative_eq!(d.quadratic_flow(1).unwrap(), 5000.0 * 72.0 / 361.0, max_relative = 1e-12);
        assert!(FundamentalDiagram::with_q_max(p, FlowModel::LinearQuadratic, 0.0).is_err());
    }

    #[test]
    fn exponential_diagram_rejects_quadratic_ops() {
        let p = SectionParams::new(0.2, 100.0, 200.0).unwrap();
        let d = FundamentalDiagram::new(p, FlowModel::Exponential { beta: 19.0, gamma: 1.0 }).unwrap();
        assert!(d.q_max() > 0.0);
        assert!(d.service_rates().iter().all(|&q| q > 0.0 && q <= d.q_max()));
        assert!(d.demand(3).is_err());
        assert!(d.quadratic_flow(3).is_err());
    }

    #[test]
    fn section_spec_json() {
        let spec: SectionSpec = serde_json::from_str(
            r#"{"length_km": 0.1, "free_speed_kmh": 100, "jam_density_veh_per_km": 180, "model": "linear"}"#,
        )
        .unwrap();
        assert_eq!(spec.diagram().unwrap(), table1_upstream());

        let spec: SectionSpec = serde_json::from_str(
            r#"{"length_km": 0.1, "free_speed_kmh": 50, "jam_density_veh_per_km": 180,
                "q_max_override_veh_per_h": 2500,
                "model": {"exponential": {"beta": 19, "gamma": 1}}}"#,
        )
        .unwrap();
        let d = spec.diagram().unwrap();
        assert_eq!(d.q_max(), 2500.0);
        assert_eq!(d.model(), FlowModel::Exponential { beta: 19.0, gamma: 1.0 });
    }
}
