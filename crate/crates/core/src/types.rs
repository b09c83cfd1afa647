//! Shared domain types.
//!
//! All values are stored in linear SI units (watts, hertz, meters, linear
//! channel coefficients). Rendering capacity is measured in "K" resolution
//! units and kept as a plain real.

use serde::{Deserialize, Serialize};

use crate::units::deserialize_quantity;

/// Per-user MIMO link configuration.
///
/// Downlink: CBS with `antennas_cbs` antennas transmits to an RS with
/// `antennas_rs` antennas over `interference_paths` co-channel interferers.
/// Uplink uses the `*_up` fields and the same antenna counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub antennas_cbs: u32,
    pub antennas_rs: u32,
    pub interference_paths: u32,
    #[serde(deserialize_with = "deserialize_quantity")]
    pub distance_m: f64,
    #[serde(deserialize_with = "deserialize_quantity")]
    pub path_loss_exp: f64,
    #[serde(deserialize_with = "deserialize_quantity")]
    pub tx_power_down: f64,
    #[serde(deserialize_with = "deserialize_quantity")]
    pub interference_power_down: f64,
    #[serde(deserialize_with = "deserialize_quantity")]
    pub chan_coeff_data: f64,
    #[serde(deserialize_with = "deserialize_quantity")]
    pub chan_coeff_intf: f64,
    #[serde(deserialize_with = "deserialize_quantity")]
    pub tx_power_up: f64,
    #[serde(deserialize_with = "deserialize_quantity")]
    pub interference_power_up: f64,
    #[serde(deserialize_with = "deserialize_quantity")]
    pub chan_coeff_data_up: f64,
    #[serde(deserialize_with = "deserialize_quantity")]
    pub chan_coeff_intf_up: f64,
    #[serde(deserialize_with = "deserialize_quantity")]
    pub bandwidth_hz: f64,
}

/// One violated invariant of a [`LinkParams`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldViolation {
    pub field: &'static str,
    pub message: String,
}

impl std::fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid link parameters: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ValidationError(pub Vec<FieldViolation>);

impl LinkParams {
    /// Product M_C * M_U, the shape of the signal Gamma variate.
    pub fn signal_order(&self) -> u32 {
        self.antennas_cbs * self.antennas_rs
    }

    /// Interference order of the downlink, M_C * N_Q.
    pub fn interference_order_down(&self) -> u32 {
        self.antennas_cbs * self.interference_paths
    }

    /// Interference order of the uplink, M_U * N_Q.
    pub fn interference_order_up(&self) -> u32 {
        self.antennas_rs * self.interference_paths
    }

    /// Returns every violated invariant, not just the first.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut out = Vec::new();
        let counts = [
            ("antennas_cbs", self.antennas_cbs),
            ("antennas_rs", self.antennas_rs),
            ("interference_paths", self.interference_paths),
        ];
        for (field, v) in counts {
            if v < 1 {
                out.push(FieldViolation {
                    field,
                    message: "must be >=1".into(),
                });
            }
        }
        let positives = [
            ("distance_m", self.distance_m),
            ("path_loss_exp", self.path_loss_exp),
            ("tx_power_down", self.tx_power_down),
            ("interference_power_down", self.interference_power_down),
            ("chan_coeff_data", self.chan_coeff_data),
            ("chan_coeff_intf", self.chan_coeff_intf),
            ("tx_power_up", self.tx_power_up),
            ("interference_power_up", self.interference_power_up),
            ("chan_coeff_data_up", self.chan_coeff_data_up),
            ("chan_coeff_intf_up", self.chan_coeff_intf_up),
        ];
        for (field, v) in positives {
            if !(v.is_finite() && v > 0.0) {
                out.push(FieldViolation {
                    field,
                    message: format!("must be finite and >0 (got {v})"),
                });
            }
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz >= 0.0) {
            out.push(FieldViolation {
                field: "bandwidth_hz",
                message: format!("must be finite and >=0 (got {})", self.bandwidth_hz),
            });
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(ValidationError(out))
        }
    }

    /// Copy with the three link-side resource dimensions replaced.
    pub fn with_resources(&self, bundle: &ResourceBundle) -> Self {
        Self {
            tx_power_down: bundle.power_down,
            bandwidth_hz: bundle.bandwidth,
            tx_power_up: bundle.power_up,
            ..self.clone()
        }
    }
}

/// The four resource dimensions the InP invests per user:
/// downlink power (W), downlink bandwidth (Hz), uplink power (W), rendering capacity (K).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ResourceBundle {
    pub power_down: f64,
    pub bandwidth: f64,
    pub power_up: f64,
    pub render_total: f64,
}

/// Index of a resource dimension inside a [`ResourceBundle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    PowerDown,
    Bandwidth,
    PowerUp,
    RenderTotal,
}

impl Resource {
    pub const ALL: [Resource; 4] = [
        Resource::PowerDown,
        Resource::Bandwidth,
        Resource::PowerUp,
        Resource::RenderTotal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Resource::PowerDown => "power_down",
            Resource::Bandwidth => "bandwidth",
            Resource::PowerUp => "power_up",
            Resource::RenderTotal => "render_total",
        }
    }
}

impl std::str::FromStr for Resource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Resource::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown resource `{s}`"))
    }
}

impl ResourceBundle {
    pub fn to_array(self) -> [f64; 4] {
        [self.power_down, self.bandwidth, self.power_up, self.render_total]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            power_down: a[0],
            bandwidth: a[1],
            power_up: a[2],
            render_total: a[3],
        }
    }

    pub fn get(&self, r: Resource) -> f64 {
        match r {
            Resource::PowerDown => self.power_down,
            Resource::Bandwidth => self.bandwidth,
            Resource::PowerUp => self.power_up,
            Resource::RenderTotal => self.render_total,
        }
    }

    pub fn set(&mut self, r: Resource, v: f64) {
        match r {
            Resource::PowerDown => self.power_down = v,
            Resource::Bandwidth => self.bandwidth = v,
            Resource::PowerUp => self.power_up = v,
            Resource::RenderTotal => self.render_total = v,
        }
    }
}

/// Per-unit resource prices. Costs are quadratic: `sum_i u_i * x_i^2`,
/// with powers in kW, bandwidth in MHz and rendering in K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitPrices {
    pub power_down: f64,
    pub bandwidth: f64,
    pub power_up: f64,
    pub render: f64,
}

impl UnitPrices {
    /// Prices used for the contract study: rendering 5/K, downlink power 3/kW,
    /// bandwidth 2/MHz, uplink power 4/kW.
    pub fn reference() -> Self {
        Self {
            power_down: 3.0,
            bandwidth: 2.0,
            power_up: 4.0,
            render: 5.0,
        }
    }

    /// Quadratic cost of one bundle after converting to kW / MHz / K.
    pub fn cost(&self, b: &ResourceBundle) -> f64 {
        let pd = b.power_down / 1e3;
        let bw = b.bandwidth / 1e6;
        let pu = b.power_up / 1e3;
        let pr = b.render_total;
        self.power_down * pd * pd + self.bandwidth * bw * bw + self.power_up * pu * pu + self.render * pr * pr
    }
}

/// Modulation / detection combination parameterising the conditional BEP
/// `Gamma(tau2, tau1 * gamma) / (2 Gamma(tau2))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModulationScheme {
    CoherentBfsk,
    CoherentBpsk,
    NoncoherentBfsk,
    Dpsk,
}

impl ModulationScheme {
    pub const ALL: [ModulationScheme; 4] = [
        ModulationScheme::CoherentBfsk,
        ModulationScheme::CoherentBpsk,
        ModulationScheme::NoncoherentBfsk,
        ModulationScheme::Dpsk,
    ];

    pub fn tau1(self) -> f64 {
        match self {
            ModulationScheme::CoherentBfsk | ModulationScheme::NoncoherentBfsk => 0.5,
            ModulationScheme::CoherentBpsk | ModulationScheme::Dpsk => 1.0,
        }
    }

    pub fn tau2(self) -> f64 {
        match self {
            ModulationScheme::CoherentBfsk | ModulationScheme::CoherentBpsk => 0.5,
            ModulationScheme::NoncoherentBfsk | ModulationScheme::Dpsk => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModulationScheme::CoherentBfsk => "coherent-bfsk",
            ModulationScheme::CoherentBpsk => "coherent-bpsk",
            ModulationScheme::NoncoherentBfsk => "noncoherent-bfsk",
            ModulationScheme::Dpsk => "dpsk",
        }
    }
}

impl std::str::FromStr for ModulationScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModulationScheme::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown modulation `{s}`"))
    }
}

/// Normalization bounds for the link KPIs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiBounds {
    /// bit/s
    pub rate_min: f64,
    /// bit/s
    pub rate_max: f64,
    pub bep_min: f64,
    pub bep_max: f64,
}

impl KpiBounds {
    /// 10..42 Mbit/s and BEP in [1e-8, 1e-2].
    pub fn reference() -> Self {
        Self {
            rate_min: 10e6,
            rate_max: 42e6,
            bep_min: 1e-8,
            bep_max: 1e-2,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.rate_max > self.rate_min) {
            return Err(format!("rate_max ({}) must exceed rate_min ({})", self.rate_max, self.rate_min));
        }
        if !(self.bep_max > self.bep_min) {
            return Err(format!("bep_max ({}) must exceed bep_min ({})", self.bep_max, self.bep_min));
        }
        Ok(())
    }
}

/// Dense user x object attention levels with an observation mask.
///
/// Unobserved cells hold `NaN` in `values` and are never read as data.
#[derive(Debug, Clone)]
pub struct AttentionMatrix {
    n_users: usize,
    n_objects: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    pub object_labels: Vec<String>,
}

impl AttentionMatrix {
    pub const MIN_LEVEL: f64 = 1.0;
    pub const MAX_LEVEL: f64 = 5.0;

    /// Fully observed matrix from row-major values.
    pub fn dense(n_users: usize, n_objects: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_users * n_objects, "value count mismatch");
        Self {
            n_users,
            n_objects,
            mask: vec![true; values.len()],
            values,
            object_labels: default_labels(n_objects),
        }
    }

    /// Matrix with every cell unobserved.
    pub fn empty(n_users: usize, n_objects: usize) -> Self {
        Self {
            n_users,
            n_objects,
            values: vec![f64::NAN; n_users * n_objects],
            mask: vec![false; n_users * n_objects],
            object_labels: default_labels(n_objects),
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    fn idx(&self, u: usize, i: usize) -> usize {
        debug_assert!(u < self.n_users && i < self.n_objects);
        u * self.n_objects + i
    }

    pub fn get(&self, u: usize, i: usize) -> Option<f64> {
        let k = self.idx(u, i);
        self.mask[k].then(|| self.values[k])
    }

    pub fn is_observed(&self, u: usize, i: usize) -> bool {
        self.mask[self.idx(u, i)]
    }

    pub fn set(&mut self, u: usize, i: usize, v: f64) {
        let k = self.idx(u, i);
        self.values[k] = v;
        self.mask[k] = true;
    }

    pub fn clear(&mut self, u: usize, i: usize) {
        let k = self.idx(u, i);
        self.values[k] = f64::NAN;
        self.mask[k] = false;
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        1.0 - self.observed_count() as f64 / self.mask.len().max(1) as f64
    }

    /// Observed `(object, value)` pairs of one user.
    pub fn row_observed(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.n_objects).filter_map(move |i| self.get(u, i).map(|v| (i, v)))
    }

    /// Iterates all observed `(user, object, value)` triples in row-major order.
    pub fn observed(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_users).flat_map(move |u| self.row_observed(u).map(move |(i, v)| (u, i, v)))
    }

    /// Row-major values; unobserved cells are `NaN`.
    pub fn raw_values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Whether every observed value is an integer level in [1, 5].
    pub fn is_level_grid(&self) -> bool {
        self.observed().all(|(_, _, v)| {
            v.fract() == 0.0 && (Self::MIN_LEVEL..=Self::MAX_LEVEL).contains(&v)
        })
    }

    /// Returns a copy with the user rows reordered: row `r` of the result is row `perm[r]` of `self`.
    pub fn permute_users(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n_users);
        let mut out = Self::empty(self.n_users, self.n_objects);
        out.object_labels = self.object_labels.clone();
        for (r, &src) in perm.iter().enumerate() {
            for i in 0..self.n_objects {
                if let Some(v) = self.get(src, i) {
                    out.set(r, i, v);
                }
            }
        }
        out
    }
}

/// Equal when shape, labels, mask and every observed value agree.
impl PartialEq for AttentionMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n_users == other.n_users
            && self.n_objects == other.n_objects
            && self.object_labels == other.object_labels
            && self.mask == other.mask
            && self.observed().zip(other.observed()).all(|(a, b)| a == b)
    }
}

fn default_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("obj{i}")).collect()
}

/// The two contract items offered by the MSP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractTerms {
    /// Fixed payment F_s.
    pub fixed_fee: f64,
    /// Payment per unit of Meta-Immersion, u_M.
    pub per_qoe_fee: f64,
}

impl ContractTerms {
    pub fn new(fixed_fee: f64, per_qoe_fee: f64) -> Result<Self, String> {
        if !(fixed_fee.is_finite() && fixed_fee >= 0.0) {
            return Err(format!("fixed_fee must be finite and >=0 (got {fixed_fee})"));
        }
        if !(per_qoe_fee.is_finite() && per_qoe_fee >= 0.0) {
            return Err(format!("per_qoe_fee must be finite and >=0 (got {per_qoe_fee})"));
        }
        Ok(Self {
            fixed_fee,
            per_qoe_fee,
        })
    }
}

/// Market-side constants of the contract problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConstants {
    /// Basic access fee paid by each user (omega).
    pub base_fee_per_user: Vec<f64>,
    /// Extra fee per unit of QoE paid by each user (mu_U).
    pub qoe_fee_per_user: Vec<f64>,
    /// Relative risk aversion tau in [0, 1).
    pub rra: f64,
    /// IR threshold on the InP utility.
    pub inp_utility_floor: f64,
}

impl MarketConstants {
    pub fn validate(&self, n_users: usize) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.rra) {
            return Err(format!("rra must lie in [0,1) (got {})", self.rra));
        }
        if self.base_fee_per_user.len() != n_users || self.qoe_fee_per_user.len() != n_users {
            return Err(format!(
                "fee vectors must have one entry per user ({n_users}); got {} and {}",
                self.base_fee_per_user.len(),
                self.qoe_fee_per_user.len()
            ));
        }
        Ok(())
    }
}

/// Per-user KPI triple plus allocation and resulting Meta-Immersion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiReport {
    pub rate_bps: f64,
    pub bep: f64,
    pub per_object_render: Vec<f64>,
    pub mi: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{db_to_linear, dbw_to_watts};

    pub(crate) fn table2_user1() -> LinkParams {
        LinkParams {
            antennas_cbs: 6,
            antennas_rs: 3,
            interference_paths: 3,
            distance_m: 10.0,
            path_loss_exp: 2.0,
            tx_power_down: 100.0,
            interference_power_down: dbw_to_watts(5.0),
            chan_coeff_data: db_to_linear(-1.0),
            chan_coeff_intf: db_to_linear(-3.0),
            tx_power_up: 100.0,
            interference_power_up: dbw_to_watts(5.0),
            chan_coeff_data_up: db_to_linear(-1.0) * 0.01,
            chan_coeff_intf_up: db_to_linear(-3.0),
            bandwidth_hz: 10e6,
        }
    }

    #[test]
    fn table2_user1_is_valid() {
        assert!(table2_user1().validate().is_ok());
    }

    #[test]
    fn zero_antennas_rejected() {
        let mut p = table2_user1();
        p.antennas_cbs = 0;
        let err = p.validate().unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert_eq!(err.0[0].field, "antennas_cbs");
        assert!(err.to_string().contains("antennas_cbs must be >=1"));
    }

    #[test]
    fn all_violations_reported() {
        let mut p = table2_user1();
        p.distance_m = -1.0;
        p.bandwidth_hz = -5.0;
        p.chan_coeff_intf = f64::NAN;
        let err = p.validate().unwrap_err();
        let fields: Vec<_> = err.0.iter().map(|v| v.field).collect();
        assert_eq!(fields, vec!["distance_m", "chan_coeff_intf", "bandwidth_hz"]);
    }

    #[test]
    fn zero_bundle_costs_nothing() {
        assert_eq!(UnitPrices::reference().cost(&ResourceBundle::default()), 0.0);
    }

    #[test]
    fn cost_uses_kw_mhz_k() {
        let b = ResourceBundle {
            power_down: 2000.0,
            bandwidth: 3e6,
            power_up: 1000.0,
            render_total: 10.0,
        };
        // 3*2^2 + 2*3^2 + 4*1^2 + 5*10^2
        assert!((UnitPrices::reference().cost(&b) - 534.0).abs() < 1e-9);
    }

    #[test]
    fn modulation_pairs() {
        let pairs: Vec<_> = ModulationScheme::ALL.iter().map(|m| (m.tau1(), m.tau2())).collect();
        assert_eq!(pairs, vec![(0.5, 0.5), (1.0, 0.5), (0.5, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn link_params_accept_db_strings() {
        let json = r#"{"antennas_cbs":6,"antennas_rs":3,"interference_paths":3,
            "distance_m":"10 m","path_loss_exp":2,"tx_power_down":"20 dBW",
            "interference_power_down":"5 dBW","chan_coeff_data":"-1 dB","chan_coeff_intf":"-3 dB",
            "tx_power_up":100,"interference_power_up":"5 dBW","chan_coeff_data_up":0.0079,
            "chan_coeff_intf_up":"-3 dB","bandwidth_hz":"10 MHz"}"#;
        let p: LinkParams = serde_json::from_str(json).unwrap();
        assert!((p.tx_power_down - 100.0).abs() < 1e-9);
        assert!((p.chan_coeff_intf - 0.5011872336272722).abs() < 1e-12);
        assert_eq!(p.bandwidth_hz, 1e7);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn contract_terms_reject_negative() {
        assert!(ContractTerms::new(-1.0, 0.0).is_err());
        assert!(ContractTerms::new(0.0, f64::INFINITY).is_err());
        assert!(ContractTerms::new(1.0, 2.0).is_ok());
    }

    #[test]
    fn market_rra_range() {
        let m = MarketConstants {
            base_fee_per_user: vec![1.0],
            qoe_fee_per_user: vec![1.0],
            rra: 1.0,
            inp_utility_floor: 0.0,
        };
        assert!(m.validate(1).is_err());
    }
}
