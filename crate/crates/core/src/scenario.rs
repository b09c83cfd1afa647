//! Scenario files: users' links, prices, market constants and resource boxes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::kpi::zeta_cached;
use crate::qoe::UserQoeModel;
use crate::types::{KpiBounds, LinkParams, MarketConstants, ModulationScheme, ResourceBundle, UnitPrices};
use crate::units::{db_to_linear, dbw_to_watts};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Lower and upper bound of every resource dimension.
///
/// Rendering is bounded per object, so a user with `n` objects gets
/// `[n * render_per_object.0, n * render_per_object.1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceBoxes {
    /// W
    pub power_down: (f64, f64),
    /// Hz
    pub bandwidth: (f64, f64),
    /// W
    pub power_up: (f64, f64),
    /// K per object
    pub render_per_object: (f64, f64),
}

impl Default for ResourceBoxes {
    fn default() -> Self {
        Self {
            power_down: (200.0, 2000.0),
            bandwidth: (5e6, 20e6),
            power_up: (200.0, 2000.0),
            render_per_object: (15.0, 60.0),
        }
    }
}

impl ResourceBoxes {
    pub fn lower(&self, n_objects: usize) -> ResourceBundle {
        ResourceBundle {
            power_down: self.power_down.0,
            bandwidth: self.bandwidth.0,
            power_up: self.power_up.0,
            render_total: self.render_per_object.0 * n_objects as f64,
        }
    }

    pub fn upper(&self, n_objects: usize) -> ResourceBundle {
        ResourceBundle {
            power_down: self.power_down.1,
            bandwidth: self.bandwidth.1,
            power_up: self.power_up.1,
            render_total: self.render_per_object.1 * n_objects as f64,
        }
    }

    pub fn validate(&self, floor: f64) -> Result<(), String> {
        let dims = [
            ("power_down", self.power_down),
            ("bandwidth", self.bandwidth),
            ("power_up", self.power_up),
            ("render_per_object", self.render_per_object),
        ];
        for (name, (lo, hi)) in dims {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi >= lo) {
                return Err(format!("box {name} must satisfy 0 <= lo <= hi (got [{lo}, {hi}])"));
            }
        }
        if self.render_per_object.0 < floor {
            return Err(format!(
                "render_per_object lower bound {} is below the floor {floor}",
                self.render_per_object.0
            ));
        }
        if self.power_down.0 <= 0.0 || self.power_up.0 <= 0.0 {
            return Err("transmit power boxes must start above 0".into());
        }
        Ok(())
    }
}

fn default_floor() -> f64 {
    15.0
}

fn default_modulation() -> ModulationScheme {
    ModulationScheme::CoherentBpsk
}

/// Attention levels of the objects each preset user sees.
pub fn default_attention(user: usize) -> Vec<f64> {
    let base = [5.0, 4.0, 4.0, 3.0, 3.0, 2.0, 2.0, 1.0];
    let mut v = base.to_vec();
    v.rotate_left(user % base.len());
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub users: Vec<LinkParams>,
    pub prices: UnitPrices,
    pub market: MarketConstants,
    pub bounds: KpiBounds,
    #[serde(default = "default_modulation")]
    pub modulation: ModulationScheme,
    #[serde(default = "default_floor")]
    pub render_floor: f64,
    /// Per-user object attention; missing rows fall back to [`default_attention`].
    #[serde(default)]
    pub attention: Vec<Vec<f64>>,
    #[serde(default)]
    pub boxes: ResourceBoxes,
}

impl Scenario {
    /// The three users of the reference network table with the contract-study market.
    ///
    /// Both transmit powers start at 200 W and the bandwidth at 10 MHz.
    pub fn table2() -> Self {
        let user = |m_u: u32, p_intf_dbw: f64, mu_intf_db: f64, mu_db: f64, d: f64| {
            let mu = db_to_linear(mu_db);
            let alpha = 2.0;
            LinkParams {
                antennas_cbs: 6,
                antennas_rs: m_u,
                interference_paths: 3,
                distance_m: d,
                path_loss_exp: alpha,
                tx_power_down: 200.0,
                interference_power_down: dbw_to_watts(p_intf_dbw),
                chan_coeff_data: mu,
                chan_coeff_intf: db_to_linear(mu_intf_db),
                tx_power_up: 200.0,
                interference_power_up: dbw_to_watts(p_intf_dbw),
                chan_coeff_data_up: mu * d.powf(-alpha),
                chan_coeff_intf_up: db_to_linear(mu_intf_db),
                bandwidth_hz: 10e6,
            }
        };
        let users = vec![
            user(3, 5.0, -3.0, -1.0, 10.0),
            user(3, 5.0, -1.0, -2.0, 6.0),
            user(7, 1.0, -3.0, -1.0, 10.0),
        ];
        Self {
            market: MarketConstants {
                base_fee_per_user: vec![1e6; 3],
                qoe_fee_per_user: vec![5e3; 3],
                rra: 0.8,
                inp_utility_floor: 70.0,
            },
            users,
            prices: UnitPrices::reference(),
            bounds: KpiBounds::reference(),
            modulation: default_modulation(),
            render_floor: default_floor(),
            attention: (0..3).map(default_attention).collect(),
            boxes: ResourceBoxes::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn attention_of(&self, user: usize) -> Vec<f64> {
        self.attention.get(user).cloned().unwrap_or_else(|| default_attention(user))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.users.is_empty() {
            return bad("at least one user is required".into());
        }
        for (k, u) in self.users.iter().enumerate() {
            if let Err(e) = u.validate() {
                return bad(format!("user {k}: {e}"));
            }
        }
        if let Err(e) = self.market.validate(self.users.len()) {
            return bad(e);
        }
        if let Err(e) = self.bounds.validate() {
            return bad(e);
        }
        let p = &self.prices;
        if ![p.power_down, p.bandwidth, p.power_up, p.render].iter().all(|&x| x.is_finite() && x > 0.0) {
            return bad("unit prices must be finite and > 0".into());
        }
        if !(self.render_floor.is_finite() && self.render_floor > 0.0) {
            return bad(format!("render_floor must be > 0 (got {})", self.render_floor));
        }
        if let Err(e) = self.boxes.validate(self.render_floor) {
            return bad(e);
        }
        if self.attention.len() > self.users.len() {
            return bad(format!(
                "{} attention rows for {} users",
                self.attention.len(),
                self.users.len()
            ));
        }
        for (k, row) in self.attention.iter().enumerate() {
            if row.is_empty() || !row.iter().all(|&x| x.is_finite() && x > 0.0) {
                return bad(format!("user {k}: attention must be a non-empty list of positive values"));
            }
        }
        Ok(())
    }

    pub fn qoe_model(&self, user: usize) -> UserQoeModel {
        let link = self.users[user].clone();
        let z = zeta_cached(link.antennas_cbs, link.antennas_rs);
        UserQoeModel {
            link,
            zeta_down: z,
            zeta_up: z,
            modulation: self.modulation,
            attention: self.attention_of(user),
            floor: self.render_floor,
            bounds: self.bounds,
            freeze_link_factors: false,
        }
    }

    pub fn qoe_models(&self) -> Vec<UserQoeModel> {
        (0..self.n_users()).map(|k| self.qoe_model(k)).collect()
    }
}
