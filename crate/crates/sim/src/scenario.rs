//! Scenario files: actors, agreements with lifecycle scripts, solution and
//! policy parameters. JSON with a `schema_version` field.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use panelchain::identity::Role;
use panelchain::lifecycle::{FeeSchedule, LiabilitySplit};
use panelchain::money::{CostRate, Energy, Ppm, Usd};
use panelchain::rccoin::{Approach, MarketParams, RcscConfig, SupplyPolicy};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}, field `{field}`: {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Solution {
    /// Fiat in a recycling bank account, mirrored on the ledger.
    Offchain,
    /// Stablecoin escrow contracts.
    Escrow,
    /// RC-coins minted on generation.
    RcCoin,
}

impl TryFrom<u8> for Solution {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(Solution::Offchain),
            2 => Ok(Solution::Escrow),
            3 => Ok(Solution::RcCoin),
            other => Err(format!("solution must be 1, 2 or 3, got {other}")),
        }
    }
}

impl From<Solution> for u8 {
    fn from(s: Solution) -> u8 {
        match s {
            Solution::Offchain => 1,
            Solution::Escrow => 2,
            Solution::RcCoin => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorEntry {
    pub id: String,
    pub role: Role,
    /// Opening fiat balance; defaults to $1,000,000.
    #[serde(default = "default_fiat")]
    pub fiat: Usd,
}

fn default_fiat() -> Usd {
    Usd::from_whole(1_000_000)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum EolAction {
    #[default]
    Recycle,
    Refurbish { new_prosumer: String, retire_tick: u64 },
    Landfill,
}


#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureScript {
    pub tick: u64,
    #[serde(default = "default_cause")]
    pub cause: String,
}

fn default_cause() -> String {
    "damage".into()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifecycleScript {
    #[serde(default)]
    pub failure: Option<FailureScript>,
    /// What happens to the panel once it leaves service (EOL or failure).
    #[serde(default)]
    pub eol_action: EolAction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementEntry {
    pub id: String,
    pub prosumer: String,
    pub manufacturer: String,
    pub recycler: String,
    pub utility: String,
    pub capacity_w: u64,
    pub cost_rate: CostRate,
    pub lifetime_months: u32,
    pub warranty_months: u32,
    #[serde(default)]
    pub transport_allowance: Usd,
    #[serde(default)]
    pub start_tick: u64,
    #[serde(default)]
    pub fee_schedule: FeeSchedule,
    #[serde(default)]
    pub split: LiabilitySplit,
    /// Overrides the scenario-wide monthly generation.
    #[serde(default)]
    pub kwh_per_month: Option<Energy>,
    #[serde(default)]
    pub script: LifecycleScript,
}

/// Template expanded into `count` prosumers and agreements sharing one
/// manufacturer, recycler and utility.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetTemplate {
    pub count: u32,
    pub manufacturer: String,
    pub recycler: String,
    pub utility: String,
    pub capacity_w: u64,
    pub cost_rate: CostRate,
    pub lifetime_months: u32,
    pub warranty_months: u32,
    #[serde(default)]
    pub transport_allowance: Usd,
    /// Every `fail_every`-th agreement fails at `fail_tick`.
    #[serde(default)]
    pub fail_every: Option<u32>,
    #[serde(default)]
    pub fail_tick: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub kwh_per_month: Energy,
    /// Output multiplier applied at each year boundary.
    #[serde(default = "unit_growth")]
    pub growth_per_year: Ppm,
}

fn unit_growth() -> Ppm {
    Ppm::ONE
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            kwh_per_month: Energy::from_kwh(1000),
            growth_per_year: Ppm::ONE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    #[serde(default = "default_w")]
    pub coins_per_batch: panelchain::money::Coins,
    #[serde(default = "default_e")]
    pub units_per_batch: Energy,
    #[serde(default = "default_gamma")]
    pub gamma: Ppm,
    #[serde(default = "default_approach")]
    pub approach: Approach,
    /// Growth factor per year; the last entry repeats.
    #[serde(default)]
    pub growth_factors: Vec<Ppm>,
}

fn default_w() -> panelchain::money::Coins {
    SupplyPolicy::default().coins_per_batch
}
fn default_e() -> Energy {
    SupplyPolicy::default().units_per_batch
}
fn default_gamma() -> Ppm {
    SupplyPolicy::default().gamma
}
fn default_approach() -> Approach {
    Approach::A
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            coins_per_batch: default_w(),
            units_per_batch: default_e(),
            gamma: default_gamma(),
            approach: Approach::A,
            growth_factors: Vec::new(),
        }
    }
}

impl PolicyParams {
    pub fn initial(&self) -> SupplyPolicy {
        SupplyPolicy {
            coins_per_batch: self.coins_per_batch,
            units_per_batch: self.units_per_batch,
            gamma: self.gamma,
            year_index: 0,
            approach: self.approach,
        }
    }

    /// Growth factor applied at the end of year `year` (0-based).
    pub fn growth_for(&self, year: u32) -> Ppm {
        self.growth_factors
            .get(year as usize)
            .or(self.growth_factors.last())
            .copied()
            .unwrap_or(Ppm::ONE)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefaultEntry {
    pub actor: String,
    /// Refuses liability payments before this tick; forever if absent.
    #[serde(default)]
    pub until_tick: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub duration_ticks: u64,
    pub solution: Solution,
    #[serde(default)]
    pub actors: Vec<ActorEntry>,
    #[serde(default)]
    pub agreements: Vec<AgreementEntry>,
    #[serde(default)]
    pub fleet: Option<FleetTemplate>,
    #[serde(default)]
    pub generation: GenerationParams,
    #[serde(default)]
    pub policy: PolicyParams,
    #[serde(default)]
    pub rcsc: RcscConfig,
    #[serde(default)]
    pub market: MarketParams,
    #[serde(default)]
    pub defaulters: Vec<DefaultEntry>,
    /// Roles whose signatures escrow releases require; all four by default.
    #[serde(default)]
    pub escrow_signers: Option<Vec<Role>>,
    /// Ticks between balance postings of the recycling account.
    #[serde(default = "default_posting_interval")]
    pub posting_interval: u64,
}

fn default_posting_interval() -> u64 {
    1
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ScenarioError::Parse {
                line: inner.line(),
                column: inner.column(),
                field,
                message: inner.to_string(),
            }
        })?;
        scenario.expand_fleet();
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Replace the fleet template with explicit actors and agreements.
    pub fn expand_fleet(&mut self) {
        let Some(fleet) = self.fleet.take() else {
            return;
        };
        let width = fleet.count.to_string().len();
        for i in 0..fleet.count {
            let n = format!("{:0width$}", i + 1);
            let prosumer = format!("prosumer-{n}");
            self.actors.push(ActorEntry {
                id: prosumer.clone(),
                role: Role::Prosumer,
                fiat: default_fiat(),
            });
            let failure = match (fleet.fail_every, fleet.fail_tick) {
                (Some(k), Some(tick)) if k > 0 && (i + 1) % k == 0 => Some(FailureScript {
                    tick,
                    cause: default_cause(),
                }),
                _ => None,
            };
            self.agreements.push(AgreementEntry {
                id: format!("agreement-{n}"),
                prosumer,
                manufacturer: fleet.manufacturer.clone(),
                recycler: fleet.recycler.clone(),
                utility: fleet.utility.clone(),
                capacity_w: fleet.capacity_w,
                cost_rate: fleet.cost_rate,
                lifetime_months: fleet.lifetime_months,
                warranty_months: fleet.warranty_months,
                transport_allowance: fleet.transport_allowance,
                start_tick: 0,
                fee_schedule: FeeSchedule::Monthly,
                split: LiabilitySplit::default(),
                kwh_per_month: None,
                script: LifecycleScript {
                    failure,
                    eol_action: EolAction::Recycle,
                },
            });
        }
    }

    pub fn role_of(&self, id: &str) -> Option<Role> {
        self.actors.iter().find(|a| a.id == id).map(|a| a.role)
    }

    /// Every violation, not just the first.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut v = Vec::new();
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            v.push(format!(
                "schema_version {} is not supported (expected {SCENARIO_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.duration_ticks == 0 {
            v.push("duration_ticks must be positive".into());
        }
        if self.posting_interval == 0 {
            v.push("posting_interval must be positive".into());
        }
        let mut roles: BTreeMap<&str, Role> = BTreeMap::new();
        for a in &self.actors {
            if a.id.is_empty() {
                v.push("actor with empty id".into());
            }
            if roles.insert(&a.id, a.role).is_some() {
                v.push(format!("duplicate actor `{}`", a.id));
            }
            if a.fiat.is_negative() {
                v.push(format!("actor `{}` has negative fiat", a.id));
            }
        }
        if !roles.values().any(|r| r.node_class() == panelchain::identity::NodeClass::Full) {
            v.push("no full-node actor to create blocks".into());
        }
        let mut want = |who: &str, role: Role, agreement: &str, field: &str| match roles.get(who) {
            None => v.push(format!("agreement `{agreement}`: {field} `{who}` is not a known actor")),
            Some(r) if *r != role => v.push(format!(
                "agreement `{agreement}`: {field} `{who}` is a {}, not a {}",
                r.tag(),
                role.tag()
            )),
            _ => {}
        };
        let mut ids = BTreeSet::new();
        let mut checks = Vec::new();
        for a in &self.agreements {
            want(&a.prosumer, Role::Prosumer, &a.id, "prosumer");
            want(&a.manufacturer, Role::Manufacturer, &a.id, "manufacturer");
            want(&a.recycler, Role::Recycler, &a.id, "recycler");
            want(&a.utility, Role::Utility, &a.id, "utility");
            if let EolAction::Refurbish { new_prosumer, .. } = &a.script.eol_action {
                want(new_prosumer, Role::Prosumer, &a.id, "refurbish target");
            }
            if !ids.insert(a.id.as_str()) {
                checks.push(format!("duplicate agreement `{}`", a.id));
            }
            checks.extend(self.agreement_checks(a));
        }
        v.extend(checks);
        for d in &self.defaulters {
            if !roles.contains_key(d.actor.as_str()) {
                v.push(format!("defaulter `{}` is not a known actor", d.actor));
            }
        }
        if let Some(signers) = &self.escrow_signers {
            if signers.is_empty() {
                v.push("escrow_signers must not be empty".into());
            }
            for r in signers {
                if !matches!(r, Role::Prosumer | Role::Manufacturer | Role::Recycler | Role::Utility) {
                    v.push(format!("escrow_signers: a {} is not an agreement party", r.tag()));
                }
            }
        }
        if let Err(e) = self.policy.initial().validate() {
            v.push(format!("policy: {e}"));
        }
        if self.policy.growth_factors.iter().any(|g| *g <= Ppm::ZERO) {
            v.push("policy: growth factors must be positive".into());
        }
        if self.generation.kwh_per_month.is_negative() || self.generation.growth_per_year <= Ppm::ZERO {
            v.push("generation: energy must be non-negative and growth positive".into());
        }
        if self.market.initial_price <= Usd::ZERO {
            v.push("market: initial price must be positive".into());
        }
        if !(self.market.volatility >= 0.0 && self.market.drift.is_finite() && self.market.impact >= 0.0) {
            v.push("market: volatility and impact must be non-negative".into());
        }
        if let Some(b) = &self.rcsc.band {
            if b.lower > b.upper {
                v.push("rcsc: band lower bound above upper bound".into());
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation(v))
        }
    }

    fn agreement_checks(&self, a: &AgreementEntry) -> Vec<String> {
        let mut v = Vec::new();
        let id = &a.id;
        if a.capacity_w == 0 || a.cost_rate <= CostRate::ZERO || a.lifetime_months == 0 {
            v.push(format!("agreement `{id}`: capacity, cost rate and lifetime must be positive"));
        }
        if a.warranty_months > a.lifetime_months {
            v.push(format!("agreement `{id}`: warranty exceeds lifetime"));
        }
        if let FeeSchedule::EnergyProportional {
            expected_lifetime_energy,
        } = a.fee_schedule
        {
            if expected_lifetime_energy <= Energy::ZERO {
                v.push(format!("agreement `{id}`: expected lifetime energy must be positive"));
            }
        }
        if a.start_tick >= self.duration_ticks {
            v.push(format!("agreement `{id}`: start tick {} is beyond the duration", a.start_tick));
        }
        let eol = a.start_tick + a.lifetime_months as u64;
        if let Some(f) = &a.script.failure {
            if f.tick > self.duration_ticks {
                v.push(format!(
                    "agreement `{id}`: failure tick {} is beyond duration {}",
                    f.tick, self.duration_ticks
                ));
            }
            if f.tick <= a.start_tick || f.tick >= eol {
                v.push(format!("agreement `{id}`: failure tick {} is outside the service life", f.tick));
            }
        }
        if let EolAction::Refurbish { retire_tick, .. } = &a.script.eol_action {
            if a.script.failure.is_some() {
                v.push(format!("agreement `{id}`: a failed panel cannot be refurbished"));
            }
            if *retire_tick > self.duration_ticks || *retire_tick < eol {
                v.push(format!("agreement `{id}`: retire tick {retire_tick} must lie between EOL and the duration"));
            }
        }
        v
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text)
}
