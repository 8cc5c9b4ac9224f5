//! Panel agreements, fee accrual, the lifecycle state machine and the
//! liability split shared by every settlement solution.
//!
//! Ticks are months. The energy (and fee) for month `m` of an agreement is
//! reported at tick `start_tick + m + 1`, so the last fee lands on the same
//! tick the panel reaches end of life (`start_tick + lifetime_months`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{Registry, Role};
use crate::ledger::{
    ActorId, AgreementId, Canonical, ChannelId, Digest, Encoder, Payload, Transaction,
};
use crate::money::{div_floor, div_round_half_even, CostRate, Energy, Usd};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FeeSchedule {
    /// One equal payment per month while active; the final month absorbs
    /// the rounding residue.
    #[default]
    Monthly,
    /// Fees proportional to metered energy, at
    /// `(total cost + transport) / expected lifetime energy`.
    EnergyProportional { expected_lifetime_energy: Energy },
}

/// Weights for sharing a post-warranty remainder. Thirds by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiabilitySplit {
    pub prosumer: u32,
    pub manufacturer: u32,
    pub recycler: u32,
}

impl Default for LiabilitySplit {
    fn default() -> Self {
        LiabilitySplit {
            prosumer: 1,
            manufacturer: 1,
            recycler: 1,
        }
    }
}

impl LiabilitySplit {
    fn total(&self) -> u32 {
        self.prosumer + self.manufacturer + self.recycler
    }
}

/// The per-installation contract agreed between prosumer, manufacturer and
/// recycler, collected through a utility.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelAgreement {
    pub agreement_id: AgreementId,
    pub prosumer: ActorId,
    pub manufacturer: ActorId,
    pub recycler: ActorId,
    pub utility: ActorId,
    pub capacity_w: u64,
    pub cost_rate: CostRate,
    pub lifetime_months: u32,
    pub warranty_months: u32,
    pub transport_allowance: Usd,
    pub start_tick: u64,
    #[serde(default)]
    pub fee_schedule: FeeSchedule,
    #[serde(default)]
    pub split: LiabilitySplit,
}

impl Canonical for PanelAgreement {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.agreement_id.as_str())
            .str(self.prosumer.as_str())
            .str(self.manufacturer.as_str())
            .str(self.recycler.as_str())
            .str(self.utility.as_str())
            .u64(self.capacity_w)
            .i64(self.cost_rate.atoms())
            .u64(self.lifetime_months as u64)
            .u64(self.warranty_months as u64)
            .i64(self.transport_allowance.atoms())
            .u64(self.start_tick);
        match self.fee_schedule {
            FeeSchedule::Monthly => {
                e.str("monthly");
            }
            FeeSchedule::EnergyProportional {
                expected_lifetime_energy,
            } => {
                e.str("energy").i64(expected_lifetime_energy.atoms());
            }
        }
        e.u64(self.split.prosumer as u64)
            .u64(self.split.manufacturer as u64)
            .u64(self.split.recycler as u64);
    }
}

impl PanelAgreement {
    /// `cost_rate × capacity_w`, exact.
    pub fn total_recycling_cost(&self) -> Usd {
        self.cost_rate.total_for(self.capacity_w)
    }

    /// Everything the fund must collect: recycling cost plus transport.
    pub fn fund_target(&self) -> Usd {
        self.total_recycling_cost() + self.transport_allowance
    }

    pub fn eol_tick(&self) -> u64 {
        self.start_tick + self.lifetime_months as u64
    }

    pub fn warranty_end_tick(&self) -> u64 {
        self.start_tick + self.warranty_months as u64
    }

    /// Regular monthly fee: fund target over lifetime, half-even at the
    /// micro-dollar.
    pub fn monthly_fee(&self) -> Usd {
        let fund = self.fund_target().atoms() as i128;
        let n = self.lifetime_months.max(1) as i128;
        let mut fee = div_round_half_even(fund, n);
        // rounding up must never leave a negative final month
        if fee * (n - 1) > fund {
            fee = div_floor(fund, n);
        }
        Usd::from_atoms(fee as i64)
    }

    /// Fee for month index `m` (0-based): the regular fee, except the final
    /// month which takes whatever makes the lifetime sum exact.
    pub fn fee_for_month(&self, m: u32) -> Usd {
        let n = self.lifetime_months;
        if m + 1 < n {
            self.monthly_fee()
        } else if m + 1 == n {
            self.fund_target() - Usd::from_atoms(self.monthly_fee().atoms() * (n as i64 - 1))
        } else {
            Usd::ZERO
        }
    }

    /// Lump sum at installation: the same cost with no amortization.
    pub fn upfront_cost(&self) -> Usd {
        self.total_recycling_cost()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Active,
    ReachedEol,
    FailedInWarranty,
    FailedPostWarranty,
    Refurbished,
    Shipped,
    Recycled,
    Landfilled,
}

impl Phase {
    pub fn tag(self) -> &'static str {
        match self {
            Phase::Active => "active",
            Phase::ReachedEol => "reached_eol",
            Phase::FailedInWarranty => "failed_in_warranty",
            Phase::FailedPostWarranty => "failed_post_warranty",
            Phase::Refurbished => "refurbished",
            Phase::Shipped => "shipped",
            Phase::Recycled => "recycled",
            Phase::Landfilled => "landfilled",
        }
    }

    pub fn is_settleable(self) -> bool {
        matches!(
            self,
            Phase::ReachedEol | Phase::FailedInWarranty | Phase::FailedPostWarranty
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelState {
    pub agreement_id: AgreementId,
    pub phase: Phase,
    /// Current holder of the panel; changes on refurbishment.
    pub holder: ActorId,
    pub accrued: Usd,
    pub energy_total: Energy,
    pub months_billed: u32,
    pub failure_cause: Option<String>,
    /// Settleable phase the panel left when it was shipped. Refurbished
    /// panels settle as end-of-life.
    pub settlement_basis: Option<Phase>,
    pub phase_tick: u64,
}

impl PanelState {
    pub fn new(agreement: &PanelAgreement) -> Self {
        PanelState {
            agreement_id: agreement.agreement_id.clone(),
            phase: Phase::Active,
            holder: agreement.prosumer.clone(),
            accrued: Usd::ZERO,
            energy_total: Energy::ZERO,
            months_billed: 0,
            failure_cause: None,
            settlement_basis: None,
            phase_tick: agreement.start_tick,
        }
    }

    /// Phase whose liability rule applies, if any.
    pub fn settlement_phase(&self) -> Option<Phase> {
        match self.phase {
            p if p.is_settleable() => Some(p),
            Phase::Refurbished => Some(Phase::ReachedEol),
            Phase::Shipped | Phase::Recycled => self.settlement_basis,
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LifecycleError {
    #[error("invalid agreement parameters: {0}")]
    InvalidParameters(String),
    #[error("unknown party {0}")]
    UnknownParty(ActorId),
    #[error("party {0} is barred from new agreements after a payment default")]
    PartyBarred(ActorId),
    #[error("panel is {0:?}, not active")]
    PanelNotActive(Phase),
    #[error("{event} is not legal from {from:?}")]
    IllegalTransition { from: Phase, event: &'static str },
    #[error("{event} at tick {tick} is outside its window")]
    WrongTickWindow { event: &'static str, tick: u64 },
    #[error("phase {0:?} has no settlement")]
    PhaseNotSettleable(Phase),
}

/// Parameters for [`register_agreement`].
#[derive(Clone, Debug)]
pub struct AgreementTerms {
    pub agreement_id: AgreementId,
    pub prosumer: ActorId,
    pub manufacturer: ActorId,
    pub recycler: ActorId,
    pub utility: ActorId,
    pub capacity_w: u64,
    pub cost_rate: CostRate,
    pub lifetime_months: u32,
    pub warranty_months: u32,
    pub transport_allowance: Usd,
    pub start_tick: u64,
    pub fee_schedule: FeeSchedule,
    pub split: LiabilitySplit,
}

/// Validate terms, open the parties' private channel and produce the
/// manufacturer-signed agreement transaction.
pub fn register_agreement(
    registry: &mut Registry,
    terms: AgreementTerms,
    barred: &dyn Fn(&ActorId) -> bool,
) -> Result<(PanelAgreement, PanelState, Transaction), LifecycleError> {
    let parties = [
        (&terms.prosumer, Role::Prosumer),
        (&terms.manufacturer, Role::Manufacturer),
        (&terms.recycler, Role::Recycler),
        (&terms.utility, Role::Utility),
    ];
    for (id, role) in parties {
        match registry.role_of(id) {
            None => return Err(LifecycleError::UnknownParty(id.clone())),
            Some(r) if r != role => {
                return Err(LifecycleError::InvalidParameters(format!(
                    "{id} is a {r:?}, expected {role:?}"
                )))
            }
            _ => {}
        }
        if barred(id) {
            return Err(LifecycleError::PartyBarred(id.clone()));
        }
    }
    if terms.capacity_w == 0 {
        return Err(LifecycleError::InvalidParameters("capacity must be positive".into()));
    }
    if terms.cost_rate.atoms() <= 0 {
        return Err(LifecycleError::InvalidParameters("cost rate must be positive".into()));
    }
    if terms.lifetime_months == 0 || terms.warranty_months == 0 {
        return Err(LifecycleError::InvalidParameters(
            "lifetime and warranty must be positive".into(),
        ));
    }
    if terms.warranty_months > terms.lifetime_months {
        return Err(LifecycleError::InvalidParameters(format!(
            "warranty {} exceeds lifetime {}",
            terms.warranty_months, terms.lifetime_months
        )));
    }
    if terms.transport_allowance.is_negative() {
        return Err(LifecycleError::InvalidParameters("negative transport allowance".into()));
    }
    if terms.split.total() == 0 {
        return Err(LifecycleError::InvalidParameters("liability split weights are all zero".into()));
    }
    if let FeeSchedule::EnergyProportional {
        expected_lifetime_energy,
    } = terms.fee_schedule
    {
        if expected_lifetime_energy.atoms() <= 0 {
            return Err(LifecycleError::InvalidParameters(
                "expected lifetime energy must be positive".into(),
            ));
        }
    }

    let agreement = PanelAgreement {
        agreement_id: terms.agreement_id,
        prosumer: terms.prosumer,
        manufacturer: terms.manufacturer,
        recycler: terms.recycler,
        utility: terms.utility,
        capacity_w: terms.capacity_w,
        cost_rate: terms.cost_rate,
        lifetime_months: terms.lifetime_months,
        warranty_months: terms.warranty_months,
        transport_allowance: terms.transport_allowance,
        start_tick: terms.start_tick,
        fee_schedule: terms.fee_schedule,
        split: terms.split,
    };
    let channel = ChannelId::for_agreement(&agreement.agreement_id);
    registry.open_channel(
        channel.clone(),
        [
            agreement.prosumer.clone(),
            agreement.manufacturer.clone(),
            agreement.recycler.clone(),
            agreement.utility.clone(),
        ],
    );
    let key = registry
        .keypair(&agreement.manufacturer)
        .map_err(|_| LifecycleError::UnknownParty(agreement.manufacturer.clone()))?;
    let tx = Transaction::new(
        agreement.manufacturer.clone(),
        channel,
        Payload::Agreement(agreement.clone()),
        key,
    );
    let state = PanelState::new(&agreement);
    Ok((agreement, state, tx))
}

/// Fees that became due from one energy report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccrualEvent {
    pub agreement_id: AgreementId,
    pub tick: u64,
    pub energy: Energy,
    pub fee_due: Usd,
    /// Month indices billed by this report (monthly schedule).
    pub months: std::ops::Range<u32>,
}

/// Record metered energy for an active panel and accrue the fee it makes
/// due. Monthly schedule: every unbilled month up to the one ending at
/// `tick`. Energy schedule: the cumulative energy share of the fund target.
pub fn record_energy(
    agreement: &PanelAgreement,
    state: &mut PanelState,
    energy: Energy,
    tick: u64,
) -> Result<AccrualEvent, LifecycleError> {
    if state.phase != Phase::Active {
        return Err(LifecycleError::PanelNotActive(state.phase));
    }
    if energy.is_negative() {
        return Err(LifecycleError::InvalidParameters("negative energy".into()));
    }
    state.energy_total += energy;
    let fund = agreement.fund_target();
    let (fee, months) = match agreement.fee_schedule {
        FeeSchedule::Monthly => {
            let completed = tick
                .saturating_sub(agreement.start_tick)
                .min(agreement.lifetime_months as u64) as u32;
            let from = state.months_billed;
            let fee: Usd = (from..completed.max(from))
                .map(|m| agreement.fee_for_month(m))
                .sum();
            state.months_billed = completed.max(from);
            (fee, from..state.months_billed)
        }
        FeeSchedule::EnergyProportional {
            expected_lifetime_energy,
        } => {
            let target = div_round_half_even(
                state.energy_total.atoms() as i128 * fund.atoms() as i128,
                expected_lifetime_energy.atoms() as i128,
            ) as i64;
            let target = Usd::from_atoms(target).min(fund);
            let fee = (target - state.accrued).max(Usd::ZERO);
            (fee, state.months_billed..state.months_billed)
        }
    };
    state.accrued += fee;
    debug_assert!(state.accrued <= fund);
    Ok(AccrualEvent {
        agreement_id: agreement.agreement_id.clone(),
        tick,
        energy,
        fee_due: fee,
        months,
    })
}

/// `max(0, total recycling cost + transport − accrued)`.
pub fn remaining_cost(agreement: &PanelAgreement, state: &PanelState) -> Usd {
    (agreement.fund_target() - state.accrued).max(Usd::ZERO)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LifecycleEvent {
    ReachEol,
    Fail { cause: String },
    Refurbish { new_prosumer: ActorId },
    Ship,
    ReceiveAtRecycler,
    Landfill,
}

impl LifecycleEvent {
    pub fn name(&self) -> &'static str {
        match self {
            LifecycleEvent::ReachEol => "reach-eol",
            LifecycleEvent::Fail { .. } => "fail",
            LifecycleEvent::Refurbish { .. } => "refurbish",
            LifecycleEvent::Ship => "ship",
            LifecycleEvent::ReceiveAtRecycler => "receive-at-recycler",
            LifecycleEvent::Landfill => "landfill",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EolDeclaration {
    pub agreement: AgreementId,
    pub tick: u64,
    pub accrued: Usd,
}

impl Canonical for EolDeclaration {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.agreement.as_str()).u64(self.tick).i64(self.accrued.atoms());
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureDeclaration {
    pub agreement: AgreementId,
    pub tick: u64,
    pub cause: String,
    pub remaining_cost: Usd,
    pub warranty_claim: bool,
    pub manufacturer: ActorId,
    pub capacity_w: u64,
}

impl Canonical for FailureDeclaration {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.agreement.as_str())
            .u64(self.tick)
            .str(&self.cause)
            .i64(self.remaining_cost.atoms())
            .bool(self.warranty_claim)
            .str(self.manufacturer.as_str())
            .u64(self.capacity_w);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Refurbishment {
    pub agreement: AgreementId,
    pub previous_holder: ActorId,
    pub new_holder: ActorId,
}

impl Canonical for Refurbishment {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.agreement.as_str())
            .str(self.previous_holder.as_str())
            .str(self.new_holder.as_str());
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disposal {
    pub agreement: AgreementId,
    pub tick: u64,
}

impl Canonical for Disposal {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.agreement.as_str()).u64(self.tick);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shipment {
    pub agreement: AgreementId,
    pub recycler: ActorId,
    pub tick: u64,
}

impl Canonical for Shipment {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.agreement.as_str())
            .str(self.recycler.as_str())
            .u64(self.tick);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "subject", rename_all = "snake_case")]
pub enum ReceiptSubject {
    /// Recycler has the panels and is ready to recycle.
    Panels,
    /// Recycler acknowledges a payout transaction.
    Payment { payment_tx: Digest },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub agreement: AgreementId,
    pub tick: u64,
    #[serde(flatten)]
    pub subject: ReceiptSubject,
}

impl Canonical for Receipt {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.agreement.as_str()).u64(self.tick);
        match &self.subject {
            ReceiptSubject::Panels => {
                e.str("panels");
            }
            ReceiptSubject::Payment { payment_tx } => {
                e.str("payment").digest(payment_tx);
            }
        }
    }
}

/// Outcome of a legal transition: the new state plus the record to commit
/// and who signs it.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: PanelState,
    pub author: ActorId,
    pub payload: Payload,
}

impl Transition {
    pub fn into_tx(self, registry: &Registry, agreement: &AgreementId) -> (PanelState, Transaction) {
        let key = registry
            .keypair(&self.author)
            .expect("transition author is a registered party");
        let tx = Transaction::new(
            self.author,
            ChannelId::for_agreement(agreement),
            self.payload,
            key,
        );
        (self.state, tx)
    }
}

/// Apply a lifecycle event. Pure: the caller commits the returned state.
pub fn declare_transition(
    agreement: &PanelAgreement,
    state: &PanelState,
    event: LifecycleEvent,
    tick: u64,
) -> Result<Transition, LifecycleError> {
    let name = event.name();
    let illegal = || LifecycleError::IllegalTransition {
        from: state.phase,
        event: name,
    };
    let window = || LifecycleError::WrongTickWindow { event: name, tick };
    let mut next = state.clone();
    next.phase_tick = tick;
    let id = agreement.agreement_id.clone();
    let (author, payload) = match (state.phase, event) {
        (Phase::Active, LifecycleEvent::ReachEol) => {
            if tick < agreement.eol_tick() {
                return Err(window());
            }
            next.phase = Phase::ReachedEol;
            (
                state.holder.clone(),
                Payload::EolDeclaration(EolDeclaration {
                    agreement: id,
                    tick,
                    accrued: state.accrued,
                }),
            )
        }
        (Phase::Active, LifecycleEvent::Fail { cause }) => {
            if tick < agreement.start_tick || tick >= agreement.eol_tick() {
                return Err(window());
            }
            let in_warranty = tick < agreement.warranty_end_tick();
            next.phase = if in_warranty {
                Phase::FailedInWarranty
            } else {
                Phase::FailedPostWarranty
            };
            next.failure_cause = Some(cause.clone());
            (
                state.holder.clone(),
                Payload::FailureDeclaration(FailureDeclaration {
                    agreement: id,
                    tick,
                    cause,
                    remaining_cost: remaining_cost(agreement, state),
                    warranty_claim: in_warranty,
                    manufacturer: agreement.manufacturer.clone(),
                    capacity_w: agreement.capacity_w,
                }),
            )
        }
        (Phase::ReachedEol, LifecycleEvent::Refurbish { new_prosumer }) => {
            next.phase = Phase::Refurbished;
            next.holder = new_prosumer.clone();
            (
                state.holder.clone(),
                Payload::Refurbishment(Refurbishment {
                    agreement: id,
                    previous_holder: state.holder.clone(),
                    new_holder: new_prosumer,
                }),
            )
        }
        (
            Phase::ReachedEol | Phase::FailedInWarranty | Phase::FailedPostWarranty | Phase::Refurbished,
            LifecycleEvent::Ship,
        ) => {
            next.phase = Phase::Shipped;
            next.settlement_basis = state.settlement_phase();
            (
                state.holder.clone(),
                Payload::Shipment(Shipment {
                    agreement: id,
                    recycler: agreement.recycler.clone(),
                    tick,
                }),
            )
        }
        (Phase::Shipped, LifecycleEvent::ReceiveAtRecycler) => {
            next.phase = Phase::Recycled;
            (
                agreement.recycler.clone(),
                Payload::Receipt(Receipt {
                    agreement: id,
                    tick,
                    subject: ReceiptSubject::Panels,
                }),
            )
        }
        (
            Phase::ReachedEol | Phase::FailedInWarranty | Phase::FailedPostWarranty | Phase::Refurbished,
            LifecycleEvent::Landfill,
        ) => {
            next.phase = Phase::Landfilled;
            (
                state.holder.clone(),
                Payload::Disposal(Disposal { agreement: id, tick }),
            )
        }
        _ => return Err(illegal()),
    };
    Ok(Transition {
        state: next,
        author,
        payload,
    })
}

/// Who owes what when a panel leaves service, and how the fund is paid out.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementObligations {
    pub basis: Phase,
    pub prosumer: Usd,
    pub manufacturer: Usd,
    pub recycler: Usd,
    pub recycler_payout: Usd,
    pub prosumer_reward: Usd,
}

impl SettlementObligations {
    pub fn total_owed(&self) -> Usd {
        self.prosumer + self.manufacturer + self.recycler
    }

    /// Non-zero dues keyed by the role that owes them.
    pub fn dues(&self) -> Vec<(Role, Usd)> {
        [
            (Role::Prosumer, self.prosumer),
            (Role::Manufacturer, self.manufacturer),
            (Role::Recycler, self.recycler),
        ]
        .into_iter()
        .filter(|(_, a)| !a.is_zero())
        .collect()
    }
}

/// Split the remaining cost according to the settlement phase.
///
/// * end of life: nothing owed (an energy-proportional shortfall is owed by
///   the prosumer); the recycler gets the recycling cost, the prosumer the
///   rest of the fund.
/// * in-warranty failure: the manufacturer owes the whole remainder.
/// * post-warranty failure: the remainder is split by [`LiabilitySplit`]
///   weights; prosumer and recycler shares are floored at the micro-dollar
///   and the manufacturer absorbs the residue.
pub fn settlement_split(
    agreement: &PanelAgreement,
    state: &PanelState,
) -> Result<SettlementObligations, LifecycleError> {
    let basis = state
        .settlement_phase()
        .ok_or(LifecycleError::PhaseNotSettleable(state.phase))?;
    let remaining = remaining_cost(agreement, state);
    let (prosumer, manufacturer, recycler) = match basis {
        Phase::ReachedEol => (remaining, Usd::ZERO, Usd::ZERO),
        Phase::FailedInWarranty => (Usd::ZERO, remaining, Usd::ZERO),
        Phase::FailedPostWarranty => {
            let w = agreement.split;
            let total = w.total() as i128;
            let share = |weight: u32| {
                Usd::from_atoms(div_floor(remaining.atoms() as i128 * weight as i128, total) as i64)
            };
            let p = share(w.prosumer);
            let r = share(w.recycler);
            (p, remaining - p - r, r)
        }
        other => return Err(LifecycleError::PhaseNotSettleable(other)),
    };
    let recycler_payout = agreement.total_recycling_cost();
    let inflow = state.accrued + prosumer + manufacturer + recycler;
    Ok(SettlementObligations {
        basis,
        prosumer,
        manufacturer,
        recycler,
        recycler_payout,
        prosumer_reward: inflow - recycler_payout,
    })
}
