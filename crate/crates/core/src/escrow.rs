//! Escrow contracts holding a fiat-pegged stablecoin (or RC-coins), with
//! all-of-set multi-signature release.
//!
//! Contract state changes only by applying committed transactions, so the
//! same [`EscrowBook::apply`] drives live runs and audit replays.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{Registry, Role};
use crate::ledger::{
    hash_digest, ActorId, AgreementId, Canonical, ChannelId, ContractId, Digest, Encoder, KeyPair,
    Payload, PublicKey, SignatureBytes, Transaction,
};
use crate::lifecycle::{settlement_split, LifecycleError, PanelAgreement, PanelState, ReceiptSubject};
use crate::money::{Coins, Tokens};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denomination {
    Stablecoin,
    RcCoin,
}

/// An amount in one of the two escrow currencies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscrowAmount {
    Tokens(Tokens),
    Coins(Coins),
}

impl EscrowAmount {
    pub fn new(denomination: Denomination, atoms: i64) -> Self {
        match denomination {
            Denomination::Stablecoin => EscrowAmount::Tokens(Tokens::from_atoms(atoms)),
            Denomination::RcCoin => EscrowAmount::Coins(Coins::from_atoms(atoms)),
        }
    }

    pub fn denomination(self) -> Denomination {
        match self {
            EscrowAmount::Tokens(_) => Denomination::Stablecoin,
            EscrowAmount::Coins(_) => Denomination::RcCoin,
        }
    }

    pub fn atoms(self) -> i64 {
        match self {
            EscrowAmount::Tokens(t) => t.atoms(),
            EscrowAmount::Coins(c) => c.atoms(),
        }
    }

    fn encode(self, e: &mut Encoder) {
        let tag = match self.denomination() {
            Denomination::Stablecoin => "tokens",
            Denomination::RcCoin => "coins",
        };
        e.str(tag).i64(self.atoms());
    }
}

impl std::fmt::Display for EscrowAmount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EscrowAmount::Tokens(t) => write!(f, "{t} tokens"),
            EscrowAmount::Coins(c) => write!(f, "{c} coins"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscrowPhase {
    Funding,
    Matured,
    ShortfallPending,
    PaidOut,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DepositSource {
    /// A regular fee, converted by the utility.
    Fee,
    /// A party paying its settlement liability.
    Liability { party: ActorId },
    /// Reserve contract covering outstanding dues or a valuation deficit.
    Reserve,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WithdrawalPurpose {
    TransportReward,
    RecyclerPayment,
    /// Whatever is left after the planned payouts.
    Surplus,
}

impl WithdrawalPurpose {
    pub fn tag(self) -> &'static str {
        match self {
            WithdrawalPurpose::TransportReward => "transport-reward",
            WithdrawalPurpose::RecyclerPayment => "recycler-payment",
            WithdrawalPurpose::Surplus => "surplus",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payout {
    pub purpose: WithdrawalPurpose,
    pub beneficiary: ActorId,
    pub amount: EscrowAmount,
}

/// Dues and payouts fixed when the contract matures.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementPlan {
    pub dues: Vec<(ActorId, EscrowAmount)>,
    /// Transport reward (optional) then recycler payment, in release order.
    pub payouts: Vec<Payout>,
    /// Receives any balance left after the payouts.
    pub surplus_to: ActorId,
}

impl SettlementPlan {
    /// Stablecoin plan: dues and payouts are the fiat obligations 1:1. Any
    /// surplus goes to the current holder with the transport reward.
    pub fn stablecoin(agreement: &PanelAgreement, state: &PanelState) -> Result<Self, LifecycleError> {
        let ob = settlement_split(agreement, state)?;
        let tokens = |u: crate::money::Usd| EscrowAmount::Tokens(Tokens::from_fiat(u));
        let dues = ob
            .dues()
            .into_iter()
            .map(|(role, amount)| (crate::offchain::party_for(agreement, state, role), tokens(amount)))
            .collect();
        let mut payouts = Vec::new();
        if !ob.prosumer_reward.is_zero() {
            payouts.push(Payout {
                purpose: WithdrawalPurpose::TransportReward,
                beneficiary: state.holder.clone(),
                amount: tokens(ob.prosumer_reward),
            });
        }
        payouts.push(Payout {
            purpose: WithdrawalPurpose::RecyclerPayment,
            beneficiary: agreement.recycler.clone(),
            amount: tokens(ob.recycler_payout),
        });
        Ok(SettlementPlan {
            dues,
            payouts,
            surplus_to: state.holder.clone(),
        })
    }

    pub fn payout_total(&self) -> i64 {
        self.payouts.iter().map(|p| p.amount.atoms()).sum()
    }

    fn encode(&self, e: &mut Encoder) {
        e.list(&self.dues, |e, (who, amt)| {
            e.str(who.as_str());
            amt.encode(e);
        })
        .list(&self.payouts, |e, p| {
            e.str(p.purpose.tag()).str(p.beneficiary.as_str());
            p.amount.encode(e);
        })
        .str(self.surplus_to.as_str());
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscrowDeploy {
    pub contract: ContractId,
    /// Encoded copy of the agreement terms.
    pub terms: PanelAgreement,
    pub denomination: Denomination,
    pub required_signers: Vec<ActorId>,
}

impl Canonical for EscrowDeploy {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.contract.as_str());
        self.terms.encode(e);
        e.str(match self.denomination {
            Denomination::Stablecoin => "stablecoin",
            Denomination::RcCoin => "rc-coin",
        })
        .list(&self.required_signers, |e, s| {
            e.str(s.as_str());
        });
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscrowDeposit {
    pub contract: ContractId,
    pub amount: EscrowAmount,
    #[serde(flatten)]
    pub source: DepositSource,
    pub tick: u64,
}

impl Canonical for EscrowDeposit {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.contract.as_str());
        self.amount.encode(e);
        match &self.source {
            DepositSource::Fee => e.str("fee"),
            DepositSource::Liability { party } => e.str("liability").str(party.as_str()),
            DepositSource::Reserve => e.str("reserve"),
        };
        e.u64(self.tick);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscrowMature {
    pub contract: ContractId,
    pub tick: u64,
    pub plan: SettlementPlan,
}

impl Canonical for EscrowMature {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.contract.as_str()).u64(self.tick);
        self.plan.encode(e);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscrowWithdrawal {
    pub contract: ContractId,
    pub purpose: WithdrawalPurpose,
    pub beneficiary: ActorId,
    pub amount: EscrowAmount,
    pub signatures: Vec<(ActorId, SignatureBytes)>,
}

impl Canonical for EscrowWithdrawal {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.contract.as_str())
            .str(self.purpose.tag())
            .str(self.beneficiary.as_str());
        self.amount.encode(e);
        e.list(&self.signatures, |e, (who, sig)| {
            e.str(who.as_str()).bytes(&sig.0);
        });
    }
}

/// The message every required signer signs to consent to a release.
pub fn withdrawal_message(
    contract: &ContractId,
    purpose: WithdrawalPurpose,
    beneficiary: &ActorId,
    amount: EscrowAmount,
) -> Digest {
    let mut e = Encoder::new();
    e.str("panelchain/escrow-withdrawal/v1")
        .str(contract.as_str())
        .str(purpose.tag())
        .str(beneficiary.as_str());
    amount.encode(&mut e);
    hash_digest(&e.finish())
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EscrowError {
    #[error("{actor} may not {what}")]
    Unauthorized { actor: ActorId, what: &'static str },
    #[error("agreement {0} already has an escrow contract")]
    DuplicateContract(AgreementId),
    #[error("unknown contract {0}")]
    UnknownContract(ContractId),
    #[error("contract is {0:?}")]
    WrongPhase(EscrowPhase),
    #[error("amount {offered} does not match the {expected} due")]
    AmountMismatch { expected: i64, offered: i64 },
    #[error("missing or invalid signature from {0}")]
    MissingSignature(ActorId),
    #[error("{0:?} released out of order")]
    SequenceViolation(WithdrawalPurpose),
    #[error("{0:?} already released")]
    DoubleWithdrawal(WithdrawalPurpose),
    #[error("agreement has not left service")]
    NotSettleable,
}

/// Public keys and roles of registered actors, as seen by contracts.
pub trait Directory {
    fn public_key(&self, id: &ActorId) -> Option<PublicKey>;
    fn role(&self, id: &ActorId) -> Option<Role>;

    fn verify(&self, id: &ActorId, message: &[u8], signature: &SignatureBytes) -> bool {
        self.public_key(id)
            .is_some_and(|k| crate::ledger::keys::verify(&k, message, signature))
    }
}

impl Directory for Registry {
    fn public_key(&self, id: &ActorId) -> Option<PublicKey> {
        self.keypair(id).ok().map(KeyPair::public_key)
    }

    fn role(&self, id: &ActorId) -> Option<Role> {
        self.role_of(id)
    }
}

/// Actors known from registration transactions.
#[derive(Clone, Debug, Default)]
pub struct ActorDirectory {
    pub actors: BTreeMap<ActorId, (Role, PublicKey)>,
}

impl ActorDirectory {
    pub fn observe(&mut self, tx: &Transaction) {
        if let Payload::Registration(r) = &tx.payload {
            self.actors
                .entry(r.actor.clone())
                .or_insert((r.role, r.public_key));
        }
    }
}

impl Directory for ActorDirectory {
    fn public_key(&self, id: &ActorId) -> Option<PublicKey> {
        self.actors.get(id).map(|(_, k)| *k)
    }

    fn role(&self, id: &ActorId) -> Option<Role> {
        self.actors.get(id).map(|(r, _)| *r)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscrowContract {
    pub contract_id: ContractId,
    pub agreement_id: AgreementId,
    pub terms: PanelAgreement,
    pub denomination: Denomination,
    /// Balance in micro-units of the denomination.
    pub balance: i64,
    pub required_signers: BTreeSet<ActorId>,
    pub phase: EscrowPhase,
    pub fees_deposited: i64,
    pub plan: Option<SettlementPlan>,
    pub dues: BTreeMap<ActorId, i64>,
    pub released: BTreeSet<WithdrawalPurpose>,
    pub receipt_seen: bool,
    pub total_deposited: i64,
    pub total_released: i64,
}

impl EscrowContract {
    pub fn outstanding_dues(&self) -> i64 {
        self.dues.values().sum()
    }

    /// Reserve top-up that both clears every outstanding due and covers the
    /// planned payouts.
    pub fn reserve_topup_needed(&self) -> i64 {
        let payouts = self.plan.as_ref().map_or(0, SettlementPlan::payout_total);
        self.outstanding_dues().max(payouts - self.balance).max(0)
    }

    fn amount(&self, atoms: i64) -> EscrowAmount {
        EscrowAmount::new(self.denomination, atoms)
    }

    fn refresh_phase(&mut self) {
        if let Some(plan) = &self.plan {
            if self.phase == EscrowPhase::ShortfallPending
                && self.dues.is_empty()
                && self.balance >= plan.payout_total()
            {
                self.phase = EscrowPhase::Matured;
            }
        }
    }

    /// The release that must come next, with its amount.
    pub fn next_release(&self) -> Option<Payout> {
        let plan = self.plan.as_ref()?;
        if self.phase != EscrowPhase::Matured {
            return None;
        }
        if let Some(p) = plan.payouts.iter().find(|p| !self.released.contains(&p.purpose)) {
            return Some(p.clone());
        }
        (self.balance > 0 && !self.released.contains(&WithdrawalPurpose::Surplus)).then(|| Payout {
            purpose: WithdrawalPurpose::Surplus,
            beneficiary: plan.surplus_to.clone(),
            amount: self.amount(self.balance),
        })
    }
}

/// Balance effect of one applied transaction, for wallet bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EscrowEffect {
    None,
    /// Escrow share of a mint; uncredited shares fall to the reserve.
    MintShare { credited: bool },
    Deposited { contract: ContractId, amount: EscrowAmount, source: DepositSource },
    Released { contract: ContractId, beneficiary: ActorId, amount: EscrowAmount, purpose: WithdrawalPurpose },
}

/// Every escrow contract on the chain.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EscrowBook {
    contracts: BTreeMap<ContractId, EscrowContract>,
    by_agreement: BTreeMap<AgreementId, ContractId>,
    settleable: BTreeSet<AgreementId>,
    received: BTreeSet<AgreementId>,
    totals: BTreeMap<Denomination, i64>,
}

impl EscrowBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contract(&self, id: &ContractId) -> Option<&EscrowContract> {
        self.contracts.get(id)
    }

    pub fn contracts(&self) -> impl Iterator<Item = &EscrowContract> {
        self.contracts.values()
    }

    pub fn for_agreement(&self, agreement: &AgreementId) -> Option<&EscrowContract> {
        self.by_agreement.get(agreement).and_then(|c| self.contracts.get(c))
    }

    /// Sum of balances across contracts of one denomination.
    pub fn total_balance(&self, denomination: Denomination) -> i64 {
        self.totals.get(&denomination).copied().unwrap_or(0)
    }

    fn get(&self, id: &ContractId) -> Result<&EscrowContract, EscrowError> {
        self.contracts
            .get(id)
            .ok_or_else(|| EscrowError::UnknownContract(id.clone()))
    }

    /// Credit coins minted on behalf of an agreement to its escrow.
    pub fn credit_mint(&mut self, agreement: &AgreementId, coins: Coins) -> bool {
        let Some(c) = self
            .by_agreement
            .get(agreement)
            .and_then(|id| self.contracts.get_mut(id))
        else {
            return false;
        };
        if c.denomination != Denomination::RcCoin || c.phase != EscrowPhase::Funding {
            return false;
        }
        c.balance += coins.atoms();
        c.total_deposited += coins.atoms();
        *self.totals.entry(Denomination::RcCoin).or_insert(0) += coins.atoms();
        true
    }

    /// Apply one committed transaction. Rejected transactions leave the book
    /// untouched; non-escrow transactions only update what contracts observe.
    pub fn apply(&mut self, tx: &Transaction, dir: &dyn Directory) -> Result<EscrowEffect, EscrowError> {
        let author = &tx.author;
        let require_utility = |what| {
            if dir.role(author) == Some(Role::Utility) {
                Ok(())
            } else {
                Err(EscrowError::Unauthorized {
                    actor: author.clone(),
                    what,
                })
            }
        };
        match &tx.payload {
            Payload::EolDeclaration(d) => {
                self.settleable.insert(d.agreement.clone());
            }
            Payload::FailureDeclaration(d) => {
                self.settleable.insert(d.agreement.clone());
            }
            Payload::Receipt(r) if r.subject == ReceiptSubject::Panels => {
                self.received.insert(r.agreement.clone());
                if let Some(c) = self
                    .by_agreement
                    .get(&r.agreement)
                    .and_then(|id| self.contracts.get_mut(id))
                {
                    c.receipt_seen = true;
                }
            }
            Payload::Mint(m) => {
                return Ok(EscrowEffect::MintShare {
                    credited: self.credit_mint(&m.agreement, m.escrow_share),
                });
            }
            Payload::EscrowDeploy(d) => {
                require_utility("deploy escrow contracts")?;
                let agreement = d.terms.agreement_id.clone();
                if self.by_agreement.contains_key(&agreement) || self.contracts.contains_key(&d.contract) {
                    return Err(EscrowError::DuplicateContract(agreement));
                }
                self.by_agreement.insert(agreement.clone(), d.contract.clone());
                self.contracts.insert(
                    d.contract.clone(),
                    EscrowContract {
                        contract_id: d.contract.clone(),
                        agreement_id: agreement.clone(),
                        terms: d.terms.clone(),
                        denomination: d.denomination,
                        balance: 0,
                        required_signers: d.required_signers.iter().cloned().collect(),
                        phase: EscrowPhase::Funding,
                        fees_deposited: 0,
                        plan: None,
                        dues: BTreeMap::new(),
                        released: BTreeSet::new(),
                        receipt_seen: self.received.contains(&agreement),
                        total_deposited: 0,
                        total_released: 0,
                    },
                );
            }
            Payload::EscrowDeposit(d) => {
                let c = self.get(&d.contract)?;
                let atoms = d.amount.atoms();
                if d.amount.denomination() != c.denomination || atoms <= 0 {
                    return Err(EscrowError::AmountMismatch {
                        expected: 0,
                        offered: atoms,
                    });
                }
                match (&d.source, c.phase) {
                    (DepositSource::Fee, EscrowPhase::Funding) => {
                        require_utility("convert fees")?;
                        let cap = c.terms.fund_target().atoms();
                        if c.denomination != Denomination::Stablecoin || c.fees_deposited + atoms > cap {
                            return Err(EscrowError::AmountMismatch {
                                expected: cap - c.fees_deposited,
                                offered: atoms,
                            });
                        }
                    }
                    (DepositSource::Liability { party }, EscrowPhase::ShortfallPending) => {
                        if party != author {
                            return Err(EscrowError::Unauthorized {
                                actor: author.clone(),
                                what: "pay another party's liability",
                            });
                        }
                        let due = c.dues.get(party).copied().unwrap_or(0);
                        if due != atoms {
                            return Err(EscrowError::AmountMismatch {
                                expected: due,
                                offered: atoms,
                            });
                        }
                    }
                    (DepositSource::Reserve, EscrowPhase::ShortfallPending) => {
                        require_utility("move reserve funds")?;
                        let needed = c.reserve_topup_needed();
                        if needed != atoms {
                            return Err(EscrowError::AmountMismatch {
                                expected: needed,
                                offered: atoms,
                            });
                        }
                    }
                    (_, phase) => return Err(EscrowError::WrongPhase(phase)),
                }
                let c = self.contracts.get_mut(&d.contract).expect("checked above");
                c.balance += atoms;
                c.total_deposited += atoms;
                *self.totals.entry(c.denomination).or_insert(0) += atoms;
                match &d.source {
                    DepositSource::Fee => c.fees_deposited += atoms,
                    DepositSource::Liability { party } => {
                        c.dues.remove(party);
                    }
                    DepositSource::Reserve => c.dues.clear(),
                }
                c.refresh_phase();
                return Ok(EscrowEffect::Deposited {
                    contract: d.contract.clone(),
                    amount: d.amount,
                    source: d.source.clone(),
                });
            }
            Payload::EscrowMature(m) => {
                require_utility("mature escrow contracts")?;
                let c = self.get(&m.contract)?;
                if c.phase != EscrowPhase::Funding {
                    return Err(EscrowError::WrongPhase(c.phase));
                }
                if !self.settleable.contains(&c.agreement_id) {
                    return Err(EscrowError::NotSettleable);
                }
                let denom = c.denomination;
                let well_formed = m
                    .plan
                    .dues
                    .iter()
                    .map(|(_, a)| a)
                    .chain(m.plan.payouts.iter().map(|p| &p.amount))
                    .all(|a| a.denomination() == denom && a.atoms() > 0);
                let order_ok = m.plan.payouts.iter().map(|p| p.purpose).eq(if m.plan.payouts.len() == 2 {
                    vec![WithdrawalPurpose::TransportReward, WithdrawalPurpose::RecyclerPayment]
                } else {
                    vec![WithdrawalPurpose::RecyclerPayment]
                });
                if !well_formed || !order_ok {
                    return Err(EscrowError::SequenceViolation(WithdrawalPurpose::RecyclerPayment));
                }
                let c = self.contracts.get_mut(&m.contract).expect("checked above");
                let mut dues = BTreeMap::new();
                for (who, amt) in &m.plan.dues {
                    *dues.entry(who.clone()).or_insert(0) += amt.atoms();
                }
                c.dues = dues;
                c.plan = Some(m.plan.clone());
                c.phase = EscrowPhase::ShortfallPending;
                c.refresh_phase();
            }
            Payload::EscrowWithdrawal(w) => {
                let c = self.get(&w.contract)?;
                if c.phase != EscrowPhase::Matured {
                    return Err(EscrowError::WrongPhase(c.phase));
                }
                let message = withdrawal_message(&w.contract, w.purpose, &w.beneficiary, w.amount);
                for signer in &c.required_signers {
                    let ok = w
                        .signatures
                        .iter()
                        .any(|(who, sig)| who == signer && dir.verify(who, message.as_bytes(), sig));
                    if !ok {
                        return Err(EscrowError::MissingSignature(signer.clone()));
                    }
                }
                if c.released.contains(&w.purpose) {
                    return Err(EscrowError::DoubleWithdrawal(w.purpose));
                }
                let next = c
                    .next_release()
                    .ok_or(EscrowError::WrongPhase(c.phase))?;
                if next.purpose != w.purpose {
                    return Err(EscrowError::SequenceViolation(w.purpose));
                }
                if w.purpose == WithdrawalPurpose::RecyclerPayment && !c.receipt_seen {
                    return Err(EscrowError::SequenceViolation(w.purpose));
                }
                if next.beneficiary != w.beneficiary || next.amount != w.amount || w.amount.atoms() > c.balance {
                    return Err(EscrowError::AmountMismatch {
                        expected: next.amount.atoms(),
                        offered: w.amount.atoms(),
                    });
                }
                if author != &w.beneficiary && dir.role(author) != Some(Role::Utility) {
                    return Err(EscrowError::Unauthorized {
                        actor: author.clone(),
                        what: "submit another party's withdrawal",
                    });
                }
                let c = self.contracts.get_mut(&w.contract).expect("checked above");
                c.balance -= w.amount.atoms();
                c.total_released += w.amount.atoms();
                *self.totals.entry(c.denomination).or_insert(0) -= w.amount.atoms();
                c.released.insert(w.purpose);
                if c.next_release().is_none() {
                    c.phase = EscrowPhase::PaidOut;
                }
                return Ok(EscrowEffect::Released {
                    contract: w.contract.clone(),
                    beneficiary: w.beneficiary.clone(),
                    amount: w.amount,
                    purpose: w.purpose,
                });
            }
            _ => {}
        }
        Ok(EscrowEffect::None)
    }
}

/// Deterministic contract id for an agreement's escrow.
pub fn contract_id_for(agreement: &AgreementId) -> ContractId {
    ContractId(format!("escrow/{}", agreement.as_str()))
}

/// Default signer set: prosumer, recycler, manufacturer and utility.
pub fn default_signers(agreement: &PanelAgreement) -> Vec<ActorId> {
    vec![
        agreement.prosumer.clone(),
        agreement.recycler.clone(),
        agreement.manufacturer.clone(),
        agreement.utility.clone(),
    ]
}

fn agreement_tx(registry: &Registry, author: &ActorId, agreement: &AgreementId, payload: Payload) -> Result<Transaction, EscrowError> {
    let key = registry.keypair(author).map_err(|_| EscrowError::Unauthorized {
        actor: author.clone(),
        what: "sign transactions",
    })?;
    Ok(Transaction::new(
        author.clone(),
        ChannelId::for_agreement(agreement),
        payload,
        key,
    ))
}

impl EscrowBook {
    fn commit(&mut self, tx: Transaction, dir: &dyn Directory) -> Result<(Transaction, EscrowEffect), EscrowError> {
        let effect = self.apply(&tx, dir)?;
        Ok((tx, effect))
    }

    /// Utility deploys a contract for a registered agreement.
    pub fn deploy_escrow(
        &mut self,
        registry: &Registry,
        deployer: &ActorId,
        agreement: &PanelAgreement,
        denomination: Denomination,
        required_signers: Vec<ActorId>,
    ) -> Result<(ContractId, Transaction), EscrowError> {
        let contract = contract_id_for(&agreement.agreement_id);
        let payload = Payload::EscrowDeploy(EscrowDeploy {
            contract: contract.clone(),
            terms: agreement.clone(),
            denomination,
            required_signers,
        });
        let tx = agreement_tx(registry, deployer, &agreement.agreement_id, payload)?;
        let (tx, _) = self.commit(tx, registry)?;
        Ok((contract, tx))
    }

    /// Convert fiat 1:1 (or deposit coins) into the contract. `expected` is
    /// the due amount the deposit must match.
    #[allow(clippy::too_many_arguments)]
    pub fn convert_and_deposit(
        &mut self,
        registry: &Registry,
        author: &ActorId,
        contract: &ContractId,
        amount: EscrowAmount,
        expected: EscrowAmount,
        source: DepositSource,
        tick: u64,
    ) -> Result<Transaction, EscrowError> {
        let c = self.get(contract)?;
        if !matches!(c.phase, EscrowPhase::Funding | EscrowPhase::ShortfallPending) {
            return Err(EscrowError::WrongPhase(c.phase));
        }
        if amount != expected {
            return Err(EscrowError::AmountMismatch {
                expected: expected.atoms(),
                offered: amount.atoms(),
            });
        }
        let agreement = c.agreement_id.clone();
        let payload = Payload::EscrowDeposit(EscrowDeposit {
            contract: contract.clone(),
            amount,
            source,
            tick,
        });
        let tx = agreement_tx(registry, author, &agreement, payload)?;
        Ok(self.commit(tx, registry)?.0)
    }

    /// Fix the settlement plan once the panel has left service.
    pub fn mature(
        &mut self,
        registry: &Registry,
        utility: &ActorId,
        contract: &ContractId,
        plan: SettlementPlan,
        tick: u64,
    ) -> Result<Transaction, EscrowError> {
        let agreement = self.get(contract)?.agreement_id.clone();
        let payload = Payload::EscrowMature(EscrowMature {
            contract: contract.clone(),
            tick,
            plan,
        });
        let tx = agreement_tx(registry, utility, &agreement, payload)?;
        Ok(self.commit(tx, registry)?.0)
    }

    /// Release the next scheduled payout, signed by `signers`.
    pub fn release_withdrawal(
        &mut self,
        registry: &Registry,
        author: &ActorId,
        contract: &ContractId,
        payout: &Payout,
        signers: &[ActorId],
    ) -> Result<(Transaction, EscrowEffect), EscrowError> {
        let agreement = self.get(contract)?.agreement_id.clone();
        let message = withdrawal_message(contract, payout.purpose, &payout.beneficiary, payout.amount);
        let signatures = signers
            .iter()
            .filter_map(|s| {
                registry
                    .keypair(s)
                    .ok()
                    .map(|k| (s.clone(), k.sign(message.as_bytes())))
            })
            .collect();
        let payload = Payload::EscrowWithdrawal(EscrowWithdrawal {
            contract: contract.clone(),
            purpose: payout.purpose,
            beneficiary: payout.beneficiary.clone(),
            amount: payout.amount,
            signatures,
        });
        let tx = agreement_tx(registry, author, &agreement, payload)?;
        self.commit(tx, registry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifecycle::{
        declare_transition, record_energy, register_agreement, AgreementTerms, FeeSchedule,
        LifecycleEvent, LiabilitySplit,
    };
    use crate::money::{CostRate, Energy, Usd};

    struct Fixture {
        reg: Registry,
        book: EscrowBook,
        agreement: PanelAgreement,
        state: PanelState,
        contract: ContractId,
    }

    fn fixture(transport: &str) -> Fixture {
        let mut reg = Registry::new(7);
        for (id, role) in [
            ("p", Role::Prosumer),
            ("m", Role::Manufacturer),
            ("r", Role::Recycler),
            ("u", Role::Utility),
        ] {
            reg.register_actor(id.into(), role, role.node_class()).unwrap();
        }
        let terms = AgreementTerms {
            agreement_id: "a1".into(),
            prosumer: "p".into(),
            manufacturer: "m".into(),
            recycler: "r".into(),
            utility: "u".into(),
            capacity_w: 10_000,
            cost_rate: CostRate::parse("0.125").unwrap(),
            lifetime_months: 300,
            warranty_months: 120,
            transport_allowance: Usd::parse(transport).unwrap(),
            start_tick: 0,
            fee_schedule: FeeSchedule::Monthly,
            split: LiabilitySplit::default(),
        };
        let (agreement, state, _) = register_agreement(&mut reg, terms, &|_| false).unwrap();
        let mut book = EscrowBook::new();
        let (contract, _) = book
            .deploy_escrow(&reg, &"u".into(), &agreement, Denomination::Stablecoin, default_signers(&agreement))
            .unwrap();
        Fixture {
            reg,
            book,
            agreement,
            state,
            contract,
        }
    }

    fn tokens(s: &str) -> EscrowAmount {
        EscrowAmount::Tokens(Tokens::parse(s).unwrap())
    }

    fn fund_months(f: &mut Fixture, months: u64) {
        let u = ActorId::from("u");
        for t in 1..=months {
            let ev = record_energy(&f.agreement, &mut f.state, Energy::from_kwh(1000), t).unwrap();
            let amt = EscrowAmount::Tokens(Tokens::from_fiat(ev.fee_due));
            f.book
                .convert_and_deposit(&f.reg, &u, &f.contract, amt, amt, DepositSource::Fee, t)
                .unwrap();
        }
    }

    fn transition(f: &mut Fixture, ev: LifecycleEvent, tick: u64) {
        let (s, tx) = declare_transition(&f.agreement, &f.state, ev, tick)
            .unwrap()
            .into_tx(&f.reg, &f.agreement.agreement_id);
        f.state = s;
        f.book.apply(&tx, &f.reg).unwrap();
    }

    fn all() -> Vec<ActorId> {
        ["p", "r", "m", "u"].iter().map(|s| ActorId::from(*s)).collect()
    }

    #[test]
    fn deploy_starts_funding_and_rejects_duplicates() {
        let mut f = fixture("0");
        let c = f.book.contract(&f.contract).unwrap();
        assert_eq!(c.phase, EscrowPhase::Funding);
        assert_eq!(c.balance, 0);
        assert_eq!(c.required_signers.len(), 4);
        let err = f
            .book
            .deploy_escrow(&f.reg, &"u".into(), &f.agreement, Denomination::Stablecoin, vec![])
            .unwrap_err();
        assert_eq!(err, EscrowError::DuplicateContract("a1".into()));
        let err = f
            .book
            .deploy_escrow(&f.reg, &"m".into(), &f.agreement, Denomination::Stablecoin, vec![])
            .unwrap_err();
        assert!(matches!(err, EscrowError::Unauthorized { .. }));
    }

    #[test]
    fn fee_deposit_is_one_to_one() {
        let mut f = fixture("0");
        fund_months(&mut f, 1);
        assert_eq!(f.book.contract(&f.contract).unwrap().balance, 4_166_667);
        let err = f
            .book
            .convert_and_deposit(&f.reg, &"u".into(), &f.contract, tokens("3"), tokens("4.166667"), DepositSource::Fee, 2)
            .unwrap_err();
        assert!(matches!(err, EscrowError::AmountMismatch { .. }));
    }

    #[test]
    fn full_lifetime_funds_exactly_and_pays_out() {
        let mut f = fixture("0");
        fund_months(&mut f, 300);
        assert_eq!(f.book.contract(&f.contract).unwrap().balance, 1_250_000_000);
        transition(&mut f, LifecycleEvent::ReachEol, 300);
        let plan = SettlementPlan::stablecoin(&f.agreement, &f.state).unwrap();
        f.book.mature(&f.reg, &"u".into(), &f.contract, plan, 300).unwrap();
        assert_eq!(f.book.contract(&f.contract).unwrap().phase, EscrowPhase::Matured);

        let next = f.book.contract(&f.contract).unwrap().next_release().unwrap();
        assert_eq!(next.purpose, WithdrawalPurpose::RecyclerPayment);
        // before receipt
        let err = f
            .book
            .release_withdrawal(&f.reg, &"r".into(), &f.contract, &next, &all())
            .unwrap_err();
        assert_eq!(err, EscrowError::SequenceViolation(WithdrawalPurpose::RecyclerPayment));

        transition(&mut f, LifecycleEvent::Ship, 300);
        transition(&mut f, LifecycleEvent::ReceiveAtRecycler, 301);
        let err = f
            .book
            .release_withdrawal(&f.reg, &"r".into(), &f.contract, &next, &all()[..3])
            .unwrap_err();
        assert_eq!(err, EscrowError::MissingSignature("u".into()));
        let (_, effect) = f
            .book
            .release_withdrawal(&f.reg, &"r".into(), &f.contract, &next, &all())
            .unwrap();
        assert_eq!(
            effect,
            EscrowEffect::Released {
                contract: f.contract.clone(),
                beneficiary: "r".into(),
                amount: tokens("1250"),
                purpose: WithdrawalPurpose::RecyclerPayment
            }
        );
        let c = f.book.contract(&f.contract).unwrap();
        assert_eq!(c.phase, EscrowPhase::PaidOut);
        assert_eq!(c.balance, 0);
        let err = f
            .book
            .release_withdrawal(&f.reg, &"r".into(), &f.contract, &next, &all())
            .unwrap_err();
        assert_eq!(err, EscrowError::WrongPhase(EscrowPhase::PaidOut));
        let err = f
            .book
            .convert_and_deposit(&f.reg, &"u".into(), &f.contract, tokens("1"), tokens("1"), DepositSource::Fee, 302)
            .unwrap_err();
        assert_eq!(err, EscrowError::WrongPhase(EscrowPhase::PaidOut));
    }

    #[test]
    fn transport_reward_is_released_first() {
        let mut f = fixture("35");
        fund_months(&mut f, 300);
        transition(&mut f, LifecycleEvent::ReachEol, 300);
        let plan = SettlementPlan::stablecoin(&f.agreement, &f.state).unwrap();
        f.book.mature(&f.reg, &"u".into(), &f.contract, plan.clone(), 300).unwrap();
        transition(&mut f, LifecycleEvent::Ship, 300);
        transition(&mut f, LifecycleEvent::ReceiveAtRecycler, 301);
        let recycler = plan.payouts[1].clone();
        let err = f
            .book
            .release_withdrawal(&f.reg, &"r".into(), &f.contract, &recycler, &all())
            .unwrap_err();
        assert_eq!(err, EscrowError::SequenceViolation(WithdrawalPurpose::RecyclerPayment));
        let reward = plan.payouts[0].clone();
        assert_eq!(reward.amount, tokens("35"));
        f.book.release_withdrawal(&f.reg, &"p".into(), &f.contract, &reward, &all()).unwrap();
        let err = f
            .book
            .release_withdrawal(&f.reg, &"p".into(), &f.contract, &reward, &all())
            .unwrap_err();
        assert_eq!(err, EscrowError::DoubleWithdrawal(WithdrawalPurpose::TransportReward));
        f.book.release_withdrawal(&f.reg, &"r".into(), &f.contract, &recycler, &all()).unwrap();
        assert_eq!(f.book.contract(&f.contract).unwrap().phase, EscrowPhase::PaidOut);
    }

    #[test]
    fn in_warranty_failure_waits_for_manufacturer() {
        let mut f = fixture("0");
        fund_months(&mut f, 60);
        transition(&mut f, LifecycleEvent::Fail { cause: "hail".into() }, 60);
        let plan = SettlementPlan::stablecoin(&f.agreement, &f.state).unwrap();
        assert_eq!(plan.dues, vec![("m".into(), tokens("999.99998"))]);
        f.book.mature(&f.reg, &"u".into(), &f.contract, plan, 60).unwrap();
        let c = f.book.contract(&f.contract).unwrap();
        assert_eq!(c.phase, EscrowPhase::ShortfallPending);
        assert_eq!(Usd::from_atoms(c.outstanding_dues()).to_cents(), 100_000);
        let err = f
            .book
            .convert_and_deposit(&f.reg, &"p".into(), &f.contract, tokens("999.99998"), tokens("999.99998"), DepositSource::Liability { party: "m".into() }, 61)
            .unwrap_err();
        assert!(matches!(err, EscrowError::Unauthorized { .. }));
        f.book
            .convert_and_deposit(&f.reg, &"m".into(), &f.contract, tokens("999.99998"), tokens("999.99998"), DepositSource::Liability { party: "m".into() }, 61)
            .unwrap();
        let c = f.book.contract(&f.contract).unwrap();
        assert_eq!(c.phase, EscrowPhase::Matured);
        assert_eq!(c.balance, 1_250_000_000);
    }

    #[test]
    fn post_warranty_failure_records_thirds() {
        let mut f = fixture("0");
        fund_months(&mut f, 180);
        transition(&mut f, LifecycleEvent::Fail { cause: "inverter".into() }, 180);
        let plan = SettlementPlan::stablecoin(&f.agreement, &f.state).unwrap();
        f.book.mature(&f.reg, &"u".into(), &f.contract, plan, 180).unwrap();
        let c = f.book.contract(&f.contract).unwrap();
        assert_eq!(c.phase, EscrowPhase::ShortfallPending);
        assert_eq!(c.dues.len(), 3);
        assert_eq!(c.outstanding_dues(), 1_250_000_000 - c.balance);
        let amounts: Vec<i64> = c.dues.values().copied().collect();
        assert!(amounts.iter().max().unwrap() - amounts.iter().min().unwrap() <= 2);
    }

    #[test]
    fn forged_signature_is_rejected() {
        let mut f = fixture("0");
        fund_months(&mut f, 300);
        transition(&mut f, LifecycleEvent::ReachEol, 300);
        let plan = SettlementPlan::stablecoin(&f.agreement, &f.state).unwrap();
        f.book.mature(&f.reg, &"u".into(), &f.contract, plan.clone(), 300).unwrap();
        transition(&mut f, LifecycleEvent::Ship, 300);
        transition(&mut f, LifecycleEvent::ReceiveAtRecycler, 301);
        let payout = &plan.payouts[0];
        let msg = withdrawal_message(&f.contract, payout.purpose, &payout.beneficiary, payout.amount);
        let forger = KeyPair::derive(99, "m");
        let mut sigs: Vec<_> = ["p", "r", "u"]
            .iter()
            .map(|s| (ActorId::from(*s), f.reg.keypair(&(*s).into()).unwrap().sign(msg.as_bytes())))
            .collect();
        sigs.push(("m".into(), forger.sign(msg.as_bytes())));
        let tx = agreement_tx(
            &f.reg,
            &"r".into(),
            &"a1".into(),
            Payload::EscrowWithdrawal(EscrowWithdrawal {
                contract: f.contract.clone(),
                purpose: payout.purpose,
                beneficiary: payout.beneficiary.clone(),
                amount: payout.amount,
                signatures: sigs,
            }),
        )
        .unwrap();
        let before = f.book.clone();
        assert_eq!(f.book.apply(&tx, &f.reg), Err(EscrowError::MissingSignature("m".into())));
        assert_eq!(f.book, before);
    }

    #[test]
    fn mature_requires_settleable_panel() {
        let mut f = fixture("0");
        fund_months(&mut f, 10);
        let plan = SettlementPlan {
            dues: vec![],
            payouts: vec![Payout {
                purpose: WithdrawalPurpose::RecyclerPayment,
                beneficiary: "r".into(),
                amount: tokens("1"),
            }],
            surplus_to: "p".into(),
        };
        let err = f.book.mature(&f.reg, &"u".into(), &f.contract, plan, 10).unwrap_err();
        assert_eq!(err, EscrowError::NotSettleable);
    }
}
