//! Fiat settlement held by the utility in one recycling bank account, with
//! every payment mirrored on the ledger and periodic balance postings that
//! anyone can audit against the mirrored payments.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{Action, Decision, IdentityError, Registry};
use crate::ledger::{
    ActorId, AgreementId, Canonical, ChannelId, Digest, Encoder, Payload, Transaction,
};
use crate::lifecycle::{
    declare_transition, settlement_split, LifecycleError, LifecycleEvent, PanelAgreement,
    PanelState, Phase, Receipt, ReceiptSubject,
};
use crate::money::Usd;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaymentPurpose {
    Fee,
    Liability,
    TransportReward,
    RecyclerPayment,
}

impl PaymentPurpose {
    pub fn tag(self) -> &'static str {
        match self {
            PaymentPurpose::Fee => "fee",
            PaymentPurpose::Liability => "liability",
            PaymentPurpose::TransportReward => "transport-reward",
            PaymentPurpose::RecyclerPayment => "recycler-payment",
        }
    }

    /// Money entering the recycling fund (as opposed to paid out of it).
    pub fn is_inflow(self) -> bool {
        matches!(self, PaymentPurpose::Fee | PaymentPurpose::Liability)
    }
}

/// Mirror of one fiat payment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiatPaymentRecord {
    pub payer: ActorId,
    pub payee: ActorId,
    pub amount: Usd,
    pub purpose: PaymentPurpose,
    pub agreement_id: AgreementId,
    /// Recycling bank account the payment moves through, if any.
    pub account: Option<String>,
    pub tick: u64,
}

impl Canonical for FiatPaymentRecord {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.payer.as_str())
            .str(self.payee.as_str())
            .i64(self.amount.atoms())
            .str(self.purpose.tag())
            .str(self.agreement_id.as_str())
            .option(self.account.as_ref(), |e, a| {
                e.str(a);
            })
            .u64(self.tick);
    }
}

/// Utility's periodic statement of the recycling account.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancePosting {
    pub account_number: String,
    pub balance: Usd,
    pub active_customers: u64,
    pub tick: u64,
}

impl Canonical for BalancePosting {
    fn encode(&self, e: &mut Encoder) {
        e.str(&self.account_number)
            .i64(self.balance.atoms())
            .u64(self.active_customers)
            .u64(self.tick);
    }
}

/// What the ledger says about the account; fed only by balance postings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankAccountMirror {
    pub account_number: String,
    pub custodian: ActorId,
    pub reported_balance: Usd,
    pub active_customers: u64,
    pub last_posting_tick: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OffchainError {
    #[error("payment of {offered} does not match the {expected} due")]
    AmountMismatch { expected: Usd, offered: Usd },
    #[error("{actor} may not {what}")]
    Unauthorized { actor: ActorId, what: String },
    #[error("{party} has not paid its liability of {amount}")]
    MissingLiabilityPayment { party: ActorId, amount: Usd },
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
}

type DueKey = (AgreementId, PaymentPurpose, ActorId);

/// Solution-1 state: the simulated bank account, outstanding dues and the
/// ledger mirror of the account.
#[derive(Clone, Debug)]
pub struct OffchainSettlement {
    pub account_number: String,
    pub custodian: ActorId,
    bank_balance: Usd,
    dues: BTreeMap<DueKey, Usd>,
    active: BTreeMap<AgreementId, ActorId>,
    barred: BTreeSet<ActorId>,
    settling: BTreeSet<AgreementId>,
    mirror: BankAccountMirror,
}

impl OffchainSettlement {
    pub fn new(custodian: ActorId, account_number: impl Into<String>) -> Self {
        let account_number = account_number.into();
        OffchainSettlement {
            mirror: BankAccountMirror {
                account_number: account_number.clone(),
                custodian: custodian.clone(),
                reported_balance: Usd::ZERO,
                active_customers: 0,
                last_posting_tick: None,
            },
            account_number,
            custodian,
            bank_balance: Usd::ZERO,
            dues: BTreeMap::new(),
            active: BTreeMap::new(),
            barred: BTreeSet::new(),
            settling: BTreeSet::new(),
        }
    }

    /// Actual balance held at the bank (off-ledger).
    pub fn bank_balance(&self) -> Usd {
        self.bank_balance
    }

    pub fn mirror(&self) -> &BankAccountMirror {
        &self.mirror
    }

    /// Parties barred from new agreements after defaulting on a liability.
    pub fn is_barred(&self, actor: &ActorId) -> bool {
        self.barred.contains(actor)
    }

    pub fn barred(&self) -> impl Iterator<Item = &ActorId> {
        self.barred.iter()
    }

    pub fn bar(&mut self, actor: ActorId) {
        self.barred.insert(actor);
    }

    /// Start counting an agreement's prosumer as an active customer.
    pub fn enroll(&mut self, agreement: &PanelAgreement) {
        self.active
            .insert(agreement.agreement_id.clone(), agreement.prosumer.clone());
    }

    pub fn active_customers(&self) -> u64 {
        self.active.values().collect::<BTreeSet<_>>().len() as u64
    }

    /// Record an amount `payer` owes for `purpose`; adds to any existing due.
    pub fn add_due(&mut self, agreement: &AgreementId, purpose: PaymentPurpose, payer: &ActorId, amount: Usd) {
        if amount.is_zero() {
            return;
        }
        *self
            .dues
            .entry((agreement.clone(), purpose, payer.clone()))
            .or_default() += amount;
    }

    pub fn due(&self, agreement: &AgreementId, purpose: PaymentPurpose, payer: &ActorId) -> Usd {
        self.dues
            .get(&(agreement.clone(), purpose, payer.clone()))
            .copied()
            .unwrap_or_default()
    }

    /// Pay a due amount in fiat and produce the mirror transaction.
    ///
    /// Fees and liabilities flow from a party into the account; transport
    /// rewards and recycler payments flow from the account. The transport
    /// reward is recorded by the prosumer who receives it; every other
    /// payment is recorded by its payer.
    #[allow(clippy::too_many_arguments)]
    pub fn post_payment(
        &mut self,
        registry: &mut Registry,
        agreement: &PanelAgreement,
        payer: &ActorId,
        payee: &ActorId,
        amount: Usd,
        purpose: PaymentPurpose,
        tick: u64,
    ) -> Result<Transaction, OffchainError> {
        let deny = |actor: &ActorId, what: &str| OffchainError::Unauthorized {
            actor: actor.clone(),
            what: what.to_string(),
        };
        let legal = match purpose {
            PaymentPurpose::Fee => payee == &self.custodian && payer != &self.custodian,
            PaymentPurpose::Liability => {
                payee == &self.custodian
                    && (payer == &agreement.manufacturer
                        || payer == &agreement.recycler
                        || registry.role_of(payer) == Some(crate::identity::Role::Prosumer))
            }
            PaymentPurpose::TransportReward => payer == &self.custodian && payee != &self.custodian,
            PaymentPurpose::RecyclerPayment => payer == &self.custodian && payee == &agreement.recycler,
        };
        if !legal {
            return Err(deny(payer, &format!("pay {payee} for {}", purpose.tag())));
        }
        let author = match purpose {
            PaymentPurpose::TransportReward => payee,
            _ => payer,
        };
        if registry.authorize(author, Action::CreateTransaction(crate::ledger::TxKind::FeePayment))?
            == Decision::Deny
        {
            return Err(deny(author, "record payments"));
        }
        let expected = self.due(&agreement.agreement_id, purpose, payer);
        if amount != expected || amount.is_zero() {
            return Err(OffchainError::AmountMismatch {
                expected,
                offered: amount,
            });
        }
        if purpose.is_inflow() {
            registry.debit_fiat(payer, amount)?;
            self.bank_balance += amount;
        } else {
            if self.bank_balance < amount {
                return Err(IdentityError::InsufficientFunds {
                    actor: self.custodian.clone(),
                    needed: amount,
                    available: self.bank_balance,
                }
                .into());
            }
            self.bank_balance -= amount;
            registry.credit_fiat(payee, amount)?;
        }
        self.dues
            .remove(&(agreement.agreement_id.clone(), purpose, payer.clone()));
        let record = FiatPaymentRecord {
            payer: payer.clone(),
            payee: payee.clone(),
            amount,
            purpose,
            agreement_id: agreement.agreement_id.clone(),
            account: Some(self.account_number.clone()),
            tick,
        };
        Ok(Transaction::new(
            author.clone(),
            ChannelId::for_agreement(&agreement.agreement_id),
            Payload::Payment(record),
            registry.keypair(author)?,
        ))
    }

    /// Balance posting with the true bank balance.
    pub fn post_balance(
        &mut self,
        registry: &Registry,
        author: &ActorId,
        tick: u64,
    ) -> Result<Transaction, OffchainError> {
        let balance = self.bank_balance;
        self.post_balance_reporting(registry, author, balance, tick)
    }

    /// Balance posting with an arbitrary reported balance (a dishonest or
    /// mistaken custodian); audits compare it with the mirrored payments.
    pub fn post_balance_reporting(
        &mut self,
        registry: &Registry,
        author: &ActorId,
        reported: Usd,
        tick: u64,
    ) -> Result<Transaction, OffchainError> {
        if author != &self.custodian
            || registry.authorize(author, Action::CreateTransaction(crate::ledger::TxKind::BalancePosting))?
                == Decision::Deny
        {
            return Err(OffchainError::Unauthorized {
                actor: author.clone(),
                what: "post account balances".into(),
            });
        }
        let posting = BalancePosting {
            account_number: self.account_number.clone(),
            balance: reported,
            active_customers: self.active_customers(),
            tick,
        };
        self.mirror.reported_balance = reported;
        self.mirror.active_customers = posting.active_customers;
        self.mirror.last_posting_tick = Some(tick);
        Ok(Transaction::new(
            author.clone(),
            ChannelId::public(),
            Payload::BalancePosting(posting),
            registry.keypair(author)?,
        ))
    }

    /// Settle a panel that left service: collect liabilities, reward the
    /// prosumer, ship, receive, pay the recycler, acknowledge.
    ///
    /// Resumable: if an obligated party does not pay (`willing` says no or
    /// its wallet is short) the flow halts after the payments already made
    /// and may be re-run later. Already-completed steps are skipped.
    pub fn run_settlement_flow(
        &mut self,
        registry: &mut Registry,
        agreement: &PanelAgreement,
        state: &mut PanelState,
        tick: u64,
        willing: &dyn Fn(&ActorId) -> bool,
    ) -> Result<FlowOutcome, OffchainError> {
        let mut txs = Vec::new();
        if state.settlement_phase().is_none() {
            return Err(LifecycleError::PhaseNotSettleable(state.phase).into());
        }
        let obligations = settlement_split(agreement, state)?;
        let id = &agreement.agreement_id;

        if matches!(state.phase, Phase::ReachedEol | Phase::FailedInWarranty | Phase::FailedPostWarranty | Phase::Refurbished)
            && !self.flow_started(id)
        {
            for (role, amount) in obligations.dues() {
                let party = party_for(agreement, state, role);
                self.add_due(id, PaymentPurpose::Liability, &party, amount);
            }
            self.add_due(id, PaymentPurpose::TransportReward, &self.custodian.clone(), obligations.prosumer_reward);
            self.add_due(id, PaymentPurpose::RecyclerPayment, &self.custodian.clone(), obligations.recycler_payout);
            self.mark_started(id);
        }

        let liabilities: Vec<(ActorId, Usd)> = self
            .dues
            .iter()
            .filter(|((a, p, _), _)| a == id && *p == PaymentPurpose::Liability)
            .map(|((_, _, who), amt)| (who.clone(), *amt))
            .collect();
        let mut missing = None;
        for (party, amount) in liabilities {
            let can_pay = willing(&party) && registry.wallet(&party)?.fiat >= amount;
            if !can_pay {
                missing.get_or_insert(OffchainError::MissingLiabilityPayment {
                    party: party.clone(),
                    amount,
                });
                continue;
            }
            txs.push(self.post_payment(
                registry,
                agreement,
                &party,
                &self.custodian.clone(),
                amount,
                PaymentPurpose::Liability,
                tick,
            )?);
        }
        if let Some(err) = missing {
            return Ok(FlowOutcome {
                txs,
                status: FlowStatus::Halted(err),
            });
        }

        let custodian = self.custodian.clone();
        let reward = self.due(id, PaymentPurpose::TransportReward, &custodian);
        if !reward.is_zero() {
            let holder = state.holder.clone();
            txs.push(self.post_payment(
                registry,
                agreement,
                &custodian,
                &holder,
                reward,
                PaymentPurpose::TransportReward,
                tick,
            )?);
        }
        if state.phase != Phase::Shipped && state.phase != Phase::Recycled {
            let (s, tx) = declare_transition(agreement, state, LifecycleEvent::Ship, tick)?
                .into_tx(registry, id);
            *state = s;
            txs.push(tx);
        }
        if state.phase == Phase::Shipped {
            let (s, tx) = declare_transition(agreement, state, LifecycleEvent::ReceiveAtRecycler, tick)?
                .into_tx(registry, id);
            *state = s;
            txs.push(tx);
        }
        let payout = self.due(id, PaymentPurpose::RecyclerPayment, &custodian);
        if !payout.is_zero() {
            let pay = self.post_payment(
                registry,
                agreement,
                &custodian,
                &agreement.recycler,
                payout,
                PaymentPurpose::RecyclerPayment,
                tick,
            )?;
            let ack = Transaction::new(
                agreement.recycler.clone(),
                ChannelId::for_agreement(id),
                Payload::Receipt(Receipt {
                    agreement: id.clone(),
                    tick,
                    subject: ReceiptSubject::Payment {
                        payment_tx: pay.tx_id,
                    },
                }),
                registry.keypair(&agreement.recycler)?,
            );
            txs.push(pay);
            txs.push(ack);
        }
        self.active.remove(id);
        Ok(FlowOutcome {
            txs,
            status: FlowStatus::Completed,
        })
    }

    fn flow_started(&self, id: &AgreementId) -> bool {
        self.settling.contains(id)
    }

    fn mark_started(&mut self, id: &AgreementId) {
        self.settling.insert(id.clone());
    }
}

/// Who pays a role's share: the current holder stands in for the prosumer.
pub(crate) fn party_for(agreement: &PanelAgreement, state: &PanelState, role: crate::identity::Role) -> ActorId {
    use crate::identity::Role;
    match role {
        Role::Manufacturer => agreement.manufacturer.clone(),
        Role::Recycler => agreement.recycler.clone(),
        _ => state.holder.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FlowStatus {
    Completed,
    Halted(OffchainError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowOutcome {
    pub txs: Vec<Transaction>,
    pub status: FlowStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum AccountFinding {
    /// A balance posting disagrees with the replayed payments.
    Discrepancy {
        tick: u64,
        reported: Usd,
        expected: Usd,
        difference: Usd,
    },
    /// Recycler paid before any receipt of the panels was recorded.
    OrderingViolation { agreement: AgreementId, tx: Digest },
    /// Declared liabilities not (yet) covered by liability payments.
    Shortfall {
        agreement: AgreementId,
        declared: Usd,
        paid: Usd,
    },
    /// Payout out of the account exceeds what the account held.
    Overdraft { tick: u64, tx: Digest, balance: Usd },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementLedger {
    pub inflow: Usd,
    pub outflow: Usd,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountAudit {
    pub account_number: String,
    pub expected_balance: Usd,
    pub latest_reported: Option<Usd>,
    pub postings_checked: usize,
    pub findings: Vec<AccountFinding>,
    pub per_agreement: BTreeMap<AgreementId, AgreementLedger>,
}

impl AccountAudit {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "account {}  expected {}  reported {}  postings {}\n",
            self.account_number,
            self.expected_balance,
            self.latest_reported
                .map(|r| r.to_string())
                .unwrap_or_else(|| "-".into()),
            self.postings_checked
        );
        if self.findings.is_empty() {
            out.push_str("no discrepancies\n");
        }
        for f in &self.findings {
            let line = match f {
                AccountFinding::Discrepancy {
                    tick,
                    reported,
                    expected,
                    difference,
                } => format!("tick {tick:>5}  discrepancy  reported {reported}  expected {expected}  diff {difference}"),
                AccountFinding::OrderingViolation { agreement, tx } => {
                    format!("agreement {agreement}  recycler paid before receipt  tx {}", &tx.to_hex()[..12])
                }
                AccountFinding::Shortfall {
                    agreement,
                    declared,
                    paid,
                } => format!("agreement {agreement}  liability shortfall  declared {declared}  paid {paid}"),
                AccountFinding::Overdraft { tick, tx, balance } => {
                    format!("tick {tick:>5}  overdraft at balance {balance}  tx {}", &tx.to_hex()[..12])
                }
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// Replay every mirrored payment touching `account_number` in commit order,
/// and compare the running balance with each posting.
pub fn audit_account<'a>(txs: impl IntoIterator<Item = &'a Transaction>, account_number: &str) -> AccountAudit {
    let mut audit = AccountAudit {
        account_number: account_number.to_string(),
        ..Default::default()
    };
    let mut balance = Usd::ZERO;
    let mut received: BTreeSet<AgreementId> = BTreeSet::new();
    let mut declared: BTreeMap<AgreementId, Usd> = BTreeMap::new();
    let mut liability_paid: BTreeMap<AgreementId, Usd> = BTreeMap::new();
    for tx in txs {
        match &tx.payload {
            Payload::Payment(p) if p.account.as_deref() == Some(account_number) => {
                let sub = audit.per_agreement.entry(p.agreement_id.clone()).or_default();
                if p.purpose.is_inflow() {
                    balance += p.amount;
                    sub.inflow += p.amount;
                    if p.purpose == PaymentPurpose::Liability {
                        *liability_paid.entry(p.agreement_id.clone()).or_default() += p.amount;
                    }
                } else {
                    if p.amount > balance {
                        audit.findings.push(AccountFinding::Overdraft {
                            tick: p.tick,
                            tx: tx.tx_id,
                            balance,
                        });
                    }
                    balance -= p.amount;
                    sub.outflow += p.amount;
                    if p.purpose == PaymentPurpose::RecyclerPayment && !received.contains(&p.agreement_id) {
                        audit.findings.push(AccountFinding::OrderingViolation {
                            agreement: p.agreement_id.clone(),
                            tx: tx.tx_id,
                        });
                    }
                }
            }
            Payload::Receipt(r) if r.subject == ReceiptSubject::Panels => {
                received.insert(r.agreement.clone());
            }
            Payload::FailureDeclaration(f) => {
                declared.insert(f.agreement.clone(), f.remaining_cost);
            }
            Payload::BalancePosting(b) if b.account_number == account_number => {
                audit.postings_checked += 1;
                audit.latest_reported = Some(b.balance);
                if b.balance != balance {
                    audit.findings.push(AccountFinding::Discrepancy {
                        tick: b.tick,
                        reported: b.balance,
                        expected: balance,
                        difference: b.balance - balance,
                    });
                }
            }
            _ => {}
        }
    }
    for (agreement, declared) in declared {
        let paid = liability_paid.get(&agreement).copied().unwrap_or_default();
        if paid < declared {
            audit.findings.push(AccountFinding::Shortfall {
                agreement,
                declared,
                paid,
            });
        }
    }
    audit.expected_balance = balance;
    audit
}
