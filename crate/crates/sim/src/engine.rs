//! The monthly tick loop.
//!
//! Per tick: metering (fees or mints), scripted lifecycle events, settlement
//! flows, account postings, reserve policy, then one block from the next
//! full node in rotation.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use panelchain::escrow::{
    contract_id_for, Denomination, DepositSource, EscrowAmount, EscrowBook, EscrowEffect, EscrowPhase,
    SettlementPlan, WithdrawalPurpose,
};
use panelchain::identity::{EnergySummary, Registry, Role};
use panelchain::ledger::{ActorId, Chain, ChannelId, Payload, Transaction};
use panelchain::lifecycle::{
    declare_transition, record_energy, register_agreement, AgreementTerms, LifecycleEvent, PanelAgreement,
    PanelState, Phase,
};
use panelchain::money::{Coins, Energy, Tokens, Usd};
use panelchain::offchain::{FlowStatus, OffchainError, OffchainSettlement, PaymentPurpose};
use panelchain::rccoin::{
    annual_policy_adjustment, coin_settlement_plan, purchase_cost, value_micro_squared, CoinLedger, Conservation,
    MarketPrice, Minter, PolicyUpdate, RcscState, SupplyPolicy,
};

use crate::report::{AgreementSummary, CoinPoint, Compliance, SimReport};
use crate::scenario::{EolAction, Scenario, Solution};

#[derive(Debug, Error)]
#[error("tick {tick}: {context}: {message}")]
pub struct SimError {
    pub tick: u64,
    pub context: String,
    pub message: String,
}

fn fail(tick: u64, context: impl Into<String>) -> impl FnOnce(&dyn std::fmt::Display) -> SimError {
    let context = context.into();
    move |e| SimError {
        tick,
        context,
        message: e.to_string(),
    }
}

macro_rules! at {
    ($tick:expr, $ctx:expr, $res:expr) => {
        $res.map_err(|e| fail($tick, $ctx)(&e))
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    InService,
    Refurbished { retire: u64 },
    Settling { since: u64 },
    Done,
    Landfilled,
}

struct Run {
    agreement: PanelAgreement,
    state: PanelState,
    eol_action: EolAction,
    failure: Option<(u64, String)>,
    monthly: Energy,
    stage: Stage,
    arrears: Usd,
    summary: AgreementSummary,
}

struct CoinEconomy {
    policy: SupplyPolicy,
    minter: Minter,
    rcsc: RcscState,
    ledger: CoinLedger,
    market: MarketPrice,
    year_minted: Vec<Coins>,
}

pub struct Engine {
    scenario: Scenario,
    registry: Registry,
    chain: Chain,
    validators: Vec<ActorId>,
    runs: Vec<Run>,
    pending: Vec<Transaction>,
    accounts: BTreeMap<ActorId, OffchainSettlement>,
    book: EscrowBook,
    coins: Option<CoinEconomy>,
    tokens_deposited: i64,
    tokens_in_wallets: i64,
    conservation_failures: Vec<u64>,
    coin_series: Vec<CoinPoint>,
    defaulted: BTreeSet<ActorId>,
    signer_roles: Vec<Role>,
}

/// Finished run: the committed chain plus the report.
pub struct RunOutput {
    pub chain: Chain,
    pub report: SimReport,
}

pub fn run(scenario: &Scenario) -> Result<RunOutput, SimError> {
    let mut engine = Engine::new(scenario.clone())?;
    for t in 1..=scenario.duration_ticks {
        engine.step(t)?;
    }
    Ok(engine.finish())
}

fn account_number(utility: &ActorId) -> String {
    format!("RB-{utility}")
}

impl Engine {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        let mut registry = Registry::new(scenario.seed);
        let mut pending = Vec::new();
        for a in &scenario.actors {
            let id = ActorId::new(&a.id);
            let tx = at!(0, format!("register {}", a.id), registry.register_actor(id.clone(), a.role, a.role.node_class()))?;
            at!(0, "opening balance", registry.credit_fiat(&id, a.fiat))?;
            pending.push(tx);
        }
        let validators: Vec<ActorId> = registry
            .actors()
            .filter(|a| a.role.node_class() == panelchain::identity::NodeClass::Full)
            .map(|a| a.id.clone())
            .collect();

        let coins = (scenario.solution == Solution::RcCoin).then(|| CoinEconomy {
            policy: scenario.policy.initial(),
            minter: Minter::new(),
            rcsc: RcscState::new(scenario.rcsc.clone()),
            ledger: CoinLedger::default(),
            market: MarketPrice::new(scenario.market.clone(), scenario.seed),
            year_minted: Vec::new(),
        });
        let signer_roles = scenario
            .escrow_signers
            .clone()
            .unwrap_or_else(|| vec![Role::Prosumer, Role::Recycler, Role::Manufacturer, Role::Utility]);

        let mut engine = Engine {
            registry,
            chain: Chain::new(),
            validators,
            runs: Vec::new(),
            pending,
            accounts: BTreeMap::new(),
            book: EscrowBook::new(),
            coins,
            tokens_deposited: 0,
            tokens_in_wallets: 0,
            conservation_failures: Vec::new(),
            coin_series: Vec::new(),
            defaulted: BTreeSet::new(),
            signer_roles,
            scenario,
        };
        engine.open_agreements()?;
        engine.seal_block(0)?;
        Ok(engine)
    }

    fn open_agreements(&mut self) -> Result<(), SimError> {
        let entries = self.scenario.agreements.clone();
        for entry in entries {
            let ctx = format!("agreement {}", entry.id);
            let terms = AgreementTerms {
                agreement_id: entry.id.as_str().into(),
                prosumer: entry.prosumer.as_str().into(),
                manufacturer: entry.manufacturer.as_str().into(),
                recycler: entry.recycler.as_str().into(),
                utility: entry.utility.as_str().into(),
                capacity_w: entry.capacity_w,
                cost_rate: entry.cost_rate,
                lifetime_months: entry.lifetime_months,
                warranty_months: entry.warranty_months,
                transport_allowance: entry.transport_allowance,
                start_tick: entry.start_tick,
                fee_schedule: entry.fee_schedule,
                split: entry.split,
            };
            let (agreement, state, tx) = at!(0, &ctx, register_agreement(&mut self.registry, terms, &|_| false))?;
            self.pending.push(tx);
            match self.scenario.solution {
                Solution::Offchain => {
                    let u = agreement.utility.clone();
                    self.accounts
                        .entry(u.clone())
                        .or_insert_with(|| OffchainSettlement::new(u.clone(), account_number(&u)))
                        .enroll(&agreement);
                }
                Solution::Escrow | Solution::RcCoin => {
                    let denomination = if self.scenario.solution == Solution::Escrow {
                        Denomination::Stablecoin
                    } else {
                        Denomination::RcCoin
                    };
                    let signers = self.signers_for(&agreement);
                    let (_, tx) = at!(
                        0,
                        &ctx,
                        self.book
                            .deploy_escrow(&self.registry, &agreement.utility, &agreement, denomination, signers)
                    )?;
                    self.pending.push(tx);
                }
            }
            self.runs.push(Run {
                summary: AgreementSummary::new(&agreement),
                monthly: entry.kwh_per_month.unwrap_or(self.scenario.generation.kwh_per_month),
                failure: entry.script.failure.map(|f| (f.tick, f.cause)),
                eol_action: entry.script.eol_action,
                stage: Stage::InService,
                arrears: Usd::ZERO,
                agreement,
                state,
            });
        }
        Ok(())
    }

    fn signers_for(&self, a: &PanelAgreement) -> Vec<ActorId> {
        self.signer_roles
            .iter()
            .filter_map(|r| match r {
                Role::Prosumer => Some(a.prosumer.clone()),
                Role::Recycler => Some(a.recycler.clone()),
                Role::Manufacturer => Some(a.manufacturer.clone()),
                Role::Utility => Some(a.utility.clone()),
                _ => None,
            })
            .collect()
    }

    fn willing(&self, actor: &ActorId, t: u64) -> bool {
        !self
            .scenario
            .defaulters
            .iter()
            .any(|d| d.actor == actor.as_str() && d.until_tick.is_none_or(|u| t < u))
    }

    /// Record a transaction for this tick's block, letting escrow contracts
    /// observe it.
    fn emit(&mut self, tx: Transaction) {
        if self.scenario.solution != Solution::Offchain {
            let _ = self.book.apply(&tx, &self.registry);
        }
        self.pending.push(tx);
    }

    pub fn step(&mut self, t: u64) -> Result<(), SimError> {
        if t > 1 && (t - 1).is_multiple_of(12) {
            let g = self.scenario.generation.growth_per_year;
            for r in &mut self.runs {
                r.monthly = Energy::from_atoms(g.scale_half_even(r.monthly.atoms()));
            }
        }
        self.meter(t)?;
        self.scripted_events(t)?;
        self.settle(t)?;
        self.post_balances(t)?;
        self.reserve_policy(t)?;
        self.seal_block(t)?;
        self.check_conservation(t);
        Ok(())
    }

    fn meter(&mut self, t: u64) -> Result<(), SimError> {
        let mut totals: BTreeMap<ActorId, BTreeMap<ActorId, Energy>> = BTreeMap::new();
        for i in 0..self.runs.len() {
            let r = &mut self.runs[i];
            if r.state.phase != Phase::Active || t <= r.agreement.start_tick || t > r.agreement.eol_tick() {
                continue;
            }
            let energy = r.monthly;
            let ctx = format!("meter {}", r.agreement.agreement_id);
            let ev = at!(t, &ctx, record_energy(&r.agreement, &mut r.state, energy, t))?;
            *totals
                .entry(r.agreement.utility.clone())
                .or_default()
                .entry(r.state.holder.clone())
                .or_default() += energy;
            match self.scenario.solution {
                Solution::Offchain => self.pay_fee_offchain(i, ev.fee_due, t)?,
                Solution::Escrow => self.pay_fee_escrow(i, ev.fee_due, t)?,
                Solution::RcCoin => self.mint(i, energy, t)?,
            }
        }
        for (utility, per) in totals {
            let key = at!(t, "energy summary", self.registry.keypair(&utility))?;
            let tx = Transaction::new(
                utility.clone(),
                ChannelId::public(),
                Payload::EnergySummary(EnergySummary {
                    month: t,
                    totals: per.into_iter().collect(),
                }),
                key,
            );
            self.pending.push(tx);
        }
        Ok(())
    }

    fn pay_fee_offchain(&mut self, i: usize, fee: Usd, t: u64) -> Result<(), SimError> {
        let r = &self.runs[i];
        let id = r.agreement.agreement_id.clone();
        let payer = r.state.holder.clone();
        let account = self.accounts.get_mut(&r.agreement.utility).expect("account per utility");
        account.add_due(&id, PaymentPurpose::Fee, &payer, fee);
        let due = account.due(&id, PaymentPurpose::Fee, &payer);
        if due.is_zero() || self.registry.wallet(&payer).map_or(true, |w| w.fiat < due) {
            return Ok(());
        }
        let utility = r.agreement.utility.clone();
        let tx = at!(
            t,
            format!("fee for {id}"),
            account.post_payment(&mut self.registry, &self.runs[i].agreement, &payer, &utility, due, PaymentPurpose::Fee, t)
        )?;
        self.runs[i].summary.fees_paid += due;
        self.pending.push(tx);
        Ok(())
    }

    fn pay_fee_escrow(&mut self, i: usize, fee: Usd, t: u64) -> Result<(), SimError> {
        let r = &mut self.runs[i];
        r.arrears += fee;
        let due = r.arrears;
        let payer = r.state.holder.clone();
        if due.is_zero() || self.registry.debit_fiat(&payer, due).is_err() {
            return Ok(());
        }
        r.arrears = Usd::ZERO;
        r.summary.fees_paid += due;
        let contract = contract_id_for(&r.agreement.agreement_id);
        let amount = EscrowAmount::Tokens(Tokens::from_fiat(due));
        let utility = r.agreement.utility.clone();
        let tx = at!(
            t,
            format!("fee deposit for {}", r.agreement.agreement_id),
            self.book
                .convert_and_deposit(&self.registry, &utility, &contract, amount, amount, DepositSource::Fee, t)
        )?;
        self.tokens_deposited += amount.atoms();
        self.pending.push(tx);
        Ok(())
    }

    fn mint(&mut self, i: usize, energy: Energy, t: u64) -> Result<(), SimError> {
        let r = &self.runs[i];
        let eco = self.coins.as_mut().expect("coin economy");
        let record = at!(
            t,
            format!("mint for {}", r.agreement.agreement_id),
            eco.minter
                .mint_on_generation(&r.agreement.agreement_id, r.state.phase, energy, &eco.policy, t)
        )?;
        if record.coins.is_zero() {
            return Ok(());
        }
        let utility = r.agreement.utility.clone();
        let key = at!(t, "mint", self.registry.keypair(&utility))?;
        let tx = Transaction::new(
            utility,
            ChannelId::for_agreement(&r.agreement.agreement_id),
            Payload::Mint(record.clone()),
            key,
        );
        let effect = at!(t, "mint", self.book.apply(&tx, &self.registry))?;
        eco.ledger.total_minted += record.coins;
        eco.rcsc.receive(record.reserve_share);
        if effect != (EscrowEffect::MintShare { credited: true }) {
            eco.rcsc.receive(record.escrow_share);
        }
        let year = ((t - 1) / 12) as usize;
        if eco.year_minted.len() <= year {
            eco.year_minted.resize(year + 1, Coins::ZERO);
        }
        eco.year_minted[year] += record.coins;
        self.runs[i].summary.coins_minted += record.coins;
        self.pending.push(tx);
        Ok(())
    }

    fn transition(&mut self, i: usize, event: LifecycleEvent, t: u64) -> Result<(), SimError> {
        let r = &self.runs[i];
        let ctx = format!("{} for {}", event.name(), r.agreement.agreement_id);
        let (state, tx) = at!(t, ctx, declare_transition(&r.agreement, &r.state, event, t))?
            .into_tx(&self.registry, &r.agreement.agreement_id);
        self.runs[i].state = state;
        self.emit(tx);
        Ok(())
    }

    fn scripted_events(&mut self, t: u64) -> Result<(), SimError> {
        for i in 0..self.runs.len() {
            let r = &self.runs[i];
            match r.stage {
                Stage::InService => {
                    let left = if r.failure.as_ref().is_some_and(|(ft, _)| *ft == t) && r.state.phase == Phase::Active {
                        let cause = r.failure.clone().expect("checked").1;
                        self.transition(i, LifecycleEvent::Fail { cause }, t)?;
                        true
                    } else if r.state.phase == Phase::Active && t == r.agreement.eol_tick() {
                        self.transition(i, LifecycleEvent::ReachEol, t)?;
                        true
                    } else {
                        false
                    };
                    if !left {
                        continue;
                    }
                    self.runs[i].summary.left_service_tick = Some(t);
                    match self.runs[i].eol_action.clone() {
                        EolAction::Recycle => self.runs[i].stage = Stage::Settling { since: t },
                        EolAction::Landfill => {
                            self.transition(i, LifecycleEvent::Landfill, t)?;
                            self.runs[i].stage = Stage::Landfilled;
                        }
                        EolAction::Refurbish {
                            new_prosumer,
                            retire_tick,
                        } => {
                            self.transition(
                                i,
                                LifecycleEvent::Refurbish {
                                    new_prosumer: new_prosumer.as_str().into(),
                                },
                                t,
                            )?;
                            self.runs[i].stage = if retire_tick <= t {
                                Stage::Settling { since: t }
                            } else {
                                Stage::Refurbished { retire: retire_tick }
                            };
                        }
                    }
                }
                Stage::Refurbished { retire } if retire == t => {
                    self.runs[i].stage = Stage::Settling { since: t };
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn settle(&mut self, t: u64) -> Result<(), SimError> {
        for i in 0..self.runs.len() {
            let Stage::Settling { since } = self.runs[i].stage else {
                continue;
            };
            let done = match self.scenario.solution {
                Solution::Offchain => self.settle_offchain(i, t)?,
                Solution::Escrow | Solution::RcCoin => self.settle_escrow(i, since, t)?,
            };
            if done {
                self.runs[i].stage = Stage::Done;
                self.runs[i].summary.settled_tick = Some(t);
            }
        }
        Ok(())
    }

    fn settle_offchain(&mut self, i: usize, t: u64) -> Result<bool, SimError> {
        let utility = self.runs[i].agreement.utility.clone();
        let willing: BTreeSet<ActorId> = self
            .registry
            .actors()
            .filter(|a| self.willing(&a.id, t))
            .map(|a| a.id.clone())
            .collect();
        let account = self.accounts.get_mut(&utility).expect("account per utility");
        let r = &mut self.runs[i];
        let ctx = format!("settlement of {}", r.agreement.agreement_id);
        let out = at!(
            t,
            ctx,
            account.run_settlement_flow(&mut self.registry, &r.agreement, &mut r.state, t, &|a| willing.contains(a))
        )?;
        for tx in &out.txs {
            if let Payload::Payment(p) = &tx.payload {
                match p.purpose {
                    PaymentPurpose::Liability => r.summary.add_liability(&p.payer, p.amount),
                    PaymentPurpose::TransportReward => r.summary.prosumer_reward += p.amount,
                    PaymentPurpose::RecyclerPayment => r.summary.recycler_paid += p.amount,
                    PaymentPurpose::Fee => {}
                }
            }
        }
        self.pending.extend(out.txs);
        match out.status {
            FlowStatus::Completed => Ok(true),
            FlowStatus::Halted(OffchainError::MissingLiabilityPayment { party, .. }) => {
                account.bar(party.clone());
                self.runs[i].summary.defaulters.insert(party.clone());
                self.defaulted.insert(party);
                Ok(false)
            }
            FlowStatus::Halted(e) => Err(fail(t, format!("settlement of {}", self.runs[i].agreement.agreement_id))(&e)),
        }
    }

    fn price(&self) -> Usd {
        self.coins.as_ref().map_or(Usd::ONE, |c| c.market.price)
    }

    fn settle_escrow(&mut self, i: usize, since: u64, t: u64) -> Result<bool, SimError> {
        let id = self.runs[i].agreement.agreement_id.clone();
        let ctx = format!("escrow settlement of {id}");
        let contract = contract_id_for(&id);
        let utility = self.runs[i].agreement.utility.clone();
        let coin_mode = self.scenario.solution == Solution::RcCoin;
        let price = self.price();
        let phase = |book: &EscrowBook| book.contract(&contract).expect("deployed").phase;

        if phase(&self.book) == EscrowPhase::Funding {
            let r = &self.runs[i];
            let plan = if coin_mode {
                at!(t, &ctx, coin_settlement_plan(&r.agreement, &r.state, price, &utility))?
            } else {
                at!(t, &ctx, SettlementPlan::stablecoin(&r.agreement, &r.state))?
            };
            let tx = at!(t, &ctx, self.book.mature(&self.registry, &utility, &contract, plan, t))?;
            self.runs[i].summary.settlement_price = coin_mode.then_some(price);
            self.pending.push(tx);
        }

        if phase(&self.book) == EscrowPhase::ShortfallPending {
            let dues: Vec<(ActorId, i64)> = self
                .book
                .contract(&contract)
                .expect("deployed")
                .dues
                .iter()
                .map(|(a, v)| (a.clone(), *v))
                .collect();
            for (party, atoms) in dues {
                if !self.willing(&party, t) || !self.pay_escrow_due(i, &party, atoms, t)? {
                    self.runs[i].summary.defaulters.insert(party.clone());
                    self.defaulted.insert(party);
                }
            }
        }

        if coin_mode && phase(&self.book) == EscrowPhase::ShortfallPending {
            let c = self.book.contract(&contract).expect("deployed");
            let grace = self.scenario.rcsc.topup_grace_ticks;
            if c.dues.is_empty() || t >= since + grace {
                let needed = Coins::from_atoms(c.reserve_topup_needed());
                let eco = self.coins.as_mut().expect("coin economy");
                if needed > Coins::ZERO {
                    if eco.rcsc.withdraw(needed).is_ok() {
                        let amount = EscrowAmount::Coins(needed);
                        let tx = at!(
                            t,
                            &ctx,
                            self.book.convert_and_deposit(
                                &self.registry,
                                &utility,
                                &contract,
                                amount,
                                amount,
                                DepositSource::Reserve,
                                t
                            )
                        )?;
                        self.runs[i].summary.reserve_topup += needed;
                        self.pending.push(tx);
                    } else {
                        eco.rcsc.skipped.push((t, format!("top-up of {id}: insufficient reserve")));
                    }
                }
            }
        }

        while phase(&self.book) == EscrowPhase::Matured {
            let next = self
                .book
                .contract(&contract)
                .expect("deployed")
                .next_release()
                .expect("matured contracts have a next release");
            if next.purpose == WithdrawalPurpose::RecyclerPayment {
                if !matches!(self.runs[i].state.phase, Phase::Shipped | Phase::Recycled) {
                    self.transition(i, LifecycleEvent::Ship, t)?;
                }
                if self.runs[i].state.phase == Phase::Shipped {
                    self.transition(i, LifecycleEvent::ReceiveAtRecycler, t)?;
                }
            }
            let signers: Vec<ActorId> = self
                .book
                .contract(&contract)
                .expect("deployed")
                .required_signers
                .iter()
                .cloned()
                .collect();
            let (tx, effect) = at!(
                t,
                &ctx,
                self.book
                    .release_withdrawal(&self.registry, &next.beneficiary, &contract, &next, &signers)
            )?;
            self.pending.push(tx);
            if let EscrowEffect::Released {
                beneficiary,
                amount,
                purpose,
                ..
            } = effect
            {
                self.credit_release(i, &beneficiary, amount, purpose, price);
            }
        }
        Ok(phase(&self.book) == EscrowPhase::PaidOut)
    }

    /// Pay one escrow due: fiat converted 1:1, or coins bought from the
    /// reserve at market price. False when the party cannot pay.
    fn pay_escrow_due(&mut self, i: usize, party: &ActorId, atoms: i64, t: u64) -> Result<bool, SimError> {
        let id = self.runs[i].agreement.agreement_id.clone();
        let ctx = format!("liability of {party} for {id}");
        let contract = contract_id_for(&id);
        let (amount, fiat_cost) = match self.scenario.solution {
            Solution::RcCoin => {
                let coins = Coins::from_atoms(atoms);
                let price = self.price();
                let cost = purchase_cost(coins, price);
                let eco = self.coins.as_mut().expect("coin economy");
                if eco.rcsc.reserve < coins || self.registry.wallet(party).map_or(true, |w| w.fiat < cost) {
                    return Ok(false);
                }
                at!(t, &ctx, self.registry.debit_fiat(party, cost))?;
                let trade = at!(t, &ctx, eco.rcsc.sell(&mut eco.ledger, party, coins, price, t))?;
                at!(t, &ctx, eco.ledger.debit(party, coins))?;
                let utility = self.runs[i].agreement.utility.clone();
                let key = at!(t, &ctx, self.registry.keypair(&utility))?;
                self.pending.push(Transaction::new(
                    utility,
                    ChannelId::for_agreement(&id),
                    Payload::Trade(trade),
                    key,
                ));
                (EscrowAmount::Coins(coins), cost)
            }
            _ => {
                let usd = Usd::from_atoms(atoms);
                if self.registry.debit_fiat(party, usd).is_err() {
                    return Ok(false);
                }
                self.tokens_deposited += atoms;
                (EscrowAmount::Tokens(Tokens::from_atoms(atoms)), usd)
            }
        };
        let tx = at!(
            t,
            &ctx,
            self.book.convert_and_deposit(
                &self.registry,
                party,
                &contract,
                amount,
                amount,
                DepositSource::Liability { party: party.clone() },
                t
            )
        )?;
        self.pending.push(tx);
        self.runs[i].summary.add_liability(party, fiat_cost);
        Ok(true)
    }

    fn credit_release(&mut self, i: usize, beneficiary: &ActorId, amount: EscrowAmount, purpose: WithdrawalPurpose, price: Usd) {
        let s = &mut self.runs[i].summary;
        let settlement_price = s.settlement_price.unwrap_or(price);
        let fiat_value = match amount {
            EscrowAmount::Tokens(tk) => tk.to_fiat(),
            EscrowAmount::Coins(c) => {
                Usd::from_atoms((value_micro_squared(c, settlement_price) / panelchain::money::MICRO as i128) as i64)
            }
        };
        match purpose {
            WithdrawalPurpose::RecyclerPayment => {
                s.recycler_paid += fiat_value;
                if let EscrowAmount::Coins(c) = amount {
                    s.recycler_paid_coins = Some(c);
                }
            }
            WithdrawalPurpose::TransportReward => s.prosumer_reward += fiat_value,
            WithdrawalPurpose::Surplus => s.surplus_returned += fiat_value,
        }
        match amount {
            EscrowAmount::Tokens(tk) => {
                if let Ok(a) = self.registry.actor_mut(beneficiary) {
                    a.wallet.tokens += tk;
                }
                self.tokens_in_wallets += tk.atoms();
            }
            EscrowAmount::Coins(c) => {
                let eco = self.coins.as_mut().expect("coin economy");
                if purpose == WithdrawalPurpose::Surplus {
                    eco.rcsc.receive(c);
                } else {
                    eco.ledger.credit(beneficiary, c);
                }
            }
        }
    }

    fn post_balances(&mut self, t: u64) -> Result<(), SimError> {
        if self.scenario.solution != Solution::Offchain || !t.is_multiple_of(self.scenario.posting_interval) {
            return Ok(());
        }
        for (utility, account) in self.accounts.iter_mut() {
            let tx = at!(t, "balance posting", account.post_balance(&self.registry, utility, t))?;
            self.pending.push(tx);
        }
        Ok(())
    }

    fn reserve_policy(&mut self, t: u64) -> Result<(), SimError> {
        let Some(eco) = self.coins.as_mut() else {
            return Ok(());
        };
        let operator = self
            .runs
            .first()
            .map(|r| r.agreement.utility.clone())
            .or_else(|| self.validators.first().cloned())
            .expect("a full node exists");
        let key = at!(t, "reserve policy", self.registry.keypair(&operator))?;
        let outcome = eco.rcsc.apply_policy(&mut eco.ledger, eco.market.price, t);
        for b in outcome.burns {
            self.pending
                .push(Transaction::new(operator.clone(), ChannelId::public(), Payload::Burn(b), key));
        }
        for tr in outcome.trades {
            self.pending
                .push(Transaction::new(operator.clone(), ChannelId::public(), Payload::Trade(tr), key));
        }
        eco.market.step(outcome.net_sell);
        if t.is_multiple_of(12) {
            let year = (t / 12 - 1) as u32;
            let growth = self.scenario.policy.growth_for(year);
            eco.policy = annual_policy_adjustment(&eco.policy, growth);
            let update = PolicyUpdate {
                tick: t,
                year_index: eco.policy.year_index,
                growth,
                coins_per_batch: eco.policy.coins_per_batch,
                units_per_batch: eco.policy.units_per_batch,
                approach: eco.policy.approach,
            };
            self.pending.push(Transaction::new(
                operator,
                ChannelId::public(),
                Payload::PolicyUpdate(update),
                key,
            ));
        }
        Ok(())
    }

    fn seal_block(&mut self, t: u64) -> Result<(), SimError> {
        let height = self.chain.height() + 1;
        let validator = self.validators[((height - 1) % self.validators.len() as u64) as usize].clone();
        let key = at!(t, "block", self.registry.keypair(&validator))?.clone();
        let parent = self.chain.head().header.clone();
        let body = std::mem::take(&mut self.pending);
        let block = at!(t, format!("block {height}"), self.chain.create_block(&parent, body, &validator, &key, t))?;
        at!(t, format!("block {height}"), self.chain.validate_and_append(block))?;
        Ok(())
    }

    fn check_conservation(&mut self, t: u64) {
        match self.scenario.solution {
            Solution::RcCoin => {
                let eco = self.coins.as_ref().expect("coin economy");
                let snap = Conservation::of(&eco.ledger, &self.book, eco.rcsc.reserve);
                if !snap.holds() {
                    self.conservation_failures.push(t);
                }
                self.coin_series.push(CoinPoint {
                    tick: t,
                    price: eco.market.price,
                    minted: snap.minted,
                    burned: snap.burned,
                    circulating: snap.circulating(),
                    reserve: snap.reserve,
                    escrows: snap.escrows,
                    wallets: snap.wallets,
                });
            }
            Solution::Escrow => {
                let held = self.book.total_balance(Denomination::Stablecoin) + self.tokens_in_wallets;
                if held != self.tokens_deposited {
                    self.conservation_failures.push(t);
                }
            }
            Solution::Offchain => {}
        }
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn finish(self) -> RunOutput {
        let integrity = self.chain.verify_integrity();
        let txs: Vec<&Transaction> = self.chain.transactions().collect();
        let account_audits = self
            .accounts
            .keys()
            .map(|u| panelchain::offchain::audit_account(txs.iter().copied(), &account_number(u)))
            .collect();
        let mut landfilled = Vec::new();
        let mut agreements = Vec::new();
        for r in self.runs {
            let mut s = r.summary;
            s.final_phase = r.state.phase;
            s.settlement_basis = r.state.settlement_phase();
            s.accrued = r.state.accrued;
            s.holder = r.state.holder.clone();
            if r.stage == Stage::Landfilled {
                landfilled.push(r.agreement.agreement_id.clone());
            }
            agreements.push(s);
        }
        let barred = self
            .accounts
            .values()
            .flat_map(|a| a.barred().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let (year_minted, rcsc_skipped, final_policy) = match &self.coins {
            Some(eco) => (eco.year_minted.clone(), eco.rcsc.skipped.clone(), Some(eco.policy.clone())),
            None => (Vec::new(), Vec::new(), None),
        };
        let escrows = self.book.contracts().cloned().collect();
        let report = SimReport {
            name: self.scenario.name.clone(),
            solution: self.scenario.solution,
            seed: self.scenario.seed,
            ticks: self.scenario.duration_ticks,
            blocks: self.chain.height() + 1,
            transactions: txs.len() as u64,
            head: self.chain.head().hash(),
            integrity_clean: integrity.is_clean(),
            integrity_findings: integrity.findings.len() as u64,
            agreements,
            account_audits,
            escrows,
            coin_series: self.coin_series,
            year_minted,
            final_policy,
            rcsc_skipped,
            conservation_failures: self.conservation_failures,
            compliance: Compliance {
                landfilled,
                defaulters: self.defaulted.into_iter().collect(),
                barred,
            },
        };
        RunOutput {
            chain: self.chain,
            report,
        }
    }
}
