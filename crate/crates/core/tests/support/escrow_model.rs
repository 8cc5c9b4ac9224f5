//! Bounded model of the escrow contract for no-bypass checks. Four actors,
//! a handful of pre-states and a finite alphabet of transactions that any of
//! the actors could author, including every signature subset and forgeries.

use std::cell::RefCell;
use std::rc::Rc;
use std::collections::{BTreeSet, HashMap, HashSet};

use panelchain::escrow::{
    contract_id_for, default_signers, withdrawal_message, Denomination, DepositSource, Directory, EscrowAmount,
    EscrowBook, EscrowDeploy, EscrowDeposit, EscrowMature, EscrowPhase, EscrowWithdrawal, Payout, SettlementPlan,
    WithdrawalPurpose,
};
use panelchain::identity::{Registry, Role};
use panelchain::ledger::keys;
use panelchain::ledger::{ActorId, ChannelId, ContractId, Payload, PublicKey, SignatureBytes, Transaction};
use panelchain::lifecycle::{
    declare_transition, record_energy, register_agreement, AgreementTerms, FeeSchedule, LiabilitySplit,
    LifecycleEvent, PanelAgreement, PanelState, Receipt, ReceiptSubject,
};
use panelchain::money::{Coins, CostRate, Energy, Tokens, Usd};
use panelchain::rccoin::{coin_settlement_plan, MintRecord};

pub const ACTORS: [&str; 4] = ["p", "m", "r", "u"];
const PURPOSES: [WithdrawalPurpose; 3] = [
    WithdrawalPurpose::TransportReward,
    WithdrawalPurpose::RecyclerPayment,
    WithdrawalPurpose::Surplus,
];

type VerifyKey = (String, Vec<u8>, Vec<u8>);

/// Registry-backed directory that remembers verification results.
pub struct CachedDir<'a> {
    reg: &'a Registry,
    seen: RefCell<HashMap<VerifyKey, bool>>,
}

impl Directory for CachedDir<'_> {
    fn public_key(&self, id: &ActorId) -> Option<PublicKey> {
        Directory::public_key(self.reg, id)
    }

    fn role(&self, id: &ActorId) -> Option<Role> {
        Directory::role(self.reg, id)
    }

    fn verify(&self, id: &ActorId, message: &[u8], signature: &SignatureBytes) -> bool {
        let k = (id.as_str().to_string(), message.to_vec(), signature.0.clone());
        if let Some(v) = self.seen.borrow().get(&k) {
            return *v;
        }
        let v = Directory::verify(self.reg, id, message, signature);
        self.seen.borrow_mut().insert(k, v);
        v
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Sigs {
    /// Valid signatures from the signers in the mask.
    Subset(u8),
    /// Everyone required signs, but signer `i` is impersonated by the next actor.
    Forged(u8),
    /// Signer `i` signed a different amount.
    WrongMessage(u8),
    /// All four actors sign except signer `i`.
    AllBut(u8),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Desc {
    Withdraw { purpose: usize, to: usize, amount: i64, sigs: Sigs, author: usize },
    Deposit { source: usize, amount: i64, author: usize },
    Mature { plan: usize, author: usize },
    Receipt { author: usize },
    Declare,
    Mint { coins: i64 },
    Redeploy,
}

pub struct Model {
    pub name: &'static str,
    pub reg: Registry,
    pub agreement: PanelAgreement,
    pub contract: ContractId,
    pub denomination: Denomination,
    pub signers: Vec<ActorId>,
    pub start: EscrowBook,
    plans: Vec<SettlementPlan>,
    declare: Option<Transaction>,
    txs: RefCell<HashMap<Desc, Rc<Transaction>>>,
    sigs: RefCell<HashMap<(usize, Vec<u8>), SignatureBytes>>,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Stats {
    pub states: u64,
    pub applied: u64,
    pub accepted: u64,
    pub withdrawals: u64,
    /// Distinct accepted sequences of length 1..=depth from the start state.
    pub sequences: u128,
}

fn actor(i: usize) -> ActorId {
    ActorId::from(ACTORS[i])
}

fn terms(transport: &str) -> AgreementTerms {
    AgreementTerms {
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
    }
}

impl Model {
    fn new(name: &'static str, denomination: Denomination, signers: &[&str]) -> (Self, PanelState) {
        let mut reg = Registry::new(11);
        for (id, role) in [("p", Role::Prosumer), ("m", Role::Manufacturer), ("r", Role::Recycler), ("u", Role::Utility)] {
            reg.register_actor(id.into(), role, role.node_class()).unwrap();
        }
        let (agreement, state, _) = register_agreement(&mut reg, terms("35"), &|_| false).unwrap();
        let signers: Vec<ActorId> = if signers.is_empty() {
            default_signers(&agreement)
        } else {
            signers.iter().map(|s| ActorId::from(*s)).collect()
        };
        let mut start = EscrowBook::new();
        let (contract, _) = start
            .deploy_escrow(&reg, &"u".into(), &agreement, denomination, signers.clone())
            .unwrap();
        let m = Model {
            name,
            reg,
            agreement,
            contract,
            denomination,
            signers,
            start,
            plans: Vec::new(),
            declare: None,
            txs: RefCell::default(),
            sigs: RefCell::default(),
        };
        (m, state)
    }

    pub fn dir(&self) -> CachedDir<'_> {
        CachedDir {
            reg: &self.reg,
            seen: RefCell::default(),
        }
    }

    fn tx(&self, author: &ActorId, payload: Payload) -> Transaction {
        Transaction::new(
            author.clone(),
            ChannelId::for_agreement(&self.agreement.agreement_id),
            payload,
            self.reg.keypair(author).unwrap(),
        )
    }

    fn meter(&mut self, state: &mut PanelState, months: u64, deposit: bool) {
        for t in 1..=months {
            let ev = record_energy(&self.agreement, state, Energy::from_kwh(1000), t).unwrap();
            if deposit {
                let amt = EscrowAmount::Tokens(Tokens::from_fiat(ev.fee_due));
                self.start
                    .convert_and_deposit(&self.reg, &"u".into(), &self.contract, amt, amt, DepositSource::Fee, t)
                    .unwrap();
            }
        }
    }

    fn transition(&mut self, state: &mut PanelState, ev: LifecycleEvent, tick: u64, commit: bool) -> Transaction {
        let (s, tx) = declare_transition(&self.agreement, state, ev, tick)
            .unwrap()
            .into_tx(&self.reg, &self.agreement.agreement_id);
        *state = s;
        if commit {
            self.start.apply(&tx, &self.reg).unwrap();
        }
        tx
    }

    fn honest_plan(&self, state: &PanelState) -> SettlementPlan {
        match self.denomination {
            Denomination::Stablecoin => SettlementPlan::stablecoin(&self.agreement, state).unwrap(),
            Denomination::RcCoin => coin_settlement_plan(&self.agreement, state, Usd::ONE, &"u".into()).unwrap(),
        }
    }

    /// A utility-authored plan paying everything to the utility.
    fn greedy_plan(&self, balance: i64) -> SettlementPlan {
        SettlementPlan {
            dues: vec![],
            payouts: vec![Payout {
                purpose: WithdrawalPurpose::RecyclerPayment,
                beneficiary: "u".into(),
                amount: EscrowAmount::new(self.denomination, balance.max(1)),
            }],
            surplus_to: "u".into(),
        }
    }

    fn sign(&self, who: usize, msg: &[u8]) -> SignatureBytes {
        self.sigs
            .borrow_mut()
            .entry((who, msg.to_vec()))
            .or_insert_with(|| self.reg.keypair(&actor(who)).unwrap().sign(msg))
            .clone()
    }

    fn signer_index(&self, i: usize) -> usize {
        ACTORS.iter().position(|a| *a == self.signers[i].as_str()).unwrap()
    }

    fn signature_set(&self, sigs: &Sigs, msg: &[u8], other: &[u8]) -> Vec<(ActorId, SignatureBytes)> {
        let n = self.signers.len();
        let mut out = Vec::new();
        match *sigs {
            Sigs::Subset(mask) => {
                for i in 0..n {
                    if mask & (1 << i) != 0 {
                        let w = self.signer_index(i);
                        out.push((actor(w), self.sign(w, msg)));
                    }
                }
            }
            Sigs::Forged(j) | Sigs::WrongMessage(j) => {
                for i in 0..n {
                    let w = self.signer_index(i);
                    let sig = match (i == j as usize, sigs) {
                        (true, Sigs::Forged(_)) => self.sign((w + 1) % ACTORS.len(), msg),
                        (true, _) => self.sign(w, other),
                        _ => self.sign(w, msg),
                    };
                    out.push((actor(w), sig));
                }
            }
            Sigs::AllBut(j) => {
                let skip = self.signer_index(j as usize);
                for w in (0..ACTORS.len()).filter(|w| *w != skip) {
                    out.push((actor(w), self.sign(w, msg)));
                }
            }
        }
        out
    }

    fn sig_variants(&self) -> Vec<Sigs> {
        let n = self.signers.len() as u8;
        let mut v: Vec<Sigs> = (0..1u8 << n).map(Sigs::Subset).collect();
        for j in 0..n {
            v.extend([Sigs::Forged(j), Sigs::WrongMessage(j), Sigs::AllBut(j)]);
        }
        v
    }

    fn build(&self, d: &Desc) -> Rc<Transaction> {
        if let Some(tx) = self.txs.borrow().get(d) {
            return Rc::clone(tx);
        }
        let amt = |a: i64| EscrowAmount::new(self.denomination, a);
        let tx = match d {
            Desc::Withdraw { purpose, to, amount, sigs, author } => {
                let (p, b, a) = (PURPOSES[*purpose], actor(*to), amt(*amount));
                let msg = withdrawal_message(&self.contract, p, &b, a);
                let other = withdrawal_message(&self.contract, p, &b, amt(amount + 1));
                let signatures = self.signature_set(sigs, msg.as_bytes(), other.as_bytes());
                self.tx(
                    &actor(*author),
                    Payload::EscrowWithdrawal(EscrowWithdrawal {
                        contract: self.contract.clone(),
                        purpose: p,
                        beneficiary: b,
                        amount: a,
                        signatures,
                    }),
                )
            }
            Desc::Deposit { source, amount, author } => {
                let source = match source {
                    0 => DepositSource::Fee,
                    1..=4 => DepositSource::Liability { party: actor(source - 1) },
                    _ => DepositSource::Reserve,
                };
                self.tx(
                    &actor(*author),
                    Payload::EscrowDeposit(EscrowDeposit {
                        contract: self.contract.clone(),
                        amount: amt(*amount),
                        source,
                        tick: 400,
                    }),
                )
            }
            Desc::Mature { plan, author } => self.tx(
                &actor(*author),
                Payload::EscrowMature(EscrowMature {
                    contract: self.contract.clone(),
                    tick: 400,
                    plan: self.plans[*plan].clone(),
                }),
            ),
            Desc::Receipt { author } => self.tx(
                &actor(*author),
                Payload::Receipt(Receipt {
                    agreement: self.agreement.agreement_id.clone(),
                    tick: 400,
                    subject: ReceiptSubject::Panels,
                }),
            ),
            Desc::Declare => self.declare.clone().expect("declaration prepared"),
            Desc::Mint { coins } => self.tx(
                &"u".into(),
                Payload::Mint(MintRecord {
                    agreement: self.agreement.agreement_id.clone(),
                    tick: 400,
                    energy: Energy::from_kwh(1),
                    batches: 1,
                    coins: Coins::from_atoms(*coins),
                    escrow_share: Coins::from_atoms(*coins),
                    reserve_share: Coins::ZERO,
                }),
            ),
            Desc::Redeploy => self.tx(
                &"u".into(),
                Payload::EscrowDeploy(EscrowDeploy {
                    contract: contract_id_for(&"a1-shadow".into()),
                    terms: self.agreement.clone(),
                    denomination: self.denomination,
                    required_signers: vec!["u".into()],
                }),
            ),
        };
        let tx = Rc::new(tx);
        self.txs.borrow_mut().insert(d.clone(), Rc::clone(&tx));
        tx
    }

    /// Every transaction the bounded adversary may submit in `book`'s state.
    pub fn candidates(&self, book: &EscrowBook) -> Vec<Rc<Transaction>> {
        let c = book.contract(&self.contract).expect("contract deployed");
        let mut amounts: BTreeSet<i64> = [1, c.balance, c.balance + 1, c.reserve_topup_needed()].into();
        amounts.extend(c.dues.values().copied());
        amounts.insert(self.agreement.fund_target().atoms() - c.fees_deposited);
        if let Some(plan) = &c.plan {
            for p in &plan.payouts {
                amounts.insert(p.amount.atoms());
                amounts.insert(p.amount.atoms() + 1);
            }
        }
        amounts.retain(|a| *a > 0);

        let mut ds = Vec::new();
        let variants = self.sig_variants();
        for purpose in 0..PURPOSES.len() {
            for to in 0..ACTORS.len() {
                for &amount in &amounts {
                    for sigs in &variants {
                        for author in 0..ACTORS.len() {
                            ds.push(Desc::Withdraw { purpose, to, amount, sigs: sigs.clone(), author });
                        }
                    }
                }
            }
        }
        for source in 0..6 {
            for &amount in &amounts {
                for author in 0..ACTORS.len() {
                    ds.push(Desc::Deposit { source, amount, author });
                }
            }
        }
        for plan in 0..self.plans.len() {
            for author in 0..ACTORS.len() {
                ds.push(Desc::Mature { plan, author });
            }
        }
        ds.extend([Desc::Receipt { author: 2 }, Desc::Receipt { author: 0 }, Desc::Redeploy]);
        if self.declare.is_some() {
            ds.push(Desc::Declare);
        }
        if self.denomination == Denomination::RcCoin {
            ds.push(Desc::Mint { coins: 5_000_000 });
        }
        ds.iter().map(|d| self.build(d)).collect()
    }

    /// Oracle: every required signer has a valid signature on the exact
    /// release message, checked straight against the signer's key.
    pub fn fully_signed(&self, w: &EscrowWithdrawal, required: &BTreeSet<ActorId>) -> bool {
        let msg = withdrawal_message(&w.contract, w.purpose, &w.beneficiary, w.amount);
        required.iter().all(|s| {
            let key = self.reg.keypair(s).unwrap().public_key();
            w.signatures
                .iter()
                .any(|(who, sig)| who == s && keys::verify(&key, msg.as_bytes(), sig))
        })
    }

    /// Check one step. `after` is `before` with `tx` applied; `accepted`
    /// says whether the contract took it.
    pub fn check(&self, before: &EscrowBook, after: &EscrowBook, tx: &Transaction, accepted: bool) -> Result<(), String> {
        if !accepted {
            return if before == after { Ok(()) } else { Err(format!("rejected tx changed state: {:?}", tx.payload.kind())) };
        }
        for b in before.contracts() {
            let a = after.contract(&b.contract_id).expect("contracts are never removed");
            if a.balance < 0 {
                return Err(format!("{} balance negative", a.contract_id));
            }
            if a.balance >= b.balance {
                continue;
            }
            let Payload::EscrowWithdrawal(w) = &tx.payload else {
                return Err(format!("balance fell on {:?}", tx.payload.kind()));
            };
            if w.contract != b.contract_id || !self.fully_signed(w, &b.required_signers) {
                return Err(format!("release without a full signature set: {w:?}"));
            }
            if b.phase != EscrowPhase::Matured || b.balance - a.balance != w.amount.atoms() {
                return Err(format!("release from {:?} moved {}", b.phase, b.balance - a.balance));
            }
            let next = b.next_release().ok_or("release with nothing scheduled")?;
            if next.purpose != w.purpose || next.beneficiary != w.beneficiary || next.amount != w.amount {
                return Err(format!("release off plan: {w:?} vs {next:?}"));
            }
            if w.purpose == WithdrawalPurpose::RecyclerPayment && !b.receipt_seen {
                return Err("recycler paid before panels were received".into());
            }
        }
        for d in [Denomination::Stablecoin, Denomination::RcCoin] {
            let sum: i64 = after.contracts().filter(|c| c.denomination == d).map(|c| c.balance).sum();
            if sum != after.total_balance(d) {
                return Err(format!("{d:?} total {} != contract sum {sum}", after.total_balance(d)));
            }
        }
        Ok(())
    }

    /// Exhaustive search over every sequence of up to `depth` candidate
    /// transactions. States are memoised by (state, depth left); the check
    /// only depends on the state and the transaction, so this covers every
    /// sequence.
    pub fn explore(&self, depth: u32) -> Result<Stats, String> {
        let dir = self.dir();
        let mut stats = Stats::default();
        let mut memo: HashMap<(String, u32), u128> = HashMap::new();
        let mut seen_states = HashSet::new();
        stats.sequences = self.dfs(&self.start, depth, &dir, &mut stats, &mut memo, &mut seen_states)?;
        stats.states = seen_states.len() as u64;
        Ok(stats)
    }

    fn dfs(
        &self,
        book: &EscrowBook,
        depth: u32,
        dir: &CachedDir<'_>,
        stats: &mut Stats,
        memo: &mut HashMap<(String, u32), u128>,
        seen: &mut HashSet<String>,
    ) -> Result<u128, String> {
        let key = format!("{book:?}");
        if let Some(n) = memo.get(&(key.clone(), depth)) {
            return Ok(*n);
        }
        seen.insert(key.clone());
        let mut sequences = 0u128;
        let mut next = book.clone();
        for tx in self.candidates(book) {
            stats.applied += 1;
            let ok = next.apply(&tx, dir).is_ok();
            self.check(book, &next, &tx, ok)?;
            if !ok {
                continue;
            }
            let next = std::mem::replace(&mut next, book.clone());
            stats.accepted += 1;
            if matches!(tx.payload, Payload::EscrowWithdrawal(_)) {
                stats.withdrawals += 1;
            }
            sequences += 1;
            if depth > 1 {
                sequences += self.dfs(&next, depth - 1, dir, stats, memo, seen)?;
            }
        }
        memo.insert((key, depth), sequences);
        Ok(sequences)
    }
}

/// Pre-states: fully funded before end of life, a post-warranty shortfall,
/// an in-warranty shortfall with a two-party signer set, and a coin escrow
/// with a two-party signer set.
pub fn models() -> Vec<Model> {
    let mut out = Vec::new();

    let (mut m, mut s) = Model::new("stablecoin-funded", Denomination::Stablecoin, &[]);
    m.meter(&mut s, 300, true);
    m.declare = Some(m.transition(&mut s, LifecycleEvent::ReachEol, 300, false));
    m.plans = vec![m.honest_plan(&s), m.greedy_plan(m.agreement.fund_target().atoms())];
    out.push(m);

    let (mut m, mut s) = Model::new("stablecoin-shortfall", Denomination::Stablecoin, &[]);
    m.meter(&mut s, 150, true);
    m.transition(&mut s, LifecycleEvent::Fail { cause: "hail".into() }, 150, true);
    let honest = m.honest_plan(&s);
    let id = m.contract.clone();
    m.start.mature(&m.reg, &"u".into(), &id, honest.clone(), 150).unwrap();
    m.plans = vec![honest];
    out.push(m);

    let (mut m, mut s) = Model::new("stablecoin-warranty-mu", Denomination::Stablecoin, &["m", "u"]);
    m.meter(&mut s, 60, true);
    m.transition(&mut s, LifecycleEvent::Fail { cause: "defect".into() }, 60, true);
    m.transition(&mut s, LifecycleEvent::Ship, 61, true);
    let honest = m.honest_plan(&s);
    let id = m.contract.clone();
    m.start.mature(&m.reg, &"u".into(), &id, honest.clone(), 61).unwrap();
    m.plans = vec![honest];
    out.push(m);

    let (mut m, mut s) = Model::new("coin-pr", Denomination::RcCoin, &["p", "r"]);
    m.meter(&mut s, 300, false);
    let mint = m.build(&Desc::Mint { coins: 1_300_000_000 });
    m.start.apply(&mint, &m.reg).unwrap();
    m.declare = Some(m.transition(&mut s, LifecycleEvent::ReachEol, 300, false));
    m.plans = vec![m.honest_plan(&s), m.greedy_plan(1_300_000_000)];
    m.txs.borrow_mut().clear();
    out.push(m);

    out
}
