//! Recycling coins: minting tied to generation, the reserve contract (RCSC)
//! and coin-denominated settlement.

pub mod market;
pub mod policy;
pub mod rcsc;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::escrow::{Denomination, Directory, EscrowAmount, EscrowBook, EscrowEffect, Payout, SettlementPlan, WithdrawalPurpose};
use crate::ledger::{ActorId, AgreementId, Canonical, Encoder, Payload, Transaction};
use crate::lifecycle::{settlement_split, LifecycleError, PanelAgreement, PanelState, Phase};
use crate::money::{div_ceil, Coins, Energy, Usd, MICRO};

pub use market::{MarketParams, MarketPrice};
pub use policy::{annual_policy_adjustment, Approach, Minter, PolicyUpdate, SupplyPolicy};
pub use rcsc::{BandRule, BurnRule, PolicyOutcome, RcscConfig, RcscState};

/// Wallet standing in for the open market's coin inventory.
pub fn market_pool() -> ActorId {
    ActorId::from("market")
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CoinError {
    #[error("panel is {0:?}, not active")]
    PanelNotActive(Phase),
    #[error("negative energy reading")]
    NegativeEnergy,
    #[error("price must be positive, got {0}")]
    NonpositivePrice(Usd),
    #[error("{actor} needs {needed} but holds {available}")]
    InsufficientFiat { actor: ActorId, needed: Usd, available: Usd },
    #[error("{actor} needs {needed} coins but holds {available}")]
    InsufficientCoins { actor: ActorId, needed: Coins, available: Coins },
    #[error("reserve holds {available}, {needed} needed")]
    InsufficientReserve { needed: Coins, available: Coins },
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MintRecord {
    pub agreement: AgreementId,
    pub tick: u64,
    pub energy: Energy,
    pub batches: u64,
    pub coins: Coins,
    pub escrow_share: Coins,
    pub reserve_share: Coins,
}

impl Canonical for MintRecord {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.agreement.as_str())
            .u64(self.tick)
            .i64(self.energy.atoms())
            .u64(self.batches)
            .i64(self.coins.atoms())
            .i64(self.escrow_share.atoms())
            .i64(self.reserve_share.atoms());
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurnRecord {
    pub tick: u64,
    pub coins: Coins,
    pub reserve_after: Coins,
}

impl Canonical for BurnRecord {
    fn encode(&self, e: &mut Encoder) {
        e.u64(self.tick)
            .i64(self.coins.atoms())
            .i64(self.reserve_after.atoms());
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeSide {
    /// The reserve sells coins to the counterparty.
    ReserveSells,
    /// The reserve buys coins from the counterparty.
    ReserveBuys,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub tick: u64,
    pub side: TradeSide,
    pub counterparty: ActorId,
    pub coins: Coins,
    pub price: Usd,
    pub fiat: Usd,
}

impl Canonical for TradeRecord {
    fn encode(&self, e: &mut Encoder) {
        e.u64(self.tick)
            .str(match self.side {
                TradeSide::ReserveSells => "sell",
                TradeSide::ReserveBuys => "buy",
            })
            .str(self.counterparty.as_str())
            .i64(self.coins.atoms())
            .i64(self.price.atoms())
            .i64(self.fiat.atoms());
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DonationRecord {
    pub tick: u64,
    pub donor: ActorId,
    pub coins: Coins,
}

impl Canonical for DonationRecord {
    fn encode(&self, e: &mut Encoder) {
        e.u64(self.tick).str(self.donor.as_str()).i64(self.coins.atoms());
    }
}

/// Coins needed to cover `fee` at `price`, rounded up to the micro-coin.
pub fn settle_in_coins(fee: Usd, price: Usd) -> Result<Coins, CoinError> {
    if price <= Usd::ZERO {
        return Err(CoinError::NonpositivePrice(price));
    }
    Ok(Coins::from_atoms(
        div_ceil(fee.atoms() as i128 * MICRO as i128, price.atoms() as i128) as i64,
    ))
}

/// Exact dollar value of `coins` at `price`, in micro-dollars (may exceed
/// the micro-dollar grid, hence i128).
pub fn value_micro_squared(coins: Coins, price: Usd) -> i128 {
    coins.atoms() as i128 * price.atoms() as i128
}

/// Fiat cost of buying `coins` at `price`, rounded up to the micro-dollar.
pub fn purchase_cost(coins: Coins, price: Usd) -> Usd {
    Usd::from_atoms(div_ceil(value_micro_squared(coins, price), MICRO as i128) as i64)
}

/// Settlement plan in coins at the settlement-tick price: dues and payouts
/// are the fiat obligations converted with [`settle_in_coins`]. Any coin
/// surplus returns to the reserve.
pub fn coin_settlement_plan(
    agreement: &PanelAgreement,
    state: &PanelState,
    price: Usd,
    reserve_operator: &ActorId,
) -> Result<SettlementPlan, CoinError> {
    let ob = settlement_split(agreement, state)?;
    let coins = |u: Usd| settle_in_coins(u, price).map(EscrowAmount::Coins);
    let mut dues = Vec::new();
    for (role, amount) in ob.dues() {
        dues.push((crate::offchain::party_for(agreement, state, role), coins(amount)?));
    }
    let mut payouts = Vec::new();
    if !ob.prosumer_reward.is_zero() {
        payouts.push(Payout {
            purpose: WithdrawalPurpose::TransportReward,
            beneficiary: state.holder.clone(),
            amount: coins(ob.prosumer_reward)?,
        });
    }
    payouts.push(Payout {
        purpose: WithdrawalPurpose::RecyclerPayment,
        beneficiary: agreement.recycler.clone(),
        amount: coins(ob.recycler_payout)?,
    });
    Ok(SettlementPlan {
        dues,
        payouts,
        surplus_to: reserve_operator.clone(),
    })
}

/// Coin supply bookkeeping outside escrows and the reserve.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoinLedger {
    pub total_minted: Coins,
    pub total_burned: Coins,
    wallets: BTreeMap<ActorId, Coins>,
    held: Coins,
}

impl CoinLedger {
    pub fn circulating(&self) -> Coins {
        self.total_minted - self.total_burned
    }

    pub fn wallet(&self, id: &ActorId) -> Coins {
        self.wallets.get(id).copied().unwrap_or_default()
    }

    pub fn wallets(&self) -> &BTreeMap<ActorId, Coins> {
        &self.wallets
    }

    pub fn wallet_total(&self) -> Coins {
        self.held
    }

    pub fn credit(&mut self, id: &ActorId, coins: Coins) {
        *self.wallets.entry(id.clone()).or_default() += coins;
        self.held += coins;
    }

    pub fn debit(&mut self, id: &ActorId, coins: Coins) -> Result<(), CoinError> {
        let available = self.wallet(id);
        if available < coins {
            return Err(CoinError::InsufficientCoins {
                actor: id.clone(),
                needed: coins,
                available,
            });
        }
        self.wallets.insert(id.clone(), available - coins);
        self.held -= coins;
        Ok(())
    }
}

/// One snapshot of the supply identity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub minted: Coins,
    pub burned: Coins,
    pub wallets: Coins,
    pub escrows: Coins,
    pub reserve: Coins,
}

impl Conservation {
    pub fn of(ledger: &CoinLedger, book: &EscrowBook, reserve: Coins) -> Self {
        Conservation {
            minted: ledger.total_minted,
            burned: ledger.total_burned,
            wallets: ledger.wallet_total(),
            escrows: Coins::from_atoms(book.total_balance(Denomination::RcCoin)),
            reserve,
        }
    }

    pub fn circulating(&self) -> Coins {
        self.minted - self.burned
    }

    pub fn holds(&self) -> bool {
        self.circulating() == self.wallets + self.escrows + self.reserve
            && self.reserve >= Coins::ZERO
            && self.escrows >= Coins::ZERO
    }
}

/// Rebuild the coin economy from committed transactions alone.
#[derive(Clone, Debug, Default)]
pub struct CoinReplay {
    pub ledger: CoinLedger,
    pub reserve: Coins,
    pub book: EscrowBook,
    /// Ticks (from mint/burn/trade records) where the identity failed.
    pub violations: Vec<(u64, Conservation)>,
    pub rejected: Vec<(crate::ledger::Digest, String)>,
}

impl CoinReplay {
    pub fn apply(&mut self, tx: &Transaction, dir: &dyn Directory) {
        let effect = match self.book.apply(tx, dir) {
            Ok(effect) => effect,
            Err(e) => {
                if matches!(
                    tx.payload,
                    Payload::EscrowDeploy(_) | Payload::EscrowDeposit(_) | Payload::EscrowMature(_) | Payload::EscrowWithdrawal(_)
                ) {
                    self.rejected.push((tx.tx_id, e.to_string()));
                }
                return;
            }
        };
        match (&tx.payload, effect) {
            (Payload::Mint(m), EscrowEffect::MintShare { credited }) => {
                self.ledger.total_minted += m.coins;
                self.reserve += m.reserve_share;
                if !credited {
                    self.reserve += m.escrow_share;
                }
            }
            (Payload::Burn(b), _) => {
                self.ledger.total_burned += b.coins;
                self.reserve -= b.coins;
            }
            (Payload::Trade(t), _) => match t.side {
                TradeSide::ReserveSells => {
                    self.reserve -= t.coins;
                    self.ledger.credit(&t.counterparty, t.coins);
                }
                TradeSide::ReserveBuys => {
                    self.reserve += t.coins;
                    let _ = self.ledger.debit(&t.counterparty, t.coins);
                }
            },
            (Payload::Donation(d), _) => {
                let _ = self.ledger.debit(&d.donor, d.coins);
                self.reserve += d.coins;
            }
            (_, EscrowEffect::Deposited { amount: EscrowAmount::Coins(c), source, .. }) => match source {
                crate::escrow::DepositSource::Reserve => self.reserve -= c,
                crate::escrow::DepositSource::Liability { party } => {
                    let _ = self.ledger.debit(&party, c);
                }
                crate::escrow::DepositSource::Fee => {}
            },
            (_, EscrowEffect::Released { amount: EscrowAmount::Coins(c), beneficiary, purpose, .. }) => {
                if purpose == WithdrawalPurpose::Surplus {
                    self.reserve += c;
                } else {
                    self.ledger.credit(&beneficiary, c);
                }
            }
            _ => return,
        }
        let snap = Conservation::of(&self.ledger, &self.book, self.reserve);
        if !snap.holds() {
            self.violations.push((tx_tick(tx), snap));
        }
    }

    pub fn conservation(&self) -> Conservation {
        Conservation::of(&self.ledger, &self.book, self.reserve)
    }
}

fn tx_tick(tx: &Transaction) -> u64 {
    match &tx.payload {
        Payload::Mint(m) => m.tick,
        Payload::Burn(b) => b.tick,
        Payload::Trade(t) => t.tick,
        Payload::Donation(d) => d.tick,
        Payload::EscrowDeposit(d) => d.tick,
        _ => 0,
    }
}
