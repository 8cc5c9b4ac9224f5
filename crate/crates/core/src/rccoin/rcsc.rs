//! Reserve currency smart contract: threshold burns, band trading against
//! the market pool, donations and escrow top-ups.

use serde::{Deserialize, Serialize};

use super::{market_pool, purchase_cost, BurnRecord, CoinError, CoinLedger, DonationRecord, TradeRecord, TradeSide};
use crate::ledger::ActorId;
use crate::money::{div_floor, Coins, Ppm, Usd, MICRO};

/// Burn a fraction of the reserve whenever circulating supply exceeds the
/// threshold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurnRule {
    pub threshold: Coins,
    pub fraction: Ppm,
}

/// Sell reserve coins above `upper`, buy back from the market below `lower`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandRule {
    pub lower: Usd,
    pub upper: Usd,
    /// Fraction of the reserve sold per tick above the band.
    pub sell_fraction: Ppm,
    /// Coins bought per tick below the band.
    pub buy_coins: Coins,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RcscConfig {
    #[serde(default)]
    pub burn: Option<BurnRule>,
    #[serde(default)]
    pub band: Option<BandRule>,
    #[serde(default)]
    pub fiat_budget: Usd,
    /// Ticks an obligated party may stay in default before the reserve tops
    /// up the escrow.
    #[serde(default = "default_grace")]
    pub topup_grace_ticks: u64,
}

fn default_grace() -> u64 {
    3
}

impl Default for RcscConfig {
    fn default() -> Self {
        RcscConfig {
            burn: None,
            band: None,
            fiat_budget: Usd::ZERO,
            topup_grace_ticks: default_grace(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RcscState {
    pub reserve: Coins,
    pub cumulative_burned: Coins,
    /// Fiat the contract can spend on buy-backs; sales add to it.
    pub fiat: Usd,
    pub config: RcscConfig,
    /// Rules skipped and why, as (tick, reason).
    pub skipped: Vec<(u64, String)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolicyOutcome {
    pub burns: Vec<BurnRecord>,
    pub trades: Vec<TradeRecord>,
    /// Coins sold minus coins bought this tick.
    pub net_sell: Coins,
}

fn fraction_of(coins: Coins, f: Ppm) -> Coins {
    Coins::from_atoms(div_floor(coins.atoms() as i128 * f.atoms() as i128, MICRO as i128) as i64)
}

impl RcscState {
    pub fn new(config: RcscConfig) -> Self {
        RcscState {
            reserve: Coins::ZERO,
            cumulative_burned: Coins::ZERO,
            fiat: config.fiat_budget,
            config,
            skipped: Vec::new(),
        }
    }

    /// Reserve share of a mint.
    pub fn receive(&mut self, coins: Coins) {
        self.reserve += coins;
    }

    /// Take coins out of the reserve for an escrow top-up.
    pub fn withdraw(&mut self, coins: Coins) -> Result<(), CoinError> {
        if self.reserve < coins {
            return Err(CoinError::InsufficientReserve {
                needed: coins,
                available: self.reserve,
            });
        }
        self.reserve -= coins;
        Ok(())
    }

    pub fn burn(&mut self, ledger: &mut CoinLedger, coins: Coins, tick: u64) -> Result<BurnRecord, CoinError> {
        self.withdraw(coins)?;
        self.cumulative_burned += coins;
        ledger.total_burned += coins;
        Ok(BurnRecord {
            tick,
            coins,
            reserve_after: self.reserve,
        })
    }

    pub fn donate(&mut self, ledger: &mut CoinLedger, donor: &ActorId, coins: Coins, tick: u64) -> Result<DonationRecord, CoinError> {
        ledger.debit(donor, coins)?;
        self.reserve += coins;
        Ok(DonationRecord {
            tick,
            donor: donor.clone(),
            coins,
        })
    }

    /// Sell reserve coins to `buyer` at `price`; the buyer's fiat is handled
    /// by the caller, the proceeds go to the contract's budget.
    pub fn sell(&mut self, ledger: &mut CoinLedger, buyer: &ActorId, coins: Coins, price: Usd, tick: u64) -> Result<TradeRecord, CoinError> {
        self.withdraw(coins)?;
        ledger.credit(buyer, coins);
        let fiat = purchase_cost(coins, price);
        self.fiat += fiat;
        Ok(TradeRecord {
            tick,
            side: TradeSide::ReserveSells,
            counterparty: buyer.clone(),
            coins,
            price,
            fiat,
        })
    }

    pub fn buy(&mut self, ledger: &mut CoinLedger, seller: &ActorId, coins: Coins, price: Usd, tick: u64) -> Result<TradeRecord, CoinError> {
        let fiat = purchase_cost(coins, price);
        if fiat > self.fiat {
            return Err(CoinError::InsufficientFiat {
                actor: ActorId::from("rcsc"),
                needed: fiat,
                available: self.fiat,
            });
        }
        ledger.debit(seller, coins)?;
        self.fiat -= fiat;
        self.reserve += coins;
        Ok(TradeRecord {
            tick,
            side: TradeSide::ReserveBuys,
            counterparty: seller.clone(),
            coins,
            price,
            fiat,
        })
    }

    /// Apply the configured burn and band rules for one tick. Rules that
    /// cannot run are skipped and logged.
    pub fn apply_policy(&mut self, ledger: &mut CoinLedger, price: Usd, tick: u64) -> PolicyOutcome {
        let mut out = PolicyOutcome::default();
        if let Some(rule) = self.config.burn.clone() {
            if ledger.circulating() > rule.threshold {
                let amount = fraction_of(self.reserve, rule.fraction);
                if amount.is_zero() {
                    self.skipped.push((tick, "burn: insufficient reserve".into()));
                } else {
                    out.burns.push(self.burn(ledger, amount, tick).expect("amount within reserve"));
                }
            }
        }
        if let Some(band) = self.config.band.clone() {
            let pool = market_pool();
            if price > band.upper {
                let amount = fraction_of(self.reserve, band.sell_fraction);
                if amount.is_zero() {
                    self.skipped.push((tick, "sell: insufficient reserve".into()));
                } else {
                    let t = self.sell(ledger, &pool, amount, price, tick).expect("amount within reserve");
                    out.net_sell += t.coins;
                    out.trades.push(t);
                }
            } else if price < band.lower {
                let affordable = Coins::from_atoms(
                    div_floor(self.fiat.atoms() as i128 * MICRO as i128, price.atoms() as i128) as i64,
                );
                let amount = band.buy_coins.min(ledger.wallet(&pool)).min(affordable);
                if self.fiat.is_zero() || affordable.is_zero() {
                    self.skipped.push((tick, "buy: no fiat budget".into()));
                } else if amount.is_zero() {
                    self.skipped.push((tick, "buy: market pool empty".into()));
                } else {
                    // rounding up the cost can push it past the budget by a micro-dollar
                    let amount = if purchase_cost(amount, price) > self.fiat {
                        amount - Coins::from_atoms(1)
                    } else {
                        amount
                    };
                    let t = self.buy(ledger, &pool, amount, price, tick).expect("bounded by pool and budget");
                    out.net_sell -= t.coins;
                    out.trades.push(t);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(config: RcscConfig, reserve: i64) -> (RcscState, CoinLedger) {
        let mut s = RcscState::new(config);
        let l = CoinLedger {
            total_minted: Coins::from_whole(reserve),
            ..Default::default()
        };
        s.receive(Coins::from_whole(reserve));
        (s, l)
    }

    #[test]
    fn threshold_burn() {
        let cfg = RcscConfig {
            burn: Some(BurnRule {
                threshold: Coins::from_whole(500),
                fraction: Ppm::parse("0.1").unwrap(),
            }),
            ..Default::default()
        };
        let (mut s, mut l) = state(cfg, 1000);
        let out = s.apply_policy(&mut l, Usd::ONE, 1);
        assert_eq!(out.burns[0].coins, Coins::from_whole(100));
        assert_eq!(s.cumulative_burned, Coins::from_whole(100));
        assert_eq!(s.reserve, Coins::from_whole(900));
        assert_eq!(l.circulating(), Coins::from_whole(900));
    }

    #[test]
    fn buy_without_budget_is_skipped() {
        let cfg = RcscConfig {
            band: Some(BandRule {
                lower: Usd::from_whole(1),
                upper: Usd::from_whole(3),
                sell_fraction: Ppm::parse("0.1").unwrap(),
                buy_coins: Coins::from_whole(10),
            }),
            ..Default::default()
        };
        let (mut s, mut l) = state(cfg, 100);
        let out = s.apply_policy(&mut l, Usd::parse("0.5").unwrap(), 7);
        assert!(out.trades.is_empty());
        assert_eq!(s.skipped, vec![(7, "buy: no fiat budget".to_string())]);
    }

    #[test]
    fn band_sell_then_buy_back() {
        let cfg = RcscConfig {
            band: Some(BandRule {
                lower: Usd::from_whole(1),
                upper: Usd::from_whole(3),
                sell_fraction: Ppm::parse("0.1").unwrap(),
                buy_coins: Coins::from_whole(5),
            }),
            ..Default::default()
        };
        let (mut s, mut l) = state(cfg, 100);
        let out = s.apply_policy(&mut l, Usd::from_whole(4), 1);
        assert_eq!(out.net_sell, Coins::from_whole(10));
        assert_eq!(s.fiat, Usd::from_whole(40));
        let out = s.apply_policy(&mut l, Usd::parse("0.5").unwrap(), 2);
        assert_eq!(out.net_sell, -Coins::from_whole(5));
        assert_eq!(s.reserve, Coins::from_whole(95));
        assert_eq!(l.wallet(&market_pool()), Coins::from_whole(5));
        assert_eq!(s.fiat, Usd::parse("37.5").unwrap());
    }

    #[test]
    fn donation_keeps_supply() {
        let (mut s, mut l) = state(RcscConfig::default(), 0);
        l.total_minted = Coins::from_whole(50);
        l.credit(&"d".into(), Coins::from_whole(50));
        s.donate(&mut l, &"d".into(), Coins::from_whole(50), 1).unwrap();
        assert_eq!(s.reserve, Coins::from_whole(50));
        assert_eq!(l.circulating(), Coins::from_whole(50));
        assert!(s.donate(&mut l, &"d".into(), Coins::from_whole(1), 2).is_err());
    }
}
