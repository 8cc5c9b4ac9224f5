//! Seeded coin price process.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::money::{Coins, Usd, MICRO};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub initial_price: Usd,
    /// Log drift per tick.
    pub drift: f64,
    /// Log volatility per tick.
    pub volatility: f64,
    /// Dollars the price moves per whole coin of net reserve selling.
    pub impact: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        MarketParams {
            initial_price: Usd::from_whole(1),
            drift: 0.0,
            volatility: 0.02,
            impact: 0.000_001,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MarketPrice {
    pub price: Usd,
    pub params: MarketParams,
    rng: ChaCha8Rng,
}

impl MarketPrice {
    pub fn new(params: MarketParams, seed: u64) -> Self {
        MarketPrice {
            price: params.initial_price,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5243_2d63_6f69_6e00),
            params,
        }
    }

    /// Next price given one standard-normal draw `z` and the reserve's net
    /// coins sold this tick (negative for net buying).
    pub fn next_price(&self, z: f64, net_sell: Coins) -> Usd {
        let p = &self.params;
        let price = self.price.atoms() as f64 / MICRO as f64;
        let walked = price * (p.drift - p.volatility * p.volatility / 2.0 + p.volatility * z).exp();
        let net = net_sell.atoms() as f64 / MICRO as f64;
        let next = walked - p.impact * net;
        Usd::from_atoms(((next * MICRO as f64).round() as i64).max(1))
    }

    /// Advance one tick. The draw happens even with zero volatility so that
    /// paths stay aligned across parameter changes.
    pub fn step(&mut self, net_sell: Coins) -> Usd {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.price = self.next_price(z, net_sell);
        self.price
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(vol: f64, impact: f64) -> MarketParams {
        MarketParams {
            initial_price: Usd::from_whole(2),
            drift: 0.0,
            volatility: vol,
            impact,
        }
    }

    #[test]
    fn flat_without_noise_or_trades() {
        let mut m = MarketPrice::new(params(0.0, 0.01), 1);
        for _ in 0..100 {
            assert_eq!(m.step(Coins::ZERO), Usd::from_whole(2));
        }
    }

    #[test]
    fn same_seed_same_path() {
        let mut a = MarketPrice::new(params(0.05, 0.0), 9);
        let mut b = MarketPrice::new(params(0.05, 0.0), 9);
        let pa: Vec<_> = (0..50).map(|_| a.step(Coins::ZERO)).collect();
        let pb: Vec<_> = (0..50).map(|_| b.step(Coins::ZERO)).collect();
        assert_eq!(pa, pb);
        let mut c = MarketPrice::new(params(0.05, 0.0), 10);
        let pc: Vec<_> = (0..50).map(|_| c.step(Coins::ZERO)).collect();
        assert_ne!(pa, pc);
    }

    #[test]
    fn selling_pushes_price_down() {
        let mut with = MarketPrice::new(params(0.03, 0.001), 4);
        let mut without = with.clone();
        for _ in 0..10 {
            let a = with.step(Coins::from_whole(100));
            let b = without.step(Coins::ZERO);
            assert!(a < b);
            with.price = b;
        }
    }

    #[test]
    fn price_stays_positive() {
        let mut m = MarketPrice::new(params(0.0, 1.0), 4);
        assert_eq!(m.step(Coins::from_whole(1_000_000)), Usd::from_atoms(1));
    }
}
