//! Supply policy and energy-proportional minting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CoinError, MintRecord};
use crate::ledger::{AgreementId, Canonical, Encoder};
use crate::lifecycle::Phase;
use crate::money::{Coins, Energy, Ppm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Approach {
    /// Shrink the award per batch.
    A,
    /// Grow the energy needed per batch.
    B,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupplyPolicy {
    /// W: coins awarded per batch.
    pub coins_per_batch: Coins,
    /// E: energy per batch.
    pub units_per_batch: Energy,
    /// γ: escrow share of each mint.
    pub gamma: Ppm,
    pub year_index: u32,
    pub approach: Approach,
}

impl Default for SupplyPolicy {
    fn default() -> Self {
        SupplyPolicy {
            coins_per_batch: Coins::from_whole(100),
            units_per_batch: Energy::from_kwh(1000),
            gamma: Ppm::parse("0.8").expect("literal"),
            year_index: 0,
            approach: Approach::A,
        }
    }
}

impl SupplyPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.coins_per_batch <= Coins::ZERO {
            return Err("coins per batch must be positive".into());
        }
        if self.units_per_batch <= Energy::ZERO {
            return Err("energy per batch must be positive".into());
        }
        if self.gamma <= Ppm::ZERO || self.gamma > Ppm::ONE {
            return Err("gamma must lie in (0, 1]".into());
        }
        Ok(())
    }
}

/// Yearly adjustment for fleet growth `g`: approach A divides W by g,
/// approach B multiplies E by g. Half-even at the micro-coin / Wh.
pub fn annual_policy_adjustment(policy: &SupplyPolicy, growth: Ppm) -> SupplyPolicy {
    assert!(growth > Ppm::ZERO, "growth factor must be positive");
    let mut next = policy.clone();
    match policy.approach {
        Approach::A => {
            next.coins_per_batch = Coins::from_atoms(growth.divide_half_even(policy.coins_per_batch.atoms()));
        }
        Approach::B => {
            next.units_per_batch = Energy::from_atoms(growth.scale_half_even(policy.units_per_batch.atoms()));
        }
    }
    next.year_index += 1;
    next
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyUpdate {
    pub tick: u64,
    pub year_index: u32,
    pub growth: Ppm,
    pub coins_per_batch: Coins,
    pub units_per_batch: Energy,
    pub approach: Approach,
}

impl Canonical for PolicyUpdate {
    fn encode(&self, e: &mut Encoder) {
        e.u64(self.tick)
            .u64(self.year_index as u64)
            .i64(self.growth.atoms())
            .i64(self.coins_per_batch.atoms())
            .i64(self.units_per_batch.atoms())
            .str(match self.approach {
                Approach::A => "A",
                Approach::B => "B",
            });
    }
}

/// Per-agreement sub-batch energy carried between mints.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Minter {
    remainders: BTreeMap<AgreementId, Energy>,
}

impl Minter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn remainder(&self, agreement: &AgreementId) -> Energy {
        self.remainders.get(agreement).copied().unwrap_or_default()
    }

    /// Mint `floor((remainder + energy) / E)` batches of W coins, split γ to
    /// the escrow (half-even) and the rest to the reserve.
    pub fn mint_on_generation(
        &mut self,
        agreement: &AgreementId,
        phase: Phase,
        energy: Energy,
        policy: &SupplyPolicy,
        tick: u64,
    ) -> Result<MintRecord, CoinError> {
        if phase != Phase::Active {
            return Err(CoinError::PanelNotActive(phase));
        }
        if energy.is_negative() {
            return Err(CoinError::NegativeEnergy);
        }
        let pool = self.remainder(agreement) + energy;
        let e = policy.units_per_batch.atoms();
        let batches = pool.atoms() / e;
        let remainder = Energy::from_atoms(pool.atoms() - batches * e);
        self.remainders.insert(agreement.clone(), remainder);
        let coins = Coins::from_atoms(batches * policy.coins_per_batch.atoms());
        let escrow_share = Coins::from_atoms(policy.gamma.scale_half_even(coins.atoms()));
        Ok(MintRecord {
            agreement: agreement.clone(),
            tick,
            energy,
            batches: batches as u64,
            coins,
            escrow_share,
            reserve_share: coins - escrow_share,
        })
    }
}
