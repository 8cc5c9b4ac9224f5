//! Circular-economy ledger for solar panel recycling: a permissioned chain,
//! panel lifecycle and three ways of funding end-of-life recycling.

pub mod escrow;
pub mod identity;
pub mod ledger;
pub mod lifecycle;
pub mod money;
pub mod offchain;
pub mod rccoin;
