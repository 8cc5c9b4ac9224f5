//! Run report: per-agreement outcomes, audits, escrow state and the coin
//! time series. Rendered as JSON, a plain table or CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use panelchain::escrow::EscrowContract;
use panelchain::ledger::{ActorId, AgreementId, Digest};
use panelchain::lifecycle::{PanelAgreement, Phase};
use panelchain::money::{Coins, Usd};
use panelchain::offchain::AccountAudit;
use panelchain::rccoin::SupplyPolicy;

use crate::scenario::Solution;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub agreement_id: AgreementId,
    pub prosumer: ActorId,
    pub holder: ActorId,
    pub manufacturer: ActorId,
    pub recycler: ActorId,
    pub total_recycling_cost: Usd,
    pub fund_target: Usd,
    pub accrued: Usd,
    pub fees_paid: Usd,
    pub liabilities: BTreeMap<ActorId, Usd>,
    pub prosumer_reward: Usd,
    /// Fiat value received by the recycler (coins valued at the settlement
    /// price).
    pub recycler_paid: Usd,
    pub recycler_paid_coins: Option<Coins>,
    pub surplus_returned: Usd,
    pub coins_minted: Coins,
    pub reserve_topup: Coins,
    pub settlement_price: Option<Usd>,
    pub left_service_tick: Option<u64>,
    pub settled_tick: Option<u64>,
    pub final_phase: Phase,
    pub settlement_basis: Option<Phase>,
    pub defaulters: BTreeSet<ActorId>,
}

impl AgreementSummary {
    pub fn new(a: &PanelAgreement) -> Self {
        AgreementSummary {
            agreement_id: a.agreement_id.clone(),
            prosumer: a.prosumer.clone(),
            holder: a.prosumer.clone(),
            manufacturer: a.manufacturer.clone(),
            recycler: a.recycler.clone(),
            total_recycling_cost: a.total_recycling_cost(),
            fund_target: a.fund_target(),
            accrued: Usd::ZERO,
            fees_paid: Usd::ZERO,
            liabilities: BTreeMap::new(),
            prosumer_reward: Usd::ZERO,
            recycler_paid: Usd::ZERO,
            recycler_paid_coins: None,
            surplus_returned: Usd::ZERO,
            coins_minted: Coins::ZERO,
            reserve_topup: Coins::ZERO,
            settlement_price: None,
            left_service_tick: None,
            settled_tick: None,
            final_phase: Phase::Active,
            settlement_basis: None,
            defaulters: BTreeSet::new(),
        }
    }

    pub fn add_liability(&mut self, party: &ActorId, amount: Usd) {
        *self.liabilities.entry(party.clone()).or_default() += amount;
    }

    pub fn liability_total(&self) -> Usd {
        self.liabilities.values().copied().sum()
    }
}

/// One block's view of the coin economy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoinPoint {
    pub tick: u64,
    pub price: Usd,
    pub minted: Coins,
    pub burned: Coins,
    pub circulating: Coins,
    pub reserve: Coins,
    pub escrows: Coins,
    pub wallets: Coins,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Compliance {
    pub landfilled: Vec<AgreementId>,
    pub defaulters: Vec<ActorId>,
    pub barred: Vec<ActorId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub name: String,
    pub solution: Solution,
    pub seed: u64,
    pub ticks: u64,
    pub blocks: u64,
    pub transactions: u64,
    pub head: Digest,
    pub integrity_clean: bool,
    pub integrity_findings: u64,
    pub agreements: Vec<AgreementSummary>,
    pub account_audits: Vec<AccountAudit>,
    pub escrows: Vec<EscrowContract>,
    pub coin_series: Vec<CoinPoint>,
    pub year_minted: Vec<Coins>,
    pub final_policy: Option<SupplyPolicy>,
    pub rcsc_skipped: Vec<(u64, String)>,
    pub conservation_failures: Vec<u64>,
    pub compliance: Compliance,
}

impl SimReport {
    pub fn conservation_ok(&self) -> bool {
        self.conservation_failures.is_empty()
    }

    pub fn summary(&self, id: &str) -> Option<&AgreementSummary> {
        self.agreements.iter().find(|a| a.agreement_id.as_str() == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario {} (solution {}, seed {})", self.name, u8::from(self.solution), self.seed);
        let _ = writeln!(
            out,
            "blocks {}  transactions {}  head {}",
            self.blocks, self.transactions, self.head
        );
        let _ = writeln!(
            out,
            "integrity {}  conservation {}",
            if self.integrity_clean { "clean" } else { "FAILED" },
            if self.conservation_ok() { "ok" } else { "FAILED" }
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<16} {:<20} {:>14} {:>14} {:>14} {:>14} {:>8}",
            "agreement", "phase", "fees", "liabilities", "reward", "recycler", "settled"
        );
        for a in &self.agreements {
            let _ = writeln!(
                out,
                "{:<16} {:<20} {:>14} {:>14} {:>14} {:>14} {:>8}",
                a.agreement_id.as_str(),
                a.final_phase.tag(),
                a.fees_paid.to_string(),
                a.liability_total().to_string(),
                a.prosumer_reward.to_string(),
                a.recycler_paid.to_string(),
                a.settled_tick.map_or("-".to_string(), |t| t.to_string()),
            );
        }
        for audit in &self.account_audits {
            let _ = writeln!(out);
            out.push_str(&audit.to_table());
        }
        if !self.year_minted.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "{:<6} {:>18}", "year", "minted");
            for (y, m) in self.year_minted.iter().enumerate() {
                let _ = writeln!(out, "{:<6} {:>18}", y + 1, m.to_string());
            }
        }
        if let Some(last) = self.coin_series.last() {
            let _ = writeln!(
                out,
                "final price {}  circulating {}  reserve {}  burned {}",
                last.price, last.circulating, last.reserve, last.burned
            );
        }
        let c = &self.compliance;
        if !(c.landfilled.is_empty() && c.defaulters.is_empty() && c.barred.is_empty()) {
            let _ = writeln!(out);
            let _ = writeln!(out, "landfilled: {}", join(&c.landfilled));
            let _ = writeln!(out, "defaulters: {}", join(&c.defaulters));
            let _ = writeln!(out, "barred:     {}", join(&c.barred));
        }
        out
    }

    /// Per-agreement rows as CSV.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "agreement",
            "phase",
            "holder",
            "fees_paid",
            "liabilities",
            "prosumer_reward",
            "recycler_paid",
            "surplus_returned",
            "coins_minted",
            "left_service_tick",
            "settled_tick",
        ])?;
        let opt = |t: Option<u64>| t.map(|t| t.to_string()).unwrap_or_default();
        for a in &self.agreements {
            w.write_record([
                a.agreement_id.as_str().to_string(),
                a.final_phase.tag().to_string(),
                a.holder.as_str().to_string(),
                a.fees_paid.to_string(),
                a.liability_total().to_string(),
                a.prosumer_reward.to_string(),
                a.recycler_paid.to_string(),
                a.surplus_returned.to_string(),
                a.coins_minted.to_string(),
                opt(a.left_service_tick),
                opt(a.settled_tick),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    if items.is_empty() {
        return "-".into();
    }
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
}
