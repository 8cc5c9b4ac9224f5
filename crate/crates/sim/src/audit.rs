//! Independent audit of an exported chain. Uses nothing but the committed
//! blocks: integrity, recycling-account reconciliation, escrow replay and the
//! coin supply identity.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use panelchain::escrow::{ActorDirectory, Denomination};
use panelchain::ledger::{ChainExport, Digest, IntegrityReport, Payload, Transaction};
use panelchain::offchain::{audit_account, AccountAudit};
use panelchain::rccoin::{CoinReplay, Conservation};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub blocks: u64,
    pub transactions: u64,
    pub integrity: IntegrityReport,
    pub accounts: Vec<AccountAudit>,
    /// Escrow transactions the contract rules refuse on replay.
    pub escrow_rejections: Vec<(Digest, String)>,
    pub coin_violations: Vec<(u64, Conservation)>,
    pub coins: Option<Conservation>,
    pub stablecoin_in_escrow: i64,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.integrity.is_clean()
            && self.accounts.iter().all(AccountAudit::is_clean)
            && self.escrow_rejections.is_empty()
            && self.coin_violations.is_empty()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "blocks {}  transactions {}", self.blocks, self.transactions);
        if self.integrity.is_clean() {
            let _ = writeln!(out, "integrity: clean");
        } else {
            let _ = writeln!(out, "integrity: {} block(s) flagged", self.integrity.findings.len());
            for f in &self.integrity.findings {
                let _ = writeln!(out, "  height {:>6}: {:?}", f.height, f.issues);
            }
        }
        for a in &self.accounts {
            out.push_str(&a.to_table());
        }
        for (tx, why) in &self.escrow_rejections {
            let _ = writeln!(out, "escrow rejection {tx}: {why}");
        }
        for (tick, c) in &self.coin_violations {
            let _ = writeln!(
                out,
                "supply identity broken at tick {tick}: minted {} burned {} wallets {} escrows {} reserve {}",
                c.minted, c.burned, c.wallets, c.escrows, c.reserve
            );
        }
        if let Some(c) = &self.coins {
            let _ = writeln!(
                out,
                "coins: minted {} burned {} wallets {} escrows {} reserve {}",
                c.minted, c.burned, c.wallets, c.escrows, c.reserve
            );
        }
        let _ = writeln!(out, "verdict: {}", if self.is_clean() { "clean" } else { "FINDINGS" });
        out
    }
}

/// Audit every transaction of `export` in chain order.
pub fn audit_export(export: &ChainExport) -> AuditReport {
    let integrity = export.verify_integrity();
    let txs: Vec<&Transaction> = export.transactions().collect();

    let mut account_numbers = BTreeSet::new();
    let mut has_coins = false;
    for tx in &txs {
        match &tx.payload {
            Payload::BalancePosting(p) => {
                account_numbers.insert(p.account_number.clone());
            }
            Payload::Payment(p) => {
                if let Some(a) = &p.account {
                    account_numbers.insert(a.clone());
                }
            }
            Payload::Mint(_) => has_coins = true,
            _ => {}
        }
    }
    let accounts = account_numbers
        .iter()
        .map(|n| audit_account(txs.iter().copied(), n))
        .collect();

    let mut dir = ActorDirectory::default();
    let mut replay = CoinReplay::default();
    for tx in &txs {
        dir.observe(tx);
        replay.apply(tx, &dir);
    }

    AuditReport {
        blocks: export.blocks.len() as u64,
        transactions: txs.len() as u64,
        integrity,
        accounts,
        coins: has_coins.then(|| replay.conservation()),
        stablecoin_in_escrow: replay.book.total_balance(Denomination::Stablecoin),
        escrow_rejections: replay.rejected,
        coin_violations: replay.violations,
    }
}
