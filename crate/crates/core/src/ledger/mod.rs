//! Append-only permissioned ledger.

pub mod block;
pub mod chain;
pub mod codec;
pub mod export;
pub mod hash;
pub mod keys;
pub mod merkle;
pub mod tx;

pub use block::{Block, BlockHeader};
pub use chain::{
    verify_chain_integrity, verify_chain_integrity_cached, BlockFinding, Chain, IntegrityIssue,
    IntegrityReport, LedgerError, SignatureCache, TxRejection,
};
pub use codec::{Canonical, Encoder};
pub use export::{export_digest, write_chain_export, ChainExport, ExportError};
pub use hash::{hash_digest, Digest};
pub use keys::{KeyPair, PublicKey, SignatureBytes};
pub use merkle::compute_merkle_root;
pub use tx::{ActorId, AgreementId, ChannelId, ContractId, Payload, Transaction, TxKind};
