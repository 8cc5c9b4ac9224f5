//! JSON chain export: the canonical chain in height order, digests as
//! lowercase hex.

use std::io::Write;
use std::path::Path;

use sha2::{Digest as _, Sha256};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::block::{Block, BlockHeader};
use super::chain::{verify_chain_integrity, Chain, IntegrityReport};
use super::hash::Digest;
use super::tx::Transaction;

pub const CHAIN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("chain export is not valid JSON for schema v{CHAIN_SCHEMA_VERSION}: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported chain schema version {0}")]
    Version(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportedBlock {
    pub hash: Digest,
    pub header: BlockHeader,
    pub body: Vec<Transaction>,
}

/// Borrowed view serialized exactly like [`ExportedBlock`].
#[derive(Serialize)]
struct ExportedBlockRef<'a> {
    hash: Digest,
    header: &'a BlockHeader,
    body: &'a [Transaction],
}

#[derive(Serialize)]
struct ChainExportRef<'a> {
    schema_version: u32,
    blocks: Vec<ExportedBlockRef<'a>>,
}

impl<'a> ChainExportRef<'a> {
    fn of(chain: &'a Chain) -> Self {
        ChainExportRef {
            schema_version: CHAIN_SCHEMA_VERSION,
            blocks: chain
                .canonical_blocks()
                .map(|b| ExportedBlockRef {
                    hash: b.hash(),
                    header: &b.header,
                    body: &b.body,
                })
                .collect(),
        }
    }
}

/// Stream the export of `chain` without cloning it. Same bytes as
/// `ChainExport::from_chain(chain).to_json()`.
pub fn write_chain_export(chain: &Chain, w: impl Write) -> Result<(), ExportError> {
    let mut w = std::io::BufWriter::new(w);
    serde_json::to_writer_pretty(&mut w, &ChainExportRef::of(chain))?;
    w.flush()?;
    Ok(())
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// SHA-256 of the export bytes, for cheap determinism checks.
pub fn export_digest(chain: &Chain) -> Digest {
    let mut h = HashWriter(Sha256::new());
    write_chain_export(chain, &mut h).expect("hashing cannot fail");
    Digest(h.0.finalize().into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainExport {
    pub schema_version: u32,
    pub blocks: Vec<ExportedBlock>,
}

impl ChainExport {
    pub fn from_chain(chain: &Chain) -> Self {
        ChainExport {
            schema_version: CHAIN_SCHEMA_VERSION,
            blocks: chain
                .canonical_blocks()
                .map(|b| ExportedBlock {
                    hash: b.hash(),
                    header: b.header.clone(),
                    body: b.body.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chain export serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ExportError> {
        let e: ChainExport = serde_json::from_str(s)?;
        if e.schema_version != CHAIN_SCHEMA_VERSION {
            return Err(ExportError::Version(e.schema_version));
        }
        Ok(e)
    }

    pub fn read(path: &Path) -> Result<Self, ExportError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), ExportError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Blocks without the stored hashes, for replay.
    pub fn blocks(&self) -> Vec<Block> {
        self.blocks
            .iter()
            .map(|b| Block {
                header: b.header.clone(),
                body: b.body.clone(),
            })
            .collect()
    }

    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.blocks.iter().flat_map(|b| b.body.iter())
    }

    /// Integrity check including the stored per-block hashes.
    pub fn verify_integrity(&self) -> IntegrityReport {
        let blocks = self.blocks();
        let refs: Vec<&Block> = blocks.iter().collect();
        let hashes: Vec<Digest> = self.blocks.iter().map(|b| b.hash).collect();
        verify_chain_integrity(&refs, Some(&hashes))
    }

    /// Rebuild a validated [`Chain`] by replaying every block through
    /// `validate_and_append`.
    pub fn replay(&self) -> Result<Chain, super::chain::LedgerError> {
        let mut chain = Chain::new();
        for b in self.blocks().into_iter().skip(1) {
            chain.validate_and_append(b)?;
        }
        Ok(chain)
    }
}
