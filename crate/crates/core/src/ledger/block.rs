use serde::{Deserialize, Serialize};

use super::codec::Encoder;
use super::hash::{hash_digest, Digest};
use super::keys::{KeyPair, SignatureBytes};
use super::merkle::compute_merkle_root;
use super::tx::{ActorId, Transaction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub parent_hash: Digest,
    pub merkle_root: Digest,
    /// Simulation tick (month index), not wall clock.
    pub timestamp: u64,
    pub height: u64,
    pub validator: ActorId,
    pub validator_signature: SignatureBytes,
}

impl BlockHeader {
    /// Hash over every header field except the validator signature, which
    /// signs this hash.
    pub fn hash(&self) -> Digest {
        let mut e = Encoder::new();
        e.digest(&self.parent_hash)
            .digest(&self.merkle_root)
            .u64(self.timestamp)
            .u64(self.height)
            .str(self.validator.as_str());
        hash_digest(&e.finish())
    }

    pub fn genesis() -> Self {
        BlockHeader {
            parent_hash: Digest::ZERO,
            merkle_root: Digest::ZERO,
            timestamp: 0,
            height: 0,
            validator: ActorId::new("genesis"),
            validator_signature: SignatureBytes::default(),
        }
    }

    pub fn is_genesis(&self) -> bool {
        *self == Self::genesis()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub body: Vec<Transaction>,
}

impl Block {
    pub fn genesis() -> Self {
        Block {
            header: BlockHeader::genesis(),
            body: Vec::new(),
        }
    }

    pub fn hash(&self) -> Digest {
        self.header.hash()
    }

    pub fn tx_ids(&self) -> Vec<Digest> {
        self.body.iter().map(|t| t.tx_id).collect()
    }

    /// Assemble and sign a block without any validity checks; see
    /// [`crate::ledger::Chain::create_block`] for the checked path.
    pub fn assemble(
        parent: &BlockHeader,
        body: Vec<Transaction>,
        validator: ActorId,
        key: &KeyPair,
        timestamp: u64,
    ) -> Self {
        let merkle_root = compute_merkle_root(&body.iter().map(|t| t.tx_id).collect::<Vec<_>>());
        let mut header = BlockHeader {
            parent_hash: parent.hash(),
            merkle_root,
            timestamp,
            height: parent.height + 1,
            validator,
            validator_signature: SignatureBytes::default(),
        };
        header.validator_signature = key.sign(header.hash().as_bytes());
        Block { header, body }
    }
}
