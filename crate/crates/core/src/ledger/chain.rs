use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::block::{Block, BlockHeader};
use super::hash::{hash_digest, Digest};
use super::keys::{self, KeyPair, SignatureBytes};
use super::merkle::compute_merkle_root;
use super::tx::{ActorId, Payload, Transaction, TxKind};
use crate::identity::{self, NodeClass, Role};

/// Why a single transaction is not valid at a given position.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TxRejection {
    #[error("tx_id does not match the transaction content")]
    IdMismatch,
    #[error("declared kind does not match the payload")]
    KindMismatch,
    #[error("signature does not verify under the author's key")]
    BadSignature,
    #[error("author {0} is not registered")]
    UnknownAuthor(ActorId),
    #[error("{role:?} may not author {kind:?} transactions")]
    Unauthorized { role: Role, kind: TxKind },
    #[error("actor {0} is already registered")]
    DuplicateRegistration(ActorId),
    #[error("registration must be self-authored with a role-consistent node class")]
    BadRegistration,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("{0} is not a full node and cannot propose blocks")]
    NotAValidator(ActorId),
    #[error("transaction {index} is invalid: {reason}")]
    InvalidTransactionInBody { index: usize, reason: TxRejection },
    #[error("transaction {0} is already committed on this branch")]
    DuplicateTransaction(Digest),
    #[error("parent hash does not reference a known block")]
    BadParentHash,
    #[error("height is not parent height + 1")]
    BadHeight,
    #[error("timestamp precedes the parent block")]
    BadTimestamp,
    #[error("merkle root does not match the body")]
    BadMerkleRoot,
    #[error("validator signature does not verify")]
    BadValidatorSignature,
    #[error("invalid body at transaction {index}: {reason}")]
    InvalidBody { index: usize, reason: TxRejection },
}

#[derive(Clone, Debug)]
struct ActorEntry {
    block: usize,
    role: Role,
    node_class: NodeClass,
    key: VerifyingKey,
}

/// Registered actor as seen from a given branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActorInfo {
    pub role: Role,
    pub node_class: NodeClass,
}

/// Block tree with fork tracking. Blocks are stored in arrival order; the
/// canonical chain is the path from genesis to [`Chain::resolve_fork`].
pub struct Chain {
    blocks: Vec<Block>,
    hashes: Vec<Digest>,
    parents: Vec<usize>,
    by_hash: HashMap<Digest, usize>,
    tips: Vec<usize>,
    best_path: Vec<usize>,
    tx_index: HashMap<Digest, Vec<usize>>,
    actors: HashMap<ActorId, Vec<ActorEntry>>,
    verified: Mutex<SignatureCache>,
}

/// Signature triples already checked, keyed by `H(message ∥ signature ∥ key)`
/// so an entry vouches for that exact triple and nothing else.
#[derive(Debug, Default)]
pub struct SignatureCache(HashSet<Digest>);

impl SignatureCache {
    fn key(vk: &VerifyingKey, message: &[u8], sig: &SignatureBytes) -> Digest {
        let mut m = message.to_vec();
        m.extend_from_slice(&sig.0);
        m.extend_from_slice(vk.as_bytes());
        hash_digest(&m)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn verify(&mut self, vk: &VerifyingKey, message: &[u8], sig: &SignatureBytes) -> bool {
        let k = Self::key(vk, message, sig);
        if self.0.contains(&k) {
            return true;
        }
        let ok = keys::verify_with(vk, message, sig);
        if ok {
            self.0.insert(k);
        }
        ok
    }
}

impl Default for Chain {
    fn default() -> Self {
        Self::new()
    }
}

impl Chain {
    /// A chain holding only the genesis block.
    pub fn new() -> Self {
        let g = Block::genesis();
        let gh = g.hash();
        Chain {
            hashes: vec![gh],
            parents: vec![0],
            by_hash: HashMap::from([(gh, 0)]),
            blocks: vec![g],
            tips: vec![0],
            best_path: vec![0],
            tx_index: HashMap::new(),
            actors: HashMap::new(),
            verified: Mutex::new(SignatureCache::default()),
        }
    }

    pub fn genesis(&self) -> &Block {
        &self.blocks[0]
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn get(&self, hash: &Digest) -> Option<&Block> {
        self.by_hash.get(hash).map(|&i| &self.blocks[i])
    }

    /// Tip hashes in the order they were received.
    pub fn tips(&self) -> Vec<Digest> {
        let mut t = self.tips.clone();
        t.sort_unstable();
        t.into_iter().map(|i| self.hashes[i]).collect()
    }

    /// Longest-chain rule: the tip of maximal height, ties broken by the
    /// earliest-received tip.
    pub fn resolve_fork(&self) -> Digest {
        self.hashes[self.best_tip()]
    }

    fn best_tip(&self) -> usize {
        *self
            .tips
            .iter()
            .max_by(|&&a, &&b| {
                self.blocks[a]
                    .header
                    .height
                    .cmp(&self.blocks[b].header.height)
                    .then(b.cmp(&a))
            })
            .expect("chain always has a tip")
    }

    pub fn head(&self) -> &Block {
        &self.blocks[*self.best_path.last().unwrap()]
    }

    pub fn height(&self) -> u64 {
        self.head().header.height
    }

    /// Canonical chain from genesis to the resolved head.
    pub fn canonical_blocks(&self) -> impl Iterator<Item = &Block> {
        self.best_path.iter().map(|&i| &self.blocks[i])
    }

    /// All transactions on the canonical chain, in commit order.
    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.canonical_blocks().flat_map(|b| b.body.iter())
    }

    /// Whether `tx_id` is committed on the canonical chain.
    pub fn contains_tx(&self, tx_id: &Digest) -> bool {
        let head = *self.best_path.last().unwrap();
        self.tx_index
            .get(tx_id)
            .map(|v| v.iter().any(|&b| self.is_ancestor_or_self(b, head)))
            .unwrap_or(false)
    }

    /// Actor as registered on the canonical chain.
    pub fn actor(&self, id: &ActorId) -> Option<ActorInfo> {
        let head = *self.best_path.last().unwrap();
        self.actor_entry(id, Some(head)).map(|e| ActorInfo {
            role: e.role,
            node_class: e.node_class,
        })
    }

    fn is_ancestor_or_self(&self, a: usize, of: usize) -> bool {
        let ha = self.blocks[a].header.height as usize;
        let hof = self.blocks[of].header.height as usize;
        if ha > hof {
            return false;
        }
        if self.best_path.get(hof) == Some(&of) {
            return self.best_path[ha] == a;
        }
        let mut cur = of;
        while self.blocks[cur].header.height as usize > ha {
            cur = self.parents[cur];
        }
        cur == a
    }

    fn actor_entry(&self, id: &ActorId, branch: Option<usize>) -> Option<&ActorEntry> {
        let branch = branch?;
        self.actors
            .get(id)?
            .iter()
            .find(|e| self.is_ancestor_or_self(e.block, branch))
    }

    fn verify_cache_key(tx: &Transaction, key: &VerifyingKey) -> Digest {
        SignatureCache::key(key, tx.tx_id.as_bytes(), &tx.signature)
    }

    /// Check a candidate body against the branch ending at `parent`.
    fn check_body(&self, parent: usize, body: &[Transaction]) -> Result<(), (usize, TxRejection)> {
        let mut local: HashMap<&ActorId, (Role, NodeClass, VerifyingKey)> = HashMap::new();
        let mut pending: Vec<(usize, VerifyingKey, Digest)> = Vec::new();
        for (i, tx) in body.iter().enumerate() {
            if tx.kind != tx.payload.kind() {
                return Err((i, TxRejection::KindMismatch));
            }
            if tx.recompute_id() != tx.tx_id {
                return Err((i, TxRejection::IdMismatch));
            }
            let (role, key) = if let Payload::Registration(reg) = &tx.payload {
                if reg.actor != tx.author || !reg.role.permits(reg.node_class) {
                    return Err((i, TxRejection::BadRegistration));
                }
                if local.contains_key(&reg.actor) || self.actor_entry(&reg.actor, Some(parent)).is_some() {
                    return Err((i, TxRejection::DuplicateRegistration(reg.actor.clone())));
                }
                let key = reg
                    .public_key
                    .to_verifying_key()
                    .ok_or((i, TxRejection::BadSignature))?;
                local.insert(&reg.actor, (reg.role, reg.node_class, key));
                (reg.role, key)
            } else if let Some(&(role, _, key)) = local.get(&tx.author) {
                (role, key)
            } else if let Some(e) = self.actor_entry(&tx.author, Some(parent)) {
                (e.role, e.key)
            } else {
                return Err((i, TxRejection::UnknownAuthor(tx.author.clone())));
            };
            if !identity::may_author(role, tx.kind) {
                return Err((i, TxRejection::Unauthorized { role, kind: tx.kind }));
            }
            let ck = Self::verify_cache_key(tx, &key);
            if !self.verified.lock().unwrap().0.contains(&ck) {
                pending.push((i, key, ck));
            }
        }
        if !pending.is_empty() {
            let items: Vec<_> = pending
                .iter()
                .map(|(i, k, _)| (*k, body[*i].tx_id.as_bytes().as_slice(), &body[*i].signature))
                .collect();
            if !keys::verify_batch(&items) {
                for (i, k, _) in &pending {
                    if !keys::verify_with(k, body[*i].tx_id.as_bytes(), &body[*i].signature) {
                        return Err((*i, TxRejection::BadSignature));
                    }
                }
            }
            let mut cache = self.verified.lock().unwrap();
            cache.0.extend(pending.into_iter().map(|(_, _, ck)| ck));
        }
        Ok(())
    }

    fn check_duplicates(&self, parent: usize, body: &[Transaction]) -> Result<(), Digest> {
        let mut seen = HashSet::with_capacity(body.len());
        for tx in body {
            if !seen.insert(tx.tx_id) {
                return Err(tx.tx_id);
            }
            if let Some(blocks) = self.tx_index.get(&tx.tx_id) {
                if blocks.iter().any(|&b| self.is_ancestor_or_self(b, parent)) {
                    return Err(tx.tx_id);
                }
            }
        }
        Ok(())
    }

    fn validator_key(&self, validator: &ActorId, parent: usize, body: &[Transaction]) -> Result<VerifyingKey, LedgerError> {
        let (node_class, key) = match self.actor_entry(validator, Some(parent)) {
            Some(e) => (e.node_class, e.key),
            None => body
                .iter()
                .find_map(|t| match &t.payload {
                    Payload::Registration(r) if &r.actor == validator => {
                        r.public_key.to_verifying_key().map(|k| (r.node_class, k))
                    }
                    _ => None,
                })
                .ok_or_else(|| LedgerError::NotAValidator(validator.clone()))?,
        };
        if node_class != NodeClass::Full {
            return Err(LedgerError::NotAValidator(validator.clone()));
        }
        Ok(key)
    }

    /// Assemble a signed block extending `parent`. Every transaction must be
    /// valid on that branch and not yet committed there.
    pub fn create_block(
        &self,
        parent: &BlockHeader,
        txs: Vec<Transaction>,
        validator: &ActorId,
        key: &KeyPair,
        timestamp: u64,
    ) -> Result<Block, LedgerError> {
        let parent_idx = *self
            .by_hash
            .get(&parent.hash())
            .ok_or(LedgerError::BadParentHash)?;
        self.validator_key(validator, parent_idx, &txs)?;
        self.check_body(parent_idx, &txs)
            .map_err(|(index, reason)| LedgerError::InvalidTransactionInBody { index, reason })?;
        self.check_duplicates(parent_idx, &txs)
            .map_err(LedgerError::DuplicateTransaction)?;
        Ok(Block::assemble(parent, txs, validator.clone(), key, timestamp))
    }

    /// Validate `block` against the tip it extends and store it. A block whose
    /// parent is not a tip opens a fork. On error the chain is unchanged.
    pub fn validate_and_append(&mut self, block: Block) -> Result<Digest, LedgerError> {
        let h = &block.header;
        let parent = *self
            .by_hash
            .get(&h.parent_hash)
            .ok_or(LedgerError::BadParentHash)?;
        let hash = block.hash();
        if self.by_hash.contains_key(&hash) {
            return Err(LedgerError::DuplicateTransaction(hash));
        }
        let ph = &self.blocks[parent].header;
        if h.height != ph.height + 1 {
            return Err(LedgerError::BadHeight);
        }
        if h.timestamp < ph.timestamp {
            return Err(LedgerError::BadTimestamp);
        }
        let recomputed: Vec<Digest> = block.body.iter().map(|t| t.recompute_id()).collect();
        if compute_merkle_root(&recomputed) != h.merkle_root {
            return Err(LedgerError::BadMerkleRoot);
        }
        let vkey = self.validator_key(&h.validator, parent, &block.body)?;
        if !keys::verify_with(&vkey, hash.as_bytes(), &h.validator_signature) {
            return Err(LedgerError::BadValidatorSignature);
        }
        self.check_body(parent, &block.body)
            .map_err(|(index, reason)| LedgerError::InvalidBody { index, reason })?;
        self.check_duplicates(parent, &block.body)
            .map_err(LedgerError::DuplicateTransaction)?;

        let idx = self.blocks.len();
        for tx in &block.body {
            self.tx_index.entry(tx.tx_id).or_default().push(idx);
            if let Payload::Registration(r) = &tx.payload {
                let key = r.public_key.to_verifying_key().expect("checked in check_body");
                self.actors.entry(r.actor.clone()).or_default().push(ActorEntry {
                    block: idx,
                    role: r.role,
                    node_class: r.node_class,
                    key,
                });
            }
        }
        self.blocks.push(block);
        self.hashes.push(hash);
        self.parents.push(parent);
        self.by_hash.insert(hash, idx);
        self.tips.retain(|&t| t != parent);
        self.tips.push(idx);
        self.refresh_best_path();
        Ok(hash)
    }

    fn refresh_best_path(&mut self) {
        let best = self.best_tip();
        if self.best_path.last() == Some(&best) {
            return;
        }
        let height = self.blocks[best].header.height as usize;
        let mut suffix = Vec::new();
        let mut cur = best;
        loop {
            let h = self.blocks[cur].header.height as usize;
            if h < self.best_path.len() && self.best_path[h] == cur {
                break;
            }
            suffix.push(cur);
            if h == 0 {
                break;
            }
            cur = self.parents[cur];
        }
        let keep = height + 1 - suffix.len();
        self.best_path.truncate(keep);
        self.best_path.extend(suffix.into_iter().rev());
    }

    /// Integrity check of the canonical chain.
    /// Signatures checked while validating blocks are not checked again.
    pub fn verify_integrity(&self) -> IntegrityReport {
        let blocks: Vec<&Block> = self.canonical_blocks().collect();
        let mut cache = self.verified.lock().unwrap();
        verify_chain_integrity_cached(&blocks, None, &mut cache)
    }
}

/// One problem found in a block during integrity verification.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum IntegrityIssue {
    /// Stored block hash differs from the hash of the stored header.
    HeaderHash,
    /// Parent hash differs from the recomputed hash of the preceding block.
    ParentLink,
    Height,
    Timestamp,
    MalformedGenesis,
    MerkleRoot,
    TxId { index: usize },
    KindMismatch { index: usize },
    TxSignature { index: usize },
    UnknownAuthor { index: usize },
    Unauthorized { index: usize },
    DuplicateTx { index: usize },
    ValidatorSignature,
    /// Proposer is unknown or a light node.
    NotAValidator,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockFinding {
    pub height: u64,
    pub issues: Vec<IntegrityIssue>,
}

/// Every block failing any check. Empty iff the chain is untampered.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub findings: Vec<BlockFinding>,
}

impl IntegrityReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn flagged_heights(&self) -> Vec<u64> {
        self.findings.iter().map(|f| f.height).collect()
    }
}

/// Recompute every transaction id, Merkle root and header hash from genesis,
/// then compare with what is stored. `stored_hashes`, when given, holds the
/// per-block hash recorded alongside each block in an export.
///
/// Links are checked against the *recomputed* parent hash, so a content
/// change in block `k` flags `k` and every descendant.
pub fn verify_chain_integrity(blocks: &[&Block], stored_hashes: Option<&[Digest]>) -> IntegrityReport {
    verify_chain_integrity_cached(blocks, stored_hashes, &mut SignatureCache::default())
}

/// [`verify_chain_integrity`] reusing signature checks from earlier passes.
pub fn verify_chain_integrity_cached(
    blocks: &[&Block],
    stored_hashes: Option<&[Digest]>,
    cache: &mut SignatureCache,
) -> IntegrityReport {
    let mut report = IntegrityReport::default();
    let mut registry: HashMap<ActorId, (Role, NodeClass, Option<VerifyingKey>)> = HashMap::new();
    let mut seen_tx: HashSet<Digest> = HashSet::new();
    let mut rebuilt_prev = Digest::ZERO;
    let mut prev_timestamp = 0u64;

    for (pos, block) in blocks.iter().enumerate() {
        let h = &block.header;
        let mut issues = Vec::new();

        if let Some(stored) = stored_hashes {
            if stored.get(pos) != Some(&h.hash()) {
                issues.push(IntegrityIssue::HeaderHash);
            }
        }
        if h.height != pos as u64 {
            issues.push(IntegrityIssue::Height);
        }
        if h.parent_hash != rebuilt_prev {
            issues.push(IntegrityIssue::ParentLink);
        }
        if h.timestamp < prev_timestamp {
            issues.push(IntegrityIssue::Timestamp);
        }

        let ids: Vec<Digest> = block.body.iter().map(|t| t.recompute_id()).collect();
        let root = compute_merkle_root(&ids);
        if root != h.merkle_root {
            issues.push(IntegrityIssue::MerkleRoot);
        }

        if pos == 0 {
            let g = BlockHeader::genesis();
            if h.timestamp != g.timestamp
                || h.validator != g.validator
                || !h.validator_signature.0.is_empty()
                || !block.body.is_empty()
            {
                issues.push(IntegrityIssue::MalformedGenesis);
            }
        }

        // body: ids, kinds, authorship, signatures
        let mut sig_items: Vec<(usize, VerifyingKey)> = Vec::new();
        for (i, tx) in block.body.iter().enumerate() {
            if ids[i] != tx.tx_id {
                issues.push(IntegrityIssue::TxId { index: i });
            }
            if tx.kind != tx.payload.kind() {
                issues.push(IntegrityIssue::KindMismatch { index: i });
            }
            if !seen_tx.insert(tx.tx_id) {
                issues.push(IntegrityIssue::DuplicateTx { index: i });
            }
            if let Payload::Registration(r) = &tx.payload {
                registry
                    .entry(r.actor.clone())
                    .or_insert((r.role, r.node_class, r.public_key.to_verifying_key()));
                if r.actor != tx.author || !r.role.permits(r.node_class) {
                    issues.push(IntegrityIssue::Unauthorized { index: i });
                }
            }
            match registry.get(&tx.author) {
                Some((role, _, key)) => {
                    if !identity::may_author(*role, tx.kind) {
                        issues.push(IntegrityIssue::Unauthorized { index: i });
                    }
                    match key {
                        Some(k) => sig_items.push((i, *k)),
                        None => issues.push(IntegrityIssue::TxSignature { index: i }),
                    }
                }
                None => issues.push(IntegrityIssue::UnknownAuthor { index: i }),
            }
        }
        sig_items.retain(|(i, k)| !cache.0.contains(&SignatureCache::key(k, ids[*i].as_bytes(), &block.body[*i].signature)));
        let batch: Vec<_> = sig_items
            .iter()
            .map(|(i, k)| (*k, ids[*i].as_bytes().as_slice(), &block.body[*i].signature))
            .collect();
        if keys::verify_batch(&batch) {
            for (i, k) in &sig_items {
                cache.0.insert(SignatureCache::key(k, ids[*i].as_bytes(), &block.body[*i].signature));
            }
        } else {
            for (i, k) in &sig_items {
                if !cache.verify(k, ids[*i].as_bytes(), &block.body[*i].signature) {
                    issues.push(IntegrityIssue::TxSignature { index: *i });
                }
            }
        }

        if pos > 0 {
            match registry.get(&h.validator) {
                Some((_, NodeClass::Full, Some(k))) => {
                    if !cache.verify(k, h.hash().as_bytes(), &h.validator_signature) {
                        issues.push(IntegrityIssue::ValidatorSignature);
                    }
                }
                _ => issues.push(IntegrityIssue::NotAValidator),
            }
        }

        let mut rebuilt = h.clone();
        rebuilt.parent_hash = rebuilt_prev;
        rebuilt.merkle_root = root;
        rebuilt_prev = rebuilt.hash();
        prev_timestamp = prev_timestamp.max(h.timestamp);

        if !issues.is_empty() {
            report.findings.push(BlockFinding {
                height: pos as u64,
                issues,
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::Registration;
    use crate::ledger::tx::ChannelId;

    fn register(id: &str, role: Role, class: NodeClass, seed: u64) -> (Transaction, KeyPair) {
        let k = KeyPair::derive(seed, id);
        let tx = Transaction::new(
            ActorId::from(id),
            ChannelId::public(),
            Payload::Registration(Registration {
                actor: ActorId::from(id),
                role,
                node_class: class,
                public_key: k.public_key(),
            }),
            &k,
        );
        (tx, k)
    }

    fn setup() -> (Chain, KeyPair, KeyPair, KeyPair) {
        let mut c = Chain::new();
        let (t1, uk) = register("utility", Role::Utility, NodeClass::Full, 1);
        let (t2, mk) = register("maker", Role::Manufacturer, NodeClass::Full, 1);
        let (t3, pk) = register("pros", Role::Prosumer, NodeClass::Light, 1);
        let g = c.genesis().header.clone();
        let b = c
            .create_block(&g, vec![t1, t2, t3], &ActorId::from("utility"), &uk, 1)
            .unwrap();
        c.validate_and_append(b).unwrap();
        (c, uk, mk, pk)
    }

    fn empty_child(c: &Chain, parent: &Digest, v: &str, k: &KeyPair, ts: u64) -> Block {
        let ph = c.get(parent).unwrap().header.clone();
        c.create_block(&ph, vec![], &ActorId::from(v), k, ts).unwrap()
    }

    #[test]
    fn empty_block_has_zero_root_and_extends_tip() {
        let (mut c, uk, _, _) = setup();
        let head = c.resolve_fork();
        let b = empty_child(&c, &head, "utility", &uk, 2);
        assert_eq!(b.header.merkle_root, Digest::ZERO);
        c.validate_and_append(b).unwrap();
        assert_eq!(c.height(), 2);
    }

    #[test]
    fn light_node_cannot_propose() {
        let (c, _, _, pk) = setup();
        let head = c.head().header.clone();
        let err = c
            .create_block(&head, vec![], &ActorId::from("pros"), &pk, 2)
            .unwrap_err();
        assert_eq!(err, LedgerError::NotAValidator(ActorId::from("pros")));
    }

    #[test]
    fn replayed_transaction_rejected() {
        let (c, uk, _, _) = setup();
        let replay = c.head().body[0].clone();
        let head = c.head().header.clone();
        let err = c
            .create_block(&head, vec![replay], &ActorId::from("utility"), &uk, 2)
            .unwrap_err();
        // the replayed registration is caught by the duplicate-actor rule
        // before the duplicate-id rule; both reject the block
        assert!(matches!(
            err,
            LedgerError::InvalidTransactionInBody { .. } | LedgerError::DuplicateTransaction(_)
        ));
    }

    #[test]
    fn mutated_payload_with_stale_root_is_bad_merkle() {
        let (mut c, uk, _, _) = setup();
        let (t, _) = register("rec", Role::Recycler, NodeClass::Full, 1);
        let head = c.head().header.clone();
        let mut b = c
            .create_block(&head, vec![t], &ActorId::from("utility"), &uk, 2)
            .unwrap();
        if let Payload::Registration(r) = &mut b.body[0].payload {
            r.role = Role::Utility;
        }
        assert_eq!(c.validate_and_append(b), Err(LedgerError::BadMerkleRoot));
        assert_eq!(c.height(), 1);
    }

    #[test]
    fn fork_recorded_and_longest_wins_ties_first_received() {
        let (mut c, uk, mk, _) = setup();
        let base = c.resolve_fork();
        let a = empty_child(&c, &base, "utility", &uk, 2);
        let a_hash = c.validate_and_append(a).unwrap();
        let b = empty_child(&c, &base, "maker", &mk, 2);
        let b_hash = c.validate_and_append(b).unwrap();
        assert_eq!(c.tips().len(), 2);
        // equal height: first received wins
        assert_eq!(c.resolve_fork(), a_hash);
        // extend the second branch: it becomes longest
        let b2 = empty_child(&c, &b_hash, "utility", &uk, 3);
        let b2_hash = c.validate_and_append(b2).unwrap();
        assert_eq!(c.resolve_fork(), b2_hash);
        assert_eq!(c.height(), 3);
        assert!(c.verify_integrity().is_clean());
    }

    #[test]
    fn bad_validator_signature_rejected() {
        let (mut c, uk, _, _) = setup();
        let head = c.resolve_fork();
        let mut b = empty_child(&c, &head, "utility", &uk, 2);
        b.header.validator_signature = keys::SignatureBytes(vec![7; 64]);
        assert_eq!(c.validate_and_append(b), Err(LedgerError::BadValidatorSignature));
    }

    #[test]
    fn unknown_parent_rejected() {
        let (mut c, uk, _, _) = setup();
        let head = c.resolve_fork();
        let mut b = empty_child(&c, &head, "utility", &uk, 2);
        b.header.parent_hash = hash_digest(b"nowhere");
        assert_eq!(c.validate_and_append(b), Err(LedgerError::BadParentHash));
    }
}
