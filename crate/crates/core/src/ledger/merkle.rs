use super::hash::{hash_pair, Digest};

/// Binary Merkle root over transaction ids. An odd node at any level is
/// paired with itself; an empty list yields the all-zero digest.
pub fn compute_merkle_root(tx_ids: &[Digest]) -> Digest {
    if tx_ids.is_empty() {
        return Digest::ZERO;
    }
    let mut level: Vec<Digest> = tx_ids.to_vec();
    loop {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [l, r] => hash_pair(l, r),
                [l] => hash_pair(l, l),
                _ => unreachable!(),
            })
            .collect();
        if level.len() == 1 {
            return level[0];
        }
    }
}
