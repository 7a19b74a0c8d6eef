//! The append-only ledger DAG.
//!
//! Ledgers form a tree rooted at the genesis ledger: each ledger is produced
//! by applying a set of transactions to a parent and carries a sequence
//! number one greater than its parent's. Hashes are a pure function of
//! (parent, sequence, canonical transaction list), so independently built
//! ledgers with equal content collide on purpose and everything else does
//! not. The hash order doubles as the `phi` tie-break used by the preferred
//! branch walk.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Sequence number of a ledger. Genesis has sequence 1.
pub type Seq = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("unknown ledger {0}")]
    UnknownLedger(LedgerHash),
    #[error("common ancestor of an empty ledger set")]
    EmptyLedgerSet,
    #[error("hash collision between distinct ledgers (digest {0})")]
    HashCollision(LedgerHash),
    #[error("no ancestor of {0} at sequence {1}")]
    NoAncestorAtSeq(LedgerHash, Seq),
}

/// Content hash of a ledger. Ordered bytewise (unsigned lexicographic),
/// which defines the total order behind `phi`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LedgerHash([u8; 32]);

impl LedgerHash {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        LedgerHash(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for LedgerHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for LedgerHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LedgerHash({})", self.to_hex())
    }
}

/// Opaque transaction identifier. Only identity matters to consensus;
/// transactions carry no payload. The total order is byte-lexicographic
/// on the identifier, so it is stable across runs and platforms.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId(String);

impl TxId {
    pub fn new(id: impl Into<String>) -> Self {
        TxId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxId({})", self.0)
    }
}

/// One node of the ledger DAG.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ledger {
    hash: LedgerHash,
    parent: Option<LedgerHash>,
    seq: Seq,
    txs: BTreeSet<TxId>,
}

impl Ledger {
    pub fn hash(&self) -> LedgerHash {
        self.hash
    }

    pub fn parent(&self) -> Option<LedgerHash> {
        self.parent
    }

    pub fn seq(&self) -> Seq {
        self.seq
    }

    pub fn txs(&self) -> &BTreeSet<TxId> {
        &self.txs
    }
}

const HASH_DOMAIN: &[u8] = b"lcp-ledger-v1";

fn compute_hash(parent: Option<&LedgerHash>, seq: Seq, txs: &BTreeSet<TxId>) -> LedgerHash {
    let mut h = Sha256::new();
    h.update(HASH_DOMAIN);
    match parent {
        None => h.update([0u8]),
        Some(p) => {
            h.update([1u8]);
            h.update(p.0);
        }
    }
    h.update(seq.to_be_bytes());
    h.update((txs.len() as u32).to_be_bytes());
    for tx in txs {
        h.update((tx.as_str().len() as u32).to_be_bytes());
        h.update(tx.as_str().as_bytes());
    }
    LedgerHash(h.finalize().into())
}

/// The unique genesis ledger: sequence 1, no parent, empty transaction set.
/// Identical across runs and processes.
pub fn genesis_ledger() -> Ledger {
    let txs = BTreeSet::new();
    Ledger {
        hash: compute_hash(None, 1, &txs),
        parent: None,
        seq: 1,
        txs,
    }
}

/// Store of all ledgers created in one run, closed under parents, with a
/// child index for the preferred branch walk. Single writer per run;
/// safe to share read-only afterwards.
#[derive(Clone, Debug)]
pub struct LedgerStore {
    ledgers: BTreeMap<LedgerHash, Ledger>,
    children: BTreeMap<LedgerHash, BTreeSet<LedgerHash>>,
    genesis: LedgerHash,
}

impl Default for LedgerStore {
    fn default() -> Self {
        Self::new()
    }
}

impl LedgerStore {
    pub fn new() -> Self {
        let g = genesis_ledger();
        let genesis = g.hash();
        let mut ledgers = BTreeMap::new();
        ledgers.insert(genesis, g);
        LedgerStore {
            ledgers,
            children: BTreeMap::new(),
            genesis,
        }
    }

    pub fn genesis_hash(&self) -> LedgerHash {
        self.genesis
    }

    pub fn len(&self) -> usize {
        self.ledgers.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always holds genesis
    }

    pub fn contains(&self, hash: &LedgerHash) -> bool {
        self.ledgers.contains_key(hash)
    }

    pub fn get(&self, hash: &LedgerHash) -> Result<&Ledger, LedgerError> {
        self.ledgers
            .get(hash)
            .ok_or(LedgerError::UnknownLedger(*hash))
    }

    pub fn children_of(&self, hash: &LedgerHash) -> impl Iterator<Item = &LedgerHash> {
        self.children.get(hash).into_iter().flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Ledger> {
        self.ledgers.values()
    }

    /// Applies a transaction set to a stored parent, producing (and storing)
    /// the child ledger. Idempotent: re-applying the same set to the same
    /// parent returns the already-stored child.
    pub fn apply(
        &mut self,
        parent: LedgerHash,
        txs: BTreeSet<TxId>,
    ) -> Result<LedgerHash, LedgerError> {
        let parent_seq = self.get(&parent)?.seq;
        let seq = parent_seq + 1;
        let hash = compute_hash(Some(&parent), seq, &txs);
        if let Some(existing) = self.ledgers.get(&hash) {
            // Desk-scale collision check: an equal digest must mean equal content.
            if existing.parent != Some(parent) || existing.seq != seq || existing.txs != txs {
                return Err(LedgerError::HashCollision(hash));
            }
            return Ok(hash);
        }
        self.ledgers.insert(
            hash,
            Ledger {
                hash,
                parent: Some(parent),
                seq,
                txs,
            },
        );
        self.children.entry(parent).or_default().insert(hash);
        Ok(hash)
    }

    /// True iff `a` is a strict ancestor of `b`. A ledger is not its own
    /// ancestor.
    pub fn is_ancestor(&self, a: &LedgerHash, b: &LedgerHash) -> Result<bool, LedgerError> {
        let a_seq = self.get(a)?.seq;
        let mut cur = self.get(b)?;
        while let Some(parent) = cur.parent {
            if cur.seq <= a_seq {
                return Ok(false);
            }
            if parent == *a {
                return Ok(true);
            }
            cur = self.get(&parent)?;
        }
        Ok(false)
    }

    /// True iff `a` equals `b` or is a strict ancestor of it.
    pub fn is_ancestor_or_eq(&self, a: &LedgerHash, b: &LedgerHash) -> Result<bool, LedgerError> {
        if a == b {
            self.get(a)?;
            return Ok(true);
        }
        self.is_ancestor(a, b)
    }

    /// The ancestor (or the ledger itself) of `hash` at sequence `seq`.
    pub fn ancestor_at(&self, hash: &LedgerHash, seq: Seq) -> Result<LedgerHash, LedgerError> {
        let mut cur = self.get(hash)?;
        if seq > cur.seq {
            return Err(LedgerError::NoAncestorAtSeq(*hash, seq));
        }
        while cur.seq > seq {
            match cur.parent {
                Some(p) => cur = self.get(&p)?,
                None => return Err(LedgerError::NoAncestorAtSeq(*hash, seq)),
            }
        }
        Ok(cur.hash)
    }

    /// The deepest ledger that is an ancestor-or-equal of every input.
    ///
    /// This is the fixed point the preferred branch walk would reach when
    /// started from the genesis side, so starting here is equivalent and
    /// cheaper.
    pub fn common_ancestor(&self, set: &[LedgerHash]) -> Result<LedgerHash, LedgerError> {
        let mut iter = set.iter();
        let first = iter.next().ok_or(LedgerError::EmptyLedgerSet)?;
        let mut acc = self.get(first)?.hash();
        for h in iter {
            acc = self.pair_common_ancestor(&acc, h)?;
        }
        Ok(acc)
    }

    fn pair_common_ancestor(
        &self,
        a: &LedgerHash,
        b: &LedgerHash,
    ) -> Result<LedgerHash, LedgerError> {
        let mut la = self.get(a)?;
        let mut lb = self.get(b)?;
        while la.seq > lb.seq {
            la = self.get(&la.parent.expect("non-genesis ledger has a parent"))?;
        }
        while lb.seq > la.seq {
            lb = self.get(&lb.parent.expect("non-genesis ledger has a parent"))?;
        }
        while la.hash != lb.hash {
            la = self.get(&la.parent.expect("diverging chains reach genesis"))?;
            lb = self.get(&lb.parent.expect("diverging chains reach genesis"))?;
        }
        Ok(la.hash)
    }

    /// Union of the transaction sets of `hash` and all of its ancestors.
    pub fn ancestry_txs(&self, hash: &LedgerHash) -> Result<BTreeSet<TxId>, LedgerError> {
        let mut out = BTreeSet::new();
        let mut cur = self.get(hash)?;
        loop {
            out.extend(cur.txs.iter().cloned());
            match cur.parent {
                Some(p) => cur = self.get(&p)?,
                None => break,
            }
        }
        Ok(out)
    }
}

/// Hash-order tie break: 1 iff the hash of `a` is greater than the hash of
/// `b` under unsigned lexicographic byte order, 0 otherwise.
pub fn phi(a: &LedgerHash, b: &LedgerHash) -> u8 {
    u8::from(a.0 > b.0)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn txs(ids: &[&str]) -> BTreeSet<TxId> {
        ids.iter().map(|s| TxId::new(*s)).collect()
    }

    #[test]
    fn genesis_has_seq_one_and_no_parent() {
        let g = genesis_ledger();
        assert_eq!(g.seq(), 1);
        assert_eq!(g.parent(), None);
        assert!(g.txs().is_empty());
    }

    #[test]
    fn genesis_is_deterministic() {
        assert_eq!(genesis_ledger().hash(), genesis_ledger().hash());
    }

    #[test]
    fn apply_empty_set_gives_seq_two() {
        let mut store = LedgerStore::new();
        let child = store.apply(store.genesis_hash(), BTreeSet::new()).unwrap();
        let l = store.get(&child).unwrap();
        assert_eq!(l.seq(), 2);
        assert!(l.txs().is_empty());
        assert_eq!(l.parent(), Some(store.genesis_hash()));
    }

    #[test]
    fn apply_is_order_independent_over_sets() {
        let mut store = LedgerStore::new();
        let g = store.genesis_hash();
        let a = store.apply(g, txs(&["x1", "x0"])).unwrap();
        let b = store.apply(g, txs(&["x0", "x1"])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_tx_sets_same_parent_differ() {
        let mut store = LedgerStore::new();
        let g = store.genesis_hash();
        let a = store.apply(g, txs(&["x0"])).unwrap();
        let b = store.apply(g, txs(&["x0", "x1"])).unwrap();
        assert_ne!(a, b);
        assert_eq!(store.get(&a).unwrap().seq(), store.get(&b).unwrap().seq());
    }

    #[test]
    fn apply_is_idempotent() {
        let mut store = LedgerStore::new();
        let g = store.genesis_hash();
        let a = store.apply(g, txs(&["x0"])).unwrap();
        let b = store.apply(g, txs(&["x0"])).unwrap();
        assert_eq!(a, b);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn apply_unknown_parent_errors() {
        let mut store = LedgerStore::new();
        let bogus = LedgerHash::from_bytes([7u8; 32]);
        assert_eq!(
            store.apply(bogus, BTreeSet::new()),
            Err(LedgerError::UnknownLedger(bogus))
        );
    }

    /// The two-branch tree used throughout the preferred-branch tests:
    /// genesis -> A -> {B -> D -> E, C -> F}.
    pub(crate) fn two_branch_tree(
        store: &mut LedgerStore,
    ) -> (
        LedgerHash,
        LedgerHash,
        LedgerHash,
        LedgerHash,
        LedgerHash,
        LedgerHash,
    ) {
        let g = store.genesis_hash();
        let a = store.apply(g, txs(&["a"])).unwrap();
        let b = store.apply(a, txs(&["b"])).unwrap();
        let c = store.apply(a, txs(&["c"])).unwrap();
        let d = store.apply(b, txs(&["d"])).unwrap();
        let e = store.apply(d, txs(&["e"])).unwrap();
        let f = store.apply(c, txs(&["f"])).unwrap();
        (a, b, c, d, e, f)
    }

    #[test]
    fn ancestry_queries() {
        let mut store = LedgerStore::new();
        let (a, b, _c, _d, e, f) = two_branch_tree(&mut store);
        let g = store.genesis_hash();
        assert!(store.is_ancestor(&g, &e).unwrap());
        assert!(store.is_ancestor(&b, &e).unwrap());
        assert!(!store.is_ancestor(&e, &e).unwrap());
        assert!(!store.is_ancestor(&b, &f).unwrap());
        assert!(store.is_ancestor(&a, &f).unwrap());
    }

    #[test]
    fn common_ancestor_of_singleton_is_itself() {
        let mut store = LedgerStore::new();
        let (_a, b, ..) = two_branch_tree(&mut store);
        assert_eq!(store.common_ancestor(&[b]).unwrap(), b);
    }

    #[test]
    fn common_ancestor_of_two_branches() {
        let mut store = LedgerStore::new();
        let (a, b, _c, d, e, f) = two_branch_tree(&mut store);
        assert_eq!(store.common_ancestor(&[f, e, d, b]).unwrap(), a);
    }

    #[test]
    fn common_ancestor_child_parent() {
        let mut store = LedgerStore::new();
        let (a, b, ..) = two_branch_tree(&mut store);
        assert_eq!(store.common_ancestor(&[b, a]).unwrap(), a);
    }

    #[test]
    fn common_ancestor_empty_errors() {
        let store = LedgerStore::new();
        assert_eq!(store.common_ancestor(&[]), Err(LedgerError::EmptyLedgerSet));
    }

    #[test]
    fn seq_matches_parent_chain_length() {
        let mut store = LedgerStore::new();
        let (_, _, _, _, e, f) = two_branch_tree(&mut store);
        for h in [e, f] {
            let mut depth = 1u64;
            let mut cur = store.get(&h).unwrap();
            while let Some(p) = cur.parent() {
                depth += 1;
                cur = store.get(&p).unwrap();
            }
            assert_eq!(store.get(&h).unwrap().seq(), depth);
        }
    }

    #[test]
    fn phi_basics() {
        let a = LedgerHash::from_bytes([2u8; 32]);
        let b = LedgerHash::from_bytes([1u8; 32]);
        assert_eq!(phi(&a, &a), 0);
        assert_eq!(phi(&a, &b), 1);
        assert_eq!(phi(&b, &a), 0);
    }

    #[test]
    fn golden_hashes_are_stable() {
        // Pins the canonical encoding. If these change, every golden trace
        // in the repository changes with them. Expected digests computed
        // independently with Python hashlib over the documented encoding.
        let mut store = LedgerStore::new();
        let g = store.genesis_hash();
        let child = store.apply(g, txs(&["x0", "x1"])).unwrap();
        assert_eq!(g.to_hex(), GOLDEN_GENESIS_HEX);
        assert_eq!(child.to_hex(), GOLDEN_CHILD_HEX);
    }

    const GOLDEN_GENESIS_HEX: &str =
        "963f96e12c8e8d17be34a6511f848f568e9e224a90f5cb2d57f7b3d10b4ccbde";
    const GOLDEN_CHILD_HEX: &str =
        "c686cb4fad8ebd68f0a9f307aa3664fb2d7065b2bd7c7fd4a6eba90695518f4c";

    #[test]
    fn ancestor_at_walks_to_seq() {
        let mut store = LedgerStore::new();
        let (a, b, _c, d, e, _f) = two_branch_tree(&mut store);
        assert_eq!(store.ancestor_at(&e, 3).unwrap(), b);
        assert_eq!(store.ancestor_at(&e, 2).unwrap(), a);
        assert_eq!(store.ancestor_at(&d, 4).unwrap(), d);
        assert!(store.ancestor_at(&a, 5).is_err());
    }

    #[test]
    fn ancestry_txs_accumulate() {
        let mut store = LedgerStore::new();
        let (_a, _b, _c, _d, e, _f) = two_branch_tree(&mut store);
        assert_eq!(store.ancestry_txs(&e).unwrap(), txs(&["a", "b", "d", "e"]));
    }
}
