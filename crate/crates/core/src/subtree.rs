//! One partition's suffix subtree, built inside a single contiguous chunk.
//!
//! The chunk is an array of 18-byte records, each describing a node together
//! with its inbound edge. Every link is a record index counted from the start
//! of the chunk, so the byte image can be written out and read back anywhere
//! without a fix-up pass.
//!
//! Record layout, all little-endian:
//!
//! | offset | field   | meaning                                                  |
//! |--------|---------|----------------------------------------------------------|
//! | 0      | `a`     | first sequence position of the inbound edge label        |
//! | 4      | `b`     | last label position (inclusive), or `n` for a terminal    |
//! | 8      | `right` | next sibling, or [`NIL`]                                  |
//! | 12     | `foo`   | leftmost child (internal) or suffix position (terminal)  |
//! | 16     | `misc`  | reserved, written as zero                                |
//!
//! The root is record 0 with `a = 1, b = 0`, the only record whose label is
//! empty.

use crate::codec::EncodedSequence;
use crate::error::{Error, Result};
use crate::fnv::fnv1a64;
use crate::partition::{PartitionId, SuffixPositionList};

pub const RECORD_SIZE: usize = 18;
pub const NIL: u32 = u32::MAX;
pub const ROOT: u32 = 0;

/// Size of the fixed chunk file header that precedes the records.
pub const CHUNK_HEADER_LEN: usize = 31;

const A: usize = 0;
const B: usize = 4;
const RIGHT: usize = 8;
const FOO: usize = 12;
const MISC: usize = 16;

/// Upper bound on the stored size of a chunk holding `suffixes` suffixes.
pub fn worst_case_chunk_bytes(suffixes: u64) -> u64 {
    (2 * suffixes + 1) * RECORD_SIZE as u64 + CHUNK_HEADER_LEN as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRecord {
    pub a: u32,
    pub b: u32,
    pub right: u32,
    pub foo: u32,
    pub misc: u16,
}

impl NodeRecord {
    pub const ROOT: NodeRecord = NodeRecord {
        a: 1,
        b: 0,
        right: NIL,
        foo: NIL,
        misc: 0,
    };

    pub fn to_bytes(&self) -> [u8; RECORD_SIZE] {
        let mut out = [0u8; RECORD_SIZE];
        out[A..A + 4].copy_from_slice(&self.a.to_le_bytes());
        out[B..B + 4].copy_from_slice(&self.b.to_le_bytes());
        out[RIGHT..RIGHT + 4].copy_from_slice(&self.right.to_le_bytes());
        out[FOO..FOO + 4].copy_from_slice(&self.foo.to_le_bytes());
        out[MISC..MISC + 2].copy_from_slice(&self.misc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> NodeRecord {
        let word = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        NodeRecord {
            a: word(A),
            b: word(B),
            right: word(RIGHT),
            foo: word(FOO),
            misc: u16::from_le_bytes([bytes[MISC], bytes[MISC + 1]]),
        }
    }

    pub fn is_terminal(&self, n: u32) -> bool {
        self.b == n
    }
}

/// Which of the two insertion shapes an insert took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertCase {
    /// A terminal was hung under an existing node.
    Leaf,
    /// An edge was cut by a new internal node carrying the new terminal.
    Split,
}

/// A suffix subtree held as a relocatable record array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtreeChunk {
    partition_id: PartitionId,
    p: u8,
    n: u32,
    suffix_count: u32,
    capacity: u32,
    records: Vec<u8>,
    record_writes: u64,
}

impl SubtreeChunk {
    /// Allocates room for the worst case of `2 * hint + 1` records up front so
    /// the array never moves during the build.
    pub fn new(
        partition_id: PartitionId,
        p: u8,
        suffix_count_hint: u32,
        n: u32,
        grant: u64,
    ) -> Result<Self> {
        let capacity = 2 * suffix_count_hint as u64 + 1;
        let requested = capacity * RECORD_SIZE as u64;
        if requested > grant || capacity >= NIL as u64 {
            return Err(Error::AllocationFailure { requested, grant });
        }
        let mut records = Vec::new();
        records
            .try_reserve_exact(requested as usize)
            .map_err(|_| Error::AllocationFailure { requested, grant })?;
        records.extend_from_slice(&NodeRecord::ROOT.to_bytes());
        Ok(SubtreeChunk {
            partition_id,
            p,
            n,
            suffix_count: 0,
            capacity: capacity as u32,
            records,
            record_writes: 1,
        })
    }

    /// Reassembles a chunk from a stored image. The caller has already checked
    /// the image length against `node_count`.
    pub(crate) fn from_image(
        partition_id: PartitionId,
        p: u8,
        n: u32,
        suffix_count: u32,
        records: Vec<u8>,
    ) -> Self {
        let node_count = (records.len() / RECORD_SIZE) as u32;
        SubtreeChunk {
            partition_id,
            p,
            n,
            suffix_count,
            capacity: node_count,
            records,
            record_writes: 0,
        }
    }

    pub fn partition_id(&self) -> PartitionId {
        self.partition_id
    }

    pub fn prefix_len(&self) -> u8 {
        self.p
    }

    pub fn seq_len(&self) -> u32 {
        self.n
    }

    pub fn node_count(&self) -> u32 {
        (self.records.len() / RECORD_SIZE) as u32
    }

    pub fn suffix_count(&self) -> u32 {
        self.suffix_count
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    /// The raw record array exactly as it is stored.
    pub fn record_bytes(&self) -> &[u8] {
        &self.records
    }

    /// Bytes on disk: header plus records.
    pub fn stored_bytes(&self) -> u64 {
        CHUNK_HEADER_LEN as u64 + self.records.len() as u64
    }

    /// Number of record writes since the chunk was created.
    pub fn record_writes(&self) -> u64 {
        self.record_writes
    }

    pub fn checksum(&self) -> u64 {
        fnv1a64(&self.records)
    }

    pub fn record(&self, idx: u32) -> NodeRecord {
        let off = idx as usize * RECORD_SIZE;
        NodeRecord::from_bytes(&self.records[off..off + RECORD_SIZE])
    }

    #[inline]
    fn field(&self, idx: u32, field: usize) -> u32 {
        let off = idx as usize * RECORD_SIZE + field;
        u32::from_le_bytes(self.records[off..off + 4].try_into().unwrap())
    }

    #[inline]
    fn set_field(&mut self, idx: u32, field: usize, value: u32) {
        let off = idx as usize * RECORD_SIZE + field;
        self.records[off..off + 4].copy_from_slice(&value.to_le_bytes());
    }

    #[inline]
    pub fn a(&self, idx: u32) -> u32 {
        self.field(idx, A)
    }

    #[inline]
    pub fn b(&self, idx: u32) -> u32 {
        self.field(idx, B)
    }

    #[inline]
    pub fn right(&self, idx: u32) -> u32 {
        self.field(idx, RIGHT)
    }

    #[inline]
    pub fn foo(&self, idx: u32) -> u32 {
        self.field(idx, FOO)
    }

    #[inline]
    pub fn is_terminal(&self, idx: u32) -> bool {
        self.b(idx) == self.n
    }

    /// Leftmost child, or `NIL` for terminals and an empty root.
    pub fn first_child(&self, idx: u32) -> u32 {
        if self.is_terminal(idx) {
            NIL
        } else {
            self.foo(idx)
        }
    }

    pub fn children(&self, idx: u32) -> Children<'_> {
        Children {
            chunk: self,
            next: self.first_child(idx),
        }
    }

    fn overwrite(&mut self, idx: u32, rec: NodeRecord) {
        let off = idx as usize * RECORD_SIZE;
        self.records[off..off + RECORD_SIZE].copy_from_slice(&rec.to_bytes());
        self.record_writes += 1;
    }

    fn allocate(&mut self, rec: NodeRecord) -> u32 {
        let idx = self.node_count();
        self.records.extend_from_slice(&rec.to_bytes());
        self.record_writes += 1;
        idx
    }

    fn ensure_room(&self, extra: u32) -> Result<()> {
        if self.node_count() as u64 + extra as u64 > self.capacity as u64 {
            let requested = (self.node_count() as u64 + extra as u64) * RECORD_SIZE as u64;
            return Err(Error::AllocationFailure {
                requested,
                grant: self.capacity as u64 * RECORD_SIZE as u64,
            });
        }
        Ok(())
    }

    /// Adds the suffix starting at `pos`, descending from the root.
    pub fn insert_suffix(&mut self, seq: &EncodedSequence, pos: u32) -> Result<InsertCase> {
        debug_assert_eq!(seq.len(), self.n);
        let n = self.n;
        if pos >= n {
            return Err(Error::OutOfRange {
                pos: pos as u64,
                len: n as u64,
            });
        }
        let mut node = ROOT;
        let mut q = pos;
        loop {
            let head = seq.symbol(q);
            let mut child = self.first_child(node);
            while child != NIL && seq.symbol(self.a(child)) != head {
                child = self.right(child);
            }

            if child == NIL {
                self.ensure_room(1)?;
                let leaf = self.allocate(NodeRecord {
                    a: q,
                    b: n,
                    right: self.foo(node),
                    foo: pos,
                    misc: 0,
                });
                self.set_field(node, FOO, leaf);
                self.record_writes += 1;
                self.suffix_count += 1;
                return Ok(InsertCase::Leaf);
            }

            let (a, b) = (self.a(child), self.b(child));
            let common = match_label(seq, a, b, q);
            if common == label_len(a, b, n) {
                if b == n {
                    return Err(Error::DuplicateSuffix { pos });
                }
                q += common;
                node = child;
                continue;
            }

            // Cut the edge after `common` symbols. The child's slot becomes
            // the new internal node so the parent's link stays valid; the old
            // child moves to a fresh record.
            self.ensure_room(2)?;
            let old = self.record(child);
            let moved = self.node_count();
            let leaf = moved + 1;
            self.allocate(NodeRecord {
                a: old.a + common,
                right: NIL,
                ..old
            });
            self.overwrite(
                child,
                NodeRecord {
                    a: old.a,
                    b: old.a + common - 1,
                    right: old.right,
                    foo: leaf,
                    misc: 0,
                },
            );
            self.allocate(NodeRecord {
                a: q + common,
                b: n,
                right: moved,
                foo: pos,
                misc: 0,
            });
            self.suffix_count += 1;
            return Ok(InsertCase::Split);
        }
    }

    /// Finds the highest node whose path label starts with `pattern`.
    pub fn locate(&self, seq: &EncodedSequence, pattern: &[u8]) -> Option<u32> {
        let n = self.n;
        let mut node = ROOT;
        let mut k = 0usize;
        while k < pattern.len() {
            let head = pattern[k];
            let mut child = self.first_child(node);
            while child != NIL && seq.symbol(self.a(child)) != head {
                child = self.right(child);
            }
            if child == NIL {
                return None;
            }
            let (a, b) = (self.a(child), self.b(child));
            let real = if b == n { n - a } else { b - a + 1 };
            let remaining = pattern.len() - k;
            let span = (real as usize).min(remaining);
            if (1..span).any(|j| seq.code(a + j as u32) != pattern[k + j]) {
                return None;
            }
            if remaining <= real as usize {
                return Some(child);
            }
            if b == n {
                return None;
            }
            k += real as usize;
            node = child;
        }
        Some(node)
    }

    /// Suffix positions of every terminal below `node`, in tree order.
    pub fn terminals_below(&self, node: u32) -> Vec<u32> {
        let mut out = Vec::new();
        if self.is_terminal(node) {
            out.push(self.foo(node));
            return out;
        }
        let mut stack = vec![self.first_child(node)];
        while let Some(mut idx) = stack.pop() {
            while idx != NIL {
                if self.is_terminal(idx) {
                    out.push(self.foo(idx));
                } else {
                    stack.push(self.foo(idx));
                }
                idx = self.right(idx);
            }
        }
        out
    }

    /// All start positions of `pattern` among this chunk's suffixes, sorted.
    pub fn traverse(&self, seq: &EncodedSequence, pattern: &[u8]) -> Vec<u32> {
        if pattern.is_empty() {
            return Vec::new();
        }
        let mut hits = match self.locate(seq, pattern) {
            Some(node) => self.terminals_below(node),
            None => Vec::new(),
        };
        hits.sort_unstable();
        hits
    }

    /// Realized bytes of tree per indexed suffix.
    pub fn expansion_factor(&self) -> f64 {
        if self.suffix_count == 0 {
            return 0.0;
        }
        self.stored_bytes() as f64 / self.suffix_count as f64
    }
}

pub struct Children<'a> {
    chunk: &'a SubtreeChunk,
    next: u32,
}

impl Iterator for Children<'_> {
    type Item = u32;

    fn next(&mut self) -> Option<u32> {
        if self.next == NIL {
            return None;
        }
        let cur = self.next;
        self.next = self.chunk.right(cur);
        Some(cur)
    }
}

/// Label length in symbols, counting the implicit `$` on terminal edges.
#[inline]
pub fn label_len(a: u32, b: u32, n: u32) -> u32 {
    if b == n {
        n - a + 1
    } else {
        b - a + 1
    }
}

/// Common prefix length of the edge label `a..=b` (running through `$` when
/// `b == n`) and the suffix starting at `q`. `$` only matches itself.
pub fn match_label(seq: &EncodedSequence, a: u32, b: u32, q: u32) -> u32 {
    let n = seq.len();
    let real = if b == n { n - a } else { b - a + 1 };
    let common = seq.common_prefix(a, q, real);
    if common == real && b == n && q + common == n {
        common + 1
    } else {
        common
    }
}

/// Builds the subtree for one partition's position list.
pub fn build_subtree(
    seq: &EncodedSequence,
    list: &SuffixPositionList,
    p: u8,
    grant: u64,
) -> Result<SubtreeChunk> {
    let mut chunk = SubtreeChunk::new(
        list.partition_id,
        p,
        list.positions.len() as u32,
        seq.len(),
        grant,
    )?;
    for &pos in &list.positions {
        chunk.insert_suffix(seq, pos)?;
    }
    debug_assert!(chunk.node_count() <= 2 * chunk.suffix_count() + 1);
    Ok(chunk)
}

/// Counts gathered while checking a chunk's structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StructureReport {
    pub terminals: u32,
    pub internals: u32,
    pub labels_checked: u32,
}

/// Walks the whole chunk and checks the tree invariants: links in range and
/// acyclic, every record reachable, distinct leading symbols among siblings,
/// branching internal nodes, terminal count, and that the path label of
/// every `leaf_stride`-th terminal spells its suffix.
pub fn check_structure(
    chunk: &SubtreeChunk,
    seq: &EncodedSequence,
    leaf_stride: u32,
) -> std::result::Result<StructureReport, String> {
    let n = chunk.seq_len();
    if n != seq.len() {
        return Err(format!("chunk built for n={n}, sequence has {}", seq.len()));
    }
    let count = chunk.node_count();
    let root = chunk.record(ROOT);
    if (root.a, root.b, root.right) != (1, 0, NIL) {
        return Err("record 0 is not a root record".into());
    }
    if count > 2 * chunk.suffix_count() + 1 {
        return Err(format!(
            "{count} records for {} suffixes",
            chunk.suffix_count()
        ));
    }
    let stride = leaf_stride.max(1);
    let mut report = StructureReport::default();
    let mut visited = vec![false; count as usize];
    visited[ROOT as usize] = true;
    // (node, string depth of node, index into `path` of its inbound edge)
    let mut path: Vec<(u32, u32)> = Vec::new();
    let mut stack: Vec<(u32, u32, usize)> = vec![(ROOT, 0, 0)];
    let mut seen_positions = vec![false; n as usize];
    while let Some((node, depth, path_len)) = stack.pop() {
        path.truncate(path_len);
        if node != ROOT {
            let rec = chunk.record(node);
            path.push((rec.a, rec.b.min(n.saturating_sub(1))));
        }
        let mut heads = [false; 5];
        let mut children = 0u32;
        let mut child = chunk.first_child(node);
        while child != NIL {
            if child >= count {
                return Err(format!("link {child} out of range at node {node}"));
            }
            if visited[child as usize] {
                return Err(format!("record {child} reached twice"));
            }
            visited[child as usize] = true;
            children += 1;
            let rec = chunk.record(child);
            if rec.a > n || (rec.b < n && rec.a > rec.b) {
                return Err(format!("bad label ({}, {}) at {child}", rec.a, rec.b));
            }
            let head = seq.symbol(rec.a) as usize;
            if heads[head] {
                return Err(format!("node {node} has two edges starting with symbol {head}"));
            }
            heads[head] = true;
            if rec.is_terminal(n) {
                report.terminals += 1;
                let pos = rec.foo;
                if pos >= n || seen_positions[pos as usize] {
                    return Err(format!("terminal {child} has bad or repeated position {pos}"));
                }
                seen_positions[pos as usize] = true;
                if rec.a != pos + depth {
                    return Err(format!(
                        "terminal {child} for suffix {pos} hangs at depth {depth} but its label starts at {}",
                        rec.a
                    ));
                }
                if (report.terminals - 1) % stride == 0 {
                    let mut offset = pos;
                    for &(a, b) in &path {
                        let len = b - a + 1;
                        if seq.common_prefix(a, offset, len) != len {
                            return Err(format!("path label of suffix {pos} diverges at {offset}"));
                        }
                        offset += len;
                    }
                    report.labels_checked += 1;
                }
            } else {
                report.internals += 1;
                let len = rec.b - rec.a + 1;
                stack.push((child, depth + len, path.len()));
            }
            child = rec.right;
        }
        if node != ROOT && children < 2 {
            return Err(format!("internal node {node} has {children} children"));
        }
        if node == ROOT && children > 4 {
            return Err(format!("root has {children} children"));
        }
    }
    if let Some(orphan) = visited.iter().position(|&v| !v) {
        return Err(format!("record {orphan} is unreachable"));
    }
    if report.terminals != chunk.suffix_count() {
        return Err(format!(
            "{} terminals but header says {}",
            report.terminals,
            chunk.suffix_count()
        ));
    }
    Ok(report)
}
