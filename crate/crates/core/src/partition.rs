//! Fixed-length prefix partitioning of the suffix set.
//!
//! Partition ids are the base-4 radix of the first `p` bases with the first
//! base most significant, so `"AT"` is `0*4 + 3 = 3`. Suffixes with fewer than
//! `p` bases left go to the overflow partition, id `4^p`.

use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::codec::{BaseCode, EncodedSequence};
use crate::error::{Error, Result};
use crate::subtree::worst_case_chunk_bytes;

pub type PartitionId = u32;

/// Keeps `4^p` spill files and partition ids manageable.
pub const MAX_PREFIX_LEN: u32 = 12;

const SPILL_HEADER_LEN: usize = 8;

/// Smallest `p >= 1` with `4^p >= n*f/budget`, i.e. `ceil(log4(n*f/budget))`
/// clamped to at least 1.
pub fn min_prefix_length(n: u64, f: f64, budget: u64) -> Result<u32> {
    if budget == 0 {
        return Err(Error::InvalidBudget);
    }
    if !(f.is_finite() && f > 0.0) {
        return Err(Error::Config(format!("expansion factor must be positive, got {f}")));
    }
    let ratio = n as f64 * f / budget as f64;
    let mut p = 1u32;
    let mut reach = 4.0f64;
    while reach < ratio {
        p += 1;
        reach *= 4.0;
    }
    Ok(p)
}

pub fn check_prefix_len(p: u32) -> Result<()> {
    if (1..=MAX_PREFIX_LEN).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidPrefixLength(p))
    }
}

/// Number of regular partitions, `4^p`. Also the overflow partition's id.
pub fn regular_partition_count(p: u32) -> u32 {
    1u32 << (2 * p)
}

pub fn overflow_id(p: u32) -> PartitionId {
    regular_partition_count(p)
}

pub fn prefix_id(seq: &EncodedSequence, i: u32, p: u32) -> PartitionId {
    debug_assert!(i < seq.len());
    if seq.len() - i < p {
        return overflow_id(p);
    }
    (i..i + p).fold(0, |id, k| id * 4 + seq.code(k) as u32)
}

/// Radix id of an encoded prefix of exactly `p` bases.
pub fn id_of_codes(codes: &[u8]) -> PartitionId {
    codes.iter().fold(0, |id, &c| id * 4 + c as u32)
}

/// The prefix text of a regular partition, or `None` for the overflow id.
pub fn prefix_text(id: PartitionId, p: u32) -> Option<String> {
    if id >= regular_partition_count(p) {
        return None;
    }
    Some(
        (0..p)
            .rev()
            .map(|k| BaseCode::from_code(((id >> (2 * k)) & 3) as u8).unwrap().to_char())
            .collect(),
    )
}

pub fn parse_prefix(text: &str) -> Option<PartitionId> {
    let mut id = 0;
    for ch in text.chars() {
        id = id * 4 + crate::codec::encode_base(ch).ok()?.code() as u32;
    }
    Some(id)
}

/// Suffix counts per partition from one pass over the sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixCounts {
    pub p: u32,
    pub counts: Vec<u32>,
    pub overflow: u32,
}

impl PrefixCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum::<u64>() + self.overflow as u64
    }

    pub fn count(&self, id: PartitionId) -> u32 {
        if id == overflow_id(self.p) {
            self.overflow
        } else {
            self.counts[id as usize]
        }
    }
}

/// Calls `f(position, partition)` for every suffix in ascending position
/// order, rolling the radix instead of recomputing it.
fn for_each_prefix(seq: &EncodedSequence, p: u32, mut f: impl FnMut(u32, PartitionId)) {
    let n = seq.len();
    let mask = regular_partition_count(p) - 1;
    let full = n.saturating_sub(p - 1);
    let mut id = 0u32;
    for k in 0..(p - 1).min(n) {
        id = (id << 2) | seq.code(k) as u32;
    }
    for i in 0..full {
        id = ((id << 2) | seq.code(i + p - 1) as u32) & mask;
        f(i, id);
    }
    let overflow = overflow_id(p);
    for i in full..n {
        f(i, overflow);
    }
}

pub fn count_prefix_frequencies(seq: &EncodedSequence, p: u32) -> Result<PrefixCounts> {
    check_prefix_len(p)?;
    let mut counts = vec![0u32; regular_partition_count(p) as usize];
    let mut overflow = 0u32;
    let overflow_id = overflow_id(p);
    for_each_prefix(seq, p, |_, id| {
        if id == overflow_id {
            overflow += 1;
        } else {
            counts[id as usize] += 1;
        }
    });
    Ok(PrefixCounts { p, counts, overflow })
}

/// Everything needed to size and schedule the per-partition builds.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub p: u32,
    pub counts: Vec<u32>,
    pub overflow_count: u32,
    pub n: u32,
    /// Tree bytes per suffix.
    pub f: f64,
    /// Bytes available for trees once the packed sequence is resident.
    pub memory_budget: u64,
}

impl PartitionPlan {
    pub fn new(seq: &EncodedSequence, p: u32, f: f64, memory_budget: u64) -> Result<Self> {
        let PrefixCounts { p, counts, overflow } = count_prefix_frequencies(seq, p)?;
        Ok(PartitionPlan {
            p,
            counts,
            overflow_count: overflow,
            n: seq.len(),
            f,
            memory_budget,
        })
    }

    pub fn overflow_id(&self) -> PartitionId {
        overflow_id(self.p)
    }

    pub fn count(&self, id: PartitionId) -> u32 {
        if id == self.overflow_id() {
            self.overflow_count
        } else {
            self.counts[id as usize]
        }
    }

    /// Ids of regular partitions holding at least one suffix.
    pub fn non_empty(&self) -> impl Iterator<Item = PartitionId> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(j, _)| j as PartitionId)
    }

    /// Estimated tree bytes: the smaller of `count*f` and the structural
    /// worst case.
    pub fn estimated_tree_bytes(&self, id: PartitionId) -> u64 {
        let count = self.count(id) as u64;
        let by_factor = (count as f64 * self.f).ceil() as u64;
        by_factor.min(worst_case_chunk_bytes(count))
    }

    /// Partitions whose worst-case chunk cannot fit the budget.
    pub fn oversized(&self) -> impl Iterator<Item = (PartitionId, u64)> + '_ {
        self.non_empty().filter_map(|j| {
            let bytes = worst_case_chunk_bytes(self.counts[j as usize] as u64);
            (bytes > self.memory_budget).then_some((j, bytes))
        })
    }
}

/// Positions of one partition, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuffixPositionList {
    pub partition_id: PartitionId,
    pub positions: Vec<u32>,
}

/// A spill file on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpillFile {
    pub partition_id: PartitionId,
    pub path: PathBuf,
    pub count: u32,
}

pub fn spill_file_name(id: PartitionId) -> String {
    format!("part_{id}.pos")
}

/// One scan of `seq` fills an exactly-sized buffer per partition; each
/// buffer then goes to disk in a single write. Empty partitions get no file.
pub fn build_position_lists(
    seq: &EncodedSequence,
    plan: &PartitionPlan,
    dir: &Path,
) -> Result<Vec<SpillFile>> {
    fs::create_dir_all(dir).map_err(|source| Error::SpillIo {
        path: dir.to_path_buf(),
        source,
    })?;
    let overflow = plan.overflow_id() as usize;
    let mut lists: Vec<Vec<u32>> = (0..=overflow)
        .map(|j| Vec::with_capacity(plan.count(j as PartitionId) as usize))
        .collect();
    for_each_prefix(seq, plan.p, |i, id| lists[id as usize].push(i));

    let mut spills = Vec::new();
    for (j, positions) in lists.into_iter().enumerate() {
        if positions.is_empty() {
            continue;
        }
        debug_assert_eq!(positions.len() as u32, plan.count(j as PartitionId));
        let list = SuffixPositionList {
            partition_id: j as PartitionId,
            positions,
        };
        let path = dir.join(spill_file_name(list.partition_id));
        write_spill(&path, &list)?;
        spills.push(SpillFile {
            partition_id: list.partition_id,
            path,
            count: list.positions.len() as u32,
        });
    }
    Ok(spills)
}

pub fn write_spill(path: &Path, list: &SuffixPositionList) -> Result<()> {
    let mut buf = Vec::with_capacity(SPILL_HEADER_LEN + 4 * list.positions.len());
    buf.extend_from_slice(&list.partition_id.to_le_bytes());
    buf.extend_from_slice(&(list.positions.len() as u32).to_le_bytes());
    for &pos in &list.positions {
        buf.extend_from_slice(&pos.to_le_bytes());
    }
    let io_err = |source| Error::SpillIo {
        path: path.to_path_buf(),
        source,
    };
    let mut file = File::create(path).map_err(io_err)?;
    file.write_all(&buf).map_err(io_err)
}

pub fn read_spill(path: &Path) -> Result<SuffixPositionList> {
    let io_err = |source| Error::SpillIo {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err)?;
    let corrupt = |reason: &str| Error::CorruptSpill {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < SPILL_HEADER_LEN {
        return Err(corrupt("truncated header"));
    }
    let partition_id = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != SPILL_HEADER_LEN + 4 * count {
        return Err(corrupt("length does not match count"));
    }
    let positions = bytes[SPILL_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(SuffixPositionList {
        partition_id,
        positions,
    })
}
