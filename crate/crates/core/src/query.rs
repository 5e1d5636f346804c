//! Exact substring search over a stored index.
//!
//! A pattern of at least `p` bases can only start suffixes of the partition
//! named by its first `p` bases; a shorter pattern fans out to every partition
//! whose prefix extends it. The overflow suffixes (fewer than `p` bases) are
//! always compared directly.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::codec::{encode_base, EncodedSequence};
use crate::error::{Error, Result};
use crate::partition::{id_of_codes, overflow_id, prefix_id, PartitionId};
use crate::store::{load_chunk, read_manifest, IndexManifest, SEQUENCE_NAME};
use crate::subtree::{check_structure, SubtreeChunk, CHUNK_HEADER_LEN, RECORD_SIZE};

pub const DEFAULT_CACHE_CHUNKS: usize = 64;

/// A validated search pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pattern: String,
    codes: Vec<u8>,
}

impl Query {
    pub fn parse(pattern: &str) -> Result<Self> {
        if pattern.is_empty() {
            return Err(Error::InvalidPattern {
                pattern: String::new(),
                reason: "empty".into(),
            });
        }
        let codes = pattern
            .chars()
            .map(|ch| encode_base(ch).map(|b| b.code()))
            .collect::<Result<Vec<u8>>>()
            .map_err(|e| Error::InvalidPattern {
                pattern: pattern.to_string(),
                reason: e.to_string(),
            })?;
        Ok(Query {
            pattern: pattern.to_string(),
            codes,
        })
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Partitions that can hold a match of `query`, ascending, overflow last.
pub fn route(query: &Query, p: u32) -> Vec<PartitionId> {
    let codes = query.codes();
    let mut ids = if codes.len() >= p as usize {
        vec![id_of_codes(&codes[..p as usize])]
    } else {
        let free = p - codes.len() as u32;
        let base = id_of_codes(codes) << (2 * free);
        (0..1u32 << (2 * free)).map(|tail| base | tail).collect()
    };
    ids.push(overflow_id(p));
    ids
}

/// Sorted, duplicate-free match positions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchSet {
    pub positions: Vec<u32>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Least-recently-used chunk cache. Chunks are handed out as `Arc`s so an
/// eviction never pulls one out from under a running traversal.
struct ChunkCache {
    capacity: usize,
    inner: Mutex<CacheState>,
}

#[derive(Default)]
struct CacheState {
    tick: u64,
    chunks: HashMap<PartitionId, (Arc<SubtreeChunk>, u64)>,
}

impl ChunkCache {
    fn new(capacity: usize) -> Self {
        ChunkCache {
            capacity: capacity.max(1),
            inner: Mutex::new(CacheState::default()),
        }
    }

    fn get(&self, id: PartitionId) -> Option<Arc<SubtreeChunk>> {
        let mut state = self.inner.lock().unwrap();
        state.tick += 1;
        let tick = state.tick;
        state.chunks.get_mut(&id).map(|(chunk, used)| {
            *used = tick;
            Arc::clone(chunk)
        })
    }

    fn insert(&self, id: PartitionId, chunk: Arc<SubtreeChunk>) {
        let mut state = self.inner.lock().unwrap();
        state.tick += 1;
        let tick = state.tick;
        state.chunks.insert(id, (chunk, tick));
        while state.chunks.len() > self.capacity {
            let oldest = *state
                .chunks
                .iter()
                .min_by_key(|(_, (_, used))| *used)
                .unwrap()
                .0;
            state.chunks.remove(&oldest);
        }
    }

    fn len(&self) -> usize {
        self.inner.lock().unwrap().chunks.len()
    }
}

/// An opened index: manifest, packed sequence and a chunk cache.
pub struct Index {
    dir: PathBuf,
    manifest: IndexManifest,
    seq: EncodedSequence,
    cache: ChunkCache,
}

impl Index {
    pub fn open(dir: &Path) -> Result<Self> {
        Self::open_with_cache(dir, DEFAULT_CACHE_CHUNKS)
    }

    pub fn open_with_cache(dir: &Path, cache_chunks: usize) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let seq = EncodedSequence::load_cache(&dir.join(SEQUENCE_NAME))?;
        if seq.len() != manifest.n {
            return Err(Error::SequenceMismatch(format!(
                "manifest n={}, sequence has {} bases",
                manifest.n,
                seq.len()
            )));
        }
        if seq.fingerprint() != manifest.seq_hash {
            return Err(Error::SequenceMismatch(format!(
                "fingerprint {:016x} differs from manifest {:016x}",
                seq.fingerprint(),
                manifest.seq_hash
            )));
        }
        Ok(Index {
            dir: dir.to_path_buf(),
            manifest,
            seq,
            cache: ChunkCache::new(cache_chunks),
        })
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn sequence(&self) -> &EncodedSequence {
        &self.seq
    }

    pub fn cached_chunks(&self) -> usize {
        self.cache.len()
    }

    /// The chunk of a regular partition, or `None` if the partition is empty.
    pub fn chunk(&self, id: PartitionId) -> Result<Option<Arc<SubtreeChunk>>> {
        let Some(entry) = self.manifest.entry(id) else {
            return Ok(None);
        };
        let Some(file) = &entry.file else {
            return Ok(None);
        };
        if let Some(chunk) = self.cache.get(id) {
            return Ok(Some(chunk));
        }
        let path = self.dir.join(file);
        let missing = |reason: String| Error::MissingChunk {
            path: path.clone(),
            reason,
        };
        let chunk = load_chunk(&path).map_err(|e| missing(e.to_string()))?;
        if chunk.partition_id() != id
            || chunk.seq_len() != self.manifest.n
            || chunk.prefix_len() as u32 != self.manifest.p
            || chunk.node_count() != entry.node_count
            || chunk.suffix_count() != entry.suffix_count
        {
            return Err(missing("chunk header disagrees with the manifest".into()));
        }
        let chunk = Arc::new(chunk);
        self.cache.insert(id, Arc::clone(&chunk));
        Ok(Some(chunk))
    }

    /// Overflow suffixes that begin with `query`.
    fn search_overflow(&self, query: &Query) -> Vec<u32> {
        let Some(entry) = self.manifest.overflow() else {
            return Vec::new();
        };
        let n = self.seq.len();
        let codes = query.codes();
        (n - entry.suffix_count..n)
            .filter(|&i| {
                (n - i) as usize >= codes.len()
                    && codes
                        .iter()
                        .enumerate()
                        .all(|(k, &c)| self.seq.code(i + k as u32) == c)
            })
            .collect()
    }

    /// Matches from each routed partition, before merging.
    pub fn search_by_partition(&self, query: &Query) -> Result<Vec<(PartitionId, Vec<u32>)>> {
        let p = self.manifest.p;
        let overflow = overflow_id(p);
        let mut out = Vec::new();
        for id in route(query, p) {
            let hits = if id == overflow {
                self.search_overflow(query)
            } else {
                match self.chunk(id)? {
                    Some(chunk) => chunk.traverse(&self.seq, query.codes()),
                    None => continue,
                }
            };
            if !hits.is_empty() {
                out.push((id, hits));
            }
        }
        Ok(out)
    }

    pub fn search(&self, query: &Query) -> Result<MatchSet> {
        let parts = self.search_by_partition(query)?;
        let total: usize = parts.iter().map(|(_, hits)| hits.len()).sum();
        let mut positions: Vec<u32> = Vec::with_capacity(total);
        for (_, hits) in parts {
            positions.extend(hits);
        }
        positions.sort_unstable();
        positions.dedup();
        debug_assert_eq!(positions.len(), total, "partitions overlapped");
        Ok(MatchSet { positions })
    }

    pub fn search_exact(&self, pattern: &str) -> Result<MatchSet> {
        self.search(&Query::parse(pattern)?)
    }

    /// Loads every chunk and checks it against the manifest and the tree
    /// invariants. Path labels are spelled out for every `leaf_stride`-th
    /// terminal.
    pub fn verify(&self, leaf_stride: u32) -> Result<VerifyReport> {
        let m = &self.manifest;
        let p = m.p;
        let bad = |reason: String| Error::CorruptChunk {
            path: self.dir.clone(),
            reason,
        };
        let mut report = VerifyReport::default();
        for entry in &m.entries {
            if entry.is_overflow() {
                let expected = (p - 1).min(m.n);
                if entry.suffix_count != expected {
                    return Err(bad(format!(
                        "overflow holds {} suffixes, expected {expected}",
                        entry.suffix_count
                    )));
                }
                continue;
            }
            let chunk = self.chunk(entry.partition_id)?.expect("non-overflow entries have files");
            let structure = check_structure(&chunk, &self.seq, leaf_stride)
                .map_err(|e| bad(format!("partition {}: {e}", entry.partition_id)))?;
            for pos in chunk.terminals_below(crate::subtree::ROOT) {
                if prefix_id(&self.seq, pos, p) != entry.partition_id {
                    return Err(bad(format!(
                        "suffix {pos} filed under partition {}",
                        entry.partition_id
                    )));
                }
            }
            report.chunks += 1;
            report.terminals += structure.terminals as u64;
            report.labels_checked += structure.labels_checked as u64;
        }
        if m.total_suffixes() != m.n as u64 {
            return Err(bad(format!(
                "manifest covers {} suffixes of {}",
                m.total_suffixes(),
                m.n
            )));
        }
        Ok(report)
    }

    /// Per-partition sizes straight from the manifest.
    pub fn stats(&self) -> IndexStats {
        let partitions = self
            .manifest
            .entries
            .iter()
            .filter(|e| !e.is_overflow())
            .map(|e| PartitionStats {
                partition_id: e.partition_id,
                prefix: e.prefix.clone().unwrap_or_default(),
                node_count: e.node_count,
                suffix_count: e.suffix_count,
                bytes: CHUNK_HEADER_LEN as u64 + e.node_count as u64 * RECORD_SIZE as u64,
            })
            .collect();
        IndexStats {
            n: self.manifest.n,
            p: self.manifest.p,
            overflow: self.manifest.overflow().map_or(0, |e| e.suffix_count),
            partitions,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub chunks: u32,
    pub terminals: u64,
    pub labels_checked: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionStats {
    pub partition_id: PartitionId,
    pub prefix: String,
    pub node_count: u32,
    pub suffix_count: u32,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexStats {
    pub n: u32,
    pub p: u32,
    pub overflow: u32,
    pub partitions: Vec<PartitionStats>,
}

impl IndexStats {
    pub fn total_nodes(&self) -> u64 {
        self.partitions.iter().map(|s| s.node_count as u64).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.partitions.iter().map(|s| s.bytes).sum()
    }

    /// Stored tree bytes per indexed base.
    pub fn expansion_factor(&self) -> f64 {
        self.total_bytes() as f64 / self.n as f64
    }
}
