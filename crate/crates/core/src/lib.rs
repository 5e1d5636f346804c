//! Disk-backed suffix-tree index for DNA sequences.
//!
//! The input genome is packed at two bits per base and its suffixes are split
//! by their first `p` bases into `4^p` partitions. Each partition's suffix
//! subtree is built inside one contiguous array of fixed-size records whose
//! links are relative record indices, then written to disk as a single
//! sequential transfer. Partitions are independent, so several are built at
//! once within a memory budget.
//!
//! ```
//! use gstree::{build_index_from_sequence, BuildConfig, EncodedSequence, Index};
//!
//! let dir = tempfile::tempdir().unwrap();
//! let seq = EncodedSequence::from_acgt("ATAGCTAGATCG").unwrap();
//! let mut cfg = BuildConfig::new(vec![], dir.path());
//! cfg.prefix_len = Some(1);
//! build_index_from_sequence(&seq, &cfg).unwrap();
//!
//! let index = Index::open(dir.path()).unwrap();
//! assert_eq!(index.search_exact("AGATCG").unwrap().positions, vec![6]);
//! ```

pub mod codec;
pub mod error;
pub mod fnv;
pub mod harness;
pub mod partition;
pub mod query;
pub mod scheduler;
pub mod store;
pub mod subtree;

pub use codec::{encode_base, ingest_fasta, ingest_paths, BaseCode, EncodedSequence, IngestReport};
pub use error::{Error, ErrorKind, Result};
pub use partition::{
    build_position_lists, count_prefix_frequencies, min_prefix_length, prefix_id, PartitionId,
    PartitionPlan, SuffixPositionList,
};
pub use query::{route, Index, MatchSet, Query};
pub use scheduler::{
    build_index, build_index_from_sequence, estimate_expansion_factor, plan_batches, BuildBatch,
    BuildConfig, BuildReport,
};
pub use store::{load_chunk, read_manifest, store_chunk, write_manifest, IndexManifest, ManifestEntry};
pub use subtree::{build_subtree, match_label, NodeRecord, SubtreeChunk};
