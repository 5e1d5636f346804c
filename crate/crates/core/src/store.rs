//! On-disk chunk files and the index manifest.
//!
//! A chunk file is a 31-byte header followed by the record array exactly as
//! it sits in memory:
//!
//! ```text
//! magic "GSTC" | version u16 | partition u32 | p u8 | n u32 |
//! node_count u32 | suffix_count u32 | checksum u64 | records...
//! ```
//!
//! The checksum is FNV-1a/64 over the record bytes. Storing is one header
//! write plus one record write; loading is one header read plus one record
//! read.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fnv::fnv1a64;
use crate::partition::{parse_prefix, prefix_text, PartitionId};
use crate::subtree::{SubtreeChunk, CHUNK_HEADER_LEN, RECORD_SIZE};

pub const CHUNK_MAGIC: &[u8; 4] = b"GSTC";
pub const CHUNK_VERSION: u16 = 1;
pub const MANIFEST_NAME: &str = "index.manifest";
pub const SEQUENCE_NAME: &str = "sequence.gseq";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkFileHeader {
    pub version: u16,
    pub partition_id: PartitionId,
    pub p: u8,
    pub n: u32,
    pub node_count: u32,
    pub suffix_count: u32,
    pub checksum: u64,
}

impl ChunkFileHeader {
    pub fn for_chunk(chunk: &SubtreeChunk) -> Self {
        ChunkFileHeader {
            version: CHUNK_VERSION,
            partition_id: chunk.partition_id(),
            p: chunk.prefix_len(),
            n: chunk.seq_len(),
            node_count: chunk.node_count(),
            suffix_count: chunk.suffix_count(),
            checksum: chunk.checksum(),
        }
    }

    pub fn to_bytes(&self) -> [u8; CHUNK_HEADER_LEN] {
        let mut out = [0u8; CHUNK_HEADER_LEN];
        out[0..4].copy_from_slice(CHUNK_MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..10].copy_from_slice(&self.partition_id.to_le_bytes());
        out[10] = self.p;
        out[11..15].copy_from_slice(&self.n.to_le_bytes());
        out[15..19].copy_from_slice(&self.node_count.to_le_bytes());
        out[19..23].copy_from_slice(&self.suffix_count.to_le_bytes());
        out[23..31].copy_from_slice(&self.checksum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8; CHUNK_HEADER_LEN]) -> std::result::Result<Self, &'static str> {
        if &bytes[0..4] != CHUNK_MAGIC {
            return Err("bad magic");
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let header = ChunkFileHeader {
            version: u16::from_le_bytes([bytes[4], bytes[5]]),
            partition_id: u32_at(6),
            p: bytes[10],
            n: u32_at(11),
            node_count: u32_at(15),
            suffix_count: u32_at(19),
            checksum: u64::from_le_bytes(bytes[23..31].try_into().unwrap()),
        };
        if header.version != CHUNK_VERSION {
            return Err("unsupported version");
        }
        Ok(header)
    }
}

/// System-call counts observed while storing or loading a chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IoTrace {
    pub writes: u32,
    pub reads: u32,
    /// Reads that landed in the record region.
    pub record_reads: u32,
}

struct Counted<'a, T> {
    inner: T,
    trace: &'a mut IoTrace,
}

impl<T: Write> Write for Counted<'_, T> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.trace.writes += 1;
        self.inner.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

impl<T: Read> Read for Counted<'_, T> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.trace.reads += 1;
        self.inner.read(buf)
    }
}

pub fn chunk_file_name(id: PartitionId) -> String {
    format!("chunk_{id}.gstc")
}

/// Writes `chunk` to `dir` under its canonical name and returns its manifest
/// entry. The file only appears under the final name once fully written.
pub fn store_chunk(chunk: &SubtreeChunk, dir: &Path) -> Result<ManifestEntry> {
    store_chunk_traced(chunk, dir).map(|(entry, _)| entry)
}

pub fn store_chunk_traced(chunk: &SubtreeChunk, dir: &Path) -> Result<(ManifestEntry, IoTrace)> {
    let name = chunk_file_name(chunk.partition_id());
    let path = dir.join(&name);
    let tmp = dir.join(format!("{name}.tmp"));
    let header = ChunkFileHeader::for_chunk(chunk);
    let mut trace = IoTrace::default();

    let written = File::create(&tmp).and_then(|file| {
        let mut out = Counted {
            inner: file,
            trace: &mut trace,
        };
        out.write_all(&header.to_bytes())?;
        out.write_all(chunk.record_bytes())?;
        Ok(())
    });
    if let Err(e) = written.and_then(|_| fs::rename(&tmp, &path)) {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(format!("storing {}", path.display()), e));
    }

    let entry = ManifestEntry {
        partition_id: chunk.partition_id(),
        prefix: prefix_text(chunk.partition_id(), chunk.prefix_len() as u32),
        file: Some(name),
        node_count: chunk.node_count(),
        suffix_count: chunk.suffix_count(),
    };
    Ok((entry, trace))
}

pub fn load_chunk(path: &Path) -> Result<SubtreeChunk> {
    load_chunk_traced(path).map(|(chunk, _)| chunk)
}

pub fn load_chunk_traced(path: &Path) -> Result<(SubtreeChunk, IoTrace)> {
    let corrupt = |reason: &str| Error::CorruptChunk {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let io_err = |e| Error::io(format!("loading {}", path.display()), e);

    let mut file = File::open(path).map_err(io_err)?;
    let file_len = file.metadata().map_err(io_err)?.len();
    let mut trace = IoTrace::default();

    let mut raw = [0u8; CHUNK_HEADER_LEN];
    if file_len < CHUNK_HEADER_LEN as u64 {
        return Err(corrupt("truncated header"));
    }
    Counted {
        inner: &mut file,
        trace: &mut trace,
    }
    .read_exact(&mut raw)
    .map_err(io_err)?;
    let header = ChunkFileHeader::from_bytes(&raw).map_err(corrupt)?;

    let record_len = header.node_count as u64 * RECORD_SIZE as u64;
    if header.node_count == 0 || file_len != CHUNK_HEADER_LEN as u64 + record_len {
        return Err(corrupt("file length does not match node count"));
    }
    let mut records = vec![0u8; record_len as usize];
    let before = trace.reads;
    Counted {
        inner: &mut file,
        trace: &mut trace,
    }
    .read_exact(&mut records)
    .map_err(io_err)?;
    trace.record_reads = trace.reads - before;

    if fnv1a64(&records) != header.checksum {
        return Err(corrupt("checksum mismatch"));
    }
    let chunk = SubtreeChunk::from_image(
        header.partition_id,
        header.p,
        header.n,
        header.suffix_count,
        records,
    );
    Ok((chunk, trace))
}

/// One line of the manifest. `prefix == None` marks the overflow partition,
/// which has no chunk file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub partition_id: PartitionId,
    pub prefix: Option<String>,
    pub file: Option<String>,
    pub node_count: u32,
    pub suffix_count: u32,
}

impl ManifestEntry {
    pub fn is_overflow(&self) -> bool {
        self.prefix.is_none()
    }
}

/// Catalog of the chunks making up one index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexManifest {
    pub n: u32,
    pub p: u32,
    pub seq_hash: u64,
    /// Ascending by partition id; the overflow entry, if any, is last.
    pub entries: Vec<ManifestEntry>,
}

impl IndexManifest {
    pub fn entry(&self, id: PartitionId) -> Option<&ManifestEntry> {
        self.entries
            .binary_search_by_key(&id, |e| e.partition_id)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn overflow(&self) -> Option<&ManifestEntry> {
        self.entries.last().filter(|e| e.is_overflow())
    }

    pub fn total_nodes(&self) -> u64 {
        self.entries.iter().map(|e| e.node_count as u64).sum()
    }

    pub fn total_suffixes(&self) -> u64 {
        self.entries.iter().map(|e| e.suffix_count as u64).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "GSTI v1 n={} p={} seqhash={:016x}\n",
            self.n, self.p, self.seq_hash
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                e.partition_id,
                e.prefix.as_deref().unwrap_or("OVERFLOW"),
                e.file.as_deref().unwrap_or("-"),
                e.node_count,
                e.suffix_count
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, reason: String| Error::MalformedManifest { line, reason };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, head) = lines
            .next()
            .ok_or_else(|| bad(1, "empty manifest".into()))?;
        let fields: Vec<&str> = head.split(' ').collect();
        if fields.len() != 5 || fields[0] != "GSTI" || fields[1] != "v1" {
            return Err(bad(1, format!("unrecognized header {head:?}")));
        }
        let value = |field: &str, key: &str| -> Result<String> {
            field
                .strip_prefix(key)
                .and_then(|v| v.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| bad(1, format!("expected {key}=..., found {field:?}")))
        };
        let n: u32 = value(fields[2], "n")?
            .parse()
            .map_err(|e| bad(1, format!("n: {e}")))?;
        let p: u32 = value(fields[3], "p")?
            .parse()
            .map_err(|e| bad(1, format!("p: {e}")))?;
        crate::partition::check_prefix_len(p).map_err(|e| bad(1, e.to_string()))?;
        let seq_hash = u64::from_str_radix(&value(fields[4], "seqhash")?, 16)
            .map_err(|e| bad(1, format!("seqhash: {e}")))?;

        let overflow_id = crate::partition::overflow_id(p);
        let mut entries: Vec<ManifestEntry> = Vec::new();
        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(' ').collect();
            if cols.len() != 5 {
                return Err(bad(no, format!("expected 5 fields, found {}", cols.len())));
            }
            let num = |s: &str| s.parse::<u32>().map_err(|e| bad(no, format!("{s:?}: {e}")));
            let partition_id = num(cols[0])?;
            let prefix = match cols[1] {
                "OVERFLOW" => None,
                text => Some(text.to_string()),
            };
            match &prefix {
                None if partition_id != overflow_id => {
                    return Err(bad(no, format!("overflow id must be {overflow_id}")))
                }
                Some(text)
                    if text.len() != p as usize || parse_prefix(text) != Some(partition_id) =>
                {
                    return Err(bad(no, format!("prefix {text} does not match id {partition_id}")))
                }
                _ => {}
            }
            let file = match (cols[2], &prefix) {
                ("-", None) => None,
                (name, Some(_)) if name != "-" && !name.contains('/') => Some(name.to_string()),
                (name, _) => return Err(bad(no, format!("unexpected file name {name:?}"))),
            };
            if entries.last().is_some_and(|e| e.partition_id >= partition_id) {
                return Err(bad(no, "entries out of order".into()));
            }
            entries.push(ManifestEntry {
                partition_id,
                prefix,
                file,
                node_count: num(cols[3])?,
                suffix_count: num(cols[4])?,
            });
        }
        let manifest = IndexManifest {
            n,
            p,
            seq_hash,
            entries,
        };
        if manifest.total_suffixes() != n as u64 {
            return Err(bad(
                0,
                format!("suffix counts sum to {}, expected {n}", manifest.total_suffixes()),
            ));
        }
        Ok(manifest)
    }
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_NAME)
}

pub fn write_manifest(manifest: &IndexManifest, dir: &Path) -> Result<()> {
    let path = manifest_path(dir);
    let tmp = dir.join(format!("{MANIFEST_NAME}.tmp"));
    fs::write(&tmp, manifest.to_text())
        .and_then(|_| fs::rename(&tmp, &path))
        .map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(format!("writing {}", path.display()), e)
        })
}

pub fn read_manifest(dir: &Path) -> Result<IndexManifest> {
    let path = manifest_path(dir);
    let text = match fs::read_to_string(&path) {
        Ok(text) => text,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(Error::MissingManifest(dir.to_path_buf()))
        }
        Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
    };
    IndexManifest::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::EncodedSequence;
    use crate::partition::SuffixPositionList;
    use crate::subtree::build_subtree;

    const X: &str = "ATAGCTAGATCG";

    fn chunk_a() -> (EncodedSequence, SubtreeChunk) {
        let x = EncodedSequence::from_acgt(X).unwrap();
        let list = SuffixPositionList {
            partition_id: 0,
            positions: vec![0, 2, 6, 8],
        };
        let chunk = build_subtree(&x, &list, 1, u64::MAX).unwrap();
        (x, chunk)
    }

    #[test]
    fn header_is_31_bytes_and_round_trips() {
        let (_, chunk) = chunk_a();
        let header = ChunkFileHeader::for_chunk(&chunk);
        let bytes = header.to_bytes();
        assert_eq!(&bytes[..4], b"GSTC");
        assert_eq!(ChunkFileHeader::from_bytes(&bytes).unwrap(), header);
    }

    #[test]
    fn store_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let (x, chunk) = chunk_a();
        let (entry, trace) = store_chunk_traced(&chunk, dir.path()).unwrap();
        assert_eq!(trace.writes, 2);
        assert_eq!(entry.prefix.as_deref(), Some("A"));
        assert_eq!(entry.suffix_count, 4);
        let path = dir.path().join(entry.file.unwrap());
        let len = fs::metadata(&path).unwrap().len();
        assert_eq!(len, 31 + chunk.node_count() as u64 * 18);

        let (loaded, trace) = load_chunk_traced(&path).unwrap();
        assert_eq!(trace.record_reads, 1);
        assert_eq!(loaded.record_bytes(), chunk.record_bytes());
        assert_eq!(loaded.traverse(&x, &[0, 3]), vec![0, 8]);
        assert!(!dir.path().join("chunk_0.gstc.tmp").exists());
    }

    #[test]
    fn damaged_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, chunk) = chunk_a();
        let entry = store_chunk(&chunk, dir.path()).unwrap();
        let path = dir.path().join(entry.file.unwrap());
        let good = fs::read(&path).unwrap();

        fs::write(&path, &good[..good.len() - 1]).unwrap();
        assert!(matches!(load_chunk(&path), Err(Error::CorruptChunk { .. })));

        fs::write(&path, &good[..10]).unwrap();
        assert!(matches!(load_chunk(&path), Err(Error::CorruptChunk { .. })));

        let mut flipped = good.clone();
        flipped[CHUNK_HEADER_LEN + 20] ^= 0x10;
        fs::write(&path, &flipped).unwrap();
        assert!(matches!(load_chunk(&path), Err(Error::CorruptChunk { .. })));

        let mut magic = good.clone();
        magic[0] = b'X';
        fs::write(&path, &magic).unwrap();
        assert!(matches!(load_chunk(&path), Err(Error::CorruptChunk { .. })));

        assert!(matches!(
            load_chunk(&dir.path().join("nope.gstc")),
            Err(Error::Io { .. })
        ));
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn failed_write_leaves_no_final_file() {
        let dir = tempfile::tempdir().unwrap();
        let (_, chunk) = chunk_a();
        std::os::unix::fs::symlink("/dev/full", dir.path().join("chunk_0.gstc.tmp")).unwrap();
        let err = store_chunk(&chunk, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(!dir.path().join("chunk_0.gstc").exists());
        assert!(!dir.path().join("chunk_0.gstc.tmp").exists());
    }

    fn sample_manifest() -> IndexManifest {
        IndexManifest {
            n: 12,
            p: 2,
            seq_hash: 0xdead_beef,
            entries: vec![
                ManifestEntry {
                    partition_id: 3,
                    prefix: Some("AT".into()),
                    file: Some("chunk_3.gstc".into()),
                    node_count: 5,
                    suffix_count: 11,
                },
                ManifestEntry {
                    partition_id: 16,
                    prefix: None,
                    file: None,
                    node_count: 0,
                    suffix_count: 1,
                },
            ],
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample_manifest();
        write_manifest(&m, dir.path()).unwrap();
        let text = fs::read_to_string(manifest_path(dir.path())).unwrap();
        assert_eq!(
            text,
            "GSTI v1 n=12 p=2 seqhash=00000000deadbeef\n3 AT chunk_3.gstc 5 11\n16 OVERFLOW - 0 1\n"
        );
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        assert_eq!(m.overflow().unwrap().suffix_count, 1);
        assert_eq!(m.entry(3).unwrap().node_count, 5);
        assert!(m.entry(4).is_none());
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::MissingManifest(_))));
        let good = sample_manifest().to_text();
        for bad in [
            good.replace("GSTI", "GSTX"),
            good.replace(" 11\n", " 10\n"),
            good.replace("3 AT", "3 AG"),
            good.replace("16 OVERFLOW", "15 OVERFLOW"),
            good.replace("chunk_3.gstc 5", "chunk_3.gstc five"),
            good.replace("n=12", "n=x"),
        ] {
            assert!(
                matches!(IndexManifest::parse(&bad), Err(Error::MalformedManifest { .. })),
                "accepted {bad:?}"
            );
        }
    }
}
