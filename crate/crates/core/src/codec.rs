//! 2-bit DNA packing and FASTA ingestion.
//!
//! Base `i` lives in bits `2*(i % 4)..2*(i % 4)+1` of byte `i / 4`, so base 0
//! occupies the two least-significant bits of the first byte. The end-of-text
//! sentinel `$` is never stored: it is implied at position `n`.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fnv::fnv1a64;

/// Largest supported sequence. `n` itself marks terminal edges, so it must
/// stay representable as a `u32` distinct from the NIL link value.
pub const MAX_SEQUENCE_LEN: u64 = u32::MAX as u64 - 1;

/// Symbol returned by [`EncodedSequence::symbol`] at position `n`.
pub const SENTINEL: u8 = 4;

const CACHE_MAGIC: &[u8; 4] = b"GSEQ";
const CACHE_VERSION: u16 = 1;

/// One nucleotide, A=0, C=1, G=2, T=3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BaseCode(u8);

impl BaseCode {
    pub const A: BaseCode = BaseCode(0);
    pub const C: BaseCode = BaseCode(1);
    pub const G: BaseCode = BaseCode(2);
    pub const T: BaseCode = BaseCode(3);

    pub fn from_code(code: u8) -> Option<BaseCode> {
        (code < 4).then_some(BaseCode(code))
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn to_char(self) -> char {
        b"ACGT"[self.0 as usize] as char
    }
}

impl fmt::Display for BaseCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_char())
    }
}

const INVALID: u8 = 0xff;
const SKIP: u8 = 0xfe;

const fn byte_table() -> [u8; 256] {
    let mut t = [INVALID; 256];
    t[b'A' as usize] = 0;
    t[b'a' as usize] = 0;
    t[b'C' as usize] = 1;
    t[b'c' as usize] = 1;
    t[b'G' as usize] = 2;
    t[b'g' as usize] = 2;
    t[b'T' as usize] = 3;
    t[b't' as usize] = 3;
    t[b' ' as usize] = SKIP;
    t[b'\t' as usize] = SKIP;
    t[b'\r' as usize] = SKIP;
    t[b'\n' as usize] = SKIP;
    t[0x0b] = SKIP;
    t[0x0c] = SKIP;
    t
}

static BYTE_TABLE: [u8; 256] = byte_table();

/// Maps `A/C/G/T` (either case) to its 2-bit code.
pub fn encode_base(ch: char) -> Result<BaseCode> {
    if ch.is_ascii() {
        let code = BYTE_TABLE[ch as usize];
        if code < 4 {
            return Ok(BaseCode(code));
        }
    }
    Err(Error::UnidentifiedBase(ch))
}

/// An immutable, 2-bit packed DNA sequence.
#[derive(Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    packed: Vec<u8>,
    len: u32,
    sources: Vec<String>,
}

impl fmt::Debug for EncodedSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncodedSequence")
            .field("len", &self.len)
            .field("sources", &self.sources)
            .finish()
    }
}

/// Appends 2-bit codes one at a time.
#[derive(Debug, Default)]
pub struct SequenceBuilder {
    packed: Vec<u8>,
    len: u64,
}

impl SequenceBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bases: usize) -> Self {
        SequenceBuilder {
            packed: Vec::with_capacity(bases.div_ceil(4)),
            len: 0,
        }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, base: BaseCode) -> Result<()> {
        if self.len >= MAX_SEQUENCE_LEN {
            return Err(Error::SequenceTooLong {
                max: MAX_SEQUENCE_LEN,
            });
        }
        let slot = (self.len % 4) as u32;
        if slot == 0 {
            self.packed.push(base.0);
        } else {
            *self.packed.last_mut().unwrap() |= base.0 << (2 * slot);
        }
        self.len += 1;
        Ok(())
    }

    pub fn finish(self, sources: Vec<String>) -> Result<EncodedSequence> {
        if self.len == 0 {
            return Err(Error::EmptySequence);
        }
        Ok(EncodedSequence {
            packed: self.packed,
            len: self.len as u32,
            sources,
        })
    }
}

impl EncodedSequence {
    /// Packs a plain `A/C/G/T` string; any other character is an error.
    pub fn from_acgt(text: &str) -> Result<Self> {
        let mut builder = SequenceBuilder::with_capacity(text.len());
        for ch in text.chars() {
            builder.push(encode_base(ch)?)?;
        }
        builder.finish(Vec::new())
    }

    pub fn from_codes(codes: &[BaseCode]) -> Result<Self> {
        let mut builder = SequenceBuilder::with_capacity(codes.len());
        for &c in codes {
            builder.push(c)?;
        }
        builder.finish(Vec::new())
    }

    /// Number of bases, `n`.
    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// The packed bytes, exactly `ceil(n / 4)` of them.
    pub fn packed_bytes(&self) -> &[u8] {
        &self.packed
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    /// FNV-1a/64 over the packed bytes.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(&self.packed)
    }

    pub fn base_at(&self, i: u32) -> Result<BaseCode> {
        if i >= self.len {
            return Err(Error::OutOfRange {
                pos: i as u64,
                len: self.len as u64,
            });
        }
        Ok(BaseCode(self.code(i)))
    }

    /// Raw code of base `i`. `i` must be below `n`.
    #[inline]
    pub fn code(&self, i: u32) -> u8 {
        debug_assert!(i < self.len);
        (self.packed[(i >> 2) as usize] >> (2 * (i & 3))) & 3
    }

    /// Like [`code`](Self::code) but returns [`SENTINEL`] at position `n`.
    #[inline]
    pub fn symbol(&self, i: u32) -> u8 {
        if i >= self.len {
            SENTINEL
        } else {
            self.code(i)
        }
    }

    /// Bases `i..i+32` packed two bits each, base `i` lowest. Positions at or
    /// past `n` read as zero.
    #[inline]
    pub fn word(&self, i: u32) -> u64 {
        let byte = (i >> 2) as usize;
        let shift = 2 * (i & 3);
        let bytes = &self.packed;
        let (lo, hi) = if byte + 9 <= bytes.len() {
            (
                u64::from_le_bytes(bytes[byte..byte + 8].try_into().unwrap()),
                bytes[byte + 8] as u64,
            )
        } else {
            let mut buf = [0u8; 9];
            if byte < bytes.len() {
                let tail = &bytes[byte..];
                buf[..tail.len()].copy_from_slice(tail);
            }
            (
                u64::from_le_bytes(buf[..8].try_into().unwrap()),
                buf[8] as u64,
            )
        };
        if shift == 0 {
            lo
        } else {
            (lo >> shift) | (hi << (64 - shift))
        }
    }

    /// Length of the common prefix of the suffixes at `x` and `y`, counting
    /// real bases only and never more than `limit`.
    pub fn common_prefix(&self, x: u32, y: u32, limit: u32) -> u32 {
        let room = self.len - x.max(y).min(self.len);
        let limit = limit.min(room);
        let mut k = 0u32;
        while k < limit {
            let diff = self.word(x + k) ^ self.word(y + k);
            if diff != 0 {
                let same = diff.trailing_zeros() / 2;
                return (k + same).min(limit);
            }
            k += 32;
        }
        limit
    }

    pub fn decode_range(&self, a: u32, b: u32) -> Result<String> {
        if a > b || b >= self.len {
            return Err(Error::OutOfRange {
                pos: if a > b { a as u64 } else { b as u64 },
                len: self.len as u64,
            });
        }
        Ok((a..=b).map(|i| BaseCode(self.code(i)).to_char()).collect())
    }

    pub fn to_text(&self) -> String {
        self.decode_range(0, self.len - 1).unwrap()
    }

    /// Copies bases `start..start+len` into a fresh sequence.
    pub fn slice(&self, start: u32, len: u32) -> Result<Self> {
        let end = start as u64 + len as u64;
        if len == 0 || end > self.len as u64 {
            return Err(Error::OutOfRange {
                pos: end,
                len: self.len as u64,
            });
        }
        let mut builder = SequenceBuilder::with_capacity(len as usize);
        for i in start..start + len {
            builder.push(BaseCode(self.code(i)))?;
        }
        builder.finish(self.sources.clone())
    }

    /// Writes the `GSEQ` cache image.
    pub fn write_cache<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut header = Vec::with_capacity(10);
        header.extend_from_slice(CACHE_MAGIC);
        header.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        header.extend_from_slice(&self.len.to_le_bytes());
        out.write_all(&header)?;
        out.write_all(&self.packed)?;
        out.flush()
    }

    pub fn read_cache<R: Read>(mut input: R) -> Result<Self> {
        let bad = |reason: &str| Error::CorruptChunk {
            path: "sequence cache".into(),
            reason: reason.to_string(),
        };
        let mut header = [0u8; 10];
        input
            .read_exact(&mut header)
            .map_err(|_| bad("truncated header"))?;
        if &header[..4] != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        if u16::from_le_bytes([header[4], header[5]]) != CACHE_VERSION {
            return Err(bad("unsupported version"));
        }
        let len = u32::from_le_bytes(header[6..10].try_into().unwrap());
        if len == 0 || len as u64 > MAX_SEQUENCE_LEN {
            return Err(bad("invalid length"));
        }
        let mut packed = vec![0u8; (len as usize).div_ceil(4)];
        input
            .read_exact(&mut packed)
            .map_err(|_| bad("truncated body"))?;
        let used = len % 4;
        if used != 0 && packed.last().unwrap() >> (2 * used) != 0 {
            return Err(bad("nonzero padding bits"));
        }
        Ok(EncodedSequence {
            packed,
            len,
            sources: Vec::new(),
        })
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::read_cache(BufReader::new(file))
    }
}

/// Counts reported by an ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestReport {
    pub bases: u64,
    pub dropped: u64,
}

/// Concatenates the A/C/G/T content of FASTA sources, dropping everything
/// else that is not a header line or whitespace.
pub fn ingest_fasta<R: BufRead>(
    inputs: impl IntoIterator<Item = (String, R)>,
) -> Result<(EncodedSequence, IngestReport)> {
    let mut builder = SequenceBuilder::new();
    let mut dropped = 0u64;
    let mut sources = Vec::new();
    let mut line = Vec::new();
    for (name, mut reader) in inputs {
        loop {
            line.clear();
            let read = reader
                .read_until(b'\n', &mut line)
                .map_err(|e| Error::io(format!("reading {name}"), e))?;
            if read == 0 {
                break;
            }
            if line[0] == b'>' {
                continue;
            }
            for &ch in &line {
                match BYTE_TABLE[ch as usize] {
                    SKIP => {}
                    INVALID => dropped += 1,
                    code => builder.push(BaseCode(code))?,
                }
            }
        }
        sources.push(name);
    }
    if sources.is_empty() {
        return Err(Error::Config("no input sources".into()));
    }
    let bases = builder.len();
    let seq = builder.finish(sources)?;
    Ok((seq, IngestReport { bases, dropped }))
}

/// Opens and ingests FASTA files in order.
pub fn ingest_paths<P: AsRef<Path>>(paths: &[P]) -> Result<(EncodedSequence, IngestReport)> {
    let mut readers = Vec::with_capacity(paths.len());
    for path in paths {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        readers.push((
            path.display().to_string(),
            BufReader::with_capacity(1 << 20, file),
        ));
    }
    ingest_fasta(readers)
}
