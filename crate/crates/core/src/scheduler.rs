//! Build orchestration: expansion-factor sampling, memory-budget batching and
//! the parallel per-partition build.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::{info, warn};

use crate::codec::{ingest_paths, EncodedSequence, IngestReport};
use crate::error::{Error, Result};
use crate::partition::{
    build_position_lists, min_prefix_length, read_spill, PartitionId, PartitionPlan, SpillFile,
    MAX_PREFIX_LEN,
};
use crate::store::{
    chunk_file_name, store_chunk, write_manifest, IndexManifest, ManifestEntry, MANIFEST_NAME,
    SEQUENCE_NAME,
};
use crate::subtree::{build_subtree, SubtreeChunk, CHUNK_HEADER_LEN};

/// Used when the factor is neither given nor measurable.
pub const DEFAULT_EXPANSION_FACTOR: f64 = 32.0;
pub const MIN_SAMPLE_LEN: u32 = 1000;
const SAMPLE_COUNT: u32 = 4;
const MAX_SAMPLE_LEN: u32 = 1 << 16;

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    /// Total bytes for the packed sequence plus all resident trees.
    pub memory_budget_total: u64,
    pub workers: usize,
    pub prefix_len: Option<u32>,
    pub expansion_factor: Option<f64>,
    pub keep_spills: bool,
    /// Defaults to `<out_dir>/spill`.
    pub spill_dir: Option<PathBuf>,
}

impl BuildConfig {
    pub fn new(inputs: Vec<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        BuildConfig {
            inputs,
            out_dir: out_dir.into(),
            memory_budget_total: 1 << 30,
            workers: 1,
            prefix_len: None,
            expansion_factor: None,
            keep_spills: false,
            spill_dir: None,
        }
    }

    fn spill_dir(&self) -> PathBuf {
        self.spill_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("spill"))
    }
}

/// Partitions built together; their estimates sum to at most the budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildBatch {
    pub partitions: Vec<PartitionId>,
    pub estimated_bytes: u64,
}

/// Builds full subtrees of `k` evenly spaced windows and returns the largest
/// ratio of chunk bytes to window length.
pub fn estimate_expansion_factor(seq: &EncodedSequence, k: u32, sample_len: u32) -> Result<f64> {
    if sample_len < MIN_SAMPLE_LEN {
        return Err(Error::SampleTooSmall(sample_len as u64));
    }
    let n = seq.len() as u64;
    if k == 0 || k as u64 * sample_len as u64 > n {
        return Err(Error::Config(format!(
            "{k} samples of {sample_len} bases do not fit a sequence of {n}"
        )));
    }
    let span = n - sample_len as u64;
    let mut f = 0.0f64;
    for i in 0..k as u64 {
        let start = if k == 1 { 0 } else { span * i / (k as u64 - 1) };
        let window = seq.slice(start as u32, sample_len)?;
        let list = crate::partition::SuffixPositionList {
            partition_id: 0,
            positions: (0..sample_len).collect(),
        };
        let chunk = build_subtree(&window, &list, 0, u64::MAX)?;
        f = f.max(chunk.stored_bytes() as f64 / sample_len as f64);
    }
    Ok(f)
}

/// First-fit decreasing packing of `(partition, estimated bytes)` items into
/// batches whose estimates sum to at most `budget`.
pub fn plan_batches(estimates: &[(PartitionId, u64)], budget: u64) -> Result<Vec<BuildBatch>> {
    if budget == 0 {
        return Err(Error::InvalidBudget);
    }
    if let Some(&(partition, bytes)) = estimates.iter().find(|(_, b)| *b > budget) {
        return Err(Error::PartitionTooLarge {
            partition,
            bytes,
            budget,
        });
    }
    let mut order: Vec<(PartitionId, u64)> = estimates.to_vec();
    order.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut batches: Vec<BuildBatch> = Vec::new();
    for (id, bytes) in order {
        match batches
            .iter_mut()
            .find(|b| b.estimated_bytes + bytes <= budget)
        {
            Some(batch) => {
                batch.partitions.push(id);
                batch.estimated_bytes += bytes;
            }
            None => batches.push(BuildBatch {
                partitions: vec![id],
                estimated_bytes: bytes,
            }),
        }
    }
    Ok(batches)
}

/// Batches for every non-empty regular partition of `plan`.
pub fn plan_partition_batches(plan: &PartitionPlan) -> Result<Vec<BuildBatch>> {
    let estimates: Vec<(PartitionId, u64)> = plan
        .non_empty()
        .map(|j| (j, plan.estimated_tree_bytes(j)))
        .collect();
    plan_batches(&estimates, plan.memory_budget)
}

/// What a finished build produced, plus its measurements.
#[derive(Debug, Clone)]
pub struct BuildReport {
    pub manifest: IndexManifest,
    pub ingest: IngestReport,
    pub p: u32,
    pub expansion_factor: f64,
    pub memory_budget: u64,
    pub batches: Vec<BuildBatch>,
    /// Largest sum of chunk bytes held by concurrent workers: a chunk counts
    /// at its estimate while it is built and at its real size once complete.
    pub peak_tree_bytes: u64,
    /// How many times each spill file was opened for reading.
    pub spill_reads: HashMap<PartitionId, u32>,
    pub elapsed: Duration,
}

impl BuildReport {
    /// Regular partitions that received a chunk.
    pub fn chunk_count(&self) -> usize {
        self.manifest
            .entries
            .iter()
            .filter(|e| !e.is_overflow())
            .count()
    }
}

/// Ingests the configured inputs and builds the index.
pub fn build_index(cfg: &BuildConfig) -> Result<BuildReport> {
    if cfg.inputs.is_empty() {
        return Err(Error::Config("no input files".into()));
    }
    let started = Instant::now();
    let (seq, ingest) = ingest_paths(&cfg.inputs)?;
    info!(
        "event=ingest n={} dropped={} seconds={:.3}",
        ingest.bases,
        ingest.dropped,
        started.elapsed().as_secs_f64()
    );
    let mut report = build_index_from_sequence(&seq, cfg)?;
    report.ingest = ingest;
    report.elapsed = started.elapsed();
    Ok(report)
}

#[derive(Default)]
struct MemoryGauge {
    current: AtomicU64,
    peak: AtomicU64,
}

impl MemoryGauge {
    fn acquire(&self, bytes: u64) {
        let now = self.current.fetch_add(bytes, Ordering::SeqCst) + bytes;
        self.peak.fetch_max(now, Ordering::SeqCst);
    }

    fn release(&self, bytes: u64) {
        self.current.fetch_sub(bytes, Ordering::SeqCst);
    }
}

/// Builds the index for an already ingested sequence; `cfg.inputs` is
/// ignored.
pub fn build_index_from_sequence(seq: &EncodedSequence, cfg: &BuildConfig) -> Result<BuildReport> {
    let started = Instant::now();
    if cfg.workers == 0 {
        return Err(Error::Config("at least one worker is required".into()));
    }
    let packed = seq.packed_bytes().len() as u64;
    if cfg.memory_budget_total <= packed {
        return Err(Error::Config(format!(
            "memory budget of {} bytes does not exceed the packed sequence ({packed} bytes)",
            cfg.memory_budget_total
        )));
    }
    let budget = cfg.memory_budget_total - packed;
    let n = seq.len();

    let f = match cfg.expansion_factor {
        Some(f) => f,
        None if n >= SAMPLE_COUNT * MIN_SAMPLE_LEN => {
            let sample_len = (n / SAMPLE_COUNT).min(MAX_SAMPLE_LEN);
            estimate_expansion_factor(seq, SAMPLE_COUNT, sample_len)?
        }
        None => DEFAULT_EXPANSION_FACTOR,
    };
    let p_min = min_prefix_length(n as u64, f, budget)?;
    let mut p = cfg.prefix_len.map_or(p_min, |want| want.max(p_min));
    if let Some(want) = cfg.prefix_len {
        if want < p_min {
            warn!("requested prefix length {want} is below the minimum {p_min}; using {p_min}");
        }
    }

    let plan = loop {
        if p > MAX_PREFIX_LEN {
            return Err(Error::Config(format!(
                "prefix length {p} exceeds the supported maximum of {MAX_PREFIX_LEN}"
            )));
        }
        let plan = PartitionPlan::new(seq, p, f, budget)?;
        let oversized = plan.oversized().next();
        match oversized {
            None => break plan,
            Some((partition, bytes)) if p == MAX_PREFIX_LEN => {
                return Err(Error::PartitionTooLarge {
                    partition,
                    bytes,
                    budget,
                })
            }
            Some((partition, bytes)) => {
                info!("event=repartition partition={partition} bytes={bytes} budget={budget} p={}", p + 1);
                p += 1;
            }
        }
    };
    info!(
        "event=plan n={n} p={p} f={f:.2} budget={budget} overflow={}",
        plan.overflow_count
    );

    let out = &cfg.out_dir;
    prepare_output_dir(out)?;
    let spill_dir = cfg.spill_dir();
    let spills = build_position_lists(seq, &plan, &spill_dir)?;
    let batches = plan_partition_batches(&plan)?;

    let spill_by_id: HashMap<PartitionId, &SpillFile> =
        spills.iter().map(|s| (s.partition_id, s)).collect();
    let spill_reads: HashMap<PartitionId, AtomicU32> = spills
        .iter()
        .map(|s| (s.partition_id, AtomicU32::new(0)))
        .collect();
    let estimates: HashMap<PartitionId, u64> = plan
        .non_empty()
        .map(|j| (j, plan.estimated_tree_bytes(j)))
        .collect();
    let gauge = MemoryGauge::default();
    let mut entries: Vec<ManifestEntry> = Vec::new();

    for (b, batch) in batches.iter().enumerate() {
        info!(
            "event=batch index={b} partitions={} estimated_bytes={}",
            batch.partitions.len(),
            batch.estimated_bytes
        );
        let ctx = WorkerContext {
            seq,
            p: p as u8,
            budget,
            out,
            spills: &spill_by_id,
            spill_reads: &spill_reads,
            estimates: &estimates,
            gauge: &gauge,
            keep_spills: cfg.keep_spills,
        };
        entries.extend(run_batch(&ctx, &batch.partitions, cfg.workers)?);
    }

    if plan.overflow_count > 0 {
        let spill = spill_by_id[&plan.overflow_id()];
        spill_reads[&spill.partition_id].fetch_add(1, Ordering::SeqCst);
        let list = read_spill(&spill.path)?;
        if list.positions.len() as u32 != plan.overflow_count {
            return Err(Error::CorruptSpill {
                path: spill.path.clone(),
                reason: "overflow list length changed".into(),
            });
        }
        entries.push(ManifestEntry {
            partition_id: plan.overflow_id(),
            prefix: None,
            file: None,
            node_count: 0,
            suffix_count: plan.overflow_count,
        });
        if !cfg.keep_spills {
            let _ = fs::remove_file(&spill.path);
        }
    }
    if !cfg.keep_spills {
        let _ = fs::remove_dir(&spill_dir);
    }
    entries.sort_by_key(|e| e.partition_id);

    write_sequence(seq, out)?;
    let manifest = IndexManifest {
        n,
        p,
        seq_hash: seq.fingerprint(),
        entries,
    };
    write_manifest(&manifest, out)?;
    info!(
        "event=done n={n} p={p} partitions={} nodes={} seconds={:.3}",
        manifest.entries.iter().filter(|e| !e.is_overflow()).count(),
        manifest.total_nodes(),
        started.elapsed().as_secs_f64()
    );

    Ok(BuildReport {
        manifest,
        ingest: IngestReport {
            bases: n as u64,
            dropped: 0,
        },
        p,
        expansion_factor: f,
        memory_budget: budget,
        batches,
        peak_tree_bytes: gauge.peak.load(Ordering::SeqCst),
        spill_reads: spill_reads
            .into_iter()
            .map(|(id, count)| (id, count.into_inner()))
            .collect(),
        elapsed: started.elapsed(),
    })
}

/// Removes a previous index's manifest and chunks so a half-finished rebuild
/// can never pass for a complete index.
fn prepare_output_dir(out: &Path) -> Result<()> {
    let io_err = |e| Error::io(format!("preparing {}", out.display()), e);
    fs::create_dir_all(out).map_err(io_err)?;
    match fs::remove_file(out.join(MANIFEST_NAME)) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(io_err(e)),
        _ => {}
    }
    for entry in fs::read_dir(out).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("chunk_") && (name.ends_with(".gstc") || name.ends_with(".gstc.tmp")) {
            fs::remove_file(entry.path()).map_err(io_err)?;
        }
    }
    Ok(())
}

fn write_sequence(seq: &EncodedSequence, out: &Path) -> Result<()> {
    let path = out.join(SEQUENCE_NAME);
    let tmp = out.join(format!("{SEQUENCE_NAME}.tmp"));
    let mut image = Vec::with_capacity(seq.packed_bytes().len() + 10);
    seq.write_cache(&mut image)
        .and_then(|_| fs::write(&tmp, &image))
        .and_then(|_| fs::rename(&tmp, &path))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

struct WorkerContext<'a> {
    seq: &'a EncodedSequence,
    p: u8,
    budget: u64,
    out: &'a Path,
    spills: &'a HashMap<PartitionId, &'a SpillFile>,
    spill_reads: &'a HashMap<PartitionId, AtomicU32>,
    estimates: &'a HashMap<PartitionId, u64>,
    gauge: &'a MemoryGauge,
    keep_spills: bool,
}

impl WorkerContext<'_> {
    fn build_one(&self, partition: PartitionId) -> Result<ManifestEntry> {
        let started = Instant::now();
        let spill = self.spills.get(&partition).ok_or_else(|| {
            Error::Config(format!("no spill file for partition {partition}"))
        })?;
        info!(
            "event=start partition={partition} file={} suffixes={}",
            chunk_file_name(partition),
            spill.count
        );
        self.spill_reads[&partition].fetch_add(1, Ordering::SeqCst);
        let list = read_spill(&spill.path)?;
        if list.partition_id != partition || list.positions.len() as u32 != spill.count {
            return Err(Error::CorruptSpill {
                path: spill.path.clone(),
                reason: "header does not match the partition plan".into(),
            });
        }
        // Hold the estimate while the chunk grows, then its real size.
        let estimate = self.estimates[&partition];
        self.gauge.acquire(estimate);
        let built: Result<SubtreeChunk> = build_subtree(self.seq, &list, self.p, self.budget);
        drop(list);
        let chunk = match built {
            Ok(chunk) => chunk,
            Err(e) => {
                self.gauge.release(estimate);
                return Err(e);
            }
        };
        let resident = chunk.record_bytes().len() as u64 + CHUNK_HEADER_LEN as u64;
        let held = estimate.max(resident);
        self.gauge.acquire(held - estimate);
        let stored = store_chunk(&chunk, self.out);
        drop(chunk);
        self.gauge.release(held);
        let entry = stored?;
        if !self.keep_spills {
            let _ = fs::remove_file(&spill.path);
        }
        info!(
            "event=finish partition={partition} nodes={} suffixes={} seconds={:.3}",
            entry.node_count,
            entry.suffix_count,
            started.elapsed().as_secs_f64()
        );
        Ok(entry)
    }
}

/// Hands each partition to exactly one of up to `workers` threads.
fn run_batch(
    ctx: &WorkerContext<'_>,
    partitions: &[PartitionId],
    workers: usize,
) -> Result<Vec<ManifestEntry>> {
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let results: Mutex<Vec<(PartitionId, Result<ManifestEntry>)>> = Mutex::new(Vec::new());
    let threads = workers.min(partitions.len()).max(1);

    let work = || loop {
        if failed.load(Ordering::SeqCst) {
            break;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&partition) = partitions.get(i) else {
            break;
        };
        let outcome = ctx.build_one(partition);
        if outcome.is_err() {
            failed.store(true, Ordering::SeqCst);
        }
        results.lock().unwrap().push((partition, outcome));
    };

    if threads == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(work);
            }
        });
    }

    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(id, _)| *id);
    results
        .into_iter()
        .map(|(partition, r)| {
            r.map_err(|e| Error::Worker {
                partition,
                source: Box::new(e),
            })
        })
        .collect()
}
