mod common;

use std::fs;
use std::path::Path;

use common::{random_text, seq, X};
use gstree::partition::{overflow_id, read_spill, spill_file_name};
use gstree::store::{chunk_file_name, MANIFEST_NAME};
use gstree::{
    build_index, build_index_from_sequence, BuildConfig, Error, Index, PartitionPlan,
};
use rand::{rngs::StdRng, SeedableRng};

fn config(out: &Path) -> BuildConfig {
    let mut cfg = BuildConfig::new(vec![], out);
    cfg.memory_budget_total = 64 << 20;
    cfg
}

fn chunk_images(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".gstc"))
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn worked_example_with_one_base_prefixes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.prefix_len = Some(1);
    let report = build_index_from_sequence(&seq(X), &cfg).unwrap();
    let m = &report.manifest;
    assert_eq!(m.p, 1);
    assert_eq!(m.entries.len(), 4);
    assert!(m.overflow().is_none());
    assert_eq!(m.total_suffixes(), 12);
    let counts: Vec<u32> = m.entries.iter().map(|e| e.suffix_count).collect();
    assert_eq!(counts, vec![4, 2, 3, 3]);
    assert!(dir.path().join(MANIFEST_NAME).exists());
    assert!(!dir.path().join("spill").exists());
}

#[test]
fn manifest_lists_non_empty_partitions_and_overflow() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.prefix_len = Some(2);
    let x = seq(X);
    let report = build_index_from_sequence(&x, &cfg).unwrap();
    let plan = PartitionPlan::new(&x, 2, 32.0, 1).unwrap();
    let non_empty = plan.non_empty().count();
    assert_eq!(report.manifest.entries.len(), non_empty + 1);
    let overflow = report.manifest.overflow().unwrap();
    assert_eq!(overflow.partition_id, overflow_id(2));
    assert_eq!(overflow.suffix_count, 1);
}

#[test]
fn worker_count_does_not_change_output() {
    let mut rng = StdRng::seed_from_u64(11);
    let text = random_text(&mut rng, 50_000);
    let s = seq(&text);
    let mut manifests = Vec::new();
    let mut images = Vec::new();
    for workers in [1, 4] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path());
        cfg.workers = workers;
        cfg.prefix_len = Some(3);
        // small budget so batches differ from a single all-in-one batch
        cfg.memory_budget_total = 200_000;
        let report = build_index_from_sequence(&s, &cfg).unwrap();
        assert!(report.batches.len() > 1);
        manifests.push(report.manifest);
        images.push(chunk_images(dir.path()));
    }
    assert_eq!(manifests[0], manifests[1]);
    assert_eq!(images[0], images[1]);
}

#[test]
fn each_spill_file_is_read_once() {
    let mut rng = StdRng::seed_from_u64(5);
    let s = seq(&random_text(&mut rng, 20_000));
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.prefix_len = Some(3);
    cfg.workers = 3;
    let report = build_index_from_sequence(&s, &cfg).unwrap();
    assert_eq!(report.spill_reads.len(), report.manifest.entries.len());
    assert!(report.spill_reads.values().all(|&reads| reads == 1));
}

#[test]
fn kept_spills_hold_every_position() {
    let mut rng = StdRng::seed_from_u64(8);
    let text = random_text(&mut rng, 3_000);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.prefix_len = Some(2);
    cfg.keep_spills = true;
    let report = build_index_from_sequence(&seq(&text), &cfg).unwrap();
    let mut all = Vec::new();
    for entry in &report.manifest.entries {
        let list = read_spill(&dir.path().join("spill").join(spill_file_name(entry.partition_id)))
            .unwrap();
        assert_eq!(list.positions.len() as u32, entry.suffix_count);
        all.extend(list.positions);
    }
    all.sort_unstable();
    assert_eq!(all, (0..3_000).collect::<Vec<u32>>());
}

#[test]
fn peak_tree_memory_stays_within_budget() {
    let mut rng = StdRng::seed_from_u64(21);
    let s = seq(&random_text(&mut rng, 200_000));
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.workers = 4;
    cfg.memory_budget_total = 2_000_000;
    let report = build_index_from_sequence(&s, &cfg).unwrap();
    assert!(report.batches.len() > 1);
    for batch in &report.batches {
        assert!(batch.estimated_bytes <= report.memory_budget);
    }
    assert!(report.peak_tree_bytes > 0);
    assert!(
        report.peak_tree_bytes <= report.memory_budget,
        "peak {} over budget {}",
        report.peak_tree_bytes,
        report.memory_budget
    );
}

#[test]
fn skewed_partitions_force_a_longer_prefix() {
    let mut rng = StdRng::seed_from_u64(3);
    let s = seq(&random_text(&mut rng, 8_000));
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    // a tiny factor makes the formula pick p = 1, but 2000-suffix partitions
    // cannot fit 40 kB in the worst case
    cfg.expansion_factor = Some(0.5);
    cfg.memory_budget_total = 2_000 + 40_000;
    let report = build_index_from_sequence(&s, &cfg).unwrap();
    assert!(report.p >= 2, "p = {}", report.p);
    let index = Index::open(dir.path()).unwrap();
    index.verify(1).unwrap();
}

#[test]
fn unsplittable_input_reports_partition_too_large() {
    let s = seq(&"A".repeat(5_000));
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.memory_budget_total = 50_000;
    match build_index_from_sequence(&s, &cfg) {
        Err(Error::PartitionTooLarge { partition: 0, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert!(!dir.path().join(MANIFEST_NAME).exists());
}

#[test]
fn rebuild_replaces_previous_index() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.prefix_len = Some(2);
    build_index_from_sequence(&seq(X), &cfg).unwrap();
    assert!(dir.path().join(chunk_file_name(3)).exists());
    cfg.prefix_len = Some(1);
    build_index_from_sequence(&seq("CCCCGG"), &cfg).unwrap();
    let chunks = chunk_images(dir.path());
    let names: Vec<&str> = chunks.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["chunk_1.gstc", "chunk_2.gstc"]);
    let index = Index::open(dir.path()).unwrap();
    assert_eq!(index.search_exact("CG").unwrap().positions, vec![3]);
}

#[test]
fn build_from_fasta_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.fa");
    let b = dir.path().join("b.fa");
    fs::write(&a, ">chr1\nATAGC\nTAGNN\n").unwrap();
    fs::write(&b, ">chr2 desc\natcg\n").unwrap();
    let mut cfg = BuildConfig::new(vec![a, b], dir.path().join("idx"));
    cfg.prefix_len = Some(1);
    let report = build_index(&cfg).unwrap();
    assert_eq!(report.ingest.bases, 12);
    assert_eq!(report.ingest.dropped, 2);
    let index = Index::open(&dir.path().join("idx")).unwrap();
    assert_eq!(index.sequence().to_text(), X);
    assert_eq!(index.search_exact("AGATCG").unwrap().positions, vec![6]);

    let missing = BuildConfig::new(vec![dir.path().join("nope.fa")], dir.path().join("x"));
    assert_eq!(build_index(&missing).unwrap_err().kind(), gstree::ErrorKind::Io);
}
