mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use common::{naive_positions, pattern_for, random_text, seq, varied_text, X};
use gstree::partition::{build_position_lists, spill_file_name, PartitionPlan};
use gstree::store::{chunk_file_name, load_chunk};
use gstree::{
    build_index_from_sequence, build_subtree, route, BuildConfig, Error, ErrorKind, Index, Query,
};
use proptest::prelude::*;
use rand::{rngs::StdRng, Rng, SeedableRng};

fn build(dir: &Path, text: &str, p: u32, workers: usize) -> Index {
    let mut cfg = BuildConfig::new(vec![], dir);
    cfg.prefix_len = Some(p);
    cfg.workers = workers;
    cfg.memory_budget_total = 256 << 20;
    build_index_from_sequence(&seq(text), &cfg).unwrap();
    Index::open(dir).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn search_matches_sliding_window(
        seed in any::<u64>(),
        len in 1usize..3_000,
        p in 1u32..=4,
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let text = varied_text(&mut rng, len);
        let dir = tempfile::tempdir().unwrap();
        let index = build(dir.path(), &text, p, 2);
        for _ in 0..20 {
            let pattern = pattern_for(&mut rng, &text, 12);
            let got = index.search_exact(&pattern).unwrap().positions;
            prop_assert_eq!(got, naive_positions(&text, &pattern), "pattern {}", pattern);
        }
    }

    #[test]
    fn every_suffix_finds_itself(seed in any::<u64>(), len in 1usize..400, p in 1u32..=3) {
        let mut rng = StdRng::seed_from_u64(seed);
        let text = varied_text(&mut rng, len);
        let dir = tempfile::tempdir().unwrap();
        let index = build(dir.path(), &text, p, 1);
        for i in 0..len {
            let got = index.search_exact(&text[i..]).unwrap().positions;
            prop_assert!(got.contains(&(i as u32)));
            prop_assert_eq!(got, naive_positions(&text, &text[i..]));
        }
    }
}

#[test]
fn worked_example_queries() {
    let dir = tempfile::tempdir().unwrap();
    for p in 1..=3 {
        let index = build(dir.path(), X, p, 1);
        assert_eq!(index.search_exact("AGATCG").unwrap().positions, vec![6]);
        assert_eq!(index.search_exact("TAG").unwrap().positions, vec![1, 5]);
        assert_eq!(index.search_exact("A").unwrap().positions, vec![0, 2, 6, 8]);
        assert_eq!(index.search_exact("CG").unwrap().positions, vec![10]);
        assert_eq!(index.search_exact("G").unwrap().positions, vec![3, 7, 11]);
        assert!(index.search_exact("GGGG").unwrap().is_empty());
        assert!(index.search_exact("ATAGCTAGATCGA").unwrap().is_empty());
    }
}

#[test]
fn pattern_lengths_around_the_prefix_length() {
    let mut rng = StdRng::seed_from_u64(99);
    let text = random_text(&mut rng, 5_000);
    let p = 3;
    let dir = tempfile::tempdir().unwrap();
    let index = build(dir.path(), &text, p, 1);
    for len in [p - 1, p, p + 1] {
        let len = len as usize;
        for start in (0..text.len() - len).step_by(97) {
            let pattern = &text[start..start + len];
            assert_eq!(
                index.search_exact(pattern).unwrap().positions,
                naive_positions(&text, pattern)
            );
        }
    }
    // the last p - 1 suffixes live in the overflow partition
    let tail = &text[text.len() - 2..];
    assert!(index
        .search_exact(tail)
        .unwrap()
        .positions
        .contains(&(text.len() as u32 - 2)));
}

#[test]
fn routing_covers_prefix_extensions() {
    let q = Query::parse("A").unwrap();
    assert_eq!(route(&q, 2), vec![0, 1, 2, 3, 16]);
    let q = Query::parse("TG").unwrap();
    assert_eq!(route(&q, 2), vec![14, 16]);
    let q = Query::parse("TGCA").unwrap();
    assert_eq!(route(&q, 2), vec![14, 16]);
    let q = Query::parse("C").unwrap();
    assert_eq!(route(&q, 3), (16..32).chain([64]).collect::<Vec<u32>>());
}

#[test]
fn partitions_return_disjoint_match_sets() {
    let mut rng = StdRng::seed_from_u64(4);
    let text = random_text(&mut rng, 4_000);
    let dir = tempfile::tempdir().unwrap();
    let index = build(dir.path(), &text, 3, 1);
    for pattern in ["A", "CG", "T", "GA"] {
        let parts = index
            .search_by_partition(&Query::parse(pattern).unwrap())
            .unwrap();
        let mut seen = BTreeSet::new();
        let mut total = 0;
        for (_, hits) in &parts {
            total += hits.len();
            seen.extend(hits.iter().copied());
        }
        assert_eq!(seen.len(), total, "overlap for {pattern}");
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), naive_positions(&text, pattern));
    }
}

#[test]
fn stored_chunks_answer_like_in_memory_chunks() {
    let mut rng = StdRng::seed_from_u64(17);
    let text = random_text(&mut rng, 3_000);
    let s = seq(&text);
    let dir = tempfile::tempdir().unwrap();
    let plan = PartitionPlan::new(&s, 2, 32.0, 1 << 30).unwrap();
    let spills = build_position_lists(&s, &plan, &dir.path().join("spill")).unwrap();
    for spill in spills.iter().filter(|sp| sp.partition_id != plan.overflow_id()) {
        let list = gstree::partition::read_spill(&spill.path).unwrap();
        let chunk = build_subtree(&s, &list, 2, 1 << 30).unwrap();
        gstree::store_chunk(&chunk, dir.path()).unwrap();
        let loaded = load_chunk(&dir.path().join(chunk_file_name(spill.partition_id))).unwrap();
        assert_eq!(loaded.record_bytes(), chunk.record_bytes());
        for _ in 0..10 {
            let pattern = pattern_for(&mut rng, &text, 8);
            let codes = Query::parse(&pattern).unwrap().codes().to_vec();
            assert_eq!(loaded.traverse(&s, &codes), chunk.traverse(&s, &codes));
        }
    }
    assert!(dir.path().join("spill").join(spill_file_name(0)).exists());
}

#[test]
fn concurrent_queries_share_one_index() {
    let mut rng = StdRng::seed_from_u64(23);
    let text = random_text(&mut rng, 20_000);
    let dir = tempfile::tempdir().unwrap();
    build(dir.path(), &text, 2, 1);
    let index = Arc::new(Index::open_with_cache(dir.path(), 3).unwrap());
    let text = Arc::new(text);
    let handles: Vec<_> = (0..4)
        .map(|t| {
            let index = Arc::clone(&index);
            let text = Arc::clone(&text);
            std::thread::spawn(move || {
                let mut rng = StdRng::seed_from_u64(t);
                for _ in 0..100 {
                    let pattern = pattern_for(&mut rng, &text, 10);
                    assert_eq!(
                        index.search_exact(&pattern).unwrap().positions,
                        naive_positions(&text, &pattern)
                    );
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert!(index.cached_chunks() <= 3);
}

#[test]
fn invalid_patterns_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let index = build(dir.path(), X, 1, 1);
    for bad in ["", "AXG", "AC GT", "N"] {
        let err = index.search_exact(bad).unwrap_err();
        assert!(matches!(err, Error::InvalidPattern { .. }), "{bad}: {err:?}");
        assert_eq!(err.kind(), ErrorKind::Data);
    }
    // lower case is accepted like in the input
    assert_eq!(index.search_exact("agatcg").unwrap().positions, vec![6]);
}

#[test]
fn missing_chunk_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    build(dir.path(), X, 1, 1);
    fs::remove_file(dir.path().join(chunk_file_name(2))).unwrap();
    let index = Index::open(dir.path()).unwrap();
    // patterns routed elsewhere still work
    assert_eq!(index.search_exact("CT").unwrap().positions, vec![4]);
    match index.search_exact("GA") {
        Err(Error::MissingChunk { path, .. }) => assert!(path.ends_with("chunk_2.gstc")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn corrupted_chunk_fails_query_and_verify() {
    let mut rng = StdRng::seed_from_u64(31);
    let text = random_text(&mut rng, 2_000);
    let dir = tempfile::tempdir().unwrap();
    build(dir.path(), &text, 1, 1);
    let path = dir.path().join(chunk_file_name(1));
    let mut bytes = fs::read(&path).unwrap();
    let at = rng.gen_range(40..bytes.len());
    bytes[at] ^= 0x10;
    fs::write(&path, bytes).unwrap();
    let index = Index::open(dir.path()).unwrap();
    assert!(matches!(
        index.search_exact("C"),
        Err(Error::MissingChunk { .. })
    ));
    assert_eq!(index.verify(16).unwrap_err().kind(), ErrorKind::Data);
}

#[test]
fn open_rejects_broken_indexes() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        Index::open(dir.path()),
        Err(Error::MissingManifest(_))
    ));

    build(dir.path(), X, 1, 1);
    let manifest = dir.path().join("index.manifest");
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, text.replace(" 4\n", " 5\n")).unwrap();
    assert!(matches!(
        Index::open(dir.path()),
        Err(Error::MalformedManifest { .. })
    ));

    build(dir.path(), X, 1, 1);
    // a different sequence of the same length
    let other = tempfile::tempdir().unwrap();
    build(other.path(), "ATAGCTAGATCC", 1, 1);
    fs::copy(
        other.path().join("sequence.gseq"),
        dir.path().join("sequence.gseq"),
    )
    .unwrap();
    assert!(matches!(
        Index::open(dir.path()),
        Err(Error::SequenceMismatch(_))
    ));
}

#[test]
fn verify_and_stats_on_a_fresh_index() {
    let mut rng = StdRng::seed_from_u64(2);
    let text = random_text(&mut rng, 10_000);
    let dir = tempfile::tempdir().unwrap();
    let index = build(dir.path(), &text, 2, 2);
    let report = index.verify(1).unwrap();
    assert_eq!(report.terminals, 10_000 - 1);
    assert_eq!(report.labels_checked, report.terminals);
    let stats = index.stats();
    assert_eq!(stats.n, 10_000);
    assert_eq!(stats.p, 2);
    assert_eq!(stats.overflow, 1);
    assert_eq!(stats.partitions.len(), 16);
    let suffixes: u64 = stats.partitions.iter().map(|s| s.suffix_count as u64).sum();
    assert_eq!(suffixes + 1, 10_000);
    assert!(stats.expansion_factor() > 10.0 && stats.expansion_factor() < 60.0);
}
