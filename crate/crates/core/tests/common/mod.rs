#![allow(dead_code)]

use gstree::EncodedSequence;
use rand::Rng;

pub const X: &str = "ATAGCTAGATCG";

pub fn random_text(rng: &mut impl Rng, len: usize) -> String {
    (0..len).map(|_| b"ACGT"[rng.gen_range(0..4)] as char).collect()
}

/// Mix of uniform, skewed, periodic and single-letter sequences.
pub fn varied_text(rng: &mut impl Rng, len: usize) -> String {
    match rng.gen_range(0..5) {
        0 | 1 => random_text(rng, len),
        2 => (0..len)
            .map(|_| if rng.gen_bool(0.85) { 'A' } else { b"CGT"[rng.gen_range(0..3)] as char })
            .collect(),
        3 => {
            let period = rng.gen_range(1..=7);
            let unit = random_text(rng, period);
            unit.chars().cycle().take(len).collect()
        }
        _ => std::iter::repeat(b"ACGT"[rng.gen_range(0..4)] as char).take(len).collect(),
    }
}

/// Half the time a substring of `text`, otherwise random bases.
pub fn pattern_for(rng: &mut impl Rng, text: &str, max_len: usize) -> String {
    let len = rng.gen_range(1..=max_len);
    if rng.gen_bool(0.5) && text.len() >= len {
        let start = rng.gen_range(0..=text.len() - len);
        text[start..start + len].to_string()
    } else {
        random_text(rng, len)
    }
}

/// Sliding-window scan.
pub fn naive_positions(text: &str, pattern: &str) -> Vec<u32> {
    let (t, p) = (text.as_bytes(), pattern.as_bytes());
    if p.len() > t.len() {
        return Vec::new();
    }
    (0..=t.len() - p.len())
        .filter(|&i| &t[i..i + p.len()] == p)
        .map(|i| i as u32)
        .collect()
}

pub fn seq(text: &str) -> EncodedSequence {
    EncodedSequence::from_acgt(text).unwrap()
}
