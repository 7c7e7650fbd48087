//! Seeded, portable sampling without replacement.
//!
//! Sampling is defined as sorting items by `SHA-256(seed || label || item)`
//! and taking a prefix. Distinct keys make this a uniform random
//! permutation, and the construction has no hidden state: any
//! reimplementation (the bundled oracle script included) reproduces it
//! byte-for-byte from the same seed, label, and item strings. Per-question
//! labels keep samples stable when other questions are added or removed.

use sha2::{Digest, Sha256};

fn sort_key(seed: u64, label: &str, item: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_be_bytes());
    hasher.update(b"\x00");
    hasher.update(label.as_bytes());
    hasher.update(b"\x00");
    hasher.update(item.as_bytes());
    hasher.finalize().into()
}

/// Uniform sample of `count` items without replacement, deterministic in
/// `(seed, label, items)`. Returns all items when `count >= items.len()`.
/// Key collisions (astronomically unlikely) fall back to item order.
pub fn sample_without_replacement<'a>(
    items: &[&'a str],
    count: usize,
    seed: u64,
    label: &str,
) -> Vec<&'a str> {
    let mut keyed: Vec<([u8; 32], &str)> = items
        .iter()
        .map(|item| (sort_key(seed, label, item), *item))
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    keyed.truncate(count);
    keyed.into_iter().map(|(_, item)| item).collect()
}

/// Full seeded permutation (a sample of everything).
pub fn permute<'a>(items: &[&'a str], seed: u64, label: &str) -> Vec<&'a str> {
    sample_without_replacement(items, items.len(), seed, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn sample_is_deterministic_and_disjoint_from_rest() {
        let items: Vec<String> = (0..50).map(|i| format!("p{i}")).collect();
        let refs: Vec<&str> = items.iter().map(String::as_str).collect();
        let a = sample_without_replacement(&refs, 10, 42, "q1");
        let b = sample_without_replacement(&refs, 10, 42, "q1");
        assert_eq!(a, b);
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 10);
    }

    #[test]
    fn different_labels_and_seeds_give_different_orders() {
        let items: Vec<String> = (0..50).map(|i| format!("p{i}")).collect();
        let refs: Vec<&str> = items.iter().map(String::as_str).collect();
        assert_ne!(
            sample_without_replacement(&refs, 50, 42, "q1"),
            sample_without_replacement(&refs, 50, 42, "q2")
        );
        assert_ne!(
            sample_without_replacement(&refs, 50, 42, "q1"),
            sample_without_replacement(&refs, 50, 43, "q1")
        );
    }

    #[test]
    fn oversized_count_returns_everything() {
        let refs = ["a", "b", "c"];
        let sample = sample_without_replacement(&refs, 10, 7, "x");
        assert_eq!(sample.len(), 3);
        assert_eq!(sample.iter().collect::<BTreeSet<_>>().len(), 3);
    }

    #[test]
    fn prefix_property_links_sample_and_permutation() {
        let items: Vec<String> = (0..20).map(|i| format!("p{i}")).collect();
        let refs: Vec<&str> = items.iter().map(String::as_str).collect();
        let perm = permute(&refs, 9, "q");
        let sample = sample_without_replacement(&refs, 5, 9, "q");
        assert_eq!(&perm[..5], sample.as_slice());
    }
}
