//! TRAIT adder tree: functional reduction plus a structural transistor and
//! area model.
//!
//! The tree is a binary reduction of ripple-carry adders. Every full-adder
//! circuit kind implements the same truth table; kinds differ only in
//! transistor count, area, and electrical behavior, so the computed sum is
//! independent of how kinds are interspersed. The `Alternating` pattern
//! places the reduced-transistor FA7T at every even chain position and the
//! pass-gate PG26T at every odd one, modeling the interspersion that stops
//! FA7T's voltage droop from propagating down the carry chain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full-adder circuit kinds, distinguished electrically but not logically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaKind {
    /// Reduced 7-transistor cell.
    FA7T,
    /// Pass-gate 26-transistor cell, the droop-restoring neighbor.
    PG26T,
    /// Conventional static 28-transistor cell.
    FA28T,
    FA14T,
    IFA16T,
    FA12T,
}

impl FaKind {
    pub fn transistor_count(&self) -> u32 {
        match self {
            FaKind::FA7T => 7,
            FaKind::PG26T => 26,
            FaKind::FA28T => 28,
            FaKind::FA14T => 14,
            FaKind::IFA16T => 16,
            FaKind::FA12T => 12,
        }
    }

    /// Cell area where characterized; kinds from cited works without a
    /// published layout report none and contribute nothing to area sums.
    pub fn area_um2(&self) -> Option<f64> {
        match self {
            FaKind::FA7T => Some(4.2),
            FaKind::PG26T => Some(15.63),
            FaKind::FA28T => Some(22.5),
            _ => None,
        }
    }
}

/// Kind assignment policy along each node's carry chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pattern {
    /// FA7T at even chain positions, PG26T at odd ones.
    Alternating,
    /// PG26T everywhere.
    AllAccurate,
    /// FA7T everywhere.
    AllReduced,
    /// Explicit kind per full adder, in construction order.
    Custom(Vec<FaKind>),
}

impl Pattern {
    fn kind_at(&self, flat_index: usize, chain_position: usize) -> FaKind {
        match self {
            Pattern::Alternating => {
                if chain_position % 2 == 0 {
                    FaKind::FA7T
                } else {
                    FaKind::PG26T
                }
            }
            Pattern::AllAccurate => FaKind::PG26T,
            Pattern::AllReduced => FaKind::FA7T,
            Pattern::Custom(mask) => mask[flat_index],
        }
    }
}

/// One ripple-carry node: a chain of full adders, one per operand bit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Width of the wider input operand; equals the chain length.
    pub operand_width: u32,
    pub chain: Vec<FaKind>,
}

/// Structural description of a reduction tree over single-bit leaves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdderTreeSpec {
    pub leaf_count: usize,
    pub pattern: Pattern,
    /// Reduction levels from leaves to root; an odd value at any level
    /// passes through to the next without a node.
    pub levels: Vec<Vec<TreeNode>>,
}

impl AdderTreeSpec {
    pub fn node_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn fa_count(&self) -> usize {
        self.levels
            .iter()
            .flatten()
            .map(|node| node.chain.len())
            .sum()
    }

    /// Flat kind list in construction order, the serialized mask.
    pub fn kind_mask(&self) -> Vec<FaKind> {
        self.levels
            .iter()
            .flatten()
            .flat_map(|node| node.chain.iter().copied())
            .collect()
    }
}

/// Full adders needed to reduce the given number of single-bit leaves.
fn fa_count_for(leaf_count: usize) -> usize {
    let mut widths = vec![1u32; leaf_count];
    let mut count = 0;
    while widths.len() > 1 {
        widths = widths
            .chunks(2)
            .map(|pair| match pair {
                [a, b] => {
                    let w = (*a).max(*b);
                    count += w as usize;
                    w + 1
                }
                [a] => *a,
                _ => unreachable!("chunks(2)"),
            })
            .collect();
    }
    count
}

/// Builds the reduction tree for single-bit-weighted leaves.
///
/// Levels pair values left to right; each pairing becomes a ripple-carry
/// node whose chain length is the wider operand's width, and the node
/// output is one bit wider. An unpaired value passes through unchanged.
pub fn build_tree(leaf_count: usize, pattern: Pattern) -> Result<AdderTreeSpec> {
    if leaf_count < 2 {
        return Err(Error::LeafCountTooSmall(leaf_count));
    }
    if let Pattern::Custom(mask) = &pattern {
        let expected = fa_count_for(leaf_count);
        if mask.len() != expected {
            return Err(Error::KindMaskMismatch {
                expected,
                got: mask.len(),
            });
        }
    }
    let mut levels = Vec::new();
    let mut widths = vec![1u32; leaf_count];
    let mut flat_index = 0;
    while widths.len() > 1 {
        let mut nodes = Vec::with_capacity(widths.len() / 2);
        let mut next_widths = Vec::with_capacity(widths.len().div_ceil(2));
        for pair in widths.chunks(2) {
            match pair {
                [a, b] => {
                    let operand_width = (*a).max(*b);
                    let chain: Vec<FaKind> = (0..operand_width as usize)
                        .map(|pos| {
                            let kind = pattern.kind_at(flat_index, pos);
                            flat_index += 1;
                            kind
                        })
                        .collect();
                    nodes.push(TreeNode {
                        operand_width,
                        chain,
                    });
                    next_widths.push(operand_width + 1);
                }
                [a] => next_widths.push(*a),
                _ => unreachable!("chunks(2)"),
            }
        }
        levels.push(nodes);
        widths = next_widths;
    }
    Ok(AdderTreeSpec {
        leaf_count,
        pattern,
        levels,
    })
}

/// Transistor and area totals for a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeTally {
    pub total_transistors: u64,
    pub per_kind_counts: BTreeMap<FaKind, u64>,
    /// Sum over kinds with a characterized cell area.
    pub estimated_area_um2: f64,
}

pub fn tally(spec: &AdderTreeSpec) -> TreeTally {
    let mut per_kind_counts = BTreeMap::new();
    for kind in spec.kind_mask() {
        *per_kind_counts.entry(kind).or_insert(0u64) += 1;
    }
    let total_transistors = per_kind_counts
        .iter()
        .map(|(kind, count)| kind.transistor_count() as u64 * count)
        .sum();
    let estimated_area_um2 = per_kind_counts
        .iter()
        .filter_map(|(kind, count)| kind.area_um2().map(|a| a * *count as f64))
        .sum();
    TreeTally {
        total_transistors,
        per_kind_counts,
        estimated_area_um2,
    }
}

/// One full adder. Every [`FaKind`] realizes this same function.
pub fn full_adder(a: bool, b: bool, carry_in: bool) -> (bool, bool) {
    let sum = a ^ b ^ carry_in;
    let carry_out = (a & b) | (carry_in & (a ^ b));
    (sum, carry_out)
}

/// Adds two values through an explicit ripple-carry full-adder chain.
fn ripple_add(a: u64, b: u64) -> u64 {
    let width = 64 - (a | b).leading_zeros();
    let mut sum = 0u64;
    let mut carry = false;
    for bit in 0..width {
        let (s, c) = full_adder((a >> bit) & 1 == 1, (b >> bit) & 1 == 1, carry);
        if s {
            sum |= 1 << bit;
        }
        carry = c;
    }
    if carry {
        sum |= 1 << width;
    }
    sum
}

/// Sums pre-weighted partials through the binary full-adder tree.
///
/// The result is the exact arithmetic sum for every interspersion pattern,
/// because kinds differ only electrically. The empty sum is zero.
pub fn reduce(partials: &[u64], _pattern: &Pattern) -> u64 {
    let mut values: Vec<u64> = partials.to_vec();
    while values.len() > 1 {
        values = values
            .chunks(2)
            .map(|pair| match pair {
                [a, b] => ripple_add(*a, *b),
                [a] => *a,
                _ => unreachable!("chunks(2)"),
            })
            .collect();
    }
    values.first().copied().unwrap_or(0)
}

/// Serialized tree form: geometry plus the explicit kind mask, so a
/// reloaded spec tallies identically even for procedurally assigned
/// patterns.
#[derive(Debug, Serialize, Deserialize)]
struct TreeOnDisk {
    leaf_count: usize,
    pattern: Pattern,
    kind_mask: Vec<FaKind>,
}

impl AdderTreeSpec {
    pub fn to_json(&self) -> Result<String> {
        let on_disk = TreeOnDisk {
            leaf_count: self.leaf_count,
            pattern: self.pattern.clone(),
            kind_mask: self.kind_mask(),
        };
        Ok(serde_json::to_string_pretty(&on_disk)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let on_disk: TreeOnDisk = serde_json::from_str(json)?;
        let rebuilt = build_tree(on_disk.leaf_count, Pattern::Custom(on_disk.kind_mask))?;
        if let Pattern::Custom(_) = on_disk.pattern {
            return Ok(rebuilt);
        }
        // Named patterns round-trip back to their name once the mask is
        // verified to match what the name would generate.
        let named = build_tree(on_disk.leaf_count, on_disk.pattern)?;
        if named.kind_mask() != rebuilt.kind_mask() {
            return Err(Error::MaskPatternConflict);
        }
        Ok(named)
    }
}

/// Reported electrical characteristics of the alternating tree, measured
/// for the adder tree only (accumulator excluded).
pub mod reported {
    /// Published transistor reduction against the prior-art tree. The
    /// structural model computes 36.5% for a 1:1 alternating split versus
    /// all-PG26T, so this reported figure implies a different (unpublished)
    /// interspersion ratio; reports carry both numbers.
    pub const TRANSISTOR_REDUCTION_PCT: f64 = 21.35;
    /// Power and delay savings versus an all-FA28T tree.
    pub const POWER_SAVING_VS_FA28T_PCT: f64 = 58.8;
    pub const DELAY_SAVING_VS_FA28T_PCT: f64 = 35.7;
    /// Power and delay savings versus an all-PG26T tree.
    pub const POWER_SAVING_VS_PG26T_PCT: f64 = 34.0;
    pub const DELAY_SAVING_VS_PG26T_PCT: f64 = 8.4;
    /// Power and delay savings versus a 7T+28T hybrid tree.
    pub const POWER_SAVING_VS_HYBRID_PCT: f64 = 24.3;
    pub const DELAY_SAVING_VS_HYBRID_PCT: f64 = 48.0;
}

/// Transistor reduction of one tally against a baseline tally, in percent.
pub fn transistor_reduction_pct(proposed: &TreeTally, baseline: &TreeTally) -> f64 {
    100.0 * (1.0 - proposed.total_transistors as f64 / baseline.total_transistors as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_adder_truth_table() {
        let cases = [
            (false, false, false, false, false),
            (true, false, false, true, false),
            (false, true, false, true, false),
            (false, false, true, true, false),
            (true, true, false, false, true),
            (true, false, true, false, true),
            (false, true, true, false, true),
            (true, true, true, true, true),
        ];
        for (a, b, cin, sum, cout) in cases {
            assert_eq!(full_adder(a, b, cin), (sum, cout));
        }
    }

    #[test]
    fn reduce_trivial_vectors() {
        assert_eq!(reduce(&[0; 64], &Pattern::Alternating), 0);
        assert_eq!(reduce(&[1; 64], &Pattern::Alternating), 64);
        assert_eq!(reduce(&[], &Pattern::AllAccurate), 0);
        assert_eq!(reduce(&[7], &Pattern::AllReduced), 7);
    }

    #[test]
    fn reduce_matches_plain_sum() {
        let values: Vec<u64> = (0..64).map(|i| (i * 37 + 11) % 256).collect();
        let expected: u64 = values.iter().sum();
        for pattern in [Pattern::Alternating, Pattern::AllAccurate, Pattern::AllReduced] {
            assert_eq!(reduce(&values, &pattern), expected);
        }
    }

    #[test]
    fn two_leaf_trees() {
        let spec = build_tree(2, Pattern::AllAccurate).unwrap();
        assert_eq!(spec.node_count(), 1);
        assert_eq!(spec.fa_count(), 1);
        assert_eq!(spec.kind_mask(), vec![FaKind::PG26T]);
        assert!(matches!(
            build_tree(1, Pattern::Alternating),
            Err(Error::LeafCountTooSmall(1))
        ));
    }

    #[test]
    fn four_leaf_alternating_chains() {
        // Level 1: two 1-FA nodes; level 2: one 2-FA node whose chain
        // starts reduced and alternates.
        let spec = build_tree(4, Pattern::Alternating).unwrap();
        assert_eq!(spec.node_count(), 3);
        assert_eq!(spec.fa_count(), 4);
        assert_eq!(
            spec.kind_mask(),
            vec![FaKind::FA7T, FaKind::FA7T, FaKind::FA7T, FaKind::PG26T]
        );
    }

    /// Frozen from a hand count of the 64-leaf construction: levels have
    /// 32, 16, 8, 4, 2, 1 nodes with chain lengths 1-6, totaling 120 full
    /// adders; chains of odd length carry one extra FA7T, and 42 chains
    /// (the 32 one-FA, 8 three-FA, 2 five-FA nodes) are odd.
    #[test]
    fn sixty_four_leaf_structure() {
        let spec = build_tree(64, Pattern::Alternating).unwrap();
        assert_eq!(spec.node_count(), 63);
        assert_eq!(spec.fa_count(), 120);
        let t = tally(&spec);
        assert_eq!(t.per_kind_counts[&FaKind::FA7T], 81);
        assert_eq!(t.per_kind_counts[&FaKind::PG26T], 39);
        assert_eq!(81 - 39, 42);
        assert_eq!(t.total_transistors, 81 * 7 + 39 * 26);
    }

    #[test]
    fn tally_uniform_trees() {
        let n = build_tree(64, Pattern::AllAccurate).unwrap();
        let t = tally(&n);
        assert_eq!(t.total_transistors, 26 * 120);
        assert_eq!(t.estimated_area_um2, 15.63 * 120.0);

        let all28: Vec<FaKind> = vec![FaKind::FA28T; 120];
        let d = build_tree(64, Pattern::Custom(all28)).unwrap();
        let td = tally(&d);
        assert_eq!(td.total_transistors, 28 * 120);
        assert_eq!(td.estimated_area_um2, 22.5 * 120.0);
    }

    #[test]
    fn equal_split_reduction_is_36_5_pct() {
        // A strict 1:1 split averages (7+26)/2 = 16.5 transistors per FA,
        // 36.5% below all-PG26T. The published 21.35% implies a different
        // ratio; both ends of that discrepancy stay visible.
        let half: Vec<FaKind> = (0..120)
            .map(|i| if i % 2 == 0 { FaKind::FA7T } else { FaKind::PG26T })
            .collect();
        let spec = build_tree(64, Pattern::Custom(half)).unwrap();
        let baseline = tally(&build_tree(64, Pattern::AllAccurate).unwrap());
        let pct = transistor_reduction_pct(&tally(&spec), &baseline);
        assert!((pct - 100.0 * (1.0 - 16.5 / 26.0)).abs() < 1e-12);
        assert_eq!((pct * 10.0).round() / 10.0, 36.5);
        assert!((reported::TRANSISTOR_REDUCTION_PCT - 21.35).abs() < f64::EPSILON);
    }

    #[test]
    fn alternating_beats_uniform_accurate_and_conventional() {
        for leaves in [2, 3, 8, 64] {
            let alt = tally(&build_tree(leaves, Pattern::Alternating).unwrap());
            let acc = tally(&build_tree(leaves, Pattern::AllAccurate).unwrap());
            let fa28: Vec<FaKind> = vec![FaKind::FA28T; alt_fa_count(leaves)];
            let conv = tally(&build_tree(leaves, Pattern::Custom(fa28)).unwrap());
            assert!(alt.total_transistors < acc.total_transistors);
            assert!(alt.total_transistors < conv.total_transistors);
        }
    }

    fn alt_fa_count(leaves: usize) -> usize {
        build_tree(leaves, Pattern::Alternating).unwrap().fa_count()
    }

    #[test]
    fn tally_is_linear_under_concatenation() {
        let a = tally(&build_tree(8, Pattern::Alternating).unwrap());
        let b = tally(&build_tree(16, Pattern::AllAccurate).unwrap());
        let mut mask = build_tree(8, Pattern::Alternating).unwrap().kind_mask();
        mask.extend(build_tree(16, Pattern::AllAccurate).unwrap().kind_mask());
        let total: u64 = mask.iter().map(|k| k.transistor_count() as u64).sum();
        assert_eq!(total, a.total_transistors + b.total_transistors);
    }

    #[test]
    fn custom_mask_length_is_checked() {
        assert!(matches!(
            build_tree(4, Pattern::Custom(vec![FaKind::FA7T; 3])),
            Err(Error::KindMaskMismatch {
                expected: 4,
                got: 3
            })
        ));
    }

    #[test]
    fn json_round_trip_preserves_tally() {
        for pattern in [
            Pattern::Alternating,
            Pattern::AllAccurate,
            Pattern::Custom(
                (0..120)
                    .map(|i| if i % 3 == 0 { FaKind::FA28T } else { FaKind::FA7T })
                    .collect(),
            ),
        ] {
            let spec = build_tree(64, pattern).unwrap();
            let json = spec.to_json().unwrap();
            let back = AdderTreeSpec::from_json(&json).unwrap();
            assert_eq!(tally(&back), tally(&spec));
            assert_eq!(back.kind_mask(), spec.kind_mask());
        }
    }

    #[test]
    fn odd_leaf_counts_pass_values_through() {
        // 5 leaves: 2 nodes + passthrough, then 1 node + passthrough, then
        // the root; still leaf_count - 1 nodes in total.
        let spec = build_tree(5, Pattern::AllReduced).unwrap();
        assert_eq!(spec.node_count(), 4);
        let vals = [3u64, 9, 14, 2, 8];
        assert_eq!(reduce(&vals, &Pattern::AllReduced), 36);
    }

    proptest! {
        #[test]
        fn reduce_equals_sum_for_any_pattern(
            values in proptest::collection::vec(0u64..1 << 32, 1..80)
        ) {
            let expected: u64 = values.iter().sum();
            prop_assert_eq!(reduce(&values, &Pattern::Alternating), expected);
            prop_assert_eq!(reduce(&values, &Pattern::AllAccurate), expected);
            prop_assert_eq!(reduce(&values, &Pattern::AllReduced), expected);
        }

        #[test]
        fn node_count_is_leaves_minus_one(leaves in 2usize..200) {
            let spec = build_tree(leaves, Pattern::Alternating).unwrap();
            prop_assert_eq!(spec.node_count(), leaves - 1);
        }
    }
}
