//! Label bookkeeping between epochs: merge near-duplicate large clusters,
//! then rename large clusters after the closest map of the previous epoch.

use serde::{Deserialize, Serialize};

use crate::types::AffineMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReorderOutcome {
    /// `relabel[i]` is the final label of raw cluster `i`.
    pub relabel: Vec<usize>,
    /// Pairs `(kept, absorbed)` in merge order, as raw labels.
    pub merges: Vec<(usize, usize)>,
    /// Bijection of raw labels onto slots applied after merging.
    pub permutation: Vec<usize>,
    /// Cluster sizes after merging, indexed by final label.
    pub counts: Vec<usize>,
}

impl ReorderOutcome {
    pub fn identity(counts: &[usize]) -> Self {
        let k = counts.len();
        Self {
            relabel: (0..k).collect(),
            merges: Vec::new(),
            permutation: (0..k).collect(),
            counts: counts.to_vec(),
        }
    }

    /// Maps placed in their final slots. Absorbed clusters keep their map in
    /// the slot their raw label is permuted to.
    pub fn apply_to_maps(&self, maps: &[AffineMap]) -> Vec<AffineMap> {
        let mut out = maps.to_vec();
        for (raw, map) in maps.iter().enumerate() {
            out[self.permutation[raw]] = map.clone();
        }
        out
    }

    pub fn apply_to_labels(&self, labels: &mut [usize]) {
        labels.iter_mut().for_each(|l| *l = self.relabel[*l]);
    }

    pub fn distinct_labels(&self) -> usize {
        let mut seen: Vec<usize> = self.relabel.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// Two-phase reordering.
///
/// Phase 1 merges `j` into `i` whenever both clusters have at least
/// `threshold` points and their maps are closer than `merge_gap`; the outer
/// loop runs over `i` in increasing order so the lower index survives.
/// Phase 2 visits clusters with more than `threshold` points in decreasing
/// size (ties to the lower label) and gives each the nearest unclaimed
/// previous-epoch slot. The remaining labels fill the remaining slots in
/// increasing order.
pub fn reorder(
    maps: &[AffineMap],
    counts: &[usize],
    previous: Option<&[AffineMap]>,
    threshold: f64,
    merge_gap: f64,
) -> ReorderOutcome {
    let k = maps.len();
    let mut counts = counts.to_vec();
    let mut target: Vec<usize> = (0..k).collect();
    let mut merges = Vec::new();
    for i in 0..k {
        if target[i] != i {
            continue;
        }
        for j in 0..k {
            if j == i || target[j] != j {
                continue;
            }
            let large = (counts[i].min(counts[j]) as f64) >= threshold;
            if large && maps[i].frobenius_distance(&maps[j]) < merge_gap {
                for t in target.iter_mut().filter(|t| **t == j) {
                    *t = i;
                }
                counts[i] += counts[j];
                counts[j] = 0;
                merges.push((i, j));
            }
        }
    }

    let mut permutation: Vec<usize> = (0..k).collect();
    if let Some(prev) = previous {
        let mut large: Vec<usize> = (0..k).filter(|&i| counts[i] as f64 > threshold).collect();
        large.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let mut slot_taken = vec![false; k];
        let mut assigned = vec![None; k];
        for &i in &large {
            let mut best: Option<(usize, f64)> = None;
            for (j, p) in prev.iter().enumerate().filter(|(j, _)| !slot_taken[*j]) {
                let dist = maps[i].frobenius_distance(p);
                if best.is_none_or(|(_, b)| dist < b) {
                    best = Some((j, dist));
                }
            }
            if let Some((j, _)) = best {
                slot_taken[j] = true;
                assigned[i] = Some(j);
            }
        }
        let mut free = (0..k).filter(|&j| !slot_taken[j]);
        for i in 0..k {
            permutation[i] = match assigned[i] {
                Some(j) => j,
                None => free.next().expect("as many slots as labels"),
            };
        }
    }

    let relabel = (0..k).map(|i| permutation[target[i]]).collect();
    let mut final_counts = vec![0; k];
    for i in 0..k {
        final_counts[permutation[i]] = counts[i];
    }
    ReorderOutcome {
        relabel,
        merges,
        permutation,
        counts: final_counts,
    }
}
