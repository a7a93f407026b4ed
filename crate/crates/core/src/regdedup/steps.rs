use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Range;

use super::MergeRule;
use crate::error::{Error, Result};
use crate::segmask::SegmentPartition;
use crate::sequence::ScoreVector;
use crate::tensor::{cosine_sim, merge_mean, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Selected,
    Prefiltered,
    Deduped,
    Filled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryOrigin {
    /// A top-K token (a pivot after deduplication).
    Register,
    /// A cluster center added during post-filling.
    ClusterCenter,
}

/// One retained token and everything merged into it.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisterEntry {
    /// Original visual index; for cluster centers, the cluster's first member.
    pub index: usize,
    pub representative: Vec<f32>,
    /// Original indices merged into this entry, excluding `index` itself.
    pub absorbed: Vec<usize>,
    pub origin: EntryOrigin,
}

impl RegisterEntry {
    pub fn new(index: usize, representative: Vec<f32>) -> Self {
        Self {
            index,
            representative,
            absorbed: Vec::new(),
            origin: EntryOrigin::Register,
        }
    }

    /// Number of original tokens this entry stands for.
    #[inline]
    pub fn weight(&self) -> usize {
        1 + self.absorbed.len()
    }

    fn absorb(&mut self, index: usize, vector: &[f32], weight: usize, extra: &[usize], rule: MergeRule) {
        if rule == MergeRule::Mean {
            let own = self.weight();
            merge_mean(&mut self.representative, own, vector, weight);
        }
        self.absorbed.push(index);
        self.absorbed.extend_from_slice(extra);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRegisters {
    pub segment: usize,
    pub range: Range<usize>,
    /// Ascending by `index`.
    pub entries: Vec<RegisterEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisterSet {
    pub stage: Stage,
    pub segments: Vec<SegmentRegisters>,
}

impl RegisterSet {
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> Vec<usize> {
        self.segments
            .iter()
            .flat_map(|s| s.entries.iter().map(|e| e.index))
            .collect()
    }
}

fn cmp_score_desc(values: &[f32], a: usize, b: usize) -> Ordering {
    values[b].total_cmp(&values[a]).then(a.cmp(&b))
}

/// The `k` highest-scoring positions, ties toward the smaller index, returned ascending.
pub fn topk_indices(scores: &ScoreVector, k: usize) -> Result<Vec<usize>> {
    let n = scores.len();
    if k == 0 || k > n {
        return Err(Error::OutOfRange {
            what: "top-K budget",
            value: k,
            min: 1,
            max: n,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| cmp_score_desc(&scores.values, a, b));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// Top-K selection grouped by segment. `tokens` holds one row per visual token.
pub fn topk_select(
    scores: &ScoreVector,
    k: usize,
    partition: &SegmentPartition,
    tokens: &Matrix,
) -> Result<RegisterSet> {
    if partition.visual_len() != scores.len() || tokens.rows() < scores.len() {
        return Err(Error::Shape {
            what: "scores vs partition",
            expected: partition.visual_len(),
            got: scores.len(),
        });
    }
    let selected = topk_indices(scores, k)?;
    let mut segments: Vec<SegmentRegisters> = partition
        .segments()
        .iter()
        .enumerate()
        .map(|(segment, range)| SegmentRegisters {
            segment,
            range: range.clone(),
            entries: Vec::new(),
        })
        .collect();
    for i in selected {
        segments[partition.segment_of(i)]
            .entries
            .push(RegisterEntry::new(i, tokens.row(i).to_vec()));
    }
    Ok(RegisterSet {
        stage: Stage::Selected,
        segments,
    })
}

/// Step 1. Each non-register token of `segment` whose best similarity to a register's original
/// vector exceeds `tau_filter` is absorbed into that register (ties toward the lower register
/// index). Returns the untouched non-registers, ascending.
pub fn prefilter(
    tokens: &Matrix,
    segment: Range<usize>,
    registers: &mut [RegisterEntry],
    tau_filter: f32,
    rule: MergeRule,
) -> Result<Vec<usize>> {
    let mut remaining = Vec::new();
    if registers.is_empty() {
        remaining.extend(segment);
        return Ok(remaining);
    }
    let originals: Vec<usize> = registers.iter().map(|r| r.index).collect();
    let mut is_register = alloc::vec![false; segment.len()];
    for &r in &originals {
        if !segment.contains(&r) {
            return Err(Error::OutOfRange {
                what: "register outside its segment",
                value: r,
                min: segment.start,
                max: segment.end.saturating_sub(1),
            });
        }
        is_register[r - segment.start] = true;
    }
    for i in segment.clone() {
        if is_register[i - segment.start] {
            continue;
        }
        let x = tokens.row(i);
        let mut best: Option<(usize, f32)> = None;
        for (slot, &r) in originals.iter().enumerate() {
            let s = cosine_sim(x, tokens.row(r))?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((slot, s));
            }
        }
        match best {
            Some((slot, s)) if s > tau_filter => registers[slot].absorb(i, x, 1, &[], rule),
            _ => remaining.push(i),
        }
    }
    Ok(remaining)
}

/// Step 2. Left-to-right scan: a register merges into the current pivot when their
/// representatives' similarity exceeds `tau_merge`, otherwise it becomes the pivot.
pub fn dedup(registers: Vec<RegisterEntry>, tau_merge: f32, rule: MergeRule) -> Result<Vec<RegisterEntry>> {
    let mut out: Vec<RegisterEntry> = Vec::with_capacity(registers.len());
    for reg in registers {
        if let Some(pivot) = out.last_mut() {
            if reg.index < pivot.index {
                return Err(Error::Config(alloc::format!(
                    "dedup input must be ascending: {} after {}",
                    reg.index,
                    pivot.index
                )));
            }
            if cosine_sim(&pivot.representative, &reg.representative)? > tau_merge {
                let w = reg.weight();
                pivot.absorb(reg.index, &reg.representative, w, &reg.absorbed, rule);
                continue;
            }
        }
        out.push(reg);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Consecutive in scan order, ascending.
    pub members: Vec<usize>,
    pub center: Vec<f32>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Diversity of every cluster against `registers`.
    pub fn diversity(&self, registers: &[RegisterEntry], beta: f32) -> Result<Vec<f32>> {
        let regs: Vec<&[f32]> = registers.iter().map(|r| r.representative.as_slice()).collect();
        self.clusters
            .iter()
            .map(|c| diversity_score(&c.center, c.size(), &regs, beta))
            .collect()
    }
}

/// Greedy sequential clustering: a token joins the current cluster when its similarity to
/// the cluster's running mean exceeds `tau_cluster`, otherwise it opens a new cluster.
pub fn cluster_scan(tokens: &Matrix, indices: &[usize], tau_cluster: f32) -> Result<ClusterSet> {
    let mut clusters: Vec<Cluster> = Vec::new();
    for &i in indices {
        let x = tokens.row(i);
        if let Some(c) = clusters.last_mut() {
            if cosine_sim(&c.center, x)? > tau_cluster {
                merge_mean(&mut c.center, c.members.len(), x, 1);
                c.members.push(i);
                continue;
            }
        }
        clusters.push(Cluster {
            members: alloc::vec![i],
            center: x.to_vec(),
        });
    }
    Ok(ClusterSet { clusters })
}

/// `(1 - mean_r sim(center, r)) + beta * cluster_size`.
pub fn diversity_score(center: &[f32], cluster_size: usize, registers: &[&[f32]], beta: f32) -> Result<f32> {
    if registers.is_empty() {
        return Err(Error::Empty("diversity score needs at least one register"));
    }
    let mut total = 0.0f32;
    for r in registers {
        total += cosine_sim(center, r)?;
    }
    Ok((1.0 - total / registers.len() as f32) + beta * cluster_size as f32)
}

/// Step 3. Adds cluster centers in descending diversity (ties toward the smaller first member)
/// until `target` entries exist or clusters run out. Returns the filled set, ascending, and
/// the shortfall.
pub fn postfill(
    deduped: Vec<RegisterEntry>,
    clusters: &ClusterSet,
    target: usize,
    beta: f32,
) -> Result<(Vec<RegisterEntry>, usize)> {
    let need = target.saturating_sub(deduped.len());
    if need == 0 || clusters.is_empty() {
        return Ok((deduped, need));
    }
    let div = clusters.diversity(&deduped, beta)?;
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        div[b]
            .total_cmp(&div[a])
            .then(clusters.clusters[a].members[0].cmp(&clusters.clusters[b].members[0]))
    });
    let mut out = deduped;
    for &c in order.iter().take(need) {
        let cl = &clusters.clusters[c];
        out.push(RegisterEntry {
            index: cl.members[0],
            representative: cl.center.clone(),
            absorbed: cl.members[1..].to_vec(),
            origin: EntryOrigin::ClusterCenter,
        });
    }
    let added = need.min(clusters.len());
    out.sort_unstable_by_key(|e| e.index);
    Ok((out, need - added))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn m(rows: &[[f32; 2]]) -> Matrix {
        Matrix::from_rows(rows, 2).unwrap()
    }

    fn angle(theta_deg: f32) -> [f32; 2] {
        let t = theta_deg.to_radians();
        [libm::cosf(t), libm::sinf(t)]
    }

    fn sv(values: &[f32]) -> ScoreVector {
        ScoreVector {
            values: values.to_vec(),
            layer: 1,
            debiased: false,
        }
    }

    #[test]
    fn topk_basic_and_ties() {
        assert_eq!(topk_indices(&sv(&[0.1, 0.9, 0.5]), 2).unwrap(), vec![1, 2]);
        assert_eq!(topk_indices(&sv(&[1.0; 5]), 2).unwrap(), vec![0, 1]);
        assert_eq!(topk_indices(&sv(&[0.3, 0.2]), 2).unwrap(), vec![0, 1]);
        assert!(topk_indices(&sv(&[0.3, 0.2]), 3).is_err());
        assert!(topk_indices(&sv(&[0.3, 0.2]), 0).is_err());
    }

    #[test]
    fn topk_groups_by_segment() {
        let part = SegmentPartition::from_boundaries(vec![2], 4, 1).unwrap();
        let tokens = m(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]]);
        let set = topk_select(&sv(&[0.9, 0.1, 0.8, 0.7]), 3, &part, &tokens).unwrap();
        assert_eq!(set.stage, Stage::Selected);
        assert_eq!(set.segments[0].entries.len(), 1);
        assert_eq!(set.segments[1].entries.len(), 2);
        assert_eq!(set.indices(), vec![0, 2, 3]);
    }

    #[test]
    fn prefilter_absorbs_duplicates_only() {
        // token 1 duplicates register 0; token 2 is orthogonal to it
        let tokens = m(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let mut regs = vec![RegisterEntry::new(0, vec![1.0, 0.0])];
        let rest = prefilter(&tokens, 0..3, &mut regs, 0.7, MergeRule::Mean).unwrap();
        assert_eq!(regs[0].absorbed, vec![1]);
        assert_eq!(rest, vec![2]);
    }

    #[test]
    fn prefilter_picks_the_most_similar_register() {
        let tokens = m(&[angle(0.0), angle(30.0), angle(40.0), angle(50.0), angle(90.0)]);
        let mut regs = vec![RegisterEntry::new(0, tokens.row(0).to_vec()), RegisterEntry::new(4, tokens.row(4).to_vec())];
        let rest = prefilter(&tokens, 0..5, &mut regs, 0.7, MergeRule::KeepPivot).unwrap();
        // cos 30 = .866 to reg 0; cos 40 = .766 to reg 0 vs cos 50 = .643; token 3 is 40deg from reg 4
        assert_eq!(regs[0].absorbed, vec![1, 2]);
        assert_eq!(regs[1].absorbed, vec![3]);
        assert!(rest.is_empty());
        assert_eq!(regs[0].representative, vec![1.0, 0.0]);
    }

    #[test]
    fn dedup_identical_collapses() {
        let regs: Vec<RegisterEntry> = (0..4).map(|i| RegisterEntry::new(i, vec![1.0, 2.0])).collect();
        let out = dedup(regs, 0.8, MergeRule::Mean).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].absorbed, vec![1, 2, 3]);
    }

    #[test]
    fn dedup_dissimilar_is_noop() {
        let regs = vec![
            RegisterEntry::new(0, angle(0.0).to_vec()),
            RegisterEntry::new(1, angle(90.0).to_vec()),
            RegisterEntry::new(2, angle(180.0).to_vec()),
        ];
        let out = dedup(regs.clone(), 0.8, MergeRule::Mean).unwrap();
        assert_eq!(out, regs);
    }

    #[test]
    fn dedup_running_mean_hand_scan() {
        // p1 = 0deg, p2 = a, p3 = 2a with cos a = 0.9 (a = 25.84deg), so adjacent sims are 0.9
        // and sim(p1, p3) = cos(51.68deg) = 0.620. After absorbing p2 the pivot is
        // mean(p1, p2), pointing at 12.92deg, and sim(pivot, p3) = cos(38.76deg) = 0.780.
        let a = libm::acosf(0.9).to_degrees();
        let p = [angle(0.0), angle(a), angle(2.0 * a)];
        let regs: Vec<RegisterEntry> = p.iter().enumerate().map(|(i, v)| RegisterEntry::new(i, v.to_vec())).collect();

        // 0.780 < 0.8: p3 starts a new pivot
        let out = dedup(regs.clone(), 0.8, MergeRule::Mean).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].absorbed, vec![1]);
        let mean = [(1.0 + p[1][0]) / 2.0, p[1][1] / 2.0];
        assert!((out[0].representative[0] - mean[0]).abs() < 1e-6);
        assert!((out[0].representative[1] - mean[1]).abs() < 1e-6);
        assert_eq!(out[1].index, 2);

        // 0.780 > 0.75: the mean pivot swallows p3 too
        let loose = dedup(regs.clone(), 0.75, MergeRule::Mean).unwrap();
        assert_eq!(loose.len(), 1);
        assert_eq!(loose[0].absorbed, vec![1, 2]);

        // keep-pivot compares p3 with p1 itself: 0.620 < 0.75
        let keep = dedup(regs, 0.75, MergeRule::KeepPivot).unwrap();
        assert_eq!(keep.len(), 2);
        assert_eq!(keep[0].representative, p[0].to_vec());
    }

    #[test]
    fn dedup_rejects_unsorted_input() {
        let regs = vec![RegisterEntry::new(3, vec![1.0]), RegisterEntry::new(1, vec![1.0])];
        assert!(dedup(regs, 0.8, MergeRule::Mean).is_err());
    }

    #[test]
    fn cluster_scan_cases() {
        let same = m(&[[1.0, 1.0]; 4]);
        let cs = cluster_scan(&same, &[0, 1, 2, 3], 0.4).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs.clusters[0].size(), 4);

        let ortho = m(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]);
        assert_eq!(cluster_scan(&ortho, &[0, 1, 2, 3], 0.4).unwrap().len(), 4);

        assert!(cluster_scan(&ortho, &[], 0.4).unwrap().is_empty());
    }

    #[test]
    fn cluster_scan_hand_trace() {
        // angles 0, 60, 100, 170, 200 (tau = 0.4, so joining needs < 66.4deg from the mean)
        // 60 joins 0 (cos60 = .5): center at 30deg, length cos30
        // 100 vs 30: 70deg, cos = .342 -> new cluster
        // 170 vs 100: 70deg -> new cluster
        // 200 vs 170: 30deg -> joins
        let t = m(&[angle(0.0), angle(60.0), angle(100.0), angle(170.0), angle(200.0)]);
        let cs = cluster_scan(&t, &[0, 1, 2, 3, 4], 0.4).unwrap();
        let members: Vec<Vec<usize>> = cs.clusters.iter().map(|c| c.members.clone()).collect();
        assert_eq!(members, vec![vec![0, 1], vec![2], vec![3, 4]]);
    }

    #[test]
    fn diversity_spot_values() {
        let r = [1.0f32, 0.0];
        assert_eq!(diversity_score(&r, 1, &[&r], 0.008).unwrap(), 0.008);
        let c = [0.0f32, 1.0];
        assert!((diversity_score(&c, 3, &[&r], 0.008).unwrap() - 1.024).abs() < 1e-6);
        assert!(diversity_score(&c, 3, &[], 0.008).is_err());
    }

    #[test]
    fn postfill_noop_when_target_met() {
        let regs = vec![RegisterEntry::new(0, vec![1.0, 0.0])];
        let cs = ClusterSet {
            clusters: vec![Cluster { members: vec![1], center: vec![0.0, 1.0] }],
        };
        let (out, short) = postfill(regs.clone(), &cs, 1, 0.008).unwrap();
        assert_eq!(out, regs);
        assert_eq!(short, 0);
    }

    #[test]
    fn postfill_takes_most_diverse_centers() {
        // one register at 0deg; centers chosen so Div = (1 - cos) + beta*size
        let reg = vec![RegisterEntry::new(0, vec![1.0, 0.0])];
        let beta = 0.008;
        let mk = |first: usize, deg: f32, size: usize| Cluster {
            members: (first..first + size).collect(),
            center: angle(deg).to_vec(),
        };
        // Div: 1 - cos(90) + .016 = 1.016;  1 - cos(55) + .024 = .450;  1 - cos(80) + .008 = .834
        let cs = ClusterSet {
            clusters: vec![mk(1, 90.0, 2), mk(3, 55.0, 3), mk(6, 80.0, 1)],
        };
        let div = cs.diversity(&reg, beta).unwrap();
        assert!(div[0] > div[2] && div[2] > div[1]);
        let (out, short) = postfill(reg, &cs, 3, beta).unwrap();
        assert_eq!(short, 0);
        let idx: Vec<usize> = out.iter().map(|e| e.index).collect();
        assert_eq!(idx, vec![0, 1, 6]);
        assert_eq!(out[1].origin, EntryOrigin::ClusterCenter);
        assert_eq!(out[1].absorbed, vec![2]);
    }

    #[test]
    fn postfill_records_shortfall() {
        let reg = vec![RegisterEntry::new(0, vec![1.0, 0.0])];
        let cs = ClusterSet {
            clusters: vec![Cluster { members: vec![4], center: vec![0.0, 1.0] }],
        };
        let (out, short) = postfill(reg, &cs, 4, 0.008).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(short, 2);
    }
}
