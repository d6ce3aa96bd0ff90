use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::signature::ImageSignature;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DuplicateKind {
    Exact,
    Near,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    /// Sorted record ids, at least two.
    pub members: Vec<String>,
    pub kind: DuplicateKind,
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Groups signatures into disjoint duplicate groups.
///
/// Byte-identical images are always joined; images are also joined when their
/// hashes differ in at most `hamming_threshold` bits, closed transitively. A
/// group whose members all share one digest is `Exact`, anything else `Near`.
pub fn find_duplicates(signatures: &[ImageSignature], hamming_threshold: u32) -> Vec<DuplicateGroup> {
    let n = signatures.len();
    let mut uf = UnionFind((0..n).collect());

    let mut by_digest: HashMap<&str, usize> = HashMap::new();
    for (i, s) in signatures.iter().enumerate() {
        match by_digest.get(s.exact_digest.as_str()) {
            Some(&j) => uf.union(i, j),
            None => {
                by_digest.insert(&s.exact_digest, i);
            }
        }
    }

    // One representative per distinct digest keeps the quadratic scan small.
    let mut reps: Vec<usize> = by_digest.values().copied().collect();
    reps.sort_unstable();
    for (a, &i) in reps.iter().enumerate() {
        for &j in &reps[a + 1..] {
            if hamming(signatures[i].phash, signatures[j].phash) <= hamming_threshold {
                uf.union(i, j);
            }
        }
    }

    let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = uf.find(i);
        comps.entry(root).or_default().push(i);
    }
    let mut groups: Vec<DuplicateGroup> = comps
        .into_values()
        .filter(|m| m.len() >= 2)
        .map(|m| {
            let digest = &signatures[m[0]].exact_digest;
            let kind = if m.iter().all(|&i| &signatures[i].exact_digest == digest) {
                DuplicateKind::Exact
            } else {
                DuplicateKind::Near
            };
            let mut members: Vec<String> =
                m.iter().map(|&i| signatures[i].record_id.clone()).collect();
            members.sort();
            members.dedup();
            DuplicateGroup { members, kind }
        })
        .filter(|g| g.members.len() >= 2)
        .collect();
    groups.sort_by(|a, b| a.members.cmp(&b.members));
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(id: &str, phash: u64, digest: &str) -> ImageSignature {
        ImageSignature {
            record_id: id.into(),
            phash,
            exact_digest: digest.into(),
        }
    }

    #[test]
    fn byte_identical_images_form_one_exact_group() {
        let sigs = vec![sig("a", 1, "d"), sig("b", 1, "d"), sig("c", 1, "d"), sig("z", !0, "e")];
        let groups = find_duplicates(&sigs, 10);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].members, vec!["a", "b", "c"]);
        assert_eq!(groups[0].kind, DuplicateKind::Exact);
    }

    #[test]
    fn threshold_zero_with_distinct_hashes_has_no_groups() {
        let sigs: Vec<_> = (0..8).map(|i| sig(&format!("r{i}"), 1 << i, &format!("d{i}"))).collect();
        assert!(find_duplicates(&sigs, 0).is_empty());
        assert!(find_duplicates(&[], 10).is_empty());
    }

    #[test]
    fn near_groups_close_transitively() {
        // a-b differ by 6 bits, b-c by 6, a-c by 12.
        let a = 0u64;
        let b = 0b11_1111;
        let c = 0b1111_1111_1111;
        let sigs = vec![sig("a", a, "1"), sig("b", b, "2"), sig("c", c, "3")];
        assert!(hamming(a, c) > 10);
        let groups = find_duplicates(&sigs, 10);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].members, vec!["a", "b", "c"]);
        assert_eq!(groups[0].kind, DuplicateKind::Near);
    }
}
