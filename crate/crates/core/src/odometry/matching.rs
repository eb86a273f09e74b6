//! Mutual-nearest-neighbor descriptor matching between consecutive left
//! frames.

use crate::imaging::OrbFeature;

#[derive(Debug, Clone)]
pub struct MatchParams {
    pub max_hamming: u32,
    /// Best/second-best distance ratio gate (applied prev -> curr).
    pub ratio: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            max_hamming: 64,
            ratio: 0.8,
        }
    }
}

/// One-to-one matches (prev index, curr index): mutual nearest neighbors
/// under Hamming distance with absolute and ratio gates. Ties resolve to
/// the lowest index, so the result is deterministic.
pub fn match_features(
    prev: &[OrbFeature],
    curr: &[OrbFeature],
    params: &MatchParams,
) -> Vec<(usize, usize)> {
    if prev.is_empty() || curr.is_empty() {
        return Vec::new();
    }

    // prev -> curr best and second-best
    let mut fwd: Vec<(u32, u32, usize)> = Vec::with_capacity(prev.len());
    for p in prev {
        let mut best = u32::MAX;
        let mut second = u32::MAX;
        let mut best_j = usize::MAX;
        for (j, c) in curr.iter().enumerate() {
            let d = p.descriptor.hamming(&c.descriptor);
            if d < best {
                second = best;
                best = d;
                best_j = j;
            } else if d < second {
                second = d;
            }
        }
        fwd.push((best, second, best_j));
    }

    // curr -> prev best
    let mut bwd: Vec<usize> = Vec::with_capacity(curr.len());
    for c in curr {
        let mut best = u32::MAX;
        let mut best_i = usize::MAX;
        for (i, p) in prev.iter().enumerate() {
            let d = c.descriptor.hamming(&p.descriptor);
            if d < best {
                best = d;
                best_i = i;
            }
        }
        bwd.push(best_i);
    }

    let mut out = Vec::new();
    for (i, &(best, second, j)) in fwd.iter().enumerate() {
        if j == usize::MAX || best > params.max_hamming {
            continue;
        }
        if second != u32::MAX && best as f64 > params.ratio * second as f64 {
            continue;
        }
        if bwd[j] == i {
            out.push((i, j));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{BinaryDescriptor, FeaturePoint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feat(desc: [u64; 4]) -> OrbFeature {
        OrbFeature {
            point: FeaturePoint {
                x: 0.0,
                y: 0.0,
                level: 0,
                response: 0.0,
                angle: 0.0,
            },
            x0: 0.0,
            y0: 0.0,
            descriptor: BinaryDescriptor(desc),
        }
    }

    #[test]
    fn identical_sets_match_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let feats: Vec<OrbFeature> = (0..40)
            .map(|_| feat([rng.random(), rng.random(), rng.random(), rng.random()]))
            .collect();
        let matches = match_features(&feats, &feats, &MatchParams::default());
        assert_eq!(matches.len(), feats.len());
        assert!(matches.iter().all(|&(i, j)| i == j));
    }

    #[test]
    fn random_descriptor_sets_barely_match() {
        // Independent random bitstrings sit at expected distance 128,
        // far beyond the 64-bit gate.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<OrbFeature> = (0..60)
            .map(|_| feat([rng.random(), rng.random(), rng.random(), rng.random()]))
            .collect();
        let b: Vec<OrbFeature> = (0..60)
            .map(|_| feat([rng.random(), rng.random(), rng.random(), rng.random()]))
            .collect();
        let matches = match_features(&a, &b, &MatchParams::default());
        assert!(matches.len() <= 1, "{} chance matches", matches.len());
    }

    #[test]
    fn mutual_nearest_is_one_to_one() {
        // Two prev features equally close to one curr feature: at most
        // one pair survives.
        let target = [0xffff_0000_u64, 0, 0, 0];
        let a = vec![feat([0xffff_0000, 0, 0, 1]), feat([0xffff_0000, 0, 0, 2])];
        let b = vec![feat(target)];
        let matches = match_features(&a, &b, &MatchParams {
            max_hamming: 64,
            ratio: 1.0,
        });
        assert!(matches.len() <= 1);
        let mut seen = std::collections::HashSet::new();
        for (_, j) in matches {
            assert!(seen.insert(j));
        }
    }
}
