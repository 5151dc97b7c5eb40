use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::descriptor::BinaryDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub source: usize,
    pub target: usize,
    pub distance: u32,
}

pub type MatchSet = Vec<Match>;

/// Sentinel "second nearest" distance when only one candidate exists.
const NO_SECOND: u32 = 257;

/// Nearest neighbour by Hamming distance with a ratio test and a mutual-best check.
///
/// A source descriptor is kept when `d1 < ratio * d2` (ties are rejected) and
/// its nearest target has it as nearest source in return.
pub fn match_descriptors(a: &[BinaryDescriptor], b: &[BinaryDescriptor], ratio: f64) -> Result<MatchSet> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("descriptor list".into()));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("ratio {ratio} not in (0, 1]")));
    }
    // best source for every target, first index on ties
    let mut best_for_target = vec![(u32::MAX, usize::MAX); b.len()];
    for (i, da) in a.iter().enumerate() {
        for (j, db) in b.iter().enumerate() {
            let d = da.hamming(db);
            if d < best_for_target[j].0 {
                best_for_target[j] = (d, i);
            }
        }
    }
    let mut matches = Vec::new();
    for (i, da) in a.iter().enumerate() {
        let (mut d1, mut d2, mut j1) = (u32::MAX, NO_SECOND, usize::MAX);
        for (j, db) in b.iter().enumerate() {
            let d = da.hamming(db);
            if d < d1 {
                d2 = d1.min(d2);
                d1 = d;
                j1 = j;
            } else if d < d2 {
                d2 = d;
            }
        }
        if (d1 as f64) < ratio * d2 as f64 && best_for_target[j1].1 == i {
            matches.push(Match { source: i, target: j1, distance: d1 });
        }
    }
    Ok(matches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(bits: u32) -> BinaryDescriptor {
        // set the lowest `bits` bits
        let mut words = [0u64; 4];
        for i in 0..bits as usize {
            words[i / 64] |= 1 << (i % 64);
        }
        BinaryDescriptor(words)
    }

    #[test]
    fn identical_lists_match_identically() {
        let a: Vec<_> = [0u64, 0xff, 0xff00ff, 0xdead_beef_u64]
            .iter()
            .map(|&w| BinaryDescriptor([w, !w, w.rotate_left(7), 0]))
            .collect();
        let m = match_descriptors(&a, &a, 0.8).unwrap();
        assert_eq!(m.len(), a.len());
        for (i, x) in m.iter().enumerate() {
            assert_eq!((x.source, x.target, x.distance), (i, i, 0));
        }
    }

    #[test]
    fn copy_plus_far_decoy_keeps_one_match() {
        let a = vec![desc(0)];
        let b = vec![desc(0), desc(128)];
        assert_eq!(b[0].hamming(&b[1]), 128);
        let m = match_descriptors(&a, &b, 0.8).unwrap();
        assert_eq!(m, vec![Match { source: 0, target: 0, distance: 0 }]);
    }

    #[test]
    fn equidistant_candidates_are_rejected() {
        let a = vec![desc(0)];
        let b = vec![BinaryDescriptor([0b1111, 0, 0, 0]), BinaryDescriptor([0b1111_0000, 0, 0, 0])];
        assert!(match_descriptors(&a, &b, 1.0).unwrap().is_empty());
    }

    #[test]
    fn matches_are_one_to_one() {
        // two sources share the same nearest target; only the closer one survives
        let a = vec![desc(1), desc(3)];
        let b = vec![desc(0), desc(200)];
        let m = match_descriptors(&a, &b, 0.9).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].source, 0);
    }

    #[test]
    fn bad_inputs() {
        assert!(match_descriptors(&[], &[desc(1)], 0.8).is_err());
        assert!(match_descriptors(&[desc(1)], &[desc(1)], 0.0).is_err());
        assert!(match_descriptors(&[desc(1)], &[desc(1)], 1.5).is_err());
    }
}
