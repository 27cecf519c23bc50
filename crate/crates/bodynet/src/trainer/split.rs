//! Sequence-granularity dataset splitting. Windows from one sequence overlap
//! heavily, so the split boundary must run between sequences or the
//! validation score leaks training data.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{DeviceWindow, WalkingMode};

use super::{Result, TrainError};

/// One sequence's windows plus the identity needed for stratification and
/// reporting.
#[derive(Debug, Clone)]
pub struct SequenceData {
    pub sequence_id: String,
    pub mode: WalkingMode,
    pub windows: Vec<DeviceWindow>,
}

/// Indices into the input slice, one list per split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits sequences into train/validation/test by the given ratios.
/// Deterministic for a given seed; sequences are grouped by walking mode and
/// dealt round-robin so every split sees every mode whenever counts allow.
pub fn split_dataset(
    seqs: &[SequenceData],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitIndices> {
    let n = seqs.len();
    if n < 3 {
        return Err(TrainError::TooFewSequences { got: n });
    }
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (sum - 1.0).abs() > 1e-9 {
        return Err(TrainError::Config {
            detail: format!("split ratios must lie in [0,1] and sum to 1, got {ratios:?}"),
        });
    }

    // Every split with a nonzero ratio gets at least one sequence (an empty
    // validation or test set is useless), then the rest go to whichever
    // split is furthest below its target.
    let mut counts = [0usize; 3];
    let mut assigned = 0;
    for (i, &r) in ratios.iter().enumerate() {
        if r > 0.0 {
            counts[i] = 1;
            assigned += 1;
        }
    }
    if assigned > n {
        return Err(TrainError::TooFewSequences { got: n });
    }
    for _ in assigned..n {
        let deficits: Vec<f64> =
            (0..3).map(|i| ratios[i] * n as f64 - counts[i] as f64).collect();
        let pick = (0..3)
            .max_by(|&a, &b| deficits[a].partial_cmp(&deficits[b]).unwrap().then(b.cmp(&a)))
            .expect("three splits");
        counts[pick] += 1;
    }

    // Group by mode, shuffle within groups, then deal groups round-robin so
    // a contiguous cut covers all modes when group sizes permit.
    let mut by_mode: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        let key = format!("{:?}", s.mode);
        match by_mode.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(i),
            None => by_mode.push((key, vec![i])),
        }
    }
    by_mode.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, group) in &mut by_mode {
        group.shuffle(&mut rng);
    }
    let mut dealt = Vec::with_capacity(n);
    let mut round = 0;
    while dealt.len() < n {
        for (_, group) in &by_mode {
            if let Some(&idx) = group.get(round) {
                dealt.push(idx);
            }
        }
        round += 1;
    }

    let train = dealt[..counts[0]].to_vec();
    let val = dealt[counts[0]..counts[0] + counts[1]].to_vec();
    let test = dealt[counts[0] + counts[1]..].to_vec();
    Ok(SplitIndices { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(modes: &[WalkingMode]) -> Vec<SequenceData> {
        modes
            .iter()
            .enumerate()
            .map(|(i, &mode)| SequenceData {
                sequence_id: format!("seq-{i:02}"),
                mode,
                windows: Vec::new(),
            })
            .collect()
    }

    #[test]
    fn ten_sequences_split_six_two_two() {
        let data = seqs(&[WalkingMode::STW; 10]);
        let s = split_dataset(&data, [0.6, 0.2, 0.2], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
    }

    #[test]
    fn same_seed_reproduces_and_different_seed_moves_sequences() {
        let modes = [
            WalkingMode::STW,
            WalkingMode::PVW,
            WalkingMode::MVW,
            WalkingMode::DRW,
            WalkingMode::DLW,
        ];
        let data: Vec<SequenceData> =
            (0..20).map(|i| seqs(&[modes[i % 5]]).remove(0)).collect();
        let a = split_dataset(&data, [0.6, 0.2, 0.2], 9).unwrap();
        let b = split_dataset(&data, [0.6, 0.2, 0.2], 9).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&data, [0.6, 0.2, 0.2], 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let data = seqs(&[WalkingMode::STW; 17]);
        let s = split_dataset(&data, [0.6, 0.2, 0.2], 3).unwrap();
        let mut all: Vec<usize> =
            s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        let expect: Vec<usize> = (0..17).collect();
        assert_eq!(all, expect);
    }

    #[test]
    fn every_split_covers_every_mode_when_counts_allow() {
        let modes = [
            WalkingMode::STW,
            WalkingMode::PVW,
            WalkingMode::MVW,
            WalkingMode::DRW,
            WalkingMode::DLW,
        ];
        let data: Vec<SequenceData> =
            (0..40).map(|i| seqs(&[modes[i % 5]]).remove(0)).collect();
        let s = split_dataset(&data, [0.6, 0.2, 0.2], 5).unwrap();
        for part in [&s.train, &s.val, &s.test] {
            let mut seen: Vec<String> =
                part.iter().map(|&i| format!("{:?}", data[i].mode)).collect();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), 5, "split missing modes: {seen:?}");
        }
    }

    #[test]
    fn fewer_than_three_sequences_is_an_error() {
        let data = seqs(&[WalkingMode::STW; 2]);
        assert!(matches!(
            split_dataset(&data, [0.6, 0.2, 0.2], 0),
            Err(TrainError::TooFewSequences { got: 2 })
        ));
    }

    #[test]
    fn three_sequences_give_one_each() {
        let data = seqs(&[WalkingMode::STW; 3]);
        let s = split_dataset(&data, [0.6, 0.2, 0.2], 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 1, 1));
    }
}
