//! Scalar metrics shared by the segmentation, pruning and reporting code.

use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::image::LungMask;

/// Rank-based ROC AUC: the probability that a random positive outscores a
/// random negative, ties counting one half.
pub fn auc<T: Float>(scores: &[(T, bool)]) -> Result<f64> {
    let pos = scores.iter().filter(|s| s.1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(CoreError::arg("auc needs both positive and negative samples"));
    }
    if scores.iter().any(|s| s.0.is_nan()) {
        return Err(CoreError::arg("auc scores must not be NaN"));
    }
    let mut sorted: Vec<(T, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("no NaN"));
    // Mann-Whitney U via midranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum += midrank * sorted[i..j].iter().filter(|s| s.1).count() as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Smallest `k` with `series[j] >= target` for every `j >= k`.
pub fn stable_threshold<T: Float>(series: &[T], target: T) -> Option<usize> {
    let tail = series.iter().rev().take_while(|&&v| v >= target).count();
    (tail > 0).then(|| series.len() - tail)
}

/// Mean and population standard deviation.
pub fn mean_std<T: Float>(xs: &[T]) -> (T, T) {
    if xs.is_empty() {
        return (T::nan(), T::nan());
    }
    let n = T::from(xs.len()).expect("length fits");
    let mean = xs.iter().fold(T::zero(), |a, &b| a + b) / n;
    let var = xs.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) / n;
    (mean, var.sqrt())
}

/// Dice coefficient `2|A and B| / (|A| + |B|)`, with two empty masks scoring 1.
pub fn dice(a: &LungMask, b: &LungMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(CoreError::arg(format!("mask dimensions differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auc_examples() {
        let s = [(0.9, true), (0.4, true), (0.5, false), (0.1, false)];
        assert_eq!(auc(&s).unwrap(), 0.75);
        assert_eq!(auc(&[(0.9f32, true), (0.1, false)]).unwrap(), 1.0);
        assert_eq!(auc(&[(0.3, true), (0.3, false), (0.3, true)]).unwrap(), 0.5);
        assert!(auc(&[(0.3, true), (0.5, true)]).is_err());
    }

    #[test]
    fn stable_threshold_examples() {
        assert_eq!(stable_threshold(&[0.70, 0.79, 0.81, 0.80, 0.85], 0.80), Some(2));
        assert_eq!(stable_threshold(&[0.9, 0.95], 0.8), Some(0));
        assert_eq!(stable_threshold(&[0.5, 0.6], 0.8), None);
        assert_eq!(stable_threshold(&[0.7, 0.85, 0.9], 0.8), Some(1));
    }

    #[test]
    fn mean_std_is_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn dice_examples() {
        let a = LungMask::from_fn(20, 10, |r, _| r < 5);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = LungMask::from_fn(20, 10, |r, _| r >= 5);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        // |A| = |B| = 100, overlap 50
        let c = LungMask::from_fn(20, 10, |r, c| (r < 5 && c < 10) || (r >= 5 && c < 10));
        assert_eq!(dice(&a, &c).unwrap(), 0.5);
        assert_eq!(dice(&LungMask::empty(3, 3), &LungMask::empty(3, 3)).unwrap(), 1.0);
        assert!(dice(&a, &LungMask::empty(3, 3)).is_err());
    }

    fn scored() -> impl Strategy<Value = Vec<(f64, bool)>> {
        proptest::collection::vec((0u8..20, any::<bool>()), 2..50)
            .prop_map(|v| v.into_iter().map(|(s, l)| (s as f64 / 19.0, l)).collect())
            .prop_filter("both classes", |v: &Vec<(f64, bool)>| v.iter().any(|s| s.1) && v.iter().any(|s| !s.1))
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(s in scored()) {
            let t: Vec<_> = s.iter().map(|&(v, l)| ((3.0 * v).exp() - 7.0, l)).collect();
            prop_assert!((auc(&s).unwrap() - auc(&t).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn auc_flip_without_ties(vals in proptest::collection::hash_set(0u32..10_000, 2..40), seed in any::<u64>()) {
            let s: Vec<(f64, bool)> = vals.into_iter().enumerate()
                .map(|(i, v)| (v as f64, (seed >> (i % 64)) & 1 == 1)).collect();
            prop_assume!(s.iter().any(|x| x.1) && s.iter().any(|x| !x.1));
            let flipped: Vec<_> = s.iter().map(|&(v, l)| (v, !l)).collect();
            prop_assert!((auc(&s).unwrap() + auc(&flipped).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn dice_symmetric_and_bounded(a in proptest::collection::vec(any::<bool>(), 36), b in proptest::collection::vec(any::<bool>(), 36)) {
            let (a, b) = (LungMask::new(6, 6, a).unwrap(), LungMask::new(6, 6, b).unwrap());
            let d = dice(&a, &b).unwrap();
            prop_assert_eq!(d, dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
