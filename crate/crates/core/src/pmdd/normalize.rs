//! Mean-anchored normalization of raw similarity measures and their fusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which end of a raw measure means "similar".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// PCA angles, mean distance, DTW.
    SmallerIsSimilar,
    /// Mutual information.
    LargerIsSimilar,
}

/// Mean, minimum and maximum of one measure over a population of pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl PopulationStats {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("similarity population"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("similarity population contains NaN/Inf".into()));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { mean, min, max })
    }

    /// Maps a raw value to `[0, 1]`: 0 on the dissimilar side of the mean, 1 at
    /// the most similar population member. Values beyond that member clamp to 1.
    pub fn normalize(&self, value: f64, orientation: Orientation) -> f64 {
        let (gap, span) = match orientation {
            Orientation::SmallerIsSimilar => (self.mean - value, self.mean - self.min),
            Orientation::LargerIsSimilar => (value - self.mean, self.max - self.mean),
        };
        // A population with no spread on the similar side carries no ranking.
        let scale = self.mean.abs().max(self.min.abs()).max(self.max.abs());
        if span.is_nan() || span <= 1e-12 * scale {
            return 0.0;
        }
        if gap <= 0.0 {
            return 0.0;
        }
        (gap / span).min(1.0)
    }
}

/// Normalizes every member of `values` against the population itself.
pub fn normalize_population(values: &[f64], orientation: Orientation) -> Result<Vec<f64>> {
    let stats = PopulationStats::of(values)?;
    Ok(values.iter().map(|&v| stats.normalize(v, orientation)).collect())
}

/// Root mean square of the four normalized measures.
pub fn fuse(y_pca: f64, y_mi: f64, y_da: f64, y_dtw: f64) -> Result<f64> {
    for (name, y) in [("pca", y_pca), ("mi", y_mi), ("da", y_da), ("dtw", y_dtw)] {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::OutOfRange(format!("normalized {name} similarity {y} outside [0, 1]")));
        }
    }
    Ok(((y_pca * y_pca + y_da * y_da + y_dtw * y_dtw + y_mi * y_mi) / 4.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Orientation::*;

    #[test]
    fn two_point_population() {
        assert_eq!(normalize_population(&[1.0, 3.0], SmallerIsSimilar).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn equal_population_is_degenerate() {
        assert_eq!(normalize_population(&[0.1; 5], SmallerIsSimilar).unwrap(), vec![0.0; 5]);
        assert_eq!(normalize_population(&[0.1; 5], LargerIsSimilar).unwrap(), vec![0.0; 5]);
        assert_eq!(normalize_population(&[7.0], SmallerIsSimilar).unwrap(), vec![0.0]);
    }

    #[test]
    fn larger_is_similar_hand_values() {
        // mean 0.5: only 0.9 sits above it, at the maximum.
        let y = normalize_population(&[0.2, 0.4, 0.9], LargerIsSimilar).unwrap();
        assert_eq!(y[0], 0.0);
        assert_eq!(y[1], 0.0);
        assert!((y[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn smaller_is_similar_hand_values() {
        // mean 4: (4 - 1) / (4 - 1) = 1, (4 - 2) / 3, 0, 0.
        let y = normalize_population(&[1.0, 2.0, 4.0, 9.0], SmallerIsSimilar).unwrap();
        assert_eq!(y, vec![1.0, 2.0 / 3.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_population_is_an_error() {
        assert!(normalize_population(&[], SmallerIsSimilar).is_err());
    }

    #[test]
    fn reference_stats_clamp() {
        let stats = PopulationStats::of(&[1.0, 3.0]).unwrap();
        assert_eq!(stats.normalize(0.5, SmallerIsSimilar), 1.0);
        assert_eq!(stats.normalize(1.5, SmallerIsSimilar), 0.5);
        assert_eq!(stats.normalize(2.5, SmallerIsSimilar), 0.0);
        assert_eq!(stats.normalize(5.0, LargerIsSimilar), 1.0);
    }

    #[test]
    fn fuse_closed_forms() {
        assert_eq!(fuse(0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(fuse(1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(fuse(1.0, 0.0, 0.0, 0.0).unwrap(), 0.5);
        assert!(fuse(1.1, 0.0, 0.0, 0.0).is_err());
        assert!(fuse(0.0, -0.1, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn normalized_values_stay_in_unit_interval(values in prop::collection::vec(-1e3f64..1e3, 1..40)) {
            for o in [SmallerIsSimilar, LargerIsSimilar] {
                for y in normalize_population(&values, o).unwrap() {
                    prop_assert!((0.0..=1.0).contains(&y));
                }
            }
        }

        #[test]
        fn fuse_is_bounded_and_monotone(
            y in prop::array::uniform4(0.0f64..=1.0), bump in 0.0f64..=1.0, which in 0usize..4
        ) {
            let o = fuse(y[0], y[1], y[2], y[3]).unwrap();
            prop_assert!((0.0..=1.0).contains(&o));
            let mut z = y;
            z[which] = (z[which] + bump).min(1.0);
            prop_assert!(fuse(z[0], z[1], z[2], z[3]).unwrap() >= o);
        }
    }
}
