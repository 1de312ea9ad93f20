//! Object-aligned explanation score.
//!
//! A fuzzy object mask `A` (memberships in `[0, 1]`) and a max-normalized
//! explanation `B` are compared per image as
//!
//! ```text
//! score(A, B) = sum_ij a_ij * b_ij / sum_ij b_ij
//! ```
//!
//! i.e. the fraction of explanation mass that falls on the object. A dataset
//! is summarized by the unweighted mean of per-image scores over the images
//! the classifier got right; misclassified images never enter the mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major 2-D grid of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::shape(
                format!("{height}x{width} grid"),
                format!("{} values", values.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// Builds a grid from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(height * width);
        for row in rows {
            assert_eq!(row.as_ref().len(), width, "ragged rows");
            values.extend_from_slice(row.as_ref());
        }
        Self {
            height,
            width,
            values,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.width + col] = value;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn dims_str(h: usize, w: usize) -> String {
    format!("{h}x{w}")
}

/// Fuzzy object mask with memberships in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Grid", into = "Grid")]
pub struct ActivationMap(Grid);

impl ActivationMap {
    pub fn new(grid: Grid) -> Result<Self> {
        if grid.height == 0 || grid.width == 0 {
            return Err(Error::InvalidConfig("mask must be at least 1x1".into()));
        }
        if let Some(v) = grid.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!(
                "mask membership {v} outside [0, 1]"
            )));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0.get(row, col)
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

impl TryFrom<Grid> for ActivationMap {
    type Error = Error;
    fn try_from(grid: Grid) -> Result<Self> {
        Self::new(grid)
    }
}

impl From<ActivationMap> for Grid {
    fn from(map: ActivationMap) -> Grid {
        map.0
    }
}

/// Max-normalized explanation with values in `[0, 1]`. Either all zero or
/// its maximum is exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMap(Grid);

impl ExplanationMap {
    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0.get(row, col)
    }

    pub fn is_empty(&self) -> bool {
        self.0.values.iter().all(|&v| v == 0.0)
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

/// Per-image score together with the classifier's correctness on that image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub image_id: String,
    pub score: f64,
    pub correctly_classified: bool,
}

/// Dataset-level summary: mean score over correctly classified images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub avg_score: f64,
    pub n_correct: usize,
    pub n_total: usize,
}

/// Fraction of explanation mass inside the object mask.
pub fn score(mask: &ActivationMap, explanation: &ExplanationMap) -> Result<f64> {
    if mask.height() != explanation.height() || mask.width() != explanation.width() {
        return Err(Error::shape(
            format!("mask {}", dims_str(mask.height(), mask.width())),
            format!(
                "explanation {}",
                dims_str(explanation.height(), explanation.width())
            ),
        ));
    }
    let (mut inside, mut total) = (0.0f64, 0.0f64);
    for (&a, &b) in mask.values().iter().zip(explanation.values()) {
        inside += a * b;
        total += b;
    }
    if total <= 0.0 {
        return Err(Error::EmptyExplanation);
    }
    // a <= 1 bounds the ratio above, but rounding can nudge it past 1.
    Ok((inside / total).clamp(0.0, 1.0))
}

/// Unweighted mean score over correctly classified entries.
pub fn avg_score(scored: &[ScoredImage]) -> Result<DatasetScore> {
    let mut sum = 0.0;
    let mut n_correct = 0usize;
    for entry in scored.iter().filter(|s| s.correctly_classified) {
        sum += entry.score;
        n_correct += 1;
    }
    if n_correct == 0 {
        return Err(Error::NoCorrectClassifications);
    }
    Ok(DatasetScore {
        avg_score: sum / n_correct as f64,
        n_correct,
        n_total: scored.len(),
    })
}

/// Clamps negatives to zero and divides by the maximum. A grid without any
/// positive value comes back all zero; `score` rejects it downstream.
pub fn normalize_explanation(raw: &Grid) -> ExplanationMap {
    let max = raw
        .values
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(0.0f64, f64::max);
    let values = raw
        .values
        .iter()
        .map(|&v| {
            if max > 0.0 && v > 0.0 {
                // v == max must map to exactly 1.
                if v >= max {
                    1.0
                } else {
                    v / max
                }
            } else {
                0.0
            }
        })
        .collect();
    ExplanationMap(Grid {
        height: raw.height,
        width: raw.width,
        values,
    })
}

/// Maps 8-bit grayscale to memberships `v / 255`.
pub fn mask_from_gray(height: usize, width: usize, gray: &[u8]) -> Result<ActivationMap> {
    let grid = Grid::new(
        height,
        width,
        gray.iter().map(|&v| f64::from(v) / 255.0).collect(),
    )?;
    Ok(ActivationMap(grid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&[f64]]) -> ActivationMap {
        ActivationMap::new(Grid::from_rows(rows)).unwrap()
    }

    fn expl(rows: &[&[f64]]) -> ExplanationMap {
        normalize_explanation(&Grid::from_rows(rows))
    }

    #[test]
    fn hand_case() {
        let a = mask(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = expl(&[&[0.5, 0.5], &[0.0, 1.0]]);
        assert_eq!(score(&a, &b).unwrap(), 0.75);
    }

    #[test]
    fn full_cover_and_disjoint() {
        let b = expl(&[&[0.3, 0.9], &[0.0, 0.2]]);
        assert_eq!(score(&mask(&[&[1.0, 1.0], &[1.0, 1.0]]), &b).unwrap(), 1.0);
        assert_eq!(score(&mask(&[&[1.0, 0.0]]), &expl(&[&[0.0, 1.0]])).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let a = mask(&[&[1.0, 0.0]]);
        assert!(matches!(
            score(&a, &expl(&[&[0.0, 0.0]])),
            Err(Error::EmptyExplanation)
        ));
        let err = score(&a, &expl(&[&[1.0], &[1.0]])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x2") && msg.contains("2x1"), "{msg}");
    }

    #[test]
    fn averages() {
        let s = |score, ok| ScoredImage {
            image_id: String::new(),
            score,
            correctly_classified: ok,
        };
        let d = avg_score(&[s(0.2, true), s(0.8, true)]).unwrap();
        assert_eq!((d.avg_score, d.n_correct), (0.5, 2));
        let d = avg_score(&[s(0.4, true), s(0.9, false), s(0.6, true)]).unwrap();
        assert_eq!((d.avg_score, d.n_correct, d.n_total), (0.5, 2, 3));
        assert_eq!(avg_score(&[s(0.75, true)]).unwrap().avg_score, 0.75);
        assert!(matches!(
            avg_score(&[s(0.3, false)]),
            Err(Error::NoCorrectClassifications)
        ));
        assert!(matches!(avg_score(&[]), Err(Error::NoCorrectClassifications)));
    }

    #[test]
    fn normalization() {
        assert_eq!(expl(&[&[2.0, 4.0]]).values(), &[0.5, 1.0]);
        assert_eq!(expl(&[&[-1.0, 2.0]]).values(), &[0.0, 1.0]);
        let z = expl(&[&[0.0, 0.0]]);
        assert_eq!(z.values(), &[0.0, 0.0]);
        assert!(z.is_empty());
        assert_eq!(expl(&[&[-3.0, -1.0]]).values(), &[0.0, 0.0]);
    }

    #[test]
    fn gray_masks() {
        assert_eq!(mask_from_gray(1, 2, &[255, 0]).unwrap().values(), &[1.0, 0.0]);
        assert_eq!(mask_from_gray(1, 1, &[128]).unwrap().values(), &[128.0 / 255.0]);
        let full = mask_from_gray(3, 3, &[255; 9]).unwrap();
        assert!(full.values().iter().all(|&v| v == 1.0));
        assert!(mask_from_gray(0, 0, &[]).is_err());
    }

    #[test]
    fn mask_rejects_out_of_range() {
        assert!(ActivationMap::new(Grid::from_rows(&[[1.5]])).is_err());
        assert!(ActivationMap::new(Grid::from_rows(&[[-0.1]])).is_err());
    }
}
