//! Per-pixel class label maps. Label 0 is always the background and is
//! excluded from training and evaluation; labels 1..=C index the named
//! classes.

use crate::{Error, Result};

/// Ground-truth or predicted label image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    rows: usize,
    cols: usize,
    labels: Vec<u8>,
    class_names: Vec<String>,
}

impl LabelMap {
    pub fn new(
        rows: usize,
        cols: usize,
        labels: Vec<u8>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {}x{}",
                labels.len(),
                rows,
                cols
            )));
        }
        if class_names.is_empty() {
            return Err(Error::InvalidInput("label map needs class names".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize > class_names.len()) {
            return Err(Error::InvalidInput(format!(
                "label {} exceeds the {} named classes",
                bad,
                class_names.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            labels,
            class_names,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Raw labels; 0 = background.
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Names of classes 1..=C (background excluded).
    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Pixel count per class, indexed 0 = background, 1..=C = classes.
    pub fn pixel_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes() + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_labels_against_class_names() {
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(LabelMap::new(2, 2, vec![0, 1, 2, 1], names.clone()).is_ok());
        assert!(LabelMap::new(2, 2, vec![0, 3, 0, 0], names.clone()).is_err());
        assert!(LabelMap::new(2, 2, vec![0, 1], names).is_err());
    }

    #[test]
    fn counts_per_class() {
        let map =
            LabelMap::new(1, 6, vec![0, 1, 1, 2, 2, 2], vec!["x".into(), "y".into()]).unwrap();
        assert_eq!(map.pixel_counts(), vec![1, 2, 3]);
    }
}
