//! Brute-force reference implementations of the area filters, built directly
//! from the level-set definition: for every threshold, label the connected
//! components of the level set and demote pixels of undersized components.
//!
//! These are quadratic-time and exist to validate the tree-based filters;
//! they share no code with [`super::tree`].

use super::tree::Connectivity;

/// Label the `true` pixels of a mask into 1-based connected components;
/// `false` pixels get label 0.
pub fn label_mask_components(
    mask: &[bool],
    rows: usize,
    cols: usize,
    connectivity: Connectivity,
) -> Vec<u32> {
    assert_eq!(mask.len(), rows * cols);
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[
            (-1, 0),
            (1, 0),
            (0, -1),
            (0, 1),
            (-1, -1),
            (-1, 1),
            (1, -1),
            (1, 1),
        ],
    };
    let mut labels = vec![0u32; mask.len()];
    let mut next = 0u32;
    let mut queue = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push(start);
        while let Some(p) = queue.pop() {
            let (pr, pc) = ((p / cols) as isize, (p % cols) as isize);
            for &(dr, dc) in offsets {
                let (nr, nc) = (pr + dr, pc + dc);
                if nr < 0 || nc < 0 || nr as usize >= rows || nc as usize >= cols {
                    continue;
                }
                let q = nr as usize * cols + nc as usize;
                if mask[q] && labels[q] == 0 {
                    labels[q] = next;
                    queue.push(q);
                }
            }
        }
    }
    labels
}

fn component_areas(labels: &[u32]) -> Vec<usize> {
    let max = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut areas = vec![0usize; max + 1];
    for &l in labels {
        areas[l as usize] += 1;
    }
    areas
}

/// Area thinning by direct reconstruction: each pixel keeps the highest
/// threshold at which it still belongs to a large-enough bright component.
pub fn area_thinning_reference(
    levels: &[u8],
    rows: usize,
    cols: usize,
    lambda: usize,
    connectivity: Connectivity,
) -> Vec<u8> {
    let global_min = *levels.iter().min().expect("non-empty image");
    let mut out = vec![global_min; levels.len()];
    let mut distinct: Vec<u8> = levels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    for &t in &distinct {
        let mask: Vec<bool> = levels.iter().map(|&v| v >= t).collect();
        let labels = label_mask_components(&mask, rows, cols, connectivity);
        let areas = component_areas(&labels);
        for p in 0..levels.len() {
            if mask[p] && areas[labels[p] as usize] >= lambda && t > out[p] {
                out[p] = t;
            }
        }
    }
    out
}

/// Area thickening by direct reconstruction: dual of the thinning, acting on
/// dark components (lower level sets).
pub fn area_thickening_reference(
    levels: &[u8],
    rows: usize,
    cols: usize,
    lambda: usize,
    connectivity: Connectivity,
) -> Vec<u8> {
    let global_max = *levels.iter().max().expect("non-empty image");
    let mut out = vec![global_max; levels.len()];
    let mut distinct: Vec<u8> = levels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    for &t in &distinct {
        let mask: Vec<bool> = levels.iter().map(|&v| v <= t).collect();
        let labels = label_mask_components(&mask, rows, cols, connectivity);
        let areas = component_areas(&labels);
        for p in 0..levels.len() {
            if mask[p] && areas[labels[p] as usize] >= lambda && t < out[p] {
                out[p] = t;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_split_diagonal_components_under_four_connectivity() {
        let mask = vec![true, false, false, true];
        let four = label_mask_components(&mask, 2, 2, Connectivity::Four);
        assert_eq!(four, vec![1, 0, 0, 2]);
        let eight = label_mask_components(&mask, 2, 2, Connectivity::Eight);
        assert_eq!(eight, vec![1, 0, 0, 1]);
    }

    #[test]
    fn thinning_removes_small_peak() {
        let levels = vec![1, 1, 1, 1, 5, 1, 1, 1, 1];
        let out = area_thinning_reference(&levels, 3, 3, 2, Connectivity::Four);
        assert_eq!(out, vec![1; 9]);
        // lambda 1 keeps everything
        let keep = area_thinning_reference(&levels, 3, 3, 1, Connectivity::Four);
        assert_eq!(keep, levels);
    }

    #[test]
    fn thickening_fills_small_pit() {
        let levels = vec![5, 5, 5, 5, 1, 5, 5, 5, 5];
        let out = area_thickening_reference(&levels, 3, 3, 2, Connectivity::Four);
        assert_eq!(out, vec![5; 9]);
    }
}
