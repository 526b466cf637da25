//! Canonical component trees (max-tree / min-tree) of quantized channels,
//! with per-node area, gray-level standard deviation and moment-of-inertia
//! attributes, and the pruning-based attribute filters built on them.
//!
//! Construction follows the union-find immersion scheme: pixels are visited
//! in gray-level order, merged through a path-compressed union-find, then
//! parent pointers are canonicalized so each node is represented by a single
//! canonical pixel. Output of the filters is validated elsewhere against a
//! brute-force level-set reconstruction ([`super::reference`]).

use serde::{Deserialize, Serialize};

use super::{AttributeKind, FilterRule, QuantizedChannel};

/// Which components the tree tracks: bright (upper level sets) or dark
/// (lower level sets).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Max-tree: components of `{f >= t}`; used by attribute thinning.
    Max,
    /// Min-tree: components of `{f <= t}`; used by attribute thickening.
    Min,
}

/// Pixel neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[derive(Default)]
pub enum Connectivity {
    #[serde(rename = "4")]
    #[default]
    Four,
    #[serde(rename = "8")]
    Eight,
}


/// Hierarchical component tree with per-node attributes.
#[derive(Debug, Clone)]
pub struct ComponentTree {
    rows: usize,
    cols: usize,
    polarity: Polarity,
    node_level: Vec<u8>,
    node_parent: Vec<u32>,
    node_of_pixel: Vec<u32>,
    root: u32,
    area: Vec<u32>,
    gray_sum: Vec<u64>,
    gray_sq_sum: Vec<u64>,
    sx: Vec<u64>,
    sy: Vec<u64>,
    sxx: Vec<u64>,
    syy: Vec<u64>,
}

fn find(zpar: &mut [u32], mut x: u32) -> u32 {
    // path halving
    while zpar[x as usize] != x {
        let grand = zpar[zpar[x as usize] as usize];
        zpar[x as usize] = grand;
        x = grand;
    }
    x
}

impl ComponentTree {
    /// Build the component tree of a quantized channel.
    pub fn build(img: &QuantizedChannel, polarity: Polarity, connectivity: Connectivity) -> Self {
        let rows = img.rows();
        let cols = img.cols();
        let n = rows * cols;
        let levels = img.levels();

        // counting sort by level; max-tree processes bright pixels first
        let mut counts = [0usize; 256];
        for &l in levels {
            counts[l as usize] += 1;
        }
        let mut starts = [0usize; 256];
        let mut acc = 0;
        match polarity {
            Polarity::Max => {
                for l in (0..256).rev() {
                    starts[l] = acc;
                    acc += counts[l];
                }
            }
            Polarity::Min => {
                for l in 0..256 {
                    starts[l] = acc;
                    acc += counts[l];
                }
            }
        }
        let mut order = vec![0u32; n];
        let mut cursor = starts;
        for (p, &l) in levels.iter().enumerate() {
            order[cursor[l as usize]] = p as u32;
            cursor[l as usize] += 1;
        }

        // union-find immersion
        const UNSEEN: u32 = u32::MAX;
        let mut parent_px = vec![UNSEEN; n];
        let mut zpar = vec![UNSEEN; n];
        let neighbor_offsets: &[(isize, isize)] = match connectivity {
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
        for &p in &order {
            parent_px[p as usize] = p;
            zpar[p as usize] = p;
            let (pr, pc) = ((p as usize / cols) as isize, (p as usize % cols) as isize);
            for &(dr, dc) in neighbor_offsets {
                let (nr, nc) = (pr + dr, pc + dc);
                if nr < 0 || nc < 0 || nr as usize >= rows || nc as usize >= cols {
                    continue;
                }
                let q = (nr as usize * cols + nc as usize) as u32;
                if zpar[q as usize] == UNSEEN {
                    continue;
                }
                let r = find(&mut zpar, q);
                if r != p {
                    parent_px[r as usize] = p;
                    zpar[r as usize] = p;
                }
            }
        }

        // canonicalize parent pointers
        for &p in order.iter().rev() {
            let q = parent_px[p as usize];
            let qq = parent_px[q as usize];
            if levels[qq as usize] == levels[q as usize] {
                parent_px[p as usize] = qq;
            }
        }

        let is_canonical = |p: u32, parent_px: &[u32]| -> bool {
            let q = parent_px[p as usize];
            q == p || levels[q as usize] != levels[p as usize]
        };

        // node ids in processing order of canonical pixels: children get
        // smaller ids than their parents, the root gets the largest id
        let mut id_of_pixel = vec![UNSEEN; n];
        let mut canonical_pixels = Vec::new();
        for &p in &order {
            if is_canonical(p, &parent_px) {
                id_of_pixel[p as usize] = canonical_pixels.len() as u32;
                canonical_pixels.push(p);
            }
        }
        let count = canonical_pixels.len();

        let mut node_of_pixel = vec![0u32; n];
        for p in 0..n as u32 {
            let canon = if is_canonical(p, &parent_px) {
                p
            } else {
                parent_px[p as usize]
            };
            node_of_pixel[p as usize] = id_of_pixel[canon as usize];
        }

        let mut node_level = vec![0u8; count];
        let mut node_parent = vec![0u32; count];
        let mut root = 0u32;
        for (id, &cp) in canonical_pixels.iter().enumerate() {
            node_level[id] = levels[cp as usize];
            let pp = parent_px[cp as usize];
            if pp == cp {
                node_parent[id] = id as u32;
                root = id as u32;
            } else {
                node_parent[id] = id_of_pixel[pp as usize];
            }
        }

        // exclusive accumulators, then a child->parent aggregation pass
        let mut area = vec![0u32; count];
        let mut gray_sum = vec![0u64; count];
        let mut gray_sq_sum = vec![0u64; count];
        let mut sx = vec![0u64; count];
        let mut sy = vec![0u64; count];
        let mut sxx = vec![0u64; count];
        let mut syy = vec![0u64; count];
        for p in 0..n {
            let id = node_of_pixel[p] as usize;
            let g = levels[p] as u64;
            let x = (p % cols) as u64;
            let y = (p / cols) as u64;
            area[id] += 1;
            gray_sum[id] += g;
            gray_sq_sum[id] += g * g;
            sx[id] += x;
            sy[id] += y;
            sxx[id] += x * x;
            syy[id] += y * y;
        }
        for id in 0..count {
            let parent = node_parent[id] as usize;
            if parent != id {
                area[parent] += area[id];
                gray_sum[parent] += gray_sum[id];
                gray_sq_sum[parent] += gray_sq_sum[id];
                sx[parent] += sx[id];
                sy[parent] += sy[id];
                sxx[parent] += sxx[id];
                syy[parent] += syy[id];
            }
        }

        ComponentTree {
            rows,
            cols,
            polarity,
            node_level,
            node_parent,
            node_of_pixel,
            root,
            area,
            gray_sum,
            gray_sq_sum,
            sx,
            sy,
            sxx,
            syy,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn node_count(&self) -> usize {
        self.node_level.len()
    }

    pub fn root(&self) -> u32 {
        self.root
    }

    pub fn level(&self, node: u32) -> u8 {
        self.node_level[node as usize]
    }

    pub fn parent(&self, node: u32) -> u32 {
        self.node_parent[node as usize]
    }

    pub fn node_of_pixel(&self, pixel: usize) -> u32 {
        self.node_of_pixel[pixel]
    }

    /// Pixel count of the component (node plus all descendants).
    pub fn area(&self, node: u32) -> u32 {
        self.area[node as usize]
    }

    /// Population standard deviation of the component's gray values.
    pub fn gray_stddev(&self, node: u32) -> f64 {
        let i = node as usize;
        let n = self.area[i] as f64;
        let mean = self.gray_sum[i] as f64 / n;
        let var = self.gray_sq_sum[i] as f64 / n - mean * mean;
        var.max(0.0).sqrt()
    }

    /// Normalized moment of inertia: trace of the spatial central second
    /// moments divided by area² (Hu's first invariant, η20 + η02).
    pub fn moment_of_inertia(&self, node: u32) -> f64 {
        let i = node as usize;
        let n = self.area[i] as f64;
        let mu20 = self.sxx[i] as f64 - (self.sx[i] as f64).powi(2) / n;
        let mu02 = self.syy[i] as f64 - (self.sy[i] as f64).powi(2) / n;
        (mu20 + mu02) / (n * n)
    }

    pub fn attribute(&self, node: u32, kind: AttributeKind) -> f64 {
        match kind {
            AttributeKind::Area => self.area(node) as f64,
            AttributeKind::StdDev => self.gray_stddev(node),
            AttributeKind::Moment => self.moment_of_inertia(node),
        }
    }

    /// Prune components whose attribute falls below `lambda` and return the
    /// filtered gray levels. The root always survives. With the `Min` rule a
    /// node is removed when it or any ancestor fails; with `Direct` only its
    /// own attribute decides. Removed nodes take the level of their nearest
    /// surviving ancestor.
    pub fn filter(&self, kind: AttributeKind, lambda: f64, rule: FilterRule) -> Vec<u8> {
        let count = self.node_count();
        let mut keep = vec![false; count];
        // parents carry larger ids, so descending order decides them first
        for id in (0..count).rev() {
            let pass = self.attribute(id as u32, kind) >= lambda;
            keep[id] = if id as u32 == self.root {
                true
            } else {
                match rule {
                    FilterRule::Direct => pass,
                    FilterRule::Min => pass && keep[self.node_parent[id] as usize],
                }
            };
        }
        let mut out_level = vec![0u8; count];
        for id in (0..count).rev() {
            out_level[id] = if keep[id] {
                self.node_level[id]
            } else {
                out_level[self.node_parent[id] as usize]
            };
        }
        self.node_of_pixel
            .iter()
            .map(|&id| out_level[id as usize])
            .collect()
    }
}
