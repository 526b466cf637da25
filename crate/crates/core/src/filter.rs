//! Small 2-D filtering helpers: separable Gaussian low-pass and the
//! variance-of-Laplacian sharpness score.

/// Normalized 1-D Gaussian taps truncated at 3σ.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * (x / sigma).powi(2)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn convolve_rows(src: &[f64], rows: usize, cols: usize, kernel: &[f64], dst: &mut [f64]) {
    let radius = kernel.len() / 2;
    // borders use point-symmetric (odd) extension, which keeps linear
    // trends unbiased: v(-k) = 2 v(0) - v(k)
    let sample = |line: &[f64], idx: isize| -> f64 {
        let n = line.len() as isize;
        if idx < 0 {
            2.0 * line[0] - line[(-idx).min(n - 1) as usize]
        } else if idx >= n {
            let over = idx - (n - 1);
            2.0 * line[(n - 1) as usize] - line[(n - 1 - over.min(n - 1)) as usize]
        } else {
            line[idx as usize]
        }
    };
    for r in 0..rows {
        let line = &src[r * cols..(r + 1) * cols];
        for c in 0..cols {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let offset = i as isize - radius as isize;
                acc += k * sample(line, c as isize + offset);
            }
            dst[r * cols + c] = acc;
        }
    }
}

fn transpose(src: &[f64], rows: usize, cols: usize, dst: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Separable Gaussian blur of a row-major plane. `sigma <= 0` is a no-op.
pub fn gaussian_blur(plane: &[f64], rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(plane.len(), rows * cols);
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let mut tmp = vec![0.0; plane.len()];
    let mut out = vec![0.0; plane.len()];
    convolve_rows(plane, rows, cols, &kernel, &mut tmp);
    transpose(&tmp, rows, cols, &mut out);
    convolve_rows(&out, cols, rows, &kernel, &mut tmp);
    transpose(&tmp, cols, rows, &mut out);
    out
}

/// Convenience wrapper for f32 planes (cube bands).
pub fn gaussian_blur_f32(plane: &[f32], rows: usize, cols: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let as_f64: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
    gaussian_blur(&as_f64, rows, cols, sigma)
        .into_iter()
        .map(|v| v as f32)
        .collect()
}

/// Variance of the 4-neighbour Laplacian over interior pixels; the sharpness
/// score used to compare focus between captures. Returns 0 for planes
/// thinner than 3 pixels.
pub fn laplacian_variance(plane: &[f32], rows: usize, cols: usize) -> f64 {
    assert_eq!(plane.len(), rows * cols);
    if rows < 3 || cols < 3 {
        return 0.0;
    }
    let at = |r: usize, c: usize| plane[r * cols + c] as f64;
    let n = ((rows - 2) * (cols - 2)) as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for r in 1..rows - 1 {
        for c in 1..cols - 1 {
            let lap = 4.0 * at(r, c) - at(r - 1, c) - at(r + 1, c) - at(r, c - 1) - at(r, c + 1);
            sum += lap;
            sum_sq += lap * lap;
        }
    }
    let mean = sum / n;
    (sum_sq / n - mean * mean).max(0.0)
}
