//! Label maps as PNG images: class → palette color, background black.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context};

use layersep_core::label::LabelMap;

use crate::config::Palette;

/// Encode a label map into PNG bytes using `palette` (index 0 background).
pub fn label_map_png_bytes(map: &LabelMap, palette: &Palette) -> anyhow::Result<Vec<u8>> {
    let needed = map.n_classes() + 1;
    if palette.colors.len() < needed {
        bail!(
            "palette has {} colors, label map needs {}",
            palette.colors.len(),
            needed
        );
    }
    let mut rgb = Vec::with_capacity(map.labels().len() * 3);
    for &l in map.labels() {
        rgb.extend_from_slice(&palette.colors[l as usize]);
    }
    let mut bytes = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, map.cols() as u32, map.rows() as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&rgb)?;
    }
    Ok(bytes)
}

/// Write a label map to a PNG file.
pub fn render_label_map(map: &LabelMap, palette: &Palette, path: &Path) -> anyhow::Result<()> {
    let bytes = label_map_png_bytes(map, palette)?;
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Read a palette-coded PNG back into a label map. Every pixel must match a
/// palette color exactly.
pub fn load_label_map_png(
    path: &Path,
    palette: &Palette,
    class_names: &[String],
) -> anyhow::Result<LabelMap> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        bail!("label map PNG must be 8-bit RGB");
    }
    let (cols, rows) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let mut labels = Vec::with_capacity(rows * cols);
    for px in data.chunks_exact(3) {
        let color = [px[0], px[1], px[2]];
        match palette.colors.iter().position(|&c| c == color) {
            Some(idx) => labels.push(idx as u8),
            None => bail!("pixel color {color:?} not in the palette"),
        }
    }
    Ok(LabelMap::new(rows, cols, labels, class_names.to_vec())?)
}

/// Write a PNG of predictions painted over a background-black canvas.
/// `pixel_indices[i]` is the plane index of prediction `i`; predictions are
/// 0-based class ids.
pub fn render_predictions(
    rows: usize,
    cols: usize,
    pixel_indices: &[usize],
    predictions: &[u32],
    class_names: &[String],
    palette: &Palette,
    path: &Path,
) -> anyhow::Result<()> {
    if pixel_indices.len() != predictions.len() {
        bail!(
            "{} pixel indices vs {} predictions",
            pixel_indices.len(),
            predictions.len()
        );
    }
    let mut labels = vec![0u8; rows * cols];
    for (&p, &class) in pixel_indices.iter().zip(predictions) {
        labels[p] = class as u8 + 1;
    }
    let map = LabelMap::new(rows, cols, labels, class_names.to_vec())?;
    render_label_map(&map, palette, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map3() -> LabelMap {
        LabelMap::new(
            2,
            3,
            vec![0, 1, 2, 3, 0, 1],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap()
    }

    #[test]
    fn png_round_trip_preserves_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.png");
        let map = map3();
        let palette = Palette::default();
        render_label_map(&map, &palette, &path).unwrap();
        let back = load_label_map_png(&path, &palette, map.class_names()).unwrap();
        assert_eq!(map, back);
    }

    #[test]
    fn all_background_is_all_black() {
        let map = LabelMap::new(2, 2, vec![0; 4], vec!["x".into()]).unwrap();
        let bytes = label_map_png_bytes(&map, &Palette::default()).unwrap();
        let other = label_map_png_bytes(&map, &Palette::default()).unwrap();
        assert_eq!(bytes, other);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bg.png");
        std::fs::write(&path, &bytes).unwrap();
        let back = load_label_map_png(&path, &Palette::default(), &["x".into()]).unwrap();
        assert!(back.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn short_palette_is_rejected() {
        let map = map3();
        let palette = Palette {
            colors: vec![[0, 0, 0], [255, 0, 0]],
        };
        assert!(label_map_png_bytes(&map, &palette).is_err());
    }

    #[test]
    fn checkerboard_renders_three_colors() {
        let map = LabelMap::new(
            2,
            2,
            vec![1, 2, 3, 1],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let palette = Palette::default();
        let bytes = label_map_png_bytes(&map, &palette).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("check.png");
        std::fs::write(&path, bytes).unwrap();
        let back = load_label_map_png(&path, &palette, map.class_names()).unwrap();
        assert_eq!(back.labels(), map.labels());
    }

    #[test]
    fn unknown_color_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("foreign.png");
        // encode with a non-default palette, decode with the default one
        let map = LabelMap::new(1, 1, vec![1], vec!["a".into()]).unwrap();
        let odd = Palette {
            colors: vec![[0, 0, 0], [12, 34, 56]],
        };
        render_label_map(&map, &odd, &path).unwrap();
        assert!(load_label_map_png(&path, &Palette::default(), &["a".into()]).is_err());
    }
}
