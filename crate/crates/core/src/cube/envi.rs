//! ENVI-style header + raw BSQ reader/writer.
//!
//! On disk a cube is a text header (`samples`, `lines`, `bands`,
//! `data type = 4`, `interleave = bsq`, `byte order = 0`, optional
//! `wavelength = { ... }`) next to a little-endian float32 raw file with the
//! same basename and a `.raw` extension. Only this fixed layout is
//! supported; BIL/BIP interleaves and integer types are out of scope.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

use super::HsiCube;

fn raw_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

/// Write `cube` as `header_path` (text header) plus the companion `.raw`
/// file. `load_cube(save_cube(c))` reproduces `c` bit-exactly.
pub fn save_cube(cube: &HsiCube, header_path: &Path) -> Result<()> {
    let mut header = String::new();
    header.push_str("ENVI\n");
    header.push_str(&format!("samples = {}\n", cube.cols()));
    header.push_str(&format!("lines = {}\n", cube.rows()));
    header.push_str(&format!("bands = {}\n", cube.bands()));
    header.push_str("header offset = 0\n");
    header.push_str("file type = ENVI Standard\n");
    header.push_str("data type = 4\n");
    header.push_str("interleave = bsq\n");
    header.push_str("byte order = 0\n");
    if let Some(w) = cube.wavelengths() {
        // f64 Display is shortest round-trip, so values survive re-parsing.
        let joined: Vec<String> = w.iter().map(|v| v.to_string()).collect();
        header.push_str(&format!("wavelength = {{\n {}\n}}\n", joined.join(", ")));
    }
    fs::write(header_path, header).map_err(|e| Error::io(header_path, e))?;

    let raw = raw_path(header_path);
    let mut bytes = Vec::with_capacity(cube.data().len() * 4);
    for v in cube.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(&raw).map_err(|e| Error::io(&raw, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&raw, e))?;
    Ok(())
}

/// Parse `key = value` pairs, with `{ ... }` values allowed to span lines.
fn parse_header(text: &str, path: &Path) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    let mut rest = text;
    while let Some(eq) = rest.find('=') {
        let key = rest[..eq]
            .rsplit('\n')
            .next()
            .unwrap_or("")
            .trim()
            .to_lowercase();
        let after = &rest[eq + 1..];
        let (value, consumed) = if after.trim_start().starts_with('{') {
            let open = after.find('{').unwrap();
            match after[open..].find('}') {
                Some(close) => (after[open + 1..open + close].to_string(), open + close + 1),
                None => return Err(Error::header(path, "unterminated '{' block")),
            }
        } else {
            let end = after.find('\n').unwrap_or(after.len());
            (after[..end].trim().to_string(), end)
        };
        if !key.is_empty() {
            map.insert(key, value);
        }
        rest = &after[consumed..];
    }
    Ok(map)
}

fn required_usize(map: &HashMap<String, String>, key: &str, path: &Path) -> Result<usize> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::header(path, format!("missing key '{key}'")))?;
    raw.parse::<usize>()
        .map_err(|_| Error::header(path, format!("key '{key}' is not an integer: '{raw}'")))
}

/// Load a cube from an ENVI-style header and its companion raw file.
pub fn load_cube(header_path: &Path) -> Result<HsiCube> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let map = parse_header(&text, header_path)?;

    let cols = required_usize(&map, "samples", header_path)?;
    let rows = required_usize(&map, "lines", header_path)?;
    let bands = required_usize(&map, "bands", header_path)?;

    let data_type = required_usize(&map, "data type", header_path)?;
    if data_type != 4 {
        return Err(Error::header(
            header_path,
            format!("unsupported data type {data_type} (only 4 = float32)"),
        ));
    }
    if let Some(il) = map.get("interleave") {
        if !il.eq_ignore_ascii_case("bsq") {
            return Err(Error::header(
                header_path,
                format!("unsupported interleave '{il}' (only bsq)"),
            ));
        }
    }
    if let Some(bo) = map.get("byte order") {
        if bo.trim() != "0" {
            return Err(Error::header(
                header_path,
                format!("unsupported byte order '{bo}' (only 0 = little endian)"),
            ));
        }
    }

    let wavelengths = match map.get("wavelength") {
        Some(block) => {
            let mut values = Vec::new();
            for item in block.split(',') {
                let item = item.trim();
                if item.is_empty() {
                    continue;
                }
                values.push(item.parse::<f64>().map_err(|_| {
                    Error::header(header_path, format!("bad wavelength entry '{item}'"))
                })?);
            }
            Some(values)
        }
        None => None,
    };

    let raw = raw_path(header_path);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let expected = rows * cols * bands * 4;
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "raw file {} holds {} bytes, header declares {}x{}x{} float32 = {} bytes",
            raw.display(),
            bytes.len(),
            rows,
            cols,
            bands,
            expected
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    HsiCube::new(rows, cols, bands, data, wavelengths)
}
