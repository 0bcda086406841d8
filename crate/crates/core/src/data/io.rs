//! Native cube format (`<name>.json` sidecar + `<name>.bin` little-endian
//! f32, band-major) and binary PGM import.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Scalar;

use super::HsiCube;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeHeader {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub dtype: String,
    pub layout: String,
    pub normalized: bool,
}

fn stem_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut json = stem.clone().into_os_string();
    json.push(".json");
    let mut bin = stem.into_os_string();
    bin.push(".bin");
    (json.into(), bin.into())
}

/// Writes `<path>.json` and `<path>.bin`; the cube is marked normalized.
pub fn save_cube<T: Scalar>(path: impl AsRef<Path>, cube: &HsiCube<T>) -> Result<()> {
    let (json, bin) = stem_paths(path.as_ref());
    if let Some(dir) = json.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let header = CubeHeader {
        width: cube.width(),
        height: cube.height(),
        bands: cube.bands(),
        dtype: "f32".into(),
        layout: "band-sequential".into(),
        normalized: true,
    };
    fs::write(&json, serde_json::to_string_pretty(&header)?)?;
    let mut bytes = Vec::with_capacity(cube.data().len() * 4);
    for v in cube.data() {
        bytes.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    fs::write(&bin, bytes)?;
    Ok(())
}

/// Reads a native cube. Un-normalized cubes are divided by their global max.
pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube<f32>> {
    let (json, bin) = stem_paths(path.as_ref());
    let header: CubeHeader = serde_json::from_str(&fs::read_to_string(&json)?)?;
    if header.dtype != "f32" || header.layout != "band-sequential" {
        return Err(Error::Format(format!(
            "unsupported dtype/layout {}/{}",
            header.dtype, header.layout
        )));
    }
    let bytes = fs::read(&bin)?;
    let expected = header.width * header.height * header.bands;
    if bytes.len() != expected * 4 {
        return Err(Error::Format(format!(
            "{} declares {}×{}×{} = {expected} floats but {} holds {} bytes",
            json.display(),
            header.width,
            header.height,
            header.bands,
            bin.display(),
            bytes.len()
        )));
    }
    let mut data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{} contains {bad}", bin.display())));
    }
    if !header.normalized {
        let max = data.iter().copied().fold(0f32, f32::max);
        if data.iter().any(|&v| v < 0.0) {
            return Err(Error::Format(format!("{} has negative values", bin.display())));
        }
        if max > 0.0 {
            data.iter_mut().for_each(|v| *v /= max);
        }
    }
    HsiCube::new(header.width, header.height, header.bands, data)
}

/// Every cube in `dir` (by sidecar name, lexicographic order).
pub fn load_cube_dir(dir: impl AsRef<Path>) -> Result<Vec<HsiCube<f32>>> {
    let mut sidecars: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    sidecars.sort();
    sidecars.iter().map(load_cube).collect()
}

fn pgm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn pgm_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = pgm_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad PGM header field {:?}", String::from_utf8_lossy(tok))))
}

/// Decodes a binary (P5) PGM, 8- or 16-bit, into `[0, 1]` values.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let mut pos = 0;
    if pgm_token(bytes, &mut pos)? != b"P5" {
        return Err(Error::Format("not a binary PGM (P5)".into()));
    }
    let width = pgm_number(bytes, &mut pos)?;
    let height = pgm_number(bytes, &mut pos)?;
    let maxval = pgm_number(bytes, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} out of range")));
    }
    pos += 1; // single whitespace before the raster
    let wide = maxval > 255;
    let n = width * height;
    let need = if wide { 2 * n } else { n };
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Format(format!("PGM raster needs {need} bytes")))?;
    let scale = 1.0 / maxval as f32;
    let values = if wide {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 * scale)
            .collect()
    } else {
        raster.iter().map(|&v| v as f32 * scale).collect()
    };
    Ok((width, height, values))
}

/// Stacks the `*.pgm` files of `dir`, in lexicographic order, as bands.
pub fn import_pgm_dir(dir: impl AsRef<Path>) -> Result<HsiCube<f32>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Format(format!("no .pgm files in {}", dir.as_ref().display())));
    }
    let mut dims = None;
    let mut data = Vec::new();
    for f in &files {
        let (w, h, v) = read_pgm(&fs::read(f)?)?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(Error::Format(format!(
                    "{} is {w}×{h}, expected {}×{}",
                    f.display(),
                    d.0,
                    d.1
                )))
            }
            _ => {}
        }
        data.extend(v);
    }
    let (w, h) = dims.expect("at least one file");
    HsiCube::new(w, h, files.len(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(stem: &Path, header: &str, values: &[f32]) {
        fs::write(stem.with_extension("json"), header).unwrap();
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(stem.with_extension("bin"), bytes).unwrap();
    }

    fn header(w: usize, h: usize, l: usize, normalized: bool) -> String {
        format!(
            r#"{{"width":{w},"height":{h},"bands":{l},"dtype":"f32","layout":"band-sequential","normalized":{normalized}}}"#
        )
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f32> = (0..12).map(|i| i as f32 / 11.0 * 0.999).collect();
        let cube = HsiCube::new(2, 2, 3, values).unwrap();
        save_cube(dir.path().join("a"), &cube).unwrap();
        assert_eq!(load_cube(dir.path().join("a.json")).unwrap(), cube);
        assert_eq!(load_cube(dir.path().join("a")).unwrap(), cube);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("bad");
        write_raw(&stem, &header(4, 4, 2, true), &[0.0; 30]);
        assert!(matches!(load_cube(&stem), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("nan");
        write_raw(&stem, &header(1, 1, 2, true), &[0.5, f32::NAN]);
        assert!(matches!(load_cube(&stem), Err(Error::NonFinite(_))));
    }

    #[test]
    fn raw_cubes_are_max_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("raw");
        write_raw(&stem, &header(2, 1, 1, false), &[100.0, 400.0]);
        assert_eq!(load_cube(&stem).unwrap().data(), &[0.25, 1.0]);
    }

    #[test]
    fn unknown_sidecar_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("x");
        let h = header(1, 1, 1, true).replace('}', r#","extra":1}"#);
        write_raw(&stem, &h, &[0.5]);
        assert!(load_cube(&stem).is_err());
    }

    #[test]
    fn full_size_cube_loads_all_bands() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("cave");
        write_raw(&stem, &header(512, 512, 31, true), &vec![0.25; 512 * 512 * 31]);
        let cube = load_cube(&stem).unwrap();
        assert_eq!((cube.width(), cube.height(), cube.bands()), (512, 512, 31));
    }

    #[test]
    fn directory_loads_in_sorted_order() {
        let dir = tempfile::tempdir().unwrap();
        for (name, v) in [("b", 0.2f32), ("a", 0.1), ("c", 0.3)] {
            save_cube(dir.path().join(name), &HsiCube::constant(1, 1, 1, v).unwrap()).unwrap();
        }
        let cubes = load_cube_dir(dir.path()).unwrap();
        let firsts: Vec<f32> = cubes.iter().map(|c| c.data()[0]).collect();
        assert_eq!(firsts, [0.1, 0.2, 0.3]);
    }

    #[test]
    fn pgm_8_and_16_bit() {
        let (w, h, v) = read_pgm(b"P5\n# comment\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(v, [0.0, 1.0]);
        let (_, _, v) = read_pgm(b"P5 1 2 1000\n\x01\xf4\x03\xe8").unwrap();
        assert_eq!(v, [0.5, 1.0]);
        assert!(read_pgm(b"P2 1 1 255\n0").is_err());
        assert!(read_pgm(b"P5 2 2 255\n\x00").is_err());
    }

    #[test]
    fn pgm_directory_import() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("band_1.pgm"), b"P5 2 1 255\n\x00\x33").unwrap();
        fs::write(dir.path().join("band_0.pgm"), b"P5 2 1 255\n\xff\x66").unwrap();
        fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
        let cube = import_pgm_dir(dir.path()).unwrap();
        assert_eq!((cube.width(), cube.height(), cube.bands()), (2, 1, 2));
        assert!((cube.band(0)[1] - 0.4).abs() < 1e-6 && cube.band(0)[0] == 1.0);
        fs::write(dir.path().join("band_2.pgm"), b"P5 1 1 255\n\x00").unwrap();
        assert!(import_pgm_dir(dir.path()).is_err());
    }
}
