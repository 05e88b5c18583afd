//! Binary PGM (P5) and raw float grid (RFG) files.
//!
//! RFG layout: an ASCII line `RFG <H> <W> <C>\n` followed by `H*W*C`
//! little-endian `f64` values, row-major with the channel index fastest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{Image2D, Mask2D};
use crate::transform::DisplacementField;

/// Sample depth used when writing PGM files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Raw PGM contents before any intensity scaling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub height: usize,
    pub width: usize,
    pub maxval: u32,
    pub samples: Vec<u16>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Pulls the next whitespace-delimited header token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
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
    (start < *pos).then(|| &bytes[start..*pos])
}

fn parse_number(path: &Path, tok: Option<&[u8]>, field: &str) -> Result<u64> {
    let tok = tok.ok_or_else(|| malformed(path, format!("missing {field}")))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<u64>().ok())
        .ok_or_else(|| malformed(path, format!("bad {field}")))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Pgm> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    parse_pgm(path, &bytes)
}

fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<Pgm> {
    let mut pos = 0;
    if next_token(bytes, &mut pos) != Some(b"P5".as_slice()) {
        return Err(malformed(path, "not a binary PGM (P5)"));
    }
    let width = parse_number(path, next_token(bytes, &mut pos), "width")? as usize;
    let height = parse_number(path, next_token(bytes, &mut pos), "height")? as usize;
    let maxval = parse_number(path, next_token(bytes, &mut pos), "maxval")?;
    if width == 0 || height == 0 {
        return Err(malformed(path, "zero dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            maxval,
        });
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(malformed(path, "missing raster separator"));
    }
    pos += 1;
    let n = width * height;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(malformed(
            path,
            format!("raster truncated: {} of {need} bytes", raster.len()),
        ));
    }
    let samples = if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster[..need].iter().map(|&b| b as u16).collect()
    };
    Ok(Pgm {
        height,
        width,
        maxval: maxval as u32,
        samples,
    })
}

fn encode_pgm(height: usize, width: usize, maxval: u32, samples: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    if maxval > 255 {
        for s in samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(samples.iter().map(|&s| s as u8));
    }
    out
}

/// Loads a PGM and divides every sample by the header's maxval.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image2D> {
    let pgm = read_pgm(path)?;
    let scale = pgm.maxval as f64;
    Image2D::new(
        pgm.height,
        pgm.width,
        pgm.samples.iter().map(|&s| s as f64 / scale).collect(),
    )
}

/// Quantizes intensities (clamped to `[0, 1]`) to the requested depth.
pub fn encode_image(img: &Image2D, depth: BitDepth) -> Vec<u8> {
    let maxval = depth.max_value();
    let samples: Vec<u16> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * maxval as f64).round() as u16)
        .collect();
    encode_pgm(img.height(), img.width(), maxval, &samples)
}

pub fn save_image(img: &Image2D, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    write_atomic(path.as_ref(), &encode_image(img, depth))
}

/// Masks are stored as 8-bit 0/255; on load any sample above half of
/// maxval (127 for 8-bit files) counts as foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask2D> {
    let pgm = read_pgm(path)?;
    let cut = pgm.maxval / 2;
    Mask2D::new(
        pgm.height,
        pgm.width,
        pgm.samples.iter().map(|&s| s as u32 > cut).collect(),
    )
}

pub fn encode_mask(mask: &Mask2D) -> Vec<u8> {
    let samples: Vec<u16> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_pgm(mask.height(), mask.width(), 255, &samples)
}

pub fn save_mask(mask: &Mask2D, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_mask(mask))
}

/// A parsed RFG file.
#[derive(Clone, Debug, PartialEq)]
pub struct Rfg {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

pub fn encode_rfg(height: usize, width: usize, channels: usize, values: &[f64]) -> Vec<u8> {
    debug_assert_eq!(values.len(), height * width * channels);
    let mut out = format!("RFG {height} {width} {channels}\n").into_bytes();
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_rfg(path: &Path, bytes: &[u8]) -> Result<Rfg> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed(path, "no header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| malformed(path, "header is not ASCII"))?;
    let parts: Vec<&str> = header.split(' ').collect();
    if parts.len() != 4 || parts[0] != "RFG" {
        return Err(malformed(path, format!("expected `RFG <H> <W> <C>`, got {header:?}")));
    }
    let dim = |s: &str, name: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| malformed(path, format!("bad {name} {s:?}")))
    };
    let height = dim(parts[1], "height")?;
    let width = dim(parts[2], "width")?;
    let channels = dim(parts[3], "channels")?;
    let body = &bytes[nl + 1..];
    let n = height * width * channels;
    if body.len() != n * 8 {
        return Err(malformed(
            path,
            format!("expected {} payload bytes, found {}", n * 8, body.len()),
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Rfg {
        height,
        width,
        channels,
        values,
    })
}

pub fn read_rfg(path: impl AsRef<Path>) -> Result<Rfg> {
    let path = path.as_ref();
    parse_rfg(path, &read_file(path)?)
}

pub fn save_image_rfg(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_rfg(img.height(), img.width(), 1, img.data()))
}

pub fn load_image_rfg(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    let rfg = read_rfg(path)?;
    if rfg.channels != 1 {
        return Err(malformed(
            path,
            format!("image needs 1 channel, found {}", rfg.channels),
        ));
    }
    Image2D::new(rfg.height, rfg.width, rfg.values)
}

pub fn encode_field(field: &DisplacementField) -> Vec<u8> {
    let mut values = Vec::with_capacity(field.len() * 2);
    for (u, v) in field.u().iter().zip(field.v()) {
        values.push(*u);
        values.push(*v);
    }
    encode_rfg(field.height(), field.width(), 2, &values)
}

pub fn save_field(field: &DisplacementField, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_field(field))
}

pub fn load_field(path: impl AsRef<Path>) -> Result<DisplacementField> {
    let path = path.as_ref();
    let rfg = read_rfg(path)?;
    if rfg.channels != 2 {
        return Err(malformed(
            path,
            format!("field needs 2 channels, found {}", rfg.channels),
        ));
    }
    let (u, v): (Vec<f64>, Vec<f64>) = rfg.values.chunks_exact(2).map(|c| (c[0], c[1])).unzip();
    DisplacementField::new(rfg.height, rfg.width, u, v)
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Writes through a temporary sibling and renames it into place, so readers
/// never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Writes a set of files so that either all of them are replaced or none.
///
/// Every file is first written to a temporary sibling; the renames happen
/// only after all temporaries exist. On failure the temporaries are removed.
pub fn write_all_atomic(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let mut written: Vec<PathBuf> = Vec::with_capacity(files.len());
    let cleanup = |written: &[PathBuf]| {
        for t in written {
            let _ = fs::remove_file(t);
        }
    };
    for (path, bytes) in files {
        let tmp = temp_path(path);
        let res = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()
        })();
        if let Err(e) = res {
            let _ = fs::remove_file(&tmp);
            cleanup(&written);
            return Err(Error::io(path, e));
        }
        written.push(tmp);
    }
    for (i, ((path, _), tmp)) in files.iter().zip(&written).enumerate() {
        if let Err(e) = fs::rename(tmp, path) {
            cleanup(&written[i..]);
            return Err(Error::io(path, e));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn grouped_atomic_write() {
        let dir = tmp();
        let files = vec![
            (dir.path().join("a.txt"), b"one".to_vec()),
            (dir.path().join("b.txt"), b"two".to_vec()),
        ];
        write_all_atomic(&files).unwrap();
        assert_eq!(fs::read(dir.path().join("b.txt")).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);

        let bad = vec![
            (dir.path().join("c.txt"), b"x".to_vec()),
            (dir.path().join("missing").join("d.txt"), b"y".to_vec()),
        ];
        assert!(write_all_atomic(&bad).is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn eight_bit_extremes() {
        let dir = tmp();
        let p = dir.path().join("a.pgm");
        fs::write(&p, encode_pgm(2, 2, 255, &[0, 255, 128, 7])).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.get(0, 0), 0.0);
        assert_eq!(img.get(0, 1), 1.0);
    }

    #[test]
    fn sixteen_bit_ratio() {
        let dir = tmp();
        let p = dir.path().join("a.pgm");
        fs::write(&p, encode_pgm(2, 2, 65535, &[32768, 0, 0, 65535])).unwrap();
        let img = load_image(&p).unwrap();
        assert!((img.get(0, 0) - 32768.0 / 65535.0).abs() < 1e-15);
        assert!((img.get(0, 0) - 0.50001).abs() < 1e-5);
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tmp();
        let p = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 51, 102, 255]);
        fs::write(&p, bytes).unwrap();
        assert_eq!(load_image(&p).unwrap().get(0, 1), 0.2);
    }

    #[test]
    fn errors_are_distinct() {
        let dir = tmp();
        let missing = dir.path().join("nope.pgm");
        assert!(matches!(load_image(&missing), Err(Error::MissingFile(_))));

        let bad = dir.path().join("bad.pgm");
        fs::write(&bad, b"P2\n2 2\n255\n0 0 0 0").unwrap();
        assert!(matches!(load_image(&bad), Err(Error::MalformedHeader { .. })));

        let deep = dir.path().join("deep.pgm");
        fs::write(&deep, b"P5\n2 2\n70000\n\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(
            load_image(&deep),
            Err(Error::UnsupportedBitDepth { maxval: 70000, .. })
        ));

        let short = dir.path().join("short.pgm");
        fs::write(&short, b"P5\n2 2\n255\n\0\0").unwrap();
        assert!(matches!(load_image(&short), Err(Error::MalformedHeader { .. })));
    }

    #[test]
    fn mask_threshold_and_roundtrip() {
        let dir = tmp();
        let p = dir.path().join("m.pgm");
        fs::write(&p, encode_pgm(2, 2, 255, &[255, 0, 127, 128])).unwrap();
        let m = load_mask(&p).unwrap();
        assert_eq!(m.data(), &[true, false, false, true]);

        let q = dir.path().join("m2.pgm");
        save_mask(&m, &q).unwrap();
        assert_eq!(load_mask(&q).unwrap(), m);
    }

    #[test]
    fn rfg_field_roundtrip_is_exact() {
        let dir = tmp();
        let p = dir.path().join("f.rfg");
        let f = DisplacementField::new(2, 3, vec![0.1, -2.5, 3.0, 1e-300, 0.0, 7.25], vec![1.0; 6]).unwrap();
        save_field(&f, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"RFG 2 3 2\n"));
        assert_eq!(bytes.len(), 10 + 6 * 2 * 8);
        // channel-fastest: u(0,0) then v(0,0)
        assert_eq!(&bytes[10..18], &0.1f64.to_le_bytes());
        assert_eq!(&bytes[18..26], &1.0f64.to_le_bytes());
        assert_eq!(load_field(&p).unwrap(), f);
    }

    #[test]
    fn rfg_rejects_wrong_channel_count_and_size() {
        let dir = tmp();
        let p = dir.path().join("i.rfg");
        fs::write(&p, encode_rfg(2, 2, 1, &[0.0; 4])).unwrap();
        assert!(load_field(&p).is_err());
        assert!(load_image_rfg(&p).is_ok());
        fs::write(&p, b"RFG 2 2 1\n\0\0").unwrap();
        assert!(matches!(load_image_rfg(&p), Err(Error::MalformedHeader { .. })));
    }
}
