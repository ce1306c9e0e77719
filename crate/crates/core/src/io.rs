//! On-disk formats.
//!
//! Volumes use the SPKV layout: a 64-byte header (magic `SPKV0001`, then
//! `nx ny nz` as little-endian `u32`, then `dx dy dz` as little-endian `f64`,
//! then zero padding) followed by `nx·ny·nz` little-endian `f64` samples in
//! x-fastest order.
//!
//! Images are binary 16-bit PGM (`P5`, maxval 65535, big-endian samples)
//! with a `key = value` sidecar at `<file>.meta` giving the scale that maps
//! stored codes back to intensities. Every writer goes through a temporary
//! file in the destination directory followed by a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{Image2D, Volume3D};

pub const SPKV_MAGIC: &[u8; 8] = b"SPKV0001";
pub const SPKV_HEADER_LEN: usize = 64;

fn parse_err<T>(offset: u64, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        offset,
        message: message.into(),
    })
}

/// Writes `bytes` to `path` via a sibling temporary file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_volume(v: &Volume3D) -> Result<Vec<u8>> {
    let (nx, ny, nz) = v.dims();
    let to_u32 = |n: usize| {
        u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("dimension {n} does not fit the SPKV header")))
    };
    let mut out = Vec::with_capacity(SPKV_HEADER_LEN + 8 * v.len());
    out.extend_from_slice(SPKV_MAGIC);
    for n in [nx, ny, nz] {
        out.extend_from_slice(&to_u32(n)?.to_le_bytes());
    }
    for d in [v.dx, v.dy, v.dz] {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.resize(SPKV_HEADER_LEN, 0);
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume3D> {
    if bytes.len() < SPKV_HEADER_LEN {
        return parse_err(
            bytes.len() as u64,
            format!("truncated header: expected {SPKV_HEADER_LEN} bytes, found {}", bytes.len()),
        );
    }
    if &bytes[..8] != SPKV_MAGIC {
        return parse_err(0, format!("bad magic {:?}, expected \"SPKV0001\"", String::from_utf8_lossy(&bytes[..8])));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let (nx, ny, nz) = (u32_at(8), u32_at(12), u32_at(16));
    if nx == 0 || ny == 0 || nz == 0 {
        return parse_err(8, format!("zero dimension in header: {nx}x{ny}x{nz}"));
    }
    let samples = nx
        .checked_mul(ny)
        .and_then(|p| p.checked_mul(nz))
        .ok_or_else(|| Error::Parse { offset: 8, message: format!("dimensions {nx}x{ny}x{nz} overflow") })?;
    let expected = samples
        .checked_mul(8)
        .and_then(|b| b.checked_add(SPKV_HEADER_LEN))
        .ok_or_else(|| Error::Parse { offset: 8, message: format!("dimensions {nx}x{ny}x{nz} overflow") })?;
    if bytes.len() != expected {
        let offset = bytes.len().min(expected) as u64;
        return parse_err(
            offset,
            format!("expected {expected} bytes for a {nx}x{ny}x{nz} volume, found {}", bytes.len()),
        );
    }
    let data = bytes[SPKV_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Volume3D::new(nx, ny, nz, data)?.with_pitch(f64_at(20), f64_at(28), f64_at(36)))
}

pub fn write_volume(path: &Path, v: &Volume3D) -> Result<()> {
    write_atomic(path, &encode_volume(v)?)
}

pub fn read_volume(path: &Path) -> Result<Volume3D> {
    decode_volume(&read_all(path)?)
}

/// Sidecar fields stored next to a PGM image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMeta {
    pub width: usize,
    pub height: usize,
    pub units: String,
    /// Intensity represented by one code step.
    pub scale: f64,
    pub seed: Option<u64>,
}

pub fn meta_path(image: &Path) -> PathBuf {
    let mut s = image.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Encodes a non-negative image into 16-bit codes with `scale = max/65535`.
pub fn encode_pgm(img: &Image2D) -> Result<(Vec<u8>, f64)> {
    if img.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("PGM images must be finite and non-negative".into()));
    }
    let peak = img.max();
    let scale = if peak > 0.0 { peak / 65535.0 } else { 1.0 };
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for &v in img.data() {
        let code = (v / scale).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&code.to_be_bytes());
    }
    Ok((out, scale))
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<(usize, u64)> {
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
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return parse_err(start as u64, "expected a decimal number in the PGM header");
    }
    let text = std::str::from_utf8(&bytes[start..*pos]).expect("ascii digits");
    let value = text
        .parse::<usize>()
        .map_err(|_| Error::Parse { offset: start as u64, message: format!("number {text} out of range") })?;
    Ok((value, start as u64))
}

/// Decodes a binary PGM to raw codes (no scaling applied).
pub fn decode_pgm(bytes: &[u8]) -> Result<Image2D> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return parse_err(0, "bad magic, expected binary PGM \"P5\"");
    }
    let mut pos = 2;
    let (w, w_at) = pgm_token(bytes, &mut pos)?;
    let (h, h_at) = pgm_token(bytes, &mut pos)?;
    let (maxval, m_at) = pgm_token(bytes, &mut pos)?;
    if w == 0 {
        return parse_err(w_at, "zero width");
    }
    if h == 0 {
        return parse_err(h_at, "zero height");
    }
    if maxval == 0 || maxval > 65535 {
        return parse_err(m_at, format!("maxval {maxval} outside 1..=65535"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return parse_err(pos as u64, "missing whitespace after the PGM header");
    }
    pos += 1;
    let bps = if maxval > 255 { 2 } else { 1 };
    let expected = pos + w * h * bps;
    if bytes.len() != expected {
        return parse_err(
            bytes.len().min(expected) as u64,
            format!("expected {expected} bytes for a {w}x{h} image, found {}", bytes.len()),
        );
    }
    let body = &bytes[pos..];
    let data = if bps == 2 {
        body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
    } else {
        body.iter().map(|&b| b as f64).collect()
    };
    Image2D::new(w, h, data)
}

pub fn encode_meta(meta: &ImageMeta) -> String {
    let mut s = format!(
        "width = {}\nheight = {}\nunits = {}\nscale = {:?}\n",
        meta.width, meta.height, meta.units, meta.scale
    );
    if let Some(seed) = meta.seed {
        s.push_str(&format!("seed = {seed}\n"));
    }
    s
}

pub fn decode_meta(text: &str) -> Result<ImageMeta> {
    let mut width = None;
    let mut height = None;
    let mut units = String::from("arbitrary");
    let mut scale = None;
    let mut seed = None;
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let here = offset;
        offset += line.len() as u64;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return parse_err(here, format!("expected key = value, found {body:?}"));
        };
        let (k, v) = (k.trim(), v.trim());
        let bad = |what: &str| Error::Parse { offset: here, message: format!("invalid {what} {v:?}") };
        match k {
            "width" => width = Some(v.parse().map_err(|_| bad("width"))?),
            "height" => height = Some(v.parse().map_err(|_| bad("height"))?),
            "units" => units = v.to_string(),
            "scale" => scale = Some(v.parse::<f64>().map_err(|_| bad("scale"))?),
            "seed" => seed = Some(v.parse().map_err(|_| bad("seed"))?),
            _ => log::warn!("ignoring unknown image metadata key {k:?}"),
        }
    }
    let missing = |what: &str| Error::Parse { offset, message: format!("metadata is missing {what}") };
    Ok(ImageMeta {
        width: width.ok_or_else(|| missing("width"))?,
        height: height.ok_or_else(|| missing("height"))?,
        units,
        scale: scale.ok_or_else(|| missing("scale"))?,
        seed,
    })
}

/// Writes the image and its sidecar; returns the scale recorded.
pub fn write_pgm(path: &Path, img: &Image2D, units: &str, seed: Option<u64>) -> Result<f64> {
    let (bytes, scale) = encode_pgm(img)?;
    write_atomic(path, &bytes)?;
    let meta = ImageMeta {
        width: img.width(),
        height: img.height(),
        units: units.to_string(),
        scale,
        seed,
    };
    write_atomic(&meta_path(path), encode_meta(&meta).as_bytes())?;
    Ok(scale)
}

/// Reads a PGM and applies the sidecar scale when the sidecar exists.
pub fn read_pgm(path: &Path) -> Result<(Image2D, Option<ImageMeta>)> {
    let codes = decode_pgm(&read_all(path)?)?;
    let mp = meta_path(path);
    if !mp.exists() {
        return Ok((codes, None));
    }
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta = decode_meta(&text)?;
    if meta.width != codes.width() || meta.height != codes.height() {
        return parse_err(
            0,
            format!(
                "sidecar says {}x{} but image is {}x{}",
                meta.width,
                meta.height,
                codes.width(),
                codes.height()
            ),
        );
    }
    let data = codes.data().iter().map(|c| c * meta.scale).collect();
    Ok((Image2D::new(meta.width, meta.height, data)?, Some(meta)))
}

/// Full-precision single-plane copy of an image.
pub fn write_image_f64(path: &Path, img: &Image2D) -> Result<()> {
    let v = Volume3D::new(img.width(), img.height(), 1, img.data().to_vec())?;
    write_volume(path, &v)
}

/// Loads an image from either a `.spkv` single-plane volume or a PGM.
pub fn read_image(path: &Path) -> Result<Image2D> {
    if path.extension().is_some_and(|e| e == "spkv") {
        let v = read_volume(path)?;
        let (nx, ny, nz) = v.dims();
        if nz != 1 {
            return parse_err(16, format!("expected a single-plane volume, found depth {nz}"));
        }
        Image2D::new(nx, ny, v.into_data())
    } else {
        Ok(read_pgm(path)?.0)
    }
}

/// One line per iteration: `index stage error`.
pub fn encode_error_history(history: &[f64], er_start: usize) -> String {
    let mut s = String::from("# iteration stage fourier_error\n");
    for (i, e) in history.iter().enumerate() {
        let stage = if i < er_start { "hio" } else { "er" };
        s.push_str(&format!("{i} {stage} {e:?}\n"));
    }
    s
}

pub fn decode_error_history(text: &str) -> Result<(Vec<f64>, usize)> {
    let mut history = Vec::new();
    let mut er_start = None;
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let here = offset;
        offset += line.len() as u64;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        let [_, stage, value] = fields[..] else {
            return parse_err(here, format!("expected three fields, found {}", fields.len()));
        };
        let e: f64 = value
            .parse()
            .map_err(|_| Error::Parse { offset: here, message: format!("invalid error value {value:?}") })?;
        match stage {
            "hio" => {}
            "er" => {
                er_start.get_or_insert(history.len());
            }
            other => return parse_err(here, format!("unknown stage {other:?}")),
        }
        history.push(e);
    }
    let start = er_start.unwrap_or(history.len());
    Ok((history, start))
}

pub fn write_error_history(path: &Path, history: &[f64], er_start: usize) -> Result<()> {
    write_atomic(path, encode_error_history(history, er_start).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Volume3D {
        Volume3D::from_fn(4, 4, 3, |x, y, z| (x as f64 - 1.5) * 0.1 + y as f64 * 1e-17 + z as f64 * 3.25)
            .unwrap()
            .with_pitch(4.0, 4.0, 0.5)
    }

    #[test]
    fn volume_round_trip_is_bit_exact() {
        let v = sample();
        let back = decode_volume(&encode_volume(&v).unwrap()).unwrap();
        assert_eq!(back.dims(), v.dims());
        assert_eq!((back.dx, back.dy, back.dz), (4.0, 4.0, 0.5));
        for (a, b) in v.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_volume(&sample()).unwrap();
        assert_eq!(&bytes[..8], b"SPKV0001");
        let dims: Vec<u32> = (0..3)
            .map(|i| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![4, 4, 3]);
        assert!(bytes[44..64].iter().all(|&b| b == 0));
        assert_eq!(bytes.len(), 64 + 8 * 48);
    }

    #[test]
    fn truncation_and_magic_are_reported() {
        let bytes = encode_volume(&sample()).unwrap();
        match decode_volume(&bytes[..bytes.len() - 3]) {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset as usize, bytes.len() - 3);
                assert!(message.contains(&bytes.len().to_string()));
                assert!(message.contains(&(bytes.len() - 3).to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(decode_volume(&bytes[..30]), Err(Error::Parse { offset: 30, .. })));
        let mut bad = bytes.clone();
        bad[3] = b'X';
        assert!(matches!(decode_volume(&bad), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let img = Image2D::from_fn(7, 5, |x, y| (x * y) as f64 * 0.37).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.pgm");
        let scale = write_pgm(&p, &img, "relative", Some(9)).unwrap();
        let (back, meta) = read_pgm(&p).unwrap();
        let meta = meta.unwrap();
        assert_eq!(meta.seed, Some(9));
        assert_eq!(meta.scale, scale);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= scale / 2.0 + 1e-15);
        }
        assert_eq!(back.max(), img.max());
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        let r = decode_pgm(b"P5\n2 2\n65535\n\x00\x01");
        assert!(matches!(r, Err(Error::Parse { .. })));
        let neg = Image2D::new(1, 1, vec![-1.0]).unwrap();
        assert!(encode_pgm(&neg).is_err());
        let ok = decode_pgm(b"P5 # comment\n2 1\n255\n\x01\x02").unwrap();
        assert_eq!(ok.data(), &[1.0, 2.0]);
    }

    #[test]
    fn image_f64_round_trip() {
        let img = Image2D::from_fn(5, 3, |x, y| (x as f64).sqrt() + y as f64 / 3.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.spkv");
        write_image_f64(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }

    #[test]
    fn error_history_round_trip() {
        let h = vec![0.5, 0.25, 1.0 / 3.0, 1e-17];
        let (back, start) = decode_error_history(&encode_error_history(&h, 2)).unwrap();
        assert_eq!(back, h);
        assert_eq!(start, 2);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_volume(Path::new("/nonexistent/x.spkv")), Err(Error::Io { .. })));
    }
}
