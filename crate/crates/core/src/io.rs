//! File formats: Middlebury `.flo` flow files, 8-bit grayscale images
//! (PNG, binary PGM, TIFF), and atomic writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::field::{FlowField, GrayImage};

/// Float magic at the start of every `.flo` file (`"PIEH"` in ASCII).
pub const FLO_MAGIC: f32 = 202021.25;

const FLO_HEADER_LEN: usize = 12;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Encodes a flow field as `.flo` bytes. Values are stored as `f32`.
pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (w, h) = flow.dims();
    let mut out = Vec::with_capacity(FLO_HEADER_LEN + w * h * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&(*u as f32).to_le_bytes());
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn read_i32(bytes: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Decodes `.flo` bytes.
pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < FLO_HEADER_LEN {
        return Err(Error::NotAFlowFile(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    let magic = read_f32(bytes, 0);
    if magic.to_bits() != FLO_MAGIC.to_bits() {
        return Err(Error::NotAFlowFile(format!("bad magic {magic}")));
    }
    let w = read_i32(bytes, 4);
    let h = read_i32(bytes, 8);
    if w <= 0 || h <= 0 {
        return Err(Error::NotAFlowFile(format!("bad dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = FLO_HEADER_LEN + w * h * 8;
    if bytes.len() != expected {
        return Err(Error::NotAFlowFile(format!(
            "expected {expected} bytes for {w}x{h}, got {}",
            bytes.len()
        )));
    }
    let n = w * h;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        let at = FLO_HEADER_LEN + 8 * i;
        u.push(read_f32(bytes, at) as f64);
        v.push(read_f32(bytes, at + 4) as f64);
    }
    FlowField::new(w, h, u, v)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_flo(&bytes).map_err(|e| match e {
        Error::NotAFlowFile(msg) => Error::NotAFlowFile(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    write_atomic(path, &encode_flo(flow))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`, so the
/// target never holds a partially written file. Missing parent directories
/// are created.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} has no file name", path.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    let result = (|| {
        fs::create_dir_all(&dir)?;
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

/// Reads an 8-bit grayscale image (color inputs are converted to luma) and
/// normalizes it to `[0, 1]`.
pub fn read_gray_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    let raw = GrayImage::new(
        w as usize,
        h as usize,
        luma.into_raw().into_iter().map(f64::from).collect(),
    )?;
    raw.normalize()
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png(buf: image::DynamicImage, path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(bytes)
}

/// Writes a `[0, 1]` image as an 8-bit grayscale PNG.
pub fn write_gray_png(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    let buf = image::GrayImage::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.data().iter().map(|&v| to_byte(v)).collect(),
    )
    .expect("buffer length matches dimensions");
    write_atomic(path, &encode_png(image::DynamicImage::ImageLuma8(buf), path)?)
}

/// Writes a `[0, 1]` image as a binary PGM (P5).
pub fn write_gray_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend(img.data().iter().map(|&v| to_byte(v)));
    write_atomic(path, &bytes)
}

/// Interleaved 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

pub fn write_rgb_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .expect("buffer length matches dimensions");
    write_atomic(path, &encode_png(image::DynamicImage::ImageRgb8(buf), path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_header_parses() {
        // "PIEH", width 3, height 2, then 6 (u, v) pairs.
        let mut bytes = vec![0x50, 0x49, 0x45, 0x48, 3, 0, 0, 0, 2, 0, 0, 0];
        for i in 0..6 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
            bytes.extend_from_slice(&(-(i as f32) * 0.5).to_le_bytes());
        }
        assert_eq!(&bytes[..4], &FLO_MAGIC.to_le_bytes());
        let f = decode_flo(&bytes).unwrap();
        assert_eq!(f.dims(), (3, 2));
        assert_eq!(f.get(2, 1), (5.0, -2.5));
        assert_eq!(encode_flo(&f), bytes);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = encode_flo(&FlowField::zeros(2, 2));
        bytes[0] ^= 0xff;
        assert!(matches!(decode_flo(&bytes), Err(Error::NotAFlowFile(_))));
        let bytes = encode_flo(&FlowField::zeros(2, 2));
        assert!(matches!(
            decode_flo(&bytes[..bytes.len() - 1]),
            Err(Error::NotAFlowFile(_))
        ));
        assert!(matches!(decode_flo(&bytes[..5]), Err(Error::NotAFlowFile(_))));
    }

    #[test]
    fn file_roundtrip_and_atomic_target() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        let f = FlowField::from_fn(5, 4, |x, y| (x as f64 * 0.25, -(y as f64) * 1.5));
        write_flo(&path, &f).unwrap();
        assert_eq!(read_flo(&path).unwrap(), f);
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn png_and_pgm_roundtrip_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(7, 3, |x, y| ((x * 31 + y * 17) % 256) as f64 / 255.0);
        for name in ["a.png", "a.pgm"] {
            let path = dir.path().join(name);
            if name.ends_with("png") {
                write_gray_png(&path, &img).unwrap();
            } else {
                write_gray_pgm(&path, &img).unwrap();
            }
            let back = read_gray_image(&path).unwrap();
            assert_eq!(back, img, "{name}");
        }
    }

    proptest! {
        #[test]
        fn flo_bytes_roundtrip_bit_exact(
            w in 1usize..8, h in 1usize..8,
            seed in proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO, 128),
        ) {
            let n = w * h;
            let u: Vec<f64> = seed[..n].iter().map(|&x| x as f64).collect();
            let v: Vec<f64> = seed[64..64 + n].iter().map(|&x| x as f64).collect();
            let f = FlowField::new(w, h, u, v).unwrap();
            let bytes = encode_flo(&f);
            let back = decode_flo(&bytes).unwrap();
            prop_assert_eq!(encode_flo(&back), bytes);
            for (a, b) in back.u().iter().chain(back.v()).zip(f.u().iter().chain(f.v())) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
