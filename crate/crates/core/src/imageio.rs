//! 8-bit PNG reading and writing for RGB images and class-index label maps.
//!
//! Images are `[3, H, W]` tensors in `[0, 1]`; a byte `v` maps to `v / 255`
//! and back via rounding. Label maps are single-channel 8-bit PNGs, either
//! grayscale or palette-indexed, whose raw values are class indices.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::labels::{LabelMap, VOID};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: png decode: {source}")]
    Decode {
        path: PathBuf,
        source: png::DecodingError,
    },
    #[error("{path}: png encode: {source}")]
    Encode {
        path: PathBuf,
        source: png::EncodingError,
    },
    #[error("{path}: expected {want}, found {found}")]
    Format {
        path: PathBuf,
        want: &'static str,
        found: String,
    },
    #[error("image tensor must be [3,H,W], got {0:?}")]
    Shape(Vec<usize>),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImageError + '_ {
    move |source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Raw {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: Vec<u8>,
}

fn decode(path: &Path) -> Result<Raw, ImageError> {
    let file = File::open(path).map_err(io_err(path))?;
    let dec_err = |source| ImageError::Decode {
        path: path.to_path_buf(),
        source,
    };
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(dec_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| ImageError::Format {
        path: path.to_path_buf(),
        want: "an image that fits in memory",
        found: "oversized dimensions".into(),
    })?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(dec_err)?;
    let width = info.width as usize;
    let height = info.height as usize;
    let mut bytes = Vec::with_capacity(height * width * 3);
    for row in buf.chunks(info.line_size).take(height) {
        bytes.extend_from_slice(row);
    }
    Ok(Raw {
        width,
        height,
        color: info.color_type,
        depth: info.bit_depth,
        bytes,
    })
}

pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Read an 8-bit RGB PNG into a `[3, H, W]` tensor.
pub fn read_rgb(path: &Path) -> Result<Tensor, ImageError> {
    let raw = decode(path)?;
    if raw.color != png::ColorType::Rgb || raw.depth != png::BitDepth::Eight {
        return Err(ImageError::Format {
            path: path.to_path_buf(),
            want: "8-bit RGB",
            found: format!("{:?} {:?}", raw.color, raw.depth),
        });
    }
    let hw = raw.width * raw.height;
    let mut data = vec![0.0; 3 * hw];
    for (i, px) in raw.bytes.chunks(3).enumerate().take(hw) {
        for c in 0..3 {
            data[c * hw + i] = px[c] as f64 / 255.0;
        }
    }
    Ok(Tensor::new(vec![3, raw.height, raw.width], data).expect("decoded size is consistent"))
}

/// Read a single-channel 8-bit label PNG (grayscale or indexed). Values are
/// returned unvalidated.
pub fn read_labels(path: &Path) -> Result<LabelMap, ImageError> {
    let raw = decode(path)?;
    let ok_color = matches!(raw.color, png::ColorType::Grayscale | png::ColorType::Indexed);
    if !ok_color || raw.depth != png::BitDepth::Eight {
        return Err(ImageError::Format {
            path: path.to_path_buf(),
            want: "8-bit single-channel labels",
            found: format!("{:?} {:?}", raw.color, raw.depth),
        });
    }
    Ok(LabelMap::new(raw.width, raw.height, raw.bytes).expect("decoded size is consistent"))
}

fn encode(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    palette: Option<Vec<u8>>,
    bytes: &[u8],
) -> Result<(), ImageError> {
    let file = File::create(path).map_err(io_err(path))?;
    let enc_err = |source| ImageError::Encode {
        path: path.to_path_buf(),
        source,
    };
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    if let Some(p) = palette {
        encoder.set_palette(p);
    }
    let mut writer = encoder.write_header().map_err(enc_err)?;
    writer.write_image_data(bytes).map_err(enc_err)?;
    writer.finish().map_err(enc_err)
}

/// Write a `[3, H, W]` tensor as 8-bit RGB, clamping to `[0, 1]`.
pub fn write_rgb(path: &Path, image: &Tensor) -> Result<(), ImageError> {
    let [3, h, w] = image.shape() else {
        return Err(ImageError::Shape(image.shape().to_vec()));
    };
    let hw = h * w;
    let d = image.data();
    let bytes: Vec<u8> = (0..hw)
        .flat_map(|i| (0..3).map(move |c| to_byte(d[c * hw + i])))
        .collect();
    encode(path, *w, *h, png::ColorType::Rgb, None, &bytes)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<(), ImageError> {
    encode(
        path,
        labels.width(),
        labels.height(),
        png::ColorType::Grayscale,
        None,
        labels.data(),
    )
}

/// Fixed display colours per class index; VOID is white.
pub const CLASS_COLORS: [[u8; 3]; 8] = [
    [40, 40, 40],
    [220, 60, 50],
    [50, 110, 220],
    [235, 200, 40],
    [60, 180, 80],
    [170, 80, 200],
    [40, 200, 200],
    [240, 140, 40],
];

/// Write labels as a palette PNG for viewing. The indices stay class ids,
/// so the file also loads back through [`read_labels`].
pub fn write_palette_labels(path: &Path, labels: &LabelMap) -> Result<(), ImageError> {
    let mut palette = vec![0u8; 256 * 3];
    for (i, c) in CLASS_COLORS.iter().enumerate() {
        palette[i * 3..i * 3 + 3].copy_from_slice(c);
    }
    palette[VOID as usize * 3..].copy_from_slice(&[255, 255, 255]);
    encode(
        path,
        labels.width(),
        labels.height(),
        png::ColorType::Indexed,
        Some(palette),
        labels.data(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip_is_exact_on_byte_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let (h, w) = (3, 5);
        let data: Vec<f64> = (0..3 * h * w).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        let t = Tensor::new(vec![3, h, w], data).unwrap();
        write_rgb(&path, &t).unwrap();
        assert_eq!(read_rgb(&path).unwrap(), t);
        assert!(matches!(read_labels(&path), Err(ImageError::Format { .. })));
    }

    #[test]
    fn label_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = LabelMap::new(4, 2, vec![0, 1, 2, 3, 4, VOID, 0, 1]).unwrap();
        let gray = dir.path().join("g.png");
        let pal = dir.path().join("p.png");
        write_labels(&gray, &m).unwrap();
        write_palette_labels(&pal, &m).unwrap();
        assert_eq!(read_labels(&gray).unwrap(), m);
        assert_eq!(read_labels(&pal).unwrap(), m);
        assert!(matches!(read_rgb(&gray), Err(ImageError::Format { .. })));
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_rgb(Path::new("/nonexistent/a.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/a.png"));
    }
}
