//! Image and table formats: binary PGM/PPM, PNG, and CSV.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use eki_core::imaging::{self, DistanceMap, GreyImage, Metric, RgbImage};

use crate::error::{CliError, Result};

/// A decoded image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Image {
    Grey(GreyImage),
    Rgb(RgbImage),
}

impl Image {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Image::Grey(g) => (g.width, g.height),
            Image::Rgb(c) => (c.width, c.height),
        }
    }

    pub fn into_grey(self) -> GreyImage {
        match self {
            Image::Grey(g) => g,
            Image::Rgb(c) => imaging::to_grey(&c),
        }
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut buf))
        .map_err(|e| CliError::io(path, e))?;
    Ok(buf)
}

/// Parses the header of a binary netpbm file; returns the magic, dims, maxval and payload offset.
fn netpbm_header(bytes: &[u8]) -> std::result::Result<(&[u8], usize, usize, usize, usize), String> {
    let mut pos = 0;
    let mut fields: Vec<&[u8]> = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(&bytes[start..pos]);
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let num = |f: &[u8]| -> std::result::Result<usize, String> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad header field {:?}", String::from_utf8_lossy(f)))
    };
    Ok((
        fields[0],
        num(fields[1])?,
        num(fields[2])?,
        num(fields[3])?,
        pos,
    ))
}

fn read_netpbm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let (magic, w, h, maxval, offset) =
        netpbm_header(bytes).map_err(|e| CliError::parse(path, e))?;
    if maxval == 0 || maxval > 255 {
        return Err(CliError::parse(
            path,
            format!("only 8-bit images are supported, maxval is {maxval}"),
        ));
    }
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(CliError::parse(
                path,
                format!("unsupported netpbm type {}", String::from_utf8_lossy(other)),
            ))
        }
    };
    let need = w * h * channels;
    let raster = bytes.get(offset..offset + need).ok_or_else(|| {
        CliError::parse(
            path,
            format!(
                "expected {need} bytes of pixel data for {w}x{h}, found {}",
                bytes.len().saturating_sub(offset)
            ),
        )
    })?;
    let scale = |v: u8| {
        if maxval == 255 {
            v
        } else {
            ((v as usize * 255 + maxval / 2) / maxval) as u8
        }
    };
    let data = raster.iter().map(|&v| scale(v)).collect();
    Ok(if channels == 1 {
        Image::Grey(GreyImage {
            width: w,
            height: h,
            data,
        })
    } else {
        Image::Rgb(RgbImage {
            width: w,
            height: h,
            data,
        })
    })
}

#[cfg(feature = "png")]
fn read_png(path: &Path, bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| CliError::parse(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| CliError::parse(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.buffer_size()];
    let pick = |stride: usize, keep: usize| -> Vec<u8> {
        buf.chunks_exact(stride)
            .flat_map(|p| p[..keep].to_vec())
            .collect()
    };
    Ok(match info.color_type {
        png::ColorType::Grayscale => Image::Grey(GreyImage {
            width: w,
            height: h,
            data: buf.to_vec(),
        }),
        png::ColorType::GrayscaleAlpha => Image::Grey(GreyImage {
            width: w,
            height: h,
            data: pick(2, 1),
        }),
        png::ColorType::Rgb => Image::Rgb(RgbImage {
            width: w,
            height: h,
            data: buf.to_vec(),
        }),
        png::ColorType::Rgba => Image::Rgb(RgbImage {
            width: w,
            height: h,
            data: pick(4, 3),
        }),
        png::ColorType::Indexed => {
            return Err(CliError::parse(path, "indexed PNG was not expanded"))
        }
    })
}

/// Reads a binary PGM/PPM or (with the `png` feature) a PNG file.
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = read_all(path)?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return read_netpbm(path, &bytes);
    }
    #[cfg(feature = "png")]
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        return read_png(path, &bytes);
    }
    Err(CliError::parse(
        path,
        "unrecognised image format, expected binary PGM/PPM or PNG",
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn write_pgm(path: &Path, img: &GreyImage) -> Result<()> {
    let mut w = create(path)?;
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)
        .and_then(|_| w.write_all(&img.data))
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut w = create(path)?;
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)
        .and_then(|_| w.write_all(&img.data))
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

#[cfg(feature = "png")]
pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let w = create(path)?;
    let mut enc = png::Encoder::new(w, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| CliError::io(path, e))?;
    writer
        .write_image_data(&img.data)
        .map_err(|e| CliError::io(path, e))?;
    writer.finish().map_err(|e| CliError::io(path, e))
}

/// Distance map scaled so that its maximum becomes 255.
pub fn distance_to_grey(map: &DistanceMap) -> GreyImage {
    let max = map.values.iter().cloned().fold(0.0, f64::max);
    let data = map
        .values
        .iter()
        .map(|v| {
            if max > 0.0 {
                (v / max * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    GreyImage {
        width: map.width,
        height: map.height,
        data,
    }
}

pub fn write_distance_csv(path: &Path, map: &DistanceMap) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(["row", "col", "distance"])
        .map_err(|e| CliError::io(path, e))?;
    for r in 0..map.height {
        for c in 0..map.width {
            w.write_record(&[r.to_string(), c.to_string(), map.at(c, r).to_string()])
                .map_err(|e| CliError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes a table with a header row.
pub fn write_table(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a headed numeric table.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header = r
        .headers()
        .map_err(|e| CliError::parse(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::parse(path, e))?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::parse(path, format!("row {}: {e}", k + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Image file → grey → threshold → distance transform → row-major vector.
///
/// With `expected` set, an image of other dimensions is rejected.
pub fn ingest(
    path: &Path,
    sigma: u32,
    metric: Metric,
    expected: Option<(usize, usize)>,
) -> Result<Vec<f64>> {
    let img = read_image(path)?;
    if let Some((w, h)) = expected {
        if img.dims() != (w, h) {
            let (gw, gh) = img.dims();
            return Err(CliError::io(
                path,
                format!("image is {gw}x{gh}, expected {w}x{h}"),
            ));
        }
    }
    imaging::observe(&img.into_grey(), sigma, metric)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
