use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};

use super::ImageTensor;
use crate::error::{CcdfError, Result};

/// Magic bytes of the raw tensor format: a 16-byte header (`magic`, width,
/// height, channels as little-endian `u32`) followed by little-endian `f32`
/// samples interleaved as `[y][x][band]`.
pub const RAW_MAGIC: [u8; 4] = *b"CCDF";

const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    /// TIFF with one `f32` page per band on write; chunky or paged on read.
    Tiff,
    Raw,
}

impl RasterFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(ext) if ext == "tif" || ext == "tiff" => RasterFormat::Tiff,
            _ => RasterFormat::Raw,
        }
    }
}

/// Reads a multi-band raster. The container is detected from its leading bytes.
pub fn load_raster(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| CcdfError::io(path, e))?;
    if bytes.starts_with(&RAW_MAGIC) {
        decode_raw(path, &bytes)
    } else if bytes.starts_with(b"II*\0") || bytes.starts_with(b"MM\0*") || bytes.starts_with(b"II+\0") || bytes.starts_with(b"MM\0+") {
        decode_tiff(path, bytes)
    } else {
        Err(CcdfError::format(path, "not a TIFF or raw tensor file"))
    }
}

pub fn save_raster(image: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match RasterFormat::from_path(path) {
        RasterFormat::Tiff => write_tiff_bands(path, image),
        RasterFormat::Raw => write_raw(path, image),
    }
}

fn decode_raw(path: &Path, bytes: &[u8]) -> Result<ImageTensor> {
    if bytes.len() < HEADER_LEN {
        return Err(CcdfError::format(path, "truncated header"));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (w, h, c) = (field(0), field(1), field(2));
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| CcdfError::format(path, "header dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(CcdfError::format(
            path,
            format!("payload has {} bytes, header implies {expected}", payload.len()),
        ));
    }
    let samples = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ImageTensor::from_interleaved(w, h, c, samples).map_err(|e| CcdfError::format(path, e))
}

fn write_raw(path: &Path, image: &ImageTensor) -> Result<()> {
    let file = File::create(path).map_err(|e| CcdfError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(&RAW_MAGIC);
    for dim in [image.width(), image.height(), image.channels()] {
        header.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        out.write_all(&header)?;
        for v in image.data().iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| CcdfError::io(path, e))
}

fn samples_to_f32(result: DecodingResult) -> Vec<f32> {
    match result {
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::U64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::F16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I64(v) => v.into_iter().map(|x| x as f32).collect(),
    }
}

struct Page {
    width: usize,
    height: usize,
    samples_per_pixel: usize,
    samples: Vec<f32>,
}

fn decode_tiff(path: &Path, bytes: Vec<u8>) -> Result<ImageTensor> {
    let tiff_err = |e: tiff::TiffError| CcdfError::format(path, e);
    let mut decoder = Decoder::new(std::io::Cursor::new(bytes))
        .map_err(tiff_err)?
        .with_limits(Limits::unlimited());
    let mut pages = Vec::new();
    loop {
        let (w, h) = decoder.dimensions().map_err(tiff_err)?;
        let spp = decoder.colortype().map_err(tiff_err)?.num_samples() as usize;
        let samples = samples_to_f32(decoder.read_image().map_err(tiff_err)?);
        pages.push(Page {
            width: w as usize,
            height: h as usize,
            samples_per_pixel: spp,
            samples,
        });
        if !decoder.more_images() {
            break;
        }
        decoder.next_image().map_err(tiff_err)?;
    }

    let (w, h) = (pages[0].width, pages[0].height);
    for (band, page) in pages.iter().enumerate().skip(1) {
        if (page.width, page.height) != (w, h) {
            return Err(CcdfError::BandMismatch {
                first: (w, h),
                band,
                other: (page.width, page.height),
            });
        }
    }
    let channels: usize = pages.iter().map(|p| p.samples_per_pixel).sum();
    for page in &pages {
        if page.samples.len() != w * h * page.samples_per_pixel {
            return Err(CcdfError::format(path, "page sample count does not match its dimensions"));
        }
    }
    let mut interleaved = vec![0f32; w * h * channels];
    let mut band_offset = 0;
    for page in &pages {
        let spp = page.samples_per_pixel;
        for px in 0..w * h {
            let dst = px * channels + band_offset;
            interleaved[dst..dst + spp].copy_from_slice(&page.samples[px * spp..(px + 1) * spp]);
        }
        band_offset += spp;
    }
    ImageTensor::from_interleaved(w, h, channels, interleaved).map_err(|e| CcdfError::format(path, e))
}

fn write_tiff_bands(path: &Path, image: &ImageTensor) -> Result<()> {
    let file = File::create(path).map_err(|e| CcdfError::io(path, e))?;
    let mut encoder = TiffEncoder::new(BufWriter::new(file)).map_err(|e| CcdfError::format(path, e))?;
    let (w, h) = (image.width(), image.height());
    for band in 0..image.channels() {
        let plane: Vec<f32> = image
            .data()
            .index_axis(ndarray::Axis(2), band)
            .iter()
            .copied()
            .collect();
        encoder
            .write_image::<colortype::Gray32Float>(w as u32, h as u32, &plane)
            .map_err(|e| CcdfError::format(path, e))?;
    }
    Ok(())
}

/// Writes one single-band `f32` TIFF page per entry; planes may differ in size.
#[doc(hidden)]
pub fn write_tiff_pages(path: &Path, planes: &[(usize, usize, Vec<f32>)]) -> Result<()> {
    let file = File::create(path).map_err(|e| CcdfError::io(path, e))?;
    let mut encoder = TiffEncoder::new(BufWriter::new(file)).map_err(|e| CcdfError::format(path, e))?;
    for (w, h, data) in planes {
        encoder
            .write_image::<colortype::Gray32Float>(*w as u32, *h as u32, data)
            .map_err(|e| CcdfError::format(path, e))?;
    }
    Ok(())
}
