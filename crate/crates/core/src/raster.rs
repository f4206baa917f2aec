//! Roof mask rasterization and per-building chip extraction.
//!
//! Masks are sampled at pixel centres with the even-odd rule. A chip covers the
//! polygon's bounding box grown by a margin on every side; the part of that
//! window falling outside the map image is zero-filled so that the polygon
//! always sits exactly `margin` pixels from each chip edge.

use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

use crate::geodata::{crossing_x, Building, Point, Polygon};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("building {0}: polygon bounding box lies entirely outside the image")]
    OutsideImage(String),
    #[error("invalid dimensions {width}x{height}")]
    Dimensions { width: u32, height: u32 },
    #[error("PNG decode failed: {0}")]
    Decode(String),
    #[error("PNG encode failed: {0}")]
    Encode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRgb {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl ImageRgb {
    pub fn new(width: u32, height: u32) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::Dimensions { width, height });
        }
        Ok(ImageRgb {
            width,
            height,
            pixels: vec![0; width as usize * height as usize * 3],
        })
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 || pixels.len() != width as usize * height as usize * 3 {
            return Err(RasterError::Dimensions { width, height });
        }
        Ok(ImageRgb { width, height, pixels })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Single-channel mask, 0 or 255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Per-building sample: RGB crop plus roof mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chip {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples.
    pub rgb: Vec<u8>,
    /// Row-major mask, values 0 or 255.
    pub mask: Vec<u8>,
    /// Pixels between the polygon bounding box and each chip edge.
    pub margin: u32,
    pub building_id: String,
}

impl Chip {
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn rgb_at(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    #[inline]
    pub fn mask_at(&self, x: u32, y: u32) -> u8 {
        self.mask[y as usize * self.width as usize + x as usize]
    }

    pub fn mask_is_binary(&self) -> bool {
        self.mask.iter().all(|&v| v == 0 || v == 255)
    }
}

/// Rasterizes `p` into a `width`×`height` window whose top-left corner sits at
/// `origin` in map coordinates.
///
/// Pixel (row i, col j) is set iff its centre `(origin.x + j + 0.5,
/// origin.y + i + 0.5)` is inside the polygon by the even-odd rule.
pub fn rasterize_mask(p: &Polygon<f64>, origin: Point<f64>, width: u32, height: u32) -> Mask {
    let (w, h) = (width as usize, height as usize);
    let mut data = vec![0u8; w * h];
    let ring = p.exterior();
    let n = ring.len();
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    for i in 0..h {
        let py = origin.y + i as f64 + 0.5;
        xs.clear();
        for e in 0..n {
            let (a, b) = (ring[e], ring[(e + 1) % n]);
            if (a.y > py) != (b.y > py) {
                xs.push(crossing_x(a, b, py));
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(|a, b| a.partial_cmp(b).expect("finite crossings"));
        // `right` counts crossings strictly right of the pixel centre.
        let mut k = 0;
        let row = &mut data[i * w..(i + 1) * w];
        for (j, px) in row.iter_mut().enumerate() {
            let cx = origin.x + j as f64 + 0.5;
            while k < xs.len() && xs[k] <= cx {
                k += 1;
            }
            if (xs.len() - k) % 2 == 1 {
                *px = 255;
            }
        }
    }
    Mask {
        width,
        height,
        data,
    }
}

/// Integer window `[x0, x0+w) × [y0, y0+h)` a chip covers in map pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChipWindow {
    pub x0: i64,
    pub y0: i64,
    pub width: u32,
    pub height: u32,
}

/// Window for `polygon` grown by `margin` pixels on each side of its bbox.
pub fn chip_window(polygon: &Polygon<f64>, margin: u32) -> ChipWindow {
    let (lo, hi) = polygon.bbox();
    let m = margin as i64;
    let (bx0, by0) = (lo.x.floor() as i64, lo.y.floor() as i64);
    let (bx1, by1) = (
        (hi.x.ceil() as i64).max(bx0 + 1),
        (hi.y.ceil() as i64).max(by0 + 1),
    );
    ChipWindow {
        x0: bx0 - m,
        y0: by0 - m,
        width: (bx1 - bx0 + 2 * m) as u32,
        height: (by1 - by0 + 2 * m) as u32,
    }
}

/// Cuts the chip for `b` out of `img`, zero-filling any part of the window that
/// lies outside the image.
pub fn extract_chip(img: &ImageRgb, b: &Building, margin: u32) -> Result<Chip, RasterError> {
    let (lo, hi) = b.polygon.bbox();
    if hi.x.ceil() <= 0.0
        || hi.y.ceil() <= 0.0
        || lo.x.floor() >= img.width as f64
        || lo.y.floor() >= img.height as f64
    {
        return Err(RasterError::OutsideImage(b.id.clone()));
    }
    let win = chip_window(&b.polygon, margin);
    let (w, h) = (win.width as usize, win.height as usize);
    let mut rgb = vec![0u8; w * h * 3];
    // Rows and columns of the window that overlap the image.
    let cx0 = (-win.x0).clamp(0, w as i64) as usize;
    let cx1 = (img.width as i64 - win.x0).clamp(0, w as i64) as usize;
    for row in 0..h {
        let y = win.y0 + row as i64;
        if y < 0 || y >= img.height as i64 || cx0 >= cx1 {
            continue;
        }
        let src_start = (y as usize * img.width as usize + (win.x0 + cx0 as i64) as usize) * 3;
        let len = (cx1 - cx0) * 3;
        rgb[(row * w + cx0) * 3..(row * w + cx0) * 3 + len]
            .copy_from_slice(&img.pixels[src_start..src_start + len]);
    }
    let mask = rasterize_mask(
        &b.polygon,
        Point::new(win.x0 as f64, win.y0 as f64),
        win.width,
        win.height,
    );
    Ok(Chip {
        width: win.width,
        height: win.height,
        rgb,
        mask: mask.data,
        margin,
        building_id: b.id.clone(),
    })
}

const KEY_BUILDING: &str = "building_id";
const KEY_MARGIN: &str = "margin";

/// Encodes a chip as an RGBA PNG (alpha = mask); id and margin travel in iTXt chunks.
pub fn encode_chip(c: &Chip) -> Result<Vec<u8>, RasterError> {
    let mut rgba = Vec::with_capacity(c.pixel_count() * 4);
    for (px, &m) in c.rgb.chunks_exact(3).zip(&c.mask) {
        rgba.extend_from_slice(px);
        rgba.push(m);
    }
    let mut out = Vec::new();
    {
        let enc_err = |e: png::EncodingError| RasterError::Encode(e.to_string());
        let mut enc = png::Encoder::new(&mut out, c.width, c.height);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        enc.add_itxt_chunk(KEY_BUILDING.into(), c.building_id.clone())
            .map_err(enc_err)?;
        enc.add_itxt_chunk(KEY_MARGIN.into(), c.margin.to_string())
            .map_err(enc_err)?;
        let mut writer = enc.write_header().map_err(enc_err)?;
        writer.write_image_data(&rgba).map_err(enc_err)?;
        writer.finish().map_err(enc_err)?;
    }
    Ok(out)
}

type DecodedPng = (png::OutputInfo, Vec<u8>, Vec<(String, String)>);

fn decode_png(bytes: &[u8]) -> Result<DecodedPng, RasterError> {
    let dec_err = |e: png::DecodingError| RasterError::Decode(e.to_string());
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(dec_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RasterError::Decode("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(dec_err)?;
    buf.truncate(info.buffer_size());
    let text = reader
        .info()
        .utf8_text
        .iter()
        .map(|t| Ok((t.keyword.clone(), t.get_text().map_err(dec_err)?)))
        .collect::<Result<Vec<_>, RasterError>>()?;
    Ok((info, buf, text))
}

pub fn decode_chip(bytes: &[u8]) -> Result<Chip, RasterError> {
    let (info, buf, text) = decode_png(bytes)?;
    if info.color_type != png::ColorType::Rgba || info.bit_depth != png::BitDepth::Eight {
        return Err(RasterError::Decode(format!(
            "expected 8-bit RGBA, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let lookup = |key: &str| text.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
    let building_id = lookup(KEY_BUILDING).unwrap_or_default();
    let margin = match lookup(KEY_MARGIN) {
        Some(v) => v
            .parse()
            .map_err(|_| RasterError::Decode(format!("bad margin {v:?}")))?,
        None => 0,
    };
    let n = info.width as usize * info.height as usize;
    let mut rgb = Vec::with_capacity(n * 3);
    let mut mask = Vec::with_capacity(n);
    for px in buf.chunks_exact(4) {
        rgb.extend_from_slice(&px[..3]);
        if px[3] != 0 && px[3] != 255 {
            return Err(RasterError::Decode(format!("non-binary mask value {}", px[3])));
        }
        mask.push(px[3]);
    }
    Ok(Chip {
        width: info.width,
        height: info.height,
        rgb,
        mask,
        margin,
        building_id,
    })
}

/// Encodes an RGB image as PNG.
pub fn encode_rgb_png(img: &ImageRgb) -> Result<Vec<u8>, RasterError> {
    let enc_err = |e: png::EncodingError| RasterError::Encode(e.to_string());
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        let mut writer = enc.write_header().map_err(enc_err)?;
        writer.write_image_data(&img.pixels).map_err(enc_err)?;
        writer.finish().map_err(enc_err)?;
    }
    Ok(out)
}

/// Decodes an 8-bit RGB (or RGBA, alpha dropped) PNG map image.
pub fn decode_rgb_png(bytes: &[u8]) -> Result<ImageRgb, RasterError> {
    let (info, buf, _) = decode_png(bytes)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(RasterError::Decode(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let pixels = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        other => return Err(RasterError::Decode(format!("unsupported color type {other:?}"))),
    };
    ImageRgb::from_pixels(info.width, info.height, pixels)
}

pub fn read_rgb_png(path: &Path) -> Result<ImageRgb, RasterError> {
    decode_rgb_png(&std::fs::read(path)?)
}

/// Relative chip path inside a chip directory: `<map_id>/<building_id>.png`.
pub fn chip_file_name(map_id: u8, building_id: &str) -> String {
    format!("{map_id}/{building_id}.png")
}
