//! Image file I/O (binary PPM/PGM), depth-to-surface-normal encoding, input
//! standardization, geometric augmentation, and the on-disk dataset layout
//! `<root>/<class_name>/<sample_id>_rgb.ppm` + `<sample_id>_depth.pgm`
//! (class indices follow sorted class-name order).

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 16-bit depth map in millimeters; 0 marks a missing measurement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, values: Vec<u16>) -> Result<Self> {
        if width * height != values.len() {
            return Err(Error::shape(format!(
                "depth image {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(DepthImage {
            width,
            height,
            values,
        })
    }
}

/// Raw interleaved 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub enum ImageFile {
    Rgb(RgbImage),
    Depth(DepthImage),
}

/// One training sample: color and encoded-depth planes in `[0,1]` plus the
/// integer class id.
#[derive(Clone, Debug)]
pub struct RgbdSample<T: Scalar> {
    pub rgb: Tensor<T>,
    pub depth_encoded: Tensor<T>,
    pub label: usize,
}

// ---- netpbm ----

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    fn token(&mut self) -> Result<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("truncated netpbm header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad number in netpbm header".into()))
    }
}

/// Parses binary PPM (`P6`, maxval 255) into an RGB image or binary PGM
/// (`P5`, maxval 65535, big-endian samples) into a depth image.
pub fn read_image(path: &Path) -> Result<ImageFile> {
    let bytes = fs::read(path)?;
    parse_image(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn parse_image(bytes: &[u8]) -> Result<ImageFile> {
    let mut p = HeaderParser { bytes, pos: 0 };
    let magic = p.token()?.to_vec();
    let width = p.number()?;
    let height = p.number()?;
    let maxval = p.number()?;
    // Exactly one whitespace byte separates header and payload.
    if p.pos >= bytes.len() || !bytes[p.pos].is_ascii_whitespace() {
        return Err(Error::Format("missing header terminator".into()));
    }
    p.pos += 1;
    let payload = &bytes[p.pos..];
    match magic.as_slice() {
        b"P6" => {
            if maxval != 255 {
                return Err(Error::Format(format!("P6 maxval {maxval}, expected 255")));
            }
            let need = width * height * 3;
            if payload.len() < need {
                return Err(Error::Format(format!(
                    "truncated P6 payload: {} of {need} bytes",
                    payload.len()
                )));
            }
            Ok(ImageFile::Rgb(RgbImage {
                width,
                height,
                pixels: payload[..need].to_vec(),
            }))
        }
        b"P5" => {
            if maxval != 65535 {
                return Err(Error::Format(format!(
                    "P5 maxval {maxval}, expected 65535"
                )));
            }
            let need = width * height * 2;
            if payload.len() < need {
                return Err(Error::Format(format!(
                    "truncated P5 payload: {} of {need} bytes",
                    payload.len()
                )));
            }
            let values = payload[..need]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect();
            Ok(ImageFile::Depth(DepthImage {
                width,
                height,
                values,
            }))
        }
        other => Err(Error::Format(format!(
            "unsupported magic '{}'",
            String::from_utf8_lossy(other)
        ))),
    }
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_pgm16(path: &Path, depth: &DepthImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n65535\n", depth.width, depth.height).into_bytes();
    for v in &depth.values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// 8-bit RGB to a `3 x h x w` tensor scaled into `[0,1]`.
pub fn rgb_to_tensor<T: Scalar>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width, img.height);
    let mut data = vec![T::zero(); 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let src = (y * w + x) * 3;
            for c in 0..3 {
                data[c * h * w + y * w + x] = T::from_f64(img.pixels[src + c] as f64 / 255.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("sizes agree by construction")
}

/// `[0,1]` tensor back to 8-bit RGB with round-to-nearest.
pub fn tensor_to_rgb<T: Scalar>(t: &Tensor<T>) -> Result<RgbImage> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape(format!("expected 3 x h x w tensor, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = t.data();
    let mut pixels = vec![0u8; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = d[c * h * w + y * w + x].as_f64().clamp(0.0, 1.0);
                pixels[(y * w + x) * 3 + c] = (v * 255.0).round() as u8;
            }
        }
    }
    Ok(RgbImage {
        width: w,
        height: h,
        pixels,
    })
}

// ---- surface normals ----

/// Per-pixel unit surface normals from depth, encoded into `[0,1]` channels.
///
/// Gradients are central differences in mm per pixel with replicated borders;
/// neighbors that are holes (depth 0) fall back to the center value, so a
/// hole never contaminates the normals around it. The unnormalized normal is
/// `(-gu, -gv, 1)`; after unit normalization each channel maps through
/// `(n+1)/2`. Hole pixels encode the flat-facing `(0.5, 0.5, 1.0)`.
pub fn depth_to_normals<T: Scalar>(depth: &DepthImage) -> Result<Tensor<T>> {
    let (w, h) = (depth.width, depth.height);
    if w < 3 || h < 3 {
        return Err(Error::shape(format!(
            "depth_to_normals needs at least 3x3, got {w}x{h}"
        )));
    }
    let z = &depth.values;
    let at = |x: usize, y: usize| -> u16 { z[y * w + x] };
    let mut data = vec![T::zero(); 3 * h * w];
    let plane = h * w;
    for y in 0..h {
        for x in 0..w {
            let center = at(x, y);
            let (ex, ey, ez);
            if center == 0 {
                (ex, ey, ez) = (0.5, 0.5, 1.0);
            } else {
                let diff = |a: u16, b: u16, steps: f64| -> f64 {
                    // a: forward sample, b: backward sample; holes replicate center.
                    let av = if a == 0 { center } else { a } as f64;
                    let bv = if b == 0 { center } else { b } as f64;
                    if steps == 0.0 {
                        0.0
                    } else {
                        (av - bv) / steps
                    }
                };
                let xf = at((x + 1).min(w - 1), y);
                let xb = at(x.saturating_sub(1), y);
                let gu = diff(xf, xb, 2.0);
                let yf = at(x, (y + 1).min(h - 1));
                let yb = at(x, y.saturating_sub(1));
                let gv = diff(yf, yb, 2.0);
                let (nx, ny, nz) = (-gu, -gv, 1.0);
                let norm = (nx * nx + ny * ny + nz * nz).sqrt();
                (ex, ey, ez) = (
                    (nx / norm + 1.0) / 2.0,
                    (ny / norm + 1.0) / 2.0,
                    (nz / norm + 1.0) / 2.0,
                );
            }
            let i = y * w + x;
            data[i] = T::from_f64(ex);
            data[plane + i] = T::from_f64(ey);
            data[2 * plane + i] = T::from_f64(ez);
        }
    }
    Tensor::new(vec![3, h, w], data)
}

// ---- standardization ----

/// Per-channel `(x - mean) / std` over a `3 x h x w` image.
pub fn standardize<T: Scalar>(img: &Tensor<T>, mean: &[f64; 3], std: &[f64; 3]) -> Result<Tensor<T>> {
    if std.iter().any(|&s| s <= 0.0) {
        return Err(Error::numeric(format!("standardize: std {std:?} must be positive")));
    }
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape(format!("expected 3 x h x w tensor, got {s:?}")));
    }
    let plane = s[1] * s[2];
    let mut out = img.data().to_vec();
    for c in 0..3 {
        let (m, sd) = (T::from_f64(mean[c]), T::from_f64(std[c]));
        for v in out[c * plane..(c + 1) * plane].iter_mut() {
            *v = (*v - m) / sd;
        }
    }
    Tensor::new(s.to_vec(), out)
}

/// Inverse of [`standardize`].
pub fn unstandardize<T: Scalar>(
    img: &Tensor<T>,
    mean: &[f64; 3],
    std: &[f64; 3],
) -> Result<Tensor<T>> {
    if std.iter().any(|&s| s <= 0.0) {
        return Err(Error::numeric(format!("unstandardize: std {std:?} must be positive")));
    }
    let s = img.shape();
    let plane = s[1] * s[2];
    let mut out = img.data().to_vec();
    for c in 0..3 {
        let (m, sd) = (T::from_f64(mean[c]), T::from_f64(std[c]));
        for v in out[c * plane..(c + 1) * plane].iter_mut() {
            *v = *v * sd + m;
        }
    }
    Tensor::new(s.to_vec(), out)
}

/// Per-channel mean/std of a set of images. Constant channels clamp the
/// standard deviation to 1e-6 so standardization stays defined.
pub fn channel_stats<'a, T: Scalar + 'a>(
    images: impl Iterator<Item = &'a Tensor<T>> + Clone,
) -> ([f64; 3], [f64; 3]) {
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for img in images.clone() {
        let plane = img.numel() / 3;
        for c in 0..3 {
            for v in &img.data()[c * plane..(c + 1) * plane] {
                sum[c] += v.as_f64();
            }
        }
        count += plane;
    }
    let mean = [
        sum[0] / count as f64,
        sum[1] / count as f64,
        sum[2] / count as f64,
    ];
    let mut sq = [0.0f64; 3];
    for img in images {
        let plane = img.numel() / 3;
        for c in 0..3 {
            for v in &img.data()[c * plane..(c + 1) * plane] {
                let d = v.as_f64() - mean[c];
                sq[c] += d * d;
            }
        }
    }
    let std = [
        (sq[0] / count as f64).sqrt().max(1e-6),
        (sq[1] / count as f64).sqrt().max(1e-6),
        (sq[2] / count as f64).sqrt().max(1e-6),
    ];
    (mean, std)
}

// ---- augmentation ----

/// Geometric augmentation switches. Scale resamples by nearest neighbor and
/// center-crops/pads back to the original size; rotation draws from
/// {0, 90, 180, 270} degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub scale_range: Option<(f64, f64)>,
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: bool,
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            scale_range: None,
            hflip: false,
            vflip: false,
            rot90: false,
        }
    }

    pub fn standard() -> Self {
        AugmentConfig {
            scale_range: Some((0.9, 1.1)),
            hflip: true,
            vflip: true,
            rot90: true,
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.scale_range.is_none() && !self.hflip && !self.vflip && !self.rot90
    }
}

/// Padding used when a transform shrinks an image: black for RGB, the
/// flat-facing normal encoding for encoded depth.
const RGB_PAD: [f64; 3] = [0.0, 0.0, 0.0];
const NORMAL_PAD: [f64; 3] = [0.5, 0.5, 1.0];

struct GeomParams {
    scale: Option<f64>,
    hflip: bool,
    vflip: bool,
    quarter_turns: u8,
}

fn draw_params(rng: &mut ChaCha12Rng, cfg: &AugmentConfig) -> GeomParams {
    let scale = cfg
        .scale_range
        .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>());
    let hflip = cfg.hflip && rng.random::<bool>();
    let vflip = cfg.vflip && rng.random::<bool>();
    let quarter_turns = if cfg.rot90 {
        rng.random_range(0..4u8)
    } else {
        0
    };
    GeomParams {
        scale,
        hflip,
        vflip,
        quarter_turns,
    }
}

fn resample_nearest<T: Scalar>(src: &[T], h: usize, w: usize, nh: usize, nw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); 3 * nh * nw];
    for c in 0..3 {
        for y in 0..nh {
            let sy = (y * h) / nh;
            for x in 0..nw {
                let sx = (x * w) / nw;
                out[c * nh * nw + y * nw + x] = src[c * h * w + sy * w + sx];
            }
        }
    }
    out
}

fn apply_geom<T: Scalar>(img: &Tensor<T>, params: &GeomParams, pad: &[f64; 3]) -> Tensor<T> {
    let s = img.shape();
    let (h, w) = (s[1], s[2]);
    let mut data = img.data().to_vec();
    let (mut ch, mut cw) = (h, w);

    if let Some(f) = params.scale {
        let nh = ((h as f64 * f).round() as usize).max(1);
        let nw = ((w as f64 * f).round() as usize).max(1);
        let scaled = resample_nearest(&data, h, w, nh, nw);
        // Center-crop or center-pad back to h x w.
        let mut fitted = vec![T::zero(); 3 * h * w];
        for c in 0..3 {
            let pv = T::from_f64(pad[c]);
            fitted[c * h * w..(c + 1) * h * w].fill(pv);
        }
        let oy = nh as isize / 2 - h as isize / 2;
        let ox = nw as isize / 2 - w as isize / 2;
        for c in 0..3 {
            for y in 0..h {
                let sy = y as isize + oy;
                if sy < 0 || sy >= nh as isize {
                    continue;
                }
                for x in 0..w {
                    let sx = x as isize + ox;
                    if sx < 0 || sx >= nw as isize {
                        continue;
                    }
                    fitted[c * h * w + y * w + x] =
                        scaled[c * nh * nw + sy as usize * nw + sx as usize];
                }
            }
        }
        data = fitted;
    }

    if params.hflip {
        for c in 0..3 {
            for y in 0..ch {
                let row = &mut data[c * ch * cw + y * cw..c * ch * cw + (y + 1) * cw];
                row.reverse();
            }
        }
    }
    if params.vflip {
        for c in 0..3 {
            for y in 0..ch / 2 {
                for x in 0..cw {
                    data.swap(c * ch * cw + y * cw + x, c * ch * cw + (ch - 1 - y) * cw + x);
                }
            }
        }
    }
    for _ in 0..params.quarter_turns {
        // Clockwise quarter turn: out(y, x) = in(h-1-x, y); dims swap.
        let mut rot = vec![T::zero(); 3 * ch * cw];
        for c in 0..3 {
            for y in 0..cw {
                for x in 0..ch {
                    rot[c * ch * cw + y * ch + x] = data[c * ch * cw + (ch - 1 - x) * cw + y];
                }
            }
        }
        data = rot;
        std::mem::swap(&mut ch, &mut cw);
    }
    if ch != h || cw != w {
        // Non-square inputs rotated an odd number of turns resample back.
        data = resample_nearest(&data, ch, cw, h, w);
    }
    Tensor::new(vec![3, h, w], data).expect("geometry preserves element count")
}

/// Applies one sampled geometric transform identically to both planes; the
/// label never changes. Disabled config returns a bit-identical sample.
pub fn augment<T: Scalar>(
    sample: &RgbdSample<T>,
    rng: &mut ChaCha12Rng,
    cfg: &AugmentConfig,
) -> RgbdSample<T> {
    if cfg.is_disabled() {
        return sample.clone();
    }
    let params = draw_params(rng, cfg);
    RgbdSample {
        rgb: apply_geom(&sample.rgb, &params, &RGB_PAD),
        depth_encoded: apply_geom(&sample.depth_encoded, &params, &NORMAL_PAD),
        label: sample.label,
    }
}

// ---- dataset directory layout ----

pub struct LoadedDataset<T: Scalar> {
    pub samples: Vec<RgbdSample<T>>,
    pub class_names: Vec<String>,
}

/// Loads `<root>/<class_name>/<id>_rgb.ppm` + `<id>_depth.pgm` pairs; depth
/// maps pass through the surface-normal encoding.
pub fn load_dataset<T: Scalar>(root: &Path) -> Result<LoadedDataset<T>> {
    let mut class_dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::Data(format!("cannot read dataset root {}: {e}", root.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!(
            "no class directories under {}",
            root.display()
        )));
    }
    let class_names: Vec<String> = class_dirs
        .iter()
        .map(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect();

    let mut samples = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let mut rgb_files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.file_name()
                    .map(|n| n.to_string_lossy().ends_with("_rgb.ppm"))
                    .unwrap_or(false)
            })
            .collect();
        rgb_files.sort();
        for rgb_path in rgb_files {
            let name = rgb_path.file_name().unwrap().to_string_lossy().into_owned();
            let id = name.trim_end_matches("_rgb.ppm");
            let depth_path = dir.join(format!("{id}_depth.pgm"));
            let ImageFile::Rgb(rgb) = read_image(&rgb_path)? else {
                return Err(Error::Data(format!(
                    "{} is not a P6 color image",
                    rgb_path.display()
                )));
            };
            let ImageFile::Depth(depth) = read_image(&depth_path)? else {
                return Err(Error::Data(format!(
                    "{} is not a P5 depth image",
                    depth_path.display()
                )));
            };
            if (depth.width, depth.height) != (rgb.width, rgb.height) {
                return Err(Error::Data(format!(
                    "size mismatch between {} and {}",
                    rgb_path.display(),
                    depth_path.display()
                )));
            }
            samples.push(RgbdSample {
                rgb: rgb_to_tensor(&rgb),
                depth_encoded: depth_to_normals(&depth)?,
                label,
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::Data(format!(
            "no samples under {}",
            root.display()
        )));
    }
    Ok(LoadedDataset {
        samples,
        class_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{item_rng, Stream};

    fn flat_depth(w: usize, h: usize, mm: u16) -> DepthImage {
        DepthImage::new(w, h, vec![mm; w * h]).unwrap()
    }

    #[test]
    fn parse_ppm_pixels_scaled() {
        let bytes = b"P6\n3 1\n255\n\xff\x00\x00\x00\xff\x00\x00\x00\xff";
        let ImageFile::Rgb(img) = parse_image(bytes).unwrap() else {
            panic!("expected rgb")
        };
        let t: Tensor<f64> = rgb_to_tensor(&img);
        assert_eq!(t.shape(), &[3, 1, 3]);
        // Channel-major planes: red channel is (1,0,0) across the row, etc.
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn parse_pgm_big_endian_millimeters() {
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&1000u16.to_be_bytes());
        let ImageFile::Depth(d) = parse_image(&bytes).unwrap() else {
            panic!("expected depth")
        };
        assert_eq!(d.values, vec![1000]);
    }

    #[test]
    fn unsupported_magic_rejected() {
        let r = parse_image(b"P3\n1 1\n255\n0 0 0\n");
        assert!(matches!(r, Err(Error::Format(m)) if m.contains("unsupported magic")));
    }

    #[test]
    fn truncated_payload_rejected() {
        let r = parse_image(b"P6\n2 2\n255\nxx");
        assert!(matches!(r, Err(Error::Format(m)) if m.contains("truncated")));
    }

    #[test]
    fn file_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage {
            width: 2,
            height: 2,
            pixels: vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12],
        };
        let p = dir.path().join("x_rgb.ppm");
        write_ppm(&p, &img).unwrap();
        let b1 = fs::read(&p).unwrap();
        let ImageFile::Rgb(back) = read_image(&p).unwrap() else {
            panic!()
        };
        write_ppm(&p, &back).unwrap();
        assert_eq!(b1, fs::read(&p).unwrap());

        let d = flat_depth(3, 3, 1234);
        let q = dir.path().join("x_depth.pgm");
        write_pgm16(&q, &d).unwrap();
        let b1 = fs::read(&q).unwrap();
        let ImageFile::Depth(back) = read_image(&q).unwrap() else {
            panic!()
        };
        write_pgm16(&q, &back).unwrap();
        assert_eq!(b1, fs::read(&q).unwrap());
    }

    #[test]
    fn flat_plane_encodes_upright_normal() {
        let t: Tensor<f64> = depth_to_normals(&flat_depth(5, 4, 800)).unwrap();
        let plane = 20;
        for i in 0..plane {
            assert_eq!(t.data()[i], 0.5);
            assert_eq!(t.data()[plane + i], 0.5);
            assert_eq!(t.data()[2 * plane + i], 1.0);
        }
    }

    #[test]
    fn unit_slope_plane_matches_closed_form() {
        // Z(u,v) = u in mm: interior normals (-1, 0, 1)/sqrt(2).
        let (w, h) = (7, 5);
        let values: Vec<u16> = (0..h)
            .flat_map(|_| (0..w).map(|u| 1000 + u as u16))
            .collect();
        let d = DepthImage::new(w, h, values).unwrap();
        let t: Tensor<f64> = depth_to_normals(&d).unwrap();
        let plane = w * h;
        let s = 1.0 / 2.0f64.sqrt();
        let (ex, ey, ez) = ((1.0 - s) / 2.0, 0.5, (1.0 + s) / 2.0);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let i = y * w + x;
                assert!((t.data()[i] - ex).abs() < 1e-5);
                assert!((t.data()[plane + i] - ey).abs() < 1e-5);
                assert!((t.data()[2 * plane + i] - ez).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn hole_pixel_and_neighbors_stay_flat() {
        let mut d = flat_depth(5, 5, 900);
        d.values[2 * 5 + 2] = 0;
        let t: Tensor<f64> = depth_to_normals(&d).unwrap();
        let plane = 25;
        for i in 0..plane {
            assert_eq!(t.data()[i], 0.5, "x channel at {i}");
            assert_eq!(t.data()[plane + i], 0.5, "y channel at {i}");
            assert_eq!(t.data()[2 * plane + i], 1.0, "z channel at {i}");
        }
    }

    #[test]
    fn normals_unit_length_and_camera_facing() {
        let (w, h) = (6, 6);
        let values: Vec<u16> = (0..w * h).map(|i| 500 + ((i * 37) % 91) as u16).collect();
        let d = DepthImage::new(w, h, values).unwrap();
        let t: Tensor<f64> = depth_to_normals(&d).unwrap();
        let plane = w * h;
        for i in 0..plane {
            let nx = t.data()[i] * 2.0 - 1.0;
            let ny = t.data()[plane + i] * 2.0 - 1.0;
            let nz = t.data()[2 * plane + i] * 2.0 - 1.0;
            let len = (nx * nx + ny * ny + nz * nz).sqrt();
            assert!((len - 1.0).abs() < 1e-6);
            assert!(t.data()[2 * plane + i] >= 0.5);
        }
    }

    #[test]
    fn too_small_depth_rejected() {
        assert!(depth_to_normals::<f64>(&flat_depth(2, 5, 1)).is_err());
    }

    #[test]
    fn standardize_roundtrip() {
        let img = Tensor::<f64>::from_f64(
            &[3, 2, 2],
            &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.0, 0.25],
        )
        .unwrap();
        let mean = [0.4, 0.5, 0.6];
        let std = [0.2, 0.3, 0.4];
        let z = standardize(&img, &mean, &std).unwrap();
        let back = unstandardize(&z, &mean, &std).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(standardize(&img, &mean, &[0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn standardize_constant_at_mean_is_zero() {
        let img = Tensor::<f32>::full(&[3, 2, 2], 0.5);
        let z = standardize(&img, &[0.5, 0.5, 0.5], &[1.0, 1.0, 1.0]).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    fn sample_fixture() -> RgbdSample<f64> {
        let rgb = Tensor::from_f64(
            &[3, 2, 3],
            &(0..18).map(|i| i as f64 / 18.0).collect::<Vec<_>>(),
        )
        .unwrap();
        let depth = Tensor::from_f64(
            &[3, 2, 3],
            &(0..18).map(|i| (17 - i) as f64 / 18.0).collect::<Vec<_>>(),
        )
        .unwrap();
        RgbdSample {
            rgb,
            depth_encoded: depth,
            label: 3,
        }
    }

    #[test]
    fn disabled_augment_is_identity() {
        let s = sample_fixture();
        let mut rng = item_rng(0, Stream::Augment, 0);
        let out = augment(&s, &mut rng, &AugmentConfig::disabled());
        assert_eq!(out.rgb.data(), s.rgb.data());
        assert_eq!(out.depth_encoded.data(), s.depth_encoded.data());
        assert_eq!(out.label, 3);
    }

    #[test]
    fn double_horizontal_flip_restores() {
        let s = sample_fixture();
        let params = GeomParams {
            scale: None,
            hflip: true,
            vflip: false,
            quarter_turns: 0,
        };
        let once = apply_geom(&s.rgb, &params, &RGB_PAD);
        let twice = apply_geom(&once, &params, &RGB_PAD);
        assert_eq!(twice.data(), s.rgb.data());
    }

    #[test]
    fn quarter_turn_preserves_shape_contract() {
        let s = sample_fixture();
        let params = GeomParams {
            scale: None,
            hflip: false,
            vflip: false,
            quarter_turns: 1,
        };
        let out = apply_geom(&s.rgb, &params, &RGB_PAD);
        assert_eq!(out.shape(), s.rgb.shape());
    }

    #[test]
    fn seeded_augment_is_reproducible() {
        let s = sample_fixture();
        let cfg = AugmentConfig::standard();
        let a = augment(&s, &mut item_rng(9, Stream::Augment, 5), &cfg);
        let b = augment(&s, &mut item_rng(9, Stream::Augment, 5), &cfg);
        assert_eq!(a.rgb.data(), b.rgb.data());
        assert_eq!(a.depth_encoded.data(), b.depth_encoded.data());
        assert_eq!(a.rgb.shape(), s.rgb.shape());
        assert_eq!(a.label, s.label);
    }
}
