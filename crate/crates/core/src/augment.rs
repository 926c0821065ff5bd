//! Background augmentation for shop images.
//!
//! Shop photos sit on a near-uniform background, so the garment can be cut
//! out with a color threshold against the border color. The cut-out is then
//! pasted onto a background drawn per item and per epoch, followed by the
//! standard flip/rotate/shift/shear set. Every random choice is derived from
//! `(seed, item_id, epoch)` so parallel runs produce identical bytes.
//!
//! Output images have the background's size; resizing to a model's input
//! resolution is left to the consumer.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_TOLERANCE: u8 = 30;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("no foreground found: background is not neutral or image is blank")]
    EmptyForeground,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("background pool is empty")]
    EmptyPool,
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, AugmentError> {
        if width == 0 || height == 0 {
            return Err(AugmentError::Dimension("image must be at least 1x1".into()));
        }
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(AugmentError::Dimension(format!(
                "{}x{} image needs {} bytes, got {}",
                width,
                height,
                width as usize * height as usize * 3,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self::new(width.max(1), height.max(1), pixels).expect("filled image dimensions")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn fill_rect(&mut self, x: u32, y: u32, w: u32, h: u32, rgb: [u8; 3]) {
        for yy in y..(y + h).min(self.height) {
            for xx in x..(x + w).min(self.width) {
                self.set(xx, yy, rgb);
            }
        }
    }

    /// Reads PNG or JPEG (any color type is converted to RGB).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, AugmentError> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), AugmentError> {
        let buf = image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer size checked at construction");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Bilinear sample with edge replication.
    fn sample_bilinear(&self, x: f64, y: f64) -> [u8; 3] {
        let max_x = f64::from(self.width - 1);
        let max_y = f64::from(self.height - 1);
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as u32, y0 as u32);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (p00, p10, p01, p11) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
            let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
            out[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
        out
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        let w = self.width as usize;
        for (src, dst) in self.pixels.chunks_exact(w * 3).zip(out.pixels.chunks_exact_mut(w * 3)) {
            for x in 0..w {
                dst[x * 3..x * 3 + 3].copy_from_slice(&src[(w - 1 - x) * 3..(w - 1 - x) * 3 + 3]);
            }
        }
        out
    }

    fn crop(&self, b: BoundingBox) -> Self {
        let mut pixels = Vec::with_capacity(b.width as usize * b.height as usize * 3);
        for y in b.y..b.y + b.height {
            let start = self.offset(b.x, y);
            pixels.extend_from_slice(&self.pixels[start..start + b.width as usize * 3]);
        }
        Self { width: b.width, height: b.height, pixels }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Per-pixel garment mask; `true` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl ForegroundMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, AugmentError> {
        if bits.len() != width as usize * height as usize {
            return Err(AugmentError::Dimension(format!("{width}x{height} mask with {} bits", bits.len())));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![true; width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != u32::MAX).then(|| BoundingBox { x: x0, y: y0, width: x1 - x0 + 1, height: y1 - y0 + 1 })
    }

    fn crop(&self, b: BoundingBox) -> Self {
        let mut bits = Vec::with_capacity(b.width as usize * b.height as usize);
        for y in b.y..b.y + b.height {
            for x in b.x..b.x + b.width {
                bits.push(self.get(x, y));
            }
        }
        Self { width: b.width, height: b.height, bits }
    }

    /// 3×3 erosion; pixels outside the image count as background.
    fn eroded(&self) -> Self {
        let mut out = Self::empty(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(x, y, self.neighbourhood(x, y).all(|p| p.is_some_and(|(nx, ny)| self.get(nx, ny))));
            }
        }
        out
    }

    /// 3×3 dilation over in-bounds neighbours.
    fn dilated(&self) -> Self {
        let mut out = Self::empty(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(x, y, self.neighbourhood(x, y).flatten().any(|(nx, ny)| self.get(nx, ny)));
            }
        }
        out
    }

    fn neighbourhood(&self, x: u32, y: u32) -> impl Iterator<Item = Option<(u32, u32)>> + '_ {
        (-1i64..=1).flat_map(move |dy| {
            (-1i64..=1).map(move |dx| {
                let nx = i64::from(x) + dx;
                let ny = i64::from(y) + dy;
                (nx >= 0 && ny >= 0 && nx < i64::from(self.width) && ny < i64::from(self.height))
                    .then_some((nx as u32, ny as u32))
            })
        })
    }

    /// Largest 4-connected component; the first in raster order wins ties.
    fn largest_component(&self) -> Self {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut label = vec![usize::MAX; w * h];
        let mut best: Option<(usize, usize)> = None;
        let mut queue = VecDeque::new();
        let mut next = 0;
        for start in 0..w * h {
            if !self.bits[start] || label[start] != usize::MAX {
                continue;
            }
            let id = next;
            next += 1;
            let mut size = 0;
            label[start] = id;
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                size += 1;
                let (x, y) = (p % w, p / w);
                let mut visit = |q: usize| {
                    if self.bits[q] && label[q] == usize::MAX {
                        label[q] = id;
                        queue.push_back(q);
                    }
                };
                if x > 0 {
                    visit(p - 1);
                }
                if x + 1 < w {
                    visit(p + 1);
                }
                if y > 0 {
                    visit(p - w);
                }
                if y + 1 < h {
                    visit(p + w);
                }
            }
            if best.is_none_or(|(_, s)| size > s) {
                best = Some((id, size));
            }
        }
        let bits = match best {
            Some((id, _)) => label.iter().map(|&l| l == id).collect(),
            None => vec![false; w * h],
        };
        Self { width: self.width, height: self.height, bits }
    }
}

fn median(values: &mut [u8]) -> u8 {
    values.sort_unstable();
    values[values.len() / 2]
}

/// Estimated background color: per-channel median of the 1-pixel border.
pub fn border_color(image: &RasterImage) -> [u8; 3] {
    let (w, h) = (image.width, image.height);
    let mut channels: [Vec<u8>; 3] = Default::default();
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                let p = image.get(x, y);
                for c in 0..3 {
                    channels[c].push(p[c]);
                }
            }
        }
    }
    [median(&mut channels[0]), median(&mut channels[1]), median(&mut channels[2])]
}

/// Separates the garment from a neutral, single-color background.
///
/// Pixels whose largest channel difference from the border color exceeds
/// `tolerance` are candidates; a 3×3 opening removes speckle and only the
/// largest 4-connected region is kept. Dark shadows beyond the tolerance are
/// kept as foreground.
pub fn extract_foreground(image: &RasterImage, tolerance: u8) -> Result<ForegroundMask, AugmentError> {
    let bg = border_color(image);
    let bits = image
        .pixels
        .chunks_exact(3)
        .map(|p| (0..3).map(|c| p[c].abs_diff(bg[c])).max().unwrap_or(0) > tolerance)
        .collect();
    let raw = ForegroundMask { width: image.width, height: image.height, bits };
    let mask = raw.eroded().dilated().largest_component();
    if mask.count() == 0 {
        return Err(AugmentError::EmptyForeground);
    }
    Ok(mask)
}

/// Crops image and mask to the mask's bounding box.
pub fn cut_out(image: &RasterImage, mask: &ForegroundMask) -> Result<(RasterImage, ForegroundMask), AugmentError> {
    check_same_size(image, mask)?;
    let b = mask.bounding_box().ok_or(AugmentError::EmptyForeground)?;
    Ok((image.crop(b), mask.crop(b)))
}

fn check_same_size(image: &RasterImage, mask: &ForegroundMask) -> Result<(), AugmentError> {
    if image.width != mask.width || image.height != mask.height {
        return Err(AugmentError::Dimension(format!(
            "image {}x{} vs mask {}x{}",
            image.width, image.height, mask.width, mask.height
        )));
    }
    Ok(())
}

/// Pixel placement of a foreground on a background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub x: i64,
    pub y: i64,
    pub scale: f64,
}

impl Placement {
    pub fn at(x: i64, y: i64) -> Self {
        Self { x, y, scale: 1.0 }
    }
}

fn scaled_len(len: u32, scale: f64) -> u32 {
    ((f64::from(len) * scale).round() as u32).max(1)
}

/// Pastes the masked foreground onto a copy of `background`.
///
/// The mask is scaled with nearest neighbour, color with bilinear sampling.
/// Anything falling outside the background is clipped.
pub fn composite(
    foreground: &RasterImage,
    mask: &ForegroundMask,
    background: &RasterImage,
    placement: Placement,
) -> Result<RasterImage, AugmentError> {
    check_same_size(foreground, mask)?;
    if !(placement.scale > 0.0 && placement.scale.is_finite()) {
        return Err(AugmentError::InvalidPlan(format!("scale {}", placement.scale)));
    }
    let mut out = background.clone();
    let s = placement.scale;
    let (sw, sh) = (scaled_len(foreground.width, s), scaled_len(foreground.height, s));
    let exact = s == 1.0;
    for v in 0..sh {
        let ty = placement.y + i64::from(v);
        if ty < 0 || ty >= i64::from(background.height) {
            continue;
        }
        let my = ((f64::from(v) + 0.5) / s).floor().min(f64::from(mask.height - 1)) as u32;
        for u in 0..sw {
            let tx = placement.x + i64::from(u);
            if tx < 0 || tx >= i64::from(background.width) {
                continue;
            }
            let mx = ((f64::from(u) + 0.5) / s).floor().min(f64::from(mask.width - 1)) as u32;
            if !mask.get(mx, my) {
                continue;
            }
            let color = if exact {
                foreground.get(u, v)
            } else {
                foreground.sample_bilinear((f64::from(u) + 0.5) / s - 0.5, (f64::from(v) + 0.5) / s - 0.5)
            };
            out.set(tx as u32, ty as u32, color);
        }
    }
    Ok(out)
}

/// Per-image augmentation settings. Ranges are symmetric around zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPlan {
    pub seed: u64,
    pub epoch: u64,
    /// Horizontal flip with probability 0.5.
    pub flip: bool,
    /// Maximum absolute rotation, degrees.
    pub rotation_deg: f64,
    /// Maximum absolute shift as a fraction of width/height.
    pub shift_frac: f64,
    /// Maximum absolute horizontal shear factor.
    pub shear: f64,
    /// Foreground size as a fraction of the largest size that fits the background.
    pub scale_range: (f64, f64),
    pub background_pool: Vec<PathBuf>,
    pub use_backgrounds: bool,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            epoch: 0,
            flip: true,
            rotation_deg: 15.0,
            shift_frac: 0.1,
            shear: 0.1,
            scale_range: (0.5, 0.9),
            background_pool: Vec::new(),
            use_backgrounds: true,
        }
    }
}

impl AugmentPlan {
    /// Settings under which [`standard_augment`] is the identity.
    pub fn identity() -> Self {
        Self { flip: false, rotation_deg: 0.0, shift_frac: 0.0, shear: 0.0, use_backgrounds: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::InvalidPlan(m));
        for (name, v) in [("rotation", self.rotation_deg), ("shift", self.shift_frac), ("shear", self.shear)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} range {v} must be finite and non-negative"));
            }
        }
        if self.shift_frac > 1.0 {
            return bad(format!("shift fraction {} exceeds 1", self.shift_frac));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("scale range ({lo}, {hi}) must satisfy 0 < min <= max"));
        }
        if self.use_backgrounds && self.background_pool.is_empty() {
            return Err(AugmentError::EmptyPool);
        }
        Ok(())
    }
}

/// Parameters drawn for one application of [`standard_augment`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StandardDraw {
    pub flip: bool,
    pub angle_rad: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub shear: f64,
}

impl StandardDraw {
    pub fn draw(plan: &AugmentPlan, width: u32, height: u32, rng: &mut impl Rng) -> Self {
        let mut sym = |r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        let flip_coin = if plan.flip { sym(1.0) < 0.0 } else { false };
        Self {
            flip: flip_coin,
            angle_rad: sym(plan.rotation_deg).to_radians(),
            shift_x: sym(plan.shift_frac) * f64::from(width),
            shift_y: sym(plan.shift_frac) * f64::from(height),
            shear: sym(plan.shear),
        }
    }

    fn is_identity_warp(&self) -> bool {
        self.angle_rad == 0.0 && self.shift_x == 0.0 && self.shift_y == 0.0 && self.shear == 0.0
    }

    /// Flip, then rotation about the center, shift, and horizontal shear.
    pub fn apply(&self, image: &RasterImage) -> RasterImage {
        let src = if self.flip { image.flip_horizontal() } else { image.clone() };
        if self.is_identity_warp() {
            return src;
        }
        let (w, h) = (src.width, src.height);
        let cx = f64::from(w - 1) / 2.0;
        let cy = f64::from(h - 1) / 2.0;
        let (sin, cos) = self.angle_rad.sin_cos();
        let mut out = src.clone();
        for v in 0..h {
            for u in 0..w {
                // Invert q = shear(rot(p) + shift).
                let qx = f64::from(u) - cx;
                let qy = f64::from(v) - cy;
                let (ux, uy) = (qx - self.shear * qy, qy);
                let (rx, ry) = (ux - self.shift_x, uy - self.shift_y);
                let px = cos * rx + sin * ry;
                let py = -sin * rx + cos * ry;
                out.set(u, v, src.sample_bilinear(px + cx, py + cy));
            }
        }
        out
    }
}

/// Applies flip, rotation, shift and shear in that order.
pub fn standard_augment(image: &RasterImage, plan: &AugmentPlan, rng: &mut impl Rng) -> RasterImage {
    StandardDraw::draw(plan, image.width, image.height, rng).apply(image)
}

/// Generator for one `(seed, item, epoch)` and a named purpose.
pub fn item_rng(seed: u64, item_id: &str, epoch: u64, stream: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(epoch.to_le_bytes());
    h.update((stream.len() as u64).to_le_bytes());
    h.update(stream.as_bytes());
    h.update(item_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Placement relative to image sizes, resolved once the sizes are known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePlacement {
    /// Horizontal position of the foreground in `[0, 1]` of the free space.
    pub fx: f64,
    pub fy: f64,
    /// Fraction of the largest scale that fits the background.
    pub size: f64,
}

impl RelativePlacement {
    pub fn resolve(&self, fg_w: u32, fg_h: u32, bg_w: u32, bg_h: u32) -> Placement {
        let fit = (f64::from(bg_w) / f64::from(fg_w)).min(f64::from(bg_h) / f64::from(fg_h));
        let scale = fit * self.size;
        let sw = i64::from(scaled_len(fg_w, scale));
        let sh = i64::from(scaled_len(fg_h, scale));
        let x = (self.fx * (i64::from(bg_w) - sw) as f64).round() as i64;
        let y = (self.fy * (i64::from(bg_h) - sh) as f64).round() as i64;
        Placement { x, y, scale }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundChoice {
    pub index: usize,
    pub path: PathBuf,
    pub placement: RelativePlacement,
}

/// Background and placement for one item in one epoch.
pub fn epoch_background(item_id: &str, epoch: u64, plan: &AugmentPlan) -> Result<BackgroundChoice, AugmentError> {
    if plan.background_pool.is_empty() {
        return Err(AugmentError::EmptyPool);
    }
    let mut rng = item_rng(plan.seed, item_id, epoch, "background");
    let index = rng.gen_range(0..plan.background_pool.len());
    let fx = rng.gen_range(0.0..=1.0);
    let fy = rng.gen_range(0.0..=1.0);
    let (lo, hi) = plan.scale_range;
    let size = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    Ok(BackgroundChoice {
        index,
        path: plan.background_pool[index].clone(),
        placement: RelativePlacement { fx, fy, size },
    })
}

/// Image files in `dir` (png, jpg, jpeg), sorted by file name.
pub fn background_pool(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, AugmentError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(paths)
}

/// Full augmentation of one item for `plan.epoch`: cut-out, paste onto the
/// epoch's background (when enabled), then the standard transforms.
pub fn augment_item<F>(
    source: &RasterImage,
    item_id: &str,
    plan: &AugmentPlan,
    tolerance: u8,
    mut load_background: F,
) -> Result<RasterImage, AugmentError>
where
    F: FnMut(&Path) -> Result<RasterImage, AugmentError>,
{
    plan.validate()?;
    let base = if plan.use_backgrounds {
        let mask = extract_foreground(source, tolerance)?;
        let (fg, fg_mask) = cut_out(source, &mask)?;
        let choice = epoch_background(item_id, plan.epoch, plan)?;
        let bg = load_background(&choice.path)?;
        let placement = choice.placement.resolve(fg.width, fg.height, bg.width, bg.height);
        composite(&fg, &fg_mask, &bg, placement)?
    } else {
        source.clone()
    };
    let mut rng = item_rng(plan.seed, item_id, plan.epoch, "standard");
    Ok(standard_augment(&base, plan, &mut rng))
}
