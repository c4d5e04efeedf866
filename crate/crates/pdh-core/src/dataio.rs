//! Dataset ingestion: binary P6 portable-pixmap decoding, bilinear resize to
//! the 128x64 working geometry, Market-1501-style directory loading, and a
//! deterministic synthetic dataset generator for desk-scale verification.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const INGEST_HEIGHT: usize = 128;
pub const INGEST_WIDTH: usize = 64;

/// One pedestrian image: planar RGB pixels (channel-major, then rows) in
/// [0,1], identity label (None marks a distractor), camera label.
#[derive(Debug, Clone)]
pub struct PersonImage {
    pub pixels: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub identity: Option<u32>,
    pub camera: u32,
    pub source_id: String,
}

impl PersonImage {
    pub fn flat(&self) -> &[f64] {
        &self.pixels
    }
}

#[derive(Debug, Default)]
pub struct DatasetSplit {
    pub train: Vec<PersonImage>,
    pub query: Vec<PersonImage>,
    pub gallery: Vec<PersonImage>,
}

// -- P6 portable pixmap ------------------------------------------------------

/// Decode a binary P6 pixmap into planar RGB in [0,1]. Only 8-bit depth
/// (maxval <= 255) is supported.
pub fn read_ppm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let fail = |message: String, offset: usize| Error::Format {
        path: path.to_path_buf(),
        message,
        offset,
    };
    let mut pos = 0usize;

    let token = |pos: &mut usize| -> Result<Vec<u8>> {
        // skip whitespace and '#' comments
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(fail("unexpected end of header".into(), start));
        }
        Ok(bytes[start..*pos].to_vec())
    };

    let magic = token(&mut pos)?;
    if magic != b"P6" {
        return Err(fail(
            format!("expected P6 magic, found {:?}", String::from_utf8_lossy(&magic)),
            0,
        ));
    }
    let num = |pos: &mut usize, what: &str| -> Result<usize> {
        let t = token(pos)?;
        std::str::from_utf8(&t)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| fail(format!("invalid {what}"), *pos))
    };
    let width = num(&mut pos, "width")?;
    let height = num(&mut pos, "height")?;
    let maxval = num(&mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(fail("zero image dimension".into(), pos));
    }
    if maxval == 0 || maxval > 255 {
        return Err(fail(format!("unsupported maxval {maxval}"), pos));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fail("missing raster separator".into(), pos));
    }
    pos += 1;
    let need = width * height * 3;
    if bytes.len() - pos < need {
        return Err(fail(
            format!("raster truncated: need {need} bytes, have {}", bytes.len() - pos),
            pos,
        ));
    }
    let raster = &bytes[pos..pos + need];
    let mut pixels = vec![0.0f64; need];
    let plane = width * height;
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                pixels[c * plane + y * width + x] =
                    raster[(y * width + x) * 3 + c] as f64 / maxval as f64;
            }
        }
    }
    Ok((width, height, pixels))
}

pub fn read_ppm_file(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    read_ppm(&bytes, path)
}

/// Encode planar RGB in [0,1] as a binary P6 pixmap at 8-bit depth.
pub fn write_ppm(width: usize, height: usize, pixels: &[f64]) -> Result<Vec<u8>> {
    let plane = width * height;
    if pixels.len() != 3 * plane {
        return Err(Error::Dimension(format!(
            "{} pixel values for a {width}x{height} RGB image",
            pixels.len()
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let v = pixels[c * plane + y * width + x].clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn write_ppm_file(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    std::fs::write(path, write_ppm(width, height, pixels)?)?;
    Ok(())
}

// -- bilinear resize ---------------------------------------------------------

/// Bilinear resize of a planar multi-channel image, pixel-center aligned.
pub fn bilinear_resize(
    pixels: &[f64],
    channels: usize,
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
) -> Result<Vec<f64>> {
    if pixels.len() != channels * src_h * src_w {
        return Err(Error::Dimension("pixel buffer does not match source shape".into()));
    }
    if dst_h == 0 || dst_w == 0 {
        return Err(Error::Config("resize target must be positive".into()));
    }
    let src_plane = src_h * src_w;
    let dst_plane = dst_h * dst_w;
    let mut out = vec![0.0; channels * dst_plane];
    let sy = src_h as f64 / dst_h as f64;
    let sx = src_w as f64 / dst_w as f64;
    for y in 0..dst_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (src_h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let wy = fy - y0 as f64;
        for x in 0..dst_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (src_w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let wx = fx - x0 as f64;
            for c in 0..channels {
                let p = &pixels[c * src_plane..(c + 1) * src_plane];
                let top = p[y0 * src_w + x0] * (1.0 - wx) + p[y0 * src_w + x1] * wx;
                let bottom = p[y1 * src_w + x0] * (1.0 - wx) + p[y1 * src_w + x1] * wx;
                out[c * dst_plane + y * dst_w + x] = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    Ok(out)
}

// -- Market-1501-style directory loading ------------------------------------

/// Parse `<id>_c<cam>s<seq>_<frame>_<n>` from a filename stem.
/// Identity "-1" marks a distractor.
pub fn parse_market_stem(stem: &str) -> Option<(Option<u32>, u32)> {
    let mut fields = stem.split('_');
    let id_str = fields.next()?;
    let camseq = fields.next()?;
    let identity = if id_str == "-1" {
        None
    } else {
        Some(id_str.parse::<u32>().ok()?)
    };
    let rest = camseq.strip_prefix('c')?;
    let s_pos = rest.find('s')?;
    let camera = rest[..s_pos].parse::<u32>().ok()?;
    rest[s_pos + 1..].parse::<u32>().ok()?;
    if camera == 0 {
        return None;
    }
    Some((identity, camera))
}

fn load_image_dir(dir: &Path, skipped: &mut Vec<String>) -> Result<Vec<PersonImage>> {
    let mut names: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".ppm"))
        .collect();
    names.sort();
    let mut images = Vec::with_capacity(names.len());
    for name in names {
        let stem = name.rsplit_once('.').map(|(s, _)| s).unwrap_or(&name);
        let Some((identity, camera)) = parse_market_stem(stem) else {
            skipped.push(format!("{}: unparseable filename", dir.join(&name).display()));
            continue;
        };
        let path = dir.join(&name);
        let (w, h, pixels) = match read_ppm_file(&path) {
            Ok(v) => v,
            Err(e) => {
                skipped.push(format!("{}: {e}", path.display()));
                continue;
            }
        };
        let pixels = if (h, w) == (INGEST_HEIGHT, INGEST_WIDTH) {
            pixels
        } else {
            bilinear_resize(&pixels, 3, h, w, INGEST_HEIGHT, INGEST_WIDTH)?
        };
        images.push(PersonImage {
            pixels,
            height: INGEST_HEIGHT,
            width: INGEST_WIDTH,
            identity,
            camera,
            source_id: stem.to_string(),
        });
    }
    Ok(images)
}

/// Load a Market-1501-style directory: `bounding_box_train/`,
/// `bounding_box_test/`, `query/` of P6 pixmaps named by the standard
/// convention. Returns the split plus a skip report for unreadable files.
pub fn load_market_dir(root: &Path) -> Result<(DatasetSplit, Vec<String>)> {
    let mut skipped = Vec::new();
    let mut split = DatasetSplit::default();
    let mut any = false;
    for (sub, bucket) in [
        ("bounding_box_train", 0usize),
        ("bounding_box_test", 1),
        ("query", 2),
    ] {
        let dir = root.join(sub);
        if !dir.is_dir() {
            continue;
        }
        any = true;
        let images = load_image_dir(&dir, &mut skipped)?;
        match bucket {
            0 => split.train = images,
            1 => split.gallery = images,
            _ => split.query = images,
        }
    }
    if !any {
        return Err(Error::Ingestion(format!(
            "{} contains none of bounding_box_train/, bounding_box_test/, query/",
            root.display()
        )));
    }
    if split.train.is_empty() && split.gallery.is_empty() && split.query.is_empty() {
        return Err(Error::Ingestion(format!("no readable images under {}", root.display())));
    }
    Ok((split, skipped))
}

// -- synthetic dataset -------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub num_ids: usize,
    pub images_per_id_per_cam: usize,
    pub num_cams: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_ids < 2 {
            return Err(Error::Config("synthetic dataset needs at least 2 identities".into()));
        }
        if self.num_cams < 2 {
            return Err(Error::Config("synthetic dataset needs at least 2 cameras".into()));
        }
        if self.images_per_id_per_cam == 0 {
            return Err(Error::Config("need at least one image per identity per camera".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// splitmix64; used to derive one independent stream per image.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Box-Muller standard normal from two uniform draws.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = loop {
        let u = rng.gen::<f64>();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

const BAND_COUNT: usize = 4;
const BAND_HEIGHT: usize = INGEST_HEIGHT / BAND_COUNT;

/// Palette of 8 well-separated colors kept away from the [0,1] boundary.
fn palette(i: usize) -> [f64; 3] {
    [
        if i & 1 != 0 { 0.85 } else { 0.15 },
        if i & 2 != 0 { 0.85 } else { 0.15 },
        if i & 4 != 0 { 0.85 } else { 0.15 },
    ]
}

/// Identity color signature: one palette color per 32-row band, indexed by
/// the base-8 digits of the identity after an odd-multiplier bijection mod
/// 4096. The mixing keeps every band varying even across small id ranges
/// (raw digits would pin the upper bands to one color for ids < 512);
/// bijectivity keeps signatures pairwise distinct for ids < 4096.
pub fn identity_signature(identity: usize) -> [[f64; 3]; BAND_COUNT] {
    let mixed = identity.wrapping_mul(1357) & 0xfff;
    let mut bands = [[0.0; 3]; BAND_COUNT];
    for (j, band) in bands.iter_mut().enumerate() {
        *band = palette((mixed >> (3 * j)) & 7);
    }
    bands
}

/// Fixed per-camera brightness transform: v -> clamp(scale*v + offset + tint).
fn camera_transform(camera: u32, channel: usize, v: f64) -> f64 {
    const SCALE: [f64; 5] = [1.0, 0.72, 1.12, 0.85, 1.05];
    const OFFSET: [f64; 5] = [0.0, 0.18, -0.06, 0.10, -0.03];
    let k = ((camera - 1) as usize) % 5;
    let tint = ((((camera as usize) * 5 + channel * 3) % 7) as f64 - 3.0) * 0.02;
    (SCALE[k] * v + OFFSET[k] + tint).clamp(0.0, 1.0)
}

fn synth_image(config: &SynthConfig, identity: usize, camera: u32, frame: usize) -> PersonImage {
    let bands = identity_signature(identity);
    let plane = INGEST_HEIGHT * INGEST_WIDTH;
    let mut pixels = vec![0.0; 3 * plane];
    let stream = mix(config.seed
        ^ mix(identity as u64)
        ^ mix((camera as u64) << 24)
        ^ mix((frame as u64) << 48));
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    for y in 0..INGEST_HEIGHT {
        let band = bands[(y / BAND_HEIGHT).min(BAND_COUNT - 1)];
        for x in 0..INGEST_WIDTH {
            for c in 0..3 {
                let base = camera_transform(camera, c, band[c]);
                let v = if config.noise_sigma > 0.0 {
                    base + config.noise_sigma * gaussian(&mut rng)
                } else {
                    base
                };
                pixels[c * plane + y * INGEST_WIDTH + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    PersonImage {
        pixels,
        height: INGEST_HEIGHT,
        width: INGEST_WIDTH,
        identity: Some(identity as u32),
        camera,
        source_id: format!("{identity:04}_c{camera}s1_{frame:06}_00"),
    }
}

/// Deterministic synthetic dataset. The first half of the identities form the
/// training set; for the rest, frame 0 of each (identity, camera) is a query
/// and the remaining frames form the gallery (frame 0 doubles as gallery when
/// only one frame exists).
pub fn synth_dataset(config: &SynthConfig) -> Result<DatasetSplit> {
    config.validate()?;
    let train_ids = config.num_ids / 2;
    let mut split = DatasetSplit::default();
    for id in 0..config.num_ids {
        for cam in 1..=config.num_cams as u32 {
            for frame in 0..config.images_per_id_per_cam {
                let img = synth_image(config, id, cam, frame);
                if id < train_ids {
                    split.train.push(img);
                } else if frame == 0 {
                    if config.images_per_id_per_cam == 1 {
                        split.gallery.push(img.clone());
                    }
                    split.query.push(img);
                } else {
                    split.gallery.push(img);
                }
            }
        }
    }
    Ok(split)
}

/// Write a split to a Market-1501-style directory of P6 pixmaps.
pub fn write_market_dir(root: &Path, split: &DatasetSplit) -> Result<()> {
    for (sub, images) in [
        ("bounding_box_train", &split.train),
        ("bounding_box_test", &split.gallery),
        ("query", &split.query),
    ] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir)?;
        for img in images.iter() {
            let path = dir.join(format!("{}.ppm", img.source_id));
            write_ppm_file(&path, img.width, img.height, &img.pixels)?;
        }
    }
    Ok(())
}
