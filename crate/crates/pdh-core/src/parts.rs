//! Horizontal part partitioning, per-part training orchestration, and
//! per-part code generation with concatenation.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::dataio::PersonImage;
use crate::error::{Error, Result};
use crate::hamcode::{binarize, BitCode};
use crate::netcore::{default_conv_arch, mlp_arch, Dims, HashNet, LayerSpec};
use crate::triplet::{train_hashnet, LossReport, TrainConfig, TrainSet};

/// One horizontal strip; width always equals the scheme width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Strip {
    pub row_offset: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionScheme {
    pub name: String,
    pub image_height: usize,
    pub image_width: usize,
    pub strips: Vec<Strip>,
}

impl PartitionScheme {
    pub fn new(name: &str, height: usize, width: usize, strips: Vec<Strip>) -> Result<Self> {
        if strips.is_empty() {
            return Err(Error::Config("partition scheme needs at least one strip".into()));
        }
        let mut last_offset = 0;
        for (k, s) in strips.iter().enumerate() {
            if s.height == 0 || s.row_offset + s.height > height {
                return Err(Error::Config(format!(
                    "strip {k} ({}, {}) exceeds image height {height}",
                    s.row_offset, s.height
                )));
            }
            if k > 0 && s.row_offset < last_offset {
                return Err(Error::Config("strips must be ordered top to bottom".into()));
            }
            last_offset = s.row_offset;
        }
        Ok(PartitionScheme {
            name: name.to_string(),
            image_height: height,
            image_width: width,
            strips,
        })
    }

    /// Degenerate single-strip scheme covering the whole image.
    pub fn whole(height: usize, width: usize) -> Self {
        PartitionScheme {
            name: "WHOLE".into(),
            image_height: height,
            image_width: width,
            strips: vec![Strip { row_offset: 0, height }],
        }
    }

    pub fn num_parts(&self) -> usize {
        self.strips.len()
    }

    pub fn equal_strips(&self) -> bool {
        self.strips.iter().all(|s| s.height == self.strips[0].height)
    }
}

/// The built-in 128x64 partitioning variants. Heights per variant:
/// EQL3 42/42/42, UnEQL3 24/56/48, Overlap3 56x3, EQL4 32x4,
/// UnEQL4 28/40/40/20, Overlap4 48x4, EQL5 25x5.
pub fn builtin_scheme(name: &str) -> Result<PartitionScheme> {
    const H: usize = 128;
    const W: usize = 64;
    let equal = |m: usize| -> Vec<Strip> {
        let h = H / m;
        (0..m).map(|k| Strip { row_offset: k * h, height: h }).collect()
    };
    let contiguous = |heights: &[usize]| -> Vec<Strip> {
        let mut offset = 0;
        heights
            .iter()
            .map(|&h| {
                let s = Strip { row_offset: offset, height: h };
                offset += h;
                s
            })
            .collect()
    };
    let overlap = |m: usize, h: usize| -> Vec<Strip> {
        (0..m)
            .map(|k| Strip {
                row_offset: ((k * (H - h)) as f64 / (m - 1) as f64).round() as usize,
                height: h,
            })
            .collect()
    };
    let strips = match name {
        "WHOLE" => return Ok(PartitionScheme::whole(H, W)),
        "EQL3" => equal(3),
        "EQL4" => equal(4),
        "EQL5" => equal(5),
        "UnEQL3" => contiguous(&[24, 56, 48]),
        "UnEQL4" => contiguous(&[28, 40, 40, 20]),
        "Overlap3" => overlap(3, 56),
        "Overlap4" => overlap(4, 48),
        _ => {
            return Err(Error::Config(format!(
                "unknown partition scheme {name:?} (expected WHOLE, EQL3, UnEQL3, Overlap3, EQL4, UnEQL4, Overlap4 or EQL5)"
            )))
        }
    };
    PartitionScheme::new(name, H, W, strips)
}

pub const BUILTIN_SCHEMES: &[&str] = &[
    "WHOLE", "EQL3", "UnEQL3", "Overlap3", "EQL4", "UnEQL4", "Overlap4", "EQL5",
];

/// Slice a planar RGB image into per-strip planar buffers, pixels unmodified.
pub fn extract_parts(image: &PersonImage, scheme: &PartitionScheme) -> Result<Vec<Vec<f64>>> {
    if image.height != scheme.image_height || image.width != scheme.image_width {
        return Err(Error::Ingestion(format!(
            "image {} is {}x{}, scheme {} expects {}x{}",
            image.source_id, image.height, image.width, scheme.name, scheme.image_height,
            scheme.image_width
        )));
    }
    let plane = image.height * image.width;
    let w = image.width;
    let mut parts = Vec::with_capacity(scheme.num_parts());
    for strip in &scheme.strips {
        let mut buf = Vec::with_capacity(3 * strip.height * w);
        for c in 0..3 {
            let start = c * plane + strip.row_offset * w;
            buf.extend_from_slice(&image.pixels[start..start + strip.height * w]);
        }
        parts.push(buf);
    }
    Ok(parts)
}

/// Network architecture applied per part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Conv,
    Mlp { hidden: usize },
}

impl Arch {
    pub fn specs(&self, channels: usize, height: usize, width: usize, bits: usize) -> Vec<LayerSpec> {
        match *self {
            Arch::Conv => default_conv_arch(channels, height, width, bits),
            Arch::Mlp { hidden } => mlp_arch(channels, height, width, hidden, bits),
        }
    }

    pub fn tag(&self) -> String {
        match *self {
            Arch::Conv => "conv".into(),
            Arch::Mlp { hidden } => format!("mlp:{hidden}"),
        }
    }

    pub fn parse(s: &str) -> Result<Arch> {
        if s == "conv" {
            return Ok(Arch::Conv);
        }
        if s == "mlp" {
            return Ok(Arch::Mlp { hidden: 32 });
        }
        if let Some(h) = s.strip_prefix("mlp:") {
            let hidden = h
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad mlp hidden size {h:?}")))?;
            if hidden == 0 {
                return Err(Error::Config("mlp hidden size must be positive".into()));
            }
            return Ok(Arch::Mlp { hidden });
        }
        Err(Error::Config(format!("unknown architecture {s:?} (expected conv, mlp or mlp:N)")))
    }
}

#[derive(Debug, Clone)]
pub struct BankConfig {
    /// hash bits per part
    pub bits: usize,
    pub arch: Arch,
    pub share_weights: bool,
    pub base_seed: u64,
    pub train: TrainConfig,
}

/// A frozen set of trained per-part networks plus the scheme geometry.
pub struct PartModelBank {
    pub scheme: PartitionScheme,
    /// one net per strip, or a single net when weights are shared
    pub nets: Vec<HashNet>,
    pub bits: usize,
    pub share_weights: bool,
    pub arch: Arch,
    pub base_seed: u64,
}

impl PartModelBank {
    pub fn code_bits(&self) -> usize {
        self.scheme.num_parts() * self.bits
    }

    fn net_for_part(&self, k: usize) -> &HashNet {
        if self.share_weights {
            &self.nets[0]
        } else {
            &self.nets[k]
        }
    }

    /// Concatenated relaxed code f_H per part, length M*bits, values in (0,1).
    pub fn relaxed_code(&self, image: &PersonImage) -> Result<Vec<f64>> {
        let parts = extract_parts(image, &self.scheme)?;
        let mut out = Vec::with_capacity(self.code_bits());
        for (k, part) in parts.iter().enumerate() {
            let net = self.net_for_part(k);
            let batch = crate::netcore::Tensor::new(vec![1, part.len()], part.clone())?;
            let relaxed = net.forward(&batch)?;
            out.extend_from_slice(relaxed.data());
        }
        Ok(out)
    }

    /// Binarized concatenated code, bit k*bits+i from part k.
    pub fn encode_image(&self, image: &PersonImage) -> Result<BitCode> {
        binarize(&self.relaxed_code(image)?)
    }

    // -- bank checkpoint -----------------------------------------------------

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        manifest.push_str(&format!("scheme={}\n", self.scheme.name));
        manifest.push_str(&format!("height={}\n", self.scheme.image_height));
        manifest.push_str(&format!("width={}\n", self.scheme.image_width));
        let strips: Vec<String> = self
            .scheme
            .strips
            .iter()
            .map(|s| format!("{}:{}", s.row_offset, s.height))
            .collect();
        manifest.push_str(&format!("strips={}\n", strips.join(";")));
        manifest.push_str(&format!("bits={}\n", self.bits));
        manifest.push_str(&format!("arch={}\n", self.arch.tag()));
        manifest.push_str(&format!("base_seed={}\n", self.base_seed));
        manifest.push_str(&format!("share_weights={}\n", u8::from(self.share_weights)));
        manifest.push_str(&format!("nets={}\n", self.nets.len()));
        let mut f = std::fs::File::create(dir.join("manifest.txt"))?;
        f.write_all(manifest.as_bytes())?;
        for (k, net) in self.nets.iter().enumerate() {
            net.save_file(&dir.join(format!("part_{k}.pdhnet")))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.txt");
        let text = std::fs::read_to_string(&manifest_path)?;
        let mut kv = std::collections::HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                path: manifest_path.clone(),
                message: format!("expected key=value, found {line:?}"),
                offset: 0,
            })?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |key: &str| -> Result<&String> {
            kv.get(key).ok_or_else(|| Error::Format {
                path: manifest_path.clone(),
                message: format!("missing manifest key {key}"),
                offset: 0,
            })
        };
        let parse_usize = |key: &str| -> Result<usize> {
            get(key)?.parse().map_err(|_| Error::Format {
                path: manifest_path.clone(),
                message: format!("bad integer for {key}"),
                offset: 0,
            })
        };
        let height = parse_usize("height")?;
        let width = parse_usize("width")?;
        let mut strips = Vec::new();
        for item in get("strips")?.split(';') {
            let (o, h) = item.split_once(':').ok_or_else(|| Error::Format {
                path: manifest_path.clone(),
                message: format!("bad strip entry {item:?}"),
                offset: 0,
            })?;
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|_| Error::Format {
                    path: manifest_path.clone(),
                    message: format!("bad strip entry {item:?}"),
                    offset: 0,
                })
            };
            strips.push(Strip { row_offset: parse(o)?, height: parse(h)? });
        }
        let scheme = PartitionScheme::new(get("scheme")?, height, width, strips)?;
        let bits = parse_usize("bits")?;
        let arch = Arch::parse(get("arch")?)?;
        let base_seed: u64 = get("base_seed")?.parse().map_err(|_| Error::Format {
            path: manifest_path.clone(),
            message: "bad base_seed".into(),
            offset: 0,
        })?;
        let share_weights = get("share_weights")?.as_str() == "1";
        let n_nets = parse_usize("nets")?;
        let mut nets = Vec::with_capacity(n_nets);
        for k in 0..n_nets {
            nets.push(HashNet::load_file(&dir.join(format!("part_{k}.pdhnet")))?);
        }
        let bank = PartModelBank { scheme, nets, bits, share_weights, arch, base_seed };
        bank.validate()?;
        Ok(bank)
    }

    fn validate(&self) -> Result<()> {
        let expect = if self.share_weights { 1 } else { self.scheme.num_parts() };
        if self.nets.len() != expect {
            return Err(Error::Config(format!(
                "bank has {} nets, scheme {} expects {expect}",
                self.nets.len(),
                self.scheme.name
            )));
        }
        for (k, strip) in self.scheme.strips.iter().enumerate() {
            let net = self.net_for_part(k);
            let want = Dims::Spatial {
                channels: 3,
                height: strip.height,
                width: self.scheme.image_width,
            };
            if net.input_dims().flat_len() != want.flat_len() {
                return Err(Error::Config(format!(
                    "net for part {k} expects {} inputs, strip needs {}",
                    net.input_dims().flat_len(),
                    want.flat_len()
                )));
            }
            if net.hash_bits() != self.bits {
                return Err(Error::Config(format!(
                    "net for part {k} emits {} bits, bank declares {}",
                    net.hash_bits(),
                    self.bits
                )));
            }
        }
        Ok(())
    }
}

/// Train one network per strip (in parallel, seeded base_seed + k), or a
/// single shared network over the union of all part subsets.
pub fn train_part_bank(
    images: &[PersonImage],
    scheme: &PartitionScheme,
    config: &BankConfig,
) -> Result<(PartModelBank, Vec<Vec<LossReport>>)> {
    config.train.validate()?;
    if config.bits == 0 {
        return Err(Error::Config("per-part bit count must be positive".into()));
    }
    if config.share_weights && !scheme.equal_strips() {
        return Err(Error::Config(format!(
            "share_weights requires equal strip sizes, scheme {} has unequal strips",
            scheme.name
        )));
    }
    let labels: Vec<u32> = images
        .iter()
        .map(|img| {
            img.identity.ok_or_else(|| {
                Error::InfeasibleSampling(format!(
                    "distractor image {} in training set",
                    img.source_id
                ))
            })
        })
        .collect::<Result<_>>()?;

    let mut per_part: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(images.len()); scheme.num_parts()];
    for img in images {
        for (k, part) in extract_parts(img, scheme)?.into_iter().enumerate() {
            per_part[k].push(part);
        }
    }

    let width = scheme.image_width;
    if config.share_weights {
        let strip_h = scheme.strips[0].height;
        let mut net = HashNet::new(
            Dims::Spatial { channels: 3, height: strip_h, width },
            config.arch.specs(3, strip_h, width, config.bits),
            config.base_seed,
        )?;
        let union: Vec<Vec<f64>> = per_part.into_iter().flatten().collect();
        let union_labels: Vec<u32> = (0..scheme.num_parts())
            .flat_map(|_| labels.iter().copied())
            .collect();
        let set = TrainSet::new(&union, &union_labels)?;
        let history = train_hashnet(&mut net, &set, &config.train)?;
        let bank = PartModelBank {
            scheme: scheme.clone(),
            nets: vec![net],
            bits: config.bits,
            share_weights: true,
            arch: config.arch,
            base_seed: config.base_seed,
        };
        return Ok((bank, vec![history]));
    }

    let results: Vec<Result<(HashNet, Vec<LossReport>)>> = scheme
        .strips
        .par_iter()
        .enumerate()
        .map(|(k, strip)| {
            let mut net = HashNet::new(
                Dims::Spatial { channels: 3, height: strip.height, width },
                config.arch.specs(3, strip.height, width, config.bits),
                config.base_seed + k as u64,
            )?;
            let part_config = TrainConfig {
                seed: config.train.seed + k as u64,
                ..config.train
            };
            let set = TrainSet::new(&per_part[k], &labels)?;
            let history = train_hashnet(&mut net, &set, &part_config)?;
            Ok((net, history))
        })
        .collect();

    let mut nets = Vec::with_capacity(scheme.num_parts());
    let mut histories = Vec::with_capacity(scheme.num_parts());
    for r in results {
        let (net, history) = r?;
        nets.push(net);
        histories.push(history);
    }
    let bank = PartModelBank {
        scheme: scheme.clone(),
        nets,
        bits: config.bits,
        share_weights: false,
        arch: config.arch,
        base_seed: config.base_seed,
    };
    Ok((bank, histories))
}
