//! Command-line pipeline: synth, train, encode, eval, bench.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use pdh_core::dataio::{
    load_market_dir, parse_market_stem, synth_dataset, write_market_dir, DatasetSplit,
    PersonImage, SynthConfig,
};
use pdh_core::error::{Error, Result};
use pdh_core::evalkit::{
    evaluate, pool_queries, read_relaxed_file, write_relaxed_file, EvalReport, GalleryRecord,
    PoolMode, RelaxedSet,
};
use pdh_core::hamcode::{
    bench_search, binarize, read_codes_file, write_codes_file, BitCode, CodeIndex,
};
use pdh_core::parts::{builtin_scheme, train_part_bank, Arch, BankConfig, PartModelBank};
use pdh_core::triplet::{loss_history_csv, TrainConfig};

#[derive(Parser)]
#[command(name = "pdh", about = "Part-based deep hashing for person re-identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic dataset as a Market-style directory
    Synth(SynthArgs),
    /// Train a part model bank and write its checkpoint
    Train(TrainArgs),
    /// Encode query and gallery sets into code files
    Encode(EncodeArgs),
    /// Evaluate query codes against gallery codes (CMC and mAP)
    Eval(EvalArgs),
    /// Benchmark packed-Hamming retrieval against unpacked Euclidean
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (bounding_box_train/, bounding_box_test/, query/)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    ids: usize,
    /// Images per identity per camera
    #[arg(long = "per-cam", default_value_t = 4)]
    per_cam: usize,
    #[arg(long, default_value_t = 2)]
    cams: usize,
    #[arg(long, default_value_t = 0.08)]
    sigma: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Market-style dataset directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Inline synthetic dataset, e.g. "ids=50,per=4,cams=2,sigma=0.08,seed=42"
    #[arg(long)]
    synth: Option<String>,
    #[arg(long)]
    scheme: Option<String>,
    /// Hash bits per part
    #[arg(long)]
    bits: Option<usize>,
    /// Network architecture: conv, mlp or mlp:N
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "weight-decay")]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "share-weights")]
    share_weights: bool,
    /// Bank checkpoint output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    /// Bank checkpoint directory
    #[arg(long)]
    bank: PathBuf,
    /// Market-style dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Output directory for query/gallery code files
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "query-codes")]
    query_codes: PathBuf,
    #[arg(long = "gallery-codes")]
    gallery_codes: PathBuf,
    /// Relaxed query codes (PDHRELX1); required for avg/max pooling.
    /// Defaults to query.pdhrelx next to the query code file.
    #[arg(long)]
    relaxed: Option<PathBuf>,
    /// single, avg or max
    #[arg(long, default_value = "single")]
    pooling: String,
    /// Report output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Gallery size
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    /// Code length in bits
    #[arg(long, default_value_t = 2048)]
    bits: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Optional CSV output path (timings also print to stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Encode(args) => cmd_encode(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

// -- config file handling ----------------------------------------------------

const CONFIG_KEYS: &[&str] = &[
    "scheme", "bits", "arch", "lr", "batch", "epochs", "weight_decay", "seed",
    "share_weights", "data", "synth", "out",
];

fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected key=value, found {line:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        let k = k.trim();
        if !CONFIG_KEYS.contains(&k) {
            return Err(Error::Config(format!(
                "{}:{}: unknown config key {k:?}",
                path.display(),
                lineno + 1
            )));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn parse_from_config<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| Error::Config(format!("bad value {v:?} for config key {key}"))),
    }
}

fn parse_synth_spec(spec: &str) -> Result<SynthConfig> {
    let mut config = SynthConfig {
        num_ids: 50,
        images_per_id_per_cam: 4,
        num_cams: 2,
        noise_sigma: 0.08,
        seed: 42,
    };
    for item in spec.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("bad synth spec item {item:?}")))?;
        let bad = || Error::Config(format!("bad synth spec value {v:?} for {k}"));
        match k.trim() {
            "ids" => config.num_ids = v.parse().map_err(|_| bad())?,
            "per" => config.images_per_id_per_cam = v.parse().map_err(|_| bad())?,
            "cams" => config.num_cams = v.parse().map_err(|_| bad())?,
            "sigma" => config.noise_sigma = v.parse().map_err(|_| bad())?,
            "seed" => config.seed = v.parse().map_err(|_| bad())?,
            other => return Err(Error::Config(format!("unknown synth spec key {other:?}"))),
        }
    }
    Ok(config)
}

// -- subcommands -------------------------------------------------------------

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        num_ids: args.ids,
        images_per_id_per_cam: args.per_cam,
        num_cams: args.cams,
        noise_sigma: args.sigma,
        seed: args.seed,
    };
    let split = synth_dataset(&config)?;
    write_market_dir(&args.out, &split)?;
    println!(
        "wrote {} train, {} query, {} gallery images to {}",
        split.train.len(),
        split.query.len(),
        split.gallery.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };

    let scheme_name = args
        .scheme
        .or_else(|| file.get("scheme").cloned())
        .unwrap_or_else(|| "EQL4".into());
    let bits = match args.bits {
        Some(b) => b,
        None => parse_from_config(&file, "bits")?.unwrap_or(32),
    };
    let arch_tag = args
        .arch
        .or_else(|| file.get("arch").cloned())
        .unwrap_or_else(|| "conv".into());
    let train = TrainConfig {
        learning_rate: args
            .lr
            .or(parse_from_config(&file, "lr")?)
            .unwrap_or(0.05),
        batch_size: args
            .batch
            .or(parse_from_config(&file, "batch")?)
            .unwrap_or(32),
        epochs: args
            .epochs
            .or(parse_from_config(&file, "epochs")?)
            .unwrap_or(30),
        weight_decay: args
            .weight_decay
            .or(parse_from_config(&file, "weight_decay")?)
            .unwrap_or(1e-4),
        seed: args.seed.or(parse_from_config(&file, "seed")?).unwrap_or(42),
        ..Default::default()
    };
    let share_weights =
        args.share_weights || file.get("share_weights").map(String::as_str) == Some("1");
    let out = args
        .out
        .or_else(|| file.get("out").map(PathBuf::from))
        .ok_or_else(|| Error::Config("no output directory (--out or out=...)".into()))?;

    // validate everything before any work starts
    let scheme = builtin_scheme(&scheme_name)?;
    let arch = Arch::parse(&arch_tag)?;
    train.validate()?;
    let config = BankConfig {
        bits,
        arch,
        share_weights,
        base_seed: train.seed,
        train,
    };

    let split = load_train_dataset(&args.data, &args.synth, &file)?;
    if split.train.is_empty() {
        return Err(Error::Ingestion("dataset has no training images".into()));
    }

    let t0 = Instant::now();
    let (bank, histories) = train_part_bank(&split.train, &scheme, &config)?;

    let created = !out.exists();
    let write_all = || -> Result<()> {
        bank.save_dir(&out)?;
        for (k, history) in histories.iter().enumerate() {
            std::fs::write(out.join(format!("part_{k}_loss.csv")), loss_history_csv(history))?;
        }
        Ok(())
    };
    if let Err(e) = write_all() {
        // leave no partial checkpoint behind
        if created {
            let _ = std::fs::remove_dir_all(&out);
        }
        return Err(e);
    }
    println!(
        "trained {} nets ({} bits/part, scheme {}) on {} images in {:.1}s -> {}",
        bank.nets.len(),
        bank.bits,
        bank.scheme.name,
        split.train.len(),
        t0.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn load_train_dataset(
    data: &Option<PathBuf>,
    synth: &Option<String>,
    file: &BTreeMap<String, String>,
) -> Result<DatasetSplit> {
    let data = data.clone().or_else(|| file.get("data").map(PathBuf::from));
    let synth = synth.clone().or_else(|| file.get("synth").cloned());
    match (data, synth) {
        (Some(_), Some(_)) => Err(Error::Config("give either data or synth, not both".into())),
        (Some(dir), None) => {
            let (split, skipped) = load_market_dir(&dir)?;
            for line in &skipped {
                eprintln!("skipped: {line}");
            }
            Ok(split)
        }
        (None, Some(spec)) => synth_dataset(&parse_synth_spec(&spec)?),
        (None, None) => Err(Error::Config("no dataset source (--data or --synth)".into())),
    }
}

fn encode_set(bank: &PartModelBank, images: &[PersonImage]) -> Result<(CodeIndex, RelaxedSet)> {
    let relaxed: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| bank.relaxed_code(img))
        .collect::<Result<_>>()?;
    let codes: Vec<BitCode> = relaxed.iter().map(|r| binarize(r)).collect::<Result<_>>()?;
    let ids: Vec<String> = images.iter().map(|i| i.source_id.clone()).collect();
    let index = CodeIndex::new(codes, ids.clone())?;
    Ok((
        index,
        RelaxedSet {
            value_length: bank.code_bits(),
            values: relaxed,
            ids,
        },
    ))
}

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    let bank = PartModelBank::load_dir(&args.bank)?;
    let (split, skipped) = load_market_dir(&args.data)?;
    for line in &skipped {
        eprintln!("skipped: {line}");
    }
    std::fs::create_dir_all(&args.out)?;

    let (gallery_index, _) = encode_set(&bank, &split.gallery)?;
    write_codes_file(&args.out.join("gallery.pdhcode"), &gallery_index)?;
    let (query_index, query_relaxed) = encode_set(&bank, &split.query)?;
    write_codes_file(&args.out.join("query.pdhcode"), &query_index)?;
    write_relaxed_file(&args.out.join("query.pdhrelx"), &query_relaxed)?;

    println!(
        "encoded {} query + {} gallery images at {} bits -> {}",
        query_index.len(),
        gallery_index.len(),
        bank.code_bits(),
        args.out.display()
    );
    Ok(())
}

fn meta_from_id(id: &str) -> Result<(Option<u32>, u32)> {
    parse_market_stem(id).ok_or_else(|| {
        Error::Evaluation(format!("record id {id:?} does not follow the naming convention"))
    })
}

fn format_report(report: &EvalReport) -> String {
    format!(
        "queries={}\nskipped={}\nrank1={:.4}\nrank5={:.4}\nrank10={:.4}\nrank20={:.4}\nmAP={:.4}\n",
        report.queries,
        report.skipped,
        report.rank_k(1),
        report.rank_k(5),
        report.rank_k(10),
        report.rank_k(20),
        report.map
    )
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let pooling = PoolMode::parse(&args.pooling)?;
    let gallery_index = read_codes_file(&args.gallery_codes)?;
    let gallery: Vec<GalleryRecord> = gallery_index
        .ids()
        .iter()
        .map(|id| {
            let (identity, camera) = meta_from_id(id)?;
            Ok(GalleryRecord { id: id.clone(), identity, camera })
        })
        .collect::<Result<_>>()?;

    let (query_codes, query_meta): (Vec<BitCode>, Vec<(u32, u32)>) = match pooling {
        None => {
            let query_index = read_codes_file(&args.query_codes)?;
            let mut codes = Vec::new();
            let mut meta = Vec::new();
            for (code, id) in query_index.codes().iter().zip(query_index.ids()) {
                let (identity, camera) = meta_from_id(id)?;
                let Some(identity) = identity else {
                    return Err(Error::Evaluation(format!("query {id:?} is a distractor")));
                };
                codes.push(code.clone());
                meta.push((identity, camera));
            }
            (codes, meta)
        }
        Some(mode) => {
            let relaxed_path = args
                .relaxed
                .clone()
                .unwrap_or_else(|| args.query_codes.with_file_name("query.pdhrelx"));
            let relaxed = read_relaxed_file(&relaxed_path)?;
            // merge all queries of one (identity, camera) into a single query
            let mut groups: BTreeMap<(u32, u32), Vec<Vec<f64>>> = BTreeMap::new();
            for (v, id) in relaxed.values.iter().zip(&relaxed.ids) {
                let (identity, camera) = meta_from_id(id)?;
                let Some(identity) = identity else {
                    return Err(Error::Evaluation(format!("query {id:?} is a distractor")));
                };
                groups.entry((identity, camera)).or_default().push(v.clone());
            }
            let mut codes = Vec::new();
            let mut meta = Vec::new();
            for (key, members) in groups {
                let pooled = pool_queries(&members, mode)?;
                codes.push(binarize(&pooled)?);
                meta.push(key);
            }
            (codes, meta)
        }
    };

    let report = evaluate(&query_codes, &query_meta, &gallery, &gallery_index)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("report.txt"), format_report(&report))?;
    std::fs::write(args.out.join("cmc.csv"), report.cmc_csv())?;
    println!("{}", report.summary_line());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    // feature extraction throughput via a randomly initialized bank whose
    // code length matches the benchmarked bit length
    let (scheme, per_part) = if args.bits % 4 == 0 && args.bits >= 4 {
        (builtin_scheme("EQL4")?, args.bits / 4)
    } else {
        (builtin_scheme("WHOLE")?, args.bits)
    };
    let bank = {
        use pdh_core::netcore::{Dims, HashNet};
        let arch = Arch::Mlp { hidden: 32 };
        let nets: Vec<HashNet> = scheme
            .strips
            .iter()
            .enumerate()
            .map(|(k, strip)| {
                HashNet::new(
                    Dims::Spatial { channels: 3, height: strip.height, width: scheme.image_width },
                    arch.specs(3, strip.height, scheme.image_width, per_part),
                    args.seed + k as u64,
                )
            })
            .collect::<Result<_>>()?;
        PartModelBank {
            scheme,
            nets,
            bits: per_part,
            share_weights: false,
            arch,
            base_seed: args.seed,
        }
    };
    let sample = synth_dataset(&SynthConfig {
        num_ids: 4,
        images_per_id_per_cam: 2,
        num_cams: 2,
        noise_sigma: 0.05,
        seed: args.seed,
    })?;
    let probe: Vec<&PersonImage> = sample.train.iter().take(8).collect();
    let t0 = Instant::now();
    for img in &probe {
        bank.encode_image(img)?;
    }
    let feature_ms = t0.elapsed().as_secs_f64() * 1000.0 / probe.len() as f64;

    let report = bench_search(args.n, args.bits, args.repeats, args.seed)?;
    let mut table = String::from("pipeline,feature_extraction_ms,distance_ms,sorting_ms,total_ms\n");
    table.push_str(&format!(
        "hamming_counting,{:.4},{:.4},{:.4},{:.4}\n",
        feature_ms,
        report.hamming_distance_s * 1000.0,
        report.counting_sort_s * 1000.0,
        feature_ms + report.hamming_total_s() * 1000.0,
    ));
    table.push_str(&format!(
        "euclidean_comparison,{:.4},{:.4},{:.4},{:.4}\n",
        feature_ms,
        report.euclidean_distance_s * 1000.0,
        report.comparison_sort_s * 1000.0,
        feature_ms + report.euclidean_total_s() * 1000.0,
    ));
    print!("{table}");
    println!(
        "speedup={:.1}x rankings_agree={}",
        report.euclidean_total_s() / report.hamming_total_s(),
        report.rankings_agree
    );
    if let Some(path) = args.out {
        std::fs::write(path, table)?;
    }
    Ok(())
}
