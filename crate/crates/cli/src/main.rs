//! `ctxcodec` command-line tool: train, encode, decode, eval, bench, ablate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::json;

use ctxcodec::codec::{decode_image, encode_image, pipeline::CLAMP_WARN_RATE, Bitstream, CodecOptions};
use ctxcodec::image::{read_ppm, write_atomic, write_ppm};
use ctxcodec::report::{benchmark_codec, bd_rate_report, evaluate_corpus, parse_curve, QualityMetric};
use ctxcodec::trainer::{ablate, parse_kv, smoothed_loss, synthetic_image, train, Dataset, LogRecord, TrainConfig};
use ctxcodec::transforms::{ModelWeights, Profile};
use ctxcodec::{math, weights, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "ctxcodec", version, about = "Learned image codec with a context-adaptive entropy model")]
struct Cli {
    /// Worker threads for batch and corpus parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Platform-independent math on the entropy path. Turning it off makes
    /// streams portable only between identical builds and machines.
    #[arg(long, global = true, default_value_t = true, action = ArgAction::Set)]
    deterministic_math: bool,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write its weight file.
    Train {
        #[command(flatten)]
        t: TrainArgs,
        /// Output weight file.
        #[arg(long, short)]
        out: PathBuf,
        /// JSON-lines metrics log (default: <out>.log.jsonl).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Start from these weights instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Compress a PPM image.
    Encode {
        input: PathBuf,
        #[arg(long, short)]
        weights: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Embed per-table checksums so decoding verifies every CDF.
        #[arg(long)]
        checksums: bool,
    },
    /// Decompress a stream back to PPM.
    Decode {
        input: PathBuf,
        #[arg(long, short)]
        weights: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Evaluate weight files on a directory of PPM images.
    Eval {
        /// Weight files or glob patterns, one R-D point each.
        #[arg(long, short, required = true, num_args = 1..)]
        weights: Vec<String>,
        #[arg(long)]
        images: PathBuf,
        /// Output prefix: writes <prefix>.tsv, <prefix>.psnr.dat and
        /// <prefix>.msssim_db.dat.
        #[arg(long, short)]
        out: PathBuf,
        /// Anchor curve (two-column bpp/quality file) for a BD-rate line.
        #[arg(long)]
        anchor: Option<PathBuf>,
        /// Quality axis of the anchor curve.
        #[arg(long, default_value = "psnr")]
        anchor_metric: String,
    },
    /// Time encode and decode per stage.
    Bench {
        /// Profiles to time with freshly initialized weights.
        #[arg(long, num_args = 1..)]
        profile: Vec<String>,
        /// Weight files to time.
        #[arg(long, short, num_args = 1..)]
        weights: Vec<PathBuf>,
        /// Side of the synthetic square test images.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Train discrete- and noisy-conditioned models per seed and compare them.
    Ablate {
        #[command(flatten)]
        t: TrainArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Held-out images for the final loss (default: synthetic).
        #[arg(long)]
        eval_images: Option<PathBuf>,
        /// JSON report with both trajectories per seed.
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `key = value` training config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// tiny, base, hybrid-320 or hybrid-400.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    /// mse or msssim.
    #[arg(long)]
    metric: Option<String>,
    /// discrete or noisy.
    #[arg(long)]
    conditioning: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Directory of PPM training images (default: synthetic corpus).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Images in the synthetic corpus.
    #[arg(long, default_value_t = 64)]
    synthetic_count: usize,
    #[arg(long, default_value_t = 96)]
    synthetic_size: usize,
    /// Print a progress line every this many iterations (0: never).
    #[arg(long, default_value_t = 100)]
    print_every: u64,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut map = match &self.config {
            Some(p) => parse_kv(&read_text(p)?)?,
            None => BTreeMap::new(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                map.insert(k.to_string(), v);
            }
        };
        set("profile", self.profile.clone());
        set("lambda", self.lambda.map(|v| v.to_string()));
        set("metric", self.metric.clone());
        set("conditioning", self.conditioning.clone());
        set("seed", self.seed.map(|v| v.to_string()));
        set("iterations", self.iterations.map(|v| v.to_string()));
        set("batch_size", self.batch_size.map(|v| v.to_string()));
        set("lr", self.lr.map(|v| v.to_string()));
        let mut cfg = TrainConfig::default();
        cfg.apply(&map)?;
        Ok(cfg)
    }

    fn dataset(&self) -> Result<Dataset> {
        match &self.data {
            Some(dir) => {
                let (d, skipped) = Dataset::from_dir(dir)?;
                if skipped > 0 {
                    eprintln!("warning: {skipped} training images skipped");
                }
                Ok(d)
            }
            None => Dataset::synthetic(self.synthetic_count, self.synthetic_size, 1),
        }
    }

    fn check_paths(&self) -> Result<()> {
        if let Some(p) = &self.config {
            require_file(p)?;
        }
        if let Some(d) = &self.data {
            require_dir(d)?;
        }
        Ok(())
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn read_text(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| invalid(format!("cannot read {}: {e}", p.display())))
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("no such file: {}", p.display())))
    }
}

fn require_dir(p: &Path) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(invalid(format!("no such directory: {}", p.display())))
    }
}

/// The output's directory must exist; nothing is created outside it.
fn require_out(p: &Path) -> Result<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => {
            Err(invalid(format!("output directory does not exist: {}", d.display())))
        }
        _ if p.is_dir() => Err(invalid(format!("output path is a directory: {}", p.display()))),
        _ => Ok(()),
    }
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn expand_weights(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for pat in patterns {
        if pat.contains(['*', '?', '[']) {
            let mut hits: Vec<PathBuf> = glob::glob(pat)
                .map_err(|e| invalid(format!("bad glob {pat:?}: {e}")))?
                .filter_map(|r| r.ok())
                .collect();
            if hits.is_empty() {
                return Err(invalid(format!("glob {pat:?} matched no files")));
            }
            hits.sort();
            out.extend(hits);
        } else {
            let p = PathBuf::from(pat);
            require_file(&p)?;
            out.push(p);
        }
    }
    Ok(out)
}

fn label_of(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

fn log_jsonl(log: &[LogRecord]) -> String {
    let mut s = String::new();
    for r in log {
        s.push_str(&r.to_json());
        s.push('\n');
    }
    s
}

fn cmd_train(t: &TrainArgs, out: &Path, log: Option<&Path>, init: Option<&Path>) -> Result<()> {
    t.check_paths()?;
    require_out(out)?;
    let log_path = log.map_or_else(|| with_suffix(out, ".log.jsonl"), Path::to_path_buf);
    require_out(&log_path)?;
    if let Some(p) = init {
        require_file(p)?;
    }
    let cfg = t.config()?;
    let init = init.map(weights::load).transpose()?;
    let data = t.dataset()?;
    eprintln!(
        "training {} lambda={} metric={} conditioning={} iterations={} on {} images",
        cfg.profile.name(),
        cfg.lambda,
        cfg.metric.name(),
        cfg.conditioning.name(),
        cfg.total_iterations(),
        data.images.len()
    );
    let every = t.print_every;
    let res = train(&data, &cfg, init, |r| {
        if every > 0 && r.iter % every == 0 {
            println!("{}", r.to_json());
        }
    })?;
    weights::save(out, &res.weights)?;
    write_atomic(&log_path, log_jsonl(&res.log).as_bytes())?;
    let s = smoothed_loss(&res.log, 100);
    println!(
        "trained iterations={} smoothed_loss_first={:.6} smoothed_loss_last={:.6} weights={}",
        res.log.len(),
        s.first().copied().unwrap_or(f64::NAN),
        s.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn cmd_encode(input: &Path, wpath: &Path, out: &Path, checksums: bool) -> Result<()> {
    require_file(input)?;
    require_file(wpath)?;
    require_out(out)?;
    let img = read_ppm(input)?;
    let w = weights::load(wpath)?;
    let enc = encode_image(&img, &w, CodecOptions { checksums })?;
    write_atomic(out, &enc.bitstream.to_bytes())?;
    if enc.clamp_rate() > CLAMP_WARN_RATE {
        eprintln!(
            "warning: {:.2}% of latents were clamped to the coding range",
            100.0 * enc.clamp_rate()
        );
    }
    println!(
        "bpp={:.6} est_bits={:.3} real_bits={} clamped={}",
        enc.bitstream.bpp(),
        enc.estimate.total_bits(),
        enc.bitstream.payload_bits(),
        enc.clamped
    );
    Ok(())
}

fn cmd_decode(input: &Path, wpath: &Path, out: &Path) -> Result<()> {
    require_file(input)?;
    require_file(wpath)?;
    require_out(out)?;
    let bs = Bitstream::from_bytes(&std::fs::read(input)?)?;
    let w = weights::load(wpath)?;
    let dec = decode_image(&bs, &w)?;
    write_ppm(out, &dec.image)?;
    println!("decoded width={} height={}", dec.image.width, dec.image.height);
    Ok(())
}

fn cmd_eval(patterns: &[String], images: &Path, out: &Path, anchor: Option<&Path>, anchor_metric: &str) -> Result<()> {
    require_dir(images)?;
    require_out(out)?;
    let anchor_metric = QualityMetric::from_tag(anchor_metric)?;
    let anchor = match anchor {
        Some(p) => Some(parse_curve(&read_text(p)?)?),
        None => None,
    };
    let paths = expand_weights(patterns)?;
    let ws = paths
        .iter()
        .map(|p| Ok((label_of(p), weights::load(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let rep = evaluate_corpus(&ws, images)?;
    print!("{}", rep.captions());
    write_atomic(&with_suffix(out, ".tsv"), rep.table('\t').as_bytes())?;
    for m in [QualityMetric::Psnr, QualityMetric::MsSsimDb] {
        write_atomic(&with_suffix(out, &format!(".{}.dat", m.tag())), rep.gnuplot(m).as_bytes())?;
    }
    if let Some(a) = anchor {
        let (_, text) = bd_rate_report(&a, &rep.curve(anchor_metric), anchor_metric)?;
        println!("{text}");
    }
    Ok(())
}

fn cmd_bench(profiles: &[String], wpaths: &[PathBuf], size: usize, count: usize, repeats: usize) -> Result<()> {
    for p in wpaths {
        require_file(p)?;
    }
    let mut targets = Vec::new();
    for name in profiles {
        let prof = Profile::from_name(name)?;
        targets.push((prof.name().to_string(), ModelWeights::init(prof.arch(), 0.05, 0)?));
    }
    for p in wpaths {
        targets.push((label_of(p), weights::load(p)?));
    }
    if targets.is_empty() {
        return Err(invalid("bench needs --profile or --weights"));
    }
    let images: Vec<_> = (0..count as u64).map(|i| synthetic_image(size, size, 1000 + i)).collect();
    for (label, w) in &targets {
        print!("{}", benchmark_codec(w, &images, repeats)?.to_text(label));
    }
    Ok(())
}

fn cmd_ablate(t: &TrainArgs, seeds: &[u64], eval_dir: Option<&Path>, out: &Path) -> Result<()> {
    t.check_paths()?;
    if let Some(d) = eval_dir {
        require_dir(d)?;
    }
    require_out(out)?;
    if seeds.is_empty() {
        return Err(invalid("ablate needs at least one seed"));
    }
    let cfg = t.config()?;
    let data = t.dataset()?;
    let eval_images = match eval_dir {
        Some(d) => Dataset::from_dir(d)?.0.images,
        None => Dataset::synthetic(8, 64, 999)?.images,
    };
    let runs = ablate(&data, &cfg, seeds, &eval_images)?;
    let losses = |log: &[LogRecord]| log.iter().map(|r| r.loss).collect::<Vec<_>>();
    let mut wins = 0;
    let mut per_seed = Vec::new();
    for r in &runs {
        wins += r.discrete_wins() as usize;
        println!(
            "seed={} discrete_loss={:.6} noisy_loss={:.6} final_loss_delta={:.4}%",
            r.seed,
            r.discrete_eval.loss,
            r.noisy_eval.loss,
            100.0 * r.final_loss_delta()
        );
        per_seed.push(json!({
            "seed": r.seed,
            "discrete": {"loss": losses(&r.discrete_log), "eval": r.discrete_eval},
            "noisy": {"loss": losses(&r.noisy_log), "eval": r.noisy_eval},
            "final_loss_delta": r.final_loss_delta(),
        }));
    }
    println!("discrete_wins={wins}/{}", runs.len());
    let report = json!({
        "profile": cfg.profile.name(),
        "lambda": cfg.lambda,
        "metric": cfg.metric.name(),
        "iterations": cfg.total_iterations(),
        "runs": per_seed,
        "discrete_wins": wins,
    });
    write_atomic(out, serde_json::to_string_pretty(&report).expect("json values").as_bytes())
}

fn run(cli: Cli) -> Result<()> {
    math::set_deterministic_math(cli.deterministic_math);
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(invalid("--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| invalid(e.to_string()))?;
    }
    match &cli.cmd {
        Command::Train { t, out, log, init } => cmd_train(t, out, log.as_deref(), init.as_deref()),
        Command::Encode {
            input,
            weights,
            out,
            checksums,
        } => cmd_encode(input, weights, out, *checksums),
        Command::Decode { input, weights, out } => cmd_decode(input, weights, out),
        Command::Eval {
            weights,
            images,
            out,
            anchor,
            anchor_metric,
        } => cmd_eval(weights, images, out, anchor.as_deref(), anchor_metric),
        Command::Bench {
            profile,
            weights,
            size,
            count,
            repeats,
        } => cmd_bench(profile, weights, *size, *count, *repeats),
        Command::Ablate {
            t,
            seeds,
            eval_images,
            out,
        } => cmd_ablate(t, seeds, eval_images.as_deref(), out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} msg={msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
