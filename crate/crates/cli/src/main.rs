use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};
use sgdet::config::load_config;
use sgdet::pipeline::{load_weights, seed_weights, Pipeline};
use sgdet::profiler::count_flops;
use sgdet::text::{CategoryVocab, EmbeddingTable, TextPipeline};
use sgdet::{Error, Result};

/// Prompt-guided object detection on PPM images.
#[derive(Parser)]
#[command(name = "sgdet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect objects and keep the classes the prompt asks for.
    Detect(DetectArgs),
    /// Print parameter and FLOP counts per node.
    Profile(ProfileArgs),
    /// Show which vocabulary classes a prompt maps to.
    PromptClasses(PromptArgs),
}

#[derive(clap::Args)]
struct DetectArgs {
    /// Input image (binary PPM). Repeat for a batch.
    #[arg(long = "image", required = true)]
    images: Vec<PathBuf>,
    #[arg(long, required_unless_present = "no_prompt", conflicts_with = "no_prompt")]
    prompt: Option<String>,
    #[arg(long)]
    config: PathBuf,
    /// Weight file; without it weights are seeded.
    #[arg(long, conflicts_with = "seed")]
    weights: Option<PathBuf>,
    /// Seed for generated weights (default: the config's seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, value_parser = unit_interval)]
    conf: Option<f32>,
    #[arg(long, value_parser = unit_interval)]
    iou: Option<f32>,
    #[arg(long, value_parser = tau)]
    tau: Option<f64>,
    /// Skip prompt filtering and report every detection.
    #[arg(long)]
    no_prompt: bool,
    /// Zero-pad images up to multiples of 32 instead of rejecting them.
    #[arg(long)]
    pad: bool,
    /// Output JSON file, or a directory when several images are given.
    #[arg(long)]
    out: PathBuf,
    /// Images processed concurrently.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(clap::Args)]
struct ProfileArgs {
    #[arg(long)]
    config: PathBuf,
    /// Input size as HxW, e.g. 640x640.
    #[arg(long, value_parser = input_size)]
    input_size: (usize, usize),
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(clap::Args)]
struct PromptArgs {
    #[arg(long)]
    prompt: String,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = sgdet::text::DEFAULT_TAU, value_parser = tau)]
    tau: f64,
}

fn unit_interval(s: &str) -> std::result::Result<f32, String> {
    match s.parse::<f32>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(format!("`{s}` is not a number in [0, 1]")),
    }
}

fn tau(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 1.0 => Ok(v),
        _ => Err(format!("`{s}` is not a number in (0, 1]")),
    }
}

fn input_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let bad = || format!("`{s}` is not HxW with positive multiples of 32");
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.parse().map_err(|_| bad())?;
    let w: usize = w.parse().map_err(|_| bad())?;
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(bad());
    }
    Ok((h, w))
}

fn output_path(args: &DetectArgs, image: &Path) -> PathBuf {
    if args.images.len() == 1 {
        return args.out.clone();
    }
    let stem = image.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    args.out.join(format!("{stem}.json"))
}

fn build_pipeline(args: &DetectArgs) -> Result<Pipeline> {
    let mut cfg = load_config(&args.config)?;
    if let Some(v) = args.conf {
        cfg.head.conf_threshold = v;
    }
    if let Some(v) = args.iou {
        cfg.head.iou_threshold = v;
    }
    if let Some(v) = args.tau {
        cfg.text.tau = v;
    }
    cfg.validate()?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let text = cfg.text_pipeline(base)?;
    let weights = match &args.weights {
        Some(p) => load_weights(p, &cfg)?,
        None => seed_weights(&cfg, args.seed.unwrap_or(cfg.seed)),
    };
    let table = EmbeddingTable::load(&args.embeddings)?;
    let vocab = CategoryVocab::load(&args.vocab)?;
    Pipeline::new(cfg, weights, text, table, vocab)
}

/// A command failure; per-image batch errors are printed as they are
/// collected, so only their exit code travels back.
enum Failure {
    Error(Error),
    Reported(i32),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn detect(args: &DetectArgs) -> std::result::Result<(), Failure> {
    if args.images.len() > 1 {
        std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
            path: args.out.display().to_string(),
            source: e,
        })?;
    }
    let pipeline = build_pipeline(args)?;
    let prompt = if args.no_prompt { None } else { args.prompt.as_deref() };
    let next = AtomicUsize::new(0);
    let errors = Mutex::new(Vec::new());
    let workers = usize::from(args.jobs).min(args.images.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(image) = args.images.get(i) else { break };
                let out = output_path(args, image);
                match pipeline.run_detect(image, prompt, args.pad, &out) {
                    Ok(r) => {
                        let dropped = r.filtered.as_ref().map_or(0, |f| f.dropped_count);
                        println!("{}: {} detections, {dropped} dropped -> {}", image.display(), r.detections().len(), out.display());
                    }
                    Err(e) => errors.lock().unwrap().push((i, e)),
                }
            });
        }
    });
    let mut errors = errors.into_inner().unwrap();
    errors.sort_by_key(|(i, _)| *i);
    let mut code = None;
    for (_, e) in errors {
        eprintln!("error: {e}");
        code.get_or_insert(e.exit_code());
    }
    code.map_or(Ok(()), |c| Err(Failure::Reported(c)))
}

fn profile(args: &ProfileArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let report = count_flops(&cfg, args.input_size)?;
    match args.format {
        Format::Json => println!("{}", report.to_json()),
        Format::Table => print!("{}", report.to_table()),
    }
    Ok(())
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn prompt_classes(args: &PromptArgs) -> Result<()> {
    let table = EmbeddingTable::load(&args.embeddings)?;
    let vocab = CategoryVocab::load(&args.vocab)?;
    let set = TextPipeline::default().prompt_to_classes(&args.prompt, &table, &vocab, args.tau)?;
    let rows: Vec<String> = set
        .class_ids
        .iter()
        .map(|&id| {
            let prov: Vec<String> = set.provenance[&id]
                .iter()
                .map(|(lemma, score)| format!("[{}, {score:.6}]", json_str(lemma)))
                .collect();
            format!(
                "    {{\"class_id\": {id}, \"class\": {}, \"provenance\": [{}]}}",
                json_str(vocab.name(id).unwrap_or("?")),
                prov.join(", ")
            )
        })
        .collect();
    println!("{{");
    println!("  \"prompt\": {},", json_str(&args.prompt));
    println!("  \"tau\": {:.6},", args.tau);
    if rows.is_empty() {
        println!("  \"classes\": []");
    } else {
        println!("  \"classes\": [\n{}\n  ]", rows.join(",\n"));
    }
    println!("}}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Detect(a) => detect(a),
        Command::Profile(a) => profile(a).map_err(Failure::from),
        Command::PromptClasses(a) => prompt_classes(a).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Reported(code)) => ExitCode::from(code as u8),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
