mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seqdiff::config::{RunConfig, SamplerConfig};
use seqdiff::data::{gen_dataset, make_pairs, read_dataset, split_streams, write_dataset, LabelSet};
use seqdiff::denoiser::{fit_model, Checkpoint, Pcmdm};
use seqdiff::eval::{ablation_csv, evaluate, run_ablation, AblationGrid, EvalData};
use seqdiff::ndcore::SeedStream;
use seqdiff::sampling::{PastMode, PromptStream, SamplerOptions, SamplerRegistry};
use seqdiff::schedule::NoiseSchedule;
use seqdiff::Error;

/// Labeled multi-segment trajectory diffusion.
#[derive(Parser)]
#[command(name = "seqdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train and test datasets.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; receives train.jsonl and test.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a denoiser and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training dataset file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides train.steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Loss log (step 1, then every 100 steps); defaults to the checkpoint
        /// path with a `.log` extension.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Generate one long sequence from a prompt stream.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Prompts as `label:len[,label:len]...`.
        #[arg(long)]
        stream: String,
        /// Defaults to `sampler.kind` from the config.
        #[arg(long)]
        sampler: Option<String>,
        #[command(flatten)]
        knobs: Knobs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare samplers on prompts drawn from a test set.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Test dataset file.
        #[arg(long)]
        data: PathBuf,
        /// Training dataset; enables the real-vs-real reference and train-side label centroids.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "independent,inpainting,compositional")]
        samplers: Vec<String>,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 300)]
        diversity_pairs: usize,
        #[command(flatten)]
        knobs: Knobs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON report.
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV table of the same rows.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sweep h, L_Tr and s one axis at a time.
    Ablate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Test dataset file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = AblationGrid::DEFAULT_SPEC)]
        grid: String,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 300)]
        diversity_pairs: usize,
        #[command(flatten)]
        knobs: Knobs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV table.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective configuration as TOML.
    DumpConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Sampler knobs; unset ones fall back to the `[sampler]` section of
/// `--config`, or to the built-in defaults.
#[derive(Args)]
struct Knobs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// History length.
    #[arg(long)]
    h: Option<usize>,
    /// Transition (overlap) length.
    #[arg(long)]
    ltr: Option<usize>,
    /// Guidance scale.
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    past_mode: Option<PastMode>,
}

impl Knobs {
    fn resolve(&self) -> seqdiff::Result<SamplerConfig> {
        let mut cfg = load_config(self.config.as_deref())?.sampler;
        if let Some(h) = self.h {
            cfg.h = h;
        }
        if let Some(ltr) = self.ltr {
            cfg.ltr = ltr;
        }
        if let Some(s) = self.s {
            cfg.s = s;
        }
        if let Some(m) = self.past_mode {
            cfg.past_mode = m;
        }
        cfg.options()?;
        Ok(cfg)
    }

    fn options(&self) -> seqdiff::Result<SamplerOptions> {
        self.resolve()?.options()
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } => 3,
        Error::Numeric(_) => 4,
        _ => 2,
    }
}

fn load_config(path: Option<&Path>) -> seqdiff::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write(path: &Path, text: &str) -> seqdiff::Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_model(path: &Path) -> seqdiff::Result<(Pcmdm, LabelSet, NoiseSchedule)> {
    let ckpt = Checkpoint::load(path)?;
    Ok((ckpt.to_model()?, ckpt.label_set()?, ckpt.schedule.build()?))
}

fn pair_count(streams: &[seqdiff::data::LabeledStream]) -> usize {
    streams.iter().map(|s| make_pairs(s, 0).len()).sum()
}

fn run(cli: Cli) -> seqdiff::Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let labels = cfg.data.label_set()?;
            let streams = gen_dataset(&cfg.data)?;
            let (train, test) = split_streams(streams, cfg.data.test_streams, cfg.data.seed);
            fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            write_dataset(&out.join("train.jsonl"), &train, &labels)?;
            write_dataset(&out.join("test.jsonl"), &test, &labels)?;
            println!("train: {} streams, {} pairs", train.len(), pair_count(&train));
            println!("test: {} streams, {} pairs", test.len(), pair_count(&test));
        }
        Command::Train {
            config,
            data,
            out,
            steps,
            log,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            let labels = cfg.data.label_set()?;
            let streams = read_dataset(&data, &labels)?;
            let schedule = cfg.schedule.build()?;
            let mut lines = String::from("step,loss,moving_avg\n");
            let mut window = Vec::with_capacity(100);
            let (model, report) = fit_model(cfg.model.clone(), &cfg.train, &schedule, &streams, cfg.seed, |step, loss| {
                if window.len() == 100 {
                    window.remove(0);
                }
                window.push(loss);
                if step == 1 || step % 100 == 0 {
                    let avg = window.iter().sum::<f64>() / window.len() as f64;
                    lines.push_str(&format!("{step},{loss:.6},{avg:.6}\n"));
                    eprintln!("step {step}: loss {loss:.5} (avg {avg:.5})");
                }
            })?;
            let ckpt = Checkpoint::new(&model, &labels, cfg.schedule.clone(), cfg.train.steps as u64, cfg.seed);
            ckpt.save(&out)?;
            write(&log.unwrap_or_else(|| out.with_extension("log")), &lines)?;
            match (report.head_mean(100), report.tail_mean(100)) {
                (Some(a), Some(b)) => println!("trained {} steps: loss {a:.5} -> {b:.5}", report.losses.len()),
                _ => println!("wrote initial weights ({} parameters)", model.parameter_count()),
            }
        }
        Command::Sample {
            ckpt,
            stream,
            sampler,
            knobs,
            seed,
            out,
            svg,
            csv,
        } => {
            let (model, labels, schedule) = load_model(&ckpt)?;
            let stream = PromptStream::parse(&stream, &labels)?;
            let cfg = knobs.resolve()?;
            let opts = cfg.options()?;
            let registry = SamplerRegistry::default();
            let r = registry
                .get(sampler.as_deref().unwrap_or(&cfg.kind))?
                .sample(&model, &stream, &schedule, &opts, &SeedStream::new(seed))?;
            write(&out, &output::result_json(&r, &stream, &labels, &opts, seed))?;
            if let Some(p) = svg {
                write(&p, &output::trace_svg(&r, &stream, &labels))?;
            }
            if let Some(p) = csv {
                write(&p, &output::frames_csv(&r, &stream, &labels))?;
            }
            let td: Vec<String> = r.transition_distances.iter().map(|d| format!("{d:.4}")).collect();
            println!("{}: {} frames, transition distances [{}]", r.sampler, r.sequence.len(), td.join(", "));
        }
        Command::Eval {
            ckpt,
            data,
            train,
            samplers,
            n,
            diversity_pairs,
            knobs,
            seed,
            out,
            csv,
        } => {
            let (model, labels, schedule) = load_model(&ckpt)?;
            let opts = knobs.options()?;
            let test = read_dataset(&data, &labels)?;
            let train = train.map(|p| read_dataset(&p, &labels)).transpose()?;
            let ed = EvalData::new(train.as_deref(), &test, labels.len(), n)?;
            let report = evaluate(&ed, &model, &schedule, &SamplerRegistry::default(), &samplers, &opts, seed, diversity_pairs)?;
            write(&out, &report.to_json())?;
            let table = report.to_csv();
            if let Some(p) = csv {
                write(&p, &table)?;
            }
            print!("{table}");
            if let Some(f) = report.real_frechet {
                println!("real train vs test frechet: {f:.6}");
            }
            if let Some(ok) = report.ordering_holds {
                println!("ordering compositional < inpainting < independent: {ok}");
            }
        }
        Command::Ablate {
            ckpt,
            data,
            grid,
            n,
            diversity_pairs,
            knobs,
            seed,
            out,
        } => {
            let grid = AblationGrid::parse(&grid)?;
            let (model, labels, schedule) = load_model(&ckpt)?;
            let opts = knobs.options()?;
            let test = read_dataset(&data, &labels)?;
            let ed = EvalData::new(None, &test, labels.len(), n)?;
            let rows = run_ablation(&ed, &model, &schedule, &SamplerRegistry::default(), &opts, &grid, seed, diversity_pairs)?;
            let table = ablation_csv(&rows);
            write(&out, &table)?;
            print!("{table}");
        }
        Command::DumpConfig { config } => {
            print!("{}", load_config(config.as_deref())?.to_toml_string());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
