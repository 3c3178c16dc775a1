//! `segprompt`: synthetic data, set-of-marks rendering, training, decoding and
//! evaluation from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use segprompt_core::manifest::{render_som, Manifest, Split, StudyRecord};
use segprompt_core::metrics::BootstrapSpec;
use segprompt_core::model::{
    self, load_dir, save_dir, Mllm, ModelConfig, TrainConfig, TrainExample, TRAIN_CONFIG_FILE,
};
use segprompt_core::nn::{seeded_rng, ParamStore};
use segprompt_core::pipeline::{
    build_tokenizer, evaluate_predictions, load_examples, predict, record_prompt, Prediction, MAX_NEW_TOKENS,
};
use segprompt_core::prompt::{PromptOptions, Strategy, View};
use segprompt_core::som::{IntensityPolicy, MarkStyle};
use segprompt_core::synth::{generate_dataset, SynthSpec};
use segprompt_core::SegTokenPair;

#[derive(Parser, Debug)]
#[command(
    name = "segprompt",
    version,
    about = "Segmentation-token prompting for a toy report generator"
)]
struct Cli {
    /// Overrides the seed of the spec or config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic dataset.
    GenData {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Copy a dataset with set-of-marks overlays in place of the images.
    RenderSom {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `contours+marks`, `contours` or `marks`.
        #[arg(long, default_value = "contours+marks", value_parser = parse_style)]
        som_style: (bool, bool),
        /// `contrast-max`, `alternating` or `uniform:<0-255>`.
        #[arg(long, default_value = "contrast-max", value_parser = parse_intensity)]
        intensity: IntensityPolicy,
    },
    /// Dump the segmentation token pairs of one study as JSON.
    ExtractTokens {
        #[command(flatten)]
        study: StudyArgs,
        /// Trained checkpoint; a freshly initialised toy model otherwise.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the prompt layout of one study as JSON.
    BuildPrompt {
        #[command(flatten)]
        study: StudyArgs,
        #[command(flatten)]
        prompt: PromptArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train adapter, extractor and LM on the train split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// TrainConfig JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// ModelConfig JSON; the toy configuration otherwise.
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[command(flatten)]
        prompt: PromptArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy reports for one split.
    Generate {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate and score one split with bootstrap intervals.
    Eval {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        report: PathBuf,
        /// Also write the predictions here.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        bootstrap_samples: usize,
    },
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[arg(long)]
    data: PathBuf,
    /// Study id; the first study when omitted.
    #[arg(long)]
    study: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct PromptArgs {
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// Current frontal view only, without textual context.
    #[arg(long)]
    single_view: bool,
    /// Leave structure names and the mask sentence out of the text.
    #[arg(long)]
    plain_prompt: bool,
    /// Append the set-of-marks listing from the frontal legend.
    #[arg(long)]
    som_listing: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    #[arg(long, default_value_t = MAX_NEW_TOKENS)]
    max_new_tokens: usize,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: segprompt_core::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s:?}; expected train, val or test")),
    }
}

fn parse_style(s: &str) -> Result<(bool, bool), String> {
    let mut style = (false, false);
    for part in s.split('+') {
        match part.trim() {
            "contours" => style.0 = true,
            "marks" => style.1 = true,
            other => {
                return Err(format!(
                    "unknown style part {other:?}; use contours, marks or contours+marks"
                ))
            }
        }
    }
    Ok(style)
}

fn parse_intensity(s: &str) -> Result<IntensityPolicy, String> {
    match s {
        "contrast-max" => Ok(IntensityPolicy::ContrastMax),
        "alternating" => Ok(IntensityPolicy::Alternating),
        _ => s
            .strip_prefix("uniform:")
            .and_then(|v| v.parse().ok())
            .map(IntensityPolicy::Uniform)
            .ok_or_else(|| format!("unknown intensity {s:?}")),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn find_study<'a>(manifest: &'a Manifest, id: Option<&str>) -> Result<&'a StudyRecord> {
    match id {
        Some(id) => manifest
            .studies
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| anyhow!("no study {id:?} in the manifest")),
        None => manifest
            .studies
            .first()
            .ok_or_else(|| anyhow!("manifest has no studies")),
    }
}

/// Flags override the training config; the config supplies the rest.
fn prompt_settings(args: &PromptArgs, base: &TrainConfig) -> (PromptOptions, bool) {
    let opts = PromptOptions::new(args.strategy.unwrap_or(base.strategy))
        .single_view(args.single_view || base.single_view)
        .mask_aware(base.mask_aware && !args.plain_prompt);
    (opts, args.som_listing || base.som_listing)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out } => {
            let mut spec: SynthSpec = match spec {
                Some(p) => read_json(&p)?,
                None => SynthSpec::default(),
            };
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let m = generate_dataset(&spec, &out)?;
            info!("wrote {} studies to {}", m.studies.len(), out.display());
        }
        Command::RenderSom {
            data,
            out,
            som_style,
            intensity,
        } => {
            let style = MarkStyle {
                contours: som_style.0,
                alphanumerics: som_style.1,
                intensity,
            };
            let manifest = Manifest::load(&data)?;
            render_som(&manifest, &data, style, &out)?;
            info!("rendered {} studies to {}", manifest.studies.len(), out.display());
        }
        Command::ExtractTokens { study, ckpt, out } => {
            let manifest = Manifest::load(&study.data)?;
            let rec = find_study(&manifest, study.study.as_deref())?;
            let input = rec.load(&study.data)?;
            let (model, store) = match ckpt {
                Some(dir) => {
                    let (m, s, _) = load_dir(&dir)?;
                    (m, s)
                }
                None => {
                    let mut store = ParamStore::new();
                    let tok = build_tokenizer(&manifest);
                    let m = Mllm::new(
                        &mut store,
                        ModelConfig::toy(tok.vocab_size()),
                        &mut seeded_rng(cli.seed.unwrap_or(0)),
                    )?;
                    (m, store)
                }
            };
            let mut dump: std::collections::BTreeMap<View, Vec<SegTokenPair>> = Default::default();
            for view in View::ALL {
                if let Some(v) = input.view(view) {
                    let enc = model.encoder.encode(&store, &v.image)?;
                    let pairs =
                        model
                            .extractor
                            .extract_tokens(&store, &enc.taps, &v.masks, model.cfg.encoder.patch_size)?;
                    dump.insert(view, pairs);
                }
            }
            write_json(out.as_deref(), &dump)?;
        }
        Command::BuildPrompt { study, prompt, out } => {
            let manifest = Manifest::load(&study.data)?;
            let rec = find_study(&manifest, study.study.as_deref())?;
            let input = rec.load(&study.data)?;
            let (opts, som) = prompt_settings(&prompt, &TrainConfig::default());
            let p = record_prompt(rec, &input, opts, som)?;
            write_json(out.as_deref(), &p)?;
        }
        Command::Train {
            data,
            config,
            model_config,
            prompt,
            out,
        } => {
            let mut tc: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = cli.seed {
                tc.seed = seed;
            }
            let (opts, som) = prompt_settings(&prompt, &tc);
            tc.strategy = opts.strategy;
            tc.single_view = opts.single_view;
            tc.mask_aware = opts.mask_aware;
            tc.som_listing = som;

            let manifest = Manifest::load(&data)?;
            let tok = build_tokenizer(&manifest);
            let cfg = match model_config {
                Some(p) => {
                    let mut c: ModelConfig = read_json(&p)?;
                    c.lm.vocab_size = tok.vocab_size();
                    c
                }
                None => ModelConfig::toy(tok.vocab_size()),
            };
            let examples: Vec<TrainExample> = load_examples(&manifest, &data, Some(Split::Train), &tok, opts, som)?
                .into_iter()
                .map(|(_, e)| e)
                .collect();
            if examples.is_empty() {
                bail!("the train split of {} is empty", data.display());
            }
            let mut store = ParamStore::new();
            let model = Mllm::new(&mut store, cfg, &mut seeded_rng(tc.seed))?;
            info!(
                "training {} on {} studies for {} steps",
                tc.strategy,
                examples.len(),
                tc.total_steps(examples.len())
            );
            let losses = model::train(&model, &mut store, &tok, &examples, &tc)?;
            save_dir(&out, &store, &model, &tok, Some(&tc), &losses)?;
            info!("checkpoint written to {}", out.display());
        }
        Command::Generate { eval, out } => {
            let preds = generate_split(&eval)?;
            write_json(out.as_deref(), &preds)?;
        }
        Command::Eval {
            eval,
            report,
            predictions,
            bootstrap_samples,
        } => {
            let preds = generate_split(&eval)?;
            let spec = BootstrapSpec {
                samples: bootstrap_samples,
                ..BootstrapSpec::default()
            };
            let r = evaluate_predictions(&preds, spec, cli.seed.unwrap_or(0))?;
            for (name, m) in &r.metrics {
                info!("{name}: {:.4} [{:.4}, {:.4}] n={}", m.median, m.ci_low, m.ci_high, m.n);
            }
            write_json(Some(&report), &r)?;
            if let Some(p) = predictions {
                write_json(Some(&p), &preds)?;
            }
        }
    }
    Ok(())
}

/// Decodes a split with the prompt settings the checkpoint was trained with.
fn generate_split(args: &EvalArgs) -> Result<Vec<Prediction>> {
    let (model, store, tok) = load_dir(&args.ckpt)?;
    let tc_path = args.ckpt.join(TRAIN_CONFIG_FILE);
    let tc: TrainConfig = if tc_path.is_file() {
        read_json(&tc_path)?
    } else {
        TrainConfig::default()
    };
    let manifest = Manifest::load(&args.data)?;
    let examples = load_examples(
        &manifest,
        &args.data,
        Some(args.split),
        &tok,
        tc.prompt_options(),
        tc.som_listing,
    )?;
    if examples.is_empty() {
        bail!("no studies in the {:?} split", args.split);
    }
    info!("decoding {} studies", examples.len());
    Ok(predict(&model, &store, &tok, &examples, args.max_new_tokens)?)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SEGPROMPT_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| anyhow!("SEGPROMPT_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(1)
        }
    }
}
