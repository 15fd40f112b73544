//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use shiftpool_core::metrics::{d_prime, mean_ap, per_class_ap};
use shiftpool_core::model::{ModelConfig, Network};
use shiftpool_core::pooling::{binomial_coefficients, binomial_kernel, LpfSpec, PoolingSpec, Sampler};
use shiftpool_core::shift::{self, shift_consistency, EvalClip, Protocol, Scorer, ShiftReport};
use shiftpool_core::synth::{Split, SynthSpec};
use shiftpool_core::train::{predict_clips, train, TrainConfig};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::dataset::{write_synthetic, DataDir};
use crate::error::{Error, Result};
use crate::io::{hash_tree, read_json, write_json, write_tensor};
use crate::oracle::{self, Suite};
use crate::report::{history_table, line_plot_svg, shift_table, summary_table, ExperimentManifest, Table};

#[derive(Parser, Debug)]
#[command(name = "shiftpool", version, about = "Shift-invariant pooling experiments on log-mel audio")]
pub struct Cli {
    /// Upper bound on worker threads. All commands currently run on one thread.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a binomial low-pass kernel as an AAPT tensor.
    BuildFilter(BuildFilterArgs),
    /// Render a synthetic labelled data set.
    GenData(GenDataArgs),
    /// Train one or more networks and keep the best checkpoint of each.
    Train(TrainArgs),
    /// Clip-level mAP and d-prime of a checkpoint.
    EvalMap(EvalMapArgs),
    /// Time and frequency shift consistency of one or more checkpoints.
    ShiftEval(ShiftEvalArgs),
    /// Run the brute-force reference checks.
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("geometry").required(true).args(["size", "shape", "order"])))]
pub struct BuildFilterArgs {
    /// Square `size x size` kernel.
    #[arg(long, allow_negative_numbers = true)]
    pub size: Option<i64>,
    /// Rectangular kernel given as `ROWSxCOLS`, e.g. `1x5`.
    #[arg(long)]
    pub shape: Option<String>,
    /// One-dimensional kernel of the given binomial order (`order + 2` taps).
    #[arg(long, allow_negative_numbers = true)]
    pub order: Option<i64>,
    /// Output AAPT file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub clips_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub snr_db: Option<f64>,
    /// JSON synthesis spec; replaces the built-in four-class recipe set.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Only write audio; log-mel features are then computed on load.
    #[arg(long)]
    pub no_features: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Micro,
    Vgg41,
    Vgg42,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Built-in architecture, used unless `--model-config` is given.
    #[arg(long, value_enum, default_value = "micro")]
    pub model: Preset,
    /// JSON model configuration.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Pooling between blocks: `max`, `blurK`, `blurMxN`, `tlpfK`, `tlpfMxN`,
    /// `aps`, `aps-l2`, or a filter and `aps` joined by `+` (`tlpf5+aps`).
    #[arg(long, default_value = "max", value_parser = parse_pooling)]
    pub pooling: PoolingSpec,
    /// Dense 3x3 max-pool between the two convolutions of each block.
    #[arg(long)]
    pub ibp: bool,
    /// JSON training configuration; flags below override its fields.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub plateau_patience: Option<usize>,
    #[arg(long)]
    pub earlystop_patience: Option<usize>,
    /// Enables mixup with `lambda ~ Beta(alpha, alpha)`.
    #[arg(long)]
    pub mixup_alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Independent runs with seeds `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
}

#[derive(Args, Debug)]
pub struct EvalMapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "eval")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Eval,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Eval => Split::Eval,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Time,
    Freq,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Time => Protocol::Time,
            ProtocolArg::Freq => Protocol::Freq,
        }
    }
}

#[derive(Args, Debug)]
pub struct ShiftEvalArgs {
    /// Checkpoint directory, optionally named as `NAME=DIR`. Repeatable.
    #[arg(long, required = true)]
    pub checkpoint: Vec<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "eval")]
    pub split: SplitArg,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["time", "freq"])]
    pub protocols: Vec<ProtocolArg>,
    #[arg(long, value_delimiter = ',', default_values = ["1", "3", "5"])]
    pub magnitudes: Vec<usize>,
    /// Seeds the noise of the frequency protocol.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write SVG plots.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long, default_value = "all")]
    pub suite: Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test hook: scale kernels off unit sum so the filter checks must fail.
    #[arg(long, hide = true)]
    pub perturb_normalization: bool,
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let bad = || format!("`{s}` is not a kernel size (expected K or MxN)");
    match s.split_once('x') {
        Some((m, n)) => Ok((m.parse().map_err(|_| bad())?, n.parse().map_err(|_| bad())?)),
        None => {
            let k = s.parse().map_err(|_| bad())?;
            Ok((k, k))
        }
    }
}

pub fn parse_pooling(s: &str) -> std::result::Result<PoolingSpec, String> {
    let mut spec = PoolingSpec::max_pool(2);
    for part in s.split('+') {
        if part == "max" || part == "baseline" {
            continue;
        } else if let Some(rest) = part.strip_prefix("blur") {
            let (rows, cols) = parse_dims(rest)?;
            spec.lpf = Some(LpfSpec { rows, cols, trainable: false, shared: false });
        } else if let Some(rest) = part.strip_prefix("tlpf") {
            let (rows, cols) = parse_dims(rest)?;
            spec.lpf = Some(LpfSpec { rows, cols, trainable: true, shared: false });
        } else if part == "aps" || part == "aps-l1" {
            spec.sampler = Sampler::Aps { p: 1 };
        } else if part == "aps-l2" {
            spec.sampler = Sampler::Aps { p: 2 };
        } else {
            return Err(format!("unknown pooling component `{part}`"));
        }
    }
    spec.validate().map_err(|e| e.join("; "))?;
    Ok(spec)
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::BuildFilter(a) => build_filter(a),
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::EvalMap(a) => eval_map(a),
        Command::ShiftEval(a) => shift_eval(a),
        Command::Oracle(a) => cmd_oracle(a),
    }
}

fn positive(name: &str, v: i64) -> Result<usize> {
    if v < 2 {
        return Err(Error::Usage(format!("{name} must be at least 2 taps, got {v}")));
    }
    Ok(v as usize)
}

fn build_filter(a: BuildFilterArgs) -> Result<()> {
    let (rows, cols) = match (a.size, &a.shape, a.order) {
        (Some(size), _, _) => {
            let k = positive("--size", size)?;
            (k, k)
        }
        (_, Some(shape), _) => {
            let (m, n) = parse_dims(shape).map_err(Error::Usage)?;
            if m * n < 2 || m == 0 || n == 0 {
                return Err(Error::Usage(format!("--shape {shape} must have at least 2 taps")));
            }
            (m, n)
        }
        (_, _, Some(order)) => {
            if order < 0 {
                return Err(Error::Usage(format!("--order must be non-negative, got {order}")));
            }
            (1, order as usize + 2)
        }
        _ => unreachable!("clap requires one geometry argument"),
    };
    let kernel = binomial_kernel(rows, cols)?;
    write_tensor(&a.out, kernel.weights())?;
    let (r, c) = (integer_taps(rows), integer_taps(cols));
    let total: u64 = r.iter().sum::<u64>() * c.iter().sum::<u64>();
    println!("{rows}x{cols} binomial kernel, 1/{total} times:");
    for ri in &r {
        let row: Vec<String> = c.iter().map(|ci| (ri * ci).to_string()).collect();
        println!("  {}", row.join(" "));
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn integer_taps(len: usize) -> Vec<u64> {
    if len == 1 {
        vec![1]
    } else {
        binomial_coefficients(len - 2)
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(path) => read_json::<SynthSpec>(path)?,
        None => SynthSpec::four_class(a.clips_per_class, a.seed),
    };
    if a.spec.is_none() {
        spec.clips_per_class = a.clips_per_class;
    }
    spec.seed = a.seed;
    if let Some(snr) = a.snr_db {
        spec.noise_snr_db = snr;
    }
    let manifest = write_synthetic(&a.out, &spec, !a.no_features)?;
    let count = |s| manifest.clips.iter().filter(|c| c.split == s).count();
    println!(
        "wrote {} clips ({} train / {} val / {} eval) to {}",
        manifest.clips.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Eval),
        a.out.display()
    );
    Ok(())
}

fn train_config(a: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    let mut c = match &a.train_config {
        Some(path) => read_json::<TrainConfig>(path)?,
        None => TrainConfig::desk(seed),
    };
    c.seed = seed;
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.epochs {
        c.max_epochs = v;
    }
    if let Some(v) = a.plateau_patience {
        c.plateau_patience = v;
    }
    if let Some(v) = a.earlystop_patience {
        c.earlystop_patience = v;
    }
    if a.mixup_alpha.is_some() {
        c.mixup_alpha = a.mixup_alpha;
    }
    c.validate()?;
    Ok(c)
}

fn model_config(a: &TrainArgs, num_classes: usize) -> Result<ModelConfig> {
    let config = match &a.model_config {
        Some(path) => read_json::<ModelConfig>(path)?,
        None => {
            let base = match a.model {
                Preset::Micro => ModelConfig::micro(num_classes),
                Preset::Vgg41 => ModelConfig::vgg41(num_classes),
                Preset::Vgg42 => ModelConfig::vgg42(num_classes),
            };
            base.with_pooling(a.pooling).with_ibp(a.ibp)
        }
    };
    if config.num_classes != num_classes {
        return Err(Error::Usage(format!("model has {} classes, data has {num_classes}", config.num_classes)));
    }
    config.validate()?;
    Ok(config)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let data = DataDir::open(&a.data)?;
    let model = model_config(&a, data.manifest().num_classes())?;
    let configs: Vec<TrainConfig> = (0..a.runs).map(|i| train_config(&a, a.seed + i)).collect::<Result<_>>()?;
    let train_set = data.training_examples()?;
    let val_set = data.clip_inputs(Split::Val)?;
    let data_hash = hash_tree(data.root())?;
    for config in configs {
        let dir = a.out.join(format!("seed-{}", config.seed));
        let manifest = ExperimentManifest::new("train", config.seed)
            .setting("model", serde_json::to_string(&model).expect("serializable"))
            .setting("train", serde_json::to_string(&config).expect("serializable"))
            .input("data", data_hash.clone());
        println!("seed {}: {} training patches, {} validation clips", config.seed, train_set.len(), val_set.len());
        let net = Network::build(model.clone(), config.seed)?;
        let outcome = train(net, &train_set, &val_set, &config)?;
        for h in &outcome.history {
            println!(
                "  epoch {:>3}  loss {:.4}  val mAP {:.4}  val loss {:.4}  lr {:e}",
                h.epoch, h.train_loss, h.val_map, h.val_loss, h.lr
            );
        }
        save_checkpoint(&dir.join("checkpoint"), &outcome.checkpoint)?;
        history_table(&outcome.history).write(&dir.join("history.csv"), &manifest)?;
        write_json(&dir.join("manifest.json"), &manifest)?;
        println!("  best epoch {} -> {}", outcome.checkpoint.epoch, dir.display());
    }
    Ok(())
}

fn open_network(dir: &Path) -> Result<Network> {
    if !dir.is_dir() {
        return Err(Error::Usage(format!("checkpoint directory {} does not exist", dir.display())));
    }
    Ok(Network::from_checkpoint(&load_checkpoint(dir)?)?)
}

fn eval_map(a: EvalMapArgs) -> Result<()> {
    let data = DataDir::open(&a.data)?;
    let net = open_network(&a.checkpoint)?;
    let clips = data.clip_inputs(a.split.into())?;
    let preds = predict_clips(&net, &clips, 32)?;
    let map = mean_ap(&preds)?;
    let dp = d_prime(&preds)?;
    let manifest = ExperimentManifest::new("eval-map", 0)
        .setting("split", Split::from(a.split).name())
        .input("checkpoint", hash_tree(&a.checkpoint)?)
        .input("data", hash_tree(data.root())?);
    let mut t = Table::new(["metric", "class", "value"]);
    for (c, ap) in per_class_ap(&preds).into_iter().enumerate() {
        match ap {
            Some(v) => t.push(["ap".to_string(), data.manifest().class_names[c].clone(), format!("{v:.6}")]),
            None => eprintln!("warning: class {} has no positives; AP undefined", data.manifest().class_names[c]),
        }
    }
    t.push(["mAP".to_string(), String::new(), format!("{map:.6}")]);
    t.push(["d_prime".to_string(), String::new(), format!("{dp:.6}")]);
    t.write(&a.out, &manifest)?;
    println!("mAP {map:.4}  d' {dp:.4}");
    Ok(())
}

fn named_checkpoint(arg: &str, index: usize) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, dir)) => (name.to_string(), PathBuf::from(dir)),
        None => (format!("model{index}"), PathBuf::from(arg)),
    }
}

/// Top-class score of the first clip as the time window slides.
fn score_curve(net: &dyn Scorer, clip: &EvalClip, max_n: usize) -> Result<Vec<(f64, f64)>> {
    let mut inputs = Vec::new();
    for n in 0..=max_n {
        inputs.push(clip.spec.window(&clip.id, shift::ANCHOR_FRAME + n)?.as_input());
    }
    let scores = net.score(&inputs)?;
    let top = shift::top_class(&scores[0]);
    Ok(scores.iter().enumerate().map(|(n, s)| (n as f64, f64::from(s[top]))).collect())
}

fn shift_eval(a: ShiftEvalArgs) -> Result<()> {
    let data = DataDir::open(&a.data)?;
    let models: Vec<(String, PathBuf)> = a.checkpoint.iter().enumerate().map(|(i, c)| named_checkpoint(c, i)).collect();
    for (i, (name, _)) in models.iter().enumerate() {
        if models[..i].iter().any(|(n, _)| n == name) {
            return Err(Error::Usage(format!("checkpoint name `{name}` is used twice")));
        }
    }
    let max_n = a.magnitudes.iter().copied().max().unwrap_or(0);
    let clips: Vec<EvalClip> = data.eval_clips(a.split.into())?.into_iter().map(|(c, _)| c).collect();
    let mut eligible = clips.clone();
    for &p in &a.protocols {
        let keep: Vec<String> = shift::eligible(&clips, p.into(), max_n).iter().map(|c| c.id.clone()).collect();
        eligible.retain(|c| keep.contains(&c.id));
    }
    if a.protocols.contains(&ProtocolArg::Freq) && max_n >= shiftpool_core::patch::MEL_BANDS {
        return Err(Error::Usage(format!("frequency shifts must be below {} bands", shiftpool_core::patch::MEL_BANDS)));
    }
    if eligible.is_empty() {
        return Err(shiftpool_core::Error::Ineligible(format!(
            "no single-label clip in the {} split is long enough for shifts up to {max_n}",
            Split::from(a.split).name()
        ))
        .into());
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let ids: String = eligible.iter().map(|c| format!("{}\n", c.id)).collect();
    let list = a.out.join("eligible.txt");
    fs::write(&list, ids).map_err(|e| Error::io(&list, e))?;

    let data_hash = hash_tree(data.root())?;
    let mut all: Vec<(String, Vec<ShiftReport>)> = Vec::new();
    let mut curves = Vec::new();
    let mut base_manifest = ExperimentManifest::new("shift-eval", a.seed)
        .setting("split", Split::from(a.split).name())
        .setting("protocols", format!("{:?}", a.protocols))
        .setting("magnitudes", format!("{:?}", a.magnitudes))
        .input("data", data_hash);
    for (name, dir) in &models {
        base_manifest = base_manifest.input(&format!("checkpoint:{name}"), hash_tree(dir)?);
    }
    for (name, dir) in &models {
        let net = open_network(dir)?;
        let mut reports = Vec::new();
        for &p in &a.protocols {
            for &n in &a.magnitudes {
                let report = shift_consistency(&net, &eligible, p.into(), n, a.seed)?;
                shift_table(&report).write(&a.out.join(name).join(format!("{}-{n}.csv", report.protocol)), &base_manifest)?;
                println!("{name:>12} {:>5}-{n}: consistency {:6.2}%  MAC {:.4}", report.protocol, report.consistency_pct, report.mac);
                reports.push(report);
            }
        }
        if a.plot {
            curves.push((name.clone(), score_curve(&net, &eligible[0], max_n.min(50))?));
        }
        all.push((name.clone(), reports));
    }
    summary_table(&all).write(&a.out.join("summary.csv"), &base_manifest)?;
    if a.plot {
        let svg = line_plot_svg(
            &format!("Top-class score vs time shift ({})", eligible[0].id),
            "shift (frames)",
            "score",
            &curves,
        );
        let path = a.out.join("score_vs_shift.svg");
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        for &p in &a.protocols {
            let series: Vec<(String, Vec<(f64, f64)>)> = all
                .iter()
                .map(|(name, reports)| {
                    let pts = reports.iter().filter(|r| r.protocol == Protocol::from(p)).map(|r| (r.magnitude as f64, r.consistency_pct)).collect();
                    (name.clone(), pts)
                })
                .collect();
            let label = Protocol::from(p);
            let svg = line_plot_svg(&format!("Consistency under {label} shifts"), "magnitude", "consistency (%)", &series);
            let path = a.out.join(format!("consistency_{label}.svg"));
            fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> Result<()> {
    let cases = oracle::run(a.suite, oracle::Options { seed: a.seed, perturb_normalization: a.perturb_normalization });
    let failed: Vec<&oracle::Case> = cases.iter().filter(|c| !c.passed).collect();
    for c in &cases {
        println!("{} {:<7} {:<32} {}", if c.passed { "PASS" } else { "FAIL" }, c.suite.to_string(), c.name, c.detail);
    }
    if failed.is_empty() {
        println!("{} checks passed", cases.len());
        Ok(())
    } else {
        let names: Vec<&str> = failed.iter().map(|c| c.name.as_str()).collect();
        Err(Error::Failed(format!("{} of {} checks failed: {}", failed.len(), cases.len(), names.join(", "))))
    }
}
