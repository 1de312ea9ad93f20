//! Command-line interface. Exit codes: 0 success, 2 usage or validation
//! errors, 3 runtime failures.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::explain::{
    explain, CamConfig, ExplainerConfig, Method, OcclusionConfig, SurrogateConfig,
};
use crate::harness::{
    adapt, compare_masked_background, compare_strategies, evaluate_dataset, initial_net,
    load_split, plot, read_report, render_table, run_split, EvaluateConfig, ExperimentConfig,
    RunOptions,
};
use crate::io::{
    load_heatmap, load_image, load_mask, render_overlay, resample_bilinear, save_heatmap,
    save_overlay, sidecar_path, HeatmapFile,
};
use crate::metric::{normalize_explanation, score, ActivationMap, Grid};
use crate::net::{Strategy, TinyNet};
use crate::synth::{generate, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Worker thread count; 0 or unset means one per core.
pub const THREADS_ENV: &str = "OBALEX_THREADS";

#[derive(Debug, Parser)]
#[command(name = "obalex", version, about = "Score how well explanations align with object masks")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one heatmap against one mask.
    Score {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        heatmap: PathBuf,
        /// Also write the JSON result here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Bilinearly resample the heatmap to the mask size when they differ.
        #[arg(long)]
        resample: bool,
    },
    /// Explain one prediction of a saved model.
    Explain(ExplainArgs),
    /// Generate a synthetic dataset directory.
    GenData {
        /// JSON dataset spec; defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train toy-vgg and track alignment per epoch.
    TrainDemo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a dataset with a saved model and/or precomputed heatmaps.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a report.json as a table and draw its curves.
    Report {
        #[arg(long)]
        report: PathBuf,
        /// Chart path; defaults to curves.png next to the report.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// occlusion, gradcam, gradcampp or surrogate.
    #[arg(long)]
    pub method: String,
    /// Target class.
    #[arg(long = "class")]
    pub class: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Object mask; when given, the score is printed and drawn.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub fill: Option<f64>,
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub exhaustive: bool,
}

/// train-demo config: the main experiment plus optional comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDemoConfig {
    pub experiment: ExperimentConfig,
    /// Strategies compared after the output-layer adaptation phase.
    #[serde(default)]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub masked_background: bool,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

/// Validation problems exit 2, everything else exits 3.
fn classify(e: Error) -> Failure {
    let code = match e {
        Error::InvalidConfig(_) | Error::InvalidSpec(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

/// Input problems in `score` and `explain` are all exit 2.
fn input_error(e: Error) -> Failure {
    let message = match &e {
        Error::EmptyExplanation => {
            "the explainer found no positive evidence for the target class; the heatmap is all zero"
                .to_string()
        }
        _ => e.to_string(),
    };
    Failure {
        code: EXIT_USAGE,
        message,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    if let Err(f) = configure_threads() {
        eprintln!("error: {}", f.message);
        return f.code;
    }
    let result = match cli.command {
        Command::Score {
            mask,
            heatmap,
            out,
            resample,
        } => cmd_score(&mask, &heatmap, out.as_deref(), resample),
        Command::Explain(args) => cmd_explain(&args),
        Command::GenData { config, out } => cmd_gen_data(config.as_deref(), &out),
        Command::TrainDemo { config, out } => cmd_train_demo(&config, &out),
        Command::Evaluate { config, out } => cmd_evaluate(&config, &out),
        Command::Report { report, plot } => cmd_report(&report, plot.as_deref()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::usage(format!("{THREADS_ENV} must be a count, got `{raw}`")))?;
    // A pool that already exists (repeated calls in one process) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Reads a JSON config; errors name the file and the offending field path.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        if field == "." {
            format!("{}: {}", path.display(), e.inner())
        } else {
            format!("{}: field `{field}`: {}", path.display(), e.inner())
        }
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| classify(Error::io(path, e)))
}

fn cmd_score(mask: &Path, heatmap: &Path, out: Option<&Path>, resample: bool) -> Result<(), Failure> {
    let a = load_mask(mask).map_err(input_error)?;
    let mut raw = load_heatmap(heatmap).map_err(input_error)?.decode();
    if resample && raw.dims() != (a.height(), a.width()) {
        raw = resample_bilinear(&raw, a.height(), a.width());
    }
    let b = normalize_explanation(&raw);
    let s = score(&a, &b).map_err(input_error)?;
    let json = serde_json::json!({
        "score": s,
        "mask": mask.display().to_string(),
        "heatmap": heatmap.display().to_string(),
    });
    let text = serde_json::to_string(&json).expect("json");
    println!("{text}");
    if let Some(p) = out {
        write_file(p, format!("{text}\n").as_bytes())?;
    }
    Ok(())
}

fn explainer_from_args(args: &ExplainArgs) -> Result<ExplainerConfig, Failure> {
    let method: Method = args.method.parse().map_err(input_error)?;
    let given = |flag: &str, set: bool| (set, flag.to_string());
    let flags = [
        given("--patch", args.patch.is_some()),
        given("--stride", args.stride.is_some()),
        given("--fill", args.fill.is_some()),
        given("--layer", args.layer.is_some()),
        given("--grid", args.grid.is_some()),
        given("--samples", args.samples.is_some()),
        given("--lambda", args.lambda.is_some()),
        given("--seed", args.seed.is_some()),
        given("--exhaustive", args.exhaustive),
    ];
    let allowed: &[&str] = match method {
        Method::Occlusion => &["--patch", "--stride", "--fill"],
        Method::Gradcam | Method::Gradcampp => &["--layer"],
        Method::Surrogate => &["--grid", "--samples", "--lambda", "--seed", "--exhaustive"],
    };
    if let Some((_, flag)) = flags
        .iter()
        .find(|(set, f)| *set && !allowed.contains(&f.as_str()))
    {
        return Err(Failure::usage(format!("{flag} does not apply to method {method}")));
    }
    let config = match method {
        Method::Occlusion => ExplainerConfig::Occlusion(OcclusionConfig {
            patch: args.patch,
            stride: args.stride,
            fill: args.fill.unwrap_or(OcclusionConfig::default().fill),
        }),
        Method::Gradcam => ExplainerConfig::Gradcam(CamConfig { layer: args.layer }),
        Method::Gradcampp => ExplainerConfig::Gradcampp(CamConfig { layer: args.layer }),
        Method::Surrogate => {
            let d = SurrogateConfig::default();
            ExplainerConfig::Surrogate(SurrogateConfig {
                grid: args.grid.unwrap_or(d.grid),
                samples: args.samples.unwrap_or(d.samples),
                lambda: args.lambda.unwrap_or(d.lambda),
                seed: args.seed.unwrap_or(d.seed),
                exhaustive: args.exhaustive,
            })
        }
    };
    config.validate().map_err(input_error)?;
    Ok(config)
}

fn cmd_explain(args: &ExplainArgs) -> Result<(), Failure> {
    let config = explainer_from_args(args)?;
    let net = TinyNet::load(&args.model).map_err(input_error)?;
    let image = load_image(&args.image).map_err(input_error)?;
    let mask = args
        .mask
        .as_ref()
        .map(load_mask)
        .transpose()
        .map_err(input_error)?;
    let map = explain(&config, &net, &image, args.class).map_err(input_error)?;
    let s = match &mask {
        Some(m) => Some(score(m, &map).map_err(input_error)?),
        None => None,
    };

    let stem = args
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    fs::create_dir_all(&args.out).map_err(|e| input_error(Error::io(&args.out, e)))?;
    let heatmap_path = args.out.join(format!("{stem}_{}.png", config.name()));
    let overlay_path = args.out.join(format!("{stem}_{}_overlay.png", config.name()));
    save_heatmap(&heatmap_path, &HeatmapFile::encode(map.grid(), &stem)).map_err(classify)?;
    let outline = match mask {
        Some(m) => m,
        None => ActivationMap::new(Grid::filled(image.height, image.width, 0.0))
            .expect("zero mask is valid"),
    };
    let overlay = render_overlay(&image, &map, &outline, s).map_err(input_error)?;
    save_overlay(&overlay_path, &overlay).map_err(classify)?;

    let mut out = serde_json::json!({
        "heatmap": heatmap_path.display().to_string(),
        "sidecar": sidecar_path(&heatmap_path).display().to_string(),
        "overlay": overlay_path.display().to_string(),
    });
    if let Some(s) = s {
        out["score"] = serde_json::json!(s);
    }
    println!("{}", serde_json::to_string(&out).expect("json"));
    Ok(())
}

fn cmd_gen_data(config: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let spec: SynthSpec = match config {
        Some(p) => read_config(p).map_err(Failure::usage)?,
        None => SynthSpec::default(),
    };
    spec.validate().map_err(classify)?;
    let samples = generate(&spec).map_err(classify)?;
    crate::io::export_dataset(out, &samples).map_err(classify)?;
    println!("{} samples written to {}", samples.len(), out.display());
    Ok(())
}

fn cmd_train_demo(config_path: &Path, out: &Path) -> Result<(), Failure> {
    let demo: TrainDemoConfig = read_config(config_path).map_err(Failure::usage)?;
    let config = &demo.experiment;
    config.validate().map_err(classify)?;
    let split = load_split(config).map_err(classify)?;
    let net = initial_net(config, &split).map_err(classify)?;

    run_split(net.clone(), &split, config, RunOptions::default(), Some(out)).map_err(classify)?;
    if !demo.strategies.is_empty() {
        let base = adapt(net, &split, config).map_err(classify)?;
        compare_strategies(
            &base,
            &split,
            &demo.strategies,
            config,
            Some(&out.join("strategies")),
        )
        .map_err(classify)?;
    }
    if demo.masked_background {
        compare_masked_background(&split, config, Some(&out.join("masked_background")))
            .map_err(classify)?;
    }
    println!("report written to {}", out.join("report.json").display());
    Ok(())
}

fn cmd_evaluate(config_path: &Path, out: &Path) -> Result<(), Failure> {
    let config: EvaluateConfig = read_config(config_path).map_err(Failure::usage)?;
    evaluate_dataset(&config, Some(out)).map_err(classify)?;
    println!("report written to {}", out.join("report.json").display());
    Ok(())
}

fn cmd_report(path: &Path, plot_path: Option<&Path>) -> Result<(), Failure> {
    let report = read_report(path).map_err(|e| Failure::usage(e.to_string()))?;
    print!("{}", render_table(&report));
    let target = match plot_path {
        Some(p) => p.to_path_buf(),
        None => path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("curves.png"),
    };
    plot::save_curves(&target, &report).map_err(classify)?;
    println!("curves written to {}", target.display());
    Ok(())
}
