//! `ssbr` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error. Everything machine-readable
//! goes to files named by flags; stdout only carries progress.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::align::{fast_prealign_volumes, l1_align_volumes, L1Config, Method};
use crate::eval::{curve_overlay_svg, run_benchmark, write_report, BenchConfig, CategoryThresholds};
use crate::fasta::{fasta_search, write_grid_csv, FastaConfig};
use crate::scorer::{score_all, write_curve, CountingScorer, LearnedScorer, OracleScorer, SliceScorer};
use crate::ssbr::{train_regressor, write_loss_trace, FeatureSpec, SliceModel, TrainConfig};
use crate::volume::{make_phantom, read_volume, write_volume, ElementType, PhantomSpec, Volume};

#[derive(Debug, Parser)]
#[command(name = "ssbr", version, about = "Slice-score z-prealignment of volumetric scans")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic phantom volumes and a manifest.
    Phantom(PhantomArgs),
    /// Train the slice regressor on unlabeled volumes.
    Train(TrainArgs),
    /// Score every slice of a volume.
    Score(ScoreArgs),
    /// Prealign a moving volume to a fixed one along z.
    Align(AlignArgs),
    /// Run the crop-pair benchmark.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 160, value_parser = clap::value_parser!(u64).range(1..))]
    pub nz: u64,
    /// Slice spacing in mm.
    #[arg(long, default_value_t = 2.5, value_parser = positive_f64)]
    pub spacing: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Volume headers, or directories containing them.
    #[arg(long, num_args = 1.., required = true)]
    pub volumes: Vec<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-3, value_parser = nonneg_f64)]
    pub lr: f64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(3..))]
    pub m: u64,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "32", value_delimiter = ',')]
    pub hidden: Vec<usize>,
    #[arg(long)]
    pub out_params: PathBuf,
    /// Loss trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleArg {
    pub slope: f64,
    pub offset: f64,
    pub sigma: f64,
}

#[derive(Debug, Args)]
#[group(id = "scorer", multiple = false)]
pub struct ScorerArgs {
    /// Trained regressor file.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Synthetic scorer `slope,offset,sigma`: score = slope * z + offset + noise.
    #[arg(long, value_parser = parse_oracle, allow_hyphen_values = true)]
    pub oracle: Option<OracleArg>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub out_csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct MethodArgs {
    /// FASTA grid samples `gx,gy,gz`.
    #[arg(long, value_parser = parse_grid, default_value = "3,3,71")]
    pub grid: [usize; 3],
    /// Common resampling spacing for the l1 method (default: the coarser curve spacing).
    #[arg(long, value_parser = positive_f64)]
    pub common_spacing: Option<f64>,
    /// Minimum overlap in samples for the l1 method.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub min_overlap: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub fixed: PathBuf,
    #[arg(long)]
    pub moving: PathBuf,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub method_args: MethodArgs,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    /// Score-curve overlay before/after alignment (needs a scorer).
    #[arg(long, requires = "scorer")]
    pub plot_svg: Option<PathBuf>,
    /// Every FASTA grid point with its SSD.
    #[arg(long)]
    pub grid_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Volume headers, or directories containing them.
    #[arg(long, num_args = 1.., required = true)]
    pub volumes: Vec<PathBuf>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub pairs: u64,
    #[arg(long, value_delimiter = ',', default_value = "fast,l1,fasta")]
    pub methods: Vec<Method>,
    #[arg(long, default_value = "5,20,80")]
    pub thresholds: CategoryThresholds,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub method_args: MethodArgs,
    /// Shift every moving origin by this many mm (true offset becomes its negative).
    #[arg(long, allow_hyphen_values = true)]
    pub z_shift: Option<f64>,
    /// Write overlay plots for the first N pairs.
    #[arg(long, default_value_t = 0)]
    pub plot_pairs: usize,
    /// Fill the elapsed_s column of pairs.csv (makes it run-dependent).
    #[arg(long)]
    pub csv_timing: bool,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        Ok(_) => Err("must be finite and > 0".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn nonneg_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        Ok(_) => Err("must be finite and >= 0".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_oracle(s: &str) -> Result<OracleArg, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [slope, offset, sigma] if v.iter().all(|x| x.is_finite()) && sigma >= 0.0 => {
            Ok(OracleArg { slope, offset, sigma })
        }
        [_, _, _] => Err("values must be finite and sigma >= 0".into()),
        _ => Err("expected slope,offset,sigma".into()),
    }
}

fn parse_grid(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c] if a > 0 && b > 0 && c > 0 => Ok([a, b, c]),
        _ => Err("expected three positive counts gx,gy,gz".into()),
    }
}

type DynScorer = Box<dyn SliceScorer<f64> + Send>;

impl ScorerArgs {
    fn build(&self, seed: u64) -> anyhow::Result<Option<DynScorer>> {
        if let Some(p) = &self.params {
            let model = SliceModel::<f64>::load(p)?;
            return Ok(Some(Box::new(LearnedScorer::new(model)?)));
        }
        Ok(self
            .oracle
            .map(|o| Box::new(OracleScorer::new(o.slope, o.offset, o.sigma, seed)) as DynScorer))
    }

    fn require(&self, seed: u64, what: &str) -> anyhow::Result<DynScorer> {
        match self.build(seed)? {
            Some(s) => Ok(s),
            None => bail!("{what} needs a scorer: pass --params or --oracle"),
        }
    }

    fn given(&self) -> bool {
        self.params.is_some() || self.oracle.is_some()
    }
}

impl MethodArgs {
    fn l1(&self) -> L1Config<f64> {
        L1Config {
            common_spacing_mm: self.common_spacing,
            min_overlap_samples: self.min_overlap.map(|n| n as usize),
        }
    }

    fn fasta(&self) -> FastaConfig<f64> {
        FastaConfig {
            grid_samples: self.grid,
            ..FastaConfig::default()
        }
    }
}

/// Expands directories to their `.mhd` headers, sorted by name.
fn collect_volume_paths(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("reading directory {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|e| e == "mhd"))
                .collect();
            if found.is_empty() {
                bail!("{}: no .mhd volumes in directory", p.display());
            }
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn load_volumes(inputs: &[PathBuf]) -> anyhow::Result<Vec<Volume<f64>>> {
    collect_volume_paths(inputs)?
        .iter()
        .map(|p| read_volume::<f64>(p).map_err(Into::into))
        .collect()
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct ManifestEntry {
    file: String,
    seed: u64,
    spec: PhantomSpec,
}

fn cmd_phantom(a: &PhantomArgs, seed: u64) -> anyhow::Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut entries = Vec::new();
    for i in 0..a.count {
        let s = seed.wrapping_add(i);
        let mut spec = PhantomSpec::standard(s);
        spec.dims[2] = a.nz as usize;
        spec.spacing[2] = a.spacing;
        let vol = make_phantom::<f64>(&spec)?;
        let file = format!("phantom_{i:03}.mhd");
        write_volume(&vol, &a.out.join(&file), ElementType::Float)?;
        println!("wrote {}", a.out.join(&file).display());
        entries.push(ManifestEntry { file, seed: s, spec });
    }
    write_json(&entries, &a.out.join("manifest.json"))
}

fn cmd_train(a: &TrainArgs, seed: u64, verbose: bool) -> anyhow::Result<()> {
    let vols = load_volumes(&a.volumes)?;
    let cfg = TrainConfig {
        batch_size: a.batch_size as usize,
        m: a.m as usize,
        learning_rate: a.lr,
        iterations: a.iters,
        seed,
        features: FeatureSpec::default(),
        hidden: a.hidden.clone(),
    };
    println!("training on {} volumes, {} iterations", vols.len(), a.iters);
    let start = Instant::now();
    let out = train_regressor(&vols, &cfg)?;
    if let (Some(first), Some(last)) = (out.trace.first(), out.trace.last()) {
        println!("loss {first:.5} -> {last:.5} in {:.1} s", start.elapsed().as_secs_f64());
    }
    if verbose {
        println!("parameters: {}", out.model.params.param_count());
    }
    out.model.save(&a.out_params)?;
    if let Some(t) = &a.trace {
        write_loss_trace(&out.trace, t)?;
    }
    Ok(())
}

fn cmd_score(a: &ScoreArgs, seed: u64) -> anyhow::Result<()> {
    let scorer = a.scorer.require(seed, "score")?;
    let vol = read_volume::<f64>(&a.volume)?;
    let curve = score_all(&scorer, &vol)?;
    write_curve(&curve, &a.out_csv)?;
    println!("scored {} slices", curve.len());
    Ok(())
}

fn curve_points(scorer: &DynScorer, v: &Volume<f64>) -> anyhow::Result<Vec<(f64, f64)>> {
    let c = score_all(scorer, v)?;
    Ok(c.z_mm().iter().copied().zip(c.scores().iter().copied()).collect())
}

fn cmd_align(a: &AlignArgs, seed: u64, verbose: bool) -> anyhow::Result<()> {
    let fixed = read_volume::<f64>(&a.fixed)?;
    let moving = read_volume::<f64>(&a.moving)?;
    let result = match a.method {
        Method::Fast | Method::L1 => {
            let scorer = CountingScorer::new(a.scorer.require(seed, a.method.as_str())?);
            let r = if a.method == Method::Fast {
                fast_prealign_volumes(&scorer, &fixed, &moving)?
            } else {
                l1_align_volumes(&scorer, &fixed, &moving, &a.method_args.l1())?
            };
            if verbose {
                println!("scorer calls: {}", scorer.calls());
            }
            r
        }
        Method::Fasta => {
            let out = fasta_search(&fixed, &moving, &a.method_args.fasta(), a.grid_csv.is_some())?;
            if let Some(p) = &a.grid_csv {
                write_grid_csv(&out.grid, p)?;
            }
            if verbose {
                println!("best translation: {:?}", out.best.t);
            }
            out.result
        }
    };
    println!(
        "{}: z offset {:.3} mm, residual {:.6}, {:.4} s",
        result.method, result.z_offset_mm, result.residual, result.elapsed_s
    );
    if let Some(p) = &a.out_json {
        write_json(&result, p)?;
    }
    if let Some(p) = &a.plot_svg {
        let scorer = a.scorer.require(seed, "--plot-svg")?;
        let f = curve_points(&scorer, &fixed)?;
        let m = curve_points(&scorer, &moving)?;
        let svg = curve_overlay_svg(
            &f,
            &m,
            result.z_offset_mm,
            &format!("{} ({:+.2} mm)", result.method, result.z_offset_mm),
        );
        fs::write(p, svg).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs, seed: u64) -> anyhow::Result<()> {
    let needs_scorer = a.methods.iter().any(|m| *m != Method::Fasta);
    let scorer: DynScorer = match a.scorer.build(seed)? {
        Some(s) => s,
        None if !needs_scorer => Box::new(OracleScorer::identity()),
        None => bail!("methods fast and l1 need a scorer: pass --params or --oracle"),
    };
    if a.plot_pairs > 0 && !a.scorer.given() {
        bail!("--plot-pairs needs a scorer: pass --params or --oracle");
    }
    let vols = load_volumes(&a.volumes)?;
    let mut methods: Vec<Method> = Vec::new();
    for m in &a.methods {
        if !methods.contains(m) {
            methods.push(*m);
        }
    }
    let cfg = BenchConfig {
        n_pairs: a.pairs as usize,
        methods,
        thresholds: a.thresholds,
        seed,
        l1: a.method_args.l1(),
        fasta: a.method_args.fasta(),
        z_shift_mm: a.z_shift,
        plot_pairs: a.plot_pairs,
    };
    println!("benchmark: {} pairs over {} volumes", cfg.n_pairs, vols.len());
    let out = run_benchmark(&vols, &scorer, &cfg)?;
    write_report(&out, &a.out_dir, a.csv_timing)?;
    for (m, s) in &out.summary {
        println!(
            "{m:>6}: mean score {:.2}  counts {:?}  median error {} mm  failures {}",
            s.mean_score,
            s.counts,
            s.median_error_mm.map_or("-".into(), |e| format!("{e:.2}")),
            s.failures
        );
    }
    println!("report written to {}", a.out_dir.display());
    Ok(())
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let work = || match &cli.command {
        Command::Phantom(a) => cmd_phantom(a, cli.seed),
        Command::Train(a) => cmd_train(a, cli.seed, cli.verbose),
        Command::Score(a) => cmd_score(a, cli.seed),
        Command::Align(a) => cmd_align(a, cli.seed, cli.verbose),
        Command::Bench(a) => cmd_bench(a, cli.seed),
    };
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .context("building thread pool")?
            .install(work),
        None => work(),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
