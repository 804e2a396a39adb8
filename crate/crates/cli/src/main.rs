//! `mse`: command-line harness for map-space exploration experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mse_core::arch::load_arch;
use mse_core::exec::{self, ExecMode};
use mse_core::experiment::{
    density_transfer, exit_code, file_stem, mapspace_report, run_network, sweep_order, write_network_run,
    MapperKind, SearchSpec,
};
use mse_core::heuristics::{DensitySweep, ReplayBuffer, SeedPolicy};
use mse_core::mapping::MappingDoc;
use mse_core::search::{exhaustive_search, ga_search, GaConfig, Operator, SearchBudget};
use mse_core::workload::load_workloads;
use mse_core::{AcceleratorConfig, DensityContext, Error, LayerWorkload, Mapping, Result};

#[derive(Parser)]
#[command(name = "mse", version, about = "Map-space exploration for spatial DNN accelerators")]
struct Cli {
    /// Worker threads for population evaluation; 1 runs sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search every layer of a workload file in order.
    Search(SearchArgs),
    /// Evaluate every loop order, applied identically at every level.
    SweepOrder(SweepArgs),
    /// Cross-evaluate mappings specialized to different input densities.
    DensityTransfer(TransferArgs),
    /// Print map-space sizes and optionally dump random evaluated points.
    Mapspace(MapspaceArgs),
    /// Exhaustively search small workloads.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct Inputs {
    /// Accelerator description (JSON).
    #[arg(long)]
    arch: PathBuf,
    /// Workload list (JSON).
    #[arg(long)]
    workloads: PathBuf,
}

#[derive(Args)]
struct Budget {
    /// Cost-model evaluations per search.
    #[arg(long, default_value_t = 5000)]
    budget_samples: u64,
    /// Advisory wall-clock limit per search, checked between evaluations.
    #[arg(long)]
    budget_seconds: Option<f64>,
}

impl Budget {
    fn get(&self) -> SearchBudget {
        SearchBudget { max_samples: self.budget_samples, max_wall_seconds: self.budget_seconds }
    }
}

#[derive(Args)]
struct GaArgs {
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    elite_fraction: Option<f64>,
    /// Turn one variation operator off (repeatable): mutate-tile,
    /// mutate-order, mutate-parallelism, crossover.
    #[arg(long = "disable-op", value_name = "NAME")]
    disable_op: Vec<Operator>,
}

impl GaArgs {
    fn config(&self, exec: ExecMode) -> GaConfig {
        let mut cfg = GaConfig { exec, ..GaConfig::default() };
        if let Some(p) = self.population {
            cfg.population_size = p;
        }
        if let Some(e) = self.elite_fraction {
            cfg.elite_fraction = e;
        }
        for op in &self.disable_op {
            cfg = cfg.without(*op);
        }
        cfg
    }
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value = "ga", value_parser = parse_mapper)]
    mapper: MapperKind,
    #[command(flatten)]
    budget: Budget,
    #[command(flatten)]
    ga: GaArgs,
    /// Random seed (repeatable); one full run per seed.
    #[arg(long = "seed", default_values_t = [0u64])]
    seeds: Vec<u64>,
    /// Seed each layer's population from the replay buffer.
    #[arg(long)]
    warm_start: bool,
    /// Pick the warm-start source by recency instead of similarity.
    #[arg(long, requires = "warm_start")]
    previous_layer: bool,
    /// Warm-start slots in the initial population (default: a quarter).
    #[arg(long)]
    seed_count: Option<usize>,
    /// Replay buffer to start from if present; updated with the best result
    /// per layer across all seeds.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Score mappings across a density sweep instead of one density.
    #[arg(long)]
    sparsity_aware: bool,
    #[arg(long, value_delimiter = ',', default_value = "1.0,0.8,0.5,0.2,0.1")]
    density_levels: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Leave the wall-clock column out of trace CSVs so reruns are byte-identical.
    #[arg(long)]
    omit_timing: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Layer id; defaults to the first workload in the file.
    #[arg(long)]
    layer: Option<String>,
    /// Base mapping (JSON). Without it a GA search supplies one.
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[command(flatten)]
    budget: Budget,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    layer: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "1.0,0.5,0.1")]
    density_levels: Vec<f64>,
    #[command(flatten)]
    budget: Budget,
    #[command(flatten)]
    ga: GaArgs,
    #[arg(long = "seed", default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MapspaceArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Number of random legal points to evaluate and dump as CSV.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for the sample CSVs; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Refuse canonical spaces larger than this.
    #[arg(long, default_value_t = mse_core::search::DEFAULT_ORACLE_CAP)]
    cap: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mapper(s: &str) -> std::result::Result<MapperKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = match cli.jobs {
        Some(0) => return report(&Error::InvalidConfig("--jobs must be positive".into())),
        Some(1) => ExecMode::Sequential,
        Some(n) => {
            exec::set_workers(n);
            ExecMode::Parallel
        }
        None => ExecMode::Parallel,
    };
    let result = match cli.command {
        Command::Search(args) => search(args, exec),
        Command::SweepOrder(args) => sweep(args, exec),
        Command::DensityTransfer(args) => transfer(args, exec),
        Command::Mapspace(args) => mapspace(args),
        Command::Oracle(args) => oracle(args, exec),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> ExitCode {
    let code = exit_code(e);
    let doc = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": code } });
    eprintln!("{doc}");
    ExitCode::from(code as u8)
}

fn load(inputs: &Inputs) -> Result<(AcceleratorConfig, Vec<LayerWorkload>)> {
    let a = load_arch(&inputs.arch)?;
    let ws = load_workloads(&inputs.workloads)?;
    if ws.is_empty() {
        return Err(Error::InvalidConfig(format!("{} lists no workloads", inputs.workloads.display())));
    }
    Ok((a, ws))
}

fn pick<'a>(ws: &'a [LayerWorkload], layer: Option<&str>) -> Result<&'a LayerWorkload> {
    match layer {
        None => Ok(&ws[0]),
        Some(id) => ws
            .iter()
            .find(|w| w.id() == id)
            .ok_or_else(|| Error::InvalidConfig(format!("no layer named {id:?}"))),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn search(args: SearchArgs, exec: ExecMode) -> Result<()> {
    let (a, ws) = load(&args.inputs)?;
    let mut spec = SearchSpec::new(args.mapper, args.budget.get(), args.seeds.clone());
    spec.ga = args.ga.config(exec);
    spec.seed_count = args.seed_count;
    if args.warm_start {
        spec.warm_start = Some(if args.previous_layer { SeedPolicy::PreviousLayer } else { SeedPolicy::Similarity });
    }
    if args.sparsity_aware {
        spec.sparsity_aware = Some(DensitySweep::inverse_weighted(args.density_levels.clone())?);
    }
    let initial = match &args.replay {
        Some(p) if p.exists() => Some(ReplayBuffer::load(p, &a)?),
        _ => None,
    };
    let run = run_network(&ws, &a, &spec, initial.as_ref())?;
    write_network_run(&args.out, &run, &a, &spec, args.omit_timing)?;
    if let Some(p) = &args.replay {
        let mut merged = initial.unwrap_or_else(|| ReplayBuffer::new(&a));
        for r in &run.runs {
            for (w, o) in ws.iter().zip(&r.outcomes) {
                let m = Mapping::from_doc(&o.mapping, w, &a)?;
                merged.record_result(w, &a, &m, &o.report)?;
            }
        }
        merged.save(p, &a)?;
    }
    for r in &run.runs {
        for o in &r.outcomes {
            println!("seed {} {}: EDP {:.6e} ({} samples)", r.seed, o.layer, o.best_edp, o.samples_used);
        }
    }
    Ok(())
}

fn sweep(args: SweepArgs, exec: ExecMode) -> Result<()> {
    let (a, ws) = load(&args.inputs)?;
    let w = pick(&ws, args.layer.as_deref())?;
    let ctx = DensityContext::for_workload(w);
    let base = match &args.mapping {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            let doc: MappingDoc = serde_json::from_str(&text)
                .map_err(|e| Error::Parse { path: p.clone(), line: e.line(), column: e.column(), message: e.to_string() })?;
            Mapping::from_doc(&doc, w, &a)?
        }
        None => {
            let cfg = GaConfig { exec, ..GaConfig::default() }.with_seed(args.seed);
            let trace = ga_search(w, &a, &ctx, args.budget.get(), &cfg, &[])?;
            trace.best_mapping().cloned().ok_or_else(|| Error::InvalidConfig("budget too small".into()))?
        }
    };
    let s = sweep_order(w, &a, &base, &ctx)?;
    let stem = file_stem(w.id());
    write(&args.out.join(format!("{stem}_orders.csv")), &s.rows_csv())?;
    write(&args.out.join(format!("{stem}_buckets.csv")), &s.histogram_csv())?;
    let base_doc = serde_json::to_string_pretty(&base.to_doc(w, &a)).expect("mapping serializes");
    write(&args.out.join(format!("{stem}_base_mapping.json")), &base_doc)?;
    println!("{}: {} distinct EDP values over {} orders", w.id(), s.distinct_edps(), s.rows.len());
    Ok(())
}

fn transfer(args: TransferArgs, exec: ExecMode) -> Result<()> {
    let (a, ws) = load(&args.inputs)?;
    let w = pick(&ws, args.layer.as_deref())?;
    let cfg = args.ga.config(exec);
    let t = density_transfer(w, &a, &args.density_levels, args.budget.get(), &args.seeds, &cfg, true)?;
    let stem = file_stem(w.id());
    write(&args.out.join(format!("{stem}_transfer.csv")), &t.to_csv())?;
    let mut doc = serde_json::to_value(&t).expect("transfer serializes");
    doc["diagonal_dominant_cells"] = t.diagonal_dominant_cells().into();
    doc["aware_geomean_ratio"] = serde_json::json!(t.aware_geomean_ratio());
    write(&args.out.join(format!("{stem}_transfer.json")), &serde_json::to_string_pretty(&doc).unwrap())?;
    let n = t.densities.len();
    println!("{}: diagonal best in {}/{} cells", w.id(), t.diagonal_dominant_cells(), n * n);
    if let Some(r) = t.aware_geomean_ratio() {
        println!("sparsity-aware geomean ratio {r:.4}");
    }
    Ok(())
}

fn mapspace(args: MapspaceArgs) -> Result<()> {
    let (a, ws) = load(&args.inputs)?;
    for w in &ws {
        let (r, csv) = mapspace_report(w, &a, args.sample.unwrap_or(0), args.seed)?;
        println!("{}", w.id());
        println!("  tile_count     {}", r.size.tile_count);
        println!("  order_count    {}", r.size.order_count);
        println!("  parallel_count {}", r.size.parallel_count);
        println!("  total          {}", r.size.total);
        println!("  canonical      {}", r.canonical_size);
        if args.sample.is_some() {
            match &args.out {
                Some(dir) => write(&dir.join(format!("{}_samples.csv", file_stem(w.id()))), &csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn oracle(args: OracleArgs, exec: ExecMode) -> Result<()> {
    let (a, ws) = load(&args.inputs)?;
    let mut results = Vec::new();
    for w in &ws {
        let r = exhaustive_search(w, &a, &DensityContext::for_workload(w), args.cap, exec)?;
        println!("{}: EDP {:.6e} after {} evaluations", w.id(), r.report.edp, r.evaluated);
        results.push(serde_json::json!({
            "layer": w.id(),
            "evaluated": r.evaluated,
            "space_size": r.space_size.to_string(),
            "mapping": r.mapping.to_doc(w, &a),
            "report": r.report,
        }));
    }
    if let Some(dir) = &args.out {
        write(&dir.join("oracle.json"), &serde_json::to_string_pretty(&results).unwrap())?;
    }
    Ok(())
}
