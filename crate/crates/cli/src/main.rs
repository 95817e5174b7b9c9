//! Command-line front end: collection, the individual analyses, the full
//! validation pipeline and multi-group reports.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use latentcheck::assume::run_battery_matrix;
use latentcheck::cfa::{fit_cfa, load_model, CfaModel};
use latentcheck::collect::{build_temperature_schedule, collect, sweep_collect, Collection, CollectionConfig};
use latentcheck::efa::{efa, factor_graph, graph_svg, scree_svg};
use latentcheck::instrument::{
    import_human_csv, load_instrument, reverse_score, HumanImportFilter, Instrument, ResponseMatrix,
};
use latentcheck::numcore::{sample_factor_model, FactorModelSpec};
use latentcheck::pipeline::{
    compare_groups, run_pipeline, sweep_study, write_verdict, CompareOptions, GroupData, PipelineConfig, Verdict,
};

#[derive(Parser)]
#[command(name = "latentcheck", version, about = "Latent-structure checks for questionnaire responses")]
struct Cli {
    /// Seed for every randomized step (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Query a chat endpoint and save the parsed response matrices.
    Collect(CollectArgs),
    /// Collect (or load) one matrix per fixed temperature and summarise EFA per temperature.
    Sweep(SweepArgs),
    /// Run the assumption battery.
    Screen(DataArgs),
    /// Exploratory factor analysis with oblique rotation.
    Efa(EfaArgs),
    /// Confirmatory factor analysis of the instrument's structure.
    Cfa(CfaArgs),
    /// Compare groups: verdicts, descriptive and correlation tables.
    Compare(CompareArgs),
    /// Full validation of one response matrix.
    Pipeline(PipelineArgs),
    /// Generate synthetic responses from the instrument's theoretical structure.
    Synth(SynthArgs),
    /// Summarise saved verdicts as a Markdown table.
    Report(ReportArgs),
}

#[derive(Args)]
struct CollectArgs {
    /// Instrument definitions, presented in this order.
    #[arg(long = "instrument", required = true)]
    instruments: Vec<PathBuf>,
    /// Model identifier sent to the endpoint.
    #[arg(long)]
    model: Option<String>,
    /// Number of responses to request.
    #[arg(long)]
    n: Option<usize>,
    /// Grid step for the random temperature schedule.
    #[arg(long, default_value_t = 0.01, conflicts_with = "temp_fixed")]
    temp_step: f64,
    /// Use this temperature for every request.
    #[arg(long)]
    temp_fixed: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long = "instrument", required = true)]
    instrument: PathBuf,
    /// Existing data as TEMP=CSV; when absent the data are collected.
    #[arg(long = "data")]
    data: Vec<String>,
    /// Temperatures to collect at.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])]
    temps: Vec<f64>,
    #[arg(long)]
    model: Option<String>,
    /// Responses per temperature when collecting.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    instrument: PathBuf,
    /// Response matrix in the CSV layout written by `collect` and `synth`.
    #[arg(long)]
    responses: PathBuf,
    /// Group label used in outputs.
    #[arg(long, default_value = "sample")]
    group: String,
}

#[derive(Args)]
struct EfaArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of factors; the Kaiser count by default.
    #[arg(long)]
    factors: Option<usize>,
}

#[derive(Args)]
struct CfaArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Factor structure file; the instrument's dimensions by default.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Run EFA even when the CFA supports the theoretical structure.
    #[arg(long)]
    force_efa: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long = "instrument", required = true)]
    instruments: Vec<PathBuf>,
    /// NAME=CSV[,CSV...], one CSV per instrument in order.
    #[arg(long = "group")]
    groups: Vec<String>,
    /// Human questionnaire export covering all instruments, imported as group `human`.
    #[arg(long)]
    human: Option<PathBuf>,
    #[arg(long, default_value = "human")]
    reference: String,
    /// Dimension correlated with the dimensions of the other instruments.
    #[arg(long)]
    anchor: Option<String>,
    #[arg(long)]
    force_efa: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    instrument: PathBuf,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 0.7)]
    loading: f64,
    /// Correlation between factors.
    #[arg(long, default_value_t = 0.2)]
    phi: f64,
    /// Output CSV; `<out>/synth-<instrument>.csv` by default.
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// verdict.json files, or directories searched recursively for them.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Collect(a) => cmd_collect(a, &config, out),
        Command::Sweep(a) => cmd_sweep(a, &config, out),
        Command::Screen(a) => cmd_screen(a, &config, out),
        Command::Efa(a) => cmd_efa(a, &config, out),
        Command::Cfa(a) => cmd_cfa(a, &config, out),
        Command::Compare(a) => cmd_compare(a, config, out),
        Command::Pipeline(a) => cmd_pipeline(a, config, out),
        Command::Synth(a) => cmd_synth(a, &config, out),
        Command::Report(a) => cmd_report(a, out),
    }
}

fn read_matrix(path: &Path, group: &str, inst: &Instrument) -> Result<ResponseMatrix> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ResponseMatrix::read_csv(f, group, inst).with_context(|| format!("reading {}", path.display()))
}

fn write_matrix(path: &Path, m: &ResponseMatrix) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    m.write_csv(BufWriter::new(File::create(path)?))?;
    Ok(())
}

fn load(args: &DataArgs) -> Result<(Instrument, ResponseMatrix)> {
    let inst = load_instrument(&args.instrument)?;
    let m = read_matrix(&args.responses, &args.group, &inst)?;
    Ok((inst, m))
}

fn model_for(path: Option<&Path>, inst: &Instrument) -> Result<CfaModel> {
    Ok(match path {
        Some(p) => load_model(p)?,
        None => CfaModel::from_instrument(inst)?,
    })
}

fn write(path: PathBuf, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn collection_config(config: &PipelineConfig, model: Option<String>, n: Option<usize>) -> Result<CollectionConfig> {
    let mut c = config.collection.clone().unwrap_or_default();
    if let Some(m) = model {
        c.model = m;
    }
    if let Some(n) = n {
        c.target_n = n;
    }
    if c.model.is_empty() {
        bail!("no model given (use --model or [collection].model in the config)");
    }
    if c.target_n == 0 {
        bail!("no sample size given (use --n or [collection].target_n in the config)");
    }
    Ok(c)
}

fn save_collection(c: &Collection, instruments: &[Instrument], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (m, inst) in c.matrices.iter().zip(instruments) {
        let path = dir.join(format!("{}.csv", inst.id));
        write_matrix(&path, m)?;
        println!("{}", path.display());
    }
    write(dir.join("collection_log.json"), serde_json::to_string_pretty(&c.log)?)?;
    log::info!("{} valid of {} requested", c.log.valid, c.log.requested);
    if let Some(w) = &c.log.warning {
        log::warn!("{w}");
    }
    Ok(())
}

fn cmd_collect(a: CollectArgs, config: &PipelineConfig, out: &Path) -> Result<()> {
    let instruments = a.instruments.iter().map(|p| load_instrument(p)).collect::<latentcheck::Result<Vec<_>>>()?;
    let mut c = collection_config(config, a.model, a.n)?;
    c.temperature_schedule = match a.temp_fixed {
        Some(t) => vec![t; c.target_n],
        None => build_temperature_schedule(c.target_n, a.temp_step, config.seed)?,
    };
    let collection = collect(&c, &instruments)?;
    save_collection(&collection, &instruments, &out.join(&c.model))
}

fn cmd_sweep(a: SweepArgs, config: &PipelineConfig, out: &Path) -> Result<()> {
    let inst = load_instrument(&a.instrument)?;
    let model = CfaModel::from_instrument(&inst)?;
    let mut matrices = Vec::new();
    if a.data.is_empty() {
        let c = collection_config(config, a.model, a.n)?;
        let client = c.http_client()?;
        for (t, coll) in sweep_collect(&client, &c, std::slice::from_ref(&inst), &a.temps)? {
            save_collection(&coll, std::slice::from_ref(&inst), &out.join(format!("t{t:.2}")))?;
            matrices.push((t, coll.matrices.into_iter().next().expect("one matrix per instrument")));
        }
    } else {
        for spec in &a.data {
            let (t, path) = spec.split_once('=').with_context(|| format!("expected TEMP=CSV, got {spec}"))?;
            let t: f64 = t.parse().with_context(|| format!("bad temperature in {spec}"))?;
            matrices.push((t, read_matrix(Path::new(path), &format!("t{t}"), &inst)?));
        }
    }
    let study = sweep_study(&matrices, &inst, &model, config)?;
    write(out.join("sweep.md"), study.to_markdown())?;
    write(out.join("sweep.json"), serde_json::to_string_pretty(&study)?)?;
    print!("{}", study.to_markdown());
    Ok(())
}

fn cmd_screen(a: DataArgs, config: &PipelineConfig, out: &Path) -> Result<()> {
    let (inst, m) = load(&a)?;
    let report = run_battery_matrix(&reverse_score(&m, &inst)?, &config.battery);
    write(out.join("assumptions.md"), report.to_markdown())?;
    write(out.join("assumptions.json"), serde_json::to_string_pretty(&report)?)?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn cmd_efa(a: EfaArgs, config: &PipelineConfig, out: &Path) -> Result<()> {
    let (inst, m) = load(&a.data)?;
    let scored = reverse_score(&m, &inst)?;
    let mut opts = config.efa.clone();
    if a.factors.is_some() {
        opts.factors = a.factors;
    }
    let sol = efa(&scored.correlation()?, scored.item_ids(), &opts)?;
    let graph = factor_graph(&sol, config.loading_threshold);
    let names: Vec<String> = inst.dimensions.iter().map(|d| d.name.clone()).collect();
    write(out.join("efa.json"), serde_json::to_string_pretty(&sol)?)?;
    write(out.join("graph.json"), serde_json::to_string_pretty(&graph)?)?;
    write(out.join("scree.svg"), scree_svg(&sol.eigenvalues, &format!("{} scree", a.data.group)))?;
    write(out.join("graph.svg"), graph_svg(&graph, inst.assignment(), &names, &a.data.group))?;
    println!("Kaiser count {}, {} factor(s) extracted", sol.kaiser_count, sol.k);
    Ok(())
}

fn cmd_cfa(a: CfaArgs, config: &PipelineConfig, out: &Path) -> Result<()> {
    let (inst, m) = load(&a.data)?;
    let model = model_for(a.model.as_deref(), &inst)?;
    let scored = reverse_score(&m, &inst)?;
    let s = model.select(&scored.covariance()?, scored.item_ids())?;
    let fit = fit_cfa(&s, scored.n(), &model, &config.cfa)?;
    write(out.join("cfa.json"), fit.to_json())?;
    println!("{}", fit.interpretation);
    Ok(())
}

fn cmd_pipeline(a: PipelineArgs, mut config: PipelineConfig, out: &Path) -> Result<()> {
    config.force_efa |= a.force_efa;
    let (inst, m) = load(&a.data)?;
    let model = model_for(a.model.as_deref(), &inst)?;
    let v = run_pipeline(&m, &inst, &model, &config)?;
    for p in write_verdict(&v, &inst, out)? {
        println!("{}", p.display());
    }
    println!("stage: {}", v.stage);
    for line in &v.summary {
        println!("{line}");
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs, mut config: PipelineConfig, out: &Path) -> Result<()> {
    config.force_efa |= a.force_efa;
    let instruments = a.instruments.iter().map(|p| load_instrument(p)).collect::<latentcheck::Result<Vec<_>>>()?;
    let mut groups = Vec::new();
    if let Some(path) = &a.human {
        let imported = import_human_csv(path, &instruments, &HumanImportFilter::default())?;
        log::info!("human export: {} of {} rows retained", imported.retained(), imported.input_rows);
        let matrices = imported.matrices.into_iter().map(|m| m.with_group("human")).collect();
        groups.push(GroupData { group: "human".into(), matrices });
    }
    for spec in &a.groups {
        let (name, files) = spec.split_once('=').with_context(|| format!("expected NAME=CSV[,CSV...], got {spec}"))?;
        let files: Vec<&str> = files.split(',').collect();
        if files.len() != instruments.len() {
            bail!("group {name}: {} file(s) for {} instrument(s)", files.len(), instruments.len());
        }
        let matrices = files
            .iter()
            .zip(&instruments)
            .map(|(f, inst)| read_matrix(Path::new(f), name, inst))
            .collect::<Result<Vec<_>>>()?;
        groups.push(GroupData { group: name.to_string(), matrices });
    }
    if groups.len() < 2 {
        bail!("at least two groups are needed");
    }
    let options = CompareOptions { reference: a.reference, anchor: a.anchor, ..CompareOptions::default() };
    let report = compare_groups(&groups, &instruments, &config, &options, out)?;
    println!("{}", report.dir.display());
    print!("{}", report.descriptives.to_markdown());
    Ok(())
}

fn cmd_synth(a: SynthArgs, config: &PipelineConfig, out: &Path) -> Result<()> {
    let inst = load_instrument(&a.instrument)?;
    let spec = FactorModelSpec::simple(inst.assignment(), inst.dimensions.len(), a.loading, a.phi);
    let rows = sample_factor_model(&spec, a.n, config.seed, inst.scale_min(), inst.scale_max())?;
    // The generator produces keyed scores; store them as raw answers.
    let scored = ResponseMatrix::unlabelled("synthetic", &inst, rows)?;
    let raw = reverse_score(&scored, &inst)?;
    let path = a.file.unwrap_or_else(|| out.join(format!("synth-{}.csv", inst.id)));
    write_matrix(&path, &raw)?;
    println!("{}", path.display());
    Ok(())
}

fn collect_verdicts(path: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.is_dir() || e.file_name().is_some_and(|n| n == "verdict.json") {
                collect_verdicts(&e, found)?;
            }
        }
    } else {
        found.push(path.to_path_buf());
    }
    Ok(())
}

fn cmd_report(a: ReportArgs, out: &Path) -> Result<()> {
    let mut files = Vec::new();
    for p in &a.paths {
        collect_verdicts(p, &mut files)?;
    }
    if files.is_empty() {
        bail!("no verdict.json found");
    }
    let mut md = String::from("| Group | Instrument | n | Stage | Kaiser | CFA |\n|---|---|---|---|---|---|\n");
    let mut notes = Vec::new();
    for f in &files {
        let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        let v: Verdict = serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))?;
        let kaiser = v.efa.as_ref().map_or("NA".to_string(), |e| e.kaiser_count.to_string());
        let cfa = v.cfa.as_ref().map_or("NA".to_string(), |c| match c.indices {
            Some(ix) => format!("SRMR {:.2}, RMSEA {:.2}, CFI {:.2}", ix.srmr, ix.rmsea, ix.cfi),
            None => c.status.to_string(),
        });
        md.push_str(&format!("| {} | {} | {} | {} | {} | {} |\n", v.group, v.instrument_id, v.n, v.stage, kaiser, cfa));
        notes.extend(v.summary);
    }
    if !notes.is_empty() {
        md.push('\n');
        for n in notes {
            md.push_str(&format!("- {n}\n"));
        }
    }
    write(out.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}
