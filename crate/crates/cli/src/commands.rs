use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use clap::{Args, ValueEnum};
use gta_core::costmodel::{plan_cost, simd_gemm_cost, vector_baseline_cost};
use gta_core::geometry::{enumerate_arrangements, squarest_arrangement};
use gta_core::mapper::plan;
use gta_core::ops::reference_gemm;
use gta_core::scheduler::{
    self as sched, scatter_export, schedule_workload, CostSource, OpSchedule, ScheduleOptions, ScheduleReport,
    WorkloadSchedule,
};
use gta_core::syssim::{simulate_with, CsvTrace, NoTrace};
use gta_core::verify::{run_all, Fault, VerifyOptions};
use gta_core::workloads::{catalog, find, load_workloads, to_toml, OpKind, Workload};
use gta_core::{
    ArrayShape, CostEstimate, Dataflow, GemmOperands, Knobs, PGemmOp, PrecisionSpec, SimResult, ThroughputTable,
    TilingDirection, Timing,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::RunConfig;
use crate::GlobalArgs;

/// Simulations above this many limb MACs are refused; use `cost` instead.
const SIM_LIMB_MAC_LIMIT: u64 = 1 << 26;

pub enum Status {
    Ok,
    VerificationFailed,
}

/// Resolved configuration shared by the subcommands.
pub struct Context {
    pub run: RunConfig,
    pub table: ThroughputTable,
    pub workloads: Vec<Workload>,
}

impl Context {
    pub fn new(global: &GlobalArgs) -> Result<Self> {
        let mut run = match &global.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let gta = &mut run.gta;
        if let Some(v) = global.lanes {
            gta.lanes = v;
        }
        if let Some(v) = global.mpra_rows {
            gta.mpra_rows = v;
        }
        if let Some(v) = global.mpra_cols {
            gta.mpra_cols = v;
        }
        if let Some(v) = global.mask_width {
            gta.mask_width_bits = v;
        }
        if let Some(v) = global.reconfig_cycles {
            gta.reconfig_cycles = v;
        }
        if let Some(path) = &global.calibration {
            run.cost.calibration = Some(path.clone());
        } else if run.cost.calibration.is_none() {
            run.cost.calibration = std::env::var_os("GTA_CALIBRATION").filter(|v| !v.is_empty()).map(PathBuf::from);
        }
        run.validate()?;
        let table = run.table()?;
        let workloads = match &global.workloads {
            Some(path) => load_workloads(path)?,
            None => catalog(),
        };
        Ok(Context { run, table, workloads })
    }

    fn workload(&self, name: &str) -> Result<&Workload> {
        Ok(find(&self.workloads, name)?)
    }
}

#[derive(Debug, Args)]
pub struct OpArgs {
    /// Inline operator, e.g. M=64,N=64,K=64,prec=int8.
    #[arg(long, conflicts_with = "workload")]
    pub op: Option<PGemmOp>,
    /// Workload name from the catalog.
    #[arg(long)]
    pub workload: Option<String>,
    /// Operator label inside the workload.
    #[arg(long, requires = "workload")]
    pub label: Option<String>,
    /// Override the operator precision.
    #[arg(long)]
    pub prec: Option<PrecisionSpec>,
}

impl OpArgs {
    /// A single p-GEMM. Without `--op` or `--workload` this is an 8x8x8
    /// operator at `--prec` (default int8).
    fn single(&self, ctx: &Context) -> Result<PGemmOp> {
        let op = match (&self.op, &self.workload) {
            (Some(op), _) => *op,
            (None, Some(name)) => {
                let w = ctx.workload(name)?;
                let label = self.label.as_deref().ok_or_else(|| {
                    let labels: Vec<&str> = w.gemms().map(|(l, _)| l).collect();
                    anyhow!("--label is required with --workload; GEMMs in `{name}`: {}", labels.join(" "))
                })?;
                gemm_by_label(w, label)?
            }
            (None, None) => PGemmOp::new(8, 8, 8, PrecisionSpec::of(gta_core::DataType::Int8))?,
        };
        Ok(match self.prec {
            Some(p) => op.with_precision(p),
            None => op,
        })
    }
}

fn gemm_by_label(w: &Workload, label: &str) -> Result<PGemmOp> {
    w.gemms()
        .find(|(l, _)| *l == label)
        .map(|(_, g)| *g)
        .ok_or_else(|| anyhow!("workload `{}` has no GEMM labelled `{label}`", w.name))
}

#[derive(Debug, Args)]
pub struct MappingArgs {
    #[arg(long, default_value = "ws")]
    pub dataflow: Dataflow,
    /// Array shape in PEs as RxC; defaults to the squarest layout.
    #[arg(long)]
    pub arrangement: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub k_segments: usize,
    #[arg(long, default_value = "lateral")]
    pub direction: TilingDirection,
    #[arg(long)]
    pub edge_fill: bool,
    #[arg(long)]
    pub preload_overlap: bool,
}

impl MappingArgs {
    fn shape(&self, ctx: &Context) -> Result<ArrayShape> {
        let cfg = &ctx.run.gta;
        let Some(text) = &self.arrangement else {
            return Ok(squarest_arrangement(cfg));
        };
        let (r, c) = text
            .split_once(['x', 'X'])
            .and_then(|(r, c)| Some((r.trim().parse::<usize>().ok()?, c.trim().parse::<usize>().ok()?)))
            .ok_or_else(|| anyhow!("arrangement `{text}` is not RxC"))?;
        let options = enumerate_arrangements(cfg);
        options.iter().copied().find(|s| s.rows == r && s.cols == c).ok_or_else(|| {
            let names: Vec<String> = options.iter().map(ToString::to_string).collect();
            anyhow!("{r}x{c} is not a layout of {} lanes; choose one of {}", cfg.lanes, names.join(" "))
        })
    }

    fn knobs(&self) -> Knobs {
        Knobs { k_segments: self.k_segments, direction: self.direction, edge_fill: self.edge_fill }
    }

    fn timing(&self, ctx: &Context) -> Timing {
        Timing { preload_overlap: self.preload_overlap || ctx.run.knobs.preload_overlap }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

/// Flat key/value summary printable as aligned text, JSON or one CSV row.
struct Summary(Vec<(String, String)>);

impl Summary {
    fn new() -> Self {
        Summary(Vec::new())
    }

    fn put(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.push((key.into(), value.to_string()));
    }

    fn op(&mut self, op: &PGemmOp) {
        self.put("m", op.m);
        self.put("n", op.n);
        self.put("k", op.k);
        self.put("prec", op.precision);
    }

    fn cost(&mut self, prefix: &str, c: &CostEstimate) {
        self.put(format!("{prefix}cycles"), c.cycles);
        self.put(format!("{prefix}reads_a"), c.reads.a);
        self.put(format!("{prefix}reads_b"), c.reads.b);
        self.put(format!("{prefix}writes"), c.writes);
        self.put(format!("{prefix}mem"), c.mem());
    }

    fn render(&self, format: Format) -> Result<String> {
        let mut out = String::new();
        match format {
            Format::Text => {
                let width = self.0.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
                for (k, v) in &self.0 {
                    writeln!(out, "{k:<width$}  {v}")?;
                }
            }
            Format::Csv => {
                let keys: Vec<&str> = self.0.iter().map(|(k, _)| k.as_str()).collect();
                let values: Vec<&str> = self.0.iter().map(|(_, v)| v.as_str()).collect();
                writeln!(out, "{}\n{}", keys.join(","), values.join(","))?;
            }
            Format::Json => {
                let map: serde_json::Map<String, serde_json::Value> =
                    self.0.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
                out = serde_json::to_string_pretty(&map)? + "\n";
            }
        }
        Ok(out)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub op: OpArgs,
    #[command(flatten)]
    pub mapping: MappingArgs,
    /// Seed for the random operands.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write a per-cycle CSV event trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write the full JSON report, including the output matrix.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

pub fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<Status> {
    let op = args.op.single(ctx)?;
    let n = op.precision.limb_count as u64;
    let work = op.macs().saturating_mul(n * n);
    if work > SIM_LIMB_MAC_LIMIT {
        bail!("{op} needs {work} limb MACs; the simulator is limited to {SIM_LIMB_MAC_LIMIT}, use `gta cost`");
    }
    let shape = args.mapping.shape(ctx)?;
    let dataflow = args.mapping.dataflow;
    let timing = args.mapping.timing(ctx);
    let mapping = plan(&op, &shape, dataflow, args.mapping.knobs())?;
    let data = GemmOperands::random(&op, &mut ChaCha8Rng::seed_from_u64(args.seed));

    let sim = match &args.trace {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut trace = CsvTrace::new(BufWriter::new(file));
            let sim = simulate_with(&op, &data, &shape, dataflow, &mapping, timing, &mut trace)?;
            trace.finish().with_context(|| format!("writing {}", path.display()))?;
            sim
        }
        None => simulate_with(&op, &data, &shape, dataflow, &mapping, timing, &mut NoTrace)?,
    };
    let expected = reference_gemm(&data.a, &data.b);
    let exact = sim.output == expected;
    let model = plan_cost(&mapping, timing);
    let model_agrees = model_matches(&model, &sim);

    let mut s = Summary::new();
    s.op(&op);
    s.put("dataflow", dataflow);
    s.put("arrangement", shape);
    s.put("k_segments", mapping.knobs.k_segments);
    s.put("direction", mapping.knobs.direction);
    s.put("edge_fill", mapping.knobs.edge_fill);
    s.put("preload_overlap", timing.preload_overlap);
    s.put("pe_count", sim.pe_count);
    s.put("passes", sim.passes);
    s.put("cycles", sim.cycles);
    s.put("reads_a", sim.reads.a);
    s.put("reads_b", sim.reads.b);
    s.put("writes", sim.writes);
    s.put("mem", sim.reads.total() + sim.writes);
    s.put("pe_busy_cycles", sim.pe_busy_cycles);
    s.put("utilization", format!("{:.6}", sim.utilization_f64()));
    s.put("output", if exact { "exact" } else { "mismatch" });
    s.put("model", if model_agrees { "agrees" } else { "differs" });
    print!("{}", s.render(args.format)?);

    if let Some(path) = &args.out {
        let rows: Vec<Vec<String>> =
            (0..sim.output.rows()).map(|i| sim.output.row(i).iter().map(ToString::to_string).collect()).collect();
        let report = json!({
            "op": op,
            "dataflow": dataflow,
            "arrangement": shape,
            "knobs": mapping.knobs,
            "timing": timing,
            "seed": args.seed,
            "cycles": sim.cycles,
            "reads": sim.reads,
            "writes": sim.writes,
            "pe_busy_cycles": sim.pe_busy_cycles,
            "pe_count": sim.pe_count,
            "passes": sim.passes,
            "model": model,
            "verdict": { "exact": exact, "model_agrees": model_agrees },
            "output": rows,
        });
        write_file(path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    if exact && model_agrees {
        Ok(Status::Ok)
    } else {
        eprintln!("verification failed: output {}, model {}", exact, model_agrees);
        Ok(Status::VerificationFailed)
    }
}

fn model_matches(model: &CostEstimate, sim: &SimResult) -> bool {
    model.cycles == sim.cycles
        && model.reads == sim.reads
        && model.writes == sim.writes
        && model.pe_busy_cycles == sim.pe_busy_cycles
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[command(flatten)]
    pub op: OpArgs,
    #[command(flatten)]
    pub mapping: MappingArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

pub fn cost(ctx: &Context, args: &CostArgs) -> Result<Status> {
    let op = args.op.single(ctx)?;
    let shape = args.mapping.shape(ctx)?;
    let mapping = plan(&op, &shape, args.mapping.dataflow, args.mapping.knobs())?;
    let systolic = plan_cost(&mapping, args.mapping.timing(ctx));
    let simd = simd_gemm_cost(&op, &ctx.run.gta, &ctx.table)?;
    let baseline = vector_baseline_cost(&op, &ctx.run.gta, &ctx.table)?;

    let mut s = Summary::new();
    s.op(&op);
    s.put("dataflow", args.mapping.dataflow);
    s.put("arrangement", shape);
    s.put("k_segments", mapping.knobs.k_segments);
    s.put("direction", mapping.knobs.direction);
    s.put("edge_fill", mapping.knobs.edge_fill);
    s.put("tiles", mapping.tile_count());
    s.cost("", &systolic);
    s.put("pe_busy_cycles", systolic.pe_busy_cycles);
    s.cost("simd_", &simd);
    s.cost("baseline_", &baseline);
    print!("{}", s.render(args.format)?);
    Ok(Status::Ok)
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[command(flatten)]
    pub op: OpArgs,
    /// Comma-separated precisions to consider, e.g. int8,fp16,fp32.
    #[arg(long, value_delimiter = ',')]
    pub precisions: Vec<PrecisionSpec>,
    /// Cost systolic candidates on the simulator instead of the model.
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    pub max_k_segments: Option<usize>,
    /// Operand seed for --exact.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for the JSON report and scatter CSVs.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn schedule(ctx: &Context, args: &ScheduleArgs) -> Result<Status> {
    let mut options: ScheduleOptions = ctx.run.schedule_options()?;
    options.table = ctx.table.clone();
    options.precisions = args.precisions.clone();
    options.seed = args.seed;
    if args.exact {
        options.source = CostSource::Exact;
    }
    if let Some(k) = args.max_k_segments {
        if k == 0 {
            bail!("--max-k-segments must be at least 1");
        }
        options.max_k_segments = k;
    }
    let out_dir = args.out_dir.clone().or_else(|| ctx.run.output.dir.clone());

    let whole_workload = args.op.op.is_none() && args.op.label.is_none() && args.op.workload.is_some();
    if whole_workload {
        let mut w = ctx.workload(args.op.workload.as_deref().unwrap_or_default())?.clone();
        if let Some(p) = args.op.prec {
            w = with_precision(w, p);
        }
        let result = schedule_workload(&w, &ctx.run.gta, &options)?;
        print!("{}", workload_summary(&result)?);
        if let Some(dir) = out_dir {
            write_file(&dir.join("workload.json"), &result.to_json()?)?;
            for op in &result.ops {
                if let OpSchedule::Gemm { label, report } = op {
                    write_scatter(&dir.join(format!("scatter-{}.csv", file_stem(label))), report)?;
                }
            }
        }
    } else {
        let op = args.op.single(ctx)?;
        let report = sched::schedule(&op, &ctx.run.gta, &options)?;
        print!("{}", report_summary(&report)?);
        if let Some(dir) = out_dir {
            write_file(&dir.join("schedule.json"), &report.to_json()?)?;
            write_scatter(&dir.join("scatter.csv"), &report)?;
        }
    }
    Ok(Status::Ok)
}

/// Every operator of the workload at precision `p`.
fn with_precision(mut w: Workload, p: PrecisionSpec) -> Workload {
    w.precision = p;
    for op in &mut w.ops {
        match &mut op.kind {
            OpKind::Gemm(g) => g.precision = p,
            OpKind::Vector(v) => v.precision = p,
        }
    }
    w
}

fn write_scatter(path: &Path, report: &ScheduleReport) -> Result<()> {
    let mut buf = Vec::new();
    scatter_export(report, &mut buf)?;
    write_file(path, std::str::from_utf8(&buf)?)
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn report_summary(r: &ScheduleReport) -> Result<String> {
    let best = r.best();
    let mut out = String::new();
    writeln!(out, "op          {}", r.op)?;
    writeln!(out, "candidates  {}", r.candidates.len())?;
    writeln!(out, "min cycles  {}", r.min_cycles)?;
    writeln!(out, "min mem     {}", r.min_mem)?;
    writeln!(out, "chosen      #{} {}", r.chosen, best.candidate.describe())?;
    writeln!(
        out,
        "            cycles {} ({:.4}x)  mem {} ({:.4}x)  score {:.6}",
        best.candidate.cost.cycles,
        best.cycles_ratio,
        best.candidate.mem(),
        best.mem_ratio,
        best.score
    )?;
    Ok(out)
}

fn workload_summary(w: &WorkloadSchedule) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "workload {}", w.name)?;
    let width = w.ops.iter().map(|o| o.label().len()).max().unwrap_or(0).max(5);
    writeln!(out, "{:<width$}  {:>14}  {:>14}  choice", "label", "cycles", "mem")?;
    for op in &w.ops {
        let choice = match op {
            OpSchedule::Gemm { report, .. } => report.best().candidate.describe(),
            OpSchedule::Vector { op, .. } => format!("simd {} {}", op.kind.name(), op.precision),
        };
        let c = op.cost();
        writeln!(out, "{:<width$}  {:>14}  {:>14}  {choice}", op.label(), c.cycles, c.mem())?;
    }
    writeln!(out, "reconfigurations {}", w.reconfigurations)?;
    writeln!(out, "total cycles {}  total mem {}", w.total_cycles, w.total_mem)?;
    Ok(out)
}

#[derive(Debug, Args)]
pub struct WorkloadsArgs {
    /// Show the operators of one workload.
    pub name: Option<String>,
    /// Write the catalog as TOML.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

pub fn workloads(ctx: &Context, args: &WorkloadsArgs) -> Result<Status> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match &args.name {
        Some(name) => {
            let w = ctx.workload(name)?;
            writeln!(out, "{} ({}): {}", w.name, w.precision, w.description)?;
            for op in &w.ops {
                match &op.kind {
                    OpKind::Gemm(g) => writeln!(out, "  {:<12} gemm   {g}", op.label)?,
                    OpKind::Vector(v) => {
                        writeln!(out, "  {:<12} {:<6} {} x {}", op.label, v.kind.name(), v.elements, v.precision)?
                    }
                }
            }
        }
        None => {
            for w in &ctx.workloads {
                writeln!(
                    out,
                    "{:<8} {:<6} {:>3} ops  {}",
                    w.name,
                    w.precision.to_string(),
                    w.ops.len(),
                    w.description
                )?;
            }
        }
    }
    if let Some(path) = &args.export {
        write_file(path, &to_toml(&ctx.workloads))?;
    }
    Ok(Status::Ok)
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Sampled grids instead of exhaustive ones.
    #[arg(long)]
    pub quick: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, hide = true)]
    pub inject_fault: Option<Fault>,
}

pub fn verify(args: &VerifyArgs) -> Result<Status> {
    let opts = VerifyOptions { quick: args.quick, seed: args.seed, fault: args.inject_fault };
    let outcomes = run_all(&opts);
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    println!("{} of {} suites passed", outcomes.len() - failed, outcomes.len());
    Ok(if failed == 0 { Status::Ok } else { Status::VerificationFailed })
}
