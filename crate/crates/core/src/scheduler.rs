//! Search over dataflow, lane arrangement, mapping knobs and precision.
//!
//! Every candidate is scored on two axes normalized to the best value in the
//! space: `score = (cycles / min_cycles)^2 + (mem / min_mem)^2`, where `mem`
//! counts element reads plus writes. The lowest score wins; ties go to fewer
//! cycles, then to the earlier candidate in enumeration order. Comparisons are
//! exact (integer cross-multiplication); the floating-point ratios in reports
//! are for display only.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{plan_cost, simd_gemm_cost, vector_cost, CostError, CostEstimate, ThroughputTable};
use crate::geometry::{enumerate_arrangements, ArrayShape, GeometryError, GtaConfig};
use crate::mapper::{plan, Dataflow, Knobs, MappingPlan, TilingDirection};
use crate::ops::{GemmOperands, PGemmOp, VectorOp};
use crate::precision::PrecisionSpec;
use crate::syssim::{simulate_with, NoTrace, SimError, Timing};
use crate::workloads::{OpKind, Workload};

pub const SCATTER_HEADER: [&str; 13] = [
    "dataflow",
    "rows",
    "cols",
    "k_segments",
    "direction",
    "edge_fill",
    "precision",
    "cycles",
    "mem",
    "cycles_ratio",
    "mem_ratio",
    "score",
    "chosen",
];

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("no candidates to select from")]
    Empty,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("scatter table: {0}")]
    Csv(#[from] csv::Error),
    #[error("report: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Ws,
    Is,
    Os,
    Simd,
}

impl ExecMode {
    pub fn dataflow(self) -> Option<Dataflow> {
        match self {
            ExecMode::Ws => Some(Dataflow::Ws),
            ExecMode::Is => Some(Dataflow::Is),
            ExecMode::Os => Some(Dataflow::Os),
            ExecMode::Simd => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExecMode::Ws => "ws",
            ExecMode::Is => "is",
            ExecMode::Os => "os",
            ExecMode::Simd => "simd",
        }
    }
}

impl From<Dataflow> for ExecMode {
    fn from(df: Dataflow) -> Self {
        match df {
            Dataflow::Ws => ExecMode::Ws,
            Dataflow::Is => ExecMode::Is,
            Dataflow::Os => ExecMode::Os,
        }
    }
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where candidate costs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostSource {
    #[default]
    Model,
    /// Register-level simulation with seeded random operands.
    Exact,
}

impl FromStr for CostSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "model" => Ok(CostSource::Model),
            "exact" => Ok(CostSource::Exact),
            _ => Err(format!("unknown cost source `{s}` (expected model or exact)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScheduleOptions {
    pub dataflows: Vec<Dataflow>,
    pub max_k_segments: usize,
    pub directions: Vec<TilingDirection>,
    pub edge_fill: Vec<bool>,
    /// Precisions to consider; empty means the operator's own.
    pub precisions: Vec<PrecisionSpec>,
    pub source: CostSource,
    pub timing: Timing,
    pub table: ThroughputTable,
    /// Operand seed for [`CostSource::Exact`].
    pub seed: u64,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        ScheduleOptions {
            dataflows: Dataflow::ALL.to_vec(),
            max_k_segments: 8,
            directions: vec![TilingDirection::Lateral, TilingDirection::Vertical],
            edge_fill: vec![false, true],
            precisions: Vec::new(),
            source: CostSource::Model,
            timing: Timing::default(),
            table: ThroughputTable::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScheduleCandidate {
    pub mode: ExecMode,
    /// `None` for SIMD execution, which uses the lanes independently.
    pub arrangement: Option<ArrayShape>,
    pub knobs: Option<Knobs>,
    pub precision: PrecisionSpec,
    pub cost: CostEstimate,
}

impl ScheduleCandidate {
    pub fn mem(&self) -> u64 {
        self.cost.mem()
    }

    pub fn describe(&self) -> String {
        match (self.arrangement, self.knobs) {
            (Some(shape), Some(k)) => format!(
                "{} {} s={} {} edge_fill={} {}",
                self.mode, shape, k.k_segments, k.direction, k.edge_fill, self.precision
            ),
            _ => format!("{} {}", self.mode, self.precision),
        }
    }
}

/// Every legal systolic configuration plus one SIMD candidate per precision.
/// Segment counts the mapper rejects are skipped.
pub fn enumerate(
    op: &PGemmOp,
    cfg: &GtaConfig,
    options: &ScheduleOptions,
) -> Result<Vec<ScheduleCandidate>, ScheduleError> {
    cfg.validate()?;
    let precisions = if options.precisions.is_empty() { vec![op.precision] } else { options.precisions.clone() };
    let shapes = enumerate_arrangements(cfg);

    enum Config {
        Systolic(MappingPlan),
        Simd(PGemmOp),
    }
    let mut configs = Vec::new();
    for &precision in &precisions {
        let op = op.with_precision(precision);
        for shape in &shapes {
            for &df in &options.dataflows {
                for k_segments in 1..=options.max_k_segments {
                    for &direction in &options.directions {
                        for &edge_fill in &options.edge_fill {
                            let knobs = Knobs { k_segments, direction, edge_fill };
                            if let Ok(p) = plan(&op, shape, df, knobs) {
                                configs.push(Config::Systolic(p));
                            }
                        }
                    }
                }
            }
        }
        configs.push(Config::Simd(op));
    }

    configs
        .par_iter()
        .map(|config| match config {
            Config::Systolic(p) => Ok(ScheduleCandidate {
                mode: p.dataflow.into(),
                arrangement: Some(p.array),
                knobs: Some(p.knobs),
                precision: p.op.precision,
                cost: systolic_cost(p, options)?,
            }),
            Config::Simd(op) => Ok(ScheduleCandidate {
                mode: ExecMode::Simd,
                arrangement: None,
                knobs: None,
                precision: op.precision,
                cost: simd_gemm_cost(op, cfg, &options.table)?,
            }),
        })
        .collect()
}

fn systolic_cost(p: &MappingPlan, options: &ScheduleOptions) -> Result<CostEstimate, ScheduleError> {
    match options.source {
        CostSource::Model => Ok(plan_cost(p, options.timing)),
        CostSource::Exact => {
            let data = GemmOperands::random(&p.op, &mut ChaCha8Rng::seed_from_u64(options.seed));
            let r = simulate_with(&p.op, &data, &p.array, p.dataflow, p, options.timing, &mut NoTrace)?;
            Ok(CostEstimate { cycles: r.cycles, reads: r.reads, writes: r.writes, pe_busy_cycles: r.pe_busy_cycles })
        }
    }
}

/// Index of the best `(cycles, mem)` point under the scoring rule.
pub fn argmin(points: &[(u64, u64)]) -> Option<usize> {
    let cmin = points.iter().map(|p| p.0).min()?.max(1);
    let mmin = points.iter().map(|p| p.1).min()?.max(1);
    // score * cmin^2 * mmin^2, exact.
    let key = |&(c, m): &(u64, u64)| {
        let c = BigUint::from(c) * mmin;
        let m = BigUint::from(m) * cmin;
        &c * &c + &m * &m
    };
    let mut best = 0;
    let mut best_key = key(&points[0]);
    for (i, p) in points.iter().enumerate().skip(1) {
        let k = key(p);
        if k < best_key || (k == best_key && p.0 < points[best].0) {
            best = i;
            best_key = k;
        }
    }
    Some(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCandidate {
    #[serde(flatten)]
    pub candidate: ScheduleCandidate,
    pub cycles_ratio: f64,
    pub mem_ratio: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleReport {
    pub op: PGemmOp,
    pub min_cycles: u64,
    pub min_mem: u64,
    pub chosen: usize,
    pub candidates: Vec<ScoredCandidate>,
}

pub fn select(op: &PGemmOp, candidates: Vec<ScheduleCandidate>) -> Result<ScheduleReport, ScheduleError> {
    let points: Vec<_> = candidates.iter().map(|c| (c.cost.cycles, c.mem())).collect();
    let chosen = argmin(&points).ok_or(ScheduleError::Empty)?;
    let min_cycles = points.iter().map(|p| p.0).min().unwrap_or(0);
    let min_mem = points.iter().map(|p| p.1).min().unwrap_or(0);
    let ratio = |v: u64, min: u64| v as f64 / min.max(1) as f64;
    let candidates = candidates
        .into_iter()
        .map(|candidate| {
            let cycles_ratio = ratio(candidate.cost.cycles, min_cycles);
            let mem_ratio = ratio(candidate.mem(), min_mem);
            ScoredCandidate {
                candidate,
                cycles_ratio,
                mem_ratio,
                score: cycles_ratio * cycles_ratio + mem_ratio * mem_ratio,
            }
        })
        .collect();
    Ok(ScheduleReport { op: *op, min_cycles, min_mem, chosen, candidates })
}

/// Enumerate and select in one step.
pub fn schedule(op: &PGemmOp, cfg: &GtaConfig, options: &ScheduleOptions) -> Result<ScheduleReport, ScheduleError> {
    select(op, enumerate(op, cfg, options)?)
}

impl ScheduleReport {
    pub fn best(&self) -> &ScoredCandidate {
        &self.candidates[self.chosen]
    }

    pub fn to_json(&self) -> Result<String, ScheduleError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

/// Outcome for one operator of a workload.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OpSchedule {
    Gemm { label: String, report: ScheduleReport },
    Vector { label: String, op: VectorOp, cost: CostEstimate },
}

impl OpSchedule {
    pub fn label(&self) -> &str {
        match self {
            OpSchedule::Gemm { label, .. } | OpSchedule::Vector { label, .. } => label,
        }
    }

    pub fn cost(&self) -> &CostEstimate {
        match self {
            OpSchedule::Gemm { report, .. } => &report.best().candidate.cost,
            OpSchedule::Vector { cost, .. } => cost,
        }
    }

    /// Systolic layout the operator runs on; `None` for SIMD execution.
    fn layout(&self) -> Option<ArrayShape> {
        match self {
            OpSchedule::Gemm { report, .. } => report.best().candidate.arrangement,
            OpSchedule::Vector { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadSchedule {
    pub name: String,
    pub ops: Vec<OpSchedule>,
    /// Layout changes between consecutive operators.
    pub reconfigurations: u64,
    /// Operator cycles plus reconfiguration cycles.
    pub total_cycles: u64,
    pub total_mem: u64,
}

impl WorkloadSchedule {
    pub fn to_json(&self) -> Result<String, ScheduleError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

/// Schedules every operator independently and charges a reconfiguration
/// whenever the chosen layout differs from the previous operator's.
pub fn schedule_workload(
    workload: &Workload,
    cfg: &GtaConfig,
    options: &ScheduleOptions,
) -> Result<WorkloadSchedule, ScheduleError> {
    let mut ops = Vec::with_capacity(workload.ops.len());
    for op in &workload.ops {
        let label = op.label.clone();
        ops.push(match op.kind {
            OpKind::Gemm(g) => OpSchedule::Gemm { label, report: schedule(&g, cfg, options)? },
            OpKind::Vector(v) => OpSchedule::Vector { label, op: v, cost: vector_cost(&v, cfg, &options.table)? },
        });
    }
    let reconfigurations = ops.windows(2).filter(|w| w[0].layout() != w[1].layout()).count() as u64;
    let total_cycles = ops.iter().map(|o| o.cost().cycles).sum::<u64>() + reconfigurations * cfg.reconfig_cycles;
    let total_mem = ops.iter().map(|o| o.cost().mem()).sum();
    Ok(WorkloadSchedule { name: workload.name.clone(), ops, reconfigurations, total_cycles, total_mem })
}

/// One line of the scatter table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScatterRow {
    pub dataflow: String,
    pub rows: usize,
    pub cols: usize,
    pub k_segments: usize,
    pub direction: String,
    pub edge_fill: bool,
    pub precision: String,
    pub cycles: u64,
    pub mem: u64,
    pub cycles_ratio: f64,
    pub mem_ratio: f64,
    pub score: f64,
    pub chosen: bool,
}

pub fn scatter_export(report: &ScheduleReport, out: impl Write) -> Result<(), ScheduleError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCATTER_HEADER)?;
    for (i, s) in report.candidates.iter().enumerate() {
        let c = &s.candidate;
        let (rows, cols) = c.arrangement.map_or((0, 0), |a| (a.rows, a.cols));
        let (k_segments, direction, edge_fill) =
            c.knobs.map_or((0, "none", false), |k| (k.k_segments, k.direction.name(), k.edge_fill));
        w.write_record([
            c.mode.name().to_string(),
            rows.to_string(),
            cols.to_string(),
            k_segments.to_string(),
            direction.to_string(),
            edge_fill.to_string(),
            c.precision.to_string(),
            c.cost.cycles.to_string(),
            c.mem().to_string(),
            format!("{:.6}", s.cycles_ratio),
            format!("{:.6}", s.mem_ratio),
            format!("{:.6}", s.score),
            (i == report.chosen).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn scatter_import(input: impl Read) -> Result<Vec<ScatterRow>, ScheduleError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(SCATTER_HEADER.iter().copied()) {
        return Err(ScheduleError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected scatter header: {}", header.iter().collect::<Vec<_>>().join(",")),
        )));
    }
    r.deserialize().map(|row| row.map_err(ScheduleError::from)).collect()
}
