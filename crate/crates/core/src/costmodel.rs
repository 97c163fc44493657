//! Closed-form cycle and memory-access estimates.
//!
//! Systolic jobs follow the timing of [`crate::syssim`]:
//!
//! | dataflow | cycles                                   | reads                                    |
//! |----------|------------------------------------------|------------------------------------------|
//! | WS / IS  | `rows` preload + `T*n + rows + cols - 2` | `rows * cols/n` stationary, `T * rows` streamed |
//! | OS       | `K + rows + cols - 2` + `rows` drain     | `rows/n * K` of A, `cols/n * K` of B      |
//!
//! where `rows x cols` is the job's PE extent, `n` the limb count and `T` the
//! streamed length in elements. A pass costs its slowest job; writes are the
//! distinct output elements a pass retires.
//!
//! SIMD throughput is `lanes * baseline(d) * gain(d)` ops per cycle, with the
//! per-lane baseline and gain kept as exact rationals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ArrayShape, GtaConfig};
use crate::mapper::{Dataflow, MappingPlan, Pass, TileDims};
use crate::ops::{PGemmOp, VectorKind, VectorOp};
use crate::precision::DataType;
use crate::syssim::{OperandCounts, Timing};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("tile {rows}x{cols} PEs does not fit a {array} array")]
    TileTooLarge { rows: usize, cols: usize, array: ArrayShape },
    #[error("no throughput entry for {0}")]
    UnknownDatatype(DataType),
    #[error("calibration: {0}")]
    Calibration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
pub struct CostEstimate {
    pub cycles: u64,
    pub reads: OperandCounts,
    pub writes: u64,
    pub pe_busy_cycles: u64,
}

impl CostEstimate {
    /// Reads plus writes, in elements.
    pub fn mem(&self) -> u64 {
        self.reads.total() + self.writes
    }
}

struct JobCost {
    cycles: u64,
    load: u64,
    last_inject: u64,
    reads: OperandCounts,
    busy: u64,
}

fn job_cost(dataflow: Dataflow, rows: u64, cols: u64, n: u64, temporal: u64) -> JobCost {
    match dataflow {
        Dataflow::Ws | Dataflow::Is => {
            let stream = temporal * n;
            let stationary = rows * (cols / n);
            let streamed = temporal * rows;
            let reads = if dataflow == Dataflow::Ws {
                OperandCounts { a: streamed, b: stationary }
            } else {
                OperandCounts { a: stationary, b: streamed }
            };
            JobCost {
                cycles: rows + stream + rows + cols - 2,
                load: rows,
                last_inject: rows + stream + rows - 2,
                reads,
                busy: rows * cols * stream,
            }
        }
        Dataflow::Os => JobCost {
            cycles: temporal + rows + cols - 2 + rows,
            load: 0,
            last_inject: temporal - 1 + (rows - 1).max(cols - 1),
            reads: OperandCounts { a: rows / n * temporal, b: cols / n * temporal },
            busy: rows * cols * temporal,
        },
    }
}

/// Cost of one operator that fits the array as a single job.
pub fn tile_cost(tile: TileDims, shape: &ArrayShape, dataflow: Dataflow, n: usize) -> Result<CostEstimate, CostError> {
    let (rows, cols, temporal) = match dataflow {
        Dataflow::Ws => (tile.k, tile.n * n, tile.m),
        Dataflow::Is => (tile.k, tile.m * n, tile.n),
        Dataflow::Os => (tile.m * n, tile.n * n, tile.k),
    };
    if rows > shape.rows || cols > shape.cols || rows == 0 || cols == 0 || temporal == 0 {
        return Err(CostError::TileTooLarge { rows, cols, array: *shape });
    }
    let job = job_cost(dataflow, rows as u64, cols as u64, n as u64, temporal as u64);
    Ok(CostEstimate {
        cycles: job.cycles,
        reads: job.reads,
        writes: (tile.m * tile.n) as u64,
        pe_busy_cycles: job.busy,
    })
}

struct PassCost {
    cycles: u64,
    load: u64,
    last_inject: u64,
}

fn pass_cost(plan: &MappingPlan, pass: &Pass, total: &mut CostEstimate) -> PassCost {
    let n = plan.limb_count() as u64;
    let mut out = PassCost { cycles: 0, load: 0, last_inject: 0 };
    let mut outputs: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(pass.jobs.len());
    for job in &pass.jobs {
        let (rows, cols) = plan.pe_extent(job);
        let c = job_cost(plan.dataflow, rows as u64, cols as u64, n, job.temporal.len() as u64);
        out.cycles = out.cycles.max(c.cycles);
        out.load = out.load.max(c.load);
        out.last_inject = out.last_inject.max(c.last_inject);
        total.reads.a += c.reads.a;
        total.reads.b += c.reads.b;
        total.pe_busy_cycles += c.busy;
        // Output blocks of jobs in one pass are either identical or disjoint.
        let g = job.gemm_ranges(plan.dataflow);
        let key = (g.m.start, g.m.end, g.n.start, g.n.end);
        if !outputs.contains(&key) {
            outputs.push(key);
            total.writes += (g.m.len() * g.n.len()) as u64;
        }
    }
    out
}

/// Cost of a full plan, composed pass by pass.
pub fn plan_cost(plan: &MappingPlan, timing: Timing) -> CostEstimate {
    let mut total = CostEstimate::default();
    let mut clock = 0u64;
    let mut prev_drain: Option<u64> = None;
    let overlap = timing.preload_overlap && plan.dataflow != Dataflow::Os;
    plan.for_each_pass(|pass| {
        let c = pass_cost(plan, pass, &mut total);
        let mut start = clock;
        if let (true, Some(drain)) = (overlap, prev_drain) {
            start -= drain.min(c.load);
        }
        clock = start + c.cycles;
        prev_drain = Some(c.cycles - c.last_inject - 1);
    });
    total.cycles = clock;
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Throughput {
    /// Baseline vector-unit ops per cycle per lane.
    pub baseline: Ratio<u64>,
    /// Multiplier of an MPRA lane over the baseline.
    pub gain: Ratio<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThroughputTable {
    pub entries: BTreeMap<DataType, Throughput>,
}

impl Default for ThroughputTable {
    fn default() -> Self {
        let r = Ratio::new;
        let rows = [
            (DataType::Int8, 8, r(8, 1)),
            (DataType::Int16, 4, r(4, 1)),
            (DataType::Int32, 2, r(2, 1)),
            (DataType::Int64, 1, r(1, 1)),
            (DataType::Bp16, 4, r(16, 1)),
            (DataType::Fp16, 4, r(4, 1)),
            (DataType::Fp32, 2, r(356, 100)),
            (DataType::Fp64, 1, r(13, 10)),
        ];
        let entries = rows
            .into_iter()
            .map(|(d, baseline, gain)| (d, Throughput { baseline: Ratio::from_integer(baseline), gain }))
            .collect();
        ThroughputTable { entries }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryText {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    baseline: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gain: Option<String>,
}

impl ThroughputTable {
    pub fn get(&self, kind: DataType) -> Result<Throughput, CostError> {
        self.entries.get(&kind).copied().ok_or(CostError::UnknownDatatype(kind))
    }

    /// Parses a calibration document: one table per datatype with `baseline`
    /// and `gain` given as decimals (`"3.56"`) or fractions (`"89/25"`).
    /// Datatypes and fields that are not listed keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, CostError> {
        let raw: BTreeMap<String, EntryText> =
            toml::from_str(text).map_err(|e| CostError::Calibration(e.to_string()))?;
        let mut table = ThroughputTable::default();
        for (name, entry) in raw {
            let kind: DataType = name.parse().map_err(|e| CostError::Calibration(format!("{e}")))?;
            let default = table.get(kind)?;
            let baseline = entry.baseline.as_deref().map_or(Ok(default.baseline), parse_ratio)?;
            let gain = entry.gain.as_deref().map_or(Ok(default.gain), parse_ratio)?;
            if baseline == Ratio::from_integer(0) || gain == Ratio::from_integer(0) {
                return Err(CostError::Calibration(format!("{name}: throughput must be positive")));
            }
            table.entries.insert(kind, Throughput { baseline, gain });
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CostError::Calibration(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let mut out = String::from(
            "# Vector throughput calibration.\n\
             # baseline: ops/cycle/lane of the reference vector unit\n\
             # gain: throughput multiplier of an MPRA lane over that baseline\n",
        );
        for (kind, t) in &self.entries {
            let _ = write!(
                out,
                "\n[{kind}]\nbaseline = \"{}\"\ngain = \"{}\"\n",
                format_ratio(t.baseline),
                format_ratio(t.gain)
            );
        }
        out
    }
}

/// Exact rational from `"12"`, `"3.56"` or `"89/25"`.
pub fn parse_ratio(text: &str) -> Result<Ratio<u64>, CostError> {
    let bad = || CostError::Calibration(format!("`{text}` is not a positive decimal or fraction"));
    let t = text.trim();
    if let Some((num, den)) = t.split_once('/') {
        let num: u64 = num.trim().parse().map_err(|_| bad())?;
        let den: u64 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(num, den));
    }
    let (int, frac) = t.split_once('.').unwrap_or((t, ""));
    if int.is_empty() && frac.is_empty() || frac.len() > 18 {
        return Err(bad());
    }
    let digits = |s: &str| s.is_empty() || s.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || !digits(frac) {
        return Err(bad());
    }
    let den = 10u64.pow(frac.len() as u32);
    let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
    let frac_val: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
    let num = int.checked_mul(den).and_then(|v| v.checked_add(frac_val)).ok_or_else(bad)?;
    Ok(Ratio::new(num, den))
}

pub fn format_ratio(r: Ratio<u64>) -> String {
    if r.is_integer() {
        return r.to_integer().to_string();
    }
    // Terminating decimals print as such, everything else as a fraction.
    let mut den = *r.denom();
    for p in [2, 5] {
        while den.is_multiple_of(p) {
            den /= p;
        }
    }
    if den == 1 {
        let mut scale = 1u64;
        let mut places = 0;
        while !(r * Ratio::from_integer(scale)).is_integer() {
            scale *= 10;
            places += 1;
        }
        let scaled = (r * Ratio::from_integer(scale)).to_integer();
        let int = scaled / scale;
        let frac = scaled % scale;
        return format!("{int}.{frac:0places$}");
    }
    format!("{}/{}", r.numer(), r.denom())
}

/// GTA ops per cycle for SIMD execution of `kind`.
pub fn vector_throughput(kind: DataType, cfg: &GtaConfig, table: &ThroughputTable) -> Result<Ratio<u64>, CostError> {
    let t = table.get(kind)?;
    Ok(Ratio::from_integer(cfg.lanes as u64) * t.baseline * t.gain)
}

/// Ops per cycle of the baseline vector unit with the same lane count.
pub fn baseline_throughput(kind: DataType, cfg: &GtaConfig, table: &ThroughputTable) -> Result<Ratio<u64>, CostError> {
    let t = table.get(kind)?;
    Ok(Ratio::from_integer(cfg.lanes as u64) * t.baseline)
}

/// `ceil(count / throughput)`.
pub fn cycles_for(count: u64, throughput: Ratio<u64>) -> u64 {
    let num = u128::from(count) * u128::from(*throughput.denom());
    num.div_ceil(u128::from(*throughput.numer())) as u64
}

pub fn vector_cost(op: &VectorOp, cfg: &GtaConfig, table: &ThroughputTable) -> Result<CostEstimate, CostError> {
    let thr = vector_throughput(op.precision.kind, cfg, table)?;
    let two = op.kind.source_operands() == 2;
    Ok(CostEstimate {
        cycles: cycles_for(op.elements, thr),
        reads: OperandCounts { a: op.elements, b: if two { op.elements } else { 0 } },
        writes: match op.kind {
            VectorKind::Reduce => u64::from(op.elements > 0),
            _ => op.elements,
        },
        pe_busy_cycles: op.elements,
    })
}

fn no_reuse_gemm(op: &PGemmOp, throughput: Ratio<u64>) -> CostEstimate {
    let macs = op.macs();
    CostEstimate {
        cycles: cycles_for(macs, throughput),
        reads: OperandCounts { a: macs, b: macs },
        writes: (op.m * op.n) as u64,
        pe_busy_cycles: macs,
    }
}

/// The p-GEMM executed as plain vector MACs on the GTA lanes.
pub fn simd_gemm_cost(op: &PGemmOp, cfg: &GtaConfig, table: &ThroughputTable) -> Result<CostEstimate, CostError> {
    Ok(no_reuse_gemm(op, vector_throughput(op.precision.kind, cfg, table)?))
}

/// Reference vector unit with no operand reuse: every MAC fetches both inputs.
pub fn vector_baseline_cost(op: &PGemmOp, cfg: &GtaConfig, table: &ThroughputTable) -> Result<CostEstimate, CostError> {
    Ok(no_reuse_gemm(op, baseline_throughput(op.precision.kind, cfg, table)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::{plan, Knobs};

    #[test]
    fn table3_defaults() {
        let t = ThroughputTable::default();
        let gains: Vec<_> = DataType::ALL.iter().map(|&d| t.get(d).unwrap().gain).collect();
        let r = Ratio::new;
        assert_eq!(gains, vec![r(8, 1), r(4, 1), r(2, 1), r(1, 1), r(16, 1), r(4, 1), r(89, 25), r(13, 10)]);
    }

    #[test]
    fn throughput_examples() {
        let t = ThroughputTable::default();
        assert_eq!(vector_throughput(DataType::Int64, &GtaConfig::with_lanes(1), &t).unwrap(), Ratio::from_integer(1));
        assert_eq!(vector_throughput(DataType::Int8, &GtaConfig::with_lanes(1), &t).unwrap(), Ratio::from_integer(64));
        assert_eq!(vector_throughput(DataType::Fp32, &GtaConfig::with_lanes(4), &t).unwrap(), Ratio::new(2848, 100));
        let mut sparse = t.clone();
        sparse.entries.remove(&DataType::Fp16);
        assert_eq!(
            vector_throughput(DataType::Fp16, &GtaConfig::default(), &sparse),
            Err(CostError::UnknownDatatype(DataType::Fp16))
        );
    }

    #[test]
    fn baseline_examples() {
        let t = ThroughputTable::default();
        let cfg = GtaConfig::with_lanes(1);
        let one = PGemmOp::new(1, 1, 1, DataType::Int8.spec()).unwrap();
        let c = vector_baseline_cost(&one, &cfg, &t).unwrap();
        assert_eq!((c.reads.total(), c.writes), (2, 1));
        let eight = PGemmOp::new(8, 8, 8, DataType::Int8.spec()).unwrap();
        let c = vector_baseline_cost(&eight, &cfg, &t).unwrap();
        assert_eq!((c.reads.total(), c.writes), (1024, 64));
        assert_eq!(c.cycles, 64);
        let ws = plan_cost(
            &plan(&eight, &ArrayShape::of_pes(8, 8), Dataflow::Ws, Knobs::default()).unwrap(),
            Timing::default(),
        );
        assert!(ws.reads.total() < c.reads.total());
    }

    #[test]
    fn tile_formulas() {
        let shape = ArrayShape::of_pes(8, 8);
        let c = tile_cost(TileDims { m: 1, n: 1, k: 1 }, &shape, Dataflow::Ws, 1).unwrap();
        assert_eq!((c.cycles, c.reads.total(), c.writes), (2, 2, 1));
        let c = tile_cost(TileDims { m: 8, n: 8, k: 8 }, &shape, Dataflow::Ws, 1).unwrap();
        assert_eq!(c.cycles, 8 + 8 + 8 + 8 - 2);
        assert_eq!(c.reads, OperandCounts { a: 64, b: 64 });
        // Four limbs: same elements fetched, 4x the columns.
        let wide = tile_cost(TileDims { m: 8, n: 2, k: 8 }, &shape, Dataflow::Ws, 4).unwrap();
        let narrow = tile_cost(TileDims { m: 8, n: 2, k: 8 }, &shape, Dataflow::Ws, 1).unwrap();
        assert_eq!(wide.reads.b, narrow.reads.b);
        assert_eq!(wide.pe_busy_cycles, 16 * narrow.pe_busy_cycles);
        assert!(matches!(
            tile_cost(TileDims { m: 8, n: 3, k: 8 }, &shape, Dataflow::Ws, 4),
            Err(CostError::TileTooLarge { rows: 8, cols: 12, .. })
        ));
    }

    #[test]
    fn ratio_text() {
        assert_eq!(parse_ratio("3.56").unwrap(), Ratio::new(89, 25));
        assert_eq!(parse_ratio("89/25").unwrap(), Ratio::new(89, 25));
        assert_eq!(parse_ratio("16").unwrap(), Ratio::from_integer(16));
        assert_eq!(parse_ratio(".5").unwrap(), Ratio::new(1, 2));
        for bad in ["", "x", "1/0", "-1", "1.2.3", "."] {
            assert!(parse_ratio(bad).is_err(), "{bad}");
        }
        assert_eq!(format_ratio(Ratio::new(89, 25)), "3.56");
        assert_eq!(format_ratio(Ratio::new(13, 10)), "1.3");
        assert_eq!(format_ratio(Ratio::new(1, 3)), "1/3");
        assert_eq!(format_ratio(Ratio::new(1, 20)), "0.05");
    }

    #[test]
    fn calibration_round_trip() {
        let t = ThroughputTable::default();
        let text = t.to_toml_string();
        assert_eq!(ThroughputTable::from_toml_str(&text).unwrap(), t);
        let custom = ThroughputTable::from_toml_str("[fp32]\nbaseline = \"4\"\ngain = \"89/50\"\n").unwrap();
        assert_eq!(custom.get(DataType::Fp32).unwrap().gain, Ratio::new(89, 50));
        assert_eq!(custom.get(DataType::Int8).unwrap(), t.get(DataType::Int8).unwrap());
        assert!(ThroughputTable::from_toml_str("[int12]\nbaseline = \"1\"\ngain = \"1\"\n").is_err());
        assert!(ThroughputTable::from_toml_str("[int8]\nbaseline = \"0\"\ngain = \"1\"\n").is_err());
        let partial = ThroughputTable::from_toml_str("[int8]\nbaseline = \"1\"\n").unwrap();
        assert_eq!(partial.get(DataType::Int8).unwrap().gain, t.get(DataType::Int8).unwrap().gain);
        assert!(ThroughputTable::from_toml_str("[int8]\nrate = \"1\"\n").is_err());
    }
}
