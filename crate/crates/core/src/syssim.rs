//! Register-level systolic simulation of multi-limb GEMM.
//!
//! Every PE holds 8-bit operand registers and a partial-sum register. Per
//! cycle, streamed limbs move one PE to the right, partial sums (WS/IS) or
//! weight limbs (OS) move one PE down, and operands enter the array edge with
//! the usual one-cycle-per-row skew.
//!
//! * WS/IS: the stationary operand is shifted in from the top, one row per
//!   cycle, then the other operand streams in limb by limb. Column sums leave
//!   the bottom row tagged with their limb pair and are recombined by the
//!   shift-add accumulator.
//! * OS: both operands stream; each PE owns one limb pair of one output and
//!   the finished sums are shifted out one row per cycle.
//!
//! Memory counters are in elements: a fetch is counted when the first limb of
//! an element enters the array edge, and a write when a pass retires an output
//! element from the accumulator.

use std::io::{self, Write};

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::costmodel::{vector_throughput, CostError, ThroughputTable};
use crate::geometry::{ArrayShape, GtaConfig};
use crate::mapper::{Dataflow, Job, MappingPlan, Pass};
use crate::ops::{GemmOperands, Matrix, OpError, Operand, PGemmOp, VectorOp};
use crate::precision::{decompose, ShiftAddAccumulator, Sign, Wide};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("mapping plan does not match the request: {0}")]
    MappingMismatch(String),
    #[error(transparent)]
    Operands(#[from] OpError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Timing {
    /// Let the stationary preload of a pass overlap the drain of the previous one.
    pub preload_overlap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
pub struct OperandCounts {
    pub a: u64,
    pub b: u64,
}

impl OperandCounts {
    pub fn total(&self) -> u64 {
        self.a + self.b
    }

    pub fn add(&mut self, operand: Operand, count: u64) {
        match operand {
            Operand::A => self.a += count,
            Operand::B => self.b += count,
            Operand::C => panic!("outputs are counted as writes"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimResult {
    pub output: Matrix<Wide>,
    pub cycles: u64,
    pub reads: OperandCounts,
    pub writes: u64,
    pub pe_busy_cycles: u64,
    pub pe_count: u64,
    pub passes: u64,
}

impl SimResult {
    pub fn utilization(&self) -> Ratio<u64> {
        if self.cycles == 0 || self.pe_count == 0 {
            return Ratio::from_integer(0);
        }
        Ratio::new(self.pe_busy_cycles, self.cycles * self.pe_count)
    }

    pub fn utilization_f64(&self) -> f64 {
        let u = self.utilization();
        *u.numer() as f64 / *u.denom() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Load,
    Inject,
    Mac,
    Drain,
    Write,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Load => "load",
            EventKind::Inject => "inject",
            EventKind::Mac => "mac",
            EventKind::Drain => "drain",
            EventKind::Write => "write",
        }
    }
}

/// One simulator event. `row`/`col` are PE coordinates, except for `write`
/// events where they index the output matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub cycle: u64,
    pub kind: EventKind,
    pub operand: Operand,
    pub row: usize,
    pub col: usize,
    pub value: i128,
}

pub trait TraceSink {
    fn enabled(&self) -> bool {
        true
    }

    fn record(&mut self, event: TraceEvent);
}

/// Discards all events.
pub struct NoTrace;

impl TraceSink for NoTrace {
    fn enabled(&self) -> bool {
        false
    }

    fn record(&mut self, _: TraceEvent) {}
}

impl TraceSink for Vec<TraceEvent> {
    fn record(&mut self, event: TraceEvent) {
        self.push(event);
    }
}

/// Writes `cycle,event_kind,operand,row,col,value` lines.
pub struct CsvTrace<W: Write> {
    out: W,
    error: Option<io::Error>,
}

impl<W: Write> CsvTrace<W> {
    pub fn new(out: W) -> Self {
        CsvTrace { out, error: None }
    }

    pub fn finish(mut self) -> io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> TraceSink for CsvTrace<W> {
    fn record(&mut self, e: TraceEvent) {
        if self.error.is_some() {
            return;
        }
        if let Err(err) =
            writeln!(self.out, "{},{},{},{},{},{}", e.cycle, e.kind.name(), e.operand, e.row, e.col, e.value)
        {
            self.error = Some(err);
        }
    }
}

pub fn simulate(
    op: &PGemmOp,
    data: &GemmOperands,
    shape: &ArrayShape,
    dataflow: Dataflow,
    plan: &MappingPlan,
) -> Result<SimResult, SimError> {
    simulate_with(op, data, shape, dataflow, plan, Timing::default(), &mut NoTrace)
}

pub fn simulate_with(
    op: &PGemmOp,
    data: &GemmOperands,
    shape: &ArrayShape,
    dataflow: Dataflow,
    plan: &MappingPlan,
    timing: Timing,
    trace: &mut impl TraceSink,
) -> Result<SimResult, SimError> {
    check_plan(op, shape, dataflow, plan)?;
    data.validate(op)?;

    let mut sim = Simulator {
        plan,
        data,
        trace,
        acc: Matrix::filled(op.m, op.n, ShiftAddAccumulator::default()),
        stamp: Matrix::filled(op.m, op.n, 0u64),
        touched: Vec::new(),
        reads: OperandCounts::default(),
        writes: 0,
        busy: 0,
    };

    let mut clock = 0u64;
    let mut passes = 0u64;
    let mut prev_drain: Option<u64> = None;
    plan.for_each_pass(|pass| {
        let mut start = clock;
        if let (true, Some(drain)) = (timing.preload_overlap && dataflow != Dataflow::Os, prev_drain) {
            let load = pass.jobs.iter().map(|j| plan.pe_extent(j).0 as u64).max().unwrap_or(0);
            start -= drain.min(load);
        }
        passes += 1;
        let outcome = sim.run_pass(pass, passes, start);
        clock = start + outcome.cycles;
        prev_drain = Some(outcome.cycles - outcome.last_inject - 1);
    });

    let output = Matrix::from_fn(op.m, op.n, |i, j| sim.acc[(i, j)].value());
    Ok(SimResult {
        output,
        cycles: clock,
        reads: sim.reads,
        writes: sim.writes,
        pe_busy_cycles: sim.busy,
        pe_count: shape.pe_count() as u64,
        passes,
    })
}

fn check_plan(op: &PGemmOp, shape: &ArrayShape, dataflow: Dataflow, plan: &MappingPlan) -> Result<(), SimError> {
    if plan.op != *op {
        return Err(SimError::MappingMismatch(format!("plan is for {}, op is {}", plan.op, op)));
    }
    if plan.array != *shape {
        return Err(SimError::MappingMismatch(format!(
            "plan targets a {} array, simulation uses {}",
            plan.array, shape
        )));
    }
    if plan.dataflow != dataflow {
        return Err(SimError::MappingMismatch(format!(
            "plan uses {}, simulation requested {}",
            plan.dataflow, dataflow
        )));
    }
    Ok(())
}

struct PassOutcome {
    cycles: u64,
    /// Pass-local cycle of the last edge injection.
    last_inject: u64,
}

struct Simulator<'a, T: TraceSink> {
    plan: &'a MappingPlan,
    data: &'a GemmOperands,
    trace: &'a mut T,
    acc: Matrix<ShiftAddAccumulator>,
    stamp: Matrix<u64>,
    touched: Vec<(usize, usize)>,
    reads: OperandCounts,
    writes: u64,
    busy: u64,
}

/// 8-bit limb with its operand sign and stream tag.
#[derive(Clone, Copy)]
struct Token {
    limb: u8,
    sign: Sign,
    tag: u32,
}

#[derive(Clone, Copy)]
struct Psum {
    value: i64,
    tag: u32,
}

fn limb_of(value: i128, limb: usize, plan: &MappingPlan) -> (u8, Sign) {
    let v = decompose(value, plan.op.precision).expect("operands validated");
    (v.limbs()[limb], v.sign())
}

fn signed_product(x: Token, w: (u8, Sign)) -> i64 {
    i64::from(u16::from(x.limb) * u16::from(w.0)) * x.sign.product(w.1).as_i64()
}

impl<T: TraceSink> Simulator<'_, T> {
    fn emit(&mut self, cycle: u64, kind: EventKind, operand: Operand, row: usize, col: usize, value: i128) {
        if self.trace.enabled() {
            self.trace.record(TraceEvent { cycle, kind, operand, row, col, value });
        }
    }

    fn deliver(&mut self, pass_id: u64, i: usize, j: usize, p: usize, q: usize, value: i64) {
        self.acc[(i, j)].add(p, q, value);
        if self.stamp[(i, j)] != pass_id {
            self.stamp[(i, j)] = pass_id;
            self.touched.push((i, j));
        }
    }

    fn run_pass(&mut self, pass: &Pass, pass_id: u64, start: u64) -> PassOutcome {
        let mut jobs: Vec<JobState> = pass.jobs.iter().map(|job| JobState::new(self.plan, job)).collect();
        let mut tau = 0u64;
        let mut last_inject = 0u64;
        let mut remaining = jobs.len();
        while remaining > 0 {
            for state in jobs.iter_mut().filter(|s| !s.done) {
                if self.step(state, pass_id, start, tau) {
                    last_inject = last_inject.max(tau);
                }
                if state.done {
                    remaining -= 1;
                }
            }
            tau += 1;
        }
        let end = start + tau;
        let touched = std::mem::take(&mut self.touched);
        self.writes += touched.len() as u64;
        for &(i, j) in &touched {
            let value = self.acc[(i, j)].value();
            self.emit(end - 1, EventKind::Write, Operand::C, i, j, i128::try_from(value).unwrap_or(i128::MAX));
        }
        self.touched = touched;
        self.touched.clear();
        PassOutcome { cycles: tau, last_inject }
    }

    /// Advances one job by one cycle. Returns whether an edge injection happened.
    fn step(&mut self, s: &mut JobState, pass_id: u64, start: u64, tau: u64) -> bool {
        match self.plan.dataflow {
            Dataflow::Ws | Dataflow::Is => self.step_stationary(s, pass_id, start, tau),
            Dataflow::Os => self.step_output_stationary(s, pass_id, start, tau),
        }
    }

    /// Element of the stationary operand held at local PE column `c`, row `r`.
    fn stationary_value(&self, job: &Job, r: usize, c_elem: usize) -> (Operand, i128) {
        let g = job.gemm_ranges(self.plan.dataflow);
        let k = g.k.start + r;
        match self.plan.dataflow {
            Dataflow::Ws => (Operand::B, self.data.b[(k, g.n.start + c_elem)]),
            Dataflow::Is => (Operand::A, self.data.a[(g.m.start + c_elem, k)]),
            Dataflow::Os => unreachable!(),
        }
    }

    fn streamed_value(&self, job: &Job, r: usize, e: usize) -> (Operand, i128) {
        let g = job.gemm_ranges(self.plan.dataflow);
        let k = g.k.start + r;
        match self.plan.dataflow {
            Dataflow::Ws => (Operand::A, self.data.a[(g.m.start + e, k)]),
            Dataflow::Is => (Operand::B, self.data.b[(k, g.n.start + e)]),
            Dataflow::Os => unreachable!(),
        }
    }

    fn step_stationary(&mut self, s: &mut JobState, pass_id: u64, start: u64, tau: u64) -> bool {
        let plan = self.plan;
        let n = plan.limb_count();
        let (ru, cu) = (s.rows, s.cols);
        let (r0, c0) = s.job.at;
        let cycle = start + tau;

        if s.loaded < ru {
            // Shift the stationary rows down and push the next one in at the top.
            let src = ru - 1 - s.loaded;
            s.weights.rotate_right(cu);
            for c in 0..cu {
                let (operand, value) = self.stationary_value(&s.job, src, c / n);
                s.weights[c] = limb_of(value, c % n, plan);
                if c % n == 0 {
                    self.reads.add(operand, 1);
                    self.emit(cycle, EventKind::Load, operand, r0, c0 + c, value);
                }
            }
            s.loaded += 1;
            return true;
        }

        let t_now = tau - ru as u64;
        let stream_len = (s.job.temporal.len() * n) as u64;
        let mut injected = false;
        for r in (0..ru).rev() {
            for c in (0..cu).rev() {
                let x_in = if c == 0 {
                    let t = t_now.checked_sub(r as u64).filter(|&t| t < stream_len);
                    t.map(|t| {
                        let (e, p) = ((t as usize) / n, (t as usize) % n);
                        let (operand, value) = self.streamed_value(&s.job, r, e);
                        if p == 0 {
                            self.reads.add(operand, 1);
                            self.emit(cycle, EventKind::Inject, operand, r0 + r, c0, value);
                        }
                        injected = true;
                        let (limb, sign) = limb_of(value, p, plan);
                        Token { limb, sign, tag: t as u32 }
                    })
                } else {
                    s.h[r * cu + c - 1]
                };
                s.h[r * cu + c] = x_in;
                let psum = match x_in {
                    Some(x) => {
                        let above = if r == 0 {
                            0
                        } else {
                            let up = s.v[(r - 1) * cu + c].expect("partial sum aligned with stream");
                            debug_assert_eq!(up.tag, x.tag);
                            up.value
                        };
                        self.busy += 1;
                        let value = above + signed_product(x, s.weights[r * cu + c]);
                        self.emit(cycle, EventKind::Mac, Operand::C, r0 + r, c0 + c, i128::from(value));
                        Some(Psum { value, tag: x.tag })
                    }
                    None => None,
                };
                s.v[r * cu + c] = psum;
                if r == ru - 1 {
                    if let Some(out) = psum {
                        let t = out.tag as usize;
                        let (e, stream_limb) = (t / n, t % n);
                        let (c_elem, stat_limb) = (c / n, c % n);
                        let g = s.job.gemm_ranges(plan.dataflow);
                        let (i, j) = match plan.dataflow {
                            Dataflow::Ws => (g.m.start + e, g.n.start + c_elem),
                            _ => (g.m.start + c_elem, g.n.start + e),
                        };
                        self.deliver(pass_id, i, j, stream_limb, stat_limb, out.value);
                        s.pending -= 1;
                    }
                }
            }
        }
        if s.pending == 0 {
            s.done = true;
        }
        injected
    }

    fn step_output_stationary(&mut self, s: &mut JobState, pass_id: u64, start: u64, tau: u64) -> bool {
        let plan = self.plan;
        let n = plan.limb_count();
        let (ru, cu) = (s.rows, s.cols);
        let (r0, c0) = s.job.at;
        let g = s.job.gemm_ranges(plan.dataflow);
        let k_len = g.k.len() as u64;
        let cycle = start + tau;

        if s.pending == 0 {
            // Drain one row of finished sums per cycle, bottom row first.
            let r = ru - 1 - s.drained;
            for c in 0..cu {
                let value = s.acc[r * cu + c];
                let (i, j) = (g.m.start + r / n, g.n.start + c / n);
                self.emit(cycle, EventKind::Drain, Operand::C, r0 + r, c0 + c, i128::from(value));
                self.deliver(pass_id, i, j, r % n, c % n, value);
            }
            s.drained += 1;
            s.done = s.drained == ru;
            return false;
        }

        let mut injected = false;
        for r in (0..ru).rev() {
            for c in (0..cu).rev() {
                let a_in = if c == 0 {
                    (tau.checked_sub(r as u64).filter(|&k| k < k_len)).map(|k| {
                        let value = self.data.a[(g.m.start + r / n, g.k.start + k as usize)];
                        if r % n == 0 {
                            self.reads.add(Operand::A, 1);
                            self.emit(cycle, EventKind::Inject, Operand::A, r0 + r, c0, value);
                        }
                        injected = true;
                        let (limb, sign) = limb_of(value, r % n, plan);
                        Token { limb, sign, tag: k as u32 }
                    })
                } else {
                    s.h[r * cu + c - 1]
                };
                let b_in = if r == 0 {
                    (tau.checked_sub(c as u64).filter(|&k| k < k_len)).map(|k| {
                        let value = self.data.b[(g.k.start + k as usize, g.n.start + c / n)];
                        if c % n == 0 {
                            self.reads.add(Operand::B, 1);
                            self.emit(cycle, EventKind::Inject, Operand::B, r0, c0 + c, value);
                        }
                        injected = true;
                        let (limb, sign) = limb_of(value, c % n, plan);
                        Token { limb, sign, tag: k as u32 }
                    })
                } else {
                    s.down[(r - 1) * cu + c]
                };
                s.h[r * cu + c] = a_in;
                s.down[r * cu + c] = b_in;
                if let (Some(a), Some(b)) = (a_in, b_in) {
                    debug_assert_eq!(a.tag, b.tag);
                    let idx = r * cu + c;
                    s.acc[idx] += signed_product(a, (b.limb, b.sign));
                    self.busy += 1;
                    s.pending -= 1;
                    self.emit(cycle, EventKind::Mac, Operand::C, r0 + r, c0 + c, i128::from(s.acc[idx]));
                }
            }
        }
        injected
    }
}

struct JobState {
    job: Job,
    rows: usize,
    cols: usize,
    /// Horizontal operand registers.
    h: Vec<Option<Token>>,
    /// Vertical partial sums (WS/IS).
    v: Vec<Option<Psum>>,
    /// Vertical operand registers (OS).
    down: Vec<Option<Token>>,
    /// Stationary limbs (WS/IS).
    weights: Vec<(u8, Sign)>,
    /// Output accumulators (OS).
    acc: Vec<i64>,
    loaded: usize,
    drained: usize,
    /// Outputs (WS/IS) or MACs (OS) still outstanding.
    pending: usize,
    done: bool,
}

impl JobState {
    fn new(plan: &MappingPlan, job: &Job) -> Self {
        let (rows, cols) = plan.pe_extent(job);
        let cells = rows * cols;
        let n = plan.limb_count();
        let os = plan.dataflow == Dataflow::Os;
        let pending = if os { cells * job.temporal.len() } else { cols * job.temporal.len() * n };
        JobState {
            job: job.clone(),
            rows,
            cols,
            h: vec![None; cells],
            v: if os { Vec::new() } else { vec![None; cells] },
            down: if os { vec![None; cells] } else { Vec::new() },
            weights: if os { Vec::new() } else { vec![(0, Sign::Pos); cells] },
            acc: if os { vec![0; cells] } else { Vec::new() },
            loaded: 0,
            drained: 0,
            pending,
            done: false,
        }
    }
}

/// SIMD execution of a reuse-free vector operator.
pub fn simulate_vector(op: &VectorOp, cfg: &GtaConfig, table: &ThroughputTable) -> Result<SimResult, SimError> {
    let throughput = vector_throughput(op.precision.kind, cfg, table)?;
    // Each cycle retires floor((c+1) * thr) - floor(c * thr) elements.
    let mut cycles = 0u64;
    let mut done = 0u64;
    while done < op.elements {
        cycles += 1;
        done = (throughput * Ratio::from_integer(cycles)).to_integer();
    }
    let mut reads = OperandCounts { a: op.elements, b: 0 };
    if op.kind.source_operands() == 2 {
        reads.b = op.elements;
    }
    let writes = match op.kind {
        crate::ops::VectorKind::Reduce => u64::from(op.elements > 0),
        _ => op.elements,
    };
    Ok(SimResult {
        output: Matrix::filled(0, 0, Wide::ZERO),
        cycles,
        reads,
        writes,
        pe_busy_cycles: op.elements,
        pe_count: (cfg.lanes * cfg.pes_per_lane()) as u64,
        passes: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::{plan, Knobs};
    use crate::ops::{reference_gemm, VectorKind};
    use crate::precision::DataType;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(
        m: usize,
        n: usize,
        k: usize,
        kind: DataType,
        df: Dataflow,
        shape: ArrayShape,
        seed: u64,
    ) -> (SimResult, Matrix<Wide>) {
        let op = PGemmOp::new(m, n, k, kind.spec()).unwrap();
        let data = GemmOperands::random(&op, &mut ChaCha8Rng::seed_from_u64(seed));
        let p = plan(&op, &shape, df, Knobs::default()).unwrap();
        let res = simulate(&op, &data, &shape, df, &p).unwrap();
        (res, reference_gemm(&data.a, &data.b))
    }

    #[test]
    fn single_mac() {
        let op = PGemmOp::new(1, 1, 1, DataType::Int8.spec()).unwrap();
        let data = GemmOperands::new(&op, Matrix::filled(1, 1, -7), Matrix::filled(1, 1, 200)).unwrap();
        let shape = ArrayShape::of_pes(8, 8);
        let p = plan(&op, &shape, Dataflow::Ws, Knobs::default()).unwrap();
        let res = simulate(&op, &data, &shape, Dataflow::Ws, &p).unwrap();
        assert_eq!(res.output[(0, 0)], Wide::from(-1400));
        assert_eq!(res.reads, OperandCounts { a: 1, b: 1 });
        assert_eq!(res.writes, 1);
        assert_eq!(res.pe_busy_cycles, 1);
        // One row to load, one cycle to stream through a single PE.
        assert_eq!(res.cycles, 2);
    }

    #[test]
    fn int32_ws_two_by_two() {
        let (res, expect) = run(2, 2, 2, DataType::Int32, Dataflow::Ws, ArrayShape::of_pes(8, 8), 7);
        assert_eq!(res.output, expect);
        // 2 weights x 4 limbs per row fill the 8 columns; 4 limbs x 2 rows x 2 elements stream.
        assert_eq!(res.pe_busy_cycles, 2 * 8 * 2 * 4);
    }

    #[test]
    fn os_int8_four_cubed() {
        let (res, expect) = run(4, 4, 4, DataType::Int8, Dataflow::Os, ArrayShape::of_pes(8, 8), 3);
        assert_eq!(res.output, expect);
        assert_eq!(res.reads, OperandCounts { a: 16, b: 16 });
        assert_eq!(res.writes, 16);
        // K + rows + cols - 2 stream cycles, then rows drain cycles.
        assert_eq!(res.cycles, 4 + 4 + 4 - 2 + 4);
    }

    #[test]
    fn dataflows_agree_numerically() {
        for kind in [DataType::Int8, DataType::Int16, DataType::Fp32, DataType::Int64, DataType::Fp64] {
            let shape = ArrayShape::of_pes(16, 16);
            let outs: Vec<_> = Dataflow::ALL.iter().map(|&df| run(5, 3, 7, kind, df, shape, 11)).collect();
            for (res, expect) in &outs {
                assert_eq!(&res.output, expect, "{kind}");
            }
        }
    }

    #[test]
    fn int64_os_uses_whole_mpra() {
        let (res, expect) = run(1, 1, 3, DataType::Int64, Dataflow::Os, ArrayShape::of_pes(8, 8), 5);
        assert_eq!(res.output, expect);
        assert_eq!(res.passes, 1);
        assert_eq!(res.pe_busy_cycles, 64 * 3);
    }

    #[test]
    fn mismatched_plan_rejected() {
        let op = PGemmOp::new(2, 2, 2, DataType::Int8.spec()).unwrap();
        let other = PGemmOp::new(2, 2, 3, DataType::Int8.spec()).unwrap();
        let shape = ArrayShape::of_pes(8, 8);
        let p = plan(&other, &shape, Dataflow::Ws, Knobs::default()).unwrap();
        let data = GemmOperands::zeros(&op);
        assert!(matches!(simulate(&op, &data, &shape, Dataflow::Ws, &p), Err(SimError::MappingMismatch(_))));
        let p = plan(&op, &shape, Dataflow::Os, Knobs::default()).unwrap();
        assert!(matches!(simulate(&op, &data, &shape, Dataflow::Ws, &p), Err(SimError::MappingMismatch(_))));
        let big = ArrayShape::of_pes(16, 8);
        assert!(matches!(simulate(&op, &data, &big, Dataflow::Os, &p), Err(SimError::MappingMismatch(_))));
    }

    #[test]
    fn deterministic() {
        let a = run(6, 5, 9, DataType::Fp16, Dataflow::Is, ArrayShape::of_pes(8, 16), 99);
        let b = run(6, 5, 9, DataType::Fp16, Dataflow::Is, ArrayShape::of_pes(8, 16), 99);
        assert_eq!(a, b);
    }

    #[test]
    fn trace_lines() {
        let op = PGemmOp::new(1, 1, 1, DataType::Int8.spec()).unwrap();
        let data = GemmOperands::new(&op, Matrix::filled(1, 1, 3), Matrix::filled(1, 1, 5)).unwrap();
        let shape = ArrayShape::of_pes(8, 8);
        let p = plan(&op, &shape, Dataflow::Ws, Knobs::default()).unwrap();
        let mut sink = CsvTrace::new(Vec::new());
        simulate_with(&op, &data, &shape, Dataflow::Ws, &p, Timing::default(), &mut sink).unwrap();
        let text = String::from_utf8(sink.finish().unwrap()).unwrap();
        assert_eq!(text, "0,load,B,0,0,5\n1,inject,A,0,0,3\n1,mac,C,0,0,15\n1,write,C,0,0,15\n");
    }

    #[test]
    fn preload_overlap_saves_cycles() {
        let op = PGemmOp::new(6, 20, 20, DataType::Int8.spec()).unwrap();
        let data = GemmOperands::random(&op, &mut ChaCha8Rng::seed_from_u64(1));
        let shape = ArrayShape::of_pes(8, 8);
        let p = plan(&op, &shape, Dataflow::Ws, Knobs::default()).unwrap();
        let plain = simulate(&op, &data, &shape, Dataflow::Ws, &p).unwrap();
        let overlapped =
            simulate_with(&op, &data, &shape, Dataflow::Ws, &p, Timing { preload_overlap: true }, &mut NoTrace)
                .unwrap();
        assert_eq!(plain.output, overlapped.output);
        assert_eq!(plain.reads, overlapped.reads);
        assert!(overlapped.cycles < plain.cycles);
    }

    #[test]
    fn vector_examples() {
        let table = ThroughputTable::default();
        let zero = VectorOp { kind: VectorKind::Map, elements: 0, precision: DataType::Int8.spec() };
        let res = simulate_vector(&zero, &GtaConfig::with_lanes(16), &table).unwrap();
        assert_eq!(res.cycles, 0);

        let macs = VectorOp { kind: VectorKind::Mac, elements: 1024, precision: DataType::Int8.spec() };
        let res = simulate_vector(&macs, &GtaConfig::with_lanes(16), &table).unwrap();
        // 16 lanes x 8 baseline x 8 gain = 1024 per cycle.
        assert_eq!(res.cycles, 1);

        let add = VectorOp { kind: VectorKind::Map, elements: 64, precision: DataType::Int64.spec() };
        let res = simulate_vector(&add, &GtaConfig::with_lanes(1), &table).unwrap();
        assert_eq!(res.reads, OperandCounts { a: 64, b: 64 });
        assert_eq!(res.writes, 64);
        assert_eq!(res.cycles, 64);

        let fp32 = VectorOp { kind: VectorKind::Map, elements: 100, precision: DataType::Fp32.spec() };
        let res = simulate_vector(&fp32, &GtaConfig::with_lanes(4), &table).unwrap();
        // 28.48 per cycle: ceil(100 / 28.48) = 4.
        assert_eq!(res.cycles, 4);
    }
}
