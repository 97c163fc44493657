//! Self-check suites behind `gta verify`.
//!
//! Each suite compares a model component against an independent oracle and
//! reports how many cases it checked and how many disagreed.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::costmodel::{plan_cost, tile_cost, ThroughputTable};
use crate::geometry::{ArrayShape, GtaConfig};
use crate::mapper::{
    classify, footprint, plan, CoverageCase, Dataflow, Knobs, MappedFootprint, TileDims, TilingDirection,
};
use crate::ops::{reference_gemm, GemmOperands, PGemmOp};
use crate::precision::{
    accumulate_shift_add, decompose, limb_multiply, multiply_limbs, partial_products, DataType, Wide,
};
use crate::scheduler::{argmin, enumerate, scatter_export, select, ScheduleOptions};
use crate::syssim::{simulate, simulate_with, NoTrace, Timing};

/// Deliberate defect used to prove that a suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Arithmetic,
    Gemm,
    Cost,
    Scheduler,
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arithmetic" => Ok(Fault::Arithmetic),
            "gemm" => Ok(Fault::Gemm),
            "cost" => Ok(Fault::Cost),
            "scheduler" => Ok(Fault::Scheduler),
            _ => Err(format!("unknown fault `{s}` (arithmetic, gemm, cost, scheduler)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Sampled grids instead of exhaustive ones.
    pub quick: bool,
    pub seed: u64,
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub checked: u64,
    pub mismatches: u64,
    pub first_failure: Option<String>,
    pub elapsed: Duration,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.mismatches == 0 && self.checked > 0
    }
}

impl fmt::Display for SuiteOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<22} checked {:>12}  mismatches {:>6}  {:>8.2}s",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.mismatches,
            self.elapsed.as_secs_f64()
        )?;
        if let Some(msg) = &self.first_failure {
            write!(f, "  first: {msg}")?;
        }
        Ok(())
    }
}

struct Tally {
    name: &'static str,
    start: Instant,
    checked: u64,
    mismatches: u64,
    first_failure: Option<String>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally { name, start: Instant::now(), checked: 0, mismatches: 0, first_failure: None }
    }

    fn check(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.mismatches += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(describe());
            }
        }
    }

    fn finish(self) -> SuiteOutcome {
        SuiteOutcome {
            name: self.name,
            checked: self.checked,
            mismatches: self.mismatches,
            first_failure: self.first_failure,
            elapsed: self.start.elapsed(),
        }
    }
}

/// Every operand pair of INT8 and INT16 (quick mode strides the INT16 left operand).
pub fn arithmetic_exhaustive(opts: &VerifyOptions) -> SuiteOutcome {
    let mut t = Tally::new("arithmetic_exhaustive");
    let fault = Wide::from(i8::from(opts.fault == Some(Fault::Arithmetic)));

    let spec8 = DataType::Int8.spec();
    for x in -255i128..=255 {
        for y in -255i128..=255 {
            let got = limb_multiply(x, y, spec8).expect("in range") + fault;
            t.check(got == Wide::from(x * y), || format!("int8 {x} * {y}"));
        }
    }

    let spec16 = DataType::Int16.spec();
    let limbs: Vec<_> = (i16::MIN..=i16::MAX).map(|v| decompose(i128::from(v), spec16).expect("in range")).collect();
    let step = if opts.quick { 257 } else { 1 };
    for (xi, lx) in limbs.iter().enumerate().step_by(step) {
        let x = i64::from(xi as i32 + i32::from(i16::MIN));
        let mut bad = 0u64;
        let mut first = None;
        for (yi, ly) in limbs.iter().enumerate() {
            let y = i64::from(yi as i32 + i32::from(i16::MIN));
            if !matches!(multiply_limbs(lx, ly), Ok(v) if v == Wide::from(x * y) + fault) {
                bad += 1;
                first.get_or_insert((x, y));
            }
        }
        t.checked += limbs.len() as u64;
        t.mismatches += bad;
        if let (None, Some((x, y))) = (&t.first_failure, first) {
            t.first_failure = Some(format!("int16 {x} * {y}"));
        }
    }
    t.finish()
}

/// Random full-range pairs for the wide integer kinds and every mantissa width.
pub fn arithmetic_random(opts: &VerifyOptions) -> SuiteOutcome {
    let mut t = Tally::new("arithmetic_random");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let per_kind = if opts.quick { 2_000 } else { 20_000 };
    let kinds = [DataType::Int32, DataType::Int64, DataType::Bp16, DataType::Fp16, DataType::Fp32, DataType::Fp64];
    for kind in kinds {
        let spec = kind.spec();
        let max = spec.max_magnitude() as i128;
        for _ in 0..per_kind {
            let x = rng.gen_range(-max..=max);
            let y = rng.gen_range(-max..=max);
            let want = Wide::from(x) * Wide::from(y);
            let got = limb_multiply(x, y, spec).expect("in range");
            t.check(got == want, || format!("{kind} {x} * {y}"));
            let (lx, ly) = (decompose(x, spec).expect("in range"), decompose(y, spec).expect("in range"));
            let grid = accumulate_shift_add(&partial_products(&lx, &ly).expect("same width"), spec);
            t.check(grid == want, || format!("{kind} {x} * {y} via grid"));
        }
    }
    t.finish()
}

/// Simulated GEMM against the plain reference, default and random knobs.
pub fn gemm_exact(opts: &VerifyOptions) -> SuiteOutcome {
    let mut t = Tally::new("gemm_exact");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6e6d);
    let points = if opts.quick { 40 } else { 200 };
    let kinds = [DataType::Int8, DataType::Int32, DataType::Fp32];
    let arrays = [ArrayShape::of_pes(8, 8), ArrayShape::of_pes(16, 16)];
    for _ in 0..points {
        let (m, n, k) = (rng.gen_range(1..=12), rng.gen_range(1..=12), rng.gen_range(1..=12));
        for kind in kinds {
            let op = PGemmOp::new(m, n, k, kind.spec()).expect("positive dims");
            let data = GemmOperands::random(&op, &mut rng);
            let mut want = reference_gemm(&data.a, &data.b);
            if opts.fault == Some(Fault::Gemm) {
                want[(0, 0)] += Wide::ONE;
            }
            for shape in &arrays {
                for df in Dataflow::ALL {
                    let knobs = [
                        Knobs::default(),
                        Knobs {
                            k_segments: rng.gen_range(1..=4),
                            direction: if rng.gen() { TilingDirection::Vertical } else { TilingDirection::Lateral },
                            edge_fill: rng.gen(),
                        },
                    ];
                    for knobs in knobs {
                        let Ok(p) = plan(&op, shape, df, knobs) else { continue };
                        let got = simulate(&op, &data, shape, df, &p).map(|r| r.output);
                        t.check(got.as_ref() == Ok(&want), || format!("{op} {df} {shape} {knobs:?}"));
                    }
                }
            }
        }
    }
    t.finish()
}

/// Closed-form costs against simulator counters over the small-GEMM grid.
pub fn cost_matches_sim(opts: &VerifyOptions) -> SuiteOutcome {
    let mut t = Tally::new("cost_matches_sim");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xc057);
    let step = if opts.quick { 5 } else { 1 };
    let bump = u64::from(opts.fault == Some(Fault::Cost));
    let kinds = [DataType::Int8, DataType::Int16, DataType::Int32];
    let arrays = [ArrayShape::of_pes(8, 8), ArrayShape::of_pes(16, 16)];
    for m in (1..=12).step_by(step) {
        for n in (1..=12).step_by(step) {
            for k in (1..=12).step_by(step) {
                for kind in kinds {
                    let op = PGemmOp::new(m, n, k, kind.spec()).expect("positive dims");
                    let data = GemmOperands::random(&op, &mut rng);
                    for shape in &arrays {
                        for df in Dataflow::ALL {
                            let Ok(p) = plan(&op, shape, df, Knobs::default()) else { continue };
                            let sim = simulate_with(&op, &data, shape, df, &p, Timing::default(), &mut NoTrace)
                                .expect("plan matches op");
                            let got = (sim.cycles, sim.reads, sim.writes);
                            let model = plan_cost(&p, Timing::default());
                            let want = (model.cycles + bump, model.reads, model.writes);
                            t.check(got == want, || format!("{op} {df} {shape}: sim {got:?} model {want:?}"));
                            if p.tile_count() == 1 {
                                let tile = tile_cost(TileDims { m, n, k }, shape, df, kind.spec().limb_count)
                                    .map(|c| (c.cycles + bump, c.reads, c.writes));
                                t.check(tile == Ok(got), || format!("{op} {df} {shape}: tile {tile:?} sim {got:?}"));
                            }
                        }
                    }
                }
            }
        }
    }
    t.finish()
}

/// Configured SIMD gains against the reference gain values.
pub fn simd_gains(_opts: &VerifyOptions) -> SuiteOutcome {
    let mut t = Tally::new("simd_gains");
    let table = ThroughputTable::default();
    let expected = [
        (DataType::Int8, 8.0),
        (DataType::Int16, 4.0),
        (DataType::Int32, 2.0),
        (DataType::Int64, 1.0),
        (DataType::Bp16, 16.0),
        (DataType::Fp16, 4.0),
        (DataType::Fp32, 3.56),
        (DataType::Fp64, 1.3),
    ];
    for (kind, gain) in expected {
        let got = table.get(kind).map(|e| *e.gain.numer() as f64 / *e.gain.denom() as f64);
        t.check(got == Ok(gain), || format!("{kind}: {got:?} != {gain}"));
    }
    t.finish()
}

/// One case holds for every footprint; K-segmentation trades memory for cycles.
pub fn coverage(opts: &VerifyOptions) -> SuiteOutcome {
    let mut t = Tally::new("coverage");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xc0);
    let samples = if opts.quick { 1_000 } else { 10_000 };
    for _ in 0..samples {
        let shape = ArrayShape::of_pes(8 * rng.gen_range(1..=16), 8 * rng.gen_range(1..=16));
        let fp = MappedFootprint {
            spatial_rows: rng.gen_range(1..=3 * shape.rows),
            spatial_cols: rng.gen_range(1..=3 * shape.cols),
            temporal_len: 1,
        };
        let (r, c, rr, cc) = (fp.spatial_rows, fp.spatial_cols, shape.rows, shape.cols);
        let holds = [
            (CoverageCase::Uncover1, r <= rr && c <= cc && (r < rr || c < cc)),
            (CoverageCase::Uncover2, r > rr && c < cc),
            (CoverageCase::Uncover3, c > cc && r < rr),
            (CoverageCase::Cover2, r > rr && c == cc),
            (CoverageCase::Cover3, c > cc && r == rr),
            (CoverageCase::Cover1, (r > rr && c > cc) || (r == rr && c == cc)),
        ];
        let matching: Vec<_> = holds.iter().filter(|h| h.1).map(|h| h.0).collect();
        let got = classify(&fp, &shape);
        t.check(matching == [got], || format!("{fp:?} on {shape}: {got:?} vs {matching:?}"));
    }

    let mut tried = 0;
    while tried < if opts.quick { 30 } else { 100 } {
        let kind = DataType::ALL[rng.gen_range(0..DataType::ALL.len())];
        let op = PGemmOp::new(rng.gen_range(1..=40), rng.gen_range(1..=40), rng.gen_range(2..=64), kind.spec())
            .expect("positive dims");
        let shape = ArrayShape::of_pes(8 * rng.gen_range(1..=4), 8 * rng.gen_range(1..=4));
        let df = Dataflow::ALL[rng.gen_range(0..3)];
        let case = classify(&footprint(&op, df), &shape);
        if !matches!(case, CoverageCase::Uncover1 | CoverageCase::Uncover2 | CoverageCase::Uncover3) {
            continue;
        }
        let costs: Vec<_> = (1..=8)
            .map_while(|s| plan(&op, &shape, df, Knobs { k_segments: s, ..Knobs::default() }).ok())
            .map(|p| plan_cost(&p, Timing::default()))
            .collect();
        if costs.is_empty() {
            continue;
        }
        tried += 1;
        for w in costs.windows(2) {
            t.check(w[1].cycles <= w[0].cycles && w[1].reads.total() >= w[0].reads.total(), || {
                format!("{op} {df} {shape}: {:?} -> {:?}", w[0], w[1])
            });
        }
    }
    t.finish()
}

/// The selected candidate against a brute-force re-scan, plus report determinism.
pub fn scheduler_argmin(opts: &VerifyOptions) -> SuiteOutcome {
    let mut t = Tally::new("scheduler_argmin");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5c);
    let spaces = if opts.quick { 10 } else { 50 };
    for _ in 0..spaces {
        let kind = DataType::ALL[rng.gen_range(0..DataType::ALL.len())];
        let op = PGemmOp::new(rng.gen_range(1..=96), rng.gen_range(1..=96), rng.gen_range(1..=96), kind.spec())
            .expect("positive dims");
        let cfg = GtaConfig::with_lanes([1, 2, 4, 6, 8, 16][rng.gen_range(0..6)]);
        let options = ScheduleOptions { max_k_segments: rng.gen_range(1..=8), ..ScheduleOptions::default() };
        let candidates = enumerate(&op, &cfg, &options).expect("valid config");
        let report = select(&op, candidates.clone()).expect("non-empty");

        let points: Vec<_> = candidates.iter().map(|c| (c.cost.cycles as u128, c.mem() as u128)).collect();
        let cmin = points.iter().map(|p| p.0).min().unwrap_or(1);
        let mmin = points.iter().map(|p| p.1).min().unwrap_or(1);
        let mut best = 0;
        for (i, &(c, m)) in points.iter().enumerate() {
            let (bc, bm) = points[best];
            let lhs = c * c * mmin * mmin + m * m * cmin * cmin;
            let rhs = bc * bc * mmin * mmin + bm * bm * cmin * cmin;
            if lhs < rhs || (lhs == rhs && c < bc) {
                best = i;
            }
        }
        let chosen = if opts.fault == Some(Fault::Scheduler) {
            (report.chosen + 1) % points.len().max(2)
        } else {
            report.chosen
        };
        t.check(chosen == best, || format!("{op}: chose {chosen}, rescan {best}"));

        let has_unit = |f: fn(&crate::scheduler::ScoredCandidate) -> f64| report.candidates.iter().any(|c| f(c) == 1.0);
        t.check(has_unit(|c| c.cycles_ratio) && has_unit(|c| c.mem_ratio), || format!("{op}: no unit ratio"));

        let raw: Vec<_> = candidates.iter().map(|c| (c.cost.cycles, c.mem())).collect();
        t.check(argmin(&raw) == Some(report.chosen), || format!("{op}: argmin disagrees"));

        let again = select(&op, enumerate(&op, &cfg, &options).expect("valid config")).expect("non-empty");
        let (mut a, mut b) = (Vec::new(), Vec::new());
        scatter_export(&report, &mut a).expect("in-memory write");
        scatter_export(&again, &mut b).expect("in-memory write");
        let same = a == b && report.to_json().ok() == again.to_json().ok();
        t.check(same, || format!("{op}: reports differ between runs"));
    }
    t.finish()
}

pub fn run_all(opts: &VerifyOptions) -> Vec<SuiteOutcome> {
    let suites: [fn(&VerifyOptions) -> SuiteOutcome; 7] = [
        arithmetic_exhaustive,
        arithmetic_random,
        gemm_exact,
        cost_matches_sim,
        simd_gains,
        coverage,
        scheduler_argmin,
    ];
    suites.iter().map(|suite| suite(opts)).collect()
}
