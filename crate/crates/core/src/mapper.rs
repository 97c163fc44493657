//! Dataflow pattern matching: how a p-GEMM footprint lands on an array.
//!
//! A footprint has a spatial extent in PEs and a temporal length in elements.
//! Planning splits the spatial extent into tiles no larger than the array,
//! optionally splits the temporal dimension into `k_segments` replicas that run
//! side by side, and packs the resulting jobs into passes. A pass is one
//! configuration of the array; all of its jobs start together and the pass
//! ends when the slowest job finishes.
//!
//! Tiles are aligned to whole elements: a limb-expanded dimension is only ever
//! cut at multiples of the limb count.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ArrayShape;
use crate::ops::{Matrix, PGemmOp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("k_segments = {requested} is not legal here (capacity {capacity}, temporal length {temporal})")]
    InvalidSegments { requested: usize, capacity: usize, temporal: usize },
    #[error("array {rows}x{cols} cannot hold a single {limbs}-limb element")]
    ArrayTooSmall { rows: usize, cols: usize, limbs: usize },
    #[error("unknown {what} `{value}`")]
    Parse { what: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataflow {
    Ws,
    Is,
    Os,
}

impl Dataflow {
    pub const ALL: [Dataflow; 3] = [Dataflow::Ws, Dataflow::Is, Dataflow::Os];

    pub fn name(self) -> &'static str {
        match self {
            Dataflow::Ws => "ws",
            Dataflow::Is => "is",
            Dataflow::Os => "os",
        }
    }
}

impl fmt::Display for Dataflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataflow {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ws" => Ok(Dataflow::Ws),
            "is" => Ok(Dataflow::Is),
            "os" => Ok(Dataflow::Os),
            _ => Err(MapError::Parse { what: "dataflow", value: s.to_string() }),
        }
    }
}

/// Spatial extent (PEs) and temporal length (elements) of a mapped operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MappedFootprint {
    pub spatial_rows: usize,
    pub spatial_cols: usize,
    pub temporal_len: usize,
}

pub fn footprint(op: &PGemmOp, dataflow: Dataflow) -> MappedFootprint {
    let n = op.precision.limb_count;
    let (spatial_rows, spatial_cols, temporal_len) = match dataflow {
        Dataflow::Ws => (op.k, op.n * n, op.m),
        Dataflow::Is => (op.k, op.m * n, op.n),
        Dataflow::Os => (op.m * n, op.n * n, op.k),
    };
    MappedFootprint { spatial_rows, spatial_cols, temporal_len }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoverageCase {
    Uncover1,
    Uncover2,
    Uncover3,
    Cover2,
    Cover3,
    Cover1,
}

pub fn classify(fp: &MappedFootprint, shape: &ArrayShape) -> CoverageCase {
    let (rows, cols) = (fp.spatial_rows, fp.spatial_cols);
    let (r, c) = (shape.rows, shape.cols);
    match (rows > r, cols > c) {
        (true, true) => CoverageCase::Cover1,
        (true, false) if cols == c => CoverageCase::Cover2,
        (true, false) => CoverageCase::Uncover2,
        (false, true) if rows == r => CoverageCase::Cover3,
        (false, true) => CoverageCase::Uncover3,
        // Exactly one full tile.
        (false, false) if rows == r && cols == c => CoverageCase::Cover1,
        (false, false) => CoverageCase::Uncover1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TilingDirection {
    /// Sweep along a row of tiles first: (0,0), (0,1), ..., (1,0), ...
    #[default]
    Lateral,
    /// Sweep down a column of tiles first: (0,0), (1,0), ..., (0,1), ...
    Vertical,
}

impl TilingDirection {
    pub fn name(self) -> &'static str {
        match self {
            TilingDirection::Lateral => "lateral",
            TilingDirection::Vertical => "vertical",
        }
    }
}

impl fmt::Display for TilingDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TilingDirection {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lateral" => Ok(TilingDirection::Lateral),
            "vertical" => Ok(TilingDirection::Vertical),
            _ => Err(MapError::Parse { what: "tiling direction", value: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Knobs {
    pub k_segments: usize,
    pub direction: TilingDirection,
    pub edge_fill: bool,
}

impl Default for Knobs {
    fn default() -> Self {
        Knobs { k_segments: 1, direction: TilingDirection::Lateral, edge_fill: false }
    }
}

/// Dimensions of a single-tile GEMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileDims {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

/// GEMM index ranges covered by one job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GemmRanges {
    pub m: Range<usize>,
    pub n: Range<usize>,
    pub k: Range<usize>,
}

/// One footprint slice placed on the array.
///
/// `rows` and `cols` are in elements of the spatial dimensions, `temporal` in
/// elements of the streamed dimension. `at` is the top-left PE.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Job {
    pub tile: (usize, usize),
    pub segment: usize,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    pub temporal: Range<usize>,
    pub at: (usize, usize),
}

impl Job {
    pub fn gemm_ranges(&self, dataflow: Dataflow) -> GemmRanges {
        let (r, c, t) = (self.rows.clone(), self.cols.clone(), self.temporal.clone());
        match dataflow {
            Dataflow::Ws => GemmRanges { m: t, n: c, k: r },
            Dataflow::Is => GemmRanges { m: c, n: t, k: r },
            Dataflow::Os => GemmRanges { m: r, n: c, k: t },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Pass {
    pub jobs: Vec<Job>,
}

/// A validated tiling of one operator on one array shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingPlan {
    pub op: PGemmOp,
    pub array: ArrayShape,
    pub dataflow: Dataflow,
    pub knobs: Knobs,
    pub footprint: MappedFootprint,
    pub case: CoverageCase,
    /// PEs per spatial element along rows and columns.
    pub row_unit: usize,
    pub col_unit: usize,
    /// Full tile extent in elements.
    pub tile_rows: usize,
    pub tile_cols: usize,
    row_elems: usize,
    col_elems: usize,
}

impl MappingPlan {
    pub fn limb_count(&self) -> usize {
        self.op.precision.limb_count
    }

    pub fn row_tiles(&self) -> usize {
        self.row_elems.div_ceil(self.tile_rows)
    }

    pub fn col_tiles(&self) -> usize {
        self.col_elems.div_ceil(self.tile_cols)
    }

    pub fn tile_count(&self) -> usize {
        self.row_tiles() * self.col_tiles()
    }

    /// Tile indices in sweep order.
    pub fn tile_order(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (rt, ct) = (self.row_tiles(), self.col_tiles());
        let direction = self.knobs.direction;
        (0..rt * ct).map(move |idx| match direction {
            TilingDirection::Lateral => (idx / ct, idx % ct),
            TilingDirection::Vertical => (idx % rt, idx / rt),
        })
    }

    fn segments(&self) -> impl Iterator<Item = Range<usize>> {
        split_even(self.footprint.temporal_len, self.knobs.k_segments)
    }

    fn job_extent(&self, rows: &Range<usize>, cols: &Range<usize>) -> (usize, usize) {
        (rows.len() * self.row_unit, cols.len() * self.col_unit)
    }

    /// Streams passes in execution order without materialising the whole plan.
    pub fn for_each_pass(&self, mut f: impl FnMut(&Pass)) {
        let mut packer = Skyline::new(self.array.rows, self.array.cols);
        let mut pass = Pass::default();
        for tile in self.tile_order() {
            let rows = span(tile.0, self.tile_rows, self.row_elems);
            let cols = span(tile.1, self.tile_cols, self.col_elems);
            let (h, w) = self.job_extent(&rows, &cols);
            if !self.knobs.edge_fill && !pass.jobs.is_empty() {
                f(&pass);
                pass.jobs.clear();
                packer.reset();
            }
            for (segment, temporal) in self.segments().enumerate() {
                let at = match packer.place(h, w) {
                    Some(at) => at,
                    None => {
                        f(&pass);
                        pass.jobs.clear();
                        packer.reset();
                        packer.place(h, w).expect("a tile always fits an empty array")
                    }
                };
                pass.jobs.push(Job { tile, segment, rows: rows.clone(), cols: cols.clone(), temporal, at });
            }
        }
        if !pass.jobs.is_empty() {
            f(&pass);
        }
    }

    pub fn passes(&self) -> Vec<Pass> {
        let mut out = Vec::new();
        self.for_each_pass(|p| out.push(p.clone()));
        out
    }

    /// Which job of `pass` owns each PE.
    pub fn occupancy(&self, pass: &Pass) -> Matrix<Option<usize>> {
        let mut grid = Matrix::filled(self.array.rows, self.array.cols, None);
        for (idx, job) in pass.jobs.iter().enumerate() {
            let (h, w) = self.job_extent(&job.rows, &job.cols);
            for r in job.at.0..job.at.0 + h {
                for c in job.at.1..job.at.1 + w {
                    assert!(grid[(r, c)].is_none(), "jobs overlap at PE ({r},{c})");
                    grid[(r, c)] = Some(idx);
                }
            }
        }
        grid
    }

    /// PE extent `(rows, cols)` of a job in this plan.
    pub fn pe_extent(&self, job: &Job) -> (usize, usize) {
        self.job_extent(&job.rows, &job.cols)
    }
}

fn span(index: usize, size: usize, total: usize) -> Range<usize> {
    let start = index * size;
    start..(start + size).min(total)
}

/// Contiguous split of `len` into `parts` pieces; earlier pieces take the remainder.
pub fn split_even(len: usize, parts: usize) -> impl Iterator<Item = Range<usize>> {
    let base = len / parts;
    let extra = len % parts;
    (0..parts).scan(0, move |start, i| {
        let size = base + usize::from(i < extra);
        let range = *start..*start + size;
        *start += size;
        Some(range)
    })
}

/// Largest number of identical full tiles that fit the array side by side.
pub fn replication_capacity(plan_tile_pe: (usize, usize), array: &ArrayShape) -> usize {
    (array.rows / plan_tile_pe.0) * (array.cols / plan_tile_pe.1)
}

pub fn plan(op: &PGemmOp, array: &ArrayShape, dataflow: Dataflow, knobs: Knobs) -> Result<MappingPlan, MapError> {
    let n = op.precision.limb_count;
    let fp = footprint(op, dataflow);
    let (row_unit, col_unit) = match dataflow {
        Dataflow::Ws | Dataflow::Is => (1, n),
        Dataflow::Os => (n, n),
    };
    let (row_elems, col_elems) = (fp.spatial_rows / row_unit, fp.spatial_cols / col_unit);
    let (max_rows, max_cols) = (array.rows / row_unit, array.cols / col_unit);
    if max_rows == 0 || max_cols == 0 {
        return Err(MapError::ArrayTooSmall { rows: array.rows, cols: array.cols, limbs: n });
    }
    let tile_rows = row_elems.min(max_rows);
    let tile_cols = col_elems.min(max_cols);
    let capacity = replication_capacity((tile_rows * row_unit, tile_cols * col_unit), array);
    let s = knobs.k_segments;
    if s == 0 || s > capacity || s > fp.temporal_len {
        return Err(MapError::InvalidSegments { requested: s, capacity, temporal: fp.temporal_len });
    }
    Ok(MappingPlan {
        op: *op,
        array: *array,
        dataflow,
        knobs,
        footprint: fp,
        case: classify(&fp, array),
        row_unit,
        col_unit,
        tile_rows,
        tile_cols,
        row_elems,
        col_elems,
    })
}

/// Bottom-left skyline packer. `segments` holds `(x, width, height)` runs of
/// the first free row per column.
struct Skyline {
    rows: usize,
    cols: usize,
    segments: Vec<(usize, usize, usize)>,
}

impl Skyline {
    fn new(rows: usize, cols: usize) -> Self {
        Skyline { rows, cols, segments: vec![(0, cols, 0)] }
    }

    fn reset(&mut self) {
        self.segments.clear();
        self.segments.push((0, self.cols, 0));
    }

    /// Lowest, then leftmost, position for an `h x w` block.
    fn place(&mut self, h: usize, w: usize) -> Option<(usize, usize)> {
        if w > self.cols || h > self.rows {
            return None;
        }
        let mut best: Option<(usize, usize)> = None;
        for (i, &(x, _, _)) in self.segments.iter().enumerate() {
            if x + w > self.cols {
                break;
            }
            let mut top = 0;
            for &(sx, _, sh) in &self.segments[i..] {
                if sx >= x + w {
                    break;
                }
                top = top.max(sh);
            }
            if top + h <= self.rows && best.is_none_or(|(by, bx)| (top, x) < (by, bx)) {
                best = Some((top, x));
            }
        }
        let (y, x) = best?;
        self.raise(x, w, y + h);
        Some((y, x))
    }

    fn raise(&mut self, x: usize, w: usize, height: usize) {
        let end = x + w;
        let mut next = Vec::with_capacity(self.segments.len() + 2);
        for &(sx, sw, sh) in &self.segments {
            let se = sx + sw;
            if se <= x || sx >= end {
                next.push((sx, sw, sh));
                continue;
            }
            if sx < x {
                next.push((sx, x - sx, sh));
            }
            if se > end {
                next.push((end, se - end, sh));
            }
        }
        next.push((x, w, height));
        next.sort_unstable_by_key(|s| s.0);
        // Merge equal-height neighbours.
        let mut merged: Vec<(usize, usize, usize)> = Vec::with_capacity(next.len());
        for seg in next {
            match merged.last_mut() {
                Some(last) if last.2 == seg.2 && last.0 + last.1 == seg.0 => last.1 += seg.1,
                _ => merged.push(seg),
            }
        }
        self.segments = merged;
    }
}
