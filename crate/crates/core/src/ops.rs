//! Operator descriptions shared by the simulator, cost model and scheduler.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::precision::{PrecisionSpec, Wide};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpError {
    #[error("GEMM dimensions must be positive (got M={m}, N={n}, K={k})")]
    EmptyDimension { m: usize, n: usize, k: usize },
    #[error("operand {operand} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch { operand: Operand, got: (usize, usize), expected: (usize, usize) },
    #[error("operand {operand}[{row}][{col}] = {value} is out of range for {precision}")]
    ValueOutOfRange { operand: Operand, row: usize, col: usize, value: i128, precision: PrecisionSpec },
    #[error("cannot parse operator `{text}`: {reason}")]
    Parse { text: String, reason: String },
}

/// Which GEMM operand a counter or trace event refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operand {
    /// Left input, `M x K`.
    A,
    /// Right input (weights), `K x N`.
    B,
    /// Output, `M x N`.
    C,
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operand::A => "A",
            Operand::B => "B",
            Operand::C => "C",
        })
    }
}

/// A lowered matrix-multiply-shaped operator: `C[M x N] = A[M x K] * B[K x N]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PGemmOp {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub precision: PrecisionSpec,
}

impl PGemmOp {
    pub fn new(m: usize, n: usize, k: usize, precision: PrecisionSpec) -> Result<Self, OpError> {
        let op = PGemmOp { m, n, k, precision };
        op.validate()?;
        Ok(op)
    }

    pub fn validate(&self) -> Result<(), OpError> {
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(OpError::EmptyDimension { m: self.m, n: self.n, k: self.k });
        }
        Ok(())
    }

    pub fn macs(&self) -> u64 {
        (self.m * self.n * self.k) as u64
    }

    pub fn with_precision(self, precision: PrecisionSpec) -> Self {
        PGemmOp { precision, ..self }
    }
}

/// Parses `M=4,N=4,K=4,prec=int8` (keys in any order and case).
impl FromStr for PGemmOp {
    type Err = OpError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = |reason: String| OpError::Parse { text: text.to_string(), reason };
        let (mut m, mut n, mut k, mut precision) = (None, None, None, None);
        for field in text.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            let (key, value) = field.split_once('=').ok_or_else(|| err(format!("`{field}` is not key=value")))?;
            let value = value.trim();
            let dim = || value.parse::<usize>().map_err(|_| err(format!("`{value}` is not a dimension")));
            match key.trim().to_ascii_lowercase().as_str() {
                "m" => m = Some(dim()?),
                "n" => n = Some(dim()?),
                "k" => k = Some(dim()?),
                "prec" | "precision" => {
                    precision = Some(value.parse::<PrecisionSpec>().map_err(|e| err(e.to_string()))?)
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        let missing = |what: &str| err(format!("missing {what}"));
        PGemmOp::new(
            m.ok_or_else(|| missing("M"))?,
            n.ok_or_else(|| missing("N"))?,
            k.ok_or_else(|| missing("K"))?,
            precision.ok_or_else(|| missing("prec"))?,
        )
    }
}

impl fmt::Display for PGemmOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M={},N={},K={},prec={}", self.m, self.n, self.k, self.precision)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorKind {
    /// Element-wise binary operation.
    Map,
    /// Reduction of one operand to a scalar.
    Reduce,
    /// Element-wise multiply-accumulate.
    Mac,
}

impl VectorKind {
    pub fn name(self) -> &'static str {
        match self {
            VectorKind::Map => "map",
            VectorKind::Reduce => "reduce",
            VectorKind::Mac => "mac",
        }
    }

    pub fn source_operands(self) -> usize {
        match self {
            VectorKind::Map | VectorKind::Mac => 2,
            VectorKind::Reduce => 1,
        }
    }
}

/// A reuse-free element-wise task executed in SIMD mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VectorOp {
    pub kind: VectorKind,
    pub elements: u64,
    pub precision: PrecisionSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Matrix<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }
}

impl<T> Matrix<T> {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged matrix");
        Matrix { rows: n_rows, cols: n_cols, data: rows.into_iter().flatten().collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        assert!(i < self.rows && j < self.cols, "({i},{j}) outside {}x{}", self.rows, self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        assert!(i < self.rows && j < self.cols, "({i},{j}) outside {}x{}", self.rows, self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Operand values for a simulation. Float kinds carry integer mantissas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GemmOperands {
    pub a: Matrix<i128>,
    pub b: Matrix<i128>,
}

impl GemmOperands {
    pub fn new(op: &PGemmOp, a: Matrix<i128>, b: Matrix<i128>) -> Result<Self, OpError> {
        let operands = GemmOperands { a, b };
        operands.validate(op)?;
        Ok(operands)
    }

    pub fn zeros(op: &PGemmOp) -> Self {
        GemmOperands { a: Matrix::filled(op.m, op.k, 0), b: Matrix::filled(op.k, op.n, 0) }
    }

    /// Uniform values over the full signed magnitude range of the precision.
    pub fn random(op: &PGemmOp, rng: &mut impl Rng) -> Self {
        let max = op.precision.max_magnitude() as i128;
        let mut draw = |_, _| rng.gen_range(-max..=max);
        let a = Matrix::from_fn(op.m, op.k, &mut draw);
        let b = Matrix::from_fn(op.k, op.n, &mut draw);
        GemmOperands { a, b }
    }

    pub fn validate(&self, op: &PGemmOp) -> Result<(), OpError> {
        for (operand, matrix, expected) in [(Operand::A, &self.a, (op.m, op.k)), (Operand::B, &self.b, (op.k, op.n))] {
            if matrix.shape() != expected {
                return Err(OpError::ShapeMismatch { operand, got: matrix.shape(), expected });
            }
            let max = op.precision.max_magnitude();
            for i in 0..matrix.rows() {
                for (j, &value) in matrix.row(i).iter().enumerate() {
                    if value.unsigned_abs() > max {
                        return Err(OpError::ValueOutOfRange {
                            operand,
                            row: i,
                            col: j,
                            value,
                            precision: op.precision,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Plain wide-integer GEMM, independent of the limb path.
pub fn reference_gemm(a: &Matrix<i128>, b: &Matrix<i128>) -> Matrix<Wide> {
    assert_eq!(a.cols(), b.rows(), "inner dimensions differ");
    Matrix::from_fn(a.rows(), b.cols(), |i, j| {
        (0..a.cols()).fold(Wide::ZERO, |acc, k| acc + Wide::from(a[(i, k)]) * Wide::from(b[(k, j)]))
    })
}
