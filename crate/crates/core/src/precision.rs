//! Limb arithmetic for 8-bit processing elements.
//!
//! A wide operand is split into base-256 digits ("limbs"), every limb of one
//! operand is multiplied with every limb of the other on an 8-bit multiplier,
//! and the partial products are recombined by shift-add in the accumulator.
//! Operands are handled in sign-magnitude form: the multipliers only ever see
//! unsigned limbs and the product sign is applied when recombining.
//!
//! Floating-point kinds only contribute their integer mantissa to this path.
//! Exponent handling, alignment and rounding are not modelled.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Signed accumulator value wide enough for any product plus reduction headroom.
pub type Wide = ethnum::I256;

/// Widest limb vector supported by a single MPRA row.
pub const MAX_LIMBS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrecisionError {
    #[error("value {value} does not fit in {bits} magnitude bits")]
    OutOfRange { value: i128, bits: u32 },
    #[error("operand limb counts differ ({left} vs {right})")]
    MismatchedWidth { left: usize, right: usize },
    #[error("{0} is not a floating-point datatype")]
    NotFloat(DataType),
    #[error("unknown datatype `{0}`")]
    UnknownDataType(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Int8,
    Int16,
    Int32,
    Int64,
    Bp16,
    Fp16,
    Fp32,
    Fp64,
}

impl DataType {
    pub const ALL: [DataType; 8] = [
        DataType::Int8,
        DataType::Int16,
        DataType::Int32,
        DataType::Int64,
        DataType::Bp16,
        DataType::Fp16,
        DataType::Fp32,
        DataType::Fp64,
    ];

    pub fn is_float(self) -> bool {
        matches!(self, DataType::Bp16 | DataType::Fp16 | DataType::Fp32 | DataType::Fp64)
    }

    pub fn name(self) -> &'static str {
        match self {
            DataType::Int8 => "int8",
            DataType::Int16 => "int16",
            DataType::Int32 => "int32",
            DataType::Int64 => "int64",
            DataType::Bp16 => "bp16",
            DataType::Fp16 => "fp16",
            DataType::Fp32 => "fp32",
            DataType::Fp64 => "fp64",
        }
    }

    pub fn spec(self) -> PrecisionSpec {
        PrecisionSpec::of(self)
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataType {
    type Err = PrecisionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let kind = match lower.as_str() {
            "int8" => DataType::Int8,
            "int16" => DataType::Int16,
            "int32" => DataType::Int32,
            "int64" => DataType::Int64,
            "bp16" | "bf16" => DataType::Bp16,
            "fp16" => DataType::Fp16,
            "fp32" => DataType::Fp32,
            "fp64" => DataType::Fp64,
            _ => return Err(PrecisionError::UnknownDataType(s.to_string())),
        };
        Ok(kind)
    }
}

/// Width information for one datatype as seen by the 8-bit PE array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "DataType", into = "DataType")]
pub struct PrecisionSpec {
    pub kind: DataType,
    pub total_bits: u32,
    /// Bits multiplied on the array. Equals `total_bits` for integer kinds.
    pub mantissa_bits: u32,
    pub limb_count: usize,
}

impl PrecisionSpec {
    pub const fn of(kind: DataType) -> Self {
        let (total_bits, mantissa_bits) = match kind {
            DataType::Int8 => (8, 8),
            DataType::Int16 => (16, 16),
            DataType::Int32 => (32, 32),
            DataType::Int64 => (64, 64),
            DataType::Bp16 => (16, 8),
            DataType::Fp16 => (16, 12),
            DataType::Fp32 => (32, 24),
            DataType::Fp64 => (64, 53),
        };
        PrecisionSpec { kind, total_bits, mantissa_bits, limb_count: mantissa_bits.div_ceil(8) as usize }
    }

    /// Largest magnitude accepted by [`decompose`].
    pub fn max_magnitude(&self) -> u128 {
        (1u128 << self.mantissa_bits) - 1
    }

    pub fn bytes(&self) -> u64 {
        u64::from(self.total_bits / 8)
    }
}

impl From<DataType> for PrecisionSpec {
    fn from(kind: DataType) -> Self {
        PrecisionSpec::of(kind)
    }
}

impl From<PrecisionSpec> for DataType {
    fn from(spec: PrecisionSpec) -> Self {
        spec.kind
    }
}

impl fmt::Display for PrecisionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind.fmt(f)
    }
}

impl FromStr for PrecisionSpec {
    type Err = PrecisionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<DataType>().map(PrecisionSpec::of)
    }
}

/// Maps a floating-point kind onto the integer width of its mantissa multiply.
pub fn mantissa_map(kind: DataType) -> Result<PrecisionSpec, PrecisionError> {
    if kind.is_float() {
        Ok(PrecisionSpec::of(kind))
    } else {
        Err(PrecisionError::NotFloat(kind))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Sign {
    #[default]
    Pos,
    Neg,
}

impl Sign {
    pub fn of(x: i128) -> Sign {
        if x < 0 {
            Sign::Neg
        } else {
            Sign::Pos
        }
    }

    pub fn as_i64(self) -> i64 {
        match self {
            Sign::Pos => 1,
            Sign::Neg => -1,
        }
    }

    #[inline]
    pub fn product(self, other: Sign) -> Sign {
        if self == other {
            Sign::Pos
        } else {
            Sign::Neg
        }
    }
}

/// Little-endian base-256 digits of an operand magnitude plus its sign.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct LimbVector {
    limbs: [u8; MAX_LIMBS],
    len: u8,
    sign: Sign,
}

impl LimbVector {
    /// Builds a limb vector from explicit digits. Panics above [`MAX_LIMBS`].
    pub fn new(limbs: &[u8], sign: Sign) -> Self {
        assert!(limbs.len() <= MAX_LIMBS, "at most {MAX_LIMBS} limbs");
        let mut buf = [0u8; MAX_LIMBS];
        buf[..limbs.len()].copy_from_slice(limbs);
        LimbVector { limbs: buf, len: limbs.len() as u8, sign }
    }

    #[inline]
    pub fn limbs(&self) -> &[u8] {
        &self.limbs[..self.len as usize]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn sign(&self) -> Sign {
        self.sign
    }
}

impl fmt::Debug for LimbVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LimbVector").field("limbs", &self.limbs()).field("sign", &self.sign).finish()
    }
}

#[inline]
pub fn decompose(x: i128, spec: PrecisionSpec) -> Result<LimbVector, PrecisionError> {
    let magnitude = x.unsigned_abs();
    if magnitude >> spec.mantissa_bits != 0 {
        return Err(PrecisionError::OutOfRange { value: x, bits: spec.mantissa_bits });
    }
    let mut limbs = [0u8; MAX_LIMBS];
    let mut rest = magnitude;
    for limb in limbs.iter_mut().take(spec.limb_count) {
        *limb = rest as u8;
        rest >>= 8;
    }
    Ok(LimbVector { limbs, len: spec.limb_count as u8, sign: Sign::of(x) })
}

pub fn recompose(v: &LimbVector) -> i128 {
    let magnitude = v.limbs().iter().rev().fold(0i128, |acc, &limb| (acc << 8) | i128::from(limb));
    match v.sign {
        Sign::Pos => magnitude,
        Sign::Neg => -magnitude,
    }
}

/// `cells[i][j] = x.limbs[i] * y.limbs[j]`, tagged with the product sign.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PartialProductGrid {
    cells: [[u16; MAX_LIMBS]; MAX_LIMBS],
    n: usize,
    sign: Sign,
}

impl PartialProductGrid {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cell(&self, i: usize, j: usize) -> u16 {
        assert!(i < self.n && j < self.n);
        self.cells[i][j]
    }

    #[inline]
    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u16]> + '_ {
        self.cells[..self.n].iter().map(move |row| &row[..self.n])
    }
}

impl fmt::Debug for PartialProductGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartialProductGrid")
            .field("cells", &self.rows().collect::<Vec<_>>())
            .field("sign", &self.sign)
            .finish()
    }
}

#[inline]
pub fn partial_products(x: &LimbVector, y: &LimbVector) -> Result<PartialProductGrid, PrecisionError> {
    if x.len() != y.len() {
        return Err(PrecisionError::MismatchedWidth { left: x.len(), right: y.len() });
    }
    let n = x.len().min(MAX_LIMBS);
    let mut cells = [[0u16; MAX_LIMBS]; MAX_LIMBS];
    for (row, &xi) in cells.iter_mut().zip(&x.limbs[..n]) {
        for (cell, &yj) in row.iter_mut().zip(&y.limbs[..n]) {
            *cell = u16::from(xi) * u16::from(yj);
        }
    }
    Ok(PartialProductGrid { cells, n, sign: x.sign.product(y.sign) })
}

/// Shift-add recombination of a partial-product grid into the exact product.
#[inline]
pub fn accumulate_shift_add(grid: &PartialProductGrid, spec: PrecisionSpec) -> Wide {
    debug_assert_eq!(grid.n, spec.limb_count);
    // Products of up to four limbs fit in 64 bits, up to eight in 128.
    let n = grid.n.min(MAX_LIMBS);
    let value = if n <= 4 {
        let mut magnitude = 0u64;
        for (i, row) in grid.cells[..n].iter().enumerate() {
            for (j, &cell) in row[..n].iter().enumerate() {
                magnitude += u64::from(cell) << (8 * (i + j));
            }
        }
        Wide::from(magnitude)
    } else {
        let mut magnitude = 0u128;
        for (i, row) in grid.cells[..n].iter().enumerate() {
            for (j, &cell) in row[..n].iter().enumerate() {
                magnitude += u128::from(cell) << (8 * (i + j));
            }
        }
        Wide::from(magnitude)
    };
    match grid.sign {
        Sign::Pos => value,
        Sign::Neg => -value,
    }
}

/// Cross-multiplies limbs and shift-adds the partial products as they are
/// formed, without keeping the grid. Equal to
/// `accumulate_shift_add(&partial_products(x, y)?, _)`.
#[inline]
pub fn multiply_limbs(x: &LimbVector, y: &LimbVector) -> Result<Wide, PrecisionError> {
    if x.len() != y.len() {
        return Err(PrecisionError::MismatchedWidth { left: x.len(), right: y.len() });
    }
    let n = x.len().min(MAX_LIMBS);
    let value = if n <= 4 {
        let mut magnitude = 0u64;
        for i in 0..n {
            for j in 0..n {
                magnitude += (u64::from(x.limbs[i]) * u64::from(y.limbs[j])) << (8 * (i + j));
            }
        }
        Wide::from(magnitude)
    } else {
        let mut magnitude = 0u128;
        for i in 0..n {
            for j in 0..n {
                magnitude += (u128::from(x.limbs[i]) * u128::from(y.limbs[j])) << (8 * (i + j));
            }
        }
        Wide::from(magnitude)
    };
    Ok(match x.sign.product(y.sign) {
        Sign::Pos => value,
        Sign::Neg => -value,
    })
}

/// Full limb path: decompose, cross-multiply, shift-add.
#[inline]
pub fn limb_multiply(x: i128, y: i128, spec: PrecisionSpec) -> Result<Wide, PrecisionError> {
    multiply_limbs(&decompose(x, spec)?, &decompose(y, spec)?)
}

/// Output-side accumulator receiving signed column sums tagged by limb pair.
///
/// A sum produced for limb pair `(p, q)` carries weight `256^(p + q)`; carries
/// between limb positions resolve inside the wide register.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ShiftAddAccumulator {
    value: Wide,
}

impl ShiftAddAccumulator {
    pub fn add(&mut self, p: usize, q: usize, partial: i64) {
        self.value += Wide::from(partial) << (8 * (p + q) as u32);
    }

    pub fn merge(&mut self, other: &ShiftAddAccumulator) {
        self.value += other.value;
    }

    pub fn value(&self) -> Wide {
        self.value
    }
}
