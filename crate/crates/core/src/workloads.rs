//! Benchmark workloads lowered to p-GEMM and vector operators.
//!
//! Workload files are TOML:
//!
//! ```toml
//! [[workload]]
//! name = "ALI"
//! description = "Alexnet inference"
//! precision = "int8"            # default for ops that omit it
//! provenance = "free text"
//!
//! [[workload.op]]
//! type = "gemm"                 # or "vector"
//! label = "conv2"
//! m = 729
//! n = 256
//! k = 2400
//! conv = { h = 27, w = 27, cin = 96, cout = 256, kh = 5, kw = 5, stride = 1, pad = 2 }
//! note = "im2col of the 5x5 layer"
//!
//! [[workload.op]]
//! type = "vector"
//! label = "relu2"
//! kind = "map"                  # map | reduce | mac
//! elements = 186624
//! ```
//!
//! A `conv` entry records where the GEMM dimensions come from; the loader
//! checks that it lowers to exactly `m`, `n`, `k`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ops::{OpError, PGemmOp, VectorKind, VectorOp};
use crate::precision::{DataType, PrecisionSpec};

const CATALOG: &str = include_str!("../data/catalog.toml");

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid convolution shape: {0}")]
    InvalidConvShape(String),
    #[error("workload `{workload}` op `{label}`: {reason}")]
    InvalidOp { workload: String, label: String, reason: String },
    #[error("workload file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("no workload named `{0}`")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvShape {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
}

fn one() -> usize {
    1
}

impl ConvShape {
    pub fn output_hw(&self) -> Result<(usize, usize), WorkloadError> {
        let bad = |why: &str| Err(WorkloadError::InvalidConvShape(format!("{why} in {self:?}")));
        if [self.h, self.w, self.cin, self.cout, self.kh, self.kw].contains(&0) {
            return bad("zero dimension");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        let (ph, pw) = (self.h + 2 * self.pad, self.w + 2 * self.pad);
        if ph < self.kh || pw < self.kw {
            return bad("kernel larger than padded input");
        }
        Ok(((ph - self.kh) / self.stride + 1, (pw - self.kw) / self.stride + 1))
    }

    pub fn macs(&self) -> Result<u64, WorkloadError> {
        let (oh, ow) = self.output_hw()?;
        Ok((oh * ow * self.cout * self.kh * self.kw * self.cin) as u64)
    }
}

/// im2col view: one GEMM row per output pixel, one column per output channel.
pub fn lower_conv(conv: &ConvShape, precision: PrecisionSpec) -> Result<PGemmOp, WorkloadError> {
    let (oh, ow) = conv.output_hw()?;
    PGemmOp::new(oh * ow, conv.cout, conv.kh * conv.kw * conv.cin, precision)
        .map_err(|e| WorkloadError::InvalidConvShape(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Gemm(PGemmOp),
    Vector(VectorOp),
}

impl OpKind {
    pub fn precision(&self) -> PrecisionSpec {
        match self {
            OpKind::Gemm(g) => g.precision,
            OpKind::Vector(v) => v.precision,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadOp {
    pub label: String,
    pub kind: OpKind,
    pub conv: Option<ConvShape>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub name: String,
    pub description: String,
    pub precision: PrecisionSpec,
    pub provenance: String,
    pub ops: Vec<WorkloadOp>,
}

impl Workload {
    pub fn gemms(&self) -> impl Iterator<Item = (&str, &PGemmOp)> {
        self.ops.iter().filter_map(|op| match &op.kind {
            OpKind::Gemm(g) => Some((op.label.as_str(), g)),
            OpKind::Vector(_) => None,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDoc {
    #[serde(default)]
    workload: Vec<FileWorkload>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileWorkload {
    name: String,
    #[serde(default)]
    description: String,
    precision: DataType,
    #[serde(default)]
    provenance: String,
    #[serde(default, rename = "op")]
    ops: Vec<FileOp>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum FileOp {
    Gemm {
        label: String,
        m: usize,
        n: usize,
        k: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        precision: Option<DataType>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        conv: Option<ConvShape>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    Vector {
        label: String,
        kind: VectorKind,
        elements: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        precision: Option<DataType>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
}

impl FileWorkload {
    fn resolve(self) -> Result<Workload, WorkloadError> {
        let default = self.precision.spec();
        let name = self.name;
        let ops = self.ops.into_iter().map(|op| resolve_op(&name, default, op)).collect::<Result<_, _>>()?;
        Ok(Workload { name, description: self.description, precision: default, provenance: self.provenance, ops })
    }
}

fn resolve_op(workload: &str, default: PrecisionSpec, op: FileOp) -> Result<WorkloadOp, WorkloadError> {
    let invalid = |label: &str, reason: String| WorkloadError::InvalidOp {
        workload: workload.to_string(),
        label: label.to_string(),
        reason,
    };
    match op {
        FileOp::Gemm { label, m, n, k, precision, conv, note } => {
            let precision = precision.map_or(default, DataType::spec);
            let gemm = PGemmOp::new(m, n, k, precision).map_err(|e: OpError| invalid(&label, e.to_string()))?;
            if let Some(conv) = &conv {
                let lowered = lower_conv(conv, precision).map_err(|e| invalid(&label, e.to_string()))?;
                if lowered != gemm {
                    return Err(invalid(&label, format!("conv lowers to {lowered}, file says {gemm}")));
                }
            }
            Ok(WorkloadOp { label, kind: OpKind::Gemm(gemm), conv, note })
        }
        FileOp::Vector { label, kind, elements, precision, note } => {
            let precision = precision.map_or(default, DataType::spec);
            let v = VectorOp { kind, elements, precision };
            Ok(WorkloadOp { label, kind: OpKind::Vector(v), conv: None, note })
        }
    }
}

fn to_file(w: &Workload) -> FileWorkload {
    let ops = w
        .ops
        .iter()
        .map(|op| {
            let precision = (op.kind.precision() != w.precision).then_some(op.kind.precision().kind);
            match op.kind {
                OpKind::Gemm(g) => FileOp::Gemm {
                    label: op.label.clone(),
                    m: g.m,
                    n: g.n,
                    k: g.k,
                    precision,
                    conv: op.conv,
                    note: op.note.clone(),
                },
                OpKind::Vector(v) => FileOp::Vector {
                    label: op.label.clone(),
                    kind: v.kind,
                    elements: v.elements,
                    precision,
                    note: op.note.clone(),
                },
            }
        })
        .collect();
    FileWorkload {
        name: w.name.clone(),
        description: w.description.clone(),
        precision: w.precision.kind,
        provenance: w.provenance.clone(),
        ops,
    }
}

pub fn parse_workloads(text: &str) -> Result<Vec<Workload>, WorkloadError> {
    let doc: FileDoc = toml::from_str(text)?;
    doc.workload.into_iter().map(FileWorkload::resolve).collect()
}

pub fn load_workloads(path: &Path) -> Result<Vec<Workload>, WorkloadError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| WorkloadError::Io { path: path.display().to_string(), source })?;
    parse_workloads(&text)
}

pub fn to_toml(workloads: &[Workload]) -> String {
    let doc = FileDoc { workload: workloads.iter().map(to_file).collect() };
    toml::to_string(&doc).expect("workload documents always serialize")
}

/// The shipped benchmark set.
pub fn catalog() -> Vec<Workload> {
    parse_workloads(CATALOG).expect("shipped catalog is valid")
}

pub fn find<'a>(workloads: &'a [Workload], name: &str) -> Result<&'a Workload, WorkloadError> {
    workloads.iter().find(|w| w.name.eq_ignore_ascii_case(name)).ok_or_else(|| WorkloadError::Unknown(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(h: usize, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> ConvShape {
        ConvShape { h, w: h, cin, cout, kh: k, kw: k, stride, pad }
    }

    #[test]
    fn table2_precisions() {
        let expected = [
            ("BNM", DataType::Int64),
            ("RGB", DataType::Int8),
            ("FFE", DataType::Int16),
            ("MD", DataType::Int32),
            ("PCA", DataType::Fp64),
            ("ALT", DataType::Fp32),
            ("FFL", DataType::Bp16),
            ("ALI", DataType::Int8),
            ("Nerf", DataType::Fp32),
        ];
        let cat = catalog();
        let got: Vec<_> = cat.iter().map(|w| (w.name.as_str(), w.precision.kind)).collect();
        assert_eq!(got, expected);
        for w in &cat {
            assert!(!w.ops.is_empty(), "{}", w.name);
            assert!(w.ops.iter().all(|op| op.kind.precision() == w.precision), "{}", w.name);
        }
    }

    #[test]
    fn lowering_examples() {
        let p = DataType::Int8.spec();
        let g = lower_conv(&conv(1, 1, 1, 1, 1, 0), p).unwrap();
        assert_eq!((g.m, g.n, g.k), (1, 1, 1));
        let g = lower_conv(&conv(8, 4, 8, 3, 1, 1), p).unwrap();
        assert_eq!((g.m, g.k, g.n), (64, 36, 8));
        let alexnet_conv2 = conv(27, 96, 256, 5, 1, 2);
        let g = lower_conv(&alexnet_conv2, p).unwrap();
        assert_eq!((g.m, g.n, g.k), (729, 256, 2400));
        let ali = catalog().into_iter().find(|w| w.name == "ALI").unwrap();
        let shipped = ali.ops.iter().find(|op| op.label == "conv2").unwrap();
        assert_eq!(shipped.kind, OpKind::Gemm(g));
    }

    #[test]
    fn lowering_preserves_macs() {
        for c in [
            conv(27, 96, 256, 5, 1, 2),
            conv(227, 3, 96, 11, 4, 0),
            conv(13, 256, 384, 3, 1, 1),
            conv(9, 2, 3, 2, 3, 0),
        ] {
            assert_eq!(lower_conv(&c, DataType::Fp32.spec()).unwrap().macs(), c.macs().unwrap());
        }
    }

    #[test]
    fn invalid_conv() {
        let p = DataType::Int8.spec();
        assert!(matches!(lower_conv(&conv(4, 1, 1, 3, 0, 0), p), Err(WorkloadError::InvalidConvShape(_))));
        assert!(matches!(lower_conv(&conv(2, 1, 1, 5, 1, 0), p), Err(WorkloadError::InvalidConvShape(_))));
        assert!(matches!(lower_conv(&conv(0, 1, 1, 1, 1, 0), p), Err(WorkloadError::InvalidConvShape(_))));
    }

    #[test]
    fn catalog_round_trips() {
        let cat = catalog();
        let text = to_toml(&cat);
        assert_eq!(parse_workloads(&text).unwrap(), cat);
    }

    #[test]
    fn loader_rejects_bad_files() {
        let base = "[[workload]]\nname = \"x\"\nprecision = \"int8\"\n";
        assert!(parse_workloads(&format!(
            "{base}[[workload.op]]\ntype = \"gemm\"\nlabel = \"a\"\nm = 0\nn = 1\nk = 1\n"
        ))
        .is_err());
        assert!(parse_workloads(&format!(
            "{base}[[workload.op]]\ntype = \"gemm\"\nlabel = \"a\"\nm = 1\nn = 1\nk = 1\nbogus = 3\n"
        ))
        .is_err());
        assert!(parse_workloads("[[workload]]\nname = \"x\"\nprecision = \"int12\"\n").is_err());
        let wrong = format!(
            "{base}[[workload.op]]\ntype = \"gemm\"\nlabel = \"a\"\nm = 2\nn = 1\nk = 1\nconv = {{ h = 1, w = 1, cin = 1, cout = 1, kh = 1, kw = 1 }}\n"
        );
        assert!(matches!(parse_workloads(&wrong), Err(WorkloadError::InvalidOp { .. })));
        let mixed = format!("{base}[[workload.op]]\ntype = \"vector\"\nlabel = \"v\"\nkind = \"reduce\"\nelements = 0\nprecision = \"fp16\"\n");
        let w = parse_workloads(&mixed).unwrap();
        assert_eq!(w[0].ops[0].kind.precision(), DataType::Fp16.spec());
        assert_eq!(parse_workloads(&to_toml(&w)).unwrap(), w);
    }
}
