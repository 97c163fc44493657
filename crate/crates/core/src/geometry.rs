//! Lanes, logical array arrangements and mask-group partitions.
//!
//! Every lane hosts one MPRA tile. The global layout arranges `lanes` tiles
//! into an `r_lanes x c_lanes` grid, so the logical array has
//! `r_lanes * mpra_rows` PE rows and `c_lanes * mpra_cols` PE columns.
//! Reconfiguration between layouts is treated as a logical switch whose cost
//! is [`GtaConfig::reconfig_cycles`].

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{requested} partitions requested but the mask width allows {max}")]
    TooManyPartitions { requested: usize, max: u64 },
    #[error("{requested} lanes requested but only {available} are available")]
    InsufficientLanes { requested: usize, available: usize },
    #[error("a partition must receive at least one lane")]
    EmptyRequest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GtaConfig {
    pub lanes: usize,
    pub mpra_rows: usize,
    pub mpra_cols: usize,
    pub mask_width_bits: u32,
    /// Cycles charged when the layout changes between two operators.
    pub reconfig_cycles: u64,
}

impl Default for GtaConfig {
    fn default() -> Self {
        GtaConfig { lanes: 16, mpra_rows: 8, mpra_cols: 8, mask_width_bits: 4, reconfig_cycles: 0 }
    }
}

impl GtaConfig {
    pub fn with_lanes(lanes: usize) -> Self {
        GtaConfig { lanes, ..GtaConfig::default() }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.lanes == 0 {
            return Err(GeometryError::InvalidConfig("lanes must be at least 1".into()));
        }
        if self.mpra_rows == 0 || self.mpra_cols == 0 {
            return Err(GeometryError::InvalidConfig("MPRA dimensions must be positive".into()));
        }
        if self.mask_width_bits == 0 || self.mask_width_bits > 32 {
            return Err(GeometryError::InvalidConfig("mask width must be in 1..=32 bits".into()));
        }
        Ok(())
    }

    pub fn pes_per_lane(&self) -> usize {
        self.mpra_rows * self.mpra_cols
    }

    pub fn max_partitions(&self) -> u64 {
        1u64 << self.mask_width_bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArrayShape {
    pub rows: usize,
    pub cols: usize,
    /// `(r_lanes, c_lanes)` grid of MPRA tiles.
    pub lane_grid: (usize, usize),
}

impl ArrayShape {
    pub fn from_lanes(cfg: &GtaConfig, r_lanes: usize, c_lanes: usize) -> Self {
        ArrayShape { rows: r_lanes * cfg.mpra_rows, cols: c_lanes * cfg.mpra_cols, lane_grid: (r_lanes, c_lanes) }
    }

    /// Shape built from default 8x8 MPRA tiles. Panics if the dimensions are
    /// not multiples of 8.
    pub fn of_pes(rows: usize, cols: usize) -> Self {
        assert!(rows.is_multiple_of(8) && cols.is_multiple_of(8) && rows > 0 && cols > 0, "{rows}x{cols}");
        ArrayShape { rows, cols, lane_grid: (rows / 8, cols / 8) }
    }

    pub fn lanes(&self) -> usize {
        self.lane_grid.0 * self.lane_grid.1
    }

    pub fn pe_count(&self) -> usize {
        self.rows * self.cols
    }
}

impl fmt::Display for ArrayShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// All rectangular lane layouts of `cfg.lanes`, ascending in lane rows.
pub fn enumerate_arrangements(cfg: &GtaConfig) -> Vec<ArrayShape> {
    arrangements_of(cfg, cfg.lanes)
}

fn arrangements_of(cfg: &GtaConfig, lanes: usize) -> Vec<ArrayShape> {
    (1..=lanes).filter(|r| lanes.is_multiple_of(*r)).map(|r| ArrayShape::from_lanes(cfg, r, lanes / r)).collect()
}

/// Most square arrangement of all lanes; ties prefer more PE rows.
pub fn squarest_arrangement(cfg: &GtaConfig) -> ArrayShape {
    squarest(cfg, cfg.lanes)
}

/// Most square arrangement of `lanes`; ties prefer more PE rows.
fn squarest(cfg: &GtaConfig, lanes: usize) -> ArrayShape {
    arrangements_of(cfg, lanes)
        .into_iter()
        .min_by_key(|s| (s.rows.abs_diff(s.cols), std::cmp::Reverse(s.rows)))
        .expect("every positive lane count has a 1 x n arrangement")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubArray {
    pub shape: ArrayShape,
    pub mask_group: u32,
    pub lanes: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub sub_arrays: Vec<SubArray>,
}

impl Partition {
    pub fn lanes_used(&self) -> usize {
        self.sub_arrays.iter().map(|s| s.lanes.len()).sum()
    }
}

/// Splits the lanes into disjoint mask groups, one per requested lane count.
pub fn partition(cfg: &GtaConfig, requests: &[usize]) -> Result<Partition, GeometryError> {
    cfg.validate()?;
    if requests.len() as u64 > cfg.max_partitions() {
        return Err(GeometryError::TooManyPartitions { requested: requests.len(), max: cfg.max_partitions() });
    }
    if requests.contains(&0) {
        return Err(GeometryError::EmptyRequest);
    }
    let requested: usize = requests.iter().sum();
    if requested > cfg.lanes {
        return Err(GeometryError::InsufficientLanes { requested, available: cfg.lanes });
    }
    let mut next = 0;
    let sub_arrays = requests
        .iter()
        .enumerate()
        .map(|(group, &lanes)| {
            let range = next..next + lanes;
            next += lanes;
            SubArray { shape: squarest(cfg, lanes), mask_group: group as u32, lanes: range }
        })
        .collect();
    Ok(Partition { sub_arrays })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(shapes: &[ArrayShape]) -> Vec<(usize, usize)> {
        shapes.iter().map(|s| (s.rows, s.cols)).collect()
    }

    #[test]
    fn sixteen_lanes() {
        let shapes = enumerate_arrangements(&GtaConfig::with_lanes(16));
        assert_eq!(dims(&shapes), vec![(8, 128), (16, 64), (32, 32), (64, 16), (128, 8)]);
    }

    #[test]
    fn one_and_four_lanes() {
        assert_eq!(dims(&enumerate_arrangements(&GtaConfig::with_lanes(1))), vec![(8, 8)]);
        assert_eq!(dims(&enumerate_arrangements(&GtaConfig::with_lanes(4))), vec![(8, 32), (16, 16), (32, 8)]);
    }

    #[test]
    fn non_power_of_two_lanes() {
        let shapes = enumerate_arrangements(&GtaConfig::with_lanes(6));
        assert_eq!(dims(&shapes), vec![(8, 48), (16, 24), (24, 16), (48, 8)]);
    }

    #[test]
    fn arrangements_preserve_pe_count() {
        for lanes in 1..=64 {
            let cfg = GtaConfig::with_lanes(lanes);
            for s in enumerate_arrangements(&cfg) {
                assert_eq!(s.pe_count(), lanes * 64);
                assert_eq!(s.lanes(), lanes);
            }
        }
    }

    #[test]
    fn two_halves() {
        let p = partition(&GtaConfig::with_lanes(16), &[8, 8]).unwrap();
        assert_eq!(p.sub_arrays.len(), 2);
        assert_eq!(p.sub_arrays[0].lanes, 0..8);
        assert_eq!(p.sub_arrays[1].lanes, 8..16);
        for s in &p.sub_arrays {
            assert_eq!((s.shape.rows, s.shape.cols), (32, 16));
        }
        assert_ne!(p.sub_arrays[0].mask_group, p.sub_arrays[1].mask_group);
    }

    #[test]
    fn single_full_partition() {
        let p = partition(&GtaConfig::with_lanes(16), &[16]).unwrap();
        assert_eq!(p.sub_arrays.len(), 1);
        assert_eq!(p.lanes_used(), 16);
        assert_eq!((p.sub_arrays[0].shape.rows, p.sub_arrays[0].shape.cols), (32, 32));
    }

    #[test]
    fn partition_errors() {
        let cfg = GtaConfig { mask_width_bits: 1, ..GtaConfig::with_lanes(16) };
        assert_eq!(partition(&cfg, &[4, 4, 4, 4]), Err(GeometryError::TooManyPartitions { requested: 4, max: 2 }));
        assert_eq!(
            partition(&GtaConfig::with_lanes(4), &[4, 1]),
            Err(GeometryError::InsufficientLanes { requested: 5, available: 4 })
        );
        assert_eq!(partition(&GtaConfig::with_lanes(4), &[0]), Err(GeometryError::EmptyRequest));
    }

    #[test]
    fn lanes_are_disjoint() {
        let cfg = GtaConfig::with_lanes(32);
        let p = partition(&cfg, &[3, 7, 1, 12, 9]).unwrap();
        let mut owner = vec![None; cfg.lanes];
        for s in &p.sub_arrays {
            assert_eq!(s.shape.lanes(), s.lanes.len());
            for lane in s.lanes.clone() {
                assert!(owner[lane].is_none());
                owner[lane] = Some(s.mask_group);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(GtaConfig::default().validate().is_ok());
        assert!(GtaConfig::with_lanes(0).validate().is_err());
        assert!(GtaConfig { mask_width_bits: 0, ..GtaConfig::default() }.validate().is_err());
    }
}
