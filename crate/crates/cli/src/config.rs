//! Run configuration: a TOML file, then command-line overrides.
//!
//! ```toml
//! [gta]
//! lanes = 16
//! mpra_rows = 8
//! mpra_cols = 8
//! mask_width_bits = 4
//! reconfig_cycles = 0
//!
//! [cost]
//! source = "model"            # or "exact"
//! calibration = "gains.toml"  # optional throughput table
//!
//! [knobs]
//! dataflows = ["ws", "is", "os"]
//! max_k_segments = 8
//! directions = ["lateral", "vertical"]
//! edge_fill = [false, true]
//! preload_overlap = false
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gta_core::mapper::{Dataflow, TilingDirection};
use gta_core::scheduler::{CostSource, ScheduleOptions};
use gta_core::{GtaConfig, ThroughputTable, Timing};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gta: GtaConfig,
    pub cost: CostSection,
    pub knobs: KnobSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub source: CostSource,
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnobSection {
    pub dataflows: Vec<Dataflow>,
    pub max_k_segments: usize,
    pub directions: Vec<TilingDirection>,
    pub edge_fill: Vec<bool>,
    pub preload_overlap: bool,
}

impl Default for KnobSection {
    fn default() -> Self {
        let o = ScheduleOptions::default();
        KnobSection {
            dataflows: o.dataflows,
            max_k_segments: o.max_k_segments,
            directions: o.directions,
            edge_fill: o.edge_fill,
            preload_overlap: false,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        // toml errors carry the offending line and a caret marker.
        Ok(toml::from_str(text)?)
    }

    /// Checks everything a run depends on before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.gta.validate()?;
        if self.knobs.max_k_segments == 0 {
            bail!("knobs.max_k_segments must be at least 1");
        }
        if self.knobs.dataflows.is_empty() || self.knobs.directions.is_empty() || self.knobs.edge_fill.is_empty() {
            bail!("knob lists must not be empty");
        }
        Ok(())
    }

    pub fn timing(&self) -> Timing {
        Timing { preload_overlap: self.knobs.preload_overlap }
    }

    pub fn table(&self) -> Result<ThroughputTable> {
        match &self.cost.calibration {
            Some(path) => Ok(ThroughputTable::load(path)?),
            None => Ok(ThroughputTable::default()),
        }
    }

    pub fn schedule_options(&self) -> Result<ScheduleOptions> {
        Ok(ScheduleOptions {
            dataflows: self.knobs.dataflows.clone(),
            max_k_segments: self.knobs.max_k_segments,
            directions: self.knobs.directions.clone(),
            edge_fill: self.knobs.edge_fill.clone(),
            precisions: Vec::new(),
            source: self.cost.source,
            timing: self.timing(),
            table: self.table()?,
            seed: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.gta, GtaConfig::default());
        assert_eq!(c.knobs.max_k_segments, 8);
        c.validate().unwrap();
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::parse(
            "[gta]\nlanes = 4\n[cost]\nsource = \"exact\"\n[knobs]\ndataflows = [\"os\"]\nedge_fill = [false]\n",
        )
        .unwrap();
        assert_eq!(c.gta.lanes, 4);
        assert_eq!(c.cost.source, CostSource::Exact);
        assert_eq!(c.knobs.dataflows, vec![Dataflow::Os]);
    }

    #[test]
    fn schema_errors_name_the_line() {
        let err = RunConfig::parse("[gta]\nlanes = 4\nlane_count = 2\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("line 3"), "{msg}");
        assert!(RunConfig::parse("[gta]\nlanes = \"many\"\n").is_err());
        assert!(RunConfig::parse("[gta]\nlanes = 0\n").unwrap().validate().is_err());
    }
}
