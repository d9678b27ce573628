//! TOML configuration of studies. See the README for the full schema.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::case::CaseName;
use crate::error::{Error, Result};
use crate::fem::BoundaryCondition;
use crate::homog::SubvolumeOrigin;
use crate::microstructure::{
    generate_synthetic, load_voxel_grid, PhaseEntry, PhaseTable, SyntheticSpec, VoxelFormat, VoxelGrid,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub extents: Vec<usize>,
    /// Voxel edge in mm.
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    pub path: Option<PathBuf>,
    pub format: Option<VoxelFormat>,
    pub synthetic: Option<SyntheticSpec>,
}

fn default_spacing() -> f64 {
    crate::LENGTH_UNIT_MM
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasesConfig {
    /// `"concrete"`: aggregate 0, mortar 1, pore 2.
    pub preset: Option<String>,
    #[serde(default)]
    pub entries: Vec<PhaseEntry>,
    pub pore_stiffness_ratio: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoarseningRule {
    #[default]
    Mixture,
    Majority,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub sizes: Vec<usize>,
    /// Per size (as a string key), the resolutions to run; default `[S]`.
    #[serde(default)]
    pub resolutions: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub rule: CoarseningRule,
    /// Element subdivisions per voxel edge (D = k R).
    #[serde(default = "default_subdivisions")]
    pub subdivisions: Vec<usize>,
    #[serde(default = "default_adaptive")]
    pub adaptive_steps: Vec<u32>,
    #[serde(default = "default_bcs")]
    pub bcs: Vec<BoundaryCondition>,
    #[serde(default)]
    pub origin: SubvolumeOrigin,
    /// Keep boundary elements unmerged; default: on for PBC only, whose
    /// opposite faces must pair node by node.
    pub preserve_boundary: Option<bool>,
    #[serde(default = "default_ceiling")]
    pub dof_ceiling: usize,
}

fn default_subdivisions() -> Vec<usize> {
    vec![1]
}
fn default_adaptive() -> Vec<u32> {
    vec![0]
}
fn default_bcs() -> Vec<BoundaryCondition> {
    BoundaryCondition::ALL.to_vec()
}
fn default_ceiling() -> usize {
    2_000_000
}

/// Macro strain for the error stage. Absent: the first unit load state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    pub strain: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorStage {
    #[default]
    Off,
    Estimate,
    Actual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorsConfig {
    #[serde(default)]
    pub stage: ErrorStage,
    #[serde(default = "default_ref_factor")]
    pub ref_factor: usize,
}

impl Default for ErrorsConfig {
    fn default() -> Self {
        ErrorsConfig {
            stage: ErrorStage::Off,
            ref_factor: default_ref_factor(),
        }
    }
}

fn default_ref_factor() -> usize {
    2
}

/// Case and BC against which the deviation columns are computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub case: String,
    pub bc: BoundaryCondition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    #[serde(default)]
    pub vtk: bool,
    /// Adds a wall-clock column; off keeps reruns byte-identical.
    #[serde(default)]
    pub timing: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out(),
            vtk: false,
            timing: false,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub input: InputConfig,
    #[serde(default)]
    pub phases: PhasesConfig,
    pub study: StudyConfig,
    #[serde(default)]
    pub load: LoadConfig,
    #[serde(default)]
    pub errors: ErrorsConfig,
    pub reference: Option<ReferenceConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory against which relative paths resolve.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dim(&self) -> usize {
        self.input.extents.len()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let dim = self.dim();
        if !(dim == 2 || dim == 3) {
            return cfg(format!("input.extents must have 2 or 3 entries, got {dim}"));
        }
        match (&self.input.path, &self.input.synthetic) {
            (Some(_), None) if self.input.format.is_none() => return cfg("input.format is required with input.path".into()),
            (Some(_), None) | (None, Some(_)) => {}
            _ => return cfg("exactly one of input.path and input.synthetic must be given".into()),
        }
        if !(self.input.spacing > 0.0) {
            return cfg("input.spacing must be positive".into());
        }
        if self.study.sizes.is_empty() || self.study.bcs.is_empty() {
            return cfg("study.sizes and study.bcs must be non-empty".into());
        }
        let min_extent = *self.input.extents.iter().min().unwrap();
        for &s in &self.study.sizes {
            if s == 0 || s > min_extent {
                return cfg(format!("size {s} does not fit the input extents {:?}", self.input.extents));
            }
        }
        for key in self.study.resolutions.keys() {
            match key.parse::<usize>() {
                Ok(s) if self.study.sizes.contains(&s) => {}
                _ => return cfg(format!("study.resolutions key {key:?} is not one of the sizes")),
            }
        }
        if self.study.subdivisions.iter().any(|&k| k == 0) {
            return cfg("subdivisions must be at least 1".into());
        }
        if !(self.errors.ref_factor == 2 || self.errors.ref_factor == 4) {
            return cfg(format!("errors.ref_factor must be 2 or 4, got {}", self.errors.ref_factor));
        }
        if let Some(s) = &self.load.strain {
            let nv = if dim == 2 { 3 } else { 6 };
            if s.len() != nv {
                return cfg(format!("load.strain needs {nv} Voigt entries, got {}", s.len()));
            }
        }
        for case in self.cases() {
            case.plan()?;
        }
        if let Some(r) = &self.reference {
            let name: CaseName = r.case.parse()?;
            if !self.cases().contains(&name) {
                return cfg(format!("reference case {} is not part of the study", r.case));
            }
        }
        self.phase_table()?;
        Ok(())
    }

    pub fn resolutions(&self, size: usize) -> Vec<usize> {
        self.study.resolutions.get(&size.to_string()).cloned().unwrap_or_else(|| vec![size])
    }

    /// All cases in emission order: size, resolution, subdivision, steps.
    pub fn cases(&self) -> Vec<CaseName> {
        let mut out = Vec::new();
        for &s in &self.study.sizes {
            for r in self.resolutions(s) {
                for &k in &self.study.subdivisions {
                    for &n in &self.study.adaptive_steps {
                        out.push(CaseName::new(s, r, r * k, n));
                    }
                }
            }
        }
        out
    }

    pub fn phase_table(&self) -> Result<PhaseTable> {
        let p = &self.phases;
        let ratio = p.pore_stiffness_ratio.unwrap_or(PhaseTable::DEFAULT_PORE_STIFFNESS_RATIO);
        match (p.preset.as_deref(), p.entries.is_empty()) {
            (Some("concrete"), true) | (None, true) => {
                let t = PhaseTable::concrete();
                PhaseTable::new(t.entries().to_vec(), ratio)
            }
            (None, false) => PhaseTable::new(p.entries.clone(), ratio),
            (Some(other), true) => Err(Error::Config(format!("unknown phase preset {other:?}"))),
            (Some(_), false) => Err(Error::Config("give either phases.preset or phases.entries".into())),
        }
    }

    pub fn preserve_boundary(&self, bc: BoundaryCondition) -> bool {
        self.study.preserve_boundary.unwrap_or(bc == BoundaryCondition::Pbc)
    }

    /// Overrides the seed of a synthetic input.
    pub fn set_seed(&mut self, seed: u64) {
        match &mut self.input.synthetic {
            Some(SyntheticSpec::Random { seed: s, .. }) | Some(SyntheticSpec::Blobs { seed: s, .. }) => *s = seed,
            _ => {}
        }
    }

    pub fn load_grid(&self, table: &PhaseTable) -> Result<VoxelGrid> {
        let i = &self.input;
        let grid = match (&i.path, &i.synthetic) {
            (Some(p), _) => load_voxel_grid(&self.resolve(p), i.format.expect("validated"), &i.extents, i.spacing, table)?,
            (None, Some(spec)) => generate_synthetic(spec, &i.extents, i.spacing)?,
            (None, None) => unreachable!("validated"),
        };
        grid.validate_phases(table)?;
        Ok(grid)
    }
}
