//! Run configuration, presets, and layered loading (preset < file < overrides).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcm::FcmSettings;
use crate::fem::{LoadCase, Material, NodeSelector, PointLoad, SolverKind, SolverSettings, StructuredGrid, Support};
use crate::shape_opt::ShapeOptConfig;
use crate::simp::SimpConfig;

pub const PRESETS: [&str; 4] = ["mbb2d", "canti2d", "mbb3d", "canti3d"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Config {
    pub iterations: usize,
    pub filter_radius: f64,
    pub move_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Config {
    pub w_max: f64,
    pub dmin: f64,
    /// Heaviside steepness; derived from the slope bounds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage3Config {
    pub order: usize,
    pub qt: u32,
    pub points_per_axis: usize,
    pub iterations_per_phase: usize,
    pub phases: usize,
    pub move_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub pcg_tolerance: f64,
    pub pcg_max_iterations: usize,
    pub direct_dof_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    /// Samples per element length for contours and surfaces.
    pub samples_per_element: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub dims: Vec<usize>,
    pub volume_fraction: f64,
    pub penal: f64,
    /// Void density floor, used by both stages.
    pub rho0: f64,
    pub material: MaterialConfig,
    pub load_case: LoadCase,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub stage3: Stage3Config,
    pub solver: SolverConfig,
    pub export: ExportConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Reserved; every stage is deterministic.
    pub seed: u64,
}

impl Default for RunConfig {
    /// Shared parameter values with no geometry or loads.
    fn default() -> Self {
        Self {
            name: "custom".into(),
            dims: Vec::new(),
            volume_fraction: 0.4,
            penal: 3.0,
            rho0: 1e-8,
            material: MaterialConfig {
                youngs_modulus: 1.0,
                poisson_ratio: 0.0,
            },
            load_case: LoadCase::default(),
            stage1: Stage1Config {
                iterations: 100,
                filter_radius: 1.5,
                move_limit: 0.2,
            },
            stage2: Stage2Config {
                w_max: 0.5,
                dmin: 0.5,
                kappa: None,
            },
            stage3: Stage3Config {
                order: 2,
                qt: 1,
                points_per_axis: 3,
                iterations_per_phase: 10,
                phases: 2,
                move_limit: 0.1,
            },
            solver: SolverConfig {
                kind: SolverKind::Auto,
                pcg_tolerance: 1e-8,
                pcg_max_iterations: 20_000,
                direct_dof_limit: 300_000,
            },
            export: ExportConfig { samples_per_element: 2 },
            output: None,
            seed: 0,
        }
    }
}

fn load(at: NodeSelector, component: usize, magnitude: f64) -> PointLoad {
    PointLoad {
        at,
        component,
        magnitude,
    }
}

fn support(at: NodeSelector, components: &[usize]) -> Support {
    Support {
        at,
        components: components.to_vec(),
    }
}

/// Built-in case study. 3D presets default to reduced grids; `paper_scale`
/// selects the full-size grids.
pub fn preset(name: &str, paper_scale: bool) -> Option<RunConfig> {
    let base = RunConfig {
        name: name.to_string(),
        ..RunConfig::default()
    };
    let cfg = match name {
        "mbb2d" => {
            let (nx, ny) = (64.0, 32.0);
            RunConfig {
                dims: vec![64, 32],
                volume_fraction: 0.4,
                load_case: LoadCase {
                    loads: vec![load(NodeSelector::point2(0.0, ny), 1, -1.0)],
                    supports: vec![
                        support(NodeSelector::at(Some(0.0), None, None), &[0]),
                        support(NodeSelector::point2(nx, 0.0), &[1]),
                    ],
                },
                ..base
            }
        }
        "canti2d" => RunConfig {
            dims: vec![180, 120],
            volume_fraction: 0.35,
            load_case: LoadCase {
                loads: vec![load(NodeSelector::point2(180.0, 60.0), 1, -1.0)],
                supports: vec![support(NodeSelector::at(Some(0.0), None, None), &[0, 1])],
            },
            ..base
        },
        "mbb3d" => {
            let dims = if paper_scale { [64, 10, 32] } else { [32, 6, 16] };
            let [nx, ny, nz] = dims.map(|d| d as f64);
            RunConfig {
                dims: dims.to_vec(),
                volume_fraction: 0.1,
                load_case: LoadCase {
                    loads: vec![load(NodeSelector::point3(0.0, ny / 2.0, nz), 2, -1.0)],
                    supports: vec![
                        support(NodeSelector::at(Some(0.0), None, None), &[0]),
                        support(NodeSelector::at(Some(nx), None, Some(0.0)), &[1, 2]),
                    ],
                },
                stage2: Stage2Config {
                    w_max: 0.3,
                    ..base.stage2.clone()
                },
                ..base
            }
        }
        "canti3d" => {
            let n = if paper_scale { 30 } else { 16 };
            let (nf, q) = (n as f64, (n / 4) as f64);
            let corner = |y: f64, z: f64| support(NodeSelector::point3(0.0, y, z), &[0, 1, 2]);
            RunConfig {
                dims: vec![n; 3],
                volume_fraction: 0.05,
                load_case: LoadCase {
                    loads: vec![
                        load(NodeSelector::point3(nf, q, nf / 2.0), 1, -0.5),
                        load(NodeSelector::point3(nf, q, nf / 2.0), 2, -1.0),
                        load(NodeSelector::point3(nf, nf - q, nf / 2.0), 1, 0.5),
                        load(NodeSelector::point3(nf, nf - q, nf / 2.0), 2, -1.0),
                    ],
                    supports: vec![corner(0.0, 0.0), corner(nf, 0.0), corner(0.0, nf), corner(nf, nf)],
                },
                stage2: Stage2Config {
                    w_max: 0.3,
                    ..base.stage2.clone()
                },
                ..base
            }
        }
        _ => return None,
    };
    Some(cfg)
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::config(path, message)
}

/// Overlay `over` onto `base`, rejecting keys `base` does not know about.
fn merge(base: &mut toml::Table, over: toml::Table, prefix: &str, optional: &[&str]) -> Result<()> {
    for (key, value) in over {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &path, optional)?,
            (Some(slot), v) => *slot = v,
            (None, v) if optional.contains(&path.as_str()) => {
                base.insert(key, v);
            }
            (None, _) => return Err(config_err(path, "unknown field")),
        }
    }
    Ok(())
}

const OPTIONAL: &[&str] = &["stage2.kappa", "output"];

/// `a.b=value` as a nested table.
fn override_table(spec: &str) -> Result<toml::Table> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(spec, "override must look like path=value"))?;
    let path = path.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut keys = path.split('.').rev();
    let last = keys
        .next()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| config_err(spec, "empty path"))?;
    let mut table = toml::Table::new();
    table.insert(last.to_string(), value);
    for k in keys {
        let mut outer = toml::Table::new();
        outer.insert(k.to_string(), toml::Value::Table(table));
        table = outer;
    }
    Ok(table)
}

impl RunConfig {
    /// Layer `file` (TOML text) and then `overrides` (`path=value`, value in
    /// TOML syntax, bare words taken as strings) over a preset. The preset
    /// comes from `preset` if given, else from a top-level `preset` key.
    pub fn from_layers(
        preset_name: Option<&str>,
        file: Option<(&Path, &str)>,
        overrides: &[String],
        paper_scale: bool,
    ) -> Result<Self> {
        let mut table: toml::Table = match file {
            Some((path, text)) => {
                toml::from_str(text).map_err(|e| config_err(path.display().to_string(), e.to_string()))?
            }
            None => toml::Table::new(),
        };
        let from_file = match table.remove("preset") {
            Some(toml::Value::String(s)) => Some(s),
            Some(_) => return Err(config_err("preset", "must be a string")),
            None => None,
        };
        let base = match preset_name.map(str::to_string).or(from_file) {
            Some(name) => preset(&name, paper_scale).ok_or_else(|| {
                config_err(
                    "preset",
                    format!("unknown preset `{name}` (expected one of {})", PRESETS.join(", ")),
                )
            })?,
            None => RunConfig::default(),
        };
        let mut merged = toml::Table::try_from(&base).map_err(|e| config_err("<preset>", e.to_string()))?;
        merge(&mut merged, table, "", OPTIONAL)?;
        for o in overrides {
            merge(&mut merged, override_table(o)?, "", OPTIONAL)?;
        }
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| config_err("<config>", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn material(&self) -> Material {
        Material {
            youngs_modulus: self.material.youngs_modulus,
            poisson_ratio: self.material.poisson_ratio,
        }
    }

    pub fn solver(&self) -> SolverSettings {
        SolverSettings {
            kind: self.solver.kind,
            pcg_tolerance: self.solver.pcg_tolerance,
            pcg_max_iterations: self.solver.pcg_max_iterations,
            direct_dof_limit: self.solver.direct_dof_limit,
        }
    }

    pub fn simp(&self) -> SimpConfig {
        SimpConfig {
            penal: self.penal,
            volume_fraction: self.volume_fraction,
            filter_radius: self.stage1.filter_radius,
            iterations: self.stage1.iterations,
            material: self.material(),
            rho_min: self.rho0,
            move_limit: self.stage1.move_limit,
        }
    }

    pub fn shape_opt(&self) -> ShapeOptConfig {
        ShapeOptConfig {
            order: self.stage3.order,
            fcm: FcmSettings {
                qt: self.stage3.qt,
                points_per_axis: self.stage3.points_per_axis,
            },
            iterations_per_phase: self.stage3.iterations_per_phase,
            phases: self.stage3.phases,
            penal: self.penal,
            rho0: self.rho0,
            volume_fraction: self.volume_fraction,
            move_limit: self.stage3.move_limit,
            material: self.material(),
        }
    }

    /// Check every field; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims.len();
        if !(2..=3).contains(&d) || self.dims.contains(&0) {
            return Err(config_err(
                "dims",
                format!("need 2 or 3 positive element counts, got {:?}", self.dims),
            ));
        }
        if !(self.volume_fraction > 0.0 && self.volume_fraction < 1.0) {
            return Err(config_err("volume_fraction", "must lie in (0, 1)"));
        }
        Material::new(self.material.youngs_modulus, self.material.poisson_ratio)
            .map_err(|e| config_err("material", e.to_string()))?;
        self.simp().validate().map_err(|e| match e {
            Error::Config { path, message } => {
                let path = match path.as_str() {
                    "penal" | "volume_fraction" => path,
                    "rho_min" => "rho0".into(),
                    other => format!("stage1.{other}"),
                };
                config_err(path, message)
            }
            other => other,
        })?;
        let s2 = &self.stage2;
        if !(s2.w_max > 0.0) {
            return Err(config_err("stage2.w_max", "must be positive"));
        }
        if !(s2.dmin > 0.0) {
            return Err(config_err("stage2.dmin", "must be positive"));
        }
        if s2.kappa.is_some_and(|k| !(k > 0.0 && k.is_finite())) {
            return Err(config_err("stage2.kappa", "must be positive"));
        }
        let s3 = &self.stage3;
        if !(1..=4).contains(&s3.order) {
            return Err(config_err("stage3.order", "must lie in 1..=4"));
        }
        if s3.qt > 4 {
            return Err(config_err("stage3.qt", "must lie in 0..=4"));
        }
        if !(1..=10).contains(&s3.points_per_axis) {
            return Err(config_err("stage3.points_per_axis", "must lie in 1..=10"));
        }
        if s3.phases == 0 {
            return Err(config_err("stage3.phases", "must be at least 1"));
        }
        if !(s3.move_limit > 0.0 && s3.move_limit <= 1.0) {
            return Err(config_err("stage3.move_limit", "must lie in (0, 1]"));
        }
        if !(self.solver.pcg_tolerance > 0.0 && self.solver.pcg_tolerance < 1.0) {
            return Err(config_err("solver.pcg_tolerance", "must lie in (0, 1)"));
        }
        if self.export.samples_per_element == 0 {
            return Err(config_err("export.samples_per_element", "must be at least 1"));
        }
        if self.load_case.loads.is_empty() {
            return Err(config_err("load_case.loads", "at least one load is required"));
        }
        for (n, l) in self.load_case.loads.iter().enumerate() {
            if l.component >= d || !l.magnitude.is_finite() {
                return Err(config_err(
                    format!("load_case.loads[{n}]"),
                    format!("component must be < {d} and magnitude finite"),
                ));
            }
        }
        for (n, s) in self.load_case.supports.iter().enumerate() {
            if s.components.is_empty() || s.components.iter().any(|&c| c >= d) {
                return Err(config_err(
                    format!("load_case.supports[{n}]"),
                    format!("components must be non-empty and < {d}"),
                ));
            }
        }
        let grid = StructuredGrid::new(&self.dims, 1).map_err(|e| config_err("dims", e.to_string()))?;
        self.load_case
            .resolve(&grid)
            .map_err(|e| config_err("load_case", e.to_string()))?;
        Ok(())
    }
}
