//! End-to-end runs: the three stages, their artifacts, the run manifest, and
//! the discretization studies.

mod config;
mod study;

pub use config::{
    preset, ExportConfig, MaterialConfig, RunConfig, SolverConfig, Stage1Config, Stage2Config, Stage3Config, PRESETS,
};
pub use study::{evaluate_level_set, run_study, Study, StudyRow, StudyTable, P_STUDY_POINTS};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::export::{
    clip_to_box, density_function, io_err, marching_cubes, marching_squares, read_density, read_history_csv,
    read_level_set, write_density, write_density_csv, write_history_csv, write_level_set, write_level_set_csv, Lattice,
};
use crate::fem::Point;
use crate::history::HistoryRow;
use crate::levelset::{extract_level_set, slope_constants, solve_kappa, Extraction, RbfLevelSet, SolidPads};
use crate::shape_opt::{evaluate_element_densities, run_stage3, ShapeModel, Stage3Result};
use crate::simp::{run_stage1, DensityField, SimpModel, Stage1Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const DENSITY_FILE: &str = "stage1_density.tpdn";
pub const STAGE2_FILE: &str = "stage2.tpls";
pub const STAGE3_FILE: &str = "stage3.tpls";
pub const HISTORY_FILE: &str = "history.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const FCM_CELLS_FILE: &str = "fcm_cells.csv";

/// Files covered by the manifest.
const ARTIFACTS: [&str; 15] = [
    CONFIG_FILE,
    DENSITY_FILE,
    "stage1_density.csv",
    "stage1.svg",
    "stage1.stl",
    STAGE2_FILE,
    "stage2_weights.csv",
    "stage2.svg",
    "stage2.stl",
    FCM_CELLS_FILE,
    STAGE3_FILE,
    "stage3_weights.csv",
    "stage3.svg",
    "stage3.stl",
    HISTORY_FILE,
];

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Stages to execute. Earlier stages' outputs are read back from `out_dir`.
    pub stages: RangeInclusive<u8>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            stages: 1..=3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub stage: u8,
    pub compliance: f64,
    pub c_over_cref: f64,
    pub volume_ratio: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    /// Compliance of the uniform initial design.
    pub c_ref: f64,
    pub summaries: Vec<StageSummary>,
    pub stage1: Option<Stage1Result>,
    pub extraction: Option<Extraction>,
    /// Finite cell compliance of the extracted level set.
    pub stage2_compliance: Option<f64>,
    pub stage3: Option<Stage3Result>,
    /// Final Stage 1 density evaluated with the Stage 3 element order and rule.
    pub stage1_reevaluated: Option<f64>,
    pub manifest: Manifest,
    pub out_dir: PathBuf,
}

impl RunReport {
    pub fn seconds(&self, stage: u8) -> Option<f64> {
        self.summaries.iter().find(|s| s.stage == stage).map(|s| s.seconds)
    }

    /// Stages 2 and 3 as a share of the total wall time, when all three ran.
    pub fn share_2_3(&self) -> Option<f64> {
        let [a, b, c] = [1, 2, 3].map(|s| self.seconds(s));
        let (a, b, c) = (a?, b?, c?);
        Some((b + c) / (a + b + c))
    }
}

/// One link of the stage hash chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub stage: u8,
    pub input: String,
    pub input_sha256: String,
    pub output: String,
    pub output_sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub dims: Vec<usize>,
    pub c_ref: f64,
    #[serde(default)]
    pub stages: Vec<StageRecord>,
    /// File name to SHA-256.
    #[serde(default)]
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Every stage consumed the output its predecessor recorded.
    pub fn chain_is_consistent(&self) -> bool {
        self.stages
            .windows(2)
            .all(|w| w[1].stage != w[0].stage + 1 || w[1].input_sha256 == w[0].output_sha256)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_sha(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(io_err(path))?))
}

/// Compliance of the uniform design `rho = V_f` with the Stage 1 model.
pub fn reference_compliance(config: &RunConfig) -> Result<f64> {
    let simp = config.simp();
    let mut model = SimpModel::new(&config.dims, &config.load_case, &simp, config.solver())?;
    let rho = vec![simp.volume_fraction.max(simp.rho_min); model.grid.num_elements()];
    Ok(model.analyze(&rho)?.0)
}

/// Steepness used for extraction: configured, or the largest value meeting
/// the slope floor.
pub fn stage2_kappa(config: &RunConfig) -> Result<f64> {
    match config.stage2.kappa {
        Some(k) => Ok(k),
        None => {
            let s = &config.stage2;
            let bounds = slope_constants(config.dim(), s.w_max, config.stage3.order, config.stage3.qt, s.dmin)?;
            solve_kappa(&bounds, config.rho0)
        }
    }
}

/// Zero set of `f` over the box as `<stem>.svg` (2D) or `<stem>.stl` (3D).
pub fn write_geometry(
    dir: &Path,
    stem: &str,
    dims: &[usize],
    f: impl Fn(&Point) -> f64 + Sync,
    samples_per_element: usize,
) -> Result<PathBuf> {
    let lattice = Lattice::around_domain(dims, samples_per_element)?;
    let f = clip_to_box(dims, f);
    if dims.len() == 2 {
        let path = dir.join(format!("{stem}.svg"));
        marching_squares(&f, &lattice)?.write_svg(&path, dims[0] as f64, dims[1] as f64)?;
        Ok(path)
    } else {
        let path = dir.join(format!("{stem}.stl"));
        let mesh = marching_cubes(&f, &lattice)?;
        if !mesh.is_watertight() {
            log::warn!(
                "{}: surface has {} unmatched edge(s)",
                path.display(),
                mesh.unmatched_edges()
            );
        }
        mesh.write_stl(&path)?;
        Ok(path)
    }
}

fn check_dims(found: &[usize], config: &RunConfig, path: &Path) -> Result<()> {
    if found != config.dims.as_slice() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("grid {found:?} does not match the configured {:?}", config.dims),
        });
    }
    Ok(())
}

fn summary(stage: u8, row: &HistoryRow, c_ref: f64, seconds: f64) -> StageSummary {
    StageSummary {
        stage,
        compliance: row.compliance,
        c_over_cref: row.compliance / c_ref,
        volume_ratio: row.volume_ratio,
        seconds,
    }
}

/// Run `options.stages` of the pipeline and write every artifact to
/// `options.out_dir`. Reruns with the same configuration produce identical
/// files, the timings file aside.
pub fn run_pipeline(config: &RunConfig, options: &RunOptions) -> Result<RunReport> {
    config.validate()?;
    let (first, last) = (*options.stages.start(), *options.stages.end());
    if first < 1 || last > 3 || first > last {
        return Err(Error::config(
            "stage",
            format!("stage range {first}..={last} is not within 1..=3"),
        ));
    }
    let out = options.out_dir.as_path();
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let dims = config.dims.as_slice();
    let loads = &config.load_case;
    let solver = config.solver();
    let samples = config.export.samples_per_element;
    let vf = config.volume_fraction;
    let pads = SolidPads::from_load_case(dims, loads);

    let config_path = out.join(CONFIG_FILE);
    std::fs::write(&config_path, config.to_toml()).map_err(io_err(&config_path))?;

    let manifest_path = out.join(MANIFEST_FILE);
    let mut records: Vec<StageRecord> = match Manifest::read(&manifest_path) {
        Ok(m) if m.dims == config.dims => m.stages,
        _ => Vec::new(),
    };
    records.retain(|r| !options.stages.contains(&r.stage));
    let history_path = out.join(HISTORY_FILE);
    let mut history: Vec<HistoryRow> = if first > 1 && history_path.exists() {
        read_history_csv(&history_path)?
    } else {
        Vec::new()
    };
    history.retain(|r| !options.stages.contains(&r.stage));
    let mut summaries = Vec::new();
    let mut record = |stage: u8, input: &str, output: &str| -> Result<()> {
        records.push(StageRecord {
            stage,
            input: input.into(),
            input_sha256: file_sha(&out.join(input))?,
            output: output.into(),
            output_sha256: file_sha(&out.join(output))?,
        });
        Ok(())
    };

    // Stage 1: density topology optimization
    let density_path = out.join(DENSITY_FILE);
    let (stage1, density, c_ref) = if first == 1 {
        log::info!("stage 1: {} iterations on {:?}", config.stage1.iterations, dims);
        let t = Instant::now();
        let r = run_stage1(dims, loads, &config.simp(), solver)?;
        let secs = t.elapsed().as_secs_f64();
        write_density(&density_path, &r.field)?;
        write_density_csv(&out.join("stage1_density.csv"), &r.field)?;
        write_geometry(
            out,
            "stage1",
            dims,
            density_function(dims, &r.field.values, 0.5),
            samples,
        )?;
        record(1, CONFIG_FILE, DENSITY_FILE)?;
        let c_ref = r.initial_compliance;
        if let Some(row) = r.history.last() {
            summaries.push(summary(1, row, c_ref, secs));
        }
        history.extend_from_slice(&r.history);
        let field = r.field.clone();
        (Some(r), Some(field), c_ref)
    } else {
        let density = if density_path.exists() || first == 2 {
            let d = read_density(&density_path)?;
            check_dims(d.dims(), config, &density_path)?;
            Some(d)
        } else {
            None
        };
        (None, density, reference_compliance(config)?)
    };

    // Stage 2: level-set extraction
    let mut extraction = None;
    let mut stage2_compliance = None;
    if first <= 2 && last >= 2 {
        let density: &DensityField = density.as_ref().expect("stage 1 output is loaded before stage 2");
        let t = Instant::now();
        let kappa = stage2_kappa(config)?;
        log::info!("stage 2: kappa = {kappa}");
        let ex = extract_level_set(dims, &density.values, vf, kappa, config.stage2.w_max, &pads)?;
        if ex.clamped > 0 {
            log::info!("stage 2: {} weight(s) clamped to w_max", ex.clamped);
        }
        let mut model = ShapeModel::new(dims, loads, config.shape_opt(), solver, &ex.lsf)?;
        let a = model.analyze(&ex.lsf).map_err(|e| e.at_iteration("stage 2", 0))?;
        let secs = t.elapsed().as_secs_f64();
        let stage2_path = out.join(STAGE2_FILE);
        write_level_set(&stage2_path, &ex.lsf)?;
        write_level_set_csv(&out.join("stage2_weights.csv"), &ex.lsf)?;
        write_geometry(out, "stage2", dims, pads.union(|x: &Point| ex.lsf.eval(x)), samples)?;
        let cells = out.join(FCM_CELLS_FILE);
        std::fs::write(&cells, model.domain.cells_csv(&model.grid)).map_err(io_err(&cells))?;
        record(2, DENSITY_FILE, STAGE2_FILE)?;
        let row = HistoryRow {
            stage: 2,
            iteration: 0,
            compliance: a.compliance,
            volume_ratio: a.volume_fraction / vf,
        };
        summaries.push(summary(2, &row, c_ref, secs));
        history.push(row);
        stage2_compliance = Some(a.compliance);
        extraction = Some(ex);
    }

    // Stage 3: shape optimization
    let mut stage3 = None;
    let mut stage1_reevaluated = None;
    if last == 3 {
        let stage2_path = out.join(STAGE2_FILE);
        let lsf: RbfLevelSet = match &extraction {
            Some(ex) => ex.lsf.clone(),
            None => {
                let l = read_level_set(&stage2_path)?;
                check_dims(l.dims(), config, &stage2_path)?;
                l
            }
        };
        log::info!(
            "stage 3: {} x {} iterations, P = {}",
            config.stage3.phases,
            config.stage3.iterations_per_phase,
            config.stage3.order
        );
        let t = Instant::now();
        let r = run_stage3(&lsf, dims, loads, config.shape_opt(), solver)?;
        let secs = t.elapsed().as_secs_f64();
        write_level_set(&out.join(STAGE3_FILE), &r.lsf)?;
        write_level_set_csv(&out.join("stage3_weights.csv"), &r.lsf)?;
        write_geometry(out, "stage3", dims, pads.union(|x: &Point| r.lsf.eval(x)), samples)?;
        record(3, STAGE2_FILE, STAGE3_FILE)?;
        if let Some(row) = r.history.last() {
            summaries.push(summary(3, row, c_ref, secs));
        }
        history.extend_from_slice(&r.history);
        if let Some(d) = &density {
            let s3 = &config.stage3;
            stage1_reevaluated = Some(evaluate_element_densities(
                dims,
                loads,
                &d.values,
                s3.order,
                s3.points_per_axis,
                &config.material(),
                config.penal,
                solver,
            )?);
        }
        stage3 = Some(r);
    }

    history.sort_by_key(|r| r.stage);
    write_history_csv(&history_path, &history, c_ref)?;

    records.sort_by_key(|r| r.stage);
    let mut artifacts = BTreeMap::new();
    for name in ARTIFACTS {
        let path = out.join(name);
        if path.exists() {
            artifacts.insert(name.to_string(), file_sha(&path)?);
        }
    }
    let manifest = Manifest {
        name: config.name.clone(),
        dims: config.dims.clone(),
        c_ref,
        stages: records,
        artifacts,
    };
    let text = toml::to_string(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;

    let mut timings = String::from("stage,seconds\n");
    for s in &summaries {
        let _ = writeln!(timings, "{},{}", s.stage, s.seconds);
    }
    let timings_path = out.join(TIMINGS_FILE);
    std::fs::write(&timings_path, timings).map_err(io_err(&timings_path))?;

    Ok(RunReport {
        c_ref,
        summaries,
        stage1,
        extraction,
        stage2_compliance,
        stage3,
        stage1_reevaluated,
        manifest,
        out_dir: out.to_path_buf(),
    })
}

/// Convert a density (`.tpdn`) or level-set (`.tpls`) file to SVG/STL
/// geometry or CSV, chosen by the output extension. Densities are cut at `iso`.
/// A level set next to a run's `config.toml` is drawn with that run's solid pads.
pub fn export_file(input: &Path, output: &Path, samples_per_element: usize, iso: f64) -> Result<()> {
    let ext = |p: &Path| {
        p.extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase()
    };
    let (in_ext, out_ext) = (ext(input), ext(output));
    let geometry = |dims: &[usize], f: &(dyn Fn(&Point) -> f64 + Sync)| -> Result<()> {
        let want = if dims.len() == 2 { "svg" } else { "stl" };
        if out_ext != want {
            return Err(Error::config(
                "output",
                format!("a {}D field exports to .{want} or .csv, not .{out_ext}", dims.len()),
            ));
        }
        let dir = match output.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("export");
        write_geometry(dir, stem, dims, f, samples_per_element).map(|_| ())
    };
    match in_ext.as_str() {
        "tpdn" => {
            let d = read_density(input)?;
            if out_ext == "csv" {
                return write_density_csv(output, &d);
            }
            let f = density_function(d.dims(), &d.values, iso);
            geometry(d.dims(), &f)
        }
        "tpls" => {
            let l = read_level_set(input)?;
            if out_ext == "csv" {
                return write_level_set_csv(output, &l);
            }
            let sibling = input.with_file_name(CONFIG_FILE);
            let pads = if sibling.exists() {
                let text = std::fs::read_to_string(&sibling).map_err(io_err(&sibling))?;
                let run = RunConfig::from_layers(None, Some((&sibling, &text)), &[], false)?;
                SolidPads::from_load_case(l.dims(), &run.load_case)
            } else {
                SolidPads::none(l.dims())
            };
            let f = pads.union(|x: &Point| l.eval(x));
            geometry(l.dims(), &f)
        }
        other => Err(Error::config(
            "input",
            format!("expected a .tpdn or .tpls file, got .{other}"),
        )),
    }
}
