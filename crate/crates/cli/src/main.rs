//! `topopost`: run, study and export front end for the three-stage pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use topopost_core::pipeline::{
    export_file, run_pipeline, run_study, RunConfig, RunOptions, RunReport, Study, StudyTable, PRESETS,
};

#[derive(Parser)]
#[command(
    name = "topopost",
    version,
    about = "Topology optimization, level-set extraction and shape optimization"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline (or a subset of its stages).
    Run {
        #[command(flatten)]
        setup: Setup,
        /// Stages to run: `1`, `2`, `3`, a range like `2-3`, or `all`.
        #[arg(long, default_value = "all")]
        stage: String,
    },
    /// Re-evaluate stored designs under varying element order or quadtree depth.
    Study {
        #[command(flatten)]
        setup: Setup,
        /// `p-order` or `quadtree`.
        #[arg(long)]
        kind: String,
    },
    /// Convert a `.tpdn` or `.tpls` file to SVG (2D), STL (3D) or CSV.
    Export {
        input: PathBuf,
        output: PathBuf,
        /// Samples per element length.
        #[arg(long, default_value_t = 2)]
        samples: usize,
        /// Iso value for density files.
        #[arg(long, default_value_t = 0.5)]
        iso: f64,
    },
}

#[derive(Args)]
struct Setup {
    /// Built-in case: mbb2d, canti2d, mbb3d, canti3d.
    #[arg(long)]
    preset: Option<String>,
    /// TOML run configuration; may name a preset with `preset = "..."`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: `$TOPOPOST_OUT/<name>`, else `runs/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full-size grids for the 3D presets.
    #[arg(long)]
    paper_scale: bool,
    /// Override a configuration field, e.g. `--set stage1.iterations=50`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

impl Setup {
    fn load(&self) -> anyhow::Result<(RunConfig, PathBuf)> {
        if self.preset.is_none() && self.config.is_none() {
            bail!(topopost_core::Error::Config {
                path: "preset".into(),
                message: format!("give --preset ({}) or --config", PRESETS.join(", ")),
            });
        }
        let text = match &self.config {
            Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        let file = self.config.as_deref().zip(text.as_deref());
        let config = RunConfig::from_layers(self.preset.as_deref(), file, &self.overrides, self.paper_scale)?;
        let out = match (&self.out, &config.output) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => o.clone(),
            (None, None) => std::env::var_os("TOPOPOST_OUT")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(&config.name),
        };
        Ok((config, out))
    }
}

fn parse_stages(s: &str) -> anyhow::Result<std::ops::RangeInclusive<u8>> {
    let bad = || topopost_core::Error::Config {
        path: "stage".into(),
        message: format!("`{s}` is not a stage (1-3), a range like 2-3, or all"),
    };
    let range = match s {
        "all" => 1..=3,
        _ => match s.split_once('-') {
            Some((a, b)) => a.parse().map_err(|_| bad())?..=b.parse().map_err(|_| bad())?,
            None => {
                let n = s.parse().map_err(|_| bad())?;
                n..=n
            }
        },
    };
    Ok(range)
}

fn print_report(config: &RunConfig, report: &RunReport) {
    println!("{} {:?}, V_f = {}", config.name, config.dims, config.volume_fraction);
    println!("C_ref = {:.6e} (uniform initial design)", report.c_ref);
    for s in &report.summaries {
        println!(
            "stage {}: C = {:.6e}  C/C_ref = {:.5}  V/V_max = {:.5}  time = {:.2} s",
            s.stage, s.compliance, s.c_over_cref, s.volume_ratio, s.seconds
        );
    }
    if let (Some(c1), Some(s3)) = (report.stage1_reevaluated, &report.stage3) {
        println!(
            "stage 1 design at P = {}: C = {:.6e}; stage 3 change {:+.2}%",
            config.stage3.order,
            c1,
            100.0 * (s3.final_compliance / c1 - 1.0)
        );
    }
    if let Some(share) = report.share_2_3() {
        println!("stage 2+3 share of wall time: {:.1}%", 100.0 * share);
    }
    println!("artifacts in {}", report.out_dir.display());
}

fn print_study(table: &StudyTable, out: &Path) {
    println!("{} study, C_ref = {:.6e}", table.study.name(), table.c_ref);
    println!(
        "{:>7} {:>2} {:>2} {:>2} {:>14} {:>9}",
        "design", "P", "qt", "g", "C", "C/C_ref"
    );
    for r in &table.rows {
        println!(
            "{:>7} {:>2} {:>2} {:>2} {:>14.6e} {:>9.5}",
            r.design,
            r.order,
            r.qt,
            r.points_per_axis,
            r.compliance,
            r.compliance / table.c_ref
        );
    }
    println!("stage 3 spread: {:.3}%", 100.0 * table.spread("stage3"));
    println!("table in {}", out.display());
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Run { setup, stage } => {
            let stages = parse_stages(&stage)?;
            let (config, out) = setup.load()?;
            let report = run_pipeline(&config, &RunOptions { out_dir: out, stages })?;
            print_report(&config, &report);
        }
        Command::Study { setup, kind } => {
            let study: Study = kind.parse()?;
            let (config, out) = setup.load()?;
            let table = run_study(&config, study, &out)?;
            print_study(&table, &out);
        }
        Command::Export {
            input,
            output,
            samples,
            iso,
        } => {
            export_file(&input, &output, samples, iso)?;
            println!("wrote {}", output.display());
        }
    }
    Ok(())
}

/// The error chain, skipping causes whose text the outer message already shows.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            let config = e
                .downcast_ref::<topopost_core::Error>()
                .is_some_and(topopost_core::Error::is_config);
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_ranges() {
        assert_eq!(parse_stages("all").unwrap(), 1..=3);
        assert_eq!(parse_stages("2").unwrap(), 2..=2);
        assert_eq!(parse_stages("2-3").unwrap(), 2..=3);
        assert!(parse_stages("x").is_err());
    }

    #[test]
    fn repeated_causes_are_dropped() {
        let e = anyhow::anyhow!("inner").context("outer: inner");
        assert_eq!(render(&e), "outer: inner");
        let e = anyhow::anyhow!("inner").context("outer");
        assert_eq!(render(&e), "outer: inner");
    }

    #[test]
    fn cli_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
