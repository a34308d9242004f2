use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bem_harness::config::{FieldConfig, ScenarioConfig};
use bem_harness::report::RunReport;
use bem_harness::run::{exit_code, run_scenario};
use bem_harness::sweep::run_sweep;
use bem_harness::verify::Suite;
use bem_harness::{configure_threads, field, mesh_tools, HarnessError, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bem", version, about = "Multi-particle dielectric scattering with Calderon-preconditioned PMCHWT")]
struct Cli {
    /// Run on one worker thread (bit-for-bit reproducible); otherwise BEM_THREADS sets the pool size.
    #[arg(long, global = true)]
    single_thread: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write report.json and residuals.csv.
    Solve {
        config: PathBuf,
        /// Output directory (overrides output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the parameter grid of a scenario's [sweep] table.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification suite.
    Verify {
        #[arg(value_enum)]
        suite: SuiteArg,
    },
    /// Evaluate the total electric field on a plane grid.
    Field(FieldArgs),
    /// Mesh utilities.
    #[command(subcommand)]
    Mesh(MeshCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Calderon,
    Aca,
    Mass,
    Quadrature,
    Counts,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Calderon => Suite::Calderon,
            SuiteArg::Aca => Suite::Aca,
            SuiteArg::Mass => Suite::Mass,
            SuiteArg::Quadrature => Suite::Quadrature,
            SuiteArg::Counts => Suite::Counts,
        }
    }
}

#[derive(Args)]
struct FieldArgs {
    /// Scenario to solve inline (not needed with --report).
    config: Option<PathBuf>,
    /// Reuse the solution stored in a previous report. Relative mesh paths
    /// in its embedded scenario resolve against the scenario file's
    /// directory when one is given, else the working directory.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Plane such as "y=0.2" (overrides the scenario's [field] table).
    #[arg(long)]
    plane: Option<String>,
    /// Range of the first in-plane axis, "min,max".
    #[arg(long, value_parser = parse_pair)]
    u: Option<[f64; 2]>,
    /// Range of the second in-plane axis, "min,max".
    #[arg(long, value_parser = parse_pair)]
    v: Option<[f64; 2]>,
    /// Grid size "NUxNV".
    #[arg(long, value_parser = parse_resolution)]
    resolution: Option<[usize; 2]>,
    /// Triangle rule order of the potential evaluation.
    #[arg(long)]
    order: Option<usize>,
    /// Output CSV file.
    #[arg(long, default_value = "field.csv")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum MeshCommand {
    /// Generate a cube or sphere mesh.
    #[command(subcommand)]
    Generate(Shape),
    /// Barycentric refinement.
    Refine {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print mesh statistics.
    Info { input: PathBuf },
}

#[derive(Subcommand)]
enum Shape {
    Cube {
        #[arg(long, default_value_t = 1.0)]
        side: f64,
        #[arg(long, value_parser = parse_triple, default_value = "0,0,0")]
        origin: [f64; 3],
        /// Maximum element size.
        #[arg(long)]
        h: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    Sphere {
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 2)]
        subdivisions: usize,
        #[arg(long, value_parser = parse_triple, default_value = "0,0,0")]
        center: [f64; 3],
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn parse_floats<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected {N} comma-separated numbers, got {s:?}"))
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    parse_floats::<2>(s)
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    parse_floats::<3>(s)
}

fn parse_resolution(s: &str) -> std::result::Result<[usize; 2], String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected NUxNV, got {s:?}"))?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok([p(a)?, p(b)?])
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn solve(config: &Path, out: Option<PathBuf>) -> Result<u8> {
    let cfg = ScenarioConfig::load(config)?;
    let outcome = run_scenario(&cfg, &base_dir(config))?;
    let dir = out.unwrap_or_else(|| base_dir(config).join(&cfg.output.dir));
    let path = outcome.report.write(&dir)?;
    print!("{}", outcome.report.summary());
    println!("report written to {}", path.display());
    Ok(exit_code(&outcome.report))
}

fn sweep(config: &Path, out: Option<PathBuf>) -> Result<u8> {
    let cfg = ScenarioConfig::load(config)?;
    let dir = out.unwrap_or_else(|| base_dir(config).join(&cfg.output.dir));
    let result = run_sweep(&cfg, &base_dir(config), Some(&dir))?;
    let path = result.write_summary(&dir)?;
    print!("{}", result.summary_csv());
    println!("summary written to {}", path.display());
    Ok(if result.rows.iter().all(|r| r.status == "ok") { 0 } else { 2 })
}

fn verify(suite: Suite) -> Result<u8> {
    let report = suite.run()?;
    println!("{report}");
    Ok(if report.passed() { 0 } else { 2 })
}

fn field_cmd(args: FieldArgs) -> Result<u8> {
    let (cfg, solution, problem) = match (&args.report, &args.config) {
        (Some(path), _) => {
            let report = RunReport::read(path)?;
            let solution = report
                .solution()
                .ok_or_else(|| HarnessError::config(format!("{} stores no solution", path.display())))?;
            let base = args.config.as_deref().map(base_dir).unwrap_or_default();
            let problem = report.config.build_problem(&base)?;
            (report.config, solution, problem)
        }
        (None, Some(config)) => {
            let cfg = ScenarioConfig::load(config)?;
            let outcome = run_scenario(&cfg, &base_dir(config))?;
            print!("{}", outcome.report.summary());
            (cfg, outcome.solution.coefficients().to_vec(), outcome.problem)
        }
        (None, None) => return Err(HarnessError::config("field needs a scenario file or --report")),
    };
    let from_cfg = cfg.field.clone();
    let grid = match (args.plane, args.u, args.v, args.resolution) {
        (Some(plane), Some(u), Some(v), Some(resolution)) => {
            FieldConfig { plane, u, v, resolution, order: args.order.unwrap_or(4) }
        }
        (None, None, None, None) => {
            let mut f = from_cfg.ok_or_else(|| HarnessError::config("no [field] table and no --plane/--u/--v/--resolution"))?;
            if let Some(o) = args.order {
                f.order = o;
            }
            f
        }
        _ => return Err(HarnessError::config("--plane, --u, --v and --resolution must be given together")),
    };
    let points = field::grid_from_config(&grid)?;
    let values = field::evaluate(&problem, &solution, &points, grid.order)?;
    let csv = field::field_csv(&values);
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(&args.out, csv).map_err(|e| HarnessError::io(&args.out, e))?;
    let flagged = values.iter().filter(|f| f.near_surface).count();
    println!("{} points written to {} ({flagged} flagged near a surface)", values.len(), args.out.display());
    Ok(0)
}

fn mesh(cmd: MeshCommand) -> Result<u8> {
    match cmd {
        MeshCommand::Generate(Shape::Cube { side, origin, h, output }) => {
            let m = mesh_tools::cube(side, origin, h)?;
            mesh_tools::save(&m, &output)?;
            print!("{}", mesh_tools::info(&m));
        }
        MeshCommand::Generate(Shape::Sphere { radius, subdivisions, center, output }) => {
            let m = mesh_tools::sphere(radius, subdivisions, center)?;
            mesh_tools::save(&m, &output)?;
            print!("{}", mesh_tools::info(&m));
        }
        MeshCommand::Refine { input, output } => {
            let m = mesh_tools::refine(&mesh_tools::load(&input)?);
            mesh_tools::save(&m, &output)?;
            print!("{}", mesh_tools::info(&m));
        }
        MeshCommand::Info { input } => print!("{}", mesh_tools::info(&mesh_tools::load(&input)?)),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads(cli.single_thread).and_then(|_| match cli.command {
        Command::Solve { config, out } => solve(&config, out),
        Command::Sweep { config, out } => sweep(&config, out),
        Command::Verify { suite } => verify(suite.into()),
        Command::Field(args) => field_cmd(args),
        Command::Mesh(cmd) => mesh(cmd),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}
