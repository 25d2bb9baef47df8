use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixture_smpc::bmpc::solve_bmpc_with;
use mixture_smpc::closedloop::run_episode;
use mixture_smpc::experiment::{
    load_config, run_checks, run_monte_carlo, sets_to_toml, write_report, write_trajectories, Design, DesignError,
    ExperimentConfig, OutputFormat, SetsFile,
};
use mixture_smpc::setops::PolytopeH;
use nalgebra::DVector;

#[derive(Parser)]
#[command(name = "smpc", version, about = "Branch MPC under Gaussian-mixture disturbances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the tightened sets Z, V and the terminal set Z_F.
    Tighten(Common),
    /// Solve one branch-MPC instance.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Measured state, comma separated (default: x0 from the config).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        state: Option<Vec<f64>>,
        /// Previous nominal prediction, comma separated (default: the state).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z_prev: Option<Vec<f64>>,
    },
    /// Simulate one episode and print every step.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Episode index within the seed's substreams.
        #[arg(long, default_value_t = 0)]
        episode: u64,
    },
    /// Run a Monte Carlo campaign and write the report files.
    Montecarlo(Common),
    /// Run the invariant checks on a configuration.
    Check(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "case_study.cfg")]
    config: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, env = "SMPC_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
        }
    }
}

enum Failure {
    Config(String),
    Infeasible(String),
    Solver(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Solver(_) => 4,
            Failure::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Infeasible(m) | Failure::Solver(m) | Failure::Other(m) => m,
        }
    }
}

impl From<DesignError> for Failure {
    fn from(e: DesignError) -> Self {
        match e {
            DesignError::Config(_) => Failure::Config(e.to_string()),
            DesignError::Infeasible(_) => Failure::Infeasible(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Other(format!("{}: {e}", path.display()))
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = load_config(&self.config).map_err(|e| Failure::Config(e.to_string()))?;
        if let Some(m) = self.episodes {
            cfg.episodes = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

fn vector(name: &str, values: Option<&Vec<f64>>, fallback: &DVector<f64>) -> Result<DVector<f64>, Failure> {
    match values {
        None => Ok(fallback.clone()),
        Some(v) if v.len() == fallback.len() => Ok(DVector::from_vec(v.clone())),
        Some(v) => Err(Failure::Config(format!(
            "--{name} has {} entries, expected {}",
            v.len(),
            fallback.len()
        ))),
    }
}

fn show_set(name: &str, p: &PolytopeH) {
    match p.interval_bounds() {
        Some((lo, hi)) if p.dim() == 1 => println!("{name:<4} = [{lo:.6}, {hi:.6}]"),
        _ => {
            println!("{name:<4} = {{x : A x <= b}} with {} rows", p.num_rows());
            for i in 0..p.num_rows() {
                let row: Vec<String> = p.row(i).iter().map(|v| format!("{v:.6}")).collect();
                println!("       [{}] x <= {:.6}", row.join(", "), p.b()[i]);
            }
        }
    }
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn tighten(common: &Common) -> Result<(), Failure> {
    let cfg = common.load()?;
    let (em, sets, terminal) = cfg.sets()?;
    println!("K    = {}", fmt_vec(&DVector::from_column_slice(em.k().as_slice())));
    println!(
        "Sinf = {}",
        fmt_vec(&DVector::from_column_slice(em.sigma_inf().as_slice()))
    );
    show_set("Z", &sets.z);
    show_set("V", &sets.v);
    show_set("Z_F", &terminal);
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("sets.toml");
        let file = SetsFile {
            z: sets.z,
            v: sets.v,
            z_f: terminal,
        };
        std::fs::write(&path, sets_to_toml(&file)).map_err(io_err(&path))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn solve(common: &Common, state: Option<&Vec<f64>>, z_prev: Option<&Vec<f64>>) -> Result<(), Failure> {
    let cfg = common.load()?;
    let design = cfg.design()?;
    let x = vector("state", state, &cfg.x0)?;
    let zp = vector("z-prev", z_prev, &x)?;
    let bmpc = design.controller.bmpc();
    let start = Instant::now();
    let sol = solve_bmpc_with(bmpc, &x, &zp, None, design.controller.backend().as_ref())
        .map_err(|e| Failure::Solver(e.to_string()))?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    println!("xi     = {}", sol.xi);
    println!("cost   = {:.9}", sol.cost);
    println!("z0     = {}", fmt_vec(sol.root()));
    println!("v0     = {}", fmt_vec(sol.first_input()));
    for d in 1..=bmpc.tree().branching() {
        println!("z1^{d:<3}= {}", fmt_vec(sol.depth_one(d)));
    }
    println!(
        "{} variables, {} rows, {} QP solves, {} iterations, {ms:.2} ms ({})",
        bmpc.num_vars(),
        bmpc.num_eq_rows() + bmpc.num_in_rows(),
        sol.qp_solves,
        sol.qp_iterations,
        design.controller.backend_name()
    );
    Ok(())
}

fn simulate(common: &Common, episode: u64) -> Result<(), Failure> {
    let cfg = common.load()?;
    let design = cfg.design()?;
    let t = run_episode(
        &design.controller,
        &design.monitored,
        &cfg.x0,
        cfg.steps,
        cfg.seed,
        episode,
    )
    .map_err(|e| Failure::Solver(e.to_string()))?;
    println!(
        "{:>3} {:>11} {:>11} {:>11} {:>11} {:>11} {:>2} {:>11} {:>2} {:>8}",
        "k", "x", "u", "z", "e", "v", "xi", "w", "j", "ms"
    );
    for s in &t.steps {
        println!(
            "{:>3} {:>11.6} {:>11.6} {:>11.6} {:>11.6} {:>11.6} {:>2} {:>11.6} {:>2} {:>8.2}",
            s.k,
            s.x[0],
            s.u[0],
            s.z[0],
            s.e[0],
            s.v[0],
            s.xi,
            s.w[0],
            s.j,
            s.solve_seconds * 1e3
        );
    }
    println!("{:>3} {:>11.6}", t.steps.len(), t.x_final[0]);
    for (c, flags) in design.monitored.iter().zip(&t.violations) {
        let steps: Vec<String> = flags
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(k, _)| k.to_string())
            .collect();
        println!("{}: violated at [{}]", c.name, steps.join(", "));
    }
    println!(
        "|x-z-e| max {:.1e}, |u-v-Ke| max {:.1e}",
        t.relation_residual(),
        t.interface_residual(design.controller.k())
    );
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("trajectories.csv");
        let mut buf = Vec::new();
        write_trajectories(&mut buf, std::slice::from_ref(&t)).map_err(io_err(&path))?;
        std::fs::write(&path, buf).map_err(io_err(&path))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn montecarlo(common: &Common) -> Result<(), Failure> {
    let cfg = common.load()?;
    let design = cfg.design()?;
    let start = Instant::now();
    let campaign =
        run_monte_carlo(&design, cfg.episodes, cfg.seed, cfg.workers).map_err(|e| Failure::Solver(e.to_string()))?;
    let elapsed = start.elapsed().as_secs_f64();
    let dir = &cfg.output_dir;
    let files = write_report(dir, &design, &campaign, common.format.into()).map_err(io_err(dir))?;
    print!(
        "{}",
        std::fs::read_to_string(&files.summary).map_err(io_err(&files.summary))?
    );
    println!("campaign wall time {elapsed:.1} s");
    println!("wrote {}", dir.display());
    Ok(())
}

fn check(common: &Common) -> Result<(), Failure> {
    let cfg = common.load()?;
    let design: Design = cfg.design()?;
    let episodes = common.episodes.unwrap_or(20);
    let results = run_checks(&design, cfg.seed, episodes);
    let mut all = true;
    for r in &results {
        all &= r.passed;
        println!("{} {:<26} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if all {
        Ok(())
    } else {
        Err(Failure::Other("some checks failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Tighten(c) => tighten(c),
        Command::Solve { common, state, z_prev } => solve(common, state.as_ref(), z_prev.as_ref()),
        Command::Simulate { common, episode } => simulate(common, *episode),
        Command::Montecarlo(c) => montecarlo(c),
        Command::Check(c) => check(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("smpc: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
