use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use replab::equilibrium::maximal_support_equilibrium;
use replab::game::{Game, StrategyProfile};
use replab::generator::{classify_3x2_faces, corner_h_exponents_with, GeneratorReport, V1Mode};
use replab::io::{read_game, read_trajectory_csv, write_atomic, write_json, write_trajectory_csv};
use replab::measures::{corner_mass, occupation_histogram, regret_report, Axis};
use replab::ode::{integrate_ode, OdeConfig, Trajectory};
use replab::recipes::{bundled_game, reproduce_figure, Figure, DEFAULT_SEED};
use replab::sde::{ensemble_map, simulate_sde, DiffusionSpec, NoiseMode, SdeConfig};
use replab::{Error, Result};

const EXIT_NOT_FOUND: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_PRECONDITION: u8 = 4;

/// Replicator dynamics in two-player zero-sum games.
#[derive(Parser)]
#[command(name = "replab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Value, maximal-support equilibrium and anti-equilibrium.
    Solve {
        game: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Deterministic replicator flow (RK4).
    SimulateOde {
        game: PathBuf,
        #[command(flatten)]
        clock: Clock,
        /// Initial state `x_1,..,x_n;y_1,..,y_m` (default: barycenter).
        #[arg(long)]
        init: Option<String>,
        #[arg(long, default_value = "traj.csv")]
        out: PathBuf,
    },
    /// Stochastic replicator dynamics (Euler-Maruyama).
    SimulateSde {
        game: PathBuf,
        #[command(flatten)]
        noise: Noise,
        #[command(flatten)]
        clock: Clock,
        #[arg(long)]
        init: Option<String>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Default: a tenth of t_end.
        #[arg(long)]
        burn_in: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        clamp_eps: f64,
        /// Number of independent replicas; writes `<stem>_<k>.csv` and `<stem>_summary.json`.
        #[arg(long)]
        replicas: Option<u64>,
        #[arg(long, default_value = "traj.csv")]
        out: PathBuf,
    },
    /// Generator report: corner exponents, edges, cycle, noise conditions.
    Analyze {
        game: PathBuf,
        #[command(flatten)]
        noise: Noise,
        /// Weights of V1: `unused` (strategies outside the equilibrium supports) or `full`.
        #[arg(long, default_value = "unused")]
        v1_mode: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-corner CSV: i, j, H, Lambda, label.
    ClassifyCorners {
        game: PathBuf,
        #[command(flatten)]
        noise: Noise,
        #[arg(long, default_value = "corners.csv")]
        out: PathBuf,
    },
    /// Occupation histogram of a trajectory.
    Occupancy {
        traj: PathBuf,
        #[arg(long, default_value_t = 60)]
        bins: usize,
        #[arg(long, default_value_t = 0.0)]
        burn_in: f64,
        #[arg(long, value_delimiter = ',', default_value = "x_1,y_1")]
        axes: Vec<String>,
        #[arg(long, default_value = "hist.json")]
        out: PathBuf,
    },
    /// Time fraction near each corner.
    CornerMass {
        traj: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        radius: f64,
        #[arg(long, default_value_t = 0.0)]
        burn_in: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cumulative regret of a trajectory.
    Regret {
        game: PathBuf,
        traj: PathBuf,
        /// Noise of the run, for the stochastic allowance.
        #[arg(long, value_delimiter = ',')]
        sigma: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        eta: Option<Vec<f64>>,
        #[arg(long)]
        reduced: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs a fixed figure recipe: 1a, 1b, 2a or 2b.
    ReproduceFigure {
        figure: String,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Args)]
struct Clock {
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 100.0)]
    t_end: f64,
    #[arg(long, default_value_t = 10)]
    thin: usize,
}

#[derive(Args)]
struct Noise {
    /// Row intensities; one value is broadcast to every strategy.
    #[arg(long, value_delimiter = ',', required = true)]
    sigma: Vec<f64>,
    /// Column intensities; one value is broadcast to every strategy.
    #[arg(long, value_delimiter = ',', required = true)]
    eta: Vec<f64>,
    /// Two-strategy convention: one Brownian motion per player, `dX_1 = ... + s X_1 X_2 dW`.
    #[arg(long)]
    reduced: bool,
}

fn broadcast(v: &[f64], dim: usize, name: &str) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; dim]),
        k if k == dim => Ok(v.to_vec()),
        k => Err(Error::Precondition(format!("--{name} has {k} values, expected 1 or {dim}"))),
    }
}

fn diffusion(g: &Game, sigma: &[f64], eta: &[f64], reduced: bool) -> Result<(DiffusionSpec, NoiseMode)> {
    if reduced {
        if g.rows() != 2 || g.cols() != 2 || sigma.len() != 1 || eta.len() != 1 {
            return Err(Error::Precondition(
                "--reduced needs a 2x2 game and a single --sigma and --eta value".into(),
            ));
        }
        return Ok((DiffusionSpec::reduced(sigma[0], eta[0])?, NoiseMode::Reduced));
    }
    let spec = DiffusionSpec::diagonal(broadcast(sigma, g.rows(), "sigma")?, broadcast(eta, g.cols(), "eta")?)?;
    Ok((spec, NoiseMode::Full))
}

fn noise_spec(g: &Game, n: &Noise) -> Result<(DiffusionSpec, NoiseMode)> {
    diffusion(g, &n.sigma, &n.eta, n.reduced)
}

/// A game file, or the name of a bundled game when no such file exists.
fn load_game(path: &Path) -> Result<Game> {
    if !path.exists() {
        if let Some(g) = path.to_str().and_then(bundled_game) {
            return Ok(g);
        }
    }
    read_game(path)
}

fn parse_init(s: Option<&str>, g: &Game) -> Result<StrategyProfile> {
    let Some(s) = s else {
        return Ok(StrategyProfile::barycenter(g.rows(), g.cols()));
    };
    let block = |b: &str| -> Result<Vec<f64>> {
        b.split(',')
            .map(|v| v.trim().parse().map_err(|_| Error::Parse(format!("bad number {v:?} in --init"))))
            .collect()
    };
    let (x, y) = s
        .split_once(';')
        .ok_or_else(|| Error::Parse("--init must look like x_1,..,x_n;y_1,..,y_m".into()))?;
    let p = StrategyProfile::from_vecs(block(x)?, block(y)?)?;
    if p.x.dim() != g.rows() || p.y.dim() != g.cols() {
        return Err(Error::Precondition(format!(
            "--init has shape ({}, {}), game is {}x{}",
            p.x.dim(),
            p.y.dim(),
            g.rows(),
            g.cols()
        )));
    }
    Ok(p)
}

fn final_state(t: &Trajectory) -> Value {
    let k = t.len() - 1;
    json!({"t": t.times()[k], "x": t.x(k), "y": t.y(k)})
}

fn analyze(g: &Game, spec: &DiffusionSpec, mode: V1Mode) -> Result<GeneratorReport> {
    let report = maximal_support_equilibrium(g)?;
    let face_game = g.rows() == 3
        && g.cols() == 2
        && spec.is_diagonal()
        && report.row_support.indices() == [0, 1]
        && report.col_support.is_full();
    if face_game && mode == V1Mode::Unused {
        classify_3x2_faces(g, spec)
    } else {
        corner_h_exponents_with(g, spec, &report, mode)
    }
}

fn run(cmd: Command) -> Result<Value> {
    match cmd {
        Command::Solve { game, out } => {
            let g = load_game(&game)?;
            let r = maximal_support_equilibrium(&g)?;
            if let Some(out) = out {
                write_json(out, &r)?;
            }
            Ok(serde_json::to_value(&r).expect("report serializes"))
        }
        Command::SimulateOde { game, clock, init, out } => {
            let g = load_game(&game)?;
            let mut cfg = OdeConfig::new(parse_init(init.as_deref(), &g)?, clock.t_end);
            cfg.dt = clock.dt;
            cfg.thin = clock.thin;
            let t = integrate_ode(&g, &cfg)?;
            write_trajectory_csv(&out, &t)?;
            Ok(json!({
                "command": "simulate-ode", "game": g.name(), "out": out, "rows": t.len(),
                "steps": t.meta.steps, "clamp_events": t.meta.clamp_events, "final": final_state(&t),
            }))
        }
        Command::SimulateSde {
            game,
            noise,
            clock,
            init,
            seed,
            burn_in,
            clamp_eps,
            replicas,
            out,
        } => {
            let g = load_game(&game)?;
            let (spec, mode) = noise_spec(&g, &noise)?;
            let mut cfg = SdeConfig::new(parse_init(init.as_deref(), &g)?, clock.t_end, seed);
            cfg.dt = clock.dt;
            cfg.thin = clock.thin;
            cfg.burn_in = burn_in.unwrap_or(0.1 * clock.t_end);
            cfg.clamp_eps = clamp_eps;
            cfg.noise = mode;
            match replicas {
                None => {
                    let t = simulate_sde(&g, &spec, &cfg)?;
                    write_trajectory_csv(&out, &t)?;
                    Ok(json!({
                        "command": "simulate-sde", "game": g.name(), "out": out, "seed": seed,
                        "rows": t.len(), "steps": t.meta.steps, "clamp_events": t.meta.clamp_events,
                        "final": final_state(&t),
                    }))
                }
                Some(0) => Err(Error::Precondition("--replicas must be at least 1".into())),
                Some(n) => {
                    let stem = out.file_stem().map_or("traj".into(), |s| s.to_string_lossy().into_owned());
                    let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
                    let rows = ensemble_map(&g, &spec, &cfg, n, |r, t| -> Result<Value> {
                        let path = dir.join(format!("{stem}_{r}.csv"));
                        write_trajectory_csv(&path, &t)?;
                        Ok(json!({
                            "replica": r, "file": path, "clamp_events": t.meta.clamp_events,
                            "final": final_state(&t),
                        }))
                    })?
                    .into_iter()
                    .collect::<Result<Vec<_>>>()?;
                    let summary_path = dir.join(format!("{stem}_summary.json"));
                    write_json(
                        &summary_path,
                        &json!({
                            "game": g.name(), "seed": seed, "replicas": n, "dt": cfg.dt,
                            "t_end": cfg.t_end, "thin": cfg.thin, "noise": format!("{mode:?}").to_lowercase(),
                            "runs": rows,
                        }),
                    )?;
                    Ok(json!({
                        "command": "simulate-sde", "game": g.name(), "seed": seed, "replicas": n,
                        "summary": summary_path,
                    }))
                }
            }
        }
        Command::Analyze { game, noise, v1_mode, out } => {
            let g = load_game(&game)?;
            let (spec, _) = noise_spec(&g, &noise)?;
            let mode = match v1_mode.as_str() {
                "unused" => V1Mode::Unused,
                "full" => V1Mode::Full,
                other => return Err(Error::Precondition(format!("--v1-mode must be unused or full, got {other:?}"))),
            };
            let r = analyze(&g, &spec, mode)?;
            if let Some(out) = out {
                write_json(out, &r)?;
            }
            Ok(serde_json::to_value(&r).expect("report serializes"))
        }
        Command::ClassifyCorners { game, noise, out } => {
            let g = load_game(&game)?;
            let (spec, _) = noise_spec(&g, &noise)?;
            let r = analyze(&g, &spec, V1Mode::Unused)?;
            let mut csv = String::from("i,j,H,Lambda,label\n");
            for c in &r.corners {
                csv.push_str(&format!("{},{},{:?},{:?},{}\n", c.i, c.j, c.h, c.lambda, c.label.as_str()));
            }
            write_atomic(&out, csv.as_bytes())?;
            Ok(json!({
                "command": "classify-corners", "game": g.name(), "out": out,
                "corners": r.corners.iter().map(|c| json!({"i": c.i, "j": c.j, "label": c.label.as_str()})).collect::<Vec<_>>(),
                "cycle": r.cycle,
            }))
        }
        Command::Occupancy {
            traj,
            bins,
            burn_in,
            axes,
            out,
        } => {
            let t = read_trajectory_csv(&traj)?;
            let axes = axes.iter().map(|a| Axis::parse(a)).collect::<Result<Vec<_>>>()?;
            let h = occupation_histogram(&t, &axes, bins, burn_in)?;
            write_json(&out, &h)?;
            Ok(json!({
                "command": "occupancy", "out": out, "bins": bins,
                "axes": axes.iter().map(ToString::to_string).collect::<Vec<_>>(),
                "total_samples": h.total_samples,
            }))
        }
        Command::CornerMass {
            traj,
            radius,
            burn_in,
            out,
        } => {
            let t = read_trajectory_csv(&traj)?;
            let r = corner_mass(&t, radius, burn_in)?;
            if let Some(out) = out {
                write_json(out, &r)?;
            }
            Ok(serde_json::to_value(&r).expect("report serializes"))
        }
        Command::Regret {
            game,
            traj,
            sigma,
            eta,
            reduced,
            out,
        } => {
            let g = load_game(&game)?;
            let t = read_trajectory_csv(&traj)?;
            let spec = match (sigma, eta) {
                (Some(s), Some(e)) => Some(diffusion(&g, &s, &e, reduced)?.0),
                (None, None) => None,
                _ => return Err(Error::Precondition("give both --sigma and --eta, or neither".into())),
            };
            let r = regret_report(&g, &t, spec.as_ref())?;
            if let Some(out) = out {
                write_json(out, &r)?;
            }
            Ok(serde_json::to_value(&r).expect("report serializes"))
        }
        Command::ReproduceFigure { figure, out_dir, seed } => {
            let fig = Figure::parse(&figure)?;
            Ok(reproduce_figure(fig, &out_dir, seed)?.summary)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_NOT_FOUND,
        Error::Parse(_) | Error::InvalidGame(_) => EXIT_PARSE,
        _ => EXIT_PRECONDITION,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PRECONDITION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", json!({"error": e.to_string(), "exit_code": code}));
            ExitCode::from(code)
        }
    }
}
