//! Bundled games and the fixed figure recipes.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::equilibrium::maximal_support_equilibrium;
use crate::error::{Error, Result};
use crate::game::{Game, StrategyProfile};
use crate::io::{parse_game, write_json, write_trajectory_csv};
use crate::measures::{corner_mass, occupation_histogram, Axis, DEFAULT_RADIUS};
use crate::ode::{cross_entropy, integrate_ode, OdeConfig, Trajectory};
use crate::sde::{simulate_sde, DiffusionSpec, NoiseMode, NoiseStream, SdeConfig};

pub const MATCHING_PENNIES_JSON: &str = include_str!("../../../games/matching_pennies.json");
pub const MP_3X2_JSON: &str = include_str!("../../../games/mp_3x2.json");

pub const DEFAULT_SEED: u64 = 42;

pub fn bundled_games() -> Vec<Game> {
    [
        (MATCHING_PENNIES_JSON, "matching_pennies.json"),
        (MP_3X2_JSON, "mp_3x2.json"),
    ]
    .into_iter()
    .map(|(text, src)| parse_game(text, src).expect("bundled game parses"))
    .collect()
}

/// Looks a bundled game up by name, with or without the `.json` suffix.
pub fn bundled_game(name: &str) -> Option<Game> {
    let name = name.strip_suffix(".json").unwrap_or(name);
    bundled_games().into_iter().find(|g| g.name() == name)
}

pub fn matching_pennies() -> Game {
    bundled_game("matching_pennies").unwrap()
}

pub fn mp_3x2() -> Game {
    bundled_game("mp_3x2").unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Deterministic MP orbits on level sets of the cross-entropy.
    F1a,
    /// Deterministic 3x2 runs drifting to the face `x_3 = 0`.
    F1b,
    /// Stochastic MP, `σ = η = 0.2`.
    F2a,
    /// Stochastic 3x2, `σ_i = η_j = 0.2`.
    F2b,
}

impl Figure {
    pub const ALL: [Figure; 4] = [Figure::F1a, Figure::F1b, Figure::F2a, Figure::F2b];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1a" => Ok(Figure::F1a),
            "1b" => Ok(Figure::F1b),
            "2a" => Ok(Figure::F2a),
            "2b" => Ok(Figure::F2b),
            other => Err(Error::precondition(format!("unknown figure {other:?}; expected 1a, 1b, 2a or 2b"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Figure::F1a => "1a",
            Figure::F1b => "1b",
            Figure::F2a => "2a",
            Figure::F2b => "2b",
        }
    }
}

/// Files written by a recipe and its summary.
#[derive(Debug, Clone)]
pub struct FigureRun {
    pub figure: Figure,
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

const ODE_DT: f64 = 1e-3;
const ODE_THIN: usize = 10;
const SDE_DT: f64 = 1e-3;
const SDE_T_END: f64 = 1e4;
const SDE_BURN_IN: f64 = 1e3;
const SDE_THIN: usize = 100;
const SDE_NOISE: f64 = 0.2;
const HIST_BINS: usize = 60;

/// Runs the fixed recipe for `fig`, writing into `out_dir` (created if missing).
/// `seed` drives the random initial points of 1b and the noise of 2a/2b.
pub fn reproduce_figure(fig: Figure, out_dir: &Path, seed: u64) -> Result<FigureRun> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    match fig {
        Figure::F1a => figure_1a(out_dir),
        Figure::F1b => figure_1b(out_dir, seed),
        Figure::F2a => figure_2a(out_dir, seed),
        Figure::F2b => figure_2b(out_dir, seed),
    }
}

fn max_drift(reference: &StrategyProfile, t: &Trajectory) -> Result<(f64, f64)> {
    let v0 = cross_entropy(reference, &t.profile(0))?;
    let mut worst = 0.0f64;
    let mut last = v0;
    for k in 0..t.len() {
        last = cross_entropy(reference, &t.profile(k))?;
        worst = worst.max((last - v0).abs());
    }
    Ok((worst, last - v0))
}

fn figure_1a(out: &Path) -> Result<FigureRun> {
    let g = matching_pennies();
    let eq = maximal_support_equilibrium(&g)?;
    let reference = StrategyProfile::new(eq.p.clone(), eq.q.clone());
    let mut files = Vec::new();
    let mut runs = Vec::new();
    for (k, x1) in [0.6, 0.7, 0.8, 0.9].into_iter().enumerate() {
        let init = StrategyProfile::from_vecs(vec![x1, 1.0 - x1], vec![x1, 1.0 - x1])?;
        let mut cfg = OdeConfig::new(init, 50.0);
        cfg.dt = ODE_DT;
        cfg.thin = ODE_THIN;
        let t = integrate_ode(&g, &cfg)?;
        let path = out.join(format!("traj_{}.csv", k + 1));
        write_trajectory_csv(&path, &t)?;
        let (drift, _) = max_drift(&reference, &t)?;
        runs.push(json!({"file": path.file_name().unwrap().to_string_lossy(), "x1_0": x1, "y1_0": x1, "max_V_drift": drift}));
        files.push(path);
    }
    finish(Figure::F1a, out, files, json!({"game": g.name(), "dt": ODE_DT, "t_end": 50.0, "runs": runs}))
}

fn figure_1b(out: &Path, seed: u64) -> Result<FigureRun> {
    let g = mp_3x2();
    let eq = maximal_support_equilibrium(&g)?;
    let reference = StrategyProfile::new(eq.p.clone(), eq.q.clone());
    let mut inits = NoiseStream::new(seed, 0);
    let mut files = Vec::new();
    let mut runs = Vec::new();
    for k in 0..5 {
        let init = inits.profile(3, 2);
        let mut cfg = OdeConfig::new(init.clone(), 100.0);
        cfg.dt = ODE_DT;
        cfg.thin = ODE_THIN;
        let t = integrate_ode(&g, &cfg)?;
        let path = out.join(format!("traj_{}.csv", k + 1));
        write_trajectory_csv(&path, &t)?;
        let last = t.len() - 1;
        let (_, dv) = max_drift(&reference, &t)?;
        runs.push(json!({
            "file": path.file_name().unwrap().to_string_lossy(),
            "x0": init.x.as_slice(),
            "y0": init.y.as_slice(),
            "x3_end": t.x(last)[2],
            "V_change": dv,
        }));
        files.push(path);
    }
    finish(Figure::F1b, out, files, json!({"game": g.name(), "dt": ODE_DT, "t_end": 100.0, "seed": seed, "runs": runs}))
}

fn stochastic(g: &Game, spec: &DiffusionSpec, mode: NoiseMode, seed: u64) -> Result<Trajectory> {
    let mut cfg = SdeConfig::new(StrategyProfile::barycenter(g.rows(), g.cols()), SDE_T_END, seed);
    cfg.dt = SDE_DT;
    cfg.thin = SDE_THIN;
    cfg.burn_in = SDE_BURN_IN;
    cfg.noise = mode;
    simulate_sde(g, spec, &cfg)
}

fn figure_2a(out: &Path, seed: u64) -> Result<FigureRun> {
    let g = matching_pennies();
    let spec = DiffusionSpec::reduced(SDE_NOISE, SDE_NOISE)?;
    let t = stochastic(&g, &spec, NoiseMode::Reduced, seed)?;
    let hist = occupation_histogram(&t, &[Axis::X(0), Axis::Y(0)], HIST_BINS, SDE_BURN_IN)?;
    let mass = corner_mass(&t, DEFAULT_RADIUS, SDE_BURN_IN)?;
    let (tp, hp) = (out.join("traj.csv"), out.join("hist.json"));
    write_trajectory_csv(&tp, &t)?;
    write_json(&hp, &hist)?;
    finish(
        Figure::F2a,
        out,
        vec![tp, hp],
        json!({
            "game": g.name(), "sigma": SDE_NOISE, "eta": SDE_NOISE, "noise": "reduced",
            "dt": SDE_DT, "t_end": SDE_T_END, "burn_in": SDE_BURN_IN, "seed": seed,
            "clamp_events": t.meta.clamp_events, "corner_mass": mass,
        }),
    )
}

fn figure_2b(out: &Path, seed: u64) -> Result<FigureRun> {
    let g = mp_3x2();
    let spec = DiffusionSpec::uniform(3, 2, SDE_NOISE, SDE_NOISE)?;
    let t = stochastic(&g, &spec, NoiseMode::Full, seed)?;
    let hist = occupation_histogram(&t, &[Axis::X(0), Axis::Y(0)], HIST_BINS, SDE_BURN_IN)?;
    let mass = corner_mass(&t, DEFAULT_RADIUS, SDE_BURN_IN)?;
    let face: f64 = (1..=2).flat_map(|i| (1..=2).map(move |j| (i, j))).map(|(i, j)| mass.mass(i, j)).sum();
    let side = mass.mass(3, 1) + mass.mass(3, 2);
    let (tp, hp) = (out.join("traj.csv"), out.join("hist.json"));
    write_trajectory_csv(&tp, &t)?;
    write_json(&hp, &hist)?;
    finish(
        Figure::F2b,
        out,
        vec![tp, hp],
        json!({
            "game": g.name(), "sigma": SDE_NOISE, "eta": SDE_NOISE, "noise": "full",
            "dt": SDE_DT, "t_end": SDE_T_END, "burn_in": SDE_BURN_IN, "seed": seed,
            "clamp_events": t.meta.clamp_events, "x3_end": t.x(t.len() - 1)[2],
            "face_corner_mass": face, "x3_corner_mass": side, "corner_mass": mass,
        }),
    )
}

fn finish(figure: Figure, out: &Path, mut files: Vec<PathBuf>, mut summary: serde_json::Value) -> Result<FigureRun> {
    summary["figure"] = json!(figure.as_str());
    let sp = out.join("summary.json");
    write_json(&sp, &summary)?;
    files.push(sp);
    summary["files"] = json!(files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>());
    Ok(FigureRun { figure, files, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_matrices() {
        let games = bundled_games();
        assert_eq!(games.len(), 2);
        assert_eq!(matching_pennies().a_rows(), vec![vec![1.0, -1.0], vec![-1.0, 1.0]]);
        assert_eq!(mp_3x2().a_rows(), vec![vec![1.0, -1.0], vec![-1.0, 1.0], vec![-2.0, -2.0]]);
        assert!(bundled_game("mp_3x2.json").is_some());
        assert!(bundled_game("rps").is_none());
    }

    #[test]
    fn figure_names() {
        for f in Figure::ALL {
            assert_eq!(Figure::parse(f.as_str()).unwrap(), f);
        }
        assert!(Figure::parse("3").is_err());
    }

    #[test]
    fn figure_1a_is_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = reproduce_figure(Figure::F1a, a.path(), 1).unwrap();
        reproduce_figure(Figure::F1a, b.path(), 1).unwrap();
        for f in &ra.files {
            let name = f.file_name().unwrap();
            assert_eq!(std::fs::read(f).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
        for r in ra.summary["runs"].as_array().unwrap() {
            assert!(r["max_V_drift"].as_f64().unwrap() < 1e-6);
        }
    }
}
