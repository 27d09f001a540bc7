//! Itô replicator SDEs on the simplex product, integrated by Euler–Maruyama.
//!
//! The x-block evolves as `dX = diag(X)(A Y - XᵀAY 1) dt + diag(X) R(X) dW`
//! (and symmetrically for y with `B = -Aᵀ` and `S`). The diagonal model uses
//! `R_ii = σ_i(1 - x_i)`, `R_ik = -σ_k x_k`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{Game, SimplexPoint, StrategyProfile, SupportSet};
use crate::ode::{project, validate_clock, FieldBuffers, Trajectory, TrajectoryMeta};

/// Threshold on `max_k |Σ_i x_i R_ik|` for a custom diffusion to be accepted.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;
/// Random points used to screen a custom diffusion before simulation.
pub const ORTHOGONALITY_SAMPLES: usize = 1000;

pub type NoiseFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// User-supplied `R(x)` (n×n) and `S(y)` (m×m).
#[derive(Clone)]
pub struct CustomDiffusion {
    pub label: String,
    pub r: NoiseFn,
    pub s: NoiseFn,
}

impl fmt::Debug for CustomDiffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDiffusion").field("label", &self.label).finish()
    }
}

#[derive(Debug, Clone)]
pub enum DiffusionSpec {
    Diagonal { sigma: Vec<f64>, eta: Vec<f64> },
    Custom(CustomDiffusion),
}

impl DiffusionSpec {
    pub fn diagonal(sigma: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        for (name, v) in [("sigma", &sigma), ("eta", &eta)] {
            if v.is_empty() || v.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(Error::precondition(format!("{name} must be non-empty, finite and >= 0: {v:?}")));
            }
        }
        Ok(DiffusionSpec::Diagonal { sigma, eta })
    }

    /// Same intensity for every strategy of each player.
    pub fn uniform(n: usize, m: usize, sigma: f64, eta: f64) -> Result<Self> {
        Self::diagonal(vec![sigma; n], vec![eta; m])
    }

    /// Two-strategy sides written as a single equation `dX_1 = … + s X_1 X_2 dW`.
    /// Equal in law to the full model with `σ_1 = σ_2 = s/√2`.
    pub fn reduced(sigma: f64, eta: f64) -> Result<Self> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::uniform(2, 2, sigma * h, eta * h)
    }

    pub fn zero(n: usize, m: usize) -> Self {
        DiffusionSpec::Diagonal {
            sigma: vec![0.0; n],
            eta: vec![0.0; m],
        }
    }

    pub fn custom(label: impl Into<String>, r: NoiseFn, s: NoiseFn) -> Self {
        DiffusionSpec::Custom(CustomDiffusion {
            label: label.into(),
            r,
            s,
        })
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, DiffusionSpec::Diagonal { .. })
    }

    pub fn intensities(&self) -> Option<(&[f64], &[f64])> {
        match self {
            DiffusionSpec::Diagonal { sigma, eta } => Some((sigma, eta)),
            DiffusionSpec::Custom(_) => None,
        }
    }

    pub fn check_dims(&self, n: usize, m: usize) -> Result<()> {
        if let DiffusionSpec::Diagonal { sigma, eta } = self {
            if sigma.len() != n || eta.len() != m {
                return Err(Error::dims(
                    "noise intensities",
                    format!("({n}, {m})"),
                    format!("({}, {})", sigma.len(), eta.len()),
                ));
            }
        }
        Ok(())
    }

    /// Screens a custom diffusion for the orthogonality property; diagonal specs pass trivially.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        self.check_dims(n, m)?;
        if let DiffusionSpec::Custom(_) = self {
            let worst = screen_orthogonality(self, n, m, ORTHOGONALITY_SAMPLES, 0x5eed)?;
            if worst > ORTHOGONALITY_TOL {
                return Err(Error::Diffusion(format!(
                    "orthogonality violated: max |xᵀR(x)| = {worst:e} > {ORTHOGONALITY_TOL:e}"
                )));
            }
        }
        Ok(())
    }
}

fn diagonal_r(sigma: &[f64], w: &[f64]) -> DMatrix<f64> {
    let d = w.len();
    DMatrix::from_fn(d, d, |i, k| {
        if i == k {
            sigma[i] * complement(w, i)
        } else {
            -sigma[k] * w[k]
        }
    })
}

/// `1 - w_i`, computed as the sum of the other components.
#[inline]
pub(crate) fn complement(w: &[f64], i: usize) -> f64 {
    w.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, v)| v).sum()
}

fn custom_matrix(f: &NoiseFn, w: &[f64], block: &str) -> Result<DMatrix<f64>> {
    let r = f(w);
    let d = w.len();
    if r.nrows() != d || r.ncols() != d {
        return Err(Error::dims("custom diffusion", format!("{d}x{d}"), format!("{}x{}", r.nrows(), r.ncols())));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diffusion(format!("custom {block} returned non-finite entries at {w:?}")));
    }
    Ok(r)
}

/// `R(x)` for the row player.
pub fn row_noise_matrix(spec: &DiffusionSpec, x: &[f64]) -> Result<DMatrix<f64>> {
    match spec {
        DiffusionSpec::Diagonal { sigma, .. } => {
            if sigma.len() != x.len() {
                return Err(Error::dims("sigma", x.len(), sigma.len()));
            }
            Ok(diagonal_r(sigma, x))
        }
        DiffusionSpec::Custom(c) => custom_matrix(&c.r, x, "R"),
    }
}

/// `S(y)` for the column player.
pub fn col_noise_matrix(spec: &DiffusionSpec, y: &[f64]) -> Result<DMatrix<f64>> {
    match spec {
        DiffusionSpec::Diagonal { eta, .. } => {
            if eta.len() != y.len() {
                return Err(Error::dims("eta", y.len(), eta.len()));
            }
            Ok(diagonal_r(eta, y))
        }
        DiffusionSpec::Custom(c) => custom_matrix(&c.s, y, "S"),
    }
}

fn scale_rows(w: &[f64], mut r: DMatrix<f64>) -> DMatrix<f64> {
    for (i, wi) in w.iter().enumerate() {
        r.row_mut(i).scale_mut(*wi);
    }
    r
}

/// `G(x) = diag(x) R(x)`: `G_ii = σ_i x_i(1 - x_i)`, `G_ik = -σ_k x_i x_k`.
pub fn diffusion_row_matrix(spec: &DiffusionSpec, x: &SimplexPoint) -> Result<DMatrix<f64>> {
    Ok(scale_rows(x.as_slice(), row_noise_matrix(spec, x.as_slice())?))
}

/// `G̃(y) = diag(y) S(y)`.
pub fn diffusion_col_matrix(spec: &DiffusionSpec, y: &SimplexPoint) -> Result<DMatrix<f64>> {
    Ok(scale_rows(y.as_slice(), col_noise_matrix(spec, y.as_slice())?))
}

fn block_violation(w: &[f64], r: &DMatrix<f64>) -> f64 {
    (0..r.ncols())
        .map(|k| w.iter().enumerate().map(|(i, wi)| wi * r[(i, k)]).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

/// `max_k |Σ_i x_i R_ik(x)|` over both blocks.
pub fn check_orthogonality(spec: &DiffusionSpec, s: &StrategyProfile) -> Result<f64> {
    let (x, y) = (s.x.as_slice(), s.y.as_slice());
    let vx = block_violation(x, &row_noise_matrix(spec, x)?);
    let vy = block_violation(y, &col_noise_matrix(spec, y)?);
    Ok(vx.max(vy))
}

/// Worst orthogonality violation over the corners and `samples` uniform random profiles.
pub fn screen_orthogonality(spec: &DiffusionSpec, n: usize, m: usize, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = NoiseStream::new(seed, u64::MAX);
    let mut worst: f64 = 0.0;
    for k in 0..n.max(m) {
        let s = StrategyProfile::corner(n, m, k.min(n - 1), k.min(m - 1));
        worst = worst.max(check_orthogonality(spec, &s)?);
    }
    for _ in 0..samples {
        let s = rng.profile(n, m);
        worst = worst.max(check_orthogonality(spec, &s)?);
    }
    Ok(worst)
}

/// Seeded normal stream: ChaCha8 keyed by the seed, one stream per trajectory.
/// Normals come in Box–Muller pairs consuming exactly two 64-bit words, so a
/// step always advances the stream by the same amount.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Uniform on (0, 1].
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let r = (-2.0 * self.uniform().ln()).sqrt();
        let theta = std::f64::consts::TAU * self.uniform();
        let (s, c) = theta.sin_cos();
        (r * c, r * s)
    }

    pub fn fill_normals(&mut self, out: &mut [f64]) {
        for chunk in out.chunks_mut(2) {
            let (a, b) = self.normal_pair();
            chunk[0] = a;
            if let Some(v) = chunk.get_mut(1) {
                *v = b;
            }
        }
    }

    /// Positions the stream at the start of step `step` for `per_step` normals per step.
    pub fn seek(&mut self, step: u64, per_step: usize) {
        let words = per_step.div_ceil(2) as u128 * 4;
        self.rng.set_word_pos(step as u128 * words);
    }

    /// Uniform random point of the simplex.
    pub fn simplex(&mut self, dim: usize) -> SimplexPoint {
        let w: Vec<f64> = (0..dim).map(|_| -self.uniform().ln()).collect();
        SimplexPoint::normalized(w)
    }

    pub fn profile(&mut self, n: usize, m: usize) -> StrategyProfile {
        let x = self.simplex(n);
        StrategyProfile::new(x, self.simplex(m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// One Brownian motion per strategy.
    #[default]
    Full,
    /// Two-strategy sides driven by a single Brownian motion with intensity `√(σ_1² + σ_2²)`.
    Reduced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeConfig {
    pub dt: f64,
    pub t_end: f64,
    pub init: StrategyProfile,
    pub seed: u64,
    pub thin: usize,
    pub burn_in: f64,
    /// Post-step floor applied before renormalizing.
    pub clamp_eps: f64,
    pub noise: NoiseMode,
}

impl SdeConfig {
    pub fn new(init: StrategyProfile, t_end: f64, seed: u64) -> Self {
        Self {
            dt: 1e-3,
            t_end,
            init,
            seed,
            thin: 10,
            burn_in: 0.1 * t_end,
            clamp_eps: 0.0,
            noise: NoiseMode::Full,
        }
    }

    pub fn validate(&self, g: &Game, spec: &DiffusionSpec) -> Result<u64> {
        g.check_profile(&self.init)?;
        let steps = validate_clock(self.dt, self.t_end, self.thin)?;
        if !(self.burn_in >= 0.0 && self.burn_in < self.t_end) {
            return Err(Error::precondition(format!(
                "burn_in must lie in [0, t_end), got {}",
                self.burn_in
            )));
        }
        let widest = g.rows().max(g.cols()) as f64;
        if !(self.clamp_eps >= 0.0 && self.clamp_eps * widest < 1.0) {
            return Err(Error::precondition(format!("clamp_eps out of range: {}", self.clamp_eps)));
        }
        if self.noise == NoiseMode::Reduced && !spec.is_diagonal() {
            return Err(Error::precondition("reduced noise mode needs a diagonal diffusion"));
        }
        Ok(steps)
    }
}

/// In-place Euler–Maruyama stepper with preallocated buffers.
pub struct EmStepper<'a> {
    g: &'a Game,
    spec: &'a DiffusionSpec,
    reduce_x: bool,
    reduce_y: bool,
    clamp_eps: f64,
    buf: FieldBuffers,
    dx: Vec<f64>,
    dy: Vec<f64>,
    nx: Vec<f64>,
    ny: Vec<f64>,
}

impl<'a> EmStepper<'a> {
    pub fn new(g: &'a Game, spec: &'a DiffusionSpec, mode: NoiseMode, clamp_eps: f64) -> Result<Self> {
        spec.check_dims(g.rows(), g.cols())?;
        let (n, m) = (g.rows(), g.cols());
        let reduced = mode == NoiseMode::Reduced && spec.is_diagonal();
        Ok(Self {
            g,
            spec,
            reduce_x: reduced && n == 2,
            reduce_y: reduced && m == 2,
            clamp_eps,
            buf: FieldBuffers::new(n, m),
            dx: vec![0.0; n],
            dy: vec![0.0; m],
            nx: vec![0.0; n],
            ny: vec![0.0; m],
        })
    }

    /// Number of standard normals consumed per step for each block.
    pub fn normals_per_step(&self) -> (usize, usize) {
        (
            if self.reduce_x { 1 } else { self.g.rows() },
            if self.reduce_y { 1 } else { self.g.cols() },
        )
    }

    /// Pre-projection increment `drift·dt + G·ξ·√dt` for both blocks.
    pub fn increment(&mut self, x: &[f64], y: &[f64], dt: f64, xi: &[f64], zeta: &[f64]) -> Result<(&[f64], &[f64])> {
        self.buf.field(self.g, x, y, &mut self.dx, &mut self.dy);
        let sq = dt.sqrt();
        match self.spec {
            DiffusionSpec::Diagonal { sigma, eta } => {
                diagonal_noise(sigma, x, xi, self.reduce_x, &mut self.nx);
                diagonal_noise(eta, y, zeta, self.reduce_y, &mut self.ny);
            }
            DiffusionSpec::Custom(c) => {
                custom_noise(&c.r, x, xi, &mut self.nx, "R")?;
                custom_noise(&c.s, y, zeta, &mut self.ny, "S")?;
            }
        }
        for (d, e) in self.dx.iter_mut().zip(&self.nx) {
            *d = *d * dt + e * sq;
        }
        for (d, e) in self.dy.iter_mut().zip(&self.ny) {
            *d = *d * dt + e * sq;
        }
        Ok((&self.dx, &self.dy))
    }

    /// Advances `(x, y)` by one step; returns whether a component was clamped.
    /// Components flagged `false` in the masks are pinned at zero.
    pub fn step(
        &mut self,
        x: &mut [f64],
        y: &mut [f64],
        dt: f64,
        xi: &[f64],
        zeta: &[f64],
        masks: Option<(&[bool], &[bool])>,
    ) -> Result<bool> {
        self.increment(x, y, dt, xi, zeta)?;
        for (v, d) in x.iter_mut().zip(&self.dx) {
            *v += d;
        }
        for (v, d) in y.iter_mut().zip(&self.dy) {
            *v += d;
        }
        Ok(match masks {
            None => project(x, self.clamp_eps) | project(y, self.clamp_eps),
            Some((mx, my)) => project_masked(x, self.clamp_eps, mx) | project_masked(y, self.clamp_eps, my),
        })
    }
}

fn project_masked(w: &mut [f64], floor: f64, mask: &[bool]) -> bool {
    let mut clamped = false;
    for (v, keep) in w.iter_mut().zip(mask) {
        if !keep {
            *v = 0.0;
        } else if *v < floor {
            *v = floor;
            clamped = true;
        }
    }
    let s: f64 = w.iter().sum();
    if s != 1.0 {
        w.iter_mut().for_each(|v| *v /= s);
    }
    clamped
}

/// `(G ξ)_i = x_i(σ_i ξ_i (1 - x_i) - Σ_{k≠i} σ_k x_k ξ_k)`.
fn diagonal_noise(sigma: &[f64], w: &[f64], xi: &[f64], reduced: bool, out: &mut [f64]) {
    if reduced {
        let c = sigma[0].hypot(sigma[1]);
        out[0] = c * w[0] * w[1] * xi[0];
        out[1] = -out[0];
        return;
    }
    for i in 0..w.len() {
        let mut acc = 0.0;
        for k in 0..w.len() {
            if k != i {
                acc += w[k] * (sigma[i] * xi[i] - sigma[k] * xi[k]);
            }
        }
        out[i] = w[i] * acc;
    }
}

fn custom_noise(f: &NoiseFn, w: &[f64], xi: &[f64], out: &mut [f64], block: &str) -> Result<()> {
    let r = custom_matrix(f, w, block)?;
    for (i, o) in out.iter_mut().enumerate() {
        *o = w[i] * (0..w.len()).map(|k| r[(i, k)] * xi[k]).sum::<f64>();
    }
    Ok(())
}

/// One Euler–Maruyama step from `s` with unit normals `(ξ, ζ)` (scaled by `√dt` here).
pub fn em_step(
    g: &Game,
    spec: &DiffusionSpec,
    s: &StrategyProfile,
    dt: f64,
    noise: (&[f64], &[f64]),
) -> Result<StrategyProfile> {
    g.check_profile(s)?;
    if noise.0.len() != g.rows() || noise.1.len() != g.cols() {
        return Err(Error::dims(
            "noise draws",
            format!("({}, {})", g.rows(), g.cols()),
            format!("({}, {})", noise.0.len(), noise.1.len()),
        ));
    }
    let mut stepper = EmStepper::new(g, spec, NoiseMode::Full, 0.0)?;
    let mut x = s.x.as_slice().to_vec();
    let mut y = s.y.as_slice().to_vec();
    stepper.step(&mut x, &mut y, dt, noise.0, noise.1, None)?;
    check_finite(0, &x, &y)?;
    Ok(StrategyProfile::new(SimplexPoint::from_raw(x), SimplexPoint::from_raw(y)))
}

fn check_finite(step: u64, x: &[f64], y: &[f64]) -> Result<()> {
    if x.iter().chain(y).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            snapshot: format!("x={x:?} y={y:?}"),
        })
    }
}

/// Seeded path on noise stream 0.
pub fn simulate_sde(g: &Game, spec: &DiffusionSpec, cfg: &SdeConfig) -> Result<Trajectory> {
    simulate_replica(g, spec, cfg, 0)
}

/// Seeded path on noise stream `replica`; replicas are independent of each other
/// and of the order in which they are run.
pub fn simulate_replica(g: &Game, spec: &DiffusionSpec, cfg: &SdeConfig, replica: u64) -> Result<Trajectory> {
    let steps = cfg.validate(g, spec)?;
    spec.validate(g.rows(), g.cols())?;
    run(g, spec, cfg, steps, replica, None)
}

/// Simulates the SDE restricted to a boundary face: strategies outside `face` stay at 0.
pub fn simulate_face(
    g: &Game,
    spec: &DiffusionSpec,
    cfg: &SdeConfig,
    face: (&SupportSet, &SupportSet),
) -> Result<Trajectory> {
    let steps = cfg.validate(g, spec)?;
    spec.validate(g.rows(), g.cols())?;
    if face.0.dim() != g.rows() || face.1.dim() != g.cols() {
        return Err(Error::dims(
            "face",
            format!("({}, {})", g.rows(), g.cols()),
            format!("({}, {})", face.0.dim(), face.1.dim()),
        ));
    }
    let mx: Vec<bool> = (0..g.rows()).map(|i| face.0.contains(i)).collect();
    let my: Vec<bool> = (0..g.cols()).map(|j| face.1.contains(j)).collect();
    let off_face = |w: &[f64], mask: &[bool]| w.iter().zip(mask).any(|(v, keep)| !keep && *v != 0.0);
    if off_face(cfg.init.x.as_slice(), &mx) || off_face(cfg.init.y.as_slice(), &my) {
        return Err(Error::precondition("initial state is not supported on the face"));
    }
    run(g, spec, cfg, steps, 0, Some((&mx, &my)))
}

fn run(
    g: &Game,
    spec: &DiffusionSpec,
    cfg: &SdeConfig,
    steps: u64,
    replica: u64,
    masks: Option<(&[bool], &[bool])>,
) -> Result<Trajectory> {
    let (n, m) = (g.rows(), g.cols());
    let mut stepper = EmStepper::new(g, spec, cfg.noise, cfg.clamp_eps)?;
    let (kx, ky) = stepper.normals_per_step();
    let reduced = kx < n || ky < m;
    let mut traj = Trajectory::new(
        n,
        m,
        TrajectoryMeta {
            integrator: if reduced { "euler-maruyama-reduced" } else { "euler-maruyama" }.into(),
            dt: cfg.dt,
            t_end: cfg.t_end,
            thin: cfg.thin,
            steps,
            clamp_events: 0,
            seed: Some(cfg.seed),
            replica: Some(replica),
            burn_in: Some(cfg.burn_in),
        },
    );
    let mut noise = NoiseStream::new(cfg.seed, replica);
    let mut draws = vec![0.0; kx + ky];
    let mut x = cfg.init.x.as_slice().to_vec();
    let mut y = cfg.init.y.as_slice().to_vec();
    traj.push(0.0, &x, &y);
    for step in 1..=steps {
        noise.fill_normals(&mut draws);
        let (xi, zeta) = draws.split_at(kx);
        if stepper.step(&mut x, &mut y, cfg.dt, xi, zeta, masks)? {
            traj.meta.clamp_events += 1;
        }
        check_finite(step, &x, &y)?;
        if step % cfg.thin as u64 == 0 || step == steps {
            traj.push(step as f64 * cfg.dt, &x, &y);
        }
    }
    Ok(traj)
}

/// Runs `f` inside a thread pool capped by `REPLAB_THREADS` when that is set.
pub fn with_thread_limit<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let cap = std::env::var("REPLAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0);
    match cap.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

/// Simulates replicas `0..replicas` in parallel and maps each path through `f`,
/// returning results in replica order.
pub fn ensemble_map<R, F>(g: &Game, spec: &DiffusionSpec, cfg: &SdeConfig, replicas: u64, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64, Trajectory) -> R + Sync + Send,
{
    let steps = cfg.validate(g, spec)?;
    spec.validate(g.rows(), g.cols())?;
    with_thread_limit(|| {
        (0..replicas)
            .into_par_iter()
            .map(|r| run(g, spec, cfg, steps, r, None).map(|t| f(r, t)))
            .collect()
    })
}

pub fn simulate_ensemble(g: &Game, spec: &DiffusionSpec, cfg: &SdeConfig, replicas: u64) -> Result<Vec<Trajectory>> {
    ensemble_map(g, spec, cfg, replicas, |_, t| t)
}
