//! Deterministic replicator flow and the cross-entropy Lyapunov quantities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Game, SimplexPoint, StrategyProfile};

/// Components below this value on a reference support make `ln` diverge.
pub const LOG_FLOOR: f64 = 1e-300;

/// Excess payoffs `out_i = u_i - wᵀu`, evaluated as `Σ_k w_k (u_i - u_k)`,
/// which keeps full relative precision near the vertices of the simplex.
#[inline]
pub(crate) fn excess_into(w: &[f64], u: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let ui = u[i];
        *o = w
            .iter()
            .zip(u)
            .enumerate()
            .filter(|(k, _)| *k != i)
            .map(|(_, (wk, uk))| wk * (ui - uk))
            .sum();
    }
}

/// Replicator vector field `dx_i = x_i((Ay)_i - xᵀAy)`, `dy_j = y_j((Bx)_j - yᵀBx)`.
pub fn replicator_field(g: &Game, s: &StrategyProfile) -> Result<(Vec<f64>, Vec<f64>)> {
    g.check_profile(s)?;
    let mut buf = FieldBuffers::new(g.rows(), g.cols());
    let mut dx = vec![0.0; g.rows()];
    let mut dy = vec![0.0; g.cols()];
    buf.field(g, s.x.as_slice(), s.y.as_slice(), &mut dx, &mut dy);
    Ok((dx, dy))
}

/// Scratch space for evaluating the replicator field without allocating.
#[derive(Debug, Clone)]
pub(crate) struct FieldBuffers {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub ex: Vec<f64>,
    pub ey: Vec<f64>,
}

impl FieldBuffers {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            u: vec![0.0; n],
            v: vec![0.0; m],
            ex: vec![0.0; n],
            ey: vec![0.0; m],
        }
    }

    /// Fills `ex`, `ey` with the excess payoffs at `(x, y)`.
    #[inline]
    pub fn excess(&mut self, g: &Game, x: &[f64], y: &[f64]) {
        g.row_payoffs_into(y, &mut self.u);
        g.col_payoffs_into(x, &mut self.v);
        excess_into(x, &self.u, &mut self.ex);
        excess_into(y, &self.v, &mut self.ey);
    }

    #[inline]
    pub fn field(&mut self, g: &Game, x: &[f64], y: &[f64], dx: &mut [f64], dy: &mut [f64]) {
        self.excess(g, x, y);
        for ((d, xi), e) in dx.iter_mut().zip(x).zip(&self.ex) {
            *d = xi * e;
        }
        for ((d, yj), e) in dy.iter_mut().zip(y).zip(&self.ey) {
            *d = yj * e;
        }
    }
}

/// Drift part of the generator applied to `-Σ a_i ln x_i - Σ b_j ln y_j`:
/// `-Σ a_i((Ay)_i - xᵀAy) - Σ b_j((Bx)_j - yᵀBx)`. Defined on the closed simplex.
pub fn log_drift(g: &Game, a: &[f64], b: &[f64], s: &StrategyProfile) -> Result<f64> {
    g.check_profile(s)?;
    if a.len() != g.rows() || b.len() != g.cols() {
        return Err(Error::dims(
            "Lyapunov weights",
            format!("({}, {})", g.rows(), g.cols()),
            format!("({}, {})", a.len(), b.len()),
        ));
    }
    let mut buf = FieldBuffers::new(g.rows(), g.cols());
    buf.excess(g, s.x.as_slice(), s.y.as_slice());
    Ok(-weighted(a, &buf.ex) - weighted(b, &buf.ey))
}

#[inline]
fn weighted(w: &[f64], e: &[f64]) -> f64 {
    w.iter().zip(e).map(|(w, e)| w * e).sum()
}

/// Time derivative of the cross entropy w.r.t. `reference` along the flow.
pub fn lyapunov_time_derivative(g: &Game, reference: &StrategyProfile, s: &StrategyProfile) -> Result<f64> {
    g.check_profile(reference)?;
    log_drift(g, reference.x.as_slice(), reference.y.as_slice(), s)
}

/// `V = -Σ p_i ln x_i - Σ q_j ln y_j`, summed over the support of the reference.
pub fn cross_entropy(reference: &StrategyProfile, s: &StrategyProfile) -> Result<f64> {
    if reference.x.dim() != s.x.dim() || reference.y.dim() != s.y.dim() {
        return Err(Error::dims(
            "cross entropy",
            format!("({}, {})", reference.x.dim(), reference.y.dim()),
            format!("({}, {})", s.x.dim(), s.y.dim()),
        ));
    }
    Ok(block_cross_entropy('x', &reference.x, &s.x)? + block_cross_entropy('y', &reference.y, &s.y)?)
}

fn block_cross_entropy(block: char, p: &SimplexPoint, x: &SimplexPoint) -> Result<f64> {
    let mut acc = 0.0;
    for (i, (pi, xi)) in p.as_slice().iter().zip(x.as_slice()).enumerate() {
        if *pi > 0.0 {
            if *xi < LOG_FLOOR {
                return Err(Error::DivergedToBoundary {
                    block,
                    index: i + 1,
                    value: *xi,
                });
            }
            acc -= pi * xi.ln();
        }
    }
    Ok(acc)
}

/// Shannon entropy of both blocks of `reference`.
pub fn entropy(reference: &StrategyProfile) -> f64 {
    let h = |w: &SimplexPoint| -> f64 {
        w.as_slice()
            .iter()
            .filter(|v| **v > 0.0)
            .map(|v| -v * v.ln())
            .sum()
    };
    h(&reference.x) + h(&reference.y)
}

/// `D_KL(p‖x) + D_KL(q‖y)`.
pub fn kl_sum(reference: &StrategyProfile, s: &StrategyProfile) -> Result<f64> {
    Ok(cross_entropy(reference, s)? - entropy(reference))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeConfig {
    pub dt: f64,
    pub t_end: f64,
    pub init: StrategyProfile,
    /// Record every `thin`-th step (the final step is always recorded).
    pub thin: usize,
    /// Clamp negative components and renormalize after each step.
    pub renorm: bool,
    /// Reject initial states with a component below `1e-12`.
    pub interior: bool,
}

impl OdeConfig {
    pub fn new(init: StrategyProfile, t_end: f64) -> Self {
        Self {
            dt: 1e-3,
            t_end,
            init,
            thin: 10,
            renorm: true,
            interior: false,
        }
    }

    pub fn validate(&self, g: &Game) -> Result<()> {
        g.check_profile(&self.init)?;
        validate_clock(self.dt, self.t_end, self.thin)?;
        if self.interior && !self.init.is_interior(1e-12) {
            return Err(Error::precondition("interior run requires all initial components >= 1e-12"));
        }
        Ok(())
    }
}

pub(crate) fn validate_clock(dt: f64, t_end: f64, thin: usize) -> Result<u64> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::precondition(format!("dt must be positive, got {dt}")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) || dt > t_end {
        return Err(Error::precondition(format!("need 0 < dt <= t_end, got dt={dt}, t_end={t_end}")));
    }
    if thin == 0 {
        return Err(Error::precondition("thin must be at least 1"));
    }
    Ok(step_count(dt, t_end))
}

pub(crate) fn step_count(dt: f64, t_end: f64) -> u64 {
    ((t_end / dt).round() as u64).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub integrator: String,
    pub dt: f64,
    pub t_end: f64,
    pub thin: usize,
    pub steps: u64,
    /// Steps after which at least one component had to be clamped.
    pub clamp_events: u64,
    pub seed: Option<u64>,
    pub replica: Option<u64>,
    pub burn_in: Option<f64>,
}

impl TrajectoryMeta {
    pub fn clamp_rate(&self) -> f64 {
        self.clamp_events as f64 / self.steps.max(1) as f64
    }
}

/// Time-stamped states of a run, stored as flat row-major blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    m: usize,
    times: Vec<f64>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn new(n: usize, m: usize, meta: TrajectoryMeta) -> Self {
        Self {
            n,
            m,
            times: Vec::new(),
            xs: Vec::new(),
            ys: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, t: f64, x: &[f64], y: &[f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.m);
        self.times.push(t);
        self.xs.extend_from_slice(x);
        self.ys.extend_from_slice(y);
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn x(&self, k: usize) -> &[f64] {
        &self.xs[k * self.n..(k + 1) * self.n]
    }

    pub fn y(&self, k: usize) -> &[f64] {
        &self.ys[k * self.m..(k + 1) * self.m]
    }

    pub fn profile(&self, k: usize) -> StrategyProfile {
        StrategyProfile::new(
            SimplexPoint::from_raw(self.x(k).to_vec()),
            SimplexPoint::from_raw(self.y(k).to_vec()),
        )
    }

    pub fn last_profile(&self) -> Option<StrategyProfile> {
        (!self.is_empty()).then(|| self.profile(self.len() - 1))
    }

    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

/// Projects onto the closed simplex: components below `floor` are raised to
/// `floor` (or zeroed when `floor == 0`), then the vector is renormalized.
/// Returns whether anything was clamped.
#[inline]
pub(crate) fn project(w: &mut [f64], floor: f64) -> bool {
    let mut clamped = false;
    for v in w.iter_mut() {
        if *v < floor {
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

/// Classical fourth-order Runge–Kutta integration of the replicator flow.
pub fn integrate_ode(g: &Game, cfg: &OdeConfig) -> Result<Trajectory> {
    cfg.validate(g)?;
    let (n, m) = (g.rows(), g.cols());
    let steps = step_count(cfg.dt, cfg.t_end);
    let mut traj = Trajectory::new(
        n,
        m,
        TrajectoryMeta {
            integrator: "rk4".into(),
            dt: cfg.dt,
            t_end: cfg.t_end,
            thin: cfg.thin,
            steps,
            clamp_events: 0,
            seed: None,
            replica: None,
            burn_in: None,
        },
    );
    let mut buf = FieldBuffers::new(n, m);
    let mut x = cfg.init.x.as_slice().to_vec();
    let mut y = cfg.init.y.as_slice().to_vec();
    let mut stage = RkStages::new(n, m);
    traj.push(0.0, &x, &y);
    let h = cfg.dt;
    for step in 1..=steps {
        stage.step(g, &mut buf, &mut x, &mut y, h);
        if cfg.renorm && (project(&mut x, 0.0) | project(&mut y, 0.0)) {
            traj.meta.clamp_events += 1;
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step,
                snapshot: format!("x={x:?} y={y:?}"),
            });
        }
        if step % cfg.thin as u64 == 0 || step == steps {
            traj.push(step as f64 * h, &x, &y);
        }
    }
    Ok(traj)
}

struct RkStages {
    k: [(Vec<f64>, Vec<f64>); 4],
    tx: Vec<f64>,
    ty: Vec<f64>,
}

impl RkStages {
    fn new(n: usize, m: usize) -> Self {
        let pair = || (vec![0.0; n], vec![0.0; m]);
        Self {
            k: [pair(), pair(), pair(), pair()],
            tx: vec![0.0; n],
            ty: vec![0.0; m],
        }
    }

    fn step(&mut self, g: &Game, buf: &mut FieldBuffers, x: &mut [f64], y: &mut [f64], h: f64) {
        let weights = [0.0, 0.5, 0.5, 1.0];
        for s in 0..4 {
            if s == 0 {
                self.tx.copy_from_slice(x);
                self.ty.copy_from_slice(y);
            } else {
                let (px, py) = &self.k[s - 1];
                for i in 0..x.len() {
                    self.tx[i] = x[i] + weights[s] * h * px[i];
                }
                for j in 0..y.len() {
                    self.ty[j] = y[j] + weights[s] * h * py[j];
                }
            }
            let (kx, ky) = &mut self.k[s];
            buf.field(g, &self.tx, &self.ty, kx, ky);
        }
        let [(k1x, k1y), (k2x, k2y), (k3x, k3y), (k4x, k4y)] = &self.k;
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
        }
        for j in 0..y.len() {
            y[j] += h / 6.0 * (k1y[j] + 2.0 * k2y[j] + 2.0 * k3y[j] + k4y[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mp() -> Game {
        Game::new("mp", vec![vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap()
    }

    fn g32() -> Game {
        Game::new("3x2", vec![vec![1.0, -1.0], vec![-1.0, 1.0], vec![-2.0, -2.0]]).unwrap()
    }

    fn prof(x: &[f64], y: &[f64]) -> StrategyProfile {
        StrategyProfile::from_vecs(x.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn field_vanishes_at_equilibrium_and_corners() {
        let (dx, dy) = replicator_field(&mp(), &prof(&[0.5, 0.5], &[0.5, 0.5])).unwrap();
        assert!(dx.iter().chain(&dy).all(|v| *v == 0.0));
        for i in 0..3 {
            for j in 0..2 {
                let (dx, dy) = replicator_field(&g32(), &StrategyProfile::corner(3, 2, i, j)).unwrap();
                assert!(dx.iter().chain(&dy).all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn field_matches_reduced_matching_pennies() {
        let (dx, dy) = replicator_field(&mp(), &prof(&[0.9, 0.1], &[0.9, 0.1])).unwrap();
        assert!((dx[0] - 0.144).abs() < 1e-12);
        assert!((dy[0] + 0.144).abs() < 1e-12);
        assert!((dx[0] + dx[1]).abs() < 1e-12);
        assert!((dy[0] + dy[1]).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        let r = prof(&[0.5, 0.5], &[0.5, 0.5]);
        assert!((cross_entropy(&r, &r).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        let s = prof(&[0.9, 0.1], &[0.5, 0.5]);
        let expected = -0.5 * (0.9f64.ln() + 0.1f64.ln()) + 2f64.ln();
        assert!((cross_entropy(&r, &s).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1.897120).abs() < 1e-6);
        assert!((kl_sum(&r, &s).unwrap() - 0.510826).abs() < 1e-6);
        assert!(kl_sum(&r, &r).unwrap().abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_diverges_on_reference_support() {
        let r = prof(&[0.5, 0.5], &[0.5, 0.5]);
        let s = prof(&[0.0, 1.0], &[0.5, 0.5]);
        assert!(matches!(
            cross_entropy(&r, &s),
            Err(Error::DivergedToBoundary { block: 'x', index: 1, .. })
        ));
        // zero off the reference support is fine
        let r = prof(&[0.0, 1.0], &[0.5, 0.5]);
        assert!(cross_entropy(&r, &s).is_ok());
    }

    #[test]
    fn lyapunov_derivative_signs() {
        let s = prof(&[0.2, 0.3, 0.5], &[0.7, 0.3]);
        let eq = prof(&[0.5, 0.5, 0.0], &[0.5, 0.5]);
        let anti = prof(&[0.0, 0.0, 1.0], &[0.5, 0.5]);
        assert!(lyapunov_time_derivative(&g32(), &eq, &s).unwrap() < 0.0);
        assert!(lyapunov_time_derivative(&g32(), &anti, &s).unwrap() > 0.0);
        let r = prof(&[0.5, 0.5], &[0.5, 0.5]);
        let s = prof(&[0.8, 0.2], &[0.35, 0.65]);
        assert!(lyapunov_time_derivative(&mp(), &r, &s).unwrap().abs() < 1e-15);
    }

    #[test]
    fn zero_game_is_static() {
        let g = Game::new("zero", vec![vec![0.0; 3]; 2]).unwrap();
        let init = prof(&[0.3, 0.7], &[0.2, 0.3, 0.5]);
        let mut cfg = OdeConfig::new(init.clone(), 1.0);
        cfg.dt = 0.01;
        let traj = integrate_ode(&g, &cfg).unwrap();
        assert_eq!(traj.last_profile().unwrap(), init);
        assert_eq!(traj.times()[0], 0.0);
        assert!((traj.end_time() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let init = prof(&[1.0, 0.0], &[0.5, 0.5]);
        let mut cfg = OdeConfig::new(init, 1.0);
        cfg.interior = true;
        assert!(integrate_ode(&mp(), &cfg).is_err());
        cfg.interior = false;
        cfg.dt = 2.0;
        assert!(integrate_ode(&mp(), &cfg).is_err());
        cfg.dt = 0.1;
        cfg.thin = 0;
        assert!(integrate_ode(&mp(), &cfg).is_err());
    }
}
