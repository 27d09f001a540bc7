//! Generator of the replicator SDE on weighted log Lyapunov functions
//! `V = -Σ a_i ln x_i - Σ b_j ln y_j`, corner H-exponents and noise conditions.
//!
//! For such `V` the generator contains no logarithms:
//! `LV = -Σ a_i((Ay)_i - xᵀAy) - Σ b_j((Bx)_j - yᵀBx) + ½Σ a_i Σ_k R_ik² + ½Σ b_j Σ_k S_jk²`,
//! so it is defined on the whole closed simplex product.

use serde::{Deserialize, Serialize};

use crate::equilibrium::{maximal_support_equilibrium, EquilibriumReport};
use crate::error::{Error, Result};
use crate::game::{dot, is_anti_equilibrium, is_nash, Game, SimplexPoint, StrategyProfile};
use crate::ode::log_drift;
use crate::sde::{col_noise_matrix, complement, row_noise_matrix, DiffusionSpec, NoiseStream};

/// `|Λ| ≤ LABEL_TOL` is reported as neutral.
pub const LABEL_TOL: f64 = 1e-10;
/// Probe points per free coordinate in face sweeps.
pub const FACE_GRID: usize = 101;
const REF_CHECK_TOL: f64 = 1e-8;

/// Which anti-equilibrium weights enter `V1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum V1Mode {
    /// `-Σ p*_i ln x_i - Σ q*_j ln y_j`.
    Full,
    /// Only the terms outside the equilibrium supports `I`, `J` (stay unbounded on the far face).
    #[default]
    Unused,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LyapunovKind {
    /// Cross entropy with respect to the maximal-support equilibrium.
    CrossEntropy,
    V0,
    V1(V1Mode),
    V2,
    Mixture { alpha: f64, beta: f64, gamma: f64, v1: V1Mode },
}

/// A resolved weighted log Lyapunov function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpec {
    pub name: String,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LyapunovSpec {
    pub fn weights(name: impl Into<String>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.iter().chain(&b).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::precondition("Lyapunov weights must be finite and >= 0"));
        }
        Ok(Self { name: name.into(), a, b })
    }

    /// Cross entropy with respect to `reference`.
    pub fn cross_entropy(reference: &StrategyProfile) -> Self {
        Self {
            name: "V".into(),
            a: reference.x.as_slice().to_vec(),
            b: reference.y.as_slice().to_vec(),
        }
    }

    /// `-ln x_i` (block `'x'`) or `-ln y_j` (block `'y'`), 0-based index.
    pub fn single(n: usize, m: usize, block: char, index: usize) -> Self {
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; m];
        match block {
            'x' => a[index] = 1.0,
            _ => b[index] = 1.0,
        }
        Self {
            name: format!("-ln {block}_{}", index + 1),
            a,
            b,
        }
    }

    pub fn from_report(kind: LyapunovKind, r: &EquilibriumReport) -> Result<Self> {
        let (n, m) = (r.p.dim(), r.q.dim());
        let masked = |w: &SimplexPoint, keep: &dyn Fn(usize) -> bool| -> Vec<f64> {
            w.as_slice().iter().enumerate().map(|(i, v)| if keep(i) { *v } else { 0.0 }).collect()
        };
        Ok(match kind {
            LyapunovKind::CrossEntropy => Self {
                name: "V".into(),
                a: r.p.as_slice().to_vec(),
                b: r.q.as_slice().to_vec(),
            },
            LyapunovKind::V0 => Self {
                name: "V0".into(),
                a: masked(&r.p, &|i| r.row_support.contains(i)),
                b: masked(&r.q, &|j| r.col_support.contains(j)),
            },
            LyapunovKind::V1(V1Mode::Full) => Self {
                name: "V1".into(),
                a: masked(&r.p_star, &|i| r.row_support_anti.contains(i)),
                b: masked(&r.q_star, &|j| r.col_support_anti.contains(j)),
            },
            LyapunovKind::V1(V1Mode::Unused) => Self {
                name: "V1".into(),
                a: masked(&r.p_star, &|i| r.row_support_anti.contains(i) && !r.row_support.contains(i)),
                b: masked(&r.q_star, &|j| r.col_support_anti.contains(j) && !r.col_support.contains(j)),
            },
            LyapunovKind::V2 => {
                let (ti, tj) = r.unused_strategies();
                let mut a = vec![0.0; n];
                let mut b = vec![0.0; m];
                ti.iter().for_each(|i| a[*i] = 1.0);
                tj.iter().for_each(|j| b[*j] = 1.0);
                Self { name: "V2".into(), a, b }
            }
            LyapunovKind::Mixture { alpha, beta, gamma, v1 } => {
                let ws = [alpha, beta, gamma];
                if ws.iter().any(|w| !(0.0..=1.0).contains(w)) || (alpha + beta + gamma - 1.0).abs() > 1e-12 {
                    return Err(Error::precondition(format!(
                        "mixture weights must lie in [0,1] and sum to 1, got {ws:?}"
                    )));
                }
                let (ti, tj) = r.unused_strategies();
                let (alpha, beta, gamma) = if ti.is_empty() && tj.is_empty() && gamma > 0.0 {
                    let s = alpha + beta;
                    if s == 0.0 {
                        return Err(Error::precondition("mixture is pure V2 but there are no unused strategies"));
                    }
                    (alpha / s, beta / s, 0.0)
                } else {
                    (alpha, beta, gamma)
                };
                let parts = [
                    (alpha, Self::from_report(LyapunovKind::V0, r)?),
                    (beta, Self::from_report(LyapunovKind::V1(v1), r)?),
                    (gamma, Self::from_report(LyapunovKind::V2, r)?),
                ];
                let mut a = vec![0.0; n];
                let mut b = vec![0.0; m];
                for (w, part) in &parts {
                    a.iter_mut().zip(&part.a).for_each(|(t, v)| *t += w * v);
                    b.iter_mut().zip(&part.b).for_each(|(t, v)| *t += w * v);
                }
                Self {
                    name: format!("V[{alpha},{beta},{gamma}]"),
                    a,
                    b,
                }
            }
        })
    }

    /// Checks the references a report-derived spec was built from.
    pub fn check_references(g: &Game, r: &EquilibriumReport) -> Result<()> {
        if !is_nash(g, &r.p, &r.q, REF_CHECK_TOL)? {
            return Err(Error::DefinitionalCheck {
                check: "Nash",
                tol: REF_CHECK_TOL,
            });
        }
        if !is_anti_equilibrium(g, &r.p_star, &r.q_star, REF_CHECK_TOL)? {
            return Err(Error::DefinitionalCheck {
                check: "anti-equilibrium",
                tol: REF_CHECK_TOL,
            });
        }
        Ok(())
    }

    /// `V(s)`; diverges when `s` vanishes where a weight is positive.
    pub fn value(&self, s: &StrategyProfile) -> Result<f64> {
        let block = |w: &[f64], v: &[f64], name: char| -> Result<f64> {
            let mut acc = 0.0;
            for (i, (wi, vi)) in w.iter().zip(v).enumerate() {
                if *wi > 0.0 {
                    if *vi < crate::ode::LOG_FLOOR {
                        return Err(Error::DivergedToBoundary {
                            block: name,
                            index: i + 1,
                            value: *vi,
                        });
                    }
                    acc -= wi * vi.ln();
                }
            }
            Ok(acc)
        };
        Ok(block(&self.a, s.x.as_slice(), 'x')? + block(&self.b, s.y.as_slice(), 'y')?)
    }
}

/// `r_i = Σ_k R_ik(x)²` for each row of the noise matrix.
pub fn row_noise_sums(spec: &DiffusionSpec, x: &[f64]) -> Result<Vec<f64>> {
    match spec {
        DiffusionSpec::Diagonal { sigma, .. } => diagonal_sums(sigma, x),
        DiffusionSpec::Custom(_) => Ok(matrix_sums(&row_noise_matrix(spec, x)?)),
    }
}

/// `s_j = Σ_k S_jk(y)²`.
pub fn col_noise_sums(spec: &DiffusionSpec, y: &[f64]) -> Result<Vec<f64>> {
    match spec {
        DiffusionSpec::Diagonal { eta, .. } => diagonal_sums(eta, y),
        DiffusionSpec::Custom(_) => Ok(matrix_sums(&col_noise_matrix(spec, y)?)),
    }
}

fn diagonal_sums(sigma: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if sigma.len() != w.len() {
        return Err(Error::dims("noise intensities", w.len(), sigma.len()));
    }
    let off: Vec<f64> = sigma.iter().zip(w).map(|(s, x)| (s * x).powi(2)).collect();
    Ok((0..w.len())
        .map(|i| {
            let c = complement(w, i);
            let others: f64 = off.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, v)| v).sum();
            (sigma[i] * c).powi(2) + others
        })
        .collect())
}

fn matrix_sums(r: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    r.row_iter().map(|row| row.iter().map(|v| v * v).sum()).collect()
}

/// `L V` at `s`.
pub fn apply_generator(g: &Game, spec: &DiffusionSpec, lyap: &LyapunovSpec, s: &StrategyProfile) -> Result<f64> {
    let drift = log_drift(g, &lyap.a, &lyap.b, s)?;
    let rx = row_noise_sums(spec, s.x.as_slice())?;
    let ry = col_noise_sums(spec, s.y.as_slice())?;
    Ok(drift + 0.5 * (dot(&lyap.a, &rx) + dot(&lyap.b, &ry)))
}

/// Independent route for the diagonal model via `ln x_i = ln z_i - ln Σ z`:
/// `L(-ln x_i) = -(Ay)_i + xᵀAy + ½σ_i²(1 - 2x_i) + ½Σ_k σ_k² x_k²`.
pub fn apply_generator_via_transformed_coords(
    g: &Game,
    spec: &DiffusionSpec,
    lyap: &LyapunovSpec,
    s: &StrategyProfile,
) -> Result<f64> {
    let (sigma, eta) = spec
        .intensities()
        .ok_or_else(|| Error::precondition("transformed-coordinate route needs a diagonal diffusion"))?;
    g.check_profile(s)?;
    spec.check_dims(g.rows(), g.cols())?;
    if !s.is_interior(0.0) {
        return Err(Error::precondition("transformed-coordinate route needs an interior state"));
    }
    let (x, y) = (s.x.as_slice(), s.y.as_slice());
    let block = |w: &[f64], u: &[f64], sig: &[f64], weights: &[f64]| -> f64 {
        let avg = dot(w, u);
        let spread: f64 = sig.iter().zip(w).map(|(s, v)| s * s * v * v).sum();
        weights
            .iter()
            .enumerate()
            .map(|(i, a)| a * (-u[i] + avg + 0.5 * sig[i] * sig[i] * (1.0 - 2.0 * w[i]) + 0.5 * spread))
            .sum()
    };
    Ok(block(x, &g.row_payoffs(y), sigma, &lyap.a) + block(y, &g.col_payoffs(x), eta, &lyap.b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Attracting,
    Repelling,
    Neutral,
}

impl Label {
    /// Label of a measure with H-exponent `lambda`.
    pub fn from_lambda(lambda: f64) -> Self {
        if lambda < -LABEL_TOL {
            Label::Attracting
        } else if lambda > LABEL_TOL {
            Label::Repelling
        } else {
            Label::Neutral
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Attracting => "attracting",
            Label::Repelling => "repelling",
            Label::Neutral => "neutral",
        }
    }
}

/// Behaviour of a corner within the boundary, from the signs of its edge exponents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryType {
    Stable,
    Unstable,
    Saddle,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerEntry {
    /// 1-based strategy indices of the corner `(e_i, e_j)`.
    pub i: usize,
    pub j: usize,
    /// `A11`, `A10`, `A01`, `A00` by membership of `i` in `I` and `j` in `J`; `interior` otherwise.
    pub class: String,
    pub h_v: Option<f64>,
    pub h0: Option<f64>,
    pub h1: Option<f64>,
    pub h2: Option<f64>,
    /// Lyapunov function whose H decides the label.
    pub applied: String,
    pub h: f64,
    pub lambda: f64,
    pub label: Label,
    pub boundary_type: BoundaryType,
}

/// `L(-ln w)` at a corner for the strategy `w` that the edge towards `toward` switches on.
/// Positive: the corner attracts along this edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEntry {
    pub from: (usize, usize),
    pub toward: (usize, usize),
    pub h: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConditions {
    pub applicable: bool,
    pub large: bool,
    pub small: bool,
    pub large_lhs: f64,
    pub large_rhs: f64,
    pub large_margin: f64,
    /// `None` when the minimum runs over an empty set (condition vacuous).
    pub small_lhs: Option<f64>,
    pub small_rhs: f64,
    pub small_margin: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceReport {
    pub grid: usize,
    /// H0 on `{x = e_3}` along the `y_1` grid.
    pub h0_far_face: Vec<f64>,
    pub h0_far_face_max: f64,
    pub far_face_label: Label,
    /// Minimum of H1 over the `{x_3 = 0}` × `y_1` grid.
    pub h1_near_face_min: f64,
    pub h1_lower_bound: f64,
    pub h1_bound_holds: bool,
    pub near_face_label: Label,
    /// Largest deviation between the closed forms of L0, K0, L1, K1 and the generator,
    /// present only for the reference 3×2 matrix with equal column intensities.
    pub closed_form_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub h: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub game: String,
    pub interior: bool,
    pub v1_mode: V1Mode,
    pub corners: Vec<CornerEntry>,
    /// `-inf H` over the corners.
    pub lambda_plus: f64,
    /// `-sup H` over the corners.
    pub lambda_minus: f64,
    pub edges: Vec<EdgeEntry>,
    /// Corners linked by repelling-to-attracting boundary edges, 1-based, first corner not repeated.
    pub cycle: Option<Vec<(usize, usize)>>,
    pub probes: Vec<Probe>,
    pub noise_conditions: Option<NoiseConditions>,
    pub faces: Option<FaceReport>,
    pub notes: Vec<String>,
}

impl GeneratorReport {
    pub fn corner(&self, i: usize, j: usize) -> Option<&CornerEntry> {
        self.corners.iter().find(|c| c.i == i && c.j == j)
    }

    pub fn edge(&self, from: (usize, usize), toward: (usize, usize)) -> Option<&EdgeEntry> {
        self.edges.iter().find(|e| e.from == from && e.toward == toward)
    }
}

/// H-exponents of all corner Dirac measures, with [`V1Mode::Unused`].
pub fn corner_h_exponents(g: &Game, spec: &DiffusionSpec, report: &EquilibriumReport) -> Result<GeneratorReport> {
    corner_h_exponents_with(g, spec, report, V1Mode::Unused)
}

pub fn corner_h_exponents_with(
    g: &Game,
    spec: &DiffusionSpec,
    report: &EquilibriumReport,
    v1_mode: V1Mode,
) -> Result<GeneratorReport> {
    let (n, m) = (g.rows(), g.cols());
    if report.p.dim() != n || report.q.dim() != m {
        return Err(Error::dims(
            "equilibrium report",
            format!("({n}, {m})"),
            format!("({}, {})", report.p.dim(), report.q.dim()),
        ));
    }
    spec.validate(n, m)?;
    LyapunovSpec::check_references(g, report)?;
    let v = LyapunovSpec::from_report(LyapunovKind::CrossEntropy, report)?;
    let v0 = LyapunovSpec::from_report(LyapunovKind::V0, report)?;
    let v1 = LyapunovSpec::from_report(LyapunovKind::V1(v1_mode), report)?;
    let (ti, tj) = report.unused_strategies();
    let v2 = (!ti.is_empty() || !tj.is_empty())
        .then(|| LyapunovSpec::from_report(LyapunovKind::V2, report))
        .transpose()?;
    let mut notes = Vec::new();
    if !report.interior && v1.a.iter().chain(&v1.b).all(|w| *w == 0.0) {
        notes.push("anti-equilibrium support lies inside the equilibrium support; V1 is trivial".into());
    }

    let edges = edge_exponents(g, spec)?;
    let mut corners = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            let c = StrategyProfile::corner(n, m, i, j);
            let at = |l: &LyapunovSpec| apply_generator(g, spec, l, &c);
            let (class, h_v, h0, h1, h2, applied, h) = if report.interior {
                let hv = at(&v)?;
                ("interior".to_string(), Some(hv), None, None, None, "V", hv)
            } else {
                let a = report.row_support.contains(i) as u8;
                let b = report.col_support.contains(j) as u8;
                let h0 = at(&v0)?;
                let h1 = at(&v1)?;
                let h2 = v2.as_ref().map(at).transpose()?;
                let (applied, h) = if a == 1 && b == 1 { ("V1", h1) } else { ("V0", h0) };
                (format!("A{a}{b}"), None, Some(h0), Some(h1), h2, applied, h)
            };
            let lambda = -h;
            let from = (i + 1, j + 1);
            let own: Vec<f64> = edges.iter().filter(|e| e.from == from).map(|e| e.h).collect();
            corners.push(CornerEntry {
                i: i + 1,
                j: j + 1,
                class,
                h_v,
                h0,
                h1,
                h2,
                applied: applied.into(),
                h,
                lambda,
                label: Label::from_lambda(lambda),
                boundary_type: boundary_type(&own),
            });
        }
    }
    let inf = corners.iter().map(|c| c.h).fold(f64::INFINITY, f64::min);
    let sup = corners.iter().map(|c| c.h).fold(f64::NEG_INFINITY, f64::max);
    let cycle = find_cycle(&edges, n, m);
    let probes = probe_points(g, spec, report, &v, &v0, &v1, v2.as_ref())?;
    let noise_conditions = if spec.is_diagonal() {
        Some(check_noise_conditions(g, spec, report)?)
    } else {
        None
    };
    Ok(GeneratorReport {
        game: g.name().to_string(),
        interior: report.interior,
        v1_mode,
        corners,
        lambda_plus: -inf,
        lambda_minus: -sup,
        edges,
        cycle,
        probes,
        noise_conditions,
        faces: None,
        notes,
    })
}

fn boundary_type(hs: &[f64]) -> BoundaryType {
    let pos = hs.iter().filter(|h| **h > LABEL_TOL).count();
    let neg = hs.iter().filter(|h| **h < -LABEL_TOL).count();
    if pos + neg < hs.len() {
        BoundaryType::Degenerate
    } else if neg == 0 {
        BoundaryType::Stable
    } else if pos == 0 {
        BoundaryType::Unstable
    } else {
        BoundaryType::Saddle
    }
}

/// Exponents of every corner along each boundary edge leaving it.
pub fn edge_exponents(g: &Game, spec: &DiffusionSpec) -> Result<Vec<EdgeEntry>> {
    let (n, m) = (g.rows(), g.cols());
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let c = StrategyProfile::corner(n, m, i, j);
            let mut push = |toward: (usize, usize), lyap: LyapunovSpec| -> Result<()> {
                let h = apply_generator(g, spec, &lyap, &c)?;
                out.push(EdgeEntry {
                    from: (i + 1, j + 1),
                    toward,
                    h,
                    label: Label::from_lambda(-h),
                });
                Ok(())
            };
            for k in (0..n).filter(|k| *k != i) {
                push((k + 1, j + 1), LyapunovSpec::single(n, m, 'x', k))?;
            }
            for k in (0..m).filter(|k| *k != j) {
                push((i + 1, k + 1), LyapunovSpec::single(n, m, 'y', k))?;
            }
        }
    }
    Ok(out)
}

/// A directed boundary link `c → c'` exists when `c` repels along the edge and `c'` attracts
/// along it. Returns the first cycle found, rotated to start at its smallest corner.
fn find_cycle(edges: &[EdgeEntry], n: usize, m: usize) -> Option<Vec<(usize, usize)>> {
    let id = |c: (usize, usize)| (c.0 - 1) * m + (c.1 - 1);
    let mut succ = vec![Vec::new(); n * m];
    for e in edges.iter().filter(|e| e.h < -LABEL_TOL) {
        let back = edges.iter().find(|b| b.from == e.toward && b.toward == e.from);
        if back.is_some_and(|b| b.h > LABEL_TOL) {
            succ[id(e.from)].push(e.toward);
        }
    }
    // iterative DFS with colouring
    let mut state = vec![0u8; n * m];
    for start in 0..n * m {
        if state[start] != 0 {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        state[start] = 1;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&to) = succ[node].get(*next) {
                *next += 1;
                let t = id(to);
                match state[t] {
                    0 => {
                        state[t] = 1;
                        stack.push((t, 0));
                    }
                    1 => {
                        let pos = stack.iter().position(|(v, _)| *v == t).unwrap();
                        let mut cyc: Vec<(usize, usize)> =
                            stack[pos..].iter().map(|(v, _)| (v / m + 1, v % m + 1)).collect();
                        let min = (0..cyc.len()).min_by_key(|k| cyc[*k]).unwrap();
                        cyc.rotate_left(min);
                        return Some(cyc);
                    }
                    _ => {}
                }
            } else {
                state[node] = 2;
                stack.pop();
            }
        }
    }
    None
}

fn probe_points(
    g: &Game,
    spec: &DiffusionSpec,
    r: &EquilibriumReport,
    v: &LyapunovSpec,
    v0: &LyapunovSpec,
    v1: &LyapunovSpec,
    v2: Option<&LyapunovSpec>,
) -> Result<Vec<Probe>> {
    let points = [
        ("barycenter", StrategyProfile::barycenter(g.rows(), g.cols())),
        ("equilibrium", StrategyProfile::new(r.p.clone(), r.q.clone())),
        ("anti_equilibrium", StrategyProfile::new(r.p_star.clone(), r.q_star.clone())),
    ];
    let mut lyaps = vec![("H", v), ("H0", v0), ("H1", v1)];
    if let Some(v2) = v2 {
        lyaps.push(("H2", v2));
    }
    points
        .into_iter()
        .map(|(label, s)| {
            let h = lyaps
                .iter()
                .map(|(name, l)| Ok((name.to_string(), apply_generator(g, spec, l, &s)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Probe {
                label: label.into(),
                x: s.x.as_slice().to_vec(),
                y: s.y.as_slice().to_vec(),
                h,
            })
        })
        .collect()
}

/// Large- and small-noise conditions for the diagonal model.
pub fn check_noise_conditions(g: &Game, spec: &DiffusionSpec, r: &EquilibriumReport) -> Result<NoiseConditions> {
    let (sigma, eta) = spec
        .intensities()
        .ok_or_else(|| Error::precondition("noise conditions are stated for the diagonal model"))?;
    spec.check_dims(g.rows(), g.cols())?;
    let (n, m) = (g.rows() as f64, g.cols() as f64);
    let (p, q) = (r.p.as_slice(), r.q.as_slice());
    let ri = r.row_support.indices();
    let rj = r.col_support.indices();
    let ric = r.row_support.complement();
    let rjc = r.col_support.complement();
    let min_sq = |v: &[f64]| v.iter().map(|s| s * s).fold(f64::INFINITY, f64::min);
    let max_sq = |v: &[f64]| v.iter().map(|s| s * s).fold(0.0, f64::max);

    let (ms, me) = (min_sq(sigma), min_sq(eta));
    let mut large_lhs = f64::INFINITY;
    for &i in ri {
        for &j in rj {
            large_lhs = large_lhs.min(p[i] * ms / (2.0 * n) + q[j] * me / (2.0 * m));
        }
    }
    let aq = g.row_payoffs(q);
    let eq_term: f64 = ri.iter().map(|&i| p[i] * aq[i]).sum();
    let col_gain = |i: usize| -> f64 { rj.iter().map(|&j| q[j] * g.b(j, i)).sum() };
    let row_gain = |j: usize| -> f64 { ri.iter().map(|&i| p[i] * g.a(i, j)).sum() };
    let max_or_zero = |v: Vec<f64>| v.into_iter().fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))));
    let large_rhs = eq_term
        + max_or_zero(ric.iter().map(|&i| col_gain(i)).collect()).unwrap_or(0.0)
        + max_or_zero(rjc.iter().map(|&j| row_gain(j)).collect()).unwrap_or(0.0);

    let small_terms: Vec<f64> = ric
        .iter()
        .map(|&i| col_gain(i))
        .chain(rjc.iter().map(|&j| row_gain(j)))
        .collect();
    let small_lhs = small_terms.iter().copied().reduce(f64::min);
    let small_rhs = n * max_sq(sigma) / 2.0 + m * max_sq(eta) / 2.0;

    if r.interior {
        return Ok(NoiseConditions {
            applicable: false,
            large: false,
            small: false,
            large_lhs,
            large_rhs,
            large_margin: large_lhs - large_rhs,
            small_lhs,
            small_rhs,
            small_margin: small_lhs.map(|l| l - small_rhs),
            note: Some("interior equilibrium: every corner is attracting for any positive noise".into()),
        });
    }
    Ok(NoiseConditions {
        applicable: true,
        large: large_lhs > large_rhs,
        small: small_lhs.is_none_or(|l| l > small_rhs),
        large_lhs,
        large_rhs,
        large_margin: large_lhs - large_rhs,
        small_lhs,
        small_rhs,
        small_margin: small_lhs.map(|l| l - small_rhs),
        note: small_lhs
            .is_none()
            .then(|| "no strategies outside the equilibrium support: small-noise condition vacuous".into()),
    })
}

/// Lower bound of `LV` on the boundary for an interior equilibrium in the diagonal model:
/// `min_{i,j} {p_i(min_{k≠i} σ_k²/2n + σ_i²/2), q_j(min_{k≠j} η_k²/2m + η_j²/2)}`.
pub fn interior_boundary_bound(spec: &DiffusionSpec, r: &EquilibriumReport) -> Result<f64> {
    let (sigma, eta) = spec
        .intensities()
        .ok_or_else(|| Error::precondition("bound is stated for the diagonal model"))?;
    let side = |w: &[f64], s: &[f64]| -> f64 {
        let d = w.len() as f64;
        (0..w.len())
            .map(|i| {
                let others = (0..s.len())
                    .filter(|k| *k != i)
                    .map(|k| s[k] * s[k] / (2.0 * d))
                    .fold(f64::INFINITY, f64::min);
                w[i] * (others + s[i] * s[i] / 2.0)
            })
            .fold(f64::INFINITY, f64::min)
    };
    Ok(side(r.p.as_slice(), sigma).min(side(r.q.as_slice(), eta)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegeneratePoint {
    pub block: char,
    /// 1-based row of the noise matrix with vanishing norm.
    pub index: usize,
    pub point: Vec<f64>,
    /// Whether `w_index = 1` there, as the diagonal model requires.
    pub at_vertex: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    /// `min_{i≠j} Σ_k R_ik² + Σ_k R_jk²` over the sampled points of both blocks.
    pub xi_lower_bound: f64,
    pub points_checked: usize,
    pub degenerate_count: usize,
    /// At most 100 degenerate points are kept.
    pub degenerate_points: Vec<DegeneratePoint>,
    pub elliptic: bool,
}

/// Samples the vertices and `samples` uniform points of each simplex.
pub fn check_ellipticity(spec: &DiffusionSpec, n: usize, m: usize, samples: usize, seed: u64) -> Result<EllipticityReport> {
    if samples == 0 {
        return Err(Error::precondition("samples must be at least 1"));
    }
    spec.check_dims(n, m)?;
    let mut rng = NoiseStream::new(seed, 0);
    let mut xi = f64::INFINITY;
    let mut count = 0;
    let mut degenerate = Vec::new();
    let mut degenerate_count = 0;
    let mut consistent = true;
    for (block, dim) in [('x', n), ('y', m)] {
        let pts = (0..dim)
            .map(|k| SimplexPoint::vertex(dim, k))
            .chain((0..samples).map(|_| rng.simplex(dim)))
            .collect::<Vec<_>>();
        for w in pts {
            let w = w.as_slice();
            let r = if block == 'x' {
                row_noise_sums(spec, w)?
            } else {
                col_noise_sums(spec, w)?
            };
            count += 1;
            let mut sorted = r.clone();
            sorted.sort_by(f64::total_cmp);
            xi = xi.min(sorted[0] + sorted[1]);
            for (i, ri) in r.iter().enumerate() {
                if *ri <= 1e-14 {
                    let at_vertex = w[i] >= 1.0 - 1e-12;
                    consistent &= at_vertex;
                    degenerate_count += 1;
                    if degenerate.len() < 100 {
                        degenerate.push(DegeneratePoint {
                            block,
                            index: i + 1,
                            point: w.to_vec(),
                            at_vertex,
                        });
                    }
                }
            }
        }
    }
    Ok(EllipticityReport {
        xi_lower_bound: xi,
        points_checked: count,
        degenerate_count,
        degenerate_points: degenerate,
        elliptic: xi > 0.0 && consistent,
    })
}

/// Face analysis for a 3×2 game whose equilibrium support is `{1,2} × {1,2}`:
/// H0 on `{x = e_3}` and H1 on `{x_3 = 0}`, swept over a 101-point grid per free coordinate.
pub fn classify_3x2_faces(g: &Game, spec: &DiffusionSpec) -> Result<GeneratorReport> {
    if g.rows() != 3 || g.cols() != 2 {
        return Err(Error::dims("face classification", "(3, 2)", format!("({}, {})", g.rows(), g.cols())));
    }
    let (sigma, eta) = spec
        .intensities()
        .ok_or_else(|| Error::precondition("face classification needs a diagonal diffusion"))?;
    let (sigma, eta) = (sigma.to_vec(), eta.to_vec());
    let report = maximal_support_equilibrium(g)?;
    if report.row_support.indices() != [0, 1] || !report.col_support.is_full() {
        return Err(Error::precondition(format!(
            "face classification expects equilibrium support {{1,2}} x {{1,2}}, got {:?} x {:?}",
            report.row_support.one_based(),
            report.col_support.one_based()
        )));
    }
    let mut out = corner_h_exponents_with(g, spec, &report, V1Mode::Unused)?;
    let v0 = LyapunovSpec::from_report(LyapunovKind::V0, &report)?;
    let v1 = LyapunovSpec::from_report(LyapunovKind::V1(V1Mode::Unused), &report)?;
    let grid: Vec<f64> = (0..FACE_GRID).map(|k| k as f64 / (FACE_GRID - 1) as f64).collect();
    let prof = |x1: f64, x2: f64, x3: f64, y1: f64| {
        StrategyProfile::new(
            SimplexPoint::from_raw(vec![x1, x2, x3]),
            SimplexPoint::from_raw(vec![y1, 1.0 - y1]),
        )
    };

    let h0_far: Vec<f64> = grid
        .iter()
        .map(|y1| apply_generator(g, spec, &v0, &prof(0.0, 0.0, 1.0, *y1)))
        .collect::<Result<_>>()?;
    let h0_max = h0_far.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut h1_min = f64::INFINITY;
    for x1 in &grid {
        for y1 in &grid {
            h1_min = h1_min.min(apply_generator(g, spec, &v1, &prof(*x1, 1.0 - x1, 0.0, *y1))?);
        }
    }
    let bound = 1.0 + sigma[2] * sigma[2] / 2.0 + sigma[0].powi(2).min(sigma[1].powi(2)) / 4.0;

    let reference = [[1.0, -1.0], [-1.0, 1.0], [-2.0, -2.0]];
    let is_reference = (0..3).all(|i| (0..2).all(|j| g.a(i, j) == reference[i][j]));
    let closed_form_deviation = if is_reference && eta[0] == eta[1] {
        let mut dev: f64 = 0.0;
        let mut rng = NoiseStream::new(0xface, 0);
        let mut pts = Vec::new();
        for x1 in &grid {
            for y1 in &grid {
                pts.push(prof(*x1, 1.0 - x1, 0.0, *y1));
            }
        }
        pts.extend(grid.iter().map(|y1| prof(0.0, 0.0, 1.0, *y1)));
        pts.extend((0..1000).map(|_| rng.profile(3, 2)));
        for s in &pts {
            let (cf0, cf1) = closed_forms_3x2(&sigma, eta[0], s);
            dev = dev.max((apply_generator(g, spec, &v0, s)? - cf0).abs());
            dev = dev.max((apply_generator(g, spec, &v1, s)? - cf1).abs());
        }
        Some(dev)
    } else {
        None
    };

    out.faces = Some(FaceReport {
        grid: FACE_GRID,
        h0_far_face: h0_far,
        h0_far_face_max: h0_max,
        far_face_label: Label::from_lambda(-h0_max),
        h1_near_face_min: h1_min,
        h1_lower_bound: bound,
        h1_bound_holds: h1_min >= bound - LABEL_TOL,
        near_face_label: Label::from_lambda(-h1_min),
        closed_form_deviation,
    });
    Ok(out)
}

/// `(L0 + K0, L1 + K1)` for the reference 3×2 game, written out term by term.
fn closed_forms_3x2(sigma: &[f64], eta: f64, s: &StrategyProfile) -> (f64, f64) {
    let (x1, x2, x3) = (s.x[0], s.x[1], s.x[2]);
    let y1 = s.y[0];
    let sq = |v: f64| v * v;
    let (s1, s2, s3) = (sq(sigma[0]), sq(sigma[1]), sq(sigma[2]));
    // the row block alone gives -2x3 + (x1 - x2)(2y1 - 1); the column block cancels the second term
    let l0 = -2.0 * x3;
    let k0 = 0.5
        * (s1 / 2.0 * sq(1.0 - x1)
            + s2 / 2.0 * sq(x2)
            + s3 / 2.0 * sq(x3)
            + s2 / 2.0 * sq(1.0 - x2)
            + s1 / 2.0 * sq(x1)
            + s3 / 2.0 * sq(x3))
        + sq(eta) / 2.0 * sq(y1)
        + sq(eta) / 2.0 * sq(1.0 - y1);
    let l1 = 2.0 * (1.0 - x3) + x2 * (1.0 - 2.0 * y1) + x1 * (2.0 * y1 - 1.0);
    let k1 = s3 / 2.0 * sq(1.0 - x3) + s2 / 2.0 * sq(x2) + s1 / 2.0 * sq(x1);
    (l0 + k0, l1 + k1)
}

/// Bisection for a sign change of `f` on `[lo, hi]`, to an interval narrower than `tol`.
pub fn bisect_sign_change(f: impl Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut flo = f(lo)?;
    let fhi = f(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::precondition(format!("no sign change on [{lo}, {hi}]")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::lyapunov_time_derivative;

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
    fn matching_pennies_closed_form() {
        let (s, e) = (0.2, 0.3);
        let spec = DiffusionSpec::reduced(s, e).unwrap();
        let v = LyapunovSpec::cross_entropy(&StrategyProfile::barycenter(2, 2));
        for (x, y) in [(0.5, 0.5), (0.1, 0.8), (0.0, 1.0), (0.37, 0.0)] {
            let st = prof(&[x, 1.0 - x], &[y, 1.0 - y]);
            let want = s * s / 4.0 * ((1.0 - x).powi(2) + x * x) + e * e / 4.0 * ((1.0 - y).powi(2) + y * y);
            assert!((apply_generator(&mp(), &spec, &v, &st).unwrap() - want).abs() < 1e-15);
        }
        let spec = DiffusionSpec::reduced(0.2, 0.2).unwrap();
        let c = StrategyProfile::barycenter(2, 2);
        assert!((apply_generator(&mp(), &spec, &v, &c).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_is_the_flow_derivative() {
        let r = prof(&[0.5, 0.5, 0.0], &[0.5, 0.5]);
        let s = prof(&[0.2, 0.3, 0.5], &[0.9, 0.1]);
        let v = LyapunovSpec::cross_entropy(&r);
        let z = DiffusionSpec::zero(3, 2);
        assert_eq!(
            apply_generator(&g32(), &z, &v, &s).unwrap(),
            lyapunov_time_derivative(&g32(), &r, &s).unwrap()
        );
        let t = apply_generator_via_transformed_coords(&g32(), &z, &v, &s).unwrap();
        assert!((t - lyapunov_time_derivative(&g32(), &r, &s).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn transformed_route_agrees() {
        let spec = DiffusionSpec::uniform(3, 2, 0.2, 0.2).unwrap();
        let v = LyapunovSpec::cross_entropy(&prof(&[0.5, 0.5, 0.0], &[0.5, 0.5]));
        let s = prof(&[0.2, 0.3, 0.5], &[0.6, 0.4]);
        let a = apply_generator(&g32(), &spec, &v, &s).unwrap();
        let b = apply_generator_via_transformed_coords(&g32(), &spec, &v, &s).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
        let edge = prof(&[0.0, 0.5, 0.5], &[0.6, 0.4]);
        assert!(apply_generator_via_transformed_coords(&g32(), &spec, &v, &edge).is_err());
    }

    #[test]
    fn matching_pennies_corners_and_cycle() {
        let g = mp();
        let spec = DiffusionSpec::reduced(0.2, 0.2).unwrap();
        let rep = maximal_support_equilibrium(&g).unwrap();
        let out = corner_h_exponents(&g, &spec, &rep).unwrap();
        for c in &out.corners {
            assert!((c.h - 0.02).abs() < 1e-15);
            assert_eq!(c.label, Label::Attracting);
            assert_eq!(c.boundary_type, BoundaryType::Saddle);
        }
        // face {x1 = 0}: corner (e2, e2) towards y1, corner (e2, e1) towards y2
        let h00 = out.edge((2, 2), (2, 1)).unwrap().h;
        let h01 = out.edge((2, 1), (2, 2)).unwrap().h;
        assert!((h00 - (-2.0 + 0.02)).abs() < 1e-15);
        assert!((h01 - (2.0 + 0.02)).abs() < 1e-15);
        assert_eq!(out.cycle.as_ref().unwrap().len(), 4);
        assert!(out.lambda_plus >= out.lambda_minus);
    }

    #[test]
    fn three_by_two_corners() {
        let g = g32();
        let spec = DiffusionSpec::uniform(3, 2, 0.2, 0.2).unwrap();
        let rep = maximal_support_equilibrium(&g).unwrap();
        let out = corner_h_exponents(&g, &spec, &rep).unwrap();
        for c in &out.corners {
            if c.i == 3 {
                assert_eq!(c.class, "A01");
                assert_eq!(c.label, Label::Repelling);
            } else {
                assert_eq!(c.class, "A11");
                assert_eq!(c.label, Label::Attracting);
            }
        }
        let v1 = LyapunovSpec::from_report(LyapunovKind::V1(V1Mode::Unused), &rep).unwrap();
        assert_eq!(v1.a, vec![0.0, 0.0, 1.0]);
        assert_eq!(v1.b, vec![0.0, 0.0]);
        let full = LyapunovSpec::from_report(LyapunovKind::V1(V1Mode::Full), &rep).unwrap();
        assert_eq!(full.b, vec![0.5, 0.5]);
    }

    #[test]
    fn noise_condition_examples() {
        let g = g32();
        let rep = maximal_support_equilibrium(&g).unwrap();
        let at = |s: f64| check_noise_conditions(&g, &DiffusionSpec::uniform(3, 2, s, s).unwrap(), &rep).unwrap();
        let c = at(0.2);
        assert!(c.small && !c.large);
        assert!((c.small_margin.unwrap() - 1.9).abs() < 1e-12);
        let c = at(4.0);
        assert!(c.large);
        assert!((c.large_lhs - 10.0 / 3.0).abs() < 1e-12 && (c.large_rhs - 2.0).abs() < 1e-12);
        let c = at(1.5);
        assert!(!c.large && !c.small);
    }

    #[test]
    fn ellipticity() {
        let spec = DiffusionSpec::uniform(2, 2, 0.2, 0.2).unwrap();
        let r = check_ellipticity(&spec, 2, 2, 200, 1).unwrap();
        assert!(r.xi_lower_bound > 0.0 && r.elliptic);
        assert!(r.degenerate_points.iter().all(|d| d.at_vertex));
        let zero: crate::sde::NoiseFn = std::sync::Arc::new(|w: &[f64]| nalgebra::DMatrix::zeros(w.len(), w.len()));
        let spec = DiffusionSpec::custom("zero", zero.clone(), zero);
        let r = check_ellipticity(&spec, 2, 3, 50, 1).unwrap();
        assert_eq!(r.xi_lower_bound, 0.0);
        assert!(!r.elliptic);
    }

    #[test]
    fn faces_of_the_3x2_game() {
        let g = g32();
        let out = classify_3x2_faces(&g, &DiffusionSpec::uniform(3, 2, 0.2, 0.2).unwrap()).unwrap();
        let f = out.faces.unwrap();
        assert!(f.h1_bound_holds && f.h1_lower_bound >= 1.03 - 1e-15);
        assert_eq!(f.near_face_label, Label::Attracting);
        assert_eq!(f.far_face_label, Label::Repelling);
        assert!(f.closed_form_deviation.unwrap() < 1e-13);
        let out = classify_3x2_faces(&g, &DiffusionSpec::uniform(3, 2, 0.5, 0.5).unwrap()).unwrap();
        assert!(out.faces.unwrap().h0_far_face_max < 0.0);
        assert!(classify_3x2_faces(&mp(), &DiffusionSpec::reduced(0.2, 0.2).unwrap()).is_err());
    }

    #[test]
    fn bisection_finds_root() {
        let r = bisect_sign_change(|x| Ok(x * x - 2.0), 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
        assert!(bisect_sign_change(|x| Ok(x * x + 1.0), 0.0, 2.0, 1e-14).is_err());
    }

    #[test]
    fn mixture_drops_v2_without_unused_strategies() {
        let rep = maximal_support_equilibrium(&g32()).unwrap();
        let kind = LyapunovKind::Mixture {
            alpha: 0.25,
            beta: 0.25,
            gamma: 0.5,
            v1: V1Mode::Unused,
        };
        let l = LyapunovSpec::from_report(kind, &rep).unwrap();
        for (a, b) in l.a.iter().zip([0.25, 0.25, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(LyapunovSpec::from_report(
            LyapunovKind::Mixture {
                alpha: 0.5,
                beta: 0.6,
                gamma: 0.0,
                v1: V1Mode::Full
            },
            &rep
        )
        .is_err());
    }
}
