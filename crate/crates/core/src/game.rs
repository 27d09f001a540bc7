//! Zero-sum games, simplex points and the pointwise definitional checks
//! (zero-sum payoffs, Nash equilibria, anti-equilibria, supports).
//!
//! The column player's payoff matrix `B = -Aᵀ` is never stored; every access
//! goes through [`Game::b`], so the zero-sum identity holds by construction.

use nalgebra::DMatrix;
use serde::ser::SerializeStruct;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default threshold for "played with positive probability".
pub const DEFAULT_SUPPORT_TOL: f64 = 1e-9;

/// Tolerance within which a probability vector is renormalized instead of rejected.
pub const SIMPLEX_SUM_TOL: f64 = 1e-9;

/// Two-player zero-sum matrix game, `A` is the payoff to the row player.
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    name: String,
    rows: usize,
    cols: usize,
    // row-major
    a: Vec<f64>,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
}

impl Game {
    pub fn new(name: impl Into<String>, a: Vec<Vec<f64>>) -> Result<Self> {
        let rows = a.len();
        let cols = a.first().map_or(0, Vec::len);
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidGame(format!(
                "payoff matrix must be at least 2x2, got {rows}x{cols}"
            )));
        }
        let mut flat = Vec::with_capacity(rows * cols);
        for (i, row) in a.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::InvalidGame(format!(
                    "row {} has {} entries, expected {cols}",
                    i + 1,
                    row.len()
                )));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidGame(format!(
                    "entry ({}, {}) is not finite",
                    i + 1,
                    j + 1
                )));
            }
            flat.extend_from_slice(row);
        }
        Ok(Self {
            name: name.into(),
            rows,
            cols,
            a: flat,
            row_labels: default_labels('r', rows),
            col_labels: default_labels('c', cols),
        })
    }

    pub fn from_matrix(name: impl Into<String>, a: &DMatrix<f64>) -> Result<Self> {
        let rows = (0..a.nrows())
            .map(|i| a.row(i).iter().copied().collect())
            .collect();
        Self::new(name, rows)
    }

    pub fn with_labels(mut self, row_labels: Vec<String>, col_labels: Vec<String>) -> Result<Self> {
        if row_labels.len() != self.rows {
            return Err(Error::dims("row labels", self.rows, row_labels.len()));
        }
        if col_labels.len() != self.cols {
            return Err(Error::dims("column labels", self.cols, col_labels.len()));
        }
        self.row_labels = row_labels;
        self.col_labels = col_labels;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of row-player strategies `n`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of column-player strategies `m`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    #[inline]
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.cols + j]
    }

    /// Entry `B_{j,i}` of the column player's matrix, `-A_{i,j}`.
    #[inline]
    pub fn b(&self, j: usize, i: usize) -> f64 {
        -self.a[i * self.cols + j]
    }

    pub fn a_rows(&self) -> Vec<Vec<f64>> {
        self.a.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.a)
    }

    pub fn b_matrix(&self) -> DMatrix<f64> {
        -self.a_matrix().transpose()
    }

    /// The game with payoffs `-A` (and hence `-B`); its equilibria are the
    /// anti-equilibria of `self`.
    pub fn negated(&self) -> Game {
        Game {
            name: format!("negated({})", self.name),
            a: self.a.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }

    /// `out = A y`, the row player's pure-strategy payoffs.
    #[inline]
    pub fn row_payoffs_into(&self, y: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.a[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(y).map(|(a, y)| a * y).sum();
        }
    }

    /// `out = B x = -Aᵀ x`, the column player's pure-strategy payoffs.
    #[inline]
    pub fn col_payoffs_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, xi) in x.iter().enumerate() {
            let row = &self.a[i * self.cols..(i + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o -= a * xi;
            }
        }
    }

    pub fn row_payoffs(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.row_payoffs_into(y, &mut out);
        out
    }

    pub fn col_payoffs(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.col_payoffs_into(x, &mut out);
        out
    }

    pub(crate) fn check_profile(&self, s: &StrategyProfile) -> Result<()> {
        self.check_pair(&s.x, &s.y)
    }

    pub(crate) fn check_pair(&self, x: &SimplexPoint, y: &SimplexPoint) -> Result<()> {
        if x.dim() != self.rows || y.dim() != self.cols {
            return Err(Error::dims(
                "strategy profile",
                format!("({}, {})", self.rows, self.cols),
                format!("({}, {})", x.dim(), y.dim()),
            ));
        }
        Ok(())
    }
}

fn default_labels(prefix: char, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

/// A point of the closed probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct SimplexPoint(Vec<f64>);

impl From<SimplexPoint> for Vec<f64> {
    fn from(p: SimplexPoint) -> Self {
        p.0
    }
}

/// Checks the simplex constraints but keeps the stored bits, so serialized points read back unchanged.
impl TryFrom<Vec<f64>> for SimplexPoint {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if w.is_empty() || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::InvalidSimplex(format!("{w:?}")));
        }
        Ok(SimplexPoint(w))
    }
}

impl SimplexPoint {
    /// Accepts non-negative finite weights summing to 1 within
    /// [`SIMPLEX_SUM_TOL`] and renormalizes them exactly.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidSimplex("empty vector".into()));
        }
        if let Some(i) = w.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidSimplex(format!(
                "component {} = {} is negative or not finite",
                i + 1,
                w[i]
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::InvalidSimplex(format!(
                "components sum to {sum}, outside 1 ± {SIMPLEX_SUM_TOL:e}"
            )));
        }
        Ok(Self::normalized(w))
    }

    /// Normalizes arbitrary non-negative weights with a positive sum.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidSimplex("weights must be finite and non-negative".into()));
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidSimplex("weights sum to zero".into()));
        }
        Ok(Self::normalized(w))
    }

    pub(crate) fn normalized(mut w: Vec<f64>) -> Self {
        let sum: f64 = w.iter().sum();
        if sum != 1.0 {
            w.iter_mut().for_each(|v| *v /= sum);
        }
        Self(w)
    }

    pub(crate) fn from_raw(w: Vec<f64>) -> Self {
        Self(w)
    }

    pub fn vertex(dim: usize, i: usize) -> Self {
        let mut w = vec![0.0; dim];
        w[i] = 1.0;
        Self(w)
    }

    pub fn barycenter(dim: usize) -> Self {
        Self(vec![1.0 / dim as f64; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// True if every component exceeds `tol`.
    pub fn is_interior(&self, tol: f64) -> bool {
        self.0.iter().all(|v| *v > tol)
    }

    pub fn l1_distance(&self, other: &SimplexPoint) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

impl std::ops::Index<usize> for SimplexPoint {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A pair of mixed strategies `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub x: SimplexPoint,
    pub y: SimplexPoint,
}

impl StrategyProfile {
    pub fn new(x: SimplexPoint, y: SimplexPoint) -> Self {
        Self { x, y }
    }

    pub fn from_vecs(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Ok(Self::new(SimplexPoint::new(x)?, SimplexPoint::new(y)?))
    }

    /// The pure profile `v_{i,j} = (e_i, e_j)`.
    pub fn corner(n: usize, m: usize, i: usize, j: usize) -> Self {
        Self::new(SimplexPoint::vertex(n, i), SimplexPoint::vertex(m, j))
    }

    pub fn barycenter(n: usize, m: usize) -> Self {
        Self::new(SimplexPoint::barycenter(n), SimplexPoint::barycenter(m))
    }

    pub fn is_interior(&self, tol: f64) -> bool {
        self.x.is_interior(tol) && self.y.is_interior(tol)
    }
}

/// Indices (0-based) of the components above a threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    indices: Vec<usize>,
    dim: usize,
    tol: f64,
}

impl SupportSet {
    pub fn from_indices(dim: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.iter().any(|&i| i >= dim) {
            return Err(Error::precondition(format!("support index out of range for dimension {dim}")));
        }
        Ok(Self {
            indices,
            dim,
            tol: 0.0,
        })
    }

    pub fn full(dim: usize) -> Self {
        Self {
            indices: (0..dim).collect(),
            dim,
            tol: 0.0,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.dim
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn complement(&self) -> Vec<usize> {
        (0..self.dim).filter(|i| !self.contains(*i)).collect()
    }

    /// 1-based indices, as printed in reports.
    pub fn one_based(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i + 1).collect()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SupportSetRepr {
    indices: Vec<usize>,
    dim: usize,
    tol: f64,
}

impl<'de> Deserialize<'de> for SupportSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = SupportSetRepr::deserialize(deserializer)?;
        if r.indices.contains(&0) {
            return Err(D::Error::custom("support indices are 1-based"));
        }
        let mut s = SupportSet::from_indices(r.dim, r.indices.iter().map(|i| i - 1).collect())
            .map_err(D::Error::custom)?;
        s.tol = r.tol;
        Ok(s)
    }
}

impl Serialize for SupportSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("SupportSet", 3)?;
        st.serialize_field("indices", &self.one_based())?;
        st.serialize_field("dim", &self.dim)?;
        st.serialize_field("tol", &self.tol)?;
        st.end()
    }
}

/// `{ i : w_i > tol }`; requires `0 <= tol < 1/dim` so the support is never empty.
pub fn support(w: &SimplexPoint, tol: f64) -> Result<SupportSet> {
    let dim = w.dim();
    if !(tol >= 0.0 && tol < 1.0 / dim as f64) {
        return Err(Error::precondition(format!(
            "support threshold {tol} outside [0, 1/{dim})"
        )));
    }
    Ok(SupportSet {
        indices: (0..dim).filter(|&i| w[i] > tol).collect(),
        dim,
        tol,
    })
}

/// Payoff vectors and scalar payoffs at a profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utilities {
    /// `u = A y`
    pub u: Vec<f64>,
    /// `v = B x`
    pub v: Vec<f64>,
    /// `xᵀ A y`
    pub row_payoff: f64,
    /// `yᵀ B x`
    pub col_payoff: f64,
}

pub fn utilities(g: &Game, s: &StrategyProfile) -> Result<Utilities> {
    g.check_profile(s)?;
    let u = g.row_payoffs(s.y.as_slice());
    let v = g.col_payoffs(s.x.as_slice());
    let row_payoff = dot(s.x.as_slice(), &u);
    let col_payoff = dot(s.y.as_slice(), &v);
    Ok(Utilities {
        u,
        v,
        row_payoff,
        col_payoff,
    })
}

/// No pure deviation gains more than `tol` for either player.
pub fn is_nash(g: &Game, p: &SimplexPoint, q: &SimplexPoint, tol: f64) -> Result<bool> {
    check_tol(tol)?;
    g.check_pair(p, q)?;
    let aq = g.row_payoffs(q.as_slice());
    let bp = g.col_payoffs(p.as_slice());
    let row_val = dot(p.as_slice(), &aq);
    let col_val = dot(q.as_slice(), &bp);
    Ok(aq.iter().all(|u| *u <= row_val + tol) && bp.iter().all(|v| *v <= col_val + tol))
}

/// No pure deviation loses more than `tol` for either player; a Nash
/// equilibrium of the negated game.
pub fn is_anti_equilibrium(g: &Game, p: &SimplexPoint, q: &SimplexPoint, tol: f64) -> Result<bool> {
    check_tol(tol)?;
    g.check_pair(p, q)?;
    let aq = g.row_payoffs(q.as_slice());
    let bp = g.col_payoffs(p.as_slice());
    let row_val = dot(p.as_slice(), &aq);
    let col_val = dot(q.as_slice(), &bp);
    Ok(aq.iter().all(|u| *u >= row_val - tol) && bp.iter().all(|v| *v >= col_val - tol))
}

fn check_tol(tol: f64) -> Result<()> {
    if tol >= 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::precondition(format!("tolerance must be finite and >= 0, got {tol}")))
    }
}

/// Relationship between the supports of a maximal equilibrium and a maximal
/// anti-equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportVerdict {
    BothInterior,
    MutuallyNonNested,
    /// Supports are nested; only possible for non-generic games.
    Violation,
}

/// Checks that equilibrium and anti-equilibrium supports are either both full
/// or not contained in one another. Row and column indices are kept apart.
pub fn check_support_lemma(
    g: &Game,
    eq: (&SimplexPoint, &SimplexPoint),
    anti: (&SimplexPoint, &SimplexPoint),
    tol: f64,
) -> Result<SupportVerdict> {
    let (p, q) = eq;
    let (ps, qs) = anti;
    if !is_nash(g, p, q, tol)? {
        return Err(Error::DefinitionalCheck { check: "Nash", tol });
    }
    if !is_anti_equilibrium(g, ps, qs, tol)? {
        return Err(Error::DefinitionalCheck {
            check: "anti-equilibrium",
            tol,
        });
    }
    let thr = DEFAULT_SUPPORT_TOL;
    let (sp, sq) = (support(p, thr)?, support(q, thr)?);
    let (sps, sqs) = (support(ps, thr)?, support(qs, thr)?);
    if sp.is_full() && sq.is_full() && sps.is_full() && sqs.is_full() {
        return Ok(SupportVerdict::BothInterior);
    }
    let eq_not_in_anti = sp.indices().iter().any(|i| !sps.contains(*i))
        || sq.indices().iter().any(|j| !sqs.contains(*j));
    let anti_not_in_eq = sps.indices().iter().any(|i| !sp.contains(*i))
        || sqs.indices().iter().any(|j| !sq.contains(*j));
    Ok(if eq_not_in_anti && anti_not_in_eq {
        SupportVerdict::MutuallyNonNested
    } else {
        SupportVerdict::Violation
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
