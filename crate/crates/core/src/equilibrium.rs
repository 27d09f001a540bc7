//! Zero-sum game solving at desk scale.
//!
//! The value LP is solved by enumerating its basic solutions; the optimal
//! strategy polytopes are then enumerated vertex by vertex, and the
//! barycenter of each vertex set is the maximal-support optimal strategy.
//! Anti-equilibria are the equilibria of the negated game.
//!
//! A dense tableau simplex ([`solve_value_simplex`]) solves the same LP by a
//! different route and is used to cross-check the enumeration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    check_support_lemma, support, Game, SimplexPoint, SupportSet, SupportVerdict,
    DEFAULT_SUPPORT_TOL,
};

/// Largest number of strategies per player accepted by the enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 8;

/// Singular-value ratio below which a basis is treated as singular.
const SINGULAR_RATIO: f64 = 1e-12;
/// Singular-value ratio below which a feasible basis is flagged as ambiguous.
const AMBIGUOUS_RATIO: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumSolver {
    pub cap: usize,
    /// Slack allowed on sign and optimality constraints of a basic solution.
    pub feas_tol: f64,
    /// Two vertices closer than this (max-norm) are the same vertex.
    pub dedup_tol: f64,
    pub support_tol: f64,
}

impl Default for EquilibriumSolver {
    fn default() -> Self {
        Self {
            cap: DEFAULT_ENUMERATION_CAP,
            feas_tol: 1e-9,
            dedup_tol: 1e-7,
            support_tol: DEFAULT_SUPPORT_TOL,
        }
    }
}

/// Game value with one optimal pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSolution {
    pub value: f64,
    pub p: SimplexPoint,
    pub q: SimplexPoint,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexCounts {
    pub p: usize,
    pub q: usize,
    pub p_star: usize,
    pub q_star: usize,
}

/// Maximal-support equilibrium and anti-equilibrium of a zero-sum game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub game: String,
    /// Value of the game to the row player.
    pub value: f64,
    /// Value of the negated game to its row player.
    pub negated_value: f64,
    pub p: SimplexPoint,
    pub q: SimplexPoint,
    pub p_star: SimplexPoint,
    pub q_star: SimplexPoint,
    #[serde(rename = "I")]
    pub row_support: SupportSet,
    #[serde(rename = "J")]
    pub col_support: SupportSet,
    #[serde(rename = "I_star")]
    pub row_support_anti: SupportSet,
    #[serde(rename = "J_star")]
    pub col_support_anti: SupportSet,
    pub interior: bool,
    pub interior_anti: bool,
    pub vertex_counts: VertexCounts,
    pub support_verdict: SupportVerdict,
    /// Degeneracy notes; empty for generic games.
    pub warnings: Vec<String>,
}

impl EquilibriumReport {
    /// Strategies played with positive probability by neither the equilibrium
    /// nor the anti-equilibrium, per player.
    pub fn unused_strategies(&self) -> (Vec<usize>, Vec<usize>) {
        let rows = (0..self.p.dim())
            .filter(|i| !self.row_support.contains(*i) && !self.row_support_anti.contains(*i))
            .collect();
        let cols = (0..self.q.dim())
            .filter(|j| !self.col_support.contains(*j) && !self.col_support_anti.contains(*j))
            .collect();
        (rows, cols)
    }
}

/// Minimax value and an optimal pair, using [`EquilibriumSolver::default`].
pub fn solve_value(g: &Game) -> Result<ValueSolution> {
    EquilibriumSolver::default().solve_value(g)
}

pub fn maximal_support_equilibrium(g: &Game) -> Result<EquilibriumReport> {
    EquilibriumSolver::default().maximal_support_equilibrium(g)
}

impl EquilibriumSolver {
    fn check_cap(&self, g: &Game) -> Result<()> {
        if g.rows() > self.cap || g.cols() > self.cap {
            return Err(Error::EnumerationCap {
                rows: g.rows(),
                cols: g.cols(),
                cap: self.cap,
            });
        }
        Ok(())
    }

    pub fn solve_value(&self, g: &Game) -> Result<ValueSolution> {
        self.check_cap(g)?;
        let a = g.a_matrix();
        let (v_row, p, _) = self.maximin(&a);
        // The column player maximizes min_i (-Aq)_i.
        let (v_col, q, _) = self.maximin(&(-a.transpose()));
        let (p, q) = match (p, q) {
            (Some(p), Some(q)) => (p, q),
            _ => {
                return Err(Error::precondition(
                    "value LP has no basic optimal solution (bounded matrices cannot trigger this)",
                ))
            }
        };
        debug_assert!(
            (v_row + v_col).abs() <= 1e-8 * (1.0 + v_row.abs()),
            "minimax duality gap: {v_row} vs {}",
            -v_col
        );
        Ok(ValueSolution {
            value: v_row,
            p: SimplexPoint::normalized(p),
            q: SimplexPoint::normalized(q),
        })
    }

    pub fn maximal_support_equilibrium(&self, g: &Game) -> Result<EquilibriumReport> {
        self.check_cap(g)?;
        let mut warnings = Vec::new();
        let (value, p, q, np, nq) = self.maximal_pair(g, "equilibrium", &mut warnings)?;
        let neg = g.negated();
        let (negated_value, p_star, q_star, nps, nqs) =
            self.maximal_pair(&neg, "anti-equilibrium", &mut warnings)?;

        let row_support = support(&p, self.support_tol)?;
        let col_support = support(&q, self.support_tol)?;
        let row_support_anti = support(&p_star, self.support_tol)?;
        let col_support_anti = support(&q_star, self.support_tol)?;
        let interior = row_support.is_full() && col_support.is_full();
        let interior_anti = row_support_anti.is_full() && col_support_anti.is_full();

        let support_verdict =
            check_support_lemma(g, (&p, &q), (&p_star, &q_star), 1e-8)?;
        if support_verdict == SupportVerdict::Violation {
            warnings.push(
                "equilibrium and anti-equilibrium supports are nested: the game is not generic"
                    .to_string(),
            );
        }
        Ok(EquilibriumReport {
            game: g.name().to_string(),
            value,
            negated_value,
            p,
            q,
            p_star,
            q_star,
            row_support,
            col_support,
            row_support_anti,
            col_support_anti,
            interior,
            interior_anti,
            vertex_counts: VertexCounts {
                p: np,
                q: nq,
                p_star: nps,
                q_star: nqs,
            },
            support_verdict,
            warnings,
        })
    }

    fn maximal_pair(
        &self,
        g: &Game,
        what: &str,
        warnings: &mut Vec<String>,
    ) -> Result<(f64, SimplexPoint, SimplexPoint, usize, usize)> {
        let sol = self.solve_value(g)?;
        let a = g.a_matrix();
        let rows = self.optimal_vertices(&a, sol.value);
        let cols = self.optimal_vertices(&(-a.transpose()), -sol.value);
        for (side, set) in [("row", &rows), ("column", &cols)] {
            if set.ambiguous > 0 {
                warnings.push(format!(
                    "{what}: {} near-singular feasible bases on the {side} side",
                    set.ambiguous
                ));
            }
            if set.vertices.is_empty() {
                return Err(Error::precondition(format!(
                    "{what}: no optimal vertex found on the {side} side"
                )));
            }
        }
        let p = barycenter(&rows.vertices);
        let q = barycenter(&cols.vertices);
        Ok((sol.value, p, q, rows.vertices.len(), cols.vertices.len()))
    }

    /// Maximizes `min_j (wᵀ M)_j` over the simplex by enumerating basic
    /// solutions. Returns the value, a maximizer and the number of feasible
    /// bases visited.
    pub fn maximin(&self, mat: &DMatrix<f64>) -> (f64, Option<Vec<f64>>, usize) {
        let (n, m) = mat.shape();
        let mut best = f64::NEG_INFINITY;
        let mut arg = None;
        let mut feasible = 0;
        for rows in subsets(n) {
            let k = rows.len();
            if k > m {
                continue;
            }
            for cols in combinations(m, k) {
                // unknowns (w_S, v); equations w_Sᵀ M_{S,t} - v = 0 for t in T, sum w = 1
                let mut sys = DMatrix::zeros(k + 1, k + 1);
                for (r, &t) in cols.iter().enumerate() {
                    for (c, &i) in rows.iter().enumerate() {
                        sys[(r, c)] = mat[(i, t)];
                    }
                    sys[(r, k)] = -1.0;
                }
                for c in 0..k {
                    sys[(k, c)] = 1.0;
                }
                let mut rhs = DVector::zeros(k + 1);
                rhs[k] = 1.0;
                let Some((sol, _)) = solve_square(sys, rhs) else {
                    continue;
                };
                let mut w = vec![0.0; n];
                for (c, &i) in rows.iter().enumerate() {
                    w[i] = sol[c];
                }
                let v = sol[k];
                if !self.is_feasible(mat, &w, v) {
                    continue;
                }
                feasible += 1;
                if v > best {
                    best = v;
                    arg = Some(clean(w));
                }
            }
        }
        (best, arg, feasible)
    }

    /// Vertices of `{ w in simplex : (wᵀ M)_j >= value for all j }`.
    pub fn optimal_vertices(&self, mat: &DMatrix<f64>, value: f64) -> VertexSet {
        let (n, m) = mat.shape();
        let mut out = VertexSet::default();
        for rows in subsets(n) {
            let k = rows.len();
            if k - 1 > m {
                continue;
            }
            for cols in combinations(m, k - 1) {
                let mut sys = DMatrix::zeros(k, k);
                let mut rhs = DVector::zeros(k);
                for (r, &t) in cols.iter().enumerate() {
                    for (c, &i) in rows.iter().enumerate() {
                        sys[(r, c)] = mat[(i, t)];
                    }
                    rhs[r] = value;
                }
                for c in 0..k {
                    sys[(k - 1, c)] = 1.0;
                }
                rhs[k - 1] = 1.0;
                let Some((sol, ratio)) = solve_square(sys, rhs) else {
                    continue;
                };
                let mut w = vec![0.0; n];
                for (c, &i) in rows.iter().enumerate() {
                    w[i] = sol[c];
                }
                if !self.is_feasible(mat, &w, value) {
                    continue;
                }
                if ratio < AMBIGUOUS_RATIO {
                    out.ambiguous += 1;
                }
                let w = clean(w);
                let seen = out.vertices.iter().any(|u| {
                    u.iter()
                        .zip(&w)
                        .all(|(a, b)| (a - b).abs() <= self.dedup_tol)
                });
                if !seen {
                    out.vertices.push(w);
                }
            }
        }
        out
    }

    fn is_feasible(&self, mat: &DMatrix<f64>, w: &[f64], v: f64) -> bool {
        if w.iter().any(|x| *x < -self.feas_tol || !x.is_finite()) {
            return false;
        }
        (0..mat.ncols()).all(|j| {
            let pay: f64 = w.iter().enumerate().map(|(i, x)| x * mat[(i, j)]).sum();
            pay >= v - self.feas_tol
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VertexSet {
    pub vertices: Vec<Vec<f64>>,
    /// Feasible bases whose conditioning made the vertex numerically ambiguous.
    pub ambiguous: usize,
}

/// Solves a square system; `None` when singular. Also returns the ratio of the
/// smallest to the largest singular value.
fn solve_square(sys: DMatrix<f64>, rhs: DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let svd = sys.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin / smax < SINGULAR_RATIO {
        return None;
    }
    let sol = svd.solve(&rhs, 0.0).ok()?;
    Some((sol, smin / smax))
}

fn clean(mut w: Vec<f64>) -> Vec<f64> {
    w.iter_mut().for_each(|x| {
        if *x < 0.0 {
            *x = 0.0
        }
    });
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

fn barycenter(vertices: &[Vec<f64>]) -> SimplexPoint {
    let n = vertices[0].len();
    let mut mean = vec![0.0; n];
    for v in vertices {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let k = vertices.len() as f64;
    SimplexPoint::normalized(mean.into_iter().map(|x| x / k).collect())
}

/// Non-empty subsets of `0..n`, each sorted.
fn subsets(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (1u32..(1u32 << n)).map(move |mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
}

/// `k`-element subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Solves the value LP with a dense tableau simplex (Bland's rule) on the
/// shifted matrix `A - min(A) + 1`, whose value is positive.
pub fn solve_value_simplex(g: &Game) -> Result<ValueSolution> {
    let (n, m) = (g.rows(), g.cols());
    let a = g.a_matrix();
    let shift = 1.0 - a.min();
    // max 1ᵀw  s.t.  (A + shift) w <= 1, w >= 0 ; value' = 1 / max, q = w value'
    let width = m + n + 1;
    let mut t = DMatrix::<f64>::zeros(n + 1, width);
    for i in 0..n {
        for j in 0..m {
            t[(i, j)] = a[(i, j)] + shift;
        }
        t[(i, m + i)] = 1.0;
        t[(i, width - 1)] = 1.0;
    }
    for j in 0..m {
        t[(n, j)] = -1.0;
    }
    let mut basis: Vec<usize> = (m..m + n).collect();
    let eps = 1e-12;
    for _ in 0..10_000 {
        let Some(enter) = (0..width - 1).find(|&c| t[(n, c)] < -eps) else {
            let objective = t[(n, width - 1)];
            let scaled = 1.0 / objective;
            let mut q = vec![0.0; m];
            for (r, &b) in basis.iter().enumerate() {
                if b < m {
                    q[b] = t[(r, width - 1)] * scaled;
                }
            }
            // dual prices on the slack columns give the row player's strategy
            let p: Vec<f64> = (0..n).map(|i| t[(n, m + i)] * scaled).collect();
            return Ok(ValueSolution {
                value: scaled - shift,
                p: SimplexPoint::normalized(clean(p)),
                q: SimplexPoint::normalized(clean(q)),
            });
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..n {
            let coef = t[(r, enter)];
            if coef > eps {
                let ratio = t[(r, width - 1)] / coef;
                let better = match leave {
                    None => true,
                    Some((lr, best)) => {
                        ratio < best - eps || ((ratio - best).abs() <= eps && basis[r] < basis[lr])
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((pr, _)) = leave else {
            return Err(Error::precondition("value LP is unbounded"));
        };
        let piv = t[(pr, enter)];
        for c in 0..width {
            t[(pr, c)] /= piv;
        }
        for r in 0..=n {
            if r != pr {
                let f = t[(r, enter)];
                if f != 0.0 {
                    for c in 0..width {
                        let v = t[(pr, c)];
                        t[(r, c)] -= f * v;
                    }
                }
            }
        }
        basis[pr] = enter;
    }
    Err(Error::precondition("simplex iteration limit reached"))
}
