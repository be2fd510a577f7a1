//! Dense bounded-variable primal simplex.
//!
//! Two phases over a full tableau. Nonbasic variables rest at their lower or
//! upper bound, so the `[0, 1]` boxes of the relaxation never become rows.
//! Pricing is Dantzig's largest reduced cost; after a run of degenerate
//! pivots the solver falls back to Bland's smallest-index rule until the
//! objective moves again, which rules out cycling. Everything is
//! deterministic for a given input.

use thiserror::Error;

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

/// Sparse row `sum a_v x_v (sense) rhs`.
pub type SparseRow = (Vec<(usize, f64)>, Sense, f64);

/// `min c·x` subject to sparse rows and finite lower bounds.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<SparseRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Largest row violation of `x`, recomputed from the original rows.
    pub max_residual: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimplexError {
    #[error("infeasible: phase-one residual {residual:.3e} on rows {rows:?}")]
    Infeasible { residual: f64, rows: Vec<usize> },
    #[error("unbounded objective")]
    Unbounded,
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("malformed program: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColKind {
    Structural,
    Slack,
    Artificial,
}

struct Tableau {
    m: usize,
    ncols: usize,
    /// Row-major `m x ncols`, equal to `B^-1 A` for the current basis.
    t: Vec<f64>,
    /// Reduced costs for the active objective.
    d: Vec<f64>,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    value: Vec<f64>,
    basis: Vec<usize>,
    /// Row a column is basic in, or `usize::MAX`.
    basic_row: Vec<usize>,
    kind: Vec<ColKind>,
    iterations: usize,
    max_iterations: usize,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.ncols + c]
    }

    fn objective(&self) -> f64 {
        self.cost.iter().zip(&self.value).map(|(c, v)| c * v).sum()
    }

    fn reset_reduced_costs(&mut self) {
        self.d.clone_from(&self.cost);
        for r in 0..self.m {
            let cb = self.cost[self.basis[r]];
            if cb != 0.0 {
                let row = &self.t[r * self.ncols..(r + 1) * self.ncols];
                for (d, a) in self.d.iter_mut().zip(row) {
                    *d -= cb * a;
                }
            }
        }
    }

    fn pivot(&mut self, p: usize, q: usize) {
        let n = self.ncols;
        let piv = self.t[p * n + q];
        {
            let row = &mut self.t[p * n..(p + 1) * n];
            for a in row.iter_mut() {
                *a /= piv;
            }
            row[q] = 1.0;
        }
        let nz: Vec<usize> = (0..n).filter(|&c| self.t[p * n + c] != 0.0).collect();
        let prow: Vec<f64> = nz.iter().map(|&c| self.t[p * n + c]).collect();
        for r in 0..self.m {
            if r == p {
                continue;
            }
            let f = self.t[r * n + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[r * n..(r + 1) * n];
            for (&c, &a) in nz.iter().zip(&prow) {
                row[c] -= f * a;
            }
            row[q] = 0.0;
        }
        let f = self.d[q];
        if f != 0.0 {
            for (&c, &a) in nz.iter().zip(&prow) {
                self.d[c] -= f * a;
            }
            self.d[q] = 0.0;
        }
        let leaving = self.basis[p];
        self.basic_row[leaving] = usize::MAX;
        self.basis[p] = q;
        self.basic_row[q] = p;
    }

    fn eligible(&self, c: usize, allow_artificial: bool) -> Option<f64> {
        if self.basic_row[c] != usize::MAX || self.lower[c] == self.upper[c] {
            return None;
        }
        if !allow_artificial && self.kind[c] == ColKind::Artificial {
            return None;
        }
        let d = self.d[c];
        let at_lower = self.value[c] <= self.lower[c];
        if at_lower && d < -OPT_TOL {
            Some(-d)
        } else if !at_lower && d > OPT_TOL {
            Some(d)
        } else {
            None
        }
    }

    /// Runs primal simplex on the current objective until optimal.
    fn optimize(&mut self, allow_artificial: bool) -> Result<(), SimplexError> {
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate >= DEGENERATE_RUN;
            let mut entering = None;
            let mut best = 0.0;
            for c in 0..self.ncols {
                if let Some(score) = self.eligible(c, allow_artificial) {
                    if bland {
                        entering = Some(c);
                        break;
                    }
                    if score > best {
                        best = score;
                        entering = Some(c);
                    }
                }
            }
            let Some(q) = entering else {
                return Ok(());
            };
            if self.iterations >= self.max_iterations {
                return Err(SimplexError::IterationLimit(self.max_iterations));
            }
            self.iterations += 1;

            let increasing = self.value[q] <= self.lower[q];
            let dir = if increasing { 1.0 } else { -1.0 };
            let mut theta = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let alpha = dir * self.at(r, q);
                let b = self.basis[r];
                let limit = if alpha > PIVOT_TOL {
                    (self.value[b] - self.lower[b]).max(0.0) / alpha
                } else if alpha < -PIVOT_TOL && self.upper[b].is_finite() {
                    (self.upper[b] - self.value[b]).max(0.0) / -alpha
                } else {
                    continue;
                };
                let better = match leave {
                    None => limit < theta,
                    Some((lr, _)) => {
                        if limit < theta - 1e-12 {
                            true
                        } else if limit <= theta + 1e-12 {
                            // Ties: Bland picks the smallest basic index,
                            // otherwise prefer the larger pivot for stability.
                            if bland {
                                b < self.basis[lr]
                            } else {
                                alpha.abs() > self.at(lr, q).abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    theta = theta.min(limit);
                    leave = Some((r, limit));
                }
            }
            if !theta.is_finite() {
                return Err(SimplexError::Unbounded);
            }
            if theta > 1e-12 {
                degenerate = 0;
            } else {
                degenerate += 1;
            }

            for r in 0..self.m {
                let a = self.at(r, q);
                if a != 0.0 {
                    let b = self.basis[r];
                    self.value[b] -= dir * a * theta;
                }
            }
            self.value[q] += dir * theta;

            match leave {
                Some((p, _)) => {
                    let b = self.basis[p];
                    let alpha = dir * self.at(p, q);
                    self.value[b] = if alpha > 0.0 {
                        self.lower[b]
                    } else {
                        self.upper[b]
                    };
                    self.pivot(p, q);
                }
                None => {
                    // Bound flip, the entering column stays nonbasic.
                    self.value[q] = if increasing {
                        self.upper[q]
                    } else {
                        self.lower[q]
                    };
                }
            }
        }
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution, SimplexError> {
    let n = lp.objective.len();
    if lp.lower.len() != n || lp.upper.len() != n {
        return Err(SimplexError::Malformed(
            "bound vectors differ in length".into(),
        ));
    }
    for (j, (&l, &u)) in lp.lower.iter().zip(&lp.upper).enumerate() {
        if !l.is_finite() || l > u + FEAS_TOL {
            return Err(SimplexError::Malformed(format!("bad bounds on column {j}")));
        }
    }
    let m = lp.rows.len();

    // Structural columns start at their lower bound.
    let x0: Vec<f64> = lp.lower.clone();
    let mut residual = Vec::with_capacity(m);
    for (coeffs, _, rhs) in &lp.rows {
        let ax: f64 = coeffs.iter().map(|&(j, a)| a * x0[j]).sum();
        residual.push(rhs - ax);
    }

    // Column layout: structurals, one slack per inequality, artificials.
    let mut kind = vec![ColKind::Structural; n];
    let mut slack_of_row = vec![None; m];
    for (r, (_, sense, _)) in lp.rows.iter().enumerate() {
        if *sense != Sense::Eq {
            slack_of_row[r] = Some(kind.len());
            kind.push(ColKind::Slack);
        }
    }
    let mut art_of_row = vec![None; m];
    for r in 0..m {
        let (_, sense, _) = &lp.rows[r];
        let slack_ok = match sense {
            Sense::Le => residual[r] >= 0.0,
            Sense::Ge => residual[r] <= 0.0,
            Sense::Eq => false,
        };
        if !slack_ok {
            art_of_row[r] = Some(kind.len());
            kind.push(ColKind::Artificial);
        }
    }
    let ncols = kind.len();

    let mut t = vec![0.0; m * ncols];
    let mut value = vec![0.0; ncols];
    value[..n].copy_from_slice(&x0);
    let mut lower = vec![0.0; ncols];
    let mut upper = vec![f64::INFINITY; ncols];
    lower[..n].copy_from_slice(&lp.lower);
    upper[..n].copy_from_slice(&lp.upper);
    let mut basis = vec![0; m];
    let mut basic_row = vec![usize::MAX; ncols];

    for (r, (coeffs, sense, _)) in lp.rows.iter().enumerate() {
        let row = &mut t[r * ncols..(r + 1) * ncols];
        for &(j, a) in coeffs {
            row[j] += a;
        }
        if let Some(s) = slack_of_row[r] {
            row[s] = if *sense == Sense::Le { 1.0 } else { -1.0 };
        }
        let (col, sign) = match art_of_row[r] {
            Some(a) => {
                let sign = if residual[r] >= 0.0 { 1.0 } else { -1.0 };
                row[a] = sign;
                (a, sign)
            }
            None => {
                let s = slack_of_row[r].expect("slack-feasible rows are inequalities");
                (s, row[s])
            }
        };
        // Normalize so the basic column is a unit vector.
        if sign < 0.0 {
            for a in row.iter_mut() {
                *a = -*a;
            }
        }
        value[col] = residual[r].abs();
        basis[r] = col;
        basic_row[col] = r;
    }

    let phase_one_cost: Vec<f64> = kind
        .iter()
        .map(|k| if *k == ColKind::Artificial { 1.0 } else { 0.0 })
        .collect();
    let mut tab = Tableau {
        m,
        ncols,
        t,
        d: vec![0.0; ncols],
        cost: phase_one_cost,
        lower,
        upper,
        value,
        basis,
        basic_row,
        kind,
        iterations: 0,
        max_iterations: 200 * (m + ncols) + 1000,
    };

    if art_of_row.iter().any(Option::is_some) {
        tab.reset_reduced_costs();
        tab.optimize(true)?;
        let scale = 1.0 + lp.rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
        let infeasibility = tab.objective();
        if infeasibility > FEAS_TOL * scale {
            let rows = (0..m)
                .filter(|&r| art_of_row[r].is_some_and(|a| tab.value[a] > FEAS_TOL))
                .collect();
            return Err(SimplexError::Infeasible {
                residual: infeasibility,
                rows,
            });
        }
        // Drive zero-valued artificials out of the basis where possible.
        for r in 0..m {
            let b = tab.basis[r];
            if tab.kind[b] != ColKind::Artificial {
                continue;
            }
            let q = (0..ncols)
                .filter(|&c| tab.kind[c] != ColKind::Artificial && tab.basic_row[c] == usize::MAX)
                .max_by(|&a, &b| {
                    tab.at(r, a)
                        .abs()
                        .total_cmp(&tab.at(r, b).abs())
                        .then(b.cmp(&a))
                });
            if let Some(q) = q.filter(|&q| tab.at(r, q).abs() > PIVOT_TOL) {
                tab.value[b] = 0.0;
                tab.pivot(r, q);
            }
        }
        for c in 0..ncols {
            if tab.kind[c] == ColKind::Artificial {
                tab.upper[c] = 0.0;
                tab.value[c] = 0.0;
            }
        }
    }

    let mut cost = vec![0.0; ncols];
    cost[..n].copy_from_slice(&lp.objective);
    tab.cost = cost;
    tab.reset_reduced_costs();
    tab.optimize(false)?;

    let mut x: Vec<f64> = tab.value[..n].to_vec();
    for (j, v) in x.iter_mut().enumerate() {
        if (*v - lp.lower[j]).abs() < 1e-9 {
            *v = lp.lower[j];
        } else if (*v - lp.upper[j]).abs() < 1e-9 {
            *v = lp.upper[j];
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    let max_residual = max_violation(lp, &x);
    Ok(LpSolution {
        x,
        objective,
        iterations: tab.iterations,
        max_residual,
    })
}

/// Largest amount by which `x` violates a row or a bound.
pub fn max_violation(lp: &LinearProgram, x: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (coeffs, sense, rhs) in &lp.rows {
        let ax: f64 = coeffs.iter().map(|&(j, a)| a * x[j]).sum();
        let v = match sense {
            Sense::Le => ax - rhs,
            Sense::Ge => rhs - ax,
            Sense::Eq => (ax - rhs).abs(),
        };
        worst = worst.max(v);
    }
    for (j, &v) in x.iter().enumerate() {
        worst = worst.max(lp.lower[j] - v).max(v - lp.upper[j]);
    }
    worst
}
