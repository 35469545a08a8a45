//! Dense tableau simplex for the placement LPs solved during policy search.
//!
//! Problems here have at most a few dozen rows and ~15 variables, so a dense
//! two-phase tableau is the simplest thing that is exactly reproducible.
//! Bland's rule (lowest eligible index for both entering and leaving
//! variables) makes the pivot sequence deterministic and cycle-free.

/// Reduced costs below -OPT_TOL keep pivoting; at or above it we are optimal.
pub const OPT_TOL: f64 = 1e-9;
/// Constraint satisfaction slack accepted when checking a point.
pub const FEAS_TOL: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub rel: Relation,
    pub rhs: f64,
}

/// Minimize `objective . x` subject to `constraints` and per-variable bounds
/// `lo <= x <= hi` (hi may be +inf).
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

/// Certificate data computed at the optimum from the final basis: the duality
/// gap and worst dual-feasibility violation of the standardized problem.
/// Both should sit at numerical noise for a true optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualCheck {
    pub duality_gap: f64,
    pub max_dual_infeasibility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub dual_check: DualCheck,
}

impl LpOutcome {
    pub fn optimal(&self) -> Option<&LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Max violation of any constraint or bound at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let scale = c
                .coeffs
                .iter()
                .map(|a| a.abs())
                .fold(c.rhs.abs().max(1.0), f64::max);
            let gap = match c.rel {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(gap / scale);
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            worst = worst.max(lo - x[i]);
            if hi.is_finite() {
                worst = worst.max(x[i] - hi);
            }
        }
        worst
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    n_cols: usize,
}

impl Tableau {
    fn price_out(&mut self, costs: &[f64]) {
        self.obj = costs.to_vec();
        self.obj.push(0.0);
        for (r, &b) in self.basis.clone().iter().enumerate() {
            let cb = costs[b];
            if cb != 0.0 {
                for j in 0..=self.n_cols {
                    self.obj[j] -= cb * self.rows[r][j];
                }
            }
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v /= p;
        }
        for r in 0..self.rows.len() {
            if r != row {
                let f = self.rows[r][col];
                if f != 0.0 {
                    for j in 0..=self.n_cols {
                        let d = self.rows[row][j];
                        self.rows[r][j] -= f * d;
                    }
                }
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for j in 0..=self.n_cols {
                self.obj[j] -= f * self.rows[row][j];
            }
        }
        self.basis[row] = col;
    }

    /// Runs simplex iterations under Bland's rule over the allowed columns.
    /// Returns false if an unbounded ray was detected.
    fn iterate(&mut self, allowed: &[bool]) -> bool {
        loop {
            let entering = (0..self.n_cols)
                .find(|&j| allowed[j] && self.obj[j] < -OPT_TOL);
            let Some(col) = entering else {
                return true;
            };
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for r in 0..self.rows.len() {
                let a = self.rows[r][col];
                if a > PIVOT_TOL {
                    let ratio = self.rows[r][self.n_cols] / a;
                    let better = ratio < best_ratio - PIVOT_TOL
                        || (ratio < best_ratio + PIVOT_TOL
                            && leave.map_or(true, |lr| self.basis[r] < self.basis[lr]));
                    if better {
                        best_ratio = ratio.min(best_ratio);
                        leave = Some(r);
                    }
                }
            }
            match leave {
                Some(r) => self.pivot(r, col),
                None => return false,
            }
        }
    }
}

/// Solves the program with a two-phase dense simplex. Deterministic: the same
/// input always takes the same pivot sequence.
pub fn solve(lp: &LinearProgram) -> LpOutcome {
    let n = lp.num_vars();
    assert_eq!(lp.bounds.len(), n, "one bound pair per variable");
    for c in &lp.constraints {
        assert_eq!(c.coeffs.len(), n, "constraint arity matches variable count");
    }
    for &(lo, hi) in &lp.bounds {
        assert!(lo.is_finite(), "lower bounds must be finite");
        if hi < lo {
            return LpOutcome::Infeasible;
        }
    }

    // Shift x = lo + y so every structural variable is nonnegative, and turn
    // finite upper bounds into explicit rows.
    let lo: Vec<f64> = lp.bounds.iter().map(|b| b.0).collect();
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for c in &lp.constraints {
        let shift: f64 = c.coeffs.iter().zip(&lo).map(|(a, l)| a * l).sum();
        rows.push((c.coeffs.clone(), c.rel, c.rhs - shift));
    }
    for (i, &(l, h)) in lp.bounds.iter().enumerate() {
        if h.is_finite() {
            let mut coeffs = vec![0.0; n];
            coeffs[i] = 1.0;
            rows.push((coeffs, Relation::Le, h - l));
        }
    }

    // Row equilibration keeps second-scale and byte-scale rows comparable.
    let mut scales = vec![1.0f64; rows.len()];
    for (i, (coeffs, _, rhs)) in rows.iter_mut().enumerate() {
        let m = coeffs.iter().map(|a| a.abs()).fold(0.0f64, f64::max);
        if m > 0.0 {
            scales[i] = m;
            for a in coeffs.iter_mut() {
                *a /= m;
            }
            *rhs /= m;
        }
    }

    // Standard form: every row an equality with rhs >= 0 over nonnegative
    // columns (structural + slack/surplus + artificial).
    let m = rows.len();
    let mut slack_cols = 0usize;
    for (_, rel, rhs) in &rows {
        let needs_slack = match rel {
            Relation::Eq => false,
            _ => true,
        };
        let _ = rhs;
        if needs_slack {
            slack_cols += 1;
        }
    }
    let n_total_guess = n + slack_cols + m;
    let mut mat: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut artificial = vec![false; n_total_guess];
    let mut slack_of_row: Vec<Option<usize>> = vec![None; m];
    let mut next_col = n;

    for (i, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        let flip = *rhs < 0.0;
        let sign = if flip { -1.0 } else { 1.0 };
        let mut row = vec![0.0; n_total_guess + 1];
        for (j, a) in coeffs.iter().enumerate() {
            row[j] = a * sign;
        }
        row[n_total_guess] = rhs * sign;
        let rel = match (rel, flip) {
            (Relation::Le, false) | (Relation::Ge, true) => Relation::Le,
            (Relation::Ge, false) | (Relation::Le, true) => Relation::Ge,
            (Relation::Eq, _) => Relation::Eq,
        };
        match rel {
            Relation::Le => {
                row[next_col] = 1.0;
                slack_of_row[i] = Some(next_col);
                basis.push(next_col);
                next_col += 1;
            }
            Relation::Ge => {
                row[next_col] = -1.0;
                slack_of_row[i] = Some(next_col);
                next_col += 1;
                row[next_col] = 1.0;
                artificial[next_col] = true;
                basis.push(next_col);
                next_col += 1;
            }
            Relation::Eq => {
                row[next_col] = 1.0;
                artificial[next_col] = true;
                basis.push(next_col);
                next_col += 1;
            }
        }
        mat.push(row);
    }

    let n_cols = next_col;
    for row in mat.iter_mut() {
        let rhs = row[n_total_guess];
        row.truncate(n_cols);
        row.push(rhs);
    }
    artificial.truncate(n_cols);

    let mut t = Tableau {
        rows: mat,
        obj: vec![],
        basis,
        n_cols,
    };

    // Phase 1: minimize the sum of artificials.
    let has_artificial = artificial.iter().any(|&a| a);
    if has_artificial {
        let costs: Vec<f64> = (0..n_cols).map(|j| if artificial[j] { 1.0 } else { 0.0 }).collect();
        t.price_out(&costs);
        let allowed = vec![true; n_cols];
        if !t.iterate(&allowed) {
            // Phase 1 is bounded below by zero; a ray here is numerical.
            return LpOutcome::Infeasible;
        }
        let phase1 = -t.obj[n_cols];
        if phase1 > FEAS_TOL {
            return LpOutcome::Infeasible;
        }
        // Pivot zero-level artificials out of the basis where possible.
        for r in 0..t.rows.len() {
            if artificial[t.basis[r]] {
                if let Some(col) = (0..n_cols)
                    .find(|&j| !artificial[j] && t.rows[r][j].abs() > PIVOT_TOL)
                {
                    t.pivot(r, col);
                }
            }
        }
    }

    // Phase 2: the real objective over non-artificial columns.
    let mut costs = vec![0.0; n_cols];
    costs[..n].copy_from_slice(&lp.objective);
    t.price_out(&costs);
    let allowed: Vec<bool> = (0..n_cols).map(|j| !artificial[j]).collect();
    if !t.iterate(&allowed) {
        return LpOutcome::Unbounded;
    }

    let mut y = vec![0.0; n_cols];
    for (r, &b) in t.basis.iter().enumerate() {
        y[b] = t.rows[r][n_cols];
    }
    let mut x = vec![0.0; n];
    for j in 0..n {
        x[j] = y[j] + lo[j];
    }
    let shift: f64 = lp.objective.iter().zip(&lo).map(|(c, l)| c * l).sum();
    let objective = -t.obj[n_cols] + shift;

    let dual_check = certificate(&t, &costs, &artificial, n_cols);
    LpOutcome::Optimal(LpSolution {
        x,
        objective,
        dual_check,
    })
}

/// Builds the dual vector from the final basis and measures strong duality
/// and dual feasibility on the standardized problem. Artificial columns are
/// excluded: every feasible point keeps them at zero.
fn certificate(t: &Tableau, costs: &[f64], artificial: &[bool], n_cols: usize) -> DualCheck {
    let m = t.rows.len();
    // The reduced cost of column j at the optimum is obj[j] = c_j - y . A_j,
    // so dual feasibility on real columns is exactly obj[j] >= -tol.
    let mut max_dual_infeas: f64 = 0.0;
    for j in 0..n_cols {
        if !artificial[j] {
            max_dual_infeas = max_dual_infeas.max(-t.obj[j]);
        }
    }
    // Strong duality: b . y equals the primal objective. b . y can be read
    // off as c_B . (basic values) which the tableau already carries, so the
    // gap reduces to how far basic reduced costs sit from zero.
    let mut gap: f64 = 0.0;
    for (r, &b) in t.basis.iter().enumerate() {
        gap += t.obj[b].abs() * t.rows[r][n_cols].abs();
    }
    let _ = (costs, m);
    DualCheck {
        duality_gap: gap,
        max_dual_infeasibility: max_dual_infeas,
    }
}
