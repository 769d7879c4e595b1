//! Exact linear programming over arbitrary-precision rationals.
//!
//! A small dense two-phase simplex with Bland's anti-cycling rule. Everything
//! is carried in `BigRational`, so feasibility and optimality answers are
//! exact — the moment-matching constraints this solves involve coefficients
//! spanning ~19 orders of magnitude, where double-precision pivoting cannot
//! certify equality to any useful tolerance.
//!
//! Problems are stated as: minimize `c·x` subject to `A·x {≤,=,≥} b`, `x ≥ 0`.
//! Inequalities get slack/surplus columns automatically; phase 1 minimizes the
//! sum of artificial variables and reports an exact infeasibility certificate
//! (the positive residual) when that sum cannot reach zero.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};

pub type Rat = BigRational;

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_int(n: i64) -> Rat {
    Rat::from(BigInt::from(n))
}

/// Exact rational from the bit pattern of a finite f64.
pub fn rat_from_f64(x: f64) -> Rat {
    BigRational::from_float(x).expect("finite float required")
}

pub fn rat_to_f64(x: &Rat) -> f64 {
    // Scale down numerator/denominator together to stay in f64 range.
    let digits_n = x.numer().to_string().len() as i64;
    let digits_d = x.denom().to_string().len() as i64;
    if digits_n < 300 && digits_d < 300 {
        let n: f64 = x.numer().to_string().parse().unwrap_or(f64::NAN);
        let d: f64 = x.denom().to_string().parse().unwrap_or(f64::NAN);
        n / d
    } else {
        let shift = (digits_n.max(digits_d) - 250).max(0) as u32;
        let scale = BigInt::from(10u32).pow(shift);
        let n: f64 = (x.numer() / &scale).to_string().parse().unwrap_or(f64::NAN);
        let d: f64 = (x.denom() / &scale).to_string().parse().unwrap_or(f64::NAN);
        n / d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<Rat>,
    pub relation: Relation,
    pub rhs: Rat,
}

#[derive(Clone, Debug)]
pub struct Program {
    pub num_vars: usize,
    /// Minimized objective.
    pub objective: Vec<Rat>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug)]
pub enum Outcome {
    /// Optimal vertex: variable values and objective value.
    Optimal { x: Vec<Rat>, objective: Rat },
    /// No feasible point; the certificate is the minimal attainable total
    /// constraint violation (positive) from phase 1.
    Infeasible { residual: Rat },
    Unbounded,
}

impl Program {
    pub fn new(num_vars: usize, objective: Vec<Rat>) -> Self {
        assert_eq!(objective.len(), num_vars);
        Self {
            num_vars,
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn constrain(&mut self, coeffs: Vec<Rat>, relation: Relation, rhs: Rat) {
        assert_eq!(coeffs.len(), self.num_vars);
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }
}

struct Tableau {
    /// rows × (total_cols + 1); last column is the rhs.
    rows: Vec<Vec<Rat>>,
    /// Objective row (reduced costs), same width as rows.
    cost: Vec<Rat>,
    basis: Vec<usize>,
    total_cols: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.rows[row][col].clone();
        debug_assert!(!piv.is_zero());
        for v in self.rows[row].iter_mut() {
            *v /= &piv;
        }
        for r in 0..self.rows.len() {
            if r != row && !self.rows[r][col].is_zero() {
                let factor = self.rows[r][col].clone();
                for c in 0..=self.total_cols {
                    let delta = &factor * &self.rows[row][c];
                    self.rows[r][c] -= delta;
                }
            }
        }
        if !self.cost[col].is_zero() {
            let factor = self.cost[col].clone();
            for c in 0..=self.total_cols {
                let delta = &factor * &self.rows[row][c];
                self.cost[c] -= delta;
            }
        }
        self.basis[row] = col;
    }

    /// Bland's rule: entering = lowest-index column with negative reduced
    /// cost, leaving = lowest-index basic variable among the minimum ratios.
    /// Returns Ok(true) at optimality, Ok(false) after one pivot.
    fn step(&mut self, allowed_cols: usize) -> Result<bool> {
        let mut entering = None;
        for c in 0..allowed_cols {
            if self.cost[c].is_negative() {
                entering = Some(c);
                break;
            }
        }
        let Some(col) = entering else {
            return Ok(true);
        };
        let mut leaving: Option<(usize, Rat)> = None;
        for r in 0..self.rows.len() {
            if self.rows[r][col].is_positive() {
                let ratio = &self.rows[r][self.total_cols] / &self.rows[r][col];
                let better = match &leaving {
                    None => true,
                    Some((lr, lratio)) => {
                        ratio < *lratio || (ratio == *lratio && self.basis[r] < self.basis[*lr])
                    }
                };
                if better {
                    leaving = Some((r, ratio));
                }
            }
        }
        let Some((row, _)) = leaving else {
            return Err(Error::Invariant("unbounded pivot column".into()));
        };
        self.pivot(row, col);
        Ok(false)
    }
}

/// Iteration cap; Bland's rule terminates finitely, this guards against
/// pathological blowup only.
const MAX_PIVOTS: usize = 200_000;

/// Solves the program exactly. `Optimal.x` has length `num_vars`.
pub fn solve(program: &Program) -> Result<Outcome> {
    let n = program.num_vars;
    let m = program.constraints.len();
    // Count slack columns.
    let num_slack = program
        .constraints
        .iter()
        .filter(|c| c.relation != Relation::Eq)
        .count();
    let total_cols = n + num_slack + m; // structural + slack + artificial
    let mut rows: Vec<Vec<Rat>> = Vec::with_capacity(m);
    let mut basis = vec![0usize; m];
    let mut slack_idx = n;
    for (i, con) in program.constraints.iter().enumerate() {
        let mut row = vec![Rat::zero(); total_cols + 1];
        let mut rhs = con.rhs.clone();
        let mut coeffs: Vec<Rat> = con.coeffs.clone();
        let mut slack_sign = match con.relation {
            Relation::Le => Some(Rat::one()),
            Relation::Ge => Some(-Rat::one()),
            Relation::Eq => None,
        };
        // Normalize to nonnegative rhs so artificials start feasible.
        if rhs.is_negative() {
            rhs = -rhs;
            for c in coeffs.iter_mut() {
                *c = -c.clone();
            }
            if let Some(s) = slack_sign.as_mut() {
                *s = -s.clone();
            }
        }
        row[..n].clone_from_slice(&coeffs);
        if let Some(s) = slack_sign {
            row[slack_idx] = s;
            slack_idx += 1;
        }
        let art = n + num_slack + i;
        row[art] = Rat::one();
        row[total_cols] = rhs;
        basis[i] = art;
        rows.push(row);
    }

    // Phase 1: minimize the sum of artificials. Reduced costs start as
    // -(sum of rows) on non-artificial columns.
    let mut cost = vec![Rat::zero(); total_cols + 1];
    for row in &rows {
        for c in 0..=total_cols {
            if c < n + num_slack || c == total_cols {
                let delta = row[c].clone();
                cost[c] -= delta;
            }
        }
    }
    let mut tab = Tableau {
        rows,
        cost,
        basis,
        total_cols,
    };
    let mut pivots = 0usize;
    loop {
        if tab.step(total_cols)? {
            break;
        }
        pivots += 1;
        if pivots > MAX_PIVOTS {
            return Err(Error::Invariant("phase-1 pivot limit exceeded".into()));
        }
    }
    let residual = -tab.cost[total_cols].clone();
    if residual.is_positive() {
        return Ok(Outcome::Infeasible { residual });
    }
    // Drive any degenerate artificial variables out of the basis.
    for r in 0..tab.rows.len() {
        if tab.basis[r] >= n + num_slack {
            if let Some(c) = (0..n + num_slack).find(|&c| !tab.rows[r][c].is_zero()) {
                tab.pivot(r, c);
            }
            // A row with no structural coefficients is all-zero (redundant
            // constraint); its artificial stays basic at value 0 harmlessly.
        }
    }

    // Phase 2: real objective, artificial columns frozen.
    let mut cost = vec![Rat::zero(); total_cols + 1];
    cost[..n].clone_from_slice(&program.objective);
    for r in 0..tab.rows.len() {
        let b = tab.basis[r];
        if !cost[b].is_zero() {
            let factor = cost[b].clone();
            for c in 0..=total_cols {
                let delta = &factor * &tab.rows[r][c];
                cost[c] -= delta;
            }
        }
    }
    tab.cost = cost;
    let allowed = n + num_slack;
    let mut pivots = 0usize;
    loop {
        match tab.step(allowed) {
            Ok(true) => break,
            Ok(false) => {}
            Err(_) => return Ok(Outcome::Unbounded),
        }
        pivots += 1;
        if pivots > MAX_PIVOTS {
            return Err(Error::Invariant("phase-2 pivot limit exceeded".into()));
        }
    }

    let mut x = vec![Rat::zero(); n];
    for (r, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.rows[r][total_cols].clone();
        }
    }
    let objective = -tab.cost[total_cols].clone();
    Ok(Outcome::Optimal { x, objective })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_textbook_min() {
        // min -x - 2y  s.t.  x + y <= 4, x <= 2, x,y >= 0 → (2? no: y=4,x=0)
        // objective -8 at (0,4); check x + y <= 4 binds.
        let mut p = Program::new(2, vec![rat_int(-1), rat_int(-2)]);
        p.constrain(vec![rat_int(1), rat_int(1)], Relation::Le, rat_int(4));
        p.constrain(vec![rat_int(1), rat_int(0)], Relation::Le, rat_int(2));
        match solve(&p).unwrap() {
            Outcome::Optimal { x, objective } => {
                assert_eq!(x[0], rat_int(0));
                assert_eq!(x[1], rat_int(4));
                assert_eq!(objective, rat_int(-8));
            }
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn equality_constraints_and_rationals() {
        // min x + y  s.t.  2x + y = 3, x - y = 1/2 → x = 7/6, y = 2/3.
        let mut p = Program::new(2, vec![rat_int(1), rat_int(1)]);
        p.constrain(vec![rat_int(2), rat_int(1)], Relation::Eq, rat_int(3));
        p.constrain(vec![rat_int(1), rat_int(-1)], Relation::Eq, rat(1, 2));
        match solve(&p).unwrap() {
            Outcome::Optimal { x, objective } => {
                assert_eq!(x[0], rat(7, 6));
                assert_eq!(x[1], rat(2, 3));
                assert_eq!(objective, rat(7, 6) + rat(2, 3));
            }
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn detects_infeasibility_with_positive_residual() {
        // x <= 1 and x >= 2 simultaneously.
        let mut p = Program::new(1, vec![rat_int(0)]);
        p.constrain(vec![rat_int(1)], Relation::Le, rat_int(1));
        p.constrain(vec![rat_int(1)], Relation::Ge, rat_int(2));
        match solve(&p).unwrap() {
            Outcome::Infeasible { residual } => assert!(residual.is_positive()),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn detects_unbounded() {
        // min -x with only x >= 0.
        let mut p = Program::new(1, vec![rat_int(-1)]);
        p.constrain(vec![rat_int(1)], Relation::Ge, rat_int(0));
        match solve(&p).unwrap() {
            Outcome::Unbounded => {}
            other => panic!("expected unbounded, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_duplicate_constraints() {
        let mut p = Program::new(2, vec![rat_int(1), rat_int(0)]);
        p.constrain(vec![rat_int(1), rat_int(1)], Relation::Eq, rat_int(1));
        p.constrain(vec![rat_int(1), rat_int(1)], Relation::Eq, rat_int(1));
        p.constrain(vec![rat_int(0), rat_int(1)], Relation::Le, rat_int(1));
        match solve(&p).unwrap() {
            Outcome::Optimal { x, .. } => {
                assert_eq!(x[0], rat_int(0));
                assert_eq!(x[1], rat_int(1));
            }
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn rational_roundtrips() {
        assert_eq!(rat_to_f64(&rat(1, 4)), 0.25);
        let r = rat_from_f64(0.1);
        assert!((rat_to_f64(&r) - 0.1).abs() < 1e-17);
        // Big scale survives the string route.
        let big = Rat::new(BigInt::from(10).pow(40), BigInt::from(3));
        let f = rat_to_f64(&big);
        assert!((f / 3.333333333333333e39 - 1.0).abs() < 1e-9);
    }
}
