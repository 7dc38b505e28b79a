//! Dense bounded-variable primal simplex.
//!
//! Solves `min cᵀx` subject to `row_lo ≤ A x ≤ row_hi` and `lo ≤ x ≤ hi`,
//! where any bound may be infinite (`None`).

use nalgebra::{DMatrix, DVector};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<T> {
    pub status: LpStatus,
    pub x: Vec<T>,
    pub objective: T,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
struct Row<T> {
    coefs: Vec<(usize, T)>,
    lo: Option<T>,
    hi: Option<T>,
}

#[derive(Debug, Clone, Default)]
pub struct LinearProgram<T: Scalar> {
    cost: Vec<T>,
    lo: Vec<Option<T>>,
    hi: Vec<Option<T>>,
    /// Start the variable at its upper bound instead of the lower one.
    start_upper: Vec<bool>,
    rows: Vec<Row<T>>,
    pub max_iterations: usize,
}

impl<T: Scalar> LinearProgram<T> {
    pub fn new() -> Self {
        Self {
            cost: Vec::new(),
            lo: Vec::new(),
            hi: Vec::new(),
            start_upper: Vec::new(),
            rows: Vec::new(),
            max_iterations: 50_000,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_var(&mut self, cost: T, lo: Option<T>, hi: Option<T>) -> usize {
        self.cost.push(cost);
        self.lo.push(lo);
        self.hi.push(hi);
        self.start_upper.push(false);
        self.cost.len() - 1
    }

    pub fn set_bounds(&mut self, var: usize, lo: Option<T>, hi: Option<T>) {
        self.lo[var] = lo;
        self.hi[var] = hi;
    }

    pub fn bounds(&self, var: usize) -> (Option<T>, Option<T>) {
        (self.lo[var], self.hi[var])
    }

    pub fn cost(&self, var: usize) -> T {
        self.cost[var]
    }

    pub fn set_start_upper(&mut self, var: usize, upper: bool) {
        self.start_upper[var] = upper;
    }

    /// Adds `lo ≤ Σ coef·x ≤ hi`. Duplicate indices are summed.
    pub fn add_row(&mut self, coefs: &[(usize, T)], lo: Option<T>, hi: Option<T>) -> usize {
        let mut merged: Vec<(usize, T)> = Vec::with_capacity(coefs.len());
        let mut sorted = coefs.to_vec();
        sorted.sort_by_key(|c| c.0);
        for (j, v) in sorted {
            assert!(j < self.cost.len(), "row references unknown variable {j}");
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += v,
                _ => merged.push((j, v)),
            }
        }
        merged.retain(|c| c.1 != T::zero());
        self.rows.push(Row { coefs: merged, lo, hi });
        self.rows.len() - 1
    }

    /// Row activities `A x`.
    pub fn row_values(&self, x: &[T]) -> Vec<T> {
        self.rows
            .iter()
            .map(|r| r.coefs.iter().fold(T::zero(), |acc, &(j, v)| acc + v * x[j]))
            .collect()
    }

    /// Maximum bound or row violation of `x`.
    pub fn max_violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        let mut check = |v: T, lo: Option<T>, hi: Option<T>| {
            if let Some(l) = lo {
                worst = worst.max(l - v);
            }
            if let Some(h) = hi {
                worst = worst.max(v - h);
            }
        };
        for (j, &v) in x.iter().enumerate() {
            check(v, self.lo[j], self.hi[j]);
        }
        for (r, v) in self.rows.iter().zip(self.row_values(x)) {
            check(v, r.lo, r.hi);
        }
        worst
    }

    pub fn objective(&self, x: &[T]) -> T {
        self.cost
            .iter()
            .zip(x)
            .fold(T::zero(), |acc, (&c, &v)| acc + c * v)
    }

    pub fn solve(&self) -> LpSolution<T> {
        Tableau::build(self).run(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Basic,
    Lower,
    Upper,
    /// Free nonbasic variable held at zero.
    Zero,
}

struct Tableau<T: Scalar> {
    m: usize,
    /// structural + slack + artificial columns
    ncols: usize,
    n_struct: usize,
    n_art: usize,
    /// row-major `m × ncols`, the current `B⁻¹ [A | −I | ±E]`
    t: Vec<T>,
    /// `[A | −I | ±E]` as built, for refactorization
    orig: Vec<T>,
    /// iterations since `t` was last recomputed from `orig`
    since_refactor: usize,
    lo: Vec<Option<T>>,
    hi: Vec<Option<T>>,
    state: Vec<State>,
    basis: Vec<usize>,
    /// values of basic variables per row
    beta: Vec<T>,
    iterations: usize,
    tol: T,
    /// smallest admissible pivot magnitude
    piv_tol: T,
}

const REFACTOR_EVERY: usize = 1000;

impl<T: Scalar> Tableau<T> {
    fn build(lp: &LinearProgram<T>) -> Self {
        let n = lp.num_vars();
        let m = lp.num_rows();
        let mut lo = lp.lo.clone();
        let mut hi = lp.hi.clone();
        let mut state = Vec::with_capacity(n + m);
        let mut xval = Vec::with_capacity(n);
        for j in 0..n {
            let (s, v) = match (lo[j], hi[j]) {
                (Some(_), Some(h)) if lp.start_upper[j] => (State::Upper, h),
                (Some(l), _) => (State::Lower, l),
                (None, Some(h)) => (State::Upper, h),
                (None, None) => (State::Zero, T::zero()),
            };
            state.push(s);
            xval.push(v);
        }
        let activity = lp.row_values(&xval);
        // artificials for rows whose slack would start out of bounds
        let mut arts = Vec::new();
        for (i, row) in lp.rows.iter().enumerate() {
            let v = activity[i];
            let below = row.lo.map(|l| v < l);
            let above = row.hi.map(|h| v > h);
            if below == Some(true) {
                arts.push((i, row.lo.unwrap()));
            } else if above == Some(true) {
                arts.push((i, row.hi.unwrap()));
            }
        }
        let n_art = arts.len();
        let ncols = n + m + n_art;
        let mut t = vec![T::zero(); m * ncols];
        for (i, row) in lp.rows.iter().enumerate() {
            for &(j, v) in &row.coefs {
                t[i * ncols + j] = v;
            }
            t[i * ncols + n + i] = -T::one();
            lo.push(row.lo);
            hi.push(row.hi);
        }
        let mut basis: Vec<usize> = (n..n + m).collect();
        let mut beta = activity.clone();
        for _ in 0..m {
            state.push(State::Basic);
        }
        // row i: A x − s + σ r = 0, slack pinned at the violated bound, r basic
        for (k, &(i, bound)) in arts.iter().enumerate() {
            let col = n + m + k;
            let gap = bound - activity[i];
            let sigma = if gap >= T::zero() { T::one() } else { -T::one() };
            t[i * ncols + col] = sigma;
            let slack = n + i;
            state[slack] = if Some(bound) == lp.rows[i].lo {
                State::Lower
            } else {
                State::Upper
            };
            lo.push(Some(T::zero()));
            hi.push(None);
            state.push(State::Basic);
            basis[i] = col;
            beta[i] = gap.abs();
        }
        let orig = t.clone();
        for (k, &(i, _)) in arts.iter().enumerate() {
            // express row in terms of the new basic column (coefficient σ)
            if t[i * ncols + n + m + k] < T::zero() {
                for c in 0..ncols {
                    t[i * ncols + c] = -t[i * ncols + c];
                }
            }
        }
        // slack rows are stored with the basic slack at coefficient +1
        let art_rows: Vec<usize> = arts.iter().map(|a| a.0).collect();
        for i in (0..m).filter(|i| !art_rows.contains(i)) {
            for c in 0..ncols {
                t[i * ncols + c] = -t[i * ncols + c];
            }
        }
        let scale = lp
            .cost
            .iter()
            .fold(T::one(), |acc, c| acc.max(c.abs()));
        Self {
            m,
            ncols,
            n_struct: n,
            n_art,
            t,
            orig,
            since_refactor: 0,
            lo,
            hi,
            state,
            basis,
            beta,
            iterations: 0,
            tol: T::tolerance() * scale.min(T::lit(1e3)),
            piv_tol: T::default_epsilon().sqrt() * T::lit(10.0),
        }
    }

    /// Recomputes `B⁻¹ [A | −I | ±E]` and the basic values from scratch,
    /// discarding the round-off accumulated by pivoting.
    fn refactor(&mut self) {
        let (m, nc) = (self.m, self.ncols);
        self.since_refactor = 0;
        if m == 0 {
            return;
        }
        let b = DMatrix::from_fn(m, m, |i, k| self.orig[i * nc + self.basis[k]]);
        let lu = b.lu();
        let full = DMatrix::from_fn(m, nc, |i, c| self.orig[i * nc + c]);
        let Some(t) = lu.solve(&full) else {
            log::debug!("singular basis during refactorization; keeping the updated tableau");
            return;
        };
        let mut rhs = DVector::zeros(m);
        for j in 0..nc {
            if self.state[j] == State::Basic {
                continue;
            }
            let v = self.nonbasic_value(j);
            if v != T::zero() {
                for i in 0..m {
                    rhs[i] -= self.orig[i * nc + j] * v;
                }
            }
        }
        let Some(beta) = lu.solve(&rhs) else {
            return;
        };
        for i in 0..m {
            for c in 0..nc {
                self.t[i * nc + c] = t[(i, c)];
            }
            self.beta[i] = beta[i];
        }
    }

    /// Largest violation of the original rows or of the bounds at the
    /// current point, a cheap check on accumulated round-off.
    fn drift(&self) -> T {
        let x = self.values();
        let nc = self.ncols;
        let mut worst = T::zero();
        for i in 0..self.m {
            let row = &self.orig[i * nc..(i + 1) * nc];
            let r = row
                .iter()
                .zip(&x)
                .fold(T::zero(), |acc, (&a, &v)| acc + a * v);
            worst = worst.max(r.abs());
        }
        for (j, &v) in x.iter().enumerate() {
            if let Some(l) = self.lo[j] {
                worst = worst.max(l - v - self.tol);
            }
            if let Some(h) = self.hi[j] {
                worst = worst.max(v - h - self.tol);
            }
        }
        worst
    }

    fn nonbasic_value(&self, j: usize) -> T {
        match self.state[j] {
            State::Lower => self.lo[j].expect("lower bound"),
            State::Upper => self.hi[j].expect("upper bound"),
            State::Zero => T::zero(),
            State::Basic => unreachable!("basic variable has no nonbasic value"),
        }
    }

    fn reduced_costs(&self, cost: &[T]) -> Vec<T> {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb == T::zero() {
                continue;
            }
            let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
            for (dj, &a) in d.iter_mut().zip(row) {
                *dj -= cb * a;
            }
        }
        d
    }

    fn pivot(&mut self, r: usize, j: usize, d: &mut [T]) {
        let nc = self.ncols;
        let piv = self.t[r * nc + j];
        let inv = T::one() / piv;
        for c in 0..nc {
            self.t[r * nc + c] *= inv;
        }
        let (head, rest) = self.t.split_at_mut(r * nc);
        let (prow, tail) = rest.split_at_mut(nc);
        for other in head.chunks_exact_mut(nc).chain(tail.chunks_exact_mut(nc)) {
            let f = other[j];
            if f == T::zero() {
                continue;
            }
            for (o, &p) in other.iter_mut().zip(prow.iter()) {
                *o -= f * p;
            }
            other[j] = T::zero();
        }
        let f = d[j];
        if f != T::zero() {
            for (o, &p) in d.iter_mut().zip(prow.iter()) {
                *o -= f * p;
            }
            d[j] = T::zero();
        }
    }

    /// Runs simplex iterations for cost vector `cost`. Returns the terminal status.
    fn iterate(&mut self, cost: &[T], limit: usize) -> LpStatus {
        let mut d = self.reduced_costs(cost);
        let mut degenerate_run = 0usize;
        let nc = self.ncols;
        loop {
            if self.iterations >= limit {
                return LpStatus::IterationLimit;
            }
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor();
                d = self.reduced_costs(cost);
            }
            let bland = degenerate_run > 50;
            // pricing
            let mut enter: Option<(usize, T)> = None;
            for j in 0..nc {
                let dir = match self.state[j] {
                    State::Basic => continue,
                    State::Lower if d[j] < -self.tol => T::one(),
                    State::Upper if d[j] > self.tol => -T::one(),
                    State::Zero if d[j].abs() > self.tol => -d[j].signum(),
                    _ => continue,
                };
                if self.lo[j] == self.hi[j] && self.lo[j].is_some() {
                    continue;
                }
                if bland {
                    enter = Some((j, dir));
                    break;
                }
                if enter.is_none_or(|(k, _)| d[j].abs() > d[k].abs()) {
                    enter = Some((j, dir));
                }
            }
            let Some((j, dir)) = enter else {
                if self.since_refactor == 0 || self.drift() <= self.tol {
                    return LpStatus::Optimal;
                }
                // round-off has crept in; retry on a fresh factorization
                self.refactor();
                d = self.reduced_costs(cost);
                continue;
            };

            // Harris ratio test: find the longest step that keeps every basic
            // variable within `tol` of its bounds, then leave on the largest
            // pivot among rows that block before that step
            let infinite = T::max_value().unwrap_or(T::lit(1e300));
            let range = match (self.lo[j], self.hi[j]) {
                (Some(l), Some(h)) => h - l,
                _ => infinite,
            };
            let blocking = |i: usize| -> Option<(T, T, bool)> {
                let alpha = dir * self.t[i * nc + j];
                if alpha.abs() <= self.piv_tol {
                    return None;
                }
                let b = self.basis[i];
                if alpha > T::zero() {
                    self.lo[b].map(|l| (self.beta[i] - l, alpha, false))
                } else {
                    self.hi[b].map(|h| (h - self.beta[i], -alpha, true))
                }
            };
            let mut relaxed = range;
            for i in 0..self.m {
                if let Some((dist, a, _)) = blocking(i) {
                    relaxed = relaxed.min((dist + self.tol) / a);
                }
            }
            if relaxed >= infinite {
                return LpStatus::Unbounded;
            }
            let mut step = range;
            let mut leave: Option<(usize, bool)> = None;
            if range > relaxed {
                let mut best: Option<(usize, T)> = None;
                for i in 0..self.m {
                    let Some((dist, a, _)) = blocking(i) else {
                        continue;
                    };
                    if dist / a > relaxed {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((k, _)) if bland => self.basis[i] < self.basis[k],
                        Some((_, ak)) => a > ak,
                    };
                    if better {
                        best = Some((i, a));
                    }
                }
                let (r, _) = best.expect("a row attains the relaxed step");
                let (dist, a, to_upper) = blocking(r).expect("blocking row");
                step = (dist / a).max(T::zero());
                leave = Some((r, to_upper));
            }
            self.iterations += 1;
            self.since_refactor += 1;
            if step <= self.tol {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            for i in 0..self.m {
                let a = self.t[i * nc + j];
                if a != T::zero() {
                    self.beta[i] -= dir * step * a;
                }
            }
            match leave {
                None => {
                    // bound flip of the entering variable
                    self.state[j] = match self.state[j] {
                        State::Lower => State::Upper,
                        _ => State::Lower,
                    };
                }
                Some((r, to_upper)) => {
                    let entering_value = self.nonbasic_value(j) + dir * step;
                    let b = self.basis[r];
                    self.state[b] = if to_upper { State::Upper } else { State::Lower };
                    self.state[j] = State::Basic;
                    self.basis[r] = j;
                    self.beta[r] = entering_value;
                    self.pivot(r, j, &mut d);
                }
            }
        }
    }

    fn values(&self) -> Vec<T> {
        let mut x = vec![T::zero(); self.ncols];
        for j in 0..self.ncols {
            if self.state[j] != State::Basic {
                x[j] = self.nonbasic_value(j);
            }
        }
        for (i, &b) in self.basis.iter().enumerate() {
            x[b] = self.beta[i];
        }
        x
    }

    fn run(mut self, lp: &LinearProgram<T>) -> LpSolution<T> {
        let limit = lp.max_iterations;
        let art0 = self.n_struct + self.m;
        if self.n_art > 0 {
            let mut c1 = vec![T::zero(); self.ncols];
            for c in c1.iter_mut().skip(art0) {
                *c = T::one();
            }
            let status = self.iterate(&c1, limit);
            let infeas = self.values()[art0..]
                .iter()
                .fold(T::zero(), |acc, &v| acc + v);
            if status == LpStatus::IterationLimit {
                return self.finish(lp, LpStatus::IterationLimit);
            }
            if infeas > self.tol * T::lit(10.0) * T::lit(self.n_art as f64).max(T::one()) {
                return self.finish(lp, LpStatus::Infeasible);
            }
            for j in art0..self.ncols {
                self.hi[j] = Some(T::zero());
                if self.state[j] != State::Basic {
                    self.state[j] = State::Lower;
                }
            }
        }
        let mut c2 = vec![T::zero(); self.ncols];
        c2[..self.n_struct].copy_from_slice(&lp.cost);
        let status = self.iterate(&c2, limit);
        self.finish(lp, status)
    }

    fn finish(&self, lp: &LinearProgram<T>, status: LpStatus) -> LpSolution<T> {
        let mut x = self.values();
        x.truncate(self.n_struct);
        // clamp round-off outside the variable box
        for (j, v) in x.iter_mut().enumerate() {
            if let Some(l) = lp.lo[j] {
                *v = v.max(l);
            }
            if let Some(h) = lp.hi[j] {
                *v = v.min(h);
            }
        }
        LpSolution {
            status,
            objective: lp.objective(&x),
            x,
            iterations: self.iterations,
        }
    }
}
