//! Dense revised simplex for `min cᵀx  s.t.  A x = b, x >= 0`.
//!
//! Columns are stored sparsely (compressed sparse column) because lifted
//! problems have very many columns with two or three nonzeros each, while the
//! number of rows stays small. The basis inverse is kept dense and
//! refactorised periodically.

use log::debug;
use ndarray::{Array1, Array2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    /// Nonzero primal entries `(column, value)`, sorted by column.
    pub primal: Vec<(usize, f64)>,
    /// Row duals `y` with `cⱼ - yᵀaⱼ >= 0` at optimality.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn value_of(&self, col: usize) -> f64 {
        self.primal
            .binary_search_by_key(&col, |&(j, _)| j)
            .map(|k| self.primal[k].1)
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    rhs: Vec<f64>,
    cost: Vec<f64>,
    col_start: Vec<usize>,
    row_idx: Vec<usize>,
    vals: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    pub max_iterations: usize,
    pub refactor_every: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            max_iterations: 200_000,
            refactor_every: 40,
        }
    }
}

impl LinearProgram {
    pub fn new(rhs: Vec<f64>) -> Self {
        LinearProgram {
            rhs,
            cost: Vec::new(),
            col_start: vec![0],
            row_idx: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cost.len()
    }

    /// Appends a column and returns its index. Zero entries are dropped.
    pub fn add_column(&mut self, cost: f64, entries: &[(usize, f64)]) -> usize {
        debug_assert!(cost.is_finite());
        for &(r, v) in entries {
            debug_assert!(r < self.rhs.len());
            if v != 0.0 {
                self.row_idx.push(r);
                self.vals.push(v);
            }
        }
        self.cost.push(cost);
        self.col_start.push(self.row_idx.len());
        self.cost.len() - 1
    }

    pub fn cost(&self, col: usize) -> f64 {
        self.cost[col]
    }

    fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.col_start[j], self.col_start[j + 1]);
        self.row_idx[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn solve(&self) -> LpSolution {
        self.solve_with(LpOptions::default())
    }

    pub fn solve_with(&self, opts: LpOptions) -> LpSolution {
        Simplex::new(self, opts).run()
    }
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-12;

struct Simplex<'a> {
    lp: &'a LinearProgram,
    opts: LpOptions,
    m: usize,
    n: usize,
    /// Row signs applied so that the working right-hand side is nonnegative.
    sign: Vec<f64>,
    b: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LinearProgram, opts: LpOptions) -> Self {
        let m = lp.n_rows();
        let n = lp.n_cols();
        let sign: Vec<f64> = lp.rhs.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
        let b: Vec<f64> = lp.rhs.iter().zip(&sign).map(|(v, s)| v * s).collect();
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = 1.0;
        }
        let mut is_basic = vec![false; n + m];
        for i in 0..m {
            is_basic[n + i] = true;
        }
        Simplex {
            lp,
            opts,
            m,
            n,
            xb: b.clone(),
            sign,
            b,
            basis: (n..n + m).collect(),
            is_basic,
            binv,
            iterations: 0,
            since_refactor: 0,
        }
    }

    /// Column `j` of the working matrix `[diag(sign)·A | I]`.
    fn col(&self, j: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if j < self.n {
            for (r, v) in self.lp.column(j) {
                out[r] += self.sign[r] * v;
            }
        } else {
            out[j - self.n] = 1.0;
        }
    }

    fn refactor(&mut self) -> bool {
        let m = self.m;
        let mut mat = vec![0.0; m * m];
        let mut c = vec![0.0; m];
        for (k, &j) in self.basis.iter().enumerate() {
            self.col(j, &mut c);
            for r in 0..m {
                mat[r * m + k] = c[r];
            }
        }
        match invert(&mut mat, m) {
            Some(inv) => {
                self.binv = inv;
                self.xb = self.apply_binv(&self.b);
                self.since_refactor = 0;
                true
            }
            None => false,
        }
    }

    fn apply_binv(&self, v: &[f64]) -> Vec<f64> {
        let m = self.m;
        (0..m)
            .map(|i| (0..m).map(|k| self.binv[i * m + k] * v[k]).sum())
            .collect()
    }

    fn duals(&self, costs: &dyn Fn(usize) -> f64) -> Vec<f64> {
        let m = self.m;
        let cb: Vec<f64> = self.basis.iter().map(|&j| costs(j)).collect();
        (0..m)
            .map(|k| (0..m).map(|i| cb[i] * self.binv[i * m + k]).sum())
            .collect()
    }

    fn reduced_cost(&self, j: usize, y: &[f64], costs: &dyn Fn(usize) -> f64) -> f64 {
        let mut d = costs(j);
        if j < self.n {
            for (r, v) in self.lp.column(j) {
                d -= y[r] * self.sign[r] * v;
            }
        } else {
            d -= y[j - self.n];
        }
        d
    }

    /// One simplex phase. `allowed(j)` says whether column `j` may enter.
    fn phase(&mut self, costs: &dyn Fn(usize) -> f64, allowed: &dyn Fn(usize) -> bool) -> LpStatus {
        let m = self.m;
        let mut u = vec![0.0; m];
        let mut a = vec![0.0; m];
        let mut degenerate_run = 0usize;
        loop {
            if self.iterations >= self.opts.max_iterations {
                return LpStatus::IterationLimit;
            }
            if self.since_refactor >= self.opts.refactor_every && !self.refactor() {
                debug!("simplex: singular basis during refactorisation");
            }
            let y = self.duals(costs);
            let bland = degenerate_run > 50;
            let mut entering = None;
            let mut best = -COST_TOL;
            for j in 0..self.n + m {
                if self.is_basic[j] || !allowed(j) {
                    continue;
                }
                let d = self.reduced_cost(j, &y, costs);
                let scale = 1.0 + costs(j).abs();
                if d < -COST_TOL * scale {
                    if bland {
                        entering = Some(j);
                        break;
                    }
                    let score = d / scale;
                    if score < best {
                        best = score;
                        entering = Some(j);
                    }
                }
            }
            let Some(q) = entering else {
                return LpStatus::Optimal;
            };
            self.col(q, &mut a);
            for i in 0..m {
                u[i] = (0..m).map(|k| self.binv[i * m + k] * a[k]).sum();
            }
            let mut leave = None;
            let mut ratio = f64::INFINITY;
            for i in 0..m {
                if u[i] > PIVOT_TOL {
                    let t = self.xb[i].max(0.0) / u[i];
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            if bland {
                                t < ratio - 1e-14 || (t <= ratio + 1e-14 && self.basis[i] < self.basis[l])
                            } else {
                                t < ratio - 1e-14 || (t <= ratio + 1e-14 && u[i] > u[l])
                            }
                        }
                    };
                    if better {
                        ratio = t;
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else {
                return LpStatus::Unbounded;
            };
            degenerate_run = if ratio <= 1e-14 { degenerate_run + 1 } else { 0 };
            self.pivot(r, q, &u, ratio);
        }
    }

    fn pivot(&mut self, r: usize, q: usize, u: &[f64], step: f64) {
        let m = self.m;
        for i in 0..m {
            if i != r {
                self.xb[i] -= step * u[i];
            }
        }
        self.xb[r] = step;
        let piv = u[r];
        for k in 0..m {
            self.binv[r * m + k] /= piv;
        }
        for i in 0..m {
            if i != r && u[i] != 0.0 {
                let f = u[i];
                for k in 0..m {
                    self.binv[i * m + k] -= f * self.binv[r * m + k];
                }
            }
        }
        self.is_basic[self.basis[r]] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
        self.iterations += 1;
        self.since_refactor += 1;
    }

    fn run(mut self) -> LpSolution {
        let n = self.n;
        let m = self.m;
        let scale = 1.0 + self.b.iter().fold(0.0f64, |a, &v| a.max(v));

        // Phase 1: drive the artificials to zero.
        let phase1_cost = |j: usize| if j >= n { 1.0 } else { 0.0 };
        let status = self.phase(&phase1_cost, &|_| true);
        self.refactor();
        let infeas: f64 = self
            .basis
            .iter()
            .zip(&self.xb)
            .filter(|(&j, _)| j >= n)
            .map(|(_, &v)| v.max(0.0))
            .sum();
        if status == LpStatus::IterationLimit {
            return self.finish(LpStatus::IterationLimit);
        }
        if infeas > 1e-9 * scale {
            debug!("simplex: phase 1 residual {infeas:e}");
            return self.finish(LpStatus::Infeasible);
        }

        // Pivot zero-level artificials out where possible; rows where this is
        // impossible are redundant.
        let mut a = vec![0.0; m];
        for r in 0..m {
            if self.basis[r] < n {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..n {
                if self.is_basic[j] {
                    continue;
                }
                self.col(j, &mut a);
                let ur: f64 = (0..m).map(|k| self.binv[r * m + k] * a[k]).sum();
                if ur.abs() > 1e-9 && best.is_none_or(|(_, b)| ur.abs() > b) {
                    best = Some((j, ur.abs()));
                }
            }
            if let Some((j, _)) = best {
                self.col(j, &mut a);
                let u: Vec<f64> = (0..m)
                    .map(|i| (0..m).map(|k| self.binv[i * m + k] * a[k]).sum())
                    .collect();
                self.pivot(r, j, &u, 0.0);
            }
        }
        self.refactor();

        let lp = self.lp;
        let phase2_cost = |j: usize| if j < n { lp.cost[j] } else { 0.0 };
        let status = self.phase(&phase2_cost, &|j| j < n);
        self.refactor();
        self.finish(status)
    }

    fn finish(self, status: LpStatus) -> LpSolution {
        let n = self.n;
        let mut primal: Vec<(usize, f64)> = self
            .basis
            .iter()
            .zip(&self.xb)
            .filter(|(&j, &v)| j < n && v > 0.0)
            .map(|(&j, &v)| (j, v))
            .collect();
        primal.sort_by_key(|&(j, _)| j);
        let objective = primal.iter().map(|&(j, v)| self.lp.cost[j] * v).sum();
        let lp = self.lp;
        let y = self.duals(&|j| if j < n { lp.cost[j] } else { 0.0 });
        let duals = y.iter().zip(&self.sign).map(|(v, s)| v * s).collect();
        LpSolution {
            status,
            objective,
            primal,
            duals,
            iterations: self.iterations,
        }
    }
}

/// Classical balanced transport `min (c, γ)` over couplings of `mu0` and `mu1`.
/// Pairs with infinite cost are excluded. Returns the dense plan (zero unless
/// the status is optimal) and the raw LP solution; row duals are ordered as
/// `mu0` rows followed by `mu1` rows.
pub fn transport_lp(mu0: &Array1<f64>, mu1: &Array1<f64>, cost: &Array2<f64>) -> (Array2<f64>, LpSolution) {
    let (n0, n1) = (mu0.len(), mu1.len());
    let rhs: Vec<f64> = mu0.iter().chain(mu1.iter()).copied().collect();
    let mut lp = LinearProgram::new(rhs);
    let mut cells = Vec::new();
    for i in 0..n0 {
        for j in 0..n1 {
            let c = cost[[i, j]];
            if c.is_finite() {
                lp.add_column(c, &[(i, 1.0), (n0 + j, 1.0)]);
                cells.push((i, j));
            }
        }
    }
    let sol = lp.solve();
    let mut plan = Array2::zeros((n0, n1));
    if sol.status == LpStatus::Optimal {
        for &(k, v) in &sol.primal {
            plan[cells[k]] = v;
        }
    }
    (plan, sol)
}

/// Inverse of a dense row-major `m × m` matrix by Gauss–Jordan elimination with
/// partial pivoting.
fn invert(mat: &mut [f64], m: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; m * m];
    for i in 0..m {
        inv[i * m + i] = 1.0;
    }
    for col in 0..m {
        let piv = (col..m).max_by(|&a, &b| mat[a * m + col].abs().partial_cmp(&mat[b * m + col].abs()).unwrap())?;
        if mat[piv * m + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..m {
                mat.swap(piv * m + k, col * m + k);
                inv.swap(piv * m + k, col * m + k);
            }
        }
        let d = mat[col * m + col];
        for k in 0..m {
            mat[col * m + k] /= d;
            inv[col * m + k] /= d;
        }
        for i in 0..m {
            if i != col {
                let f = mat[i * m + col];
                if f != 0.0 {
                    for k in 0..m {
                        mat[i * m + k] -= f * mat[col * m + k];
                        inv[i * m + k] -= f * inv[col * m + k];
                    }
                }
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_transport_problem() {
        // 2x2 transport, supplies (1, 2), demands (2, 1), cost [[1, 3], [2, 1]].
        let mut lp = LinearProgram::new(vec![1.0, 2.0, 2.0, 1.0]);
        let costs = [[1.0, 3.0], [2.0, 1.0]];
        for i in 0..2 {
            for j in 0..2 {
                lp.add_column(costs[i][j], &[(i, 1.0), (2 + j, 1.0)]);
            }
        }
        let sol = lp.solve();
        assert_eq!(sol.status, LpStatus::Optimal);
        // x00 = 1, x10 = 1, x11 = 1.
        assert!((sol.objective - 4.0).abs() < 1e-12);
        // Complementary slackness: reduced costs nonnegative.
        for i in 0..2 {
            for j in 0..2 {
                let d = costs[i][j] - sol.duals[i] - sol.duals[2 + j];
                assert!(d > -1e-10);
            }
        }
    }

    #[test]
    fn infeasible_detected() {
        // x0 = 1 and x0 = 2.
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.add_column(1.0, &[(0, 1.0), (1, 1.0)]);
        assert_eq!(lp.solve().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        // x0 - x1 = 1, minimise -x0.
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_column(-1.0, &[(0, 1.0)]);
        lp.add_column(0.0, &[(0, -1.0)]);
        assert_eq!(lp.solve().status, LpStatus::Unbounded);
    }

    #[test]
    fn redundant_rows_are_harmless() {
        // Balanced transport has one redundant row.
        let mut lp = LinearProgram::new(vec![0.5, 0.5, 0.5, 0.5]);
        for i in 0..2 {
            for j in 0..2 {
                let c = if i == j { 0.0 } else { 1.0 };
                lp.add_column(c, &[(i, 1.0), (2 + j, 1.0)]);
            }
        }
        let sol = lp.solve();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.objective.abs() < 1e-14);
    }

    #[test]
    fn negative_rhs_rows_are_flipped() {
        // -x0 = -3, minimise x0 + x1 with x1 free of constraints -> 3.
        let mut lp = LinearProgram::new(vec![-3.0]);
        lp.add_column(1.0, &[(0, -1.0)]);
        let sol = lp.solve();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 3.0).abs() < 1e-14);
        assert!((sol.value_of(0) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn brute_force_agreement_on_random_transport() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a: f64 = rng.random_range(0.1..1.0);
            let b: f64 = rng.random_range(0.1..1.0);
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0)).collect();
            let mut lp = LinearProgram::new(vec![a, 1.0 - a, b, 1.0 - b]);
            for i in 0..2 {
                for j in 0..2 {
                    lp.add_column(c[2 * i + j], &[(i, 1.0), (2 + j, 1.0)]);
                }
            }
            // The 2x2 polytope is a segment in x00.
            let lo = (a - (1.0 - b)).max(0.0);
            let hi = a.min(b);
            let val = |t: f64| c[0] * t + c[1] * (a - t) + c[2] * (b - t) + c[3] * (1.0 - a - b + t);
            let want = val(lo).min(val(hi));
            assert!((lp.solve().objective - want).abs() < 1e-12);
        }
    }
}
