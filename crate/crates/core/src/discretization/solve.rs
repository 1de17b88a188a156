//! Linear solvers for assembled [`SparseSystem`]s.
//!
//! The default is a banded LU factorization without pivoting on a reverse
//! Cuthill-McKee ordering. Both the Poisson Jacobian and the EAFE matrices are
//! M-matrices after Dirichlet elimination, for which unpivoted elimination is
//! stable and returns a nonnegative solution for a nonnegative right-hand
//! side. Krylov alternatives are available for larger meshes.

use std::collections::VecDeque;

use serde::Deserialize;

use super::sparse::{CsrMatrix, SparseSystem};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Direct,
    /// Conjugate gradients with Jacobi preconditioning (symmetric systems only).
    Cg,
    /// BiCGSTAB with ILU(0) preconditioning.
    Bicgstab,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub kind: SolverKind,
    /// Relative residual target `||Ax - b|| <= tol ||b||`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { kind: SolverKind::Direct, tol: 1e-10, max_iter: 5000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSolveReport {
    pub iterations: usize,
    /// Final relative residual norm.
    pub residual: f64,
    pub converged: bool,
}

/// Relative pivot size below which the matrix is declared singular.
const PIVOT_TOL: f64 = 1e-13;
const REFINEMENT_STEPS: usize = 5;

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64], bnorm: f64) -> (Vec<f64>, f64) {
    let mut r = a.matvec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let rn = norm2(&r);
    (r, rn / bnorm)
}

/// Solves the system as stored. Dirichlet rows must already be applied.
///
/// Iterative methods that stall return `converged = false`; a singular
/// matrix under the direct method is reported as [`Error::ZeroPivot`].
pub fn solve(system: &SparseSystem, opts: &SolverOptions) -> Result<(Vec<f64>, LinearSolveReport)> {
    let n = system.len();
    let a = &system.matrix;
    if a.nrows() != n {
        return Err(Error::Dimension(format!("matrix has {} rows, rhs {}", a.nrows(), n)));
    }
    if let Some(i) = system.rhs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { field: "rhs", node: i });
    }
    if let Some(k) = a.values().iter().position(|v| !v.is_finite()) {
        let row = a.row_ptr().partition_point(|&p| p <= k) - 1;
        return Err(Error::NonFinite { field: "matrix", node: row });
    }
    let b = &system.rhs;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], LinearSolveReport { iterations: 0, residual: 0.0, converged: true }));
    }
    let (x, report) = match opts.kind {
        SolverKind::Direct => direct(a, b, bnorm, opts)?,
        SolverKind::Cg => cg(a, b, bnorm, opts),
        SolverKind::Bicgstab => bicgstab(a, b, bnorm, opts)?,
    };
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { field: "solution", node: i });
    }
    Ok((x, report))
}

/// Reverse Cuthill-McKee ordering; returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let degree: Vec<usize> = (0..n).map(|i| a.row_ptr()[i + 1] - a.row_ptr()[i]).collect();
    let neighbours = |i: usize| a.col_idx()[a.row_ptr()[i]..a.row_ptr()[i + 1]].iter().copied().filter(move |&j| j != i);
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs = |start: usize, visited: &mut Vec<bool>, order: &mut Vec<usize>| {
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = neighbours(v).filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    };
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // Pseudo-peripheral start: the minimum-degree node of the last BFS level.
        let mut probe_visited = visited.clone();
        let mut probe = Vec::new();
        bfs(seed, &mut probe_visited, &mut probe);
        let start = *probe.iter().rev().take(64).min_by_key(|&&w| (degree[w], w)).unwrap_or(&seed);
        bfs(start, &mut visited, &mut order);
    }
    order.reverse();
    order
}

/// Banded LU factors of `P A P^T` without pivoting.
pub struct BandLu {
    n: usize,
    bw: usize,
    width: usize,
    band: Vec<f64>,
    perm: Vec<usize>,
}

impl BandLu {
    pub fn factor(a: &CsrMatrix) -> Result<BandLu> {
        let n = a.nrows();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut bw = 0;
        for i in 0..n {
            for (j, v) in a.row(i) {
                if v != 0.0 {
                    bw = bw.max(inv[i].abs_diff(inv[j]));
                }
            }
        }
        let width = 2 * bw + 1;
        let mut band = vec![0.0; n * width];
        let mut col_scale = vec![0.0; n];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if v != 0.0 {
                    let (pi, pj) = (inv[i], inv[j]);
                    band[pi * width + (pj + bw - pi)] += v;
                    col_scale[pj] += v.abs();
                }
            }
        }
        for k in 0..n {
            let pivot = band[k * width + bw];
            if !(pivot.abs() > PIVOT_TOL * col_scale[k]) {
                return Err(Error::ZeroPivot { row: perm[k], pivot: pivot.abs() });
            }
            let jmax = (k + bw).min(n - 1);
            let (upper, lower) = band.split_at_mut((k + 1) * width);
            let pivot_row = &upper[k * width + bw + 1..k * width + bw + 1 + (jmax - k)];
            for i in k + 1..=jmax {
                let row = &mut lower[(i - k - 1) * width..(i - k) * width];
                let lk = k + bw - i;
                let l = row[lk];
                if l == 0.0 {
                    continue;
                }
                let l = l / pivot;
                row[lk] = l;
                let start = lk + 1;
                for (dst, src) in row[start..start + (jmax - k)].iter_mut().zip(pivot_row) {
                    *dst -= l * src;
                }
            }
        }
        Ok(BandLu { n, bw, width, band, perm })
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.width);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.band[i * w..(i + 1) * w];
            let mut s = y[i];
            for j in lo..i {
                s -= row[j + bw - i] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let row = &self.band[i * w..(i + 1) * w];
            let mut s = y[i];
            for j in i + 1..=hi {
                s -= row[j + bw - i] * y[j];
            }
            y[i] = s / row[bw];
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// `b - A x` accumulated with error-free transformations, so that the
/// residual of an accurate solution is not swamped by cancellation.
fn compensated_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let (rp, ci, v) = (a.row_ptr(), a.col_idx(), a.values());
    (0..b.len())
        .map(|i| {
            let (mut s, mut c) = (b[i], 0.0);
            for k in rp[i]..rp[i + 1] {
                let prod = -v[k] * x[ci[k]];
                let prod_err = (-v[k]).mul_add(x[ci[k]], -prod);
                let t = s + prod;
                let z = t - s;
                c += (s - (t - z)) + (prod - z) + prod_err;
                s = t;
            }
            s + c
        })
        .collect()
}

fn direct(a: &CsrMatrix, b: &[f64], bnorm: f64, opts: &SolverOptions) -> Result<(Vec<f64>, LinearSolveReport)> {
    let lu = BandLu::factor(a)?;
    let mut x = lu.solve(b);
    let mut r = compensated_residual(a, &x, b);
    let mut rn = norm2(&r);
    let mut iterations = 1;
    // refine until the residual stops shrinking, independent of `tol`
    while rn > 0.0 && iterations <= REFINEMENT_STEPS {
        let dx = lu.solve(&r);
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(xi, d)| xi + d).collect();
        let r_trial = compensated_residual(a, &trial, b);
        let rn_trial = norm2(&r_trial);
        iterations += 1;
        if !(rn_trial < rn) {
            break;
        }
        let gain = rn_trial / rn;
        (x, r, rn) = (trial, r_trial, rn_trial);
        if gain > 0.5 {
            break;
        }
    }
    let res = rn / bnorm;
    Ok((x, LinearSolveReport { iterations, residual: res, converged: res <= opts.tol }))
}

fn cg(a: &CsrMatrix, b: &[f64], bnorm: f64, opts: &SolverOptions) -> (Vec<f64>, LinearSolveReport) {
    let n = b.len();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = 1.0;
    for it in 1..=opts.max_iter {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return (x, LinearSolveReport { iterations: it, residual: res, converged: false });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm2(&r) / bnorm;
        if res <= opts.tol {
            let (_, true_res) = relative_residual(a, &x, b, bnorm);
            return (x, LinearSolveReport { iterations: it, residual: true_res, converged: true_res <= opts.tol });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (x, LinearSolveReport { iterations: opts.max_iter, residual: res, converged: false })
}

/// Incomplete LU with zero fill on the pattern of `a`.
struct Ilu0 {
    lu: CsrMatrix,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &CsrMatrix) -> Result<Ilu0> {
        let n = a.nrows();
        let mut lu = a.clone();
        let diag_pos: Vec<usize> = (0..n)
            .map(|i| lu.position(i, i).ok_or_else(|| Error::Dimension(format!("row {i} has no diagonal"))))
            .collect::<Result<_>>()?;
        let rp = lu.row_ptr().to_vec();
        let ci = lu.col_idx().to_vec();
        let vals = lu.values_mut();
        for i in 0..n {
            for kk in rp[i]..diag_pos[i] {
                let k = ci[kk];
                let pivot = vals[diag_pos[k]];
                if pivot == 0.0 {
                    return Err(Error::ZeroPivot { row: k, pivot: 0.0 });
                }
                let l = vals[kk] / pivot;
                vals[kk] = l;
                // row_i -= l * U(k, :) on the shared pattern
                let (mut p, end_i) = (kk + 1, rp[i + 1]);
                for q in diag_pos[k] + 1..rp[k + 1] {
                    let col = ci[q];
                    while p < end_i && ci[p] < col {
                        p += 1;
                    }
                    if p < end_i && ci[p] == col {
                        vals[p] -= l * vals[q];
                    }
                }
            }
            if vals[diag_pos[i]] == 0.0 {
                return Err(Error::ZeroPivot { row: i, pivot: 0.0 });
            }
        }
        Ok(Ilu0 { lu, diag_pos })
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        let (rp, ci, v) = (self.lu.row_ptr(), self.lu.col_idx(), self.lu.values());
        for i in 0..n {
            let mut s = r[i];
            for k in rp[i]..self.diag_pos[i] {
                s -= v[k] * z[ci[k]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in self.diag_pos[i] + 1..rp[i + 1] {
                s -= v[k] * z[ci[k]];
            }
            z[i] = s / v[self.diag_pos[i]];
        }
    }
}

fn bicgstab(a: &CsrMatrix, b: &[f64], bnorm: f64, opts: &SolverOptions) -> Result<(Vec<f64>, LinearSolveReport)> {
    let n = b.len();
    let m = Ilu0::new(a)?;
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = 1.0;
    for it in 1..=opts.max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Ok((x, LinearSolveReport { iterations: it, residual: res, converged: false }));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        m.apply(&p, &mut phat);
        a.matvec_into(&phat, &mut v);
        alpha = rho / dot(&r0, &v);
        let mut s = r.clone();
        for i in 0..n {
            s[i] -= alpha * v[i];
        }
        if norm2(&s) / bnorm <= opts.tol {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            let (_, true_res) = relative_residual(a, &x, b, bnorm);
            return Ok((x, LinearSolveReport { iterations: it, residual: true_res, converged: true_res <= opts.tol }));
        }
        m.apply(&s, &mut shat);
        a.matvec_into(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm2(&r) / bnorm;
        if res <= opts.tol {
            let (_, true_res) = relative_residual(a, &x, b, bnorm);
            if true_res <= opts.tol {
                return Ok((x, LinearSolveReport { iterations: it, residual: true_res, converged: true }));
            }
        }
        if !res.is_finite() {
            return Ok((x, LinearSolveReport { iterations: it, residual: res, converged: false }));
        }
    }
    Ok((x, LinearSolveReport { iterations: opts.max_iter, residual: res, converged: false }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn laplacian_1d(n: usize, shift: f64) -> CsrMatrix {
        let edges: Vec<[usize; 2]> = (0..n - 1).map(|i| [i, i + 1]).collect();
        let mut m = CsrMatrix::from_edges(n, &edges).unwrap();
        for &[i, j] in &edges {
            m.add(i, i, 1.0).unwrap();
            m.add(j, j, 1.0).unwrap();
            m.add(i, j, -1.0).unwrap();
            m.add(j, i, -1.0).unwrap();
        }
        for i in 0..n {
            m.add(i, i, shift).unwrap();
        }
        m
    }

    fn all_kinds() -> [SolverOptions; 3] {
        [SolverKind::Direct, SolverKind::Cg, SolverKind::Bicgstab]
            .map(|kind| SolverOptions { kind, ..Default::default() })
    }

    #[test]
    fn identity_returns_rhs() {
        let b = vec![1.0, -2.0, 3.5];
        let s = SparseSystem::new(CsrMatrix::identity(3), b.clone()).unwrap();
        for o in all_kinds() {
            let (x, rep) = solve(&s, &o).unwrap();
            assert_eq!(x, b);
            assert!(rep.converged);
        }
    }

    #[test]
    fn spd_system_all_solvers() {
        let n = 50;
        let mut s = SparseSystem::new(laplacian_1d(n, 0.0), vec![1.0; n]).unwrap();
        s.dirichlet[0] = Some(0.0);
        s.apply_dirichlet().unwrap();
        let (x_ref, _) = solve(&s, &SolverOptions::default()).unwrap();
        // x_i = i (n - 1) - i (i - 1) / 2 for -x'' = 1, x(0) = 0, natural right end
        for (i, xi) in x_ref.iter().enumerate() {
            let i = i as f64;
            let exact = i * (n as f64 - 1.0) - i * (i - 1.0) / 2.0;
            assert!((xi - exact).abs() < 1e-9 * exact.max(1.0));
        }
        for o in all_kinds() {
            let (x, rep) = solve(&s, &o).unwrap();
            assert!(rep.converged, "{:?}", o.kind);
            assert!(rep.residual <= 1e-10);
            for (a, b) in x.iter().zip(&x_ref) {
                assert!((a - b).abs() < 1e-6 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn nonsymmetric_system() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let n = 40;
        let edges: Vec<[usize; 2]> = (0..n - 1).map(|i| [i, i + 1]).chain((0..n - 5).map(|i| [i, i + 5])).collect();
        let mut m = CsrMatrix::from_edges(n, &edges).unwrap();
        for &[i, j] in &edges {
            let (u, v): (f64, f64) = (rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0));
            m.add(i, j, -u).unwrap();
            m.add(j, i, -v).unwrap();
            m.add(j, j, u).unwrap();
            m.add(i, i, v).unwrap();
        }
        for i in 0..n {
            m.add(i, i, 0.05).unwrap();
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s = SparseSystem::new(m, b).unwrap();
        let (xd, _) = solve(&s, &SolverOptions::default()).unwrap();
        assert!(xd.iter().all(|x| *x > 0.0), "M-matrix inverse is positive");
        let (xb, rep) = solve(&s, &SolverOptions { kind: SolverKind::Bicgstab, ..Default::default() }).unwrap();
        assert!(rep.converged);
        for (a, b) in xd.iter().zip(&xb) {
            assert!((a - b).abs() < 1e-7 * b.abs());
        }
    }

    #[test]
    fn singular_system_is_reported() {
        let n = 20;
        let s = SparseSystem::new(laplacian_1d(n, 0.0), (0..n).map(|i| i as f64).collect()).unwrap();
        assert!(matches!(solve(&s, &SolverOptions::default()), Err(Error::ZeroPivot { .. })));
        for kind in [SolverKind::Cg, SolverKind::Bicgstab] {
            match solve(&s, &SolverOptions { kind, max_iter: 200, ..Default::default() }) {
                Ok((_, rep)) => assert!(!rep.converged, "{kind:?}"),
                Err(_) => {}
            }
        }
    }

    #[test]
    fn deterministic() {
        let n = 30;
        let s = SparseSystem::new(laplacian_1d(n, 0.1), (0..n).map(|i| (i as f64).sin()).collect()).unwrap();
        for o in all_kinds() {
            let (a, _) = solve(&s, &o).unwrap();
            let (b, _) = solve(&s, &o).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rcm_is_permutation() {
        let m = laplacian_1d(17, 0.0);
        let mut p = reverse_cuthill_mckee(&m);
        p.sort_unstable();
        assert_eq!(p, (0..17).collect::<Vec<_>>());
        let lu = BandLu::factor(&laplacian_1d(17, 1.0)).unwrap();
        assert_eq!(lu.bandwidth(), 1);
    }
}
