//! Compressed-sparse-row storage with a fixed symmetric pattern.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix whose pattern holds the diagonal and both orientations of
    /// every edge. Column indices are sorted within each row.
    pub fn from_edges(n: usize, edges: &[[usize; 2]]) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &[a, b] in edges {
            if a >= n || b >= n {
                return Err(Error::Dimension(format!("edge ({a}, {b}) outside {n} vertices")));
            }
            if a != b {
                rows[a].push(b);
                rows[b].push(a);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend(r);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        Ok(CsrMatrix { n, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix { n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    /// Builds a matrix from dense rows, keeping nonzeros and the diagonal.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 || i == j {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Storage index of entry `(i, j)`, if it is in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) -> Result<()> {
        let k = self
            .position(i, j)
            .ok_or_else(|| Error::Dimension(format!("entry ({i}, {j}) not in sparsity pattern")))?;
        self.values[k] += v;
        Ok(())
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    /// Largest `|a_ij - a_ji|` over the pattern.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Linear system with a Dirichlet mask.
#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dirichlet: Vec<Option<f64>>,
}

impl SparseSystem {
    pub fn new(matrix: CsrMatrix, rhs: Vec<f64>) -> Result<Self> {
        if rhs.len() != matrix.nrows() {
            return Err(Error::Dimension(format!("rhs length {} vs {} rows", rhs.len(), matrix.nrows())));
        }
        let n = rhs.len();
        Ok(SparseSystem { matrix, rhs, dirichlet: vec![None; n] })
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    /// `A x - b` with the matrix and rhs as currently stored.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.matrix.matvec(x);
        for (ri, bi) in r.iter_mut().zip(&self.rhs) {
            *ri -= bi;
        }
        r
    }

    /// Replaces masked rows by identity rows and eliminates the masked
    /// columns from the remaining rows, which keeps a symmetric matrix
    /// symmetric. Applying it twice is harmless.
    pub fn apply_dirichlet(&mut self) -> Result<()> {
        if self.dirichlet.len() != self.rhs.len() {
            return Err(Error::Dimension(format!(
                "Dirichlet mask length {} vs {} rows",
                self.dirichlet.len(),
                self.rhs.len()
            )));
        }
        let m = &mut self.matrix;
        for i in 0..m.n {
            let range = m.row_ptr[i]..m.row_ptr[i + 1];
            match self.dirichlet[i] {
                Some(v) => {
                    for k in range {
                        m.values[k] = if m.col_idx[k] == i { 1.0 } else { 0.0 };
                    }
                    self.rhs[i] = v;
                }
                None => {
                    for k in range {
                        if let Some(v) = self.dirichlet[m.col_idx[k]] {
                            self.rhs[i] -= m.values[k] * v;
                            m.values[k] = 0.0;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_contains_diagonal_and_edges() {
        let m = CsrMatrix::from_edges(4, &[[0, 1], [1, 2], [2, 1]]).unwrap();
        assert_eq!(m.nnz(), 4 + 4);
        for i in 0..4 {
            assert!(m.position(i, i).is_some());
        }
        assert!(m.position(0, 1).is_some() && m.position(1, 0).is_some());
        assert!(m.position(0, 3).is_none());
        assert!(CsrMatrix::from_edges(2, &[[0, 2]]).is_err());
    }

    #[test]
    fn dirichlet_rows_and_columns() {
        let mut m = CsrMatrix::from_edges(3, &[[0, 1], [1, 2]]).unwrap();
        for (i, j, v) in [(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0), (1, 2, -1.0), (2, 1, -1.0), (2, 2, 2.0)]
        {
            m.add(i, j, v).unwrap();
        }
        let mut s = SparseSystem::new(m, vec![0.0, 0.0, 0.0]).unwrap();
        s.dirichlet[0] = Some(1.0);
        s.dirichlet[2] = Some(3.0);
        s.apply_dirichlet().unwrap();
        let snapshot = s.clone();
        s.apply_dirichlet().unwrap();
        assert_eq!(snapshot.rhs, s.rhs);
        assert_eq!(s.matrix.to_dense(), vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(s.rhs, vec![1.0, 4.0, 3.0]);
        assert_eq!(s.matrix.asymmetry(), 0.0);
        // x = (1, 2, 3) solves it
        assert!(s.residual(&[1.0, 2.0, 3.0]).iter().all(|r| *r == 0.0));
    }

    #[test]
    fn add_outside_pattern_fails() {
        let mut m = CsrMatrix::identity(3);
        assert!(m.add(0, 2, 1.0).is_err());
        assert_eq!(m.matvec(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
    }
}
