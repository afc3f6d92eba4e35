//! Minimal dense f64 matrices for the Q-network. Row-major storage,
//! naive loops; the network is tiny and reproducibility beats throughput.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * m);
        for r in &rows {
            assert_eq!(r.len(), m, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: n,
            cols: m,
            data,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self @ other`, (n x k)(k x m) -> (n x m).
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.get(i, l);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(l, j);
                }
            }
        }
        out
    }

    /// `self @ other^T`, (n x k)(m x k)^T -> (n x m).
    pub fn matmul_bt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_bt shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                let mut acc = 0.0;
                for l in 0..self.cols {
                    acc += self.get(i, l) * other.get(j, l);
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        out
    }

    /// `self^T @ other`, (k x n)^T(k x m) -> (n x m).
    pub fn matmul_at(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_at shape mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for l in 0..self.rows {
            for i in 0..self.cols {
                let a = self.get(l, i);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(l, j);
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "add shape mismatch"
        );
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Adds `v` to every row.
    pub fn add_row_vector(&mut self, v: &[f64]) {
        assert_eq!(self.cols, v.len());
        for r in 0..self.rows {
            for (a, b) in self.row_mut(r).iter_mut().zip(v) {
                *a += b;
            }
        }
    }

    pub fn relu(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x.max(0.0)).collect(),
        }
    }

    /// Elementwise product with the ReLU mask of `activated` (1 where > 0).
    pub fn mask_relu(&self, activated: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (activated.rows, activated.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&activated.data)
                .map(|(&g, &h)| if h > 0.0 { g } else { 0.0 })
                .collect(),
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, v) in out.iter_mut().zip(self.row(r)) {
                *s += v;
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let b = Matrix::from_rows(vec![vec![7.0, 8.0, 9.0], vec![10.0, 11.0, 12.0]]);
        let c = a.matmul(&b); // 3x3
        assert_eq!(c.row(0), &[27.0, 30.0, 33.0]);

        // a @ b == a @ (b^T)^T
        let bt = Matrix::from_rows(vec![
            vec![7.0, 10.0],
            vec![8.0, 11.0],
            vec![9.0, 12.0],
        ]);
        assert_eq!(a.matmul_bt(&bt), c);

        // (a^T)^T @ b == a @ b
        let at = Matrix::from_rows(vec![vec![1.0, 3.0, 5.0], vec![2.0, 4.0, 6.0]]);
        assert_eq!(at.matmul_at(&b), c);
    }

    #[test]
    fn relu_and_mask() {
        let x = Matrix::from_rows(vec![vec![-1.0, 2.0], vec![0.0, -3.0]]);
        let h = x.relu();
        assert_eq!(h.data, vec![0.0, 2.0, 0.0, 0.0]);
        let g = Matrix::from_rows(vec![vec![5.0, 5.0], vec![5.0, 5.0]]);
        assert_eq!(g.mask_relu(&h).data, vec![0.0, 5.0, 0.0, 0.0]);
    }
}
