//! Affine parametrization of `{z : A z = b}` by Gauss-Jordan elimination with
//! complete pivoting. Redundant rows are detected and dropped; inconsistent
//! ones are reported.

use nalgebra::{DMatrix, DVector};

/// `z = particular + basis * y`, where `y` are the values of the free
/// variables (`basis` restricted to `free` rows is the identity).
#[derive(Debug, Clone)]
pub struct AffineParametrization {
    pub particular: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub free: Vec<usize>,
    pub pivots: Vec<usize>,
    /// Original indices of the linearly independent rows, paired with `pivots`.
    pub independent_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inconsistent {
    pub row: usize,
    pub residual: f64,
}

impl AffineParametrization {
    pub fn dim(&self) -> usize {
        self.free.len()
    }

    pub fn point(&self, y: &DVector<f64>) -> DVector<f64> {
        if y.is_empty() {
            return self.particular.clone();
        }
        &self.particular + &self.basis * y
    }

    /// Coordinates of `z` in the parametrization (its free components).
    pub fn coordinates(&self, z: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| z[i]))
    }
}

pub fn eliminate(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    pivot_tol: f64,
    consistency_tol: f64,
) -> Result<AffineParametrization, Inconsistent> {
    let (rows, cols) = a.shape();
    // row-major working copy of [A | b]
    let width = cols + 1;
    let mut w = vec![0.0; rows * width];
    for i in 0..rows {
        for j in 0..cols {
            w[i * width + j] = a[(i, j)];
        }
        w[i * width + cols] = b[i];
    }
    let scale = a.amax().max(1.0);
    let mut row_index: Vec<usize> = (0..rows).collect();
    let mut is_pivot = vec![false; cols];
    let mut pivots = Vec::new();
    let mut rank = 0;
    while rank < rows.min(cols) {
        let mut best = 0.0;
        let mut at = (0, 0);
        for i in rank..rows {
            let row = &w[i * width..i * width + cols];
            for (j, v) in row.iter().enumerate() {
                if !is_pivot[j] && v.abs() > best {
                    best = v.abs();
                    at = (i, j);
                }
            }
        }
        if best <= pivot_tol * scale {
            break;
        }
        let (pi, pj) = at;
        if pi != rank {
            for j in 0..width {
                w.swap(rank * width + j, pi * width + j);
            }
            row_index.swap(rank, pi);
        }
        let inv = 1.0 / w[rank * width + pj];
        for j in 0..width {
            w[rank * width + j] *= inv;
        }
        w[rank * width + pj] = 1.0;
        let pivot_row: Vec<f64> = w[rank * width..(rank + 1) * width].to_vec();
        for i in 0..rows {
            if i == rank {
                continue;
            }
            let f = w[i * width + pj];
            if f == 0.0 {
                continue;
            }
            let row = &mut w[i * width..(i + 1) * width];
            for (x, p) in row.iter_mut().zip(&pivot_row) {
                if *p != 0.0 {
                    *x -= f * p;
                }
            }
            row[pj] = 0.0;
        }
        is_pivot[pj] = true;
        pivots.push(pj);
        rank += 1;
    }
    for i in rank..rows {
        let residual = w[i * width + cols].abs();
        if residual > consistency_tol * b.amax().max(1.0) {
            return Err(Inconsistent {
                row: row_index[i],
                residual,
            });
        }
    }
    let free: Vec<usize> = (0..cols).filter(|&j| !is_pivot[j]).collect();
    let mut particular = DVector::zeros(cols);
    let mut basis = DMatrix::zeros(cols, free.len());
    for (c, &f) in free.iter().enumerate() {
        basis[(f, c)] = 1.0;
    }
    for (k, &p) in pivots.iter().enumerate() {
        particular[p] = w[k * width + cols];
        for (c, &f) in free.iter().enumerate() {
            basis[(p, c)] = -w[k * width + f];
        }
    }
    Ok(AffineParametrization {
        particular,
        basis,
        free,
        pivots,
        independent_rows: row_index[..rank].to_vec(),
    })
}
