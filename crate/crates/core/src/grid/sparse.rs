/// Compressed sparse rows with `u32` column indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRows {
    ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    ncols: usize,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        Self {
            ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            ncols,
        }
    }

    /// Append a row; entries must have distinct columns below `ncols`.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (c, v) in entries {
            debug_assert!(c < self.ncols);
            self.cols.push(c as u32);
            self.vals.push(v);
        }
        self.ptr.push(self.cols.len());
    }

    pub fn nrows(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.ptr[i]..self.ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (c, v) = self.row(i);
        c.iter().zip(v).map(|(&c, &v)| v * x[c as usize]).sum()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows()).map(|i| self.row_dot(i, x)).collect()
    }

    /// `out += Aᵀ y`
    pub fn mul_transpose_add(&self, y: &[f64], out: &mut [f64]) {
        assert_eq!(y.len(), self.nrows());
        assert_eq!(out.len(), self.ncols);
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let (c, v) = self.row(i);
            for (&c, &v) in c.iter().zip(v) {
                out[c as usize] += v * yi;
            }
        }
    }

    /// One row of `S · self`, where that row of `S` is a short list of
    /// `(row, coefficient)` pairs.
    pub(crate) fn combine_rows(&self, terms: &[(usize, f64)], acc: &mut RowAccumulator) -> Vec<(usize, f64)> {
        for &(r, k) in terms {
            let (c, v) = self.row(r);
            for (&c, &v) in c.iter().zip(v) {
                acc.add(c as usize, k * v);
            }
        }
        acc.drain()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.nrows())
            .map(|i| {
                let mut r = vec![0.0; self.ncols];
                let (c, v) = self.row(i);
                for (&c, &v) in c.iter().zip(v) {
                    r[c as usize] += v;
                }
                r
            })
            .collect()
    }
}

/// Dense scratch row with a touched-column list, reused across rows.
pub(crate) struct RowAccumulator {
    vals: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<usize>,
}

impl RowAccumulator {
    pub(crate) fn new(ncols: usize) -> Self {
        Self {
            vals: vec![0.0; ncols],
            seen: vec![false; ncols],
            touched: Vec::new(),
        }
    }

    pub(crate) fn add(&mut self, col: usize, v: f64) {
        if !self.seen[col] {
            self.seen[col] = true;
            self.touched.push(col);
        }
        self.vals[col] += v;
    }

    pub(crate) fn drain(&mut self) -> Vec<(usize, f64)> {
        self.touched.sort_unstable();
        let out = self
            .touched
            .iter()
            .map(|&c| {
                let v = self.vals[c];
                self.vals[c] = 0.0;
                self.seen[c] = false;
                (c, v)
            })
            .collect();
        self.touched.clear();
        out
    }
}
