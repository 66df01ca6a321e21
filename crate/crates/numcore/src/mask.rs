//! Boolean attention masks. `true` means "query row i may attend to key column j".

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<bool>,
}

impl BoolMat {
    pub fn all_true(rows: usize, cols: usize) -> Self {
        BoolMat { rows, cols, data: vec![true; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        BoolMat { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Index of the first row with no allowed key, if any.
    pub fn first_empty_row(&self) -> Option<usize> {
        (0..self.rows).find(|&i| !self.row(i).iter().any(|&b| b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_fn_layout_is_row_major() {
        let m = BoolMat::from_fn(2, 3, |i, j| i == 0 || j == 2);
        assert!(m.get(0, 0) && m.get(0, 1) && m.get(0, 2));
        assert!(!m.get(1, 0) && !m.get(1, 1) && m.get(1, 2));
    }

    #[test]
    fn detects_empty_rows() {
        let m = BoolMat::from_fn(3, 2, |i, _| i != 1);
        assert_eq!(m.first_empty_row(), Some(1));
        assert_eq!(BoolMat::all_true(2, 2).first_empty_row(), None);
    }
}
