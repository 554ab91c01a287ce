use crate::numerics::Tensor;

/// Sparse vector as `(coordinate, value)` pairs sorted by coordinate.
pub type SparseVec = Vec<(u32, f64)>;

/// Sparse linear map `y = M x` stored by output coordinate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseMap {
    dim_in: usize,
    dim_out: usize,
    rows: Vec<(u32, Vec<(u32, f64)>)>,
}

impl SparseMap {
    /// Builds a map from `(out, in, weight)` triples; repeated pairs add.
    pub fn from_entries(dim_in: usize, dim_out: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut dense: std::collections::BTreeMap<u32, std::collections::BTreeMap<u32, f64>> =
            Default::default();
        for &(o, i, w) in entries {
            assert!(o < dim_out && i < dim_in, "entry ({o},{i}) outside {dim_out}x{dim_in}");
            *dense.entry(o as u32).or_default().entry(i as u32).or_default() += w;
        }
        let rows = dense
            .into_iter()
            .map(|(o, row)| (o, row.into_iter().filter(|&(_, w)| w != 0.0).collect::<Vec<_>>()))
            .filter(|(_, row)| !row.is_empty())
            .collect();
        Self { dim_in, dim_out, rows }
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    /// `(out, in, weight)` triples in output order.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        self.rows
            .iter()
            .flat_map(|(o, row)| row.iter().map(move |&(i, w)| (*o as usize, i as usize, w)))
            .collect()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|(_, r)| r.len()).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|(o, r)| (*o, r.iter().map(|&(i, w)| (i, w * c)).collect()))
            .collect();
        Self { rows, ..*self }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim_out];
        for (o, row) in &self.rows {
            y[*o as usize] = row.iter().map(|&(i, w)| w * x[i as usize]).sum();
        }
        y
    }

    /// Output coordinates with at least one weight, ascending.
    pub fn support(&self) -> Vec<u32> {
        self.rows.iter().map(|(o, _)| *o).collect()
    }

    /// `M x` restricted to [`SparseMap::support`], in the same order.
    pub fn apply_compact(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.rows.iter().map(|(_, row)| row.iter().map(|&(i, w)| w * x[i as usize]).sum::<f64>()));
    }

    /// `M x` keeping only coordinates that are not exactly zero.
    pub fn apply_sparse(&self, x: &[f64]) -> SparseVec {
        self.rows
            .iter()
            .filter_map(|(o, row)| {
                let v: f64 = row.iter().map(|&(i, w)| w * x[i as usize]).sum();
                (v != 0.0).then_some((*o, v))
            })
            .collect()
    }

    /// Dense `[dim_out, dim_in]` matrix.
    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.dim_out, self.dim_in]);
        for (o, i, w) in self.entries() {
            t.row_mut(o)[i] = w;
        }
        t
    }
}

pub fn sparse_dot(dense: &[f64], sparse: &[(u32, f64)]) -> f64 {
    sparse.iter().map(|&(i, v)| dense[i as usize] * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_matches_dense() {
        let m = SparseMap::from_entries(3, 2, &[(0, 0, 1.0), (0, 2, -2.0), (1, 1, 0.5), (1, 1, 0.5)]);
        assert_eq!(m.apply(&[1.0, 3.0, 2.0]), vec![-3.0, 3.0]);
        assert_eq!(m.apply_sparse(&[2.0, 0.0, 1.0]), vec![]);
        let d = m.to_dense();
        assert_eq!(d.row(1), &[0.0, 1.0, 0.0]);
        assert_eq!(m.nnz(), 3);
    }
}
