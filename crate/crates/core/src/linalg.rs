use nalgebra::DMatrix;

/// Serde adapter storing a matrix as row-major nested arrays.
pub(crate) mod rows {
    use nalgebra::DMatrix;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("matrix rows have unequal lengths"));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

/// Symmetric eigen-decomposition with eigenpairs sorted by decreasing
/// eigenvalue.
pub(crate) fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Basis of the (numerical) null space of a symmetric PSD matrix.
pub(crate) fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (values, vectors) = sorted_eigen(m);
    let max = values.first().copied().unwrap_or(0.0).max(0.0);
    let keep: Vec<usize> = (0..values.len())
        .filter(|&i| values[i] <= rel_tol * max)
        .collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |r, c| vectors[(r, keep[c])])
}
