use nalgebra::{DMatrix, SymmetricEigen};

use super::{pooled_rows, EmbeddingProjection, ProjectionMeta};
use crate::batch::SequenceBatch;
use crate::error::{Error, Result};

/// Flips `v` so its largest-magnitude entry (first one on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top-2 principal directions of the centered rows with their eigenvalues and
/// the total variance. Uses the feature covariance when there are at least as
/// many rows as features, and the Gram matrix otherwise.
fn principal_directions(x: &DMatrix<f64>) -> ([Vec<f64>; 2], [f64; 2], f64) {
    let (n, m) = x.shape();
    let denom = (n - 1) as f64;
    let (evals, dirs): (Vec<f64>, Vec<Vec<f64>>) = if m <= n {
        let cov = (x.transpose() * x) / denom;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        order
            .iter()
            .map(|&i| (eig.eigenvalues[i].max(0.0), eig.eigenvectors.column(i).iter().copied().collect()))
            .unzip()
    } else {
        let gram = (x * x.transpose()) / denom;
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        order
            .iter()
            .map(|&i| {
                let lambda = eig.eigenvalues[i].max(0.0);
                let v = x.transpose() * eig.eigenvectors.column(i);
                let norm = v.norm();
                let v: Vec<f64> = if norm > 0.0 { v.iter().map(|a| a / norm).collect() } else { vec![0.0; m] };
                (lambda, v)
            })
            .unzip()
    };
    let total: f64 = evals.iter().sum();
    let mut d0 = dirs.first().cloned().unwrap_or_else(|| vec![0.0; m]);
    let mut d1 = dirs.get(1).cloned().unwrap_or_else(|| vec![0.0; m]);
    fix_sign(&mut d0);
    fix_sign(&mut d1);
    let e = [evals.first().copied().unwrap_or(0.0), evals.get(1).copied().unwrap_or(0.0)];
    ([d0, d1], e, total)
}

/// PCA of the pooled, centered, flattened sequences.
pub fn pca_project(real: &SequenceBatch, synthetic: &SequenceBatch) -> Result<EmbeddingProjection> {
    let (rows, labels) = pooled_rows(real, synthetic)?;
    let n = rows.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("PCA needs at least 3 sequences, got {n}")));
    }
    let m = rows[0].len();
    let mut x = DMatrix::from_fn(n, m, |i, j| rows[i][j]);
    for j in 0..m {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let (dirs, evals, total) = principal_directions(&x);
    let coords = (0..n)
        .map(|i| {
            let row = x.row(i);
            let p = |d: &[f64]| row.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
            [p(&dirs[0]), p(&dirs[1])]
        })
        .collect();
    let ratio = |e: f64| if total > 0.0 { (e / total).clamp(0.0, 1.0) } else { 0.0 };
    Ok(EmbeddingProjection {
        coords,
        labels,
        meta: ProjectionMeta::Pca { explained_variance_ratio: [ratio(evals[0]), ratio(evals[1])] },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(points: &[[f64; 2]]) -> SequenceBatch {
        SequenceBatch::from_flat(points.len(), 1, 2, points.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn rank_one_data() {
        let real = batch(&[[0.0, 1.0], [1.0, 1.0], [2.0, 1.0]]);
        let syn = batch(&[[3.0, 1.0], [4.0, 1.0]]);
        let p = pca_project(&real, &syn).unwrap();
        let ProjectionMeta::Pca { explained_variance_ratio: r } = p.meta else { panic!() };
        assert!((r[0] - 1.0).abs() < 1e-12 && r[1].abs() < 1e-12);
        // first component is the x axis, centered at 2
        for (c, x) in p.coords.iter().zip([0.0, 1.0, 2.0, 3.0, 4.0]) {
            assert!((c[0] - (x - 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_tiny_inputs() {
        assert!(pca_project(&batch(&[[0.0, 0.0]]), &batch(&[[1.0, 1.0]])).is_err());
    }
}
