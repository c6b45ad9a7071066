use seqdiff::projection::{pca_project, tsne_project, Origin, ProjectionMeta, TsneConfig};
use seqdiff::rng;
use seqdiff::SequenceBatch;

fn points(rows: &[[f64; 2]]) -> SequenceBatch {
    SequenceBatch::from_flat(rows.len(), 1, 2, rows.concat()).unwrap()
}

#[test]
fn pca_matches_hand_eigendecomposition() {
    // Pooled points (2,0), (-2,0), (0,1), (0,-1): mean zero, covariance
    // diag(8/3, 2/3), so the axes are already principal and the ratios are 0.8 / 0.2.
    let real = points(&[[2.0, 0.0], [-2.0, 0.0]]);
    let syn = points(&[[0.0, 1.0], [0.0, -1.0]]);
    let proj = pca_project(&real, &syn).unwrap();
    let ProjectionMeta::Pca { explained_variance_ratio } = proj.meta else { panic!("not pca") };
    assert!((explained_variance_ratio[0] - 0.8).abs() < 1e-12);
    assert!((explained_variance_ratio[1] - 0.2).abs() < 1e-12);
    let expected: [[f64; 2]; 4] = [[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
    for (got, want) in proj.coords.iter().zip(expected) {
        assert!((got[0].abs() - want[0].abs()).abs() < 1e-12 && (got[1].abs() - want[1].abs()).abs() < 1e-12);
    }
    assert_eq!(proj.labels, vec![Origin::Real, Origin::Real, Origin::Synthetic, Origin::Synthetic]);
}

#[test]
fn pca_ignores_point_order_up_to_permutation() {
    let a = points(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]]);
    let b = points(&[[2.0, 2.0], [-1.0, 0.0], [4.0, 1.0]]);
    let fwd = pca_project(&a, &b).unwrap();
    let rev = pca_project(&a.select(&[2, 1, 0]), &b.select(&[2, 1, 0])).unwrap();
    for (i, j) in [(0, 2), (1, 1), (2, 0), (3, 5), (4, 4), (5, 3)] {
        for c in 0..2 {
            assert!((fwd.coords[i][c] - rev.coords[j][c]).abs() < 1e-9);
        }
    }
}

#[test]
fn pca_needs_three_points() {
    assert!(pca_project(&points(&[[0.0, 0.0]]), &points(&[[1.0, 1.0]])).is_err());
}

#[test]
fn tsne_separates_two_clusters() {
    let noise = rng::standard_normal(&mut rng::seeded(1), 100 * 4);
    let rows = |offset: f64, part: &[f64]| {
        SequenceBatch::from_flat(50, 2, 2, part.iter().map(|z| offset + 0.1 * z).collect()).unwrap()
    };
    let real = rows(0.0, &noise[..200]);
    let syn = rows(5.0, &noise[200..]);
    let cfg = TsneConfig { perplexity: 10.0, iterations: 300, learning_rate: None };
    let proj = tsne_project(&real, &syn, &cfg, &mut rng::seeded(2)).unwrap();
    assert_eq!(proj.len(), 100);
    assert!(proj.coords.iter().all(|c| c[0].is_finite() && c[1].is_finite()));

    // Best threshold on the best single axis of the centroid difference.
    let centroid = |o: Origin| {
        let pts: Vec<_> = proj.coords.iter().zip(&proj.labels).filter(|(_, l)| **l == o).map(|(c, _)| *c).collect();
        let n = pts.len() as f64;
        [pts.iter().map(|c| c[0]).sum::<f64>() / n, pts.iter().map(|c| c[1]).sum::<f64>() / n]
    };
    let (cr, cs) = (centroid(Origin::Real), centroid(Origin::Synthetic));
    let dir = [cs[0] - cr[0], cs[1] - cr[1]];
    let mid = [(cr[0] + cs[0]) / 2.0, (cr[1] + cs[1]) / 2.0];
    let correct = proj
        .coords
        .iter()
        .zip(&proj.labels)
        .filter(|(c, l)| {
            let side = (c[0] - mid[0]) * dir[0] + (c[1] - mid[1]) * dir[1] > 0.0;
            side == (**l == Origin::Synthetic)
        })
        .count();
    assert!(correct >= 95, "{correct}/100");
}

#[test]
fn tsne_is_seeded_and_validated() {
    let a = SequenceBatch::from_flat(20, 1, 2, rng::standard_normal(&mut rng::seeded(3), 40)).unwrap();
    let cfg = TsneConfig { perplexity: 5.0, iterations: 250, learning_rate: Some(10.0) };
    let p1 = tsne_project(&a, &a, &cfg, &mut rng::seeded(4)).unwrap();
    let p2 = tsne_project(&a, &a, &cfg, &mut rng::seeded(4)).unwrap();
    assert_eq!(p1, p2);
    let too_wide = TsneConfig { perplexity: 20.0, ..cfg.clone() };
    assert!(tsne_project(&a, &a, &too_wide, &mut rng::seeded(4)).is_err());
    let too_short = TsneConfig { iterations: 100, ..cfg };
    assert!(tsne_project(&a, &a, &too_short, &mut rng::seeded(4)).is_err());
}
