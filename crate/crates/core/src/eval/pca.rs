//! Two-component PCA by seeded power iteration with deflation.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::plot::scatter_svg;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const PCA_TOL: f64 = 1e-10;
pub const PCA_MAX_ITER: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// Unit-norm principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub mean: Vec<f64>,
    /// `(x, y, label)` per input row.
    pub points: Vec<(f64, f64, usize)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, bi)| *x -= p * bi);
    }
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    m.chunks(v.len()).map(|row| dot(row, v)).collect()
}

/// Flips `v` so its largest-magnitude entry (lowest index on ties) is
/// positive.
fn canonical_sign(v: &mut [f64]) {
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

/// Projects the rows of `embeddings` (`N × D`) onto their top `out_dims`
/// principal directions. `labels` travel with the points.
pub fn pca_project(
    embeddings: &Tensor,
    labels: &[usize],
    out_dims: usize,
    seed: u64,
) -> Result<Projection> {
    if embeddings.ndim() != 2 {
        return Err(Error::InvalidTensor(format!(
            "PCA input must be [N, D], got {:?}",
            embeddings.shape()
        )));
    }
    let (n, d) = (embeddings.shape()[0], embeddings.shape()[1]);
    if n < 2 {
        return Err(Error::Empty("PCA input needs at least 2 rows"));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "pca_project",
            left: vec![n],
            right: vec![labels.len()],
        });
    }
    if out_dims == 0 || out_dims > d {
        return Err(Error::Config(format!("out_dims must be in 1..={d}")));
    }
    let rows: Vec<&[f64]> = embeddings.data().chunks(d).collect();
    let mut mean = vec![0.0; d];
    for r in &rows {
        mean.iter_mut().zip(*r).for_each(|(m, x)| *m += x / n as f64);
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for r in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += r[i] * r[j] / (n - 1) as f64;
            }
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if !(trace > 0.0) {
        return Err(Error::RankZero);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(out_dims);
    let mut explained = Vec::with_capacity(out_dims);
    let mut deflated = cov.clone();
    for _ in 0..out_dims {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        orthogonalize(&mut v, &components);
        normalize(&mut v);
        for _ in 0..PCA_MAX_ITER {
            let mut w = mat_vec(&deflated, &v);
            orthogonalize(&mut w, &components);
            if normalize(&mut w) <= trace * 1e-14 {
                // remaining variance is numerically zero: keep the start
                // direction, already orthogonal to the found components
                break;
            }
            let delta = v
                .iter()
                .zip(&w)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            v = w;
            if delta < PCA_TOL {
                break;
            }
        }
        orthogonalize(&mut v, &components);
        normalize(&mut v);
        canonical_sign(&mut v);
        let lambda = dot(&v, &mat_vec(&cov, &v)).max(0.0);
        for i in 0..d {
            for j in 0..d {
                deflated[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        explained.push(lambda);
        components.push(v);
    }
    // slow convergence on near-equal eigenvalues can leave them out of order
    let mut order: Vec<usize> = (0..out_dims).collect();
    order.sort_by(|&a, &b| explained[b].total_cmp(&explained[a]));
    let components: Vec<Vec<f64>> = order.iter().map(|&i| components[i].clone()).collect();
    let explained: Vec<f64> = order.iter().map(|&i| explained[i]).collect();

    let points = centered
        .iter()
        .zip(labels)
        .map(|(r, &y)| {
            let x = dot(r, &components[0]);
            let yv = components.get(1).map_or(0.0, |c| dot(r, c));
            (x, yv, y)
        })
        .collect();
    Ok(Projection {
        components,
        explained_variance: explained,
        mean,
        points,
    })
}

/// Writes `<stem>.csv` (`x,y,label`) and `<stem>.svg` into `dir`.
pub fn write_projection(proj: &Projection, dir: &Path, stem: &str, title: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from("x,y,label\n");
    for (x, y, l) in &proj.points {
        writeln!(csv, "{x:.17e},{y:.17e},{l}").expect("string write");
    }
    std::fs::write(dir.join(format!("{stem}.csv")), csv)?;
    std::fs::write(dir.join(format!("{stem}.svg")), scatter_svg(&proj.points, title))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ortho_err(p: &Projection) -> f64 {
        let c = &p.components;
        let mut worst: f64 = 0.0;
        for i in 0..c.len() {
            for j in 0..c.len() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(&c[i], &c[j]) - target).abs());
            }
        }
        worst
    }

    #[test]
    fn collinear_data_recovers_the_line() {
        let xs = [-2.0, -1.0, 0.0, 0.5, 1.0, 3.0];
        let data: Vec<f64> = xs.iter().flat_map(|&x| [x, 2.0 * x]).collect();
        let t = Tensor::matrix(xs.len(), 2, data).unwrap();
        let p = pca_project(&t, &[0; 6], 2, 0).unwrap();
        let s5 = 5f64.sqrt();
        assert!((p.components[0][0] - 1.0 / s5).abs() < 1e-10);
        assert!((p.components[0][1] - 2.0 / s5).abs() < 1e-10);
        assert!(p.explained_variance[1].abs() < 1e-10);
        assert!(ortho_err(&p) < 1e-10);
        for ((x, y, _), &xi) in p.points.iter().zip(&xs) {
            let mean_x = xs.iter().sum::<f64>() / 6.0;
            assert!((x - (xi - mean_x) * s5).abs() < 1e-10);
            assert!(y.abs() < 1e-10);
        }
    }

    #[test]
    fn rank_zero_and_tiny_inputs_rejected() {
        let same = Tensor::matrix(3, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert!(matches!(pca_project(&same, &[0; 3], 2, 0), Err(Error::RankZero)));
        let one = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(pca_project(&one, &[0], 2, 0).is_err());
    }

    #[test]
    fn empty_input_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let empty = Tensor::zeros(&[0, 3]);
        assert!(pca_project(&empty, &[], 2, 0).is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn isotropic_gaussian_has_balanced_variances() {
        // Monte-Carlo: N(0, I₄) sample covariance eigenvalues ≈ 1 each; the
        // projection onto an orthonormal pair keeps E‖Δ‖² = 2·2 per pair
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (n, d) = (4000, 4);
        let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t = Tensor::matrix(n, d, data).unwrap();
        let p = pca_project(&t, &vec![0; n], 2, 1).unwrap();
        let (a, b) = (p.explained_variance[0], p.explained_variance[1]);
        assert!(a >= b && a < 1.15 && b > 0.85, "{a} {b}");
        let mut sq = 0.0;
        for i in 0..n / 2 {
            let (x1, y1, _) = p.points[2 * i];
            let (x2, y2, _) = p.points[2 * i + 1];
            sq += (x1 - x2).powi(2) + (y1 - y2).powi(2);
        }
        let mean_sq = sq / (n / 2) as f64;
        assert!((mean_sq - 4.0).abs() < 0.4, "{mean_sq}");
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..50 * 6).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t = Tensor::matrix(50, 6, data).unwrap();
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let a = pca_project(&t, &labels, 2, 9).unwrap();
        let b = pca_project(&t, &labels, 2, 9).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        write_projection(&a, dir.path(), "a", "t").unwrap();
        write_projection(&b, dir.path(), "b", "t").unwrap();
        for ext in ["csv", "svg"] {
            let fa = std::fs::read(dir.path().join(format!("a.{ext}"))).unwrap();
            let fb = std::fs::read(dir.path().join(format!("b.{ext}"))).unwrap();
            assert_eq!(fa, fb);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn components_orthonormal_and_ordered(
            data in prop::collection::vec(-5.0f64..5.0, 12 * 5),
            seed in any::<u64>(),
        ) {
            let t = Tensor::matrix(12, 5, data).unwrap();
            let p = pca_project(&t, &[0; 12], 2, seed).unwrap();
            prop_assert!(ortho_err(&p) < 1e-10);
            prop_assert!(p.explained_variance[0] >= p.explained_variance[1]);
        }
    }
}
