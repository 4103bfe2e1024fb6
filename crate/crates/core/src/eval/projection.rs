use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITERS: usize = 100_000;

/// Top-two principal directions of a sample and its coordinates in them.
#[derive(Clone, Debug)]
pub struct Projection2d {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub variances: [f64; 2],
    pub coords: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
}

impl Projection2d {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,label\n");
        for (c, y) in self.coords.iter().zip(&self.labels) {
            out.push_str(&format!("{},{},{}\n", c[0], c[1], y));
        }
        out
    }

    pub fn reconstruct(&self, i: usize) -> Vec<f64> {
        let [a, b] = self.coords[i];
        self.mean
            .iter()
            .zip(self.components[0].iter().zip(&self.components[1]))
            .map(|(m, (u, v))| m + a * u + b * v)
            .collect()
    }
}

fn top_eigen(cov: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let d = cov.len();
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3).collect();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n0 = norm(&v);
    v.iter_mut().for_each(|a| *a /= n0);
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w: Vec<f64> = cov
            .iter()
            .map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let n = norm(&w);
        if n == 0.0 {
            return (0.0, v);
        }
        let next: Vec<f64> = w.iter().map(|a| a / n).collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        lambda = n;
        v = next;
        if delta < POWER_TOL {
            break;
        }
    }
    (lambda, v)
}

/// Mean-centred PCA onto two components of up to `sample_per_class` rows
/// per class, sampled with `rng`.
pub fn project_2d(
    x: &Tensor<f32>,
    labels: &[usize],
    sample_per_class: usize,
    rng: &mut RngState,
) -> Result<Projection2d> {
    if labels.len() != x.rows() {
        return Err(Error::Projection(format!(
            "{} labels for {} rows",
            labels.len(),
            x.rows()
        )));
    }
    let mut order: Vec<usize> = (0..x.rows()).collect();
    rng.shuffle(&mut order);
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut taken = vec![0usize; num_classes];
    let mut rows = Vec::new();
    for i in order {
        if taken[labels[i]] < sample_per_class {
            taken[labels[i]] += 1;
            rows.push(i);
        }
    }
    rows.sort_unstable();
    if rows.len() < 2 {
        return Err(Error::Projection("need at least two samples".into()));
    }
    let d = x.cols();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in &rows {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v as f64 / n;
        }
    }
    let centred: Vec<Vec<f64>> = rows
        .iter()
        .map(|&i| x.row(i).iter().zip(&mean).map(|(&v, m)| v as f64 - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &centred {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += r[a] * r[b] / n;
            }
        }
    }
    let total_var: f64 = (0..d).map(|a| cov[a][a]).sum();
    if !(total_var > 0.0) {
        return Err(Error::Projection("all sampled rows are identical".into()));
    }
    let (l1, v1) = top_eigen(&cov);
    for a in 0..d {
        for b in 0..d {
            cov[a][b] -= l1 * v1[a] * v1[b];
        }
    }
    let (l2, v2) = top_eigen(&cov);
    let dot = |r: &[f64], v: &[f64]| r.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let coords = centred.iter().map(|r| [dot(r, &v1), dot(r, &v2)]).collect();
    Ok(Projection2d {
        mean,
        components: [v1, v2],
        variances: [l1, l2],
        coords,
        labels: rows.iter().map(|&i| labels[i]).collect(),
    })
}

/// Ratio of between-class to within-class scatter (traces).
pub fn scatter_ratio(x: &Tensor<f32>, labels: &[usize]) -> Result<f64> {
    if labels.len() != x.rows() || x.rows() == 0 {
        return Err(Error::Metric(format!("{} labels for {} rows", labels.len(), x.rows())));
    }
    let d = x.cols();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut centroids = vec![vec![0.0; d]; k];
    let mut counts = vec![0.0; k];
    let mut mean = vec![0.0; d];
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1.0;
        for (j, &v) in x.row(i).iter().enumerate() {
            centroids[y][j] += v as f64;
            mean[j] += v as f64;
        }
    }
    let n = x.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    for (c, &cnt) in centroids.iter_mut().zip(&counts) {
        if cnt > 0.0 {
            c.iter_mut().for_each(|v| *v /= cnt);
        }
    }
    let between: f64 = centroids
        .iter()
        .zip(&counts)
        .map(|(c, &cnt)| cnt * c.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    let within: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            x.row(i)
                .iter()
                .zip(&centroids[y])
                .map(|(&a, b)| (a as f64 - b).powi(2))
                .sum::<f64>()
        })
        .sum();
    if within == 0.0 {
        return Err(Error::Metric("zero within-class scatter".into()));
    }
    Ok(between / within)
}
