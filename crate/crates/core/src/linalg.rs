//! Dense linear algebra shared by the feature and clustering stages.
//!
//! Everything here is deterministic: covariance sums run over fixed-size
//! chunks combined in chunk order, the symmetric eigensolver is a
//! Householder tridiagonalisation followed by implicit QL, and eigenvectors
//! are sign-normalised and tie-ordered so that repeated fits on identical
//! input are bitwise identical.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        DenseMatrix::new(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionRule {
    /// Keep components whose explained-variance ratio is strictly above the
    /// threshold; at least one is always kept.
    MinRatio(f64),
    /// Keep `min(k, rank)` components (at least one).
    FixedK(usize),
    /// Keep every component, no pruning.
    All,
}

/// Fitted principal axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `d`.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Coordinates of one sample in the retained subspace.
    pub fn project_row(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        for (o, comp) in out.iter_mut().zip(&self.components) {
            let mut acc = 0.0;
            for ((xi, mi), ci) in x.iter().zip(&self.mean).zip(comp) {
                acc += (xi - mi) * ci;
            }
            *o = acc;
        }
    }

    /// `mean + coords · components`.
    pub fn reconstruct(&self, coords: &DenseMatrix) -> Result<DenseMatrix> {
        if coords.cols() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                actual: coords.cols(),
            });
        }
        let d = self.dim();
        let mut out = Vec::with_capacity(coords.rows() * d);
        for row in coords.row_iter() {
            let mut x = self.mean.clone();
            for (c, comp) in row.iter().zip(&self.components) {
                for (xi, ci) in x.iter_mut().zip(comp) {
                    *xi += c * ci;
                }
            }
            out.extend(x);
        }
        DenseMatrix::new(coords.rows(), d, out)
    }
}

/// Project samples onto a fitted basis: `(samples - mean) · componentsᵀ`.
pub fn project(basis: &PcaBasis, samples: &DenseMatrix) -> Result<DenseMatrix> {
    if samples.cols() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            actual: samples.cols(),
        });
    }
    let k = basis.k();
    let mut out = vec![0.0; samples.rows() * k];
    if k > 0 {
        out.par_chunks_mut(k)
            .zip(samples.values.par_chunks(samples.cols().max(1)))
            .for_each(|(o, x)| basis.project_row(x, o));
    }
    DenseMatrix::new(samples.rows(), k, out)
}

/// Principal component analysis of the rows of `samples`.
///
/// Samples are mean-centred and the covariance uses a `1/n` normaliser.
/// When `d > n` the eigenproblem is solved on the `n × n` Gram matrix
/// instead; the retained components are the same up to rounding.
pub fn fit_pca(samples: &DenseMatrix, retention: RetentionRule) -> Result<PcaBasis> {
    let (n, d) = (samples.rows(), samples.cols());
    if d <= n || retention == RetentionRule::All {
        return fit_pca_with(n, d, |i, out| out.copy_from_slice(samples.row(i)), retention);
    }
    check_retention(retention)?;
    validate_samples(samples)?;
    let mean = column_means(samples);
    let centered = centered_columns(samples, &mean);
    let total: f64 = centered
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    if total <= f64::MIN_POSITIVE {
        return Ok(zero_variance_basis(mean, retention));
    }
    let (vals, vecs) = gram_eigen(&centered, n, d);
    Ok(select_components(mean, vals, vecs, total, n, retention))
}

/// PCA over `n` samples of width `d` produced on demand by `fill(i, out)`.
///
/// Means and the covariance are accumulated over fixed-size chunks of
/// samples that are combined in chunk order, so the result does not depend
/// on the thread count. Always uses the `d × d` covariance route.
pub fn fit_pca_with<F>(n: usize, d: usize, fill: F, retention: RetentionRule) -> Result<PcaBasis>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    check_retention(retention)?;
    if n < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 samples, got {n}")));
    }
    if d == 0 {
        return Err(Error::DegenerateInput("zero-width samples".into()));
    }
    let (mean, cov) = streaming_covariance(n, d, &fill)?;
    let total: f64 = (0..d).map(|a| cov[a * d + a]).sum();
    if total <= f64::MIN_POSITIVE {
        return Ok(zero_variance_basis(mean, retention));
    }
    let (vals, vecs) = symmetric_eigen(&cov, d);
    Ok(select_components(mean, vals, vecs, total, n, retention))
}

/// Full-rank decorrelating rotation (Karhunen–Loève transform) of the
/// sample columns, with no variance pruning.
pub fn fit_klt(samples: &DenseMatrix) -> Result<PcaBasis> {
    fit_pca(samples, RetentionRule::All)
}

fn check_retention(retention: RetentionRule) -> Result<()> {
    match retention {
        RetentionRule::MinRatio(r) if !(r > 0.0 && r < 1.0) => {
            Err(Error::InvalidParams(format!("min_ratio {r} outside (0, 1)")))
        }
        RetentionRule::FixedK(0) => Err(Error::InvalidParams("fixed_k must be at least 1".into())),
        _ => Ok(()),
    }
}

fn zero_variance_basis(mean: Vec<f64>, retention: RetentionRule) -> PcaBasis {
    let d = mean.len();
    let components = match retention {
        RetentionRule::All => identity_rows(d),
        _ => identity_rows(d).into_iter().take(1).collect(),
    };
    let mut ratios = vec![0.0; components.len()];
    ratios[0] = 1.0;
    PcaBasis {
        mean,
        eigenvalues: vec![0.0; components.len()],
        components,
        explained_variance_ratio: ratios,
    }
}

fn select_components(
    mean: Vec<f64>,
    vals: Vec<f64>,
    vecs: Vec<Vec<f64>>,
    total: f64,
    n: usize,
    retention: RetentionRule,
) -> PcaBasis {
    let d = mean.len();
    let mut pairs: Vec<(f64, Vec<f64>)> = vals
        .into_iter()
        .zip(vecs)
        .map(|(l, mut v)| {
            normalize_sign(&mut v);
            (l.max(0.0), v)
        })
        .collect();
    sort_eigenpairs(&mut pairs);

    let lambda_max = pairs.first().map_or(0.0, |p| p.0);
    let rank_tol = lambda_max * (n.max(d) as f64) * f64::EPSILON * 16.0;
    let rank = pairs.iter().filter(|p| p.0 > rank_tol).count().max(1);
    let ratios: Vec<f64> = pairs.iter().map(|p| (p.0 / total).min(1.0)).collect();
    let k = match retention {
        RetentionRule::MinRatio(r) => ratios.iter().filter(|&&x| x > r).count().max(1),
        RetentionRule::FixedK(k) => k.min(rank),
        RetentionRule::All => pairs.len(),
    };
    pairs.truncate(k);
    let (eigenvalues, components): (Vec<f64>, Vec<Vec<f64>>) = pairs.into_iter().unzip();
    PcaBasis {
        mean,
        components,
        eigenvalues,
        explained_variance_ratio: ratios[..k].to_vec(),
    }
}

const CHUNK: usize = 2048;

fn streaming_covariance<F>(n: usize, d: usize, fill: &F) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(n)))
        .collect();
    let partial_sums: Vec<Result<Vec<f64>>> = chunks
        .par_iter()
        .map(|&(s, e)| {
            let mut buf = vec![0.0; d];
            let mut acc = vec![0.0; d];
            for i in s..e {
                fill(i, &mut buf);
                if let Some(col) = buf.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteInput { row: i, col });
                }
                acc.iter_mut().zip(&buf).for_each(|(a, v)| *a += v);
            }
            Ok(acc)
        })
        .collect();
    let mut mean = vec![0.0; d];
    for p in partial_sums {
        mean.iter_mut().zip(p?).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let tri = d * (d + 1) / 2;
    let partial_cov: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|&(s, e)| {
            let mut buf = vec![0.0; d];
            let mut acc = vec![0.0; tri];
            for i in s..e {
                fill(i, &mut buf);
                buf.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
                let mut t = 0;
                for a in 0..d {
                    let va = buf[a];
                    let row = &mut acc[t..t + d - a];
                    for (r, vb) in row.iter_mut().zip(&buf[a..]) {
                        *r += va * vb;
                    }
                    t += d - a;
                }
            }
            acc
        })
        .collect();
    let mut upper = vec![0.0; tri];
    for p in partial_cov {
        upper.iter_mut().zip(p).for_each(|(u, v)| *u += v);
    }
    let mut cov = vec![0.0; d * d];
    let mut t = 0;
    for a in 0..d {
        for b in a..d {
            let v = upper[t] / n as f64;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
            t += 1;
        }
    }
    Ok((mean, cov))
}

/// Sample covariance (`1/n`) of the rows of `samples`.
pub fn covariance(samples: &DenseMatrix) -> Vec<f64> {
    let mean = column_means(samples);
    let centered = centered_columns(samples, &mean);
    covariance_from_columns(&centered, samples.rows())
}

fn validate_samples(samples: &DenseMatrix) -> Result<()> {
    if samples.rows() < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 samples, got {}",
            samples.rows()
        )));
    }
    if samples.cols() == 0 {
        return Err(Error::DegenerateInput("zero-width samples".into()));
    }
    if let Some(pos) = samples.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput {
            row: pos / samples.cols(),
            col: pos % samples.cols(),
        });
    }
    Ok(())
}

fn column_means(samples: &DenseMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; samples.cols()];
    for row in samples.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = samples.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Centred data stored column by column.
fn centered_columns(samples: &DenseMatrix, mean: &[f64]) -> Vec<Vec<f64>> {
    (0..samples.cols())
        .into_par_iter()
        .map(|c| samples.row_iter().map(|row| row[c] - mean[c]).collect())
        .collect()
}

fn covariance_from_columns(cols: &[Vec<f64>], n: usize) -> Vec<f64> {
    let d = cols.len();
    let upper: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|a| (a..d).map(|b| dot(&cols[a], &cols[b]) / n as f64).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for (a, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let b = a + off;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    cov
}

/// Eigenpairs of the covariance via the `n × n` Gram matrix of the centred
/// samples. Only directions with non-negligible eigenvalue are returned.
fn gram_eigen(cols: &[Vec<f64>], n: usize, d: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    // Row-major centred samples for contiguous dot products.
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| (a..n).map(|b| dot(&rows[a], &rows[b]) / n as f64).collect())
        .collect();
    let mut gram = vec![0.0; n * n];
    for (a, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            gram[a * n + a + off] = v;
            gram[(a + off) * n + a] = v;
        }
    }
    let (vals, vecs) = symmetric_eigen(&gram, n);
    let lambda_max = vals.iter().cloned().fold(0.0, f64::max);
    let tol = lambda_max * (n.max(d) as f64) * f64::EPSILON * 16.0;
    let mut out_vals = Vec::new();
    let mut out_vecs = Vec::new();
    for (l, u) in vals.into_iter().zip(vecs) {
        if l <= tol {
            continue;
        }
        // v = Xᵀu / sqrt(n λ)
        let scale = 1.0 / (n as f64 * l).sqrt();
        let v: Vec<f64> = cols.par_iter().map(|c| dot(c, &u) * scale).collect();
        out_vals.push(l);
        out_vecs.push(v);
    }
    (out_vals, out_vecs)
}

fn identity_rows(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            e
        })
        .collect()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flip `v` so that its entry of largest magnitude is non-negative. Entries
/// within a relative 1e-9 of the maximum count as tied and the first wins.
pub fn normalize_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .position(|x| x.abs() >= max * (1.0 - 1e-9))
        .unwrap_or(0);
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn sort_eigenpairs(pairs: &mut [(f64, Vec<f64>)]) {
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0).then_with(|| {
            a.1.iter()
                .zip(&b.1)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
}

/// Eigendecomposition of a symmetric `n × n` row-major matrix.
///
/// Returns unsorted eigenvalues and the matching unit eigenvectors.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(a.len(), n * n, "matrix is not n x n");
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    // Column-major working storage: w[c * n + r] holds V[r][c]. The input is
    // symmetric so its row-major layout doubles as column-major.
    let mut w = a.to_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut w, &mut d, &mut e, n);
    tridiagonal_ql(&mut w, &mut d, &mut e, n);
    let vectors = w.chunks(n).map(|c| c.to_vec()).collect();
    (d, vectors)
}

/// Householder reduction to tridiagonal form, accumulating the
/// transformation in `w` (column-major).
fn tridiagonalize(w: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    let at = |r: usize, c: usize| c * n + r;
    for j in 0..n {
        d[j] = w[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = w[at(i - 1, j)];
                w[at(i, j)] = 0.0;
                w[at(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].iter_mut().for_each(|x| *x = 0.0);
            for j in 0..i {
                let f = d[j];
                w[at(j, i)] = f;
                let mut g = e[j] + w[at(j, j)] * f;
                let col = &w[j * n..j * n + i];
                for k in j + 1..i {
                    g += col[k] * d[k];
                    e[k] += col[k] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                let col = &mut w[j * n..j * n + i];
                for k in j..i {
                    col[k] -= f * e[k] + g * d[k];
                }
                d[j] = w[at(i - 1, j)];
                w[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        w[at(n - 1, i)] = w[at(i, i)];
        w[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = w[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let (left, right) = w.split_at_mut((i + 1) * n);
                let next = &right[..=i];
                let col = &mut left[j * n..j * n + i + 1];
                let g = dot(next, col);
                for k in 0..=i {
                    col[k] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            w[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = w[at(n - 1, j)];
        w[at(n - 1, j)] = 0.0;
    }
    w[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL iterations on the tridiagonal `(d, e)`, rotating the
/// columns of `w`.
fn tridiagonal_ql(w: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            loop {
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (left, right) = w.split_at_mut((i + 1) * n);
                    let vi = &mut left[i * n..];
                    let vi1 = &mut right[..n];
                    for (a, b) in vi.iter_mut().zip(vi1.iter_mut()) {
                        let h = *b;
                        *b = s * *a + c * h;
                        *a = c * *a - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
}
