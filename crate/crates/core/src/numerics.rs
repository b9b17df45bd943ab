//! Dense linear algebra and reproducible random streams.
//!
//! Everything here is sized for the simulator's regime (d up to a few hundred,
//! n up to a few thousand rows per machine), so the routines favour clarity and
//! numerical stability over blocking or SIMD.

use std::ops::{Deref, DerefMut};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in parameter space: a model, a local ERM, a gradient or a center.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn new(coords: Vec<f64>) -> Self {
        ModelVector(coords)
    }

    pub fn zeros(dim: usize) -> Self {
        ModelVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dist(&self, other: &[f64]) -> f64 {
        dist_sq(&self.0, other).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> ModelVector {
        ModelVector(self.0.iter().map(|v| v * scale).collect())
    }

    pub fn sub(&self, other: &[f64]) -> ModelVector {
        ModelVector(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &[f64]) -> ModelVector {
        ModelVector(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }
}

impl Deref for ModelVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ModelVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for ModelVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ModelVector {
    fn from(v: Vec<f64>) -> Self {
        ModelVector(v)
    }
}

impl FromIterator<f64> for ModelVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        ModelVector(iter.into_iter().collect())
    }
}

/// Inner product. Accumulates in four interleaved lanes so the compiler can
/// vectorize; the summation order is fixed, so results are reproducible.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Coordinate-wise arithmetic mean. Panics on an empty slice.
pub fn mean_of(points: &[&[f64]]) -> ModelVector {
    let dim = points[0].len();
    let mut acc = vec![0.0; dim];
    for p in points {
        for (a, v) in acc.iter_mut().zip(p.iter()) {
            *a += v;
        }
    }
    let t = points.len() as f64;
    acc.iter_mut().for_each(|a| *a /= t);
    ModelVector(acc)
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::input(format!(
                "matrix data has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::input(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact on an empty-column matrix would panic
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows `idx` gathered into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `A v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        self.row_iter().map(|r| dot(r, v)).collect()
    }

    /// `Aᵀ v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &s) in self.row_iter().zip(v) {
            for (o, x) in out.iter_mut().zip(r) {
                *o += s * x;
            }
        }
        out
    }

    /// `AᵀA`, symmetric by construction.
    pub fn gram(&self) -> Matrix {
        let d = self.cols;
        let mut g = Matrix::zeros(d, d);
        for r in self.row_iter() {
            for j in 0..d {
                let rj = r[j];
                if rj == 0.0 {
                    continue;
                }
                let row = &mut g.data[j * d..(j + 1) * d];
                for k in j..d {
                    row[k] += rj * r[k];
                }
            }
        }
        for j in 0..d {
            for k in 0..j {
                g.data[j * d + k] = g.data[k * d + j];
            }
        }
        g
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: f64, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Householder reflector for `x`: returns `(v, beta)` with
/// `(I - beta v vᵀ) x = ∓‖x‖ e₁` and `v[0] = 1`.
fn householder(x: &[f64]) -> (Vec<f64>, f64) {
    let sigma: f64 = x[1..].iter().map(|v| v * v).sum();
    let mut v = x.to_vec();
    v[0] = 1.0;
    if sigma == 0.0 {
        return (v, 0.0);
    }
    let x0 = x[0];
    let mu = (x0 * x0 + sigma).sqrt();
    let v0 = if x0 <= 0.0 { x0 - mu } else { -sigma / (x0 + mu) };
    let beta = 2.0 * v0 * v0 / (sigma + v0 * v0);
    for vi in v[1..].iter_mut() {
        *vi /= v0;
    }
    (v, beta)
}

/// Applies `I - beta v vᵀ` to rows `k..` of columns `cols` of `a`.
fn apply_reflector(a: &mut Matrix, k: usize, v: &[f64], beta: f64, cols: std::ops::Range<usize>) {
    if beta == 0.0 {
        return;
    }
    for j in cols {
        let mut s = 0.0;
        for (i, vi) in v.iter().enumerate() {
            s += vi * a[(k + i, j)];
        }
        s *= beta;
        for (i, vi) in v.iter().enumerate() {
            a[(k + i, j)] -= s * vi;
        }
    }
}

fn apply_reflector_vec(b: &mut [f64], k: usize, v: &[f64], beta: f64) {
    if beta == 0.0 {
        return;
    }
    let s = beta * dot(v, &b[k..k + v.len()]);
    for (i, vi) in v.iter().enumerate() {
        b[k + i] -= s * vi;
    }
}

/// Minimum-norm least-squares solution of `X w ≈ y`.
///
/// Householder QR with column pivoting; when the numerical rank is below `d`
/// the trapezoidal factor is reduced once more (complete orthogonal
/// decomposition) so that the returned vector is the minimum-norm minimizer.
pub fn least_squares(x: &Matrix, y: &[f64]) -> Result<ModelVector> {
    let (n, d) = (x.rows(), x.cols());
    if n == 0 || d == 0 {
        return Err(Error::input("least squares needs at least one row and one column"));
    }
    if y.len() != n {
        return Err(Error::input(format!(
            "design has {n} rows but response has {} entries",
            y.len()
        )));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("least squares inputs must be finite"));
    }

    let mut a = x.clone();
    let mut b = y.to_vec();
    let mut perm: Vec<usize> = (0..d).collect();
    let steps = n.min(d);
    let mut col_norms: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| a[(i, j)] * a[(i, j)]).sum())
        .collect();

    for k in 0..steps {
        // recompute the trailing norms exactly; downdating loses accuracy
        for (j, cn) in col_norms.iter_mut().enumerate().skip(k) {
            *cn = (k..n).map(|i| a[(i, j)] * a[(i, j)]).sum();
        }
        let (pivot, _) = col_norms[k..]
            .iter()
            .enumerate()
            .fold((k, -1.0), |best, (o, &v)| if v > best.1 { (k + o, v) } else { best });
        if pivot != k {
            for i in 0..n {
                let tmp = a[(i, k)];
                a[(i, k)] = a[(i, pivot)];
                a[(i, pivot)] = tmp;
            }
            perm.swap(k, pivot);
            col_norms.swap(k, pivot);
        }
        let col: Vec<f64> = (k..n).map(|i| a[(i, k)]).collect();
        let (v, beta) = householder(&col);
        apply_reflector(&mut a, k, &v, beta, k..d);
        apply_reflector_vec(&mut b, k, &v, beta);
    }

    let r00 = a[(0, 0)].abs();
    let tol = (n.max(d) as f64) * f64::EPSILON * r00;
    let rank = (0..steps).take_while(|&k| a[(k, k)].abs() > tol).count();

    let mut z = vec![0.0; d];
    if rank == 0 {
        // X is numerically zero: the minimum-norm solution is 0
    } else if rank == d {
        for k in (0..d).rev() {
            let mut s = b[k];
            for j in k + 1..d {
                s -= a[(k, j)] * z[j];
            }
            z[k] = s / a[(k, k)];
        }
    } else {
        // R1 = a[0..rank, 0..d] (upper trapezoidal). Factor R1ᵀ = Q2 R2 and solve
        // R2ᵀ u = c, z = Q2[:, ..rank] u.
        let mut rt = Matrix::zeros(d, rank);
        for i in 0..rank {
            for j in i..d {
                rt[(j, i)] = a[(i, j)];
            }
        }
        let mut reflectors = Vec::with_capacity(rank);
        for k in 0..rank {
            let col: Vec<f64> = (k..d).map(|i| rt[(i, k)]).collect();
            let (v, beta) = householder(&col);
            apply_reflector(&mut rt, k, &v, beta, k..rank);
            reflectors.push((v, beta));
        }
        let mut u = vec![0.0; rank];
        for i in 0..rank {
            let mut s = b[i];
            for j in 0..i {
                s -= rt[(j, i)] * u[j];
            }
            u[i] = s / rt[(i, i)];
        }
        z[..rank].copy_from_slice(&u);
        for (k, (v, beta)) in reflectors.iter().enumerate().rev() {
            apply_reflector_vec(&mut z, k, v, *beta);
        }
    }

    let mut w = vec![0.0; d];
    for (k, &p) in perm.iter().enumerate() {
        w[p] = z[k];
    }
    Ok(ModelVector(w))
}

const POWER_MAX_ITER: usize = 200;
const POWER_REL_TOL: f64 = 1e-10;
const EIGEN_RESIDUAL_TOL: f64 = 1e-8;

/// Largest eigenvalue and a unit eigenvector of a symmetric PSD matrix.
///
/// Power iteration (200 iterations, 1e-10 relative residual). If the spectral
/// gap is too small for power iteration to reach a 1e-8 relative residual the
/// result is recomputed from a full symmetric eigendecomposition.
pub fn top_eigenpair(m: &Matrix) -> Result<(f64, ModelVector)> {
    let d = m.rows();
    if d == 0 || m.cols() != d {
        return Err(Error::input(format!(
            "top_eigenpair needs a nonempty square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::input("top_eigenpair input must be finite"));
    }
    let sym_tol = 1e-10 * m.max_abs().max(1.0);
    for i in 0..d {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > sym_tol {
                return Err(Error::input(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }

    // deterministic start that is not orthogonal to any coordinate axis
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64 + 1.0) / (d as f64 + 1.0)).collect();
    let vn = norm(&v);
    v.iter_mut().for_each(|x| *x /= vn);

    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_MAX_ITER {
        let mv = m.mul_vec(&v);
        lambda = dot(&v, &mv);
        residual = mv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        let mvn = norm(&mv);
        if mvn == 0.0 {
            return Ok((0.0, ModelVector(v)));
        }
        if residual <= POWER_REL_TOL * lambda.abs().max(1.0) {
            break;
        }
        v = mv.into_iter().map(|x| x / mvn).collect();
    }
    if residual <= EIGEN_RESIDUAL_TOL * lambda.abs().max(1.0) {
        return Ok((lambda.max(0.0), ModelVector(v)));
    }
    let (values, vectors) = symmetric_eigen(m);
    let top = values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &val)| if val > values[best] { i } else { best });
    let vec: Vec<f64> = (0..d).map(|i| vectors[(i, top)]).collect();
    Ok((values[top].max(0.0), ModelVector(vec)))
}

/// Full eigendecomposition of a symmetric matrix (nalgebra's implicit QR on
/// the tridiagonal form). Returns eigenvalues and the matrix whose columns are
/// the eigenvectors.
pub fn symmetric_eigen(m: &Matrix) -> (Vec<f64>, Matrix) {
    let d = m.rows();
    let eig = nalgebra::DMatrix::from_row_slice(d, d, m.as_slice()).symmetric_eigen();
    let mut v = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            v[(i, j)] = eig.eigenvectors[(i, j)];
        }
    }
    (eig.eigenvalues.iter().copied().collect(), v)
}

/// Sample covariance (normalized by the number of points) and mean.
pub fn covariance(points: &[&[f64]]) -> (ModelVector, Matrix) {
    let mu = mean_of(points);
    let d = mu.dim();
    let mut c = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for p in points {
        for (c_i, (x, m)) in centered.iter_mut().zip(p.iter().zip(mu.iter())) {
            *c_i = x - m;
        }
        for j in 0..d {
            let cj = centered[j];
            for k in j..d {
                c[(j, k)] += cj * centered[k];
            }
        }
    }
    let t = points.len() as f64;
    for j in 0..d {
        for k in j..d {
            let v = c[(j, k)] / t;
            c[(j, k)] = v;
            c[(k, j)] = v;
        }
    }
    (mu, c)
}

/// Median of a slice (averaging the middle pair for even length). NaN-free input
/// assumed.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let t = values.len();
    if t % 2 == 1 {
        values[t / 2]
    } else {
        0.5 * (values[t / 2 - 1] + values[t / 2])
    }
}

/// A seeded random stream. Equal `(master_seed, stream_id)` pairs give equal
/// draw sequences on every platform; distinct stream ids select independent
/// ChaCha20 streams under the same key.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        RngStream {
            master_seed,
            stream_id,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.normal()).collect()
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        rand::Rng::gen::<f64>(&mut self.rng)
    }

    pub fn bernoulli_half(&mut self) -> bool {
        rand::Rng::gen::<bool>(&mut self.rng)
    }

    /// Uniform integer in `[0, upper)`.
    pub fn below(&mut self, upper: usize) -> usize {
        rand::Rng::gen_range(&mut self.rng, 0..upper)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        rand::seq::SliceRandom::shuffle(items, &mut self.rng);
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Stream-id namespaces. Each consumer of randomness draws from its own stream
/// so that adding draws in one stage never shifts another stage's sequence.
pub mod streams {
    pub const FLEET_CENTERS: u64 = 1;
    pub const FLEET_ASSIGNMENT: u64 = 2;
    pub const CLUSTER_INIT: u64 = 3;
    pub const INGEST_SHARDS: u64 = 4;
    pub const INGEST_ADVERSARY: u64 = 5;
    pub const GAMMA_SAMPLING: u64 = 6;
    /// Per-machine data streams: `MACHINE_BASE + machine_id`.
    pub const MACHINE_BASE: u64 = 1 << 20;
    /// Per-machine attack streams during optimization: `ATTACK_BASE + machine_id`.
    pub const ATTACK_BASE: u64 = 1 << 21;
}

/// Seed for trial `trial` of an experiment with base seed `seed` (SplitMix64
/// finalizer, so neighbouring trials get unrelated keys).
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    let mut z = seed ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rng: &mut RngStream, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, rng.normal_vec(rows * cols)).unwrap()
    }

    #[test]
    fn least_squares_identity_design() {
        let x = Matrix::identity(2);
        let w = least_squares(&x, &[3.0, -1.0]).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-14 && (w[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn least_squares_single_column_is_mean() {
        let x = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let w = least_squares(&x, &[2.0, 4.0]).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn least_squares_noiseless_recovers_generator() {
        let mut rng = RngStream::new(11, 0);
        let x = random_matrix(&mut rng, 20, 3);
        let w_star = [1.0, 0.0, 1.0];
        let y = x.mul_vec(&w_star);
        let w = least_squares(&x, &y).unwrap();
        for (a, b) in w.iter().zip(w_star) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn least_squares_rejects_mismatched_response() {
        let x = Matrix::identity(3);
        assert!(matches!(least_squares(&x, &[1.0, 2.0]), Err(Error::Input(_))));
    }

    #[test]
    fn least_squares_residual_orthogonal_to_columns() {
        let mut rng = RngStream::new(5, 1);
        for _ in 0..10 {
            let x = random_matrix(&mut rng, 30, 6);
            let y = rng.normal_vec(30);
            let w = least_squares(&x, &y).unwrap();
            let fit = x.mul_vec(&w);
            let resid: Vec<f64> = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
            let lhs = norm(&x.tr_mul_vec(&resid));
            let rhs = norm(&x.tr_mul_vec(&y));
            assert!(lhs <= 1e-8 * rhs, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn least_squares_zero_design_gives_zero() {
        let x = Matrix::zeros(4, 3);
        let w = least_squares(&x, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(w.into_inner(), vec![0.0; 3]);
    }

    #[test]
    fn eigen_diagonal() {
        let m = Matrix::from_rows(&[[3.0, 0.0], [0.0, 1.0]]).unwrap();
        let (l, v) = top_eigenpair(&m).unwrap();
        assert!((l - 3.0).abs() < 1e-10);
        assert!((v[0].abs() - 1.0).abs() < 1e-8 && v[1].abs() < 1e-8);
    }

    #[test]
    fn eigen_zero_matrix() {
        let (l, v) = top_eigenpair(&Matrix::zeros(4, 4)).unwrap();
        assert_eq!(l, 0.0);
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_rejects_asymmetric() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(top_eigenpair(&m), Err(Error::Input(_))));
    }

    #[test]
    fn eigen_residual_on_nearly_degenerate_top() {
        // gap of 1e-6 relative: power iteration alone cannot converge in 200 steps
        let m = Matrix::from_rows(&[
            [1.0, 0.0, 0.0],
            [0.0, 1.0 - 1e-6, 0.0],
            [0.0, 0.0, 0.5],
        ])
        .unwrap();
        let (l, v) = top_eigenpair(&m).unwrap();
        let mv = m.mul_vec(&v);
        let r: f64 = mv.iter().zip(v.iter()).map(|(a, b)| (a - l * b).powi(2)).sum::<f64>().sqrt();
        assert!(r <= 1e-8 * l.max(1.0));
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rng_streams_reproducible_and_distinct() {
        let a: Vec<u64> = (0..5).map({
            let mut r = RngStream::new(42, 7);
            move |_| r.next_u64()
        }).collect();
        let b: Vec<u64> = (0..5).map({
            let mut r = RngStream::new(42, 7);
            move |_| r.next_u64()
        }).collect();
        let c: Vec<u64> = (0..5).map({
            let mut r = RngStream::new(42, 8);
            move |_| r.next_u64()
        }).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn gram_matches_explicit_product() {
        let mut rng = RngStream::new(3, 3);
        let x = random_matrix(&mut rng, 7, 4);
        let g = x.gram();
        let t = x.transpose();
        for i in 0..4 {
            for j in 0..4 {
                let e: f64 = (0..7).map(|k| t[(i, k)] * x[(k, j)]).sum();
                assert!((g[(i, j)] - e).abs() < 1e-12);
            }
        }
    }
}
