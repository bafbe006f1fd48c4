//! Principal component analysis for reducing patch descriptors.
//!
//! Fitting picks the cheapest exact route: the `d x d` covariance when the
//! feature dimension is small, the `n x n` Gram matrix when there are fewer
//! samples than features. When both are large a randomized subspace
//! iteration recovers the leading components.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Reduced dimensionality used for network activations.
pub const DEFAULT_COMPONENTS: usize = 18;

/// Largest covariance or Gram matrix side solved by dense eigendecomposition.
const EXACT_LIMIT: usize = 1500;
const OVERSAMPLE: usize = 10;
const POWER_ITERATIONS: usize = 7;
const RANK_TOL: f64 = 1e-10;
const ROW_CHUNK: usize = 256;

const MAGIC: &[u8; 4] = b"PCA1";

pub type ReducedVector = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `m x d`, row-major; rows orthonormal.
    components: Vec<f64>,
    explained_variance: Vec<f64>,
    dim: usize,
    n_components: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcaWarning {
    /// Fewer than `requested` directions carry variance; the trailing
    /// components are arbitrary orthonormal completions with zero variance.
    RankDeficient { rank: usize, requested: usize },
}

#[derive(Debug, Clone)]
pub struct PcaFit {
    pub model: PcaModel,
    pub warning: Option<PcaWarning>,
}

/// Fits `m` principal components to `samples`.
pub fn pca_fit<S>(samples: &[S], m: usize) -> Result<PcaFit>
where
    S: AsRef<[f64]> + Sync,
{
    pca_fit_with(samples, m, Exec::default())
}

pub fn pca_fit_with<S>(samples: &[S], m: usize, exec: Exec) -> Result<PcaFit>
where
    S: AsRef<[f64]> + Sync,
{
    let n = samples.len();
    if n < 2 {
        return Err(Error::DegenerateData(format!("PCA needs at least 2 samples, got {n}")));
    }
    let d = samples[0].as_ref().len();
    if let Some(bad) = samples.iter().find(|s| s.as_ref().len() != d) {
        return Err(Error::DimMismatch {
            expected: d,
            actual: bad.as_ref().len(),
        });
    }
    let max_m = d.min(n - 1);
    if m == 0 || m > max_m {
        return Err(Error::InvalidComponents { requested: m, max: max_m });
    }

    let mean = column_mean(samples, d, exec);
    let mut xc = DMatrix::<f64>::zeros(n, d);
    for (i, s) in samples.iter().enumerate() {
        for (j, (&v, &mu)) in s.as_ref().iter().zip(&mean).enumerate() {
            xc[(i, j)] = v - mu;
        }
    }

    let (mut vectors, eigenvalues) = if d <= EXACT_LIMIT && d <= n {
        covariance_route(&xc, m, exec)
    } else if n <= EXACT_LIMIT {
        gram_route(&xc, m, exec)
    } else {
        randomized_route(&xc, m, exec)
    };

    let scale = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let tol = scale * RANK_TOL;
    let rank = eigenvalues.iter().take(m).filter(|&&l| l > tol && l > 0.0).count();
    // Vectors beyond the numerical rank may be unreliable; rebuild them.
    vectors.truncate(rank);
    complete_orthonormal(&mut vectors, d, m);

    let denom = (n - 1) as f64;
    let mut ranked: Vec<(Vec<f64>, f64)> = vectors
        .into_iter()
        .enumerate()
        .map(|(k, mut v)| {
            fix_sign(&mut v);
            let var = if k < rank {
                let col = DVector::from_column_slice(&v);
                (&xc * col).norm_squared() / denom
            } else {
                0.0
            };
            (v, var)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));

    let warning = (rank < m).then_some(PcaWarning::RankDeficient { rank, requested: m });
    if let Some(w) = warning {
        log::warn!("PCA: {w:?}");
    }
    let mut components = Vec::with_capacity(m * d);
    let mut explained_variance = Vec::with_capacity(m);
    for (v, var) in ranked {
        components.extend(v);
        explained_variance.push(var);
    }
    Ok(PcaFit {
        model: PcaModel {
            mean,
            components,
            explained_variance,
            dim: d,
            n_components: m,
        },
        warning,
    })
}

fn column_mean<S: AsRef<[f64]> + Sync>(samples: &[S], d: usize, exec: Exec) -> Vec<f64> {
    let partials = exec.map_chunks(samples, ROW_CHUNK, |chunk| {
        let mut acc = vec![0.0; d];
        for s in chunk {
            for (a, &v) in acc.iter_mut().zip(s.as_ref()) {
                *a += v;
            }
        }
        acc
    });
    let mut mean = vec![0.0; d];
    for p in partials {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let n = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// `Xᵀ X` accumulated over fixed row blocks, summed in block order.
fn blocked_tr_mul(x: &DMatrix<f64>, exec: Exec) -> DMatrix<f64> {
    let n = x.nrows();
    let starts: Vec<usize> = (0..n).step_by(ROW_CHUNK).collect();
    let partials = exec.map(&starts, |&start| {
        let rows = ROW_CHUNK.min(n - start);
        let block = x.rows(start, rows);
        block.tr_mul(&block)
    });
    let mut acc = DMatrix::zeros(x.ncols(), x.ncols());
    for p in partials {
        acc += p;
    }
    acc
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(matrix: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let eig = SymmetricEigen::new(matrix);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (vectors, values)
}

fn covariance_route(xc: &DMatrix<f64>, m: usize, exec: Exec) -> (Vec<Vec<f64>>, Vec<f64>) {
    let denom = (xc.nrows() - 1) as f64;
    let cov = blocked_tr_mul(xc, exec) / denom;
    let (vecs, vals) = sorted_eigen(cov);
    let vectors = (0..m).map(|k| vecs.column(k).iter().copied().collect()).collect();
    (vectors, vals)
}

fn gram_route(xc: &DMatrix<f64>, m: usize, exec: Exec) -> (Vec<Vec<f64>>, Vec<f64>) {
    let denom = (xc.nrows() - 1) as f64;
    let xt = xc.transpose();
    let gram = blocked_tr_mul(&xt, exec) / denom;
    let (u, vals) = sorted_eigen(gram);
    let vectors = exec.map_range(m, |k| {
        let v = &xt * u.column(k);
        let norm = v.norm();
        if norm > 0.0 {
            (v / norm).iter().copied().collect()
        } else {
            vec![0.0; xc.ncols()]
        }
    });
    (vectors, vals)
}

fn orthonormal_columns(a: DMatrix<f64>) -> DMatrix<f64> {
    a.qr().q()
}

fn randomized_route(xc: &DMatrix<f64>, m: usize, exec: Exec) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (n, d) = xc.shape();
    let l = (m + OVERSAMPLE).min(n.min(d));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1_ab1e);
    let omega = DMatrix::from_fn(d, l, |_, _| rng.random_range(-1.0..1.0));
    let xt = xc.transpose();
    let mut q = orthonormal_columns(par_mul(xc, &omega, exec));
    for _ in 0..POWER_ITERATIONS {
        let z = orthonormal_columns(par_mul(&xt, &q, exec));
        q = orthonormal_columns(par_mul(xc, &z, exec));
    }
    // B = Qᵀ Xc (l x d); its right singular vectors approximate the top
    // principal directions.
    let b = par_mul(&q.transpose(), xc, exec);
    let denom = (n - 1) as f64;
    let (u, vals) = sorted_eigen(&b * b.transpose());
    let bt = b.transpose();
    let vectors = (0..m)
        .map(|k| {
            let v = &bt * u.column(k);
            let norm = v.norm();
            if norm > 0.0 {
                (v / norm).iter().copied().collect()
            } else {
                vec![0.0; d]
            }
        })
        .collect();
    (vectors, vals.into_iter().map(|v| v / denom).collect())
}

/// `a * b`, splitting the rows of `a` into fixed blocks.
fn par_mul(a: &DMatrix<f64>, b: &DMatrix<f64>, exec: Exec) -> DMatrix<f64> {
    let n = a.nrows();
    let starts: Vec<usize> = (0..n).step_by(ROW_CHUNK).collect();
    let blocks = exec.map(&starts, |&start| {
        let rows = ROW_CHUNK.min(n - start);
        a.rows(start, rows) * b
    });
    let mut out = DMatrix::zeros(n, b.ncols());
    for (start, block) in starts.into_iter().zip(blocks) {
        out.rows_mut(start, block.nrows()).copy_from(&block);
    }
    out
}

/// Extends `vectors` to `target` orthonormal vectors using standard basis
/// candidates and two-pass Gram-Schmidt.
fn complete_orthonormal(vectors: &mut Vec<Vec<f64>>, d: usize, target: usize) {
    let mut candidate = 0;
    while vectors.len() < target && candidate < d {
        let mut v = vec![0.0; d];
        v[candidate] = 1.0;
        candidate += 1;
        for _ in 0..2 {
            for u in vectors.iter() {
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (x, &y) in v.iter_mut().zip(u) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            vectors.push(v);
        }
    }
}

/// Flips `v` so its entry of largest magnitude (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Row `k` of the component matrix.
    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k * self.dim..(k + 1) * self.dim]
    }

    pub fn components(&self) -> impl Iterator<Item = &[f64]> {
        self.components.chunks_exact(self.dim)
    }

    pub fn transform(&self, x: &[f64]) -> Result<ReducedVector> {
        if x.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(self
            .components()
            .map(|row| {
                row.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(c, (v, mu))| c * (v - mu))
                    .sum()
            })
            .collect())
    }

    pub fn transform_batch<S>(&self, xs: &[S], exec: Exec) -> Result<Vec<ReducedVector>>
    where
        S: AsRef<[f64]> + Sync,
    {
        exec.try_map(xs, |x| self.transform(x.as_ref()))
    }

    /// `mean + componentsᵀ · reduced`, optionally using only the first `k`
    /// coordinates.
    pub fn reconstruct(&self, reduced: &[f64], k: usize) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (coef, row) in reduced.iter().zip(self.components()).take(k) {
            for (o, c) in out.iter_mut().zip(row) {
                *o += coef * c;
            }
        }
        out
    }

    /// Serializes as `PCA1`, u32 d, u32 m, mean, components, variances
    /// (little-endian f64).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * (self.dim + self.components.len() + self.n_components));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_components as u32).to_le_bytes());
        for v in self.mean.iter().chain(&self.components).chain(&self.explained_variance) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::format("PCA1", m);
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(fmt("bad magic"));
        }
        let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let m = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = d + m * d + m;
        if bytes.len() != 12 + 8 * count {
            return Err(fmt(&format!("expected {} bytes, found {}", 12 + 8 * count, bytes.len())));
        }
        let vals: Vec<f64> = bytes[12..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            mean: vals[..d].to_vec(),
            components: vals[d..d + m * d].to_vec(),
            explained_variance: vals[d + m * d..].to_vec(),
            dim: d,
            n_components: m,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
