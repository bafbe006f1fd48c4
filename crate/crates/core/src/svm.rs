//! One-vs-rest linear SVM trained by dual coordinate descent.
//!
//! Each binary machine solves the L2-regularized L1-hinge problem
//!
//! ```text
//! min_w  ½‖w‖² + C Σ max(0, 1 − yᵢ wᵀx̂ᵢ)
//! ```
//!
//! where `x̂ = [x, 1]` appends a constant feature for the bias. The dual is
//! maximized one coordinate at a time with an exact clipped Newton step, so
//! the dual objective never decreases.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{TissueClass, NUM_CLASSES};

const MAGIC: &[u8; 4] = b"SVM1";
const STD_FLOOR: f64 = 1e-8;
const STEP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-4,
            max_iter: 1000,
            seed: 0,
        }
    }
}

/// Per-dimension z-scoring with a floor on the standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit<S: AsRef<[f64]>>(rows: &[S]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::EmptyInput("no rows to standardize".into()))?;
        let d = first.as_ref().len();
        let n = rows.len() as f64;
        let mut means = vec![0.0; d];
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimMismatch {
                    expected: d,
                    actual: r.len(),
                });
            }
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in vars.iter_mut().zip(r.as_ref()).zip(&means) {
                *s += (v - m).powi(2);
            }
        }
        let stds = vars.into_iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { means, stds })
    }

    /// Identity transform of dimension `d`.
    pub fn identity(d: usize) -> Self {
        Self {
            means: vec![0.0; d],
            stds: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// A single `wᵀx + b` machine.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMachine {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl BinaryMachine {
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

/// Training trace of one binary machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineReport {
    pub epochs: usize,
    /// Largest projected-gradient magnitude seen in the last epoch.
    pub final_violation: f64,
    pub converged: bool,
    /// Dual objective after every epoch.
    pub dual_objective: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains one machine on labels `ys ∈ {−1, +1}`.
pub fn train_binary<S: AsRef<[f64]>>(
    xs: &[S],
    ys: &[f64],
    c: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> (BinaryMachine, MachineReport) {
    let n = xs.len();
    let d = xs.first().map_or(0, |x| x.as_ref().len());
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut alpha = vec![0.0; n];
    let qd: Vec<f64> = xs.iter().map(|x| dot(x.as_ref(), x.as_ref()) + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut report = MachineReport {
        epochs: 0,
        final_violation: f64::INFINITY,
        converged: false,
        dual_objective: Vec::new(),
    };
    while report.epochs < max_iter {
        order.shuffle(&mut rng);
        let mut violation: f64 = 0.0;
        for &i in &order {
            let x = xs[i].as_ref();
            let y = ys[i];
            let g = y * (dot(&w, x) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            violation = violation.max(pg.abs());
            if pg.abs() > STEP_EPS {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * y;
                if delta != 0.0 {
                    for (wj, xj) in w.iter_mut().zip(x) {
                        *wj += delta * xj;
                    }
                    b += delta;
                }
            }
        }
        report.epochs += 1;
        report.final_violation = violation;
        report
            .dual_objective
            .push(alpha.iter().sum::<f64>() - 0.5 * (dot(&w, &w) + b * b));
        if violation <= tol {
            report.converged = true;
            break;
        }
    }
    if !report.converged {
        log::warn!(
            "SVM did not converge in {max_iter} epochs (violation {:.3e})",
            report.final_violation
        );
    }
    (BinaryMachine { weights: w, bias: b }, report)
}

/// Seven one-vs-rest machines over standardized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// `7 x dim`, row-major, one row per class.
    weights: Vec<f64>,
    biases: [f64; NUM_CLASSES],
    standardizer: Standardizer,
}

#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: SvmModel,
    pub params: SvmParams,
    /// One report per class, in class order.
    pub reports: Vec<MachineReport>,
}

pub fn svm_train<S>(xs: &[S], labels: &[TissueClass], params: &SvmParams) -> Result<SvmFit>
where
    S: AsRef<[f64]> + Sync,
{
    svm_train_with(xs, labels, params, Exec::default())
}

pub fn svm_train_with<S>(xs: &[S], labels: &[TissueClass], params: &SvmParams, exec: Exec) -> Result<SvmFit>
where
    S: AsRef<[f64]> + Sync,
{
    if xs.len() != labels.len() {
        return Err(Error::Alignment(format!(
            "{} samples but {} labels",
            xs.len(),
            labels.len()
        )));
    }
    if !(params.c > 0.0) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {}", params.c)));
    }
    let mut present = [false; NUM_CLASSES];
    labels.iter().for_each(|l| present[l.index()] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::SingleClassData);
    }
    let standardizer = Standardizer::fit(xs)?;
    let zs: Vec<Vec<f64>> = exec.map(xs, |x| standardizer.apply(x.as_ref()));
    let d = standardizer.dim();

    let machines = exec.map_range(NUM_CLASSES, |k| {
        let ys: Vec<f64> = labels
            .iter()
            .map(|l| if l.index() == k { 1.0 } else { -1.0 })
            .collect();
        let seed = params.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k as u64);
        train_binary(&zs, &ys, params.c, params.tol, params.max_iter, seed)
    });

    let mut weights = Vec::with_capacity(NUM_CLASSES * d);
    let mut biases = [0.0; NUM_CLASSES];
    let mut reports = Vec::with_capacity(NUM_CLASSES);
    for (k, (m, r)) in machines.into_iter().enumerate() {
        weights.extend(m.weights);
        biases[k] = m.bias;
        reports.push(r);
    }
    Ok(SvmFit {
        model: SvmModel {
            weights,
            biases,
            standardizer,
        },
        params: *params,
        reports,
    })
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_class(scores: &[f64; NUM_CLASSES]) -> TissueClass {
    let mut best = 0;
    for k in 1..NUM_CLASSES {
        if scores[k] > scores[best] {
            best = k;
        }
    }
    TissueClass::ALL[best]
}

impl SvmModel {
    pub fn from_parts(weights: Vec<f64>, biases: [f64; NUM_CLASSES], standardizer: Standardizer) -> Result<Self> {
        if weights.len() != NUM_CLASSES * standardizer.dim() {
            return Err(Error::DimMismatch {
                expected: NUM_CLASSES * standardizer.dim(),
                actual: weights.len(),
            });
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite SVM parameter".into()));
        }
        Ok(Self {
            weights,
            biases,
            standardizer,
        })
    }

    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn weights(&self, class: TissueClass) -> &[f64] {
        let d = self.dim();
        &self.weights[class.index() * d..(class.index() + 1) * d]
    }

    pub fn biases(&self) -> &[f64; NUM_CLASSES] {
        &self.biases
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn decision_values(&self, x: &[f64]) -> Result<[f64; NUM_CLASSES]> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let z = self.standardizer.apply(x);
        let mut scores = self.biases;
        for (k, row) in self.weights.chunks_exact(self.dim().max(1)).enumerate().take(NUM_CLASSES) {
            scores[k] += dot(row, &z);
        }
        Ok(scores)
    }

    pub fn predict(&self, x: &[f64]) -> Result<TissueClass> {
        Ok(argmax_class(&self.decision_values(x)?))
    }

    pub fn predict_batch<S>(&self, xs: &[S], exec: Exec) -> Result<Vec<TissueClass>>
    where
        S: AsRef<[f64]> + Sync,
    {
        exec.try_map(xs, |x| self.predict(x.as_ref()))
    }

    /// Weight rows mapped back to raw input units (`w / std`).
    pub fn input_space_weights(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..NUM_CLASSES)
            .map(|k| {
                self.weights[k * d..(k + 1) * d]
                    .iter()
                    .zip(&self.standardizer.stds)
                    .map(|(w, s)| w / s)
                    .collect()
            })
            .collect()
    }

    /// `SVM1`, u32 class count, u32 dim, then means, stds, weights, biases
    /// as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let mut out = Vec::with_capacity(12 + 8 * (2 * d + NUM_CLASSES * d + NUM_CLASSES));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(NUM_CLASSES as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for v in self
            .standardizer
            .means
            .iter()
            .chain(&self.standardizer.stds)
            .chain(&self.weights)
            .chain(&self.biases)
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: String| Error::format("SVM1", m);
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(fmt("bad magic".into()));
        }
        let classes = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if classes != NUM_CLASSES {
            return Err(fmt(format!("expected {NUM_CLASSES} classes, found {classes}")));
        }
        let count = 2 * d + classes * d + classes;
        if bytes.len() != 12 + 8 * count {
            return Err(fmt(format!("expected {} bytes, found {}", 12 + 8 * count, bytes.len())));
        }
        let vals: Vec<f64> = bytes[12..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let standardizer = Standardizer {
            means: vals[..d].to_vec(),
            stds: vals[d..2 * d].to_vec(),
        };
        if standardizer.stds.iter().any(|&s| !(s > 0.0)) {
            return Err(fmt("non-positive standard deviation".into()));
        }
        let weights = vals[2 * d..2 * d + classes * d].to_vec();
        let mut biases = [0.0; NUM_CLASSES];
        biases.copy_from_slice(&vals[2 * d + classes * d..]);
        Self::from_parts(weights, biases, standardizer)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use TissueClass::*;

    fn fixed_model(biases: [f64; 7], w: Vec<f64>, d: usize) -> SvmModel {
        SvmModel::from_parts(w, biases, Standardizer::identity(d)).unwrap()
    }

    #[test]
    fn separable_pair_in_one_dimension() {
        let xs = vec![vec![-1.0], vec![1.0]];
        let labels = [Necrotic, Sloughy];
        let fit = svm_train(&xs, &labels, &SvmParams::default()).unwrap();
        assert_eq!(fit.model.predict(&[-1.0]).unwrap(), Necrotic);
        assert_eq!(fit.model.predict(&[1.0]).unwrap(), Sloughy);
        assert_eq!(fit.reports.len(), 7);
    }

    #[test]
    fn single_class_is_rejected() {
        let xs = vec![vec![0.0], vec![1.0]];
        let r = svm_train(&xs, &[Infected, Infected], &SvmParams::default());
        assert!(matches!(r, Err(Error::SingleClassData)));
        let r = svm_train(&xs, &[Infected, Sloughy], &SvmParams { c: 0.0, ..Default::default() });
        assert!(r.is_err());
        assert!(svm_train(&xs, &[Infected], &SvmParams::default()).is_err());
    }

    #[test]
    fn argmax_and_tie_break() {
        let mut b = [0.0; 7];
        b[2] = 2.0;
        b[0] = -1.0;
        let m = fixed_model(b, vec![0.0; 7], 1);
        assert_eq!(m.predict(&[0.3]).unwrap(), HealthyGranulating);

        let mut b = [-1.0; 7];
        b[1] = 0.5;
        b[4] = 0.5;
        let m = fixed_model(b, vec![0.0; 7], 1);
        assert_eq!(m.predict(&[0.0]).unwrap(), Sloughy);
        assert!(matches!(m.predict(&[0.0, 1.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn decision_values_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..140).map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let labels: Vec<TissueClass> = (0..140).map(|i| TissueClass::ALL[i % 7]).collect();
        let model = svm_train(&xs, &labels, &SvmParams::default()).unwrap().model;

        // scores at the training mean equal the biases
        let at_mean = model.decision_values(&model.standardizer().means.clone()).unwrap();
        for k in 0..7 {
            assert!((at_mean[k] - model.biases()[k]).abs() < 1e-12);
        }

        let probes: Vec<Vec<f64>> = (0..100).map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let batch = model.predict_batch(&probes, Exec::default()).unwrap();
        for (p, b) in probes.iter().zip(&batch) {
            let scores = model.decision_values(p).unwrap();
            assert_eq!(argmax_class(&scores), *b);
            assert_eq!(model.predict(p).unwrap(), *b);
        }

        // finite perturbation along one raw feature
        let raw_w = model.input_space_weights();
        let x = probes[0].clone();
        let mut x2 = x.clone();
        x2[2] += 0.125;
        let (s1, s2) = (model.decision_values(&x).unwrap(), model.decision_values(&x2).unwrap());
        for k in 0..7 {
            assert!(((s2[k] - s1[k]) - raw_w[k][2] * 0.125).abs() < 1e-9);
        }
    }

    #[test]
    fn dual_objective_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // overlapping classes so the solver needs many epochs
        let xs: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| if x[0] + 0.3 * x[1] + rng.random_range(-0.5..0.5) > 0.0 { 1.0 } else { -1.0 }).collect();
        let (_, report) = train_binary(&xs, &ys, 1.0, 1e-6, 500, 1);
        assert!(report.dual_objective.len() > 2);
        for w in report.dual_objective.windows(2) {
            assert!(w[1] >= w[0] - 1e-10, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn non_convergence_is_reported_not_fatal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let ys: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (_, report) = train_binary(&xs, &ys, 100.0, 1e-12, 2, 0);
        assert_eq!(report.epochs, 2);
        assert!(!report.converged);
        assert!(report.final_violation > 1e-12);
    }

    #[test]
    fn duplicating_training_points_keeps_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let centers = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
        let mut xs = Vec::new();
        let mut labels = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..30 {
                xs.push(vec![c[0] + rng.random_range(-1.0..1.0), c[1] + rng.random_range(-1.0..1.0)]);
                labels.push(TissueClass::ALL[k]);
            }
        }
        let params = SvmParams { tol: 1e-8, max_iter: 5000, ..Default::default() };
        let single = svm_train(&xs, &labels, &params).unwrap().model;
        let mut xs2 = xs.clone();
        xs2.extend(xs.iter().cloned());
        let mut labels2 = labels.clone();
        labels2.extend(labels.iter().copied());
        // doubling every point at C is the same problem as C' = 2C on the
        // originals; with separable clusters the argmax is unchanged away
        // from the boundaries
        let double = svm_train(&xs2, &labels2, &params).unwrap().model;
        let mut agree = 0;
        let probes = 200;
        for _ in 0..probes {
            let p = [rng.random_range(-1.5..5.5), rng.random_range(-1.5..5.5)];
            if single.predict(&p).unwrap() == double.predict(&p).unwrap() {
                agree += 1;
            }
        }
        assert!(agree as f64 >= 0.95 * probes as f64, "{agree}/{probes}");
        for x in &xs {
            assert_eq!(single.predict(x).unwrap(), double.predict(x).unwrap());
        }
    }

    #[test]
    fn binary_format_round_trip() {
        let xs = vec![vec![-1.0, 0.5], vec![1.0, 0.25], vec![0.0, 2.0]];
        let labels = [Necrotic, Sloughy, Epithelizing];
        let model = svm_train(&xs, &labels, &SvmParams::default()).unwrap().model;
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..4], b"SVM1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 7);
        assert_eq!(bytes.len(), 12 + 8 * (2 * 2 + 14 + 7));
        assert_eq!(SvmModel::from_bytes(&bytes).unwrap(), model);
        assert!(SvmModel::from_bytes(&bytes[..20]).is_err());
    }

    #[test]
    fn sequential_and_parallel_training_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<Vec<f64>> = (0..210).map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let labels: Vec<TissueClass> = xs.iter().map(|x| TissueClass::ALL[((x[0] + 2.0) * 1.74) as usize % 7]).collect();
        let p = SvmParams::default();
        let a = svm_train_with(&xs, &labels, &p, Exec::Sequential).unwrap().model;
        let b = svm_train_with(&xs, &labels, &p, Exec::Parallel).unwrap().model;
        assert_eq!(a, b);
    }
}
