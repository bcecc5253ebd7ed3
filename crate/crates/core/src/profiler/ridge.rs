//! One-vs-rest ridge classifier with the penalty picked by generalized
//! cross-validation.

use nalgebra::{DMatrix, SymmetricEigen};

#[derive(Debug, Clone, PartialEq)]
pub enum RidgeError {
    Empty,
    Ragged,
    SingleClass,
    BadAlphas,
}

impl std::fmt::Display for RidgeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RidgeError::Empty => "no training rows",
            RidgeError::Ragged => "feature rows differ in length",
            RidgeError::SingleClass => "training data holds a single class",
            RidgeError::BadAlphas => "penalty grid must be non-empty and positive",
        })
    }
}

impl std::error::Error for RidgeError {}

/// `n` points log-spaced between `10^lo` and `10^hi`.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![10f64.powf(lo)];
    }
    (0..n).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64)).collect()
}

/// Default penalty grid.
pub fn default_alphas() -> Vec<f64> {
    logspace(-3.0, 5.0, 17)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeClassifier {
    /// `p x k` weights on raw features.
    weights: DMatrix<f64>,
    intercepts: Vec<f64>,
    alpha: f64,
}

impl RidgeClassifier {
    /// Fits one ridge regression per class on +1/-1 targets. `labels` are
    /// class indices below `n_classes`.
    pub fn fit(x: &[Vec<f64>], labels: &[usize], n_classes: usize, alphas: &[f64]) -> Result<Self, RidgeError> {
        if x.is_empty() || x.len() != labels.len() {
            return Err(RidgeError::Empty);
        }
        if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0)) {
            return Err(RidgeError::BadAlphas);
        }
        let n = x.len();
        let p = x[0].len();
        if x.iter().any(|r| r.len() != p) {
            return Err(RidgeError::Ragged);
        }
        let mut seen = vec![false; n_classes];
        labels.iter().for_each(|&l| seen[l] = true);
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(RidgeError::SingleClass);
        }

        let xm = DMatrix::from_fn(n, p, |i, j| x[i][j]);
        let x_mean: Vec<f64> = (0..p).map(|j| xm.column(j).mean()).collect();
        let xc = DMatrix::from_fn(n, p, |i, j| xm[(i, j)] - x_mean[j]);
        let y = DMatrix::from_fn(n, n_classes, |i, c| if labels[i] == c { 1.0 } else { -1.0 });
        let y_mean: Vec<f64> = (0..n_classes).map(|c| y.column(c).mean()).collect();
        let yc = DMatrix::from_fn(n, n_classes, |i, c| y[(i, c)] - y_mean[c]);

        // Eigenbasis of the smaller Gram matrix. In the dual case U spans the
        // sample space; in the primal case Xc = U S V^T gives U^T Yc =
        // S^-1 V^T Xc^T Yc on the non-null directions.
        let dual = n <= p;
        let gram = if dual { &xc * xc.transpose() } else { xc.transpose() * &xc };
        let eig = SymmetricEigen::new(gram);
        let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        let lmax = lambdas.iter().cloned().fold(0.0, f64::max);
        let tol = lmax * 1e-12 * n.max(p) as f64;
        let basis = &eig.eigenvectors;
        let proj = if dual { basis.transpose() * &yc } else { basis.transpose() * (xc.transpose() * &yc) };
        // squared norm of U_i^T Yc per direction, summed over classes
        let energy: Vec<f64> = (0..lambdas.len())
            .map(|i| {
                if lambdas[i] <= tol {
                    return 0.0;
                }
                let e: f64 = proj.row(i).iter().map(|v| v * v).sum();
                if dual {
                    e
                } else {
                    e / lambdas[i]
                }
            })
            .collect();
        let total: f64 = yc.iter().map(|v| v * v).sum();

        let gcv = |alpha: f64| {
            let mut resid = total;
            let mut trace = 1.0; // intercept
            for (&l, &e) in lambdas.iter().zip(&energy) {
                if l > tol {
                    let shrink = alpha / (l + alpha);
                    resid -= (1.0 - shrink * shrink) * e;
                    trace += l / (l + alpha);
                }
            }
            let denom = 1.0 - trace / n as f64;
            resid.max(0.0) / n as f64 / (denom * denom)
        };
        let mut alpha = alphas[0];
        let mut best = gcv(alpha);
        for &a in &alphas[1..] {
            let g = gcv(a);
            if g < best {
                best = g;
                alpha = a;
            }
        }

        let inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            lambdas.len(),
            lambdas.iter().map(|&l| 1.0 / (l + alpha)),
        ));
        let weights = if dual {
            let coef = basis * inv * &proj;
            xc.transpose() * coef
        } else {
            basis * inv * &proj
        };
        let intercepts =
            (0..n_classes).map(|c| y_mean[c] - (0..p).map(|j| x_mean[j] * weights[(j, c)]).sum::<f64>()).collect();
        Ok(Self { weights, intercepts, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_classes(&self) -> usize {
        self.intercepts.len()
    }

    /// Raw one-vs-rest outputs.
    pub fn decision_function(&self, features: &[f64]) -> Vec<f64> {
        (0..self.n_classes())
            .map(|c| {
                self.intercepts[c] + features.iter().zip(self.weights.column(c).iter()).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Softmax of the raw outputs.
    pub fn predict_proba(&self, features: &[f64]) -> Vec<f64> {
        softmax(&self.decision_function(features))
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}
