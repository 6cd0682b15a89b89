//! Fisher information, Cramér–Rao bounds and homodyne sampling.
//!
//! For a Gaussian output with mean `R` and covariance `σ` depending on the
//! sensing phases,
//!
//! ```text
//! F_ij = 2 ∂_i Rᵀ σ⁻¹ ∂_j R + ¼ Tr[σ⁻¹ ∂_i σ σ⁻¹ ∂_j σ].
//! ```
//!
//! [`fisher_matrix`] evaluates this on the dense detector state with central
//! finite differences. [`fisher_information`] gets the same matrix from the
//! transfer amplitudes and their phase tangents, restricted to the subspace
//! spanned by the squeezed sources (`σ = I + V K Vᵀ`), which keeps every solve
//! at the size of the number of squeezed inputs.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussian::{GaussianError, GaussianState};
use crate::lattice::{propagate, run_sensor, ConfigError, SensorConfig, Transfer};
use crate::parallel::Execution;

/// Above this condition number the phases count as indistinguishable.
pub const MAX_CONDITION: f64 = 1e12;
/// Largest relative change in F allowed when the step is halved.
pub const STEP_CONVERGENCE_TOL: f64 = 1e-3;
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetrologyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("parameters indistinguishable: condition number {condition:e}")]
    Indistinguishable { condition: f64 },
    #[error("Fisher matrix is not symmetric")]
    NotSymmetric,
    #[error("covariance matrix is not positive definite")]
    SingularCovariance,
    #[error("finite-difference step {step} is not positive")]
    InvalidStep { step: f64 },
    #[error("derivatives did not converge: halving the step changed F by {relative_change:e}")]
    StepNotConverged { relative_change: f64 },
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("{expected} quadrature angles needed, got {found}")]
    AngleCount { expected: usize, found: usize },
    #[error("no sensing phase to estimate")]
    Unsupported,
}

pub type Result<T> = std::result::Result<T, MetrologyError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    #[serde(with = "rows")]
    pub matrix: DMatrix<f64>,
    pub crb_variances: Vec<f64>,
    pub total_variance: f64,
    pub condition_number: f64,
}

impl FisherResult {
    /// Attaches the Cramér–Rao bound to a Fisher matrix.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let bound = crb(&matrix)?;
        Ok(Self {
            total_variance: bound.variances.iter().sum(),
            crb_variances: bound.variances,
            condition_number: bound.condition_number,
            matrix,
        })
    }
}

/// Rows of a matrix as plain vectors.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Square matrices as JSON arrays of rows.
mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(super::matrix_rows(m))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(D::Error::custom("matrix must be square"));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crb {
    pub variances: Vec<f64>,
    pub condition_number: f64,
}

/// Diagonal of `F⁻¹` together with the condition number of `F`.
pub fn crb(fisher: &DMatrix<f64>) -> Result<Crb> {
    let n = fisher.nrows();
    if n == 0 || fisher.ncols() != n {
        return Err(MetrologyError::NotSymmetric);
    }
    let scale = fisher.amax();
    if !scale.is_finite() {
        return Err(MetrologyError::Indistinguishable {
            condition: f64::INFINITY,
        });
    }
    if (fisher - fisher.transpose()).amax() > 1e-8 * scale {
        return Err(MetrologyError::NotSymmetric);
    }
    let sym = (fisher + fisher.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(MetrologyError::Indistinguishable { condition });
    }
    let chol = Cholesky::new(sym).ok_or(MetrologyError::Indistinguishable { condition })?;
    let inverse = chol.inverse();
    Ok(Crb {
        variances: (0..n).map(|i| inverse[(i, i)]).collect(),
        condition_number: condition,
    })
}

/// `Q = classical / quantum` total variance.
pub fn quantum_advantage(
    classical_total_variance: f64,
    quantum_total_variance: f64,
) -> Result<f64> {
    for v in [classical_total_variance, quantum_total_variance] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(MetrologyError::NonPositiveVariance(v));
        }
    }
    Ok(classical_total_variance / quantum_total_variance)
}

/// Fisher matrix of the dense detector state by central differences of
/// `run_sensor` in every sensing phase, checked against a halved step.
pub fn fisher_matrix(config: &SensorConfig, step: f64) -> Result<FisherResult> {
    fisher_matrix_with(config, step, Execution::default())
}

pub fn fisher_matrix_with(
    config: &SensorConfig,
    step: f64,
    execution: Execution,
) -> Result<FisherResult> {
    let matrix = fisher_matrix_dense(config, step, execution)?;
    FisherResult::from_matrix(matrix)
}

/// The raw finite-difference Fisher matrix, without the bound.
pub fn fisher_matrix_dense(
    config: &SensorConfig,
    step: f64,
    execution: Execution,
) -> Result<DMatrix<f64>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(MetrologyError::InvalidStep { step });
    }
    config.validate()?;
    let coarse = finite_difference_fisher(config, step, execution)?;
    let fine = finite_difference_fisher(config, step / 2.0, execution)?;
    let scale = coarse.amax().max(fine.amax());
    let change = if scale > 0.0 {
        (&coarse - &fine).amax() / scale
    } else {
        0.0
    };
    if change > STEP_CONVERGENCE_TOL {
        return Err(MetrologyError::StepNotConverged {
            relative_change: change,
        });
    }
    Ok(fine)
}

fn finite_difference_fisher(
    config: &SensorConfig,
    h: f64,
    execution: Execution,
) -> Result<DMatrix<f64>> {
    let n = config.n_phases;
    let runs = execution.map_range(2 * n, |k| {
        let mut c = config.clone();
        c.sensing_phases[k / 2] += if k % 2 == 0 { h } else { -h };
        run_sensor(&c).map(|out| out.state)
    });
    let runs: Vec<GaussianState> = runs.into_iter().collect::<std::result::Result<_, _>>()?;
    let centre = run_sensor(config)?.state;

    let dim = centre.mean().len();
    let mut d_mean = DMatrix::zeros(dim, n);
    let mut d_cov = Vec::with_capacity(n);
    for i in 0..n {
        let (plus, minus) = (&runs[2 * i], &runs[2 * i + 1]);
        d_mean.set_column(i, &((plus.mean() - minus.mean()) / (2.0 * h)));
        d_cov.push((plus.cov() - minus.cov()) / (2.0 * h));
    }
    gaussian_fisher(centre.cov(), &d_mean, &d_cov)
}

/// Assembles the Gaussian Fisher formula from `σ` and its derivatives with a
/// Cholesky factorization of `σ`.
pub fn gaussian_fisher(
    cov: &DMatrix<f64>,
    d_mean: &DMatrix<f64>,
    d_cov: &[DMatrix<f64>],
) -> Result<DMatrix<f64>> {
    let n = d_mean.ncols();
    let chol = Cholesky::new(cov.clone()).ok_or(MetrologyError::SingularCovariance)?;
    let solved = chol.solve(d_mean);
    let mut f = (d_mean.transpose() * solved) * 2.0;
    if d_cov.iter().any(|d| d.amax() > 0.0) {
        let y: Vec<DMatrix<f64>> = d_cov.iter().map(|d| chol.solve(d)).collect();
        for i in 0..n {
            for j in i..n {
                let t = y[i].component_mul(&y[j].transpose()).sum();
                f[(i, j)] += 0.25 * t;
                if i != j {
                    f[(j, i)] += 0.25 * t;
                }
            }
        }
    }
    Ok((&f + f.transpose()) * 0.5)
}

/// 2×2 real image of multiplication by `z`.
fn real_block(z: Complex64) -> [[f64; 2]; 2] {
    [[z.re, -z.im], [z.im, z.re]]
}

/// Real `2a × 2b` matrix whose blocks are the real images of `X† Y` for two
/// sets of complex columns.
fn real_gram(x: &[Vec<Complex64>], y: &[Vec<Complex64>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(2 * x.len(), 2 * y.len());
    for (a, xa) in x.iter().enumerate() {
        for (b, yb) in y.iter().enumerate() {
            let z: Complex64 = xa.iter().zip(yb).map(|(u, v)| u.conj() * v).sum();
            let blk = real_block(z);
            for r in 0..2 {
                for c in 0..2 {
                    out[(2 * a + r, 2 * b + c)] = blk[r][c];
                }
            }
        }
    }
    out
}

/// Real `2a`-vector `Xᵀ w` for complex columns `X` and a real quadrature
/// vector `w` given as complex amplitudes `(w_x + i w_y)`.
fn real_project(x: &[Vec<Complex64>], w: &[Complex64]) -> DVector<f64> {
    let mut out = DVector::zeros(2 * x.len());
    for (a, xa) in x.iter().enumerate() {
        let z: Complex64 = xa.iter().zip(w).map(|(u, v)| u.conj() * v).sum();
        out[2 * a] = z.re;
        out[2 * a + 1] = z.im;
    }
    out
}

/// Fisher matrix from transfer amplitudes and analytic phase tangents.
pub fn fisher_information(config: &SensorConfig) -> Result<DMatrix<f64>> {
    let transfer = propagate(config, true)?;
    transfer_fisher(&transfer)
}

/// Fisher matrix of a [`Transfer`] computed with tangents.
pub fn transfer_fisher(tr: &Transfer) -> Result<DMatrix<f64>> {
    let n = tr.n_phases;
    if tr.tangents.len() != n {
        return Err(MetrologyError::Unsupported);
    }
    let s_count = tr.sources.len();
    let d_count = tr.detectors.len();
    let column = |table: &[Complex64], s: usize| -> Vec<Complex64> {
        (0..d_count).map(|d| table[d * s_count + s]).collect()
    };

    // derivative of the complex detector mean; ∂R = √2 (re, im)
    let d_mean: Vec<Vec<Complex64>> = (0..n)
        .map(|i| {
            (0..d_count)
                .map(|d| {
                    let row = &tr.tangents[i][d * s_count..(d + 1) * s_count];
                    row.iter()
                        .zip(&tr.sources)
                        .map(|(g, src)| g * src.mean)
                        .sum()
                })
                .collect()
        })
        .collect();

    let squeezed: Vec<usize> = (0..s_count).filter(|&s| tr.sources[s].r > 0.0).collect();
    let mut f = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let z: Complex64 = d_mean[i]
                .iter()
                .zip(&d_mean[j])
                .map(|(a, b)| a.conj() * b)
                .sum();
            f[(i, j)] = 4.0 * z.re;
        }
    }
    if squeezed.is_empty() {
        for i in 0..n {
            for j in 0..i {
                f[(i, j)] = f[(j, i)];
            }
        }
        return Ok(f);
    }

    let q = squeezed.len();
    let v_cols: Vec<Vec<Complex64>> = squeezed
        .iter()
        .map(|&s| column(&tr.amplitudes, s))
        .collect();
    let g_cols: Vec<Vec<Vec<Complex64>>> = (0..n)
        .map(|i| {
            squeezed
                .iter()
                .map(|&s| column(&tr.tangents[i], s))
                .collect()
        })
        .collect();

    let mut k = DMatrix::zeros(2 * q, 2 * q);
    let mut k_inv = DMatrix::zeros(2 * q, 2 * q);
    for (a, &s) in squeezed.iter().enumerate() {
        let e = tr.sources[s].excess_covariance();
        let det = e[0][0] * e[1][1] - e[0][1] * e[1][0];
        for r in 0..2 {
            for c in 0..2 {
                k[(2 * a + r, 2 * a + c)] = e[r][c];
            }
        }
        k_inv[(2 * a, 2 * a)] = e[1][1] / det;
        k_inv[(2 * a + 1, 2 * a + 1)] = e[0][0] / det;
        k_inv[(2 * a, 2 * a + 1)] = -e[0][1] / det;
        k_inv[(2 * a + 1, 2 * a)] = -e[1][0] / det;
    }

    // basis 0 is V, basis 1 + i is G_i
    let mut bases: Vec<&[Vec<Complex64>]> = vec![&v_cols];
    bases.extend(g_cols.iter().map(|g| g.as_slice()));
    let nb = bases.len();
    let mut gram = vec![vec![DMatrix::zeros(0, 0); nb]; nb];
    for a in 0..nb {
        for b in a..nb {
            let g = real_gram(bases[a], bases[b]);
            if a != b {
                gram[b][a] = g.transpose();
            }
            gram[a][b] = g;
        }
    }
    let c = &k_inv + &gram[0][0];
    let lu = c.lu();
    let solve = |m: &DMatrix<f64>| lu.solve(m).ok_or(MetrologyError::SingularCovariance);
    // σ⁻¹ = I - V C⁻¹ Vᵀ, so Xᵀ σ⁻¹ Y = XᵀY - XᵀV C⁻¹ VᵀY
    let c_inv_v: Vec<DMatrix<f64>> = (0..nb).map(|b| solve(&gram[0][b])).collect::<Result<_>>()?;
    let m_gram = |a: usize, b: usize| &gram[a][b] - &gram[a][0] * &c_inv_v[b];

    // mean term correction: ∂R_iᵀ V C⁻¹ Vᵀ ∂R_j
    let vt_dr: Vec<DVector<f64>> = d_mean
        .iter()
        .map(|dm| real_project(&v_cols, dm) * std::f64::consts::SQRT_2)
        .collect();
    let vt_dr_mat = DMatrix::from_columns(&vt_dr);
    let c_inv_dr = solve(&vt_dr_mat)?;
    let correction = vt_dr_mat.transpose() * c_inv_dr;

    // ∂σ_i = A_i B_iᵀ with A_i = [G_i, V], B_i = [V K, G_i K];
    // Tr[σ⁻¹∂σ_i σ⁻¹∂σ_j] = Tr[(B_jᵀ σ⁻¹ A_i)(B_iᵀ σ⁻¹ A_j)]
    let m00 = m_gram(0, 0);
    let m0: Vec<DMatrix<f64>> = (0..n).map(|i| m_gram(0, 1 + i)).collect();
    let block = |j: usize, i: usize| -> DMatrix<f64> {
        let mji = m_gram(1 + j, 1 + i);
        let mj0 = m0[j].transpose();
        let mut p = DMatrix::zeros(4 * q, 4 * q);
        p.view_mut((0, 0), (2 * q, 2 * q)).copy_from(&(&k * &m0[i]));
        p.view_mut((0, 2 * q), (2 * q, 2 * q))
            .copy_from(&(&k * &m00));
        p.view_mut((2 * q, 0), (2 * q, 2 * q))
            .copy_from(&(&k * mji));
        p.view_mut((2 * q, 2 * q), (2 * q, 2 * q))
            .copy_from(&(&k * mj0));
        p
    };
    let blocks: Vec<Vec<DMatrix<f64>>> = (0..n)
        .map(|j| (0..n).map(|i| block(j, i)).collect())
        .collect();

    for i in 0..n {
        for j in i..n {
            let trace = blocks[j][i].component_mul(&blocks[i][j].transpose()).sum();
            f[(i, j)] += -2.0 * correction[(i, j)] + 0.25 * trace;
        }
    }
    for i in 0..n {
        for j in 0..i {
            f[(i, j)] = f[(j, i)];
        }
    }
    Ok(f)
}

/// Draws homodyne records of `q_k = x_k cos ϑ_k + y_k sin ϑ_k` on every mode.
///
/// Rows are samples. Quadrature variances are `σ/2`, so vacuum gives 1/2.
pub fn sample_homodyne(
    state: &GaussianState,
    quadrature_angles: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let m = state.num_modes();
    if quadrature_angles.len() != m {
        return Err(MetrologyError::AngleCount {
            expected: m,
            found: quadrature_angles.len(),
        });
    }
    let mut p = DMatrix::zeros(2 * m, m);
    for (k, &a) in quadrature_angles.iter().enumerate() {
        p[(2 * k, k)] = a.cos();
        p[(2 * k + 1, k)] = a.sin();
    }
    let mean = p.transpose() * state.mean();
    let cov = (p.transpose() * state.cov() * &p) * 0.5;
    let chol = Cholesky::new(cov).ok_or(MetrologyError::SingularCovariance)?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(n_samples, m);
    let mut z = DVector::zeros(m);
    for row in 0..n_samples {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let x = &mean + &l * &z;
        out.set_row(row, &x.transpose());
    }
    Ok(out)
}

/// Outcome of a Monte-Carlo maximum-likelihood study on one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlStudy {
    pub fisher: f64,
    pub estimator_variance: f64,
    pub estimator_mean: f64,
    pub trials: usize,
}

/// Estimates the only sensing phase of a classical single-phase sensor from
/// homodyne records, one record per trial, and returns the spread of the
/// maximum-likelihood estimates.
///
/// Each detector amplitude is affine in `e^{iφ}`, so the detected mean is
/// `A cos φ + B sin φ + C` and is fixed by three sensor runs. Each mode is
/// measured along the direction in which its mean moves.
pub fn homodyne_ml_study(config: &SensorConfig, trials: usize, seed: u64) -> Result<MlStudy> {
    if config.n_phases != 1 || config.pulses.iter().any(|p| p.r > 0.0) {
        return Err(MetrologyError::Unsupported);
    }
    let phi0 = config.sensing_phases[0];
    let at = |phi: f64| -> Result<GaussianState> {
        let mut c = config.clone();
        c.sensing_phases[0] = phi;
        Ok(run_sensor(&c)?.state)
    };
    let state = at(phi0)?;
    let m = state.num_modes();
    let r0 = at(0.0)?.mean().clone();
    let r1 = at(std::f64::consts::FRAC_PI_2)?.mean().clone();
    let r2 = at(std::f64::consts::PI)?.mean().clone();
    let c_vec = (&r0 + &r2) * 0.5;
    let a_vec = (&r0 - &r2) * 0.5;
    let b_vec = &r1 - &c_vec;
    let d_mean = &b_vec * phi0.cos() - &a_vec * phi0.sin();
    let angles: Vec<f64> = (0..m)
        .map(|k| d_mean[2 * k + 1].atan2(d_mean[2 * k]))
        .collect();

    let project = |v: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(m, |k, _| {
            v[2 * k] * angles[k].cos() + v[2 * k + 1] * angles[k].sin()
        })
    };
    let (a, b, c) = (project(&a_vec), project(&b_vec), project(&c_vec));
    let fisher = fisher_matrix(config, DEFAULT_STEP)?.matrix[(0, 0)];

    let samples = sample_homodyne(&state, &angles, trials, seed)?;
    // classical light: independent quadratures of variance 1/2, so ML is
    // least squares on |y - μ(φ)|²
    let estimates: Vec<f64> = (0..trials)
        .map(|t| {
            let y = samples.row(t).transpose() - &c;
            let mut phi = phi0;
            for _ in 0..50 {
                let (cs, sn) = (phi.cos(), phi.sin());
                let mu = &a * cs + &b * sn;
                let d1 = &b * cs - &a * sn;
                let d2 = -&mu;
                let resid = &y - &mu;
                let grad = -2.0 * resid.dot(&d1);
                let hess = 2.0 * (d1.dot(&d1) - resid.dot(&d2));
                let stepv = if hess > 0.0 {
                    grad / hess
                } else {
                    grad.signum() * 1e-2
                };
                phi -= stepv;
                if stepv.abs() < 1e-14 {
                    break;
                }
            }
            phi0 + (phi - phi0 + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
                - std::f64::consts::PI
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / trials as f64;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials as f64 - 1.0);
    Ok(MlStudy {
        fisher,
        estimator_variance: var,
        estimator_mean: mean,
        trials,
    })
}
