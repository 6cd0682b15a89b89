//! Multimode Gaussian states in the real quadrature picture.
//!
//! A state over `M` modes is a mean vector ordered `(x1, y1, ..., xM, yM)` and a
//! `2M x 2M` covariance matrix. Vacuum has identity covariance, so the
//! uncertainty bound on every symplectic eigenvalue sits at 1 and a coherent
//! state of amplitude `alpha` carries mean `sqrt(2) * alpha * (cos, sin)`.
//!
//! Gaussian unitaries act through real symplectic matrices: `R -> S R` and
//! `cov -> S cov S^T`. All operations return new values; nothing is mutated in
//! place, so states can be shared freely across threads.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance on covariance symmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Slack below 1 allowed for symplectic eigenvalues.
pub const PHYSICALITY_TOL: f64 = 1e-9;
/// Frobenius tolerance on `S Omega S^T = Omega`.
pub const SYMPLECTIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaussianError {
    #[error("amplitude must be non-negative, got {0}")]
    NegativeAmplitude(f64),
    #[error("squeezing strength must be non-negative, got {0}")]
    NegativeSqueezing(f64),
    #[error("transmission must lie in [0, 1], got {0}")]
    TransmissionOutOfRange(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unknown mode {0}")]
    UnknownMode(ModeLabel),
    #[error("duplicate mode label {0}")]
    DuplicateLabel(ModeLabel),
    #[error("covariance is not symmetric (max deviation {0:e})")]
    NotSymmetric(f64),
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("symplectic eigenvalue {0} violates the uncertainty bound")]
    UncertaintyViolation(f64),
    #[error("matrix is not symplectic (deviation {0:e})")]
    NotSymplectic(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, GaussianError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// The two outer ports of an end coupler. Only the signal port sits behind a
/// circulator; the auxiliary port is the coupler's second input/output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Port {
    Signal,
    Auxiliary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    /// Sensing-arm segment, 1-based.
    SensingSegment(usize),
    /// Slot next to interior reflector `j`, 1-based.
    ReflectorSlot(usize),
    /// Reference-arm segment, 1-based.
    ReferenceSegment(usize),
    InputPort(Side, Port),
    OutputPort(Side, Port),
    /// Free-standing modes that belong to no sensor location.
    Scratch(usize),
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    RightMoving,
    LeftMoving,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeLabel {
    pub site: Site,
    pub direction: Direction,
    pub time_bin: u32,
}

impl ModeLabel {
    pub fn new(site: Site, direction: Direction, time_bin: u32) -> Self {
        Self {
            site,
            direction,
            time_bin,
        }
    }

    pub fn scratch(index: usize) -> Self {
        Self::new(Site::Scratch(index), Direction::NotApplicable, 0)
    }

    pub fn input(side: Side, port: Port, time_bin: u32) -> Self {
        Self::new(
            Site::InputPort(side, port),
            Direction::NotApplicable,
            time_bin,
        )
    }

    pub fn output(side: Side, port: Port, time_bin: u32) -> Self {
        Self::new(
            Site::OutputPort(side, port),
            Direction::NotApplicable,
            time_bin,
        )
    }

    pub fn is_detector(&self) -> bool {
        matches!(self.site, Site::OutputPort(..))
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}/{:?}@{}", self.site, self.direction, self.time_bin)
    }
}

/// Block-diagonal symplectic form `(+) [[0, 1], [-1, 0]]` over `modes` modes.
pub fn symplectic_form(modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * modes, 2 * modes);
    for k in 0..modes {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

/// Real `2M x 2M` symplectic matrix, the phase-space image of a Gaussian unitary.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticMatrix(DMatrix<f64>);

impl SymplecticMatrix {
    /// Checks `S Omega S^T = Omega` before accepting the matrix.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let s = Self::new_unchecked(entries)?;
        let dev = s.symplectic_deviation();
        if dev > SYMPLECTIC_TOL {
            return Err(GaussianError::NotSymplectic(dev));
        }
        Ok(s)
    }

    /// Only the shape is checked. Used for the closed-form constructors below,
    /// which are symplectic by construction.
    pub fn new_unchecked(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || !entries.nrows().is_multiple_of(2) {
            return Err(GaussianError::DimensionMismatch {
                expected: entries.nrows() + entries.nrows() % 2,
                found: entries.ncols(),
            });
        }
        Ok(Self(entries))
    }

    pub fn identity(modes: usize) -> Self {
        Self(DMatrix::identity(2 * modes, 2 * modes))
    }

    pub fn modes(&self) -> usize {
        self.0.nrows() / 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Frobenius norm of `S Omega S^T - Omega`.
    pub fn symplectic_deviation(&self) -> f64 {
        let omega = symplectic_form(self.modes());
        (&self.0 * &omega * self.0.transpose() - omega).norm()
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &SymplecticMatrix) -> Result<Self> {
        if self.0.nrows() != first.0.nrows() {
            return Err(GaussianError::DimensionMismatch {
                expected: self.0.nrows(),
                found: first.0.nrows(),
            });
        }
        Ok(Self(&self.0 * &first.0))
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// `self (+) other`, acting on the concatenated mode list.
    pub fn direct_sum(&self, other: &SymplecticMatrix) -> Self {
        let (a, b) = (self.0.nrows(), other.0.nrows());
        let mut m = DMatrix::zeros(a + b, a + b);
        m.view_mut((0, 0), (a, a)).copy_from(&self.0);
        m.view_mut((a, a), (b, b)).copy_from(&other.0);
        Self(m)
    }
}

/// Single-mode squeezer `[[cosh r + cos chi sinh r, sin chi sinh r], [sin chi sinh r, cosh r - cos chi sinh r]]`.
pub fn squeeze_matrix(r: f64, chi: f64) -> Result<SymplecticMatrix> {
    if !r.is_finite() || !chi.is_finite() {
        return Err(GaussianError::NonFinite("squeeze parameters"));
    }
    if r < 0.0 {
        return Err(GaussianError::NegativeSqueezing(r));
    }
    let (c, s) = (r.cosh(), r.sinh());
    let (cc, sc) = (chi.cos(), chi.sin());
    Ok(SymplecticMatrix(DMatrix::from_row_slice(
        2,
        2,
        &[c + cc * s, sc * s, sc * s, c - cc * s],
    )))
}

/// Counter-clockwise quadrature rotation, so phases add onto the coherent angle.
pub fn phase_shift_matrix(phi: f64) -> SymplecticMatrix {
    let (s, c) = phi.sin_cos();
    SymplecticMatrix(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]))
}

/// Two-mode partial reflector `[[sqrt(T) I, sqrt(1-T) I], [-sqrt(1-T) I, sqrt(T) I]]`.
pub fn beamsplitter_matrix(transmission: f64) -> Result<SymplecticMatrix> {
    if !(0.0..=1.0).contains(&transmission) {
        return Err(GaussianError::TransmissionOutOfRange(transmission));
    }
    let t = transmission.sqrt();
    let r = (1.0 - transmission).sqrt();
    let mut m = DMatrix::zeros(4, 4);
    for k in 0..2 {
        m[(k, k)] = t;
        m[(k, 2 + k)] = r;
        m[(2 + k, k)] = -r;
        m[(2 + k, 2 + k)] = t;
    }
    Ok(SymplecticMatrix(m))
}

/// Gaussian state over labeled modes.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    labels: Vec<ModeLabel>,
}

fn check_unique(labels: &[ModeLabel]) -> Result<()> {
    let mut sorted: Vec<&ModeLabel> = labels.iter().collect();
    sorted.sort();
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            return Err(GaussianError::DuplicateLabel(*w[0]));
        }
    }
    Ok(())
}

/// `(cos theta, sin theta) * sqrt(2) * alpha`.
pub fn coherent_mean(alpha: f64, theta: f64) -> [f64; 2] {
    let amp = std::f64::consts::SQRT_2 * alpha;
    [amp * theta.cos(), amp * theta.sin()]
}

/// Single-mode coherent state labeled `Scratch(0)`.
pub fn coherent_state(alpha: f64, theta: f64) -> Result<GaussianState> {
    GaussianState::coherent(ModeLabel::scratch(0), alpha, theta)
}

impl GaussianState {
    /// The zero-mode state.
    pub fn empty() -> Self {
        Self {
            mean: DVector::zeros(0),
            cov: DMatrix::zeros(0, 0),
            labels: Vec::new(),
        }
    }

    pub fn vacuum(labels: Vec<ModeLabel>) -> Result<Self> {
        check_unique(&labels)?;
        let d = 2 * labels.len();
        Ok(Self {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
            labels,
        })
    }

    pub fn coherent(label: ModeLabel, alpha: f64, theta: f64) -> Result<Self> {
        Self::squeezed_coherent(label, alpha, theta, 0.0, 0.0)
    }

    /// Displaced squeezed vacuum: covariance `S S^T` with `S = squeeze_matrix(r, chi)`
    /// and the coherent mean of `(alpha, theta)`. `chi` is a lab-frame angle.
    pub fn squeezed_coherent(
        label: ModeLabel,
        alpha: f64,
        theta: f64,
        r: f64,
        chi: f64,
    ) -> Result<Self> {
        if !alpha.is_finite() || !theta.is_finite() {
            return Err(GaussianError::NonFinite("coherent amplitude"));
        }
        if alpha < 0.0 {
            return Err(GaussianError::NegativeAmplitude(alpha));
        }
        let s = squeeze_matrix(r, chi)?;
        let cov = s.matrix() * s.matrix().transpose();
        let [x, y] = coherent_mean(alpha, theta);
        Ok(Self {
            mean: DVector::from_vec(vec![x, y]),
            cov,
            labels: vec![label],
        })
    }

    /// Builds a state from raw parts and runs [`GaussianState::validate`].
    pub fn from_parts(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        labels: Vec<ModeLabel>,
    ) -> Result<Self> {
        let state = Self::from_parts_unchecked(mean, cov, labels)?;
        state.validate()?;
        Ok(state)
    }

    /// Shape and label checks only.
    pub fn from_parts_unchecked(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        labels: Vec<ModeLabel>,
    ) -> Result<Self> {
        let d = 2 * labels.len();
        if mean.len() != d {
            return Err(GaussianError::DimensionMismatch {
                expected: d,
                found: mean.len(),
            });
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(GaussianError::DimensionMismatch {
                expected: d,
                found: cov.nrows(),
            });
        }
        check_unique(&labels)?;
        Ok(Self { mean, cov, labels })
    }

    pub fn num_modes(&self) -> usize {
        self.labels.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn labels(&self) -> &[ModeLabel] {
        &self.labels
    }

    pub fn index_of(&self, label: &ModeLabel) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn quadrature_indices(&self, modes: &[ModeLabel]) -> Result<Vec<usize>> {
        let mut idx = Vec::with_capacity(2 * modes.len());
        for m in modes {
            let k = self.index_of(m).ok_or(GaussianError::UnknownMode(*m))?;
            idx.push(2 * k);
            idx.push(2 * k + 1);
        }
        Ok(idx)
    }

    /// Applies `s` to `targets` (in the given order), identity elsewhere.
    pub fn apply_transform(&self, s: &SymplecticMatrix, targets: &[ModeLabel]) -> Result<Self> {
        let k = 2 * targets.len();
        if s.matrix().nrows() != k {
            return Err(GaussianError::DimensionMismatch {
                expected: k,
                found: s.matrix().nrows(),
            });
        }
        check_unique(targets)?;
        let idx = self.quadrature_indices(targets)?;
        let sm = s.matrix();
        let d = self.mean.len();

        let sub_mean = DVector::from_iterator(k, idx.iter().map(|&i| self.mean[i]));
        let new_sub_mean = sm * sub_mean;
        let mut mean = self.mean.clone();
        for (a, &i) in idx.iter().enumerate() {
            mean[i] = new_sub_mean[a];
        }

        // rows: S * cov[idx, :]
        let rows = DMatrix::from_fn(k, d, |a, c| self.cov[(idx[a], c)]);
        let new_rows = sm * rows;
        let mut cov = self.cov.clone();
        for (a, &i) in idx.iter().enumerate() {
            for c in 0..d {
                cov[(i, c)] = new_rows[(a, c)];
            }
        }
        // columns: cov[:, idx] * S^T
        let cols = DMatrix::from_fn(d, k, |r, a| cov[(r, idx[a])]);
        let new_cols = cols * sm.transpose();
        for (a, &i) in idx.iter().enumerate() {
            for r in 0..d {
                cov[(r, i)] = new_cols[(r, a)];
            }
        }
        for &i in &idx {
            for c in 0..d {
                let v = 0.5 * (cov[(i, c)] + cov[(c, i)]);
                cov[(i, c)] = v;
                cov[(c, i)] = v;
            }
        }
        Ok(Self {
            mean,
            cov,
            labels: self.labels.clone(),
        })
    }

    pub fn displace(&self, d: &DVector<f64>) -> Result<Self> {
        if d.len() != self.mean.len() {
            return Err(GaussianError::DimensionMismatch {
                expected: self.mean.len(),
                found: d.len(),
            });
        }
        Ok(Self {
            mean: &self.mean + d,
            cov: self.cov.clone(),
            labels: self.labels.clone(),
        })
    }

    /// Product state; `other`'s modes follow `self`'s.
    pub fn tensor(&self, other: &GaussianState) -> Result<Self> {
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        check_unique(&labels)?;
        let (a, b) = (self.mean.len(), other.mean.len());
        let mut mean = DVector::zeros(a + b);
        mean.rows_mut(0, a).copy_from(&self.mean);
        mean.rows_mut(a, b).copy_from(&other.mean);
        let mut cov = DMatrix::zeros(a + b, a + b);
        cov.view_mut((0, 0), (a, a)).copy_from(&self.cov);
        cov.view_mut((a, a), (b, b)).copy_from(&other.cov);
        Ok(Self { mean, cov, labels })
    }

    /// Keeps only `modes`, in the order given.
    pub fn reduced(&self, modes: &[ModeLabel]) -> Result<Self> {
        check_unique(modes)?;
        let idx = self.quadrature_indices(modes)?;
        let k = idx.len();
        Ok(Self {
            mean: DVector::from_iterator(k, idx.iter().map(|&i| self.mean[i])),
            cov: DMatrix::from_fn(k, k, |r, c| self.cov[(idx[r], idx[c])]),
            labels: modes.to_vec(),
        })
    }

    /// Partial trace over `modes`; the rest keep their relative order.
    pub fn trace_out(&self, modes: &[ModeLabel]) -> Result<Self> {
        for m in modes {
            if self.index_of(m).is_none() {
                return Err(GaussianError::UnknownMode(*m));
            }
        }
        let keep: Vec<ModeLabel> = self
            .labels
            .iter()
            .filter(|l| !modes.contains(l))
            .copied()
            .collect();
        self.reduced(&keep)
    }

    /// Pure-loss channel of transmissivity `eta` on one mode.
    pub fn loss_channel(&self, mode: &ModeLabel, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(GaussianError::TransmissionOutOfRange(eta));
        }
        let idx = self.quadrature_indices(std::slice::from_ref(mode))?;
        let g = eta.sqrt();
        let mut mean = self.mean.clone();
        let mut cov = self.cov.clone();
        let d = mean.len();
        for &i in &idx {
            mean[i] *= g;
            for c in 0..d {
                cov[(i, c)] *= g;
                cov[(c, i)] *= g;
            }
        }
        for &i in &idx {
            cov[(i, i)] += 1.0 - eta;
        }
        Ok(Self {
            mean,
            cov,
            labels: self.labels.clone(),
        })
    }

    /// Mean photon number `|R|^2 / 2 + Tr(cov - I) / 4`.
    pub fn photon_number(&self) -> f64 {
        let d = self.mean.len() as f64;
        self.mean.norm_squared() / 2.0 + (self.cov.trace() - d) / 4.0
    }

    /// Photon number of a single mode.
    pub fn mode_photon_number(&self, mode: &ModeLabel) -> Result<f64> {
        let idx = self.quadrature_indices(std::slice::from_ref(mode))?;
        let (x, y) = (idx[0], idx[1]);
        Ok((self.mean[x].powi(2) + self.mean[y].powi(2)) / 2.0
            + (self.cov[(x, x)] + self.cov[(y, y)] - 2.0) / 4.0)
    }

    /// Symplectic spectrum, ascending, one value per mode.
    ///
    /// With `cov = L L^T`, the antisymmetric `A = L^T Omega L` has eigenvalues
    /// `+-i nu_k`, so `A^T A` is symmetric with each `nu_k^2` appearing twice.
    pub fn symplectic_eigenvalues(&self) -> Result<Vec<f64>> {
        let m = self.num_modes();
        if m == 0 {
            return Ok(Vec::new());
        }
        let chol = self
            .cov
            .clone()
            .cholesky()
            .ok_or(GaussianError::NotPositiveDefinite)?;
        let l = chol.l();
        let a = l.transpose() * symplectic_form(m) * &l;
        let sym = a.transpose() * &a;
        let sym = (&sym + sym.transpose()) * 0.5;
        let mut ev: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        Ok(ev
            .chunks(2)
            .map(|p| (0.5 * (p[0] + p[1])).max(0.0).sqrt())
            .collect())
    }

    /// Checks symmetry, positive definiteness and the uncertainty bound.
    pub fn validate(&self) -> Result<()> {
        let d = 2 * self.labels.len();
        if self.mean.len() != d || self.cov.nrows() != d || self.cov.ncols() != d {
            return Err(GaussianError::DimensionMismatch {
                expected: d,
                found: self.mean.len(),
            });
        }
        check_unique(&self.labels)?;
        if self
            .mean
            .iter()
            .chain(self.cov.iter())
            .any(|v| !v.is_finite())
        {
            return Err(GaussianError::NonFinite("state"));
        }
        if d == 0 {
            return Ok(());
        }
        let scale = self.cov.amax().max(1.0);
        let asym = (&self.cov - self.cov.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(GaussianError::NotSymmetric(asym));
        }
        for nu in self.symplectic_eigenvalues()? {
            if nu < 1.0 - PHYSICALITY_TOL {
                return Err(GaussianError::UncertaintyViolation(nu));
            }
        }
        Ok(())
    }

    /// Renames every mode through `f`; the result must stay unique.
    pub fn relabel(&self, f: impl Fn(&ModeLabel) -> ModeLabel) -> Result<Self> {
        let labels: Vec<ModeLabel> = self.labels.iter().map(f).collect();
        check_unique(&labels)?;
        Ok(Self {
            mean: self.mean.clone(),
            cov: self.cov.clone(),
            labels,
        })
    }
}
