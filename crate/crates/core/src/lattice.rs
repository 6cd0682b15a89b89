//! Time-stepped model of the cascaded sensor.
//!
//! The sensing arm holds `N` phase segments separated by `N - 1` partial
//! reflectors; the reference arm is a reflector-free delay line of `N`
//! segments. A 50:50 coupler at each end joins the two arms. Each coupler has a
//! signal port (behind a circulator, used for both injection and detection)
//! and an auxiliary port. Every segment carries one right-moving and one
//! left-moving packet per time step.
//!
//! One step `t` does, in order:
//! 1. packets leaving the arms pass the end couplers into output bin `t`;
//! 2. each reflector `j` mixes the sensing packets `(R_j, L_{j+1})` with
//!    [`beamsplitter_matrix`]`(T_j)` into `(R_{j+1}, L_j)`; reference packets
//!    just move on;
//! 3. pulses scheduled at bin `t` enter through the couplers;
//! 4. every packet picks up the phase of the segment it now occupies.
//!
//! After `t_max = (k_max + 1) N + last pulse bin + N` steps whatever is still
//! inside is discarded and counted as truncation loss.
//!
//! Since the optics are passive, the output is fixed by the complex transfer
//! amplitudes from each non-vacuum input ("source") to each detector mode;
//! vacuum inputs only fill the covariance up to the identity. [`propagate`]
//! computes those amplitudes, optionally with their derivatives in every
//! sensing phase. [`run_sensor_stepwise`] does the same evolution with
//! [`GaussianState`] operations and serves as the reference route.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussian::{
    beamsplitter_matrix, phase_shift_matrix, Direction, GaussianError, GaussianState, ModeLabel,
    Port, Side, Site,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("n_phases must be at least 1")]
    NoPhases,
    #[error("{field} has {found} entries, expected {expected}")]
    Length {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("transmissions[{index}] = {value} is outside [0, 1]")]
    TransmissionOutOfRange { index: usize, value: f64 },
    #[error("k_max must be at least 1")]
    KMax,
    #[error("at least one pulse is required")]
    NoPulses,
    #[error("pulses[{index}].alpha = {value} is negative")]
    NegativeAmplitude { index: usize, value: f64 },
    #[error("pulses[{index}].r = {value} is negative")]
    NegativeSqueezing { index: usize, value: f64 },
    #[error("two pulses share side {side:?} and time bin {time_bin}")]
    DuplicatePulse { side: Side, time_bin: u32 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

impl ConfigError {
    /// JSON field the violation belongs to.
    pub fn field(&self) -> &'static str {
        match self {
            ConfigError::NoPhases => "n_phases",
            ConfigError::Length { field, .. } => field,
            ConfigError::TransmissionOutOfRange { .. } => "transmissions",
            ConfigError::KMax => "k_max",
            ConfigError::NoPulses
            | ConfigError::NegativeAmplitude { .. }
            | ConfigError::NegativeSqueezing { .. }
            | ConfigError::DuplicatePulse { .. } => "pulses",
            ConfigError::NonFinite(field) => field,
            ConfigError::Gaussian(_) => "pulses",
        }
    }
}

/// One injected pulse: a displaced squeezed state entering at `side` in
/// `time_bin`.
///
/// `chi` is measured relative to the pulse's own coherent phase: the lab-frame
/// squeezing angle is `chi + 2 theta`. A common offset on every `theta` is then
/// a global phase and changes nothing observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub side: Side,
    pub time_bin: u32,
    pub alpha: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub chi: f64,
}

impl PulseSpec {
    pub fn coherent(side: Side, time_bin: u32, alpha: f64, theta: f64) -> Self {
        Self {
            side,
            time_bin,
            alpha,
            theta,
            r: 0.0,
            chi: 0.0,
        }
    }

    pub fn lab_squeeze_angle(&self) -> f64 {
        self.chi + 2.0 * self.theta
    }

    pub fn mean_amplitude(&self) -> Complex64 {
        Complex64::from_polar(self.alpha, self.theta)
    }
}

/// What enters the auxiliary coupler port alongside each pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxiliaryInput {
    /// Squeezed vacuum with the pulse's `r` and lab-frame angle, so both arms
    /// receive identically squeezed light and the coupler adds no vacuum noise.
    #[default]
    MatchedSqueezed,
    /// Plain vacuum.
    Vacuum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub n_phases: usize,
    pub transmissions: Vec<f64>,
    pub k_max: usize,
    pub pulses: Vec<PulseSpec>,
    pub sensing_phases: Vec<f64>,
    pub reference_phases: Vec<f64>,
    #[serde(default)]
    pub auxiliary_input: AuxiliaryInput,
}

impl SensorConfig {
    /// All reflectors at `transmission`, all phases zero.
    pub fn uniform(
        n_phases: usize,
        transmission: f64,
        k_max: usize,
        pulses: Vec<PulseSpec>,
    ) -> Self {
        Self {
            n_phases,
            transmissions: vec![transmission; n_phases.saturating_sub(1)],
            k_max,
            pulses,
            sensing_phases: vec![0.0; n_phases],
            reference_phases: vec![0.0; n_phases],
            auxiliary_input: AuxiliaryInput::default(),
        }
    }

    pub fn with_sensing_phases(mut self, phases: Vec<f64>) -> Self {
        self.sensing_phases = phases;
        self
    }

    pub fn set_uniform_transmission(&mut self, transmission: f64) {
        self.transmissions = vec![transmission; self.n_phases.saturating_sub(1)];
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n_phases;
        if n == 0 {
            return Err(ConfigError::NoPhases);
        }
        if self.transmissions.len() != n - 1 {
            return Err(ConfigError::Length {
                field: "transmissions",
                expected: n - 1,
                found: self.transmissions.len(),
            });
        }
        if self.sensing_phases.len() != n {
            return Err(ConfigError::Length {
                field: "sensing_phases",
                expected: n,
                found: self.sensing_phases.len(),
            });
        }
        if self.reference_phases.len() != n {
            return Err(ConfigError::Length {
                field: "reference_phases",
                expected: n,
                found: self.reference_phases.len(),
            });
        }
        for (index, &value) in self.transmissions.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::TransmissionOutOfRange { index, value });
            }
        }
        if self.sensing_phases.iter().any(|v| !v.is_finite()) {
            return Err(ConfigError::NonFinite("sensing_phases"));
        }
        if self.reference_phases.iter().any(|v| !v.is_finite()) {
            return Err(ConfigError::NonFinite("reference_phases"));
        }
        if self.k_max == 0 {
            return Err(ConfigError::KMax);
        }
        if self.pulses.is_empty() {
            return Err(ConfigError::NoPulses);
        }
        let mut seen = Vec::with_capacity(self.pulses.len());
        for (index, p) in self.pulses.iter().enumerate() {
            if [p.alpha, p.theta, p.r, p.chi]
                .iter()
                .any(|v| !v.is_finite())
            {
                return Err(ConfigError::NonFinite("pulses"));
            }
            if p.alpha < 0.0 {
                return Err(ConfigError::NegativeAmplitude {
                    index,
                    value: p.alpha,
                });
            }
            if p.r < 0.0 {
                return Err(ConfigError::NegativeSqueezing { index, value: p.r });
            }
            if seen.contains(&(p.side, p.time_bin)) {
                return Err(ConfigError::DuplicatePulse {
                    side: p.side,
                    time_bin: p.time_bin,
                });
            }
            seen.push((p.side, p.time_bin));
        }
        Ok(())
    }

    pub fn last_pulse_bin(&self) -> u32 {
        self.pulses.iter().map(|p| p.time_bin).max().unwrap_or(0)
    }

    /// Index of the final step; output bins run over `0..=t_max`.
    pub fn t_max(&self) -> u32 {
        ((self.k_max + 2) * self.n_phases) as u32 + self.last_pulse_bin()
    }

    /// Detector modes in output order: per bin, left signal, left auxiliary,
    /// right signal, right auxiliary.
    pub fn detector_labels(&self) -> Vec<ModeLabel> {
        (0..=self.t_max())
            .flat_map(|t| {
                [
                    ModeLabel::output(Side::Left, Port::Signal, t),
                    ModeLabel::output(Side::Left, Port::Auxiliary, t),
                    ModeLabel::output(Side::Right, Port::Signal, t),
                    ModeLabel::output(Side::Right, Port::Auxiliary, t),
                ]
            })
            .collect()
    }

    /// Non-vacuum inputs: every pulse's signal port, plus its auxiliary port
    /// when that carries squeezed light.
    pub fn sources(&self) -> Vec<Source> {
        let mut out = Vec::with_capacity(2 * self.pulses.len());
        for p in &self.pulses {
            out.push(Source {
                label: ModeLabel::input(p.side, Port::Signal, p.time_bin),
                side: p.side,
                time_bin: p.time_bin,
                port: Port::Signal,
                mean: p.mean_amplitude(),
                r: p.r,
                chi_lab: p.lab_squeeze_angle(),
            });
            if self.auxiliary_input == AuxiliaryInput::MatchedSqueezed && p.r > 0.0 {
                out.push(Source {
                    label: ModeLabel::input(p.side, Port::Auxiliary, p.time_bin),
                    side: p.side,
                    time_bin: p.time_bin,
                    port: Port::Auxiliary,
                    mean: Complex64::new(0.0, 0.0),
                    r: p.r,
                    chi_lab: p.lab_squeeze_angle(),
                });
            }
        }
        out
    }

    pub fn input_photons(&self) -> f64 {
        self.sources().iter().map(Source::photon_number).sum()
    }
}

/// A non-vacuum input mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source {
    pub label: ModeLabel,
    pub side: Side,
    pub time_bin: u32,
    pub port: Port,
    /// Complex mean amplitude `alpha e^{i theta}`.
    pub mean: Complex64,
    pub r: f64,
    pub chi_lab: f64,
}

impl Source {
    pub fn photon_number(&self) -> f64 {
        self.mean.norm_sqr() + self.r.sinh().powi(2)
    }

    /// `S S^T - I` for the source's squeezer; zero for coherent light.
    pub fn excess_covariance(&self) -> [[f64; 2]; 2] {
        let (c, s) = ((2.0 * self.r).cosh(), (2.0 * self.r).sinh());
        let (cc, sc) = (self.chi_lab.cos(), self.chi_lab.sin());
        [[c + cc * s - 1.0, sc * s], [sc * s, c - cc * s - 1.0]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SidePolicy {
    LeftOnly,
    Bidirectional,
}

/// Pulse schedule spaced one lattice step apart.
///
/// Bidirectional schedules alternate sides starting on the left. For odd `N`
/// a left pulse in bin `b` and a right pulse in bin `b'` meet at a reflector
/// only when `b' - b` is odd, so consecutive pulses take consecutive bins. For
/// even `N` they must share parity, so pulses go in simultaneous left/right
/// pairs. `thetas` and `chis` are cycled; empty slices mean zero.
pub fn staggered_schedule(
    n_phases: usize,
    m: usize,
    policy: SidePolicy,
    alpha: f64,
    r: f64,
    thetas: &[f64],
    chis: &[f64],
) -> Result<Vec<PulseSpec>, ConfigError> {
    if m == 0 {
        return Err(ConfigError::NoPulses);
    }
    if n_phases == 0 {
        return Err(ConfigError::NoPhases);
    }
    let pick = |v: &[f64], i: usize| if v.is_empty() { 0.0 } else { v[i % v.len()] };
    Ok((0..m)
        .map(|i| {
            let (side, bin) = match policy {
                SidePolicy::LeftOnly => (Side::Left, i),
                SidePolicy::Bidirectional => {
                    let side = if i % 2 == 0 { Side::Left } else { Side::Right };
                    let bin = if n_phases % 2 == 1 { i } else { i / 2 };
                    (side, bin)
                }
            };
            PulseSpec {
                side,
                time_bin: bin as u32,
                alpha,
                theta: pick(thetas, i),
                r,
                chi: pick(chis, i),
            }
        })
        .collect())
}

/// Fraction of light crossing every reflector unreflected, `prod T_j`.
pub fn single_pass_transmission(config: &SensorConfig) -> f64 {
    config.transmissions.iter().product()
}

/// Complex transfer amplitudes from sources to detector modes.
///
/// `amplitudes[d * S + s]` is the amplitude reaching detector `d` from source
/// `s`; `tangents[i]` holds the derivative of the same table in sensing phase
/// `i`. `residual` is the light still inside the arms at the cutoff, laid out
/// as `[mode * S + s]` over the `4N` interior modes.
#[derive(Debug, Clone)]
pub struct Transfer {
    pub n_phases: usize,
    pub t_max: u32,
    pub detectors: Vec<ModeLabel>,
    pub sources: Vec<Source>,
    pub amplitudes: Vec<Complex64>,
    pub tangents: Vec<Vec<Complex64>>,
    pub residual: Vec<Complex64>,
}

// interior slots per segment
const SR: usize = 0;
const SL: usize = 1;
const RR: usize = 2;
const RL: usize = 3;

struct Field {
    cols: usize,
    data: Vec<Complex64>,
}

impl Field {
    fn new(n: usize, cols: usize) -> Self {
        Self {
            cols,
            data: vec![Complex64::new(0.0, 0.0); 4 * n * cols],
        }
    }

    #[inline]
    fn at(&self, seg: usize, slot: usize) -> &[Complex64] {
        let o = (4 * seg + slot) * self.cols;
        &self.data[o..o + self.cols]
    }

    #[inline]
    fn at_mut(&mut self, seg: usize, slot: usize) -> &mut [Complex64] {
        let o = (4 * seg + slot) * self.cols;
        &mut self.data[o..o + self.cols]
    }
}

/// Runs the transfer-amplitude lattice. Tangent channels are propagated only
/// when `with_tangents` is set.
pub fn propagate(config: &SensorConfig, with_tangents: bool) -> Result<Transfer, ConfigError> {
    config.validate()?;
    let n = config.n_phases;
    let sources = config.sources();
    let s_count = sources.len();
    let channels = if with_tangents { 1 + n } else { 1 };
    // column layout: channel * S + s; channel 0 is the field itself
    let cols = channels * s_count;
    let t_max = config.t_max();
    let detectors = config.detector_labels();
    let d_count = detectors.len();

    let zero = Complex64::new(0.0, 0.0);
    let mut amplitudes = vec![zero; d_count * s_count];
    let mut tangents = vec![vec![zero; d_count * s_count]; if with_tangents { n } else { 0 }];

    let phase: Vec<Complex64> = config
        .sensing_phases
        .iter()
        .map(|&p| Complex64::from_polar(1.0, p))
        .collect();
    let ref_phase: Vec<Complex64> = config
        .reference_phases
        .iter()
        .map(|&p| Complex64::from_polar(1.0, p))
        .collect();
    let refl: Vec<(f64, f64)> = config
        .transmissions
        .iter()
        .map(|&t| (t.sqrt(), (1.0 - t).sqrt()))
        .collect();

    let mut field = Field::new(n, cols);
    let mut next = Field::new(n, cols);
    let h = FRAC_1_SQRT_2;

    for t in 0..=t_max {
        // 1. exits through the end couplers
        let base = 4 * t as usize;
        for (side, seg, s_slot, r_slot, d_off) in [
            (Side::Left, 0, SL, RL, 0usize),
            (Side::Right, n - 1, SR, RR, 2usize),
        ] {
            let _ = side;
            let sens = field.at(seg, s_slot);
            let refr = field.at(seg, r_slot);
            for ch in 0..channels {
                for s in 0..s_count {
                    let c = ch * s_count + s;
                    let sig = (sens[c] + refr[c]) * h;
                    let aux = (refr[c] - sens[c]) * h;
                    let (ds, da) = (base + d_off, base + d_off + 1);
                    if ch == 0 {
                        amplitudes[ds * s_count + s] = sig;
                        amplitudes[da * s_count + s] = aux;
                    } else {
                        tangents[ch - 1][ds * s_count + s] = sig;
                        tangents[ch - 1][da * s_count + s] = aux;
                    }
                }
            }
        }

        // 2. reflectors and reference transit
        next.data.iter_mut().for_each(|v| *v = zero);
        for j in 0..n.saturating_sub(1) {
            let (tt, rr) = refl[j];
            for c in 0..cols {
                let right_in = field.at(j, SR)[c];
                let left_in = field.at(j + 1, SL)[c];
                next.at_mut(j + 1, SR)[c] = right_in * tt + left_in * rr;
                next.at_mut(j, SL)[c] = left_in * tt - right_in * rr;
                next.at_mut(j + 1, RR)[c] = field.at(j, RR)[c];
                next.at_mut(j, RL)[c] = field.at(j + 1, RL)[c];
            }
        }

        // 3. injection through the couplers
        for (s, src) in sources.iter().enumerate() {
            if src.time_bin != t {
                continue;
            }
            let (seg, s_slot, r_slot) = match src.side {
                Side::Left => (0, SR, RR),
                Side::Right => (n - 1, SL, RL),
            };
            let (to_sens, to_ref) = match src.port {
                Port::Signal => (h, -h),
                Port::Auxiliary => (h, h),
            };
            next.at_mut(seg, s_slot)[s] += to_sens;
            next.at_mut(seg, r_slot)[s] += to_ref;
        }

        // 4. segment phases; tangents pick up i * field in their own segment
        for seg in 0..n {
            for slot in [SR, SL] {
                let v = next.at_mut(seg, slot);
                for x in v.iter_mut().take(cols) {
                    *x *= phase[seg];
                }
                if with_tangents {
                    let tangent_cols = (1 + seg) * s_count;
                    for s in 0..s_count {
                        let add = v[s] * Complex64::new(0.0, 1.0);
                        v[tangent_cols + s] += add;
                    }
                }
            }
            for slot in [RR, RL] {
                let v = next.at_mut(seg, slot);
                for x in v.iter_mut().take(cols) {
                    *x *= ref_phase[seg];
                }
            }
        }
        std::mem::swap(&mut field, &mut next);
    }

    let mut residual = vec![zero; 4 * n * s_count];
    for m in 0..4 * n {
        for s in 0..s_count {
            residual[m * s_count + s] = field.data[m * cols + s];
        }
    }

    Ok(Transfer {
        n_phases: n,
        t_max,
        detectors,
        sources,
        amplitudes,
        tangents,
        residual,
    })
}

/// Photons carried by rows of an amplitude table.
fn table_photons(table: &[Complex64], rows: usize, sources: &[Source]) -> f64 {
    let s_count = sources.len();
    let mut total = 0.0;
    for d in 0..rows {
        let row = &table[d * s_count..(d + 1) * s_count];
        let mean: Complex64 = row.iter().zip(sources).map(|(u, src)| u * src.mean).sum();
        total += mean.norm_sqr();
        for (u, src) in row.iter().zip(sources) {
            total += u.norm_sqr() * src.r.sinh().powi(2);
        }
    }
    total
}

impl Transfer {
    pub fn input_photons(&self) -> f64 {
        self.sources.iter().map(Source::photon_number).sum()
    }

    pub fn detector_photons(&self) -> f64 {
        table_photons(&self.amplitudes, self.detectors.len(), &self.sources)
    }

    pub fn residual_photons(&self) -> f64 {
        table_photons(&self.residual, 4 * self.n_phases, &self.sources)
    }

    /// Fraction of injected photons still inside the arms at the cutoff.
    pub fn truncation_loss(&self) -> f64 {
        let input = self.input_photons();
        if input > 0.0 {
            (self.residual_photons() / input).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    /// Gaussian state over all detector modes.
    pub fn detector_state(&self) -> Result<GaussianState, GaussianError> {
        let s_count = self.sources.len();
        let d_count = self.detectors.len();
        let mut mean = DVector::zeros(2 * d_count);
        for d in 0..d_count {
            let row = &self.amplitudes[d * s_count..(d + 1) * s_count];
            let a: Complex64 = row
                .iter()
                .zip(&self.sources)
                .map(|(u, src)| u * src.mean)
                .sum();
            mean[2 * d] = std::f64::consts::SQRT_2 * a.re;
            mean[2 * d + 1] = std::f64::consts::SQRT_2 * a.im;
        }
        let mut cov = DMatrix::identity(2 * d_count, 2 * d_count);
        for (s, src) in self.sources.iter().enumerate() {
            if src.r == 0.0 {
                continue;
            }
            let k = src.excess_covariance();
            let kmat = nalgebra::Matrix2::new(k[0][0], k[0][1], k[1][0], k[1][1]);
            // V = real image of the amplitude column, shape 2D x 2
            let v = DMatrix::from_fn(2 * d_count, 2, |row, col| {
                let u = self.amplitudes[(row / 2) * s_count + s];
                match (row % 2, col) {
                    (0, 0) | (1, 1) => u.re,
                    (0, 1) => -u.im,
                    _ => u.im,
                }
            });
            let kd = DMatrix::from_fn(2, 2, |r, c| kmat[(r, c)]);
            let vk = &v * kd;
            cov.gemm(1.0, &vk, &v.transpose(), 1.0);
        }
        GaussianState::from_parts_unchecked(mean, cov, self.detectors.clone())
    }
}

/// Detector state of one sensor run.
#[derive(Debug, Clone)]
pub struct SensorOutput {
    pub state: GaussianState,
    pub truncation_loss: f64,
    pub input_photons: f64,
}

impl SensorOutput {
    pub fn detector_photons(&self) -> f64 {
        self.state.photon_number()
    }

    /// Share of detected photons leaving through the far (right) end.
    pub fn far_end_fraction(&self) -> f64 {
        let total = self.detector_photons();
        if total <= 0.0 {
            return 0.0;
        }
        let right: f64 = self
            .state
            .labels()
            .iter()
            .filter(|l| matches!(l.site, Site::OutputPort(Side::Right, _)))
            .map(|l| self.state.mode_photon_number(l).unwrap_or(0.0))
            .sum();
        right / total
    }
}

/// Runs the sensor and returns the Gaussian state on every detector mode.
pub fn run_sensor(config: &SensorConfig) -> Result<SensorOutput, ConfigError> {
    let transfer = propagate(config, false)?;
    let state = transfer.detector_state()?;
    Ok(SensorOutput {
        state,
        truncation_loss: transfer.truncation_loss(),
        input_photons: transfer.input_photons(),
    })
}

fn sensing(seg: usize, dir: Direction) -> ModeLabel {
    ModeLabel::new(Site::SensingSegment(seg), dir, 0)
}

fn reference(seg: usize, dir: Direction) -> ModeLabel {
    ModeLabel::new(Site::ReferenceSegment(seg), dir, 0)
}

/// Same evolution as [`run_sensor`], done mode by mode on a [`GaussianState`]
/// with explicit beamsplitter and phase transforms. Slow; used as a reference.
pub fn run_sensor_stepwise(config: &SensorConfig) -> Result<SensorOutput, ConfigError> {
    use Direction::{LeftMoving as L, RightMoving as R};
    config.validate()?;
    let n = config.n_phases;
    let coupler = beamsplitter_matrix(0.5)?;
    let mut interior = Vec::with_capacity(4 * n);
    for i in 1..=n {
        interior.extend([
            sensing(i, R),
            sensing(i, L),
            reference(i, R),
            reference(i, L),
        ]);
    }
    let mut state = GaussianState::vacuum(interior.clone())?;
    let input_photons = config.input_photons();

    for t in 0..=config.t_max() {
        // 1. exits
        state = state.apply_transform(&coupler, &[sensing(n, R), reference(n, R)])?;
        state = state.apply_transform(&coupler, &[sensing(1, L), reference(1, L)])?;
        state = state.relabel(|l| {
            if *l == sensing(n, R) {
                ModeLabel::output(Side::Right, Port::Signal, t)
            } else if *l == reference(n, R) {
                ModeLabel::output(Side::Right, Port::Auxiliary, t)
            } else if *l == sensing(1, L) {
                ModeLabel::output(Side::Left, Port::Signal, t)
            } else if *l == reference(1, L) {
                ModeLabel::output(Side::Left, Port::Auxiliary, t)
            } else {
                *l
            }
        })?;

        // 2. reflectors, then everything moves one segment
        for j in 1..n {
            let bs = beamsplitter_matrix(config.transmissions[j - 1])?;
            state = state.apply_transform(&bs, &[sensing(j, R), sensing(j + 1, L)])?;
        }
        state = state.relabel(|l| match (l.site, l.direction) {
            (Site::SensingSegment(i), R) => sensing(i + 1, R),
            (Site::SensingSegment(i), L) => sensing(i - 1, L),
            (Site::ReferenceSegment(i), R) => reference(i + 1, R),
            (Site::ReferenceSegment(i), L) => reference(i - 1, L),
            _ => *l,
        })?;

        // 3. injection (vacuum when nothing is scheduled)
        for side in [Side::Left, Side::Right] {
            let sig_label = ModeLabel::input(side, Port::Signal, t);
            let aux_label = ModeLabel::input(side, Port::Auxiliary, t);
            let pulse = config
                .pulses
                .iter()
                .find(|p| p.side == side && p.time_bin == t);
            let (sig, aux) = match pulse {
                Some(p) => {
                    let chi = p.lab_squeeze_angle();
                    let sig =
                        GaussianState::squeezed_coherent(sig_label, p.alpha, p.theta, p.r, chi)?;
                    let aux = match config.auxiliary_input {
                        AuxiliaryInput::MatchedSqueezed => {
                            GaussianState::squeezed_coherent(aux_label, 0.0, 0.0, p.r, chi)?
                        }
                        AuxiliaryInput::Vacuum => GaussianState::vacuum(vec![aux_label])?,
                    };
                    (sig, aux)
                }
                None => (
                    GaussianState::vacuum(vec![sig_label])?,
                    GaussianState::vacuum(vec![aux_label])?,
                ),
            };
            state = state.tensor(&sig.tensor(&aux)?)?;
            state = state.apply_transform(&coupler, &[sig_label, aux_label])?;
            let (s_new, r_new) = match side {
                Side::Left => (sensing(1, R), reference(1, R)),
                Side::Right => (sensing(n, L), reference(n, L)),
            };
            state = state.relabel(|l| {
                if *l == sig_label {
                    s_new
                } else if *l == aux_label {
                    r_new
                } else {
                    *l
                }
            })?;
        }

        // 4. phases
        for i in 1..=n {
            let p = phase_shift_matrix(config.sensing_phases[i - 1]);
            let q = phase_shift_matrix(config.reference_phases[i - 1]);
            for dir in [R, L] {
                state = state.apply_transform(&p, &[sensing(i, dir)])?;
                state = state.apply_transform(&q, &[reference(i, dir)])?;
            }
        }
    }

    let residual = state.reduced(&interior)?.photon_number();
    let state = state.reduced(&config.detector_labels())?;
    let truncation_loss = if input_photons > 0.0 {
        (residual / input_photons).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(SensorOutput {
        state,
        truncation_loss,
        input_photons,
    })
}
