//! Differential evolution (DE/rand/1/bin) and the sensor design search built
//! on it.
//!
//! Every random draw of a generation is taken from one seeded stream before
//! the trial vectors are evaluated, so evaluating in parallel or sequentially
//! gives bit-identical runs.

use std::f64::consts::TAU;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{ConfigError, SensorConfig};
use crate::metrology::{fisher_information, FisherResult};
use crate::parallel::Execution;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeError {
    #[error("invalid DE setting: {0}")]
    InvalidConfig(String),
    #[error("bound {index} is not a finite, ordered interval")]
    InvalidBound { index: usize },
    #[error("no free parameters")]
    NoParameters,
    #[error("seed vector has {found} entries, expected {expected}")]
    SeedLength { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeConfig {
    /// `None` means 15 per free parameter (at least 4).
    pub population_size: Option<usize>,
    pub mutation_factor: f64,
    pub crossover_rate: f64,
    pub max_generations: usize,
    /// Stop once the best objective improved by less than this fraction over
    /// `stagnation_window` generations.
    pub tolerance: f64,
    pub stagnation_window: usize,
    pub seed: u64,
    pub execution: Execution,
    /// Refine the final best vector with L-BFGS on central differences.
    pub polish: bool,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population_size: None,
            mutation_factor: 0.8,
            crossover_rate: 0.9,
            max_generations: 300,
            tolerance: 1e-8,
            stagnation_window: 30,
            seed: 0,
            execution: Execution::default(),
            polish: false,
        }
    }
}

impl DeConfig {
    pub fn population_for(&self, dims: usize) -> usize {
        self.population_size.unwrap_or((15 * dims).max(4))
    }

    pub fn validate(&self, dims: usize) -> Result<(), DeError> {
        let bad = |m: &str| Err(DeError::InvalidConfig(m.to_string()));
        if self.population_for(dims) < 4 {
            return bad("population_size must be at least 4");
        }
        if !(self.mutation_factor > 0.0 && self.mutation_factor <= 2.0) {
            return bad("mutation_factor must lie in (0, 2]");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad("crossover_rate must lie in [0, 1]");
        }
        if self.max_generations == 0 {
            return bad("max_generations must be at least 1");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be nonnegative");
        }
        if self.stagnation_window == 0 {
            return bad("stagnation_window must be at least 1");
        }
        Ok(())
    }
}

/// Search interval of one coordinate. Periodic coordinates wrap into
/// `[lower, upper)`; others reflect at the walls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
    pub periodic: bool,
}

impl Bound {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            periodic: false,
        }
    }

    pub fn angle() -> Self {
        Self {
            lower: 0.0,
            upper: TAU,
            periodic: true,
        }
    }

    pub fn fold(&self, v: f64) -> f64 {
        let width = self.upper - self.lower;
        if !v.is_finite() {
            return self.lower;
        }
        if self.periodic {
            let w = self.lower + (v - self.lower).rem_euclid(width);
            return if w >= self.upper { self.lower } else { w };
        }
        let mut x = v;
        for _ in 0..8 {
            if x < self.lower {
                x = 2.0 * self.lower - x;
            } else if x > self.upper {
                x = 2.0 * self.upper - x;
            } else {
                return x;
            }
        }
        x.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best_params: Vec<f64>,
    pub best_objective: f64,
    pub generations_run: usize,
    /// Best objective of the initial population, then after each generation.
    pub convergence_trace: Vec<f64>,
}

fn score(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes `objective` over the box `bounds`.
pub fn de_minimize<F>(
    objective: F,
    bounds: &[Bound],
    config: &DeConfig,
) -> Result<OptimizationResult, DeError>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    de_minimize_seeded(objective, bounds, config, &[])
}

/// [`de_minimize`] with `seeds` placed at the front of the initial population.
pub fn de_minimize_seeded<F>(
    objective: F,
    bounds: &[Bound],
    config: &DeConfig,
    seeds: &[Vec<f64>],
) -> Result<OptimizationResult, DeError>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let dims = bounds.len();
    if dims == 0 {
        return Err(DeError::NoParameters);
    }
    for (index, b) in bounds.iter().enumerate() {
        if !(b.lower.is_finite() && b.upper.is_finite() && b.lower < b.upper) {
            return Err(DeError::InvalidBound { index });
        }
    }
    config.validate(dims)?;
    for s in seeds {
        if s.len() != dims {
            return Err(DeError::SeedLength {
                expected: dims,
                found: s.len(),
            });
        }
    }

    let np = config.population_for(dims);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut population: Vec<Vec<f64>> = Vec::with_capacity(np);
    for s in seeds.iter().take(np) {
        population.push(s.iter().zip(bounds).map(|(&v, b)| b.fold(v)).collect());
    }
    while population.len() < np {
        population.push(
            bounds
                .iter()
                .map(|b| rng.random_range(b.lower..b.upper))
                .collect(),
        );
    }
    let mut fitness: Vec<f64> = config.execution.map(&population, |x| score(objective(x)));

    let best_of = |fit: &[f64]| {
        let mut best = 0;
        for (i, &f) in fit.iter().enumerate() {
            if f < fit[best] {
                best = i;
            }
        }
        best
    };
    let mut trace = vec![fitness[best_of(&fitness)]];
    let mut generations = 0;

    while generations < config.max_generations {
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let mut pick = |exclude: &[usize]| loop {
                    let k = rng.random_range(0..np);
                    if !exclude.contains(&k) {
                        break k;
                    }
                };
                let a = pick(&[i]);
                let b = pick(&[i, a]);
                let c = pick(&[i, a, b]);
                let forced = rng.random_range(0..dims);
                (0..dims)
                    .map(|j| {
                        let cross: f64 = rng.random();
                        if j == forced || cross < config.crossover_rate {
                            let v = population[a][j]
                                + config.mutation_factor * (population[b][j] - population[c][j]);
                            bounds[j].fold(v)
                        } else {
                            population[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_fitness = config.execution.map(&trials, |x| score(objective(x)));
        for (i, (trial, f)) in trials.into_iter().zip(trial_fitness).enumerate() {
            if f <= fitness[i] {
                population[i] = trial;
                fitness[i] = f;
            }
        }
        generations += 1;
        trace.push(fitness[best_of(&fitness)]);

        let w = config.stagnation_window;
        if trace.len() > w {
            let old = trace[trace.len() - 1 - w];
            let new = trace[trace.len() - 1];
            let stalled = if old.is_infinite() && new.is_infinite() {
                true
            } else {
                old - new <= config.tolerance * old.abs()
            };
            if stalled {
                break;
            }
        }
    }

    let best = best_of(&fitness);
    let (mut best_params, mut best_objective) = (population[best].clone(), fitness[best]);
    if config.polish && best_objective.is_finite() && best_objective != 0.0 {
        if let Some((x, f)) = polish(
            &objective,
            bounds,
            &best_params,
            best_objective,
            config.execution,
        ) {
            if f < best_objective {
                best_params = x;
                best_objective = f;
            }
        }
    }
    Ok(OptimizationResult {
        best_params,
        best_objective,
        generations_run: generations,
        convergence_trace: trace,
    })
}

/// Objective seen by the local refinement: folded into the box and divided by
/// the starting value so gradient tolerances are scale free.
struct Scaled<'a, F> {
    objective: &'a F,
    bounds: &'a [Bound],
    scale: f64,
    execution: Execution,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Scaled<'_, F> {
    fn eval(&self, x: &[f64]) -> f64 {
        let folded: Vec<f64> = x.iter().zip(self.bounds).map(|(&v, b)| b.fold(v)).collect();
        score((self.objective)(&folded)) / self.scale
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> CostFunction for Scaled<'_, F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        let v = self.eval(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(argmin::core::Error::msg("objective left the finite region"))
        }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Gradient for Scaled<'_, F> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Vec<f64>) -> Result<Vec<f64>, argmin::core::Error> {
        const H: f64 = 1e-6;
        let g = self.execution.map_range(x.len(), |j| {
            let mut p = x.clone();
            p[j] = x[j] + H;
            let up = self.eval(&p);
            p[j] = x[j] - H;
            (up - self.eval(&p)) / (2.0 * H)
        });
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(argmin::core::Error::msg("non-finite gradient"))
        }
    }
}

fn polish<F>(
    objective: &F,
    bounds: &[Bound],
    x0: &[f64],
    f0: f64,
    execution: Execution,
) -> Option<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let problem = Scaled {
        objective,
        bounds,
        scale: f0.abs(),
        execution,
    };
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7);
    let run = Executor::new(problem, solver)
        .configure(|s| s.param(x0.to_vec()).max_iters(200))
        .run()
        .ok()?;
    let x: Vec<f64> = run
        .state
        .get_best_param()?
        .iter()
        .zip(bounds)
        .map(|(&v, b)| b.fold(v))
        .collect();
    let f = score(objective(&x));
    Some((x, f))
}

/// How a family of per-pulse angles enters the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleMode {
    /// One free angle per pulse.
    #[default]
    PerPulse,
    /// A single angle shared by every pulse.
    Tied,
    /// Kept at the base configuration's values.
    Fixed,
}

impl AngleMode {
    fn count(self, pulses: usize) -> usize {
        match self {
            AngleMode::PerPulse => pulses,
            AngleMode::Tied => 1,
            AngleMode::Fixed => 0,
        }
    }
}

/// Which sensor parameters the optimizer may change.
///
/// Parameter vectors are laid out as thetas, chis, reference phases, then the
/// shared transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreeParameterSpec {
    pub thetas: AngleMode,
    pub chis: AngleMode,
    pub reference_phases: bool,
    pub uniform_transmission: bool,
    pub transmission_bounds: (f64, f64),
}

impl Default for FreeParameterSpec {
    fn default() -> Self {
        Self {
            thetas: AngleMode::PerPulse,
            chis: AngleMode::PerPulse,
            reference_phases: true,
            uniform_transmission: false,
            transmission_bounds: (0.001, 0.999),
        }
    }
}

impl FreeParameterSpec {
    pub fn nothing() -> Self {
        Self {
            thetas: AngleMode::Fixed,
            chis: AngleMode::Fixed,
            reference_phases: false,
            uniform_transmission: false,
            ..Self::default()
        }
    }

    pub fn dimension(&self, base: &SensorConfig) -> usize {
        let m = base.pulses.len();
        self.thetas.count(m)
            + self.chis.count(m)
            + if self.reference_phases {
                base.n_phases
            } else {
                0
            }
            + usize::from(self.uniform_transmission && base.n_phases > 1)
    }

    pub fn bounds(&self, base: &SensorConfig) -> Vec<Bound> {
        let m = base.pulses.len();
        let mut b = vec![Bound::angle(); self.thetas.count(m) + self.chis.count(m)];
        if self.reference_phases {
            b.extend(std::iter::repeat_n(Bound::angle(), base.n_phases));
        }
        if self.uniform_transmission && base.n_phases > 1 {
            b.push(Bound::new(
                self.transmission_bounds.0,
                self.transmission_bounds.1,
            ));
        }
        b
    }

    /// Parameter vector of `config`.
    pub fn encode(&self, config: &SensorConfig) -> Vec<f64> {
        let wrap = |v: f64| Bound::angle().fold(v);
        let mut x = Vec::with_capacity(self.dimension(config));
        let angles = |mode: AngleMode, get: &dyn Fn(usize) -> f64, x: &mut Vec<f64>| match mode {
            AngleMode::PerPulse => x.extend((0..config.pulses.len()).map(|i| wrap(get(i)))),
            AngleMode::Tied => x.push(wrap(get(0))),
            AngleMode::Fixed => {}
        };
        angles(self.thetas, &|i| config.pulses[i].theta, &mut x);
        angles(self.chis, &|i| config.pulses[i].chi, &mut x);
        if self.reference_phases {
            x.extend(config.reference_phases.iter().map(|&v| wrap(v)));
        }
        if self.uniform_transmission && config.n_phases > 1 {
            let (lo, hi) = self.transmission_bounds;
            x.push(config.transmissions[0].clamp(lo, hi));
        }
        x
    }

    /// `base` with the parameters of `x` written in.
    pub fn decode(&self, base: &SensorConfig, x: &[f64]) -> SensorConfig {
        let mut c = base.clone();
        let m = c.pulses.len();
        let mut k = 0;
        match self.thetas {
            AngleMode::PerPulse => {
                for p in c.pulses.iter_mut() {
                    p.theta = x[k];
                    k += 1;
                }
            }
            AngleMode::Tied => {
                c.pulses.iter_mut().for_each(|p| p.theta = x[k]);
                k += 1;
            }
            AngleMode::Fixed => {}
        }
        match self.chis {
            AngleMode::PerPulse => {
                for i in 0..m {
                    c.pulses[i].chi = x[k + i];
                }
                k += m;
            }
            AngleMode::Tied => {
                c.pulses.iter_mut().for_each(|p| p.chi = x[k]);
                k += 1;
            }
            AngleMode::Fixed => {}
        }
        if self.reference_phases {
            c.reference_phases.copy_from_slice(&x[k..k + c.n_phases]);
            k += c.n_phases;
        }
        if self.uniform_transmission && c.n_phases > 1 {
            c.set_uniform_transmission(x[k]);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    De(#[from] DeError),
    #[error("no distinguishable design in the search box")]
    NoDistinguishableDesign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorOptimum {
    pub config: SensorConfig,
    pub fisher: FisherResult,
    pub search: OptimizationResult,
}

/// Total CRB variance of `config`; indistinguishable designs score infinity.
pub fn total_variance(config: &SensorConfig) -> f64 {
    fisher_information(config)
        .ok()
        .and_then(|f| FisherResult::from_matrix(f).ok())
        .map_or(f64::INFINITY, |r| r.total_variance)
}

/// Minimizes the total CRB variance over the free parameters of `base`.
/// `base` itself and any `warm_starts` join the initial population.
pub fn optimize_sensor(
    base: &SensorConfig,
    free: &FreeParameterSpec,
    de: &DeConfig,
    warm_starts: &[SensorConfig],
) -> Result<SensorOptimum, OptimizeError> {
    base.validate()?;
    let bounds = free.bounds(base);
    if bounds.is_empty() {
        let fisher = fisher_information(base)
            .ok()
            .and_then(|f| FisherResult::from_matrix(f).ok())
            .ok_or(OptimizeError::NoDistinguishableDesign)?;
        let v = fisher.total_variance;
        let search = OptimizationResult {
            best_params: vec![],
            best_objective: v,
            generations_run: 0,
            convergence_trace: vec![v],
        };
        return Ok(SensorOptimum {
            config: base.clone(),
            fisher,
            search,
        });
    }
    let mut seeds = vec![free.encode(base)];
    seeds.extend(
        warm_starts
            .iter()
            .filter(|w| free.dimension(w) == bounds.len())
            .map(|w| free.encode(w)),
    );
    let search = de_minimize_seeded(
        |x| total_variance(&free.decode(base, x)),
        &bounds,
        de,
        &seeds,
    )?;
    if !search.best_objective.is_finite() {
        return Err(OptimizeError::NoDistinguishableDesign);
    }
    let config = free.decode(base, &search.best_params);
    let fisher = fisher_information(&config)
        .ok()
        .and_then(|f| FisherResult::from_matrix(f).ok())
        .ok_or(OptimizeError::NoDistinguishableDesign)?;
    Ok(SensorOptimum {
        config,
        fisher,
        search,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Side;
    use crate::lattice::PulseSpec;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn rastrigin(x: &[f64]) -> f64 {
        10.0 * x.len() as f64
            + x.iter()
                .map(|v| v * v - 10.0 * (TAU * v).cos())
                .sum::<f64>()
    }

    #[test]
    fn sphere_converges() {
        let bounds = vec![Bound::new(-5.0, 5.0); 5];
        let r = de_minimize(
            sphere,
            &bounds,
            &DeConfig {
                seed: 3,
                ..DeConfig::default()
            },
        )
        .unwrap();
        assert!(r.best_objective < 1e-10, "{}", r.best_objective);
        assert!(r.generations_run <= 300);
    }

    #[test]
    fn rastrigin_reaches_global_minimum() {
        // grid oracle around the origin: no point beats x = 0
        let steps: Vec<f64> = (-10..=10).map(|k| k as f64 * 0.05).collect();
        let mut grid_min = f64::INFINITY;
        for &a in &steps {
            for &b in &steps {
                for &c in &steps {
                    for &d in &steps {
                        grid_min = grid_min.min(rastrigin(&[a, b, c, d]));
                    }
                }
            }
        }
        assert!(grid_min.abs() < 1e-12);

        let bounds = vec![Bound::new(-5.12, 5.12); 4];
        let hits = (0..10)
            .filter(|&seed| {
                let cfg = DeConfig {
                    seed,
                    crossover_rate: 0.2,
                    ..DeConfig::default()
                };
                de_minimize(rastrigin, &bounds, &cfg)
                    .unwrap()
                    .best_objective
                    < grid_min + 1e-6
            })
            .count();
        assert!(hits >= 9, "{hits}/10");
    }

    #[test]
    fn runs_are_deterministic_and_trace_nonincreasing() {
        let bounds = vec![Bound::new(-5.12, 5.12); 3];
        let cfg = DeConfig {
            seed: 42,
            max_generations: 60,
            ..DeConfig::default()
        };
        let a = de_minimize(rastrigin, &bounds, &cfg).unwrap();
        let b = de_minimize(rastrigin, &bounds, &cfg).unwrap();
        assert_eq!(a, b);
        let c = de_minimize(
            rastrigin,
            &bounds,
            &DeConfig {
                execution: Execution::Sequential,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(a, c);
        assert!(a.convergence_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(a.convergence_trace.len(), a.generations_run + 1);
    }

    #[test]
    fn seeded_point_is_never_beaten_by_worse() {
        let bounds = vec![Bound::new(-5.12, 5.12); 4];
        let cfg = DeConfig {
            seed: 1,
            max_generations: 5,
            ..DeConfig::default()
        };
        let r = de_minimize_seeded(rastrigin, &bounds, &cfg, &[vec![0.0; 4]]).unwrap();
        assert_eq!(r.best_objective, 0.0);
    }

    #[test]
    fn polish_sharpens_a_short_run() {
        // Rosenbrock valley, minimum 0 at (1, 1, 1)
        let rosen = |x: &[f64]| {
            (0..x.len() - 1)
                .map(|i| 100.0 * (x[i + 1] - x[i] * x[i]).powi(2) + (1.0 - x[i]).powi(2))
                .sum::<f64>()
        };
        let bounds = vec![Bound::new(-2.0, 2.0); 3];
        let cfg = DeConfig {
            seed: 5,
            max_generations: 40,
            ..DeConfig::default()
        };
        let rough = de_minimize(rosen, &bounds, &cfg).unwrap();
        let fine = de_minimize(
            rosen,
            &bounds,
            &DeConfig {
                polish: true,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert!(fine.best_objective <= rough.best_objective);
        assert!(fine.best_objective < 1e-8, "{}", fine.best_objective);
        assert_eq!(fine.convergence_trace, rough.convergence_trace);
        let seq = de_minimize(
            rosen,
            &bounds,
            &DeConfig {
                polish: true,
                execution: Execution::Sequential,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(fine, seq);
    }

    #[test]
    fn polish_respects_bounds_and_periodicity() {
        // minimum sits outside the box at x = 2; the wall is the answer
        let bounds = [Bound::new(0.0, 1.0), Bound::angle()];
        let f = |x: &[f64]| (x[0] - 2.0).powi(2) + (1.0 - (x[1] - 0.1).cos());
        let cfg = DeConfig {
            seed: 2,
            max_generations: 10,
            polish: true,
            ..DeConfig::default()
        };
        let r = de_minimize(f, &bounds, &cfg).unwrap();
        assert!((0.0..=1.0).contains(&r.best_params[0]));
        assert!((0.0..TAU).contains(&r.best_params[1]));
        assert!((r.best_params[1] - 0.1).abs() < 1e-4, "{:?}", r.best_params);
    }

    #[test]
    fn invalid_settings_rejected() {
        let bounds = vec![Bound::new(0.0, 1.0)];
        let bad = DeConfig {
            population_size: Some(3),
            ..DeConfig::default()
        };
        assert!(matches!(
            de_minimize(sphere, &bounds, &bad),
            Err(DeError::InvalidConfig(_))
        ));
        let bad = DeConfig {
            mutation_factor: 0.0,
            ..DeConfig::default()
        };
        assert!(de_minimize(sphere, &bounds, &bad).is_err());
        assert!(matches!(
            de_minimize(sphere, &[Bound::new(1.0, 0.0)], &DeConfig::default()),
            Err(DeError::InvalidBound { index: 0 })
        ));
        assert_eq!(
            de_minimize(sphere, &[], &DeConfig::default()),
            Err(DeError::NoParameters)
        );
    }

    #[test]
    fn non_finite_objective_scores_infinity() {
        let bounds = vec![Bound::new(-1.0, 1.0); 2];
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { sphere(x) };
        let r = de_minimize(
            f,
            &bounds,
            &DeConfig {
                seed: 5,
                ..DeConfig::default()
            },
        )
        .unwrap();
        assert!(r.best_objective.is_finite());
        assert!(r.best_params[0] >= 0.0);
    }

    #[test]
    fn bounds_fold_into_range() {
        let b = Bound::new(0.0, 1.0);
        assert_eq!(b.fold(1.25), 0.75);
        assert_eq!(b.fold(-0.25), 0.25);
        assert_eq!(b.fold(7.3), b.fold(7.3).clamp(0.0, 1.0));
        let a = Bound::angle();
        assert!((a.fold(TAU + 0.5) - 0.5).abs() < 1e-12);
        assert!((a.fold(-0.5) - (TAU - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn encode_decode_round_trip() {
        let pulses = vec![
            PulseSpec {
                side: Side::Left,
                time_bin: 0,
                alpha: 1.0,
                theta: 0.4,
                r: 0.5,
                chi: 1.0,
            },
            PulseSpec {
                side: Side::Right,
                time_bin: 1,
                alpha: 1.0,
                theta: 2.0,
                r: 0.5,
                chi: 3.0,
            },
        ];
        let mut base = SensorConfig::uniform(3, 0.3, 7, pulses);
        base.reference_phases = vec![0.1, 0.2, 0.3];
        let free = FreeParameterSpec {
            uniform_transmission: true,
            ..FreeParameterSpec::default()
        };
        assert_eq!(free.dimension(&base), 2 + 2 + 3 + 1);
        let x = free.encode(&base);
        assert_eq!(x, vec![0.4, 2.0, 1.0, 3.0, 0.1, 0.2, 0.3, 0.3]);
        assert_eq!(free.decode(&base, &x), base);

        let tied = FreeParameterSpec {
            thetas: AngleMode::Tied,
            chis: AngleMode::Fixed,
            reference_phases: false,
            ..free
        };
        let c = tied.decode(&base, &[1.5, 0.9]);
        assert!(c.pulses.iter().all(|p| p.theta == 1.5 && p.chi != 1.5));
        assert_eq!(c.transmissions, vec![0.9, 0.9]);
    }

    #[test]
    fn single_phase_optimum_over_reference_phase() {
        let alpha = 3.0;
        let base = SensorConfig::uniform(
            1,
            0.5,
            1,
            vec![
                PulseSpec::coherent(Side::Left, 0, alpha, 0.0),
                PulseSpec::coherent(Side::Right, 1, alpha, 0.0),
            ],
        );
        let free = FreeParameterSpec {
            reference_phases: true,
            ..FreeParameterSpec::nothing()
        };
        let de = DeConfig {
            seed: 9,
            max_generations: 20,
            ..DeConfig::default()
        };
        let opt = optimize_sensor(&base, &free, &de, &[]).unwrap();
        let expected = 1.0 / (4.0 * alpha * alpha);
        assert!((opt.fisher.total_variance / expected - 1.0).abs() < 1e-9);
        assert!(opt.search.best_objective <= total_variance(&base));
    }
}
