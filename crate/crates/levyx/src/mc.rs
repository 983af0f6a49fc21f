//! Monte Carlo oracle for the expansion engines.
//!
//! Two path schemes cover the model families the library prices:
//!
//! * **Euler with Gaussian-jump thinning** — per step, the martingale drift,
//!   a Brownian increment with local half-variance `a(t,x)`, and at most one
//!   Gaussian-mark jump accepted with probability `λ(t,x)·Δt`, with the jump
//!   compensator folded into the drift so `e^X` stays a martingale in law.
//! * **Gamma-increment scheme** for pure-jump variance-gamma models with a
//!   state-dependent activity profile `I(x)`: each step adds
//!   `b(x)Δt + γ⁺ − γ⁻` with `γ± ~ Gamma(I(x)Δt/κ, 1/λ±)` and the drift
//!   `b(x)` chosen so each increment is an exact one-step martingale.
//!
//! Default is sampled by the canonical construction: the integrated hazard
//! `∫γ(s,X_s)ds` is accumulated by the trapezoid rule and compared against a
//! single `Exp(1)` draw per path.  [`survival_probability`] instead averages
//! the conditional survival weight `e^{−∫γ}`, which has the same mean and
//! lower variance.
//!
//! Paths use one counter-based RNG substream each, assigned by path index,
//! and reductions are chunked in fixed order — estimates are bit-identical
//! for a given seed and configuration no matter how many threads run.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{LevyMeasureSpec, ModelSpec};
use crate::quad;
use crate::transform::PayoffTransform;

/// Paths per work unit for the deterministic chunked reduction.
const CHUNK: usize = 4096;

/// Absorption level for the log-price.  At `|x| = 60` the asset price is
/// a factor `e^60 ≈ 10^26` away from any strike of order one, so payoffs
/// are flat to double precision, while exponential coefficient profiles
/// `e^{r·x}` stay inside double range for rates up to `r ≈ 11`.  Models
/// with coefficients growing in one tail (the constant-elasticity family)
/// genuinely drive paths toward `S = 0`; freezing such paths at the floor
/// mirrors the absorbing boundary there and keeps payoffs and hazards
/// well defined.
const X_ABSORB: f64 = 60.0;

/// Path-generation scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Euler steps with Bernoulli-thinned Gaussian-mark jumps; requires a
    /// Gaussian jump measure.
    EulerGaussianJump,
    /// Gamma-increment steps for pure-jump variance-gamma models; requires
    /// a variance-gamma measure and no diffusion.
    VarianceGammaIncrement,
}

/// Simulation request: scheme, resolution, effort, and reproducibility.
#[derive(Clone, Copy, Debug)]
pub struct SimulationConfig {
    /// Path-generation scheme.
    pub scheme: Scheme,
    /// Time step in years.
    pub dt: f64,
    /// Number of paths.
    pub paths: usize,
    /// RNG seed; identical seeds give bit-identical estimates.
    pub seed: u64,
    /// Antithetic pairing: consecutive paths share a substream with all
    /// Gaussian draws negated and all uniforms complemented.
    pub antithetic: bool,
}

impl SimulationConfig {
    /// Validated configuration with seed 0 and no antithetics.
    pub fn new(scheme: Scheme, dt: f64, paths: usize) -> Result<SimulationConfig> {
        if !dt.is_finite() || !(dt > 0.0) {
            return Err(Error::Config(format!(
                "time step must satisfy Δt > 0, got {dt}"
            )));
        }
        if paths == 0 {
            return Err(Error::Config("path count must be at least 1".into()));
        }
        Ok(SimulationConfig {
            scheme,
            dt,
            paths,
            seed: 0,
            antithetic: false,
        })
    }

    /// Same configuration with another seed.
    pub fn with_seed(mut self, seed: u64) -> SimulationConfig {
        self.seed = seed;
        self
    }

    /// Same configuration with antithetic pairing switched on; the path
    /// count must be even.
    pub fn with_antithetic(mut self) -> SimulationConfig {
        self.antithetic = true;
        self
    }
}

/// Terminal state of one simulated path.
#[derive(Clone, Copy, Debug)]
pub struct PathOutcome {
    /// Terminal log-price `X_T`.
    pub x_t: f64,
    /// Whether the path survived to the horizon under the sampled default
    /// time.
    pub survived: bool,
    /// Integrated hazard `∫γ(s,X_s)ds` along the path (trapezoid rule).
    pub hazard: f64,
}

/// Sample-mean estimate with its 95% confidence interval.
#[derive(Clone, Copy, Debug)]
pub struct MCEstimate {
    /// Sample mean.
    pub mean: f64,
    /// Standard error of the mean.
    pub std_error: f64,
    /// Lower 95% confidence limit, `mean − 1.96·SE`.
    pub ci_low: f64,
    /// Upper 95% confidence limit, `mean + 1.96·SE`.
    pub ci_high: f64,
    /// Number of paths simulated.
    pub paths: usize,
    /// Wall-clock time spent simulating and reducing.
    pub elapsed: Duration,
}

impl MCEstimate {
    /// True when the interval brackets `value`.
    pub fn contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Per-path random source: one counter-based substream, optionally mirrored
/// for the antithetic partner.
struct PathRng {
    rng: ChaCha8Rng,
    flip: bool,
}

impl PathRng {
    fn new(seed: u64, stream: u64, flip: bool) -> PathRng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        PathRng { rng, flip }
    }

    fn normal(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        if self.flip {
            -z
        } else {
            z
        }
    }

    fn uniform(&mut self) -> f64 {
        let u: f64 = self.rng.gen();
        if self.flip {
            1.0 - u
        } else {
            u
        }
    }

    fn exponential(&mut self) -> f64 {
        -(1.0 - self.uniform()).max(1e-300).ln()
    }

    fn gamma(&mut self, shape: f64, scale: f64) -> Result<f64> {
        if shape == 0.0 {
            return Ok(0.0);
        }
        let dist = Gamma::new(shape, scale).map_err(|e| {
            Error::Numeric(format!(
                "gamma increment with shape {shape}, scale {scale}: {e}"
            ))
        })?;
        Ok(dist.sample(&mut self.rng))
    }
}

fn validate_scheme(model: &ModelSpec, config: &SimulationConfig) -> Result<()> {
    match (config.scheme, model.measure()) {
        (Scheme::EulerGaussianJump, LevyMeasureSpec::Gaussian { .. }) => Ok(()),
        (Scheme::VarianceGammaIncrement, LevyMeasureSpec::VarianceGamma { .. }) => {
            // The scheme replaces the diffusion entirely; reject models that
            // have one.
            let (x0, x1) = model.domain().x;
            let t0 = model.domain().t.0;
            for j in 0..=16 {
                let x = x0 + (x1 - x0) * j as f64 / 16.0;
                if model.a(t0, x) != 0.0 {
                    return Err(Error::Config(
                        "the gamma-increment scheme requires a pure-jump model (a ≡ 0)".into(),
                    ));
                }
            }
            if config.antithetic {
                return Err(Error::Config(
                    "antithetic pairing is not available for gamma increments; \
                     their sampler has no sign symmetry to mirror"
                        .into(),
                ));
            }
            Ok(())
        }
        (scheme, measure) => Err(Error::Config(format!(
            "scheme {scheme:?} does not match jump measure {measure:?}"
        ))),
    }
}

/// Simulate `config.paths` paths of the model from `(t0, x0)` to `big_t`.
///
/// Outcomes are returned in path order; path `p` always consumes substream
/// `p` (or pair substream `p/2` under antithetics), so results do not
/// depend on parallel scheduling.
pub fn simulate_paths(
    model: &ModelSpec,
    config: &SimulationConfig,
    t0: f64,
    big_t: f64,
    x0: f64,
) -> Result<Vec<PathOutcome>> {
    validate_scheme(model, config)?;
    if !(t0 < big_t) || !t0.is_finite() || !big_t.is_finite() {
        return Err(Error::Config(format!(
            "require t0 < T with both finite, got t0 = {t0}, T = {big_t}"
        )));
    }
    if !x0.is_finite() {
        return Err(Error::Config(format!("starting point must be finite, got {x0}")));
    }
    if config.antithetic && config.paths % 2 != 0 {
        return Err(Error::Config(format!(
            "antithetic pairing needs an even path count, got {}",
            config.paths
        )));
    }
    if config.scheme == Scheme::EulerGaussianJump {
        if let LevyMeasureSpec::Gaussian { lambda, .. } = model.measure() {
            let start_prob = model.jump_mult(t0, x0) * lambda * config.dt;
            if start_prob > 0.5 {
                return Err(Error::Config(format!(
                    "jump probability per step is {start_prob:.3} at the start point; \
                     the Bernoulli thinning needs λΔt ≤ 0.5, reduce the time step"
                )));
            }
        }
    }
    let units = if config.antithetic {
        config.paths / 2
    } else {
        config.paths
    };
    let per_unit = if config.antithetic { 2 } else { 1 };
    let n_chunks = units.div_ceil(CHUNK);
    let chunks: Result<Vec<Vec<PathOutcome>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(units);
            let mut out = Vec::with_capacity((hi - lo) * per_unit);
            for unit in lo..hi {
                for rep in 0..per_unit {
                    let flip = config.antithetic && rep == 1;
                    let mut rng = PathRng::new(config.seed, unit as u64, flip);
                    out.push(run_path(model, config, t0, big_t, x0, &mut rng)?);
                }
            }
            Ok(out)
        })
        .collect();
    let mut outcomes = Vec::with_capacity(config.paths);
    for chunk in chunks? {
        outcomes.extend(chunk);
    }
    Ok(outcomes)
}

fn run_path(
    model: &ModelSpec,
    config: &SimulationConfig,
    t0: f64,
    big_t: f64,
    x0: f64,
    rng: &mut PathRng,
) -> Result<PathOutcome> {
    // Draw the default threshold first so the stream layout is fixed.
    let default_threshold = rng.exponential();
    let mut x = x0;
    let mut t = t0;
    let mut hazard = 0.0;
    let vg = match (config.scheme, model.measure()) {
        (Scheme::VarianceGammaIncrement, LevyMeasureSpec::VarianceGamma { kappa, lambda_plus, lambda_minus, .. }) => {
            Some((*kappa, *lambda_plus, *lambda_minus))
        }
        _ => None,
    };
    let gauss = match model.measure() {
        LevyMeasureSpec::Gaussian { lambda, m, eta } => (*lambda, *m, *eta),
        _ => (0.0, 0.0, 0.0),
    };
    while t < big_t - 1e-12 {
        let h = config.dt.min(big_t - t);
        let gamma_before = model.gamma(t, x);
        match vg {
            None => {
                let (lambda0, m, eta) = gauss;
                let intensity = model.jump_mult(t, x) * lambda0;
                // The Bernoulli thinning needs λΔt ≪ 1; that is checked at
                // the start point before any path runs.  State-dependent
                // intensities can still blow up along the explosive tail of
                // a path that is headed for absorption, so the probability
                // is capped rather than treated as an error.
                let jump_prob = (intensity * h).min(1.0);
                // Compensated form: subtract the mark mean at the jump rate
                // from the martingale drift.
                let drift = model.drift(t, x) - intensity * m;
                let diffusion = (2.0 * model.a(t, x) * h).max(0.0).sqrt();
                let mut dx = drift * h + diffusion * rng.normal();
                if rng.uniform() < jump_prob {
                    dx += m + eta * rng.normal();
                }
                x += dx;
            }
            Some((kappa, lambda_plus, lambda_minus)) => {
                let activity = model.jump_mult(t, x);
                let shape = activity * h / kappa;
                // One-step martingale drift for the pair of gamma increments.
                let b = -(activity / kappa)
                    * ((lambda_minus / (1.0 + lambda_minus)).ln()
                        + (lambda_plus / (lambda_plus - 1.0)).ln());
                let up = rng.gamma(shape, 1.0 / lambda_plus)?;
                let down = rng.gamma(shape, 1.0 / lambda_minus)?;
                x += b * h + up - down;
            }
        }
        t += h;
        if x.is_nan() {
            return Err(Error::Numeric(format!(
                "path state became undefined at t = {t:.4}"
            )));
        }
        // Clamp to the absorption boundary before touching the
        // coefficients again, so that explosive tails never feed the
        // hazard an argument outside double range.
        let absorbed = x.abs() >= X_ABSORB;
        if absorbed {
            x = x.clamp(-X_ABSORB, X_ABSORB);
        }
        let gamma_after = model.gamma(t, x);
        hazard += 0.5 * (gamma_before + gamma_after) * h;
        if hazard.is_nan() {
            return Err(Error::Numeric(format!(
                "kill rate became undefined at t = {t:.4} (x = {x})"
            )));
        }
        if absorbed {
            // Freeze the path at the boundary and charge the remaining
            // kill intensity at the frozen state.  An infinite hazard
            // simply means certain default.
            let tail = gamma_after * (big_t - t);
            if !tail.is_nan() {
                hazard += tail.max(0.0);
            }
            break;
        }
    }
    Ok(PathOutcome {
        x_t: x,
        survived: default_threshold > hazard,
        hazard,
    })
}

/// Deterministic mean/SE reduction over per-unit samples (pairs are one
/// unit under antithetics).
fn reduce(samples: &[f64], paths: usize, start: Instant) -> Result<MCEstimate> {
    let n = samples.len();
    let chunk_sums: Vec<f64> = samples.chunks(CHUNK).map(quad::pairwise_sum).collect();
    let mean = quad::pairwise_sum(&chunk_sums) / n as f64;
    let sq: Vec<f64> = samples
        .chunks(CHUNK)
        .map(|c| {
            let devs: Vec<f64> = c.iter().map(|v| (v - mean) * (v - mean)).collect();
            quad::pairwise_sum(&devs)
        })
        .collect();
    let variance = if n > 1 {
        quad::pairwise_sum(&sq) / (n - 1) as f64
    } else {
        0.0
    };
    if !mean.is_finite() || !variance.is_finite() {
        return Err(Error::Numeric(
            "Monte Carlo reduction produced a non-finite moment".into(),
        ));
    }
    let std_error = (variance / n as f64).sqrt();
    let half = 1.96 * std_error;
    Ok(MCEstimate {
        mean,
        std_error,
        ci_low: mean - half,
        ci_high: mean + half,
        paths,
        elapsed: start.elapsed(),
    })
}

/// Fold path outcomes into per-unit samples through `value`, averaging
/// antithetic partners.
fn unit_samples(
    outcomes: &[PathOutcome],
    antithetic: bool,
    value: impl Fn(&PathOutcome) -> f64,
) -> Vec<f64> {
    if antithetic {
        outcomes
            .chunks_exact(2)
            .map(|pair| 0.5 * (value(&pair[0]) + value(&pair[1])))
            .collect()
    } else {
        outcomes.iter().map(value).collect()
    }
}

/// Monte Carlo option price from `(t0, x0)` to the horizon.
///
/// Surviving paths pay the payoff at the terminal point; defaulted paths
/// pay the strike for puts (the strike payment on default of the
/// defaultable-claim decomposition) and nothing for calls.
pub fn mc_price(
    model: &ModelSpec,
    config: &SimulationConfig,
    payoff: &PayoffTransform,
    t0: f64,
    big_t: f64,
    x0: f64,
) -> Result<MCEstimate> {
    let default_payment = match payoff {
        PayoffTransform::Put { log_strike } => log_strike.exp(),
        PayoffTransform::Call { .. } => 0.0,
        PayoffTransform::Delta { .. } => {
            return Err(Error::Config(
                "Monte Carlo pricing needs a call or put payoff; density comparisons \
                 use histograms over simulate_paths outcomes"
                    .into(),
            ))
        }
    };
    let start = Instant::now();
    let outcomes = simulate_paths(model, config, t0, big_t, x0)?;
    let samples = unit_samples(&outcomes, config.antithetic, |o| {
        if o.survived {
            payoff
                .payoff_value(o.x_t)
                .expect("call/put payoffs have pointwise values")
        } else {
            default_payment
        }
    });
    reduce(&samples, config.paths, start)
}

/// Monte Carlo survival probability using the conditional estimator
/// `e^{−∫γ}`: same mean as the default indicator, lower variance, and
/// exactly 1 with zero error when the model has no default channel.
pub fn survival_probability(
    model: &ModelSpec,
    config: &SimulationConfig,
    t0: f64,
    big_t: f64,
    x0: f64,
) -> Result<MCEstimate> {
    let start = Instant::now();
    let outcomes = simulate_paths(model, config, t0, big_t, x0)?;
    let samples = unit_samples(&outcomes, config.antithetic, |o| (-o.hazard).exp());
    reduce(&samples, config.paths, start)
}
