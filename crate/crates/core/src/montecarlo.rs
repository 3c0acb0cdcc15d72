//! Seeded Monte Carlo for the zero-fiber jump process and the classical
//! pure-jump particle.
//!
//! Every trajectory draws from its own ChaCha stream (master seed, stream =
//! trajectory index), and reductions run in index order, so results do not
//! depend on the number of worker threads.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::model::{KineticMode, ModelSpec};
use crate::perturbation::zeta;
use crate::torus::{GridFunction, Site, TorusGrid, MAX_DIM};
use crate::zero_fiber::{model_stationary, transition_rates, TransitionRates};

/// Origins are averaged over `[0, ORIGIN_FACTOR · T_max]`.
pub const ORIGIN_FACTOR: f64 = 4.0;

/// Per-trajectory RNG.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A path of the momentum process (and, for the particle sampler, of the
/// position). `times[0] = 0` is the start; later entries are jump times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<Site>>,
    pub horizon: f64,
}

impl Trajectory {
    /// Fraction of `[0, horizon]` spent at each node.
    pub fn occupation(&self, grid: &TorusGrid) -> Vec<f64> {
        let mut occ = vec![0.0; grid.len()];
        for (i, &s) in self.states.iter().enumerate() {
            let end = self.times.get(i + 1).copied().unwrap_or(self.horizon);
            occ[s] += end - self.times[i];
        }
        occ.iter_mut().for_each(|x| *x /= self.horizon);
        occ
    }

    fn segment_end(&self, i: usize) -> f64 {
        self.times.get(i + 1).copied().unwrap_or(self.horizon)
    }
}

/// `½ Σ_j |q_j - 𝒫(k_j) w|` between an occupation vector and a density.
pub fn total_variation(occupation: &[f64], density: &GridFunction) -> f64 {
    let w = density.grid.weight();
    0.5 * occupation
        .iter()
        .zip(density.values.iter())
        .map(|(q, p)| (q - p.re * w).abs())
        .sum::<f64>()
}

/// Cumulative jump tables for sampling targets in `O(log n)`.
struct JumpSampler {
    cumulative: Vec<Vec<f64>>,
    targets: Vec<Vec<usize>>,
    total: Vec<f64>,
}

impl JumpSampler {
    fn new(rates: &TransitionRates) -> Self {
        let mut cumulative = Vec::with_capacity(rates.jumps.len());
        let mut targets = Vec::with_capacity(rates.jumps.len());
        for out in &rates.jumps {
            let mut acc = 0.0;
            cumulative.push(
                out.iter()
                    .map(|&(_, w)| {
                        acc += w;
                        acc
                    })
                    .collect(),
            );
            targets.push(out.iter().map(|&(t, _)| t).collect());
        }
        JumpSampler {
            cumulative,
            targets,
            total: rates.total.clone(),
        }
    }

    /// Target of a jump from `j` and the index of the chosen atom entry.
    fn target(&self, j: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let c = &self.cumulative[j];
        let u = rng.random::<f64>() * self.total[j];
        let i = c.partition_point(|&x| x <= u).min(c.len() - 1);
        (self.targets[j][i], i)
    }

    fn run(&self, k0: usize, horizon: f64, rng: &mut ChaCha8Rng) -> Trajectory {
        let mut times = vec![0.0];
        let mut states = vec![k0];
        let mut t = 0.0;
        let mut k = k0;
        loop {
            let r = self.total[k];
            if !(r > 0.0) {
                // Zero escape rate: the state is absorbing.
                break;
            }
            t += Exp::new(r).expect("positive rate").sample(rng);
            if t >= horizon {
                break;
            }
            k = self.target(k, rng).0;
            times.push(t);
            states.push(k);
        }
        Trajectory {
            times,
            states,
            positions: None,
            horizon,
        }
    }
}

fn check_horizon(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {t}")));
    }
    Ok(())
}

/// One path of the zero-fiber process started at node `k0`.
pub fn simulate_y(spec: &ModelSpec, grid: &TorusGrid, k0: usize, horizon: f64, seed: u64) -> Result<Trajectory> {
    check_horizon(horizon)?;
    if k0 >= grid.len() {
        return Err(Error::InvalidArgument(format!("start node {k0} out of range")));
    }
    let sampler = JumpSampler::new(&transition_rates(spec, grid)?);
    Ok(sampler.run(k0, horizon, &mut trajectory_rng(seed, 0)))
}

/// Inverse-CDF sampling of a node from a grid density.
struct NodeSampler {
    cdf: Vec<f64>,
}

impl NodeSampler {
    fn new(p: &GridFunction) -> Self {
        let mut acc = 0.0;
        let cdf: Vec<f64> = p
            .values
            .iter()
            .map(|z| {
                acc += z.re.max(0.0);
                acc
            })
            .collect();
        let total = acc;
        NodeSampler {
            cdf: cdf.into_iter().map(|x| x / total).collect(),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u = rng.random::<f64>();
        self.cdf.partition_point(|&x| x <= u).min(self.cdf.len() - 1)
    }
}

/// A Monte Carlo matrix estimate with standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct MCEstimate {
    pub value: Array2<f64>,
    pub stderr: Array2<f64>,
    pub n_traj: usize,
    pub t_max: f64,
    pub seed: u64,
    /// Bound on the neglected correlation tail, where one applies.
    pub tail_bound: Option<f64>,
}

fn mat(m: &Array2<f64>) -> Value {
    json!(m.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

impl MCEstimate {
    pub fn to_json(&self) -> Value {
        json!({
            "value": mat(&self.value),
            "stderr": mat(&self.stderr),
            "n_traj": self.n_traj,
            "t_max": self.t_max,
            "seed": self.seed,
            "tail_bound": self.tail_bound,
        })
    }
}

/// Sample mean and standard error of per-trajectory matrices, reduced in
/// index order.
fn mean_and_stderr(samples: &[Array2<f64>]) -> (Array2<f64>, Array2<f64>) {
    let n = samples.len() as f64;
    let shape = samples[0].raw_dim();
    let mut mean = Array2::<f64>::zeros(shape);
    for s in samples {
        mean += s;
    }
    mean /= n;
    let mut var = Array2::<f64>::zeros(mean.raw_dim());
    for s in samples {
        let d = s - &mean;
        var += &(&d * &d);
    }
    let denom = (n - 1.0).max(1.0);
    let stderr = var.mapv(|v| (v / denom / n).sqrt());
    (mean, stderr)
}

/// Piecewise-constant observable along a trajectory with exact running
/// integrals: `C(x) = ∫₀ˣ ζ(Y_u) du` and `D(x) = ∫₀ˣ C(u) du`.
struct PathIntegrals<'a> {
    traj: &'a Trajectory,
    values: Vec<f64>,
    c_at: Vec<f64>,
    d_at: Vec<f64>,
}

impl<'a> PathIntegrals<'a> {
    fn new(traj: &'a Trajectory, zeta: &[f64]) -> Self {
        let values: Vec<f64> = traj.states.iter().map(|&s| zeta[s]).collect();
        let mut c_at = Vec::with_capacity(values.len());
        let mut d_at = Vec::with_capacity(values.len());
        let (mut c, mut d) = (0.0, 0.0);
        for (i, &z) in values.iter().enumerate() {
            c_at.push(c);
            d_at.push(d);
            let len = traj.segment_end(i) - traj.times[i];
            d += c * len + 0.5 * z * len * len;
            c += z * len;
        }
        PathIntegrals {
            traj,
            values,
            c_at,
            d_at,
        }
    }

    fn d(&self, x: f64) -> f64 {
        let i = self.traj.times.partition_point(|&t| t <= x).saturating_sub(1);
        let s = x - self.traj.times[i];
        self.d_at[i] + self.c_at[i] * s + 0.5 * self.values[i] * s * s
    }
}

/// `(1/T_o) ∫₀^{T_o} ζ_j(Y_s) ∫_s^{s+T} ζ_i(Y_u) du ds` for one path of
/// length `T_o + T`.
fn lagged_integral(path_i: &PathIntegrals, path_j: &PathIntegrals, t_max: f64, t_origin: f64) -> f64 {
    let traj = path_j.traj;
    let mut acc = 0.0;
    for (n, &z) in path_j.values.iter().enumerate() {
        let a = traj.times[n];
        if a >= t_origin {
            break;
        }
        if z == 0.0 {
            continue;
        }
        let b = traj.segment_end(n).min(t_origin);
        let window = (path_i.d(b + t_max) - path_i.d(a + t_max)) - (path_i.d(b) - path_i.d(a));
        acc += z * window;
    }
    acc / t_origin
}

/// Green-Kubo matrix `α` from stationary paths. Each path starts at a node
/// drawn from `𝒫`, runs for `(1 + ORIGIN_FACTOR) T_max`, and contributes the
/// lagged correlation integral averaged over origins in its first part.
pub fn estimate_alpha(spec: &ModelSpec, grid: &TorusGrid, n_traj: usize, t_max: f64, seed: u64) -> Result<MCEstimate> {
    estimate_alpha_with(spec, grid, n_traj, t_max, seed, HorizonPolicy::Enforce)
}

/// What to do when the tail bound `e^{-gap T_max} Var(ζ)/gap` exceeds half
/// the standard error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HorizonPolicy {
    /// Fail with [`Error::HorizonTooShort`].
    #[default]
    Enforce,
    /// Return the estimate with the bound attached.
    Report,
}

pub fn estimate_alpha_with(
    spec: &ModelSpec,
    grid: &TorusGrid,
    n_traj: usize,
    t_max: f64,
    seed: u64,
    policy: HorizonPolicy,
) -> Result<MCEstimate> {
    check_horizon(t_max)?;
    if n_traj < 2 {
        return Err(Error::InvalidArgument("need at least two trajectories".into()));
    }
    let (_, st) = model_stationary(spec, grid)?;
    let rates = transition_rates(spec, grid)?;
    let sampler = JumpSampler::new(&rates);
    let start = NodeSampler::new(&st.p);
    let z: Vec<Vec<f64>> = zeta(spec, grid, &st.p)?.iter().map(|f| f.real_parts()).collect();
    let d = spec.dim;
    let t_origin = ORIGIN_FACTOR * t_max;
    let samples: Vec<Array2<f64>> = (0..n_traj)
        .into_par_iter()
        .map(|idx| {
            let mut rng = trajectory_rng(seed, idx as u64);
            let k0 = start.sample(&mut rng);
            let traj = sampler.run(k0, t_origin + t_max, &mut rng);
            let paths: Vec<PathIntegrals> = z.iter().map(|zi| PathIntegrals::new(&traj, zi)).collect();
            let mut raw = Array2::<f64>::zeros((d, d));
            for i in 0..d {
                for j in 0..d {
                    raw[[i, j]] = lagged_integral(&paths[i], &paths[j], t_max, t_origin);
                }
            }
            Array2::from_shape_fn((d, d), |(i, j)| 0.5 * (raw[[i, j]] + raw[[j, i]]))
        })
        .collect();
    let (value, stderr) = mean_and_stderr(&samples);

    // Tail of the correlation integral beyond T_max.
    let var = z
        .iter()
        .map(|zi| zi.iter().zip(st.p.values.iter()).map(|(x, p)| x * x * p.re).sum::<f64>() * grid.weight())
        .fold(0.0, f64::max);
    let tail = if var == 0.0 { 0.0 } else { (-st.gap * t_max).exp() * var / st.gap };
    let budget = (0..d).map(|i| stderr[[i, i]]).fold(0.0, f64::max);
    if tail > 0.5 * budget && policy == HorizonPolicy::Enforce {
        return Err(Error::HorizonTooShort { tail, stderr: budget });
    }
    Ok(MCEstimate {
        value,
        stderr,
        n_traj,
        t_max,
        seed,
        tail_bound: Some(tail),
    })
}

/// Empirical law of `(x_t - v t)/√t` for the classical pure-jump particle.
#[derive(Clone, Debug)]
pub struct ParticleSample {
    pub mean: Vec<f64>,
    pub mean_stderr: Vec<f64>,
    pub cov: MCEstimate,
    pub drift: Vec<f64>,
    /// Chi-square statistic of the orthant counts against the Gaussian
    /// with the empirical covariance.
    pub chi2: f64,
    pub dof: usize,
    pub chi2_critical_99: f64,
}

impl ParticleSample {
    pub fn to_json(&self) -> Value {
        json!({
            "mean": self.mean,
            "mean_stderr": self.mean_stderr,
            "cov": self.cov.to_json(),
            "drift": self.drift,
            "chi2": self.chi2,
            "dof": self.dof,
            "chi2_critical_99": self.chi2_critical_99,
        })
    }
}

/// Orthant probabilities of a centred Gaussian in `d ≤ 2`, indexed by the
/// sign bits (bit `i` set when coordinate `i` is negative).
fn orthant_probabilities(cov: &Array2<f64>) -> Vec<f64> {
    match cov.nrows() {
        1 => vec![0.5, 0.5],
        _ => {
            let rho = cov[[0, 1]] / (cov[[0, 0]] * cov[[1, 1]]).sqrt();
            let same = 0.25 + rho.clamp(-1.0, 1.0).asin() / (2.0 * std::f64::consts::PI);
            vec![same, 0.5 - same, 0.5 - same, same]
        }
    }
}

/// Sample the classical particle at time `t`. Momenta start from `𝒫`, so the
/// momentum process is stationary throughout.
pub fn simulate_classical_particle(
    spec: &ModelSpec,
    grid: &TorusGrid,
    n_traj: usize,
    t: f64,
    seed: u64,
) -> Result<ParticleSample> {
    check_horizon(t)?;
    if n_traj < 2 {
        return Err(Error::InvalidArgument("need at least two trajectories".into()));
    }
    let c = match spec.kinetic_mode() {
        KineticMode::Classical => spec.classical().expect("classical"),
        KineticMode::Quantum => {
            return Err(Error::ModeMismatch {
                model: "quantum".into(),
                requested: "classical".into(),
            })
        }
    };
    if grid.nodes().any(|k| spec.dispersion.value(&k) != 0.0) {
        return Err(Error::KineticNotSupported);
    }
    let d = spec.dim;
    let sites = c.validate(d)?;
    let (_, st) = model_stationary(spec, grid)?;
    let rates = transition_rates(spec, grid)?;
    let sampler = JumpSampler::new(&rates);
    let start = NodeSampler::new(&st.p);
    let laws: Vec<Vec<f64>> = (0..grid.len())
        .map(|j| {
            let mut acc = 0.0;
            c.jump_probabilities(&sites, &grid.node(j))
                .into_iter()
                .map(|q| {
                    acc += q;
                    acc
                })
                .collect()
        })
        .collect();
    let drift = crate::perturbation::transport_coefficients(spec, grid)?.v;
    let scale = t.sqrt();

    let finals: Vec<[f64; MAX_DIM]> = (0..n_traj)
        .into_par_iter()
        .map(|idx| {
            let mut rng = trajectory_rng(seed, idx as u64);
            let mut k = start.sample(&mut rng);
            let mut x = [0i64; MAX_DIM];
            let mut time = 0.0;
            loop {
                let r = sampler.total[k];
                if !(r > 0.0) {
                    break;
                }
                time += Exp::new(r).expect("positive rate").sample(&mut rng);
                if time >= t {
                    break;
                }
                let u = rng.random::<f64>() * laws[k].last().copied().unwrap_or(1.0);
                let zi = laws[k].partition_point(|&a| a <= u).min(sites.len() - 1);
                for a in 0..d {
                    x[a] += sites[zi][a];
                }
                k = sampler.target(k, &mut rng).0;
            }
            let mut y = [0.0; MAX_DIM];
            for a in 0..d {
                y[a] = (x[a] as f64 - drift[a] * t) / scale;
            }
            y
        })
        .collect();

    let n = n_traj as f64;
    let mut mean = vec![0.0; d];
    for y in &finals {
        for a in 0..d {
            mean[a] += y[a];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let products: Vec<Array2<f64>> = finals
        .iter()
        .map(|y| Array2::from_shape_fn((d, d), |(i, j)| (y[i] - mean[i]) * (y[j] - mean[j])))
        .collect();
    let (mut cov_value, cov_stderr) = mean_and_stderr(&products);
    cov_value *= n / (n - 1.0);
    let mean_stderr: Vec<f64> = (0..d).map(|a| (cov_value[[a, a]] / n).sqrt()).collect();

    // Orthant counts around the origin; coordinates sitting exactly on an
    // axis are split evenly between the two sides.
    let probs = orthant_probabilities(&cov_value);
    let mut counts = vec![0.0; probs.len()];
    for y in &finals {
        let mut cells = vec![(0usize, 1.0)];
        for a in 0..d {
            let mut next = Vec::with_capacity(cells.len() * 2);
            for &(bits, w) in &cells {
                if y[a] > 0.0 {
                    next.push((bits, w));
                } else if y[a] < 0.0 {
                    next.push((bits | (1 << a), w));
                } else {
                    next.push((bits, 0.5 * w));
                    next.push((bits | (1 << a), 0.5 * w));
                }
            }
            cells = next;
        }
        for (bits, w) in cells {
            counts[bits] += w;
        }
    }
    let chi2: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(o, p)| {
            let e = p * n;
            (o - e) * (o - e) / e
        })
        .sum();
    // One parameter (the correlation) is fitted in d = 2.
    let dof = probs.len() - 1 - (d - 1);
    let chi2_critical_99 = ChiSquared::new(dof as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(0.99);
    Ok(ParticleSample {
        mean,
        mean_stderr,
        cov: MCEstimate {
            value: cov_value,
            stderr: cov_stderr,
            n_traj,
            t_max: t,
            seed,
            tail_bound: None,
        },
        drift,
        chi2,
        dof,
        chi2_critical_99,
    })
}
