//! Bayesian state discrimination from photon-counting records.
//!
//! The filter runs one conditioned state per hypothesis through the record
//! and accumulates, in the log domain, the probability each hypothesis
//! assigns to every click and no-click step. Posteriors are the normalized
//! `prior * likelihood`. The integrated-count baseline only looks at the
//! total number of clicks.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::ensemble::{stream_rng, try_par_map};
use crate::models::{readout_index, readout_space, ModelSpec, PulseAction, DOWN, Q0, Q1};
use crate::quantum::{DensityMatrix, QuantumError};
use crate::record::DetectionRecord;
use crate::trajectory::{Run, SimulationError, Simulator, StateSeries, TimeGrid};

/// Minimum ensemble size for an error-probability estimate.
pub const MIN_QE_TRAJECTORIES: usize = 100;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("hypothesis set is empty")]
    NoHypotheses,
    #[error("priors must be non-negative and sum to 1 (sum {0})")]
    Priors(f64),
    #[error("hypothesis `{0}` does not live on the model space")]
    ForeignHypothesis(String),
    #[error("record does not match the simulation grid ({0})")]
    GridMismatch(String),
    #[error("record is impossible under every hypothesis (step {0})")]
    ImpossibleRecord(usize),
    #[error("need at least {min} trajectories, got {got}")]
    TooFewTrajectories { min: usize, got: usize },
    #[error("steady state is not unique")]
    NonUniqueSteadyState,
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub label: String,
    pub rho0: DensityMatrix,
    pub prior: f64,
}

impl Hypothesis {
    pub fn new(label: impl Into<String>, rho0: DensityMatrix, prior: f64) -> Result<Self, InferenceError> {
        rho0.validate()?;
        if !(0.0..=1.0).contains(&prior) {
            return Err(InferenceError::Priors(prior));
        }
        Ok(Self { label: label.into(), rho0, prior })
    }
}

/// `h0: |0, down>` and `h1: |1, down>` with the given prior of `h1`.
pub fn readout_hypotheses(prior1: f64) -> Result<Vec<Hypothesis>, InferenceError> {
    let space = readout_space();
    Ok(vec![
        Hypothesis::new("h0", DensityMatrix::basis_state(space.clone(), readout_index(Q0, DOWN))?, 1.0 - prior1)?,
        Hypothesis::new("h1", DensityMatrix::basis_state(space, readout_index(Q1, DOWN))?, prior1)?,
    ])
}

fn check_hypotheses(hypotheses: &[Hypothesis], dim: usize) -> Result<(), InferenceError> {
    if hypotheses.is_empty() {
        return Err(InferenceError::NoHypotheses);
    }
    let sum: f64 = hypotheses.iter().map(|h| h.prior).sum();
    if hypotheses.iter().any(|h| !(h.prior >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(InferenceError::Priors(sum));
    }
    for h in hypotheses {
        if h.rho0.dim() != dim {
            return Err(InferenceError::ForeignHypothesis(h.label.clone()));
        }
    }
    Ok(())
}

/// Outcome of a maximum-posterior decision.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decision {
    Unique(usize),
    /// Several hypotheses share the largest posterior exactly.
    Tie(Vec<usize>),
}

impl Decision {
    /// Error charged when `truth` is the true hypothesis. A tie among `S`
    /// counts as a uniformly random pick from `S`, so `1 - 1/|S|` if the
    /// truth is in `S`; two-way ties cost one half.
    pub fn error_weight(&self, truth: usize) -> f64 {
        match self {
            Decision::Unique(i) => f64::from(u8::from(*i != truth)),
            Decision::Tie(set) if set.contains(&truth) => 1.0 - 1.0 / set.len() as f64,
            Decision::Tie(_) => 1.0,
        }
    }
}

/// Argmax of a posterior vector with exact-tie detection.
pub fn decide(posteriors: &[f64]) -> Decision {
    let best = posteriors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = (0..posteriors.len()).filter(|&i| posteriors[i] == best).collect();
    if winners.len() == 1 {
        Decision::Unique(winners[0])
    } else {
        Decision::Tie(winners)
    }
}

/// Softmax of `log prior + log likelihood`, stable against underflow.
pub fn posteriors_from_scores(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![f64::NAN; scores.len()];
    }
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// The hypothesis set compiled against a simulator.
#[derive(Clone, Debug)]
pub struct BayesFilter<'a> {
    sim: &'a Simulator,
    hypotheses: &'a [Hypothesis],
}

impl<'a> BayesFilter<'a> {
    pub fn new(sim: &'a Simulator, hypotheses: &'a [Hypothesis]) -> Result<Self, InferenceError> {
        check_hypotheses(hypotheses, sim.space().total_dim())?;
        Ok(Self { sim, hypotheses })
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        self.hypotheses
    }

    pub fn start(&self) -> Result<FilterState<'a>, InferenceError> {
        let runs = self.hypotheses.iter().map(|h| self.sim.start(&h.rho0)).collect::<Result<Vec<_>, _>>()?;
        Ok(FilterState {
            log_priors: self.hypotheses.iter().map(|h| h.prior.ln()).collect(),
            log_likelihoods: vec![0.0; runs.len()],
            runs,
            step: 0,
        })
    }
}

/// Running filter: one conditioned state and log-likelihood per hypothesis.
#[derive(Clone, Debug)]
pub struct FilterState<'a> {
    runs: Vec<Run<'a>>,
    log_priors: Vec<f64>,
    log_likelihoods: Vec<f64>,
    step: usize,
}

impl<'a> FilterState<'a> {
    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Consumes the outcome of one step. A hypothesis that assigns zero
    /// probability to a click is dropped for the rest of the record.
    pub fn update(&mut self, event: Option<u16>) -> Result<(), InferenceError> {
        let mut alive = false;
        for (run, ll) in self.runs.iter_mut().zip(self.log_likelihoods.iter_mut()) {
            if *ll == f64::NEG_INFINITY {
                continue;
            }
            *ll += run.advance_conditioned(event)?;
            alive |= *ll > f64::NEG_INFINITY;
        }
        let possible = self.log_priors.iter().zip(&self.log_likelihoods).any(|(p, l)| (p + l) > f64::NEG_INFINITY);
        if !alive || !possible {
            return Err(InferenceError::ImpossibleRecord(self.step));
        }
        self.step += 1;
        Ok(())
    }

    /// Accumulated log-likelihood per hypothesis (`-inf` for excluded ones).
    pub fn log_likelihoods(&self) -> &[f64] {
        &self.log_likelihoods
    }

    pub fn scores(&self) -> Vec<f64> {
        self.log_priors.iter().zip(&self.log_likelihoods).map(|(p, l)| p + l).collect()
    }

    pub fn posteriors(&self) -> Vec<f64> {
        posteriors_from_scores(&self.scores())
    }

    pub fn decision(&self) -> Decision {
        // ties are decided on the scores, so equal likelihoods tie exactly
        decide(&self.scores())
    }

    /// Conditioned state of hypothesis `i`.
    pub fn state(&self, i: usize) -> DensityMatrix {
        self.runs[i].state()
    }
}

/// Posteriors and log-likelihoods sampled along one record.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTrace {
    pub labels: Vec<String>,
    pub times: Vec<f64>,
    /// `probabilities[k][i]`: posterior of hypothesis `i` at `times[k]`.
    pub probabilities: Vec<Vec<f64>>,
    pub log_likelihoods: Vec<Vec<f64>>,
}

impl PosteriorTrace {
    pub fn final_posteriors(&self) -> &[f64] {
        self.probabilities.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn check_record(sim: &Simulator, record: &DetectionRecord) -> Result<(), InferenceError> {
    let grid = sim.grid();
    if record.n_steps() != grid.n_steps() || record.dt() != grid.dt() {
        return Err(InferenceError::GridMismatch(format!(
            "record has {} steps of {}, simulator {} steps of {}",
            record.n_steps(),
            record.dt(),
            grid.n_steps(),
            grid.dt()
        )));
    }
    Ok(())
}

/// Filters `record` and samples the posteriors every `stride` steps and at
/// the end.
pub fn bayesian_filter(
    sim: &Simulator,
    record: &DetectionRecord,
    hypotheses: &[Hypothesis],
    stride: usize,
) -> Result<PosteriorTrace, InferenceError> {
    check_record(sim, record)?;
    let filter = BayesFilter::new(sim, hypotheses)?;
    let mut state = filter.start()?;
    let stride = stride.max(1);
    let grid = sim.grid();
    let mut trace = PosteriorTrace {
        labels: hypotheses.iter().map(|h| h.label.clone()).collect(),
        times: Vec::new(),
        probabilities: Vec::new(),
        log_likelihoods: Vec::new(),
    };
    let mut sample = |state: &FilterState| {
        trace.times.push(grid.time(state.step_index()));
        trace.probabilities.push(state.posteriors());
        trace.log_likelihoods.push(state.log_likelihoods().to_vec());
    };
    sample(&state);
    for (k, event) in record.events().enumerate() {
        state.update(event)?;
        if (k + 1) % stride == 0 || k + 1 == grid.n_steps() {
            sample(&state);
        }
    }
    Ok(trace)
}

/// Maximum-posterior decision on the final posteriors of a trace.
pub fn classify(trace: &PosteriorTrace) -> Decision {
    decide(trace.final_posteriors())
}

/// How the integrated-count classifier bins click numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Binning {
    /// One bin per click number.
    Unit,
    /// Integer-width bins from the Freedman-Diaconis rule on the pooled
    /// samples, `width = max(1, round(2 IQR / n^(1/3)))`.
    #[default]
    FreedmanDiaconis,
}

fn quantile(sorted: &[u32], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    f64::from(sorted[lo]) * (1.0 - frac) + f64::from(sorted[hi]) * frac
}

/// Bin width used for `samples` under `binning`.
pub fn count_bin_width(samples: &[&[u32]], binning: Binning) -> u32 {
    match binning {
        Binning::Unit => 1,
        Binning::FreedmanDiaconis => {
            let mut pooled: Vec<u32> = samples.iter().flat_map(|s| s.iter().copied()).collect();
            if pooled.len() < 2 {
                return 1;
            }
            pooled.sort_unstable();
            let iqr = quantile(&pooled, 0.75) - quantile(&pooled, 0.25);
            let h = 2.0 * iqr / (pooled.len() as f64).cbrt();
            (h.round() as u32).max(1)
        }
    }
}

/// Error probability of the maximum-a-posteriori decision on binned click
/// numbers: `1 - sum_bins max_j prior_j P(bin | h_j)`. With equal priors this
/// is `(1/2) sum_bins min(P(bin | h_0), P(bin | h_1))`.
pub fn count_classifier_error(samples: &[&[u32]], priors: &[f64], binning: Binning) -> f64 {
    let width = count_bin_width(samples, binning);
    let lo = samples.iter().flat_map(|s| s.iter().copied()).min().unwrap_or(0);
    let hi = samples.iter().flat_map(|s| s.iter().copied()).max().unwrap_or(0);
    let n_bins = ((hi - lo) / width + 1) as usize;
    let mut best = vec![0.0f64; n_bins];
    for (s, prior) in samples.iter().zip(priors) {
        if s.is_empty() {
            continue;
        }
        let mut hist = vec![0usize; n_bins];
        for &c in s.iter() {
            hist[((c - lo) / width) as usize] += 1;
        }
        let n = s.len() as f64;
        for (b, h) in best.iter_mut().zip(hist) {
            *b = b.max(prior * h as f64 / n);
        }
    }
    (1.0 - best.iter().sum::<f64>()).max(0.0)
}

/// Error probabilities against probing time from a simulated ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct QeCurve {
    pub labels: Vec<String>,
    pub times: Vec<f64>,
    /// Ensemble mean of the posterior of the true hypothesis,
    /// `true_posterior[i][k]` for records generated under hypothesis `i`.
    pub true_posterior: Vec<Vec<f64>>,
    pub qe_bayes: Vec<f64>,
    pub qe_bayes_stderr: Vec<f64>,
    pub qe_counts: Vec<f64>,
    /// Click numbers up to each sampled time, `counts[i][k][n]` for
    /// trajectory `n` under hypothesis `i`.
    pub counts: Vec<Vec<Vec<u32>>>,
}

/// Per-trajectory tallies of [`estimate_qe`].
struct Tally {
    error: Vec<f64>,
    true_posterior: Vec<f64>,
    counts: Vec<u32>,
}

/// Sample step indices: every `stride`-th step and the last one.
fn sample_steps(grid: TimeGrid, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut steps: Vec<usize> = (0..=grid.n_steps()).step_by(stride).collect();
    if steps.last() != Some(&grid.n_steps()) {
        steps.push(grid.n_steps());
    }
    steps
}

/// Simulates `n` records under each hypothesis, filters them, and tallies
/// the Bayesian and integrated-count error probabilities every `stride`
/// steps. Records of hypothesis `i` use streams `(seed, i, 0..n)`, so the
/// same seed gives common random numbers across model variants.
pub fn estimate_qe(
    sim: &Simulator,
    hypotheses: &[Hypothesis],
    n: usize,
    seed: u64,
    stride: usize,
    binning: Binning,
) -> Result<QeCurve, InferenceError> {
    if n < MIN_QE_TRAJECTORIES {
        return Err(InferenceError::TooFewTrajectories { min: MIN_QE_TRAJECTORIES, got: n });
    }
    let filter = BayesFilter::new(sim, hypotheses)?;
    let steps = sample_steps(sim.grid(), stride);
    let m = hypotheses.len();

    let mut per_truth: Vec<Vec<Tally>> = Vec::with_capacity(m);
    for truth in 0..m {
        let tallies = try_par_map(n, |i| -> Result<Tally, InferenceError> {
            let mut rng = stream_rng(seed, truth as u32, i as u32);
            let mut source = sim.start(&hypotheses[truth].rho0)?;
            let mut state = filter.start()?;
            let mut tally = Tally {
                error: Vec::with_capacity(steps.len()),
                true_posterior: Vec::with_capacity(steps.len()),
                counts: Vec::with_capacity(steps.len()),
            };
            let mut clicks = 0u32;
            let mut slot = 0;
            loop {
                if steps[slot] == state.step_index() {
                    tally.error.push(state.decision().error_weight(truth));
                    tally.true_posterior.push(state.posteriors()[truth]);
                    tally.counts.push(clicks);
                    slot += 1;
                }
                if source.is_finished() {
                    break;
                }
                let event = source.advance(&mut rng)?;
                clicks += u32::from(event.is_some());
                state.update(event)?;
            }
            Ok(tally)
        })?;
        per_truth.push(tallies);
    }

    let priors: Vec<f64> = hypotheses.iter().map(|h| h.prior).collect();
    let nf = n as f64;
    let mut curve = QeCurve {
        labels: hypotheses.iter().map(|h| h.label.clone()).collect(),
        times: steps.iter().map(|&k| sim.grid().time(k)).collect(),
        true_posterior: vec![Vec::with_capacity(steps.len()); m],
        qe_bayes: Vec::with_capacity(steps.len()),
        qe_bayes_stderr: Vec::with_capacity(steps.len()),
        qe_counts: Vec::with_capacity(steps.len()),
        counts: vec![vec![Vec::with_capacity(n); steps.len()]; m],
    };
    for (truth, tallies) in per_truth.iter().enumerate() {
        for t in tallies {
            for (k, &c) in t.counts.iter().enumerate() {
                curve.counts[truth][k].push(c);
            }
        }
    }
    for k in 0..steps.len() {
        let mut qe = 0.0;
        let mut var = 0.0;
        for (truth, tallies) in per_truth.iter().enumerate() {
            let mean = tallies.iter().map(|t| t.error[k]).sum::<f64>() / nf;
            let second = tallies.iter().map(|t| t.error[k] * t.error[k]).sum::<f64>() / nf;
            qe += priors[truth] * mean;
            var += priors[truth].powi(2) * (second - mean * mean).max(0.0) / nf;
            let post = tallies.iter().map(|t| t.true_posterior[k]).sum::<f64>() / nf;
            curve.true_posterior[truth].push(post);
        }
        curve.qe_bayes.push(qe);
        curve.qe_bayes_stderr.push(var.sqrt());
        let samples: Vec<&[u32]> = (0..m).map(|i| curve.counts[i][k].as_slice()).collect();
        curve.qe_counts.push(count_classifier_error(&samples, &priors, binning));
    }
    Ok(curve)
}

/// Integrated-count error at the end of the grid from `n` fresh records per
/// hypothesis.
pub fn integrated_count_error(
    sim: &Simulator,
    hypotheses: &[Hypothesis],
    n: usize,
    seed: u64,
    binning: Binning,
) -> Result<f64, InferenceError> {
    check_hypotheses(hypotheses, sim.space().total_dim())?;
    if n == 0 {
        return Err(InferenceError::TooFewTrajectories { min: 1, got: 0 });
    }
    let mut samples = Vec::with_capacity(hypotheses.len());
    for (truth, h) in hypotheses.iter().enumerate() {
        let counts = try_par_map(n, |i| -> Result<u32, SimulationError> {
            let mut rng = stream_rng(seed, truth as u32, i as u32);
            let mut run = sim.start(&h.rho0)?;
            let mut clicks = 0;
            while !run.is_finished() {
                clicks += u32::from(run.advance(&mut rng)?.is_some());
            }
            Ok(clicks)
        })?;
        samples.push(counts);
    }
    let refs: Vec<&[u32]> = samples.iter().map(Vec::as_slice).collect();
    let priors: Vec<f64> = hypotheses.iter().map(|h| h.prior).collect();
    Ok(count_classifier_error(&refs, &priors, binning))
}

/// `(1 - cos(w t)) / w^2` and `sin(w t) / w` as functions of `s = w^2`,
/// continued to `s < 0` and expanded near `s = 0`.
fn oscillator_terms(s: f64, t: f64) -> (f64, f64) {
    let x = s * t * t;
    if x.abs() < 1e-4 {
        let t2 = t * t;
        let one_minus_cos = t2 / 2.0 * (1.0 - x / 12.0 + x * x / 360.0);
        let sine = t * (1.0 - x / 6.0 + x * x / 120.0);
        (one_minus_cos, sine)
    } else if s > 0.0 {
        let w = s.sqrt();
        ((1.0 - (w * t).cos()) / s, (w * t).sin() / w)
    } else {
        let k = (-s).sqrt();
        (((k * t).cosh() - 1.0) / (-s), (k * t).sinh() / k)
    }
}

/// Error probability of the infinitely blockaded readout at time `t`: the
/// probability of seeing no click from `|1>` times the prior of `h_1`,
///
/// ```text
/// e^{-gamma t/2} [4 W^2 - gamma^2 cos(W' t) + 2 gamma W' sin(W' t)] / (4 W'^2) * prior1
/// ```
///
/// with `W' = sqrt(W^2 - gamma^2/4)`, continued analytically for
/// `W < gamma/2`.
pub fn qe_analytic_large_mu(t: f64, omega: f64, gamma: f64, prior1: f64) -> f64 {
    let s = omega * omega - gamma * gamma / 4.0;
    let (one_minus_cos, sine) = oscillator_terms(s, t);
    let bracket = 1.0 + gamma * gamma / 4.0 * one_minus_cos + gamma / 2.0 * sine;
    (-gamma * t / 2.0).exp() * bracket * prior1
}

fn lindblad_rhs(h: &DMatrix<C64>, jumps: &[DMatrix<C64>], decay: &DMatrix<C64>, rho: &DMatrix<C64>) -> DMatrix<C64> {
    let i = C64::new(0.0, 1.0);
    let mut out = (h * rho - rho * h) * (-i);
    for c in jumps {
        out += c * rho * c.adjoint();
    }
    out -= (decay * rho + rho * decay) * C64::new(0.5, 0.0);
    out
}

/// Deterministic RK4 integration of the unconditioned master equation (all
/// channels, detection efficiency irrelevant), following the pulse
/// schedule; states are returned every `stride` steps and at the end.
pub fn lindblad_oracle(
    model: &ModelSpec,
    rho0: &DensityMatrix,
    grid: TimeGrid,
    stride: usize,
) -> Result<StateSeries, InferenceError> {
    if rho0.dim() != model.dim() {
        return Err(QuantumError::DimensionMismatch { left: rho0.dim(), right: model.dim() }.into());
    }
    let jumps: Vec<DMatrix<C64>> = model
        .monitored()
        .iter()
        .map(|j| j.operator.matrix().clone())
        .chain(model.unmonitored().iter().map(|op| op.matrix().clone()))
        .collect();
    let decay = jumps.iter().fold(DMatrix::zeros(model.dim(), model.dim()), |acc, c| acc + c.adjoint() * c);
    let mut amps = model.initial_amplitudes();
    let mut h = model.hamiltonian_with(&amps).into_matrix();
    let mut events = Vec::new();
    for e in model.schedule() {
        let step = grid.step_of(e.time);
        if step > grid.n_steps() {
            return Err(SimulationError::ScheduleOutOfRange { time: e.time, t_final: grid.t_final() }.into());
        }
        events.push((step, &e.action));
    }
    let steps = sample_steps(grid, stride);
    let dt = C64::new(grid.dt(), 0.0);
    let half = C64::new(0.5, 0.0);
    let mut rho = rho0.matrix().clone();
    let mut next_event = 0;
    let mut slot = 0;
    let mut series = StateSeries { times: Vec::with_capacity(steps.len()), states: Vec::with_capacity(steps.len()) };
    for k in 0..=grid.n_steps() {
        while let Some((step, action)) = events.get(next_event) {
            if *step != k {
                break;
            }
            match action {
                PulseAction::Unitary { operator, .. } => {
                    rho = operator.matrix() * &rho * operator.matrix().adjoint();
                }
                PulseAction::SetDrive { term, value } => {
                    if let Some(idx) = model.drive_index(term) {
                        amps[idx] = *value;
                        h = model.hamiltonian_with(&amps).into_matrix();
                    }
                }
            }
            next_event += 1;
        }
        if steps.get(slot) == Some(&k) {
            series.times.push(grid.time(k));
            series.states.push(DensityMatrix::from_parts_unchecked(model.space().clone(), rho.clone())?);
            slot += 1;
        }
        if k == grid.n_steps() {
            break;
        }
        let k1 = lindblad_rhs(&h, &jumps, &decay, &rho);
        let k2 = lindblad_rhs(&h, &jumps, &decay, &(&rho + &k1 * (dt * half)));
        let k3 = lindblad_rhs(&h, &jumps, &decay, &(&rho + &k2 * (dt * half)));
        let k4 = lindblad_rhs(&h, &jumps, &decay, &(&rho + &k3 * dt));
        rho += (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * (dt / C64::new(6.0, 0.0));
    }
    Ok(series)
}

/// Unique stationary state of the master equation at the initial drive
/// amplitudes (pulse schedule ignored), from a direct linear solve.
pub fn steady_state(model: &ModelSpec) -> Result<DensityMatrix, InferenceError> {
    let d = model.dim();
    let n = d * d;
    let h = model.hamiltonian().into_matrix();
    let id = DMatrix::<C64>::identity(d, d);
    let i = C64::new(0.0, 1.0);
    // column-major vec: vec(A X B) = (B^T ⊗ A) vec(X)
    let mut l = (id.kronecker(&h) - h.transpose().kronecker(&id)) * (-i);
    let channels = model.monitored().iter().map(|j| j.operator.matrix()).chain(model.unmonitored().iter().map(|o| o.matrix()));
    for c in channels {
        let cdc = c.adjoint() * c;
        l += c.conjugate().kronecker(c);
        l -= (id.kronecker(&cdc) + cdc.transpose().kronecker(&id)) * C64::new(0.5, 0.0);
    }
    // replace the first equation by the trace condition
    for col in 0..n {
        l[(0, col)] = C64::new(0.0, 0.0);
    }
    for k in 0..d {
        l[(0, k + k * d)] = C64::new(1.0, 0.0);
    }
    let mut rhs = nalgebra::DVector::<C64>::zeros(n);
    rhs[0] = C64::new(1.0, 0.0);
    let svd = l.clone().svd(false, false);
    let smallest = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if smallest < 1e-10 * svd.singular_values.max() {
        return Err(InferenceError::NonUniqueSteadyState);
    }
    let x = l.lu().solve(&rhs).ok_or(InferenceError::NonUniqueSteadyState)?;
    let rho = DMatrix::from_column_slice(d, d, x.as_slice());
    let rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
    Ok(DensityMatrix::from_parts_unchecked(model.space().clone(), rho)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_direct_drive_model, DirectDriveParams, MonitoredJump, UP};
    use crate::quantum::{HilbertSpace, Operator};
    use crate::trajectory::Integrator;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn decision_and_tie_weights() {
        assert_eq!(decide(&[0.9, 0.1]), Decision::Unique(0));
        assert_eq!(decide(&[0.5, 0.5]), Decision::Tie(vec![0, 1]));
        assert_eq!(Decision::Tie(vec![0, 1]).error_weight(1), 0.5);
        assert_abs_diff_eq!(Decision::Tie(vec![0, 1, 2]).error_weight(2), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(Decision::Tie(vec![0, 1]).error_weight(2), 1.0);
        assert_eq!(Decision::Unique(1).error_weight(1), 0.0);
    }

    #[test]
    fn softmax_survives_underflow() {
        let p = posteriors_from_scores(&[-1e5, -1e5 - 2.0_f64.ln()]);
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-12);
        let p = posteriors_from_scores(&[f64::NEG_INFINITY, -3.0]);
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn analytic_error_limits() {
        assert_abs_diff_eq!(qe_analytic_large_mu(0.0, 2.0, 1.0, 0.5), 0.5, epsilon = 1e-15);
        assert!(qe_analytic_large_mu(200.0, 2.0, 1.0, 0.5) < 1e-40);
        // critical point s = 0: e^{-t/2}(1 + t/2 + t^2/8)
        let t = 3.0;
        let exact = (-t / 2.0f64).exp() * (1.0 + t / 2.0 + t * t / 8.0) * 0.5;
        assert_abs_diff_eq!(qe_analytic_large_mu(t, 0.5, 1.0, 0.5), exact, epsilon = 1e-14);
        // continuity across the critical point
        let below = qe_analytic_large_mu(t, 0.5 - 1e-7, 1.0, 0.5);
        let above = qe_analytic_large_mu(t, 0.5 + 1e-7, 1.0, 0.5);
        assert!((below - above).abs() < 1e-7);
        // overdamped branch stays in [0, prior]
        for k in 0..50 {
            let v = qe_analytic_large_mu(k as f64 * 0.4, 0.2, 1.0, 0.5);
            assert!((0.0..=0.5).contains(&v));
        }
    }

    /// RK4 of the unnormalized two-level no-jump equation
    /// `d rho/dt = -i (H_eff rho - rho H_eff^dag)`.
    fn no_jump_survival(omega: f64, gamma: f64, t: f64) -> f64 {
        let h_eff = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(omega / 2.0, 0.0), c(omega / 2.0, 0.0), c(0.0, -gamma / 2.0)]);
        let f = |r: &DMatrix<C64>| (&h_eff * r - r * h_eff.adjoint()) * c(0.0, -1.0);
        let mut rho = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let n = 20_000;
        let dt = t / n as f64;
        for _ in 0..n {
            let k1 = f(&rho);
            let k2 = f(&(&rho + &k1 * c(dt / 2.0, 0.0)));
            let k3 = f(&(&rho + &k2 * c(dt / 2.0, 0.0)));
            let k4 = f(&(&rho + &k3 * c(dt, 0.0)));
            rho += (k1 + (k2 + k3) * c(2.0, 0.0) + k4) * c(dt / 6.0, 0.0);
        }
        rho.trace().re
    }

    #[test]
    fn analytic_error_matches_no_jump_oracle() {
        let oracle = 0.5 * no_jump_survival(2.0, 1.0, 2.0);
        assert_abs_diff_eq!(qe_analytic_large_mu(2.0, 2.0, 1.0, 0.5), oracle, epsilon = 1e-6);
        for (omega, t) in [(0.3, 4.0), (0.5, 1.5), (1.0, 7.0)] {
            let oracle = 0.5 * no_jump_survival(omega, 1.0, t);
            assert_abs_diff_eq!(qe_analytic_large_mu(t, omega, 1.0, 0.5), oracle, epsilon = 1e-6);
        }
    }

    /// Two-level emitter `H = (w/2) sigma_x`, counted decay `sqrt(g) sigma_-`.
    fn toy_model(omega: f64, gamma: f64) -> ModelSpec {
        let space = Arc::new(HilbertSpace::single("emitter", 2));
        let h = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(omega / 2.0, 0.0), c(omega / 2.0, 0.0), c(0.0, 0.0)]);
        let lower = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(gamma.sqrt(), 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        ModelSpec::new(
            space.clone(),
            Operator::new(space.clone(), h).unwrap(),
            Vec::new(),
            vec![MonitoredJump {
                name: "counter".into(),
                operator: Operator::new(space, lower).unwrap(),
                detector: 0,
                efficiency: 1.0,
            }],
            Vec::new(),
        )
        .unwrap()
    }

    #[test]
    fn filter_matches_brute_force_product() {
        for integrator in [Integrator::FirstOrder, Integrator::Exponential] {
            check_brute_force_product(integrator);
        }
    }

    fn check_brute_force_product(integrator: Integrator) {
        let model = toy_model(1.3, 1.0);
        let space = model.space().clone();
        let dt = 0.05;
        let sim = Simulator::new(&model, TimeGrid::from_steps(dt, 10).unwrap(), integrator).unwrap();
        let mut record = DetectionRecord::new(dt, 10, vec![0]);
        record.push(3, 0).unwrap();
        record.push(7, 0).unwrap();
        let ground = DensityMatrix::basis_state(space.clone(), 0).unwrap();
        let plus = DensityMatrix::pure(space.clone(), &nalgebra::DVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)])).unwrap();
        let hyps = vec![Hypothesis::new("g", ground.clone(), 0.3).unwrap(), Hypothesis::new("p", plus.clone(), 0.7).unwrap()];
        let trace = bayesian_filter(&sim, &record, &hyps, 1).unwrap();

        // hand-rolled: unnormalized Kraus products M_k ... M_1 rho M_1^dag ...
        let h = model.hamiltonian().into_matrix();
        let cm = model.monitored()[0].operator.matrix().clone();
        let generator = (h - cm.adjoint() * &cm * c(0.0, 0.5)) * c(0.0, -dt);
        let m0 = match integrator {
            Integrator::FirstOrder => DMatrix::identity(2, 2) + generator,
            Integrator::Exponential => generator.exp(),
        };
        let weight = |rho0: &DMatrix<C64>| {
            let mut prob = 1.0;
            let mut rho = rho0.clone();
            for k in 0..10 {
                let next = if record.event_at(k).is_some() {
                    let p = (cm.adjoint() * &cm * &rho).trace().re * dt;
                    prob *= p;
                    &cm * &rho * cm.adjoint()
                } else {
                    let p = 1.0 - (cm.adjoint() * &cm * &rho).trace().re * dt;
                    prob *= p;
                    &m0 * &rho * m0.adjoint()
                };
                rho = &next / next.trace();
            }
            prob
        };
        let w0 = 0.3 * weight(ground.matrix());
        let w1 = 0.7 * weight(plus.matrix());
        let expected = w1 / (w0 + w1);
        assert_abs_diff_eq!(trace.final_posteriors()[1], expected, epsilon = 1e-12);
        assert_eq!(trace.times.len(), 11);
        assert_eq!(classify(&trace), Decision::Unique(if expected > 0.5 { 1 } else { 0 }));
    }

    #[test]
    fn identical_hypotheses_stay_at_priors() {
        let model = build_direct_drive_model(&DirectDriveParams::default()).unwrap();
        let sim = Simulator::new(&model, TimeGrid::new(2.0, 1e-3).unwrap(), Integrator::default()).unwrap();
        let rho = DensityMatrix::basis_state(readout_space(), readout_index(Q1, DOWN)).unwrap();
        let hyps = vec![Hypothesis::new("a", rho.clone(), 0.5).unwrap(), Hypothesis::new("b", rho, 0.5).unwrap()];
        let record = DetectionRecord::new(1e-3, 2000, vec![0]);
        let trace = bayesian_filter(&sim, &record, &hyps, 100).unwrap();
        for p in &trace.probabilities {
            assert_eq!(p, &vec![0.5, 0.5]);
        }
        assert!(matches!(classify(&trace), Decision::Tie(_)));
    }

    #[test]
    fn single_click_excludes_blockaded_hypothesis() {
        // with the readout far off resonance, h0 can still click with tiny
        // probability; a zero-rate model makes the exclusion exact
        let model = build_direct_drive_model(&DirectDriveParams { mu: 100.0, ..Default::default() }).unwrap();
        let sim = Simulator::new(&model, TimeGrid::new(1.0, 1e-3).unwrap(), Integrator::default()).unwrap();
        let hyps = readout_hypotheses(0.5).unwrap();
        let mut record = DetectionRecord::new(1e-3, 1000, vec![0]);
        record.push(800, 0).unwrap();
        let trace = bayesian_filter(&sim, &record, &hyps, 1000).unwrap();
        assert!(trace.final_posteriors()[1] > 0.995, "{:?}", trace.final_posteriors());

        let dark = toy_model(0.0, 1.0);
        let space = dark.space().clone();
        let sim = Simulator::new(&dark, TimeGrid::from_steps(0.01, 20).unwrap(), Integrator::default()).unwrap();
        let hyps = vec![
            Hypothesis::new("ground", DensityMatrix::basis_state(space.clone(), 0).unwrap(), 0.5).unwrap(),
            Hypothesis::new("excited", DensityMatrix::basis_state(space, 1).unwrap(), 0.5).unwrap(),
        ];
        let mut record = DetectionRecord::new(0.01, 20, vec![0]);
        record.push(5, 0).unwrap();
        let trace = bayesian_filter(&sim, &record, &hyps, 1).unwrap();
        assert_eq!(trace.final_posteriors(), &[0.0, 1.0]);
        assert_eq!(trace.log_likelihoods.last().unwrap()[0], f64::NEG_INFINITY);
    }

    #[test]
    fn impossible_record_is_an_error() {
        let dark = toy_model(0.0, 1.0);
        let space = dark.space().clone();
        let sim = Simulator::new(&dark, TimeGrid::from_steps(0.01, 5).unwrap(), Integrator::default()).unwrap();
        let hyps = vec![Hypothesis::new("ground", DensityMatrix::basis_state(space, 0).unwrap(), 1.0).unwrap()];
        let mut record = DetectionRecord::new(0.01, 5, vec![0]);
        record.push(2, 0).unwrap();
        assert!(matches!(bayesian_filter(&sim, &record, &hyps, 1), Err(InferenceError::ImpossibleRecord(2))));
    }

    #[test]
    fn bad_priors_rejected() {
        let mut hyps = readout_hypotheses(0.5).unwrap();
        hyps[0].prior = 0.7;
        let model = build_direct_drive_model(&DirectDriveParams::default()).unwrap();
        let sim = Simulator::new(&model, TimeGrid::new(1.0, 1e-3).unwrap(), Integrator::default()).unwrap();
        assert!(matches!(BayesFilter::new(&sim, &hyps), Err(InferenceError::Priors(_))));
        assert!(matches!(estimate_qe(&sim, &readout_hypotheses(0.5).unwrap(), 10, 0, 1, Binning::Unit), Err(InferenceError::TooFewTrajectories { .. })));
    }

    #[test]
    fn count_error_oracles() {
        let a = [0u32, 0, 1, 1];
        let b = [1u32, 1, 2, 2];
        // unit bins: P_a = (.5,.5,0), P_b = (0,.5,.5); (1/2) sum min = 0.25
        assert_abs_diff_eq!(count_classifier_error(&[&a, &b], &[0.5, 0.5], Binning::Unit), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(count_classifier_error(&[&a, &a], &[0.5, 0.5], Binning::Unit), 0.5, epsilon = 1e-15);
        let far = [9u32, 9, 9, 9];
        assert_eq!(count_classifier_error(&[&a, &far], &[0.5, 0.5], Binning::FreedmanDiaconis), 0.0);
        // unequal priors: always choosing h1 errs with probability 0.2
        assert_abs_diff_eq!(count_classifier_error(&[&a, &a], &[0.2, 0.8], Binning::Unit), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn freedman_diaconis_width() {
        let pooled: Vec<u32> = (0..1000).collect();
        // IQR = 499.5, n^(1/3) = 10 -> 99.9 -> 100
        assert_eq!(count_bin_width(&[&pooled], Binning::FreedmanDiaconis), 100);
        assert_eq!(count_bin_width(&[&[3, 3, 3]], Binning::FreedmanDiaconis), 1);
    }

    #[test]
    fn lindblad_oracle_preserves_trace() {
        let model = build_direct_drive_model(&DirectDriveParams { gamma_decay: 0.05, ..Default::default() }).unwrap();
        let rho = DensityMatrix::basis_state(readout_space(), readout_index(Q1, DOWN)).unwrap();
        let series = lindblad_oracle(&model, &rho, TimeGrid::new(30.0, 1e-2).unwrap(), 100).unwrap();
        for s in &series.states {
            assert!((s.trace() - 1.0).abs() < 1e-8);
        }
        assert_eq!(series.times.last(), Some(&30.0));
    }

    #[test]
    fn lindblad_oracle_without_rates_is_unitary() {
        let m = build_direct_drive_model(&DirectDriveParams::default()).unwrap();
        let closed = ModelSpec::new(m.space().clone(), m.hamiltonian(), Vec::new(), Vec::new(), Vec::new()).unwrap();
        let rho = DensityMatrix::basis_state(readout_space(), readout_index(Q1, DOWN)).unwrap();
        let series = lindblad_oracle(&closed, &rho, TimeGrid::new(2.0, 1e-3).unwrap(), 2000).unwrap();
        let u = (m.hamiltonian().matrix() * c(0.0, -2.0)).exp();
        let exact = &u * rho.matrix() * u.adjoint();
        assert!((series.states[1].matrix() - exact).camax() < 1e-10);
    }

    #[test]
    fn steady_state_matches_click_rate_formula() {
        for omega in [0.5, 2.0, 4.0] {
            let toy = toy_model(omega, 1.0);
            let ss = steady_state(&toy).unwrap();
            let excited = ss.matrix()[(1, 1)].re;
            assert_abs_diff_eq!(excited, omega * omega / (1.0 + 2.0 * omega * omega), epsilon = 1e-12);
        }
        // the full readout model has one steady state per qubit level
        let full = build_direct_drive_model(&DirectDriveParams::default()).unwrap();
        assert!(matches!(steady_state(&full), Err(InferenceError::NonUniqueSteadyState)));
        // its long-time state from |1, down> reproduces the same population
        let rho = DensityMatrix::basis_state(readout_space(), readout_index(Q1, DOWN)).unwrap();
        let series = lindblad_oracle(&full, &rho, TimeGrid::new(40.0, 1e-2).unwrap(), 4000).unwrap();
        let last = series.states.last().unwrap();
        // the t = 0 pi pulse leaves |1> untouched
        assert_abs_diff_eq!(last.matrix()[(readout_index(Q1, UP), readout_index(Q1, UP))].re, 4.0 / 9.0, epsilon = 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn posteriors_normalized_on_random_records(
            clicks in proptest::collection::btree_set(0usize..400, 0..12),
            prior1 in 0.05f64..0.95,
        ) {
            let model = build_direct_drive_model(&DirectDriveParams { mu: 1.25, ..Default::default() }).unwrap();
            let sim = Simulator::new(&model, TimeGrid::new(0.4, 1e-3).unwrap(), Integrator::default()).unwrap();
            // a click is impossible at t = 0 and right after another click,
            // when the readout ion is in |down>
            let mut record = DetectionRecord::new(1e-3, 400, vec![0]);
            let mut last = 0;
            for s in clicks {
                if s >= last + 2 {
                    record.push(s, 0).unwrap();
                    last = s;
                }
            }
            let trace = bayesian_filter(&sim, &record, &readout_hypotheses(prior1).unwrap(), 7).unwrap();
            for p in &trace.probabilities {
                let sum: f64 = p.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }
    }
}
