//! Photon-counting trajectories by the jump/no-jump unraveling.
//!
//! Each step of length `dt` draws one uniform number `u` and compares it with
//! the cumulative ladder of click probabilities
//! `dp_k = eta_k Tr(C_k rho C_k^dag) dt`. A click on detector `k` maps
//! `rho -> C_k rho C_k^dag / Tr(.)`; otherwise the state takes one no-jump
//! step
//!
//! ```text
//! rho -> M0 rho M0^dag + sum_n w_n S_n rho S_n^dag,   M0 ~ 1 - i H_eff dt
//! H_eff = H - (i/2) sum_all C^dag C
//! ```
//!
//! where the `S_n` are unmonitored channels (weight `dt`) and monitored
//! channels with missed detections (weight `(1 - eta) dt`), followed by
//! renormalization. Writing the step in this Kraus form keeps the state
//! positive; it agrees with the Euler expansion of the no-jump master
//! equation to first order in `dt`. The default [`Integrator::Exponential`]
//! uses the exact no-jump propagator `M0 = exp(-i H_eff dt)` instead, which
//! stays accurate when the blockade shift makes `mu dt` sizeable.
//!
//! Pulse events are pinned to step `round(t / dt)` and applied before that
//! step runs; events at `n_steps` are applied after the last step. Sampled
//! observables at `t_k = k dt` include the events of step `k`.
//!
//! Models that keep pure states pure (unit efficiencies, no unmonitored
//! channels) started from a rank-one state are propagated as state vectors.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::Rng;
use thiserror::Error;

use crate::ensemble::{par_sum, stream_rng};
use crate::models::{ModelError, ModelSpec, PulseAction};
use crate::quantum::{DensityMatrix, HilbertSpace, Operator, QuantumError, HERMITICITY_TOL, TRACE_TOL};
use crate::record::{DetectionRecord, RecordError};
use crate::sparse::{Scratch, SparseOp};

/// Default step in units of `1/gamma`.
pub const DEFAULT_DT: f64 = 1e-3;
/// Upper bound on the total click probability of one step.
pub const MAX_JUMP_PROBABILITY: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("step {step}: total click probability {probability:.4} exceeds {MAX_JUMP_PROBABILITY}; reduce dt")]
    StepSize { step: usize, probability: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("pulse at t = {time} lies outside [0, {t_final}]")]
    ScheduleOutOfRange { time: f64, t_final: f64 },
    #[error("detector {0} is attached to more than one jump operator")]
    DuplicateDetector(u16),
    #[error("trajectory already reached the end of the grid")]
    Finished,
    #[error("numerical breakdown at step {step}: {reason}")]
    Breakdown { step: usize, reason: String },
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// No-jump propagator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Integrator {
    /// `M0 = 1 - i H_eff dt`. Unstable once `|H| dt` is not small: each step
    /// inflates components by `1 + (E dt)^2` for an energy `E`.
    FirstOrder,
    /// `M0 = exp(-i H_eff dt)`.
    #[default]
    Exponential,
}

/// Uniform grid `t_k = k dt`, `k = 0..=n_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// Grid covering `[0, t_final]` with `round(t_final / dt)` steps.
    pub fn new(t_final: f64, dt: f64) -> Result<Self, SimulationError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SimulationError::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if !(t_final >= 0.0) || !t_final.is_finite() {
            return Err(SimulationError::InvalidGrid(format!("T must be non-negative, got {t_final}")));
        }
        let n = (t_final / dt).round();
        if n > u32::MAX as f64 {
            return Err(SimulationError::InvalidGrid("too many steps".into()));
        }
        Ok(Self { dt, n_steps: n as usize })
    }

    pub fn from_steps(dt: f64, n_steps: usize) -> Result<Self, SimulationError> {
        Self::new(0.0, dt).map(|g| Self { n_steps, ..g })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t_final(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Step index an event at time `t` is pinned to.
    pub fn step_of(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }
}

#[derive(Clone, Debug)]
struct Jump {
    op: SparseOp,
    /// `C^dag C`
    rate: SparseOp,
    efficiency: f64,
    detector: u16,
}

#[derive(Clone, Debug)]
enum Action {
    Unitary(SparseOp),
    Propagator(usize),
}

/// Observable compiled for repeated evaluation on running trajectories.
#[derive(Clone, Debug)]
pub struct Observable(SparseOp);

/// A [`ModelSpec`] compiled for a fixed grid and integrator.
#[derive(Clone, Debug)]
pub struct Simulator {
    space: Arc<HilbertSpace>,
    grid: TimeGrid,
    integrator: Integrator,
    jumps: Vec<Jump>,
    /// Missed-photon and unmonitored channels with their `dt`-scaled weights.
    sandwich: Vec<(SparseOp, f64)>,
    propagators: Vec<SparseOp>,
    initial_propagator: usize,
    events: Vec<(usize, Action)>,
    detectors: Vec<u16>,
    preserves_purity: bool,
}

impl Simulator {
    pub fn new(model: &ModelSpec, grid: TimeGrid, integrator: Integrator) -> Result<Self, SimulationError> {
        let d = model.dim();
        let dt = grid.dt();
        let mut detectors = Vec::new();
        let mut jumps = Vec::new();
        let mut sandwich = Vec::new();
        let mut decay = DMatrix::<C64>::zeros(d, d);
        for j in model.monitored() {
            if detectors.contains(&j.detector) {
                return Err(SimulationError::DuplicateDetector(j.detector));
            }
            detectors.push(j.detector);
            let m = j.operator.matrix();
            let rate = m.adjoint() * m;
            decay += &rate;
            jumps.push(Jump {
                op: SparseOp::from_dense(m),
                rate: SparseOp::from_dense(&rate),
                efficiency: j.efficiency,
                detector: j.detector,
            });
            if j.efficiency < 1.0 {
                sandwich.push((SparseOp::from_dense(m), (1.0 - j.efficiency) * dt));
            }
        }
        for op in model.unmonitored() {
            let m = op.matrix();
            decay += m.adjoint() * m;
            sandwich.push((SparseOp::from_dense(m), dt));
        }

        let compile = |amps: &[f64]| -> SparseOp {
            let h = model.hamiltonian_with(amps).into_matrix();
            let h_eff = h - &decay * C64::new(0.0, 0.5);
            let generator = h_eff * C64::new(0.0, -dt);
            let m0 = match integrator {
                Integrator::FirstOrder => DMatrix::identity(d, d) + generator,
                Integrator::Exponential => generator.exp(),
            };
            SparseOp::from_dense(&m0)
        };

        let mut amps = model.initial_amplitudes();
        let mut configs = vec![amps.clone()];
        let mut propagators = vec![compile(&amps)];
        let mut events = Vec::new();
        for event in model.schedule() {
            let step = grid.step_of(event.time);
            if step > grid.n_steps() {
                return Err(SimulationError::ScheduleOutOfRange { time: event.time, t_final: grid.t_final() });
            }
            let action = match &event.action {
                PulseAction::Unitary { operator, .. } => Action::Unitary(SparseOp::from_dense(operator.matrix())),
                PulseAction::SetDrive { term, value } => {
                    let idx = model.drive_index(term).ok_or_else(|| ModelError::UnknownDrive(term.clone()))?;
                    amps[idx] = *value;
                    let p = match configs.iter().position(|c| c == &amps) {
                        Some(p) => p,
                        None => {
                            configs.push(amps.clone());
                            propagators.push(compile(&amps));
                            configs.len() - 1
                        }
                    };
                    Action::Propagator(p)
                }
            };
            events.push((step, action));
        }

        Ok(Self {
            space: model.space().clone(),
            grid,
            integrator,
            jumps,
            sandwich,
            propagators,
            initial_propagator: 0,
            events,
            detectors,
            preserves_purity: model.preserves_purity(),
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn integrator(&self) -> Integrator {
        self.integrator
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn detectors(&self) -> &[u16] {
        &self.detectors
    }

    pub fn observable(&self, op: &Operator) -> Result<Observable, SimulationError> {
        if op.dim() != self.space.total_dim() {
            return Err(QuantumError::DimensionMismatch { left: op.dim(), right: self.space.total_dim() }.into());
        }
        Ok(Observable(SparseOp::from_dense(op.matrix())))
    }

    /// Starts a trajectory at `t = 0` with the events of step 0 applied.
    pub fn start(&self, rho0: &DensityMatrix) -> Result<Run<'_>, SimulationError> {
        let d = self.space.total_dim();
        if rho0.dim() != d {
            return Err(QuantumError::DimensionMismatch { left: rho0.dim(), right: d }.into());
        }
        rho0.validate_cheap()?;
        let state = match pure_vector(rho0) {
            Some(psi) if self.preserves_purity => State::Pure { psi, tmp: vec![C64::new(0.0, 0.0); d] },
            _ => State::Mixed {
                rho: rho0.matrix().as_slice().to_vec(),
                out: vec![C64::new(0.0, 0.0); d * d],
                scratch: Scratch::new(d),
            },
        };
        let mut run = Run {
            sim: self,
            state,
            step: 0,
            propagator: self.initial_propagator,
            next_event: 0,
            record: DetectionRecord::new(self.grid.dt(), self.grid.n_steps(), self.detectors.clone()),
            dp: vec![0.0; self.jumps.len()],
            last_log_prob: 0.0,
        };
        run.apply_events()?;
        Ok(run)
    }

    /// Samples one trajectory, recording `observables` every `stride` steps
    /// (and at the final time).
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rho0: &DensityMatrix,
        rng: &mut R,
        observables: &[Observable],
        stride: usize,
    ) -> Result<TrajectoryResult, SimulationError> {
        let stride = stride.max(1);
        let mut run = self.start(rho0)?;
        let mut series = ObservableSeries { times: Vec::new(), values: vec![Vec::new(); observables.len()] };
        let mut record_sample = |run: &Run| {
            series.times.push(run.time());
            for (v, o) in series.values.iter_mut().zip(observables) {
                v.push(run.expectation(o));
            }
        };
        if !observables.is_empty() {
            record_sample(&run);
        }
        while !run.is_finished() {
            run.advance(rng)?;
            if !observables.is_empty() && (run.step_index() % stride == 0 || run.is_finished()) {
                record_sample(&run);
            }
        }
        let (record, final_state) = run.finish()?;
        Ok(TrajectoryResult { record, final_state, observables: series })
    }
}

/// Rank-one check; returns the state vector of a pure `rho`.
fn pure_vector(rho: &DensityMatrix) -> Option<Vec<C64>> {
    if (rho.purity() - 1.0).abs() > 1e-12 {
        return None;
    }
    let m = rho.matrix();
    let d = m.nrows();
    let j = (0..d).max_by(|&a, &b| m[(a, a)].re.total_cmp(&m[(b, b)].re))?;
    let norm = m[(j, j)].re.sqrt();
    Some((0..d).map(|i| m[(i, j)] / norm).collect())
}

#[derive(Clone, Debug)]
enum State {
    Pure { psi: Vec<C64>, tmp: Vec<C64> },
    Mixed { rho: Vec<C64>, out: Vec<C64>, scratch: Scratch },
}

impl State {
    fn rate(&self, op: &SparseOp) -> f64 {
        match self {
            State::Pure { psi, .. } => op.quadratic_form(psi),
            State::Mixed { rho, .. } => op.trace_with(rho),
        }
    }

    /// Applies a Kraus-type update `rho -> A rho A^dag (+ extra)` and
    /// renormalizes.
    fn update(&mut self, a: &SparseOp, extra: &[(SparseOp, f64)]) -> Result<(), String> {
        match self {
            State::Pure { psi, tmp } => {
                a.apply_vec(psi, tmp);
                let norm = tmp.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err(format!("state norm {norm}"));
                }
                for (p, t) in psi.iter_mut().zip(tmp.iter()) {
                    *p = *t / norm;
                }
                Ok(())
            }
            State::Mixed { rho, out, scratch } => {
                out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
                a.sandwich_add(rho, 1.0, scratch, out);
                for (s, w) in extra {
                    s.sandwich_add(rho, *w, scratch, out);
                }
                let d = (out.len() as f64).sqrt() as usize;
                let tr: f64 = (0..d).map(|i| out[i * d + i].re).sum();
                if !(tr > 0.0) || !tr.is_finite() {
                    return Err(format!("state trace {tr}"));
                }
                // symmetrize and normalize
                for i in 0..d {
                    rho[i * d + i] = C64::new(out[i * d + i].re / tr, 0.0);
                    for j in i + 1..d {
                        let z = (out[i + j * d] + out[j + i * d].conj()) * (0.5 / tr);
                        rho[i + j * d] = z;
                        rho[j + i * d] = z.conj();
                    }
                }
                Ok(())
            }
        }
    }

    fn matrix(&self) -> DMatrix<C64> {
        match self {
            State::Pure { psi, .. } => {
                let v = DVector::from_column_slice(psi);
                &v * v.adjoint()
            }
            State::Mixed { rho, .. } => {
                let d = (rho.len() as f64).sqrt() as usize;
                DMatrix::from_column_slice(d, d, rho)
            }
        }
    }

    fn debug_check(&self) -> Result<(), String> {
        match self {
            State::Pure { psi, .. } => {
                let n: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
                if (n - 1.0).abs() > TRACE_TOL {
                    return Err(format!("norm {n}"));
                }
            }
            State::Mixed { rho, .. } => {
                let d = (rho.len() as f64).sqrt() as usize;
                let m = DMatrix::from_column_slice(d, d, rho);
                let herm = crate::quantum::hermiticity_error(&m);
                if herm > HERMITICITY_TOL {
                    return Err(format!("hermiticity error {herm:e}"));
                }
                let tr = m.trace().re;
                if (tr - 1.0).abs() > TRACE_TOL {
                    return Err(format!("trace {tr}"));
                }
                #[cfg(feature = "strict-checks")]
                {
                    let floor = crate::quantum::hermitian_eigenvalues(&m).min();
                    if floor < -crate::quantum::POSITIVITY_TOL {
                        return Err(format!("eigenvalue {floor:e}"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A trajectory in progress.
#[derive(Clone, Debug)]
pub struct Run<'a> {
    sim: &'a Simulator,
    state: State,
    step: usize,
    propagator: usize,
    next_event: usize,
    record: DetectionRecord,
    dp: Vec<f64>,
    last_log_prob: f64,
}

impl<'a> Run<'a> {
    /// Index `k` of the current time `t_k`; the next step to run.
    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.sim.grid.time(self.step)
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.sim.grid.n_steps()
    }

    pub fn is_pure_path(&self) -> bool {
        matches!(self.state, State::Pure { .. })
    }

    pub fn record(&self) -> &DetectionRecord {
        &self.record
    }

    /// Log-probability of the outcome of the most recent step.
    pub fn last_log_probability(&self) -> f64 {
        self.last_log_prob
    }

    /// `Re Tr(O rho)` on the current state.
    pub fn expectation(&self, o: &Observable) -> f64 {
        self.state.rate(&o.0)
    }

    pub fn state(&self) -> DensityMatrix {
        DensityMatrix::from_parts_unchecked(self.sim.space.clone(), self.state.matrix()).expect("dimension fixed")
    }

    /// Click probabilities `dp_k` of the coming step, in detector order.
    pub fn click_probabilities(&mut self) -> Result<&[f64], SimulationError> {
        self.compute_dp()?;
        Ok(&self.dp)
    }

    fn compute_dp(&mut self) -> Result<f64, SimulationError> {
        let dt = self.sim.grid.dt();
        let mut total = 0.0;
        for (p, j) in self.dp.iter_mut().zip(&self.sim.jumps) {
            *p = (j.efficiency * self.state.rate(&j.rate) * dt).max(0.0);
            total += *p;
        }
        if !(total < MAX_JUMP_PROBABILITY) {
            return Err(SimulationError::StepSize { step: self.step, probability: total });
        }
        Ok(total)
    }

    /// Runs one stochastic step and returns the clicked detector, if any.
    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<u16>, SimulationError> {
        if self.is_finished() {
            return Err(SimulationError::Finished);
        }
        let total = self.compute_dp()?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut fired = None;
        for (k, p) in self.dp.iter().enumerate() {
            acc += p;
            if u < acc {
                fired = Some(k);
                break;
            }
        }
        let event = fired.map(|k| self.sim.jumps[k].detector);
        self.last_log_prob = match fired {
            Some(k) => self.dp[k].ln(),
            None => (-total).ln_1p(),
        };
        self.evolve(fired)?;
        Ok(event)
    }

    /// Follows a prescribed step outcome and returns its log-probability.
    ///
    /// A click whose probability is exactly zero leaves the state untouched
    /// and returns `-inf`; such a trajectory is impossible and should not be
    /// advanced further.
    pub fn advance_conditioned(&mut self, event: Option<u16>) -> Result<f64, SimulationError> {
        if self.is_finished() {
            return Err(SimulationError::Finished);
        }
        let total = self.compute_dp()?;
        let (fired, logp) = match event {
            None => (None, (-total).ln_1p()),
            Some(det) => {
                let k = self
                    .sim
                    .jumps
                    .iter()
                    .position(|j| j.detector == det)
                    .ok_or(RecordError::UnknownDetector(det))?;
                if self.dp[k] <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                (Some(k), self.dp[k].ln())
            }
        };
        self.last_log_prob = logp;
        self.evolve(fired)?;
        Ok(logp)
    }

    fn evolve(&mut self, fired: Option<usize>) -> Result<(), SimulationError> {
        let step = self.step;
        let sim = self.sim;
        let result = match fired {
            Some(k) => {
                self.record.push(step, sim.jumps[k].detector)?;
                self.state.update(&sim.jumps[k].op, &[])
            }
            None => {
                let extra: &[(SparseOp, f64)] = match self.state {
                    State::Pure { .. } => &[],
                    State::Mixed { .. } => &sim.sandwich,
                };
                self.state.update(&sim.propagators[self.propagator], extra)
            }
        };
        result.map_err(|reason| SimulationError::Breakdown { step, reason })?;
        if cfg!(debug_assertions) {
            self.state.debug_check().map_err(|reason| SimulationError::Breakdown { step, reason })?;
        }
        self.step += 1;
        self.apply_events()
    }

    fn apply_events(&mut self) -> Result<(), SimulationError> {
        let sim = self.sim;
        while let Some((step, action)) = sim.events.get(self.next_event) {
            if *step != self.step {
                break;
            }
            match action {
                Action::Unitary(u) => self
                    .state
                    .update(u, &[])
                    .map_err(|reason| SimulationError::Breakdown { step: self.step, reason })?,
                Action::Propagator(p) => self.propagator = *p,
            }
            self.next_event += 1;
        }
        Ok(())
    }

    /// Ends the run and returns its record and final state. In debug builds
    /// the final state is checked for positivity.
    pub fn finish(self) -> Result<(DetectionRecord, DensityMatrix), SimulationError> {
        let state = self.state();
        if cfg!(debug_assertions) {
            state.validate()?;
        }
        Ok((self.record, state))
    }
}

/// Expectation values sampled along one trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    /// `values[i][k]` is observable `i` at `times[k]`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct TrajectoryResult {
    pub record: DetectionRecord,
    pub final_state: DensityMatrix,
    pub observables: ObservableSeries,
}

/// One no-jump-or-jump step from `rho` under the model's initial Hamiltonian
/// (the pulse schedule is ignored).
pub fn step<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    model: &ModelSpec,
    dt: f64,
    rng: &mut R,
) -> Result<(DensityMatrix, Option<u16>), SimulationError> {
    let model = ModelSpec::new(
        model.space().clone(),
        model.static_hamiltonian().clone(),
        model.drives().to_vec(),
        model.monitored().to_vec(),
        model.unmonitored().to_vec(),
    )?;
    let sim = Simulator::new(&model, TimeGrid::from_steps(dt, 1)?, Integrator::default())?;
    let mut run = sim.start(rho)?;
    let event = run.advance(rng)?;
    Ok((run.state(), event))
}

/// Samples one trajectory on `[0, t_final]`, recording `observables` at every
/// grid time.
pub fn sample_trajectory<R: Rng + ?Sized>(
    model: &ModelSpec,
    rho0: &DensityMatrix,
    t_final: f64,
    dt: f64,
    rng: &mut R,
    observables: &[Operator],
) -> Result<TrajectoryResult, SimulationError> {
    let sim = Simulator::new(model, TimeGrid::new(t_final, dt)?, Integrator::default())?;
    let compiled = observables.iter().map(|o| sim.observable(o)).collect::<Result<Vec<_>, _>>()?;
    sim.sample(rho0, rng, &compiled, 1)
}

/// Trajectory-averaged states at `t_k` for every `stride`-th step.
#[derive(Clone, Debug)]
pub struct StateSeries {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

/// Averages `n` conditioned trajectories; trajectory `i` uses stream
/// `(seed, 0, i)`.
pub fn ensemble_average(
    sim: &Simulator,
    rho0: &DensityMatrix,
    n: usize,
    seed: u64,
    stride: usize,
) -> Result<StateSeries, SimulationError> {
    if n == 0 {
        return Err(SimulationError::InvalidGrid("ensemble needs at least one trajectory".into()));
    }
    let stride = stride.max(1);
    let grid = sim.grid();
    let mut steps: Vec<usize> = (0..=grid.n_steps()).step_by(stride).collect();
    if *steps.last().expect("non-empty") != grid.n_steps() {
        steps.push(grid.n_steps());
    }
    let d = sim.space().total_dim();
    let zero = || vec![DMatrix::<C64>::zeros(d, d); steps.len()];
    let sums = par_sum(
        n,
        zero,
        |i, acc: &mut Vec<DMatrix<C64>>| {
            let mut rng = stream_rng(seed, 0, i as u32);
            let mut run = sim.start(rho0)?;
            let mut slot = 0;
            loop {
                if steps[slot] == run.step_index() {
                    acc[slot] += run.state.matrix();
                    slot += 1;
                }
                if run.is_finished() {
                    break;
                }
                run.advance(&mut rng)?;
            }
            Ok::<(), SimulationError>(())
        },
        |total, part| {
            for (t, p) in total.iter_mut().zip(part) {
                *t += p;
            }
        },
    )?;
    let scale = C64::new(1.0 / n as f64, 0.0);
    let states = sums
        .into_iter()
        .map(|m| DensityMatrix::from_parts_unchecked(sim.space().clone(), m * scale))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StateSeries { times: steps.iter().map(|&k| grid.time(k)).collect(), states })
}
