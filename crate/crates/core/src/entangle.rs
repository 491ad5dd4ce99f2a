//! Heralded entanglement of two remote qubits by counting the beam-splitter
//! mixed fluorescence of their readout ions.
//!
//! Both qubits start in `(|0> + |1>)/sqrt(2)` with the readouts in `|down>`.
//! A pi pulse maps `|0> -> |e>` on both, the readout drives are switched off
//! after the probing window, the readouts relax, and a final pi pulse maps
//! `|e> -> |0>`. Bell populations between the two pulses are reported in the
//! run frame, which identifies `|e>` with `|0>`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rand::Rng;
use thiserror::Error;

use crate::ensemble::{stream_rng, try_par_map};
use crate::models::{
    build_two_cavity_model, two_cavity_index, two_cavity_space, ModelError, TwoCavityParams, DETECTOR_MINUS,
    DETECTOR_PLUS, DOWN, Q0, Q1, QE,
};
use crate::record::DetectionRecord;
use crate::quantum::{DensityMatrix, Operator, QuantumError};
use crate::trajectory::{Integrator, Observable, SimulationError, Simulator, TimeGrid};

/// Default step of entanglement runs, in units of `1/gamma`.
pub const DEFAULT_ENTANGLE_DT: f64 = 1e-2;
/// Default readout relaxation window after the drives are switched off.
pub const DEFAULT_RELAXATION: f64 = 5.0;
/// Fidelity below which the largest Bell population does not herald.
pub const HERALD_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EntangleError {
    #[error("invalid protocol: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

/// Qubit frame in which Bell populations are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    /// Qubit levels `|0>, |1>`.
    Qubit,
    /// `|e>` stands in for `|0>` while the pi pulse is in effect.
    Run,
}

/// The four Bell-type states with both readouts in `|down>`:
/// `|00>`, `|11>`, `(|01> + |10>)/sqrt(2)`, `(|01> - |10>)/sqrt(2)`.
#[derive(Clone, Debug)]
pub struct BellBasis {
    frame: Frame,
    vectors: [DVector<C64>; 4],
}

impl BellBasis {
    pub fn new(frame: Frame) -> Self {
        let zero = match frame {
            Frame::Qubit => Q0,
            Frame::Run => QE,
        };
        let ket = |a: usize, b: usize| {
            let mut v = DVector::zeros(36);
            v[two_cavity_index(a, DOWN, b, DOWN)] = C64::new(1.0, 0.0);
            v
        };
        let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let vectors = [
            ket(zero, zero),
            ket(Q1, Q1),
            (ket(zero, Q1) + ket(Q1, zero)) * s,
            (ket(zero, Q1) - ket(Q1, zero)) * s,
        ];
        Self { frame, vectors }
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn vector(&self, i: usize) -> &DVector<C64> {
        &self.vectors[i]
    }

    pub fn projector(&self, i: usize) -> Operator {
        Operator::outer(two_cavity_space(), &self.vectors[i], &self.vectors[i]).expect("dimension 36")
    }

    /// `Tr(rho |psi_i><psi_i|)` for `i = 1..4`.
    pub fn populations(&self, rho: &DensityMatrix) -> [f64; 4] {
        std::array::from_fn(|i| rho.population(&self.vectors[i]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeraldLabel {
    Psi1,
    Psi2,
    Psi3,
    Psi4,
    Reject,
}

impl HeraldLabel {
    pub fn from_index(i: usize) -> Self {
        [Self::Psi1, Self::Psi2, Self::Psi3, Self::Psi4][i]
    }

    pub fn index(self) -> Option<usize> {
        match self {
            Self::Psi1 => Some(0),
            Self::Psi2 => Some(1),
            Self::Psi3 => Some(2),
            Self::Psi4 => Some(3),
            Self::Reject => None,
        }
    }

    pub fn is_entangled(self) -> bool {
        matches!(self, Self::Psi3 | Self::Psi4)
    }
}

impl fmt::Display for HeraldLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Psi1 => "psi1",
            Self::Psi2 => "psi2",
            Self::Psi3 => "psi3",
            Self::Psi4 => "psi4",
            Self::Reject => "reject",
        })
    }
}

impl FromStr for HeraldLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "psi1" => Ok(Self::Psi1),
            "psi2" => Ok(Self::Psi2),
            "psi3" => Ok(Self::Psi3),
            "psi4" => Ok(Self::Psi4),
            "reject" => Ok(Self::Reject),
            other => Err(format!("unknown herald label `{other}`")),
        }
    }
}

/// Label read off the final populations: the largest one if it reaches
/// [`HERALD_THRESHOLD`], otherwise a rejection.
pub fn herald_label(populations: &[f64; 4]) -> HeraldLabel {
    let (best, p) = populations
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
    if p >= HERALD_THRESHOLD {
        HeraldLabel::from_index(best)
    } else {
        HeraldLabel::Reject
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub mu: f64,
    pub omega_rd: f64,
    pub gamma: f64,
    /// Probability that an emitted photon is counted.
    pub detector_efficiency: f64,
    /// Total duration `T`; the final pi pulses act at `T`.
    pub t_final: f64,
    /// Drive switch-off time; `T - DEFAULT_RELAXATION` when unset.
    pub drive_off: Option<f64>,
    pub dt: f64,
    pub integrator: Integrator,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            mu: 5.0,
            omega_rd: 2.0,
            gamma: 1.0,
            detector_efficiency: 1.0,
            t_final: 25.0,
            drive_off: None,
            dt: DEFAULT_ENTANGLE_DT,
            integrator: Integrator::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn drive_off_time(&self) -> f64 {
        self.drive_off.unwrap_or(self.t_final - DEFAULT_RELAXATION)
    }

    pub fn validate(&self) -> Result<(), EntangleError> {
        let off = self.drive_off_time();
        if !(off >= 0.0 && off < self.t_final) {
            return Err(EntangleError::InvalidConfig(format!(
                "drive-off time {off} must lie in [0, T = {})",
                self.t_final
            )));
        }
        Ok(())
    }
}

/// Result of one heralding run.
#[derive(Clone, Debug, PartialEq)]
pub struct HeraldOutcome {
    pub run_id: usize,
    pub record: DetectionRecord,
    pub n_plus_clicks: usize,
    pub n_minus_clicks: usize,
    /// Final Bell populations `p_1..p_4`.
    pub populations: [f64; 4],
    /// `max(p_3, p_4)` of the conditioned final state.
    pub fidelity: f64,
    /// `Tr(rho_q^2)` of the final two-qubit state, readouts traced out.
    pub purity: f64,
    pub heralded_label: HeraldLabel,
    /// `psi4` for an odd number of `chi_-` clicks, `psi3` for an even one.
    pub parity_label: HeraldLabel,
    /// Largest run-frame `p_4` seen before the first `chi_-` click.
    pub max_p4_before_minus: f64,
    /// Largest exchange-antisymmetric weight `Tr(rho (1 - SWAP)/2)` before
    /// the first `chi_-` click.
    pub max_antisymmetric_before_minus: f64,
}

/// Bell populations sampled along one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BellTrace {
    pub times: Vec<f64>,
    pub populations: Vec<[f64; 4]>,
}

/// The protocol compiled for repeated runs.
#[derive(Clone, Debug)]
pub struct Protocol {
    config: ProtocolConfig,
    sim: Simulator,
    rho0: DensityMatrix,
    final_step: usize,
    run_frame: [Observable; 4],
    qubit_frame: [Observable; 4],
    antisymmetric: Observable,
}

impl Protocol {
    pub fn new(config: ProtocolConfig) -> Result<Self, EntangleError> {
        config.validate()?;
        let model = build_two_cavity_model(&TwoCavityParams {
            mu: config.mu,
            omega_rd: config.omega_rd,
            gamma: config.gamma,
            detector_efficiency: config.detector_efficiency,
            drive_off: Some(config.drive_off_time()),
            final_pulse: Some(config.t_final),
        })?;
        let grid = TimeGrid::new(config.t_final, config.dt)?;
        let sim = Simulator::new(&model, grid, config.integrator)?;
        let mut psi = DVector::zeros(36);
        for a in [Q0, Q1] {
            for b in [Q0, Q1] {
                psi[two_cavity_index(a, DOWN, b, DOWN)] = C64::new(0.5, 0.0);
            }
        }
        let rho0 = DensityMatrix::pure(two_cavity_space(), &psi)?;
        let compile = |basis: &BellBasis| -> Result<[Observable; 4], SimulationError> {
            let obs = (0..4).map(|i| sim.observable(&basis.projector(i))).collect::<Result<Vec<_>, _>>()?;
            Ok(obs.try_into().expect("four projectors"))
        };
        let run_frame = compile(&BellBasis::new(Frame::Run))?;
        let qubit_frame = compile(&BellBasis::new(Frame::Qubit))?;
        let identity = Operator::identity(two_cavity_space());
        let antisym = (&identity - &crate::models::swap_operator()).scale_real(0.5);
        let antisymmetric = sim.observable(&antisym)?;
        let final_step = grid.step_of(config.t_final);
        Ok(Self { config, sim, rho0, final_step, run_frame, qubit_frame, antisymmetric })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn initial_state(&self) -> &DensityMatrix {
        &self.rho0
    }

    /// One run driven by `rng`; Bell populations are sampled every `stride`
    /// steps when `stride > 0`.
    pub fn run<R: Rng + ?Sized>(
        &self,
        run_id: usize,
        rng: &mut R,
        stride: usize,
    ) -> Result<(HeraldOutcome, BellTrace), EntangleError> {
        let mut run = self.sim.start(&self.rho0)?;
        let mut trace = BellTrace::default();
        let mut n_plus = 0;
        let mut n_minus = 0;
        let mut max_p4 = 0.0f64;
        let mut max_anti = 0.0f64;
        loop {
            let k = run.step_index();
            if n_minus == 0 {
                max_p4 = max_p4.max(run.expectation(&self.run_frame[3]));
                max_anti = max_anti.max(run.expectation(&self.antisymmetric));
            }
            if stride > 0 && (k % stride == 0 || run.is_finished()) {
                let basis = if k >= self.final_step { &self.qubit_frame } else { &self.run_frame };
                trace.times.push(run.time());
                trace.populations.push(std::array::from_fn(|i| run.expectation(&basis[i])));
            }
            if run.is_finished() {
                break;
            }
            match run.advance(rng)? {
                Some(DETECTOR_PLUS) => n_plus += 1,
                Some(DETECTOR_MINUS) => n_minus += 1,
                _ => {}
            }
        }
        let (record, state) = run.finish()?;
        let populations = BellBasis::new(Frame::Qubit).populations(&state);
        let qubits = state.partial_trace(&[0, 2])?;
        let outcome = HeraldOutcome {
            run_id,
            record,
            n_plus_clicks: n_plus,
            n_minus_clicks: n_minus,
            populations,
            fidelity: populations[2].max(populations[3]),
            purity: qubits.purity(),
            heralded_label: herald_label(&populations),
            parity_label: if n_minus % 2 == 1 { HeraldLabel::Psi4 } else { HeraldLabel::Psi3 },
            max_p4_before_minus: max_p4,
            max_antisymmetric_before_minus: max_anti,
        };
        Ok((outcome, trace))
    }

    /// Runs `n` trajectories; run `i` uses stream `(seed, 0, i)`.
    pub fn run_ensemble(&self, n: usize, seed: u64) -> Result<Vec<HeraldOutcome>, EntangleError> {
        try_par_map(n, |i| {
            let mut rng = stream_rng(seed, 0, i as u32);
            self.run(i, &mut rng, 0).map(|(o, _)| o)
        })
    }
}

/// A single heralding run.
pub fn run_protocol<R: Rng + ?Sized>(config: &ProtocolConfig, rng: &mut R) -> Result<HeraldOutcome, EntangleError> {
    Protocol::new(config.clone())?.run(0, rng, 0).map(|(o, _)| o)
}

/// Accepts a run iff its conditioned-state fidelity reaches `threshold`.
pub fn herald_decision(outcome: &HeraldOutcome, threshold: f64) -> bool {
    outcome.fidelity >= threshold
}

/// Fraction of outcomes with fidelity at least `threshold`.
pub fn fraction_at_least(outcomes: &[HeraldOutcome], threshold: f64) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| herald_decision(o, threshold)).count() as f64 / outcomes.len() as f64
}

/// Fidelity statistics of one `(efficiency, T)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub detector_efficiency: f64,
    pub t_final: f64,
    pub outcomes: Vec<HeraldOutcome>,
}

impl SweepCell {
    /// `(f, fraction of runs with fidelity >= f)` over `thresholds`.
    pub fn cumulative(&self, thresholds: &[f64]) -> Vec<(f64, f64)> {
        thresholds.iter().map(|&f| (f, fraction_at_least(&self.outcomes, f))).collect()
    }
}

/// Runs `n` trajectories for every `(efficiency, T)` pair of the grid,
/// with the remaining parameters taken from `base`. All cells use the same
/// streams `(seed, 0, 0..n)`.
pub fn fidelity_sweep(
    base: &ProtocolConfig,
    efficiencies: &[f64],
    durations: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<SweepCell>, EntangleError> {
    let mut cells = Vec::with_capacity(efficiencies.len() * durations.len());
    for &eta in efficiencies {
        for &t in durations {
            let config = ProtocolConfig { detector_efficiency: eta, t_final: t, drive_off: None, ..base.clone() };
            let protocol = Protocol::new(config)?;
            cells.push(SweepCell { detector_efficiency: eta, t_final: t, outcomes: protocol.run_ensemble(n, seed)? });
        }
    }
    Ok(cells)
}

/// Fidelity thresholds `0, 0.05, ..., 1`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.05).collect()
}
