//! Hamiltonians, jump operators and pulse schedules for the readout and
//! entanglement experiments.
//!
//! All rates, times and amplitudes are in units of the readout ion's Purcell
//! rate `gamma`. The builders accept `gamma` explicitly so the operator
//! algebra can be checked symbolically, but every preset uses `gamma = 1`.
//!
//! Layout of the single-cavity space is `qubit(3) ⊗ readout(2)` with qubit
//! levels `|0>, |1>, |e>` and readout levels `|down>, |up>`; the two-cavity
//! space is `qubit_A ⊗ readout_A ⊗ qubit_B ⊗ readout_B`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::quantum::{tensor, HilbertSpace, Operator, QuantumError};

/// Qubit ground state `|0>`.
pub const Q0: usize = 0;
/// Qubit ground state `|1>`.
pub const Q1: usize = 1;
/// Qubit excited state `|e>`.
pub const QE: usize = 2;
/// Readout ground state.
pub const DOWN: usize = 0;
/// Readout excited state.
pub const UP: usize = 1;

/// Vacuum permittivity in F/m.
const EPSILON_0: f64 = 8.854_187_812_8e-12;
/// Reduced Planck constant in J s.
const HBAR: f64 = 1.054_571_817e-34;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter `{name}` must be {requirement}, got {value}")]
    InvalidParameter { name: &'static str, requirement: &'static str, value: f64 },
    #[error("operator `{0}` does not act on the model space")]
    ForeignOperator(String),
    #[error("Hamiltonian is not Hermitian (error {0:e})")]
    NonHermitian(f64),
    #[error("pulse `{label}` is not unitary (error {error:e})")]
    NonUnitary { label: String, error: f64 },
    #[error("schedule times must be non-decreasing and non-negative")]
    UnsortedSchedule,
    #[error("unknown drive term `{0}`")]
    UnknownDrive(String),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

fn require(name: &'static str, value: f64, ok: bool, requirement: &'static str) -> Result<(), ModelError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter { name, requirement, value })
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<(), ModelError> {
    require(name, value, value >= 0.0, "non-negative")
}

fn positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    require(name, value, value > 0.0, "positive")
}

fn efficiency(name: &'static str, value: f64) -> Result<(), ModelError> {
    require(name, value, (0.0..=1.0).contains(&value), "in [0, 1]")
}

/// Hamiltonian term `amplitude * generator` whose amplitude can be switched by
/// the pulse schedule.
#[derive(Clone, Debug)]
pub struct DriveTerm {
    pub name: String,
    pub generator: Operator,
    pub amplitude: f64,
}

/// Photon-counted jump operator.
#[derive(Clone, Debug)]
pub struct MonitoredJump {
    pub name: String,
    pub operator: Operator,
    pub detector: u16,
    /// Probability that an emitted photon produces a click.
    pub efficiency: f64,
}

#[derive(Clone, Debug)]
pub enum PulseAction {
    /// Instantaneous unitary applied to the state.
    Unitary { label: String, operator: Operator },
    /// Sets the amplitude of a named drive term.
    SetDrive { term: String, value: f64 },
}

#[derive(Clone, Debug)]
pub struct PulseEvent {
    pub time: f64,
    pub action: PulseAction,
}

impl PulseEvent {
    pub fn unitary(time: f64, label: impl Into<String>, operator: Operator) -> Self {
        Self { time, action: PulseAction::Unitary { label: label.into(), operator } }
    }

    pub fn set_drive(time: f64, term: impl Into<String>, value: f64) -> Self {
        Self { time, action: PulseAction::SetDrive { term: term.into(), value } }
    }
}

/// Full experiment definition: space, Hamiltonian, detectors, schedule.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    space: Arc<HilbertSpace>,
    static_hamiltonian: Operator,
    drives: Vec<DriveTerm>,
    monitored: Vec<MonitoredJump>,
    unmonitored: Vec<Operator>,
    schedule: Vec<PulseEvent>,
}

impl ModelSpec {
    pub fn new(
        space: Arc<HilbertSpace>,
        static_hamiltonian: Operator,
        drives: Vec<DriveTerm>,
        monitored: Vec<MonitoredJump>,
        unmonitored: Vec<Operator>,
    ) -> Result<Self, ModelError> {
        let d = space.total_dim();
        let check = |op: &Operator, name: &str| {
            if op.dim() != d {
                Err(ModelError::ForeignOperator(name.to_string()))
            } else {
                Ok(())
            }
        };
        check(&static_hamiltonian, "hamiltonian")?;
        for t in &drives {
            check(&t.generator, &t.name)?;
            non_negative("drive amplitude", t.amplitude.abs())?;
        }
        for j in &monitored {
            check(&j.operator, &j.name)?;
            efficiency("detector_efficiency", j.efficiency)?;
        }
        for (k, op) in unmonitored.iter().enumerate() {
            check(op, &format!("unmonitored[{k}]"))?;
        }
        let spec = Self { space, static_hamiltonian, drives, monitored, unmonitored, schedule: Vec::new() };
        let herm = spec.hamiltonian().hermiticity_error();
        if herm > 1e-12 {
            return Err(ModelError::NonHermitian(herm));
        }
        for t in &spec.drives {
            let e = t.generator.hermiticity_error();
            if e > 1e-12 {
                return Err(ModelError::NonHermitian(e));
            }
        }
        Ok(spec)
    }

    /// Appends a pulse event, keeping the schedule time-ordered.
    pub fn with_event(mut self, event: PulseEvent) -> Result<Self, ModelError> {
        if !(event.time >= 0.0) || !event.time.is_finite() {
            return Err(ModelError::UnsortedSchedule);
        }
        match &event.action {
            PulseAction::Unitary { label, operator } => {
                if operator.dim() != self.space.total_dim() {
                    return Err(ModelError::ForeignOperator(label.clone()));
                }
                let err = operator.unitarity_error();
                if err > 1e-10 {
                    return Err(ModelError::NonUnitary { label: label.clone(), error: err });
                }
            }
            PulseAction::SetDrive { term, value } => {
                if !self.drives.iter().any(|d| &d.name == term) {
                    return Err(ModelError::UnknownDrive(term.clone()));
                }
                require("drive amplitude", *value, true, "finite")?;
            }
        }
        // stable insertion: equal times keep insertion order
        let pos = self.schedule.iter().position(|e| e.time > event.time).unwrap_or(self.schedule.len());
        self.schedule.insert(pos, event);
        Ok(self)
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    pub fn static_hamiltonian(&self) -> &Operator {
        &self.static_hamiltonian
    }

    pub fn drives(&self) -> &[DriveTerm] {
        &self.drives
    }

    pub fn monitored(&self) -> &[MonitoredJump] {
        &self.monitored
    }

    pub fn unmonitored(&self) -> &[Operator] {
        &self.unmonitored
    }

    pub fn schedule(&self) -> &[PulseEvent] {
        &self.schedule
    }

    pub fn drive_index(&self, name: &str) -> Option<usize> {
        self.drives.iter().position(|d| d.name == name)
    }

    /// Initial drive amplitudes, in the order of [`Self::drives`].
    pub fn initial_amplitudes(&self) -> Vec<f64> {
        self.drives.iter().map(|d| d.amplitude).collect()
    }

    /// Hamiltonian at the initial drive amplitudes.
    pub fn hamiltonian(&self) -> Operator {
        self.hamiltonian_with(&self.initial_amplitudes())
    }

    pub fn hamiltonian_with(&self, amplitudes: &[f64]) -> Operator {
        let mut h = self.static_hamiltonian.clone();
        for (term, a) in self.drives.iter().zip(amplitudes) {
            if *a != 0.0 {
                h = &h + &term.generator.scale_real(*a);
            }
        }
        h
    }

    /// True when conditioned evolution keeps pure states pure: unit detector
    /// efficiencies and no unmonitored channels.
    pub fn preserves_purity(&self) -> bool {
        self.unmonitored.is_empty() && self.monitored.iter().all(|j| j.efficiency == 1.0)
    }
}

/// Geometry entering the static dipole-dipole shift.
#[derive(Clone, Debug, PartialEq)]
pub struct DipoleGeometry {
    /// Permanent dipole-moment differences in C m.
    pub mu_q: f64,
    pub mu_r: f64,
    pub dir_q: [f64; 3],
    pub dir_r: [f64; 3],
    /// Unit vector between the ions.
    pub dir_sep: [f64; 3],
    /// Ion separation in m.
    pub separation: f64,
    /// Relative static permittivity of the host.
    pub permittivity: f64,
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Dipole-dipole energy shift with local-field correction, returned as an
/// angular frequency in rad/s.
pub fn dipole_strength(g: &DipoleGeometry) -> Result<f64, ModelError> {
    if !(g.separation > 0.0) {
        return Err(ModelError::InvalidParameter {
            name: "separation",
            requirement: "positive",
            value: g.separation,
        });
    }
    positive("permittivity", g.permittivity)?;
    for (name, v) in [("dir_q", &g.dir_q), ("dir_r", &g.dir_r), ("dir_sep", &g.dir_sep)] {
        let n = dot(v, v).sqrt();
        require(name, n, (n - 1.0).abs() <= 1e-12, "a unit vector")?;
    }
    let eps = g.permittivity;
    let local_field = ((eps + 2.0) / (3.0 * eps)).powi(2);
    let angular = dot(&g.dir_r, &g.dir_q) - 3.0 * dot(&g.dir_r, &g.dir_sep) * dot(&g.dir_q, &g.dir_sep);
    let energy = local_field * g.mu_q * g.mu_r / (4.0 * std::f64::consts::PI * EPSILON_0 * g.separation.powi(3)) * angular;
    Ok(energy / HBAR)
}

/// Purcell-enhanced emitter decay rate `4 g^2 / kappa` of a bad cavity.
pub fn purcell_rate(g: f64, kappa: f64) -> Result<f64, ModelError> {
    positive("kappa", kappa)?;
    Ok(4.0 * g * g / kappa)
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn local(label: &str, dim: usize) -> Arc<HilbertSpace> {
    Arc::new(HilbertSpace::single(label, dim))
}

/// Single-cavity operators on `qubit(3) ⊗ readout(2)`.
struct Local {
    qubit: Arc<HilbertSpace>,
    readout: Arc<HilbertSpace>,
}

impl Local {
    fn new(suffix: &str) -> Self {
        Self { qubit: local(&format!("qubit{suffix}"), 3), readout: local(&format!("readout{suffix}"), 2) }
    }

    fn q(&self, r: usize, c: usize) -> Operator {
        Operator::ket_bra(self.qubit.clone(), r, c)
    }

    fn r(&self, r: usize, c: usize) -> Operator {
        Operator::ket_bra(self.readout.clone(), r, c)
    }

    fn iq(&self) -> Operator {
        Operator::identity(self.qubit.clone())
    }

    fn ir(&self) -> Operator {
        Operator::identity(self.readout.clone())
    }

    /// `|e><e| ⊗ |up><up|`
    fn blockade(&self) -> Operator {
        tensor(&self.q(QE, QE), &self.r(UP, UP))
    }

    fn readout_up(&self) -> Operator {
        tensor(&self.iq(), &self.r(UP, UP))
    }

    /// `(1/2)(|down><up| + |up><down|)` on the readout ion.
    fn readout_x(&self) -> Operator {
        tensor(&self.iq(), &(&self.r(DOWN, UP) + &self.r(UP, DOWN)).scale_real(0.5))
    }

    /// `(i/2)(|down><up| - |up><down|)`: drive quadrature of a cavity-injected
    /// field with real amplitude.
    fn readout_y(&self) -> Operator {
        tensor(&self.iq(), &(&self.r(DOWN, UP) - &self.r(UP, DOWN)).scale(C64::new(0.0, 0.5)))
    }

    /// `(1/2)(|0><e| + |e><0|)` on the qubit ion.
    fn qubit_x(&self) -> Operator {
        tensor(&(&self.q(Q0, QE) + &self.q(QE, Q0)).scale_real(0.5), &self.ir())
    }

    /// `sqrt(gamma) |down><up|`
    fn readout_lowering(&self, gamma: f64) -> Operator {
        tensor(&self.iq(), &self.r(DOWN, UP)).scale_real(gamma.sqrt())
    }

    /// `sqrt(rate) |n><e|`
    fn qubit_decay(&self, n: usize, rate: f64) -> Operator {
        tensor(&self.q(n, QE), &self.ir()).scale_real(rate.sqrt())
    }

    /// Swap of `|0>` and `|e>`, identity on `|1>` and on the readout.
    fn pi_pulse(&self) -> Operator {
        let swap = &(&self.q(Q0, QE) + &self.q(QE, Q0)) + &self.q(Q1, Q1);
        tensor(&swap, &self.ir())
    }
}

/// Single-cavity space `qubit(3) ⊗ readout(2)`.
pub fn readout_space() -> Arc<HilbertSpace> {
    Arc::new(HilbertSpace::new([("qubit", 3), ("readout", 2)]).expect("valid layout"))
}

/// Flat index of `|q> ⊗ |r>` in the single-cavity space.
pub fn readout_index(q: usize, r: usize) -> usize {
    q * 2 + r
}

/// The `|0> <-> |e>` pi pulse on the single-cavity space.
pub fn readout_pi_pulse() -> Operator {
    let l = Local::new("");
    let u = l.pi_pulse();
    Operator::new(readout_space(), u.into_matrix()).expect("dimension 6")
}

/// Parameters of a directly driven readout ion.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectDriveParams {
    /// Dipole blockade shift.
    pub mu: f64,
    /// Rabi frequency of the readout drive.
    pub omega_rd: f64,
    /// Readout drive detuning.
    pub delta: f64,
    /// Purcell-enhanced readout decay rate (the unit of all rates).
    pub gamma: f64,
    /// Decay rate of `|e>` into each of `|0>` and `|1>`.
    pub gamma_decay: f64,
    /// Rabi frequency of a continuous `|0> <-> |e>` drive.
    pub omega_q: f64,
}

impl Default for DirectDriveParams {
    fn default() -> Self {
        Self { mu: 5.0, omega_rd: 2.0, delta: 0.0, gamma: 1.0, gamma_decay: 0.0, omega_q: 0.0 }
    }
}

/// Name of the readout drive term in single-cavity models.
pub const READOUT_DRIVE: &str = "readout_drive";
/// Name of the continuous qubit drive term.
pub const QUBIT_DRIVE: &str = "qubit_drive";

/// Directly driven readout ion with a photon counter on its cavity output.
///
/// The schedule contains the state-preparation pi pulse at `t = 0`.
pub fn build_direct_drive_model(p: &DirectDriveParams) -> Result<ModelSpec, ModelError> {
    positive("gamma", p.gamma)?;
    non_negative("mu", p.mu)?;
    non_negative("omega_rd", p.omega_rd)?;
    non_negative("gamma_decay", p.gamma_decay)?;
    non_negative("omega_q", p.omega_q)?;
    require("delta", p.delta, true, "finite")?;
    single_cavity_model(p.mu, p.delta, p.gamma, p.gamma_decay, p.omega_q, p.omega_rd, false, 0.0)
}

/// Parameters of the cavity-reflection readout.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectionParams {
    pub mu: f64,
    /// Real, non-negative amplitude of the coherent cavity drive.
    pub beta: f64,
    pub gamma: f64,
    pub gamma_decay: f64,
    pub omega_q: f64,
    pub delta: f64,
}

impl Default for ReflectionParams {
    fn default() -> Self {
        Self { mu: 5.0, beta: 2.0, gamma: 1.0, gamma_decay: 0.0, omega_q: 0.0, delta: 0.0 }
    }
}

/// Readout through the cavity-reflected field.
///
/// The counted field is `C_r + beta`; its coherent part is already folded
/// into a readout drive of Rabi frequency `beta sqrt(gamma)`. The drive sits
/// in the `i(|down><up| - |up><down|)` quadrature, which is the one for which
/// the total reflected flux equals `beta^2` whatever the qubit state.
pub fn build_reflection_model(p: &ReflectionParams) -> Result<ModelSpec, ModelError> {
    positive("gamma", p.gamma)?;
    non_negative("mu", p.mu)?;
    non_negative("beta", p.beta)?;
    non_negative("gamma_decay", p.gamma_decay)?;
    non_negative("omega_q", p.omega_q)?;
    require("delta", p.delta, true, "finite")?;
    let omega = p.beta * p.gamma.sqrt();
    single_cavity_model(p.mu, p.delta, p.gamma, p.gamma_decay, p.omega_q, omega, true, p.beta)
}

#[allow(clippy::too_many_arguments)]
fn single_cavity_model(
    mu: f64,
    delta: f64,
    gamma: f64,
    gamma_decay: f64,
    omega_q: f64,
    omega_rd: f64,
    reflection: bool,
    beta: f64,
) -> Result<ModelSpec, ModelError> {
    let space = readout_space();
    let l = Local::new("");
    let on = |op: Operator| Operator::new(space.clone(), op.into_matrix()).expect("dimension 6");

    let h_static = &l.blockade().scale_real(mu) - &l.readout_up().scale_real(delta);
    let drive_generator = if reflection { l.readout_y() } else { l.readout_x() };
    let drives = vec![
        DriveTerm { name: READOUT_DRIVE.into(), generator: on(drive_generator), amplitude: omega_rd },
        DriveTerm { name: QUBIT_DRIVE.into(), generator: on(l.qubit_x()), amplitude: omega_q },
    ];
    let mut jump = on(l.readout_lowering(gamma));
    if reflection {
        jump = &jump + &Operator::identity(space.clone()).scale_real(beta);
    }
    let monitored = vec![MonitoredJump { name: "counter".into(), operator: jump, detector: 0, efficiency: 1.0 }];
    let unmonitored = if gamma_decay > 0.0 {
        vec![on(l.qubit_decay(Q0, gamma_decay)), on(l.qubit_decay(Q1, gamma_decay))]
    } else {
        Vec::new()
    };
    ModelSpec::new(space.clone(), on(h_static), drives, monitored, unmonitored)?
        .with_event(PulseEvent::unitary(0.0, "pi", on(l.pi_pulse())))
}

/// Adds `|0> <-> |e>` re-excitation pulses at the given times.
pub fn with_pi_pulses(mut model: ModelSpec, times: &[f64]) -> Result<ModelSpec, ModelError> {
    let pulse = readout_pi_pulse();
    for &t in times {
        model = model.with_event(PulseEvent::unitary(t, "pi", pulse.clone()))?;
    }
    Ok(model)
}

/// Parameters of the two-cavity heralding setup.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoCavityParams {
    pub mu: f64,
    pub omega_rd: f64,
    pub gamma: f64,
    /// Efficiency of each of the two counters behind the beam splitter.
    pub detector_efficiency: f64,
    /// Time at which both readout drives are switched off.
    pub drive_off: Option<f64>,
    /// Time of the final `|e> -> |0>` restoring pulses.
    pub final_pulse: Option<f64>,
}

impl Default for TwoCavityParams {
    fn default() -> Self {
        Self { mu: 5.0, omega_rd: 2.0, gamma: 1.0, detector_efficiency: 1.0, drive_off: Some(20.0), final_pulse: Some(25.0) }
    }
}

/// Drive term names of the two readout ions.
pub const DRIVE_A: &str = "drive_A";
pub const DRIVE_B: &str = "drive_B";
/// Detector behind the `+` output port.
pub const DETECTOR_PLUS: u16 = 0;
/// Detector behind the `-` output port.
pub const DETECTOR_MINUS: u16 = 1;

/// Two-cavity space `qubit_A ⊗ readout_A ⊗ qubit_B ⊗ readout_B`.
pub fn two_cavity_space() -> Arc<HilbertSpace> {
    Arc::new(
        HilbertSpace::new([("qubit_A", 3), ("readout_A", 2), ("qubit_B", 3), ("readout_B", 2)]).expect("valid layout"),
    )
}

/// Flat index in the two-cavity space.
pub fn two_cavity_index(qa: usize, ra: usize, qb: usize, rb: usize) -> usize {
    ((qa * 2 + ra) * 3 + qb) * 2 + rb
}

/// Pi pulses on both qubits.
pub fn two_cavity_pi_pulse() -> Operator {
    let single = readout_pi_pulse();
    Operator::new(two_cavity_space(), tensor(&single, &single).into_matrix()).expect("dimension 36")
}

/// The A↔B exchange operator on the two-cavity space.
pub fn swap_operator() -> Operator {
    let d = 36;
    let mut m = DMatrix::zeros(d, d);
    for qa in 0..3 {
        for ra in 0..2 {
            for qb in 0..3 {
                for rb in 0..2 {
                    m[(two_cavity_index(qb, rb, qa, ra), two_cavity_index(qa, ra, qb, rb))] = c(1.0);
                }
            }
        }
    }
    Operator::new(two_cavity_space(), m).expect("dimension 36")
}

/// Two identical cavities whose outputs are mixed on a 50:50 beam splitter
/// and counted in both ports.
pub fn build_two_cavity_model(p: &TwoCavityParams) -> Result<ModelSpec, ModelError> {
    positive("gamma", p.gamma)?;
    non_negative("mu", p.mu)?;
    non_negative("omega_rd", p.omega_rd)?;
    efficiency("detector_efficiency", p.detector_efficiency)?;
    let space = two_cavity_space();
    let a = Local::new("_A");
    let b = Local::new("_B");
    let id6 = Operator::identity(Arc::new(HilbertSpace::single("cavity", 6)));
    let on = |op: Operator| Operator::new(space.clone(), op.into_matrix()).expect("dimension 36");
    let on_a = |op: Operator| on(tensor(&op, &id6));
    let on_b = |op: Operator| on(tensor(&id6, &op));

    let h_static = &on_a(a.blockade()).scale_real(p.mu) + &on_b(b.blockade()).scale_real(p.mu);
    let drives = vec![
        DriveTerm { name: DRIVE_A.into(), generator: on_a(a.readout_x()), amplitude: p.omega_rd },
        DriveTerm { name: DRIVE_B.into(), generator: on_b(b.readout_x()), amplitude: p.omega_rd },
    ];
    let ca = on_a(a.readout_lowering(p.gamma));
    let cb = on_b(b.readout_lowering(p.gamma));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let monitored = vec![
        MonitoredJump {
            name: "chi_plus".into(),
            operator: (&ca + &cb).scale_real(s),
            detector: DETECTOR_PLUS,
            efficiency: p.detector_efficiency,
        },
        MonitoredJump {
            name: "chi_minus".into(),
            operator: (&ca - &cb).scale_real(s),
            detector: DETECTOR_MINUS,
            efficiency: p.detector_efficiency,
        },
    ];
    let mut model = ModelSpec::new(space.clone(), h_static, drives, monitored, Vec::new())?
        .with_event(PulseEvent::unitary(0.0, "pi", two_cavity_pi_pulse()))?;
    if let Some(t) = p.drive_off {
        non_negative("drive_off", t)?;
        model = model.with_event(PulseEvent::set_drive(t, DRIVE_A, 0.0))?;
        model = model.with_event(PulseEvent::set_drive(t, DRIVE_B, 0.0))?;
    }
    if let Some(t) = p.final_pulse {
        non_negative("final_pulse", t)?;
        model = model.with_event(PulseEvent::unitary(t, "pi", two_cavity_pi_pulse()))?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fig2() -> ModelSpec {
        build_direct_drive_model(&DirectDriveParams { mu: 5.0, omega_rd: 2.0, ..Default::default() }).unwrap()
    }

    #[test]
    fn direct_drive_hamiltonian_structure() {
        let m = fig2();
        let h = m.hamiltonian();
        assert_eq!(h.dim(), 6);
        let hm = h.matrix();
        // blockade shift on |e, up>
        assert_eq!(hm[(readout_index(QE, UP), readout_index(QE, UP))], c(5.0));
        // one drive coupling per qubit level, nothing else off the diagonal
        let mut upper = Vec::new();
        for i in 0..6 {
            for j in i + 1..6 {
                if hm[(i, j)].norm() > 0.0 {
                    upper.push((i, j));
                    assert_eq!(hm[(i, j)], c(1.0));
                }
            }
        }
        assert_eq!(upper, vec![(0, 1), (2, 3), (4, 5)]);
        let diag: Vec<_> = (0..6).filter(|&i| hm[(i, i)].norm() > 0.0).collect();
        assert_eq!(diag, vec![5]);
        assert!(h.is_hermitian(1e-12));
        assert_eq!(m.monitored().len(), 1);
        assert!(m.unmonitored().is_empty());
    }

    #[test]
    fn zero_couplings_give_zero_hamiltonian() {
        let m = build_direct_drive_model(&DirectDriveParams { mu: 0.0, omega_rd: 0.0, ..Default::default() }).unwrap();
        assert_eq!(m.hamiltonian().max_abs(), 0.0);
        let c = &m.monitored()[0].operator;
        // Frobenius norm of sqrt(gamma) I3 ⊗ |down><up| is sqrt(3 gamma); the
        // single-ion factor has operator norm sqrt(gamma).
        let cdc = &c.dagger() * c;
        assert_abs_diff_eq!(cdc.max_abs(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn qubit_decay_channels() {
        let m = build_direct_drive_model(&DirectDriveParams { gamma_decay: 0.05, ..Default::default() }).unwrap();
        assert_eq!(m.unmonitored().len(), 2);
        for op in m.unmonitored() {
            assert_abs_diff_eq!((&op.dagger() * op).trace().re, 0.1, epsilon = 1e-15);
        }
        assert!(!m.preserves_purity());
    }

    #[test]
    fn negative_rates_rejected() {
        let err = build_direct_drive_model(&DirectDriveParams { gamma_decay: -0.1, ..Default::default() });
        assert!(matches!(err, Err(ModelError::InvalidParameter { name: "gamma_decay", .. })));
        assert!(build_direct_drive_model(&DirectDriveParams { gamma: 0.0, ..Default::default() }).is_err());
        assert!(build_reflection_model(&ReflectionParams { beta: -1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn reflection_model_drive_and_jump() {
        let m = build_reflection_model(&ReflectionParams { beta: 2.0, ..Default::default() }).unwrap();
        let drive = &m.drives()[m.drive_index(READOUT_DRIVE).unwrap()];
        assert_abs_diff_eq!(drive.amplitude, 2.0, epsilon = 1e-15);
        let jump = m.monitored()[0].operator.matrix();
        for i in 0..6 {
            assert_eq!(jump[(i, i)], c(2.0));
        }
        assert_eq!(jump[(readout_index(Q1, DOWN), readout_index(Q1, UP))], c(1.0));
    }

    #[test]
    fn reflection_without_drive_reduces_to_direct() {
        let r = build_reflection_model(&ReflectionParams { beta: 0.0, ..Default::default() }).unwrap();
        let d = build_direct_drive_model(&DirectDriveParams { omega_rd: 0.0, ..Default::default() }).unwrap();
        assert_eq!(r.hamiltonian().matrix(), d.hamiltonian().matrix());
        assert_eq!(r.monitored()[0].operator.matrix(), d.monitored()[0].operator.matrix());
    }

    #[test]
    fn two_cavity_beamsplitter_is_unitary() {
        let m = build_two_cavity_model(&TwoCavityParams::default()).unwrap();
        assert_eq!(m.dim(), 36);
        let plus = &m.monitored()[0].operator;
        let minus = &m.monitored()[1].operator;
        let lhs = &(&plus.dagger() * plus) + &(&minus.dagger() * minus);
        let a = Local::new("_A");
        let b = Local::new("_B");
        let id6 = Operator::identity(Arc::new(HilbertSpace::single("cavity", 6)));
        let ca = tensor(&a.readout_lowering(1.0), &id6);
        let cb = tensor(&id6, &b.readout_lowering(1.0));
        let rhs = &(&ca.dagger() * &ca) + &(&cb.dagger() * &cb);
        assert!(lhs.max_abs_diff(&Operator::new(two_cavity_space(), rhs.into_matrix()).unwrap()) < 1e-15);
        assert!(m.preserves_purity());
    }

    #[test]
    fn two_cavity_symmetric_under_exchange() {
        let m = build_two_cavity_model(&TwoCavityParams::default()).unwrap();
        let swap = swap_operator();
        let comm = m.hamiltonian().commutator(&swap).unwrap();
        assert!(comm.max_abs() <= 1e-10);
        assert!(m.hamiltonian().is_hermitian(1e-12));
    }

    #[test]
    fn two_cavity_schedule() {
        let m = build_two_cavity_model(&TwoCavityParams::default()).unwrap();
        let times: Vec<f64> = m.schedule().iter().map(|e| e.time).collect();
        assert_eq!(times, vec![0.0, 20.0, 20.0, 25.0]);
        assert!(matches!(&m.schedule()[1].action, PulseAction::SetDrive { value, .. } if *value == 0.0));
        assert!(build_two_cavity_model(&TwoCavityParams { detector_efficiency: 1.2, ..Default::default() }).is_err());
    }

    #[test]
    fn pi_pulse_swaps_zero_and_excited() {
        let u = readout_pi_pulse();
        assert!(u.unitarity_error() < 1e-15);
        let um = u.matrix();
        assert_eq!(um[(readout_index(QE, DOWN), readout_index(Q0, DOWN))], c(1.0));
        assert_eq!(um[(readout_index(Q1, UP), readout_index(Q1, UP))], c(1.0));
    }

    #[test]
    fn purcell_rate_values() {
        assert_abs_diff_eq!(purcell_rate(1.0, 4.0).unwrap(), 1.0);
        assert_eq!(purcell_rate(0.0, 3.0).unwrap(), 0.0);
        assert_abs_diff_eq!(purcell_rate(0.5, 10.0).unwrap(), 0.1, epsilon = 1e-16);
        assert!(purcell_rate(1.0, 0.0).is_err());
        assert!(purcell_rate(1.0, -1.0).is_err());
    }

    fn geometry(dir_q: [f64; 3], dir_r: [f64; 3], dir_sep: [f64; 3]) -> DipoleGeometry {
        // ~0.1 Debye moment differences (3.3e-31 C m) at 10 nm
        DipoleGeometry {
            mu_q: 3.3e-31,
            mu_r: 3.3e-31,
            dir_q,
            dir_r,
            dir_sep,
            separation: 10e-9,
            permittivity: 1.0,
        }
    }

    #[test]
    fn dipole_strength_geometry() {
        let z = [0.0, 0.0, 1.0];
        let x = [1.0, 0.0, 0.0];
        let y = [0.0, 1.0, 0.0];
        assert_eq!(dipole_strength(&geometry(x, y, z)).unwrap(), 0.0);
        let collinear = dipole_strength(&geometry(z, z, z)).unwrap();
        let side = dipole_strength(&geometry(x, x, z)).unwrap();
        // bracket -2 for collinear, +1 for parallel dipoles side by side
        assert_abs_diff_eq!(collinear / side, -2.0, epsilon = 1e-12);
        let mut bad = geometry(z, z, z);
        bad.separation = 0.0;
        assert!(dipole_strength(&bad).is_err());
        bad = geometry([1.0, 1.0, 0.0], z, z);
        assert!(dipole_strength(&bad).is_err());
    }

    #[test]
    fn dipole_strength_magnitude_at_ten_nanometres() {
        // independent evaluation: mu^2 / (4 pi eps0 r^3 hbar) for side-by-side dipoles
        let g = geometry([1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        let expected = 3.3e-31f64.powi(2) / (4.0 * std::f64::consts::PI * 8.8541878128e-12 * 1e-24) / 1.054571817e-34;
        let value = dipole_strength(&g).unwrap();
        assert_abs_diff_eq!(value / expected, 1.0, epsilon = 1e-12);
        // order 2 pi x 1 MHz
        let mhz = value / (2.0 * std::f64::consts::PI) / 1e6;
        assert!(mhz > 0.1 && mhz < 10.0, "{mhz} MHz");
    }
}
