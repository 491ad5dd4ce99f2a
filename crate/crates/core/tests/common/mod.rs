//! Property checks shared by the property tests and the acceptance harness.
//! Each returns a short report on success and a description of the violation
//! otherwise.
#![allow(dead_code)]

use ancilla_core::ensemble::stream_rng;
use ancilla_core::inference::{bayesian_filter, estimate_qe, readout_hypotheses, Binning, Hypothesis};
use ancilla_core::models::{build_direct_drive_model, build_two_cavity_model, DirectDriveParams, TwoCavityParams};
use ancilla_core::quantum::{eigen_floor, DensityMatrix};
use ancilla_core::trajectory::{Integrator, Simulator, TimeGrid};
use nalgebra::DVector;
use num_complex::Complex64 as C64;

pub type Check = Result<String, String>;

pub fn direct_sim(mu: f64, gamma_decay: f64, t_final: f64, dt: f64) -> Simulator {
    let model = build_direct_drive_model(&DirectDriveParams { mu, gamma_decay, ..Default::default() }).unwrap();
    Simulator::new(&model, TimeGrid::new(t_final, dt).unwrap(), Integrator::default()).unwrap()
}

/// Trace, Hermiticity and positivity of every state along mixed-state
/// trajectories of the decaying readout model and the lossy two-cavity model.
pub fn density_matrix_invariants() -> Check {
    let mut checked = 0;
    let mut audit = |rho: &DensityMatrix, what: &str| -> Result<(), String> {
        checked += 1;
        let tr = rho.trace();
        let herm = rho.hermiticity_error();
        let floor = eigen_floor(rho);
        if (tr - 1.0).abs() > 1e-10 || herm > 1e-12 || floor < -1e-8 {
            return Err(format!("{what}: trace {tr}, hermiticity {herm:e}, eigenvalue {floor:e}"));
        }
        Ok(())
    };
    let sim = direct_sim(5.0, 0.2, 3.0, 1e-3);
    let hyps = readout_hypotheses(0.5).unwrap();
    for i in 0..4 {
        let mut run = sim.start(&hyps[1].rho0).unwrap();
        let mut rng = stream_rng(17, 0, i);
        while !run.is_finished() {
            run.advance(&mut rng).unwrap();
            if run.step_index() % 50 == 0 {
                audit(&run.state(), "readout with decay")?;
            }
        }
    }
    let model = build_two_cavity_model(&TwoCavityParams {
        detector_efficiency: 0.8,
        drive_off: Some(3.0),
        final_pulse: Some(4.0),
        ..Default::default()
    })
    .unwrap();
    let sim = Simulator::new(&model, TimeGrid::new(4.0, 1e-2).unwrap(), Integrator::default()).unwrap();
    let mut psi = DVector::<C64>::zeros(36);
    psi[0] = C64::new(0.6, 0.0);
    psi[35] = C64::new(0.0, 0.8);
    let rho0 = DensityMatrix::pure(model.space().clone(), &psi).unwrap();
    for i in 0..3 {
        let mut run = sim.start(&rho0).unwrap();
        let mut rng = stream_rng(19, 0, i);
        while !run.is_finished() {
            run.advance(&mut rng).unwrap();
            if run.step_index() % 20 == 0 {
                audit(&run.state(), "two-cavity")?;
            }
        }
    }
    Ok(format!("{checked} states valid"))
}

/// Reruns of a Q_E estimate are bit-identical, also on a different number of
/// worker threads.
pub fn determinism() -> Check {
    let sim = direct_sim(2.5, 0.0, 2.0, 1e-3);
    let hyps = readout_hypotheses(0.5).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| estimate_qe(&sim, &hyps, 130, 5, 100, Binning::default()).unwrap())
    };
    let a = run(1);
    let b = run(1);
    let c = run(3);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    for other in [&b, &c] {
        if bits(&a.qe_bayes) != bits(&other.qe_bayes)
            || bits(&a.qe_counts) != bits(&other.qe_counts)
            || a.counts != other.counts
        {
            return Err("reruns differ".into());
        }
    }
    Ok("bit-identical on 1 and 3 threads".into())
}

/// Mean click number up to `t_final` under `h`, estimated as the ensemble
/// mean of the summed per-step click probabilities.
pub fn mean_counts(sim: &Simulator, h: &Hypothesis, n: usize, seed: u64) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        let mut run = sim.start(&h.rho0).unwrap();
        let mut rng = stream_rng(seed, 1, i as u32);
        let mut expected = 0.0;
        while !run.is_finished() {
            expected += run.click_probabilities().unwrap().iter().sum::<f64>();
            run.advance(&mut rng).unwrap();
        }
        total += expected;
    }
    total / n as f64
}

/// Halving dt shifts the mean click number of the bright hypothesis by less
/// than 2 %.
pub fn dt_halving() -> Check {
    let h = &readout_hypotheses(0.5).unwrap()[1];
    let coarse = mean_counts(&direct_sim(5.0, 0.0, 10.0, 1e-3), h, 400, 3);
    let fine = mean_counts(&direct_sim(5.0, 0.0, 10.0, 5e-4), h, 400, 3);
    let shift = (coarse - fine).abs() / fine;
    if shift < 0.02 {
        Ok(format!("mean counts {coarse:.4} vs {fine:.4}, shift {:.2}%", 100.0 * shift))
    } else {
        Err(format!("mean counts {coarse} vs {fine}, shift {:.2}%", 100.0 * shift))
    }
}

/// Posteriors sum to one at every time, and the final posterior of `h1` is
/// calibrated: within each probability bin, the fraction of records that
/// came from `h1` matches the mean posterior within 3 binomial errors.
pub fn posterior_normalization_and_calibration() -> Check {
    let sim = direct_sim(1.25, 0.0, 2.0, 1e-3);
    let hyps = readout_hypotheses(0.5).unwrap();
    let n = 1500;
    let mut worst_norm = 0.0f64;
    let mut bins = vec![(0usize, 0.0f64, 0usize); 10];
    for (truth, h) in hyps.iter().enumerate() {
        for i in 0..n {
            let mut rng = stream_rng(23, truth as u32, i);
            let record = sim.sample(&h.rho0, &mut rng, &[], 0).unwrap().record;
            let trace = bayesian_filter(&sim, &record, &hyps, 100).unwrap();
            for p in &trace.probabilities {
                worst_norm = worst_norm.max((p.iter().sum::<f64>() - 1.0).abs());
            }
            let p1 = trace.final_posteriors()[1];
            let b = ((p1 * 10.0) as usize).min(9);
            bins[b].0 += 1;
            bins[b].1 += p1;
            bins[b].2 += truth;
        }
    }
    if worst_norm > 1e-12 {
        return Err(format!("posterior sum off by {worst_norm:e}"));
    }
    let mut used = 0;
    for (b, &(count, sum, hits)) in bins.iter().enumerate() {
        if count < 50 {
            continue;
        }
        used += 1;
        let mean = sum / count as f64;
        let freq = hits as f64 / count as f64;
        let se = (mean * (1.0 - mean) / count as f64).sqrt().max(1.0 / count as f64);
        if (freq - mean).abs() > 3.0 * se {
            return Err(format!("bin {b}: mean posterior {mean:.3}, frequency {freq:.3} over {count} records"));
        }
    }
    Ok(format!("normalized to {worst_norm:.1e}, {used} calibration bins consistent"))
}

/// The filter's log-likelihood of the generating hypothesis equals the sum of
/// the log-probabilities of the sampled step outcomes.
pub fn likelihood_self_consistency() -> Check {
    let sim = direct_sim(5.0, 0.0, 5.0, 1e-3);
    let hyps = readout_hypotheses(0.5).unwrap();
    let mut worst = 0.0f64;
    for (truth, h) in hyps.iter().enumerate() {
        for i in 0..10 {
            let mut run = sim.start(&h.rho0).unwrap();
            let mut rng = stream_rng(29, truth as u32, i);
            let mut log_p = 0.0;
            while !run.is_finished() {
                run.advance(&mut rng).unwrap();
                log_p += run.last_log_probability();
            }
            let (record, _) = run.finish().unwrap();
            let trace = bayesian_filter(&sim, &record, &hyps, 1000).unwrap();
            let filtered = trace.log_likelihoods.last().unwrap()[truth];
            worst = worst.max((filtered - log_p).abs() / log_p.abs().max(1.0));
        }
    }
    if worst < 1e-9 {
        Ok(format!("relative mismatch {worst:.1e}"))
    } else {
        Err(format!("relative mismatch {worst:e}"))
    }
}
