//! Configuration-driven campaigns and their datasets.
//!
//! Readout modes write
//!
//! - `qe_curve.csv`: `mu,gamma_decay,T,time,p_h0,p_h1,qe_bayes,qe_bayes_stderr,qe_counts,qe_analytic`.
//!   `p_h0` (`p_h1`) is the ensemble-mean posterior of `h0` (`h1`) over records
//!   generated under `h0` (`h1`); `qe_analytic` is the large-coupling limit for
//!   the same Rabi frequency.
//! - `count_hist.csv`: `mu,gamma_decay,T,time,hypothesis,count,frequency`.
//! - `example_traces.csv`: `mu,gamma_decay,T,hypothesis,run,time,cumulative_counts,p_h0,p_h1`.
//!
//! The entangle mode writes
//!
//! - `herald.csv`: `mu,eta,T,run_id,n_plus_clicks,n_minus_clicks,p1,p2,p3,p4,fidelity,purity,heralded_label`.
//! - `fidelity_sweep.csv`: `mu,eta,T,f,fraction`, the fraction of runs with
//!   fidelity at least `f`.
//! - `bell_traces.csv`: `mu,eta,T,run,time,p1,p2,p3,p4`.
//!
//! Every run writes `manifest.toml`, and `records/` when `save_records` is set.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;
use toml::{Table, Value};

use crate::config::{ConfigError, ExperimentConfig, Mode};
use crate::ensemble::{stream_rng, try_par_map};
use crate::entangle::{default_thresholds, fraction_at_least, EntangleError, Protocol, ProtocolConfig};
use crate::inference::{bayesian_filter, estimate_qe, qe_analytic_large_mu, readout_hypotheses, InferenceError};
use crate::models::{
    build_direct_drive_model, build_reflection_model, with_pi_pulses, DirectDriveParams, ModelError, ModelSpec,
    ReflectionParams,
};
use crate::record::{DetectionRecord, RecordError};
use crate::trajectory::{SimulationError, Simulator, TimeGrid};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Entangle(#[from] EntangleError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// Files written by a run and one summary line per sweep point.
#[derive(Clone, Debug, Default)]
pub struct ExperimentSummary {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

struct CsvFile {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvFile {
    fn create(path: PathBuf, header: &str) -> Result<Self, ExperimentError> {
        let file = File::create(&path).map_err(|source| ExperimentError::Io { path: path.clone(), source })?;
        let mut csv = Self { path, out: BufWriter::new(file) };
        csv.row(format_args!("{header}"))?;
        Ok(csv)
    }

    fn row(&mut self, line: std::fmt::Arguments<'_>) -> Result<(), ExperimentError> {
        writeln!(self.out, "{line}").map_err(|source| ExperimentError::Io { path: self.path.clone(), source })
    }

    fn close(mut self) -> Result<PathBuf, ExperimentError> {
        self.out.flush().map_err(|source| ExperimentError::Io { path: self.path.clone(), source })?;
        Ok(self.path)
    }
}

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })
}

fn write_record(path: PathBuf, record: &DetectionRecord) -> Result<(), ExperimentError> {
    let file = File::create(&path).map_err(|source| ExperimentError::Io { path: path.clone(), source })?;
    let mut out = BufWriter::new(file);
    record.write_csv(&mut out)?;
    out.flush().map_err(|source| ExperimentError::Io { path, source })
}

/// Runs every sweep point of `config` and writes the datasets into
/// `config.output`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary, ExperimentError> {
    create_dir(&config.output)?;
    let mut summary = ExperimentSummary::default();
    let mut points = Vec::new();
    if config.mode.is_readout() {
        run_readout(config, &mut summary, &mut points)?;
    } else {
        run_entangle(config, &mut summary, &mut points)?;
    }
    let manifest = config.output.join("manifest.toml");
    fs::write(&manifest, manifest_text(config, &summary, points))
        .map_err(|source| ExperimentError::Io { path: manifest.clone(), source })?;
    summary.files.push(manifest);
    Ok(summary)
}

fn manifest_text(config: &ExperimentConfig, summary: &ExperimentSummary, points: Vec<Value>) -> String {
    let mut run = Table::new();
    run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    run.insert("seed".into(), (config.seed as i64).into());
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    run.insert("created_unix".into(), (created as i64).into());
    let files = summary
        .files
        .iter()
        .filter_map(|p| p.file_name().map(|n| Value::from(n.to_string_lossy().into_owned())))
        .collect();
    run.insert("files".into(), Value::Array(files));
    let mut root = Table::new();
    root.insert("run".into(), Value::Table(run));
    root.insert("config".into(), Value::Table(config.to_table()));
    root.insert("points".into(), Value::Array(points));
    toml::to_string(&root).expect("plain table")
}

fn readout_model(config: &ExperimentConfig, mu: f64, gamma_decay: f64) -> Result<ModelSpec, ModelError> {
    let model = match config.mode {
        Mode::ReadoutDirect | Mode::ReadoutDecay => build_direct_drive_model(&DirectDriveParams {
            mu,
            omega_rd: config.omega_rd,
            delta: config.delta,
            gamma: config.gamma,
            gamma_decay,
            omega_q: config.omega_q,
        })?,
        Mode::ReadoutReflection => build_reflection_model(&ReflectionParams {
            mu,
            beta: config.beta,
            gamma: config.gamma,
            gamma_decay,
            omega_q: config.omega_q,
            delta: config.delta,
        })?,
        Mode::Entangle => unreachable!("readout modes only"),
    };
    with_pi_pulses(model, &config.t_pi)
}

/// Rabi frequency of the readout transition in the given mode.
fn readout_rabi(config: &ExperimentConfig) -> f64 {
    match config.mode {
        Mode::ReadoutReflection => config.beta * config.gamma.sqrt(),
        _ => config.omega_rd,
    }
}

fn point_name(parts: &[(&str, f64)]) -> String {
    parts.iter().map(|(k, v)| format!("{k}{v}")).collect::<Vec<_>>().join("_")
}

fn run_readout(
    config: &ExperimentConfig,
    summary: &mut ExperimentSummary,
    points: &mut Vec<Value>,
) -> Result<(), ExperimentError> {
    let out = &config.output;
    let mut qe = CsvFile::create(
        out.join("qe_curve.csv"),
        "mu,gamma_decay,T,time,p_h0,p_h1,qe_bayes,qe_bayes_stderr,qe_counts,qe_analytic",
    )?;
    let mut hist = CsvFile::create(out.join("count_hist.csv"), "mu,gamma_decay,T,time,hypothesis,count,frequency")?;
    let mut traces = CsvFile::create(
        out.join("example_traces.csv"),
        "mu,gamma_decay,T,hypothesis,run,time,cumulative_counts,p_h0,p_h1",
    )?;
    let hyps = readout_hypotheses(config.prior1)?;
    let rabi = readout_rabi(config);

    for &mu in &config.mu {
        for &gd in &config.gamma_decay {
            for &t_final in &config.t_final {
                let model = readout_model(config, mu, gd)?;
                let grid = TimeGrid::new(t_final, config.dt)?;
                let sim = Simulator::new(&model, grid, config.integrator)?;
                let curve = estimate_qe(&sim, &hyps, config.n_traj, config.seed, config.stride, config.binning)?;
                for (k, &t) in curve.times.iter().enumerate() {
                    qe.row(format_args!(
                        "{mu},{gd},{t_final},{t},{},{},{},{},{},{}",
                        curve.true_posterior[0][k],
                        curve.true_posterior[1][k],
                        curve.qe_bayes[k],
                        curve.qe_bayes_stderr[k],
                        curve.qe_counts[k],
                        qe_analytic_large_mu(t, rabi, config.gamma, config.prior1),
                    ))?;
                }

                let hist_time = config.count_time.unwrap_or(t_final);
                let k = curve.times.iter().position(|&t| t >= hist_time - 0.5 * config.dt).unwrap_or(curve.times.len() - 1);
                for (h, per_run) in curve.counts.iter().enumerate() {
                    let samples: Vec<u32> = per_run.iter().map(|c| c[k]).collect();
                    let max = samples.iter().copied().max().unwrap_or(0) as usize;
                    let mut freq = vec![0usize; max + 1];
                    for &s in &samples {
                        freq[s as usize] += 1;
                    }
                    for (count, &f) in freq.iter().enumerate().filter(|(_, &f)| f > 0) {
                        let p = f as f64 / samples.len() as f64;
                        hist.row(format_args!("{mu},{gd},{t_final},{},{},{count},{p}", curve.times[k], hyps[h].label))?;
                    }
                }

                let n_examples = config.n_examples.min(config.n_traj);
                let name = point_name(&[("mu", mu), ("gd", gd), ("T", t_final)]);
                let record_dir = out.join("records").join(&name);
                if config.save_records {
                    create_dir(&record_dir)?;
                }
                for (h, hyp) in hyps.iter().enumerate() {
                    let n_regen = if config.save_records { config.n_traj } else { n_examples };
                    let records = try_par_map(n_regen, |i| {
                        let mut rng = stream_rng(config.seed, h as u32, i as u32);
                        sim.sample(&hyp.rho0, &mut rng, &[], 0).map(|r| r.record)
                    })?;
                    for (i, record) in records.iter().enumerate() {
                        if config.save_records {
                            write_record(record_dir.join(format!("{}_{i:05}.csv", hyp.label)), record)?;
                        }
                        if i < n_examples {
                            let trace = bayesian_filter(&sim, record, &hyps, config.stride)?;
                            for (k, &t) in trace.times.iter().enumerate() {
                                let clicks = record.count_before(grid.step_of(t));
                                let p = &trace.probabilities[k];
                                traces.row(format_args!(
                                    "{mu},{gd},{t_final},{},{i},{t},{clicks},{},{}",
                                    hyp.label, p[0], p[1]
                                ))?;
                            }
                        }
                    }
                }

                let last = curve.times.len() - 1;
                summary.lines.push(format!(
                    "mu={mu} gamma_decay={gd} T={t_final}: qe_bayes={:.4} (+/- {:.4}) qe_counts={:.4}",
                    curve.qe_bayes[last], curve.qe_bayes_stderr[last], curve.qe_counts[last]
                ));
                let mut p = Table::new();
                p.insert("mu".into(), mu.into());
                p.insert("gamma_decay".into(), gd.into());
                p.insert("T".into(), t_final.into());
                p.insert("qe_bayes".into(), curve.qe_bayes[last].into());
                p.insert("qe_counts".into(), curve.qe_counts[last].into());
                points.push(Value::Table(p));
            }
        }
    }
    summary.files.push(qe.close()?);
    summary.files.push(hist.close()?);
    summary.files.push(traces.close()?);
    Ok(())
}

fn run_entangle(
    config: &ExperimentConfig,
    summary: &mut ExperimentSummary,
    points: &mut Vec<Value>,
) -> Result<(), ExperimentError> {
    let out = &config.output;
    let mut herald = CsvFile::create(
        out.join("herald.csv"),
        "mu,eta,T,run_id,n_plus_clicks,n_minus_clicks,p1,p2,p3,p4,fidelity,purity,heralded_label",
    )?;
    let mut sweep = CsvFile::create(out.join("fidelity_sweep.csv"), "mu,eta,T,f,fraction")?;
    let mut traces = CsvFile::create(out.join("bell_traces.csv"), "mu,eta,T,run,time,p1,p2,p3,p4")?;

    for &mu in &config.mu {
        for &eta in &config.detector_efficiency {
            for &t_final in &config.t_final {
                let protocol = Protocol::new(ProtocolConfig {
                    mu,
                    omega_rd: config.omega_rd,
                    gamma: config.gamma,
                    detector_efficiency: eta,
                    t_final,
                    drive_off: config.drive_off,
                    dt: config.dt,
                    integrator: config.integrator,
                })?;
                let n_examples = config.n_examples;
                let runs = try_par_map(config.n_traj, |i| {
                    let mut rng = stream_rng(config.seed, 0, i as u32);
                    protocol.run(i, &mut rng, if i < n_examples { config.stride } else { 0 })
                })?;
                let name = point_name(&[("mu", mu), ("eta", eta), ("T", t_final)]);
                let record_dir = out.join("records").join(&name);
                if config.save_records {
                    create_dir(&record_dir)?;
                }
                for (o, trace) in &runs {
                    let p = o.populations;
                    herald.row(format_args!(
                        "{mu},{eta},{t_final},{},{},{},{},{},{},{},{},{},{}",
                        o.run_id,
                        o.n_plus_clicks,
                        o.n_minus_clicks,
                        p[0],
                        p[1],
                        p[2],
                        p[3],
                        o.fidelity,
                        o.purity,
                        o.heralded_label
                    ))?;
                    for (t, q) in trace.times.iter().zip(&trace.populations) {
                        traces.row(format_args!(
                            "{mu},{eta},{t_final},{},{t},{},{},{},{}",
                            o.run_id, q[0], q[1], q[2], q[3]
                        ))?;
                    }
                    if config.save_records {
                        write_record(record_dir.join(format!("run_{:05}.csv", o.run_id)), &o.record)?;
                    }
                }
                let outcomes: Vec<_> = runs.into_iter().map(|(o, _)| o).collect();
                for f in default_thresholds() {
                    sweep.row(format_args!("{mu},{eta},{t_final},{f},{}", fraction_at_least(&outcomes, f)))?;
                }
                let mut freq = [0usize; 5];
                for o in &outcomes {
                    freq[o.heralded_label.index().unwrap_or(4)] += 1;
                }
                let n = outcomes.len() as f64;
                let high = fraction_at_least(&outcomes, 0.9);
                summary.lines.push(format!(
                    "mu={mu} eta={eta} T={t_final}: psi1..psi4 = {:.3} {:.3} {:.3} {:.3}, reject = {:.3}, fidelity >= 0.9: {:.3}",
                    freq[0] as f64 / n,
                    freq[1] as f64 / n,
                    freq[2] as f64 / n,
                    freq[3] as f64 / n,
                    freq[4] as f64 / n,
                    high
                ));
                let mut t = Table::new();
                t.insert("mu".into(), mu.into());
                t.insert("eta".into(), eta.into());
                t.insert("T".into(), t_final.into());
                t.insert(
                    "outcome_frequencies".into(),
                    Value::Array(freq.iter().map(|&c| Value::Float(c as f64 / n)).collect()),
                );
                t.insert("fraction_fidelity_0_9".into(), high.into());
                points.push(Value::Table(t));
            }
        }
    }
    summary.files.push(herald.close()?);
    summary.files.push(sweep.close()?);
    summary.files.push(traces.close()?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::validate_config;

    fn body(path: &Path) -> String {
        fs::read_to_string(path).unwrap()
    }

    #[test]
    fn readout_run_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let text = |sub: &str| {
            format!(
                "mode = \"readout-direct\"\nt_final = 2\ndt = 0.01\nn_traj = 100\nseed = 3\nn_examples = 2\nsave_records = true\noutput = \"{}\"",
                dir.path().join(sub).display()
            )
        };
        let a = validate_config(&text("a")).unwrap();
        let b = validate_config(&text("b")).unwrap();
        let sa = run_experiment(&a).unwrap();
        run_experiment(&b).unwrap();
        for name in ["qe_curve.csv", "count_hist.csv", "example_traces.csv"] {
            assert_eq!(body(&a.output.join(name)), body(&b.output.join(name)), "{name}");
        }
        let qe = body(&a.output.join("qe_curve.csv"));
        let rows: Vec<&str> = qe.lines().collect();
        assert_eq!(rows.len(), 1 + 21);
        assert!(rows[1].starts_with("5,0,2,0,0.5,0.5,0.5,"));
        let rec = DetectionRecord::read_csv(
            body(&a.output.join("records/mu5_gd0_T2/h1_00007.csv")).as_bytes(),
        )
        .unwrap();
        assert_eq!(rec.n_steps(), 200);
        assert_eq!(sa.files.len(), 4);
        let manifest: Table = body(&a.output.join("manifest.toml")).parse().unwrap();
        assert_eq!(manifest["config"]["seed"].as_integer(), Some(3));
    }

    #[test]
    fn entangle_run_writes_tables() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "mode = \"entangle\"\nt_final = 8\ndrive_off = 4\nn_traj = 12\ndetector_efficiency = [1.0, 0.9]\noutput = \"{}\"",
            dir.path().display()
        );
        let c = validate_config(&text).unwrap();
        let s = run_experiment(&c).unwrap();
        assert_eq!(s.lines.len(), 2);
        let herald = body(&c.output.join("herald.csv"));
        assert_eq!(herald.lines().count(), 1 + 24);
        let sweep = body(&c.output.join("fidelity_sweep.csv"));
        assert_eq!(sweep.lines().count(), 1 + 2 * 21);
        assert!(sweep.lines().nth(1).unwrap().ends_with(",0,1"));
        let traces = body(&c.output.join("bell_traces.csv"));
        let first: Vec<f64> = traces.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        let expected = [5.0, 1.0, 8.0, 0.0, 0.0, 0.25, 0.25, 0.5, 0.0];
        for (a, b) in first.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{first:?}");
        }
    }
}
