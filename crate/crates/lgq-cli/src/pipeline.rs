//! End-to-end scenario pipeline: true-state simulation, quantum filter, halo
//! construction, quantum RTS smoother, classical-smoother contrast, and the
//! steady-state report, with CSV/JSON emission and a reproducibility
//! manifest.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use lgq_core::classical::{kalman_filter, rts_smooth, StateTrajectory};
use lgq_core::model::Observer;
use lgq_core::quantum::{
    build_halo, quantum_filter, quantum_rts_smooth, simulate_true_state, SmoothedQuantumState,
};
use lgq_core::steady_state::{check_differentiability, SteadyStateReport, DEFAULT_CONDITION_TOL};

use crate::config::{ResolvedScenario, ScenarioConfig};
use crate::CliError;

/// Environment variable overriding the output root directory.
pub const OUTPUT_ROOT_ENV: &str = "LGQ_OUTPUT_ROOT";

/// Everything needed to bit-reproduce a run, echoed to `manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub config: ScenarioConfig,
    pub grid: GridManifest,
    pub rng: RngManifest,
    pub derived: DerivedManifest,
    pub initial_state: StateManifest,
    pub outputs: OutputPaths,
}

#[derive(Debug, Serialize)]
pub struct GridManifest {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

#[derive(Debug, Serialize)]
pub struct RngManifest {
    pub algorithm: String,
    pub seed: u64,
    /// Stream index per trajectory-producing stage.
    pub streams: Vec<(String, u64)>,
}

#[derive(Debug, Serialize)]
pub struct DerivedManifest {
    pub hbar: f64,
    pub drift: Vec<Vec<f64>>,
    pub diffusion: Vec<Vec<f64>>,
    pub measurement_observed: Vec<Vec<f64>>,
    pub measurement_unobserved: Vec<Vec<f64>>,
    pub cross_correlation_observed: Vec<Vec<f64>>,
    pub cross_correlation_unobserved: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct StateManifest {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Default)]
pub struct OutputPaths {
    pub trajectory_csv: Option<PathBuf>,
    pub report_json: Option<PathBuf>,
    pub manifest_json: PathBuf,
}

/// Serializable mirror of [`SteadyStateReport`].
#[derive(Debug, Serialize)]
pub struct ReportJson {
    pub condition_met: bool,
    pub covariance_gap: f64,
    pub gain_norm: f64,
    pub convergence_time: f64,
    pub tolerance: f64,
    pub v_true_ss: Vec<Vec<f64>>,
    pub v_unobserved_ss: Vec<Vec<f64>>,
    /// Present in sweep output.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

impl ReportJson {
    pub fn from_report(report: &SteadyStateReport, g: Option<f64>) -> Self {
        Self {
            condition_met: report.condition_met,
            covariance_gap: report.covariance_gap,
            gain_norm: report.gain_norm,
            convergence_time: report.convergence_time,
            tolerance: report.tolerance,
            v_true_ss: matrix_rows(&report.v_true_ss),
            v_unobserved_ss: matrix_rows(&report.v_unobserved_ss),
            g,
        }
    }
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

fn fmt17(value: f64) -> String {
    format!("{value:.16e}")
}

/// Column header for the trajectory CSV. Single-mode runs use the fixed
/// 19-column schema; multi-mode runs generalize the names.
fn csv_header(dim: usize) -> String {
    if dim == 2 {
        return "t,q_T,p_T,q_F,p_F,q_S,p_S,q_Scl,p_Scl,Vt_qq,Vt_qp,Vt_pp,Vf_qq,Vf_qp,Vf_pp,Vs_qq,Vs_qp,Vs_pp,halo_rank".into();
    }
    let mut cols = vec!["t".to_string()];
    for tag in ["T", "F", "S", "Scl"] {
        for i in 1..=dim {
            cols.push(format!("x{i}_{tag}"));
        }
    }
    for tag in ["Vt", "Vf", "Vs"] {
        for i in 1..=dim {
            for j in i..=dim {
                cols.push(format!("{tag}_{i}{j}"));
            }
        }
    }
    cols.push("halo_rank".into());
    cols.join(",")
}

struct CsvSources<'a> {
    truth: &'a StateTrajectory,
    filtered: &'a StateTrajectory,
    smoothed: Option<&'a SmoothedQuantumState>,
    classical: Option<&'a StateTrajectory>,
}

fn write_trajectory_csv(path: &Path, sources: &CsvSources) -> Result<(), CliError> {
    let dim = sources.truth.means[0].len();
    let mut out = String::with_capacity(sources.truth.len() * 400);
    out.push_str(&csv_header(dim));
    out.push_str("\r\n");

    let nan_mean = vec![f64::NAN; dim];
    for k in 0..sources.truth.len() {
        let mut fields: Vec<String> = Vec::with_capacity(4 * dim + 3 * dim * (dim + 1) / 2 + 2);
        fields.push(fmt17(sources.truth.grid.time(k)));
        let mean_cols = |traj: Option<&StateTrajectory>| -> Vec<f64> {
            traj.map_or(nan_mean.clone(), |t| t.means[k].iter().cloned().collect())
        };
        for value in mean_cols(Some(sources.truth)) {
            fields.push(fmt17(value));
        }
        for value in mean_cols(Some(sources.filtered)) {
            fields.push(fmt17(value));
        }
        for value in mean_cols(sources.smoothed.map(|s| &s.trajectory)) {
            fields.push(fmt17(value));
        }
        for value in mean_cols(sources.classical) {
            fields.push(fmt17(value));
        }
        let cov_cols = |traj: Option<&StateTrajectory>, fields: &mut Vec<String>| {
            for i in 0..dim {
                for j in i..dim {
                    let value = traj.map_or(f64::NAN, |t| t.covs[k][(i, j)]);
                    fields.push(fmt17(value));
                }
            }
        };
        cov_cols(Some(sources.truth), &mut fields);
        cov_cols(Some(sources.filtered), &mut fields);
        cov_cols(sources.smoothed.map(|s| &s.trajectory), &mut fields);
        match sources.smoothed {
            Some(s) => fields.push(s.ranks[k].to_string()),
            None => fields.push(String::new()),
        }
        out.push_str(&fields.join(","));
        out.push_str("\r\n");
    }
    fs::write(path, out).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Run the full scenario pipeline and write the configured outputs.
/// Deterministic given (config, seed): rerunning produces byte-identical
/// files.
pub fn run_scenario(scenario: &ResolvedScenario) -> Result<RunManifest, CliError> {
    let config = &scenario.config;
    let model = &scenario.model;
    let init = &scenario.initial;

    let run = simulate_true_state(
        model,
        &init.mean,
        &init.cov,
        config.run.dt,
        config.run.duration,
        config.run.seed,
    )?;
    let filtered = quantum_filter(model, &run.record_observed, &init.mean, &init.cov)?;

    let smoothed = if scenario.quantum_smoother {
        let (halo_model, halo_filter) = build_halo(model, &filtered, &run)?;
        Some(quantum_rts_smooth(model, &halo_model, &halo_filter, &filtered, &run)?)
    } else {
        None
    };

    // Classical contrast: the classical RTS equations fed Alice's
    // measurement and cross-correlation matrices, on the same record.
    let classical = if scenario.classical_smoother {
        let classical_model = model.single_record_model(Observer::Observed);
        let cf = kalman_filter(&classical_model, &run.record_observed, &init.mean, &init.cov)?;
        Some(rts_smooth(&classical_model, &cf, &run.record_observed)?)
    } else {
        None
    };

    let dir = output_root().join(&config.outputs.directory);
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;

    let mut outputs = OutputPaths {
        manifest_json: dir.join("manifest.json"),
        ..Default::default()
    };

    if config.outputs.write_csv {
        let path = dir.join("trajectory.csv");
        write_trajectory_csv(
            &path,
            &CsvSources {
                truth: &run.trajectory,
                filtered: &filtered,
                smoothed: smoothed.as_ref(),
                classical: classical.as_ref(),
            },
        )?;
        outputs.trajectory_csv = Some(path);
    }

    if config.outputs.write_report {
        let report = check_differentiability(model, &init.cov, DEFAULT_CONDITION_TOL, config.run.dt)?;
        let path = dir.join("report.json");
        let json = serde_json::to_string_pretty(&ReportJson::from_report(&report, None))
            .expect("report serializes");
        fs::write(&path, json).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        outputs.report_json = Some(path);
    }

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        grid: GridManifest {
            t0: run.trajectory.grid.t0,
            dt: run.trajectory.grid.dt,
            steps: run.trajectory.grid.steps,
        },
        rng: RngManifest {
            algorithm: "chacha12".into(),
            seed: config.run.seed,
            streams: vec![("true_state".into(), config.run.seed)],
        },
        derived: DerivedManifest {
            hbar: model.hbar,
            drift: matrix_rows(&model.drift),
            diffusion: matrix_rows(&model.diffusion),
            measurement_observed: matrix_rows(&model.measurement_observed),
            measurement_unobserved: matrix_rows(&model.measurement_unobserved),
            cross_correlation_observed: matrix_rows(&model.cross_correlation_observed),
            cross_correlation_unobserved: matrix_rows(&model.cross_correlation_unobserved),
        },
        initial_state: StateManifest {
            mean: init.mean.iter().cloned().collect(),
            cov: matrix_rows(&init.cov),
        },
        outputs,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest.outputs.manifest_json, manifest_json)
        .map_err(|e| CliError::Io(format!("{}: {e}", manifest.outputs.manifest_json.display())))?;
    Ok(manifest)
}

/// Parse a sweep specification `g=start:end:step`.
pub fn parse_sweep(spec: &str) -> Result<(f64, f64, f64), CliError> {
    let rest = spec
        .strip_prefix("g=")
        .ok_or_else(|| CliError::Validation(format!("sweep: expected g=a:b:step, got '{spec}'")))?;
    let parts: Vec<&str> = rest.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Validation(format!("sweep: expected g=a:b:step, got '{spec}'")));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Validation(format!("sweep: {e}")))?;
    if !(nums[2] > 0.0) || nums[1] < nums[0] {
        return Err(CliError::Validation("sweep: require a <= b and step > 0".into()));
    }
    Ok((nums[0], nums[1], nums[2]))
}

/// Evaluate the differentiability condition for the configured scenario; a
/// sweep re-resolves the preset at each coupling ratio.
pub fn analyze(config: &ScenarioConfig, sweep: Option<&str>) -> Result<Vec<ReportJson>, CliError> {
    match sweep {
        None => {
            let scenario = config.resolve()?;
            let report = check_differentiability(
                &scenario.model,
                &scenario.initial.cov,
                DEFAULT_CONDITION_TOL,
                config.run.dt,
            )?;
            Ok(vec![ReportJson::from_report(&report, None)])
        }
        Some(spec) => {
            if config.system.preset.is_none() {
                return Err(CliError::Validation(
                    "sweep: only preset systems have a coupling ratio g".into(),
                ));
            }
            let (start, end, step) = parse_sweep(spec)?;
            let mut reports = Vec::new();
            let count = ((end - start) / step).round() as usize;
            for i in 0..=count {
                let g = start + i as f64 * step;
                let mut swept = config.clone();
                swept.system.g = Some(g);
                let scenario = swept.resolve()?;
                let report = check_differentiability(
                    &scenario.model,
                    &scenario.initial.cov,
                    DEFAULT_CONDITION_TOL,
                    config.run.dt,
                )?;
                reports.push(ReportJson::from_report(&report, Some(g)));
            }
            Ok(reports)
        }
    }
}
