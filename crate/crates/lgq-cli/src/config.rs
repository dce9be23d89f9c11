//! Scenario configuration: one JSON document with `system`, `unravelling`,
//! `run` and `outputs` sections. Presets carry their own unravelling and
//! default initial conditions; explicit systems must spell everything out.
//! Homodyne shorthand expands to diagonal unravelling matrices before
//! validation, and every validator runs before any simulation starts.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use lgq_core::gaussian::GaussianState;
use lgq_core::model::{
    build_derived_model, two_channel_oscillator, validate_unravelling, DerivedModel,
    LgqSystemSpec, OscillatorPreset, UnravellingSpec,
};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unravelling: Option<UnravellingConfig>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Bundled scenario name (see `lgq presets list`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Coupling-ratio override for preset systems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    /// Full system specification, mutually exclusive with `preset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit: Option<ExplicitSystem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitSystem {
    pub modes: usize,
    pub hbar: f64,
    /// Hamiltonian quadratic form, `2N x 2N`, row-major.
    pub hamiltonian: Vec<Vec<f64>>,
    /// Lindblad coupling `B`, `K x 2N`, split into real and imaginary parts.
    pub coupling_re: Vec<Vec<f64>>,
    pub coupling_im: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnravellingConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homodyne: Option<HomodyneConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<MatrixUnravelling>,
}

/// Per-channel homodyne settings (efficiency and local-oscillator phase) for
/// each observer; expands to `M_r = diag(sqrt(eta_k) e^{i theta_k})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomodyneConfig {
    pub observed: Vec<ChannelSetting>,
    pub unobserved: Vec<ChannelSetting>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSetting {
    pub eta: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixUnravelling {
    pub observed_re: Vec<Vec<f64>>,
    pub observed_im: Vec<Vec<f64>>,
    pub unobserved_re: Vec<Vec<f64>>,
    pub unobserved_im: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    /// Initial mean; preset default when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Initial covariance; preset default when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<Vec<Vec<f64>>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { dt: 1e-4, duration: 2.0, seed: 0, x0: None, v0: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: String,
    /// Estimators to compute beyond the always-on true state and filter.
    pub estimators: Vec<String>,
    pub write_csv: bool,
    pub write_report: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: "runs/scenario".into(),
            estimators: vec!["quantum-smoothed".into(), "classical-smoothed".into()],
            write_csv: true,
            write_report: true,
        }
    }
}

/// Everything the pipeline needs, resolved and validated.
#[derive(Debug)]
pub struct ResolvedScenario {
    pub config: ScenarioConfig,
    pub model: DerivedModel,
    pub initial: GaussianState,
    pub quantum_smoother: bool,
    pub classical_smoother: bool,
}

fn to_matrix(rows: &[Vec<f64>], label: &str) -> Result<DMatrix<f64>, CliError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Validation(format!("{label}: ragged or empty matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Validation(format!("{label}: entries must be finite")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn to_complex_matrix(
    re: &[Vec<f64>],
    im: &[Vec<f64>],
    label: &str,
) -> Result<DMatrix<Complex<f64>>, CliError> {
    let re = to_matrix(re, label)?;
    let im = to_matrix(im, label)?;
    if re.shape() != im.shape() {
        return Err(CliError::Validation(format!(
            "{label}: real and imaginary parts have different shapes"
        )));
    }
    Ok(DMatrix::from_fn(re.nrows(), re.ncols(), |i, j| {
        Complex::new(re[(i, j)], im[(i, j)])
    }))
}

fn homodyne_matrix(channels: &[ChannelSetting]) -> DMatrix<Complex<f64>> {
    let k = channels.len();
    let mut m = DMatrix::zeros(k, k);
    for (i, ch) in channels.iter().enumerate() {
        m[(i, i)] = Complex::from_polar(ch.eta.max(0.0).sqrt(), ch.theta);
    }
    m
}

fn known_preset(name: &str, g_override: Option<f64>) -> Result<OscillatorPreset, CliError> {
    match name {
        "fig1-top" => Ok(OscillatorPreset::observe_gamma(g_override.unwrap_or(1.0))),
        "fig1-bottom" => Ok(OscillatorPreset::observe_kappa(g_override.unwrap_or(0.1))),
        other => Err(CliError::Validation(format!(
            "system.preset: unknown preset '{other}' (see `lgq presets list`)"
        ))),
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text)
            .map_err(|e| CliError::Validation(format!("config parse error: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Resolve into core types, running every validator before anything else.
    pub fn resolve(&self) -> Result<ResolvedScenario, CliError> {
        if !(self.run.dt > 0.0) || !(self.run.duration > 0.0) {
            return Err(CliError::Validation(format!(
                "run: dt and duration must be positive (dt={}, duration={})",
                self.run.dt, self.run.duration
            )));
        }

        let (sys, unr_from_preset, default_init) = match (&self.system.preset, &self.system.explicit)
        {
            (Some(name), None) => {
                let preset = known_preset(name, self.system.g)?;
                let (sys, unr) = two_channel_oscillator(&preset)
                    .map_err(|e| CliError::Validation(format!("system.preset: {e}")))?;
                (sys, Some(unr), Some(preset.initial_state()))
            }
            (None, Some(explicit)) => {
                if explicit.modes == 0 || explicit.modes > 16 {
                    return Err(CliError::Validation(
                        "system.explicit.modes: must be between 1 and 16".into(),
                    ));
                }
                if self.system.g.is_some() {
                    return Err(CliError::Validation(
                        "system.g only applies to preset systems".into(),
                    ));
                }
                let hamiltonian = to_matrix(&explicit.hamiltonian, "system.explicit.hamiltonian")?;
                let coupling = to_complex_matrix(
                    &explicit.coupling_re,
                    &explicit.coupling_im,
                    "system.explicit.coupling",
                )?;
                let sys = LgqSystemSpec::new(explicit.modes, explicit.hbar, hamiltonian, coupling)
                    .map_err(|e| CliError::Validation(format!("system.explicit: {e}")))?;
                (sys, None, None)
            }
            (Some(_), Some(_)) => {
                return Err(CliError::Validation(
                    "system: preset and explicit are mutually exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Validation(
                    "system: one of preset or explicit is required".into(),
                ))
            }
        };

        let unravelling = match (&self.unravelling, unr_from_preset) {
            (None, Some(unr)) => unr,
            (None, None) => {
                return Err(CliError::Validation(
                    "unravelling: required for explicit systems".into(),
                ))
            }
            (Some(cfg), _) => match (&cfg.homodyne, &cfg.matrices) {
                (Some(h), None) => {
                    if h.observed.iter().chain(h.unobserved.iter())
                        .any(|c| !c.eta.is_finite() || !c.theta.is_finite())
                    {
                        return Err(CliError::Validation(
                            "unravelling.homodyne: eta and theta must be finite".into(),
                        ));
                    }
                    if h.observed.len() != sys.channels() || h.unobserved.len() != sys.channels() {
                        return Err(CliError::Validation(format!(
                            "unravelling.homodyne: expected {} channel settings per observer",
                            sys.channels()
                        )));
                    }
                    UnravellingSpec {
                        observed: homodyne_matrix(&h.observed),
                        unobserved: homodyne_matrix(&h.unobserved),
                    }
                }
                (None, Some(m)) => UnravellingSpec {
                    observed: to_complex_matrix(
                        &m.observed_re,
                        &m.observed_im,
                        "unravelling.matrices.observed",
                    )?,
                    unobserved: to_complex_matrix(
                        &m.unobserved_re,
                        &m.unobserved_im,
                        "unravelling.matrices.unobserved",
                    )?,
                },
                _ => {
                    return Err(CliError::Validation(
                        "unravelling: exactly one of homodyne or matrices is required".into(),
                    ))
                }
            },
        };

        let report = validate_unravelling(&unravelling);
        if !report.is_valid() {
            return Err(CliError::Validation(format!("unravelling: {}", report.summary())));
        }
        let model = build_derived_model(&sys, &unravelling)
            .map_err(|e| CliError::Validation(e.to_string()))?;

        let dim = model.state_dim();
        let mean = match (&self.run.x0, &default_init) {
            (Some(x0), _) => {
                if x0.iter().any(|v| !v.is_finite()) {
                    return Err(CliError::Validation("run.x0: entries must be finite".into()));
                }
                DVector::from_row_slice(x0)
            }
            (None, Some(init)) => init.mean.clone(),
            (None, None) => {
                return Err(CliError::Validation("run.x0: required for explicit systems".into()))
            }
        };
        let cov = match (&self.run.v0, &default_init) {
            (Some(v0), _) => to_matrix(v0, "run.v0")?,
            (None, Some(init)) => init.cov.clone(),
            (None, None) => {
                return Err(CliError::Validation("run.v0: required for explicit systems".into()))
            }
        };
        if mean.len() != dim || cov.nrows() != dim || cov.ncols() != dim {
            return Err(CliError::Validation(format!(
                "run.x0/run.v0: expected dimension {dim}"
            )));
        }
        let initial = GaussianState::new(mean, cov)
            .map_err(|e| CliError::Validation(format!("run.v0: {e}")))?;

        let mut quantum_smoother = false;
        let mut classical_smoother = false;
        for name in &self.outputs.estimators {
            match name.as_str() {
                "quantum-smoothed" => quantum_smoother = true,
                "classical-smoothed" => classical_smoother = true,
                "true" | "filtered" => {}
                other => {
                    return Err(CliError::Validation(format!(
                        "outputs.estimators: unknown estimator '{other}'"
                    )))
                }
            }
        }

        Ok(ResolvedScenario {
            config: self.clone(),
            model,
            initial,
            quantum_smoother,
            classical_smoother,
        })
    }
}
