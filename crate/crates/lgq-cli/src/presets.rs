//! Bundled scenario presets.

/// `(name, description)` pairs for `lgq presets list`.
pub fn catalogue() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "fig1-top",
            "two-channel oscillator, g = 1: observer on the damping channel (homodyne phase \
             pi/8), partner on the position channel; the smoothed mean turns differentiable \
             once the true covariance reaches steady state",
        ),
        (
            "fig1-bottom",
            "reversed channels, g = 0.1: observer on the position channel, partner on the \
             damping channel; the smoothed mean stays stochastic even though the observer's \
             cross-correlation vanishes",
        ),
    ]
}
