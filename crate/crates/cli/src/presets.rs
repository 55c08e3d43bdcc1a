//! Built-in experiment presets.
//!
//! Each preset is a complete TOML config; `aldi-is run <name>` loads it and
//! `--set` overrides apply on top exactly as for a config file. `aldi-is
//! presets` lists them.

/// One named preset.
pub struct Preset {
    /// Name accepted by `aldi-is run`.
    pub name: &'static str,
    /// One-line description for the listing.
    pub summary: &'static str,
    /// Complete TOML config.
    pub toml: &'static str,
}

/// Linear limit state in 100 dimensions, adaptive interacting dynamics,
/// every particle evaluates its own gradient.
///
/// The step scale is calibrated to the drift geometry of this benchmark:
/// the limit-state direction spreads over all 100 coordinates, so the
/// per-particle drift norm that the adaptive step divides by is ~5x the
/// largest single-coordinate drift, and the default 0.1 leaves the
/// ensemble short of stationarity within the call budget.
const LINEAR: &str = r#"
benchmark = "linear"
dimension = 100
particles = 50
is_samples = 2000
repetitions = 100
seed = 2024

[smoothing]
sigma_r = 0.1

[schedule]
eps_cumus = [0.1, 0.1, 0.1, 0.01]

[sampler]
k_min = 20
step_scale = 0.5
"#;

/// Same as `linear` with clustered gradient sharing enabled.
const LINEAR_DBSCAN: &str = r#"
benchmark = "linear"
dimension = 100
particles = 50
is_samples = 2000
repetitions = 100
seed = 2024

[smoothing]
sigma_r = 0.1

[schedule]
eps_cumus = [0.1, 0.1, 0.1, 0.01]

[sampler]
k_min = 20
step_scale = 0.5

[dbscan]
enabled = true
"#;

/// Four-branch series system in 2 dimensions; the failure set has four
/// disconnected components, so gradient sharing and the automatic
/// component count both matter. Reference value from a large Monte Carlo
/// run.
const FOUR_BRANCHES: &str = r#"
benchmark = "four-branches"
dimension = 2
particles = 50
is_samples = 1000
repetitions = 100
seed = 2024
p_ref = 2.22e-3

[smoothing]
sigma_r = 0.1

[schedule]
eps_cumus = [0.1, 0.1, 0.1, 0.05]

[sampler]
k_min = 20

[dbscan]
enabled = true
"#;

/// Darcy flow with a 100-term Karhunen-Loeve log-conductivity field
/// (101 inputs); each limit-state call solves a 1-D finite-element system,
/// so gradient sharing carries the cost budget. Reference value from a
/// large Monte Carlo run.
const DARCY: &str = r#"
benchmark = "darcy"
dimension = 101
particles = 200
is_samples = 2000
repetitions = 20
seed = 2024
p_ref = 7.78e-6

[smoothing]
sigma_r = 0.1

[schedule]
eps_cumus = [0.1, 0.1, 0.1, 0.005]

[sampler]
k_min = 20

[dbscan]
enabled = true
"#;

/// Smoothing-parameter sweep with plain fixed-step Langevin dynamics
/// (no interaction, no adaptive step, fixed horizon per level): exhibits
/// the failure modes at both extremes of the smoothing parameter.
const ULA_SWEEP: &str = r#"
benchmark = "linear"
dimension = 100
particles = 50
is_samples = 2000
repetitions = 100
seed = 2024

[sampler]
mode = "ula"
ula_step = 1e-3
ula_steps = 100

[sweep]
sigma_r = [1e-11, 1e-7, 1e-3, 1e-1, 1.0]
"#;

/// The same sweep protocol driven by the adaptive interacting dynamics
/// without covariance regularisation (gamma = 1 at every level), at the
/// sharpest smoothing the fixed-step sweep handles poorly.
const ADAPTIVE_SWEEP: &str = r#"
benchmark = "linear"
dimension = 100
particles = 50
is_samples = 2000
repetitions = 100
seed = 2024

[schedule]
gammas = [1.0, 1.0, 1.0, 1.0]

[sampler]
k_min = 20

[sweep]
sigma_r = [1e-5]
"#;

/// All built-in presets, in listing order.
pub const PRESETS: &[Preset] = &[
    Preset {
        name: "linear",
        summary: "linear limit state, d = 100, adaptive dynamics, per-particle gradients",
        toml: LINEAR,
    },
    Preset {
        name: "linear-dbscan",
        summary: "linear limit state with clustered gradient sharing",
        toml: LINEAR_DBSCAN,
    },
    Preset {
        name: "four-branches",
        summary: "four-branch series system, d = 2, four disconnected failure modes",
        toml: FOUR_BRANCHES,
    },
    Preset {
        name: "darcy",
        summary: "Darcy flow with KL-expanded conductivity, d = 101, FE solves per call",
        toml: DARCY,
    },
    Preset {
        name: "ula-sweep",
        summary: "smoothing sweep under plain fixed-step Langevin dynamics",
        toml: ULA_SWEEP,
    },
    Preset {
        name: "adaptive-sweep",
        summary: "smoothing sweep under adaptive dynamics without regularisation",
        toml: ADAPTIVE_SWEEP,
    },
];

/// Look up a preset by name.
pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}
