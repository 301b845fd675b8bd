//! Built-in experiment presets.

use super::config::{
    GradientChoice, InitialChoice, InternalChoice, MobilityChoice, PotentialChoice,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub n_t: usize,
    pub n_x: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub mobility: MobilityChoice,
    pub internal: InternalChoice,
    pub potential: PotentialChoice,
    pub gradient: GradientChoice,
    pub initial: InitialChoice,
    /// Final step shown in the reference figures.
    pub steps: usize,
    pub snapshot_every: usize,
}

const FP_POTENTIAL: PotentialChoice = PotentialChoice::Quadratic {
    a: 50.0,
    center: 0.5,
};
const CH_MOBILITY: MobilityChoice = MobilityChoice::Bounded {
    c: 1.0,
    alpha1: 1.0,
    alpha2: 1.0,
    m_max: 1.0,
};

pub fn presets() -> Vec<Preset> {
    vec![
        Preset {
            name: "fp-linear",
            description: "Fokker-Planck, linear diffusion, confining quadratic potential",
            n_t: 2,
            n_x: 300,
            tau: 1e-4,
            epsilon: 1e-8,
            mobility: MobilityChoice::Linear { m_bar: 1.0 },
            internal: InternalChoice::Entropy,
            potential: FP_POTENTIAL,
            gradient: GradientChoice::None,
            initial: InitialChoice::FpCosine,
            steps: 5000,
            snapshot_every: 10,
        },
        Preset {
            name: "fp-porous",
            description:
                "Fokker-Planck, quadratic (porous medium) diffusion, confining quadratic potential",
            n_t: 2,
            n_x: 300,
            tau: 1e-4,
            epsilon: 1e-8,
            mobility: MobilityChoice::Linear { m_bar: 1.0 },
            internal: InternalChoice::PowerLaw { q: 2.0 },
            potential: FP_POTENTIAL,
            gradient: GradientChoice::None,
            initial: InitialChoice::FpCosine,
            steps: 5000,
            snapshot_every: 10,
        },
        Preset {
            name: "cahn-hilliard-a",
            description: "Cahn-Hilliard with degenerate mobility z(1-z), theta = 0.004",
            n_t: 2,
            n_x: 200,
            tau: 0.06,
            epsilon: 1e-9,
            mobility: CH_MOBILITY,
            internal: InternalChoice::DoubleWell,
            potential: PotentialChoice::Zero,
            gradient: GradientChoice::Dirichlet { theta: 0.004 },
            initial: InitialChoice::ChCosine,
            steps: 11000,
            snapshot_every: 2,
        },
        Preset {
            name: "cahn-hilliard-b",
            description: "Cahn-Hilliard with degenerate mobility z(1-z), theta = 0.001",
            n_t: 2,
            n_x: 200,
            tau: 0.01,
            epsilon: 1e-9,
            mobility: CH_MOBILITY,
            internal: InternalChoice::DoubleWell,
            potential: PotentialChoice::Zero,
            gradient: GradientChoice::Dirichlet { theta: 0.001 },
            initial: InitialChoice::ChCosine,
            steps: 10000,
            snapshot_every: 50,
        },
        Preset {
            name: "thin-film",
            description: "Thin-film equation with linear mobility",
            n_t: 2,
            n_x: 400,
            tau: 1e-5,
            epsilon: 1e-12,
            mobility: MobilityChoice::Linear { m_bar: 1.0 },
            internal: InternalChoice::None,
            potential: PotentialChoice::Zero,
            gradient: GradientChoice::Dirichlet { theta: 1.0 },
            initial: InitialChoice::ThinFilm,
            steps: 4000,
            snapshot_every: 200,
        },
    ]
}

pub fn find(name: &str) -> Option<Preset> {
    presets().into_iter().find(|p| p.name == name)
}

pub fn names() -> Vec<&'static str> {
    presets().iter().map(|p| p.name).collect()
}
