use serde::{Deserialize, Serialize};

/// Per-term energies of a configuration. Terms that do not apply to a model are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub perimeter: f64,
    /// Repulsive double integral (Riesz kernel).
    pub repulsive: f64,
    /// Attractive double integral (kernel `|x-y|^α`).
    pub attractive: f64,
    /// `-∫ρ^q`.
    pub entropy: f64,
    /// Atom coupling `M ∫|x|^α ρ`.
    pub atom: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub(crate) fn summed(mut self) -> Self {
        self.total = self.perimeter + self.repulsive + self.attractive + self.entropy + self.atom;
        self
    }
}
