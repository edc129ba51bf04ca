//! Fixed inputs shared by the benchmarks.

use opre_core::contact::{cppr_instance, CpprModel};
use opre_core::{
    sample_stretches, ConnectionFamily, ContactInstance, Distribution, KernelKind, OpenConfiguration, Seed,
    StretchEnvironment, StretchSpec,
};

pub const SEED: Seed = Seed(0x0b5e_55ed);

/// Heavy-tailed columns with geometric stretches.
pub fn environment(width: usize) -> StretchEnvironment {
    let spec = StretchSpec::new(Distribution::Geometric { p: 0.5 }, Distribution::Geometric { p: 0.5 });
    sample_stretches(&spec, width, SEED).expect("valid spec")
}

pub fn power_family(lambda: f64) -> ConnectionFamily {
    ConnectionFamily::new(KernelKind::Power, lambda)
}

pub fn configuration(t_max: u32, x_max: u32) -> OpenConfiguration {
    let env = environment(x_max as usize + 1);
    let fam = power_family(3.0);
    opre_core::sample_opre(opre_core::Ground::Plain(&env), &ConnectionFamily::constant(0.95), &fam, t_max, x_max, SEED)
        .expect("window fits")
}

pub fn contact_instance(n: usize, horizon: f64) -> ContactInstance {
    cppr_instance(CpprModel::Uniform, 5.0, n, horizon, SEED).expect("valid instance")
}

/// Stretches of the temporal model, one per edge layer.
pub fn temporal_stretches(layers: usize) -> Vec<f64> {
    let spec = StretchSpec::new(Distribution::Constant { value: 0.0 }, Distribution::Exponential { rate: 1.0 });
    opre_core::percolation::sample_temporal_stretches(&spec, layers, SEED).expect("valid spec")
}
