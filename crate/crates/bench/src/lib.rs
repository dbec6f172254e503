//! Shared inputs for the criterion benches.

use lact_core::models::{build_arch, simulate, ArchKind, ArchSpec, Simulation};
use lact_core::nn::gradcheck::random_tensor;
use lact_core::nn::{NetworkSpec, ParamStore, Tensor};
use lact_core::tomo::random_phantom;
use lact_core::{Geometry, Image};

pub const GRID: usize = 128;
pub const VIEWS: usize = 360;

pub fn phantom() -> Image {
    random_phantom(GRID, 7, 10).expect("valid phantom")
}

pub fn full_geometry() -> Geometry {
    Geometry::for_grid(GRID, 1.0, VIEWS, 0.0, 180.0).expect("valid geometry")
}

pub fn scan() -> Simulation {
    simulate(&phantom(), VIEWS, 120.0).expect("simulation")
}

/// Network, parameters and an `(input, target)` batch at desk scale.
pub fn training_step_inputs(kind: ArchKind, batch: usize, patch: usize) -> (NetworkSpec, ParamStore<f32>, Tensor<f32>, Tensor<f32>) {
    let arch = ArchSpec::new(kind, 3, 16);
    let net = build_arch(&arch).expect("valid arch");
    let params = ParamStore::init(&net, 1);
    let shape = [batch, arch.in_channels, patch, patch];
    let x = random_tensor(shape, 2).cast();
    let y = random_tensor(shape, 3).cast();
    (net, params, x, y)
}
