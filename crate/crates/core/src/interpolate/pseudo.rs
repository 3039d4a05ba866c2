use rand::Rng;
use rand_distr::StandardNormal;

use crate::cnf::{transport_batch, FlowModel, TransportOptions};
use crate::diffmath::Mat;
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::scalar::Scalar;

/// Samples carried by the flow from the base distribution to time `time_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDomain<F> {
    pub time_index: F,
    pub samples: Mat<F>,
    /// Base draws; `samples[i]` is the transport of `z[i]` from 0 to `time_index`.
    pub z: Mat<F>,
    pub seed: u64,
}

/// Seed of the pseudo-domain at `j`, so every α that visits `j` sees the same samples.
pub fn pseudo_domain_seed<F: Scalar>(seed: SeedTree, j: F) -> SeedTree {
    seed.child(&format!("pseudo@{}", j.to_exact_string()))
}

pub fn generate_pseudo_domain<F: Scalar>(flow: &FlowModel<F>, j: F, n: usize, seed: SeedTree) -> Result<PseudoDomain<F>> {
    if n == 0 {
        return Err(Error::InvalidArgument("pseudo-domain size must be positive".into()));
    }
    if !(j > F::zero()) || j > flow.horizon() + F::of(crate::data::TIME_EPS) {
        return Err(Error::InvalidArgument(format!("pseudo-domain index {j} outside (0, {}]", flow.horizon())));
    }
    let d = flow.dim();
    let mut rng = seed.rng();
    let z: Vec<F> = (0..n * d).map(|_| F::of(rng.sample::<f64, _>(StandardNormal))).collect();
    let z = Mat::from_vec(n, d, z)?;
    let out = transport_batch(flow, &z, F::zero(), j, TransportOptions::default())?;
    Ok(PseudoDomain {
        time_index: j,
        samples: out.endpoints,
        z,
        seed: seed.seed(),
    })
}
