//! Densifying the domain chain with flow-generated pseudo-domains and the
//! end-to-end adaptation pipeline.

mod index_set;
mod pipeline;
mod pseudo;

pub use index_set::{time_index_set, IndexOrigin, TimeIndexSet};
pub use pipeline::{
    cycle_for_run, run_gda, ChainDataset, CycleMode, GdaConfig, GdaRun, RunManifest, StepProvenance,
};
pub use pseudo::{generate_pseudo_domain, pseudo_domain_seed, PseudoDomain};
