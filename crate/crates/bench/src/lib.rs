//! Shared fixtures for the benchmarks.

use hids_core::dataset::{generate_synthetic, SynthConfig};
use hids_core::pipeline::{self, PipelineConfig, Prepared};
use hids_core::Dataset;

pub fn dataset(n_per_class: usize) -> Dataset {
    generate_synthetic(&SynthConfig {
        seed: 11,
        n_benign: n_per_class,
        n_attack: n_per_class,
        ..SynthConfig::default()
    })
    .expect("valid synthetic config")
}

/// Default pipeline fitted on `ds`, with train/test matrices ready.
pub fn prepared(ds: &Dataset) -> (PipelineConfig, Prepared) {
    let cfg = PipelineConfig::default().with_seed(11);
    let split = pipeline::split_dataset(ds, &cfg).expect("split");
    let prepared = pipeline::prepare(ds, &split, &cfg).expect("prepare");
    (cfg, prepared)
}
