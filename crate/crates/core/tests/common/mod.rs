#![allow(dead_code)]

use coloc_core::profiles::{build_training_dataset, ColocationSample, FeatureSet};
use coloc_core::simulator::{synth_workload, SyntheticWorkload};

pub fn workload(n_apps: usize, seed: u64) -> SyntheticWorkload {
    synth_workload(n_apps, seed).unwrap()
}

pub fn dataset(w: &SyntheticWorkload, fs: FeatureSet) -> Vec<ColocationSample> {
    build_training_dataset(&w.profiles, &w.colocations, &fs).unwrap()
}
