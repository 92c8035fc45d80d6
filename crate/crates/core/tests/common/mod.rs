#![allow(dead_code)]

use std::collections::BTreeMap;

use portrait_core::applications::{builtin_styles, resolve_style_adapter, StyleSpec};
use portrait_core::backends::{BackendRegistry, Backends};
use portrait_core::fixtures::{identity_uploads, Persona};
use portrait_core::generation::{prepare_model, train_identity, IdentityTrainConfig, PreparedModel, TrainedIdentity};
use portrait_core::lora::{toy_base_model, LoraAdapter, WeightSet};

pub const BASE_SEED: u64 = 7;

pub fn backends() -> Backends {
    BackendRegistry::with_stubs().backends(&BTreeMap::new()).unwrap()
}

pub fn base() -> WeightSet {
    toy_base_model(BASE_SEED)
}

pub fn trained(name: &str, female: bool, seed: u64) -> TrainedIdentity {
    let uploads = identity_uploads(name, Persona { female, age: 30.0 }, 4, seed);
    train_identity(name, &uploads, &backends(), &base(), &IdentityTrainConfig::default(), 1_700_000_000).unwrap()
}

pub fn style() -> (StyleSpec, LoraAdapter) {
    let spec = builtin_styles().remove(0);
    let adapter = resolve_style_adapter(&spec, None, &base()).unwrap();
    (spec, adapter)
}

pub fn model(t: &TrainedIdentity) -> PreparedModel {
    let (spec, adapter) = style();
    prepare_model(&t.identity, Some((&spec, &adapter)), &base(), 0.25, 1.0, "").unwrap()
}
