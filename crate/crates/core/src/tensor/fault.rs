//! Deliberate gradient corruption for negative-control tests. Only compiled
//! with the `fault-injection` feature.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

fn registry() -> &'static Mutex<HashMap<u64, f64>> {
    static REG: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    REG.get_or_init(Default::default)
}

/// Scales the convolution weight gradient of the tensor with this id by
/// `factor` on every subsequent backward pass.
pub fn corrupt(weight_id: u64, factor: f64) {
    registry().lock().expect("fault registry").insert(weight_id, factor);
}

pub fn clear(weight_id: u64) {
    registry().lock().expect("fault registry").remove(&weight_id);
}

pub(crate) fn apply(weight_id: u64, grad: &mut [f64]) {
    if let Some(&f) = registry().lock().expect("fault registry").get(&weight_id) {
        grad.iter_mut().for_each(|g| *g *= f);
    }
}
