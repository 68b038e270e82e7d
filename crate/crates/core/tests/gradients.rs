//! Module-level gradient checks; single ops are covered in the tensor crate.

mod common;

use common::module_grads;

const TOL: f64 = 1e-4;

fn assert_close(name: &str, check: fn() -> module_grads::Check) {
    let report = check().unwrap();
    assert!(
        report.max_rel_error < TOL,
        "{name}: max relative error {:e} at {}",
        report.max_rel_error,
        report.worst
    );
    assert!(report.coordinates > 0);
}

#[test]
fn cmnsm_gradients() {
    assert_close("cmnsm", module_grads::cmnsm);
}

#[test]
fn avrm_gradients() {
    assert_close("avrm", module_grads::avrm);
}

#[test]
fn tbsm_gradients() {
    assert_close("tbsm", module_grads::tbsm);
}

#[test]
fn combined_loss_gradients() {
    assert_close("combined_loss", module_grads::combined);
}

#[test]
fn encoder_gradients() {
    assert_close("time_encoder", module_grads::time_encoder);
    assert_close("freq_encoder", module_grads::freq_encoder);
    assert_close("visual_encoder", module_grads::visual_encoder);
}

#[test]
fn batch_norm_cancels_the_mask_conv_biases() {
    assert!(module_grads::cmnsm_cancelled_bias_gradient() < 1e-12);
}

#[test]
fn full_model_gradients() {
    let (err, at) = module_grads::full_model().unwrap();
    assert!(err < 1e-4, "{err:e} at {at}");
}
