//! Invariants of the enhancement modules, the fusion module and the encoders.

mod common;

use adavsr::avrm::{grid_side, partition_regions, region_attention, weighted_regions};
use adavsr::cmnsm::{cross_modal_attention, spatial_mean};
use adavsr::frontend::{FreqEncoder, TimeEncoder, VisualEncoder};
use adavsr::tbsm::prune_normalize;
use adavsr::{Graph, Mode, ParamStore, Tape, Tensor};
use common::criteria;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn tbsm_transpose_pruning_and_fallback() {
    criteria::tbsm_suite().unwrap();
}

#[test]
fn residual_mask_is_exact_and_open_unit() {
    criteria::mask_identity(200).unwrap();
}

#[test]
fn avrm_pools_convexly() {
    criteria::avrm_convexity().unwrap();
}

#[test]
fn block_averaging_and_noise_levels() {
    criteria::dual_stream_encoding().unwrap();
}

fn matrix() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |d| Tensor::new(&[r, c], d).unwrap())
    })
}

proptest! {
    #[test]
    fn pruned_rows_are_distributions_or_empty(beta in matrix(), tau in 0.0f64..1.2) {
        let tape = Tape::new();
        let g = tape.tensor(prune_normalize(&tape, tape.constant(beta.clone()).unwrap(), tau).unwrap());
        for r in 0..g.dim(0) {
            let row = g.row(r);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            let s: f64 = row.iter().sum();
            prop_assert!(s == 0.0 || (s - 1.0).abs() <= 1e-12);
            // links only survive where the raw strength was positive
            for (c, &x) in row.iter().enumerate() {
                prop_assert!(x == 0.0 || beta.at(&[r, c]) > 0.0);
            }
        }
    }

    #[test]
    fn cross_modal_attention_rows_are_distributions(t in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::new();
        let mut c = |s: &[usize]| tape.constant(uniform(s, &mut rng)).unwrap();
        let (a, v, wq, wk, wv) = (c(&[t, 3]), c(&[t, 3]), c(&[3, 4]), c(&[3, 4]), c(&[3, 4]));
        let out = cross_modal_attention(&tape, a, v, wq, wk, wv).unwrap();
        let w = tape.tensor(out.weights);
        prop_assert_eq!(w.shape(), &[t, t]);
        for r in 0..t {
            prop_assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        prop_assert_eq!(tape.shape(out.context), vec![t, 4]);
    }
}

#[test]
fn spatial_mean_averages_each_channel() {
    let tape = Tape::new();
    let fv = Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64);
    let m = tape.tensor(spatial_mean(&tape, tape.constant(fv).unwrap()).unwrap());
    assert_eq!(m.shape(), &[2, 3]);
    assert_eq!(m.data(), &[1.5, 5.5, 9.5, 13.5, 17.5, 21.5]);
}

#[test]
fn regions_follow_the_grid() {
    assert_eq!(grid_side(9).unwrap(), 3);
    assert!(grid_side(8).is_err());
    assert!(grid_side(0).is_err());
    let tape = Tape::new();
    // channel 0 of frame 0 holds the row index, so region i has mean of its rows
    let fv = Tensor::from_fn(&[1, 1, 6, 6], |i| (i / 6) as f64);
    let r = tape.tensor(partition_regions(&tape, tape.constant(fv).unwrap(), 9).unwrap());
    assert_eq!(r.shape(), &[1, 9, 1]);
    for i in 0..9 {
        assert_eq!(r.at(&[0, i, 0]), (i / 3) as f64 * 2.0 + 0.5);
    }
    let bad = tape.constant(Tensor::zeros(&[1, 1, 4, 4])).unwrap();
    assert!(partition_regions(&tape, bad, 9).is_err());
}

#[test]
fn one_hot_region_weights_select_a_region() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tape = Tape::new();
    let regions = tape.constant(uniform(&[2, 4, 3], &mut rng)).unwrap();
    let w = tape.constant(Tensor::new(&[2, 4], vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
    let pooled = tape.tensor(weighted_regions(&tape, w, regions).unwrap());
    let r = tape.tensor(regions);
    for c in 0..3 {
        assert_eq!(pooled.at(&[0, c]), r.at(&[0, 2, c]));
        assert_eq!(pooled.at(&[1, c]), r.at(&[1, 0, c]));
    }
}

#[test]
fn region_attention_checks_shapes() {
    let tape = Tape::new();
    let z = |s: &[usize]| tape.constant(Tensor::zeros(s)).unwrap();
    assert!(region_attention(&tape, z(&[3, 4]), z(&[2, 9, 4]), z(&[4, 2]), z(&[4, 2]), z(&[2])).is_err());
    let w: Tensor<f64> = tape.tensor(region_attention(&tape, z(&[2, 4]), z(&[2, 9, 4]), z(&[4, 2]), z(&[4, 2]), z(&[2])).unwrap());
    assert!(w.data().iter().all(|&x| (x - 1.0 / 9.0).abs() < 1e-15));
}

#[test]
fn encoders_produce_one_row_per_video_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let time = TimeEncoder::new(&mut store, &mut rng, "time", 8);
    let freq = FreqEncoder::new(&mut store, &mut rng, "freq", 40, 8);
    let visual = VisualEncoder::new(&mut store, &mut rng, "visual", 1, 8);
    let g = Graph::new(&store, Mode::Eval);
    let t1 = 5;
    let wave = g.constant(uniform(&[t1 * 640, 1], &mut rng)).unwrap();
    assert_eq!(g.shape(time.forward(&g, wave).unwrap()), vec![t1, 8]);
    let spec = g.constant(uniform(&[198, 40], &mut rng)).unwrap();
    let enc = freq.forward(&g, spec, t1).unwrap();
    assert_eq!(g.shape(enc.output), vec![t1, 8]);
    // averaged rows are constant inside each block of 25
    let avg = g.tensor(enc.averaged);
    for r in 0..avg.dim(0) {
        assert_eq!(avg.row(r), avg.row(r - r % 25));
    }
    let frames = g.constant(uniform(&[t1, 24, 24, 1], &mut rng)).unwrap();
    assert_eq!(g.shape(visual.forward(&g, frames).unwrap()), vec![t1, 8, 3, 3]);
    let odd = g.constant(uniform(&[700, 1], &mut rng)).unwrap();
    assert!(time.forward(&g, odd).is_err());
}
