//! Property checks that both the focused test files and the acceptance
//! suite run. Each returns a one-line summary on success and the first
//! counterexample on failure.

use adavsr::avrm::{partition_regions, Avrm};
use adavsr::cmnsm::Cmnsm;
use adavsr::exact::{residual_mask, residual_scale};
use adavsr::metrics::edit_distance;
use adavsr::seq::{ctc_loss, ctc_nll, required_frames, BLANK};
use adavsr::synth::{add_noise_snr, corrupt_audio, power, synth_corpus, Snr};
use adavsr::tbsm::{aggregate, connection_strength, prune_normalize, DEFAULT_TAU};
use adavsr::train::{evaluate, split, train};
use adavsr::{Graph, Mode, ParamStore, Tape, Tensor};
use adavsr_tensor::ops::block_average_repeat_values;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{all_sequences, brute_force_ctc, brute_force_edit, tiny_config, tiny_corpus};

pub type Outcome = Result<String, String>;

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn bits_equal(a: &Tensor<f64>, b: &Tensor<f64>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Exhaustive comparison for every `T <= 5`, `V <= 4`, `|y| <= 3`.
pub fn ctc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut feasible, mut infeasible, mut worst) = (0, 0, 0.0f64);
    for v in 2..=4usize {
        for y in all_sequences(v as u8 - 1, 3) {
            let target: Vec<usize> = y.iter().map(|&s| s as usize + 1).collect();
            for t in 1..=5 {
                for _ in 0..3 {
                    let lp = uniform(&[t, v], -3.0, 3.0, &mut rng).softmax(1).unwrap().map(f64::ln);
                    let want = brute_force_ctc(&lp, &target, BLANK);
                    let got = ctc_nll(&lp, &target, BLANK);
                    if required_frames(&target) > t {
                        if !(want.is_infinite() && got.is_infinite()) {
                            return Err(format!("T={t} V={v} y={target:?}: infeasible but got {got}"));
                        }
                        infeasible += 1;
                        continue;
                    }
                    let tape = Tape::new();
                    let x = tape.constant(lp).unwrap();
                    let recorded = ctc_loss(&tape, x, &target, BLANK).map_err(|e| e.to_string())?;
                    let recorded = tape.item(recorded).unwrap();
                    let err = (got - want).abs().max((recorded - want).abs());
                    worst = worst.max(err);
                    if !(err <= 1e-10) {
                        return Err(format!("T={t} V={v} y={target:?}: {got} vs enumeration {want}"));
                    }
                    feasible += 1;
                }
            }
        }
    }
    Ok(format!("{feasible} feasible and {infeasible} infeasible instances, max abs error {worst:.1e}"))
}

/// Distances and alignment counts against the recursive definition, and the
/// metric axioms, on every pair of sequences of length at most 4 over 3 symbols.
pub fn edit_distance_oracle() -> Outcome {
    let seqs = all_sequences(3, 4);
    let n = seqs.len();
    let mut d = vec![vec![0usize; n]; n];
    for (i, a) in seqs.iter().enumerate() {
        for (j, b) in seqs.iter().enumerate() {
            let c = edit_distance(a, b);
            if c.distance != brute_force_edit(a, b) {
                return Err(format!("{a:?} vs {b:?}: {} but recursion gives {}", c.distance, brute_force_edit(a, b)));
            }
            if c.substitutions + c.deletions + c.insertions != c.distance || a.len() + c.insertions != b.len() + c.deletions {
                return Err(format!("{a:?} vs {b:?}: inconsistent counts {c:?}"));
            }
            d[i][j] = c.distance;
        }
    }
    for i in 0..n {
        for j in 0..n {
            if d[i][j] != d[j][i] || (d[i][j] == 0) != (i == j) {
                return Err(format!("{:?} vs {:?} breaks symmetry or identity", seqs[i], seqs[j]));
            }
            for k in 0..n {
                if d[i][k] > d[i][j] + d[j][k] {
                    return Err(format!("triangle fails via {:?}", seqs[j]));
                }
            }
        }
    }
    Ok(format!("{} pairs, {} triples", n * n, n * n * n))
}

fn kept(t: &Tensor<f64>) -> Vec<bool> {
    t.data().iter().map(|&x| x != 0.0).collect()
}

fn stochastic_or_zero(gamma: &Tensor<f64>) -> bool {
    (0..gamma.dim(0)).all(|r| {
        let row = gamma.row(r);
        let sum: f64 = row.iter().sum();
        row.iter().all(|&x| x >= 0.0) && (row.iter().all(|&x| x == 0.0) || (sum - 1.0).abs() <= 1e-12)
    })
}

pub fn tbsm_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let taus = [0.0, 0.02, 0.05, DEFAULT_TAU, 0.15, 0.3, 0.5, 0.9, 2.0, f64::INFINITY];
    for case in 0..1000 {
        let (t, w) = (rng.gen_range(1..8), rng.gen_range(1..6));
        let tape = Tape::new();
        let v = tape.constant(uniform(&[t, w], -1.0, 1.0, &mut rng)).unwrap();
        let a = tape.constant(uniform(&[t, w], -1.0, 1.0, &mut rng)).unwrap();
        let w1v = tape.constant(uniform(&[w, w], -1.0, 1.0, &mut rng)).unwrap();
        let w1a = tape.constant(uniform(&[w, w], -1.0, 1.0, &mut rng)).unwrap();
        let (beta_va, beta_av) = connection_strength(&tape, v, a, w1v, w1a).unwrap();
        let (bva, bav) = (tape.tensor(beta_va), tape.tensor(beta_av));
        if !bits_equal(&bav, &bva.transpose().unwrap()) {
            return Err(format!("case {case}: beta_av is not the transpose of beta_va"));
        }
        // independent evaluation of the audio-to-visual direction
        let pa = tape.tensor(a).matmul(&tape.tensor(w1a)).unwrap();
        let pv = tape.tensor(v).matmul(&tape.tensor(w1v)).unwrap();
        let direct = pa.matmul(&pv.transpose().unwrap()).unwrap().map(|x| x * (1.0 / (w as f64).sqrt()));
        if !bits_equal(&bav, &direct) {
            return Err(format!("case {case}: beta_av differs from (a W1a)(v W1v)^T / sqrt(w)"));
        }
        let mut prev: Option<Vec<bool>> = None;
        for &tau in &taus {
            let gamma = tape.tensor(prune_normalize(&tape, beta_va, tau).unwrap());
            if !stochastic_or_zero(&gamma) {
                return Err(format!("case {case}, tau {tau}: a row is neither stochastic nor zero"));
            }
            let k = kept(&gamma);
            if let Some(p) = &prev {
                if k.iter().zip(p).any(|(&now, &before)| now && !before) {
                    return Err(format!("case {case}: raising tau to {tau} revived a pruned link"));
                }
            }
            if tau.is_infinite() || tau >= 1.0 {
                if k.iter().any(|&x| x) {
                    return Err(format!("case {case}: tau {tau} left a link"));
                }
                let gva = prune_normalize(&tape, beta_va, tau).unwrap();
                let gav = prune_normalize(&tape, beta_av, tau).unwrap();
                let w2v = tape.constant(uniform(&[w, w], -1.0, 1.0, &mut rng)).unwrap();
                let w2a = tape.constant(uniform(&[w, w], -1.0, 1.0, &mut rng)).unwrap();
                let (a_psp, v_psp) = aggregate(&tape, a, v, gva, gav, w2v, w2a).unwrap();
                if !bits_equal(&tape.tensor(a_psp), &tape.tensor(a)) || !bits_equal(&tape.tensor(v_psp), &tape.tensor(v)) {
                    return Err(format!("case {case}: tau {tau} does not fall back to the identity"));
                }
            }
            prev = Some(k);
        }
    }
    let tape = Tape::new();
    let beta = tape.constant(Tensor::new(&[1, 3], vec![0.3, 0.1, -0.2]).unwrap()).unwrap();
    let gamma = tape.tensor(prune_normalize(&tape, beta, DEFAULT_TAU).unwrap());
    let want = [0.75, 0.25, 0.0];
    if gamma.data().iter().zip(want).any(|(g, w)| (g - w).abs() > 1e-12) {
        return Err(format!("[0.3, 0.1, -0.2] at tau {DEFAULT_TAU} gives {:?}", gamma.data()));
    }
    Ok(format!("1000 matrices x {} thresholds; worked row gives {:?}", taus.len(), gamma.data()))
}

/// Enhanced features against `f * (1 + m)` evaluated exactly and rounded
/// once, with the mask from the real generator, over `instances * 1000`
/// elements.
pub fn mask_identity(instances: usize) -> Outcome {
    let (t1, d1) = (25, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut store = ParamStore::new();
    let module = Cmnsm::new(&mut store, &mut rng, "cmnsm", d1, d1);
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for case in 0..instances {
        let audio = uniform(&[t1, d1], -4.0, 4.0, &mut rng);
        let visual = uniform(&[t1, d1, 1, 1], -4.0, 4.0, &mut rng);
        let g = Graph::new(&store, Mode::Train);
        let out = module
            .forward(&g, g.constant(audio.clone()).unwrap(), g.constant(visual).unwrap())
            .map_err(|e| e.to_string())?;
        let (m, enhanced) = (g.tensor(out.mask.m), g.tensor(out.enhanced));
        for ((&f, &mi), &e) in audio.data().iter().zip(m.data()).zip(enhanced.data()) {
            if !(mi > 0.0 && mi < 1.0) {
                return Err(format!("case {case}: mask value {mi} outside (0, 1)"));
            }
            lo = lo.min(mi);
            hi = hi.max(mi);
            let want = residual_scale(f, mi);
            if e.to_bits() != want.to_bits() || residual_mask(f, mi).to_bits() != want.to_bits() {
                return Err(format!("case {case}: f={f:e} m={mi:e} gives {e:e}, exact {want:e}"));
            }
        }
    }
    Ok(format!("{} elements, m in [{lo:.4}, {hi:.4}]", instances * t1 * d1))
}

pub fn avrm_convexity() -> Outcome {
    let (c1, k) = (4, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst_sum = 0.0f64;
    for case in 0..1000 {
        let mut store = ParamStore::new();
        let module = Avrm::new(&mut store, &mut rng, "avrm", c1, c1, k, 4);
        let t = rng.gen_range(1..4);
        let g = Graph::new(&store, Mode::Train);
        let audio = g.constant(uniform(&[t, c1], -2.0, 2.0, &mut rng)).unwrap();
        let visual = g.constant(uniform(&[t, c1, 6, 6], -2.0, 2.0, &mut rng)).unwrap();
        let out = module.forward(&g, audio, visual).map_err(|e| e.to_string())?;
        let regions = g.tensor(partition_regions(&g, visual, k).unwrap());
        let (w, pooled) = (g.tensor(out.weights), g.tensor(out.pooled));
        for ti in 0..t {
            let sum: f64 = w.row(ti).iter().sum();
            worst_sum = worst_sum.max((sum - 1.0).abs());
            if (sum - 1.0).abs() > 1e-10 || w.row(ti).iter().any(|&x| x < 0.0) {
                return Err(format!("case {case}: weights {:?} are not a distribution", w.row(ti)));
            }
            for c in 0..c1 {
                let vals: Vec<f64> = (0..k).map(|i| regions.at(&[ti, i, c])).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let p = pooled.at(&[ti, c]);
                let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
                if p < lo - slack || p > hi + slack {
                    return Err(format!("case {case}: pooled {p} outside [{lo}, {hi}]"));
                }
            }
        }
    }
    // identical regions leave nothing to prefer
    let mut store = ParamStore::new();
    let module = Avrm::new(&mut store, &mut rng, "avrm", c1, c1, k, 4);
    let g = Graph::new(&store, Mode::Train);
    let per_channel = [0.3, -1.2, 0.7, 2.0];
    let visual = Tensor::from_fn(&[2, c1, 6, 6], |i| per_channel[(i / 36) % c1]);
    let out = module
        .forward(&g, g.constant(uniform(&[2, c1], -2.0, 2.0, &mut rng)).unwrap(), g.constant(visual).unwrap())
        .map_err(|e| e.to_string())?;
    let w = g.tensor(out.weights);
    if w.data().iter().any(|&x| (x - 1.0 / 9.0).abs() > 1e-15) {
        return Err(format!("symmetric input gives weights {:?}", w.data()));
    }
    Ok(format!("1000 instances, max |sum - 1| {worst_sum:.1e}; symmetric case uniform 1/9"))
}

fn rational(x: f64) -> BigRational {
    BigRational::from_f64(x).expect("finite")
}

/// Block averaging on the tape is idempotent, and in exact arithmetic every
/// block keeps its mean. Realised SNR of added noise hits each level.
pub fn dual_stream_encoding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for case in 0..200 {
        let (rows, cols, block) = (rng.gen_range(1..60), rng.gen_range(1..4), rng.gen_range(1..30));
        let x = uniform(&[rows, cols], -5.0, 5.0, &mut rng);
        let tape = Tape::new();
        let once = tape.block_average_repeat(tape.constant(x.clone()).unwrap(), block).unwrap();
        let twice = tape.block_average_repeat(once, block).unwrap();
        if !bits_equal(&tape.tensor(once), &tape.tensor(twice)) {
            return Err(format!("case {case}: averaging twice changed the values"));
        }
        let exact: Vec<BigRational> = x.data().iter().map(|&v| rational(v)).collect();
        let out = block_average_repeat_values(&exact, rows, cols, block);
        for start in (0..rows).step_by(block) {
            let end = (start + block).min(rows);
            for c in 0..cols {
                // a short final block is padded with its last row
                let mut sum_in = BigRational::zero();
                let mut sum_out = BigRational::zero();
                for r in start..start + block {
                    let r_in = r.min(end - 1);
                    sum_in += &exact[r_in * cols + c];
                    sum_out += &out[r_in * cols + c];
                }
                if sum_in != sum_out {
                    return Err(format!("case {case}: block at {start} changed its mean"));
                }
            }
        }
        if rows % block == 0 {
            let total_in: BigRational = exact.iter().cloned().fold(BigRational::zero(), |a, b| a + b);
            let total_out: BigRational = out.iter().cloned().fold(BigRational::zero(), |a, b| a + b);
            if total_in != total_out {
                return Err(format!("case {case}: overall mean changed"));
            }
        }
    }
    let corpus = tiny_corpus(4);
    let samples = synth_corpus(&corpus).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for level in [-5.0, 0.0, 5.0, 10.0, 15.0] {
        for (i, s) in samples.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            let noisy = add_noise_snr(&s.waveform, Snr::Db(level), &mut rng).map_err(|e| e.to_string())?;
            let (stored, _) = corrupt_audio(s, Snr::Db(level), &corpus.mel, &mut rng).map_err(|e| e.to_string())?;
            for wave in [noisy, stored] {
                let noise: Vec<f64> = wave.iter().zip(&s.waveform).map(|(y, x)| y - x).collect();
                let realised = 10.0 * (power(&s.waveform) / power(&noise)).log10();
                worst = worst.max((realised - level).abs());
                if (realised - level).abs() > 0.01 {
                    return Err(format!("sample {i}: {realised:.4} dB for a {level} dB target"));
                }
            }
        }
    }
    Ok(format!("200 idempotence/mean cases; worst SNR error {worst:.2e} dB"))
}

/// Two identical train + eval runs give byte-identical metric CSVs.
pub fn determinism() -> Outcome {
    let corpus = tiny_corpus(12);
    let cfg = tiny_config();
    let (train_set, test_set) = split(synth_corpus(&corpus).map_err(|e| e.to_string())?, 0.25).map_err(|e| e.to_string())?;
    let run = || -> Result<(String, String), String> {
        let trained = train(&cfg, &corpus, &train_set).map_err(|e| e.to_string())?;
        let report = evaluate(&trained.model, &trained.store, &corpus, &test_set, &cfg.eval_snrs.0, cfg.seed)
            .map_err(|e| e.to_string())?;
        Ok((trained.report.to_csv(), report.to_csv()))
    };
    let (first, second) = (run()?, run()?);
    if first != second {
        return Err("metric CSVs differ between identical runs".into());
    }
    Ok(format!(
        "train CSV {} bytes, eval CSV {} bytes, identical",
        first.0.len(),
        first.1.len()
    ))
}
