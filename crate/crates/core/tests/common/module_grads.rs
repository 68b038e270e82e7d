//! Central-difference checks of every module forward path at tiny shapes.

use adavsr::avrm::Avrm;
use adavsr::cmnsm::Cmnsm;
use adavsr::frontend::{FreqEncoder, TimeEncoder, VisualEncoder};
use adavsr::seq::{attention_loss, combined_loss, ctc_loss, BLANK};
use adavsr::synth::CorpusSpec;
use adavsr::tbsm::Tbsm;
use adavsr::train::init_model;
use adavsr::{ExperimentConfig, Graph, ModelInput, Mode, ParamStore, Tape, Tensor, Var};
use adavsr_tensor::{finite_diff_check_params, GradCheck, ParamId, FD_STEP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = adavsr_tensor::Result<GradCheck<f64>>;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Weighted sum with fixed random weights, so no gradient is trivially uniform.
fn probe(g: &Tape<f64>, y: Var) -> adavsr_tensor::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let w = Tensor::from_fn(&g.shape(y), |_| rng.gen_range(-1.0..1.0));
    let prod = g.mul(y, g.constant(w)?)?;
    g.sum(prod)
}

fn inputs(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, shapes: &[&[usize]]) -> Vec<ParamId> {
    shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("input{i}"), random(s, rng)))
        .collect()
}

fn run(store: &ParamStore<f64>, f: impl Fn(&Graph<'_, f64>) -> adavsr_tensor::Result<Var>) -> Check {
    finite_diff_check_params(store, &[], Mode::Train, f, FD_STEP)
}

/// Conv biases that feed batch norm: the normalisation cancels them, so
/// their exact gradient is zero and a relative check only sees rounding.
pub fn cancelled_by_batch_norm(name: &str) -> bool {
    name.contains(".mask.conv") && name.ends_with(".bias")
}

fn lift(e: adavsr::Error) -> adavsr_tensor::TensorError {
    match e {
        adavsr::Error::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

fn cmnsm_setup() -> (Cmnsm, ParamStore<f64>, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let m = Cmnsm::new(&mut store, &mut rng, "cmnsm", 4, 4);
    let x = inputs(&mut store, &mut rng, &[&[3, 4], &[3, 4, 2, 2]]);
    (m, store, x)
}

fn cmnsm_loss(m: &Cmnsm, x: &[ParamId], g: &Graph<'_, f64>) -> adavsr_tensor::Result<Var> {
    let out = m.forward(g, g.param(x[0])?, g.param(x[1])?).map_err(lift)?;
    probe(g, out.enhanced)
}

/// Every CMNSM parameter except the conv biases cancelled by batch norm.
pub fn cmnsm() -> Check {
    let (m, store, x) = cmnsm_setup();
    let ids: Vec<ParamId> = store.ids().filter(|&id| !cancelled_by_batch_norm(store.name(id))).collect();
    finite_diff_check_params(&store, &ids, Mode::Train, |g| cmnsm_loss(&m, &x, g), FD_STEP)
}

/// Largest analytic gradient on the cancelled conv biases.
pub fn cmnsm_cancelled_bias_gradient() -> f64 {
    let (m, store, x) = cmnsm_setup();
    let g = Graph::new(&store, Mode::Train).with_param_grads(true);
    let loss = cmnsm_loss(&m, &x, &g).unwrap();
    let grads = g.param_grads(loss).unwrap();
    store
        .ids()
        .filter(|&id| cancelled_by_batch_norm(store.name(id)))
        .flat_map(|id| grads.get(id).map(|t| t.data().to_vec()).unwrap_or_default())
        .fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

pub fn avrm() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let m = Avrm::new(&mut store, &mut rng, "avrm", 4, 4, 4, 3);
    let x = inputs(&mut store, &mut rng, &[&[2, 4], &[2, 4, 2, 2]]);
    run(&store, |g| {
        let out = m.forward(g, g.param(x[0])?, g.param(x[1])?).map_err(lift)?;
        probe(g, out.enhanced)
    })
}

pub fn tbsm() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let m = Tbsm::new(&mut store, &mut rng, "tbsm", 3, 0.095);
    // the aggregation weights start at zero; exercise them with random values
    for id in [m.w2v, m.w2a] {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = random(&shape, &mut rng);
    }
    let x = inputs(&mut store, &mut rng, &[&[3, 3], &[3, 3]]);
    run(&store, |g| {
        let out = m.forward(g, g.param(x[0])?, g.param(x[1])?).map_err(lift)?;
        probe(g, out.fusion)
    })
}

pub fn combined() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let x = inputs(&mut store, &mut rng, &[&[5, 5], &[3, 5]]);
    run(&store, |g| {
        let lp = g.log_softmax(g.param(x[0])?, 1)?;
        let ctc = ctc_loss(g, lp, &[1, 2, 2], BLANK).map_err(lift)?;
        let att = attention_loss(g, g.param(x[1])?, &[1, 2, 4], 0.1).map_err(lift)?;
        combined_loss(g, ctc, att, 0.9).map_err(lift)
    })
}

pub fn time_encoder() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let m = TimeEncoder::new(&mut store, &mut rng, "time", 4);
    let x = inputs(&mut store, &mut rng, &[&[640, 1]]);
    run(&store, |g| probe(g, m.forward(g, g.param(x[0])?).map_err(lift)?))
}

pub fn freq_encoder() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let m = FreqEncoder::new(&mut store, &mut rng, "freq", 4, 3).with_block(2);
    let x = inputs(&mut store, &mut rng, &[&[7, 4]]);
    run(&store, |g| probe(g, m.forward(g, g.param(x[0])?, 3).map_err(lift)?.output))
}

pub fn visual_encoder() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let m = VisualEncoder::new(&mut store, &mut rng, "visual", 1, 4);
    let x = inputs(&mut store, &mut rng, &[&[2, 8, 8, 1]]);
    run(&store, |g| probe(g, m.forward(g, g.param(x[0])?).map_err(lift)?))
}

/// Hybrid loss of a whole tiny model on every parameter tensor of at most
/// 32 elements. Returns the worst `|a - n| / max(|a|, 1e-6)`: deep in the
/// network some gradients are near 1e-9, where central differences on an
/// O(1) loss only resolve rounding, so this check uses a coarser floor than
/// the module checks.
pub fn full_model() -> Result<(f64, String), adavsr::Error> {
    let cfg = ExperimentConfig {
        c1: 4,
        d1: 4,
        k: 1,
        d_att: 2,
        encoder_heads: 1,
        decoder_heads: 1,
        encoder_kernel: 3,
        encoder_ff: 4,
        decoder_ff: 4,
        ..ExperimentConfig::default()
    };
    let corpus = CorpusSpec::default();
    let (model, store) = init_model(&cfg, &corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frames = Tensor::from_fn(&[3, 8, 8, 1], |_| rng.gen_range(0.0..1.0));
    let wave: Vec<f64> = (0..3 * 640).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let logmel = Tensor::from_fn(&[corpus.mel.n_mels, 10], |_| rng.gen_range(-8.0..0.0));
    let input = ModelInput::new(&frames, &wave, &logmel)?;
    let loss_at = |s: &ParamStore<f64>| -> adavsr::Result<f64> {
        let g = Graph::new(s, Mode::Train);
        Ok(g.item(model.loss(&g, &input, &[1, 2])?.1.total)?)
    };
    let g = Graph::new(&store, Mode::Train).with_param_grads(true);
    let grads = g.param_grads(model.loss(&g, &input, &[1, 2])?.1.total)?;
    let mut probe_store = store.clone();
    let mut worst = (0.0f64, String::new());
    for id in store.ids().filter(|&id| store.get(id).numel() <= 32) {
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).data()[i];
            probe_store.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = loss_at(&probe_store)?;
            probe_store.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = loss_at(&probe_store)?;
            probe_store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[i]);
            let err = (analytic - numeric).abs() / analytic.abs().max(1e-6);
            if err > worst.0 {
                worst = (err, format!("{}[{i}]", store.name(id)));
            }
        }
    }
    Ok(worst)
}

/// Every module case by name.
pub fn all() -> Vec<(&'static str, fn() -> Check)> {
    vec![
        ("cmnsm", cmnsm as fn() -> Check),
        ("avrm", avrm),
        ("tbsm", tbsm),
        ("combined_loss", combined),
        ("time_encoder", time_encoder),
        ("freq_encoder", freq_encoder),
        ("visual_encoder", visual_encoder),
    ]
}
