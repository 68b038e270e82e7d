//! Tiny-shape gradient cases for every differentiable tape op. Shared by the
//! tensor gradient tests and the workspace acceptance suite.

use adavsr_tensor::{finite_diff_check_params, GradCheck, Graph, Mode, ParamStore, Result, Tape, Tensor, Var, FD_STEP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type OpFn = Box<dyn Fn(&Graph<'_, f64>, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub mode: Mode,
    pub f: OpFn,
}

fn case(name: &'static str, shapes: &[&[usize]], f: impl Fn(&Graph<'_, f64>, &[Var]) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        mode: Mode::Train,
        f: Box::new(f),
    }
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Reduces `y` to a scalar with fixed random weights.
pub fn probe(tape: &Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(y);
    let w = if shape.is_empty() {
        Tensor::scalar(rng.gen_range(0.5..1.5))
    } else {
        Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0))
    };
    let w = tape.constant(w)?;
    let prod = tape.mul(y, w)?;
    tape.sum(prod)
}

/// Checks the case with respect to every input, all drawn uniformly from
/// [-1, 1].
pub fn run_case(c: &OpCase) -> Result<GradCheck<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.name.len() as u64 * 7919);
    let mut store = ParamStore::new();
    let ids: Vec<_> = c
        .shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(&format!("in{i}"), random(s, &mut rng)))
        .collect();
    finite_diff_check_params(
        &store,
        &[],
        c.mode,
        |g| {
            let vars = ids.iter().map(|&id| g.param(id)).collect::<Result<Vec<_>>>()?;
            let y = (c.f)(g, &vars)?;
            probe(g, y, 17)
        },
        FD_STEP,
    )
}

pub fn op_cases() -> Vec<OpCase> {
    let mut cases = vec![
        case("add", &[&[3, 4], &[3, 4]], |g, v| g.add(v[0], v[1])),
        case("sub", &[&[3, 4], &[3, 4]], |g, v| g.sub(v[0], v[1])),
        case("mul", &[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1])),
        case("mul_add", &[&[3, 4], &[3, 4], &[3, 4]], |g, v| g.mul_add(v[0], v[1], v[2])),
        case("add_bias", &[&[2, 3, 4], &[4]], |g, v| g.add_bias(v[0], v[1])),
        case("scale", &[&[12]], |g, v| g.scale(v[0], -2.5)),
        case("add_scalar", &[&[12]], |g, v| g.add_scalar(v[0], 0.75)),
        case("relu", &[&[4, 4]], |g, v| g.relu(v[0])),
        case("sigmoid", &[&[4, 4]], |g, v| g.sigmoid(v[0])),
        case("tanh", &[&[4, 4]], |g, v| g.tanh(v[0])),
        case("exp", &[&[4, 4]], |g, v| g.exp(v[0])),
        case("swish", &[&[4, 4]], |g, v| g.swish(v[0])),
        case("threshold", &[&[4, 4]], |g, v| g.threshold(v[0], 0.1)),
        case("matmul", &[&[3, 4], &[4, 5]], |g, v| g.matmul(v[0], v[1])),
        case("bmm", &[&[2, 3, 4], &[2, 4, 2]], |g, v| g.bmm(v[0], v[1])),
        case("transpose", &[&[3, 5]], |g, v| g.transpose(v[0])),
        case("permute", &[&[2, 3, 4]], |g, v| g.permute(v[0], &[1, 2, 0])),
        case("reshape", &[&[3, 4]], |g, v| g.reshape(v[0], &[2, 6])),
        case("narrow", &[&[4, 5]], |g, v| g.narrow(v[0], 1, 1, 3)),
        case("concat", &[&[2, 3], &[2, 2]], |g, v| g.concat(&[v[0], v[1]], 1)),
        case("concat_rows", &[&[2, 3], &[1, 3]], |g, v| g.concat(&[v[0], v[1]], 0)),
        case("gather_rows", &[&[4, 3]], |g, v| g.gather_rows(v[0], &[3, 0, 3, 1, 1])),
        case("row", &[&[4, 3]], |g, v| g.row(v[0], 2)),
        case("broadcast_rows", &[&[3, 4]], |g, v| g.broadcast_rows(v[0], 3)),
        case("sum", &[&[3, 4]], |g, v| g.sum(v[0])),
        case("mean", &[&[3, 4]], |g, v| g.mean(v[0])),
        case("sum_axis0", &[&[3, 4]], |g, v| g.sum_axis(v[0], 0)),
        case("sum_axis1", &[&[2, 3, 4]], |g, v| g.sum_axis(v[0], 1)),
        case("mean_axis", &[&[2, 3, 4]], |g, v| g.mean_axis(v[0], 2)),
        case("softmax", &[&[3, 5]], |g, v| g.softmax(v[0], 1)),
        case("softmax_axis0", &[&[3, 5]], |g, v| g.softmax(v[0], 0)),
        case("log_softmax", &[&[3, 5]], |g, v| g.log_softmax(v[0], 1)),
        case("l1_normalize_rows", &[&[3, 5]], |g, v| g.l1_normalize_rows(v[0])),
        case("block_average_repeat", &[&[7, 3]], |g, v| g.block_average_repeat(v[0], 3)),
        case("region_pool", &[&[2, 2, 4, 4]], |g, v| g.region_pool(v[0], 2)),
        case("conv1d", &[&[7, 2], &[3, 2, 3]], |g, v| g.conv1d(v[0], v[1], 1, 1)),
        case("conv1d_strided", &[&[9, 2], &[4, 2, 2]], |g, v| g.conv1d(v[0], v[1], 2, 1)),
        case("depthwise_conv1d", &[&[6, 3], &[3, 3]], |g, v| g.depthwise_conv1d(v[0], v[1], 1)),
        case("conv2d", &[&[1, 2, 4, 4], &[2, 2, 3, 3], &[2]], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), 2, 1)
        }),
        case("conv2d_nobias", &[&[2, 1, 3, 3], &[2, 1, 2, 2]], |g, v| g.conv2d(v[0], v[1], None, 1, 0)),
        case("batch_norm_train", &[&[5, 3], &[3], &[3]], |g, v| {
            Ok(g.batch_norm(v[0], v[1], v[2], None, 1e-5)?.0)
        }),
        case("layer_norm", &[&[3, 5], &[5], &[5]], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
        case("chain", &[&[4, 3], &[3, 3], &[3]], |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.add_bias(h, v[2])?;
            let h = g.tanh(h)?;
            let a = g.softmax(h, 1)?;
            let m = g.sigmoid(h)?;
            g.mul_add(a, m, h)
        }),
    ];
    let mut eval = case("batch_norm_eval", &[&[5, 3], &[3], &[3]], |g, v| {
        let mean = [0.1, -0.2, 0.05];
        let var = [0.9, 1.3, 0.5];
        Ok(g.batch_norm(v[0], v[1], v[2], Some((&mean, &var)), 1e-5)?.0)
    });
    eval.mode = Mode::Eval;
    cases.push(eval);
    cases
}
