//! Gradient verification harness: every primitive is wrapped in a tiny graph
//! reduced to a scalar by a fixed random projection, and the reverse-mode
//! gradient of each operand is compared with [`finite_diff`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{finite_diff, Bindings, ExprGraph, NodeId, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    MatMul,
    Conv2d,
    Relu,
    Add,
    Scale,
    BiasAdd,
    BatchNorm,
    MeanReduce,
    MaxReduce,
    Sigmoid,
    Step,
    Reshape,
    Concat,
    Pick,
}

impl Primitive {
    pub const ALL: [Primitive; 14] = [
        Primitive::MatMul,
        Primitive::Conv2d,
        Primitive::Relu,
        Primitive::Add,
        Primitive::Scale,
        Primitive::BiasAdd,
        Primitive::BatchNorm,
        Primitive::MeanReduce,
        Primitive::MaxReduce,
        Primitive::Sigmoid,
        Primitive::Step,
        Primitive::Reshape,
        Primitive::Concat,
        Primitive::Pick,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Conv2d => "conv2d",
            Primitive::Relu => "relu",
            Primitive::Add => "add",
            Primitive::Scale => "scale",
            Primitive::BiasAdd => "bias",
            Primitive::BatchNorm => "batchnorm",
            Primitive::MeanReduce => "mean",
            Primitive::MaxReduce => "max",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Step => "step",
            Primitive::Reshape => "reshape",
            Primitive::Concat => "concat",
            Primitive::Pick => "pick",
        }
    }
}

/// One operand of a test graph: its name, shape and how to sample it.
struct Operand {
    name: &'static str,
    shape: Vec<usize>,
    sampler: Sampler,
}

#[derive(Clone, Copy)]
enum Sampler {
    /// Uniform in [-1, 1].
    Signed,
    /// Uniform in [-1, 1] but at least `0.05` away from zero (kink-free for relu/step).
    AwayFromZero,
    /// Uniform in [0.5, 1.5] (batch-norm variances).
    Positive,
    /// Distinct values with gaps of at least 0.05 so the argmax is stable.
    Spread,
}

fn sample(rng: &mut ChaCha8Rng, shape: &[usize], sampler: Sampler) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = match sampler {
        Sampler::Signed => (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        Sampler::AwayFromZero => (0..n)
            .map(|_| {
                let m: f64 = rng.gen_range(0.05..1.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
        Sampler::Positive => (0..n).map(|_| rng.gen_range(0.5..1.5)).collect(),
        Sampler::Spread => {
            let mut idx: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                idx.swap(i, rng.gen_range(0..=i));
            }
            idx.into_iter().map(|k| k as f64 * 0.1 + rng.gen_range(0.0..0.05) - 1.0).collect()
        }
    };
    Tensor::new(shape.to_vec(), data).expect("finite samples")
}

fn operands(p: Primitive) -> Vec<Operand> {
    use Sampler::*;
    let op = |name, shape: &[usize], sampler| Operand {
        name,
        shape: shape.to_vec(),
        sampler,
    };
    match p {
        Primitive::MatMul => vec![op("a", &[3, 4], Signed), op("b", &[4, 2], Signed)],
        Primitive::Conv2d => vec![op("x", &[1, 2, 6, 6], Signed), op("k", &[3, 2, 3, 3], Signed)],
        Primitive::Relu | Primitive::Step => vec![op("x", &[2, 3, 4], AwayFromZero)],
        Primitive::Add => vec![op("a", &[2, 5], Signed), op("b", &[2, 5], Signed)],
        Primitive::Scale | Primitive::Sigmoid | Primitive::Reshape => vec![op("x", &[2, 3, 4], Signed)],
        Primitive::BiasAdd => vec![op("x", &[2, 3, 2, 2], Signed), op("b", &[3], Signed)],
        Primitive::BatchNorm => vec![
            op("x", &[2, 3, 2, 2], Signed),
            op("gamma", &[3], Signed),
            op("beta", &[3], Signed),
            op("mean", &[3], Signed),
            op("var", &[3], Positive),
        ],
        Primitive::MeanReduce => vec![op("x", &[2, 3, 4], Signed)],
        Primitive::MaxReduce => vec![op("x", &[2, 3, 4], Spread)],
        Primitive::Concat => vec![op("a", &[2, 3], Signed), op("b", &[2, 2], Signed)],
        Primitive::Pick => vec![op("x", &[3, 4], Signed)],
    }
}

/// Builds `sum(w * primitive(operands))` with a fixed projection `w`.
fn build(p: Primitive, ops: &[Operand], projection_seed: u64) -> Result<(ExprGraph, NodeId), TensorError> {
    let mut g = ExprGraph::new();
    let ids: Vec<NodeId> = ops
        .iter()
        .map(|o| g.input(o.name, &o.shape))
        .collect::<Result<_, _>>()?;
    let out = match p {
        Primitive::MatMul => g.matmul(ids[0], ids[1])?,
        Primitive::Conv2d => g.conv2d(ids[0], ids[1], 2, 1)?,
        Primitive::Relu => g.relu(ids[0]),
        Primitive::Step => g.step(ids[0]),
        Primitive::Add => g.add(ids[0], ids[1])?,
        Primitive::Scale => g.scale(ids[0], -1.7)?,
        Primitive::Sigmoid => g.sigmoid(ids[0]),
        Primitive::Reshape => g.reshape(ids[0], &[6, 4])?,
        Primitive::BiasAdd => g.bias_add(ids[0], ids[1])?,
        Primitive::BatchNorm => g.batch_norm(ids[0], ids[1], ids[2], ids[3], ids[4], 1e-5)?,
        Primitive::MeanReduce => g.mean_reduce(ids[0], 1)?,
        Primitive::MaxReduce => g.max_reduce(ids[0], 2)?,
        Primitive::Concat => g.concat(&[ids[0], ids[1]])?,
        Primitive::Pick => g.pick(ids[0], &[1, 2])?,
    };
    let n: usize = g.shape(out).iter().product();
    let flat = g.reshape(out, &[1, n])?;
    let mut rng = ChaCha8Rng::seed_from_u64(projection_seed);
    let w = sample(&mut rng, &[n, 1], Sampler::Signed);
    let w = g.constant(w);
    let scalar = g.matmul(flat, w)?;
    Ok((g, scalar))
}

/// `|a - b| / max(|a|, |b|, floor)` over whole gradient vectors (2-norm).
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff = analytic.axpy(-1.0, numeric).norm();
    let scale = analytic.norm().max(numeric.norm()).max(1e-8);
    diff / scale
}

/// Largest relative error between `reverse_grad` and a central-difference
/// estimate (step `1e-4`) over `points` random operand draws.
pub fn max_relative_error(p: Primitive, points: usize, seed: u64) -> Result<f64, TensorError> {
    let ops = operands(p);
    let (graph, scalar) = build(p, &ops, seed ^ 0x9e37_79b9)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let values: Vec<Tensor> = ops.iter().map(|o| sample(&mut rng, &o.shape, o.sampler)).collect();
        for (k, target) in ops.iter().enumerate() {
            let mut bindings = Bindings::new();
            for (o, v) in ops.iter().zip(&values) {
                bindings.insert(o.name, v);
            }
            let analytic = graph.reverse_grad(&bindings, scalar, target.name)?;
            let numeric = finite_diff::<_, TensorError>(
                |probe| {
                    let mut b = Bindings::new();
                    for (j, (o, v)) in ops.iter().zip(&values).enumerate() {
                        b.insert(o.name, if j == k { probe } else { v });
                    }
                    Ok(graph.evaluate(&b)?.value(scalar).data()[0])
                },
                &values[k],
                1e-4,
            )?;
            worst = worst.max(relative_error(&analytic, &numeric));
        }
    }
    Ok(worst)
}
