//! One finite-difference check per differentiable graph op.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use vlalign::numeric::{grad_check, GradCheckConfig, Graph, ParamId, ParamStore, Tensor, Var};

pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    /// Builds the op from the parameter vars; the harness reduces the output
    /// to a scalar with fixed random weights.
    pub build: fn(&mut Graph, &[Var]) -> vlalign::Result<Var>,
    /// Outputs that already are the scalar loss skip the weighted reduction.
    pub scalar: bool,
}

fn case(name: &'static str, shapes: &[&[usize]], build: fn(&mut Graph, &[Var]) -> vlalign::Result<Var>) -> OpCase {
    OpCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        build,
        scalar: false,
    }
}

fn loss_case(name: &'static str, shapes: &[&[usize]], build: fn(&mut Graph, &[Var]) -> vlalign::Result<Var>) -> OpCase {
    OpCase {
        scalar: true,
        ..case(name, shapes, build)
    }
}

fn soft_target() -> Tensor {
    Tensor::matrix(3, 4, vec![0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 0.5, 0.5, 0.25, 0.25, 0.25, 0.25]).unwrap()
}

pub fn cases() -> Vec<OpCase> {
    vec![
        case("matmul", &[&[3, 4], &[4, 5]], |g, p| g.matmul(p[0], p[1])),
        case("matmul_t", &[&[3, 4], &[5, 4]], |g, p| g.matmul_t(p[0], p[1])),
        case("add", &[&[3, 4], &[3, 4]], |g, p| g.add(p[0], p[1])),
        case("add_bias", &[&[3, 4], &[4]], |g, p| g.add_bias(p[0], p[1])),
        case("mul", &[&[3, 4], &[3, 4]], |g, p| g.mul(p[0], p[1])),
        case("scale", &[&[3, 4]], |g, p| g.scale(p[0], -1.7)),
        case("relu", &[&[3, 4]], |g, p| g.relu(p[0])),
        case("layer_norm", &[&[3, 6], &[6], &[6]], |g, p| g.layer_norm(p[0], p[1], p[2])),
        case("attention", &[&[3, 8], &[5, 8], &[5, 8]], |g, p| {
            g.attention(p[0], p[1], p[2], 2, &[true; 5])
        }),
        case("attention_masked", &[&[3, 8], &[5, 8], &[5, 8]], |g, p| {
            g.attention(p[0], p[1], p[2], 4, &[true, false, true, true, false])
        }),
        case("gather_rows", &[&[4, 3]], |g, p| g.gather_rows(p[0], &[2, 0, 2])),
        case("concat_cols", &[&[3, 2], &[3, 4]], |g, p| g.concat_cols(&[p[0], p[1]])),
        loss_case("sum", &[&[3, 4]], |g, p| {
            let sq = g.mul(p[0], p[0])?;
            g.sum(sq)
        }),
        loss_case("mean", &[&[3, 4]], |g, p| {
            let sq = g.mul(p[0], p[0])?;
            g.mean(sq)
        }),
        loss_case("cross_entropy", &[&[3, 5]], |g, p| g.cross_entropy(p[0], &[4, 0, 2])),
        loss_case("binary_cross_entropy", &[&[3, 1]], |g, p| {
            g.binary_cross_entropy(p[0], &[true, false, true])
        }),
        loss_case("mse", &[&[3, 2]], |g, p| g.mse(p[0], &[0.5, -1.0, 2.0, 0.0, 0.3, 0.1])),
        case("top_k_softmax", &[&[3, 6]], |g, p| g.top_k_softmax(p[0], 3)),
        loss_case("kl_rows", &[&[3, 4]], |g, p| {
            let probs = g.top_k_softmax(p[0], 4)?;
            g.kl_rows(&soft_target(), probs, &[true, true, false])
        }),
        loss_case("kl_rows_top_k", &[&[3, 4]], |g, p| {
            let probs = g.top_k_softmax(p[0], 3)?;
            g.kl_rows(&soft_target(), probs, &[true, false, true])
        }),
        loss_case("weighted_sum", &[&[1], &[1], &[2, 2]], |g, p| {
            let a = g.mul(p[0], p[0])?;
            let b = g.mul(p[1], p[1])?;
            let c = g.mul(p[2], p[2])?;
            let c = g.mean(c)?;
            g.weighted_sum(&[(a, 0.3), (b, -2.0), (c, 1.5)])
        }),
    ]
}

/// Checks one op with parameters drawn from N(0, 1) and returns the largest
/// relative error.
pub fn check(case: &OpCase, seed: u64) -> vlalign::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = case
        .shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n: usize = s.iter().product();
            let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            store.add(format!("p{i}"), Tensor::new(s.clone(), data).unwrap()).unwrap()
        })
        .collect();
    let weight_dist = Uniform::new(-1.0, 1.0);
    let mut weights_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let out_shape = {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let out = (case.build)(&mut g, &vars)?;
        g.value(out).shape().to_vec()
    };
    let n: usize = out_shape.iter().product();
    let weights = Tensor::new(out_shape, (0..n).map(|_| weight_dist.sample(&mut weights_rng)).collect())?;
    let report = grad_check(
        &mut store,
        &[],
        |g| {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
            let out = (case.build)(g, &vars)?;
            if case.scalar {
                return Ok(out);
            }
            let w = g.input(weights.clone())?;
            let weighted = g.mul(out, w)?;
            g.sum(weighted)
        },
        &GradCheckConfig::default(),
    )?;
    Ok(report.max_rel_err())
}
