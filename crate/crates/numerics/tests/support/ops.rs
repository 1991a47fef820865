//! Central finite-difference checks of every graph op.

use ampforge_numerics::gradcheck::grad_check;
use ampforge_numerics::{Graph, Result, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn point(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(&[rows, cols], 1.0, &mut rng)
}

/// Contracts an arbitrary node against fixed random weights so every output
/// coordinate influences the scalar.
fn contract(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let shape = g.value(v).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let w = g.constant(Tensor::randn(&shape, 1.0, &mut rng));
    let p = g.mul(v, w)?;
    g.sum(p)
}

pub type OpErrors = Vec<(&'static str, f64)>;

fn check<F>(out: &mut OpErrors, name: &'static str, p: &Tensor, f: F)
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let err = grad_check(
        |g, x| {
            let y = f(g, x)?;
            contract(g, y, 7)
        },
        p,
        H,
    )
    .unwrap();
    out.push((name, err));
}

fn elementwise_ops(out: &mut OpErrors) {
    let p = point(3, 4, 1);
    check(out, "scale", &p, |g, x| g.scale(x, -1.7));
    check(out, "add_scalar", &p, |g, x| g.add_scalar(x, 0.3));
    check(out, "exp", &p, |g, x| g.exp(x));
    check(out, "sigmoid", &p, |g, x| g.sigmoid(x));
    check(out, "log_sigmoid", &p, |g, x| g.log_sigmoid(x));
    check(out, "gelu", &p, |g, x| g.gelu(x));
    check(out, "mul_self", &p, |g, x| g.mul(x, x));
    check(out, "add_self", &p, |g, x| g.add(x, x));
    check(out, "sub", &p, |g, x| {
        let e = g.exp(x)?;
        g.sub(x, e)
    });
    check(out, "log", &p, |g, x| {
        let e = g.exp(x)?;
        let e = g.add_scalar(e, 0.5)?;
        g.log(e)
    });
}

fn clamp_and_minimum_away_from_kinks(out: &mut OpErrors) {
    // Points kept at least 0.05 from the clamp bounds and from each other.
    let p = Tensor::matrix(2, 3, vec![-0.7, 0.3, 0.45, 1.3, -0.1, 0.9]).unwrap();
    check(out, "clamp", &p, |g, x| g.clamp(x, -0.5, 0.8));
    check(out, "minimum", &p, |g, x| {
        let y = g.scale(x, 0.5)?;
        let y = g.add_scalar(y, 0.1)?;
        g.minimum(x, y)
    });
}

fn matrix_ops(out: &mut OpErrors) {
    let p = point(3, 4, 2);
    let w = point(4, 5, 3);
    check(out, "matmul_lhs", &p, |g, x| {
        let w = g.constant(w.clone());
        g.matmul(x, w)
    });
    let a = point(5, 3, 4);
    check(out, "matmul_rhs", &p, |g, x| {
        let a = g.constant(a.clone());
        g.matmul(a, x)
    });
    check(out, "matmul_self_t", &p, |g, x| {
        let xt = g.transpose(x)?;
        g.matmul(x, xt)
    });
    check(out, "transpose", &p, |g, x| g.transpose(x));
    let bias = Tensor::vector(vec![0.1, -0.2, 0.3, 0.4]);
    check(out, "add_row", &p, |g, x| {
        let b = g.constant(bias.clone());
        g.add_row(x, b)
    });
    let rows = point(1, 4, 5).reshape(vec![4]).unwrap();
    check(out, "add_row_bias_grad", &rows, |g, b| {
        let x = g.constant(point(3, 4, 6));
        g.add_row(x, b)
    });
}

fn normalisation_ops(out: &mut OpErrors) {
    let p = point(3, 5, 8);
    check(out, "softmax", &p, |g, x| g.softmax(x));
    check(out, "log_softmax", &p, |g, x| g.log_softmax(x));
    let gain = Tensor::vector(vec![1.0, 0.5, -0.3, 2.0, 0.8]);
    let bias = Tensor::vector(vec![0.0, 0.1, 0.2, -0.1, 0.3]);
    check(out, "layer_norm_x", &p, |g, x| {
        let ga = g.constant(gain.clone());
        let b = g.constant(bias.clone());
        g.layer_norm(x, ga, b)
    });
    check(out, "layer_norm_gain", &gain, |g, ga| {
        let x = g.constant(point(3, 5, 9));
        let b = g.constant(bias.clone());
        g.layer_norm(x, ga, b)
    });
    check(out, "layer_norm_bias", &bias, |g, b| {
        let x = g.constant(point(3, 5, 9));
        let ga = g.constant(gain.clone());
        g.layer_norm(x, ga, b)
    });
}

fn indexing_and_reduction_ops(out: &mut OpErrors) {
    let p = point(4, 3, 10);
    check(out, "gather", &p, |g, x| g.gather(x, &[2, 0, 2, 3]));
    check(out, "slice", &p, |g, x| g.slice(x, 1, 2, 1, 2));
    check(out, "concat_cols", &p, |g, x| {
        let a = g.slice(x, 0, 4, 0, 1)?;
        let b = g.exp(x)?;
        g.concat_cols(&[b, a])
    });
    check(out, "concat_rows", &p, |g, x| {
        let a = g.slice(x, 0, 1, 0, 3)?;
        g.concat_rows(&[x, a])
    });
    check(out, "pick", &p, |g, x| g.pick(x, &[0, 2, 1, 1]));
    check(out, "row_sum", &p, |g, x| g.row_sum(x));
    check(out, "reshape", &p, |g, x| g.reshape(x, vec![12]));
    check(out, "sum", &p, |g, x| {
        let e = g.exp(x)?;
        g.sum(e)
    });
    check(out, "mean", &p, |g, x| {
        let e = g.mul(x, x)?;
        g.mean(e)
    });
    let sq = point(4, 4, 11);
    check(out, "causal_mask", &sq, |g, x| {
        let m = g.causal_mask(x)?;
        g.softmax(m)
    });
}

fn softmax_onehot_mean_against_finite_differences(out: &mut OpErrors) {
    // loss = mean(softmax(z) · onehot)
    let z = point(3, 6, 12);
    let onehot = {
        let mut t = Tensor::zeros(&[3, 6]);
        for (i, j) in [(0, 1), (1, 5), (2, 0)] {
            t.data_mut()[i * 6 + j] = 1.0;
        }
        t
    };
    let err = grad_check(
        |g, x| {
            let s = g.softmax(x)?;
            let oh = g.constant(onehot.clone());
            let p = g.mul(s, oh)?;
            g.mean(p)
        },
        &z,
        1e-5,
    )
    .unwrap();
    out.push(("softmax_onehot_mean", err));
}

fn attention_block_composite(out: &mut OpErrors) {
    // A single causal attention head assembled from primitive ops.
    let x = point(4, 6, 13);
    let wq = point(6, 6, 14);
    let wk = point(6, 6, 15);
    check(out, "attention", &x, |g, x| {
        let wq = g.constant(wq.clone());
        let wk = g.constant(wk.clone());
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let kt = g.transpose(k)?;
        let s = g.matmul(q, kt)?;
        let s = g.scale(s, 0.4)?;
        let s = g.causal_mask(s)?;
        let a = g.softmax(s)?;
        g.matmul(a, x)
    });
}

/// Relative gradient error of every op check, by name.
pub fn op_gradient_errors() -> OpErrors {
    let mut out = Vec::new();
    elementwise_ops(&mut out);
    clamp_and_minimum_away_from_kinks(&mut out);
    matrix_ops(&mut out);
    normalisation_ops(&mut out);
    indexing_and_reduction_ops(&mut out);
    softmax_onehot_mean_against_finite_differences(&mut out);
    attention_block_composite(&mut out);
    out
}
