//! Central-difference checks of every differentiable op.

use guidesum_autodiff::{finite_difference_check, multi_head_attention, AttentionMask, Init, ParamSet, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn params_with(shapes: &[(&str, &[usize])], seed: u64) -> ParamSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    for (name, shape) in shapes {
        p.add(name, shape, Init::Normal { std: 1.0 }, &mut rng).unwrap();
    }
    p
}

/// Reduces a matrix to a scalar with fixed random weights so every entry
/// carries a distinct gradient.
fn weighted_sum(tape: &mut Tape<'_, f64>, x: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let w = tape.constant(w)?;
    let y = tape.mul(x, w)?;
    tape.sum(y)
}

fn check<L>(mut params: ParamSet<f64>, loss: L)
where
    L: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let report = finite_difference_check(&mut params, loss, TOL).unwrap();
    assert!(report.passed(), "worst: {:?}", report.worst());
}

#[test]
fn matmul_and_transposed_matmul() {
    let p = params_with(&[("a", &[3, 4]), ("b", &[4, 2]), ("c", &[5, 4])], 10);
    check(p, |t| {
        let (a, b, c) = (t.param(t.params().id("a")?), t.param(t.params().id("b")?), t.param(t.params().id("c")?));
        let ab = t.matmul(a, b)?;
        let ac = t.matmul_t(a, c)?;
        let l1 = weighted_sum(t, ab, 1)?;
        let l2 = weighted_sum(t, ac, 2)?;
        t.add(l1, l2)
    });
}

#[test]
fn elementwise_ops() {
    let p = params_with(&[("a", &[2, 3]), ("b", &[2, 3]), ("r", &[3])], 11);
    check(p, |t| {
        let (a, b, r) = (t.param(t.params().id("a")?), t.param(t.params().id("b")?), t.param(t.params().id("r")?));
        let s = t.add(a, b)?;
        let m = t.mul(s, a)?;
        let m = t.add_row(m, r)?;
        let m = t.scale(m, 0.7)?;
        weighted_sum(t, m, 3)
    });
}

#[test]
fn relu_away_from_kink() {
    let mut p = params_with(&[("a", &[3, 3])], 12);
    for v in p.by_name_mut("a").unwrap().data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    check(p, |t| {
        let a = t.param(t.params().id("a")?);
        let y = t.relu(a)?;
        weighted_sum(t, y, 4)
    });
}

#[test]
fn gelu() {
    let p = params_with(&[("a", &[4, 3])], 13);
    check(p, |t| {
        let a = t.param(t.params().id("a")?);
        let y = t.gelu(a)?;
        weighted_sum(t, y, 5)
    });
}

#[test]
fn softmax_both_axes_and_masked() {
    let p = params_with(&[("a", &[3, 4])], 14);
    check(p, |t| {
        let a = t.param(t.params().id("a")?);
        let rows = t.softmax(a, 1)?;
        let cols = t.softmax(a, 0)?;
        let mask = AttentionMask::causal(4);
        let sq = t.slice_rows(a, 0, 3)?;
        let sq = t.concat_rows(&[sq, a])?;
        let sq = t.slice_rows(sq, 0, 4)?;
        let masked = t.masked_softmax(sq, Some(mask.as_slice()))?;
        let l1 = weighted_sum(t, rows, 6)?;
        let l2 = weighted_sum(t, cols, 7)?;
        let l3 = weighted_sum(t, masked, 8)?;
        let l = t.add(l1, l2)?;
        t.add(l, l3)
    });
}

#[test]
fn layer_norm() {
    let p = params_with(&[("x", &[3, 5]), ("g", &[5]), ("b", &[5])], 15);
    check(p, |t| {
        let (x, g, b) = (t.param(t.params().id("x")?), t.param(t.params().id("g")?), t.param(t.params().id("b")?));
        let y = t.layer_norm(x, g, b)?;
        weighted_sum(t, y, 9)
    });
}

#[test]
fn embedding_concat_slice_transpose() {
    let p = params_with(&[("e", &[6, 3]), ("w", &[3, 2])], 16);
    check(p, |t| {
        let (e, w) = (t.param(t.params().id("e")?), t.param(t.params().id("w")?));
        let rows = t.embedding(e, &[1, 4, 1, 0])?;
        let cols = t.concat_cols(&[rows, rows])?;
        let part = t.slice_cols(cols, 1, 5)?;
        let tr = t.transpose(part)?;
        let proj = t.matmul(rows, w)?;
        let l1 = weighted_sum(t, tr, 10)?;
        let l2 = weighted_sum(t, proj, 11)?;
        t.add(l1, l2)
    });
}

#[test]
fn cross_entropy() {
    let p = params_with(&[("logits", &[4, 5])], 17);
    check(p, |t| {
        let l = t.param(t.params().id("logits")?);
        t.cross_entropy(l, &[0, 3, 4, 3])
    });
}

#[test]
fn attention_with_masks() {
    let p = params_with(&[("q", &[3, 4]), ("kv", &[5, 4])], 18);
    check(p, |t| {
        let (q, kv) = (t.param(t.params().id("q")?), t.param(t.params().id("kv")?));
        let mask = AttentionMask::key_padding(3, &[true, true, false, true, false]);
        let cross = multi_head_attention(t, q, kv, kv, Some(&mask), 2)?;
        let selfa = multi_head_attention(t, q, q, q, Some(&AttentionMask::causal(3)), 2)?;
        let l1 = weighted_sum(t, cross, 12)?;
        let l2 = weighted_sum(t, selfa, 13)?;
        t.add(l1, l2)
    });
}

#[test]
fn random_two_layer_network() {
    let p = params_with(
        &[("x", &[4, 3]), ("w1", &[3, 8]), ("b1", &[8]), ("w2", &[8, 5]), ("b2", &[5])],
        19,
    );
    check(p, |t| {
        let id = |t: &Tape<'_, f64>, n: &str| t.params().id(n);
        let (x, w1, b1, w2, b2) = (
            t.param(id(t, "x")?),
            t.param(id(t, "w1")?),
            t.param(id(t, "b1")?),
            t.param(id(t, "w2")?),
            t.param(id(t, "b2")?),
        );
        let h = t.matmul(x, w1)?;
        let h = t.add_row(h, b1)?;
        let h = t.gelu(h)?;
        let o = t.matmul(h, w2)?;
        let o = t.add_row(o, b2)?;
        t.cross_entropy(o, &[1, 0, 4, 2])
    });
}

#[test]
fn quadratic_loss_agrees() {
    let mut p = params_with(&[("theta", &[7])], 20);
    let report = finite_difference_check(
        &mut p,
        |t| {
            let th = t.param(t.params().id("theta")?);
            let sq = t.mul(th, th)?;
            let s = t.sum(sq)?;
            t.scale(s, 0.5)
        },
        TOL,
    )
    .unwrap();
    // Central differences are exact for quadratics up to rounding.
    assert!(report.params[0].max_abs_error < 1e-9, "{report:?}");
    assert!(report.passed());
}

#[test]
fn detached_path_fails_the_check() {
    // θ·stop_grad(θ): the backward rule only sees one factor.
    let mut p = params_with(&[("theta", &[5])], 21);
    let report = finite_difference_check(
        &mut p,
        |t| {
            let id = t.params().id("theta")?;
            let th = t.param(id);
            let detached = t.constant(t.params().get(id).clone())?;
            let prod = t.mul(th, detached)?;
            t.sum(prod)
        },
        TOL,
    )
    .unwrap();
    assert!(!report.passed());
    assert!(report.max_rel_error() > 0.4);
}
