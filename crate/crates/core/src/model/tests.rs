use super::*;
use crate::numerics::gradcheck::{finite_difference_check, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::numerics::{Tape, Var};

fn toy_config(depth: usize, mode: SoftmaxMode) -> ModelConfig {
    ModelConfig {
        depth,
        d: 8,
        heads: 2,
        d_mlp: 12,
        vocab: 7,
        activation: Activation::Gelu,
        softmax_mode: mode,
        context_length: 16,
        positional_embeddings: PositionalEmbeddings::None,
    }
}

/// Inflates the small init so attention and MLP actually matter.
fn spiced(mut m: Model, factor: f64) -> Model {
    for (name, t) in m.params_mut() {
        if !name.ends_with("beta") {
            *t = t.scale(factor);
        }
    }
    m
}

#[test]
fn tau_cases() {
    assert_eq!(tempered_tau(SoftmaxMode::Standard, 7.0, 1).unwrap(), 1.0);
    let t = tempered_tau(SoftmaxMode::Tempered, 2.0, 10).unwrap();
    assert!((t - 4.605_170_185_988_09).abs() < 1e-12);
    assert!(matches!(tempered_tau(SoftmaxMode::Tempered, 1.0, 1), Err(Error::Domain(_))));
}

#[test]
fn config_invariants() {
    let mut c = toy_config(1, SoftmaxMode::Standard);
    assert!(c.validate().is_ok());
    c.heads = 3;
    assert!(c.validate().is_err());
    let mut c = toy_config(1, SoftmaxMode::Standard);
    c.vocab = 2;
    assert!(c.validate().is_err());
    assert_eq!(toy_config(1, SoftmaxMode::Standard).max_instance_length(), 7);
}

fn zero_block(d: usize, m: usize) -> BlockParams {
    BlockParams {
        wq: Tensor::zeros(&[d, d]),
        wk: Tensor::zeros(&[d, d]),
        wv: Tensor::zeros(&[d, d]),
        w1: Tensor::zeros(&[d, m]),
        b1: Tensor::zeros(&[m]),
        w2: Tensor::zeros(&[m, d]),
        b2: Tensor::zeros(&[d]),
    }
}

const RELU1: BlockShape = BlockShape { heads: 1, scale: 1.0, activation: Activation::Relu };

#[test]
fn zero_block_is_pure_residual() {
    let x = Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![3.0, 0.0, 1.0]]).unwrap();
    let out = attention_block(&x, &zero_block(3, 4), RELU1, 1.0, false).unwrap();
    assert_eq!(out, x);
}

#[test]
fn single_token_attention_is_value_projection() {
    let mut p = zero_block(2, 2);
    p.wq = Tensor::from_rows(&[vec![5.0, 1.0], vec![-3.0, 2.0]]).unwrap();
    p.wk = Tensor::from_rows(&[vec![0.3, 7.0], vec![1.0, 1.0]]).unwrap();
    p.wv = Tensor::from_rows(&[vec![2.0, 0.0], vec![1.0, -1.0]]).unwrap();
    let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
    let out = attention_block(&x, &p, RELU1, 3.0, false).unwrap();
    // x + x·V = (1,2) + (4,-2)
    assert_eq!(out.row(0), &[5.0, 0.0]);
}

#[test]
fn two_token_block_matches_scalar_evaluation() {
    let mut p = zero_block(2, 2);
    p.wq = Tensor::from_rows(&[vec![0.5, -1.0], vec![0.25, 2.0]]).unwrap();
    p.wk = Tensor::from_rows(&[vec![1.0, 0.0], vec![-0.5, 1.5]]).unwrap();
    p.wv = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    p.w1 = Tensor::from_rows(&[vec![1.0, -1.0], vec![0.5, 0.5]]).unwrap();
    p.b1 = Tensor::vector(vec![0.1, -0.2]);
    p.w2 = Tensor::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.0]]).unwrap();
    p.b2 = Tensor::vector(vec![0.0, 0.3]);
    let x = [[0.2, -0.4], [1.0, 0.6]];
    let tau = 1.5;

    // scalar evaluation of the composed formula, row 1 attends to rows 0 and 1
    let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
    let proj = |v: [f64; 2], w: &Tensor| [v[0] * w.at(0, 0) + v[1] * w.at(1, 0), v[0] * w.at(0, 1) + v[1] * w.at(1, 1)];
    let (q1, k0, k1) = (proj(x[1], &p.wq), proj(x[0], &p.wk), proj(x[1], &p.wk));
    let (v0, v1) = (proj(x[0], &p.wv), proj(x[1], &p.wv));
    let (s0, s1) = (tau * dot(q1, k0), tau * dot(q1, k1));
    let a0 = s0.exp() / (s0.exp() + s1.exp());
    let a1 = 1.0 - a0;
    let y = [x[1][0] + a0 * v0[0] + a1 * v1[0], x[1][1] + a0 * v0[1] + a1 * v1[1]];
    let h = [(y[0] * 1.0 + y[1] * 0.5 + 0.1).max(0.0), (y[0] * -1.0 + y[1] * 0.5 - 0.2).max(0.0)];
    let z = [y[0] + h[0] * 1.0 + h[1] * -1.0, y[1] + h[0] * 2.0 + 0.3];
    let mean = (z[0] + z[1]) / 2.0;
    let var = ((z[0] - mean).powi(2) + (z[1] - mean).powi(2)) / 2.0;
    let expected = [(z[0] - mean) / (var + 1e-12).sqrt(), (z[1] - mean) / (var + 1e-12).sqrt()];

    let xt = Tensor::from_rows(&[x[0].to_vec(), x[1].to_vec()]).unwrap();
    let out = attention_block(&xt, &p, RELU1, tau, true).unwrap();
    for c in 0..2 {
        assert!((out.at(1, c) - expected[c]).abs() < 1e-12, "{:?} vs {expected:?}", out.row(1));
    }
}

#[test]
fn depth_zero_logits_are_head_of_embedding() {
    let m = Model::<f64>::init(toy_config(0, SoftmaxMode::Standard), 3).unwrap();
    let toks = [2u32, 5, 1];
    let out = m.forward(&toks, 2, HeadId::Aux, false).unwrap();
    for (r, &t) in toks.iter().enumerate() {
        let e = m.heads.embedding.row(t as usize);
        for c in 0..7 {
            let want: f64 = (0..8).map(|k| e[k] * m.heads.aux.w.at(k, c)).sum::<f64>() + m.heads.aux.b.data()[c];
            assert!((out.logits.at(r, c) - want).abs() < 1e-14);
        }
    }
}

#[test]
fn forward_rejects_bad_tokens_and_overflow() {
    let m = Model::<f64>::init(toy_config(1, SoftmaxMode::Standard), 3).unwrap();
    assert!(matches!(m.forward(&[2, 7], 1, HeadId::Main, false), Err(Error::UnknownToken(7))));
    assert!(matches!(m.forward(&[2; 17], 16, HeadId::Main, false), Err(Error::Capacity(_))));
    assert!("side".parse::<HeadId>().is_err());
}

#[test]
fn future_tokens_never_change_past_logits() {
    let m = spiced(Model::<f64>::init(toy_config(2, SoftmaxMode::Tempered), 11).unwrap(), 20.0);
    let a = m.forward(&[2, 3, 4, 1, 5, 6], 3, HeadId::Main, false).unwrap().logits;
    let b = m.forward(&[2, 3, 4, 1, 0, 2], 3, HeadId::Main, false).unwrap().logits;
    for r in 0..4 {
        assert_eq!(a.row(r), b.row(r));
    }
    assert_ne!(a.row(4), b.row(4));
}

#[test]
fn delimiter_row_ignores_input_order_at_depth_zero() {
    let m = spiced(Model::<f64>::init(toy_config(1, SoftmaxMode::Standard), 5).unwrap(), 30.0);
    let a = m.forward(&[2, 5, 3, 6, 1], 4, HeadId::Main, true).unwrap().trace.unwrap();
    let b = m.forward(&[6, 3, 2, 5, 1], 4, HeadId::Main, true).unwrap().trace.unwrap();
    for (x, y) in a.pre(4, 0).iter().zip(b.pre(4, 0)) {
        assert!((x - y).abs() < 1e-12);
    }
    assert_eq!(a.depth(), 1);
    assert_eq!(a.positions(), 5);
}

#[test]
fn standard_equals_tempered_at_unit_temperature() {
    let std_model = spiced(Model::<f64>::init(toy_config(2, SoftmaxMode::Standard), 9).unwrap(), 20.0);
    let mut tmp = std_model.clone();
    tmp.config.softmax_mode = SoftmaxMode::Tempered;
    let n = 5;
    for b in tmp.temper.betas.iter_mut() {
        *b = Tensor::scalar(1.0 / (n as f64).ln());
    }
    let toks = [2, 3, 6, 4, 5, 1, 2, 3];
    let a = std_model.forward(&toks, n, HeadId::Main, false).unwrap().logits;
    let b = tmp.forward(&toks, n, HeadId::Main, false).unwrap().logits;
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn trace_captures_pre_and_post() {
    let m = spiced(Model::<f64>::init(toy_config(2, SoftmaxMode::Standard), 2).unwrap(), 10.0);
    let out = m.forward(&[2, 3, 1], 2, HeadId::Main, true).unwrap();
    let tr = out.trace.unwrap();
    assert_eq!(tr.pre.len(), 2);
    assert_eq!(tr.post[1].shape(), &[3, 8]);
    assert!(m.forward(&[2, 3, 1], 2, HeadId::Main, false).unwrap().trace.is_none());
}

#[test]
fn loss_cases() {
    let q = 5;
    let logits = Tensor::<f64>::zeros(&[3, q]);
    let l = masked_next_token_loss(&logits, &[1, 4, 0], &[true, false, true]).unwrap();
    assert!((l - (q as f64).ln()).abs() < 1e-14);

    let mut sharp = Tensor::<f64>::zeros(&[2, q]);
    sharp.row_mut(0)[2] = 20.0;
    sharp.row_mut(1)[4] = 20.0;
    assert!(masked_next_token_loss(&sharp, &[2, 4], &[true, true]).unwrap() < 1e-6 * 10.0);
    let mut sharper = sharp.clone();
    sharper.row_mut(0)[2] = 40.0;
    sharper.row_mut(1)[4] = 40.0;
    assert!(masked_next_token_loss(&sharper, &[2, 4], &[true, true]).unwrap() < 1e-6);

    assert!(matches!(
        masked_next_token_loss(&logits, &[0, 0, 0], &[false; 3]),
        Err(Error::Contract(_))
    ));
}

#[test]
fn loss_three_position_hand_case() {
    let logits = Tensor::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.5, -1.0, 3.0], vec![0.0, 0.0, 0.0]]).unwrap();
    let ce = |row: [f64; 3], t: usize| (row.iter().map(|v| v.exp()).sum::<f64>()).ln() - row[t];
    let want = (ce([1.0, 2.0, 0.0], 0) + ce([0.0, 0.0, 0.0], 2)) / 2.0;
    let got = masked_next_token_loss(&logits, &[0, 1, 2], &[true, false, true]).unwrap();
    assert!((got - want).abs() < 1e-14);
}

#[test]
fn one_hot_margin_twenty_is_tiny() {
    // logit 20 on the target, 0 elsewhere, two classes
    let logits = Tensor::from_rows(&[vec![20.0, 0.0]]).unwrap();
    assert!(masked_next_token_loss(&logits, &[0], &[true]).unwrap() < 1e-6 * 3.0);
}

#[test]
fn head_application() {
    let m = Model::<f64>::init(toy_config(1, SoftmaxMode::Standard), 1).unwrap();
    let mut head = m.heads.main.clone();
    head.b = Tensor::vector((0..7).map(|i| i as f64).collect());
    let logits = apply_head(&head, &Tensor::zeros(&[3, 8])).unwrap();
    for r in 0..3 {
        assert_eq!(logits.row(r), head.b.data());
    }
    let e = Tensor::filled(&[1, 8], 0.5);
    assert_ne!(apply_head(&m.heads.main, &e).unwrap(), apply_head(&m.heads.aux, &e).unwrap());
}

struct Fixed(Vec<f64>);

impl SequenceModel for Fixed {
    fn vocab_size(&self) -> usize {
        self.0.len()
    }
    fn context_length(&self) -> usize {
        10
    }
    fn next_logits(&self, _: &[u32], _: usize) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

#[test]
fn greedy_contract_and_tie_break() {
    let m = Fixed(vec![0.0, 1.0, 3.0, 3.0]);
    assert_eq!(greedy_decode(&m, &[2, 1], 2).unwrap(), vec![2, 2]);
    assert!(matches!(greedy_decode(&m, &[2, 1], 0), Err(Error::Contract(_))));
    assert!(matches!(greedy_decode(&m, &[2, 3], 1), Err(Error::Contract(_))));
    assert!(matches!(greedy_decode(&m, &[2, 2, 2, 2, 1], 6), Err(Error::Capacity(_))));
    assert_eq!(argmax_lowest(&[1.0, 1.0]), 0);
}

fn items<'a>(seqs: &'a [(Vec<u32>, Vec<u32>, Vec<bool>, usize)]) -> Vec<LossItem<'a>> {
    seqs.iter()
        .map(|(t, y, m, n)| LossItem { tokens: t, targets: y, mask: m, n_input: *n })
        .collect()
}

fn toy_batch() -> Vec<(Vec<u32>, Vec<u32>, Vec<bool>, usize)> {
    vec![
        (vec![4, 2, 1, 2, 4], vec![2, 1, 2, 4, 0], vec![false, false, true, true, false], 2),
        (vec![5, 3, 6, 1, 3], vec![3, 6, 1, 3, 5], vec![false, false, false, true, true], 3),
        (vec![3, 3, 1], vec![3, 1, 3], vec![false, false, true], 2),
    ]
}

#[test]
fn tape_forward_matches_inference_forward() {
    let m = spiced(Model::<f64>::init(toy_config(2, SoftmaxMode::Tempered), 4).unwrap(), 15.0);
    let batch = toy_batch();
    let its = items(&batch);
    let mut tape = Tape::new();
    let vars = m.register(&mut tape);
    let logits = m.record(&mut tape, &vars, &its, HeadId::Aux).unwrap();
    let lv = tape.value(logits);
    let mut row = 0;
    for it in &its {
        let direct = m.forward(it.tokens, it.n_input, HeadId::Aux, false).unwrap().logits;
        for r in 0..direct.rows() {
            for (a, b) in direct.row(r).iter().zip(lv.row(row)) {
                assert!((a - b).abs() < 1e-12);
            }
            row += 1;
        }
    }
    // the batched loss equals the mean of per-position inference losses
    let (loss, _) = m.loss_and_gradients(&its, HeadId::Aux).unwrap();
    let mut total = 0.0;
    let mut count = 0;
    for it in &its {
        let lg = m.forward(it.tokens, it.n_input, HeadId::Aux, false).unwrap().logits;
        let k = it.mask.iter().filter(|&&b| b).count();
        total += masked_next_token_loss(&lg, it.targets, it.mask).unwrap() * k as f64;
        count += k;
    }
    assert!((loss - total / count as f64).abs() < 1e-12);
}

fn gradcheck_model(m: &Model, head: HeadId) -> crate::numerics::GradReport {
    let batch = toy_batch();
    let theta: Vec<(String, Tensor)> = m.params().into_iter().map(|(n, t)| (n, t.clone())).collect();
    finite_difference_check(
        |tape: &mut Tape<f64>, vars: &[Var]| {
            let its = items(&batch);
            let logits = m.record(tape, vars, &its, head)?;
            let total = its.iter().flat_map(|i| i.mask.iter()).filter(|&&b| b).count();
            let (t, w) = Model::<f64>::loss_rows(&its, 1.0 / total as f64);
            tape.cross_entropy(logits, &t, &w)
        },
        &theta,
        DEFAULT_STEP,
        DEFAULT_TOLERANCE,
    )
    .unwrap()
}

#[test]
fn model_gradients_match_finite_differences() {
    let m = spiced(Model::<f64>::init(toy_config(2, SoftmaxMode::Tempered), 21).unwrap(), 25.0);
    let report = gradcheck_model(&m, HeadId::Main);
    assert!(report.pass, "{report:?}");
    let m = spiced(Model::<f64>::init(toy_config(1, SoftmaxMode::Standard), 22).unwrap(), 25.0);
    let report = gradcheck_model(&m, HeadId::Aux);
    assert!(report.pass, "{report:?}");
}

#[test]
fn masked_positions_contribute_no_gradient() {
    let m = spiced(Model::<f64>::init(toy_config(2, SoftmaxMode::Standard), 8).unwrap(), 20.0);
    let base = vec![(vec![4, 2, 1, 2, 4], vec![2, 1, 2, 4, 0], vec![false, false, true, true, false], 2)];
    let mut changed = base.clone();
    // a different target at a masked-out position
    changed[0].1[4] = 6;
    changed[0].1[0] = 5;
    let (la, ga) = m.loss_and_gradients(&items(&base), HeadId::Main).unwrap();
    let (lb, gb) = m.loss_and_gradients(&items(&changed), HeadId::Main).unwrap();
    assert_eq!(la, lb);
    for ((_, a), (_, b)) in ga.iter().zip(&gb) {
        assert_eq!(a, b);
    }
    let (_, g) = m.loss_and_gradients(&items(&base), HeadId::Main).unwrap();
    let aux_w = g.iter().find(|(n, _)| n == "heads.aux.w").unwrap();
    assert_eq!(aux_w.1.max_abs(), 0.0);
}

#[test]
fn gradients_independent_of_chunking() {
    let m = spiced(Model::<f64>::init(toy_config(1, SoftmaxMode::Standard), 8).unwrap(), 20.0);
    let mut batch = Vec::new();
    for _ in 0..3 {
        batch.extend(toy_batch());
    }
    let (l, g) = m.loss_and_gradients(&items(&batch), HeadId::Main).unwrap();
    let (l1, g1) = m.loss_and_gradients(&items(&toy_batch()), HeadId::Main).unwrap();
    assert!((l - l1).abs() < 1e-12);
    for ((_, a), (_, b)) in g.iter().zip(&g1) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn params_order_and_cast() {
    let m = Model::<f64>::init(toy_config(2, SoftmaxMode::Tempered), 1).unwrap();
    let names: Vec<String> = m.params().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.first().unwrap(), "embedding");
    assert!(names.contains(&"blocks.1.beta".to_string()));
    assert_eq!(names.last().unwrap(), "heads.aux.b");
    let mut m2 = m.clone();
    let names2: Vec<String> = m2.params_mut().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, names2);
    let f: Model<f32> = m.cast();
    assert_eq!(f.param_count(), m.param_count());
    assert!(is_head_param("heads.aux.w", HeadId::Aux));
    assert!(!is_head_param("heads.main.w", HeadId::Aux));
}

#[test]
fn init_is_seed_deterministic() {
    let a = Model::<f64>::init(toy_config(2, SoftmaxMode::Standard), 42).unwrap();
    let b = Model::<f64>::init(toy_config(2, SoftmaxMode::Standard), 42).unwrap();
    let c = Model::<f64>::init(toy_config(2, SoftmaxMode::Standard), 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
