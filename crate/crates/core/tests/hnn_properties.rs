use hnn_scoring::hnn::{attention_weights, bilstm, embed, lstm_cell, EmbeddingView, HnnDims, HnnModel, LstmDirectionParams};
use hnn_scoring::numeric::{Matrix, Rng};
use hnn_scoring::text::{TokenSequence, PAD_ID};
use hnn_scoring::training::{grad_check, grad_check_against, relative_error, train, NeuralModel, ParamTensors, TrainConfig};
use hnn_scoring::AspectLabels;

fn dims(vocab: usize, e: usize, h: usize, a: usize, len: usize) -> HnnDims {
    HnnDims {
        vocab_size: vocab,
        d_emb: e,
        d_hid: h,
        d_att: a,
        max_len: len,
    }
}

/// Every parameter (PAD row excepted) uniform in ±`scale`, biases included.
fn random_model(d: HnnDims, seed: u64, scale: f64) -> HnnModel {
    let mut m = HnnModel::zeros(d).unwrap();
    let mut rng = Rng::new(seed);
    for t in m.params.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.uniform(scale);
        }
    }
    m.params.embedding.row_mut(PAD_ID).fill(0.0);
    m
}

fn random_seq(rng: &mut Rng, vocab: usize, max_len: usize, min_len: usize) -> TokenSequence {
    let len = min_len + rng.below(max_len - min_len + 1);
    let mut ids = vec![PAD_ID; max_len];
    for id in ids.iter_mut().take(len) {
        *id = 1 + rng.below(vocab - 1);
    }
    TokenSequence {
        ids,
        mask: (0..max_len).map(|t| t < len).collect(),
        true_length: len,
    }
}

fn random_labels(rng: &mut Rng) -> AspectLabels {
    [0; 5].map(|_| rng.bernoulli(0.5) as u8)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM step written out scalar by scalar, gates stacked i, f, g, o.
fn oracle_cell(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmDirectionParams) -> (Vec<f64>, Vec<f64>) {
    let n = h_prev.len();
    let pre = |row: usize| {
        let mut s = p.b.get(row, 0);
        for (j, xj) in x.iter().enumerate() {
            s += p.w.get(row, j) * xj;
        }
        for (j, hj) in h_prev.iter().enumerate() {
            s += p.u.get(row, j) * hj;
        }
        s
    };
    let mut h = vec![0.0; n];
    let mut c = vec![0.0; n];
    for k in 0..n {
        let i = sigmoid(pre(k));
        let f = sigmoid(pre(n + k));
        let g = pre(2 * n + k).tanh();
        let o = sigmoid(pre(3 * n + k));
        c[k] = f * c_prev[k] + i * g;
        h[k] = o * c[k].tanh();
    }
    (h, c)
}

fn oracle_forward(m: &HnnModel, seq: &TokenSequence) -> [f64; 5] {
    let p = &m.params;
    let (e, hd) = (m.dims.d_emb, m.dims.d_hid);
    let n = seq.true_length;
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|t| (0..e).map(|j| p.embedding.get(seq.ids[t], j)).collect())
        .collect();
    let mut fwd = vec![vec![0.0; hd]; n];
    let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
    for t in 0..n {
        (h, c) = oracle_cell(&xs[t], &h, &c, &p.forward_lstm);
        fwd[t] = h.clone();
    }
    let mut bwd = vec![vec![0.0; hd]; n];
    let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
    for t in (0..n).rev() {
        (h, c) = oracle_cell(&xs[t], &h, &c, &p.backward_lstm);
        bwd[t] = h.clone();
    }
    let states: Vec<Vec<f64>> = (0..n).map(|t| [fwd[t].clone(), bwd[t].clone()].concat()).collect();
    let scores: Vec<f64> = states
        .iter()
        .map(|s| {
            let mut total = 0.0;
            for r in 0..m.dims.d_att {
                let mut a = p.attention.b.get(r, 0);
                for (j, sj) in s.iter().enumerate() {
                    a += p.attention.w.get(r, j) * sj;
                }
                total += p.attention.v.get(r, 0) * a.tanh();
            }
            total
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut context = vec![0.0; 2 * hd];
    for (t, s) in states.iter().enumerate() {
        for (cj, sj) in context.iter_mut().zip(s) {
            *cj += exps[t] / z * sj;
        }
    }
    let mut out = [0.0; 5];
    for (k, o) in out.iter_mut().enumerate() {
        let mut z = p.head.b.get(k, 0);
        for (j, cj) in context.iter().enumerate() {
            z += p.head.w.get(k, j) * cj;
        }
        *o = sigmoid(z);
    }
    out
}

#[test]
fn lstm_cell_matches_scalar_oracle() {
    let mut rng = Rng::new(11);
    for trial in 0..50 {
        let m = random_model(dims(5, 3, 4, 2, 4), trial, 0.8);
        let x: Vec<f64> = (0..3).map(|_| rng.uniform(1.0)).collect();
        let h: Vec<f64> = (0..4).map(|_| rng.uniform(0.9)).collect();
        let c: Vec<f64> = (0..4).map(|_| rng.uniform(2.0)).collect();
        let (gh, gc) = lstm_cell(&x, &h, &c, &m.params.forward_lstm).unwrap();
        let (oh, oc) = oracle_cell(&x, &h, &c, &m.params.forward_lstm);
        for (a, b) in gh.iter().zip(&oh).chain(gc.iter().zip(&oc)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn forward_matches_scalar_oracle() {
    let mut rng = Rng::new(12);
    for seed in 0..100 {
        let m = random_model(dims(6, 2, 2, 2, 3), seed, 1.0);
        let seq = random_seq(&mut rng, 6, 3, 1);
        let got = m.forward(&seq).unwrap().0 .0;
        let want = oracle_forward(&m, &seq);
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
        }
    }
    let m = random_model(dims(30, 5, 4, 3, 12), 77, 0.5);
    for _ in 0..50 {
        let seq = random_seq(&mut rng, 30, 12, 1);
        let got = m.forward(&seq).unwrap().0 .0;
        let want = oracle_forward(&m, &seq);
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

/// Central differences at h = 1e-5 on an O(1) loss carry roughly 1e-11 of
/// round-off, so entries whose true gradient is near 1e-8 cannot meet a pure
/// relative bound. Each entry must agree to 1e-4 relative or 1e-10 absolute.
#[test]
fn gradients_match_finite_differences_per_group() {
    let configs = [dims(6, 2, 2, 2, 3), dims(10, 4, 3, 5, 6), dims(12, 8, 8, 8, 12), dims(9, 5, 7, 1, 12)];
    let mut rng = Rng::new(13);
    let h = 1e-5;
    for (ci, d) in configs.into_iter().enumerate() {
        for seed in 0..3 {
            let m = random_model(d, 100 * ci as u64 + seed, 0.5);
            let seq = random_seq(&mut rng, d.vocab_size, d.max_len, 1);
            let labels = random_labels(&mut rng);
            let (_, g) = m.loss_and_gradients(&seq, &labels).unwrap();
            let names = g.tensor_names();
            let mut probe = m.clone();
            for (ti, name) in names.iter().enumerate() {
                for j in 0..g.tensors()[ti].data().len() {
                    let orig = m.params().tensors()[ti].data()[j];
                    probe.params_mut().tensors_mut()[ti].data_mut()[j] = orig + h;
                    let up = probe.loss(&seq, &labels).unwrap();
                    probe.params_mut().tensors_mut()[ti].data_mut()[j] = orig - h;
                    let down = probe.loss(&seq, &labels).unwrap();
                    probe.params_mut().tensors_mut()[ti].data_mut()[j] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let analytic = g.tensors()[ti].data()[j];
                    let abs = (analytic - numeric).abs();
                    let rel = relative_error(analytic, numeric);
                    assert!(rel < 1e-4 || abs < 1e-10, "{d:?} seed {seed}: {name}[{j}] analytic {analytic:e} numeric {numeric:e}");
                }
            }
        }
    }
}

#[test]
fn gradient_check_detects_sign_flip() {
    let d = dims(8, 4, 3, 3, 5);
    let m = random_model(d, 3, 0.5);
    let mut rng = Rng::new(14);
    let seq = random_seq(&mut rng, 8, 5, 3);
    let labels = [1, 0, 1, 1, 0];
    let (_, mut g) = m.loss_and_gradients(&seq, &labels).unwrap();
    let head_w = g.tensor_names().iter().position(|n| *n == "head.w").expect("head.w tensor");
    g.tensors_mut()[head_w].data_mut().iter_mut().for_each(|v| *v = -*v);
    let report = grad_check_against(&m, &seq, &labels, &g, 1e-5).unwrap();
    assert!(report.max_rel_error > 0.1, "{}", report.max_rel_error);
}

#[test]
fn zero_model_gradient_check_is_stable() {
    let m = HnnModel::zeros(dims(6, 3, 3, 2, 4)).unwrap();
    let seq = TokenSequence {
        ids: vec![2, 2, 0, 0],
        mask: vec![true, true, false, false],
        true_length: 2,
    };
    let report = grad_check(&m, &seq, &[1, 0, 1, 0, 1], 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn attention_is_a_simplex_over_unmasked_positions() {
    let mut rng = Rng::new(15);
    for pair in 0..1000u64 {
        let len = 1 + rng.below(10);
        let d = dims(2 + rng.below(20), 1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(6), len);
        let m = random_model(d, pair, 2.0);
        let seq = random_seq(&mut rng, d.vocab_size, len, 1);
        let (_, cache) = m.forward(&seq).unwrap();
        let w = cache.attention_weights();
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() <= 1e-12, "{total}");
        for (t, &wt) in w.iter().enumerate() {
            assert!(wt >= 0.0);
            if !seq.mask[t] {
                assert_eq!(wt, 0.0);
            }
        }
        let direct = attention_weights(cache.states(), &seq.mask, &m.params.attention).unwrap();
        assert_eq!(direct, w);
    }
}

#[test]
fn masked_ids_never_change_the_output() {
    let mut rng = Rng::new(16);
    let d = dims(25, 6, 5, 4, 10);
    for seed in 0..100 {
        let m = random_model(d, seed, 1.0);
        let seq = random_seq(&mut rng, 25, 10, 1);
        let mut other = seq.clone();
        for t in other.true_length..other.ids.len() {
            other.ids[t] = 1 + rng.below(24);
        }
        let a = m.forward(&seq).unwrap().0;
        let b = m.forward(&other).unwrap().0;
        assert_eq!(a.0.map(f64::to_bits), b.0.map(f64::to_bits));
    }
}

#[test]
fn states_and_scores_are_bounded() {
    let mut rng = Rng::new(17);
    for seed in 0..200 {
        let m = random_model(dims(15, 4, 4, 3, 8), seed, 3.0);
        let seq = random_seq(&mut rng, 15, 8, 1);
        let (scores, cache) = m.forward(&seq).unwrap();
        assert!(cache.states().data().iter().all(|v| v.abs() < 1.0));
        assert!(scores.0.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn reversing_input_and_swapping_directions_swaps_halves() {
    let mut rng = Rng::new(18);
    for len in 1..=4 {
        for h in 1..=3 {
            for seed in 0..5 {
                let d = dims(10, 3, h, 2, len);
                let m = random_model(d, seed * 10 + len as u64, 1.0);
                let x = Matrix::from_vec(len, 3, (0..3 * len).map(|_| rng.uniform(1.0)).collect()).unwrap();
                let mut rev = Matrix::zeros(len, 3);
                for t in 0..len {
                    rev.row_mut(t).copy_from_slice(x.row(len - 1 - t));
                }
                let mask = vec![true; len];
                let p = &m.params;
                let a = bilstm(&x, &mask, &p.forward_lstm, &p.backward_lstm).unwrap();
                let b = bilstm(&rev, &mask, &p.backward_lstm, &p.forward_lstm).unwrap();
                for t in 0..len {
                    let (ra, rb) = (a.row(len - 1 - t), b.row(t));
                    assert_eq!(&rb[..h], &ra[h..]);
                    assert_eq!(&rb[h..], &ra[..h]);
                }
            }
        }
    }
}

#[test]
fn embedding_rows_follow_ids() {
    let m = random_model(dims(7, 3, 2, 2, 4), 1, 1.0);
    let seq = TokenSequence {
        ids: vec![5, 3, 0, 0],
        mask: vec![true, true, false, false],
        true_length: 2,
    };
    let e = embed(&seq, &EmbeddingView(&m.params.embedding)).unwrap();
    assert_eq!(e.row(0), m.params.embedding.row(5));
    assert_eq!(e.row(1), m.params.embedding.row(3));
    assert!(e.row(2).iter().chain(e.row(3)).all(|&v| v == 0.0));
    let bad = TokenSequence {
        ids: vec![7, 0, 0, 0],
        mask: vec![true, false, false, false],
        true_length: 1,
    };
    assert_eq!(embed(&bad, &EmbeddingView(&m.params.embedding)).unwrap_err().category(), "index");
}

#[test]
fn serialized_model_forwards_identically() {
    let mut rng = Rng::new(19);
    let m = random_model(dims(40, 8, 6, 4, 12), 5, 1.0);
    let back = HnnModel::from_json(&m.to_json().unwrap()).unwrap();
    for _ in 0..50 {
        let seq = random_seq(&mut rng, 40, 12, 1);
        let a = m.forward(&seq).unwrap().0;
        let b = back.forward(&seq).unwrap().0;
        assert_eq!(a.0.map(f64::to_bits), b.0.map(f64::to_bits));
    }
}

#[test]
fn frozen_embeddings_stay_fixed_in_training() {
    let d = dims(12, 4, 3, 2, 6);
    let mut m = random_model(d, 2, 0.5);
    let mut table = m.embedding_table();
    table.trainable = false;
    m.set_embeddings(table).unwrap();
    let mut rng = Rng::new(20);
    let data: Vec<(TokenSequence, AspectLabels)> = (0..8).map(|_| (random_seq(&mut rng, 12, 6, 1), random_labels(&mut rng))).collect();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let (trained, _) = train(m.clone(), &data, &[], &cfg).unwrap();
    assert_eq!(trained.params.embedding, m.params.embedding);
    assert_ne!(trained.params.head, m.params.head);
}
