//! Minimal reverse-mode differentiable tensor engine and optimizer.

pub mod adam;
pub mod check;
pub mod lstm;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use lstm::{bilstm_layer, lstm_cell, LstmDirVars};
pub use scalar::{Dtype, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

/// Binary cross-entropy on a probability, clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(p: f64, y: u8) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::check::{max_grad_error, DEFAULT_EPS};
    use super::lstm::LstmDirVars;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha20Rng) -> Tensor<f64> {
        Tensor::uniform(shape, -0.9, 0.9, rng)
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.scalar_value(y), 0.5);
        let g = tape.backward(y);
        assert!((g.get(x)[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::vector(vec![1.7; 5]));
        let y = tape.softmax_rows(x);
        for &v in tape.data(y) {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(rand_tensor(vec![6, 9], &mut rng));
            let y = tape.softmax_rows(x);
            for row in tape.data(y).chunks(9) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut tape = Tape::<f64>::new();
        let t = rand_tensor(vec![4, 5], &mut rng);
        let x = tape.leaf(t.clone());
        let y = tape.dropout(x, 0.0, &mut rng);
        assert_eq!(tape.data(y), t.data());
    }

    #[test]
    fn dropout_is_deterministic_under_fixed_seed() {
        let run = || {
            let mut rng = ChaCha20Rng::seed_from_u64(42);
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(Tensor::filled(vec![100], 1.0));
            let y = tape.dropout(x, 0.3, &mut rng);
            tape.data(y).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let a = rand_tensor(vec![5, 4], &mut rng);
        let b = rand_tensor(vec![4, 3], &mut rng);
        let w = rand_tensor(vec![5, 3], &mut rng);
        let err = max_grad_error(&[a, b, w], DEFAULT_EPS, |tape, vars| {
            let prod = tape.matmul(vars[0], vars[1]);
            let weighted = tape.mul(prod, vars[2]);
            tape.sum_all(weighted)
        });
        assert!(err < 1e-6, "matmul grad error {err}");
    }

    #[test]
    fn elementwise_op_gradients() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let x = rand_tensor(vec![3, 4], &mut rng);
        let w = rand_tensor(vec![3, 4], &mut rng);
        for op in ["sigmoid", "tanh", "gelu", "exp", "scale", "plogp"] {
            let err = max_grad_error(&[x.clone(), w.clone()], DEFAULT_EPS, |tape, vars| {
                let y = match op {
                    "sigmoid" => tape.sigmoid(vars[0]),
                    "tanh" => tape.tanh(vars[0]),
                    "gelu" => tape.gelu(vars[0]),
                    "exp" => tape.exp(vars[0]),
                    "scale" => tape.scale(vars[0], -1.7),
                    "plogp" => {
                        let p = tape.sigmoid(vars[0]); // keep arguments positive
                        tape.plogp(p)
                    }
                    _ => unreachable!(),
                };
                let weighted = tape.mul(y, vars[1]);
                tape.sum_all(weighted)
            });
            assert!(err < 1e-6, "{op} grad error {err}");
        }
    }

    #[test]
    fn relu_and_log_gradients_away_from_kinks() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        // keep |x| > 0.1 to stay away from the relu kink
        let x = Tensor::new(
            vec![12],
            (0..12)
                .map(|_| {
                    let v: f64 = rng.random_range(0.1..1.0);
                    if rng.random::<bool>() {
                        v
                    } else {
                        -v
                    }
                })
                .collect(),
        );
        let err = max_grad_error(&[x.clone()], DEFAULT_EPS, |tape, vars| {
            let y = tape.relu(vars[0]);
            tape.sum_all(y)
        });
        assert!(err < 1e-6, "relu grad error {err}");

        let pos = Tensor::new(vec![6], (0..6).map(|_| rng.random_range(0.2..2.0)).collect());
        let err = max_grad_error(&[pos], DEFAULT_EPS, |tape, vars| {
            let y = tape.log(vars[0]);
            tape.mean_all(y)
        });
        assert!(err < 1e-6, "log grad error {err}");
    }

    #[test]
    fn structural_op_gradients() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let a = rand_tensor(vec![4, 6], &mut rng);
        let b = rand_tensor(vec![4, 3], &mut rng);
        let bias = rand_tensor(vec![6], &mut rng);
        let err = max_grad_error(&[a, b, bias], DEFAULT_EPS, |tape, vars| {
            let biased = tape.add(vars[0], vars[2]);
            let cat = tape.concat_cols(biased, vars[1]);
            let sl = tape.slice_cols(cat, 2, 5);
            let tr = tape.transpose(sl);
            let rows = tape.gather_rows(tr, vec![0, 3, 3, 1]);
            let m = tape.mean_rows(rows);
            let n = tape.l2_norm(m);
            let top = tape.concat_rows(&[n]);
            tape.sum_all(top)
        });
        assert!(err < 1e-6, "structural grad error {err}");
    }

    #[test]
    fn softmax_and_losses_gradients() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let logits = rand_tensor(vec![5, 7], &mut rng);
        let w = rand_tensor(vec![5, 7], &mut rng);
        let err = max_grad_error(&[logits.clone(), w.clone()], DEFAULT_EPS, |tape, vars| {
            let s = tape.softmax_rows(vars[0]);
            let weighted = tape.mul(s, vars[1]);
            tape.sum_all(weighted)
        });
        assert!(err < 1e-6, "softmax grad error {err}");

        let err = max_grad_error(&[logits, w], DEFAULT_EPS, |tape, vars| {
            let s = tape.log_softmax_rows(vars[0]);
            let weighted = tape.mul(s, vars[1]);
            tape.sum_all(weighted)
        });
        assert!(err < 1e-6, "log_softmax grad error {err}");
    }

    #[test]
    fn bce_logit_gradient_matches_p_minus_y() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        for _ in 0..10 {
            let z: f64 = rng.random_range(-3.0..3.0);
            let y: f64 = if rng.random::<bool>() { 1.0 } else { 0.0 };
            let logits = Tensor::vector(vec![z]);
            let err = max_grad_error(&[logits], DEFAULT_EPS, |tape, vars| {
                tape.bce_with_logits(vars[0], &[y], None)
            });
            assert!(err < 1e-6, "bce grad error {err}");
            // closed form: d/dz = sigmoid(z) - y
            let mut tape = Tape::<f64>::new();
            let v = tape.leaf(Tensor::vector(vec![z]));
            let l = tape.bce_with_logits(v, &[y], None);
            let g = tape.backward(l);
            let p = 1.0 / (1.0 + (-z).exp());
            assert!((g.get(v)[0] - (p - y)).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_loss_examples() {
        assert!((bce_loss(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(0.5, 0) - std::f64::consts::LN_2).abs() < 1e-12);
        // exact prediction hits the clamp floor
        assert!(bce_loss(1.0, 1) <= -(1.0 - 1e-7f64).ln() + 1e-12);
        assert!(bce_loss(0.0, 0) <= -(1.0 - 1e-7f64).ln() + 1e-12);
    }

    #[test]
    fn conv_op_gradients() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let x = rand_tensor(vec![3, 17], &mut rng);
        let w = rand_tensor(vec![4, 3, 5], &mut rng);
        let b = rand_tensor(vec![4], &mut rng);
        let err = max_grad_error(&[x, w, b], DEFAULT_EPS, |tape, vars| {
            let y = tape.conv1d(vars[0], vars[1], vars[2], 2);
            let y = tape.gelu(y);
            tape.mean_all(y)
        });
        assert!(err < 1e-6, "conv1d grad error {err}");

        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let x = rand_tensor(vec![2, 9], &mut rng);
        let w = rand_tensor(vec![2, 3], &mut rng);
        let b = rand_tensor(vec![2], &mut rng);
        let err = max_grad_error(&[x, w, b], DEFAULT_EPS, |tape, vars| {
            let y = tape.depthwise_conv1d_same(vars[0], vars[1], vars[2]);
            tape.mean_all(y)
        });
        assert!(err < 1e-6, "depthwise conv grad error {err}");
    }

    #[test]
    fn layer_norm_gradient() {
        let mut rng = ChaCha20Rng::seed_from_u64(16);
        let x = rand_tensor(vec![4, 6], &mut rng);
        let g = rand_tensor(vec![6], &mut rng);
        let b = rand_tensor(vec![6], &mut rng);
        let w = rand_tensor(vec![4, 6], &mut rng);
        let err = max_grad_error(&[x, g, b, w], DEFAULT_EPS, |tape, vars| {
            let y = tape.layer_norm_rows(vars[0], vars[1], vars[2]);
            let weighted = tape.mul(y, vars[3]);
            tape.sum_all(weighted)
        });
        assert!(err < 1e-6, "layer_norm grad error {err}");
    }

    #[test]
    fn cosine_rows_gradient_and_value() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let m = rand_tensor(vec![5, 6], &mut rng);
        let v = rand_tensor(vec![6], &mut rng);
        let w = rand_tensor(vec![5], &mut rng);
        let err = max_grad_error(&[m.clone(), v.clone(), w], DEFAULT_EPS, |tape, vars| {
            let c = tape.cosine_rows(vars[0], vars[1]);
            let weighted = tape.mul(c, vars[2]);
            tape.sum_all(weighted)
        });
        assert!(err < 1e-6, "cosine grad error {err}");

        // value check: row identical to v has cosine 1
        let mut tape = Tape::<f64>::new();
        let rows = tape.leaf(Tensor::matrix(1, 6, v.data().to_vec()));
        let vv = tape.leaf(v);
        let c = tape.cosine_rows(rows, vv);
        assert!((tape.data(c)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_mean_time_gradient() {
        let mut rng = ChaCha20Rng::seed_from_u64(18);
        let x = rand_tensor(vec![4 * 3, 5], &mut rng); // t_max=4, batch=3
        let w = rand_tensor(vec![3, 5], &mut rng);
        let err = max_grad_error(&[x, w], DEFAULT_EPS, |tape, vars| {
            let m = tape.masked_mean_time(vars[0], 4, 3, vec![4, 2, 3]);
            let weighted = tape.mul(m, vars[1]);
            tape.sum_all(weighted)
        });
        assert!(err < 1e-6, "masked mean grad error {err}");
    }

    #[test]
    fn straight_through_is_onehot_forward_identity_backward() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::matrix(2, 3, vec![0.2, 0.5, 0.3, 0.7, 0.1, 0.2]));
        let h = tape.straight_through_onehot_rows(p);
        assert_eq!(tape.data(h), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let s = tape.sum_all(h);
        let g = tape.backward(s);
        assert!(g.get(p).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn lstm_cell_zero_inputs_give_zero_state() {
        let mut tape = Tape::<f64>::new();
        let hidden = 4;
        let params = LstmDirVars {
            w_ih: tape.leaf(Tensor::zeros(vec![3, 4 * hidden])),
            w_hh: tape.leaf(Tensor::zeros(vec![hidden, 4 * hidden])),
            b: tape.leaf(Tensor::zeros(vec![4 * hidden])),
        };
        let x = tape.leaf(Tensor::zeros(vec![1, 3]));
        let h = tape.leaf(Tensor::zeros(vec![1, hidden]));
        let c = tape.leaf(Tensor::zeros(vec![1, hidden]));
        let (h2, c2) = lstm_cell(&mut tape, x, h, c, &params).unwrap();
        assert!(tape.data(h2).iter().all(|&v| v == 0.0));
        assert!(tape.data(c2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_cell_output_width_follows_hidden_size() {
        let mut tape = Tape::<f64>::new();
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        let hidden = 128;
        let params = LstmDirVars {
            w_ih: tape.leaf(rand_tensor(vec![7, 4 * hidden], &mut rng)),
            w_hh: tape.leaf(rand_tensor(vec![hidden, 4 * hidden], &mut rng)),
            b: tape.leaf(rand_tensor(vec![4 * hidden], &mut rng)),
        };
        let x = tape.leaf(rand_tensor(vec![1, 7], &mut rng));
        let h = tape.leaf(Tensor::zeros(vec![1, hidden]));
        let c = tape.leaf(Tensor::zeros(vec![1, hidden]));
        let (h2, _) = lstm_cell(&mut tape, x, h, c, &params).unwrap();
        assert_eq!(tape.shape(h2), &[1, hidden]);
    }

    #[test]
    fn lstm_cell_shape_mismatch_is_reported() {
        let mut tape = Tape::<f64>::new();
        let params = LstmDirVars {
            w_ih: tape.leaf(Tensor::zeros(vec![3, 16])),
            w_hh: tape.leaf(Tensor::zeros(vec![4, 16])),
            b: tape.leaf(Tensor::zeros(vec![16])),
        };
        let x = tape.leaf(Tensor::zeros(vec![1, 5])); // wrong input dim
        let h = tape.leaf(Tensor::zeros(vec![1, 4]));
        let c = tape.leaf(Tensor::zeros(vec![1, 4]));
        assert!(matches!(
            lstm_cell(&mut tape, x, h, c, &params),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn lstm_bptt_gradient_over_seven_steps() {
        let mut rng = ChaCha20Rng::seed_from_u64(20);
        let (in_dim, hidden, steps) = (3, 4, 7);
        let w_ih = rand_tensor(vec![in_dim, 4 * hidden], &mut rng);
        let w_hh = rand_tensor(vec![hidden, 4 * hidden], &mut rng);
        let b = rand_tensor(vec![4 * hidden], &mut rng);
        let xs = rand_tensor(vec![steps, in_dim], &mut rng);
        let err = max_grad_error(&[w_ih, w_hh, b, xs], DEFAULT_EPS, |tape, vars| {
            let params = LstmDirVars { w_ih: vars[0], w_hh: vars[1], b: vars[2] };
            let mut h = tape.constant(Tensor::zeros(vec![1, hidden]));
            let mut c = tape.constant(Tensor::zeros(vec![1, hidden]));
            for t in 0..steps {
                let x_t = tape.slice_rows(vars[3], t, 1);
                let (h2, c2) = lstm_cell(tape, x_t, h, c, &params).unwrap();
                h = h2;
                c = c2;
            }
            let hc = tape.concat_cols(h, c);
            let n = tape.l2_norm(hc);
            tape.sum_all(n)
        });
        assert!(err < 1e-6, "lstm bptt grad error {err}");
    }

    #[test]
    fn bilstm_single_frame_shape() {
        let mut tape = Tape::<f64>::new();
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let hidden = 128;
        let mk = |tape: &mut Tape<f64>, rng: &mut ChaCha20Rng| LstmDirVars {
            w_ih: tape.leaf(Tensor::uniform(vec![10, 4 * hidden], -0.1, 0.1, rng)),
            w_hh: tape.leaf(Tensor::uniform(vec![hidden, 4 * hidden], -0.1, 0.1, rng)),
            b: tape.leaf(Tensor::zeros(vec![4 * hidden])),
        };
        let fwd = mk(&mut tape, &mut rng);
        let bwd = mk(&mut tape, &mut rng);
        let seq = tape.leaf(rand_tensor(vec![1, 10], &mut rng));
        let out = bilstm_layer(&mut tape, seq, &fwd, &bwd).unwrap();
        assert_eq!(tape.shape(out), &[1, 2 * hidden]);
    }

    #[test]
    fn bilstm_time_reversal_symmetry() {
        // reversing the input and swapping direction parameters reverses the
        // output in time and swaps the two halves
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let (t, f, hidden) = (6, 3, 4);
        let w1 = rand_tensor(vec![f, 4 * hidden], &mut rng);
        let u1 = rand_tensor(vec![hidden, 4 * hidden], &mut rng);
        let b1 = rand_tensor(vec![4 * hidden], &mut rng);
        let w2 = rand_tensor(vec![f, 4 * hidden], &mut rng);
        let u2 = rand_tensor(vec![hidden, 4 * hidden], &mut rng);
        let b2 = rand_tensor(vec![4 * hidden], &mut rng);
        let x = rand_tensor(vec![t, f], &mut rng);
        let x_rev = {
            let mut d = Vec::new();
            for i in (0..t).rev() {
                d.extend_from_slice(&x.data()[i * f..(i + 1) * f]);
            }
            Tensor::matrix(t, f, d)
        };

        let run = |x: &Tensor<f64>, swap: bool| -> Vec<f64> {
            let mut tape = Tape::<f64>::new();
            let a = LstmDirVars {
                w_ih: tape.leaf(w1.clone()),
                w_hh: tape.leaf(u1.clone()),
                b: tape.leaf(b1.clone()),
            };
            let b = LstmDirVars {
                w_ih: tape.leaf(w2.clone()),
                w_hh: tape.leaf(u2.clone()),
                b: tape.leaf(b2.clone()),
            };
            let seq = tape.leaf(x.clone());
            let out = if swap {
                bilstm_layer(&mut tape, seq, &b, &a).unwrap()
            } else {
                bilstm_layer(&mut tape, seq, &a, &b).unwrap()
            };
            tape.data(out).to_vec()
        };

        let orig = run(&x, false);
        let swapped = run(&x_rev, true);
        for ti in 0..t {
            for j in 0..hidden {
                let orig_fwd = orig[ti * 2 * hidden + j];
                let orig_bwd = orig[ti * 2 * hidden + hidden + j];
                let sw_fwd = swapped[(t - 1 - ti) * 2 * hidden + j];
                let sw_bwd = swapped[(t - 1 - ti) * 2 * hidden + hidden + j];
                assert!((orig_fwd - sw_bwd).abs() < 1e-12);
                assert!((orig_bwd - sw_fwd).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilstm_gradient_on_5x8_input() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let (f, hidden) = (8, 3);
        let leaves = vec![
            rand_tensor(vec![f, 4 * hidden], &mut rng),
            rand_tensor(vec![hidden, 4 * hidden], &mut rng),
            rand_tensor(vec![4 * hidden], &mut rng),
            rand_tensor(vec![f, 4 * hidden], &mut rng),
            rand_tensor(vec![hidden, 4 * hidden], &mut rng),
            rand_tensor(vec![4 * hidden], &mut rng),
            rand_tensor(vec![5, f], &mut rng),
            rand_tensor(vec![5, 2 * hidden], &mut rng),
        ];
        let err = max_grad_error(&leaves, DEFAULT_EPS, |tape, vars| {
            let fwd = LstmDirVars { w_ih: vars[0], w_hh: vars[1], b: vars[2] };
            let bwd = LstmDirVars { w_ih: vars[3], w_hh: vars[4], b: vars[5] };
            let out = bilstm_layer(tape, vars[6], &fwd, &bwd).unwrap();
            let weighted = tape.mul(out, vars[7]);
            tape.sum_all(weighted)
        });
        assert!(err < 1e-6, "bilstm grad error {err}");
    }

    #[test]
    fn masked_batched_lstm_matches_per_sequence_runs() {
        // padding must not affect valid frames in either direction
        let mut rng = ChaCha20Rng::seed_from_u64(24);
        let (f, hidden) = (3, 4);
        let w_f = (
            rand_tensor(vec![f, 4 * hidden], &mut rng),
            rand_tensor(vec![hidden, 4 * hidden], &mut rng),
            rand_tensor(vec![4 * hidden], &mut rng),
        );
        let w_b = (
            rand_tensor(vec![f, 4 * hidden], &mut rng),
            rand_tensor(vec![hidden, 4 * hidden], &mut rng),
            rand_tensor(vec![4 * hidden], &mut rng),
        );
        let seq_a = rand_tensor(vec![5, f], &mut rng);
        let seq_b = rand_tensor(vec![3, f], &mut rng);

        let single = |seq: &Tensor<f64>| -> Vec<f64> {
            let mut tape = Tape::<f64>::new();
            let fwd = LstmDirVars {
                w_ih: tape.leaf(w_f.0.clone()),
                w_hh: tape.leaf(w_f.1.clone()),
                b: tape.leaf(w_f.2.clone()),
            };
            let bwd = LstmDirVars {
                w_ih: tape.leaf(w_b.0.clone()),
                w_hh: tape.leaf(w_b.1.clone()),
                b: tape.leaf(w_b.2.clone()),
            };
            let s = tape.leaf(seq.clone());
            let out = bilstm_layer(&mut tape, s, &fwd, &bwd).unwrap();
            tape.data(out).to_vec()
        };

        // batched, time-major, b=2 with lens [5,3]
        let (t_max, batch) = (5, 2);
        let mut xd = vec![0.0; t_max * batch * f];
        for t in 0..5 {
            xd[(t * batch) * f..(t * batch) * f + f].copy_from_slice(&seq_a.data()[t * f..(t + 1) * f]);
        }
        for t in 0..3 {
            xd[(t * batch + 1) * f..(t * batch + 1) * f + f]
                .copy_from_slice(&seq_b.data()[t * f..(t + 1) * f]);
        }
        let mut tape = Tape::<f64>::new();
        let fwd = LstmDirVars {
            w_ih: tape.leaf(w_f.0.clone()),
            w_hh: tape.leaf(w_f.1.clone()),
            b: tape.leaf(w_f.2.clone()),
        };
        let bwd = LstmDirVars {
            w_ih: tape.leaf(w_b.0.clone()),
            w_hh: tape.leaf(w_b.1.clone()),
            b: tape.leaf(w_b.2.clone()),
        };
        let x = tape.leaf(Tensor::matrix(t_max * batch, f, xd));
        let out = tape.bilstm(x, t_max, batch, &[5, 3], &fwd, &bwd);
        let out = tape.data(out);

        let ref_a = single(&seq_a);
        let ref_b = single(&seq_b);
        for t in 0..5 {
            for j in 0..2 * hidden {
                let got = out[(t * batch) * 2 * hidden + j];
                assert!((got - ref_a[t * 2 * hidden + j]).abs() < 1e-12);
            }
        }
        for t in 0..3 {
            for j in 0..2 * hidden {
                let got = out[(t * batch + 1) * 2 * hidden + j];
                assert!((got - ref_b[t * 2 * hidden + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_flags_non_finite_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0]));
        let _ = tape.log(x); // ln of negative -> NaN
        assert!(tape.fault().is_some());
    }
}
