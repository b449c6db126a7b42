//! LSTM cell / sequence ops with hand-written backward-through-time.
//!
//! Sequence batches are time-major: row `t*batch + i` of a `[t_max*batch, c]`
//! tensor is frame `t` of sequence `i`. Frames at `t >= lens[i]` are padding;
//! the recurrence carries the previous state through them so padding never
//! leaks into valid frames (which matters for the reversed direction).

use super::scalar::Scalar;
use super::tape::{BackFn, Tape, Var};
use super::NnError;

/// Parameter handles for one LSTM direction. Gate order along the 4H axis is
/// input, forget, cell candidate, output.
#[derive(Clone, Copy)]
pub struct LstmDirVars {
    /// `[input_dim, 4*hidden]`
    pub w_ih: Var,
    /// `[hidden, 4*hidden]`
    pub w_hh: Var,
    /// `[4*hidden]`
    pub b: Var,
}

impl<F: Scalar> Tape<F> {
    /// One recurrent step on precomputed input gates.
    ///
    /// `pre: [batch, 4h]` is `x_t . w_ih + b`; `hc_prev: [batch, 2h]` packs
    /// `[h | c]`. Rows with `valid[i] == false` carry the previous state
    /// through unchanged. Returns the packed `[h' | c']`.
    pub(crate) fn lstm_gates_step(&mut self, pre: Var, hc_prev: Var, w_hh: Var, valid: Vec<bool>) -> Var {
        let pre_shape = self.shape(pre).to_vec();
        let hc_shape = self.shape(hc_prev).to_vec();
        let (batch, four_h) = (pre_shape[0], pre_shape[1]);
        let h = four_h / 4;
        assert_eq!(hc_shape, vec![batch, 2 * h], "lstm step: hc shape");
        assert_eq!(self.shape(w_hh), &[h, four_h], "lstm step: w_hh shape");
        assert_eq!(valid.len(), batch, "lstm step: valid mask length");

        // a = pre + h_prev . w_hh
        let mut gates = self.data(pre).to_vec();
        {
            let hc = self.data(hc_prev);
            // h_prev is the first h columns of hc (row stride 2h)
            F::gemm_strided(
                batch, h, four_h, F::one(),
                hc, (2 * h) as isize, 1,
                self.data(w_hh), four_h as isize, 1,
                F::one(), &mut gates, four_h as isize, 1,
            );
        }
        let hc_prev_data = self.data(hc_prev).to_vec();
        let mut act = vec![F::zero(); batch * four_h]; // i,f,g,o after nonlinearity
        let mut tanh_c = vec![F::zero(); batch * h];
        let mut out = vec![F::zero(); batch * 2 * h];
        for bi in 0..batch {
            let row = &gates[bi * four_h..(bi + 1) * four_h];
            let a = &mut act[bi * four_h..(bi + 1) * four_h];
            for j in 0..h {
                a[j] = F::one() / (F::one() + (-row[j]).exp()); // i
                a[h + j] = F::one() / (F::one() + (-row[h + j]).exp()); // f
                a[2 * h + j] = row[2 * h + j].tanh(); // g
                a[3 * h + j] = F::one() / (F::one() + (-row[3 * h + j]).exp()); // o
            }
            let h_prev = &hc_prev_data[bi * 2 * h..bi * 2 * h + h];
            let c_prev = &hc_prev_data[bi * 2 * h + h..(bi + 1) * 2 * h];
            let o_row = &mut out[bi * 2 * h..(bi + 1) * 2 * h];
            if valid[bi] {
                for j in 0..h {
                    let c_new = a[h + j] * c_prev[j] + a[j] * a[2 * h + j];
                    let tc = c_new.tanh();
                    tanh_c[bi * h + j] = tc;
                    o_row[j] = a[3 * h + j] * tc;
                    o_row[h + j] = c_new;
                }
            } else {
                o_row[..h].copy_from_slice(h_prev);
                o_row[h..].copy_from_slice(c_prev);
            }
        }

        let (pi, hci, wi) = (pre.0, hc_prev.0, w_hh.0);
        let back: BackFn<F> = Box::new(move |nodes, lower, g| {
            let hc_prev_d = &nodes[hci].data;
            let w = &nodes[wi].data;
            let mut da = vec![F::zero(); batch * four_h];
            for bi in 0..batch {
                let gh = &g[bi * 2 * h..bi * 2 * h + h];
                let gc_ext = &g[bi * 2 * h + h..(bi + 1) * 2 * h];
                if !valid[bi] {
                    // state carried through: gradient flows straight to hc_prev
                    let ghc = &mut lower[hci];
                    for j in 0..h {
                        ghc[bi * 2 * h + j] = ghc[bi * 2 * h + j] + gh[j];
                        ghc[bi * 2 * h + h + j] = ghc[bi * 2 * h + h + j] + gc_ext[j];
                    }
                    continue;
                }
                let a = &act[bi * four_h..(bi + 1) * four_h];
                let c_prev = &hc_prev_d[bi * 2 * h + h..(bi + 1) * 2 * h];
                let da_row = &mut da[bi * four_h..(bi + 1) * four_h];
                let ghc = &mut lower[hci];
                for j in 0..h {
                    let (iv, fv, gv, ov) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                    let tc = tanh_c[bi * h + j];
                    let dh = gh[j];
                    let d_o = dh * tc;
                    let mut dc = gc_ext[j] + dh * ov * (F::one() - tc * tc);
                    let d_f = dc * c_prev[j];
                    let d_i = dc * gv;
                    let d_g = dc * iv;
                    dc = dc * fv; // gradient into c_prev
                    da_row[j] = d_i * iv * (F::one() - iv);
                    da_row[h + j] = d_f * fv * (F::one() - fv);
                    da_row[2 * h + j] = d_g * (F::one() - gv * gv);
                    da_row[3 * h + j] = d_o * ov * (F::one() - ov);
                    ghc[bi * 2 * h + h + j] = ghc[bi * 2 * h + h + j] + dc;
                }
            }
            // dpre += da
            {
                let gp = &mut lower[pi];
                for i in 0..da.len() {
                    gp[i] = gp[i] + da[i];
                }
            }
            // dh_prev += da . w_hh^T  -> into the h half of hc_prev's grad
            F::gemm_strided(
                batch, four_h, h, F::one(),
                &da, four_h as isize, 1,
                w, 1, four_h as isize,
                F::one(), &mut lower[hci], (2 * h) as isize, 1,
            );
            // dw_hh += h_prev^T . da
            F::gemm_strided(
                h, batch, four_h, F::one(),
                hc_prev_d, 1, (2 * h) as isize,
                &da, four_h as isize, 1,
                F::one(), &mut lower[wi], four_h as isize, 1,
            );
        });
        self.push("lstm_step", vec![batch, 2 * h], out, Some(back))
    }

    /// Unidirectional LSTM over a time-major batch.
    ///
    /// `x: [t_max*batch, input_dim]`. When `reversed`, each sequence is
    /// processed back-to-front within its own valid length. Output is the
    /// per-frame hidden state, `[t_max*batch, hidden]`, time-major.
    pub fn lstm_seq(
        &mut self,
        x: Var,
        t_max: usize,
        batch: usize,
        lens: &[usize],
        params: &LstmDirVars,
        reversed: bool,
    ) -> Var {
        let (rows, _in_dim) = (self.shape(x)[0], self.shape(x)[1]);
        assert_eq!(rows, t_max * batch, "lstm_seq: row count");
        let four_h = self.shape(params.w_ih)[1];
        let h = four_h / 4;

        let x = if reversed { self.gather_rows(x, reverse_index(t_max, batch, lens)) } else { x };
        let pre_all = self.matmul(x, params.w_ih);
        let pre_all = self.add(pre_all, params.b);

        let mut hc = self.constant(super::tensor::Tensor::zeros(vec![batch, 2 * h]));
        let mut hs = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let pre_t = self.slice_rows(pre_all, t * batch, batch);
            let valid: Vec<bool> = lens.iter().map(|&l| t < l).collect();
            hc = self.lstm_gates_step(pre_t, hc, params.w_hh, valid);
            hs.push(self.slice_cols(hc, 0, h));
        }
        let out = self.concat_rows(&hs);
        if reversed {
            self.gather_rows(out, reverse_index(t_max, batch, lens))
        } else {
            out
        }
    }

    /// Bidirectional LSTM layer: forward and reversed passes concatenated per
    /// frame, `[t_max*batch, 2*hidden]`.
    pub fn bilstm(
        &mut self,
        x: Var,
        t_max: usize,
        batch: usize,
        lens: &[usize],
        fwd: &LstmDirVars,
        bwd: &LstmDirVars,
    ) -> Var {
        let f = self.lstm_seq(x, t_max, batch, lens, fwd, false);
        let b = self.lstm_seq(x, t_max, batch, lens, bwd, true);
        self.concat_cols(f, b)
    }
}

/// Row permutation that reverses each sequence within its valid length and
/// leaves padding rows in place. The permutation is its own inverse.
fn reverse_index(t_max: usize, batch: usize, lens: &[usize]) -> Vec<usize> {
    let mut idx = Vec::with_capacity(t_max * batch);
    for t in 0..t_max {
        for (i, &l) in lens.iter().enumerate() {
            if t < l {
                idx.push((l - 1 - t) * batch + i);
            } else {
                idx.push(t * batch + i);
            }
        }
    }
    idx
}

/// Single LSTM cell step on explicit hidden/cell state vectors.
///
/// `x: [batch, input_dim]` (or a plain `[input_dim]` vector), `h`/`c`:
/// `[batch, hidden]`. Returns `(h', c')`.
pub fn lstm_cell<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    h: Var,
    c: Var,
    params: &LstmDirVars,
) -> Result<(Var, Var), NnError> {
    let (bx, in_dim) = rows_cols(tape.shape(x));
    let (bh, hidden) = rows_cols(tape.shape(h));
    let (bc, ch) = rows_cols(tape.shape(c));
    let w_ih_shape = tape.shape(params.w_ih).to_vec();
    if w_ih_shape.len() != 2 || w_ih_shape[0] != in_dim || w_ih_shape[1] != 4 * hidden {
        return Err(NnError::ShapeMismatch(format!(
            "lstm_cell: w_ih {w_ih_shape:?} does not match input dim {in_dim} / hidden {hidden}"
        )));
    }
    if bx != bh || bh != bc || ch != hidden {
        return Err(NnError::ShapeMismatch(format!(
            "lstm_cell: batch/hidden dims disagree (x {bx}x{in_dim}, h {bh}x{hidden}, c {bc}x{ch})"
        )));
    }
    let pre = tape.matmul(x, params.w_ih);
    let pre = tape.add(pre, params.b);
    let hc = tape.concat_cols(h, c);
    let hc_next = tape.lstm_gates_step(pre, hc, params.w_hh, vec![true; bx]);
    let h_next = tape.slice_cols(hc_next, 0, hidden);
    let c_next = tape.slice_cols(hc_next, hidden, hidden);
    Ok((h_next, c_next))
}

/// Bidirectional layer over a single `[t, f]` sequence, per the encoder
/// contract: output `[t, 2*hidden]`.
pub fn bilstm_layer<F: Scalar>(
    tape: &mut Tape<F>,
    seq: Var,
    fwd: &LstmDirVars,
    bwd: &LstmDirVars,
) -> Result<Var, NnError> {
    let shape = tape.shape(seq).to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(NnError::ShapeMismatch(format!(
            "bilstm_layer: expected non-empty [t, f] sequence, got {shape:?}"
        )));
    }
    let in_dim = shape[1];
    let w_shape = tape.shape(fwd.w_ih).to_vec();
    if w_shape[0] != in_dim {
        return Err(NnError::ShapeMismatch(format!(
            "bilstm_layer: input dim {in_dim} does not match w_ih {w_shape:?}"
        )));
    }
    let t = shape[0];
    Ok(tape.bilstm(seq, t, 1, &[t], fwd, bwd))
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[..shape.len() - 1].iter().product(), *shape.last().unwrap()),
    }
}
