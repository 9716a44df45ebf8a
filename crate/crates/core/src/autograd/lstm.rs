//! Fused LSTM forward/backward over batched sequences.

use super::gemm::gemm;
use super::{check_seq, matmul_values, row_sums, shape_err, sigmoid, AutogradError, Var};
use crate::matrix::Matrix;

pub(super) struct LstmNode {
    pub inputs: [Var; 4],
    seq_len: usize,
    reverse: bool,
    hidden: usize,
    batches: usize,
    /// Post-activation gates per processed step, `4H x B`.
    gates: Vec<Matrix>,
    /// Cell state per processed step, `H x B`.
    cells: Vec<Matrix>,
    /// Hidden state per processed step, `H x B`.
    hiddens: Vec<Matrix>,
}

impl LstmNode {
    fn time_index(&self, step: usize) -> usize {
        if self.reverse {
            self.seq_len - 1 - step
        } else {
            step
        }
    }
}

pub(super) fn forward(
    x: &Matrix,
    w_ih: &Matrix,
    w_hh: &Matrix,
    bias: &Matrix,
    inputs: [Var; 4],
    seq_len: usize,
    reverse: bool,
) -> Result<(Matrix, LstmNode), AutogradError> {
    let batches = check_seq("lstm", x.cols(), seq_len)?;
    let hidden = w_hh.cols();
    if w_ih.rows() != 4 * hidden || w_hh.rows() != 4 * hidden || w_ih.cols() != x.rows() || bias.rows() != 4 * hidden || bias.cols() != 1 {
        return Err(shape_err(
            "lstm",
            format!(
                "w_ih {}x{}, w_hh {}x{}, bias {}x{}, input {} rows",
                w_ih.rows(),
                w_ih.cols(),
                w_hh.rows(),
                w_hh.cols(),
                bias.rows(),
                bias.cols(),
                x.rows()
            ),
        ));
    }
    let gx = matmul_values(w_ih, false, x, false);
    let mut node = LstmNode {
        inputs,
        seq_len,
        reverse,
        hidden,
        batches,
        gates: Vec::with_capacity(seq_len),
        cells: Vec::with_capacity(seq_len),
        hiddens: Vec::with_capacity(seq_len),
    };
    let mut out = Matrix::zeros(hidden, x.cols());
    let zero = Matrix::zeros(hidden, batches);
    for step in 0..seq_len {
        let t = node.time_index(step);
        let mut a = Matrix::zeros(4 * hidden, batches);
        for r in 0..4 * hidden {
            let b_r = bias.get(r, 0);
            let src = gx.row(r);
            for (b, v) in a.row_mut(r).iter_mut().enumerate() {
                *v = src[b * seq_len + t] + b_r;
            }
        }
        let (h_prev, c_prev) = if step == 0 {
            (&zero, &zero)
        } else {
            (&node.hiddens[step - 1], &node.cells[step - 1])
        };
        gemm(4 * hidden, hidden, batches, w_hh.as_slice(), false, h_prev.as_slice(), false, a.as_mut_slice(), true);
        let hb = hidden * batches;
        {
            let s = a.as_mut_slice();
            for v in &mut s[..2 * hb] {
                *v = sigmoid(*v);
            }
            for v in &mut s[2 * hb..3 * hb] {
                *v = v.tanh();
            }
            for v in &mut s[3 * hb..] {
                *v = sigmoid(*v);
            }
        }
        let mut c = Matrix::zeros(hidden, batches);
        let mut h = Matrix::zeros(hidden, batches);
        {
            let s = a.as_slice();
            let cp = c_prev.as_slice();
            let cs = c.as_mut_slice();
            let hs = h.as_mut_slice();
            for k in 0..hb {
                let (i, f, g, o) = (s[k], s[hb + k], s[2 * hb + k], s[3 * hb + k]);
                cs[k] = f * cp[k] + i * g;
                hs[k] = o * cs[k].tanh();
            }
        }
        for r in 0..hidden {
            let dst = out.row_mut(r);
            for (b, &v) in h.row(r).iter().enumerate() {
                dst[b * seq_len + t] = v;
            }
        }
        node.gates.push(a);
        node.cells.push(c);
        node.hiddens.push(h);
    }
    Ok((out, node))
}

pub(super) fn backward(node: &LstmNode, x: &Matrix, w_ih: &Matrix, w_hh: &Matrix, dout: &Matrix) -> (Matrix, Matrix, Matrix, Matrix) {
    let (hidden, batches, seq_len) = (node.hidden, node.batches, node.seq_len);
    let hb = hidden * batches;
    let mut dgx = Matrix::zeros(4 * hidden, batches * seq_len);
    // Time-major stacks for the single recurrent-weight gradient product.
    let mut da_all = Matrix::zeros(4 * hidden, seq_len * batches);
    let mut hprev_all = Matrix::zeros(hidden, seq_len * batches);
    let mut dh_next = Matrix::zeros(hidden, batches);
    let mut dc_next = Matrix::zeros(hidden, batches);
    let zero = Matrix::zeros(hidden, batches);
    let mut da = Matrix::zeros(4 * hidden, batches);
    for step in (0..seq_len).rev() {
        let t = node.time_index(step);
        let (h_prev, c_prev) = if step == 0 {
            (&zero, &zero)
        } else {
            (&node.hiddens[step - 1], &node.cells[step - 1])
        };
        {
            let gs = node.gates[step].as_slice();
            let cs = node.cells[step].as_slice();
            let cp = c_prev.as_slice();
            let dhn = dh_next.as_slice();
            let dcn = dc_next.as_mut_slice();
            let das = da.as_mut_slice();
            for r in 0..hidden {
                let drow = dout.row(r);
                for b in 0..batches {
                    let k = r * batches + b;
                    let dh = drow[b * seq_len + t] + dhn[k];
                    let (i, f, g, o) = (gs[k], gs[hb + k], gs[2 * hb + k], gs[3 * hb + k]);
                    let tc = cs[k].tanh();
                    let d_o = dh * tc;
                    let dc = dcn[k] + dh * o * (1.0 - tc * tc);
                    das[k] = dc * g * i * (1.0 - i);
                    das[hb + k] = dc * cp[k] * f * (1.0 - f);
                    das[2 * hb + k] = dc * i * (1.0 - g * g);
                    das[3 * hb + k] = d_o * o * (1.0 - o);
                    dcn[k] = dc * f;
                }
            }
        }
        gemm(hidden, 4 * hidden, batches, w_hh.as_slice(), true, da.as_slice(), false, dh_next.as_mut_slice(), false);
        for r in 0..4 * hidden {
            let src = da.row(r);
            let dst = dgx.row_mut(r);
            for (b, &v) in src.iter().enumerate() {
                dst[b * seq_len + t] = v;
            }
            da_all.row_mut(r)[step * batches..(step + 1) * batches].copy_from_slice(src);
        }
        for r in 0..hidden {
            hprev_all.row_mut(r)[step * batches..(step + 1) * batches].copy_from_slice(h_prev.row(r));
        }
    }
    let dw_hh = matmul_values(&da_all, false, &hprev_all, true);
    let dw_ih = matmul_values(&dgx, false, x, true);
    let db = row_sums(&dgx);
    let dx = matmul_values(w_ih, true, &dgx, false);
    (dx, dw_ih, dw_hh, db)
}
