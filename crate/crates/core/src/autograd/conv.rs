//! Dilated causal and transposed 1-D convolutions over batched sequences.

use super::{check_seq, matmul_values, row_sums, shape_err, shift_cols, AutogradError, Var};
use crate::matrix::Matrix;

pub(super) fn dilated_forward(x: &Matrix, w: &Matrix, dilation: usize, seq_len: usize) -> Matrix {
    let c_out = w.rows() / 2;
    let both = matmul_values(w, false, x, false);
    let past = shift_cols(&both.slice_rows(0, c_out), dilation as isize, seq_len);
    let mut out = both.slice_rows(c_out, c_out);
    for (o, &p) in out.as_mut_slice().iter_mut().zip(past.as_slice()) {
        *o += p;
    }
    out
}

pub(super) fn dilated_backward(x: &Matrix, w: &Matrix, dy: &Matrix, dilation: usize, seq_len: usize) -> (Matrix, Matrix) {
    let d_past = shift_cols(dy, -(dilation as isize), seq_len);
    let d_both = Matrix::vstack(&[&d_past, dy]);
    let dw = matmul_values(&d_both, false, x, true);
    let dx = matmul_values(w, true, &d_both, false);
    (dx, dw)
}

pub(super) struct TransposedConvNode {
    pub inputs: [Var; 3],
    stride: usize,
    kernel: usize,
    seq_len: usize,
    c_out: usize,
}

impl TransposedConvNode {
    /// Calls `f(z_row_offset, z_col, out_col)` for every tap that lands inside
    /// the cropped output.
    fn for_each_tap(&self, batches: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (s, k_len, t_len) = (self.stride, self.kernel, self.seq_len);
        let pad = (k_len - s) / 2;
        let out_len = t_len * s;
        for b in 0..batches {
            for t in 0..t_len {
                for k in 0..k_len {
                    let pos = t * s + k;
                    if pos < pad || pos - pad >= out_len {
                        continue;
                    }
                    f(k * self.c_out, b * t_len + t, b * out_len + pos - pad);
                }
            }
        }
    }
}

pub(super) fn transposed_forward(
    x: &Matrix,
    w: &Matrix,
    bias: &Matrix,
    inputs: [Var; 3],
    stride: usize,
    kernel: usize,
    seq_len: usize,
) -> Result<(Matrix, TransposedConvNode), AutogradError> {
    let batches = check_seq("transposed_conv", x.cols(), seq_len)?;
    if stride == 0 || kernel < stride || (kernel - stride) % 2 != 0 || w.rows() % kernel != 0 || w.cols() != x.rows() {
        return Err(shape_err(
            "transposed_conv",
            format!(
                "kernel {kernel}, stride {stride}, weights {}x{}, input {} rows",
                w.rows(),
                w.cols(),
                x.rows()
            ),
        ));
    }
    let c_out = w.rows() / kernel;
    if bias.rows() != c_out || bias.cols() != 1 {
        return Err(shape_err("transposed_conv", format!("bias {}x{} for {c_out} channels", bias.rows(), bias.cols())));
    }
    let node = TransposedConvNode {
        inputs,
        stride,
        kernel,
        seq_len,
        c_out,
    };
    let z = matmul_values(w, false, x, false);
    let out_cols = batches * seq_len * stride;
    let mut out = Matrix::zeros(c_out, out_cols);
    {
        let zs = z.as_slice();
        let zc = z.cols();
        let os = out.as_mut_slice();
        node.for_each_tap(batches, |row0, zcol, ocol| {
            for c in 0..c_out {
                os[c * out_cols + ocol] += zs[(row0 + c) * zc + zcol];
            }
        });
    }
    for c in 0..c_out {
        let b = bias.get(c, 0);
        out.row_mut(c).iter_mut().for_each(|v| *v += b);
    }
    Ok((out, node))
}

pub(super) fn transposed_backward(node: &TransposedConvNode, x: &Matrix, w: &Matrix, dy: &Matrix) -> (Matrix, Matrix, Matrix) {
    let batches = x.cols() / node.seq_len;
    let c_out = node.c_out;
    let mut dz = Matrix::zeros(w.rows(), x.cols());
    {
        let zc = dz.cols();
        let oc = dy.cols();
        let ds = dz.as_mut_slice();
        let ys = dy.as_slice();
        node.for_each_tap(batches, |row0, zcol, ocol| {
            for c in 0..c_out {
                ds[(row0 + c) * zc + zcol] = ys[c * oc + ocol];
            }
        });
    }
    let dw = matmul_values(&dz, false, x, true);
    let dx = matmul_values(w, true, &dz, false);
    (dx, dw, row_sums(dy))
}
