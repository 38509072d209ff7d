//! Convolution kernels behind the graph operations, written as per-tap GEMMs. Activations are `(batch, positions,
//! channels)` row-major; conv weights are `(kernel, in, out)`.

use super::tensor::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub len: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub pad_left: usize,
}

/// A strided row-major view: element `(r, c)` sits at `off + r * rs + c * cs`.
#[derive(Clone, Copy)]
struct View {
    off: usize,
    rs: usize,
    cs: usize,
}

impl View {
    fn rows(off: usize, cols: usize) -> Self {
        Self {
            off,
            rs: cols,
            cs: 1,
        }
    }

    fn cols(off: usize, rows: usize) -> Self {
        Self {
            off,
            rs: 1,
            cs: rows,
        }
    }

    fn last(&self, rows: usize, cols: usize) -> usize {
        self.off + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `c += a * b` with `a` of size `m x k` and `b` of size `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm_acc<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    va: View,
    b: &[T],
    vb: View,
    c: &mut [T],
    vc: View,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!(va.last(m, k) < a.len() && vb.last(k, n) < b.len() && vc.last(m, n) < c.len());
    // SAFETY: the bounds of all three views were checked above and `c` is a
    // unique borrow, so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_acc(
            m,
            k,
            n,
            a.as_ptr().add(va.off),
            va.rs as isize,
            va.cs as isize,
            b.as_ptr().add(vb.off),
            vb.rs as isize,
            vb.cs as isize,
            c.as_mut_ptr().add(vc.off),
            vc.rs as isize,
            vc.cs as isize,
        )
    }
}

/// Frames stacked into one GEMM.
const FRAMES_PER_GEMM: usize = 32;

impl ConvDims {
    /// Rows per frame once padded on both sides.
    fn padded_len(&self) -> usize {
        self.len + self.kernel - 1
    }

    /// Zero-padded copy of consecutive `(len, ch)` frames, stacked, with
    /// `left` zero rows before each frame.
    fn pad_into<T: Scalar>(&self, src: &[T], ch: usize, left: usize, buf: &mut Vec<T>) {
        let lp = self.padded_len();
        let frames = src.len() / (self.len * ch);
        buf.clear();
        buf.resize(frames * lp * ch, T::zero());
        for (dst, frame) in buf
            .chunks_exact_mut(lp * ch)
            .zip(src.chunks_exact(self.len * ch))
        {
            dst[left * ch..(left + self.len) * ch].copy_from_slice(frame);
        }
    }

    /// Rows of a stacked padded group that start a full receptive field.
    fn window_rows(&self, frames: usize) -> usize {
        frames * self.padded_len() - (self.kernel - 1)
    }
}

// In a padded, stacked buffer with `ch` channels the `kernel * ch` values
// starting at row `r` are exactly the receptive field of output row `r`, so
// a convolution is one GEMM over overlapping rows (row stride `ch`). Rows
// past a frame's end straddle two frames and are discarded.

pub fn conv1d_forward<T: Scalar>(d: ConvDims, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let (ci, co, lp) = (d.in_ch, d.out_ch, d.padded_len());
    let (mut xp, mut op) = (Vec::new(), Vec::new());
    for (xg, og) in x
        .chunks(FRAMES_PER_GEMM * d.len * ci)
        .zip(out.chunks_mut(FRAMES_PER_GEMM * d.len * co))
    {
        d.pad_into(xg, ci, d.pad_left, &mut xp);
        let frames = xg.len() / (d.len * ci);
        op.clear();
        op.resize(frames * lp * co, T::zero());
        let rows = d.window_rows(frames);
        gemm_acc(
            rows,
            d.kernel * ci,
            co,
            &xp,
            View {
                off: 0,
                rs: ci,
                cs: 1,
            },
            w,
            View::rows(0, co),
            &mut op,
            View::rows(0, co),
        );
        for (dst, src) in og
            .chunks_exact_mut(d.len * co)
            .zip(op.chunks_exact(lp * co))
        {
            for (drow, srow) in dst.chunks_exact_mut(co).zip(src.chunks_exact(co)) {
                for ((o, &v), &bias) in drow.iter_mut().zip(srow).zip(b) {
                    *o = v + bias;
                }
            }
        }
    }
}

/// Accumulates weight, bias and input gradients for `grad_out`.
pub fn conv1d_backward<T: Scalar>(
    d: ConvDims,
    x: &[T],
    w: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    mut grad_x: Option<&mut [T]>,
) {
    let (ci, co, kw, lp) = (d.in_ch, d.out_ch, d.kernel, d.padded_len());
    for row in grad_out.chunks_exact(co) {
        for (acc, &g) in grad_b.iter_mut().zip(row) {
            *acc += g;
        }
    }
    // Flipped, transposed taps `(kernel, out, in)`: the input gradient is a
    // convolution of the output gradient with these.
    let mut wf = vec![T::zero(); w.len()];
    for k in 0..kw {
        for i in 0..ci {
            for o in 0..co {
                wf[((kw - 1 - k) * co + o) * ci + i] = w[(k * ci + i) * co + o];
            }
        }
    }
    let (mut xp, mut gp, mut gpp, mut gxp) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (group_x, group_g) = (FRAMES_PER_GEMM * d.len * ci, FRAMES_PER_GEMM * d.len * co);
    for (gi, (xg, gg)) in x.chunks(group_x).zip(grad_out.chunks(group_g)).enumerate() {
        let frames = xg.len() / (d.len * ci);
        let rows = d.window_rows(frames);
        d.pad_into(xg, ci, d.pad_left, &mut xp);
        // Output gradients at the row of their receptive field, zero elsewhere.
        d.pad_into(gg, co, 0, &mut gp);
        // grad_w += windows(xp)^T gp
        gemm_acc(
            kw * ci,
            rows,
            co,
            &xp,
            View::cols(0, ci),
            &gp,
            View::rows(0, co),
            grad_w,
            View::rows(0, co),
        );

        let Some(grad_x) = grad_x.as_deref_mut() else {
            continue;
        };
        d.pad_into(gg, co, kw - 1 - d.pad_left, &mut gpp);
        gxp.clear();
        gxp.resize(frames * lp * ci, T::zero());
        // gxp = windows(gpp) wf
        gemm_acc(
            rows,
            kw * co,
            ci,
            &gpp,
            View {
                off: 0,
                rs: co,
                cs: 1,
            },
            &wf,
            View::rows(0, ci),
            &mut gxp,
            View::rows(0, ci),
        );
        let gx = &mut grad_x[gi * group_x..gi * group_x + xg.len()];
        for (dst, src) in gx
            .chunks_exact_mut(d.len * ci)
            .zip(gxp.chunks_exact(lp * ci))
        {
            for (a, &g) in dst.iter_mut().zip(src) {
                *a += g;
            }
        }
    }
}
