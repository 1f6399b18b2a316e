//! Raw forward/backward kernels on flat row-major buffers.
//!
//! Shapes are validated by the tape before these are called.

use super::Float;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvGeom {
    pub fn ho(&self) -> usize {
        self.h - self.k + 1
    }

    pub fn wo(&self) -> usize {
        self.w - self.k + 1
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn spatial_out(&self) -> usize {
        self.ho() * self.wo()
    }
}

fn im2col<T: Float>(g: &ConvGeom, img: &[T], cols: &mut [T]) {
    let (ho, wo, k) = (g.ho(), g.wo(), g.k);
    let hw = g.h * g.w;
    for c in 0..g.cin {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for i in 0..ho {
                    let src = c * hw + (i + ki) * g.w + kj;
                    dst[i * wo..(i + 1) * wo].copy_from_slice(&img[src..src + wo]);
                }
            }
        }
    }
}

fn col2im_add<T: Float>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    let (ho, wo, k) = (g.ho(), g.wo(), g.k);
    let hw = g.h * g.w;
    for c in 0..g.cin {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for i in 0..ho {
                    let dst = c * hw + (i + ki) * g.w + kj;
                    for (d, &s) in img[dst..dst + wo].iter_mut().zip(&src[i * wo..(i + 1) * wo]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Returns `(output, unfolded patches)`; the patches are kept for backward.
pub(crate) fn conv2d_forward<T: Float>(g: &ConvGeom, input: &[T], weight: &[T], bias: &[T]) -> (Vec<T>, Vec<T>) {
    let (patch, sp) = (g.patch(), g.spatial_out());
    let mut cols = vec![T::zero(); g.n * patch * sp];
    let mut out = vec![T::zero(); g.n * g.cout * sp];
    let img_len = g.cin * g.h * g.w;
    for b in 0..g.n {
        let c = &mut cols[b * patch * sp..(b + 1) * patch * sp];
        im2col(g, &input[b * img_len..(b + 1) * img_len], c);
        let o = &mut out[b * g.cout * sp..(b + 1) * g.cout * sp];
        for (ch, row) in o.chunks_exact_mut(sp).enumerate() {
            row.fill(bias[ch]);
        }
        T::gemm(
            g.cout,
            patch,
            sp,
            T::one(),
            weight,
            (patch as isize, 1),
            c,
            (sp as isize, 1),
            T::one(),
            o,
            (sp as isize, 1),
        );
    }
    (out, cols)
}

/// Accumulates weight/bias gradients and, when requested, the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Float>(
    g: &ConvGeom,
    cols: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_weight: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    let (patch, sp) = (g.patch(), g.spatial_out());
    if let Some(gw) = grad_weight {
        for b in 0..g.n {
            let dy = &grad_out[b * g.cout * sp..(b + 1) * g.cout * sp];
            let c = &cols[b * patch * sp..(b + 1) * patch * sp];
            T::gemm(
                g.cout,
                sp,
                patch,
                T::one(),
                dy,
                (sp as isize, 1),
                c,
                (1, sp as isize),
                T::one(),
                gw,
                (patch as isize, 1),
            );
        }
    }
    if let Some(gb) = grad_bias {
        for b in 0..g.n {
            let dy = &grad_out[b * g.cout * sp..(b + 1) * g.cout * sp];
            for (ch, row) in dy.chunks_exact(sp).enumerate() {
                gb[ch] += row.iter().copied().sum::<T>();
            }
        }
    }
    if let Some(gx) = grad_input {
        let img_len = g.cin * g.h * g.w;
        let mut dcols = vec![T::zero(); patch * sp];
        for b in 0..g.n {
            let dy = &grad_out[b * g.cout * sp..(b + 1) * g.cout * sp];
            T::gemm(
                patch,
                g.cout,
                sp,
                T::one(),
                weight,
                (1, patch as isize),
                dy,
                (sp as isize, 1),
                T::zero(),
                &mut dcols,
                (sp as isize, 1),
            );
            col2im_add(g, &dcols, &mut gx[b * img_len..(b + 1) * img_len]);
        }
    }
}

/// 2x2 stride-2 max pooling over `[planes, h, w]`. Ties resolve to the first
/// element in row-major window order.
pub(crate) fn maxpool2_forward<T: Float>(planes: usize, h: usize, w: usize, input: &[T]) -> (Vec<T>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut argmax = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

/// `out = input · weightᵀ + bias` for `input: [n, din]`, `weight: [dout, din]`.
pub(crate) fn linear_forward<T: Float>(
    n: usize,
    din: usize,
    dout: usize,
    input: &[T],
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let mut out = Vec::with_capacity(n * dout);
    for _ in 0..n {
        out.extend_from_slice(bias);
    }
    T::gemm(
        n,
        din,
        dout,
        T::one(),
        input,
        (din as isize, 1),
        weight,
        (1, din as isize),
        T::one(),
        &mut out,
        (dout as isize, 1),
    );
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Float>(
    n: usize,
    din: usize,
    dout: usize,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_weight: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    if let Some(gx) = grad_input {
        T::gemm(
            n,
            dout,
            din,
            T::one(),
            grad_out,
            (dout as isize, 1),
            weight,
            (din as isize, 1),
            T::one(),
            gx,
            (din as isize, 1),
        );
    }
    if let Some(gw) = grad_weight {
        T::gemm(
            dout,
            n,
            din,
            T::one(),
            grad_out,
            (1, dout as isize),
            input,
            (din as isize, 1),
            T::one(),
            gw,
            (din as isize, 1),
        );
    }
    if let Some(gb) = grad_bias {
        for row in grad_out.chunks_exact(dout) {
            for (b, &g) in gb.iter_mut().zip(row) {
                *b += g;
            }
        }
    }
}
