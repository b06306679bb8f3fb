//! Batched forward/backward internals.
//!
//! Activations are stored channel-major as `[C, B*H*W]` matrices (sample,
//! then row, then column within each channel row), so convolutions become one
//! im2col gather plus one matrix multiply per layer and the batch dimension
//! never needs a permute. The two-way splits in the parallel matmul helpers
//! are fixed, not thread-count dependent, so results are bit-reproducible
//! regardless of scheduling.

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::slice::ParallelSliceMut;

use super::{RegressorModel, Scalar, KERNEL};

const PAR_FLOP_THRESHOLD: usize = 1 << 21;

/// Reusable buffer pool keyed by exact shape. The batch buffers are tens of
/// megabytes; recycling them across training steps avoids page-fault churn
/// from fresh large allocations every batch. Takers must fully overwrite a
/// buffer or zero the parts they skip.
#[derive(Default)]
pub(crate) struct Workspace<T> {
    pool: Vec<Array2<T>>,
}

impl<T: Scalar> Workspace<T> {
    pub(crate) fn new() -> Self {
        Workspace { pool: Vec::new() }
    }

    fn take(&mut self, rows: usize, cols: usize) -> Array2<T> {
        if let Some(i) = self.pool.iter().position(|a| a.dim() == (rows, cols)) {
            self.pool.swap_remove(i)
        } else {
            Array2::zeros((rows, cols))
        }
    }

    fn take_zeroed(&mut self, rows: usize, cols: usize) -> Array2<T> {
        let mut a = self.take(rows, cols);
        a.fill(T::zero());
        a
    }

    fn give(&mut self, a: Array2<T>) {
        self.pool.push(a);
    }

    /// Return a consumed forward cache's buffers to the pool.
    pub(crate) fn recycle(&mut self, cache: BatchCache<T>) {
        for layer in cache.layers {
            self.give(layer.input);
            self.give(layer.z);
        }
        self.give(cache.feat);
    }
}

pub(crate) struct LayerCache<T> {
    /// The layer input, `[in_c, B*H*W]` (weight gradients correlate against
    /// it directly, so the much larger im2col matrix is never retained).
    input: Array2<T>,
    /// Pre-rectifier conv output, `[out_c, B*H*W]`.
    z: Array2<T>,
    /// Winning window position (dy*2+dx) per pooled cell.
    pool_argmax: Vec<u8>,
    /// Spatial dims entering the conv.
    in_h: usize,
    in_w: usize,
}

pub(crate) struct BatchCache<T> {
    layers: Vec<LayerCache<T>>,
    /// Global-average-pool output, `[C_last, B]`.
    feat: Array2<T>,
    batch: usize,
}

impl<T: Scalar> BatchCache<T> {
    /// Hash of every discrete forward decision (rectifier sign, pool argmax).
    /// Two evaluations with different hashes straddle a tie and are excluded
    /// from finite-difference comparisons.
    pub(crate) fn decision_signature(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut feed = |byte: u8| {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        };
        for layer in &self.layers {
            let mut acc: u8 = 0;
            let mut nbits = 0;
            for &z in layer.z.iter() {
                acc = (acc << 1) | u8::from(z > T::zero());
                nbits += 1;
                if nbits == 8 {
                    feed(acc);
                    acc = 0;
                    nbits = 0;
                }
            }
            if nbits > 0 {
                feed(acc);
            }
            for &a in &layer.pool_argmax {
                feed(a);
            }
        }
        hash
    }
}

/// `c = a · b`, parallelized over two fixed column halves of the output.
fn matmul_into<T: Scalar>(a: &ArrayView2<'_, T>, b: &ArrayView2<'_, T>, c: &mut Array2<T>) {
    let (m, k) = a.dim();
    let n = b.ncols();
    debug_assert_eq!(k, b.nrows());
    debug_assert_eq!(c.dim(), (m, n));
    if 2 * m * k * n < PAR_FLOP_THRESHOLD || n < 2 {
        general_mat_mul(T::one(), a, b, T::zero(), &mut c.view_mut());
        return;
    }
    let mid = n / 2;
    let (b1, b2) = b.split_at(Axis(1), mid);
    let (c1, c2) = c.view_mut().split_at(Axis(1), mid);
    rayon::join(
        || {
            let mut c1 = c1;
            general_mat_mul(T::one(), a, &b1, T::zero(), &mut c1);
        },
        || {
            let mut c2 = c2;
            general_mat_mul(T::one(), a, &b2, T::zero(), &mut c2);
        },
    );
}

/// `a · b` with the contraction axis split in two fixed halves computed in
/// parallel and summed in a fixed order; used where k is the huge axis and
/// the output is small.
fn matmul_ksplit<T: Scalar>(a: &ArrayView2<'_, T>, b: &ArrayView2<'_, T>) -> Array2<T> {
    let (m, k) = a.dim();
    let n = b.ncols();
    let mut c = Array2::<T>::zeros((m, n));
    if 2 * m * k * n < PAR_FLOP_THRESHOLD || k < 2 {
        general_mat_mul(T::one(), a, b, T::zero(), &mut c.view_mut());
        return c;
    }
    let mid = k / 2;
    let (a1, a2) = a.split_at(Axis(1), mid);
    let (b1, b2) = b.split_at(Axis(0), mid);
    let c2 = {
        let (_, c2) = rayon::join(
            || {
                let mut c1v = c.view_mut();
                general_mat_mul(T::one(), &a1, &b1, T::zero(), &mut c1v);
            },
            || {
                let mut c2 = Array2::<T>::zeros((m, n));
                general_mat_mul(T::one(), &a2, &b2, T::zero(), &mut c2.view_mut());
                c2
            },
        );
        c2
    };
    c.zip_mut_with(&c2, |x, &y| *x = *x + y);
    c
}

/// Gather 3×3 neighborhoods (zero padding) into `cols: [in_c*9, B*H*W]`.
/// Overwrites every element, so a recycled buffer is fine.
fn im2col_into<T: Scalar>(
    input: &ArrayView2<'_, T>,
    batch: usize,
    h: usize,
    w: usize,
    cols: &mut Array2<T>,
) {
    cols.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(r, mut row)| {
            let c = r / (KERNEL * KERNEL);
            let ky = (r / KERNEL) % KERNEL;
            let kx = r % KERNEL;
            let src_row = input.row(c);
            let src = src_row.as_slice().expect("standard layout");
            let dst = row.as_slice_mut().expect("standard layout");
            for b in 0..batch {
                for y in 0..h {
                    let d = (b * h + y) * w;
                    let ys = y as isize + ky as isize - 1;
                    if ys < 0 || ys >= h as isize {
                        dst[d..d + w].fill(T::zero());
                        continue;
                    }
                    let s = (b * h + ys as usize) * w;
                    match kx {
                        0 => {
                            dst[d] = T::zero();
                            dst[d + 1..d + w].copy_from_slice(&src[s..s + w - 1]);
                        }
                        1 => dst[d..d + w].copy_from_slice(&src[s..s + w]),
                        _ => {
                            dst[d..d + w - 1].copy_from_slice(&src[s + 1..s + w]);
                            dst[d + w - 1] = T::zero();
                        }
                    }
                }
            }
        });
}

/// Scatter-add transpose of [`im2col_into`]; `dinput` must arrive zeroed.
fn col2im_add<T: Scalar>(
    dcols: &ArrayView2<'_, T>,
    batch: usize,
    h: usize,
    w: usize,
    dinput: &mut Array2<T>,
) {
    dinput
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(c, mut drow)| {
            let dst = drow.as_slice_mut().expect("standard layout");
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let r = (c * KERNEL + ky) * KERNEL + kx;
                    let src_row = dcols.row(r);
                    let src = src_row.as_slice().expect("standard layout");
                    for b in 0..batch {
                        for y in 0..h {
                            let ys = y as isize + ky as isize - 1;
                            if ys < 0 || ys >= h as isize {
                                continue;
                            }
                            let s = (b * h + y) * w;
                            let d = (b * h + ys as usize) * w;
                            match kx {
                                0 => {
                                    let (ds, ss) = (&mut dst[d..d + w - 1], &src[s + 1..s + w]);
                                    for (a, &g) in ds.iter_mut().zip(ss.iter()) {
                                        *a = *a + g;
                                    }
                                }
                                1 => {
                                    let (ds, ss) = (&mut dst[d..d + w], &src[s..s + w]);
                                    for (a, &g) in ds.iter_mut().zip(ss.iter()) {
                                        *a = *a + g;
                                    }
                                }
                                _ => {
                                    let (ds, ss) = (&mut dst[d + 1..d + w], &src[s..s + w - 1]);
                                    for (a, &g) in ds.iter_mut().zip(ss.iter()) {
                                        *a = *a + g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

/// Fused rectifier + 2×2 max-pool into a recycled buffer. The argmax is taken
/// over the raw values; the pooled output is the rectified maximum (the
/// rectifier is monotone, so the two commute).
fn maxpool2_relu_into<T: Scalar>(
    z: &ArrayView2<'_, T>,
    batch: usize,
    h: usize,
    w: usize,
    out: &mut Array2<T>,
) -> Vec<u8> {
    let c_n = z.nrows();
    let (h2, w2) = (h / 2, w / 2);
    let cells = batch * h2 * w2;
    let mut argmax = vec![0u8; c_n * cells];
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(argmax.par_chunks_mut(cells))
        .enumerate()
        .for_each(|(c, (mut orow, amax))| {
            let src_row = z.row(c);
            let src = src_row.as_slice().expect("standard layout");
            let dst = orow.as_slice_mut().expect("standard layout");
            for b in 0..batch {
                for y2 in 0..h2 {
                    let base_in = (b * h + 2 * y2) * w;
                    let base_out = (b * h2 + y2) * w2;
                    for x2 in 0..w2 {
                        let i0 = base_in + 2 * x2;
                        let cand = [src[i0], src[i0 + 1], src[i0 + w], src[i0 + w + 1]];
                        let mut best = 0usize;
                        for k in 1..4 {
                            if cand[k] > cand[best] {
                                best = k;
                            }
                        }
                        dst[base_out + x2] = cand[best].max(T::zero());
                        amax[base_out + x2] = best as u8;
                    }
                }
            }
        });
    argmax
}

/// Route pooled-cell gradients back to their argmax positions; `dz` must
/// arrive zeroed.
fn maxpool2_scatter_into<T: Scalar>(
    dout: &ArrayView2<'_, T>,
    argmax: &[u8],
    batch: usize,
    h: usize,
    w: usize,
    dz: &mut Array2<T>,
) {
    let (h2, w2) = (h / 2, w / 2);
    let cells = batch * h2 * w2;
    dz.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(c, mut drow)| {
            let dst = drow.as_slice_mut().expect("standard layout");
            let src_row = dout.row(c);
            let src = src_row.as_slice().expect("standard layout");
            let amax = &argmax[c * cells..(c + 1) * cells];
            for b in 0..batch {
                for y2 in 0..h2 {
                    let base_in = (b * h + 2 * y2) * w;
                    let base_out = (b * h2 + y2) * w2;
                    for x2 in 0..w2 {
                        let k = amax[base_out + x2] as usize;
                        let (dy, dx) = (k / 2, k % 2);
                        dst[base_in + dy * w + 2 * x2 + dx] = src[base_out + x2];
                    }
                }
            }
        });
}

fn gap_into<T: Scalar>(a: &ArrayView2<'_, T>, batch: usize, h: usize, w: usize, out: &mut Array2<T>) {
    let c_n = a.nrows();
    let hw = h * w;
    let inv = T::from_f64(1.0 / hw as f64);
    for c in 0..c_n {
        let src_row = a.row(c);
        let src = src_row.as_slice().expect("standard layout");
        for b in 0..batch {
            let mut acc = T::zero();
            for &v in &src[b * hw..(b + 1) * hw] {
                acc = acc + v;
            }
            out[(c, b)] = acc * inv;
        }
    }
}

fn gap_backward_into<T: Scalar>(
    dfeat: &ArrayView2<'_, T>,
    batch: usize,
    h: usize,
    w: usize,
    out: &mut Array2<T>,
) {
    let c_n = dfeat.nrows();
    let hw = h * w;
    let inv = T::from_f64(1.0 / hw as f64);
    for c in 0..c_n {
        let mut dst_row = out.row_mut(c);
        let dst = dst_row.as_slice_mut().expect("standard layout");
        for b in 0..batch {
            dst[b * hw..(b + 1) * hw].fill(dfeat[(c, b)] * inv);
        }
    }
}

fn add_row_bias<T: Scalar>(z: &mut Array2<T>, bias: &Array1<T>) {
    for (mut row, &b) in z.outer_iter_mut().zip(bias.iter()) {
        row.mapv_inplace(|v| v + b);
    }
}

/// Dot product with eight fixed-order accumulator lanes; vectorizes without
/// needing float reassociation and reduces in a fixed order, so results are
/// reproducible.
#[inline]
fn lane_dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    let (mut s4, mut s5, mut s6, mut s7) = (T::zero(), T::zero(), T::zero(), T::zero());
    let n = a.len() - a.len() % 8;
    for (aa, bb) in a[..n].chunks_exact(8).zip(b[..n].chunks_exact(8)) {
        let aa: &[T; 8] = aa.try_into().unwrap();
        let bb: &[T; 8] = bb.try_into().unwrap();
        s0 = s0 + aa[0] * bb[0];
        s1 = s1 + aa[1] * bb[1];
        s2 = s2 + aa[2] * bb[2];
        s3 = s3 + aa[3] * bb[3];
        s4 = s4 + aa[4] * bb[4];
        s5 = s5 + aa[5] * bb[5];
        s6 = s6 + aa[6] * bb[6];
        s7 = s7 + aa[7] * bb[7];
    }
    let mut tail = T::zero();
    for (&x, &y) in a[n..].iter().zip(b[n..].iter()) {
        tail = tail + x * y;
    }
    (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail
}

/// Conv weight gradient as a direct cross-correlation of `dz` with the layer
/// input: `dW[oc][(c,ky,kx)] = Σ dz[oc][b,y,x] · input[c][b, y+ky-1, x+kx-1]`.
/// Streams both operands once per (oc, c) pair instead of packing the im2col
/// transpose.
fn conv_dw_direct<T: Scalar>(
    dz: &ArrayView2<'_, T>,
    input: &ArrayView2<'_, T>,
    batch: usize,
    h: usize,
    w: usize,
) -> Array2<T> {
    let oc_n = dz.nrows();
    let ic_n = input.nrows();
    let mut dw = Array2::<T>::zeros((oc_n, ic_n * KERNEL * KERNEL));
    dw.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(oc, mut dwrow)| {
            let dz_row = dz.row(oc);
            let dzr = dz_row.as_slice().expect("standard layout");
            for c in 0..ic_n {
                let in_row = input.row(c);
                let ar = in_row.as_slice().expect("standard layout");
                let mut acc = [T::zero(); 9];
                for b in 0..batch {
                    for y in 0..h {
                        let dseg = &dzr[(b * h + y) * w..(b * h + y + 1) * w];
                        for ky in 0..KERNEL {
                            let ys = y as isize + ky as isize - 1;
                            if ys < 0 || ys >= h as isize {
                                continue;
                            }
                            let aseg = &ar[(b * h + ys as usize) * w..(b * h + ys as usize + 1) * w];
                            acc[ky * 3] = acc[ky * 3] + lane_dot(&dseg[1..], &aseg[..w - 1]);
                            acc[ky * 3 + 1] = acc[ky * 3 + 1] + lane_dot(dseg, aseg);
                            acc[ky * 3 + 2] = acc[ky * 3 + 2] + lane_dot(&dseg[..w - 1], &aseg[1..]);
                        }
                    }
                }
                for k in 0..9 {
                    dwrow[c * 9 + k] = acc[k];
                }
            }
        });
    dw
}

/// Run the full stack on a batch. `input` is `[1, B*input_h*input_w]`.
/// Returns head outputs `[3, B]` and, when requested, the caches needed for
/// [`backward_batch_ws`]; hand the cache back to the workspace afterwards.
pub(crate) fn forward_batch_ws<T: Scalar>(
    model: &RegressorModel<T>,
    input: &Array2<T>,
    batch: usize,
    want_cache: bool,
    ws: &mut Workspace<T>,
) -> (Array2<T>, Option<BatchCache<T>>) {
    debug_assert_eq!(input.ncols(), batch * model.input_h * model.input_w);
    let (mut h, mut w) = (model.input_h, model.input_w);
    let mut act: Option<Array2<T>> = None;
    let mut layers = Vec::with_capacity(model.convs.len());
    for conv in &model.convs {
        let (out_c, in_c) = (conv.weight.dim().0, conv.weight.dim().1);
        let n = batch * h * w;
        let view = act.as_ref().map(|a| a.view()).unwrap_or_else(|| input.view());
        let mut cols = ws.take(in_c * KERNEL * KERNEL, n);
        im2col_into(&view, batch, h, w, &mut cols);
        let w2 = conv
            .weight
            .view()
            .into_shape_with_order((out_c, in_c * KERNEL * KERNEL))
            .expect("standard layout");
        let mut z = ws.take(out_c, n);
        matmul_into(&w2, &cols.view(), &mut z);
        ws.give(cols);
        add_row_bias(&mut z, &conv.bias);
        let mut pooled = ws.take(out_c, batch * (h / 2) * (w / 2));
        let argmax = maxpool2_relu_into(&z.view(), batch, h, w, &mut pooled);
        if want_cache {
            let layer_input = match act.take() {
                Some(prev) => prev,
                None => {
                    let mut own = ws.take(1, n);
                    own.as_slice_mut()
                        .expect("standard layout")
                        .copy_from_slice(input.as_slice().expect("standard layout"));
                    own
                }
            };
            layers.push(LayerCache { input: layer_input, z, pool_argmax: argmax, in_h: h, in_w: w });
        } else {
            if let Some(prev) = act.take() {
                ws.give(prev);
            }
            ws.give(z);
        }
        act = Some(pooled);
        h /= 2;
        w /= 2;
    }
    let act = act.expect("at least one conv layer");
    let mut feat = ws.take(act.nrows(), batch);
    gap_into(&act.view(), batch, h, w, &mut feat);
    ws.give(act);
    let mut out = Array2::<T>::zeros((model.head.weight.nrows(), batch));
    matmul_into(&model.head.weight.view(), &feat.view(), &mut out);
    add_row_bias(&mut out, &model.head.bias);
    if want_cache {
        (out, Some(BatchCache { layers, feat, batch }))
    } else {
        ws.give(feat);
        (out, None)
    }
}

/// One-off convenience wrapper with a private workspace.
pub(crate) fn forward_batch<T: Scalar>(
    model: &RegressorModel<T>,
    input: &Array2<T>,
    batch: usize,
    want_cache: bool,
) -> (Array2<T>, Option<BatchCache<T>>) {
    let mut ws = Workspace::new();
    forward_batch_ws(model, input, batch, want_cache, &mut ws)
}

/// Parameter gradients in the canonical flat order (conv1 w, conv1 b, ...,
/// head w, head b), matching `RegressorModel::param_slices`.
pub(crate) struct Grads<T> {
    pub tensors: Vec<Vec<T>>,
}

/// Backpropagate `dout` (`[3, B]`, gradient of the loss in the head outputs)
/// through the cached forward pass.
pub(crate) fn backward_batch_ws<T: Scalar>(
    model: &RegressorModel<T>,
    cache: &BatchCache<T>,
    dout: &Array2<T>,
    ws: &mut Workspace<T>,
) -> Grads<T> {
    let batch = cache.batch;
    let d_head_w = matmul_ksplit(&dout.view(), &cache.feat.t());
    let d_head_b = dout.sum_axis(Axis(1));
    let mut d_feat = Array2::<T>::zeros((model.head.weight.ncols(), batch));
    matmul_into(&model.head.weight.t(), &dout.view(), &mut d_feat);

    let last = cache.layers.last().expect("at least one conv layer");
    let (mut h, mut w) = (last.in_h / 2, last.in_w / 2);
    let mut d_act = ws.take(d_feat.nrows(), batch * h * w);
    gap_backward_into(&d_feat.view(), batch, h, w, &mut d_act);

    let mut rev: Vec<(Vec<T>, Vec<T>)> = Vec::with_capacity(model.convs.len());
    for (li, (conv, layer)) in model.convs.iter().zip(cache.layers.iter()).enumerate().rev() {
        h = layer.in_h;
        w = layer.in_w;
        let (out_c, in_c) = (conv.weight.dim().0, conv.weight.dim().1);
        let n = batch * h * w;
        // back through the pool, then gate by the rectifier sign
        let mut dz = ws.take_zeroed(out_c, n);
        maxpool2_scatter_into(&d_act.view(), &layer.pool_argmax, batch, h, w, &mut dz);
        dz.zip_mut_with(&layer.z, |d, &zv| {
            if zv <= T::zero() {
                *d = T::zero();
            }
        });
        let d_w2 = if in_c == 1 {
            // single input plane: direct correlation beats the degenerate
            // k=9 matmul
            conv_dw_direct(&dz.view(), &layer.input.view(), batch, h, w)
        } else {
            let mut cols = ws.take(in_c * KERNEL * KERNEL, n);
            im2col_into(&layer.input.view(), batch, h, w, &mut cols);
            let d = matmul_ksplit(&dz.view(), &cols.t());
            ws.give(cols);
            d
        };
        let d_b = dz.sum_axis(Axis(1));
        if li > 0 {
            let w2 = conv
                .weight
                .view()
                .into_shape_with_order((out_c, in_c * KERNEL * KERNEL))
                .expect("standard layout");
            let mut d_cols = ws.take(in_c * KERNEL * KERNEL, n);
            matmul_into(&w2.t(), &dz.view(), &mut d_cols);
            let fresh = ws.take_zeroed(in_c, n);
            ws.give(std::mem::replace(&mut d_act, fresh));
            col2im_add(&d_cols.view(), batch, h, w, &mut d_act);
            ws.give(d_cols);
        }
        ws.give(dz);
        rev.push((
            d_w2.into_raw_vec_and_offset().0,
            d_b.into_raw_vec_and_offset().0,
        ));
    }
    ws.give(d_act);

    let mut tensors = Vec::with_capacity(rev.len() * 2 + 2);
    for (dw, db) in rev.into_iter().rev() {
        tensors.push(dw);
        tensors.push(db);
    }
    tensors.push(d_head_w.into_raw_vec_and_offset().0);
    tensors.push(d_head_b.into_raw_vec_and_offset().0);
    Grads { tensors }
}

/// One-off convenience wrapper with a private workspace.
pub(crate) fn backward_batch<T: Scalar>(
    model: &RegressorModel<T>,
    cache: &BatchCache<T>,
    dout: &Array2<T>,
) -> Grads<T> {
    let mut ws = Workspace::new();
    backward_batch_ws(model, cache, dout, &mut ws)
}
