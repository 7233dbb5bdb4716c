//! Forward and backward kernels over raw row-major buffers.
//!
//! Activations are laid out `[batch, channel, time, joint]`. The heavy
//! kernels reduce to per-sample matrix products so the inner loops run in
//! `matrixmultiply`.

use super::Real;

/// `C ← alpha·op(A)·op(B) + beta·C` for row-major buffers.
///
/// `a` holds an m×k matrix, or k×m when `trans_a`; likewise `b` holds k×n,
/// or n×k when `trans_b`. `c` is m×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "gemm: lhs buffer too small");
    assert!(b.len() >= k * n, "gemm: rhs buffer too small");
    assert!(c.len() >= m * n, "gemm: output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index reachable through these
    // dimensions and strides.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn temporal_out_len(t: usize, stride: usize) -> usize {
    t.div_ceil(stride)
}

/// Geometry of a strided, zero-padded temporal convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TemporalGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub joints: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl TemporalGeom {
    fn pad(&self) -> usize {
        self.kernel / 2
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.t_out * self.joints
    }

    fn in_sample(&self) -> usize {
        self.c_in * self.t_in * self.joints
    }

    fn out_sample(&self) -> usize {
        self.c_out * self.t_out * self.joints
    }

    /// Source frame for output frame `to` and tap `tap`, if inside the input.
    fn source(&self, to: usize, tap: usize) -> Option<usize> {
        let t = (to * self.stride + tap).checked_sub(self.pad())?;
        (t < self.t_in).then_some(t)
    }

    fn im2col<T: Real>(&self, x: &[T], col: &mut [T]) {
        let n = self.joints;
        col.fill(T::zero());
        for c in 0..self.c_in {
            for tap in 0..self.kernel {
                let row = (c * self.kernel + tap) * self.col_cols();
                for to in 0..self.t_out {
                    if let Some(t) = self.source(to, tap) {
                        let src = (c * self.t_in + t) * n;
                        col[row + to * n..row + (to + 1) * n].copy_from_slice(&x[src..src + n]);
                    }
                }
            }
        }
    }

    fn col2im_add<T: Real>(&self, col: &[T], dx: &mut [T]) {
        let n = self.joints;
        for c in 0..self.c_in {
            for tap in 0..self.kernel {
                let row = (c * self.kernel + tap) * self.col_cols();
                for to in 0..self.t_out {
                    if let Some(t) = self.source(to, tap) {
                        let dst = (c * self.t_in + t) * n;
                        for (d, s) in dx[dst..dst + n]
                            .iter_mut()
                            .zip(&col[row + to * n..row + (to + 1) * n])
                        {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn temporal_conv_forward<T: Real>(
    g: &TemporalGeom,
    x: &[T],
    w: &[T],
    bias: &[T],
) -> Vec<T> {
    let mut out = vec![T::zero(); g.batch * g.out_sample()];
    let mut col = vec![T::zero(); g.col_rows() * g.col_cols()];
    let plane = g.col_cols();
    for b in 0..g.batch {
        g.im2col(&x[b * g.in_sample()..(b + 1) * g.in_sample()], &mut col);
        let out_b = &mut out[b * g.out_sample()..(b + 1) * g.out_sample()];
        for (o, chunk) in out_b.chunks_mut(plane).enumerate() {
            chunk.fill(bias[o]);
        }
        gemm(
            false,
            false,
            g.c_out,
            g.col_rows(),
            plane,
            T::one(),
            w,
            &col,
            T::one(),
            out_b,
        );
    }
    out
}

pub(crate) struct TemporalGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub dbias: Option<Vec<T>>,
}

pub(crate) fn temporal_conv_backward<T: Real>(
    g: &TemporalGeom,
    x: &[T],
    w: &[T],
    dout: &[T],
    need: [bool; 3],
) -> TemporalGrads<T> {
    let [need_dx, need_dw, need_db] = need;
    let plane = g.col_cols();
    let mut dx = need_dx.then(|| vec![T::zero(); g.batch * g.in_sample()]);
    let mut dw = need_dw.then(|| vec![T::zero(); g.c_out * g.col_rows()]);
    let mut dbias = need_db.then(|| vec![T::zero(); g.c_out]);
    let mut col = vec![T::zero(); g.col_rows() * plane];
    for b in 0..g.batch {
        let dout_b = &dout[b * g.out_sample()..(b + 1) * g.out_sample()];
        if let Some(db) = dbias.as_mut() {
            for (o, chunk) in dout_b.chunks(plane).enumerate() {
                db[o] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            g.im2col(&x[b * g.in_sample()..(b + 1) * g.in_sample()], &mut col);
            gemm(
                false,
                true,
                g.c_out,
                plane,
                g.col_rows(),
                T::one(),
                dout_b,
                &col,
                T::one(),
                dw,
            );
        }
        if let Some(dx) = dx.as_mut() {
            gemm(
                true,
                false,
                g.col_rows(),
                g.c_out,
                plane,
                T::one(),
                w,
                dout_b,
                T::zero(),
                &mut col,
            );
            g.col2im_add(&col, &mut dx[b * g.in_sample()..(b + 1) * g.in_sample()]);
        }
    }
    TemporalGrads { dx, dw, dbias }
}

/// Geometry of the partitioned spatial graph convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GraphGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub frames: usize,
    pub joints: usize,
    pub labels: usize,
}

impl GraphGeom {
    fn in_sample(&self) -> usize {
        self.c_in * self.frames * self.joints
    }

    fn out_sample(&self) -> usize {
        self.c_out * self.frames * self.joints
    }

    /// `agg[(c,t), i] = Σ_j A[i,j]·x[(c,t), j]` for one sample and label.
    fn aggregate<T: Real>(&self, x_b: &[T], adj: &[T], agg: &mut [T]) {
        gemm(
            false,
            true,
            self.c_in * self.frames,
            self.joints,
            self.joints,
            T::one(),
            x_b,
            adj,
            T::zero(),
            agg,
        );
    }
}

/// `out[b] = Σ_s W_s · (x[b] ·_joints A_sᵀ)` with weights stored `[S, C_out, C_in]`.
pub(crate) fn graph_conv_forward<T: Real>(g: &GraphGeom, x: &[T], adj: &[T], w: &[T]) -> Vec<T> {
    let nn = g.joints * g.joints;
    let plane = g.frames * g.joints;
    let mut out = vec![T::zero(); g.batch * g.out_sample()];
    let mut agg = vec![T::zero(); g.in_sample()];
    for b in 0..g.batch {
        let x_b = &x[b * g.in_sample()..(b + 1) * g.in_sample()];
        let out_b = &mut out[b * g.out_sample()..(b + 1) * g.out_sample()];
        for s in 0..g.labels {
            g.aggregate(x_b, &adj[s * nn..(s + 1) * nn], &mut agg);
            gemm(
                false,
                false,
                g.c_out,
                g.c_in,
                plane,
                T::one(),
                &w[s * g.c_out * g.c_in..(s + 1) * g.c_out * g.c_in],
                &agg,
                T::one(),
                out_b,
            );
        }
    }
    out
}

pub(crate) fn graph_conv_backward<T: Real>(
    g: &GraphGeom,
    x: &[T],
    adj: &[T],
    w: &[T],
    dout: &[T],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let nn = g.joints * g.joints;
    let plane = g.frames * g.joints;
    let wsz = g.c_out * g.c_in;
    let mut dx = need_dx.then(|| vec![T::zero(); g.batch * g.in_sample()]);
    let mut dw = need_dw.then(|| vec![T::zero(); g.labels * wsz]);
    let mut buf = vec![T::zero(); g.in_sample()];
    for b in 0..g.batch {
        let x_b = &x[b * g.in_sample()..(b + 1) * g.in_sample()];
        let dout_b = &dout[b * g.out_sample()..(b + 1) * g.out_sample()];
        for s in 0..g.labels {
            let adj_s = &adj[s * nn..(s + 1) * nn];
            if let Some(dw) = dw.as_mut() {
                g.aggregate(x_b, adj_s, &mut buf);
                gemm(
                    false,
                    true,
                    g.c_out,
                    plane,
                    g.c_in,
                    T::one(),
                    dout_b,
                    &buf,
                    T::one(),
                    &mut dw[s * wsz..(s + 1) * wsz],
                );
            }
            if let Some(dx) = dx.as_mut() {
                // d(agg) = W_sᵀ·dout, then d(x)[(c,t), j] += Σ_i d(agg)[(c,t), i]·A[i,j]
                gemm(
                    true,
                    false,
                    g.c_in,
                    g.c_out,
                    plane,
                    T::one(),
                    &w[s * wsz..(s + 1) * wsz],
                    dout_b,
                    T::zero(),
                    &mut buf,
                );
                gemm(
                    false,
                    false,
                    g.c_in * g.frames,
                    g.joints,
                    g.joints,
                    T::one(),
                    &buf,
                    adj_s,
                    T::one(),
                    &mut dx[b * g.in_sample()..(b + 1) * g.in_sample()],
                );
            }
        }
    }
    (dx, dw)
}

/// Per-sample `out[b] = W · x[b]` over the channel axis (a 1×1 convolution).
pub(crate) fn channel_mix_forward<T: Real>(
    batch: usize,
    c_in: usize,
    c_out: usize,
    plane: usize,
    x: &[T],
    w: &[T],
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * c_out * plane];
    for b in 0..batch {
        gemm(
            false,
            false,
            c_out,
            c_in,
            plane,
            T::one(),
            w,
            &x[b * c_in * plane..(b + 1) * c_in * plane],
            T::zero(),
            &mut out[b * c_out * plane..(b + 1) * c_out * plane],
        );
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn channel_mix_backward<T: Real>(
    batch: usize,
    c_in: usize,
    c_out: usize,
    plane: usize,
    x: &[T],
    w: &[T],
    dout: &[T],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let mut dx = need_dx.then(|| vec![T::zero(); batch * c_in * plane]);
    let mut dw = need_dw.then(|| vec![T::zero(); c_out * c_in]);
    for b in 0..batch {
        let dout_b = &dout[b * c_out * plane..(b + 1) * c_out * plane];
        if let Some(dw) = dw.as_mut() {
            gemm(
                false,
                true,
                c_out,
                plane,
                c_in,
                T::one(),
                dout_b,
                &x[b * c_in * plane..(b + 1) * c_in * plane],
                T::one(),
                dw,
            );
        }
        if let Some(dx) = dx.as_mut() {
            gemm(
                true,
                false,
                c_in,
                c_out,
                plane,
                T::one(),
                w,
                dout_b,
                T::zero(),
                &mut dx[b * c_in * plane..(b + 1) * c_in * plane],
            );
        }
    }
    (dx, dw)
}

/// Batch-norm statistics layout: one group per (channel, joint), reduced over
/// (batch, time).
#[derive(Debug, Clone, Copy)]
pub(crate) struct NormGeom {
    pub batch: usize,
    pub channels: usize,
    pub frames: usize,
    pub joints: usize,
}

impl NormGeom {
    pub fn groups(&self) -> usize {
        self.channels * self.joints
    }

    pub fn count(&self) -> usize {
        self.batch * self.frames
    }

    /// Calls `f(group, flat_index)` for every element.
    #[inline]
    pub fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let n = self.joints;
        for b in 0..self.batch {
            for c in 0..self.channels {
                for t in 0..self.frames {
                    let base = ((b * self.channels + c) * self.frames + t) * n;
                    for j in 0..n {
                        f(c * n + j, base + j);
                    }
                }
            }
        }
    }
}
