use std::sync::Arc;

use super::kernels::{self, GraphGeom, NormGeom, TemporalGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::skeleton::PartitionedAdjacency;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics from a training-mode batch norm, per (channel, joint).
/// `var` is the unbiased estimate, as used for running averages.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Sum {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        geom: NormGeom,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mode: Mode,
    },
    TemporalConv {
        x: Var,
        w: Var,
        bias: Var,
        geom: TemporalGeom,
    },
    GraphConv {
        x: Var,
        w: Var,
        adj: Arc<Vec<T>>,
        geom: GraphGeom,
    },
    ChannelMix {
        x: Var,
        w: Var,
    },
    AvgPoolTime {
        x: Var,
        window: usize,
    },
    GlobalMaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    PairwiseDistances {
        e: Var,
    },
    TripletHinge {
        d: Var,
        triplets: Vec<(usize, usize, usize)>,
        active: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Records executed operations so [`Tape::backward`] can replay them in
/// exact reverse order.
///
/// A tape is single-writer; build one per forward pass.
#[derive(Debug, Default)]
pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, if backward reached this value.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient as a tensor; zeros when the value did not influence the loss.
    pub fn grad_tensor(&self, v: Var) -> Tensor<T> {
        let value = &self.nodes[v.0].value;
        let data = match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => vec![T::zero(); value.len()],
        };
        Tensor::new(value.shape().to_vec(), data).expect("gradient matches value shape")
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, shape: Vec<usize>, data: Vec<T>, inputs: &[Var], op: Op<T>) -> Var {
        let rg = self.any_grad(inputs);
        let value = Tensor::new(shape, data).expect("kernel output matches its shape");
        self.push(value, rg, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {m}×{k} by {k2}×{n}"
            )));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(
            false,
            false,
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            self.value(b).data(),
            T::zero(),
            &mut out,
        );
        Ok(self.record(vec![m, n], out, &[a, b], Op::MatMul { a, b }))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.record(shape, data, &[a, b], Op::Add { a, b }))
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.record(shape, data, &[a, b], Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let factor = T::from_f64(factor);
        let data = self.value(x).data().iter().map(|&v| v * factor).collect();
        let shape = self.value(x).shape().to_vec();
        self.record(shape, data, &[x], Op::Scale { x, factor })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.record(Vec::new(), vec![s], &[x], Op::Sum { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = self.value(x).shape().to_vec();
        self.record(shape, data, &[x], Op::Relu { x })
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let shape = t.shape().to_vec();
        Ok(self.record(shape, t.into_data(), &[x], Op::Reshape { x }))
    }

    /// Batch norm with statistics per (channel, joint) over batch and time.
    ///
    /// `gamma`, `beta`, `running_mean` and `running_var` are all C×N. In
    /// training mode the batch statistics are used and also returned so the
    /// caller can update its running averages.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (batch, channels, frames, joints) = self.value(x).dims4()?;
        let geom = NormGeom {
            batch,
            channels,
            frames,
            joints,
        };
        let groups = geom.groups();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [channels, joints] {
                return Err(Error::shape(format!(
                    "batch norm {name} has shape {:?}, expected [{channels}, {joints}]",
                    self.value(v).shape()
                )));
            }
        }
        if running_mean.len() != groups || running_var.len() != groups {
            return Err(Error::shape("batch norm running statistics are not C×N"));
        }
        if eps <= 0.0 {
            return Err(Error::invalid("batch norm epsilon must be positive"));
        }
        let eps = T::from_f64(eps);
        let xv = self.value(x).data();
        let count = T::from_f64(geom.count() as f64);

        let (mean, var, stats) = match mode {
            Mode::Train => {
                let mut mean = vec![T::zero(); groups];
                geom.for_each(|g, i| mean[g] += xv[i]);
                mean.iter_mut().for_each(|m| *m /= count);
                let mut var = vec![T::zero(); groups];
                geom.for_each(|g, i| {
                    let d = xv[i] - mean[g];
                    var[g] += d * d;
                });
                let unbiased_div = T::from_f64((geom.count().max(2) - 1) as f64);
                let unbiased = var.iter().map(|&v| v / unbiased_div).collect();
                var.iter_mut().for_each(|v| *v /= count);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            Mode::Eval => (running_mean.to_vec(), running_var.to_vec(), None),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        geom.for_each(|g, i| {
            let h = (xv[i] - mean[g]) * inv_std[g];
            xhat[i] = h;
            out[i] = gv[g] * h + bv[g];
        });
        let shape = self.value(x).shape().to_vec();
        let var = self.record(
            shape,
            out,
            &[x, gamma, beta],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                geom,
                xhat,
                inv_std,
                mode,
            },
        );
        Ok((var, stats))
    }

    /// Zero-padded cross-correlation along time, independently per joint.
    ///
    /// `x` is B×C_in×T×N, `w` is C_out×C_in×K with K odd, `bias` has C_out
    /// entries. The output has ⌈T/stride⌉ frames.
    pub fn temporal_conv(&mut self, x: Var, w: Var, bias: Var, stride: usize) -> Result<Var> {
        let (batch, c_in, t_in, joints) = self.value(x).dims4()?;
        let (c_out, c_in_w, kernel) = match self.value(w).shape()[..] {
            [o, i, k] => (o, i, k),
            _ => {
                return Err(Error::shape(format!(
                    "temporal kernel must be C_out×C_in×K, got {:?}",
                    self.value(w).shape()
                )))
            }
        };
        if c_in_w != c_in {
            return Err(Error::shape(format!(
                "temporal kernel expects {c_in_w} input channels, input has {c_in}"
            )));
        }
        if kernel % 2 == 0 {
            return Err(Error::invalid(format!(
                "temporal kernel size must be odd, got {kernel}"
            )));
        }
        if self.value(bias).shape() != [c_out] {
            return Err(Error::shape(format!(
                "temporal bias has shape {:?}, expected [{c_out}]",
                self.value(bias).shape()
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("temporal stride must be positive"));
        }
        let t_out = kernels::temporal_out_len(t_in, stride);
        let geom = TemporalGeom {
            batch,
            c_in,
            c_out,
            t_in,
            t_out,
            joints,
            kernel,
            stride,
        };
        let out = kernels::temporal_conv_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(bias).data(),
        );
        Ok(self.record(
            vec![batch, c_out, t_out, joints],
            out,
            &[x, w, bias],
            Op::TemporalConv { x, w, bias, geom },
        ))
    }

    /// Partitioned spatial graph convolution: per frame,
    /// `F_out = Σ_s A_s · F_in · W_sᵀ`.
    ///
    /// `adj` must be normalized; `w` is S×C_out×C_in.
    pub fn graph_conv(&mut self, x: Var, adj: &PartitionedAdjacency, w: Var) -> Result<Var> {
        let (batch, c_in, frames, joints) = self.value(x).dims4()?;
        if !adj.is_normalized() {
            return Err(Error::invalid("graph convolution needs a normalized partition"));
        }
        if adj.num_joints() != joints {
            return Err(Error::shape(format!(
                "partition covers {} joints, input has {joints}",
                adj.num_joints()
            )));
        }
        let (labels, c_out, c_in_w) = match self.value(w).shape()[..] {
            [s, o, i] => (s, o, i),
            _ => {
                return Err(Error::shape(format!(
                    "graph weights must be S×C_out×C_in, got {:?}",
                    self.value(w).shape()
                )))
            }
        };
        if labels != adj.num_labels() {
            return Err(Error::shape(format!(
                "{} partition has {} labels but {labels} weight matrices were given",
                adj.strategy(),
                adj.num_labels()
            )));
        }
        if c_in_w != c_in {
            return Err(Error::shape(format!(
                "graph weights expect {c_in_w} input channels, input has {c_in}"
            )));
        }
        let adj: Arc<Vec<T>> = Arc::new(
            adj.matrices()
                .iter()
                .flatten()
                .map(|&v| T::from_f64(v))
                .collect(),
        );
        let geom = GraphGeom {
            batch,
            c_in,
            c_out,
            frames,
            joints,
            labels,
        };
        let out =
            kernels::graph_conv_forward(&geom, self.value(x).data(), &adj, self.value(w).data());
        Ok(self.record(
            vec![batch, c_out, frames, joints],
            out,
            &[x, w],
            Op::GraphConv { x, w, adj, geom },
        ))
    }

    /// 1×1 convolution: mixes channels with a C_out×C_in matrix.
    pub fn channel_mix(&mut self, x: Var, w: Var) -> Result<Var> {
        let (batch, c_in, frames, joints) = self.value(x).dims4()?;
        let (c_out, c_in_w) = self.value(w).dims2()?;
        if c_in_w != c_in {
            return Err(Error::shape(format!(
                "channel projection expects {c_in_w} input channels, input has {c_in}"
            )));
        }
        let out = kernels::channel_mix_forward(
            batch,
            c_in,
            c_out,
            frames * joints,
            self.value(x).data(),
            self.value(w).data(),
        );
        Ok(self.record(
            vec![batch, c_out, frames, joints],
            out,
            &[x, w],
            Op::ChannelMix { x, w },
        ))
    }

    /// Non-overlapping temporal average pooling; a trailing partial window
    /// averages only the frames it covers. Output has ⌈T/window⌉ frames.
    pub fn avg_pool_time(&mut self, x: Var, window: usize) -> Result<Var> {
        let (batch, channels, frames, joints) = self.value(x).dims4()?;
        if window == 0 {
            return Err(Error::invalid("pooling window must be positive"));
        }
        let t_out = frames.div_ceil(window);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); batch * channels * t_out * joints];
        for bc in 0..batch * channels {
            for to in 0..t_out {
                let start = to * window;
                let end = (start + window).min(frames);
                let inv = T::from_f64(1.0 / (end - start) as f64);
                let dst = (bc * t_out + to) * joints;
                for t in start..end {
                    let src = (bc * frames + t) * joints;
                    for j in 0..joints {
                        out[dst + j] += xv[src + j] * inv;
                    }
                }
            }
        }
        Ok(self.record(
            vec![batch, channels, t_out, joints],
            out,
            &[x],
            Op::AvgPoolTime { x, window },
        ))
    }

    /// Maximum over time and joints per (batch, channel): B×C×T×N → B×C.
    /// The gradient goes to the first maximal element in row-major order.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let (batch, channels, frames, joints) = self.value(x).dims4()?;
        let plane = frames * joints;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(batch * channels);
        let mut argmax = Vec::with_capacity(batch * channels);
        for (bc, chunk) in xv.chunks(plane).enumerate() {
            let mut best = 0;
            for (i, &v) in chunk.iter().enumerate() {
                if v > chunk[best] {
                    best = i;
                }
            }
            out.push(chunk[best]);
            argmax.push(bc * plane + best);
        }
        Ok(self.record(
            vec![batch, channels],
            out,
            &[x],
            Op::GlobalMaxPool { x, argmax },
        ))
    }

    /// Euclidean distances between all rows of a B×D matrix.
    pub fn pairwise_distances(&mut self, e: Var) -> Result<Var> {
        let (rows, dim) = self.value(e).dims2()?;
        let ev = self.value(e).data();
        let mut out = vec![T::zero(); rows * rows];
        for i in 0..rows {
            for j in (i + 1)..rows {
                let d = ev[i * dim..(i + 1) * dim]
                    .iter()
                    .zip(&ev[j * dim..(j + 1) * dim])
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>()
                    .sqrt();
                out[i * rows + j] = d;
                out[j * rows + i] = d;
            }
        }
        Ok(self.record(vec![rows, rows], out, &[e], Op::PairwiseDistances { e }))
    }

    /// Mean over triplets of `max(D[a,p] − D[a,n] + margin, 0)`.
    pub fn triplet_hinge(
        &mut self,
        d: Var,
        triplets: &[(usize, usize, usize)],
        margin: f64,
    ) -> Result<Var> {
        let (rows, cols) = self.value(d).dims2()?;
        if rows != cols {
            return Err(Error::shape("distance matrix must be square"));
        }
        if triplets.is_empty() {
            return Err(Error::invalid("no triplets"));
        }
        if triplets
            .iter()
            .any(|&(a, p, n)| a >= rows || p >= rows || n >= rows)
        {
            return Err(Error::invalid("triplet index out of range"));
        }
        let dv = self.value(d).data();
        let margin = T::from_f64(margin);
        let mut total = T::zero();
        let mut active = Vec::with_capacity(triplets.len());
        for &(a, p, n) in triplets {
            let v = dv[a * rows + p] - dv[a * rows + n] + margin;
            active.push(v > T::zero());
            if v > T::zero() {
                total += v;
            }
        }
        let loss = total / T::from_f64(triplets.len() as f64);
        Ok(self.record(
            Vec::new(),
            vec![loss],
            &[d],
            Op::TripletHinge {
                d,
                triplets: triplets.to_vec(),
                active,
            },
        ))
    }

    /// Reverse-mode accumulation from a finite scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let value = self.value(loss);
        if value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                value.shape()
            )));
        }
        let l = value.data()[0];
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: 0,
                value: l.to_f64(),
            });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contributions = self.node_backward(idx, &grad);
            self.nodes[idx].grad = Some(grad);
            for (var, g) in contributions {
                let node = &mut self.nodes[var.0];
                match node.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, idx: usize, dy: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[idx];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.nodes[a.0].value.dims2().expect("checked in forward");
                let n = node.value.shape()[1];
                if needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::gemm(false, true, m, n, k, T::one(), dy, val(*b), T::zero(), &mut da);
                    out.push((*a, da));
                }
                if needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    kernels::gemm(true, false, k, m, n, T::one(), val(*a), dy, T::zero(), &mut db);
                    out.push((*b, db));
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if needs(v) {
                        out.push((v, dy.to_vec()));
                    }
                }
            }
            Op::Mul { a, b } => {
                if needs(*a) {
                    out.push((*a, zip_map(dy, val(*b), |g, y| g * y)));
                }
                if needs(*b) {
                    out.push((*b, zip_map(dy, val(*a), |g, x| g * x)));
                }
            }
            Op::Scale { x, factor } => {
                out.push((*x, dy.iter().map(|&g| g * *factor).collect()));
            }
            Op::Sum { x } => {
                out.push((*x, vec![dy[0]; self.nodes[x.0].value.len()]));
            }
            Op::Relu { x } => {
                out.push((
                    *x,
                    zip_map(dy, val(*x), |g, v| if v > T::zero() { g } else { T::zero() }),
                ));
            }
            Op::Reshape { x } => out.push((*x, dy.to_vec())),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                geom,
                xhat,
                inv_std,
                mode,
            } => {
                let groups = geom.groups();
                let gv = val(*gamma);
                let mut sum_dy = vec![T::zero(); groups];
                let mut sum_dy_xhat = vec![T::zero(); groups];
                geom.for_each(|g, i| {
                    sum_dy[g] += dy[i];
                    sum_dy_xhat[g] += dy[i] * xhat[i];
                });
                if needs(*x) {
                    let mut dx = vec![T::zero(); dy.len()];
                    match mode {
                        Mode::Train => {
                            let m = T::from_f64(geom.count() as f64);
                            geom.for_each(|g, i| {
                                // dxhat = dy·γ; sums scale by γ as well
                                let k = gv[g] * inv_std[g] / m;
                                dx[i] = k * (m * dy[i] - sum_dy[g] - xhat[i] * sum_dy_xhat[g]);
                            });
                        }
                        Mode::Eval => {
                            geom.for_each(|g, i| dx[i] = dy[i] * gv[g] * inv_std[g]);
                        }
                    }
                    out.push((*x, dx));
                }
                if needs(*gamma) {
                    out.push((*gamma, sum_dy_xhat));
                }
                if needs(*beta) {
                    out.push((*beta, sum_dy));
                }
            }
            Op::TemporalConv { x, w, bias, geom } => {
                let grads = kernels::temporal_conv_backward(
                    geom,
                    val(*x),
                    val(*w),
                    dy,
                    [needs(*x), needs(*w), needs(*bias)],
                );
                out.extend(grads.dx.map(|g| (*x, g)));
                out.extend(grads.dw.map(|g| (*w, g)));
                out.extend(grads.dbias.map(|g| (*bias, g)));
            }
            Op::GraphConv { x, w, adj, geom } => {
                let (dx, dw) = kernels::graph_conv_backward(
                    geom,
                    val(*x),
                    adj,
                    val(*w),
                    dy,
                    needs(*x),
                    needs(*w),
                );
                out.extend(dx.map(|g| (*x, g)));
                out.extend(dw.map(|g| (*w, g)));
            }
            Op::ChannelMix { x, w } => {
                let (batch, c_in, frames, joints) =
                    self.nodes[x.0].value.dims4().expect("checked in forward");
                let c_out = node.value.shape()[1];
                let (dx, dw) = kernels::channel_mix_backward(
                    batch,
                    c_in,
                    c_out,
                    frames * joints,
                    val(*x),
                    val(*w),
                    dy,
                    needs(*x),
                    needs(*w),
                );
                out.extend(dx.map(|g| (*x, g)));
                out.extend(dw.map(|g| (*w, g)));
            }
            Op::AvgPoolTime { x, window } => {
                let (batch, channels, frames, joints) =
                    self.nodes[x.0].value.dims4().expect("checked in forward");
                let t_out = node.value.shape()[2];
                let mut dx = vec![T::zero(); batch * channels * frames * joints];
                for bc in 0..batch * channels {
                    for to in 0..t_out {
                        let start = to * window;
                        let end = (start + window).min(frames);
                        let inv = T::from_f64(1.0 / (end - start) as f64);
                        let src = (bc * t_out + to) * joints;
                        for t in start..end {
                            let dst = (bc * frames + t) * joints;
                            for j in 0..joints {
                                dx[dst + j] += dy[src + j] * inv;
                            }
                        }
                    }
                }
                out.push((*x, dx));
            }
            Op::GlobalMaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); self.nodes[x.0].value.len()];
                for (&pos, &g) in argmax.iter().zip(dy) {
                    dx[pos] += g;
                }
                out.push((*x, dx));
            }
            Op::PairwiseDistances { e } => {
                let (rows, dim) = self.nodes[e.0].value.dims2().expect("checked in forward");
                let ev = val(*e);
                let dv = node.value.data();
                let mut de = vec![T::zero(); rows * dim];
                for i in 0..rows {
                    for j in 0..rows {
                        let d = dv[i * rows + j];
                        if i == j || d <= T::zero() {
                            continue;
                        }
                        // D[i,j] and D[j,i] are the same function of (e_i, e_j)
                        let coef = (dy[i * rows + j] + dy[j * rows + i]) / d;
                        if j > i {
                            for k in 0..dim {
                                let diff = ev[i * dim + k] - ev[j * dim + k];
                                de[i * dim + k] += coef * diff;
                                de[j * dim + k] -= coef * diff;
                            }
                        }
                    }
                }
                out.push((*e, de));
            }
            Op::TripletHinge {
                d,
                triplets,
                active,
            } => {
                let rows = self.nodes[d.0].value.shape()[0];
                let mut dd = vec![T::zero(); rows * rows];
                let share = dy[0] / T::from_f64(triplets.len() as f64);
                for (&(a, p, n), &on) in triplets.iter().zip(active) {
                    if on {
                        dd[a * rows + p] += share;
                        dd[a * rows + n] -= share;
                    }
                }
                out.push((*d, dd));
            }
        }
        out.retain(|(v, _)| needs(*v));
        out
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
