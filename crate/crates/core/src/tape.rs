//! Reverse-mode automatic differentiation on a tape of tensor operations.
//!
//! A [`Tape`] records every operation of a forward computation; calling
//! [`Tape::backward`] on a scalar result populates exact gradients for every
//! reachable node that requires them. Nodes are identified by [`Var`] handles
//! and can only reference earlier nodes, so the graph is acyclic by
//! construction and a single reverse sweep is a valid topological order.
//!
//! A tape is built, differentiated and read on one thread, then dropped; the
//! parameter values themselves live outside the tape in a
//! [`crate::tensor::ParamStore`].

use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Forward multiply/add counters, incremented once per recorded operation
/// using the closed-form cost of that operation. Divisions count as
/// multiplies; transcendental calls and comparisons are not counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub mults: u64,
    pub adds: u64,
}

impl OpCounts {
    pub fn add(&mut self, (m, a): (u64, u64)) {
        self.mults += m;
        self.adds += a;
    }
}

/// Closed-form forward cost of each tape operation, shared by the runtime
/// counters and the symbolic complexity estimator so the two can only agree
/// or disagree about the sequence of operations, never about per-op cost.
pub mod op_cost {
    /// `lead` batched products of an (m x k) by (k x n) matrix.
    pub fn matmul(lead: u64, m: u64, k: u64, n: u64) -> (u64, u64) {
        (lead * m * k * n, lead * m * k * n)
    }
    pub fn add(numel: u64) -> (u64, u64) {
        (0, numel)
    }
    pub fn add_bias(numel: u64) -> (u64, u64) {
        (0, numel)
    }
    pub fn mul(numel: u64) -> (u64, u64) {
        (numel, 0)
    }
    pub fn scale(numel: u64) -> (u64, u64) {
        (numel, 0)
    }
    /// Per row: subtract max (w adds), normalizing sum (w adds), divide (w mults).
    pub fn softmax(rows: u64, w: u64) -> (u64, u64) {
        (rows * w, 2 * rows * w)
    }
    /// Per row: mean, variance, normalize, affine.
    pub fn layer_norm(rows: u64, d: u64) -> (u64, u64) {
        (rows * (3 * d + 3), rows * 4 * d)
    }
    pub fn relu(_numel: u64) -> (u64, u64) {
        (0, 0)
    }
    pub fn embedding(_numel: u64) -> (u64, u64) {
        (0, 0)
    }
    pub fn masked_sum(numel: u64) -> (u64, u64) {
        (0, numel)
    }
    pub fn max_last(_numel: u64) -> (u64, u64) {
        (0, 0)
    }
    pub fn masked_mean_rows(numel: u64, out_numel: u64) -> (u64, u64) {
        (numel + out_numel, numel)
    }
    pub fn power_normalize(numel: u64) -> (u64, u64) {
        (2 * numel + 2, numel)
    }
    pub fn complex_group_scale(numel: u64) -> (u64, u64) {
        (2 * numel, numel)
    }
    pub fn cross_entropy(rows: u64, w: u64) -> (u64, u64) {
        (rows * w + rows, 2 * rows * w + rows)
    }
}

enum Op {
    Leaf,
    Constant,
    Add {
        a: usize,
        b: usize,
    },
    /// `a [..., f] + b [f]` broadcast over leading dims.
    AddBias {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        factor: f64,
    },
    /// `a [lead.., m, k]` times `b` which is either 2-D (shared across lead)
    /// or carries identical leading dims. With `transpose_b`, `b` holds the
    /// transposed layout `[.., n, k]`.
    MatMul {
        a: usize,
        b: usize,
        transpose_b: bool,
        lead: usize,
        m: usize,
        k: usize,
        n: usize,
        b_batched: bool,
    },
    Permute {
        a: usize,
        perm: Vec<usize>,
    },
    Reshape {
        a: usize,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    /// Softmax over the last dim; disallowed positions hold exactly zero in
    /// the output, which is all the backward pass needs.
    MaskedSoftmax {
        a: usize,
    },
    LayerNorm {
        a: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu {
        a: usize,
    },
    Log {
        a: usize,
    },
    Exp {
        a: usize,
    },
    MaskedSum {
        a: usize,
        mask: Vec<bool>,
    },
    /// Max over the last dim; ties send the gradient to the lowest index.
    MaxLast {
        a: usize,
    },
    /// `a [rows, seq, d]` with `mask [rows * seq]` -> `[rows, d]` mean of
    /// unmasked positions per row.
    MaskedMeanRows {
        a: usize,
        mask: Vec<bool>,
        counts: Vec<f64>,
    },
    /// Scales the whole tensor (interpreted as interleaved re/im pairs) to
    /// unit average complex-symbol power. An all-zero tensor passes through.
    PowerNormalize {
        a: usize,
        scale: f64,
        sum_sq: f64,
    },
    /// Multiplies each consecutive group of `group_complex` complex values by
    /// the constant complex coefficient of its group.
    ComplexGroupScale {
        a: usize,
        coeffs: Vec<(f64, f64)>,
        group_complex: usize,
    },
    /// Mean over unmasked rows of the negative log-likelihood of the target
    /// column, with a numerically stable internal softmax.
    CrossEntropyMean {
        logits: usize,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
        count: f64,
    },
}

struct Node {
    data: Vec<f64>,
    dims: Vec<usize>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    counts: OpCounts,
}

// Raw kernels. `out` is accumulated into, so callers zero it first when
// overwrite semantics are wanted.
fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                out_row[j] += av * b_row[j];
            }
        }
    }
}

/// `out[i, j] += sum_p a[i, p] * b[j, p]` where b is stored `[n, k]`.
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for p in 0..k {
                acc += a_row[p] * b_row[p];
            }
            out_row[j] += acc;
        }
    }
}

/// `out[p, j] += sum_i a[i, p] * b[i, j]` (a-transposed times b).
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                out_row[j] += av * b_row[j];
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn counts(&self) -> OpCounts {
        self.counts
    }

    pub fn reset_counts(&mut self) {
        self.counts = OpCounts::default();
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].dims
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, data: Vec<f64>, dims: Vec<usize>, needs_grad: bool, op: Op) -> Var {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            data,
            dims,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    /// Trainable leaf initialized from a stored tensor.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(
            tensor.data().to_vec(),
            tensor.dims().to_vec(),
            tensor.requires_grad(),
            Op::Leaf,
        )
    }

    pub fn leaf_from(&mut self, dims: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Var {
        let op = if requires_grad { Op::Leaf } else { Op::Constant };
        self.push(data, dims, requires_grad, op)
    }

    pub fn constant(&mut self, dims: Vec<usize>, data: Vec<f64>) -> Var {
        self.push(data, dims, false, Op::Constant)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "add shape mismatch");
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        self.counts.add(op_cost::add(data.len() as u64));
        let dims = self.dims(a).to_vec();
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(data, dims, needs, Op::Add { a: a.0, b: b.0 })
    }

    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let f = *self.dims(a).last().expect("add_bias needs >= 1-D input");
        assert_eq!(self.dims(b), &[f], "bias must be 1-D of the last dim");
        let bd = self.nodes[b.0].data.clone();
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x + bd[i % f])
            .collect();
        self.counts.add(op_cost::add_bias(data.len() as u64));
        let dims = self.dims(a).to_vec();
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(data, dims, needs, Op::AddBias { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "mul shape mismatch");
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        self.counts.add(op_cost::mul(data.len() as u64));
        let dims = self.dims(a).to_vec();
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(data, dims, needs, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x * factor).collect();
        self.counts.add(op_cost::scale(data.len() as u64));
        let dims = self.dims(a).to_vec();
        let needs = self.needs(a.0);
        self.push(data, dims, needs, Op::Scale { a: a.0, factor })
    }

    /// Batched matrix product; see [`Op::MatMul`] for the accepted layouts.
    pub fn matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Var {
        let a_dims = self.dims(a).to_vec();
        let b_dims = self.dims(b).to_vec();
        assert!(a_dims.len() >= 2, "matmul lhs must be at least 2-D");
        let (m, k) = (a_dims[a_dims.len() - 2], a_dims[a_dims.len() - 1]);
        let lead: usize = a_dims[..a_dims.len() - 2].iter().product();
        let b_batched = b_dims.len() > 2;
        if b_batched {
            assert_eq!(
                &a_dims[..a_dims.len() - 2],
                &b_dims[..b_dims.len() - 2],
                "matmul batch dims mismatch"
            );
        }
        let (bk, bn) = if transpose_b {
            (b_dims[b_dims.len() - 1], b_dims[b_dims.len() - 2])
        } else {
            (b_dims[b_dims.len() - 2], b_dims[b_dims.len() - 1])
        };
        assert_eq!(k, bk, "matmul inner dim mismatch");
        let n = bn;

        let mut out = vec![0.0; lead * m * n];
        {
            let ad = &self.nodes[a.0].data;
            let bd = &self.nodes[b.0].data;
            for l in 0..lead {
                let a_sl = &ad[l * m * k..(l + 1) * m * k];
                let b_sl = if b_batched {
                    &bd[l * k * n..(l + 1) * k * n]
                } else {
                    &bd[..]
                };
                let o_sl = &mut out[l * m * n..(l + 1) * m * n];
                if transpose_b {
                    mm_nt(a_sl, b_sl, m, k, n, o_sl);
                } else {
                    mm_nn(a_sl, b_sl, m, k, n, o_sl);
                }
            }
        }
        self.counts
            .add(op_cost::matmul(lead as u64, m as u64, k as u64, n as u64));
        let mut dims = a_dims[..a_dims.len() - 2].to_vec();
        dims.push(m);
        dims.push(n);
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(
            out,
            dims,
            needs,
            Op::MatMul {
                a: a.0,
                b: b.0,
                transpose_b,
                lead,
                m,
                k,
                n,
                b_batched,
            },
        )
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let in_dims = self.dims(a).to_vec();
        assert_eq!(perm.len(), in_dims.len(), "permute rank mismatch");
        let out_dims: Vec<usize> = perm.iter().map(|&p| in_dims[p]).collect();
        let data = permute_data(&self.nodes[a.0].data, &in_dims, perm);
        let needs = self.needs(a.0);
        self.push(
            data,
            out_dims,
            needs,
            Op::Permute {
                a: a.0,
                perm: perm.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, a: Var, dims: Vec<usize>) -> Var {
        assert_eq!(
            dims.iter().product::<usize>(),
            self.nodes[a.0].data.len(),
            "reshape numel mismatch"
        );
        let data = self.nodes[a.0].data.clone();
        let needs = self.needs(a.0);
        self.push(data, dims, needs, Op::Reshape { a: a.0 })
    }

    /// Gathers rows of `table` ([vocab, d]) at `ids`; output is [ids.len(), d].
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let t_dims = self.dims(table).to_vec();
        assert_eq!(t_dims.len(), 2, "embedding table must be 2-D");
        let (vocab, d) = (t_dims[0], t_dims[1]);
        let td = &self.nodes[table.0].data;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < vocab, "token id {id} outside table of {vocab}");
            out.extend_from_slice(&td[id * d..(id + 1) * d]);
        }
        self.counts.add(op_cost::embedding(out.len() as u64));
        let needs = self.needs(table.0);
        self.push(
            out,
            vec![ids.len(), d],
            needs,
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn softmax_last(&mut self, a: Var) -> Var {
        self.masked_softmax_last(a, None)
    }

    pub fn masked_softmax_last(&mut self, a: Var, allowed: Option<&[bool]>) -> Var {
        let dims = self.dims(a).to_vec();
        let w = *dims.last().expect("softmax needs >= 1-D input");
        let numel = self.nodes[a.0].data.len();
        if let Some(m) = allowed {
            assert_eq!(m.len(), numel, "softmax mask length mismatch");
        }
        let rows = numel / w;
        let mut out = vec![0.0; numel];
        {
            let x = &self.nodes[a.0].data;
            for r in 0..rows {
                let base = r * w;
                let mut max = f64::NEG_INFINITY;
                for j in 0..w {
                    if allowed.is_none_or(|m| m[base + j]) {
                        max = max.max(x[base + j]);
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue; // fully-masked row stays zero
                }
                let mut sum = 0.0;
                for j in 0..w {
                    if allowed.is_none_or(|m| m[base + j]) {
                        let e = (x[base + j] - max).exp();
                        out[base + j] = e;
                        sum += e;
                    }
                }
                for j in 0..w {
                    out[base + j] /= sum;
                }
            }
        }
        self.counts.add(op_cost::softmax(rows as u64, w as u64));
        let needs = self.needs(a.0);
        self.push(out, dims, needs, Op::MaskedSoftmax { a: a.0 })
    }

    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let dims = self.dims(a).to_vec();
        let d = *dims.last().expect("layer_norm needs >= 1-D input");
        assert_eq!(self.dims(gamma), &[d], "layer_norm gamma shape");
        assert_eq!(self.dims(beta), &[d], "layer_norm beta shape");
        let rows = self.nodes[a.0].data.len() / d;
        let mut out = vec![0.0; rows * d];
        let mut means = vec![0.0; rows];
        let mut inv_stds = vec![0.0; rows];
        {
            let x = &self.nodes[a.0].data;
            let g = &self.nodes[gamma.0].data;
            let b = &self.nodes[beta.0].data;
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                means[r] = mean;
                inv_stds[r] = inv;
                let o = &mut out[r * d..(r + 1) * d];
                for j in 0..d {
                    o[j] = (row[j] - mean) * inv * g[j] + b[j];
                }
            }
        }
        self.counts.add(op_cost::layer_norm(rows as u64, d as u64));
        let needs = self.needs(a.0) || self.needs(gamma.0) || self.needs(beta.0);
        self.push(
            out,
            dims,
            needs,
            Op::LayerNorm {
                a: a.0,
                gamma: gamma.0,
                beta: beta.0,
                mean: means,
                inv_std: inv_stds,
            },
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x.max(0.0)).collect();
        self.counts.add(op_cost::relu(data.len() as u64));
        let dims = self.dims(a).to_vec();
        let needs = self.needs(a.0);
        self.push(data, dims, needs, Op::Relu { a: a.0 })
    }

    pub fn log(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x.ln()).collect();
        let dims = self.dims(a).to_vec();
        let needs = self.needs(a.0);
        self.push(data, dims, needs, Op::Log { a: a.0 })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x.exp()).collect();
        let dims = self.dims(a).to_vec();
        let needs = self.needs(a.0);
        self.push(data, dims, needs, Op::Exp { a: a.0 })
    }

    /// Scalar sum of the entries where `mask` is true.
    pub fn masked_sum(&mut self, a: Var, mask: &[bool]) -> Var {
        assert_eq!(mask.len(), self.nodes[a.0].data.len(), "mask length");
        let sum: f64 = self.nodes[a.0]
            .data
            .iter()
            .zip(mask)
            .map(|(x, &m)| if m { *x } else { 0.0 })
            .sum();
        self.counts.add(op_cost::masked_sum(mask.len() as u64));
        let needs = self.needs(a.0);
        self.push(
            vec![sum],
            vec![1],
            needs,
            Op::MaskedSum {
                a: a.0,
                mask: mask.to_vec(),
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mask = vec![true; self.nodes[a.0].data.len()];
        self.masked_sum(a, &mask)
    }

    /// Max over the last dim, dropping it ([1] for a 1-D input).
    pub fn max_last(&mut self, a: Var) -> Var {
        let dims = self.dims(a).to_vec();
        let w = *dims.last().expect("max_last needs >= 1-D input");
        let rows = self.nodes[a.0].data.len() / w;
        let mut out = vec![0.0; rows];
        {
            let x = &self.nodes[a.0].data;
            for r in 0..rows {
                out[r] = x[r * w..(r + 1) * w]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        }
        self.counts.add(op_cost::max_last(rows as u64 * w as u64));
        let out_dims = if dims.len() == 1 {
            vec![1]
        } else {
            dims[..dims.len() - 1].to_vec()
        };
        let needs = self.needs(a.0);
        self.push(out, out_dims, needs, Op::MaxLast { a: a.0 })
    }

    /// Mean over unmasked sequence positions: `a [rows, seq, d]`,
    /// `mask [rows * seq]` -> `[rows, d]`. Every row must keep at least one
    /// position.
    pub fn masked_mean_rows(&mut self, a: Var, mask: &[bool]) -> Var {
        let dims = self.dims(a).to_vec();
        assert_eq!(dims.len(), 3, "masked_mean_rows expects [rows, seq, d]");
        let (rows, seq, d) = (dims[0], dims[1], dims[2]);
        assert_eq!(mask.len(), rows * seq, "mask length");
        let mut out = vec![0.0; rows * d];
        let mut counts = vec![0.0; rows];
        {
            let x = &self.nodes[a.0].data;
            for r in 0..rows {
                for s in 0..seq {
                    let keep = mask[r * seq + s];
                    let m = if keep { 1.0 } else { 0.0 };
                    counts[r] += m;
                    let src = &x[(r * seq + s) * d..(r * seq + s + 1) * d];
                    let dst = &mut out[r * d..(r + 1) * d];
                    for j in 0..d {
                        dst[j] += m * src[j];
                    }
                }
                assert!(counts[r] > 0.0, "masked_mean_rows: fully masked row {r}");
                let inv = 1.0 / counts[r];
                for v in &mut out[r * d..(r + 1) * d] {
                    *v *= inv;
                }
            }
        }
        self.counts.add(op_cost::masked_mean_rows(
            (rows * seq * d) as u64,
            (rows * d) as u64,
        ));
        let needs = self.needs(a.0);
        self.push(
            out,
            vec![rows, d],
            needs,
            Op::MaskedMeanRows {
                a: a.0,
                mask: mask.to_vec(),
                counts,
            },
        )
    }

    /// Rescales interleaved (re, im) data to unit mean complex power.
    pub fn power_normalize(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].data.len();
        self.power_normalize_active(a, n / 2)
    }

    /// Power normalization where only `active_complex` of the symbols carry
    /// signal (the rest are structural zeros that should not dilute the mean).
    pub fn power_normalize_active(&mut self, a: Var, active_complex: usize) -> Var {
        let x = &self.nodes[a.0].data;
        assert!(x.len() >= 2 && x.len().is_multiple_of(2), "expected re/im pairs");
        assert!(active_complex * 2 <= x.len() && active_complex > 0);
        let n_complex = active_complex as f64;
        let sum_sq: f64 = x.iter().map(|v| v * v).sum();
        let scale = if sum_sq == 0.0 {
            1.0
        } else {
            (n_complex / sum_sq).sqrt()
        };
        let data: Vec<f64> = x.iter().map(|v| v * scale).collect();
        self.counts.add(op_cost::power_normalize(data.len() as u64));
        let dims = self.dims(a).to_vec();
        let needs = self.needs(a.0);
        self.push(
            data,
            dims,
            needs,
            Op::PowerNormalize {
                a: a.0,
                scale,
                sum_sq,
            },
        )
    }

    /// Multiplies each group of `group_complex` complex values by its
    /// constant coefficient; `coeffs.len() * group_complex * 2` must equal the
    /// tensor length.
    pub fn complex_group_scale(
        &mut self,
        a: Var,
        coeffs: &[(f64, f64)],
        group_complex: usize,
    ) -> Var {
        let x = &self.nodes[a.0].data;
        assert_eq!(
            coeffs.len() * group_complex * 2,
            x.len(),
            "coefficient grouping does not cover the tensor"
        );
        let mut data = vec![0.0; x.len()];
        for (g, &(cr, ci)) in coeffs.iter().enumerate() {
            let base = g * group_complex * 2;
            for t in 0..group_complex {
                let re = x[base + 2 * t];
                let im = x[base + 2 * t + 1];
                data[base + 2 * t] = cr * re - ci * im;
                data[base + 2 * t + 1] = cr * im + ci * re;
            }
        }
        self.counts
            .add(op_cost::complex_group_scale(data.len() as u64));
        let dims = self.dims(a).to_vec();
        let needs = self.needs(a.0);
        self.push(
            data,
            dims,
            needs,
            Op::ComplexGroupScale {
                a: a.0,
                coeffs: coeffs.to_vec(),
                group_complex,
            },
        )
    }

    /// Mean negative log-likelihood of `targets` over unmasked rows of
    /// `logits [rows, w]`, with softmax applied internally.
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Var {
        let dims = self.dims(logits).to_vec();
        assert_eq!(dims.len(), 2, "cross_entropy expects [rows, classes]");
        let (rows, w) = (dims[0], dims[1]);
        assert_eq!(targets.len(), rows, "target length");
        assert_eq!(mask.len(), rows, "mask length");
        let count = mask.iter().filter(|&&m| m).count() as f64;
        assert!(count > 0.0, "cross_entropy: empty mask");

        let mut probs = vec![0.0; rows * w];
        let mut loss = 0.0;
        {
            let x = &self.nodes[logits.0].data;
            for r in 0..rows {
                let row = &x[r * w..(r + 1) * w];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..w {
                    let e = (row[j] - max).exp();
                    probs[r * w + j] = e;
                    sum += e;
                }
                for j in 0..w {
                    probs[r * w + j] /= sum;
                }
                if mask[r] {
                    assert!(targets[r] < w, "target class out of range");
                    loss += sum.ln() + max - row[targets[r]];
                }
            }
        }
        loss /= count;
        self.counts
            .add(op_cost::cross_entropy(rows as u64, w as u64));
        let needs = self.needs(logits.0);
        self.push(
            vec![loss],
            vec![1],
            needs,
            Op::CrossEntropyMean {
                logits: logits.0,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
        )
    }

    fn grad_buf(&mut self, id: usize) -> &mut Vec<f64> {
        if self.nodes[id].grad.is_none() {
            let n = self.nodes[id].data.len();
            self.nodes[id].grad = Some(vec![0.0; n]);
        }
        self.nodes[id].grad.as_mut().unwrap()
    }

    /// Populates gradients of `loss` with respect to every reachable node
    /// that needs one. `loss` must be scalar.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(
            self.nodes[loss.0].data.len(),
            1,
            "backward requires a scalar loss"
        );
        self.grad_buf(loss.0)[0] += 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &g);
            self.nodes[i].grad = Some(g);
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Inputs always have smaller indices than i, so splitting at i gives
        // simultaneous read access to node i and write access to its inputs.
        let (before, after) = self.nodes.split_at_mut(i);
        let node = &after[0];
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add { a, b } => {
                for (id, _) in [(*a, 0), (*b, 1)] {
                    if before[id].needs_grad {
                        accumulate(grad_of(&mut before[id]), g);
                    }
                }
            }
            Op::AddBias { a, b } => {
                if before[*a].needs_grad {
                    accumulate(grad_of(&mut before[*a]), g);
                }
                if before[*b].needs_grad {
                    let f = before[*b].data.len();
                    let gb = grad_of(&mut before[*b]);
                    for (i, &gv) in g.iter().enumerate() {
                        gb[i % f] += gv;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if before[a].needs_grad {
                    let other: Vec<f64> = before[b].data.clone();
                    let ga = grad_of(&mut before[a]);
                    for ((gv, o), gd) in g.iter().zip(&other).zip(ga) {
                        *gd += gv * o;
                    }
                }
                if before[b].needs_grad {
                    let other: Vec<f64> = before[a].data.clone();
                    let gb = grad_of(&mut before[b]);
                    for ((gv, o), gd) in g.iter().zip(&other).zip(gb) {
                        *gd += gv * o;
                    }
                }
            }
            Op::Scale { a, factor } => {
                if before[*a].needs_grad {
                    let f = *factor;
                    let ga = grad_of(&mut before[*a]);
                    for (gd, gv) in ga.iter_mut().zip(g) {
                        *gd += gv * f;
                    }
                }
            }
            Op::MatMul {
                a,
                b,
                transpose_b,
                lead,
                m,
                k,
                n,
                b_batched,
            } => {
                let (a, b) = (*a, *b);
                let (lead, m, k, n) = (*lead, *m, *k, *n);
                let (tb, bb) = (*transpose_b, *b_batched);
                if before[a].needs_grad {
                    let bd = before[b].data.clone();
                    let ga = grad_of(&mut before[a]);
                    for l in 0..lead {
                        let g_sl = &g[l * m * n..(l + 1) * m * n];
                        let b_sl = if bb { &bd[l * k * n..(l + 1) * k * n] } else { &bd[..] };
                        let ga_sl = &mut ga[l * m * k..(l + 1) * m * k];
                        if tb {
                            // dA = dC * B, B stored [n, k]
                            mm_nn(g_sl, b_sl, m, n, k, ga_sl);
                        } else {
                            // dA = dC * B^T, B stored [k, n]
                            mm_nt(g_sl, b_sl, m, n, k, ga_sl);
                        }
                    }
                }
                if before[b].needs_grad {
                    let ad = before[a].data.clone();
                    let gb = grad_of(&mut before[b]);
                    for l in 0..lead {
                        let g_sl = &g[l * m * n..(l + 1) * m * n];
                        let a_sl = &ad[l * m * k..(l + 1) * m * k];
                        let gb_sl = if bb {
                            &mut gb[l * k * n..(l + 1) * k * n]
                        } else {
                            &mut gb[..]
                        };
                        if tb {
                            // dB = dC^T * A with dB stored [n, k]
                            mm_tn(g_sl, a_sl, m, n, k, gb_sl);
                        } else {
                            // dB = A^T * dC
                            mm_tn(a_sl, g_sl, m, k, n, gb_sl);
                        }
                    }
                }
            }
            Op::Permute { a, perm } => {
                if before[*a].needs_grad {
                    let inv = invert_perm(perm);
                    let out_dims = node.dims.clone();
                    let back = permute_data(g, &out_dims, &inv);
                    accumulate(grad_of(&mut before[*a]), &back);
                }
            }
            Op::Reshape { a } => {
                if before[*a].needs_grad {
                    accumulate(grad_of(&mut before[*a]), g);
                }
            }
            Op::Embedding { table, ids } => {
                if before[*table].needs_grad {
                    let d = before[*table].data.len() / before[*table].dims[0];
                    let ids = ids.clone();
                    let gt = grad_of(&mut before[*table]);
                    for (row, &id) in ids.iter().enumerate() {
                        let src = &g[row * d..(row + 1) * d];
                        let dst = &mut gt[id * d..(id + 1) * d];
                        for j in 0..d {
                            dst[j] += src[j];
                        }
                    }
                }
            }
            Op::MaskedSoftmax { a } => {
                if before[*a].needs_grad {
                    let w = *node.dims.last().unwrap();
                    let p = &node.data;
                    let rows = p.len() / w;
                    let mut dx = vec![0.0; p.len()];
                    for r in 0..rows {
                        let base = r * w;
                        let dot: f64 = (0..w).map(|j| g[base + j] * p[base + j]).sum();
                        for j in 0..w {
                            dx[base + j] = p[base + j] * (g[base + j] - dot);
                        }
                    }
                    accumulate(grad_of(&mut before[*a]), &dx);
                }
            }
            Op::LayerNorm {
                a,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let (a, gamma, beta) = (*a, *gamma, *beta);
                let d = *node.dims.last().unwrap();
                let rows = node.data.len() / d;
                let x = before[a].data.clone();
                let gam = before[gamma].data.clone();
                let (mean, inv_std) = (mean.clone(), inv_std.clone());
                if before[gamma].needs_grad {
                    let gg = grad_of(&mut before[gamma]);
                    for r in 0..rows {
                        for j in 0..d {
                            let xhat = (x[r * d + j] - mean[r]) * inv_std[r];
                            gg[j] += g[r * d + j] * xhat;
                        }
                    }
                }
                if before[beta].needs_grad {
                    let gb = grad_of(&mut before[beta]);
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                }
                if before[a].needs_grad {
                    let ga = grad_of(&mut before[a]);
                    for r in 0..rows {
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for j in 0..d {
                            let xhat = (x[r * d + j] - mean[r]) * inv_std[r];
                            let dxhat = g[r * d + j] * gam[j];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                        let inv_d = 1.0 / d as f64;
                        for j in 0..d {
                            let xhat = (x[r * d + j] - mean[r]) * inv_std[r];
                            let dxhat = g[r * d + j] * gam[j];
                            ga[r * d + j] += inv_std[r]
                                * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                        }
                    }
                }
            }
            Op::Relu { a } => {
                if before[*a].needs_grad {
                    let x = before[*a].data.clone();
                    let ga = grad_of(&mut before[*a]);
                    for (j, gv) in g.iter().enumerate() {
                        if x[j] > 0.0 {
                            ga[j] += gv;
                        }
                    }
                }
            }
            Op::Log { a } => {
                if before[*a].needs_grad {
                    let x = before[*a].data.clone();
                    let ga = grad_of(&mut before[*a]);
                    for (j, gv) in g.iter().enumerate() {
                        ga[j] += gv / x[j];
                    }
                }
            }
            Op::Exp { a } => {
                if before[*a].needs_grad {
                    let y = node.data.clone();
                    let ga = grad_of(&mut before[*a]);
                    for (j, gv) in g.iter().enumerate() {
                        ga[j] += gv * y[j];
                    }
                }
            }
            Op::MaskedSum { a, mask } => {
                if before[*a].needs_grad {
                    let mask = mask.clone();
                    let ga = grad_of(&mut before[*a]);
                    for (j, &keep) in mask.iter().enumerate() {
                        if keep {
                            ga[j] += g[0];
                        }
                    }
                }
            }
            Op::MaxLast { a } => {
                if before[*a].needs_grad {
                    let w = *before[*a].dims.last().unwrap();
                    let x = before[*a].data.clone();
                    let rows = x.len() / w;
                    let ga = grad_of(&mut before[*a]);
                    for r in 0..rows {
                        let row = &x[r * w..(r + 1) * w];
                        let mut best = 0;
                        for j in 1..w {
                            if row[j] > row[best] {
                                best = j;
                            }
                        }
                        ga[r * w + best] += g[r];
                    }
                }
            }
            Op::MaskedMeanRows { a, mask, counts } => {
                if before[*a].needs_grad {
                    let dims = before[*a].dims.clone();
                    let (rows, seq, d) = (dims[0], dims[1], dims[2]);
                    let (mask, counts) = (mask.clone(), counts.clone());
                    let ga = grad_of(&mut before[*a]);
                    for r in 0..rows {
                        let inv = 1.0 / counts[r];
                        for s in 0..seq {
                            if mask[r * seq + s] {
                                let dst = &mut ga[(r * seq + s) * d..(r * seq + s + 1) * d];
                                for j in 0..d {
                                    dst[j] += g[r * d + j] * inv;
                                }
                            }
                        }
                    }
                }
            }
            Op::PowerNormalize { a, scale, sum_sq } => {
                if before[*a].needs_grad {
                    let (s, sum_sq) = (*scale, *sum_sq);
                    let x = before[*a].data.clone();
                    let ga = grad_of(&mut before[*a]);
                    if sum_sq == 0.0 {
                        accumulate(ga, g);
                    } else {
                        let gdotx: f64 = g.iter().zip(&x).map(|(gv, xv)| gv * xv).sum();
                        let coef = s * gdotx / sum_sq;
                        for j in 0..x.len() {
                            ga[j] += s * g[j] - coef * x[j];
                        }
                    }
                }
            }
            Op::ComplexGroupScale {
                a,
                coeffs,
                group_complex,
            } => {
                if before[*a].needs_grad {
                    let coeffs = coeffs.clone();
                    let gc = *group_complex;
                    let ga = grad_of(&mut before[*a]);
                    for (gidx, &(cr, ci)) in coeffs.iter().enumerate() {
                        let base = gidx * gc * 2;
                        for t in 0..gc {
                            let gre = g[base + 2 * t];
                            let gim = g[base + 2 * t + 1];
                            ga[base + 2 * t] += cr * gre + ci * gim;
                            ga[base + 2 * t + 1] += cr * gim - ci * gre;
                        }
                    }
                }
            }
            Op::CrossEntropyMean {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                if before[*logits].needs_grad {
                    let w = before[*logits].dims[1];
                    let rows = before[*logits].dims[0];
                    let (targets, mask) = (targets.clone(), mask.clone());
                    let probs = probs.clone();
                    let scale = g[0] / count;
                    let gl = grad_of(&mut before[*logits]);
                    for r in 0..rows {
                        if !mask[r] {
                            continue;
                        }
                        for j in 0..w {
                            let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                            gl[r * w + j] += scale * (probs[r * w + j] - onehot);
                        }
                    }
                }
            }
        }
    }
}

fn grad_of(node: &mut Node) -> &mut Vec<f64> {
    if node.grad.is_none() {
        node.grad = Some(vec![0.0; node.data.len()]);
    }
    node.grad.as_mut().unwrap()
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn permute_data(data: &[f64], in_dims: &[usize], perm: &[usize]) -> Vec<f64> {
    let rank = in_dims.len();
    let out_dims: Vec<usize> = perm.iter().map(|&p| in_dims[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_dims[i + 1];
    }
    let mut out = vec![0.0; data.len()];
    let mut coords = vec![0usize; rank];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for d in (0..rank).rev() {
            coords[d] = rem % out_dims[d];
            rem /= out_dims[d];
        }
        let mut src = 0;
        for d in 0..rank {
            src += coords[d] * in_strides[perm[d]];
        }
        *slot = data[src];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_times_zero_has_zero_grads() {
        let mut tape = Tape::new();
        let c = tape.leaf_from(vec![3], vec![1.5, -2.0, 4.0], true);
        let z = tape.constant(vec![3], vec![0.0; 3]);
        let prod = tape.mul(c, z);
        let loss = tape.sum(prod);
        tape.backward(loss);
        assert_eq!(tape.grad(c).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn linear_grad_sums_weight_columns() {
        // loss = sum(W x) with W = ones(2x2), x = (1, 2): d loss / d x = (2, 2)
        let mut tape = Tape::new();
        let w = tape.constant(vec![2, 2], vec![1.0; 4]);
        let x = tape.leaf_from(vec![2, 1], vec![1.0, 2.0], true);
        let y = tape.matmul(w, x, false);
        let loss = tape.sum(y);
        tape.backward(loss);
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![2], vec![1.0, 2.0], true);
        tape.backward(x);
    }

    #[test]
    fn softmax_rows_sum_to_one_excluding_masked() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![2, 4], vec![0.3, -1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 1.0], true);
        let allowed = vec![true, false, true, true, false, false, false, false];
        let p = tape.masked_softmax_last(x, Some(&allowed));
        let d = tape.data(p);
        let row0: f64 = d[..4].iter().sum();
        assert!((row0 - 1.0).abs() < 1e-12);
        assert_eq!(d[1], 0.0);
        // fully-masked row is exactly zero
        assert_eq!(&d[4..], &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_transpose_matches_manual() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = tape.constant(vec![2, 3], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let c = tape.matmul(a, b, true); // [2,2]
        assert_eq!(tape.data(c), &[4.0, 2.0, 10.0, 5.0]);
    }

    #[test]
    fn max_last_ties_send_grad_to_lowest_index() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![1, 3], vec![2.0, 5.0, 5.0], true);
        let m = tape.max_last(x);
        let loss = tape.sum(m);
        tape.backward(loss);
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn power_normalize_scales_to_unit_power() {
        let mut tape = Tape::new();
        // mean |x|^2 = 4 -> scaled by 1/2
        let x = tape.leaf_from(vec![4], vec![2.0, 0.0, 0.0, 2.0], true);
        let y = tape.power_normalize(x);
        assert_eq!(tape.data(y), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_classes() {
        let mut tape = Tape::new();
        let logits = tape.leaf_from(vec![3, 20], vec![0.7; 60], true);
        let loss = tape.cross_entropy_mean(logits, &[4, 0, 19], &[true, true, true]);
        let expected = (20.0f64).ln();
        assert!((tape.data(loss)[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_hand_example() {
        // two unmasked tokens with target probabilities 1/2 and 1/4:
        // loss = (ln 2 + ln 4) / 2
        let mut tape = Tape::new();
        let logits = tape.leaf_from(
            vec![3, 2],
            vec![
                0.0,
                0.0,                  // p(target=0) = 1/2
                (3.0f64).ln(),
                (9.0f64).ln(),        // p(target=1) = 9/12 = 3/4 -> p(0) = 1/4
                5.0,
                -5.0,                 // masked out
            ],
            true,
        );
        let loss = tape.cross_entropy_mean(logits, &[0, 0, 1], &[true, true, false]);
        let expected = ((2.0f64).ln() + (4.0f64).ln()) / 2.0;
        assert!((tape.data(loss)[0] - expected).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "empty mask")]
    fn cross_entropy_rejects_empty_mask() {
        let mut tape = Tape::new();
        let logits = tape.leaf_from(vec![2, 3], vec![0.0; 6], true);
        tape.cross_entropy_mean(logits, &[0, 1], &[false, false]);
    }

    #[test]
    fn permute_roundtrip() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![2, 3, 4], (0..24).map(|v| v as f64).collect(), true);
        let p = tape.permute(x, &[2, 0, 1]);
        let q = tape.permute(p, &[1, 2, 0]);
        assert_eq!(tape.data(q), tape.data(x));
        assert_eq!(tape.dims(q), tape.dims(x));
    }
}
