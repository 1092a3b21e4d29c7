//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records every primitive operation as it executes. Operands and
//! results are identified by lightweight [`Var`] handles (indices into the
//! tape), so recording is append-only and parents always precede children.
//! [`Tape::backward`] replays the record in reverse, accumulating exact
//! gradients with a deterministic order of additions — important because
//! float addition does not commute bit-for-bit.
//!
//! The primitive set is exactly what a graph-attention encoder-decoder
//! needs: dense linear algebra, pointwise nonlinearities, row gathering for
//! edge lists, and segment-wise softmax/summation for per-neighborhood
//! attention. Segments play the role of attention masks: a row participates
//! in exactly the segment it is assigned to, and nothing else.

use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::tensor::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`]. Cheap to copy; carries its
/// shape so shape checking does not need to borrow the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn rows(self) -> usize {
        self.rows
    }

    pub fn cols(self) -> usize {
        self.cols
    }
}

enum Op {
    Leaf { name: Option<String> },
    Matmul(usize, usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ScaleRows(usize, usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    MaxElem(usize, usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize, usize),
    SliceCols(usize, usize, usize),
    Reshape(usize),
    GatherRows(usize, Vec<usize>),
    SegmentSoftmax(usize, Vec<usize>),
    SegmentSum(usize, Vec<usize>),
    ReduceSum(usize),
    Pick(usize, usize, usize),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of primitive operations.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Record a constant input; no gradient will flow into it.
    pub fn constant(&self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf { name: None }, false)
    }

    /// Record a trainable parameter leaf. The name keys its gradient in the
    /// [`Gradients`] produced by backward.
    pub fn param(&self, name: &str, t: &Tensor) -> Var {
        self.push(
            t.rows(),
            t.cols(),
            t.data().to_vec(),
            Op::Leaf { name: Some(name.to_string()) },
            true,
        )
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![0.0; rows * cols], Op::Leaf { name: None }, false)
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.push(1, 1, vec![value], Op::Leaf { name: None }, false)
    }

    /// Clone the current value of a recorded tensor.
    pub fn value(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.id];
        Tensor::from_vec(n.rows, n.cols, n.value.clone()).expect("node shapes are consistent")
    }

    // -- primitive operations -------------------------------------------

    /// Matrix product `(r×k) · (k×c) → r×c`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        if a.cols != b.rows {
            return Err(self.shapes("matmul", a, b));
        }
        let value = {
            let nodes = self.nodes.borrow();
            matmul_vals(&nodes[a.id].value, a.rows, a.cols, &nodes[b.id].value, b.cols)
        };
        self.finish("matmul", a.rows, b.cols, value, Op::Matmul(a.id, b.id), &[a, b])
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        if a.rows != b.rows || a.cols != b.cols {
            return Err(self.shapes("add", a, b));
        }
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.iter().zip(&nodes[b.id].value).map(|(x, y)| x + y).collect()
        };
        self.finish("add", a.rows, a.cols, value, Op::Add(a.id, b.id), &[a, b])
    }

    /// Add a `1 × c` bias row to every row of an `r × c` matrix.
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var, TensorError> {
        if bias.rows != 1 || bias.cols != x.cols {
            return Err(self.shapes("add_bias", x, bias));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.id].value;
            let bv = &nodes[bias.id].value;
            let mut out = xv.clone();
            for row in out.chunks_mut(x.cols) {
                for (o, b) in row.iter_mut().zip(bv) {
                    *o += b;
                }
            }
            out
        };
        self.finish("add_bias", x.rows, x.cols, value, Op::AddBias(x.id, bias.id), &[x, bias])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        if a.rows != b.rows || a.cols != b.cols {
            return Err(self.shapes("mul", a, b));
        }
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.iter().zip(&nodes[b.id].value).map(|(x, y)| x * y).collect()
        };
        self.finish("mul", a.rows, a.cols, value, Op::Mul(a.id, b.id), &[a, b])
    }

    /// Multiply by a compile-time-known scalar constant.
    pub fn scale(&self, x: Var, c: f64) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[x.id].value.iter().map(|v| v * c).collect()
        };
        self.finish("scale", x.rows, x.cols, value, Op::Scale(x.id, c), &[x])
    }

    /// Scale row `i` of an `r × c` matrix by the scalar in row `i` of an
    /// `r × 1` column. Used to weight gathered neighbor rows by attention.
    pub fn scale_rows(&self, x: Var, s: Var) -> Result<Var, TensorError> {
        if s.cols != 1 || s.rows != x.rows {
            return Err(self.shapes("scale_rows", x, s));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.id].value;
            let sv = &nodes[s.id].value;
            let mut out = Vec::with_capacity(xv.len());
            for (i, row) in xv.chunks(x.cols).enumerate() {
                out.extend(row.iter().map(|v| v * sv[i]));
            }
            out
        };
        self.finish("scale_rows", x.rows, x.cols, value, Op::ScaleRows(x.id, s.id), &[x, s])
    }

    pub fn relu(&self, x: Var) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[x.id].value.iter().map(|v| v.max(0.0)).collect()
        };
        self.finish("relu", x.rows, x.cols, value, Op::Relu(x.id), &[x])
    }

    pub fn exp(&self, x: Var) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[x.id].value.iter().map(|v| v.exp()).collect()
        };
        self.finish("exp", x.rows, x.cols, value, Op::Exp(x.id), &[x])
    }

    pub fn log(&self, x: Var) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[x.id].value.iter().map(|v| v.ln()).collect()
        };
        self.finish("log", x.rows, x.cols, value, Op::Log(x.id), &[x])
    }

    /// Elementwise maximum. Where the operands tie, gradient flows to the
    /// left operand (a fixed choice keeps backward deterministic).
    pub fn max_elem(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        if a.rows != b.rows || a.cols != b.cols {
            return Err(self.shapes("max_elem", a, b));
        }
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id]
                .value
                .iter()
                .zip(&nodes[b.id].value)
                .map(|(x, y)| if x >= y { *x } else { *y })
                .collect()
        };
        self.finish("max_elem", a.rows, a.cols, value, Op::MaxElem(a.id, b.id), &[a, b])
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat_rows",
            message: "empty part list".into(),
        })?;
        let cols = first.cols;
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(self.shapes("concat_rows", *first, *p));
            }
            rows += p.rows;
        }
        let value = {
            let nodes = self.nodes.borrow();
            let mut out = Vec::with_capacity(rows * cols);
            for p in parts {
                out.extend_from_slice(&nodes[p.id].value);
            }
            out
        };
        let ids = parts.iter().map(|p| p.id).collect();
        self.finish("concat_rows", rows, cols, value, Op::ConcatRows(ids), parts)
    }

    /// Place matrices with equal row counts side by side.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat_cols",
            message: "empty part list".into(),
        })?;
        let rows = first.rows;
        let mut cols = 0;
        for p in parts {
            if p.rows != rows {
                return Err(self.shapes("concat_cols", *first, *p));
            }
            cols += p.cols;
        }
        let value = {
            let nodes = self.nodes.borrow();
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    let v = &nodes[p.id].value;
                    out.extend_from_slice(&v[r * p.cols..(r + 1) * p.cols]);
                }
            }
            out
        };
        let ids = parts.iter().map(|p| p.id).collect();
        self.finish("concat_cols", rows, cols, value, Op::ConcatCols(ids), parts)
    }

    /// Contiguous row range `start..end`.
    pub fn slice_rows(&self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        if start > end || end > x.rows {
            return Err(TensorError::InvalidArgument {
                op: "slice_rows",
                message: format!("range {start}..{end} outside {} rows", x.rows),
            });
        }
        let value = {
            let nodes = self.nodes.borrow();
            nodes[x.id].value[start * x.cols..end * x.cols].to_vec()
        };
        self.finish(
            "slice_rows",
            end - start,
            x.cols,
            value,
            Op::SliceRows(x.id, start, end),
            &[x],
        )
    }

    /// Contiguous column range `start..end`.
    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        if start > end || end > x.cols {
            return Err(TensorError::InvalidArgument {
                op: "slice_cols",
                message: format!("range {start}..{end} outside {} columns", x.cols),
            });
        }
        let cols = end - start;
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.id].value;
            let mut out = Vec::with_capacity(x.rows * cols);
            for r in 0..x.rows {
                out.extend_from_slice(&v[r * x.cols + start..r * x.cols + end]);
            }
            out
        };
        self.finish("slice_cols", x.rows, cols, value, Op::SliceCols(x.id, start, end), &[x])
    }

    /// Reinterpret the row-major buffer under a new shape with the same
    /// element count.
    pub fn reshape(&self, x: Var, rows: usize, cols: usize) -> Result<Var, TensorError> {
        if rows * cols != x.rows * x.cols {
            return Err(TensorError::InvalidArgument {
                op: "reshape",
                message: format!("{}x{} cannot become {rows}x{cols}", x.rows, x.cols),
            });
        }
        let value = self.nodes.borrow()[x.id].value.clone();
        self.finish("reshape", rows, cols, value, Op::Reshape(x.id), &[x])
    }

    /// Output row `e` is input row `indices[e]`; rows may repeat. Backward
    /// scatter-adds into the source rows.
    pub fn gather_rows(&self, x: Var, indices: &[usize]) -> Result<Var, TensorError> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.rows) {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                message: format!("row index {bad} outside {} rows", x.rows),
            });
        }
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.id].value;
            let mut out = Vec::with_capacity(indices.len() * x.cols);
            for &i in indices {
                out.extend_from_slice(&v[i * x.cols..(i + 1) * x.cols]);
            }
            out
        };
        self.finish(
            "gather_rows",
            indices.len(),
            x.cols,
            value,
            Op::GatherRows(x.id, indices.to_vec()),
            &[x],
        )
    }

    /// Softmax within row segments, independently per column.
    ///
    /// `segments[r]` assigns row `r` to a segment; for every column `k` and
    /// segment `s`, the outputs over rows of `s` are `exp(x)` normalized to
    /// sum 1 across exactly those rows. Rows of other segments do not
    /// interact — segment membership is the attention mask. Stabilized by
    /// subtracting the per-(segment, column) maximum before exponentiation.
    pub fn segment_softmax(&self, x: Var, segments: &[usize]) -> Result<Var, TensorError> {
        if segments.len() != x.rows {
            return Err(TensorError::InvalidArgument {
                op: "segment_softmax",
                message: format!("{} segment ids for {} rows", segments.len(), x.rows),
            });
        }
        let value = {
            let nodes = self.nodes.borrow();
            segment_softmax_vals(&nodes[x.id].value, x.rows, x.cols, segments)
        };
        self.finish(
            "segment_softmax",
            x.rows,
            x.cols,
            value,
            Op::SegmentSoftmax(x.id, segments.to_vec()),
            &[x],
        )
    }

    /// Sum rows by segment id into an `n_segments × c` matrix.
    pub fn segment_sum(
        &self,
        x: Var,
        segments: &[usize],
        n_segments: usize,
    ) -> Result<Var, TensorError> {
        if segments.len() != x.rows {
            return Err(TensorError::InvalidArgument {
                op: "segment_sum",
                message: format!("{} segment ids for {} rows", segments.len(), x.rows),
            });
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= n_segments) {
            return Err(TensorError::InvalidArgument {
                op: "segment_sum",
                message: format!("segment id {bad} outside 0..{n_segments}"),
            });
        }
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.id].value;
            let mut out = vec![0.0; n_segments * x.cols];
            for (r, &s) in segments.iter().enumerate() {
                let src = &v[r * x.cols..(r + 1) * x.cols];
                let dst = &mut out[s * x.cols..(s + 1) * x.cols];
                for (d, a) in dst.iter_mut().zip(src) {
                    *d += a;
                }
            }
            out
        };
        self.finish(
            "segment_sum",
            n_segments,
            x.cols,
            value,
            Op::SegmentSum(x.id, segments.to_vec()),
            &[x],
        )
    }

    /// Sum of all elements, as a `1 × 1` scalar.
    pub fn reduce_sum(&self, x: Var) -> Result<Var, TensorError> {
        let value = vec![self.nodes.borrow()[x.id].value.iter().sum()];
        self.finish("reduce_sum", 1, 1, value, Op::ReduceSum(x.id), &[x])
    }

    /// Extract element `(i, j)` as a `1 × 1` scalar.
    pub fn pick(&self, x: Var, i: usize, j: usize) -> Result<Var, TensorError> {
        if i >= x.rows || j >= x.cols {
            return Err(TensorError::InvalidArgument {
                op: "pick",
                message: format!("({i}, {j}) outside {}x{}", x.rows, x.cols),
            });
        }
        let value = vec![self.nodes.borrow()[x.id].value[i * x.cols + j]];
        self.finish("pick", 1, 1, value, Op::Pick(x.id, i, j), &[x])
    }

    // -- backward -------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Returns one gradient per
    /// parameter leaf that the loss depends on; leaves it never touched
    /// read back as zero from the result.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        if loss.rows != 1 || loss.cols != 1 {
            return Err(TensorError::InvalidArgument {
                op: "backward",
                message: format!("loss must be 1x1, got {}x{}", loss.rows, loss.cols),
            });
        }
        let nodes = self.nodes.borrow();

        // The loss must have at least one trainable ancestor.
        let mut reachable = vec![false; loss.id + 1];
        reachable[loss.id] = true;
        let mut connected = false;
        for id in (0..=loss.id).rev() {
            if !reachable[id] {
                continue;
            }
            let node = &nodes[id];
            if let Op::Leaf { name: Some(_) } = &node.op {
                if node.needs_grad {
                    connected = true;
                }
            }
            for p in parent_ids(&node.op) {
                reachable[p] = true;
            }
        }
        if !connected {
            return Err(TensorError::GraphDetached);
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            // Re-store the gradient for leaves so it can be read out below;
            // interior nodes drop theirs once propagated.
            if matches!(node.op, Op::Leaf { .. }) {
                grads[id] = Some(g);
                continue;
            }
            if !node.needs_grad {
                continue;
            }
            self.propagate(&nodes, &mut grads, id, &g);
        }

        let mut by_name = BTreeMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if let Op::Leaf { name: Some(name) } = &node.op {
                let grad = match grads.get(id).and_then(|g| g.as_ref()) {
                    Some(g) => Tensor::from_vec(node.rows, node.cols, g.clone())
                        .expect("gradient matches node shape"),
                    None => Tensor::zeros(node.rows, node.cols),
                };
                by_name.insert(name.clone(), grad);
            }
        }
        let by_id = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.map(|g| {
                    let n = &nodes[id];
                    Tensor::from_vec(n.rows, n.cols, g).expect("gradient matches node shape")
                })
            })
            .collect();
        Ok(Gradients { by_name, by_id })
    }

    fn propagate(
        &self,
        nodes: &[Node],
        grads: &mut [Option<Vec<f64>>],
        id: usize,
        g: &[f64],
    ) {
        let add_into = |grads: &mut [Option<Vec<f64>>], pid: usize, contrib: &[f64]| {
            if !nodes[pid].needs_grad {
                return;
            }
            let slot = grads[pid]
                .get_or_insert_with(|| vec![0.0; nodes[pid].rows * nodes[pid].cols]);
            for (a, b) in slot.iter_mut().zip(contrib) {
                *a += b;
            }
        };
        let node = &nodes[id];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Matmul(a, b) => {
                let (ar, ac) = (nodes[*a].rows, nodes[*a].cols);
                let bc = nodes[*b].cols;
                if nodes[*a].needs_grad {
                    // dA[i, k] = dot(dC row i, B row k)
                    let bv = &nodes[*b].value;
                    let mut da = vec![0.0; ar * ac];
                    for i in 0..ar {
                        let grow = &g[i * bc..(i + 1) * bc];
                        for k in 0..ac {
                            let brow = &bv[k * bc..(k + 1) * bc];
                            da[i * ac + k] =
                                grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                    add_into(grads, *a, &da);
                }
                if nodes[*b].needs_grad {
                    // dB[k, j] += A[i, k] * dC[i, j], accumulated row-wise.
                    let av = &nodes[*a].value;
                    let mut db = vec![0.0; ac * bc];
                    for i in 0..ar {
                        let grow = &g[i * bc..(i + 1) * bc];
                        for k in 0..ac {
                            let coeff = av[i * ac + k];
                            if coeff != 0.0 {
                                let drow = &mut db[k * bc..(k + 1) * bc];
                                for (d, x) in drow.iter_mut().zip(grow) {
                                    *d += coeff * x;
                                }
                            }
                        }
                    }
                    add_into(grads, *b, &db);
                }
            }
            Op::Add(a, b) => {
                add_into(grads, *a, g);
                add_into(grads, *b, g);
            }
            Op::AddBias(x, bias) => {
                add_into(grads, *x, g);
                if nodes[*bias].needs_grad {
                    let cols = node.cols;
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    add_into(grads, *bias, &db);
                }
            }
            Op::Mul(a, b) => {
                if nodes[*a].needs_grad {
                    let bv = &nodes[*b].value;
                    let da: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    add_into(grads, *a, &da);
                }
                if nodes[*b].needs_grad {
                    let av = &nodes[*a].value;
                    let db: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    add_into(grads, *b, &db);
                }
            }
            Op::Scale(x, c) => {
                let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                add_into(grads, *x, &dx);
            }
            Op::ScaleRows(x, s) => {
                let cols = node.cols;
                if nodes[*x].needs_grad {
                    let sv = &nodes[*s].value;
                    let mut dx = Vec::with_capacity(g.len());
                    for (i, row) in g.chunks(cols).enumerate() {
                        dx.extend(row.iter().map(|v| v * sv[i]));
                    }
                    add_into(grads, *x, &dx);
                }
                if nodes[*s].needs_grad {
                    let xv = &nodes[*x].value;
                    let ds: Vec<f64> = g
                        .chunks(cols)
                        .zip(xv.chunks(cols))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    add_into(grads, *s, &ds);
                }
            }
            Op::Relu(x) => {
                let xv = &nodes[*x].value;
                let dx: Vec<f64> =
                    g.iter().zip(xv).map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 }).collect();
                add_into(grads, *x, &dx);
            }
            Op::Exp(x) => {
                let out = &node.value;
                let dx: Vec<f64> = g.iter().zip(out).map(|(gv, v)| gv * v).collect();
                add_into(grads, *x, &dx);
            }
            Op::Log(x) => {
                let xv = &nodes[*x].value;
                let dx: Vec<f64> = g.iter().zip(xv).map(|(gv, v)| gv / v).collect();
                add_into(grads, *x, &dx);
            }
            Op::MaxElem(a, b) => {
                let av = &nodes[*a].value;
                let bv = &nodes[*b].value;
                if nodes[*a].needs_grad {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(av.iter().zip(bv))
                        .map(|(gv, (x, y))| if x >= y { *gv } else { 0.0 })
                        .collect();
                    add_into(grads, *a, &da);
                }
                if nodes[*b].needs_grad {
                    let db: Vec<f64> = g
                        .iter()
                        .zip(av.iter().zip(bv))
                        .map(|(gv, (x, y))| if x >= y { 0.0 } else { *gv })
                        .collect();
                    add_into(grads, *b, &db);
                }
            }
            Op::ConcatRows(parts) => {
                let cols = node.cols;
                let mut offset = 0;
                for &p in parts {
                    let rows = nodes[p].rows;
                    add_into(grads, p, &g[offset * cols..(offset + rows) * cols]);
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.rows;
                let mut col0 = 0;
                for &p in parts {
                    let pc = nodes[p].cols;
                    if nodes[p].needs_grad {
                        let mut dp = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            let base = r * node.cols + col0;
                            dp.extend_from_slice(&g[base..base + pc]);
                        }
                        add_into(grads, p, &dp);
                    }
                    col0 += pc;
                }
            }
            Op::SliceRows(x, start, _end) => {
                if nodes[*x].needs_grad {
                    let cols = node.cols;
                    let mut dx = vec![0.0; nodes[*x].rows * cols];
                    dx[start * cols..start * cols + g.len()].copy_from_slice(g);
                    add_into(grads, *x, &dx);
                }
            }
            Op::SliceCols(x, start, end) => {
                if nodes[*x].needs_grad {
                    let src_cols = nodes[*x].cols;
                    let cols = end - start;
                    let mut dx = vec![0.0; nodes[*x].rows * src_cols];
                    for r in 0..node.rows {
                        dx[r * src_cols + start..r * src_cols + end]
                            .copy_from_slice(&g[r * cols..(r + 1) * cols]);
                    }
                    add_into(grads, *x, &dx);
                }
            }
            Op::Reshape(x) => {
                add_into(grads, *x, g);
            }
            Op::GatherRows(x, indices) => {
                if nodes[*x].needs_grad {
                    let cols = node.cols;
                    let mut dx = vec![0.0; nodes[*x].rows * cols];
                    for (e, &i) in indices.iter().enumerate() {
                        let src = &g[e * cols..(e + 1) * cols];
                        let dst = &mut dx[i * cols..(i + 1) * cols];
                        for (d, v) in dst.iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                    add_into(grads, *x, &dx);
                }
            }
            Op::SegmentSoftmax(x, segments) => {
                if nodes[*x].needs_grad {
                    let cols = node.cols;
                    let y = &node.value;
                    // Per (segment, column): dx = y * (g - sum(g * y)).
                    let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
                    let mut dots = vec![0.0; n_seg * cols];
                    for (r, &s) in segments.iter().enumerate() {
                        for c in 0..cols {
                            dots[s * cols + c] += g[r * cols + c] * y[r * cols + c];
                        }
                    }
                    let mut dx = vec![0.0; g.len()];
                    for (r, &s) in segments.iter().enumerate() {
                        for c in 0..cols {
                            let i = r * cols + c;
                            dx[i] = y[i] * (g[i] - dots[s * cols + c]);
                        }
                    }
                    add_into(grads, *x, &dx);
                }
            }
            Op::SegmentSum(x, segments) => {
                if nodes[*x].needs_grad {
                    let cols = node.cols;
                    let mut dx = Vec::with_capacity(segments.len() * cols);
                    for &s in segments {
                        dx.extend_from_slice(&g[s * cols..(s + 1) * cols]);
                    }
                    add_into(grads, *x, &dx);
                }
            }
            Op::ReduceSum(x) => {
                if nodes[*x].needs_grad {
                    let dx = vec![g[0]; nodes[*x].rows * nodes[*x].cols];
                    add_into(grads, *x, &dx);
                }
            }
            Op::Pick(x, i, j) => {
                if nodes[*x].needs_grad {
                    let cols = nodes[*x].cols;
                    let mut dx = vec![0.0; nodes[*x].rows * cols];
                    dx[i * cols + j] = g[0];
                    add_into(grads, *x, &dx);
                }
            }
        }
    }

    // -- plumbing -------------------------------------------------------

    fn push(&self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { rows, cols, value, op, needs_grad });
        Var { id, rows, cols }
    }

    fn finish(
        &self,
        op_name: &'static str,
        rows: usize,
        cols: usize,
        value: Vec<f64>,
        op: Op,
        parents: &[Var],
    ) -> Result<Var, TensorError> {
        if cfg!(debug_assertions) && !value.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let needs_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].needs_grad)
        };
        Ok(self.push(rows, cols, value, op, needs_grad))
    }

    fn shapes(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        }
    }
}

fn parent_ids(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf { .. } => vec![],
        Op::Matmul(a, b)
        | Op::Add(a, b)
        | Op::AddBias(a, b)
        | Op::Mul(a, b)
        | Op::ScaleRows(a, b)
        | Op::MaxElem(a, b) => vec![*a, *b],
        Op::Scale(x, _)
        | Op::Relu(x)
        | Op::Exp(x)
        | Op::Log(x)
        | Op::SliceRows(x, _, _)
        | Op::SliceCols(x, _, _)
        | Op::Reshape(x)
        | Op::GatherRows(x, _)
        | Op::SegmentSoftmax(x, _)
        | Op::SegmentSum(x, _)
        | Op::ReduceSum(x)
        | Op::Pick(x, _, _) => vec![*x],
        Op::ConcatRows(ps) | Op::ConcatCols(ps) => ps.clone(),
    }
}

fn matmul_vals(a: &[f64], ar: usize, ac: usize, b: &[f64], bc: usize) -> Vec<f64> {
    let mut out = vec![0.0; ar * bc];
    for i in 0..ar {
        for k in 0..ac {
            let coeff = a[i * ac + k];
            if coeff != 0.0 {
                let brow = &b[k * bc..(k + 1) * bc];
                let orow = &mut out[i * bc..(i + 1) * bc];
                for (o, x) in orow.iter_mut().zip(brow) {
                    *o += coeff * x;
                }
            }
        }
    }
    out
}

fn segment_softmax_vals(x: &[f64], rows: usize, cols: usize, segments: &[usize]) -> Vec<f64> {
    let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
    // Stabilize per (segment, column) with the running maximum.
    let mut maxes = vec![f64::NEG_INFINITY; n_seg * cols];
    for (r, &s) in segments.iter().enumerate() {
        for c in 0..cols {
            let m = &mut maxes[s * cols + c];
            *m = m.max(x[r * cols + c]);
        }
    }
    let mut out = vec![0.0; rows * cols];
    let mut sums = vec![0.0; n_seg * cols];
    for (r, &s) in segments.iter().enumerate() {
        for c in 0..cols {
            let e = (x[r * cols + c] - maxes[s * cols + c]).exp();
            out[r * cols + c] = e;
            sums[s * cols + c] += e;
        }
    }
    for (r, &s) in segments.iter().enumerate() {
        for c in 0..cols {
            out[r * cols + c] /= sums[s * cols + c];
        }
    }
    out
}

/// Gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
    by_id: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf variable; zero if the
    /// loss never depended on it. Interior gradients are dropped as soon as
    /// they have been propagated, so only query leaves here.
    pub fn of(&self, v: Var) -> Tensor {
        match self.by_id.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(v.rows, v.cols),
        }
    }

    /// Gradient for a named parameter leaf, if such a leaf was recorded.
    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    /// All named parameter gradients (zero-filled for untouched leaves).
    pub fn named(&self) -> &BTreeMap<String, Tensor> {
        &self.by_name
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor> {
        self.by_name
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn forward_values_of_basic_ops() {
        let tape = Tape::new();
        let a = tape.constant(&t(&[vec![1.0, -2.0], vec![3.0, 0.5]]));
        let b = tape.constant(&t(&[vec![2.0, 0.0], vec![1.0, -1.0]]));
        let mm = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(mm).data(), &[0.0, 2.0, 6.5, -0.5]);
        let r = tape.relu(a).unwrap();
        assert_eq!(tape.value(r).data(), &[1.0, 0.0, 3.0, 0.5]);
        let m = tape.max_elem(a, b).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 0.0, 3.0, 0.5]);
        let s = tape.reduce_sum(a).unwrap();
        assert_eq!(tape.value(s).item(), 2.5);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let tape = Tape::new();
        let a = tape.zeros(2, 3);
        let b = tape.zeros(2, 3);
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(err.to_string(), "shape mismatch in matmul: left 2x3, right 2x3");
    }

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let tape = Tape::new();
        let w = tape.param("w", &t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let loss = tape.reduce_sum(w).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.by_name("w").unwrap().data(), &[1.0; 4]);
        assert_eq!(grads.of(w).data(), &[1.0; 4]);
    }

    #[test]
    fn detached_loss_is_an_error() {
        let tape = Tape::new();
        let c = tape.constant(&Tensor::scalar(3.0));
        let _w = tape.param("w", &Tensor::scalar(1.0));
        let loss = tape.scale(c, 2.0).unwrap();
        assert_eq!(tape.backward(loss).unwrap_err(), TensorError::GraphDetached);
    }

    #[test]
    fn unused_parameters_read_back_as_zero_gradients() {
        let tape = Tape::new();
        let w = tape.param("w", &Tensor::scalar(2.0));
        let u = tape.param("unused", &Tensor::zeros(2, 3));
        let loss = tape.mul(w, w).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.by_name("w").unwrap().item(), 4.0);
        assert_eq!(grads.by_name("unused").unwrap().data(), &[0.0; 6]);
        assert_eq!(grads.of(u).data(), &[0.0; 6]);
    }

    #[test]
    fn single_segment_softmax_of_one_row_is_exactly_one() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[vec![-3.7, 42.0]]));
        let y = tape.segment_softmax(x, &[0]).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 1.0]);
    }

    #[test]
    fn segment_softmax_normalizes_within_segments_only() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[vec![0.0], vec![0.0], vec![100.0], vec![101.0]]));
        let y = tape.segment_softmax(x, &[0, 0, 1, 1]).unwrap();
        let v = tape.value(y);
        assert!((v.at(0, 0) - 0.5).abs() < 1e-12);
        assert!((v.at(1, 0) - 0.5).abs() < 1e-12);
        assert!((v.at(2, 0) + v.at(3, 0) - 1.0).abs() < 1e-12);
        assert!(v.at(3, 0) > v.at(2, 0));
    }

    #[test]
    fn two_backward_passes_on_independent_tapes_agree() {
        let build = || {
            let tape = Tape::new();
            let w = tape.param("w", &t(&[vec![0.3, -0.7], vec![1.1, 0.2]]));
            let x = tape.constant(&t(&[vec![1.0], vec![-2.0]]));
            let y = tape.matmul(w, x).unwrap();
            let r = tape.relu(y).unwrap();
            let loss = tape.reduce_sum(r).unwrap();
            let g = tape.backward(loss).unwrap();
            g.by_name("w").unwrap().clone()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn gather_rows_backward_accumulates_repeats() {
        let tape = Tape::new();
        let w = tape.param("w", &t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let g = tape.gather_rows(w, &[0, 0, 1]).unwrap();
        assert_eq!(tape.value(g).rows(), 3);
        let loss = tape.reduce_sum(g).unwrap();
        let grads = tape.backward(loss).unwrap();
        // Row 0 was gathered twice, so it accumulates gradient 2 per entry.
        assert_eq!(grads.by_name("w").unwrap().data(), &[2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn concat_and_slice_round_trip_gradients() {
        let tape = Tape::new();
        let a = tape.param("a", &t(&[vec![1.0, 2.0]]));
        let b = tape.param("b", &t(&[vec![3.0, 4.0]]));
        let cat = tape.concat_cols(&[a, b]).unwrap();
        let right = tape.slice_cols(cat, 2, 4).unwrap();
        let loss = tape.reduce_sum(right).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.by_name("a").unwrap().data(), &[0.0, 0.0]);
        assert_eq!(grads.by_name("b").unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_finite_results_are_reported_in_debug_builds() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::scalar(-1.0));
        let result = tape.log(x);
        if cfg!(debug_assertions) {
            assert_eq!(result.unwrap_err(), TensorError::NonFinite { op: "log" });
        } else {
            assert!(result.is_ok());
        }
    }
}
