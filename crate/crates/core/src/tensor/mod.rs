//! Minimal reverse-mode autodiff over dense f32 tensors.
//!
//! A [`Tape`] records every op applied to tensors that originate from
//! [`Tape::var`]. Calling [`backward`] on a scalar result walks the recorded
//! nodes in reverse and accumulates gradients into the leaf variables.
//! Tensors built with [`Tensor::constant`] participate in ops but never
//! receive gradients, and ops whose inputs carry no live tape run eagerly
//! with no recording, which is the inference path.

use std::cell::RefCell;
use std::rc::{Rc, Weak};

use crate::error::{Error, Result};

mod adam;
mod conv;
mod gdn;
mod ops;

pub use adam::{Adam, AdamConfig};
pub use conv::{conv2d_out_dim, deconv2d_out_dim};

pub(crate) struct TapeRef {
    tape: Weak<TapeInner>,
    node: usize,
}

pub(crate) struct TensorData {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f32>>>,
    tape: Option<TapeRef>,
}

/// Dense row-major f32 tensor. Cheap to clone (shared storage).
#[derive(Clone)]
pub struct Tensor {
    td: Rc<TensorData>,
}

pub(crate) struct Node {
    op: Op,
    inputs: Vec<Rc<TensorData>>,
    out: Weak<TensorData>,
}

pub(crate) struct TapeInner {
    nodes: RefCell<Vec<Node>>,
}

/// Records the op graph for one forward pass.
pub struct Tape {
    inner: Rc<TapeInner>,
}

#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    AddScalar,
    MulScalar(f32),
    Sum,
    Mean,
    Sqrt,
    Relu,
    BiasAdd,
    ReflectPad { pad: usize },
    Crop2d { h: usize, w: usize },
    GlobalAvgPool,
    L2RowsMean,
    Conv2d { stride: usize, pad: usize },
    Deconv2d { stride: usize, pad: usize },
    Gdn { inverse: bool },
    /// Sum over elements of -log2 of the logistic mass on [v-0.5, v+0.5),
    /// floored at 2^-15. Inputs: values [.., C, H, W], mu [C], log_scale [C].
    LogisticRateBits,
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            inner: Rc::new(TapeInner {
                nodes: RefCell::new(Vec::new()),
            }),
        }
    }

    /// Leaf variable: receives a gradient after `backward`.
    pub fn var(&self, shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        check_len(shape, data.len())?;
        let td = Rc::new(TensorData {
            shape: shape.to_vec(),
            data,
            requires_grad: true,
            grad: RefCell::new(None),
            tape: Some(TapeRef {
                tape: Rc::downgrade(&self.inner),
                node: self.inner.nodes.borrow().len(),
            }),
        });
        self.inner.nodes.borrow_mut().push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            out: Rc::downgrade(&td),
        });
        Ok(Tensor { td })
    }

    pub fn node_count(&self) -> usize {
        self.inner.nodes.borrow().len()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::Shape(format!(
            "shape {:?} holds {} elements, got {}",
            shape, n, len
        )));
    }
    if shape.is_empty() {
        return Err(Error::Shape("rank-0 tensors are not supported".into()));
    }
    Ok(())
}

impl Tensor {
    /// Tensor that takes part in ops but never receives a gradient.
    pub fn constant(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        check_len(shape, data.len())?;
        Ok(Tensor {
            td: Rc::new(TensorData {
                shape: shape.to_vec(),
                data,
                requires_grad: false,
                grad: RefCell::new(None),
                tape: None,
            }),
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::constant(shape, vec![0.0; n]).expect("zeros")
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor::constant(&[1], vec![v]).expect("scalar")
    }

    pub fn shape(&self) -> &[usize] {
        &self.td.shape
    }

    pub fn numel(&self) -> usize {
        self.td.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.td.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on non-scalar");
        self.td.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.td.requires_grad
    }

    /// Accumulated gradient, if `backward` has reached this leaf.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.td.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.td.grad.borrow_mut() = None;
    }

    fn live_tape(&self) -> Option<(Rc<TapeInner>, usize)> {
        let r = self.td.tape.as_ref()?;
        r.tape.upgrade().map(|t| (t, r.node))
    }
}

/// Locate the single live tape among `inputs` (error if two differ), run
/// `forward`, and record a node when a tape is present.
pub(crate) fn record(op: Op, inputs: &[&Tensor], shape: Vec<usize>, data: Vec<f32>) -> Result<Tensor> {
    let mut tape: Option<Rc<TapeInner>> = None;
    for t in inputs {
        if let Some((ti, _)) = t.live_tape() {
            match &tape {
                None => tape = Some(ti),
                Some(prev) => {
                    if !Rc::ptr_eq(prev, &ti) {
                        return Err(Error::Tape("inputs come from different tapes".into()));
                    }
                }
            }
        }
    }
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let td = match tape {
        Some(tape) => {
            let node = tape.nodes.borrow().len();
            let td = Rc::new(TensorData {
                shape,
                data,
                requires_grad: false,
                grad: RefCell::new(None),
                tape: Some(TapeRef {
                    tape: Rc::downgrade(&tape),
                    node,
                }),
            });
            tape.nodes.borrow_mut().push(Node {
                op,
                inputs: inputs.iter().map(|t| Rc::clone(&t.td)).collect(),
                out: Rc::downgrade(&td),
            });
            td
        }
        None => Rc::new(TensorData {
            shape,
            data,
            requires_grad: false,
            grad: RefCell::new(None),
            tape: None,
        }),
    };
    Ok(Tensor { td })
}

fn accumulate(dst: &RefCell<Option<Vec<f32>>>, src: &[f32]) {
    let mut g = dst.borrow_mut();
    match g.as_mut() {
        Some(v) => {
            for (a, b) in v.iter_mut().zip(src) {
                *a += b;
            }
        }
        None => *g = Some(src.to_vec()),
    }
}

/// Reverse sweep from a scalar `root`. Every leaf var that influenced the
/// root accumulates into its `grad`; repeated calls keep accumulating.
pub fn backward(root: &Tensor) -> Result<()> {
    if root.numel() != 1 {
        return Err(Error::Tape(format!(
            "backward root must be a scalar, shape is {:?}",
            root.shape()
        )));
    }
    let (tape, root_id) = root
        .live_tape()
        .ok_or_else(|| Error::Tape("backward root is not on a live tape".into()))?;
    let nodes = tape.nodes.borrow();
    let mut grads: Vec<Option<Vec<f32>>> = vec![None; root_id + 1];
    grads[root_id] = Some(vec![1.0]);
    for id in (0..=root_id).rev() {
        let g = match grads[id].take() {
            Some(g) => g,
            None => continue,
        };
        let node = &nodes[id];
        if let Some(out) = node.out.upgrade() {
            if out.requires_grad {
                accumulate(&out.grad, &g);
            }
        }
        if matches!(node.op, Op::Leaf) {
            continue;
        }
        let input_grads = node_backward(node, &g)?;
        debug_assert_eq!(input_grads.len(), node.inputs.len());
        for (inp, ig) in node.inputs.iter().zip(input_grads) {
            let ig = match ig {
                Some(ig) => ig,
                None => continue,
            };
            match inp.tape.as_ref() {
                Some(r) if r.tape.upgrade().map_or(false, |t| Rc::ptr_eq(&t, &tape)) => {
                    match grads[r.node].as_mut() {
                        Some(v) => {
                            for (a, b) in v.iter_mut().zip(&ig) {
                                *a += b;
                            }
                        }
                        None => grads[r.node] = Some(ig),
                    }
                }
                _ => {
                    if inp.requires_grad {
                        accumulate(&inp.grad, &ig);
                    }
                }
            }
        }
    }
    Ok(())
}

type Grads = Vec<Option<Vec<f32>>>;

fn node_backward(node: &Node, g: &[f32]) -> Result<Grads> {
    let ins: Vec<(&[usize], &[f32])> = node
        .inputs
        .iter()
        .map(|t| (t.shape.as_slice(), t.data.as_slice()))
        .collect();
    Ok(match node.op {
        Op::Leaf => Vec::new(),
        Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
        Op::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
        Op::Mul => vec![
            Some(g.iter().zip(ins[1].1).map(|(g, b)| g * b).collect()),
            Some(g.iter().zip(ins[0].1).map(|(g, a)| g * a).collect()),
        ],
        Op::AddScalar => vec![Some(g.to_vec())],
        Op::MulScalar(s) => vec![Some(g.iter().map(|v| v * s).collect())],
        Op::Sum => vec![Some(vec![g[0]; ins[0].1.len()])],
        Op::Mean => {
            let n = ins[0].1.len() as f32;
            vec![Some(vec![g[0] / n; ins[0].1.len()])]
        }
        Op::Sqrt => vec![Some(
            g.iter()
                .zip(ins[0].1)
                .map(|(g, x)| g * 0.5 / x.sqrt().max(1e-12))
                .collect(),
        )],
        Op::Relu => vec![Some(
            g.iter()
                .zip(ins[0].1)
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect(),
        )],
        Op::BiasAdd => ops::bias_add_backward(g, ins[0].0, ins[1].0),
        Op::ReflectPad { pad } => ops::reflect_pad_backward(g, ins[0].0, pad),
        Op::Crop2d { h, w } => ops::crop2d_backward(g, ins[0].0, h, w),
        Op::GlobalAvgPool => ops::global_avg_pool_backward(g, ins[0].0),
        Op::L2RowsMean => ops::l2_rows_mean_backward(g[0], ins[0].0, ins[0].1, ins[1].1),
        Op::Conv2d { stride, pad } => {
            conv::conv2d_backward(g, ins[0].0, ins[0].1, ins[1].0, ins[1].1, stride, pad)
        }
        Op::Deconv2d { stride, pad } => {
            conv::deconv2d_backward(g, ins[0].0, ins[0].1, ins[1].0, ins[1].1, stride, pad)
        }
        Op::Gdn { inverse } => gdn::gdn_backward(g, &ins, inverse),
        Op::LogisticRateBits => ops::logistic_rate_bits_backward(g[0], &ins),
    })
}

// elementwise and structural ops

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    record(Op::Add, &[a, b], a.shape().to_vec(), data)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "sub")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    record(Op::Sub, &[a, b], a.shape().to_vec(), data)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "mul")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    record(Op::Mul, &[a, b], a.shape().to_vec(), data)
}

pub fn add_scalar(a: &Tensor, s: f32) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x + s).collect();
    record(Op::AddScalar, &[a], a.shape().to_vec(), data)
}

pub fn mul_scalar(a: &Tensor, s: f32) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x * s).collect();
    record(Op::MulScalar(s), &[a], a.shape().to_vec(), data)
}

/// Sum of all elements, accumulated in f64, returned as a scalar tensor.
pub fn sum(a: &Tensor) -> Result<Tensor> {
    let s: f64 = a.data().iter().map(|&v| v as f64).sum();
    finite_scalar(s, "sum")?;
    record(Op::Sum, &[a], vec![1], vec![s as f32])
}

pub fn mean(a: &Tensor) -> Result<Tensor> {
    let s: f64 = a.data().iter().map(|&v| v as f64).sum();
    let m = s / a.numel() as f64;
    finite_scalar(m, "mean")?;
    record(Op::Mean, &[a], vec![1], vec![m as f32])
}

pub fn sqrt(a: &Tensor) -> Result<Tensor> {
    let data: Vec<f32> = a.data().iter().map(|x| x.sqrt()).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sqrt".into()));
    }
    record(Op::Sqrt, &[a], a.shape().to_vec(), data)
}

pub fn relu(a: &Tensor) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x.max(0.0)).collect();
    record(Op::Relu, &[a], a.shape().to_vec(), data)
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{}: {:?} vs {:?}",
            what,
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn finite_scalar(v: f64, what: &str) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

pub use conv::{conv2d, deconv2d};
pub use gdn::gdn;
pub use ops::{
    bias_add, crop2d, global_avg_pool, l2_rows_mean, logistic_rate_bits, reflect_pad2d,
};
pub(crate) use ops::{logistic_bin_mass, P_MIN};

#[cfg(test)]
pub(crate) mod testutil;

#[cfg(test)]
mod tests;
