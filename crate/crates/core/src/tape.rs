//! Minimal reverse-mode automatic differentiation on a flat tape.
//!
//! Values are indices into an append-only arena. Besides scalar ops the tape
//! has fused `dot` and `sum` nodes over contiguous ranges, which keeps episode
//! graphs small enough to backpropagate thousands of times per epoch.

/// Index of a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vid(pub u32);

/// A contiguous run of tape values, e.g. one vector or matrix row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VRange {
    pub start: u32,
    pub len: u32,
}

impl VRange {
    pub fn at(&self, i: usize) -> Vid {
        debug_assert!((i as u32) < self.len);
        Vid(self.start + i as u32)
    }

    pub fn iter(&self) -> impl Iterator<Item = Vid> {
        let (s, l) = (self.start, self.len);
        (s..s + l).map(Vid)
    }

    /// Sub-range [from, to).
    pub fn slice(&self, from: usize, to: usize) -> VRange {
        debug_assert!(from <= to && (to as u32) <= self.len);
        VRange {
            start: self.start + from as u32,
            len: (to - from) as u32,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Sqrt,
    Copy,
    /// Inner product of two ranges of length n.
    Dot,
    /// Sum of the range starting at a with length n.
    Sum,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    a: u32,
    b: u32,
    n: u32,
}

#[derive(Debug, Default)]
pub struct Tape {
    vals: Vec<f64>,
    nodes: Vec<Node>,
}

/// Adjoints produced by one backward pass, indexed like the tape.
pub struct Gradients {
    g: Vec<f64>,
}

impl Gradients {
    pub fn get(&self, v: Vid) -> f64 {
        self.g.get(v.0 as usize).copied().unwrap_or(0.0)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Vid) -> f64 {
        self.vals[v.0 as usize]
    }

    pub fn values(&self, r: VRange) -> Vec<f64> {
        r.iter().map(|v| self.value(v)).collect()
    }

    fn push(&mut self, op: Op, a: u32, b: u32, n: u32, val: f64) -> Vid {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { op, a, b, n });
        self.vals.push(val);
        Vid(id)
    }

    pub fn leaf(&mut self, val: f64) -> Vid {
        self.push(Op::Leaf, 0, 0, 0, val)
    }

    pub fn leaves(&mut self, vals: &[f64]) -> VRange {
        let start = self.nodes.len() as u32;
        for &v in vals {
            self.leaf(v);
        }
        VRange {
            start,
            len: vals.len() as u32,
        }
    }

    pub fn add(&mut self, a: Vid, b: Vid) -> Vid {
        let val = self.value(a) + self.value(b);
        self.push(Op::Add, a.0, b.0, 0, val)
    }

    pub fn sub(&mut self, a: Vid, b: Vid) -> Vid {
        let val = self.value(a) - self.value(b);
        self.push(Op::Sub, a.0, b.0, 0, val)
    }

    pub fn mul(&mut self, a: Vid, b: Vid) -> Vid {
        let val = self.value(a) * self.value(b);
        self.push(Op::Mul, a.0, b.0, 0, val)
    }

    pub fn div(&mut self, a: Vid, b: Vid) -> Vid {
        let val = self.value(a) / self.value(b);
        self.push(Op::Div, a.0, b.0, 0, val)
    }

    pub fn neg(&mut self, a: Vid) -> Vid {
        let val = -self.value(a);
        self.push(Op::Neg, a.0, 0, 0, val)
    }

    pub fn exp(&mut self, a: Vid) -> Vid {
        let val = self.value(a).exp();
        self.push(Op::Exp, a.0, 0, 0, val)
    }

    pub fn ln(&mut self, a: Vid) -> Vid {
        let val = self.value(a).ln();
        self.push(Op::Ln, a.0, 0, 0, val)
    }

    pub fn tanh(&mut self, a: Vid) -> Vid {
        let val = self.value(a).tanh();
        self.push(Op::Tanh, a.0, 0, 0, val)
    }

    pub fn sigmoid(&mut self, a: Vid) -> Vid {
        let val = 1.0 / (1.0 + (-self.value(a)).exp());
        self.push(Op::Sigmoid, a.0, 0, 0, val)
    }

    pub fn sqrt(&mut self, a: Vid) -> Vid {
        let val = self.value(a).sqrt();
        self.push(Op::Sqrt, a.0, 0, 0, val)
    }

    pub fn copy(&mut self, a: Vid) -> Vid {
        let val = self.value(a);
        self.push(Op::Copy, a.0, 0, 0, val)
    }

    /// Copies scattered values into one contiguous range.
    pub fn gather(&mut self, vids: &[Vid]) -> VRange {
        let start = self.nodes.len() as u32;
        for &v in vids {
            self.copy(v);
        }
        VRange {
            start,
            len: vids.len() as u32,
        }
    }

    pub fn dot(&mut self, a: VRange, b: VRange) -> Vid {
        assert_eq!(a.len, b.len, "dot over ranges of unequal length");
        let mut acc = 0.0;
        for i in 0..a.len as usize {
            acc += self.vals[a.start as usize + i] * self.vals[b.start as usize + i];
        }
        self.push(Op::Dot, a.start, b.start, a.len, acc)
    }

    pub fn sum(&mut self, a: VRange) -> Vid {
        let mut acc = 0.0;
        for i in 0..a.len as usize {
            acc += self.vals[a.start as usize + i];
        }
        self.push(Op::Sum, a.start, 0, a.len, acc)
    }

    /// Elementwise binary map; the result is contiguous.
    fn zip(&mut self, a: VRange, b: VRange, f: fn(&mut Tape, Vid, Vid) -> Vid) -> VRange {
        assert_eq!(a.len, b.len);
        let start = self.nodes.len() as u32;
        for i in 0..a.len as usize {
            f(self, a.at(i), b.at(i));
        }
        VRange { start, len: a.len }
    }

    pub fn add_range(&mut self, a: VRange, b: VRange) -> VRange {
        self.zip(a, b, Tape::add)
    }

    pub fn sub_range(&mut self, a: VRange, b: VRange) -> VRange {
        self.zip(a, b, Tape::sub)
    }

    pub fn mul_range(&mut self, a: VRange, b: VRange) -> VRange {
        self.zip(a, b, Tape::mul)
    }

    pub fn map_range(&mut self, a: VRange, f: fn(&mut Tape, Vid) -> Vid) -> VRange {
        let start = self.nodes.len() as u32;
        for i in 0..a.len as usize {
            f(self, a.at(i));
        }
        VRange { start, len: a.len }
    }

    pub fn tanh_range(&mut self, a: VRange) -> VRange {
        self.map_range(a, Tape::tanh)
    }

    pub fn scale_range(&mut self, a: VRange, c: Vid) -> VRange {
        let start = self.nodes.len() as u32;
        for i in 0..a.len as usize {
            self.mul(a.at(i), c);
        }
        VRange { start, len: a.len }
    }

    /// Reverse pass from `root`; the root's adjoint is seeded with 1.
    pub fn backward(&self, root: Vid) -> Gradients {
        let mut g = vec![0.0; self.nodes.len()];
        g[root.0 as usize] = 1.0;
        for i in (0..=root.0 as usize).rev() {
            let go = g[i];
            if go == 0.0 {
                continue;
            }
            let node = self.nodes[i];
            let (a, b, n) = (node.a as usize, node.b as usize, node.n as usize);
            match node.op {
                Op::Leaf => {}
                Op::Add => {
                    g[a] += go;
                    g[b] += go;
                }
                Op::Sub => {
                    g[a] += go;
                    g[b] -= go;
                }
                Op::Mul => {
                    g[a] += go * self.vals[b];
                    g[b] += go * self.vals[a];
                }
                Op::Div => {
                    g[a] += go / self.vals[b];
                    g[b] -= go * self.vals[i] / self.vals[b];
                }
                Op::Neg => {
                    g[a] -= go;
                }
                Op::Exp => {
                    g[a] += go * self.vals[i];
                }
                Op::Ln => {
                    g[a] += go / self.vals[a];
                }
                Op::Tanh => {
                    let y = self.vals[i];
                    g[a] += go * (1.0 - y * y);
                }
                Op::Sigmoid => {
                    let y = self.vals[i];
                    g[a] += go * y * (1.0 - y);
                }
                Op::Sqrt => {
                    g[a] += go / (2.0 * self.vals[i]);
                }
                Op::Copy => {
                    g[a] += go;
                }
                Op::Dot => {
                    for k in 0..n {
                        g[a + k] += go * self.vals[b + k];
                        g[b + k] += go * self.vals[a + k];
                    }
                }
                Op::Sum => {
                    for k in 0..n {
                        g[a + k] += go;
                    }
                }
            }
        }
        Gradients { g }
    }
}
