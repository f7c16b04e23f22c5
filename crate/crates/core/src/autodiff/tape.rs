use super::array::{Array, Real};
use super::conv::{self, ConvGeom};
use std::cell::RefCell;
use std::rc::Rc;

type BackwardFn<T> = Box<dyn Fn(&Array<T>, &[bool]) -> Vec<Option<Array<T>>>>;

struct Node<T: Real> {
    value: Rc<Array<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Define-by-run reverse-mode tape. A tape lives for one forward/backward pass.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Array<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var<'_, T>) -> Option<Array<T>> {
        self.grads.get_mut(v.id).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    fn push(
        &self,
        value: Array<T>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
    ) -> Var<'_, T> {
        self.push_rc(Rc::new(value), parents, backward)
    }

    fn push_rc(
        &self,
        value: Rc<Array<T>>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        let id = nodes.len();
        nodes.push(Node {
            value,
            requires_grad,
            parents,
            backward: if requires_grad { backward } else { None },
        });
        Var { tape: self, id }
    }

    fn leaf(&self, value: Rc<Array<T>>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        });
        Var { tape: self, id }
    }

    /// Trainable leaf; shares storage with the caller.
    pub fn param(&self, value: Rc<Array<T>>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Input that requires a gradient (e.g. for input-sensitivity checks).
    pub fn input(&self, value: Array<T>) -> Var<'_, T> {
        self.leaf(Rc::new(value), true)
    }

    pub fn constant(&self, value: Array<T>) -> Var<'_, T> {
        self.leaf(Rc::new(value), false)
    }

    /// Shared, non-trainable leaf (frozen weights).
    pub fn frozen(&self, value: Rc<Array<T>>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        let mut grads: Vec<Option<Array<T>>> = (0..n).map(|_| None).collect();
        let root_val = &nodes[root.id].value;
        assert_eq!(root_val.len(), 1, "backward root must be a scalar");
        grads[root.id] = Some(Array::full(root_val.shape(), T::one()));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(bw) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let need: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = bw(&g, &need);
            for ((&p, pg), &needed) in node.parents.iter().zip(parent_grads).zip(&need) {
                let (Some(pg), true) = (pg, needed) else {
                    continue;
                };
                match grads[p].as_mut() {
                    Some(acc) => acc.add_assign(&pg),
                    None => grads[p] = Some(pg),
                }
            }
            if id == root.id {
                grads[id] = Some(g);
            }
        }
        Gradients { grads }
    }
}

fn same<T: Real>(a: &Array<T>, b: &Array<T>, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

fn last_dim<T: Real>(a: &Array<T>) -> usize {
    *a.shape().last().expect("non-empty shape")
}

impl<'t, T: Real> Var<'t, T> {
    pub fn value(&self) -> Rc<Array<T>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    fn unary(
        self,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<'t, T> {
        let x = self.value();
        let y = Rc::new(x.map(f));
        let (xc, yc) = (x.clone(), y.clone());
        let bw: BackwardFn<T> = Box::new(move |g, _| {
            let d: Vec<T> = g
                .data()
                .iter()
                .zip(xc.data().iter().zip(yc.data()))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(Array::from_vec(g.shape(), d))]
        });
        self.tape.push_rc(y, vec![self.id], Some(bw))
    }

    pub fn relu(self) -> Self {
        self.unary(
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(self, slope: f64) -> Self {
        let s = T::of(slope);
        self.unary(
            move |x| if x > T::zero() { x } else { x * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    /// `slope * x + (1 - slope) * softplus(x)`: a smooth leaky rectifier.
    pub fn soft_leaky(self, slope: f64) -> Self {
        let s = T::of(slope);
        let one = T::one();
        self.unary(
            move |x| s * x + (one - s) * (x.max(T::zero()) + (one + (-x.abs()).exp()).ln()),
            move |x, _| s + (one - s) / (one + (-x).exp()),
        )
    }

    pub fn sigmoid(self) -> Self {
        self.unary(
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn abs(self) -> Self {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn ln(self) -> Self {
        self.unary(|x| x.ln(), |x, _| T::one() / x)
    }

    pub fn exp(self) -> Self {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn sqrt(self) -> Self {
        self.unary(|x| x.sqrt(), |_, y| T::of(0.5) / y)
    }

    pub fn square(self) -> Self {
        self.unary(|x| x * x, |x, _| x + x)
    }

    /// Elementwise clamp; gradient passes only strictly inside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Self {
        let (l, h) = (T::of(lo), T::of(hi));
        self.unary(
            move |x| x.max(l).min(h),
            move |x, _| if x > l && x < h { T::one() } else { T::zero() },
        )
    }

    pub fn clamp_min(self, lo: f64) -> Self {
        self.clamp(lo, f64::INFINITY)
    }

    pub fn affine(self, mul: f64, add: f64) -> Self {
        let (m, a) = (T::of(mul), T::of(add));
        self.unary(move |x| x * m + a, move |_, _| m)
    }

    pub fn scale(self, mul: f64) -> Self {
        self.affine(mul, 0.0)
    }

    pub fn neg(self) -> Self {
        self.affine(-1.0, 0.0)
    }

    fn binary(
        self,
        rhs: Var<'t, T>,
        f: impl Fn(T, T) -> T,
        da: impl Fn(T, T) -> T + 'static,
        db: impl Fn(T, T) -> T + 'static,
    ) -> Var<'t, T> {
        let (a, b) = (self.value(), rhs.value());
        same(&a, &b, "binary op");
        let out = a.zip(&b, f);
        let bw: BackwardFn<T> = Box::new(move |g, need| {
            let ga = need[0].then(|| {
                let d = g
                    .data()
                    .iter()
                    .zip(a.data().iter().zip(b.data()))
                    .map(|(&g, (&x, &y))| g * da(x, y))
                    .collect();
                Array::from_vec(g.shape(), d)
            });
            let gb = need[1].then(|| {
                let d = g
                    .data()
                    .iter()
                    .zip(a.data().iter().zip(b.data()))
                    .map(|(&g, (&x, &y))| g * db(x, y))
                    .collect();
                Array::from_vec(g.shape(), d)
            });
            vec![ga, gb]
        });
        self.tape.push(out, vec![self.id, rhs.id], Some(bw))
    }

    pub fn add(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a + b, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a - b, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(self, rhs: Self) -> Self {
        self.binary(
            rhs,
            |a, b| a / b,
            |_, b| T::one() / b,
            |a, b| -a / (b * b),
        )
    }

    /// Elementwise op against a rhs whose last dimension is 1 (broadcast along it).
    fn bcast_last(self, rhs: Var<'t, T>, kind: BcastOp) -> Var<'t, T> {
        let (a, b) = (self.value(), rhs.value());
        let k = last_dim(&a);
        let mut expect = a.shape().to_vec();
        *expect.last_mut().unwrap() = 1;
        assert_eq!(b.shape(), &expect[..], "broadcast rhs must be {expect:?}");
        let out: Vec<T> = a
            .data()
            .chunks(k)
            .zip(b.data())
            .flat_map(|(row, &r)| row.iter().map(move |&x| kind.apply(x, r)))
            .collect();
        let out = Array::from_vec(a.shape(), out);
        let bw: BackwardFn<T> = Box::new(move |g, need| {
            let mut ga = need[0].then(|| Vec::with_capacity(g.len()));
            let mut gb = need[1].then(|| Vec::with_capacity(b.len()));
            for ((grow, arow), &r) in g.data().chunks(k).zip(a.data().chunks(k)).zip(b.data()) {
                if let Some(ga) = ga.as_mut() {
                    ga.extend(grow.iter().zip(arow).map(|(&g, &x)| g * kind.da(x, r)));
                }
                if let Some(gb) = gb.as_mut() {
                    gb.push(grow.iter().zip(arow).map(|(&g, &x)| g * kind.db(x, r)).sum());
                }
            }
            vec![
                ga.map(|d| Array::from_vec(a.shape(), d)),
                gb.map(|d| Array::from_vec(b.shape(), d)),
            ]
        });
        self.tape.push(out, vec![self.id, rhs.id], Some(bw))
    }

    pub fn sub_bcast(self, rhs: Self) -> Self {
        self.bcast_last(rhs, BcastOp::Sub)
    }

    pub fn mul_bcast(self, rhs: Self) -> Self {
        self.bcast_last(rhs, BcastOp::Mul)
    }

    pub fn div_bcast(self, rhs: Self) -> Self {
        self.bcast_last(rhs, BcastOp::Div)
    }

    pub fn sum_all(self) -> Self {
        let x = self.value();
        let shape = x.shape().to_vec();
        let out = Array::scalar(x.sum());
        let bw: BackwardFn<T> =
            Box::new(move |g, _| vec![Some(Array::full(&shape, g.item()))]);
        self.tape.push(out, vec![self.id], Some(bw))
    }

    pub fn mean_all(self) -> Self {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum over the last dimension, keeping it with size 1.
    pub fn sum_last(self) -> Self {
        let x = self.value();
        let k = last_dim(&x);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let out = Array::from_vec(&shape, x.data().chunks(k).map(|r| r.iter().copied().sum()).collect());
        let in_shape = x.shape().to_vec();
        let bw: BackwardFn<T> = Box::new(move |g, _| {
            let d = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, k)).collect();
            vec![Some(Array::from_vec(&in_shape, d))]
        });
        self.tape.push(out, vec![self.id], Some(bw))
    }

    pub fn mean_last(self) -> Self {
        let k = last_dim(&self.value()) as f64;
        self.sum_last().scale(1.0 / k)
    }

    pub fn reshape(self, shape: &[usize]) -> Self {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let out = (*x).clone().reshape(shape);
        let bw: BackwardFn<T> =
            Box::new(move |g, _| vec![Some(g.clone().reshape(&in_shape))]);
        self.tape.push(out, vec![self.id], Some(bw))
    }

    /// `[M, K] x [K, N]`.
    pub fn matmul(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        assert!(a.shape().len() == 2 && b.shape().len() == 2, "matmul needs 2-d operands");
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        assert_eq!(b.shape()[0], k, "matmul inner dimension mismatch");
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, a.data(), false, b.data(), false, T::zero(), &mut out);
        let bw: BackwardFn<T> = Box::new(move |g, need| {
            let ga = need[0].then(|| {
                let mut d = vec![T::zero(); m * k];
                T::gemm(m, n, k, g.data(), false, b.data(), true, T::zero(), &mut d);
                Array::from_vec(&[m, k], d)
            });
            let gb = need[1].then(|| {
                let mut d = vec![T::zero(); k * n];
                T::gemm(k, m, n, a.data(), true, g.data(), false, T::zero(), &mut d);
                Array::from_vec(&[k, n], d)
            });
            vec![ga, gb]
        });
        self.tape
            .push(Array::from_vec(&[m, n], out), vec![self.id, rhs.id], Some(bw))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Self {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert!(start + len <= shape[axis], "narrow out of range");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let bw: BackwardFn<T> = Box::new(move |g, _| {
            let mut d = vec![T::zero(); outer * full * inner];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                d[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Array::from_vec(&shape, d))]
        });
        self.tape
            .push(Array::from_vec(&out_shape, data), vec![self.id], Some(bw))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Self], axis: usize) -> Self {
        assert!(!parts.is_empty(), "concat of nothing");
        let tape = parts[0].tape;
        let vals: Vec<Rc<Array<T>>> = parts.iter().map(|p| p.value()).collect();
        let base = vals[0].shape().to_vec();
        for v in &vals {
            assert_eq!(v.shape().len(), base.len(), "concat rank mismatch");
            for (d, (&a, &b)) in v.shape().iter().zip(&base).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch on axis {d}");
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let sizes: Vec<usize> = vals.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &s) in vals.iter().zip(&sizes) {
                data.extend_from_slice(&v.data()[o * s * inner..(o + 1) * s * inner]);
            }
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let shapes: Vec<Vec<usize>> = vals.iter().map(|v| v.shape().to_vec()).collect();
        let bw: BackwardFn<T> = Box::new(move |g, need| {
            let mut out: Vec<Option<Vec<T>>> = need
                .iter()
                .zip(&sizes)
                .map(|(&n, &s)| n.then(|| Vec::with_capacity(outer * s * inner)))
                .collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (buf, &s) in out.iter_mut().zip(&sizes) {
                    if let Some(buf) = buf.as_mut() {
                        buf.extend_from_slice(&g.data()[off..off + s * inner]);
                    }
                    off += s * inner;
                }
            }
            out.into_iter()
                .zip(&shapes)
                .map(|(b, s)| b.map(|d| Array::from_vec(s, d)))
                .collect()
        });
        let ids = parts.iter().map(|p| p.id).collect();
        tape.push(Array::from_vec(&out_shape, data), ids, Some(bw))
    }

    /// 2-d convolution, NCHW input and `[O, C, k, k]` kernel.
    pub fn conv2d(self, kernel: Self, bias: Option<Self>, stride: usize, pad: usize) -> Self {
        let (x, w) = (self.value(), kernel.value());
        let geom = ConvGeom::new(x.shape(), w.shape(), stride, pad);
        let b = bias.map(|b| b.value());
        if let Some(b) = &b {
            assert_eq!(b.shape(), &[geom.o], "conv2d bias shape");
        }
        let (out, cols) = conv::forward(&geom, &x, &w, b.as_deref());
        let has_bias = b.is_some();
        let bw: BackwardFn<T> = Box::new(move |g, need| {
            let grads = conv::backward(
                &geom,
                &cols,
                &w,
                g,
                (need[0], need[1], has_bias && need[2]),
            );
            let mut v = vec![grads.x, grads.w];
            if has_bias {
                v.push(grads.b);
            }
            v
        });
        let mut parents = vec![self.id, kernel.id];
        if let Some(b) = bias {
            parents.push(b.id);
        }
        self.tape.push(out, parents, Some(bw))
    }

    /// Nearest-neighbour 2x upsampling of NCHW.
    pub fn upsample2x(self) -> Self {
        let x = self.value();
        let s = x.shape().to_vec();
        let out_shape = [s[0], s[1], 2 * s[2], 2 * s[3]];
        assert_eq!(s.len(), 4, "upsample2x expects NCHW");
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let mut out = vec![T::zero(); planes * 4 * h * w];
        for p in 0..planes {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(p * 2 * h + y) * 2 * w + xx] = x.data()[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        let bw: BackwardFn<T> = Box::new(move |g, _| {
            let mut d = vec![T::zero(); planes * h * w];
            for p in 0..planes {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        let i = (p * h + y / 2) * w + xx / 2;
                        d[i] = d[i] + g.data()[(p * 2 * h + y) * 2 * w + xx];
                    }
                }
            }
            vec![Some(Array::from_vec(&s, d))]
        });
        self.tape.push(
            Array::from_vec(&out_shape, out),
            vec![self.id],
            Some(bw),
        )
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(self) -> Self {
        let s = self.shape();
        assert_eq!(s.len(), 4, "global_avg_pool expects NCHW");
        self.reshape(&[s[0] * s[1], s[2] * s[3]])
            .mean_last()
            .reshape(&[s[0], s[1]])
    }

    /// `[N, C] -> [N, C, h, w]` by replication.
    pub fn broadcast_spatial(self, h: usize, w: usize) -> Self {
        let x = self.value();
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 2, "broadcast_spatial expects [N, C]");
        let hw = h * w;
        let out: Vec<T> = x
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, hw))
            .collect();
        let bw: BackwardFn<T> = Box::new(move |g, _| {
            let d = g.data().chunks(hw).map(|c| c.iter().copied().sum()).collect();
            vec![Some(Array::from_vec(&s, d))]
        });
        self.tape.push(
            Array::from_vec(&[x.shape()[0], x.shape()[1], h, w], out),
            vec![self.id],
            Some(bw),
        )
    }

    /// Adds a `[C]` bias to the last dimension of `[N, C]`.
    pub fn add_row(self, bias: Self) -> Self {
        let (x, b) = (self.value(), bias.value());
        let c = last_dim(&x);
        assert_eq!(b.shape(), &[c], "row bias shape");
        let out: Vec<T> = x
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(b.data()).map(|(&a, &b)| a + b).collect::<Vec<_>>())
            .collect();
        let bw: BackwardFn<T> = Box::new(move |g, need| {
            let gb = need[1].then(|| {
                let mut d = vec![T::zero(); c];
                for row in g.data().chunks(c) {
                    for (acc, &v) in d.iter_mut().zip(row) {
                        *acc = *acc + v;
                    }
                }
                Array::from_vec(&[c], d)
            });
            vec![Some(g.clone()), gb]
        });
        self.tape
            .push(Array::from_vec(x.shape(), out), vec![self.id, bias.id], Some(bw))
    }

    /// Softmax over the last dimension (max-subtracted).
    pub fn softmax_last(self) -> Self {
        let x = self.value();
        let k = last_dim(&x);
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks(k) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
            let z: T = e.iter().copied().sum();
            out.extend(e.into_iter().map(|v| v / z));
        }
        let y = Array::from_vec(x.shape(), out);
        let yc = y.clone();
        let bw: BackwardFn<T> = Box::new(move |g, _| {
            let mut d = Vec::with_capacity(g.len());
            for (grow, yrow) in g.data().chunks(k).zip(yc.data().chunks(k)) {
                let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                d.extend(grow.iter().zip(yrow).map(|(&gi, &yi)| yi * (gi - dot)));
            }
            vec![Some(Array::from_vec(yc.shape(), d))]
        });
        self.tape.push(y, vec![self.id], Some(bw))
    }
}

#[derive(Clone, Copy)]
enum BcastOp {
    Sub,
    Mul,
    Div,
}

impl BcastOp {
    fn apply<T: Real>(self, x: T, r: T) -> T {
        match self {
            Self::Sub => x - r,
            Self::Mul => x * r,
            Self::Div => x / r,
        }
    }

    fn da<T: Real>(self, _x: T, r: T) -> T {
        match self {
            Self::Sub => T::one(),
            Self::Mul => r,
            Self::Div => T::one() / r,
        }
    }

    fn db<T: Real>(self, x: T, r: T) -> T {
        match self {
            Self::Sub => -T::one(),
            Self::Mul => x,
            Self::Div => -x / (r * r),
        }
    }
}
