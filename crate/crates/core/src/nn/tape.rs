//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every operation appends a node holding the forward value and a closure
//! that scatters the output gradient back into its parents. Parents always
//! have smaller node ids, so the backward sweep is a single reverse pass.

use super::scalar::Scalar;
use super::tensor::Tensor;
use rand::Rng;

/// Handle to a tape node.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Scalar> Node<F> {
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.data.len() / cols.max(1), cols)
            }
        }
    }
}

/// Backward step: `(nodes, grads_of_lower_ids, grad_of_this_node)`.
pub(crate) type BackFn<F> = Box<dyn Fn(&[Node<F>], &mut [Vec<F>], &[F])>;

/// Gradients produced by [`Tape::backward`], indexable by `Var`.
pub struct Gradients<F> {
    grads: Vec<Vec<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> &[F] {
        &self.grads[v.0]
    }

    pub fn tensor(&self, v: Var, shape: &[usize]) -> Tensor<F> {
        Tensor::new(shape.to_vec(), self.grads[v.0].clone())
    }
}

pub struct Tape<F: Scalar> {
    pub(crate) nodes: Vec<Node<F>>,
    backs: Vec<Option<BackFn<F>>>,
    fault: Option<String>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), backs: Vec::new(), fault: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First non-finite value produced by any forward op, if one occurred.
    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    pub(crate) fn push(&mut self, op: &str, shape: Vec<usize>, data: Vec<F>, back: Option<BackFn<F>>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if self.fault.is_none() && !data.iter().all(|v| v.is_finite()) {
            self.fault = Some(format!("non-finite value produced by op `{op}`"));
        }
        self.nodes.push(Node { shape, data });
        self.backs.push(back);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        let shape = t.shape().to_vec();
        self.push("leaf", shape, t.into_data(), None)
    }

    /// Alias for [`Tape::leaf`]; constants simply never have their gradient read.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.leaf(t)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[F] {
        &self.nodes[v.0].data
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].data.len()
    }

    pub fn value_tensor(&self, v: Var) -> Tensor<F> {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
    }

    pub fn scalar_value(&self, v: Var) -> F {
        assert_eq!(self.numel(v), 1, "expected scalar node");
        self.nodes[v.0].data[0]
    }

    fn rc(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].rows_cols()
    }

    /// Reverse sweep from `loss` (must be scalar). Gradients of every node with
    /// id <= loss are accumulated; nodes created afterwards are ignored.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        assert_eq!(self.numel(loss), 1, "backward seed must be scalar");
        let mut grads: Vec<Vec<F>> = self
            .nodes
            .iter()
            .map(|n| vec![F::zero(); n.data.len()])
            .collect();
        grads[loss.0][0] = F::one();
        for id in (0..=loss.0).rev() {
            if let Some(back) = &self.backs[id] {
                let (lower, rest) = grads.split_at_mut(id);
                back(&self.nodes, lower, &rest[0]);
            }
        }
        Gradients { grads }
    }

    // ---- element-wise ----------------------------------------------------

    fn unary(&mut self, op: &'static str, a: Var, fwd: impl Fn(F) -> F, dfd: impl Fn(F, F) -> F + 'static) -> Var {
        let node = &self.nodes[a.0];
        let shape = node.shape.clone();
        let data: Vec<F> = node.data.iter().map(|&x| fwd(x)).collect();
        let out = data.clone();
        let ai = a.0;
        let back: BackFn<F> = Box::new(move |nodes, lower, g| {
            let x = &nodes[ai].data;
            let ga = &mut lower[ai];
            for i in 0..g.len() {
                ga[i] = ga[i] + g[i] * dfd(x[i], out[i]);
            }
        });
        self.push(op, shape, data, Some(back))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(
            "sigmoid",
            a,
            |x| F::one() / (F::one() + (-x).exp()),
            |_, y| y * (F::one() - y),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary("tanh", a, |x| x.tanh(), |_, y| F::one() - y * y)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(
            "relu",
            a,
            |x| if x > F::zero() { x } else { F::zero() },
            |x, _| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    /// tanh-approximation GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = F::from_double(0.797_884_560_802_865_4); // sqrt(2/pi)
        let k = F::from_double(0.044715);
        let half = F::from_double(0.5);
        let three = F::from_double(3.0);
        self.unary(
            "gelu",
            a,
            move |x| {
                let u = c * (x + k * x * x * x);
                half * x * (F::one() + u.tanh())
            },
            move |x, _| {
                let u = c * (x + k * x * x * x);
                let t = u.tanh();
                half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + three * k * x * x)
            },
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary("exp", a, |x| x.exp(), |_, y| y)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary("log", a, |x| x.ln(), |x, _| F::one() / x)
    }

    /// x*ln(x) with the 0*log(0) = 0 convention (gradient defined as 0 there).
    pub fn plogp(&mut self, a: Var) -> Var {
        self.unary(
            "plogp",
            a,
            |x| if x > F::zero() { x * x.ln() } else { F::zero() },
            |x, _| if x > F::zero() { x.ln() + F::one() } else { F::zero() },
        )
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        self.unary("scale", a, move |x| c * x, move |_, _| c)
    }

    // ---- binary ----------------------------------------------------------

    /// Element-wise add; `b` may also be a vector broadcast across rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = self.rc(a);
        let (rb, cb) = self.rc(b);
        let shape = self.nodes[a.0].shape.clone();
        if ra == rb && ca == cb {
            let data: Vec<F> = self.nodes[a.0]
                .data
                .iter()
                .zip(&self.nodes[b.0].data)
                .map(|(&x, &y)| x + y)
                .collect();
            let (ai, bi) = (a.0, b.0);
            let back: BackFn<F> = Box::new(move |_, lower, g| {
                for i in 0..g.len() {
                    lower[ai][i] = lower[ai][i] + g[i];
                }
                for i in 0..g.len() {
                    lower[bi][i] = lower[bi][i] + g[i];
                }
            });
            self.push("add", shape, data, Some(back))
        } else if rb == 1 && cb == ca {
            // bias broadcast over rows
            let mut data = self.nodes[a.0].data.clone();
            let bv = &self.nodes[b.0].data;
            for r in 0..ra {
                for c in 0..ca {
                    data[r * ca + c] = data[r * ca + c] + bv[c];
                }
            }
            let (ai, bi) = (a.0, b.0);
            let back: BackFn<F> = Box::new(move |_, lower, g| {
                for i in 0..g.len() {
                    lower[ai][i] = lower[ai][i] + g[i];
                }
                let gb = &mut lower[bi];
                for r in 0..ra {
                    for c in 0..ca {
                        gb[c] = gb[c] + g[r * ca + c];
                    }
                }
            });
            self.push("add", shape, data, Some(back))
        } else {
            panic!("add: shape mismatch {:?} vs {:?}", self.shape(a), self.shape(b));
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let neg = self.scale(b, -F::one());
        self.add(a, neg)
    }

    /// Element-wise product of same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.numel(a), self.numel(b), "mul: shape mismatch");
        let shape = self.nodes[a.0].shape.clone();
        let data: Vec<F> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let (ai, bi) = (a.0, b.0);
        let back: BackFn<F> = Box::new(move |nodes, lower, g| {
            for i in 0..g.len() {
                let xb = nodes[bi].data[i];
                lower[ai][i] = lower[ai][i] + g[i] * xb;
            }
            for i in 0..g.len() {
                let xa = nodes[ai].data[i];
                lower[bi][i] = lower[bi][i] + g[i] * xa;
            }
        });
        self.push("mul", shape, data, Some(back))
    }

    /// Matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, ka) = self.rc(a);
        let (kb, n) = self.rc(b);
        assert_eq!(ka, kb, "matmul: inner dims {ka} vs {kb}");
        let mut data = vec![F::zero(); m * n];
        F::gemm(m, ka, n, F::one(), &self.nodes[a.0].data, &self.nodes[b.0].data, F::zero(), &mut data);
        let (ai, bi) = (a.0, b.0);
        let k = ka;
        let back: BackFn<F> = Box::new(move |nodes, lower, g| {
            // dA = G . B^T  ([m,n] x [n,k])
            F::gemm_strided(
                m, n, k, F::one(), g, n as isize, 1,
                &nodes[bi].data, 1, n as isize,
                F::one(), &mut lower[ai], k as isize, 1,
            );
            // dB = A^T . G  ([k,m] x [m,n])
            F::gemm_strided(
                k, m, n, F::one(), &nodes[ai].data, 1, k as isize,
                g, n as isize, 1,
                F::one(), &mut lower[bi], n as isize, 1,
            );
        });
        self.push("matmul", vec![m, n], data, Some(back))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.rc(a);
        let src = &self.nodes[a.0].data;
        let mut data = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let ai = a.0;
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            let ga = &mut lower[ai];
            for i in 0..r {
                for j in 0..c {
                    ga[i * c + j] = ga[i * c + j] + g[j * r + i];
                }
            }
        });
        self.push("transpose", vec![c, r], data, Some(back))
    }

    /// Same data, new shape (must preserve element count).
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        assert_eq!(shape.iter().product::<usize>(), self.numel(a), "reshape: numel mismatch");
        let data = self.nodes[a.0].data.clone();
        let ai = a.0;
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            let ga = &mut lower[ai];
            for i in 0..g.len() {
                ga[i] = ga[i] + g[i];
            }
        });
        self.push("reshape", shape, data, Some(back))
    }

    // ---- softmax family ---------------------------------------------------

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.rc(a);
        let mut data = self.nodes[a.0].data.clone();
        for row in data.chunks_mut(c) {
            let mx = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let y = data.clone();
        let ai = a.0;
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            let ga = &mut lower[ai];
            for i in 0..r {
                let yr = &y[i * c..(i + 1) * c];
                let gr = &g[i * c..(i + 1) * c];
                let dot: F = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                for j in 0..c {
                    ga[i * c + j] = ga[i * c + j] + yr[j] * (gr[j] - dot);
                }
            }
        });
        self.push("softmax", shape, data, Some(back))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.rc(a);
        let mut data = self.nodes[a.0].data.clone();
        for row in data.chunks_mut(c) {
            let mx = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&v| (v - mx).exp()).sum::<F>().ln() + mx;
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let y = data.clone();
        let ai = a.0;
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            let ga = &mut lower[ai];
            for i in 0..r {
                let yr = &y[i * c..(i + 1) * c];
                let gr = &g[i * c..(i + 1) * c];
                let gsum: F = gr.iter().cloned().sum();
                for j in 0..c {
                    ga[i * c + j] = ga[i * c + j] + gr[j] - yr[j].exp() * gsum;
                }
            }
        });
        self.push("log_softmax", shape, data, Some(back))
    }

    /// Forward: one-hot of the per-row argmax. Backward: identity
    /// (straight-through estimator through the soft probabilities).
    pub fn straight_through_onehot_rows(&mut self, probs: Var) -> Var {
        let (r, c) = self.rc(probs);
        let src = &self.nodes[probs.0].data;
        let mut data = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            data[i * c + best] = F::one();
        }
        let shape = self.nodes[probs.0].shape.clone();
        let pi = probs.0;
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            let gp = &mut lower[pi];
            for i in 0..g.len() {
                gp[i] = gp[i] + g[i];
            }
        });
        self.push("straight_through", shape, data, Some(back))
    }

    // ---- dropout -----------------------------------------------------------

    /// Inverted dropout: keeps with probability `1-rate` and rescales by the
    /// keep probability. `rate == 0` is the identity.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut impl Rng) -> Var {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        if rate == 0.0 {
            return self.reshape(a, self.nodes[a.0].shape.clone());
        }
        let keep = F::from_double(1.0 - rate);
        let mask: Vec<F> = (0..self.numel(a))
            .map(|_| if rng.random::<f64>() < rate { F::zero() } else { F::one() / keep })
            .collect();
        let data: Vec<F> = self.nodes[a.0]
            .data
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ai = a.0;
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            let ga = &mut lower[ai];
            for i in 0..g.len() {
                ga[i] = ga[i] + g[i] * mask[i];
            }
        });
        self.push("dropout", shape, data, Some(back))
    }

    // ---- slicing / concatenation -------------------------------------------

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.rc(a);
        assert!(start + len <= c, "slice_cols out of range");
        let src = &self.nodes[a.0].data;
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let ai = a.0;
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            let ga = &mut lower[ai];
            for i in 0..r {
                for j in 0..len {
                    ga[i * c + start + j] = ga[i * c + start + j] + g[i * len + j];
                }
            }
        });
        self.push("slice_cols", vec![r, len], data, Some(back))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.rc(a);
        assert!(start + len <= r, "slice_rows out of range");
        let data = self.nodes[a.0].data[start * c..(start + len) * c].to_vec();
        let ai = a.0;
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            let ga = &mut lower[ai];
            for i in 0..g.len() {
                ga[start * c + i] = ga[start * c + i] + g[i];
            }
        });
        self.push("slice_rows", vec![len, c], data, Some(back))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let (r, c) = self.rc(a);
        let src = &self.nodes[a.0].data;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            assert!(i < r, "gather_rows index {i} out of range {r}");
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let ai = a.0;
        let n = idx.len();
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            let ga = &mut lower[ai];
            for (j, &i) in idx.iter().enumerate() {
                for k in 0..c {
                    ga[i * c + k] = ga[i * c + k] + g[j * c + k];
                }
            }
        });
        self.push("gather_rows", vec![n, c], data, Some(back))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = self.rc(a);
        let (rb, cb) = self.rc(b);
        assert_eq!(ra, rb, "concat_cols: row mismatch");
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(&self.nodes[a.0].data[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&self.nodes[b.0].data[i * cb..(i + 1) * cb]);
        }
        let (ai, bi) = (a.0, b.0);
        let cc = ca + cb;
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            for i in 0..ra {
                for j in 0..ca {
                    lower[ai][i * ca + j] = lower[ai][i * ca + j] + g[i * cc + j];
                }
            }
            for i in 0..ra {
                for j in 0..cb {
                    lower[bi][i * cb + j] = lower[bi][i * cb + j] + g[i * cc + ca + j];
                }
            }
        });
        self.push("concat_cols", vec![ra, cc], data, Some(back))
    }

    /// Stack parts vertically; every part must have the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: empty input");
        let (_, c) = self.rc(parts[0]);
        let mut data = Vec::new();
        let mut meta = Vec::with_capacity(parts.len());
        for &p in parts {
            let (rp, cp) = self.rc(p);
            assert_eq!(cp, c, "concat_rows: col mismatch");
            meta.push((p.0, rp));
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let rows: usize = meta.iter().map(|&(_, r)| r).sum();
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            let mut off = 0;
            for &(pi, rp) in &meta {
                let n = rp * c;
                let gp = &mut lower[pi];
                for i in 0..n {
                    gp[i] = gp[i] + g[off + i];
                }
                off += n;
            }
        });
        self.push("concat_rows", vec![rows, c], data, Some(back))
    }

    /// Extract a single element as a scalar node.
    pub fn pick(&mut self, a: Var, index: usize) -> Var {
        assert!(index < self.numel(a), "pick: index out of range");
        let v = self.nodes[a.0].data[index];
        let ai = a.0;
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            lower[ai][index] = lower[ai][index] + g[0];
        });
        self.push("pick", vec![1], vec![v], Some(back))
    }

    // ---- reductions ---------------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: F = self.nodes[a.0].data.iter().cloned().sum();
        let ai = a.0;
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            let ga = &mut lower[ai];
            for v in ga.iter_mut() {
                *v = *v + g[0];
            }
        });
        self.push("sum_all", vec![1], vec![s], Some(back))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.numel(a);
        let s: F = self.nodes[a.0].data.iter().cloned().sum();
        let inv = F::one() / F::from_double(n as f64);
        let ai = a.0;
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            let ga = &mut lower[ai];
            let gv = g[0] * inv;
            for v in ga.iter_mut() {
                *v = *v + gv;
            }
        });
        self.push("mean_all", vec![1], vec![s * inv], Some(back))
    }

    /// Column-wise mean over rows: `[r,c] -> [c]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.rc(a);
        let inv = F::one() / F::from_double(r as f64);
        let src = &self.nodes[a.0].data;
        let mut data = vec![F::zero(); c];
        for i in 0..r {
            for j in 0..c {
                data[j] = data[j] + src[i * c + j];
            }
        }
        for v in &mut data {
            *v = *v * inv;
        }
        let ai = a.0;
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            let ga = &mut lower[ai];
            for i in 0..r {
                for j in 0..c {
                    ga[i * c + j] = ga[i * c + j] + g[j] * inv;
                }
            }
        });
        self.push("mean_rows", vec![c], data, Some(back))
    }

    /// Euclidean norm of the whole tensor as a scalar.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let sq: F = self.nodes[a.0].data.iter().map(|&x| x * x).sum();
        let nrm = sq.sqrt();
        let eps = F::from_double(1e-12);
        let ai = a.0;
        let back: BackFn<F> = Box::new(move |nodes, lower, g| {
            let x = &nodes[ai].data;
            let ga = &mut lower[ai];
            let denom = nrm.max(eps);
            for i in 0..x.len() {
                ga[i] = ga[i] + g[0] * x[i] / denom;
            }
        });
        self.push("l2_norm", vec![1], vec![nrm], Some(back))
    }

    /// Cosine similarity between every row of `m` and the vector `v`: `[r]`.
    pub fn cosine_rows(&mut self, m: Var, v: Var) -> Var {
        let (r, d) = self.rc(m);
        assert_eq!(self.numel(v), d, "cosine_rows: dim mismatch");
        let eps = F::from_double(1e-12);
        let mv = &self.nodes[m.0].data;
        let vv = &self.nodes[v.0].data;
        let nv = vv.iter().map(|&x| x * x).sum::<F>().sqrt().max(eps);
        let mut norms = Vec::with_capacity(r);
        let mut data = Vec::with_capacity(r);
        for i in 0..r {
            let row = &mv[i * d..(i + 1) * d];
            let nm = row.iter().map(|&x| x * x).sum::<F>().sqrt().max(eps);
            let dot: F = row.iter().zip(vv).map(|(&a, &b)| a * b).sum();
            norms.push(nm);
            data.push(dot / (nm * nv));
        }
        let cos = data.clone();
        let (mi, vi) = (m.0, v.0);
        let back: BackFn<F> = Box::new(move |nodes, lower, g| {
            let mv = &nodes[mi].data;
            let vv = &nodes[vi].data;
            for i in 0..r {
                let gi = g[i];
                if gi == F::zero() {
                    continue;
                }
                let row = &mv[i * d..(i + 1) * d];
                let nm = norms[i];
                let ci = cos[i];
                {
                    let gm = &mut lower[mi];
                    for j in 0..d {
                        gm[i * d + j] = gm[i * d + j] + gi * (vv[j] / (nm * nv) - ci * row[j] / (nm * nm));
                    }
                }
                {
                    let gv = &mut lower[vi];
                    for j in 0..d {
                        gv[j] = gv[j] + gi * (row[j] / (nm * nv) - ci * vv[j] / (nv * nv));
                    }
                }
            }
        });
        self.push("cosine_rows", vec![r], data, Some(back))
    }

    // ---- layer norm -----------------------------------------------------------

    /// Row-wise layer normalization with learned gain/bias over the last axis.
    pub fn layer_norm_rows(&mut self, a: Var, gamma: Var, beta: Var) -> Var {
        let (r, c) = self.rc(a);
        assert_eq!(self.numel(gamma), c, "layer_norm: gamma dim");
        assert_eq!(self.numel(beta), c, "layer_norm: beta dim");
        let eps = F::from_double(1e-5);
        let src = &self.nodes[a.0].data;
        let gm = &self.nodes[gamma.0].data;
        let bt = &self.nodes[beta.0].data;
        let inv_c = F::one() / F::from_double(c as f64);
        let mut xhat = vec![F::zero(); r * c];
        let mut inv_std = vec![F::zero(); r];
        let mut data = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean: F = row.iter().cloned().sum::<F>() * inv_c;
            let var: F = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() * inv_c;
            let istd = F::one() / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..c {
                let xh = (row[j] - mean) * istd;
                xhat[i * c + j] = xh;
                data[i * c + j] = gm[j] * xh + bt[j];
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let (ai, gi, bi) = (a.0, gamma.0, beta.0);
        let back: BackFn<F> = Box::new(move |nodes, lower, g| {
            let gm = &nodes[gi].data;
            for i in 0..r {
                let gr = &g[i * c..(i + 1) * c];
                let xh = &xhat[i * c..(i + 1) * c];
                let istd = inv_std[i];
                // dxhat = g * gamma
                let mut s1 = F::zero();
                let mut s2 = F::zero();
                for j in 0..c {
                    let dxh = gr[j] * gm[j];
                    s1 = s1 + dxh;
                    s2 = s2 + dxh * xh[j];
                }
                let ga = &mut lower[ai];
                for j in 0..c {
                    let dxh = gr[j] * gm[j];
                    ga[i * c + j] = ga[i * c + j] + istd * (dxh - inv_c * s1 - inv_c * xh[j] * s2);
                }
            }
            {
                let gg = &mut lower[gi];
                for i in 0..r {
                    for j in 0..c {
                        gg[j] = gg[j] + g[i * c + j] * xhat[i * c + j];
                    }
                }
            }
            {
                let gb = &mut lower[bi];
                for i in 0..r {
                    for j in 0..c {
                        gb[j] = gb[j] + g[i * c + j];
                    }
                }
            }
        });
        self.push("layer_norm", shape, data, Some(back))
    }

    // ---- convolutions -----------------------------------------------------------

    /// 1-D strided convolution without padding.
    /// `x: [c_in, len]`, `w: [c_out, c_in, k]`, `b: [c_out]` -> `[c_out, out_len]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 2, "conv1d: x must be [c_in, len]");
        assert_eq!(ws.len(), 3, "conv1d: w must be [c_out, c_in, k]");
        let (c_in, len) = (xs[0], xs[1]);
        let (c_out, w_cin, k) = (ws[0], ws[1], ws[2]);
        assert_eq!(c_in, w_cin, "conv1d: channel mismatch");
        assert_eq!(self.numel(b), c_out, "conv1d: bias dim");
        assert!(len >= k, "conv1d: input shorter than kernel");
        let out_len = (len - k) / stride + 1;

        // im2col: col[(c*k + j), t] = x[c, t*stride + j]
        let build_col = move |xd: &[F]| -> Vec<F> {
            let mut col = vec![F::zero(); c_in * k * out_len];
            for c in 0..c_in {
                for j in 0..k {
                    let row = &mut col[(c * k + j) * out_len..(c * k + j + 1) * out_len];
                    for (t, item) in row.iter_mut().enumerate() {
                        *item = xd[c * len + t * stride + j];
                    }
                }
            }
            col
        };
        let col = build_col(&self.nodes[x.0].data);
        let mut data = vec![F::zero(); c_out * out_len];
        F::gemm(c_out, c_in * k, out_len, F::one(), &self.nodes[w.0].data, &col, F::zero(), &mut data);
        let bd = &self.nodes[b.0].data;
        for o in 0..c_out {
            for t in 0..out_len {
                data[o * out_len + t] = data[o * out_len + t] + bd[o];
            }
        }
        let (xi, wi, bi) = (x.0, w.0, b.0);
        let back: BackFn<F> = Box::new(move |nodes, lower, g| {
            let col = build_col(&nodes[xi].data);
            // dW = G . col^T  ([c_out, out_len] x [out_len, c_in*k])
            F::gemm_strided(
                c_out, out_len, c_in * k, F::one(),
                g, out_len as isize, 1,
                &col, 1, out_len as isize,
                F::one(), &mut lower[wi], (c_in * k) as isize, 1,
            );
            // dcol = W^T . G  ([c_in*k, c_out] x [c_out, out_len])
            let mut dcol = vec![F::zero(); c_in * k * out_len];
            F::gemm_strided(
                c_in * k, c_out, out_len, F::one(),
                &nodes[wi].data, 1, (c_in * k) as isize,
                g, out_len as isize, 1,
                F::zero(), &mut dcol, out_len as isize, 1,
            );
            {
                let gx = &mut lower[xi];
                for c in 0..c_in {
                    for j in 0..k {
                        let row = &dcol[(c * k + j) * out_len..(c * k + j + 1) * out_len];
                        for (t, &v) in row.iter().enumerate() {
                            gx[c * len + t * stride + j] = gx[c * len + t * stride + j] + v;
                        }
                    }
                }
            }
            {
                let gb = &mut lower[bi];
                for o in 0..c_out {
                    for t in 0..out_len {
                        gb[o] = gb[o] + g[o * out_len + t];
                    }
                }
            }
        });
        self.push("conv1d", vec![c_out, out_len], data, Some(back))
    }

    /// Depthwise 1-D convolution with zero padding that preserves length.
    /// `x: [c, len]`, `w: [c, k]` (k odd), `b: [c]` -> `[c, len]`.
    pub fn depthwise_conv1d_same(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 2, "depthwise_conv1d: x must be [c, len]");
        assert_eq!(ws.len(), 2, "depthwise_conv1d: w must be [c, k]");
        let (cch, len) = (xs[0], xs[1]);
        let k = ws[1];
        assert_eq!(ws[0], cch, "depthwise_conv1d: channel mismatch");
        assert_eq!(k % 2, 1, "depthwise_conv1d: kernel must be odd");
        assert_eq!(self.numel(b), cch, "depthwise_conv1d: bias dim");
        let pad = k / 2;
        let xd = &self.nodes[x.0].data;
        let wd = &self.nodes[w.0].data;
        let bd = &self.nodes[b.0].data;
        let mut data = vec![F::zero(); cch * len];
        for c in 0..cch {
            for l in 0..len {
                let mut acc = bd[c];
                for j in 0..k {
                    let src = l + j;
                    if src >= pad && src - pad < len {
                        acc = acc + wd[c * k + j] * xd[c * len + src - pad];
                    }
                }
                data[c * len + l] = acc;
            }
        }
        let (xi, wi, bi) = (x.0, w.0, b.0);
        let back: BackFn<F> = Box::new(move |nodes, lower, g| {
            let xd = &nodes[xi].data;
            let wd = &nodes[wi].data;
            for c in 0..cch {
                for l in 0..len {
                    let gv = g[c * len + l];
                    if gv == F::zero() {
                        continue;
                    }
                    for j in 0..k {
                        let src = l + j;
                        if src >= pad && src - pad < len {
                            lower[wi][c * k + j] = lower[wi][c * k + j] + gv * xd[c * len + src - pad];
                            lower[xi][c * len + src - pad] = lower[xi][c * len + src - pad] + gv * wd[c * k + j];
                        }
                    }
                    lower[bi][c] = lower[bi][c] + gv;
                }
            }
        });
        self.push("depthwise_conv1d", vec![cch, len], data, Some(back))
    }

    // ---- sequence pooling -----------------------------------------------------

    /// Mean over valid frames of a time-major sequence batch.
    /// `x: [t_max*b, c]` with row `t*b + i`; `lens[i]` frames of sequence `i`
    /// are valid. Output `[b, c]`.
    pub fn masked_mean_time(&mut self, x: Var, t_max: usize, batch: usize, lens: Vec<usize>) -> Var {
        let (r, c) = self.rc(x);
        assert_eq!(r, t_max * batch, "masked_mean_time: row count");
        assert_eq!(lens.len(), batch, "masked_mean_time: lens count");
        assert!(lens.iter().all(|&l| l >= 1 && l <= t_max), "masked_mean_time: invalid lens");
        let src = &self.nodes[x.0].data;
        let mut data = vec![F::zero(); batch * c];
        for (i, &l) in lens.iter().enumerate() {
            let inv = F::one() / F::from_double(l as f64);
            for t in 0..l {
                let row = &src[(t * batch + i) * c..(t * batch + i + 1) * c];
                for j in 0..c {
                    data[i * c + j] = data[i * c + j] + row[j] * inv;
                }
            }
        }
        let xi = x.0;
        let back: BackFn<F> = Box::new(move |_, lower, g| {
            let gx = &mut lower[xi];
            for (i, &l) in lens.iter().enumerate() {
                let inv = F::one() / F::from_double(l as f64);
                for t in 0..l {
                    for j in 0..c {
                        gx[(t * batch + i) * c + j] = gx[(t * batch + i) * c + j] + g[i * c + j] * inv;
                    }
                }
            }
        });
        self.push("masked_mean_time", vec![batch, c], data, Some(back))
    }

    // ---- losses -----------------------------------------------------------------

    /// Mean binary cross-entropy over logits, numerically stable. An optional
    /// positive-class weight scales the per-item loss of positive targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[F], pos_weight: Option<F>) -> Var {
        let n = self.numel(logits);
        assert_eq!(n, targets.len(), "bce_with_logits: target count");
        let zd = &self.nodes[logits.0].data;
        let pw = pos_weight.unwrap_or_else(F::one);
        let inv_n = F::one() / F::from_double(n as f64);
        let mut loss = F::zero();
        for i in 0..n {
            let z = zd[i];
            let y = targets[i];
            // softplus(z) - z*y, stable for large |z|
            let sp = z.max(F::zero()) + (F::one() + (-z.abs()).exp()).ln();
            let w = F::one() + (pw - F::one()) * y;
            loss = loss + w * (sp - z * y);
        }
        loss = loss * inv_n;
        let zi = logits.0;
        let tgt = targets.to_vec();
        let back: BackFn<F> = Box::new(move |nodes, lower, g| {
            let zd = &nodes[zi].data;
            let gz = &mut lower[zi];
            for i in 0..zd.len() {
                let p = F::one() / (F::one() + (-zd[i]).exp());
                let w = F::one() + (pw - F::one()) * tgt[i];
                gz[i] = gz[i] + g[0] * w * (p - tgt[i]) * inv_n;
            }
        });
        self.push("bce_with_logits", vec![1], vec![loss], Some(back))
    }
}
