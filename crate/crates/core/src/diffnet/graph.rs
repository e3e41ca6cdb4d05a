//! Reverse-mode differentiation over a closed set of matrix primitives.
//!
//! Every node holds a 2-D `f64` value computed eagerly on construction.
//! Binary elementwise primitives broadcast along axes of length 1; their
//! backward rules sum the incoming gradient back down to the operand shape.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis, Zip};

use super::gaussian::{HALF_LN_2PI, HALF_LN_2PI_E};
use super::tensor::{ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(String),
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Min(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    SliceCols(usize, usize),
    GaussLogprob { x: usize, mean: usize, log_std: usize },
    GaussEntropy(usize),
}

/// Primitive names accepted by [`Graph::apply`]; anything else is a
/// construction error.
pub const PRIMITIVES: &[&str] = &[
    "matmul", "add", "sub", "mul", "min", "tanh", "relu", "exp", "square", "sum", "mean", "rowsum",
];

#[derive(Default)]
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<Array2<f64>>,
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    match (broadcast_dim(a.0, b.0), broadcast_dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::Config(format!("cannot broadcast {a:?} with {b:?}"))),
    }
}

fn reduce_to(grad: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = grad;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn expand(a: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    a.broadcast(shape).expect("shape validated").to_owned()
}

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Var {
        self.ops.push(op);
        self.values.push(value);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v.0]
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Input, value)
    }

    pub fn constant(&mut self, v: f64) -> Var {
        self.push(Op::Input, scalar(v))
    }

    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        let value = params.get(name)?.to_array();
        Ok(self.push(Op::Param(name.to_string()), value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.ncols() != vb.nrows() {
            return Err(Error::Config(format!(
                "matmul shape mismatch {:?} x {:?}",
                va.dim(),
                vb.dim()
            )));
        }
        let out = va.dot(vb);
        Ok(self.push(Op::MatMul(a.0, b.0), out))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Array2<f64>> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let shape = broadcast_shape(va.dim(), vb.dim())?;
        let mut out = Array2::zeros(shape);
        Zip::from(&mut out)
            .and_broadcast(va)
            .and_broadcast(vb)
            .for_each(|o, &x, &y| *o = f(x, y));
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a.0, b.0), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a.0, b.0), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a.0, b.0), out))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, f64::min)?;
        Ok(self.push(Op::Min(a.0, b.0), out))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = &self.values[a.0] * c;
        self.push(Op::Scale(a.0, c), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(f64::tanh);
        self.push(Op::Tanh(a.0), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(|x| x.max(0.0));
        self.push(Op::Relu(a.0), out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(f64::exp);
        self.push(Op::Exp(a.0), out)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(|x| x * x);
        self.push(Op::Square(a.0), out)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.values[a.0].mapv(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a.0, lo, hi), out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = scalar(self.values[a.0].sum());
        self.push(Op::Sum(a.0), out)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.values[a.0];
        let out = scalar(v.sum() / v.len().max(1) as f64);
        self.push(Op::Mean(a.0), out)
    }

    /// Sums each row, producing an `n x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let out = self.values[a.0].sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(Op::RowSum(a.0), out)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = &self.values[a.0];
        if start + len > v.ncols() {
            return Err(Error::Config(format!(
                "column slice {start}..{} out of range for {:?}",
                start + len,
                v.dim()
            )));
        }
        let out = v.slice(ndarray::s![.., start..start + len]).to_owned();
        Ok(self.push(Op::SliceCols(a.0, start), out))
    }

    /// Per-row diagonal Gaussian log-density, `n x 1`. `mean` and `log_std`
    /// broadcast against `x`.
    pub fn gauss_logprob(&mut self, x: Var, mean: Var, log_std: Var) -> Result<Var> {
        let (vx, vm, vs) = (&self.values[x.0], &self.values[mean.0], &self.values[log_std.0]);
        let shape = broadcast_shape(broadcast_shape(vx.dim(), vm.dim())?, vs.dim())?;
        let mut out = Array2::zeros((shape.0, 1));
        let (x_b, m_b, s_b) = (
            vx.broadcast(shape).expect("checked"),
            vm.broadcast(shape).expect("checked"),
            vs.broadcast(shape).expect("checked"),
        );
        for r in 0..shape.0 {
            let mut acc = 0.0;
            for c in 0..shape.1 {
                let ls = s_b[[r, c]];
                let u = (x_b[[r, c]] - m_b[[r, c]]) * (-ls).exp();
                acc += -HALF_LN_2PI - ls - 0.5 * u * u;
            }
            out[[r, 0]] = acc;
        }
        Ok(self.push(Op::GaussLogprob { x: x.0, mean: mean.0, log_std: log_std.0 }, out))
    }

    /// Per-row diagonal Gaussian entropy from log standard deviations, `n x 1`.
    pub fn gauss_entropy(&mut self, log_std: Var) -> Var {
        let out = self.values[log_std.0]
            .mapv(|ls| HALF_LN_2PI_E + ls)
            .sum_axis(Axis(1))
            .insert_axis(Axis(1));
        self.push(Op::GaussEntropy(log_std.0), out)
    }

    /// Applies a primitive by name. Used by generated test compositions.
    pub fn apply(&mut self, name: &str, args: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::Construction(format!("`{name}` takes {n} operands")))
            }
        };
        match name {
            "matmul" => arity(2).and_then(|_| self.matmul(args[0], args[1])),
            "add" => arity(2).and_then(|_| self.add(args[0], args[1])),
            "sub" => arity(2).and_then(|_| self.sub(args[0], args[1])),
            "mul" => arity(2).and_then(|_| self.mul(args[0], args[1])),
            "min" => arity(2).and_then(|_| self.min(args[0], args[1])),
            "tanh" => arity(1).map(|_| self.tanh(args[0])),
            "relu" => arity(1).map(|_| self.relu(args[0])),
            "exp" => arity(1).map(|_| self.exp(args[0])),
            "square" => arity(1).map(|_| self.square(args[0])),
            "sum" => arity(1).map(|_| self.sum(args[0])),
            "mean" => arity(1).map(|_| self.mean(args[0])),
            "rowsum" => arity(1).map(|_| self.row_sum(args[0])),
            other => Err(Error::Construction(format!("unsupported primitive `{other}`"))),
        }
    }

    /// Gradients of a `1 x 1` node with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.values[loss.0].dim() != (1, 1) {
            return Err(Error::Construction(format!(
                "loss must be 1x1, got {:?}",
                self.values[loss.0].dim()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(scalar(1.0));
        let mut out = BTreeMap::new();

        fn acc(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
            match slot {
                Some(existing) => *existing += &g,
                None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let val = &self.values[idx];
            match &self.ops[idx] {
                Op::Input => {}
                Op::Param(name) => match out.get_mut(name) {
                    Some(existing) => *existing += &g,
                    None => {
                        out.insert(name.clone(), g);
                    }
                },
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.values[*b].t());
                    let gb = self.values[*a].t().dot(&g);
                    acc(&mut grads[*a], ga);
                    acc(&mut grads[*b], gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[*a], reduce_to(g.clone(), self.values[*a].dim()));
                    acc(&mut grads[*b], reduce_to(g, self.values[*b].dim()));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads[*a], reduce_to(g.clone(), self.values[*a].dim()));
                    acc(&mut grads[*b], reduce_to(-g, self.values[*b].dim()));
                }
                Op::Mul(a, b) => {
                    let shape = g.dim();
                    let (va, vb) = (expand(&self.values[*a], shape), expand(&self.values[*b], shape));
                    acc(&mut grads[*a], reduce_to(&g * &vb, self.values[*a].dim()));
                    acc(&mut grads[*b], reduce_to(&g * &va, self.values[*b].dim()));
                }
                Op::Min(a, b) => {
                    // Ties route the gradient to the first operand.
                    let shape = g.dim();
                    let (va, vb) = (expand(&self.values[*a], shape), expand(&self.values[*b], shape));
                    let mut ga = g.clone();
                    let mut gb = g;
                    Zip::from(&mut ga).and(&mut gb).and(&va).and(&vb).for_each(|x, y, &p, &q| {
                        if p <= q {
                            *y = 0.0;
                        } else {
                            *x = 0.0;
                        }
                    });
                    acc(&mut grads[*a], reduce_to(ga, self.values[*a].dim()));
                    acc(&mut grads[*b], reduce_to(gb, self.values[*b].dim()));
                }
                Op::Scale(a, c) => acc(&mut grads[*a], g * *c),
                Op::Tanh(a) => acc(&mut grads[*a], g * &val.mapv(|t| 1.0 - t * t)),
                Op::Relu(a) => {
                    let mask = self.values[*a].mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads[*a], g * &mask)
                }
                Op::Exp(a) => acc(&mut grads[*a], g * val),
                Op::Square(a) => acc(&mut grads[*a], g * &self.values[*a].mapv(|x| 2.0 * x)),
                Op::Clamp(a, lo, hi) => {
                    let mask =
                        self.values[*a].mapv(|x| if x > *lo && x < *hi { 1.0 } else { 0.0 });
                    acc(&mut grads[*a], g * &mask)
                }
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    acc(&mut grads[*a], Array2::from_elem(self.values[*a].dim(), s))
                }
                Op::Mean(a) => {
                    let n = self.values[*a].len().max(1) as f64;
                    let s = g[[0, 0]] / n;
                    acc(&mut grads[*a], Array2::from_elem(self.values[*a].dim(), s))
                }
                Op::RowSum(a) => {
                    let dim = self.values[*a].dim();
                    acc(&mut grads[*a], g.broadcast(dim).expect("column").to_owned())
                }
                Op::SliceCols(a, start) => {
                    let mut full = Array2::zeros(self.values[*a].dim());
                    full.slice_mut(ndarray::s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads[*a], full)
                }
                Op::GaussLogprob { x, mean, log_std } => {
                    let (vx, vm, vs) = (&self.values[*x], &self.values[*mean], &self.values[*log_std]);
                    let shape = broadcast_shape(broadcast_shape(vx.dim(), vm.dim())?, vs.dim())?;
                    let (x_b, m_b, s_b) = (
                        vx.broadcast(shape).expect("checked"),
                        vm.broadcast(shape).expect("checked"),
                        vs.broadcast(shape).expect("checked"),
                    );
                    let mut gx = Array2::zeros(shape);
                    let mut gs = Array2::zeros(shape);
                    for r in 0..shape.0 {
                        let gr = g[[r, 0]];
                        for c in 0..shape.1 {
                            let inv = (-s_b[[r, c]]).exp();
                            let u = (x_b[[r, c]] - m_b[[r, c]]) * inv;
                            gx[[r, c]] = -gr * u * inv;
                            gs[[r, c]] = gr * (u * u - 1.0);
                        }
                    }
                    let gm = -&gx;
                    acc(&mut grads[*x], reduce_to(gx, vx.dim()));
                    acc(&mut grads[*mean], reduce_to(gm, vm.dim()));
                    acc(&mut grads[*log_std], reduce_to(gs, vs.dim()));
                }
                Op::GaussEntropy(a) => {
                    let dim = self.values[*a].dim();
                    acc(&mut grads[*a], g.broadcast(dim).expect("column").to_owned())
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}

/// Parameter gradients keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<String, Array2<f64>>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.grads.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.grads.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.grads.values().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.values_mut() {
            *g *= c;
        }
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }

    /// Keeps only parameters whose names start with `prefix`.
    pub fn select(&self, prefix: &str) -> Gradients {
        Gradients {
            grads: self
                .grads
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Keeps only parameters whose names contain `pattern`.
    pub fn select_containing(&self, pattern: &str) -> Gradients {
        Gradients {
            grads: self
                .grads
                .iter()
                .filter(|(k, _)| k.contains(pattern))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Gradients shaped like the parameter tensors, zeros where absent.
    pub fn to_param_set(&self, like: &ParamSet) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (name, t) in like.iter() {
            let mut g = Tensor::zeros(t.shape().to_vec());
            if let Some(v) = self.grads.get(name) {
                g.assign(v)?;
            }
            out.insert(name.clone(), g)?;
        }
        Ok(out)
    }
}

/// Evaluates `build` on `params` and returns the loss value and its analytic
/// gradient.
pub fn grad<F>(params: &ParamSet, build: F) -> Result<(f64, Gradients)>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    let value = g.scalar_value(loss);
    let grads = g.backward(loss)?;
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quadratic_weight_gradient() {
        // L = 0.5 * ||W x||^2 with x = [1], W = [[2]] gives dL/dW = 2.
        let mut p = ParamSet::new();
        p.insert("w", Tensor::matrix(1, 1, vec![2.0]).unwrap()).unwrap();
        let (l, g) = grad(&p, |g, p| {
            let x = g.input(array![[1.0]]);
            let w = g.param(p, "w")?;
            let y = g.matmul(x, w)?;
            let sq = g.square(y);
            let s = g.sum(sq);
            Ok(g.scale(s, 0.5))
        })
        .unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(g.get("w").unwrap()[[0, 0]], 2.0);
    }

    #[test]
    fn entropy_gradient_wrt_log_std_is_one() {
        let mut p = ParamSet::new();
        p.insert("rho", Tensor::vector(vec![0.0])).unwrap();
        let (_, g) = grad(&p, |g, p| {
            let rho = g.param(p, "rho")?;
            let h = g.gauss_entropy(rho);
            Ok(g.sum(h))
        })
        .unwrap();
        assert_eq!(g.get("rho").unwrap()[[0, 0]], 1.0);
    }

    #[test]
    fn unsupported_primitive_is_construction_error() {
        let mut g = Graph::new();
        let x = g.input(array![[1.0]]);
        assert!(matches!(g.apply("softmax", &[x]), Err(Error::Construction(_))));
        assert!(matches!(g.apply("tanh", &[x, x]), Err(Error::Construction(_))));
        assert!(matches!(g.backward(x), Ok(_)));
        let col = g.input(array![[1.0], [2.0]]);
        assert!(matches!(g.backward(col), Err(Error::Construction(_))));
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut p = ParamSet::new();
        p.insert("b", Tensor::vector(vec![0.5, -0.5])).unwrap();
        let (_, g) = grad(&p, |g, p| {
            let x = g.input(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
            let b = g.param(p, "b")?;
            let y = g.add(x, b)?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert_eq!(g.get("b").unwrap(), &array![[3.0, 3.0]]);
    }
}
