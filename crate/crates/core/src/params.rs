//! Named parameter blocks and the update rules that walk them.
//!
//! Every learnable structure exposes its tensors as an ordered list of named
//! row-major blocks. Gradients use the same type as the parameters, so block
//! lists of a model and of its gradient zip one-to-one.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{sqrt, RealMatrix, RealVector};
use crate::{Error, Result};

#[derive(Debug)]
pub struct BlockRef<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct BlockMut<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a mut [f64],
}

pub trait Parameters {
    fn blocks(&self) -> Vec<BlockRef<'_>>;
    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>>;

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.data.len()).sum()
    }

    fn zero(&mut self) {
        for b in self.blocks_mut() {
            b.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// A copy with every entry set to zero, used as a gradient accumulator.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.zero();
        z
    }

    /// `self += scale · other`
    fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()>
    where
        Self: Sized,
    {
        let src = other.blocks();
        let mut dst = self.blocks_mut();
        check_pairing(&dst, &src)?;
        for (d, s) in dst.iter_mut().zip(&src) {
            for (a, b) in d.data.iter_mut().zip(s.data) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    fn scale(&mut self, s: f64) {
        for b in self.blocks_mut() {
            b.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| crate::math::all_finite(b.data))
    }
}

fn check_pairing(dst: &[BlockMut<'_>], src: &[BlockRef<'_>]) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::shape(
            "parameter set",
            format!("{} blocks", dst.len()),
            format!("{} blocks", src.len()),
        ));
    }
    for (d, s) in dst.iter().zip(src) {
        if d.name != s.name || d.rows != s.rows || d.cols != s.cols {
            return Err(Error::shape(
                d.name.clone(),
                format!("{} {}x{}", d.name, d.rows, d.cols),
                format!("{} {}x{}", s.name, s.rows, s.cols),
            ));
        }
    }
    Ok(())
}

pub(crate) fn push_matrix<'a>(out: &mut Vec<BlockRef<'a>>, prefix: &str, name: &str, m: &'a RealMatrix) {
    out.push(BlockRef {
        name: join(prefix, name),
        rows: m.rows(),
        cols: m.cols(),
        data: m.as_slice(),
    });
}

pub(crate) fn push_matrix_mut<'a>(out: &mut Vec<BlockMut<'a>>, prefix: &str, name: &str, m: &'a mut RealMatrix) {
    let (rows, cols) = m.shape();
    out.push(BlockMut {
        name: join(prefix, name),
        rows,
        cols,
        data: m.as_mut_slice(),
    });
}

pub(crate) fn push_vector<'a>(out: &mut Vec<BlockRef<'a>>, prefix: &str, name: &str, v: &'a RealVector) {
    out.push(BlockRef {
        name: join(prefix, name),
        rows: v.dim(),
        cols: 1,
        data: v.as_slice(),
    });
}

pub(crate) fn push_vector_mut<'a>(out: &mut Vec<BlockMut<'a>>, prefix: &str, name: &str, v: &'a mut RealVector) {
    out.push(BlockMut {
        name: join(prefix, name),
        rows: v.dim(),
        cols: 1,
        data: &mut v[..],
    });
}

pub(crate) fn push_scalar<'a>(out: &mut Vec<BlockRef<'a>>, prefix: &str, name: &str, x: &'a f64) {
    out.push(BlockRef {
        name: join(prefix, name),
        rows: 1,
        cols: 1,
        data: core::slice::from_ref(x),
    });
}

pub(crate) fn push_scalar_mut<'a>(out: &mut Vec<BlockMut<'a>>, prefix: &str, name: &str, x: &'a mut f64) {
    out.push(BlockMut {
        name: join(prefix, name),
        rows: 1,
        cols: 1,
        data: core::slice::from_mut(x),
    });
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

/// Plain gradient step `θ ← θ − lr·g` on every block.
pub fn sgd_update<P: Parameters>(params: &mut P, grads: &P, learning_rate: f64) -> Result<()> {
    params.add_scaled(grads, -learning_rate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Stateful optimizer; state buffers are allocated on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        if let OptimizerKind::Sgd = self.kind {
            return sgd_update(params, grads, lr);
        }
        let src = grads.blocks();
        let mut dst = params.blocks_mut();
        check_pairing(&dst, &src)?;
        if self.first.is_empty() {
            self.first = src.iter().map(|b| vec![0.0; b.data.len()]).collect();
            self.second = src.iter().map(|b| vec![0.0; b.data.len()]).collect();
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => unreachable!(),
            OptimizerKind::Momentum { beta } => {
                for ((d, s), m) in dst.iter_mut().zip(&src).zip(&mut self.first) {
                    for ((p, g), v) in d.data.iter_mut().zip(s.data).zip(m.iter_mut()) {
                        *v = beta * *v + g;
                        *p -= lr * *v;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - libm::pow(beta1, t as f64);
                let c2 = 1.0 - libm::pow(beta2, t as f64);
                for (((d, s), m), v) in dst.iter_mut().zip(&src).zip(&mut self.first).zip(&mut self.second) {
                    for (((p, g), m), v) in d.data.iter_mut().zip(s.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let mh = *m / c1;
                        let vh = *v / c2;
                        *p -= lr * mh / (sqrt(vh) + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct Toy {
        w: RealMatrix,
        b: f64,
    }

    impl Parameters for Toy {
        fn blocks(&self) -> Vec<BlockRef<'_>> {
            let mut out = Vec::new();
            push_matrix(&mut out, "toy", "w", &self.w);
            push_scalar(&mut out, "toy", "b", &self.b);
            out
        }
        fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
            let mut out = Vec::new();
            push_matrix_mut(&mut out, "toy", "w", &mut self.w);
            push_scalar_mut(&mut out, "toy", "b", &mut self.b);
            out
        }
    }

    fn toy(w: f64, b: f64) -> Toy {
        Toy {
            w: RealMatrix::from_vec(1, 1, vec![w]).unwrap(),
            b,
        }
    }

    #[test]
    fn sgd_examples() {
        let mut p = toy(1.0, 3.0);
        let g = toy(2.0, -1.0);
        sgd_update(&mut p, &g, 0.0).unwrap();
        assert_eq!(p, toy(1.0, 3.0));
        sgd_update(&mut p, &g, 0.5).unwrap();
        assert_eq!(p, toy(0.0, 3.5));
        sgd_update(&mut p, &g, 0.5).unwrap();
        assert_eq!(p, toy(1.0 - 2.0 * 0.5 * 2.0, 3.0 + 2.0 * 0.5));
    }

    #[test]
    fn shape_mismatch_names_block() {
        let mut p = toy(1.0, 0.0);
        let g = Toy {
            w: RealMatrix::zeros(2, 1),
            b: 0.0,
        };
        match sgd_update(&mut p, &g, 0.1) {
            Err(Error::Shape { name, .. }) => assert_eq!(name, "toy.w"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = toy(1.0, 1.0);
        let g = toy(0.5, -0.5);
        let mut opt = Optimizer::new(OptimizerKind::adam());
        opt.step(&mut p, &g, 0.01).unwrap();
        assert!((p.w.get(0, 0) - 0.99).abs() < 1e-6);
        assert!((p.b - 1.01).abs() < 1e-6);
    }
}
