use super::ops::{self, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One recorded evaluation: the op, its inputs, and the saved output value.
#[derive(Clone, Debug)]
pub struct Record {
    pub op: Op,
    pub inputs: Vec<Var>,
    pub value: Tensor,
    /// Leaves only: whether gradients are reported for this value.
    pub trainable: bool,
}

/// Wengert list for reverse-mode differentiation.
///
/// Records are appended in evaluation order, so every input id is smaller
/// than the id of the record that consumes it.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
    needs_grad: Vec<bool>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a tape from raw records without validation. [`Tape::backward`]
    /// and [`Tape::replay`] check the ordering before use.
    pub fn from_records(records: Vec<Record>) -> Self {
        let mut needs_grad = Vec::with_capacity(records.len());
        for r in &records {
            let ng = match r.op {
                Op::Leaf => r.trainable,
                _ => r
                    .inputs
                    .iter()
                    .any(|v| needs_grad.get(v.0).copied().unwrap_or(false)),
            };
            needs_grad.push(ng);
        }
        Tape { records, needs_grad }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    /// Differentiable input (parameter or input whose gradient is wanted).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push_leaf(value, true)
    }

    /// Input that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, trainable: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.records.push(Record {
            op: Op::Leaf,
            inputs: vec![],
            value,
            trainable,
        });
        self.needs_grad.push(trainable);
        Ok(Var(self.records.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.records[v.0].value.shape()
    }

    /// Evaluates `op` on recorded inputs and records the result.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        for v in inputs {
            if v.0 >= self.records.len() {
                return Err(Error::Tape(format!("input {} not on tape", v.0)));
            }
        }
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.records[v.0].value).collect();
        let value = ops::forward(&op, &vals)?;
        let ng = inputs.iter().any(|v| self.needs_grad[v.0]);
        self.records.push(Record {
            op,
            inputs: inputs.to_vec(),
            value,
            trainable: false,
        });
        self.needs_grad.push(ng);
        Ok(Var(self.records.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Op::Scale(c), &[a])
    }

    pub fn scalar_mul(&mut self, s: Var, x: Var) -> Result<Var> {
        self.apply(Op::ScalarMul, &[s, x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Transpose, &[a])
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::RowSoftmax, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Tanh, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Relu, &[a])
    }

    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::GlobalAvgPool, &[a])
    }

    pub fn channel_mul(&mut self, x: Var, gate: Var) -> Result<Var> {
        self.apply(Op::ChannelMul, &[x, gate])
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Op::ConcatChannels, parts)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Op::Reshape(shape.to_vec()), &[a])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        match b {
            Some(b) => self.apply(Op::Conv2d { stride }, &[x, w, b]),
            None => self.apply(Op::Conv2d { stride }, &[x, w]),
        }
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sum, &[a])
    }

    fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            for v in &r.inputs {
                if v.0 >= self.records.len() {
                    return Err(Error::Tape(format!("record {i} reads missing record {}", v.0)));
                }
                if v.0 >= i {
                    return Err(Error::Tape(format!(
                        "record {i} reads record {} which is not earlier (cycle)",
                        v.0
                    )));
                }
            }
            if matches!(r.op, Op::Leaf) != r.inputs.is_empty() {
                return Err(Error::Tape(format!("record {i} has inconsistent inputs")));
            }
        }
        Ok(())
    }

    /// Reverse sweep from `output` seeded with `seed`.
    ///
    /// Every trainable leaf gets an entry; leaves the output does not depend
    /// on get zeros.
    pub fn backward(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        if self.records.is_empty() {
            return Err(Error::Tape("empty tape".into()));
        }
        if output.0 >= self.records.len() {
            return Err(Error::Tape(format!("output {} not on tape", output.0)));
        }
        self.validate()?;
        if seed.shape() != self.value(output).shape() {
            return Err(Error::shape(
                "backward",
                format!("seed {:?} for output {:?}", seed.shape(), self.value(output).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.records.len()];
        grads[output.0] = Some(seed.clone());
        for i in (0..=output.0).rev() {
            let r = &self.records[i];
            if matches!(r.op, Op::Leaf) || !self.needs_grad[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor> = r.inputs.iter().map(|v| &self.records[v.0].value).collect();
            let wanted: Vec<bool> = r.inputs.iter().map(|v| self.needs_grad[v.0]).collect();
            let input_grads = ops::backward(&r.op, &inputs, &r.value, &g, &wanted)?;
            for (v, ig) in r.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        let mut out = Vec::with_capacity(self.records.len());
        for (i, (r, g)) in self.records.iter().zip(grads).enumerate() {
            let entry = if matches!(r.op, Op::Leaf) && r.trainable {
                Some(g.unwrap_or_else(|| Tensor::zeros(self.records[i].value.shape())))
            } else {
                None
            };
            out.push(entry);
        }
        Ok(Gradients { grads: out })
    }

    /// Re-evaluates every record in order, substituting new values for the
    /// given leaves.
    pub fn replay(&self, overrides: &[(Var, Tensor)]) -> Result<Tape> {
        self.validate()?;
        let mut out = Tape::new();
        for (i, r) in self.records.iter().enumerate() {
            match r.op {
                Op::Leaf => {
                    let value = overrides
                        .iter()
                        .find(|(v, _)| v.0 == i)
                        .map(|(_, t)| t.clone())
                        .unwrap_or_else(|| r.value.clone());
                    if value.shape() != r.value.shape() {
                        return Err(Error::shape(
                            "replay",
                            format!("leaf {i}: {:?} replaced by {:?}", r.value.shape(), value.shape()),
                        ));
                    }
                    out.push_leaf(value, r.trainable)?;
                }
                _ => {
                    out.apply(r.op.clone(), &r.inputs)?;
                }
            }
        }
        Ok(out)
    }
}

/// Gradients of one backward sweep, indexed by tape id.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a trainable leaf. `None` for constants and interior values.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (Var(i), g)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_conv_gradient_is_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 2, 1], |i| i as f64)).unwrap();
        let w = tape.constant(Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        let y = tape.conv2d(x, w, None, 1).unwrap();
        let g = tape.backward(y, &Tensor::full(&[2, 2, 1], 1.0)).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);
        assert!(g.get(w).is_none());
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0)).unwrap();
        let y = tape.sigmoid(x).unwrap();
        let g = tape.backward(y, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn untouched_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0)).unwrap();
        let unused = tape.leaf(Tensor::full(&[3], 1.0)).unwrap();
        let y = tape.tanh(x).unwrap();
        let g = tape.backward(y, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.get(unused).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn rejects_bad_seed_and_empty_tape() {
        let tape = Tape::new();
        assert!(matches!(tape.backward(Var(0), &Tensor::scalar(1.0)), Err(Error::Tape(_))));
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[2], 1.0)).unwrap();
        assert!(tape.backward(x, &Tensor::scalar(1.0)).is_err());
    }

    #[test]
    fn rejects_cycles_and_missing_records() {
        let leaf = Record {
            op: Op::Leaf,
            inputs: vec![],
            value: Tensor::scalar(1.0),
            trainable: true,
        };
        let self_loop = Record {
            op: Op::Tanh,
            inputs: vec![Var(1)],
            value: Tensor::scalar(1.0),
            trainable: false,
        };
        let tape = Tape::from_records(vec![leaf.clone(), self_loop]);
        assert!(matches!(tape.backward(Var(1), &Tensor::scalar(1.0)), Err(Error::Tape(_))));

        let dangling = Record {
            op: Op::Tanh,
            inputs: vec![Var(7)],
            value: Tensor::scalar(1.0),
            trainable: false,
        };
        let tape = Tape::from_records(vec![leaf, dangling]);
        assert!(matches!(tape.backward(Var(1), &Tensor::scalar(1.0)), Err(Error::Tape(_))));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin())).unwrap();
        let b = tape.leaf(Tensor::from_fn(&[4, 3], |i| (i as f64 * 0.91).cos())).unwrap();
        let m = tape.matmul(a, b).unwrap();
        let s = tape.row_softmax(m).unwrap();
        let again = tape.replay(&[]).unwrap();
        assert_eq!(again.value(s), tape.value(s));
    }

    #[test]
    fn rejects_non_finite_leaf() {
        let mut tape = Tape::new();
        assert!(tape.leaf(Tensor::scalar(f64::NAN)).is_err());
    }
}
