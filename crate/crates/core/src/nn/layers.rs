use alloc::format;

use rand::Rng;

use super::{BoundParams, NnError, ParamId, ParamSet, Tape, Var};

/// Fully connected layer `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(set: &mut ParamSet, name: &str, din: usize, dout: usize, rng: &mut R) -> Result<Self, NnError> {
        let weight = set.add_uniform(&format!("{name}.weight"), &[din, dout], din, rng)?;
        let bias = set.add_uniform(&format!("{name}.bias"), &[dout], din, rng)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var, NnError> {
        tape.linear(x, p.var(self.weight), p.var(self.bias))
    }
}

/// Two linear layers with a ReLU between them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp2 {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp2 {
    pub fn new<R: Rng>(set: &mut ParamSet, name: &str, din: usize, dhidden: usize, dout: usize, rng: &mut R) -> Result<Self, NnError> {
        Ok(Self {
            hidden: Linear::new(set, &format!("{name}.0"), din, dhidden, rng)?,
            out: Linear::new(set, &format!("{name}.1"), dhidden, dout, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var, NnError> {
        let h = self.hidden.forward(tape, p, x)?;
        let h = tape.relu(h);
        self.out.forward(tape, p, h)
    }
}

/// Gated recurrent unit over `[B, D]` states:
///
/// ```text
/// z  = sigmoid(m Wz + h Uz + bz)
/// r  = sigmoid(m Wr + h Ur + br)
/// h~ = tanh(m Wh + (r * h) Uh + bh)
/// h' = h + z * (h~ - h)
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruCell {
    pub update_in: Linear,
    pub update_hidden: ParamId,
    pub reset_in: Linear,
    pub reset_hidden: ParamId,
    pub cand_in: Linear,
    pub cand_hidden: ParamId,
}

impl GruCell {
    pub fn new<R: Rng>(set: &mut ParamSet, name: &str, dim: usize, rng: &mut R) -> Result<Self, NnError> {
        Ok(Self {
            update_in: Linear::new(set, &format!("{name}.update"), dim, dim, rng)?,
            update_hidden: set.add_uniform(&format!("{name}.update.hidden"), &[dim, dim], dim, rng)?,
            reset_in: Linear::new(set, &format!("{name}.reset"), dim, dim, rng)?,
            reset_hidden: set.add_uniform(&format!("{name}.reset.hidden"), &[dim, dim], dim, rng)?,
            cand_in: Linear::new(set, &format!("{name}.cand"), dim, dim, rng)?,
            cand_hidden: set.add_uniform(&format!("{name}.cand.hidden"), &[dim, dim], dim, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, h: Var, m: Var) -> Result<Var, NnError> {
        if tape.shape(h) != tape.shape(m) {
            return Err(NnError::ShapeMismatch {
                op: "gru_cell",
                detail: format!("h {:?} vs m {:?}", tape.shape(h), tape.shape(m)),
            });
        }
        let gate = |tape: &mut Tape, lin: &Linear, hidden: ParamId, state: Var| -> Result<Var, NnError> {
            let a = lin.forward(tape, p, m)?;
            let b = tape.matmul(state, p.var(hidden))?;
            tape.add(a, b)
        };
        let z = gate(tape, &self.update_in, self.update_hidden, h)?;
        let z = tape.sigmoid(z);
        let r = gate(tape, &self.reset_in, self.reset_hidden, h)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let cand = gate(tape, &self.cand_in, self.cand_hidden, rh)?;
        let cand = tape.tanh(cand);
        let delta = tape.sub(cand, h)?;
        let step = tape.mul(z, delta)?;
        tape.add(h, step)
    }
}
