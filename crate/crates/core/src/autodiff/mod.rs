//! Differentiation engine.
//!
//! Models are written once against the [`Graph`] trait and can then be run
//! three ways:
//!
//! * [`Eval`]: plain values, no derivative bookkeeping.
//! * [`Tape`]: records every primitive so [`Tape::backward`] can return
//!   exact reverse-mode gradients with respect to parameter leaves.
//! * [`Forward`]: propagates a tangent alongside every value (dual numbers),
//!   giving Jacobian-vector products with respect to inputs. Parameters are
//!   constants in this mode.
//!
//! The primitive set is identical across modes, so a forward-mode and a
//! reverse-mode derivative of the same composition can be cross-checked.

mod dual;
mod eval;
pub mod kernels;
mod tape;

pub use dual::{jvp, DualTensor, Forward};
pub use eval::Eval;
pub use tape::{Gradients, Tape, Var};

use crate::Tensor;

/// A recorder of primitive operations over some value representation.
pub trait Graph {
    type Value: Clone;

    /// Data that is never differentiated.
    fn constant(&mut self, t: Tensor) -> Self::Value;
    /// Trainable tensor. Only [`Tape`] treats it differently from a constant.
    fn param(&mut self, t: &Tensor) -> Self::Value;
    /// Primal value.
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn div(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    /// `[b×n] + [n]`, bias broadcast over rows.
    fn add_row(&mut self, x: &Self::Value, bias: &Self::Value) -> Self::Value;
    /// `[b×m] · [b×1]`, per-row scalar broadcast over columns.
    fn mul_col(&mut self, x: &Self::Value, col: &Self::Value) -> Self::Value;
    fn scale(&mut self, x: &Self::Value, k: f64) -> Self::Value;
    fn gelu(&mut self, x: &Self::Value) -> Self::Value;
    fn layer_norm(&mut self, x: &Self::Value) -> Self::Value;
    fn sin(&mut self, x: &Self::Value) -> Self::Value;
    fn cos(&mut self, x: &Self::Value) -> Self::Value;
    fn concat_cols(&mut self, parts: &[&Self::Value]) -> Self::Value;
    /// Sum of all entries, as a scalar.
    fn sum(&mut self, x: &Self::Value) -> Self::Value;
    /// Identity on values; blocks every derivative through it.
    fn stop_gradient(&mut self, x: &Self::Value) -> Self::Value;

    /// `sum(x ⊙ x) / rows(x)`: mean over rows of the squared row norm.
    fn mean_row_sq_norm(&mut self, x: &Self::Value) -> Self::Value {
        let rows = self.value(x).shape().first().copied().unwrap_or(1).max(1);
        let sq = self.mul(x, x);
        let s = self.sum(&sq);
        self.scale(&s, 1.0 / rows as f64)
    }
}

#[cfg(test)]
mod tests;
