use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::{Rng, Tensor};

/// One stored decision: state, executed action, reward, next state and
/// the termination flag that masks bootstrapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Column-stacked minibatch: `s`, `a`, `s_next` are matrices, `r` and
/// `done` are `[b×1]` columns (`done` as 0/1).
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionBatch {
    pub s: Tensor,
    pub a: Tensor,
    pub r: Tensor,
    pub s_next: Tensor,
    pub done: Tensor,
}

impl TransitionBatch {
    pub fn from_transitions(items: &[&Transition]) -> Self {
        let rows = |f: &dyn Fn(&Transition) -> &[f64]| {
            let width = items.first().map_or(0, |t| f(t).len());
            let mut data = Vec::with_capacity(items.len() * width);
            for t in items {
                data.extend_from_slice(f(t));
            }
            Tensor::matrix(items.len(), width, data)
        };
        Self {
            s: rows(&|t| &t.s),
            a: rows(&|t| &t.a),
            s_next: rows(&|t| &t.s_next),
            r: Tensor::column(items.iter().map(|t| t.r).collect()),
            done: Tensor::column(items.iter().map(|t| f64::from(u8::from(t.done))).collect()),
        }
    }

    pub fn len(&self) -> usize {
        self.r.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ring buffer with uniform sampling with replacement.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(contract("replay buffer capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            next: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = Transition>) {
        for t in items {
            self.push(t);
        }
    }

    /// Stored transitions in slot order.
    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Result<TransitionBatch> {
        if self.items.is_empty() {
            return Err(contract("cannot sample from an empty replay buffer"));
        }
        let picked: Vec<&Transition> = (0..batch)
            .map(|_| &self.items[rng.below(self.items.len())])
            .collect();
        Ok(TransitionBatch::from_transitions(&picked))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(r: f64) -> Transition {
        Transition {
            s: vec![r],
            a: vec![0.0, 0.0],
            r,
            s_next: vec![r],
            done: false,
        }
    }

    #[test]
    fn wraparound_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(tr(i as f64));
        }
        let rs: Vec<f64> = b.items().iter().map(|t| t.r).collect();
        assert_eq!(rs, vec![3.0, 4.0, 2.0]);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn sampling_only_sees_filled_slots() {
        let mut b = ReplayBuffer::new(100).unwrap();
        assert!(b.sample(4, &mut Rng::new(0)).is_err());
        b.push(tr(7.0));
        b.push(tr(8.0));
        let batch = b.sample(256, &mut Rng::new(1)).unwrap();
        assert_eq!(batch.len(), 256);
        assert!(batch.r.data().iter().all(|r| *r == 7.0 || *r == 8.0));
        assert_eq!(batch.a.shape(), &[256, 2]);
    }
}
