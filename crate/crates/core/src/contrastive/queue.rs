//! FIFO negative queue (memory bank) of past key embeddings.

use crate::error::{contract_err, Result};

/// Ring buffer of L2-normalized key vectors. Capacity 0 disables the bank.
#[derive(Debug, Clone)]
pub struct NegativeQueue {
    dim: usize,
    capacity: usize,
    buffer: Vec<f64>,
    head: usize,
    fill: usize,
}

impl NegativeQueue {
    pub fn new(capacity: usize, dim: usize) -> NegativeQueue {
        NegativeQueue { dim, capacity, buffer: vec![0.0; capacity * dim], head: 0, fill: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.fill
    }

    pub fn is_empty(&self) -> bool {
        self.fill == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Append one key, evicting the oldest when full.
    pub fn push(&mut self, key: &[f64]) -> Result<()> {
        if key.len() != self.dim {
            return Err(contract_err(format!(
                "queue expects {}-d keys, got {}",
                self.dim,
                key.len()
            )));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        let at = self.head * self.dim;
        self.buffer[at..at + self.dim].copy_from_slice(key);
        self.head = (self.head + 1) % self.capacity;
        self.fill = (self.fill + 1).min(self.capacity);
        Ok(())
    }

    pub fn push_batch(&mut self, keys: &[Vec<f64>]) -> Result<()> {
        for key in keys {
            self.push(key)?;
        }
        Ok(())
    }

    /// Contents oldest-first.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.fill);
        let start = if self.fill < self.capacity {
            0
        } else {
            self.head
        };
        for i in 0..self.fill {
            let slot = (start + i) % self.capacity;
            out.push(self.buffer[slot * self.dim..(slot + 1) * self.dim].to_vec());
        }
        out
    }

    /// Iterate entries without allocation (order unspecified; used for loss
    /// candidates where order does not matter).
    pub fn entries(&self) -> impl Iterator<Item = &[f64]> {
        self.buffer[..self.fill.min(self.capacity) * self.dim].chunks_exact(self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(v: f64, dim: usize) -> Vec<f64> {
        let mut k = vec![0.0; dim];
        k[0] = v;
        k
    }

    #[test]
    fn fifo_eviction_keeps_last_capacity_keys() {
        let mut q = NegativeQueue::new(4, 2);
        for i in 0..7 {
            q.push(&key(i as f64, 2)).unwrap();
        }
        assert_eq!(q.len(), 4);
        let snap = q.snapshot();
        let firsts: Vec<f64> = snap.iter().map(|k| k[0]).collect();
        assert_eq!(firsts, vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn zero_capacity_disables_the_bank() {
        let mut q = NegativeQueue::new(0, 3);
        q.push(&key(1.0, 3)).unwrap();
        assert_eq!(q.len(), 0);
        assert!(q.snapshot().is_empty());
    }

    #[test]
    fn fill_after_ceil_q_over_n_steps_is_exactly_q() {
        // Counting oracle over the FIFO: Q = 32, N = 8.
        let (q_cap, n) = (32usize, 8usize);
        let mut q = NegativeQueue::new(q_cap, 1);
        let mut steps = 0;
        while q.len() < q_cap {
            for i in 0..n {
                q.push(&[(steps * n + i) as f64]).unwrap();
            }
            steps += 1;
        }
        assert_eq!(steps, q_cap.div_ceil(n));
        assert_eq!(q.len(), q_cap);
    }
}
