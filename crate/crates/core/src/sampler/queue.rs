//! FIFO support queue of live embeddings, as used for in-training nearest
//! neighbor substitution.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SupportQueue {
    capacity: usize,
    buffer: VecDeque<Vec<f64>>,
}

impl SupportQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Argument("queue capacity must be >= 1".into()));
        }
        Ok(Self { capacity, buffer: VecDeque::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Append every row, then evict from the front until within capacity.
    pub fn push(&mut self, embeddings: &Array2<f64>) {
        for row in embeddings.rows() {
            self.buffer.push_back(row.to_vec());
        }
        while self.buffer.len() > self.capacity {
            self.buffer.pop_front();
        }
    }

    /// Entry with minimal squared distance to the query; ties keep the oldest.
    pub fn nn(&self, query: &[f64]) -> Result<&[f64]> {
        self.nn_index(query).map(|i| self.buffer[i].as_slice())
    }

    /// Index (oldest = 0) of the nearest entry.
    pub fn nn_index(&self, query: &[f64]) -> Result<usize> {
        if self.buffer.is_empty() {
            return Err(Error::State("nearest-neighbor query on an empty queue".into()));
        }
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, entry) in self.buffer.iter().enumerate() {
            let d: f64 = entry.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        Ok(best)
    }

    pub fn entries(&self) -> impl Iterator<Item = &[f64]> {
        self.buffer.iter().map(|v| v.as_slice())
    }
}
