//! Deterministic event queue.
//!
//! Events pop in nondecreasing time; ties break on the event's rank, then on
//! insertion order.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::time::Timestamp;

/// Tie-break priority among events at the same instant; lower pops first.
pub trait Ranked {
    fn rank(&self) -> u8;
}

struct Entry<E> {
    time: Timestamp,
    rank: u8,
    seq: u64,
    event: E,
}

impl<E> Entry<E> {
    fn key(&self) -> (Timestamp, u8, u64) {
        (self.time, self.rank, self.seq)
    }
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Entry<E>>>,
    seq: u64,
    now: Timestamp,
}

impl<E: Ranked> EventQueue<E> {
    pub fn new(start: Timestamp) -> Self {
        EventQueue { heap: BinaryHeap::new(), seq: 0, now: start }
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Panics if `time` is before the current time.
    pub fn schedule(&mut self, time: Timestamp, event: E) {
        assert!(time >= self.now, "event scheduled in the past: {time} < {}", self.now);
        let rank = event.rank();
        self.heap.push(Reverse(Entry { time, rank, seq: self.seq, event }));
        self.seq += 1;
    }

    pub fn peek_time(&self) -> Option<Timestamp> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    pub fn pop(&mut self) -> Option<(Timestamp, E)> {
        let Reverse(e) = self.heap.pop()?;
        self.now = e.time;
        Some((e.time, e.event))
    }

    /// Pops the next event only if it is strictly before `end`.
    pub fn pop_before(&mut self, end: Timestamp) -> Option<(Timestamp, E)> {
        match self.peek_time() {
            Some(t) if t < end => self.pop(),
            _ => None,
        }
    }
}
