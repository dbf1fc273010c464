//! Bounded per-client outbound queue.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use crate::protocol::{encode, BusMessage, Level};

pub const QUEUE_CAPACITY: usize = 1024;

/// Encoded frame, shared between the queues of every recipient.
pub type Frame = Arc<str>;

#[derive(Debug, Default)]
struct State {
    frames: VecDeque<Frame>,
    dropped: u64,
    closed: bool,
}

/// Drop-oldest queue. After an overflow the next pop yields a
/// `QueueOverflow` status carrying the number of frames lost.
#[derive(Debug)]
pub struct ClientQueue {
    state: Mutex<State>,
    ready: Condvar,
    capacity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pop {
    Frame(Frame),
    Empty,
    Closed,
}

impl Default for ClientQueue {
    fn default() -> Self {
        Self::with_capacity(QUEUE_CAPACITY)
    }
}

impl ClientQueue {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            state: Mutex::new(State::default()),
            ready: Condvar::new(),
            capacity: capacity.max(1),
        }
    }

    /// Returns false if the queue is closed.
    pub fn push(&self, frame: Frame) -> bool {
        let mut s = self.state.lock().expect("queue lock");
        if s.closed {
            return false;
        }
        if s.frames.len() == self.capacity {
            s.frames.pop_front();
            s.dropped += 1;
        }
        s.frames.push_back(frame);
        self.ready.notify_one();
        true
    }

    pub fn close(&self) {
        self.state.lock().expect("queue lock").closed = true;
        self.ready.notify_all();
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("queue lock").frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn take(s: &mut State) -> Option<Frame> {
        if s.dropped > 0 {
            let n = std::mem::take(&mut s.dropped);
            let mut notice = BusMessage::status(None, Level::Warning, "QueueOverflow", format!("dropped {n} frames"));
            if let Some(m) = notice.msg.as_mut() {
                m["dropped"] = n.into();
            }
            return Some(encode(&notice).into());
        }
        s.frames.pop_front()
    }

    pub fn try_pop(&self) -> Pop {
        let mut s = self.state.lock().expect("queue lock");
        match Self::take(&mut s) {
            Some(f) => Pop::Frame(f),
            None if s.closed => Pop::Closed,
            None => Pop::Empty,
        }
    }

    /// Waits up to `timeout` for a frame. Remaining frames are still
    /// delivered after `close`.
    pub fn pop_timeout(&self, timeout: Duration) -> Pop {
        let s = self.state.lock().expect("queue lock");
        let (mut s, _) = self
            .ready
            .wait_timeout_while(s, timeout, |s| s.frames.is_empty() && s.dropped == 0 && !s.closed)
            .expect("queue lock");
        match Self::take(&mut s) {
            Some(f) => Pop::Frame(f),
            None if s.closed => Pop::Closed,
            None => Pop::Empty,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::decode;

    #[test]
    fn overflow_drops_oldest_and_reports_once() {
        let q = ClientQueue::default();
        for i in 0..QUEUE_CAPACITY + 6 {
            q.push(i.to_string().into());
        }
        assert_eq!(q.len(), QUEUE_CAPACITY);
        let Pop::Frame(notice) = q.try_pop() else { panic!() };
        let notice = decode(notice.as_bytes()).unwrap();
        assert_eq!(notice.status_code(), Some("QueueOverflow"));
        assert_eq!(notice.msg.unwrap()["dropped"], 6);
        let rest: Vec<String> = std::iter::from_fn(|| match q.try_pop() {
            Pop::Frame(f) => Some(f.to_string()),
            _ => None,
        })
        .collect();
        let expected: Vec<String> = (6..QUEUE_CAPACITY + 6).map(|i| i.to_string()).collect();
        assert_eq!(rest, expected);
    }

    #[test]
    fn close_drains_then_reports_closed() {
        let q = ClientQueue::with_capacity(4);
        q.push("a".into());
        q.close();
        assert!(!q.push("b".into()));
        assert_eq!(q.pop_timeout(Duration::from_millis(1)), Pop::Frame("a".into()));
        assert_eq!(q.pop_timeout(Duration::from_millis(1)), Pop::Closed);
    }

    #[test]
    fn pop_waits_for_a_producer() {
        let q = Arc::new(ClientQueue::default());
        let q2 = q.clone();
        let h = std::thread::spawn(move || q2.pop_timeout(Duration::from_secs(5)));
        std::thread::sleep(Duration::from_millis(20));
        q.push("x".into());
        assert_eq!(h.join().unwrap(), Pop::Frame("x".into()));
        assert_eq!(q.pop_timeout(Duration::from_millis(1)), Pop::Empty);
    }
}
