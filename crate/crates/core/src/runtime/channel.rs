//! Bounded FIFO bridges between agent components.

use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender, TrySendError};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("channel {name} is closed")]
pub struct ChannelClosed {
    pub name: String,
}

/// Sending end. Blocks while the bridge is full.
#[derive(Debug)]
pub struct BridgeSender<T> {
    name: String,
    tx: Sender<T>,
}

impl<T> Clone for BridgeSender<T> {
    fn clone(&self) -> Self {
        BridgeSender {
            name: self.name.clone(),
            tx: self.tx.clone(),
        }
    }
}

#[derive(Debug)]
pub struct BridgeReceiver<T> {
    name: String,
    rx: Receiver<T>,
}

impl<T> Clone for BridgeReceiver<T> {
    fn clone(&self) -> Self {
        BridgeReceiver {
            name: self.name.clone(),
            rx: self.rx.clone(),
        }
    }
}

/// Result of a receive with a deadline.
#[derive(Debug, PartialEq, Eq)]
pub enum Recv<T> {
    Item(T),
    Timeout,
    Closed,
}

/// Ordered, lossless FIFO holding at most `capacity` messages.
pub fn channel<T>(name: &str, capacity: usize) -> (BridgeSender<T>, BridgeReceiver<T>) {
    let (tx, rx) = crossbeam_channel::bounded(capacity.max(1));
    (
        BridgeSender {
            name: name.to_string(),
            tx,
        },
        BridgeReceiver {
            name: name.to_string(),
            rx,
        },
    )
}

impl<T> BridgeSender<T> {
    pub fn send(&self, msg: T) -> Result<(), ChannelClosed> {
        self.tx.send(msg).map_err(|_| self.closed())
    }

    /// Sends without blocking; `Ok(Some(msg))` hands the message back when
    /// the bridge is full.
    pub fn try_send(&self, msg: T) -> Result<Option<T>, ChannelClosed> {
        match self.tx.try_send(msg) {
            Ok(()) => Ok(None),
            Err(TrySendError::Full(m)) => Ok(Some(m)),
            Err(TrySendError::Disconnected(_)) => Err(self.closed()),
        }
    }

    pub fn len(&self) -> usize {
        self.tx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tx.is_empty()
    }

    /// Closes this endpoint; the receiver drains what is queued and then
    /// sees the bridge closed once every sender is gone.
    pub fn close(self) {}

    fn closed(&self) -> ChannelClosed {
        ChannelClosed {
            name: self.name.clone(),
        }
    }
}

impl<T> BridgeReceiver<T> {
    /// Blocks for the next message; `None` once closed and drained.
    pub fn recv(&self) -> Option<T> {
        self.rx.recv().ok()
    }

    pub fn try_recv(&self) -> Option<T> {
        self.rx.try_recv().ok()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Recv<T> {
        match self.rx.recv_timeout(timeout) {
            Ok(m) => Recv::Item(m),
            Err(RecvTimeoutError::Timeout) => Recv::Timeout,
            Err(RecvTimeoutError::Disconnected) => Recv::Closed,
        }
    }

    pub fn recv_deadline(&self, deadline: Instant) -> Recv<T> {
        self.recv_timeout(deadline.saturating_duration_since(Instant::now()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub(crate) fn inner(&self) -> &Receiver<T> {
        &self.rx
    }

    /// Closes the bridge for every sender.
    pub fn close(self) {}
}
