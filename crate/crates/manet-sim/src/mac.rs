//! MAC-level frames and the per-node interface queue: bounded tail-drop,
//! control class ahead of data, FIFO within each class.

use std::collections::VecDeque;
use std::rc::Rc;

use crate::engine::SimTime;
use crate::mobility::NodeId;
use crate::routing::{Rerr, Rrep, Rreq};
use crate::traffic::DataPacket;

/// MAC destination meaning "every node in range".
pub const BROADCAST: NodeId = NodeId::MAX;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Rreq(Rreq),
    Rrep(Rrep),
    Rerr(Rerr),
    Hello,
    Data(DataPacket),
}

impl Payload {
    pub fn is_control(&self) -> bool {
        !matches!(self, Payload::Data(_))
    }

    /// On-air payload size before the fixed MAC header.
    pub fn payload_bytes(&self, data_packet_bytes: u32) -> u32 {
        match self {
            Payload::Rreq(_) => 24,
            Payload::Rrep(_) => 20,
            Payload::Rerr(r) => 4 + 8 * r.unreachable.len() as u32,
            Payload::Hello => 20,
            Payload::Data(_) => data_packet_bytes,
        }
    }

    /// Short tag for trace lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Rreq(_) => "rreq",
            Payload::Rrep(_) => "rrep",
            Payload::Rerr(_) => "rerr",
            Payload::Hello => "hello",
            Payload::Data(_) => "data",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Priority {
    Control,
    Data,
}

/// One frame as handed to the radio: this hop's transmitter and addressee,
/// not the end-to-end endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub src: NodeId,
    /// Next-hop address or [`BROADCAST`].
    pub dst: NodeId,
    pub payload: Payload,
    pub size_bits: u64,
    pub enqueued_at: SimTime,
}

impl Frame {
    pub fn new(
        src: NodeId,
        dst: NodeId,
        payload: Payload,
        header_bytes: u32,
        data_packet_bytes: u32,
        enqueued_at: SimTime,
    ) -> Frame {
        let bytes = header_bytes + payload.payload_bytes(data_packet_bytes);
        assert!(bytes > 0, "a frame must occupy the air");
        Frame {
            src,
            dst,
            payload,
            size_bits: u64::from(bytes) * 8,
            enqueued_at,
        }
    }

    pub fn priority(&self) -> Priority {
        if self.payload.is_control() {
            Priority::Control
        } else {
            Priority::Data
        }
    }
}

/// Bounded two-class interface queue (DropTail within a priority scheme).
#[derive(Debug)]
pub struct MacQueue {
    capacity: usize,
    control: VecDeque<Rc<Frame>>,
    data: VecDeque<Rc<Frame>>,
}

impl MacQueue {
    pub fn new(capacity: usize) -> MacQueue {
        assert!(capacity >= 1, "queue capacity must be at least 1");
        MacQueue {
            capacity,
            control: VecDeque::new(),
            data: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.control.len() + self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends at the tail of the frame's class; a full queue rejects the
    /// arriving frame (tail drop) and hands it back.
    pub fn enqueue(&mut self, frame: Rc<Frame>) -> Result<(), Rc<Frame>> {
        if self.len() >= self.capacity {
            return Err(frame);
        }
        match frame.priority() {
            Priority::Control => self.control.push_back(frame),
            Priority::Data => self.data.push_back(frame),
        }
        Ok(())
    }

    /// Next frame to transmit: control strictly before data, FIFO within.
    pub fn pop(&mut self) -> Option<Rc<Frame>> {
        self.control.pop_front().or_else(|| self.data.pop_front())
    }

    /// Puts a popped frame back at the head of its class, ahead of newer
    /// arrivals. Used when a dispatch is abandoned (busy carrier at the
    /// moment of transmission); never drops.
    pub fn requeue_front(&mut self, frame: Rc<Frame>) {
        match frame.priority() {
            Priority::Control => self.control.push_front(frame),
            Priority::Data => self.data.push_front(frame),
        }
    }

    /// Empties the queue, yielding remaining frames (node death cleanup).
    pub fn drain_all(&mut self) -> Vec<Rc<Frame>> {
        self.control.drain(..).chain(self.data.drain(..)).collect()
    }

    /// Data frames still queued (end-of-run custody audit).
    pub fn queued_data(&self) -> impl Iterator<Item = &Rc<Frame>> {
        self.data.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data_frame(tag: u64) -> Rc<Frame> {
        Rc::new(Frame::new(
            0,
            1,
            Payload::Data(DataPacket {
                flow: 0,
                seq: tag,
                created_at: SimTime::ZERO,
                ttl: 32,
            }),
            58,
            512,
            SimTime::ZERO,
        ))
    }

    fn hello_frame() -> Rc<Frame> {
        Rc::new(Frame::new(
            0,
            BROADCAST,
            Payload::Hello,
            58,
            512,
            SimTime::ZERO,
        ))
    }

    #[test]
    fn empty_queue_accepts() {
        let mut q = MacQueue::new(50);
        assert!(q.enqueue(data_frame(0)).is_ok());
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn fifty_first_frame_is_tail_dropped() {
        let mut q = MacQueue::new(50);
        for i in 0..50 {
            assert!(q.enqueue(data_frame(i)).is_ok());
        }
        assert!(q.enqueue(data_frame(50)).is_err());
        assert_eq!(q.len(), 50);
    }

    #[test]
    fn control_overtakes_queued_data() {
        let mut q = MacQueue::new(50);
        q.enqueue(data_frame(0)).unwrap();
        q.enqueue(hello_frame()).unwrap();
        assert_eq!(q.pop().unwrap().payload.kind(), "hello");
        assert_eq!(q.pop().unwrap().payload.kind(), "data");
    }

    #[test]
    fn fifo_within_each_class() {
        let mut q = MacQueue::new(50);
        for i in 0..5 {
            q.enqueue(data_frame(i)).unwrap();
        }
        for i in 0..5 {
            match &q.pop().unwrap().payload {
                Payload::Data(p) => assert_eq!(p.seq, i),
                other => panic!("unexpected payload {other:?}"),
            }
        }
    }

    #[test]
    fn frame_sizes_include_the_header() {
        let f = hello_frame();
        assert_eq!(f.size_bits, (58 + 20) * 8);
        let d = data_frame(0);
        assert_eq!(d.size_bits, (58 + 512) * 8);
        let rerr = Frame::new(
            0,
            BROADCAST,
            Payload::Rerr(Rerr {
                unreachable: vec![(1, 2), (3, 4)],
            }),
            58,
            512,
            SimTime::ZERO,
        );
        assert_eq!(rerr.size_bits, (58 + 4 + 16) * 8);
    }
}
