//! FIFO fluid service of a slice's packet queue.

use std::collections::VecDeque;

use crate::traffic::Packet;

/// A packet waiting in (or partially transmitted from) a slice queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueuedPacket {
    pub packet: Packet,
    pub remaining_bits: u64,
}

impl From<Packet> for QueuedPacket {
    fn from(packet: Packet) -> Self {
        QueuedPacket {
            packet,
            remaining_bits: packet.bits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Completion {
    pub packet: Packet,
    /// Completion time minus arrival time, seconds.
    pub latency: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServeOutcome {
    pub completed: Vec<Completion>,
    pub transmitted_bits: u64,
}

/// Serves `queue` (with `fresh` appended) at a fluid rate of `rate_kb` kilobits
/// per slot, starting at `slot_start`.
///
/// A packet can start only once it has arrived and the packet ahead of it has
/// finished. Partially transmitted packets stay at the head of the queue with
/// their residual size.
pub fn serve_queue(
    queue: &mut VecDeque<QueuedPacket>,
    fresh: impl IntoIterator<Item = Packet>,
    rate_kb: f64,
    slot_start: f64,
    slot_len: f64,
) -> ServeOutcome {
    queue.extend(fresh.into_iter().map(QueuedPacket::from));
    let mut completed = Vec::new();
    let transmitted_bits = serve_fifo(queue, rate_kb, slot_start, slot_len, |c| completed.push(c));
    ServeOutcome {
        completed,
        transmitted_bits,
    }
}

/// Core of [`serve_queue`]; reports completions through `on_complete` and
/// returns the bits transmitted.
pub(crate) fn serve_fifo(
    queue: &mut VecDeque<QueuedPacket>,
    rate_kb: f64,
    slot_start: f64,
    slot_len: f64,
    mut on_complete: impl FnMut(Completion),
) -> u64 {
    let slot_end = slot_start + slot_len;
    let rate_bits = rate_kb * 1000.0 / slot_len;
    let mut budget = (rate_kb * 1000.0).floor().max(0.0) as u64;
    if budget == 0 || rate_bits <= 0.0 {
        return 0;
    }
    let mut now = slot_start;
    let mut transmitted = 0u64;
    while let Some(head) = queue.front_mut() {
        let start = now.max(head.packet.arrival_time);
        if start >= slot_end || budget == 0 {
            break;
        }
        // the 1e-9 absorbs rounding in (slot_end - start) so exact fits are not lost
        let window = (((slot_end - start) * rate_bits + 1e-9).floor() as u64).min(budget);
        if head.remaining_bits <= window {
            let bits = head.remaining_bits;
            let finish = start + bits as f64 / rate_bits;
            budget -= bits;
            transmitted += bits;
            now = finish;
            let packet = head.packet;
            queue.pop_front();
            on_complete(Completion {
                packet,
                latency: finish - packet.arrival_time,
            });
        } else {
            head.remaining_bits -= window;
            transmitted += window;
            break;
        }
    }
    transmitted
}

/// Mean latency of the packets completed this slot.
///
/// With no completions the age of the head-of-line packet is reported, so a
/// starved slice shows up in the latency signal; with no traffic at all, 0.
pub fn slot_latency(
    completed: &[Completion],
    remaining: &VecDeque<QueuedPacket>,
    slot_end: f64,
) -> f64 {
    if !completed.is_empty() {
        return completed.iter().map(|c| c.latency).sum::<f64>() / completed.len() as f64;
    }
    head_of_line_age(remaining, slot_end)
}

pub(crate) fn head_of_line_age(remaining: &VecDeque<QueuedPacket>, slot_end: f64) -> f64 {
    remaining
        .front()
        .map(|h| (slot_end - h.packet.arrival_time).max(0.0))
        .unwrap_or(0.0)
}
