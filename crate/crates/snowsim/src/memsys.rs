//! Bandwidth- and latency-parameterized DRAM model.
//!
//! A single FIFO memory channel is shared by loads, stores and I-cache
//! refills. A transfer issued at cycle `t` becomes ready at
//! `max(t + latency, channel_free)` and completes after `ceil(bytes/bw)`
//! more cycles; queued transfers therefore pipeline behind one another and
//! bytes delivered in any window never exceed `bandwidth x window`.
//!
//! Load data materializes at completion, which is also when the consumer's
//! pending-load counter drops; stores snapshot their data at issue.
//!
//! The DRAM image file format is a `u32` little-endian word count followed
//! by the raw little-endian 16-bit words.

use crate::error::{Error, Result};
use crate::machine::MachineConfig;
use std::collections::VecDeque;

/// Per-run transfer counters in bytes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransferLedger {
    pub maps_in: u64,
    pub weights_in: u64,
    pub maps_out: u64,
    pub icache: u64,
}

impl TransferLedger {
    pub fn total(&self) -> u64 {
        self.maps_in + self.weights_in + self.maps_out + self.icache
    }

    pub fn add(&mut self, other: &TransferLedger) {
        self.maps_in += other.maps_in;
        self.weights_in += other.weights_in;
        self.maps_out += other.maps_out;
        self.icache += other.icache;
    }
}

#[derive(Debug)]
pub enum Completion {
    /// Deliver loaded words into on-chip buffers.
    Fill {
        cu_mask: u8,
        buffer_id: u8,
        dst_addr: u32,
        data: Vec<i16>,
    },
    IcacheFill {
        half: usize,
    },
    StoreDone,
}

#[derive(Debug)]
enum Pending {
    Fill {
        cu_mask: u8,
        buffer_id: u8,
        dst_addr: u32,
        src: usize,
        len: usize,
    },
    Icache {
        half: usize,
    },
    Store {
        dram_addr: usize,
        data: Vec<i16>,
    },
}

#[derive(Debug)]
pub struct MemSys {
    pub dram: Vec<i16>,
    bytes_per_cycle: f64,
    latency: u64,
    channel_free_at: u64,
    inflight: VecDeque<(u64, Pending)>,
    pub ledger: TransferLedger,
}

impl MemSys {
    pub fn new(cfg: &MachineConfig, dram: Vec<i16>) -> MemSys {
        MemSys {
            dram,
            bytes_per_cycle: cfg.bytes_per_cycle(),
            latency: cfg.mem_latency,
            channel_free_at: 0,
            inflight: VecDeque::new(),
            ledger: TransferLedger::default(),
        }
    }

    fn schedule(&mut self, now: u64, bytes: u64) -> u64 {
        let ready = (now + self.latency).max(self.channel_free_at);
        let done = ready + (bytes as f64 / self.bytes_per_cycle).ceil() as u64;
        self.channel_free_at = done;
        done
    }

    /// Schedule a DRAM -> buffer trace; `cu_mask` has one bit per CU so a
    /// single transfer can fill several buffers (multicast weight loads are
    /// charged once).
    pub fn issue_load(
        &mut self,
        now: u64,
        dram_addr: usize,
        len: usize,
        cu_mask: u8,
        buffer_id: u8,
        dst_addr: u32,
    ) -> Result<u64> {
        if len == 0 {
            return Err(Error::Sim("zero-length load".into()));
        }
        if dram_addr + len > self.dram.len() {
            return Err(Error::Sim(format!(
                "load [{dram_addr}, {}) outside DRAM of {} words",
                dram_addr + len,
                self.dram.len()
            )));
        }
        let bytes = (len * 2) as u64;
        if buffer_id >= 8 {
            self.ledger.weights_in += bytes;
        } else {
            self.ledger.maps_in += bytes;
        }
        let done = self.schedule(now, bytes);
        self.inflight.push_back((
            done,
            Pending::Fill {
                cu_mask,
                buffer_id,
                dst_addr,
                src: dram_addr,
                len,
            },
        ));
        Ok(done)
    }

    /// Schedule a buffer -> DRAM trace; data is snapshotted by the caller.
    pub fn issue_store(&mut self, now: u64, dram_addr: usize, data: Vec<i16>) -> Result<u64> {
        if data.is_empty() {
            return Err(Error::Sim("zero-length store".into()));
        }
        if dram_addr + data.len() > self.dram.len() {
            return Err(Error::Sim(format!(
                "store [{dram_addr}, {}) outside DRAM of {} words",
                dram_addr + data.len(),
                self.dram.len()
            )));
        }
        let bytes = (data.len() * 2) as u64;
        self.ledger.maps_out += bytes;
        let done = self.schedule(now, bytes);
        self.inflight.push_back((done, Pending::Store { dram_addr, data }));
        Ok(done)
    }

    /// Refill one 2 KB instruction-cache half.
    pub fn issue_icache_fill(&mut self, now: u64, half: usize) -> u64 {
        let bytes = 2048u64;
        self.ledger.icache += bytes;
        let done = self.schedule(now, bytes);
        self.inflight.push_back((done, Pending::Icache { half }));
        done
    }

    /// Pop every transfer that completes at or before `now`.
    pub fn drain(&mut self, now: u64) -> Vec<Completion> {
        let mut out = Vec::new();
        while let Some((done, _)) = self.inflight.front() {
            if *done > now {
                break;
            }
            let (_, p) = self.inflight.pop_front().unwrap();
            out.push(match p {
                Pending::Fill {
                    cu_mask,
                    buffer_id,
                    dst_addr,
                    src,
                    len,
                } => Completion::Fill {
                    cu_mask,
                    buffer_id,
                    dst_addr,
                    data: self.dram[src..src + len].to_vec(),
                },
                Pending::Icache { half } => Completion::IcacheFill { half },
                Pending::Store { dram_addr, data } => {
                    self.dram[dram_addr..dram_addr + data.len()].copy_from_slice(&data);
                    Completion::StoreDone
                }
            });
        }
        out
    }

    pub fn idle(&self) -> bool {
        self.inflight.is_empty()
    }

    pub fn into_dram(self) -> Vec<i16> {
        self.dram
    }
}

/// Average bandwidth in GB/s over an elapsed cycle count.
pub fn bandwidth_gbs(total_bytes: u64, cycles: u64, clock_hz: f64) -> f64 {
    if cycles == 0 {
        return 0.0;
    }
    total_bytes as f64 / (cycles as f64 / clock_hz) / 1e9
}

/// DRAM image file: u32 LE word count header, then LE 16-bit words.
pub fn write_dram_image(dram: &[i16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + dram.len() * 2);
    out.extend_from_slice(&(dram.len() as u32).to_le_bytes());
    for w in dram {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn read_dram_image(bytes: &[u8]) -> Result<Vec<i16>> {
    if bytes.len() < 4 {
        return Err(Error::Decode("dram image too short for header".into()));
    }
    let n = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    if bytes.len() != 4 + 2 * n {
        return Err(Error::Decode(format!(
            "dram image header says {n} words but file holds {} bytes of data",
            bytes.len() - 4
        )));
    }
    Ok(bytes[4..]
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mem(words: usize) -> MemSys {
        MemSys::new(&MachineConfig::default(), vec![0; words])
    }

    #[test]
    fn single_line_completion_time() {
        // 32 bytes at 16.8 B/cycle with latency 100 on an idle channel:
        // ceil(32/16.8) = 2, so completion at issue + 102.
        let mut m = mem(64);
        let done = m.issue_load(0, 0, 16, 1, 0, 0).unwrap();
        assert_eq!(done, 102);
    }

    #[test]
    fn fifo_ordering_of_back_to_back_loads() {
        let mut m = mem(4096);
        let first = m.issue_load(0, 0, 512, 1, 0, 0).unwrap();
        let second = m.issue_load(0, 512, 512, 1, 0, 512).unwrap();
        let xfer = (1024.0f64 / 16.8).ceil() as u64;
        assert_eq!(first, 100 + xfer);
        assert_eq!(second, first + xfer);
    }

    #[test]
    fn zero_length_rejected() {
        let mut m = mem(16);
        assert!(m.issue_load(0, 0, 0, 1, 0, 0).is_err());
        assert!(m.issue_store(0, 0, Vec::new()).is_err());
        assert!(m.issue_load(0, 8, 16, 1, 0, 0).is_err());
    }

    #[test]
    fn store_then_load_sees_data() {
        let mut m = mem(32);
        m.issue_store(0, 4, vec![7; 8]).unwrap();
        let done = m.issue_load(0, 4, 8, 1, 0, 0).unwrap();
        let events = m.drain(done);
        assert_eq!(events.len(), 2);
        match &events[1] {
            Completion::Fill { data, .. } => assert_eq!(data, &vec![7i16; 8]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(m.idle());
    }

    #[test]
    fn ledger_classification() {
        let mut m = mem(4096);
        m.issue_load(0, 0, 100, 1, 0, 0).unwrap(); // maps region
        m.issue_load(0, 0, 50, 1, 9, 0).unwrap(); // weights buffer
        m.issue_store(0, 0, vec![0; 25]).unwrap();
        assert_eq!(m.ledger.maps_in, 200);
        assert_eq!(m.ledger.weights_in, 100);
        assert_eq!(m.ledger.maps_out, 50);
    }

    #[test]
    fn bandwidth_report_values() {
        assert_eq!(bandwidth_gbs(0, 100, 250e6), 0.0);
        assert_eq!(bandwidth_gbs(42, 0, 250e6), 0.0);
        // 16.8 bytes per cycle sustained equals the 4.2 GB/s channel.
        let gbs = bandwidth_gbs(16_800_000, 1_000_000, 250e6);
        assert!((gbs - 4.2).abs() < 1e-9);
    }

    #[test]
    fn dram_image_roundtrip() {
        let dram = vec![-5i16, 0, 17, i16::MIN];
        let bytes = write_dram_image(&dram);
        assert_eq!(read_dram_image(&bytes).unwrap(), dram);
        assert!(read_dram_image(&bytes[..bytes.len() - 1]).is_err());
    }
}
