//! Machine configuration: clock, MAC counts, buffer sizes, DRAM parameters.

use crate::error::{Error, Result};
use crate::fixpoint::AccMode;

pub const CU_COUNT: usize = 4;
pub const VMACS_PER_CU: usize = 4;
pub const MACS_PER_VMAC: usize = 16;
/// Words per maps-buffer cache line (256 bits of 16-bit words).
pub const LINE_WORDS: usize = 16;
/// Maps-buffer banks ("lanes"), selected by the low two bits of the line address.
pub const LANES: usize = 4;
/// Pending-load gating granularity: the maps buffer is split into eight
/// 8192-word regions exposed as buffer IDs 0..8; IDs 8..16 are the weight
/// buffer halves (vMAC v, half h) = 8 + v*2 + h.
pub const MAPS_REGIONS: usize = 8;
pub const MAPS_REGION_WORDS: usize = 8192;
/// Words per MAC weights buffer (1 KB).
pub const WEIGHT_SLOTS: usize = 512;

#[derive(Debug, Clone)]
pub struct MachineConfig {
    pub clock_hz: f64,
    /// Maps buffer capacity per CU, in 16-bit words.
    pub maps_words: usize,
    /// DRAM bandwidth in bytes per second.
    pub mem_bandwidth_bytes_per_s: f64,
    /// Fixed DRAM latency in cycles.
    pub mem_latency: u64,
    /// Per-decoder vector issue queue depth.
    pub vq_depth: usize,
    /// Window (vMAX) issue queue depth. Pooling issues one instruction
    /// per 16-output window, so hiding a row of pooling behind the MACs
    /// needs a proportionally deeper FIFO.
    pub max_vq_depth: usize,
    /// Modeled INDP shift-register restart: cycles from a trace reaching the
    /// decoder to its first aligned word (dequeue, operand setup, SRAM read,
    /// register load), before any alignment dead cycles.
    pub indp_setup: u64,
    /// Accumulator overflow behavior.
    pub acc_mode: AccMode,
    /// Global fraction-bit count F.
    pub frac_bits: u32,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            clock_hz: 250.0e6,
            maps_words: 65_536, // 128 KB
            mem_bandwidth_bytes_per_s: 4.2e9,
            mem_latency: 100,
            vq_depth: 8,
            max_vq_depth: 128,
            indp_setup: 6,
            acc_mode: AccMode::Wrap,
            frac_bits: 8,
        }
    }
}

impl MachineConfig {
    pub fn total_macs(&self) -> usize {
        CU_COUNT * VMACS_PER_CU * MACS_PER_VMAC
    }

    /// Peak throughput in G-ops/s: 2 x MACs x clock.
    pub fn peak_gops(&self) -> f64 {
        2.0 * self.total_macs() as f64 * self.clock_hz / 1e9
    }

    pub fn bytes_per_cycle(&self) -> f64 {
        self.mem_bandwidth_bytes_per_s / self.clock_hz
    }

    pub fn cycles_to_ms(&self, cycles: u64) -> f64 {
        cycles as f64 / self.clock_hz * 1e3
    }

    /// Parse a `key = value` config file; unknown keys are errors.
    pub fn from_config_text(text: &str) -> Result<MachineConfig> {
        let mut cfg = MachineConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Descriptor(format!("config line {}: expected key = value", idx + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Descriptor(format!("config line {}: bad {what} `{value}`", idx + 1));
            match key {
                "clock_mhz" => cfg.clock_hz = value.parse::<f64>().map_err(|_| bad("number"))? * 1e6,
                "mem_bandwidth_gbps" => {
                    cfg.mem_bandwidth_bytes_per_s = value.parse::<f64>().map_err(|_| bad("number"))? * 1e9
                }
                "mem_latency" => cfg.mem_latency = value.parse().map_err(|_| bad("integer"))?,
                "vq_depth" => cfg.vq_depth = value.parse().map_err(|_| bad("integer"))?,
                "indp_setup" => cfg.indp_setup = value.parse().map_err(|_| bad("integer"))?,
                "frac_bits" => cfg.frac_bits = value.parse().map_err(|_| bad("integer"))?,
                "acc_saturate" => {
                    cfg.acc_mode = if value.parse::<bool>().map_err(|_| bad("bool"))? {
                        AccMode::Saturate
                    } else {
                        AccMode::Wrap
                    }
                }
                other => return Err(Error::Descriptor(format!("unknown config key `{other}`"))),
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_performance_is_exact() {
        let cfg = MachineConfig::default();
        assert_eq!(cfg.total_macs(), 256);
        assert_eq!(cfg.peak_gops(), 128.0);
        assert!((cfg.bytes_per_cycle() - 16.8).abs() < 1e-12);
    }

    #[test]
    fn config_text_overrides() {
        let cfg = MachineConfig::from_config_text(
            "clock_mhz = 100\nmem_latency = 5 # short\nacc_saturate = true\n",
        )
        .unwrap();
        assert_eq!(cfg.clock_hz, 100.0e6);
        assert_eq!(cfg.mem_latency, 5);
        assert_eq!(cfg.acc_mode, AccMode::Saturate);
        assert!(MachineConfig::from_config_text("nope = 3").is_err());
    }
}
