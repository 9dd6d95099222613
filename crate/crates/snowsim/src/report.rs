//! Benchmark driver and per-layer performance reports.

use crate::codegen::netcompile::{run_network, NetRun, RowRun, RunOptions};
use crate::error::Result;
use crate::layers::{Item, NetworkDescriptor};
use crate::machine::MachineConfig;
use crate::memsys::bandwidth_gbs;

/// One row of the performance table.
#[derive(Debug, Clone)]
pub struct LayerReport {
    pub name: String,
    pub mops: f64,
    pub theoretical_ms: f64,
    pub actual_ms: f64,
    pub gops: f64,
    pub efficiency_pct: f64,
    pub maps_in_bytes: u64,
    pub weights_in_bytes: u64,
    pub maps_out_bytes: u64,
    pub bandwidth_gbs: f64,
    pub mem_bound: bool,
    /// Part of the throughput table (the global average pool reports
    /// separately, as in the published results).
    pub benchmark: bool,
}

#[derive(Debug)]
pub struct SimReport {
    pub net: String,
    pub layers: Vec<LayerReport>,
    pub layers_verified: usize,
    pub peak_gops: f64,
    pub clock_hz: f64,
}

/// Theoretical time at peak throughput: `ops / peak`.
pub fn theoretical_time_ms(mops: f64, peak_gops: f64) -> f64 {
    mops / peak_gops
}

/// Frames per second from a total frame time.
pub fn fps(total_ms: f64) -> f64 {
    1000.0 / total_ms
}

fn to_report(cfg: &MachineConfig, r: &RowRun, benchmark: bool) -> LayerReport {
    let theoretical_ms = theoretical_time_ms(r.mops, cfg.peak_gops());
    let actual_ms = cfg.cycles_to_ms(r.cycles);
    // M-ops over milliseconds is G-ops/s directly.
    let gops = if actual_ms > 0.0 { r.mops / actual_ms } else { 0.0 };
    LayerReport {
        name: r.name.clone(),
        mops: r.mops,
        theoretical_ms,
        actual_ms,
        gops,
        efficiency_pct: if actual_ms > 0.0 { 100.0 * theoretical_ms / actual_ms } else { 0.0 },
        maps_in_bytes: r.ledger.maps_in,
        weights_in_bytes: r.ledger.weights_in,
        maps_out_bytes: r.ledger.maps_out,
        bandwidth_gbs: bandwidth_gbs(r.ledger.total(), r.cycles, cfg.clock_hz),
        mem_bound: r.mem_bound,
        benchmark,
    }
}

impl SimReport {
    pub fn from_run(cfg: &MachineConfig, net: &NetworkDescriptor, run: &NetRun) -> SimReport {
        // Average-pool rows report outside the benchmark table.
        let avg_names: Vec<&str> = net
            .items
            .iter()
            .filter_map(|i| match i {
                Item::AvgPool(a) => Some(a.name.as_str()),
                _ => None,
            })
            .collect();
        let layers = run
            .rows
            .iter()
            .map(|r| to_report(cfg, r, !avg_names.contains(&r.name.as_str())))
            .collect();
        SimReport {
            net: run.name.clone(),
            layers,
            layers_verified: run.layers_verified,
            peak_gops: cfg.peak_gops(),
            clock_hz: cfg.clock_hz,
        }
    }

    /// Totals over a subset of rows.
    pub fn totals(&self, include_non_benchmark: bool) -> LayerReport {
        let rows: Vec<&LayerReport> = self
            .layers
            .iter()
            .filter(|l| include_non_benchmark || l.benchmark)
            .collect();
        let mops: f64 = rows.iter().map(|l| l.mops).sum();
        let actual_ms: f64 = rows.iter().map(|l| l.actual_ms).sum();
        let theoretical_ms = theoretical_time_ms(mops, self.peak_gops);
        LayerReport {
            name: "total".into(),
            mops,
            theoretical_ms,
            actual_ms,
            gops: if actual_ms > 0.0 { mops / actual_ms } else { 0.0 },
            efficiency_pct: if actual_ms > 0.0 { 100.0 * theoretical_ms / actual_ms } else { 0.0 },
            maps_in_bytes: rows.iter().map(|l| l.maps_in_bytes).sum(),
            weights_in_bytes: rows.iter().map(|l| l.weights_in_bytes).sum(),
            maps_out_bytes: rows.iter().map(|l| l.maps_out_bytes).sum(),
            bandwidth_gbs: {
                let bytes: u64 = rows
                    .iter()
                    .map(|l| l.maps_in_bytes + l.weights_in_bytes + l.maps_out_bytes)
                    .sum();
                let secs = actual_ms * 1e-3;
                if secs > 0.0 { bytes as f64 / secs / 1e9 } else { 0.0 }
            },
            mem_bound: false,
            benchmark: true,
        }
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>10} {:>11} {:>11} {:>9} {:>7} {:>10} {:>10} {:>10} {:>8}\n",
            "layer", "ops(M)", "theor(ms)", "actual(ms)", "G-ops/s", "eff%", "maps_in", "w_in", "maps_out", "GB/s"
        ));
        let mut rows: Vec<LayerReport> = self.layers.clone();
        rows.push(self.totals(false));
        for l in &rows {
            out.push_str(&format!(
                "{:<12} {:>10.2} {:>11.3} {:>11.3} {:>9.1} {:>7.2} {:>10} {:>10} {:>10} {:>8.3}{}\n",
                l.name,
                l.mops,
                l.theoretical_ms,
                l.actual_ms,
                l.gops,
                l.efficiency_pct,
                l.maps_in_bytes,
                l.weights_in_bytes,
                l.maps_out_bytes,
                l.bandwidth_gbs,
                if l.mem_bound { "  [memory-bound]" } else { "" },
            ));
        }
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::from(
            "layer,mops,theoretical_ms,actual_ms,gops,efficiency_pct,maps_in_bytes,weights_in_bytes,maps_out_bytes,bandwidth_gbs,mem_bound\n",
        );
        let mut rows: Vec<LayerReport> = self.layers.clone();
        rows.push(self.totals(false));
        for l in &rows {
            out.push_str(&format!(
                "{},{:.3},{:.4},{:.4},{:.2},{:.3},{},{},{},{:.4},{}\n",
                l.name,
                l.mops,
                l.theoretical_ms,
                l.actual_ms,
                l.gops,
                l.efficiency_pct,
                l.maps_in_bytes,
                l.weights_in_bytes,
                l.maps_out_bytes,
                l.bandwidth_gbs,
                l.mem_bound,
            ));
        }
        out
    }
}

/// Compile, simulate, verify and report one network.
pub fn run_benchmark(cfg: &MachineConfig, net: &NetworkDescriptor, opts: &RunOptions) -> Result<SimReport> {
    let run = run_network(cfg, net, opts)?;
    Ok(SimReport::from_run(cfg, net, &run))
}

/// Analytic DRAM requirement to run a fully connected layer at full
/// throughput with nothing cached: every multiply-accumulate (two ops)
/// consumes a fresh 16-bit weight and a 16-bit activation word, so the
/// channel must stream two bytes per op.
pub struct FcBandwidth {
    pub name: String,
    pub weight_mbytes: f64,
    /// Weights alone at peak throughput.
    pub weights_gbs: f64,
    /// Weights plus uncached activation operands at peak throughput.
    pub operands_gbs: f64,
}

pub fn fc_bandwidth(cfg: &MachineConfig, net: &NetworkDescriptor) -> Option<FcBandwidth> {
    let spec = net.items.iter().find_map(|i| match i {
        Item::Fc(s) => Some(s),
        _ => None,
    })?;
    let weights = (spec.oc * spec.ic * spec.kh * spec.kw) as f64;
    let ops = 2.0 * weights;
    let secs = ops / (cfg.peak_gops() * 1e9);
    let wbytes = 2.0 * weights;
    Some(FcBandwidth {
        name: spec.name.clone(),
        weight_mbytes: wbytes / 1e6,
        weights_gbs: wbytes / secs / 1e9,
        operands_gbs: 2.0 * wbytes / secs / 1e9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theoretical_time_examples() {
        assert!((theoretical_time_ms(409.0, 128.0) - 3.195).abs() < 5e-3);
        assert_eq!(theoretical_time_ms(0.0, 128.0), 0.0);
        // 6879 M-ops at 128 G-ops/s.
        assert!((theoretical_time_ms(6879.0, 128.0) - 53.74).abs() < 0.1);
    }

    #[test]
    fn fps_inverse() {
        assert!((fps(9.95) - 100.5).abs() < 0.1);
        assert!((fps(27.75) - 36.04).abs() < 0.1);
    }
}
