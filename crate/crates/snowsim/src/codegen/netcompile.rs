//! Compile and run whole benchmark networks.
//!
//! Each table row becomes a sequence of passes. Every pass runs in its
//! own simulation against a fresh DRAM image carrying its input tensor;
//! activations chain between passes exactly as they would through DRAM
//! (each pass loads its input and stores its output), and every pass's
//! output is verified bit-for-bit against the oracle before it feeds the
//! next.
//!
//! Inception modules expand to one pass per branch convolution, with the
//! pool branch's windows distributed across the 1x1 reduce passes (which
//! read the same input tiles) so the vMAX work hides behind their MACs.
//! Residual groups follow the published extrapolation protocol: the
//! projection and one representative bottleneck simulate once and the
//! block's cycles and traffic scale by the replica count.

use crate::codegen::conv::Drip;
use crate::codegen::pools::{emit_avgpool_pass, emit_maxpool_pass, PoolPass};
use crate::codegen::{build_conv_pass, read_output, BuiltPass};
use crate::error::{Error, Result};
use crate::fixpoint::FixedTensor;
use crate::layers::{
    inception_convs, resgroup_convs, ConvSpec, Item, NetworkDescriptor, PoolKind, PoolSpec,
};
use crate::machine::MachineConfig;
use crate::memsys::TransferLedger;
use crate::oracle::{self, oracle_avgpool, oracle_conv_split, oracle_maxpool, ConvWeights};
use crate::rng::SplitMix64;
use crate::sim::Simulator;

const PASS_BUDGET: u64 = 400_000_000;

#[derive(Debug, Clone)]
pub struct RowRun {
    pub name: String,
    pub mops: f64,
    pub cycles: u64,
    pub ledger: TransferLedger,
    /// The row's ideal memory time exceeds its ideal compute time.
    pub mem_bound: bool,
}

#[derive(Debug)]
pub struct NetRun {
    pub name: String,
    pub rows: Vec<RowRun>,
    pub layers_verified: usize,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: u64,
    pub verify: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: 1,
            verify: true,
        }
    }
}

fn simulate(cfg: &MachineConfig, program: &[u32], dram: Vec<i16>) -> Result<(u64, Vec<i16>, TransferLedger)> {
    let mut sim = Simulator::new(cfg, program, dram)?;
    let (cycles, clean) = sim.run(PASS_BUDGET)?;
    if !clean {
        return Err(Error::Sim(format!("pass did not drain within {PASS_BUDGET} cycles")));
    }
    let ledger = sim.mem.ledger;
    Ok((cycles, sim.mem.into_dram(), ledger))
}

struct Runner<'a> {
    cfg: &'a MachineConfig,
    rng: SplitMix64,
    verify: bool,
    rows: Vec<RowRun>,
    layers_verified: usize,
}

impl<'a> Runner<'a> {
    fn row(&mut self, name: &str) -> &mut RowRun {
        if !self.rows.iter().any(|r| r.name == name) {
            self.rows.push(RowRun {
                name: name.to_string(),
                mops: 0.0,
                cycles: 0,
                ledger: TransferLedger::default(),
                mem_bound: false,
            });
        }
        self.rows.iter_mut().find(|r| r.name == name).unwrap()
    }

    fn account(&mut self, name: &str, cycles: u64, ledger: &TransferLedger, scale: u64) {
        let row = self.row(name);
        row.cycles += cycles * scale;
        for _ in 0..scale {
            row.ledger.add(ledger);
        }
    }

    /// Run one convolution pass; returns the verified output (and the
    /// pooled branch output when a drip rides along).
    #[allow(clippy::too_many_arguments)]
    fn conv_pass(
        &mut self,
        spec: &ConvSpec,
        pool: Option<PoolSpec>,
        drip: Option<(PoolSpec, (usize, usize))>,
        input: &FixedTensor,
        bypass: Option<&FixedTensor>,
        row: &str,
        scale: u64,
    ) -> Result<(FixedTensor, Option<FixedTensor>)> {
        let weights = ConvWeights::random(spec, &mut self.rng);
        let mut built = build_conv_pass(self.cfg, spec, pool.clone(), input, &weights, bypass)?;
        let drip_spec = if let Some((dspec, rows)) = drip {
            let words = built.pass.band_stride() * 4 * spec.iw * spec.ic;
            let out_base = built.dram.len();
            built.dram.extend(std::iter::repeat(0).take(words));
            let mut pass = built.pass.clone();
            pass.in_halo = dspec.pad;
            pass.drip = Some(Drip {
                spec: dspec.clone(),
                rows,
                out_base,
            });
            built = BuiltPass {
                program: crate::codegen::emit_pass(&pass, self.cfg)?,
                splits: built.splits,
                dram: built.dram,
                pass,
            };
            Some(dspec)
        } else {
            None
        };
        let (cycles, dram, ledger) = simulate(self.cfg, &built.program, built.dram.clone())?;
        self.account(row, cycles, &ledger, scale);
        let conv = oracle_conv_split(
            input,
            &weights,
            spec,
            bypass,
            &built.splits,
            self.cfg.acc_mode,
            self.cfg.frac_bits,
        );
        let out = match &pool {
            Some(p) => oracle_maxpool(&conv, p, spec.pad_mode),
            None => conv,
        };
        if self.verify {
            let got = read_output(&built.pass, &dram);
            if got.data != out.data {
                let bad = first_diff(&got, &out);
                return Err(Error::Verify(format!(
                    "{}: simulated output differs from the oracle at (y,x,c) = {bad:?}",
                    spec.name
                )));
            }
            self.layers_verified += 1;
        }
        let drip_out = if let Some(dspec) = drip_spec {
            let want = oracle_maxpool(input, &dspec, spec.pad_mode);
            if self.verify {
                // Each pass produced only its assigned band-local rows.
                let d = built.pass.drip.as_ref().unwrap();
                let base = d.out_base;
                let band = built.pass.band_stride();
                for cu in 0..4usize {
                    for p in d.rows.0..d.rows.1 {
                        let y = cu * band + p;
                        if y >= want.ih {
                            continue;
                        }
                        for x in 0..want.iw {
                            for c in 0..want.ic {
                                let got = dram[base + (y * want.iw + x) * want.ic + c];
                                if got != want.get(y, x, c) {
                                    return Err(Error::Verify(format!(
                                        "{}: pooled branch differs at ({y},{x},{c})",
                                        spec.name
                                    )));
                                }
                            }
                        }
                    }
                }
                self.layers_verified += 1;
            }
            Some(want)
        } else {
            None
        };
        Ok((out, drip_out))
    }

    /// Standalone max pool; cycles join `row`.
    fn pool_pass(&mut self, name: &str, input: &FixedTensor, spec: &PoolSpec, row: &str) -> Result<FixedTensor> {
        let mut pass = PoolPass {
            name: name.to_string(),
            input: crate::layers::Shape {
                c: input.ic,
                h: input.ih,
                w: input.iw,
            },
            spec: spec.clone(),
            in_base: 0,
            out_base: 0,
            min_base: 0,
            tap_base: 0,
            avg: false,
        };
        let mut dram = vec![i16::MIN; 4096];
        pass.min_base = 0;
        pass.in_base = dram.len();
        dram.extend_from_slice(&input.data);
        pass.out_base = dram.len();
        dram.extend(std::iter::repeat(0).take(pass.out_words()));
        let program = emit_maxpool_pass(&pass)?;
        let (cycles, out_dram, ledger) = simulate(self.cfg, &program, dram)?;
        self.account(row, cycles, &ledger, 1);
        let want = oracle_maxpool(input, spec, crate::layers::PadMode::Zero);
        if self.verify {
            for y in 0..want.ih {
                for x in 0..want.iw {
                    for c in 0..want.ic {
                        let got = out_dram[pass.out_base + (y * want.iw + x) * want.ic + c];
                        if got != want.get(y, x, c) {
                            return Err(Error::Verify(format!(
                                "{name}: pooled output differs at ({y},{x},{c})"
                            )));
                        }
                    }
                }
            }
            self.layers_verified += 1;
        }
        Ok(want)
    }
}

fn first_diff(got: &FixedTensor, want: &FixedTensor) -> (usize, usize, usize) {
    for y in 0..want.ih {
        for x in 0..want.iw {
            for c in 0..want.ic {
                if got.get(y, x, c) != want.get(y, x, c) {
                    return (y, x, c);
                }
            }
        }
    }
    (0, 0, 0)
}

/// Distribute the pool branch's band-local rows across the reduce passes
/// in proportion to their MAC work.
fn drip_split(band_rows: usize, macs: &[u64]) -> Vec<(usize, usize)> {
    let total: u64 = macs.iter().sum::<u64>().max(1);
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut acc = 0u64;
    for (i, &m) in macs.iter().enumerate() {
        acc += m;
        let end = if i + 1 == macs.len() {
            band_rows
        } else {
            ((acc as f64 / total as f64) * band_rows as f64).round() as usize
        };
        out.push((start, end.max(start)));
        start = end.max(start);
    }
    out
}

/// Compile, simulate and verify a whole network.
pub fn run_network(cfg: &MachineConfig, net: &NetworkDescriptor, opts: &RunOptions) -> Result<NetRun> {
    let mut r = Runner {
        cfg,
        rng: SplitMix64::new(opts.seed),
        verify: opts.verify,
        rows: Vec::new(),
        layers_verified: 0,
    };
    let ops = oracle::opcount(net);
    let mut cur = FixedTensor::random(net.input.c, net.input.h, net.input.w, &mut r.rng);
    let mut last_row: Option<String> = None;
    for item in &net.items {
        match item {
            Item::Conv { spec, row, pool } => {
                let (out, _) = r.conv_pass(spec, pool.clone(), None, &cur, None, row, 1)?;
                cur = out;
                last_row = Some(row.clone());
            }
            Item::Pool { name, spec, .. } => {
                // Standalone pools fold into the preceding row.
                let row = last_row.clone().ok_or_else(|| {
                    Error::Codegen(format!("{name}: standalone pool without a preceding row"))
                })?;
                cur = r.pool_pass(name, &cur, spec, &row)?;
            }
            Item::Inception(m) => {
                let convs = inception_convs(m, net.pad_mode);
                let (b1, b3r, b3, b5r, b5, pp) =
                    (&convs[0], &convs[1], &convs[2], &convs[3], &convs[4], &convs[5]);
                let pool_spec = PoolSpec {
                    kind: PoolKind::Max,
                    p: 3,
                    stride: 1,
                    pad: 1,
                    ceil: false,
                };
                // Pool rows ride the reduce passes (shared input tiles).
                let band = m.input.h.div_ceil(4);
                let ranges = drip_split(band, &[b1.macs(), b3r.macs(), b5r.macs()]);
                let (o1, _) =
                    r.conv_pass(b1, None, Some((pool_spec.clone(), ranges[0])), &cur, None, &m.name, 1)?;
                let (o3r, _) =
                    r.conv_pass(b3r, None, Some((pool_spec.clone(), ranges[1])), &cur, None, &m.name, 1)?;
                let (o5r, pooled) =
                    r.conv_pass(b5r, None, Some((pool_spec.clone(), ranges[2])), &cur, None, &m.name, 1)?;
                let pooled = pooled.expect("a reduce pass carries the pool tail");
                let (o3, _) = r.conv_pass(b3, None, None, &o3r, None, &m.name, 1)?;
                let (o5, _) = r.conv_pass(b5, None, None, &o5r, None, &m.name, 1)?;
                let (opp, _) = r.conv_pass(pp, None, None, &pooled, None, &m.name, 1)?;
                // Concatenate along channels.
                let mut out = FixedTensor::zeroed(m.out_channels(), m.input.h, m.input.w);
                for (off, t) in [(0, &o1), (m.b1, &o3), (m.b1 + m.b3, &o5), (m.b1 + m.b3 + m.b5, &opp)] {
                    for y in 0..t.ih {
                        for x in 0..t.iw {
                            for c in 0..t.ic {
                                out.set(y, x, off + c, t.get(y, x, c));
                            }
                        }
                    }
                }
                cur = out;
                last_row = Some(m.name.clone());
            }
            Item::ResGroup(g) => {
                let convs = resgroup_convs(g, net.pad_mode);
                let (red, mid, exp, proj) = (&convs[0], &convs[1], &convs[2], &convs[3]);
                // The representative block's input.
                let block_in = if red.ic == cur.ic && red.ih == cur.ih {
                    cur.clone()
                } else {
                    FixedTensor::random(red.ic, red.ih, red.iw, &mut r.rng)
                };
                // Projection produces the residual operand of block one;
                // inner representative blocks bypass their own input.
                let (proj_out, _) = r.conv_pass(proj, None, None, &cur, None, &g.name, 1)?;
                let bypass = match g.rep {
                    crate::layers::RepBlock::First => proj_out,
                    crate::layers::RepBlock::Inner => block_in.clone(),
                };
                let scale = g.replicas as u64;
                let (o_red, _) = r.conv_pass(red, None, None, &block_in, None, &g.name, scale)?;
                let (o_mid, _) = r.conv_pass(mid, None, None, &o_red, None, &g.name, scale)?;
                let (o_exp, _) =
                    r.conv_pass(exp, None, None, &o_mid, Some(&bypass), &g.name, scale)?;
                cur = o_exp;
                last_row = Some(g.name.clone());
            }
            Item::AvgPool(ap) => {
                let tap = (((1u32 << cfg.frac_bits) as f64) / (ap.p * ap.p) as f64).round() as i16;
                let mut pass = PoolPass {
                    name: ap.name.clone(),
                    input: ap.input,
                    spec: PoolSpec {
                        kind: PoolKind::Avg,
                        p: ap.p,
                        stride: 1,
                        pad: 0,
                        ceil: false,
                    },
                    in_base: 0,
                    out_base: 0,
                    min_base: 0,
                    tap_base: 0,
                    avg: true,
                };
                let mut dram = vec![i16::MIN; 4096];
                pass.min_base = 0;
                pass.tap_base = dram.len();
                dram.extend(std::iter::repeat(tap).take(16));
                pass.in_base = dram.len();
                dram.extend_from_slice(&cur.data);
                pass.out_base = dram.len();
                dram.extend(std::iter::repeat(0).take(pass.out_words()));
                let program = emit_avgpool_pass(&pass)?;
                let (cycles, out_dram, ledger) = simulate(cfg, &program, dram)?;
                let want = oracle_avgpool(&cur, ap.p, cfg.acc_mode, cfg.frac_bits);
                if r.verify {
                    if out_dram[pass.out_base..pass.out_base + want.data.len()] != want.data[..] {
                        return Err(Error::Verify(format!("{}: average pool differs", ap.name)));
                    }
                    r.layers_verified += 1;
                }
                r.account(&ap.name, cycles, &ledger, 1);
                // Memory-bound when the channel, not the compute, sets
                // the pace.
                let ideal_compute = oracle::avgpool_ops(ap) as f64 / 2.0 / 256.0;
                let ideal_mem = ledger.total() as f64 / cfg.bytes_per_cycle();
                r.row(&ap.name).mem_bound = ideal_mem > ideal_compute;
                cur = want;
                last_row = Some(ap.name.clone());
            }
            Item::Classifier(spec) => {
                // Verified but excluded from the benchmark rows.
                let weights = ConvWeights::random(spec, &mut r.rng);
                let built = build_conv_pass(cfg, spec, None, &cur, &weights, None)?;
                let (_cycles, dram, _ledger) = simulate(cfg, &built.program, built.dram.clone())?;
                let want = oracle_conv_split(
                    &cur,
                    &weights,
                    spec,
                    None,
                    &built.splits,
                    cfg.acc_mode,
                    cfg.frac_bits,
                );
                if r.verify {
                    let got = read_output(&built.pass, &dram);
                    if got.data != want.data {
                        return Err(Error::Verify(format!("{}: classifier differs", spec.name)));
                    }
                    r.layers_verified += 1;
                }
                cur = want;
            }
            Item::Fc(_) => {}
        }
    }
    // Attach the op counts.
    for (name, mops) in ops {
        if let Some(row) = r.rows.iter_mut().find(|row| row.name == name) {
            row.mops = mops;
        }
    }
    Ok(NetRun {
        name: net.name.clone(),
        rows: r.rows,
        layers_verified: r.layers_verified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::NetworkDescriptor;

    #[test]
    fn mini_inception_module_verifies() {
        let cfg = MachineConfig {
            mem_latency: 20,
            ..MachineConfig::default()
        };
        let net = NetworkDescriptor::parse(
            "net mini\ninput 32 12 12\npad_mode zero\n\
             inception name=m1 b1=16 b3r=16 b3=32 b5r=16 b5=16 pp=16\n",
        )
        .unwrap();
        let run = run_network(&cfg, &net, &RunOptions::default()).unwrap();
        assert_eq!(run.rows.len(), 1);
        // Six convolutions plus the pooled rows of each reduce pass.
        assert_eq!(run.layers_verified, 9);
        assert!(run.rows[0].cycles > 0);
        assert!(run.rows[0].mops > 0.0);
    }

    #[test]
    fn mini_residual_group_verifies() {
        let cfg = MachineConfig {
            mem_latency: 20,
            ..MachineConfig::default()
        };
        let net = NetworkDescriptor::parse(
            "net mini\ninput 64 8 8\npad_mode skip\n\
             resgroup name=g replicas=3 mid=32 out=128 stride=2\n",
        )
        .unwrap();
        let run = run_network(&cfg, &net, &RunOptions::default()).unwrap();
        assert_eq!(run.layers_verified, 4);
        let row = &run.rows[0];
        // Extrapolated ops: replicas x block + projection.
        assert!(row.mops > 0.0);
        assert!(row.cycles > 0);
    }

    #[test]
    fn mini_stem_chain_verifies() {
        let cfg = MachineConfig {
            mem_latency: 20,
            ..MachineConfig::default()
        };
        let net = NetworkDescriptor::parse(
            "net mini\ninput 3 47 47\npad_mode skip\n\
             conv name=c1 oc=64 k=7 stride=2 pad=3 pool=max:3:2:pad1\n\
             conv name=c2 oc=32 k=1\n",
        )
        .unwrap();
        let run = run_network(&cfg, &net, &RunOptions::default()).unwrap();
        assert_eq!(run.layers_verified, 2);
        assert_eq!(run.rows.len(), 2);
    }
}
