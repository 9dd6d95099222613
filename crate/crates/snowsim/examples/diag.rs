use snowsim::codegen::{build_conv_pass, read_output};
use snowsim::fixpoint::FixedTensor;
use snowsim::layers::{Item, NetworkDescriptor};
use snowsim::machine::MachineConfig;
use snowsim::oracle::ConvWeights;
use snowsim::rng::SplitMix64;
use snowsim::sim::Simulator;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "alexnet".into());
    let path = format!("/root/crate/crates/snowsim/networks/{which}.net");
    let net = NetworkDescriptor::parse(&std::fs::read_to_string(path).unwrap()).unwrap();
    let cfg = MachineConfig::default();
    let mut rng = SplitMix64::new(1);
    let mut cur = FixedTensor::random(net.input.c, net.input.h, net.input.w, &mut rng);
    for item in &net.items {
        let (spec, pool) = match item {
            Item::Conv { spec, pool, .. } => (spec.clone(), pool.clone()),
            _ => continue,
        };
        let w = ConvWeights::random(&spec, &mut rng);
        let built = build_conv_pass(&cfg, &spec, pool, &cur, &w, None).unwrap();
        let mut sim = Simulator::new(&cfg, &built.program, built.dram.clone()).unwrap();
        let (cycles, clean) = sim.run(400_000_000).unwrap();
        assert!(clean);
        let macs: u64 = sim.cluster.cus.iter().map(|c| c.stats.macs_executed).sum();
        let busy: u64 = sim.cluster.cus.iter().map(|c| c.stats.busy_cycles).sum();
        let align: u64 = sim.cluster.cus.iter().map(|c| c.stats.indp_align_stalls).sum();
        let gather: u64 = sim.cluster.cus.iter().map(|c| c.stats.gather_stalls).sum();
        let st = sim.ctrl.stats;
        println!(
            "{:<8} cyc {:>9} prog {:>6} macs {:>11} mac-busy {:>5.1}% busy/cu {:>5.1}% align {:>8} gather {:>8} raw {:>8} disp {:>8} icache {:>7} commits {:>8}",
            spec.name, cycles, built.program.len(), macs,
            100.0 * macs as f64 / (256.0 * cycles as f64),
            100.0 * busy as f64 / (4.0 * cycles as f64),
            align, gather, st.raw_stalls, st.dispatch_stalls, st.icache_stalls, st.commits,
        );
        cur = read_output(&built.pass, &sim.mem.dram);
    }
}
