use snowsim::codegen::netcompile::RunOptions;
use snowsim::layers::NetworkDescriptor;
use snowsim::machine::MachineConfig;
use snowsim::report::run_benchmark;

fn main() {
    let net = NetworkDescriptor::parse(include_str!("/root/crate/crates/snowsim/networks/alexnet.net")).unwrap();
    let cfg = MachineConfig::default();
    let t0 = std::time::Instant::now();
    match run_benchmark(&cfg, &net, &RunOptions::default()) {
        Ok(rep) => {
            println!("{}", rep.table());
            let t = rep.totals(false);
            println!("total eff {:.2}%  fps {:.1}  verified {} layers  wall {:?}", t.efficiency_pct, 1000.0/t.actual_ms, rep.layers_verified, t0.elapsed());
        }
        Err(e) => println!("ERROR: {e}"),
    }
}
