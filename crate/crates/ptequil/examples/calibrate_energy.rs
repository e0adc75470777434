//! Prints the per-vehicle charging energy that makes EV charging a given
//! share of total load for a run config.
//!
//! ```text
//! cargo run -p ptequil --example calibrate_energy -- crates/ptequil/fixtures/siouxfalls39.cfg 0.185
//! ```

use std::path::PathBuf;

use ptequil::config::RunConfig;
use ptequil::tables::calibrate_energy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().ok_or("usage: calibrate_energy <config> [share]")?);
    let share: f64 = args.next().map_or(Ok(0.185), |s| s.parse())?;
    let (system, _) = RunConfig::load(&path)?.build()?;
    let load = system.power.total_load();
    let q = system.transport.total_ev_demand();
    let e = calibrate_energy(&system.transport, load, share);
    println!("base load {load:.3} MW, EV trips {q:.3} veh/h");
    println!("energy per vehicle {e:.4} MWh");
    Ok(())
}
