//! Finite-difference check of every loss configuration on a small network.

use pronecl::gradcheck::run_suite;
use pronecl::netcore::ArchConfig;

fn main() -> pronecl::error::Result<()> {
    let arch = ArchConfig::tiny(1);
    println!("{} parameters", arch.param_count());
    let results = run_suite(&arch, &[0, 1, 2])?;
    for r in &results {
        println!(
            "{:<10} seed {}  max rel err {:.2e} at {}  {}",
            r.config,
            r.seed,
            r.max_rel_error,
            r.worst_param,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
