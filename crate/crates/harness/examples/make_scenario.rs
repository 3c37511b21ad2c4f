//! Regenerates the bundled clear-sky scenario.
//!
//! ```text
//! cargo run -p voltguard-harness --example make_scenario -- scenarios/clear_sky
//! ```

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "scenarios/clear_sky".into());
    if let Err(e) = voltguard_harness::synth::write_clear_sky(std::path::Path::new(&dir)) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    println!("wrote {dir}");
}
