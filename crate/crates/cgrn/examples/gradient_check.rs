//! Run the full verification suite: finite-difference gradient checks on
//! every op, naive-loop forward oracles, the network shape table, and the
//! gradient-routing invariants of the two-phase training step.
//!
//!     cargo run --example gradient_check

fn main() {
    let summary = cgrn::verify::run_all(7);
    print!("{}", summary.to_text());
    std::process::exit(if summary.all_passed() { 0 } else { 4 });
}
