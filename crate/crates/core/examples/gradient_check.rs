//! Central finite-difference check of every differentiable primitive.
//!
//! Usage: `cargo run --release --example gradient_check [seed]`

use clardrec::numcore::gradcheck::check_all_primitives;

fn main() -> clardrec::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(11);
    for (name, c) in check_all_primitives(10, seed)? {
        let verdict = if c.passed() { "ok" } else { "FAILED" };
        println!("{name:<24} {verdict:<6} {:>4} entries  max rel err {:.2e}", c.checked, c.max_rel_err);
    }
    Ok(())
}
