//! Regenerates the bundled Berlin fixture.
//!
//! cargo run -p ftm-core --example make_berlin_fixture -- fixtures/berlin

use std::path::PathBuf;

use ftm_core::fixture::{generate, FixtureSpec};

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures/berlin"));
    let files = generate(&FixtureSpec::berlin()).expect("fixture generation");
    files.write_to(&dir).expect("write fixture");
    for (name, body) in &files.files {
        println!("{:<18}{:>8} lines", name, body.lines().count());
    }
}
