//! Writes the built-in synthetic demo corpus and prints its manifest path.
//!
//! Usage: cargo run -p triview-core --example gen_corpus -- <dir>

use std::path::Path;

use triview_core::synth::{overfit_corpus, write_corpus};

fn main() -> std::io::Result<()> {
    let dir = std::env::args().nth(1).expect("usage: gen_corpus <dir>");
    let manifest = write_corpus(Path::new(&dir), &overfit_corpus())?;
    println!("{}", manifest.display());
    Ok(())
}
