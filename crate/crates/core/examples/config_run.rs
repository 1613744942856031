//! Loads a JSON run file, applies overrides and writes the trace as CSV.
//!
//! `cargo run --example config_run -- examples/configs/cedas_grid.json iters=500`

use std::path::PathBuf;

use cedas::algo::run_repetitions;
use cedas::config::RunFile;
use cedas::metrics::Trace;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path: PathBuf = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/cedas_grid.json"));
    let overrides: Vec<String> = args.collect();
    let file = RunFile::load(&path, &overrides)?;
    println!("{} ({}), hash {}", file.name, file.algorithm, &file.hash()[..12]);
    let cfg = file.resolve()?;
    let out = run_repetitions(&cfg)?;
    let csv = out.mean.to_csv_string();
    let back = Trace::read_csv(csv.as_bytes())?;
    assert_eq!(back.records.len(), out.mean.records.len());
    let dir = std::env::temp_dir().join("cedas_config_run");
    let written = cedas::output::write_trace(&dir, &file.name, &out.mean)?;
    println!("final residual {:.3e}, wrote {}", out.mean.last().unwrap().residual.unwrap_or(f64::NAN), written.display());
    Ok(())
}
