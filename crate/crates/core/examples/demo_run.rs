//! Runs the pipeline from a config file and prints the report.
//!
//! `cargo run --example demo_run -- [config.toml]` (defaults to the bundled
//! Olympics demo).

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/olympics/demo.toml").into());
    let mut cfg = ctxmine::pipeline::PipelineConfig::load(&path).expect("config");
    cfg.output_dir = std::env::temp_dir().join("ctxmine-demo");
    match ctxmine::pipeline::run(&cfg) {
        Ok(report) => print!("{}", report.to_json()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
