//! Regenerates the shipped sample trace.
//!
//! ```text
//! cargo run -p drpc-core --example synthetic_trace -- data/alibaba_sample.csv
//! ```

use drpc_core::workload::{synthetic_trace, SyntheticTraceConfig};

fn main() -> drpc_core::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "data/alibaba_sample.csv".to_string());
    let trace = synthetic_trace(&SyntheticTraceConfig::default());
    trace.save_csv(&out)?;
    eprintln!("wrote {} rows to {out}", trace.len());
    Ok(())
}
