use std::io::Write;

use super::RunRecord;

pub const TRACE_HEADER: &str = "sweep_value,counts,shots,p_blockade";

/// Writes one row per sweep point with `\n` line endings.
pub fn write_trace_csv<W: Write>(record: &RunRecord, writer: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(TRACE_HEADER.split(','))?;
    for ((v, c), n) in record.sweep.iter().zip(&record.counts).zip(&record.shots) {
        let p = *c as f64 / *n as f64;
        w.write_record([v.to_string(), c.to_string(), n.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
