//! Columnar trace files: `time_s,intensity,lo_phase_rad,shot_id`, one row
//! per sample, shots in file order.
//!
//! Floats are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::io::{Read, Write};

use super::DetectorTrace;
use crate::{Error, Result};

const HEADER: [&str; 4] = ["time_s", "intensity", "lo_phase_rad", "shot_id"];

pub fn write_traces<W: Write>(w: W, traces: &[DetectorTrace]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER)?;
    for tr in traces {
        for i in 0..tr.len() {
            out.write_record([
                format!("{:.16e}", tr.time[i]),
                format!("{:.16e}", tr.intensity[i]),
                format!("{:.16e}", tr.lo_phase[i]),
                tr.shot_id.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_traces<R: Read>(r: R) -> Result<Vec<DetectorTrace>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::TraceFormat(format!(
            "expected header {}, found {}",
            HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut traces: Vec<DetectorTrace> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let field = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|e| Error::TraceFormat(format!("line {line}, column {}: {e}", HEADER[k])))
        };
        let (t, i, ph) = (field(0)?, field(1)?, field(2)?);
        let shot: u64 = rec[3]
            .parse()
            .map_err(|e| Error::TraceFormat(format!("line {line}, column shot_id: {e}")))?;
        match traces.last_mut() {
            Some(tr) if tr.shot_id == shot => {
                tr.time.push(t);
                tr.intensity.push(i);
                tr.lo_phase.push(ph);
            }
            _ => {
                if traces.iter().any(|tr| tr.shot_id == shot) {
                    return Err(Error::TraceFormat(format!(
                        "line {line}: rows of shot {shot} are not contiguous"
                    )));
                }
                traces.push(DetectorTrace {
                    shot_id: shot,
                    time: vec![t],
                    intensity: vec![i],
                    lo_phase: vec![ph],
                });
            }
        }
    }
    Ok(traces)
}
