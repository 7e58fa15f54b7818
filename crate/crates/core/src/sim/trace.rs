//! Delimited exports of traces and episode statistics.
//!
//! Trace files have the header `case,activity,resource,lifecycle,timestamp`,
//! one event per row in the order the events happened. The resource column
//! is empty for events without a resource.

use super::state::Event;
use super::stats::EpisodeStats;
use crate::model::ProcessModel;
use std::io::Write;

pub fn write_trace<W: Write>(out: W, model: &ProcessModel, events: &[Event]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["case", "activity", "resource", "lifecycle", "timestamp"])?;
    for e in events {
        let resource = e.resource.map(|r| model.resources[r].id.as_str()).unwrap_or("");
        w.write_record([
            e.case.to_string().as_str(),
            model.activities[e.activity].id.as_str(),
            resource,
            e.lifecycle.as_str(),
            e.time.to_string().as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `key,value` rows.
pub fn write_stats<W: Write>(out: W, stats: &EpisodeStats) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["key", "value"])?;
    for (k, v) in stats.key_values() {
        w.write_record([k, v])?;
    }
    w.flush()?;
    Ok(())
}
