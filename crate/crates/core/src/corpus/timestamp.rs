use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimestampFormat {
    /// `26-FEB-1987 15:01:01.79`
    Reuters,
    /// `2010/08/09 15:51:53`
    Bbc,
}

impl TimestampFormat {
    fn pattern(self) -> &'static str {
        match self {
            TimestampFormat::Reuters => "%d-%b-%Y %H:%M:%S%.f",
            TimestampFormat::Bbc => "%Y/%m/%d %H:%M:%S",
        }
    }
}

/// Parses a timestamp as UTC and returns epoch seconds, keeping fractions.
pub fn parse_timestamp(text: &str, format: TimestampFormat) -> Result<f64> {
    let err = || CorpusError::Timestamp { text: text.to_string(), format };
    let dt = NaiveDateTime::parse_from_str(text.trim(), format.pattern()).map_err(|_| err())?;
    let dt = dt.and_utc();
    let secs = dt.timestamp() as f64;
    let frac = dt.timestamp_subsec_nanos();
    if frac == 0 {
        return Ok(secs);
    }
    // go through the decimal text so the result is the double nearest to it
    format!("{}.{:09}", dt.timestamp(), frac).parse::<f64>().map_err(|_| err())
}
