//! Day-type classification of calendar dates.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Weekday,
    Weekend,
    Holiday,
}

impl DayType {
    pub const ALL: [DayType; 3] = [DayType::Weekday, DayType::Weekend, DayType::Holiday];

    pub fn as_str(self) -> &'static str {
        match self {
            DayType::Weekday => "weekday",
            DayType::Weekend => "weekend",
            DayType::Holiday => "holiday",
        }
    }
}

impl fmt::Display for DayType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DayType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "weekday" => Ok(DayType::Weekday),
            "weekend" => Ok(DayType::Weekend),
            "holiday" => Ok(DayType::Holiday),
            other => Err(Error::InvalidConfig(format!("unknown day type {other:?}"))),
        }
    }
}

/// Maps timestamps to local dates and dates to day types. Saturdays and
/// Sundays are weekends unless listed as holidays; listed holidays win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DayTypeCalendar {
    /// Offset of local time from UTC, seconds.
    #[serde(default)]
    pub utc_offset_s: i64,
    #[serde(default)]
    pub holidays: BTreeSet<NaiveDate>,
}

impl DayTypeCalendar {
    pub fn new(utc_offset_s: i64, holidays: impl IntoIterator<Item = NaiveDate>) -> Self {
        DayTypeCalendar {
            utc_offset_s,
            holidays: holidays.into_iter().collect(),
        }
    }

    pub fn local_date(&self, timestamp: i64) -> NaiveDate {
        DateTime::from_timestamp(timestamp + self.utc_offset_s, 0)
            .map(|dt| dt.date_naive())
            .unwrap_or(NaiveDate::MIN)
    }

    /// Seconds since local midnight.
    pub fn seconds_of_day(&self, timestamp: i64) -> i64 {
        (timestamp + self.utc_offset_s).rem_euclid(86_400)
    }

    pub fn day_type(&self, date: NaiveDate) -> DayType {
        if self.holidays.contains(&date) {
            DayType::Holiday
        } else if matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
            DayType::Weekend
        } else {
            DayType::Weekday
        }
    }

    pub fn day_type_at(&self, timestamp: i64) -> DayType {
        self.day_type(self.local_date(timestamp))
    }

    /// Local day number (days since the epoch) of a timestamp.
    pub fn day_number(&self, timestamp: i64) -> i64 {
        (timestamp + self.utc_offset_s).div_euclid(86_400)
    }
}
