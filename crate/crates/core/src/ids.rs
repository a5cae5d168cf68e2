//! Identifier newtypes and calendar helpers shared by every module.
//!
//! Time is kept at minute resolution as an offset from 1970-01-01T00:00 in
//! hospital-local time. Calendar days start at local midnight.

use std::fmt;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const MINUTES_PER_HOUR: i64 = 60;
pub const MINUTES_PER_DAY: i64 = 1440;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncounterId(pub u64);

impl fmt::Display for EncounterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureId(pub u32);

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Minutes since 1970-01-01T00:00 local time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_date(date: NaiveDate) -> Self {
        Timestamp(day_number(date) * MINUTES_PER_DAY)
    }

    pub fn at(date: NaiveDate, hour: u32, minute: u32) -> Self {
        Timestamp(day_number(date) * MINUTES_PER_DAY + i64::from(hour) * 60 + i64::from(minute))
    }

    /// Calendar day index (days since epoch).
    pub fn day(self) -> i64 {
        self.0.div_euclid(MINUTES_PER_DAY)
    }

    pub fn date(self) -> NaiveDate {
        date_from_day_number(self.day())
    }

    pub fn minute_of_day(self) -> i64 {
        self.0.rem_euclid(MINUTES_PER_DAY)
    }

    pub fn plus_minutes(self, minutes: i64) -> Self {
        Timestamp(self.0 + minutes)
    }

    pub fn plus_days(self, days: i64) -> Self {
        Timestamp(self.0 + days * MINUTES_PER_DAY)
    }

    fn to_naive(self) -> NaiveDateTime {
        let m = self.minute_of_day();
        self.date()
            .and_hms_opt((m / 60) as u32, (m % 60) as u32, 0)
            .expect("minute of day in range")
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_naive().format("%Y-%m-%dT%H:%M"))
    }
}

impl std::str::FromStr for Timestamp {
    type Err = chrono::ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dt = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M")?;
        Ok(Timestamp::at(dt.date(), dt.hour(), dt.minute()))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => panic!("epoch"),
};

pub fn day_number(date: NaiveDate) -> i64 {
    (date - EPOCH).num_days()
}

pub fn date_from_day_number(day: i64) -> NaiveDate {
    EPOCH + chrono::Duration::days(day)
}

/// Admission month, used to group encounters into month-years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonthYear {
    pub year: i32,
    pub month: u32,
}

impl MonthYear {
    pub fn of(date: NaiveDate) -> Self {
        MonthYear {
            year: date.year(),
            month: date.month(),
        }
    }
}

impl fmt::Display for MonthYear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl std::str::FromStr for MonthYear {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| format!("expected YYYY-MM, got `{s}`"))?;
        let year = y.parse().map_err(|_| format!("bad year in `{s}`"))?;
        let month: u32 = m.parse().map_err(|_| format!("bad month in `{s}`"))?;
        if !(1..=12).contains(&month) {
            return Err(format!("month out of range in `{s}`"));
        }
        Ok(MonthYear { year, month })
    }
}

impl Serialize for MonthYear {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MonthYear {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_round_trips_through_text() {
        let t = Timestamp::at(NaiveDate::from_ymd_opt(2020, 7, 10).unwrap(), 6, 5);
        let s = t.to_string();
        assert_eq!(s, "2020-07-10T06:05");
        assert_eq!(s.parse::<Timestamp>().unwrap(), t);
    }

    #[test]
    fn day_boundaries_are_midnight() {
        let d = NaiveDate::from_ymd_opt(2019, 12, 31).unwrap();
        let midnight = Timestamp::from_date(d);
        assert_eq!(midnight.date(), d);
        assert_eq!(midnight.plus_minutes(-1).date(), d.pred_opt().unwrap());
        assert_eq!(midnight.plus_minutes(MINUTES_PER_DAY - 1).date(), d);
    }

    #[test]
    fn pre_epoch_days_use_euclidean_division() {
        let t = Timestamp(-1);
        assert_eq!(t.day(), -1);
        assert_eq!(t.minute_of_day(), MINUTES_PER_DAY - 1);
    }
}
