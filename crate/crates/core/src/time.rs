//! Second-resolution timestamps, durations and closed spans.
//!
//! Everything in the tree is ordered by these plain integer types; chrono is
//! only used for turning them into calendar text.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

/// Seconds since the Unix epoch, UTC.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const EPOCH: Timestamp = Timestamp(0);
    pub const MAX: Timestamp = Timestamp(i64::MAX);

    pub const fn from_secs(secs: i64) -> Self {
        Timestamp(secs)
    }

    pub const fn secs(self) -> i64 {
        self.0
    }

    pub fn from_ymd_hms(y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32) -> Option<Self> {
        let dt = NaiveDate::from_ymd_opt(y, mo, d)?.and_hms_opt(h, mi, s)?;
        Some(Timestamp(dt.and_utc().timestamp()))
    }

    fn to_chrono(self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.0, 0).unwrap_or(DateTime::<Utc>::MIN_UTC)
    }

    /// `2024/04/24 09:00`
    pub fn format_minutes(self) -> String {
        self.to_chrono().format("%Y/%m/%d %H:%M").to_string()
    }

    /// `2024/04/24 09:00:05`
    pub fn format_seconds(self) -> String {
        self.to_chrono().format("%Y/%m/%d %H:%M:%S").to_string()
    }

    /// Hour of the day (UTC), 0..24.
    pub fn hour_of_day(self) -> u32 {
        (self.0.rem_euclid(86_400) / 3_600) as u32
    }

    pub fn saturating_add(self, d: Duration) -> Self {
        Timestamp(self.0.saturating_add(d.0))
    }

    pub fn saturating_sub(self, d: Duration) -> Self {
        Timestamp(self.0.saturating_sub(d.0))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format_seconds())
    }
}

/// Signed length of time in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Duration(i64);

impl Duration {
    pub const ZERO: Duration = Duration(0);
    pub const SECOND: Duration = Duration(1);
    pub const MINUTE: Duration = Duration(60);
    pub const HOUR: Duration = Duration(3_600);
    pub const DAY: Duration = Duration(86_400);

    pub const fn from_secs(secs: i64) -> Self {
        Duration(secs)
    }

    pub const fn minutes(n: i64) -> Self {
        Duration(n * 60)
    }

    pub const fn hours(n: i64) -> Self {
        Duration(n * 3_600)
    }

    pub const fn days(n: i64) -> Self {
        Duration(n * 86_400)
    }

    pub const fn secs(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64
    }

    pub fn saturating_mul(self, k: i64) -> Self {
        Duration(self.0.saturating_mul(k))
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.0;
        if s % 86_400 == 0 && s != 0 {
            write!(f, "{}d", s / 86_400)
        } else if s % 3_600 == 0 && s != 0 {
            write!(f, "{}h", s / 3_600)
        } else if s % 60 == 0 && s != 0 {
            write!(f, "{}m", s / 60)
        } else {
            write!(f, "{s}s")
        }
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;
    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0 + rhs.0)
    }
}

impl AddAssign<Duration> for Timestamp {
    fn add_assign(&mut self, rhs: Duration) {
        self.0 += rhs.0;
    }
}

impl Sub<Duration> for Timestamp {
    type Output = Timestamp;
    fn sub(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0 - rhs.0)
    }
}

impl Sub<Timestamp> for Timestamp {
    type Output = Duration;
    fn sub(self, rhs: Timestamp) -> Duration {
        Duration(self.0 - rhs.0)
    }
}

impl Add for Duration {
    type Output = Duration;
    fn add(self, rhs: Duration) -> Duration {
        Duration(self.0 + rhs.0)
    }
}

impl Mul<i64> for Duration {
    type Output = Duration;
    fn mul(self, rhs: i64) -> Duration {
        Duration(self.0 * rhs)
    }
}

/// Closed interval `[start, end]`; a point when both are equal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeSpan {
    /// Swaps the bounds if they arrive reversed.
    pub fn new(start: Timestamp, end: Timestamp) -> Self {
        if start <= end {
            TimeSpan { start, end }
        } else {
            TimeSpan { start: end, end: start }
        }
    }

    pub fn point(at: Timestamp) -> Self {
        TimeSpan { start: at, end: at }
    }

    pub fn duration(&self) -> Duration {
        self.end - self.start
    }

    pub fn hull(&self, other: &TimeSpan) -> TimeSpan {
        TimeSpan {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }

    pub fn hull_all<'a>(spans: impl IntoIterator<Item = &'a TimeSpan>) -> Option<TimeSpan> {
        spans.into_iter().fold(None, |acc, s| match acc {
            None => Some(*s),
            Some(a) => Some(a.hull(s)),
        })
    }

    pub fn intersects(&self, other: &TimeSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains_span(&self, other: &TimeSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t <= self.end
    }
}

impl fmt::Display for TimeSpan {
    /// `2024/04/24 09:00–09:20`, with the date repeated only when the end
    /// falls on another day.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let start = self.start.format_minutes();
        let end = self.end.format_minutes();
        if start[..10] == end[..10] {
            write!(f, "{}–{}", start, &end[11..])
        } else {
            write!(f, "{start}–{end}")
        }
    }
}
