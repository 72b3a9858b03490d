use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

const FORMAT: &str = "%Y-%m-%dT%H:%M";

/// A calendar timestamp with minute resolution.
///
/// Rendered and parsed as `YYYY-MM-DDTHH:MM`. A space is accepted in place of
/// the `T` when parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(NaiveDateTime);

impl Timestamp {
    pub fn new(datetime: NaiveDateTime) -> Self {
        Timestamp(
            datetime
                .with_second(0)
                .and_then(|d| d.with_nanosecond(0))
                .unwrap_or(datetime),
        )
    }

    pub fn from_ymd_hm(year: i32, month: u32, day: u32, hour: u32, minute: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(year, month, day)
            .and_then(|d| d.and_hms_opt(hour, minute, 0))
            .map(Timestamp)
    }

    pub fn datetime(&self) -> NaiveDateTime {
        self.0
    }

    pub fn plus_minutes(&self, minutes: i64) -> Self {
        Timestamp(self.0 + Duration::minutes(minutes))
    }

    /// Moves back by whole calendar years (Feb 29 clamps to Feb 28).
    pub fn minus_years(&self, years: u32) -> Self {
        let months = chrono::Months::new(years.saturating_mul(12));
        Timestamp(self.0.checked_sub_months(months).unwrap_or(self.0))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format(FORMAT))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid timestamp {0:?}: expected YYYY-MM-DDTHH:MM")]
pub struct TimestampParseError(pub String);

impl FromStr for Timestamp {
    type Err = TimestampParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let normalized = s.replacen(' ', "T", 1);
        NaiveDateTime::parse_from_str(&normalized, FORMAT)
            .or_else(|_| NaiveDateTime::parse_from_str(&normalized, "%Y-%m-%dT%H:%M:%S"))
            .map(Timestamp::new)
            .map_err(|_| TimestampParseError(s.to_string()))
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

/// When the game master advances the clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClockMode {
    /// After each acting player.
    PerPlayer,
    /// After every player in the round has acted.
    #[default]
    PerRound,
}

/// The simulation clock. Only ever moves forward.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameClock {
    current_time: Timestamp,
    step_minutes: u32,
    mode: ClockMode,
    #[serde(default)]
    step: u64,
}

impl GameClock {
    pub fn new(start: Timestamp, step_minutes: u32, mode: ClockMode) -> Self {
        GameClock {
            current_time: start,
            step_minutes,
            mode,
            step: 0,
        }
    }

    pub fn now(&self) -> Timestamp {
        self.current_time
    }

    pub fn step_minutes(&self) -> u32 {
        self.step_minutes
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    /// Number of `advance` calls so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn advance(&mut self) {
        self.current_time = self.current_time.plus_minutes(i64::from(self.step_minutes));
        self.step += 1;
    }

    pub fn advanced(&self) -> GameClock {
        let mut next = self.clone();
        next.advance();
        next
    }

    /// Moves time forward without counting a step. Used when a nested scene
    /// consumes parent time.
    pub fn advance_by(&mut self, minutes: u32) {
        self.current_time = self.current_time.plus_minutes(i64::from(minutes));
    }
}
