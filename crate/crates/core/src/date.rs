//! Day-precision calendar dates stored as days since 1970-01-01.
//!
//! All window arithmetic in this crate (eligibility windows, prediction
//! windows, observation spans) is integer day math on this type.

use core::fmt;
use core::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DateError {
    #[error("invalid calendar date {year:04}-{month:02}-{day:02}")]
    InvalidDate { year: i32, month: u32, day: u32 },
    #[error("expected YYYY-MM-DD, got {0:?}")]
    Unparseable(alloc::string::String),
}

/// A civil calendar date, ordered and hashable, precise to the day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Date(i32);

impl Date {
    pub fn from_ymd(year: i32, month: u32, day: u32) -> Result<Self, DateError> {
        if month < 1 || month > 12 || day < 1 || day > days_in_month(year, month) {
            return Err(DateError::InvalidDate { year, month, day });
        }
        Ok(Date(days_from_civil(year, month, day)))
    }

    /// Days since 1970-01-01 (negative for earlier dates).
    pub fn from_days(days: i32) -> Self {
        Date(days)
    }

    pub fn days(self) -> i32 {
        self.0
    }

    pub fn ymd(self) -> (i32, u32, u32) {
        civil_from_days(self.0)
    }

    pub fn plus_days(self, delta: i32) -> Self {
        Date(self.0 + delta)
    }

    /// Signed day count from `other` to `self`.
    pub fn days_since(self, other: Date) -> i32 {
        self.0 - other.0
    }
}

fn is_leap(year: i32) -> bool {
    year % 4 == 0 && (year % 100 != 0 || year % 400 == 0)
}

fn days_in_month(year: i32, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            if is_leap(year) {
                29
            } else {
                28
            }
        }
        _ => 0,
    }
}

// Civil-date conversions via the standard era decomposition (400-year cycles
// of 146097 days); exact over the full i32 range.
fn days_from_civil(y: i32, m: u32, d: u32) -> i32 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = (y - era * 400) as u32;
    let doy = (153 * (if m > 2 { m - 3 } else { m + 9 }) + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe as i32 - 719468
}

fn civil_from_days(z: i32) -> (i32, u32, u32) {
    let z = z + 719468;
    let era = if z >= 0 { z } else { z - 146096 } / 146097;
    let doe = (z - era * 146097) as u32;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let y = yoe as i32 + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    (if m <= 2 { y + 1 } else { y }, m, d)
}

impl fmt::Display for Date {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (y, m, d) = self.ymd();
        write!(f, "{:04}-{:02}-{:02}", y, m, d)
    }
}

impl FromStr for Date {
    type Err = DateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || DateError::Unparseable(alloc::string::String::from(s));
        let bytes = s.as_bytes();
        if bytes.len() != 10 || bytes[4] != b'-' || bytes[7] != b'-' {
            return Err(err());
        }
        let year: i32 = s[0..4].parse().map_err(|_| err())?;
        let month: u32 = s[5..7].parse().map_err(|_| err())?;
        let day: u32 = s[8..10].parse().map_err(|_| err())?;
        Date::from_ymd(year, month, day)
    }
}

impl Serialize for Date {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Date {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = alloc::string::String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn epoch_anchors() {
        assert_eq!(Date::from_ymd(1970, 1, 1).unwrap().days(), 0);
        assert_eq!(Date::from_ymd(1969, 12, 31).unwrap().days(), -1);
        assert_eq!(Date::from_ymd(2000, 1, 1).unwrap().days(), 10957);
        assert_eq!(Date::from_ymd(2000, 3, 1).unwrap().days(), 11017);
    }

    #[test]
    fn leap_rules() {
        assert!(Date::from_ymd(2016, 2, 29).is_ok());
        assert!(Date::from_ymd(2000, 2, 29).is_ok());
        assert!(Date::from_ymd(2015, 2, 29).is_err());
        assert!(Date::from_ymd(1900, 2, 29).is_err());
        assert!(Date::from_ymd(2020, 13, 1).is_err());
        assert!(Date::from_ymd(2020, 0, 1).is_err());
        assert!(Date::from_ymd(2020, 4, 31).is_err());
    }

    #[test]
    fn roundtrip_over_two_centuries() {
        let start = Date::from_ymd(1890, 1, 1).unwrap().days();
        let end = Date::from_ymd(2090, 1, 1).unwrap().days();
        for days in (start..end).step_by(17) {
            let d = Date::from_days(days);
            let (y, m, dd) = d.ymd();
            assert_eq!(Date::from_ymd(y, m, dd).unwrap(), d);
        }
    }

    #[test]
    fn arithmetic_and_ordering() {
        let a = Date::from_ymd(2010, 6, 1).unwrap();
        let b = a.plus_days(365);
        assert_eq!(b.to_string(), "2011-06-01");
        assert_eq!(b.days_since(a), 365);
        assert!(a < b);
    }

    #[test]
    fn display_parse_roundtrip() {
        let d = Date::from_ymd(1943, 5, 12).unwrap();
        assert_eq!(d.to_string(), "1943-05-12");
        assert_eq!("1943-05-12".parse::<Date>().unwrap(), d);
        assert!("1943-5-12".parse::<Date>().is_err());
        assert!("1943-05-12x".parse::<Date>().is_err());
        assert!("194a-05-12".parse::<Date>().is_err());
    }

    #[test]
    fn serde_as_string() {
        let d = Date::from_ymd(2016, 2, 29).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, "\"2016-02-29\"");
        let back: Date = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<Date>("\"2015-02-29\"").is_err());
    }
}
