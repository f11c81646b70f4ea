//! Parsing of the loosely formatted values found in model answers and in
//! the FRA export: numbers with units, clock times, dates, free text.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use chrono::{Datelike, NaiveDate, NaiveTime, Timelike};
use regex::Regex;
use serde::{Deserialize, Serialize};

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?P<int>\d{1,3}(?:,\d{3})+|\d+)(?P<frac>\.\d+)?(?P<clock>:[0-5]\d)?").unwrap()
    })
}

/// First number in `text`.
///
/// Thousands separators are accepted (`"$12,500"` is 12500). A leading `-`
/// counts only when it is not glued to a word, so `"I-95"` is 95. A clock
/// reading `H:MM` is encoded as `H * 100 + MM` (`"14:30"` is 1430), which is
/// how time answers are stored; [`minutes_of_day`] decodes it.
pub fn parse_number(text: &str) -> Option<f64> {
    let caps = number_re().captures(text)?;
    let whole = caps.get(0).unwrap();
    let int = caps["int"].replace(',', "");
    let mut value: f64 = if let (Some(clock), None, true) =
        (caps.name("clock"), caps.name("frac"), int.len() <= 2)
    {
        let minutes: f64 = clock.as_str()[1..].parse().ok()?;
        int.parse::<f64>().ok()? * 100.0 + minutes
    } else {
        let frac = caps.name("frac").map(|m| m.as_str()).unwrap_or("");
        format!("{int}{frac}").parse().ok()?
    };
    let before = &text[..whole.start()];
    if let Some(rest) = before.strip_suffix('-') {
        let glued = rest
            .chars()
            .next_back()
            .is_some_and(|c| c.is_alphanumeric());
        if !glued {
            value = -value;
        }
    }
    value.is_finite().then_some(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Meridiem {
    #[serde(rename = "AM")]
    Am,
    #[serde(rename = "PM")]
    Pm,
}

impl Meridiem {
    pub fn parse(raw: &str) -> Option<Self> {
        let folded: String = raw
            .chars()
            .filter(|c| c.is_ascii_alphabetic())
            .collect::<String>()
            .to_ascii_lowercase();
        match folded.as_str() {
            "am" => Some(Meridiem::Am),
            "pm" => Some(Meridiem::Pm),
            _ => None,
        }
    }

    pub fn of(time: NaiveTime) -> Self {
        if time.hour() < 12 {
            Meridiem::Am
        } else {
            Meridiem::Pm
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Meridiem::Am => "AM",
            Meridiem::Pm => "PM",
        }
    }
}

/// Minutes since midnight for a stored time answer.
///
/// Whole numbers up to 23 are read as an hour (`"2 pm"` parses to 2);
/// larger ones as `HHMM`. A meridiem shifts 12-hour readings.
pub fn minutes_of_day(value: f64, meridiem: Option<Meridiem>) -> Option<u32> {
    if !(value.is_finite() && value >= 0.0 && value.fract() == 0.0 && value < 2400.0) {
        return None;
    }
    let n = value as u32;
    let (mut hour, minute) = if n <= 23 { (n, 0) } else { (n / 100, n % 100) };
    if hour > 23 || minute > 59 {
        return None;
    }
    match meridiem {
        Some(Meridiem::Pm) if hour < 12 => hour += 12,
        Some(Meridiem::Am) if hour == 12 => hour = 0,
        _ => {}
    }
    Some(hour * 60 + minute)
}

/// Parses a clock reading such as `14:30`, `2:30 PM`, `2:30p.m.` or `7 AM`.
/// Bare numbers are left to [`parse_number`].
pub fn parse_clock(raw: &str) -> Option<NaiveTime> {
    let cleaned = raw.trim().replace('.', "").to_ascii_uppercase();
    let has_meridiem = cleaned.ends_with("AM") || cleaned.ends_with("PM");
    if !cleaned.contains(':') && !has_meridiem {
        return None;
    }
    let spaced = if has_meridiem && !cleaned.ends_with(" AM") && !cleaned.ends_with(" PM") {
        format!(
            "{} {}",
            &cleaned[..cleaned.len() - 2],
            &cleaned[cleaned.len() - 2..]
        )
    } else {
        cleaned
    };
    const FORMATS: [&str; 5] = ["%H:%M", "%H:%M:%S", "%I:%M %p", "%I:%M:%S %p", "%I %p"];
    FORMATS
        .iter()
        .find_map(|f| NaiveTime::parse_from_str(spaced.trim(), f).ok())
        .or_else(|| {
            // "7 PM" style readings that chrono rejects without minutes.
            let (hour, meridiem) = spaced.trim().rsplit_once(' ')?;
            let hour: u32 = hour.trim().parse().ok()?;
            if !(1..=12).contains(&hour) {
                return None;
            }
            let h24 = minutes_of_day(hour as f64, Meridiem::parse(meridiem))? / 60;
            NaiveTime::from_hms_opt(h24, 0, 0)
        })
}

/// Minutes since midnight for a clock reading or a stored `HHMM` number.
pub fn parse_minutes(raw: &str) -> Option<u32> {
    match parse_clock(raw) {
        Some(t) => Some(t.hour() * 60 + t.minute()),
        None => minutes_of_day(parse_number(raw)?, None),
    }
}

const DATE_FORMATS: [&str; 9] = [
    "%Y-%m-%d",
    "%Y/%m/%d",
    "%m/%d/%Y",
    "%m/%d/%y",
    "%m-%d-%Y",
    "%B %d, %Y",
    "%b %d, %Y",
    "%d %B %Y",
    "%Y%m%d",
];

fn date_only(raw: &str) -> Option<NaiveDate> {
    // `%Y` takes any digit count, so "3/5/23" would otherwise be year 3.
    DATE_FORMATS
        .iter()
        .filter_map(|f| NaiveDate::parse_from_str(raw, f).ok())
        .find(|d| d.year() >= 1000)
}

/// Parses a calendar date, ignoring a trailing time of day.
pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    parse_datetime(raw).map(|(d, _)| d)
}

/// Parses a date with an optional time of day (`2024-03-05`,
/// `2024-03-05T14:20:00Z`, `03/05/2024 02:20 PM`).
pub fn parse_datetime(raw: &str) -> Option<(NaiveDate, Option<NaiveTime>)> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    if let Some(d) = date_only(raw) {
        return Some((d, None));
    }
    let (date, time) = raw.split_once('T').or_else(|| raw.split_once(' '))?;
    let d = date_only(date.trim())?;
    let time = time.trim().trim_end_matches('Z');
    let time = time.split(['+']).next().unwrap_or(time);
    Some((d, parse_clock(time)))
}

/// Case-folded tokens with punctuation removed.
pub fn text_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Tokens joined by single spaces.
pub fn normalize_text(text: &str) -> String {
    text_tokens(text).join(" ")
}

/// Share of distinct tokens two strings have in common, relative to the
/// larger token set. Two texts without tokens overlap fully.
pub fn token_overlap(a: &str, b: &str) -> f64 {
    let a: BTreeSet<String> = text_tokens(a).into_iter().collect();
    let b: BTreeSet<String> = text_tokens(b).into_iter().collect();
    let larger = a.len().max(b.len());
    if larger == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / larger as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_with_units_and_separators() {
        assert_eq!(parse_number("55 mph"), Some(55.0));
        assert_eq!(parse_number("about $12,500 in damage"), Some(12500.0));
        assert_eq!(parse_number("I-95"), Some(95.0));
        assert_eq!(parse_number("-5 degrees"), Some(-5.0));
        assert_eq!(parse_number("3.5 miles"), Some(3.5));
        assert_eq!(parse_number("14:30"), Some(1430.0));
        assert_eq!(parse_number("around 2:05 p.m."), Some(205.0));
        assert_eq!(parse_number("no number"), None);
    }

    #[test]
    fn stored_times_decode_to_minutes() {
        assert_eq!(minutes_of_day(1430.0, None), Some(870));
        assert_eq!(minutes_of_day(230.0, Some(Meridiem::Pm)), Some(870));
        assert_eq!(minutes_of_day(1215.0, Some(Meridiem::Am)), Some(15));
        assert_eq!(minutes_of_day(2.0, Some(Meridiem::Pm)), Some(840));
        assert_eq!(minutes_of_day(1475.0, None), None);
        assert_eq!(minutes_of_day(12.5, None), None);
    }

    #[test]
    fn clock_readings() {
        let hm = |h, m| NaiveTime::from_hms_opt(h, m, 0);
        assert_eq!(parse_clock("14:30"), hm(14, 30));
        assert_eq!(parse_clock("2:30 PM"), hm(14, 30));
        assert_eq!(parse_clock("2:30pm"), hm(14, 30));
        assert_eq!(parse_clock("12:10 a.m."), hm(0, 10));
        assert_eq!(parse_clock("7 PM"), hm(19, 0));
        assert_eq!(parse_clock("1430"), None);
        assert_eq!(parse_minutes("1430"), Some(870));
    }

    #[test]
    fn dates_in_common_layouts() {
        let d = NaiveDate::from_ymd_opt(2023, 3, 5).unwrap();
        for raw in [
            "2023-03-05",
            "03/05/2023",
            "3/5/23",
            "March 5, 2023",
            "2023-03-05T14:20:00Z",
            "03/05/2023 02:20 PM",
        ] {
            assert_eq!(parse_date(raw), Some(d), "{raw}");
        }
        assert_eq!(
            parse_datetime("2023-03-05T14:20:00Z"),
            Some((d, NaiveTime::from_hms_opt(14, 20, 0)))
        );
        assert_eq!(parse_date("yesterday"), None);
    }

    #[test]
    fn token_overlap_ignores_case_and_punctuation() {
        assert_eq!(token_overlap("Main St.", "main st"), 1.0);
        assert_eq!(token_overlap("Main Street", "Main St"), 0.5);
        assert_eq!(normalize_text("  Union-Pacific  RR "), "union pacific rr");
    }
}
