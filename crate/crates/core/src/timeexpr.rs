//! Relative time expressions, resolved against the simulator clock.
//!
//! Grammar (case-insensitive):
//!
//! ```text
//! datetime := "now" | "end of" DAY | TIME [DAY] | DAY ["at"] [TIME] | ISO-8601
//! TIME     := H[:MM] (AM|PM) | "noon" | "midnight"
//! DAY      := today | tomorrow | yesterday | (on|next|last) WEEKDAY | on YYYY-MM-DD
//! ```
//!
//! A bare time means that time today; a bare day means its midnight and
//! `end of DAY` the following midnight.
//! `on`/`next` pick the nearest matching weekday after today, `last` the
//! nearest before it. Rendering produces the canonical form the parser
//! accepts, so `parse(render(t)) == t` for minute-aligned times.

use std::sync::OnceLock;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike, Weekday};
use regex::Regex;

use crate::types::parse_datetime;

const WEEKDAYS: [(&str, Weekday); 7] = [
    ("monday", Weekday::Mon),
    ("tuesday", Weekday::Tue),
    ("wednesday", Weekday::Wed),
    ("thursday", Weekday::Thu),
    ("friday", Weekday::Fri),
    ("saturday", Weekday::Sat),
    ("sunday", Weekday::Sun),
];

fn weekday_name(w: Weekday) -> &'static str {
    match w {
        Weekday::Mon => "Monday",
        Weekday::Tue => "Tuesday",
        Weekday::Wed => "Wednesday",
        Weekday::Thu => "Thursday",
        Weekday::Fri => "Friday",
        Weekday::Sat => "Saturday",
        Weekday::Sun => "Sunday",
    }
}

fn time_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^(?:(\d{1,2})(?::(\d{2}))?\s*([ap])\.?m\.?|(noon)|(midnight))$").unwrap())
}

fn day_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(?:(today)|(tomorrow)|(yesterday)|(on|next|last)\s+(monday|tuesday|wednesday|thursday|friday|saturday|sunday)|on\s+(\d{4}-\d{2}-\d{2}))$")
            .unwrap()
    })
}

/// Parses a time of day such as `3 PM`, `2:30 pm` or `noon`.
pub fn parse_time(s: &str) -> Option<NaiveTime> {
    let c = time_re().captures(s.trim())?;
    if c.get(4).is_some() {
        return NaiveTime::from_hms_opt(12, 0, 0);
    }
    if c.get(5).is_some() {
        return NaiveTime::from_hms_opt(0, 0, 0);
    }
    let h: u32 = c[1].parse().ok()?;
    let m: u32 = c.get(2).map_or(Some(0), |m| m.as_str().parse().ok())?;
    if !(1..=12).contains(&h) || m > 59 {
        return None;
    }
    let pm = c[3].eq_ignore_ascii_case("p");
    let h24 = match (h, pm) {
        (12, false) => 0,
        (12, true) => 12,
        (h, false) => h,
        (h, true) => h + 12,
    };
    NaiveTime::from_hms_opt(h24, m, 0)
}

/// Parses a day expression relative to `today`.
pub fn parse_day(s: &str, today: NaiveDate) -> Option<NaiveDate> {
    let c = day_re().captures(s.trim())?;
    if c.get(1).is_some() {
        return Some(today);
    }
    if c.get(2).is_some() {
        return today.succ_opt();
    }
    if c.get(3).is_some() {
        return today.pred_opt();
    }
    if let Some(iso) = c.get(6) {
        return NaiveDate::parse_from_str(iso.as_str(), "%Y-%m-%d").ok();
    }
    let dir = c[4].to_ascii_lowercase();
    let wanted = WEEKDAYS.iter().find(|(n, _)| c[5].eq_ignore_ascii_case(n))?.1;
    let step = if dir == "last" { -1 } else { 1 };
    (1..=7).map(|k| today + Duration::days(step * k)).find(|d| d.weekday() == wanted)
}

/// Resolves a datetime expression against `now`.
pub fn parse_datetime_expr(s: &str, now: NaiveDateTime) -> Option<NaiveDateTime> {
    let s = s.trim().trim_end_matches(['?', '.', '!']).trim();
    if s.eq_ignore_ascii_case("now") {
        return Some(now);
    }
    if let Some(day) = s.strip_prefix("end of ").or_else(|| s.strip_prefix("End of ")) {
        return parse_day_range(day, now).map(|(_, end)| end);
    }
    if let Some(dt) = parse_datetime(s) {
        return Some(dt);
    }
    let today = now.date();
    if let Some(t) = parse_time(s) {
        return Some(today.and_time(t));
    }
    if let Some(d) = parse_day(s, today) {
        return Some(d.and_time(NaiveTime::MIN));
    }
    // "DAY at TIME"
    if let Some((d, t)) = s.split_once(" at ") {
        if let (Some(d), Some(t)) = (parse_day(d, today), parse_time(t)) {
            return Some(d.and_time(t));
        }
    }
    // "TIME DAY" or "DAY TIME".
    let words: Vec<&str> = s.split_whitespace().collect();
    for split in 1..words.len() {
        let (a, b) = (words[..split].join(" "), words[split..].join(" "));
        if let (Some(t), Some(d)) = (parse_time(&a), parse_day(&b, today)) {
            return Some(d.and_time(t));
        }
        if let (Some(d), Some(t)) = (parse_day(&a, today), parse_time(&b)) {
            return Some(d.and_time(t));
        }
    }
    None
}

/// `[start, end)` of a whole-day expression.
pub fn parse_day_range(s: &str, now: NaiveDateTime) -> Option<(NaiveDateTime, NaiveDateTime)> {
    let d = parse_day(s.trim().trim_end_matches(['?', '.', '!']).trim(), now.date())?;
    let start = d.and_time(NaiveTime::MIN);
    Some((start, start + Duration::days(1)))
}

pub fn render_time(t: NaiveTime) -> String {
    let (h, m) = (t.hour(), t.minute());
    let (h12, suffix) = match h {
        0 => (12, "AM"),
        1..=11 => (h, "AM"),
        12 => (12, "PM"),
        _ => (h - 12, "PM"),
    };
    if m == 0 {
        format!("{h12} {suffix}")
    } else {
        format!("{h12}:{m:02} {suffix}")
    }
}

pub fn render_day(d: NaiveDate, today: NaiveDate) -> String {
    match (d - today).num_days() {
        0 => "today".into(),
        1 => "tomorrow".into(),
        -1 => "yesterday".into(),
        2..=6 => format!("on {}", weekday_name(d.weekday())),
        -7..=-2 => format!("last {}", weekday_name(d.weekday())),
        _ => format!("on {}", d.format("%Y-%m-%d")),
    }
}

/// Canonical rendering: a bare time for today, otherwise `TIME DAY`.
pub fn render_datetime(dt: NaiveDateTime, now: NaiveDateTime) -> String {
    let t = render_time(dt.time());
    if dt.date() == now.date() {
        t
    } else {
        format!("{t} {}", render_day(dt.date(), now.date()))
    }
}

/// Rendering that always names the day (`3 PM today`).
pub fn render_datetime_with_day(dt: NaiveDateTime, now: NaiveDateTime) -> String {
    format!("{} {}", render_time(dt.time()), render_day(dt.date(), now.date()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn now() -> NaiveDateTime {
        // A Tuesday.
        parse_datetime("2024-06-04T10:00:00").unwrap()
    }

    #[test]
    fn resolution_table() {
        let table = [
            ("3 PM", "2024-06-04T15:00:00"),
            ("3 PM today", "2024-06-04T15:00:00"),
            ("today 3 PM", "2024-06-04T15:00:00"),
            ("today at 3 pm", "2024-06-04T15:00:00"),
            ("2:30 PM tomorrow", "2024-06-05T14:30:00"),
            ("9 AM yesterday", "2024-06-03T09:00:00"),
            ("12 AM today", "2024-06-04T00:00:00"),
            ("noon tomorrow", "2024-06-05T12:00:00"),
            ("12 PM on Friday", "2024-06-07T12:00:00"),
            ("10 AM last Friday", "2024-05-31T10:00:00"),
            ("10 AM last Monday", "2024-06-03T10:00:00"),
            ("8 AM on Tuesday", "2024-06-11T08:00:00"),
            ("8 AM next Thursday", "2024-06-06T08:00:00"),
            ("tomorrow", "2024-06-05T00:00:00"),
            ("end of tomorrow", "2024-06-06T00:00:00"),
            ("now", "2024-06-04T10:00:00"),
            ("4 PM on 2024-05-20", "2024-05-20T16:00:00"),
            ("2024-06-01T08:00:00", "2024-06-01T08:00:00"),
        ];
        for (expr, want) in table {
            assert_eq!(parse_datetime_expr(expr, now()), parse_datetime(want), "{expr}");
        }
    }

    #[test]
    fn rejects_garbage() {
        for s in ["13 PM", "3:75 PM", "someday", "", "at 3"] {
            assert_eq!(parse_datetime_expr(s, now()), None, "{s}");
        }
    }

    #[test]
    fn day_range() {
        let (a, b) = parse_day_range("tomorrow", now()).unwrap();
        assert_eq!(a, parse_datetime("2024-06-05T00:00:00").unwrap());
        assert_eq!(b, parse_datetime("2024-06-06T00:00:00").unwrap());
    }

    #[test]
    fn render_round_trips_over_two_weeks() {
        let n = now();
        let start = n - Duration::days(10);
        for k in 0..(20 * 48) {
            let dt = start + Duration::minutes(30 * k);
            let text = render_datetime(dt, n);
            assert_eq!(parse_datetime_expr(&text, n), Some(dt), "{text}");
            assert_eq!(parse_datetime_expr(&render_datetime_with_day(dt, n), n), Some(dt));
        }
    }
}
