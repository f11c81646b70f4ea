//! Normalization of US place and road names for key comparison.

use crate::values::text_tokens;

const STATES: [(&str, &str); 53] = [
    ("AL", "alabama"),
    ("AK", "alaska"),
    ("AZ", "arizona"),
    ("AR", "arkansas"),
    ("CA", "california"),
    ("CO", "colorado"),
    ("CT", "connecticut"),
    ("DE", "delaware"),
    ("DC", "district of columbia"),
    ("FL", "florida"),
    ("GA", "georgia"),
    ("HI", "hawaii"),
    ("ID", "idaho"),
    ("IL", "illinois"),
    ("IN", "indiana"),
    ("IA", "iowa"),
    ("KS", "kansas"),
    ("KY", "kentucky"),
    ("LA", "louisiana"),
    ("ME", "maine"),
    ("MD", "maryland"),
    ("MA", "massachusetts"),
    ("MI", "michigan"),
    ("MN", "minnesota"),
    ("MS", "mississippi"),
    ("MO", "missouri"),
    ("MT", "montana"),
    ("NE", "nebraska"),
    ("NV", "nevada"),
    ("NH", "new hampshire"),
    ("NJ", "new jersey"),
    ("NM", "new mexico"),
    ("NY", "new york"),
    ("NC", "north carolina"),
    ("ND", "north dakota"),
    ("OH", "ohio"),
    ("OK", "oklahoma"),
    ("OR", "oregon"),
    ("PA", "pennsylvania"),
    ("PR", "puerto rico"),
    ("RI", "rhode island"),
    ("SC", "south carolina"),
    ("SD", "south dakota"),
    ("TN", "tennessee"),
    ("TX", "texas"),
    ("UT", "utah"),
    ("VT", "vermont"),
    ("VA", "virginia"),
    ("WA", "washington"),
    ("WV", "west virginia"),
    ("WI", "wisconsin"),
    ("WY", "wyoming"),
    ("VI", "virgin islands"),
];

/// Two-letter postal code for a state name or code. Unrecognized input is
/// returned folded so that equal spellings still compare equal.
pub fn normalize_state(raw: &str) -> Option<String> {
    let folded = text_tokens(raw).join(" ");
    if folded.is_empty() {
        return None;
    }
    let code = STATES.iter().find_map(|(code, name)| {
        (folded.eq_ignore_ascii_case(code) || folded == *name).then_some(*code)
    });
    Some(code.map(str::to_string).unwrap_or(folded))
}

/// County name without a trailing "county"/"parish"/"borough".
pub fn normalize_county(raw: &str) -> Option<String> {
    let mut tokens = text_tokens(raw);
    if tokens.len() > 1
        && matches!(
            tokens.last().map(String::as_str),
            Some("county" | "parish" | "borough")
        )
    {
        tokens.pop();
    }
    (!tokens.is_empty()).then(|| tokens.join(" "))
}

/// City name without a leading "city of"/"town of"/"village of".
pub fn normalize_city(raw: &str) -> Option<String> {
    let mut tokens = text_tokens(raw);
    if tokens.len() > 2
        && matches!(tokens[0].as_str(), "city" | "town" | "village")
        && tokens[1] == "of"
    {
        tokens.drain(..2);
    }
    (!tokens.is_empty()).then(|| tokens.join(" "))
}

/// Road name with common abbreviations spelled out.
pub fn normalize_highway(raw: &str) -> Option<String> {
    let tokens: Vec<String> = text_tokens(raw)
        .into_iter()
        .map(|t| {
            let full = match t.as_str() {
                "st" => "street",
                "ave" | "av" => "avenue",
                "rd" => "road",
                "hwy" => "highway",
                "blvd" => "boulevard",
                "dr" => "drive",
                "ln" => "lane",
                "pkwy" => "parkway",
                "ct" => "court",
                "n" => "north",
                "s" => "south",
                "e" => "east",
                "w" => "west",
                _ => return t,
            };
            full.to_string()
        })
        .collect();
    (!tokens.is_empty()).then(|| tokens.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_names_and_codes_agree() {
        assert_eq!(normalize_state("Illinois").as_deref(), Some("IL"));
        assert_eq!(normalize_state(" il ").as_deref(), Some("IL"));
        assert_eq!(normalize_state("New  York").as_deref(), Some("NY"));
        assert_eq!(normalize_state("Atlantis").as_deref(), Some("atlantis"));
        assert_eq!(normalize_state(" "), None);
    }

    #[test]
    fn county_and_city_suffixes() {
        assert_eq!(normalize_county("Cook County"), normalize_county("COOK"));
        assert_eq!(
            normalize_county("St. Mary Parish").as_deref(),
            Some("st mary")
        );
        assert_eq!(normalize_city("City of Aurora").as_deref(), Some("aurora"));
        assert_eq!(normalize_city("Fort-Worth"), normalize_city("fort worth"));
    }

    #[test]
    fn highway_abbreviations() {
        assert_eq!(
            normalize_highway("N. Main St."),
            normalize_highway("North Main Street")
        );
        assert_ne!(normalize_highway("Main St"), normalize_highway("Elm St"));
    }
}
