//! Extracting verdicts, counts and reasons from free-text model replies.

use crate::error::{Error, Result};
use crate::model::Verdict;

const NUMBER_WORDS: [&str; 11] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

/// Alphanumeric runs with their byte offsets.
fn words(raw: &str) -> impl Iterator<Item = (usize, &str)> {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(move |w| (w.as_ptr() as usize - raw.as_ptr() as usize, w))
}

/// First standalone `yes`/`no`, case-insensitive.
pub fn parse_verdict(raw: &str) -> Result<Verdict> {
    for (_, w) in words(raw) {
        if w.eq_ignore_ascii_case("yes") {
            return Ok(Verdict::Yes);
        }
        if w.eq_ignore_ascii_case("no") {
            return Ok(Verdict::No);
        }
    }
    Err(Error::Parse {
        message: "no standalone yes/no found".into(),
        raw: raw.to_string(),
    })
}

/// First integer literal or number word (`zero`..`ten`). A literal with a
/// leading minus sign is rejected rather than skipped.
pub fn parse_count(raw: &str) -> Result<u32> {
    let fail = |message: String| Error::Parse {
        message,
        raw: raw.to_string(),
    };
    for (offset, w) in words(raw) {
        if w.bytes().all(|b| b.is_ascii_digit()) {
            let negative = raw[..offset].ends_with('-')
                && !raw[..offset - 1]
                    .chars()
                    .next_back()
                    .is_some_and(char::is_alphanumeric);
            if negative {
                return Err(fail(format!("negative count -{w}")));
            }
            return w
                .parse()
                .map_err(|_| fail(format!("count {w} out of range")));
        }
        if let Some(n) = NUMBER_WORDS.iter().position(|n| w.eq_ignore_ascii_case(n)) {
            return Ok(n as u32);
        }
    }
    Err(fail("no count found".into()))
}

/// Text after a `reason:` or `because` marker, or the whole reply.
pub fn extract_reason(raw: &str) -> String {
    let lower = raw.to_ascii_lowercase();
    for marker in ["reason:", "reason -", "reason", "because"] {
        if let Some(pos) = lower.find(marker) {
            let rest = raw[pos + marker.len()..].trim_start_matches([':', ' ', '-', '\n']);
            let rest = rest.trim();
            if !rest.is_empty() {
                return rest.to_string();
            }
        }
    }
    raw.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_examples() {
        assert_eq!(parse_verdict("YES, it is a toilet").unwrap(), Verdict::Yes);
        assert_eq!(parse_verdict("The answer is no.").unwrap(), Verdict::No);
        assert_eq!(parse_verdict("facing north, yes").unwrap(), Verdict::Yes);
        assert_eq!(parse_verdict("Nope. Not known; no.").unwrap(), Verdict::No);
        assert!(matches!(parse_verdict("maybe"), Err(Error::Parse { .. })));
        assert!(parse_verdict("yesterday's nonsense").is_err());
    }

    #[test]
    fn verdict_first_token_wins() {
        assert_eq!(
            parse_verdict("No, although yes in part").unwrap(),
            Verdict::No
        );
    }

    #[test]
    fn remote_style_reply() {
        let reply = "Yes - the door opens into a small room with a WC. Reason: a toilet pan and basin are drawn inside.";
        assert_eq!(parse_verdict(reply).unwrap(), Verdict::Yes);
        assert_eq!(
            extract_reason(reply),
            "a toilet pan and basin are drawn inside."
        );
    }

    #[test]
    fn count_examples() {
        assert_eq!(parse_count("There are 2 missing toilets").unwrap(), 2);
        assert_eq!(parse_count("zero missing instances").unwrap(), 0);
        assert_eq!(parse_count("Three. Reason: open rooms").unwrap(), 3);
        assert!(matches!(
            parse_count("I see none"),
            Err(Error::Parse { .. })
        ));
        assert!(parse_count("someone").is_err());
    }

    #[test]
    fn count_rejects_negative() {
        assert!(parse_count("-2 toilets").is_err());
        assert!(parse_count("count: -1").is_err());
        assert_eq!(parse_count("room B-2 has 1").unwrap(), 2);
    }

    #[test]
    fn count_overflow_is_parse_error() {
        assert!(parse_count("99999999999999999999").is_err());
    }

    #[test]
    fn reason_fallback_is_whole_text() {
        assert_eq!(extract_reason("  yes  "), "yes");
        assert_eq!(
            extract_reason("No because the room is a bedroom"),
            "the room is a bedroom"
        );
    }
}
