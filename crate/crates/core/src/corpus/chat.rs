//! CHAT transcript parsing and utterance cleaning.
//!
//! Only the subset of CHAT needed to recover speaker-tagged main tiers is
//! understood: `@` headers, `*` main tiers, `%` dependent tiers and
//! tab-indented continuation lines. Everything else is rejected as malformed.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ChatError;

/// Version tag of the cleaning rule table. Bump when a rule changes.
pub const CLEANING_RULES_VERSION: u32 = 1;

/// One main-tier line of a transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub raw_text: String,
    pub clean_text: String,
}

/// A parsed CHAT file before a label has been attached.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedChat {
    pub headers: Vec<(String, String)>,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug)]
enum Tier {
    Header(String, String),
    Main(String, String),
    Dependent,
}

/// Parses a CHAT document into its main-tier utterances.
///
/// Dependent tiers and headers never become utterances. Utterances whose
/// cleaned text is empty are dropped.
pub fn parse_chat(raw: &str) -> Result<ParsedChat, ChatError> {
    let raw = raw.strip_prefix('\u{feff}').unwrap_or(raw);
    let mut tiers: Vec<Tier> = Vec::new();
    let mut seen_begin = false;
    let mut seen_end = false;

    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        if seen_end {
            return Err(ChatError::ContentAfterEnd { line: line_no });
        }
        if line.starts_with('\t') {
            let text = line.trim();
            match tiers.last_mut() {
                Some(Tier::Main(_, body)) | Some(Tier::Header(_, body)) => {
                    if !body.is_empty() {
                        body.push(' ');
                    }
                    body.push_str(text);
                }
                Some(Tier::Dependent) => {}
                None => return Err(ChatError::OrphanContinuation { line: line_no }),
            }
            continue;
        }

        if let Some(rest) = line.strip_prefix('@') {
            let (name, value) = match rest.split_once(':') {
                Some((name, value)) => (name.trim(), value.trim()),
                None => (rest.trim(), ""),
            };
            match name {
                "UTF8" if !seen_begin && tiers.is_empty() => continue,
                "Begin" => {
                    if seen_begin || !tiers.is_empty() {
                        return Err(ChatError::MisplacedBegin { line: line_no });
                    }
                    seen_begin = true;
                    continue;
                }
                "End" => {
                    if !seen_begin {
                        return Err(ChatError::MissingBegin);
                    }
                    seen_end = true;
                    continue;
                }
                _ => {}
            }
            if !seen_begin {
                return Err(ChatError::MissingBegin);
            }
            tiers.push(Tier::Header(name.to_string(), value.to_string()));
        } else if let Some(rest) = line.strip_prefix('*') {
            if !seen_begin {
                return Err(ChatError::MissingBegin);
            }
            let (code, text) = rest
                .split_once(':')
                .ok_or(ChatError::MissingSeparator { line: line_no })?;
            let code = code.trim();
            if code.is_empty() || code.contains(char::is_whitespace) {
                return Err(ChatError::MissingSeparator { line: line_no });
            }
            tiers.push(Tier::Main(code.to_string(), text.trim().to_string()));
        } else if let Some(rest) = line.strip_prefix('%') {
            if !seen_begin {
                return Err(ChatError::MissingBegin);
            }
            if !rest.contains(':') {
                return Err(ChatError::MissingSeparator { line: line_no });
            }
            tiers.push(Tier::Dependent);
        } else {
            return Err(ChatError::UnrecognizedLine { line: line_no });
        }
    }

    if !seen_begin {
        return Err(ChatError::MissingBegin);
    }
    if !seen_end {
        return Err(ChatError::MissingEnd);
    }

    let mut parsed = ParsedChat::default();
    for tier in tiers {
        match tier {
            Tier::Header(name, value) => parsed.headers.push((name, value)),
            Tier::Main(speaker, raw_text) => {
                let clean_text = clean_utterance(&raw_text);
                if !clean_text.is_empty() {
                    parsed.utterances.push(Utterance {
                        speaker,
                        raw_text,
                        clean_text,
                    });
                }
            }
            Tier::Dependent => {}
        }
    }
    Ok(parsed)
}

fn bracket_group() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[[^\[\]]*\]").expect("valid regex"))
}

fn media_bullet() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new("\u{15}[^\u{15}]*\u{15}").expect("valid regex"))
}

/// Removes CHAT annotation codes from a main-tier payload.
///
/// Rules, in order: media bullets and stray bullet delimiters;
/// `&`-prefixed tokens; the pause marks `(.)`, `(..)`, `(...)`; bracketed
/// code groups; `<` and `>` (the enclosed words stay); `+`-prefixed tokens;
/// whitespace collapse. The rule pass is repeated until nothing changes, so
/// the result is a fixpoint.
pub fn clean_utterance(raw: &str) -> String {
    let mut current = clean_once(raw);
    loop {
        let next = clean_once(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

fn clean_once(raw: &str) -> String {
    let text = media_bullet().replace_all(raw, " ").replace('\u{15}', " ");
    let text = drop_tokens_with_prefix(&text, '&');

    let mut text = text;
    for pause in ["(...)", "(..)", "(.)"] {
        text = text.replace(pause, " ");
    }

    loop {
        let next = bracket_group().replace_all(&text, " ").into_owned();
        if next == text {
            break;
        }
        text = next;
    }

    let text: String = text.chars().filter(|c| *c != '<' && *c != '>').collect();
    let text = drop_tokens_with_prefix(&text, '+');
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn drop_tokens_with_prefix(text: &str, prefix: char) -> String {
    text.split_whitespace()
        .filter(|tok| !tok.starts_with(prefix))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let parsed = parse_chat("@Begin\n*PAR:\tthe boy fell .\n@End").unwrap();
        assert_eq!(parsed.utterances.len(), 1);
        assert_eq!(parsed.utterances[0].speaker, "PAR");
        assert_eq!(parsed.utterances[0].raw_text, "the boy fell .");
    }

    #[test]
    fn dependent_tiers_excluded() {
        let raw = "@Begin\n*PAR:\tthe boy fell .\n%mor:\tdet|the n|boy v|fall .\n@End\n";
        let parsed = parse_chat(raw).unwrap();
        assert_eq!(parsed.utterances.len(), 1);
        assert!(!parsed.utterances[0].raw_text.contains("det|"));
    }

    #[test]
    fn speakers_preserved() {
        let raw = "@Begin\n*INV:\ttell me .\n*PAR:\tthe boy fell .\n@End";
        let parsed = parse_chat(raw).unwrap();
        let speakers: Vec<_> = parsed.utterances.iter().map(|u| u.speaker.as_str()).collect();
        assert_eq!(speakers, ["INV", "PAR"]);
    }

    #[test]
    fn continuation_attaches_to_previous_tier() {
        let raw = "@Begin\n*PAR:\tthe boy\n\tfell down .\n%com:\tx\n\tmore\n@End";
        let parsed = parse_chat(raw).unwrap();
        assert_eq!(parsed.utterances[0].raw_text, "the boy fell down .");
    }

    #[test]
    fn headers_collected() {
        let raw = "@UTF8\n@Begin\n@Languages:\teng\n@Participants:\tPAR Participant\n*PAR:\tok .\n@End";
        let parsed = parse_chat(raw).unwrap();
        assert_eq!(parsed.headers[0], ("Languages".to_string(), "eng".to_string()));
    }

    #[test]
    fn malformed_files() {
        assert_eq!(parse_chat("*PAR:\thi .\n@End"), Err(ChatError::MissingBegin));
        assert_eq!(parse_chat("@Begin\n*PAR:\thi ."), Err(ChatError::MissingEnd));
        assert_eq!(
            parse_chat("@Begin\n*PAR hi .\n@End"),
            Err(ChatError::MissingSeparator { line: 2 })
        );
        assert_eq!(
            parse_chat("@Begin\nhello\n@End"),
            Err(ChatError::UnrecognizedLine { line: 2 })
        );
        assert_eq!(
            parse_chat("@Begin\n@End\n*PAR:\tlate ."),
            Err(ChatError::ContentAfterEnd { line: 3 })
        );
    }

    #[test]
    fn cleaning_examples() {
        assert_eq!(
            clean_utterance("&uh the boy (.) fell [//] fell down ."),
            "the boy fell fell down ."
        );
        assert_eq!(clean_utterance("the dog [x 2] barked ."), "the dog barked .");
        assert_eq!(clean_utterance("the boy fell ."), "the boy fell .");
    }

    #[test]
    fn cleaning_retrace_and_plus_codes() {
        assert_eq!(
            clean_utterance("<the boy> [/] the boy is +..."),
            "the boy the boy is"
        );
        assert_eq!(clean_utterance("&=laughs (..) (...) +/."), "");
        assert_eq!(clean_utterance("cookie \u{15}1200_2300\u{15}"), "cookie");
        assert_eq!(clean_utterance("jar \u{15}12"), "jar 12");
    }

    #[test]
    fn cleaning_reaches_fixpoint_on_nested_codes() {
        let once = clean_once("(<.>) <&uh> boy");
        assert_ne!(clean_once(&once), once);
        let cleaned = clean_utterance("(<.>) <&uh> boy");
        assert_eq!(cleaned, "boy");
        assert_eq!(clean_utterance(&cleaned), cleaned);
    }

    #[test]
    fn empty_utterances_dropped() {
        let parsed = parse_chat("@Begin\n*PAR:\t&uh (.)\n*PAR:\tok .\n@End").unwrap();
        assert_eq!(parsed.utterances.len(), 1);
    }
}
