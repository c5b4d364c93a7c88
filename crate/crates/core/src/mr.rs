//! Textual meaning representation of a dialogue act:
//! `Intent ( slot = value ; slot = value )`.
//!
//! This is the payload format exchanged with external generator backends.
//! Serialization is canonical (single spaces around every delimiter); parsing
//! accepts any whitespace around delimiters and splits each pair on the first
//! key-value separator, so values may contain spaces and `=`.

use thiserror::Error;

use crate::dialogue::{DialogueAct, SlotValue};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MrError {
    #[error("malformed meaning representation at byte {position}: {reason}")]
    MalformedMr { position: usize, reason: String },
    #[error("invalid grammar configuration: {0}")]
    BadConfig(String),
}

fn malformed(position: usize, reason: impl Into<String>) -> MrError {
    MrError::MalformedMr {
        position,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MrGrammarConfig {
    pair_separator: char,
    kv_separator: char,
    open: char,
    close: char,
}

impl Default for MrGrammarConfig {
    fn default() -> Self {
        MrGrammarConfig {
            pair_separator: ';',
            kv_separator: '=',
            open: '(',
            close: ')',
        }
    }
}

impl MrGrammarConfig {
    pub fn new(pair_separator: char, kv_separator: char, open: char, close: char) -> Result<Self, MrError> {
        let all = [pair_separator, kv_separator, open, close];
        for (i, c) in all.iter().enumerate() {
            if c.is_alphanumeric() || c.is_whitespace() {
                return Err(MrError::BadConfig(format!("{c:?} is alphanumeric or whitespace")));
            }
            if all[..i].contains(c) {
                return Err(MrError::BadConfig(format!("{c:?} used twice")));
            }
        }
        Ok(MrGrammarConfig {
            pair_separator,
            kv_separator,
            open,
            close,
        })
    }
}

/// Canonical form, e.g. `Greet ( )` or `Inform ( city = Boston ; day = monday )`.
pub fn serialize_da(da: &DialogueAct, cfg: &MrGrammarConfig) -> String {
    let mut out = String::with_capacity(16 + da.len() * 24);
    out.push_str(da.intent());
    out.push(' ');
    out.push(cfg.open);
    for (i, sv) in da.slots().iter().enumerate() {
        if i > 0 {
            out.push(' ');
            out.push(cfg.pair_separator);
        }
        out.push(' ');
        out.push_str(sv.slot());
        out.push(' ');
        out.push(cfg.kv_separator);
        out.push(' ');
        out.push_str(sv.value());
    }
    out.push(' ');
    out.push(cfg.close);
    out
}

pub fn parse_da(text: &str, cfg: &MrGrammarConfig) -> Result<DialogueAct, MrError> {
    let open_at = text
        .find(cfg.open)
        .ok_or_else(|| malformed(text.len(), "missing opening delimiter"))?;
    let intent = text[..open_at].trim();
    if intent.is_empty() {
        return Err(malformed(0, "empty intent"));
    }
    if let Some(i) = intent.find([cfg.close, cfg.pair_separator, cfg.kv_separator]) {
        return Err(malformed(i, "delimiter inside intent"));
    }

    let body_start = open_at + cfg.open.len_utf8();
    let trimmed_end = text.trim_end().len();
    if trimmed_end <= body_start || !text[..trimmed_end].ends_with(cfg.close) {
        return Err(malformed(trimmed_end, "missing closing delimiter"));
    }
    let body_end = trimmed_end - cfg.close.len_utf8();
    let body = &text[body_start..body_end];
    if let Some(i) = body.find([cfg.open, cfg.close]) {
        return Err(malformed(body_start + i, "unbalanced delimiters"));
    }

    let mut slots = Vec::new();
    if !body.trim().is_empty() {
        let mut offset = body_start;
        for piece in body.split(cfg.pair_separator) {
            let here = offset;
            offset += piece.len() + cfg.pair_separator.len_utf8();
            if piece.trim().is_empty() {
                return Err(malformed(here, "empty slot-value pair"));
            }
            let (slot, value) = piece
                .split_once(cfg.kv_separator)
                .ok_or_else(|| malformed(here, "missing key-value separator"))?;
            if slot.trim().is_empty() {
                return Err(malformed(here, "empty slot name"));
            }
            if value.trim().is_empty() {
                return Err(malformed(here, "empty value"));
            }
            let sv = SlotValue::new(slot, value).map_err(|e| malformed(here, e.to_string()))?;
            slots.push(sv);
        }
    }
    DialogueAct::new(intent, slots).map_err(|e| malformed(0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> MrGrammarConfig {
        MrGrammarConfig::default()
    }

    #[test]
    fn serializes_rate_book_canonically() {
        let da = DialogueAct::from_pairs(
            "RateBook",
            &[
                ("best_rating", "6"),
                ("object_select", "current"),
                ("object_type", "textbook"),
                ("rating_value", "3"),
            ],
        )
        .unwrap();
        assert_eq!(
            serialize_da(&da, &cfg()),
            "RateBook ( best_rating = 6 ; object_select = current ; object_type = textbook ; rating_value = 3 )"
        );
    }

    #[test]
    fn zero_slot_act() {
        let da = DialogueAct::from_pairs("Greet", &[]).unwrap();
        assert_eq!(serialize_da(&da, &cfg()), "Greet ( )");
        assert_eq!(parse_da("Greet ( )", &cfg()).unwrap(), da);
        assert_eq!(parse_da("Greet()", &cfg()).unwrap(), da);
    }

    #[test]
    fn parses_mixed_spacing_and_multiword_values() {
        let da = parse_da(
            "AddToPlaylist ( music_item = track; playlist = metal talks Metallica)",
            &cfg(),
        )
        .unwrap();
        assert_eq!(da.intent(), "AddToPlaylist");
        assert_eq!(da.len(), 2);
        assert_eq!(da.slots()[1].slot(), "playlist");
        assert_eq!(da.slots()[1].value(), "metal talks Metallica");
    }

    #[test]
    fn first_kv_separator_splits() {
        let da = parse_da("Calc ( expr = a = b )", &cfg()).unwrap();
        assert_eq!(da.slots()[0].slot(), "expr");
        assert_eq!(da.slots()[0].value(), "a = b");
        assert_eq!(parse_da(&serialize_da(&da, &cfg()), &cfg()).unwrap(), da);
    }

    #[test]
    fn rejects_malformed_inputs() {
        let bad = [
            ("BookRestaurant country = Honduras", "missing opening"),
            ("( a = b )", "empty intent"),
            ("X ( a = b", "missing closing"),
            ("X ( a = b ) trailing", "missing closing"),
            ("X ( a = (b) )", "unbalanced"),
            ("X ( = b )", "empty slot"),
            ("X ( a b )", "missing key-value"),
            ("X ( a = b ; ; c = d )", "empty slot-value pair"),
            ("X ( a = )", "empty value"),
            ("X ( a = b ; a = b )", "duplicate"),
            ("X; ( a = b )", "delimiter inside intent"),
        ];
        for (text, why) in bad {
            match parse_da(text, &cfg()) {
                Err(MrError::MalformedMr { reason, .. }) => {
                    assert!(reason.contains(why), "{text}: {reason}")
                }
                other => panic!("{text}: expected MalformedMr, got {other:?}"),
            }
        }
    }

    #[test]
    fn error_positions_point_into_the_text() {
        let Err(MrError::MalformedMr { position, .. }) = parse_da("X ( a = b ; c d )", &cfg()) else {
            panic!()
        };
        assert_eq!(&"X ( a = b ; c d )"[position..position + 4], " c d");
    }

    #[test]
    fn custom_grammar() {
        let c = MrGrammarConfig::new('|', ':', '[', ']').unwrap();
        let da = DialogueAct::from_pairs("Inform", &[("city", "new york"), ("day", "monday")]).unwrap();
        let s = serialize_da(&da, &c);
        assert_eq!(s, "Inform [ city : new york | day : monday ]");
        assert_eq!(parse_da(&s, &c).unwrap(), da);
        assert!(MrGrammarConfig::new(';', ';', '(', ')').is_err());
        assert!(MrGrammarConfig::new('a', '=', '(', ')').is_err());
        assert!(MrGrammarConfig::new(' ', '=', '(', ')').is_err());
    }

    fn ident() -> impl Strategy<Value = String> {
        "[A-Za-z_][A-Za-z0-9_ -]{0,10}[A-Za-z0-9_]".prop_map(|s| s)
    }

    fn value() -> impl Strategy<Value = String> {
        "[A-Za-z0-9=.,'!?-]{1,6}( [A-Za-z0-9=.,'!?-]{1,6}){0,3}"
    }

    fn act() -> impl Strategy<Value = DialogueAct> {
        (ident(), prop::collection::vec((ident(), value()), 0..6)).prop_map(|(intent, pairs)| {
            let mut slots: Vec<SlotValue> = Vec::new();
            for (s, v) in pairs {
                let sv = SlotValue::new(&s, &v).unwrap();
                if !slots.contains(&sv) {
                    slots.push(sv);
                }
            }
            DialogueAct::new(&intent, slots).unwrap()
        })
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(da in act()) {
            let s = serialize_da(&da, &cfg());
            prop_assert_eq!(parse_da(&s, &cfg()).unwrap(), da);
        }

        #[test]
        fn serialize_parse_is_idempotent(da in act(), pad in "[ \t]{0,3}") {
            // re-space the canonical form arbitrarily, then normalize twice
            let s = serialize_da(&da, &cfg()).replace(" ; ", &format!("{pad};{pad}"));
            let once = serialize_da(&parse_da(&s, &cfg()).unwrap(), &cfg());
            let twice = serialize_da(&parse_da(&once, &cfg()).unwrap(), &cfg());
            prop_assert_eq!(once, twice);
        }
    }
}
