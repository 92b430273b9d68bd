//! Tokenizer and LL(1) parser for transcode token streams.
//!
//! Tokenization is greedy longest-match over the closed vocabulary, so
//! `caramel ice cream` becomes one token while `ice cream cone` never
//! fragments into `ice cream` + `cone`. The parser is a single-pass
//! cursor over tokens; one token of lookahead decides every production.

use crate::error::TranscodeError;
use crate::menu::Menu;
use crate::transcode::{
    Action, Clause, IntentProgram, ItemClause, Polar, Slot, SlotLabel, TranscodeVocab,
    MAX_QUANTITY,
};

/// Splits a space-joined transcode line into vocabulary tokens by greedy
/// longest match. Position in errors counts words, not tokens.
pub fn tokenize(text: &str, menu: &Menu) -> Result<Vec<String>, TranscodeError> {
    let vocab = TranscodeVocab::from_menu(menu);
    tokenize_with(text, &vocab)
}

pub(crate) fn tokenize_with(
    text: &str,
    vocab: &TranscodeVocab,
) -> Result<Vec<String>, TranscodeError> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let longest = vocab.entity_max_words().min(words.len() - i);
        let mut matched = None;
        for len in (1..=longest).rev() {
            let candidate = words[i..i + len].join(" ");
            if vocab.contains(&candidate) {
                matched = Some((candidate, len));
                break;
            }
        }
        match matched {
            Some((tok, len)) => {
                tokens.push(tok);
                i += len;
            }
            None => {
                return Err(TranscodeError::Untokenizable {
                    text: text.into(),
                    position: i,
                })
            }
        }
    }
    Ok(tokens)
}

/// Parses a token sequence into a validated program.
pub fn parse(tokens: &[String], menu: &Menu) -> Result<IntentProgram, TranscodeError> {
    Parser {
        tokens,
        pos: 0,
        menu,
    }
    .program()
}

/// Tokenizes and parses a space-joined line in one step.
pub fn parse_line(text: &str, menu: &Menu) -> Result<IntentProgram, TranscodeError> {
    parse(&tokenize(text, menu)?, menu)
}

struct Parser<'a> {
    tokens: &'a [String],
    pos: usize,
    menu: &'a Menu,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.tokens.get(self.pos).map(|s| s.as_str())
    }

    fn bump(&mut self) -> Option<&'a str> {
        let t = self.peek();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, expected: &str) -> TranscodeError {
        TranscodeError::Syntax {
            position: self.pos,
            expected: expected.into(),
            found: self.peek().unwrap_or("<end>").into(),
        }
    }

    fn program(mut self) -> Result<IntentProgram, TranscodeError> {
        if self.tokens.is_empty() {
            return Err(TranscodeError::EmptyProgram);
        }
        let mut clauses = Vec::new();
        while self.peek().is_some() {
            clauses.push(self.clause()?);
        }
        IntentProgram::new(clauses, self.menu)
    }

    fn clause(&mut self) -> Result<Clause, TranscodeError> {
        match self.peek() {
            Some("new_item") => {
                self.bump();
                self.item_clause().map(Clause::Item)
            }
            Some("yes") | Some("no") => {
                let polar = if self.bump() == Some("yes") {
                    Polar::Yes
                } else {
                    Polar::No
                };
                if self.peek() != Some("polar_answer") {
                    return Err(self.err("polar_answer"));
                }
                self.bump();
                Ok(Clause::Polar(polar))
            }
            _ => Err(self.err("new_item | yes | no")),
        }
    }

    fn quantity(&mut self, rule: &str) -> Result<u32, TranscodeError> {
        let q = self
            .peek()
            .and_then(|t| t.parse::<u32>().ok())
            .filter(|&q| q <= MAX_QUANTITY)
            .ok_or_else(|| self.err(rule))?;
        self.bump();
        Ok(q)
    }

    fn item_clause(&mut self) -> Result<ItemClause, TranscodeError> {
        let mut quantity = self.quantity("a quantity 1..=10")?;
        if quantity == 0 {
            self.pos -= 1;
            return Err(self.err("a quantity 1..=10"));
        }
        let item = match self.peek() {
            Some(t) if self.menu.is_item(t) => {
                self.bump();
                t.to_string()
            }
            Some(t) => {
                return Err(TranscodeError::UnknownEntity {
                    token: t.into(),
                    context: "not a menu item".into(),
                })
            }
            None => return Err(self.err("an item name")),
        };
        let mut slots = Vec::new();
        loop {
            match self.peek() {
                Some(t) if SlotLabel::from_str(t).is_some() => {
                    let label = SlotLabel::from_str(t).unwrap();
                    self.bump();
                    let q = self.quantity("a quantity 0..=10")?;
                    if q == 0 && label == SlotLabel::Size {
                        self.pos -= 1;
                        return Err(self.err("a quantity 1..=10 (size cannot be excluded)"));
                    }
                    let value = match self.peek() {
                        Some(v) if self.menu.modifier_legal(&item, label, v) => {
                            self.bump();
                            v.to_string()
                        }
                        Some(v) => {
                            return Err(TranscodeError::UnknownEntity {
                                token: v.into(),
                                context: format!("not a legal {label} value for `{item}`"),
                            })
                        }
                        None => return Err(self.err("a modifier value")),
                    };
                    slots.push(Slot {
                        label,
                        quantity: q,
                        value,
                    });
                }
                // A `quantity` slot is surface variation, not state: fold
                // it into the clause quantity and move on.
                Some("quantity") => {
                    self.bump();
                    let q = self.quantity("a quantity 1..=10")?;
                    if q == 0 {
                        self.pos -= 1;
                        return Err(self.err("a quantity 1..=10"));
                    }
                    quantity = q;
                }
                Some(t) if Action::from_str(t).is_some() => {
                    let action = Action::from_str(t).unwrap();
                    self.bump();
                    return Ok(ItemClause {
                        quantity,
                        item,
                        slots,
                        action,
                    });
                }
                _ => {
                    return Err(self.err(
                        "size | extras | sub_item | quantity | add_item | delete_item | update_item",
                    ))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::menu::Menu;

    fn menu() -> Menu {
        Menu::builtin()
    }

    #[test]
    fn tokenize_keeps_multiword_entities_whole() {
        let m = menu();
        let toks = tokenize(
            "new_item 1 caramel ice cream size 1 small extras 1 whipped cream add_item",
            &m,
        )
        .unwrap();
        assert_eq!(
            toks,
            vec![
                "new_item",
                "1",
                "caramel ice cream",
                "size",
                "1",
                "small",
                "extras",
                "1",
                "whipped cream",
                "add_item"
            ]
        );
    }

    #[test]
    fn tokenize_prefers_longest_match() {
        let m = menu();
        let toks = tokenize("new_item 1 ice cream cone add_item", &m).unwrap();
        assert_eq!(toks[2], "ice cream cone");
    }

    #[test]
    fn tokenize_rejects_out_of_vocabulary_words() {
        let m = menu();
        let err = tokenize("new_item 1 espresso add_item", &m).unwrap_err();
        assert!(matches!(
            err,
            TranscodeError::Untokenizable { position: 2, .. }
        ));
    }

    #[test]
    fn parse_round_trips_canonical_lines() {
        let m = menu();
        let line = "new_item 2 coffee size 1 large sub_item 0 sugar add_item yes polar_answer";
        let p = parse_line(line, &m).unwrap();
        assert_eq!(p.to_line(), line);
        assert_eq!(p.clauses().len(), 2);
    }

    #[test]
    fn quantity_slot_folds_into_clause_quantity() {
        let m = menu();
        let p = parse_line("new_item 1 coffee quantity 3 add_item", &m).unwrap();
        assert_eq!(p.to_line(), "new_item 3 coffee add_item");
    }

    #[test]
    fn syntax_error_reports_position_and_expectation() {
        let m = menu();
        let err = parse_line("new_item 1 coffee", &m).unwrap_err();
        match err {
            TranscodeError::Syntax {
                position,
                expected,
                found,
            } => {
                assert_eq!(position, 3);
                assert_eq!(found, "<end>");
                assert!(expected.contains("add_item"));
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn missing_polar_answer_is_a_syntax_error() {
        let m = menu();
        let err = parse_line("yes", &m).unwrap_err();
        assert!(matches!(err, TranscodeError::Syntax { position: 1, .. }));
    }

    #[test]
    fn zero_clause_quantity_is_a_syntax_error_at_the_digit() {
        let m = menu();
        let err = parse_line("new_item 0 coffee add_item", &m).unwrap_err();
        assert!(matches!(err, TranscodeError::Syntax { position: 1, .. }));
    }

    #[test]
    fn modifier_of_wrong_item_is_unknown_entity() {
        let m = menu();
        let err = parse_line("new_item 1 coffee extras 1 sprinkles add_item", &m).unwrap_err();
        assert!(matches!(err, TranscodeError::UnknownEntity { .. }));
    }

    #[test]
    fn empty_input_is_empty_program() {
        let m = menu();
        assert_eq!(
            parse_line("", &m).unwrap_err(),
            TranscodeError::EmptyProgram
        );
    }
}
