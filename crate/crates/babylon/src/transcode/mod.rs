//! The transcode target language.
//!
//! A transcode is a flat token sequence in a small regular language that an
//! order backend can execute directly:
//!
//! ```text
//! program      := clause+
//! clause       := item_clause | polar_clause
//! item_clause  := "new_item" qty item_name slot* action
//! slot         := label qty value
//! label        := "size" | "extras" | "sub_item"
//! action       := "add_item" | "delete_item" | "update_item"
//! polar_clause := ("yes" | "no") "polar_answer"
//! qty          := "0" | "1" | ... | "10"
//! ```
//!
//! Item names and slot values are menu entities and stay single tokens even
//! when multi-word (`caramel ice cream`). Quantity `0` is legal only on
//! `extras` and `sub_item` slots, where it encodes an exclusion ("no
//! sugar"). The parser additionally folds a `"quantity" qty` slot into the
//! clause quantity, so near-miss surface forms normalize to this grammar.

mod parser;
mod reduce;

pub use parser::{parse, parse_line, tokenize};
pub use reduce::{semantically_equal, OrderLine, OrderState};

use std::collections::HashMap;
use std::fmt;

use crate::error::TranscodeError;
use crate::menu::Menu;

/// Largest quantity the language can spell.
pub const MAX_QUANTITY: u32 = 10;

/// Slot labels, in canonical serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotLabel {
    Size,
    Extras,
    SubItem,
}

impl SlotLabel {
    pub const ALL: [SlotLabel; 3] = [SlotLabel::Size, SlotLabel::Extras, SlotLabel::SubItem];

    pub fn as_str(&self) -> &'static str {
        match self {
            SlotLabel::Size => "size",
            SlotLabel::Extras => "extras",
            SlotLabel::SubItem => "sub_item",
        }
    }

    pub fn from_str(s: &str) -> Option<SlotLabel> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }
}

impl fmt::Display for SlotLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What an item clause does to the order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Add,
    Delete,
    Update,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Add, Action::Delete, Action::Update];

    pub fn as_str(&self) -> &'static str {
        match self {
            Action::Add => "add_item",
            Action::Delete => "delete_item",
            Action::Update => "update_item",
        }
    }

    pub fn from_str(s: &str) -> Option<Action> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Yes/no answer to a clarification question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polar {
    Yes,
    No,
}

impl Polar {
    pub fn as_str(&self) -> &'static str {
        match self {
            Polar::Yes => "yes",
            Polar::No => "no",
        }
    }
}

/// One `label qty value` triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Slot {
    pub label: SlotLabel,
    pub quantity: u32,
    pub value: String,
}

/// One item-affecting clause.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ItemClause {
    pub quantity: u32,
    pub item: String,
    pub slots: Vec<Slot>,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Clause {
    Item(ItemClause),
    Polar(Polar),
}

/// A validated, non-empty transcode program.
///
/// Construction is the single validation point: every parse and every
/// generator path goes through [`IntentProgram::new`], so a value of this
/// type always serializes to a grammatical token sequence whose entities
/// and quantities are legal under the menu it was built against.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IntentProgram {
    clauses: Vec<Clause>,
}

impl IntentProgram {
    pub fn new(clauses: Vec<Clause>, menu: &Menu) -> Result<IntentProgram, TranscodeError> {
        if clauses.is_empty() {
            return Err(TranscodeError::EmptyProgram);
        }
        for clause in &clauses {
            if let Clause::Item(c) = clause {
                validate_item_clause(c, menu)?;
            }
        }
        Ok(IntentProgram { clauses })
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    /// Canonical token sequence for this program.
    pub fn serialize(&self) -> Vec<String> {
        let mut out = Vec::new();
        for clause in &self.clauses {
            match clause {
                Clause::Item(c) => {
                    out.push("new_item".into());
                    out.push(c.quantity.to_string());
                    out.push(c.item.clone());
                    for s in &c.slots {
                        out.push(s.label.as_str().into());
                        out.push(s.quantity.to_string());
                        out.push(s.value.clone());
                    }
                    out.push(c.action.as_str().into());
                }
                Clause::Polar(p) => {
                    out.push(p.as_str().into());
                    out.push("polar_answer".into());
                }
            }
        }
        out
    }

    /// Space-joined serialization, the on-disk text form.
    pub fn to_line(&self) -> String {
        self.serialize().join(" ")
    }
}

fn validate_item_clause(c: &ItemClause, menu: &Menu) -> Result<(), TranscodeError> {
    if c.quantity == 0 || c.quantity > MAX_QUANTITY {
        return Err(TranscodeError::BadQuantity {
            value: c.quantity,
            rule: format!("clause quantity must be 1..={MAX_QUANTITY}"),
        });
    }
    if !menu.is_item(&c.item) {
        return Err(TranscodeError::UnknownEntity {
            token: c.item.clone(),
            context: "not a menu item".into(),
        });
    }
    for s in &c.slots {
        if s.quantity > MAX_QUANTITY {
            return Err(TranscodeError::BadQuantity {
                value: s.quantity,
                rule: format!("slot quantity must be 0..={MAX_QUANTITY}"),
            });
        }
        if s.quantity == 0 && s.label == SlotLabel::Size {
            return Err(TranscodeError::BadQuantity {
                value: 0,
                rule: "zero quantity is only legal for extras and sub_item slots".into(),
            });
        }
        if !menu.modifier_legal(&c.item, s.label, &s.value) {
            return Err(TranscodeError::UnknownEntity {
                token: s.value.clone(),
                context: format!("not a legal {} value for `{}`", s.label, c.item),
            });
        }
    }
    Ok(())
}

/// Structural keywords of the language, in fixed id order.
pub const STRUCTURAL: [&str; 6] = [
    "new_item",
    "size",
    "extras",
    "sub_item",
    "quantity",
    "polar_answer",
];

/// Closed token vocabulary for one menu: specials, keywords, digits and
/// entities, each with a stable integer id. Doubles as the model-side
/// target vocabulary.
#[derive(Debug, Clone)]
pub struct TranscodeVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    entity_max_words: usize,
}

/// Ids 0..=2 are reserved in every vocabulary.
pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;

impl TranscodeVocab {
    pub fn from_menu(menu: &Menu) -> TranscodeVocab {
        let mut tokens: Vec<String> = vec!["<pad>".into(), "<bos>".into(), "<eos>".into()];
        tokens.extend(STRUCTURAL.iter().map(|s| s.to_string()));
        tokens.extend(Action::ALL.iter().map(|a| a.as_str().to_string()));
        tokens.push("yes".into());
        tokens.push("no".into());
        for q in 0..=MAX_QUANTITY {
            tokens.push(q.to_string());
        }
        let mut max_words = 1;
        for entity in menu.entities() {
            max_words = max_words.max(entity.split_whitespace().count());
            tokens.push(entity);
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        TranscodeVocab {
            tokens,
            index,
            entity_max_words: max_words,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Longest entity length in words, the greedy tokenizer's lookahead.
    pub fn entity_max_words(&self) -> usize {
        self.entity_max_words
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Token ids framed for the decoder: `<bos> tokens <eos>`.
    pub fn encode_framed(&self, tokens: &[String]) -> Result<Vec<u32>, TranscodeError> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(BOS);
        for (i, t) in tokens.iter().enumerate() {
            ids.push(self.id(t).ok_or_else(|| TranscodeError::Syntax {
                position: i,
                expected: "a vocabulary token".into(),
                found: t.clone(),
            })?);
        }
        ids.push(EOS);
        Ok(ids)
    }

    /// Inverse of [`encode_framed`](Self::encode_framed) minus framing:
    /// specials are dropped, everything else maps back to its token.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>, TranscodeError> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            if id <= EOS {
                continue;
            }
            match self.token(id) {
                Some(t) => out.push(t.to_string()),
                None => {
                    return Err(TranscodeError::Syntax {
                        position: out.len(),
                        expected: format!("an id below {}", self.len()),
                        found: id.to_string(),
                    })
                }
            }
        }
        Ok(out)
    }
}
