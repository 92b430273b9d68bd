//! Order-state reducer: the semantic ground truth for transcodes.
//!
//! Two programs mean the same thing exactly when they reduce an empty
//! order to the same state. The reducer is deterministic and total over
//! valid programs except for deletes and updates that have no line to act
//! on, which fail loudly rather than guessing.
//!
//! Semantics choices the grammar leaves open, pinned here:
//! * `delete_item` matches by item name only and removes the most recent
//!   matching line whole, regardless of clause quantity or slots.
//! * `update_item` rewrites the most recent matching line: its quantity
//!   becomes the clause quantity, and for each slot label mentioned in the
//!   clause the line's modifiers under that label are replaced (zero
//!   quantities become exclusions). Labels the clause is silent about are
//!   untouched.
//! * Adding an identical line (same item, modifiers and exclusions) merges
//!   quantities instead of opening a second line.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::TranscodeError;
use crate::transcode::{Action, Clause, IntentProgram, ItemClause, Polar, SlotLabel};

type ModKey = (SlotLabel, String);

/// One open line of the order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OrderLine {
    pub item: String,
    pub quantity: u32,
    /// Modifier quantities keyed by (label, value); values are >= 1.
    pub modifiers: BTreeMap<ModKey, u32>,
    /// Explicit "leave it out" marks from zero-quantity slots.
    pub exclusions: BTreeSet<ModKey>,
}

impl OrderLine {
    fn from_clause(c: &ItemClause) -> OrderLine {
        let mut line = OrderLine {
            item: c.item.clone(),
            quantity: c.quantity,
            modifiers: BTreeMap::new(),
            exclusions: BTreeSet::new(),
        };
        for s in &c.slots {
            let key = (s.label, s.value.clone());
            if s.quantity == 0 {
                line.exclusions.insert(key);
            } else {
                *line.modifiers.entry(key).or_insert(0) += s.quantity;
            }
        }
        line
    }

    fn same_configuration(&self, other: &OrderLine) -> bool {
        self.item == other.item
            && self.modifiers == other.modifiers
            && self.exclusions == other.exclusions
    }
}

/// Order state: open lines in arrival order plus the polar-answer trail.
#[derive(Debug, Clone, Default)]
pub struct OrderState {
    lines: Vec<OrderLine>,
    polar: Vec<Polar>,
}

impl OrderState {
    pub fn empty() -> OrderState {
        OrderState::default()
    }

    pub fn lines(&self) -> &[OrderLine] {
        &self.lines
    }

    pub fn polar_answers(&self) -> &[Polar] {
        &self.polar
    }

    /// Applies a whole program, returning the successor state.
    pub fn reduce(&self, program: &IntentProgram) -> Result<OrderState, TranscodeError> {
        let mut next = self.clone();
        for clause in program.clauses() {
            next.apply(clause)?;
        }
        Ok(next)
    }

    fn apply(&mut self, clause: &Clause) -> Result<(), TranscodeError> {
        match clause {
            Clause::Polar(p) => {
                self.polar.push(*p);
                Ok(())
            }
            Clause::Item(c) => match c.action {
                Action::Add => {
                    let line = OrderLine::from_clause(c);
                    match self
                        .lines
                        .iter_mut()
                        .find(|l| l.same_configuration(&line))
                    {
                        Some(existing) => existing.quantity += line.quantity,
                        None => self.lines.push(line),
                    }
                    Ok(())
                }
                Action::Delete => {
                    match self.lines.iter().rposition(|l| l.item == c.item) {
                        Some(i) => {
                            self.lines.remove(i);
                            Ok(())
                        }
                        None => Err(TranscodeError::MissingLine {
                            action: "delete_item".into(),
                            item: c.item.clone(),
                        }),
                    }
                }
                Action::Update => {
                    let i = self
                        .lines
                        .iter()
                        .rposition(|l| l.item == c.item)
                        .ok_or_else(|| TranscodeError::MissingLine {
                            action: "update_item".into(),
                            item: c.item.clone(),
                        })?;
                    let line = &mut self.lines[i];
                    line.quantity = c.quantity;
                    let mentioned: BTreeSet<SlotLabel> =
                        c.slots.iter().map(|s| s.label).collect();
                    line.modifiers.retain(|(l, _), _| !mentioned.contains(l));
                    line.exclusions.retain(|(l, _)| !mentioned.contains(l));
                    for s in &c.slots {
                        let key = (s.label, s.value.clone());
                        if s.quantity == 0 {
                            line.exclusions.insert(key);
                        } else {
                            *line.modifiers.entry(key).or_insert(0) += s.quantity;
                        }
                    }
                    Ok(())
                }
            },
        }
    }

    /// Lines in a fixed order, for order-insensitive comparison.
    fn canonical_lines(&self) -> Vec<&OrderLine> {
        let mut sorted: Vec<&OrderLine> = self.lines.iter().collect();
        sorted.sort();
        sorted
    }
}

impl PartialEq for OrderState {
    fn eq(&self, other: &OrderState) -> bool {
        self.polar == other.polar && self.canonical_lines() == other.canonical_lines()
    }
}

impl Eq for OrderState {}

/// Reduces both programs from an empty order and compares the results.
/// Errors if either program is not executable, in which case the pair is
/// not comparable rather than unequal.
pub fn semantically_equal(
    a: &IntentProgram,
    b: &IntentProgram,
) -> Result<bool, TranscodeError> {
    let empty = OrderState::empty();
    Ok(empty.reduce(a)? == empty.reduce(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::menu::Menu;
    use crate::transcode::parse_line;

    fn menu() -> Menu {
        Menu::builtin()
    }

    fn reduce_new(line: &str) -> Result<OrderState, TranscodeError> {
        OrderState::empty().reduce(&parse_line(line, &menu()).unwrap())
    }

    #[test]
    fn clause_order_of_independent_adds_is_irrelevant() {
        let a = reduce_new(
            "new_item 1 chocolate fudge add_item new_item 1 peanut butter cookie add_item",
        )
        .unwrap();
        let b = reduce_new(
            "new_item 1 peanut butter cookie add_item new_item 1 chocolate fudge add_item",
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn add_then_delete_cancels_out() {
        let s = reduce_new(
            "new_item 1 chocolate fudge add_item new_item 1 chocolate fudge delete_item",
        )
        .unwrap();
        assert_eq!(s, OrderState::empty());
        assert!(s.lines().is_empty());
    }

    #[test]
    fn identical_adds_merge_quantities() {
        let merged = reduce_new("new_item 1 coffee add_item new_item 2 coffee add_item").unwrap();
        let direct = reduce_new("new_item 3 coffee add_item").unwrap();
        assert_eq!(merged, direct);
        assert_eq!(merged.lines().len(), 1);
        assert_eq!(merged.lines()[0].quantity, 3);
    }

    #[test]
    fn differently_configured_lines_do_not_merge() {
        let s = reduce_new(
            "new_item 1 coffee size 1 small add_item new_item 1 coffee size 1 large add_item",
        )
        .unwrap();
        assert_eq!(s.lines().len(), 2);
    }

    #[test]
    fn delete_targets_the_most_recent_matching_line() {
        let s = reduce_new(
            "new_item 1 coffee size 1 small add_item \
             new_item 1 coffee size 1 large add_item \
             new_item 1 coffee delete_item",
        )
        .unwrap();
        assert_eq!(s.lines().len(), 1);
        assert!(s.lines()[0]
            .modifiers
            .contains_key(&(SlotLabel::Size, "small".into())));
    }

    #[test]
    fn delete_without_a_line_fails() {
        let err = reduce_new("new_item 1 coffee delete_item").unwrap_err();
        assert_eq!(
            err,
            TranscodeError::MissingLine {
                action: "delete_item".into(),
                item: "coffee".into()
            }
        );
    }

    #[test]
    fn update_rewrites_mentioned_labels_only() {
        let s = reduce_new(
            "new_item 1 coffee size 1 small extras 1 whipped cream add_item \
             new_item 2 coffee size 1 large update_item",
        )
        .unwrap();
        let line = &s.lines()[0];
        assert_eq!(line.quantity, 2);
        assert!(line
            .modifiers
            .contains_key(&(SlotLabel::Size, "large".into())));
        assert!(!line
            .modifiers
            .contains_key(&(SlotLabel::Size, "small".into())));
        assert!(line
            .modifiers
            .contains_key(&(SlotLabel::Extras, "whipped cream".into())));
    }

    #[test]
    fn update_zero_quantity_becomes_exclusion() {
        let s = reduce_new(
            "new_item 1 coffee sub_item 1 sugar add_item \
             new_item 1 coffee sub_item 0 sugar update_item",
        )
        .unwrap();
        let line = &s.lines()[0];
        assert!(line.modifiers.is_empty());
        assert!(line.exclusions.contains(&(SlotLabel::SubItem, "sugar".into())));
    }

    #[test]
    fn exclusion_distinguishes_states() {
        let plain = reduce_new("new_item 1 coffee add_item").unwrap();
        let held = reduce_new("new_item 1 coffee sub_item 0 sugar add_item").unwrap();
        assert_ne!(plain, held);
    }

    #[test]
    fn polar_answers_are_part_of_the_state() {
        let yes = reduce_new("yes polar_answer").unwrap();
        let no = reduce_new("no polar_answer").unwrap();
        assert_ne!(yes, no);
        assert_eq!(yes.polar_answers(), &[Polar::Yes]);
    }

    #[test]
    fn semantic_equality_sees_through_clause_permutations() {
        let m = menu();
        let a = parse_line(
            "new_item 1 coffee add_item new_item 1 chocolate fudge add_item",
            &m,
        )
        .unwrap();
        let b = parse_line(
            "new_item 1 chocolate fudge add_item new_item 1 coffee add_item",
            &m,
        )
        .unwrap();
        let c = parse_line("new_item 1 coffee add_item", &m).unwrap();
        assert!(semantically_equal(&a, &b).unwrap());
        assert!(!semantically_equal(&a, &c).unwrap());
    }

    #[test]
    fn unexecutable_program_is_not_comparable() {
        let m = menu();
        let a = parse_line("new_item 1 coffee delete_item", &m).unwrap();
        let b = parse_line("new_item 1 coffee add_item", &m).unwrap();
        assert!(semantically_equal(&a, &b).is_err());
    }
}
