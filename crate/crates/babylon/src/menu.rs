//! Menu: the closed world of orderable items and their legal modifiers.
//!
//! Both the transcode parser and the utterance generator resolve entity
//! tokens against a menu, so multi-word names like `caramel ice cream`
//! stay single tokens end to end. A built-in dessert-counter menu ships
//! with the crate; any TOML file with the same shape can replace it.

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::DataError;
use crate::transcode::SlotLabel;

/// One orderable item and the modifier values it accepts per slot label.
#[derive(Debug, Clone, Deserialize)]
pub struct MenuItem {
    pub name: String,
    #[serde(default)]
    pub sizes: Vec<String>,
    #[serde(default)]
    pub extras: Vec<String>,
    #[serde(default)]
    pub sub_items: Vec<String>,
}

impl MenuItem {
    pub fn legal_values(&self, label: SlotLabel) -> &[String] {
        match label {
            SlotLabel::Size => &self.sizes,
            SlotLabel::Extras => &self.extras,
            SlotLabel::SubItem => &self.sub_items,
        }
    }
}

#[derive(Debug, Deserialize)]
struct MenuFile {
    items: Vec<MenuItem>,
}

/// Validated menu with name-indexed lookup.
#[derive(Debug, Clone)]
pub struct Menu {
    items: Vec<MenuItem>,
    by_name: HashMap<String, usize>,
}

const BUILTIN_MENU: &str = include_str!("../data/menu.toml");

impl Menu {
    /// The dessert-counter menu bundled with the crate.
    pub fn builtin() -> Menu {
        Menu::from_toml_str(BUILTIN_MENU).expect("bundled menu must be valid")
    }

    pub fn load(path: &Path) -> Result<Menu, DataError> {
        let text = std::fs::read_to_string(path)?;
        Menu::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Menu, DataError> {
        let file: MenuFile =
            toml::from_str(text).map_err(|e| DataError::Menu(format!("parse: {e}")))?;
        Menu::new(file.items)
    }

    pub fn new(items: Vec<MenuItem>) -> Result<Menu, DataError> {
        if items.is_empty() {
            return Err(DataError::Menu("menu has no items".into()));
        }
        let mut by_name = HashMap::new();
        for (i, item) in items.iter().enumerate() {
            if item.name.trim().is_empty() {
                return Err(DataError::Menu(format!("item {i} has an empty name")));
            }
            for value in item
                .sizes
                .iter()
                .chain(&item.extras)
                .chain(&item.sub_items)
            {
                if value.trim().is_empty() {
                    return Err(DataError::Menu(format!(
                        "item `{}` has an empty modifier value",
                        item.name
                    )));
                }
            }
            if by_name.insert(item.name.clone(), i).is_some() {
                return Err(DataError::Menu(format!("duplicate item `{}`", item.name)));
            }
        }
        Ok(Menu { items, by_name })
    }

    pub fn items(&self) -> &[MenuItem] {
        &self.items
    }

    pub fn get(&self, name: &str) -> Option<&MenuItem> {
        self.by_name.get(name).map(|&i| &self.items[i])
    }

    pub fn is_item(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    /// True when `value` may appear under `label` on `item`.
    pub fn modifier_legal(&self, item: &str, label: SlotLabel, value: &str) -> bool {
        self.get(item)
            .map(|it| it.legal_values(label).iter().any(|v| v == value))
            .unwrap_or(false)
    }

    /// Every entity string the transcode vocabulary must carry: item names
    /// plus every modifier value, deduplicated, in sorted order.
    pub fn entities(&self) -> BTreeSet<String> {
        let mut set = BTreeSet::new();
        for item in &self.items {
            set.insert(item.name.clone());
            for v in item
                .sizes
                .iter()
                .chain(&item.extras)
                .chain(&item.sub_items)
            {
                set.insert(v.clone());
            }
        }
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_menu_loads_and_validates() {
        let menu = Menu::builtin();
        assert!(menu.items().len() >= 8);
        assert!(menu.is_item("coffee"));
        assert!(menu.is_item("caramel ice cream"));
        assert!(menu.modifier_legal("coffee", SlotLabel::Size, "large"));
        assert!(!menu.modifier_legal("coffee", SlotLabel::Size, "sprinkles"));
    }

    #[test]
    fn every_modifier_value_attaches_to_some_item() {
        let menu = Menu::builtin();
        for entity in menu.entities() {
            if menu.is_item(&entity) {
                continue;
            }
            let attached = menu.items().iter().any(|it| {
                [SlotLabel::Size, SlotLabel::Extras, SlotLabel::SubItem]
                    .iter()
                    .any(|&l| it.legal_values(l).iter().any(|v| *v == entity))
            });
            assert!(attached, "modifier `{entity}` attached to no item");
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let toml = r#"
            [[items]]
            name = "coffee"
            [[items]]
            name = "coffee"
        "#;
        assert!(Menu::from_toml_str(toml).is_err());
    }

    #[test]
    fn empty_menu_rejected() {
        assert!(Menu::from_toml_str("items = []").is_err());
    }
}
