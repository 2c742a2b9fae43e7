//! Combat-state modeling and grounding of parsed commands against it.
//!
//! The reference check answers one question: does the generated command refer
//! to things that actually exist — an attack or spell on the acting
//! character's sheet, and targets present in the combat state?

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::command::AvraeCommand;

/// Hit points as FIREBALL renders them: `<current/max HP; Status>`.
///
/// Wild data contains overheals and negative totals, so `current` is not
/// clamped to `[0, max]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HpState {
    pub current: i64,
    pub max: i64,
    pub status: String,
}

impl HpState {
    pub fn render(&self) -> String {
        format!("<{}/{} HP; {}>", self.current, self.max, self.status)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("hp text does not match the <current/max HP; status> shape")]
pub struct HpShapeError;

static HP_PATTERN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*<\s*(-?\d+)\s*/\s*(-?\d+)\s*HP;\s*([^>]*?)\s*>\s*$").unwrap());

/// Parses `<80/80 HP; Healthy>`-shaped text, tolerating surrounding
/// whitespace. Callers that hit [`HpShapeError`] store the hp as absent and
/// keep the record.
pub fn parse_hp(text: &str) -> Result<HpState, HpShapeError> {
    let caps = HP_PATTERN.captures(text).ok_or(HpShapeError)?;
    let current: i64 = caps[1].parse().map_err(|_| HpShapeError)?;
    let max: i64 = caps[2].parse().map_err(|_| HpShapeError)?;
    if max < 1 {
        return Err(HpShapeError);
    }
    Ok(HpState { current, max, status: caps[3].to_string() })
}

/// Splits a FIREBALL comma-joined inventory string into entries.
///
/// This over-splits names that themselves contain commas (`Crossbow, light`
/// becomes two entries), which is why grounding also consults the raw string.
pub fn split_inventory(raw: &str) -> Vec<String> {
    raw.split(',').map(str::trim).filter(|e| !e.is_empty()).map(str::to_string).collect()
}

/// One inventory category of an actor sheet: the raw string exactly as
/// stored, plus the entries derived from it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    pub raw: String,
    pub entries: Vec<String>,
}

impl Inventory {
    pub fn from_raw(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let entries = split_inventory(&raw);
        Inventory { raw, entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One combatant's sheet snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub name: String,
    #[serde(default)]
    pub hp: Option<HpState>,
    #[serde(default)]
    pub class_label: Option<String>,
    #[serde(default)]
    pub race: Option<String>,
    #[serde(default)]
    pub attacks: Option<Inventory>,
    #[serde(default)]
    pub spells: Option<Inventory>,
    #[serde(default)]
    pub actions: Option<Inventory>,
    #[serde(default)]
    pub effects: Option<Inventory>,
    #[serde(default)]
    pub description: Option<String>,
}

impl Actor {
    pub fn named(name: impl Into<String>) -> Self {
        Actor {
            name: name.into(),
            hp: None,
            class_label: None,
            race: None,
            attacks: None,
            spells: None,
            actions: None,
            effects: None,
            description: None,
        }
    }
}

/// All combatants, in `combat_state_before` order. Names need not be unique;
/// lookups resolve to the first match in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CombatState {
    pub actors: Vec<Actor>,
}

/// Outcome classes of the reference check. Everything except `Pass` counts
/// as a failure when aggregating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    AttackMismatch,
    SpellMismatch,
    TargetMismatch,
    NoCommand,
    UnknownVerb,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::AttackMismatch => "attack_mismatch",
            Verdict::SpellMismatch => "spell_mismatch",
            Verdict::TargetMismatch => "target_mismatch",
            Verdict::NoCommand => "no_command",
            Verdict::UnknownVerb => "unknown_verb",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceOutcome {
    pub verdict: Verdict,
    pub detail: String,
}

impl ReferenceOutcome {
    fn fail(verdict: Verdict, detail: impl Into<String>) -> Self {
        ReferenceOutcome { verdict, detail: detail.into() }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Lowercases, removes quote characters, collapses internal whitespace, and
/// trims. Both sides of every grounding comparison go through this.
pub fn normalize_name(text: &str) -> String {
    let unquoted: String = text
        .chars()
        .filter(|c| !matches!(c, '\'' | '"' | '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}'))
        .collect();
    unquoted.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True iff the query grounds in an inventory: equal to an entry, a prefix of
/// one, a substring of one, or a substring of the raw inventory string (which
/// rescues names the comma-splitter tears apart).
pub fn name_match(query: &str, entries: &[String], raw: &str) -> bool {
    let q = normalize_name(query);
    if q.is_empty() {
        return false;
    }
    if entries.iter().any(|e| {
        let entry = normalize_name(e);
        entry == q || entry.starts_with(&q) || entry.contains(&q)
    }) {
        return true;
    }
    normalize_name(raw).contains(&q)
}

fn inventory_match(query: &str, inventory: Option<&Inventory>) -> bool {
    inventory.is_some_and(|inv| name_match(query, &inv.entries, &inv.raw))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ResolvedVerb {
    Attack,
    Cast,
}

/// Alias table for the two verb families the reference check understands.
/// Anything else (`spell`, `i`, ...) is an unknown verb, which is a failure
/// class of its own rather than a parse error.
fn resolve_verb(verb: &str) -> Option<ResolvedVerb> {
    match verb.to_lowercase().as_str() {
        "a" | "attack" => Some(ResolvedVerb::Attack),
        "c" | "cast" => Some(ResolvedVerb::Cast),
        _ => None,
    }
}

fn target_resolves(target: &str, state: &CombatState) -> bool {
    let t = normalize_name(target);
    if t.is_empty() {
        return false;
    }
    if t == "self" {
        return true;
    }
    state.actors.iter().any(|actor| {
        let name = normalize_name(&actor.name);
        name == t || name.starts_with(&t)
    })
}

/// Grounds a parsed command against the acting character and the combat
/// state. Checks run in verb → subject → targets order; the first failure
/// decides the verdict. Commands with zero targets skip the target check.
pub fn reference_check(
    cmd: Option<&AvraeCommand>,
    actor: &Actor,
    state: &CombatState,
) -> ReferenceOutcome {
    let Some(cmd) = cmd else {
        return ReferenceOutcome::fail(Verdict::NoCommand, "no command was extracted");
    };

    let verb = match resolve_verb(&cmd.verb) {
        Some(v) => v,
        None => {
            return ReferenceOutcome::fail(
                Verdict::UnknownVerb,
                format!("verb '!{}' does not resolve to an attack or cast", cmd.verb),
            );
        }
    };

    match verb {
        ResolvedVerb::Attack => {
            let found = inventory_match(&cmd.subject, actor.attacks.as_ref())
                || inventory_match(&cmd.subject, actor.actions.as_ref());
            if !found {
                return ReferenceOutcome::fail(
                    Verdict::AttackMismatch,
                    format!(
                        "attack '{}' not found among the attacks or actions of '{}'",
                        cmd.subject, actor.name
                    ),
                );
            }
        }
        ResolvedVerb::Cast => {
            if !inventory_match(&cmd.subject, actor.spells.as_ref()) {
                return ReferenceOutcome::fail(
                    Verdict::SpellMismatch,
                    format!("spell '{}' not found among the spells of '{}'", cmd.subject, actor.name),
                );
            }
        }
    }

    for target in &cmd.targets {
        if !target_resolves(target, state) {
            return ReferenceOutcome::fail(
                Verdict::TargetMismatch,
                format!("target '{target}' not found in the combat state"),
            );
        }
    }

    ReferenceOutcome { verdict: Verdict::Pass, detail: "verb, subject, and targets all resolve".into() }
}
