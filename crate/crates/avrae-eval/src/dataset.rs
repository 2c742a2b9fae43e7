//! FIREBALL-format record loading, cleaning, and filtering.
//!
//! Input is line-delimited JSON with four fields per row: `current_actor`,
//! `combat_state_before`, `utterance_history`, and `commands_norm`. Loading
//! never aborts on a bad row; every drop is recorded with a reason so that
//! `kept + dropped == total`.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::prompts::build_context;
use crate::state::{parse_hp, Actor, CombatState, Inventory};

/// One line of in-game dialogue. FIREBALL stores these as `Speaker: text`
/// strings; the split happens at the first colon and renders back verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
}

impl Utterance {
    pub fn parse(line: &str) -> Self {
        match line.split_once(':') {
            Some((speaker, text)) => {
                Utterance { speaker: speaker.trim().to_string(), text: text.trim().to_string() }
            }
            None => Utterance { speaker: String::new(), text: line.trim().to_string() },
        }
    }

    pub fn render(&self) -> String {
        if self.speaker.is_empty() {
            self.text.clone()
        } else {
            format!("{}: {}", self.speaker, self.text)
        }
    }
}

/// One game turn: the acting character, the full combat state, recent
/// dialogue, and the command the human player actually ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FireballRecord {
    pub record_id: String,
    pub current_actor: Actor,
    pub combat_state: CombatState,
    pub utterance_history: Vec<Utterance>,
    pub gold_command: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingField,
    OverLength,
    MalformedJson,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRecord {
    pub record_id: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: usize,
    pub dropped: Vec<DroppedRecord>,
}

/// Which string the length filter measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthRule {
    /// The merged game-state context, exactly as prompt assembly renders it.
    MergedContext,
    /// The raw input line.
    RawLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    /// Rows whose measured string exceeds this many characters are dropped;
    /// a string of exactly this length is kept.
    pub max_chars: usize,
    pub length_rule: LengthRule,
    /// Actor attributes removed during scrubbing.
    pub scrub_fields: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_chars: 4001,
            length_rule: LengthRule::MergedContext,
            scrub_fields: vec!["controller_id".to_string(), "description".to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("actor object has no name")]
    NoName,
}

fn field_str(value: &Value, key: &str) -> Option<String> {
    match value.get(key) {
        Some(Value::String(s)) => Some(s.clone()),
        _ => None,
    }
}

fn inventory_field(value: &Value, key: &str) -> Option<Inventory> {
    field_str(value, key).map(Inventory::from_raw)
}

/// Maps one raw actor object onto [`Actor`], dropping scrubbed attributes.
/// `controller_id` has no destination field and is always gone; `description`
/// is dropped when scrubbed or null. Missing optional fields become absent,
/// never empty-string sentinels.
pub fn scrub_actor(raw: &Value, scrub_fields: &[String]) -> Result<Actor, SchemaError> {
    let scrubbed = |key: &str| scrub_fields.iter().any(|f| f == key);
    let name = field_str(raw, "name").filter(|n| !n.trim().is_empty()).ok_or(SchemaError::NoName)?;
    let keep_str = |key: &str| if scrubbed(key) { None } else { field_str(raw, key) };
    let keep_inv = |key: &str| if scrubbed(key) { None } else { inventory_field(raw, key) };
    Ok(Actor {
        name,
        hp: field_str(raw, "hp").and_then(|s| parse_hp(&s).ok()),
        class_label: keep_str("class"),
        race: keep_str("race"),
        attacks: keep_inv("attacks"),
        spells: keep_inv("spells"),
        actions: keep_inv("actions"),
        effects: keep_inv("effects"),
        description: keep_str("description"),
    })
}

fn actor_value(value: &Value) -> Option<Value> {
    match value {
        Value::Object(_) => Some(value.clone()),
        // Some exports store the actor object as a JSON-encoded string.
        Value::String(s) => serde_json::from_str::<Value>(s).ok().filter(Value::is_object),
        _ => None,
    }
}

fn gold_from_commands_norm(value: &Value) -> Option<String> {
    match value {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Value::Array(items) => items.iter().find_map(|item| match item {
            Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
            _ => None,
        }),
        _ => None,
    }
}

fn utterances_from(value: &Value) -> Option<Vec<Utterance>> {
    let items = value.as_array()?;
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        match item {
            Value::String(s) => out.push(Utterance::parse(s)),
            Value::Object(map) => {
                let speaker = map.get("speaker").and_then(Value::as_str).unwrap_or("").to_string();
                let text = map.get("text").and_then(Value::as_str)?.to_string();
                out.push(Utterance { speaker, text });
            }
            _ => return None,
        }
    }
    Some(out)
}

/// Builds a candidate record from one parsed line. `None` means a required
/// field is absent or empty.
fn record_from_value(value: &Value, record_id: String, opts: &LoadOptions) -> Option<FireballRecord> {
    let actor_raw = actor_value(value.get("current_actor")?)?;
    let current_actor = scrub_actor(&actor_raw, &opts.scrub_fields).ok()?;

    let combat_raw = value.get("combat_state_before")?.as_array()?;
    let mut actors = Vec::with_capacity(combat_raw.len());
    for entry in combat_raw {
        let Some(raw) = actor_value(entry) else { continue };
        match scrub_actor(&raw, &opts.scrub_fields) {
            Ok(actor) => actors.push(actor),
            Err(SchemaError::NoName) => {
                tracing::warn!(record_id, "skipping combatant without a name");
            }
        }
    }
    if actors.is_empty() {
        return None;
    }

    let utterance_history = utterances_from(value.get("utterance_history")?)?;
    if utterance_history.is_empty() {
        return None;
    }

    let gold_command = gold_from_commands_norm(value.get("commands_norm")?)?;

    let record = FireballRecord {
        record_id,
        current_actor,
        combat_state: CombatState { actors },
        utterance_history,
        gold_command,
    };
    let current = crate::state::normalize_name(&record.current_actor.name);
    if !record
        .combat_state
        .actors
        .iter()
        .any(|a| crate::state::normalize_name(&a.name) == current)
    {
        tracing::warn!(
            record_id = record.record_id,
            actor = record.current_actor.name,
            "current actor does not appear in the combat state"
        );
    }
    Some(record)
}

/// Keep/drop decision for one candidate row.
pub enum FilterDecision {
    Keep,
    Drop(DropReason),
}

/// Applies the cleaning rules: all four fields present and nonempty, and the
/// measured string within the length budget (strictly-greater drops).
pub fn filter_record(
    value: &Value,
    record_id: String,
    raw_line: &str,
    opts: &LoadOptions,
) -> (Option<FireballRecord>, FilterDecision) {
    let Some(record) = record_from_value(value, record_id, opts) else {
        return (None, FilterDecision::Drop(DropReason::MissingField));
    };
    let measured = match opts.length_rule {
        LengthRule::MergedContext => build_context(&record).chars().count(),
        LengthRule::RawLine => raw_line.chars().count(),
    };
    if measured > opts.max_chars {
        return (None, FilterDecision::Drop(DropReason::OverLength));
    }
    (Some(record), FilterDecision::Keep)
}

fn open_reader(path: &Path) -> std::io::Result<Box<dyn Read>> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|ext| ext == "gz") {
        Ok(Box::new(GzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

/// Loads and filters a line-delimited record file (gzip-transparent).
/// Order is file order; whitespace-only lines are skipped without counting.
pub fn load_records(
    path: &Path,
    opts: &LoadOptions,
) -> std::io::Result<(Vec<FireballRecord>, FilterReport)> {
    let reader = BufReader::new(open_reader(path)?);
    let mut records = Vec::new();
    let mut report = FilterReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_id = format!("r{}", idx + 1);
        let value: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(err) => {
                tracing::warn!(record_id = line_id, %err, "malformed JSON line");
                report.dropped.push(DroppedRecord { record_id: line_id, reason: DropReason::MalformedJson });
                continue;
            }
        };
        let record_id = field_str(&value, "record_id").unwrap_or(line_id);
        match filter_record(&value, record_id.clone(), &line, opts) {
            (Some(record), FilterDecision::Keep) => {
                report.kept += 1;
                records.push(record);
            }
            (_, FilterDecision::Drop(reason)) => {
                report.dropped.push(DroppedRecord { record_id, reason });
            }
            (None, FilterDecision::Keep) => unreachable!("keep decision always carries a record"),
        }
    }
    Ok((records, report))
}

fn actor_to_value(actor: &Actor) -> Value {
    let inv = |inventory: &Option<Inventory>| match inventory {
        Some(i) => Value::String(i.raw.clone()),
        None => Value::Null,
    };
    let opt = |field: &Option<String>| match field {
        Some(s) => Value::String(s.clone()),
        None => Value::Null,
    };
    serde_json::json!({
        "name": actor.name,
        "hp": actor.hp.as_ref().map(|h| h.render()),
        "class": opt(&actor.class_label),
        "race": opt(&actor.race),
        "attacks": inv(&actor.attacks),
        "spells": inv(&actor.spells),
        "actions": inv(&actor.actions),
        "effects": inv(&actor.effects),
        "description": opt(&actor.description),
    })
}

/// Re-serializes a normalized record to the input shape (plus `record_id`),
/// so ingested output can be cached and reloaded by [`load_records`].
pub fn record_to_value(record: &FireballRecord) -> Value {
    serde_json::json!({
        "record_id": record.record_id,
        "current_actor": actor_to_value(&record.current_actor),
        "combat_state_before": record.combat_state.actors.iter().map(actor_to_value).collect::<Vec<_>>(),
        "utterance_history": record.utterance_history.iter().map(Utterance::render).collect::<Vec<_>>(),
        "commands_norm": record.gold_command,
    })
}
