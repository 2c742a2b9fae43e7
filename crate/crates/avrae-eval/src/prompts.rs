//! Prompt templates and prompt-instance assembly.
//!
//! The five system-instruction variants are shipped as plain-text resource
//! files and pinned by SHA-256 digests; any drift fails template loading.
//! Each record expands into five instances — one per template — that share a
//! byte-identical game-state context prefix.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::FireballRecord;
use crate::digest::sha256_hex;
use crate::state::{Actor, Inventory};

const PREAMBLE_TEXT: &str = include_str!("../resources/preamble.txt");
const BODY_TEXTS: [&str; 5] = [
    include_str!("../resources/prompt1.txt"),
    include_str!("../resources/prompt2.txt"),
    include_str!("../resources/prompt3.txt"),
    include_str!("../resources/prompt4.txt"),
    include_str!("../resources/prompt5.txt"),
];
const DIGEST_MANIFEST: &str = include_str!("../resources/templates.sha256");

pub const TEMPLATE_IDS: [u8; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template resource '{0}' does not match its pinned digest")]
    DigestMismatch(String),
    #[error("digest manifest has no entry for '{0}'")]
    ManifestEntryMissing(String),
    #[error("unknown template id {0} (valid: 1-5)")]
    UnknownTemplate(u8),
}

/// One system-prompt variant: the paragraph shared by all five plus the
/// per-variant body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: u8,
    pub preamble: String,
    pub body: String,
}

/// The five templates, digest-verified at construction.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: Vec<PromptTemplate>,
}

fn manifest_digests() -> BTreeMap<String, String> {
    DIGEST_MANIFEST
        .lines()
        .filter_map(|line| {
            let mut parts = line.split_whitespace();
            let digest = parts.next()?;
            let name = parts.next()?;
            Some((name.to_string(), digest.to_string()))
        })
        .collect()
}

fn verify_resource(name: &str, content: &str) -> Result<(), TemplateError> {
    let manifest = manifest_digests();
    let pinned = manifest.get(name).ok_or_else(|| TemplateError::ManifestEntryMissing(name.into()))?;
    if sha256_hex(content.as_bytes()) != *pinned {
        return Err(TemplateError::DigestMismatch(name.into()));
    }
    Ok(())
}

/// Checks every template resource against the pinned manifest and returns
/// the name → digest table.
pub fn verify_templates() -> Result<BTreeMap<String, String>, TemplateError> {
    verify_resource("preamble.txt", PREAMBLE_TEXT)?;
    for (idx, body) in BODY_TEXTS.iter().enumerate() {
        verify_resource(&format!("prompt{}.txt", idx + 1), body)?;
    }
    Ok(manifest_digests())
}

impl TemplateSet {
    /// Loads the built-in templates, failing if any resource drifted from its
    /// pinned digest.
    pub fn builtin() -> Result<Self, TemplateError> {
        verify_templates()?;
        let preamble = PREAMBLE_TEXT.trim_end_matches('\n').to_string();
        let templates = BODY_TEXTS
            .iter()
            .enumerate()
            .map(|(idx, body)| PromptTemplate {
                template_id: idx as u8 + 1,
                preamble: preamble.clone(),
                body: body.trim_end_matches('\n').to_string(),
            })
            .collect();
        Ok(TemplateSet { templates })
    }

    pub fn get(&self, template_id: u8) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .iter()
            .find(|t| t.template_id == template_id)
            .ok_or(TemplateError::UnknownTemplate(template_id))
    }

    pub fn all(&self) -> &[PromptTemplate] {
        &self.templates
    }
}

/// One (record × template) unit of inference work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub instance_id: String,
    pub record_id: String,
    pub template_id: u8,
    pub system_text: String,
    pub context_text: String,
}

impl PromptInstance {
    /// The instruction part of the system text (everything after the shared
    /// game-state context), for backends that split context into a user turn.
    pub fn instruction_text(&self) -> &str {
        self.system_text.strip_prefix(self.context_text.as_str()).unwrap_or(&self.system_text).trim_start()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptOptions {
    /// Separator between the context block and the instruction paragraphs.
    pub separator: String,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions { separator: "\n\n".to_string() }
    }
}

fn push_field(out: &mut String, label: &str, value: Option<&str>) {
    if let Some(value) = value {
        out.push_str(label);
        out.push_str(": ");
        out.push_str(value);
        out.push('\n');
    }
}

fn render_actor(out: &mut String, actor: &Actor) {
    let inv = |inventory: &Option<Inventory>| inventory.as_ref().map(|i| i.raw.clone());
    push_field(out, "name", Some(&actor.name));
    push_field(out, "hp", actor.hp.as_ref().map(|h| h.render()).as_deref());
    push_field(out, "class", actor.class_label.as_deref());
    push_field(out, "race", actor.race.as_deref());
    push_field(out, "attacks", inv(&actor.attacks).as_deref());
    push_field(out, "spells", inv(&actor.spells).as_deref());
    push_field(out, "actions", inv(&actor.actions).as_deref());
    push_field(out, "effects", inv(&actor.effects).as_deref());
    push_field(out, "description", actor.description.as_deref());
}

/// Renders the merged game-state context: the scrubbed current actor, every
/// combatant in order, and the dialogue history, with FIREBALL field labels.
pub fn build_context(record: &FireballRecord) -> String {
    let mut out = String::new();
    out.push_str("Current Player:\n");
    render_actor(&mut out, &record.current_actor);
    out.push_str("\nOther Combatants:\n");
    for (idx, actor) in record.combat_state.actors.iter().enumerate() {
        if idx > 0 {
            out.push('\n');
        }
        render_actor(&mut out, actor);
    }
    out.push_str("\nUtterance History:\n");
    for utterance in &record.utterance_history {
        out.push_str(&utterance.render());
        out.push('\n');
    }
    out.truncate(out.trim_end().len());
    out
}

pub fn build_prompt(record: &FireballRecord, template: &PromptTemplate) -> PromptInstance {
    build_prompt_with(record, template, &PromptOptions::default())
}

pub fn build_prompt_with(
    record: &FireballRecord,
    template: &PromptTemplate,
    opts: &PromptOptions,
) -> PromptInstance {
    let context_text = build_context(record);
    let system_text = format!(
        "{context_text}{sep}{preamble}\n\n{body}",
        sep = opts.separator,
        preamble = template.preamble,
        body = template.body,
    );
    PromptInstance {
        instance_id: format!("{}:{}", record.record_id, template.template_id),
        record_id: record.record_id.clone(),
        template_id: template.template_id,
        system_text,
        context_text,
    }
}

/// Expands records over all five templates, record-major and template-minor:
/// N records in, 5N instances out.
pub fn expand(records: &[FireballRecord], templates: &TemplateSet) -> Vec<PromptInstance> {
    expand_with(records, templates, &TEMPLATE_IDS, &PromptOptions::default())
        .expect("built-in template ids are valid")
}

/// Expansion restricted to a subset of template ids.
pub fn expand_with(
    records: &[FireballRecord],
    templates: &TemplateSet,
    template_ids: &[u8],
    opts: &PromptOptions,
) -> Result<Vec<PromptInstance>, TemplateError> {
    let selected: Vec<&PromptTemplate> =
        template_ids.iter().map(|id| templates.get(*id)).collect::<Result<_, _>>()?;
    let mut instances = Vec::with_capacity(records.len() * selected.len());
    for record in records {
        for template in &selected {
            instances.push(build_prompt_with(record, template, opts));
        }
    }
    Ok(instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Utterance;
    use crate::state::CombatState;

    fn record(id: &str) -> FireballRecord {
        let mut actor = Actor::named("Emma Thornwall");
        actor.spells = Some(Inventory::from_raw("Hex, Dissonant Whispers"));
        FireballRecord {
            record_id: id.to_string(),
            current_actor: actor.clone(),
            combat_state: CombatState { actors: vec![actor, Actor::named("BA1")] },
            utterance_history: vec![Utterance::parse("Player 2: go ahead and recast it")],
            gold_command: "!cast diss -t ba1".to_string(),
        }
    }

    #[test]
    fn builtin_templates_verify_and_differ() {
        let set = TemplateSet::builtin().unwrap();
        assert_eq!(set.all().len(), 5);
        for a in set.all() {
            assert!(a.preamble.contains("{{}}"));
            for b in set.all() {
                if a.template_id != b.template_id {
                    assert_ne!(a.body, b.body);
                }
            }
        }
    }

    #[test]
    fn digest_check_rejects_drift() {
        assert_eq!(
            verify_resource("prompt1.txt", "tampered"),
            Err(TemplateError::DigestMismatch("prompt1.txt".into()))
        );
        assert_eq!(
            verify_resource("promptX.txt", "anything"),
            Err(TemplateError::ManifestEntryMissing("promptX.txt".into()))
        );
    }

    #[test]
    fn unknown_template_id() {
        let set = TemplateSet::builtin().unwrap();
        assert_eq!(set.get(6).unwrap_err(), TemplateError::UnknownTemplate(6));
        assert_eq!(set.get(0).unwrap_err(), TemplateError::UnknownTemplate(0));
    }

    #[test]
    fn context_has_sections_and_labels() {
        let ctx = build_context(&record("r1"));
        assert!(ctx.starts_with("Current Player:\nname: Emma Thornwall"));
        assert!(ctx.contains("\nOther Combatants:\n"));
        assert!(ctx.contains("name: BA1"));
        assert!(ctx.contains("\nUtterance History:\nPlayer 2: go ahead and recast it"));
    }

    #[test]
    fn context_with_empty_history_keeps_header() {
        let mut r = record("r1");
        r.utterance_history.clear();
        let ctx = build_context(&r);
        assert!(ctx.ends_with("Utterance History:"));
    }

    #[test]
    fn context_is_deterministic() {
        assert_eq!(build_context(&record("r1")), build_context(&record("r1")));
    }

    #[test]
    fn template_one_keeps_attack_example() {
        let set = TemplateSet::builtin().unwrap();
        let instance = build_prompt(&record("r1"), set.get(1).unwrap());
        assert!(instance.system_text.contains("!attack longbow -t WY1 adv"));
        assert!(instance.system_text.contains("Reason step by step"));
    }

    #[test]
    fn template_three_drops_reasoning_sentence() {
        let set = TemplateSet::builtin().unwrap();
        let instance = build_prompt(&record("r1"), set.get(3).unwrap());
        assert!(!instance.system_text.contains("Reason step by step"));
        assert!(instance.system_text.contains("These examples are not relevant"));
    }

    #[test]
    fn template_four_is_zero_shot() {
        let set = TemplateSet::builtin().unwrap();
        let instance = build_prompt(&record("r1"), set.get(4).unwrap());
        assert!(!instance.system_text.contains("longbow"));
        assert!(!instance.system_text.contains("fire bolt"));
        assert!(instance.system_text.contains("Reason step by step"));
    }

    #[test]
    fn expansion_is_record_major_template_minor() {
        let set = TemplateSet::builtin().unwrap();
        let instances = expand(&[record("r1"), record("r2")], &set);
        let ids: Vec<&str> = instances.iter().map(|i| i.instance_id.as_str()).collect();
        assert_eq!(
            ids,
            vec!["r1:1", "r1:2", "r1:3", "r1:4", "r1:5", "r2:1", "r2:2", "r2:3", "r2:4", "r2:5"]
        );
    }

    #[test]
    fn expansion_multiplies_by_five() {
        let set = TemplateSet::builtin().unwrap();
        assert!(expand(&[], &set).is_empty());
        let records: Vec<FireballRecord> = (0..7).map(|i| record(&format!("r{i}"))).collect();
        assert_eq!(expand(&records, &set).len(), 35);
    }

    #[test]
    fn instances_share_context_prefix() {
        let set = TemplateSet::builtin().unwrap();
        let instances = expand(&[record("r1")], &set);
        let context = &instances[0].context_text;
        for instance in &instances {
            assert_eq!(&instance.context_text, context);
            assert!(instance.system_text.starts_with(context.as_str()));
        }
    }

    #[test]
    fn instruction_text_strips_context() {
        let set = TemplateSet::builtin().unwrap();
        let instance = build_prompt(&record("r1"), set.get(5).unwrap());
        let instruction = instance.instruction_text();
        assert!(instruction.starts_with("You are the current player"));
        assert!(!instruction.contains("Other Combatants"));
    }
}
