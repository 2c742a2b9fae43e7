//! Avrae command grammar: AST, tolerant parser, canonical renderer, and
//! extraction of the final command from raw model output.
//!
//! The parser is deliberately permissive about verbs — `!spell`, `!i`, or any
//! other `!word` is syntactically valid. Whether the verb means anything is a
//! grounding question answered later by the reference check, not a format
//! question.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Why a command string failed to parse.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("command does not start with '!'")]
    NoBang,
    #[error("'!' is not followed by a verb")]
    EmptyVerb,
    #[error("-t flag has no target value")]
    DanglingFlag,
}

/// One trailing argument: a flag token, a bare value, or a flag/value pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgToken {
    pub flag: Option<String>,
    pub value: Option<String>,
}

impl ArgToken {
    pub fn bare(value: impl Into<String>) -> Self {
        ArgToken { flag: None, value: Some(value.into()) }
    }

    pub fn flag(flag: impl Into<String>) -> Self {
        ArgToken { flag: Some(flag.into()), value: None }
    }

    pub fn pair(flag: impl Into<String>, value: impl Into<String>) -> Self {
        ArgToken { flag: Some(flag.into()), value: Some(value.into()) }
    }
}

/// Parsed Avrae command.
///
/// `raw` keeps the exact text the command was parsed from. Equality ignores
/// it: two commands are the same action if verb, subject, targets, and extra
/// args agree, regardless of quoting or spacing in the source text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AvraeCommand {
    pub verb: String,
    pub subject: String,
    pub targets: Vec<String>,
    pub extra_args: Vec<ArgToken>,
    pub raw: String,
}

impl PartialEq for AvraeCommand {
    fn eq(&self, other: &Self) -> bool {
        self.verb == other.verb
            && self.subject == other.subject
            && self.targets == other.targets
            && self.extra_args == other.extra_args
    }
}

impl Eq for AvraeCommand {}

/// Models emit typographic quotes as often as straight ones.
fn normalize_quotes(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' => '\'',
            '\u{201C}' | '\u{201D}' => '"',
            other => other,
        })
        .collect()
}

/// Splits a line into tokens. A single or double quote at token start opens a
/// span that runs to the matching quote and may contain whitespace; an
/// unmatched opening quote and any quote mid-token (e.g. `Raulothim's`) are
/// literal characters. Empty tokens (from `''`) are dropped.
fn tokenize_line(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let mut token = String::new();
        while i < chars.len() && !chars[i].is_whitespace() {
            let c = chars[i];
            if (c == '\'' || c == '"') && token.is_empty() {
                if let Some(close) = chars[i + 1..].iter().position(|&x| x == c) {
                    let close = i + 1 + close;
                    token.extend(&chars[i + 1..close]);
                    i = close + 1;
                    continue;
                }
            }
            token.push(c);
            i += 1;
        }
        if !token.is_empty() {
            tokens.push(token);
        }
    }
    tokens
}

fn strip_surrounding_quotes(s: &str) -> &str {
    for q in ['\'', '"'] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return &s[1..s.len() - 1];
        }
    }
    s
}

fn is_flag_token(token: &str) -> bool {
    token.starts_with('-')
}

/// Parses one line of text into an [`AvraeCommand`].
///
/// The subject is everything between the verb and the first `-`-prefixed
/// token. Each `-t` consumes the following token as a target; every other
/// flag optionally pairs with the next non-flag token; bare tokens stand
/// alone.
pub fn parse_command(text: &str) -> Result<AvraeCommand, ParseError> {
    let normalized = normalize_quotes(text);
    let trimmed = normalized.trim();
    if !trimmed.starts_with('!') {
        return Err(ParseError::NoBang);
    }
    let tokens = tokenize_line(trimmed);
    let first = tokens.first().ok_or(ParseError::EmptyVerb)?;
    let verb = first.trim_start_matches('!').to_string();
    if verb.is_empty() {
        return Err(ParseError::EmptyVerb);
    }

    let mut idx = 1;
    let mut subject_parts: Vec<&str> = Vec::new();
    while idx < tokens.len() && !is_flag_token(&tokens[idx]) {
        subject_parts.push(&tokens[idx]);
        idx += 1;
    }
    let joined = subject_parts.join(" ");
    let subject = strip_surrounding_quotes(joined.trim()).to_string();

    let mut targets = Vec::new();
    let mut extra_args = Vec::new();
    while idx < tokens.len() {
        let token = &tokens[idx];
        if token == "-t" {
            let value = tokens.get(idx + 1).ok_or(ParseError::DanglingFlag)?;
            targets.push(value.clone());
            idx += 2;
        } else if is_flag_token(token) {
            let value = match tokens.get(idx + 1) {
                Some(next) if !is_flag_token(next) => {
                    idx += 1;
                    Some(next.clone())
                }
                _ => None,
            };
            extra_args.push(ArgToken { flag: Some(token.clone()), value });
            idx += 1;
        } else {
            extra_args.push(ArgToken::bare(token.clone()));
            idx += 1;
        }
    }

    Ok(AvraeCommand { verb, subject, targets, extra_args, raw: trimmed.to_string() })
}

/// True iff the text parses as an Avrae command. Purely syntactic; unknown
/// verbs still pass.
pub fn format_check(text: &str) -> bool {
    parse_command(text).is_ok()
}

fn quote_if_needed(token: &str) -> String {
    if token.chars().any(char::is_whitespace) {
        format!("\"{token}\"")
    } else {
        token.to_string()
    }
}

/// Renders the canonical text form: `!verb subject -t t1 -t t2 extra...`,
/// double-quoting any part that contains whitespace.
pub fn render(cmd: &AvraeCommand) -> String {
    let mut parts = vec![format!("!{}", cmd.verb)];
    if !cmd.subject.is_empty() {
        parts.push(quote_if_needed(&cmd.subject));
    }
    for target in &cmd.targets {
        parts.push("-t".to_string());
        parts.push(quote_if_needed(target));
    }
    for arg in &cmd.extra_args {
        if let Some(flag) = &arg.flag {
            parts.push(flag.clone());
        }
        if let Some(value) = &arg.value {
            parts.push(quote_if_needed(value));
        }
    }
    parts.join(" ")
}

static THINK_SPAN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)<think>.*?</think>").unwrap());
static BRACE_SPAN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)\{\{(.*?)\}\}").unwrap());

/// Pulls the command out of a full model generation.
///
/// Reasoning spans (`<think>...</think>`) are stripped first. The content of
/// the last `{{...}}` span wins; earlier spans are treated as drafts. When no
/// span exists, falls back to the last line that starts with `!`. Returns
/// `None` when neither is found.
pub fn extract_command(model_output: &str) -> Option<String> {
    let stripped = THINK_SPAN.replace_all(model_output, "");
    if let Some(caps) = BRACE_SPAN.captures_iter(&stripped).last() {
        return Some(caps[1].trim().to_string());
    }
    stripped.lines().rev().find_map(|line| {
        let line = line.trim();
        line.starts_with('!').then(|| line.to_string())
    })
}
