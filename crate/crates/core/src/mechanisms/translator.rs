use std::collections::HashMap;
use std::sync::OnceLock;

use thiserror::Error;

use super::{require, BehaviorResult, InvokeReply, Inputs, Mechanism, MechanismFault, Params};
use crate::registry::ParamValue;

const LEXICON_EN_FR: &str = include_str!("../../data/lexicon_en_fr.txt");

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TranslateError {
    #[error("unsupported language `{0}`")]
    UnsupportedLanguage(String),
    #[error("input is not UTF-8 text")]
    NotUtf8,
}

fn lexicon() -> &'static HashMap<&'static str, &'static str> {
    static LEXICON: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    LEXICON.get_or_init(|| {
        LEXICON_EN_FR
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .filter_map(|l| l.split_once(char::is_whitespace))
            .map(|(en, fr)| (en, fr.trim()))
            .collect()
    })
}

fn translate_word(word: &str, out: &mut String) {
    let lower = word.to_lowercase();
    let Some(target) = lexicon().get(lower.as_str()) else {
        out.push_str(word);
        return;
    };
    let capitalized = word.chars().next().is_some_and(char::is_uppercase);
    let mut chars = target.chars();
    match chars.next() {
        Some(first) if capitalized => {
            out.extend(first.to_uppercase());
            out.push_str(chars.as_str());
        }
        _ => out.push_str(target),
    }
}

/// Word-for-word substitution from the bundled English lexicon. Runs of
/// alphabetic characters are words; everything else is copied through.
pub fn translate_stub(text: &[u8], lang: &str) -> Result<Vec<u8>, TranslateError> {
    if lang != "fr" {
        return Err(TranslateError::UnsupportedLanguage(lang.to_string()));
    }
    let text = std::str::from_utf8(text).map_err(|_| TranslateError::NotUtf8)?;
    let mut out = String::with_capacity(text.len());
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphabetic(), word_start) {
            (true, None) => word_start = Some(i),
            (false, Some(start)) => {
                translate_word(&text[start..i], &mut out);
                word_start = None;
                out.push(c);
            }
            (false, None) => out.push(c),
            (true, Some(_)) => {}
        }
    }
    if let Some(start) = word_start {
        translate_word(&text[start..], &mut out);
    }
    Ok(out.into_bytes())
}

/// Translates the `text` role of a `TextDocumentType` structoid.
#[derive(Debug, Clone, Copy, Default)]
pub struct Translator;

impl Mechanism for Translator {
    fn invoke(&self, behavior: &str, params: &Params, inputs: &Inputs) -> Result<InvokeReply, MechanismFault> {
        if behavior != "Translate" {
            return Err(MechanismFault(format!("translator has no behavior `{behavior}`")));
        }
        let lang = match params.get("lang") {
            Some(ParamValue::String(l)) => l.as_str(),
            _ => return Err(MechanismFault("missing string parameter `lang`".into())),
        };
        if let Some(reply) = require(inputs, &["text"]) {
            return Ok(reply);
        }
        let input = &inputs["text"];
        if !input.mime.eq_ignore_ascii_case("text/plain") {
            return Err(MechanismFault(format!("text must be text/plain, got {}", input.mime)));
        }
        let body = translate_stub(&input.body, lang).map_err(|e| MechanismFault(e.to_string()))?;
        Ok(InvokeReply::Result(BehaviorResult { mime: "text/plain".into(), body }))
    }
}
