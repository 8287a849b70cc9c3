//! System prompt templates and user-part layout for the two annotation
//! modes: gold (highlighted screenshot plus crop) and agent (screenshot plus
//! a short instruction).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::RefgenError;

const LONG_GOLD_SYSTEM: &str = include_str!("../templates/long_gold_system.txt");
const LONG_SYSTEM: &str = include_str!("../templates/long_system.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// Training-data annotation from a highlighted screenshot and a crop.
    LongGold,
    /// Planner-style annotation from a screenshot and a short instruction.
    Long,
}

impl Template {
    pub const ALL: [Template; 2] = [Template::LongGold, Template::Long];

    pub fn name(self) -> &'static str {
        match self {
            Template::LongGold => "long_gold_system.txt",
            Template::Long => "long_system.txt",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            Template::LongGold => LONG_GOLD_SYSTEM,
            Template::Long => LONG_SYSTEM,
        }
    }

    /// Pinned SHA-256 of the shipped template; editing a template means
    /// updating this value in the same change.
    pub fn pinned_sha256(self) -> &'static str {
        match self {
            Template::LongGold => {
                "66e7d84acb0fd75849bf8e918abb9a1a86b246d622f49f06cade98e4f7565143"
            }
            Template::Long => "f964a7cc929763845d6c39c4e84601e4cd930b9e76e9f8a24c1fb71c791009f1",
        }
    }

    pub fn sha256(self) -> String {
        sha256_hex(self.text().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Fails if any shipped template drifted from its pinned checksum.
pub fn verify_templates() -> Result<(), RefgenError> {
    for t in Template::ALL {
        if t.sha256() != t.pinned_sha256() {
            return Err(RefgenError::TemplateChecksum { name: t.name() });
        }
    }
    Ok(())
}

pub const SCREENSHOT_HIGHLIGHT_HEADER: &str = "# Screenshot with highlight";
pub const CROPPED_TARGET_HEADER: &str = "# Cropped target image";
pub const SCREENSHOT_HEADER: &str = "# Screenshot";
pub const INSTRUCTION_HEADER: &str = "# Instruction";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UserPart {
    Image { header: String, path: PathBuf },
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub template: Template,
    pub system_text: String,
    pub user_parts: Vec<UserPart>,
}

fn existing(path: &Path) -> Result<PathBuf, RefgenError> {
    if path.is_file() {
        Ok(path.to_path_buf())
    } else {
        Err(RefgenError::MissingAsset(path.to_path_buf()))
    }
}

/// Gold-mode payload: highlighted screenshot first, then the target crop.
pub fn build_longgold_prompt(
    screenshot_with_highlight: &Path,
    cropped_target: &Path,
) -> Result<PromptPayload, RefgenError> {
    let screenshot = existing(screenshot_with_highlight)?;
    let crop = existing(cropped_target)?;
    Ok(PromptPayload {
        template: Template::LongGold,
        system_text: Template::LongGold.text().to_string(),
        user_parts: vec![
            UserPart::Image {
                header: SCREENSHOT_HIGHLIGHT_HEADER.into(),
                path: screenshot,
            },
            UserPart::Image {
                header: CROPPED_TARGET_HEADER.into(),
                path: crop,
            },
        ],
    })
}

/// Agent-mode payload: screenshot first, then the instruction text.
/// The screenshot is referenced as given and only read when sent.
pub fn build_long_prompt(
    screenshot: &Path,
    short_instruction: &str,
) -> Result<PromptPayload, RefgenError> {
    if short_instruction.trim().is_empty() {
        return Err(RefgenError::EmptyInstruction);
    }
    Ok(PromptPayload {
        template: Template::Long,
        system_text: Template::Long.text().to_string(),
        user_parts: vec![
            UserPart::Image {
                header: SCREENSHOT_HEADER.into(),
                path: screenshot.to_path_buf(),
            },
            UserPart::Text {
                text: format!("{INSTRUCTION_HEADER}\n{short_instruction}"),
            },
        ],
    })
}
