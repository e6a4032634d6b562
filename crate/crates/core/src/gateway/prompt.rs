//! Versioned prompt templates. Templates are data: changing the file
//! changes the version, which changes every cache key.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::QueryKind;
use crate::error::{Error, Result};
use crate::model::{DoorBox, DoorId, FacilityType};

const BUILTIN_V1: &str = include_str!("../../data/prompts.v1.json");

#[derive(Debug, Clone, Deserialize)]
struct TemplateFile {
    version: String,
    suffix: String,
    names: BTreeMap<FacilityType, String>,
    profiles: BTreeMap<FacilityType, String>,
    templates: Templates,
    strict_followups: Followups,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct Templates {
    connection: String,
    same_room: String,
    omission: String,
    whole_image_count: String,
}

#[derive(Debug, Clone, Deserialize)]
struct Followups {
    verdict: String,
    count: String,
}

#[derive(Debug, Clone)]
pub struct PromptTemplates {
    file: TemplateFile,
}

impl PromptTemplates {
    pub fn builtin(version: &str) -> Result<Self> {
        match version {
            "v1" => Self::parse(BUILTIN_V1),
            other => Err(Error::Config(format!(
                "unknown prompt template version {other:?}"
            ))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: TemplateFile = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid prompt template file: {e}")))?;
        let t = &file.templates;
        for (name, body) in [
            ("connection", &t.connection),
            ("same-room", &t.same_room),
            ("omission", &t.omission),
            ("whole-image-count", &t.whole_image_count),
        ] {
            if !body.ends_with(&file.suffix) {
                return Err(Error::Config(format!(
                    "template {name} does not end with {:?}",
                    file.suffix
                )));
            }
        }
        for f in FacilityType::ALL {
            if !file.names.contains_key(&f) || !file.profiles.contains_key(&f) {
                return Err(Error::Config(format!("template file has no entry for {f}")));
            }
        }
        Ok(Self { file })
    }

    pub fn version(&self) -> &str {
        &self.file.version
    }

    pub fn profile(&self, facility: FacilityType) -> &str {
        &self.file.profiles[&facility]
    }

    /// Follow-up sent once when a reply cannot be parsed.
    pub fn strict_followup(&self, kind: &QueryKind) -> &str {
        if kind.expects_count() {
            &self.file.strict_followups.count
        } else {
            &self.file.strict_followups.verdict
        }
    }

    /// Prompt text using the file's own facility profile.
    pub fn prompt_for(&self, kind: &QueryKind, doors: &[DoorBox]) -> Result<String> {
        self.build_prompt(kind, self.profile(kind.facility()), doors)
    }

    /// Renders the template for `kind`. `doors` must contain every door the
    /// query refers to; their boxes are described in the text.
    pub fn build_prompt(
        &self,
        kind: &QueryKind,
        facility_profile: &str,
        doors: &[DoorBox],
    ) -> Result<String> {
        let locate = |id: DoorId| -> Result<String> {
            doors
                .iter()
                .find(|d| d.door_id == id)
                .map(|d| d.bbox.to_string())
                .ok_or_else(|| Error::validation(format!("query refers to unknown door {id}")))
        };
        let t = &self.file.templates;
        let facility = kind.facility();
        let text = match kind {
            QueryKind::Connection { door_id, .. } => {
                if facility_profile.trim().is_empty() {
                    return Err(Error::Config(
                        "connection queries need a non-empty facility profile".into(),
                    ));
                }
                t.connection.replace("{door_box}", &locate(*door_id)?)
            }
            QueryKind::SameRoom { door_a, door_b, .. } => t
                .same_room
                .replace("{door_a_box}", &locate(*door_a)?)
                .replace("{door_b_box}", &locate(*door_b)?),
            QueryKind::Omission { marked_doors, .. } => {
                let boxes = marked_doors
                    .iter()
                    .map(|&id| locate(id))
                    .collect::<Result<Vec<_>>>()?;
                let listed = if boxes.is_empty() {
                    "none".to_string()
                } else {
                    boxes.join(", ")
                };
                t.omission
                    .replace("{marked_count}", &marked_doors.len().to_string())
                    .replace("{marked_boxes}", &listed)
            }
            QueryKind::WholeImageCount { .. } => t.whole_image_count.clone(),
        };
        Ok(text
            .replace("{profile}", facility_profile.trim())
            .replace("{facility}", &self.file.names[&facility]))
    }
}
