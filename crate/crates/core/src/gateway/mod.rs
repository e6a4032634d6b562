//! Model queries for the three reasoning steps (door connection, same-room,
//! omission count) plus the whole-image count used by the baseline.
//!
//! A [`Gateway`] owns the prompt templates, a [`Backend`] and an optional
//! [`AnswerCache`]. Every answer is cached under a [`CacheKey`] derived from
//! the plan image, the overlay that was sent, the query, the template
//! version and the backend identity, so repeat runs replay without traffic.

mod cache;
mod oracle;
mod parse;
mod prompt;
mod remote;

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cache::{AnswerCache, CacheRecord, DiskCache, MemoryCache, RequestMeta};
pub use oracle::{OracleBackend, OracleConfig, OracleFixture};
pub use parse::{extract_reason, parse_count, parse_verdict};
pub use prompt::PromptTemplates;
pub use remote::{RateLimit, RemoteBackend, RemoteConfig, LLM_KEY_ENV, LLM_MODEL_ENV, LLM_URL_ENV};

use crate::error::{Error, Result};
use crate::model::{ContentDigest, DoorBox, DoorId, FacilityType, FloorPlanRef, Verdict};
use crate::overlay::RenderedImage;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QueryKind {
    /// Does this door lead to a room of `facility`?
    Connection {
        facility: FacilityType,
        door_id: DoorId,
    },
    /// Do these two doors open into the same room? `door_a < door_b`.
    SameRoom {
        facility: FacilityType,
        door_a: DoorId,
        door_b: DoorId,
    },
    /// How many instances have no marked door? `marked_doors` sorted.
    Omission {
        facility: FacilityType,
        marked_doors: Vec<DoorId>,
    },
    /// Single-shot count over the whole image (baseline).
    WholeImageCount { facility: FacilityType },
}

impl QueryKind {
    pub fn same_room(facility: FacilityType, a: DoorId, b: DoorId) -> Result<Self> {
        if a == b {
            return Err(Error::validation(format!(
                "same-room query on door {a} with itself"
            )));
        }
        Ok(QueryKind::SameRoom {
            facility,
            door_a: a.min(b),
            door_b: a.max(b),
        })
    }

    pub fn omission(facility: FacilityType, mut marked: Vec<DoorId>) -> Result<Self> {
        marked.sort_unstable();
        if marked.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("omission query marks a door twice"));
        }
        Ok(QueryKind::Omission {
            facility,
            marked_doors: marked,
        })
    }

    pub fn facility(&self) -> FacilityType {
        match self {
            QueryKind::Connection { facility, .. }
            | QueryKind::SameRoom { facility, .. }
            | QueryKind::Omission { facility, .. }
            | QueryKind::WholeImageCount { facility } => *facility,
        }
    }

    pub fn expects_count(&self) -> bool {
        matches!(
            self,
            QueryKind::Omission { .. } | QueryKind::WholeImageCount { .. }
        )
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("query kinds always serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerValue {
    Verdict(Verdict),
    Count(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelAnswer {
    pub value: AnswerValue,
    pub raw_text: String,
    pub reason_text: String,
}

impl ModelAnswer {
    /// Parses `raw` according to what `kind` asks for.
    pub fn parse(kind: &QueryKind, raw: &str) -> Result<Self> {
        let value = if kind.expects_count() {
            AnswerValue::Count(parse_count(raw)?)
        } else {
            AnswerValue::Verdict(parse_verdict(raw)?)
        };
        Ok(Self {
            value,
            raw_text: raw.to_string(),
            reason_text: extract_reason(raw),
        })
    }

    pub fn verdict(&self) -> Result<Verdict> {
        match self.value {
            AnswerValue::Verdict(v) => Ok(v),
            AnswerValue::Count(_) => Err(Error::Protocol("expected a verdict, got a count".into())),
        }
    }

    pub fn count(&self) -> Result<u32> {
        match self.value {
            AnswerValue::Count(n) => Ok(n),
            AnswerValue::Verdict(_) => {
                Err(Error::Protocol("expected a count, got a verdict".into()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(pub ContentDigest);

impl CacheKey {
    pub fn new(meta: &RequestMeta) -> Self {
        let bytes = serde_json::to_vec(&(
            &meta.image_digest,
            &meta.overlay_digest,
            &meta.query,
            &meta.template_version,
            &meta.backend,
        ))
        .expect("request metadata serializes");
        CacheKey(ContentDigest::of(&bytes))
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// What a backend sees for one call.
#[derive(Debug, Clone, Copy)]
pub struct BackendRequest<'a> {
    pub plan_id: &'a str,
    pub kind: &'a QueryKind,
    pub prompt: &'a str,
    pub image_png: &'a [u8],
    /// Previous unparseable reply and the stricter instruction to follow it.
    pub followup: Option<(&'a str, &'a str)>,
}

/// A model that answers prompts about an image with free text.
pub trait Backend: Send + Sync {
    /// Identity used in cache keys; must change whenever answers could.
    fn name(&self) -> String;

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String>;
}

/// Backend from a closure, for scripted replies.
pub struct FnBackend<F> {
    name: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&BackendRequest<'_>) -> Result<String> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&BackendRequest<'_>) -> Result<String> + Send + Sync,
{
    fn name(&self) -> String {
        self.name.clone()
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String> {
        (self.f)(request)
    }
}

/// Result of [`Gateway::ask`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Asked {
    pub answer: ModelAnswer,
    pub key: CacheKey,
    pub cached: bool,
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    backend_name: String,
    cache: Option<Arc<dyn AnswerCache>>,
    templates: PromptTemplates,
    invocations: AtomicU64,
    cancel: Option<Arc<AtomicBool>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, templates: PromptTemplates) -> Self {
        Self {
            backend_name: backend.name(),
            backend,
            cache: None,
            templates,
            invocations: AtomicU64::new(0),
            cancel: None,
        }
    }

    /// Once `flag` is set, uncached questions fail with [`Error::Cancelled`].
    pub fn with_cancel(mut self, flag: Arc<AtomicBool>) -> Self {
        self.cancel = Some(flag);
        self
    }

    pub fn with_cache(mut self, cache: Arc<dyn AnswerCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn backend_name(&self) -> &str {
        &self.backend_name
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    /// Number of backend calls made so far (cache hits excluded).
    pub fn backend_invocations(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }

    pub fn request_meta(
        &self,
        plan: &FloorPlanRef,
        kind: &QueryKind,
        image: &RenderedImage,
    ) -> RequestMeta {
        RequestMeta {
            plan_id: plan.plan_id.clone(),
            query: kind.clone(),
            template_version: self.templates.version().to_string(),
            backend: self.backend_name.clone(),
            image_digest: plan.image_digest,
            overlay_digest: image.digest,
        }
    }

    /// Asks `kind` about `image` (the plan with its overlay drawn). Replies
    /// that do not parse get one stricter follow-up before failing.
    pub fn ask(
        &self,
        plan: &FloorPlanRef,
        kind: &QueryKind,
        doors: &[DoorBox],
        image: &RenderedImage,
    ) -> Result<Asked> {
        if image.png.is_empty() {
            return Err(Error::validation("empty image sent to the model"));
        }
        let meta = self.request_meta(plan, kind, image);
        let key = CacheKey::new(&meta);
        if let Some(cache) = &self.cache {
            if let Some(answer) = cache.get(&key)? {
                return Ok(Asked {
                    answer,
                    key,
                    cached: true,
                });
            }
        }

        if self
            .cancel
            .as_ref()
            .is_some_and(|c| c.load(Ordering::Relaxed))
        {
            return Err(Error::Cancelled);
        }
        let prompt = self.templates.prompt_for(kind, doors)?;
        let mut request = BackendRequest {
            plan_id: &plan.plan_id,
            kind,
            prompt: &prompt,
            image_png: &image.png,
            followup: None,
        };
        self.invocations.fetch_add(1, Ordering::Relaxed);
        let first = self.backend.complete(&request)?;
        let answer = match ModelAnswer::parse(kind, &first) {
            Ok(a) => a,
            Err(_) => {
                log::debug!(
                    "{}: reprompting after unparseable reply {first:?}",
                    plan.plan_id
                );
                request.followup = Some((&first, self.templates.strict_followup(kind)));
                self.invocations.fetch_add(1, Ordering::Relaxed);
                let second = self.backend.complete(&request)?;
                ModelAnswer::parse(kind, &second)?
            }
        };

        if let Some(cache) = &self.cache {
            cache.put(&CacheRecord {
                key,
                answer: answer.clone(),
                request: meta,
            })?;
        }
        Ok(Asked {
            answer,
            key,
            cached: false,
        })
    }
}
