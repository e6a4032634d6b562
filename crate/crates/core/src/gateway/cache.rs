use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CacheKey, ModelAnswer, QueryKind};
use crate::error::{Error, Result};
use crate::model::ContentDigest;

/// Everything that went into a cache key, stored next to the answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMeta {
    pub plan_id: String,
    pub query: QueryKind,
    pub template_version: String,
    pub backend: String,
    pub image_digest: ContentDigest,
    pub overlay_digest: ContentDigest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: CacheKey,
    pub answer: ModelAnswer,
    pub request: RequestMeta,
}

/// Answer store. Inserts are first-writer-wins: a later `put` for an
/// existing key leaves the stored record untouched.
pub trait AnswerCache: Send + Sync {
    fn get(&self, key: &CacheKey) -> Result<Option<ModelAnswer>>;
    fn put(&self, record: &CacheRecord) -> Result<()>;
}

#[derive(Debug, Default)]
pub struct MemoryCache {
    entries: Mutex<HashMap<CacheKey, ModelAnswer>>,
}

impl MemoryCache {
    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl AnswerCache for MemoryCache {
    fn get(&self, key: &CacheKey) -> Result<Option<ModelAnswer>> {
        Ok(self.entries.lock().unwrap().get(key).cloned())
    }

    fn put(&self, record: &CacheRecord) -> Result<()> {
        self.entries
            .lock()
            .unwrap()
            .entry(record.key)
            .or_insert_with(|| record.answer.clone());
        Ok(())
    }
}

/// One JSON file per key under `dir`, named by the key's hex digest.
#[derive(Debug)]
pub struct DiskCache {
    dir: PathBuf,
    tmp_counter: AtomicU64,
}

impl DiskCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.to_hex()))
    }

    pub fn read_record(&self, key: &CacheKey) -> Result<Option<CacheRecord>> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let record: CacheRecord = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Protocol(format!("corrupt cache entry {}: {e}", path.display())))?;
        if record.key != *key {
            return Err(Error::Protocol(format!(
                "cache entry {} holds key {}",
                path.display(),
                record.key
            )));
        }
        Ok(Some(record))
    }
}

impl AnswerCache for DiskCache {
    fn get(&self, key: &CacheKey) -> Result<Option<ModelAnswer>> {
        Ok(self.read_record(key)?.map(|r| r.answer))
    }

    fn put(&self, record: &CacheRecord) -> Result<()> {
        let target = self.path_for(&record.key);
        if target.exists() {
            return Ok(());
        }
        let tmp = self.dir.join(format!(
            ".{}.{}.{}.tmp",
            record.key.to_hex(),
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        let mut body = serde_json::to_vec_pretty(record).expect("cache records serialize");
        body.push(b'\n');
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&body)?;
            f.sync_all()
        };
        write().map_err(|e| Error::io(&tmp, e))?;
        // hard_link refuses to replace an existing file, so the first
        // complete write is the one that stays.
        let linked = fs::hard_link(&tmp, &target);
        let _ = fs::remove_file(&tmp);
        match linked {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Ok(()),
            Err(e) => Err(Error::io(&target, e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::AnswerValue;
    use crate::model::{FacilityType, Verdict};

    fn record(verdict: Verdict) -> CacheRecord {
        let request = RequestMeta {
            plan_id: "p".into(),
            query: QueryKind::Connection {
                facility: FacilityType::Toilet,
                door_id: 0,
            },
            template_version: "v1".into(),
            backend: "b".into(),
            image_digest: ContentDigest::of(b"i"),
            overlay_digest: ContentDigest::of(b"o"),
        };
        CacheRecord {
            key: CacheKey::new(&request),
            answer: ModelAnswer {
                value: AnswerValue::Verdict(verdict),
                raw_text: format!("{verdict:?}"),
                reason_text: String::new(),
            },
            request,
        }
    }

    #[test]
    fn disk_round_trip_and_first_writer_wins() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::open(dir.path().join("c")).unwrap();
        let yes = record(Verdict::Yes);
        assert_eq!(cache.get(&yes.key).unwrap(), None);
        cache.put(&yes).unwrap();
        cache.put(&record(Verdict::No)).unwrap();
        assert_eq!(cache.get(&yes.key).unwrap(), Some(yes.answer.clone()));
        assert_eq!(
            cache.read_record(&yes.key).unwrap().unwrap().request,
            yes.request
        );
        let leftovers: Vec<_> = fs::read_dir(cache.dir())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn concurrent_writers_leave_one_record() {
        let dir = tempfile::tempdir().unwrap();
        let cache = std::sync::Arc::new(DiskCache::open(dir.path()).unwrap());
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let c = cache.clone();
                std::thread::spawn(move || {
                    let v = if i % 2 == 0 {
                        Verdict::Yes
                    } else {
                        Verdict::No
                    };
                    c.put(&record(v)).unwrap();
                    c.get(&record(v).key).unwrap().unwrap()
                })
            })
            .collect();
        let seen: Vec<ModelAnswer> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(seen.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn memory_cache_first_writer_wins() {
        let cache = MemoryCache::default();
        cache.put(&record(Verdict::Yes)).unwrap();
        cache.put(&record(Verdict::No)).unwrap();
        let key = record(Verdict::Yes).key;
        assert_eq!(
            cache.get(&key).unwrap().unwrap().value,
            AnswerValue::Verdict(Verdict::Yes)
        );
        assert_eq!(cache.len(), 1);
    }
}
