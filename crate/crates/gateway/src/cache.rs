//! Persistent response cache: one JSON file per request hash.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use speakgate_core::{BackendError, ChatBackend, ChatRequest, ChatResponse};

/// Hex sha256 of the canonical JSON of every request field. Object keys are
/// emitted in sorted order so the key does not depend on struct layout.
pub fn request_key(req: &ChatRequest) -> String {
    let canonical = serde_json::to_value(req)
        .and_then(|v| serde_json::to_string(&v))
        .expect("ChatRequest always serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedReply {
    pub text: String,
    #[serde(default)]
    pub speak_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: ChatRequest,
    pub response: CachedReply,
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
    tmp_counter: AtomicU64,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| BackendError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// A stored reply for `req`. Unreadable or mismatched entries count as misses.
    pub fn get(&self, req: &ChatRequest) -> Option<CachedReply> {
        let key = request_key(req);
        let bytes = fs::read(self.path_for(&key)).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        (entry.key == key && &entry.request == req).then_some(entry.response)
    }

    /// Store a reply atomically (write to a temp file, then rename).
    pub fn put(&self, req: &ChatRequest, reply: &CachedReply) -> Result<(), BackendError> {
        let key = request_key(req);
        let entry = CacheEntry {
            key: key.clone(),
            request: req.clone(),
            response: reply.clone(),
        };
        let bytes = serde_json::to_vec_pretty(&entry).map_err(|e| BackendError::Cache(e.to_string()))?;
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = self.dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
        let target = self.path_for(&key);
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &target)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            BackendError::Cache(format!("{}: {e}", target.display()))
        })
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Wraps any backend with the response cache. Hits are flagged `cached` and
/// report zero attempts.
pub struct CachedBackend<B> {
    inner: B,
    cache: ResponseCache,
}

impl<B> CachedBackend<B> {
    pub fn new(inner: B, cache: ResponseCache) -> Self {
        Self { inner, cache }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }
}

impl<B: ChatBackend> CachedBackend<B> {
    async fn fetch_and_store(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut resp = self.inner.complete(req).await?;
        self.cache.put(
            req,
            &CachedReply {
                text: resp.text.clone(),
                speak_score: resp.speak_score,
            },
        )?;
        resp.cached = false;
        Ok(resp)
    }
}

#[async_trait]
impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        if let Some(hit) = self.cache.get(req) {
            return Ok(ChatResponse {
                text: hit.text,
                speak_score: hit.speak_score,
                cached: true,
                attempts: 0,
            });
        }
        self.fetch_and_store(req).await
    }

    async fn complete_fresh(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        self.fetch_and_store(req).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> ChatRequest {
        ChatRequest::new("mock", "m", "sys".into(), "user".into())
    }

    #[test]
    fn key_covers_every_field() {
        let base = request_key(&req());
        assert_eq!(base.len(), 64);
        assert_eq!(base, request_key(&req()));
        let variants = [
            ChatRequest { backend_id: "other".into(), ..req() },
            ChatRequest { model_id: "m2".into(), ..req() },
            ChatRequest { system: "sys2".into(), ..req() },
            ChatRequest { user: "user2".into(), ..req() },
            req().with_temperature(0.7),
            req().with_max_output(5),
            req().with_scores(true),
        ];
        for v in variants {
            assert_ne!(request_key(&v), base, "{v:?}");
        }
    }

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert!(cache.get(&req()).is_none());
        let reply = CachedReply {
            text: "hi".into(),
            speak_score: Some(-0.5),
        };
        cache.put(&req(), &reply).unwrap();
        assert_eq!(cache.get(&req()), Some(reply));
        assert_eq!(cache.len(), 1);
        assert!(cache.get(&req().with_temperature(1.0)).is_none());
    }

    #[test]
    fn corrupt_entry_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        fs::write(cache.path_for(&request_key(&req())), b"{not json").unwrap();
        assert!(cache.get(&req()).is_none());
    }
}
