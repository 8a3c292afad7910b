//! Append-only JSONL cache of free-flow durations keyed by
//! (spatial cell, school, mode).

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{FreeFlowError, FreeFlowProvider};
use crate::model::{GeoPoint, Mode};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    /// Spatial cell label, see [`SpatialClustering::cell_label`](crate::clustering::SpatialClustering::cell_label).
    pub cell: String,
    pub school_id: String,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub cell: String,
    pub school_id: String,
    pub mode: Mode,
    pub duration_s: f64,
    pub retrieved_at: String,
}

impl CacheEntry {
    fn key(&self) -> CacheKey {
        CacheKey {
            cell: self.cell.clone(),
            school_id: self.school_id.clone(),
            mode: self.mode,
        }
    }
}

/// Readers share the map; [`RouteCache::insert`] is the only writer and
/// appends to the backing file before publishing the entry.
#[derive(Debug)]
pub struct RouteCache {
    path: Option<PathBuf>,
    entries: RwLock<BTreeMap<CacheKey, CacheEntry>>,
    writer: Mutex<Option<File>>,
}

fn cache_err(path: &Path, message: impl ToString) -> FreeFlowError {
    FreeFlowError::Cache {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn read_entries(path: &Path) -> Result<Vec<CacheEntry>, FreeFlowError> {
    let file = File::open(path).map_err(|e| cache_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| cache_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CacheEntry = serde_json::from_str(&line)
            .map_err(|e| cache_err(path, format!("line {}: {e}", i + 1)))?;
        if !(entry.duration_s.is_finite() && entry.duration_s > 0.0) {
            return Err(cache_err(path, format!("line {}: non-positive duration", i + 1)));
        }
        out.push(entry);
    }
    Ok(out)
}

impl RouteCache {
    pub fn in_memory() -> Self {
        RouteCache {
            path: None,
            entries: RwLock::new(BTreeMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens (creating if needed) the cache at `path`. Entries from `extra`
    /// files, typically earlier collection runs, are merged in keeping the
    /// smallest duration per key. Merged entries are not copied into `path`.
    pub fn open(path: &Path, extra: &[PathBuf]) -> Result<Self, FreeFlowError> {
        let mut map: BTreeMap<CacheKey, CacheEntry> = BTreeMap::new();
        let mut merge = |entries: Vec<CacheEntry>, min: bool| {
            for e in entries {
                let k = e.key();
                match map.get(&k) {
                    Some(old) if !min || old.duration_s <= e.duration_s => {}
                    _ => {
                        map.insert(k, e);
                    }
                }
            }
        };
        if path.exists() {
            // Within one file the first write wins: entries are immutable.
            merge(read_entries(path)?, false);
        }
        for p in extra {
            merge(read_entries(p)?, true);
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| cache_err(path, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| cache_err(path, e))?;
        Ok(RouteCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(map),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &CacheKey) -> Option<f64> {
        self.entries
            .read()
            .expect("cache lock")
            .get(key)
            .map(|e| e.duration_s)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> BTreeMap<CacheKey, f64> {
        self.entries
            .read()
            .expect("cache lock")
            .iter()
            .map(|(k, e)| (k.clone(), e.duration_s))
            .collect()
    }

    /// Stores a new entry. An existing key keeps its first value; the
    /// returned duration is the one in the cache afterwards.
    pub fn insert(&self, key: CacheKey, duration_s: f64) -> Result<f64, FreeFlowError> {
        let mut writer = self.writer.lock().expect("cache writer");
        if let Some(old) = self.get(&key) {
            return Ok(old);
        }
        let entry = CacheEntry {
            cell: key.cell.clone(),
            school_id: key.school_id.clone(),
            mode: key.mode,
            duration_s,
            retrieved_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        if let (Some(f), Some(path)) = (writer.as_mut(), self.path.as_deref()) {
            let line = serde_json::to_string(&entry).map_err(|e| cache_err(path, e))?;
            writeln!(f, "{line}")
                .and_then(|_| f.flush())
                .map_err(|e| cache_err(path, e))?;
        }
        self.entries.write().expect("cache lock").insert(key, entry);
        Ok(duration_s)
    }
}

/// Cache hit, or one provider call whose result is stored.
pub fn cached_free_flow(
    key: &CacheKey,
    origin: GeoPoint,
    dest: GeoPoint,
    optimistic: bool,
    provider: &dyn FreeFlowProvider,
    cache: &RouteCache,
) -> Result<f64, FreeFlowError> {
    if let Some(d) = cache.get(key) {
        return Ok(d);
    }
    let d = provider.query_route(origin, dest, key.mode, optimistic)?;
    cache.insert(key.clone(), d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freeflow::OfflineNetwork;
    use crate::simulator::builtin;

    fn key(cell: &str, mode: Mode) -> CacheKey {
        CacheKey {
            cell: cell.into(),
            school_id: "s1".into(),
            mode,
        }
    }

    fn setup() -> (OfflineNetwork, GeoPoint, GeoPoint) {
        let net = builtin::single_edge(10.0, 50.0);
        let (a, b) = (net.nodes()[0].loc, net.nodes()[1].loc);
        (OfflineNetwork::new(net), a, b)
    }

    #[test]
    fn second_call_is_a_hit() {
        let (p, a, b) = setup();
        let c = RouteCache::in_memory();
        let k = key("c", Mode::Car);
        let first = cached_free_flow(&k, a, b, true, &p, &c).unwrap();
        let second = cached_free_flow(&k, a, b, true, &p, &c).unwrap();
        assert_eq!(first, second);
        assert_eq!(p.calls(), 1);
    }

    #[test]
    fn mode_is_part_of_the_key() {
        let (p, a, b) = setup();
        let c = RouteCache::in_memory();
        cached_free_flow(&key("c", Mode::Car), a, b, true, &p, &c).unwrap();
        cached_free_flow(&key("c", Mode::Bus), a, b, true, &p, &c).unwrap();
        assert_eq!((c.len(), p.calls()), (2, 2));
    }

    #[test]
    fn cold_cache_costs_one_call_per_key() {
        let (p, a, b) = setup();
        let c = RouteCache::in_memory();
        for round in 0..3 {
            for i in 0..7 {
                cached_free_flow(&key(&format!("c{i}"), Mode::Car), a, b, true, &p, &c).unwrap();
            }
            assert_eq!(p.calls(), 7, "round {round}");
        }
    }

    #[test]
    fn errors_are_not_cached() {
        let (p, a, b) = setup();
        let c = RouteCache::in_memory();
        assert!(cached_free_flow(&key("c", Mode::Car), b, a, true, &p, &c).is_err());
        assert!(c.is_empty());
    }

    #[test]
    fn persists_and_merges_by_minimum() {
        let dir = tempfile::tempdir().unwrap();
        let main = dir.path().join("cache.jsonl");
        let other = dir.path().join("feb.jsonl");
        {
            let c = RouteCache::open(&main, &[]).unwrap();
            c.insert(key("x", Mode::Car), 500.0).unwrap();
            assert_eq!(c.insert(key("x", Mode::Car), 400.0).unwrap(), 500.0);
            c.insert(key("y", Mode::Bus), 900.0).unwrap();
        }
        {
            let c = RouteCache::open(&other, &[]).unwrap();
            c.insert(key("x", Mode::Car), 450.0).unwrap();
            c.insert(key("y", Mode::Bus), 950.0).unwrap();
        }
        let reopened = RouteCache::open(&main, &[]).unwrap();
        assert_eq!(reopened.get(&key("x", Mode::Car)), Some(500.0));
        let merged = RouteCache::open(&main, &[other]).unwrap();
        assert_eq!(merged.get(&key("x", Mode::Car)), Some(450.0));
        assert_eq!(merged.get(&key("y", Mode::Bus)), Some(900.0));
        assert_eq!(std::fs::read_to_string(&main).unwrap().lines().count(), 2);
    }

    #[test]
    fn malformed_cache_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(&p, "{not json}\n").unwrap();
        assert!(matches!(RouteCache::open(&p, &[]), Err(FreeFlowError::Cache { .. })));
    }
}
