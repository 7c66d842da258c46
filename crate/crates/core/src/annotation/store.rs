use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetRef, DatasetRegistry, ServiceError};
use crate::oracle::{fleiss_kappa, majority_vote, AnnotationMatrix};
use crate::training::{ExpertSet, ExpertSource};

const SNAPSHOT: &str = "session.json";
const VOTE_LOG: &str = "votes.jsonl";
const EXPERT_SET: &str = "expert_set.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pending,
    Labeled,
}

/// Immutable session metadata plus the finalization stamp. Written on
/// create and rewritten once on finalize; votes live in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub dataset: DatasetRef,
    pub indices: Vec<usize>,
    pub class_names: Vec<String>,
    pub nonce: String,
    pub created_at: u64,
    #[serde(default)]
    pub finalized_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VoteRecord {
    annotator: String,
    index: usize,
    label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub index: usize,
    pub label: usize,
}

/// Full session state as served to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    #[serde(flatten)]
    pub meta: SessionMeta,
    pub status: BTreeMap<usize, ItemStatus>,
    /// index -> annotator -> label
    pub votes: BTreeMap<usize, BTreeMap<String, usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub labeled: usize,
    pub pending: usize,
    pub per_annotator: BTreeMap<String, usize>,
    pub finalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finalized {
    pub expert_set: ExpertSet,
    pub num_annotators: usize,
    /// Agreement over items labeled by every participating annotator.
    pub kappa: Option<f64>,
    pub kappa_items: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub accepted: usize,
    pub labeled: usize,
    pub total: usize,
}

struct Session {
    meta: SessionMeta,
    dir: PathBuf,
    votes: BTreeMap<usize, BTreeMap<String, usize>>,
    log: File,
}

impl Session {
    fn view(&self) -> SessionView {
        let status = self
            .meta
            .indices
            .iter()
            .map(|&i| {
                let s = if self.votes.get(&i).is_some_and(|v| !v.is_empty()) {
                    ItemStatus::Labeled
                } else {
                    ItemStatus::Pending
                };
                (i, s)
            })
            .collect();
        SessionView {
            meta: self.meta.clone(),
            status,
            votes: self.votes.clone(),
        }
    }

    fn labeled(&self) -> usize {
        self.meta
            .indices
            .iter()
            .filter(|i| self.votes.get(i).is_some_and(|v| !v.is_empty()))
            .count()
    }

    fn ensure_open(&self) -> Result<(), ServiceError> {
        if self.meta.finalized_at.is_some() {
            return Err(ServiceError::Closed(self.meta.session_id.clone()));
        }
        Ok(())
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn internal(path: &Path, e: std::io::Error) -> ServiceError {
    ServiceError::Internal(format!("{}: {e}", path.display()))
}

// write-then-rename so a crash never leaves a torn snapshot
fn write_snapshot(dir: &Path, meta: &SessionMeta) -> Result<(), ServiceError> {
    let tmp = dir.join(format!("{SNAPSHOT}.tmp"));
    let bytes = serde_json::to_vec_pretty(meta).map_err(|e| ServiceError::Internal(e.to_string()))?;
    let mut f = File::create(&tmp).map_err(|e| internal(&tmp, e))?;
    f.write_all(&bytes).and_then(|_| f.sync_all()).map_err(|e| internal(&tmp, e))?;
    let dst = dir.join(SNAPSHOT);
    fs::rename(&tmp, &dst).map_err(|e| internal(&dst, e))
}

fn open_log(dir: &Path) -> Result<File, ServiceError> {
    let p = dir.join(VOTE_LOG);
    OpenOptions::new().create(true).append(true).open(&p).map_err(|e| internal(&p, e))
}

/// Apply the vote log in order. A torn final line (crash mid-append, never
/// acked) is cut off so later appends start on a clean line; corruption
/// anywhere else is an error.
fn replay(path: &Path) -> Result<BTreeMap<usize, BTreeMap<String, usize>>, ServiceError> {
    let mut votes: BTreeMap<usize, BTreeMap<String, usize>> = BTreeMap::new();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(votes),
        Err(e) => return Err(internal(path, e)),
    };
    let mut good = 0;
    let mut rest = &bytes[..];
    while !rest.is_empty() {
        let (line, complete) = match rest.iter().position(|&b| b == b'\n') {
            Some(n) => (&rest[..n], true),
            None => (rest, false),
        };
        let consumed = line.len() + usize::from(complete);
        // an unterminated line was never acked
        if !complete {
            break;
        }
        if !line.iter().all(u8::is_ascii_whitespace) {
            let r: VoteRecord = serde_json::from_slice(line)
                .map_err(|e| ServiceError::Internal(format!("{} at byte {good}: {e}", path.display())))?;
            votes.entry(r.index).or_default().insert(r.annotator, r.label);
        }
        good += consumed;
        rest = &rest[consumed..];
    }
    if good < bytes.len() {
        log::warn!("dropping {} torn bytes at the end of {}", bytes.len() - good, path.display());
        let f = OpenOptions::new().write(true).open(path).map_err(|e| internal(path, e))?;
        f.set_len(good as u64).and_then(|_| f.sync_all()).map_err(|e| internal(path, e))?;
    }
    Ok(votes)
}

/// Session id: first 16 bytes of SHA-256 over dataset, split, indices and
/// nonce, hex encoded.
pub fn session_id(dataset: &DatasetRef, indices: &[usize], nonce: &str) -> String {
    let mut h = Sha256::new();
    h.update(dataset.name.as_bytes());
    h.update([0]);
    h.update(dataset.split.as_bytes());
    h.update([0]);
    for i in indices {
        h.update((*i as u64).to_le_bytes());
    }
    h.update(nonce.as_bytes());
    hex::encode(&h.finalize()[..16])
}

/// Durable annotation sessions rooted at one directory. Every mutation of a
/// session happens under that session's mutex; log appends are synced to
/// disk before the caller sees an ack.
pub struct SessionStore {
    root: PathBuf,
    datasets: DatasetRegistry,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl SessionStore {
    /// Open (or create) the store and replay every session found under
    /// `root/sessions`.
    pub fn open(root: impl Into<PathBuf>, datasets: DatasetRegistry) -> Result<Self, ServiceError> {
        let root = root.into();
        let dir = root.join("sessions");
        fs::create_dir_all(&dir).map_err(|e| internal(&dir, e))?;
        let mut sessions = HashMap::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| internal(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(SNAPSHOT).exists())
            .collect();
        entries.sort();
        for sdir in entries {
            let snap = sdir.join(SNAPSHOT);
            let text = fs::read_to_string(&snap).map_err(|e| internal(&snap, e))?;
            let meta: SessionMeta =
                serde_json::from_str(&text).map_err(|e| ServiceError::Internal(format!("{}: {e}", snap.display())))?;
            let votes = replay(&sdir.join(VOTE_LOG))?;
            let log = open_log(&sdir)?;
            let id = meta.session_id.clone();
            sessions.insert(id, Arc::new(Mutex::new(Session { meta, dir: sdir, votes, log })));
        }
        log::info!("annotation store at {} holds {} sessions", root.display(), sessions.len());
        Ok(Self {
            root,
            datasets,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn datasets(&self) -> &DatasetRegistry {
        &self.datasets
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }

    fn with<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, ServiceError>) -> Result<T, ServiceError> {
        let s = self.get(id)?;
        let mut guard = s.lock().expect("session poisoned");
        f(&mut guard)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn create(
        &self,
        dataset: DatasetRef,
        indices: Vec<usize>,
        class_names: Option<Vec<String>>,
        nonce: String,
    ) -> Result<SessionView, ServiceError> {
        if indices.is_empty() {
            return Err(ServiceError::BadRequest("a session needs at least one index".into()));
        }
        let ds = self.datasets.get(&dataset)?;
        let unique: BTreeSet<_> = indices.iter().collect();
        if unique.len() != indices.len() {
            return Err(ServiceError::BadRequest("indices must be unique".into()));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= ds.data.len()) {
            return Err(ServiceError::BadRequest(format!(
                "index {i} outside {}/{} of {} windows",
                dataset.name,
                dataset.split,
                ds.data.len()
            )));
        }
        let class_names = match class_names {
            Some(c) if c.len() != ds.data.num_classes => {
                return Err(ServiceError::BadRequest(format!(
                    "{} class names given, dataset has {} classes",
                    c.len(),
                    ds.data.num_classes
                )))
            }
            Some(c) => c,
            None => ds.class_names.clone(),
        };
        let id = session_id(&dataset, &indices, &nonce);
        let mut map = self.sessions.write().expect("session map poisoned");
        let dir = self.root.join("sessions").join(&id);
        if map.contains_key(&id) || dir.join(SNAPSHOT).exists() {
            return Err(ServiceError::Conflict(format!("session {id} already exists")));
        }
        fs::create_dir_all(&dir).map_err(|e| internal(&dir, e))?;
        let meta = SessionMeta {
            session_id: id.clone(),
            dataset,
            indices,
            class_names,
            nonce,
            created_at: now(),
            finalized_at: None,
        };
        write_snapshot(&dir, &meta)?;
        let log = open_log(&dir)?;
        let s = Session { meta, dir, votes: BTreeMap::new(), log };
        let view = s.view();
        map.insert(id, Arc::new(Mutex::new(s)));
        Ok(view)
    }

    pub fn view(&self, id: &str) -> Result<SessionView, ServiceError> {
        self.with(id, |s| Ok(s.view()))
    }

    /// Up to `size` indices the annotator has not labeled yet: items nobody
    /// labeled come first, each group in selection order. Reading does not
    /// change any state.
    pub fn next_batch(&self, id: &str, annotator: &str, size: usize) -> Result<(DatasetRef, Vec<usize>, Vec<String>), ServiceError> {
        self.with(id, |s| {
            s.ensure_open()?;
            let mine = |i: &usize| s.votes.get(i).is_some_and(|v| v.contains_key(annotator));
            let anyone = |i: &usize| s.votes.get(i).is_some_and(|v| !v.is_empty());
            let todo: Vec<usize> = s.meta.indices.iter().copied().filter(|i| !mine(i)).collect();
            let (pending, rest): (Vec<usize>, Vec<usize>) = todo.into_iter().partition(|i| !anyone(i));
            let batch = pending.into_iter().chain(rest).take(size).collect();
            Ok((s.meta.dataset.clone(), batch, s.meta.class_names.clone()))
        })
    }

    /// Validate the whole submission, then append and sync it before
    /// touching in-memory state.
    pub fn submit(&self, id: &str, annotator: &str, labels: &[LabelSubmission]) -> Result<SubmitAck, ServiceError> {
        if annotator.trim().is_empty() {
            return Err(ServiceError::BadRequest("annotator id must not be empty".into()));
        }
        self.with(id, |s| {
            s.ensure_open()?;
            let c = s.meta.class_names.len();
            let members: BTreeSet<usize> = s.meta.indices.iter().copied().collect();
            for l in labels {
                if !members.contains(&l.index) {
                    return Err(ServiceError::BadRequest(format!("index {} is not part of this session", l.index)));
                }
                if l.label >= c {
                    return Err(ServiceError::BadRequest(format!("label {} out of range for {c} classes", l.label)));
                }
            }
            let mut buf = Vec::new();
            for l in labels {
                let rec = VoteRecord {
                    annotator: annotator.to_string(),
                    index: l.index,
                    label: l.label,
                };
                serde_json::to_writer(&mut buf, &rec).map_err(|e| ServiceError::Internal(e.to_string()))?;
                buf.push(b'\n');
            }
            let p = s.dir.join(VOTE_LOG);
            s.log.write_all(&buf).and_then(|_| s.log.sync_data()).map_err(|e| internal(&p, e))?;
            for l in labels {
                s.votes.entry(l.index).or_default().insert(annotator.to_string(), l.label);
            }
            Ok(SubmitAck {
                accepted: labels.len(),
                labeled: s.labeled(),
                total: s.meta.indices.len(),
            })
        })
    }

    pub fn progress(&self, id: &str) -> Result<Progress, ServiceError> {
        self.with(id, |s| {
            let mut per_annotator: BTreeMap<String, usize> = BTreeMap::new();
            for v in s.votes.values() {
                for a in v.keys() {
                    *per_annotator.entry(a.clone()).or_default() += 1;
                }
            }
            let labeled = s.labeled();
            Ok(Progress {
                total: s.meta.indices.len(),
                labeled,
                pending: s.meta.indices.len() - labeled,
                per_annotator,
                finalized: s.meta.finalized_at.is_some(),
            })
        })
    }

    /// Majority-vote every item, write the expert set and close the session.
    pub fn finalize(&self, id: &str) -> Result<Finalized, ServiceError> {
        self.with(id, |s| {
            s.ensure_open()?;
            let missing: Vec<usize> = s
                .meta
                .indices
                .iter()
                .copied()
                .filter(|i| s.votes.get(i).is_none_or(|v| v.is_empty()))
                .collect();
            if !missing.is_empty() {
                return Err(ServiceError::Unlabeled(missing));
            }
            let c = s.meta.class_names.len();
            let labels: Vec<usize> = s
                .meta
                .indices
                .iter()
                .map(|i| majority_vote(&s.votes[i].values().copied().collect::<Vec<_>>(), c))
                .collect();
            let annotators: BTreeSet<&String> = s.votes.values().flat_map(|v| v.keys()).collect();
            // Fleiss kappa needs a fixed rater count, so only items rated by
            // everyone who took part contribute.
            let complete: Vec<Vec<usize>> = s
                .meta
                .indices
                .iter()
                .filter_map(|i| {
                    let v = &s.votes[i];
                    annotators.iter().map(|a| v.get(*a).copied()).collect::<Option<Vec<_>>>()
                })
                .collect();
            let kappa = if annotators.len() >= 2 && !complete.is_empty() {
                let m = AnnotationMatrix::new(complete.clone()).map_err(|e| ServiceError::Internal(e.to_string()))?;
                fleiss_kappa(&m, c).ok()
            } else {
                None
            };
            let expert_set = ExpertSet {
                indices: s.meta.indices.clone(),
                corrected_labels: labels,
                source: ExpertSource::LiveUi,
            };
            let path = s.dir.join(EXPERT_SET);
            let bytes = serde_json::to_vec_pretty(&expert_set).map_err(|e| ServiceError::Internal(e.to_string()))?;
            fs::write(&path, bytes).map_err(|e| internal(&path, e))?;
            let mut meta = s.meta.clone();
            meta.finalized_at = Some(now());
            write_snapshot(&s.dir, &meta)?;
            s.meta = meta;
            Ok(Finalized {
                expert_set,
                num_annotators: annotators.len(),
                kappa,
                kappa_items: if kappa.is_some() { complete.len() } else { 0 },
                path,
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::tests::registry;
    use proptest::prelude::*;

    fn store(dir: &Path) -> SessionStore {
        SessionStore::open(dir, registry()).unwrap()
    }

    fn train() -> DatasetRef {
        DatasetRef::new("toy", "train")
    }

    fn lab(index: usize, label: usize) -> LabelSubmission {
        LabelSubmission { index, label }
    }

    #[test]
    fn create_marks_everything_pending() {
        let d = tempfile::tempdir().unwrap();
        let st = store(d.path());
        let v = st.create(train(), (0..10).collect(), None, "a".into()).unwrap();
        assert_eq!(v.status.len(), 10);
        assert!(v.status.values().all(|s| *s == ItemStatus::Pending));
        assert_eq!(v.meta.class_names, ["walk", "run", "sit"]);
    }

    #[test]
    fn hundred_item_session_starts_fully_pending() {
        let d = tempfile::tempdir().unwrap();
        let ds = crate::datasets::WindowedDataset::new(vec![0.0; 150 * 4], (0..150).map(|i| i % 2).collect(), 2, 1, 4).unwrap();
        let manifest = crate::datasets::DatasetManifest {
            name: "big".into(),
            num_classes: 2,
            channels: 1,
            window_length: 4,
            sample_rate_hz: 10.0,
            splits: BTreeMap::new(),
            class_names: None,
            channel_names: None,
            converter: None,
        };
        let mut reg = DatasetRegistry::new();
        reg.insert("big", crate::datasets::CanonicalDataset { manifest, splits: BTreeMap::from([("train".into(), ds)]) });
        let st = SessionStore::open(d.path(), reg).unwrap();
        let indices: Vec<usize> = (0..150).rev().filter(|i| i % 3 != 0).collect();
        let v = st.create(DatasetRef::new("big", "train"), indices.clone(), None, String::new()).unwrap();
        assert_eq!(v.meta.indices, indices);
        assert_eq!(v.status.len(), 100);
        assert!(v.status.values().all(|s| *s == ItemStatus::Pending));
        let p = st.progress(&v.meta.session_id).unwrap();
        assert_eq!((p.total, p.labeled, p.pending), (100, 0, 100));
    }

    #[test]
    fn create_rejects_bad_requests() {
        let d = tempfile::tempdir().unwrap();
        let st = store(d.path());
        assert!(matches!(st.create(train(), vec![], None, "".into()), Err(ServiceError::BadRequest(_))));
        assert!(matches!(st.create(train(), vec![1, 1], None, "".into()), Err(ServiceError::BadRequest(_))));
        assert!(matches!(st.create(train(), vec![999], None, "".into()), Err(ServiceError::BadRequest(_))));
        assert!(matches!(
            st.create(DatasetRef::new("nope", "train"), vec![0], None, "".into()),
            Err(ServiceError::UnknownDataset(_))
        ));
        assert!(matches!(
            st.create(train(), vec![0], Some(vec!["a".into()]), "".into()),
            Err(ServiceError::BadRequest(_))
        ));
        st.create(train(), vec![0, 1], None, "n".into()).unwrap();
        assert!(matches!(st.create(train(), vec![0, 1], None, "n".into()), Err(ServiceError::Conflict(_))));
        st.create(train(), vec![0, 1], None, "m".into()).unwrap();
    }

    #[test]
    fn batches_are_per_annotator_and_pending_first() {
        let d = tempfile::tempdir().unwrap();
        let st = store(d.path());
        let id = st.create(train(), vec![5, 3, 8, 1], None, "".into()).unwrap().meta.session_id;
        assert_eq!(st.next_batch(&id, "a", 10).unwrap().1, [5, 3, 8, 1]);
        // repeatable
        assert_eq!(st.next_batch(&id, "a", 2).unwrap().1, [5, 3]);
        st.submit(&id, "a", &[lab(5, 0), lab(3, 1)]).unwrap();
        assert_eq!(st.next_batch(&id, "a", 10).unwrap().1, [8, 1]);
        // b sees a's unlabeled items first
        assert_eq!(st.next_batch(&id, "b", 10).unwrap().1, [8, 1, 5, 3]);
        st.submit(&id, "a", &[lab(8, 0), lab(1, 2)]).unwrap();
        assert!(st.next_batch(&id, "a", 10).unwrap().1.is_empty());
    }

    #[test]
    fn submit_validates_before_writing() {
        let d = tempfile::tempdir().unwrap();
        let st = store(d.path());
        let id = st.create(train(), vec![0, 1], None, "".into()).unwrap().meta.session_id;
        assert!(matches!(st.submit(&id, "a", &[lab(0, 1), lab(1, 3)]), Err(ServiceError::BadRequest(_))));
        assert!(matches!(st.submit(&id, "a", &[lab(2, 1)]), Err(ServiceError::BadRequest(_))));
        assert!(matches!(st.submit(&id, " ", &[lab(0, 1)]), Err(ServiceError::BadRequest(_))));
        assert_eq!(st.progress(&id).unwrap().labeled, 0);
        assert!(matches!(st.submit("zzz", "a", &[]), Err(ServiceError::NotFound(_))));
    }

    #[test]
    fn resubmission_overwrites() {
        let d = tempfile::tempdir().unwrap();
        let st = store(d.path());
        let id = st.create(train(), vec![0], None, "".into()).unwrap().meta.session_id;
        st.submit(&id, "a", &[lab(0, 1)]).unwrap();
        st.submit(&id, "a", &[lab(0, 2)]).unwrap();
        let v = st.view(&id).unwrap();
        assert_eq!(v.votes[&0].len(), 1);
        assert_eq!(v.votes[&0]["a"], 2);
        assert_eq!(st.finalize(&id).unwrap().expert_set.corrected_labels, [2]);
    }

    #[test]
    fn finalize_requires_every_item() {
        let d = tempfile::tempdir().unwrap();
        let st = store(d.path());
        let id = st.create(train(), vec![0, 1, 2], None, "".into()).unwrap().meta.session_id;
        st.submit(&id, "a", &[lab(1, 0)]).unwrap();
        match st.finalize(&id) {
            Err(ServiceError::Unlabeled(m)) => assert_eq!(m, [0, 2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_annotator_labels_pass_through() {
        let d = tempfile::tempdir().unwrap();
        let st = store(d.path());
        let id = st.create(train(), vec![4, 2, 7], None, "".into()).unwrap().meta.session_id;
        st.submit(&id, "a", &[lab(4, 2), lab(2, 0), lab(7, 1)]).unwrap();
        let f = st.finalize(&id).unwrap();
        assert_eq!(f.expert_set.indices, [4, 2, 7]);
        assert_eq!(f.expert_set.corrected_labels, [2, 0, 1]);
        assert_eq!(f.expert_set.source, ExpertSource::LiveUi);
        assert_eq!(f.kappa, None);
        let on_disk: ExpertSet = serde_json::from_slice(&fs::read(&f.path).unwrap()).unwrap();
        assert_eq!(on_disk, f.expert_set);
        // closed afterwards
        assert!(matches!(st.submit(&id, "a", &[lab(4, 0)]), Err(ServiceError::Closed(_))));
        assert!(matches!(st.finalize(&id), Err(ServiceError::Closed(_))));
        assert!(matches!(st.next_batch(&id, "a", 1), Err(ServiceError::Closed(_))));
        assert!(st.progress(&id).unwrap().finalized);
    }

    #[test]
    fn unanimous_panel_has_kappa_one() {
        let d = tempfile::tempdir().unwrap();
        let st = store(d.path());
        let id = st.create(train(), vec![0, 1, 2], None, "".into()).unwrap().meta.session_id;
        for a in ["a", "b", "c"] {
            st.submit(&id, a, &[lab(0, 0), lab(1, 1), lab(2, 2)]).unwrap();
        }
        let f = st.finalize(&id).unwrap();
        assert_eq!(f.kappa, Some(1.0));
        assert_eq!(f.num_annotators, 3);
        assert_eq!(f.kappa_items, 3);
    }

    #[test]
    fn majority_with_smallest_tie_break() {
        let d = tempfile::tempdir().unwrap();
        let st = store(d.path());
        let id = st.create(train(), vec![0, 1], None, "".into()).unwrap().meta.session_id;
        st.submit(&id, "a", &[lab(0, 0), lab(1, 2)]).unwrap();
        st.submit(&id, "b", &[lab(0, 0), lab(1, 1)]).unwrap();
        st.submit(&id, "c", &[lab(0, 1)]).unwrap();
        let f = st.finalize(&id).unwrap();
        // votes (0,0,1) -> 0; votes (2,1) tie -> 1
        assert_eq!(f.expert_set.corrected_labels, [0, 1]);
        // item 1 lacks c's vote so only item 0 enters kappa
        assert_eq!(f.kappa_items, 1);
    }

    #[test]
    fn restart_replays_identical_state() {
        let d = tempfile::tempdir().unwrap();
        let (id, before, prog) = {
            let st = store(d.path());
            let id = st.create(train(), vec![0, 1, 2, 3], None, "x".into()).unwrap().meta.session_id;
            st.submit(&id, "a", &[lab(0, 1), lab(1, 1)]).unwrap();
            st.submit(&id, "b", &[lab(0, 2)]).unwrap();
            st.submit(&id, "a", &[lab(0, 0)]).unwrap();
            (id.clone(), st.view(&id).unwrap(), st.progress(&id).unwrap())
        };
        let st = store(d.path());
        assert_eq!(st.view(&id).unwrap(), before);
        assert_eq!(st.progress(&id).unwrap(), prog);
        // still conflicts after restart
        assert!(matches!(st.create(train(), vec![0, 1, 2, 3], None, "x".into()), Err(ServiceError::Conflict(_))));
        // and keeps accepting votes
        st.submit(&id, "a", &[lab(2, 1), lab(3, 1)]).unwrap();
        st.finalize(&id).unwrap();
        let again = store(d.path());
        assert!(again.view(&id).unwrap().meta.finalized_at.is_some());
    }

    #[test]
    fn torn_trailing_line_is_ignored() {
        let d = tempfile::tempdir().unwrap();
        let id = {
            let st = store(d.path());
            let id = st.create(train(), vec![0, 1], None, "".into()).unwrap().meta.session_id;
            st.submit(&id, "a", &[lab(0, 1)]).unwrap();
            id
        };
        let log = d.path().join("sessions").join(&id).join(VOTE_LOG);
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"{\"annotator\":\"a\",\"ind").unwrap();
        let st = store(d.path());
        assert_eq!(st.view(&id).unwrap().votes[&0]["a"], 1);
        assert_eq!(st.progress(&id).unwrap().labeled, 1);
        // appends after recovery must survive another restart
        st.submit(&id, "a", &[lab(1, 2)]).unwrap();
        drop(st);
        assert_eq!(store(d.path()).view(&id).unwrap().votes[&1]["a"], 2);
    }

    #[test]
    fn concurrent_annotators_lose_nothing() {
        let d = tempfile::tempdir().unwrap();
        let st = Arc::new(store(d.path()));
        let id = st.create(train(), (0..20).collect(), None, "".into()).unwrap().meta.session_id;
        let handles: Vec<_> = (0..8)
            .map(|a| {
                let st = Arc::clone(&st);
                let id = id.clone();
                std::thread::spawn(move || {
                    for i in 0..20 {
                        st.submit(&id, &format!("ann{a}"), &[lab(i, (i + a) % 3)]).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let v = st.view(&id).unwrap();
        assert!(v.votes.values().all(|m| m.len() == 8));
        drop(st);
        assert_eq!(store(d.path()).view(&id).unwrap(), v);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn finalization_ignores_arrival_order(
            votes in proptest::collection::vec((0usize..4, 0usize..6, 0usize..3), 1..40),
            perm_seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            // keep one vote per (annotator, index) so order cannot matter by contract
            let mut uniq: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            for (a, i, l) in votes {
                uniq.insert((a, i), l);
            }
            // every index needs a vote
            for i in 0..6 {
                uniq.entry((9, i)).or_insert(i % 3);
            }
            let mut recs: Vec<_> = uniq.into_iter().collect();
            let mut out = Vec::new();
            for round in 0..2 {
                if round == 1 {
                    recs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
                }
                let d = tempfile::tempdir().unwrap();
                let st = store(d.path());
                let id = st.create(train(), (0..6).collect(), None, "".into()).unwrap().meta.session_id;
                for ((a, i), l) in &recs {
                    st.submit(&id, &format!("a{a}"), &[lab(*i, *l)]).unwrap();
                }
                let f = st.finalize(&id).unwrap();
                out.push((f.expert_set, f.kappa));
            }
            prop_assert_eq!(&out[0], &out[1]);
        }
    }
}
