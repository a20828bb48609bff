use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use hred_core::analysis::io::{parse_centroids, parse_points, read_context_map, CENTROIDS_FILE, POINTS_FILE};
use hred_core::analysis::{Centroid, ContextMap};
use hred_core::corpus::encode_text;
use hred_core::embeddings::BOS;
use hred_core::models::{Architecture, ContextState};
use hred_core::recurrent::DecodeMode;
use hred_core::Model;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

pub const DEFAULT_TTL: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Idle time after which a session is dropped.
    pub session_ttl: Duration,
    /// Directory for per-session transcripts, one JSON line per exchange.
    pub transcript_dir: Option<PathBuf>,
    pub decode_mode: DecodeMode,
    pub max_reply_len: Option<usize>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            session_ttl: DEFAULT_TTL,
            transcript_dir: None,
            decode_mode: DecodeMode::Greedy,
            max_reply_len: None,
        }
    }
}

/// Analysis artifacts: the raw files and the map parsed from them.
#[derive(Debug)]
pub struct Analysis {
    pub points_tsv: String,
    pub centroids_tsv: String,
    pub map: ContextMap,
    pub centroids: Vec<Centroid>,
}

impl Analysis {
    pub fn load(dir: &Path) -> hred_core::Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| hred_core::Error::io(p, e))
        };
        let points_tsv = read(POINTS_FILE)?;
        let centroids_tsv = read(CENTROIDS_FILE)?;
        parse_points(&points_tsv)?;
        let centroids = parse_centroids(&centroids_tsv)?;
        let map = read_context_map(dir)?;
        Ok(Self {
            points_tsv,
            centroids_tsv,
            map,
            centroids,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Exchange {
    pub turn_index: usize,
    pub user: String,
    pub reply: String,
    pub user_point: Option<[f64; 2]>,
    pub reply_point: Option<[f64; 2]>,
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub model_id: String,
    pub created_at: u64,
    pub exchanges: Vec<Exchange>,
    /// Every sentence of the conversation so far, user and bot, as token ids.
    pub sentences: Vec<Vec<usize>>,
    pub context: Option<ContextState<f64>>,
    pub trajectory: Vec<[f64; 2]>,
    last_seen: Instant,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MessageReply {
    pub reply: String,
    pub context_point: Option<[f64; 2]>,
    pub distances: BTreeMap<String, f64>,
    pub turn_index: usize,
}

pub struct AppState {
    pub models: BTreeMap<String, Arc<Model>>,
    pub analysis: Option<Analysis>,
    pub config: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl AppState {
    pub fn new(models: BTreeMap<String, Model>, analysis: Option<Analysis>, config: ServiceConfig) -> Self {
        Self {
            models: models.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
            analysis,
            config,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    /// The map usable with `model`, if the analysis matches its context size.
    pub fn map_for(&self, model: &Model) -> Option<&ContextMap> {
        let a = self.analysis.as_ref()?;
        (model.arch() == Architecture::Hred && a.map.reference.vectors.cols() == model.config.hidden_dim)
            .then_some(&a.map)
    }

    fn purge_expired(&self, sessions: &mut HashMap<String, Arc<tokio::sync::Mutex<Session>>>) {
        let ttl = self.config.session_ttl;
        sessions.retain(|_, s| match s.try_lock() {
            Ok(s) => s.last_seen.elapsed() < ttl,
            Err(_) => true,
        });
    }

    pub fn create_session(&self, model_id: &str) -> Result<String, ApiError> {
        let model = self
            .models
            .get(model_id)
            .ok_or_else(|| ApiError::not_found("model", model_id))?;
        let context = match model.arch() {
            Architecture::Hred => Some(model.new_context()?),
            Architecture::EncDec => None,
        };
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session {
            id: id.clone(),
            model_id: model_id.to_string(),
            created_at: unix_now(),
            exchanges: Vec::new(),
            sentences: Vec::new(),
            context,
            trajectory: Vec::new(),
            last_seen: Instant::now(),
        };
        let mut sessions = self.sessions.lock().expect("session table poisoned");
        self.purge_expired(&mut sessions);
        sessions.insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
        Ok(id)
    }

    pub fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        let mut sessions = self.sessions.lock().expect("session table poisoned");
        self.purge_expired(&mut sessions);
        sessions.get(id).cloned().ok_or_else(|| ApiError::not_found("session", id))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session table poisoned").len()
    }

    /// One user turn: observe, reply, observe the reply (HRED), record.
    pub fn post_message(&self, session: &mut Session, text: &str) -> Result<MessageReply, ApiError> {
        if text.trim().is_empty() {
            return Err(ApiError::invalid("message text is empty"));
        }
        session.last_seen = Instant::now();
        let model = self
            .models
            .get(&session.model_id)
            .ok_or_else(|| ApiError::not_found("model", &session.model_id))?
            .clone();
        let user_ids = encode_text(text, &model.vocab);
        let turn_index = session.exchanges.len();
        let seed = turn_index as u64;
        let max_len = self.config.max_reply_len;
        let map = self.map_for(&model);
        let project = |ctx: &ContextState<f64>| -> Result<Option<[f64; 2]>, ApiError> {
            match map {
                Some(m) => Ok(Some(m.project(ctx.vector())?)),
                None => Ok(None),
            }
        };

        let (reply_ids, user_point, reply_point, next_context) = match &session.context {
            Some(ctx) => {
                let after_user = model.hred_observe(&user_ids, ctx)?;
                let user_point = project(&after_user)?;
                let reply = model.hred_respond(&after_user, self.config.decode_mode, max_len, seed)?;
                let mut framed = vec![BOS];
                framed.extend_from_slice(&reply);
                let after_reply = model.hred_observe(&framed, &after_user)?;
                let reply_point = project(&after_reply)?;
                (reply, user_point, reply_point, Some(after_reply))
            }
            None => {
                let reply = model.encdec_forward(&user_ids, self.config.decode_mode, max_len, seed)?;
                (reply, None, None, None)
            }
        };

        let reply_text = model.vocab.decode(&reply_ids).join(" ");
        let distances = match (map, user_point) {
            (Some(m), Some(p)) => m.topics().into_iter().zip(m.point_distances(p)).collect(),
            _ => BTreeMap::new(),
        };
        let mut framed_reply = vec![BOS];
        framed_reply.extend_from_slice(&reply_ids);
        session.sentences.push(user_ids);
        session.sentences.push(framed_reply);
        if next_context.is_some() {
            session.context = next_context;
        }
        session.trajectory.extend(user_point);
        session.trajectory.extend(reply_point);
        let exchange = Exchange {
            turn_index,
            user: text.to_string(),
            reply: reply_text.clone(),
            user_point,
            reply_point,
        };
        self.append_transcript(&session.id, &exchange);
        session.exchanges.push(exchange);
        Ok(MessageReply {
            reply: reply_text,
            context_point: user_point,
            distances,
            turn_index,
        })
    }

    fn append_transcript(&self, session: &str, exchange: &Exchange) {
        let Some(dir) = &self.config.transcript_dir else {
            return;
        };
        let path = dir.join(format!("{session}.jsonl"));
        let result = std::fs::create_dir_all(dir).and_then(|_| {
            let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
            let line = serde_json::to_string(exchange).map_err(std::io::Error::other)?;
            writeln!(f, "{line}")
        });
        if let Err(e) = result {
            log::warn!("could not write transcript {}: {e}", path.display());
        }
    }
}
