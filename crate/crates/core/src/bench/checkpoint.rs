//! Checkpoint files: a text header followed by a little-endian f32 blob.
//!
//! ```text
//! spac-checkpoint
//! version = 1
//! [config]
//! key = value ...
//! [state]
//! global_step = 1200
//! rng.noise = <seed hex> <stream> <word pos>
//! opt.critic = <lr> <beta1> <beta2> <eps> <step>
//! ...
//! [tensors]
//! planner/enc1.w 16,2,3,3 0
//! ...
//! [end]
//! checksum = <crc32 of everything before this line, then the blob>
//! <blob>
//! ```
//!
//! The replay pool is stored with its observation images deduplicated into
//! one `images` table that transitions index into.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, Optimizers, Plan, RegContext, ReplayPool};
use crate::env::{State, Transition};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::substrate::{AdamState, ParameterSet, Tensor};
use crate::warp::DisplacementField;

use super::config::RunConfig;

pub const MAGIC: &str = "spac-checkpoint";
pub const VERSION: u32 = 1;

/// Position inside the current training episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeCursor {
    /// Index into the training pairs.
    pub pair: usize,
    pub t: usize,
    pub omega: DisplacementField,
    /// Observation the next rollout step starts from.
    pub state: State,
}

/// Everything needed to continue a run.
pub struct Checkpoint {
    pub config: RunConfig,
    pub global_step: u64,
    pub episode: Option<EpisodeCursor>,
    pub data_rng: ChaCha8Rng,
    pub agent: Agent,
}

impl std::fmt::Debug for Checkpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Checkpoint")
            .field("run_id", &self.config.run_id)
            .field("global_step", &self.global_step)
            .field("episode", &self.episode.as_ref().map(|e| (e.pair, e.t)))
            .field("updates", &self.agent.updates)
            .finish_non_exhaustive()
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn rng_line(rng: &ChaCha8Rng) -> String {
    let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    format!("{seed} {} {}", rng.get_stream(), rng.get_word_pos())
}

fn parse_rng(key: &str, v: &str) -> Result<ChaCha8Rng> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    let err = || bad(format!("`{key}`: malformed rng state `{v}`"));
    if parts.len() != 3 || parts[0].len() != 64 {
        return Err(err());
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&parts[0][2 * i..2 * i + 2], 16).map_err(|_| err())?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(parts[1].parse().map_err(|_| err())?);
    rng.set_word_pos(parts[2].parse().map_err(|_| err())?);
    Ok(rng)
}

fn optimizer_params<'a>(agent: &'a Agent, name: &str) -> &'a ParameterSet<f32> {
    match name {
        "critic" => &agent.critic,
        "planner_rl" | "reg_planner" => &agent.planner,
        "reg_actor" => &agent.actor,
        "alpha" => &agent.log_alpha,
        _ => unreachable!("unknown optimizer {name}"),
    }
}

fn optimizer_mut<'a>(opt: &'a mut Optimizers, name: &str) -> &'a mut AdamState {
    match name {
        "critic" => &mut opt.critic,
        "planner_rl" => &mut opt.planner_rl,
        "reg_planner" => &mut opt.reg_planner,
        "reg_actor" => &mut opt.reg_actor,
        "alpha" => &mut opt.alpha,
        _ => unreachable!("unknown optimizer {name}"),
    }
}

fn net_sets(agent: &Agent) -> [(&'static str, &ParameterSet<f32>); 5] {
    [
        ("planner", &agent.planner),
        ("actor", &agent.actor),
        ("critic", &agent.critic),
        ("target", &agent.target),
        ("log_alpha", &agent.log_alpha),
    ]
}

/// Collects tensors in write order, interning images by content so the
/// encoding does not depend on which allocations happen to be shared.
#[derive(Default)]
struct Blob<'a> {
    entries: Vec<(String, Vec<usize>, std::borrow::Cow<'a, [f32]>)>,
    images: Vec<&'a Image>,
    seen: HashMap<Vec<u32>, usize>,
}

impl<'a> Blob<'a> {
    fn push(&mut self, name: String, shape: &[usize], data: impl Into<std::borrow::Cow<'a, [f32]>>) {
        self.entries.push((name, shape.to_vec(), data.into()));
    }

    fn intern(&mut self, img: &'a Arc<Image>) -> f32 {
        let n = self.images.len();
        let key = img.data().iter().map(|v| v.to_bits()).collect();
        let id = *self.seen.entry(key).or_insert(n);
        if id == n {
            self.images.push(img);
        }
        id as f32
    }

    fn intern_state(&mut self, s: &'a State) -> [f32; 2] {
        [self.intern(&s.fixed), self.intern(&s.moving)]
    }
}

fn field_shape(f: &DisplacementField) -> [usize; 3] {
    [2, f.height(), f.width()]
}

/// Serializes a checkpoint to bytes.
pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let agent = &ck.agent;
    let (h, w) = (agent.shape.height, agent.shape.width);
    let mut blob = Blob::default();

    for (prefix, set) in net_sets(agent) {
        for (name, t) in set.iter() {
            blob.push(format!("{prefix}/{name}"), t.shape(), t.data());
        }
    }
    for (oname, state) in Optimizers::NAMES.iter().zip(agent.opt.all()) {
        let params = optimizer_params(agent, oname);
        let (m, v) = state.moments();
        for (kind, moments) in [("m", m), ("v", v)] {
            for ((pname, t), data) in params.iter().zip(moments) {
                blob.push(format!("opt/{oname}/{kind}/{pname}"), t.shape(), data.as_slice());
            }
        }
    }
    if let Some(ep) = &ck.episode {
        blob.push("episode/omega".into(), &field_shape(&ep.omega), ep.omega.tensor().data());
        let ids = blob.intern_state(&ep.state);
        blob.push("episode/state".into(), &[2], ids.to_vec());
    }
    if let Some(rc) = &agent.reg_context {
        blob.push("reg/omega_prev".into(), &field_shape(&rc.omega_prev), rc.omega_prev.tensor().data());
        let ids = blob.intern_state(&rc.state);
        blob.push("reg/state".into(), &[2], ids.to_vec());
    }

    let pool = &agent.pool;
    let len = pool.len();
    let d = agent.config.plan_dim;
    let mut ids = Vec::with_capacity(4 * len);
    let (mut plan, mut pre, mut action, mut reward, mut done) = (
        Vec::with_capacity(len * d),
        Vec::with_capacity(len * d),
        Vec::with_capacity(len * 2 * h * w),
        Vec::with_capacity(len),
        Vec::with_capacity(len),
    );
    for tr in pool.iter() {
        ids.extend(blob.intern_state(&tr.state));
        ids.extend(blob.intern_state(&tr.next_state));
        if tr.plan.len() != d || tr.action.dims() != (h, w) {
            return Err(bad("replay transition does not match the network shape"));
        }
        plan.extend_from_slice(&tr.plan.values);
        pre.extend_from_slice(&tr.plan.pre);
        action.extend_from_slice(tr.action.tensor().data());
        reward.push(tr.reward);
        done.push(if tr.done { 1.0 } else { 0.0 });
    }
    blob.push("pool/states".into(), &[len, 4], ids);
    blob.push("pool/plan".into(), &[len, d], plan);
    blob.push("pool/pre".into(), &[len, d], pre);
    blob.push("pool/action".into(), &[len, 2, h, w], action);
    blob.push("pool/reward".into(), &[len], reward);
    blob.push("pool/done".into(), &[len], done);

    let mut images = Vec::with_capacity(blob.images.len() * h * w);
    for img in &blob.images {
        if img.dims() != (h, w) {
            return Err(bad(format!("stored image is {:?}, network expects {:?}", img.dims(), (h, w))));
        }
        images.extend_from_slice(img.data());
    }
    let n_images = blob.images.len();
    blob.push("images".into(), &[n_images, h, w], images);

    let mut head = String::new();
    let _ = writeln!(head, "{MAGIC}\nversion = {VERSION}\n[config]");
    head.push_str(&ck.config.to_text());
    let _ = writeln!(head, "[state]");
    let _ = writeln!(head, "global_step = {}", ck.global_step);
    let _ = writeln!(head, "updates = {}", agent.updates);
    match &ck.episode {
        Some(ep) => {
            let _ = writeln!(head, "episode = {} {}", ep.pair, ep.t);
        }
        None => head.push_str("episode = none\n"),
    }
    let _ = writeln!(head, "reg_context = {}", agent.reg_context.is_some());
    let _ = writeln!(head, "rng.noise = {}", rng_line(&agent.noise_rng));
    let _ = writeln!(head, "rng.pool = {}", rng_line(pool.rng()));
    let _ = writeln!(head, "rng.data = {}", rng_line(&ck.data_rng));
    let _ = writeln!(head, "pool.capacity = {}", pool.capacity());
    let _ = writeln!(head, "pool.len = {len}");
    let _ = writeln!(head, "pool.inserted = {}", pool.inserted());
    let _ = writeln!(head, "images = {n_images}");
    for (oname, st) in Optimizers::NAMES.iter().zip(agent.opt.all()) {
        let _ = writeln!(
            head,
            "opt.{oname} = {} {} {} {} {}",
            st.lr,
            st.beta1,
            st.beta2,
            st.eps,
            st.step_count()
        );
    }
    head.push_str("[tensors]\n");
    let mut offset = 0usize;
    for (name, shape, data) in &blob.entries {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        let _ = writeln!(head, "{name} {} {offset}", dims.join(","));
        offset += data.len() * 4;
    }
    head.push_str("[end]\n");

    let mut body = Vec::with_capacity(offset);
    for (_, _, data) in &blob.entries {
        for v in data.iter() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(head.as_bytes());
    hasher.update(&body);
    let _ = writeln!(head, "checksum = {:08x}", hasher.finalize());

    let mut out = head.into_bytes();
    out.extend_from_slice(&body);
    Ok(out)
}

/// Writes atomically via a temporary sibling file.
pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ck)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Header sections of a checkpoint file.
pub struct Header {
    pub version: u32,
    pub config_text: String,
    pub state: Vec<(String, String)>,
    pub tensors: Vec<TensorEntry>,
    /// Byte length of the header including the checksum line.
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Header {
    pub fn state_value(&self, key: &str) -> Result<&str> {
        self.state
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| bad(format!("state section lacks `{key}`")))
    }

    fn state_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.state_value(key)?;
        v.parse().map_err(|_| bad(format!("`{key}`: cannot parse `{v}`")))
    }
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad(format!("header truncated at byte {}", *pos)))?;
    let line = std::str::from_utf8(&rest[..end]).map_err(|_| bad(format!("header is not UTF-8 near byte {}", *pos)))?;
    *pos += end + 1;
    Ok(line)
}

/// Parses and integrity-checks the header; the blob is not interpreted.
pub fn read_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let magic = next_line(bytes, &mut pos)?;
    if magic != MAGIC {
        return Err(bad(format!("not a checkpoint: first line is `{magic}`, expected `{MAGIC}`")));
    }
    let vline = next_line(bytes, &mut pos)?;
    let version: u32 = vline
        .strip_prefix("version = ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(format!("malformed version line `{vline}`")))?;
    if version != VERSION {
        return Err(bad(format!("schema version {version} in file, this build reads version {VERSION}")));
    }

    let mut section = String::new();
    let mut config_text = String::new();
    let mut state = Vec::new();
    let mut tensors = Vec::new();
    loop {
        let line = next_line(bytes, &mut pos)?;
        if line.starts_with('[') {
            if line == "[end]" {
                break;
            }
            section = line.to_owned();
            continue;
        }
        match section.as_str() {
            "[config]" => {
                config_text.push_str(line);
                config_text.push('\n');
            }
            "[state]" => {
                let (k, v) = line
                    .split_once(" = ")
                    .ok_or_else(|| bad(format!("malformed state line `{line}`")))?;
                state.push((k.to_owned(), v.to_owned()));
            }
            "[tensors]" => {
                let parts: Vec<&str> = line.split(' ').collect();
                let err = || bad(format!("malformed tensor entry `{line}`"));
                if parts.len() != 3 {
                    return Err(err());
                }
                let shape = parts[1]
                    .split(',')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| err())?;
                let offset = parts[2].parse().map_err(|_| err())?;
                tensors.push(TensorEntry {
                    name: parts[0].to_owned(),
                    shape,
                    offset,
                });
            }
            _ => return Err(bad(format!("line `{line}` outside any section"))),
        }
    }
    let hashed_end = pos;
    let cline = next_line(bytes, &mut pos)?;
    let stored = cline
        .strip_prefix("checksum = ")
        .and_then(|v| u32::from_str_radix(v, 16).ok())
        .ok_or_else(|| bad(format!("malformed checksum line `{cline}`")))?;
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&bytes[..hashed_end]);
    hasher.update(&bytes[pos..]);
    let actual = hasher.finalize();
    if actual != stored {
        return Err(bad(format!("checksum mismatch: header says {stored:08x}, contents hash to {actual:08x}")));
    }
    Ok(Header {
        version,
        config_text,
        state,
        tensors,
        len: pos,
    })
}

struct Reader<'a> {
    blob: &'a [u8],
    dir: HashMap<&'a str, &'a TensorEntry>,
    /// Shape disagreements, collected so every one is reported at once.
    diffs: Vec<String>,
    used: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, name: &str, expected: &[usize]) -> Option<Vec<f32>> {
        let Some(e) = self.dir.get(name) else {
            self.diffs.push(format!("missing tensor `{name}` (expected shape {expected:?})"));
            return None;
        };
        self.used += 1;
        if e.shape != expected {
            self.diffs
                .push(format!("tensor `{name}`: file has shape {:?}, expected {expected:?}", e.shape));
            return None;
        }
        let n: usize = expected.iter().product();
        let end = e.offset + 4 * n;
        if end > self.blob.len() {
            self.diffs.push(format!(
                "tensor `{name}` spans bytes {}..{end} of a {}-byte blob",
                e.offset,
                self.blob.len()
            ));
            return None;
        }
        Some(
            self.blob[e.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        )
    }

    fn fill(&mut self, prefix: &str, set: &mut ParameterSet<f32>) {
        for (name, t) in set.iter_mut() {
            let shape = t.shape().to_vec();
            if let Some(data) = self.take(&format!("{prefix}/{name}"), &shape) {
                t.data_mut().copy_from_slice(&data);
            }
        }
    }

    fn moments(&mut self, prefix: &str, set: &ParameterSet<f32>) -> Vec<Vec<f32>> {
        set.iter()
            .map(|(name, t)| {
                self.take(&format!("{prefix}/{name}"), t.shape())
                    .unwrap_or_else(|| vec![0.0; t.len()])
            })
            .collect()
    }
}

fn to_index(v: f32, n: usize, what: &str) -> Result<usize> {
    let i = v as usize;
    if v < 0.0 || v.fract() != 0.0 || i >= n {
        return Err(bad(format!("{what}: image index {v} outside table of {n}")));
    }
    Ok(i)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let header = read_header(bytes)?;
    let config = RunConfig::parse_text(&header.config_text).map_err(|e| bad(format!("config section: {e}")))?;
    let (h, w) = (config.data.image_size, config.data.image_size);
    let train = config.resolved_train(w)?;
    let mut agent = Agent::new(train, h, w)?;
    let d = agent.config.plan_dim;

    let len: usize = header.state_parse("pool.len")?;
    let n_images: usize = header.state_parse("images")?;
    let capacity: usize = header.state_parse("pool.capacity")?;
    if capacity != agent.config.pool_capacity {
        return Err(bad(format!(
            "pool capacity {capacity} in state, config says {}",
            agent.config.pool_capacity
        )));
    }

    let mut r = Reader {
        blob: &bytes[header.len..],
        dir: header.tensors.iter().map(|e| (e.name.as_str(), e)).collect(),
        diffs: Vec::new(),
        used: 0,
    };
    r.fill("planner", &mut agent.planner);
    r.fill("actor", &mut agent.actor);
    r.fill("critic", &mut agent.critic);
    r.fill("target", &mut agent.target);
    r.fill("log_alpha", &mut agent.log_alpha);

    let mut restored = Vec::new();
    for oname in Optimizers::NAMES {
        let params = optimizer_params(&agent, oname).clone();
        let first = r.moments(&format!("opt/{oname}/m"), &params);
        let second = r.moments(&format!("opt/{oname}/v"), &params);
        let line = header.state_value(&format!("opt.{oname}"))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        let err = || bad(format!("`opt.{oname}`: malformed `{line}`"));
        if f.len() != 5 {
            return Err(err());
        }
        let mut hyper = [0f32; 4];
        for (slot, s) in hyper.iter_mut().zip(&f) {
            *slot = s.parse().map_err(|_| err())?;
        }
        let step: u64 = f[4].parse().map_err(|_| err())?;
        restored.push((oname, AdamState::from_parts(&params, hyper, step, first, second)?));
    }
    for (oname, st) in restored {
        *optimizer_mut(&mut agent.opt, oname) = st;
    }

    let images = r.take("images", &[n_images, h, w]);
    let table: Vec<Arc<Image>> = match images {
        Some(data) => data
            .chunks_exact(h * w)
            .map(|c| Image::new(h, w, c.to_vec()).map(Arc::new))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let state_from = |ids: &[f32], what: &str| -> Result<State> {
        Ok(State {
            fixed: Arc::clone(&table[to_index(ids[0], table.len(), what)?]),
            moving: Arc::clone(&table[to_index(ids[1], table.len(), what)?]),
        })
    };
    let field = |data: Vec<f32>| DisplacementField::from_tensor(Tensor::new(&[2, h, w], data)?);

    let episode = match header.state_value("episode")? {
        "none" => None,
        v => {
            let (p, t) = v
                .split_once(' ')
                .and_then(|(p, t)| Some((p.parse().ok()?, t.parse().ok()?)))
                .ok_or_else(|| bad(format!("malformed episode `{v}`")))?;
            let omega = r.take("episode/omega", &[2, h, w]);
            let ids = r.take("episode/state", &[2]);
            match (omega, ids) {
                (Some(o), Some(ids)) => Some(EpisodeCursor {
                    pair: p,
                    t,
                    omega: field(o)?,
                    state: state_from(&ids, "episode state")?,
                }),
                _ => None,
            }
        }
    };
    let has_reg: bool = header.state_parse("reg_context")?;
    if has_reg {
        let omega = r.take("reg/omega_prev", &[2, h, w]);
        let ids = r.take("reg/state", &[2]);
        if let (Some(o), Some(ids)) = (omega, ids) {
            agent.reg_context = Some(RegContext {
                state: state_from(&ids, "registration state")?,
                omega_prev: field(o)?,
            });
        }
    }

    let states = r.take("pool/states", &[len, 4]);
    let plan = r.take("pool/plan", &[len, d]);
    let pre = r.take("pool/pre", &[len, d]);
    let action = r.take("pool/action", &[len, 2, h, w]);
    let reward = r.take("pool/reward", &[len]);
    let done = r.take("pool/done", &[len]);

    if r.used != header.tensors.len() {
        let known: Vec<&str> = header.tensors.iter().map(|e| e.name.as_str()).collect();
        let mut expected = std::collections::HashSet::new();
        for (prefix, set) in net_sets(&agent) {
            for (name, _) in set.iter() {
                expected.insert(format!("{prefix}/{name}"));
            }
        }
        for name in known {
            let generic = ["opt/", "episode/", "reg/", "pool/", "images"];
            if !expected.contains(name) && !generic.iter().any(|g| name.starts_with(g)) {
                r.diffs.push(format!("unexpected tensor `{name}`"));
            }
        }
        if r.diffs.is_empty() {
            r.diffs.push(format!(
                "file lists {} tensors, {} were expected",
                header.tensors.len(),
                r.used
            ));
        }
    }
    if !r.diffs.is_empty() {
        return Err(bad(format!("refusing to load:\n  {}", r.diffs.join("\n  "))));
    }
    let (states, plan, pre, action, reward, done) = (
        states.unwrap_or_default(),
        plan.unwrap_or_default(),
        pre.unwrap_or_default(),
        action.unwrap_or_default(),
        reward.unwrap_or_default(),
        done.unwrap_or_default(),
    );

    let mut items = Vec::with_capacity(len);
    for i in 0..len {
        let ids = &states[4 * i..4 * i + 4];
        items.push(Transition {
            state: state_from(&ids[..2], "pool state")?,
            plan: Plan {
                values: plan[i * d..(i + 1) * d].to_vec(),
                pre: pre[i * d..(i + 1) * d].to_vec(),
            },
            action: field(action[i * 2 * h * w..(i + 1) * 2 * h * w].to_vec())?,
            reward: reward[i],
            next_state: state_from(&ids[2..], "pool next state")?,
            done: done[i] != 0.0,
        });
    }
    agent.pool = ReplayPool::restore(
        capacity,
        parse_rng("rng.pool", header.state_value("rng.pool")?)?,
        items,
        header.state_parse("pool.inserted")?,
    )?;
    agent.noise_rng = parse_rng("rng.noise", header.state_value("rng.noise")?)?;
    agent.updates = header.state_parse("updates")?;

    Ok(Checkpoint {
        config,
        global_step: header.state_parse("global_step")?,
        episode,
        data_rng: parse_rng("rng.data", header.state_value("rng.data")?)?,
        agent,
    })
}

/// Human-readable summary of a checkpoint file.
pub fn describe(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let header = read_header(&bytes)?;
    let mut out = String::new();
    let _ = writeln!(out, "{}: version {}, {} bytes", path.display(), header.version, bytes.len());
    for (k, v) in &header.state {
        if !k.starts_with("rng.") {
            let _ = writeln!(out, "  {k} = {v}");
        }
    }
    let _ = writeln!(out, "  tensors: {}", header.tensors.len());
    for e in header.tensors.iter().filter(|e| !e.name.starts_with("opt/")) {
        let _ = writeln!(out, "    {} {:?}", e.name, e.shape);
    }
    Ok(out)
}
