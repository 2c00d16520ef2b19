//! A deterministic, single-threaded network of parties running sessions
//! over a FIFO bus, with the transcript log.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{fresh_nonce, keyed_digest, KeyOrigin, Suite, SymmetricKey};
use crate::kas::{kas_setup, KasError, KasPublicInfo, KasTrustedCenter, UserCredential};
use crate::policy::AuthenticationPolicy;
use crate::poset::{LabelId, Poset};
use crate::timerelease::{
    build_time_release, MintError, RedeemingClaimant, RedemptionVerifier, Tikc, TimeReleaseError, TimeReleaseSystem,
    Token,
};

use super::claimant::Claimant;
use super::message::{ProtocolId, ProtocolMessage, Role};
use super::session::{Endpoint, Env, PartyKeys, PartyLedger, SessionSpec, SessionState, Verdict};
use super::ttp::TrustedThirdParty;
use super::verifier::Verifier;

/// Identity of the trusted third party.
pub const TTP_ID: &str = "ttp";

/// Upper bound on deliveries in one flush; guards against message loops.
const MAX_DELIVERIES: usize = 100_000;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("unknown party `{0}`")]
    UnknownParty(String),
    #[error("session `{0}` already exists")]
    DuplicateSession(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("{0} sessions run through token redemption")]
    RedemptionOnly(ProtocolId),
    #[error("no time-release system is configured")]
    NoTimeRelease,
    #[error("credential for `{user}`: {source}")]
    Credential { user: String, source: KasError },
    #[error(transparent)]
    TimeRelease(#[from] TimeReleaseError),
    #[error(transparent)]
    Mint(#[from] MintError),
}

/// Key material of the deployment.
#[derive(Clone, Debug)]
pub enum Keyring {
    Plain { tc: KasTrustedCenter, public: KasPublicInfo },
    Temporal(Box<TimeReleaseSystem>),
}

impl Keyring {
    pub fn poset(&self) -> &Arc<Poset> {
        match self {
            Keyring::Plain { tc, .. } => tc.poset(),
            Keyring::Temporal(sys) => sys.poset(),
        }
    }

    /// Public information as currently published.
    pub fn public(&self) -> &KasPublicInfo {
        match self {
            Keyring::Plain { public, .. } => public,
            Keyring::Temporal(sys) => sys.released(),
        }
    }

    pub fn trusted_center(&self) -> &KasTrustedCenter {
        match self {
            Keyring::Plain { tc, .. } => tc,
            Keyring::Temporal(sys) => sys.trusted_center(),
        }
    }

    fn trusted_center_mut(&mut self) -> &mut KasTrustedCenter {
        match self {
            Keyring::Plain { tc, .. } => tc,
            Keyring::Temporal(sys) => sys.trusted_center_mut(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Party {
    pub id: String,
    pub credential: Option<UserCredential>,
    pub ledger: PartyLedger,
    /// Offset of this party's clock from the global tick.
    pub skew: i64,
}

/// Bytes in flight, addressed to one role of one session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub session: String,
    pub from: Role,
    pub to: Role,
    pub bytes: Vec<u8>,
}

struct Session {
    protocol: ProtocolId,
    endpoints: BTreeMap<Role, Box<dyn Endpoint>>,
    seats: BTreeMap<Role, String>,
    rngs: BTreeMap<Role, ChaCha20Rng>,
    finished: bool,
}

impl Clone for Session {
    fn clone(&self) -> Self {
        Session {
            protocol: self.protocol,
            endpoints: self.endpoints.iter().map(|(&r, e)| (r, e.clone_box())).collect(),
            seats: self.seats.clone(),
            rngs: self.rngs.clone(),
            finished: self.finished,
        }
    }
}

impl Session {
    fn verdicts(&self) -> String {
        self.endpoints
            .iter()
            .map(|(role, e)| format!("{role}={}", e.state().verdict))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// One delivered message as logged.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageRecord {
    pub tick: u64,
    pub session: String,
    pub protocol: ProtocolId,
    pub from: Role,
    pub to: Role,
    pub index: Option<u8>,
    pub bytes: Vec<u8>,
    pub summary: String,
    pub verdicts: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LogEvent {
    Message(MessageRecord),
    Note { tick: u64, text: String },
}

/// Final per-role state of a finished session.
#[derive(Clone, Debug)]
pub struct SessionOutcome {
    pub protocol: ProtocolId,
    pub parties: BTreeMap<Role, String>,
    pub states: BTreeMap<Role, SessionState>,
}

impl SessionOutcome {
    pub fn verdict(&self, role: Role) -> Option<Verdict> {
        self.states.get(&role).map(|s| s.verdict)
    }

    pub fn state(&self, role: Role) -> Option<&SessionState> {
        self.states.get(&role)
    }
}

/// Append-only record of deliveries, notes and session outcomes.
#[derive(Clone, Debug, Default)]
pub struct Transcript {
    pub events: Vec<LogEvent>,
    pub outcomes: BTreeMap<String, SessionOutcome>,
}

impl Transcript {
    pub fn messages(&self) -> impl Iterator<Item = &MessageRecord> {
        self.events.iter().filter_map(|e| match e {
            LogEvent::Message(m) => Some(m),
            LogEvent::Note { .. } => None,
        })
    }

    pub fn session_messages<'a>(&'a self, session: &'a str) -> impl Iterator<Item = &'a MessageRecord> + 'a {
        self.messages().filter(move |m| m.session == session)
    }

    pub fn outcome(&self, session: &str) -> Option<&SessionOutcome> {
        self.outcomes.get(session)
    }

    pub fn verdict(&self, session: &str, role: Role) -> Option<Verdict> {
        self.outcome(session)?.verdict(role)
    }

    /// Outcome of the only (or first) session.
    pub fn single(&self) -> &SessionOutcome {
        self.outcomes.values().next().expect("transcript holds a finished session")
    }

    /// Copy restricted to one session; notes are kept only if they name it.
    pub fn for_session(&self, session: &str) -> Transcript {
        self.for_session_since(session, 0)
    }

    /// As [`Transcript::for_session`], looking only at events from `start`.
    pub fn for_session_since(&self, session: &str, start: usize) -> Transcript {
        let tag = format!("{session}/");
        let events = self.events[start.min(self.events.len())..]
            .iter()
            .filter(|e| match e {
                LogEvent::Message(m) => m.session == session,
                LogEvent::Note { text, .. } => text.contains(&tag),
            })
            .cloned()
            .collect();
        let outcomes = self.outcomes.iter().filter(|(k, _)| *k == session).map(|(k, v)| (k.clone(), v.clone())).collect();
        Transcript { events, outcomes }
    }

    /// `tick | proto | idx | from → to | summary | verdicts`, one line per event.
    pub fn lines(&self) -> Vec<String> {
        self.events
            .iter()
            .map(|e| match e {
                LogEvent::Message(m) => format!(
                    "{} | {}/{} | {} | {} → {} | {} | {}",
                    m.tick,
                    m.session,
                    m.protocol,
                    m.index.map_or("?".to_string(), |i| i.to_string()),
                    m.from,
                    m.to,
                    m.summary,
                    m.verdicts
                ),
                LogEvent::Note { tick, text } => format!("{tick} | {text}"),
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in self.lines() {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Machine-readable dump: one `msg` line per delivery with the raw bytes.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for m in self.messages() {
            let _ = writeln!(out, "msg {} {} {} {} {}", m.tick, m.session, m.from, m.to, hex::encode(&m.bytes));
        }
        for (sid, o) in &self.outcomes {
            for (role, s) in &o.states {
                let _ = writeln!(out, "verdict {sid} {role} {}", s.verdict);
            }
        }
        out
    }
}

fn role_rng(seed: u64, session: &str, role: Role) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(b"kas-auth/rng");
    h.update(seed.to_be_bytes());
    h.update(session.as_bytes());
    h.update([0]);
    h.update(role.to_string().as_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

/// The simulated deployment: trusted center, parties, sessions and bus.
#[derive(Clone)]
pub struct Network {
    policy: AuthenticationPolicy,
    suite: Suite,
    seed: u64,
    keyring: Keyring,
    master: SymmetricKey,
    parties: BTreeMap<String, Party>,
    sessions: BTreeMap<String, Session>,
    queue: VecDeque<Envelope>,
    tick: u64,
    transcript: Transcript,
}

impl Network {
    /// Sets up a key hierarchy over the policy poset and enrolls every user.
    pub fn new(policy: AuthenticationPolicy, suite: Suite, seed: u64) -> Result<Self, NetworkError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (tc, public) = kas_setup(Arc::clone(&policy.poset), suite, &mut rng);
        Self::assemble(policy, suite, seed, Keyring::Plain { tc, public }, &mut rng)
    }

    /// Like [`Network::new`] but over the policy poset extended with a
    /// mirrored `T_n` and the given temporal edges.
    pub fn with_time_release(
        policy: AuthenticationPolicy,
        n: u32,
        temporal_edges: &[(LabelId, u32)],
        suite: Suite,
        seed: u64,
    ) -> Result<Self, NetworkError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let sys = build_time_release(&policy.poset, n, temporal_edges, suite, &mut rng)?;
        Self::assemble(policy, suite, seed, Keyring::Temporal(Box::new(sys)), &mut rng)
    }

    fn assemble(
        policy: AuthenticationPolicy,
        suite: Suite,
        seed: u64,
        mut keyring: Keyring,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self, NetworkError> {
        let master = SymmetricKey::generate(rng, KeyOrigin::External);
        let tc = keyring.trusted_center_mut();
        tc.set_root_reserved(policy.options.root_reserved);
        let mut parties = BTreeMap::new();
        for (user, &label) in &policy.users {
            let credential = tc
                .issue_credential(user, label)
                .map_err(|source| NetworkError::Credential { user: user.clone(), source })?;
            parties.insert(
                user.clone(),
                Party { id: user.clone(), credential: Some(credential), ledger: PartyLedger::default(), skew: 0 },
            );
        }
        parties.insert(
            TTP_ID.to_string(),
            Party { id: TTP_ID.to_string(), credential: None, ledger: PartyLedger::default(), skew: 0 },
        );
        Ok(Network {
            policy,
            suite,
            seed,
            keyring,
            master,
            parties,
            sessions: BTreeMap::new(),
            queue: VecDeque::new(),
            tick: 0,
            transcript: Transcript::default(),
        })
    }

    pub fn policy(&self) -> &AuthenticationPolicy {
        &self.policy
    }

    pub fn suite(&self) -> Suite {
        self.suite
    }

    pub fn keyring(&self) -> &Keyring {
        &self.keyring
    }

    pub fn time_release(&self) -> Option<&TimeReleaseSystem> {
        match &self.keyring {
            Keyring::Temporal(sys) => Some(sys),
            Keyring::Plain { .. } => None,
        }
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn advance(&mut self, ticks: u64) {
        self.tick += ticks;
        self.note(format!("clock advances to {}", self.tick));
    }

    pub fn party(&self, id: &str) -> Option<&Party> {
        self.parties.get(id)
    }

    pub fn parties(&self) -> impl Iterator<Item = &Party> {
        self.parties.values()
    }

    pub fn set_skew(&mut self, id: &str, skew: i64) -> Result<(), NetworkError> {
        let party = self.parties.get_mut(id).ok_or_else(|| NetworkError::UnknownParty(id.to_string()))?;
        party.skew = skew;
        Ok(())
    }

    /// Pairwise long-term key for the baseline protocols.
    pub fn shared_key(&self, a: &str, b: &str) -> SymmetricKey {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        let d = keyed_digest(&self.master, format!("shared/{x}/{y}").as_bytes());
        SymmetricKey::from_bytes(d, KeyOrigin::External)
    }

    /// Key a party shares with the trusted third party.
    pub fn ttp_key(&self, id: &str) -> SymmetricKey {
        let d = keyed_digest(&self.master, format!("ttp/{id}").as_bytes());
        SymmetricKey::from_bytes(d, KeyOrigin::SharedTtp)
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn queue(&self) -> &VecDeque<Envelope> {
        &self.queue
    }

    /// Direct access to in-flight messages, for adversary interposition.
    pub fn queue_mut(&mut self) -> &mut VecDeque<Envelope> {
        &mut self.queue
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.transcript.events.push(LogEvent::Note { tick: self.tick, text: text.into() });
    }

    pub fn has_session(&self, id: &str) -> bool {
        self.sessions.contains_key(id)
    }

    pub fn session_protocol(&self, id: &str) -> Option<ProtocolId> {
        self.sessions.get(id).map(|s| s.protocol)
    }

    pub fn session_state(&self, id: &str, role: Role) -> Option<&SessionState> {
        self.sessions.get(id)?.endpoints.get(&role).map(|e| e.state())
    }

    fn party_keys(&self, id: &str, peer: &str) -> Result<PartyKeys, NetworkError> {
        let party = self.parties.get(id).ok_or_else(|| NetworkError::UnknownParty(id.to_string()))?;
        Ok(PartyKeys {
            credential: party.credential.clone(),
            shared: Some(self.shared_key(id, peer)),
            ttp: Some(self.ttp_key(id)),
        })
    }

    fn insert_session(
        &mut self,
        id: &str,
        protocol: ProtocolId,
        endpoints: Vec<(Role, String, Box<dyn Endpoint>)>,
    ) -> Result<(), NetworkError> {
        if self.sessions.contains_key(id) {
            return Err(NetworkError::DuplicateSession(id.to_string()));
        }
        let mut session = Session {
            protocol,
            endpoints: BTreeMap::new(),
            seats: BTreeMap::new(),
            rngs: BTreeMap::new(),
            finished: false,
        };
        for (role, party, endpoint) in endpoints {
            session.rngs.insert(role, role_rng(self.seed, id, role));
            session.seats.insert(role, party);
            session.endpoints.insert(role, endpoint);
        }
        self.sessions.insert(id.to_string(), session);
        Ok(())
    }

    /// Creates a session and lets the claimant send its first message.
    pub fn start_session(&mut self, id: &str, spec: SessionSpec) -> Result<(), NetworkError> {
        if spec.protocol.is_time_release() {
            return Err(NetworkError::RedemptionOnly(spec.protocol));
        }
        let keys_a = self.party_keys(&spec.claimant_id, &spec.verifier_id)?;
        let keys_b = self.party_keys(&spec.verifier_id, spec.presented_id())?;
        let mut endpoints: Vec<(Role, String, Box<dyn Endpoint>)> = vec![
            (Role::Claimant, spec.claimant_id.clone(), Box::new(Claimant::new(spec.clone(), keys_a))),
            (Role::Verifier, spec.verifier_id.clone(), Box::new(Verifier::new(spec.clone(), keys_b))),
        ];
        if spec.protocol.uses_ttp() {
            let directory = self.parties.keys().filter(|p| *p != TTP_ID).map(|p| (p.clone(), self.ttp_key(p))).collect();
            endpoints.push((Role::Ttp, TTP_ID.to_string(), Box::new(TrustedThirdParty::new(&spec, directory))));
        }
        self.insert_session(id, spec.protocol, endpoints)?;
        let claim = spec.claim.as_ref().map(|c| format!(" claim={c}")).unwrap_or_default();
        self.note(format!("{id}/{} | start A={} B={}{claim}", spec.protocol, spec.claimant_id, spec.verifier_id));
        self.step(id, Role::Claimant, None);
        Ok(())
    }

    /// Runs one endpoint step and enqueues whatever it sends.
    fn step(&mut self, id: &str, role: Role, inbound: Option<&ProtocolMessage>) {
        let Network { policy, keyring, parties, sessions, queue, suite, tick, .. } = self;
        let Some(session) = sessions.get_mut(id) else { return };
        let (Some(endpoint), Some(rng), Some(seat)) =
            (session.endpoints.get_mut(&role), session.rngs.get_mut(&role), session.seats.get(&role))
        else {
            return;
        };
        let party = parties.get_mut(seat).expect("seated parties exist");
        let clock = (*tick as i64 + party.skew).max(0) as u64;
        let mut env = Env {
            suite: *suite,
            rng,
            clock,
            tick: *tick,
            policy,
            kas_poset: keyring.poset(),
            public: keyring.public(),
            ledger: &mut party.ledger,
        };
        for m in endpoint.step(inbound, &mut env) {
            queue.push_back(Envelope { session: id.to_string(), from: m.from, to: m.to, bytes: m.encode() });
        }
    }

    /// Delivers one envelope to its addressee and logs the delivery.
    pub fn deliver(&mut self, envelope: Envelope) {
        let Some(session) = self.sessions.get(&envelope.session) else {
            self.note(format!("undeliverable: no session `{}`", envelope.session));
            return;
        };
        let protocol = session.protocol;
        let decoded = ProtocolMessage::decode(&envelope.bytes);
        let (index, summary) = match &decoded {
            Ok(m) => (Some(m.index), m.summary()),
            Err(e) => (None, format!("undecodable ({} bytes: {e})", envelope.bytes.len())),
        };
        match &decoded {
            Ok(m) => self.step(&envelope.session, envelope.to, Some(m)),
            Err(_) => {
                if let Some(e) = self
                    .sessions
                    .get_mut(&envelope.session)
                    .and_then(|s| s.endpoints.get_mut(&envelope.to))
                {
                    if !e.state().verdict.is_final() {
                        e.on_malformed();
                    }
                }
            }
        }
        let verdicts = self.sessions[&envelope.session].verdicts();
        self.transcript.events.push(LogEvent::Message(MessageRecord {
            tick: self.tick,
            session: envelope.session,
            protocol,
            from: envelope.from,
            to: envelope.to,
            index,
            bytes: envelope.bytes,
            summary,
            verdicts,
        }));
    }

    pub fn deliver_next(&mut self) -> Option<()> {
        let envelope = self.queue.pop_front()?;
        self.deliver(envelope);
        Some(())
    }

    /// Delivers until the bus is empty.
    pub fn flush(&mut self) {
        let mut n = 0;
        while self.deliver_next().is_some() {
            n += 1;
            assert!(n < MAX_DELIVERIES, "message loop on the bus");
        }
    }

    /// Closes a session: pending parties time out and the outcome is recorded.
    pub fn finish_session(&mut self, id: &str) -> Result<(), NetworkError> {
        let session = self.sessions.get_mut(id).ok_or_else(|| NetworkError::UnknownSession(id.to_string()))?;
        if session.finished {
            return Ok(());
        }
        session.finished = true;
        for e in session.endpoints.values_mut() {
            e.finish();
        }
        let outcome = SessionOutcome {
            protocol: session.protocol,
            parties: session.seats.clone(),
            states: session.endpoints.iter().map(|(&r, e)| (r, e.state().clone())).collect(),
        };
        let line = format!("{id}/{} | end {}", session.protocol, session.verdicts());
        self.transcript.outcomes.insert(id.to_string(), outcome);
        self.note(line);
        Ok(())
    }

    pub fn finish_all(&mut self) {
        let open: Vec<String> = self.sessions.iter().filter(|(_, s)| !s.finished).map(|(k, _)| k.clone()).collect();
        for id in open {
            let _ = self.finish_session(&id);
        }
    }

    /// Starts, flushes and finishes one session; returns its transcript.
    pub fn run(&mut self, id: &str, spec: SessionSpec) -> Result<Transcript, NetworkError> {
        let start = self.transcript.events.len();
        self.start_session(id, spec)?;
        self.flush();
        self.finish_session(id)?;
        Ok(self.transcript.for_session_since(id, start))
    }

    fn temporal_mut(&mut self) -> Result<&mut TimeReleaseSystem, NetworkError> {
        match &mut self.keyring {
            Keyring::Temporal(sys) => Ok(sys),
            Keyring::Plain { .. } => Err(NetworkError::NoTimeRelease),
        }
    }

    /// Time server broadcast for tick `t`; the clock moves to `t` if behind.
    pub fn broadcast(&mut self, t: u64) -> Result<Tikc, NetworkError> {
        let tikc = self.temporal_mut()?.tts_broadcast(t)?;
        self.tick = self.tick.max(t);
        self.note(format!("tts | 2 | TTS → BOARD | tikc t={t} tokens={} | -", tikc.tokens.len()));
        Ok(tikc)
    }

    /// A verifier posts a token; its ledger keeps the matching entry.
    pub fn mint(
        &mut self,
        token_id: &str,
        verifier: &str,
        window: (u32, u32),
        challenge: Option<LabelId>,
    ) -> Result<Token, NetworkError> {
        let mut rng = role_rng(self.seed, &format!("mint/{token_id}"), Role::Verifier);
        let party = self.parties.get(verifier).ok_or_else(|| NetworkError::UnknownParty(verifier.to_string()))?;
        let credential = party.credential.clone();
        let mut ledger = party.ledger.nonces.clone();
        let nonce = fresh_nonce(&mut rng, &mut ledger);
        let (token, entry) = self
            .temporal_mut()?
            .mint_token(token_id, verifier, credential.as_ref(), window, nonce, challenge, &mut rng)?;
        let party = self.parties.get_mut(verifier).expect("checked above");
        party.ledger.nonces = ledger;
        party.ledger.tokens.insert(token_id.to_string(), entry);
        self.note(format!("{token_id}/{} | 1 | B → BOARD | {} | -", token.protocol, token.summary()));
        Ok(token)
    }

    /// A claimant answers a posted token in a new session.
    pub fn start_redemption(&mut self, id: &str, claimant: &str, token_id: &str) -> Result<(), NetworkError> {
        let sys = self.time_release().ok_or(NetworkError::NoTimeRelease)?;
        let token = sys.token(token_id).ok_or_else(|| NetworkError::UnknownToken(token_id.to_string()))?.clone();
        let party = self.parties.get(claimant).ok_or_else(|| NetworkError::UnknownParty(claimant.to_string()))?;
        let protocol = token.protocol;
        let issuer = token.issuer.clone();
        let endpoints: Vec<(Role, String, Box<dyn Endpoint>)> = vec![
            (Role::Claimant, claimant.to_string(), Box::new(RedeemingClaimant::new(token, party.credential.clone()))),
            (Role::Verifier, issuer.clone(), Box::new(RedemptionVerifier::new(protocol, &issuer))),
        ];
        self.insert_session(id, protocol, endpoints)?;
        self.note(format!("{id}/{protocol} | start redeem {token_id} A={claimant} B={issuer}"));
        self.step(id, Role::Claimant, None);
        Ok(())
    }

    /// Redeems a token in a fresh session and returns that session's transcript.
    pub fn redeem(&mut self, id: &str, claimant: &str, token_id: &str) -> Result<Transcript, NetworkError> {
        let start = self.transcript.events.len();
        self.start_redemption(id, claimant, token_id)?;
        self.flush();
        self.finish_session(id)?;
        Ok(self.transcript.for_session_since(id, start))
    }
}
