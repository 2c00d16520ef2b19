//! Scenario scripts: a policy, an actor roster and an ordered list of
//! directives, run deterministically against a simulated network.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use kas_auth_core::crypto::Suite;
use kas_auth_core::policy::{tokenize, AuthenticationPolicy, PolicyError, PolicyParser};
use kas_auth_core::poset::LabelId;
use kas_auth_core::protocols::{
    Envelope, Field, Freshness, Network, NetworkError, ProtocolId, ProtocolMessage, RejectReason, Role, SessionKeySource,
    SessionSpec, Verdict,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("line {line}: unknown actor `{name}`")]
    UnknownActor { line: usize, name: String },
    #[error("line {line}: unknown session `{sid}`")]
    UnknownSession { line: usize, sid: String },
    #[error("line {line}: {source}")]
    Network { line: usize, source: NetworkError },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn parse_err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse { line, message: message.into() }
}

/// What a session was started from, so attack suites can start fresh copies.
#[derive(Clone, Debug)]
pub enum SessionPlan {
    Spec(SessionSpec),
    Redeem { claimant: String, token: String },
}

/// Expected verdict in an `expect` line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExpectedVerdict {
    Exactly(Verdict),
    AnyReject,
}

impl ExpectedVerdict {
    fn parse(text: &str) -> Option<Self> {
        Some(match text {
            "accept" => ExpectedVerdict::Exactly(Verdict::Accept),
            "completed" => ExpectedVerdict::Exactly(Verdict::Completed),
            "pending" => ExpectedVerdict::Exactly(Verdict::Pending),
            "reject" => ExpectedVerdict::AnyReject,
            other => ExpectedVerdict::Exactly(Verdict::Reject(RejectReason::from_name(other.strip_prefix("reject:")?)?)),
        })
    }

    fn matches(self, v: Verdict) -> bool {
        match self {
            ExpectedVerdict::Exactly(e) => e == v,
            ExpectedVerdict::AnyReject => matches!(v, Verdict::Reject(_)),
        }
    }
}

impl std::fmt::Display for ExpectedVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExpectedVerdict::Exactly(v) => v.fmt(f),
            ExpectedVerdict::AnyReject => f.write_str("reject"),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Expectation {
    Verdict { sid: String, role: Role, verdict: ExpectedVerdict },
    Clearance { sid: String, label: LabelId },
}

#[derive(Clone, Debug)]
pub enum AdversaryAction {
    Observe,
    Drop { sid: String, index: u8 },
    /// Re-send a delivered message of `source` into `target`.
    Replay { source: String, index: u8, target: String },
    /// Swap the first two queued messages.
    Swap,
    Inject { sid: String, from: Role, to: Role, bytes: Vec<u8> },
    /// Replace the first label field of a queued message.
    Substitute { sid: String, index: u8, label: String },
    /// Bounce a queued message back to its sender.
    Reflect { sid: String, index: u8 },
    /// Take a queued message off the bus and keep it.
    Hold { sid: String, index: u8, name: String },
    Release { name: String },
}

#[derive(Clone, Debug)]
pub enum Directive {
    Start { sid: String, spec: SessionSpec },
    Deliver(Option<usize>),
    Advance(u64),
    Broadcast(u64),
    Mint { token: String, verifier: String, window: (u32, u32), label: Option<LabelId> },
    Redeem { sid: String, claimant: String, token: String },
    Adversary(AdversaryAction),
    Expect(Expectation),
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub policy: AuthenticationPolicy,
    pub suite: Suite,
    /// Horizon and temporal edges of the time-release extension, if any.
    pub time_release: Option<(u32, Vec<(LabelId, u32)>)>,
    pub skews: Vec<(String, i64)>,
    pub directives: Vec<(usize, Directive)>,
}

fn role(line: usize, text: &str) -> Result<Role, ScenarioError> {
    Ok(match text {
        "A" => Role::Claimant,
        "B" => Role::Verifier,
        "TTP" => Role::Ttp,
        "TTS" => Role::Tts,
        "BOARD" => Role::Board,
        other => return Err(parse_err(line, format!("unknown role `{other}` (A, B, TTP, TTS, BOARD)"))),
    })
}

fn number<T: std::str::FromStr>(line: usize, text: &str) -> Result<T, ScenarioError> {
    text.parse().map_err(|_| parse_err(line, format!("bad number `{text}`")))
}

fn window(line: usize, text: &str) -> Result<(u32, u32), ScenarioError> {
    let inner = text
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| parse_err(line, format!("window `{text}` is not [t0,t1]")))?;
    let (a, b) = inner.split_once(',').ok_or_else(|| parse_err(line, format!("window `{text}` is not [t0,t1]")))?;
    Ok((number(line, a.trim())?, number(line, b.trim())?))
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::parse(&name, &text)
    }

    /// Policy directives may appear anywhere; everything else is resolved
    /// against the finished policy.
    pub fn parse(name: &str, text: &str) -> Result<Self, ScenarioError> {
        let mut parser = PolicyParser::default();
        let mut rest = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if !parser.try_line(i + 1, raw)? {
                rest.push((i + 1, raw));
            }
        }
        let policy = parser.finish()?;
        let mut scenario = Scenario {
            name: name.to_string(),
            policy,
            suite: Suite::Production,
            time_release: None,
            skews: Vec::new(),
            directives: Vec::new(),
        };
        let mut sessions: Vec<String> = Vec::new();
        for (line, raw) in rest {
            scenario.directive(line, &tokenize(raw), &mut sessions)?;
        }
        Ok(scenario)
    }

    fn label(&self, line: usize, text: &str) -> Result<LabelId, ScenarioError> {
        self.policy.poset.resolve(text).map_err(|e| parse_err(line, e.to_string()))
    }

    fn actor(&self, line: usize, name: &str) -> Result<String, ScenarioError> {
        if self.policy.users.contains_key(name) {
            Ok(name.to_string())
        } else {
            Err(ScenarioError::UnknownActor { line, name: name.to_string() })
        }
    }

    fn session(line: usize, sessions: &[String], sid: &str) -> Result<String, ScenarioError> {
        if sessions.iter().any(|s| s == sid) {
            Ok(sid.to_string())
        } else {
            Err(ScenarioError::UnknownSession { line, sid: sid.to_string() })
        }
    }

    fn directive(&mut self, line: usize, t: &[&str], sessions: &mut Vec<String>) -> Result<(), ScenarioError> {
        let arity = |n: usize| {
            if t.len() == n {
                Ok(())
            } else {
                Err(parse_err(line, format!("`{}` takes {} argument(s)", t[..t.len().min(2)].join(" "), n - 1)))
            }
        };
        let d = match t {
            ["suite", name] => {
                self.suite = Suite::from_name(name).ok_or_else(|| parse_err(line, format!("unknown suite `{name}`")))?;
                return Ok(());
            }
            ["timerelease", n, edges @ ..] => {
                let n: u32 = number(line, n)?;
                let mut out = Vec::new();
                for e in edges {
                    let (label, tick) =
                        e.rsplit_once('@').ok_or_else(|| parse_err(line, format!("temporal edge `{e}` is not label@tick")))?;
                    out.push((self.label(line, label)?, number(line, tick)?));
                }
                self.time_release = Some((n, out));
                return Ok(());
            }
            ["skew", who, ticks] => {
                let who = self.actor(line, who)?;
                self.skews.push((who, number(line, ticks)?));
                return Ok(());
            }
            ["session", sid, proto, a, b, opts @ ..] => {
                let protocol = ProtocolId::parse(proto).ok_or_else(|| parse_err(line, format!("unknown protocol `{proto}`")))?;
                let (a, b) = (self.actor(line, a)?, self.actor(line, b)?);
                let mut spec = SessionSpec::new(protocol, &a, &b);
                for opt in opts {
                    let (k, v) = opt.split_once('=').ok_or_else(|| parse_err(line, format!("option `{opt}` is not key=value")))?;
                    spec = match k {
                        "v" => spec.with_v(self.label(line, v)?),
                        "w" => spec.with_w(self.label(line, v)?),
                        "service" => {
                            if !self.policy.services.contains_key(v) {
                                return Err(parse_err(line, format!("unknown service `{v}`")));
                            }
                            spec.with_service(v)
                        }
                        "freshness" => spec.with_freshness(match v {
                            "timestamp" => Freshness::Timestamp,
                            "sequence" => Freshness::Sequence,
                            _ => return Err(parse_err(line, format!("unknown freshness `{v}`"))),
                        }),
                        "key" => spec.with_session_key(match v {
                            "random" => SessionKeySource::Random,
                            label => SessionKeySource::KasLabel(self.label(line, label)?),
                        }),
                        "claim" => spec.with_claim(v),
                        _ => return Err(parse_err(line, format!("unknown session option `{k}`"))),
                    };
                }
                if protocol.is_time_release() {
                    return Err(parse_err(line, format!("{protocol} runs through `verifier mint` and `claimant redeem`")));
                }
                if sessions.iter().any(|s| s == sid) {
                    return Err(parse_err(line, format!("session `{sid}` declared twice")));
                }
                sessions.push(sid.to_string());
                Directive::Start { sid: sid.to_string(), spec }
            }
            ["deliver"] | ["deliver", "all"] => Directive::Deliver(None),
            ["deliver", n] => Directive::Deliver(Some(number(line, n)?)),
            ["advance", n] => Directive::Advance(number(line, n)?),
            ["tts", "broadcast", t] => Directive::Broadcast(number(line, t)?),
            ["verifier", "mint", token, verifier, win, label @ ..] if label.len() <= 1 => {
                if self.time_release.is_none() {
                    return Err(parse_err(line, "`verifier mint` needs a `timerelease` line first"));
                }
                Directive::Mint {
                    token: token.to_string(),
                    verifier: self.actor(line, verifier)?,
                    window: window(line, win)?,
                    label: label.first().map(|l| self.label(line, l)).transpose()?,
                }
            }
            ["claimant", "redeem", sid, claimant, token] => {
                if sessions.iter().any(|s| s == sid) {
                    return Err(parse_err(line, format!("session `{sid}` declared twice")));
                }
                sessions.push(sid.to_string());
                Directive::Redeem { sid: sid.to_string(), claimant: self.actor(line, claimant)?, token: token.to_string() }
            }
            ["adversary", action, args @ ..] => {
                let sid = |i: usize| Self::session(line, sessions, args[i]);
                let idx = |i: usize| number::<u8>(line, args[i]);
                let a = match (*action, args.len()) {
                    ("observe", 0) => AdversaryAction::Observe,
                    ("swap", 0) => AdversaryAction::Swap,
                    ("drop", 2) => AdversaryAction::Drop { sid: sid(0)?, index: idx(1)? },
                    ("replay", 4) if args[2] == "into" => {
                        AdversaryAction::Replay { source: sid(0)?, index: idx(1)?, target: sid(3)? }
                    }
                    ("inject", 4) => AdversaryAction::Inject {
                        sid: sid(0)?,
                        from: role(line, args[1])?,
                        to: role(line, args[2])?,
                        bytes: hex::decode(args[3]).map_err(|e| parse_err(line, format!("bad hex: {e}")))?,
                    },
                    ("substitute", 3) => {
                        let label = args[2].strip_prefix("label=").ok_or_else(|| parse_err(line, "substitute takes label=<label>"))?;
                        let label = self.policy.poset.id_str(self.label(line, label)?).to_string();
                        AdversaryAction::Substitute { sid: sid(0)?, index: idx(1)?, label }
                    }
                    ("reflect", 2) => AdversaryAction::Reflect { sid: sid(0)?, index: idx(1)? },
                    ("hold", 4) if args[2] == "as" => {
                        AdversaryAction::Hold { sid: sid(0)?, index: idx(1)?, name: args[3].to_string() }
                    }
                    ("release", 1) => AdversaryAction::Release { name: args[0].to_string() },
                    _ => return Err(parse_err(line, format!("bad adversary action `{}`", t[1..].join(" ")))),
                };
                Directive::Adversary(a)
            }
            ["expect", sid, "clearance", label] => {
                arity(4)?;
                Directive::Expect(Expectation::Clearance {
                    sid: Self::session(line, sessions, sid)?,
                    label: self.label(line, label)?,
                })
            }
            ["expect", sid, who, verdict] => Directive::Expect(Expectation::Verdict {
                sid: Self::session(line, sessions, sid)?,
                role: role(line, who)?,
                verdict: ExpectedVerdict::parse(verdict)
                    .ok_or_else(|| parse_err(line, format!("unknown verdict `{verdict}`")))?,
            }),
            [head, ..] => return Err(parse_err(line, format!("unknown directive `{head}`"))),
            [] => return Ok(()),
        };
        self.directives.push((line, d));
        Ok(())
    }

    /// Builds the network this scenario runs on.
    pub fn network(&self, seed: u64) -> Result<Network, ScenarioError> {
        let wrap = |source| ScenarioError::Network { line: 0, source };
        let mut net = match &self.time_release {
            None => Network::new(self.policy.clone(), self.suite, seed).map_err(wrap)?,
            Some((n, edges)) => Network::with_time_release(self.policy.clone(), *n, edges, self.suite, seed).map_err(wrap)?,
        };
        for (who, skew) in &self.skews {
            net.set_skew(who, *skew).map_err(wrap)?;
        }
        Ok(net)
    }
}

/// One checked `expect` line.
#[derive(Clone, Debug)]
pub struct Check {
    pub line: usize,
    pub subject: String,
    pub expected: String,
    pub observed: String,
    pub ok: bool,
}

pub struct RunReport {
    pub network: Network,
    pub plans: BTreeMap<String, SessionPlan>,
    pub checks: Vec<Check>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    /// Transcript log: one line per delivery, adversary action and note.
    pub fn log(&self) -> String {
        self.network.transcript().render()
    }

    /// Observed-versus-expected table, then every session's final verdicts.
    pub fn verdict_report(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let mark = if c.ok { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{mark} line {}: {} expected {} observed {}", c.line, c.subject, c.expected, c.observed);
        }
        for (sid, o) in &self.network.transcript().outcomes {
            let verdicts: Vec<String> = o.states.iter().map(|(r, s)| format!("{r}={}", s.verdict)).collect();
            let _ = writeln!(out, "session {sid} {} {}", o.protocol, verdicts.join(" "));
        }
        let failed = self.checks.iter().filter(|c| !c.ok).count();
        let _ = writeln!(out, "{} expectation(s), {failed} failed", self.checks.len());
        out
    }
}

fn find_queued(net: &Network, sid: &str, index: u8) -> Option<usize> {
    net.queue().iter().position(|e| {
        e.session == sid && ProtocolMessage::decode(&e.bytes).map(|m| m.index == index).unwrap_or(false)
    })
}

fn adversary(
    net: &mut Network,
    line: usize,
    action: &AdversaryAction,
    held: &mut BTreeMap<String, Envelope>,
) -> Result<(), ScenarioError> {
    let missing = |sid: &str, index: u8| parse_err(line, format!("no queued message {index} in session `{sid}`"));
    match action {
        AdversaryAction::Observe => {
            let seen: Vec<String> = net
                .queue()
                .iter()
                .map(|e| {
                    let s = ProtocolMessage::decode(&e.bytes).map(|m| format!("{} {}", m.index, m.summary()));
                    format!("{}: {} → {} {}", e.session, e.from, e.to, s.unwrap_or_else(|_| "undecodable".into()))
                })
                .collect();
            net.note(format!("adversary observes {} queued: {}", seen.len(), seen.join("; ")));
        }
        AdversaryAction::Drop { sid, index } => {
            let at = find_queued(net, sid, *index).ok_or_else(|| missing(sid, *index))?;
            net.queue_mut().remove(at);
            net.note(format!("adversary drops {sid}/m{index}"));
        }
        AdversaryAction::Replay { source, index, target } => {
            let rec = net
                .transcript()
                .session_messages(source)
                .find(|m| m.index == Some(*index))
                .cloned()
                .ok_or_else(|| parse_err(line, format!("session `{source}` has no delivered message {index}")))?;
            net.queue_mut().push_front(Envelope { session: target.clone(), from: rec.from, to: rec.to, bytes: rec.bytes });
            net.note(format!("adversary replays {source}/m{index} into {target}"));
        }
        AdversaryAction::Swap => {
            if net.queue().len() >= 2 {
                net.queue_mut().swap(0, 1);
            }
            net.note("adversary swaps the next two messages");
        }
        AdversaryAction::Inject { sid, from, to, bytes } => {
            net.queue_mut().push_front(Envelope { session: sid.clone(), from: *from, to: *to, bytes: bytes.clone() });
            net.note(format!("adversary injects {} bytes into {sid} as {from} → {to}", bytes.len()));
        }
        AdversaryAction::Substitute { sid, index, label } => {
            let at = find_queued(net, sid, *index).ok_or_else(|| missing(sid, *index))?;
            let env = &mut net.queue_mut()[at];
            let mut msg = ProtocolMessage::decode(&env.bytes).expect("found by decoding");
            let slot = msg
                .fields
                .iter_mut()
                .find(|f| matches!(f, Field::Label(_)))
                .ok_or_else(|| parse_err(line, format!("{sid}/m{index} carries no label")))?;
            *slot = Field::Label(label.clone());
            env.bytes = msg.encode();
            net.note(format!("adversary substitutes label {label} in {sid}/m{index}"));
        }
        AdversaryAction::Reflect { sid, index } => {
            let at = find_queued(net, sid, *index).ok_or_else(|| missing(sid, *index))?;
            let env = &mut net.queue_mut()[at];
            std::mem::swap(&mut env.from, &mut env.to);
            net.note(format!("adversary reflects {sid}/m{index} back to its sender"));
        }
        AdversaryAction::Hold { sid, index, name } => {
            let at = find_queued(net, sid, *index).ok_or_else(|| missing(sid, *index))?;
            let env = net.queue_mut().remove(at).expect("index from position");
            held.insert(name.clone(), env);
            net.note(format!("adversary holds {sid}/m{index} as {name}"));
        }
        AdversaryAction::Release { name } => {
            let env = held.remove(name).ok_or_else(|| parse_err(line, format!("nothing held as `{name}`")))?;
            net.queue_mut().push_front(env);
            net.note(format!("adversary releases {name}"));
        }
    }
    Ok(())
}

/// Runs the script, flushes the bus, closes every session and checks the
/// expectations.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<RunReport, ScenarioError> {
    let mut net = scenario.network(seed)?;
    let mut plans = BTreeMap::new();
    let mut held = BTreeMap::new();
    let mut expectations = Vec::new();
    for (line, d) in &scenario.directives {
        let line = *line;
        let wrap = |source| ScenarioError::Network { line, source };
        match d {
            Directive::Start { sid, spec } => {
                net.start_session(sid, spec.clone()).map_err(wrap)?;
                plans.insert(sid.clone(), SessionPlan::Spec(spec.clone()));
            }
            Directive::Deliver(None) => net.flush(),
            Directive::Deliver(Some(n)) => {
                for _ in 0..*n {
                    if net.deliver_next().is_none() {
                        break;
                    }
                }
            }
            Directive::Advance(n) => net.advance(*n),
            Directive::Broadcast(t) => {
                net.broadcast(*t).map_err(wrap)?;
            }
            Directive::Mint { token, verifier, window, label } => {
                net.mint(token, verifier, *window, *label).map_err(wrap)?;
            }
            Directive::Redeem { sid, claimant, token } => {
                net.start_redemption(sid, claimant, token).map_err(wrap)?;
                plans.insert(sid.clone(), SessionPlan::Redeem { claimant: claimant.clone(), token: token.clone() });
            }
            Directive::Adversary(a) => adversary(&mut net, line, a, &mut held)?,
            Directive::Expect(e) => expectations.push((line, e.clone())),
        }
    }
    net.flush();
    net.finish_all();
    let poset = net.keyring().poset().clone();
    let checks = expectations
        .into_iter()
        .map(|(line, e)| match e {
            Expectation::Verdict { sid, role, verdict } => {
                let observed = net.transcript().verdict(&sid, role);
                Check {
                    line,
                    subject: format!("{sid} {role}"),
                    expected: verdict.to_string(),
                    observed: observed.map_or("absent".into(), |v| v.to_string()),
                    ok: observed.is_some_and(|v| verdict.matches(v)),
                }
            }
            Expectation::Clearance { sid, label } => {
                let observed = net
                    .transcript()
                    .outcome(&sid)
                    .and_then(|o| o.state(Role::Verifier))
                    .and_then(|s| s.clearance);
                Check {
                    line,
                    subject: format!("{sid} clearance"),
                    expected: poset.id_str(label).to_string(),
                    observed: observed.map_or("none".into(), |c| poset.id_str(c).to_string()),
                    ok: observed == Some(label),
                }
            }
        })
        .collect();
    Ok(RunReport { network: net, plans, checks })
}
