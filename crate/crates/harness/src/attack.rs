//! Active-adversary suites run against fresh copies of recorded sessions.
//!
//! Every suite forks the network after the honest run, so ledgers, replay
//! caches and the clock carry over, and then tries to make a target party
//! accept something its peer never sent in that session.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use kas_auth_core::crypto::Ciphertext;
use kas_auth_core::protocols::{Envelope, Field, MessageRecord, Network, NetworkError, ProtocolMessage, Role, Verdict};

use crate::scenario::SessionPlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackSuite {
    /// Recorded ciphertexts and field lists grafted into fresh positions.
    Splice,
    /// Whole recorded messages of the same protocol fed in any order.
    Replay,
    /// In-flight label fields rewritten to every label of the poset.
    Label,
}

impl AttackSuite {
    pub const ALL: [AttackSuite; 3] = [AttackSuite::Splice, AttackSuite::Replay, AttackSuite::Label];
}

impl FromStr for AttackSuite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "splice" => Ok(AttackSuite::Splice),
            "replay" => Ok(AttackSuite::Replay),
            "label" => Ok(AttackSuite::Label),
            _ => Err(format!("unknown suite `{s}` (splice, replay, label)")),
        }
    }
}

impl fmt::Display for AttackSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackSuite::Splice => "splice",
            AttackSuite::Replay => "replay",
            AttackSuite::Label => "label",
        })
    }
}

/// A target that accepted in an attacked session.
#[derive(Clone, Debug)]
pub struct Finding {
    pub session: String,
    pub target: Role,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct AttackReport {
    pub suite: AttackSuite,
    pub trials: usize,
    pub lines: Vec<String>,
    pub findings: Vec<Finding>,
}

impl AttackReport {
    pub fn new(suite: AttackSuite) -> Self {
        AttackReport { suite, trials: 0, lines: Vec::new(), findings: Vec::new() }
    }

    pub fn false_accepts(&self) -> usize {
        self.findings.len()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            let _ = writeln!(out, "{l}");
        }
        for f in &self.findings {
            let _ = writeln!(out, "FALSE ACCEPT {} by {}: {}", f.session, f.target, f.detail);
        }
        let _ = writeln!(out, "{} suite: {} trials, {} false accepts", self.suite, self.trials, self.findings.len());
        out
    }
}

/// Starts a session from its plan.
pub fn start(net: &mut Network, sid: &str, plan: &SessionPlan) -> Result<(), NetworkError> {
    match plan {
        SessionPlan::Spec(spec) => net.start_session(sid, spec.clone()),
        SessionPlan::Redeem { claimant, token } => net.start_redemption(sid, claimant, token),
    }
}

/// Delivers everything on the bus, capturing traffic to and from `impostor`
/// in session `sid`.
fn pump(net: &mut Network, sid: &str, impostor: Option<Role>) {
    let mut n = 0;
    while let Some(env) = net.queue_mut().pop_front() {
        n += 1;
        assert!(n < 100_000, "message loop on the bus");
        if env.session == sid && impostor.is_some_and(|r| env.from == r || env.to == r) {
            continue;
        }
        net.deliver(env);
    }
}

fn verdict(net: &Network, sid: &str, role: Role) -> Verdict {
    net.session_state(sid, role).map_or(Verdict::Pending, |s| s.verdict)
}

/// (impostor, target) pairs: the claimant is always impersonated to the
/// verifier, and the verifier to the claimant when the protocol is mutual.
fn pairs(base: &Network, sid: &str) -> Vec<(Role, Role)> {
    let mut out = vec![(Role::Claimant, Role::Verifier)];
    let mutual = base
        .transcript()
        .outcome(sid)
        .and_then(|o| o.state(Role::Claimant))
        .is_some_and(|s| s.authenticates == Some(Role::Verifier));
    if mutual {
        out.push((Role::Verifier, Role::Claimant));
    }
    out
}

struct Ctx<'a> {
    sid: String,
    impostor: Role,
    target: Role,
    report: &'a mut AttackReport,
}

impl Ctx<'_> {
    fn check(&mut self, net: &Network, what: &str) {
        if verdict(net, &self.sid, self.target).is_accept() {
            self.report.findings.push(Finding { session: self.sid.clone(), target: self.target, detail: what.to_string() });
        }
    }
}

/// Runs one suite over every session the honest run started.
pub fn attack(base: &Network, plans: &BTreeMap<String, SessionPlan>, suite: AttackSuite) -> AttackReport {
    let mut report = AttackReport::new(suite);
    let corpus: Vec<MessageRecord> = base.transcript().messages().cloned().collect();
    for (orig, plan) in plans {
        let Some(protocol) = base.session_protocol(orig) else { continue };
        let sid = format!("{orig}~{suite}");
        let before = (report.trials, report.findings.len());
        match suite {
            AttackSuite::Label => {
                let mut net = base.clone();
                if start(&mut net, &sid, plan).is_err() {
                    continue;
                }
                label_walk(net, &sid, &mut report);
            }
            AttackSuite::Replay | AttackSuite::Splice => {
                for (impostor, target) in pairs(base, orig) {
                    let mut net = base.clone();
                    if start(&mut net, &sid, plan).is_err() {
                        continue;
                    }
                    if suite == AttackSuite::Replay {
                        let mut candidates: Vec<MessageRecord> = Vec::new();
                        for m in corpus.iter().filter(|m| m.protocol == protocol && m.from == impostor) {
                            if !candidates.iter().any(|c| c.bytes == m.bytes) {
                                candidates.push(m.clone());
                            }
                        }
                        let depth = base.transcript().session_messages(orig).filter(|m| m.from == impostor).count().min(3);
                        replay_into(net, &sid, impostor, target, &candidates, depth, &mut report);
                    } else {
                        let mut ctx = Ctx { sid: sid.clone(), impostor, target, report: &mut report };
                        splice_walk(net, &mut ctx, &corpus);
                    }
                }
            }
        }
        report.lines.push(format!(
            "{orig} {protocol}: {} trials, {} false accepts",
            report.trials - before.0,
            report.findings.len() - before.1
        ));
    }
    report
}

/// Silences `impostor` in the already started session `sid` and feeds it
/// every sequence of up to `depth` candidate messages.
pub fn replay_into(
    net: Network,
    sid: &str,
    impostor: Role,
    target: Role,
    candidates: &[MessageRecord],
    depth: usize,
    report: &mut AttackReport,
) {
    let mut ctx = Ctx { sid: sid.to_string(), impostor, target, report };
    let refs: Vec<&MessageRecord> = candidates.iter().collect();
    replay_dfs(net, &mut ctx, &refs, depth, &mut Vec::new());
}

fn replay_dfs(mut net: Network, ctx: &mut Ctx<'_>, candidates: &[&MessageRecord], depth: usize, path: &mut Vec<String>) {
    pump(&mut net, &ctx.sid, Some(ctx.impostor));
    if !path.is_empty() {
        ctx.check(&net, &format!("replayed {}", path.join(", ")));
    }
    if depth == 0 || verdict(&net, &ctx.sid, ctx.target).is_final() {
        return;
    }
    for c in candidates {
        let mut fork = net.clone();
        fork.deliver(Envelope { session: ctx.sid.clone(), from: ctx.impostor, to: c.to, bytes: c.bytes.clone() });
        ctx.report.trials += 1;
        path.push(format!("{}/m{}", c.session, c.index.unwrap_or(0)));
        replay_dfs(fork, ctx, candidates, depth - 1, path);
        path.pop();
    }
}

fn splice_walk(mut net: Network, ctx: &mut Ctx<'_>, corpus: &[MessageRecord]) {
    let sealed: Vec<Ciphertext> = {
        let mut out: Vec<Ciphertext> = Vec::new();
        for m in corpus {
            let Ok(msg) = ProtocolMessage::decode(&m.bytes) else { continue };
            for f in msg.fields {
                if let Field::Sealed(ct) = f {
                    if !out.contains(&ct) {
                        out.push(ct);
                    }
                }
            }
        }
        out
    };
    let mut n = 0;
    while let Some(env) = net.queue_mut().pop_front() {
        n += 1;
        assert!(n < 100_000, "message loop on the bus");
        if env.session == ctx.sid && env.from == ctx.impostor {
            if let Ok(msg) = ProtocolMessage::decode(&env.bytes) {
                let mut variants = Vec::new();
                for (k, f) in msg.fields.iter().enumerate() {
                    let Field::Sealed(own) = f else { continue };
                    for ct in sealed.iter().filter(|ct| *ct != own) {
                        let mut m = msg.clone();
                        m.fields[k] = Field::Sealed(ct.clone());
                        variants.push((m, format!("ciphertext into m{} field {k}", msg.index)));
                    }
                }
                for rec in corpus {
                    let Ok(r) = ProtocolMessage::decode(&rec.bytes) else { continue };
                    if r.fields != msg.fields {
                        let what = format!("{}/m{} rewrapped as m{}", rec.session, r.index, msg.index);
                        variants.push((ProtocolMessage { fields: r.fields, ..msg.clone() }, what));
                    }
                }
                for (m, what) in variants {
                    let mut fork = net.clone();
                    fork.deliver(Envelope { bytes: m.encode(), ..env.clone() });
                    pump(&mut fork, &ctx.sid, Some(ctx.impostor));
                    ctx.report.trials += 1;
                    ctx.check(&fork, &what);
                }
            }
        }
        net.deliver(env);
    }
}

/// Rewrites each in-flight label once and lets the run finish honestly. A
/// finding is an accept at a clearance the authenticated peer does not hold.
fn label_walk(mut net: Network, sid: &str, report: &mut AttackReport) {
    let poset = net.keyring().poset().clone();
    let mut n = 0;
    while let Some(env) = net.queue_mut().pop_front() {
        n += 1;
        assert!(n < 100_000, "message loop on the bus");
        if env.session == sid {
            if let Ok(msg) = ProtocolMessage::decode(&env.bytes) {
                for (k, f) in msg.fields.iter().enumerate() {
                    let Field::Label(own) = f else { continue };
                    for x in poset.ids() {
                        let label = poset.id_str(x);
                        if label == own {
                            continue;
                        }
                        let mut m = msg.clone();
                        m.fields[k] = Field::Label(label.to_string());
                        let mut fork = net.clone();
                        fork.deliver(Envelope { bytes: m.encode(), ..env.clone() });
                        pump(&mut fork, sid, None);
                        report.trials += 1;
                        for role in [Role::Claimant, Role::Verifier] {
                            let Some(state) = fork.session_state(sid, role) else { continue };
                            let (Verdict::Accept, Some(c)) = (state.verdict, state.clearance) else { continue };
                            let held = fork.policy().users.get(&state.peer_id).copied();
                            if !held.is_some_and(|h| poset.leq(c, h)) {
                                report.findings.push(Finding {
                                    session: sid.to_string(),
                                    target: role,
                                    detail: format!("m{} label {own} -> {label} cleared {} at {}", msg.index, state.peer_id, poset.id_str(c)),
                                });
                            }
                        }
                    }
                }
            }
        }
        net.deliver(env);
    }
}
