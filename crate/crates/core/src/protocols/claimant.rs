//! Claimant (A) step functions for Protocols 1-13 and 16-17.

use crate::crypto::{keyed_digest, derive_session_key, KeyOrigin, SymmetricKey};
use crate::poset::LabelId;

use super::common::*;
use super::message::{Field, ProtocolId, ProtocolMessage, Role};
use super::session::{Endpoint, Env, PartyKeys, RejectReason, SessionSpec, SessionState, Verdict};

use ProtocolId::*;
use RejectReason::*;

const A: Role = Role::Claimant;
const B: Role = Role::Verifier;

#[derive(Clone)]
pub struct Claimant {
    state: SessionState,
    spec: SessionSpec,
    keys: PartyKeys,
    /// Canonical encodings of messages 1 and 2, for session-key binding.
    m1: Vec<u8>,
}

impl Claimant {
    pub fn new(spec: SessionSpec, keys: PartyKeys) -> Self {
        let mut state = SessionState::new(spec.protocol, A, spec.presented_id(), &spec.verifier_id);
        state.authenticates = match spec.protocol {
            P2 | P3 | P5 | P8 | P13 => Some(B),
            _ => None,
        };
        Claimant { state, spec, keys, m1: Vec::new() }
    }

    fn proto(&self) -> ProtocolId {
        self.state.protocol
    }

    fn send(&self, index: u8, fields: Vec<Field>) -> ProtocolMessage {
        ProtocolMessage::new(self.proto(), index, A, B, fields)
    }

    /// Label the claimant proves at in claimant-selects-label protocols.
    fn chosen_label(&self) -> Result<LabelId, RejectReason> {
        self.spec.v.or(own_label(&self.keys)).ok_or(CannotDerive)
    }

    fn seal_to_b(&self, env: &mut Env<'_>, key: &SymmetricKey, index: u8, fields: &[Field]) -> Field {
        seal(env, key, self.proto(), index, A, B, fields)
    }

    fn open_from_b(&self, env: &Env<'_>, key: &SymmetricKey, ct: &Field, index: u8) -> Result<Vec<Field>, RejectReason> {
        match ct {
            Field::Sealed(ct) => open(env, key, ct, self.proto(), index, B, A),
            _ => Err(Malformed),
        }
    }

    fn complete(&mut self, next_phase: u8) {
        self.state.phase = next_phase;
        if self.state.authenticates.is_none() {
            self.state.verdict = Verdict::Completed;
        }
    }

    fn start(&mut self, env: &mut Env<'_>) -> StepResult {
        let peer = self.state.peer_id.clone();
        let out = match self.proto() {
            P1 | P7 => vec![self.send(1, vec![Field::Hello])],
            P16 | P17 => {
                self.state.phase = 4;
                return Ok(vec![self.send(1, vec![Field::Hello, Field::Identity(self.state.self_id.clone())])]);
            }
            P2 | P3 => {
                let n = nonce(env, &mut self.state);
                vec![self.send(1, vec![Field::Nonce(n)])]
            }
            P4 | P5 => {
                let key = shared(&self.keys)?;
                let fresh = freshness_field(self.spec.freshness, env, &peer);
                let sealed = self.seal_to_b(env, &key, 1, &[fresh, Field::Identity(peer)]);
                let out = vec![self.send(1, vec![sealed])];
                self.complete(2);
                return Ok(out);
            }
            P6 | P9 | P10 => {
                let v = self.chosen_label()?;
                self.state.challenge = Some(v);
                vec![self.send(1, vec![label_field(env, v)])]
            }
            P11 => {
                // A label above our own is allowed: negotiation may bring the
                // challenge down to one we can answer, and clearance follows it.
                let v = self.chosen_label()?;
                self.state.challenge = Some(v);
                vec![self.send(1, vec![label_field(env, v)])]
            }
            P8 => {
                let v = self.chosen_label()?;
                self.state.challenge = Some(v);
                let n = nonce(env, &mut self.state);
                vec![self.send(1, vec![label_field(env, v), Field::Nonce(n)])]
            }
            P12 | P13 => {
                let v = self.chosen_label()?;
                self.state.challenge = Some(v);
                let key = derive(&mut self.state, &self.keys, env, v)?;
                let fresh = freshness_field(self.spec.freshness, env, &peer);
                let sealed = self.seal_to_b(env, &key, 1, &[fresh, Field::Identity(peer)]);
                let out = vec![self.send(1, vec![label_field(env, v), sealed])];
                self.complete(2);
                return Ok(out);
            }
            P14 | P15 => return Err(Malformed),
        };
        self.m1 = out[0].encode();
        self.state.phase = 2;
        Ok(out)
    }

    fn receive(&mut self, msg: &ProtocolMessage, env: &mut Env<'_>) -> StepResult {
        let peer = self.state.peer_id.clone();
        let me = self.state.self_id.clone();
        let f = msg.fields.as_slice();
        let out = match (self.proto(), msg.index, f) {
            (P1, 2, [Field::Nonce(nb)]) => {
                self.state.nonces_seen.push(*nb);
                let key = shared(&self.keys)?;
                let sealed = self.seal_to_b(env, &key, 3, &[Field::Nonce(*nb), Field::Identity(peer)]);
                self.complete(4);
                vec![self.send(3, vec![sealed])]
            }
            (P2 | P3, 2, [ct]) => {
                let key = shared(&self.keys)?;
                let inner = self.open_from_b(env, &key, ct, 2)?;
                let issued = self.state.nonces_issued.first().copied();
                let (na, nb, session_key) = match (self.proto(), inner.as_slice()) {
                    (P2, [Field::Nonce(na), Field::Nonce(nb), Field::Identity(a)]) => {
                        require(*a == me, BadResponse)?;
                        (*na, *nb, None)
                    }
                    (P3, [Field::Nonce(na), Field::Nonce(nb), Field::Identity(a), Field::Identity(b), Field::Key(ks)]) => {
                        require(*a == me && *b == peer, BadResponse)?;
                        let ks = SymmetricKey::from_slice(ks, KeyOrigin::Session).map_err(|_| Malformed)?;
                        (*na, *nb, Some(ks))
                    }
                    _ => return Err(Malformed),
                };
                require(Some(na) == issued, NonceMismatch)?;
                self.state.nonces_seen.push(nb);
                let reply = match self.proto() {
                    P2 => vec![Field::Nonce(nb), Field::Nonce(na)],
                    _ => vec![Field::Nonce(nb), Field::Identity(me)],
                };
                let sealed = self.seal_to_b(env, &key, 3, &reply);
                self.state.session_key = session_key;
                self.state.verdict = Verdict::Accept;
                self.state.phase = 4;
                vec![self.send(3, vec![sealed])]
            }
            (P5, 2, [ct]) => {
                let key = shared(&self.keys)?;
                let inner = self.open_from_b(env, &key, ct, 2)?;
                let [fresh, Field::Identity(a)] = inner.as_slice() else {
                    return Err(Malformed);
                };
                require(*a == me, BadResponse)?;
                let Field::Sealed(body) = ct else { unreachable!() };
                check_freshness(self.spec.freshness, env, &peer, fresh, &body.body)?;
                self.state.verdict = Verdict::Accept;
                self.state.phase = 3;
                Vec::new()
            }
            (P6, 2, [Field::Nonce(nb)]) => {
                self.state.nonces_seen.push(*nb);
                let v = self.state.challenge.ok_or(OutOfOrder)?;
                let key = derive(&mut self.state, &self.keys, env, v)?;
                let sealed = self.seal_to_b(env, &key, 3, &[Field::Nonce(*nb), Field::Identity(peer)]);
                self.complete(4);
                vec![self.send(3, vec![sealed])]
            }
            (P7, 2, [Field::Label(v), Field::Nonce(nb)]) => {
                let v = resolve(env, v)?;
                self.state.challenge = Some(v);
                self.state.nonces_seen.push(*nb);
                let key = derive(&mut self.state, &self.keys, env, v)?;
                let sealed = self.seal_to_b(env, &key, 3, &[Field::Nonce(*nb), Field::Identity(peer)]);
                self.complete(4);
                vec![self.send(3, vec![sealed])]
            }
            (P8, 2, [ct, Field::Label(w)]) => {
                let v = self.state.challenge.ok_or(OutOfOrder)?;
                let w = resolve(env, w)?;
                // Verifying B at v needs the claimant's own copy of the key.
                let kv = derive(&mut self.state, &self.keys, env, v)?;
                let inner = self.open_from_b(env, &kv, ct, 2)?;
                let [Field::Nonce(na), Field::Nonce(nb), Field::Identity(a)] = inner.as_slice() else {
                    return Err(Malformed);
                };
                require(Some(*na) == self.state.nonces_issued.first().copied(), NonceMismatch)?;
                require(*a == me, BadResponse)?;
                self.state.nonces_seen.push(*nb);
                self.state.verdict = Verdict::Accept;
                self.state.clearance = Some(v);
                self.state.response_label = Some(w);
                self.state.phase = 4;
                let Ok(kw) = derive(&mut self.state, &self.keys, env, w) else {
                    return Ok(Vec::new());
                };
                let sealed = self.seal_to_b(env, &kw, 3, &[Field::Nonce(*na), Field::Nonce(*nb)]);
                vec![self.send(3, vec![sealed])]
            }
            (P9 | P10, 2, [ct]) => {
                let v = self.state.challenge.ok_or(OutOfOrder)?;
                let kv = derive(&mut self.state, &self.keys, env, v)?;
                let inner = self.open_from_b(env, &kv, ct, 2)?;
                let [Field::Nonce(nb)] = inner.as_slice() else {
                    return Err(Malformed);
                };
                self.state.nonces_seen.push(*nb);
                let key = if self.proto() == P10 {
                    let ks = derive_session_key(&nb.0, &session_context(&self.m1, &msg.encode()))
                        .map_err(|_| Malformed)?;
                    self.state.session_key = Some(ks.clone());
                    ks
                } else {
                    kv
                };
                let sealed = self.seal_to_b(env, &key, 3, &[Field::Nonce(*nb), Field::Identity(peer)]);
                self.complete(4);
                vec![self.send(3, vec![sealed])]
            }
            (P11, 2, [Field::Nonce(nb), rest @ ..]) => {
                let v = self.state.challenge.ok_or(OutOfOrder)?;
                let w = match rest {
                    [] => v,
                    [Field::Label(lb)] => {
                        let lb = resolve(env, lb)?;
                        env.policy.poset.greatest_common_descendant(v, lb).ok_or(NoCommonDescendant)?
                    }
                    _ => return Err(Malformed),
                };
                if let Some(service) = &self.spec.service {
                    let min = env.policy.service_label(service).map_err(|_| PolicyUnsatisfied)?;
                    require(env.policy.poset.leq(min, w), BelowServiceMinimum)?;
                }
                self.state.nonces_seen.push(*nb);
                self.state.response_label = Some(w);
                let kw = derive(&mut self.state, &self.keys, env, w)?;
                let sealed = self.seal_to_b(env, &kw, 3, &[Field::Nonce(*nb), Field::Identity(peer)]);
                self.complete(4);
                vec![self.send(3, vec![label_field(env, w), sealed])]
            }
            (P13, 2, [Field::Label(w), ct]) => {
                let w = resolve(env, w)?;
                let mine = own_label(&self.keys).ok_or(CannotDerive)?;
                require(env.policy.poset.leq(w, mine), VerifierUnderCleared)?;
                let kw = derive(&mut self.state, &self.keys, env, w)?;
                let inner = self.open_from_b(env, &kw, ct, 2)?;
                let [fresh, Field::Identity(a)] = inner.as_slice() else {
                    return Err(Malformed);
                };
                require(*a == me, BadResponse)?;
                let Field::Sealed(body) = ct else { unreachable!() };
                check_freshness(self.spec.freshness, env, &peer, fresh, &body.body)?;
                self.state.verdict = Verdict::Accept;
                self.state.clearance = Some(w);
                self.state.phase = 3;
                Vec::new()
            }
            (P16, 4, [Field::Label(v), Field::Nonce(nb)]) => {
                let v = resolve(env, v)?;
                self.state.challenge = Some(v);
                self.state.nonces_seen.push(*nb);
                let kv = derive(&mut self.state, &self.keys, env, v)?;
                let ka = self.keys.ttp.clone().ok_or(DigestMismatch)?;
                let digest = keyed_digest(&ka, &nb.0).to_vec();
                let sealed =
                    self.seal_to_b(env, &kv, 5, &[Field::Nonce(*nb), Field::Identity(peer), Field::Digest(digest)]);
                self.complete(6);
                vec![self.send(5, vec![sealed])]
            }
            (P17, 4, [Field::Label(v), ct]) => {
                let v = resolve(env, v)?;
                self.state.challenge = Some(v);
                let kv = derive(&mut self.state, &self.keys, env, v)?;
                let inner = self.open_from_b(env, &kv, ct, 4)?;
                let [Field::Nonce(nb)] = inner.as_slice() else {
                    return Err(Malformed);
                };
                self.state.nonces_seen.push(*nb);
                let ka = self.keys.ttp.clone().ok_or(BadCiphertext)?;
                let ks = SymmetricKey::from_bytes(keyed_digest(&ka, &nb.0), KeyOrigin::Session);
                let sealed = self.seal_to_b(env, &ks, 5, &[Field::Nonce(*nb), Field::Identity(peer)]);
                self.state.session_key = Some(ks);
                self.complete(6);
                vec![self.send(5, vec![sealed])]
            }
            _ => return Err(Malformed),
        };
        Ok(out)
    }
}

impl Endpoint for Claimant {
    fn clone_box(&self) -> Box<dyn Endpoint> {
        Box::new(self.clone())
    }

    fn state(&self) -> &SessionState {
        &self.state
    }

    fn state_mut(&mut self) -> &mut SessionState {
        &mut self.state
    }

    fn step(&mut self, inbound: Option<&ProtocolMessage>, env: &mut Env<'_>) -> Vec<ProtocolMessage> {
        if self.state.verdict.is_final() {
            return Vec::new();
        }
        let result = match inbound {
            None if self.state.phase == 0 => self.start(env),
            None => Ok(Vec::new()),
            Some(msg) => expect_header(&self.state, msg, B).and_then(|()| self.receive(msg, env)),
        };
        result.unwrap_or_else(|reason| self.state.reject(reason))
    }
}
