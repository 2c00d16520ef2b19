//! Verifier (B) step functions for Protocols 1-13 and 16-17.

use crate::crypto::{derive_session_key, KeyOrigin, SymmetricKey};
use crate::poset::LabelId;

use super::common::*;
use super::message::{Field, ProtocolId, ProtocolMessage, Role};
use super::session::{
    Endpoint, Env, PartyKeys, RejectReason, SessionKeySource, SessionSpec, SessionState, Verdict,
};

use ProtocolId::*;
use RejectReason::*;

const A: Role = Role::Claimant;
const B: Role = Role::Verifier;
const TTP: Role = Role::Ttp;

#[derive(Clone)]
pub struct Verifier {
    state: SessionState,
    spec: SessionSpec,
    keys: PartyKeys,
    /// Key the final response must open under.
    response_key: Option<SymmetricKey>,
    /// Digest forwarded by the TTP in Protocol 16.
    ttp_digest: Option<Vec<u8>>,
    m1: Vec<u8>,
}

impl Verifier {
    pub fn new(spec: SessionSpec, keys: PartyKeys) -> Self {
        let mut state = SessionState::new(spec.protocol, B, &spec.verifier_id, spec.presented_id());
        state.authenticates = Some(A);
        state.phase = 1;
        Verifier { state, spec, keys, response_key: None, ttp_digest: None, m1: Vec::new() }
    }

    fn proto(&self) -> ProtocolId {
        self.state.protocol
    }

    fn send(&self, index: u8, fields: Vec<Field>) -> ProtocolMessage {
        ProtocolMessage::new(self.proto(), index, B, A, fields)
    }

    fn sealed_for_a(&self, env: &mut Env<'_>, key: &SymmetricKey, index: u8, fields: &[Field]) -> Field {
        seal(env, key, self.proto(), index, B, A, fields)
    }

    fn open_from(&self, env: &Env<'_>, key: &SymmetricKey, ct: &Field, index: u8, from: Role) -> Result<Vec<Field>, RejectReason> {
        match ct {
            Field::Sealed(ct) => open(env, key, ct, self.proto(), index, from, B),
            _ => Err(Malformed),
        }
    }

    fn my_label(&self) -> Result<LabelId, RejectReason> {
        own_label(&self.keys).ok_or(VerifierUnderCleared)
    }

    /// Label the verifier challenges at when it selects.
    fn selected_label(&self, env: &Env<'_>) -> Result<LabelId, RejectReason> {
        if let Some(v) = self.spec.v {
            return Ok(v);
        }
        if let Some(service) = &self.spec.service {
            return env.policy.service_label(service).map_err(|_| PolicyUnsatisfied);
        }
        self.my_label()
    }

    /// Service policy first, then the challenge-label restriction, then
    /// the verifier's own clearance.
    fn admit(&self, env: &Env<'_>, v: LabelId) -> Result<(), RejectReason> {
        let poset = &env.policy.poset;
        if let Some(service) = &self.spec.service {
            let min = env.policy.service_label(service).map_err(|_| PolicyUnsatisfied)?;
            require(poset.leq(min, v), PolicyUnsatisfied)?;
        }
        if env.policy.options.derived_only {
            require(!env.policy.users.values().any(|&l| l == v), PolicyUnsatisfied)?;
        }
        require(poset.leq(v, self.my_label()?), VerifierUnderCleared)
    }

    fn accept(&mut self, clearance: Option<LabelId>, next_phase: u8) -> Vec<ProtocolMessage> {
        self.state.verdict = Verdict::Accept;
        self.state.clearance = clearance;
        self.state.phase = next_phase;
        Vec::new()
    }

    fn check_response(&self, inner: &[Field]) -> Result<(), RejectReason> {
        let [Field::Nonce(nb), Field::Identity(b)] = inner else {
            return Err(Malformed);
        };
        require(self.state.nonces_issued.first() == Some(nb), NonceMismatch)?;
        require(*b == self.state.self_id, BadResponse)
    }

    fn receive(&mut self, msg: &ProtocolMessage, env: &mut Env<'_>) -> StepResult {
        let me = self.state.self_id.clone();
        let peer = self.state.peer_id.clone();
        let f = msg.fields.as_slice();
        match (self.proto(), msg.index, f) {
            (P1, 1, [Field::Hello]) => {
                let nb = nonce(env, &mut self.state);
                self.state.phase = 3;
                Ok(vec![self.send(2, vec![Field::Nonce(nb)])])
            }
            (P2 | P3, 1, [Field::Nonce(na)]) => {
                let key = shared(&self.keys)?;
                self.state.nonces_seen.push(*na);
                let mut fields = Vec::new();
                if self.proto() == P3 {
                    let ks = match self.spec.session_key {
                        SessionKeySource::Random => SymmetricKey::generate(env.rng, KeyOrigin::Session),
                        SessionKeySource::KasLabel(l) => {
                            require(env.policy.poset.minimal().contains(&l), SessionKeyNotLeaf)?;
                            derive(&mut self.state, &self.keys, env, l)?
                        }
                    };
                    fields.push(Field::Key(ks.as_bytes().to_vec()));
                    self.state.session_key = Some(ks);
                }
                let nb = nonce(env, &mut self.state);
                let mut body = vec![Field::Nonce(*na), Field::Nonce(nb), Field::Identity(peer)];
                if self.proto() == P3 {
                    body.push(Field::Identity(me));
                    body.append(&mut fields);
                }
                let sealed = self.sealed_for_a(env, &key, 2, &body);
                self.state.phase = 3;
                Ok(vec![self.send(2, vec![sealed])])
            }
            (P4 | P5, 1, [ct]) => {
                let key = shared(&self.keys)?;
                let inner = self.open_from(env, &key, ct, 1, A)?;
                let [fresh, Field::Identity(b)] = inner.as_slice() else {
                    return Err(Malformed);
                };
                require(*b == me, BadResponse)?;
                let Field::Sealed(body) = ct else { unreachable!() };
                check_freshness(self.spec.freshness, env, &peer, fresh, &body.body)?;
                self.accept(None, 2);
                if self.proto() == P4 {
                    return Ok(Vec::new());
                }
                let fresh = freshness_field(self.spec.freshness, env, &peer);
                let sealed = self.sealed_for_a(env, &key, 2, &[fresh, Field::Identity(peer)]);
                Ok(vec![self.send(2, vec![sealed])])
            }
            (P6 | P9 | P10, 1, [Field::Label(v)]) => {
                let v = resolve(env, v)?;
                self.admit(env, v)?;
                self.state.challenge = Some(v);
                self.m1 = msg.encode();
                let nb = nonce(env, &mut self.state);
                self.state.phase = 3;
                if self.proto() == P6 {
                    self.response_key = Some(derive(&mut self.state, &self.keys, env, v)?);
                    return Ok(vec![self.send(2, vec![Field::Nonce(nb)])]);
                }
                let kv = derive(&mut self.state, &self.keys, env, v)?;
                let sealed = self.sealed_for_a(env, &kv, 2, &[Field::Nonce(nb)]);
                let m2 = self.send(2, vec![sealed]);
                self.response_key = Some(if self.proto() == P10 {
                    let ks = derive_session_key(&nb.0, &session_context(&self.m1, &m2.encode()))
                        .map_err(|_| Malformed)?;
                    self.state.session_key = Some(ks.clone());
                    ks
                } else {
                    kv
                });
                Ok(vec![m2])
            }
            (P7, 1, [Field::Hello]) => {
                let v = self.selected_label(env)?;
                self.admit(env, v)?;
                self.state.challenge = Some(v);
                self.response_key = Some(derive(&mut self.state, &self.keys, env, v)?);
                let nb = nonce(env, &mut self.state);
                self.state.phase = 3;
                Ok(vec![self.send(2, vec![label_field(env, v), Field::Nonce(nb)])])
            }
            (P8, 1, [Field::Label(v), Field::Nonce(na)]) => {
                let v = resolve(env, v)?;
                self.state.challenge = Some(v);
                self.state.nonces_seen.push(*na);
                require(env.policy.poset.leq(v, self.my_label()?), VerifierUnderCleared)?;
                let kv = derive(&mut self.state, &self.keys, env, v)?;
                let w = self.spec.w.unwrap_or(v);
                self.admit(env, w)?;
                self.state.response_label = Some(w);
                self.response_key = Some(derive(&mut self.state, &self.keys, env, w)?);
                let nb = nonce(env, &mut self.state);
                let sealed = self.sealed_for_a(env, &kv, 2, &[Field::Nonce(*na), Field::Nonce(nb), Field::Identity(peer)]);
                self.state.phase = 3;
                Ok(vec![self.send(2, vec![sealed, label_field(env, w)])])
            }
            (P11, 1, [Field::Label(v)]) => {
                let v = resolve(env, v)?;
                self.state.challenge = Some(v);
                let poset = &env.policy.poset;
                let min = match &self.spec.service {
                    Some(service) => Some(env.policy.service_label(service).map_err(|_| PolicyUnsatisfied)?),
                    None => None,
                };
                if let Some(min) = min {
                    require(poset.leq(min, v), PolicyUnsatisfied)?;
                }
                let mine = self.my_label()?;
                let nb = nonce(env, &mut self.state);
                self.state.phase = 3;
                if poset.leq(v, mine) {
                    self.state.response_label = Some(v);
                    return Ok(vec![self.send(2, vec![Field::Nonce(nb)])]);
                }
                let reply = vec![self.send(2, vec![Field::Nonce(nb), label_field(env, mine)])];
                // The claimant runs the same computation and will terminate too.
                let Some(w) = poset.greatest_common_descendant(v, mine) else {
                    self.state.reject(NoCommonDescendant);
                    return Ok(reply);
                };
                if min.is_some_and(|m| !poset.leq(m, w)) {
                    self.state.reject(BelowServiceMinimum);
                    return Ok(reply);
                }
                self.state.response_label = Some(w);
                Ok(reply)
            }
            (P12 | P13, 1, [Field::Label(v), ct]) => {
                let v = resolve(env, v)?;
                self.admit(env, v)?;
                self.state.challenge = Some(v);
                let kv = derive(&mut self.state, &self.keys, env, v)?;
                let inner = self.open_from(env, &kv, ct, 1, A)?;
                let [fresh, Field::Identity(b)] = inner.as_slice() else {
                    return Err(Malformed);
                };
                require(*b == me, BadResponse)?;
                let Field::Sealed(body) = ct else { unreachable!() };
                check_freshness(self.spec.freshness, env, &peer, fresh, &body.body)?;
                self.accept(Some(v), 2);
                if self.proto() == P12 {
                    return Ok(Vec::new());
                }
                let w = self.spec.w.unwrap_or(v);
                self.state.response_label = Some(w);
                let Ok(kw) = derive(&mut self.state, &self.keys, env, w) else {
                    return Ok(Vec::new());
                };
                let fresh = freshness_field(self.spec.freshness, env, &peer);
                let sealed = self.sealed_for_a(env, &kw, 2, &[fresh, Field::Identity(peer)]);
                Ok(vec![self.send(2, vec![label_field(env, w), sealed])])
            }
            (P16 | P17, 1, [Field::Hello, Field::Identity(claimed)]) => {
                self.state.peer_id = claimed.clone();
                let v = self.selected_label(env)?;
                self.admit(env, v)?;
                self.state.challenge = Some(v);
                self.state.phase = 3;
                Ok(vec![ProtocolMessage::new(self.proto(), 2, B, TTP, vec![Field::Identity(claimed.clone())])])
            }
            (P16 | P17, 3, [ct]) => {
                let kb = self.keys.ttp.clone().ok_or(BadCiphertext)?;
                let inner = self.open_from(env, &kb, ct, 3, TTP)?;
                let v = self.state.challenge.ok_or(OutOfOrder)?;
                let kv = derive(&mut self.state, &self.keys, env, v)?;
                self.state.phase = 5;
                match (self.proto(), inner.as_slice()) {
                    (P16, [Field::Nonce(nb), Field::Digest(d)]) => {
                        self.state.nonces_issued.push(*nb);
                        self.ttp_digest = Some(d.clone());
                        self.response_key = Some(kv);
                        Ok(vec![self.send(4, vec![label_field(env, v), Field::Nonce(*nb)])])
                    }
                    (P17, [Field::Nonce(nb), Field::Key(ks)]) => {
                        self.state.nonces_issued.push(*nb);
                        let ks = SymmetricKey::from_slice(ks, KeyOrigin::Session).map_err(|_| Malformed)?;
                        self.response_key = Some(ks.clone());
                        self.state.session_key = Some(ks);
                        let sealed = self.sealed_for_a(env, &kv, 4, &[Field::Nonce(*nb)]);
                        Ok(vec![self.send(4, vec![label_field(env, v), sealed])])
                    }
                    _ => Err(Malformed),
                }
            }
            (P16, 5, [ct]) => {
                let key = self.response_key.clone().ok_or(OutOfOrder)?;
                let inner = self.open_from(env, &key, ct, 5, A)?;
                let [Field::Nonce(nb), Field::Identity(b), Field::Digest(d)] = inner.as_slice() else {
                    return Err(Malformed);
                };
                require(self.state.nonces_issued.first() == Some(nb), NonceMismatch)?;
                require(*b == me, BadResponse)?;
                require(self.ttp_digest.as_ref() == Some(d), DigestMismatch)?;
                let v = self.state.challenge;
                Ok(self.accept(v, 6))
            }
            (P17, 5, [ct]) => {
                let key = self.response_key.clone().ok_or(OutOfOrder)?;
                let inner = self.open_from(env, &key, ct, 5, A)?;
                self.check_response(&inner)?;
                let v = self.state.challenge;
                Ok(self.accept(v, 6))
            }
            (P1 | P2 | P3, 3, [ct]) => {
                let key = shared(&self.keys)?;
                let inner = self.open_from(env, &key, ct, 3, A)?;
                let nb = self.state.nonces_issued.first().copied();
                match (self.proto(), inner.as_slice()) {
                    (P1, _) => self.check_response(&inner)?,
                    (P2, [Field::Nonce(b), Field::Nonce(a)]) => {
                        require(Some(*b) == nb && self.state.nonces_seen.first() == Some(a), NonceMismatch)?
                    }
                    (P3, [Field::Nonce(b), Field::Identity(a)]) => {
                        require(Some(*b) == nb, NonceMismatch)?;
                        require(*a == peer, BadResponse)?;
                    }
                    _ => return Err(Malformed),
                }
                Ok(self.accept(None, 4))
            }
            (P6 | P7 | P9 | P10, 3, [ct]) => {
                let key = self.response_key.clone().ok_or(OutOfOrder)?;
                let inner = self.open_from(env, &key, ct, 3, A)?;
                self.check_response(&inner)?;
                let v = self.state.challenge;
                Ok(self.accept(v, 4))
            }
            (P8, 3, [ct]) => {
                let key = self.response_key.clone().ok_or(OutOfOrder)?;
                let inner = self.open_from(env, &key, ct, 3, A)?;
                let [Field::Nonce(a), Field::Nonce(b)] = inner.as_slice() else {
                    return Err(Malformed);
                };
                require(
                    self.state.nonces_seen.first() == Some(a) && self.state.nonces_issued.first() == Some(b),
                    NonceMismatch,
                )?;
                let w = self.state.response_label;
                Ok(self.accept(w, 4))
            }
            (P11, 3, [Field::Label(w), ct]) => {
                let w = resolve(env, w)?;
                let expected = self.state.response_label.ok_or(OutOfOrder)?;
                require(w == expected, LabelMismatch)?;
                let kw = derive(&mut self.state, &self.keys, env, w)?;
                let inner = self.open_from(env, &kw, ct, 3, A)?;
                self.check_response(&inner)?;
                Ok(self.accept(Some(w), 4))
            }
            _ => Err(Malformed),
        }
    }
}

impl Endpoint for Verifier {
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
        let Some(msg) = inbound else {
            return Vec::new();
        };
        let from = if self.proto().uses_ttp() && self.state.phase == 3 { TTP } else { A };
        expect_header(&self.state, msg, from)
            .and_then(|()| self.receive(msg, env))
            .unwrap_or_else(|reason| self.state.reject(reason))
    }

    fn finish(&mut self) {
        if self.state.verdict == Verdict::Pending {
            let waiting_on_ttp = self.proto().uses_ttp() && self.state.phase == 3;
            self.state.verdict = Verdict::Reject(if waiting_on_ttp { TtpUnavailable } else { NoResponse });
        }
    }
}
