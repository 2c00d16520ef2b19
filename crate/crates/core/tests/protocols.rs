use std::sync::Arc;

use kas_auth_core::crypto::Suite;
use kas_auth_core::policy::AuthenticationPolicy;
use kas_auth_core::poset::{LabelId, Poset};
use kas_auth_core::protocols::message::{decode_plaintext, encode_plaintext};
use kas_auth_core::protocols::sessions::*;
use kas_auth_core::protocols::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// One user per label, named `u` followed by the label's canonical text.
fn labelled_policy(poset: Poset) -> AuthenticationPolicy {
    let poset = Arc::new(poset);
    let mut policy = AuthenticationPolicy::new(Arc::clone(&poset));
    for x in poset.ids() {
        policy.users.insert(user(&poset, x), x);
    }
    policy
}

fn user(p: &Poset, x: LabelId) -> String {
    format!("u{}", p.id_str(x))
}

fn t4_network(seed: u64) -> Network {
    Network::new(labelled_policy(Poset::intervals(4).unwrap()), Suite::Deterministic, seed).unwrap()
}

const SWEPT: [ProtocolId; 10] = [
    ProtocolId::P6,
    ProtocolId::P7,
    ProtocolId::P8,
    ProtocolId::P9,
    ProtocolId::P10,
    ProtocolId::P11,
    ProtocolId::P12,
    ProtocolId::P13,
    ProtocolId::P16,
    ProtocolId::P17,
];

fn spec_for(protocol: ProtocolId, a: &str, b: &str, v: LabelId) -> SessionSpec {
    let spec = SessionSpec::new(protocol, a, b).with_v(v);
    match protocol {
        ProtocolId::P8 | ProtocolId::P13 => spec.with_w(v),
        _ => spec,
    }
}

/// Label the verifier should end up accepting on, if any, by brute force.
fn expected_clearance(p: &Poset, protocol: ProtocolId, la: LabelId, lb: LabelId, v: LabelId) -> Option<LabelId> {
    let w = if protocol == ProtocolId::P11 && !p.leq(v, lb) {
        let common: Vec<_> = p.ids().filter(|&z| p.leq(z, v) && p.leq(z, lb)).collect();
        let maximal: Vec<_> = common.iter().copied().filter(|&z| !common.iter().any(|&u| p.lt(z, u))).collect();
        assert!(maximal.len() <= 1, "T_4 common lower bounds have a greatest element");
        *maximal.first()?
    } else {
        v
    };
    (p.leq(w, la) && p.leq(w, lb)).then_some(w)
}

fn sweep(net: &mut Network, protocol: ProtocolId) -> (usize, usize) {
    let p = Arc::clone(&net.policy().poset);
    let mut admissible = 0;
    let mut total = 0;
    for la in p.ids() {
        for lb in p.ids() {
            for v in p.ids() {
                let (a, b) = (user(&p, la), user(&p, lb));
                let sid = format!("{protocol}/{}/{}/{}", p.id_str(la), p.id_str(lb), p.id_str(v));
                let t = net.run(&sid, spec_for(protocol, &a, &b, v)).unwrap();
                let o = t.outcome(&sid).unwrap();
                let vb = o.verdict(Role::Verifier).unwrap();
                let va = o.verdict(Role::Claimant).unwrap();
                let expected = expected_clearance(&p, protocol, la, lb, v);
                total += 1;
                match expected {
                    Some(w) => {
                        admissible += 1;
                        assert_eq!(vb, Verdict::Accept, "{sid}: verifier {t:?}");
                        assert!(va.is_accept() || va == Verdict::Completed, "{sid}: claimant {va}");
                        let clearance = o.state(Role::Verifier).unwrap().clearance;
                        assert_eq!(clearance, Some(w), "{sid}: clearance");
                    }
                    None => {
                        // soundness: no accept for an inadmissible triple
                        assert!(!vb.is_accept(), "{sid}: verifier accepted");
                        if matches!(protocol, ProtocolId::P8 | ProtocolId::P13) {
                            assert!(!va.is_accept() || p.leq(v, lb), "{sid}: claimant accepted");
                        }
                    }
                }
                if vb.is_accept() {
                    let c = o.state(Role::Verifier).unwrap().clearance.unwrap();
                    assert!(p.leq(c, la), "{sid}: accepted clearance not held by the claimant");
                }
            }
        }
    }
    (admissible, total)
}

#[test]
fn honest_completeness_and_soundness_over_t4() {
    let mut net = t4_network(1);
    for protocol in SWEPT {
        let (admissible, total) = sweep(&mut net, protocol);
        assert_eq!(total, 1000);
        // Triples with v below both clearances: sum over v of |up(v)|^2.
        // Negotiation also admits claimants below v once the counter-label
        // brings the challenge within reach.
        let expected = if protocol == ProtocolId::P11 { 315 } else { 147 };
        assert_eq!(admissible, expected, "{protocol}");
    }
}

#[test]
fn baselines_accept_honestly() {
    let mut net = t4_network(2);
    for k in 1..=5u8 {
        let sid = format!("base{k}");
        let t = baseline_session(&mut net, &Run::new(&sid, "u[1,2]", "u[3,4]"), k, SessionKeySource::Random).unwrap();
        let o = t.outcome(&sid).unwrap();
        assert_eq!(o.verdict(Role::Verifier), Some(Verdict::Accept), "p{k}");
        let va = o.verdict(Role::Claimant).unwrap();
        assert!(va.is_accept() || va == Verdict::Completed, "p{k}: {va}");
    }
}

#[test]
fn baseline_session_key_agrees_and_must_be_a_leaf() {
    let mut net = t4_network(3);
    let p = Arc::clone(&net.policy().poset);
    let t = baseline_session(&mut net, &Run::new("k-rand", "u[1,2]", "u[3,4]"), 3, SessionKeySource::Random).unwrap();
    let o = t.outcome("k-rand").unwrap();
    let (ka, kb) = (o.state(Role::Claimant).unwrap().session_key.clone(), o.state(Role::Verifier).unwrap().session_key.clone());
    assert!(ka.is_some());
    assert_eq!(ka, kb);

    let leaf = p.resolve("[3,3]").unwrap();
    let t = baseline_session(&mut net, &Run::new("k-leaf", "u[1,2]", "u[3,4]"), 3, SessionKeySource::KasLabel(leaf)).unwrap();
    assert_eq!(t.verdict("k-leaf", Role::Verifier), Some(Verdict::Accept));
    let inner = p.resolve("[3,4]").unwrap();
    let t = baseline_session(&mut net, &Run::new("k-inner", "u[1,2]", "u[3,4]"), 3, SessionKeySource::KasLabel(inner)).unwrap();
    assert_eq!(t.verdict("k-inner", Role::Verifier), Some(Verdict::Reject(RejectReason::SessionKeyNotLeaf)));
}

#[test]
fn antichain_policy_degenerates_to_pairwise_keys() {
    // Every user on their own incomparable label: only same-label pairs succeed.
    let text = "node a\nnode b\nnode c\nuser alice a\nuser alice2 a\nuser bob b\n";
    let policy = AuthenticationPolicy::parse(text).unwrap();
    let a = policy.poset.resolve("a").unwrap();
    let mut net = Network::new(policy, Suite::Production, 4).unwrap();
    let t = csl_unilateral_session(&mut net, &Run::new("same", "alice", "alice2"), a).unwrap();
    assert_eq!(t.verdict("same", Role::Verifier), Some(Verdict::Accept));
    let t = csl_unilateral_session(&mut net, &Run::new("cross", "alice", "bob"), a).unwrap();
    assert_eq!(t.verdict("cross", Role::Verifier), Some(Verdict::Reject(RejectReason::VerifierUnderCleared)));
}

#[test]
fn csl_examples() {
    let mut net = t4_network(5);
    let r = |s: &str| net.policy().poset.resolve(s).unwrap();
    let (v23, v13) = (r("[2,3]"), r("[1,3]"));
    let t = csl_unilateral_session(&mut net, &Run::new("ok", "u[1,4]", "u[1,4]"), v23).unwrap();
    assert_eq!(t.verdict("ok", Role::Verifier), Some(Verdict::Accept));
    let t = csl_unilateral_session(&mut net, &Run::new("low-a", "u[1,2]", "u[1,4]"), v23).unwrap();
    assert_eq!(t.verdict("low-a", Role::Claimant), Some(Verdict::Reject(RejectReason::CannotDerive)));
    assert!(!t.verdict("low-a", Role::Verifier).unwrap().is_accept());
    let t = csl_unilateral_session(&mut net, &Run::new("low-b", "u[1,4]", "u[1,2]"), v13).unwrap();
    assert_eq!(t.verdict("low-b", Role::Verifier), Some(Verdict::Reject(RejectReason::VerifierUnderCleared)));
    // rejected before any challenge is issued
    assert_eq!(t.session_messages("low-b").count(), 1);
}

#[test]
fn vsl_over_a_time_product() {
    let text = "poset product intervals 4 intervals 4\nuser a ([1,4],[1,4])\nuser a2 ([1,4],[3,4])\nuser b ([1,4],[1,4])\n";
    let policy = AuthenticationPolicy::parse(text).unwrap();
    let v = policy.poset.resolve("([2,3],[2,2])").unwrap();
    let mut net = Network::new(policy, Suite::Production, 6).unwrap();
    let t = vsl_unilateral_session(&mut net, &Run::new("t2", "a", "b"), None, Some(v)).unwrap();
    assert_eq!(t.verdict("t2", Role::Verifier), Some(Verdict::Accept));
    let t = vsl_unilateral_session(&mut net, &Run::new("t2-late", "a2", "b"), None, Some(v)).unwrap();
    assert_eq!(t.verdict("t2-late", Role::Claimant), Some(Verdict::Reject(RejectReason::CannotDerive)));
    assert!(!t.verdict("t2-late", Role::Verifier).unwrap().is_accept());
}

#[test]
fn vsl_uses_the_service_label() {
    let text = "poset intervals 4\nuser a [1,4]\nuser b [1,4]\nservice db [2,3]\n";
    let policy = AuthenticationPolicy::parse(text).unwrap();
    let db = policy.poset.resolve("[2,3]").unwrap();
    let mut net = Network::new(policy, Suite::Production, 7).unwrap();
    let t = vsl_unilateral_session(&mut net, &Run::new("s", "a", "b"), Some("db"), None).unwrap();
    let o = t.outcome("s").unwrap();
    assert_eq!(o.verdict(Role::Verifier), Some(Verdict::Accept));
    assert_eq!(o.state(Role::Verifier).unwrap().challenge, Some(db));
}

#[test]
fn mutual_examples() {
    let mut net = t4_network(8);
    let r = |s: &str| net.policy().poset.resolve(s).unwrap();
    let (v13, v23, v22) = (r("[1,3]"), r("[2,3]"), r("[2,2]"));
    // B under-cleared for v: A rejects, B never accepts
    let t = mutual_session(&mut net, &Run::new("under", "u[1,4]", "u[2,3]"), v13, v13).unwrap();
    let o = t.outcome("under").unwrap();
    assert!(!o.verdict(Role::Verifier).unwrap().is_accept());
    assert!(!o.verdict(Role::Claimant).unwrap().is_accept());
    // asymmetric labels, both cleared
    let t = mutual_session(&mut net, &Run::new("asym", "u[2,3]", "u[1,4]"), v22, v23).unwrap();
    let o = t.outcome("asym").unwrap();
    assert_eq!(o.verdict(Role::Verifier), Some(Verdict::Accept));
    assert_eq!(o.verdict(Role::Claimant), Some(Verdict::Accept));
}

#[test]
fn protected_nonce_session_key_is_transcript_bound() {
    use kas_auth_core::crypto::derive_session_key;
    let mut net = t4_network(9);
    let v = net.policy().poset.resolve("[2,3]").unwrap();
    let t = protected_nonce_session(&mut net, &Run::new("p10", "u[1,4]", "u[2,3]"), v, true).unwrap();
    let o = t.outcome("p10").unwrap();
    assert_eq!(o.verdict(Role::Verifier), Some(Verdict::Accept));
    let ka = o.state(Role::Claimant).unwrap().session_key.clone().unwrap();
    let kb = o.state(Role::Verifier).unwrap().session_key.clone().unwrap();
    assert_eq!(ka, kb);
    // recompute from the nonce and the first two messages
    let msgs: Vec<_> = t.session_messages("p10").collect();
    let nb = o.state(Role::Verifier).unwrap().nonces_issued[0];
    let mut ctx = b"kas-auth/p10/session".to_vec();
    ctx.extend_from_slice(&msgs[0].bytes);
    ctx.extend_from_slice(&msgs[1].bytes);
    assert_eq!(derive_session_key(&nb.0, &ctx).unwrap(), ka);
    // a wrong nonce gives a different key
    assert_ne!(derive_session_key(&[0u8; 16], &ctx).unwrap(), ka);
    // no plaintext nonce on the wire
    for m in &msgs {
        let d = ProtocolMessage::decode(&m.bytes).unwrap();
        assert!(d.fields.iter().all(|f| !matches!(f, Field::Nonce(_))));
    }
}

fn brute_force_mclb(p: &Poset, x: LabelId, y: LabelId) -> Vec<LabelId> {
    let common: Vec<_> = p.ids().filter(|&z| p.leq(z, x) && p.leq(z, y)).collect();
    common.iter().copied().filter(|&z| !common.iter().any(|&u| u != z && p.leq(z, u))).collect()
}

fn negotiation_oracle(poset: Poset, seed: u64) -> usize {
    let mut net = Network::new(labelled_policy(poset), Suite::Deterministic, seed).unwrap();
    let p = Arc::clone(&net.policy().poset);
    let top = p.maximal()[0];
    let mut negotiated = 0;
    for v in p.ids() {
        for lb in p.ids() {
            let sid = format!("neg/{}/{}", p.id_str(v), p.id_str(lb));
            let t = negotiation_session(&mut net, &Run::new(&sid, &user(&p, top), &user(&p, lb)), v, None).unwrap();
            let o = t.outcome(&sid).unwrap();
            let oracle = brute_force_mclb(&p, v, lb);
            assert!(oracle.len() <= 1);
            match oracle.first() {
                Some(&w) => {
                    assert_eq!(o.verdict(Role::Verifier), Some(Verdict::Accept), "{sid}");
                    assert_eq!(o.state(Role::Verifier).unwrap().clearance, Some(w), "{sid}");
                    assert_eq!(o.state(Role::Claimant).unwrap().response_label, Some(w), "{sid}");
                    if w != v {
                        negotiated += 1;
                    }
                }
                None => {
                    assert_eq!(o.verdict(Role::Verifier), Some(Verdict::Reject(RejectReason::NoCommonDescendant)), "{sid}");
                    assert_eq!(o.verdict(Role::Claimant), Some(Verdict::Reject(RejectReason::NoCommonDescendant)), "{sid}");
                }
            }
        }
    }
    negotiated
}

#[test]
fn negotiation_matches_brute_force_over_t4_and_powerset() {
    // pairs with v not below lambda(B) but a common descendant
    assert_eq!(negotiation_oracle(Poset::intervals(4).unwrap(), 10), 35);
    assert_eq!(negotiation_oracle(Poset::powerset(3).unwrap(), 11), 64 - 27);
}

#[test]
fn negotiation_records_the_lower_label() {
    let text = "poset chain 3\nuser a 2\nuser b 1\n";
    let policy = AuthenticationPolicy::parse(text).unwrap();
    let (x, z) = (policy.poset.resolve("1").unwrap(), policy.poset.resolve("3").unwrap());
    let mut net = Network::new(policy, Suite::Production, 12).unwrap();
    let t = negotiation_session(&mut net, &Run::new("n", "a", "b"), z, None).unwrap();
    let o = t.outcome("n").unwrap();
    assert_eq!(o.verdict(Role::Verifier), Some(Verdict::Accept));
    assert_eq!(o.state(Role::Verifier).unwrap().clearance, Some(x));
    assert_eq!(o.state(Role::Verifier).unwrap().challenge, Some(z));
}

#[test]
fn negotiation_below_service_minimum_terminates() {
    let text = "poset powerset 2\nuser a {1,2}\nuser b {2}\nservice s {1}\n";
    let policy = AuthenticationPolicy::parse(text).unwrap();
    let v = policy.poset.resolve("{1}").unwrap();
    let mut net = Network::new(policy, Suite::Production, 13).unwrap();
    let t = negotiation_session(&mut net, &Run::new("n", "a", "b"), v, Some("s")).unwrap();
    let o = t.outcome("n").unwrap();
    assert_eq!(o.verdict(Role::Verifier), Some(Verdict::Reject(RejectReason::BelowServiceMinimum)));
    assert_eq!(o.verdict(Role::Claimant), Some(Verdict::Reject(RejectReason::BelowServiceMinimum)));
}

#[test]
fn timestamp_window_and_sequence_replay() {
    let mut net = t4_network(14);
    let v = net.policy().poset.resolve("[2,3]").unwrap();
    net.advance(10);
    let t = timestamp_session(&mut net, &Run::new("ts", "u[1,4]", "u[1,4]"), v, None, Freshness::Timestamp).unwrap();
    assert_eq!(t.verdict("ts", Role::Verifier), Some(Verdict::Accept));
    net.set_skew("u[1,3]", -3).unwrap();
    let t = timestamp_session(&mut net, &Run::new("lag", "u[1,3]", "u[1,4]"), v, None, Freshness::Timestamp).unwrap();
    assert_eq!(t.verdict("lag", Role::Verifier), Some(Verdict::Reject(RejectReason::StaleTimestamp)));

    // sequence mode: the same message twice
    net.start_session("seq", SessionSpec::new(ProtocolId::P12, "u[2,4]", "u[1,4]").with_v(v).with_freshness(Freshness::Sequence)).unwrap();
    let env = net.queue().front().unwrap().clone();
    net.flush();
    net.finish_session("seq").unwrap();
    assert_eq!(net.transcript().verdict("seq", Role::Verifier), Some(Verdict::Accept));
    net.start_session("seq2", SessionSpec::new(ProtocolId::P12, "u[2,4]", "u[1,4]").with_v(v).with_freshness(Freshness::Sequence)).unwrap();
    net.queue_mut().clear();
    net.deliver(Envelope { session: "seq2".into(), ..env });
    net.finish_session("seq2").unwrap();
    assert_eq!(net.transcript().verdict("seq2", Role::Verifier), Some(Verdict::Reject(RejectReason::SequenceReplay)));
}

#[test]
fn clock_skew_grid() {
    let w = kas_auth_core::policy::DEFAULT_WINDOW as i64;
    for mutual in [false, true] {
        let mut net = t4_network(15);
        let v = net.policy().poset.resolve("[2,3]").unwrap();
        net.advance(20);
        for skew in -6i64..=6 {
            net.set_skew("u[1,4]", skew).unwrap();
            let sid = format!("skew{skew}/{mutual}");
            let t = timestamp_session(&mut net, &Run::new(&sid, "u[1,4]", "u[2,4]"), v, mutual.then_some(v), Freshness::Timestamp).unwrap();
            let accepted = t.verdict(&sid, Role::Verifier) == Some(Verdict::Accept);
            assert_eq!(accepted, skew.abs() <= w, "{sid}");
            if mutual && accepted {
                assert_eq!(t.verdict(&sid, Role::Claimant), Some(Verdict::Accept), "{sid}");
            }
        }
    }
}

fn ttp_policy() -> AuthenticationPolicy {
    AuthenticationPolicy::parse("poset intervals 4\nuser alice [2,3]\nuser carol [2,3]\nuser bob [1,4]\nuser dave [1,4]\n").unwrap()
}

#[test]
fn ttp_protocols_accept_and_bind_identity() {
    let policy = ttp_policy();
    let v = policy.poset.resolve("[2,3]").unwrap();
    let mut net = Network::new(policy, Suite::Production, 16).unwrap();
    let t = ttp_identity_session(&mut net, &Run::new("p16", "alice", "bob"), v).unwrap();
    let o = t.outcome("p16").unwrap();
    assert_eq!(o.verdict(Role::Verifier), Some(Verdict::Accept));
    assert_eq!(o.state(Role::Verifier).unwrap().peer_id, "alice");

    let t = ttp_ake_session(&mut net, &Run::new("p17", "alice", "bob"), v).unwrap();
    let o = t.outcome("p17").unwrap();
    assert_eq!(o.verdict(Role::Verifier), Some(Verdict::Accept));
    let ka = o.state(Role::Claimant).unwrap().session_key.clone().unwrap();
    assert_eq!(Some(ka.clone()), o.state(Role::Verifier).unwrap().session_key.clone());
    let nb = o.state(Role::Verifier).unwrap().nonces_issued[0];
    let expect = kas_auth_core::crypto::keyed_digest(&net.ttp_key("alice"), &nb.0);
    assert_eq!(ka.as_bytes(), &expect);
}

#[test]
fn same_group_impersonation_fails() {
    let policy = ttp_policy();
    let v = policy.poset.resolve("[2,3]").unwrap();
    let mut net = Network::new(policy, Suite::Production, 17).unwrap();
    for protocol in [ProtocolId::P16, ProtocolId::P17] {
        let sid = format!("imp/{protocol}");
        let spec = SessionSpec::new(protocol, "carol", "bob").with_v(v).with_claim("alice");
        let t = net.run(&sid, spec).unwrap();
        let vb = t.verdict(&sid, Role::Verifier).unwrap();
        assert!(!vb.is_accept(), "{protocol}: {vb}");
        let expected = if protocol == ProtocolId::P16 { RejectReason::DigestMismatch } else { RejectReason::BadCiphertext };
        assert_eq!(vb, Verdict::Reject(expected));
    }
}

#[test]
fn stored_digest_does_not_transfer_to_a_new_run() {
    let policy = ttp_policy();
    let v = policy.poset.resolve("[2,3]").unwrap();
    let mut net = Network::new(policy, Suite::Production, 18).unwrap();
    let suite = net.suite();
    let kv = net.keyring().trusted_center().node_key(v).unwrap().clone();
    // bob learns H(kappa_alice, eta) by verifying alice once
    let t = ttp_identity_session(&mut net, &Run::new("first", "alice", "bob"), v).unwrap();
    let m5 = t.session_messages("first").last().unwrap().clone();
    let m5 = ProtocolMessage::decode(&m5.bytes).unwrap();
    let Field::Sealed(ct) = &m5.fields[0] else { panic!() };
    let inner = decode_plaintext(&suite.ae_decrypt(&kv, ct, &m5.context()).unwrap()).unwrap();
    let stored = inner.iter().find_map(|f| if let Field::Digest(d) = f { Some(d.clone()) } else { None }).unwrap();

    // bob now claims to be alice towards dave, swapping in the stored digest
    let spec = SessionSpec::new(ProtocolId::P16, "bob", "dave").with_v(v).with_claim("alice");
    net.start_session("second", spec).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    while let Some(env) = net.queue_mut().pop_front() {
        let mut msg = ProtocolMessage::decode(&env.bytes).unwrap();
        if msg.index == 5 {
            let Field::Sealed(ct) = &msg.fields[0] else { panic!() };
            let mut fields = decode_plaintext(&suite.ae_decrypt(&kv, ct, &msg.context()).unwrap()).unwrap();
            for f in &mut fields {
                if let Field::Digest(d) = f {
                    *d = stored.clone();
                }
            }
            msg.fields[0] = Field::Sealed(suite.ae_encrypt(&kv, &encode_plaintext(&fields), &msg.context(), &mut rng));
        }
        net.deliver(Envelope { bytes: msg.encode(), ..env });
    }
    net.finish_session("second").unwrap();
    assert_eq!(net.transcript().verdict("second", Role::Verifier), Some(Verdict::Reject(RejectReason::DigestMismatch)));
}

#[test]
fn silent_ttp_times_out() {
    let policy = ttp_policy();
    let v = policy.poset.resolve("[2,3]").unwrap();
    let mut net = Network::new(policy, Suite::Production, 19).unwrap();
    net.start_session("quiet", SessionSpec::new(ProtocolId::P16, "alice", "bob").with_v(v)).unwrap();
    while let Some(env) = net.queue_mut().pop_front() {
        if env.to != Role::Ttp {
            net.deliver(env);
        }
    }
    net.finish_session("quiet").unwrap();
    assert_eq!(net.transcript().verdict("quiet", Role::Verifier), Some(Verdict::Reject(RejectReason::TtpUnavailable)));
}

#[test]
fn tampered_ttp_message_rejects_before_challenge() {
    let policy = ttp_policy();
    let v = policy.poset.resolve("[2,3]").unwrap();
    let mut net = Network::new(policy, Suite::Production, 20).unwrap();
    net.start_session("tamper", SessionSpec::new(ProtocolId::P17, "alice", "bob").with_v(v)).unwrap();
    while let Some(mut env) = net.queue_mut().pop_front() {
        if env.from == Role::Ttp {
            let last = env.bytes.len() - 1;
            env.bytes[last] ^= 1;
        }
        net.deliver(env);
    }
    net.finish_session("tamper").unwrap();
    let t = net.transcript().for_session("tamper");
    assert_eq!(t.verdict("tamper", Role::Verifier), Some(Verdict::Reject(RejectReason::BadCiphertext)));
    assert!(t.session_messages("tamper").all(|m| m.index != Some(4)));
}

/// Two claimants with one label and one seed are indistinguishable on the wire.
#[test]
fn same_label_claimants_produce_identical_transcripts() {
    let text = "poset intervals 4\nuser alice [2,3]\nuser carol [2,3]\nuser bob [1,4]\n";
    for protocol in [ProtocolId::P6, ProtocolId::P7, ProtocolId::P9, ProtocolId::P12] {
        let mut bytes = Vec::new();
        for claimant in ["alice", "carol"] {
            let policy = AuthenticationPolicy::parse(text).unwrap();
            let v = policy.poset.resolve("[2,3]").unwrap();
            let mut net = Network::new(policy, Suite::Production, 21).unwrap();
            let t = net.run("anon", SessionSpec::new(protocol, claimant, "bob").with_v(v)).unwrap();
            assert_eq!(t.verdict("anon", Role::Verifier), Some(Verdict::Accept));
            let wire: Vec<Vec<u8>> = t.messages().map(|m| m.bytes.clone()).collect();
            for m in &wire {
                assert!(!m.windows(claimant.len()).any(|w| w == claimant.as_bytes()));
            }
            bytes.push(wire);
        }
        assert_eq!(bytes[0], bytes[1], "{protocol}");
    }
}

#[test]
fn ciphertexts_are_bound_to_their_position() {
    let suite = Suite::Production;
    let mut rng = ChaCha20Rng::seed_from_u64(22);
    let key = kas_auth_core::crypto::SymmetricKey::generate(&mut rng, kas_auth_core::crypto::KeyOrigin::External);
    let roles = [Role::Claimant, Role::Verifier, Role::Ttp, Role::Tts, Role::Board];
    let mut positions = Vec::new();
    for p in ProtocolId::ALL {
        for i in 1..=5 {
            for &f in &roles {
                for &t in &roles {
                    if f != t {
                        positions.push(context(p, i, f, t));
                    }
                }
            }
        }
    }
    let samples: Vec<_> = positions.iter().step_by(7).collect();
    for own in &samples {
        let ct = suite.ae_encrypt(&key, b"payload", own, &mut rng);
        for other in &positions {
            assert_eq!(suite.ae_decrypt(&key, &ct, other).is_ok(), other == *own);
        }
    }
}

#[test]
fn replayed_response_is_rejected() {
    let mut net = t4_network(23);
    let v = net.policy().poset.resolve("[2,3]").unwrap();
    for protocol in [ProtocolId::P1, ProtocolId::P6, ProtocolId::P9, ProtocolId::P10, ProtocolId::P11] {
        let old = format!("old/{protocol}");
        let t = net.run(&old, spec_for(protocol, "u[1,4]", "u[2,3]", v)).unwrap();
        let last = t.session_messages(&old).last().unwrap().clone();
        let new = format!("new/{protocol}");
        net.start_session(&new, spec_for(protocol, "u[1,4]", "u[2,3]", v)).unwrap();
        // let the fresh challenge through, then swap the answer for the old one
        while let Some(env) = net.queue_mut().pop_front() {
            let index = ProtocolMessage::decode(&env.bytes).unwrap().index;
            if index == 3 {
                net.deliver(Envelope { bytes: last.bytes.clone(), ..env });
            } else {
                net.deliver(env);
            }
        }
        net.finish_session(&new).unwrap();
        assert!(!net.transcript().verdict(&new, Role::Verifier).unwrap().is_accept(), "{protocol}");
    }
}
