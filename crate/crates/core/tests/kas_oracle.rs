use std::collections::BTreeSet;
use std::sync::Arc;

use kas_auth_core::crypto::{KeyOrigin, Suite, SymmetricKey};
use kas_auth_core::kas::{derive_key, edge_context, kas_setup, DeriveError, KasPublicInfo, KasTrustedCenter};
use kas_auth_core::poset::{LabelId, Poset};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn t4_setup(suite: Suite, seed: u64) -> (KasTrustedCenter, KasPublicInfo) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    kas_setup(Arc::new(Poset::intervals(4).unwrap()), suite, &mut rng)
}

/// Interval containment read off the label text.
fn contained(p: &Poset, inner: LabelId, outer: LabelId) -> bool {
    let bounds = |x: LabelId| {
        let s = p.id_str(x).trim_matches(|c| c == '[' || c == ']').to_string();
        let (a, b) = s.split_once(',').unwrap();
        (a.parse::<i64>().unwrap(), b.parse::<i64>().unwrap())
    };
    let ((a, b), (c, d)) = (bounds(inner), bounds(outer));
    c <= a && b <= d
}

#[test]
fn derivability_matches_order_for_all_t4_pairs() {
    for suite in [Suite::Production, Suite::Deterministic] {
        let (tc, public) = t4_setup(suite, 5);
        let p = Arc::clone(tc.poset());
        let mut ok = 0;
        for x in p.ids() {
            for y in p.ids() {
                let r = derive_key(suite, &public, &p, x, tc.node_key(x).unwrap(), y);
                assert_eq!(r.is_ok(), contained(&p, y, x), "{} -> {}", p.id_str(x), p.id_str(y));
                if let Ok(d) = r {
                    assert_eq!(&d.key, tc.node_key(y).unwrap());
                    ok += 1;
                } else {
                    assert!(matches!(r, Err(DeriveError::NotDominated { .. })));
                }
            }
        }
        assert_eq!(ok, 35);
    }
}

/// Everything a coalition can compute: close its keys under decryption of
/// every public token with every known key, ignoring the poset entirely.
fn coalition_closure(suite: Suite, tc: &KasTrustedCenter, public: &KasPublicInfo, members: &[LabelId]) -> Vec<SymmetricKey> {
    let p = tc.poset();
    let mut known: Vec<SymmetricKey> = members.iter().map(|&m| tc.node_key(m).unwrap().clone()).collect();
    let contexts: Vec<_> = public.edges().map(|(a, b)| (a, b, edge_context(p, a, b))).collect();
    loop {
        let mut grew = false;
        for &(a, b, _) in &contexts {
            let ct = public.token(a, b).unwrap();
            for k in known.clone() {
                // every context is tried, so a mislabeled token would be found too
                for (_, _, other) in &contexts {
                    if let Ok(bytes) = suite.ae_decrypt(&k, ct, other) {
                        let key = SymmetricKey::from_slice(&bytes, KeyOrigin::KasNode).unwrap();
                        if !known.contains(&key) {
                            known.push(key);
                            grew = true;
                        }
                    }
                }
            }
        }
        if !grew {
            return known;
        }
    }
}

#[test]
fn coalitions_recover_only_authorized_keys() {
    let suite = Suite::Deterministic;
    let (tc, public) = t4_setup(suite, 17);
    let p = Arc::clone(tc.poset());
    let labels: Vec<LabelId> = p.ids().collect();
    let mut coalitions: Vec<Vec<LabelId>> = Vec::new();
    for i in 0..labels.len() {
        coalitions.push(vec![labels[i]]);
        for j in i + 1..labels.len() {
            coalitions.push(vec![labels[i], labels[j]]);
            for k in j + 1..labels.len() {
                coalitions.push(vec![labels[i], labels[j], labels[k]]);
            }
        }
    }
    assert_eq!(coalitions.len(), 10 + 45 + 120);
    let mut unauthorized = 0;
    for s in &coalitions {
        let known = coalition_closure(suite, &tc, &public, s);
        for y in p.ids() {
            let recovered = known.contains(tc.node_key(y).unwrap());
            let authorized = s.iter().any(|&m| contained(&p, y, m));
            assert!(!authorized || recovered, "authorized key not derivable");
            if recovered && !authorized {
                unauthorized += 1;
            }
        }
    }
    assert_eq!(unauthorized, 0);
}

#[test]
fn withholding_edges_only_shrinks_reach() {
    let suite = Suite::Deterministic;
    let (tc, public) = t4_setup(suite, 23);
    let p = Arc::clone(tc.poset());
    let edges: Vec<_> = p.cover_edges().to_vec();
    // every subset of the first six edges, withheld
    for mask in 0u32..64 {
        let withheld: Vec<_> = (0..6).filter(|b| mask >> b & 1 == 1).map(|b| edges[b]).collect();
        let fewer = public.withhold_edges(&p, &withheld).unwrap();
        for x in p.ids() {
            for y in p.ids() {
                let full = derive_key(suite, &public, &p, x, tc.node_key(x).unwrap(), y).is_ok();
                let part = derive_key(suite, &fewer, &p, x, tc.node_key(x).unwrap(), y);
                assert!(!part.is_ok() || full);
                if let Ok(d) = &part {
                    for s in d.path.windows(2) {
                        assert!(!withheld.contains(&(s[0], s[1])));
                    }
                }
                // reachable without the withheld edges iff some surviving path exists
                let reachable = p.derivation_path_over(x, y, |a, b| !withheld.contains(&(a, b))).is_some();
                assert_eq!(part.is_ok(), reachable);
            }
        }
    }
}

#[test]
fn node_keys_do_not_open_foreign_tokens() {
    let suite = Suite::Production;
    let (tc, public) = t4_setup(suite, 29);
    let p = Arc::clone(tc.poset());
    for (a, b) in public.edges() {
        let ct = public.token(a, b).unwrap();
        for k in p.ids() {
            let opened = suite.ae_decrypt(tc.node_key(k).unwrap(), ct, &edge_context(&p, a, b)).is_ok();
            assert_eq!(opened, k == a);
        }
        for (c, d) in public.edges() {
            if (c, d) != (a, b) {
                assert!(suite.ae_decrypt(tc.node_key(a).unwrap(), ct, &edge_context(&p, c, d)).is_err());
            }
        }
    }
}

#[test]
fn product_derivation_cost_is_sum_of_components() {
    let t4 = Poset::intervals(4).unwrap();
    let c3 = Poset::chain(3).unwrap();
    let prod = Arc::new(Poset::product(&t4, &c3).unwrap());
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let suite = Suite::Deterministic;
    let (tc, public) = kas_setup(Arc::clone(&prod), suite, &mut rng);
    let n3 = c3.len();
    for x in prod.ids() {
        for y in prod.ids() {
            let Ok(d) = derive_key(suite, &public, &prod, x, tc.node_key(x).unwrap(), y) else { continue };
            // product index is a * |C_3| + b
            let (xa, xb) = (x.index() / n3, x.index() % n3);
            let (ya, yb) = (y.index() / n3, y.index() % n3);
            let la = t4.derivation_path(t4.ids().nth(xa).unwrap(), t4.ids().nth(ya).unwrap()).unwrap().len() - 1;
            let lb = c3.derivation_path(c3.ids().nth(xb).unwrap(), c3.ids().nth(yb).unwrap()).unwrap().len() - 1;
            assert_eq!(d.decryptions(), la + lb);
        }
    }
}

#[test]
fn root_reservation_blocks_maximal_credentials() {
    let (mut tc, _) = t4_setup(Suite::Deterministic, 3);
    let p = Arc::clone(tc.poset());
    let top = p.resolve("[1,4]").unwrap();
    assert!(tc.issue_credential("u", top).is_ok());
    tc.set_root_reserved(true);
    assert!(tc.issue_credential("v", top).is_err());
    assert!(tc.issue_credential("w", p.resolve("[1,3]").unwrap()).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn derivation_works_for_any_seed(seed in any::<u64>(), i in 0usize..10, j in 0usize..10) {
        let (tc, public) = t4_setup(Suite::Production, seed);
        let p = Arc::clone(tc.poset());
        let (x, y) = (p.ids().nth(i).unwrap(), p.ids().nth(j).unwrap());
        let r = derive_key(Suite::Production, &public, &p, x, tc.node_key(x).unwrap(), y);
        prop_assert_eq!(r.is_ok(), p.leq(y, x));
        if let Ok(d) = r {
            prop_assert_eq!(&d.key, tc.node_key(y).unwrap());
        }
    }

    #[test]
    fn node_keys_are_distinct(seed in any::<u64>()) {
        let (tc, _) = t4_setup(Suite::Deterministic, seed);
        let keys: BTreeSet<[u8; 32]> = tc.poset().ids().map(|x| *tc.node_key(x).unwrap().as_bytes()).collect();
        prop_assert_eq!(keys.len(), 10);
    }
}
