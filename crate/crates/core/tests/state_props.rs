use std::collections::{BTreeSet, HashSet};
use std::net::{IpAddr, Ipv4Addr};

use proptest::prelude::*;
use prometheus_core::audit::{actions, AuditLog, Outcome};
use prometheus_core::guard::{AdmitReject, AdmitVerdict, GuardConfig, GuardState};
use prometheus_core::identity::{
    check_access, AccessDecision, AccessPolicy, AclEntry, FactorKind, FactorSet, IdentityError, Principal, Registry,
};
use prometheus_core::session::{
    authorize_request, establish_trusted_context, Authorization, ContextScope, EncryptionLevel, Freshness,
    FreshnessWindow, Nonce, SessionDeny, SessionStore, TrustedContext,
};
use prometheus_core::time::SECONDS_PER_DAY;
use prometheus_core::token::{TokenSeed, TokenStore, TokenVerdict};
use prometheus_core::Timestamp;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const T0: Timestamp = Timestamp::from_unix(1_790_000_000);

fn ip(last: u8) -> IpAddr {
    IpAddr::V4(Ipv4Addr::new(10, 0, 0, last))
}

fn store_with_seed(seed: [u8; 20]) -> TokenStore {
    let mut store = TokenStore::new();
    store.insert(TokenSeed::new("pilot1", seed, 30, 6).unwrap());
    store
}

#[derive(Clone, Debug)]
enum CodeChoice {
    Current,
    Offset(i64),
    Random(u32),
}

fn code_choice() -> impl Strategy<Value = CodeChoice> {
    prop_oneof![
        3 => Just(CodeChoice::Current),
        2 => (-3i64..=3).prop_map(CodeChoice::Offset),
        1 => (0u32..1_000_000).prop_map(CodeChoice::Random),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn no_code_is_accepted_twice_and_counter_never_decreases(
        seed in any::<[u8; 20]>(),
        steps in proptest::collection::vec((0i64..50, code_choice()), 1..40),
    ) {
        let mut store = store_with_seed(seed);
        let mut now = T0;
        let mut accepted = HashSet::new();
        let mut last = store.get("pilot1").unwrap().last_accepted_counter();
        for (dt, choice) in steps {
            now = now.plus_seconds(dt);
            let token = store.get("pilot1").unwrap().clone();
            let code = match choice {
                CodeChoice::Current => token.code_for_counter(token.counter_at(now)),
                CodeChoice::Offset(k) => token.code_for_counter(token.counter_at(now) + k),
                CodeChoice::Random(n) => format!("{n:06}"),
            };
            if let TokenVerdict::Accept { counter } = store.verify_token("pilot1", &code, now) {
                prop_assert!(accepted.insert(counter), "counter {} accepted twice", counter);
                prop_assert_eq!(token.code_for_counter(counter), code);
            }
            let current = store.get("pilot1").unwrap().last_accepted_counter();
            prop_assert!(current >= last);
            last = current;
        }
    }

    #[test]
    fn codes_are_accepted_within_one_step_of_generation(
        seed in any::<[u8; 20]>(),
        t in 0i64..4_000_000_000,
        dt in -45i64..=45,
    ) {
        let gen = Timestamp::from_unix(t);
        let check = gen.plus_seconds(dt);
        let mut store = store_with_seed(seed);
        let token = store.get("pilot1").unwrap().clone();
        let code = token.code_for_counter(token.counter_at(gen));
        let distance = (token.counter_at(check) - token.counter_at(gen)).abs();
        prop_assume!(distance <= 1);
        let accepted = matches!(store.verify_token("pilot1", &code, check), TokenVerdict::Accept { .. });
        prop_assert!(accepted);
    }

    #[test]
    fn codes_have_exactly_the_configured_digits(
        seed in any::<[u8; 20]>(),
        counter in 0i64..i64::MAX / 2,
        digits in 6u8..=9,
    ) {
        let token = TokenSeed::new("p", seed, 30, digits).unwrap();
        let code = token.code_for_counter(counter);
        prop_assert_eq!(code.len(), digits as usize);
        prop_assert!(code.bytes().all(|b| b.is_ascii_digit()));
    }
}

const ROLES: [&str; 4] = ["pilot", "instructor", "engineer", "admin"];

fn role_subset(mask: u8) -> Vec<&'static str> {
    ROLES.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, r)| *r).collect()
}

fn factor_set(mask: u8) -> FactorSet {
    FactorKind::ALL.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, k)| *k).collect()
}

proptest! {
    #[test]
    fn access_never_allowed_when_roles_are_disjoint(
        principal_mask in 0u8..16,
        allowed_mask in 1u8..16,
        factor_mask in 0u8..8,
        hardware in any::<bool>(),
        admin_resource in any::<bool>(),
    ) {
        let mut principal = Principal::new("u1", role_subset(principal_mask));
        principal.hardware_credential = hardware;
        let admin = if admin_resource { vec!["res".to_string()] } else { vec![] };
        let policy = AccessPolicy::new([AclEntry::new("res", role_subset(allowed_mask))], admin).unwrap();
        let decision = check_access(&principal, "res", &policy, factor_set(factor_mask));
        if principal_mask & allowed_mask == 0 {
            prop_assert_ne!(decision, AccessDecision::Allow);
        }
        if decision == AccessDecision::Allow {
            prop_assert!(factor_set(factor_mask).len() >= 2);
            if admin_resource {
                prop_assert!(hardware);
                prop_assert!(factor_set(factor_mask).contains(FactorKind::Certificate));
                prop_assert!(factor_set(factor_mask).contains(FactorKind::Token));
            }
        }
    }

    #[test]
    fn registry_size_counts_successful_onboards(ids in proptest::collection::vec(0u16..40, 0..80), cap in 1usize..30) {
        let mut registry = Registry::with_capacity(cap);
        let mut ok = 0;
        for id in ids {
            match registry.onboard(Principal::new(&format!("user{id}"), ["pilot"])) {
                Ok(_) => ok += 1,
                Err(IdentityError::DuplicateId(_)) | Err(IdentityError::CapacityExceeded(_)) => {}
                Err(other) => prop_assert!(false, "unexpected {other:?}"),
            }
            prop_assert_eq!(registry.len(), ok);
            prop_assert!(registry.len() <= cap);
        }
    }

    #[test]
    fn each_grant_adds_exactly_one_audit_record(grants in proptest::collection::vec((0usize..3, 0usize..4, any::<bool>()), 0..20)) {
        let mut registry = Registry::default();
        for id in ["a", "b"] {
            registry.onboard(Principal::new(id, ["pilot"])).unwrap();
        }
        let mut audit = AuditLog::new();
        for (who, role, ticketed) in grants {
            let id = ["a", "b", "ghost"][who];
            let ticket = if ticketed { "CHG-1" } else { " " };
            let before = audit.len();
            let ok = registry.grant_role(id, ROLES[role], ticket, &mut audit, T0).is_ok();
            prop_assert_eq!(audit.len(), before + usize::from(ok));
            if ok {
                prop_assert_eq!(&audit.records().last().unwrap().action, actions::PRIVILEGE_CHANGE);
            }
        }
    }
}

#[derive(Clone, Debug)]
enum GuardEvent {
    Admit(u8),
    Release(u8),
    Failure(u8),
    Success(u8),
    Advance(i64),
}

fn guard_event() -> impl Strategy<Value = GuardEvent> {
    prop_oneof![
        (1u8..=3).prop_map(GuardEvent::Admit),
        (1u8..=3).prop_map(GuardEvent::Release),
        (1u8..=3).prop_map(GuardEvent::Failure),
        (1u8..=3).prop_map(GuardEvent::Success),
        (0i64..2 * SECONDS_PER_DAY).prop_map(GuardEvent::Advance),
    ]
}

proptest! {
    #[test]
    fn guard_state_invariants(events in proptest::collection::vec(guard_event(), 0..60)) {
        // ip(3) is not whitelisted.
        let config = GuardConfig { max_concurrent_per_ip: 3, ..GuardConfig::default() };
        let mut guard = GuardState::new(config, [ip(1), ip(2)]);
        let mut now = T0;
        let mut open = [0u32; 4];
        for event in events {
            match event {
                GuardEvent::Admit(n) => {
                    let before = guard.cooldown_until(ip(n), now);
                    let verdict = guard.admit(ip(n), now);
                    if n == 3 {
                        prop_assert_eq!(verdict, AdmitVerdict::Reject(AdmitReject::NotWhitelisted));
                        if before.is_some() {
                            prop_assert_eq!(guard.cooldown_until(ip(n), now), before);
                        }
                    }
                    if verdict == AdmitVerdict::Admit {
                        open[n as usize] += 1;
                    }
                }
                GuardEvent::Release(n) => {
                    if guard.release(ip(n)).is_ok() {
                        prop_assert!(open[n as usize] > 0);
                        open[n as usize] -= 1;
                    } else {
                        prop_assert_eq!(open[n as usize], 0);
                    }
                }
                GuardEvent::Failure(n) => {
                    let before = guard.cooldown_until(ip(n), now);
                    guard.record_failure(ip(n), now);
                    if let Some(until) = before {
                        prop_assert_eq!(guard.cooldown_until(ip(n), now), Some(until));
                    }
                }
                GuardEvent::Success(n) => guard.record_success(ip(n)),
                GuardEvent::Advance(dt) => now = now.plus_seconds(dt),
            }
            for n in 1..=3u8 {
                prop_assert_eq!(guard.active_connections(ip(n)), open[n as usize]);
                prop_assert!(open[n as usize] <= 3);
                prop_assert!(guard.failure_count(ip(n)) < 3);
            }
            for event in guard.take_events() {
                prop_assert_eq!(event.until, event.started_at.plus_seconds(SECONDS_PER_DAY));
            }
        }
    }
}

fn sso_world() -> (Registry, AccessPolicy) {
    let mut registry = Registry::default();
    let mut admin = Principal::new("chief", ["pilot", "staff", "admin"]);
    admin.hardware_credential = true;
    registry.onboard(admin).unwrap();
    registry.onboard(Principal::new("pilot1", ["pilot", "staff"])).unwrap();
    let policy = AccessPolicy::new(
        [
            AclEntry::new("flight-simulator", ["pilot"]),
            AclEntry::new("back-office", ["staff"]),
            AclEntry::new("admin-console", ["admin"]),
        ],
        ["admin-console".to_string()],
    )
    .unwrap();
    (registry, policy)
}

proptest! {
    #[test]
    fn sessions_always_carry_two_factors(factor_mask in 0u8..8) {
        let mut rng = ChaCha20Rng::seed_from_u64(factor_mask as u64);
        let mut store = SessionStore::new(60);
        let factors = factor_set(factor_mask);
        match store.issue("pilot1", ip(1), factors, T0, &mut rng) {
            Ok(s) => {
                prop_assert!(s.factors.len() >= 2);
                prop_assert_eq!(s.expires_at, s.issued_at.plus_seconds(3600));
            }
            Err(_) => prop_assert!(factors.len() < 2),
        }
    }

    #[test]
    fn hijacked_session_is_dead_from_every_ip(
        requests in proptest::collection::vec((1u8..=4, 0usize..3, 0i64..600), 1..20),
        hijack_at in 0usize..20,
    ) {
        let (registry, policy) = sso_world();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut store = SessionStore::new(60);
        let mut audit = AuditLog::new();
        let all = factor_set(0b111);
        let session = store.issue("chief", ip(1), all, T0, &mut rng).unwrap();
        let mut hijacked = false;
        let resources = ["flight-simulator", "back-office", "admin-console"];
        for (i, (from, res, dt)) in requests.into_iter().enumerate() {
            let from = if i == hijack_at { 9 } else { from };
            let outcome = authorize_request(
                &mut store, &session.session_id, ip(from), resources[res], T0.plus_seconds(dt), &policy, &registry, &mut audit,
            );
            if hijacked {
                let allowed = matches!(outcome, Authorization::Allow(_));
                prop_assert!(!allowed);
            }
            if outcome == Authorization::Deny(SessionDeny::HijackSuspected) {
                hijacked = true;
            }
        }
    }

    #[test]
    fn captured_requests_are_never_fresh_twice(
        events in proptest::collection::vec((any::<bool>(), any::<prop::sample::Index>(), -150i64..150, 0i64..40), 1..200),
    ) {
        let mut window = FreshnessWindow::new(120);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut now = T0;
        let mut captured: Vec<(Timestamp, Nonce)> = Vec::new();
        let mut accepted = BTreeSet::new();
        for (replay, pick, skew, advance) in events {
            now = now.plus_seconds(advance);
            if advance % 7 == 0 {
                window.prune(now);
            }
            let (ts, nonce) = if replay && !captured.is_empty() {
                captured[pick.index(captured.len())]
            } else {
                let request = (now.plus_seconds(skew), Nonce::random(&mut rng));
                captured.push(request);
                request
            };
            if window.check_freshness(ts, nonce, now) == Freshness::Ok {
                prop_assert!(accepted.insert(nonce), "{:?} fresh twice", nonce);
            }
        }
    }

    #[test]
    fn reused_nonce_is_refused_while_remembered(
        events in proptest::collection::vec((0u8..6, -150i64..150, 0i64..20), 1..200),
    ) {
        let mut window = FreshnessWindow::new(120);
        let mut now = T0;
        let mut last_ok: std::collections::BTreeMap<u8, Timestamp> = Default::default();
        for (n, skew, advance) in events {
            now = now.plus_seconds(advance);
            if advance % 7 == 0 {
                window.prune(now);
            }
            let ts = now.plus_seconds(skew);
            if window.check_freshness(ts, Nonce::from_bytes([n; 16]), now) == Freshness::Ok {
                if let Some(first) = last_ok.get(&n) {
                    prop_assert!(now > first.plus_seconds(120));
                }
                last_ok.insert(n, ts);
            }
        }
    }
}

#[test]
fn one_session_serves_both_applications() {
    let (registry, policy) = sso_world();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut store = SessionStore::new(60);
    let mut audit = AuditLog::new();
    let factors = FactorSet::EMPTY.with(FactorKind::Token).with(FactorKind::Password);
    let session = store.issue("pilot1", ip(1), factors, T0, &mut rng).unwrap();
    let issued = 1;
    for (i, resource) in ["flight-simulator", "back-office", "flight-simulator"].iter().enumerate() {
        let now = T0.plus_seconds(60 * i as i64);
        let outcome = authorize_request(&mut store, &session.session_id, ip(1), resource, now, &policy, &registry, &mut audit);
        assert!(matches!(outcome, Authorization::Allow(_)), "{resource}");
    }
    assert_eq!(issued, 1);
    assert_eq!(store.len(), 1);
    assert!(audit.records().iter().all(|r| r.action == actions::ACCESS_GRANTED && r.outcome == Outcome::Success));
}

const LEVELS: [EncryptionLevel; 3] = [EncryptionLevel::None, EncryptionLevel::Low, EncryptionLevel::High];

proptest! {
    #[test]
    fn raising_the_offer_never_refuses(
        required in 0usize..3,
        internal in any::<bool>(),
        level in 0usize..3,
        bits in 0u32..1024,
        raise_level in 0usize..3,
        raise_bits in 0u32..1024,
    ) {
        let scope = if internal { ContextScope::InternalSecret } else { ContextScope::External };
        let ctx = TrustedContext::new("c", scope, LEVELS[required]);
        let before = establish_trusted_context(&ctx, LEVELS[level], bits).is_established();
        let after = establish_trusted_context(&ctx, LEVELS[(level + raise_level).min(2)], bits + raise_bits).is_established();
        prop_assert!(!before || after);
    }
}

proptest! {
    #[test]
    fn escalation_never_unfires(extra in proptest::collection::vec((0usize..3, any::<bool>()), 0..30)) {
        let mut log = AuditLog::new();
        for _ in 0..3 {
            log.append_with("pilot1", actions::ACCESS_DENIED, "resource=admin-console", Outcome::failure("RoleMissing"), T0);
        }
        prop_assert!(log.detect_escalation("pilot1", T0).is_some());
        let resources = ["admin-console", "back-office", "flight-simulator"];
        for (res, denied) in extra {
            let (action, outcome) = if denied {
                (actions::ACCESS_DENIED, Outcome::failure("RoleMissing"))
            } else {
                (actions::ACCESS_GRANTED, Outcome::Success)
            };
            log.append_with("pilot1", action, &format!("resource={}", resources[res]), outcome, T0);
            let found = log.detect_escalation("pilot1", T0);
            prop_assert!(found.as_ref().is_some_and(|inv| inv.attempt_count >= 3));
        }
    }

    #[test]
    fn serialized_logs_roundtrip(entries in proptest::collection::vec(("[a-z0-9]{1,8}", "[ -~]{0,40}", any::<bool>()), 0..30)) {
        let mut log = AuditLog::new();
        for (i, (actor, detail, ok)) in entries.iter().enumerate() {
            let outcome = if *ok { Outcome::Success } else { Outcome::failure(detail.clone()) };
            log.append_with(actor, actions::SIGNIN, detail, outcome, T0.plus_seconds(i as i64));
        }
        let back = AuditLog::from_jsonl(&log.to_jsonl()).unwrap();
        prop_assert_eq!(back.records(), log.records());
    }
}
