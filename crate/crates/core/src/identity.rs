//! Principals, roles, ACLs and least-privilege access decisions.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::audit::{actions, AuditLog, Outcome};
use crate::crypto::SaltedCredential;
use crate::pki::Serial;
use crate::time::Timestamp;

pub const ADMIN_ROLE: &str = "admin";

/// Hard policy numbers and their configurable companions.
///
/// `cooldown_hours` and the three `min_*_bits` values are floors: a
/// configuration may raise them, never lower them. `max_signin_failures`
/// and `escalation_threshold` are ceilings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConstants {
    pub max_signin_failures: u32,
    pub cooldown_hours: u32,
    pub escalation_threshold: u32,
    pub min_external_bits: u32,
    pub min_internal_bits: u32,
    pub min_asymmetric_bits: u32,
    pub phase_one_users: usize,
    pub phase_three_capacity: usize,
    pub session_ttl_minutes: u32,
}

impl PolicyConstants {
    pub const MAX_SIGNIN_FAILURES: u32 = 3;
    pub const COOLDOWN_HOURS: u32 = 24;
    pub const ESCALATION_THRESHOLD: u32 = 3;
    pub const MIN_EXTERNAL_BITS: u32 = 256;
    pub const MIN_INTERNAL_BITS: u32 = 128;
    pub const MIN_ASYMMETRIC_BITS: u32 = 1024;
    pub const PHASE_ONE_USERS: usize = 100;
    pub const PHASE_THREE_CAPACITY: usize = 100_000;
    pub const SESSION_TTL_MINUTES: u32 = 60;

    /// Rejects values that weaken a floor or ceiling, or are zero.
    pub fn validate(&self) -> Result<(), PolicyViolation> {
        let floors = [
            ("cooldown_hours", self.cooldown_hours, Self::COOLDOWN_HOURS),
            ("min_external_bits", self.min_external_bits, Self::MIN_EXTERNAL_BITS),
            ("min_internal_bits", self.min_internal_bits, Self::MIN_INTERNAL_BITS),
            ("min_asymmetric_bits", self.min_asymmetric_bits, Self::MIN_ASYMMETRIC_BITS),
        ];
        for (field, value, floor) in floors {
            if value < floor {
                return Err(PolicyViolation { field, value: value as u64, limit: floor as u64 });
            }
        }
        let ceilings = [
            ("max_signin_failures", self.max_signin_failures, Self::MAX_SIGNIN_FAILURES),
            ("escalation_threshold", self.escalation_threshold, Self::ESCALATION_THRESHOLD),
        ];
        for (field, value, ceiling) in ceilings {
            if value == 0 || value > ceiling {
                return Err(PolicyViolation { field, value: value as u64, limit: ceiling as u64 });
            }
        }
        if self.phase_three_capacity == 0 || self.phase_three_capacity > Self::PHASE_THREE_CAPACITY {
            return Err(PolicyViolation {
                field: "phase_three_capacity",
                value: self.phase_three_capacity as u64,
                limit: Self::PHASE_THREE_CAPACITY as u64,
            });
        }
        if self.session_ttl_minutes == 0 || self.phase_one_users == 0 {
            return Err(PolicyViolation { field: "session_ttl_minutes", value: 0, limit: 1 });
        }
        Ok(())
    }
}

impl Default for PolicyConstants {
    fn default() -> Self {
        PolicyConstants {
            max_signin_failures: Self::MAX_SIGNIN_FAILURES,
            cooldown_hours: Self::COOLDOWN_HOURS,
            escalation_threshold: Self::ESCALATION_THRESHOLD,
            min_external_bits: Self::MIN_EXTERNAL_BITS,
            min_internal_bits: Self::MIN_INTERNAL_BITS,
            min_asymmetric_bits: Self::MIN_ASYMMETRIC_BITS,
            phase_one_users: Self::PHASE_ONE_USERS,
            phase_three_capacity: Self::PHASE_THREE_CAPACITY,
            session_ttl_minutes: Self::SESSION_TTL_MINUTES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("policy floor violation: {field} = {value} (limit {limit})")]
pub struct PolicyViolation {
    pub field: &'static str,
    pub value: u64,
    pub limit: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FactorKind {
    Certificate,
    Token,
    Password,
}

impl FactorKind {
    pub const ALL: [FactorKind; 3] = [FactorKind::Certificate, FactorKind::Token, FactorKind::Password];

    fn bit(self) -> u8 {
        match self {
            FactorKind::Certificate => 1,
            FactorKind::Token => 2,
            FactorKind::Password => 4,
        }
    }
}

/// Set of proven factor kinds.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct FactorSet(u8);

impl FactorSet {
    pub const EMPTY: FactorSet = FactorSet(0);

    pub fn insert(&mut self, kind: FactorKind) {
        self.0 |= kind.bit();
    }

    pub fn with(mut self, kind: FactorKind) -> Self {
        self.insert(kind);
        self
    }

    pub fn contains(self, kind: FactorKind) -> bool {
        self.0 & kind.bit() != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = FactorKind> {
        FactorKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }
}

impl FromIterator<FactorKind> for FactorSet {
    fn from_iter<I: IntoIterator<Item = FactorKind>>(iter: I) -> Self {
        iter.into_iter().fold(FactorSet::EMPTY, FactorSet::with)
    }
}

impl fmt::Debug for FactorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for FactorSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for FactorSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Vec::<FactorKind>::deserialize(deserializer).map(|v| v.into_iter().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub id: String,
    pub display_name: String,
    pub roles: BTreeSet<String>,
    #[serde(default)]
    pub certificate_serial: Option<Serial>,
    #[serde(default)]
    pub token_enrolled: bool,
    #[serde(default)]
    pub hardware_credential: bool,
    #[serde(default)]
    pub password_credential: Option<SaltedCredential>,
}

impl Principal {
    pub fn new<'a>(id: &str, roles: impl IntoIterator<Item = &'a str>) -> Self {
        Principal {
            id: id.to_string(),
            display_name: id.to_string(),
            roles: roles.into_iter().map(str::to_string).collect(),
            certificate_serial: None,
            token_enrolled: false,
            hardware_credential: false,
            password_credential: None,
        }
    }

    pub fn has_role(&self, role: &str) -> bool {
        self.roles.contains(role)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclEntry {
    pub resource: String,
    pub allowed_roles: BTreeSet<String>,
}

impl AclEntry {
    pub fn new<'a>(resource: &str, roles: impl IntoIterator<Item = &'a str>) -> Self {
        AclEntry {
            resource: resource.to_string(),
            allowed_roles: roles.into_iter().map(str::to_string).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AclError {
    #[error("resource {0:?} appears more than once")]
    DuplicateResource(String),
    #[error("resource {0:?} has no allowed roles")]
    NoAllowedRoles(String),
}

/// ACL plus the set of resources in the administrator class.
#[derive(Clone, Debug, Default)]
pub struct AccessPolicy {
    entries: BTreeMap<String, AclEntry>,
    admin_resources: BTreeSet<String>,
}

impl AccessPolicy {
    pub fn new(
        entries: impl IntoIterator<Item = AclEntry>,
        admin_resources: impl IntoIterator<Item = String>,
    ) -> Result<Self, AclError> {
        let mut map = BTreeMap::new();
        for entry in entries {
            if entry.allowed_roles.is_empty() {
                return Err(AclError::NoAllowedRoles(entry.resource));
            }
            if map.contains_key(&entry.resource) {
                return Err(AclError::DuplicateResource(entry.resource));
            }
            map.insert(entry.resource.clone(), entry);
        }
        Ok(AccessPolicy { entries: map, admin_resources: admin_resources.into_iter().collect() })
    }

    pub fn entry(&self, resource: &str) -> Option<&AclEntry> {
        self.entries.get(resource)
    }

    pub fn entries(&self) -> impl Iterator<Item = &AclEntry> {
        self.entries.values()
    }

    pub fn is_admin_resource(&self, resource: &str) -> bool {
        self.admin_resources.contains(resource)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessDenyReason {
    NoSuchResource,
    RoleMissing,
    HardwareCredentialRequired,
    SecondFactorRequired,
}

impl AccessDenyReason {
    pub fn name(self) -> &'static str {
        match self {
            AccessDenyReason::NoSuchResource => "NoSuchResource",
            AccessDenyReason::RoleMissing => "RoleMissing",
            AccessDenyReason::HardwareCredentialRequired => "HardwareCredentialRequired",
            AccessDenyReason::SecondFactorRequired => "SecondFactorRequired",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessDecision {
    Allow,
    Deny(AccessDenyReason),
}

/// Least-privilege decision for `principal` on `resource`.
///
/// Checks run in a fixed order: the resource must be listed, the principal
/// must hold an allowed role, and the session must carry two factor kinds.
/// Admin-class resources additionally need a hardware credential and both
/// the certificate and token factors.
pub fn check_access(
    principal: &Principal,
    resource: &str,
    policy: &AccessPolicy,
    session_factors: FactorSet,
) -> AccessDecision {
    use AccessDenyReason::*;
    let Some(entry) = policy.entry(resource) else {
        return AccessDecision::Deny(NoSuchResource);
    };
    if principal.roles.is_disjoint(&entry.allowed_roles) {
        return AccessDecision::Deny(RoleMissing);
    }
    if policy.is_admin_resource(resource) {
        if !principal.hardware_credential {
            return AccessDecision::Deny(HardwareCredentialRequired);
        }
        if !(session_factors.contains(FactorKind::Certificate) && session_factors.contains(FactorKind::Token)) {
            return AccessDecision::Deny(SecondFactorRequired);
        }
    }
    if session_factors.len() < 2 {
        return AccessDecision::Deny(SecondFactorRequired);
    }
    AccessDecision::Allow
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum IdentityError {
    #[error("principal {0:?} already exists")]
    DuplicateId(String),
    #[error("registry is at its capacity of {0} principals")]
    CapacityExceeded(usize),
    #[error("no principal {0:?}")]
    UnknownPrincipal(String),
    #[error("privilege changes require a change ticket")]
    MissingChangeTicket,
    #[error("principal id {0:?} is empty or contains reserved characters")]
    InvalidId(String),
}

/// Principal registry. There is no removal operation; principals are
/// disabled by revoking their certificate and resetting their token seed.
#[derive(Clone, Debug)]
pub struct Registry {
    principals: BTreeMap<String, Principal>,
    capacity: usize,
}

impl Default for Registry {
    fn default() -> Self {
        Registry::with_capacity(PolicyConstants::PHASE_THREE_CAPACITY)
    }
}

impl Registry {
    pub fn with_capacity(capacity: usize) -> Self {
        Registry { principals: BTreeMap::new(), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.principals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.principals.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Principal> {
        self.principals.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.principals.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Principal> {
        self.principals.values()
    }

    pub fn onboard(&mut self, principal: Principal) -> Result<String, IdentityError> {
        if !is_valid_principal_id(&principal.id) {
            return Err(IdentityError::InvalidId(principal.id));
        }
        if self.principals.contains_key(&principal.id) {
            return Err(IdentityError::DuplicateId(principal.id));
        }
        if self.principals.len() >= self.capacity {
            return Err(IdentityError::CapacityExceeded(self.capacity));
        }
        let id = principal.id.clone();
        self.principals.insert(id.clone(), principal);
        Ok(id)
    }

    /// Adds `role` under change ticket `change_ticket`, recording exactly one
    /// privilege-change audit record.
    pub fn grant_role(
        &mut self,
        id: &str,
        role: &str,
        change_ticket: &str,
        audit: &mut AuditLog,
        now: Timestamp,
    ) -> Result<&Principal, IdentityError> {
        if !self.principals.contains_key(id) {
            return Err(IdentityError::UnknownPrincipal(id.to_string()));
        }
        if change_ticket.trim().is_empty() {
            return Err(IdentityError::MissingChangeTicket);
        }
        let principal = self.principals.get_mut(id).expect("checked above");
        principal.roles.insert(role.to_string());
        audit.append_with(
            id,
            actions::PRIVILEGE_CHANGE,
            &alloc::format!("role={role};ticket={change_ticket}"),
            Outcome::Success,
            now,
        );
        Ok(principal)
    }

    /// Applies `update` to an existing principal (credential bookkeeping).
    pub fn update(
        &mut self,
        id: &str,
        update: impl FnOnce(&mut Principal),
    ) -> Result<&Principal, IdentityError> {
        let principal = self
            .principals
            .get_mut(id)
            .ok_or_else(|| IdentityError::UnknownPrincipal(id.to_string()))?;
        let original_id = principal.id.clone();
        update(principal);
        principal.id = original_id;
        Ok(principal)
    }
}

/// Non-empty, at most 64 characters from `[A-Za-z0-9._@-]`.
pub fn is_valid_principal_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-' | b'@'))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn policy() -> AccessPolicy {
        AccessPolicy::new(
            vec![
                AclEntry::new("flight-simulator", ["pilot", "instructor"]),
                AclEntry::new("back-office", ["pilot", "clerk"]),
                AclEntry::new("admin-console", [ADMIN_ROLE]),
            ],
            vec!["admin-console".to_string()],
        )
        .unwrap()
    }

    fn two_factor() -> FactorSet {
        FactorSet::EMPTY.with(FactorKind::Certificate).with(FactorKind::Token)
    }

    #[test]
    fn pilot_reaches_simulator_but_not_admin() {
        let pilot = Principal::new("p1", ["pilot"]);
        assert_eq!(check_access(&pilot, "flight-simulator", &policy(), two_factor()), AccessDecision::Allow);
        assert_eq!(
            check_access(&pilot, "admin-console", &policy(), two_factor()),
            AccessDecision::Deny(AccessDenyReason::RoleMissing)
        );
        assert_eq!(
            check_access(&pilot, "weapons-db", &policy(), two_factor()),
            AccessDecision::Deny(AccessDenyReason::NoSuchResource)
        );
    }

    #[test]
    fn admin_needs_hardware_credential() {
        let mut admin = Principal::new("a1", [ADMIN_ROLE]);
        assert_eq!(
            check_access(&admin, "admin-console", &policy(), two_factor()),
            AccessDecision::Deny(AccessDenyReason::HardwareCredentialRequired)
        );
        admin.hardware_credential = true;
        assert_eq!(check_access(&admin, "admin-console", &policy(), two_factor()), AccessDecision::Allow);
        let cert_password = FactorSet::EMPTY.with(FactorKind::Certificate).with(FactorKind::Password);
        assert_eq!(
            check_access(&admin, "admin-console", &policy(), cert_password),
            AccessDecision::Deny(AccessDenyReason::SecondFactorRequired)
        );
    }

    #[test]
    fn least_privilege_over_small_universe() {
        let roles = ["pilot", "instructor", "clerk", ADMIN_ROLE];
        let policy = policy();
        for mask in 0u32..16 {
            let held: Vec<&str> = roles.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, r)| *r).collect();
            let mut p = Principal::new("x", held.iter().copied());
            p.hardware_credential = true;
            for entry in policy.entries() {
                let decision = check_access(&p, &entry.resource, &policy, two_factor());
                let disjoint = held.iter().all(|r| !entry.allowed_roles.contains(*r));
                if disjoint {
                    assert_ne!(decision, AccessDecision::Allow, "{held:?} on {}", entry.resource);
                } else {
                    assert_eq!(decision, AccessDecision::Allow, "{held:?} on {}", entry.resource);
                }
            }
        }
    }

    #[test]
    fn onboarding_limits() {
        let mut reg = Registry::with_capacity(100);
        for i in 0..100 {
            reg.onboard(Principal::new(&format!("user-{i}"), ["pilot"])).unwrap();
        }
        assert_eq!(
            reg.onboard(Principal::new("user-100", ["pilot"])),
            Err(IdentityError::CapacityExceeded(100))
        );
        assert_eq!(
            reg.onboard(Principal::new("user-5", ["pilot"])),
            Err(IdentityError::DuplicateId("user-5".into()))
        );
        assert!(matches!(reg.onboard(Principal::new("bad id", [])), Err(IdentityError::InvalidId(_))));
        assert_eq!(reg.len(), 100);
        assert_eq!(Registry::default().capacity(), 100_000);
    }

    #[test]
    fn grant_role_requires_ticket_and_audits() {
        let mut reg = Registry::default();
        let mut log = AuditLog::new();
        reg.onboard(Principal::new("p1", ["pilot"])).unwrap();
        let now = Timestamp::from_unix(1_790_000_000);
        assert_eq!(
            reg.grant_role("p1", "instructor", "", &mut log, now),
            Err(IdentityError::MissingChangeTicket)
        );
        assert_eq!(
            reg.grant_role("ghost", "instructor", "CM-17", &mut log, now),
            Err(IdentityError::UnknownPrincipal("ghost".into()))
        );
        assert!(log.is_empty());
        let p = reg.grant_role("p1", "instructor", "CM-17", &mut log, now).unwrap();
        assert!(p.has_role("instructor"));
        assert_eq!(log.len(), 1);
        let rec = &log.records()[0];
        assert_eq!(rec.action, actions::PRIVILEGE_CHANGE);
        assert!(matches!(&rec.outcome, Outcome::Success));
        assert!(rec.detail.contains("CM-17"));
    }

    #[test]
    fn policy_floors() {
        assert!(PolicyConstants::default().validate().is_ok());
        let weak = PolicyConstants { cooldown_hours: 12, ..Default::default() };
        assert_eq!(weak.validate().unwrap_err().field, "cooldown_hours");
        let lax = PolicyConstants { max_signin_failures: 5, ..Default::default() };
        assert_eq!(lax.validate().unwrap_err().field, "max_signin_failures");
        let stricter = PolicyConstants { cooldown_hours: 48, max_signin_failures: 2, ..Default::default() };
        assert!(stricter.validate().is_ok());
    }

    #[test]
    fn factor_set_basics() {
        let set: FactorSet = [FactorKind::Token, FactorKind::Certificate, FactorKind::Token].into_iter().collect();
        assert_eq!(set.len(), 2);
        assert_eq!(set.iter().collect::<Vec<_>>(), vec![FactorKind::Certificate, FactorKind::Token]);
    }
}
