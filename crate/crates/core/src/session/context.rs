use alloc::string::{String, ToString};

use crate::identity::PolicyConstants;

pub const ADMIN_CONTACT_NOTICE: &str =
    "The connection could not be established at the required encryption level. Contact the system administrator.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EncryptionLevel {
    None,
    Low,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextScope {
    /// Traffic crossing the public network.
    External,
    /// Internal traffic carrying secret material.
    InternalSecret,
}

impl ContextScope {
    pub fn key_floor_bits(self, policy: &PolicyConstants) -> u32 {
        match self {
            ContextScope::External => policy.min_external_bits,
            ContextScope::InternalSecret => policy.min_internal_bits,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("high-encryption context requires at least {floor} key bits, got {requested}")]
pub struct ContextError {
    pub floor: u32,
    pub requested: u32,
}

/// A named communication context with the encryption it demands.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrustedContext {
    name: String,
    scope: ContextScope,
    required_level: EncryptionLevel,
    min_key_bits: u32,
    floor_bits: u32,
}

impl TrustedContext {
    /// High-level contexts take the scope's key floor from the default policy.
    pub fn new(name: &str, scope: ContextScope, required_level: EncryptionLevel) -> Self {
        Self::for_policy(name, scope, required_level, &PolicyConstants::default())
    }

    pub fn for_policy(name: &str, scope: ContextScope, required_level: EncryptionLevel, policy: &PolicyConstants) -> Self {
        let floor_bits = if required_level == EncryptionLevel::High { scope.key_floor_bits(policy) } else { 0 };
        TrustedContext { name: name.to_string(), scope, required_level, min_key_bits: floor_bits, floor_bits }
    }

    /// Raises the key-length requirement. Values under the floor are refused.
    pub fn with_min_key_bits(mut self, bits: u32) -> Result<Self, ContextError> {
        if bits < self.floor_bits {
            return Err(ContextError { floor: self.floor_bits, requested: bits });
        }
        self.min_key_bits = bits;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn scope(&self) -> ContextScope {
        self.scope
    }

    pub fn required_level(&self) -> EncryptionLevel {
        self.required_level
    }

    pub fn min_key_bits(&self) -> u32 {
        self.min_key_bits
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ContextOutcome {
    Established,
    Refused { notice: String },
}

impl ContextOutcome {
    pub fn is_established(&self) -> bool {
        matches!(self, ContextOutcome::Established)
    }
}

pub fn establish_trusted_context(context: &TrustedContext, offered_level: EncryptionLevel, offered_key_bits: u32) -> ContextOutcome {
    if offered_level < context.required_level || offered_key_bits < context.min_key_bits {
        return ContextOutcome::Refused { notice: ADMIN_CONTACT_NOTICE.to_string() };
    }
    ContextOutcome::Established
}
