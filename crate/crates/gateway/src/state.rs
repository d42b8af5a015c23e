//! The state directory (`PROMETHEUS_HOME`) and its files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::{Path, PathBuf};

use prometheus_core::audit::{verify_serialized, verify_serialized_anchored, AuditLog, AuditRecord, ChainHead, ChainStatus};
use prometheus_core::crypto::KeyPair;
use prometheus_core::identity::{AclEntry, Principal, Registry};
use prometheus_core::pki::CertificateAuthority;
use prometheus_core::token::TokenStore;
use prometheus_core::Timestamp;

use crate::config::GatewayConfig;
use crate::formats::{self, CooldownEntry, FormatError};

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error("audit log fails verification at record {seq}")]
    CorruptLog { seq: u64 },
    #[error("run `prometheus ca init` first")]
    NoCertificateAuthority,
    #[error("another process holds the state directory lock; stop the gateway first")]
    Busy,
    #[error("{0}")]
    Invalid(String),
}

impl StateError {
    pub fn name(&self) -> &'static str {
        match self {
            StateError::Io { .. } => "IoError",
            StateError::Format { .. } => "FormatError",
            StateError::CorruptLog { .. } => "CorruptLog",
            StateError::NoCertificateAuthority => "NoCertificateAuthority",
            StateError::Busy => "GatewayRunning",
            StateError::Invalid(_) => "InvalidState",
        }
    }
}

pub fn default_acl() -> Vec<AclEntry> {
    vec![
        AclEntry::new("flight-simulator", ["pilot", "instructor", "admin"]),
        AclEntry::new("back-office", ["staff", "instructor", "admin"]),
        AclEntry::new("admin-console", ["admin"]),
    ]
}

pub fn default_whitelist() -> Vec<IpAddr> {
    vec![IpAddr::V4(Ipv4Addr::LOCALHOST), IpAddr::V6(Ipv6Addr::LOCALHOST)]
}

pub fn default_payload(resource: &str) -> Vec<u8> {
    format!("{resource}: protected application content\n").into_bytes()
}

/// Everything a gateway needs at startup.
pub struct GatewayParts {
    pub ca: CertificateAuthority,
    pub registry: Registry,
    pub tokens: TokenStore,
    pub acl: Vec<AclEntry>,
    pub whitelist: Vec<IpAddr>,
    pub cooldowns: Vec<CooldownEntry>,
    pub audit: AuditLog,
    pub gateway_key: KeyPair,
    pub resources: BTreeMap<String, Vec<u8>>,
}

/// Typed access to the files under one state directory.
#[derive(Clone, Debug)]
pub struct Home {
    root: PathBuf,
    config: GatewayConfig,
}

impl Home {
    pub fn new(root: impl Into<PathBuf>, config: GatewayConfig) -> Self {
        Home { root: root.into(), config }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn path(&self, rel: &Path) -> PathBuf {
        self.config.resolve(&self.root, rel)
    }

    pub fn audit_head_path(&self) -> PathBuf {
        let mut p = self.path(&self.config.audit_log_path).into_os_string();
        p.push(".head");
        PathBuf::from(p)
    }

    pub fn certs_dir(&self) -> PathBuf {
        self.root.join("certs")
    }

    /// Exclusive lock on the state directory, held by `serve` for its whole
    /// run and by each CLI command that changes state.
    pub fn lock(&self) -> Result<fs::File, StateError> {
        let path = self.root.join(".lock");
        ensure_parent(&path)?;
        let io = |source| StateError::Io { path: path.clone(), source };
        let file = fs::OpenOptions::new().create(true).truncate(false).write(true).open(&path).map_err(io)?;
        match file.try_lock() {
            Ok(()) => Ok(file),
            Err(fs::TryLockError::WouldBlock) => Err(StateError::Busy),
            Err(fs::TryLockError::Error(e)) => Err(io(e)),
        }
    }

    fn read_optional(&self, path: &Path) -> Result<Option<String>, StateError> {
        match fs::read_to_string(path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(StateError::Io { path: path.to_path_buf(), source }),
        }
    }

    fn parse<T>(&self, path: &Path, parse: impl FnOnce(&str) -> Result<T, FormatError>) -> Result<Option<T>, StateError> {
        match self.read_optional(path)? {
            None => Ok(None),
            Some(text) => parse(&text).map(Some).map_err(|source| StateError::Format { path: path.to_path_buf(), source }),
        }
    }

    pub fn load_ca(&self) -> Result<Option<CertificateAuthority>, StateError> {
        self.parse(&self.path(&self.config.ca_state_path), formats::decode_ca)
    }

    pub fn require_ca(&self) -> Result<CertificateAuthority, StateError> {
        self.load_ca()?.ok_or(StateError::NoCertificateAuthority)
    }

    /// Writes the CA state and a freshly signed CRL.
    pub fn save_ca(&self, ca: &CertificateAuthority, now: Timestamp) -> Result<(), StateError> {
        write_atomic(&self.path(&self.config.ca_state_path), &formats::encode_ca(ca))?;
        let crl = ca.current_crl(now).map_err(|e| StateError::Invalid(e.to_string()))?;
        write_atomic(&self.path(&self.config.crl_path), &formats::encode_crl(&crl))
    }

    pub fn load_registry(&self) -> Result<Registry, StateError> {
        let path = self.path(&self.config.principals_path);
        let principals = self.parse(&path, formats::decode_principals)?.unwrap_or_default();
        let mut registry = Registry::with_capacity(self.config.policy.phase_three_capacity);
        for p in principals {
            registry.onboard(p).map_err(|e| StateError::Invalid(format!("{}: {e}", path.display())))?;
        }
        Ok(registry)
    }

    pub fn save_registry(&self, registry: &Registry) -> Result<(), StateError> {
        write_atomic(&self.path(&self.config.principals_path), &formats::encode_principals(registry.iter()))
    }

    pub fn save_principals<'a>(&self, principals: impl IntoIterator<Item = &'a Principal>) -> Result<(), StateError> {
        write_atomic(&self.path(&self.config.principals_path), &formats::encode_principals(principals))
    }

    pub fn load_tokens(&self) -> Result<TokenStore, StateError> {
        let mut store = TokenStore::with_parameters(self.config.token_step_seconds, self.config.token_digits)
            .map_err(|e| StateError::Invalid(e.to_string()))?;
        for seed in self.parse(&self.path(&self.config.seeds_path), formats::decode_seeds)?.unwrap_or_default() {
            store.insert(seed);
        }
        Ok(store)
    }

    pub fn save_tokens(&self, tokens: &TokenStore) -> Result<(), StateError> {
        write_atomic(&self.path(&self.config.seeds_path), &formats::encode_seeds(tokens.iter()))
    }

    pub fn load_acl(&self) -> Result<Vec<AclEntry>, StateError> {
        Ok(self.parse(&self.path(&self.config.acl_path), formats::parse_acl)?.unwrap_or_else(default_acl))
    }

    pub fn save_acl(&self, acl: &[AclEntry]) -> Result<(), StateError> {
        write_atomic(&self.path(&self.config.acl_path), &formats::encode_acl(acl))
    }

    pub fn load_whitelist(&self) -> Result<Vec<IpAddr>, StateError> {
        Ok(self.parse(&self.path(&self.config.whitelist_path), formats::parse_whitelist)?.unwrap_or_else(default_whitelist))
    }

    pub fn save_whitelist(&self, ips: &[IpAddr]) -> Result<(), StateError> {
        write_atomic(&self.path(&self.config.whitelist_path), &formats::encode_whitelist(ips))
    }

    pub fn load_cooldowns(&self) -> Result<Vec<CooldownEntry>, StateError> {
        Ok(self.parse(&self.path(&self.config.cooldowns_path), formats::decode_cooldowns)?.unwrap_or_default())
    }

    pub fn save_cooldowns(&self, entries: &[CooldownEntry]) -> Result<(), StateError> {
        write_atomic(&self.path(&self.config.cooldowns_path), &formats::encode_cooldowns(entries))
    }

    pub fn load_gateway_key(&self) -> Result<Option<KeyPair>, StateError> {
        self.parse(&self.path(&self.config.gateway_key_path), formats::decode_private_key)
    }

    pub fn save_gateway_key(&self, key: &KeyPair) -> Result<(), StateError> {
        write_secret(&self.path(&self.config.gateway_key_path), &formats::encode_private_key(&key.private_key))
    }

    /// Raw audit log text and anchor, verified. A missing log is empty.
    pub fn verify_audit(&self) -> Result<(ChainStatus, u64), StateError> {
        let path = self.path(&self.config.audit_log_path);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(source) => return Err(StateError::Io { path, source }),
        };
        let records = bytes.iter().filter(|b| **b == b'\n').count() as u64;
        let status = match self.read_optional(&self.audit_head_path())? {
            Some(head) => match ChainHead::decode(head.trim()) {
                Some(head) => verify_serialized_anchored(&bytes, &head),
                None => return Err(StateError::Invalid("audit head file is malformed".into())),
            },
            None => verify_serialized(&bytes),
        };
        Ok((status, records))
    }

    pub fn load_audit(&self) -> Result<AuditLog, StateError> {
        match self.verify_audit()? {
            (ChainStatus::CorruptAt { seq }, _) => Err(StateError::CorruptLog { seq }),
            (ChainStatus::Ok, _) => {
                let text = self.read_optional(&self.path(&self.config.audit_log_path))?.unwrap_or_default();
                AuditLog::from_jsonl(&text).map_err(|e| StateError::CorruptLog { seq: e.seq })
            }
        }
    }

    /// Appends `records` to the log file and rewrites the anchor.
    pub fn append_audit(&self, records: &[AuditRecord], head: ChainHead) -> Result<(), StateError> {
        let path = self.path(&self.config.audit_log_path);
        let io = |source| StateError::Io { path: path.clone(), source };
        ensure_parent(&path)?;
        let mut file = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        let mut text = String::new();
        for r in records {
            text.push_str(&r.to_line());
            text.push('\n');
        }
        file.write_all(text.as_bytes()).map_err(io)?;
        file.sync_data().map_err(io)?;
        write_atomic(&self.audit_head_path(), &format!("{}\n", head.encode()))
    }

    /// Resource payloads: one file per resource under `resources_dir`, with a
    /// built-in stand-in for any ACL resource that has no file.
    pub fn load_resources(&self, acl: &[AclEntry]) -> Result<BTreeMap<String, Vec<u8>>, StateError> {
        let dir = self.path(&self.config.resources_dir);
        let mut out = BTreeMap::new();
        for entry in acl {
            let path = dir.join(&entry.resource);
            let payload = match fs::read(&path) {
                Ok(bytes) => bytes,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => default_payload(&entry.resource),
                Err(source) => return Err(StateError::Io { path, source }),
            };
            out.insert(entry.resource.clone(), payload);
        }
        Ok(out)
    }

    /// Loads everything `serve` needs. The CA and gateway key must exist.
    pub fn load_parts(&self) -> Result<GatewayParts, StateError> {
        let ca = self.require_ca()?;
        let gateway_key = self.load_gateway_key()?.ok_or(StateError::NoCertificateAuthority)?;
        let acl = self.load_acl()?;
        Ok(GatewayParts {
            ca,
            registry: self.load_registry()?,
            tokens: self.load_tokens()?,
            resources: self.load_resources(&acl)?,
            acl,
            whitelist: self.load_whitelist()?,
            cooldowns: self.load_cooldowns()?,
            audit: self.load_audit()?,
            gateway_key,
        })
    }
}

fn ensure_parent(path: &Path) -> Result<(), StateError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| StateError::Io { path: parent.to_path_buf(), source })?;
    }
    Ok(())
}

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), StateError> {
    write_with_mode(path, contents, false)
}

/// As [`write_atomic`], readable by the owner only.
pub fn write_secret(path: &Path, contents: &str) -> Result<(), StateError> {
    write_with_mode(path, contents, true)
}

fn write_with_mode(path: &Path, contents: &str, secret: bool) -> Result<(), StateError> {
    ensure_parent(path)?;
    let io = |source| StateError::Io { path: path.to_path_buf(), source };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut options = fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    if secret {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    #[cfg(not(unix))]
    let _ = secret;
    let mut file = options.open(&tmp).map_err(io)?;
    file.write_all(contents.as_bytes()).map_err(io)?;
    file.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}
