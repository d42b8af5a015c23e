//! Deterministic in-memory gateway for tests and in-process simulation.

use std::net::{IpAddr, Ipv4Addr};
use std::sync::{Arc, Mutex, OnceLock};

use prometheus_core::crypto::{generate_keypair, provision_salted, KeyPair, PublicKey};
use prometheus_core::identity::{AclEntry, Principal, Registry};
use prometheus_core::pki::{CertificateAuthority, Validity};
use prometheus_core::session::Nonce;
use prometheus_core::time::SECONDS_PER_DAY;
use prometheus_core::token::TokenStore;
use prometheus_core::Timestamp;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::client::{ClientIdentity, Factors};
use crate::clock::{Clock, SimulatedClock};
use crate::config::GatewayConfig;
use crate::state::{default_acl, default_payload, GatewayParts};
use crate::wire::{Request, Response};
use crate::Gateway;

/// 2026-09-21T14:13:20Z
pub const T0: Timestamp = Timestamp::from_unix(1_790_000_000);

pub const HARNESS_KEY_BITS: usize = 1024;
const KEY_POOL: usize = 6;

/// `10.0.0.n`
pub fn lan(n: u8) -> IpAddr {
    IpAddr::V4(Ipv4Addr::new(10, 0, 0, n))
}

/// `127.0.0.n`
pub fn loopback(n: u8) -> IpAddr {
    IpAddr::V4(Ipv4Addr::new(127, 0, 0, n))
}

/// An address on no whitelist.
pub const STRANGER: IpAddr = IpAddr::V4(Ipv4Addr::new(192, 0, 2, 66));

/// A few RSA keys generated once per process from fixed seeds. Key 0 is the
/// CA, key 1 the gateway, the rest are shared round-robin by users.
pub fn key_pool() -> &'static [KeyPair] {
    static POOL: OnceLock<Vec<KeyPair>> = OnceLock::new();
    POOL.get_or_init(|| {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..KEY_POOL)
                .map(|i| {
                    s.spawn(move || {
                        let mut rng = ChaCha20Rng::seed_from_u64(0x5eed_0000 + i as u64);
                        generate_keypair(&mut rng, HARNESS_KEY_BITS).expect("key generation")
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("key thread")).collect()
        })
    })
}

#[derive(Clone, Debug)]
pub struct UserSpec {
    pub id: String,
    pub roles: Vec<String>,
    pub hardware_credential: bool,
    pub password: Option<String>,
    pub certificate: bool,
    pub token: bool,
}

impl UserSpec {
    pub fn new(id: &str, roles: &[&str]) -> Self {
        UserSpec {
            id: id.to_string(),
            roles: roles.iter().map(|r| r.to_string()).collect(),
            hardware_credential: false,
            password: None,
            certificate: true,
            token: true,
        }
    }

    pub fn hardware(mut self) -> Self {
        self.hardware_credential = true;
        self
    }

    pub fn password(mut self, password: &str) -> Self {
        self.password = Some(password.to_string());
        self
    }
}

pub struct HarnessBuilder {
    pub config: GatewayConfig,
    pub whitelist: Vec<IpAddr>,
    pub users: Vec<UserSpec>,
    pub acl: Vec<AclEntry>,
    pub start: Timestamp,
    pub seed: u64,
    pub registry_capacity: Option<usize>,
}

impl Default for HarnessBuilder {
    fn default() -> Self {
        HarnessBuilder {
            config: GatewayConfig::default(),
            whitelist: (1..=20).map(lan).collect(),
            users: vec![
                UserSpec::new("pilot1", &["pilot", "staff"]).password("blue horizon 7"),
                UserSpec::new("chief", &["pilot", "staff", "admin"]).hardware().password("amber tower 9"),
            ],
            acl: default_acl(),
            start: T0,
            seed: 7,
            registry_capacity: None,
        }
    }
}

impl HarnessBuilder {
    pub fn build(self) -> Harness {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let keys = key_pool();
        let mut ca = CertificateAuthority::new("prometheus-ca", keys[0].clone()).expect("CA id");
        let capacity = self.registry_capacity.unwrap_or(self.config.policy.phase_three_capacity);
        let mut registry = Registry::with_capacity(capacity);
        let mut tokens = TokenStore::with_parameters(self.config.token_step_seconds, self.config.token_digits)
            .expect("token parameters");
        let validity = Validity::new(self.start.minus_seconds(SECONDS_PER_DAY), self.start.plus_seconds(365 * SECONDS_PER_DAY));
        let mut identities = Vec::new();
        for (i, spec) in self.users.iter().enumerate() {
            let mut principal = Principal::new(&spec.id, spec.roles.iter().map(String::as_str));
            principal.hardware_credential = spec.hardware_credential;
            let mut identity = ClientIdentity::new(&spec.id);
            if let Some(password) = &spec.password {
                principal.password_credential = Some(provision_salted(&mut rng, password.as_bytes()));
                identity.password = Some(password.clone());
            }
            if spec.certificate {
                let key = keys[2 + i % (KEY_POOL - 2)].clone();
                let cert = ca.issue_certificate(&spec.id, key.public_key.clone(), validity).expect("issue");
                principal.certificate_serial = Some(cert.serial);
                identity.certificate = Some(cert);
                identity.key = Some(key);
            }
            principal.token_enrolled = spec.token;
            registry.onboard(principal).expect("onboard");
            if spec.token {
                identity.seed = Some(tokens.provision_seed(&registry, &spec.id, &mut rng).expect("seed"));
            }
            identities.push(identity);
        }
        let resources = self.acl.iter().map(|e| (e.resource.clone(), default_payload(&e.resource))).collect();
        let parts = GatewayParts {
            ca,
            registry,
            tokens,
            acl: self.acl,
            whitelist: self.whitelist,
            cooldowns: Vec::new(),
            audit: prometheus_core::audit::AuditLog::new(),
            gateway_key: keys[1].clone(),
            resources,
        };
        let clock = SimulatedClock::new(self.start);
        let nonce_rng = ChaCha20Rng::seed_from_u64(self.seed ^ 0xa5a5);
        let gateway = Gateway::new(self.config, parts, Clock::Simulated(clock.clone()), None, rng).expect("gateway");
        Harness { gateway: Arc::new(gateway), clock, identities, nonce_rng: Mutex::new(nonce_rng) }
    }
}

pub struct Harness {
    pub gateway: Arc<Gateway>,
    pub clock: SimulatedClock,
    identities: Vec<ClientIdentity>,
    nonce_rng: Mutex<ChaCha20Rng>,
}

impl Harness {
    pub fn new() -> Harness {
        HarnessBuilder::default().build()
    }

    pub fn builder() -> HarnessBuilder {
        HarnessBuilder::default()
    }

    pub fn identity(&self, id: &str) -> &ClientIdentity {
        self.identities.iter().find(|i| i.principal_id == id).unwrap_or_else(|| panic!("no harness user {id}"))
    }

    pub fn identities(&self) -> &[ClientIdentity] {
        &self.identities
    }

    pub fn gateway_key(&self) -> &PublicKey {
        self.gateway.gateway_public_key()
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn advance(&self, seconds: i64) -> Timestamp {
        self.clock.advance(seconds)
    }

    pub fn nonce(&self) -> Nonce {
        Nonce::random(&mut *self.nonce_rng.lock().unwrap_or_else(std::sync::PoisonError::into_inner))
    }

    pub fn send(&self, req: &Request) -> Response {
        self.gateway.handle(req)
    }

    pub fn signin(&self, id: &str, ip: IpAddr, factors: Factors) -> Response {
        let req = self.identity(id).signin_request(ip, factors, self.now(), self.nonce());
        self.send(&req)
    }

    /// Signs in and returns the session id; panics on refusal.
    pub fn session(&self, id: &str, ip: IpAddr, factors: Factors) -> String {
        let response = self.signin(id, ip, factors);
        crate::client::session_of(&response)
            .unwrap_or_else(|| panic!("sign-in for {id} refused: {} {:?}", response.status, response.error_reason()))
    }

    pub fn get(&self, session_id: &str, resource: &str, ip: IpAddr) -> (Request, Response) {
        let req = crate::client::resource_request(ip, session_id, resource, self.now(), self.nonce());
        let response = self.send(&req);
        (req, response)
    }
}

impl Default for Harness {
    fn default() -> Self {
        Harness::new()
    }
}
