//! `prometheus` command line: administration against the state directory,
//! `serve`, and `simulate`.

use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use prometheus_core::audit::{actions, ChainStatus, Outcome};
use prometheus_core::crypto::{generate_keypair, provision_salted, KeyPair};
use prometheus_core::identity::{IdentityError, Principal};
use prometheus_core::pki::{CertificateAuthority, PkiError, Validity};
use prometheus_core::time::SECONDS_PER_DAY;
use prometheus_core::token::TokenError;
use prometheus_core::Timestamp;
use rand::rngs::OsRng;

use crate::client::{ClientIdentity, HttpTransport};
use crate::clock::Clock;
use crate::config::{load_config, ConfigError, GatewayConfig};
use crate::formats::{self, CooldownEntry};
use crate::gateway::GatewayError;
use crate::simulate::{self, Addresses, Scenario, SimulateError, Target};
use crate::state::{default_acl, default_whitelist, write_atomic, write_secret, Home, StateError};
use crate::validate::{self, validate_input};
use crate::Gateway;

pub const CA_INITIALIZED: &str = "ca-initialized";
const CLI_ACTOR: &str = "cli";

#[derive(Parser, Debug)]
#[command(name = "prometheus", version, about = "Prometheus identity gateway administration")]
pub struct Cli {
    /// State directory.
    #[arg(long, global = true, env = "PROMETHEUS_HOME", default_value = ".prometheus")]
    pub home: PathBuf,
    /// Configuration file (default: <home>/config.toml when present).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `real` or `SIMULATED:<rfc3339>`; overrides the configured clock.
    #[arg(long, global = true)]
    pub clock: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Certificate authority operations.
    #[command(subcommand)]
    Ca(CaCommand),
    /// Register a principal.
    Onboard(OnboardArgs),
    /// One-time token seeds.
    #[command(subcommand)]
    Seed(SeedCommand),
    /// Add a role under a change ticket.
    GrantRole {
        #[arg(long)]
        id: String,
        #[arg(long)]
        role: String,
        #[arg(long)]
        ticket: String,
    },
    /// Addresses currently cooling down.
    Cooldowns,
    /// Audit log operations.
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Run the gateway.
    Serve {
        /// Override `listen_address`.
        #[arg(long)]
        listen: Option<SocketAddr>,
    },
    /// Run attack scenarios.
    Simulate(SimulateArgs),
}

#[derive(Subcommand, Debug)]
pub enum CaCommand {
    /// Create the CA, the gateway signing key and default policy files.
    Init {
        #[arg(long, default_value = "prometheus-ca")]
        id: String,
        #[arg(long, default_value_t = 2048)]
        key_bits: usize,
    },
    /// Issue a certificate and key pair for a subject.
    Issue {
        #[arg(long)]
        subject: String,
        #[arg(long)]
        days: u32,
        #[arg(long, default_value_t = 2048)]
        key_bits: usize,
    },
    /// Revoke a certificate and publish a new CRL.
    Revoke {
        #[arg(long)]
        serial: u64,
        #[arg(long)]
        reason: String,
    },
}

#[derive(Args, Debug)]
pub struct OnboardArgs {
    #[arg(long)]
    pub id: String,
    /// Comma-separated roles.
    #[arg(long, value_delimiter = ',', required = true)]
    pub roles: Vec<String>,
    #[arg(long)]
    pub display_name: Option<String>,
    /// The principal holds a hardware credential (smart card).
    #[arg(long)]
    pub hardware: bool,
    #[arg(long, env = "PROMETHEUS_PASSWORD", hide_env_values = true)]
    pub password: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum SeedCommand {
    /// Draw a seed and print its enrollment line.
    Provision {
        #[arg(long)]
        id: String,
    },
}

#[derive(Subcommand, Debug)]
pub enum AuditCommand {
    /// Verify the hash chain and its anchor.
    Verify,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// replay, guessing, revoked-cert, hijack, tamper, lockout or all.
    #[arg(long)]
    pub scenario: String,
    /// Base URL of a running gateway; omitted, an in-process gateway is used.
    #[arg(long)]
    pub target: Option<String>,
    /// Principal whose credentials (from the state directory) drive the run.
    #[arg(long, default_value = "pilot1")]
    pub principal: String,
    /// Administrator principal, for the cooldown report check.
    #[arg(long)]
    pub admin: Option<String>,
    /// Password of `--principal`, for the scenarios that use it.
    #[arg(long, env = "PROMETHEUS_PASSWORD", hide_env_values = true)]
    pub password: Option<String>,
    #[arg(long, default_value = "127.0.0.1")]
    pub ip: IpAddr,
    #[arg(long, default_value = "127.0.0.2")]
    pub foreign_ip: IpAddr,
    #[arg(long, default_value = "127.0.0.3")]
    pub guess_ip: IpAddr,
    #[arg(long, default_value = "127.0.0.4")]
    pub admin_ip: IpAddr,
}

/// Operational failure: the module error name plus a message.
#[derive(Debug)]
pub struct CliError {
    pub name: &'static str,
    pub message: String,
}

impl CliError {
    fn new(name: &'static str, message: impl Into<String>) -> Self {
        CliError { name, message: message.into() }
    }
}

impl From<StateError> for CliError {
    fn from(e: StateError) -> Self {
        CliError::new(e.name(), e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(e.name(), e.to_string())
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        CliError::new(e.name(), e.to_string())
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        CliError::new(e.name(), e.to_string())
    }
}

fn pki_error(e: PkiError) -> CliError {
    let name = match &e {
        PkiError::UnknownSerial(_) => "UnknownSerial",
        PkiError::EmptySubject => "EmptySubject",
        PkiError::InvalidValidityWindow => "InvalidValidityWindow",
        _ => "PkiError",
    };
    CliError::new(name, e.to_string())
}

fn identity_error(e: IdentityError) -> CliError {
    let name = match &e {
        IdentityError::DuplicateId(_) => "DuplicateId",
        IdentityError::CapacityExceeded(_) => "CapacityExceeded",
        IdentityError::UnknownPrincipal(_) => "UnknownPrincipal",
        IdentityError::MissingChangeTicket => "MissingChangeTicket",
        IdentityError::InvalidId(_) => "InvalidId",
    };
    CliError::new(name, e.to_string())
}

fn token_error(e: TokenError) -> CliError {
    let name = match &e {
        TokenError::UnknownPrincipal(_) => "UnknownPrincipal",
        TokenError::AlreadyProvisioned(_) => "AlreadyProvisioned",
        _ => "TokenError",
    };
    CliError::new(name, e.to_string())
}

fn check(field: &str, value: &str, spec: validate::FieldSpec) -> Result<(), CliError> {
    validate_input(field, value, spec)
        .map_err(|r| CliError::new(r.reason.name(), format!("{field}: rejected ({})", r.reason.name())))
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 success, 1 operational failure, 2 usage error.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(CliError { name, message }) => {
            let _ = writeln!(err, "error: {name}: {message}");
            if name == "UnknownScenario" {
                2
            } else {
                1
            }
        }
    }
}

struct Env {
    home: Home,
    clock: Clock,
}

impl Env {
    fn load(cli: &Cli) -> Result<Env, CliError> {
        let config = match &cli.config {
            Some(path) => load_config(path)?,
            None => {
                let default = cli.home.join("config.toml");
                if default.exists() {
                    load_config(&default)?
                } else {
                    GatewayConfig::default()
                }
            }
        };
        let clock = match &cli.clock {
            Some(text) => Clock::parse(text).map_err(|m| CliError::new("ParseError", m))?,
            None => config.clock()?,
        };
        Ok(Env { home: Home::new(&cli.home, config), clock })
    }

    fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn config(&self) -> &GatewayConfig {
        self.home.config()
    }

    /// Appends one CLI audit record to the on-disk log.
    fn audit(&self, action: &str, detail: &str, outcome: Outcome) -> Result<(), CliError> {
        let mut log = self.home.load_audit()?;
        let before = log.len();
        log.append_with(CLI_ACTOR, action, detail, outcome, self.now());
        self.home.append_audit(&log.records()[before..], log.head())?;
        Ok(())
    }

    fn key_bits(&self, bits: usize) -> Result<usize, CliError> {
        let floor = self.config().policy.min_asymmetric_bits as usize;
        if bits < floor {
            return Err(CliError::new("PolicyFloorViolation", format!("key_bits = {bits} (limit {floor})")));
        }
        Ok(bits)
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let env = Env::load(&cli)?;
    match cli.command {
        Command::Ca(CaCommand::Init { id, key_bits }) => ca_init(&env, &id, key_bits, out),
        Command::Ca(CaCommand::Issue { subject, days, key_bits }) => ca_issue(&env, &subject, days, key_bits, out),
        Command::Ca(CaCommand::Revoke { serial, reason }) => ca_revoke(&env, serial, &reason, out),
        Command::Onboard(args) => onboard(&env, args, out),
        Command::Seed(SeedCommand::Provision { id }) => seed_provision(&env, &id, out),
        Command::GrantRole { id, role, ticket } => grant_role(&env, &id, &role, &ticket, out),
        Command::Cooldowns => cooldowns(&env, out),
        Command::Audit(AuditCommand::Verify) => audit_verify(&env, out),
        Command::Serve { listen } => serve(env, listen, out),
        Command::Simulate(args) => simulate(&env, args, out),
    }
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(text).and_then(|()| out.write_all(b"\n")).map_err(|e| CliError::new("IoError", e.to_string()))
}

fn ca_init(env: &Env, id: &str, key_bits: usize, out: &mut dyn Write) -> Result<i32, CliError> {
    let _lock = env.home.lock()?;
    if env.home.load_ca()?.is_some() {
        return Err(CliError::new("CertificateAuthorityExists", "the state directory already has a CA"));
    }
    let bits = env.key_bits(key_bits)?;
    let ca_key = generate_keypair(&mut OsRng, bits).map_err(|e| CliError::new("CryptoError", e.to_string()))?;
    let gateway_key = generate_keypair(&mut OsRng, bits).map_err(|e| CliError::new("CryptoError", e.to_string()))?;
    let ca = CertificateAuthority::new(id, ca_key).map_err(pki_error)?;
    let now = env.now();
    env.home.save_ca(&ca, now)?;
    env.home.save_gateway_key(&gateway_key)?;
    let root = env.home.root();
    if !root.join("config.toml").exists() {
        write_atomic(&root.join("config.toml"), &env.config().to_toml())?;
    }
    let acl_path = env.home.path(&env.config().acl_path);
    if !acl_path.exists() {
        env.home.save_acl(&default_acl())?;
    }
    let whitelist_path = env.home.path(&env.config().whitelist_path);
    if !whitelist_path.exists() {
        env.home.save_whitelist(&default_whitelist())?;
    }
    env.audit(CA_INITIALIZED, &format!("id={id};bits={bits}"), Outcome::Success)?;
    say(out, format_args!("initialized certificate authority {id} ({bits}-bit keys)"))?;
    Ok(0)
}

fn issued_paths(home: &Home, subject: &str) -> (PathBuf, PathBuf) {
    let dir = home.certs_dir();
    (dir.join(format!("{subject}.cert")), dir.join(format!("{subject}.key")))
}

fn ca_issue(env: &Env, subject: &str, days: u32, key_bits: usize, out: &mut dyn Write) -> Result<i32, CliError> {
    let _lock = env.home.lock()?;
    let mut ca = env.home.require_ca()?;
    check("subject", subject, validate::IDENTIFIER)?;
    if days == 0 {
        return Err(CliError::new("InvalidValidityWindow", "--days must be at least 1"));
    }
    let bits = env.key_bits(key_bits)?;
    let key = generate_keypair(&mut OsRng, bits).map_err(|e| CliError::new("CryptoError", e.to_string()))?;
    let now = env.now();
    let validity = Validity::new(now, now.plus_seconds(days as i64 * SECONDS_PER_DAY));
    let cert = ca.issue_certificate(subject, key.public_key.clone(), validity).map_err(pki_error)?;
    env.home.save_ca(&ca, now)?;
    let (cert_path, key_path) = issued_paths(&env.home, subject);
    write_atomic(&cert_path, &formats::encode_certificate(&cert))?;
    write_secret(&key_path, &formats::encode_private_key(&key.private_key))?;
    let mut registry = env.home.load_registry()?;
    if registry.update(subject, |p| p.certificate_serial = Some(cert.serial)).is_ok() {
        env.home.save_registry(&registry)?;
    }
    env.audit(actions::CERTIFICATE_ISSUED, &format!("serial={};subject={subject}", cert.serial), Outcome::Success)?;
    say(out, format_args!("issued certificate serial {} for {subject}, valid until {}", cert.serial, cert.not_after))?;
    say(out, format_args!("certificate: certs/{subject}.cert"))?;
    say(out, format_args!("private key: certs/{subject}.key"))?;
    Ok(0)
}

fn ca_revoke(env: &Env, serial: u64, reason: &str, out: &mut dyn Write) -> Result<i32, CliError> {
    let _lock = env.home.lock()?;
    let mut ca = env.home.require_ca()?;
    check("reason", reason, validate::FREE_TEXT)?;
    let now = env.now();
    ca.revoke(serial, reason, now).map_err(pki_error)?;
    env.home.save_ca(&ca, now)?;
    env.audit(actions::CERTIFICATE_REVOKED, &format!("serial={serial}"), Outcome::Success)?;
    say(out, format_args!("revoked serial {serial}; CRL reissued at {now}"))?;
    Ok(0)
}

fn onboard(env: &Env, args: OnboardArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let _lock = env.home.lock()?;
    check("id", &args.id, validate::IDENTIFIER)?;
    for role in &args.roles {
        check("roles", role, validate::IDENTIFIER)?;
    }
    if let Some(name) = &args.display_name {
        check("display_name", name, validate::FREE_TEXT)?;
    }
    if let Some(password) = &args.password {
        check("password", password, validate::PASSWORD)?;
    }
    let mut registry = env.home.load_registry()?;
    let mut principal = Principal::new(&args.id, args.roles.iter().map(String::as_str));
    if let Some(name) = args.display_name {
        principal.display_name = name;
    }
    principal.hardware_credential = args.hardware;
    if let Some(password) = &args.password {
        principal.password_credential = Some(provision_salted(&mut OsRng, password.as_bytes()));
    }
    let detail = format!("id={};roles={}", args.id, args.roles.join("+"));
    if let Err(e) = registry.onboard(principal) {
        env.audit(actions::ONBOARD, &detail, Outcome::failure(identity_error(e.clone()).name))?;
        return Err(identity_error(e));
    }
    env.home.save_registry(&registry)?;
    env.audit(actions::ONBOARD, &detail, Outcome::Success)?;
    say(out, format_args!("onboarded {} (roles: {})", args.id, args.roles.join(", ")))?;
    Ok(0)
}

fn seed_provision(env: &Env, id: &str, out: &mut dyn Write) -> Result<i32, CliError> {
    let _lock = env.home.lock()?;
    let mut registry = env.home.load_registry()?;
    let mut tokens = env.home.load_tokens()?;
    let seed = tokens.provision_seed(&registry, id, &mut OsRng).map_err(token_error)?;
    env.home.save_tokens(&tokens)?;
    registry.update(id, |p| p.token_enrolled = true).map_err(identity_error)?;
    env.home.save_registry(&registry)?;
    env.audit(actions::SEED_PROVISIONED, &format!("id={id}"), Outcome::Success)?;
    say(out, format_args!("{}", formats::seed_export_line(&seed)))?;
    Ok(0)
}

fn grant_role(env: &Env, id: &str, role: &str, ticket: &str, out: &mut dyn Write) -> Result<i32, CliError> {
    let _lock = env.home.lock()?;
    check("id", id, validate::IDENTIFIER)?;
    check("role", role, validate::IDENTIFIER)?;
    if !ticket.is_empty() {
        check("ticket", ticket, validate::FREE_TEXT)?;
    }
    let mut registry = env.home.load_registry()?;
    let mut log = env.home.load_audit()?;
    let before = log.len();
    let granted = registry.grant_role(id, role, ticket, &mut log, env.now()).map(|_| ());
    if granted.is_ok() {
        env.home.save_registry(&registry)?;
    }
    if let Err(e) = &granted {
        let detail = format!("id={id};role={role};by={CLI_ACTOR}");
        log.append_with(id, actions::PRIVILEGE_CHANGE, &detail, Outcome::failure(identity_error(e.clone()).name), env.now());
    }
    env.home.append_audit(&log.records()[before..], log.head())?;
    granted.map_err(identity_error)?;
    say(out, format_args!("granted {role} to {id} under ticket {ticket}"))?;
    Ok(0)
}

fn cooldowns(env: &Env, out: &mut dyn Write) -> Result<i32, CliError> {
    let now = env.now();
    let mut entries: Vec<CooldownEntry> = env.home.load_cooldowns()?.into_iter().filter(|e| e.until > now).collect();
    entries.sort_by_key(|e| (e.until, e.ip));
    out.write_all(formats::render_cooldown_report(&entries).as_bytes())
        .map_err(|e| CliError::new("IoError", e.to_string()))?;
    Ok(0)
}

fn audit_verify(env: &Env, out: &mut dyn Write) -> Result<i32, CliError> {
    match env.home.verify_audit()? {
        (ChainStatus::Ok, n) => {
            say(out, format_args!("OK ({n} records)"))?;
            Ok(0)
        }
        (ChainStatus::CorruptAt { seq }, _) => {
            say(out, format_args!("CORRUPT at record {seq}"))?;
            Err(CliError::new("CorruptLog", format!("audit log fails verification at record {seq}")))
        }
    }
}

fn serve(env: Env, listen: Option<SocketAddr>, out: &mut dyn Write) -> Result<i32, CliError> {
    let _lock = env.home.lock()?;
    let addr: SocketAddr = match listen {
        Some(addr) => addr,
        None => env
            .config()
            .listen_address
            .parse()
            .map_err(|_| CliError::new("ParseError", format!("listen_address {:?}", env.config().listen_address)))?,
    };
    let gateway = Arc::new(Gateway::open(env.home.clone(), env.clock.clone())?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new("IoError", e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::new("IoError", format!("bind {addr}: {e}")))?;
        let bound = listener.local_addr().map_err(|e| CliError::new("IoError", e.to_string()))?;
        say(out, format_args!("listening on http://{bound}"))?;
        let _ = out.flush();
        crate::http::serve(gateway, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::new("IoError", e.to_string()))
    })?;
    Ok(0)
}

fn load_identity(home: &Home, principal: &str) -> Result<ClientIdentity, CliError> {
    let (cert_path, key_path) = issued_paths(home, principal);
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| CliError::new("MissingFile", format!("{}: {e}", p.display())));
    let format = |p: &Path, e: formats::FormatError| CliError::new("FormatError", format!("{}: {e}", p.display()));
    let mut identity = ClientIdentity::new(principal);
    identity.certificate = Some(formats::decode_certificate(&read(&cert_path)?).map_err(|e| format(&cert_path, e))?);
    let key: KeyPair = formats::decode_private_key(&read(&key_path)?).map_err(|e| format(&key_path, e))?;
    identity.key = Some(key);
    identity.seed = home.load_tokens()?.get(principal).cloned();
    if identity.seed.is_none() {
        return Err(CliError::new("UnknownPrincipal", format!("no token seed for {principal}")));
    }
    Ok(identity)
}

fn simulate(env: &Env, args: SimulateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let scenarios: Vec<Scenario> = if args.scenario == "all" {
        Scenario::ALL.to_vec()
    } else {
        vec![Scenario::parse(&args.scenario).ok_or_else(|| SimulateError::UnknownScenario(args.scenario.clone()))?]
    };
    let reports = match &args.target {
        None => simulate::run_in_process(&scenarios),
        Some(url) => {
            let mut user = load_identity(&env.home, &args.principal)?;
            user.password = args.password.clone();
            let admin = args.admin.as_deref().map(|a| load_identity(&env.home, a)).transpose()?;
            let gateway_key = env.home.load_gateway_key()?.map(|k| k.public_key);
            let addresses = Addresses { user: args.ip, foreign: args.foreign_ip, guesser: args.guess_ip, admin: args.admin_ip };
            let mut target = Target::remote(Box::new(HttpTransport::new(url)), env.clock.clone(), user, admin, addresses, gateway_key);
            let all = args.scenario == "all";
            let mut reports = Vec::new();
            for s in scenarios {
                if all && s.needs_harness() {
                    say(out, format_args!("skipped {}: runs only against the in-process gateway", s.name()))?;
                    continue;
                }
                reports.push(simulate::run(s, &mut target)?);
            }
            reports
        }
    };
    let (text, passed) = simulate::render_all(&reports);
    out.write_all(text.as_bytes()).map_err(|e| CliError::new("IoError", e.to_string()))?;
    Ok(if passed { 0 } else { 1 })
}
