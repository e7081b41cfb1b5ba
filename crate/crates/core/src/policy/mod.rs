//! Service releasing policies and their compilation into trusted behavior
//! models.
//!
//! A releasing rule reads
//! `(SC = C) && (CK = K) && (Target = T) -> (Service = X0) || (Service = X1) ...`
//! and is stored one per line:
//!
//! ```text
//! rule C0 <salt-hex>:<sha256-hex> cardiopathy -> S1,S3
//! ```
//!
//! Keys are never stored in clear. The second field is a salted SHA-256 of the
//! consumer's secret, see [`KeyHash`].

mod tbm;

pub use tbm::{
    compile_tbm, convert_transition, parse_tbm, RouteSelection, Tbm, TrustedBehaviorRule,
};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::model::{is_token, strip_comment, ModelError, ServiceId, ServiceKind, SoaModel, Transition};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid policy: {0}")]
    Validation(String),
    #[error("transition {0} is not part of the model")]
    UnknownTransition(Transition),
    #[error("released service `{0}` is unreachable from the initial service")]
    UnreachableService(ServiceId),
    #[error("rule for consumer `{found}` cannot be added to the model of `{expected}`")]
    ForeignConsumerRule { expected: ConsumerId, found: ConsumerId },
    #[error(transparent)]
    Model(#[from] ModelError),
}

macro_rules! token_newtype {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Result<Self, PolicyError> {
                let value = value.into();
                if !is_token(&value) {
                    return Err(PolicyError::Validation(format!(
                        concat!($what, " `{}` must be a non-empty token"),
                        value
                    )));
                }
                Ok(Self(value))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = PolicyError;
            fn try_from(value: String) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(v: $name) -> Self {
                v.0
            }
        }

        impl FromStr for $name {
            type Err = PolicyError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::new(s)
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

token_newtype!(
    /// Identity of a service consumer, e.g. `C0`.
    ConsumerId,
    "consumer id"
);
token_newtype!(
    /// Purpose a consumer asks for access under, e.g. `cardiopathy`.
    Target,
    "target"
);

/// A consumer's secret as presented at authentication.
#[derive(Clone, PartialEq, Eq)]
pub struct ConsumerKey(Vec<u8>);

impl ConsumerKey {
    pub fn new(secret: impl Into<Vec<u8>>) -> Self {
        Self(secret.into())
    }

    pub fn expose(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for ConsumerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ConsumerKey(<redacted>)")
    }
}

const SALT_LEN: usize = 16;

/// Salted SHA-256 digest of a consumer key.
///
/// Written as `<salt-hex>:<digest-hex>` where the digest covers
/// `salt || secret`.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyHash {
    salt: [u8; SALT_LEN],
    digest: [u8; 32],
}

impl KeyHash {
    pub fn with_salt(key: &ConsumerKey, salt: [u8; SALT_LEN]) -> Self {
        Self {
            salt,
            digest: Self::digest(&salt, key),
        }
    }

    /// Hashes `key` under a fresh random salt.
    pub fn generate(key: &ConsumerKey) -> Self {
        let mut salt = [0u8; SALT_LEN];
        rand::rng().fill_bytes(&mut salt);
        Self::with_salt(key, salt)
    }

    fn digest(salt: &[u8; SALT_LEN], key: &ConsumerKey) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(salt);
        h.update(key.expose());
        h.finalize().into()
    }

    /// Constant-time comparison against a presented key.
    pub fn verify(&self, key: &ConsumerKey) -> bool {
        Self::digest(&self.salt, key).ct_eq(&self.digest).into()
    }
}

impl fmt::Display for KeyHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", hex::encode(self.salt), hex::encode(self.digest))
    }
}

impl fmt::Debug for KeyHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyHash({self})")
    }
}

impl FromStr for KeyHash {
    type Err = PolicyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PolicyError::Validation(format!("malformed key hash `{s}`"));
        let (salt, digest) = s.split_once(':').ok_or_else(bad)?;
        let mut out = KeyHash {
            salt: [0; SALT_LEN],
            digest: [0; 32],
        };
        hex::decode_to_slice(salt, &mut out.salt).map_err(|_| bad())?;
        hex::decode_to_slice(digest, &mut out.digest).map_err(|_| bad())?;
        Ok(out)
    }
}

/// One service releasing rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReleasingRule {
    pub consumer: ConsumerId,
    pub key: KeyHash,
    pub target: Target,
    /// Released sensitive services, in declaration order without duplicates.
    pub released: Vec<ServiceId>,
}

impl ReleasingRule {
    pub fn new(
        consumer: ConsumerId,
        key: KeyHash,
        target: Target,
        released: Vec<ServiceId>,
    ) -> Result<Self, PolicyError> {
        if released.is_empty() {
            return Err(PolicyError::Validation(format!(
                "rule for `{consumer}` releases no service"
            )));
        }
        let mut seen = BTreeSet::new();
        for s in &released {
            if !seen.insert(s) {
                return Err(PolicyError::Validation(format!(
                    "rule for `{consumer}` releases `{s}` twice"
                )));
            }
        }
        Ok(Self {
            consumer,
            key,
            target,
            released,
        })
    }
}

impl fmt::Display for ReleasingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let released: Vec<&str> = self.released.iter().map(ServiceId::as_str).collect();
        write!(
            f,
            "rule {} {} {} -> {}",
            self.consumer,
            self.key,
            self.target,
            released.join(",")
        )
    }
}

/// Authentication failure. Carries no detail on purpose: callers must not be
/// able to tell an unknown consumer from a wrong key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("authentication rejected")]
pub struct Rejected;

/// Service releasing model: the provider's set of releasing rules.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Srm {
    rules: Vec<ReleasingRule>,
}

impl Srm {
    pub fn new(rules: Vec<ReleasingRule>) -> Result<Self, PolicyError> {
        let mut pairs = BTreeSet::new();
        for r in &rules {
            if !pairs.insert((&r.consumer, &r.target)) {
                return Err(PolicyError::Validation(format!(
                    "more than one rule for consumer `{}` and target `{}`",
                    r.consumer, r.target
                )));
            }
        }
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[ReleasingRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rule_for(&self, consumer: &ConsumerId, target: &Target) -> Option<&ReleasingRule> {
        self.rules
            .iter()
            .find(|r| &r.consumer == consumer && &r.target == target)
    }

    /// Checks every released service is declared and sensitive in `model`.
    pub fn validate(&self, model: &SoaModel) -> Result<(), PolicyError> {
        for r in &self.rules {
            for s in &r.released {
                match model.kind_of(s)? {
                    ServiceKind::Sensitive => {}
                    ServiceKind::System => {
                        return Err(PolicyError::Validation(format!(
                            "rule for `{}` releases `{s}`, which is a system service",
                            r.consumer
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Returns the rule whose consumer, key and target all match.
    pub fn authenticate(
        &self,
        consumer: &ConsumerId,
        key: &ConsumerKey,
        target: &Target,
    ) -> Result<&ReleasingRule, Rejected> {
        match self.rule_for(consumer, target) {
            Some(rule) if rule.key.verify(key) => Ok(rule),
            _ => Err(Rejected),
        }
    }

    pub fn to_document(&self) -> String {
        self.rules.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// Parses an SRM document without checking it against a model.
pub fn parse_srm_unbound(document: &str) -> Result<Srm, PolicyError> {
    let mut rules = Vec::new();
    for (idx, raw) in document.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        let at_line = |e: PolicyError| match e {
            PolicyError::Validation(message) => PolicyError::Parse { line, message },
            PolicyError::Model(ModelError::Validation(message)) => {
                PolicyError::Parse { line, message }
            }
            other => other,
        };
        let (head, tail) = content.split_once("->").ok_or_else(|| PolicyError::Parse {
            line,
            message: "expected `rule <consumer> <key-hash> <target> -> <service>[,<service>...]`"
                .into(),
        })?;
        let head: Vec<&str> = head.split_whitespace().collect();
        let ["rule", consumer, key, target] = head.as_slice() else {
            return Err(PolicyError::Parse {
                line,
                message: "expected `rule <consumer> <key-hash> <target> -> ...`".into(),
            });
        };
        let released = tail
            .split(',')
            .map(|s| ServiceId::new(s.trim()).map_err(PolicyError::from))
            .collect::<Result<Vec<_>, _>>()
            .map_err(at_line)?;
        let rule = ReleasingRule::new(
            ConsumerId::new(*consumer).map_err(at_line)?,
            key.parse().map_err(at_line)?,
            Target::new(*target).map_err(at_line)?,
            released,
        )
        .map_err(at_line)?;
        rules.push(rule);
    }
    Srm::new(rules)
}

/// Parses an SRM document and validates it against `model`.
pub fn parse_srm(document: &str, model: &SoaModel) -> Result<Srm, PolicyError> {
    let srm = parse_srm_unbound(document)?;
    srm.validate(model)?;
    Ok(srm)
}
