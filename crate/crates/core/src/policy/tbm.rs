//! Trusted behavior models.
//!
//! Every transition `(Sp, Sq)` on a route from the initial service to a
//! released service yields three trusted behavior rules for the consumer:
//! invoking `Sq` from `Sp`, and refreshing each endpoint. The consumer's model
//! is the union of those rules over all released services.
//!
//! File format, rules in lexicographic `(src, dst)` order:
//!
//! ```text
//! tbm C0 cardiopathy
//! rb /SBA/0.jsp /SBA/0.jsp
//! rb /SBA/0.jsp /SBA/X0.jsp
//! ```

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ConsumerId, PolicyError, ReleasingRule, Target};
use crate::model::{strip_comment, ModelError, SoaModel, Transition, Uri};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrustedBehaviorRule {
    pub id: ConsumerId,
    pub src: Uri,
    pub dst: Uri,
}

impl TrustedBehaviorRule {
    pub fn new(id: ConsumerId, src: Uri, dst: Uri) -> Self {
        Self { id, src, dst }
    }
}

impl fmt::Display for TrustedBehaviorRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, {}, {}>", self.id, self.src, self.dst)
    }
}

/// Which routes contribute rules when several shortest routes exist.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouteSelection {
    /// The single deterministic route returned by [`SoaModel::find_route`].
    #[default]
    Shortest,
    /// Every transition on any shortest route.
    AllShortest,
}

/// Per-consumer set of trusted `(src, dst)` transitions, hash indexed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tbm {
    consumer: ConsumerId,
    target: Option<Target>,
    index: HashMap<Uri, HashSet<Uri>>,
    len: usize,
}

impl Tbm {
    pub fn new(consumer: ConsumerId, target: Option<Target>) -> Self {
        Self {
            consumer,
            target,
            index: HashMap::new(),
            len: 0,
        }
    }

    pub fn consumer(&self) -> &ConsumerId {
        &self.consumer
    }

    pub fn target(&self) -> Option<&Target> {
        self.target.as_ref()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn insert_pair(&mut self, src: Uri, dst: Uri) -> bool {
        let fresh = self.index.entry(src).or_default().insert(dst);
        if fresh {
            self.len += 1;
        }
        fresh
    }

    /// True iff some rule matches all three fields exactly.
    pub fn matches(&self, id: &str, src: &str, dst: &str) -> bool {
        self.consumer.as_str() == id
            && self.index.get(src).is_some_and(|dsts| dsts.contains(dst))
    }

    pub fn contains(&self, rule: &TrustedBehaviorRule) -> bool {
        self.matches(rule.id.as_str(), rule.src.as_str(), rule.dst.as_str())
    }

    /// Rules in canonical `(src, dst)` order.
    pub fn rules(&self) -> Vec<TrustedBehaviorRule> {
        let mut pairs: Vec<(&Uri, &Uri)> = self
            .index
            .iter()
            .flat_map(|(src, dsts)| dsts.iter().map(move |dst| (src, dst)))
            .collect();
        pairs.sort();
        pairs
            .into_iter()
            .map(|(s, d)| TrustedBehaviorRule::new(self.consumer.clone(), s.clone(), d.clone()))
            .collect()
    }

    pub fn rule_set(&self) -> BTreeSet<TrustedBehaviorRule> {
        self.rules().into_iter().collect()
    }

    /// Set union with `extra`. Nothing is inserted if any rule belongs to
    /// another consumer. Returns the number of new rules.
    pub fn append_rules<I>(&mut self, extra: I) -> Result<usize, PolicyError>
    where
        I: IntoIterator<Item = TrustedBehaviorRule>,
    {
        let extra: Vec<TrustedBehaviorRule> = extra.into_iter().collect();
        if let Some(foreign) = extra.iter().find(|r| r.id != self.consumer) {
            return Err(PolicyError::ForeignConsumerRule {
                expected: self.consumer.clone(),
                found: foreign.id.clone(),
            });
        }
        Ok(extra
            .into_iter()
            .filter(|r| self.insert_pair(r.src.clone(), r.dst.clone()))
            .count())
    }

    /// Checks every URI belongs to a service of `model`.
    pub fn validate_against(&self, model: &SoaModel) -> Result<(), PolicyError> {
        for rule in self.rules() {
            for uri in [&rule.src, &rule.dst] {
                if model.service_at(uri.as_str()).is_none() {
                    return Err(PolicyError::Validation(format!(
                        "rule {rule} references `{uri}`, which no service exposes"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_document(&self) -> String {
        let mut out = match &self.target {
            Some(t) => format!("tbm {} {t}\n", self.consumer),
            None => format!("tbm {}\n", self.consumer),
        };
        for r in self.rules() {
            out.push_str(&format!("rb {} {}\n", r.src, r.dst));
        }
        out
    }
}

/// The three rules contributed by one transition; fewer for a self-loop.
pub fn convert_transition(
    consumer: &ConsumerId,
    t: &Transition,
    model: &SoaModel,
) -> Result<BTreeSet<TrustedBehaviorRule>, PolicyError> {
    if !model.contains_transition(t) {
        return Err(PolicyError::UnknownTransition(t.clone()));
    }
    let p = model.uri_of(&t.from)?;
    let q = model.uri_of(&t.to)?;
    let rule = |src: &Uri, dst: &Uri| TrustedBehaviorRule::new(consumer.clone(), src.clone(), dst.clone());
    Ok([rule(p, q), rule(p, p), rule(q, q)].into_iter().collect())
}

/// Compiles one releasing rule into the consumer's trusted behavior model.
pub fn compile_tbm(
    rule: &ReleasingRule,
    model: &SoaModel,
    selection: RouteSelection,
) -> Result<Tbm, PolicyError> {
    let mut tbm = Tbm::new(rule.consumer.clone(), Some(rule.target.clone()));
    for service in &rule.released {
        let transitions: Vec<Transition> = match selection {
            RouteSelection::Shortest => model.find_route(service).map(|r| r.transitions),
            RouteSelection::AllShortest => model
                .shortest_route_transitions(service)
                .map(|s| s.into_iter().collect()),
        }
        .map_err(|e| match e {
            ModelError::NotReachable(s) => PolicyError::UnreachableService(s),
            other => PolicyError::Model(other),
        })?;

        if transitions.is_empty() {
            // released service is the initial one: only its refresh rule
            let uri = model.uri_of(service)?.clone();
            tbm.insert_pair(uri.clone(), uri);
        }
        for t in &transitions {
            for rb in convert_transition(&rule.consumer, t, model)? {
                tbm.insert_pair(rb.src, rb.dst);
            }
        }
    }
    Ok(tbm)
}

/// Parses a TBM document. URIs are not checked against any model.
pub fn parse_tbm(document: &str) -> Result<Tbm, PolicyError> {
    let mut tbm: Option<Tbm> = None;
    for (idx, raw) in document.lines().enumerate() {
        let line = idx + 1;
        let fields: Vec<&str> = strip_comment(raw).split_whitespace().collect();
        let err = |message: &str| PolicyError::Parse {
            line,
            message: message.to_owned(),
        };
        let at_line = |e: PolicyError| match e {
            PolicyError::Validation(message) => PolicyError::Parse { line, message },
            PolicyError::Model(ModelError::Validation(message)) => {
                PolicyError::Parse { line, message }
            }
            other => other,
        };
        match (fields.as_slice(), tbm.as_mut()) {
            ([], _) => {}
            (["tbm", consumer, rest @ ..], None) if rest.len() <= 1 => {
                let target = rest
                    .first()
                    .map(|t| Target::new(*t))
                    .transpose()
                    .map_err(at_line)?;
                tbm = Some(Tbm::new(ConsumerId::new(*consumer).map_err(at_line)?, target));
            }
            (["tbm", ..], Some(_)) => return Err(err("duplicate `tbm` header")),
            (["rb", src, dst], Some(t)) => {
                let src = Uri::new(*src).map_err(|e| at_line(e.into()))?;
                let dst = Uri::new(*dst).map_err(|e| at_line(e.into()))?;
                t.insert_pair(src, dst);
            }
            (["rb", ..], None) => return Err(err("`rb` line before the `tbm <consumer>` header")),
            _ => return Err(err("expected `tbm <consumer> [<target>]` or `rb <src> <dst>`")),
        }
    }
    tbm.ok_or_else(|| PolicyError::Parse {
        line: 0,
        message: "missing `tbm <consumer>` header".into(),
    })
}
