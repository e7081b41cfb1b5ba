//! Service graph of a single-trust-domain SOA deployment.
//!
//! A [`SoaModel`] is a directed graph of services, each labeled with the URI
//! of its interface. One service is the entry point (the initial service) and
//! every route handed to the policy compiler starts there.
//!
//! The text format is line oriented, `#` starts a comment:
//!
//! ```text
//! service S0 system /SBA/0.jsp
//! service S1 sensitive /SBA/X0.jsp
//! transition t1 S0 S1
//! initial S0
//! ```

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid model: {0}")]
    Validation(String),
    #[error("unknown service `{0}`")]
    UnknownService(ServiceId),
    #[error("service `{0}` is not reachable from the initial service")]
    NotReachable(ServiceId),
}

/// Identifier of a service, ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ServiceId(String);

impl ServiceId {
    pub fn new(value: impl Into<String>) -> Result<Self, ModelError> {
        let value = value.into();
        if !is_token(&value) {
            return Err(ModelError::Validation(format!(
                "service id `{value}` must be a non-empty token"
            )));
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ServiceId {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ServiceId> for String {
    fn from(id: ServiceId) -> Self {
        id.0
    }
}

impl FromStr for ServiceId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl Borrow<str> for ServiceId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceKind {
    /// Reachable by any authenticated consumer.
    System,
    /// Holds protected data; only reachable when explicitly released.
    Sensitive,
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ServiceKind::System => "system",
            ServiceKind::Sensitive => "sensitive",
        })
    }
}

impl FromStr for ServiceKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "system" => Ok(ServiceKind::System),
            "sensitive" => Ok(ServiceKind::Sensitive),
            other => Err(ModelError::Validation(format!(
                "service kind must be `system` or `sensitive`, got `{other}`"
            ))),
        }
    }
}

/// Path of a service interface, e.g. `/SBA/0.jsp`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Uri(String);

impl Uri {
    pub fn new(value: impl Into<String>) -> Result<Self, ModelError> {
        let value = value.into();
        if !is_token(&value) {
            return Err(ModelError::Validation(format!(
                "uri `{value}` must be non-empty and contain no whitespace"
            )));
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Uri {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Uri> for String {
    fn from(uri: Uri) -> Self {
        uri.0
    }
}

impl FromStr for Uri {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl Borrow<str> for Uri {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Uri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Transition {
    pub from: ServiceId,
    pub to: ServiceId,
}

impl Transition {
    pub fn new(from: ServiceId, to: ServiceId) -> Self {
        Self { from, to }
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.from, self.to)
    }
}

/// Chain of transitions starting at the initial service.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Route {
    pub transitions: Vec<Transition>,
}

impl Route {
    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    /// The service the route ends at, `None` for the empty route.
    pub fn end(&self) -> Option<&ServiceId> {
        self.transitions.last().map(|t| &t.to)
    }

    /// Services visited in order, including the start.
    pub fn services(&self) -> Vec<&ServiceId> {
        let mut out: Vec<&ServiceId> = Vec::with_capacity(self.transitions.len() + 1);
        if let Some(first) = self.transitions.first() {
            out.push(&first.from);
        }
        out.extend(self.transitions.iter().map(|t| &t.to));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ServiceEntry {
    kind: ServiceKind,
    uri: Uri,
}

/// Immutable, validated service graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoaModel {
    services: BTreeMap<ServiceId, ServiceEntry>,
    transitions: BTreeSet<Transition>,
    transition_ids: BTreeMap<Transition, String>,
    successors: BTreeMap<ServiceId, BTreeSet<ServiceId>>,
    predecessors: BTreeMap<ServiceId, BTreeSet<ServiceId>>,
    by_uri: BTreeMap<Uri, ServiceId>,
    initial: ServiceId,
}

impl SoaModel {
    pub fn builder() -> SoaModelBuilder {
        SoaModelBuilder::default()
    }

    pub fn initial(&self) -> &ServiceId {
        &self.initial
    }

    pub fn initial_uri(&self) -> &Uri {
        &self.services[&self.initial].uri
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn services(&self) -> impl Iterator<Item = (&ServiceId, ServiceKind, &Uri)> {
        self.services.iter().map(|(id, e)| (id, e.kind, &e.uri))
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter()
    }

    pub fn transition_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn contains(&self, service: &ServiceId) -> bool {
        self.services.contains_key(service)
    }

    pub fn contains_transition(&self, t: &Transition) -> bool {
        self.transitions.contains(t)
    }

    /// Traceability label given to a transition in the model file.
    pub fn transition_id(&self, t: &Transition) -> Option<&str> {
        self.transition_ids.get(t).map(String::as_str)
    }

    pub fn kind_of(&self, service: &ServiceId) -> Result<ServiceKind, ModelError> {
        self.services
            .get(service)
            .map(|e| e.kind)
            .ok_or_else(|| ModelError::UnknownService(service.clone()))
    }

    pub fn uri_of(&self, service: &ServiceId) -> Result<&Uri, ModelError> {
        self.services
            .get(service)
            .map(|e| &e.uri)
            .ok_or_else(|| ModelError::UnknownService(service.clone()))
    }

    /// Inverse of [`SoaModel::uri_of`].
    pub fn service_at(&self, uri: &str) -> Option<&ServiceId> {
        self.by_uri.get(uri)
    }

    pub fn successors(&self, service: &ServiceId) -> impl Iterator<Item = &ServiceId> {
        self.successors.get(service).into_iter().flatten()
    }

    /// Shortest route from the initial service to `target`.
    ///
    /// Among several shortest routes the one whose service sequence is
    /// lexicographically least is returned. The route is empty when the
    /// target is the initial service.
    pub fn find_route(&self, target: &ServiceId) -> Result<Route, ModelError> {
        if !self.contains(target) {
            return Err(ModelError::UnknownService(target.clone()));
        }
        let to_target = self.reverse_distances(target);
        let Some(&total) = to_target.get(&self.initial) else {
            return Err(ModelError::NotReachable(target.clone()));
        };

        let mut transitions = Vec::with_capacity(total);
        let mut current = self.initial.clone();
        for remaining in (0..total).rev() {
            // successors are sorted, so the first hit is the least id
            let next = self
                .successors(&current)
                .find(|s| to_target.get(*s) == Some(&remaining))
                .cloned()
                .expect("distance labels guarantee a successor one step closer");
            transitions.push(Transition::new(current, next.clone()));
            current = next;
        }
        Ok(Route { transitions })
    }

    /// Every transition lying on at least one shortest route to `target`.
    pub fn shortest_route_transitions(
        &self,
        target: &ServiceId,
    ) -> Result<BTreeSet<Transition>, ModelError> {
        if !self.contains(target) {
            return Err(ModelError::UnknownService(target.clone()));
        }
        let to_target = self.reverse_distances(target);
        let Some(&total) = to_target.get(&self.initial) else {
            return Err(ModelError::NotReachable(target.clone()));
        };
        let from_initial = self.forward_distances();
        Ok(self
            .transitions
            .iter()
            .filter(|t| {
                match (from_initial.get(&t.from), to_target.get(&t.to)) {
                    (Some(a), Some(b)) => a + 1 + b == total,
                    _ => false,
                }
            })
            .cloned()
            .collect())
    }

    fn forward_distances(&self) -> BTreeMap<ServiceId, usize> {
        bfs(&self.initial, &self.successors)
    }

    fn reverse_distances(&self, target: &ServiceId) -> BTreeMap<ServiceId, usize> {
        bfs(target, &self.predecessors)
    }

    /// Serializes the model in the line format accepted by [`load_model`].
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        for (id, entry) in &self.services {
            out.push_str(&format!("service {id} {} {}\n", entry.kind, entry.uri));
        }
        for (n, t) in self.transitions.iter().enumerate() {
            let label = self
                .transition_ids
                .get(t)
                .cloned()
                .unwrap_or_else(|| format!("t{}", n + 1));
            out.push_str(&format!("transition {label} {} {}\n", t.from, t.to));
        }
        out.push_str(&format!("initial {}\n", self.initial));
        out
    }
}

fn bfs(
    start: &ServiceId,
    edges: &BTreeMap<ServiceId, BTreeSet<ServiceId>>,
) -> BTreeMap<ServiceId, usize> {
    let mut dist = BTreeMap::new();
    dist.insert(start.clone(), 0usize);
    let mut queue = VecDeque::from([start.clone()]);
    while let Some(node) = queue.pop_front() {
        let d = dist[&node];
        for next in edges.get(&node).into_iter().flatten() {
            if !dist.contains_key(next) {
                dist.insert(next.clone(), d + 1);
                queue.push_back(next.clone());
            }
        }
    }
    dist
}

#[derive(Debug, Default)]
pub struct SoaModelBuilder {
    services: Vec<(ServiceId, ServiceKind, Uri)>,
    transitions: Vec<(Option<String>, Transition)>,
    initial: Option<ServiceId>,
}

impl SoaModelBuilder {
    pub fn service(mut self, id: &str, kind: ServiceKind, uri: &str) -> Result<Self, ModelError> {
        self.services.push((ServiceId::new(id)?, kind, Uri::new(uri)?));
        Ok(self)
    }

    pub fn add_service(&mut self, id: ServiceId, kind: ServiceKind, uri: Uri) -> &mut Self {
        self.services.push((id, kind, uri));
        self
    }

    pub fn transition(mut self, label: &str, from: &str, to: &str) -> Result<Self, ModelError> {
        self.transitions.push((
            Some(label.to_owned()),
            Transition::new(ServiceId::new(from)?, ServiceId::new(to)?),
        ));
        Ok(self)
    }

    pub fn add_transition(&mut self, label: Option<String>, t: Transition) -> &mut Self {
        self.transitions.push((label, t));
        self
    }

    pub fn initial(mut self, id: &str) -> Result<Self, ModelError> {
        self.initial = Some(ServiceId::new(id)?);
        Ok(self)
    }

    pub fn set_initial(&mut self, id: ServiceId) -> &mut Self {
        self.initial = Some(id);
        self
    }

    pub fn build(self) -> Result<SoaModel, ModelError> {
        let mut services = BTreeMap::new();
        let mut by_uri = BTreeMap::new();
        for (id, kind, uri) in self.services {
            if let Some(other) = by_uri.insert(uri.clone(), id.clone()) {
                return Err(ModelError::Validation(format!(
                    "services `{other}` and `{id}` share uri `{uri}`"
                )));
            }
            if services.insert(id.clone(), ServiceEntry { kind, uri }).is_some() {
                return Err(ModelError::Validation(format!("service `{id}` declared twice")));
            }
        }

        let mut transitions = BTreeSet::new();
        let mut transition_ids = BTreeMap::new();
        let mut labels = BTreeSet::new();
        let mut successors: BTreeMap<ServiceId, BTreeSet<ServiceId>> = BTreeMap::new();
        let mut predecessors: BTreeMap<ServiceId, BTreeSet<ServiceId>> = BTreeMap::new();
        for (label, t) in self.transitions {
            for end in [&t.from, &t.to] {
                if !services.contains_key(end) {
                    return Err(ModelError::Validation(format!(
                        "transition {t} references undeclared service `{end}`"
                    )));
                }
            }
            if !transitions.insert(t.clone()) {
                return Err(ModelError::Validation(format!("duplicate transition {t}")));
            }
            if let Some(label) = label {
                if !labels.insert(label.clone()) {
                    return Err(ModelError::Validation(format!(
                        "transition id `{label}` used twice"
                    )));
                }
                transition_ids.insert(t.clone(), label);
            }
            successors.entry(t.from.clone()).or_default().insert(t.to.clone());
            predecessors.entry(t.to.clone()).or_default().insert(t.from.clone());
        }

        let initial = self
            .initial
            .ok_or_else(|| ModelError::Validation("missing initial service".into()))?;
        if !services.contains_key(&initial) {
            return Err(ModelError::Validation(format!(
                "initial service `{initial}` is not declared"
            )));
        }

        Ok(SoaModel {
            services,
            transitions,
            transition_ids,
            successors,
            predecessors,
            by_uri,
            initial,
        })
    }
}

/// Parses and validates a model document.
pub fn load_model(document: &str) -> Result<SoaModel, ModelError> {
    let mut builder = SoaModelBuilder::default();
    let mut initial_seen = false;
    for (idx, raw) in document.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw);
        let fields: Vec<&str> = content.split_whitespace().collect();
        let Some((&keyword, args)) = fields.split_first() else {
            continue;
        };
        let parse_err = |message: String| ModelError::Parse { line, message };
        let at_line = |e: ModelError| match e {
            ModelError::Validation(message) => ModelError::Parse { line, message },
            other => other,
        };
        match (keyword, args) {
            ("service", [id, kind, uri]) => {
                builder.add_service(
                    ServiceId::new(*id).map_err(at_line)?,
                    kind.parse().map_err(at_line)?,
                    Uri::new(*uri).map_err(at_line)?,
                );
            }
            ("transition", [label, from, to]) => {
                builder.add_transition(
                    Some((*label).to_owned()),
                    Transition::new(
                        ServiceId::new(*from).map_err(at_line)?,
                        ServiceId::new(*to).map_err(at_line)?,
                    ),
                );
            }
            ("initial", [id]) => {
                if initial_seen {
                    return Err(parse_err("initial service declared twice".into()));
                }
                initial_seen = true;
                builder.set_initial(ServiceId::new(*id).map_err(at_line)?);
            }
            ("service", _) => {
                return Err(parse_err("expected `service <id> <system|sensitive> <uri>`".into()))
            }
            ("transition", _) => {
                return Err(parse_err("expected `transition <id> <from> <to>`".into()))
            }
            ("initial", _) => return Err(parse_err("expected `initial <id>`".into())),
            (other, _) => return Err(parse_err(format!("unknown keyword `{other}`"))),
        }
    }
    builder.build()
}

pub(crate) fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

pub(crate) fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace) && !s.contains('#')
}
