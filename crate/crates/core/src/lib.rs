//! Behavior-aware service access control for SOA deployments.
//!
//! Providers author releasing rules ([`policy::Srm`]) over a service graph
//! ([`model::SoaModel`]). Each rule compiles into a per-consumer trusted
//! behavior model ([`policy::Tbm`]). The [`monitor::Monitor`] checks every
//! request against that model, accumulates behavior risks
//! ([`risk::RiskState`]) and terminates sessions or blacklists consumers when
//! the risks exceed their thresholds.
//!
//! Risk arithmetic is generic over the float type; the aliases below fix it.

pub mod model;
pub mod monitor;
pub mod policy;
pub mod risk;
pub mod scalar;

pub use model::{load_model, Route, ServiceId, ServiceKind, SoaModel, Transition, Uri};
pub use monitor::{Blacklist, Decision, Reason, Verdict};
pub use policy::{parse_srm, ConsumerId, ConsumerKey, KeyHash, Srm, Target, Tbm};
pub use risk::{evaluate, evidence, BehaviorElements, Millis};
pub use scalar::Scalar;

pub type RiskState = risk::RiskState<f64>;
pub type RiskState32 = risk::RiskState<f32>;
pub type Thresholds = risk::Thresholds<f64>;
pub type Thresholds32 = risk::Thresholds<f32>;
pub type Monitor = monitor::Monitor<f64>;
pub type Monitor32 = monitor::Monitor<f32>;
pub type Session = monitor::Session<f64>;
pub type MonitorConfig = monitor::MonitorConfig<f64>;
