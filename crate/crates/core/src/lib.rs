//! Daily Wikipedia activity metrics from MediaWiki history dumps, mobility
//! changepoints, and rolling-window triple-difference estimates of how
//! activity moved when lockdowns began.

pub mod did;
pub mod dump;
pub mod metrics;
pub mod mobility;
pub mod plot;
pub mod profile;
pub mod rest;
pub mod synth;

pub use did::{Effect, EffectRecord, EffectSeries, Transform, Variant, WindowRunSpec, WindowSpec, YearSpec};
pub use dump::{RevisionEvent, StreamStats, UserKind};
pub use metrics::{Band, DailyMetrics, MetricKind, MetricSeries};
pub use mobility::{ChangepointMethod, ChangepointPair, ChangepointParams, ChangepointRecord, MobilityCategory};
pub use profile::{CountryWeight, LanguageProfile, SizeClass};
pub use rest::ApiEditorPoint;
pub use synth::{ShockSpec, SynthConfig};
