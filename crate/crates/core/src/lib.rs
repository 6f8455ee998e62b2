//! Travel-speed estimation for road networks from sparse vehicle probe data.
//!
//! The crate models a city road net as a directed graph of one-way segments,
//! ingests crowdsensed probe records, map-matches them to segments, computes
//! per-interval travel speeds where coverage allows, and fills the remaining
//! vacancies from time-lagged cross-correlation with upstream roads. On top of
//! that sit a one-step speed predictor, classical baselines (KNN, ordinary
//! kriging, ARIMA, Kalman), a hide-and-recover evaluation harness, and a
//! synthetic scenario generator used for testing at desk scale.

pub mod baselines;
pub mod completion;
pub mod correlation;
pub mod eval;
pub mod ingest;
pub mod mapmatch;
pub mod pipeline;
pub mod prediction;
pub mod roadnet;
pub mod simgen;
pub mod speed;

pub use roadnet::{NetPosition, Point, RoadNet, RoadSegment, SegmentId, VertexId};
pub use speed::{Provenance, SpeedEntry, SpeedTable};
