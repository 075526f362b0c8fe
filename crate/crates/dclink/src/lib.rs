//! Control design and verification toolkit for parallel DC-DC converters
//! sharing a DC link.

pub mod converter;
pub mod design;
pub mod error;
pub mod multi;
pub mod poly;
pub mod sim;
pub mod ss;
pub mod tf;

pub use converter::{AveragedState, ConverterParams, Topology};
pub use design::{InnerLoopSpec, OuterPlant, WeightSpec};
pub use error::{Error, Result};
pub use multi::{MultiConverterSystem, NominalDesign, SharingSpec};
pub use poly::Polynomial;
pub use sim::{LoadProfile, SimConfig, SimMode, SimTrace, SteadyStateMetrics};
pub use tf::{FrequencyGrid, TransferFunction};
