// SPDX-License-Identifier: Apache-2.0

//! Service platform for virtualized network services.
//!
//! The crate bundles the SDK-side tooling (descriptors, packages, profiling)
//! with a service platform made of loosely coupled MANO plugins that talk
//! over an in-process topic broker. Placement and scaling can be customised
//! per service with small strategy programs written in a budgeted expression
//! language. Platforms can delegate whole services to child platforms and
//! partition their capacity into slices.

pub mod broker;
pub mod catalogue;
pub mod clock;
pub mod descriptors;
pub mod executive;
pub mod gatekeeper;
pub mod infra;
pub mod lifecycle;
pub mod monitoring;
pub mod package;
pub mod platform;
pub mod plugin;
pub mod resources;
pub mod sdk;
pub mod slicing;
pub mod ssm;

pub use platform::{Platform, PlatformConfig};
pub use resources::Resources;
